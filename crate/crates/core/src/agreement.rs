//! Agreement and preference statistics over pairwise judgments.

use alloc::vec;
use alloc::vec::Vec;
use core::fmt;

use serde::{Deserialize, Serialize};

#[derive(Clone, Debug, PartialEq, thiserror::Error)]
pub enum AgreementError {
    #[error("ratings matrix needs at least one item")]
    NoItems,
    #[error("ratings matrix needs at least two raters per item, got {0}")]
    TooFewRaters(usize),
    #[error("ratings matrix needs at least one category")]
    NoCategories,
    #[error("item {item} has {found} ratings, expected {expected}")]
    RaggedItem { item: usize, found: usize, expected: usize },
    #[error("item {item} has {found} categories, expected {expected}")]
    RaggedCategories { item: usize, found: usize, expected: usize },
    #[error("kappa is undefined: every rating falls in a single category")]
    Undefined,
    #[error("no judgments")]
    NoJudgments,
    #[error("no non-tie judgments to test")]
    NoDecisiveJudgments,
}

/// Items × categories matrix of rater counts with a fixed number of raters
/// per item.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct RatingsMatrix {
    n_raters: usize,
    counts: Vec<Vec<usize>>,
}

impl RatingsMatrix {
    pub fn new(counts: Vec<Vec<usize>>) -> Result<Self, AgreementError> {
        let first = counts.first().ok_or(AgreementError::NoItems)?;
        let n_categories = first.len();
        if n_categories == 0 {
            return Err(AgreementError::NoCategories);
        }
        let n_raters: usize = first.iter().sum();
        if n_raters < 2 {
            return Err(AgreementError::TooFewRaters(n_raters));
        }
        for (item, row) in counts.iter().enumerate() {
            if row.len() != n_categories {
                return Err(AgreementError::RaggedCategories { item, found: row.len(), expected: n_categories });
            }
            let found: usize = row.iter().sum();
            if found != n_raters {
                return Err(AgreementError::RaggedItem { item, found, expected: n_raters });
            }
        }
        Ok(RatingsMatrix { n_raters, counts })
    }

    /// Builds the matrix from each item's list of category indices.
    pub fn from_labels<I, R>(items: I, n_categories: usize) -> Result<Self, AgreementError>
    where
        I: IntoIterator<Item = R>,
        R: IntoIterator<Item = usize>,
    {
        let counts = items
            .into_iter()
            .map(|labels| {
                let mut row = vec![0usize; n_categories];
                for label in labels {
                    row[label] += 1;
                }
                row
            })
            .collect();
        RatingsMatrix::new(counts)
    }

    pub fn n_items(&self) -> usize {
        self.counts.len()
    }

    pub fn n_raters(&self) -> usize {
        self.n_raters
    }

    pub fn n_categories(&self) -> usize {
        self.counts[0].len()
    }

    pub fn counts(&self) -> &[Vec<usize>] {
        &self.counts
    }
}

/// Fleiss' kappa: `(P̄ − P̄e) / (1 − P̄e)`.
pub fn fleiss_kappa(m: &RatingsMatrix) -> Result<f64, AgreementError> {
    let n = m.n_raters as u64;
    let items = m.n_items() as f64;
    let pair_count = (n * (n - 1)) as f64;

    let mut mean_agreement = 0.0;
    let mut column_totals = vec![0u64; m.n_categories()];
    for row in &m.counts {
        let squares: u64 = row.iter().map(|&c| (c as u64) * (c as u64)).sum();
        mean_agreement += (squares - n) as f64 / pair_count;
        for (total, &c) in column_totals.iter_mut().zip(row) {
            *total += c as u64;
        }
    }
    mean_agreement /= items;

    let all = (m.n_items() as u64 * n) as f64;
    let expected: f64 = column_totals.iter().map(|&t| t as f64 / all).map(|p| p * p).sum();
    if expected >= 1.0 {
        return Err(AgreementError::Undefined);
    }
    Ok((mean_agreement - expected) / (1.0 - expected))
}

/// A judgment after unblinding.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Preference {
    Storyboard,
    Text,
    Both,
}

impl Preference {
    pub const ALL: [Preference; 3] = [Preference::Storyboard, Preference::Text, Preference::Both];

    pub fn as_str(self) -> &'static str {
        match self {
            Preference::Storyboard => "storyboard",
            Preference::Text => "text",
            Preference::Both => "both",
        }
    }
}

impl fmt::Display for Preference {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct PreferenceTally {
    pub storyboard: usize,
    pub text: usize,
    pub both: usize,
}

impl PreferenceTally {
    pub fn new(storyboard: usize, text: usize, both: usize) -> Self {
        PreferenceTally { storyboard, text, both }
    }

    pub fn total(&self) -> usize {
        self.storyboard + self.text + self.both
    }

    pub fn count(&self, p: Preference) -> usize {
        match p {
            Preference::Storyboard => self.storyboard,
            Preference::Text => self.text,
            Preference::Both => self.both,
        }
    }

    /// `100 · count / total` for one category; 0 for an empty tally.
    pub fn percentage(&self, p: Preference) -> f64 {
        match self.total() {
            0 => 0.0,
            total => 100.0 * self.count(p) as f64 / total as f64,
        }
    }

    /// Percentages in (storyboard, text, both) order.
    pub fn percentages(&self) -> [f64; 3] {
        Preference::ALL.map(|p| self.percentage(p))
    }

    pub fn record(&mut self, p: Preference) {
        match p {
            Preference::Storyboard => self.storyboard += 1,
            Preference::Text => self.text += 1,
            Preference::Both => self.both += 1,
        }
    }
}

pub fn preference_tally<I>(judgments: I) -> Result<PreferenceTally, AgreementError>
where
    I: IntoIterator<Item = Preference>,
{
    let mut tally = PreferenceTally::default();
    judgments.into_iter().for_each(|p| tally.record(p));
    if tally.total() == 0 {
        return Err(AgreementError::NoJudgments);
    }
    Ok(tally)
}

/// One-sided exact binomial test of "annotators choose at random".
///
/// Ties are dropped; with `n = storyboard + text` decisive judgments and
/// `k = max(storyboard, text)`, returns `P(X ≥ k)` for `X ~ Bin(n, 1/2)`.
pub fn randomness_test(tally: &PreferenceTally) -> Result<f64, AgreementError> {
    let n = tally.storyboard + tally.text;
    if n == 0 {
        return Err(AgreementError::NoDecisiveJudgments);
    }
    let k = tally.storyboard.max(tally.text);
    Ok(binomial_upper_tail_half(n as u64, k as u64))
}

/// `P(X ≥ k)` for `X ~ Bin(n, 1/2)`, `k ≥ n/2`.
fn binomial_upper_tail_half(n: u64, k: u64) -> f64 {
    let nf = n as f64;
    let kf = k as f64;
    let ln_first = libm::lgamma(nf + 1.0) - libm::lgamma(kf + 1.0) - libm::lgamma(nf - kf + 1.0)
        - nf * core::f64::consts::LN_2;
    // pmf(i+1)/pmf(i) = (n-i)/(i+1); terms shrink from k upward
    let mut term = 1.0;
    let mut sum = 1.0;
    for i in k..n {
        term *= (n - i) as f64 / (i + 1) as f64;
        sum += term;
        if term < sum * 1e-18 {
            break;
        }
    }
    (libm::exp(ln_first) * sum).min(1.0)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn perfect_agreement_is_one() {
        let m = RatingsMatrix::new(vec![vec![3, 0, 0], vec![0, 3, 0], vec![0, 0, 3], vec![3, 0, 0]]).unwrap();
        assert_eq!(fleiss_kappa(&m).unwrap(), 1.0);
    }

    #[test]
    fn hand_worked_two_by_two() {
        let m = RatingsMatrix::new(vec![vec![2, 1], vec![1, 2]]).unwrap();
        assert!((fleiss_kappa(&m).unwrap() + 1.0 / 3.0).abs() < 1e-12);
    }

    #[test]
    fn single_category_is_undefined() {
        let m = RatingsMatrix::new(vec![vec![3, 0], vec![3, 0]]).unwrap();
        assert_eq!(fleiss_kappa(&m), Err(AgreementError::Undefined));
    }

    #[test]
    fn matrix_validation() {
        assert_eq!(RatingsMatrix::new(vec![]), Err(AgreementError::NoItems));
        assert_eq!(RatingsMatrix::new(vec![vec![1, 0]]), Err(AgreementError::TooFewRaters(1)));
        assert!(matches!(RatingsMatrix::new(vec![vec![2, 1], vec![1, 1]]), Err(AgreementError::RaggedItem { .. })));
        assert!(matches!(RatingsMatrix::new(vec![vec![2, 1], vec![3]]), Err(AgreementError::RaggedCategories { .. })));
        let m = RatingsMatrix::from_labels([vec![0, 0, 2], vec![1, 2, 2]], 3).unwrap();
        assert_eq!(m.counts(), &[vec![2, 0, 1], vec![0, 1, 2]]);
    }

    #[test]
    fn tally_percentages() {
        let t = preference_tally(
            core::iter::repeat_n(Preference::Storyboard, 180)
                .chain(core::iter::repeat_n(Preference::Text, 119))
                .chain([Preference::Both]),
        )
        .unwrap();
        assert_eq!(t, PreferenceTally::new(180, 119, 1));
        let [s, x, b] = t.percentages();
        assert_eq!(s, 60.0);
        assert!((x - 39.666_666_666_666_664).abs() < 1e-12);
        assert!((b - 0.333_333_333_333_333_3).abs() < 1e-12);

        let t = preference_tally([Preference::Both; 3]).unwrap();
        assert_eq!(t.percentages(), [0.0, 0.0, 100.0]);
        assert_eq!(preference_tally([]), Err(AgreementError::NoJudgments));
    }

    #[test]
    fn randomness_small_cases() {
        // n = 2, k = 1: P(X >= 1) = 3/4
        assert_eq!(randomness_test(&PreferenceTally::new(1, 1, 0)).unwrap(), 0.75);
        // n = 3, k = 3: 1/8
        assert!((randomness_test(&PreferenceTally::new(0, 3, 5)).unwrap() - 0.125).abs() < 1e-15);
        assert_eq!(randomness_test(&PreferenceTally::new(0, 0, 4)), Err(AgreementError::NoDecisiveJudgments));
    }
}
