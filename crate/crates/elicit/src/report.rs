//! Report tables as CSV and aligned text.
//!
//! Text tables follow the published layout: percentages with up to two
//! decimals and no trailing zeros (`60%`, `39.67%`), `mean ± std` cells with
//! two decimals, p-values with two significant figures. CSV cells carry the
//! same numbers with fixed two decimals so golden files stay byte-stable.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use elicit_core::agreement::{Preference, PreferenceTally};
use elicit_core::corpus::{corpus_counts, Corpus, LanguageCode, Method};
use elicit_core::metrics::{
    mtld_summary, perplexity_summary, similarity_summary, EmbeddingVector, MetricError, MtldConfig, Pairing,
    SentenceAggregation, SummaryStat, TokenDistribution,
};
use elicit_core::protocol::TaskKind;

use crate::bundle::Languages;
use crate::export::{tally_rows, JudgmentRow, TallyRow};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Align {
    Left,
    Right,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Table {
    pub headers: Vec<String>,
    pub align: Vec<Align>,
    pub rows: Vec<Vec<String>>,
}

impl Table {
    pub fn new(headers: &[&str]) -> Self {
        let mut align = vec![Align::Right; headers.len()];
        align[0] = Align::Left;
        Table { headers: headers.iter().map(|h| h.to_string()).collect(), align, rows: Vec::new() }
    }

    /// Columns separated by two spaces, a dashed rule under the header.
    pub fn to_text(&self) -> String {
        let width = |s: &str| s.chars().count();
        let widths: Vec<usize> = (0..self.headers.len())
            .map(|c| self.rows.iter().map(|r| width(&r[c])).chain([width(&self.headers[c])]).max().unwrap_or(0))
            .collect();
        let line = |cells: &[String]| {
            let padded: Vec<String> = cells
                .iter()
                .zip(&widths)
                .zip(&self.align)
                .map(|((cell, w), a)| {
                    let pad = " ".repeat(w - width(cell));
                    match a {
                        Align::Left => format!("{cell}{pad}"),
                        Align::Right => format!("{pad}{cell}"),
                    }
                })
                .collect();
            padded.join("  ").trim_end().to_string()
        };
        let rule: Vec<String> = widths.iter().map(|w| "-".repeat(*w)).collect();
        let mut out = vec![line(&self.headers), rule.join("  ")];
        out.extend(self.rows.iter().map(|r| line(r)));
        out.join("\n") + "\n"
    }

    pub fn to_csv(&self) -> String {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(&self.headers).expect("in-memory write");
        for r in &self.rows {
            w.write_record(r).expect("in-memory write");
        }
        String::from_utf8(w.into_inner().expect("in-memory flush")).expect("utf-8 cells")
    }
}

/// One report table in both renderings.
#[derive(Clone, Debug, PartialEq)]
pub struct Report {
    pub name: &'static str,
    pub text: Table,
    pub csv: Table,
}

fn trim_decimals(s: String) -> String {
    if s.contains('.') {
        s.trim_end_matches('0').trim_end_matches('.').to_string()
    } else {
        s
    }
}

/// `60%`, `39.67%`, `0.33%`.
pub fn pct_text(p: f64) -> String {
    format!("{}%", trim_decimals(format!("{p:.2}")))
}

pub fn fixed2(x: f64) -> String {
    format!("{x:.2}")
}

/// Two significant figures: `0.00025`, `0.14`, `0.017`, `1.0`.
pub fn p_value(p: f64) -> String {
    if p <= 0.0 || !p.is_finite() {
        return format!("{p}");
    }
    let sig = |x: f64| 1 - x.log10().floor() as i32;
    let scale = 10f64.powi(sig(p));
    let rounded = (p * scale).round() / scale;
    format!("{rounded:.*}", sig(rounded).max(0) as usize)
}

/// `0.64 ± 0.14`.
pub fn stat_text(s: &SummaryStat) -> String {
    format!("{} ± {}", big(s.mean), big(s.std))
}

/// Two decimals, or `6.49 × 10^2` from 100 up.
pub fn big(x: f64) -> String {
    if x.abs() < 100.0 {
        return fixed2(x);
    }
    let exp = x.abs().log10().floor() as i32;
    let mut mantissa = x / 10f64.powi(exp);
    let mut exp = exp;
    if (mantissa * 100.0).round().abs() >= 1000.0 {
        mantissa /= 10.0;
        exp += 1;
    }
    format!("{mantissa:.2} × 10^{exp}")
}

pub fn counts_report(corpus: &Corpus, languages: &Languages) -> Report {
    let counts = corpus_counts(corpus);
    let mut text = Table::new(&["Language", "Text Translation", "Storyboard"]);
    let mut csv = Table::new(&["language", "text", "storyboard"]);
    for code in languages.ordered(corpus) {
        let row = vec![
            languages.name(&code).to_string(),
            counts.get(&code, Method::Text).to_string(),
            counts.get(&code, Method::Storyboard).to_string(),
        ];
        text.rows.push(row.clone());
        csv.rows.push(row);
    }
    Report { name: "table1_counts", text, csv }
}

/// Preference percentages, one row per language with judgments of `kind`.
pub fn preference_report(rows: &[TallyRow], kind: TaskKind, order: &[LanguageCode], languages: &Languages) -> Report {
    let with_p = kind == TaskKind::Fluency;
    let (name, mut text, mut csv) = if with_p {
        (
            "table6_fluency",
            Table::new(&["Language", "Storyboard", "Text", "Both", "p-value"]),
            Table::new(&["language", "storyboard", "text", "both", "p_value"]),
        )
    } else {
        (
            "table3_accuracy",
            Table::new(&["Language", "Storyboard", "Text", "Both"]),
            Table::new(&["language", "storyboard", "text", "both"]),
        )
    };
    let by_lang: BTreeMap<&LanguageCode, &TallyRow> =
        rows.iter().filter(|r| r.task_kind == kind).map(|r| (&r.language, r)).collect();
    let mut codes: Vec<&LanguageCode> = order.iter().filter(|c| by_lang.contains_key(c)).collect();
    codes.extend(by_lang.keys().filter(|c| !order.contains(c)));
    for code in codes {
        let row = by_lang[code];
        let [s, t, b] = row.tally.percentages();
        let name = languages.name(code).to_string();
        let mut tr = vec![name.clone(), pct_text(s), pct_text(t), pct_text(b)];
        let mut cr = vec![name, fixed2(s), fixed2(t), fixed2(b)];
        if with_p {
            let p = row.p_value.map_or_else(|| "-".to_string(), p_value);
            tr.push(p.clone());
            cr.push(p);
        }
        text.rows.push(tr);
        csv.rows.push(cr);
    }
    Report { name, text, csv }
}

fn stat_cells(stat: Option<&SummaryStat>) -> (String, [String; 3]) {
    match stat {
        Some(s) => (stat_text(s), [fixed2(s.mean), fixed2(s.std), s.n.to_string()]),
        None => ("-".into(), ["".into(), "".into(), "0".into()]),
    }
}

/// A language none of whose units appear in `inputs` is left out of a table.
fn has_inputs<V>(corpus: &Corpus, code: &LanguageCode, inputs: &BTreeMap<String, V>) -> bool {
    corpus.units().iter().any(|u| &u.language == code && inputs.contains_key(&u.id))
}

fn method_units(corpus: &Corpus, code: &LanguageCode, method: Method) -> usize {
    corpus.units_for(code, method).count()
}

fn no_units<T>(r: Result<T, MetricError>) -> Result<Option<T>, MetricError> {
    match r {
        Ok(v) => Ok(Some(v)),
        Err(MetricError::NoUnits) => Ok(None),
        Err(e) => Err(e),
    }
}

/// Similarity of each method to the English source.
pub fn similarity_english_report(
    corpus: &Corpus,
    embeddings: &BTreeMap<String, EmbeddingVector>,
    languages: &Languages,
) -> Result<Report, MetricError> {
    let mut text = Table::new(&["Language", "Storyboard", "Text"]);
    let mut csv =
        Table::new(&["language", "storyboard_mean", "storyboard_std", "storyboard_n", "text_mean", "text_std", "text_n"]);
    for code in languages.ordered(corpus) {
        if !has_inputs(corpus, &code, embeddings) {
            continue;
        }
        let mut cells = Vec::new();
        for method in [Method::Storyboard, Method::Text] {
            cells.push(no_units(similarity_summary(corpus, embeddings, &code, Pairing::VsEnglish, Some(method)))?);
        }
        let name = languages.name(&code).to_string();
        let (s_txt, s_csv) = stat_cells(cells[0].as_ref());
        let (t_txt, t_csv) = stat_cells(cells[1].as_ref());
        text.rows.push(vec![name.clone(), s_txt, t_txt]);
        let mut row = vec![name];
        row.extend(s_csv);
        row.extend(t_csv);
        csv.rows.push(row);
    }
    Ok(Report { name: "table4_similarity_english", text, csv })
}

/// Similarity of storyboard and text translations of the same scene.
pub fn similarity_methods_report(
    corpus: &Corpus,
    embeddings: &BTreeMap<String, EmbeddingVector>,
    languages: &Languages,
) -> Result<Report, MetricError> {
    let mut text = Table::new(&["Language", "Cosine Similarity"]);
    let mut csv = Table::new(&["language", "mean", "std", "n"]);
    for code in languages.ordered(corpus) {
        if !has_inputs(corpus, &code, embeddings) {
            continue;
        }
        let stat = no_units(similarity_summary(corpus, embeddings, &code, Pairing::StoryboardVsText, None))?;
        let Some(stat) = stat else { continue };
        let name = languages.name(&code).to_string();
        let (txt, cells) = stat_cells(Some(&stat));
        text.rows.push(vec![name.clone(), txt]);
        let mut row = vec![name];
        row.extend(cells);
        csv.rows.push(row);
    }
    Ok(Report { name: "table5_similarity_methods", text, csv })
}

/// MTLD per method; the CSV also counts units left out as undefined.
pub fn mtld_report(corpus: &Corpus, cfg: &MtldConfig, languages: &Languages) -> Result<Report, MetricError> {
    let mut text = Table::new(&["Language", "Storyboard", "Text"]);
    let mut csv = Table::new(&[
        "language",
        "storyboard_mean",
        "storyboard_std",
        "storyboard_n",
        "storyboard_excluded",
        "text_mean",
        "text_std",
        "text_n",
        "text_excluded",
    ]);
    for code in languages.ordered(corpus) {
        let mut txt = vec![languages.name(&code).to_string()];
        let mut row = txt.clone();
        let mut any = false;
        for method in [Method::Storyboard, Method::Text] {
            let summary = match mtld_summary(corpus, &code, method, cfg) {
                Ok(s) => Some(s),
                Err(MetricError::NoUnits | MetricError::UndefinedResult(_)) => None,
                Err(e) => return Err(e),
            };
            any |= summary.is_some();
            let (t, cells) = stat_cells(summary.as_ref().map(|s| &s.stat));
            txt.push(t);
            row.extend(cells);
            let excluded = match &summary {
                Some(s) => s.excluded.len(),
                None => method_units(corpus, &code, method),
            };
            row.push(excluded.to_string());
        }
        if any {
            text.rows.push(txt);
            csv.rows.push(row);
        }
    }
    Ok(Report { name: "table7_mtld", text, csv })
}

/// Mean POS perplexity per method.
pub fn perplexity_report(
    corpus: &Corpus,
    pos: &BTreeMap<String, Vec<TokenDistribution>>,
    aggregation: SentenceAggregation,
    languages: &Languages,
) -> Result<Report, MetricError> {
    let mut text = Table::new(&["Language", "Storyboard", "Text"]);
    let mut csv = Table::new(&["language", "storyboard", "storyboard_n", "text", "text_n"]);
    for code in languages.ordered(corpus) {
        let mut txt = vec![languages.name(&code).to_string()];
        let mut row = txt.clone();
        if !has_inputs(corpus, &code, pos) {
            continue;
        }
        for method in [Method::Storyboard, Method::Text] {
            match no_units(perplexity_summary(corpus, pos, &code, method, aggregation))? {
                Some(s) => {
                    txt.push(big(s.stat.mean));
                    row.extend([fixed2(s.stat.mean), s.stat.n.to_string()]);
                }
                None => {
                    txt.push("-".into());
                    row.extend(["".into(), "0".into()]);
                }
            }
        }
        text.rows.push(txt);
        csv.rows.push(row);
    }
    Ok(Report { name: "table8_pos_perplexity", text, csv })
}

/// Everything `report all` draws on.
pub struct ReportInputs<'a> {
    pub corpus: &'a Corpus,
    pub languages: &'a Languages,
    pub judgments: &'a [JudgmentRow],
    pub embeddings: Option<&'a BTreeMap<String, EmbeddingVector>>,
    pub pos: Option<&'a BTreeMap<String, Vec<TokenDistribution>>>,
    pub mtld: MtldConfig,
    pub aggregation: SentenceAggregation,
}

/// Every table the inputs allow, in report order.
pub fn all_reports(inputs: &ReportInputs<'_>) -> Result<Vec<Report>, MetricError> {
    let mut out = vec![counts_report(inputs.corpus, inputs.languages)];
    let tallies = tally_rows(inputs.judgments);
    let order = inputs.languages.ordered(inputs.corpus);
    if tallies.iter().any(|r| r.task_kind == TaskKind::Accuracy) {
        out.push(preference_report(&tallies, TaskKind::Accuracy, &order, inputs.languages));
    }
    if let Some(e) = inputs.embeddings {
        out.push(similarity_english_report(inputs.corpus, e, inputs.languages)?);
        out.push(similarity_methods_report(inputs.corpus, e, inputs.languages)?);
    }
    if tallies.iter().any(|r| r.task_kind == TaskKind::Fluency) {
        out.push(preference_report(&tallies, TaskKind::Fluency, &order, inputs.languages));
    }
    out.push(mtld_report(inputs.corpus, &inputs.mtld, inputs.languages)?);
    if let Some(p) = inputs.pos {
        out.push(perplexity_report(inputs.corpus, p, inputs.aggregation, inputs.languages)?);
    }
    Ok(out)
}

/// Writes `{name}.csv` and `{name}.txt` per report; returns the paths.
pub fn write_reports(dir: &Path, reports: &[Report]) -> std::io::Result<Vec<PathBuf>> {
    fs::create_dir_all(dir)?;
    let mut paths = Vec::new();
    for r in reports {
        for (ext, body) in [("csv", r.csv.to_csv()), ("txt", r.text.to_text())] {
            let p = dir.join(format!("{}.{ext}", r.name));
            fs::write(&p, body)?;
            paths.push(p);
        }
    }
    Ok(paths)
}

/// Rounded percentages as served by the tally endpoint.
pub fn rounded_percentages(t: &PreferenceTally) -> [f64; 3] {
    Preference::ALL.map(|p| (t.percentage(p) * 100.0).round() / 100.0)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn percentage_text() {
        assert_eq!(pct_text(60.0), "60%");
        assert_eq!(pct_text(119.0 / 3.0), "39.67%");
        assert_eq!(pct_text(1.0 / 3.0), "0.33%");
        assert_eq!(pct_text(0.0), "0%");
        assert_eq!(pct_text(11.0), "11%");
        assert_eq!(pct_text(47.5), "47.5%");
    }

    #[test]
    fn p_values_two_significant() {
        assert_eq!(p_value(2.5003042528368e-4), "0.00025");
        assert_eq!(p_value(0.13530606475115453), "0.14");
        assert_eq!(p_value(1.5728398310908354e-4), "0.00016");
        assert_eq!(p_value(0.0165955888600022), "0.017");
        assert_eq!(p_value(0.75), "0.75");
        assert_eq!(p_value(1.0), "1.0");
        assert_eq!(p_value(0.0999), "0.10");
    }

    #[test]
    fn large_values_use_powers_of_ten() {
        assert_eq!(big(6.68), "6.68");
        assert_eq!(big(649.0), "6.49 × 10^2");
        assert_eq!(big(7.93e7), "7.93 × 10^7");
        assert_eq!(big(999.9), "1.00 × 10^3");
    }

    #[test]
    fn aligned_text() {
        let mut t = Table::new(&["Language", "N"]);
        t.rows.push(vec!["Yorùbá".into(), "5".into()]);
        t.rows.push(vec!["Hausa".into(), "1154".into()]);
        assert_eq!(t.to_text(), "Language     N\n--------  ----\nYorùbá       5\nHausa     1154\n");
        assert_eq!(t.to_csv(), "Language,N\nYorùbá,5\nHausa,1154\n");
    }
}
