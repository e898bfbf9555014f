//! Judgment CSV export and batch manifest files.

use std::collections::BTreeMap;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use chrono::{DateTime, SecondsFormat, Utc};
use elicit_core::agreement::{fleiss_kappa, randomness_test, AgreementError, Preference, PreferenceTally, RatingsMatrix};
use elicit_core::corpus::LanguageCode;
use elicit_core::protocol::{unblind, ProtocolError, RawChoice, TaskKind};
use elicit_core::state::{BatchManifest, KappaBasis, KappaReport, State};
use serde::{Deserialize, Serialize};

use crate::bundle::pseudonym;

/// One row of the judgment export.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct JudgmentRow {
    pub task_id: String,
    pub task_kind: TaskKind,
    pub language: LanguageCode,
    pub storyboard_id: String,
    pub scene_index: u32,
    pub annotator_id: String,
    pub raw_choice: RawChoice,
    pub resolved: Preference,
    #[serde(with = "iso")]
    pub timestamp: DateTime<Utc>,
}

mod iso {
    use chrono::{DateTime, SecondsFormat, Utc};
    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(t: &DateTime<Utc>, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(&t.to_rfc3339_opts(SecondsFormat::AutoSi, true))
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<DateTime<Utc>, D::Error> {
        let s = String::deserialize(d)?;
        DateTime::parse_from_rfc3339(&s).map(|t| t.with_timezone(&Utc)).map_err(serde::de::Error::custom)
    }
}

/// Every judgment of a batch, in task order. With a salt, annotator ids are
/// replaced by pseudonyms.
pub fn judgment_rows(state: &State, batch_id: &str, salt: Option<&str>) -> Result<Vec<JudgmentRow>, ProtocolError> {
    Ok(state
        .batch_judgments(batch_id)?
        .into_iter()
        .map(|(task, j)| JudgmentRow {
            task_id: task.id.clone(),
            task_kind: task.task_kind,
            language: task.language.clone(),
            storyboard_id: task.storyboard_id.clone(),
            scene_index: task.scene_index,
            annotator_id: match salt {
                Some(salt) => pseudonym(&j.annotator_id, salt),
                None => j.annotator_id.clone(),
            },
            raw_choice: j.raw_choice,
            resolved: unblind(task, j.raw_choice),
            timestamp: j.submitted_at,
        })
        .collect())
}

pub fn write_judgments<W: Write>(out: W, rows: &[JudgmentRow]) -> csv::Result<()> {
    let mut w = csv::Writer::from_writer(out);
    if rows.is_empty() {
        w.write_record([
            "task_id",
            "task_kind",
            "language",
            "storyboard_id",
            "scene_index",
            "annotator_id",
            "raw_choice",
            "resolved",
            "timestamp",
        ])?;
    }
    for r in rows {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_judgments(path: &Path) -> Result<Vec<JudgmentRow>, csv::Error> {
    csv::Reader::from_path(path)?.deserialize().collect()
}

/// Judgments grouped by (task kind, language).
pub fn group_rows(rows: &[JudgmentRow]) -> BTreeMap<(TaskKind, LanguageCode), Vec<&JudgmentRow>> {
    let mut out: BTreeMap<_, Vec<_>> = BTreeMap::new();
    for r in rows {
        out.entry((r.task_kind, r.language.clone())).or_default().push(r);
    }
    out
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct TallyRow {
    pub task_kind: TaskKind,
    pub language: LanguageCode,
    pub tally: PreferenceTally,
    pub p_value: Option<f64>,
}

pub fn tally_rows(rows: &[JudgmentRow]) -> Vec<TallyRow> {
    group_rows(rows)
        .into_iter()
        .map(|((task_kind, language), group)| {
            let mut tally = PreferenceTally::default();
            group.iter().for_each(|r| tally.record(r.resolved));
            let p_value = randomness_test(&tally).ok();
            TallyRow { task_kind, language, tally, p_value }
        })
        .collect()
}

fn resolved_index(p: Preference) -> usize {
    match p {
        Preference::Storyboard => 0,
        Preference::Text => 1,
        Preference::Both => 2,
    }
}

/// Fleiss' kappa over exported judgments. Tasks with fewer ratings than the
/// most-rated task are left out and counted.
pub fn kappa_from_rows(rows: &[&JudgmentRow], basis: KappaBasis) -> Result<KappaReport, AgreementError> {
    let mut by_task: BTreeMap<&str, Vec<usize>> = BTreeMap::new();
    for r in rows {
        let label = match basis {
            KappaBasis::Raw => r.raw_choice.index(),
            KappaBasis::Resolved => resolved_index(r.resolved),
        };
        by_task.entry(&r.task_id).or_default().push(label);
    }
    let raters = by_task.values().map(Vec::len).max().unwrap_or(0);
    let (complete, partial): (Vec<_>, Vec<_>) = by_task.into_values().partition(|l| l.len() == raters);
    let m = RatingsMatrix::from_labels(complete, 3)?;
    Ok(KappaReport {
        kappa: fleiss_kappa(&m)?,
        basis,
        items: m.n_items(),
        raters: m.n_raters(),
        incomplete_tasks: partial.len(),
    })
}

pub fn manifest_path(data_dir: &Path, batch_id: &str) -> PathBuf {
    data_dir.join("batches").join(format!("{batch_id}.json"))
}

pub fn write_manifest(data_dir: &Path, manifest: &BatchManifest) -> std::io::Result<PathBuf> {
    let path = manifest_path(data_dir, &manifest.batch_id);
    fs::create_dir_all(path.parent().expect("manifest path has a parent"))?;
    let mut body = serde_json::to_string_pretty(manifest).expect("manifest serializes");
    body.push('\n');
    fs::write(&path, body)?;
    Ok(path)
}

/// ISO-8601 UTC with a `Z` suffix, as used in every output.
pub fn iso8601(t: DateTime<Utc>) -> String {
    t.to_rfc3339_opts(SecondsFormat::AutoSi, true)
}

#[cfg(test)]
mod tests {
    use super::*;
    use chrono::TimeZone;

    fn row(task: &str, who: &str, raw: RawChoice, resolved: Preference) -> JudgmentRow {
        JudgmentRow {
            task_id: task.into(),
            task_kind: TaskKind::Fluency,
            language: "hau".into(),
            storyboard_id: "sb".into(),
            scene_index: 3,
            annotator_id: who.into(),
            raw_choice: raw,
            resolved,
            timestamp: Utc.with_ymd_and_hms(2024, 5, 1, 10, 0, 0).unwrap(),
        }
    }

    #[test]
    fn csv_round_trip_and_columns() {
        let rows = vec![
            row("b-001", "e1", RawChoice::One, Preference::Storyboard),
            row("b-001", "e2", RawChoice::Both, Preference::Both),
        ];
        let mut buf = Vec::new();
        write_judgments(&mut buf, &rows).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert_eq!(
            text.lines().next().unwrap(),
            "task_id,task_kind,language,storyboard_id,scene_index,annotator_id,raw_choice,resolved,timestamp"
        );
        assert_eq!(text.lines().nth(1).unwrap(), "b-001,fluency,hau,sb,3,e1,1,storyboard,2024-05-01T10:00:00Z");
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("j.csv");
        fs::write(&p, &text).unwrap();
        assert_eq!(read_judgments(&p).unwrap(), rows);
    }

    #[test]
    fn kappa_drops_incomplete_tasks() {
        let rows = [
            row("t1", "a", RawChoice::One, Preference::Text),
            row("t1", "b", RawChoice::Two, Preference::Storyboard),
            row("t1", "c", RawChoice::Two, Preference::Storyboard),
            row("t2", "a", RawChoice::One, Preference::Storyboard),
            row("t2", "b", RawChoice::One, Preference::Storyboard),
            row("t2", "c", RawChoice::Two, Preference::Text),
            row("t3", "a", RawChoice::One, Preference::Text),
        ];
        let refs: Vec<&JudgmentRow> = rows.iter().collect();
        let k = kappa_from_rows(&refs, KappaBasis::Raw).unwrap();
        assert_eq!((k.items, k.raters, k.incomplete_tasks), (2, 3, 1));
        assert!((k.kappa + 1.0 / 3.0).abs() < 1e-12);
    }
}
