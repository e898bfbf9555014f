//! Command line.

use std::fs;
use std::io::{self, Write};
use std::net::SocketAddr;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::Arc;

use chrono::{DateTime, Utc};
use clap::{Args, Parser, Subcommand, ValueEnum};
use elicit_core::corpus::{validate_corpus, Corpus, LanguageCode, Method};
use elicit_core::metrics::{MtldConfig, Pairing, SentenceAggregation};
use elicit_core::protocol::{Role, TaskKind, TaskRequest};
use elicit_core::state::{BatchSpec, KappaBasis, State};
use rand::Rng;
use serde::Serialize;
use serde_json::json;
use sha2::{Digest, Sha256};

use crate::bundle::{anonymize, copy_dir, read_bundle, write_bundle, BundleError, Languages};
use crate::export::{group_rows, judgment_rows, kappa_from_rows, read_judgments, tally_rows, write_judgments, JudgmentRow};
use crate::inputs::{read_embeddings, read_pos};
use crate::ops::{self, MetricKind, MetricQuery, MetricRow, OpError};
use crate::report::{self, all_reports, Align, fixed2, p_value, stat_text, write_reports, ReportInputs, Table};
use crate::service::{self, AppState, SeedPolicy, ServiceConfig};
use crate::store::{read_state, Clock, ManualClock, Store, SystemClock};
use crate::tokens::{self, TokenBook};

#[derive(Parser)]
#[command(name = "elicit", version, about = "Storyboard-based translation elicitation and evaluation")]
pub struct Cli {
    /// Directory holding the event log, corpora and tokens.
    #[arg(long, global = true, env = "ELICIT_DATA_DIR", default_value = "elicit-data")]
    data_dir: PathBuf,
    /// Fixed current time (RFC 3339) for reproducible timestamps.
    #[arg(long, global = true, env = "ELICIT_NOW")]
    now: Option<DateTime<Utc>>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Import, check and count corpus bundles.
    #[command(subcommand)]
    Corpus(CorpusCmd),
    /// Summary metrics over translations.
    Metrics(MetricsCmd),
    /// Evaluation batches and their statistics.
    #[command(subcommand)]
    Eval(EvalCmd),
    #[command(subcommand)]
    Report(ReportCmd),
    /// Run the HTTP service.
    Serve(ServeArgs),
    #[command(subcommand)]
    Token(TokenCmd),
}

#[derive(Clone, Copy, Default, ValueEnum)]
enum Format {
    #[default]
    Text,
    Csv,
    Json,
}

#[derive(Args)]
struct CorpusSource {
    /// A bundle directory.
    #[arg(long, conflicts_with = "corpus")]
    bundle: Option<PathBuf>,
    /// An imported corpus id.
    #[arg(long)]
    corpus: Option<String>,
}

#[derive(Subcommand)]
enum CorpusCmd {
    /// Validate a bundle and record it in the data directory.
    Import {
        bundle: PathBuf,
        #[arg(long)]
        id: Option<String>,
    },
    /// Check a bundle without importing it.
    Validate {
        bundle: PathBuf,
        #[arg(long, value_enum, default_value_t)]
        format: Format,
    },
    /// Units per language and method.
    Counts {
        bundle: Option<PathBuf>,
        #[arg(long, conflicts_with = "bundle")]
        corpus: Option<String>,
        #[arg(long, value_enum, default_value_t)]
        format: Format,
    },
    /// Write an imported corpus, with collected translations, as a bundle.
    Export {
        #[arg(long)]
        corpus: Option<String>,
        #[arg(long)]
        out: PathBuf,
        /// Replace translator ids with salted pseudonyms.
        #[arg(long, requires = "salt")]
        anonymize: bool,
        #[arg(long)]
        salt: Option<String>,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum MetricName {
    Mtld,
    Similarity,
    Perplexity,
}

#[derive(Clone, Copy, ValueEnum)]
enum PairingArg {
    VsEnglish,
    StoryboardVsText,
}

#[derive(Clone, Copy, ValueEnum)]
enum AggregationArg {
    MeanEntropy,
    MeanPerplexity,
}

impl From<AggregationArg> for SentenceAggregation {
    fn from(a: AggregationArg) -> Self {
        match a {
            AggregationArg::MeanEntropy => SentenceAggregation::MeanEntropy,
            AggregationArg::MeanPerplexity => SentenceAggregation::MeanPerplexity,
        }
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum MethodArg {
    Text,
    Storyboard,
}

impl From<MethodArg> for Method {
    fn from(m: MethodArg) -> Self {
        match m {
            MethodArg::Text => Method::Text,
            MethodArg::Storyboard => Method::Storyboard,
        }
    }
}

#[derive(Args)]
struct MtldArgs {
    /// MTLD type-token ratio threshold.
    #[arg(long, default_value_t = 0.72)]
    ttr_threshold: f64,
    /// Drop the partial factor at the end of the text.
    #[arg(long)]
    no_partial_factors: bool,
}

impl MtldArgs {
    fn config(&self) -> Result<MtldConfig, OpError> {
        Ok(MtldConfig::new(self.ttr_threshold, !self.no_partial_factors)?)
    }
}

#[derive(Args)]
struct MetricsCmd {
    #[arg(value_enum)]
    metric: MetricName,
    #[command(flatten)]
    source: CorpusSource,
    #[arg(long)]
    language: Option<String>,
    #[arg(long, value_enum)]
    method: Option<MethodArg>,
    #[arg(long)]
    embeddings: Option<PathBuf>,
    #[arg(long)]
    pos_file: Option<PathBuf>,
    #[arg(long, value_enum, default_value = "vs-english")]
    pairing: PairingArg,
    #[arg(long, value_enum, default_value = "mean-entropy")]
    aggregation: AggregationArg,
    #[command(flatten)]
    mtld: MtldArgs,
    #[arg(long, value_enum, default_value_t)]
    format: Format,
}

#[derive(Clone, Copy, ValueEnum)]
enum KindArg {
    Accuracy,
    Fluency,
}

impl From<KindArg> for TaskKind {
    fn from(k: KindArg) -> Self {
        match k {
            KindArg::Accuracy => TaskKind::Accuracy,
            KindArg::Fluency => TaskKind::Fluency,
        }
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum BasisArg {
    Raw,
    Resolved,
}

#[derive(Args)]
struct JudgmentSource {
    /// A batch in the data directory.
    #[arg(long, conflicts_with = "judgments", required_unless_present = "judgments")]
    batch: Option<String>,
    /// An exported judgments CSV.
    #[arg(long)]
    judgments: Option<PathBuf>,
}

#[derive(Subcommand)]
enum EvalCmd {
    /// Sample blinded pairwise tasks from a corpus.
    Batch {
        #[arg(long, value_enum)]
        kind: KindArg,
        #[arg(long)]
        language: String,
        #[arg(long, default_value_t = 100)]
        n: usize,
        /// Drawn at random (and printed) when absent.
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        corpus: Option<String>,
        /// Sample only scenes paired in these languages too.
        #[arg(long, value_delimiter = ',')]
        shared_languages: Vec<String>,
    },
    /// Assign a batch's tasks to evaluators.
    Assign {
        #[arg(long)]
        batch: String,
        #[arg(long, default_value_t = 3)]
        raters: usize,
        /// Defaults to the holders of unexpired evaluator tokens.
        #[arg(long, value_delimiter = ',')]
        annotators: Vec<String>,
    },
    /// Preference percentages.
    Tally {
        #[command(flatten)]
        source: JudgmentSource,
        #[arg(long, value_enum, default_value_t)]
        format: Format,
    },
    /// Fleiss' kappa.
    Kappa {
        #[command(flatten)]
        source: JudgmentSource,
        #[arg(long, value_enum, default_value = "raw")]
        basis: BasisArg,
        #[arg(long, value_enum, default_value_t)]
        format: Format,
    },
    /// Exact binomial test against random choice.
    Pvalue {
        #[command(flatten)]
        source: JudgmentSource,
        #[arg(long, value_enum, default_value_t)]
        format: Format,
    },
    /// Write a batch's judgments as CSV.
    Export {
        #[arg(long)]
        batch: String,
        /// Defaults to standard output.
        #[arg(long)]
        out: Option<PathBuf>,
        /// Replace annotator ids with salted pseudonyms.
        #[arg(long)]
        salt: Option<String>,
    },
}

#[derive(Subcommand)]
enum ReportCmd {
    /// Every table as CSV and aligned text.
    All {
        #[arg(long)]
        out: PathBuf,
        #[command(flatten)]
        source: CorpusSource,
        /// Judgment CSVs; defaults to every batch in the data directory.
        #[arg(long)]
        judgments: Vec<PathBuf>,
        #[arg(long)]
        embeddings: Option<PathBuf>,
        #[arg(long)]
        pos_file: Option<PathBuf>,
        #[arg(long, value_enum, default_value = "mean-entropy")]
        aggregation: AggregationArg,
        #[command(flatten)]
        mtld: MtldArgs,
    },
}

#[derive(Args)]
struct ServeArgs {
    #[arg(long, env = "ELICIT_LISTEN", default_value = "127.0.0.1:8080")]
    listen: SocketAddr,
    #[arg(long, env = "ELICIT_GAP_SECONDS", default_value_t = elicit_core::protocol::DEFAULT_GAP_SECONDS)]
    gap_seconds: u64,
    /// `random` or `fixed:<seed>`.
    #[arg(long, env = "ELICIT_SEED_POLICY", default_value = "random")]
    seed_policy: SeedPolicy,
    /// Let session requests set their own gap.
    #[arg(long)]
    allow_gap_override: bool,
    #[arg(long, default_value_t = 500)]
    snapshot_every: u64,
}

#[derive(Clone, Copy, ValueEnum)]
enum RoleArg {
    Translator,
    Evaluator,
    Admin,
}

impl From<RoleArg> for Role {
    fn from(r: RoleArg) -> Self {
        match r {
            RoleArg::Translator => Role::Translator,
            RoleArg::Evaluator => Role::Evaluator,
            RoleArg::Admin => Role::Admin,
        }
    }
}

#[derive(Subcommand)]
enum TokenCmd {
    /// Create a token; it is printed once and stored only as a digest.
    Issue {
        #[arg(long)]
        annotator: String,
        #[arg(long, value_enum)]
        role: RoleArg,
        #[arg(long, default_value_t = 90)]
        ttl_days: i64,
    },
}

pub fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            let msg = e.to_string().replace('\n', " ");
            eprintln!("error: {}: {msg}", e.code());
            if matches!(e, OpError::Usage(_)) {
                ExitCode::from(2)
            } else {
                ExitCode::FAILURE
            }
        }
    }
}

struct Ctx {
    data_dir: PathBuf,
    now: Option<DateTime<Utc>>,
}

impl Ctx {
    fn now(&self) -> DateTime<Utc> {
        self.now.unwrap_or_else(Utc::now)
    }

    fn open(&self) -> Result<Store, OpError> {
        Ok(Store::open(&self.data_dir, 0)?)
    }

    fn state(&self) -> Result<State, OpError> {
        Ok(read_state(&self.data_dir)?)
    }

    /// A bundle's corpus and languages, or an imported corpus.
    fn corpus(&self, source: &CorpusSource) -> Result<(Corpus, Languages), OpError> {
        if let Some(dir) = &source.bundle {
            let b = read_bundle(dir)?;
            return Ok((b.corpus, b.languages));
        }
        let state = self.state()?;
        let id = ops::default_corpus(&state, source.corpus.as_deref())?;
        let corpus = state.corpus(&id)?.clone();
        Ok((corpus, ops::corpus_languages(&self.data_dir, &id)))
    }
}

fn out(s: &str) -> Result<(), OpError> {
    io::stdout().write_all(s.as_bytes()).map_err(|source| OpError::Io { path: "<stdout>".into(), source })
}

fn json_out<T: Serialize>(v: &T) -> Result<(), OpError> {
    out(&(serde_json::to_string_pretty(v).expect("serializable") + "\n"))
}

fn table_out(t: &Table, format: Format) -> Result<(), OpError> {
    match format {
        Format::Csv => out(&t.to_csv()),
        _ => out(&t.to_text()),
    }
}

fn run(cli: Cli) -> Result<(), OpError> {
    let ctx = Ctx { data_dir: cli.data_dir, now: cli.now };
    match cli.command {
        Command::Corpus(c) => corpus_cmd(&ctx, c),
        Command::Metrics(m) => metrics_cmd(&ctx, m),
        Command::Eval(e) => eval_cmd(&ctx, e),
        Command::Report(r) => report_cmd(&ctx, r),
        Command::Serve(s) => serve_cmd(&ctx, s),
        Command::Token(TokenCmd::Issue { annotator, role, ttl_days }) => {
            let (token, record) = tokens::issue(&ctx.data_dir, &annotator, role.into(), ttl_days, ctx.now())
                .map_err(|source| OpError::Io { path: tokens::tokens_path(&ctx.data_dir), source })?;
            eprintln!("token for {} ({:?}) expires {}", record.annotator_id, record.role, record.expires_at);
            out(&format!("{token}\n"))
        }
    }
}

fn corpus_cmd(ctx: &Ctx, cmd: CorpusCmd) -> Result<(), OpError> {
    match cmd {
        CorpusCmd::Import { bundle, id } => {
            let mut store = ctx.open()?;
            let imported = ops::import_bundle(&mut store, &bundle, id)?;
            for w in &imported.report.warnings {
                eprintln!("warning: {}", w.message);
            }
            let corpus = store.state().corpus(&imported.corpus_id)?;
            let languages = ops::corpus_languages(&ctx.data_dir, &imported.corpus_id);
            out(&format!("imported {}\n", imported.corpus_id))?;
            out(&report::counts_report(corpus, &languages).text.to_text())
        }
        CorpusCmd::Validate { bundle, format } => {
            let b = match read_bundle(&bundle) {
                Err(BundleError::Records(errors)) => {
                    for e in &errors {
                        out(&format!("{e}\n"))?;
                    }
                    return Err(BundleError::Records(errors).into());
                }
                other => other?,
            };
            let report = validate_corpus(&b.corpus, |r| b.image_exists(r));
            match format {
                Format::Json => json_out(&report)?,
                _ => {
                    for f in &report.errors {
                        out(&format!("error: {}\n", f.message))?;
                    }
                    for f in &report.warnings {
                        out(&format!("warning: {}\n", f.message))?;
                    }
                    if report.is_ok() {
                        out(&format!("ok: {} storyboards, {} units\n", b.corpus.storyboards().len(), b.corpus.units().len()))?;
                    }
                }
            }
            if report.is_ok() {
                Ok(())
            } else {
                Err(OpError::Invalid(report))
            }
        }
        CorpusCmd::Counts { bundle, corpus, format } => {
            let (corpus, languages) = ctx.corpus(&CorpusSource { bundle, corpus })?;
            let r = report::counts_report(&corpus, &languages);
            match format {
                Format::Text => out(&r.text.to_text()),
                Format::Csv => out(&r.csv.to_csv()),
                Format::Json => {
                    let counts = elicit_core::corpus::corpus_counts(&corpus);
                    let rows: Vec<_> = languages
                        .ordered(&corpus)
                        .iter()
                        .map(|c| {
                            json!({"language": c, "name": languages.name(c),
                                "text": counts.get(c, Method::Text), "storyboard": counts.get(c, Method::Storyboard)})
                        })
                        .collect();
                    json_out(&rows)
                }
            }
        }
        CorpusCmd::Export { corpus, out: dest, anonymize: anon, salt } => {
            let state = ctx.state()?;
            let id = ops::default_corpus(&state, corpus.as_deref())?;
            let mut c = state.corpus(&id)?.clone();
            if anon {
                c = anonymize(&c, salt.as_deref().expect("clap requires a salt"));
            }
            let stored = ops::corpora_dir(&ctx.data_dir).join(&id);
            if stored.is_dir() {
                copy_dir(&stored, &dest).map_err(|source| OpError::Io { path: dest.clone(), source })?;
            }
            write_bundle(&dest, &c, &ops::corpus_languages(&ctx.data_dir, &id))?;
            out(&format!("exported {id} to {}\n", dest.display()))
        }
    }
}

fn metric_table(rows: &[MetricRow], kind: MetricKind, languages: &Languages) -> (Table, Table) {
    let mtld = kind == MetricKind::Mtld;
    let mut th = vec!["Language", "Method", "Mean ± Std", "n"];
    let mut ch = vec!["language", "method", "mean", "std", "n"];
    if mtld {
        th.push("Excluded");
        ch.push("excluded");
    }
    let (mut text, mut csv) = (Table::new(&th), Table::new(&ch));
    text.align[1] = Align::Left;
    for r in rows {
        let method = r.method.map_or("storyboard vs text", |m| m.as_str()).to_string();
        let mut t = vec![languages.name(&r.language).to_string(), method.clone(), stat_text(&r.stat), r.stat.n.to_string()];
        let mut c = vec![r.language.to_string(), method, fixed2(r.stat.mean), fixed2(r.stat.std), r.stat.n.to_string()];
        if let Some(x) = r.excluded.filter(|_| mtld) {
            t.push(x.to_string());
            c.push(x.to_string());
        }
        text.rows.push(t);
        csv.rows.push(c);
    }
    (text, csv)
}

fn metrics_cmd(ctx: &Ctx, m: MetricsCmd) -> Result<(), OpError> {
    let (corpus, languages) = ctx.corpus(&m.source)?;
    let kind = match m.metric {
        MetricName::Mtld => MetricKind::Mtld,
        MetricName::Similarity => MetricKind::Similarity,
        MetricName::Perplexity => MetricKind::Perplexity,
    };
    let embeddings = match (&m.embeddings, kind) {
        (Some(p), MetricKind::Similarity) => Some(read_embeddings(p)?),
        (None, MetricKind::Similarity) => return Err(OpError::Usage("similarity needs --embeddings".into())),
        _ => None,
    };
    let pos = match (&m.pos_file, kind) {
        (Some(p), MetricKind::Perplexity) => Some(read_pos(p)?),
        (None, MetricKind::Perplexity) => return Err(OpError::Usage("perplexity needs --pos-file".into())),
        _ => None,
    };
    let q = MetricQuery {
        kind,
        language: m.language.map(LanguageCode::new),
        method: m.method.map(Into::into),
        pairing: match m.pairing {
            PairingArg::VsEnglish => Pairing::VsEnglish,
            PairingArg::StoryboardVsText => Pairing::StoryboardVsText,
        },
        mtld: m.mtld.config()?,
        aggregation: m.aggregation.into(),
    };
    let rows = ops::metric_rows(&corpus, &languages.ordered(&corpus), &q, embeddings.as_ref(), pos.as_ref())?;
    match m.format {
        Format::Json => json_out(&rows),
        f => {
            let (text, csv) = metric_table(&rows, kind, &languages);
            table_out(if matches!(f, Format::Csv) { &csv } else { &text }, f)
        }
    }
}

/// Judgment rows with the languages to name and order them by.
fn judgments(ctx: &Ctx, source: &JudgmentSource) -> Result<(Vec<JudgmentRow>, Languages), OpError> {
    match (&source.batch, &source.judgments) {
        (Some(batch), _) => {
            let state = ctx.state()?;
            let rows = judgment_rows(&state, batch, None)?;
            let corpus_id = &state.batch(batch)?.manifest.corpus_id;
            Ok((rows, ops::corpus_languages(&ctx.data_dir, corpus_id)))
        }
        (None, Some(path)) => {
            let rows = read_judgments(path).map_err(|e| OpError::Usage(format!("{}: {e}", path.display())))?;
            Ok((rows, Languages::default()))
        }
        (None, None) => Err(OpError::Usage("give --batch or --judgments".into())),
    }
}

fn ordered_codes(rows: &[JudgmentRow], languages: &Languages) -> Vec<LanguageCode> {
    let mut codes: Vec<LanguageCode> = languages.codes().cloned().collect();
    for r in rows {
        if !codes.contains(&r.language) {
            codes.push(r.language.clone());
        }
    }
    codes
}

fn eval_cmd(ctx: &Ctx, cmd: EvalCmd) -> Result<(), OpError> {
    match cmd {
        EvalCmd::Batch { kind, language, n, seed, corpus, shared_languages } => {
            let mut store = ctx.open()?;
            let corpus_id = ops::default_corpus(store.state(), corpus.as_deref())?;
            let seed = seed.unwrap_or_else(|| rand::rng().random());
            let mut request = TaskRequest::new(LanguageCode::new(language), kind.into(), n, seed);
            request.shared_languages = shared_languages.into_iter().map(LanguageCode::new).collect();
            let batch = ops::create_batch(&mut store, &BatchSpec { corpus_id, request }, ctx.now())?;
            let m = &batch.manifest;
            out(&format!(
                "batch {} ({} {}, {} tasks, seed {})\nmanifest {}\n",
                m.batch_id,
                m.language,
                m.task_kind.as_str(),
                m.task_ids.len(),
                m.seed,
                crate::export::manifest_path(&ctx.data_dir, &m.batch_id).display()
            ))
        }
        EvalCmd::Assign { batch, raters, annotators } => {
            let annotators = if annotators.is_empty() {
                let book = TokenBook::load(&ctx.data_dir)
                    .map_err(|source| OpError::Io { path: tokens::tokens_path(&ctx.data_dir), source })?;
                book.evaluators(ctx.now())
            } else {
                annotators
            };
            let mut store = ctx.open()?;
            let annotators = if annotators.is_empty() { store.state().evaluators() } else { annotators };
            let b = ops::assign_batch(&mut store, &batch, raters, &annotators)?;
            out(&format!("batch {} assigned, {raters} raters per task, seed {}\n", b.manifest.batch_id, b.manifest.seed))?;
            let mut t = Table::new(&["Annotator", "Tasks"]);
            for (a, n) in ops::assignment_load(&b) {
                t.rows.push(vec![a, n.to_string()]);
            }
            out(&t.to_text())
        }
        EvalCmd::Tally { source, format } => {
            let (rows, languages) = judgments(ctx, &source)?;
            let tallies = tally_rows(&rows);
            if matches!(format, Format::Json) {
                return json_out(&tallies);
            }
            let order = ordered_codes(&rows, &languages);
            let mut first = true;
            for kind in [TaskKind::Accuracy, TaskKind::Fluency] {
                if tallies.iter().any(|t| t.task_kind == kind) {
                    let r = report::preference_report(&tallies, kind, &order, &languages);
                    if !first && matches!(format, Format::Text) {
                        out("\n")?;
                    }
                    first = false;
                    match format {
                        Format::Csv => out(&r.csv.to_csv())?,
                        _ => out(&format!("{}\n{}", title(kind), r.text.to_text()))?,
                    }
                }
            }
            if first {
                return Err(elicit_core::agreement::AgreementError::NoJudgments.into());
            }
            Ok(())
        }
        EvalCmd::Kappa { source, basis, format } => {
            let basis = match basis {
                BasisArg::Raw => KappaBasis::Raw,
                BasisArg::Resolved => KappaBasis::Resolved,
            };
            let (rows, languages) = judgments(ctx, &source)?;
            let groups = group_rows(&rows);
            if groups.is_empty() {
                return Err(elicit_core::agreement::AgreementError::NoJudgments.into());
            }
            let mut results = Vec::new();
            for ((kind, lang), group) in &groups {
                results.push((*kind, lang.clone(), kappa_from_rows(group, basis)?));
            }
            if matches!(format, Format::Json) {
                let v: Vec<_> = results
                    .iter()
                    .map(|(k, l, r)| json!({"task_kind": k, "language": l, "kappa": r.kappa, "basis": r.basis,
                        "items": r.items, "raters": r.raters, "incomplete_tasks": r.incomplete_tasks}))
                    .collect();
                return json_out(&v);
            }
            let mut t = Table::new(&["Language", "Task", "Kappa", "Items", "Raters", "Incomplete"]);
            t.align[1] = Align::Left;
            for (kind, lang, r) in &results {
                t.rows.push(vec![
                    languages.name(lang).to_string(),
                    kind.as_str().to_string(),
                    fixed2(r.kappa),
                    r.items.to_string(),
                    r.raters.to_string(),
                    r.incomplete_tasks.to_string(),
                ]);
            }
            table_out(&t, format)
        }
        EvalCmd::Pvalue { source, format } => {
            let (rows, languages) = judgments(ctx, &source)?;
            let tallies = tally_rows(&rows);
            if tallies.is_empty() {
                return Err(elicit_core::agreement::AgreementError::NoJudgments.into());
            }
            if matches!(format, Format::Json) {
                return json_out(&tallies);
            }
            let mut t = Table::new(&["Language", "Task", "Storyboard", "Text", "Both", "p-value"]);
            t.align[1] = Align::Left;
            for r in &tallies {
                t.rows.push(vec![
                    languages.name(&r.language).to_string(),
                    r.task_kind.as_str().to_string(),
                    r.tally.storyboard.to_string(),
                    r.tally.text.to_string(),
                    r.tally.both.to_string(),
                    r.p_value.map_or_else(|| "-".into(), p_value),
                ]);
            }
            table_out(&t, format)
        }
        EvalCmd::Export { batch, out: dest, salt } => {
            let state = ctx.state()?;
            let rows = judgment_rows(&state, &batch, salt.as_deref())?;
            let mut buf = Vec::new();
            write_judgments(&mut buf, &rows).map_err(|e| OpError::Usage(e.to_string()))?;
            match dest {
                Some(p) => fs::write(&p, buf).map_err(|source| OpError::Io { path: p, source }),
                None => out(&String::from_utf8(buf).expect("csv is utf-8")),
            }
        }
    }
}

fn title(kind: TaskKind) -> &'static str {
    match kind {
        TaskKind::Accuracy => "Accuracy",
        TaskKind::Fluency => "Fluency",
    }
}

#[derive(Serialize)]
struct InputRecord {
    role: &'static str,
    path: String,
    sha256: String,
}

#[derive(Serialize)]
struct SeedRecord {
    batch_id: String,
    task_kind: TaskKind,
    language: LanguageCode,
    seed: u64,
}

#[derive(Serialize)]
struct ReportManifest {
    inputs: Vec<InputRecord>,
    seeds: Vec<SeedRecord>,
    ttr_threshold: f64,
    partial_factors: bool,
    aggregation: SentenceAggregation,
    files: Vec<String>,
}

fn file_digest(path: &Path) -> Result<String, OpError> {
    let bytes = fs::read(path).map_err(|source| OpError::Io { path: path.into(), source })?;
    Ok(hex::encode(Sha256::digest(&bytes)))
}

fn tree_digest(dir: &Path) -> Result<String, OpError> {
    let mut h = Sha256::new();
    for name in [crate::bundle::MANIFEST_FILE, crate::bundle::STORYBOARDS_FILE, crate::bundle::UNITS_FILE] {
        let p = dir.join(name);
        if p.exists() {
            h.update(name.as_bytes());
            h.update(file_digest(&p)?.as_bytes());
        }
    }
    Ok(hex::encode(h.finalize()))
}

fn report_cmd(ctx: &Ctx, cmd: ReportCmd) -> Result<(), OpError> {
    let ReportCmd::All { out: dir, source, judgments: files, embeddings, pos_file, aggregation, mtld } = cmd;
    let (corpus, languages) = ctx.corpus(&source)?;
    let mut inputs = Vec::new();
    let mut seeds = Vec::new();
    match &source.bundle {
        Some(b) => inputs.push(InputRecord { role: "bundle", path: b.display().to_string(), sha256: tree_digest(b)? }),
        None => {
            let state = ctx.state()?;
            let id = ops::default_corpus(&state, source.corpus.as_deref())?;
            let digest = hex::encode(Sha256::digest(serde_json::to_vec(state.corpus(&id)?).expect("corpus serializes")));
            inputs.push(InputRecord { role: "corpus", path: id, sha256: digest });
        }
    }
    let mut rows = Vec::new();
    if files.is_empty() {
        if source.bundle.is_none() || ctx.data_dir.join(crate::store::EVENTS_FILE).exists() {
            let state = ctx.state()?;
            for b in state.batches() {
                rows.extend(judgment_rows(&state, &b.manifest.batch_id, None)?);
                seeds.push(SeedRecord {
                    batch_id: b.manifest.batch_id.clone(),
                    task_kind: b.manifest.task_kind,
                    language: b.manifest.language.clone(),
                    seed: b.manifest.seed,
                });
            }
        }
    } else {
        for f in &files {
            rows.extend(read_judgments(f).map_err(|e| OpError::Usage(format!("{}: {e}", f.display())))?);
            inputs.push(InputRecord { role: "judgments", path: f.display().to_string(), sha256: file_digest(f)? });
        }
    }
    let emb = match &embeddings {
        Some(p) => {
            inputs.push(InputRecord { role: "embeddings", path: p.display().to_string(), sha256: file_digest(p)? });
            Some(read_embeddings(p)?)
        }
        None => None,
    };
    let pos = match &pos_file {
        Some(p) => {
            inputs.push(InputRecord { role: "pos", path: p.display().to_string(), sha256: file_digest(p)? });
            Some(read_pos(p)?)
        }
        None => None,
    };
    let cfg = mtld.config()?;
    let aggregation: SentenceAggregation = aggregation.into();
    let reports = all_reports(&ReportInputs {
        corpus: &corpus,
        languages: &languages,
        judgments: &rows,
        embeddings: emb.as_ref(),
        pos: pos.as_ref(),
        mtld: cfg,
        aggregation,
    })?;
    let paths = write_reports(&dir, &reports).map_err(|source| OpError::Io { path: dir.clone(), source })?;
    let files: Vec<String> =
        paths.iter().map(|p| p.file_name().expect("report file").to_string_lossy().into_owned()).collect();
    let manifest = ReportManifest {
        inputs,
        seeds,
        ttr_threshold: cfg.ttr_threshold,
        partial_factors: cfg.partial_factors,
        aggregation,
        files: files.clone(),
    };
    let path = dir.join("manifest.json");
    fs::write(&path, serde_json::to_string_pretty(&manifest).expect("manifest serializes") + "\n")
        .map_err(|source| OpError::Io { path, source })?;
    out(&format!("wrote {} tables to {}\n", reports.len(), dir.display()))
}

fn serve_cmd(ctx: &Ctx, s: ServeArgs) -> Result<(), OpError> {
    let store = Store::open(&ctx.data_dir, s.snapshot_every)?;
    let clock: Arc<dyn Clock> = match ctx.now {
        Some(t) => Arc::new(ManualClock::new(t)),
        None => Arc::new(SystemClock),
    };
    let config = ServiceConfig {
        default_gap_seconds: s.gap_seconds,
        allow_gap_override: s.allow_gap_override,
        seed_policy: s.seed_policy,
    };
    let io = |source| OpError::Io { path: ctx.data_dir.clone(), source };
    let app = AppState::new(store, clock, config).map_err(io)?;
    let rt = tokio::runtime::Builder::new_multi_thread().enable_all().build().map_err(io)?;
    rt.block_on(service::serve(app, s.listen)).map_err(io)
}
