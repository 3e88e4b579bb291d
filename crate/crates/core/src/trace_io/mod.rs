//! Text file formats.
//!
//! Tables are comma-separated with a header row. Tables that carry times
//! start with a `# unit=ms` line; other comment lines (`#`) before the header
//! are ignored. Documents (fitted models, summaries, metrics, manifests) are
//! TOML with an explicit `unit` key.

pub mod manifest;
pub mod synth;

use std::collections::{BTreeMap, HashMap};
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::cost_model::{DecodeCoeffs, FitReport, PredictorCoeffs, PrefillCoeffs, ProfilingSample};
use crate::error::{Error, Result};
use crate::length_predictor::{PredictionMetrics, RSquared};
use crate::sim_engine::{Job, JobOutcome, JobStatus, SimResult, Strategy, SweepRow};

pub const TIME_UNIT: &str = "ms";
pub const NOT_DEFINED: &str = "NotDefined";

pub const PROFILE_COLUMNS: &[&str] = &["n", "t_ms"];
pub const LOOKUP_COLUMNS: &[&str] = &["prompt_id", "bucket"];
pub const TRACE_COLUMNS: &[&str] = &["id", "arrival_ms", "n_x", "n_true", "budget_ms", "task_class"];
pub const OUTCOME_COLUMNS: &[&str] = &["id", "status", "start_ms", "finish_ms", "alpha", "score", "overran"];
pub const PREDICTION_COLUMNS: &[&str] = &["prompt_id", "bucket", "n_hat", "n_true"];
pub const SWEEP_COLUMNS: &[&str] = &[
    "axis",
    "x",
    "policy",
    "strategy",
    "completion_rate",
    "avg_score",
    "total",
    "completed",
    "killed",
    "skipped",
    "completed_late",
];

pub(crate) fn read_text(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|source| Error::Io { path: path.to_path_buf(), source })
}

pub(crate) fn write_text(path: &Path, text: &str) -> Result<()> {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent).map_err(|source| Error::Io { path: parent.to_path_buf(), source })?;
    }
    fs::write(path, text).map_err(|source| Error::Io { path: path.to_path_buf(), source })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum UnitLine {
    Required,
    Optional,
}

/// A parsed table with 1-based source line numbers for every record.
struct Table {
    path: PathBuf,
    columns: HashMap<String, usize>,
    records: Vec<(u64, csv::StringRecord)>,
}

impl Table {
    fn parse(path: &Path, text: &str, required: &[&str], unit: UnitLine) -> Result<Table> {
        let mut offset = 0usize;
        let mut skipped = 0u64;
        let mut found_unit = None;
        for line in text.split_inclusive('\n') {
            let trimmed = line.trim();
            if !trimmed.is_empty() && !trimmed.starts_with('#') {
                break;
            }
            if let Some(decl) = trimmed.strip_prefix('#').map(str::trim) {
                if let Some(value) = decl.strip_prefix("unit").map(str::trim_start).and_then(|d| d.strip_prefix('=')) {
                    found_unit = Some(value.trim().to_string());
                }
            }
            offset += line.len();
            skipped += 1;
        }
        match found_unit {
            Some(u) if u != TIME_UNIT => {
                return Err(Error::UnitMismatch { path: path.to_path_buf(), found: u });
            }
            None if unit == UnitLine::Required => {
                return Err(Error::parse(path, 1, 1, format!("missing '# unit={TIME_UNIT}' declaration")));
            }
            _ => {}
        }

        let mut reader =
            csv::ReaderBuilder::new().trim(csv::Trim::All).comment(Some(b'#')).from_reader(&text.as_bytes()[offset..]);
        let header_line = skipped + 1;
        let headers = reader.headers().map_err(|e| Error::parse(path, header_line, 1, e.to_string()))?.clone();
        let columns: HashMap<String, usize> = headers.iter().enumerate().map(|(i, h)| (h.to_string(), i)).collect();
        if let Some(missing) = required.iter().find(|c| !columns.contains_key(**c)) {
            return Err(Error::parse(path, header_line, 1, format!("header is missing column '{missing}'")));
        }

        let mut records = Vec::new();
        for rec in reader.records() {
            let rec = rec.map_err(|e| {
                let line = e.position().map_or(header_line, |p| p.line() + skipped);
                Error::parse(path, line, 1, e.to_string())
            })?;
            let line = rec.position().map_or(0, |p| p.line()) + skipped;
            records.push((line, rec));
        }
        Ok(Table { path: path.to_path_buf(), columns, records })
    }

    fn field<T: FromStr>(&self, line: u64, rec: &csv::StringRecord, name: &str) -> Result<T>
    where
        T::Err: std::fmt::Display,
    {
        let col = self.columns[name];
        let raw = rec.get(col).unwrap_or("");
        raw.parse().map_err(|e: T::Err| {
            Error::parse(&self.path, line, col as u64 + 1, format!("column '{name}': cannot parse '{raw}': {e}"))
        })
    }

    fn check<T>(&self, line: u64, name: &str, ok: bool, value: T, what: &str) -> Result<T> {
        if ok {
            Ok(value)
        } else {
            Err(Error::parse(&self.path, line, self.columns[name] as u64 + 1, format!("column '{name}': {what}")))
        }
    }
}

fn render_table(unit: bool, columns: &[&str], rows: impl IntoIterator<Item = Vec<String>>) -> String {
    let mut out = String::new();
    if unit {
        out.push_str("# unit=ms\n");
    }
    out.push_str(&columns.join(","));
    out.push('\n');
    for row in rows {
        out.push_str(&row.join(","));
        out.push('\n');
    }
    out
}

pub fn parse_profile(path: &Path, text: &str) -> Result<Vec<ProfilingSample>> {
    let table = Table::parse(path, text, PROFILE_COLUMNS, UnitLine::Required)?;
    table
        .records
        .iter()
        .map(|(line, rec)| {
            let n = table.field(*line, rec, "n")?;
            let t: f64 = table.field(*line, rec, "t_ms")?;
            let t = table.check(*line, "t_ms", t > 0.0 && t.is_finite(), t, "time must be positive")?;
            Ok(ProfilingSample { n, t_ms: t })
        })
        .collect()
}

pub fn load_profile(path: &Path) -> Result<Vec<ProfilingSample>> {
    parse_profile(path, &read_text(path)?)
}

pub fn render_profile(samples: &[ProfilingSample]) -> String {
    render_table(true, PROFILE_COLUMNS, samples.iter().map(|s| vec![s.n.to_string(), s.t_ms.to_string()]))
}

pub fn save_profile(path: &Path, samples: &[ProfilingSample]) -> Result<()> {
    write_text(path, &render_profile(samples))
}

pub fn parse_lookup(path: &Path, text: &str) -> Result<HashMap<u64, u32>> {
    let table = Table::parse(path, text, LOOKUP_COLUMNS, UnitLine::Optional)?;
    let mut map = HashMap::new();
    for (line, rec) in &table.records {
        let id: u64 = table.field(*line, rec, "prompt_id")?;
        let bucket: u32 = table.field(*line, rec, "bucket")?;
        table.check(*line, "bucket", bucket >= 1, (), "bucket labels start at 1")?;
        if map.insert(id, bucket).is_some() {
            return Err(Error::parse(path, *line, 1, format!("duplicate prompt id {id}")));
        }
    }
    Ok(map)
}

pub fn load_lookup(path: &Path) -> Result<HashMap<u64, u32>> {
    parse_lookup(path, &read_text(path)?)
}

pub fn render_lookup(table: &HashMap<u64, u32>) -> String {
    let sorted: BTreeMap<_, _> = table.iter().collect();
    render_table(false, LOOKUP_COLUMNS, sorted.into_iter().map(|(id, b)| vec![id.to_string(), b.to_string()]))
}

pub fn save_lookup(path: &Path, table: &HashMap<u64, u32>) -> Result<()> {
    write_text(path, &render_lookup(table))
}

pub fn parse_trace(path: &Path, text: &str) -> Result<Vec<Job>> {
    let table = Table::parse(path, text, TRACE_COLUMNS, UnitLine::Required)?;
    let mut jobs: Vec<Job> = Vec::with_capacity(table.records.len());
    for (line, rec) in &table.records {
        let line = *line;
        let arrival: f64 = table.field(line, rec, "arrival_ms")?;
        let arrival = table.check(
            line,
            "arrival_ms",
            arrival.is_finite() && arrival >= 0.0,
            arrival,
            "arrival must be a non-negative time",
        )?;
        if let Some(prev) = jobs.last() {
            table.check(line, "arrival_ms", arrival >= prev.arrival_ms, (), "arrivals must be non-decreasing")?;
        }
        let n_true: u32 = table.field(line, rec, "n_true")?;
        table.check(line, "n_true", n_true >= 1, (), "response length must be at least 1")?;
        let budget: f64 = table.field(line, rec, "budget_ms")?;
        table.check(line, "budget_ms", budget > 0.0 && budget.is_finite(), (), "budget must be positive")?;
        jobs.push(Job {
            id: table.field(line, rec, "id")?,
            arrival_ms: arrival,
            n_x: table.field(line, rec, "n_x")?,
            n_true,
            budget_ms: budget,
            task_class: table.field(line, rec, "task_class")?,
        });
    }
    Ok(jobs)
}

pub fn load_trace(path: &Path) -> Result<Vec<Job>> {
    parse_trace(path, &read_text(path)?)
}

pub fn render_trace(jobs: &[Job]) -> String {
    render_table(
        true,
        TRACE_COLUMNS,
        jobs.iter().map(|j| {
            vec![
                j.id.to_string(),
                j.arrival_ms.to_string(),
                j.n_x.to_string(),
                j.n_true.to_string(),
                j.budget_ms.to_string(),
                j.task_class.clone(),
            ]
        }),
    )
}

pub fn save_trace(path: &Path, jobs: &[Job]) -> Result<()> {
    write_text(path, &render_trace(jobs))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ModelKind {
    /// `a n² + b n + c`: prefill and predictor models.
    Quadratic,
    /// `p n + q`: decode-step model.
    Linear,
}

/// A fitted or hand-written execution-time model document.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelFile {
    pub model_kind: ModelKind,
    pub unit: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub fit_mape: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sample_count: Option<usize>,
    pub coefficients: BTreeMap<String, f64>,
}

impl ModelFile {
    pub fn quadratic(c: &PrefillCoeffs, fit: Option<&FitReport>) -> Self {
        ModelFile {
            model_kind: ModelKind::Quadratic,
            unit: TIME_UNIT.into(),
            fit_mape: fit.map(|f| f.mape),
            sample_count: fit.map(|f| f.sample_count),
            coefficients: BTreeMap::from([("a".into(), c.a), ("b".into(), c.b), ("c".into(), c.c)]),
        }
    }

    pub fn linear(c: &DecodeCoeffs, fit: Option<&FitReport>) -> Self {
        ModelFile {
            model_kind: ModelKind::Linear,
            unit: TIME_UNIT.into(),
            fit_mape: fit.map(|f| f.mape),
            sample_count: fit.map(|f| f.sample_count),
            coefficients: BTreeMap::from([("p".into(), c.p), ("q".into(), c.q)]),
        }
    }

    fn coeff(&self, name: &str) -> Result<f64> {
        self.coefficients.get(name).copied().ok_or_else(|| Error::InvalidModel(format!("missing coefficient '{name}'")))
    }

    fn expect_kind(&self, kind: ModelKind) -> Result<()> {
        if self.model_kind == kind {
            Ok(())
        } else {
            Err(Error::InvalidModel(format!("expected a {kind:?} model, found {:?}", self.model_kind)))
        }
    }

    pub fn prefill(&self) -> Result<PrefillCoeffs> {
        self.expect_kind(ModelKind::Quadratic)?;
        PrefillCoeffs::new(self.coeff("a")?, self.coeff("b")?, self.coeff("c")?)
    }

    pub fn predictor(&self) -> Result<PredictorCoeffs> {
        self.expect_kind(ModelKind::Quadratic)?;
        PredictorCoeffs::new(self.coeff("a")?, self.coeff("b")?, self.coeff("c")?)
    }

    pub fn decode(&self) -> Result<DecodeCoeffs> {
        self.expect_kind(ModelKind::Linear)?;
        DecodeCoeffs::new(self.coeff("p")?, self.coeff("q")?)
    }
}

fn toml_position(text: &str, err: &toml::de::Error) -> (u64, u64) {
    match err.span() {
        Some(span) => {
            let before = &text[..span.start.min(text.len())];
            let line = before.matches('\n').count() as u64 + 1;
            let column = before.rsplit('\n').next().map_or(0, |l| l.chars().count()) as u64 + 1;
            (line, column)
        }
        None => (1, 1),
    }
}

pub fn parse_toml<T: for<'de> Deserialize<'de>>(path: &Path, text: &str) -> Result<T> {
    toml::from_str(text).map_err(|e| {
        let (line, column) = toml_position(text, &e);
        Error::parse(path, line, column, e.message().to_string())
    })
}

pub fn render_toml<T: Serialize>(value: &T) -> String {
    toml::to_string(value).expect("document types serialize to TOML")
}

pub fn write_text_file(path: &Path, text: &str) -> Result<()> {
    write_text(path, text)
}

pub fn load_synthetic_spec(path: &Path) -> Result<synth::SyntheticSpec> {
    parse_toml(path, &read_text(path)?)
}

pub fn save_synthetic_spec(path: &Path, spec: &synth::SyntheticSpec) -> Result<()> {
    write_text(path, &render_toml(spec))
}

fn check_unit(path: &Path, unit: &str) -> Result<()> {
    if unit == TIME_UNIT {
        Ok(())
    } else {
        Err(Error::UnitMismatch { path: path.to_path_buf(), found: unit.to_string() })
    }
}

pub fn parse_model(path: &Path, text: &str) -> Result<ModelFile> {
    let model: ModelFile = parse_toml(path, text)?;
    check_unit(path, &model.unit)?;
    Ok(model)
}

pub fn load_model(path: &Path) -> Result<ModelFile> {
    parse_model(path, &read_text(path)?)
}

pub fn save_model(path: &Path, model: &ModelFile) -> Result<()> {
    write_text(path, &render_toml(model))
}

/// Serializes `Option<f64>` as a number or the `NotDefined` marker.
mod maybe_number {
    use serde::{Deserialize, Deserializer, Serializer};

    use super::NOT_DEFINED;

    #[derive(Deserialize)]
    #[serde(untagged)]
    enum Raw {
        Number(f64),
        Marker(String),
    }

    pub fn serialize<S: Serializer>(value: &Option<f64>, s: S) -> Result<S::Ok, S::Error> {
        match value {
            Some(v) => s.serialize_f64(*v),
            None => s.serialize_str(NOT_DEFINED),
        }
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Option<f64>, D::Error> {
        match Raw::deserialize(d)? {
            Raw::Number(v) => Ok(Some(v)),
            Raw::Marker(m) if m == NOT_DEFINED => Ok(None),
            Raw::Marker(m) => Err(serde::de::Error::custom(format!("expected a number or {NOT_DEFINED}, got '{m}'"))),
        }
    }
}

fn render_maybe(value: Option<f64>) -> String {
    value.map_or_else(|| NOT_DEFINED.to_string(), |v| v.to_string())
}

fn parse_maybe(raw: &str) -> std::result::Result<Option<f64>, String> {
    if raw == NOT_DEFINED {
        Ok(None)
    } else {
        raw.parse().map(Some).map_err(|e| format!("{e}"))
    }
}

/// Table-1 style length-predictor metrics.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MetricsDocument {
    pub unit: String,
    pub count: usize,
    #[serde(rename = "MAE")]
    pub mae: f64,
    #[serde(rename = "RMSE")]
    pub rmse: f64,
    #[serde(rename = "R2", with = "maybe_number")]
    pub r2: Option<f64>,
}

impl From<&PredictionMetrics> for MetricsDocument {
    fn from(m: &PredictionMetrics) -> Self {
        MetricsDocument {
            unit: "tokens".into(),
            count: m.count,
            mae: m.mae,
            rmse: m.rmse,
            r2: match m.r2 {
                RSquared::Value(v) => Some(v),
                RSquared::NotDefined => None,
            },
        }
    }
}

pub fn render_metrics(m: &PredictionMetrics) -> String {
    render_toml(&MetricsDocument::from(m))
}

/// One predicted length, for the `predict` subcommand's table.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PredictionRow {
    pub prompt_id: u64,
    pub bucket: u32,
    pub n_hat: u32,
    pub n_true: u32,
}

pub fn render_predictions(rows: &[PredictionRow]) -> String {
    render_table(
        false,
        PREDICTION_COLUMNS,
        rows.iter()
            .map(|r| vec![r.prompt_id.to_string(), r.bucket.to_string(), r.n_hat.to_string(), r.n_true.to_string()]),
    )
}

/// Aggregate part of a [`SimResult`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SummaryDocument {
    pub policy: String,
    pub strategy: Strategy,
    pub unit: String,
    pub total: usize,
    pub completed: usize,
    pub killed: usize,
    pub skipped: usize,
    pub completed_late: usize,
    #[serde(with = "maybe_number")]
    pub completion_rate: Option<f64>,
    #[serde(with = "maybe_number")]
    pub avg_score: Option<f64>,
}

impl From<&SimResult> for SummaryDocument {
    fn from(r: &SimResult) -> Self {
        SummaryDocument {
            policy: r.policy.clone(),
            strategy: r.strategy,
            unit: TIME_UNIT.into(),
            total: r.total,
            completed: r.completed,
            killed: r.killed,
            skipped: r.skipped,
            completed_late: r.completed_late,
            completion_rate: r.completion_rate,
            avg_score: r.avg_score,
        }
    }
}

pub fn parse_summary(path: &Path, text: &str) -> Result<SummaryDocument> {
    let doc: SummaryDocument = parse_toml(path, text)?;
    check_unit(path, &doc.unit)?;
    Ok(doc)
}

pub fn render_outcomes(outcomes: &[JobOutcome]) -> String {
    render_table(
        true,
        OUTCOME_COLUMNS,
        outcomes.iter().map(|o| {
            vec![
                o.id.to_string(),
                o.status.to_string(),
                o.start_ms.to_string(),
                o.finish_ms.to_string(),
                o.alpha_used.map_or_else(String::new, |a| a.to_string()),
                o.score.to_string(),
                o.overran.to_string(),
            ]
        }),
    )
}

pub fn parse_outcomes(path: &Path, text: &str) -> Result<Vec<JobOutcome>> {
    let table = Table::parse(path, text, OUTCOME_COLUMNS, UnitLine::Required)?;
    table
        .records
        .iter()
        .map(|(line, rec)| {
            let alpha_raw: String = table.field(*line, rec, "alpha")?;
            let alpha_used = if alpha_raw.is_empty() { None } else { Some(table.field(*line, rec, "alpha")?) };
            let status: String = table.field(*line, rec, "status")?;
            let status = JobStatus::from_str(&status)
                .map_err(|e| Error::parse(path, *line, table.columns["status"] as u64 + 1, e.to_string()))?;
            Ok(JobOutcome {
                id: table.field(*line, rec, "id")?,
                status,
                start_ms: table.field(*line, rec, "start_ms")?,
                finish_ms: table.field(*line, rec, "finish_ms")?,
                alpha_used,
                score: table.field(*line, rec, "score")?,
                overran: table.field(*line, rec, "overran")?,
            })
        })
        .collect()
}

/// File stem used for one policy × strategy run.
pub fn run_stem(result: &SimResult) -> String {
    format!("{}_{}", result.policy, result.strategy)
}

/// Writes `<stem>.summary.toml` and `<stem>.jobs.csv` into `dir`.
pub fn save_result(dir: &Path, stem: &str, result: &SimResult) -> Result<(PathBuf, PathBuf)> {
    let summary = dir.join(format!("{stem}.summary.toml"));
    let jobs = dir.join(format!("{stem}.jobs.csv"));
    write_text(&summary, &render_toml(&SummaryDocument::from(result)))?;
    write_text(&jobs, &render_outcomes(&result.outcomes))?;
    Ok((summary, jobs))
}

/// Reads a result back from its summary path; the job table sits next to it.
pub fn load_result(summary_path: &Path) -> Result<SimResult> {
    let summary = parse_summary(summary_path, &read_text(summary_path)?)?;
    let name = summary_path.to_string_lossy();
    let jobs_path = PathBuf::from(
        name.strip_suffix(".summary.toml")
            .map(|stem| format!("{stem}.jobs.csv"))
            .ok_or_else(|| Error::InvalidInput(format!("{name}: not a .summary.toml file")))?,
    );
    let outcomes = parse_outcomes(&jobs_path, &read_text(&jobs_path)?)?;
    Ok(SimResult {
        policy: summary.policy,
        strategy: summary.strategy,
        total: summary.total,
        completed: summary.completed,
        killed: summary.killed,
        skipped: summary.skipped,
        completed_late: summary.completed_late,
        completion_rate: summary.completion_rate,
        avg_score: summary.avg_score,
        outcomes,
    })
}

/// Aggregate row of a sweep table.
#[derive(Debug, Clone, PartialEq)]
pub struct SweepRecord {
    pub axis: String,
    pub x: f64,
    pub policy: String,
    pub strategy: Strategy,
    pub completion_rate: Option<f64>,
    pub avg_score: Option<f64>,
    pub total: usize,
    pub completed: usize,
    pub killed: usize,
    pub skipped: usize,
    pub completed_late: usize,
}

impl SweepRecord {
    pub fn from_row(axis: &str, row: &SweepRow) -> Self {
        let r = &row.result;
        SweepRecord {
            axis: axis.to_string(),
            x: row.x,
            policy: r.policy.clone(),
            strategy: r.strategy,
            completion_rate: r.completion_rate,
            avg_score: r.avg_score,
            total: r.total,
            completed: r.completed,
            killed: r.killed,
            skipped: r.skipped,
            completed_late: r.completed_late,
        }
    }
}

pub fn render_sweep(records: &[SweepRecord]) -> String {
    render_table(
        true,
        SWEEP_COLUMNS,
        records.iter().map(|r| {
            vec![
                r.axis.clone(),
                r.x.to_string(),
                r.policy.clone(),
                r.strategy.to_string(),
                render_maybe(r.completion_rate),
                render_maybe(r.avg_score),
                r.total.to_string(),
                r.completed.to_string(),
                r.killed.to_string(),
                r.skipped.to_string(),
                r.completed_late.to_string(),
            ]
        }),
    )
}

pub fn parse_sweep(path: &Path, text: &str) -> Result<Vec<SweepRecord>> {
    let table = Table::parse(path, text, SWEEP_COLUMNS, UnitLine::Required)?;
    table
        .records
        .iter()
        .map(|(line, rec)| {
            let line = *line;
            let maybe = |name: &str| -> Result<Option<f64>> {
                let raw: String = table.field(line, rec, name)?;
                parse_maybe(&raw).map_err(|e| {
                    Error::parse(path, line, table.columns[name] as u64 + 1, format!("column '{name}': {e}"))
                })
            };
            let strategy: String = table.field(line, rec, "strategy")?;
            Ok(SweepRecord {
                axis: table.field(line, rec, "axis")?,
                x: table.field(line, rec, "x")?,
                policy: table.field(line, rec, "policy")?,
                strategy: Strategy::from_str(&strategy)
                    .map_err(|e| Error::parse(path, line, table.columns["strategy"] as u64 + 1, e.to_string()))?,
                completion_rate: maybe("completion_rate")?,
                avg_score: maybe("avg_score")?,
                total: table.field(line, rec, "total")?,
                completed: table.field(line, rec, "completed")?,
                killed: table.field(line, rec, "killed")?,
                skipped: table.field(line, rec, "skipped")?,
                completed_late: table.field(line, rec, "completed_late")?,
            })
        })
        .collect()
}

pub const RUN_TABLE_COLUMNS: &[&str] = &[
    "policy",
    "strategy",
    "completion_rate",
    "avg_score",
    "total",
    "completed",
    "killed",
    "skipped",
    "completed_late",
];

/// One row per run: the completion-rate table of a `simulate` invocation.
pub fn render_run_table(results: &[SimResult]) -> String {
    render_table(
        false,
        RUN_TABLE_COLUMNS,
        results.iter().map(|r| {
            vec![
                r.policy.clone(),
                r.strategy.to_string(),
                render_maybe(r.completion_rate),
                render_maybe(r.avg_score),
                r.total.to_string(),
                r.completed.to_string(),
                r.killed.to_string(),
                r.skipped.to_string(),
                r.completed_late.to_string(),
            ]
        }),
    )
}

/// One `x,series,value` row of a plot-ready table.
#[derive(Debug, Clone, PartialEq)]
pub struct PlotRow {
    pub x: String,
    pub series: String,
    pub value: Option<f64>,
}

fn plot_rows(x: String, policy: &str, strategy: Strategy, rate: Option<f64>, score: Option<f64>) -> [PlotRow; 2] {
    [
        PlotRow { x: x.clone(), series: format!("{policy}/{strategy}/completion_rate"), value: rate },
        PlotRow { x, series: format!("{policy}/{strategy}/avg_score"), value: score },
    ]
}

/// Flattens sweep records into plot rows, grouped by series.
pub fn sweep_plot_rows(records: &[SweepRecord]) -> Vec<PlotRow> {
    let mut rows: Vec<PlotRow> = records
        .iter()
        .flat_map(|r| plot_rows(r.x.to_string(), &r.policy, r.strategy, r.completion_rate, r.avg_score))
        .collect();
    // stable: keeps x order within each series
    rows.sort_by(|a, b| a.series.cmp(&b.series));
    rows
}

/// Plot rows of a single run; `x` is the fixed label `run`.
pub fn summary_plot_rows(summary: &SummaryDocument) -> Vec<PlotRow> {
    plot_rows("run".into(), &summary.policy, summary.strategy, summary.completion_rate, summary.avg_score).to_vec()
}

pub fn render_plot(rows: &[PlotRow]) -> String {
    render_table(
        false,
        &["x", "series", "value"],
        rows.iter().map(|r| vec![r.x.clone(), r.series.clone(), render_maybe(r.value)]),
    )
}

#[cfg(test)]
mod tests {
    use super::*;

    fn p() -> &'static Path {
        Path::new("mem.csv")
    }

    #[test]
    fn profile_requires_ms_unit() {
        let ok = "# unit=ms\nn,t_ms\n1,2.5\n2,3\n";
        assert_eq!(parse_profile(p(), ok).unwrap().len(), 2);
        let secs = "# unit=s\nn,t_ms\n1,2.5\n";
        assert!(matches!(parse_profile(p(), secs), Err(Error::UnitMismatch { found, .. }) if found == "s"));
        let none = "n,t_ms\n1,2.5\n";
        assert!(matches!(parse_profile(p(), none), Err(Error::Parse { line: 1, .. })));
    }

    #[test]
    fn missing_column_is_named() {
        let text = "# unit=ms\nn\n1\n";
        match parse_profile(p(), text) {
            Err(Error::Parse { line, message, .. }) => {
                assert_eq!(line, 2);
                assert!(message.contains("t_ms"), "{message}");
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn bad_field_has_location() {
        let text = "# unit=ms\n# comment\nn,t_ms\n1,2.5\n2,abc\n";
        match parse_profile(p(), text) {
            Err(Error::Parse { line, column, .. }) => assert_eq!((line, column), (5, 2)),
            other => panic!("unexpected {other:?}"),
        }
        let negative = "# unit=ms\nn,t_ms\n1,-2\n";
        assert!(matches!(parse_profile(p(), negative), Err(Error::Parse { line: 3, column: 2, .. })));
    }

    #[test]
    fn trace_rejects_decreasing_arrivals() {
        let text = "# unit=ms\nid,arrival_ms,n_x,n_true,budget_ms,task_class\n1,10,5,5,100,a\n2,5,5,5,100,a\n";
        assert!(matches!(parse_trace(p(), text), Err(Error::Parse { line: 4, column: 2, .. })));
    }

    #[test]
    fn model_document() {
        let text = "model_kind = \"linear\"\nunit = \"ms\"\n\n[coefficients]\np = 0.05\nq = 12.0\n";
        let m = parse_model(p(), text).unwrap();
        assert_eq!(m.decode().unwrap(), DecodeCoeffs { p: 0.05, q: 12.0 });
        assert!(m.prefill().is_err());
        let secs = text.replace("\"ms\"", "\"s\"");
        assert!(matches!(parse_model(p(), &secs), Err(Error::UnitMismatch { .. })));
        let missing = "model_kind = \"quadratic\"\nunit = \"ms\"\n[coefficients]\na = 1.0\nb = 2.0\n";
        assert!(parse_model(p(), missing).unwrap().prefill().is_err());
        let bad = "model_kind = \"cubic\"\nunit = \"ms\"\n";
        assert!(matches!(parse_model(p(), bad), Err(Error::Parse { line: 1, .. })));
    }

    #[test]
    fn not_defined_marker_round_trips() {
        let rows = vec![SweepRecord {
            axis: "k".into(),
            x: 1.0,
            policy: "vanilla".into(),
            strategy: Strategy::Kill,
            completion_rate: None,
            avg_score: Some(0.5),
            total: 0,
            completed: 0,
            killed: 0,
            skipped: 0,
            completed_late: 0,
        }];
        let text = render_sweep(&rows);
        assert!(text.contains(NOT_DEFINED));
        assert_eq!(parse_sweep(p(), &text).unwrap(), rows);
    }
}
