//! Per-pair aggregation of outcome stores and fixed-vs-ours comparison tables.
//!
//! Means are taken over the selected candidates of successful samples.
//! Infinite PSNR values are left out of the PSNR mean and counted instead.
//! The better value of each metric pair is marked bold, decided on the
//! rounded values that are displayed (PSNR 2 dp, SSIM 3 dp, VIE 2 dp), so a
//! visible tie is never bolded.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::catalog::{TaskCatalog, TaskPair};
use crate::metrics::Psnr;
use crate::runner::{read_outcomes, OutcomeStatus, RunError, RunMode, RunPaths, SampleOutcome};

#[derive(Debug, Error)]
pub enum ReportError {
    #[error("{pair} ({mode}): no successful samples to aggregate")]
    NoSuccess { pair: String, mode: RunMode },
    #[error(transparent)]
    Store(#[from] RunError),
    #[error("{path}: {source}")]
    Io { path: String, source: std::io::Error },
    #[error("tier file: {0}")]
    Tiers(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Tier {
    Top,
    Second,
}

impl Tier {
    pub fn as_str(self) -> &'static str {
        match self {
            Tier::Top => "top",
            Tier::Second => "second",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub pair: TaskPair,
    pub mode: RunMode,
    /// Successful samples.
    pub n: usize,
    /// Mean over finite PSNRs; `None` if every PSNR was infinite.
    pub mean_psnr: Option<f64>,
    pub inf_count: usize,
    pub mean_ssim: f64,
    /// Mean over successful samples that received a VIE score.
    pub mean_vie_0_10: Option<f64>,
    pub vie_n: usize,
    pub failures: usize,
}

fn mean(values: &[f64]) -> Option<f64> {
    (!values.is_empty()).then(|| values.iter().sum::<f64>() / values.len() as f64)
}

/// Aggregates the outcomes of one pair and mode; other outcomes are ignored.
pub fn aggregate_outcomes(outcomes: &[SampleOutcome], pair: &TaskPair, mode: RunMode) -> Result<RunReport, ReportError> {
    let mut psnrs = Vec::new();
    let mut ssims = Vec::new();
    let mut vies = Vec::new();
    let (mut inf_count, mut failures) = (0, 0);
    for o in outcomes.iter().filter(|o| o.pair == *pair && o.mode == mode) {
        let sel = match (o.status, o.selected_candidate()) {
            (OutcomeStatus::Ok, Some(c)) => c,
            _ => {
                failures += 1;
                continue;
            }
        };
        match sel.psnr {
            Some(Psnr::Finite(v)) => psnrs.push(v),
            Some(Psnr::Infinite) => inf_count += 1,
            None => {}
        }
        ssims.push(sel.ssim.unwrap_or_default());
        if let Some(v) = &sel.vie {
            vies.push(v.overall_0_10);
        }
    }
    let n = ssims.len();
    if n == 0 {
        return Err(ReportError::NoSuccess { pair: pair.key(), mode });
    }
    Ok(RunReport {
        pair: pair.clone(),
        mode,
        n,
        mean_psnr: mean(&psnrs),
        inf_count,
        mean_ssim: mean(&ssims).expect("n > 0"),
        mean_vie_0_10: mean(&vies),
        vie_n: vies.len(),
        failures,
    })
}

pub fn aggregate_run(paths: &RunPaths, pair: &TaskPair, mode: RunMode) -> Result<RunReport, ReportError> {
    aggregate_outcomes(&read_outcomes(&paths.outcomes(pair, mode))?, pair, mode)
}

/// `(pair, mode)` combinations that have an outcome store in the run.
pub fn discover(paths: &RunPaths, catalog: &TaskCatalog) -> Result<Vec<(TaskPair, RunMode)>, ReportError> {
    let dir = paths.outcomes_dir();
    let mut found = BTreeSet::new();
    let entries = match std::fs::read_dir(&dir) {
        Ok(e) => e,
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => return Ok(Vec::new()),
        Err(source) => {
            return Err(ReportError::Io {
                path: dir.display().to_string(),
                source,
            })
        }
    };
    for entry in entries.flatten() {
        let name = entry.file_name().to_string_lossy().to_string();
        let Some(stem) = name.strip_suffix(".jsonl") else { continue };
        let parts: Vec<&str> = stem.split("__").collect();
        if let [src, tgt, mode] = parts[..] {
            if let (Ok(pair), Ok(mode)) = (catalog.pair(src, tgt), mode.parse::<RunMode>()) {
                found.insert((pair.key(), mode, pair));
            }
        }
    }
    Ok(found.into_iter().map(|(_, m, p)| (p, m)).collect())
}

/// Pairs and tiers of the published comparison tables, in table order.
pub const REPORTED_PAIRS: [(&str, Tier); 19] = [
    ("deblurring:dehazing", Tier::Top),
    ("deblurring:deraining", Tier::Top),
    ("deblurring:demoireing", Tier::Top),
    ("harmonization:light-enhancement", Tier::Top),
    ("inpainting:light-enhancement", Tier::Top),
    ("denoising:light-enhancement", Tier::Top),
    ("light-enhancement:deraining", Tier::Top),
    ("light-enhancement:shadow-removal", Tier::Top),
    ("reflection-removal:dehazing", Tier::Top),
    ("dehazing:denoising", Tier::Second),
    ("dehazing:deraining", Tier::Second),
    ("colorization:style-transfer", Tier::Second),
    ("harmonization:style-transfer", Tier::Second),
    ("inpainting:colorization", Tier::Second),
    ("inpainting:style-transfer", Tier::Second),
    ("light-enhancement:colorization", Tier::Second),
    ("style-transfer:light-enhancement", Tier::Second),
    ("deraining:style-transfer", Tier::Second),
    ("shadow-removal:deraining", Tier::Second),
];

/// Configured tier labels keyed by `source:target`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TierConfig {
    pub tiers: BTreeMap<String, Tier>,
}

impl Default for TierConfig {
    fn default() -> Self {
        TierConfig {
            tiers: REPORTED_PAIRS.iter().map(|(k, t)| (k.to_string(), *t)).collect(),
        }
    }
}

impl TierConfig {
    /// TOML with a `[tiers]` table, e.g. `"deblurring:dehazing" = "top"`.
    pub fn from_toml(text: &str) -> Result<Self, ReportError> {
        toml::from_str(text).map_err(|e| ReportError::Tiers(e.to_string()))
    }
}

/// Published pairs first in table order, then the rest by key.
pub fn order_pairs(pairs: impl IntoIterator<Item = TaskPair>) -> Vec<TaskPair> {
    let rank = |p: &TaskPair| {
        REPORTED_PAIRS
            .iter()
            .position(|(k, _)| *k == p.key())
            .unwrap_or(REPORTED_PAIRS.len())
    };
    let mut v: Vec<TaskPair> = pairs.into_iter().collect::<BTreeSet<_>>().into_iter().collect();
    v.sort_by(|a, b| rank(a).cmp(&rank(b)).then_with(|| a.key().cmp(&b.key())));
    v
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Better {
    Fixed,
    Ours,
    Tie,
    /// One side is missing.
    None,
}

impl Better {
    pub fn as_str(self) -> &'static str {
        match self {
            Better::Fixed => "fixed",
            Better::Ours => "ours",
            Better::Tie => "tie",
            Better::None => "",
        }
    }
}

/// A displayed metric pair: rounded text for both modes and the winner.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Cell {
    pub fixed: String,
    pub ours: String,
    pub better: Better,
}

fn fmt_opt(v: Option<f64>, dp: usize) -> String {
    v.map(|v| format!("{v:.dp$}")).unwrap_or_default()
}

fn psnr_text(r: Option<&RunReport>) -> String {
    match r {
        None => String::new(),
        Some(r) => match r.mean_psnr {
            Some(v) => format!("{v:.2}"),
            None if r.inf_count > 0 => "inf".into(),
            None => String::new(),
        },
    }
}

fn compare_text(fixed: String, ours: String) -> Cell {
    let num = |s: &str| match s {
        "" => None,
        "inf" => Some(f64::INFINITY),
        v => v.parse::<f64>().ok(),
    };
    let better = match (num(&fixed), num(&ours)) {
        (Some(f), Some(o)) if o > f => Better::Ours,
        (Some(f), Some(o)) if f > o => Better::Fixed,
        (Some(_), Some(_)) => Better::Tie,
        _ => Better::None,
    };
    Cell { fixed, ours, better }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ComparisonRow {
    pub pair: TaskPair,
    pub label: String,
    pub psnr: Cell,
    pub ssim: Cell,
    pub vie: Cell,
    pub n_fixed: Option<usize>,
    pub n_ours: Option<usize>,
    pub configured_tier: Option<Tier>,
    /// Top when ours wins at least two of the three metrics.
    pub derived_tier: Option<Tier>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Comparison {
    pub rows: Vec<ComparisonRow>,
    pub warnings: Vec<String>,
}

pub fn pair_label(pair: &TaskPair, catalog: &TaskCatalog) -> String {
    let name = |id: &str| catalog.task(id).map(|t| t.display_name.clone()).unwrap_or_else(|_| id.to_string());
    format!("{} → {}", name(&pair.source), name(&pair.target))
}

/// One row per pair, in the order given.
pub fn compare(reports: &[RunReport], pairs: &[TaskPair], tiers: &TierConfig, catalog: &TaskCatalog) -> Comparison {
    let find = |pair: &TaskPair, mode| reports.iter().find(|r| r.pair == *pair && r.mode == mode);
    let mut warnings = Vec::new();
    let rows = pairs
        .iter()
        .map(|pair| {
            let fixed = find(pair, RunMode::FixedBaseline);
            let ours = find(pair, RunMode::Ours);
            for (mode, r) in [(RunMode::FixedBaseline, fixed), (RunMode::Ours, ours)] {
                if r.is_none() {
                    warnings.push(format!("{}: no {mode} results; cells left blank", pair.key()));
                }
            }
            let psnr = compare_text(psnr_text(fixed), psnr_text(ours));
            let ssim = compare_text(fmt_opt(fixed.map(|r| r.mean_ssim), 3), fmt_opt(ours.map(|r| r.mean_ssim), 3));
            let vie = compare_text(
                fmt_opt(fixed.and_then(|r| r.mean_vie_0_10), 2),
                fmt_opt(ours.and_then(|r| r.mean_vie_0_10), 2),
            );
            let derived_tier = (fixed.is_some() && ours.is_some()).then(|| {
                let wins = [&psnr, &ssim, &vie].iter().filter(|c| c.better == Better::Ours).count();
                if wins >= 2 {
                    Tier::Top
                } else {
                    Tier::Second
                }
            });
            let configured_tier = tiers.tiers.get(&pair.key()).copied();
            if let (Some(c), Some(d)) = (configured_tier, derived_tier) {
                if c != d {
                    warnings.push(format!(
                        "{}: configured tier {} but metrics give {}",
                        pair.key(),
                        c.as_str(),
                        d.as_str()
                    ));
                }
            }
            ComparisonRow {
                pair: pair.clone(),
                label: pair_label(pair, catalog),
                psnr,
                ssim,
                vie,
                n_fixed: fixed.map(|r| r.n),
                n_ours: ours.map(|r| r.n),
                configured_tier,
                derived_tier,
            }
        })
        .collect();
    Comparison { rows, warnings }
}

const HEADERS: [&str; 11] = [
    "Task",
    "PSNR Fixed",
    "PSNR Ours",
    "SSIM Fixed",
    "SSIM Ours",
    "VIE Fixed",
    "VIE Ours",
    "n Fixed",
    "n Ours",
    "Tier",
    "Derived Tier",
];

fn tail_fields(row: &ComparisonRow) -> [String; 4] {
    let n = |v: Option<usize>| v.map(|v| v.to_string()).unwrap_or_default();
    let t = |v: Option<Tier>| v.map(|v| v.as_str().to_string()).unwrap_or_default();
    [n(row.n_fixed), n(row.n_ours), t(row.configured_tier), t(row.derived_tier)]
}

pub fn render_markdown(cmp: &Comparison) -> String {
    let bold = |text: &str, on: bool| if on { format!("**{text}**") } else { text.to_string() };
    let mut out = String::new();
    writeln!(out, "| {} |", HEADERS.join(" | ")).unwrap();
    writeln!(out, "|{}", "---|".repeat(HEADERS.len())).unwrap();
    for row in &cmp.rows {
        let mut cells = vec![row.label.clone()];
        for c in [&row.psnr, &row.ssim, &row.vie] {
            cells.push(bold(&c.fixed, c.better == Better::Fixed));
            cells.push(bold(&c.ours, c.better == Better::Ours));
        }
        cells.extend(tail_fields(row));
        writeln!(out, "| {} |", cells.join(" | ")).unwrap();
    }
    if !cmp.warnings.is_empty() {
        out.push('\n');
        for w in &cmp.warnings {
            writeln!(out, "> warning: {w}").unwrap();
        }
    }
    out
}

fn csv_field(s: &str) -> String {
    if s.contains([',', '"', '\n']) {
        format!("\"{}\"", s.replace('"', "\"\""))
    } else {
        s.to_string()
    }
}

/// Same values as the Markdown table; the better side is named in the
/// trailing `* Better` columns instead of bold.
pub fn render_csv(cmp: &Comparison) -> String {
    let mut out = String::new();
    let mut header: Vec<&str> = HEADERS.to_vec();
    header.extend(["PSNR Better", "SSIM Better", "VIE Better"]);
    writeln!(out, "{}", header.join(",")).unwrap();
    for row in &cmp.rows {
        let mut cells = vec![row.label.clone()];
        for c in [&row.psnr, &row.ssim, &row.vie] {
            cells.push(c.fixed.clone());
            cells.push(c.ours.clone());
        }
        cells.extend(tail_fields(row));
        cells.extend([&row.psnr, &row.ssim, &row.vie].map(|c| c.better.as_str().to_string()));
        writeln!(out, "{}", cells.iter().map(|c| csv_field(c)).collect::<Vec<_>>().join(",")).unwrap();
    }
    out
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ReportFormat {
    Markdown,
    Csv,
}

impl std::str::FromStr for ReportFormat {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "md" | "markdown" => Ok(ReportFormat::Markdown),
            "csv" => Ok(ReportFormat::Csv),
            other => Err(format!("unknown report format `{other}`")),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunSummary {
    pub reports: Vec<RunReport>,
    pub comparison: Comparison,
}

/// Aggregates every store in the run directory. Stores without a single
/// success are skipped with a warning.
pub fn summarize_run(paths: &RunPaths, catalog: &TaskCatalog, tiers: &TierConfig) -> Result<RunSummary, ReportError> {
    let found = discover(paths, catalog)?;
    let mut reports = Vec::new();
    let mut skipped = Vec::new();
    for (pair, mode) in &found {
        match aggregate_run(paths, pair, *mode) {
            Ok(r) => reports.push(r),
            Err(ReportError::NoSuccess { pair, mode }) => {
                skipped.push(format!("{pair}: no successful {mode} samples"));
            }
            Err(e) => return Err(e),
        }
    }
    let pairs = order_pairs(found.into_iter().map(|(p, _)| p));
    let mut comparison = compare(&reports, &pairs, tiers, catalog);
    comparison.warnings.splice(0..0, skipped);
    Ok(RunSummary { reports, comparison })
}

/// Writes `report.md`, `report.csv` and `reports.json` into the run
/// directory and returns the requested rendering.
pub fn write_report(
    paths: &RunPaths,
    catalog: &TaskCatalog,
    tiers: &TierConfig,
    format: ReportFormat,
) -> Result<String, ReportError> {
    let summary = summarize_run(paths, catalog, tiers)?;
    let md = render_markdown(&summary.comparison);
    let csv = render_csv(&summary.comparison);
    let json = serde_json::to_vec_pretty(&summary.reports).expect("reports serialize");
    for (name, bytes) in [("report.md", md.as_bytes()), ("report.csv", csv.as_bytes()), ("reports.json", &json)] {
        let path = paths.root.join(name);
        crate::util::write_atomic(&path, bytes).map_err(|source| ReportError::Io {
            path: path.display().to_string(),
            source,
        })?;
    }
    Ok(match format {
        ReportFormat::Markdown => md,
        ReportFormat::Csv => csv,
    })
}

/// Reads a tier file, or the published grouping when `path` is `None`.
pub fn load_tiers(path: Option<&Path>) -> Result<TierConfig, ReportError> {
    match path {
        None => Ok(TierConfig::default()),
        Some(p) => {
            let text = std::fs::read_to_string(p).map_err(|source| ReportError::Io {
                path: p.display().to_string(),
                source,
            })?;
            TierConfig::from_toml(&text)
        }
    }
}
