//! Two-stage inference with best-of-k selection.
//!
//! Per sample: the student writes an implicit prompt from the demonstration
//! pair and the query, the prompt is linted and dropped into the deployment
//! template, the generator is sampled `k` times, every candidate is scored
//! against the query label, the highest PSNR wins (lowest attempt on ties)
//! and the winner gets a VIEScore. The baseline mode swaps the student prompt
//! for the fixed instruction.
//!
//! Outcomes are appended to `outcomes/<src>__<tgt>__<mode>.jsonl` under the
//! run directory in sample order; a rerun skips sample ids already present.
//! Wall-clock timings go to a separate `timings/` file so the outcome store
//! stays byte-reproducible.

use std::collections::BTreeSet;
use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::sync::Arc;
use std::time::Instant;

use parking_lot::Mutex;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::catalog::{TaskCatalog, TaskPair};
use crate::corpus::{self, CorpusError, DatasetDescriptor, SampleTriple, SamplingSplits};
use crate::gateway::{BackendRole, Gateway, GatewayError};
use crate::image::ImageBuffer;
use crate::metrics::{score_candidate_with, ChannelPolicy, Psnr};
use crate::prompt::{Lint, LexemeMatch, PromptBundle, PromptEngine, PromptError, PromptGenerator, PromptKind, PromptRecord, SlotRole};
use crate::util;
use crate::vie::{evaluate_with_conditions, VieResult};

pub const DEFAULT_K: u32 = 10;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RunMode {
    FixedBaseline,
    Ours,
}

impl RunMode {
    pub const ALL: [RunMode; 2] = [RunMode::FixedBaseline, RunMode::Ours];

    pub fn as_str(self) -> &'static str {
        match self {
            RunMode::FixedBaseline => "fixed",
            RunMode::Ours => "ours",
        }
    }

    pub fn prompt_kind(self) -> PromptKind {
        match self {
            RunMode::FixedBaseline => PromptKind::FixedBaseline,
            RunMode::Ours => PromptKind::Deployment,
        }
    }
}

impl fmt::Display for RunMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for RunMode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "fixed" | "fixed_baseline" => Ok(RunMode::FixedBaseline),
            "ours" => Ok(RunMode::Ours),
            other => Err(format!("unknown run mode `{other}`")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunConfig {
    pub k: u32,
    pub mode: RunMode,
    /// Samples processed concurrently.
    pub workers: usize,
    /// Score every successful candidate with VIE, not just the selected one.
    pub vie_all: bool,
    /// Ask the student for a fresh prompt on every attempt.
    pub resample_prompt: bool,
    /// Let leaky prompts through to the generator.
    pub allow_leaky: bool,
    /// Cap on generator calls for one `run_pair` invocation.
    pub generator_budget: Option<usize>,
    pub channel_policy: ChannelPolicy,
    #[serde(skip)]
    pub splits: SamplingSplits,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            k: DEFAULT_K,
            mode: RunMode::Ours,
            workers: 4,
            vie_all: false,
            resample_prompt: false,
            allow_leaky: false,
            generator_budget: None,
            channel_policy: ChannelPolicy::LuminanceOnly,
            splits: SamplingSplits::default(),
        }
    }
}

#[derive(Debug, Error)]
pub enum RunError {
    #[error(transparent)]
    Corpus(#[from] CorpusError),
    #[error("{path}: {source}")]
    Io { path: String, source: std::io::Error },
    #[error("outcome store {path} line {line}: {message}")]
    Store { path: String, line: usize, message: String },
    #[error("edited prompt names a task: {}", .0.iter().map(|m| m.lexeme.as_str()).collect::<Vec<_>>().join(", "))]
    LeakyEdit(Vec<LexemeMatch>),
    #[error(transparent)]
    Prompt(#[from] PromptError),
    #[error("k must be at least 1")]
    ZeroK,
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> RunError + '_ {
    move |source| RunError::Io {
        path: path.display().to_string(),
        source,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CandidateStatus {
    Ok,
    Refused,
    Failed,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CandidateResult {
    pub attempt: u32,
    pub status: CandidateStatus,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
    /// PNG path relative to the run directory.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub image: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub image_digest: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub psnr: Option<Psnr>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub ssim: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub resolution: Option<(u32, u32)>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub vie: Option<VieResult>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub vie_error: Option<String>,
    /// Id of the implicit prompt this attempt used; absent for the baseline.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub prompt_used: Option<String>,
}

impl CandidateResult {
    fn failed(attempt: u32, status: CandidateStatus, error: String, prompt_used: Option<String>) -> Self {
        CandidateResult {
            attempt,
            status,
            error: Some(error),
            image: None,
            image_digest: None,
            psnr: None,
            ssim: None,
            resolution: None,
            vie: None,
            vie_error: None,
            prompt_used,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OutcomeStatus {
    Ok,
    Failed,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ReviewDecision {
    Approved,
    Edited,
    /// Every offered edit leaked a task name; the original was kept.
    RejectedLeaky,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReviewAudit {
    pub sample_id: String,
    pub decision: ReviewDecision,
    pub original_id: String,
    pub original_text: String,
    pub final_id: String,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub rejected_lexemes: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SampleOutcome {
    pub sample_id: String,
    pub pair: TaskPair,
    pub mode: RunMode,
    pub prompt_kind: PromptKind,
    pub status: OutcomeStatus,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub failure: Option<String>,
    pub k: u32,
    pub temperature: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub selected: Option<u32>,
    pub candidates: Vec<CandidateResult>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub implicit_prompt: Option<PromptRecord>,
    /// Per-attempt prompts beyond the first, with prompt resampling.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub extra_prompts: Vec<PromptRecord>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub review: Option<ReviewAudit>,
    #[serde(default)]
    pub replacement: bool,
}

impl SampleOutcome {
    pub fn selected_candidate(&self) -> Option<&CandidateResult> {
        self.selected.and_then(|s| self.candidates.iter().find(|c| c.attempt == s))
    }

    /// True if any prompt the generator saw failed the lint.
    pub fn has_leak(&self) -> bool {
        self.implicit_prompt
            .iter()
            .chain(&self.extra_prompts)
            .any(|p| !p.lint.is_clean())
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct SampleTimings {
    pub sample_id: String,
    pub load_ms: u64,
    pub prompt_ms: u64,
    pub generate_ms: u64,
    pub vie_ms: u64,
}

/// Highest PSNR among successful candidates; ties go to the lowest attempt.
pub fn select_best(candidates: &[CandidateResult]) -> Option<u32> {
    let mut best: Option<(&CandidateResult, Psnr)> = None;
    for c in candidates {
        let (CandidateStatus::Ok, Some(p)) = (c.status, c.psnr) else { continue };
        let better = match best {
            None => true,
            Some((b, bp)) => p > bp || (p == bp && c.attempt < b.attempt),
        };
        if better {
            best = Some((c, p));
        }
    }
    best.map(|(c, _)| c.attempt)
}

/// Interactive review between prompt generation and image generation.
pub trait ReviewHook: Send + Sync {
    /// `None` approves; `Some(text)` proposes an edit. `rejected` explains why
    /// the previous proposal was refused.
    fn review(&self, triple: &SampleTriple, record: &PromptRecord, rejected: Option<&str>) -> Option<String>;
}

/// Applies a reviewer's decision to a prompt. An edit is re-linted and
/// refused if it leaks, unless `allow_leaky`.
pub fn review_prompt(
    record: &PromptRecord,
    edited: Option<&str>,
    allow_leaky: bool,
    catalog: &TaskCatalog,
) -> Result<(PromptRecord, ReviewAudit), RunError> {
    let mut audit = ReviewAudit {
        sample_id: record.source_sample.clone(),
        decision: ReviewDecision::Approved,
        original_id: record.id.clone(),
        original_text: record.text().to_string(),
        final_id: record.id.clone(),
        rejected_lexemes: Vec::new(),
    };
    let Some(text) = edited.filter(|t| *t != record.text()) else {
        return Ok((record.clone(), audit));
    };
    let mut updated = record.clone();
    updated.generator = PromptGenerator::Human;
    updated.set_text(text, catalog)?;
    if let Lint::Leaky(matches) = &updated.lint {
        if !allow_leaky {
            return Err(RunError::LeakyEdit(matches.clone()));
        }
    }
    audit.decision = ReviewDecision::Edited;
    audit.final_id = updated.id.clone();
    Ok((updated, audit))
}

/// Layout of one run directory.
#[derive(Debug, Clone)]
pub struct RunPaths {
    pub root: PathBuf,
}

impl RunPaths {
    pub fn new(runs_root: &Path, run_id: &str) -> Self {
        RunPaths {
            root: runs_root.join(run_id),
        }
    }

    pub fn outcomes_dir(&self) -> PathBuf {
        self.root.join("outcomes")
    }

    pub fn outcomes(&self, pair: &TaskPair, mode: RunMode) -> PathBuf {
        self.outcomes_dir().join(format!("{}__{mode}.jsonl", pair.file_stem()))
    }

    pub fn truncation_marker(&self, pair: &TaskPair, mode: RunMode) -> PathBuf {
        self.outcomes_dir().join(format!("{}__{mode}.truncated", pair.file_stem()))
    }

    pub fn timings(&self, pair: &TaskPair, mode: RunMode) -> PathBuf {
        self.root.join("timings").join(format!("{}__{mode}.jsonl", pair.file_stem()))
    }

    pub fn reviews(&self) -> PathBuf {
        self.root.join("audit").join("reviews.jsonl")
    }

    /// Relative to the run root, `/`-separated.
    pub fn image_rel(mode: RunMode, sample_id: &str, attempt: u32) -> String {
        format!("images/{mode}/{sample_id}/{attempt}.png")
    }
}

/// Reads an outcome store. A torn final line (from an interrupted write) is
/// dropped; corruption anywhere else is an error.
pub fn read_outcomes(path: &Path) -> Result<Vec<SampleOutcome>, RunError> {
    if !path.exists() {
        return Ok(Vec::new());
    }
    let lines = util::read_lines(path).map_err(io_err(path))?;
    let last = lines.last().map(|(n, _)| *n);
    let mut out = Vec::with_capacity(lines.len());
    for (line, text) in lines {
        match serde_json::from_str(&text) {
            Ok(o) => out.push(o),
            Err(e) if Some(line) == last => {
                log::warn!("{}: dropping torn final line {line}: {e}", path.display());
            }
            Err(e) => {
                return Err(RunError::Store {
                    path: path.display().to_string(),
                    line,
                    message: e.to_string(),
                })
            }
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq)]
pub struct PairRun {
    /// Every outcome in the store after this invocation, resumed ones included.
    pub outcomes: Vec<SampleOutcome>,
    pub resumed: usize,
    pub executed: usize,
    pub truncated: bool,
}

struct SampleImages {
    demo_input: Arc<ImageBuffer>,
    demo_label: Arc<ImageBuffer>,
    query_input: Arc<ImageBuffer>,
    query_label: ImageBuffer,
}

impl SampleImages {
    fn load(triple: &SampleTriple) -> Result<Self, String> {
        let load = |path: &Path, role: SlotRole| {
            corpus::load_preprocessed(path, role.resolution())
                .map(Arc::new)
                .map_err(|e| e.to_string())
        };
        let label = triple
            .query_label
            .as_ref()
            .ok_or_else(|| "triple has no query label; evaluation needs ground truth".to_string())?;
        Ok(SampleImages {
            demo_input: load(&triple.demo_input.path, SlotRole::DemoInput)?,
            demo_label: load(&triple.demo_label.path, SlotRole::DemoLabel)?,
            query_input: load(&triple.query_input.path, SlotRole::QueryInput)?,
            query_label: ImageBuffer::open(&label.path).map_err(|e| e.to_string())?,
        })
    }

    fn get(&self, role: SlotRole) -> Result<ImageBuffer, String> {
        match role {
            SlotRole::DemoInput => Ok((*self.demo_input).clone()),
            SlotRole::DemoLabel => Ok((*self.demo_label).clone()),
            SlotRole::QueryInput => Ok((*self.query_input).clone()),
            other => Err(format!("{other:?} images are never sent to this stage")),
        }
    }

    fn conditions(&self) -> Vec<(SlotRole, Arc<ImageBuffer>)> {
        vec![
            (SlotRole::DemoInput, self.demo_input.clone()),
            (SlotRole::DemoLabel, self.demo_label.clone()),
            (SlotRole::QueryInput, self.query_input.clone()),
        ]
    }
}

pub struct Runner<'a> {
    gateway: &'a Gateway,
    engine: &'a PromptEngine,
    catalog: &'a TaskCatalog,
    config: RunConfig,
    paths: RunPaths,
    review: Option<Arc<dyn ReviewHook>>,
    review_lock: Mutex<()>,
}

const REVIEW_ROUNDS: usize = 3;

impl<'a> Runner<'a> {
    pub fn new(
        gateway: &'a Gateway,
        engine: &'a PromptEngine,
        catalog: &'a TaskCatalog,
        config: RunConfig,
        paths: RunPaths,
    ) -> Self {
        Runner {
            gateway,
            engine,
            catalog,
            config,
            paths,
            review: None,
            review_lock: Mutex::new(()),
        }
    }

    /// Pauses each sample after prompt generation for `hook`.
    pub fn with_review(mut self, hook: Arc<dyn ReviewHook>) -> Self {
        self.review = Some(hook);
        self
    }

    pub fn config(&self) -> &RunConfig {
        &self.config
    }

    pub fn paths(&self) -> &RunPaths {
        &self.paths
    }

    fn student_prompt(&self, triple: &SampleTriple, images: &SampleImages, attempt: u32) -> Result<PromptRecord, String> {
        let bundle = self
            .engine
            .build_student_prompt(&triple.without_query_label())
            .and_then(|b| b.bind(|_, role| images.get(role)))
            .map_err(|e| format!("student prompt: {e}"))?;
        let resp = self
            .gateway
            .complete_text(BackendRole::Student, &bundle, attempt)
            .map_err(|e| format!("student: {e}"))?;
        let text = resp.text().unwrap_or_default().trim().to_string();
        PromptRecord::new(text, triple.pair.clone(), &triple.sample_id, PromptGenerator::Student, self.catalog)
            .map_err(|e| format!("student: {e}"))
    }

    fn reviewed(&self, triple: &SampleTriple, record: PromptRecord) -> (PromptRecord, Option<ReviewAudit>) {
        let Some(hook) = &self.review else { return (record, None) };
        let _serial = self.review_lock.lock();
        let mut rejected: Option<String> = None;
        let mut lexemes = Vec::new();
        for _ in 0..REVIEW_ROUNDS {
            let edit = hook.review(triple, &record, rejected.as_deref());
            match review_prompt(&record, edit.as_deref(), self.config.allow_leaky, self.catalog) {
                Ok((updated, mut audit)) => {
                    audit.rejected_lexemes = lexemes;
                    return (updated, Some(audit));
                }
                Err(e) => {
                    if let RunError::LeakyEdit(ms) = &e {
                        lexemes.extend(ms.iter().map(|m| m.lexeme.clone()));
                    }
                    rejected = Some(e.to_string());
                }
            }
        }
        let audit = ReviewAudit {
            sample_id: triple.sample_id.clone(),
            decision: ReviewDecision::RejectedLeaky,
            original_id: record.id.clone(),
            original_text: record.text().to_string(),
            final_id: record.id.clone(),
            rejected_lexemes: lexemes,
        };
        (record, Some(audit))
    }

    fn failed_outcome(&self, triple: &SampleTriple, failure: String) -> SampleOutcome {
        SampleOutcome {
            sample_id: triple.sample_id.clone(),
            pair: triple.pair.clone(),
            mode: self.config.mode,
            prompt_kind: self.config.mode.prompt_kind(),
            status: OutcomeStatus::Failed,
            failure: Some(failure),
            k: self.config.k,
            temperature: self.gateway.backend(BackendRole::Generator).temperature,
            selected: None,
            candidates: Vec::new(),
            implicit_prompt: None,
            extra_prompts: Vec::new(),
            review: None,
            replacement: triple.replacement,
        }
    }

    fn attempt(
        &self,
        triple: &SampleTriple,
        images: &SampleImages,
        request: &crate::gateway::wire::WireRequest,
        attempt: u32,
        prompt_used: Option<String>,
    ) -> (CandidateResult, Option<Arc<ImageBuffer>>) {
        let resp = match self.gateway.generate_from(request, attempt) {
            Ok(r) => r,
            Err(e @ GatewayError::Refusal { .. }) => {
                return (CandidateResult::failed(attempt, CandidateStatus::Refused, e.to_string(), prompt_used), None)
            }
            Err(e) => return (CandidateResult::failed(attempt, CandidateStatus::Failed, e.to_string(), prompt_used), None),
        };
        let img = resp.image().expect("generator responses carry an image").clone();
        let fail = |msg: String| CandidateResult::failed(attempt, CandidateStatus::Failed, msg, prompt_used.clone());
        let (w, h) = img.dimensions();
        let truth = match images.query_label.fit_cover(w, h, (0.5, 0.5)) {
            Ok(t) => t,
            Err(e) => return (fail(format!("fitting ground truth: {e}")), None),
        };
        let metrics = match score_candidate_with(&truth, &img, self.config.channel_policy) {
            Ok(m) => m,
            Err(e) => return (fail(format!("metrics: {e}")), None),
        };
        let rel = RunPaths::image_rel(self.config.mode, &triple.sample_id, attempt);
        if let Err(e) = util::write_atomic(&self.paths.root.join(&rel), &img.encode_png()) {
            return (fail(format!("saving {rel}: {e}")), None);
        }
        let result = CandidateResult {
            attempt,
            status: CandidateStatus::Ok,
            error: None,
            image: Some(rel),
            image_digest: Some(img.digest()),
            psnr: Some(metrics.psnr),
            ssim: Some(metrics.ssim),
            resolution: Some(metrics.resolution),
            vie: None,
            vie_error: None,
            prompt_used,
        };
        (result, Some(Arc::new(img)))
    }

    /// Runs one triple end to end. Problems inside the sample are recorded
    /// in the outcome rather than returned.
    pub fn run_sample(&self, triple: &SampleTriple) -> (SampleOutcome, SampleTimings) {
        let mut timings = SampleTimings {
            sample_id: triple.sample_id.clone(),
            ..Default::default()
        };
        let t = Instant::now();
        let images = match SampleImages::load(triple) {
            Ok(i) => i,
            Err(e) => return (self.failed_outcome(triple, format!("loading images: {e}")), timings),
        };
        timings.load_ms = t.elapsed().as_millis() as u64;

        let t = Instant::now();
        let k = self.config.k;
        let mut prompts: Vec<PromptRecord> = Vec::new();
        let mut review = None;
        let bundles: Vec<PromptBundle> = match self.config.mode {
            RunMode::FixedBaseline => match self.engine.build_fixed_prompt(triple) {
                Ok(b) => vec![b],
                Err(e) => return (self.failed_outcome(triple, format!("fixed prompt: {e}")), timings),
            },
            RunMode::Ours => {
                let n_prompts = if self.config.resample_prompt { k } else { 1 };
                let mut bundles = Vec::new();
                for a in 0..n_prompts {
                    let record = match self.student_prompt(triple, &images, a) {
                        Ok(r) => r,
                        Err(e) => {
                            let mut out = self.failed_outcome(triple, e);
                            out.implicit_prompt = prompts.first().cloned();
                            return (out, timings);
                        }
                    };
                    let (record, audit) = self.reviewed(triple, record);
                    if review.is_none() {
                        review = audit;
                    }
                    match self.engine.build_deployment_prompt(triple, &record, self.config.allow_leaky) {
                        Ok(b) => bundles.push(b),
                        Err(e) => {
                            let mut out = self.failed_outcome(triple, format!("deployment blocked: {e}"));
                            out.implicit_prompt = Some(record);
                            out.review = review;
                            return (out, timings);
                        }
                    }
                    prompts.push(record);
                }
                bundles
            }
        };
        timings.prompt_ms = t.elapsed().as_millis() as u64;

        let t = Instant::now();
        let requests: Result<Vec<_>, String> = bundles
            .iter()
            .map(|b| {
                let bound = b.bind(|_, role| images.get(role)).map_err(|e| e.to_string())?;
                self.gateway
                    .bundle_request(BackendRole::Generator, &bound, 0)
                    .map_err(|e| e.to_string())
            })
            .collect();
        let requests = match requests {
            Ok(r) => r,
            Err(e) => return (self.failed_outcome(triple, format!("binding images: {e}")), timings),
        };
        let generated: Vec<(CandidateResult, Option<Arc<ImageBuffer>>)> = (0..k)
            .into_par_iter()
            .map(|a| {
                let i = if requests.len() > 1 { a as usize } else { 0 };
                let used = prompts.get(i).map(|p| p.id.clone());
                self.attempt(triple, &images, &requests[i], a, used)
            })
            .collect();
        timings.generate_ms = t.elapsed().as_millis() as u64;
        let (mut candidates, pixels): (Vec<_>, Vec<_>) = generated.into_iter().unzip();
        let selected = select_best(&candidates);

        let t = Instant::now();
        if let Some(sel) = selected {
            let targets: Vec<usize> = if self.config.vie_all {
                (0..candidates.len()).filter(|&i| pixels[i].is_some()).collect()
            } else {
                vec![sel as usize]
            };
            let scored: Vec<(usize, Result<VieResult, String>)> = targets
                .par_iter()
                .map(|&i| {
                    let img = pixels[i].clone().expect("targets have pixels");
                    let i_prompt = if prompts.len() > 1 { i } else { 0 };
                    let instruction = match prompts.get(i_prompt) {
                        Some(p) => p.text().to_string(),
                        None => bundles[0].user_text(),
                    };
                    let r = evaluate_with_conditions(self.gateway, self.engine, img, images.conditions(), &instruction)
                        .map_err(|e| e.to_string());
                    (i, r)
                })
                .collect();
            for (i, r) in scored {
                match r {
                    Ok(v) => candidates[i].vie = Some(v),
                    Err(e) => candidates[i].vie_error = Some(e),
                }
            }
        }
        timings.vie_ms = t.elapsed().as_millis() as u64;

        let (status, failure) = match selected {
            Some(_) => (OutcomeStatus::Ok, None),
            None => (OutcomeStatus::Failed, Some(format!("all {k} attempts failed"))),
        };
        let implicit_prompt = match (selected, prompts.len()) {
            (_, 0) => None,
            (Some(s), n) if n > 1 => Some(prompts[s as usize].clone()),
            _ => Some(prompts[0].clone()),
        };
        let extra_prompts = if prompts.len() > 1 {
            prompts
                .iter()
                .filter(|p| Some(&p.id) != implicit_prompt.as_ref().map(|i| &i.id))
                .cloned()
                .collect()
        } else {
            Vec::new()
        };
        let outcome = SampleOutcome {
            sample_id: triple.sample_id.clone(),
            pair: triple.pair.clone(),
            mode: self.config.mode,
            prompt_kind: self.config.mode.prompt_kind(),
            status,
            failure,
            k,
            temperature: self.gateway.backend(BackendRole::Generator).temperature,
            selected,
            candidates,
            implicit_prompt,
            extra_prompts,
            review,
            replacement: triple.replacement,
        };
        (outcome, timings)
    }

    /// Samples `n` triples for `pair` and runs the ones not yet in the store.
    pub fn run_pair(
        &self,
        descriptor: &DatasetDescriptor,
        pair: &TaskPair,
        n: usize,
        seed: u64,
    ) -> Result<PairRun, RunError> {
        if self.config.k == 0 {
            return Err(RunError::ZeroK);
        }
        let triples = corpus::sample_triples(descriptor, pair, n, seed, self.config.splits)?;
        let mode = self.config.mode;
        let store = self.paths.outcomes(pair, mode);
        let existing = read_outcomes(&store)?;
        // Rewrite the store so a torn trailing line cannot corrupt appends.
        util::write_jsonl(&store, existing.iter()).map_err(io_err(&store))?;
        let done: BTreeSet<String> = existing.iter().map(|o| o.sample_id.clone()).collect();
        let todo: Vec<&SampleTriple> = triples.iter().filter(|t| !done.contains(&t.sample_id)).collect();
        let resumed = triples.len() - todo.len();

        let marker = self.paths.truncation_marker(pair, mode);
        let k = self.config.k as usize;
        let allowed = match self.config.generator_budget {
            Some(budget) => (budget / k).min(todo.len()),
            None => todo.len(),
        };
        let truncated = allowed < todo.len();
        if truncated {
            let note = serde_json::json!({
                "reason": "generator budget exhausted",
                "budget": self.config.generator_budget,
                "k": k,
                "samples_requested": n,
                "samples_skipped": todo.len() - allowed,
            });
            util::write_atomic(&marker, note.to_string().as_bytes()).map_err(io_err(&marker))?;
            log::warn!("{}: generator budget allows {allowed} of {} samples", pair.key(), todo.len());
        } else if marker.exists() {
            std::fs::remove_file(&marker).map_err(io_err(&marker))?;
        }

        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(self.config.workers.max(1))
            .build()
            .map_err(|e| RunError::Io {
                path: "thread pool".into(),
                source: std::io::Error::other(e),
            })?;
        let timings_path = self.paths.timings(pair, mode);
        let mut outcomes = existing;
        for chunk in todo[..allowed].chunks(self.config.workers.max(1)) {
            let results: Vec<(SampleOutcome, SampleTimings)> =
                pool.install(|| chunk.par_iter().map(|t| self.run_sample(t)).collect());
            for (outcome, timing) in results {
                util::append_jsonl(&store, &outcome).map_err(io_err(&store))?;
                util::append_jsonl(&timings_path, &timing).map_err(io_err(&timings_path))?;
                if let Some(audit) = &outcome.review {
                    let p = self.paths.reviews();
                    util::append_jsonl(&p, audit).map_err(io_err(&p))?;
                }
                outcomes.push(outcome);
            }
        }
        Ok(PairRun {
            outcomes,
            resumed,
            executed: allowed,
            truncated,
        })
    }
}
