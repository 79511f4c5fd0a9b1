//! VIEScore aggregation.
//!
//! An evaluator model answers a rubric with a rationale followed by a trailing
//! JSON block of sub-scores on a 0..10 scale. Semantic consistency (SC) and
//! perceptual quality (PQ) each take the minimum of their sub-scores, and the
//! overall score is the geometric mean of the two after normalizing to [0, 1].

use std::sync::Arc;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::{load_preprocessed, CorpusError, SampleTriple};
use crate::gateway::{EvalPhase, EvalRequest, Gateway, GatewayError};
use crate::image::ImageBuffer;
use crate::prompt::{PromptEngine, SlotRole};

pub const SCORE_MAX: f64 = 10.0;

#[derive(Debug, Error, PartialEq)]
pub enum VieError {
    #[error("no trailing JSON score block in evaluator output")]
    NoJsonBlock { raw: String },
    #[error("score list `{list}` is missing or empty")]
    EmptyScores { list: &'static str, raw: String },
    #[error("non-numeric entry in `{list}`: {entry}")]
    NonNumeric {
        list: &'static str,
        entry: String,
        raw: String,
    },
}

impl VieError {
    /// The evaluator text that failed to parse, kept for audit.
    pub fn raw(&self) -> &str {
        match self {
            VieError::NoJsonBlock { raw }
            | VieError::EmptyScores { raw, .. }
            | VieError::NonNumeric { raw, .. } => raw,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LabeledScore {
    pub label: String,
    pub value: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SubScores {
    pub sc_items: Vec<LabeledScore>,
    pub pq_items: Vec<LabeledScore>,
    pub rationale: String,
    /// Set when any raw value fell outside [0, 10] and was clamped.
    #[serde(default)]
    pub clamped: bool,
}

impl SubScores {
    /// Unlabeled convenience constructor; values are clamped like parsed ones.
    pub fn from_values(sc: &[f64], pq: &[f64], rationale: impl Into<String>) -> Self {
        let mut clamped = false;
        let mut label = |prefix: &str, vals: &[f64]| {
            vals.iter()
                .enumerate()
                .map(|(i, &v)| {
                    let c = v.clamp(0.0, SCORE_MAX);
                    clamped |= c != v;
                    LabeledScore {
                        label: format!("{prefix}{}", i + 1),
                        value: c,
                    }
                })
                .collect::<Vec<_>>()
        };
        let sc_items = label("sc", sc);
        let pq_items = label("pq", pq);
        SubScores {
            sc_items,
            pq_items,
            rationale: rationale.into(),
            clamped,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VieResult {
    pub sc: f64,
    pub pq: f64,
    pub overall: f64,
    pub overall_0_10: f64,
    pub rationale: String,
}

/// Weakest-link aggregation. Empty lists count as zero.
pub fn aggregate(sub: &SubScores) -> VieResult {
    let min = |items: &[LabeledScore]| {
        items
            .iter()
            .map(|s| s.value)
            .fold(None, |m: Option<f64>, v| Some(m.map_or(v, |m| m.min(v))))
            .unwrap_or(0.0)
    };
    let sc = min(&sub.sc_items) / SCORE_MAX;
    let pq = min(&sub.pq_items) / SCORE_MAX;
    let overall = (sc * pq).sqrt();
    VieResult {
        sc,
        pq,
        overall,
        overall_0_10: SCORE_MAX * overall,
        rationale: sub.rationale.clone(),
    }
}

/// Possibly partial score block as the evaluator emitted it.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct ScoreBlock {
    pub sc: Option<Vec<LabeledScore>>,
    pub pq: Option<Vec<LabeledScore>>,
    pub rationale: Option<String>,
    pub prose: String,
    pub clamped: bool,
}

/// Finds the last `{...}` object that runs to the end of the text (ignoring
/// whitespace and a closing code fence) and parses it.
pub fn parse_score_block(raw: &str) -> Result<ScoreBlock, VieError> {
    let tail = trim_fence(raw);
    let (start, value) = tail
        .match_indices('{')
        .map(|(i, _)| i)
        .find_map(|i| {
            let candidate = &tail[i..];
            serde_json::from_str::<serde_json::Value>(candidate)
                .ok()
                .filter(|v| v.is_object())
                .map(|v| (i, v))
        })
        .ok_or_else(|| VieError::NoJsonBlock { raw: raw.to_string() })?;
    let obj = value.as_object().expect("filtered to objects");
    let mut clamped = false;
    let mut list = |key: &'static str| -> Result<Option<Vec<LabeledScore>>, VieError> {
        let Some(v) = obj.get(key) else { return Ok(None) };
        let arr = v.as_array().ok_or_else(|| VieError::NonNumeric {
            list: key,
            entry: v.to_string(),
            raw: raw.to_string(),
        })?;
        let mut out = Vec::with_capacity(arr.len());
        for (i, entry) in arr.iter().enumerate() {
            let (label, value) = match entry {
                serde_json::Value::Number(n) => (format!("{key}{}", i + 1), n.as_f64()),
                serde_json::Value::Object(o) => (
                    o.get("label")
                        .and_then(|l| l.as_str())
                        .map(str::to_string)
                        .unwrap_or_else(|| format!("{key}{}", i + 1)),
                    o.get("score").and_then(|s| s.as_f64()),
                ),
                _ => (String::new(), None),
            };
            let value = value.ok_or_else(|| VieError::NonNumeric {
                list: key,
                entry: entry.to_string(),
                raw: raw.to_string(),
            })?;
            let c = value.clamp(0.0, SCORE_MAX);
            clamped |= c != value;
            out.push(LabeledScore { label, value: c });
        }
        Ok(Some(out))
    };
    let sc = list("sc")?;
    let pq = list("pq")?;
    let rationale = obj.get("rationale").and_then(|r| r.as_str()).map(str::to_string);
    Ok(ScoreBlock {
        sc,
        pq,
        rationale,
        prose: strip_opening_fence(tail[..start].trim()).to_string(),
        clamped,
    })
}

fn strip_opening_fence(prose: &str) -> &str {
    let p = prose.strip_suffix("```json").or_else(|| prose.strip_suffix("```"));
    p.unwrap_or(prose).trim_end()
}

fn trim_fence(raw: &str) -> &str {
    let t = raw.trim_end();
    let t = t.strip_suffix("```").unwrap_or(t).trim_end();
    t
}

/// Parses a full evaluator answer carrying both SC and PQ lists.
pub fn parse_evaluator_output(raw: &str) -> Result<SubScores, VieError> {
    let block = parse_score_block(raw)?;
    let need = |list: Option<Vec<LabeledScore>>, name: &'static str| {
        list.filter(|l| !l.is_empty()).ok_or_else(|| VieError::EmptyScores {
            list: name,
            raw: raw.to_string(),
        })
    };
    let sc_items = need(block.sc, "sc")?;
    let pq_items = need(block.pq, "pq")?;
    Ok(SubScores {
        sc_items,
        pq_items,
        rationale: block.rationale.unwrap_or(block.prose),
        clamped: block.clamped,
    })
}

/// Which evaluator request failed.
#[derive(Debug, Error)]
pub enum EvaluateError {
    #[error("{phase:?} request failed: {source}")]
    Gateway {
        phase: EvalPhase,
        #[source]
        source: GatewayError,
    },
    #[error("{phase:?} answer unparseable: {source}")]
    Parse {
        phase: EvalPhase,
        #[source]
        source: VieError,
    },
    #[error("loading condition image: {0}")]
    Condition(#[from] CorpusError),
}

impl EvaluateError {
    pub fn phase(&self) -> Option<EvalPhase> {
        match self {
            EvaluateError::Gateway { phase, .. } | EvaluateError::Parse { phase, .. } => Some(*phase),
            EvaluateError::Condition(_) => None,
        }
    }
}

fn phase_items(
    gateway: &Gateway,
    req: &EvalRequest,
) -> Result<(Vec<LabeledScore>, String, bool), EvaluateError> {
    let phase = req.phase;
    let answer = gateway
        .evaluate(req)
        .map_err(|source| EvaluateError::Gateway { phase, source })?;
    let raw = answer.text().unwrap_or_default();
    let block = parse_score_block(raw).map_err(|source| EvaluateError::Parse { phase, source })?;
    let (items, list) = match phase {
        EvalPhase::Sc => (block.sc, "sc"),
        EvalPhase::Pq => (block.pq, "pq"),
    };
    let items = items.filter(|l| !l.is_empty()).ok_or_else(|| EvaluateError::Parse {
        phase,
        source: VieError::EmptyScores {
            list,
            raw: raw.to_string(),
        },
    })?;
    Ok((items, block.rationale.unwrap_or(block.prose), block.clamped))
}

/// Scores `generated` with two concurrent evaluator requests: semantic
/// consistency sees the conditions and the instruction, perceptual quality
/// sees the generated image alone.
pub fn evaluate_with_conditions(
    gateway: &Gateway,
    engine: &PromptEngine,
    generated: Arc<ImageBuffer>,
    conditions: Vec<(SlotRole, Arc<ImageBuffer>)>,
    instruction: &str,
) -> Result<VieResult, EvaluateError> {
    let sc_req = EvalRequest::semantic(engine.sc_rubric(instruction), generated.clone(), conditions);
    let pq_req = EvalRequest::perceptual(engine.pq_rubric(), generated);
    let (sc, pq) = std::thread::scope(|s| {
        let sc = s.spawn(|| phase_items(gateway, &sc_req));
        let pq = phase_items(gateway, &pq_req);
        (sc.join().expect("evaluator thread panicked"), pq)
    });
    let (sc_items, sc_why, sc_clamped) = sc?;
    let (pq_items, pq_why, pq_clamped) = pq?;
    if sc_clamped || pq_clamped {
        log::warn!("evaluator scores outside [0, 10] were clamped");
    }
    Ok(aggregate(&SubScores {
        sc_items,
        pq_items,
        rationale: format!("SC: {sc_why}\nPQ: {pq_why}"),
        clamped: sc_clamped || pq_clamped,
    }))
}

/// Loads the triple's demonstration pair and query input as conditions and
/// evaluates `generated`.
pub fn evaluate_output(
    gateway: &Gateway,
    engine: &PromptEngine,
    generated: Arc<ImageBuffer>,
    triple: &SampleTriple,
    instruction: &str,
) -> Result<VieResult, EvaluateError> {
    let mut conditions = Vec::with_capacity(3);
    for (role, r) in [
        (SlotRole::DemoInput, &triple.demo_input),
        (SlotRole::DemoLabel, &triple.demo_label),
        (SlotRole::QueryInput, &triple.query_input),
    ] {
        conditions.push((role, Arc::new(load_preprocessed(&r.path, role.resolution())?)));
    }
    evaluate_with_conditions(gateway, engine, generated, conditions, instruction)
}
