//! Teacher-to-student fine-tuning data in a conversational layout.
//!
//! Each instance shows the student the task-A demonstration pair and the
//! task-B query (never the task-B label) with the open-ended instruction, and
//! the teacher's description as the completion target. Images are referenced
//! by path. Training itself happens elsewhere.

use std::collections::{BTreeMap, HashMap};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::catalog::TaskCatalog;
use crate::corpus::SampleTriple;
use crate::prompt::{lint_implicitness, Lint, PromptEngine, PromptError, PromptRecord, SlotRole};
use crate::util;

pub const OBJECTIVE: &str = "causal-LM cross-entropy on assistant tokens";
pub const LEAKED_LABEL: &str = "query label leaked into student input";
const STUDENT_ROLES: [SlotRole; 3] = [SlotRole::DemoInput, SlotRole::DemoLabel, SlotRole::QueryInput];

#[derive(Debug, Error)]
pub enum DistillError {
    #[error("record {record} refers to sample {sample} which is not among the triples")]
    DanglingSample { record: String, sample: String },
    #[error("writing {path}: {source}")]
    Io { path: String, source: std::io::Error },
    #[error(transparent)]
    Prompt(#[from] PromptError),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UserTurn {
    pub text: String,
    pub images: Vec<PathBuf>,
    pub roles: Vec<SlotRole>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InstanceMeta {
    pub pair: String,
    pub sample_id: String,
    pub record_id: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainingInstance {
    pub system: String,
    pub user: UserTurn,
    pub assistant: String,
    pub meta: InstanceMeta,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct PairCounts {
    pub written: usize,
    pub excluded_leaky: usize,
    pub excluded_over_cap: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ExportManifest {
    pub objective: String,
    pub instances_path: PathBuf,
    pub cap: usize,
    pub total: usize,
    pub per_pair: BTreeMap<String, PairCounts>,
}

/// `<out>.manifest.json` next to the instance file.
pub fn manifest_path(out: &Path) -> PathBuf {
    let mut name = out.file_name().unwrap_or_default().to_os_string();
    name.push(".manifest.json");
    out.with_file_name(name)
}

fn image_tags(n: usize) -> String {
    (1..=n).map(|i| format!("<image_{i}>\n")).collect()
}

/// Builds the instance for one record; `None` when the record is leaky.
pub fn training_instance(
    record: &PromptRecord,
    triple: &SampleTriple,
    engine: &PromptEngine,
    catalog: &TaskCatalog,
) -> Result<Option<TrainingInstance>, DistillError> {
    if !lint_implicitness(record.text(), &record.pair, catalog)?.is_clean() {
        return Ok(None);
    }
    let bundle = engine.build_student_prompt(&triple.without_query_label())?;
    let refs = [&triple.demo_input, &triple.demo_label, &triple.query_input];
    Ok(Some(TrainingInstance {
        system: bundle.system_text().unwrap_or_default(),
        user: UserTurn {
            text: format!("{}{}", image_tags(refs.len()), bundle.user_text()),
            images: refs.iter().map(|r| r.path.clone()).collect(),
            roles: STUDENT_ROLES.to_vec(),
        },
        assistant: record.text().to_string(),
        meta: InstanceMeta {
            pair: record.pair.key(),
            sample_id: triple.sample_id.clone(),
            record_id: record.id.clone(),
        },
    }))
}

/// Writes one instance per clean record (at most `cap` per pair, in input
/// order) to `out` and a manifest beside it.
pub fn export_training_set(
    retained: &[PromptRecord],
    triples: &[SampleTriple],
    engine: &PromptEngine,
    catalog: &TaskCatalog,
    out: &Path,
    cap: usize,
) -> Result<ExportManifest, DistillError> {
    let by_sample: HashMap<&str, &SampleTriple> = triples.iter().map(|t| (t.sample_id.as_str(), t)).collect();
    let mut per_pair: BTreeMap<String, PairCounts> = BTreeMap::new();
    let mut instances = Vec::new();
    for record in retained {
        let triple = by_sample
            .get(record.source_sample.as_str())
            .ok_or_else(|| DistillError::DanglingSample {
                record: record.id.clone(),
                sample: record.source_sample.clone(),
            })?;
        let counts = per_pair.entry(record.pair.key()).or_default();
        match training_instance(record, triple, engine, catalog)? {
            None => counts.excluded_leaky += 1,
            Some(_) if counts.written >= cap => counts.excluded_over_cap += 1,
            Some(inst) => {
                counts.written += 1;
                instances.push(inst);
            }
        }
    }
    let io = |path: &Path| {
        let path = path.display().to_string();
        move |source| DistillError::Io { path, source }
    };
    util::write_jsonl(out, instances.iter()).map_err(io(out))?;
    let manifest = ExportManifest {
        objective: OBJECTIVE.to_string(),
        instances_path: out.to_path_buf(),
        cap,
        total: instances.len(),
        per_pair,
    };
    let mpath = manifest_path(out);
    let json = serde_json::to_vec_pretty(&manifest).expect("manifest serializes");
    util::write_atomic(&mpath, &json).map_err(io(&mpath))?;
    Ok(manifest)
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Violation {
    pub line: usize,
    pub message: String,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ValidationReport {
    pub instances: usize,
    pub violations: Vec<Violation>,
}

impl ValidationReport {
    pub fn is_clean(&self) -> bool {
        self.violations.is_empty()
    }
}

fn check_instance(inst: &TrainingInstance, catalog: &TaskCatalog) -> Vec<String> {
    let mut out = Vec::new();
    let n = inst.user.images.len();
    if n > 3 || inst.user.roles.contains(&SlotRole::QueryLabel) {
        out.push(LEAKED_LABEL.to_string());
    } else if n != 3 {
        out.push(format!("expected 3 images, found {n}"));
    }
    if inst.user.roles.len() != n {
        out.push(format!("{} roles for {n} images", inst.user.roles.len()));
    } else if n == 3 && inst.user.roles != STUDENT_ROLES {
        out.push(format!("image roles out of order: {:?}", inst.user.roles));
    }
    if !inst.user.text.starts_with(&image_tags(n)) {
        out.push("user text does not open with one tag per image".into());
    }
    if inst.assistant.trim().is_empty() {
        out.push("empty completion".into());
        return out;
    }
    match catalog.parse_pair(&inst.meta.pair) {
        Ok(pair) => match lint_implicitness(&inst.assistant, &pair, catalog) {
            Ok(Lint::Clean) => {}
            Ok(lint) => out.push(format!("completion names a task: {}", lint.lexemes().join(", "))),
            Err(e) => out.push(e.to_string()),
        },
        Err(e) => out.push(format!("bad pair `{}`: {e}", inst.meta.pair)),
    }
    out
}

/// Checks every line of an instance file; problems are reported, not raised.
pub fn validate_training_set(path: &Path, catalog: &TaskCatalog) -> Result<ValidationReport, DistillError> {
    let lines = util::read_lines(path).map_err(|source| DistillError::Io {
        path: path.display().to_string(),
        source,
    })?;
    let mut report = ValidationReport::default();
    for (line, text) in lines {
        report.instances += 1;
        match serde_json::from_str::<TrainingInstance>(&text) {
            Ok(inst) => report.violations.extend(
                check_instance(&inst, catalog)
                    .into_iter()
                    .map(|message| Violation { line, message }),
            ),
            Err(e) => report.violations.push(Violation {
                line,
                message: format!("unparseable instance: {e}"),
            }),
        }
    }
    Ok(report)
}
