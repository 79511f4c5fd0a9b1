//! Prompt construction and the implicitness lint.
//!
//! Every prompt the pipeline sends is a [`PromptBundle`]: a short list of
//! multimodal messages whose image parts carry stable slot labels
//! (`image_1`, `image_2`, ...) in the order the model should see them. Text
//! comes from template files with named sections; the built-in set lives in
//! `templates/` and a directory of overrides can be loaded at startup.
//!
//! Slot layouts per kind:
//!
//! | kind                 | slots                                              |
//! |----------------------|----------------------------------------------------|
//! | `FixedBaseline`      | demo_input, demo_label, query_input                |
//! | `TeacherElicitation` | demo_input, demo_label, query_input, query_label   |
//! | `StudentOpenEnded`   | demo_input, demo_label, query_input                |
//! | `Deployment`         | demo_input, demo_label, query_input                |

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::catalog::{CatalogError, TaskCatalog, TaskPair};
use crate::corpus::{SampleTriple, DEMO_RESOLUTION, QUERY_RESOLUTION};
use crate::image::ImageBuffer;
use crate::util;

/// Placeholder in the deployment template replaced by the implicit description.
pub const IMPLICIT_PLACEHOLDER: &str = "{implicit}";
/// Placeholder in the semantic-consistency rubric replaced by the instruction.
pub const INSTRUCTION_PLACEHOLDER: &str = "{instruction}";

#[derive(Debug, Error)]
pub enum PromptError {
    #[error("template {name}: {message}")]
    Template { name: String, message: String },
    #[error("reading template {path}: {source}")]
    TemplateIo {
        path: String,
        source: std::io::Error,
    },
    #[error("triple {sample_id} has no query label; the teacher prompt needs all four images")]
    MissingQueryLabel { sample_id: String },
    #[error("implicit prompt leaks task names: {}", .0.iter().map(|m| m.lexeme.as_str()).collect::<Vec<_>>().join(", "))]
    Leaky(Vec<LexemeMatch>),
    #[error("prompt text is empty")]
    EmptyText,
    #[error("a message needs at least one part")]
    EmptyMessage,
    #[error("image slot label `{0}` used twice in one message")]
    DuplicateSlot(String),
    #[error("image slot `{label}` could not be bound: {message}")]
    Bind { label: String, message: String },
    #[error(transparent)]
    Catalog(#[from] CatalogError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PromptKind {
    FixedBaseline,
    TeacherElicitation,
    StudentOpenEnded,
    Deployment,
}

impl PromptKind {
    pub const ALL: [PromptKind; 4] = [
        PromptKind::FixedBaseline,
        PromptKind::TeacherElicitation,
        PromptKind::StudentOpenEnded,
        PromptKind::Deployment,
    ];

    pub fn slot_roles(self) -> &'static [SlotRole] {
        use SlotRole::*;
        match self {
            PromptKind::TeacherElicitation => &[DemoInput, DemoLabel, QueryInput, QueryLabel],
            _ => &[DemoInput, DemoLabel, QueryInput],
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            PromptKind::FixedBaseline => "fixed_baseline",
            PromptKind::TeacherElicitation => "teacher_elicitation",
            PromptKind::StudentOpenEnded => "student_open_ended",
            PromptKind::Deployment => "deployment",
        }
    }
}

impl fmt::Display for PromptKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for PromptKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "fixed" | "fixed_baseline" => Ok(PromptKind::FixedBaseline),
            "teacher" | "teacher_elicitation" => Ok(PromptKind::TeacherElicitation),
            "student" | "student_open_ended" => Ok(PromptKind::StudentOpenEnded),
            "deployment" => Ok(PromptKind::Deployment),
            other => Err(format!("unknown prompt kind `{other}`")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SlotRole {
    DemoInput,
    DemoLabel,
    QueryInput,
    QueryLabel,
    /// A synthesized image under evaluation.
    Generated,
}

impl SlotRole {
    /// Working resolution the image is preprocessed to before sending.
    pub fn resolution(self) -> u32 {
        match self {
            SlotRole::DemoInput | SlotRole::DemoLabel => DEMO_RESOLUTION,
            _ => QUERY_RESOLUTION,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ChatRole {
    System,
    User,
    Assistant,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum ImageSource {
    Path(PathBuf),
    Pixels(Arc<ImageBuffer>),
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ImageSlot {
    pub label: String,
    pub role: SlotRole,
    pub source: ImageSource,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Part {
    Text(String),
    Image(ImageSlot),
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MultimodalMessage {
    role: ChatRole,
    parts: Vec<Part>,
}

impl MultimodalMessage {
    pub fn new(role: ChatRole, parts: Vec<Part>) -> Result<Self, PromptError> {
        if parts.is_empty() {
            return Err(PromptError::EmptyMessage);
        }
        let mut seen = BTreeSet::new();
        for p in &parts {
            if let Part::Image(slot) = p {
                if !seen.insert(slot.label.as_str()) {
                    return Err(PromptError::DuplicateSlot(slot.label.clone()));
                }
            }
        }
        Ok(MultimodalMessage { role, parts })
    }

    pub fn text(role: ChatRole, text: impl Into<String>) -> Self {
        MultimodalMessage {
            role,
            parts: vec![Part::Text(text.into())],
        }
    }

    pub fn role(&self) -> ChatRole {
        self.role
    }

    pub fn parts(&self) -> &[Part] {
        &self.parts
    }

    pub fn images(&self) -> impl Iterator<Item = &ImageSlot> {
        self.parts.iter().filter_map(|p| match p {
            Part::Image(s) => Some(s),
            Part::Text(_) => None,
        })
    }

    pub fn joined_text(&self) -> String {
        self.parts
            .iter()
            .filter_map(|p| match p {
                Part::Text(t) => Some(t.as_str()),
                Part::Image(_) => None,
            })
            .collect::<Vec<_>>()
            .join("\n")
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PromptBundle {
    kind: PromptKind,
    messages: Vec<MultimodalMessage>,
}

impl PromptBundle {
    pub fn new(kind: PromptKind, messages: Vec<MultimodalMessage>) -> Self {
        PromptBundle { kind, messages }
    }

    pub fn kind(&self) -> PromptKind {
        self.kind
    }

    pub fn messages(&self) -> &[MultimodalMessage] {
        &self.messages
    }

    pub fn images(&self) -> impl Iterator<Item = &ImageSlot> {
        self.messages.iter().flat_map(|m| m.images())
    }

    /// Slot label to role, e.g. `image_1 -> demo_input`.
    pub fn image_slots(&self) -> BTreeMap<String, SlotRole> {
        self.images().map(|s| (s.label.clone(), s.role)).collect()
    }

    /// Roles in presentation order.
    pub fn slot_order(&self) -> Vec<SlotRole> {
        self.images().map(|s| s.role).collect()
    }

    /// Text of the user turn.
    pub fn user_text(&self) -> String {
        self.messages
            .iter()
            .filter(|m| m.role == ChatRole::User)
            .map(|m| m.joined_text())
            .collect::<Vec<_>>()
            .join("\n")
    }

    pub fn system_text(&self) -> Option<String> {
        self.messages
            .iter()
            .find(|m| m.role == ChatRole::System)
            .map(|m| m.joined_text())
    }

    pub fn is_bound(&self) -> bool {
        self.images().all(|s| matches!(s.source, ImageSource::Pixels(_)))
    }

    /// Replaces every path-backed slot with pixels from `load`.
    pub fn bind<E: fmt::Display>(
        &self,
        mut load: impl FnMut(&Path, SlotRole) -> Result<ImageBuffer, E>,
    ) -> Result<PromptBundle, PromptError> {
        let mut out = self.clone();
        for m in &mut out.messages {
            for p in &mut m.parts {
                if let Part::Image(slot) = p {
                    if let ImageSource::Path(path) = &slot.source {
                        let img = load(path, slot.role).map_err(|e| PromptError::Bind {
                            label: slot.label.clone(),
                            message: e.to_string(),
                        })?;
                        slot.source = ImageSource::Pixels(Arc::new(img));
                    }
                }
            }
        }
        Ok(out)
    }
}

/// A template file: `## name` headers followed by section bodies. Lines
/// starting with `#` before the first header are comments.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Template {
    name: String,
    sections: Vec<(String, String)>,
}

impl Template {
    pub fn parse(name: &str, text: &str) -> Result<Self, PromptError> {
        let mut sections: Vec<(String, String)> = Vec::new();
        let mut current: Option<(String, Vec<&str>)> = None;
        for line in text.lines() {
            if let Some(header) = line.strip_prefix("## ") {
                if let Some((n, body)) = current.take() {
                    sections.push((n, body.join("\n").trim().to_string()));
                }
                let header = header.trim().to_string();
                if sections.iter().any(|(n, _)| *n == header) {
                    return Err(PromptError::Template {
                        name: name.to_string(),
                        message: format!("duplicate section `{header}`"),
                    });
                }
                current = Some((header, Vec::new()));
            } else if let Some((_, body)) = current.as_mut() {
                body.push(line);
            } else if !line.trim().is_empty() && !line.starts_with('#') {
                return Err(PromptError::Template {
                    name: name.to_string(),
                    message: "text before the first `## section` header".into(),
                });
            }
        }
        if let Some((n, body)) = current {
            sections.push((n, body.join("\n").trim().to_string()));
        }
        Ok(Template {
            name: name.to_string(),
            sections,
        })
    }

    pub fn section(&self, name: &str) -> Option<&str> {
        self.sections
            .iter()
            .find(|(n, _)| n == name)
            .map(|(_, b)| b.as_str())
    }

    fn require(&self, names: &[&str]) -> Result<(), PromptError> {
        for n in names {
            if self.section(n).is_none_or(str::is_empty) {
                return Err(PromptError::Template {
                    name: self.name.clone(),
                    message: format!("missing or empty section `{n}`"),
                });
            }
        }
        Ok(())
    }

    /// Sections other than `system`, joined by blank lines in file order.
    pub fn body(&self) -> String {
        self.sections
            .iter()
            .filter(|(n, _)| n != "system")
            .map(|(_, b)| b.as_str())
            .collect::<Vec<_>>()
            .join("\n\n")
    }
}

/// The full template set, validated at load.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TemplateSet {
    pub fixed: Template,
    pub teacher: Template,
    pub student: Template,
    pub deployment: Template,
    pub vie_sc: Template,
    pub vie_pq: Template,
}

const TEMPLATE_FILES: [(&str, &str); 6] = [
    ("fixed_baseline.txt", include_str!("../templates/fixed_baseline.txt")),
    ("teacher_elicitation.txt", include_str!("../templates/teacher_elicitation.txt")),
    ("student_open_ended.txt", include_str!("../templates/student_open_ended.txt")),
    ("deployment.txt", include_str!("../templates/deployment.txt")),
    ("vie_sc.txt", include_str!("../templates/vie_sc.txt")),
    ("vie_pq.txt", include_str!("../templates/vie_pq.txt")),
];

impl TemplateSet {
    pub fn builtin() -> Self {
        let texts: Vec<(&str, String)> = TEMPLATE_FILES.iter().map(|(n, t)| (*n, t.to_string())).collect();
        Self::from_texts(&texts).expect("builtin templates are valid")
    }

    /// Loads `dir/<name>.txt` for each template, falling back to the built-in
    /// text for files that are absent.
    pub fn load_dir(dir: &Path) -> Result<Self, PromptError> {
        let mut texts = Vec::new();
        for (name, builtin) in TEMPLATE_FILES {
            let path = dir.join(name);
            let text = if path.exists() {
                std::fs::read_to_string(&path).map_err(|source| PromptError::TemplateIo {
                    path: path.display().to_string(),
                    source,
                })?
            } else {
                builtin.to_string()
            };
            texts.push((name, text));
        }
        Self::from_texts(&texts)
    }

    fn from_texts(texts: &[(&str, String)]) -> Result<Self, PromptError> {
        let get = |i: usize| Template::parse(texts[i].0, &texts[i].1);
        let set = TemplateSet {
            fixed: get(0)?,
            teacher: get(1)?,
            student: get(2)?,
            deployment: get(3)?,
            vie_sc: get(4)?,
            vie_pq: get(5)?,
        };
        set.fixed.require(&["instruction"])?;
        set.teacher
            .require(&["instruction", "goal", "degradation", "visual_change", "constraint"])?;
        set.student.require(&["instruction"])?;
        set.deployment.require(&["instruction"])?;
        set.vie_sc.require(&["instruction"])?;
        set.vie_pq.require(&["instruction"])?;
        if set.deployment.body().matches(IMPLICIT_PLACEHOLDER).count() != 1 {
            return Err(PromptError::Template {
                name: "deployment.txt".into(),
                message: format!("must contain `{IMPLICIT_PLACEHOLDER}` exactly once"),
            });
        }
        if !set.vie_sc.body().contains(INSTRUCTION_PLACEHOLDER) {
            return Err(PromptError::Template {
                name: "vie_sc.txt".into(),
                message: format!("must contain `{INSTRUCTION_PLACEHOLDER}`"),
            });
        }
        Ok(set)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LexemeMatch {
    pub task: String,
    pub lexeme: String,
    /// Byte offset into the linted text.
    pub offset: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "status", content = "matches", rename_all = "snake_case")]
pub enum Lint {
    Clean,
    Leaky(Vec<LexemeMatch>),
}

impl Lint {
    pub fn is_clean(&self) -> bool {
        matches!(self, Lint::Clean)
    }

    /// Distinct matched lexemes in order of first appearance.
    pub fn lexemes(&self) -> Vec<String> {
        let mut out: Vec<String> = Vec::new();
        if let Lint::Leaky(ms) = self {
            for m in ms {
                if !out.contains(&m.lexeme) {
                    out.push(m.lexeme.clone());
                }
            }
        }
        out
    }
}

fn starts_with_ci(hay: &str, needle: &str) -> bool {
    let mut h = hay.chars().flat_map(char::to_lowercase);
    needle.chars().all(|n| h.next() == Some(n))
}

/// Case-insensitive lexeme scan anchored at word starts.
pub fn scan_lexemes<'a>(
    text: &str,
    tasks: impl IntoIterator<Item = &'a crate::catalog::TaskSpec>,
) -> Vec<LexemeMatch> {
    let mut out = Vec::new();
    let tasks: Vec<_> = tasks.into_iter().collect();
    let mut prev: Option<char> = None;
    for (i, c) in text.char_indices() {
        if prev.is_none_or(|p| !p.is_alphanumeric()) && c.is_alphanumeric() {
            let rest = &text[i..];
            for task in &tasks {
                for lexeme in &task.lexemes {
                    if starts_with_ci(rest, lexeme) {
                        out.push(LexemeMatch {
                            task: task.id.clone(),
                            lexeme: lexeme.clone(),
                            offset: i,
                        });
                    }
                }
            }
        }
        prev = Some(c);
    }
    out
}

/// Clean iff no lexeme of either task in `pair` occurs in `text`.
pub fn lint_implicitness(text: &str, pair: &TaskPair, catalog: &TaskCatalog) -> Result<Lint, PromptError> {
    if text.trim().is_empty() {
        return Err(PromptError::EmptyText);
    }
    let tasks = [catalog.task(&pair.source)?, catalog.task(&pair.target)?];
    let matches = scan_lexemes(text, tasks);
    Ok(if matches.is_empty() {
        Lint::Clean
    } else {
        Lint::Leaky(matches)
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PromptGenerator {
    Teacher,
    Student,
    Human,
}

/// An implicit description with its provenance and lint status.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PromptRecord {
    pub id: String,
    text: String,
    pub pair: TaskPair,
    pub source_sample: String,
    pub generator: PromptGenerator,
    pub lint: Lint,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub embedding: Option<Vec<f64>>,
}

impl PromptRecord {
    pub fn new(
        text: impl Into<String>,
        pair: TaskPair,
        source_sample: impl Into<String>,
        generator: PromptGenerator,
        catalog: &TaskCatalog,
    ) -> Result<Self, PromptError> {
        let text = text.into();
        let source_sample = source_sample.into();
        let lint = lint_implicitness(&text, &pair, catalog)?;
        Ok(PromptRecord {
            id: Self::make_id(generator, &source_sample, &text),
            text,
            pair,
            source_sample,
            generator,
            lint,
            embedding: None,
        })
    }

    fn make_id(generator: PromptGenerator, sample: &str, text: &str) -> String {
        let g = serde_json::to_string(&generator).expect("enum serializes");
        let h = util::sha256_hex(&[g.as_bytes(), sample.as_bytes(), text.as_bytes()]);
        format!("pr-{}", &h[..16])
    }

    pub fn text(&self) -> &str {
        &self.text
    }

    /// New text re-lints the record and gives it a fresh id.
    pub fn set_text(&mut self, text: impl Into<String>, catalog: &TaskCatalog) -> Result<(), PromptError> {
        let text = text.into();
        self.lint = lint_implicitness(&text, &self.pair, catalog)?;
        self.id = Self::make_id(self.generator, &self.source_sample, &text);
        self.text = text;
        self.embedding = None;
        Ok(())
    }

    /// Recomputes the lint from the current text, e.g. after deserializing.
    pub fn relint(&mut self, catalog: &TaskCatalog) -> Result<(), PromptError> {
        self.lint = lint_implicitness(&self.text, &self.pair, catalog)?;
        Ok(())
    }
}

/// Builds the four bundle kinds from a template set.
#[derive(Debug, Clone)]
pub struct PromptEngine {
    templates: TemplateSet,
}

impl Default for PromptEngine {
    fn default() -> Self {
        PromptEngine::new(TemplateSet::builtin())
    }
}

fn slots_for(triple: &SampleTriple, roles: &[SlotRole]) -> Result<Vec<Part>, PromptError> {
    roles
        .iter()
        .enumerate()
        .map(|(i, &role)| {
            let path = match role {
                SlotRole::DemoInput => triple.demo_input.path.clone(),
                SlotRole::DemoLabel => triple.demo_label.path.clone(),
                SlotRole::QueryInput => triple.query_input.path.clone(),
                SlotRole::QueryLabel => triple
                    .query_label
                    .as_ref()
                    .ok_or_else(|| PromptError::MissingQueryLabel {
                        sample_id: triple.sample_id.clone(),
                    })?
                    .path
                    .clone(),
                SlotRole::Generated => unreachable!("triples carry no generated image"),
            };
            Ok(Part::Image(ImageSlot {
                label: format!("image_{}", i + 1),
                role,
                source: ImageSource::Path(path),
            }))
        })
        .collect()
}

impl PromptEngine {
    pub fn new(templates: TemplateSet) -> Self {
        PromptEngine { templates }
    }

    pub fn templates(&self) -> &TemplateSet {
        &self.templates
    }

    fn assemble(
        &self,
        kind: PromptKind,
        template: &Template,
        triple: &SampleTriple,
        text: String,
    ) -> Result<PromptBundle, PromptError> {
        let mut messages = Vec::new();
        if let Some(system) = template.section("system") {
            messages.push(MultimodalMessage::text(ChatRole::System, system));
        }
        let mut parts = slots_for(triple, kind.slot_roles())?;
        parts.push(Part::Text(text));
        messages.push(MultimodalMessage::new(ChatRole::User, parts)?);
        Ok(PromptBundle::new(kind, messages))
    }

    pub fn build_fixed_prompt(&self, triple: &SampleTriple) -> Result<PromptBundle, PromptError> {
        let t = &self.templates.fixed;
        self.assemble(PromptKind::FixedBaseline, t, triple, t.body())
    }

    pub fn build_teacher_prompt(&self, triple: &SampleTriple) -> Result<PromptBundle, PromptError> {
        let t = &self.templates.teacher;
        self.assemble(PromptKind::TeacherElicitation, t, triple, t.body())
    }

    /// The task-B label is never included, even if the triple carries one.
    pub fn build_student_prompt(&self, triple: &SampleTriple) -> Result<PromptBundle, PromptError> {
        let t = &self.templates.student;
        self.assemble(PromptKind::StudentOpenEnded, t, triple, t.body())
    }

    pub fn build_deployment_prompt(
        &self,
        triple: &SampleTriple,
        implicit: &PromptRecord,
        allow_leaky: bool,
    ) -> Result<PromptBundle, PromptError> {
        if let Lint::Leaky(matches) = &implicit.lint {
            if !allow_leaky {
                return Err(PromptError::Leaky(matches.clone()));
            }
        }
        let t = &self.templates.deployment;
        let text = t.body().replace(IMPLICIT_PLACEHOLDER, implicit.text());
        self.assemble(PromptKind::Deployment, t, triple, text)
    }

    /// Rendered semantic-consistency rubric.
    pub fn sc_rubric(&self, instruction: &str) -> String {
        self.templates
            .vie_sc
            .body()
            .replace(INSTRUCTION_PLACEHOLDER, instruction)
    }

    pub fn pq_rubric(&self) -> String {
        self.templates.vie_pq.body()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{ImageRef, ImageRole, Split};

    pub(crate) const FIXED_TEXT: &str = "This is a visual in-context learning task. The first two images are an input and output of Task A. The third image is the input for Task B. The goal is to perform Task B on the third image and generate an output image, learning from Task A.";

    fn triple(pair: &str, i: usize, with_label: bool) -> SampleTriple {
        let cat = TaskCatalog::builtin();
        let pair = cat.parse_pair(pair).unwrap();
        let r = |name: &str, role, task: &str| ImageRef {
            path: PathBuf::from(format!("/data/{task}/{name}_{i}.png")),
            role,
            task: task.to_string(),
            split: Split::Test,
        };
        SampleTriple {
            sample_id: format!("s{i}"),
            demo_input: r("in", ImageRole::Input, &pair.source),
            demo_label: r("gt", ImageRole::Label, &pair.source),
            query_input: r("in", ImageRole::Query, &pair.target),
            query_label: with_label.then(|| r("gt", ImageRole::Label, &pair.target)),
            pair,
            replacement: false,
        }
    }

    fn record(text: &str, pair: &str) -> PromptRecord {
        let cat = TaskCatalog::builtin();
        PromptRecord::new(text, cat.parse_pair(pair).unwrap(), "s0", PromptGenerator::Student, cat).unwrap()
    }

    #[test]
    fn fixed_prompt_is_verbatim() {
        let e = PromptEngine::default();
        let a = e.build_fixed_prompt(&triple("deraining:denoising", 0, true)).unwrap();
        let b = e.build_fixed_prompt(&triple("deraining:denoising", 1, true)).unwrap();
        assert_eq!(a.user_text(), FIXED_TEXT);
        assert!(a.user_text().starts_with("This is a visual in-context learning task."));
        assert_eq!(a.user_text(), b.user_text());
        assert_ne!(a, b);
        assert_eq!(
            a.slot_order(),
            [SlotRole::DemoInput, SlotRole::DemoLabel, SlotRole::QueryInput]
        );
        assert_eq!(a.image_slots().len(), 3);
    }

    #[test]
    fn teacher_prompt_has_axes_and_four_slots() {
        let e = PromptEngine::default();
        let b = e.build_teacher_prompt(&triple("deblurring:dehazing", 0, true)).unwrap();
        let text = b.user_text();
        assert!(text.contains("Target goal"));
        assert!(text.contains("Input degradation"));
        assert!(text.contains("Visual changes from input to output"));
        assert!(text.contains("Never reveal the task names"));
        assert_eq!(
            b.slot_order(),
            [SlotRole::DemoInput, SlotRole::DemoLabel, SlotRole::QueryInput, SlotRole::QueryLabel]
        );
        assert!(matches!(
            e.build_teacher_prompt(&triple("deblurring:dehazing", 0, false)),
            Err(PromptError::MissingQueryLabel { .. })
        ));
    }

    #[test]
    fn teacher_template_never_leaks() {
        let e = PromptEngine::default();
        let cat = TaskCatalog::builtin();
        for pair in cat.enumerate_pairs(None) {
            let b = e.build_teacher_prompt(&triple(&pair.key(), 0, true)).unwrap();
            let all = format!("{}\n{}", b.system_text().unwrap_or_default(), b.user_text());
            assert_eq!(lint_implicitness(&all, &pair, cat).unwrap(), Lint::Clean, "{pair}");
        }
    }

    #[test]
    fn student_prompt_omits_query_label() {
        let e = PromptEngine::default();
        let a = e.build_student_prompt(&triple("deblurring:dehazing", 0, true)).unwrap();
        assert_eq!(a.image_slots().len(), 3);
        assert!(!a.slot_order().contains(&SlotRole::QueryLabel));
        assert_eq!(a.user_text(), e.templates().student.section("instruction").unwrap());
        assert!(a.user_text().starts_with("Compare the effects observed in these images"));
        assert_eq!(a, e.build_student_prompt(&triple("deblurring:dehazing", 0, true)).unwrap());
    }

    #[test]
    fn deployment_prompt_embeds_clean_text_and_blocks_leaks() {
        let e = PromptEngine::default();
        let t = triple("deraining:denoising", 0, true);
        let clean = record("remove the thin directional streaks", "deraining:denoising");
        let b = e.build_deployment_prompt(&t, &clean, false).unwrap();
        assert!(b.user_text().contains("remove the thin directional streaks"));
        assert_eq!(
            b.slot_order(),
            [SlotRole::DemoInput, SlotRole::DemoLabel, SlotRole::QueryInput]
        );
        let leaky = record("this deraining example shows streaks", "deraining:denoising");
        match e.build_deployment_prompt(&t, &leaky, false) {
            Err(PromptError::Leaky(m)) => assert_eq!(m[0].lexeme, "derain"),
            other => panic!("expected leak rejection, got {other:?}"),
        }
        assert!(e.build_deployment_prompt(&t, &leaky, true).is_ok());
    }

    #[test]
    fn lint_examples() {
        let cat = TaskCatalog::builtin();
        let pair = cat.parse_pair("deraining:denoising").unwrap();
        assert_eq!(lint_implicitness("remove the thin directional streaks", &pair, cat).unwrap(), Lint::Clean);
        let l = lint_implicitness("this deraining example shows…", &pair, cat).unwrap();
        assert_eq!(l.lexemes(), ["derain"]);
        match &l {
            Lint::Leaky(m) => assert_eq!(m[0].offset, 5),
            Lint::Clean => unreachable!(),
        }
        assert!(matches!(lint_implicitness("  ", &pair, cat), Err(PromptError::EmptyText)));
        let upper = lint_implicitness("DeRaIn it", &pair, cat).unwrap();
        assert_eq!(upper.lexemes(), ["derain"]);
        // Lexemes only count at word starts.
        assert_eq!(lint_implicitness("underained", &pair, cat).unwrap(), Lint::Clean);
    }

    #[test]
    fn record_text_change_relints() {
        let cat = TaskCatalog::builtin();
        let mut r = record("sharpen the edges", "deblurring:dehazing");
        let id = r.id.clone();
        assert!(r.lint.is_clean());
        r.set_text("a deblurring step", cat).unwrap();
        assert_eq!(r.lint.lexemes(), ["deblur"]);
        assert_ne!(r.id, id);
    }

    #[test]
    fn template_parsing_and_validation() {
        let t = Template::parse("t", "# comment\n## a\nline 1\n\n## b\nline 2\n").unwrap();
        assert_eq!(t.section("a"), Some("line 1"));
        assert_eq!(t.body(), "line 1\n\nline 2");
        assert!(Template::parse("t", "stray\n## a\nx").is_err());
        assert!(Template::parse("t", "## a\nx\n## a\ny").is_err());

        let dir = tempfile::tempdir().unwrap();
        std::fs::write(dir.path().join("teacher_elicitation.txt"), "## instruction\nonly this\n").unwrap();
        assert!(matches!(TemplateSet::load_dir(dir.path()), Err(PromptError::Template { .. })));
        std::fs::remove_file(dir.path().join("teacher_elicitation.txt")).unwrap();
        assert_eq!(TemplateSet::load_dir(dir.path()).unwrap(), TemplateSet::builtin());
    }

    #[test]
    fn messages_reject_duplicates_and_empties() {
        let slot = |l: &str| {
            Part::Image(ImageSlot {
                label: l.into(),
                role: SlotRole::DemoInput,
                source: ImageSource::Path("/a.png".into()),
            })
        };
        assert!(matches!(MultimodalMessage::new(ChatRole::User, vec![]), Err(PromptError::EmptyMessage)));
        assert!(matches!(
            MultimodalMessage::new(ChatRole::User, vec![slot("image_1"), slot("image_1")]),
            Err(PromptError::DuplicateSlot(_))
        ));
    }

    #[test]
    fn binding_replaces_paths() {
        let e = PromptEngine::default();
        let b = e.build_fixed_prompt(&triple("deraining:denoising", 0, true)).unwrap();
        assert!(!b.is_bound());
        let bound = b
            .bind(|_, role| ImageBuffer::filled(role.resolution(), role.resolution(), [1, 2, 3]))
            .unwrap();
        assert!(bound.is_bound());
        assert_eq!(bound.image_slots(), b.image_slots());
    }
}
