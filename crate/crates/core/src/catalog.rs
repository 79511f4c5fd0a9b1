//! The low-level vision task catalog.
//!
//! Twelve tasks in three categories. Ordered task pairs `A -> B` are the unit
//! of every experiment: `A` supplies the demonstration pair, `B` the query.
//! Pairs whose tasks share a category are intra-category, the rest are
//! inter-category.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::path::Path;
use std::str::FromStr;
use std::sync::OnceLock;

use serde::{Deserialize, Serialize};
use thiserror::Error;

const BUILTIN_CATALOG: &str = include_str!("../data/tasks.toml");

#[derive(Debug, Error)]
pub enum CatalogError {
    #[error("unknown task slug `{0}`")]
    UnknownTask(String),
    #[error("malformed task pair `{0}`, expected SOURCE:TARGET")]
    MalformedPair(String),
    #[error("a task pair needs two distinct tasks, got `{0}` twice")]
    SelfPair(String),
    #[error("catalog parse error: {0}")]
    Parse(#[from] toml::de::Error),
    #[error("invalid catalog: {0}")]
    Invalid(String),
    #[error("reading catalog: {0}")]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Category {
    Restoration,
    Removal,
    GenerationEnhancement,
}

impl fmt::Display for Category {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Category::Restoration => "Restoration",
            Category::Removal => "Removal",
            Category::GenerationEnhancement => "Generation/Enhancement",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Relation {
    IntraCategory,
    InterCategory,
}

impl FromStr for Relation {
    type Err = CatalogError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "intra" | "intra_category" => Ok(Relation::IntraCategory),
            "inter" | "inter_category" => Ok(Relation::InterCategory),
            other => Err(CatalogError::Invalid(format!(
                "unknown relation `{other}`, expected intra|inter"
            ))),
        }
    }
}

impl fmt::Display for Relation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Relation::IntraCategory => "intra",
            Relation::InterCategory => "inter",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TaskSpec {
    #[serde(rename = "slug")]
    pub id: String,
    #[serde(rename = "name")]
    pub display_name: String,
    pub category: Category,
    pub lexemes: Vec<String>,
}

/// An ordered `source -> target` composition of two distinct tasks.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct TaskPair {
    pub source: String,
    pub target: String,
    pub relation: Relation,
}

impl TaskPair {
    /// `source:target`, the form accepted on the command line.
    pub fn key(&self) -> String {
        format!("{}:{}", self.source, self.target)
    }

    /// Filesystem-safe form of [`TaskPair::key`].
    pub fn file_stem(&self) -> String {
        format!("{}__{}", self.source, self.target)
    }
}

impl fmt::Display for TaskPair {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{} -> {}", self.source, self.target)
    }
}

#[derive(Deserialize)]
struct CatalogFile {
    version: u32,
    #[serde(rename = "task")]
    tasks: Vec<TaskSpec>,
}

/// Immutable after load; share it freely.
#[derive(Debug, Clone)]
pub struct TaskCatalog {
    version: u32,
    tasks: Vec<TaskSpec>,
    by_slug: BTreeMap<String, usize>,
}

impl TaskCatalog {
    /// The catalog shipped with the crate.
    pub fn builtin() -> &'static TaskCatalog {
        static CATALOG: OnceLock<TaskCatalog> = OnceLock::new();
        CATALOG.get_or_init(|| {
            TaskCatalog::from_toml(BUILTIN_CATALOG).expect("builtin task catalog is valid")
        })
    }

    pub fn load(path: &Path) -> Result<Self, CatalogError> {
        let text = std::fs::read_to_string(path)?;
        Self::from_toml(&text)
    }

    pub fn from_toml(text: &str) -> Result<Self, CatalogError> {
        let file: CatalogFile = toml::from_str(text)?;
        let mut tasks = file.tasks;
        let mut seen = BTreeSet::new();
        for task in &tasks {
            if !seen.insert(task.id.clone()) {
                return Err(CatalogError::Invalid(format!("duplicate slug `{}`", task.id)));
            }
            if task.lexemes.is_empty() {
                return Err(CatalogError::Invalid(format!("task `{}` has no lexemes", task.id)));
            }
            if let Some(bad) = task
                .lexemes
                .iter()
                .find(|l| l.is_empty() || l.to_lowercase() != **l)
            {
                return Err(CatalogError::Invalid(format!(
                    "task `{}` lexeme `{bad}` must be non-empty lowercase",
                    task.id
                )));
            }
        }
        tasks.sort_by(|a, b| a.category.cmp(&b.category).then_with(|| a.id.cmp(&b.id)));
        let by_slug = tasks
            .iter()
            .enumerate()
            .map(|(i, t)| (t.id.clone(), i))
            .collect();
        Ok(TaskCatalog {
            version: file.version,
            tasks,
            by_slug,
        })
    }

    pub fn version(&self) -> u32 {
        self.version
    }

    /// Tasks ordered by category, then slug.
    pub fn list_tasks(&self) -> &[TaskSpec] {
        &self.tasks
    }

    pub fn task(&self, slug: &str) -> Result<&TaskSpec, CatalogError> {
        self.by_slug
            .get(slug)
            .map(|&i| &self.tasks[i])
            .ok_or_else(|| CatalogError::UnknownTask(slug.to_string()))
    }

    pub fn contains(&self, slug: &str) -> bool {
        self.by_slug.contains_key(slug)
    }

    pub fn classify_pair(&self, source: &str, target: &str) -> Result<Relation, CatalogError> {
        let a = self.task(source)?;
        let b = self.task(target)?;
        Ok(if a.category == b.category {
            Relation::IntraCategory
        } else {
            Relation::InterCategory
        })
    }

    pub fn pair(&self, source: &str, target: &str) -> Result<TaskPair, CatalogError> {
        if source == target {
            self.task(source)?;
            return Err(CatalogError::SelfPair(source.to_string()));
        }
        let relation = self.classify_pair(source, target)?;
        Ok(TaskPair {
            source: source.to_string(),
            target: target.to_string(),
            relation,
        })
    }

    /// Parses `source:target`.
    pub fn parse_pair(&self, key: &str) -> Result<TaskPair, CatalogError> {
        let (source, target) = key
            .split_once(':')
            .ok_or_else(|| CatalogError::MalformedPair(key.to_string()))?;
        self.pair(source.trim(), target.trim())
    }

    /// All ordered pairs with distinct tasks, in catalog order.
    pub fn enumerate_pairs(&self, filter: Option<Relation>) -> Vec<TaskPair> {
        let mut out = Vec::with_capacity(self.tasks.len() * self.tasks.len());
        for a in &self.tasks {
            for b in &self.tasks {
                if a.id == b.id {
                    continue;
                }
                let relation = if a.category == b.category {
                    Relation::IntraCategory
                } else {
                    Relation::InterCategory
                };
                if filter.is_some_and(|f| f != relation) {
                    continue;
                }
                out.push(TaskPair {
                    source: a.id.clone(),
                    target: b.id.clone(),
                    relation,
                });
            }
        }
        out
    }
}
