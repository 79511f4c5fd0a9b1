//! Dataset manifests, train/test splitting, preprocessing and cross-task
//! triple sampling.
//!
//! A manifest is line-delimited JSON, one image per line:
//!
//! ```text
//! {"task":"deblurring","role":"input","split":"train","pair_key":"0001","path":"gopro/0001_blur.png"}
//! {"task":"deblurring","role":"label","split":"train","pair_key":"0001","path":"gopro/0001_sharp.png"}
//! ```
//!
//! `split` may be omitted or empty; such pairs are `Unsplit` until
//! [`split_dataset`] assigns them. Relative paths resolve against the
//! manifest's directory.

pub mod synth;

use std::collections::BTreeMap;
use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use rand::seq::{index, SliceRandom};
use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::catalog::{TaskCatalog, TaskPair};
use crate::image::{ImageBuffer, ImageError};
use crate::util;

/// Side of demonstration images after preprocessing.
pub const DEMO_RESOLUTION: u32 = 448;
/// Side of query images after preprocessing.
pub const QUERY_RESOLUTION: u32 = 224;

#[derive(Debug, Error)]
pub enum CorpusError {
    #[error("manifest {path}: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },
    #[error("manifest line {line}: {message}")]
    Malformed { line: usize, message: String },
    #[error("manifest line {line}: unknown task slug `{slug}`")]
    UnknownTask { line: usize, slug: String },
    #[error("manifest line {line}: image {path} does not exist")]
    MissingImage { line: usize, path: String },
    #[error("manifest line {line}: duplicate {role} for task `{task}` pair `{pair_key}`")]
    Duplicate {
        line: usize,
        task: String,
        role: String,
        pair_key: String,
    },
    #[error("task `{task}` pair `{pair_key}` has an {present} but no {missing}")]
    Dangling {
        task: String,
        pair_key: String,
        present: &'static str,
        missing: &'static str,
    },
    #[error("task `{task}` pair `{pair_key}`: input and label disagree on split")]
    SplitConflict { task: String, pair_key: String },
    #[error("task `{task}` has {pairs} unsplit pair(s); at least 2 are needed to split")]
    SplitImpossible { task: String, pairs: usize },
    #[error("task `{task}` has no {split} pairs to sample from")]
    EmptyPool { task: String, split: Split },
    #[error(transparent)]
    Image(#[from] ImageError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Test,
    #[default]
    Unsplit,
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Split::Train => "train",
            Split::Test => "test",
            Split::Unsplit => "unsplit",
        })
    }
}

impl FromStr for Split {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "train" => Ok(Split::Train),
            "test" => Ok(Split::Test),
            "" | "unsplit" => Ok(Split::Unsplit),
            other => Err(format!("unknown split `{other}`")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ImageRole {
    Input,
    Label,
    Query,
}

impl ImageRole {
    pub fn resolution(self) -> u32 {
        match self {
            ImageRole::Input | ImageRole::Label => DEMO_RESOLUTION,
            ImageRole::Query => QUERY_RESOLUTION,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ImageRef {
    pub path: PathBuf,
    pub role: ImageRole,
    pub task: String,
    pub split: Split,
}

/// One input/label pair of a single task.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ImagePair {
    pub pair_key: String,
    pub input: PathBuf,
    pub label: PathBuf,
    pub split: Split,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DatasetDescriptor {
    pub root: PathBuf,
    /// Pairs per task slug, sorted by pair key.
    pub tasks: BTreeMap<String, Vec<ImagePair>>,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize)]
pub struct SplitCounts {
    pub train: usize,
    pub test: usize,
    pub unsplit: usize,
}

#[derive(Debug, Deserialize)]
struct ManifestLine {
    task: String,
    role: String,
    #[serde(default)]
    split: Option<String>,
    pair_key: String,
    path: PathBuf,
}

#[derive(Debug, Serialize)]
struct ManifestLineOut<'a> {
    task: &'a str,
    role: &'a str,
    split: &'a str,
    pair_key: &'a str,
    path: String,
}

impl DatasetDescriptor {
    pub fn pair_count(&self) -> usize {
        self.tasks.values().map(Vec::len).sum()
    }

    pub fn counts(&self) -> BTreeMap<String, SplitCounts> {
        self.tasks
            .iter()
            .map(|(task, pairs)| {
                let mut c = SplitCounts::default();
                for p in pairs {
                    match p.split {
                        Split::Train => c.train += 1,
                        Split::Test => c.test += 1,
                        Split::Unsplit => c.unsplit += 1,
                    }
                }
                (task.clone(), c)
            })
            .collect()
    }

    pub fn pool(&self, task: &str, split: Split) -> Vec<&ImagePair> {
        self.tasks
            .get(task)
            .map(|pairs| pairs.iter().filter(|p| p.split == split).collect())
            .unwrap_or_default()
    }

    /// Writes the descriptor back as a manifest, paths relative to `root`
    /// when possible.
    pub fn save_manifest(&self, path: &Path) -> Result<(), CorpusError> {
        let base = path.parent().unwrap_or(Path::new(""));
        let mut lines = Vec::new();
        for (task, pairs) in &self.tasks {
            for p in pairs {
                let split = match p.split {
                    Split::Unsplit => "",
                    Split::Train => "train",
                    Split::Test => "test",
                };
                for (role, file) in [("input", &p.input), ("label", &p.label)] {
                    let rel = relative_to(file, base);
                    lines.push(ManifestLineOut {
                        task,
                        role,
                        split,
                        pair_key: &p.pair_key,
                        path: rel.to_string_lossy().into_owned(),
                    });
                }
            }
        }
        util::write_jsonl(path, lines.iter()).map_err(|source| CorpusError::Io {
            path: path.display().to_string(),
            source,
        })?;
        Ok(())
    }
}

fn relative_to(file: &Path, base: &Path) -> PathBuf {
    let abs_base = std::fs::canonicalize(base).unwrap_or_else(|_| base.to_path_buf());
    file.strip_prefix(&abs_base)
        .or_else(|_| file.strip_prefix(base))
        .map(Path::to_path_buf)
        .unwrap_or_else(|_| file.to_path_buf())
}

#[derive(Default)]
struct PartialPair {
    input: Option<PathBuf>,
    label: Option<PathBuf>,
    split: Option<Split>,
}

pub fn load_manifest(path: &Path, catalog: &TaskCatalog) -> Result<DatasetDescriptor, CorpusError> {
    let lines = util::read_lines(path).map_err(|source| CorpusError::Io {
        path: path.display().to_string(),
        source,
    })?;
    let base = path.parent().unwrap_or(Path::new(""));
    let root = std::fs::canonicalize(base).unwrap_or_else(|_| base.to_path_buf());
    let mut partial: BTreeMap<(String, String), PartialPair> = BTreeMap::new();

    for (line_no, line) in lines {
        let rec: ManifestLine = serde_json::from_str(&line).map_err(|e| CorpusError::Malformed {
            line: line_no,
            message: e.to_string(),
        })?;
        if !catalog.contains(&rec.task) {
            return Err(CorpusError::UnknownTask {
                line: line_no,
                slug: rec.task,
            });
        }
        let split: Split = rec
            .split
            .as_deref()
            .unwrap_or("")
            .parse()
            .map_err(|message| CorpusError::Malformed {
                line: line_no,
                message,
            })?;
        let file = if rec.path.is_absolute() {
            rec.path.clone()
        } else {
            root.join(&rec.path)
        };
        if !file.is_file() {
            return Err(CorpusError::MissingImage {
                line: line_no,
                path: file.display().to_string(),
            });
        }
        let entry = partial
            .entry((rec.task.clone(), rec.pair_key.clone()))
            .or_default();
        let slot = match rec.role.as_str() {
            "input" => &mut entry.input,
            "label" => &mut entry.label,
            other => {
                return Err(CorpusError::Malformed {
                    line: line_no,
                    message: format!("unknown role `{other}`, expected input|label"),
                })
            }
        };
        if slot.is_some() {
            return Err(CorpusError::Duplicate {
                line: line_no,
                task: rec.task,
                role: rec.role,
                pair_key: rec.pair_key,
            });
        }
        *slot = Some(file);
        match entry.split {
            Some(s) if s != split => {
                return Err(CorpusError::SplitConflict {
                    task: rec.task,
                    pair_key: rec.pair_key,
                })
            }
            _ => entry.split = Some(split),
        }
    }

    let mut tasks: BTreeMap<String, Vec<ImagePair>> = BTreeMap::new();
    for ((task, pair_key), p) in partial {
        let (input, label) = match (p.input, p.label) {
            (Some(i), Some(l)) => (i, l),
            (Some(_), None) => {
                return Err(CorpusError::Dangling {
                    task,
                    pair_key,
                    present: "input",
                    missing: "label",
                })
            }
            (None, _) => {
                return Err(CorpusError::Dangling {
                    task,
                    pair_key,
                    present: "label",
                    missing: "input",
                })
            }
        };
        tasks.entry(task).or_default().push(ImagePair {
            pair_key,
            input,
            label,
            split: p.split.unwrap_or_default(),
        });
    }
    Ok(DatasetDescriptor { root, tasks })
}

/// Number of training pairs out of `n`: 70% rounded half up.
pub fn train_count(n: usize) -> usize {
    (7 * n + 5) / 10
}

/// Assigns a 70/30 train/test split to every unsplit pair, per task.
/// Pairs that already carry a split are left alone.
pub fn split_dataset(descriptor: &DatasetDescriptor, seed: u64) -> Result<DatasetDescriptor, CorpusError> {
    let mut out = descriptor.clone();
    for (task, pairs) in out.tasks.iter_mut() {
        let mut unsplit: Vec<usize> = pairs
            .iter()
            .enumerate()
            .filter(|(_, p)| p.split == Split::Unsplit)
            .map(|(i, _)| i)
            .collect();
        if unsplit.is_empty() {
            continue;
        }
        if unsplit.len() < 2 {
            return Err(CorpusError::SplitImpossible {
                task: task.clone(),
                pairs: unsplit.len(),
            });
        }
        unsplit.sort_by(|&a, &b| pairs[a].pair_key.cmp(&pairs[b].pair_key));
        let mut rng = util::rng(seed, &["split", task]);
        unsplit.shuffle(&mut rng);
        let n_train = train_count(unsplit.len());
        for (rank, &i) in unsplit.iter().enumerate() {
            pairs[i].split = if rank < n_train { Split::Train } else { Split::Test };
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CropPolicy {
    Center,
    /// Seeded random crop, reserved for training-data augmentation.
    Random(u64),
}

pub fn preprocess(image: &ImageBuffer, role: ImageRole) -> Result<ImageBuffer, CorpusError> {
    preprocess_with(image, role.resolution(), CropPolicy::Center)
}

/// Aspect-preserving bilinear resize to cover `side x side`, then crop.
pub fn preprocess_with(image: &ImageBuffer, side: u32, crop: CropPolicy) -> Result<ImageBuffer, CorpusError> {
    let offset = match crop {
        CropPolicy::Center => (0.5, 0.5),
        CropPolicy::Random(seed) => {
            let mut rng = util::rng(seed, &["crop"]);
            (rng.random::<f64>(), rng.random::<f64>())
        }
    };
    Ok(image.fit_cover(side, side, offset)?)
}

/// Opens an image and preprocesses it to `side x side` with a center crop.
pub fn load_preprocessed(path: &Path, side: u32) -> Result<ImageBuffer, CorpusError> {
    preprocess_with(&ImageBuffer::open(path)?, side, CropPolicy::Center)
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SampleTriple {
    pub sample_id: String,
    pub pair: TaskPair,
    pub demo_input: ImageRef,
    pub demo_label: ImageRef,
    pub query_input: ImageRef,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub query_label: Option<ImageRef>,
    /// Drawn after the pool of distinct combinations ran out.
    #[serde(default)]
    pub replacement: bool,
}

impl SampleTriple {
    /// The same triple without the task-B ground truth.
    pub fn without_query_label(&self) -> SampleTriple {
        SampleTriple {
            query_label: None,
            ..self.clone()
        }
    }
}

/// Which split feeds the demonstration side and which the query side.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SamplingSplits {
    pub demo: Split,
    pub query: Split,
}

impl Default for SamplingSplits {
    fn default() -> Self {
        SamplingSplits {
            demo: Split::Train,
            query: Split::Test,
        }
    }
}

/// Draws `n` (demo pair, query pair) combinations for `pair`. Distinct
/// combinations come first; once the product of the two pools is exhausted the
/// remaining draws repeat and carry `replacement = true`.
pub fn sample_triples(
    descriptor: &DatasetDescriptor,
    pair: &TaskPair,
    n: usize,
    seed: u64,
    splits: SamplingSplits,
) -> Result<Vec<SampleTriple>, CorpusError> {
    let demos = descriptor.pool(&pair.source, splits.demo);
    if demos.is_empty() {
        return Err(CorpusError::EmptyPool {
            task: pair.source.clone(),
            split: splits.demo,
        });
    }
    let queries = descriptor.pool(&pair.target, splits.query);
    if queries.is_empty() {
        return Err(CorpusError::EmptyPool {
            task: pair.target.clone(),
            split: splits.query,
        });
    }
    let product = demos.len() * queries.len();
    let mut rng = util::rng(seed, &["sample", &pair.source, &pair.target]);
    let distinct = n.min(product);
    let mut picks: Vec<(usize, bool)> = index::sample(&mut rng, product, distinct)
        .into_iter()
        .map(|i| (i, false))
        .collect();
    for _ in distinct..n {
        picks.push((rng.random_range(0..product), true));
    }

    let to_ref = |path: &Path, role, task: &str, split| ImageRef {
        path: path.to_path_buf(),
        role,
        task: task.to_string(),
        split,
    };
    Ok(picks
        .into_iter()
        .enumerate()
        .map(|(i, (flat, replacement))| {
            let d = demos[flat / queries.len()];
            let q = queries[flat % queries.len()];
            SampleTriple {
                sample_id: format!("{}__s{seed}__{i:05}", pair.file_stem()),
                pair: pair.clone(),
                demo_input: to_ref(&d.input, ImageRole::Input, &pair.source, d.split),
                demo_label: to_ref(&d.label, ImageRole::Label, &pair.source, d.split),
                query_input: to_ref(&q.input, ImageRole::Query, &pair.target, q.split),
                query_label: Some(to_ref(&q.label, ImageRole::Label, &pair.target, q.split)),
                replacement,
            }
        })
        .collect())
}
