//! Embedding-space deduplication of implicit descriptions.
//!
//! Greedy leader clustering over records sorted by id: a record joins the
//! first cluster whose leader is at least `threshold` cosine-similar, or
//! founds a new one. Each cluster then contributes its most distinct member
//! (lowest mean cosine to the rest of the cluster), and the result is capped
//! per task pair, preferring the largest clusters.

use std::collections::{BTreeMap, BTreeSet};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::prompt::PromptRecord;

pub const DEFAULT_THRESHOLD: f64 = 0.90;
pub const DEFAULT_CAP: usize = 2000;
const NORM_TOLERANCE: f64 = 1e-6;

#[derive(Debug, Error, PartialEq)]
pub enum DiversityError {
    #[error("vector dimensions differ: {0} vs {1}")]
    DimensionMismatch(usize, usize),
    #[error("record {id} has norm {norm}, expected a unit vector")]
    NotUnit { id: String, norm: f64 },
    #[error("record {0} has no embedding")]
    MissingEmbedding(String),
    #[error("record id {0} appears twice")]
    DuplicateId(String),
    #[error("threshold {0} outside (0, 1)")]
    Threshold(f64),
    #[error("cap must be at least 1")]
    Cap,
    #[error("cluster references unknown record {0}")]
    UnknownMember(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmbeddedRecord {
    pub record: PromptRecord,
    pub vector: Vec<f64>,
}

impl EmbeddedRecord {
    pub fn new(record: PromptRecord, vector: Vec<f64>) -> Result<Self, DiversityError> {
        let norm = vector.iter().map(|x| x * x).sum::<f64>().sqrt();
        if (norm - 1.0).abs() > NORM_TOLERANCE {
            return Err(DiversityError::NotUnit {
                id: record.id.clone(),
                norm,
            });
        }
        Ok(EmbeddedRecord { record, vector })
    }

    /// Uses the embedding stored on the record itself.
    pub fn from_record(record: PromptRecord) -> Result<Self, DiversityError> {
        let vector = record
            .embedding
            .clone()
            .ok_or_else(|| DiversityError::MissingEmbedding(record.id.clone()))?;
        Self::new(record, vector)
    }

    pub fn id(&self) -> &str {
        &self.record.id
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ClusterAssignment {
    pub cluster_id: usize,
    /// Founding record.
    pub leader: String,
    /// Member ids in canonical (sorted) order.
    pub members: Vec<String>,
    /// Most distinct member.
    pub representative: String,
}

/// Dot product of two unit vectors, clamped to [-1, 1].
pub fn cosine_similarity(u: &[f64], v: &[f64]) -> Result<f64, DiversityError> {
    if u.len() != v.len() {
        return Err(DiversityError::DimensionMismatch(u.len(), v.len()));
    }
    Ok(u.iter().zip(v).map(|(a, b)| a * b).sum::<f64>().clamp(-1.0, 1.0))
}

fn check_dims(records: &[&EmbeddedRecord]) -> Result<(), DiversityError> {
    if let Some(first) = records.first() {
        let d = first.vector.len();
        if let Some(bad) = records.iter().find(|r| r.vector.len() != d) {
            return Err(DiversityError::DimensionMismatch(d, bad.vector.len()));
        }
    }
    Ok(())
}

fn sorted_by_id(records: &[EmbeddedRecord]) -> Result<Vec<&EmbeddedRecord>, DiversityError> {
    let mut sorted: Vec<&EmbeddedRecord> = records.iter().collect();
    sorted.sort_by(|a, b| a.id().cmp(b.id()));
    if let Some(w) = sorted.windows(2).find(|w| w[0].id() == w[1].id()) {
        return Err(DiversityError::DuplicateId(w[0].id().to_string()));
    }
    check_dims(&sorted)?;
    Ok(sorted)
}

/// Member with the lowest mean cosine to the other members; ties by id.
fn most_distinct(members: &[&EmbeddedRecord]) -> String {
    let means: Vec<f64> = members
        .par_iter()
        .map(|m| {
            if members.len() == 1 {
                return 0.0;
            }
            let total: f64 = members
                .iter()
                .filter(|o| o.id() != m.id())
                .map(|o| cosine_similarity(&m.vector, &o.vector).expect("dimensions checked"))
                .sum();
            total / (members.len() - 1) as f64
        })
        .collect();
    let mut best = 0;
    for i in 1..members.len() {
        let better = means[i] < means[best] || (means[i] == means[best] && members[i].id() < members[best].id());
        if better {
            best = i;
        }
    }
    members[best].id().to_string()
}

pub fn cluster(records: &[EmbeddedRecord], threshold: f64) -> Result<Vec<ClusterAssignment>, DiversityError> {
    if !(threshold > 0.0 && threshold < 1.0) {
        return Err(DiversityError::Threshold(threshold));
    }
    let sorted = sorted_by_id(records)?;
    let mut groups: Vec<Vec<&EmbeddedRecord>> = Vec::new();
    for r in sorted {
        let home = groups.iter_mut().find(|g| {
            cosine_similarity(&g[0].vector, &r.vector).expect("dimensions checked") >= threshold
        });
        match home {
            Some(g) => g.push(r),
            None => groups.push(vec![r]),
        }
    }
    Ok(groups
        .iter()
        .enumerate()
        .map(|(cluster_id, g)| ClusterAssignment {
            cluster_id,
            leader: g[0].id().to_string(),
            members: g.iter().map(|r| r.id().to_string()).collect(),
            representative: most_distinct(g),
        })
        .collect())
}

/// One representative per cluster, at most `cap` of them. Over the cap, the
/// largest clusters win (ties by representative id). Output follows cluster
/// order.
pub fn select_representatives(
    clusters: &[ClusterAssignment],
    records: &[EmbeddedRecord],
    cap: usize,
) -> Result<Vec<PromptRecord>, DiversityError> {
    if cap == 0 {
        return Err(DiversityError::Cap);
    }
    let by_id: BTreeMap<&str, &EmbeddedRecord> = records.iter().map(|r| (r.id(), r)).collect();
    let mut reps: Vec<(usize, usize, String)> = clusters
        .iter()
        .map(|c| {
            let members = c
                .members
                .iter()
                .map(|m| by_id.get(m.as_str()).copied().ok_or_else(|| DiversityError::UnknownMember(m.clone())))
                .collect::<Result<Vec<_>, _>>()?;
            check_dims(&members)?;
            Ok((c.cluster_id, c.members.len(), most_distinct(&members)))
        })
        .collect::<Result<_, DiversityError>>()?;
    if reps.len() > cap {
        reps.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.2.cmp(&b.2)));
        reps.truncate(cap);
        reps.sort_by_key(|r| r.0);
    }
    Ok(reps.into_iter().map(|(_, _, id)| by_id[id.as_str()].record.clone()).collect())
}

/// Everything the filter decided for one record set.
#[derive(Debug, Clone, PartialEq)]
pub struct DedupOutcome {
    pub clusters: Vec<ClusterAssignment>,
    pub kept: Vec<PromptRecord>,
    /// Representatives dropped by the cap.
    pub over_cap: Vec<String>,
}

pub fn dedup(records: &[EmbeddedRecord], threshold: f64, cap: usize) -> Result<DedupOutcome, DiversityError> {
    if records.is_empty() {
        return Ok(DedupOutcome {
            clusters: Vec::new(),
            kept: Vec::new(),
            over_cap: Vec::new(),
        });
    }
    let clusters = cluster(records, threshold)?;
    let kept = select_representatives(&clusters, records, cap)?;
    let kept_ids: BTreeSet<&str> = kept.iter().map(|r| r.id.as_str()).collect();
    let over_cap = clusters
        .iter()
        .map(|c| c.representative.clone())
        .filter(|id| !kept_ids.contains(id.as_str()))
        .collect();
    Ok(DedupOutcome { clusters, kept, over_cap })
}
