//! Deterministic in-process backends behind `mock://` endpoints.
//!
//! Every answer is a pure function of the request payload, so a whole
//! pipeline run against mocks is byte-reproducible.

use std::time::Duration;

use rand::Rng;

use super::wire::{self, OutputKind, WireRequest, WireResponse};
use super::{BackendRole, Transport, TransportError};
use crate::image::ImageBuffer;
use crate::prompt::SlotRole;
use crate::util;

pub const MOCK_EMBED_DIM: usize = 384;
const OUTPUT_SIDE: u32 = 224;

// Phrase banks avoid every catalog lexeme so mock descriptions lint clean
// for any pair.
const GOALS: &[&str] = &[
    "recover a crisp, faithful version of the scene",
    "make the scene look as if captured under ideal conditions",
    "produce a clean photograph with natural tones",
    "reveal the underlying scene content clearly",
    "obtain an image with consistent, believable appearance",
];
const DEGRADATIONS: &[&str] = &[
    "smeared edges and a loss of fine texture",
    "a milky veil that flattens contrast toward the horizon",
    "grainy speckle scattered across flat regions",
    "thin bright streaks crossing the frame diagonally",
    "muted, washed-out colors and a dim overall exposure",
    "regular wavy interference patterns over surfaces",
    "a region whose appearance does not match its surroundings",
];
const CHANGES: &[&str] = &[
    "edges become sharp and small details reappear",
    "contrast and saturation return while geometry stays fixed",
    "flat areas become smooth and uniform without losing structure",
    "occluding artifacts disappear and the hidden background is filled in plausibly",
    "brightness rises evenly and colors become vivid but natural",
    "the overall palette shifts toward a coherent, balanced look",
];

#[derive(Debug, Clone)]
pub struct MockBackend {
    role: BackendRole,
    refuse: bool,
}

impl MockBackend {
    /// `endpoint` is `mock://<name>`; the name `refusing` makes text and image
    /// requests answer with a refusal.
    pub fn new(role: BackendRole, endpoint: &str) -> Self {
        let name = endpoint.trim_start_matches("mock://");
        MockBackend {
            role,
            refuse: name.starts_with("refusing"),
        }
    }
}

fn pick<'a>(bank: &[&'a str], digest: &[u8], at: usize) -> &'a str {
    bank[digest[at] as usize % bank.len()]
}

/// Digest of the request with the sampling index zeroed.
fn content_digest(req: &WireRequest) -> Vec<u8> {
    let mut base = req.clone();
    base.attempt = 0;
    let json = serde_json::to_vec(&base).expect("wire request serializes");
    hex::decode(util::sha256_hex(&[&json])).expect("hex from sha256")
}

fn text_answer(req: &WireRequest, digest: &[u8]) -> String {
    let (g, d, c) = (pick(GOALS, digest, 0), pick(DEGRADATIONS, digest, 1), pick(CHANGES, digest, 2));
    match req.kind.as_str() {
        "teacher_elicitation" => format!(
            "Target goal: {g}. Input degradation or attribute: the third image shows {d}. \
             Visual changes from input to output: {c}."
        ),
        _ => format!("Transform the third image to {g}. It currently shows {d}; in the result, {c}."),
    }
}

fn evaluator_answer(req: &WireRequest, digest: &[u8]) -> String {
    let score = |i: usize| 4 + digest[8 + i] % 7;
    let (key, labels) = if req.kind == "vie_pq" {
        ("pq", ["naturalness", "artifact_freedom"])
    } else {
        ("sc", ["instruction_adherence", "condition_consistency"])
    };
    let rationale = format!(
        "The synthesized image was compared against the rubric; {} scored {} and {} scored {}.",
        labels[0],
        score(0),
        labels[1],
        score(1)
    );
    let block = serde_json::json!({
        key: [
            {"label": labels[0], "score": score(0)},
            {"label": labels[1], "score": score(1)},
        ],
        "rationale": rationale,
    });
    format!("{rationale}\n{block}")
}

fn generated_image(req: &WireRequest, digest: &[u8]) -> Result<ImageBuffer, String> {
    let query = req
        .images()
        .find(|(_, role, _)| *role == SlotRole::QueryInput)
        .or_else(|| req.images().last());
    let base = match query {
        Some((_, _, data)) => wire::decode_image(data)?,
        None => ImageBuffer::filled(OUTPUT_SIDE, OUTPUT_SIDE, [128, 128, 128]).map_err(|e| e.to_string())?,
    };
    let base = if base.dimensions() == (OUTPUT_SIDE, OUTPUT_SIDE) {
        base
    } else {
        base.fit_cover(OUTPUT_SIDE, OUTPUT_SIDE, (0.5, 0.5)).map_err(|e| e.to_string())?
    };
    let seed = u64::from_le_bytes(digest[..8].try_into().expect("digest is 32 bytes"));
    let mut rng = util::rng(seed, &["generate", &req.attempt.to_string()]);
    let amp = 2.0 + 10.0 * req.temperature.max(0.0);
    let shift: f64 = rng.random_range(-amp..=amp);
    let data = base
        .as_bytes()
        .iter()
        .map(|&v| (v as f64 + shift + rng.random_range(-amp..=amp)).round().clamp(0.0, 255.0) as u8)
        .collect();
    ImageBuffer::new(OUTPUT_SIDE, OUTPUT_SIDE, data).map_err(|e| e.to_string())
}

/// FNV-1a of a byte trigram.
pub fn trigram_bucket(tri: &[u8], dim: usize) -> usize {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for &b in tri {
        h ^= b as u64;
        h = h.wrapping_mul(0x0100_0000_01b3);
    }
    (h % dim as u64) as usize
}

/// Raw trigram counts of the space-padded text; the gateway normalizes.
pub fn trigram_counts(text: &str, dim: usize) -> Vec<f64> {
    let padded = format!(" {text} ");
    let mut v = vec![0.0; dim];
    for tri in padded.as_bytes().windows(3) {
        v[trigram_bucket(tri, dim)] += 1.0;
    }
    v
}

impl Transport for MockBackend {
    fn post(&self, body: &str, _timeout: Duration) -> Result<(u16, String), TransportError> {
        let req: WireRequest = match serde_json::from_str(body) {
            Ok(r) => r,
            Err(e) => return Ok((400, format!("{{\"error\":\"bad request: {e}\"}}"))),
        };
        let digest = content_digest(&req);
        let mut resp = WireResponse::default();
        match (self.role, req.output) {
            (BackendRole::Embedder, OutputKind::Embedding) => {
                resp.embeddings = Some(req.input.iter().map(|t| trigram_counts(t, MOCK_EMBED_DIM)).collect());
            }
            _ if self.refuse => resp.refusal = Some("request declined by content policy".into()),
            (BackendRole::Generator, OutputKind::Image) => match generated_image(&req, &digest) {
                Ok(img) => resp.image = Some(wire::encode_image(&img)),
                Err(e) => return Ok((400, format!("{{\"error\":\"{e}\"}}"))),
            },
            (BackendRole::Evaluator, OutputKind::Text) => resp.text = Some(evaluator_answer(&req, &digest)),
            (BackendRole::Teacher | BackendRole::Student, OutputKind::Text) => {
                // Text sampling varies with the attempt index, like a nonzero temperature would.
                let sampled = hex::decode(util::sha256_hex(&[&digest, &req.attempt.to_le_bytes()])).expect("hex");
                resp.text = Some(text_answer(&req, &sampled))
            }
            (role, out) => {
                return Ok((
                    400,
                    format!("{{\"error\":\"{role:?} backend cannot produce {out:?}\"}}"),
                ))
            }
        }
        Ok((200, serde_json::to_string(&resp).expect("response serializes")))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::catalog::TaskCatalog;
    use crate::prompt::scan_lexemes;

    #[test]
    fn phrase_banks_are_lint_clean_for_all_tasks() {
        let cat = TaskCatalog::builtin();
        for phrase in GOALS.iter().chain(DEGRADATIONS).chain(CHANGES) {
            let hits = scan_lexemes(phrase, cat.list_tasks().iter());
            assert!(hits.is_empty(), "{phrase}: {hits:?}");
        }
    }
}
