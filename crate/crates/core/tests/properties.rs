//! Property tests against small independent oracles.

use std::collections::HashMap;

use proptest::prelude::*;

use vicl_core::catalog::TaskCatalog;
use vicl_core::corpus::train_count;
use vicl_core::diversity::{self, EmbeddedRecord};
use vicl_core::gateway::mock::{trigram_bucket, trigram_counts, MOCK_EMBED_DIM};
use vicl_core::gateway::Gateway;
use vicl_core::image::ImageBuffer;
use vicl_core::metrics::{self, Psnr};
use vicl_core::prompt::{lint_implicitness, PromptGenerator, PromptRecord};
use vicl_core::runner::{select_best, CandidateResult, CandidateStatus};
use vicl_core::vie::{self, SubScores};

/// Counts every 3-byte window by content, then folds into buckets.
fn oracle_trigrams(text: &str, dim: usize) -> Vec<f64> {
    let padded: Vec<u8> = format!(" {text} ").into_bytes();
    let mut by_gram: HashMap<[u8; 3], usize> = HashMap::new();
    for i in 0..padded.len().saturating_sub(2) {
        *by_gram.entry([padded[i], padded[i + 1], padded[i + 2]]).or_default() += 1;
    }
    let mut v = vec![0.0; dim];
    for (g, n) in by_gram {
        v[trigram_bucket(&g, dim)] += n as f64;
    }
    v
}

fn candidate(attempt: u32, status: CandidateStatus, psnr: Option<Psnr>) -> CandidateResult {
    CandidateResult {
        attempt,
        status,
        error: None,
        image: None,
        image_digest: None,
        psnr,
        ssim: None,
        resolution: None,
        vie: None,
        vie_error: None,
        prompt_used: None,
    }
}

fn record(text: &str, v: Vec<f64>) -> EmbeddedRecord {
    let cat = TaskCatalog::builtin();
    let r = PromptRecord::new(
        text,
        cat.parse_pair("deblurring:dehazing").unwrap(),
        "s",
        PromptGenerator::Teacher,
        cat,
    )
    .unwrap();
    let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    EmbeddedRecord::new(r, v.into_iter().map(|x| x / n).collect()).unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn trigram_counts_match_oracle(text in "[a-z ,.]{0,60}") {
        prop_assert_eq!(trigram_counts(&text, MOCK_EMBED_DIM), oracle_trigrams(&text, MOCK_EMBED_DIM));
    }

    #[test]
    fn mock_embeddings_are_unit_and_cosine_is_dot(a in "[a-z ]{3,40}", b in "[a-z ]{3,40}") {
        let gw = Gateway::mock();
        let e = gw.embed_text(&[a, b]).unwrap();
        for v in &e {
            let n: f64 = v.iter().map(|x| x * x).sum();
            prop_assert!((n - 1.0).abs() < 1e-9);
        }
        let dot: f64 = e[0].iter().zip(&e[1]).map(|(x, y)| x * y).sum();
        let cos = diversity::cosine_similarity(&e[0], &e[1]).unwrap();
        prop_assert!((cos - dot.clamp(-1.0, 1.0)).abs() < 1e-12);
    }

    #[test]
    fn psnr_falls_as_noise_grows(seed in any::<u64>(), step in 1u8..20) {
        let base = ImageBuffer::from_fn(24, 24, |x, y| [(x * 7 + 60) as u8, (y * 5 + 60) as u8, 128]).unwrap();
        let mut last = f64::INFINITY;
        for level in 1..=4u8 {
            let amp = level * step;
            // Alternating ±amp keeps the error exactly amp per byte, away from clipping.
            let data = base.as_bytes().iter().enumerate().map(|(i, &v)| {
                if (i as u64 ^ seed).is_multiple_of(2) { v.saturating_add(amp) } else { v.saturating_sub(amp) }
            }).collect();
            let p = metrics::psnr(&base, &ImageBuffer::new(24, 24, data).unwrap()).unwrap().as_f64();
            prop_assert!(p < last, "amp {amp}: {p} !< {last}");
            last = p;
        }
    }

    #[test]
    fn ssim_is_symmetric_and_bounded(seed in any::<u64>()) {
        let a = ImageBuffer::from_fn(20, 20, |x, y| [((x * 13 + y * 7) as u64 ^ seed) as u8, (y * 9) as u8, (x * 11) as u8]).unwrap();
        let b = ImageBuffer::from_fn(20, 20, |x, y| [((x * 5 + y * 3) as u64 ^ (seed >> 8)) as u8, (x * 9) as u8, (y * 4) as u8]).unwrap();
        let ab = metrics::ssim(&a, &b).unwrap();
        let ba = metrics::ssim(&b, &a).unwrap();
        prop_assert!((ab - ba).abs() < 1e-12);
        prop_assert!((-1.0..=1.0).contains(&ab));
    }

    #[test]
    fn vie_overall_is_geometric_mean_of_minima(
        sc in prop::collection::vec(0.0f64..=10.0, 1..6),
        pq in prop::collection::vec(0.0f64..=10.0, 1..6),
    ) {
        let r = vie::aggregate(&SubScores::from_values(&sc, &pq, ""));
        let min = |v: &[f64]| v.iter().cloned().fold(f64::INFINITY, f64::min);
        let want = (min(&sc) / 10.0 * min(&pq) / 10.0).sqrt();
        prop_assert!((r.overall - want).abs() < 1e-12);
        prop_assert!((r.overall_0_10 - 10.0 * want).abs() < 1e-9);
        prop_assert!((0.0..=1.0).contains(&r.overall));
    }

    #[test]
    fn select_best_matches_linear_scan(
        cands in prop::collection::vec((0u8..3, prop::option::of(0u8..6)), 1..12),
    ) {
        let cs: Vec<CandidateResult> = cands.iter().enumerate().map(|(i, &(s, p))| {
            let status = [CandidateStatus::Ok, CandidateStatus::Refused, CandidateStatus::Failed][s as usize];
            let psnr = p.map(|v| if v == 5 { Psnr::Infinite } else { Psnr::Finite(20.0 + v as f64) });
            candidate(i as u32, status, if status == CandidateStatus::Ok { psnr } else { None })
        }).collect();
        // Oracle: the maximum value first, then the smallest attempt holding it.
        let ok: Vec<(u32, f64)> = cs.iter()
            .filter(|c| c.status == CandidateStatus::Ok && c.psnr.is_some())
            .map(|c| (c.attempt, c.psnr.unwrap().as_f64()))
            .collect();
        let max = ok.iter().map(|c| c.1).fold(f64::NEG_INFINITY, f64::max);
        let want = ok.iter().filter(|c| c.1 == max).map(|c| c.0).min();
        prop_assert_eq!(select_best(&cs), want);
    }

    #[test]
    fn cluster_partitions_records(vectors in prop::collection::vec(prop::collection::vec(-1.0f64..1.0, 4), 1..25), t in 0.05f64..0.99) {
        let vectors: Vec<Vec<f64>> = vectors.into_iter().filter(|v| v.iter().any(|x| x.abs() > 1e-3)).collect();
        prop_assume!(!vectors.is_empty());
        let recs: Vec<EmbeddedRecord> = vectors.into_iter().enumerate().map(|(i, v)| record(&format!("item {i}"), v)).collect();
        let clusters = diversity::cluster(&recs, t).unwrap();
        let mut seen: Vec<&str> = clusters.iter().flat_map(|c| c.members.iter().map(String::as_str)).collect();
        seen.sort();
        let mut ids: Vec<&str> = recs.iter().map(|r| r.id()).collect();
        ids.sort();
        prop_assert_eq!(seen, ids);
        let by_id: HashMap<&str, &EmbeddedRecord> = recs.iter().map(|r| (r.id(), r)).collect();
        for c in &clusters {
            prop_assert!(c.members.contains(&c.representative));
            let leader = &by_id[c.leader.as_str()].vector;
            for m in &c.members {
                let v = &by_id[m.as_str()].vector;
                let dot: f64 = leader.iter().zip(v).map(|(a, b)| a * b).sum();
                prop_assert!(dot >= t - 1e-12);
            }
        }
    }

    #[test]
    fn dedup_respects_cap(n in 1usize..20, cap in 1usize..10) {
        let recs: Vec<EmbeddedRecord> = (0..n).map(|i| {
            let mut v = vec![0.0; 20];
            v[i] = 1.0;
            record(&format!("orthogonal {i}"), v)
        }).collect();
        let out = diversity::dedup(&recs, 0.5, cap).unwrap();
        prop_assert_eq!(out.kept.len(), n.min(cap));
        prop_assert_eq!(out.over_cap.len(), n - n.min(cap));
    }

    #[test]
    fn train_count_is_half_up(n in 0usize..10_000) {
        // Exact decimal: 0.7·n = 7n/10, ties (remainder 5) round up.
        let (q, r) = (7 * n / 10, 7 * n % 10);
        let want = if r >= 5 { q + 1 } else { q };
        prop_assert_eq!(train_count(n), want);
        prop_assert!(train_count(n) <= n);
    }

    #[test]
    fn lint_is_case_insensitive(upper in any::<bool>()) {
        let cat = TaskCatalog::builtin();
        let pair = cat.parse_pair("deraining:denoising").unwrap();
        let text = if upper { "Apply DERAINING here" } else { "apply deraining here" };
        prop_assert!(!lint_implicitness(text, &pair, cat).unwrap().is_clean());
    }
}
