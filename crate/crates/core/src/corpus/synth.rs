//! Procedural stand-in corpus: one small clean/degraded pair set per task.
//!
//! Only meant for smoke runs against mock backends; real experiments point a
//! manifest at the source datasets.

use std::path::{Path, PathBuf};

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use super::{split_dataset, CorpusError, DatasetDescriptor, ImagePair, Split};
use crate::catalog::TaskCatalog;
use crate::image::ImageBuffer;
use crate::util;

const WIDTH: u32 = 96;
const HEIGHT: u32 = 64;

/// Writes `per_task` pairs for every catalog task under `dir`, splits them
/// 70/30 and saves `dir/manifest.jsonl`. Returns the manifest path.
pub fn synthesize_corpus(
    dir: &Path,
    catalog: &TaskCatalog,
    per_task: usize,
    seed: u64,
) -> Result<PathBuf, CorpusError> {
    let root = dir.to_path_buf();
    let mut descriptor = DatasetDescriptor {
        root: root.clone(),
        tasks: Default::default(),
    };
    for task in catalog.list_tasks() {
        let mut pairs = Vec::with_capacity(per_task);
        for i in 0..per_task {
            let mut rng = util::rng(seed, &["synth", &task.id, &i.to_string()]);
            let clean = scene(&mut rng);
            let degraded = degrade(&task.id, &clean, &mut rng);
            let key = format!("{i:04}");
            let input = root.join(&task.id).join(format!("{key}_input.png"));
            let label = root.join(&task.id).join(format!("{key}_label.png"));
            degraded.save_png(&input)?;
            clean.save_png(&label)?;
            pairs.push(ImagePair {
                pair_key: key,
                input,
                label,
                split: Split::Unsplit,
            });
        }
        descriptor.tasks.insert(task.id.clone(), pairs);
    }
    let descriptor = split_dataset(&descriptor, seed)?;
    let manifest = root.join("manifest.jsonl");
    descriptor.save_manifest(&manifest)?;
    Ok(manifest)
}

fn scene(rng: &mut ChaCha8Rng) -> ImageBuffer {
    let base: [f64; 3] = [rng.random_range(40.0..200.0), rng.random_range(40.0..200.0), rng.random_range(40.0..200.0)];
    let grad: [f64; 3] = [rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)];
    let (cx, cy, r) = (
        rng.random_range(20.0..76.0),
        rng.random_range(16.0..48.0),
        rng.random_range(8.0..20.0),
    );
    let disc: [f64; 3] = [rng.random_range(0.0..255.0), rng.random_range(0.0..255.0), rng.random_range(0.0..255.0)];
    let (rx, ry) = (rng.random_range(0..60u32), rng.random_range(0..40u32));
    ImageBuffer::from_fn(WIDTH, HEIGHT, |x, y| {
        let (fx, fy) = (x as f64, y as f64);
        if ((fx - cx).powi(2) + (fy - cy).powi(2)).sqrt() < r {
            return disc.map(|v| v as u8);
        }
        if (rx..rx + 24).contains(&x) && (ry..ry + 12).contains(&y) {
            return [230, 230, 220];
        }
        let mut px = [0u8; 3];
        for c in 0..3 {
            px[c] = (base[c] + grad[c] * (fx + fy)).clamp(0.0, 255.0) as u8;
        }
        px
    })
    .expect("fixed synthetic dimensions")
}

fn map_pixels(img: &ImageBuffer, mut f: impl FnMut(u32, u32, [u8; 3]) -> [u8; 3]) -> ImageBuffer {
    ImageBuffer::from_fn(img.width(), img.height(), |x, y| f(x, y, img.pixel(x, y)))
        .expect("same dimensions as source")
}

fn box_blur(img: &ImageBuffer, radius: i64) -> ImageBuffer {
    let (w, h) = (img.width() as i64, img.height() as i64);
    map_pixels(img, |x, y, _| {
        let mut acc = [0u32; 3];
        let mut n = 0;
        for dx in -radius..=radius {
            let sx = (x as i64 + dx).clamp(0, w - 1) as u32;
            let sy = (y as i64 + dx / 2).clamp(0, h - 1) as u32;
            let p = img.pixel(sx, sy);
            for c in 0..3 {
                acc[c] += p[c] as u32;
            }
            n += 1;
        }
        acc.map(|v| (v / n) as u8)
    })
}

fn degrade(task: &str, clean: &ImageBuffer, rng: &mut ChaCha8Rng) -> ImageBuffer {
    let clamp = |v: f64| v.clamp(0.0, 255.0) as u8;
    match task {
        "deblurring" => box_blur(clean, 4),
        "dehazing" => {
            let t = rng.random_range(0.4..0.6);
            map_pixels(clean, |_, _, p| p.map(|v| clamp(v as f64 * t + 220.0 * (1.0 - t))))
        }
        "demoireing" => {
            let freq = rng.random_range(0.6..1.2);
            map_pixels(clean, |x, y, p| {
                let wave = 30.0 * ((x as f64 * freq + y as f64 * 0.3 * freq).sin());
                p.map(|v| clamp(v as f64 + wave))
            })
        }
        "denoising" => {
            let sigma = rng.random_range(15.0..30.0);
            map_pixels(clean, |_, _, p| p.map(|v| clamp(v as f64 + rng.random_range(-sigma..sigma))))
        }
        "deraining" => {
            let phase = rng.random_range(0..7u32);
            map_pixels(clean, |x, y, p| {
                if (x * 3 + y + phase) % 11 == 0 {
                    p.map(|v| clamp(v as f64 * 0.4 + 150.0))
                } else {
                    p
                }
            })
        }
        "reflection-removal" => map_pixels(clean, |x, y, p| {
            let ghost = clean.pixel(WIDTH - 1 - x, y);
            [0, 1, 2].map(|c| clamp(0.7 * p[c] as f64 + 0.3 * ghost[c] as f64))
        }),
        "shadow-removal" => {
            let edge = rng.random_range(30..60u32);
            map_pixels(clean, |x, _, p| if x < edge { p.map(|v| clamp(v as f64 * 0.45)) } else { p })
        }
        "colorization" => map_pixels(clean, |_, _, p| {
            let y = clamp(0.299 * p[0] as f64 + 0.587 * p[1] as f64 + 0.114 * p[2] as f64);
            [y, y, y]
        }),
        "harmonization" => {
            let (x0, y0) = (rng.random_range(0..48u32), rng.random_range(0..32u32));
            map_pixels(clean, |x, y, p| {
                if (x0..x0 + 40).contains(&x) && (y0..y0 + 24).contains(&y) {
                    [clamp(p[0] as f64 * 1.3), p[1], clamp(p[2] as f64 * 0.7)]
                } else {
                    p
                }
            })
        }
        "inpainting" => {
            let (x0, y0) = (rng.random_range(0..64u32), rng.random_range(0..40u32));
            map_pixels(clean, |x, y, p| {
                if (x0..x0 + 24).contains(&x) && (y0..y0 + 16).contains(&y) {
                    [0, 0, 0]
                } else {
                    p
                }
            })
        }
        "light-enhancement" => map_pixels(clean, |_, _, p| p.map(|v| clamp(255.0 * (v as f64 / 255.0).powf(2.2) * 0.6))),
        "style-transfer" => map_pixels(clean, |_, _, p| {
            [clamp(p[0] as f64 * 0.25), clamp(p[1] as f64 * 0.3), clamp(p[2] as f64 * 0.5 + 30.0)]
        }),
        _ => box_blur(clean, 2),
    }
}
