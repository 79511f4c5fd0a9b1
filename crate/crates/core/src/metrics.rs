//! Full-reference image quality metrics: PSNR and SSIM.
//!
//! Both operate on the 8-bit view with a dynamic range of 255. SSIM follows
//! the usual parameterization: an 11x11 Gaussian window with sigma 1.5,
//! `C1 = (0.01 * 255)^2`, `C2 = (0.03 * 255)^2`, valid-mode windows only.
//! By default it is computed on BT.601 luminance.

use std::cmp::Ordering;
use std::fmt;

use serde::{Deserialize, Deserializer, Serialize, Serializer};
use thiserror::Error;

use crate::image::ImageBuffer;

pub const MAX_VALUE: f64 = 255.0;
pub const WINDOW: usize = 11;
pub const SIGMA: f64 = 1.5;
pub const C1: f64 = (0.01 * MAX_VALUE) * (0.01 * MAX_VALUE);
pub const C2: f64 = (0.03 * MAX_VALUE) * (0.03 * MAX_VALUE);
pub const LUMA: [f64; 3] = [0.299, 0.587, 0.114];

#[derive(Debug, Error, PartialEq)]
pub enum MetricError {
    #[error("dimension mismatch: {0:?} vs {1:?}")]
    DimensionMismatch((u32, u32), (u32, u32)),
    #[error("image {0:?} is smaller than the {WINDOW}x{WINDOW} SSIM window")]
    TooSmall((u32, u32)),
}

/// PSNR in decibels. Identical images give `Infinite`, which orders above
/// every finite value and serializes as the string `"inf"`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Psnr {
    Finite(f64),
    Infinite,
}

impl Psnr {
    pub fn is_infinite(self) -> bool {
        matches!(self, Psnr::Infinite)
    }

    pub fn finite(self) -> Option<f64> {
        match self {
            Psnr::Finite(v) => Some(v),
            Psnr::Infinite => None,
        }
    }

    pub fn as_f64(self) -> f64 {
        self.finite().unwrap_or(f64::INFINITY)
    }
}

impl PartialOrd for Psnr {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl Eq for Psnr {}

impl Ord for Psnr {
    fn cmp(&self, other: &Self) -> Ordering {
        match (self, other) {
            (Psnr::Infinite, Psnr::Infinite) => Ordering::Equal,
            (Psnr::Infinite, _) => Ordering::Greater,
            (_, Psnr::Infinite) => Ordering::Less,
            (Psnr::Finite(a), Psnr::Finite(b)) => a.total_cmp(b),
        }
    }
}

impl fmt::Display for Psnr {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Psnr::Finite(v) => write!(f, "{v:.4}"),
            Psnr::Infinite => f.write_str("inf"),
        }
    }
}

impl Serialize for Psnr {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        match self {
            Psnr::Finite(v) => s.serialize_f64(*v),
            Psnr::Infinite => s.serialize_str("inf"),
        }
    }
}

impl<'de> Deserialize<'de> for Psnr {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        #[derive(Deserialize)]
        #[serde(untagged)]
        enum Raw {
            Num(f64),
            Str(String),
        }
        match Raw::deserialize(d)? {
            Raw::Num(v) => Ok(Psnr::Finite(v)),
            Raw::Str(s) if s == "inf" => Ok(Psnr::Infinite),
            Raw::Str(s) => Err(serde::de::Error::custom(format!("invalid psnr `{s}`"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ChannelPolicy {
    #[default]
    LuminanceOnly,
    MeanOverRgb,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricResult {
    pub psnr: Psnr,
    pub ssim: f64,
    pub resolution: (u32, u32),
    pub channel_policy: ChannelPolicy,
}

fn check_dims(a: &ImageBuffer, b: &ImageBuffer) -> Result<(), MetricError> {
    if a.dimensions() != b.dimensions() {
        return Err(MetricError::DimensionMismatch(a.dimensions(), b.dimensions()));
    }
    Ok(())
}

pub fn mse(reference: &ImageBuffer, candidate: &ImageBuffer) -> Result<f64, MetricError> {
    check_dims(reference, candidate)?;
    let sum: u64 = reference
        .as_bytes()
        .iter()
        .zip(candidate.as_bytes())
        .map(|(&a, &b)| {
            let d = a.abs_diff(b) as u64;
            d * d
        })
        .sum();
    Ok(sum as f64 / reference.as_bytes().len() as f64)
}

/// `10 * log10(255^2 / MSE)` with MSE over all pixels and channels.
pub fn psnr(reference: &ImageBuffer, candidate: &ImageBuffer) -> Result<Psnr, MetricError> {
    let mse = mse(reference, candidate)?;
    if mse == 0.0 {
        return Ok(Psnr::Infinite);
    }
    Ok(Psnr::Finite(10.0 * (MAX_VALUE * MAX_VALUE / mse).log10()))
}

/// Normalized 1-D Gaussian taps; the 2-D window is their outer product.
pub fn gaussian_taps() -> [f64; WINDOW] {
    let mut taps = [0.0; WINDOW];
    let half = (WINDOW / 2) as f64;
    for (i, t) in taps.iter_mut().enumerate() {
        let d = i as f64 - half;
        *t = (-(d * d) / (2.0 * SIGMA * SIGMA)).exp();
    }
    let sum: f64 = taps.iter().sum();
    taps.iter_mut().for_each(|t| *t /= sum);
    taps
}

/// A single-channel plane of f64 samples.
struct Plane {
    width: usize,
    height: usize,
    data: Vec<f64>,
}

fn luminance(img: &ImageBuffer) -> Plane {
    Plane {
        width: img.width() as usize,
        height: img.height() as usize,
        data: img
            .as_bytes()
            .chunks_exact(3)
            .map(|p| LUMA[0] * p[0] as f64 + LUMA[1] * p[1] as f64 + LUMA[2] * p[2] as f64)
            .collect(),
    }
}

fn channel(img: &ImageBuffer, c: usize) -> Plane {
    Plane {
        width: img.width() as usize,
        height: img.height() as usize,
        data: img.as_bytes().chunks_exact(3).map(|p| p[c] as f64).collect(),
    }
}

/// Separable valid-mode filtering: output is `(w - 10) x (h - 10)`.
fn filter_valid(src: &[f64], width: usize, height: usize, taps: &[f64; WINDOW]) -> Vec<f64> {
    let ow = width - WINDOW + 1;
    let oh = height - WINDOW + 1;
    let mut horiz = vec![0.0; ow * height];
    for y in 0..height {
        let row = &src[y * width..(y + 1) * width];
        for x in 0..ow {
            horiz[y * ow + x] = taps.iter().zip(&row[x..x + WINDOW]).map(|(t, v)| t * v).sum();
        }
    }
    let mut out = vec![0.0; ow * oh];
    for y in 0..oh {
        for x in 0..ow {
            let mut acc = 0.0;
            for (k, t) in taps.iter().enumerate() {
                acc += t * horiz[(y + k) * ow + x];
            }
            out[y * ow + x] = acc;
        }
    }
    out
}

fn plane_ssim(a: &Plane, b: &Plane) -> f64 {
    let taps = gaussian_taps();
    let (w, h) = (a.width, a.height);
    let prod = |f: &dyn Fn(f64, f64) -> f64| -> Vec<f64> {
        a.data.iter().zip(&b.data).map(|(&x, &y)| f(x, y)).collect()
    };
    let mu_a = filter_valid(&a.data, w, h, &taps);
    let mu_b = filter_valid(&b.data, w, h, &taps);
    let aa = filter_valid(&prod(&|x, _| x * x), w, h, &taps);
    let bb = filter_valid(&prod(&|_, y| y * y), w, h, &taps);
    let ab = filter_valid(&prod(&|x, y| x * y), w, h, &taps);
    let n = mu_a.len();
    let mut total = 0.0;
    for i in 0..n {
        let (ma, mb) = (mu_a[i], mu_b[i]);
        let var_a = aa[i] - ma * ma;
        let var_b = bb[i] - mb * mb;
        let cov = ab[i] - ma * mb;
        total += ((2.0 * ma * mb + C1) * (2.0 * cov + C2))
            / ((ma * ma + mb * mb + C1) * (var_a + var_b + C2));
    }
    total / n as f64
}

pub fn ssim(reference: &ImageBuffer, candidate: &ImageBuffer) -> Result<f64, MetricError> {
    ssim_with(reference, candidate, ChannelPolicy::LuminanceOnly)
}

pub fn ssim_with(
    reference: &ImageBuffer,
    candidate: &ImageBuffer,
    policy: ChannelPolicy,
) -> Result<f64, MetricError> {
    check_dims(reference, candidate)?;
    let (w, h) = reference.dimensions();
    if (w.min(h) as usize) < WINDOW {
        return Err(MetricError::TooSmall((w, h)));
    }
    if reference == candidate {
        return Ok(1.0);
    }
    Ok(match policy {
        ChannelPolicy::LuminanceOnly => plane_ssim(&luminance(reference), &luminance(candidate)),
        ChannelPolicy::MeanOverRgb => {
            (0..3)
                .map(|c| plane_ssim(&channel(reference, c), &channel(candidate, c)))
                .sum::<f64>()
                / 3.0
        }
    })
}

pub fn score_candidate(reference: &ImageBuffer, candidate: &ImageBuffer) -> Result<MetricResult, MetricError> {
    score_candidate_with(reference, candidate, ChannelPolicy::LuminanceOnly)
}

pub fn score_candidate_with(
    reference: &ImageBuffer,
    candidate: &ImageBuffer,
    policy: ChannelPolicy,
) -> Result<MetricResult, MetricError> {
    Ok(MetricResult {
        psnr: psnr(reference, candidate)?,
        ssim: ssim_with(reference, candidate, policy)?,
        resolution: reference.dimensions(),
        channel_policy: policy,
    })
}
