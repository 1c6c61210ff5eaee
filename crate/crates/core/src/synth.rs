//! Deterministic synthetic images with known ground truth.

use std::str::FromStr;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{Error, Result};
use crate::image::Image;
use crate::segment::LabelMap;

/// Fraction of the frame covered by the disc in [`SynthKind::Circle`].
pub const CIRCLE_AREA_FRACTION: f64 = 0.65;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum SynthKind {
    /// Black background with a disc whose intensity ramps left to right.
    Circle,
    /// Two flat halves, 0.25 and 0.75.
    TwoRegion,
    /// Three horizontal bands at 0.1, 0.5 and 0.9.
    ThreeLevel,
    /// Color image: a brown animal-like silhouette on a green field.
    Blob,
}

impl FromStr for SynthKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "circle" => Ok(Self::Circle),
            "two-region" => Ok(Self::TwoRegion),
            "three-level" => Ok(Self::ThreeLevel),
            "blob" | "horse" => Ok(Self::Blob),
            other => Err(Error::Parse(format!(
                "unknown synthetic image '{other}' (circle, two-region, three-level, blob)"
            ))),
        }
    }
}

#[derive(Clone, Debug)]
pub struct SynthImage {
    pub image: Image,
    pub truth: LabelMap,
    pub phases: usize,
}

impl SynthImage {
    /// Ground-truth phase fractions.
    pub fn ratios(&self) -> Vec<f64> {
        let n = self.truth.labels.len() as f64;
        (0..self.phases).map(|p| self.truth.count(p) as f64 / n).collect()
    }
}

/// Disc radius for an `size x size` circle image.
pub fn circle_radius(size: usize) -> f64 {
    size as f64 * (CIRCLE_AREA_FRACTION / std::f64::consts::PI).sqrt()
}

/// Generates `kind` at `size x size` with additive Gaussian noise of the given
/// variance, clamped to `[0, 1]`. Phase 0 is always the darker background.
pub fn generate(kind: SynthKind, size: usize, noise_variance: f64, seed: u64) -> Result<SynthImage> {
    if size < 16 {
        return Err(Error::InvalidParameter(format!("size must be >= 16, got {size}")));
    }
    if !(noise_variance >= 0.0) {
        return Err(Error::InvalidParameter("noise variance must be >= 0".into()));
    }
    let n = size;
    let c = (n as f64 - 1.0) / 2.0;
    let mut labels = vec![0usize; n * n];
    let (channels, phases) = match kind {
        SynthKind::Blob => (3, 2),
        SynthKind::ThreeLevel => (1, 3),
        _ => (1, 2),
    };
    let mut data = vec![0.0; n * n * channels];

    match kind {
        SynthKind::Circle => {
            let r = circle_radius(n);
            for y in 0..n {
                for x in 0..n {
                    let (dx, dy) = (x as f64 - c, y as f64 - c);
                    if dx * dx + dy * dy <= r * r {
                        labels[y * n + x] = 1;
                        // inhomogeneous: 0.25 at the left rim, 1.0 at the right rim
                        data[y * n + x] = 0.25 + 0.75 * ((dx + r) / (2.0 * r)).clamp(0.0, 1.0);
                    }
                }
            }
        }
        SynthKind::TwoRegion => {
            for y in 0..n {
                for x in 0..n {
                    let right = x >= n / 2;
                    labels[y * n + x] = right as usize;
                    data[y * n + x] = if right { 0.75 } else { 0.25 };
                }
            }
        }
        SynthKind::ThreeLevel => {
            for y in 0..n {
                let band = (3 * y / n).min(2);
                for x in 0..n {
                    labels[y * n + x] = band;
                    data[y * n + x] = [0.1, 0.5, 0.9][band];
                }
            }
        }
        SynthKind::Blob => {
            let s = n as f64;
            // (center x, center y, radius x, radius y) as fractions of the frame
            let parts = [
                (0.50, 0.50, 0.26, 0.14),
                (0.76, 0.34, 0.07, 0.16),
                (0.84, 0.22, 0.10, 0.06),
                (0.32, 0.72, 0.035, 0.14),
                (0.44, 0.72, 0.035, 0.14),
                (0.58, 0.72, 0.035, 0.14),
                (0.68, 0.72, 0.035, 0.14),
                (0.23, 0.48, 0.06, 0.03),
            ];
            for y in 0..n {
                for x in 0..n {
                    let (fx, fy) = ((x as f64 + 0.5) / s, (y as f64 + 0.5) / s);
                    let inside = parts.iter().any(|&(cx, cy, rx, ry)| {
                        let (u, v) = ((fx - cx) / rx, (fy - cy) / ry);
                        u * u + v * v <= 1.0
                    });
                    let j = y * n + x;
                    labels[j] = inside as usize;
                    let rgb = if inside {
                        [0.55, 0.35, 0.20]
                    } else {
                        // mild vertical shading on the field
                        [0.30, 0.55 + 0.15 * fy, 0.25]
                    };
                    data[j * 3..j * 3 + 3].copy_from_slice(&rgb);
                }
            }
        }
    }

    if noise_variance > 0.0 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let normal = Normal::new(0.0, noise_variance.sqrt()).map_err(|e| Error::InvalidParameter(e.to_string()))?;
        for v in data.iter_mut() {
            *v += normal.sample(&mut rng);
        }
    }
    let mut image = Image::new(n, n, channels, data)?;
    image.clamp_unit();
    Ok(SynthImage {
        image,
        truth: LabelMap {
            height: n,
            width: n,
            labels,
        },
        phases,
    })
}
