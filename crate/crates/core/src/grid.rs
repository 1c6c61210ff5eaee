//! Discrete differential operators on 2D pixel grids.
//!
//! Pixels are stored row-major: pixel `(row, col)` lives at `row * width + col`.
//! The gradient uses forward differences with a Neumann boundary (the last
//! difference along each axis is zero) and the divergence is its exact
//! negative adjoint, so `<grad u, q> = -<u, div q>` holds to rounding.

use crate::error::{Error, Result};
use crate::image::Image;

#[derive(Clone, Debug, PartialEq)]
pub struct ScalarGrid {
    pub height: usize,
    pub width: usize,
    pub data: Vec<f64>,
}

impl ScalarGrid {
    pub fn new(height: usize, width: usize, data: Vec<f64>) -> Result<Self> {
        if height == 0 || width == 0 {
            return Err(Error::Shape("grid must be nonempty".into()));
        }
        if data.len() != height * width {
            return Err(Error::Shape(format!(
                "grid {height}x{width} needs {} values, got {}",
                height * width,
                data.len()
            )));
        }
        Ok(Self { height, width, data })
    }

    pub fn zeros(height: usize, width: usize) -> Self {
        Self::filled(height, width, 0.0)
    }

    pub fn filled(height: usize, width: usize, value: f64) -> Self {
        Self {
            height,
            width,
            data: vec![value; height * width],
        }
    }

    #[inline]
    pub fn len(&self) -> usize {
        self.data.len()
    }

    #[inline]
    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    #[inline]
    pub fn get(&self, row: usize, col: usize) -> f64 {
        self.data[row * self.width + col]
    }

    pub fn dot(&self, other: &ScalarGrid) -> f64 {
        self.data.iter().zip(&other.data).map(|(a, b)| a * b).sum()
    }

    pub fn sum(&self) -> f64 {
        self.data.iter().sum()
    }
}

/// A 2-component field; `x` holds the column-direction component.
#[derive(Clone, Debug, PartialEq)]
pub struct VectorGrid {
    pub height: usize,
    pub width: usize,
    pub x: Vec<f64>,
    pub y: Vec<f64>,
}

impl VectorGrid {
    pub fn zeros(height: usize, width: usize) -> Self {
        Self {
            height,
            width,
            x: vec![0.0; height * width],
            y: vec![0.0; height * width],
        }
    }

    pub fn new(height: usize, width: usize, x: Vec<f64>, y: Vec<f64>) -> Result<Self> {
        if height == 0 || width == 0 || x.len() != height * width || y.len() != height * width {
            return Err(Error::Shape(format!(
                "vector grid {height}x{width} got components of length {} and {}",
                x.len(),
                y.len()
            )));
        }
        Ok(Self { height, width, x, y })
    }

    #[inline]
    pub fn len(&self) -> usize {
        self.x.len()
    }

    #[inline]
    pub fn is_empty(&self) -> bool {
        self.x.is_empty()
    }

    #[inline]
    pub fn norm_at(&self, idx: usize) -> f64 {
        self.x[idx].hypot(self.y[idx])
    }

    pub fn dot(&self, other: &VectorGrid) -> f64 {
        let dx: f64 = self.x.iter().zip(&other.x).map(|(a, b)| a * b).sum();
        let dy: f64 = self.y.iter().zip(&other.y).map(|(a, b)| a * b).sum();
        dx + dy
    }
}

/// Forward-difference gradient of a row-major slice.
pub(crate) fn gradient_into(height: usize, width: usize, u: &[f64], gx: &mut [f64], gy: &mut [f64]) {
    for r in 0..height {
        let row = r * width;
        for c in 0..width {
            let i = row + c;
            gx[i] = if c + 1 < width { u[i + 1] - u[i] } else { 0.0 };
            gy[i] = if r + 1 < height { u[i + width] - u[i] } else { 0.0 };
        }
    }
}

/// Backward-difference divergence matching [`gradient_into`].
pub(crate) fn divergence_into(height: usize, width: usize, px: &[f64], py: &[f64], out: &mut [f64]) {
    for r in 0..height {
        let row = r * width;
        for c in 0..width {
            let i = row + c;
            let dx = if width == 1 {
                0.0
            } else if c == 0 {
                px[i]
            } else if c + 1 == width {
                -px[i - 1]
            } else {
                px[i] - px[i - 1]
            };
            let dy = if height == 1 {
                0.0
            } else if r == 0 {
                py[i]
            } else if r + 1 == height {
                -py[i - width]
            } else {
                py[i] - py[i - width]
            };
            out[i] = dx + dy;
        }
    }
}

pub fn gradient(u: &ScalarGrid) -> VectorGrid {
    let mut g = VectorGrid::zeros(u.height, u.width);
    gradient_into(u.height, u.width, &u.data, &mut g.x, &mut g.y);
    g
}

pub fn divergence(q: &VectorGrid) -> ScalarGrid {
    let mut out = ScalarGrid::zeros(q.height, q.width);
    divergence_into(q.height, q.width, &q.x, &q.y, &mut out.data);
    out
}

/// Maps an out-of-range index into `0..n` by half-sample symmetric reflection
/// (`... b a | a b c ... z | z y ...`).
#[inline]
fn reflect(i: isize, n: usize) -> usize {
    let n = n as isize;
    let m = i.rem_euclid(2 * n);
    (if m < n { m } else { 2 * n - 1 - m }) as usize
}

fn gaussian_taps(sigma: f64) -> Vec<f64> {
    let radius = (3.0 * sigma).ceil() as isize;
    let mut taps: Vec<f64> = (-radius..=radius)
        .map(|t| (-(t * t) as f64 / (2.0 * sigma * sigma)).exp())
        .collect();
    let total: f64 = taps.iter().sum();
    taps.iter_mut().for_each(|w| *w /= total);
    taps
}

/// Separable Gaussian blur truncated at `ceil(3 sigma)` taps per side.
///
/// Borders use symmetric reflection, which makes the operator symmetric: it
/// preserves constants and total mass at the same time.
pub fn gaussian_convolve(g: &ScalarGrid, sigma: f64) -> Result<ScalarGrid> {
    if !(sigma >= 0.0) || !sigma.is_finite() {
        return Err(Error::InvalidParameter(format!("sigma must be >= 0, got {sigma}")));
    }
    if sigma == 0.0 {
        return Ok(g.clone());
    }
    let taps = gaussian_taps(sigma);
    let radius = (taps.len() / 2) as isize;
    let (h, w) = (g.height, g.width);

    let mut tmp = vec![0.0; h * w];
    for r in 0..h {
        let row = &g.data[r * w..(r + 1) * w];
        for c in 0..w {
            let mut acc = 0.0;
            for (k, wt) in taps.iter().enumerate() {
                acc += wt * row[reflect(c as isize + k as isize - radius, w)];
            }
            tmp[r * w + c] = acc;
        }
    }
    let mut out = vec![0.0; h * w];
    for r in 0..h {
        for c in 0..w {
            let mut acc = 0.0;
            for (k, wt) in taps.iter().enumerate() {
                acc += wt * tmp[reflect(r as isize + k as isize - radius, h) * w + c];
            }
            out[r * w + c] = acc;
        }
    }
    Ok(ScalarGrid {
        height: h,
        width: w,
        data: out,
    })
}

/// Edge-stopping weight `1 / (1 + sharpness * |grad(k * h)|)`.
///
/// Computed once from the input image and then held fixed, so the TV dual
/// constraint set does not move during the iteration.
#[derive(Clone, Debug, PartialEq)]
pub struct EdgeWeight {
    pub grid: ScalarGrid,
    pub sharpness: f64,
    pub sigma: f64,
}

impl EdgeWeight {
    /// All-ones weight, i.e. plain isotropic TV.
    pub fn uniform(height: usize, width: usize) -> Self {
        Self {
            grid: ScalarGrid::filled(height, width, 1.0),
            sharpness: 0.0,
            sigma: 0.0,
        }
    }
}

pub fn edge_weight(h: &Image, eps_prime: f64, sigma: f64) -> Result<EdgeWeight> {
    if !(eps_prime >= 0.0) {
        return Err(Error::InvalidParameter(format!(
            "edge sharpness must be >= 0, got {eps_prime}"
        )));
    }
    let mean = h.channel_mean();
    let smooth = gaussian_convolve(&mean, sigma)?;
    let grad = gradient(&smooth);
    let data = (0..grad.len())
        .map(|i| 1.0 / (1.0 + eps_prime * grad.norm_at(i)))
        .collect();
    Ok(EdgeWeight {
        grid: ScalarGrid {
            height: h.height,
            width: h.width,
            data,
        },
        sharpness: eps_prime,
        sigma,
    })
}
