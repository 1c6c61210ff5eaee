//! Per-phase statistics and the similarity cost volume `C[i, j]`.

use std::fmt::Write as _;
use std::str::FromStr;

use ndarray::{Array2, ArrayView2, Axis};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::image::Image;

/// Added to every covariance diagonal built from data.
pub const COVARIANCE_FLOOR: f64 = 1e-6;

/// Phases whose soft mass falls below this many pixels keep their previous
/// statistics in [`update_statistics`].
pub const MIN_PHASE_MASS: f64 = 1e-8;

/// Means, covariances and mixture weights, one entry per phase.
///
/// Covariances are `channels x channels`, stored row-major.
#[derive(Clone, Debug, PartialEq)]
pub struct PhaseStats {
    pub channels: usize,
    pub means: Vec<Vec<f64>>,
    pub covariances: Vec<Vec<f64>>,
    pub weights: Vec<f64>,
}

impl PhaseStats {
    /// Identity covariances and uniform weights around the given means.
    pub fn from_means(means: Vec<Vec<f64>>) -> Result<Self> {
        let channels = means.first().map(|m| m.len()).unwrap_or(0);
        if channels == 0 || means.iter().any(|m| m.len() != channels) {
            return Err(Error::Shape("means must be nonempty and share one dimension".into()));
        }
        let n = means.len();
        let identity: Vec<f64> = (0..channels * channels)
            .map(|k| if k / channels == k % channels { 1.0 } else { 0.0 })
            .collect();
        Ok(Self {
            channels,
            covariances: vec![identity; n],
            weights: vec![1.0 / n as f64; n],
            means,
        })
    }

    pub fn phases(&self) -> usize {
        self.means.len()
    }

    fn check_image(&self, h: &Image) -> Result<()> {
        if h.channels != self.channels {
            return Err(Error::Shape(format!(
                "statistics have {} channels, image has {}",
                self.channels, h.channels
            )));
        }
        Ok(())
    }

    /// Plain-text `key=value` form.
    pub fn to_text(&self) -> String {
        let join = |v: &[f64]| v.iter().map(|x| format!("{x:.17e}")).collect::<Vec<_>>().join(",");
        let mut s = String::from("# volseg phase statistics\n");
        let _ = writeln!(s, "phases={}", self.phases());
        let _ = writeln!(s, "channels={}", self.channels);
        for i in 0..self.phases() {
            let _ = writeln!(s, "weight.{i}={:.17e}", self.weights[i]);
            let _ = writeln!(s, "mean.{i}={}", join(&self.means[i]));
            let _ = writeln!(s, "cov.{i}={}", join(&self.covariances[i]));
        }
        s
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let kv = parse_key_values(text)?;
        let get = |k: &str| {
            kv.iter()
                .find(|(key, _)| key == k)
                .map(|(_, v)| v.as_str())
                .ok_or_else(|| Error::Parse(format!("missing key '{k}'")))
        };
        let num = |k: &str| -> Result<usize> {
            get(k)?
                .parse()
                .map_err(|_| Error::Parse(format!("'{k}' is not a count")))
        };
        let list = |k: &str| -> Result<Vec<f64>> {
            get(k)?
                .split(',')
                .map(|t| t.trim().parse::<f64>().map_err(|_| Error::Parse(format!("bad number in '{k}'"))))
                .collect()
        };
        let phases = num("phases")?;
        let channels = num("channels")?;
        let mut stats = PhaseStats {
            channels,
            means: Vec::with_capacity(phases),
            covariances: Vec::with_capacity(phases),
            weights: Vec::with_capacity(phases),
        };
        for i in 0..phases {
            let w = list(&format!("weight.{i}"))?;
            let m = list(&format!("mean.{i}"))?;
            let c = list(&format!("cov.{i}"))?;
            if w.len() != 1 || m.len() != channels || c.len() != channels * channels {
                return Err(Error::Parse(format!("phase {i} has inconsistent sizes")));
            }
            stats.weights.push(w[0]);
            stats.means.push(m);
            stats.covariances.push(c);
        }
        Ok(stats)
    }
}

/// Parses `key=value` lines, skipping blanks and `#` comments.
pub fn parse_key_values(text: &str) -> Result<Vec<(String, String)>> {
    let mut out = Vec::new();
    for (n, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let (k, v) = line
            .split_once('=')
            .ok_or_else(|| Error::Parse(format!("line {}: expected key=value", n + 1)))?;
        out.push((k.trim().to_string(), v.trim().to_string()));
    }
    Ok(out)
}

/// Nonnegative `phases x pixels` cost matrix.
#[derive(Clone, Debug, PartialEq)]
pub struct CostVolume {
    data: Array2<f64>,
}

impl CostVolume {
    pub fn new(data: Array2<f64>) -> Result<Self> {
        if let Some(v) = data.iter().find(|v| !v.is_finite() || **v < 0.0) {
            return Err(Error::InvalidParameter(format!("cost entries must be finite and >= 0, got {v}")));
        }
        Ok(Self { data })
    }

    pub fn zeros(phases: usize, pixels: usize) -> Self {
        Self {
            data: Array2::zeros((phases, pixels)),
        }
    }

    pub fn view(&self) -> ArrayView2<'_, f64> {
        self.data.view()
    }

    pub fn phases(&self) -> usize {
        self.data.nrows()
    }

    pub fn pixels(&self) -> usize {
        self.data.ncols()
    }

    pub fn into_inner(self) -> Array2<f64> {
        self.data
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum CostKind {
    /// `|h - m_i|^2`
    Scalar,
    /// `(h - m_i)^T Sigma_i^{-1} (h - m_i)`
    Mahalanobis,
    /// `-log(alpha_i p_i(h))`, shifted per pixel to a zero minimum
    Emtv,
}

impl FromStr for CostKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "scalar" | "squared" => Ok(Self::Scalar),
            "mahalanobis" => Ok(Self::Mahalanobis),
            "emtv" => Ok(Self::Emtv),
            other => Err(Error::Parse(format!(
                "unknown cost kind '{other}' (expected scalar, mahalanobis or emtv)"
            ))),
        }
    }
}

impl std::fmt::Display for CostKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Self::Scalar => "scalar",
            Self::Mahalanobis => "mahalanobis",
            Self::Emtv => "emtv",
        })
    }
}

pub fn build_cost(kind: CostKind, h: &Image, stats: &PhaseStats) -> Result<CostVolume> {
    match kind {
        CostKind::Scalar => scalar_cost(h, stats),
        CostKind::Mahalanobis => mahalanobis_cost(h, stats),
        CostKind::Emtv => emtv_cost(h, stats),
    }
}

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// Seeded k-means++ followed by Lloyd iterations.
///
/// Returned phases are ordered by ascending mean intensity (channel average),
/// so phase 0 is the darkest cluster. Covariances are identity and weights
/// uniform. A cluster that runs empty is re-seeded with the point of the
/// largest cluster farthest from that cluster's center.
pub fn kmeans_init(h: &Image, phases: usize, seed: u64, max_iter: usize) -> Result<PhaseStats> {
    let n = h.pixels();
    let d = h.channels;
    if phases < 2 || phases > n {
        return Err(Error::InvalidParameter(format!(
            "phase count must be in 2..={n}, got {phases}"
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);

    // k-means++ seeding
    let mut centers: Vec<Vec<f64>> = vec![h.pixel(rng.random_range(0..n)).to_vec()];
    let mut d2: Vec<f64> = (0..n).map(|j| sq_dist(h.pixel(j), &centers[0])).collect();
    while centers.len() < phases {
        let total: f64 = d2.iter().sum();
        let pick = if total > 0.0 {
            let mut target = rng.random_range(0.0..total);
            let mut chosen = n - 1;
            for (j, w) in d2.iter().enumerate() {
                if target < *w {
                    chosen = j;
                    break;
                }
                target -= w;
            }
            chosen
        } else {
            rng.random_range(0..n)
        };
        let c = h.pixel(pick).to_vec();
        for (j, v) in d2.iter_mut().enumerate() {
            *v = v.min(sq_dist(h.pixel(j), &c));
        }
        centers.push(c);
    }

    // Lloyd
    let mut assign = vec![usize::MAX; n];
    for _ in 0..max_iter.max(1) {
        let mut changed = false;
        for j in 0..n {
            let x = h.pixel(j);
            let mut best = 0;
            let mut best_d = f64::INFINITY;
            for (i, c) in centers.iter().enumerate() {
                let dd = sq_dist(x, c);
                if dd < best_d {
                    best_d = dd;
                    best = i;
                }
            }
            if assign[j] != best {
                assign[j] = best;
                changed = true;
            }
        }
        let mut sums = vec![vec![0.0; d]; phases];
        let mut counts = vec![0usize; phases];
        for j in 0..n {
            counts[assign[j]] += 1;
            for (s, x) in sums[assign[j]].iter_mut().zip(h.pixel(j)) {
                *s += x;
            }
        }
        for i in 0..phases {
            if counts[i] > 0 {
                centers[i] = sums[i].iter().map(|s| s / counts[i] as f64).collect();
            }
        }
        while let Some(empty) = counts.iter().position(|&c| c == 0) {
            let largest = (0..phases).max_by_key(|&i| (counts[i], std::cmp::Reverse(i))).unwrap();
            let far = (0..n)
                .filter(|&j| assign[j] == largest)
                .max_by(|&a, &b| {
                    sq_dist(h.pixel(a), &centers[largest])
                        .partial_cmp(&sq_dist(h.pixel(b), &centers[largest]))
                        .unwrap()
                        .then(b.cmp(&a))
                })
                .unwrap();
            centers[empty] = h.pixel(far).to_vec();
            assign[far] = empty;
            counts[largest] -= 1;
            counts[empty] = 1;
            changed = true;
        }
        if !changed {
            break;
        }
    }

    let key = |c: &Vec<f64>| c.iter().sum::<f64>() / d as f64;
    centers.sort_by(|a, b| key(a).partial_cmp(&key(b)).unwrap().then_with(|| a.partial_cmp(b).unwrap()));
    PhaseStats::from_means(centers)
}

/// `C[i, j] = |h(x_j) - m_i|^2`, summed over channels.
pub fn scalar_cost(h: &Image, stats: &PhaseStats) -> Result<CostVolume> {
    stats.check_image(h)?;
    let data = Array2::from_shape_fn((stats.phases(), h.pixels()), |(i, j)| sq_dist(h.pixel(j), &stats.means[i]));
    Ok(CostVolume { data })
}

/// Lower-triangular Cholesky factor of a row-major `d x d` matrix.
fn cholesky(a: &[f64], d: usize) -> Option<Vec<f64>> {
    let mut l = vec![0.0; d * d];
    for i in 0..d {
        for j in 0..=i {
            let mut s = a[i * d + j];
            for k in 0..j {
                s -= l[i * d + k] * l[j * d + k];
            }
            if i == j {
                if !(s > 0.0) || !s.is_finite() {
                    return None;
                }
                l[i * d + i] = s.sqrt();
            } else {
                l[i * d + j] = s / l[j * d + j];
            }
        }
    }
    Some(l)
}

/// Squared norm of `L^{-1} x` by forward substitution.
fn whitened_sq_norm(l: &[f64], d: usize, x: &[f64], buf: &mut [f64]) -> f64 {
    let mut s = 0.0;
    for i in 0..d {
        let mut v = x[i];
        for k in 0..i {
            v -= l[i * d + k] * buf[k];
        }
        v /= l[i * d + i];
        buf[i] = v;
        s += v * v;
    }
    s
}

fn factors(stats: &PhaseStats) -> Result<Vec<Vec<f64>>> {
    let d = stats.channels;
    stats
        .covariances
        .iter()
        .enumerate()
        .map(|(i, c)| {
            let sym = (0..d).all(|r| (0..d).all(|k| (c[r * d + k] - c[k * d + r]).abs() <= 1e-12 * (1.0 + c[r * d + k].abs())));
            if !sym {
                return Err(Error::InvalidParameter(format!("covariance of phase {i} is not symmetric")));
            }
            cholesky(c, d).ok_or(Error::SingularCovariance { phase: i })
        })
        .collect()
}

/// `C[i, j] = (h(x_j) - m_i)^T Sigma_i^{-1} (h(x_j) - m_i)`.
pub fn mahalanobis_cost(h: &Image, stats: &PhaseStats) -> Result<CostVolume> {
    stats.check_image(h)?;
    let d = stats.channels;
    let chol = factors(stats)?;
    let mut diff = vec![0.0; d];
    let mut buf = vec![0.0; d];
    let mut data = Array2::zeros((stats.phases(), h.pixels()));
    for i in 0..stats.phases() {
        for j in 0..h.pixels() {
            for (k, x) in h.pixel(j).iter().enumerate() {
                diff[k] = x - stats.means[i][k];
            }
            data[[i, j]] = whitened_sq_norm(&chol[i], d, &diff, &mut buf);
        }
    }
    Ok(CostVolume { data })
}

/// Gaussian log-density `log p_i(x)` for every phase and pixel.
pub fn log_densities(h: &Image, stats: &PhaseStats) -> Result<Array2<f64>> {
    let maha = mahalanobis_cost(h, stats)?.into_inner();
    let d = stats.channels as f64;
    let chol = factors(stats)?;
    let half_log_det: Vec<f64> = chol
        .iter()
        .map(|l| (0..stats.channels).map(|k| l[k * stats.channels + k].ln()).sum())
        .collect();
    let norm = 0.5 * d * (2.0 * std::f64::consts::PI).ln();
    Ok(Array2::from_shape_fn(maha.raw_dim(), |(i, j)| {
        -norm - half_log_det[i] - 0.5 * maha[[i, j]]
    }))
}

/// `C[i, j] = -log(alpha_i p_i(h(x_j)))`, shifted so each column's minimum is 0.
///
/// The per-pixel shift cancels in the phase softmax, so it changes neither the
/// soft segmentation nor the labels.
pub fn emtv_cost(h: &Image, stats: &PhaseStats) -> Result<CostVolume> {
    if let Some(w) = stats.weights.iter().find(|w| !(**w > 0.0)) {
        return Err(Error::InvalidParameter(format!("mixture weights must be > 0, got {w}")));
    }
    let mut data = log_densities(h, stats)?;
    for (i, mut row) in data.axis_iter_mut(Axis(0)).enumerate() {
        let lw = stats.weights[i].ln();
        row.mapv_inplace(|lp| -(lw + lp));
    }
    for mut col in data.axis_iter_mut(Axis(1)) {
        let min = col.iter().copied().fold(f64::INFINITY, f64::min);
        col.mapv_inplace(|v| v - min);
    }
    Ok(CostVolume { data })
}

/// Weighted means, covariances (plus [`COVARIANCE_FLOOR`]) and weights from a
/// soft segmentation `u` (`phases x pixels`, columns summing to one).
///
/// Phases with total mass below [`MIN_PHASE_MASS`] keep the mean and
/// covariance from `previous`.
pub fn update_statistics(h: &Image, u: ArrayView2<'_, f64>, previous: &PhaseStats) -> Result<PhaseStats> {
    previous.check_image(h)?;
    let (phases, pixels) = u.dim();
    if pixels != h.pixels() || phases != previous.phases() {
        return Err(Error::Shape(format!(
            "segmentation is {phases}x{pixels}, expected {}x{}",
            previous.phases(),
            h.pixels()
        )));
    }
    let d = h.channels;
    let mut out = previous.clone();
    let mut masses = vec![0.0; phases];
    for i in 0..phases {
        let row = u.row(i);
        let mass: f64 = row.iter().sum();
        masses[i] = mass;
        if mass < MIN_PHASE_MASS {
            continue;
        }
        let mut mean = vec![0.0; d];
        for j in 0..pixels {
            for (m, x) in mean.iter_mut().zip(h.pixel(j)) {
                *m += row[j] * x;
            }
        }
        mean.iter_mut().for_each(|m| *m /= mass);
        let mut cov = vec![0.0; d * d];
        for j in 0..pixels {
            let x = h.pixel(j);
            for r in 0..d {
                for c in 0..d {
                    cov[r * d + c] += row[j] * (x[r] - mean[r]) * (x[c] - mean[c]);
                }
            }
        }
        for r in 0..d {
            for c in 0..d {
                cov[r * d + c] /= mass;
            }
            cov[r * d + r] += COVARIANCE_FLOOR;
        }
        out.means[i] = mean;
        out.covariances[i] = cov;
    }
    let total: f64 = masses.iter().map(|m| m.max(MIN_PHASE_MASS)).sum();
    out.weights = masses.iter().map(|m| m.max(MIN_PHASE_MASS) / total).collect();
    Ok(out)
}
