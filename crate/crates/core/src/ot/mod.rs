//! Entropic optimal transport between phase volumes and pixels.
//!
//! Couplings are `I x J` arrays: row `i` is a phase (or a source bin), column
//! `j` a pixel (or a target bin). `K` denotes the effective cost, i.e. the
//! similarity cost plus the divergence of the TV dual field.
//!
//! Everything that exponentiates works in the log domain with max
//! subtraction, so `eps = 0.01` against costs of order one stays finite.

mod exact;

use std::fmt::Write as _;
use std::path::Path;

use ndarray::{Array2, ArrayView2, Axis};

use crate::error::{Error, Result};

pub use exact::exact_ot_oracle;

pub type Coupling = Array2<f64>;

fn check_eps(eps: f64) -> Result<()> {
    if eps > 0.0 && eps.is_finite() {
        Ok(())
    } else {
        Err(Error::InvalidParameter(format!("eps must be finite and > 0, got {eps}")))
    }
}

/// `log sum exp(z_i)` with max subtraction.
#[inline]
pub(crate) fn log_sum_exp<I>(values: I) -> f64
where
    I: Iterator<Item = f64> + Clone,
{
    let max = values.clone().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return f64::NEG_INFINITY;
    }
    let s: f64 = values.map(|v| (v - max).exp()).sum();
    max + s.ln()
}

/// `-eps log sum exp(-z_i/eps - 1)`.
pub fn softmin_eps(z: &[f64], eps: f64) -> Result<f64> {
    check_eps(eps)?;
    if z.is_empty() {
        return Err(Error::InvalidParameter("softmin of an empty vector".into()));
    }
    Ok(softmin_unchecked(z.iter().copied(), eps))
}

#[inline]
fn softmin_unchecked<I>(z: I, eps: f64) -> f64
where
    I: Iterator<Item = f64> + Clone,
{
    eps - eps * log_sum_exp(z.map(|v| -v / eps))
}

/// `eps log sum exp(z_i/eps)`; lies in `[max z, max z + eps log n]`.
pub fn softmax_eps(z: &[f64], eps: f64) -> Result<f64> {
    check_eps(eps)?;
    if z.is_empty() {
        return Err(Error::InvalidParameter("softmax of an empty vector".into()));
    }
    if z.len() == 1 {
        return Ok(z[0]);
    }
    Ok(eps * log_sum_exp(z.iter().map(|v| v / eps)))
}

fn check_dims(k: &ArrayView2<'_, f64>, rows: usize, what: &str) -> Result<()> {
    if k.nrows() != rows {
        return Err(Error::Shape(format!(
            "{what} has length {rows} but the cost has {} rows",
            k.nrows()
        )));
    }
    Ok(())
}

/// Pixel potential maximizing the dual for fixed `f`:
/// `g_j = min_eps(K[., j] - f)`.
pub fn c_transform_f(f: &[f64], k: ArrayView2<'_, f64>, eps: f64) -> Result<Vec<f64>> {
    check_eps(eps)?;
    check_dims(&k, f.len(), "volume potential")?;
    Ok(k
        .axis_iter(Axis(1))
        .map(|col| softmin_unchecked(col.iter().zip(f).map(|(kv, fv)| kv - fv), eps))
        .collect())
}

/// Volume potential maximizing the dual for fixed `g`:
/// `f_i = eps log V_i + min_eps(K[i, .] - g)`.
pub fn cbar_transform_g(g: &[f64], k: ArrayView2<'_, f64>, volumes: &[f64], eps: f64) -> Result<Vec<f64>> {
    check_eps(eps)?;
    check_dims(&k, volumes.len(), "volume vector")?;
    if k.ncols() != g.len() {
        return Err(Error::Shape(format!(
            "pixel potential has length {} but the cost has {} columns",
            g.len(),
            k.ncols()
        )));
    }
    if let Some(v) = volumes.iter().find(|v| !(**v > 0.0)) {
        return Err(Error::InvalidParameter(format!("volumes must be > 0, got {v}")));
    }
    Ok(k
        .axis_iter(Axis(0))
        .zip(volumes)
        .map(|(row, v)| eps * v.ln() + softmin_unchecked(row.iter().zip(g).map(|(kv, gv)| kv - gv), eps))
        .collect())
}

/// Writes `log u` for `u = softmax_i((-K + f) / eps)` into `out`, column by
/// column. Columns of `exp(out)` sum to one.
fn log_coupling_into(k: ArrayView2<'_, f64>, f: &[f64], eps: f64, out: &mut Array2<f64>) {
    let n = k.nrows();
    let mut col_buf = vec![0.0; n];
    for (j, col) in k.axis_iter(Axis(1)).enumerate() {
        for i in 0..n {
            col_buf[i] = (f[i] - col[i]) / eps;
        }
        let lse = log_sum_exp(col_buf.iter().copied());
        for i in 0..n {
            out[[i, j]] = col_buf[i] - lse;
        }
    }
}

/// `u_ij = exp((-K_ij + f_i)/eps) / sum_i' exp((-K_i'j + f_i')/eps)`.
pub fn recover_coupling(k: ArrayView2<'_, f64>, f: &[f64], eps: f64) -> Result<Coupling> {
    check_eps(eps)?;
    check_dims(&k, f.len(), "volume potential")?;
    let mut logu = Array2::zeros(k.raw_dim());
    log_coupling_into(k, f, eps, &mut logu);
    logu.mapv_inplace(f64::exp);
    Ok(logu)
}

/// `||rowsums(u) - V||_inf / max V`.
pub fn row_sum_residual(u: ArrayView2<'_, f64>, volumes: &[f64]) -> f64 {
    let vmax = volumes.iter().copied().fold(0.0, f64::max);
    u.axis_iter(Axis(0))
        .zip(volumes)
        .map(|(row, v)| (row.sum() - v).abs())
        .fold(0.0, f64::max)
        / vmax
}

/// Outcome of running the volume iteration to a tolerance.
#[derive(Clone, Debug)]
pub struct VolumeSolve {
    pub f: Vec<f64>,
    pub iterations: usize,
    /// Relative row-sum residual of the coupling recovered from `f`.
    pub residual: f64,
    pub converged: bool,
}

struct VolumeIteration<'a> {
    k: ArrayView2<'a, f64>,
    log_v: Vec<f64>,
    volumes: &'a [f64],
    eps: f64,
    logu: Array2<f64>,
}

impl<'a> VolumeIteration<'a> {
    fn new(k: ArrayView2<'a, f64>, volumes: &'a [f64], eps: f64) -> Result<Self> {
        check_eps(eps)?;
        check_dims(&k, volumes.len(), "volume vector")?;
        if let Some(v) = volumes.iter().find(|v| !(**v > 0.0)) {
            return Err(Error::InvalidParameter(format!("volumes must be > 0, got {v}")));
        }
        Ok(Self {
            k,
            log_v: volumes.iter().map(|v| v.ln()).collect(),
            volumes,
            eps,
            logu: Array2::zeros(k.raw_dim()),
        })
    }

    /// Log row sums of the coupling induced by `f`.
    fn log_row_sums(&mut self, f: &[f64]) -> Vec<f64> {
        log_coupling_into(self.k, f, self.eps, &mut self.logu);
        self.logu
            .axis_iter(Axis(0))
            .map(|row| log_sum_exp(row.iter().copied()))
            .collect()
    }

    fn residual(&self, log_rows: &[f64]) -> f64 {
        let vmax = self.volumes.iter().copied().fold(0.0, f64::max);
        log_rows
            .iter()
            .zip(self.volumes)
            .map(|(lr, v)| (lr.exp() - v).abs())
            .fold(0.0, f64::max)
            / vmax
    }

    /// Stabilized update `f_i <- eps log V_i - eps log rowsum_i(u(f)) + f_i`.
    fn apply(&self, f: &mut [f64], log_rows: &[f64], iteration: usize) -> Result<()> {
        for i in 0..f.len() {
            f[i] += self.eps * (self.log_v[i] - log_rows[i]);
            if !f[i].is_finite() {
                return Err(Error::NonFinite { iteration });
            }
        }
        Ok(())
    }
}

/// Runs `n_inner` stabilized volume-potential updates starting from `f0`.
///
/// Each update equals a pixel c-transform followed by a volume c-transform,
/// written in terms of `f` alone.
pub fn sinkhorn_volume(
    k: ArrayView2<'_, f64>,
    volumes: &[f64],
    f0: &[f64],
    eps: f64,
    n_inner: usize,
) -> Result<Vec<f64>> {
    if n_inner == 0 {
        return Err(Error::InvalidParameter("n_inner must be >= 1".into()));
    }
    check_dims(&k, f0.len(), "initial potential")?;
    let mut it = VolumeIteration::new(k, volumes, eps)?;
    let mut f = f0.to_vec();
    for n in 0..n_inner {
        let lr = it.log_row_sums(&f);
        it.apply(&mut f, &lr, n + 1)?;
    }
    Ok(f)
}

/// Iterates the volume update until the relative row-sum residual of the
/// recovered coupling is at most `tol`, or `max_iter` updates were made.
pub fn sinkhorn_volume_to_tol(
    k: ArrayView2<'_, f64>,
    volumes: &[f64],
    f0: &[f64],
    eps: f64,
    tol: f64,
    max_iter: usize,
) -> Result<VolumeSolve> {
    check_dims(&k, f0.len(), "initial potential")?;
    let mut it = VolumeIteration::new(k, volumes, eps)?;
    let mut f = f0.to_vec();
    let mut iterations = 0;
    loop {
        let lr = it.log_row_sums(&f);
        let residual = it.residual(&lr);
        if residual <= tol || iterations == max_iter {
            return Ok(VolumeSolve {
                f,
                iterations,
                residual,
                converged: residual <= tol,
            });
        }
        iterations += 1;
        it.apply(&mut f, &lr, iterations)?;
    }
}

/// `<f, V> + <g, 1> - eps sum_ij exp(-(K_ij - f_i - g_j)/eps - 1)`.
pub fn dual_objective(f: &[f64], g: &[f64], k: ArrayView2<'_, f64>, volumes: &[f64], eps: f64) -> Result<f64> {
    check_eps(eps)?;
    check_dims(&k, f.len(), "volume potential")?;
    check_dims(&k, volumes.len(), "volume vector")?;
    if g.len() != k.ncols() {
        return Err(Error::Shape("pixel potential length differs from cost columns".into()));
    }
    let linear: f64 = f.iter().zip(volumes).map(|(a, b)| a * b).sum::<f64>() + g.iter().sum::<f64>();
    let mut barrier = 0.0;
    for ((i, j), kv) in k.indexed_iter() {
        barrier += (-(kv - f[i] - g[j]) / eps - 1.0).exp();
    }
    Ok(linear - eps * barrier)
}

/// `<u, K> - eps H(u)` with `H(u) = -sum u log u` (and `0 log 0 = 0`).
pub fn primal_objective(u: ArrayView2<'_, f64>, k: ArrayView2<'_, f64>, eps: f64) -> f64 {
    u.iter()
        .zip(k.iter())
        .map(|(&uv, &kv)| uv * kv + if uv > 0.0 { eps * uv * uv.ln() } else { 0.0 })
        .sum()
}

/// `H(u) = -sum u log u`.
pub fn entropy(u: ArrayView2<'_, f64>) -> f64 {
    -u.iter().filter(|v| **v > 0.0).map(|v| v * v.ln()).sum::<f64>()
}

/// `<u, C>`.
pub fn transport_cost(u: ArrayView2<'_, f64>, c: ArrayView2<'_, f64>) -> f64 {
    u.iter().zip(c.iter()).map(|(a, b)| a * b).sum()
}

/// Phase volumes as pixel counts summing to `J`.
#[derive(Clone, Debug, PartialEq)]
pub struct VolumeSpec {
    counts: Vec<f64>,
}

impl VolumeSpec {
    /// Accepts counts whose total is within 0.5 of `pixels`.
    pub fn from_counts(counts: Vec<f64>, pixels: usize) -> Result<Self> {
        if counts.is_empty() {
            return Err(Error::InvalidParameter("empty volume specification".into()));
        }
        if let Some(v) = counts.iter().find(|v| !(**v > 0.0) || !v.is_finite()) {
            return Err(Error::InvalidParameter(format!("every volume must be > 0, got {v}")));
        }
        let total: f64 = counts.iter().sum();
        if (total - pixels as f64).abs() > 0.5 {
            return Err(Error::InvalidParameter(format!(
                "volumes sum to {total} but the image has {pixels} pixels"
            )));
        }
        Ok(Self { counts })
    }

    /// Ratios must sum to 1 (within 1e-6); they are converted to integer
    /// counts by largest-remainder rounding.
    pub fn from_ratios(ratios: &[f64], pixels: usize) -> Result<Self> {
        if ratios.is_empty() {
            return Err(Error::InvalidParameter("empty volume specification".into()));
        }
        if let Some(r) = ratios.iter().find(|r| !(**r > 0.0) || !r.is_finite()) {
            return Err(Error::InvalidParameter(format!("every volume ratio must be > 0, got {r}")));
        }
        let total: f64 = ratios.iter().sum();
        if (total - 1.0).abs() > 1e-6 {
            return Err(Error::InvalidParameter(format!(
                "volume ratios sum to {total}, expected 1"
            )));
        }
        let exact: Vec<f64> = ratios.iter().map(|r| r / total * pixels as f64).collect();
        let mut counts: Vec<f64> = exact.iter().map(|v| v.floor()).collect();
        let short = pixels - counts.iter().sum::<f64>() as usize;
        let mut order: Vec<usize> = (0..exact.len()).collect();
        // stable: equal remainders go to the lower phase index
        order.sort_by(|&a, &b| {
            let ra = exact[a] - counts[a];
            let rb = exact[b] - counts[b];
            rb.partial_cmp(&ra).unwrap()
        });
        for &i in order.iter().take(short) {
            counts[i] += 1.0;
        }
        if let Some(i) = counts.iter().position(|c| *c <= 0.0) {
            return Err(Error::InvalidParameter(format!(
                "phase {i} rounds to an empty volume at {pixels} pixels"
            )));
        }
        Ok(Self { counts })
    }

    /// Equal split of `pixels` among `phases`.
    pub fn uniform(phases: usize, pixels: usize) -> Self {
        Self {
            counts: vec![pixels as f64 / phases as f64; phases],
        }
    }

    pub fn counts(&self) -> &[f64] {
        &self.counts
    }

    pub fn phases(&self) -> usize {
        self.counts.len()
    }

    pub fn total(&self) -> f64 {
        self.counts.iter().sum()
    }
}

/// Outcome of [`entropic_ot`].
#[derive(Clone, Debug)]
pub struct EntropicSolution {
    pub coupling: Coupling,
    pub f: Vec<f64>,
    pub g: Vec<f64>,
    pub iterations: usize,
    /// `max(|rowsums - a|_inf, |colsums - b|_inf)`.
    pub residual: f64,
    pub converged: bool,
}

/// Iteration cap for [`entropic_ot`].
pub const ENTROPIC_MAX_ITER: usize = 2_000_000;

/// Two-sided log-domain Sinkhorn for `min <u, C> - eps H(u)` over couplings
/// of `a` and `b`. Stops once both marginals are within `tol`.
pub fn entropic_ot(a: &[f64], b: &[f64], c: ArrayView2<'_, f64>, eps: f64, tol: f64) -> Result<EntropicSolution> {
    entropic_ot_with_limit(a, b, c, eps, tol, ENTROPIC_MAX_ITER)
}

pub fn entropic_ot_with_limit(
    a: &[f64],
    b: &[f64],
    c: ArrayView2<'_, f64>,
    eps: f64,
    tol: f64,
    max_iter: usize,
) -> Result<EntropicSolution> {
    check_eps(eps)?;
    if c.dim() != (a.len(), b.len()) {
        return Err(Error::Shape(format!(
            "cost is {:?} but marginals are {} and {}",
            c.dim(),
            a.len(),
            b.len()
        )));
    }
    if a.iter().chain(b).any(|v| !(*v > 0.0)) {
        return Err(Error::InvalidParameter("histogram entries must be > 0".into()));
    }
    let (sa, sb): (f64, f64) = (a.iter().sum(), b.iter().sum());
    if (sa - sb).abs() > 1e-9 * sa.max(sb) {
        return Err(Error::MassMismatch { a: sa, b: sb });
    }
    let (n, m) = c.dim();
    let log_a: Vec<f64> = a.iter().map(|v| v.ln()).collect();
    let log_b: Vec<f64> = b.iter().map(|v| v.ln()).collect();
    let mut f = vec![0.0; n];
    let mut g = vec![0.0; m];
    let mut iterations = 0;

    while iterations < max_iter {
        for j in 0..m {
            g[j] = eps * log_b[j] + softmin_unchecked((0..n).map(|i| c[[i, j]] - f[i]), eps);
        }
        for i in 0..n {
            f[i] = eps * log_a[i] + softmin_unchecked((0..m).map(|j| c[[i, j]] - g[j]), eps);
        }
        iterations += 1;
        // rows are exact after the f step; the column error measures progress
        if iterations % 10 == 0 || iterations == max_iter {
            let u = coupling_from_potentials(c, &f, &g, eps);
            if marginal_residual(u.view(), a, b) <= tol {
                break;
            }
        }
        if f.iter().chain(&g).any(|v| !v.is_finite()) {
            return Err(Error::NonFinite { iteration: iterations });
        }
    }
    let coupling = coupling_from_potentials(c, &f, &g, eps);
    let residual = marginal_residual(coupling.view(), a, b);
    Ok(EntropicSolution {
        coupling,
        f,
        g,
        iterations,
        residual,
        converged: residual <= tol,
    })
}

/// `u_ij = exp((-C_ij + f_i + g_j)/eps - 1)`.
pub fn coupling_from_potentials(c: ArrayView2<'_, f64>, f: &[f64], g: &[f64], eps: f64) -> Coupling {
    Array2::from_shape_fn(c.dim(), |(i, j)| ((-c[[i, j]] + f[i] + g[j]) / eps - 1.0).exp())
}

pub fn marginal_residual(u: ArrayView2<'_, f64>, a: &[f64], b: &[f64]) -> f64 {
    let rows = u
        .axis_iter(Axis(0))
        .zip(a)
        .map(|(r, v)| (r.sum() - v).abs())
        .fold(0.0, f64::max);
    let cols = u
        .axis_iter(Axis(1))
        .zip(b)
        .map(|(col, v)| (col.sum() - v).abs())
        .fold(0.0, f64::max);
    rows.max(cols)
}

/// Row-major CSV with a `#` header line carrying the dimensions and `eps`.
pub fn coupling_csv(u: ArrayView2<'_, f64>, eps: f64) -> String {
    let mut s = String::new();
    let _ = writeln!(s, "# rows={} cols={} eps={}", u.nrows(), u.ncols(), eps);
    for row in u.axis_iter(Axis(0)) {
        let line: Vec<String> = row.iter().map(|v| format!("{v:.17e}")).collect();
        s.push_str(&line.join(","));
        s.push('\n');
    }
    s
}

/// CSV of dual potentials: one line per entry, `kind,index,value`.
pub fn duals_csv(f: &[f64], g: &[f64], eps: f64) -> String {
    let mut s = String::new();
    let _ = writeln!(s, "# phases={} pixels={} eps={}", f.len(), g.len(), eps);
    s.push_str("kind,index,value\n");
    for (i, v) in f.iter().enumerate() {
        let _ = writeln!(s, "f,{i},{v:.17e}");
    }
    for (j, v) in g.iter().enumerate() {
        let _ = writeln!(s, "g,{j},{v:.17e}");
    }
    s
}

pub fn write_coupling_csv(path: &Path, u: ArrayView2<'_, f64>, eps: f64) -> Result<()> {
    std::fs::write(path, coupling_csv(u, eps))?;
    Ok(())
}

/// Parses the output of [`coupling_csv`] back into `(eps, coupling)`.
pub fn parse_coupling_csv(text: &str) -> Result<(f64, Coupling)> {
    let mut lines = text.lines();
    let header = lines.next().ok_or_else(|| Error::Parse("empty coupling file".into()))?;
    let mut rows = None;
    let mut cols = None;
    let mut eps = None;
    for tok in header.trim_start_matches('#').split_whitespace() {
        let (k, v) = tok
            .split_once('=')
            .ok_or_else(|| Error::Parse(format!("bad header token '{tok}'")))?;
        let parse_err = |_| Error::Parse(format!("bad header value '{tok}'"));
        match k {
            "rows" => rows = Some(v.parse::<usize>().map_err(parse_err)?),
            "cols" => cols = Some(v.parse::<usize>().map_err(parse_err)?),
            "eps" => eps = Some(v.parse::<f64>().map_err(|_| Error::Parse(format!("bad eps '{v}'")))?),
            _ => {}
        }
    }
    let (rows, cols, eps) = match (rows, cols, eps) {
        (Some(r), Some(c), Some(e)) => (r, c, e),
        _ => return Err(Error::Parse("header must carry rows, cols and eps".into())),
    };
    let mut values = Vec::with_capacity(rows * cols);
    for line in lines.filter(|l| !l.trim().is_empty()) {
        for v in line.split(',') {
            values.push(
                v.trim()
                    .parse::<f64>()
                    .map_err(|_| Error::Parse(format!("bad value '{v}'")))?,
            );
        }
    }
    let u = Array2::from_shape_vec((rows, cols), values)
        .map_err(|e| Error::Parse(format!("coupling body does not match header: {e}")))?;
    Ok((eps, u))
}
