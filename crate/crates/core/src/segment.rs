//! The alternating segmentation loop.
//!
//! Each outer iteration performs
//!
//! 1. optionally refresh the similarity cost from the current `u`,
//! 2. `u = softmax_i((-C - div q + f) / eps)` per pixel,
//! 3. `q = Proj(q - tau_q grad u)` onto `|q(x)| <= lambda e(x)`,
//! 4. a few stabilized volume-potential updates with `K = C + div q`,
//! 5. stop once `|u_new - u_old|_F / sqrt(J) < tol_u`.
//!
//! `q` and `f` start at zero and are carried across iterations.

use std::fmt::Write as _;

use ndarray::{Array2, ArrayView2, Axis, Zip};

use crate::error::{Error, Result};
use crate::grid::{divergence_into, gradient_into, EdgeWeight, ScalarGrid, VectorGrid};
use crate::image::Image;
use crate::ot::{self, VolumeSpec};
use crate::similarity::{self, CostKind, CostVolume, PhaseStats};

/// `phases x pixels` soft assignment with columns summing to one.
#[derive(Clone, Debug, PartialEq)]
pub struct SoftSegmentation {
    pub height: usize,
    pub width: usize,
    pub u: Array2<f64>,
}

impl SoftSegmentation {
    pub fn phases(&self) -> usize {
        self.u.nrows()
    }

    pub fn pixels(&self) -> usize {
        self.u.ncols()
    }

    /// Soft mass `sum_j u[i, j]` per phase.
    pub fn masses(&self) -> Vec<f64> {
        self.u.axis_iter(Axis(0)).map(|r| r.sum()).collect()
    }

    pub fn mask(&self, phase: usize) -> ScalarGrid {
        ScalarGrid {
            height: self.height,
            width: self.width,
            data: self.u.row(phase).to_vec(),
        }
    }

    /// Mean over pixels of `max_i u[i, j]`; 1 for a hard segmentation.
    pub fn mean_max_probability(&self) -> f64 {
        self.u
            .axis_iter(Axis(1))
            .map(|c| c.iter().copied().fold(0.0, f64::max))
            .sum::<f64>()
            / self.pixels() as f64
    }
}

/// Per-phase TV dual vector fields.
#[derive(Clone, Debug, PartialEq)]
pub struct TVDualField {
    pub fields: Vec<VectorGrid>,
}

impl TVDualField {
    pub fn zeros(phases: usize, height: usize, width: usize) -> Self {
        Self {
            fields: (0..phases).map(|_| VectorGrid::zeros(height, width)).collect(),
        }
    }

    /// `div q_i` stacked as a `phases x pixels` array.
    pub fn divergence(&self) -> Array2<f64> {
        let (h, w) = (self.fields[0].height, self.fields[0].width);
        let mut out = Array2::zeros((self.fields.len(), h * w));
        for (i, q) in self.fields.iter().enumerate() {
            let mut row = out.row_mut(i);
            divergence_into(h, w, &q.x, &q.y, row.as_slice_mut().unwrap());
        }
        out
    }

    /// Largest `|q_i(x)| - lambda e(x)` over all phases and pixels.
    pub fn max_bound_violation(&self, lambda: f64, e: &EdgeWeight) -> f64 {
        self.fields
            .iter()
            .flat_map(|q| (0..q.len()).map(move |k| q.norm_at(k) - lambda * e.grid.data[k]))
            .fold(f64::NEG_INFINITY, f64::max)
    }
}

/// Per-pixel phase index (0-based).
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct LabelMap {
    pub height: usize,
    pub width: usize,
    pub labels: Vec<usize>,
}

impl LabelMap {
    /// Maps the distinct gray levels of a single-channel image, in ascending
    /// order, to phases `0, 1, ...`.
    pub fn from_gray_levels(img: &Image) -> Result<Self> {
        if img.channels != 1 {
            return Err(Error::Shape("ground-truth label image must be single-channel".into()));
        }
        let mut levels: Vec<f64> = img.data.clone();
        levels.sort_by(|a, b| a.partial_cmp(b).unwrap());
        levels.dedup();
        let labels = img
            .data
            .iter()
            .map(|v| levels.iter().position(|l| l == v).unwrap())
            .collect();
        Ok(Self {
            height: img.height,
            width: img.width,
            labels,
        })
    }

    /// Gray image with phase `k` at intensity `k / (phases - 1)`.
    pub fn to_gray(&self, phases: usize) -> Image {
        let scale = if phases > 1 { (phases - 1) as f64 } else { 1.0 };
        Image {
            height: self.height,
            width: self.width,
            channels: 1,
            data: self.labels.iter().map(|&l| l as f64 / scale).collect(),
        }
    }

    pub fn count(&self, phase: usize) -> usize {
        self.labels.iter().filter(|&&l| l == phase).count()
    }
}

#[derive(Clone, Debug)]
pub struct SegParams {
    /// Entropic weight, > 0.
    pub eps: f64,
    /// TV weight, >= 0.
    pub lambda: f64,
    /// Dual step for `q`, > 0.
    pub tau_q: f64,
    pub max_outer: usize,
    pub tol_u: f64,
    /// Volume-potential updates per outer iteration.
    pub n_f_inner: usize,
    /// Recompute statistics and cost every this many iterations.
    pub refresh_every: Option<usize>,
    pub cost: CostKind,
    /// Edge detector sharpness; 0 gives plain TV.
    pub edge_sharpness: f64,
    pub edge_sigma: f64,
    pub kmeans_iter: usize,
}

impl SegParams {
    /// Defaults around a given `eps`: `tau_q = 0.5 eps`, `tol_u = 1e-3`.
    pub fn new(eps: f64, lambda: f64) -> Self {
        Self {
            eps,
            lambda,
            tau_q: 0.5 * eps,
            max_outer: 500,
            tol_u: 1e-3,
            n_f_inner: 1,
            refresh_every: None,
            cost: CostKind::Scalar,
            edge_sharpness: 0.0,
            edge_sigma: 1.0,
            kmeans_iter: 100,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidParameter(m));
        if !(self.eps > 0.0) || !self.eps.is_finite() {
            return bad(format!("eps must be > 0, got {}", self.eps));
        }
        if !(self.lambda >= 0.0) || !self.lambda.is_finite() {
            return bad(format!("lambda must be >= 0, got {}", self.lambda));
        }
        if !(self.tau_q > 0.0) || !self.tau_q.is_finite() {
            return bad(format!("tau_q must be > 0, got {}", self.tau_q));
        }
        if !(self.tol_u > 0.0) {
            return bad(format!("tol must be > 0, got {}", self.tol_u));
        }
        if self.n_f_inner == 0 {
            return bad("n_f_inner must be >= 1".into());
        }
        if self.refresh_every == Some(0) {
            return bad("refresh interval must be >= 1".into());
        }
        if !(self.edge_sharpness >= 0.0) || !(self.edge_sigma >= 0.0) {
            return bad("edge sharpness and sigma must be >= 0".into());
        }
        Ok(())
    }
}

impl Default for SegParams {
    fn default() -> Self {
        Self::new(0.01, 0.05)
    }
}

/// Radial projection of every vector onto the disc of radius `lambda e(x)`.
pub fn project_q(q: &TVDualField, lambda: f64, e: &EdgeWeight) -> TVDualField {
    let mut out = q.clone();
    project_in_place(&mut out, lambda, e);
    out
}

fn project_in_place(q: &mut TVDualField, lambda: f64, e: &EdgeWeight) {
    for field in &mut q.fields {
        for k in 0..field.len() {
            let r = lambda * e.grid.data[k];
            let n = field.norm_at(k);
            if r <= 0.0 {
                field.x[k] = 0.0;
                field.y[k] = 0.0;
            } else if n > r {
                let s = r / n;
                field.x[k] *= s;
                field.y[k] *= s;
            }
        }
    }
}

/// One projected step `q_i <- Proj(q_i - tau_q grad u_i)` for every phase.
pub fn update_q(q: &TVDualField, u: &SoftSegmentation, lambda: f64, tau_q: f64, e: &EdgeWeight) -> TVDualField {
    let mut out = q.clone();
    update_q_in_place(&mut out, u.u.view(), u.height, u.width, lambda, tau_q, e);
    out
}

fn update_q_in_place(
    q: &mut TVDualField,
    u: ArrayView2<'_, f64>,
    height: usize,
    width: usize,
    lambda: f64,
    tau_q: f64,
    e: &EdgeWeight,
) {
    let n = height * width;
    let mut gx = vec![0.0; n];
    let mut gy = vec![0.0; n];
    for (i, field) in q.fields.iter_mut().enumerate() {
        let row = u.row(i);
        let row = row.as_slice().map(|s| s.to_vec()).unwrap_or_else(|| row.to_vec());
        gradient_into(height, width, &row, &mut gx, &mut gy);
        for k in 0..n {
            field.x[k] -= tau_q * gx[k];
            field.y[k] -= tau_q * gy[k];
        }
    }
    project_in_place(q, lambda, e);
}

/// `K = C + div q`.
pub fn effective_cost(cost: ArrayView2<'_, f64>, q: &TVDualField) -> Array2<f64> {
    let mut k = q.divergence();
    Zip::from(&mut k).and(cost).for_each(|kv, &c| *kv += c);
    k
}

/// `u_i = softmax_i((-C_i - div q_i + f_i) / eps)` for every pixel.
pub fn softmax_step(
    cost: &CostVolume,
    q: &TVDualField,
    f: &[f64],
    eps: f64,
    height: usize,
    width: usize,
) -> Result<SoftSegmentation> {
    let k = effective_cost(cost.view(), q);
    Ok(SoftSegmentation {
        height,
        width,
        u: ot::recover_coupling(k.view(), f, eps)?,
    })
}

/// `n_inner` volume-potential updates against `K = C + div q`.
pub fn volume_step(
    cost: &CostVolume,
    q: &TVDualField,
    f: &[f64],
    volumes: &VolumeSpec,
    eps: f64,
    n_inner: usize,
) -> Result<Vec<f64>> {
    let k = effective_cost(cost.view(), q);
    ot::sinkhorn_volume(k.view(), volumes.counts(), f, eps, n_inner)
}

/// Argmax per pixel; ties go to the lowest phase index.
pub fn label(u: &SoftSegmentation) -> LabelMap {
    let labels = u
        .u
        .axis_iter(Axis(1))
        .map(|col| {
            let mut best = 0;
            for i in 1..col.len() {
                if col[i] > col[best] {
                    best = i;
                }
            }
            best
        })
        .collect();
    LabelMap {
        height: u.height,
        width: u.width,
        labels,
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct DiceScore {
    /// `|pred ∩ truth| / |pred|`.
    pub overlap_ratio: f64,
    /// `2 |pred ∩ truth| / (|pred| + |truth|)`.
    pub symmetric: f64,
    /// The predicted region is empty; `overlap_ratio` is then reported as 0.
    pub empty_prediction: bool,
}

pub fn dice(pred: &LabelMap, truth: &LabelMap, phase: usize) -> Result<DiceScore> {
    if pred.labels.len() != truth.labels.len() || pred.height != truth.height {
        return Err(Error::Shape("label maps differ in shape".into()));
    }
    let mut both = 0usize;
    let mut p = 0usize;
    let mut t = 0usize;
    for (&a, &b) in pred.labels.iter().zip(&truth.labels) {
        let (ia, ib) = (a == phase, b == phase);
        p += ia as usize;
        t += ib as usize;
        both += (ia && ib) as usize;
    }
    let empty_prediction = p == 0;
    let overlap_ratio = if empty_prediction { 0.0 } else { both as f64 / p as f64 };
    let symmetric = if p + t == 0 { 1.0 } else { 2.0 * both as f64 / (p + t) as f64 };
    Ok(DiceScore {
        overlap_ratio,
        symmetric,
        empty_prediction,
    })
}

#[derive(Clone, Debug, PartialEq)]
pub struct TraceRow {
    pub iteration: usize,
    /// `|u_t - u_{t-1}|_F / sqrt(J)`; infinite on the first iteration.
    pub residual: f64,
    /// `|rowsum_i(u) - V_i|` per phase (or the soft masses without volumes).
    pub row_sum_error: Vec<f64>,
    /// Dual value of the `u`-subproblem at the potentials used for `u`.
    pub dual_objective: f64,
}

/// Stateful driver: holds `q`, `f` and the last `u`.
pub struct Segmenter {
    pub height: usize,
    pub width: usize,
    pub eps: f64,
    pub lambda: f64,
    pub tau_q: f64,
    pub n_f_inner: usize,
    pub volumes: Option<VolumeSpec>,
    pub edge: EdgeWeight,
    pub q: TVDualField,
    pub f: Vec<f64>,
    pub u: Option<Array2<f64>>,
    iteration: usize,
}

impl Segmenter {
    pub fn new(
        phases: usize,
        height: usize,
        width: usize,
        params: &SegParams,
        volumes: Option<VolumeSpec>,
        edge: EdgeWeight,
    ) -> Result<Self> {
        params.validate()?;
        if let Some(v) = &volumes {
            if v.phases() != phases {
                return Err(Error::Shape(format!(
                    "{} volumes given for {phases} phases",
                    v.phases()
                )));
            }
            if (v.total() - (height * width) as f64).abs() > 0.5 {
                return Err(Error::InvalidParameter(format!(
                    "volumes sum to {} but the image has {} pixels",
                    v.total(),
                    height * width
                )));
            }
        }
        if edge.grid.height != height || edge.grid.width != width {
            return Err(Error::Shape("edge weight does not match the image".into()));
        }
        Ok(Self {
            height,
            width,
            eps: params.eps,
            lambda: params.lambda,
            tau_q: params.tau_q,
            n_f_inner: params.n_f_inner,
            volumes,
            edge,
            q: TVDualField::zeros(phases, height, width),
            f: vec![0.0; phases],
            u: None,
            iteration: 0,
        })
    }

    /// One outer iteration against `cost` (`phases x pixels`, any sign).
    pub fn step(&mut self, cost: ArrayView2<'_, f64>) -> Result<TraceRow> {
        let k = effective_cost(cost, &self.q);
        let u = ot::recover_coupling(k.view(), &self.f, self.eps)?;
        let g = ot::c_transform_f(&self.f, k.view(), self.eps)?;
        let zero_v;
        let v_for_dual = match &self.volumes {
            Some(v) => v.counts(),
            None => {
                zero_v = vec![0.0; self.f.len()];
                &zero_v
            }
        };
        let dual_objective = ot::dual_objective(&self.f, &g, k.view(), v_for_dual, self.eps)?;

        update_q_in_place(&mut self.q, u.view(), self.height, self.width, self.lambda, self.tau_q, &self.edge);
        if let Some(v) = &self.volumes {
            let k = effective_cost(cost, &self.q);
            self.f = ot::sinkhorn_volume(k.view(), v.counts(), &self.f, self.eps, self.n_f_inner)?;
        }

        let residual = match &self.u {
            Some(prev) => {
                let s: f64 = prev.iter().zip(u.iter()).map(|(a, b)| (a - b) * (a - b)).sum();
                (s / (self.height * self.width) as f64).sqrt()
            }
            None => f64::INFINITY,
        };
        let row_sum_error = u
            .axis_iter(Axis(0))
            .enumerate()
            .map(|(i, r)| match &self.volumes {
                Some(v) => (r.sum() - v.counts()[i]).abs(),
                None => r.sum(),
            })
            .collect();
        self.u = Some(u);
        self.iteration += 1;
        Ok(TraceRow {
            iteration: self.iteration,
            residual,
            row_sum_error,
            dual_objective,
        })
    }

    pub fn soft(&self) -> Option<SoftSegmentation> {
        self.u.as_ref().map(|u| SoftSegmentation {
            height: self.height,
            width: self.width,
            u: u.clone(),
        })
    }
}

#[derive(Clone, Debug)]
pub struct SegmentResult {
    pub soft: SoftSegmentation,
    pub labels: LabelMap,
    pub trace: Vec<TraceRow>,
    pub converged: bool,
    pub stats: PhaseStats,
    pub f: Vec<f64>,
    pub q: TVDualField,
    pub edge: EdgeWeight,
}

impl SegmentResult {
    pub fn iterations(&self) -> usize {
        self.trace.len()
    }
}

/// Runs the full loop: k-means statistics, cost, edge weight, then outer
/// iterations until convergence or `max_outer`.
///
/// Non-convergence is reported through `converged`, not as an error. An
/// error is returned only when no iterate can be produced.
pub fn segment(
    h: &Image,
    phases: usize,
    volumes: Option<&VolumeSpec>,
    params: &SegParams,
    seed: u64,
) -> Result<SegmentResult> {
    params.validate()?;
    if params.max_outer == 0 {
        return Err(Error::InvalidParameter("max_outer must be >= 1".into()));
    }
    let stats = similarity::kmeans_init(h, phases, seed, params.kmeans_iter)?;
    segment_from_stats(h, stats, volumes, params)
}

/// As [`segment`] but starting from given phase statistics.
pub fn segment_from_stats(
    h: &Image,
    mut stats: PhaseStats,
    volumes: Option<&VolumeSpec>,
    params: &SegParams,
) -> Result<SegmentResult> {
    params.validate()?;
    if params.max_outer == 0 {
        return Err(Error::InvalidParameter("max_outer must be >= 1".into()));
    }
    let phases = stats.phases();
    let edge = if params.edge_sharpness > 0.0 {
        crate::grid::edge_weight(h, params.edge_sharpness, params.edge_sigma)?
    } else {
        EdgeWeight::uniform(h.height, h.width)
    };
    let mut cost = similarity::build_cost(params.cost, h, &stats)?;
    let mut seg = Segmenter::new(phases, h.height, h.width, params, volumes.cloned(), edge)?;
    let mut trace = Vec::new();
    let mut converged = false;
    for t in 0..params.max_outer {
        if let (Some(every), Some(u)) = (params.refresh_every, &seg.u) {
            if t % every == 0 {
                stats = similarity::update_statistics(h, u.view(), &stats)?;
                cost = similarity::build_cost(params.cost, h, &stats)?;
            }
        }
        let row = seg.step(cost.view())?;
        let done = row.residual < params.tol_u;
        trace.push(row);
        if done {
            converged = true;
            break;
        }
    }
    let soft = seg.soft().expect("at least one iteration ran");
    let labels = label(&soft);
    Ok(SegmentResult {
        soft,
        labels,
        trace,
        converged,
        stats,
        f: seg.f,
        q: seg.q,
        edge: seg.edge,
    })
}

/// Trace as CSV: `iteration,residual,rowsum_err_0..,dual_objective`, preceded
/// by `#` lines with run parameters.
pub fn trace_csv(trace: &[TraceRow], header: &[String]) -> String {
    let mut s = String::new();
    for h in header {
        let _ = writeln!(s, "# {h}");
    }
    let phases = trace.first().map(|r| r.row_sum_error.len()).unwrap_or(0);
    s.push_str("iteration,residual");
    for i in 0..phases {
        let _ = write!(s, ",rowsum_err_{i}");
    }
    s.push_str(",dual_objective\n");
    for r in trace {
        let _ = write!(s, "{},{:e}", r.iteration, r.residual);
        for e in &r.row_sum_error {
            let _ = write!(s, ",{e:e}");
        }
        let _ = writeln!(s, ",{:.17e}", r.dual_objective);
    }
    s
}
