//! VPTV-softmax: the segmentation loop unrolled as a network layer.
//!
//! The forward pass runs `depth` outer iterations with cost `C = -o`, then
//! emits `u = softmax((o - div q + f) / eps)` using the final duals. The
//! backward pass differentiates only that last softmax and treats the final
//! `q` and `f` as constants; the path through the dual iterations is dropped.

use std::io::{Read, Write};

use ndarray::{Array2, Axis, Zip};

use crate::error::{Error, Result};
use crate::grid::EdgeWeight;
use crate::ot::{self, VolumeSpec};
use crate::segment::{effective_cost, SegParams, Segmenter, SoftSegmentation, TVDualField};

/// Logits `o`, stored `phases x (height * width)`.
#[derive(Clone, Debug, PartialEq)]
pub struct FeatureTensor {
    pub height: usize,
    pub width: usize,
    pub data: Array2<f64>,
}

impl FeatureTensor {
    pub fn new(phases: usize, height: usize, width: usize, values: Vec<f64>) -> Result<Self> {
        let data = Array2::from_shape_vec((phases, height * width), values)
            .map_err(|e| Error::Shape(format!("tensor {phases}x{height}x{width}: {e}")))?;
        if data.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidParameter("tensor values must be finite".into()));
        }
        Ok(Self { height, width, data })
    }

    pub fn phases(&self) -> usize {
        self.data.nrows()
    }

    /// Flat binary form: magic `VPTVTNS1`, `u32` rank (3), `u64` dims
    /// `[phases, height, width]`, then row-major `f64` values. All
    /// little-endian.
    pub fn write_to(&self, mut w: impl Write) -> Result<()> {
        w.write_all(TENSOR_MAGIC)?;
        w.write_all(&3u32.to_le_bytes())?;
        for d in [self.phases(), self.height, self.width] {
            w.write_all(&(d as u64).to_le_bytes())?;
        }
        for v in self.data.iter() {
            w.write_all(&v.to_le_bytes())?;
        }
        Ok(())
    }

    pub fn read_from(mut r: impl Read) -> Result<Self> {
        let mut magic = [0u8; 8];
        r.read_exact(&mut magic)?;
        if &magic != TENSOR_MAGIC {
            return Err(Error::Parse("not a tensor file (bad magic)".into()));
        }
        let mut b4 = [0u8; 4];
        r.read_exact(&mut b4)?;
        let rank = u32::from_le_bytes(b4);
        if rank != 3 {
            return Err(Error::Parse(format!("expected a rank-3 tensor, got rank {rank}")));
        }
        let mut dims = [0usize; 3];
        let mut b8 = [0u8; 8];
        for d in dims.iter_mut() {
            r.read_exact(&mut b8)?;
            *d = u64::from_le_bytes(b8) as usize;
        }
        let n = dims[0]
            .checked_mul(dims[1])
            .and_then(|v| v.checked_mul(dims[2]))
            .ok_or_else(|| Error::Parse("tensor dims overflow".into()))?;
        let mut values = Vec::with_capacity(n);
        for _ in 0..n {
            r.read_exact(&mut b8)?;
            values.push(f64::from_le_bytes(b8));
        }
        Self::new(dims[0], dims[1], dims[2], values)
    }
}

pub const TENSOR_MAGIC: &[u8; 8] = b"VPTVTNS1";

#[derive(Clone, Debug)]
pub struct LayerConfig {
    pub eps: f64,
    pub lambda: f64,
    pub tau_q: f64,
    /// Unroll depth `T`.
    pub depth: usize,
    pub volumes: Option<VolumeSpec>,
}

impl LayerConfig {
    pub fn new(eps: f64, lambda: f64, depth: usize) -> Self {
        Self {
            eps,
            lambda,
            tau_q: 0.5 * eps,
            depth,
            volumes: None,
        }
    }

    fn validate(&self) -> Result<()> {
        if !(self.eps > 0.0) || !self.eps.is_finite() {
            return Err(Error::InvalidParameter(format!("eps must be > 0, got {}", self.eps)));
        }
        if !(self.lambda >= 0.0) || !(self.tau_q > 0.0) {
            return Err(Error::InvalidParameter("lambda must be >= 0 and tau_q > 0".into()));
        }
        Ok(())
    }
}

impl Default for LayerConfig {
    /// `eps = 1`, `T = 30`.
    fn default() -> Self {
        Self::new(1.0, 0.1, 30)
    }
}

/// Forward state kept for the backward pass.
#[derive(Clone, Debug)]
pub struct LayerCache {
    pub q: TVDualField,
    pub f: Vec<f64>,
    /// `(o - div q + f) / eps`.
    pub logits: Array2<f64>,
    pub u: Array2<f64>,
    pub eps: f64,
    pub height: usize,
    pub width: usize,
}

/// Softmax over phases for every column of `z`.
fn column_softmax(z: &Array2<f64>) -> Array2<f64> {
    let mut u = z.clone();
    for mut col in u.axis_iter_mut(Axis(1)) {
        let lse = ot::log_sum_exp(col.iter().copied());
        col.mapv_inplace(|v| (v - lse).exp());
    }
    u
}

pub fn vptv_forward(o: &FeatureTensor, cfg: &LayerConfig) -> Result<(SoftSegmentation, LayerCache)> {
    cfg.validate()?;
    let (phases, h, w) = (o.phases(), o.height, o.width);
    let cost = o.data.mapv(|v| -v);
    let mut params = SegParams::new(cfg.eps, cfg.lambda);
    params.tau_q = cfg.tau_q;
    let mut seg = Segmenter::new(phases, h, w, &params, cfg.volumes.clone(), EdgeWeight::uniform(h, w))?;
    for _ in 0..cfg.depth {
        seg.step(cost.view())?;
    }
    let k = effective_cost(cost.view(), &seg.q);
    let mut logits = Array2::zeros(k.raw_dim());
    Zip::from(&mut logits)
        .and(&k)
        .and_broadcast(&ndarray::Array1::from(seg.f.clone()).insert_axis(Axis(1)))
        .for_each(|z, &kv, &fv| *z = (fv - kv) / cfg.eps);
    let u = column_softmax(&logits);
    let soft = SoftSegmentation {
        height: h,
        width: w,
        u: u.clone(),
    };
    Ok((
        soft,
        LayerCache {
            q: seg.q,
            f: seg.f,
            logits,
            u,
            eps: cfg.eps,
            height: h,
            width: w,
        },
    ))
}

/// Gradient with respect to `o` through the final softmax only:
/// `grad_o = u * (grad_u - <grad_u, u>) / eps`, per pixel.
pub fn vptv_backward(grad_u: &Array2<f64>, cache: &LayerCache, cfg: &LayerConfig) -> Result<FeatureTensor> {
    if grad_u.dim() != cache.u.dim() {
        return Err(Error::Shape(format!(
            "upstream gradient is {:?}, cached output is {:?}",
            grad_u.dim(),
            cache.u.dim()
        )));
    }
    if cfg.eps != cache.eps {
        return Err(Error::InvalidParameter(format!(
            "config eps {} differs from the forward pass eps {}",
            cfg.eps, cache.eps
        )));
    }
    let mut grad = Array2::zeros(grad_u.raw_dim());
    for j in 0..grad_u.ncols() {
        let gu = grad_u.column(j);
        let u = cache.u.column(j);
        let inner: f64 = gu.iter().zip(u.iter()).map(|(a, b)| a * b).sum();
        for i in 0..grad_u.nrows() {
            grad[[i, j]] = u[i] * (gu[i] - inner) / cfg.eps;
        }
    }
    Ok(FeatureTensor {
        height: cache.height,
        width: cache.width,
        data: grad,
    })
}

/// The forward map with `q` and `f` frozen at their cached values.
pub fn frozen_forward(o: &FeatureTensor, cache: &LayerCache) -> Array2<f64> {
    let div = cache.q.divergence();
    let z = Array2::from_shape_fn(o.data.raw_dim(), |(i, j)| (o.data[[i, j]] - div[[i, j]] + cache.f[i]) / cache.eps);
    column_softmax(&z)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_tensor(rng: &mut ChaCha8Rng, i: usize, h: usize, w: usize) -> FeatureTensor {
        FeatureTensor::new(i, h, w, (0..i * h * w).map(|_| rng.random_range(-2.0..2.0)).collect()).unwrap()
    }

    fn plain_softmax(o: &FeatureTensor, eps: f64) -> Array2<f64> {
        let mut u = o.data.mapv(|v| (v / eps).exp());
        for mut c in u.axis_iter_mut(Axis(1)) {
            let s = c.sum();
            c.mapv_inplace(|v| v / s);
        }
        u
    }

    #[test]
    fn zero_depth_is_plain_softmax() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let o = random_tensor(&mut rng, 3, 4, 5);
        let (u, cache) = vptv_forward(&o, &LayerConfig::new(0.7, 2.0, 0)).unwrap();
        let p = plain_softmax(&o, 0.7);
        for (a, b) in u.u.iter().zip(p.iter()) {
            assert!((a - b).abs() < 1e-14);
        }
        assert!(cache.f.iter().all(|v| *v == 0.0));
    }

    #[test]
    fn spatially_constant_logits_are_a_fixed_point() {
        let a = [0.3, -0.2, 1.1];
        let o = FeatureTensor::new(3, 4, 4, (0..48).map(|k| a[k / 16]).collect()).unwrap();
        let (u, _) = vptv_forward(&o, &LayerConfig::new(1.0, 5.0, 10)).unwrap();
        let z: f64 = a.iter().map(|v| v.exp()).sum();
        for i in 0..3 {
            assert!(u.u.row(i).iter().all(|v| (v - a[i].exp() / z).abs() < 1e-14));
        }
    }

    #[test]
    fn simplex_and_zero_gradient() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let o = random_tensor(&mut rng, 4, 5, 5);
        let cfg = LayerConfig {
            volumes: Some(VolumeSpec::from_counts(vec![5.0, 5.0, 10.0, 5.0], 25).unwrap()),
            ..LayerConfig::new(0.5, 0.3, 7)
        };
        let (u, cache) = vptv_forward(&o, &cfg).unwrap();
        for c in u.u.axis_iter(Axis(1)) {
            assert!((c.sum() - 1.0).abs() < 1e-14);
        }
        let g = vptv_backward(&Array2::zeros(cache.u.raw_dim()), &cache, &cfg).unwrap();
        assert!(g.data.iter().all(|v| *v == 0.0));
    }

    #[test]
    fn two_phase_hand_gradient() {
        let o = FeatureTensor::new(2, 1, 1, vec![0.0, 0.0]).unwrap();
        let cfg = LayerConfig::new(1.0, 0.0, 0);
        let (_, cache) = vptv_forward(&o, &cfg).unwrap();
        let g = vptv_backward(&ndarray::array![[1.0], [0.0]], &cache, &cfg).unwrap();
        assert!((g.data[[0, 0]] - 0.25).abs() < 1e-15);
        assert!((g.data[[1, 0]] + 0.25).abs() < 1e-15);
    }

    #[test]
    fn backward_rejects_mismatch() {
        let o = FeatureTensor::new(2, 1, 2, vec![0.0; 4]).unwrap();
        let cfg = LayerConfig::new(1.0, 0.0, 1);
        let (_, cache) = vptv_forward(&o, &cfg).unwrap();
        assert!(vptv_backward(&Array2::zeros((2, 3)), &cache, &cfg).is_err());
        assert!(vptv_backward(&Array2::zeros((2, 2)), &cache, &LayerConfig::new(0.5, 0.0, 1)).is_err());
    }

    #[test]
    fn gradient_columns_sum_to_zero() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let o = random_tensor(&mut rng, 3, 4, 4);
        let cfg = LayerConfig::new(1.0, 0.5, 5);
        let (_, cache) = vptv_forward(&o, &cfg).unwrap();
        let gu = Array2::from_shape_fn(cache.u.raw_dim(), |_| rng.random_range(-1.0..1.0));
        let g = vptv_backward(&gu, &cache, &cfg).unwrap();
        for c in g.data.axis_iter(Axis(1)) {
            assert!(c.sum().abs() < 1e-14);
        }
    }

    #[test]
    fn tensor_binary_roundtrip() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let t = random_tensor(&mut rng, 2, 3, 4);
        let mut buf = Vec::new();
        t.write_to(&mut buf).unwrap();
        assert_eq!(buf.len(), 8 + 4 + 24 + 24 * 8);
        assert_eq!(FeatureTensor::read_from(buf.as_slice()).unwrap(), t);
        buf[0] = b'X';
        assert!(FeatureTensor::read_from(buf.as_slice()).is_err());
    }
}
