//! WebAssembly bindings behind the static demo page in `www/`.
//!
//! Two operations are exported: segmenting a synthetic image under a volume
//! constraint, and solving the 3x10 entropic transport example at a given
//! `eps`. The plain Rust entry points (`run_segmentation`, `run_transport`)
//! are what the exported functions wrap, so they can be tested natively.

use wasm_bindgen::prelude::*;

use volseg::image::PALETTE;
use volseg::ot::{entropic_ot_with_limit, entropy, exact_ot_oracle, transport_cost, VolumeSpec};
use volseg::segment::dice;
use volseg::synth::{generate, SynthKind};
use volseg::{segment, SegParams};

/// Outer-iteration cap, so the page stays responsive.
const MAX_OUTER: usize = 300;
/// Sinkhorn cap for the transport panel.
const MAX_SINKHORN: usize = 200_000;

const COLORMAP: [[f64; 3]; 5] = [
    [68.0, 1.0, 84.0],
    [59.0, 82.0, 139.0],
    [33.0, 145.0, 140.0],
    [94.0, 201.0, 98.0],
    [253.0, 231.0, 37.0],
];

fn colormap(t: f64) -> [u8; 3] {
    let x = t.clamp(0.0, 1.0) * (COLORMAP.len() - 1) as f64;
    let k = (x.floor() as usize).min(COLORMAP.len() - 2);
    let f = x - k as f64;
    let mut out = [0u8; 3];
    for c in 0..3 {
        out[c] = (COLORMAP[k][c] * (1.0 - f) + COLORMAP[k + 1][c] * f).round() as u8;
    }
    out
}

#[wasm_bindgen]
pub struct Segmentation {
    width: usize,
    height: usize,
    image: Vec<u8>,
    labels: Vec<u8>,
    soft: Vec<u8>,
    dice: f64,
    foreground_fraction: f64,
    mean_max_probability: f64,
    iterations: usize,
    converged: bool,
}

#[wasm_bindgen]
impl Segmentation {
    #[wasm_bindgen(getter)]
    pub fn width(&self) -> usize {
        self.width
    }

    #[wasm_bindgen(getter)]
    pub fn height(&self) -> usize {
        self.height
    }

    /// Input image as RGBA bytes.
    pub fn image_rgba(&self) -> Vec<u8> {
        self.image.clone()
    }

    /// Label map as RGBA bytes (fixed palette).
    pub fn labels_rgba(&self) -> Vec<u8> {
        self.labels.clone()
    }

    /// Foreground probability through a perceptual colormap, RGBA bytes.
    pub fn soft_rgba(&self) -> Vec<u8> {
        self.soft.clone()
    }

    /// Symmetric dice of the foreground against the ground truth.
    #[wasm_bindgen(getter)]
    pub fn dice(&self) -> f64 {
        self.dice
    }

    /// Soft foreground mass over the pixel count.
    #[wasm_bindgen(getter)]
    pub fn foreground_fraction(&self) -> f64 {
        self.foreground_fraction
    }

    #[wasm_bindgen(getter)]
    pub fn mean_max_probability(&self) -> f64 {
        self.mean_max_probability
    }

    #[wasm_bindgen(getter)]
    pub fn iterations(&self) -> usize {
        self.iterations
    }

    #[wasm_bindgen(getter)]
    pub fn converged(&self) -> bool {
        self.converged
    }
}

/// Segments a two-phase synthetic image. `foreground_percent <= 0` (or NaN)
/// disables the volume constraint.
pub fn run_segmentation(
    kind: &str,
    size: usize,
    noise: f64,
    seed: u64,
    foreground_percent: f64,
    eps: f64,
    lambda: f64,
) -> Result<Segmentation, String> {
    let kind: SynthKind = kind.parse().map_err(|e: volseg::Error| e.to_string())?;
    let s = generate(kind, size, noise, seed).map_err(|e| e.to_string())?;
    if s.phases != 2 {
        return Err("the demo segments two-phase images only".into());
    }
    let pixels = size * size;
    let volumes = if foreground_percent > 0.0 {
        let p = foreground_percent / 100.0;
        if p >= 1.0 {
            return Err("foreground percentage must be below 100".into());
        }
        Some(VolumeSpec::from_ratios(&[1.0 - p, p], pixels).map_err(|e| e.to_string())?)
    } else {
        None
    };
    let mut params = SegParams::new(eps, lambda);
    params.max_outer = MAX_OUTER;
    let r = segment(&s.image, 2, volumes.as_ref(), &params, seed).map_err(|e| e.to_string())?;

    let mut image = Vec::with_capacity(pixels * 4);
    let mut labels = Vec::with_capacity(pixels * 4);
    let mut soft = Vec::with_capacity(pixels * 4);
    for j in 0..pixels {
        let px = s.image.pixel(j);
        let rgb = if px.len() == 3 {
            [px[0], px[1], px[2]]
        } else {
            [px[0]; 3]
        };
        image.extend(rgb.iter().map(|v| (v * 255.0).round() as u8));
        image.push(255);
        labels.extend(PALETTE[r.labels.labels[j] % PALETTE.len()]);
        labels.push(255);
        soft.extend(colormap(r.soft.u[[1, j]]));
        soft.push(255);
    }
    Ok(Segmentation {
        width: size,
        height: size,
        image,
        labels,
        soft,
        dice: dice(&r.labels, &s.truth, 1).map_err(|e| e.to_string())?.symmetric,
        foreground_fraction: r.soft.masses()[1] / pixels as f64,
        mean_max_probability: r.soft.mean_max_probability(),
        iterations: r.iterations(),
        converged: r.converged,
    })
}

#[wasm_bindgen]
pub fn segment_synthetic(
    kind: &str,
    size: usize,
    noise: f64,
    seed: u32,
    foreground_percent: f64,
    eps: f64,
    lambda: f64,
) -> Result<Segmentation, JsError> {
    run_segmentation(kind, size, noise, seed as u64, foreground_percent, eps, lambda).map_err(|e| JsError::new(&e))
}

#[wasm_bindgen]
pub struct Transport {
    coupling: Vec<f64>,
    entropy: f64,
    cost: f64,
    exact_cost: f64,
    residual: f64,
}

#[wasm_bindgen]
impl Transport {
    /// Row-major `3 x 10` coupling.
    pub fn coupling(&self) -> Vec<f64> {
        self.coupling.clone()
    }

    #[wasm_bindgen(getter)]
    pub fn rows(&self) -> usize {
        3
    }

    #[wasm_bindgen(getter)]
    pub fn cols(&self) -> usize {
        10
    }

    #[wasm_bindgen(getter)]
    pub fn entropy(&self) -> f64 {
        self.entropy
    }

    #[wasm_bindgen(getter)]
    pub fn cost(&self) -> f64 {
        self.cost
    }

    #[wasm_bindgen(getter)]
    pub fn exact_cost(&self) -> f64 {
        self.exact_cost
    }

    /// Marginal residual when the solver stopped.
    #[wasm_bindgen(getter)]
    pub fn residual(&self) -> f64 {
        self.residual
    }
}

/// `a = (2,5,3)`, `b = 1_10`, `C_ij = (2i - j)^2`.
pub fn run_transport(eps: f64) -> Result<Transport, String> {
    let a = [2.0, 5.0, 3.0];
    let b = [1.0; 10];
    let c = ndarray_cost();
    let sol = entropic_ot_with_limit(&a, &b, c.view(), eps, 1e-6, MAX_SINKHORN).map_err(|e| e.to_string())?;
    let (_, exact) = exact_ot_oracle(&a, &b, c.view()).map_err(|e| e.to_string())?;
    Ok(Transport {
        entropy: entropy(sol.coupling.view()),
        cost: transport_cost(sol.coupling.view(), c.view()),
        coupling: sol.coupling.iter().copied().collect(),
        exact_cost: exact,
        residual: sol.residual,
    })
}

fn ndarray_cost() -> volseg::Coupling {
    volseg::Coupling::from_shape_fn((3, 10), |(i, j)| {
        let d = 2.0 * (i + 1) as f64 - (j + 1) as f64;
        d * d
    })
}

#[wasm_bindgen]
pub fn transport_example(eps: f64) -> Result<Transport, JsError> {
    run_transport(eps).map_err(|e| JsError::new(&e))
}
