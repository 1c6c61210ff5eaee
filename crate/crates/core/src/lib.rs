//! Volume-preserving multiphase image segmentation.
//!
//! The segmentation problem is posed as an entropic-regularized optimal
//! transport between per-phase volumes and pixels, with a total-variation
//! penalty handled through its dual field. The solver alternates three cheap
//! steps: a per-pixel softmax, a projected gradient step on the TV dual, and
//! a log-domain Sinkhorn update of the volume potential.
//!
//! Modules:
//!
//! | Module | Contents |
//! |--------|----------|
//! | [`grid`] | gradient / divergence pair, Gaussian smoothing, edge weight |
//! | [`image`] | [`Image`] plus PGM/PPM/PNG I/O |
//! | [`similarity`] | k-means init, cost volumes, weighted statistics |
//! | [`ot`] | soft min/max, c-transforms, volume Sinkhorn, exact OT oracle |
//! | [`segment`] | the alternating segmentation loop, labels, dice |
//! | [`layer`] | unrolled VPTV-softmax layer with frozen-dual backward |
//! | [`synth`] | deterministic synthetic test images |

pub mod error;
pub mod grid;
pub mod image;
pub mod layer;
pub mod ot;
pub mod segment;
pub mod similarity;
pub mod synth;

pub use error::{Error, Result};
pub use grid::{divergence, edge_weight, gaussian_convolve, gradient, EdgeWeight, ScalarGrid, VectorGrid};
pub use image::Image;
pub use layer::{vptv_backward, vptv_forward, FeatureTensor, LayerCache, LayerConfig};
pub use ot::{Coupling, VolumeSpec};
pub use segment::{segment, LabelMap, SegParams, SegmentResult, SoftSegmentation, TVDualField};
pub use similarity::{CostKind, CostVolume, PhaseStats};
