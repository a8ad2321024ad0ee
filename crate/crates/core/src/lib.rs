//! Direct 3D face morphing from colored point clouds.
//!
//! The pipeline registers a source face onto a target face with Bayesian
//! Coherent Point Drift ([`bcpd`]), carries the source colors along with the
//! transformed coordinates, and blends geometry and color of the aligned pair
//! ([`morph`]). The [`metrics`] module scores the resulting attacks against
//! face-recognition comparison scores with the G-MAP family of metrics.

#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::needless_range_loop)]

pub mod bcpd;
pub mod cloud;
pub mod kernel;
pub mod metrics;
pub mod morph;
pub mod ply;
pub mod synthetic;

pub use bcpd::{
    apply_transform, register, RegistrationError, RegistrationOutcome, RegistrationParams,
    RegistrationState, SimilarityTransform,
};
pub use cloud::{downsample, normalize, CloudError, NormalizationRecord, PointCloud, Rgb};
pub use kernel::{build_gram, gaussian_kernel, solve_spd, GramMatrix, KernelError};
pub use metrics::{
    gmap, gmap_ma, gmap_mamf, quadrant_classify, threshold_at_fmr, FrsThreshold, FtarTable,
    GmapReport, MetricsError, Quadrant, ScoreRecord,
};
pub use morph::{aligned_colored_source, correspondence_targets, morph, MorphConfig, MorphError};
pub use ply::{load_ply, save_ply, write_ply, PlyError};

/// 3D coordinate type used throughout the crate.
pub type Point = nalgebra::Vector3<f64>;
