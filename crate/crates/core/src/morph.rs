//! Morph generation from a completed registration.

use thiserror::Error;

use crate::bcpd::{apply_transform, RegistrationError, RegistrationState, SimilarityTransform, MIN_MATCHED_MASS};
use crate::cloud::{CloudError, PointCloud, Rgb};
use crate::Point;

#[derive(Error, Debug, Clone, PartialEq)]
pub enum MorphError {
    #[error("blend weight {0} is outside [0, 1]")]
    InvalidAlpha(f64),

    #[error("shape mismatch: expected {expected} rows, got {got}")]
    ShapeMismatch { expected: usize, got: usize },

    #[error(transparent)]
    Cloud(#[from] CloudError),

    #[error(transparent)]
    Registration(RegistrationError),
}

impl From<RegistrationError> for MorphError {
    fn from(err: RegistrationError) -> Self {
        match err {
            RegistrationError::ShapeMismatch { expected, got } => {
                MorphError::ShapeMismatch { expected, got }
            }
            RegistrationError::Cloud(e) => MorphError::Cloud(e),
            other => MorphError::Registration(other),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MorphConfig {
    /// Weight of the aligned source; the target side gets `1 - alpha`.
    pub alpha: f64,
}

impl Default for MorphConfig {
    fn default() -> Self {
        Self { alpha: 0.5 }
    }
}

impl MorphConfig {
    pub fn new(alpha: f64) -> Result<Self, MorphError> {
        if !(0.0..=1.0).contains(&alpha) {
            return Err(MorphError::InvalidAlpha(alpha));
        }
        Ok(Self { alpha })
    }
}

/// The source with registered coordinates and its original colors.
pub fn aligned_colored_source(
    source: &PointCloud,
    transform: &SimilarityTransform,
    displacement: &[Point],
) -> Result<PointCloud, MorphError> {
    Ok(apply_transform(source, transform, displacement)?)
}

/// Posterior-expected partner of every source point: its position from
/// `x_hat`, its color as the `P`-weighted mean of target colors. Source
/// points that matched nothing pair with their nearest target vertex.
pub fn correspondence_targets(
    state: &RegistrationState,
    target: &PointCloud,
) -> Result<(Vec<Point>, Vec<Rgb>), MorphError> {
    let n = target.len();
    if state.p.ncols() != n {
        return Err(MorphError::ShapeMismatch {
            expected: n,
            got: state.p.ncols(),
        });
    }
    let m = state.p.nrows();
    let colors_in = target.colors();

    let mut weighted = vec![[0.0; 3]; m];
    for (j, column) in state.p.column_iter().enumerate() {
        let c = colors_in[j];
        for (i, &p) in column.iter().enumerate() {
            for k in 0..3 {
                weighted[i][k] += p * c[k];
            }
        }
    }

    let mut coords = Vec::with_capacity(m);
    let mut colors = Vec::with_capacity(m);
    for i in 0..m {
        let nu = state.nu[i];
        if nu < MIN_MATCHED_MASS {
            let nearest = nearest_vertex(&state.y_hat[i], target.vertices());
            coords.push(target.vertices()[nearest]);
            colors.push(colors_in[nearest]);
        } else {
            coords.push(state.x_hat[i]);
            colors.push(weighted[i].map(|w| (w / nu).clamp(0.0, 1.0)));
        }
    }
    Ok((coords, colors))
}

/// Index of the closest vertex; ties go to the lowest index.
fn nearest_vertex(p: &Point, vertices: &[Point]) -> usize {
    let mut best = 0;
    let mut best_d = f64::INFINITY;
    for (j, v) in vertices.iter().enumerate() {
        let d = (v - p).norm_squared();
        if d < best_d {
            best = j;
            best_d = d;
        }
    }
    best
}

/// Per-vertex blend `alpha * pst1 + (1 - alpha) * partner` of geometry and
/// color.
pub fn morph(
    pst1: &PointCloud,
    corr_coords: &[Point],
    corr_colors: &[Rgb],
    target_id: &str,
    config: &MorphConfig,
) -> Result<PointCloud, MorphError> {
    let m = pst1.len();
    for got in [corr_coords.len(), corr_colors.len()] {
        if got != m {
            return Err(MorphError::ShapeMismatch { expected: m, got });
        }
    }
    let MorphConfig { alpha } = MorphConfig::new(config.alpha)?;
    let beta = 1.0 - alpha;
    let vertices = pst1
        .vertices()
        .iter()
        .zip(corr_coords)
        .map(|(a, b)| a * alpha + b * beta)
        .collect();
    let colors = pst1
        .colors()
        .iter()
        .zip(corr_colors)
        .map(|(a, b)| std::array::from_fn(|k| (alpha * a[k] + beta * b[k]).clamp(0.0, 1.0)))
        .collect();
    let id = format!("morph_{}_{}_{}", pst1.id(), target_id, alpha);
    Ok(PointCloud::new(id, vertices, colors)?)
}
