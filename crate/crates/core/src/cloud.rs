//! Colored point clouds and the geometric pre-conditioning applied before
//! registration.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::Point;

/// Per-vertex RGB color, each channel in `[0, 1]`.
pub type Rgb = [f64; 3];

#[derive(Error, Debug, Clone, PartialEq)]
pub enum CloudError {
    #[error("point cloud must contain at least one vertex")]
    Empty,

    #[error("vertex count {vertices} does not match color count {colors}")]
    LengthMismatch { vertices: usize, colors: usize },

    #[error("vertex {index} has a non-finite coordinate")]
    NonFiniteCoordinate { index: usize },

    #[error("vertex {index} has a color channel outside [0, 1]")]
    ColorOutOfRange { index: usize },

    #[error("all vertices coincide; cloud has zero spatial extent")]
    DegenerateCloud,
}

/// Vertices (millimeters in source data) with a parallel array of colors.
#[derive(Debug, Clone, PartialEq)]
pub struct PointCloud {
    id: String,
    vertices: Vec<Point>,
    colors: Vec<Rgb>,
}

impl PointCloud {
    pub fn new(
        id: impl Into<String>,
        vertices: Vec<Point>,
        colors: Vec<Rgb>,
    ) -> Result<Self, CloudError> {
        if vertices.len() != colors.len() {
            return Err(CloudError::LengthMismatch {
                vertices: vertices.len(),
                colors: colors.len(),
            });
        }
        if vertices.is_empty() {
            return Err(CloudError::Empty);
        }
        if let Some(index) = vertices
            .iter()
            .position(|v| !v.iter().all(|c| c.is_finite()))
        {
            return Err(CloudError::NonFiniteCoordinate { index });
        }
        if let Some(index) = colors
            .iter()
            .position(|c| !c.iter().all(|ch| (0.0..=1.0).contains(ch)))
        {
            return Err(CloudError::ColorOutOfRange { index });
        }
        Ok(Self {
            id: id.into(),
            vertices,
            colors,
        })
    }

    pub fn id(&self) -> &str {
        &self.id
    }

    pub fn vertices(&self) -> &[Point] {
        &self.vertices
    }

    pub fn colors(&self) -> &[Rgb] {
        &self.colors
    }

    pub fn len(&self) -> usize {
        self.vertices.len()
    }

    /// Always false for a constructed cloud; present for API symmetry with `len`.
    pub fn is_empty(&self) -> bool {
        self.vertices.is_empty()
    }

    pub fn with_id(mut self, id: impl Into<String>) -> Self {
        self.id = id.into();
        self
    }

    /// Replaces the geometry, keeping colors and id.
    pub fn with_vertices(&self, vertices: Vec<Point>) -> Result<Self, CloudError> {
        Self::new(self.id.clone(), vertices, self.colors.clone())
    }

    pub fn centroid(&self) -> Point {
        let sum = self.vertices.iter().fold(Point::zeros(), |acc, v| acc + v);
        sum / self.vertices.len() as f64
    }
}

/// Centroid and scale removed by [`normalize`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NormalizationRecord {
    pub centroid: Point,
    pub scale: f64,
}

impl NormalizationRecord {
    pub fn identity() -> Self {
        Self {
            centroid: Point::zeros(),
            scale: 1.0,
        }
    }

    pub fn apply_point(&self, p: &Point) -> Point {
        (p - self.centroid) / self.scale
    }

    pub fn invert_point(&self, p: &Point) -> Point {
        p * self.scale + self.centroid
    }

    /// Maps a normalized cloud back to the original frame.
    pub fn denormalize(&self, cloud: &PointCloud) -> PointCloud {
        let vertices = cloud.vertices.iter().map(|p| self.invert_point(p)).collect();
        PointCloud {
            id: cloud.id.clone(),
            vertices,
            colors: cloud.colors.clone(),
        }
    }
}

/// Centers the cloud at the origin and scales it to unit root-mean-square
/// vertex norm.
pub fn normalize(cloud: &PointCloud) -> Result<(PointCloud, NormalizationRecord), CloudError> {
    let centroid = cloud.centroid();
    let mean_sq = cloud
        .vertices
        .iter()
        .map(|v| (v - centroid).norm_squared())
        .sum::<f64>()
        / cloud.len() as f64;
    let scale = mean_sq.sqrt();
    // identical vertices can leave rounding residue in the centroid
    if !(scale > 1e-12 * centroid.amax().max(1.0)) {
        return Err(CloudError::DegenerateCloud);
    }
    let record = NormalizationRecord { centroid, scale };
    let vertices = cloud.vertices.iter().map(|p| record.apply_point(p)).collect();
    Ok((
        PointCloud {
            id: cloud.id.clone(),
            vertices,
            colors: cloud.colors.clone(),
        },
        record,
    ))
}

/// Uniform random subsample without replacement. Vertex order of the
/// retained points follows the input.
pub fn downsample(cloud: &PointCloud, target_count: usize, seed: u64) -> PointCloud {
    if target_count >= cloud.len() {
        return cloud.clone();
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut indices = rand::seq::index::sample(&mut rng, cloud.len(), target_count.max(1)).into_vec();
    indices.sort_unstable();
    PointCloud {
        id: cloud.id.clone(),
        vertices: indices.iter().map(|&i| cloud.vertices[i]).collect(),
        colors: indices.iter().map(|&i| cloud.colors[i]).collect(),
    }
}
