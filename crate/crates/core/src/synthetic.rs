//! Seeded synthetic clouds and deformations for tests, benchmarks and demos.

use nalgebra::{Rotation3, Unit};
use rand::Rng;
use rand_distr::{Distribution, Normal, StandardNormal};

use crate::cloud::{normalize, PointCloud, Rgb};
use crate::Point;

/// Normalized random cloud with anisotropic extent (a rough face-like
/// ellipsoidal patch) and random colors.
pub fn random_cloud<R: Rng + ?Sized>(rng: &mut R, count: usize, id: &str) -> PointCloud {
    let axes = Point::new(1.0, 0.75, 0.45);
    let vertices: Vec<Point> = (0..count)
        .map(|_| {
            let p = Point::new(
                rng.random_range(-1.0..1.0),
                rng.random_range(-1.0..1.0),
                rng.random_range(-1.0..1.0),
            );
            // shallow surface bulge keeps the cloud asymmetric in depth
            let bulge = 0.3 * (1.0 - p.x * p.x) * (1.0 - p.y * p.y);
            Point::new(p.x * axes.x, p.y * axes.y, p.z * axes.z * 0.4 + bulge)
        })
        .collect();
    let colors = random_colors(rng, count);
    let cloud = PointCloud::new(id, vertices, colors).expect("finite synthetic cloud");
    normalize(&cloud).expect("non-degenerate synthetic cloud").0
}

pub fn random_colors<R: Rng + ?Sized>(rng: &mut R, count: usize) -> Vec<Rgb> {
    (0..count)
        .map(|_| [rng.random(), rng.random(), rng.random()])
        .collect()
}

/// Rotation about a uniformly random axis by an angle in `[0, max_angle]`.
pub fn random_rotation<R: Rng + ?Sized>(rng: &mut R, max_angle: f64) -> Rotation3<f64> {
    let axis = loop {
        let v = Point::new(
            StandardNormal.sample(rng),
            StandardNormal.sample(rng),
            StandardNormal.sample(rng),
        );
        if v.norm() > 1e-6 {
            break Unit::new_normalize(v);
        }
    };
    Rotation3::from_axis_angle(&axis, rng.random_range(0.0..=max_angle))
}

/// Random vector with norm at most `max_norm`.
pub fn random_translation<R: Rng + ?Sized>(rng: &mut R, max_norm: f64) -> Point {
    let dir = random_rotation(rng, std::f64::consts::PI) * Point::x();
    dir * rng.random_range(0.0..=max_norm)
}

pub fn add_noise<R: Rng + ?Sized>(rng: &mut R, points: &[Point], sigma: f64) -> Vec<Point> {
    let normal = Normal::new(0.0, sigma).expect("valid noise level");
    points
        .iter()
        .map(|p| p + Point::new(normal.sample(rng), normal.sample(rng), normal.sample(rng)))
        .collect()
}

/// Smooth Gaussian bump: each point moves by
/// `magnitude * exp(-|p - center|^2 / (2 width^2)) * direction`.
pub fn gaussian_bump(points: &[Point], center: &Point, direction: &Point, width: f64, magnitude: f64) -> Vec<Point> {
    let dir = direction.normalize();
    points
        .iter()
        .map(|p| {
            let w = (-(p - center).norm_squared() / (2.0 * width * width)).exp();
            p + dir * (magnitude * w)
        })
        .collect()
}

/// Root mean square distance between paired points.
pub fn rms(a: &[Point], b: &[Point]) -> f64 {
    assert_eq!(a.len(), b.len());
    let sum: f64 = a.iter().zip(b).map(|(p, q)| (p - q).norm_squared()).sum();
    (sum / a.len() as f64).sqrt()
}
