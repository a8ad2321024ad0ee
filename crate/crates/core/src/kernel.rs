//! Gaussian kernel, Gram matrices and the symmetric positive-definite solves
//! used by the displacement update.

use nalgebra::DMatrix;
use thiserror::Error;

use crate::Point;

#[derive(Error, Debug, Clone, PartialEq)]
pub enum KernelError {
    #[error("matrix is not square ({rows}x{cols})")]
    NotSquare { rows: usize, cols: usize },

    #[error("right-hand side has {got} rows, expected {expected}")]
    ShapeMismatch { expected: usize, got: usize },

    #[error("matrix is not symmetric (max asymmetry {0:e})")]
    NotSymmetric(f64),

    #[error("matrix is not positive definite, even after diagonal jitter")]
    NotPositiveDefinite,
}

/// `exp(-|a - b|^2 / (2 beta^2))`.
pub fn gaussian_kernel(a: &Point, b: &Point, beta: f64) -> f64 {
    (-(a - b).norm_squared() / (2.0 * beta * beta)).exp()
}

/// Dense kernel matrix over a point set.
#[derive(Debug, Clone, PartialEq)]
pub struct GramMatrix {
    values: DMatrix<f64>,
    beta: f64,
}

impl GramMatrix {
    pub fn values(&self) -> &DMatrix<f64> {
        &self.values
    }

    pub fn beta(&self) -> f64 {
        self.beta
    }

    pub fn dim(&self) -> usize {
        self.values.nrows()
    }
}

pub fn build_gram(points: &[Point], beta: f64) -> GramMatrix {
    let m = points.len();
    let mut values = DMatrix::from_element(m, m, 1.0);
    for j in 0..m {
        for i in (j + 1)..m {
            let k = gaussian_kernel(&points[i], &points[j], beta);
            values[(i, j)] = k;
            values[(j, i)] = k;
        }
    }
    GramMatrix { values, beta }
}

fn max_asymmetry(a: &DMatrix<f64>) -> f64 {
    let n = a.nrows();
    let mut worst = 0.0f64;
    for j in 0..n {
        for i in (j + 1)..n {
            worst = worst.max((a[(i, j)] - a[(j, i)]).abs());
        }
    }
    worst
}

/// Solves `A X = B` for symmetric positive-definite `A` by Cholesky
/// factorization. On a failed factorization the diagonal is shifted once by
/// `1e-9 * trace(A) / M` before giving up.
pub fn solve_spd(a: &DMatrix<f64>, b: &DMatrix<f64>) -> Result<DMatrix<f64>, KernelError> {
    let m = a.nrows();
    if a.ncols() != m {
        return Err(KernelError::NotSquare {
            rows: m,
            cols: a.ncols(),
        });
    }
    if b.nrows() != m {
        return Err(KernelError::ShapeMismatch {
            expected: m,
            got: b.nrows(),
        });
    }
    let asym = max_asymmetry(a);
    let magnitude = a.amax().max(1.0);
    if asym > 1e-10 * magnitude {
        return Err(KernelError::NotSymmetric(asym));
    }
    if let Some(chol) = a.clone().cholesky() {
        return Ok(chol.solve(b));
    }
    let jitter = 1e-9 * a.trace() / m as f64;
    if !(jitter > 0.0) {
        return Err(KernelError::NotPositiveDefinite);
    }
    let mut shifted = a.clone();
    for i in 0..m {
        shifted[(i, i)] += jitter;
    }
    shifted
        .cholesky()
        .map(|chol| chol.solve(b))
        .ok_or(KernelError::NotPositiveDefinite)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn kernel_values() {
        let a = Point::new(0.3, -1.0, 2.0);
        assert_eq!(gaussian_kernel(&a, &a, 0.7), 1.0);
        let b = Point::new(1.0, 1.0, 0.0);
        let got = gaussian_kernel(&Point::zeros(), &b, 1.0);
        assert!((got - (-1.0f64).exp()).abs() < 1e-15);
        assert!((got - 0.367879).abs() < 1e-6);
    }

    #[test]
    fn gram_small_cases() {
        let g = build_gram(&[Point::new(1.0, 2.0, 3.0)], 0.3);
        assert_eq!(g.values(), &DMatrix::from_element(1, 1, 1.0));

        let p = Point::new(0.5, 0.5, 0.5);
        let g = build_gram(&[p, p], 0.3);
        assert_eq!(g.values(), &DMatrix::from_element(2, 2, 1.0));

        let line = [Point::zeros(), Point::x(), Point::x() * 2.0];
        let g = build_gram(&line, 1.0);
        let near = (-0.5f64).exp();
        let far = (-2.0f64).exp();
        assert!((g.values()[(0, 1)] - near).abs() < 1e-15);
        assert!((g.values()[(1, 2)] - near).abs() < 1e-15);
        assert!((g.values()[(0, 2)] - far).abs() < 1e-15);
        assert_eq!(g.values()[(2, 0)], g.values()[(0, 2)]);
    }

    #[test]
    fn gram_is_psd_for_random_clouds() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for &m in &[5usize, 60, 250, 500] {
            let pts: Vec<Point> = (0..m)
                .map(|_| Point::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)))
                .collect();
            let g = build_gram(&pts, 0.3);
            assert!(max_asymmetry(g.values()) <= 1e-12);
            assert!(g.values().diagonal().iter().all(|&d| d == 1.0));
            let eig = g.values().clone().symmetric_eigenvalues();
            assert!(eig.min() >= -1e-8, "m={m} min eig {}", eig.min());
        }
    }

    #[test]
    fn solve_trivial_systems() {
        let b = DMatrix::from_row_slice(3, 2, &[1.0, -2.0, 3.5, 0.0, 7.0, 1e-3]);
        assert_eq!(solve_spd(&DMatrix::identity(3, 3), &b).unwrap(), b);
        let x = solve_spd(&(DMatrix::identity(4, 4) * 2.0), &DMatrix::from_element(4, 3, 1.0)).unwrap();
        assert!(x.iter().all(|&v| (v - 0.5).abs() < 1e-15));
    }

    #[test]
    fn solve_errors() {
        let asym = DMatrix::from_row_slice(2, 2, &[2.0, 1.0, 0.0, 2.0]);
        assert!(matches!(solve_spd(&asym, &DMatrix::zeros(2, 1)), Err(KernelError::NotSymmetric(_))));
        let indefinite = DMatrix::from_row_slice(2, 2, &[1.0, 0.0, 0.0, -1.0]);
        assert_eq!(
            solve_spd(&indefinite, &DMatrix::zeros(2, 1)),
            Err(KernelError::NotPositiveDefinite)
        );
        assert!(matches!(
            solve_spd(&DMatrix::identity(2, 2), &DMatrix::zeros(3, 1)),
            Err(KernelError::ShapeMismatch { .. })
        ));
    }

    #[test]
    fn jitter_rescues_semidefinite() {
        // rank-one PSD matrix: Cholesky fails at the zero pivot, the jitter fixes it
        let v = DMatrix::from_column_slice(3, 1, &[1.0, 1.0, 1.0]);
        let a = &v * v.transpose();
        assert!(a.clone().cholesky().is_none());
        assert!(solve_spd(&a, &v).is_ok());
    }

    fn random_spd(rng: &mut ChaCha8Rng, m: usize) -> DMatrix<f64> {
        let raw = DMatrix::from_fn(m, m, |_, _| rng.random_range(-1.0..1.0));
        let q = raw.qr().q();
        let d = DMatrix::from_diagonal(&nalgebra::DVector::from_fn(m, |_, _| rng.random_range(0.1..10.0)));
        let a = q.transpose() * d * &q;
        (&a + a.transpose()) * 0.5
    }

    #[test]
    fn solve_residual_random_spd() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for case in 0..100 {
            let m = 1 + (case * 37) % 200;
            let a = random_spd(&mut rng, m);
            let b = DMatrix::from_fn(m, 3, |_, _| rng.random_range(-5.0..5.0));
            let x = solve_spd(&a, &b).unwrap();
            let rel = (&a * &x - &b).norm() / b.norm();
            assert!(rel <= 1e-8, "case {case} m={m} rel={rel:e}");
        }
    }

    proptest! {
        #[test]
        fn kernel_symmetric_and_bounded(
            a in prop::array::uniform3(-10.0f64..10.0),
            b in prop::array::uniform3(-10.0f64..10.0),
            beta in 0.01f64..5.0,
        ) {
            let (a, b) = (Point::from(a), Point::from(b));
            let k = gaussian_kernel(&a, &b, beta);
            prop_assert_eq!(k, gaussian_kernel(&b, &a, beta));
            prop_assert!((0.0..=1.0).contains(&k));
        }
    }
}
