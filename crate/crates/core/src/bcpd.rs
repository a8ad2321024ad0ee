//! Bayesian Coherent Point Drift.
//!
//! The source cloud `y` is modelled as the centers of a Gaussian mixture
//! that is deformed by a smooth displacement field `v` (Gaussian-process
//! prior through the Gram matrix) and then moved by a similarity transform
//! `(s, R, t)`. Each iteration runs three variational updates in order:
//!
//! 1. posterior correspondences `P` and the derived `nu`, `nu'`, `x_hat`
//!    ([`e_step`]),
//! 2. displacement mean `v_hat` and covariance ([`update_displacement`]),
//! 3. the similarity transform and the residual variance `sigma2`
//!    ([`update_similarity`]).
//!
//! Once `sigma2` is small the data term cannot tell a scaled transform with
//! a compensating displacement from the plain one. [`rebalance_similarity`]
//! therefore moves the best-fit similarity of the displacement field into
//! `(s, R, t)` after each iteration, leaving `y_hat` unchanged.
//!
//! [`register`] drives the loop on normalized copies of both clouds.

use std::f64::consts::PI;

use nalgebra::{DMatrix, Matrix3};
use rayon::prelude::*;
use thiserror::Error;

use crate::cloud::{normalize, CloudError, NormalizationRecord, PointCloud};
use crate::kernel::{build_gram, solve_spd, GramMatrix, KernelError};
use crate::Point;

/// Lower bound applied to the residual variance.
pub const SIGMA2_FLOOR: f64 = 1e-8;

/// Below this matched mass a source point counts as unmatched.
pub const MIN_MATCHED_MASS: f64 = 1e-12;

#[derive(Error, Debug, Clone, PartialEq)]
pub enum RegistrationError {
    #[error("invalid registration parameter: {0}")]
    InvalidParams(String),

    #[error("posterior normalizer vanished for target point {target_index}")]
    NumericalUnderflow { target_index: usize },

    #[error("degenerate geometry: {0}")]
    DegenerateGeometry(String),

    #[error("displacement has {got} rows, cloud has {expected} vertices")]
    ShapeMismatch { expected: usize, got: usize },

    #[error(transparent)]
    Kernel(#[from] KernelError),

    #[error(transparent)]
    Cloud(#[from] CloudError),
}

/// `x -> s R x + t`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SimilarityTransform {
    pub scale: f64,
    pub rotation: Matrix3<f64>,
    pub translation: Point,
}

impl SimilarityTransform {
    pub fn identity() -> Self {
        Self {
            scale: 1.0,
            rotation: Matrix3::identity(),
            translation: Point::zeros(),
        }
    }

    pub fn apply(&self, p: &Point) -> Point {
        self.rotation * p * self.scale + self.translation
    }

    /// Orthonormality error `|R^T R - I|_F` and `det(R) - 1`.
    pub fn rotation_error(&self) -> (f64, f64) {
        let r = &self.rotation;
        (
            (r.transpose() * r - Matrix3::identity()).norm(),
            r.determinant() - 1.0,
        )
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RegistrationParams {
    /// Gaussian kernel bandwidth, normalized units.
    pub beta: f64,
    /// Deformation regularization weight.
    pub lambda: f64,
    /// Outlier probability.
    pub omega: f64,
    /// Scale of the initial residual variance.
    pub gamma: f64,
    /// Dirichlet concentration of the mixing weights; infinity keeps them uniform.
    pub kappa: f64,
    /// Convergence threshold on the relative change of `sigma2`.
    pub tol: f64,
    pub max_iters: usize,
    /// Include the displacement-covariance terms in the posterior and in the
    /// `sigma2` and scale updates.
    pub use_sigma_correction: bool,
    /// Run [`rebalance_similarity`] after every iteration.
    pub rebalance: bool,
}

impl Default for RegistrationParams {
    fn default() -> Self {
        Self {
            beta: 0.3,
            lambda: 50.0,
            omega: 0.05,
            gamma: 1.0,
            kappa: f64::INFINITY,
            tol: 1e-5,
            max_iters: 300,
            use_sigma_correction: false,
            rebalance: true,
        }
    }
}

impl RegistrationParams {
    pub fn validate(&self) -> Result<(), RegistrationError> {
        let bad = |msg: &str| Err(RegistrationError::InvalidParams(msg.to_string()));
        if !(self.beta > 0.0 && self.beta.is_finite()) {
            return bad("beta must be positive and finite");
        }
        if !(self.lambda > 0.0 && self.lambda.is_finite()) {
            return bad("lambda must be positive and finite");
        }
        if !(0.0..1.0).contains(&self.omega) {
            return bad("omega must lie in [0, 1)");
        }
        if !(self.gamma > 0.0 && self.gamma.is_finite()) {
            return bad("gamma must be positive and finite");
        }
        if !(self.kappa > 0.0) {
            return bad("kappa must be positive (or infinite)");
        }
        if self.tol.is_nan() || self.tol < 0.0 {
            return bad("tol must be non-negative");
        }
        if self.max_iters == 0 {
            return bad("max_iters must be at least 1");
        }
        Ok(())
    }
}

/// All iteration variables of one registration.
#[derive(Debug, Clone, PartialEq)]
pub struct RegistrationState {
    /// Displacement means, one per source point.
    pub v_hat: Vec<Point>,
    /// Posterior covariance of the displacements (M x M). Only tracked
    /// while `use_sigma_correction` is on, since nothing else reads it.
    pub covariance: Option<DMatrix<f64>>,
    /// Posterior correspondence probabilities, M x N.
    pub p: DMatrix<f64>,
    /// Matched mass per source point (row sums of `p`).
    pub nu: Vec<f64>,
    /// Matched mass per target point (column sums of `p`).
    pub nu_prime: Vec<f64>,
    /// Expected target position for each source point.
    pub x_hat: Vec<Point>,
    /// Mixing weights.
    pub alpha: Vec<f64>,
    pub sigma2: f64,
    pub transform: SimilarityTransform,
    /// Current deformed and transformed source.
    pub y_hat: Vec<Point>,
    /// Uniform outlier density: reciprocal of the target bounding-box volume.
    pub outlier_density: f64,
}

impl RegistrationState {
    fn sigma_diag(&self, m: usize) -> Option<f64> {
        self.covariance.as_ref().map(|c| c[(m, m)])
    }

    /// `sum_m nu_m Sigma_mm`, zero when the covariance is not tracked.
    fn weighted_covariance_trace(&self) -> f64 {
        match &self.covariance {
            Some(c) => self.nu.iter().enumerate().map(|(m, nu)| nu * c[(m, m)]).sum(),
            None => 0.0,
        }
    }
}

fn bounding_box_volume(points: &[Point]) -> f64 {
    let mut lo = points[0];
    let mut hi = points[0];
    for p in points {
        lo = lo.inf(p);
        hi = hi.sup(p);
    }
    // flat or collinear targets still get a finite outlier density
    (hi - lo).iter().map(|e| e.max(1e-3)).product()
}

pub fn init_state(
    source: &PointCloud,
    target: &PointCloud,
    params: &RegistrationParams,
) -> RegistrationState {
    let y = source.vertices();
    let x = target.vertices();
    let (m, n) = (y.len(), x.len());

    let mut total = 0.0;
    for xn in x {
        for ym in y {
            total += (xn - ym).norm_squared();
        }
    }
    let sigma2 = (params.gamma * total / (n * m * 3) as f64).max(SIGMA2_FLOOR);

    RegistrationState {
        v_hat: vec![Point::zeros(); m],
        covariance: params
            .use_sigma_correction
            .then(|| DMatrix::identity(m, m)),
        p: DMatrix::zeros(m, n),
        nu: vec![0.0; m],
        nu_prime: vec![0.0; n],
        x_hat: y.to_vec(),
        alpha: vec![1.0 / m as f64; m],
        sigma2,
        transform: SimilarityTransform::identity(),
        y_hat: y.to_vec(),
        outlier_density: 1.0 / bounding_box_volume(x),
    }
}

/// Posterior update. Densities are evaluated in the log domain, so the
/// normalizer only vanishes for non-finite inputs.
pub fn e_step(
    state: &mut RegistrationState,
    target: &PointCloud,
    params: &RegistrationParams,
) -> Result<(), RegistrationError> {
    let x = target.vertices();
    let m = state.y_hat.len();
    let sigma2 = state.sigma2;
    let s2 = state.transform.scale * state.transform.scale;

    let log_norm = -1.5 * (2.0 * PI * sigma2).ln();
    let log_inlier = (1.0 - params.omega).ln();
    let log_outlier = if params.omega > 0.0 {
        params.omega.ln() + state.outlier_density.ln()
    } else {
        f64::NEG_INFINITY
    };
    let prefix: Vec<f64> = (0..m)
        .map(|i| {
            let correction = if params.use_sigma_correction {
                state.sigma_diag(i).map_or(0.0, |sd| s2 * 3.0 * sd / (2.0 * sigma2))
            } else {
                0.0
            };
            log_inlier + state.alpha[i].ln() + log_norm - correction
        })
        .collect();

    let y_hat = &state.y_hat;
    let inv_two_sigma2 = 1.0 / (2.0 * sigma2);
    state
        .p
        .as_mut_slice()
        .par_chunks_mut(m)
        .enumerate()
        .try_for_each(|(n, column)| {
            let xn = &x[n];
            let mut max = log_outlier;
            for (i, slot) in column.iter_mut().enumerate() {
                let l = prefix[i] - (xn - y_hat[i]).norm_squared() * inv_two_sigma2;
                *slot = l;
                max = max.max(l);
            }
            if !max.is_finite() {
                return Err(RegistrationError::NumericalUnderflow { target_index: n });
            }
            let mut denom = (log_outlier - max).exp();
            for slot in column.iter_mut() {
                *slot = (*slot - max).exp();
                denom += *slot;
            }
            if !(denom > 0.0) || !denom.is_finite() {
                return Err(RegistrationError::NumericalUnderflow { target_index: n });
            }
            for slot in column.iter_mut() {
                *slot /= denom;
            }
            Ok(())
        })?;

    let mut nu = vec![0.0; m];
    let mut weighted = vec![Point::zeros(); m];
    for (n, column) in state.p.column_iter().enumerate() {
        let xn = x[n];
        let mut col_sum = 0.0;
        for (i, &p) in column.iter().enumerate() {
            nu[i] += p;
            weighted[i] += xn * p;
            col_sum += p;
        }
        state.nu_prime[n] = col_sum;
    }
    for i in 0..m {
        state.x_hat[i] = if nu[i] < MIN_MATCHED_MASS {
            state.y_hat[i]
        } else {
            weighted[i] / nu[i]
        };
    }
    let matched: f64 = nu.iter().sum();
    if params.kappa.is_finite() {
        let denom = params.kappa * m as f64 + matched;
        for (a, &v) in state.alpha.iter_mut().zip(&nu) {
            *a = (params.kappa + v) / denom;
        }
    }
    state.nu = nu;
    Ok(())
}

/// Displacement mean and covariance update.
///
/// With `c = s^2 / sigma2` and `D = diag(nu)` the posterior covariance is
/// `(lambda G^-1 + c D)^-1`. Both it and the mean are evaluated through the
/// symmetric positive-definite system `A = lambda I + c D^1/2 G D^1/2`,
/// which never forms `G^-1`.
pub fn update_displacement(
    state: &mut RegistrationState,
    source: &PointCloud,
    gram: &GramMatrix,
    params: &RegistrationParams,
) -> Result<(), RegistrationError> {
    let y = source.vertices();
    let m = y.len();
    if gram.dim() != m {
        return Err(RegistrationError::ShapeMismatch {
            expected: m,
            got: gram.dim(),
        });
    }
    let g = gram.values();
    let SimilarityTransform {
        scale: s,
        rotation: r,
        translation: t,
    } = state.transform;
    let c = s * s / state.sigma2;
    let sqrt_nu: Vec<f64> = state.nu.iter().map(|v| v.max(0.0).sqrt()).collect();

    let mut a = DMatrix::zeros(m, m);
    for j in 0..m {
        for i in j..m {
            let v = c * (sqrt_nu[i] * g[(i, j)] * sqrt_nu[j]);
            a[(i, j)] = v;
            a[(j, i)] = v;
        }
        a[(j, j)] += params.lambda;
    }

    let rt = r.transpose();
    let mut rhs = DMatrix::zeros(m, 3);
    for i in 0..m {
        let residual = rt * (state.x_hat[i] - t) / s - y[i];
        for k in 0..3 {
            rhs[(i, k)] = sqrt_nu[i] * residual[k];
        }
    }
    let mut w = solve_spd(&a, &rhs)?;
    for i in 0..m {
        for k in 0..3 {
            w[(i, k)] *= sqrt_nu[i];
        }
    }
    let v = g * w * c;
    for i in 0..m {
        state.v_hat[i] = Point::new(v[(i, 0)], v[(i, 1)], v[(i, 2)]);
        state.y_hat[i] = r * (y[i] + state.v_hat[i]) * s + t;
    }

    if params.use_sigma_correction {
        // Sigma = (G - c B^T A^-1 B) / lambda with B = D^1/2 G
        let mut b = g.clone();
        for i in 0..m {
            b.row_mut(i).scale_mut(sqrt_nu[i]);
        }
        let z = solve_spd(&a, &b)?;
        let mut sigma = (g - b.transpose() * z * c) / params.lambda;
        let sym = (&sigma + sigma.transpose()) * 0.5;
        sigma.copy_from(&sym);
        state.covariance = Some(sigma);
    }
    Ok(())
}

/// Weighted Procrustes update of `(s, R, t)` followed by `sigma2`.
pub fn update_similarity(
    state: &mut RegistrationState,
    source: &PointCloud,
    target: &PointCloud,
    params: &RegistrationParams,
) -> Result<(), RegistrationError> {
    let y = source.vertices();
    let x = target.vertices();
    let m = y.len();
    let matched: f64 = state.nu.iter().sum();
    if !(matched >= 1e-9) {
        return Err(RegistrationError::DegenerateGeometry(format!(
            "matched mass {matched:e} is too small"
        )));
    }

    let u: Vec<Point> = y.iter().zip(&state.v_hat).map(|(y, v)| y + v).collect();
    let mut u_bar = Point::zeros();
    let mut x_bar = Point::zeros();
    for i in 0..m {
        u_bar += u[i] * state.nu[i];
        x_bar += state.x_hat[i] * state.nu[i];
    }
    u_bar /= matched;
    x_bar /= matched;

    let mut cross = Matrix3::zeros();
    let mut spread = 0.0;
    for i in 0..m {
        let du = u[i] - u_bar;
        let dx = state.x_hat[i] - x_bar;
        cross += dx * du.transpose() * state.nu[i];
        spread += state.nu[i] * du.norm_squared();
    }
    cross /= matched;
    spread /= matched;
    if params.use_sigma_correction {
        spread += 3.0 * state.weighted_covariance_trace() / matched;
    }
    if !(spread > 0.0) {
        return Err(RegistrationError::DegenerateGeometry(
            "source points have no spread".into(),
        ));
    }

    let svd = cross.svd(true, true);
    let (uu, wt) = (svd.u.unwrap(), svd.v_t.unwrap());
    let mut flip = Matrix3::identity();
    flip[(2, 2)] = (uu * wt).determinant().signum();
    let rotation = uu * flip * wt;
    let scale = (rotation.transpose() * cross).trace() / spread;
    if !(scale > 0.0 && scale.is_finite()) {
        return Err(RegistrationError::DegenerateGeometry(format!(
            "estimated scale {scale:e} is not positive"
        )));
    }
    let translation = x_bar - rotation * u_bar * scale;
    state.transform = SimilarityTransform {
        scale,
        rotation,
        translation,
    };
    for i in 0..m {
        state.y_hat[i] = state.transform.apply(&u[i]);
    }

    let mut residual = 0.0;
    for (n, column) in state.p.column_iter().enumerate() {
        let xn = x[n];
        for (i, &p) in column.iter().enumerate() {
            residual += p * (xn - state.y_hat[i]).norm_squared();
        }
    }
    let mut sigma2 = residual / (3.0 * matched);
    if params.use_sigma_correction {
        sigma2 += scale * scale * state.weighted_covariance_trace() / matched;
    }
    state.sigma2 = sigma2.max(SIGMA2_FLOOR);
    Ok(())
}

/// Fits the similarity `Q` that best maps the source `y` onto `y + v_hat`
/// (uniform weights), then replaces the transform with `T . Q` and the
/// displacements with the remainder `Q^-1(y + v_hat) - y`. The composite
/// `T(y + v_hat)`, and therefore `y_hat`, is preserved.
pub fn rebalance_similarity(state: &mut RegistrationState, source: &PointCloud) {
    let y = source.vertices();
    let m = y.len() as f64;
    let u: Vec<Point> = y.iter().zip(&state.v_hat).map(|(y, v)| y + v).collect();
    let y_bar = y.iter().sum::<Point>() / m;
    let u_bar = u.iter().sum::<Point>() / m;
    let mut cross = Matrix3::zeros();
    let mut spread = 0.0;
    for (yi, ui) in y.iter().zip(&u) {
        let dy = yi - y_bar;
        cross += (ui - u_bar) * dy.transpose();
        spread += dy.norm_squared();
    }
    if !(spread > 0.0) {
        return;
    }
    let svd = cross.svd(true, true);
    let (uu, wt) = (svd.u.unwrap(), svd.v_t.unwrap());
    let mut flip = Matrix3::identity();
    flip[(2, 2)] = (uu * wt).determinant().signum();
    let rotation = uu * flip * wt;
    let scale = (rotation.transpose() * cross).trace() / spread;
    if !(scale > 0.0 && scale.is_finite()) {
        return;
    }
    let translation = u_bar - rotation * y_bar * scale;
    let rt = rotation.transpose();
    for (v, (yi, ui)) in state.v_hat.iter_mut().zip(y.iter().zip(&u)) {
        *v = rt * (ui - translation) / scale - yi;
    }
    if let Some(cov) = state.covariance.as_mut() {
        *cov /= scale * scale;
    }
    let outer = state.transform;
    state.transform = SimilarityTransform {
        scale: outer.scale * scale,
        rotation: outer.rotation * rotation,
        translation: outer.rotation * translation * outer.scale + outer.translation,
    };
}

/// Applies `v -> s R (v + d) + t` per vertex; colors are copied untouched.
pub fn apply_transform(
    source: &PointCloud,
    transform: &SimilarityTransform,
    displacement: &[Point],
) -> Result<PointCloud, RegistrationError> {
    if displacement.len() != source.len() {
        return Err(RegistrationError::ShapeMismatch {
            expected: source.len(),
            got: displacement.len(),
        });
    }
    let vertices = source
        .vertices()
        .iter()
        .zip(displacement)
        .map(|(y, v)| transform.apply(&(y + v)))
        .collect();
    Ok(source.with_vertices(vertices)?)
}

/// Result of [`register`]. Transform, displacements and state live in
/// normalized coordinates: the source frame is `source_normalization` and
/// the aligned output lands in the `target_normalization` frame.
#[derive(Debug, Clone)]
pub struct RegistrationOutcome {
    pub transform: SimilarityTransform,
    pub displacement: Vec<Point>,
    pub state: RegistrationState,
    pub source: PointCloud,
    pub target: PointCloud,
    pub source_normalization: NormalizationRecord,
    pub target_normalization: NormalizationRecord,
    pub iterations: usize,
    pub converged: bool,
    /// `sigma2` after initialization and after every iteration.
    pub sigma2_history: Vec<f64>,
}

impl RegistrationOutcome {
    /// Aligned source in normalized target coordinates.
    pub fn aligned_source(&self) -> PointCloud {
        apply_transform(&self.source, &self.transform, &self.displacement)
            .expect("displacement matches source by construction")
    }

    /// Aligned source mapped back into the target's original units.
    pub fn aligned_source_original_units(&self) -> PointCloud {
        self.target_normalization.denormalize(&self.aligned_source())
    }
}

/// Registers `source` onto `target`. Both clouds are normalized first.
/// Hitting `max_iters` is reported through `converged = false`, not as an
/// error.
pub fn register(
    source: &PointCloud,
    target: &PointCloud,
    params: &RegistrationParams,
) -> Result<RegistrationOutcome, RegistrationError> {
    params.validate()?;
    let (source_n, source_rec) = normalize(source)?;
    let (target_n, target_rec) = normalize(target)?;
    let gram = build_gram(source_n.vertices(), params.beta);
    let mut state = init_state(&source_n, &target_n, params);
    let mut history = vec![state.sigma2];
    let mut converged = false;
    let mut iterations = 0;

    while iterations < params.max_iters {
        let previous = state.sigma2;
        e_step(&mut state, &target_n, params)?;
        update_displacement(&mut state, &source_n, &gram, params)?;
        update_similarity(&mut state, &source_n, &target_n, params)?;
        if params.rebalance {
            rebalance_similarity(&mut state, &source_n);
        }
        iterations += 1;
        history.push(state.sigma2);
        let change = (state.sigma2 - previous).abs() / previous;
        log::trace!("iteration {iterations}: sigma2={:e} change={change:e}", state.sigma2);
        if change < params.tol {
            converged = true;
            break;
        }
    }
    log::debug!(
        "registration {} -> {}: {iterations} iterations, converged={converged}, sigma2={:e}",
        source.id(),
        target.id(),
        state.sigma2
    );

    Ok(RegistrationOutcome {
        transform: state.transform,
        displacement: state.v_hat.clone(),
        state,
        source: source_n,
        target: target_n,
        source_normalization: source_rec,
        target_normalization: target_rec,
        iterations,
        converged,
        sigma2_history: history,
    })
}
