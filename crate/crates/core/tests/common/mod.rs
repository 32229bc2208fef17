//! Independent reference implementations and random generators shared by
//! the integration suites. Nothing here calls into the production gain or
//! update paths it is used to check.

#![allow(dead_code)]

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

pub fn random_matrix(rows: usize, cols: usize, rng: &mut ChaCha8Rng) -> DMatrix<f64> {
    DMatrix::from_fn(rows, cols, |_, _| rng.sample::<f64, _>(StandardNormal))
}

pub fn random_vector(dim: usize, rng: &mut ChaCha8Rng) -> DVector<f64> {
    DVector::from_fn(dim, |_, _| rng.sample::<f64, _>(StandardNormal))
}

/// Symmetric positive definite matrix `A Aᵀ / dim + ridge I`.
pub fn random_spd(dim: usize, ridge: f64, rng: &mut ChaCha8Rng) -> DMatrix<f64> {
    let a = random_matrix(dim, dim, rng);
    &a * a.transpose() / dim as f64 + DMatrix::identity(dim, dim) * ridge
}

/// Uniform point on the probability simplex via normalized exponentials.
pub fn random_simplex(m: usize, rng: &mut ChaCha8Rng) -> Vec<f64> {
    let draws: Vec<f64> = (0..m)
        .map(|_| -(rng.random_range(1e-12..1.0f64)).ln())
        .collect();
    let total: f64 = draws.iter().sum();
    draws.into_iter().map(|d| d / total).collect()
}

/// Max-abs relative difference `max|a - b| / (1 + max|b|)`.
pub fn relative_gap(a: &DMatrix<f64>, b: &DMatrix<f64>) -> f64 {
    let scale = 1.0 + b.amax();
    let mut worst = 0.0f64;
    for (x, y) in a.iter().zip(b.iter()) {
        worst = worst.max((x - y).abs());
    }
    worst / scale
}

pub fn relative_gap_vec(a: &DVector<f64>, b: &DVector<f64>) -> f64 {
    let scale = 1.0 + b.amax();
    let mut worst = 0.0f64;
    for (x, y) in a.iter().zip(b.iter()) {
        worst = worst.max((x - y).abs());
    }
    worst / scale
}

/// Textbook linear Kalman/EKF reference in innovation form with explicit
/// matrix inversion. Deliberately written against covariance-form algebra,
/// independent of the production information-form gain path.
pub struct ReferenceEkf {
    pub f: DMatrix<f64>,
    pub q: DMatrix<f64>,
    pub h: DMatrix<f64>,
    pub r: DMatrix<f64>,
}

impl ReferenceEkf {
    pub fn predict(&self, mean: &DVector<f64>, cov: &DMatrix<f64>) -> (DVector<f64>, DMatrix<f64>) {
        let m = &self.f * mean;
        let c = &self.f * cov * self.f.transpose() + &self.q;
        (m, 0.5 * (&c + c.transpose()))
    }

    pub fn update(
        &self,
        mean: &DVector<f64>,
        cov: &DMatrix<f64>,
        y: &DVector<f64>,
    ) -> (DVector<f64>, DMatrix<f64>) {
        let s = &self.h * cov * self.h.transpose() + &self.r;
        let s_inv = s.try_inverse().expect("innovation covariance invertible");
        let k = cov * self.h.transpose() * s_inv;
        let mean = mean + &k * (y - &self.h * mean);
        let dx = cov.nrows();
        let cov = (DMatrix::identity(dx, dx) - &k * &self.h) * cov;
        (mean, 0.5 * (&cov + cov.transpose()))
    }

    pub fn step(
        &self,
        mean: &DVector<f64>,
        cov: &DMatrix<f64>,
        y: &DVector<f64>,
    ) -> (DVector<f64>, DMatrix<f64>) {
        let (m, c) = self.predict(mean, cov);
        self.update(&m, &c, y)
    }
}

/// Wraps constant matrices into the crate's closure-based model types.
pub fn linear_system_model(
    f: DMatrix<f64>,
    q: DMatrix<f64>,
    observations: Vec<(DMatrix<f64>, DMatrix<f64>)>,
) -> dsw_core::SystemModel {
    use dsw_core::model::{ObservationStream, SystemModel, TransitionModel};
    let dx = f.nrows();
    let f_apply = f.clone();
    let transition = TransitionModel::new(
        dx,
        Box::new(move |x: &DVector<f64>| &f_apply * x),
        Box::new(move |_| f.clone()),
        q,
    )
    .unwrap();
    let streams = observations
        .into_iter()
        .enumerate()
        .map(|(m, (h, r))| {
            let h_apply = h.clone();
            ObservationStream::new(
                h.nrows(),
                format!("s{m}"),
                Box::new(move |x: &DVector<f64>| &h_apply * x),
                Box::new(move |_| h.clone()),
                r,
            )
            .unwrap()
        })
        .collect();
    SystemModel::new(transition, streams).unwrap()
}

/// Scales a random square matrix to the given spectral norm so linear test
/// systems stay stable over long runs.
pub fn random_stable_matrix(dim: usize, spectral_norm: f64, rng: &mut ChaCha8Rng) -> DMatrix<f64> {
    let a = random_matrix(dim, dim, rng);
    let top = a.clone().svd(false, false).singular_values[0];
    a * (spectral_norm / top)
}

/// The M×M row-replicated weight matrix (every row is the weight vector).
pub fn weight_row_matrix(weights: &[f64]) -> DMatrix<f64> {
    let m = weights.len();
    DMatrix::from_fn(m, m, |_, j| weights[j])
}

/// Direct dense solve of the joint gain system: builds the full block
/// matrix `[δ_mn R_m + λ_n H_m Σ H_nᵀ]`, the stacked right-hand side
/// `[H_m Σ]`, LU-solves, and partitions back into per-stream gains.
pub fn dense_gain_solve(
    pred_cov: &DMatrix<f64>,
    jacobians: &[DMatrix<f64>],
    noises: &[DMatrix<f64>],
    weights: &[f64],
) -> Vec<DMatrix<f64>> {
    let (lhs, rhs) = gain_system(pred_cov, jacobians, noises, weights);
    let solution = lhs.lu().solve(&rhs).expect("gain system solvable");
    let mut gains = Vec::with_capacity(jacobians.len());
    let mut offset = 0;
    for h in jacobians {
        let dy = h.nrows();
        gains.push(solution.rows(offset, dy).transpose());
        offset += dy;
    }
    gains
}

/// The stacked gain system `(LHS, RHS)` of the joint update.
pub fn gain_system(
    pred_cov: &DMatrix<f64>,
    jacobians: &[DMatrix<f64>],
    noises: &[DMatrix<f64>],
    weights: &[f64],
) -> (DMatrix<f64>, DMatrix<f64>) {
    let dx = pred_cov.nrows();
    let dims: Vec<usize> = jacobians.iter().map(|h| h.nrows()).collect();
    let total: usize = dims.iter().sum();
    let mut lhs = DMatrix::zeros(total, total);
    let mut rhs = DMatrix::zeros(total, dx);
    let mut row = 0;
    for (m, h_m) in jacobians.iter().enumerate() {
        let mut col = 0;
        for (n, h_n) in jacobians.iter().enumerate() {
            let mut block = h_m * pred_cov * h_n.transpose() * weights[n];
            if m == n {
                block += &noises[m];
            }
            lhs.view_mut((row, col), (dims[m], dims[n]))
                .copy_from(&block);
            col += dims[n];
        }
        rhs.view_mut((row, 0), (dims[m], dx))
            .copy_from(&(h_m * pred_cov));
        row += dims[m];
    }
    (lhs, rhs)
}

/// Brute-force maximum of the Dirichlet-prior objective over the interior
/// 1e-3 simplex grid (two or three streams). Logarithms of the grid values
/// are tabulated once so the scan stays cheap.
pub fn grid_max_objective(logliks: &[f64], alpha: f64) -> f64 {
    const STEPS: usize = 1000;
    let shape = alpha - 1.0;
    let ln_table: Vec<f64> = (0..=STEPS)
        .map(|i| {
            if i == 0 {
                f64::NEG_INFINITY
            } else {
                (i as f64 / STEPS as f64).ln()
            }
        })
        .collect();
    let frac = |i: usize| i as f64 / STEPS as f64;
    match logliks {
        [l1, l2] => {
            let mut best = f64::NEG_INFINITY;
            for i in 1..STEPS {
                let j = STEPS - i;
                let value = frac(i) * l1 + frac(j) * l2 + shape * (ln_table[i] + ln_table[j]);
                best = best.max(value);
            }
            best
        }
        [l1, l2, l3] => {
            let mut best = f64::NEG_INFINITY;
            for i in 1..STEPS {
                let li = frac(i) * l1 + shape * ln_table[i];
                for j in 1..(STEPS - i) {
                    let k = STEPS - i - j;
                    let value =
                        li + frac(j) * l2 + frac(k) * l3 + shape * (ln_table[j] + ln_table[k]);
                    best = best.max(value);
                }
            }
            best
        }
        _ => panic!("grid oracle supports two or three streams"),
    }
}

/// Textbook EKF trajectory over a single observation stream of `model`,
/// written in covariance form with explicit inversion.
pub fn reference_ekf_trajectory(
    model: &dsw_core::SystemModel,
    stream: usize,
    init_mean: DVector<f64>,
    init_cov: DMatrix<f64>,
    observations: &[DVector<f64>],
) -> Vec<(DVector<f64>, DMatrix<f64>)> {
    let tm = model.transition();
    let s = model.stream(stream);
    let dx = tm.dim();
    let mut mean = init_mean;
    let mut cov = init_cov;
    let mut out = Vec::with_capacity(observations.len());
    for y in observations {
        let f = tm.jacobian_at(&mean);
        let pred_mean = tm.apply(&mean);
        let pred_cov = &f * &cov * f.transpose() + tm.process_noise();
        let pred_cov = 0.5 * (&pred_cov + pred_cov.transpose());

        let h = s.jacobian_at(&pred_mean);
        let innovation_cov = &h * &pred_cov * h.transpose() + s.noise();
        let k = &pred_cov
            * h.transpose()
            * innovation_cov
                .try_inverse()
                .expect("innovation covariance invertible");
        mean = &pred_mean + &k * (y - s.observe(&pred_mean));
        cov = (DMatrix::identity(dx, dx) - &k * &h) * &pred_cov;
        cov = 0.5 * (&cov + cov.transpose());
        out.push((mean.clone(), cov.clone()));
    }
    out
}

/// Max-abs residual of gains substituted into the stacked system, paired
/// with the right-hand side norm used for the tolerance scale.
pub fn gain_system_residual(
    pred_cov: &DMatrix<f64>,
    jacobians: &[DMatrix<f64>],
    noises: &[DMatrix<f64>],
    weights: &[f64],
    gains: &[DMatrix<f64>],
) -> (f64, f64) {
    let (lhs, rhs) = gain_system(pred_cov, jacobians, noises, weights);
    let dx = pred_cov.nrows();
    let total = rhs.nrows();
    let mut stacked = DMatrix::zeros(total, dx);
    let mut offset = 0;
    for k in gains {
        stacked
            .view_mut((offset, 0), (k.ncols(), dx))
            .copy_from(&k.transpose());
        offset += k.ncols();
    }
    let residual = &lhs * stacked - &rhs;
    (residual.amax(), rhs.norm())
}
