//! Oracle stream-weight estimation for fully observed systems.
//!
//! Given ground-truth states, per-step weights are chosen to maximize the
//! weighted observation log-likelihood under a prior on the weights: a
//! symmetric Dirichlet prior for any number of streams, or the two-stream
//! Gaussian-prior closed form.

use nalgebra::DVector;

use crate::error::{Error, Result};
use crate::filter::{ObservationFrame, StreamWeights};
use crate::model::{ObservationStream, SystemModel};

/// Symmetric Dirichlet prior over stream weights. Concentrations above one
/// make the per-step objective strictly concave, so the maximizer is unique
/// and interior.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct DirichletPrior {
    alpha: f64,
}

/// Default Dirichlet concentration.
pub const DEFAULT_ALPHA: f64 = 1.1;

impl DirichletPrior {
    pub fn new(alpha: f64) -> Result<Self> {
        if !(alpha > 1.0 && alpha.is_finite()) {
            return Err(Error::Validation(format!(
                "Dirichlet concentration must exceed 1, got {alpha}"
            )));
        }
        Ok(Self { alpha })
    }

    pub fn alpha(&self) -> f64 {
        self.alpha
    }
}

impl Default for DirichletPrior {
    fn default() -> Self {
        Self {
            alpha: DEFAULT_ALPHA,
        }
    }
}

/// Gaussian prior for the two-stream closed form.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct GaussianPriorParams {
    pub mu: f64,
    pub sigma2: f64,
}

impl GaussianPriorParams {
    pub fn new(mu: f64, sigma2: f64) -> Result<Self> {
        if !(0.0..=1.0).contains(&mu) || !mu.is_finite() {
            return Err(Error::Validation(format!(
                "prior mean must lie in [0, 1], got {mu}"
            )));
        }
        if !(sigma2 > 0.0 && sigma2.is_finite()) {
            return Err(Error::Validation(format!(
                "prior variance must be positive, got {sigma2}"
            )));
        }
        Ok(Self { mu, sigma2 })
    }
}

impl Default for GaussianPriorParams {
    fn default() -> Self {
        Self {
            mu: 0.5,
            sigma2: 0.1,
        }
    }
}

/// Which prior an oracle weight estimate uses.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum OdswPrior {
    Dirichlet(DirichletPrior),
    /// Two streams only.
    Gaussian(GaussianPriorParams),
}

/// Per-stream observation log-likelihoods at one time step.
#[derive(Clone, Debug, PartialEq)]
pub struct LogLikVector(Vec<f64>);

impl LogLikVector {
    pub fn new(loglik: Vec<f64>) -> Result<Self> {
        if loglik.is_empty() {
            return Err(Error::Validation("log-likelihood vector is empty".into()));
        }
        if loglik.iter().any(|l| !l.is_finite()) {
            return Err(Error::InvalidInput(
                "log-likelihood vector has non-finite entries".into(),
            ));
        }
        Ok(Self(loglik))
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }
}

/// Log-density of observation `y` under stream `s` at the true state `x`:
/// `log N(y | h(x), R)`.
pub fn stream_loglik(y: &DVector<f64>, x: &DVector<f64>, s: &ObservationStream) -> Result<f64> {
    if y.len() != s.dim() {
        return Err(Error::Validation(format!(
            "stream {}: observation has dimension {}, expected {}",
            s.label(),
            y.len(),
            s.dim()
        )));
    }
    let residual = y - s.observe(x);
    let maha = (residual.transpose() * s.noise_inv() * &residual)[(0, 0)];
    let d = s.dim() as f64;
    Ok(-0.5 * (d * (2.0 * std::f64::consts::PI).ln() + s.log_det_noise() + maha))
}

/// Weighted log-likelihood plus Dirichlet log-prior (additive constant
/// dropped): `sum_m w_m l_m + (alpha - 1) sum_m ln w_m`.
pub fn dirichlet_objective(
    w: &StreamWeights,
    l: &LogLikVector,
    prior: &DirichletPrior,
) -> Result<f64> {
    if w.len() != l.len() {
        return Err(Error::Validation(format!(
            "{} weights for {} log-likelihoods",
            w.len(),
            l.len()
        )));
    }
    let mut value = 0.0;
    for (&wm, &lm) in w.as_slice().iter().zip(l.as_slice()) {
        if wm <= 0.0 {
            return Err(Error::InvalidInput(
                "objective is undefined at boundary weights (log 0)".into(),
            ));
        }
        value += wm * lm + (prior.alpha() - 1.0) * wm.ln();
    }
    Ok(value)
}

const BISECT_TOL: f64 = 1e-12;
const BISECT_MAX_ITER: usize = 200;

/// Maximizes the Dirichlet-prior objective over the open simplex.
///
/// The stationarity conditions `l_m + (alpha - 1) / w_m = nu` give
/// `w_m(nu) = (alpha - 1) / (nu - l_m)`; the simplex constraint reduces to
/// the scalar root `g(nu) = sum_m w_m(nu) - 1 = 0`, with `g` strictly
/// decreasing for `nu > max_m l_m`, solved by bisection.
pub fn odsw_dirichlet(l: &LogLikVector, prior: &DirichletPrior) -> Result<StreamWeights> {
    let logliks = l.as_slice();
    let m = logliks.len();
    if m == 1 {
        // The simplex is a single point.
        return Ok(StreamWeights::from_normalized(vec![1.0]));
    }
    let shape = prior.alpha() - 1.0;
    let max_l = logliks.iter().cloned().fold(f64::NEG_INFINITY, f64::max);

    let weight_sum = |nu: f64| -> f64 { logliks.iter().map(|&lm| shape / (nu - lm)).sum() };

    // Bracket the root: g -> +inf as nu -> max_l from above, and at
    // nu = max_l + M (alpha - 1) each term is at most 1/M so g <= 0.
    let scale = 1.0 + max_l.abs();
    let mut eps = 1e-12 * scale;
    let mut lo = max_l + eps;
    while weight_sum(lo) - 1.0 <= 0.0 && eps > f64::MIN_POSITIVE {
        eps /= 16.0;
        lo = max_l + eps;
    }
    let mut hi = max_l + (m as f64) * shape;
    let mut expand = 0;
    while weight_sum(hi) - 1.0 > 0.0 {
        hi = max_l + (hi - max_l) * 2.0;
        expand += 1;
        if expand > 64 {
            return Err(Error::Numerical(
                "failed to bracket the weight multiplier".into(),
            ));
        }
    }

    let mut nu = 0.5 * (lo + hi);
    let mut residual = f64::INFINITY;
    for _ in 0..BISECT_MAX_ITER {
        nu = 0.5 * (lo + hi);
        residual = weight_sum(nu) - 1.0;
        if residual.abs() <= BISECT_TOL {
            break;
        }
        if residual > 0.0 {
            lo = nu;
        } else {
            hi = nu;
        }
        if (hi - lo) <= f64::EPSILON * nu.abs().max(1.0) {
            residual = weight_sum(0.5 * (lo + hi)) - 1.0;
            nu = 0.5 * (lo + hi);
            break;
        }
    }
    if residual.abs() > 1e-9 {
        return Err(Error::Numerical(format!(
            "weight solver did not converge (constraint residual {residual:.3e})"
        )));
    }

    let mut weights: Vec<f64> = logliks.iter().map(|&lm| shape / (nu - lm)).collect();
    let total: f64 = weights.iter().sum();
    for w in &mut weights {
        *w /= total;
    }
    Ok(StreamWeights::from_normalized(weights))
}

/// Two-stream closed form under a Gaussian prior:
/// `w_1 = clamp(mu + sigma2 * (l_1 - l_2), 0, 1)`.
pub fn odsw_gaussian_two_stream(loglik1: f64, loglik2: f64, p: &GaussianPriorParams) -> f64 {
    (p.mu + p.sigma2 * (loglik1 - loglik2)).clamp(0.0, 1.0)
}

fn prior_only_weights(m: usize, prior: &OdswPrior) -> StreamWeights {
    // No stream observed: fall back to the prior maximizer.
    match prior {
        OdswPrior::Dirichlet(_) => StreamWeights::uniform(m),
        OdswPrior::Gaussian(p) => {
            let w1 = p.mu.clamp(0.0, 1.0);
            StreamWeights::from_normalized(vec![w1, 1.0 - w1])
        }
    }
}

/// Per-step oracle weights for an aligned (states, frames) sequence.
///
/// Weights factorize over time, so each step is solved independently.
/// Streams missing at a step receive weight zero and the remaining
/// sub-simplex is solved; steps with no observation at all fall back to the
/// prior maximizer.
pub fn odsw_sequence(
    states: &[DVector<f64>],
    frames: &[ObservationFrame],
    model: &SystemModel,
    prior: &OdswPrior,
) -> Result<Vec<StreamWeights>> {
    if states.len() != frames.len() {
        return Err(Error::Validation(format!(
            "{} states for {} frames",
            states.len(),
            frames.len()
        )));
    }
    let m = model.num_streams();
    if matches!(prior, OdswPrior::Gaussian(_)) && m != 2 {
        return Err(Error::Unsupported(
            "the Gaussian prior applies to exactly two streams".into(),
        ));
    }

    let mut out = Vec::with_capacity(frames.len());
    for (idx, (x, frame)) in states.iter().zip(frames).enumerate() {
        let k = idx + 1;
        if frame.observations.len() != m {
            return Err(Error::Validation(format!(
                "frame has {} observation slots for {m} streams",
                frame.observations.len()
            ))
            .at_step(k));
        }
        let weights = odsw_step(x, frame, model, prior).map_err(|e| e.at_step(k))?;
        out.push(weights);
    }
    Ok(out)
}

fn odsw_step(
    x: &DVector<f64>,
    frame: &ObservationFrame,
    model: &SystemModel,
    prior: &OdswPrior,
) -> Result<StreamWeights> {
    let m = model.num_streams();
    let present: Vec<usize> = (0..m)
        .filter(|&i| frame.observations[i].is_some())
        .collect();
    if present.is_empty() {
        return Ok(prior_only_weights(m, prior));
    }

    match prior {
        OdswPrior::Dirichlet(p) => {
            let logliks: Vec<f64> = present
                .iter()
                .map(|&i| {
                    stream_loglik(frame.observations[i].as_ref().unwrap(), x, model.stream(i))
                })
                .collect::<Result<_>>()?;
            let solved = odsw_dirichlet(&LogLikVector::new(logliks)?, p)?;
            let mut full = vec![0.0; m];
            for (slot, &i) in present.iter().enumerate() {
                full[i] = solved.as_slice()[slot];
            }
            Ok(StreamWeights::from_normalized(full))
        }
        OdswPrior::Gaussian(p) => {
            let w1 = match (
                frame.observations[0].as_ref(),
                frame.observations[1].as_ref(),
            ) {
                (Some(y1), Some(y2)) => {
                    let l1 = stream_loglik(y1, x, model.stream(0))?;
                    let l2 = stream_loglik(y2, x, model.stream(1))?;
                    odsw_gaussian_two_stream(l1, l2, p)
                }
                (Some(_), None) => 1.0,
                (None, Some(_)) => 0.0,
                (None, None) => unreachable!("handled by the prior-only branch"),
            };
            Ok(StreamWeights::from_normalized(vec![w1, 1.0 - w1]))
        }
    }
}
