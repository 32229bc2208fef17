//! Recursive Gaussian filter with per-stream Kalman gains and dynamic
//! stream weights. For a single stream with unit weight it reduces exactly
//! to the extended Kalman filter.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::learn::TrainedPredictor;
use crate::linalg;
use crate::model::{SystemModel, TransitionModel};

/// Tolerance on the stream-weight sum constraint.
pub const WEIGHT_SUM_TOL: f64 = 1e-12;

/// Gaussian state belief: mean and (symmetric) covariance.
#[derive(Clone, Debug, PartialEq)]
pub struct GaussianBelief {
    mean: DVector<f64>,
    cov: DMatrix<f64>,
}

impl GaussianBelief {
    /// Builds a belief, symmetrizing the covariance on ingest.
    pub fn new(mean: DVector<f64>, cov: DMatrix<f64>) -> Result<Self> {
        let dim = mean.len();
        if cov.nrows() != dim || cov.ncols() != dim {
            return Err(Error::Validation(format!(
                "covariance is {}x{}, expected {dim}x{dim}",
                cov.nrows(),
                cov.ncols()
            )));
        }
        if !linalg::vector_is_finite(&mean) || !linalg::matrix_is_finite(&cov) {
            return Err(Error::InvalidInput("belief has non-finite entries".into()));
        }
        Ok(Self {
            mean,
            cov: linalg::symmetrize(&cov),
        })
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    pub fn mean(&self) -> &DVector<f64> {
        &self.mean
    }

    pub fn cov(&self) -> &DMatrix<f64> {
        &self.cov
    }
}

/// A point on the (M-1)-simplex: one weight per observation stream.
#[derive(Clone, Debug, PartialEq)]
pub struct StreamWeights(Vec<f64>);

impl StreamWeights {
    /// Validates `0 <= w_m <= 1` and `sum w_m = 1` within [`WEIGHT_SUM_TOL`].
    pub fn new(weights: Vec<f64>) -> Result<Self> {
        if weights.is_empty() {
            return Err(Error::Validation("weights must be non-empty".into()));
        }
        for (m, &w) in weights.iter().enumerate() {
            if !w.is_finite() || !(0.0..=1.0).contains(&w) {
                return Err(Error::Validation(format!(
                    "weight {m} = {w} lies outside [0, 1]"
                )));
            }
        }
        let sum: f64 = weights.iter().sum();
        if (sum - 1.0).abs() > WEIGHT_SUM_TOL {
            return Err(Error::Validation(format!(
                "weights sum to {sum}, expected 1 within {WEIGHT_SUM_TOL:e}"
            )));
        }
        Ok(Self(weights))
    }

    /// Uniform weights `1/M`.
    pub fn uniform(m: usize) -> Self {
        assert!(m > 0, "need at least one stream");
        Self(vec![1.0 / m as f64; m])
    }

    /// Two-stream weights `[w, 1 - w]`.
    pub fn two_stream(first: f64) -> Result<Self> {
        if !first.is_finite() || !(0.0..=1.0).contains(&first) {
            return Err(Error::Validation(format!(
                "weight {first} lies outside [0, 1]"
            )));
        }
        Ok(Self(vec![first, 1.0 - first]))
    }

    pub(crate) fn from_normalized(weights: Vec<f64>) -> Self {
        Self(weights)
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

    /// Zeroes weights of absent streams and renormalizes the rest to sum
    /// to one. Returns `None` when the present streams carry zero total
    /// weight (the update is then a no-op by construction).
    pub fn restrict_to_present(&self, present: &[bool]) -> Option<StreamWeights> {
        assert_eq!(present.len(), self.len());
        let total: f64 = self
            .0
            .iter()
            .zip(present)
            .filter(|(_, &p)| p)
            .map(|(w, _)| *w)
            .sum();
        if total <= 0.0 {
            return None;
        }
        let scaled = self
            .0
            .iter()
            .zip(present)
            .map(|(w, &p)| if p { w / total } else { 0.0 })
            .collect();
        Some(StreamWeights(scaled))
    }
}

/// Per-stream Kalman gains for one update step.
#[derive(Clone, Debug)]
pub struct GainSet {
    pub gains: Vec<DMatrix<f64>>,
}

/// Observations for one time step: per-stream measurement (absent streams
/// are `None`) plus instantaneous reliability features.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ObservationFrame {
    pub observations: Vec<Option<DVector<f64>>>,
    pub features: Vec<f64>,
}

impl ObservationFrame {
    pub fn new(observations: Vec<Option<DVector<f64>>>, features: Vec<f64>) -> Self {
        Self {
            observations,
            features,
        }
    }

    pub fn present_mask(&self) -> Vec<bool> {
        self.observations.iter().map(|o| o.is_some()).collect()
    }

    pub fn all_absent(&self) -> bool {
        self.observations.iter().all(|o| o.is_none())
    }
}

/// Propagates a belief through the transition model:
/// mean `f(x)`, covariance `F Sigma Fᵀ + Q`, symmetrized.
pub fn predict(belief: &GaussianBelief, tm: &TransitionModel) -> Result<GaussianBelief> {
    if belief.dim() != tm.dim() {
        return Err(Error::Validation(format!(
            "belief dimension {} does not match model dimension {}",
            belief.dim(),
            tm.dim()
        )));
    }
    let mean = tm.apply(belief.mean());
    let f = tm.jacobian_at(belief.mean());
    let cov = linalg::symmetrize(&(&f * belief.cov() * f.transpose() + tm.process_noise()));
    if !linalg::vector_is_finite(&mean) {
        return Err(Error::Numerical(
            "prediction produced a non-finite mean".into(),
        ));
    }
    if !linalg::matrix_is_finite(&cov) {
        return Err(Error::Numerical(
            "prediction produced a non-finite covariance".into(),
        ));
    }
    Ok(GaussianBelief { mean, cov })
}

/// Solves the weighted joint gain system for all streams at once.
///
/// The stacked closed form is
/// `K = (R⁻¹ − R⁻¹ U Γ Uᵀ R⁻¹) B Σ` with `Γ = W (I + Uᵀ R⁻¹ U W)⁻¹`,
/// `W = L ⊗ Σ`, `U = blkdiag(H_m)`, `B = [H_1; …; H_M]`, and `L` the M×M
/// matrix whose every row is the weight vector. Two structural collapses
/// make this cheap without changing the value:
///
/// 1. `L = 1·λᵀ` has rank one, so `W = (1 ⊗ Σ)(λᵀ ⊗ I)` and the
///    push-through identity reduces the M·Dx-dimensional inverse to
///    `K_m = (I + Σ S)⁻¹ Σ H_mᵀ R_m⁻¹` with
///    `S = Σ_m λ_m H_mᵀ R_m⁻¹ H_m` (Σ, S symmetric).
/// 2. `S = Pᵀ M_w P` with `P = [H_1; …; H_M]` and
///    `M_w = blkdiag(λ_m R_m⁻¹)` has rank at most the total observation
///    dimension, so the same identity applies once more:
///    `(I + Σ Pᵀ M_w P)⁻¹ = I − Σ Pᵀ M_w (I + C M_w)⁻¹ P` with
///    `C = P Σ Pᵀ`. Stacking the gains column-wise gives
///    `K = Σ Pᵀ (R⁻¹_blk − M_w (I + C M_w)⁻¹ C R⁻¹_blk)`,
///    which only ever inverts an observation-sized matrix.
///
/// `noise_inv` carries the precomputed inverses `R_m⁻¹`.
pub fn compute_gains(
    pred_cov: &DMatrix<f64>,
    jacobians: &[DMatrix<f64>],
    noise_inv: &[&DMatrix<f64>],
    weights: &StreamWeights,
) -> Result<GainSet> {
    let num_streams = weights.len();
    if jacobians.len() != num_streams || noise_inv.len() != num_streams {
        return Err(Error::Validation(format!(
            "expected {num_streams} jacobians and noise inverses, got {} and {}",
            jacobians.len(),
            noise_inv.len()
        )));
    }
    let dx = pred_cov.nrows();
    if pred_cov.ncols() != dx {
        return Err(Error::Validation(
            "predicted covariance must be square".into(),
        ));
    }

    let mut obs_dims = Vec::with_capacity(num_streams);
    for (m, h) in jacobians.iter().enumerate() {
        let r_inv = noise_inv[m];
        if h.ncols() != dx || r_inv.nrows() != h.nrows() || r_inv.ncols() != h.nrows() {
            return Err(Error::Validation(format!(
                "stream {m}: Jacobian is {}x{} with noise inverse {}x{} (state dim {dx})",
                h.nrows(),
                h.ncols(),
                r_inv.nrows(),
                r_inv.ncols()
            )));
        }
        obs_dims.push(h.nrows());
    }
    let total_dy: usize = obs_dims.iter().sum();

    // P Σ and its transpose Σ Pᵀ (Σ symmetric).
    let mut p_sigma = DMatrix::<f64>::zeros(total_dy, dx);
    let mut offset = 0;
    for (m, h) in jacobians.iter().enumerate() {
        p_sigma
            .view_mut((offset, 0), (obs_dims[m], dx))
            .copy_from(&(h * pred_cov));
        offset += obs_dims[m];
    }
    let sigma_pt = p_sigma.transpose();

    // C = P Σ Pᵀ, assembled block-column-wise.
    let mut c = DMatrix::<f64>::zeros(total_dy, total_dy);
    let mut offset = 0;
    for (m, h) in jacobians.iter().enumerate() {
        c.view_mut((0, offset), (total_dy, obs_dims[m]))
            .copy_from(&(&p_sigma * h.transpose()));
        offset += obs_dims[m];
    }

    // Block-diagonal R⁻¹ and its weighted counterpart M_w.
    let mut r_inv_blk = DMatrix::<f64>::zeros(total_dy, total_dy);
    let mut weighted = DMatrix::<f64>::zeros(total_dy, total_dy);
    let mut offset = 0;
    for m in 0..num_streams {
        let dy = obs_dims[m];
        r_inv_blk
            .view_mut((offset, offset), (dy, dy))
            .copy_from(noise_inv[m]);
        weighted
            .view_mut((offset, offset), (dy, dy))
            .copy_from(&(noise_inv[m] * weights.as_slice()[m]));
        offset += dy;
    }

    let system = DMatrix::identity(total_dy, total_dy) + &c * &weighted;
    let core = system
        .lu()
        .solve(&(&c * &r_inv_blk))
        .ok_or_else(|| Error::Numerical("singular gain system (I + Uᵀ R⁻¹ U W)".into()))?;
    let stacked = sigma_pt * (r_inv_blk - weighted * core);

    let mut gains = Vec::with_capacity(num_streams);
    let mut offset = 0;
    for (m, &dy) in obs_dims.iter().enumerate() {
        let gain = stacked.columns(offset, dy).into_owned();
        offset += dy;
        if !linalg::matrix_is_finite(&gain) {
            return Err(Error::Numerical(format!(
                "gain for stream {m} is non-finite"
            )));
        }
        gains.push(gain);
    }
    Ok(GainSet { gains })
}

/// Incorporates one observation frame into a predicted belief.
///
/// Absent streams get weight zero with the remaining weights renormalized;
/// when every stream is absent (or the present streams carry zero weight,
/// which makes the update an exact no-op) the prediction is returned
/// unchanged.
pub fn update(
    pred: &GaussianBelief,
    frame: &ObservationFrame,
    weights: &StreamWeights,
    model: &SystemModel,
) -> Result<GaussianBelief> {
    let num_streams = model.num_streams();
    if weights.len() != num_streams {
        return Err(Error::Validation(format!(
            "{} weights for {num_streams} streams",
            weights.len()
        )));
    }
    if frame.observations.len() != num_streams {
        return Err(Error::Validation(format!(
            "frame has {} observation slots for {num_streams} streams",
            frame.observations.len()
        )));
    }
    if pred.dim() != model.state_dim() {
        return Err(Error::Validation(format!(
            "belief dimension {} does not match model dimension {}",
            pred.dim(),
            model.state_dim()
        )));
    }

    let present = frame.present_mask();
    let effective = match weights.restrict_to_present(&present) {
        Some(w) => w,
        None => return Ok(pred.clone()),
    };

    let dx = model.state_dim();
    let jacobians: Vec<DMatrix<f64>> = model
        .streams()
        .iter()
        .map(|s| s.jacobian_at(pred.mean()))
        .collect();
    let noise_inv: Vec<&DMatrix<f64>> = model.streams().iter().map(|s| s.noise_inv()).collect();
    let gain_set = compute_gains(pred.cov(), &jacobians, &noise_inv, &effective)?;

    let mut mean = pred.mean().clone();
    let mut gain_jacobian_sum = DMatrix::<f64>::zeros(dx, dx);
    for (m, obs) in frame.observations.iter().enumerate() {
        let lambda = effective.as_slice()[m];
        let Some(y) = obs else { continue };
        let stream = model.stream(m);
        if y.len() != stream.dim() {
            return Err(Error::Validation(format!(
                "stream {}: observation has dimension {}, expected {}",
                stream.label(),
                y.len(),
                stream.dim()
            )));
        }
        if lambda == 0.0 {
            continue;
        }
        let innovation = y - stream.observe(pred.mean());
        mean += &gain_set.gains[m] * innovation * lambda;
        gain_jacobian_sum += &gain_set.gains[m] * &jacobians[m] * lambda;
    }

    let cov = linalg::symmetrize(&((DMatrix::identity(dx, dx) - gain_jacobian_sum) * pred.cov()));

    if !linalg::vector_is_finite(&mean) {
        return Err(Error::Numerical(
            "update produced a non-finite posterior mean".into(),
        ));
    }
    if !linalg::matrix_is_finite(&cov) {
        return Err(Error::Numerical(
            "update produced a non-finite posterior covariance".into(),
        ));
    }
    Ok(GaussianBelief { mean, cov })
}

/// One full filter cycle: predict, then update with the given frame.
pub fn step(
    belief: &GaussianBelief,
    frame: &ObservationFrame,
    weights: &StreamWeights,
    model: &SystemModel,
) -> Result<GaussianBelief> {
    let pred = predict(belief, model.transition())?;
    update(&pred, frame, weights, model)
}

/// Where the per-step weights of a filter run come from.
pub enum WeightSource {
    /// The same weights at every step.
    Fixed(StreamWeights),
    /// A precomputed weight per frame (e.g. oracle weights being replayed).
    PerStep(Vec<StreamWeights>),
    /// A trained predictor applied to each frame's reliability features.
    Predictor(TrainedPredictor),
}

/// Belief and applied weights after one filter step.
#[derive(Clone, Debug)]
pub struct StepEstimate {
    /// 1-based step index.
    pub step: usize,
    pub belief: GaussianBelief,
    pub weights: StreamWeights,
}

/// Runs the filter over a frame sequence, producing one estimate per frame.
pub fn run_filter(
    init: &GaussianBelief,
    frames: &[ObservationFrame],
    weights: &WeightSource,
    model: &SystemModel,
) -> Result<Vec<StepEstimate>> {
    if frames.is_empty() {
        return Err(Error::Validation("frame sequence is empty".into()));
    }
    if let WeightSource::PerStep(list) = weights {
        if list.len() != frames.len() {
            return Err(Error::Validation(format!(
                "{} weight entries for {} frames",
                list.len(),
                frames.len()
            )));
        }
    }

    let mut belief = init.clone();
    let mut estimates = Vec::with_capacity(frames.len());
    for (idx, frame) in frames.iter().enumerate() {
        let k = idx + 1;
        let w = match weights {
            WeightSource::Fixed(w) => w.clone(),
            WeightSource::PerStep(list) => list[idx].clone(),
            WeightSource::Predictor(p) => p.predict(&frame.features).map_err(|e| e.at_step(k))?,
        };
        belief = step(&belief, frame, &w, model).map_err(|e| e.at_step(k))?;
        estimates.push(StepEstimate {
            step: k,
            belief: belief.clone(),
            weights: w,
        });
    }
    Ok(estimates)
}
