//! Dynamical-system abstractions: state transition plus independent
//! observation streams, together with the reference azimuth-tracking model
//! (constant-velocity dynamics observed through unit-circle embeddings).

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg;

/// State-to-state or state-to-observation map.
pub type StateFn = Box<dyn Fn(&DVector<f64>) -> DVector<f64> + Send + Sync>;
/// Jacobian of a [`StateFn`], evaluated at a state.
pub type JacobianFn = Box<dyn Fn(&DVector<f64>) -> DMatrix<f64> + Send + Sync>;

const SYMMETRY_TOL: f64 = 1e-9;
const PSD_TOL: f64 = -1e-9;

/// State transition `x_k = f(x_{k-1}) + v_k` with process noise
/// covariance `Q`.
pub struct TransitionModel {
    dim: usize,
    f: StateFn,
    jacobian: JacobianFn,
    q: DMatrix<f64>,
}

impl TransitionModel {
    /// Builds a transition model, checking that `Q` is a symmetric positive
    /// semidefinite `dim x dim` matrix.
    pub fn new(dim: usize, f: StateFn, jacobian: JacobianFn, q: DMatrix<f64>) -> Result<Self> {
        if dim == 0 {
            return Err(Error::Validation("state dimension must be positive".into()));
        }
        if q.nrows() != dim || q.ncols() != dim {
            return Err(Error::Validation(format!(
                "process noise covariance is {}x{}, expected {dim}x{dim}",
                q.nrows(),
                q.ncols()
            )));
        }
        if !linalg::matrix_is_finite(&q) {
            return Err(Error::Validation(
                "process noise covariance has non-finite entries".into(),
            ));
        }
        if linalg::max_asymmetry(&q) > SYMMETRY_TOL {
            return Err(Error::Validation(
                "process noise covariance is not symmetric".into(),
            ));
        }
        if linalg::min_symmetric_eigenvalue(&q) < PSD_TOL {
            return Err(Error::Validation(
                "process noise covariance is not positive semidefinite".into(),
            ));
        }
        Ok(Self {
            dim,
            f,
            jacobian,
            q,
        })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    /// Applies the transition function.
    pub fn apply(&self, state: &DVector<f64>) -> DVector<f64> {
        (self.f)(state)
    }

    /// Evaluates the transition Jacobian at `state`.
    pub fn jacobian_at(&self, state: &DVector<f64>) -> DMatrix<f64> {
        (self.jacobian)(state)
    }

    pub fn process_noise(&self) -> &DMatrix<f64> {
        &self.q
    }
}

impl std::fmt::Debug for TransitionModel {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("TransitionModel")
            .field("dim", &self.dim)
            .field("q", &self.q)
            .finish_non_exhaustive()
    }
}

/// One observation stream `y_m = h_m(x) + w_m` with noise covariance `R_m`.
///
/// `R_m` must be positive definite; its inverse and log-determinant are
/// precomputed here since every filter step and every stream log-likelihood
/// needs them.
pub struct ObservationStream {
    dim: usize,
    label: String,
    h: StateFn,
    jacobian: JacobianFn,
    r: DMatrix<f64>,
    r_inv: DMatrix<f64>,
    log_det_r: f64,
}

impl ObservationStream {
    pub fn new(
        dim: usize,
        label: impl Into<String>,
        h: StateFn,
        jacobian: JacobianFn,
        r: DMatrix<f64>,
    ) -> Result<Self> {
        let label = label.into();
        if dim == 0 {
            return Err(Error::Validation(format!(
                "stream {label}: observation dimension must be positive"
            )));
        }
        if r.nrows() != dim || r.ncols() != dim {
            return Err(Error::Validation(format!(
                "stream {label}: noise covariance is {}x{}, expected {dim}x{dim}",
                r.nrows(),
                r.ncols()
            )));
        }
        if !linalg::matrix_is_finite(&r) {
            return Err(Error::Validation(format!(
                "stream {label}: noise covariance has non-finite entries"
            )));
        }
        if linalg::max_asymmetry(&r) > SYMMETRY_TOL {
            return Err(Error::Validation(format!(
                "stream {label}: noise covariance is not symmetric"
            )));
        }
        let chol = r
            .clone()
            .cholesky()
            .ok_or_else(|| Error::Validation(format!("R_{label} not positive definite")))?;
        let log_det_r = 2.0 * chol.l().diagonal().iter().map(|d| d.ln()).sum::<f64>();
        let r_inv = chol.inverse();
        Ok(Self {
            dim,
            label,
            h,
            jacobian,
            r,
            r_inv,
            log_det_r,
        })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn label(&self) -> &str {
        &self.label
    }

    /// Noiseless observation mean `h_m(x)`.
    pub fn observe(&self, state: &DVector<f64>) -> DVector<f64> {
        (self.h)(state)
    }

    /// Evaluates the observation Jacobian at `state`.
    pub fn jacobian_at(&self, state: &DVector<f64>) -> DMatrix<f64> {
        (self.jacobian)(state)
    }

    pub fn noise(&self) -> &DMatrix<f64> {
        &self.r
    }

    pub fn noise_inv(&self) -> &DMatrix<f64> {
        &self.r_inv
    }

    pub fn log_det_noise(&self) -> f64 {
        self.log_det_r
    }
}

impl std::fmt::Debug for ObservationStream {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("ObservationStream")
            .field("dim", &self.dim)
            .field("label", &self.label)
            .field("r", &self.r)
            .finish_non_exhaustive()
    }
}

/// A transition model plus `M >= 1` observation streams sharing its state
/// space. Immutable after construction and safe to share across threads.
pub struct SystemModel {
    transition: TransitionModel,
    streams: Vec<ObservationStream>,
}

impl SystemModel {
    pub fn new(transition: TransitionModel, streams: Vec<ObservationStream>) -> Result<Self> {
        if streams.is_empty() {
            return Err(Error::Validation(
                "a system model needs at least one observation stream".into(),
            ));
        }
        Ok(Self {
            transition,
            streams,
        })
    }

    pub fn state_dim(&self) -> usize {
        self.transition.dim()
    }

    pub fn num_streams(&self) -> usize {
        self.streams.len()
    }

    pub fn transition(&self) -> &TransitionModel {
        &self.transition
    }

    pub fn streams(&self) -> &[ObservationStream] {
        &self.streams
    }

    pub fn stream(&self, m: usize) -> &ObservationStream {
        &self.streams[m]
    }

    pub fn stream_labels(&self) -> Vec<String> {
        self.streams.iter().map(|s| s.label().to_string()).collect()
    }
}

// ---------------------------------------------------------------------------
// Constant-velocity dynamics and range-valued azimuth observations
// ---------------------------------------------------------------------------

/// Default process-noise factor for the constant-velocity model.
pub const DEFAULT_SIGMA_V2: f64 = 0.3;
/// Default observation-noise variance for the range-valued measurement model.
pub const DEFAULT_SIGMA_W2: f64 = 0.01;

/// Parameters of the constant-velocity model: time step `T` and
/// process-noise factor `sigma_v2`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct CvParams {
    pub t: f64,
    pub sigma_v2: f64,
}

impl CvParams {
    pub fn new(t: f64) -> Self {
        Self {
            t,
            sigma_v2: DEFAULT_SIGMA_V2,
        }
    }

    /// Checks `T > 0` and `sigma_v2 > 0` for use in a filter model.
    pub fn validate(&self) -> Result<()> {
        if !(self.t > 0.0 && self.t.is_finite()) {
            return Err(Error::Validation("time step T must be positive".into()));
        }
        if !(self.sigma_v2 > 0.0 && self.sigma_v2.is_finite()) {
            return Err(Error::Validation("sigma_v2 must be positive".into()));
        }
        Ok(())
    }
}

impl Default for CvParams {
    fn default() -> Self {
        Self::new(0.1)
    }
}

/// Parameters of the range-valued measurement model.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RvmParams {
    pub sigma_w2: f64,
}

impl RvmParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.sigma_w2 > 0.0 && self.sigma_w2.is_finite()) {
            return Err(Error::Validation("sigma_w2 must be positive".into()));
        }
        Ok(())
    }
}

impl Default for RvmParams {
    fn default() -> Self {
        Self {
            sigma_w2: DEFAULT_SIGMA_W2,
        }
    }
}

fn ensure_state_2(state: &DVector<f64>, what: &str) -> Result<()> {
    if state.len() != 2 {
        return Err(Error::InvalidInput(format!(
            "{what}: expected a 2-dimensional state, got {}",
            state.len()
        )));
    }
    if !linalg::vector_is_finite(state) {
        return Err(Error::InvalidInput(format!(
            "{what}: state has non-finite entries"
        )));
    }
    Ok(())
}

fn cv_map(state: &DVector<f64>, t: f64) -> DVector<f64> {
    DVector::from_vec(vec![state[0] + t * state[1], state[1]])
}

fn rvm_map(state: &DVector<f64>) -> DVector<f64> {
    DVector::from_vec(vec![state[0].cos(), state[0].sin()])
}

fn rvm_jac(state: &DVector<f64>) -> DMatrix<f64> {
    DMatrix::from_row_slice(2, 2, &[-state[0].sin(), 0.0, state[0].cos(), 0.0])
}

/// Advances `[azimuth, rate]` one step under constant-velocity dynamics.
pub fn cv_transition(state: &DVector<f64>, p: &CvParams) -> Result<DVector<f64>> {
    ensure_state_2(state, "cv_transition")?;
    Ok(cv_map(state, p.t))
}

/// Constant-velocity transition matrix `[[1, T], [0, 1]]`.
pub fn cv_jacobian(p: &CvParams) -> DMatrix<f64> {
    DMatrix::from_row_slice(2, 2, &[1.0, p.t, 0.0, 1.0])
}

/// Process noise `sigma_v2 * [[T^3/3, T^2/2], [T^2/2, T]]`.
pub fn cv_process_noise(p: &CvParams) -> DMatrix<f64> {
    let t = p.t;
    let s = p.sigma_v2;
    DMatrix::from_row_slice(
        2,
        2,
        &[s * t * t * t / 3.0, s * t * t / 2.0, s * t * t / 2.0, s * t],
    )
}

/// Noiseless unit-circle embedding `[cos(azimuth), sin(azimuth)]` of the
/// state's azimuth component.
pub fn rvm_observe(state: &DVector<f64>) -> Result<DVector<f64>> {
    ensure_state_2(state, "rvm_observe")?;
    Ok(rvm_map(state))
}

/// Jacobian of [`rvm_observe`]: `[[-sin(az), 0], [cos(az), 0]]`.
pub fn rvm_jacobian(state: &DVector<f64>) -> Result<DMatrix<f64>> {
    ensure_state_2(state, "rvm_jacobian")?;
    Ok(rvm_jac(state))
}

/// Isotropic observation noise `sigma_w2 * I` for a range-valued stream.
pub fn rvm_noise(p: &RvmParams) -> DMatrix<f64> {
    DMatrix::identity(2, 2) * p.sigma_w2
}

// ---------------------------------------------------------------------------
// JSON configuration
// ---------------------------------------------------------------------------

fn default_sigma_v2() -> f64 {
    DEFAULT_SIGMA_V2
}

fn default_sigma_w2() -> f64 {
    DEFAULT_SIGMA_W2
}

/// One stream entry of a [`ModelConfig`].
#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
pub struct StreamConfig {
    pub label: String,
    #[serde(default = "default_sigma_w2")]
    pub sigma_w2: f64,
}

/// JSON-loadable model description:
/// `{"model":"cv-rvm","T":0.1,"sigma_v2":0.3,"streams":[{"label":"audio","sigma_w2":0.01},...]}`.
#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
pub struct ModelConfig {
    pub model: String,
    #[serde(rename = "T")]
    pub t: f64,
    #[serde(default = "default_sigma_v2")]
    pub sigma_v2: f64,
    pub streams: Vec<StreamConfig>,
}

impl ModelConfig {
    /// A two-stream `cv-rvm` configuration with default noise levels.
    pub fn cv_rvm_two_stream(t: f64) -> Self {
        Self {
            model: "cv-rvm".into(),
            t,
            sigma_v2: DEFAULT_SIGMA_V2,
            streams: vec![
                StreamConfig {
                    label: "audio".into(),
                    sigma_w2: DEFAULT_SIGMA_W2,
                },
                StreamConfig {
                    label: "video".into(),
                    sigma_w2: DEFAULT_SIGMA_W2,
                },
            ],
        }
    }

    pub fn cv_params(&self) -> CvParams {
        CvParams {
            t: self.t,
            sigma_v2: self.sigma_v2,
        }
    }

    /// Builds the filter-facing [`SystemModel`] described by this config.
    pub fn build(&self) -> Result<SystemModel> {
        if self.model != "cv-rvm" {
            return Err(Error::Unsupported(format!(
                "unknown model kind '{}'",
                self.model
            )));
        }
        let cv = self.cv_params();
        cv.validate()?;
        let t = cv.t;
        let transition = TransitionModel::new(
            2,
            Box::new(move |x| cv_map(x, t)),
            Box::new(move |_| DMatrix::from_row_slice(2, 2, &[1.0, t, 0.0, 1.0])),
            cv_process_noise(&cv),
        )?;
        let mut streams = Vec::with_capacity(self.streams.len());
        for sc in &self.streams {
            let rvm = RvmParams {
                sigma_w2: sc.sigma_w2,
            };
            rvm.validate()?;
            streams.push(ObservationStream::new(
                2,
                sc.label.clone(),
                Box::new(rvm_map),
                Box::new(rvm_jac),
                rvm_noise(&rvm),
            )?);
        }
        SystemModel::new(transition, streams)
    }
}

// ---------------------------------------------------------------------------
// Model diagnostics
// ---------------------------------------------------------------------------

/// Report produced by [`validate_model`]; empty means no violations found.
#[derive(Clone, Debug, Default)]
pub struct ModelDiagnostics {
    pub violations: Vec<String>,
}

impl ModelDiagnostics {
    pub fn is_ok(&self) -> bool {
        self.violations.is_empty()
    }
}

const FD_STEP: f64 = 1e-6;
const JACOBIAN_REL_TOL: f64 = 1e-4;

/// Central finite-difference Jacobian of `f` at `x` with step 1e-6.
pub fn finite_difference_jacobian(
    f: &dyn Fn(&DVector<f64>) -> DVector<f64>,
    x: &DVector<f64>,
) -> DMatrix<f64> {
    let out_dim = f(x).len();
    let mut jac = DMatrix::zeros(out_dim, x.len());
    for j in 0..x.len() {
        let mut hi = x.clone();
        let mut lo = x.clone();
        hi[j] += FD_STEP;
        lo[j] -= FD_STEP;
        let diff = (f(&hi) - f(&lo)) / (2.0 * FD_STEP);
        jac.set_column(j, &diff);
    }
    jac
}

fn jacobian_mismatch(analytic: &DMatrix<f64>, numeric: &DMatrix<f64>) -> f64 {
    let scale = 1.0 + analytic.iter().fold(0.0f64, |a, &x| a.max(x.abs()));
    let mut worst = 0.0f64;
    for (a, n) in analytic.iter().zip(numeric.iter()) {
        worst = worst.max((a - n).abs());
    }
    worst / scale
}

/// Checks a constructed model for internal consistency: noise covariance
/// symmetry and definiteness, dimension agreement at a probe state, and
/// analytic-vs-finite-difference Jacobian agreement. Never fails; returns
/// the list of violations found.
pub fn validate_model(model: &SystemModel, probe: &DVector<f64>) -> ModelDiagnostics {
    let mut report = ModelDiagnostics::default();
    let dx = model.state_dim();

    if probe.len() != dx {
        report.violations.push(format!(
            "probe state has dimension {}, model expects {dx}",
            probe.len()
        ));
        return report;
    }

    let q = model.transition().process_noise();
    if linalg::max_asymmetry(q) > SYMMETRY_TOL {
        report.violations.push("Q is not symmetric".into());
    } else if linalg::min_symmetric_eigenvalue(q) < PSD_TOL {
        report
            .violations
            .push("Q is not positive semidefinite".into());
    }

    let fx = model.transition().apply(probe);
    if fx.len() != dx {
        report.violations.push(format!(
            "transition output has dimension {}, expected {dx}",
            fx.len()
        ));
    }
    let f_jac = model.transition().jacobian_at(probe);
    if f_jac.nrows() != dx || f_jac.ncols() != dx {
        report.violations.push(format!(
            "transition Jacobian is {}x{}, expected {dx}x{dx}",
            f_jac.nrows(),
            f_jac.ncols()
        ));
    } else {
        let fd = finite_difference_jacobian(&|x| model.transition().apply(x), probe);
        let err = jacobian_mismatch(&f_jac, &fd);
        if err > JACOBIAN_REL_TOL {
            report.violations.push(format!(
                "transition Jacobian disagrees with finite differences (relative error {err:.2e})"
            ));
        }
    }

    for (idx, stream) in model.streams().iter().enumerate() {
        let name = format!("R_{} ({})", idx + 1, stream.label());
        if linalg::max_asymmetry(stream.noise()) > SYMMETRY_TOL {
            report.violations.push(format!("{name} is not symmetric"));
        } else if stream.noise().clone().cholesky().is_none() {
            report
                .violations
                .push(format!("{name} not positive definite"));
        }

        let hx = stream.observe(probe);
        if hx.len() != stream.dim() {
            report.violations.push(format!(
                "stream {} output has dimension {}, expected {}",
                stream.label(),
                hx.len(),
                stream.dim()
            ));
        }
        let h_jac = stream.jacobian_at(probe);
        if h_jac.nrows() != stream.dim() || h_jac.ncols() != dx {
            report.violations.push(format!(
                "stream {} Jacobian is {}x{}, expected {}x{dx}",
                stream.label(),
                h_jac.nrows(),
                h_jac.ncols(),
                stream.dim()
            ));
        } else {
            let fd = finite_difference_jacobian(&|x| stream.observe(x), probe);
            let err = jacobian_mismatch(&h_jac, &fd);
            if err > JACOBIAN_REL_TOL {
                report.violations.push(format!(
                    "stream {} Jacobian disagrees with finite differences (relative error {err:.2e})",
                    stream.label()
                ));
            }
        }
    }

    report
}
