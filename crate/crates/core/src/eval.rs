//! Metrics, cross-validation, the synthetic fusion study and the runtime
//! benchmark comparing the weighted multi-stream filter against a standard
//! EKF consuming stacked observations.

use std::io::Write as IoWrite;
use std::time::Instant;

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};
use crate::filter::{
    run_filter, GaussianBelief, ObservationFrame, StepEstimate, StreamWeights, WeightSource,
};
use crate::learn::{standardize_features, train_sgd, SgdConfig, TrainingRow};
use crate::linalg;
use crate::model::{ObservationStream, SystemModel, TransitionModel};
use crate::odsw::{odsw_sequence, GaussianPriorParams, OdswPrior};
use crate::sim::{
    simulate_sequence, DisturbanceEntry, DisturbanceKind, ScenarioSpec, SequenceRecord,
};

/// Metric configuration: the grace fraction excluded from the start of
/// every sequence while the filter converges.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct EvalConfig {
    pub grace_fraction: f64,
}

impl EvalConfig {
    pub fn new(grace_fraction: f64) -> Result<Self> {
        if !(0.0..0.5).contains(&grace_fraction) {
            return Err(Error::Validation(format!(
                "grace fraction {grace_fraction} must lie in [0, 0.5)"
            )));
        }
        Ok(Self { grace_fraction })
    }
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self {
            grace_fraction: 0.1,
        }
    }
}

/// Circular RMSE in degrees between estimated and ground-truth azimuth
/// sequences (radians), over steps `k0..=K` with `k0 = floor(grace*K) + 1`.
///
/// The error per step is the angular difference wrapped into `(-pi, pi]`,
/// which realizes the minimum over all whole-turn offsets.
pub fn circular_rmse(est: &[f64], truth: &[f64], cfg: &EvalConfig) -> Result<f64> {
    if est.len() != truth.len() {
        return Err(Error::Validation(format!(
            "estimate and truth lengths differ: {} vs {}",
            est.len(),
            truth.len()
        )));
    }
    if est.is_empty() {
        return Err(Error::Validation(
            "cannot evaluate an empty sequence".into(),
        ));
    }
    let k = est.len();
    let start = (cfg.grace_fraction * k as f64).floor() as usize;
    let mut sum_sq = 0.0;
    for (e, t) in est[start..].iter().zip(&truth[start..]) {
        let d = linalg::wrap_angle(e - t);
        sum_sq += d * d;
    }
    let count = (k - start) as f64;
    Ok((sum_sq / count).sqrt().to_degrees())
}

/// Aggregate of per-sequence errors: mean plus sample standard deviation.
#[derive(Clone, Debug, PartialEq)]
pub struct RunSummary {
    pub label: String,
    pub mean: f64,
    pub std: f64,
    pub count: usize,
    /// Set when only one run was summarized, so the reported deviation of
    /// zero is a degenerate statistic rather than a measurement.
    pub single_run: bool,
}

impl std::fmt::Display for RunSummary {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{:.2} \u{00b1} {:.2}", self.mean, self.std)?;
        if self.single_run {
            write!(f, " (single run)")?;
        }
        Ok(())
    }
}

/// Mean and sample (n-1) standard deviation of per-sequence errors.
pub fn summarize(crmses: &[f64], label: &str) -> Result<RunSummary> {
    if crmses.is_empty() {
        return Err(Error::Validation("nothing to summarize".into()));
    }
    let n = crmses.len() as f64;
    let mean = crmses.iter().sum::<f64>() / n;
    let std = if crmses.len() == 1 {
        0.0
    } else {
        (crmses.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / (n - 1.0)).sqrt()
    };
    Ok(RunSummary {
        label: label.to_string(),
        mean,
        std,
        count: crmses.len(),
        single_run: crmses.len() == 1,
    })
}

/// Default initial belief for azimuth tracking: back-projects the first
/// present observation to an azimuth, zero rate, unit covariance.
pub fn default_initial_belief(record: &SequenceRecord) -> Result<GaussianBelief> {
    for step in &record.steps {
        for obs in step.observations.iter().flatten() {
            if obs.len() >= 2 {
                let azimuth = obs[1].atan2(obs[0]);
                return GaussianBelief::new(
                    DVector::from_vec(vec![azimuth, 0.0]),
                    DMatrix::identity(2, 2),
                );
            }
        }
    }
    Err(Error::Validation(
        "record has no observations to initialize from".into(),
    ))
}

/// A tracked sequence: estimates plus the error against ground truth when
/// the record carries it.
#[derive(Clone, Debug)]
pub struct TrackingOutcome {
    pub estimates: Vec<StepEstimate>,
    pub crmse_deg: Option<f64>,
}

/// Tracks one record end to end with the default initial belief.
pub fn run_tracking(
    record: &SequenceRecord,
    model: &SystemModel,
    source: &WeightSource,
    cfg: &EvalConfig,
) -> Result<TrackingOutcome> {
    let init = default_initial_belief(record)?;
    let estimates = run_filter(&init, &record.frames(), source, model)?;
    let crmse_deg = if record.steps.iter().all(|s| s.state.is_some()) {
        let truth = record.truth_azimuths()?;
        let est: Vec<f64> = estimates.iter().map(|e| e.belief.mean()[0]).collect();
        Some(circular_rmse(&est, &truth, cfg)?)
    } else {
        None
    };
    Ok(TrackingOutcome {
        estimates,
        crmse_deg,
    })
}

// ---------------------------------------------------------------------------
// Cross-validation
// ---------------------------------------------------------------------------

/// Sequences belonging to one hold-out unit (a "speaker").
#[derive(Clone, Debug)]
pub struct EvalGroup {
    pub id: String,
    pub records: Vec<SequenceRecord>,
}

/// How per-step weights are produced for evaluation sequences.
#[derive(Clone, Debug)]
pub enum WeightPipeline {
    /// The same weights everywhere; no training happens.
    Fixed(StreamWeights),
    /// Oracle weights recomputed from each sequence's own ground truth.
    OdswReplay(OdswPrior),
    /// Oracle targets from the training folds feed a logistic predictor,
    /// which is then applied to the held-out sequences.
    Trained { prior: OdswPrior, sgd: SgdConfig },
}

/// Result of one leave-one-group-out fold.
#[derive(Clone, Debug)]
pub struct FoldReport {
    pub held_out: String,
    pub trained_on: Vec<String>,
    pub training_rows: usize,
    pub per_sequence_crmse: Vec<f64>,
    pub summary: RunSummary,
}

#[derive(Clone, Debug)]
pub struct CrossValidationReport {
    pub folds: Vec<FoldReport>,
    pub pooled: RunSummary,
}

fn oracle_training_rows(
    records: &[SequenceRecord],
    model: &SystemModel,
    prior: &OdswPrior,
) -> Result<Vec<TrainingRow>> {
    let mut rows = Vec::new();
    for record in records {
        let states = record.truth_states()?;
        let frames = record.frames();
        let weights = odsw_sequence(&states, &frames, model, prior)?;
        for (frame, target) in frames.iter().zip(weights) {
            rows.push(TrainingRow {
                features: frame.features.clone(),
                target,
            });
        }
    }
    Ok(rows)
}

/// Leave-one-group-out cross-validation: for every group, fit the pipeline
/// on all other groups and evaluate tracking on the held-out one.
pub fn cross_validate(
    groups: &[EvalGroup],
    model: &SystemModel,
    pipeline: &WeightPipeline,
    cfg: &EvalConfig,
) -> Result<CrossValidationReport> {
    if groups.len() < 2 {
        return Err(Error::Validation(
            "cross-validation needs at least two groups".into(),
        ));
    }
    for g in groups {
        if g.records.is_empty() {
            return Err(Error::Validation(format!(
                "group '{}' has no sequences",
                g.id
            )));
        }
    }

    let mut folds = Vec::with_capacity(groups.len());
    let mut pooled = Vec::new();
    for (held_idx, held) in groups.iter().enumerate() {
        let train_groups: Vec<&EvalGroup> = groups
            .iter()
            .enumerate()
            .filter(|(i, _)| *i != held_idx)
            .map(|(_, g)| g)
            .collect();

        let (source, training_rows) = match pipeline {
            WeightPipeline::Fixed(w) => (WeightSource::Fixed(w.clone()), 0),
            WeightPipeline::OdswReplay(_) => (
                WeightSource::Fixed(StreamWeights::uniform(model.num_streams())),
                0,
            ),
            WeightPipeline::Trained { prior, sgd } => {
                let mut rows = Vec::new();
                for g in &train_groups {
                    rows.extend(oracle_training_rows(&g.records, model, prior)?);
                }
                let count = rows.len();
                let report = train_sgd(&standardize_features(&rows)?, sgd)?;
                (WeightSource::Predictor(report.predictor), count)
            }
        };

        let mut errors = Vec::with_capacity(held.records.len());
        for record in &held.records {
            let per_record_source = match pipeline {
                WeightPipeline::OdswReplay(prior) => {
                    let weights =
                        odsw_sequence(&record.truth_states()?, &record.frames(), model, prior)?;
                    WeightSource::PerStep(weights)
                }
                _ => match &source {
                    WeightSource::Fixed(w) => WeightSource::Fixed(w.clone()),
                    WeightSource::Predictor(p) => WeightSource::Predictor(p.clone()),
                    WeightSource::PerStep(_) => unreachable!(),
                },
            };
            let outcome = run_tracking(record, model, &per_record_source, cfg)?;
            let crmse = outcome.crmse_deg.ok_or_else(|| {
                Error::Validation("evaluation sequences need ground truth".into())
            })?;
            errors.push(crmse);
        }

        pooled.extend_from_slice(&errors);
        let summary = summarize(&errors, &held.id)?;
        folds.push(FoldReport {
            held_out: held.id.clone(),
            trained_on: train_groups.iter().map(|g| g.id.clone()).collect(),
            training_rows,
            per_sequence_crmse: errors,
            summary,
        });
    }

    let pooled = summarize(&pooled, "pooled")?;
    Ok(CrossValidationReport { folds, pooled })
}

// ---------------------------------------------------------------------------
// Synthetic fusion study
// ---------------------------------------------------------------------------

/// Configuration of the clean-vs-degraded synthetic comparison.
#[derive(Clone, Debug)]
pub struct FusionStudyConfig {
    pub sequences: usize,
    pub steps: usize,
    pub base_seed: u64,
    /// SNR-like level applied to stream 1 over the second half of each
    /// degraded sequence.
    pub snr_db: f64,
    /// Process-noise factor of the study scenarios. The model default keeps
    /// filters robust on real data, but as a truth generator it accumulates
    /// implausible velocities over long sequences; the study uses gentler
    /// dynamics so tracking error reflects observation quality.
    pub scenario_sigma_v2: f64,
    pub dirichlet_alpha: f64,
    pub gaussian: GaussianPriorParams,
    pub eval: EvalConfig,
}

impl Default for FusionStudyConfig {
    fn default() -> Self {
        Self {
            sequences: 20,
            steps: 300,
            base_seed: 0,
            snr_db: 0.0,
            scenario_sigma_v2: 0.05,
            dirichlet_alpha: crate::odsw::DEFAULT_ALPHA,
            gaussian: GaussianPriorParams::default(),
            eval: EvalConfig::default(),
        }
    }
}

/// Per-method results of the fusion study.
#[derive(Clone, Debug)]
pub struct MethodScores {
    pub method: String,
    pub clean: RunSummary,
    pub degraded: RunSummary,
    pub per_sequence_clean: Vec<f64>,
    pub per_sequence_degraded: Vec<f64>,
}

fn clean_spec(cfg: &FusionStudyConfig, seed: u64) -> ScenarioSpec {
    let mut spec = ScenarioSpec::two_stream(cfg.steps, seed);
    spec.model.sigma_v2 = cfg.scenario_sigma_v2;
    spec
}

fn degraded_spec(cfg: &FusionStudyConfig, seed: u64) -> ScenarioSpec {
    let mut spec = clean_spec(cfg, seed);
    spec.disturbances = vec![DisturbanceEntry {
        stream: 0,
        start: cfg.steps / 2 + 1,
        end: cfg.steps,
        kind: DisturbanceKind::NoiseInflation,
        magnitude: cfg.snr_db,
    }];
    spec
}

/// Runs fixed-weight and oracle-weighted tracking over a seeded suite of
/// clean and degraded sequences. Sequence `i` uses seed `base_seed + i`.
pub fn fusion_study(cfg: &FusionStudyConfig) -> Result<Vec<MethodScores>> {
    let model = clean_spec(cfg, 0).model.build()?;
    let dirichlet = OdswPrior::Dirichlet(crate::odsw::DirichletPrior::new(cfg.dirichlet_alpha)?);
    let gaussian = OdswPrior::Gaussian(cfg.gaussian);

    let methods: Vec<(String, Option<OdswPrior>)> = vec![
        ("ekf-fixed".into(), None),
        ("odsw-dirichlet".into(), Some(dirichlet)),
        ("odsw-gaussian".into(), Some(gaussian)),
    ];

    let mut clean_scores = vec![Vec::with_capacity(cfg.sequences); methods.len()];
    let mut degraded_scores = vec![Vec::with_capacity(cfg.sequences); methods.len()];

    for i in 0..cfg.sequences {
        let seed = cfg.base_seed + i as u64;
        let clean = simulate_sequence(&clean_spec(cfg, seed))?;
        let degraded = simulate_sequence(&degraded_spec(cfg, seed))?;
        for (slot, (_, prior)) in methods.iter().enumerate() {
            for (record, scores) in [
                (&clean, &mut clean_scores[slot]),
                (&degraded, &mut degraded_scores[slot]),
            ] {
                let source = match prior {
                    None => WeightSource::Fixed(StreamWeights::uniform(2)),
                    Some(p) => WeightSource::PerStep(odsw_sequence(
                        &record.truth_states()?,
                        &record.frames(),
                        &model,
                        p,
                    )?),
                };
                let outcome = run_tracking(record, &model, &source, &cfg.eval)?;
                scores.push(outcome.crmse_deg.expect("simulated records carry truth"));
            }
        }
    }

    methods
        .into_iter()
        .enumerate()
        .map(|(slot, (method, _))| {
            Ok(MethodScores {
                clean: summarize(&clean_scores[slot], &format!("{method}/clean"))?,
                degraded: summarize(&degraded_scores[slot], &format!("{method}/degraded"))?,
                per_sequence_clean: clean_scores[slot].clone(),
                per_sequence_degraded: degraded_scores[slot].clone(),
                method,
            })
        })
        .collect()
}

// ---------------------------------------------------------------------------
// Timing benchmark
// ---------------------------------------------------------------------------

/// One benchmark condition: state dimension, per-stream observation
/// dimension, and number of streams.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct BenchCondition {
    pub state_dim: usize,
    pub obs_dim: usize,
    pub streams: usize,
}

/// Monte-Carlo settings for the benchmark.
#[derive(Clone, Copy, Debug)]
pub struct BenchConfig {
    pub runs: usize,
    pub steps: usize,
    pub seed: u64,
}

impl Default for BenchConfig {
    fn default() -> Self {
        Self {
            runs: 25,
            steps: 100,
            seed: 0,
        }
    }
}

/// Runtime ratio (weighted filter over standard EKF) for one condition.
#[derive(Clone, Debug)]
pub struct TimingResult {
    pub state_dim: usize,
    pub obs_dim: usize,
    pub streams: usize,
    pub ratio_mean: f64,
    pub ratio_std: f64,
    pub ratio_median: f64,
}

/// Rectangular identity: ones on the main diagonal.
fn eye(rows: usize, cols: usize) -> DMatrix<f64> {
    let mut m = DMatrix::zeros(rows, cols);
    for i in 0..rows.min(cols) {
        m[(i, i)] = 1.0;
    }
    m
}

/// All-identity linear model with `streams` observation streams.
fn identity_model(cond: &BenchCondition) -> Result<SystemModel> {
    let dx = cond.state_dim;
    let transition = TransitionModel::new(
        dx,
        Box::new(|x: &DVector<f64>| x.clone()),
        Box::new(move |_| DMatrix::identity(dx, dx)),
        DMatrix::identity(dx, dx),
    )?;
    let mut streams = Vec::with_capacity(cond.streams);
    for m in 0..cond.streams {
        let h = eye(cond.obs_dim, dx);
        let h_jac = h.clone();
        streams.push(ObservationStream::new(
            cond.obs_dim,
            format!("s{m}"),
            Box::new(move |x: &DVector<f64>| &h * x),
            Box::new(move |_| h_jac.clone()),
            DMatrix::identity(cond.obs_dim, cond.obs_dim),
        )?);
    }
    SystemModel::new(transition, streams)
}

/// Standard textbook EKF over the stacked observation vector:
/// `x = F x`, `P = F P Fᵀ + Q`, `K = P Hᵀ (H P Hᵀ + R)⁻¹`,
/// `P = (I - K H) P`. The matrices are constant (the benchmark models are
/// linear) but the full multiplications run every step, as in a generic
/// implementation.
struct StackedEkf {
    f: DMatrix<f64>,
    q: DMatrix<f64>,
    h: DMatrix<f64>,
    r: DMatrix<f64>,
}

impl StackedEkf {
    fn new(cond: &BenchCondition) -> Self {
        let dx = cond.state_dim;
        let dy = cond.obs_dim * cond.streams;
        let mut h = DMatrix::zeros(dy, dx);
        for m in 0..cond.streams {
            h.view_mut((m * cond.obs_dim, 0), (cond.obs_dim, dx))
                .copy_from(&eye(cond.obs_dim, dx));
        }
        Self {
            f: DMatrix::identity(dx, dx),
            q: DMatrix::identity(dx, dx),
            h,
            r: DMatrix::identity(dy, dy),
        }
    }

    fn step(
        &self,
        mean: &DVector<f64>,
        cov: &DMatrix<f64>,
        y: &DVector<f64>,
    ) -> Result<(DVector<f64>, DMatrix<f64>)> {
        let pred_mean = &self.f * mean;
        let pred_cov = &self.f * cov * self.f.transpose() + &self.q;

        let innovation = y - &self.h * &pred_mean;
        let hp = &self.h * &pred_cov;
        let s = &hp * self.h.transpose() + &self.r;
        let k_t = s
            .lu()
            .solve(&hp)
            .ok_or_else(|| Error::Numerical("singular innovation covariance".into()))?;
        let k = k_t.transpose();
        let dx = pred_cov.nrows();
        let mean = &pred_mean + &k * innovation;
        let cov = (DMatrix::identity(dx, dx) - &k * &self.h) * &pred_cov;
        Ok((mean, cov))
    }
}

fn run_weighted_filter(
    model: &SystemModel,
    weights: &StreamWeights,
    observations: &[Vec<DVector<f64>>],
) -> Result<GaussianBelief> {
    let dx = model.state_dim();
    let mut belief = GaussianBelief::new(DVector::zeros(dx), DMatrix::identity(dx, dx))?;
    for per_stream in observations {
        let frame = ObservationFrame::new(per_stream.iter().cloned().map(Some).collect(), vec![]);
        belief = crate::filter::step(&belief, &frame, weights, model)?;
    }
    Ok(belief)
}

fn run_stacked_ekf(
    ekf: &StackedEkf,
    dx: usize,
    observations: &[DVector<f64>],
) -> Result<(DVector<f64>, DMatrix<f64>)> {
    let mut mean = DVector::zeros(dx);
    let mut cov = DMatrix::identity(dx, dx);
    for y in observations {
        let (m, c) = ekf.step(&mean, &cov, y)?;
        mean = m;
        cov = c;
    }
    Ok((mean, cov))
}

/// Gap between the two filters' final means when both are fed observations
/// that produce zero innovations at every step. Sanity channel for the
/// benchmark: the gap must vanish.
pub fn bench_zero_innovation_gap(cond: &BenchCondition, steps: usize) -> Result<f64> {
    let model = identity_model(cond)?;
    let weights = StreamWeights::uniform(cond.streams);
    let dx = cond.state_dim;
    let init_mean = DVector::from_iterator(dx, (0..dx).map(|i| i as f64 * 0.1 - 0.3));

    // Identity dynamics keep the predicted mean fixed, so observing the
    // predicted observation yields zero innovation for both filters.
    let mut belief = GaussianBelief::new(init_mean.clone(), DMatrix::identity(dx, dx))?;
    for _ in 0..steps {
        let per_stream: Vec<Option<DVector<f64>>> = model
            .streams()
            .iter()
            .map(|s| Some(s.observe(belief.mean())))
            .collect();
        let frame = ObservationFrame::new(per_stream, vec![]);
        belief = crate::filter::step(&belief, &frame, &weights, &model)?;
    }

    let ekf = StackedEkf::new(cond);
    let mut mean = init_mean.clone();
    let mut cov = DMatrix::identity(dx, dx);
    for _ in 0..steps {
        let y = &ekf.h * &mean;
        let (m, c) = ekf.step(&mean, &cov, &y)?;
        mean = m;
        cov = c;
    }

    Ok((belief.mean() - mean).amax())
}

/// Wall-clock comparison of the weighted filter against the stacked-vector
/// EKF over seeded random observation sequences. Each condition runs a
/// discarded warm-up plus `runs` timed repetitions; conditions execute
/// serially to avoid contention skew.
pub fn timing_benchmark(
    conditions: &[BenchCondition],
    cfg: &BenchConfig,
) -> Result<Vec<TimingResult>> {
    if conditions.is_empty() {
        return Err(Error::Validation("no benchmark conditions given".into()));
    }
    if cfg.runs == 0 || cfg.steps == 0 {
        return Err(Error::Validation("runs and steps must be positive".into()));
    }

    let mut results = Vec::with_capacity(conditions.len());
    for (ci, cond) in conditions.iter().enumerate() {
        if cond.state_dim == 0 || cond.obs_dim == 0 || cond.streams == 0 {
            return Err(Error::Validation(
                "benchmark dimensions must be positive".into(),
            ));
        }
        let model = identity_model(cond)?;
        let ekf = StackedEkf::new(cond);
        let weights = StreamWeights::uniform(cond.streams);
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed.wrapping_add(ci as u64));

        let mut ratios = Vec::with_capacity(cfg.runs);
        for run in 0..=cfg.runs {
            let per_stream: Vec<Vec<DVector<f64>>> = (0..cfg.steps)
                .map(|_| {
                    (0..cond.streams)
                        .map(|_| {
                            DVector::from_iterator(
                                cond.obs_dim,
                                (0..cond.obs_dim).map(|_| rng.sample::<f64, _>(StandardNormal)),
                            )
                        })
                        .collect()
                })
                .collect();
            let stacked: Vec<DVector<f64>> = per_stream
                .iter()
                .map(|parts| {
                    DVector::from_iterator(
                        cond.obs_dim * cond.streams,
                        parts.iter().flat_map(|p| p.iter().cloned()),
                    )
                })
                .collect();

            let t0 = Instant::now();
            let weighted = run_weighted_filter(&model, &weights, &per_stream)?;
            let t_weighted = t0.elapsed().as_secs_f64();

            let t1 = Instant::now();
            let (ekf_mean, _) = run_stacked_ekf(&ekf, cond.state_dim, &stacked)?;
            let t_ekf = t1.elapsed().as_secs_f64();

            // Keep the results alive so the timed loops cannot be elided.
            std::hint::black_box((weighted.mean()[0], ekf_mean[0]));

            if run > 0 {
                ratios.push(t_weighted / t_ekf.max(f64::MIN_POSITIVE));
            }
        }

        let n = ratios.len() as f64;
        let mean = ratios.iter().sum::<f64>() / n;
        let std = if ratios.len() > 1 {
            (ratios.iter().map(|r| (r - mean) * (r - mean)).sum::<f64>() / (n - 1.0)).sqrt()
        } else {
            0.0
        };
        let mut sorted = ratios.clone();
        sorted.sort_by(f64::total_cmp);
        let median = if sorted.len() % 2 == 1 {
            sorted[sorted.len() / 2]
        } else {
            0.5 * (sorted[sorted.len() / 2 - 1] + sorted[sorted.len() / 2])
        };

        results.push(TimingResult {
            state_dim: cond.state_dim,
            obs_dim: cond.obs_dim,
            streams: cond.streams,
            ratio_mean: mean,
            ratio_std: std,
            ratio_median: median,
        });
    }
    Ok(results)
}

// ---------------------------------------------------------------------------
// Result rendering
// ---------------------------------------------------------------------------

/// One row of the per-sequence error CSV.
#[derive(Clone, Debug)]
pub struct CrmseRow {
    pub condition: String,
    pub sequence_id: String,
    pub crmse_deg: f64,
}

/// Writes `condition,sequence_id,crmse_deg` rows.
pub fn write_crmse_csv<W: IoWrite>(writer: &mut W, rows: &[CrmseRow]) -> Result<()> {
    let io_err = |e: std::io::Error| Error::Validation(format!("csv write failed: {e}"));
    writeln!(writer, "condition,sequence_id,crmse_deg").map_err(io_err)?;
    for row in rows {
        writeln!(
            writer,
            "{},{},{:.6}",
            row.condition, row.sequence_id, row.crmse_deg
        )
        .map_err(io_err)?;
    }
    Ok(())
}

/// Writes `dx,dym,m,ratio_mean,ratio_std` rows.
pub fn write_timing_csv<W: IoWrite>(writer: &mut W, results: &[TimingResult]) -> Result<()> {
    let io_err = |e: std::io::Error| Error::Validation(format!("csv write failed: {e}"));
    writeln!(writer, "dx,dym,m,ratio_mean,ratio_std").map_err(io_err)?;
    for r in results {
        writeln!(
            writer,
            "{},{},{},{:.6},{:.6}",
            r.state_dim, r.obs_dim, r.streams, r.ratio_mean, r.ratio_std
        )
        .map_err(io_err)?;
    }
    Ok(())
}

/// Renders an aligned text table: one row per method, one column per
/// condition, cells formatted as `mean ± std`.
pub fn format_summary_table(conditions: &[&str], rows: &[(String, Vec<RunSummary>)]) -> String {
    let mut widths: Vec<usize> = conditions.iter().map(|c| c.len()).collect();
    let mut cells: Vec<Vec<String>> = Vec::with_capacity(rows.len());
    let mut name_width = "method".len();
    for (name, summaries) in rows {
        name_width = name_width.max(name.len());
        let rendered: Vec<String> = summaries.iter().map(|s| s.to_string()).collect();
        for (w, cell) in widths.iter_mut().zip(&rendered) {
            *w = (*w).max(cell.len());
        }
        cells.push(rendered);
    }

    let mut out = String::new();
    out.push_str(&format!("{:<name_width$}", "method"));
    for (c, w) in conditions.iter().zip(&widths) {
        out.push_str(&format!("  {c:>w$}"));
    }
    out.push('\n');
    for ((name, _), rendered) in rows.iter().zip(&cells) {
        out.push_str(&format!("{name:<name_width$}"));
        for (cell, w) in rendered.iter().zip(&widths) {
            out.push_str(&format!("  {cell:>w$}"));
        }
        out.push('\n');
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use std::f64::consts::PI;

    #[test]
    fn crmse_zero_for_perfect_estimates() {
        let truth: Vec<f64> = (0..40).map(|k| 0.01 * k as f64).collect();
        let r = circular_rmse(&truth, &truth, &EvalConfig::default()).unwrap();
        assert_eq!(r, 0.0);
    }

    #[test]
    fn crmse_wraps_shortest_arc() {
        let est = [359.0f64.to_radians()];
        let truth = [1.0f64.to_radians()];
        let cfg = EvalConfig::new(0.0).unwrap();
        let r = circular_rmse(&est, &truth, &cfg).unwrap();
        assert_relative_eq!(r, 2.0, epsilon = 1e-9);
    }

    #[test]
    fn crmse_ignores_whole_turns() {
        let truth: Vec<f64> = (0..30).map(|k| 0.05 * k as f64).collect();
        let est: Vec<f64> = truth.iter().map(|t| t + 2.0 * PI).collect();
        let r = circular_rmse(&est, &truth, &EvalConfig::default()).unwrap();
        assert!(r < 1e-9);
    }

    #[test]
    fn crmse_excludes_the_grace_period() {
        // 10 steps, grace 0.1 -> k0 = 2, so step 1 is excluded.
        let mut est = vec![0.0; 10];
        let truth = vec![0.0; 10];
        est[0] = 1.0;
        let r = circular_rmse(&est, &truth, &EvalConfig::default()).unwrap();
        assert_eq!(r, 0.0);
        // With no grace the early error counts.
        let r = circular_rmse(&est, &truth, &EvalConfig::new(0.0).unwrap()).unwrap();
        assert!(r > 0.0);
    }

    #[test]
    fn crmse_ignores_arbitrary_whole_turn_offsets() {
        use rand::{Rng, SeedableRng};
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let cfg = EvalConfig::new(0.0).unwrap();
        for _ in 0..50 {
            let truth: Vec<f64> = (0..12).map(|_| rng.random_range(-3.0..3.0)).collect();
            let est: Vec<f64> = truth
                .iter()
                .map(|t| t + rng.random_range(-0.2..0.2))
                .collect();
            let base = circular_rmse(&est, &truth, &cfg).unwrap();

            let turns_est: i32 = rng.random_range(-3..=3);
            let turns_truth: i32 = rng.random_range(-3..=3);
            let tau = std::f64::consts::TAU;
            let est_shift: Vec<f64> = est.iter().map(|e| e + turns_est as f64 * tau).collect();
            let truth_shift: Vec<f64> =
                truth.iter().map(|t| t + turns_truth as f64 * tau).collect();
            let shifted = circular_rmse(&est_shift, &truth_shift, &cfg).unwrap();
            assert_relative_eq!(base, shifted, epsilon = 1e-8);
        }
    }

    #[test]
    fn crmse_is_symmetric_and_bounded() {
        let est = [2.0, -1.0, 0.5];
        let truth = [-2.9, 1.2, 0.0];
        let cfg = EvalConfig::new(0.0).unwrap();
        let a = circular_rmse(&est, &truth, &cfg).unwrap();
        let b = circular_rmse(&truth, &est, &cfg).unwrap();
        assert_relative_eq!(a, b, epsilon = 1e-12);
        assert!(a <= 180.0);
    }

    #[test]
    fn crmse_rejects_mismatched_lengths() {
        let err = circular_rmse(&[0.0], &[0.0, 0.0], &EvalConfig::default()).unwrap_err();
        assert!(matches!(err, Error::Validation(_)));
    }

    #[test]
    fn summarize_examples() {
        let s = summarize(&[2.0, 2.0, 2.0], "const").unwrap();
        assert_eq!((s.mean, s.std), (2.0, 0.0));
        assert!(!s.single_run);

        let s = summarize(&[1.0, 3.0], "pair").unwrap();
        assert_relative_eq!(s.mean, 2.0);
        assert_relative_eq!(s.std, std::f64::consts::SQRT_2, epsilon = 1e-12);

        let s = summarize(&[5.0], "one").unwrap();
        assert_eq!(s.std, 0.0);
        assert!(s.single_run);
        assert!(s.to_string().contains("single run"));
    }

    #[test]
    fn zero_innovation_sanity_channel() {
        for cond in [
            BenchCondition {
                state_dim: 3,
                obs_dim: 1,
                streams: 2,
            },
            BenchCondition {
                state_dim: 2,
                obs_dim: 2,
                streams: 3,
            },
        ] {
            let gap = bench_zero_innovation_gap(&cond, 20).unwrap();
            assert!(gap < 1e-12, "mean gap {gap}");
        }
    }

    #[test]
    fn timing_benchmark_produces_positive_ratios() {
        let results = timing_benchmark(
            &[BenchCondition {
                state_dim: 4,
                obs_dim: 1,
                streams: 2,
            }],
            &BenchConfig {
                runs: 3,
                steps: 10,
                seed: 1,
            },
        )
        .unwrap();
        assert_eq!(results.len(), 1);
        assert!(results[0].ratio_mean > 0.0);
        assert!(results[0].ratio_median > 0.0);
    }

    #[test]
    fn csv_and_table_render() {
        let mut buf = Vec::new();
        write_crmse_csv(
            &mut buf,
            &[CrmseRow {
                condition: "clean".into(),
                sequence_id: "seq-0".into(),
                crmse_deg: 4.25,
            }],
        )
        .unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert!(text.starts_with("condition,sequence_id,crmse_deg\n"));
        assert!(text.contains("clean,seq-0,4.25"));

        let table = format_summary_table(
            &["clean", "degraded"],
            &[(
                "ekf-fixed".into(),
                vec![
                    summarize(&[2.0, 2.0], "a").unwrap(),
                    summarize(&[3.0, 5.0], "b").unwrap(),
                ],
            )],
        );
        assert!(table.contains("method"));
        assert!(table.contains("ekf-fixed"));
        assert!(table.contains('\u{00b1}'));
    }
}
