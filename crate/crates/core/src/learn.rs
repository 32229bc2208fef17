//! Supervised training of stream-weight predictors from reliability
//! features to oracle weight targets.
//!
//! The shipped predictor is a two-stream logistic model
//! `w_1 = 1 / (1 + exp(zᵀw + b))`; note the positive exponent, so large
//! positive logits map to a *small* first weight.

use nalgebra::DVector;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::filter::StreamWeights;

/// Open-interval clip applied to predicted weights so cross-entropy stays
/// finite under logit overflow.
pub const WEIGHT_CLIP: f64 = 1e-12;

/// Raw logistic model parameters.
#[derive(Clone, Debug, PartialEq)]
pub struct LogisticPredictor {
    pub w: DVector<f64>,
    pub b: f64,
}

impl LogisticPredictor {
    /// Zero-initialized predictor for `dim` features.
    pub fn zeros(dim: usize) -> Self {
        Self {
            w: DVector::zeros(dim),
            b: 0.0,
        }
    }
}

/// Two-stream weights from (already standardized) features.
pub fn predict_weights(z: &DVector<f64>, p: &LogisticPredictor) -> Result<StreamWeights> {
    if z.len() != p.w.len() {
        return Err(Error::Validation(format!(
            "feature vector has dimension {}, predictor expects {}",
            z.len(),
            p.w.len()
        )));
    }
    let logit = z.dot(&p.w) + p.b;
    let first = (1.0 / (1.0 + logit.exp())).clamp(WEIGHT_CLIP, 1.0 - WEIGHT_CLIP);
    Ok(StreamWeights::two_stream(first).expect("clipped weight is in range"))
}

/// Cross-entropy `-sum_m target_m ln pred_m`, with predictions clipped away
/// from the boundary.
pub fn cross_entropy_loss(pred: &StreamWeights, target: &StreamWeights) -> f64 {
    pred.as_slice()
        .iter()
        .zip(target.as_slice())
        .map(|(&p, &t)| -t * p.max(WEIGHT_CLIP).ln())
        .sum()
}

/// Analytic cross-entropy gradient with respect to `(w, b)`.
///
/// With the positive-exponent convention the chain rule collapses to
/// `dL/db = target_1 - pred_1` and `dL/dw = (target_1 - pred_1) z`.
pub fn loss_gradient(
    z: &DVector<f64>,
    p: &LogisticPredictor,
    target: &StreamWeights,
) -> Result<(DVector<f64>, f64)> {
    if target.len() != 2 {
        return Err(Error::Validation(
            "the logistic model predicts two streams".into(),
        ));
    }
    let pred = predict_weights(z, p)?;
    let db = target.as_slice()[0] - pred.as_slice()[0];
    Ok((z * db, db))
}

/// One training example: a feature vector and its oracle weight target.
#[derive(Clone, Debug)]
pub struct TrainingRow {
    pub features: Vec<f64>,
    pub target: StreamWeights,
}

/// Per-feature standardization statistics. A recorded standard deviation of
/// zero flags a constant feature, which passes through unscaled.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct FeatureStats {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

impl FeatureStats {
    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    /// Indices of features flagged as constant.
    pub fn constant_features(&self) -> Vec<usize> {
        self.std
            .iter()
            .enumerate()
            .filter(|(_, &s)| s == 0.0)
            .map(|(i, _)| i)
            .collect()
    }

    /// Standardizes one feature vector.
    pub fn apply(&self, z: &[f64]) -> Result<DVector<f64>> {
        if z.len() != self.dim() {
            return Err(Error::Validation(format!(
                "feature vector has dimension {}, statistics expect {}",
                z.len(),
                self.dim()
            )));
        }
        Ok(DVector::from_iterator(
            z.len(),
            z.iter().enumerate().map(|(i, &v)| {
                if self.std[i] == 0.0 {
                    v
                } else {
                    (v - self.mean[i]) / self.std[i]
                }
            }),
        ))
    }
}

/// Standardized training data with the statistics needed to reuse the same
/// transform at inference time.
#[derive(Clone, Debug)]
pub struct TrainingSet {
    rows: Vec<(DVector<f64>, StreamWeights)>,
    stats: FeatureStats,
}

impl TrainingSet {
    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn feature_dim(&self) -> usize {
        self.stats.dim()
    }

    pub fn stats(&self) -> &FeatureStats {
        &self.stats
    }

    pub fn rows(&self) -> &[(DVector<f64>, StreamWeights)] {
        &self.rows
    }
}

/// Z-scores every feature column and freezes the statistics; zero-variance
/// columns are flagged and left unscaled.
pub fn standardize_features(rows: &[TrainingRow]) -> Result<TrainingSet> {
    if rows.is_empty() {
        return Err(Error::Validation("training set is empty".into()));
    }
    let dim = rows[0].features.len();
    for (i, row) in rows.iter().enumerate() {
        if row.features.len() != dim {
            return Err(Error::Validation(format!(
                "row {i} has {} features, expected {dim}",
                row.features.len()
            )));
        }
        if row.features.iter().any(|f| !f.is_finite()) {
            return Err(Error::InvalidInput(format!(
                "row {i} has non-finite features"
            )));
        }
    }

    // Column sums run over sorted values so the statistics (and therefore
    // the standardized rows) do not depend on input row order.
    let n = rows.len() as f64;
    let mut mean = vec![0.0; dim];
    let mut std = vec![0.0; dim];
    let mut column = Vec::with_capacity(rows.len());
    for j in 0..dim {
        column.clear();
        column.extend(rows.iter().map(|r| r.features[j]));
        column.sort_by(f64::total_cmp);
        let m = column.iter().sum::<f64>() / n;
        let mut deviations: Vec<f64> = column.iter().map(|f| (f - m) * (f - m)).collect();
        deviations.sort_by(f64::total_cmp);
        mean[j] = m;
        std[j] = (deviations.iter().sum::<f64>() / n).sqrt();
    }

    let stats = FeatureStats { mean, std };
    let standardized = rows
        .iter()
        .map(|row| Ok((stats.apply(&row.features)?, row.target.clone())))
        .collect::<Result<Vec<_>>>()?;
    Ok(TrainingSet {
        rows: standardized,
        stats,
    })
}

/// Mini-batch gradient-descent settings.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SgdConfig {
    pub learning_rate: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub seed: u64,
}

impl Default for SgdConfig {
    fn default() -> Self {
        Self {
            learning_rate: 0.05,
            epochs: 200,
            batch_size: 32,
            seed: 0,
        }
    }
}

impl SgdConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::Validation("learning rate must be positive".into()));
        }
        if self.epochs == 0 || self.batch_size == 0 {
            return Err(Error::Validation(
                "epochs and batch size must be positive".into(),
            ));
        }
        Ok(())
    }
}

/// A predictor bundled with its feature statistics; serializes to
/// `{"w":[...],"b":...,"feature_stats":{"mean":[...],"std":[...]}}`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainedPredictor {
    pub w: Vec<f64>,
    pub b: f64,
    pub feature_stats: FeatureStats,
}

impl TrainedPredictor {
    /// Applies the stored standardization, then the logistic model, to raw
    /// features.
    pub fn predict(&self, features: &[f64]) -> Result<StreamWeights> {
        let z = self.feature_stats.apply(features)?;
        let model = LogisticPredictor {
            w: DVector::from_column_slice(&self.w),
            b: self.b,
        };
        predict_weights(&z, &model)
    }
}

/// Training result: the predictor plus the mean cross-entropy after each
/// epoch.
#[derive(Clone, Debug)]
pub struct TrainingReport {
    pub predictor: TrainedPredictor,
    pub epoch_loss: Vec<f64>,
}

fn mean_loss(rows: &[(DVector<f64>, StreamWeights)], p: &LogisticPredictor) -> Result<f64> {
    let mut total = 0.0;
    for (z, target) in rows {
        total += cross_entropy_loss(&predict_weights(z, p)?, target);
    }
    Ok(total / rows.len() as f64)
}

/// Trains the logistic predictor by seeded mini-batch gradient descent on
/// the cross-entropy loss.
///
/// Rows are brought into a canonical order before the seeded shuffle, so
/// the result is independent of input row order and bitwise reproducible
/// per seed.
pub fn train_sgd(data: &TrainingSet, cfg: &SgdConfig) -> Result<TrainingReport> {
    cfg.validate()?;
    if data.is_empty() {
        return Err(Error::Validation("training set is empty".into()));
    }
    if data.rows.iter().any(|(_, t)| t.len() != 2) {
        return Err(Error::Unsupported(
            "the logistic model trains on two-stream targets".into(),
        ));
    }

    let mut order: Vec<usize> = (0..data.len()).collect();
    order.sort_by(|&a, &b| {
        let (za, ta) = &data.rows[a];
        let (zb, tb) = &data.rows[b];
        za.iter()
            .zip(zb.iter())
            .map(|(x, y)| x.total_cmp(y))
            .chain(
                ta.as_slice()
                    .iter()
                    .zip(tb.as_slice())
                    .map(|(x, y)| x.total_cmp(y)),
            )
            .find(|o| !o.is_eq())
            .unwrap_or(std::cmp::Ordering::Equal)
    });

    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut model = LogisticPredictor::zeros(data.feature_dim());
    let mut epoch_loss = Vec::with_capacity(cfg.epochs);

    for epoch in 0..cfg.epochs {
        order.shuffle(&mut rng);
        for batch in order.chunks(cfg.batch_size) {
            let mut grad_w = DVector::zeros(data.feature_dim());
            let mut grad_b = 0.0;
            for &i in batch {
                let (z, target) = &data.rows[i];
                let (gw, gb) = loss_gradient(z, &model, target)?;
                grad_w += gw;
                grad_b += gb;
            }
            let scale = cfg.learning_rate / batch.len() as f64;
            model.w -= grad_w * scale;
            model.b -= grad_b * scale;
        }
        let loss = mean_loss(&data.rows, &model)?;
        if !loss.is_finite() {
            return Err(Error::Training(format!(
                "loss became non-finite at epoch {epoch}; try a smaller learning rate"
            )));
        }
        epoch_loss.push(loss);
    }

    Ok(TrainingReport {
        predictor: TrainedPredictor {
            w: model.w.iter().cloned().collect(),
            b: model.b,
            feature_stats: data.stats().clone(),
        },
        epoch_loss,
    })
}
