//! JSON Lines serialization for sequence records, per-step weights and
//! belief trajectories, plus an atomic file-write helper.
//!
//! A sequence line looks like
//! `{"k":1,"x":[phi,phidot],"y":{"audio":[c,s],"video":null},"z":[f1,f2]}`;
//! estimate lines are `{"k":1,"mean":[...],"cov":[...],"weights":[...]}`
//! with the covariance in row-major order, and weight lines are
//! `{"k":1,"weights":[...]}`.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::Path;

use nalgebra::DVector;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::filter::{StepEstimate, StreamWeights};
use crate::sim::{SequenceRecord, SimStep};

#[derive(Serialize, Deserialize)]
struct StepLine {
    k: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    x: Option<Vec<f64>>,
    y: BTreeMap<String, Option<Vec<f64>>>,
    z: Vec<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    weights: Option<Vec<f64>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    estimate: Option<Vec<f64>>,
}

#[derive(Serialize, Deserialize)]
struct WeightsLine {
    k: usize,
    weights: Vec<f64>,
}

#[derive(Serialize, Deserialize)]
struct EstimateLine {
    k: usize,
    mean: Vec<f64>,
    cov: Vec<f64>,
    weights: Vec<f64>,
}

fn parse_error(line_no: usize, err: impl std::fmt::Display) -> Error {
    Error::InvalidInput(format!("line {line_no}: {err}"))
}

/// Writes a sequence record as JSON Lines.
pub fn write_sequence<W: Write>(writer: &mut W, record: &SequenceRecord) -> Result<()> {
    for step in &record.steps {
        let y: BTreeMap<String, Option<Vec<f64>>> = record
            .labels
            .iter()
            .cloned()
            .zip(
                step.observations
                    .iter()
                    .map(|o| o.as_ref().map(|v| v.iter().cloned().collect())),
            )
            .collect();
        let line = StepLine {
            k: step.step,
            x: step.state.as_ref().map(|v| v.iter().cloned().collect()),
            y,
            z: step.features.clone(),
            weights: step.weights.clone(),
            estimate: step.estimate.as_ref().map(|v| v.iter().cloned().collect()),
        };
        serde_json::to_writer(&mut *writer, &line)
            .map_err(|e| Error::Numerical(format!("serialization failed: {e}")))?;
        writeln!(writer).map_err(|e| Error::Numerical(format!("write failed: {e}")))?;
    }
    Ok(())
}

/// Reads a sequence record from JSON Lines, aligning observations with the
/// given stream-label order.
pub fn read_sequence<R: Read>(reader: R, labels: &[String]) -> Result<SequenceRecord> {
    let mut steps = Vec::new();
    for (idx, line) in BufReader::new(reader).lines().enumerate() {
        let line_no = idx + 1;
        let line = line.map_err(|e| parse_error(line_no, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let parsed: StepLine = serde_json::from_str(&line).map_err(|e| parse_error(line_no, e))?;
        let mut observations = Vec::with_capacity(labels.len());
        for label in labels {
            let slot = parsed.y.get(label).ok_or_else(|| {
                parse_error(
                    line_no,
                    format!("missing stream '{label}' in observation object"),
                )
            })?;
            observations.push(slot.as_ref().map(|v| DVector::from_column_slice(v)));
        }
        steps.push(SimStep {
            step: parsed.k,
            state: parsed.x.map(DVector::from_vec),
            observations,
            features: parsed.z,
            weights: parsed.weights,
            estimate: parsed.estimate.map(DVector::from_vec),
        });
    }
    if steps.is_empty() {
        return Err(Error::InvalidInput("sequence file is empty".into()));
    }
    Ok(SequenceRecord {
        labels: labels.to_vec(),
        steps,
    })
}

/// Reads a sequence record, taking the stream order from the first line's
/// observation keys (alphabetical).
pub fn read_sequence_auto<R: Read>(reader: R) -> Result<SequenceRecord> {
    let mut content = String::new();
    BufReader::new(reader)
        .read_to_string(&mut content)
        .map_err(|e| parse_error(1, e))?;
    let first = content
        .lines()
        .find(|l| !l.trim().is_empty())
        .ok_or_else(|| Error::InvalidInput("sequence file is empty".into()))?;
    let parsed: StepLine = serde_json::from_str(first).map_err(|e| parse_error(1, e))?;
    let labels: Vec<String> = parsed.y.keys().cloned().collect();
    read_sequence(content.as_bytes(), &labels)
}

/// Writes per-step weights as JSON Lines.
pub fn write_weights<W: Write>(writer: &mut W, weights: &[StreamWeights]) -> Result<()> {
    for (idx, w) in weights.iter().enumerate() {
        let line = WeightsLine {
            k: idx + 1,
            weights: w.as_slice().to_vec(),
        };
        serde_json::to_writer(&mut *writer, &line)
            .map_err(|e| Error::Numerical(format!("serialization failed: {e}")))?;
        writeln!(writer).map_err(|e| Error::Numerical(format!("write failed: {e}")))?;
    }
    Ok(())
}

/// Reads per-step weights from JSON Lines, validating each simplex point.
pub fn read_weights<R: Read>(reader: R) -> Result<Vec<StreamWeights>> {
    let mut out = Vec::new();
    for (idx, line) in BufReader::new(reader).lines().enumerate() {
        let line_no = idx + 1;
        let line = line.map_err(|e| parse_error(line_no, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let parsed: WeightsLine =
            serde_json::from_str(&line).map_err(|e| parse_error(line_no, e))?;
        out.push(StreamWeights::new(parsed.weights).map_err(|e| e.at_step(parsed.k))?);
    }
    Ok(out)
}

/// Writes a belief trajectory as JSON Lines.
pub fn write_estimates<W: Write>(writer: &mut W, estimates: &[StepEstimate]) -> Result<()> {
    for est in estimates {
        let line = EstimateLine {
            k: est.step,
            mean: est.belief.mean().iter().cloned().collect(),
            cov: est
                .belief
                .cov()
                .row_iter()
                .flat_map(|r| r.iter().cloned().collect::<Vec<_>>())
                .collect(),
            weights: est.weights.as_slice().to_vec(),
        };
        serde_json::to_writer(&mut *writer, &line)
            .map_err(|e| Error::Numerical(format!("serialization failed: {e}")))?;
        writeln!(writer).map_err(|e| Error::Numerical(format!("write failed: {e}")))?;
    }
    Ok(())
}

/// Writes a file atomically: the content goes to a temporary sibling first,
/// which is renamed over the target on success.
pub fn write_atomic(
    path: &Path,
    write: impl FnOnce(&mut BufWriter<File>) -> Result<()>,
) -> Result<()> {
    let tmp = path.with_extension("tmp");
    let io_err = |e: std::io::Error| Error::Validation(format!("{}: {e}", tmp.display()));
    let file = File::create(&tmp).map_err(io_err)?;
    let mut writer = BufWriter::new(file);
    match write(&mut writer).and_then(|()| writer.flush().map_err(io_err)) {
        Ok(()) => std::fs::rename(&tmp, path)
            .map_err(|e| Error::Validation(format!("{}: {e}", path.display()))),
        Err(e) => {
            let _ = std::fs::remove_file(&tmp);
            Err(e)
        }
    }
}
