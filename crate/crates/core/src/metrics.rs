//! Training loss and trajectory error metrics.

use std::io::{Read, Write};

use thiserror::Error;

use crate::scene::{Trajectory, FRAME_DT};

#[derive(Debug, Error)]
pub enum MetricsError {
    #[error("length mismatch: prediction has {pred} points, truth has {truth}")]
    LengthMismatch { pred: usize, truth: usize },
    #[error("no samples to evaluate")]
    EmptySet,
    #[error("horizon index {j} outside 1..={len}")]
    HorizonOutOfRange { j: usize, len: usize },
    #[error("huber delta must be positive, got {0}")]
    InvalidDelta(f64),
    #[error("report csv: {0}")]
    Csv(#[from] csv::Error),
    #[error("report csv row {row}: {message}")]
    Format { row: usize, message: String },
}

/// Which quantity selects the quadratic or linear branch.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum HuberMode {
    /// One branch for the whole stacked error vector, chosen by its L1 norm.
    #[default]
    Global,
    /// Element-wise Huber averaged over coordinates.
    PerCoordinate,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HuberParams {
    /// Threshold in meters.
    pub delta: f64,
    pub mode: HuberMode,
}

impl Default for HuberParams {
    fn default() -> Self {
        Self {
            delta: 1.0,
            mode: HuberMode::Global,
        }
    }
}

/// `[x1, y1, x2, y2, ...]`.
pub fn stack(t: &Trajectory) -> Vec<f64> {
    t.points.iter().flat_map(|p| [p.x, p.y]).collect()
}

fn check_len(pred: usize, truth: usize) -> Result<(), MetricsError> {
    if pred != truth {
        return Err(MetricsError::LengthMismatch { pred, truth });
    }
    Ok(())
}

/// Huber loss between two stacked coordinate vectors.
pub fn huber_vec(pred: &[f64], truth: &[f64], params: &HuberParams) -> Result<f64, MetricsError> {
    check_len(pred.len(), truth.len())?;
    let delta = params.delta;
    if !(delta > 0.0) {
        return Err(MetricsError::InvalidDelta(delta));
    }
    let diff = pred.iter().zip(truth).map(|(a, b)| a - b);
    Ok(match params.mode {
        HuberMode::Global => {
            let l1: f64 = diff.clone().map(f64::abs).sum();
            if l1 <= delta {
                0.5 * diff.map(|d| d * d).sum::<f64>()
            } else {
                delta * (l1 - delta / 2.0)
            }
        }
        HuberMode::PerCoordinate => {
            if pred.is_empty() {
                return Ok(0.0);
            }
            let total: f64 = diff
                .map(|d| {
                    let a = d.abs();
                    if a <= delta {
                        0.5 * d * d
                    } else {
                        delta * (a - delta / 2.0)
                    }
                })
                .sum();
            total / pred.len() as f64
        }
    })
}

pub fn huber_loss(pred: &Trajectory, truth: &Trajectory, params: &HuberParams) -> Result<f64, MetricsError> {
    check_len(pred.len(), truth.len())?;
    huber_vec(&stack(pred), &stack(truth), params)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Axis {
    Longitudinal,
    Lateral,
}

fn squared_errors_at(
    preds: &[Trajectory],
    truths: &[Trajectory],
    horizon_j: usize,
) -> Result<Vec<(f64, f64)>, MetricsError> {
    check_len(preds.len(), truths.len())?;
    if preds.is_empty() {
        return Err(MetricsError::EmptySet);
    }
    preds
        .iter()
        .zip(truths)
        .map(|(p, t)| {
            check_len(p.len(), t.len())?;
            if horizon_j == 0 || horizon_j > p.len() {
                return Err(MetricsError::HorizonOutOfRange { j: horizon_j, len: p.len() });
            }
            let d = p.points[horizon_j - 1] - t.points[horizon_j - 1];
            Ok((d.x * d.x, d.y * d.y))
        })
        .collect()
}

/// Displacement RMSE at step `horizon_j` (1-based), squared errors averaged
/// over samples before the root.
pub fn rmse_combined(preds: &[Trajectory], truths: &[Trajectory], horizon_j: usize) -> Result<f64, MetricsError> {
    let sq = squared_errors_at(preds, truths, horizon_j)?;
    Ok((sq.iter().map(|(x, y)| x + y).sum::<f64>() / sq.len() as f64).sqrt())
}

/// Single-axis RMSE at step `horizon_j` (1-based).
pub fn rmse_axis(preds: &[Trajectory], truths: &[Trajectory], axis: Axis, horizon_j: usize) -> Result<f64, MetricsError> {
    let sq = squared_errors_at(preds, truths, horizon_j)?;
    let pick = |&(x, y): &(f64, f64)| match axis {
        Axis::Longitudinal => x,
        Axis::Lateral => y,
    };
    Ok((sq.iter().map(pick).sum::<f64>() / sq.len() as f64).sqrt())
}

/// Per-trajectory RMSE over all steps: `sqrt(1/p * sum_j |pred_j - truth_j|^2)`.
pub fn trajectory_rmse(pred: &Trajectory, truth: &Trajectory) -> Result<f64, MetricsError> {
    check_len(pred.len(), truth.len())?;
    if pred.is_empty() {
        return Err(MetricsError::EmptySet);
    }
    let sum: f64 = pred
        .points
        .iter()
        .zip(&truth.points)
        .map(|(a, b)| {
            let d = *a - *b;
            d.dot(d)
        })
        .sum();
    Ok((sum / pred.len() as f64).sqrt())
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RmseRow {
    pub horizon_s: f64,
    pub rmse_x: f64,
    pub rmse_y: f64,
    pub rmse_r: f64,
}

/// Errors at whole-second horizons.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct RmseReport {
    pub rows: Vec<RmseRow>,
}

pub const REPORT_HEADER: [&str; 4] = ["horizon_s", "rmse_x", "rmse_y", "rmse_r"];

impl RmseReport {
    /// Rows for 1 s, 2 s, ... up to the shortest trajectory, at most `max_s`.
    pub fn compute(preds: &[Trajectory], truths: &[Trajectory], max_s: usize) -> Result<Self, MetricsError> {
        check_len(preds.len(), truths.len())?;
        let len = preds.iter().map(Trajectory::len).min().ok_or(MetricsError::EmptySet)?;
        let per_second = (1.0 / FRAME_DT).round() as usize;
        let rows = (1..=max_s)
            .map(|s| (s, s * per_second))
            .take_while(|&(_, j)| j <= len)
            .map(|(s, j)| {
                Ok(RmseRow {
                    horizon_s: s as f64,
                    rmse_x: rmse_axis(preds, truths, Axis::Longitudinal, j)?,
                    rmse_y: rmse_axis(preds, truths, Axis::Lateral, j)?,
                    rmse_r: rmse_combined(preds, truths, j)?,
                })
            })
            .collect::<Result<Vec<_>, MetricsError>>()?;
        Ok(Self { rows })
    }

    pub fn write_csv<W: Write>(&self, out: W) -> Result<(), MetricsError> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(REPORT_HEADER)?;
        for r in &self.rows {
            w.write_record([r.horizon_s, r.rmse_x, r.rmse_y, r.rmse_r].map(|v| v.to_string()))?;
        }
        w.flush().map_err(csv::Error::from)?;
        Ok(())
    }

    pub fn read_csv<R: Read>(input: R) -> Result<Self, MetricsError> {
        let mut rdr = csv::Reader::from_reader(input);
        let header = rdr.headers()?.clone();
        if header.iter().map(str::trim).ne(REPORT_HEADER) {
            return Err(MetricsError::Format {
                row: 1,
                message: format!("expected header {}", REPORT_HEADER.join(",")),
            });
        }
        let mut rows = Vec::new();
        for (idx, rec) in rdr.records().enumerate() {
            let rec = rec?;
            let row = idx + 2;
            let v: Vec<f64> = rec
                .iter()
                .map(|s| {
                    s.trim().parse::<f64>().map_err(|_| MetricsError::Format {
                        row,
                        message: format!("`{s}` is not a number"),
                    })
                })
                .collect::<Result<_, _>>()?;
            rows.push(RmseRow {
                horizon_s: v[0],
                rmse_x: v[1],
                rmse_y: v[2],
                rmse_r: v[3],
            });
        }
        Ok(Self { rows })
    }
}
