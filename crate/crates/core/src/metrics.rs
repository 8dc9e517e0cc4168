//! Precision, targeted success rate and mean absolute perturbation.

use serde::{Deserialize, Serialize};

use crate::attack::AttackRun;
use crate::error::{Error, Result};
use crate::geometry::{cle, BBox, Point};
use crate::objective::SUCCESS_RADIUS;

/// Fraction of frames whose center error is below `threshold`.
pub fn precision(preds: &[BBox], annotations: &[BBox], threshold: f64) -> Result<f64> {
    if preds.len() != annotations.len() {
        return Err(Error::LengthMismatch(preds.len(), annotations.len()));
    }
    if preds.is_empty() {
        return Ok(0.0);
    }
    let hits = preds
        .iter()
        .zip(annotations)
        .filter(|(p, a)| cle(p, a) < threshold)
        .count();
    Ok(hits as f64 / preds.len() as f64)
}

/// Fraction of frames whose predicted center is within `threshold` of the target.
pub fn succ_rate(preds: &[BBox], targets: &[Point], threshold: f64) -> Result<f64> {
    if preds.len() != targets.len() {
        return Err(Error::LengthMismatch(preds.len(), targets.len()));
    }
    if preds.is_empty() {
        return Ok(0.0);
    }
    let hits = preds
        .iter()
        .zip(targets)
        .filter(|(p, t)| p.center().dist(**t) < threshold)
        .count();
    Ok(hits as f64 / preds.len() as f64)
}

/// Nested mean: per-frame means (already normalized by pixels and channels)
/// averaged over frames, then over videos.
pub fn map(per_video_frame_means: &[Vec<f64>]) -> f64 {
    if per_video_frame_means.is_empty() {
        return 0.0;
    }
    per_video_frame_means
        .iter()
        .map(|v| v.iter().sum::<f64>() / v.len().max(1) as f64)
        .sum::<f64>()
        / per_video_frame_means.len() as f64
}

/// Per-frame mean |E| over `M·C` values of a raw perturbation.
pub fn frame_mean_abs(values: &[f64], m: usize, c: usize) -> f64 {
    values.iter().map(|v| v.abs()).sum::<f64>() / (m * c) as f64
}

/// How MAP normalizes a frame's perturbation.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MapMode {
    /// Divide by the search-region pixel count.
    #[default]
    Region,
    /// Divide by the frame pixel count.
    Frame,
}

/// Per-run summary.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunMetrics {
    pub precision: f64,
    pub precision_clean: f64,
    pub prec_drop: f64,
    pub succ_rate: Option<f64>,
    pub map: f64,
    pub mean_iterations: f64,
    pub failed_frames: usize,
}

impl RunMetrics {
    pub fn from_run(run: &AttackRun, clean_precision: f64, mode: MapMode) -> Result<Self> {
        let preds = run.preds();
        let gt: Vec<BBox> = run.frames.iter().map(|f| f.gt).collect();
        let p = precision(&preds, &gt, SUCCESS_RADIUS)?;
        let targets: Option<Vec<Point>> = run.frames.iter().map(|f| f.target).collect();
        let sr = match targets {
            Some(t) if !t.is_empty() => Some(succ_rate(&preds, &t, SUCCESS_RADIUS)?),
            _ => None,
        };
        let per_frame: Vec<f64> = run
            .frames
            .iter()
            .map(|f| match mode {
                MapMode::Region => f.mean_abs_pert,
                MapMode::Frame => f.mean_abs_pert_frame,
            })
            .collect();
        Ok(Self {
            precision: p,
            precision_clean: clean_precision,
            prec_drop: clean_precision - p,
            succ_rate: sr,
            map: map(&[per_frame]),
            mean_iterations: run.mean_iterations(),
            failed_frames: run.frames.iter().filter(|f| f.error.is_some()).count(),
        })
    }
}
