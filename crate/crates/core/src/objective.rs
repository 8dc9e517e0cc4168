//! Untargeted and targeted margin objectives over a response map, and the
//! clean reference run that supplies the per-frame reference box.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::frame::Frame;
use crate::geometry::{iou, BBox, Point};
use crate::tracker::{predict, ResponseMap, TrackerState};

/// Center distance below which a frame counts as tracked or as a targeted hit.
pub const SUCCESS_RADIUS: f64 = 20.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ObjectiveKind {
    Ua,
    Ta,
}

impl ObjectiveKind {
    pub fn name(&self) -> &'static str {
        match self {
            ObjectiveKind::Ua => "ua",
            ObjectiveKind::Ta => "ta",
        }
    }
}

/// Margin value with the two candidates it was read from.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ObjectiveEval {
    pub value: f64,
    pub gt_index: usize,
    pub adversary_index: usize,
}

impl ObjectiveEval {
    /// Dense weights: `+1` on the reference candidate, `−1` on the adversary.
    pub fn weights(&self, n: usize) -> Vec<f64> {
        let mut w = vec![0.0; n];
        if self.gt_index != self.adversary_index {
            w[self.gt_index] = 1.0;
            w[self.adversary_index] = -1.0;
        }
        w
    }

    pub fn succeeded(&self) -> bool {
        self.value < 0.0
    }
}

/// `y_gt − max{ y_i : iou(b_i, gt) = 0 }`.
pub fn f_ua(response: &ResponseMap, gt_box: &BBox) -> Result<ObjectiveEval> {
    let gt_index = response.nearest_to_box(gt_box);
    let mut adversary: Option<usize> = None;
    for (i, &y) in response.activations.iter().enumerate() {
        if iou(&response.candidate(i), gt_box) == 0.0
            && adversary.map_or(true, |a| y > response.activations[a])
        {
            adversary = Some(i);
        }
    }
    let adversary_index = adversary.ok_or(Error::NoDisjointCandidate)?;
    Ok(ObjectiveEval {
        value: response.activations[gt_index] - response.activations[adversary_index],
        gt_index,
        adversary_index,
    })
}

/// `y_gt − y_target`, the target being the candidate centered nearest `p_tr`.
pub fn f_ta(response: &ResponseMap, gt_box: &BBox, p_tr: Point) -> Result<ObjectiveEval> {
    let gt_index = response.nearest_to_box(gt_box);
    let adversary_index = response.nearest_to_point(p_tr);
    let reach = (response.cand_w.powi(2) + response.cand_h.powi(2)).sqrt() / 2.0;
    if response.candidate(adversary_index).center().dist(p_tr) > reach {
        return Err(Error::TargetOutsideRegion);
    }
    Ok(ObjectiveEval {
        value: response.activations[gt_index] - response.activations[adversary_index],
        gt_index,
        adversary_index,
    })
}

/// Targeted hit: predicted center strictly within [`SUCCESS_RADIUS`] of the target.
pub fn ta_success(pred: &BBox, target: Point) -> bool {
    pred.center().dist(target) < SUCCESS_RADIUS
}

/// Untargeted hit: prediction disjoint from the reference box.
pub fn ua_success(pred: &BBox, reference: &BBox) -> bool {
    iou(pred, reference) == 0.0
}

/// Predictions of an unattacked tracker, one per frame.
#[derive(Debug, Clone, PartialEq)]
pub struct CleanReference {
    pub boxes: Vec<BBox>,
    pub peaks: Vec<f64>,
    pub peak_indices: Vec<usize>,
}

impl CleanReference {
    /// Tracks every frame starting from an initialized state.
    pub fn run(mut state: TrackerState, frames: &[Frame]) -> Result<Self> {
        let mut out = CleanReference {
            boxes: Vec::with_capacity(frames.len()),
            peaks: Vec::with_capacity(frames.len()),
            peak_indices: Vec::with_capacity(frames.len()),
        };
        for frame in frames {
            let (region, origin) = state.search_region(frame);
            let resp = state.respond(&region, origin)?;
            let (b, y, i) = predict(&resp);
            state.prev_box = b;
            out.boxes.push(b);
            out.peaks.push(y);
            out.peak_indices.push(i);
        }
        Ok(out)
    }
}
