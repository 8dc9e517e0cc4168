//! Attack machinery shared by the single-frame baselines and the incremental
//! attack: differentiable objectives over a search region, the per-video
//! online loop, and per-frame records.

pub mod basic;
pub mod spark;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::frame::{apply, crop_rect, embed_add, inside_mask, Frame, Grid, Rect, PIXEL_MAX};
use crate::geometry::{cle, BBox, Point};
use crate::objective::{f_ta, f_ua, ta_success, ua_success, CleanReference, ObjectiveEval, ObjectiveKind};
use crate::scene::Video;
use crate::tracker::{predict, TrackerState};

/// Differentiable scalar objective over a region-shaped perturbation.
pub trait Objective {
    fn shape(&self) -> (usize, usize, usize);

    /// Value and gradient at `delta`.
    fn eval(&mut self, delta: &Grid) -> Result<(f64, Grid)>;

    /// Projects `delta` onto the feasible set.
    fn project(&self, delta: &mut Grid, budget: f64) {
        delta.data_mut().iter_mut().for_each(|v| *v = v.clamp(-budget, budget));
    }
}

/// Sign with `sign(0) = 0`.
#[inline]
pub fn sign(v: f64) -> f64 {
    if v > 0.0 {
        1.0
    } else if v < 0.0 {
        -1.0
    } else {
        0.0
    }
}

/// Margin objective read from the attacker's tracker on one search region.
///
/// The region is `crop(frame) + prior` with out-of-frame cells mean-padded;
/// perturbations and gradients are zero on those cells.
pub struct RegionObjective<'a> {
    tracker: &'a TrackerState,
    clean: Grid,
    base: Grid,
    mask: Vec<bool>,
    origin: Point,
    kind: ObjectiveKind,
    gt_box: BBox,
    target: Option<Point>,
    pub last: Option<ObjectiveEval>,
}

impl<'a> RegionObjective<'a> {
    pub fn new(
        tracker: &'a TrackerState,
        frame: &Grid,
        rect: Rect,
        prior: Option<&Grid>,
        kind: ObjectiveKind,
        gt_box: BBox,
        target: Option<Point>,
    ) -> Result<Self> {
        if kind == ObjectiveKind::Ta && target.is_none() {
            return Err(Error::ConfigInvalid("targeted objective needs a target".into()));
        }
        let clean = crop_rect(frame, &rect, Some(&frame.channel_means()));
        let mask = inside_mask(frame.height(), frame.width(), &rect);
        let mut base = clean.clone();
        if let Some(p) = prior {
            base.check_same_shape(p)?;
            let c = base.channels();
            for (i, v) in base.data_mut().iter_mut().enumerate() {
                if mask[i / c] {
                    *v += p.data()[i];
                }
            }
        }
        Ok(Self {
            tracker,
            clean,
            base,
            mask,
            origin: Point::new(rect.x0 as f64, rect.y0 as f64),
            kind,
            gt_box,
            target,
            last: None,
        })
    }

    pub fn clean(&self) -> &Grid {
        &self.clean
    }

    pub fn mask(&self) -> &[bool] {
        &self.mask
    }

    fn region(&self, delta: &Grid) -> Result<Grid> {
        self.base.check_same_shape(delta)?;
        let c = self.base.channels();
        let mut r = self.base.clone();
        for (i, v) in r.data_mut().iter_mut().enumerate() {
            if self.mask[i / c] {
                *v += delta.data()[i];
            }
        }
        Ok(r)
    }

    /// Objective without the gradient.
    pub fn value(&mut self, delta: &Grid) -> Result<ObjectiveEval> {
        let region = self.region(delta)?;
        self.value_of(&region)
    }

    fn value_of(&mut self, region: &Grid) -> Result<ObjectiveEval> {
        let resp = self.tracker.respond(region, self.origin)?;
        let e = match self.kind {
            ObjectiveKind::Ua => f_ua(&resp, &self.gt_box)?,
            ObjectiveKind::Ta => f_ta(&resp, &self.gt_box, self.target.expect("checked in new"))?,
        };
        self.last = Some(e);
        Ok(e)
    }

    /// Zeroes entries outside the frame.
    pub fn mask_grid(&self, g: &mut Grid) {
        let c = g.channels();
        for (i, v) in g.data_mut().iter_mut().enumerate() {
            if !self.mask[i / c] {
                *v = 0.0;
            }
        }
    }
}

impl Objective for RegionObjective<'_> {
    fn shape(&self) -> (usize, usize, usize) {
        self.base.shape()
    }

    fn eval(&mut self, delta: &Grid) -> Result<(f64, Grid)> {
        let region = self.region(delta)?;
        let e = self.value_of(&region)?;
        let n = {
            let (th, tw) = self.tracker.template_size();
            (region.height() - th + 1) * (region.width() - tw + 1)
        };
        let mut g = self.tracker.grad_activations(&region, &e.weights(n))?;
        self.mask_grid(&mut g);
        if !g.is_finite() {
            return Err(Error::NonFiniteGradient);
        }
        Ok((e.value, g))
    }

    /// Budget clip, then keeps `base + delta` inside the pixel range.
    fn project(&self, delta: &mut Grid, budget: f64) {
        let c = self.base.channels();
        for (i, v) in delta.data_mut().iter_mut().enumerate() {
            if !self.mask[i / c] {
                *v = 0.0;
                continue;
            }
            let b = self.base.data()[i];
            *v = v.clamp(-budget, budget).clamp(-b, PIXEL_MAX - b);
        }
    }
}

/// Outcome of optimizing one frame.
#[derive(Debug, Clone, PartialEq)]
pub struct FrameAttackResult {
    /// Region-shaped perturbation.
    pub perturbation: Grid,
    pub iterations: usize,
    /// Objective values seen before each step, plus the exit value if any.
    pub trace: Vec<f64>,
    pub succeeded: bool,
    pub error: Option<String>,
}

impl FrameAttackResult {
    pub fn final_objective(&self) -> Option<f64> {
        self.trace.last().copied()
    }

    pub fn failed(shape: (usize, usize, usize), err: &Error) -> Self {
        Self {
            perturbation: Grid::zeros(shape.0, shape.1, shape.2),
            iterations: 0,
            trace: Vec::new(),
            succeeded: false,
            error: Some(err.to_string()),
        }
    }
}

/// Everything an attack policy sees at frame `t`.
pub struct FrameInput<'a> {
    pub t: usize,
    pub frame: &'a Frame,
    /// Region the perturbation is optimized on, in frame coordinates.
    pub rect: Rect,
    pub attacker: &'a TrackerState,
    /// Clean-run prediction of the attacker's tracker.
    pub gt_box: BBox,
    pub target: Option<Point>,
    pub kind: ObjectiveKind,
}

impl FrameInput<'_> {
    pub fn objective(&self, prior: Option<&Grid>) -> Result<RegionObjective<'_>> {
        RegionObjective::new(
            self.attacker,
            self.frame.grid(),
            self.rect,
            prior,
            self.kind,
            self.gt_box,
            self.target,
        )
    }
}

/// What a policy applies to a frame.
#[derive(Debug, Clone)]
pub struct FrameOutput {
    /// Frame-shaped perturbation added before clipping to the pixel range.
    pub applied: Grid,
    pub iterations: usize,
    pub attacked: bool,
    pub anchor: bool,
    pub trace: Vec<f64>,
    pub error: Option<String>,
    pub increment_mean_abs: Option<f64>,
    pub buffer_len: Option<usize>,
}

impl FrameOutput {
    pub fn untouched(shape: (usize, usize, usize)) -> Self {
        Self {
            applied: Grid::zeros(shape.0, shape.1, shape.2),
            iterations: 0,
            attacked: false,
            anchor: false,
            trace: Vec::new(),
            error: None,
            increment_mean_abs: None,
            buffer_len: None,
        }
    }
}

/// Online per-frame perturbation strategy.
pub trait FramePolicy {
    fn step(&mut self, input: &FrameInput) -> FrameOutput;
}

/// Policy that never perturbs.
pub struct NoAttack;

impl FramePolicy for NoAttack {
    fn step(&mut self, input: &FrameInput) -> FrameOutput {
        FrameOutput::untouched(input.frame.shape())
    }
}

/// Which tracker's previous prediction places the attack region.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RegionSource {
    Victim,
    Attacker,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FrameRecord {
    pub t: usize,
    pub pred: BBox,
    pub gt: BBox,
    pub clean: BBox,
    pub target: Option<Point>,
    pub cle_gt: f64,
    pub cle_target: Option<f64>,
    pub ua_success: bool,
    pub ta_success: Option<bool>,
    pub objective: Option<f64>,
    pub iterations: usize,
    pub attacked: bool,
    pub anchor: bool,
    /// Mean |applied| over the search region's pixels and channels.
    pub mean_abs_pert: f64,
    /// Mean |applied| over the whole frame.
    pub mean_abs_pert_frame: f64,
    pub increment_mean_abs: Option<f64>,
    pub buffer_len: Option<usize>,
    pub error: Option<String>,
    pub objective_trace: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AttackRun {
    pub frames: Vec<FrameRecord>,
}

impl AttackRun {
    pub fn preds(&self) -> Vec<BBox> {
        self.frames.iter().map(|f| f.pred).collect()
    }

    pub fn mean_iterations(&self) -> f64 {
        self.frames.iter().map(|f| f.iterations as f64).sum::<f64>() / self.frames.len().max(1) as f64
    }
}

/// Inputs of one online attack over a video.
pub struct Episode<'a> {
    pub video: &'a Video,
    pub victim: TrackerState,
    pub attacker: TrackerState,
    /// Clean run of the attacker's tracker.
    pub reference: &'a CleanReference,
    pub targets: Option<&'a [Point]>,
    pub kind: ObjectiveKind,
    pub region_source: RegionSource,
}

impl Episode<'_> {
    /// Runs the policy frame by frame; optionally keeps every applied grid.
    pub fn run(mut self, policy: &mut dyn FramePolicy, keep: bool) -> Result<(AttackRun, Vec<Grid>)> {
        let mut frames = Vec::with_capacity(self.video.len());
        let mut kept = Vec::new();
        for (t, frame) in self.video.frames.iter().enumerate() {
            let locator = match self.region_source {
                RegionSource::Victim => &self.victim,
                RegionSource::Attacker => &self.attacker,
            };
            // attacker geometry centered where the locator last saw the object
            let rect = self.attacker.region_rect(&locator.prev_box);
            let gt_box = self.reference.boxes[t];
            let target = self.targets.map(|p| p[t]);
            let out = policy.step(&FrameInput {
                t,
                frame,
                rect,
                attacker: &self.attacker,
                gt_box,
                target,
                kind: self.kind,
            });
            let perturbed = apply(frame, &out.applied)?;
            let (region, origin) = self.victim.search_region(&perturbed);
            let (pred, _, _) = predict(&self.victim.respond(&region, origin)?);
            self.victim.prev_box = pred;
            if self.region_source == RegionSource::Attacker {
                let (region, origin) = self.attacker.search_region(&perturbed);
                self.attacker.prev_box = predict(&self.attacker.respond(&region, origin)?).0;
            }
            let (h, w, c) = frame.shape();
            let sum_abs = out.applied.sum_abs();
            frames.push(FrameRecord {
                t,
                pred,
                gt: self.video.gt[t],
                clean: gt_box,
                target,
                cle_gt: cle(&pred, &self.video.gt[t]),
                cle_target: target.map(|p| pred.center().dist(p)),
                ua_success: ua_success(&pred, &gt_box),
                ta_success: target.map(|p| ta_success(&pred, p)),
                objective: out.trace.last().copied(),
                iterations: out.iterations,
                attacked: out.attacked,
                anchor: out.anchor,
                mean_abs_pert: sum_abs / (rect.w * rect.h * c) as f64,
                mean_abs_pert_frame: sum_abs / (h * w * c) as f64,
                increment_mean_abs: out.increment_mean_abs,
                buffer_len: out.buffer_len,
                error: out.error,
                objective_trace: out.trace,
            });
            if keep {
                kept.push(out.applied);
            }
        }
        Ok((AttackRun { frames }, kept))
    }
}

/// Frame-shaped grid holding `patch` at `rect`.
pub fn to_frame(shape: (usize, usize, usize), rect: &Rect, patch: &Grid) -> Grid {
    let mut g = Grid::zeros(shape.0, shape.1, shape.2);
    embed_add(&mut g, rect, patch);
    g
}

/// Frame-shaped copy of `g` restricted to `rect`.
pub fn restrict(g: &Grid, rect: &Rect) -> Grid {
    to_frame(g.shape(), rect, &crop_rect(g, rect, None))
}
