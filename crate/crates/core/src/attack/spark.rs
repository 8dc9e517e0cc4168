//! Online incremental attack with spatial-temporal group sparsity.
//!
//! Each frame optimizes a small increment `ε_t` on top of the running
//! perturbation `E_{t−1}`; the increments of a round form the columns of a
//! matrix whose rows (pixel-channel positions) are penalized with the L2,1
//! norm. Every `reset_interval` frames the buffer is cleared and a longer
//! optimization starts a new round.

use serde::{Deserialize, Serialize};

use super::{sign, to_frame, FrameInput, FrameOutput, FramePolicy, Objective, RegionObjective};
use crate::error::{Error, Result};
use crate::frame::{crop_rect, embed_add, Grid, Rect, DEFAULT_BUDGET, PIXEL_MAX};

/// Longest round the buffer may hold.
pub const MAX_ROUND: usize = 30;

/// Row norms at or below this take the zero subgradient.
const KINK: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SparkVariant {
    Standard,
    /// Attacker template from a detector instead of the annotated box.
    NoTemplate,
    /// Attack region centered on the attacker's own prediction.
    NoVictimBox,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SparkConfig {
    pub step: f64,
    pub lambda: f64,
    pub reset_interval: usize,
    pub iters_anchor: usize,
    pub iters_between: usize,
    pub variant: SparkVariant,
    /// L∞ bound on the running perturbation; `None` clips to the pixel range only.
    pub budget: Option<f64>,
}

impl Default for SparkConfig {
    fn default() -> Self {
        Self {
            step: 0.3,
            lambda: 1e-5,
            reset_interval: 30,
            iters_anchor: 10,
            iters_between: 2,
            variant: SparkVariant::Standard,
            budget: Some(DEFAULT_BUDGET),
        }
    }
}

impl SparkConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.step > 0.0) || !(self.lambda >= 0.0) {
            return Err(Error::ConfigInvalid("step must be positive and lambda nonnegative".into()));
        }
        if self.reset_interval == 0 || self.reset_interval > MAX_ROUND {
            return Err(Error::ConfigInvalid(format!("reset_interval must lie in 1..={MAX_ROUND}")));
        }
        if self.budget.is_some_and(|b| !(b >= 0.0)) {
            return Err(Error::ConfigInvalid("budget must be nonnegative".into()));
        }
        Ok(())
    }

    pub fn budget(&self) -> f64 {
        self.budget.unwrap_or(f64::INFINITY)
    }
}

/// One increment: a region-shaped grid placed at `rect` in frame coordinates.
#[derive(Debug, Clone, PartialEq)]
pub struct Increment {
    pub rect: Rect,
    pub grid: Grid,
}

/// Increments of the current round with their running sum and per-position
/// sum of squares.
#[derive(Debug, Clone)]
pub struct IncrementBuffer {
    increments: Vec<Increment>,
    anchor_frame: usize,
    total: Grid,
    sq: Grid,
}

impl IncrementBuffer {
    pub fn new(shape: (usize, usize, usize)) -> Self {
        Self {
            increments: Vec::new(),
            anchor_frame: 0,
            total: Grid::zeros(shape.0, shape.1, shape.2),
            sq: Grid::zeros(shape.0, shape.1, shape.2),
        }
    }

    pub fn clear(&mut self, anchor_frame: usize) {
        self.increments.clear();
        self.anchor_frame = anchor_frame;
        self.total.data_mut().fill(0.0);
        self.sq.data_mut().fill(0.0);
    }

    pub fn push(&mut self, inc: Increment) {
        assert!(self.increments.len() < MAX_ROUND, "round longer than {MAX_ROUND} frames");
        embed_add(&mut self.total, &inc.rect, &inc.grid);
        let mut sq = inc.grid.clone();
        sq.data_mut().iter_mut().for_each(|v| *v *= *v);
        embed_add(&mut self.sq, &inc.rect, &sq);
        self.increments.push(inc);
    }

    pub fn len(&self) -> usize {
        self.increments.len()
    }

    pub fn is_empty(&self) -> bool {
        self.increments.is_empty()
    }

    pub fn anchor_frame(&self) -> usize {
        self.anchor_frame
    }

    pub fn increments(&self) -> &[Increment] {
        &self.increments
    }

    /// Running perturbation `E_t` in frame coordinates.
    pub fn total(&self) -> &Grid {
        &self.total
    }

    /// Per-position sum of squared increments.
    pub fn squares(&self) -> &Grid {
        &self.sq
    }

    /// `E_t` recomputed from the stored increments.
    pub fn resum(&self) -> Grid {
        let mut g = Grid::zeros_like(&self.total);
        for inc in &self.increments {
            embed_add(&mut g, &inc.rect, &inc.grid);
        }
        g
    }
}

/// `Σ_rows ‖row‖₂` with rows the frame positions and columns the increments.
pub fn l21_norm(buf: &IncrementBuffer) -> f64 {
    buf.sq.data().iter().map(|s| s.sqrt()).sum()
}

/// Subgradient of [`l21_norm`] with respect to the newest increment, shaped
/// like that increment.
pub fn l21_subgradient(buf: &IncrementBuffer) -> Option<Grid> {
    let newest = buf.increments.last()?;
    let mut hist = crop_rect(&buf.sq, &newest.rect, None);
    for (h, e) in hist.data_mut().iter_mut().zip(newest.grid.data()) {
        *h -= e * e;
    }
    Some(l21_subgradient_parts(&newest.grid, &hist))
}

/// `ε(i) / sqrt(hist(i) + ε(i)²)`, zero at the kink.
pub fn l21_subgradient_parts(eps: &Grid, hist_sq: &Grid) -> Grid {
    let mut g = eps.clone();
    for (v, h) in g.data_mut().iter_mut().zip(hist_sq.data()) {
        let norm = (h.max(0.0) + *v * *v).sqrt();
        *v = if norm > KINK { *v / norm } else { 0.0 };
    }
    g
}

/// Attack state carried across frames of one video.
pub struct SparkPolicy {
    cfg: SparkConfig,
    buffer: Option<IncrementBuffer>,
}

impl SparkPolicy {
    pub fn new(cfg: SparkConfig) -> Result<Self> {
        cfg.validate()?;
        Ok(Self { cfg, buffer: None })
    }

    pub fn buffer(&self) -> Option<&IncrementBuffer> {
        self.buffer.as_ref()
    }
}

impl FramePolicy for SparkPolicy {
    fn step(&mut self, input: &FrameInput) -> FrameOutput {
        let shape = input.frame.shape();
        let buf = self.buffer.get_or_insert_with(|| IncrementBuffer::new(shape));
        let anchor = input.t == 0 || input.t - buf.anchor_frame() >= self.cfg.reset_interval;
        if anchor {
            buf.clear(input.t);
        }
        let iters = if anchor { self.cfg.iters_anchor } else { self.cfg.iters_between };
        let (inc, iterations, trace, error) = match spark_frame(input, buf, &self.cfg, iters) {
            Ok((inc, n, trace)) => (inc, n, trace, None),
            Err((trace, e)) => (
                Grid::zeros(input.rect.h, input.rect.w, shape.2),
                0,
                trace,
                Some(e.to_string()),
            ),
        };
        let increment_mean_abs = inc.mean_abs();
        buf.push(Increment {
            rect: input.rect,
            grid: inc,
        });
        let applied = to_frame(shape, &input.rect, &crop_rect(buf.total(), &input.rect, None));
        FrameOutput {
            applied,
            iterations,
            attacked: true,
            anchor,
            trace,
            error,
            increment_mean_abs: Some(increment_mean_abs),
            buffer_len: Some(buf.len()),
        }
    }
}

/// Optimizes one increment on the current region; returns the post-clip
/// increment, the iterations spent and the objective trace.
pub fn spark_frame(
    input: &FrameInput,
    buf: &IncrementBuffer,
    cfg: &SparkConfig,
    iters: usize,
) -> std::result::Result<(Grid, usize, Vec<f64>), (Vec<f64>, Error)> {
    let rect = input.rect;
    let prior = crop_rect(buf.total(), &rect, None);
    let hist = crop_rect(buf.squares(), &rect, None);
    let mut obj: RegionObjective = input.objective(Some(&prior)).map_err(|e| (Vec::new(), e))?;
    let (h, w, c) = obj.shape();
    let mut eps = Grid::zeros(h, w, c);
    let mut trace = Vec::new();
    let mut iterations = 0;
    while iterations < iters {
        let (f, g) = obj.eval(&eps).map_err(|e| (trace.clone(), e))?;
        trace.push(f);
        if f < 0.0 || g.max_abs() == 0.0 {
            break;
        }
        let sub = l21_subgradient_parts(&eps, &hist);
        for ((e, gv), sv) in eps.data_mut().iter_mut().zip(g.data()).zip(sub.data()) {
            *e -= cfg.step * sign(gv + cfg.lambda * sv);
        }
        obj.mask_grid(&mut eps);
        iterations += 1;
    }
    // clip the running total, keep the exact post-clip delta
    let budget = cfg.budget();
    let clean = obj.clean();
    let mask = obj.mask();
    for i in 0..eps.len() {
        if !mask[i / c] {
            eps.data_mut()[i] = 0.0;
            continue;
        }
        let p = prior.data()[i];
        let x = clean.data()[i];
        let total = (p + eps.data()[i]).clamp(-budget, budget).clamp(-x, PIXEL_MAX - x);
        eps.data_mut()[i] = total - p;
    }
    Ok((eps, iterations, trace))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::attack::basic::{BasicAttackConfig, BasicPolicy};
    use crate::attack::{Episode, RegionSource};
    use crate::objective::{CleanReference, ObjectiveKind};
    use crate::rng::Rng;
    use crate::scene::{generate, video_trajectory, SceneConfig};
    use crate::tracker::{FeatureKernel, TrackerState};

    fn random_inc(rng: &mut Rng, rect: Rect, c: usize) -> Increment {
        let data = (0..rect.w * rect.h * c).map(|_| rng.range(-2.0, 2.0)).collect();
        Increment {
            rect,
            grid: Grid::from_vec(rect.h, rect.w, c, data).unwrap(),
        }
    }

    #[test]
    fn zero_buffer_has_zero_norm() {
        let mut buf = IncrementBuffer::new((8, 8, 3));
        assert_eq!(l21_norm(&buf), 0.0);
        let rect = Rect { x0: 0, y0: 0, w: 4, h: 4 };
        buf.push(Increment {
            rect,
            grid: Grid::zeros(4, 4, 3),
        });
        assert_eq!(l21_norm(&buf), 0.0);
        assert_eq!(l21_subgradient(&buf).unwrap().max_abs(), 0.0);
    }

    #[test]
    fn single_column_is_l1() {
        let mut rng = Rng::new(41);
        let mut buf = IncrementBuffer::new((10, 10, 3));
        let inc = random_inc(&mut rng, Rect { x0: 2, y0: 1, w: 5, h: 6 }, 3);
        let l1 = inc.grid.sum_abs();
        buf.push(inc.clone());
        assert_eq!(l21_norm(&buf), l1);
        let sub = l21_subgradient(&buf).unwrap();
        for (s, e) in sub.data().iter().zip(inc.grid.data()) {
            assert_eq!(*s, sign(*e));
        }
    }

    #[test]
    fn two_columns_match_reference_loop() {
        let mut rng = Rng::new(42);
        for _ in 0..20 {
            let mut buf = IncrementBuffer::new((12, 12, 3));
            let a = random_inc(&mut rng, Rect { x0: 0, y0: 0, w: 8, h: 8 }, 3);
            let b = random_inc(&mut rng, Rect { x0: 3, y0: 2, w: 8, h: 8 }, 3);
            buf.push(a.clone());
            buf.push(b.clone());
            let mut expect = 0.0;
            for y in 0..12i64 {
                for x in 0..12i64 {
                    for c in 0..3 {
                        let at = |inc: &Increment| {
                            let (ry, rx) = (y - inc.rect.y0, x - inc.rect.x0);
                            if ry >= 0 && rx >= 0 && (ry as usize) < inc.rect.h && (rx as usize) < inc.rect.w {
                                inc.grid.get(ry as usize, rx as usize, c)
                            } else {
                                0.0
                            }
                        };
                        expect += (at(&a).powi(2) + at(&b).powi(2)).sqrt();
                    }
                }
            }
            assert!((l21_norm(&buf) - expect).abs() < 1e-10);
        }
    }

    #[test]
    fn subgradient_matches_finite_differences() {
        let mut rng = Rng::new(43);
        for _ in 0..20 {
            let rect = Rect { x0: 1, y0: 1, w: 6, h: 5 };
            let older = random_inc(&mut rng, Rect { x0: 0, y0: 0, w: 6, h: 6 }, 3);
            let newest = random_inc(&mut rng, rect, 3);
            let build = |g: &Grid| {
                let mut b = IncrementBuffer::new((9, 9, 3));
                b.push(older.clone());
                b.push(Increment { rect, grid: g.clone() });
                b
            };
            let sub = l21_subgradient(&build(&newest.grid)).unwrap();
            let h = 1e-6;
            let mut max_err: f64 = 0.0;
            for i in 0..newest.grid.len() {
                let mut p = newest.grid.clone();
                p.data_mut()[i] += h;
                let mut m = newest.grid.clone();
                m.data_mut()[i] -= h;
                let fd = (l21_norm(&build(&p)) - l21_norm(&build(&m))) / (2.0 * h);
                max_err = max_err.max((fd - sub.data()[i]).abs());
            }
            assert!(max_err / sub.max_abs() < 1e-4, "{max_err}");
        }
    }

    fn setup(n: usize, kernel: FeatureKernel) -> (SceneConfig, crate::scene::Video, TrackerState, CleanReference) {
        let scene = SceneConfig {
            num_frames: n,
            ..SceneConfig::default()
        };
        let video = generate(&scene).unwrap();
        let st = TrackerState::init(video.frames[0].grid(), video.gt[0], kernel).unwrap();
        let reference = CleanReference::run(st.clone(), &video.frames).unwrap();
        (scene, video, st, reference)
    }

    /// Policy wrapper that checks buffer invariants after every frame.
    struct Checked(SparkPolicy);

    impl FramePolicy for Checked {
        fn step(&mut self, input: &FrameInput) -> FrameOutput {
            let out = self.0.step(input);
            let buf = self.0.buffer().unwrap();
            let diff = buf.resum().sub(buf.total()).unwrap().max_abs();
            assert!(diff < 1e-9, "frame {}: {diff}", input.t);
            assert!(buf.len() <= MAX_ROUND);
            if out.anchor {
                assert_eq!(buf.len(), 1);
            }
            assert!(out.applied.max_abs() <= DEFAULT_BUDGET + 1e-12);
            out
        }
    }

    #[test]
    fn buffer_invariants_over_a_run() {
        let (scene, video, st, reference) = setup(70, FeatureKernel::Identity);
        let targets = video_trajectory(&scene, &video, 9);
        let mut policy = Checked(SparkPolicy::new(SparkConfig::default()).unwrap());
        let (run, _) = Episode {
            video: &video,
            victim: st.clone(),
            attacker: st,
            reference: &reference,
            targets: Some(&targets),
            kind: ObjectiveKind::Ta,
            region_source: RegionSource::Victim,
        }
        .run(&mut policy, false)
        .unwrap();
        let anchors: Vec<usize> = run.frames.iter().filter(|f| f.anchor).map(|f| f.t).collect();
        assert_eq!(anchors, vec![0, 30, 60]);
        for f in &run.frames {
            assert!(f.iterations <= if f.anchor { 10 } else { 2 });
        }
    }

    #[test]
    fn degenerates_to_per_frame_bim_without_memory() {
        // compressed dynamic range keeps every clip inactive
        let (scene, mut video, _, _) = setup(12, FeatureKernel::BoxBlur3);
        for f in video.frames.iter_mut() {
            let mut g = f.grid().clone();
            g.data_mut().iter_mut().for_each(|v| *v = 128.0 + (*v - 128.0) * 0.5);
            *f = crate::frame::Frame::new(g).unwrap();
        }
        let st = TrackerState::init(video.frames[0].grid(), video.gt[0], FeatureKernel::BoxBlur3).unwrap();
        let reference = CleanReference::run(st.clone(), &video.frames).unwrap();
        let targets = video_trajectory(&scene, &video, 4);
        let spark_cfg = SparkConfig {
            lambda: 0.0,
            reset_interval: 1,
            iters_anchor: 10,
            ..SparkConfig::default()
        };
        let bim_cfg = BasicAttackConfig {
            iters_between: 10,
            ..BasicAttackConfig::default()
        };
        let episode = |policy: &mut dyn FramePolicy| {
            Episode {
                video: &video,
                victim: st.clone(),
                attacker: st.clone(),
                reference: &reference,
                targets: Some(&targets),
                kind: ObjectiveKind::Ta,
                region_source: RegionSource::Victim,
            }
            .run(policy, true)
            .unwrap()
        };
        let (a, ka) = episode(&mut SparkPolicy::new(spark_cfg).unwrap());
        let (b, kb) = episode(&mut BasicPolicy::new(bim_cfg, 12, 0).unwrap());
        assert_eq!(a.preds(), b.preds());
        for (x, y) in ka.iter().zip(&kb) {
            let d = x.sub(y).unwrap().max_abs();
            assert!(d < 1e-9, "{d} {} {}", x.max_abs(), y.max_abs());
        }
    }

    #[test]
    fn same_seed_same_run() {
        let (scene, video, st, reference) = setup(20, FeatureKernel::CenterSurround);
        let targets = video_trajectory(&scene, &video, 2);
        let go = || {
            let mut p = SparkPolicy::new(SparkConfig::default()).unwrap();
            Episode {
                video: &video,
                victim: st.clone(),
                attacker: st.clone(),
                reference: &reference,
                targets: Some(&targets),
                kind: ObjectiveKind::Ta,
                region_source: RegionSource::Victim,
            }
            .run(&mut p, false)
            .unwrap()
            .0
        };
        assert_eq!(serde_json::to_string(&go()).unwrap(), serde_json::to_string(&go()).unwrap());
    }
}
