//! Single-frame baselines (FGSM, BIM, MI-FGSM, C&W) and the schedules that
//! apply them along a video: every frame, random frames, or fixed intervals
//! with reuse of the last computed perturbation in between.

use serde::{Deserialize, Serialize};

use super::{sign, to_frame, FrameAttackResult, FrameInput, FrameOutput, FramePolicy, Objective};
use crate::error::{Error, Result};
use crate::frame::{Grid, Perturbation, DEFAULT_BUDGET, PIXEL_MAX};
use crate::rng::Rng;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    Fgsm,
    Bim,
    Mifgsm,
    Cw,
}

impl Method {
    pub fn name(&self) -> &'static str {
        match self {
            Method::Fgsm => "fgsm",
            Method::Bim => "bim",
            Method::Mifgsm => "mifgsm",
            Method::Cw => "cw",
        }
    }

    pub fn default_step(&self) -> f64 {
        match self {
            Method::Fgsm => 1.0,
            Method::Bim | Method::Mifgsm => 0.3,
            // gradients of normalized correlation are O(1e-4) per pixel
            Method::Cw => 3000.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Schedule {
    /// Attack every frame.
    BaE,
    /// Attack each frame with probability `attack_prob`, reuse otherwise.
    BaR1,
    /// Attack every `interval` frames, reuse in between.
    BaR2,
}

impl Schedule {
    pub fn name(&self) -> &'static str {
        match self {
            Schedule::BaE => "ba_e",
            Schedule::BaR1 => "ba_r1",
            Schedule::BaR2 => "ba_r2",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct BasicAttackConfig {
    pub method: Method,
    /// Defaults per method when absent.
    pub step: Option<f64>,
    pub iters_anchor: usize,
    pub iters_between: usize,
    pub momentum_decay: f64,
    pub cw_penalty: f64,
    pub schedule: Schedule,
    pub attack_prob: f64,
    pub interval: usize,
    /// Anchor spacing for `ba_e` iteration budgets.
    pub reset_interval: usize,
    /// L∞ bound; `None` clips to the pixel range only.
    pub budget: Option<f64>,
}

impl Default for BasicAttackConfig {
    fn default() -> Self {
        Self {
            method: Method::Bim,
            step: None,
            iters_anchor: 10,
            iters_between: 2,
            momentum_decay: 1.0,
            cw_penalty: 1e-5,
            schedule: Schedule::BaE,
            attack_prob: 0.1,
            interval: 10,
            reset_interval: 30,
            budget: Some(DEFAULT_BUDGET),
        }
    }
}

impl BasicAttackConfig {
    pub fn step(&self) -> f64 {
        self.step.unwrap_or_else(|| self.method.default_step())
    }

    pub fn budget(&self) -> f64 {
        self.budget.unwrap_or(f64::INFINITY)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::ConfigInvalid(m.into()));
        if !(self.step() > 0.0) {
            return bad("step must be positive");
        }
        if !(0.0..=1.0).contains(&self.attack_prob) {
            return bad("attack_prob must lie in [0, 1]");
        }
        if self.interval == 0 || self.reset_interval == 0 {
            return bad("intervals must be positive");
        }
        if self.budget.is_some_and(|b| !(b >= 0.0)) || self.momentum_decay < 0.0 || self.cw_penalty < 0.0 {
            return bad("budget, momentum_decay and cw_penalty must be nonnegative");
        }
        Ok(())
    }

    /// Iterations at frame `t` when it is attacked.
    pub fn iterations_at(&self, t: usize) -> usize {
        if self.method == Method::Fgsm {
            return 1;
        }
        match self.schedule {
            Schedule::BaE if t % self.reset_interval != 0 => self.iters_between,
            _ => self.iters_anchor,
        }
    }

    pub fn params(&self, iters: usize) -> IterParams {
        IterParams {
            method: self.method,
            step: self.step(),
            iters,
            momentum_decay: self.momentum_decay,
            cw_penalty: self.cw_penalty,
            budget: self.budget(),
        }
    }
}

/// Settings for one frame's optimization.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct IterParams {
    pub method: Method,
    pub step: f64,
    pub iters: usize,
    pub momentum_decay: f64,
    pub cw_penalty: f64,
    pub budget: f64,
}

/// One signed step `−step·sign(∇f)`, clipped to the budget and pixel range.
pub fn fgsm_step(region: &Grid, grad: &Grid, step: f64, budget: f64) -> Result<Perturbation> {
    region.check_same_shape(grad)?;
    let data = grad
        .data()
        .iter()
        .zip(region.data())
        .map(|(g, x)| (-step * sign(*g)).clamp(-budget, budget).clamp(-x, PIXEL_MAX - x))
        .collect();
    let (h, w, c) = grad.shape();
    Ok(Perturbation::clipped(Grid::from_vec(h, w, c, data)?, budget))
}

/// Iterative minimization of `obj` from a zero perturbation, stopping as soon
/// as the objective is negative or the gradient vanishes.
pub fn iterative_attack(obj: &mut dyn Objective, p: &IterParams) -> FrameAttackResult {
    let shape = obj.shape();
    match iterate(obj, p, shape) {
        Ok(r) => r,
        Err(e) => FrameAttackResult::failed(shape, &e),
    }
}

fn iterate(obj: &mut dyn Objective, p: &IterParams, shape: (usize, usize, usize)) -> Result<FrameAttackResult> {
    let mut delta = Grid::zeros(shape.0, shape.1, shape.2);
    let mut velocity = Grid::zeros(shape.0, shape.1, shape.2);
    let mut trace = Vec::new();
    let mut iterations = 0;
    let mut succeeded = false;
    while iterations < p.iters {
        let (f, g) = obj.eval(&delta)?;
        trace.push(f);
        if f < 0.0 {
            succeeded = true;
            break;
        }
        if !g.is_finite() {
            return Err(Error::NonFiniteGradient);
        }
        let moving = match p.method {
            Method::Cw => g.max_abs() > 0.0 || (p.cw_penalty > 0.0 && delta.max_abs() > 0.0),
            _ => g.max_abs() > 0.0,
        };
        if !moving {
            break;
        }
        match p.method {
            Method::Fgsm | Method::Bim => {
                for (d, gv) in delta.data_mut().iter_mut().zip(g.data()) {
                    *d -= p.step * sign(*gv);
                }
            }
            Method::Mifgsm => {
                let l1 = g.sum_abs();
                for ((v, d), gv) in velocity.data_mut().iter_mut().zip(delta.data_mut()).zip(g.data()) {
                    *v = p.momentum_decay * *v + gv / l1;
                    *d -= p.step * sign(*v);
                }
            }
            Method::Cw => {
                for (d, gv) in delta.data_mut().iter_mut().zip(g.data()) {
                    *d -= p.step * (gv + 2.0 * p.cw_penalty * *d);
                }
            }
        }
        obj.project(&mut delta, p.budget);
        iterations += 1;
    }
    Ok(FrameAttackResult {
        perturbation: delta,
        iterations,
        trace,
        succeeded,
        error: None,
    })
}

/// Which frames a schedule attacks; deterministic in `seed`.
pub fn attack_frames(cfg: &BasicAttackConfig, n: usize, seed: u64) -> Vec<bool> {
    let mut rng = Rng::new(seed);
    (0..n)
        .map(|t| match cfg.schedule {
            Schedule::BaE => true,
            Schedule::BaR1 => rng.bernoulli(cfg.attack_prob),
            Schedule::BaR2 => t % cfg.interval == 0,
        })
        .collect()
}

/// Online policy for the baseline schedules.
pub struct BasicPolicy {
    cfg: BasicAttackConfig,
    plan: Vec<bool>,
    stored: Option<Grid>,
}

impl BasicPolicy {
    pub fn new(cfg: BasicAttackConfig, num_frames: usize, seed: u64) -> Result<Self> {
        cfg.validate()?;
        let plan = attack_frames(&cfg, num_frames, seed);
        Ok(Self {
            cfg,
            plan,
            stored: None,
        })
    }

    pub fn plan(&self) -> &[bool] {
        &self.plan
    }
}

impl FramePolicy for BasicPolicy {
    fn step(&mut self, input: &FrameInput) -> FrameOutput {
        let shape = input.frame.shape();
        if !self.plan.get(input.t).copied().unwrap_or(false) {
            let mut out = FrameOutput::untouched(shape);
            if let Some(s) = &self.stored {
                out.applied = s.clone();
            }
            return out;
        }
        let iters = self.cfg.iterations_at(input.t);
        let result = match input.objective(None) {
            Ok(mut obj) => iterative_attack(&mut obj, &self.cfg.params(iters)),
            Err(e) => FrameAttackResult::failed((input.rect.h, input.rect.w, shape.2), &e),
        };
        let applied = to_frame(shape, &input.rect, &result.perturbation);
        self.stored = Some(applied.clone());
        FrameOutput {
            applied,
            iterations: result.iterations,
            attacked: true,
            anchor: self.cfg.schedule == Schedule::BaE && input.t % self.cfg.reset_interval == 0,
            trace: result.trace,
            error: result.error,
            increment_mean_abs: None,
            buffer_len: None,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::attack::{Episode, RegionSource};
    use crate::objective::{CleanReference, ObjectiveKind};
    use crate::scene::{generate, video_trajectory, SceneConfig};
    use crate::tracker::{FeatureKernel, TrackerState};

    /// `Σ a_i (δ_i − b_i)² − c`.
    struct Quadratic {
        a: Vec<f64>,
        b: Vec<f64>,
        c: f64,
        shape: (usize, usize, usize),
    }

    impl Quadratic {
        fn new(rng: &mut Rng, c: f64) -> Self {
            let shape = (4, 5, 3);
            let n = 60;
            Self {
                a: (0..n).map(|_| rng.range(0.1, 1.0)).collect(),
                b: (0..n).map(|_| rng.range(-3.0, 3.0)).collect(),
                c,
                shape,
            }
        }

        fn value(&self, d: &[f64]) -> f64 {
            d.iter().zip(&self.a).zip(&self.b).map(|((d, a), b)| a * (d - b).powi(2)).sum::<f64>() - self.c
        }
    }

    impl Objective for Quadratic {
        fn shape(&self) -> (usize, usize, usize) {
            self.shape
        }

        fn eval(&mut self, delta: &Grid) -> Result<(f64, Grid)> {
            let d = delta.data();
            let g = d.iter().zip(&self.a).zip(&self.b).map(|((d, a), b)| 2.0 * a * (d - b)).collect();
            let (h, w, c) = self.shape;
            Ok((self.value(d), Grid::from_vec(h, w, c, g)?))
        }
    }

    fn params(method: Method, iters: usize) -> IterParams {
        IterParams {
            method,
            step: method.default_step(),
            iters,
            momentum_decay: 1.0,
            cw_penalty: 1e-2,
            budget: 16.0,
        }
    }

    #[test]
    fn fgsm_zero_gradient_gives_zero() {
        let region = Grid::filled(4, 4, 3, 100.0);
        let p = fgsm_step(&region, &Grid::zeros(4, 4, 3), 1.0, 16.0).unwrap();
        assert_eq!(p.grid().max_abs(), 0.0);
    }

    #[test]
    fn fgsm_positive_gradient_is_uniform_unit_step() {
        let region = Grid::filled(6, 6, 3, 100.0);
        let p = fgsm_step(&region, &Grid::filled(6, 6, 3, 0.02), 1.0, 16.0).unwrap();
        assert!(p.grid().data().iter().all(|&v| v == -1.0));
        assert_eq!(p.grid().mean_abs(), 1.0);
    }

    #[test]
    fn fgsm_signs_match_elementwise_loop() {
        let mut rng = Rng::new(31);
        let region = Grid::filled(5, 5, 3, 128.0);
        let mut g = Grid::zeros(5, 5, 3);
        for (i, v) in g.data_mut().iter_mut().enumerate() {
            *v = if i % 7 == 0 { 0.0 } else { rng.range(-1.0, 1.0) };
        }
        let p = fgsm_step(&region, &g, 1.0, 16.0).unwrap();
        for (pv, gv) in p.grid().data().iter().zip(g.data()) {
            let expect = if *gv > 0.0 {
                -1.0
            } else if *gv < 0.0 {
                1.0
            } else {
                0.0
            };
            assert_eq!(*pv, expect);
        }
        let dark = Grid::filled(5, 5, 3, 0.0);
        let p = fgsm_step(&dark, &Grid::filled(5, 5, 3, 1.0), 1.0, 16.0).unwrap();
        assert_eq!(p.grid().max_abs(), 0.0);
    }

    #[test]
    fn early_exit_when_already_negative() {
        let mut rng = Rng::new(32);
        let mut q = Quadratic::new(&mut rng, 1e6);
        let r = iterative_attack(&mut q, &params(Method::Bim, 10));
        assert_eq!(r.iterations, 0);
        assert_eq!(r.perturbation.max_abs(), 0.0);
        assert!(r.succeeded);
    }

    #[test]
    fn single_bim_iteration_equals_fgsm() {
        let mut rng = Rng::new(33);
        let mut q = Quadratic::new(&mut rng, -1.0);
        let mut p = params(Method::Bim, 1);
        p.step = 0.7;
        let r = iterative_attack(&mut q, &p);
        let (_, g) = q.eval(&Grid::zeros(4, 5, 3)).unwrap();
        let f = fgsm_step(&Grid::filled(4, 5, 3, 100.0), &g, 0.7, 16.0).unwrap();
        assert_eq!(&r.perturbation, f.grid());
        assert_eq!(r.iterations, 1);
    }

    #[test]
    fn cw_matches_reference_descent() {
        let mut rng = Rng::new(34);
        let mut q = Quadratic::new(&mut rng, -1.0);
        let mut p = params(Method::Cw, 25);
        p.step = 0.05;
        p.budget = 2.5;
        let r = iterative_attack(&mut q, &p);
        let mut d = vec![0.0; 60];
        for _ in 0..25 {
            for i in 0..60 {
                let g = 2.0 * q.a[i] * (d[i] - q.b[i]) + 2.0 * 1e-2 * d[i];
                d[i] = (d[i] - 0.05 * g).clamp(-2.5, 2.5);
            }
        }
        for (a, b) in r.perturbation.data().iter().zip(&d) {
            assert!((a - b).abs() < 1e-8);
        }
        assert_eq!(r.iterations, 25);
    }

    #[test]
    fn mifgsm_follows_normalized_velocity() {
        let mut rng = Rng::new(35);
        let mut q = Quadratic::new(&mut rng, -1.0);
        let p = params(Method::Mifgsm, 6);
        let r = iterative_attack(&mut q, &p);
        let mut d = vec![0.0; 60];
        let mut v = vec![0.0; 60];
        for _ in 0..6 {
            let g: Vec<f64> = (0..60).map(|i| 2.0 * q.a[i] * (d[i] - q.b[i])).collect();
            let l1: f64 = g.iter().map(|x| x.abs()).sum();
            for i in 0..60 {
                v[i] = v[i] + g[i] / l1;
                d[i] = (d[i] - 0.3 * sign(v[i])).clamp(-16.0, 16.0);
            }
        }
        assert_eq!(r.perturbation.data(), &d[..]);
    }

    #[test]
    fn nonfinite_gradient_flags_frame() {
        struct Bad;
        impl Objective for Bad {
            fn shape(&self) -> (usize, usize, usize) {
                (2, 2, 1)
            }
            fn eval(&mut self, _: &Grid) -> Result<(f64, Grid)> {
                Ok((1.0, Grid::filled(2, 2, 1, f64::NAN)))
            }
        }
        let r = iterative_attack(&mut Bad, &params(Method::Bim, 3));
        assert!(r.error.is_some());
        assert_eq!(r.perturbation.max_abs(), 0.0);
    }

    #[test]
    fn budget_is_respected() {
        let mut rng = Rng::new(36);
        for m in [Method::Bim, Method::Mifgsm, Method::Cw] {
            let mut q = Quadratic::new(&mut rng, -1e9);
            q.b.iter_mut().for_each(|b| *b *= 100.0);
            let mut p = params(m, 40);
            p.step = if m == Method::Cw { 5.0 } else { 1.0 };
            p.budget = 4.0;
            let r = iterative_attack(&mut q, &p);
            assert!(r.perturbation.max_abs() <= 4.0);
        }
    }

    #[test]
    fn interval_schedule_frames() {
        let cfg = BasicAttackConfig {
            schedule: Schedule::BaR2,
            ..Default::default()
        };
        let plan = attack_frames(&cfg, 100, 0);
        let hit: Vec<usize> = (0..100).filter(|&t| plan[t]).collect();
        assert_eq!(hit, (0..10).map(|k| 10 * k).collect::<Vec<_>>());
    }

    #[test]
    fn random_schedule_is_seeded_and_has_binomial_mean() {
        let cfg = BasicAttackConfig {
            schedule: Schedule::BaR1,
            ..Default::default()
        };
        assert_eq!(attack_frames(&cfg, 100, 5), attack_frames(&cfg, 100, 5));
        let total: usize = (0..200u64)
            .map(|s| attack_frames(&cfg, 100, s).iter().filter(|b| **b).count())
            .sum();
        let mean = total as f64 / 200.0;
        assert!((mean - 10.0).abs() <= 1.0, "{mean}");
    }

    #[test]
    fn iteration_budget_per_frame() {
        let eq = BasicAttackConfig::default();
        assert_eq!((eq.iterations_at(0), eq.iterations_at(1), eq.iterations_at(30)), (10, 2, 10));
        let orig = BasicAttackConfig {
            iters_between: 10,
            ..Default::default()
        };
        assert_eq!(orig.iterations_at(7), 10);
        let fgsm = BasicAttackConfig {
            method: Method::Fgsm,
            ..Default::default()
        };
        assert_eq!(fgsm.iterations_at(0), 1);
        assert_eq!(fgsm.step(), 1.0);
    }

    #[test]
    fn reuse_applies_identical_grid() {
        let scene = SceneConfig {
            num_frames: 25,
            ..SceneConfig::default()
        };
        let video = generate(&scene).unwrap();
        let st = TrackerState::init(video.frames[0].grid(), video.gt[0], FeatureKernel::Identity).unwrap();
        let reference = CleanReference::run(st.clone(), &video.frames).unwrap();
        let targets = video_trajectory(&scene, &video, 3);
        let cfg = BasicAttackConfig {
            schedule: Schedule::BaR2,
            ..Default::default()
        };
        let mut policy = BasicPolicy::new(cfg, 25, 1).unwrap();
        let (run, kept) = Episode {
            video: &video,
            victim: st.clone(),
            attacker: st,
            reference: &reference,
            targets: Some(&targets),
            kind: ObjectiveKind::Ta,
            region_source: RegionSource::Victim,
        }
        .run(&mut policy, true)
        .unwrap();
        for t in 0..25 {
            let opener = t - t % 10;
            assert_eq!(run.frames[t].attacked, t % 10 == 0);
            assert_eq!(kept[t], kept[opener]);
            if t % 10 != 0 {
                assert_eq!(run.frames[t].iterations, 0);
            }
            assert!(kept[t].max_abs() <= DEFAULT_BUDGET);
        }
    }
}
