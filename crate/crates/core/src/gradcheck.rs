//! Central finite-difference checks of the analytic gradients used by the
//! attacks: both margin objectives through the tracker, and the L2,1 term.

use serde::Serialize;

use crate::attack::spark::{l21_norm, l21_subgradient, Increment, IncrementBuffer};
use crate::attack::{Objective, RegionObjective};
use crate::error::Result;
use crate::frame::{Grid, Rect};
use crate::geometry::Point;
use crate::objective::ObjectiveKind;
use crate::rng::{mix_seed, Rng};
use crate::scene::{generate, SceneConfig};
use crate::tracker::{FeatureKernel, TrackerState};

#[derive(Debug, Clone, Copy)]
pub struct GradcheckConfig {
    /// Trials per (objective, kernel) combination.
    pub trials: usize,
    /// Coordinates probed per trial: half the largest-gradient entries, half random.
    pub coords: usize,
    pub step: f64,
    pub seed: u64,
}

impl Default for GradcheckConfig {
    fn default() -> Self {
        Self {
            trials: 5,
            coords: 24,
            step: 1e-3,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct CheckLine {
    pub name: String,
    pub trials: usize,
    pub max_rel_err: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct GradcheckReport {
    pub lines: Vec<CheckLine>,
}

impl GradcheckReport {
    pub fn max_rel_err(&self) -> f64 {
        self.lines.iter().map(|l| l.max_rel_err).fold(0.0, f64::max)
    }

    pub fn total_trials(&self) -> usize {
        self.lines.iter().map(|l| l.trials).sum()
    }
}

/// `max |fd − g| / max |g|` over the probed coordinates.
fn probe(g: &Grid, coords: &[usize], mut f: impl FnMut(usize, f64) -> Result<f64>, h: f64) -> Result<f64> {
    let scale = g.max_abs();
    let mut err: f64 = 0.0;
    for &i in coords {
        let fd = (f(i, h)? - f(i, -h)?) / (2.0 * h);
        err = err.max((fd - g.data()[i]).abs());
    }
    Ok(if scale > 0.0 { err / scale } else { err })
}

fn pick_coords(g: &Grid, n: usize, rng: &mut Rng) -> Vec<usize> {
    let mut order: Vec<usize> = (0..g.len()).collect();
    order.sort_by(|&a, &b| g.data()[b].abs().total_cmp(&g.data()[a].abs()).then(a.cmp(&b)));
    let mut out: Vec<usize> = order[..(n / 2).min(order.len())].to_vec();
    while out.len() < n.min(g.len()) {
        out.push(rng.below(g.len() as u32) as usize);
    }
    out
}

fn objective_trial(kind: ObjectiveKind, kernel: FeatureKernel, cfg: &GradcheckConfig, trial: usize) -> Result<f64> {
    let seed = mix_seed(&[cfg.seed, kind as u64, kernel as u64, trial as u64]);
    let mut rng = Rng::new(seed);
    let scene = SceneConfig {
        num_frames: 4,
        seed,
        ..SceneConfig::default()
    };
    let video = generate(&scene)?;
    let state = TrackerState::init(video.frames[0].grid(), video.gt[0], kernel)?;
    let t = 1 + rng.below(3) as usize;
    let frame = video.frames[t].grid();
    let gt = video.gt[t];
    let rect = state.region_rect(&video.gt[t - 1]);
    let angle = rng.range(0.0, std::f64::consts::TAU);
    let r = rng.range(20.0, 40.0);
    let target = Point::new(gt.cx + r * angle.cos(), gt.cy + r * angle.sin());
    let mut obj = RegionObjective::new(&state, frame, rect, None, kind, gt, Some(target))?;
    let (h, w, c) = obj.shape();
    let mut delta = Grid::zeros(h, w, c);
    delta.data_mut().iter_mut().for_each(|v| *v = rng.range(-8.0, 8.0));
    obj.mask_grid(&mut delta);
    let (_, g) = obj.eval(&delta)?;
    let coords = pick_coords(&g, cfg.coords, &mut rng);
    probe(
        &g,
        &coords,
        |i, d| {
            let mut p = delta.clone();
            p.data_mut()[i] += d;
            Ok(obj.value(&p)?.value)
        },
        cfg.step,
    )
}

fn l21_trial(cfg: &GradcheckConfig, trial: usize) -> Result<f64> {
    let mut rng = Rng::new(mix_seed(&[cfg.seed, 0x121, trial as u64]));
    let shape = (24, 24, 3);
    let mut buf = IncrementBuffer::new(shape);
    let random_inc = |rng: &mut Rng, rect: Rect| {
        let mut g = Grid::zeros(rect.h, rect.w, shape.2);
        // away from kinks: no exact zeros
        g.data_mut().iter_mut().for_each(|v| *v = rng.range(0.1, 2.0) * rng.sign());
        Increment { rect, grid: g }
    };
    for _ in 0..1 + rng.below(5) {
        let x0 = rng.below(8) as i64;
        let y0 = rng.below(8) as i64;
        buf.push(random_inc(&mut rng, Rect { x0, y0, w: 16, h: 16 }));
    }
    let newest = buf.increments().last().expect("pushed above").clone();
    let sub = l21_subgradient(&buf).expect("nonempty buffer");
    let history: Vec<Increment> = buf.increments()[..buf.len() - 1].to_vec();
    let norm_with = |g: &Grid| {
        let mut b = IncrementBuffer::new(shape);
        for inc in &history {
            b.push(inc.clone());
        }
        b.push(Increment {
            rect: newest.rect,
            grid: g.clone(),
        });
        l21_norm(&b)
    };
    let coords = pick_coords(&sub, cfg.coords, &mut rng);
    // the norm is smooth away from kinks, so a smaller step is safe here
    probe(
        &sub,
        &coords,
        |i, d| {
            let mut p = newest.grid.clone();
            p.data_mut()[i] += d;
            Ok(norm_with(&p))
        },
        cfg.step * 1e-3,
    )
}

/// Runs every check; each line is one objective/kernel combination or the L2,1 term.
pub fn run(cfg: &GradcheckConfig) -> Result<GradcheckReport> {
    let mut lines = Vec::new();
    for kind in [ObjectiveKind::Ua, ObjectiveKind::Ta] {
        for kernel in FeatureKernel::ALL {
            let mut worst: f64 = 0.0;
            for trial in 0..cfg.trials {
                worst = worst.max(objective_trial(kind, kernel, cfg, trial)?);
            }
            lines.push(CheckLine {
                name: format!("f_{}/{}", kind.name(), kernel.name()),
                trials: cfg.trials,
                max_rel_err: worst,
            });
        }
    }
    let mut worst: f64 = 0.0;
    let n = (cfg.trials * 4).max(20);
    for trial in 0..n {
        worst = worst.max(l21_trial(cfg, trial)?);
    }
    lines.push(CheckLine {
        name: "l21".into(),
        trials: n,
        max_rel_err: worst,
    });
    Ok(GradcheckReport { lines })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn small_gradcheck_passes() {
        let r = run(&GradcheckConfig {
            trials: 1,
            coords: 8,
            ..GradcheckConfig::default()
        })
        .unwrap();
        assert_eq!(r.lines.len(), 9);
        assert!(r.max_rel_err() < 1e-4, "{:?}", r.lines);
    }
}
