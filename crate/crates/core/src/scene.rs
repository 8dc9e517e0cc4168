//! Deterministic synthetic videos: a textured object performing a reflected
//! random walk over a background, plus seeded targeted trajectories.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::frame::{Frame, Grid, PIXEL_MAX};
use crate::geometry::{BBox, Point};
use crate::rng::{mix_seed, Rng};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TextureKind {
    Checker,
    Noise,
    Gradient,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BackgroundKind {
    Flat,
    Noise,
    Drift,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SceneConfig {
    pub frame_h: usize,
    pub frame_w: usize,
    pub object_w: usize,
    pub object_h: usize,
    pub channels: usize,
    pub num_frames: usize,
    /// Largest per-axis displacement per frame, in whole pixels.
    pub motion_step_max: f64,
    pub texture_kind: TextureKind,
    pub background_kind: BackgroundKind,
    /// Standard deviation of the object texture.
    pub object_contrast: f64,
    /// Standard deviation of the static background texture.
    pub background_amplitude: f64,
    /// Per-frame sensor noise standard deviation.
    pub noise_sigma: f64,
    /// Largest blend angle (radians) between the object's two appearance bases.
    pub appearance_drift: f64,
    pub seed: u64,
}

impl Default for SceneConfig {
    fn default() -> Self {
        Self {
            frame_h: 160,
            frame_w: 160,
            object_w: 32,
            object_h: 32,
            channels: 3,
            num_frames: 100,
            motion_step_max: 4.0,
            texture_kind: TextureKind::Noise,
            background_kind: BackgroundKind::Noise,
            object_contrast: 3.0,
            background_amplitude: 0.3,
            noise_sigma: 0.2,
            appearance_drift: 1.0,
            seed: 0,
        }
    }
}

impl SceneConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::ConfigInvalid(m.to_string()));
        if self.object_w == 0 || self.object_h == 0 {
            return bad("object size must be positive");
        }
        if self.frame_w < 3 * self.object_w || self.frame_h < 3 * self.object_h {
            return bad("frame must leave an object-sized margin around the object");
        }
        if self.num_frames < 2 {
            return bad("num_frames must be at least 2");
        }
        if self.channels != 1 && self.channels != 3 {
            return bad("channels must be 1 or 3");
        }
        if !(self.motion_step_max >= 0.0)
            || !(self.noise_sigma >= 0.0)
            || !(self.background_amplitude >= 0.0)
            || !(self.object_contrast > 0.0)
            || !(self.appearance_drift >= 0.0)
        {
            return bad("motion, noise, amplitude and drift must be non-negative, contrast positive");
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Video {
    pub frames: Vec<Frame>,
    pub gt: Vec<BBox>,
}

impl Video {
    pub fn len(&self) -> usize {
        self.frames.len()
    }

    pub fn is_empty(&self) -> bool {
        self.frames.is_empty()
    }
}

/// Reflects `v` into `[lo, hi]`.
fn reflect(mut v: f64, lo: f64, hi: f64) -> f64 {
    if hi <= lo {
        return lo;
    }
    for _ in 0..8 {
        if v < lo {
            v = 2.0 * lo - v;
        } else if v > hi {
            v = 2.0 * hi - v;
        } else {
            break;
        }
    }
    v.clamp(lo, hi)
}

/// Smooth random field: a coarse lattice of Gaussian values, bilinearly upsampled.
fn smooth_field(rng: &mut Rng, h: usize, w: usize, channels: usize, cell: usize) -> Grid {
    let gh = h / cell + 2;
    let gw = w / cell + 2;
    let lattice: Vec<f64> = (0..gh * gw * channels).map(|_| rng.normal()).collect();
    let mut out = Grid::zeros(h, w, channels);
    for y in 0..h {
        let fy = y as f64 / cell as f64;
        let (iy, ty) = (fy.floor() as usize, fy.fract());
        for x in 0..w {
            let fx = x as f64 / cell as f64;
            let (ix, tx) = (fx.floor() as usize, fx.fract());
            for c in 0..channels {
                let at = |yy: usize, xx: usize| lattice[(yy * gw + xx) * channels + c];
                let top = at(iy, ix) * (1.0 - tx) + at(iy, ix + 1) * tx;
                let bot = at(iy + 1, ix) * (1.0 - tx) + at(iy + 1, ix + 1) * tx;
                out.set(y, x, c, top * (1.0 - ty) + bot * ty);
            }
        }
    }
    normalize(&mut out);
    out
}

/// Zero mean, unit standard deviation over all values.
fn normalize(g: &mut Grid) {
    let n = g.len() as f64;
    let mean = g.data().iter().sum::<f64>() / n;
    let var = g.data().iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
    let sd = var.sqrt().max(1e-12);
    g.data_mut().iter_mut().for_each(|v| *v = (*v - mean) / sd);
}

/// Zero-mean unit-variance appearance pattern for the object.
fn object_pattern(rng: &mut Rng, kind: TextureKind, h: usize, w: usize, channels: usize) -> Grid {
    let mut g = match kind {
        TextureKind::Checker => {
            let cell = 4 + rng.below(5) as usize;
            let colors: Vec<f64> = (0..2 * channels).map(|_| rng.normal()).collect();
            let mut g = Grid::zeros(h, w, channels);
            for y in 0..h {
                for x in 0..w {
                    let k = ((y / cell + x / cell) % 2) * channels;
                    for c in 0..channels {
                        g.set(y, x, c, colors[k + c]);
                    }
                }
            }
            g
        }
        TextureKind::Noise => smooth_field(rng, h, w, channels, NOISE_CELL),
        TextureKind::Gradient => {
            let angle = rng.range(0.0, std::f64::consts::TAU);
            let (ca, sa) = (angle.cos(), angle.sin());
            let tint: Vec<f64> = (0..channels).map(|_| rng.range(0.5, 1.5)).collect();
            let stripe = rng.range(3.0, 8.0);
            let mut g = Grid::zeros(h, w, channels);
            for y in 0..h {
                for x in 0..w {
                    let u = (x as f64 * ca + y as f64 * sa) / w.max(h) as f64;
                    let band = ((x as f64 - y as f64) / stripe).sin();
                    for c in 0..channels {
                        g.set(y, x, c, tint[c] * u + 0.5 * band);
                    }
                }
            }
            g
        }
    };
    normalize(&mut g);
    g
}

const BG_TINT: f64 = 0.3;
const OBJ_TINT: f64 = 3.0;
const NOISE_CELL: usize = 8;

/// Renders a seeded video.
pub fn generate(config: &SceneConfig) -> Result<Video> {
    config.validate()?;
    let (fh, fw, ch) = (config.frame_h, config.frame_w, config.channels);
    let (ow, oh) = (config.object_w, config.object_h);
    let mut rng = Rng::new(mix_seed(&[config.seed, 0x5CE9E]));

    // near-gray bases: a common level per layer plus a small per-channel tint
    let bg_level = rng.range(90.0, 165.0);
    let bg_base: Vec<f64> = (0..ch).map(|_| bg_level + rng.range(-BG_TINT, BG_TINT)).collect();
    let obj_level = rng.range(90.0, 165.0);
    let obj_base: Vec<f64> = (0..ch).map(|_| obj_level + rng.range(-OBJ_TINT, OBJ_TINT)).collect();
    let bg_field = match config.background_kind {
        BackgroundKind::Flat => None,
        BackgroundKind::Noise => Some(smooth_field(&mut rng, fh, fw, ch, 2)),
        // twice the frame so the view can pan across it
        BackgroundKind::Drift => Some(smooth_field(&mut rng, 2 * fh, 2 * fw, ch, 16)),
    };
    let drift_velocity = (rng.range(-0.5, 0.5), rng.range(-0.5, 0.5));
    let look_a = object_pattern(&mut rng, config.texture_kind, oh, ow, ch);
    let look_b = object_pattern(&mut rng, config.texture_kind, oh, ow, ch);

    let max_x = (fw - ow) as f64;
    let max_y = (fh - oh) as f64;
    let mut x = (max_x / 2.0 + rng.range(-8.0, 8.0)).round();
    let mut y = (max_y / 2.0 + rng.range(-8.0, 8.0)).round();
    let step = config.motion_step_max.floor() as i64;
    let drift_step = config.appearance_drift / 6.0;
    let mut angle = 0.0f64;

    let mut frames = Vec::with_capacity(config.num_frames);
    let mut gt = Vec::with_capacity(config.num_frames);
    for t in 0..config.num_frames {
        if t > 0 {
            if step > 0 {
                let span = (2 * step + 1) as u32;
                x = reflect(x + (rng.below(span) as i64 - step) as f64, 0.0, max_x);
                y = reflect(y + (rng.below(span) as i64 - step) as f64, 0.0, max_y);
            }
            angle = reflect(
                angle + rng.range(-drift_step, drift_step),
                0.0,
                config.appearance_drift,
            );
        }
        let mut g = Grid::zeros(fh, fw, ch);
        let (pan_x, pan_y) = (
            (t as f64 * drift_velocity.0).round() as i64,
            (t as f64 * drift_velocity.1).round() as i64,
        );
        for py in 0..fh {
            for px in 0..fw {
                for c in 0..ch {
                    let bg = match (&bg_field, config.background_kind) {
                        (None, _) => 0.0,
                        (Some(f), BackgroundKind::Drift) => {
                            let yy = (py as i64 + fh as i64 / 2 + pan_y).rem_euclid(2 * fh as i64);
                            let xx = (px as i64 + fw as i64 / 2 + pan_x).rem_euclid(2 * fw as i64);
                            f.get(yy as usize, xx as usize, c) * 3.0 * config.background_amplitude
                        }
                        (Some(f), _) => f.get(py, px, c) * config.background_amplitude,
                    };
                    g.set(py, px, c, bg_base[c] + bg);
                }
            }
        }
        let (ca, sa) = (angle.cos(), angle.sin());
        let (ox, oy) = (x as usize, y as usize);
        for py in 0..oh {
            for px in 0..ow {
                for c in 0..ch {
                    let look = ca * look_a.get(py, px, c) + sa * look_b.get(py, px, c);
                    g.set(oy + py, ox + px, c, obj_base[c] + config.object_contrast * look);
                }
            }
        }
        if config.noise_sigma > 0.0 {
            for v in g.data_mut() {
                *v += config.noise_sigma * rng.normal();
            }
        }
        // integer-valued frames survive PPM export unchanged
        g.data_mut()
            .iter_mut()
            .for_each(|v| *v = v.round().clamp(0.0, PIXEL_MAX));
        frames.push(Frame::new(g)?);
        gt.push(BBox::from_corner(x, y, ow as f64, oh as f64));
    }
    Ok(Video { frames, gt })
}

/// Targeted trajectory: each step adds, per axis, a magnitude uniform in
/// `[1, 10]` with an independent random sign, reflected into `[lo, hi]`.
pub fn target_trajectory(start: Point, len: usize, seed: u64, lo: Point, hi: Point) -> Vec<Point> {
    let mut rng = Rng::new(mix_seed(&[seed, 0x7A6E7]));
    let mut p = start;
    let mut out = Vec::with_capacity(len);
    if len == 0 {
        return out;
    }
    out.push(p);
    for _ in 1..len {
        let dx = rng.sign() * rng.range(1.0, 10.0);
        let dy = rng.sign() * rng.range(1.0, 10.0);
        p = Point::new(reflect(p.x + dx, lo.x, hi.x), reflect(p.y + dy, lo.y, hi.y));
        out.push(p);
    }
    out
}

/// Trajectory for a video: starts at the first ground-truth center and keeps
/// target-sized boxes inside the frame.
pub fn video_trajectory(config: &SceneConfig, video: &Video, seed: u64) -> Vec<Point> {
    let lo = Point::new(config.object_w as f64 / 2.0, config.object_h as f64 / 2.0);
    let hi = Point::new(
        config.frame_w as f64 - config.object_w as f64 / 2.0,
        config.frame_h as f64 - config.object_h as f64 / 2.0,
    );
    target_trajectory(video.gt[0].center(), video.len(), seed, lo, hi)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small(seed: u64) -> SceneConfig {
        SceneConfig {
            frame_h: 72,
            frame_w: 80,
            object_w: 16,
            object_h: 12,
            num_frames: 12,
            seed,
            ..Default::default()
        }
    }

    #[test]
    fn same_seed_same_video() {
        let a = generate(&small(5)).unwrap();
        let b = generate(&small(5)).unwrap();
        assert_eq!(a, b);
        let c = generate(&small(6)).unwrap();
        assert_ne!(a.frames[0], c.frames[0]);
    }

    #[test]
    fn zero_motion_freezes_boxes() {
        let v = generate(&SceneConfig {
            motion_step_max: 0.0,
            ..small(1)
        })
        .unwrap();
        assert!(v.gt.iter().all(|b| *b == v.gt[0]));
    }

    #[test]
    fn boxes_stay_inside_frame_on_random_configs() {
        let mut rng = Rng::new(77);
        for i in 0..100 {
            let cfg = SceneConfig {
                frame_h: 48 + rng.below(40) as usize,
                frame_w: 48 + rng.below(40) as usize,
                object_w: 8 + rng.below(8) as usize,
                object_h: 8 + rng.below(8) as usize,
                num_frames: 30,
                motion_step_max: rng.range(0.0, 12.0),
                texture_kind: [TextureKind::Checker, TextureKind::Noise, TextureKind::Gradient][i % 3],
                background_kind: [BackgroundKind::Flat, BackgroundKind::Noise, BackgroundKind::Drift][i % 3],
                seed: i as u64,
                ..Default::default()
            };
            let v = generate(&cfg).unwrap();
            assert_eq!(v.frames.len(), v.gt.len());
            for b in &v.gt {
                let (x0, y0, x1, y1) = b.corners();
                assert!(x0 >= 0.0 && y0 >= 0.0);
                assert!(x1 <= cfg.frame_w as f64 && y1 <= cfg.frame_h as f64);
            }
        }
    }

    #[test]
    fn invalid_configs_are_rejected() {
        assert!(generate(&SceneConfig { num_frames: 1, ..small(0) }).is_err());
        assert!(generate(&SceneConfig { frame_w: 40, ..small(0) }).is_err());
        assert!(generate(&SceneConfig { channels: 2, ..small(0) }).is_err());
    }

    #[test]
    fn object_differs_from_background() {
        let cfg = small(3);
        let v = generate(&cfg).unwrap();
        let f = &v.frames[0];
        let b = v.gt[0];
        let (x0, y0, _, _) = b.corners();
        let inside: f64 = (0..cfg.object_h)
            .flat_map(|y| (0..cfg.object_w).map(move |x| (y, x)))
            .map(|(y, x)| f.get(y0 as usize + y, x0 as usize + x, 0))
            .map(|v| v * v)
            .sum::<f64>();
        assert!(inside > 0.0);
    }

    #[test]
    fn trajectory_steps_and_determinism() {
        let lo = Point::new(0.0, 0.0);
        let hi = Point::new(1000.0, 1000.0);
        let start = Point::new(500.0, 500.0);
        let tr = target_trajectory(start, 200, 11, lo, hi);
        assert_eq!(tr[0], start);
        for w in tr.windows(2) {
            let (dx, dy) = ((w[1].x - w[0].x).abs(), (w[1].y - w[0].y).abs());
            assert!((1.0..=10.0).contains(&dx) && (1.0..=10.0).contains(&dy));
        }
        assert_eq!(tr, target_trajectory(start, 200, 11, lo, hi));
        assert_eq!(target_trajectory(start, 1, 3, lo, hi), vec![start]);
    }

    #[test]
    fn trajectory_stays_in_bounds() {
        let lo = Point::new(16.0, 16.0);
        let hi = Point::new(144.0, 144.0);
        let tr = target_trajectory(Point::new(20.0, 140.0), 500, 2, lo, hi);
        assert!(tr.iter().all(|p| p.x >= 16.0 && p.x <= 144.0 && p.y >= 16.0 && p.y <= 144.0));
    }

    proptest::proptest! {
        #![proptest_config(proptest::prelude::ProptestConfig::with_cases(64))]
        #[test]
        fn trajectories_stay_inside_any_box(seed in 0u64..1_000_000, x in 16.0f64..144.0, y in 16.0f64..144.0) {
            let lo = Point::new(16.0, 16.0);
            let hi = Point::new(144.0, 144.0);
            let tr = target_trajectory(Point::new(x, y), 300, seed, lo, hi);
            proptest::prop_assert!(tr.iter().all(|p| p.x >= lo.x && p.x <= hi.x && p.y >= lo.y && p.y <= hi.y));
            proptest::prop_assert_eq!(tr.clone(), target_trajectory(Point::new(x, y), 300, seed, lo, hi));
        }
    }
}
