//! A crude object detector used when the attacker has no annotated box:
//! thresholded local-contrast saliency, connected components, and the
//! largest component (ties go to the one nearest the frame center).

use crate::frame::Grid;
use crate::geometry::{BBox, Point};

const WINDOW_RADIUS: usize = 2;
const THRESHOLD_SIGMAS: f64 = 2.0;
const MIN_SIDE: f64 = 8.0;

/// Local standard deviation of the channel-mean image over a square window.
pub fn saliency(frame: &Grid) -> Vec<f64> {
    let (h, w, c) = frame.shape();
    let gray: Vec<f64> = frame
        .data()
        .chunks_exact(c)
        .map(|px| px.iter().sum::<f64>() / c as f64)
        .collect();
    let w1 = w + 1;
    let mut s1 = vec![0.0; (h + 1) * w1];
    let mut s2 = vec![0.0; (h + 1) * w1];
    for y in 0..h {
        let (mut r1, mut r2) = (0.0, 0.0);
        for x in 0..w {
            let v = gray[y * w + x];
            r1 += v;
            r2 += v * v;
            s1[(y + 1) * w1 + x + 1] = s1[y * w1 + x + 1] + r1;
            s2[(y + 1) * w1 + x + 1] = s2[y * w1 + x + 1] + r2;
        }
    }
    let r = WINDOW_RADIUS;
    let mut out = vec![0.0; h * w];
    for y in 0..h {
        let (y0, y1) = (y.saturating_sub(r), (y + r + 1).min(h));
        for x in 0..w {
            let (x0, x1) = (x.saturating_sub(r), (x + r + 1).min(w));
            let n = ((y1 - y0) * (x1 - x0)) as f64;
            let sum = |t: &[f64]| t[y1 * w1 + x1] - t[y0 * w1 + x1] - t[y1 * w1 + x0] + t[y0 * w1 + x0];
            let m = sum(&s1) / n;
            out[y * w + x] = (sum(&s2) / n - m * m).max(0.0).sqrt();
        }
    }
    out
}

/// Bounding box of the largest salient component; a
/// centered window a fifth of the frame wide when nothing stands out.
pub fn detect_object(frame: &Grid) -> BBox {
    let (h, w, _) = frame.shape();
    let sal = saliency(frame);
    let n = sal.len() as f64;
    let mean = sal.iter().sum::<f64>() / n;
    let sd = (sal.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n).sqrt();
    let thr = mean + THRESHOLD_SIGMAS * sd;
    let on: Vec<bool> = sal.iter().map(|&v| sd > 0.0 && v > thr).collect();

    let center = Point::new(w as f64 / 2.0, h as f64 / 2.0);
    let mut seen = vec![false; h * w];
    let mut best: Option<(f64, BBox)> = None;
    let mut stack = Vec::new();
    for start in 0..h * w {
        if !on[start] || seen[start] {
            continue;
        }
        seen[start] = true;
        stack.push(start);
        let (mut x0, mut y0, mut x1, mut y1) = (w, h, 0, 0);
        let (mut sx, mut sy, mut count) = (0.0, 0.0, 0usize);
        while let Some(i) = stack.pop() {
            let (y, x) = (i / w, i % w);
            x0 = x0.min(x);
            x1 = x1.max(x);
            y0 = y0.min(y);
            y1 = y1.max(y);
            sx += x as f64 + 0.5;
            sy += y as f64 + 0.5;
            count += 1;
            let mut visit = |j: usize| {
                if on[j] && !seen[j] {
                    seen[j] = true;
                    stack.push(j);
                }
            };
            if x > 0 {
                visit(i - 1);
            }
            if x + 1 < w {
                visit(i + 1);
            }
            if y > 0 {
                visit(i - w);
            }
            if y + 1 < h {
                visit(i + w);
            }
        }
        // the window spreads an edge response r pixels outward
        let shrink = 2.0 * WINDOW_RADIUS as f64;
        let bw = ((x1 - x0 + 1) as f64 - shrink).max(MIN_SIDE);
        let bh = ((y1 - y0 + 1) as f64 - shrink).max(MIN_SIDE);
        if (x1 - x0 + 1) as f64 * ((y1 - y0 + 1) as f64) < MIN_SIDE * MIN_SIDE {
            continue;
        }
        let centroid = Point::new(sx / count as f64, sy / count as f64);
        // largest component, ties to the one nearest the center
        let d = centroid.dist(center) - (w * h) as f64 * count as f64;
        let b = BBox::new(((x0 + x1 + 1) as f64 / 2.0).round(), ((y0 + y1 + 1) as f64 / 2.0).round(), bw, bh);
        if best.as_ref().map_or(true, |(bd, _)| d < *bd) {
            best = Some((d, b));
        }
    }
    best.map(|(_, b)| b).unwrap_or_else(|| {
        let s = (w.min(h) as f64 / 5.0).round().max(1.0);
        BBox::new((w as f64 / 2.0).round(), (h as f64 / 2.0).round(), s, s)
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::iou;
    use crate::scene::{generate, SceneConfig};

    #[test]
    fn finds_the_synthetic_object() {
        for seed in 0..20 {
            let v = generate(&SceneConfig {
                num_frames: 2,
                seed,
                ..SceneConfig::default()
            })
            .unwrap();
            let b = detect_object(v.frames[0].grid());
            assert!(iou(&b, &v.gt[0]) > 0.8, "seed {seed}: {b:?} vs {:?}", v.gt[0]);
        }
    }

    #[test]
    fn flat_frame_falls_back_to_center() {
        let b = detect_object(&Grid::filled(100, 80, 3, 50.0));
        assert_eq!(b, BBox::new(40.0, 50.0, 16.0, 16.0));
    }

    #[test]
    fn saliency_of_flat_is_zero() {
        assert!(saliency(&Grid::filled(9, 9, 1, 3.0)).iter().all(|v| v.abs() < 1e-6));
    }
}
