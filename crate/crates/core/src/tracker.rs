//! Differentiable template-matching tracker.
//!
//! Pixels pass through a fixed linear feature kernel; every template-sized
//! window of the search region is scored by normalized cross-correlation
//! against the feature template, and the best-scoring window is the
//! prediction. Gradients of weighted activation sums with respect to region
//! pixels are exact.

use serde::{Deserialize, Serialize};

use crate::correlate::{correlate_valid, Planes, TemplateSpectrum};
use crate::error::{Error, Result};
use crate::frame::{crop, Grid, Rect};
use crate::geometry::{BBox, Point};

/// Default search-region side as a multiple of the template's larger side.
pub const DEFAULT_CONTEXT: f64 = 4.0;

/// Patches whose centered energy falls below this fraction of their raw
/// energy score zero and contribute no gradient.
const FLAT_PATCH_RATIO: f64 = 1e-10;

/// Fixed linear feature map applied per channel with clamp-to-edge borders.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FeatureKernel {
    Identity,
    #[serde(rename = "box_blur_3")]
    BoxBlur3,
    #[serde(rename = "box_blur_5")]
    BoxBlur5,
    /// Center pixel minus the 5×5 neighbourhood mean.
    CenterSurround,
}

impl FeatureKernel {
    pub const ALL: [FeatureKernel; 4] = [
        FeatureKernel::Identity,
        FeatureKernel::BoxBlur3,
        FeatureKernel::BoxBlur5,
        FeatureKernel::CenterSurround,
    ];

    pub fn name(&self) -> &'static str {
        match self {
            FeatureKernel::Identity => "identity",
            FeatureKernel::BoxBlur3 => "box_blur_3",
            FeatureKernel::BoxBlur5 => "box_blur_5",
            FeatureKernel::CenterSurround => "center_surround",
        }
    }

    /// Odd kernel size and row-major coefficients.
    pub fn coefficients(&self) -> (usize, Vec<f64>) {
        match self {
            FeatureKernel::Identity => (1, vec![1.0]),
            FeatureKernel::BoxBlur3 => (3, vec![1.0 / 9.0; 9]),
            FeatureKernel::BoxBlur5 => (5, vec![1.0 / 25.0; 25]),
            FeatureKernel::CenterSurround => {
                let mut k = vec![-1.0 / 25.0; 25];
                k[12] += 1.0;
                (5, k)
            }
        }
    }

    /// Maps an `HWC` grid to planar features of the same spatial size.
    pub fn apply(&self, g: &Grid) -> Planes {
        let (h, w, c) = g.shape();
        let mut out = Planes::zeros(c, h, w);
        let src = g.data();
        for ch in 0..c {
            let plane = out.plane_mut(ch);
            for (i, v) in plane.iter_mut().enumerate() {
                *v = src[i * c + ch];
            }
        }
        match self {
            FeatureKernel::Identity => {}
            FeatureKernel::BoxBlur3 => box_filter(&mut out, 1, false),
            FeatureKernel::BoxBlur5 => box_filter(&mut out, 2, false),
            FeatureKernel::CenterSurround => {
                let mut blur = out.clone();
                box_filter(&mut blur, 2, false);
                out.data.iter_mut().zip(&blur.data).for_each(|(a, b)| *a -= b);
            }
        }
        out
    }

    /// Adjoint of [`FeatureKernel::apply`]: pulls a feature-space gradient
    /// back to pixel space.
    pub fn apply_transpose(&self, g: &Planes) -> Grid {
        let (c, h, w) = (g.channels, g.height, g.width);
        let mut planes = g.clone();
        match self {
            FeatureKernel::Identity => {}
            FeatureKernel::BoxBlur3 => box_filter(&mut planes, 1, true),
            FeatureKernel::BoxBlur5 => box_filter(&mut planes, 2, true),
            FeatureKernel::CenterSurround => {
                let mut blur = planes.clone();
                box_filter(&mut blur, 2, true);
                planes.data.iter_mut().zip(&blur.data).for_each(|(a, b)| *a -= b);
            }
        }
        let mut out = Grid::zeros(h, w, c);
        let dst = out.data_mut();
        for ch in 0..c {
            for (i, v) in planes.plane(ch).iter().enumerate() {
                dst[i * c + ch] = *v;
            }
        }
        out
    }
}

/// Separable `(2r+1)²` mean filter with clamp-to-edge borders, or its adjoint.
fn box_filter(p: &mut Planes, r: usize, transpose: bool) {
    let (h, w) = (p.height, p.width);
    let mut line = Vec::new();
    let mut out = Vec::new();
    for ch in 0..p.channels {
        let plane = p.plane_mut(ch);
        for y in 0..h {
            line.clear();
            line.extend_from_slice(&plane[y * w..(y + 1) * w]);
            box_line(&line, r, transpose, &mut out);
            plane[y * w..(y + 1) * w].copy_from_slice(&out);
        }
        for x in 0..w {
            line.clear();
            line.extend((0..h).map(|y| plane[y * w + x]));
            box_line(&line, r, transpose, &mut out);
            for (y, v) in out.iter().enumerate() {
                plane[y * w + x] = *v;
            }
        }
    }
}

fn box_line(src: &[f64], r: usize, transpose: bool, out: &mut Vec<f64>) {
    let n = src.len();
    let k = (2 * r + 1) as f64;
    let r = r as isize;
    out.clear();
    out.resize(n, 0.0);
    for i in 0..n {
        for j in -r..=r {
            let s = clamp_index(i as isize + j, n);
            if transpose {
                out[s] += src[i] / k;
            } else {
                out[i] += src[s] / k;
            }
        }
    }
}

#[inline]
fn clamp_index(i: isize, n: usize) -> usize {
    i.clamp(0, n as isize - 1) as usize
}

/// Tracker state owned by one per-video loop.
#[derive(Debug, Clone)]
pub struct TrackerState {
    /// Zero-mean, unit-norm feature template.
    template: Planes,
    /// Norm of the centered feature template before normalization.
    template_norm: f64,
    pub template_box: BBox,
    pub prev_box: BBox,
    pub kernel: FeatureKernel,
    pub context_factor: f64,
    spectrum: Option<TemplateSpectrum>,
}

/// Candidate activations over translation offsets.
#[derive(Debug, Clone, PartialEq)]
pub struct ResponseMap {
    /// Row-major over `(dy, dx)`.
    pub activations: Vec<f64>,
    pub rows: usize,
    pub cols: usize,
    /// Frame coordinates of the region's top-left pixel.
    pub origin: Point,
    pub cand_w: f64,
    pub cand_h: f64,
}

impl ResponseMap {
    pub fn len(&self) -> usize {
        self.activations.len()
    }

    pub fn is_empty(&self) -> bool {
        self.activations.is_empty()
    }

    pub fn offset(&self, i: usize) -> (usize, usize) {
        (i / self.cols, i % self.cols)
    }

    pub fn candidate(&self, i: usize) -> BBox {
        let (dy, dx) = self.offset(i);
        BBox::from_corner(
            self.origin.x + dx as f64,
            self.origin.y + dy as f64,
            self.cand_w,
            self.cand_h,
        )
    }

    /// Candidate whose offset is nearest to `b`'s top-left corner, clamped to the grid.
    pub fn nearest_to_box(&self, b: &BBox) -> usize {
        let (x0, y0, _, _) = b.corners();
        let dx = (x0 - self.origin.x).round().clamp(0.0, (self.cols - 1) as f64) as usize;
        let dy = (y0 - self.origin.y).round().clamp(0.0, (self.rows - 1) as f64) as usize;
        dy * self.cols + dx
    }

    /// Candidate whose center is nearest to `p`.
    pub fn nearest_to_point(&self, p: Point) -> usize {
        let dx = (p.x - self.origin.x - self.cand_w / 2.0)
            .round()
            .clamp(0.0, (self.cols - 1) as f64) as usize;
        let dy = (p.y - self.origin.y - self.cand_h / 2.0)
            .round()
            .clamp(0.0, (self.rows - 1) as f64) as usize;
        dy * self.cols + dx
    }
}

impl TrackerState {
    /// Crops the template from `frame0` under `gt0`.
    pub fn init(frame0: &Grid, gt0: BBox, kernel: FeatureKernel) -> Result<Self> {
        Self::init_with_context(frame0, gt0, kernel, DEFAULT_CONTEXT)
    }

    pub fn init_with_context(
        frame0: &Grid,
        gt0: BBox,
        kernel: FeatureKernel,
        context_factor: f64,
    ) -> Result<Self> {
        let rect = Rect::from_bbox(&gt0)?;
        let patch = crop(frame0, &gt0)?;
        let mut template = kernel.apply(&patch);
        let n = template.data.len() as f64;
        let mean = template.data.iter().sum::<f64>() / n;
        template.data.iter_mut().for_each(|v| *v -= mean);
        let norm = template.data.iter().map(|v| v * v).sum::<f64>().sqrt();
        if norm > 0.0 {
            template.data.iter_mut().for_each(|v| *v /= norm);
        }
        let template_box = BBox::from_corner(
            rect.x0 as f64,
            rect.y0 as f64,
            rect.w as f64,
            rect.h as f64,
        );
        let mut state = Self {
            template,
            template_norm: norm,
            template_box,
            prev_box: template_box,
            kernel,
            context_factor,
            spectrum: None,
        };
        let side = state.region_side();
        state.spectrum = Some(TemplateSpectrum::new(&state.template, side, side));
        Ok(state)
    }

    pub fn template(&self) -> &Planes {
        &self.template
    }

    pub fn template_norm(&self) -> f64 {
        self.template_norm
    }

    pub fn template_size(&self) -> (usize, usize) {
        (self.template.height, self.template.width)
    }

    pub fn region_side(&self) -> usize {
        let (th, tw) = self.template_size();
        ((self.context_factor * th.max(tw) as f64).round() as usize).max(th.max(tw))
    }

    /// Square region of side `context·max(w, h)` centered on `around`.
    pub fn region_rect(&self, around: &BBox) -> Rect {
        let side = self.region_side() as f64;
        let c = around.center();
        Rect {
            x0: (c.x - side / 2.0).round() as i64,
            y0: (c.y - side / 2.0).round() as i64,
            w: side as usize,
            h: side as usize,
        }
    }

    /// Search region centered on the previous prediction, mean-padded at borders.
    pub fn search_region(&self, frame: &Grid) -> (Grid, Point) {
        self.region_at(frame, &self.prev_box)
    }

    pub fn region_at(&self, frame: &Grid, around: &BBox) -> (Grid, Point) {
        let rect = self.region_rect(around);
        let region = crop(frame, &rect.to_bbox()).expect("region side is at least one pixel");
        (region, Point::new(rect.x0 as f64, rect.y0 as f64))
    }

    /// Normalized cross-correlation response over every template-sized window.
    pub fn respond(&self, region: &Grid, origin: Point) -> Result<ResponseMap> {
        let (th, tw) = self.template_size();
        let (rh, rw, _) = region.shape();
        if rh < th || rw < tw {
            return Err(Error::RegionTooSmall {
                region: (rh, rw),
                template: (th, tw),
            });
        }
        let mut feat = self.kernel.apply(region);
        // a global shift leaves NCC unchanged and keeps the FFT well scaled
        let shift = feat.data.iter().sum::<f64>() / feat.data.len() as f64;
        feat.data.iter_mut().for_each(|v| *v -= shift);

        let numer = match &self.spectrum {
            Some(s) if s.canvas() == (rh, rw) => correlate_valid(&feat, s, th, tw),
            _ => correlate_valid(&feat, &TemplateSpectrum::new(&self.template, rh, rw), th, tw),
        };
        let (rows, cols) = (rh - th + 1, rw - tw + 1);
        let stats = WindowStats::new(&feat, th, tw);
        let n = (th * tw * feat.channels) as f64;
        let activations = (0..rows * cols)
            .map(|i| {
                let (dy, dx) = (i / cols, i % cols);
                let (s1, s2) = stats.sums(dy, dx);
                let energy = s2 - s1 * s1 / n;
                if energy <= FLAT_PATCH_RATIO * s2 || energy <= 0.0 {
                    0.0
                } else {
                    (numer[i] / energy.sqrt()).clamp(-1.0, 1.0)
                }
            })
            .collect();
        Ok(ResponseMap {
            activations,
            rows,
            cols,
            origin,
            cand_w: tw as f64,
            cand_h: th as f64,
        })
    }

    /// Exact gradient of `Σ weights[i]·y_i` with respect to region pixels.
    pub fn grad_activations(&self, region: &Grid, weights: &[f64]) -> Result<Grid> {
        let (th, tw) = self.template_size();
        let (rh, rw, c) = region.shape();
        if rh < th || rw < tw {
            return Err(Error::RegionTooSmall {
                region: (rh, rw),
                template: (th, tw),
            });
        }
        let (rows, cols) = (rh - th + 1, rw - tw + 1);
        if weights.len() != rows * cols {
            return Err(Error::LengthMismatch(weights.len(), rows * cols));
        }
        if weights.iter().all(|&w| w == 0.0) {
            return Ok(Grid::zeros(rh, rw, c));
        }
        let feat = self.kernel.apply(region);
        let mut fgrad = Planes::zeros(c, rh, rw);
        let n = (th * tw * c) as f64;
        let mut patch = vec![0.0; th * tw * c];
        for (i, &wgt) in weights.iter().enumerate() {
            if wgt == 0.0 {
                continue;
            }
            let (dy, dx) = (i / cols, i % cols);
            for ch in 0..c {
                let plane = feat.plane(ch);
                for y in 0..th {
                    let src = &plane[(dy + y) * rw + dx..(dy + y) * rw + dx + tw];
                    patch[(ch * th + y) * tw..(ch * th + y + 1) * tw].copy_from_slice(src);
                }
            }
            let mean = patch.iter().sum::<f64>() / n;
            let raw = patch.iter().map(|v| v * v).sum::<f64>();
            let energy = patch.iter().map(|v| (v - mean).powi(2)).sum::<f64>();
            if energy <= FLAT_PATCH_RATIO * raw || energy <= 0.0 {
                continue;
            }
            let sigma = energy.sqrt();
            let y_i = self
                .template
                .data
                .iter()
                .zip(&patch)
                .map(|(t, p)| t * (p - mean))
                .sum::<f64>()
                / sigma;
            for ch in 0..c {
                let gplane = fgrad.plane_mut(ch);
                for y in 0..th {
                    for x in 0..tw {
                        let k = (ch * th + y) * tw + x;
                        let p_hat = (patch[k] - mean) / sigma;
                        gplane[(dy + y) * rw + dx + x] +=
                            wgt * (self.template.data[k] - y_i * p_hat) / sigma;
                    }
                }
            }
        }
        Ok(self.kernel.apply_transpose(&fgrad))
    }
}

/// Argmax with ties broken by the smallest row-major index.
pub fn predict(response: &ResponseMap) -> (BBox, f64, usize) {
    let mut best = 0;
    for (i, &v) in response.activations.iter().enumerate() {
        if v > response.activations[best] {
            best = i;
        }
    }
    (response.candidate(best), response.activations[best], best)
}

/// Summed-area tables of feature values and squares, channels pooled.
struct WindowStats {
    w1: usize,
    s1: Vec<f64>,
    s2: Vec<f64>,
    th: usize,
    tw: usize,
}

impl WindowStats {
    fn new(feat: &Planes, th: usize, tw: usize) -> Self {
        let (h, w) = (feat.height, feat.width);
        let w1 = w + 1;
        let mut s1 = vec![0.0; (h + 1) * w1];
        let mut s2 = vec![0.0; (h + 1) * w1];
        for y in 0..h {
            let (mut r1, mut r2) = (0.0, 0.0);
            for x in 0..w {
                let mut v1 = 0.0;
                let mut v2 = 0.0;
                for ch in 0..feat.channels {
                    let v = feat.plane(ch)[y * w + x];
                    v1 += v;
                    v2 += v * v;
                }
                r1 += v1;
                r2 += v2;
                s1[(y + 1) * w1 + x + 1] = s1[y * w1 + x + 1] + r1;
                s2[(y + 1) * w1 + x + 1] = s2[y * w1 + x + 1] + r2;
            }
        }
        Self { w1, s1, s2, th, tw }
    }

    fn sums(&self, dy: usize, dx: usize) -> (f64, f64) {
        let box_sum = |t: &[f64]| {
            let (a, b) = (dy * self.w1 + dx, dy * self.w1 + dx + self.tw);
            let (c, d) = ((dy + self.th) * self.w1 + dx, (dy + self.th) * self.w1 + dx + self.tw);
            t[d] - t[b] - t[c] + t[a]
        };
        (box_sum(&self.s1), box_sum(&self.s2))
    }
}
