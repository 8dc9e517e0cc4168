//! Pixel grids: frames, perturbations, and the crop/embed plumbing between
//! frame and search-region coordinates.
//!
//! Grids are stored row-major, channel-interleaved (`HWC`) on a 0–255 scale.

use crate::error::{Error, Result};
use crate::geometry::BBox;

pub const PIXEL_MAX: f64 = 255.0;

/// Default L∞ budget on the 0–255 scale.
pub const DEFAULT_BUDGET: f64 = 16.0;

/// Real-valued `H×W×C` grid without range constraints.
#[derive(Debug, Clone, PartialEq)]
pub struct Grid {
    height: usize,
    width: usize,
    channels: usize,
    data: Vec<f64>,
}

impl Grid {
    pub fn zeros(height: usize, width: usize, channels: usize) -> Self {
        Self::filled(height, width, channels, 0.0)
    }

    pub fn filled(height: usize, width: usize, channels: usize, v: f64) -> Self {
        Self {
            height,
            width,
            channels,
            data: vec![v; height * width * channels],
        }
    }

    pub fn from_vec(height: usize, width: usize, channels: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != height * width * channels || height == 0 || width == 0 || channels == 0 {
            return Err(Error::BadDimensions(format!(
                "{height}x{width}x{channels} with {} values",
                data.len()
            )));
        }
        Ok(Self {
            height,
            width,
            channels,
            data,
        })
    }

    pub fn zeros_like(other: &Grid) -> Self {
        Self::zeros(other.height, other.width, other.channels)
    }

    pub fn height(&self) -> usize {
        self.height
    }
    pub fn width(&self) -> usize {
        self.width
    }
    pub fn channels(&self) -> usize {
        self.channels
    }
    pub fn shape(&self) -> (usize, usize, usize) {
        (self.height, self.width, self.channels)
    }
    pub fn len(&self) -> usize {
        self.data.len()
    }
    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }
    pub fn data(&self) -> &[f64] {
        &self.data
    }
    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }
    pub fn into_vec(self) -> Vec<f64> {
        self.data
    }

    #[inline]
    pub fn index(&self, y: usize, x: usize, c: usize) -> usize {
        (y * self.width + x) * self.channels + c
    }

    #[inline]
    pub fn get(&self, y: usize, x: usize, c: usize) -> f64 {
        self.data[self.index(y, x, c)]
    }

    #[inline]
    pub fn set(&mut self, y: usize, x: usize, c: usize, v: f64) {
        let i = self.index(y, x, c);
        self.data[i] = v;
    }

    pub fn check_same_shape(&self, other: &Grid) -> Result<()> {
        if self.shape() != other.shape() {
            return Err(Error::ShapeMismatch {
                expected: self.shape(),
                got: other.shape(),
            });
        }
        Ok(())
    }

    pub fn add_assign(&mut self, other: &Grid) -> Result<()> {
        self.check_same_shape(other)?;
        self.data
            .iter_mut()
            .zip(&other.data)
            .for_each(|(a, b)| *a += b);
        Ok(())
    }

    pub fn sub(&self, other: &Grid) -> Result<Grid> {
        self.check_same_shape(other)?;
        let data = self.data.iter().zip(&other.data).map(|(a, b)| a - b).collect();
        Ok(self.like(data))
    }

    /// Same shape, new contents.
    fn like(&self, data: Vec<f64>) -> Grid {
        debug_assert_eq!(data.len(), self.data.len());
        Grid {
            height: self.height,
            width: self.width,
            channels: self.channels,
            data,
        }
    }

    pub fn scale(&mut self, s: f64) {
        self.data.iter_mut().for_each(|v| *v *= s);
    }

    pub fn max_abs(&self) -> f64 {
        self.data.iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    pub fn sum_abs(&self) -> f64 {
        self.data.iter().map(|v| v.abs()).sum()
    }

    pub fn mean_abs(&self) -> f64 {
        self.sum_abs() / self.data.len() as f64
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn channel_means(&self) -> Vec<f64> {
        let mut sums = vec![0.0; self.channels];
        for px in self.data.chunks_exact(self.channels) {
            for (s, v) in sums.iter_mut().zip(px) {
                *s += v;
            }
        }
        let n = (self.height * self.width) as f64;
        sums.into_iter().map(|s| s / n).collect()
    }
}

/// Integer pixel rectangle obtained by rounding a box. May extend outside a frame.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Rect {
    pub x0: i64,
    pub y0: i64,
    pub w: usize,
    pub h: usize,
}

impl Rect {
    pub fn from_bbox(b: &BBox) -> Result<Self> {
        let (x0, y0, _, _) = b.corners();
        let w = b.w.round();
        let h = b.h.round();
        if w < 1.0 || h < 1.0 {
            return Err(Error::EmptyRegion);
        }
        Ok(Self {
            x0: x0.round() as i64,
            y0: y0.round() as i64,
            w: w as usize,
            h: h as usize,
        })
    }

    pub fn to_bbox(&self) -> BBox {
        BBox::from_corner(self.x0 as f64, self.y0 as f64, self.w as f64, self.h as f64)
    }

    /// Iterates `(ry, fy)` pairs for region rows that land inside `0..frame_h`.
    fn rows_inside(&self, frame_h: usize) -> impl Iterator<Item = (usize, usize)> + '_ {
        (0..self.h).filter_map(move |ry| {
            let fy = self.y0 + ry as i64;
            (fy >= 0 && (fy as usize) < frame_h).then_some((ry, fy as usize))
        })
    }

    /// Column span `(rx_start, fx_start, len)` of the overlap with `0..frame_w`.
    fn cols_inside(&self, frame_w: usize) -> Option<(usize, usize, usize)> {
        let lo = self.x0.max(0);
        let hi = (self.x0 + self.w as i64).min(frame_w as i64);
        (hi > lo).then(|| ((lo - self.x0) as usize, lo as usize, (hi - lo) as usize))
    }
}

/// A video frame: values guaranteed within `[0, 255]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Frame(Grid);

impl Frame {
    pub fn new(grid: Grid) -> Result<Self> {
        if grid.channels != 1 && grid.channels != 3 {
            return Err(Error::BadDimensions(format!("{} channels", grid.channels)));
        }
        if grid.data.iter().any(|v| !(0.0..=PIXEL_MAX).contains(v)) {
            return Err(Error::BadDimensions("pixel value outside [0,255]".into()));
        }
        Ok(Self(grid))
    }

    /// Clamps every value into range.
    pub fn from_clamped(mut grid: Grid) -> Self {
        grid.data
            .iter_mut()
            .for_each(|v| *v = v.clamp(0.0, PIXEL_MAX));
        Self(grid)
    }

    pub fn grid(&self) -> &Grid {
        &self.0
    }

    pub fn into_grid(self) -> Grid {
        self.0
    }

    pub fn shape(&self) -> (usize, usize, usize) {
        self.0.shape()
    }
}

impl std::ops::Deref for Frame {
    type Target = Grid;
    fn deref(&self) -> &Grid {
        &self.0
    }
}

/// Additive distortion bounded in L∞ by `budget`.
#[derive(Debug, Clone, PartialEq)]
pub struct Perturbation {
    grid: Grid,
    budget: f64,
}

impl Perturbation {
    pub fn zeros(height: usize, width: usize, channels: usize, budget: f64) -> Self {
        Self {
            grid: Grid::zeros(height, width, channels),
            budget,
        }
    }

    /// Clips `grid` into `[-budget, budget]`.
    pub fn clipped(mut grid: Grid, budget: f64) -> Self {
        grid.data
            .iter_mut()
            .for_each(|v| *v = v.clamp(-budget, budget));
        Self { grid, budget }
    }

    pub fn grid(&self) -> &Grid {
        &self.grid
    }

    pub fn into_grid(self) -> Grid {
        self.grid
    }

    pub fn budget(&self) -> f64 {
        self.budget
    }
}

/// Adversarial frame `clip(frame + pert, 0, 255)`.
pub fn apply(frame: &Frame, pert: &Grid) -> Result<Frame> {
    frame.grid().check_same_shape(pert)?;
    let data = frame
        .data()
        .iter()
        .zip(pert.data())
        .map(|(x, e)| (x + e).clamp(0.0, PIXEL_MAX))
        .collect();
    Ok(Frame(frame.grid().like(data)))
}

/// Sub-grid under `region`; out-of-frame pixels take the channel means.
pub fn crop(frame: &Grid, region: &BBox) -> Result<Grid> {
    let rect = Rect::from_bbox(region)?;
    Ok(crop_rect(frame, &rect, Some(&frame.channel_means())))
}

/// Crop with explicit padding values (`None` pads with zeros).
pub fn crop_rect(frame: &Grid, rect: &Rect, pad: Option<&[f64]>) -> Grid {
    let c = frame.channels;
    let mut out = Grid::zeros(rect.h, rect.w, c);
    if let Some(pad) = pad {
        for px in out.data.chunks_exact_mut(c) {
            px.copy_from_slice(pad);
        }
    }
    if let Some((rx, fx, len)) = rect.cols_inside(frame.width) {
        for (ry, fy) in rect.rows_inside(frame.height) {
            let src = frame.index(fy, fx, 0);
            let dst = out.index(ry, rx, 0);
            out.data[dst..dst + len * c].copy_from_slice(&frame.data[src..src + len * c]);
        }
    }
    out
}

/// Scatters a region-shaped patch into a zero grid of `dst_shape`.
pub fn embed(dst_shape: (usize, usize, usize), region: &BBox, patch: &Grid) -> Result<Grid> {
    let rect = Rect::from_bbox(region)?;
    let (h, w, c) = dst_shape;
    if (rect.h, rect.w, c) != patch.shape() {
        return Err(Error::ShapeMismatch {
            expected: (rect.h, rect.w, c),
            got: patch.shape(),
        });
    }
    let mut out = Grid::zeros(h, w, c);
    embed_add(&mut out, &rect, patch);
    Ok(out)
}

/// Adds `patch` into `dst` at `rect`, dropping out-of-frame pixels.
pub fn embed_add(dst: &mut Grid, rect: &Rect, patch: &Grid) {
    let c = dst.channels;
    if let Some((rx, fx, len)) = rect.cols_inside(dst.width) {
        for (ry, fy) in rect.rows_inside(dst.height) {
            let d = dst.index(fy, fx, 0);
            let s = patch.index(ry, rx, 0);
            for (a, b) in dst.data[d..d + len * c]
                .iter_mut()
                .zip(&patch.data[s..s + len * c])
            {
                *a += b;
            }
        }
    }
}

/// Per-pixel mask of region cells that fall inside a frame.
pub fn inside_mask(frame_h: usize, frame_w: usize, rect: &Rect) -> Vec<bool> {
    let mut mask = vec![false; rect.h * rect.w];
    if let Some((rx, _, len)) = rect.cols_inside(frame_w) {
        for (ry, _) in rect.rows_inside(frame_h) {
            mask[ry * rect.w + rx..ry * rect.w + rx + len].fill(true);
        }
    }
    mask
}

/// Heatmap of `|pert|·gain`, clipped to the pixel range.
pub fn visualize_perturbation(pert: &Grid, gain: f64) -> Frame {
    let data = pert
        .data()
        .iter()
        .map(|v| (v.abs() * gain).clamp(0.0, PIXEL_MAX))
        .collect();
    Frame(pert.like(data))
}
