//! Valid-mode multi-channel cross-correlation through 2-D FFTs.
//!
//! Channels are packed in pairs as `a + i·b` for both the image and the
//! template; the real part of the circular correlation of the packed signals
//! equals the sum of the two real correlations, so three channels cost two
//! forward transforms and one inverse.

use std::cell::RefCell;
use std::sync::Arc;

use rustfft::num_complex::Complex;
use rustfft::{Fft, FftPlanner};

thread_local! {
    static PLANNER: RefCell<FftPlanner<f64>> = RefCell::new(FftPlanner::new());
}

fn plans(n: usize) -> (Arc<dyn Fft<f64>>, Arc<dyn Fft<f64>>) {
    PLANNER.with(|p| {
        let mut p = p.borrow_mut();
        (p.plan_fft_forward(n), p.plan_fft_inverse(n))
    })
}

/// Planar `C×H×W` real features.
#[derive(Debug, Clone, PartialEq)]
pub struct Planes {
    pub channels: usize,
    pub height: usize,
    pub width: usize,
    pub data: Vec<f64>,
}

impl Planes {
    pub fn zeros(channels: usize, height: usize, width: usize) -> Self {
        Self {
            channels,
            height,
            width,
            data: vec![0.0; channels * height * width],
        }
    }

    pub fn plane(&self, c: usize) -> &[f64] {
        let n = self.height * self.width;
        &self.data[c * n..(c + 1) * n]
    }

    pub fn plane_mut(&mut self, c: usize) -> &mut [f64] {
        let n = self.height * self.width;
        &mut self.data[c * n..(c + 1) * n]
    }
}

/// Spectrum of a template zero-padded to an `H×W` canvas, stored transposed
/// (`[kx][ky]`), ready to be conjugate-multiplied with image spectra.
#[derive(Debug, Clone)]
pub struct TemplateSpectrum {
    height: usize,
    width: usize,
    packed: Vec<Vec<Complex<f64>>>,
}

impl TemplateSpectrum {
    pub fn new(template: &Planes, height: usize, width: usize) -> Self {
        assert!(template.height <= height && template.width <= width);
        let packed = pack(template, height, width)
            .into_iter()
            .map(|mut buf| {
                fft2_forward(&mut buf, height, width);
                buf
            })
            .collect();
        Self {
            height,
            width,
            packed,
        }
    }

    pub fn canvas(&self) -> (usize, usize) {
        (self.height, self.width)
    }
}

/// Packs channels pairwise into complex canvases of size `height×width`.
fn pack(p: &Planes, height: usize, width: usize) -> Vec<Vec<Complex<f64>>> {
    (0..p.channels)
        .step_by(2)
        .map(|c| {
            let mut buf = vec![Complex::new(0.0, 0.0); height * width];
            let re = p.plane(c);
            let im = (c + 1 < p.channels).then(|| p.plane(c + 1));
            for y in 0..p.height {
                for x in 0..p.width {
                    let s = y * p.width + x;
                    buf[y * width + x] = Complex::new(re[s], im.map_or(0.0, |im| im[s]));
                }
            }
            buf
        })
        .collect()
}

fn transpose(src: &[Complex<f64>], rows: usize, cols: usize) -> Vec<Complex<f64>> {
    let mut dst = vec![Complex::new(0.0, 0.0); src.len()];
    for r in 0..rows {
        for c in 0..cols {
            dst[c * rows + r] = src[r * cols + c];
        }
    }
    dst
}

/// Forward 2-D FFT; result is left transposed (`width` rows of `height`).
fn fft2_forward(buf: &mut Vec<Complex<f64>>, height: usize, width: usize) {
    let (row_fwd, _) = plans(width);
    let (col_fwd, _) = plans(height);
    row_fwd.process(buf);
    *buf = transpose(buf, height, width);
    col_fwd.process(buf);
}

/// Inverse of [`fft2_forward`] (unnormalized), restoring row-major layout.
fn fft2_inverse(buf: &mut Vec<Complex<f64>>, height: usize, width: usize) {
    let (_, col_inv) = plans(height);
    let (_, row_inv) = plans(width);
    col_inv.process(buf);
    *buf = transpose(buf, width, height);
    row_inv.process(buf);
}

/// `out[dy][dx] = Σ_c Σ_{y,x} template_c[y][x] · image_c[dy+y][dx+x]` for all
/// valid offsets, shape `(H−h+1) × (W−w+1)`.
pub fn correlate_valid(image: &Planes, spectrum: &TemplateSpectrum, th: usize, tw: usize) -> Vec<f64> {
    let (h, w) = (image.height, image.width);
    assert_eq!(spectrum.canvas(), (h, w), "template spectrum canvas mismatch");
    let mut acc = vec![Complex::new(0.0, 0.0); h * w];
    for (mut buf, tmpl) in pack(image, h, w).into_iter().zip(&spectrum.packed) {
        fft2_forward(&mut buf, h, w);
        for ((a, z), t) in acc.iter_mut().zip(&buf).zip(tmpl) {
            *a += z * t.conj();
        }
    }
    fft2_inverse(&mut acc, h, w);
    let scale = 1.0 / (h * w) as f64;
    let (rows, cols) = (h - th + 1, w - tw + 1);
    let mut out = Vec::with_capacity(rows * cols);
    for dy in 0..rows {
        out.extend(acc[dy * w..dy * w + cols].iter().map(|z| z.re * scale));
    }
    out
}

/// Brute-force reference for [`correlate_valid`].
pub fn correlate_direct(image: &Planes, template: &Planes) -> Vec<f64> {
    let (h, w) = (image.height, image.width);
    let (th, tw) = (template.height, template.width);
    let (rows, cols) = (h - th + 1, w - tw + 1);
    let mut out = vec![0.0; rows * cols];
    for c in 0..image.channels {
        let ip = image.plane(c);
        let tp = template.plane(c);
        for dy in 0..rows {
            for dx in 0..cols {
                let mut s = 0.0;
                for y in 0..th {
                    let irow = &ip[(dy + y) * w + dx..(dy + y) * w + dx + tw];
                    let trow = &tp[y * tw..(y + 1) * tw];
                    s += irow.iter().zip(trow).map(|(a, b)| a * b).sum::<f64>();
                }
                out[dy * cols + dx] += s;
            }
        }
    }
    out
}
