//! 2D FFT helpers shared by the simulator and the retrieval loop: centered
//! transforms, integer/subpixel translation registration, and Fourier-domain
//! shifts. Transforms are unnormalized forward and 1/(w*h) inverse.

use rustfft::num_complex::Complex64;
use rustfft::{Fft, FftPlanner};
use std::sync::Arc;

/// Cached FFT plans for one frame size. The row pass runs on the data
/// directly; the column pass runs on a cached transpose buffer.
pub(crate) struct Fft2 {
    width: usize,
    height: usize,
    fwd_w: Arc<dyn Fft<f64>>,
    inv_w: Arc<dyn Fft<f64>>,
    fwd_h: Arc<dyn Fft<f64>>,
    inv_h: Arc<dyn Fft<f64>>,
    transpose: Vec<Complex64>,
    scratch: Vec<Complex64>,
}

impl Fft2 {
    pub fn new(width: usize, height: usize) -> Self {
        let mut planner = FftPlanner::new();
        let fwd_w = planner.plan_fft_forward(width);
        let inv_w = planner.plan_fft_inverse(width);
        let fwd_h = planner.plan_fft_forward(height);
        let inv_h = planner.plan_fft_inverse(height);
        let scratch_len = fwd_w
            .get_inplace_scratch_len()
            .max(inv_w.get_inplace_scratch_len())
            .max(fwd_h.get_inplace_scratch_len())
            .max(inv_h.get_inplace_scratch_len());
        Fft2 {
            width,
            height,
            fwd_w,
            inv_w,
            fwd_h,
            inv_h,
            transpose: vec![Complex64::ZERO; width * height],
            scratch: vec![Complex64::ZERO; scratch_len],
        }
    }

    fn pass(&mut self, data: &mut [Complex64], inverse: bool) {
        debug_assert_eq!(data.len(), self.width * self.height);
        let (w, h) = (self.width, self.height);
        let row_fft = if inverse { &self.inv_w } else { &self.fwd_w };
        for row in data.chunks_exact_mut(w) {
            row_fft.process_with_scratch(row, &mut self.scratch);
        }
        for y in 0..h {
            for x in 0..w {
                self.transpose[x * h + y] = data[y * w + x];
            }
        }
        let col_fft = if inverse { &self.inv_h } else { &self.fwd_h };
        for col in self.transpose.chunks_exact_mut(h) {
            col_fft.process_with_scratch(col, &mut self.scratch);
        }
        for x in 0..w {
            for y in 0..h {
                data[y * w + x] = self.transpose[x * h + y];
            }
        }
    }

    /// Unnormalized forward DFT.
    pub fn forward(&mut self, data: &mut [Complex64]) {
        self.pass(data, false);
    }

    /// Inverse DFT scaled by 1/(w*h), so inverse(forward(x)) == x.
    pub fn inverse(&mut self, data: &mut [Complex64]) {
        self.pass(data, true);
        let norm = 1.0 / (self.width * self.height) as f64;
        for v in data.iter_mut() {
            *v *= norm;
        }
    }
}

/// Moves the origin sample (0,0) to the center (w/2, h/2).
pub(crate) fn fftshift(data: &[Complex64], width: usize, height: usize) -> Vec<Complex64> {
    let mut out = vec![Complex64::ZERO; data.len()];
    for y in 0..height {
        let ty = (y + height / 2) % height;
        for x in 0..width {
            let tx = (x + width / 2) % width;
            out[ty * width + tx] = data[y * width + x];
        }
    }
    out
}

/// Inverse of `fftshift` (identical for even sizes).
pub(crate) fn ifftshift(data: &[Complex64], width: usize, height: usize) -> Vec<Complex64> {
    let mut out = vec![Complex64::ZERO; data.len()];
    for y in 0..height {
        let ty = (y + height - height / 2) % height;
        for x in 0..width {
            let tx = (x + width - width / 2) % width;
            out[ty * width + tx] = data[y * width + x];
        }
    }
    out
}

/// Centered forward DFT: the input origin is taken at the frame center and
/// the DC term of the output lands at the frame center.
pub(crate) fn centered_forward(field: &[Complex64], width: usize, height: usize) -> Vec<Complex64> {
    let mut data = ifftshift(field, width, height);
    Fft2::new(width, height).forward(&mut data);
    fftshift(&data, width, height)
}

/// Inverse of `centered_forward`.
pub(crate) fn centered_inverse(
    spectrum: &[Complex64],
    width: usize,
    height: usize,
) -> Vec<Complex64> {
    let mut data = ifftshift(spectrum, width, height);
    Fft2::new(width, height).inverse(&mut data);
    fftshift(&data, width, height)
}

/// Signed FFT frequency index for bin k of an n-point transform.
#[inline]
fn signed_freq(k: usize, n: usize) -> f64 {
    if k <= (n - 1) / 2 {
        k as f64
    } else {
        k as f64 - n as f64
    }
}

/// Shifts a field by (dy, dx) pixels (fractional allowed) through a Fourier
/// phase ramp; the field is treated as periodic.
pub(crate) fn subpixel_shift(
    field: &[Complex64],
    width: usize,
    height: usize,
    dy: f64,
    dx: f64,
) -> Vec<Complex64> {
    let mut data = field.to_vec();
    let mut fft = Fft2::new(width, height);
    fft.forward(&mut data);
    for ky in 0..height {
        let fy = signed_freq(ky, height) / height as f64;
        for kx in 0..width {
            let fx = signed_freq(kx, width) / width as f64;
            let phase = -2.0 * std::f64::consts::PI * (fy * dy + fx * dx);
            data[ky * width + kx] *= Complex64::from_polar(1.0, phase);
        }
    }
    fft.inverse(&mut data);
    data
}

/// Result of translation registration: shifting `moving` by (dy, dx) aligns
/// it with the reference.
#[derive(Debug, Clone, Copy)]
pub(crate) struct Registration {
    pub dy: f64,
    pub dx: f64,
    /// Peak magnitude of the normalized cross-correlation surface.
    pub peak: f64,
}

/// Registers `moving` against `reference` by cross-correlation. Integer
/// precision for upsample = 1; 1/upsample pixel precision otherwise, refined
/// by a matrix-multiply DFT evaluated around the coarse peak.
pub(crate) fn register_translation(
    reference: &[Complex64],
    moving: &[Complex64],
    width: usize,
    height: usize,
    upsample: usize,
) -> Registration {
    debug_assert_eq!(reference.len(), width * height);
    debug_assert_eq!(moving.len(), width * height);
    let mut fa = reference.to_vec();
    let mut fb = moving.to_vec();
    let mut fft = Fft2::new(width, height);
    fft.forward(&mut fa);
    fft.forward(&mut fb);

    // Cross-power spectrum; plain product (not phase-normalized) matches
    // amplitude-weighted correlation, appropriate for speckle-like fields.
    let cross: Vec<Complex64> = fa.iter().zip(&fb).map(|(a, b)| a * b.conj()).collect();
    let norm_a: f64 = reference.iter().map(|v| v.norm_sqr()).sum::<f64>().sqrt();
    let norm_b: f64 = moving.iter().map(|v| v.norm_sqr()).sum::<f64>().sqrt();
    let norm = (norm_a * norm_b).max(f64::MIN_POSITIVE);

    let mut corr = cross.clone();
    fft.inverse(&mut corr);
    let mut best = (0usize, 0usize, 0.0f64);
    for y in 0..height {
        for x in 0..width {
            let m = corr[y * width + x].norm();
            if m > best.2 {
                best = (y, x, m);
            }
        }
    }
    let int_dy = signed_freq(best.0, height);
    let int_dx = signed_freq(best.1, width);
    if upsample <= 1 {
        return Registration {
            dy: int_dy,
            dx: int_dx,
            peak: best.2 / norm,
        };
    }

    // Refine on a +/-1 px window around the integer peak with step
    // 1/upsample using the matrix-multiply DFT of the cross spectrum.
    let steps = 2 * upsample + 1;
    let offsets: Vec<f64> = (0..steps)
        .map(|i| (i as isize - upsample as isize) as f64 / upsample as f64)
        .collect();
    let two_pi = 2.0 * std::f64::consts::PI;
    // row_phase[m][ky], col_phase[kx][n]
    let mut refined_best = (int_dy, int_dx, best.2);
    let mut row_phase = vec![Complex64::ZERO; steps * height];
    for (m, off) in offsets.iter().enumerate() {
        let vy = int_dy + off;
        for ky in 0..height {
            let fy = signed_freq(ky, height) / height as f64;
            row_phase[m * height + ky] = Complex64::from_polar(1.0, two_pi * fy * vy);
        }
    }
    let mut col_phase = vec![Complex64::ZERO; width * steps];
    for kx in 0..width {
        let fx = signed_freq(kx, width) / width as f64;
        for (n, off) in offsets.iter().enumerate() {
            let vx = int_dx + off;
            col_phase[kx * steps + n] = Complex64::from_polar(1.0, two_pi * fx * vx);
        }
    }
    // partial[m][kx] = sum_ky row_phase[m][ky] * cross[ky][kx]
    let mut partial = vec![Complex64::ZERO; steps * width];
    for m in 0..steps {
        for ky in 0..height {
            let r = row_phase[m * height + ky];
            let row = &cross[ky * width..(ky + 1) * width];
            let dst = &mut partial[m * width..(m + 1) * width];
            for (d, c) in dst.iter_mut().zip(row) {
                *d += r * c;
            }
        }
    }
    let scale = 1.0 / (width * height) as f64;
    for m in 0..steps {
        for n in 0..steps {
            let mut acc = Complex64::ZERO;
            for kx in 0..width {
                acc += partial[m * width + kx] * col_phase[kx * steps + n];
            }
            let mag = acc.norm() * scale;
            if mag > refined_best.2 {
                refined_best = (int_dy + offsets[m], int_dx + offsets[n], mag);
            }
        }
    }
    Registration {
        dy: refined_best.0,
        dx: refined_best.1,
        peak: refined_best.2 / norm,
    }
}
