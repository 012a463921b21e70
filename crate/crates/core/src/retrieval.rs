//! Difference-map phase retrieval with multi-run selection and coherent
//! averaging. A diffraction pattern is inverted by alternating a Fourier
//! modulus constraint and a real-space support constraint; many seeded runs
//! are filtered by their final error, aligned (global phase, subpixel
//! translation, conjugate flip), and complex-averaged.

use crate::error::{Error, Result};
use crate::fft2::{self, Fft2};
use crate::raster::{ComplexView, MeasuredPattern, Raster2D};
use rand::{RngExt, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use rustfft::num_complex::Complex64;

/// Settings for one retrieval ensemble.
#[derive(Debug, Clone)]
pub struct RetrievalConfig {
    /// Difference-map iterations per run.
    pub iterations: usize,
    /// Relaxation parameter of the update, in (0, 1].
    pub beta: f64,
    /// Number of independently seeded runs.
    pub runs: usize,
    /// Binary real-space support mask, same shape as the pattern.
    pub support: Raster2D,
    /// Base seed; run k uses seed + k.
    pub seed: u64,
    /// Runs kept (after divergence filtering) for averaging.
    pub keep_best: usize,
}

impl RetrievalConfig {
    /// Paper-protocol defaults around a caller-supplied support mask:
    /// 200 iterations, beta 0.9, 45 runs all kept.
    pub fn with_support(support: Raster2D) -> Self {
        RetrievalConfig {
            iterations: 200,
            beta: 0.9,
            runs: 45,
            support,
            seed: 0,
            keep_best: 45,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.iterations == 0 {
            return Err(Error::InvalidArgument("iterations must be >= 1".into()));
        }
        if !(self.beta > 0.0 && self.beta <= 1.0) {
            return Err(Error::InvalidArgument(format!(
                "beta = {} must lie in (0, 1]",
                self.beta
            )));
        }
        if self.keep_best == 0 || self.runs < self.keep_best {
            return Err(Error::InvalidArgument(format!(
                "need runs >= keep_best >= 1, got runs = {}, keep_best = {}",
                self.runs, self.keep_best
            )));
        }
        if self.support.values.iter().any(|&v| v != 0.0 && v != 1.0) {
            return Err(Error::InvalidArgument("support mask must be binary".into()));
        }
        let Some((x0, y0, x1, y1)) = support_bounds(&self.support) else {
            return Err(Error::InvalidArgument("support mask is empty".into()));
        };
        let support_w = x1 - x0 + 1;
        let support_h = y1 - y0 + 1;
        if 2 * support_w > self.support.width || 2 * support_h > self.support.height {
            return Err(Error::InsufficientOversampling {
                support_w,
                support_h,
                frame_w: self.support.width,
                frame_h: self.support.height,
            });
        }
        Ok(())
    }
}

fn support_bounds(mask: &Raster2D) -> Option<(usize, usize, usize, usize)> {
    let mut b: Option<(usize, usize, usize, usize)> = None;
    for y in 0..mask.height {
        for x in 0..mask.width {
            if mask.get(x, y) != 0.0 {
                b = Some(match b {
                    None => (x, y, x, y),
                    Some((x0, y0, x1, y1)) => (x0.min(x), y0.min(y), x1.max(x), y1.max(y)),
                });
            }
        }
    }
    b
}

/// One run's outcome: the support-projected estimate at its best iterate,
/// the per-iteration Fourier-modulus residual trace, and the minimum of
/// that trace.
#[derive(Debug, Clone)]
pub struct RetrievalResult {
    pub view: ComplexView,
    pub error_history: Vec<f64>,
    pub final_error: f64,
}

fn check_field_shape(field: &[Complex64], width: usize, height: usize) -> Result<()> {
    if field.len() != width * height {
        return Err(Error::ShapeMismatch(format!(
            "{} field samples for a {}x{} frame",
            field.len(),
            width,
            height
        )));
    }
    Ok(())
}

/// Replaces each Fourier modulus by the square root of the measured
/// intensity, keeping the phase. Pixels flagged invalid (cropped or
/// saturated) are left unconstrained. Layouts are centered: the pattern's
/// DC sits at the frame center.
pub fn project_modulus(field: &[Complex64], measured: &MeasuredPattern) -> Result<Vec<Complex64>> {
    measured.validate()?;
    let (w, h) = (measured.intensity.width, measured.intensity.height);
    check_field_shape(field, w, h)?;
    let mut spectrum = fft2::centered_forward(field, w, h);
    constrain_spectrum(&mut spectrum, &sqrt_values(measured), &measured.valid);
    Ok(fft2::centered_inverse(&spectrum, w, h))
}

fn sqrt_values(measured: &MeasuredPattern) -> Vec<f64> {
    measured.intensity.values.iter().map(|&v| v.sqrt()).collect()
}

/// Applies the modulus constraint in place and returns the residual numerator
/// `sum over valid bins of (|s| - m)^2`, so callers monitoring convergence
/// get the error of the incoming spectrum without a second transform.
fn constrain_spectrum(spectrum: &mut [Complex64], sqrt_m: &[f64], valid: &[bool]) -> f64 {
    let mut num = 0.0;
    for ((s, &m), &ok) in spectrum.iter_mut().zip(sqrt_m).zip(valid) {
        if ok {
            let a = s.norm();
            num += (a - m).powi(2);
            // arg(0) = 0: a dark bin acquires the measured modulus with
            // zero phase.
            *s = if a == 0.0 {
                Complex64::new(m, 0.0)
            } else {
                *s * (m / a)
            };
        }
    }
    num
}

/// Zeroes the field outside the binary support; identity inside.
pub fn project_support(field: &[Complex64], support: &Raster2D) -> Result<Vec<Complex64>> {
    check_field_shape(field, support.width, support.height)?;
    Ok(field
        .iter()
        .zip(&support.values)
        .map(|(&f, &s)| if s != 0.0 { f } else { Complex64::ZERO })
        .collect())
}

/// Relative Fourier-modulus residual over valid pixels:
/// || |F(field)| - sqrt(measured) ||_2 / || sqrt(measured) ||_2.
pub fn fourier_error(field: &[Complex64], measured: &MeasuredPattern) -> Result<f64> {
    measured.validate()?;
    let (w, h) = (measured.intensity.width, measured.intensity.height);
    check_field_shape(field, w, h)?;
    if measured.valid_count() == 0 {
        return Err(Error::AllPixelsInvalid);
    }
    let spectrum = fft2::centered_forward(field, w, h);
    let sqrt_m = sqrt_values(measured);
    residual(&spectrum, &sqrt_m, &measured.valid)
}

fn residual(spectrum: &[Complex64], sqrt_m: &[f64], valid: &[bool]) -> Result<f64> {
    let mut num = 0.0;
    let mut den = 0.0;
    for ((s, &m), &ok) in spectrum.iter().zip(sqrt_m).zip(valid) {
        if ok {
            num += (s.norm() - m).powi(2);
            den += m * m;
        }
    }
    if den == 0.0 {
        return Err(Error::InvalidArgument(
            "measured pattern carries no intensity on valid pixels".into(),
        ));
    }
    Ok((num / den).sqrt())
}

/// One difference-map run from a seeded random start:
/// x <- x + beta * [P_S(2 P_M(x) - x) - P_M(x)]. Each iteration measures the
/// relative Fourier-modulus residual of the running iterate while projecting
/// it onto the modulus constraint, and the support-projected estimate at the
/// minimal-error iterate is returned.
pub fn run_retrieval(measured: &MeasuredPattern, cfg: &RetrievalConfig) -> Result<RetrievalResult> {
    cfg.validate()?;
    measured.validate()?;
    let (w, h) = (measured.intensity.width, measured.intensity.height);
    measured.intensity.check_same_shape(&cfg.support, "pattern vs support")?;
    if measured.valid_count() == 0 {
        return Err(Error::AllPixelsInvalid);
    }

    // Everything inside the loop lives in plain FFT order; the measured
    // pattern arrives centered, so shift it once up front.
    let sqrt_m = {
        let centered: Vec<Complex64> = sqrt_values(measured)
            .into_iter()
            .map(|v| Complex64::new(v, 0.0))
            .collect();
        fft2::ifftshift(&centered, w, h).iter().map(|c| c.re).collect::<Vec<f64>>()
    };
    let valid = {
        let centered: Vec<Complex64> = measured
            .valid
            .iter()
            .map(|&b| Complex64::new(if b { 1.0 } else { 0.0 }, 0.0))
            .collect();
        fft2::ifftshift(&centered, w, h)
            .iter()
            .map(|c| c.re > 0.5)
            .collect::<Vec<bool>>()
    };
    let den: f64 = sqrt_m
        .iter()
        .zip(&valid)
        .filter(|(_, &ok)| ok)
        .map(|(&m, _)| m * m)
        .sum();
    if den == 0.0 {
        return Err(Error::InvalidArgument(
            "measured pattern carries no intensity on valid pixels".into(),
        ));
    }

    let support = &cfg.support.values;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut x: Vec<Complex64> = support
        .iter()
        .map(|&s| {
            if s != 0.0 {
                Complex64::from_polar(
                    rng.random_range(0.0..1.0),
                    rng.random_range(0.0..std::f64::consts::TAU),
                )
            } else {
                Complex64::ZERO
            }
        })
        .collect();

    let mut fft = Fft2::new(w, h);
    let mut pm = vec![Complex64::ZERO; w * h];
    let mut history = Vec::with_capacity(cfg.iterations);
    let mut best_err = f64::INFINITY;
    let mut best_field: Vec<Complex64> = Vec::new();

    for iteration in 0..cfg.iterations {
        // P_M(x); the constraint pass also yields the modulus residual of
        // the iterate entering the projection.
        pm.copy_from_slice(&x);
        fft.forward(&mut pm);
        let num = constrain_spectrum(&mut pm, &sqrt_m, &valid);
        let err = (num / den).sqrt();
        history.push(err);
        if err < best_err {
            best_err = err;
            best_field = x
                .iter()
                .zip(support)
                .map(|(&f, &s)| if s != 0.0 { f } else { Complex64::ZERO })
                .collect();
        }
        fft.inverse(&mut pm);

        // x <- x + beta * [P_S(2 P_M - x) - P_M]
        for i in 0..x.len() {
            let reflected = 2.0 * pm[i] - x[i];
            let ps = if support[i] != 0.0 { reflected } else { Complex64::ZERO };
            x[i] += cfg.beta * (ps - pm[i]);
        }
        if x.iter().any(|c| !c.re.is_finite() || !c.im.is_finite()) {
            return Err(Error::NonFiniteIteration { iteration });
        }
    }

    let pitch = cfg.support.pixel_pitch.unwrap_or(1.0);
    Ok(RetrievalResult {
        view: ComplexView::from_complex(w, h, pitch, &best_field)?,
        error_history: history,
        final_error: best_err,
    })
}

/// Runs `cfg.runs` independent retrievals in parallel, run k seeded with
/// `cfg.seed + k`. Results come back in run order.
pub fn run_ensemble(measured: &MeasuredPattern, cfg: &RetrievalConfig) -> Result<Vec<RetrievalResult>> {
    cfg.validate()?;
    (0..cfg.runs)
        .into_par_iter()
        .map(|k| {
            let run_cfg = RetrievalConfig {
                seed: cfg.seed + k as u64,
                ..cfg.clone()
            };
            run_retrieval(measured, &run_cfg)
        })
        .collect()
}

/// Conjugate twin of a field: complex conjugate composed with a 180-degree
/// rotation about the DFT origin.
fn conjugate_flip(field: &[Complex64], w: usize, h: usize) -> Vec<Complex64> {
    let mut out = vec![Complex64::ZERO; field.len()];
    for y in 0..h {
        for x in 0..w {
            let sy = (h - y) % h;
            let sx = (w - x) % w;
            out[y * w + x] = field[sy * w + sx].conj();
        }
    }
    out
}

/// Aligns `candidate` onto `reference`, resolving the three trivial
/// ambiguities of the retrieval: conjugate flip (both orientations are
/// tried), translation (subpixel registration to 0.1 px), and global phase.
/// Returns the aligned view and the normalized correlation achieved.
pub fn align_to_reference(
    reference: &ComplexView,
    candidate: &ComplexView,
) -> Result<(ComplexView, f64)> {
    if reference.width != candidate.width || reference.height != candidate.height {
        return Err(Error::ShapeMismatch(format!(
            "reference {}x{} vs candidate {}x{}",
            reference.width, reference.height, candidate.width, candidate.height
        )));
    }
    let (w, h) = (reference.width, reference.height);
    let ref_field = reference.to_complex();
    let cand = candidate.to_complex();
    let flipped = conjugate_flip(&cand, w, h);

    let reg_direct = fft2::register_translation(&ref_field, &cand, w, h, 10);
    let reg_flipped = fft2::register_translation(&ref_field, &flipped, w, h, 10);
    let (chosen, reg) = if reg_flipped.peak > reg_direct.peak {
        (flipped, reg_flipped)
    } else {
        (cand, reg_direct)
    };
    let mut aligned = fft2::subpixel_shift(&chosen, w, h, reg.dy, reg.dx);

    // Global phase: rotate so the inner product with the reference is real
    // and positive.
    let inner: Complex64 = ref_field.iter().zip(&aligned).map(|(r, a)| r * a.conj()).sum();
    if inner.norm() > 0.0 {
        let phase = Complex64::from_polar(1.0, inner.arg());
        for v in aligned.iter_mut() {
            *v *= phase;
        }
    }
    Ok((
        ComplexView::from_complex(w, h, reference.pixel_pitch, &aligned)?,
        reg.peak,
    ))
}

/// Run-selection step of the multi-run protocol: drops divergent runs
/// (final error above twice the ensemble median) and returns the indices of
/// the `keep_best` lowest-error survivors, best first. The lowest-error run
/// always survives (its error cannot exceed the median), so the protocol
/// never reports a worse final error than the best single run.
pub fn select_runs(results: &[RetrievalResult], keep_best: usize) -> Result<Vec<usize>> {
    if keep_best == 0 {
        return Err(Error::InvalidArgument("keep_best must be >= 1".into()));
    }
    if results.len() < keep_best {
        return Err(Error::InvalidArgument(format!(
            "{} results for keep_best = {}",
            results.len(),
            keep_best
        )));
    }
    for r in results {
        if !r.final_error.is_finite() {
            return Err(Error::NonFiniteData("final_error".into()));
        }
    }
    let mut errors: Vec<f64> = results.iter().map(|r| r.final_error).collect();
    errors.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let median = if errors.len() % 2 == 1 {
        errors[errors.len() / 2]
    } else {
        0.5 * (errors[errors.len() / 2 - 1] + errors[errors.len() / 2])
    };
    let mut order: Vec<usize> = (0..results.len())
        .filter(|&i| results[i].final_error <= 2.0 * median)
        .collect();
    order.sort_by(|&a, &b| {
        results[a]
            .final_error
            .partial_cmp(&results[b].final_error)
            .unwrap()
            .then(a.cmp(&b))
    });
    order.truncate(keep_best);
    Ok(order)
}

/// Selects runs with `select_runs`, aligns each survivor onto the best one,
/// and complex-averages them.
pub fn align_and_average(results: &[RetrievalResult], keep_best: usize) -> Result<ComplexView> {
    let order = select_runs(results, keep_best)?;
    let first = &results[0].view;
    for r in results {
        if r.view.width != first.width || r.view.height != first.height {
            return Err(Error::ShapeMismatch("retrieval results differ in shape".into()));
        }
    }
    let (w, h) = (first.width, first.height);
    let reference = &results[order[0]].view;
    let mut sum = reference.to_complex();
    for &i in order.iter().skip(1) {
        let (aligned, _) = align_to_reference(reference, &results[i].view)?;
        for (s, a) in sum.iter_mut().zip(aligned.to_complex()) {
            *s += a;
        }
    }
    let n = order.len() as f64;
    for s in sum.iter_mut() {
        *s /= n;
    }
    ComplexView::from_complex(w, h, reference.pixel_pitch, &sum)
}

/// Estimates a rectangular support box from the diffraction pattern's
/// autocorrelation: the extent above 4% of the autocorrelation peak is
/// halved (object support is half the autocorrelation support), dilated by
/// 2 px on each side, and centered in the frame. Invalid pixels contribute
/// zero intensity.
pub fn support_from_autocorrelation(measured: &MeasuredPattern) -> Result<Raster2D> {
    measured.validate()?;
    let (w, h) = (measured.intensity.width, measured.intensity.height);
    let spectrum: Vec<Complex64> = measured
        .intensity
        .values
        .iter()
        .zip(&measured.valid)
        .map(|(&v, &ok)| Complex64::new(if ok { v } else { 0.0 }, 0.0))
        .collect();
    let auto = fft2::centered_inverse(&spectrum, w, h);
    let mag: Vec<f64> = auto.iter().map(|c| c.norm()).collect();
    let peak = mag.iter().cloned().fold(0.0, f64::max);
    if peak == 0.0 {
        return Err(Error::InvalidArgument("pattern carries no intensity".into()));
    }
    let threshold = 0.04 * peak;
    let mut x0 = w;
    let mut x1 = 0usize;
    let mut y0 = h;
    let mut y1 = 0usize;
    for y in 0..h {
        for x in 0..w {
            if mag[y * w + x] > threshold {
                x0 = x0.min(x);
                x1 = x1.max(x);
                y0 = y0.min(y);
                y1 = y1.max(y);
            }
        }
    }
    // Object support is half the autocorrelation extent, plus the dilation.
    let support_w = ((x1 - x0) / 2 + 1 + 4).min(w);
    let support_h = ((y1 - y0) / 2 + 1 + 4).min(h);
    if 2 * support_w > w || 2 * support_h > h {
        return Err(Error::InsufficientOversampling {
            support_w,
            support_h,
            frame_w: w,
            frame_h: h,
        });
    }
    let mut mask = Raster2D::zeros(w, h);
    let bx = w / 2 - support_w / 2;
    let by = h / 2 - support_h / 2;
    for y in by..by + support_h {
        for x in bx..bx + support_w {
            mask.set(x, y, 1.0);
        }
    }
    Ok(mask)
}

/// Pearson correlation of two equal-length samples; 0 for degenerate input.
pub fn pearson_correlation(a: &[f64], b: &[f64]) -> f64 {
    if a.len() != b.len() || a.is_empty() {
        return 0.0;
    }
    let n = a.len() as f64;
    let ma = a.iter().sum::<f64>() / n;
    let mb = b.iter().sum::<f64>() / n;
    let mut cov = 0.0;
    let mut va = 0.0;
    let mut vb = 0.0;
    for (&x, &y) in a.iter().zip(b) {
        cov += (x - ma) * (y - mb);
        va += (x - ma).powi(2);
        vb += (y - mb).powi(2);
    }
    if va == 0.0 || vb == 0.0 {
        return 0.0;
    }
    cov / (va * vb).sqrt()
}

/// 10-90% edge-response distance in meters at the strongest amplitude edge
/// of the view (horizontal or vertical), the standard knife-edge resolution
/// estimate.
pub fn estimate_resolution(view: &ComplexView) -> Result<f64> {
    view.validate()?;
    let (w, h) = (view.width, view.height);
    let a = &view.amplitude;
    // Strongest central-difference gradient over both axes.
    let mut best = (0.0f64, 0usize, 0usize, true); // (grad, x, y, horizontal)
    for y in 0..h {
        for x in 1..w.saturating_sub(1) {
            let g = ((a[y * w + x + 1] - a[y * w + x - 1]) / 2.0).abs();
            if g > best.0 {
                best = (g, x, y, true);
            }
        }
    }
    for x in 0..w {
        for y in 1..h.saturating_sub(1) {
            let g = ((a[(y + 1) * w + x] - a[(y - 1) * w + x]) / 2.0).abs();
            if g > best.0 {
                best = (g, x, y, false);
            }
        }
    }
    if best.0 == 0.0 {
        return Err(Error::NoEdgeDetected);
    }
    let (_, cx, cy, horizontal) = best;
    let (axis_len, center) = if horizontal { (w, cx) } else { (h, cy) };
    let window = (axis_len / 32).max(10);
    let start = center.saturating_sub(window);
    let end = (center + window).min(axis_len - 1);
    let mut profile: Vec<f64> = (start..=end)
        .map(|i| if horizontal { a[cy * w + i] } else { a[i * w + cx] })
        .collect();
    if profile.last().unwrap() < profile.first().unwrap() {
        profile.reverse();
    }
    let lo = profile.iter().cloned().fold(f64::INFINITY, f64::min);
    let hi = profile.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    if hi <= lo {
        return Err(Error::NoEdgeDetected);
    }
    let t10 = lo + 0.1 * (hi - lo);
    let t90 = lo + 0.9 * (hi - lo);
    let cross = |threshold: f64, from: usize| -> Option<f64> {
        for i in from.max(1)..profile.len() {
            let (p0, p1) = (profile[i - 1], profile[i]);
            if p0 < threshold && p1 >= threshold {
                return Some((i - 1) as f64 + (threshold - p0) / (p1 - p0));
            }
        }
        None
    };
    let x10 = cross(t10, 1).ok_or(Error::NoEdgeDetected)?;
    let x90 = cross(t90, x10.ceil() as usize).ok_or(Error::NoEdgeDetected)?;
    if x90 <= x10 {
        return Err(Error::NoEdgeDetected);
    }
    Ok((x90 - x10) * view.pixel_pitch)
}
