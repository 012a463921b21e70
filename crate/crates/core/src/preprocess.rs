//! Conditioning of raw frames and retrieved views for matching: HDR
//! recombination of short/long exposures, isolation of the two patterns on
//! the shared detector, binarization of views (bicubic upsample, Gaussian
//! smoothing, threshold, despeckle), and horizontal edge-gradient maps.

use crate::error::{Error, Result};
use crate::raster::{ComplexView, DiffractionFrame, MeasuredPattern, Raster2D};

/// Default ceiling on the fraction of a crop contaminated by the other
/// pattern before isolation refuses to proceed.
pub const DEFAULT_MAX_INVALID_FRACTION: f64 = 0.2;

#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct PreprocConfig {
    /// Linear upsampling factor applied before thresholding.
    pub resize_factor: usize,
    /// Gaussian smoothing std in pixels, at the resized scale.
    pub smooth_sigma: f64,
    /// Binarization threshold for the left view, on the normalized scale.
    pub threshold_left: f64,
    /// Binarization threshold for the right view.
    pub threshold_right: f64,
    /// Minimum surviving component area in pre-resize pixels; scaled by
    /// resize_factor^2 when despeckling resized masks.
    pub min_region: usize,
    /// Gaussian std of the HDR seam blend, in pixels.
    pub stitch_sigma: f64,
}

impl Default for PreprocConfig {
    fn default() -> Self {
        PreprocConfig {
            resize_factor: 4,
            smooth_sigma: 1.9,
            threshold_left: 0.40,
            threshold_right: 0.25,
            min_region: 400,
            stitch_sigma: 2.0,
        }
    }
}

impl PreprocConfig {
    pub fn validate(&self) -> Result<()> {
        if self.resize_factor == 0 {
            return Err(Error::InvalidArgument("resize_factor must be >= 1".into()));
        }
        for (name, v) in [("smooth_sigma", self.smooth_sigma), ("stitch_sigma", self.stitch_sigma)] {
            if !(v.is_finite() && v > 0.0) {
                return Err(Error::InvalidArgument(format!("{name} must be > 0")));
            }
        }
        for (name, v) in [
            ("threshold_left", self.threshold_left),
            ("threshold_right", self.threshold_right),
        ] {
            if !(0.0..=1.0).contains(&v) {
                return Err(Error::InvalidArgument(format!("{name} must lie in [0, 1]")));
            }
        }
        Ok(())
    }
}

/// Symmetric (edge-repeating) reflection of an index into [0, n).
fn reflect(i: isize, n: usize) -> usize {
    let n = n as isize;
    let mut i = i;
    loop {
        if i < 0 {
            i = -i - 1;
        } else if i >= n {
            i = 2 * n - i - 1;
        } else {
            return i as usize;
        }
    }
}

/// Separable Gaussian smoothing with reflective padding; the output size
/// matches the input.
pub fn gaussian_blur(img: &Raster2D, sigma: f64) -> Raster2D {
    let radius = (3.0 * sigma).ceil().max(1.0) as isize;
    let mut kernel = Vec::with_capacity((2 * radius + 1) as usize);
    for k in -radius..=radius {
        kernel.push((-0.5 * (k as f64 / sigma).powi(2)).exp());
    }
    let sum: f64 = kernel.iter().sum();
    for w in kernel.iter_mut() {
        *w /= sum;
    }
    let (w, h) = (img.width, img.height);
    let mut rows = Raster2D::zeros(w, h);
    rows.pixel_pitch = img.pixel_pitch;
    for y in 0..h {
        for x in 0..w {
            let mut acc = 0.0;
            for (j, &kv) in kernel.iter().enumerate() {
                let sx = reflect(x as isize + j as isize - radius, w);
                acc += kv * img.get(sx, y);
            }
            rows.set(x, y, acc);
        }
    }
    let mut out = Raster2D::zeros(w, h);
    out.pixel_pitch = img.pixel_pitch;
    for y in 0..h {
        for x in 0..w {
            let mut acc = 0.0;
            for (j, &kv) in kernel.iter().enumerate() {
                let sy = reflect(y as isize + j as isize - radius, h);
                acc += kv * rows.get(x, sy);
            }
            out.set(x, y, acc);
        }
    }
    out
}

/// Catmull-Rom cubic kernel (a = -0.5).
fn cubic(t: f64) -> f64 {
    let t = t.abs();
    if t <= 1.0 {
        1.5 * t * t * t - 2.5 * t * t + 1.0
    } else if t < 2.0 {
        -0.5 * (t * t * t - 5.0 * t * t + 8.0 * t - 4.0)
    } else {
        0.0
    }
}

/// Upsamples by an integer factor with bicubic interpolation (pixel-center
/// alignment, edges clamped). The pixel pitch shrinks by the same factor.
pub fn resize_bicubic(img: &Raster2D, factor: usize) -> Result<Raster2D> {
    if factor == 0 {
        return Err(Error::InvalidArgument("resize factor must be >= 1".into()));
    }
    if factor == 1 {
        return Ok(img.clone());
    }
    let (w, h) = (img.width, img.height);
    let (ow, oh) = (w * factor, h * factor);
    let f = factor as f64;

    // Horizontal pass: w x h -> ow x h.
    let mut rows = Raster2D::zeros(ow, h);
    for y in 0..h {
        for ox in 0..ow {
            let src = (ox as f64 + 0.5) / f - 0.5;
            let base = src.floor() as isize;
            let frac = src - base as f64;
            let mut acc = 0.0;
            for tap in -1..=2isize {
                let weight = cubic(frac - tap as f64);
                let sx = (base + tap).clamp(0, w as isize - 1) as usize;
                acc += weight * img.get(sx, y);
            }
            rows.set(ox, y, acc);
        }
    }
    // Vertical pass: ow x h -> ow x oh.
    let mut out = Raster2D::zeros(ow, oh);
    out.pixel_pitch = img.pixel_pitch.map(|p| p / f);
    for oy in 0..oh {
        let src = (oy as f64 + 0.5) / f - 0.5;
        let base = src.floor() as isize;
        let frac = src - base as f64;
        let mut weights = [0.0f64; 4];
        for (i, tap) in (-1..=2isize).enumerate() {
            weights[i] = cubic(frac - tap as f64);
        }
        for ox in 0..ow {
            let mut acc = 0.0;
            for (i, tap) in (-1..=2isize).enumerate() {
                let sy = (base + tap).clamp(0, h as isize - 1) as usize;
                acc += weights[i] * rows.get(ox, sy);
            }
            out.set(ox, oy, acc);
        }
    }
    Ok(out)
}

/// 8-connected component labelling of a binary raster. Returns per-pixel
/// labels (0 = background, components numbered from 1 in scan order) and
/// the size of each component (index label - 1).
pub fn connected_components(mask: &Raster2D) -> (Vec<u32>, Vec<usize>) {
    let (w, h) = (mask.width, mask.height);
    let mut labels = vec![0u32; w * h];
    let mut sizes = Vec::new();
    let mut stack = Vec::new();
    let mut next = 1u32;
    for start in 0..w * h {
        if mask.values[start] == 0.0 || labels[start] != 0 {
            continue;
        }
        let mut size = 0usize;
        labels[start] = next;
        stack.push(start);
        while let Some(i) = stack.pop() {
            size += 1;
            let (x, y) = (i % w, i / w);
            for dy in -1..=1isize {
                for dx in -1..=1isize {
                    if dx == 0 && dy == 0 {
                        continue;
                    }
                    let nx = x as isize + dx;
                    let ny = y as isize + dy;
                    if nx < 0 || ny < 0 || nx >= w as isize || ny >= h as isize {
                        continue;
                    }
                    let j = ny as usize * w + nx as usize;
                    if mask.values[j] != 0.0 && labels[j] == 0 {
                        labels[j] = next;
                        stack.push(j);
                    }
                }
            }
        }
        sizes.push(size);
        next += 1;
    }
    (labels, sizes)
}

/// Removes 8-connected components strictly smaller than `min_px` pixels;
/// components of exactly `min_px` survive.
pub fn despeckle(mask: &Raster2D, min_px: usize) -> Raster2D {
    let (labels, sizes) = connected_components(mask);
    let mut out = mask.clone();
    for (v, &label) in out.values.iter_mut().zip(&labels) {
        if label != 0 && sizes[(label - 1) as usize] < min_px {
            *v = 0.0;
        }
    }
    out
}

/// Merged HDR pattern and the count of pixels saturated in both exposures
/// (filled from the clipped short frame).
#[derive(Debug, Clone)]
pub struct StitchedPattern {
    /// Photon flux per unit integration time.
    pub merged: Raster2D,
    pub both_saturated: usize,
}

/// Recombines a short and a long exposure of the same pattern into one
/// linear-flux raster. Long-exposure flux is used where the long frame is
/// unsaturated; inside its saturated region the rescaled short frame takes
/// over, with a Gaussian-smoothed blend weight easing the seam.
pub fn stitch_hdr(
    short: &DiffractionFrame,
    long: &DiffractionFrame,
    cfg: &PreprocConfig,
) -> Result<StitchedPattern> {
    cfg.validate()?;
    short.intensity.check_same_shape(&long.intensity, "short vs long frame")?;
    if !(short.exposure_scale > 0.0 && long.exposure_scale > 0.0) {
        return Err(Error::InvalidArgument("exposure scales must be > 0".into()));
    }
    if long.exposure_scale <= short.exposure_scale {
        return Err(Error::InvalidArgument(format!(
            "long exposure scale {} must exceed short {}",
            long.exposure_scale, short.exposure_scale
        )));
    }
    let (w, h) = (long.intensity.width, long.intensity.height);
    let mut sat = Raster2D::zeros(w, h);
    for (v, &s) in sat.values.iter_mut().zip(&long.saturated) {
        *v = if s { 1.0 } else { 0.0 };
    }
    let any_saturated = long.saturated.iter().any(|&s| s);
    // Weight toward the short frame: 1 inside the saturated region, easing
    // to 0 outside it over stitch_sigma. Skipping the blur when nothing is
    // saturated keeps the no-saturation case bit-exact.
    let blurred = if any_saturated {
        gaussian_blur(&sat, cfg.stitch_sigma)
    } else {
        sat.clone()
    };
    let mut merged = Raster2D::zeros(w, h);
    merged.pixel_pitch = long.intensity.pixel_pitch;
    let mut both_saturated = 0usize;
    for i in 0..w * h {
        let w_short = sat.values[i].max(blurred.values[i]).min(1.0);
        let flux_long = long.intensity.values[i] / long.exposure_scale;
        let flux_short = short.intensity.values[i] / short.exposure_scale;
        let v = if short.saturated[i] && long.saturated[i] {
            both_saturated += 1;
            flux_short
        } else if w_short == 0.0 {
            flux_long
        } else {
            (1.0 - w_short) * flux_long + w_short * flux_short
        };
        merged.values[i] = v;
    }
    Ok(StitchedPattern {
        merged,
        both_saturated,
    })
}

/// Cuts the two patterns out of the composite: a square crop of side
/// 2*radius around each center, with pixels lying inside the other
/// pattern's radius marked invalid (excluded from the modulus constraint).
/// Fails when more than `max_invalid_fraction` of a crop is contaminated.
pub fn isolate_patterns(
    composite: &Raster2D,
    centers: [(usize, usize); 2],
    radius: usize,
    max_invalid_fraction: f64,
) -> Result<(MeasuredPattern, MeasuredPattern)> {
    if radius == 0 {
        return Err(Error::InvalidArgument("radius must be > 0".into()));
    }
    if !(0.0..=1.0).contains(&max_invalid_fraction) {
        return Err(Error::InvalidArgument(
            "max_invalid_fraction must lie in [0, 1]".into(),
        ));
    }
    for &(cx, cy) in &centers {
        if cx < radius
            || cy < radius
            || cx + radius > composite.width
            || cy + radius > composite.height
        {
            return Err(Error::InvalidArgument(format!(
                "pattern at ({cx}, {cy}) with radius {radius} does not fit the \
                 {}x{} composite",
                composite.width, composite.height
            )));
        }
    }
    let crop = |own: (usize, usize), other: (usize, usize)| -> Result<MeasuredPattern> {
        let side = 2 * radius;
        let mut intensity = Raster2D::zeros(side, side);
        let mut valid = vec![true; side * side];
        let mut invalid = 0usize;
        let r2 = (radius * radius) as f64;
        for y in 0..side {
            let gy = own.1 - radius + y;
            for x in 0..side {
                let gx = own.0 - radius + x;
                intensity.set(x, y, composite.get(gx, gy));
                let dx = gx as f64 - other.0 as f64;
                let dy = gy as f64 - other.1 as f64;
                if dx * dx + dy * dy < r2 {
                    valid[y * side + x] = false;
                    invalid += 1;
                }
            }
        }
        let fraction = invalid as f64 / (side * side) as f64;
        if fraction > max_invalid_fraction {
            return Err(Error::InvalidArgument(format!(
                "patterns too close: {:.1}% of the crop lies inside the other \
                 pattern's radius (limit {:.1}%)",
                100.0 * fraction,
                100.0 * max_invalid_fraction
            )));
        }
        Ok(MeasuredPattern { intensity, valid })
    };
    Ok((crop(centers[0], centers[1])?, crop(centers[1], centers[0])?))
}

/// Normalizes the view amplitude to [0, 1] by its 99.5th percentile
/// (robust to hot pixels), upsamples bicubically, smooths, and thresholds.
/// No despeckling; `binarize_view` and `binarize_pair` layer that on top.
fn binarize_raw(v: &ComplexView, threshold: f64, cfg: &PreprocConfig) -> Result<Raster2D> {
    cfg.validate()?;
    if !(0.0..=1.0).contains(&threshold) {
        return Err(Error::InvalidArgument(format!(
            "threshold {threshold} outside [0, 1]"
        )));
    }
    v.validate()?;
    let amp = v.amplitude_raster();
    // Hot-pixel-robust scale; for very sparse views whose 99.5th percentile
    // is zero, fall back to the maximum.
    let mut scale = amp.percentile(0.995);
    if scale <= 0.0 {
        scale = amp.values.iter().cloned().fold(0.0, f64::max);
    }
    if !(scale > 0.0) {
        return Err(Error::InvalidArgument("view amplitude is identically zero".into()));
    }
    let mut normalized = amp;
    for val in normalized.values.iter_mut() {
        *val = (*val / scale).min(1.0);
    }
    let resized = resize_bicubic(&normalized, cfg.resize_factor)?;
    let smoothed = gaussian_blur(&resized, cfg.smooth_sigma);
    let mut binary = smoothed;
    for val in binary.values.iter_mut() {
        *val = if *val >= threshold { 1.0 } else { 0.0 };
    }
    Ok(binary)
}

/// Full single-view binarization: normalize, upsample, smooth, threshold,
/// then remove components smaller than min_region (scaled by the square of
/// the resize factor, since areas grow with it).
pub fn binarize_view(v: &ComplexView, threshold: f64, cfg: &PreprocConfig) -> Result<Raster2D> {
    let binary = binarize_raw(v, threshold, cfg)?;
    Ok(despeckle(&binary, cfg.min_region * cfg.resize_factor * cfg.resize_factor))
}

/// Binarizes both views, removing a small component only when the paired
/// image shows no foreground within the horizontal search range of its
/// bounding box (small debris without a counterpart cannot be matched;
/// genuine features appear in both views within the disparity range).
pub fn binarize_pair(
    left: &ComplexView,
    right: &ComplexView,
    cfg: &PreprocConfig,
    search_px: usize,
) -> Result<(Raster2D, Raster2D)> {
    let raw_left = binarize_raw(left, cfg.threshold_left, cfg)?;
    let raw_right = binarize_raw(right, cfg.threshold_right, cfg)?;
    let min_px = cfg.min_region * cfg.resize_factor * cfg.resize_factor;
    let out_left = despeckle_against(&raw_left, &raw_right, min_px, search_px);
    let out_right = despeckle_against(&raw_right, &raw_left, min_px, search_px);
    Ok((out_left, out_right))
}

/// Removes small components of `mask` that have no foreground support in
/// `pair` within `search_px` horizontally of their bounding box.
fn despeckle_against(mask: &Raster2D, pair: &Raster2D, min_px: usize, search_px: usize) -> Raster2D {
    let (labels, sizes) = connected_components(mask);
    let n = sizes.len();
    let (w, h) = (mask.width, mask.height);
    // Bounding box per component.
    let mut boxes = vec![(usize::MAX, usize::MAX, 0usize, 0usize); n];
    for y in 0..h {
        for x in 0..w {
            let label = labels[y * w + x];
            if label != 0 {
                let b = &mut boxes[(label - 1) as usize];
                b.0 = b.0.min(x);
                b.1 = b.1.min(y);
                b.2 = b.2.max(x);
                b.3 = b.3.max(y);
            }
        }
    }
    let mut keep = vec![true; n];
    for c in 0..n {
        if sizes[c] >= min_px {
            continue;
        }
        let (x0, y0, x1, y1) = boxes[c];
        let sx0 = x0.saturating_sub(search_px);
        let sx1 = (x1 + search_px).min(pair.width.saturating_sub(1));
        let sy1 = y1.min(pair.height.saturating_sub(1));
        let mut corresponds = false;
        'scan: for y in y0..=sy1 {
            for x in sx0..=sx1 {
                if pair.get(x, y) != 0.0 {
                    corresponds = true;
                    break 'scan;
                }
            }
        }
        keep[c] = corresponds;
    }
    let mut out = mask.clone();
    for (v, &label) in out.values.iter_mut().zip(&labels) {
        if label != 0 && !keep[(label - 1) as usize] {
            *v = 0.0;
        }
    }
    out
}

/// Horizontal Sobel response: columns (-1, 0, 1) weighted (1, 2, 1)
/// vertically, absolute value, normalized to [0, 1] by the maximum
/// (all-zero output stays zero). Reflective borders.
pub fn gradient_view(img: &Raster2D) -> Result<Raster2D> {
    let (w, h) = (img.width, img.height);
    if w < 3 || h < 3 {
        return Err(Error::InvalidArgument(format!(
            "gradient needs at least 3x3 pixels, got {w}x{h}"
        )));
    }
    let mut out = Raster2D::zeros(w, h);
    out.pixel_pitch = img.pixel_pitch;
    for y in 0..h {
        for x in 0..w {
            let mut acc = 0.0;
            for (dy, wy) in [(-1isize, 1.0), (0, 2.0), (1, 1.0)] {
                let sy = reflect(y as isize + dy, h);
                let xl = reflect(x as isize - 1, w);
                let xr = reflect(x as isize + 1, w);
                acc += wy * (img.get(xr, sy) - img.get(xl, sy));
            }
            out.set(x, y, acc.abs());
        }
    }
    let max = out.values.iter().cloned().fold(0.0, f64::max);
    if max > 0.0 {
        for v in out.values.iter_mut() {
            *v /= max;
        }
    }
    Ok(out)
}
