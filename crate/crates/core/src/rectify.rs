//! Epipolar geometry from point correspondences and projective
//! rectification: estimates the fundamental matrix with the normalized
//! eight-point algorithm and re-projects a stereo pair so matching points
//! share image rows.

use crate::error::{Error, Result};
use crate::raster::Raster2D;
use nalgebra::{DMatrix, Matrix3, Vector3};
use std::path::Path;

/// Matched pixel coordinates between two views.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Correspondences {
    /// ((x1, y1), (x2, y2)) per pair.
    pub pairs: Vec<((f64, f64), (f64, f64))>,
}

impl Correspondences {
    pub fn len(&self) -> usize {
        self.pairs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pairs.is_empty()
    }

    pub fn validate(&self) -> Result<()> {
        if self.pairs.len() < 8 {
            return Err(Error::InvalidArgument(format!(
                "fundamental-matrix estimation needs at least 8 pairs, got {}",
                self.pairs.len()
            )));
        }
        for (i, (l, _)) in self.pairs.iter().enumerate() {
            for (l2, _) in self.pairs.iter().skip(i + 1) {
                if l == l2 {
                    return Err(Error::InvalidArgument(format!(
                        "duplicate left point ({}, {})",
                        l.0, l.1
                    )));
                }
            }
        }
        for ((x1, y1), (x2, y2)) in &self.pairs {
            if ![x1, y1, x2, y2].iter().all(|v| v.is_finite()) {
                return Err(Error::NonFiniteData("correspondence coordinates".into()));
            }
        }
        Ok(())
    }

    /// Parses "x1 y1 x2 y2" lines; '#' starts a comment, blank lines are
    /// skipped.
    pub fn parse(text: &str) -> std::result::Result<Self, String> {
        let mut pairs = Vec::new();
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let fields: Vec<&str> = line.split_whitespace().collect();
            if fields.len() != 4 {
                return Err(format!(
                    "line {}: expected 4 numbers, found {}",
                    lineno + 1,
                    fields.len()
                ));
            }
            let mut v = [0.0f64; 4];
            for (slot, field) in v.iter_mut().zip(&fields) {
                *slot = field
                    .parse()
                    .map_err(|e| format!("line {}: {e}", lineno + 1))?;
            }
            pairs.push(((v[0], v[1]), (v[2], v[3])));
        }
        Ok(Correspondences { pairs })
    }

    pub fn read(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        Self::parse(&text).map_err(|message| Error::Parse {
            path: path.to_path_buf(),
            message,
        })
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        let mut text = String::from("# x1 y1 x2 y2\n");
        for ((x1, y1), (x2, y2)) in &self.pairs {
            text.push_str(&format!("{x1:e} {y1:e} {x2:e} {y2:e}\n"));
        }
        std::fs::write(path, text)?;
        Ok(())
    }
}

/// Rank-2, unit-Frobenius fundamental matrix satisfying x2' F x1 = 0.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FundamentalMatrix {
    pub m: Matrix3<f64>,
}

impl FundamentalMatrix {
    /// Signed epipolar residual x2' F x1 of one pair.
    pub fn residual(&self, pair: ((f64, f64), (f64, f64))) -> f64 {
        let ((x1, y1), (x2, y2)) = pair;
        let l = Vector3::new(x1, y1, 1.0);
        let r = Vector3::new(x2, y2, 1.0);
        r.dot(&(self.m * l))
    }

    pub fn max_residual(&self, c: &Correspondences) -> f64 {
        c.pairs
            .iter()
            .map(|&p| self.residual(p).abs())
            .fold(0.0, f64::max)
    }

    /// Epipoles (left image, right image) as unit homogeneous vectors:
    /// F e_left = 0 and F' e_right = 0.
    pub fn epipoles(&self) -> (Vector3<f64>, Vector3<f64>) {
        let svd = self.m.svd(true, true);
        let u = svd.u.unwrap();
        let v_t = svd.v_t.unwrap();
        let left = normalize_sign(Vector3::new(v_t[(2, 0)], v_t[(2, 1)], v_t[(2, 2)]));
        let right = normalize_sign(Vector3::new(u[(0, 2)], u[(1, 2)], u[(2, 2)]));
        (left, right)
    }
}

fn normalize_sign(v: Vector3<f64>) -> Vector3<f64> {
    let n = v.norm();
    let mut out = v / n;
    let mut lead = 0;
    for i in 1..3 {
        if out[i].abs() > out[lead].abs() {
            lead = i;
        }
    }
    if out[lead] < 0.0 {
        out = -out;
    }
    out
}

/// Hartley normalization: translate the centroid to the origin and scale so
/// the mean distance from it is sqrt(2).
fn hartley_transform(points: &[(f64, f64)]) -> Result<Matrix3<f64>> {
    let n = points.len() as f64;
    let cx = points.iter().map(|p| p.0).sum::<f64>() / n;
    let cy = points.iter().map(|p| p.1).sum::<f64>() / n;
    let mean_dist = points
        .iter()
        .map(|p| ((p.0 - cx).powi(2) + (p.1 - cy).powi(2)).sqrt())
        .sum::<f64>()
        / n;
    if mean_dist <= 0.0 {
        return Err(Error::Degenerate("all points coincide".into()));
    }
    let s = std::f64::consts::SQRT_2 / mean_dist;
    Ok(Matrix3::new(s, 0.0, -s * cx, 0.0, s, -s * cy, 0.0, 0.0, 1.0))
}

/// Normalized eight-point estimation with rank-2 enforcement and unit
/// Frobenius norm (deterministic sign: the largest-magnitude entry is
/// positive).
pub fn estimate_fundamental(c: &Correspondences) -> Result<FundamentalMatrix> {
    c.validate()?;
    let left: Vec<(f64, f64)> = c.pairs.iter().map(|p| p.0).collect();
    let right: Vec<(f64, f64)> = c.pairs.iter().map(|p| p.1).collect();
    let t1 = hartley_transform(&left)?;
    let t2 = hartley_transform(&right)?;
    let norm = |t: &Matrix3<f64>, p: (f64, f64)| {
        let v = t * Vector3::new(p.0, p.1, 1.0);
        (v[0] / v[2], v[1] / v[2])
    };

    let n = c.pairs.len();
    let mut a = DMatrix::zeros(n, 9);
    for (i, pair) in c.pairs.iter().enumerate() {
        let (x1, y1) = norm(&t1, pair.0);
        let (x2, y2) = norm(&t2, pair.1);
        let row = [x2 * x1, x2 * y1, x2, y2 * x1, y2 * y1, y2, x1, y1, 1.0];
        for (j, v) in row.iter().enumerate() {
            a[(i, j)] = *v;
        }
    }
    let svd = a.svd(true, true);
    let sv = &svd.singular_values;
    // Eight meaningful constraints: if the eighth singular value collapses
    // the configuration does not determine F.
    if sv[0] / sv[7].max(f64::MIN_POSITIVE) > 1e12 {
        return Err(Error::Degenerate(format!(
            "correspondence configuration is degenerate (condition {:.3e})",
            sv[0] / sv[7].max(f64::MIN_POSITIVE)
        )));
    }
    let v_t = svd.v_t.as_ref().unwrap();
    let f_vec: Vec<f64> = (0..9).map(|j| v_t[(8, j)]).collect();
    let f_norm = Matrix3::new(
        f_vec[0], f_vec[1], f_vec[2], f_vec[3], f_vec[4], f_vec[5], f_vec[6], f_vec[7], f_vec[8],
    );

    // Rank-2 enforcement: truncate the smallest singular value.
    let svd3 = f_norm.svd(true, true);
    let u = svd3.u.unwrap();
    let v_t3 = svd3.v_t.unwrap();
    let d = Matrix3::from_diagonal(&Vector3::new(
        svd3.singular_values[0],
        svd3.singular_values[1],
        0.0,
    ));
    let f_rank2 = u * d * v_t3;

    // Denormalize and fix scale/sign.
    let mut f = t2.transpose() * f_rank2 * t1;
    let frob = f.norm();
    if frob == 0.0 {
        return Err(Error::Degenerate("estimated fundamental matrix is zero".into()));
    }
    f /= frob;
    let mut lead = (0, 0);
    for r in 0..3 {
        for cidx in 0..3 {
            if f[(r, cidx)].abs() > f[lead].abs() {
                lead = (r, cidx);
            }
        }
    }
    if f[lead] < 0.0 {
        f = -f;
    }
    Ok(FundamentalMatrix { m: f })
}

/// Plane projective transform, acting on homogeneous pixel coordinates.
pub type Homography = Matrix3<f64>;

/// Applies a homography to a pixel coordinate; None when the point maps to
/// infinity.
pub fn apply_homography(h: &Homography, x: f64, y: f64) -> Option<(f64, f64)> {
    let v = h * Vector3::new(x, y, 1.0);
    if v[2].abs() < 1e-300 || !v[2].is_finite() {
        return None;
    }
    let (u, w) = (v[0] / v[2], v[1] / v[2]);
    if u.is_finite() && w.is_finite() {
        Some((u, w))
    } else {
        None
    }
}

/// Result of rectification: warped images plus the original-to-rectified
/// homographies so disparities can be mapped back.
#[derive(Debug, Clone)]
pub struct RectifiedPair {
    pub left: Raster2D,
    pub right: Raster2D,
    pub h_left: Homography,
    pub h_right: Homography,
}

fn epipole_pixel(e: &Vector3<f64>) -> Option<(f64, f64)> {
    if e[2].abs() < 1e-9 * e.norm() {
        None // at infinity
    } else {
        Some((e[0] / e[2], e[1] / e[2]))
    }
}

/// Builds the rectifying warp for the image containing epipole `e`
/// (centered at cx, cy): translate the center to the origin, rotate the
/// epipole onto the +x axis, send it to infinity, translate back.
fn epipole_to_infinity(e: &Vector3<f64>, cx: f64, cy: f64) -> Homography {
    let t = Matrix3::new(1.0, 0.0, -cx, 0.0, 1.0, -cy, 0.0, 0.0, 1.0);
    let t_inv = Matrix3::new(1.0, 0.0, cx, 0.0, 1.0, cy, 0.0, 0.0, 1.0);
    let ec = t * e;
    let alpha = ec[1].atan2(ec[0]);
    let (s, c) = alpha.sin_cos();
    let r = Matrix3::new(c, s, 0.0, -s, c, 0.0, 0.0, 0.0, 1.0);
    let er = r * ec;
    let g = if er[2].abs() < 1e-12 * er[0].abs() {
        Matrix3::identity() // epipole already at infinity
    } else {
        let f = er[0] / er[2];
        Matrix3::new(1.0, 0.0, 0.0, 0.0, 1.0, 0.0, -1.0 / f, 0.0, 1.0)
    };
    t_inv * g * r * t
}

/// Resamples `img` through the inverse of `h` (output pixel (x, y) takes
/// the value at h^-1(x, y)), bilinear, zero fill outside.
pub fn warp_homography(img: &Raster2D, h: &Homography) -> Result<Raster2D> {
    let inv = h
        .try_inverse()
        .ok_or_else(|| Error::Degenerate("homography is not invertible".into()))?;
    let mut out = Raster2D::zeros(img.width, img.height);
    out.pixel_pitch = img.pixel_pitch;
    for y in 0..img.height {
        for x in 0..img.width {
            if let Some((u, v)) = apply_homography(&inv, x as f64, y as f64) {
                out.set(x, y, img.sample_bilinear(u, v, 0.0));
            }
        }
    }
    Ok(out)
}

/// Rectifies a stereo pair: the right image's epipole is sent to infinity
/// (row alignment), and the left warp is the matching homography through
/// F's compatible transform, with an affine x-correction anchored on the
/// image corners to minimize horizontal distortion. Fails when an epipole
/// lies inside its image.
pub fn rectify_pair(
    left: &Raster2D,
    right: &Raster2D,
    f: &FundamentalMatrix,
) -> Result<RectifiedPair> {
    let (e_left, e_right) = f.epipoles();
    for (e, img) in [(&e_left, left), (&e_right, right)] {
        if let Some((px, py)) = epipole_pixel(e) {
            if px >= 0.0 && px < img.width as f64 && py >= 0.0 && py < img.height as f64 {
                return Err(Error::EpipoleInsideImage { x: px, y: py });
            }
        }
    }

    let (cx, cy) = (
        (right.width / 2) as f64,
        (right.height / 2) as f64,
    );
    let h2 = epipole_to_infinity(&e_right, cx, cy);

    // Compatible transform M with F = [e_right]x M.
    let ex = Matrix3::new(
        0.0, -e_right[2], e_right[1],
        e_right[2], 0.0, -e_right[0],
        -e_right[1], e_right[0], 0.0,
    );
    let m = ex * f.m + e_right * Vector3::new(1.0, 1.0, 1.0).transpose();
    let h0 = h2 * m;

    // Affine row-0 correction: map the left image's corners as H2 would,
    // minimizing horizontal distortion (exact for an already-rectified
    // pair).
    let (w1, h1dim) = (left.width as f64 - 1.0, left.height as f64 - 1.0);
    let corners = [(0.0, 0.0), (w1, 0.0), (0.0, h1dim), (w1, h1dim)];
    let mut a = DMatrix::zeros(4, 3);
    let mut b = DMatrix::zeros(4, 1);
    for (i, &(x, y)) in corners.iter().enumerate() {
        let (u, v) = apply_homography(&h0, x, y)
            .ok_or_else(|| Error::Degenerate("left warp sends a corner to infinity".into()))?;
        let (tx, _) = apply_homography(&h2, x, y)
            .ok_or_else(|| Error::Degenerate("right warp sends a corner to infinity".into()))?;
        a[(i, 0)] = u;
        a[(i, 1)] = v;
        a[(i, 2)] = 1.0;
        b[(i, 0)] = tx;
    }
    let sol = a
        .svd(true, true)
        .solve(&b, 1e-14)
        .map_err(|e| Error::Degenerate(format!("shear correction failed: {e}")))?;
    let shear = Matrix3::new(
        sol[(0, 0)], sol[(1, 0)], sol[(2, 0)],
        0.0, 1.0, 0.0,
        0.0, 0.0, 1.0,
    );
    let mut h_left = shear * h0;
    let mut h_right = h2;
    // Normalize so the bottom-right entry is 1 (neither warp may collapse
    // it: both keep finite points finite near the frame).
    if h_left[(2, 2)].abs() < 1e-300 || h_right[(2, 2)].abs() < 1e-300 {
        return Err(Error::Degenerate("rectifying warp is singular at the origin".into()));
    }
    h_left /= h_left[(2, 2)];
    h_right /= h_right[(2, 2)];

    for (name, h) in [("left", &h_left), ("right", &h_right)] {
        let det2 = h[(0, 0)] * h[(1, 1)] - h[(0, 1)] * h[(1, 0)];
        if det2.abs() < 1e-9 {
            return Err(Error::Degenerate(format!(
                "{name} rectifying warp degenerate (upper 2x2 determinant {det2:.3e})"
            )));
        }
    }

    Ok(RectifiedPair {
        left: warp_homography(left, &h_left)?,
        right: warp_homography(right, &h_right)?,
        h_left,
        h_right,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{RngExt, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    /// Two pinhole views with a mostly-horizontal baseline; epipoles far
    /// outside a 512-frame.
    fn projective_pairs(n: usize, seed: u64, noise: f64) -> (Correspondences, Matrix3<f64>) {
        let k = Matrix3::new(500.0, 0.0, 256.0, 0.0, 500.0, 256.0, 0.0, 0.0, 1.0);
        let angle = 3f64.to_radians();
        let (s, c) = angle.sin_cos();
        let r = Matrix3::new(c, 0.0, s, 0.0, 1.0, 0.0, -s, 0.0, c);
        let t = Vector3::new(1.0, 0.02, 0.01);
        let tx = Matrix3::new(0.0, -t[2], t[1], t[2], 0.0, -t[0], -t[1], t[0], 0.0);
        let k_inv = k.try_inverse().unwrap();
        // Camera 2 projects x2 = K R'(p - t), so x2' K^-T R' [t]x K^-1 x1
        // = (p - t)'[t]x p = 0.
        let f_true = k_inv.transpose() * r.transpose() * tx * k_inv;

        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut pairs = Vec::new();
        while pairs.len() < n {
            let p = Vector3::new(
                rng.random_range(-1.5..1.5),
                rng.random_range(-1.5..1.5),
                rng.random_range(4.0..8.0),
            );
            let x1 = k * p;
            let p2 = r.transpose() * (p - t);
            let x2 = k * p2;
            let (u1, v1) = (x1[0] / x1[2], x1[1] / x1[2]);
            let (u2, v2) = (x2[0] / x2[2], x2[1] / x2[2]);
            if [u1, v1, u2, v2].iter().all(|v| (0.0..512.0).contains(v)) {
                let jitter = |rng: &mut ChaCha8Rng| {
                    if noise > 0.0 {
                        rng.random_range(-noise..noise)
                    } else {
                        0.0
                    }
                };
                pairs.push((
                    (u1 + jitter(&mut rng), v1 + jitter(&mut rng)),
                    (u2 + jitter(&mut rng), v2 + jitter(&mut rng)),
                ));
            }
        }
        (Correspondences { pairs }, f_true / f_true.norm())
    }

    fn cosine(a: &Matrix3<f64>, b: &Matrix3<f64>) -> f64 {
        let dot: f64 = a.iter().zip(b.iter()).map(|(x, y)| x * y).sum();
        (dot / (a.norm() * b.norm())).abs()
    }

    #[test]
    fn horizontal_parallax_gives_the_canonical_matrix() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut pairs = Vec::new();
        for _ in 0..12 {
            let x = rng.random_range(10.0..500.0);
            let y = rng.random_range(10.0..500.0);
            let d = rng.random_range(-20.0..20.0);
            pairs.push(((x, y), (x - d, y)));
        }
        let f = estimate_fundamental(&Correspondences { pairs }).unwrap();
        let canonical = Matrix3::new(0.0, 0.0, 0.0, 0.0, 0.0, -1.0, 0.0, 1.0, 0.0);
        assert!(
            cosine(&f.m, &canonical) > 1.0 - 1e-9,
            "estimate {:?} not proportional to the canonical form",
            f.m
        );
    }

    #[test]
    fn synthetic_projections_are_fit_to_machine_precision() {
        let (c, f_true) = projective_pairs(16, 7, 0.0);
        assert_eq!(c.len(), 16);
        let f = estimate_fundamental(&c).unwrap();
        // Scale-normalized residual: |x2' F x1| / (|x1| |x2|), unit-norm F.
        for &pair in &c.pairs {
            let ((x1, y1), (x2, y2)) = pair;
            let n1 = (x1 * x1 + y1 * y1 + 1.0).sqrt();
            let n2 = (x2 * x2 + y2 * y2 + 1.0).sqrt();
            let res = f.residual(pair).abs() / (n1 * n2);
            assert!(res < 1e-9, "residual {res}");
        }
        let cos = cosine(&f.m, &f_true);
        assert!(cos > 1.0 - 1e-9, "cosine with true matrix: {}", cos);
        // Rank exactly 2.
        let sv = f.m.svd(false, false).singular_values;
        assert!(sv[2] < 1e-14, "third singular value {}", sv[2]);
        assert!((f.m.norm() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn too_few_duplicate_or_degenerate_pairs_are_rejected() {
        let (mut c, _) = projective_pairs(16, 3, 0.0);
        c.pairs.truncate(7);
        assert!(estimate_fundamental(&c).is_err());

        let (mut c, _) = projective_pairs(10, 4, 0.0);
        c.pairs[5].0 = c.pairs[2].0;
        assert!(matches!(
            estimate_fundamental(&c),
            Err(Error::InvalidArgument(_))
        ));

        // Collinear points: condition blow-up.
        let pairs: Vec<_> = (0..10)
            .map(|i| {
                let x = 10.0 * i as f64;
                ((x, 100.0), (x - 5.0, 100.0))
            })
            .collect();
        assert!(matches!(
            estimate_fundamental(&Correspondences { pairs }),
            Err(Error::Degenerate(_))
        ));
    }

    #[test]
    fn estimation_is_similarity_equivariant() {
        let (c, _) = projective_pairs(14, 9, 0.0);
        let f = estimate_fundamental(&c).unwrap();
        // Apply one similarity S to both point sets; the estimate must
        // transform as S^-T F S^-1 (up to sign).
        let angle = 0.4f64;
        let (s, co) = angle.sin_cos();
        let scale = 1.7;
        let sm = Matrix3::new(
            scale * co, -scale * s, 30.0,
            scale * s, scale * co, -12.0,
            0.0, 0.0, 1.0,
        );
        let map = |p: (f64, f64)| {
            let v = sm * Vector3::new(p.0, p.1, 1.0);
            (v[0] / v[2], v[1] / v[2])
        };
        let moved = Correspondences {
            pairs: c.pairs.iter().map(|&(l, r)| (map(l), map(r))).collect(),
        };
        let f_moved = estimate_fundamental(&moved).unwrap();
        let s_inv = sm.try_inverse().unwrap();
        let expected = s_inv.transpose() * f.m * s_inv;
        assert!(
            cosine(&f_moved.m, &expected) > 1.0 - 1e-9,
            "similarity equivariance violated"
        );
    }

    #[test]
    fn residual_scales_linearly_with_point_noise() {
        let mut level = Vec::new();
        for &noise in &[0.25, 0.5, 1.0] {
            let (c, _) = projective_pairs(24, 21, noise);
            let f = estimate_fundamental(&c).unwrap();
            let mean: f64 = c
                .pairs
                .iter()
                .map(|&p| f.residual(p).abs())
                .sum::<f64>()
                / c.len() as f64;
            level.push(mean / noise);
        }
        // residual/noise stays within a factor 5 across one octave steps.
        let lo = level.iter().cloned().fold(f64::INFINITY, f64::min);
        let hi = level.iter().cloned().fold(0.0f64, f64::max);
        assert!(hi / lo < 5.0, "nonlinear degradation: {level:?}");
    }

    #[test]
    fn already_rectified_pair_keeps_identity_warps() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let mut pairs = Vec::new();
        for _ in 0..16 {
            let x = rng.random_range(20.0..100.0);
            let y = rng.random_range(20.0..100.0);
            let d = rng.random_range(-6.0..6.0);
            pairs.push(((x, y), (x - d, y)));
        }
        let f = estimate_fundamental(&Correspondences { pairs }).unwrap();
        let mut img = Raster2D::zeros(128, 128);
        for y in 40..90 {
            for x in 30..100 {
                img.set(x, y, ((x + 2 * y) % 7) as f64);
            }
        }
        let rect = rectify_pair(&img, &img, &f).unwrap();
        let id = Matrix3::<f64>::identity();
        for h in [&rect.h_left, &rect.h_right] {
            for r in 0..3usize {
                for c in 0..3usize {
                    assert!(
                        (h[(r, c)] - id[(r, c)]).abs() < 1e-6,
                        "warp {h:?} differs from identity"
                    );
                }
            }
        }
        // Identity warps resample exactly.
        for (a, b) in rect.left.values.iter().zip(&img.values) {
            assert!((a - b).abs() < 1e-9);
        }
    }

    #[test]
    fn rectified_correspondences_share_rows() {
        let (c, _) = projective_pairs(16, 13, 0.0);
        let f = estimate_fundamental(&c).unwrap();
        let img = Raster2D::filled(512, 512, 1.0);
        let rect = rectify_pair(&img, &img, &f).unwrap();
        for &((x1, y1), (x2, y2)) in &c.pairs {
            let (_, v1) = apply_homography(&rect.h_left, x1, y1).unwrap();
            let (_, v2) = apply_homography(&rect.h_right, x2, y2).unwrap();
            assert!(
                (v1 - v2).abs() <= 0.5,
                "rows differ by {} px after rectification",
                (v1 - v2).abs()
            );
        }
        // Both warps stay invertible.
        for h in [&rect.h_left, &rect.h_right] {
            let det2 = h[(0, 0)] * h[(1, 1)] - h[(0, 1)] * h[(1, 0)];
            assert!(det2.abs() > 1e-6);
        }
    }

    #[test]
    fn epipole_inside_the_image_is_rejected() {
        // Forward motion: the epipole sits near the principal point.
        let k = Matrix3::new(500.0, 0.0, 256.0, 0.0, 500.0, 256.0, 0.0, 0.0, 1.0);
        let t = Vector3::new(0.05, 0.02, 1.0);
        let tx = Matrix3::new(0.0, -t[2], t[1], t[2], 0.0, -t[0], -t[1], t[0], 0.0);
        let k_inv = k.try_inverse().unwrap();
        let f_mat = k_inv.transpose() * tx * k_inv;
        let f = FundamentalMatrix {
            m: f_mat / f_mat.norm(),
        };
        let img = Raster2D::filled(512, 512, 1.0);
        assert!(matches!(
            rectify_pair(&img, &img, &f),
            Err(Error::EpipoleInsideImage { .. })
        ));
    }

    #[test]
    fn correspondence_file_roundtrip_and_errors() {
        let text = "# demo\n1.5 2.0 3.25 2.0\n\n4 5 6 7 # inline comment\n";
        let c = Correspondences::parse(text).unwrap();
        assert_eq!(c.len(), 2);
        assert_eq!(c.pairs[0], ((1.5, 2.0), (3.25, 2.0)));
        assert_eq!(c.pairs[1], ((4.0, 5.0), (6.0, 7.0)));
        assert!(Correspondences::parse("1 2 3\n").is_err());
        assert!(Correspondences::parse("1 2 three 4\n").is_err());

        let dir = tempfile::TempDir::new().unwrap();
        let path = dir.path().join("pairs.txt");
        c.write(&path).unwrap();
        let back = Correspondences::read(&path).unwrap();
        assert_eq!(back, c);
    }
}
