//! Block matching between a row-aligned view pair: signed horizontal
//! disparity per pixel with optional parabolic subpixel refinement and
//! left/right cross-consistency pruning.

use crate::error::{Error, Result};
use crate::geometry::ViewSide;
use crate::raster::Raster2D;
use rayon::prelude::*;

/// Block-matching parameters.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
#[serde(default)]
pub struct MatchConfig {
    /// Square block side in pixels; odd, at least 3.
    pub block: usize,
    /// Maximum |disparity| scanned, pixels, at least 1.
    pub search: usize,
    /// Cost added per pixel of offset magnitude; breaks ties toward small
    /// offsets.
    pub proximity_weight: f64,
    /// Refine the integer minimum with a parabola through the three
    /// neighboring costs (bounded by 0.5 px).
    pub subpixel: bool,
}

impl Default for MatchConfig {
    fn default() -> Self {
        MatchConfig {
            block: 3,
            search: 65,
            proximity_weight: 0.05,
            subpixel: true,
        }
    }
}

impl MatchConfig {
    pub fn validate(&self) -> Result<()> {
        if self.block < 3 || self.block % 2 == 0 {
            return Err(Error::InvalidArgument(format!(
                "block side must be odd and at least 3, got {}",
                self.block
            )));
        }
        if self.search < 1 {
            return Err(Error::InvalidArgument("search range must be at least 1".into()));
        }
        if !(self.proximity_weight >= 0.0) {
            return Err(Error::InvalidArgument(format!(
                "proximity weight must be non-negative, got {}",
                self.proximity_weight
            )));
        }
        Ok(())
    }
}

/// Signed horizontal disparity of one view against its pair: value at a
/// reference pixel is (column in the pair image) − (column here). Pixels
/// without a reliable match are flagged in `valid` and carry value 0.
#[derive(Debug, Clone, PartialEq)]
pub struct DisparityMap {
    pub values: Raster2D,
    pub valid: Raster2D,
    pub reference: ViewSide,
    pub config: MatchConfig,
}

impl DisparityMap {
    pub fn valid_fraction(&self) -> f64 {
        let n = self.valid.values.len();
        if n == 0 {
            return 0.0;
        }
        self.valid.values.iter().filter(|&&v| v != 0.0).count() as f64 / n as f64
    }

    pub fn is_valid(&self, x: usize, y: usize) -> bool {
        self.valid.get(x, y) != 0.0
    }
}

/// Matching cost between two flattened blocks at a candidate offset: sum of
/// absolute differences plus a linear proximity penalty. Lower is better.
pub fn block_cost(ref_block: &[f64], cand_block: &[f64], offset: isize, cfg: &MatchConfig) -> f64 {
    assert_eq!(ref_block.len(), cand_block.len(), "block shapes differ");
    let sad: f64 = ref_block
        .iter()
        .zip(cand_block)
        .map(|(a, b)| (a - b).abs())
        .sum();
    sad + cfg.proximity_weight * offset.unsigned_abs() as f64
}

fn gather_block(img: &Raster2D, cx: usize, cy: usize, half: usize, out: &mut Vec<f64>) {
    out.clear();
    for y in cy - half..=cy + half {
        for x in cx - half..=cx + half {
            out.push(img.get(x, y));
        }
    }
}

fn block_std(block: &[f64]) -> f64 {
    let n = block.len() as f64;
    let mean = block.iter().sum::<f64>() / n;
    let var = block.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
    var.sqrt()
}

/// Matches every pixel of `ref_img` against the same row of `other`,
/// scanning offsets −search..=+search. Uniform blocks (standard deviation
/// below 1e−6) are invalid: disparity is only recoverable over edges.
pub fn compute_disparity(
    ref_img: &Raster2D,
    other: &Raster2D,
    reference: ViewSide,
    cfg: &MatchConfig,
) -> Result<DisparityMap> {
    cfg.validate()?;
    if ref_img.width != other.width || ref_img.height != other.height {
        return Err(Error::ShapeMismatch(format!(
            "view pair {}x{} vs {}x{}",
            ref_img.width, ref_img.height, other.width, other.height
        )));
    }
    if ref_img.width < cfg.block || ref_img.height < cfg.block {
        return Err(Error::InvalidArgument(format!(
            "image {}x{} smaller than matching block {}",
            ref_img.width, ref_img.height, cfg.block
        )));
    }

    let (w, h) = (ref_img.width, ref_img.height);
    let half = cfg.block / 2;
    let search = cfg.search as isize;

    let rows: Vec<(Vec<f64>, Vec<f64>)> = (0..h)
        .into_par_iter()
        .map(|y| {
            let mut vals = vec![0.0f64; w];
            let mut mask = vec![0.0f64; w];
            if y < half || y + half >= h {
                return (vals, mask);
            }
            let mut ref_block = Vec::with_capacity(cfg.block * cfg.block);
            let mut cand_block = Vec::with_capacity(cfg.block * cfg.block);
            let mut costs = vec![f64::INFINITY; 2 * cfg.search + 1];
            for x in half..w - half {
                gather_block(ref_img, x, y, half, &mut ref_block);
                if block_std(&ref_block) < 1e-6 {
                    continue;
                }
                let mut best: Option<(isize, f64)> = None;
                let mut best_sad = f64::INFINITY;
                for (slot, d) in (-search..=search).enumerate() {
                    costs[slot] = f64::INFINITY;
                    let cx = x as isize + d;
                    if cx < half as isize || cx + half as isize >= w as isize {
                        continue;
                    }
                    gather_block(other, cx as usize, y, half, &mut cand_block);
                    let cost = block_cost(&ref_block, &cand_block, d, cfg);
                    costs[slot] = cost;
                    if best.map_or(true, |(_, c)| cost < c) {
                        best = Some((d, cost));
                        best_sad = cost - cfg.proximity_weight * d.unsigned_abs() as f64;
                    }
                }
                let Some((d, c0)) = best else { continue };
                let mut value = d as f64;
                if cfg.subpixel && d > -search && d < search {
                    let slot = (d + search) as usize;
                    let (cm, cp) = (costs[slot - 1], costs[slot + 1]);
                    // A vanishing sum of absolute differences is already an
                    // exact match; the parabola vertex would chase noise in
                    // the neighboring costs.
                    if cm.is_finite()
                        && cp.is_finite()
                        && best_sad > 1e-12 * (1.0 + cm + cp)
                    {
                        let denom = cm - 2.0 * c0 + cp;
                        if denom > 0.0 {
                            let delta = 0.5 * (cm - cp) / denom;
                            value += delta.clamp(-0.5, 0.5);
                        }
                    }
                }
                vals[x] = value;
                mask[x] = 1.0;
            }
            (vals, mask)
        })
        .collect();

    let mut values = Raster2D::zeros(w, h);
    let mut valid = Raster2D::zeros(w, h);
    values.pixel_pitch = ref_img.pixel_pitch;
    valid.pixel_pitch = ref_img.pixel_pitch;
    for (y, (vals, mask)) in rows.into_iter().enumerate() {
        values.values[y * w..(y + 1) * w].copy_from_slice(&vals);
        valid.values[y * w..(y + 1) * w].copy_from_slice(&mask);
    }
    Ok(DisparityMap {
        values,
        valid,
        reference,
        config: *cfg,
    })
}

/// Invalidates pixels whose disparities disagree between the two maps:
/// a left pixel x survives only when |d_left(x) + d_right(x + d_left(x))|
/// ≤ tol (and symmetrically). Both maps are pruned against the originals.
pub fn cross_consistency(
    left_map: &DisparityMap,
    right_map: &DisparityMap,
    tol: f64,
) -> Result<(DisparityMap, DisparityMap)> {
    if left_map.values.width != right_map.values.width
        || left_map.values.height != right_map.values.height
    {
        return Err(Error::ShapeMismatch(format!(
            "disparity maps {}x{} vs {}x{}",
            left_map.values.width,
            left_map.values.height,
            right_map.values.width,
            right_map.values.height
        )));
    }
    if left_map.reference == right_map.reference {
        return Err(Error::InvalidArgument(
            "cross-consistency needs maps with opposite references".into(),
        ));
    }
    if !(tol >= 0.0) {
        return Err(Error::InvalidArgument(format!(
            "tolerance must be non-negative, got {tol}"
        )));
    }

    let prune = |this: &DisparityMap, pair: &DisparityMap| -> DisparityMap {
        let (w, h) = (this.values.width, this.values.height);
        let mut out = this.clone();
        for y in 0..h {
            for x in 0..w {
                if !this.is_valid(x, y) {
                    continue;
                }
                let d = this.values.get(x, y);
                let px = (x as f64 + d).round();
                let keep = px >= 0.0 && (px as usize) < w && pair.is_valid(px as usize, y) && {
                    let back = pair.values.get(px as usize, y);
                    (d + back).abs() <= tol
                };
                if !keep {
                    out.valid.set(x, y, 0.0);
                    out.values.set(x, y, 0.0);
                }
            }
        }
        out
    };
    Ok((prune(left_map, right_map), prune(right_map, left_map)))
}
