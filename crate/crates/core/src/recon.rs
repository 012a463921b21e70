//! Metric 3D reconstruction from consistent disparity maps: point cloud
//! assembly, statistical outlier removal, plane fitting, scattered surface
//! interpolation, empty-volume carving, and multi-structure assembly for
//! phase-contrast samples.

use crate::error::{Error, Result};
use crate::geometry::{ObjectGrid, StereoGeometry, ViewSide};
use crate::knn::KdTree3;
use crate::matching::DisparityMap;
use crate::raster::{HeightField, PointCloud, PointSource, Raster2D};
use delaunator::{triangulate, Point};
use nalgebra::{Matrix3, Vector3};
use rayon::prelude::*;

/// Default carving radius: grid nodes this close to empty volume are
/// dropped from interpolated surfaces.
pub const DEFAULT_CARVE_RADIUS: f64 = 0.2e-6;

/// Statistical outlier filter parameters: a point is dropped when its mean
/// distance to the k nearest neighbors exceeds mean + t x std of that
/// statistic over the whole cloud.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
#[serde(default)]
pub struct OutlierParams {
    pub k: usize,
    pub t: f64,
}

impl Default for OutlierParams {
    fn default() -> Self {
        OutlierParams { k: 80, t: 0.1 }
    }
}

impl OutlierParams {
    pub fn validate(&self) -> Result<()> {
        if self.k < 1 {
            return Err(Error::InvalidArgument("k must be at least 1".into()));
        }
        if !(self.t > 0.0) {
            return Err(Error::InvalidArgument(format!(
                "t must be positive, got {}",
                self.t
            )));
        }
        Ok(())
    }
}

/// Plane n . p = offset with unit normal; `inlier_tol` is the distance
/// classifying points as belonging to the plane.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FittedPlane {
    pub normal: [f64; 3],
    pub offset: f64,
    pub inlier_tol: f64,
}

impl FittedPlane {
    pub fn signed_distance(&self, p: &[f64; 3]) -> f64 {
        self.normal[0] * p[0] + self.normal[1] * p[1] + self.normal[2] * p[2] - self.offset
    }

    /// Surface height at (x, y); fails for near-vertical planes.
    pub fn z_at(&self, x: f64, y: f64) -> Result<f64> {
        if self.normal[2].abs() < 1e-9 {
            return Err(Error::Degenerate(
                "plane is vertical; height is not a function of (x, y)".into(),
            ));
        }
        Ok((self.offset - self.normal[0] * x - self.normal[1] * y) / self.normal[2])
    }

    /// Indices of points within `inlier_tol` of the plane.
    pub fn inliers(&self, c: &PointCloud) -> Vec<usize> {
        c.points
            .iter()
            .enumerate()
            .filter(|(_, p)| self.signed_distance(p).abs() <= self.inlier_tol)
            .map(|(i, _)| i)
            .collect()
    }
}

/// Converts a cross-consistent disparity map pair into a merged metric
/// point cloud. Each valid pixel contributes one point: depth from the
/// metric disparity, lateral coordinate corrected for that view's beam
/// tilt, row coordinate unchanged.
pub fn cloud_from_disparities(
    left_map: &DisparityMap,
    right_map: &DisparityMap,
    g: &StereoGeometry,
    grid: &ObjectGrid,
) -> Result<PointCloud> {
    g.validate()?;
    if left_map.reference != ViewSide::Left || right_map.reference != ViewSide::Right {
        return Err(Error::InvalidArgument(
            "expected a left-referenced and a right-referenced map".into(),
        ));
    }
    left_map.values.check_same_shape(&right_map.values, "disparity maps")?;
    if left_map.values.width != grid.side || left_map.values.height != grid.side {
        return Err(Error::ShapeMismatch(format!(
            "maps are {}x{} but the grid side is {}",
            left_map.values.width, left_map.values.height, grid.side
        )));
    }

    let mut cloud = PointCloud::new();
    for (map, side, source) in [
        (left_map, ViewSide::Left, PointSource::LeftMap),
        (right_map, ViewSide::Right, PointSource::RightMap),
    ] {
        // Disparity values store (pair column - reference column); the
        // signed metric disparity d = x_left - x_right is the negation for
        // the left map and the value itself for the right map.
        let to_metric_disparity = match side {
            ViewSide::Left => -grid.pixel_pitch,
            ViewSide::Right => grid.pixel_pitch,
        };
        for y in 0..grid.side {
            for x in 0..grid.side {
                if !map.is_valid(x, y) {
                    continue;
                }
                let d = map.values.get(x, y) * to_metric_disparity;
                let z = g.depth_from_disparity(d)?;
                let x_obj = g.correct_coordinate(grid.coord(x as f64), z, side);
                cloud.push([x_obj, grid.coord(y as f64), z], source);
            }
        }
    }
    Ok(cloud)
}

/// Removes points whose mean k-nearest-neighbor distance lies more than
/// t standard deviations above the cloud mean of that statistic. A spread
/// below 1e-9 relative is treated as zero so homogeneous clouds (where
/// every point sees identical neighborhoods) pass through unchanged.
pub fn remove_outliers(c: &PointCloud, p: &OutlierParams) -> Result<PointCloud> {
    p.validate()?;
    c.validate()?;
    if c.len() <= p.k {
        return Err(Error::InvalidArgument(format!(
            "cloud of {} points cannot supply {} neighbors",
            c.len(),
            p.k
        )));
    }
    let tree = KdTree3::build(&c.points);
    let means: Vec<f64> = (0..c.len())
        .into_par_iter()
        .map(|i| tree.mean_knn_distance(i, p.k))
        .collect();
    let n = means.len() as f64;
    let mu = means.iter().sum::<f64>() / n;
    let sigma = (means.iter().map(|m| (m - mu).powi(2)).sum::<f64>() / n).sqrt();
    let threshold = if sigma <= 1e-9 * mu.abs() {
        f64::INFINITY
    } else {
        mu + p.t * sigma
    };
    let mut out = PointCloud::new();
    for (i, m) in means.iter().enumerate() {
        if *m <= threshold {
            out.push(c.points[i], c.sources[i]);
        }
    }
    Ok(out)
}

/// Total-least-squares plane: the normal is the smallest principal
/// component of the centered cloud. `inlier_tol` is set to three times the
/// RMS residual.
pub fn fit_plane(c: &PointCloud) -> Result<FittedPlane> {
    c.validate()?;
    if c.len() < 3 {
        return Err(Error::InvalidArgument(format!(
            "plane fit needs at least 3 points, got {}",
            c.len()
        )));
    }
    let n = c.len() as f64;
    let mut centroid = [0.0f64; 3];
    for p in &c.points {
        for a in 0..3 {
            centroid[a] += p[a];
        }
    }
    for a in &mut centroid {
        *a /= n;
    }
    let mut cov = Matrix3::zeros();
    for p in &c.points {
        let d = Vector3::new(p[0] - centroid[0], p[1] - centroid[1], p[2] - centroid[2]);
        cov += d * d.transpose();
    }
    cov /= n;
    let eig = cov.symmetric_eigen();
    // Ascending order of eigenvalues by index lookup.
    let mut idx = [0usize, 1, 2];
    idx.sort_by(|&a, &b| eig.eigenvalues[a].partial_cmp(&eig.eigenvalues[b]).unwrap());
    let (lo, mid, hi) = (
        eig.eigenvalues[idx[0]].max(0.0),
        eig.eigenvalues[idx[1]].max(0.0),
        eig.eigenvalues[idx[2]].max(0.0),
    );
    // Collinear or coincident: no unique plane when the two smallest
    // spreads vanish together.
    if mid <= 1e-18 * hi.max(f64::MIN_POSITIVE) {
        return Err(Error::Degenerate(
            "points are collinear; the plane is not unique".into(),
        ));
    }
    let nv = eig.eigenvectors.column(idx[0]);
    let mut normal = [nv[0], nv[1], nv[2]];
    let mut lead = 0;
    for a in 1..3 {
        if normal[a].abs() > normal[lead].abs() {
            lead = a;
        }
    }
    if normal[lead] < 0.0 {
        for a in &mut normal {
            *a = -*a;
        }
    }
    let offset = normal[0] * centroid[0] + normal[1] * centroid[1] + normal[2] * centroid[2];
    let rms = lo.sqrt();
    Ok(FittedPlane {
        normal,
        offset,
        inlier_tol: 3.0 * rms,
    })
}

/// Appends a rectangular border ring, `thickness` lattice samples deep,
/// around the cloud's (x, y) bounding box; ring points lie exactly in the
/// fitted plane and are tagged as frame points. `pitch` sets the lattice
/// spacing (normally the interpolation grid pitch).
pub fn add_frame(
    c: &PointCloud,
    plane: &FittedPlane,
    thickness: usize,
    pitch: f64,
) -> Result<PointCloud> {
    if !(pitch.is_finite() && pitch > 0.0) {
        return Err(Error::InvalidArgument("frame pitch must be > 0".into()));
    }
    let mut out = c.clone();
    if thickness == 0 {
        return Ok(out);
    }
    let (lo, hi) = c
        .bounds()
        .ok_or_else(|| Error::InvalidArgument("cannot frame an empty cloud".into()))?;
    // Lattice spanning the bounding box, then `thickness` extra rows and
    // columns on every side.
    let nx = ((hi[0] - lo[0]) / pitch).round() as isize + 1;
    let ny = ((hi[1] - lo[1]) / pitch).round() as isize + 1;
    let t = thickness as isize;
    for iy in -t..ny + t {
        for ix in -t..nx + t {
            let in_core = ix >= 0 && ix < nx && iy >= 0 && iy < ny;
            if in_core {
                continue;
            }
            let x = lo[0] + ix as f64 * pitch;
            let y = lo[1] + iy as f64 * pitch;
            let z = plane.z_at(x, y)?;
            out.push([x, y, z], PointSource::Frame);
        }
    }
    Ok(out)
}

/// Number of points `add_frame` appends for a core lattice of nx x ny
/// samples and the given ring depth.
pub fn frame_point_count(nx: usize, ny: usize, thickness: usize) -> usize {
    (nx + 2 * thickness) * (ny + 2 * thickness) - nx * ny
}

/// Piecewise-linear interpolation of z over the Delaunay triangulation of
/// the cloud's (x, y) coordinates, evaluated at every grid node. Nodes
/// outside the convex hull stay undefined.
pub fn interpolate_surface(c: &PointCloud, grid: &ObjectGrid) -> Result<HeightField> {
    c.validate()?;
    // Exact (x, y) duplicates would make the triangulation ambiguous;
    // keep the first occurrence.
    let mut seen = std::collections::HashMap::new();
    let mut pts = Vec::new();
    let mut zs = Vec::new();
    for p in &c.points {
        let key = (p[0].to_bits(), p[1].to_bits());
        if seen.insert(key, true).is_none() {
            pts.push(Point { x: p[0], y: p[1] });
            zs.push(p[2]);
        }
    }
    if pts.len() < 3 {
        return Err(Error::Degenerate(
            "fewer than 3 distinct (x, y) locations to triangulate".into(),
        ));
    }
    let tri = triangulate(&pts);
    if tri.triangles.is_empty() {
        return Err(Error::Degenerate(
            "triangulation is empty (collinear cloud)".into(),
        ));
    }

    let mut field = HeightField::undefined(grid.side, grid.side, grid.pixel_pitch);
    for t in tri.triangles.chunks(3) {
        let (a, b, cc) = (t[0], t[1], t[2]);
        let (pa, pb, pc) = (&pts[a], &pts[b], &pts[cc]);
        let det = (pb.x - pa.x) * (pc.y - pa.y) - (pc.x - pa.x) * (pb.y - pa.y);
        if det.abs() < f64::MIN_POSITIVE {
            continue;
        }
        // Grid-index bounding box of the triangle.
        let gx = |x: f64| grid.index(x);
        let min_x = gx(pa.x.min(pb.x).min(pc.x)).ceil().max(0.0) as usize;
        let max_x = gx(pa.x.max(pb.x).max(pc.x)).floor().min((grid.side - 1) as f64) as isize;
        let min_y = gx(pa.y.min(pb.y).min(pc.y)).ceil().max(0.0) as usize;
        let max_y = gx(pa.y.max(pb.y).max(pc.y)).floor().min((grid.side - 1) as f64) as isize;
        if max_x < min_x as isize || max_y < min_y as isize {
            continue;
        }
        for iy in min_y..=max_y as usize {
            let y = grid.coord(iy as f64);
            for ix in min_x..=max_x as usize {
                let x = grid.coord(ix as f64);
                let wa = ((pb.x - x) * (pc.y - y) - (pc.x - x) * (pb.y - y)) / det;
                let wb = ((pc.x - x) * (pa.y - y) - (pa.x - x) * (pc.y - y)) / det;
                let wc = 1.0 - wa - wb;
                let eps = -1e-12;
                if wa >= eps && wb >= eps && wc >= eps {
                    let i = iy * grid.side + ix;
                    field.z[i] = wa * zs[a] + wb * zs[b] + wc * zs[cc];
                    field.defined[i] = true;
                }
            }
        }
    }
    Ok(field)
}

/// Removes surface nodes lying within `radius` of any pixel that is
/// background (zero) in every view: volume empty in all projections cannot
/// hold material. Views must be registered to the surface grid.
pub fn carve_empty(
    surface: &HeightField,
    views: &[&Raster2D],
    radius: f64,
) -> Result<HeightField> {
    if views.is_empty() {
        return Err(Error::InvalidArgument("carving needs at least one view".into()));
    }
    for v in views {
        if v.width != surface.width || v.height != surface.height {
            return Err(Error::ShapeMismatch(format!(
                "view {}x{} vs surface {}x{}",
                v.width, v.height, surface.width, surface.height
            )));
        }
    }
    if !(radius >= 0.0 && radius.is_finite()) {
        return Err(Error::InvalidArgument(format!(
            "carve radius must be finite and nonnegative, got {radius}"
        )));
    }
    let (w, h) = (surface.width, surface.height);
    let empty: Vec<bool> = (0..w * h)
        .map(|i| views.iter().all(|v| v.values[i] <= 0.5))
        .collect();
    let r_px = radius / surface.pixel_pitch;
    let reach = r_px.floor() as isize;
    let r2 = r_px * r_px;
    let mut out = surface.clone();
    for y in 0..h as isize {
        for x in 0..w as isize {
            let i = y as usize * w + x as usize;
            if !out.defined[i] {
                continue;
            }
            'scan: for dy in -reach..=reach {
                let yy = y + dy;
                if yy < 0 || yy >= h as isize {
                    continue;
                }
                for dx in -reach..=reach {
                    let xx = x + dx;
                    if xx < 0 || xx >= w as isize {
                        continue;
                    }
                    if (dx * dx + dy * dy) as f64 <= r2 && empty[yy as usize * w + xx as usize] {
                        out.defined[i] = false;
                        out.z[i] = 0.0;
                        break 'scan;
                    }
                }
            }
        }
    }
    Ok(out)
}

/// One segmented structure of a phase sample.
#[derive(Debug, Clone)]
pub struct PhaseStructure {
    /// Quantization bin the structure's phase level falls in.
    pub bin: usize,
    /// Footprint masks in the left and right views.
    pub left_mask: Raster2D,
    pub right_mask: Raster2D,
    /// Plane fitted to the structure's points.
    pub plane: FittedPlane,
    /// Mean height of the structure's inlier points.
    pub mean_z: f64,
    /// Interpolated, carved surface.
    pub surface: HeightField,
    /// Number of cloud points assigned to the structure.
    pub point_count: usize,
}

/// Number of grey-level bins used to segment phase structures.
pub const PHASE_BINS: usize = 8;

/// Segments a phase-contrast reconstruction into individual structures:
/// quantizes the views' phase levels, treats the bin containing phase 0
/// (unit transmission) as empty, collects connected components, fits one
/// plane per structure, partitions the cloud among the planes, and
/// interpolates + carves each structure independently. Surfaces are
/// returned in ascending phase-bin order. Fails when fewer than `expected`
/// structures are found.
pub fn assemble_phase_structures(
    cloud: &PointCloud,
    left_phase: &Raster2D,
    right_phase: &Raster2D,
    g: &StereoGeometry,
    grid: &ObjectGrid,
    expected: usize,
    carve_radius: f64,
) -> Result<Vec<PhaseStructure>> {
    g.validate()?;
    cloud.validate()?;
    left_phase.check_same_shape(right_phase, "phase views")?;
    if left_phase.width != grid.side || left_phase.height != grid.side {
        return Err(Error::ShapeMismatch(format!(
            "phase views are {}x{} but the grid side is {}",
            left_phase.width, left_phase.height, grid.side
        )));
    }

    // Global quantization over both views so bins mean the same thing on
    // each side.
    let (min_l, max_l) = left_phase.min_max();
    let (min_r, max_r) = right_phase.min_max();
    let lo = min_l.min(min_r);
    let hi = max_l.max(max_r);
    if !(hi > lo) {
        return Err(Error::Degenerate("phase views are constant".into()));
    }
    let bin_of = |v: f64| -> usize {
        (((v - lo) / (hi - lo) * PHASE_BINS as f64).floor() as usize).min(PHASE_BINS - 1)
    };
    // Unit transmission (no material) has phase 0; its bin is empty
    // volume, not a structure.
    let empty_bin = bin_of(0.0f64.clamp(lo, hi));

    // A structure is a sufficiently large connected component of one
    // occupied bin in the left view; the right view contributes the
    // matching footprint via the shared bin. The component must also have
    // an interior: partial-coverage rendering and resampling paint
    // one-pixel-wide bands of intermediate values along every material
    // boundary, and those bands can grow long enough to pass a bare size
    // test while never enclosing a single interior pixel.
    let min_structure_px = 9usize;
    let min_interior_px = 4usize;
    let mut structures: Vec<(usize, Raster2D, Raster2D)> = Vec::new();
    for bin in 0..PHASE_BINS {
        if bin == empty_bin {
            continue;
        }
        let mask_of = |view: &Raster2D| {
            let mut m = Raster2D::zeros(view.width, view.height);
            m.pixel_pitch = view.pixel_pitch;
            for (o, v) in m.values.iter_mut().zip(&view.values) {
                if bin_of(*v) == bin {
                    *o = 1.0;
                }
            }
            m
        };
        let left_mask = mask_of(left_phase);
        let right_mask = mask_of(right_phase);
        let (labels, sizes) = crate::preprocess::connected_components(&left_mask);
        let mut interior = vec![0usize; sizes.len() + 1];
        let (w, h) = (left_mask.width, left_mask.height);
        for y in 1..h.saturating_sub(1) {
            for x in 1..w.saturating_sub(1) {
                let i = y * w + x;
                if left_mask.values[i] != 0.0
                    && left_mask.values[i - 1] != 0.0
                    && left_mask.values[i + 1] != 0.0
                    && left_mask.values[i - w] != 0.0
                    && left_mask.values[i + w] != 0.0
                {
                    interior[labels[i] as usize] += 1;
                }
            }
        }
        let big: Vec<u32> = sizes
            .iter()
            .enumerate()
            .filter(|(i, s)| **s >= min_structure_px && interior[*i + 1] >= min_interior_px)
            .map(|(i, _)| i as u32 + 1)
            .collect();
        if big.is_empty() {
            continue;
        }
        if big.len() == 1 {
            structures.push((bin, left_mask, right_mask));
        } else {
            // Rare case: several separate structures share one phase
            // level. Each component becomes its own structure; the right
            // footprint keeps the whole bin (disambiguated later by plane
            // partitioning).
            for label in big {
                let mut m = Raster2D::zeros(left_mask.width, left_mask.height);
                for (o, l) in m.values.iter_mut().zip(&labels) {
                    if *l == label {
                        *o = 1.0;
                    }
                }
                structures.push((bin, m, right_mask.clone()));
            }
        }
    }
    if structures.len() < expected {
        return Err(Error::TooFewStructures {
            detected: structures.len(),
            requested: expected,
        });
    }

    // First pass: assign map points to structures through the view pixel
    // they came from (undoing each side's parallax with the point's own
    // height), then fit one plane per structure.
    let mut member_points: Vec<PointCloud> = vec![PointCloud::new(); structures.len()];
    for (p, src) in cloud.points.iter().zip(&cloud.sources) {
        let side = match src {
            PointSource::LeftMap => ViewSide::Left,
            PointSource::RightMap => ViewSide::Right,
            _ => continue,
        };
        let x_view = p[0] + p[2] * g.signed_tilt(side).tan();
        let ix = grid.index(x_view).round();
        let iy = grid.index(p[1]).round();
        if ix < 0.0 || iy < 0.0 || ix >= grid.side as f64 || iy >= grid.side as f64 {
            continue;
        }
        let (ix, iy) = (ix as usize, iy as usize);
        for (s, (_, left_mask, right_mask)) in structures.iter().enumerate() {
            let mask = match side {
                ViewSide::Left => left_mask,
                ViewSide::Right => right_mask,
            };
            if mask.get(ix, iy) != 0.0 {
                member_points[s].push(*p, *src);
                break;
            }
        }
    }

    let axial = g.axial_voxel(grid.pixel_pitch);
    let mut planes = Vec::with_capacity(structures.len());
    for (s, sub) in member_points.iter().enumerate() {
        if sub.len() < 3 {
            return Err(Error::TooFewStructures {
                detected: s,
                requested: expected,
            });
        }
        planes.push(fit_plane(sub)?);
    }

    // Second pass: partition the whole cloud by plane proximity; each
    // plane keeps its inliers (tolerance at least one axial voxel so
    // subpixel disparity noise is not cut).
    let mut inlier_clouds: Vec<PointCloud> = vec![PointCloud::new(); structures.len()];
    for (p, src) in cloud.points.iter().zip(&cloud.sources) {
        if !matches!(src, PointSource::LeftMap | PointSource::RightMap) {
            continue;
        }
        let mut best: Option<(usize, f64)> = None;
        for (s, plane) in planes.iter().enumerate() {
            let d = plane.signed_distance(p).abs();
            if best.map_or(true, |(_, bd)| d < bd) {
                best = Some((s, d));
            }
        }
        if let Some((s, d)) = best {
            if d <= planes[s].inlier_tol.max(axial) {
                inlier_clouds[s].push(*p, *src);
            }
        }
    }

    let mut out = Vec::with_capacity(structures.len());
    for (s, (bin, left_mask, right_mask)) in structures.into_iter().enumerate() {
        let sub = &inlier_clouds[s];
        if sub.len() < 3 {
            return Err(Error::TooFewStructures {
                detected: s,
                requested: expected,
            });
        }
        let plane = fit_plane(sub).unwrap_or(planes[s]);
        let mean_z = sub.points.iter().map(|p| p[2]).sum::<f64>() / sub.len() as f64;
        // Object-plane footprints: undo each view's parallax at the
        // structure's mean height.
        let shift_px = |side: ViewSide| -> isize {
            (mean_z * g.signed_tilt(side).tan() / grid.pixel_pitch).round() as isize
        };
        let shifted_left = shift_raster_x(&left_mask, -shift_px(ViewSide::Left));
        let shifted_right = shift_raster_x(&right_mask, -shift_px(ViewSide::Right));
        let surface = interpolate_surface(sub, grid)?;
        let surface = carve_empty(&surface, &[&shifted_left, &shifted_right], carve_radius)?;
        out.push(PhaseStructure {
            bin,
            left_mask: shifted_left,
            right_mask: shifted_right,
            plane,
            mean_z,
            surface,
            point_count: sub.len(),
        });
    }
    Ok(out)
}

/// Shifts a raster horizontally by a whole number of pixels, zero-filling.
fn shift_raster_x(img: &Raster2D, shift: isize) -> Raster2D {
    let mut out = Raster2D::zeros(img.width, img.height);
    out.pixel_pitch = img.pixel_pitch;
    for y in 0..img.height {
        for x in 0..img.width {
            let sx = x as isize - shift;
            if sx >= 0 && (sx as usize) < img.width {
                out.set(x, y, img.get(sx as usize, y));
            }
        }
    }
    out
}

/// Plain-text summary of a reconstruction run.
#[derive(Debug, Clone, Default, serde::Serialize)]
pub struct ReconReport {
    pub lateral_voxel: f64,
    pub axial_voxel: f64,
    pub cloud_points: usize,
    pub outliers_removed: usize,
    pub frame_points: usize,
    pub surface_nodes: usize,
    pub carved_nodes: usize,
    pub structures: usize,
}

impl std::fmt::Display for ReconReport {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        writeln!(f, "lateral voxel: {:.4e} m", self.lateral_voxel)?;
        writeln!(f, "axial voxel:   {:.4e} m", self.axial_voxel)?;
        writeln!(f, "cloud points:  {}", self.cloud_points)?;
        writeln!(f, "outliers removed: {}", self.outliers_removed)?;
        writeln!(f, "frame points:  {}", self.frame_points)?;
        writeln!(f, "surface nodes: {}", self.surface_nodes)?;
        writeln!(f, "carved nodes:  {}", self.carved_nodes)?;
        writeln!(f, "structures:    {}", self.structures)
    }
}
