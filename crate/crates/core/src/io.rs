//! File formats: raw little-endian float32 rasters with a plain-text header
//! sidecar, ASCII PLY point clouds, and OBJ meshes. All writers are
//! deterministic (identical inputs produce byte-identical files) and reject
//! non-finite values.

use crate::error::{Error, Result};
use crate::raster::{
    ComplexView, DiffractionFrame, HeightField, MeasuredPattern, PointCloud, PointSource, Raster2D,
};
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

/// Appends a suffix to the final path component: ("out/left", ".amp.f32")
/// becomes "out/left.amp.f32".
pub fn path_with_suffix(base: &Path, suffix: &str) -> PathBuf {
    let mut name = base
        .file_name()
        .map(|n| n.to_string_lossy().into_owned())
        .unwrap_or_default();
    name.push_str(suffix);
    base.with_file_name(name)
}

fn header_path(payload: &Path) -> PathBuf {
    path_with_suffix(payload, ".hdr")
}

fn parse_error(path: &Path, message: impl Into<String>) -> Error {
    Error::Parse {
        path: path.to_path_buf(),
        message: message.into(),
    }
}

struct Header {
    width: usize,
    height: usize,
    pixel_pitch: Option<f64>,
    exposure_scale: Option<f64>,
}

fn write_header(path: &Path, h: &Header) -> Result<()> {
    let mut text = String::new();
    let _ = writeln!(text, "width = {}", h.width);
    let _ = writeln!(text, "height = {}", h.height);
    let _ = writeln!(text, "dtype = f32");
    if let Some(p) = h.pixel_pitch {
        let _ = writeln!(text, "pixel_pitch = {p:e}");
    }
    if let Some(s) = h.exposure_scale {
        let _ = writeln!(text, "exposure_scale = {s:e}");
    }
    fs::write(path, text)?;
    Ok(())
}

fn read_header(path: &Path) -> Result<Header> {
    let text = fs::read_to_string(path)?;
    let mut width = None;
    let mut height = None;
    let mut dtype = None;
    let mut pixel_pitch = None;
    let mut exposure_scale = None;
    for (lineno, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let (key, value) = line
            .split_once('=')
            .ok_or_else(|| parse_error(path, format!("line {}: expected key = value", lineno + 1)))?;
        let key = key.trim();
        let value = value.trim();
        match key {
            "width" => {
                width = Some(value.parse::<usize>().map_err(|e| {
                    parse_error(path, format!("width: {e}"))
                })?)
            }
            "height" => {
                height = Some(value.parse::<usize>().map_err(|e| {
                    parse_error(path, format!("height: {e}"))
                })?)
            }
            "dtype" => dtype = Some(value.to_string()),
            "pixel_pitch" => {
                pixel_pitch = Some(value.parse::<f64>().map_err(|e| {
                    parse_error(path, format!("pixel_pitch: {e}"))
                })?)
            }
            "exposure_scale" => {
                exposure_scale = Some(value.parse::<f64>().map_err(|e| {
                    parse_error(path, format!("exposure_scale: {e}"))
                })?)
            }
            // Unknown keys are ignored so headers can gain fields.
            _ => {}
        }
    }
    let width = width.ok_or_else(|| parse_error(path, "missing width"))?;
    let height = height.ok_or_else(|| parse_error(path, "missing height"))?;
    match dtype.as_deref() {
        Some("f32") => {}
        other => {
            return Err(parse_error(
                path,
                format!("unsupported dtype {:?}, expected f32", other.unwrap_or("<none>")),
            ))
        }
    }
    Ok(Header {
        width,
        height,
        pixel_pitch,
        exposure_scale,
    })
}

fn write_payload(path: &Path, values: &[f64], what: &str) -> Result<()> {
    let mut bytes = Vec::with_capacity(values.len() * 4);
    for &v in values {
        if !v.is_finite() {
            return Err(Error::NonFiniteData(format!("{what} contains {v}")));
        }
        bytes.extend_from_slice(&(v as f32).to_le_bytes());
    }
    fs::write(path, bytes)?;
    Ok(())
}

fn read_payload(path: &Path, expected: usize) -> Result<Vec<f64>> {
    let bytes = fs::read(path)?;
    if bytes.len() != expected * 4 {
        return Err(parse_error(
            path,
            format!("payload holds {} bytes, header implies {}", bytes.len(), expected * 4),
        ));
    }
    Ok(bytes
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]) as f64)
        .collect())
}

/// Writes a raster as `<path>` (raw little-endian f32) + `<path>.hdr`.
pub fn write_raster(path: &Path, r: &Raster2D) -> Result<()> {
    if r.values.len() != r.width * r.height {
        return Err(Error::ShapeMismatch(format!(
            "raster buffer {} for {}x{}",
            r.values.len(),
            r.width,
            r.height
        )));
    }
    write_payload(path, &r.values, "raster")?;
    write_header(
        &header_path(path),
        &Header {
            width: r.width,
            height: r.height,
            pixel_pitch: r.pixel_pitch,
            exposure_scale: None,
        },
    )
}

pub fn read_raster(path: &Path) -> Result<Raster2D> {
    let h = read_header(&header_path(path))?;
    let values = read_payload(path, h.width * h.height)?;
    Ok(Raster2D {
        width: h.width,
        height: h.height,
        pixel_pitch: h.pixel_pitch,
        values,
    })
}

/// Writes a complex view as two payloads sharing one header:
/// `<base>.amp.f32`, `<base>.phase.f32`, `<base>.hdr`.
pub fn write_complex_view(base: &Path, v: &ComplexView) -> Result<()> {
    v.validate()?;
    write_payload(&path_with_suffix(base, ".amp.f32"), &v.amplitude, "amplitude")?;
    write_payload(&path_with_suffix(base, ".phase.f32"), &v.phase, "phase")?;
    write_header(
        &path_with_suffix(base, ".hdr"),
        &Header {
            width: v.width,
            height: v.height,
            pixel_pitch: Some(v.pixel_pitch),
            exposure_scale: None,
        },
    )
}

pub fn read_complex_view(base: &Path) -> Result<ComplexView> {
    let hdr = path_with_suffix(base, ".hdr");
    let h = read_header(&hdr)?;
    let pitch = h
        .pixel_pitch
        .ok_or_else(|| parse_error(&hdr, "missing pixel_pitch for complex view"))?;
    let n = h.width * h.height;
    let amplitude = read_payload(&path_with_suffix(base, ".amp.f32"), n)?;
    let phase = read_payload(&path_with_suffix(base, ".phase.f32"), n)?;
    let v = ComplexView {
        width: h.width,
        height: h.height,
        pixel_pitch: pitch,
        amplitude,
        phase,
    };
    v.validate()?;
    Ok(v)
}

/// Writes a detector frame: `<base>.int.f32` (+ header carrying
/// exposure_scale) and the saturation mask `<base>.sat.f32`.
pub fn write_frame(base: &Path, f: &DiffractionFrame) -> Result<()> {
    let int_path = path_with_suffix(base, ".int.f32");
    write_payload(&int_path, &f.intensity.values, "frame intensity")?;
    write_header(
        &header_path(&int_path),
        &Header {
            width: f.intensity.width,
            height: f.intensity.height,
            pixel_pitch: f.intensity.pixel_pitch,
            exposure_scale: Some(f.exposure_scale),
        },
    )?;
    let mask: Vec<f64> = f.saturated.iter().map(|&s| if s { 1.0 } else { 0.0 }).collect();
    let sat_path = path_with_suffix(base, ".sat.f32");
    write_payload(&sat_path, &mask, "saturation mask")?;
    write_header(
        &header_path(&sat_path),
        &Header {
            width: f.intensity.width,
            height: f.intensity.height,
            pixel_pitch: None,
            exposure_scale: None,
        },
    )
}

pub fn read_frame(base: &Path) -> Result<DiffractionFrame> {
    let int_path = path_with_suffix(base, ".int.f32");
    let hdr = header_path(&int_path);
    let h = read_header(&hdr)?;
    let n = h.width * h.height;
    let values = read_payload(&int_path, n)?;
    let exposure_scale = h
        .exposure_scale
        .ok_or_else(|| parse_error(&hdr, "missing exposure_scale for frame"))?;
    let mask = read_payload(&path_with_suffix(base, ".sat.f32"), n)?;
    Ok(DiffractionFrame {
        intensity: Raster2D {
            width: h.width,
            height: h.height,
            pixel_pitch: h.pixel_pitch,
            values,
        },
        saturated: mask.iter().map(|&v| v > 0.5).collect(),
        exposure_scale,
    })
}

/// Writes a measured pattern: `<base>.int.f32` + validity mask
/// `<base>.valid.f32`.
pub fn write_pattern(base: &Path, p: &MeasuredPattern) -> Result<()> {
    p.validate()?;
    let int_path = path_with_suffix(base, ".int.f32");
    write_payload(&int_path, &p.intensity.values, "pattern intensity")?;
    write_header(
        &header_path(&int_path),
        &Header {
            width: p.intensity.width,
            height: p.intensity.height,
            pixel_pitch: p.intensity.pixel_pitch,
            exposure_scale: None,
        },
    )?;
    let mask: Vec<f64> = p.valid.iter().map(|&v| if v { 1.0 } else { 0.0 }).collect();
    let valid_path = path_with_suffix(base, ".valid.f32");
    write_payload(&valid_path, &mask, "validity mask")?;
    write_header(
        &header_path(&valid_path),
        &Header {
            width: p.intensity.width,
            height: p.intensity.height,
            pixel_pitch: None,
            exposure_scale: None,
        },
    )
}

pub fn read_pattern(base: &Path) -> Result<MeasuredPattern> {
    let int_path = path_with_suffix(base, ".int.f32");
    let h = read_header(&header_path(&int_path))?;
    let n = h.width * h.height;
    let values = read_payload(&int_path, n)?;
    let mask = read_payload(&path_with_suffix(base, ".valid.f32"), n)?;
    Ok(MeasuredPattern {
        intensity: Raster2D {
            width: h.width,
            height: h.height,
            pixel_pitch: h.pixel_pitch,
            values,
        },
        valid: mask.iter().map(|&v| v > 0.5).collect(),
    })
}

/// Writes a height field as value + definedness rasters:
/// `<base>.z.f32` and `<base>.mask.f32`.
pub fn write_height_field(base: &Path, s: &HeightField) -> Result<()> {
    let z_path = path_with_suffix(base, ".z.f32");
    // Undefined nodes are stored as 0; the mask is authoritative.
    let z: Vec<f64> = s
        .z
        .iter()
        .zip(&s.defined)
        .map(|(&v, &d)| if d { v } else { 0.0 })
        .collect();
    write_payload(&z_path, &z, "height field")?;
    write_header(
        &header_path(&z_path),
        &Header {
            width: s.width,
            height: s.height,
            pixel_pitch: Some(s.pixel_pitch),
            exposure_scale: None,
        },
    )?;
    let mask: Vec<f64> = s.defined.iter().map(|&d| if d { 1.0 } else { 0.0 }).collect();
    let mask_path = path_with_suffix(base, ".mask.f32");
    write_payload(&mask_path, &mask, "height-field mask")?;
    write_header(
        &header_path(&mask_path),
        &Header {
            width: s.width,
            height: s.height,
            pixel_pitch: None,
            exposure_scale: None,
        },
    )
}

pub fn read_height_field(base: &Path) -> Result<HeightField> {
    let z_path = path_with_suffix(base, ".z.f32");
    let hdr = header_path(&z_path);
    let h = read_header(&hdr)?;
    let pitch = h
        .pixel_pitch
        .ok_or_else(|| parse_error(&hdr, "missing pixel_pitch for height field"))?;
    let n = h.width * h.height;
    let z = read_payload(&z_path, n)?;
    let mask = read_payload(&path_with_suffix(base, ".mask.f32"), n)?;
    Ok(HeightField {
        width: h.width,
        height: h.height,
        pixel_pitch: pitch,
        z,
        defined: mask.iter().map(|&v| v > 0.5).collect(),
    })
}

/// Writes an ASCII PLY point cloud with a per-vertex source tag.
pub fn write_point_cloud(path: &Path, c: &PointCloud) -> Result<()> {
    if c.is_empty() {
        return Err(Error::EmptyCloud);
    }
    c.validate()?;
    let mut text = String::new();
    text.push_str("ply\nformat ascii 1.0\n");
    text.push_str("comment source codes: 0=left-map 1=right-map 2=frame 3=fitted-surface\n");
    let _ = writeln!(text, "element vertex {}", c.len());
    text.push_str(
        "property double x\nproperty double y\nproperty double z\nproperty uchar source\nend_header\n",
    );
    for (p, s) in c.points.iter().zip(&c.sources) {
        let _ = writeln!(text, "{:e} {:e} {:e} {}", p[0], p[1], p[2], s.code());
    }
    fs::write(path, text)?;
    Ok(())
}

pub fn read_point_cloud(path: &Path) -> Result<PointCloud> {
    let text = fs::read_to_string(path)?;
    let mut lines = text.lines();
    let mut vertex_count: Option<usize> = None;
    for line in lines.by_ref() {
        let line = line.trim();
        if let Some(rest) = line.strip_prefix("element vertex ") {
            vertex_count = Some(
                rest.trim()
                    .parse()
                    .map_err(|e| parse_error(path, format!("vertex count: {e}")))?,
            );
        }
        if line == "end_header" {
            break;
        }
    }
    let n = vertex_count.ok_or_else(|| parse_error(path, "missing element vertex line"))?;
    let mut cloud = PointCloud::new();
    for line in lines {
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        let mut it = line.split_whitespace();
        let mut coord = [0.0f64; 3];
        for c in coord.iter_mut() {
            *c = it
                .next()
                .ok_or_else(|| parse_error(path, "short vertex record"))?
                .parse()
                .map_err(|e| parse_error(path, format!("coordinate: {e}")))?;
        }
        let code: u8 = it
            .next()
            .ok_or_else(|| parse_error(path, "missing source tag"))?
            .parse()
            .map_err(|e| parse_error(path, format!("source tag: {e}")))?;
        let source = PointSource::from_code(code)
            .ok_or_else(|| parse_error(path, format!("unknown source code {code}")))?;
        cloud.push(coord, source);
    }
    if cloud.len() != n {
        return Err(parse_error(
            path,
            format!("header declares {n} vertices, file holds {}", cloud.len()),
        ));
    }
    Ok(cloud)
}

/// Writes a height field as an OBJ triangle mesh. Cells whose four corners
/// are all defined contribute two triangles; metric x/y come from the grid
/// pitch with the origin at the grid center.
pub fn write_mesh_obj(path: &Path, s: &HeightField) -> Result<()> {
    if s.defined_count() == 0 {
        return Err(Error::EmptyCloud);
    }
    let mut index = vec![0usize; s.z.len()];
    let mut text = String::from("# height-field mesh\n");
    let cx = (s.width / 2) as f64;
    let cy = (s.height / 2) as f64;
    let mut next = 1usize; // OBJ indices are 1-based
    for y in 0..s.height {
        for x in 0..s.width {
            let i = y * s.width + x;
            if s.defined[i] {
                if !s.z[i].is_finite() {
                    return Err(Error::NonFiniteData("height field z".into()));
                }
                index[i] = next;
                next += 1;
                let px = (x as f64 - cx) * s.pixel_pitch;
                let py = (y as f64 - cy) * s.pixel_pitch;
                let _ = writeln!(text, "v {:e} {:e} {:e}", px, py, s.z[i]);
            }
        }
    }
    for y in 0..s.height.saturating_sub(1) {
        for x in 0..s.width.saturating_sub(1) {
            let i00 = y * s.width + x;
            let i10 = i00 + 1;
            let i01 = i00 + s.width;
            let i11 = i01 + 1;
            if s.defined[i00] && s.defined[i10] && s.defined[i01] && s.defined[i11] {
                let _ = writeln!(text, "f {} {} {}", index[i00], index[i10], index[i11]);
                let _ = writeln!(text, "f {} {} {}", index[i00], index[i11], index[i01]);
            }
        }
    }
    fs::write(path, text)?;
    Ok(())
}
