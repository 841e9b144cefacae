//! Point-cloud and primitive file formats: XYZ, ASCII PLY, OBJ, JSON.

use std::collections::BTreeMap;
use std::fs;
use std::io::Write as _;
use std::path::Path;

use primfit_core::cloud::PointCloud;
use primfit_core::fit::{PrimitiveKind, PrimitiveParams};
use primfit_core::mat3::{self, Vec3};
use serde::{Deserialize, Serialize};

use crate::{fmt_g9, CliError};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Format {
    Xyz,
    PlyAscii,
}

/// Pick a format from the file extension; `.ply` is ASCII PLY, anything
/// else is treated as XYZ.
pub fn detect_format(path: &Path) -> Format {
    match path.extension().and_then(|e| e.to_str()) {
        Some(e) if e.eq_ignore_ascii_case("ply") => Format::PlyAscii,
        _ => Format::Xyz,
    }
}

fn parse_err(path: &Path, line: usize, msg: impl AsRef<str>) -> CliError {
    CliError::Io(format!("{}:{}: {}", path.display(), line, msg.as_ref()))
}

/// Remap raw file labels to 0-based contiguous ids, ordered by raw value.
fn remap_labels(raw: &[i64]) -> Vec<usize> {
    let mut uniq: Vec<i64> = raw.to_vec();
    uniq.sort_unstable();
    uniq.dedup();
    let index: BTreeMap<i64, usize> = uniq.iter().enumerate().map(|(i, &v)| (v, i)).collect();
    raw.iter().map(|v| index[v]).collect()
}

pub fn load_pointcloud(path: &Path) -> Result<PointCloud, CliError> {
    let text = fs::read_to_string(path)
        .map_err(|e| CliError::Io(format!("{}: {}", path.display(), e)))?;
    let name = path
        .file_stem()
        .and_then(|s| s.to_str())
        .unwrap_or("cloud")
        .to_string();
    match detect_format(path) {
        Format::Xyz => parse_xyz(path, &text, name),
        Format::PlyAscii => parse_ply(path, &text, name),
    }
}

fn parse_xyz(path: &Path, text: &str, name: String) -> Result<PointCloud, CliError> {
    let mut points: Vec<Vec3> = Vec::new();
    let mut raw_labels: Vec<i64> = Vec::new();
    let mut labeled_lines = 0usize;
    for (idx, line) in text.lines().enumerate() {
        let lineno = idx + 1;
        let trimmed = line.trim();
        if trimmed.is_empty() || trimmed.starts_with('#') {
            continue;
        }
        let fields: Vec<&str> = trimmed.split_whitespace().collect();
        if fields.len() != 3 && fields.len() != 4 {
            return Err(parse_err(
                path,
                lineno,
                format!("expected 3 or 4 fields, found {}", fields.len()),
            ));
        }
        let mut p = [0.0; 3];
        for (k, f) in fields[..3].iter().enumerate() {
            p[k] = f
                .parse::<f64>()
                .map_err(|_| parse_err(path, lineno, format!("bad coordinate {f:?}")))?;
        }
        points.push(p);
        if fields.len() == 4 {
            let l = fields[3]
                .parse::<i64>()
                .map_err(|_| parse_err(path, lineno, format!("bad label {:?}", fields[3])))?;
            raw_labels.push(l);
            labeled_lines += 1;
        }
    }
    if points.is_empty() {
        return Err(parse_err(path, 1, "empty point cloud"));
    }
    let labels = if labeled_lines == 0 {
        None
    } else if labeled_lines == points.len() {
        Some(remap_labels(&raw_labels))
    } else {
        return Err(parse_err(path, 1, "labels present on some lines but not all"));
    };
    PointCloud::new(points, labels, name).map_err(|e| CliError::Io(e.to_string()))
}

fn parse_ply(path: &Path, text: &str, name: String) -> Result<PointCloud, CliError> {
    let mut lines = text.lines().enumerate();
    let mut header_done = false;
    let mut vertex_count: Option<usize> = None;
    let mut props: Vec<String> = Vec::new();
    let mut in_vertex_element = false;
    let mut last_line = 0usize;

    match lines.next() {
        Some((_, l)) if l.trim() == "ply" => {}
        _ => return Err(parse_err(path, 1, "missing 'ply' magic")),
    }
    for (idx, line) in lines.by_ref() {
        last_line = idx + 1;
        let t = line.trim();
        if t == "end_header" {
            header_done = true;
            break;
        }
        let fields: Vec<&str> = t.split_whitespace().collect();
        match fields.as_slice() {
            ["format", kind, _] => {
                if *kind != "ascii" {
                    return Err(parse_err(path, last_line, "only ASCII PLY is supported"));
                }
            }
            ["comment", ..] => {}
            ["element", "vertex", n] => {
                vertex_count = Some(n.parse().map_err(|_| {
                    parse_err(path, last_line, format!("bad vertex count {n:?}"))
                })?);
                in_vertex_element = true;
            }
            ["element", ..] => in_vertex_element = false,
            ["property", _, pname] if in_vertex_element => props.push((*pname).to_string()),
            ["property", ..] => {}
            _ => return Err(parse_err(path, last_line, format!("bad header line {t:?}"))),
        }
    }
    if !header_done {
        return Err(parse_err(path, last_line.max(1), "missing end_header"));
    }
    let count = vertex_count
        .ok_or_else(|| parse_err(path, last_line, "missing 'element vertex'"))?;
    let find = |p: &str| props.iter().position(|q| q == p);
    let (xi, yi, zi) = match (find("x"), find("y"), find("z")) {
        (Some(a), Some(b), Some(c)) => (a, b, c),
        _ => return Err(parse_err(path, last_line, "vertex element lacks x/y/z")),
    };
    let li = find("label");

    let mut points: Vec<Vec3> = Vec::with_capacity(count);
    let mut raw_labels: Vec<i64> = Vec::new();
    for (idx, line) in lines {
        if points.len() == count {
            break;
        }
        let lineno = idx + 1;
        let fields: Vec<&str> = line.split_whitespace().collect();
        if fields.len() < props.len() {
            return Err(parse_err(
                path,
                lineno,
                format!("expected {} fields, found {}", props.len(), fields.len()),
            ));
        }
        let get = |i: usize| -> Result<f64, CliError> {
            fields[i]
                .parse::<f64>()
                .map_err(|_| parse_err(path, lineno, format!("bad value {:?}", fields[i])))
        };
        points.push([get(xi)?, get(yi)?, get(zi)?]);
        if let Some(li) = li {
            let l = fields[li]
                .parse::<i64>()
                .map_err(|_| parse_err(path, lineno, format!("bad label {:?}", fields[li])))?;
            raw_labels.push(l);
        }
    }
    if points.len() != count {
        return Err(parse_err(
            path,
            last_line,
            format!("expected {} vertices, found {}", count, points.len()),
        ));
    }
    if points.is_empty() {
        return Err(parse_err(path, 1, "empty point cloud"));
    }
    let labels = li.map(|_| remap_labels(&raw_labels));
    PointCloud::new(points, labels, name).map_err(|e| CliError::Io(e.to_string()))
}

/// Write a cloud as XYZ with 9 significant digits, appending the label
/// column when labels are present.
pub fn save_xyz(pc: &PointCloud, path: &Path) -> Result<(), CliError> {
    let mut out = String::new();
    for (i, p) in pc.points.iter().enumerate() {
        out.push_str(&fmt_g9(p[0]));
        out.push(' ');
        out.push_str(&fmt_g9(p[1]));
        out.push(' ');
        out.push_str(&fmt_g9(p[2]));
        if let Some(l) = &pc.labels {
            out.push(' ');
            out.push_str(&l[i].to_string());
        }
        out.push('\n');
    }
    fs::write(path, out).map_err(|e| CliError::Io(format!("{}: {}", path.display(), e)))
}

// ----- primitive export -----

#[derive(Debug, Serialize, Deserialize)]
struct PrimitiveJson {
    kind: String,
    center: [f64; 3],
    /// Row-major 3×3.
    rotation: [f64; 9],
    semi_axes: [f64; 3],
}

pub fn export_primitives_json(prims: &[PrimitiveParams], path: &Path) -> Result<(), CliError> {
    let arr: Vec<PrimitiveJson> = prims
        .iter()
        .map(|p| PrimitiveJson {
            kind: match p.kind {
                PrimitiveKind::Ellipsoid => "ellipsoid".to_string(),
                PrimitiveKind::Cuboid => "cuboid".to_string(),
            },
            center: p.center,
            rotation: p.rotation,
            semi_axes: p.semi_axes,
        })
        .collect();
    let mut text = serde_json::to_string_pretty(&arr)?;
    text.push('\n');
    fs::write(path, text).map_err(|e| CliError::Io(format!("{}: {}", path.display(), e)))
}

pub fn import_primitives_json(path: &Path) -> Result<Vec<PrimitiveParams>, CliError> {
    let text = fs::read_to_string(path)
        .map_err(|e| CliError::Io(format!("{}: {}", path.display(), e)))?;
    let arr: Vec<PrimitiveJson> = serde_json::from_str(&text)?;
    arr.into_iter()
        .map(|p| {
            let kind = match p.kind.as_str() {
                "ellipsoid" => PrimitiveKind::Ellipsoid,
                "cuboid" => PrimitiveKind::Cuboid,
                other => {
                    return Err(CliError::Io(format!(
                        "{}: unknown primitive kind {other:?}",
                        path.display()
                    )))
                }
            };
            Ok(PrimitiveParams {
                kind,
                center: p.center,
                rotation: p.rotation,
                semi_axes: p.semi_axes,
            })
        })
        .collect()
}

pub const SPHERE_SEGMENTS: usize = 32;
pub const SPHERE_RINGS: usize = 16;

/// UV-sphere vertex grid in local unit coordinates; row-major
/// (rings+1)×(segments+1) with duplicated seam column and pole rows.
fn unit_sphere_grid(segments: usize, rings: usize) -> Vec<Vec3> {
    let mut v = Vec::with_capacity((rings + 1) * (segments + 1));
    for i in 0..=rings {
        let theta = core::f64::consts::PI * i as f64 / rings as f64;
        let (st, ct) = (theta.sin(), theta.cos());
        for j in 0..=segments {
            let phi = 2.0 * core::f64::consts::PI * j as f64 / segments as f64;
            v.push([st * phi.cos(), st * phi.sin(), ct]);
        }
    }
    v
}

fn to_world(p: &Vec3, prim: &PrimitiveParams) -> Vec3 {
    let scaled = [
        p[0] * prim.semi_axes[0],
        p[1] * prim.semi_axes[1],
        p[2] * prim.semi_axes[2],
    ];
    mat3::add(&mat3::matvec(&prim.rotation, &scaled), &prim.center)
}

/// Triangulated mesh for one primitive: world vertices and 0-based
/// triangles. Ellipsoids use a UV-sphere tessellation (pole quads collapse
/// to single triangles), cuboids are 12-triangle boxes.
pub fn primitive_mesh(
    prim: &PrimitiveParams,
    segments: usize,
    rings: usize,
) -> (Vec<Vec3>, Vec<[usize; 3]>) {
    match prim.kind {
        PrimitiveKind::Ellipsoid => {
            let verts: Vec<Vec3> = unit_sphere_grid(segments, rings)
                .iter()
                .map(|p| to_world(p, prim))
                .collect();
            let mut tris = Vec::new();
            let cols = segments + 1;
            for i in 0..rings {
                for j in 0..segments {
                    let a = i * cols + j;
                    let b = a + 1;
                    let c = a + cols;
                    let d = c + 1;
                    if i != 0 {
                        tris.push([a, c, b]);
                    }
                    if i != rings - 1 {
                        tris.push([b, c, d]);
                    }
                }
            }
            (verts, tris)
        }
        PrimitiveKind::Cuboid => {
            let mut verts = Vec::with_capacity(8);
            for &z in &[-1.0, 1.0] {
                for &y in &[-1.0, 1.0] {
                    for &x in &[-1.0, 1.0] {
                        verts.push(to_world(&[x, y, z], prim));
                    }
                }
            }
            let quads = [
                [0, 1, 3, 2],
                [4, 6, 7, 5],
                [0, 4, 5, 1],
                [2, 3, 7, 6],
                [0, 2, 6, 4],
                [1, 5, 7, 3],
            ];
            let mut tris = Vec::with_capacity(12);
            for q in quads {
                tris.push([q[0], q[1], q[2]]);
                tris.push([q[0], q[2], q[3]]);
            }
            (verts, tris)
        }
    }
}

/// OBJ export, one `g` group per primitive, 1-based vertex indices.
pub fn export_primitives_obj(prims: &[PrimitiveParams], path: &Path) -> Result<(), CliError> {
    let file = fs::File::create(path)
        .map_err(|e| CliError::Io(format!("{}: {}", path.display(), e)))?;
    let mut w = std::io::BufWriter::new(file);
    let mut base = 1usize;
    for (i, prim) in prims.iter().enumerate() {
        let (verts, tris) = primitive_mesh(prim, SPHERE_SEGMENTS, SPHERE_RINGS);
        writeln!(w, "g prim{i}")?;
        for v in &verts {
            writeln!(w, "v {} {} {}", fmt_g9(v[0]), fmt_g9(v[1]), fmt_g9(v[2]))?;
        }
        for t in &tris {
            writeln!(w, "f {} {} {}", base + t[0], base + t[1], base + t[2])?;
        }
        base += verts.len();
    }
    w.flush()?;
    Ok(())
}

pub fn export_primitives(
    prims: &[PrimitiveParams],
    path: &Path,
    format: &str,
) -> Result<(), CliError> {
    match format {
        "obj" => export_primitives_obj(prims, path),
        "json" => export_primitives_json(prims, path),
        other => Err(CliError::Io(format!("unknown export format {other:?}"))),
    }
}

/// Load every `.xyz`/`.ply` file in a directory, sorted by file name.
pub fn load_dir(dir: &Path) -> Result<Vec<PointCloud>, CliError> {
    let mut paths: Vec<_> = fs::read_dir(dir)
        .map_err(|e| CliError::Io(format!("{}: {}", dir.display(), e)))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| {
            matches!(
                p.extension().and_then(|e| e.to_str()),
                Some(e) if e.eq_ignore_ascii_case("xyz") || e.eq_ignore_ascii_case("ply")
            )
        })
        .collect();
    paths.sort();
    if paths.is_empty() {
        return Err(CliError::Io(format!(
            "{}: no .xyz or .ply files found",
            dir.display()
        )));
    }
    paths.iter().map(|p| load_pointcloud(p)).collect()
}
