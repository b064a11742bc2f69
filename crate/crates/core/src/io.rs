//! Text point-cloud format and an ASCII PLY reader.
//!
//! ```text
//! mccloud v1 n=<count> normals=<0|1> features=<M>
//! # comments are allowed anywhere
//! x y z [nx ny nz] [f1 .. fM]
//! ```

use std::fmt::Write as _;
use std::fs;
use std::io::{BufRead, BufReader, Read};
use std::path::Path;

use crate::cloud::{FeatureMap, PointCloud, Vec3};
use crate::error::{Error, Result};

fn parse_err(line: usize, msg: impl Into<String>) -> Error {
    Error::Parse {
        line,
        msg: msg.into(),
    }
}

struct Header {
    n: usize,
    normals: bool,
    features: usize,
}

fn parse_header(line_no: usize, line: &str) -> Result<Header> {
    let mut tokens = line.split_whitespace();
    if tokens.next() != Some("mccloud") || tokens.next() != Some("v1") {
        return Err(parse_err(line_no, "expected `mccloud v1` header"));
    }
    let (mut n, mut normals, mut features) = (None, None, None);
    for tok in tokens {
        let (key, value) = tok
            .split_once('=')
            .ok_or_else(|| parse_err(line_no, format!("malformed header field `{tok}`")))?;
        let value: usize = value
            .parse()
            .map_err(|_| parse_err(line_no, format!("bad header value `{tok}`")))?;
        match key {
            "n" => n = Some(value),
            "normals" if value <= 1 => normals = Some(value == 1),
            "features" => features = Some(value),
            _ => return Err(parse_err(line_no, format!("unknown header field `{tok}`"))),
        }
    }
    Ok(Header {
        n: n.ok_or_else(|| parse_err(line_no, "header missing n="))?,
        normals: normals.unwrap_or(false),
        features: features.unwrap_or(0),
    })
}

fn parse_floats(line_no: usize, line: &str, expected: usize) -> Result<Vec<f64>> {
    let vals: Vec<f64> = line
        .split_whitespace()
        .map(|t| {
            t.parse::<f64>()
                .map_err(|_| parse_err(line_no, format!("bad number `{t}`")))
        })
        .collect::<Result<_>>()?;
    if vals.len() != expected {
        return Err(parse_err(
            line_no,
            format!("expected {expected} values, found {}", vals.len()),
        ));
    }
    if vals.iter().any(|v| !v.is_finite()) {
        return Err(parse_err(line_no, "non-finite value"));
    }
    Ok(vals)
}

/// Reads the `mccloud v1` text format.
pub fn read_cloud<R: Read>(reader: R) -> Result<PointCloud> {
    let reader = BufReader::new(reader);
    let mut header: Option<Header> = None;
    let mut positions = Vec::new();
    let mut normals = Vec::new();
    let mut features = Vec::new();
    for (idx, line) in reader.lines().enumerate() {
        let line_no = idx + 1;
        let line = line?;
        let trimmed = line.trim();
        if trimmed.is_empty() || trimmed.starts_with('#') {
            continue;
        }
        let Some(h) = &header else {
            header = Some(parse_header(line_no, trimmed)?);
            continue;
        };
        let width = 3 + if h.normals { 3 } else { 0 } + h.features;
        let vals = parse_floats(line_no, trimmed, width)?;
        positions.push([vals[0], vals[1], vals[2]]);
        let mut rest = &vals[3..];
        if h.normals {
            normals.push([rest[0], rest[1], rest[2]]);
            rest = &rest[3..];
        }
        features.extend_from_slice(rest);
    }
    let h = header.ok_or_else(|| parse_err(0, "missing header"))?;
    if positions.len() != h.n {
        return Err(parse_err(
            0,
            format!("header declares {} points, found {}", h.n, positions.len()),
        ));
    }
    let mut cloud = PointCloud::new(positions);
    if h.normals {
        cloud = cloud.with_normals(normals)?;
    }
    if h.features > 0 {
        cloud = cloud.with_features(FeatureMap::from_vec(h.n, h.features, features)?)?;
    }
    Ok(cloud)
}

/// Serializes to the `mccloud v1` text format. Floats use the shortest
/// round-trip representation, so reading back is bit-exact.
pub fn write_cloud_string(cloud: &PointCloud) -> String {
    let m = cloud.features().map_or(0, FeatureMap::channels);
    let mut out = String::new();
    let _ = writeln!(
        out,
        "mccloud v1 n={} normals={} features={}",
        cloud.len(),
        u8::from(cloud.normals().is_some()),
        m
    );
    for i in 0..cloud.len() {
        let p = cloud.position(i);
        let _ = write!(out, "{} {} {}", p[0], p[1], p[2]);
        if let Some(n) = cloud.normals() {
            let _ = write!(out, " {} {} {}", n[i][0], n[i][1], n[i][2]);
        }
        if let Some(f) = cloud.features() {
            for v in f.row(i) {
                let _ = write!(out, " {v}");
            }
        }
        out.push('\n');
    }
    out
}

pub fn write_cloud(path: impl AsRef<Path>, cloud: &PointCloud) -> Result<()> {
    fs::write(path, write_cloud_string(cloud))?;
    Ok(())
}

pub fn load_cloud(path: impl AsRef<Path>) -> Result<PointCloud> {
    read_cloud(fs::File::open(path)?)
}

/// Reads the ASCII PLY subset: one `vertex` element with `x y z` and
/// optional `nx ny nz` properties. Other elements and properties are skipped.
pub fn read_ply_ascii<R: Read>(reader: R) -> Result<PointCloud> {
    let mut lines = BufReader::new(reader).lines().enumerate();
    let mut first = true;
    let mut in_vertex = false;
    let mut vertex_count = None;
    let mut vertex_props: Vec<String> = Vec::new();
    let mut elements_before_vertex = 0usize;
    for (idx, line) in lines.by_ref() {
        let line_no = idx + 1;
        let line = line?;
        let t = line.trim();
        if first {
            if t != "ply" {
                return Err(parse_err(line_no, "missing `ply` magic"));
            }
            first = false;
            continue;
        }
        let mut tok = t.split_whitespace();
        match tok.next() {
            Some("format") => {
                if tok.next() != Some("ascii") {
                    return Err(parse_err(line_no, "only ASCII PLY is supported"));
                }
            }
            Some("element") => {
                let name = tok.next().unwrap_or_default();
                let count: usize = tok
                    .next()
                    .and_then(|c| c.parse().ok())
                    .ok_or_else(|| parse_err(line_no, "bad element count"))?;
                in_vertex = name == "vertex";
                if in_vertex {
                    vertex_count = Some(count);
                } else if vertex_count.is_none() {
                    elements_before_vertex += count;
                }
            }
            Some("property") if in_vertex => {
                if let Some(name) = t.split_whitespace().last() {
                    vertex_props.push(name.to_string());
                }
            }
            Some("end_header") => break,
            _ => {}
        }
    }
    let n = vertex_count.ok_or_else(|| parse_err(0, "no vertex element"))?;
    let col = |name: &str| vertex_props.iter().position(|p| p == name);
    let xyz = match (col("x"), col("y"), col("z")) {
        (Some(x), Some(y), Some(z)) => [x, y, z],
        _ => return Err(parse_err(0, "vertex element lacks x/y/z")),
    };
    let nrm = match (col("nx"), col("ny"), col("nz")) {
        (Some(x), Some(y), Some(z)) => Some([x, y, z]),
        _ => None,
    };
    let mut skipped = 0;
    let mut positions: Vec<Vec3> = Vec::with_capacity(n);
    let mut normals: Vec<Vec3> = Vec::new();
    for (idx, line) in lines {
        let line_no = idx + 1;
        let line = line?;
        let t = line.trim();
        if t.is_empty() || t.starts_with("comment") {
            continue;
        }
        if skipped < elements_before_vertex {
            skipped += 1;
            continue;
        }
        if positions.len() == n {
            break;
        }
        let vals = parse_floats(line_no, t, vertex_props.len())?;
        positions.push(xyz.map(|c| vals[c]));
        if let Some(c) = nrm {
            normals.push(crate::cloud::normalize(c.map(|k| vals[k])));
        }
    }
    if positions.len() != n {
        return Err(parse_err(0, format!("expected {n} vertices, found {}", positions.len())));
    }
    let cloud = PointCloud::new(positions);
    if nrm.is_some() {
        cloud.with_normals(normals)
    } else {
        Ok(cloud)
    }
}
