//! Synthetic shape datasets for normal estimation and their on-disk layout.
//!
//! A dataset directory holds `index.json` and one `mccloud` file per shape
//! under `train/` and `test/`. Shapes are stored densely sampled; sampling
//! protocols are applied when batches are drawn.

use std::fs;
use std::path::Path;

use mcconv_core::cloud::{dot, normalize};
use mcconv_core::{generate_shape, io, protocol_indices, PointCloud, Protocol, ProtocolKind, Rng, ShapeKind, Vec3};
use serde::{Deserialize, Serialize};

use crate::error::{Result, TrainError};

#[derive(Debug, Clone, PartialEq)]
pub struct ShapeSample {
    pub kind: ShapeKind,
    /// Dense surface samples with normals, centered, unit bounding-box diagonal.
    pub cloud: PointCloud,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub train: Vec<ShapeSample>,
    pub test: Vec<ShapeSample>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetConfig {
    pub shapes: Vec<String>,
    pub train: usize,
    pub test: usize,
    pub dense_points: usize,
    pub rotate: bool,
}

impl Default for DatasetConfig {
    fn default() -> Self {
        DatasetConfig {
            shapes: vec!["sphere".into(), "torus".into(), "ellipsoid".into(), "box".into()],
            train: 2400,
            test: 600,
            dense_points: 4096,
            rotate: true,
        }
    }
}

type Mat3 = [[f64; 3]; 3];

/// Uniformly distributed rotation from a random unit quaternion.
pub fn random_rotation(rng: &mut Rng) -> Mat3 {
    let mut q = [rng.normal(), rng.normal(), rng.normal(), rng.normal()];
    let n = q.iter().map(|v| v * v).sum::<f64>().sqrt();
    q.iter_mut().for_each(|v| *v /= n);
    let [w, x, y, z] = q;
    [
        [1.0 - 2.0 * (y * y + z * z), 2.0 * (x * y - w * z), 2.0 * (x * z + w * y)],
        [2.0 * (x * y + w * z), 1.0 - 2.0 * (x * x + z * z), 2.0 * (y * z - w * x)],
        [2.0 * (x * z - w * y), 2.0 * (y * z + w * x), 1.0 - 2.0 * (x * x + y * y)],
    ]
}

fn rotate(m: &Mat3, v: Vec3) -> Vec3 {
    [dot(m[0], v), dot(m[1], v), dot(m[2], v)]
}

/// Centers the bounding box at the origin and scales its diagonal to 1.
pub fn normalize_shape(cloud: &PointCloud) -> Result<PointCloud> {
    let (lo, hi) = cloud.bounds().ok_or(mcconv_core::Error::EmptyInput("shape"))?;
    let center = [0, 1, 2].map(|d| 0.5 * (lo[d] + hi[d]));
    let diag = mcconv_core::cloud::dist2(lo, hi).sqrt();
    if !(diag > 0.0) {
        return Err(TrainError::Dataset("shape has zero extent".into()));
    }
    let pos = cloud
        .positions()
        .iter()
        .map(|p| [0, 1, 2].map(|d| (p[d] - center[d]) / diag))
        .collect();
    let mut out = PointCloud::new(pos);
    if let Some(n) = cloud.normals() {
        out = out.with_normals(n.to_vec())?;
    }
    Ok(out)
}

pub fn make_shape(kind: ShapeKind, dense_points: usize, rotate_shape: bool, rng: &mut Rng) -> Result<ShapeSample> {
    let base = generate_shape(kind, dense_points, rng)?;
    let base = if rotate_shape {
        let m = random_rotation(rng);
        let pos = base.positions().iter().map(|&p| rotate(&m, p)).collect();
        let nrm = base
            .normals()
            .expect("generated shapes carry normals")
            .iter()
            .map(|&n| normalize(rotate(&m, n)))
            .collect();
        PointCloud::new(pos).with_normals(nrm)?
    } else {
        base
    };
    Ok(ShapeSample {
        kind,
        cloud: normalize_shape(&base)?,
    })
}

fn parse_shapes(names: &[String]) -> Result<Vec<ShapeKind>> {
    if names.is_empty() {
        return Err(TrainError::Dataset("no shape kinds given".into()));
    }
    names
        .iter()
        .map(|s| ShapeKind::parse(s).ok_or_else(|| TrainError::Dataset(format!("unknown shape `{s}`"))))
        .collect()
}

/// Shape `i` of each split uses kind `i mod k`; every shape draws from its own stream.
pub fn generate_dataset(cfg: &DatasetConfig, rng: &Rng) -> Result<Dataset> {
    use rayon::prelude::*;
    let kinds = parse_shapes(&cfg.shapes)?;
    let split = |tag: &str, n: usize| -> Result<Vec<ShapeSample>> {
        (0..n)
            .into_par_iter()
            .map(|i| {
                let mut r = rng.fork(tag).fork_index("shape", i as u64);
                make_shape(kinds[i % kinds.len()], cfg.dense_points, cfg.rotate, &mut r)
            })
            .collect()
    };
    Ok(Dataset {
        train: split("train", cfg.train)?,
        test: split("test", cfg.test)?,
    })
}

/// Applies `kind` to a dense shape and keeps at most `points` of the survivors.
pub fn resample(dense: &PointCloud, kind: ProtocolKind, points: usize, rng: &Rng) -> Result<PointCloud> {
    let proto = Protocol::new(kind, rng.fork("protocol"));
    let mut idx = protocol_indices(dense, &proto)?;
    if idx.len() > points {
        rng.fork("subsample").shuffle(&mut idx);
        idx.truncate(points);
        idx.sort_unstable();
    }
    if idx.is_empty() {
        return Err(mcconv_core::Error::EmptyInput("resampled shape").into());
    }
    Ok(dense.subset(&idx))
}

#[derive(Serialize, Deserialize)]
struct IndexEntry {
    file: String,
    shape: String,
}

#[derive(Serialize, Deserialize)]
struct Index {
    format: String,
    train: Vec<IndexEntry>,
    test: Vec<IndexEntry>,
}

pub fn save_dataset(dir: impl AsRef<Path>, data: &Dataset) -> Result<()> {
    let dir = dir.as_ref();
    let mut index = Index {
        format: "mcconv-dataset v1".into(),
        train: Vec::new(),
        test: Vec::new(),
    };
    for (name, samples) in [("train", &data.train), ("test", &data.test)] {
        fs::create_dir_all(dir.join(name))?;
        for (i, s) in samples.iter().enumerate() {
            let file = format!("{name}/{i:05}.mcc");
            io::write_cloud(dir.join(&file), &s.cloud)?;
            let entry = IndexEntry {
                file,
                shape: s.kind.name().into(),
            };
            if name == "train" {
                index.train.push(entry);
            } else {
                index.test.push(entry);
            }
        }
    }
    fs::write(dir.join("index.json"), serde_json::to_string_pretty(&index)?)?;
    Ok(())
}

pub fn load_dataset(dir: impl AsRef<Path>) -> Result<Dataset> {
    let dir = dir.as_ref();
    let index_path = dir.join("index.json");
    if !index_path.is_file() {
        return Err(TrainError::DatasetNotFound(dir.to_path_buf()));
    }
    let index: Index = serde_json::from_str(&fs::read_to_string(index_path)?)?;
    let load = |entries: &[IndexEntry]| -> Result<Vec<ShapeSample>> {
        entries
            .iter()
            .map(|e| {
                let kind = ShapeKind::parse(&e.shape)
                    .ok_or_else(|| TrainError::Dataset(format!("unknown shape `{}`", e.shape)))?;
                let cloud = io::load_cloud(dir.join(&e.file))?;
                if cloud.normals().is_none() {
                    return Err(TrainError::Dataset(format!("{} has no normals", e.file)));
                }
                Ok(ShapeSample { kind, cloud })
            })
            .collect()
    };
    Ok(Dataset {
        train: load(&index.train)?,
        test: load(&index.test)?,
    })
}
