//! Point clouds, per-point feature maps, and bounding-box scale.

use crate::error::{Error, Result};

pub type Vec3 = [f64; 3];

#[inline]
pub fn sub(a: Vec3, b: Vec3) -> Vec3 {
    [a[0] - b[0], a[1] - b[1], a[2] - b[2]]
}

#[inline]
pub fn dot(a: Vec3, b: Vec3) -> f64 {
    a[0] * b[0] + a[1] * b[1] + a[2] * b[2]
}

#[inline]
pub fn cross(a: Vec3, b: Vec3) -> Vec3 {
    [a[1] * b[2] - a[2] * b[1], a[2] * b[0] - a[0] * b[2], a[0] * b[1] - a[1] * b[0]]
}

#[inline]
pub fn norm(a: Vec3) -> f64 {
    dot(a, a).sqrt()
}

#[inline]
pub fn dist2(a: Vec3, b: Vec3) -> f64 {
    let d = sub(a, b);
    dot(d, d)
}

#[inline]
pub fn scale(a: Vec3, s: f64) -> Vec3 {
    [a[0] * s, a[1] * s, a[2] * s]
}

pub fn normalize(a: Vec3) -> Vec3 {
    let n = norm(a);
    if n > 0.0 {
        scale(a, 1.0 / n)
    } else {
        a
    }
}

/// Dense row-major per-point features, `rows` points by `channels` values.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureMap {
    values: Vec<f64>,
    rows: usize,
    channels: usize,
}

impl FeatureMap {
    pub fn zeros(rows: usize, channels: usize) -> Self {
        Self {
            values: vec![0.0; rows * channels],
            rows,
            channels,
        }
    }

    pub fn filled(rows: usize, channels: usize, value: f64) -> Self {
        Self {
            values: vec![value; rows * channels],
            rows,
            channels,
        }
    }

    pub fn from_vec(rows: usize, channels: usize, values: Vec<f64>) -> Result<Self> {
        if values.len() != rows * channels {
            return Err(Error::shape(format!(
                "feature buffer has {} values, expected {rows}x{channels}",
                values.len()
            )));
        }
        if let Some(i) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::invalid(format!("non-finite feature value at {i}")));
        }
        Ok(Self {
            values,
            rows,
            channels,
        })
    }

    #[inline]
    pub fn rows(&self) -> usize {
        self.rows
    }

    #[inline]
    pub fn channels(&self) -> usize {
        self.channels
    }

    #[inline]
    pub fn row(&self, i: usize) -> &[f64] {
        &self.values[i * self.channels..(i + 1) * self.channels]
    }

    #[inline]
    pub fn row_mut(&mut self, i: usize) -> &mut [f64] {
        &mut self.values[i * self.channels..(i + 1) * self.channels]
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    /// Keeps the rows listed in `indices`, in that order.
    pub fn select_rows(&self, indices: &[usize]) -> Self {
        let mut values = Vec::with_capacity(indices.len() * self.channels);
        for &i in indices {
            values.extend_from_slice(self.row(i));
        }
        Self {
            values,
            rows: indices.len(),
            channels: self.channels,
        }
    }

    /// Appends the channels of `other` after the channels of `self`, row by row.
    pub fn concat_channels(&self, other: &FeatureMap) -> Result<Self> {
        if self.rows != other.rows {
            return Err(Error::shape(format!(
                "cannot concatenate {} rows with {} rows",
                self.rows, other.rows
            )));
        }
        let channels = self.channels + other.channels;
        let mut values = Vec::with_capacity(self.rows * channels);
        for i in 0..self.rows {
            values.extend_from_slice(self.row(i));
            values.extend_from_slice(other.row(i));
        }
        Ok(Self {
            values,
            rows: self.rows,
            channels,
        })
    }
}

/// A set of 3D samples with optional unit normals, optional features, and a
/// batch id per point. Immutable once built; the bounding-box diagonal is
/// cached at construction.
#[derive(Debug, Clone, PartialEq)]
pub struct PointCloud {
    positions: Vec<Vec3>,
    normals: Option<Vec<Vec3>>,
    features: Option<FeatureMap>,
    batch_ids: Vec<u32>,
    bbox_diag: f64,
}

const NORMAL_TOL: f64 = 1e-6;

impl PointCloud {
    /// All points in batch 0.
    pub fn new(positions: Vec<Vec3>) -> Self {
        let batch_ids = vec![0; positions.len()];
        let bbox_diag = bbox_diag_of(&positions);
        Self {
            positions,
            normals: None,
            features: None,
            batch_ids,
            bbox_diag,
        }
    }

    pub fn with_normals(mut self, normals: Vec<Vec3>) -> Result<Self> {
        if normals.len() != self.positions.len() {
            return Err(Error::shape(format!(
                "{} normals for {} points",
                normals.len(),
                self.positions.len()
            )));
        }
        if let Some(i) = normals
            .iter()
            .position(|n| (norm(*n) - 1.0).abs() > NORMAL_TOL)
        {
            return Err(Error::invalid(format!("normal {i} is not unit length")));
        }
        self.normals = Some(normals);
        Ok(self)
    }

    pub fn with_features(mut self, features: FeatureMap) -> Result<Self> {
        if features.rows() != self.positions.len() {
            return Err(Error::shape(format!(
                "{} feature rows for {} points",
                features.rows(),
                self.positions.len()
            )));
        }
        self.features = Some(features);
        Ok(self)
    }

    pub fn with_batch_ids(mut self, batch_ids: Vec<u32>) -> Result<Self> {
        if batch_ids.len() != self.positions.len() {
            return Err(Error::shape(format!(
                "{} batch ids for {} points",
                batch_ids.len(),
                self.positions.len()
            )));
        }
        self.batch_ids = batch_ids;
        Ok(self)
    }

    #[inline]
    pub fn len(&self) -> usize {
        self.positions.len()
    }

    #[inline]
    pub fn is_empty(&self) -> bool {
        self.positions.is_empty()
    }

    #[inline]
    pub fn positions(&self) -> &[Vec3] {
        &self.positions
    }

    #[inline]
    pub fn position(&self, i: usize) -> Vec3 {
        self.positions[i]
    }

    pub fn normals(&self) -> Option<&[Vec3]> {
        self.normals.as_deref()
    }

    pub fn features(&self) -> Option<&FeatureMap> {
        self.features.as_ref()
    }

    #[inline]
    pub fn batch_ids(&self) -> &[u32] {
        &self.batch_ids
    }

    #[inline]
    pub fn batch_id(&self, i: usize) -> u32 {
        self.batch_ids[i]
    }

    /// Cached diagonal of the axis-aligned bounding box; 0 for empty clouds.
    #[inline]
    pub fn bbox_diag(&self) -> f64 {
        self.bbox_diag
    }

    /// Distinct batch ids in ascending order.
    pub fn batch_vocabulary(&self) -> Vec<u32> {
        let mut ids = self.batch_ids.clone();
        ids.sort_unstable();
        ids.dedup();
        ids
    }

    /// Index-subset of this cloud, carrying normals, features and batch ids.
    pub fn subset(&self, indices: &[usize]) -> Self {
        let positions: Vec<Vec3> = indices.iter().map(|&i| self.positions[i]).collect();
        let bbox_diag = bbox_diag_of(&positions);
        Self {
            normals: self
                .normals
                .as_ref()
                .map(|n| indices.iter().map(|&i| n[i]).collect()),
            features: self.features.as_ref().map(|f| f.select_rows(indices)),
            batch_ids: indices.iter().map(|&i| self.batch_ids[i]).collect(),
            positions,
            bbox_diag,
        }
    }

    /// Concatenates clouds, assigning batch id `k` to every point of `clouds[k]`.
    pub fn batched(clouds: &[PointCloud]) -> Result<Self> {
        let total: usize = clouds.iter().map(PointCloud::len).sum();
        let mut positions = Vec::with_capacity(total);
        let mut batch_ids = Vec::with_capacity(total);
        let all_normals = clouds.iter().all(|c| c.normals.is_some());
        let mut normals = Vec::with_capacity(if all_normals { total } else { 0 });
        for (k, c) in clouds.iter().enumerate() {
            positions.extend_from_slice(&c.positions);
            batch_ids.extend(std::iter::repeat_n(k as u32, c.len()));
            if all_normals {
                normals.extend_from_slice(c.normals.as_ref().unwrap());
            }
        }
        let cloud = PointCloud::new(positions).with_batch_ids(batch_ids)?;
        if all_normals && !clouds.is_empty() {
            cloud.with_normals(normals)
        } else {
            Ok(cloud)
        }
    }

    /// Axis-aligned bounds `(min, max)`; `None` when empty.
    pub fn bounds(&self) -> Option<(Vec3, Vec3)> {
        bounds_of(&self.positions)
    }
}

pub(crate) fn bounds_of(positions: &[Vec3]) -> Option<(Vec3, Vec3)> {
    let first = *positions.first()?;
    let mut lo = first;
    let mut hi = first;
    for p in positions {
        for d in 0..3 {
            lo[d] = lo[d].min(p[d]);
            hi[d] = hi[d].max(p[d]);
        }
    }
    Some((lo, hi))
}

fn bbox_diag_of(positions: &[Vec3]) -> f64 {
    bounds_of(positions).map_or(0.0, |(lo, hi)| norm(sub(hi, lo)))
}

/// Diagonal length of the axis-aligned bounding box of the cloud.
pub fn compute_bbox_diag(cloud: &PointCloud) -> Result<f64> {
    if cloud.is_empty() {
        return Err(Error::EmptyInput("bounding box of an empty cloud"));
    }
    Ok(bbox_diag_of(cloud.positions()))
}

/// Receptive radius as a fraction of the scene diagonal.
pub fn receptive_radius(fraction: f64, bbox_diag: f64) -> Result<f64> {
    if !(fraction > 0.0) || !(bbox_diag > 0.0) {
        return Err(Error::invalid(format!(
            "receptive radius needs positive fraction and diagonal, got {fraction} and {bbox_diag}"
        )));
    }
    Ok(fraction * bbox_diag)
}
