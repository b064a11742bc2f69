//! Poisson-disk subsampling, point hierarchies, and farthest-point sampling.

use rand::RngCore;
use rayon::prelude::*;

use crate::cloud::{bounds_of, dist2, PointCloud, Vec3};
use crate::error::{Error, Result};
use crate::rng::Rng;
use crate::spatial::CellLayout;

const NONE: u32 = u32::MAX;

/// Dart throwing over a random permutation of the input: a point is kept iff
/// no previously kept point of the same batch id lies closer than `r_p`.
/// Returns kept indices in ascending order. Every dropped point is within
/// `r_p` of a kept one.
pub fn poisson_sample(cloud: &PointCloud, r_p: f64, rng: &mut Rng) -> Result<Vec<usize>> {
    if !(r_p > 0.0) || !r_p.is_finite() {
        return Err(Error::invalid(format!("Poisson radius must be positive, got {r_p}")));
    }
    if cloud.is_empty() {
        return Ok(Vec::new());
    }
    let salt = rng.next_u64();
    let vocab = cloud.batch_vocabulary();
    let mut members: Vec<Vec<usize>> = vec![Vec::new(); vocab.len()];
    for (i, b) in cloud.batch_ids().iter().enumerate() {
        members[vocab.binary_search(b).expect("in vocabulary")].push(i);
    }
    let per_batch: Vec<Vec<usize>> = members
        .into_par_iter()
        .zip(vocab.par_iter())
        .map(|(m, &b)| {
            let mut r = Rng::new(salt).fork_index("poisson-batch", b as u64);
            sample_batch(cloud.positions(), m, r_p, &mut r)
        })
        .collect();
    let mut out: Vec<usize> = per_batch.concat();
    out.sort_unstable();
    Ok(out)
}

fn sample_batch(pos: &[Vec3], mut order: Vec<usize>, r_p: f64, rng: &mut Rng) -> Vec<usize> {
    rng.shuffle(&mut order);
    let pts: Vec<Vec3> = order.iter().map(|&i| pos[i]).collect();
    let (lo, hi) = bounds_of(&pts).expect("non-empty batch");
    // With cells at least 2 r_p wide, the r_p-ball around a point meets only
    // its own cell and the neighbors on the nearer side along each axis.
    let layout = CellLayout::covering(lo, hi, 2.0 * r_p);
    let mut head = vec![NONE; layout.num_cells()];
    let mut next: Vec<u32> = Vec::new();
    let mut kept_pos: Vec<Vec3> = Vec::new();
    let mut accepted: Vec<usize> = Vec::new();
    let r2 = r_p * r_p;
    for (&i, &p) in order.iter().zip(&pts) {
        let occupied = |cell: usize| {
            let mut a = head[cell];
            while a != NONE {
                if dist2(p, kept_pos[a as usize]) < r2 {
                    return true;
                }
                a = next[a as usize];
            }
            false
        };
        let c = layout.coords(p);
        let side = [0, 1, 2].map(|d| {
            let f = (p[d] - layout.origin[d]) / layout.cell_size - c[d] as f64;
            if f < 0.5 { -1 } else { 1 }
        });
        let cell = layout.cell_of(p);
        let mut free = !occupied(cell);
        for mask in 1..8 {
            if !free {
                break;
            }
            let n = [0, 1, 2].map(|d| c[d] + if mask >> d & 1 == 1 { side[d] } else { 0 });
            if (0..3).all(|d| n[d] >= 0 && (n[d] as usize) < layout.dims[d]) {
                free = !occupied(layout.linear(n.map(|v| v as usize)));
            }
        }
        if free {
            next.push(head[cell]);
            head[cell] = accepted.len() as u32;
            kept_pos.push(p);
            accepted.push(i);
        }
    }
    accepted
}

/// Greedy farthest-point selection of `count` points from a random start.
/// Returns indices in selection order; ties go to the lowest index.
pub fn farthest_point_sample(cloud: &PointCloud, count: usize, rng: &mut Rng) -> Result<Vec<usize>> {
    let n = cloud.len();
    if count == 0 || count > n {
        return Err(Error::invalid(format!(
            "farthest-point count must be in 1..={n}, got {count}"
        )));
    }
    let pos = cloud.positions();
    let first = rng.below(n);
    let mut selected = Vec::with_capacity(count);
    selected.push(first);
    let mut min_d: Vec<f64> = pos.iter().map(|&p| dist2(p, pos[first])).collect();
    while selected.len() < count {
        let (mut best, mut best_d) = (0usize, f64::NEG_INFINITY);
        for (i, &d) in min_d.iter().enumerate() {
            if d > best_d {
                best = i;
                best_d = d;
            }
        }
        selected.push(best);
        let pb = pos[best];
        for (d, &p) in min_d.iter_mut().zip(pos) {
            let nd = dist2(p, pb);
            if nd < *d {
                *d = nd;
            }
        }
    }
    Ok(selected)
}

/// Largest integer strictly below `pi (r + r_p/2)^3 / (3 sqrt(2) r_p^3)`,
/// the packing bound on points of an `r_p`-disk sampling inside a receptive
/// field of radius `r`.
pub fn max_neighbors_bound(r: f64, r_p: f64) -> Result<usize> {
    if !(r_p > 0.0) || !(r_p <= r) || !r.is_finite() {
        return Err(Error::invalid(format!(
            "bound requires 0 < r_p <= r, got r = {r}, r_p = {r_p}"
        )));
    }
    let v = std::f64::consts::PI * (r + 0.5 * r_p).powi(3) / (3.0 * std::f64::consts::SQRT_2 * r_p.powi(3));
    Ok(v.ceil() as usize - 1)
}

/// Successive Poisson-disk levels; level 0 is the input.
#[derive(Debug, Clone)]
pub struct Hierarchy {
    pub levels: Vec<PointCloud>,
    /// Poisson radius of each constructed level (`radii[l - 1]` for level `l`).
    pub radii: Vec<f64>,
    /// `parent_indices[l - 1][i]` is the index in level `l - 1` of point `i` of level `l`.
    pub parent_indices: Vec<Vec<usize>>,
}

impl Hierarchy {
    pub fn num_levels(&self) -> usize {
        self.levels.len()
    }

    /// Indices of level-`l` points in level 0.
    pub fn base_indices(&self, level: usize) -> Vec<usize> {
        let mut idx: Vec<usize> = (0..self.levels[level].len()).collect();
        for l in (1..=level).rev() {
            idx = idx.iter().map(|&i| self.parent_indices[l - 1][i]).collect();
        }
        idx
    }
}

pub fn build_hierarchy(cloud: &PointCloud, radii: &[f64], rng: &mut Rng) -> Result<Hierarchy> {
    if radii.iter().any(|r| !(*r > 0.0)) || radii.windows(2).any(|w| w[1] <= w[0]) {
        return Err(Error::invalid(format!(
            "hierarchy radii must be positive and strictly increasing, got {radii:?}"
        )));
    }
    let mut levels = vec![cloud.clone()];
    let mut parent_indices = Vec::with_capacity(radii.len());
    for &r in radii {
        let prev = levels.last().expect("level 0");
        let keep = poisson_sample(prev, r, rng)?;
        levels.push(prev.subset(&keep));
        parent_indices.push(keep);
    }
    Ok(Hierarchy {
        levels,
        radii: radii.to_vec(),
        parent_indices,
    })
}
