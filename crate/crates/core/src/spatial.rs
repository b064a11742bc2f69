//! Uniform voxel grids and flat radius-neighbor tables.
//!
//! One grid is built per batch id. Within a grid, points are bucketed by a
//! counting sort over linearized cell coordinates, so `point_order` is
//! canonical: grouped by cell, ascending by original index inside a cell.

use rayon::prelude::*;

use crate::cloud::{bounds_of, dist2, PointCloud, Vec3};
use crate::error::{Error, Result};

/// Cells beyond this count trigger a coarser cell size. Coarser cells keep
/// the 27-cell scan exact; only the per-cell candidate count grows.
const MAX_CELLS: usize = 1 << 24;

#[derive(Debug, Clone, Copy, PartialEq)]
pub(crate) struct CellLayout {
    pub origin: Vec3,
    pub cell_size: f64,
    pub dims: [usize; 3],
}

impl CellLayout {
    pub fn covering(lo: Vec3, hi: Vec3, cell_size: f64) -> Self {
        let mut cell_size = cell_size;
        loop {
            let dims = [0, 1, 2].map(|d| ((hi[d] - lo[d]) / cell_size).floor() as usize + 1);
            let cells = dims.iter().try_fold(1usize, |acc, &d| acc.checked_mul(d));
            match cells {
                Some(c) if c <= MAX_CELLS => {
                    return Self {
                        origin: lo,
                        cell_size,
                        dims,
                    }
                }
                _ => cell_size *= 2.0,
            }
        }
    }

    #[inline]
    pub fn num_cells(&self) -> usize {
        self.dims[0] * self.dims[1] * self.dims[2]
    }

    /// Unclamped integer cell coordinates (may lie outside the grid).
    #[inline]
    pub fn coords(&self, p: Vec3) -> [i64; 3] {
        [0, 1, 2].map(|d| ((p[d] - self.origin[d]) / self.cell_size).floor() as i64)
    }

    /// Cell of a point known to lie inside the covered box.
    #[inline]
    pub fn cell_of(&self, p: Vec3) -> usize {
        let c = self.coords(p);
        let cx = c[0].clamp(0, self.dims[0] as i64 - 1) as usize;
        let cy = c[1].clamp(0, self.dims[1] as i64 - 1) as usize;
        let cz = c[2].clamp(0, self.dims[2] as i64 - 1) as usize;
        self.linear([cx, cy, cz])
    }

    #[inline]
    pub fn linear(&self, c: [usize; 3]) -> usize {
        (c[2] * self.dims[1] + c[1]) * self.dims[0] + c[0]
    }

    /// Calls `f` with every in-range cell in the 3x3x3 block around `c`.
    #[inline]
    pub fn for_each_adjacent(&self, c: [i64; 3], mut f: impl FnMut(usize)) {
        for dz in -1..=1i64 {
            let z = c[2] + dz;
            if z < 0 || z >= self.dims[2] as i64 {
                continue;
            }
            for dy in -1..=1i64 {
                let y = c[1] + dy;
                if y < 0 || y >= self.dims[1] as i64 {
                    continue;
                }
                for dx in -1..=1i64 {
                    let x = c[0] + dx;
                    if x < 0 || x >= self.dims[0] as i64 {
                        continue;
                    }
                    f(self.linear([x as usize, y as usize, z as usize]));
                }
            }
        }
    }
}

/// Voxel grid over the points of one batch id.
#[derive(Debug, Clone)]
pub struct VoxelGrid {
    layout: CellLayout,
    /// `cell_start[c]..cell_start[c + 1]` indexes `point_order` for cell `c`.
    cell_start: Vec<usize>,
    point_order: Vec<usize>,
    batch_tag: u32,
    source_len: usize,
}

impl VoxelGrid {
    pub fn cell_size(&self) -> f64 {
        self.layout.cell_size
    }

    pub fn origin(&self) -> Vec3 {
        self.layout.origin
    }

    pub fn dims(&self) -> [usize; 3] {
        self.layout.dims
    }

    pub fn batch_tag(&self) -> u32 {
        self.batch_tag
    }

    pub fn point_order(&self) -> &[usize] {
        &self.point_order
    }

    /// `(start, end)` into `point_order` for linear cell index `cell`.
    pub fn cell_range(&self, cell: usize) -> (usize, usize) {
        (self.cell_start[cell], self.cell_start[cell + 1])
    }

    pub fn cell_points(&self, cell: usize) -> &[usize] {
        &self.point_order[self.cell_start[cell]..self.cell_start[cell + 1]]
    }

    /// Linear cell index holding position `p`.
    pub fn cell_of(&self, p: Vec3) -> usize {
        self.layout.cell_of(p)
    }

    /// Integer cell coordinates of `p` relative to the origin, unclamped.
    pub fn cell_coords(&self, p: Vec3) -> [i64; 3] {
        self.layout.coords(p)
    }

    fn build(cloud: &PointCloud, members: &[usize], batch_tag: u32, cell_size: f64) -> Self {
        let pts: Vec<Vec3> = members.iter().map(|&i| cloud.position(i)).collect();
        let (lo, hi) = bounds_of(&pts).expect("non-empty batch");
        let layout = CellLayout::covering(lo, hi, cell_size);
        let cells: Vec<usize> = pts.iter().map(|&p| layout.cell_of(p)).collect();
        let mut cell_start = vec![0usize; layout.num_cells() + 1];
        for &c in &cells {
            cell_start[c + 1] += 1;
        }
        for c in 0..layout.num_cells() {
            cell_start[c + 1] += cell_start[c];
        }
        let mut cursor = cell_start.clone();
        let mut point_order = vec![0usize; members.len()];
        // members ascend, so each cell's slice ends up ascending.
        for (k, &c) in cells.iter().enumerate() {
            point_order[cursor[c]] = members[k];
            cursor[c] += 1;
        }
        Self {
            layout,
            cell_start,
            point_order,
            batch_tag,
            source_len: cloud.len(),
        }
    }
}

/// One grid per batch id, ordered by batch id.
pub fn build_grid(cloud: &PointCloud, cell_size: f64) -> Result<Vec<VoxelGrid>> {
    if !(cell_size > 0.0) || !cell_size.is_finite() {
        return Err(Error::invalid(format!("cell size must be positive, got {cell_size}")));
    }
    if cloud.is_empty() {
        return Err(Error::EmptyInput("grid over an empty cloud"));
    }
    let vocab = cloud.batch_vocabulary();
    let mut members: Vec<Vec<usize>> = vec![Vec::new(); vocab.len()];
    for (i, b) in cloud.batch_ids().iter().enumerate() {
        let slot = vocab.binary_search(b).expect("id in vocabulary");
        members[slot].push(i);
    }
    Ok(vocab
        .par_iter()
        .zip(members.par_iter())
        .map(|(&b, m)| VoxelGrid::build(cloud, m, b, cell_size))
        .collect())
}

/// Flat neighbor lists with one `(start, end)` range per query and an
/// optional pdf value per pair.
#[derive(Debug, Clone, PartialEq)]
pub struct NeighborTable {
    offsets: Vec<usize>,
    neighbors: Vec<usize>,
    pdf: Option<Vec<f64>>,
    radius: f64,
    num_sources: usize,
}

impl NeighborTable {
    /// Builds a table from explicit per-query neighbor lists. Each list is
    /// sorted ascending; indices must be below `num_sources`.
    pub fn from_lists(lists: Vec<Vec<usize>>, radius: f64, num_sources: usize) -> Result<Self> {
        let mut offsets = Vec::with_capacity(lists.len() + 1);
        offsets.push(0);
        let mut neighbors = Vec::new();
        for mut l in lists {
            l.sort_unstable();
            if l.last().is_some_and(|&j| j >= num_sources) {
                return Err(Error::IndexMismatch(format!(
                    "neighbor index out of range for {num_sources} sources"
                )));
            }
            neighbors.extend_from_slice(&l);
            offsets.push(neighbors.len());
        }
        Ok(Self {
            offsets,
            neighbors,
            pdf: None,
            radius,
            num_sources,
        })
    }

    #[inline]
    pub fn num_queries(&self) -> usize {
        self.offsets.len() - 1
    }

    #[inline]
    pub fn num_pairs(&self) -> usize {
        self.neighbors.len()
    }

    pub fn num_sources(&self) -> usize {
        self.num_sources
    }

    pub fn radius(&self) -> f64 {
        self.radius
    }

    #[inline]
    pub fn range(&self, query: usize) -> (usize, usize) {
        (self.offsets[query], self.offsets[query + 1])
    }

    #[inline]
    pub fn neighbors_of(&self, query: usize) -> &[usize] {
        &self.neighbors[self.offsets[query]..self.offsets[query + 1]]
    }

    pub fn neighbors(&self) -> &[usize] {
        &self.neighbors
    }

    pub fn offsets(&self) -> &[usize] {
        &self.offsets
    }

    pub fn pdf(&self) -> Option<&[f64]> {
        self.pdf.as_deref()
    }

    pub fn pdf_of(&self, query: usize) -> Option<&[f64]> {
        let (s, e) = self.range(query);
        self.pdf.as_ref().map(|p| &p[s..e])
    }

    /// Installs externally supplied pdf values, one per pair, all positive.
    pub fn set_pdf(&mut self, pdf: Vec<f64>) -> Result<()> {
        if pdf.len() != self.neighbors.len() {
            return Err(Error::shape(format!(
                "{} pdf values for {} pairs",
                pdf.len(),
                self.neighbors.len()
            )));
        }
        if let Some(i) = pdf.iter().position(|p| !(*p > 0.0) || !p.is_finite()) {
            return Err(Error::invalid(format!("pdf value {i} is not positive and finite")));
        }
        self.pdf = Some(pdf);
        Ok(())
    }

    pub fn with_pdf(mut self, pdf: Vec<f64>) -> Result<Self> {
        self.set_pdf(pdf)?;
        Ok(self)
    }

    pub fn clear_pdf(&mut self) {
        self.pdf = None;
    }
}

const QUERY_CHUNK: usize = 256;

/// All source points within distance `r` (closed ball) of each query, restricted
/// to the query's batch id. Every grid must have been built over `sources`
/// with `cell_size >= r`.
pub fn build_neighbor_table(
    queries: &PointCloud,
    sources: &PointCloud,
    grids: &[VoxelGrid],
    r: f64,
) -> Result<NeighborTable> {
    if !(r > 0.0) || !r.is_finite() {
        return Err(Error::invalid(format!("radius must be positive, got {r}")));
    }
    let covered: usize = grids.iter().map(|g| g.point_order.len()).sum();
    if covered != sources.len() || grids.iter().any(|g| g.source_len != sources.len()) {
        return Err(Error::IndexMismatch(format!(
            "grids cover {covered} points but the source cloud has {}",
            sources.len()
        )));
    }
    if let Some(g) = grids.iter().find(|g| g.cell_size() < r) {
        return Err(Error::IndexMismatch(format!(
            "grid cell size {} is smaller than the query radius {r}",
            g.cell_size()
        )));
    }
    if grids.windows(2).any(|w| w[0].batch_tag >= w[1].batch_tag) {
        return Err(Error::IndexMismatch("grids must be ordered by batch id".into()));
    }
    let r2 = r * r;
    let src = sources.positions();
    let chunks: Vec<(Vec<usize>, Vec<usize>)> = (0..queries.len())
        .collect::<Vec<_>>()
        .par_chunks(QUERY_CHUNK)
        .map(|chunk| {
            let mut nbrs = Vec::new();
            let mut counts = Vec::with_capacity(chunk.len());
            for &q in chunk {
                let start = nbrs.len();
                let x = queries.position(q);
                let b = queries.batch_id(q);
                if let Ok(g) = grids.binary_search_by_key(&b, |g| g.batch_tag) {
                    let grid = &grids[g];
                    grid.layout.for_each_adjacent(grid.layout.coords(x), |cell| {
                        for &j in grid.cell_points(cell) {
                            if dist2(x, src[j]) <= r2 {
                                nbrs.push(j);
                            }
                        }
                    });
                }
                nbrs[start..].sort_unstable();
                counts.push(nbrs.len() - start);
            }
            (nbrs, counts)
        })
        .collect();
    let total: usize = chunks.iter().map(|(n, _)| n.len()).sum();
    let mut neighbors = Vec::with_capacity(total);
    let mut offsets = Vec::with_capacity(queries.len() + 1);
    offsets.push(0);
    for (n, counts) in chunks {
        for c in counts {
            offsets.push(offsets.last().unwrap() + c);
        }
        neighbors.extend(n);
    }
    Ok(NeighborTable {
        offsets,
        neighbors,
        pdf: None,
        radius: r,
        num_sources: sources.len(),
    })
}

/// Builds grids over `sources` with cell size `r` and queries them.
pub fn radius_neighbors(queries: &PointCloud, sources: &PointCloud, r: f64) -> Result<NeighborTable> {
    if sources.is_empty() {
        if !(r > 0.0) {
            return Err(Error::invalid(format!("radius must be positive, got {r}")));
        }
        return NeighborTable::from_lists(vec![Vec::new(); queries.len()], r, 0);
    }
    let grids = build_grid(sources, r)?;
    build_neighbor_table(queries, sources, &grids, r)
}
