//! Kernel density estimate of `p(y_j | x)` for every pair of a neighbor table.
//!
//! For a query `x` with neighborhood `N(x)` the density at neighbor `y_j` is
//!
//! ```text
//! p(y_j | x) = 1 / (|N(x)| sigma^3) * sum_{k in N(x)} prod_d h((y_jd - y_kd) / sigma)
//! ```
//!
//! so the same source point gets a different value in every receptive field.

use rayon::prelude::*;

use crate::cloud::{dist2, PointCloud};
use crate::error::{Error, Result};
use crate::spatial::NeighborTable;

const INV_SQRT_2PI: f64 = 0.398_942_280_401_432_7;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum DensityKernel {
    #[default]
    Gaussian,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DensityParams {
    pub sigma: f64,
    pub kernel: DensityKernel,
}

impl DensityParams {
    pub fn new(sigma: f64) -> Result<Self> {
        if !(sigma > 0.0) || !sigma.is_finite() {
            return Err(Error::invalid(format!("bandwidth must be positive, got {sigma}")));
        }
        Ok(Self {
            sigma,
            kernel: DensityKernel::Gaussian,
        })
    }

    /// Bandwidth `fraction * r`; the usual choice is a quarter of the radius.
    pub fn for_radius(r: f64, fraction: f64) -> Result<Self> {
        Self::new(fraction * r)
    }
}

pub const DEFAULT_SIGMA_FRACTION: f64 = 0.25;

/// One-dimensional density kernel `h`.
#[inline]
pub fn density_kernel_1d(t: f64) -> f64 {
    INV_SQRT_2PI * (-0.5 * t * t).exp()
}

/// Fills the pdf of every pair in `table`. `sources` must be the cloud the
/// table was built against.
pub fn estimate_pdf(
    mut table: NeighborTable,
    sources: &PointCloud,
    params: &DensityParams,
) -> Result<NeighborTable> {
    if table.num_sources() != sources.len() {
        return Err(Error::IndexMismatch(format!(
            "table built over {} sources, got a cloud of {}",
            table.num_sources(),
            sources.len()
        )));
    }
    if !(params.sigma > 0.0) {
        return Err(Error::invalid("bandwidth must be positive"));
    }
    let sigma = params.sigma;
    // Product of Gaussians over axes == one isotropic Gaussian of the distance.
    let norm = INV_SQRT_2PI.powi(3) / (sigma * sigma * sigma);
    let inv_two_sigma2 = 1.0 / (2.0 * sigma * sigma);
    let pos = sources.positions();
    let per_query: Vec<Vec<f64>> = (0..table.num_queries())
        .into_par_iter()
        .map(|q| {
            let nb = table.neighbors_of(q);
            let n = nb.len();
            let mut sums = vec![0.0; n];
            for a in 0..n {
                sums[a] += 1.0;
                let ya = pos[nb[a]];
                for b in a + 1..n {
                    let w = (-dist2(ya, pos[nb[b]]) * inv_two_sigma2).exp();
                    sums[a] += w;
                    sums[b] += w;
                }
            }
            let scale = norm / n as f64;
            sums.iter_mut().for_each(|s| *s *= scale);
            sums
        })
        .collect();
    table.set_pdf(per_query.concat())?;
    Ok(table)
}
