//! Monte Carlo convolution for non-uniformly sampled point clouds.
//!
//! Convolution at a point is estimated from the samples in its receptive
//! field, each weighted by the inverse of a kernel density estimate of the
//! sampling density. Kernels are small MLPs over normalized offsets.
//!
//! The crate is organized bottom-up:
//!
//! - [`cloud`]: point clouds, feature maps, bounding-box scale
//! - [`rng`]: seeded counter-based random streams
//! - [`io`]: text and ASCII PLY readers/writers
//! - [`spatial`]: voxel grids and flat neighbor tables
//! - [`density`]: per-pair kernel density estimates
//! - [`kernel`]: MLP kernels with analytic gradients
//! - [`conv`]: the estimator, its backward pass, multi-sampling concatenation
//! - [`poisson`]: Poisson-disk levels, hierarchies, farthest-point sampling
//! - [`protocols`]: non-uniform resampling and synthetic shapes

pub mod cloud;
pub mod conv;
pub mod density;
pub mod error;
pub mod io;
pub mod kernel;
pub mod poisson;
pub mod protocols;
pub mod rng;
pub mod spatial;

pub use cloud::{compute_bbox_diag, receptive_radius, FeatureMap, PointCloud, Vec3};
pub use conv::{
    analytic_conv_forward, build_conv_table, mc_conv_backward, mc_conv_forward, mc_conv_forward_same, multi_sampling_concat,
    ConvGradients, ConvInput, ConvLayerConfig, ConvMode, Estimator,
};
pub use density::{density_kernel_1d, estimate_pdf, DensityKernel, DensityParams};
pub use error::{Error, Result};
pub use kernel::{kernel_backward, kernel_forward, kernel_init, KernelParams, KernelShape};
pub use poisson::{build_hierarchy, farthest_point_sample, max_neighbors_bound, poisson_sample, Hierarchy};
pub use protocols::{
    apply_protocol, generate_shape, protocol_indices, scalar_field_on_sphere, Protocol, ProtocolKind,
    ScalarField, ShapeKind,
};
pub use rng::Rng;
pub use spatial::{build_grid, build_neighbor_table, radius_neighbors, NeighborTable, VoxelGrid};
