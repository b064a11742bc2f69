//! Training on top of `mcconv-core`: a small layer graph over Poisson-disk
//! hierarchies, cosine and cross-entropy losses, Adam with step decay,
//! binary checkpoints, and a synthetic normal-estimation task.

pub mod checkpoint;
pub mod data;
pub mod error;
pub mod loss;
pub mod network;
pub mod optim;
pub mod spec;
pub mod trainer;

pub use checkpoint::{load_checkpoint, read_checkpoint, save_checkpoint, write_checkpoint};
pub use data::{generate_dataset, load_dataset, resample, save_dataset, Dataset, DatasetConfig, ShapeSample};
pub use error::{Result, TrainError};
pub use loss::{cosine_loss, cosine_loss_grad, cross_entropy_loss};
pub use network::{backward, forward, shape_scale, Activations, Geometry, Mode};
pub use optim::{AdamConfig, Schedule, TrainState};
pub use spec::{normal_estimation_network, ConvKind, ConvSpec, EstimatorKind, LayerSpec, NetworkSpec, Source};
pub use trainer::{
    evaluate, metrics_csv, train_normal_estimation, MetricRow, Prepared, Regimen, TrainConfig, TrainOutcome,
};
