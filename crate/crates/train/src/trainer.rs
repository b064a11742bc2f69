//! Normal-estimation training and evaluation loops.

use std::fmt::Write as _;

use mcconv_core::{FeatureMap, PointCloud, ProtocolKind, Rng};
use rand::RngCore;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::{resample, Dataset, ShapeSample};
use crate::error::{Result, TrainError};
use crate::loss::{cosine_loss, cosine_loss_grad};
use crate::network::{backward, forward, Geometry, Mode};
use crate::optim::{Schedule, TrainState};
use crate::spec::{EstimatorKind, NetworkSpec};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Regimen {
    /// Every training shape is sampled uniformly.
    Uniform,
    /// Every training shape gets one of the four non-uniform protocols.
    Nonuniform,
}

impl Regimen {
    pub fn name(&self) -> &'static str {
        match self {
            Regimen::Uniform => "uniform",
            Regimen::Nonuniform => "nonuniform",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "uniform" => Some(Regimen::Uniform),
            "nonuniform" => Some(Regimen::Nonuniform),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    /// Points kept per shape after resampling.
    pub points: usize,
    pub schedule: Schedule,
    pub regimen: Regimen,
    pub estimator: EstimatorKind,
    /// Validate every this many epochs; 0 validates only after the last one.
    pub eval_every: usize,
    /// Sampling seeds averaged by the final evaluation.
    pub eval_seeds: usize,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 60,
            batch_size: 16,
            points: 1024,
            schedule: Schedule::default(),
            regimen: Regimen::Uniform,
            estimator: EstimatorKind::Mc,
            eval_every: 5,
            eval_seeds: 5,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricRow {
    pub epoch: usize,
    pub split: String,
    pub protocol: String,
    pub loss: f64,
}

pub fn metrics_csv(rows: &[MetricRow]) -> String {
    let mut out = String::from("epoch,split,protocol,loss\n");
    for r in rows {
        let _ = writeln!(out, "{},{},{},{}", r.epoch, r.split, r.protocol, r.loss);
    }
    out
}

/// A resampled shape with its hierarchy, ready for repeated forward passes.
#[derive(Debug, Clone)]
pub struct Prepared {
    pub cloud: PointCloud,
    pub geometry: Geometry,
    pub input: FeatureMap,
}

impl Prepared {
    pub fn new(spec: &NetworkSpec, dense: &PointCloud, protocol: ProtocolKind, points: usize, rng: &Rng) -> Result<Self> {
        let cloud = resample(dense, protocol, points, &rng.fork("resample"))?;
        let geometry = Geometry::build(spec, &cloud, &mut rng.fork("hierarchy"))?;
        let input = FeatureMap::filled(cloud.len(), spec.input_channels, 1.0);
        Ok(Prepared { cloud, geometry, input })
    }

    fn normals(&self) -> &[mcconv_core::Vec3] {
        self.cloud.normals().expect("dataset shapes carry normals")
    }
}

/// Summed cosine loss over the points of one shape and the gradient of that sum.
pub fn sample_gradient(spec: &NetworkSpec, params: &[f64], p: &Prepared, dropout: &Rng) -> Result<(f64, Vec<f64>)> {
    let acts = forward(spec, params, &p.geometry, &p.input, Mode::Train(dropout))?;
    let (mean, mut g) = cosine_loss_grad(acts.output(), p.normals())?;
    let n = p.cloud.len() as f64;
    g.values_mut().iter_mut().for_each(|v| *v *= n);
    Ok((mean * n, backward(spec, params, &p.geometry, &acts, &g)?))
}

/// One optimizer step on a batch; the loss is the mean over all its points.
/// Returns the summed loss and point count.
pub fn batch_step(spec: &NetworkSpec, state: &mut TrainState, batch: &[&Prepared], rng: &Rng) -> Result<(f64, usize)> {
    let params = &state.params;
    let parts: Vec<(f64, Vec<f64>)> = batch
        .par_iter()
        .enumerate()
        .map(|(k, p)| sample_gradient(spec, params, p, &rng.fork_index("sample", k as u64)))
        .collect::<Result<_>>()?;
    let points: usize = batch.iter().map(|p| p.cloud.len()).sum();
    let mut grads = vec![0.0; params.len()];
    let mut loss = 0.0;
    for (l, g) in &parts {
        loss += l;
        grads.iter_mut().zip(g).for_each(|(a, b)| *a += b);
    }
    let inv = 1.0 / points as f64;
    grads.iter_mut().for_each(|g| *g *= inv);
    state.adam_step(&grads)?;
    Ok((loss, points))
}

/// Mean cosine loss of a prepared set, weighting every point equally.
pub fn prepared_loss(spec: &NetworkSpec, params: &[f64], set: &[Prepared]) -> Result<f64> {
    let parts: Vec<(f64, usize)> = set
        .par_iter()
        .map(|p| {
            let out = forward(spec, params, &p.geometry, &p.input, Mode::Eval)?.into_output();
            Ok((cosine_loss(&out, p.normals())? * p.cloud.len() as f64, p.cloud.len()))
        })
        .collect::<Result<_>>()?;
    let (sum, n) = parts.iter().fold((0.0, 0), |(s, n), (l, k)| (s + l, n + k));
    Ok(if n == 0 { 0.0 } else { sum / n as f64 })
}

fn prepare_all(
    spec: &NetworkSpec,
    shapes: &[ShapeSample],
    protocol: ProtocolKind,
    points: usize,
    rng: &Rng,
) -> Result<Vec<Prepared>> {
    shapes
        .par_iter()
        .enumerate()
        .map(|(i, s)| Prepared::new(spec, &s.cloud, protocol, points, &rng.fork_index("shape", i as u64)))
        .collect()
}

/// Loss under `protocol`, averaged over `seeds` independent resamplings.
pub fn evaluate(
    spec: &NetworkSpec,
    params: &[f64],
    shapes: &[ShapeSample],
    protocol: ProtocolKind,
    points: usize,
    seeds: &[u64],
) -> Result<f64> {
    if seeds.is_empty() {
        return Err(TrainError::spec("evaluation needs at least one seed"));
    }
    let mut total = 0.0;
    for &s in seeds {
        let rng = Rng::new(s).fork(protocol.name());
        total += prepared_loss(spec, params, &prepare_all(spec, shapes, protocol, points, &rng)?)?;
    }
    Ok(total / seeds.len() as f64)
}

pub fn eval_seeds(base: u64, count: usize) -> Vec<u64> {
    let rng = Rng::new(base).fork("eval-seeds");
    (0..count as u64).map(|k| rng.fork_index("seed", k).next_u64()).collect()
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub spec: NetworkSpec,
    pub state: TrainState,
    pub metrics: Vec<MetricRow>,
}

fn training_protocols(regimen: Regimen, n: usize, rng: &Rng) -> Vec<ProtocolKind> {
    match regimen {
        Regimen::Uniform => vec![ProtocolKind::Uniform; n],
        Regimen::Nonuniform => {
            let mut r = rng.fork("regimen");
            (0..n)
                .map(|_| ProtocolKind::NON_UNIFORM[r.below(ProtocolKind::NON_UNIFORM.len())])
                .collect()
        }
    }
}

/// Trains `spec` (with every convolution switched to `cfg.estimator`) on the
/// training split. The final rows of the metrics evaluate the test split
/// under all five protocols averaged over `cfg.eval_seeds` seeds.
pub fn train_normal_estimation(spec: &NetworkSpec, cfg: &TrainConfig, data: &Dataset) -> Result<TrainOutcome> {
    if cfg.batch_size == 0 || cfg.points == 0 {
        return Err(TrainError::spec("batch size and point count must be positive"));
    }
    if data.train.is_empty() {
        return Err(TrainError::Dataset("training split is empty".into()));
    }
    let spec = spec.clone().with_estimator(cfg.estimator);
    let rng = Rng::new(cfg.seed);
    let mut state = TrainState::new(spec.init_params(&rng.fork("init"))?, cfg.schedule)?;
    let protocols = training_protocols(cfg.regimen, data.train.len(), &rng);
    let prep_rng = rng.fork("prepare");
    let train: Vec<Prepared> = data
        .train
        .par_iter()
        .zip(&protocols)
        .enumerate()
        .map(|(i, (s, &p))| Prepared::new(&spec, &s.cloud, p, cfg.points, &prep_rng.fork_index("shape", i as u64)))
        .collect::<Result<_>>()?;
    let val_seed = eval_seeds(cfg.seed, 1);
    let mut metrics = Vec::new();
    let mut order: Vec<usize> = (0..train.len()).collect();
    for epoch in 0..cfg.epochs {
        state.begin_epoch(epoch);
        let epoch_rng = rng.fork_index("epoch", epoch as u64);
        epoch_rng.fork("shuffle").shuffle(&mut order);
        let (mut sum, mut n) = (0.0, 0);
        for (b, chunk) in order.chunks(cfg.batch_size).enumerate() {
            let batch: Vec<&Prepared> = chunk.iter().map(|&i| &train[i]).collect();
            let (l, k) = batch_step(&spec, &mut state, &batch, &epoch_rng.fork_index("batch", b as u64))?;
            sum += l;
            n += k;
        }
        metrics.push(MetricRow {
            epoch,
            split: "train".into(),
            protocol: cfg.regimen.name().into(),
            loss: sum / n as f64,
        });
        if cfg.eval_every > 0 && (epoch + 1) % cfg.eval_every == 0 && !data.test.is_empty() {
            for p in ProtocolKind::ALL {
                metrics.push(MetricRow {
                    epoch,
                    split: "val".into(),
                    protocol: p.name().into(),
                    loss: evaluate(&spec, &state.params, &data.test, p, cfg.points, &val_seed)?,
                });
            }
        }
    }
    if !data.test.is_empty() && cfg.eval_seeds > 0 {
        let seeds = eval_seeds(cfg.seed, cfg.eval_seeds);
        for p in ProtocolKind::ALL {
            metrics.push(MetricRow {
                epoch: cfg.epochs,
                split: "test".into(),
                protocol: p.name().into(),
                loss: evaluate(&spec, &state.params, &data.test, p, cfg.points, &seeds)?,
            });
        }
    }
    Ok(TrainOutcome { spec, state, metrics })
}
