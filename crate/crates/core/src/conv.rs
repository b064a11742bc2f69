//! Monte Carlo convolution over point clouds.
//!
//! For an output point `x` with receptive field `N(x)` of radius `r`:
//!
//! ```text
//! (f * g)(x) ~= 1/|N(x)| * sum_j f(y_j) g((x - y_j) / r) / p(y_j | x)
//! ```
//!
//! The density `p` is that of the normalized offsets `(y - x) / r`, i.e. the
//! kernel density estimate times `r^3`, so the estimate integrates over the
//! unit ball and does not depend on the scale of the scene.
//!
//! Input and output points may come from different samplings (pooling and
//! upsampling). The `Average` estimator fixes `p = 1`, which is plain
//! kernel-weighted averaging.
//!
//! Summation always runs in ascending neighbor order and parallel work is
//! split into fixed-size chunks of output points reduced in chunk order, so
//! results are bit-identical for any thread count.

use rayon::prelude::*;

use crate::cloud::{FeatureMap, PointCloud};
use crate::density::{estimate_pdf, DensityParams};
use crate::error::{Error, Result};
use crate::kernel::{backward_raw, forward_raw, init_slice, KernelParams, KernelScratch, KernelShape};
use crate::rng::Rng;
use crate::spatial::{radius_neighbors, NeighborTable};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ConvMode {
    /// One kernel per channel; output channel `m` convolves input channel `m`.
    SingleFeature,
    /// Output channel `o` sums the convolutions of every input channel `m`
    /// with its own kernel `g_{o,m}`.
    MultiFeature,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Estimator {
    /// Divide by the estimated sample density.
    #[default]
    MonteCarlo,
    /// Density forced to 1.
    Average,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ConvLayerConfig {
    pub mode: ConvMode,
    pub in_channels: usize,
    pub out_channels: usize,
    pub radius_fraction: f64,
    pub sigma_fraction: f64,
    pub estimator: Estimator,
    pub kernel_shape: KernelShape,
    /// Kernel trunks; kernel `k` is output `k % K` of trunk `k / K`.
    pub kernels: Vec<KernelParams>,
}

impl ConvLayerConfig {
    /// A layer with zeroed kernels using the default 8x8 trunk.
    pub fn new(mode: ConvMode, in_channels: usize, out_channels: usize, radius_fraction: f64) -> Result<Self> {
        Self::with_shape(mode, in_channels, out_channels, radius_fraction, KernelShape::default())
    }

    pub fn with_shape(
        mode: ConvMode,
        in_channels: usize,
        out_channels: usize,
        radius_fraction: f64,
        kernel_shape: KernelShape,
    ) -> Result<Self> {
        if in_channels == 0 || out_channels == 0 {
            return Err(Error::invalid("convolution needs at least one channel"));
        }
        if mode == ConvMode::SingleFeature && in_channels != out_channels {
            return Err(Error::shape(format!(
                "single-feature convolution maps M to M channels, got {in_channels} -> {out_channels}"
            )));
        }
        if !(radius_fraction > 0.0) {
            return Err(Error::invalid(format!("radius fraction must be positive, got {radius_fraction}")));
        }
        let kernel_count = match mode {
            ConvMode::SingleFeature => in_channels,
            ConvMode::MultiFeature => in_channels * out_channels,
        };
        let trunks = kernel_count.div_ceil(kernel_shape.outputs);
        Ok(Self {
            mode,
            in_channels,
            out_channels,
            radius_fraction,
            sigma_fraction: crate::density::DEFAULT_SIGMA_FRACTION,
            estimator: Estimator::MonteCarlo,
            kernel_shape,
            kernels: vec![KernelParams::zeros(kernel_shape); trunks],
        })
    }

    pub fn with_estimator(mut self, estimator: Estimator) -> Self {
        self.estimator = estimator;
        self
    }

    pub fn initialized(mut self, rng: &mut Rng) -> Self {
        for k in &mut self.kernels {
            init_slice(rng, self.kernel_shape, k.as_mut_slice());
        }
        self
    }

    pub fn kernel_count(&self) -> usize {
        match self.mode {
            ConvMode::SingleFeature => self.in_channels,
            ConvMode::MultiFeature => self.in_channels * self.out_channels,
        }
    }

    pub fn trunk_count(&self) -> usize {
        self.kernels.len()
    }

    pub fn param_count(&self) -> usize {
        self.trunk_count() * self.kernel_shape.param_count()
    }

    fn validate(&self) -> Result<()> {
        let expected = self.kernel_count().div_ceil(self.kernel_shape.outputs);
        if self.kernels.len() != expected || self.kernels.iter().any(|k| k.shape() != self.kernel_shape) {
            return Err(Error::shape(format!(
                "layer needs {expected} kernel trunks of shape {:?}",
                self.kernel_shape
            )));
        }
        Ok(())
    }
}

/// Neighbor table from `queries` into `sources` at radius `r`. For the Monte
/// Carlo estimator it carries the density of normalized offsets: the kernel
/// density estimate over `sources` scaled by `r^3`.
pub fn build_conv_table(
    queries: &PointCloud,
    sources: &PointCloud,
    r: f64,
    sigma_fraction: f64,
    estimator: Estimator,
) -> Result<NeighborTable> {
    let table = radius_neighbors(queries, sources, r)?;
    match estimator {
        Estimator::MonteCarlo => {
            let mut table = estimate_pdf(table, sources, &DensityParams::for_radius(r, sigma_fraction)?)?;
            let volume = r * r * r;
            let pdf = table.pdf().expect("estimated").iter().map(|p| p * volume).collect();
            table.set_pdf(pdf)?;
            Ok(table)
        }
        Estimator::Average => Ok(table),
    }
}

fn check_inputs(
    config: &ConvLayerConfig,
    in_cloud: &PointCloud,
    in_features: &FeatureMap,
    out_cloud: &PointCloud,
    table: &NeighborTable,
) -> Result<()> {
    config.validate()?;
    if in_features.rows() != in_cloud.len() {
        return Err(Error::shape(format!(
            "{} feature rows for {} input points",
            in_features.rows(),
            in_cloud.len()
        )));
    }
    if in_features.channels() != config.in_channels {
        return Err(Error::shape(format!(
            "layer expects {} input channels, got {}",
            config.in_channels,
            in_features.channels()
        )));
    }
    if table.num_queries() != out_cloud.len() || table.num_sources() != in_cloud.len() {
        return Err(Error::IndexMismatch(format!(
            "table is {}x{}, clouds are {} outputs and {} inputs",
            table.num_queries(),
            table.num_sources(),
            out_cloud.len(),
            in_cloud.len()
        )));
    }
    if config.estimator == Estimator::MonteCarlo && table.pdf().is_none() {
        return Err(Error::NotEstimated);
    }
    if !(table.radius() > 0.0) {
        return Err(Error::invalid("table radius must be positive"));
    }
    Ok(())
}

const CONV_CHUNK: usize = 32;

struct Evaluator<'a> {
    config: &'a ConvLayerConfig,
    in_cloud: &'a PointCloud,
    in_features: &'a FeatureMap,
    out_cloud: &'a PointCloud,
    table: &'a NeighborTable,
    inv_r: f64,
}

impl Evaluator<'_> {
    #[inline]
    fn weight(&self, q: usize, pair: usize) -> f64 {
        let n = self.table.neighbors_of(q).len() as f64;
        match self.config.estimator {
            Estimator::MonteCarlo => 1.0 / (n * self.table.pdf().expect("checked")[pair]),
            Estimator::Average => 1.0 / n,
        }
    }

    #[inline]
    fn delta(&self, q: usize, j: usize) -> [f64; 3] {
        let x = self.out_cloud.position(q);
        let y = self.in_cloud.position(j);
        [0, 1, 2].map(|d| (x[d] - y[d]) * self.inv_r)
    }

    fn forward_query(&self, q: usize, g: &mut [f64], scratch: &mut KernelScratch, out: &mut [f64]) {
        let cfg = self.config;
        let k = cfg.kernel_shape.outputs;
        let m_in = cfg.in_channels;
        let (start, _) = self.table.range(q);
        for (idx, &j) in self.table.neighbors_of(q).iter().enumerate() {
            let delta = self.delta(q, j);
            for (t, trunk) in cfg.kernels.iter().enumerate() {
                forward_raw(cfg.kernel_shape, trunk.as_slice(), delta, scratch, &mut g[t * k..(t + 1) * k]);
            }
            let w = self.weight(q, start + idx);
            let f = self.in_features.row(j);
            match cfg.mode {
                ConvMode::SingleFeature => {
                    for m in 0..m_in {
                        out[m] += f[m] * g[m] * w;
                    }
                }
                ConvMode::MultiFeature => {
                    for (o, slot) in out.iter_mut().enumerate() {
                        let gk = &g[o * m_in..(o + 1) * m_in];
                        let mut s = 0.0;
                        for m in 0..m_in {
                            s += f[m] * gk[m];
                        }
                        *slot += s * w;
                    }
                }
            }
        }
    }
}

/// Monte Carlo convolution of `in_features` (on `in_cloud`) evaluated at
/// every point of `out_cloud`. `table` has queries = `out_cloud` and
/// sources = `in_cloud`; its radius is the receptive radius `r`.
pub fn mc_conv_forward(
    config: &ConvLayerConfig,
    in_cloud: &PointCloud,
    in_features: &FeatureMap,
    out_cloud: &PointCloud,
    table: &NeighborTable,
) -> Result<FeatureMap> {
    check_inputs(config, in_cloud, in_features, out_cloud, table)?;
    let ev = Evaluator {
        config,
        in_cloud,
        in_features,
        out_cloud,
        table,
        inv_r: 1.0 / table.radius(),
    };
    let l = config.out_channels;
    let mut out = FeatureMap::zeros(out_cloud.len(), l);
    let gsize = config.trunk_count() * config.kernel_shape.outputs;
    out.values_mut()
        .par_chunks_mut(CONV_CHUNK * l.max(1))
        .enumerate()
        .for_each(|(c, rows)| {
            let mut g = vec![0.0; gsize];
            let mut scratch = KernelScratch::new(config.kernel_shape);
            for (i, row) in rows.chunks_mut(l).enumerate() {
                ev.forward_query(c * CONV_CHUNK + i, &mut g, &mut scratch, row);
            }
        });
    Ok(out)
}

/// Same-sampling convolution: outputs live on the input points.
pub fn mc_conv_forward_same(
    config: &ConvLayerConfig,
    cloud: &PointCloud,
    features: &FeatureMap,
    table: &NeighborTable,
) -> Result<FeatureMap> {
    mc_conv_forward(config, cloud, features, cloud, table)
}

/// The same estimator with a fixed analytic kernel applied to every channel.
pub fn analytic_conv_forward(
    kernel: impl Fn([f64; 3]) -> f64 + Sync,
    estimator: Estimator,
    in_cloud: &PointCloud,
    in_features: &FeatureMap,
    out_cloud: &PointCloud,
    table: &NeighborTable,
) -> Result<FeatureMap> {
    let channels = in_features.channels();
    let config = ConvLayerConfig::with_shape(
        ConvMode::SingleFeature,
        channels.max(1),
        channels.max(1),
        1.0,
        KernelShape::new(1, 1)?,
    )?
    .with_estimator(estimator);
    check_inputs(&config, in_cloud, in_features, out_cloud, table)?;
    let ev = Evaluator {
        config: &config,
        in_cloud,
        in_features,
        out_cloud,
        table,
        inv_r: 1.0 / table.radius(),
    };
    let mut out = FeatureMap::zeros(out_cloud.len(), channels);
    out.values_mut()
        .par_chunks_mut(CONV_CHUNK * channels)
        .enumerate()
        .for_each(|(c, rows)| {
            for (i, row) in rows.chunks_mut(channels).enumerate() {
                let q = c * CONV_CHUNK + i;
                let (start, _) = table.range(q);
                for (idx, &j) in table.neighbors_of(q).iter().enumerate() {
                    let g = kernel(ev.delta(q, j));
                    let w = ev.weight(q, start + idx);
                    for (slot, f) in row.iter_mut().zip(in_features.row(j)) {
                        *slot += f * g * w;
                    }
                }
            }
        });
    Ok(out)
}

#[derive(Debug, Clone, PartialEq)]
pub struct ConvGradients {
    /// Gradient with respect to the input features, shaped like them.
    pub features: FeatureMap,
    /// Gradient with respect to each kernel trunk.
    pub kernels: Vec<KernelParams>,
}

impl ConvGradients {
    /// Kernel gradients concatenated trunk by trunk.
    pub fn flat_kernels(&self) -> Vec<f64> {
        self.kernels.iter().flat_map(|k| k.as_slice().iter().copied()).collect()
    }
}

/// Backward pass of [`mc_conv_forward`] for an upstream gradient on the outputs.
pub fn mc_conv_backward(
    config: &ConvLayerConfig,
    in_cloud: &PointCloud,
    in_features: &FeatureMap,
    out_cloud: &PointCloud,
    table: &NeighborTable,
    upstream: &FeatureMap,
) -> Result<ConvGradients> {
    check_inputs(config, in_cloud, in_features, out_cloud, table)?;
    if upstream.rows() != out_cloud.len() || upstream.channels() != config.out_channels {
        return Err(Error::shape(format!(
            "upstream is {}x{}, outputs are {}x{}",
            upstream.rows(),
            upstream.channels(),
            out_cloud.len(),
            config.out_channels
        )));
    }
    let ev = Evaluator {
        config,
        in_cloud,
        in_features,
        out_cloud,
        table,
        inv_r: 1.0 / table.radius(),
    };
    let shape = config.kernel_shape;
    let k = shape.outputs;
    let pcount = shape.param_count();
    let trunks = config.trunk_count();
    let m_in = config.in_channels;
    let n_out = out_cloud.len();
    let chunks: Vec<usize> = (0..n_out.div_ceil(CONV_CHUNK)).collect();

    // Per chunk: kernel gradient partial and per-pair feature contributions.
    let partials: Vec<(Vec<f64>, Vec<f64>)> = chunks
        .par_iter()
        .map(|&c| {
            let q0 = c * CONV_CHUNK;
            let q1 = (q0 + CONV_CHUNK).min(n_out);
            let pair0 = table.range(q0).0;
            let pair1 = table.range(q1 - 1).1;
            let mut kgrad = vec![0.0; trunks * pcount];
            let mut contrib = vec![0.0; (pair1 - pair0) * m_in];
            let mut scratch = KernelScratch::new(shape);
            let mut g = vec![0.0; k];
            let mut dg = vec![0.0; k];
            for q in q0..q1 {
                let u = upstream.row(q);
                if u.iter().all(|&v| v == 0.0) {
                    continue;
                }
                let (start, _) = table.range(q);
                for (idx, &j) in table.neighbors_of(q).iter().enumerate() {
                    let pair = start + idx;
                    let delta = ev.delta(q, j);
                    let w = ev.weight(q, pair);
                    let f = in_features.row(j);
                    let cslot = &mut contrib[(pair - pair0) * m_in..(pair - pair0 + 1) * m_in];
                    for (t, trunk) in config.kernels.iter().enumerate() {
                        forward_raw(shape, trunk.as_slice(), delta, &mut scratch, &mut g);
                        for (s, dgs) in dg.iter_mut().enumerate() {
                            let kidx = t * k + s;
                            *dgs = 0.0;
                            if kidx >= config.kernel_count() {
                                continue;
                            }
                            let (o, m) = match config.mode {
                                ConvMode::SingleFeature => (kidx, kidx),
                                ConvMode::MultiFeature => (kidx / m_in, kidx % m_in),
                            };
                            let uw = u[o] * w;
                            *dgs = uw * f[m];
                            cslot[m] += uw * g[s];
                        }
                        backward_raw(
                            shape,
                            trunk.as_slice(),
                            delta,
                            &mut scratch,
                            &dg,
                            &mut kgrad[t * pcount..(t + 1) * pcount],
                        );
                    }
                }
            }
            (kgrad, contrib)
        })
        .collect();

    let mut kflat = vec![0.0; trunks * pcount];
    for (kg, _) in &partials {
        for (a, b) in kflat.iter_mut().zip(kg) {
            *a += b;
        }
    }
    let mut contrib = Vec::with_capacity(table.num_pairs() * m_in);
    for (_, c) in partials {
        contrib.extend(c);
    }

    // Scatter to sources through a source-major index, ascending pair order.
    let n_in = in_cloud.len();
    let mut src_start = vec![0usize; n_in + 1];
    for &j in table.neighbors() {
        src_start[j + 1] += 1;
    }
    for j in 0..n_in {
        src_start[j + 1] += src_start[j];
    }
    let mut cursor = src_start.clone();
    let mut by_source = vec![0usize; table.num_pairs()];
    for (pair, &j) in table.neighbors().iter().enumerate() {
        by_source[cursor[j]] = pair;
        cursor[j] += 1;
    }
    let mut grad_features = FeatureMap::zeros(n_in, m_in);
    grad_features
        .values_mut()
        .par_chunks_mut(m_in)
        .enumerate()
        .for_each(|(j, row)| {
            for &pair in &by_source[src_start[j]..src_start[j + 1]] {
                for (r, c) in row.iter_mut().zip(&contrib[pair * m_in..(pair + 1) * m_in]) {
                    *r += c;
                }
            }
        });

    let kernels = kflat
        .chunks(pcount)
        .map(|c| KernelParams::from_vec(shape, c.to_vec()))
        .collect::<Result<_>>()?;
    Ok(ConvGradients {
        features: grad_features,
        kernels,
    })
}

/// One input of a multi-sampling convolution: a feature map on its own
/// sampling, the layer applied to it, and a table from the shared output
/// cloud into that sampling (pdf estimated against that sampling).
#[derive(Debug, Clone, Copy)]
pub struct ConvInput<'a> {
    pub config: &'a ConvLayerConfig,
    pub cloud: &'a PointCloud,
    pub features: &'a FeatureMap,
    pub table: &'a NeighborTable,
}

/// Convolves each input onto `out_cloud` and concatenates channels in argument order.
pub fn multi_sampling_concat(inputs: &[ConvInput<'_>], out_cloud: &PointCloud) -> Result<FeatureMap> {
    let mut acc: Option<FeatureMap> = None;
    for (index, input) in inputs.iter().enumerate() {
        let out = mc_conv_forward(input.config, input.cloud, input.features, out_cloud, input.table)
            .map_err(|e| Error::AtInput {
                index,
                source: Box::new(e),
            })?;
        acc = Some(match acc {
            None => out,
            Some(prev) => prev.concat_channels(&out)?,
        });
    }
    acc.ok_or(Error::EmptyInput("multi-sampling convolution without inputs"))
}
