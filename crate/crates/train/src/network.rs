//! Forward and backward passes of a [`NetworkSpec`] over a point hierarchy.

use std::collections::BTreeMap;

use mcconv_core::{
    build_conv_table, build_hierarchy, mc_conv_backward, mc_conv_forward, ConvLayerConfig, FeatureMap, Hierarchy,
    NeighborTable, PointCloud, Rng,
};
use rayon::prelude::*;

use crate::error::{Result, TrainError};
use crate::spec::{ConvSpec, LayerSpec, NetworkSpec, ParamLayout, Source};

/// Largest per-batch bounding-box diagonal; network radii are fractions of it.
pub fn shape_scale(cloud: &PointCloud) -> Result<f64> {
    let mut boxes: BTreeMap<u32, ([f64; 3], [f64; 3])> = BTreeMap::new();
    for (i, p) in cloud.positions().iter().enumerate() {
        let e = boxes.entry(cloud.batch_id(i)).or_insert((*p, *p));
        for d in 0..3 {
            e.0[d] = e.0[d].min(p[d]);
            e.1[d] = e.1[d].max(p[d]);
        }
    }
    let diag = boxes
        .values()
        .map(|(lo, hi)| mcconv_core::cloud::dist2(*lo, *hi).sqrt())
        .fold(0.0, f64::max);
    if cloud.is_empty() {
        return Err(mcconv_core::Error::EmptyInput("cloud").into());
    }
    Ok(diag)
}

/// Hierarchy and neighbor tables for one input cloud. Independent of the
/// parameters, so it can be reused across steps.
#[derive(Debug, Clone)]
pub struct Geometry {
    pub scale: f64,
    pub hierarchy: Hierarchy,
    tables: Vec<NeighborTable>,
    layer_table: Vec<Option<usize>>,
}

impl Geometry {
    pub fn build(spec: &NetworkSpec, cloud: &PointCloud, rng: &mut Rng) -> Result<Self> {
        spec.validate()?;
        let scale = shape_scale(cloud)?;
        let radii: Vec<f64> = spec.radii.iter().map(|r| r * scale).collect();
        let hierarchy = build_hierarchy(cloud, &radii, rng)?;
        let mut tables = Vec::new();
        let mut keys: Vec<(usize, usize, u64, u64, bool)> = Vec::new();
        let mut layer_table = Vec::with_capacity(spec.layers.len());
        for layer in &spec.layers {
            let LayerSpec::SpatialConv(c) = layer else {
                layer_table.push(None);
                continue;
            };
            let r = spec.conv_radius(c)? * scale;
            let key = (
                c.in_level,
                c.out_level,
                r.to_bits(),
                c.sigma_fraction.to_bits(),
                c.estimator == crate::spec::EstimatorKind::Mc,
            );
            let idx = match keys.iter().position(|k| *k == key) {
                Some(idx) => idx,
                None => {
                    tables.push(build_conv_table(
                        &hierarchy.levels[c.out_level],
                        &hierarchy.levels[c.in_level],
                        r,
                        c.sigma_fraction,
                        c.estimator.into(),
                    )?);
                    keys.push(key);
                    tables.len() - 1
                }
            };
            layer_table.push(Some(idx));
        }
        Ok(Geometry {
            scale,
            hierarchy,
            tables,
            layer_table,
        })
    }

    pub fn level(&self, l: usize) -> &PointCloud {
        &self.hierarchy.levels[l]
    }

    pub fn table(&self, layer: usize) -> Option<&NeighborTable> {
        self.layer_table.get(layer).copied().flatten().map(|i| &self.tables[i])
    }

    pub fn tables(&self) -> &[NeighborTable] {
        &self.tables
    }
}

#[derive(Debug, Clone, Copy)]
pub enum Mode<'a> {
    Eval,
    /// Dropout active, drawing from the given stream.
    Train(&'a Rng),
}

/// Every activation of a forward pass plus the dropout scales.
#[derive(Debug, Clone)]
pub struct Activations {
    pub acts: Vec<FeatureMap>,
    masks: Vec<Option<Vec<f64>>>,
}

impl Activations {
    pub fn output(&self) -> &FeatureMap {
        self.acts.last().expect("input activation")
    }

    pub fn into_output(mut self) -> FeatureMap {
        self.acts.pop().expect("input activation")
    }
}

fn block<'p>(params: &'p [f64], layout: &ParamLayout, layer: usize, name: &str) -> &'p [f64] {
    let b = layout.block(layer, name).expect("layout covers every parameterized layer");
    &params[b.offset..b.offset + b.len]
}

pub(crate) fn conv_config(spec: &NetworkSpec, c: &ConvSpec, kernels: &[f64]) -> Result<ConvLayerConfig> {
    let shape = c.kernel_shape()?;
    let mut cfg =
        ConvLayerConfig::with_shape(c.kind.into(), c.in_channels, c.out_channels, spec.conv_radius(c)?, shape)?
            .with_estimator(c.estimator.into());
    cfg.sigma_fraction = c.sigma_fraction;
    for (k, chunk) in cfg.kernels.iter_mut().zip(kernels.chunks(shape.param_count())) {
        k.as_mut_slice().copy_from_slice(chunk);
    }
    Ok(cfg)
}

fn pointwise(x: &FeatureMap, w: &[f64], b: &[f64]) -> FeatureMap {
    let (m, l) = (x.channels(), b.len());
    let mut out = FeatureMap::zeros(x.rows(), l);
    out.values_mut()
        .par_chunks_mut(l)
        .zip(x.values().par_chunks(m.max(1)))
        .for_each(|(y, xi)| {
            for o in 0..l {
                y[o] = b[o] + w[o * m..(o + 1) * m].iter().zip(xi).map(|(a, v)| a * v).sum::<f64>();
            }
        });
    out
}

fn concat_source(with: Source) -> usize {
    match with {
        Source::Input => 0,
        Source::Layer(j) => j + 1,
    }
}

/// Runs every layer on `input` (features of level-0 points).
pub fn forward(
    spec: &NetworkSpec,
    params: &[f64],
    geom: &Geometry,
    input: &FeatureMap,
    mode: Mode<'_>,
) -> Result<Activations> {
    let shapes = spec.validate()?;
    let layout = spec.layout()?;
    if params.len() != layout.total {
        return Err(TrainError::shape(format!(
            "{} parameters for a layout of {}",
            params.len(),
            layout.total
        )));
    }
    if input.rows() != geom.level(0).len() || input.channels() != spec.input_channels {
        return Err(TrainError::shape(format!(
            "input is {}x{}, expected {}x{}",
            input.rows(),
            input.channels(),
            geom.level(0).len(),
            spec.input_channels
        )));
    }
    let mut acts = vec![input.clone()];
    let mut masks = vec![None; spec.layers.len()];
    for (i, layer) in spec.layers.iter().enumerate() {
        let x = &acts[i];
        let y = match layer {
            LayerSpec::SpatialConv(c) => {
                let cfg = conv_config(spec, c, block(params, &layout, i, "kernels"))?;
                let table = geom.table(i).ok_or_else(|| TrainError::spec("geometry does not match network"))?;
                mc_conv_forward(&cfg, geom.level(c.in_level), x, geom.level(c.out_level), table)?
            }
            LayerSpec::Pointwise { .. } => {
                pointwise(x, block(params, &layout, i, "weight"), block(params, &layout, i, "bias"))
            }
            LayerSpec::Relu => {
                let mut y = x.clone();
                y.values_mut().iter_mut().for_each(|v| *v = v.max(0.0));
                y
            }
            LayerSpec::FeatureDropout { rate } => match mode {
                Mode::Eval => x.clone(),
                Mode::Train(rng) => {
                    let stream = rng.fork_index("dropout", i as u64);
                    let keep = 1.0 / (1.0 - rate);
                    let mask: Vec<f64> = (0..x.rows())
                        .map(|r| if stream.uniform_at(r as u64) < *rate { 0.0 } else { keep })
                        .collect();
                    let mut y = x.clone();
                    for (r, &s) in mask.iter().enumerate() {
                        y.row_mut(r).iter_mut().for_each(|v| *v *= s);
                    }
                    masks[i] = Some(mask);
                    y
                }
            },
            LayerSpec::Concat { with } => x.concat_channels(&acts[concat_source(*with)])?,
        };
        debug_assert_eq!(y.channels(), shapes[i + 1].channels);
        acts.push(y);
    }
    Ok(Activations { acts, masks })
}

fn accumulate(slot: &mut Option<FeatureMap>, g: FeatureMap) {
    match slot {
        Some(acc) => acc.values_mut().iter_mut().zip(g.values()).for_each(|(a, b)| *a += b),
        None => *slot = Some(g),
    }
}

/// Gradient of a scalar loss with respect to all parameters, given the
/// loss gradient `upstream` on the network output.
pub fn backward(
    spec: &NetworkSpec,
    params: &[f64],
    geom: &Geometry,
    acts: &Activations,
    upstream: &FeatureMap,
) -> Result<Vec<f64>> {
    let layout = spec.layout()?;
    let out = acts.output();
    if upstream.rows() != out.rows() || upstream.channels() != out.channels() {
        return Err(TrainError::shape("upstream gradient does not match the output"));
    }
    let mut grads = vec![0.0; layout.total];
    let mut g_acts: Vec<Option<FeatureMap>> = vec![None; acts.acts.len()];
    g_acts[spec.layers.len()] = Some(upstream.clone());
    for (i, layer) in spec.layers.iter().enumerate().rev() {
        let Some(g) = g_acts[i + 1].take() else {
            continue;
        };
        let x = &acts.acts[i];
        match layer {
            LayerSpec::SpatialConv(c) => {
                let b = layout.block(i, "kernels").expect("conv block");
                let cfg = conv_config(spec, c, &params[b.offset..b.offset + b.len])?;
                let table = geom.table(i).ok_or_else(|| TrainError::spec("geometry does not match network"))?;
                let cg = mc_conv_backward(&cfg, geom.level(c.in_level), x, geom.level(c.out_level), table, &g)?;
                for (acc, v) in grads[b.offset..b.offset + b.len].iter_mut().zip(cg.flat_kernels()) {
                    *acc += v;
                }
                accumulate(&mut g_acts[i], cg.features);
            }
            LayerSpec::Pointwise {
                in_channels: m,
                out_channels: l,
            } => {
                let (m, l) = (*m, *l);
                let wb = layout.block(i, "weight").expect("weight block");
                let bb = layout.block(i, "bias").expect("bias block");
                let w = &params[wb.offset..wb.offset + wb.len];
                for r in 0..x.rows() {
                    let (xr, gr) = (x.row(r), g.row(r));
                    for o in 0..l {
                        grads[bb.offset + o] += gr[o];
                        for k in 0..m {
                            grads[wb.offset + o * m + k] += gr[o] * xr[k];
                        }
                    }
                }
                let mut gx = FeatureMap::zeros(x.rows(), m);
                gx.values_mut()
                    .par_chunks_mut(m)
                    .zip(g.values().par_chunks(l))
                    .for_each(|(dx, gr)| {
                        for (o, &go) in gr.iter().enumerate() {
                            for k in 0..m {
                                dx[k] += go * w[o * m + k];
                            }
                        }
                    });
                accumulate(&mut g_acts[i], gx);
            }
            LayerSpec::Relu => {
                let mut gx = g;
                for (v, y) in gx.values_mut().iter_mut().zip(acts.acts[i + 1].values()) {
                    if *y <= 0.0 {
                        *v = 0.0;
                    }
                }
                accumulate(&mut g_acts[i], gx);
            }
            LayerSpec::FeatureDropout { .. } => {
                let mut gx = g;
                if let Some(mask) = &acts.masks[i] {
                    for (r, &s) in mask.iter().enumerate() {
                        gx.row_mut(r).iter_mut().for_each(|v| *v *= s);
                    }
                }
                accumulate(&mut g_acts[i], gx);
            }
            LayerSpec::Concat { with } => {
                let ca = x.channels();
                let src = concat_source(*with);
                let cb = acts.acts[src].channels();
                let mut ga = FeatureMap::zeros(g.rows(), ca);
                let mut gb = FeatureMap::zeros(g.rows(), cb);
                for r in 0..g.rows() {
                    ga.row_mut(r).copy_from_slice(&g.row(r)[..ca]);
                    gb.row_mut(r).copy_from_slice(&g.row(r)[ca..]);
                }
                accumulate(&mut g_acts[i], ga);
                accumulate(&mut g_acts[src], gb);
            }
        }
    }
    Ok(grads)
}
