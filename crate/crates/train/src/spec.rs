//! Network descriptions: the layer list, its channel/level bookkeeping, and
//! the flat parameter layout shared by training state and checkpoints.

use mcconv_core::{ConvMode, Estimator, KernelShape, Rng};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Result, TrainError};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ConvKind {
    Single,
    Multi,
}

impl From<ConvKind> for ConvMode {
    fn from(k: ConvKind) -> Self {
        match k {
            ConvKind::Single => ConvMode::SingleFeature,
            ConvKind::Multi => ConvMode::MultiFeature,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EstimatorKind {
    Mc,
    Avg,
}

impl EstimatorKind {
    pub fn name(&self) -> &'static str {
        match self {
            EstimatorKind::Mc => "mc",
            EstimatorKind::Avg => "avg",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "mc" => Some(EstimatorKind::Mc),
            "avg" => Some(EstimatorKind::Avg),
            _ => None,
        }
    }
}

impl From<EstimatorKind> for Estimator {
    fn from(k: EstimatorKind) -> Self {
        match k {
            EstimatorKind::Mc => Estimator::MonteCarlo,
            EstimatorKind::Avg => Estimator::Average,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConvSpec {
    pub kind: ConvKind,
    pub in_channels: usize,
    pub out_channels: usize,
    pub in_level: usize,
    pub out_level: usize,
    /// Receptive radius as a fraction of the shape scale. Defaults to twice
    /// the Poisson radius of the coarser participating level.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub radius: Option<f64>,
    pub sigma_fraction: f64,
    pub estimator: EstimatorKind,
    pub hidden: usize,
    pub outputs: usize,
}

impl ConvSpec {
    pub fn multi(in_channels: usize, out_channels: usize, in_level: usize, out_level: usize) -> Self {
        ConvSpec {
            kind: ConvKind::Multi,
            in_channels,
            out_channels,
            in_level,
            out_level,
            radius: None,
            sigma_fraction: mcconv_core::density::DEFAULT_SIGMA_FRACTION,
            estimator: EstimatorKind::Mc,
            hidden: mcconv_core::kernel::DEFAULT_HIDDEN,
            outputs: mcconv_core::kernel::DEFAULT_OUTPUTS,
        }
    }

    pub fn with_radius(mut self, radius: f64) -> Self {
        self.radius = Some(radius);
        self
    }

    pub fn kernel_shape(&self) -> Result<KernelShape> {
        Ok(KernelShape::new(self.hidden, self.outputs)?)
    }

    pub fn kernel_count(&self) -> usize {
        match self.kind {
            ConvKind::Single => self.in_channels,
            ConvKind::Multi => self.in_channels * self.out_channels,
        }
    }

    pub fn param_count(&self) -> usize {
        let shape = KernelShape {
            hidden: self.hidden,
            outputs: self.outputs,
        };
        self.kernel_count().div_ceil(self.outputs) * shape.param_count()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Source {
    Input,
    Layer(usize),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum LayerSpec {
    SpatialConv(ConvSpec),
    /// Per-point linear map `M -> L` with bias.
    Pointwise { in_channels: usize, out_channels: usize },
    Relu,
    FeatureDropout { rate: f64 },
    /// Appends the channels of an earlier activation living on the same level.
    Concat { with: Source },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NetworkSpec {
    /// Poisson radii of levels 1.. as fractions of the shape scale.
    pub radii: Vec<f64>,
    pub input_channels: usize,
    pub layers: Vec<LayerSpec>,
}

/// Level and channel count of one activation.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ActShape {
    pub level: usize,
    pub channels: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ParamBlock {
    pub layer: usize,
    pub name: String,
    pub offset: usize,
    pub len: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ParamLayout {
    pub blocks: Vec<ParamBlock>,
    pub total: usize,
}

impl ParamLayout {
    pub fn block(&self, layer: usize, name: &str) -> Option<&ParamBlock> {
        self.blocks.iter().find(|b| b.layer == layer && b.name == name)
    }
}

impl NetworkSpec {
    pub fn num_levels(&self) -> usize {
        self.radii.len() + 1
    }

    /// Shapes of every activation; entry 0 is the input, entry `i + 1` the
    /// output of layer `i`.
    pub fn validate(&self) -> Result<Vec<ActShape>> {
        if self.input_channels == 0 {
            return Err(TrainError::spec("input needs at least one channel"));
        }
        if self.radii.iter().any(|r| !(*r > 0.0)) || self.radii.windows(2).any(|w| w[1] <= w[0]) {
            return Err(TrainError::spec(format!(
                "radii must be positive and increasing, got {:?}",
                self.radii
            )));
        }
        let mut shapes = vec![ActShape {
            level: 0,
            channels: self.input_channels,
        }];
        for (i, layer) in self.layers.iter().enumerate() {
            let cur = shapes[i];
            let next = match layer {
                LayerSpec::SpatialConv(c) => {
                    if c.in_level != cur.level {
                        return Err(TrainError::spec(format!(
                            "layer {i} reads level {} but the activation lives on level {}",
                            c.in_level, cur.level
                        )));
                    }
                    if c.in_level >= self.num_levels() || c.out_level >= self.num_levels() {
                        return Err(TrainError::spec(format!(
                            "layer {i} uses level {} of a {}-level hierarchy",
                            c.in_level.max(c.out_level),
                            self.num_levels()
                        )));
                    }
                    if c.in_channels != cur.channels {
                        return Err(TrainError::spec(format!(
                            "layer {i} expects {} channels, gets {}",
                            c.in_channels, cur.channels
                        )));
                    }
                    if c.kind == ConvKind::Single && c.in_channels != c.out_channels {
                        return Err(TrainError::spec(format!("layer {i}: single-feature conv must keep channels")));
                    }
                    if c.out_channels == 0 || !(c.sigma_fraction > 0.0) {
                        return Err(TrainError::spec(format!("layer {i}: bad channel count or bandwidth")));
                    }
                    c.kernel_shape()?;
                    self.conv_radius(c)?;
                    ActShape {
                        level: c.out_level,
                        channels: c.out_channels,
                    }
                }
                LayerSpec::Pointwise {
                    in_channels,
                    out_channels,
                } => {
                    if *in_channels != cur.channels || *out_channels == 0 {
                        return Err(TrainError::spec(format!(
                            "layer {i} maps {in_channels} -> {out_channels}, gets {}",
                            cur.channels
                        )));
                    }
                    ActShape {
                        level: cur.level,
                        channels: *out_channels,
                    }
                }
                LayerSpec::Relu => cur,
                LayerSpec::FeatureDropout { rate } => {
                    if !(0.0..1.0).contains(rate) {
                        return Err(TrainError::spec(format!("layer {i}: dropout rate {rate} outside [0, 1)")));
                    }
                    cur
                }
                LayerSpec::Concat { with } => {
                    let other = match *with {
                        Source::Input => shapes[0],
                        Source::Layer(j) if j < i => shapes[j + 1],
                        Source::Layer(j) => {
                            return Err(TrainError::spec(format!("layer {i} concatenates later layer {j}")));
                        }
                    };
                    if other.level != cur.level {
                        return Err(TrainError::spec(format!(
                            "layer {i} concatenates level {} onto level {}",
                            other.level, cur.level
                        )));
                    }
                    ActShape {
                        level: cur.level,
                        channels: cur.channels + other.channels,
                    }
                }
            };
            shapes.push(next);
        }
        Ok(shapes)
    }

    pub fn output_shape(&self) -> Result<ActShape> {
        Ok(*self.validate()?.last().expect("input shape"))
    }

    /// Receptive radius of a convolution as a fraction of the shape scale.
    pub fn conv_radius(&self, c: &ConvSpec) -> Result<f64> {
        if let Some(r) = c.radius {
            return if r > 0.0 {
                Ok(r)
            } else {
                Err(TrainError::spec(format!("radius override {r} must be positive")))
            };
        }
        let coarse = c.in_level.max(c.out_level).max(1);
        self.radii
            .get(coarse - 1)
            .map(|rp| 2.0 * rp)
            .ok_or_else(|| TrainError::spec("a convolution without Poisson levels needs an explicit radius"))
    }

    pub fn layout(&self) -> Result<ParamLayout> {
        self.validate()?;
        let mut blocks = Vec::new();
        let mut offset = 0;
        let mut push = |layer: usize, name: &str, len: usize| {
            blocks.push(ParamBlock {
                layer,
                name: name.to_string(),
                offset,
                len,
            });
            offset += len;
        };
        for (i, layer) in self.layers.iter().enumerate() {
            match layer {
                LayerSpec::SpatialConv(c) => push(i, "kernels", c.param_count()),
                LayerSpec::Pointwise {
                    in_channels,
                    out_channels,
                } => {
                    push(i, "weight", in_channels * out_channels);
                    push(i, "bias", *out_channels);
                }
                _ => {}
            }
        }
        Ok(ParamLayout { blocks, total: offset })
    }

    /// Fresh parameters: kernel trunks use their own initialization, pointwise
    /// weights are uniform in `±1/sqrt(fan_in)`, biases start at zero.
    pub fn init_params(&self, rng: &Rng) -> Result<Vec<f64>> {
        let layout = self.layout()?;
        let mut params = vec![0.0; layout.total];
        for (i, layer) in self.layers.iter().enumerate() {
            let mut r = rng.fork_index("layer", i as u64);
            match layer {
                LayerSpec::SpatialConv(c) => {
                    let b = layout.block(i, "kernels").expect("conv block");
                    let shape = c.kernel_shape()?;
                    for trunk in params[b.offset..b.offset + b.len].chunks_mut(shape.param_count()) {
                        trunk.copy_from_slice(mcconv_core::kernel_init(&mut r, shape).as_slice());
                    }
                }
                LayerSpec::Pointwise { in_channels, .. } => {
                    let b = layout.block(i, "weight").expect("weight block");
                    let bound = 1.0 / (*in_channels as f64).sqrt();
                    for w in &mut params[b.offset..b.offset + b.len] {
                        *w = r.range(-bound, bound);
                    }
                }
                _ => {}
            }
        }
        Ok(params)
    }

    /// Every spatial convolution switched to `estimator`.
    pub fn with_estimator(mut self, estimator: EstimatorKind) -> Self {
        for layer in &mut self.layers {
            if let LayerSpec::SpatialConv(c) = layer {
                c.estimator = estimator;
            }
        }
        self
    }

    /// Hex SHA-256 of the canonical JSON encoding.
    pub fn hash(&self) -> String {
        let json = serde_json::to_string(self).expect("spec serializes");
        Sha256::digest(json.as_bytes()).iter().map(|b| format!("{b:02x}")).collect()
    }
}

/// Encoder-decoder for normal estimation over a three-level hierarchy.
/// `width` is the channel count of the finest level; it doubles per level.
pub fn normal_estimation_network(width: usize) -> NetworkSpec {
    let (w1, w2, w3) = (width, 2 * width, 4 * width);
    let layers = vec![
        LayerSpec::SpatialConv(ConvSpec::multi(1, w1, 0, 0)),
        LayerSpec::Relu,
        LayerSpec::SpatialConv(ConvSpec::multi(w1, w2, 0, 1)),
        LayerSpec::Relu,
        LayerSpec::SpatialConv(ConvSpec::multi(w2, w3, 1, 2)),
        LayerSpec::Relu,
        LayerSpec::SpatialConv(ConvSpec::multi(w3, w2, 2, 1)),
        LayerSpec::Relu,
        LayerSpec::Concat { with: Source::Layer(3) },
        LayerSpec::SpatialConv(ConvSpec::multi(2 * w2, w1, 1, 0)),
        LayerSpec::Relu,
        LayerSpec::Concat { with: Source::Layer(1) },
        LayerSpec::Pointwise {
            in_channels: 2 * w1,
            out_channels: 3,
        },
    ];
    NetworkSpec {
        radii: vec![0.1, 0.4],
        input_channels: 1,
        layers,
    }
}
