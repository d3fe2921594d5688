//! The cascade amplifier network backbone plus its linear regression head,
//! and the plain-CNN ablation baseline.
//!
//! Layer sequence for input `[B, 1, H, W]`:
//!
//! ```text
//! stem   7x7 conv, stride 2            -> [B, stem, H/2, W/2]
//! block_i, maxpool2   for i = 1..=5    -> spatial halves each time
//! block_6
//! mix    1x1 conv                      -> [B, head_channels, H/64, W/64]
//! gap    global average pool           -> [B, head_channels]   (embedding)
//! head   dense, no activation          -> [B, d]
//! ```
//!
//! A block is an [`AmplifierUnit`] for [`Variant::Carn`], or a 3x3
//! conv + batch norm + relu with the same output channel count for
//! [`Variant::CnnBaseline`].

use std::fmt;
use std::path::Path;
use std::str::FromStr;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::amplifier::{AmplifierUnit, DEFAULT_GATE_KERNEL};
use crate::autodiff::{Tape, Var};
use crate::container::{parse_kv, Container, NamedTensor};
use crate::error::{Error, Result, TensorError};
use crate::layers::{BatchNormLayer, ConvLayer, Init, Mode};
use crate::params::{xavier_normal, Bound, ParamId, ParamKind, ParamSet};
use crate::tensor::{Scalar, Tensor};

pub const NUM_BLOCKS: usize = 6;
pub const NUM_POOLS: usize = 5;
pub const STEM_KERNEL: usize = 7;
pub const STEM_STRIDE: usize = 2;
/// Total spatial downsampling of the backbone.
pub const DOWNSAMPLE: usize = STEM_STRIDE << NUM_POOLS;
pub const CHECKPOINT_KIND: &str = "carn-checkpoint";

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Variant {
    Carn,
    CnnBaseline,
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Variant::Carn => "carn",
            Variant::CnnBaseline => "cnn-baseline",
        })
    }
}

impl FromStr for Variant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "carn" => Ok(Variant::Carn),
            "cnn" | "cnn-baseline" => Ok(Variant::CnnBaseline),
            other => Err(Error::config("variant", format!("expected carn|cnn-baseline, got `{other}`"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct CarnConfig {
    pub input_hw: (usize, usize),
    pub stem_channels: usize,
    /// `c_l` of each of the six blocks.
    pub au_cl_schedule: Vec<usize>,
    pub head_channels: usize,
    /// Output dimensionality `d`.
    pub outputs: usize,
    pub variant: Variant,
    pub gate_kernel: usize,
}

impl Default for CarnConfig {
    /// Desk-scale configuration.
    fn default() -> Self {
        Self {
            input_hw: (128, 64),
            stem_channels: 8,
            au_cl_schedule: vec![8, 8, 16, 16, 32, 32],
            head_channels: 64,
            outputs: 30,
            variant: Variant::Carn,
            gate_kernel: DEFAULT_GATE_KERNEL,
        }
    }
}

/// Name and output shape of one backbone stage.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct LayerShape {
    pub name: String,
    pub shape: Vec<usize>,
}

impl CarnConfig {
    /// Full-resolution 512x256 configuration with the wider default schedule.
    pub fn full_scale() -> Self {
        Self {
            input_hw: (512, 256),
            stem_channels: 32,
            au_cl_schedule: vec![32, 32, 64, 64, 128, 128],
            head_channels: 256,
            ..Self::default()
        }
    }

    /// Smallest configuration used for end-to-end gradient checks.
    pub fn tiny() -> Self {
        Self {
            input_hw: (64, 64),
            stem_channels: 4,
            au_cl_schedule: vec![4; NUM_BLOCKS],
            head_channels: 8,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let (h, w) = self.input_hw;
        if h == 0 || w == 0 || h % DOWNSAMPLE != 0 || w % DOWNSAMPLE != 0 {
            return Err(Error::config("input_hw", format!("{h}x{w} must be positive multiples of {DOWNSAMPLE}")));
        }
        if self.stem_channels == 0 {
            return Err(Error::config("stem_channels", "must be positive"));
        }
        if self.au_cl_schedule.len() != NUM_BLOCKS {
            return Err(Error::config(
                "au_cl_schedule",
                format!("needs exactly {NUM_BLOCKS} entries, got {}", self.au_cl_schedule.len()),
            ));
        }
        if self.au_cl_schedule.contains(&0) {
            return Err(Error::config("au_cl_schedule", "entries must be positive"));
        }
        if self.head_channels == 0 {
            return Err(Error::config("head_channels", "must be positive"));
        }
        if self.outputs == 0 {
            return Err(Error::config("outputs", "must be positive"));
        }
        if self.gate_kernel == 0 || self.gate_kernel.is_multiple_of(2) {
            return Err(Error::config("gate_kernel", "must be odd"));
        }
        Ok(())
    }

    /// `(c_in, c_out)` of each block.
    pub fn block_channels(&self) -> Vec<(usize, usize)> {
        let mut c = self.stem_channels;
        self.au_cl_schedule
            .iter()
            .map(|&cl| {
                let pair = (c, c + cl);
                c += cl;
                pair
            })
            .collect()
    }

    /// Shapes each stage should produce, derived from the layer arithmetic.
    pub fn layer_plan(&self, batch: usize) -> Vec<LayerShape> {
        let (mut h, mut w) = (self.input_hw.0 / STEM_STRIDE, self.input_hw.1 / STEM_STRIDE);
        let mut plan = vec![LayerShape { name: "stem".into(), shape: vec![batch, self.stem_channels, h, w] }];
        for (i, (_, c_out)) in self.block_channels().into_iter().enumerate() {
            plan.push(LayerShape { name: format!("block{}", i + 1), shape: vec![batch, c_out, h, w] });
            if i < NUM_POOLS {
                h /= 2;
                w /= 2;
                plan.push(LayerShape { name: format!("pool{}", i + 1), shape: vec![batch, c_out, h, w] });
            }
        }
        plan.push(LayerShape { name: "mix".into(), shape: vec![batch, self.head_channels, h, w] });
        plan.push(LayerShape { name: "gap".into(), shape: vec![batch, self.head_channels] });
        plan.push(LayerShape { name: "head".into(), shape: vec![batch, self.outputs] });
        plan
    }

    pub fn to_kv(&self) -> String {
        let schedule: Vec<String> = self.au_cl_schedule.iter().map(|c| c.to_string()).collect();
        format!(
            "input_h = {}\ninput_w = {}\nstem_channels = {}\nau_cl_schedule = {}\nhead_channels = {}\noutputs = {}\nvariant = {}\ngate_kernel = {}\n",
            self.input_hw.0,
            self.input_hw.1,
            self.stem_channels,
            schedule.join(","),
            self.head_channels,
            self.outputs,
            self.variant,
            self.gate_kernel
        )
    }

    /// Applies one `key = value` setting. Returns `Ok(false)` when the key
    /// does not belong to the model configuration.
    pub fn set(&mut self, key: &str, value: &str) -> Result<bool> {
        fn num(key: &str, v: &str) -> Result<usize> {
            v.parse().map_err(|_| Error::config(key, format!("expected a non-negative integer, got `{v}`")))
        }
        match key {
            "input_h" => self.input_hw.0 = num(key, value)?,
            "input_w" => self.input_hw.1 = num(key, value)?,
            "stem_channels" => self.stem_channels = num(key, value)?,
            "au_cl_schedule" => {
                self.au_cl_schedule =
                    value.split(',').map(|s| num(key, s.trim())).collect::<Result<Vec<_>>>()?;
            }
            "head_channels" => self.head_channels = num(key, value)?,
            "outputs" => self.outputs = num(key, value)?,
            "variant" => self.variant = value.parse()?,
            "gate_kernel" => self.gate_kernel = num(key, value)?,
            _ => return Ok(false),
        }
        Ok(true)
    }

    pub fn from_kv(text: &str) -> Result<Self> {
        let mut cfg = Self::default();
        for (k, v) in parse_kv(text) {
            cfg.set(&k, &v)?;
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

/// Conv 3x3 + batch norm + relu, the baseline replacement for an amplifier unit.
#[derive(Clone, Debug, PartialEq)]
pub struct PlainBlock<T> {
    pub conv: ConvLayer,
    pub bn: BatchNormLayer<T>,
}

#[derive(Clone, Debug, PartialEq)]
pub enum Block<T> {
    Amplifier(AmplifierUnit<T>),
    Plain(PlainBlock<T>),
}

impl<T: Scalar> Block<T> {
    pub fn forward(&mut self, tape: &mut Tape<T>, bound: &Bound, x: Var, mode: Mode) -> Result<Var, TensorError> {
        match self {
            Block::Amplifier(au) => au.forward(tape, bound, x, mode),
            Block::Plain(b) => {
                let y = b.conv.forward(tape, bound, x)?;
                let y = b.bn.forward(tape, bound, y, mode)?;
                Ok(tape.relu(y))
            }
        }
    }

    fn batchnorms(&self) -> Vec<&BatchNormLayer<T>> {
        match self {
            Block::Amplifier(au) => vec![&au.bn_mid, &au.bn_out],
            Block::Plain(b) => vec![&b.bn],
        }
    }

    fn batchnorms_mut(&mut self) -> Vec<&mut BatchNormLayer<T>> {
        match self {
            Block::Amplifier(au) => vec![&mut au.bn_mid, &mut au.bn_out],
            Block::Plain(b) => vec![&mut b.bn],
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Model<T> {
    pub config: CarnConfig,
    pub params: ParamSet<T>,
    pub stem: ConvLayer,
    pub blocks: Vec<Block<T>>,
    pub mix: ConvLayer,
    /// `w_o`, `[d, head_channels]`.
    pub head_weight: ParamId,
    /// `b_o`, `[d]`.
    pub head_bias: ParamId,
}

impl<T: Scalar> Model<T> {
    /// Builds a model with deterministic initialization from `seed`.
    pub fn build(config: CarnConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut params = ParamSet::new();
        let stem = ConvLayer::new(&mut params, "stem", 1, config.stem_channels, STEM_KERNEL, STEM_STRIDE, Init::He, &mut rng);
        let mut blocks = Vec::with_capacity(NUM_BLOCKS);
        for (i, (c_in, c_out)) in config.block_channels().into_iter().enumerate() {
            let name = format!("block{}", i + 1);
            blocks.push(match config.variant {
                Variant::Carn => Block::Amplifier(AmplifierUnit::new(
                    &mut params,
                    &name,
                    c_in,
                    c_out - c_in,
                    config.gate_kernel,
                    &mut rng,
                )),
                Variant::CnnBaseline => Block::Plain(PlainBlock {
                    conv: ConvLayer::new(&mut params, &format!("{name}.conv"), c_in, c_out, 3, 1, Init::He, &mut rng),
                    bn: BatchNormLayer::new(&mut params, &format!("{name}.bn"), c_out),
                }),
            });
        }
        let last = config.block_channels().last().map(|p| p.1).unwrap_or(config.stem_channels);
        let mix = ConvLayer::new(&mut params, "mix", last, config.head_channels, 1, 1, Init::Xavier, &mut rng);
        let head_weight = params.add(
            "head.weight",
            ParamKind::Weight,
            xavier_normal(&[config.outputs, config.head_channels], config.head_channels, config.outputs, &mut rng),
        );
        let head_bias = params.add("head.bias", ParamKind::Bias, Tensor::zeros(&[config.outputs]));
        Ok(Self { config, params, stem, blocks, mix, head_weight, head_bias })
    }

    pub fn bind(&self, tape: &mut Tape<T>) -> Bound {
        self.params.bind(tape)
    }

    pub fn check_input(&self, shape: &[usize]) -> Result<(), TensorError> {
        let (h, w) = self.config.input_hw;
        match shape {
            [b, 1, hh, ww] if *b >= 1 && *hh == h && *ww == w => Ok(()),
            _ => Err(TensorError::ShapeMismatch {
                op: "model",
                detail: format!("expected input [B,1,{h},{w}], got {shape:?}"),
            }),
        }
    }

    fn run(
        &mut self,
        tape: &mut Tape<T>,
        bound: &Bound,
        x: Var,
        mode: Mode,
        mut trace: Option<&mut Vec<LayerShape>>,
    ) -> Result<Var, TensorError> {
        self.check_input(tape.shape(x))?;
        let mut record = |tape: &Tape<T>, name: String, v: Var| {
            if let Some(t) = trace.as_deref_mut() {
                t.push(LayerShape { name, shape: tape.shape(v).to_vec() });
            }
        };
        let mut y = self.stem.forward(tape, bound, x)?;
        record(tape, "stem".into(), y);
        for (i, block) in self.blocks.iter_mut().enumerate() {
            y = block.forward(tape, bound, y, mode)?;
            record(tape, format!("block{}", i + 1), y);
            if i < NUM_POOLS {
                y = tape.maxpool2(y)?;
                record(tape, format!("pool{}", i + 1), y);
            }
        }
        y = self.mix.forward(tape, bound, y)?;
        record(tape, "mix".into(), y);
        y = tape.global_avg_pool(y)?;
        record(tape, "gap".into(), y);
        Ok(y)
    }

    /// Feature embedding `h(x)`, `[B, head_channels]`.
    pub fn embedding(&mut self, tape: &mut Tape<T>, bound: &Bound, x: Var, mode: Mode) -> Result<Var, TensorError> {
        self.run(tape, bound, x, mode, None)
    }

    /// Linear head `w_o h + b_o`.
    pub fn head(&self, tape: &mut Tape<T>, bound: &Bound, h: Var) -> Result<Var, TensorError> {
        tape.dense(h, bound.var(self.head_weight), bound.var(self.head_bias))
    }

    /// Predicted index vectors, `[B, d]`.
    pub fn forward(&mut self, tape: &mut Tape<T>, bound: &Bound, x: Var, mode: Mode) -> Result<Var, TensorError> {
        let h = self.embedding(tape, bound, x, mode)?;
        self.head(tape, bound, h)
    }

    /// Forward pass that also records every stage's output shape.
    pub fn forward_traced(
        &mut self,
        tape: &mut Tape<T>,
        bound: &Bound,
        x: Var,
        mode: Mode,
    ) -> Result<(Var, Vec<LayerShape>), TensorError> {
        let mut trace = Vec::new();
        let h = self.run(tape, bound, x, mode, Some(&mut trace))?;
        let out = self.head(tape, bound, h)?;
        trace.push(LayerShape { name: "head".into(), shape: tape.shape(out).to_vec() });
        Ok((out, trace))
    }

    /// Infer-mode predictions for a batch of images.
    pub fn predict(&mut self, images: &Tensor<T>) -> Result<Tensor<T>, TensorError> {
        let mut tape = Tape::new();
        let bound = self.bind(&mut tape);
        let x = tape.leaf(images.clone());
        let y = self.forward(&mut tape, &bound, x, Mode::Infer)?;
        Ok(tape.value(y).clone())
    }

    pub fn batchnorms(&self) -> Vec<&BatchNormLayer<T>> {
        self.blocks.iter().flat_map(|b| b.batchnorms()).collect()
    }

    pub fn batchnorms_mut(&mut self) -> Vec<&mut BatchNormLayer<T>> {
        self.blocks.iter_mut().flat_map(|b| b.batchnorms_mut()).collect()
    }

    /// Ids of conv kernels and dense weights (the penalized set).
    pub fn weight_ids(&self) -> Vec<ParamId> {
        self.params.weight_ids()
    }

    pub fn to_container(&self) -> Container {
        let metadata = format!("dtype = {}\n{}", T::DTYPE.name(), self.config.to_kv());
        let mut c = Container::new(CHECKPOINT_KIND, metadata);
        for (_, p) in self.params.iter() {
            c.push(NamedTensor::from_tensor(&p.name, &p.value));
        }
        for bn in self.batchnorms() {
            let n = bn.running.channels();
            let mean = Tensor::new(vec![n], bn.running.mean.clone()).expect("channels");
            let var = Tensor::new(vec![n], bn.running.var.clone()).expect("channels");
            c.push(NamedTensor::from_tensor(format!("{}.running_mean", bn.name), &mean));
            c.push(NamedTensor::from_tensor(format!("{}.running_var", bn.name), &var));
        }
        c
    }

    pub fn from_container(c: &Container) -> Result<Self> {
        if c.kind != CHECKPOINT_KIND {
            return Err(Error::Invalid(format!("expected a `{CHECKPOINT_KIND}` container, got `{}`", c.kind)));
        }
        let mut config = CarnConfig::default();
        for (k, v) in c.metadata_pairs() {
            if k == "dtype" {
                if v != T::DTYPE.name() {
                    return Err(Error::Invalid(format!("checkpoint dtype {v} does not match requested {}", T::DTYPE.name())));
                }
            } else {
                config.set(&k, &v)?;
            }
        }
        let mut model = Self::build(config, 0)?;
        let ids: Vec<(ParamId, String, Vec<usize>)> =
            model.params.iter().map(|(id, p)| (id, p.name.clone(), p.value.shape().to_vec())).collect();
        for (id, name, shape) in ids {
            let t = c.require(&name)?.to_tensor::<T>()?;
            if t.shape() != shape.as_slice() {
                return Err(Error::Invalid(format!("tensor `{name}` has shape {:?}, expected {shape:?}", t.shape())));
            }
            *model.params.get_mut(id) = t;
        }
        for bn in model.batchnorms_mut() {
            let n = bn.running.channels();
            let mean = c.require(&format!("{}.running_mean", bn.name))?.to_tensor::<T>()?;
            let var = c.require(&format!("{}.running_var", bn.name))?.to_tensor::<T>()?;
            if mean.numel() != n || var.numel() != n {
                return Err(Error::Invalid(format!("running moments of `{}` have wrong length", bn.name)));
            }
            bn.running.mean = mean.into_data();
            bn.running.var = var.into_data();
        }
        Ok(model)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        self.to_container().write(path)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_container(&Container::read(path)?)
    }

    /// Copy of the model in another precision.
    pub fn cast<U: Scalar>(&self) -> Model<U> {
        let mut params = ParamSet::new();
        for (_, p) in self.params.iter() {
            params.add(p.name.clone(), p.kind, p.value.cast());
        }
        let cast_bn = |bn: &BatchNormLayer<T>| BatchNormLayer {
            name: bn.name.clone(),
            gamma: bn.gamma,
            beta: bn.beta,
            running: crate::autodiff::RunningMoments {
                mean: bn.running.mean.iter().map(|v| U::lit(v.as_f64())).collect(),
                var: bn.running.var.iter().map(|v| U::lit(v.as_f64())).collect(),
            },
        };
        let blocks = self
            .blocks
            .iter()
            .map(|b| match b {
                Block::Amplifier(au) => Block::Amplifier(AmplifierUnit {
                    in_channels: au.in_channels,
                    linear_channels: au.linear_channels,
                    linear: au.linear.clone(),
                    gate: au.gate.clone(),
                    bn_mid: cast_bn(&au.bn_mid),
                    bn_out: cast_bn(&au.bn_out),
                }),
                Block::Plain(p) => Block::Plain(PlainBlock { conv: p.conv.clone(), bn: cast_bn(&p.bn) }),
            })
            .collect();
        Model {
            config: self.config.clone(),
            params,
            stem: self.stem.clone(),
            blocks,
            mix: self.mix.clone(),
            head_weight: self.head_weight,
            head_bias: self.head_bias,
        }
    }
}
