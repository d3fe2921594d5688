//! Convolution and batch-norm layers over a [`ParamSet`].

use rand::Rng;

use crate::autodiff::{BatchNormMode, Padding, RunningMoments, Tape, Var};
use crate::error::TensorError;
use crate::params::{he_normal, xavier_normal, Bound, ParamId, ParamKind, ParamSet};
use crate::tensor::{Scalar, Tensor};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Mode {
    Train,
    Infer,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Init {
    He,
    Xavier,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ConvLayer {
    pub weight: ParamId,
    pub bias: ParamId,
    pub in_channels: usize,
    pub out_channels: usize,
    pub kernel: usize,
    pub stride: usize,
    pub padding: Padding,
}

impl ConvLayer {
    #[allow(clippy::too_many_arguments)]
    pub fn new<T: Scalar, R: Rng>(
        params: &mut ParamSet<T>,
        name: &str,
        in_channels: usize,
        out_channels: usize,
        kernel: usize,
        stride: usize,
        init: Init,
        rng: &mut R,
    ) -> Self {
        let shape = [out_channels, in_channels, kernel, kernel];
        let fan_in = in_channels * kernel * kernel;
        let w = match init {
            Init::He => he_normal(&shape, fan_in, rng),
            Init::Xavier => xavier_normal(&shape, fan_in, out_channels * kernel * kernel, rng),
        };
        Self {
            weight: params.add(format!("{name}.weight"), ParamKind::Weight, w),
            bias: params.add(format!("{name}.bias"), ParamKind::Bias, Tensor::zeros(&[out_channels])),
            in_channels,
            out_channels,
            kernel,
            stride,
            padding: Padding::Same,
        }
    }

    pub fn forward<T: Scalar>(&self, tape: &mut Tape<T>, bound: &Bound, x: Var) -> Result<Var, TensorError> {
        tape.conv2d(x, bound.var(self.weight), bound.var(self.bias), self.stride, self.padding)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct BatchNormLayer<T> {
    pub name: String,
    pub gamma: ParamId,
    pub beta: ParamId,
    pub running: RunningMoments<T>,
}

impl<T: Scalar> BatchNormLayer<T> {
    pub fn new(params: &mut ParamSet<T>, name: &str, channels: usize) -> Self {
        Self {
            name: name.to_string(),
            gamma: params.add(format!("{name}.gamma"), ParamKind::BnScale, Tensor::full(&[channels], T::one())),
            beta: params.add(format!("{name}.beta"), ParamKind::BnShift, Tensor::zeros(&[channels])),
            running: RunningMoments::new(channels),
        }
    }

    pub fn forward(&mut self, tape: &mut Tape<T>, bound: &Bound, x: Var, mode: Mode) -> Result<Var, TensorError> {
        let bn_mode = match mode {
            Mode::Train => BatchNormMode::Train(&mut self.running),
            Mode::Infer => BatchNormMode::Infer(&self.running),
        };
        tape.batchnorm(x, bound.var(self.gamma), bound.var(self.beta), bn_mode)
    }
}
