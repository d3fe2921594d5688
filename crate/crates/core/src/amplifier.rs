//! Amplifier unit: gated selective feature reuse.
//!
//! For an input feature map `t` with `c_in` channels the unit computes
//!
//! ```text
//! f_l   = w_l * t + b_l                 (3x3 conv, c_l channels)
//! f_n   = relu(bn_mid(f_l))
//! f_g   = tanh(w_g * f_l + b_g)         (gate conv, c_in channels)
//! f_s   = t ⊙ (f_g + 1)
//! f_out = bn_out(f_n ⊕ f_s)             (c_l + c_in channels)
//! ```
//!
//! The factor `f_g + 1` lies in `(0, 2)`: below one the input is
//! suppressed, above one it is amplified, and exactly one passes it through
//! unchanged.

use rand::Rng;

use crate::autodiff::{Tape, Var};
use crate::error::TensorError;
use crate::layers::{BatchNormLayer, ConvLayer, Init, Mode};
use crate::params::{Bound, ParamSet};
use crate::tensor::Scalar;

pub const DEFAULT_GATE_KERNEL: usize = 3;

#[derive(Clone, Debug, PartialEq)]
pub struct AmplifierUnit<T> {
    pub in_channels: usize,
    pub linear_channels: usize,
    /// `w_l`, `b_l`: 3x3 stride-1 conv producing `f_l`.
    pub linear: ConvLayer,
    /// `w_g`, `b_g`: gate conv mapping `f_l` back to `c_in` channels.
    pub gate: ConvLayer,
    pub bn_mid: BatchNormLayer<T>,
    pub bn_out: BatchNormLayer<T>,
}

/// Intermediate tensors of one [`AmplifierUnit`] evaluation.
#[derive(Clone, Copy, Debug)]
pub struct AuTrace {
    pub linear: Var,
    pub nonlinear: Var,
    pub gate: Var,
    pub factor: Var,
    pub selected: Var,
    pub output: Var,
}

impl<T: Scalar> AmplifierUnit<T> {
    pub fn new<R: Rng>(
        params: &mut ParamSet<T>,
        name: &str,
        in_channels: usize,
        linear_channels: usize,
        gate_kernel: usize,
        rng: &mut R,
    ) -> Self {
        let linear = ConvLayer::new(params, &format!("{name}.linear"), in_channels, linear_channels, 3, 1, Init::He, rng);
        let gate = ConvLayer::new(
            params,
            &format!("{name}.gate"),
            linear_channels,
            in_channels,
            gate_kernel,
            1,
            Init::Xavier,
            rng,
        );
        Self {
            in_channels,
            linear_channels,
            linear,
            gate,
            bn_mid: BatchNormLayer::new(params, &format!("{name}.bn_mid"), linear_channels),
            bn_out: BatchNormLayer::new(params, &format!("{name}.bn_out"), in_channels + linear_channels),
        }
    }

    pub fn out_channels(&self) -> usize {
        self.in_channels + self.linear_channels
    }

    fn check_input(&self, tape: &Tape<T>, t: Var) -> Result<(), TensorError> {
        let shape = tape.shape(t);
        match shape {
            [_, c, _, _] if *c == self.in_channels => Ok(()),
            [_, c, _, _] => Err(TensorError::ShapeMismatch {
                op: "amplifier_unit",
                detail: format!("input has {c} channels, unit expects {}", self.in_channels),
            }),
            _ => Err(TensorError::ShapeMismatch {
                op: "amplifier_unit",
                detail: format!("input must be [B,{},H,W], got {shape:?}", self.in_channels),
            }),
        }
    }

    /// Returns `(f_l, f_g + 1)`.
    fn gate_path(&self, tape: &mut Tape<T>, bound: &Bound, t: Var) -> Result<(Var, Var, Var), TensorError> {
        self.check_input(tape, t)?;
        let f_l = self.linear.forward(tape, bound, t)?;
        let pre_gate = self.gate.forward(tape, bound, f_l)?;
        let f_g = tape.tanh(pre_gate);
        let factor = tape.add_scalar(f_g, T::one());
        Ok((f_l, f_g, factor))
    }

    /// The elementwise amplification factor `f_g(t) + 1`.
    pub fn amplification_factor(&self, tape: &mut Tape<T>, bound: &Bound, t: Var) -> Result<Var, TensorError> {
        Ok(self.gate_path(tape, bound, t)?.2)
    }

    pub fn forward_trace(
        &mut self,
        tape: &mut Tape<T>,
        bound: &Bound,
        t: Var,
        mode: Mode,
    ) -> Result<AuTrace, TensorError> {
        let (f_l, f_g, factor) = self.gate_path(tape, bound, t)?;
        let normed = self.bn_mid.forward(tape, bound, f_l, mode)?;
        let f_n = tape.relu(normed);
        let f_s = tape.mul(t, factor)?;
        let joined = tape.concat_channels(f_n, f_s)?;
        let output = self.bn_out.forward(tape, bound, joined, mode)?;
        Ok(AuTrace { linear: f_l, nonlinear: f_n, gate: f_g, factor, selected: f_s, output })
    }

    pub fn forward(&mut self, tape: &mut Tape<T>, bound: &Bound, t: Var, mode: Mode) -> Result<Var, TensorError> {
        Ok(self.forward_trace(tape, bound, t, mode)?.output)
    }
}
