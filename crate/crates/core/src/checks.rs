//! Named gradient-check scopes over the operation vocabulary, the amplifier
//! unit, the tiny end-to-end network and the regression loss.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::amplifier::{AmplifierUnit, DEFAULT_GATE_KERNEL};
use crate::autodiff::{Activation, BatchNormMode, Elementwise, Padding, RunningMoments, Tape, Var};
use crate::error::{Error, Result, TensorError};
use crate::gradcheck::{check, GradCheckConfig, GradCheckReport};
use crate::layers::Mode;
use crate::loss::{loss_t, LossConfig};
use crate::model::{CarnConfig, Model};
use crate::params::{normal_tensor, Bound, ParamSet};
use crate::tensor::Tensor;

pub const OP_SCOPES: [&str; 10] =
    ["conv2d", "maxpool2", "batchnorm", "relu", "tanh", "dense", "global_avg_pool", "concat_channels", "mul", "add"];

/// Every scope accepted by [`run_scope`] besides `all`.
pub fn scope_names() -> Vec<&'static str> {
    OP_SCOPES.iter().copied().chain(["au", "model", "loss"]).collect()
}

fn rand_t(shape: &[usize], seed: u64) -> Tensor<f64> {
    normal_tensor(shape, 1.0, &mut ChaCha8Rng::seed_from_u64(seed))
}

fn named(items: &[(&str, Tensor<f64>)]) -> Vec<(String, Tensor<f64>)> {
    items.iter().map(|(n, t)| (n.to_string(), t.clone())).collect()
}

/// `sum(out ⊙ w)` with a fixed random `w`.
fn project(tape: &mut Tape<f64>, out: Var, seed: u64) -> Result<Var, TensorError> {
    let w = tape.leaf(rand_t(tape.shape(out), seed));
    let p = tape.mul(out, w)?;
    Ok(tape.sum(p))
}

fn fixed_moments(seed: u64) -> RunningMoments<f64> {
    let mut m = RunningMoments::new(2);
    m.mean = rand_t(&[2], seed).data().to_vec();
    m.var = rand_t(&[2], seed + 1).data().iter().map(|v| 0.5 + v * v).collect();
    m
}

fn op_check(op: &str, cfg: &GradCheckConfig) -> Result<GradCheckReport> {
    let s = cfg.seed.wrapping_mul(1000);
    let report = match op {
        "conv2d" => check(
            op,
            &named(&[("x", rand_t(&[2, 2, 6, 5], s + 1)), ("kernel", rand_t(&[3, 2, 3, 3], s + 2)), ("bias", rand_t(&[3], s + 3))]),
            |t, v| {
                let a = t.conv2d(v[0], v[1], v[2], 1, Padding::Same)?;
                let b = t.conv2d(v[0], v[1], v[2], 2, Padding::Same)?;
                let (pa, pb) = (project(t, a, s + 4)?, project(t, b, s + 5)?);
                t.add(pa, pb)
            },
            cfg,
        ),
        "maxpool2" => check(
            op,
            &named(&[("x", rand_t(&[2, 2, 4, 6], s + 1))]),
            |t, v| {
                let y = t.maxpool2(v[0])?;
                project(t, y, s + 2)
            },
            cfg,
        ),
        "batchnorm" => check(
            op,
            &named(&[("x", rand_t(&[3, 2, 3, 2], s + 1)), ("gamma", rand_t(&[2], s + 2)), ("beta", rand_t(&[2], s + 3))]),
            |t, v| {
                let mut running = RunningMoments::new(2);
                let y = t.batchnorm(v[0], v[1], v[2], BatchNormMode::Train(&mut running))?;
                // inference reads stored moments, which are constants of the graph
                let stored = fixed_moments(s + 6);
                let z = t.batchnorm(v[0], v[1], v[2], BatchNormMode::Infer(&stored))?;
                let (py, pz) = (project(t, y, s + 4)?, project(t, z, s + 5)?);
                t.add(py, pz)
            },
            cfg,
        ),
        "relu" | "tanh" => {
            let kind = if op == "relu" { Activation::Relu } else { Activation::Tanh };
            check(
                op,
                &named(&[("x", rand_t(&[4, 6], s + 1))]),
                |t, v| {
                    let y = t.activation(v[0], kind);
                    project(t, y, s + 2)
                },
                cfg,
            )
        }
        "dense" => check(
            op,
            &named(&[("x", rand_t(&[3, 4], s + 1)), ("weight", rand_t(&[5, 4], s + 2)), ("bias", rand_t(&[5], s + 3))]),
            |t, v| {
                let y = t.dense(v[0], v[1], v[2])?;
                project(t, y, s + 4)
            },
            cfg,
        ),
        "global_avg_pool" => check(
            op,
            &named(&[("x", rand_t(&[2, 3, 4, 5], s + 1))]),
            |t, v| {
                let y = t.global_avg_pool(v[0])?;
                project(t, y, s + 2)
            },
            cfg,
        ),
        "concat_channels" => check(
            op,
            &named(&[("a", rand_t(&[2, 2, 3, 2], s + 1)), ("b", rand_t(&[2, 3, 3, 2], s + 2))]),
            |t, v| {
                let y = t.concat_channels(v[0], v[1])?;
                project(t, y, s + 3)
            },
            cfg,
        ),
        "mul" | "add" => {
            let kind = if op == "mul" { Elementwise::Mul } else { Elementwise::Add };
            check(
                op,
                &named(&[("a", rand_t(&[3, 4], s + 1)), ("b", rand_t(&[3, 4], s + 2))]),
                |t, v| {
                    let y = t.elementwise(v[0], v[1], kind)?;
                    project(t, y, s + 3)
                },
                cfg,
            )
        }
        other => return Err(Error::Invalid(format!("unknown gradcheck scope `{other}`"))),
    };
    Ok(report?)
}

/// Moves parameters off their symmetric initial values (unit gammas, zero
/// biases) so the check runs at a generic point.
fn jitter(params: &mut ParamSet<f64>, seed: u64) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for (_, p) in params.iter_mut() {
        let noise: Tensor<f64> = normal_tensor(p.value.shape(), 0.2, &mut rng);
        p.value.data_mut().iter_mut().zip(noise.data()).for_each(|(v, n)| *v += n);
    }
}

fn au_check(cfg: &GradCheckConfig) -> Result<GradCheckReport> {
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut params = ParamSet::new();
    let au = AmplifierUnit::new(&mut params, "au", 3, 4, DEFAULT_GATE_KERNEL, &mut rng);
    jitter(&mut params, cfg.seed + 1);
    let mut inputs = vec![("t".to_string(), rand_t(&[2, 3, 5, 4], cfg.seed + 2))];
    inputs.extend(params.iter().map(|(_, p)| (p.name.clone(), p.value.clone())));
    let s = cfg.seed + 3;
    Ok(check(
        "au",
        &inputs,
        |tape, vars| {
            let mut au = au.clone();
            let bound = Bound::from_vars(vars[1..].to_vec());
            let out = au.forward(tape, &bound, vars[0], Mode::Train)?;
            project(tape, out, s)
        },
        cfg,
    )?)
}

fn loss_cfg() -> LossConfig {
    LossConfig { lambda_l: 1.0, lambda_p: 1e-4, ..LossConfig::default() }
}

/// Tiny network end to end under the full regularized loss, with respect
/// to every parameter.
fn model_check(cfg: &GradCheckConfig) -> Result<GradCheckReport> {
    let config = CarnConfig::tiny();
    let mut model = Model::<f64>::build(config.clone(), cfg.seed)?;
    jitter(&mut model.params, cfg.seed + 1);
    let (h, w) = config.input_hw;
    let d = config.outputs;
    let x = rand_t(&[2, 1, h, w], cfg.seed + 2);
    let target = rand_t(&[2, d], cfg.seed + 3);
    let y_tilde = rand_t(&[2, d], cfg.seed + 4);
    let weight_slots: Vec<usize> = model.weight_ids().iter().map(|id| id.index()).collect();
    let inputs: Vec<(String, Tensor<f64>)> = model.params.iter().map(|(_, p)| (p.name.clone(), p.value.clone())).collect();
    let lcfg = loss_cfg();
    Ok(check(
        "model",
        &inputs,
        |tape, vars| {
            let mut m = model.clone();
            let bound = Bound::from_vars(vars.to_vec());
            let xv = tape.leaf(x.clone());
            let pred = m.forward(tape, &bound, xv, Mode::Train)?;
            let weights: Vec<Var> = weight_slots.iter().map(|&i| vars[i]).collect();
            Ok(loss_t(tape, pred, &target, Some(&y_tilde), &weights, &lcfg)?.total)
        },
        cfg,
    )?)
}

/// The regularized loss on its own: prediction and two weight tensors.
fn loss_check(cfg: &GradCheckConfig) -> Result<GradCheckReport> {
    let s = cfg.seed.wrapping_mul(1000);
    let inputs = named(&[
        ("prediction", rand_t(&[4, 30], s + 1)),
        ("weight_a", rand_t(&[3, 2, 3, 3], s + 2)),
        ("weight_b", rand_t(&[30, 8], s + 3)),
    ]);
    let target = rand_t(&[4, 30], s + 4);
    let y_tilde = rand_t(&[4, 30], s + 5);
    let lcfg = loss_cfg();
    Ok(check(
        "loss",
        &inputs,
        |tape, v| Ok(loss_t(tape, v[0], &target, Some(&y_tilde), &v[1..], &lcfg)?.total),
        cfg,
    )?)
}

/// Runs one named scope, or every scope for `all`.
pub fn run_scope(scope: &str, cfg: &GradCheckConfig) -> Result<Vec<GradCheckReport>> {
    match scope {
        "all" => scope_names().into_iter().map(|s| run_one(s, cfg)).collect(),
        "ops" => OP_SCOPES.iter().map(|s| run_one(s, cfg)).collect(),
        s => Ok(vec![run_one(s, cfg)?]),
    }
}

fn run_one(scope: &str, cfg: &GradCheckConfig) -> Result<GradCheckReport> {
    match scope {
        "au" => au_check(cfg),
        "model" => model_check(cfg),
        "loss" => loss_check(cfg),
        op => op_check(op, cfg),
    }
}
