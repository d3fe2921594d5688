//! Regression losses: MAE with a weight-norm penalty, and the manifold
//! term pulling predictions toward the local linear reconstruction `ỹ` of
//! each target from its label-space neighbours.

use std::path::Path;
use std::str::FromStr;

use crate::autodiff::{Tape, Var};
use crate::container::{Container, NamedTensor};
use crate::error::{Error, Result, TensorError};
use crate::lae::{knn_targets, lae_solve, reconstruct, SimplexWeights};
use crate::tensor::{Scalar, Tensor};

pub const RECONSTRUCTION_KIND: &str = "carn-reconstruction";

/// How each penalized weight tensor enters the regularizer.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum WeightNorm {
    /// `‖w‖₂`
    Euclidean,
    /// `‖w‖₂²`
    Squared,
}

impl FromStr for WeightNorm {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "euclidean" => Ok(WeightNorm::Euclidean),
            "squared" => Ok(WeightNorm::Squared),
            other => Err(Error::config("weight_norm", format!("expected euclidean|squared, got `{other}`"))),
        }
    }
}

impl std::fmt::Display for WeightNorm {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            WeightNorm::Euclidean => "euclidean",
            WeightNorm::Squared => "squared",
        })
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct LossConfig {
    /// Weight of the manifold term.
    pub lambda_l: f64,
    /// Weight of the parameter-norm penalty.
    pub lambda_p: f64,
    /// Neighbour count for the reconstructions.
    pub k: usize,
    pub weight_norm: WeightNorm,
}

impl Default for LossConfig {
    fn default() -> Self {
        Self { lambda_l: 1.0, lambda_p: 1e-4, k: 5, weight_norm: WeightNorm::Euclidean }
    }
}

/// Tape variables of one loss evaluation.
#[derive(Clone, Copy, Debug)]
pub struct LossTerms {
    pub total: Var,
    pub preliminary: Var,
    pub manifold: Option<Var>,
}

/// `mean |target - pred| + λ_p Σ_i ‖w_i‖`.
pub fn loss_p<T: Scalar>(
    tape: &mut Tape<T>,
    pred: Var,
    target: &Tensor<T>,
    weights: &[Var],
    lambda_p: f64,
    norm: WeightNorm,
) -> Result<Var, TensorError> {
    let mae = tape.mean_abs_diff(pred, target)?;
    if lambda_p == 0.0 || weights.is_empty() {
        return Ok(mae);
    }
    let mut penalty: Option<Var> = None;
    for &w in weights {
        let n = match norm {
            WeightNorm::Euclidean => tape.l2_norm(w),
            WeightNorm::Squared => tape.squared_norm(w),
        };
        penalty = Some(match penalty {
            None => n,
            Some(p) => tape.add(p, n)?,
        });
    }
    let scaled = tape.scale(penalty.expect("non-empty"), T::lit(lambda_p));
    tape.add(mae, scaled)
}

/// `mean |pred - ỹ|`; `ỹ` is a constant.
pub fn loss_l<T: Scalar>(tape: &mut Tape<T>, pred: Var, y_tilde: &Tensor<T>) -> Result<Var, TensorError> {
    tape.mean_abs_diff(pred, y_tilde)
}

/// `loss_p + λ_l loss_l`. With `λ_l = 0` (or no reconstructions) the
/// manifold term is not evaluated at all, so the result is exactly `loss_p`.
pub fn loss_t<T: Scalar>(
    tape: &mut Tape<T>,
    pred: Var,
    target: &Tensor<T>,
    y_tilde: Option<&Tensor<T>>,
    weights: &[Var],
    cfg: &LossConfig,
) -> Result<LossTerms, TensorError> {
    let preliminary = loss_p(tape, pred, target, weights, cfg.lambda_p, cfg.weight_norm)?;
    match y_tilde {
        Some(yt) if cfg.lambda_l != 0.0 => {
            let manifold = loss_l(tape, pred, yt)?;
            let scaled = tape.scale(manifold, T::lit(cfg.lambda_l));
            let total = tape.add(preliminary, scaled)?;
            Ok(LossTerms { total, preliminary, manifold: Some(manifold) })
        }
        _ => Ok(LossTerms { total: preliminary, preliminary, manifold: None }),
    }
}

/// Per-sample reconstructions `ỹ_i` built from the other training targets.
#[derive(Clone, Debug, PartialEq)]
pub struct ReconstructionTable {
    pub k: usize,
    pub y_tilde: Vec<Vec<f64>>,
    pub alphas: Vec<SimplexWeights>,
    pub neighbors: Vec<Vec<usize>>,
}

impl ReconstructionTable {
    /// Solves one local anchor embedding per target. Depends on the
    /// targets only.
    pub fn precompute<V: AsRef<[f64]>>(targets: &[V], k: usize) -> Result<Self> {
        let n = targets.len();
        if n <= k {
            return Err(Error::Invalid(format!("need more than k = {k} targets, got {n}")));
        }
        let mut table = Self {
            k,
            y_tilde: Vec::with_capacity(n),
            alphas: Vec::with_capacity(n),
            neighbors: Vec::with_capacity(n),
        };
        for i in 0..n {
            let nb = knn_targets(targets, i, k)?;
            let basis: Vec<&[f64]> = nb.indices.iter().map(|&j| targets[j].as_ref()).collect();
            let alpha = lae_solve(targets[i].as_ref(), &basis)?;
            table.y_tilde.push(reconstruct(&basis, alpha.alpha()));
            table.alphas.push(alpha);
            table.neighbors.push(nb.indices);
        }
        Ok(table)
    }

    pub fn len(&self) -> usize {
        self.y_tilde.len()
    }

    pub fn is_empty(&self) -> bool {
        self.y_tilde.is_empty()
    }

    /// Stacks the reconstructions of `rows` into a `[rows.len(), d]` tensor.
    pub fn batch<T: Scalar>(&self, rows: &[usize]) -> Tensor<T> {
        let d = self.y_tilde.first().map_or(0, Vec::len);
        let data = rows.iter().flat_map(|&r| self.y_tilde[r].iter().map(|&v| T::lit(v))).collect();
        Tensor::new(vec![rows.len(), d], data).expect("consistent rows")
    }

    pub fn to_container(&self) -> Container {
        let n = self.len();
        let d = self.y_tilde.first().map_or(0, Vec::len);
        let mut c = Container::new(RECONSTRUCTION_KIND, format!("k = {}\nn = {n}\nd = {d}\n", self.k));
        let yt = Tensor::new(vec![n, d], self.y_tilde.concat()).expect("rows");
        let alphas: Vec<f64> = self.alphas.iter().flat_map(|a| a.alpha().to_vec()).collect();
        c.push(NamedTensor::from_tensor("y_tilde", &yt));
        c.push(NamedTensor::from_tensor("alpha", &Tensor::new(vec![n, self.k], alphas).expect("rows")));
        c.push(NamedTensor::from_u64(
            "neighbors",
            vec![n, self.k],
            self.neighbors.iter().flatten().map(|&i| i as u64).collect(),
        ));
        c
    }

    pub fn from_container(c: &Container) -> Result<Self> {
        if c.kind != RECONSTRUCTION_KIND {
            return Err(Error::Invalid(format!("expected `{RECONSTRUCTION_KIND}`, got `{}`", c.kind)));
        }
        let yt = c.require("y_tilde")?.to_tensor::<f64>()?;
        let al = c.require("alpha")?.to_tensor::<f64>()?;
        let nb = c.require("neighbors")?;
        let (n, d) = match yt.shape() {
            [n, d] => (*n, *d),
            s => return Err(Error::Invalid(format!("y_tilde has shape {s:?}"))),
        };
        let k = al.shape().get(1).copied().unwrap_or(0);
        if al.shape() != [n, k] || nb.shape != [n, k] {
            return Err(Error::Invalid("reconstruction table tensors disagree in shape".into()));
        }
        let ids = nb.as_u64()?;
        Ok(Self {
            k,
            y_tilde: yt.data().chunks(d.max(1)).take(n).map(<[f64]>::to_vec).collect(),
            alphas: al
                .data()
                .chunks(k.max(1))
                .take(n)
                .map(|a| SimplexWeights::from_feasible(a.to_vec()))
                .collect::<Result<_>>()?,
            neighbors: ids.chunks(k.max(1)).take(n).map(|r| r.iter().map(|&i| i as usize).collect()).collect(),
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        self.to_container().write(path)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_container(&Container::read(path)?)
    }
}
