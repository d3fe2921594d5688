//! Adam over a [`ParamSet`], with its state persisted in the core container
//! format so interrupted runs resume exactly.

use std::path::Path;

use carn_core::autodiff::Gradients;
use carn_core::container::{Container, NamedTensor};
use carn_core::params::{Bound, ParamSet};
use carn_core::{Scalar, Tensor};

use crate::config::AdamConfig;
use crate::error::{HarnessError, Result};

pub const OPTIMIZER_KIND: &str = "carn-adam";

#[derive(Clone, Debug, PartialEq)]
pub struct Adam<T> {
    pub cfg: AdamConfig,
    pub step: u64,
    /// Completed epochs, carried for resuming.
    pub epochs_done: usize,
    first: Vec<Tensor<T>>,
    second: Vec<Tensor<T>>,
}

impl<T: Scalar> Adam<T> {
    pub fn new(cfg: AdamConfig, params: &ParamSet<T>) -> Self {
        let zeros = || params.iter().map(|(_, p)| Tensor::zeros(p.value.shape())).collect();
        Self { cfg, step: 0, epochs_done: 0, first: zeros(), second: zeros() }
    }

    /// One update from the gradients of the variables in `bound`. Parameters
    /// without a gradient keep their value and moments.
    pub fn update(&mut self, params: &mut ParamSet<T>, bound: &Bound, grads: &Gradients<T>) {
        self.step += 1;
        let AdamConfig { learning_rate, beta1, beta2, epsilon } = self.cfg;
        let c1 = 1.0 - beta1.powi(self.step as i32);
        let c2 = 1.0 - beta2.powi(self.step as i32);
        for (slot, (id, p)) in params.iter_mut().enumerate() {
            let Some(g) = grads.get(bound.var(id)) else { continue };
            let m = self.first[slot].data_mut();
            let v = self.second[slot].data_mut();
            for (((w, g), m), v) in p.value.data_mut().iter_mut().zip(g.data()).zip(m).zip(v) {
                let g = g.as_f64();
                let mn = beta1 * m.as_f64() + (1.0 - beta1) * g;
                let vn = beta2 * v.as_f64() + (1.0 - beta2) * g * g;
                *m = T::lit(mn);
                *v = T::lit(vn);
                let delta = learning_rate * (mn / c1) / ((vn / c2).sqrt() + epsilon);
                *w = T::lit(w.as_f64() - delta);
            }
        }
    }

    pub fn to_container(&self, params: &ParamSet<T>) -> Container {
        let metadata = format!("step = {}\nepochs_done = {}\n", self.step, self.epochs_done);
        let mut c = Container::new(OPTIMIZER_KIND, metadata);
        for ((_, p), (m, v)) in params.iter().zip(self.first.iter().zip(&self.second)) {
            c.push(NamedTensor::from_tensor(format!("m.{}", p.name), m));
            c.push(NamedTensor::from_tensor(format!("v.{}", p.name), v));
        }
        c
    }

    pub fn from_container(c: &Container, cfg: AdamConfig, params: &ParamSet<T>) -> Result<Self> {
        let bad = |r: String| HarnessError::config("optimizer state", r);
        if c.kind != OPTIMIZER_KIND {
            return Err(bad(format!("expected a `{OPTIMIZER_KIND}` container, got `{}`", c.kind)));
        }
        let mut opt = Self::new(cfg, params);
        for (k, v) in c.metadata_pairs() {
            match k.as_str() {
                "step" => opt.step = v.parse().map_err(|_| bad(format!("bad step `{v}`")))?,
                "epochs_done" => opt.epochs_done = v.parse().map_err(|_| bad(format!("bad epoch count `{v}`")))?,
                _ => {}
            }
        }
        for (slot, (_, p)) in params.iter().enumerate() {
            for (prefix, store) in [("m", &mut opt.first), ("v", &mut opt.second)] {
                let t = c.require(&format!("{prefix}.{}", p.name))?.to_tensor::<T>()?;
                if t.shape() != p.value.shape() {
                    return Err(bad(format!("moment of `{}` has shape {:?}", p.name, t.shape())));
                }
                store[slot] = t;
            }
        }
        Ok(opt)
    }

    pub fn save(&self, params: &ParamSet<T>, path: &Path) -> Result<()> {
        Ok(self.to_container(params).write(path)?)
    }

    pub fn load(path: &Path, cfg: AdamConfig, params: &ParamSet<T>) -> Result<Self> {
        Self::from_container(&Container::read(path)?, cfg, params)
    }
}
