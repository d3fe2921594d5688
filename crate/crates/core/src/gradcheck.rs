//! Central finite-difference gradient checking.
//!
//! The checker only ever calls the forward closure, so it is independent of
//! every backward rule it verifies. A coordinate whose central difference
//! disagrees with the analytic gradient at the nominal step, but agrees at a
//! smaller step, straddles a non-differentiable point (relu hinge, max-pool
//! switch, `|x|` at zero) and is counted as a kink instead of an error.

use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::autodiff::{Tape, Var};
use crate::error::TensorError;
use crate::tensor::Tensor;

#[derive(Clone, Debug)]
pub struct GradCheckConfig {
    /// Central-difference step.
    pub step: f64,
    /// Largest acceptable relative error.
    pub tolerance: f64,
    /// Relative-error denominator floor, so near-zero gradients are
    /// compared at absolute precision `tolerance * floor`.
    pub floor: f64,
    /// Largest tolerated fraction of kink coordinates over all checked inputs.
    pub max_kink_fraction: f64,
    /// Checks at most this many randomly chosen coordinates per input.
    pub max_coords: Option<usize>,
    pub seed: u64,
}

impl Default for GradCheckConfig {
    fn default() -> Self {
        Self {
            step: 1e-5,
            tolerance: 1e-4,
            floor: 1e-5,
            max_kink_fraction: 0.01,
            max_coords: None,
            seed: 0,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct InputReport {
    pub name: String,
    pub checked: usize,
    pub kinks: usize,
    pub max_rel_error: f64,
    pub worst_index: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct GradCheckReport {
    pub scope: String,
    pub tolerance: f64,
    pub max_kink_fraction: f64,
    pub inputs: Vec<InputReport>,
}

impl GradCheckReport {
    pub fn max_rel_error(&self) -> f64 {
        self.inputs.iter().map(|r| r.max_rel_error).fold(0.0, f64::max)
    }

    pub fn checked(&self) -> usize {
        self.inputs.iter().map(|r| r.checked).sum()
    }

    pub fn kinks(&self) -> usize {
        self.inputs.iter().map(|r| r.kinks).sum()
    }

    /// Every non-kink coordinate is within tolerance and kinks make up at
    /// most `max_kink_fraction` of all checked coordinates.
    pub fn passed(&self) -> bool {
        self.max_rel_error() < self.tolerance
            && (self.kinks() as f64) <= self.max_kink_fraction * self.checked().max(1) as f64
    }

    pub fn render(&self) -> String {
        let mut out = format!(
            "gradcheck {}: {} (max relative error {:.3e}, tolerance {:.0e}, kinks {}/{})\n",
            self.scope,
            if self.passed() { "PASS" } else { "FAIL" },
            self.max_rel_error(),
            self.tolerance,
            self.kinks(),
            self.checked()
        );
        for r in &self.inputs {
            out.push_str(&format!(
                "  {:<28} checked {:>6}  kinks {:>3}  max rel err {:.3e} (at {})\n",
                r.name, r.checked, r.kinks, r.max_rel_error, r.worst_index
            ));
        }
        out
    }
}

pub fn relative_error(analytic: f64, numeric: f64, floor: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(floor)
}

/// Checks `d loss / d input` for every named input of `f`.
///
/// `f` receives a fresh tape with the inputs registered as leaves (in
/// order) and must return a single-element loss. It is called once for
/// the analytic pass and twice per checked coordinate.
pub fn check<F>(
    scope: &str,
    inputs: &[(String, Tensor<f64>)],
    f: F,
    cfg: &GradCheckConfig,
) -> Result<GradCheckReport, TensorError>
where
    F: Fn(&mut Tape<f64>, &[Var]) -> Result<Var, TensorError>,
{
    let eval = |values: &[Tensor<f64>]| -> Result<f64, TensorError> {
        let mut tape = Tape::new();
        let vars: Vec<Var> = values.iter().map(|t| tape.leaf(t.clone())).collect();
        let loss = f(&mut tape, &vars)?;
        tape.value(loss).item()
    };

    let mut tape = Tape::new();
    let vars: Vec<Var> = inputs.iter().map(|(_, t)| tape.leaf(t.clone())).collect();
    let loss = f(&mut tape, &vars)?;
    let grads = tape.backward(loss)?;

    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut values: Vec<Tensor<f64>> = inputs.iter().map(|(_, t)| t.clone()).collect();
    let mut reports = Vec::with_capacity(inputs.len());
    for (slot, (name, tensor)) in inputs.iter().enumerate() {
        let analytic = grads
            .get(vars[slot])
            .cloned()
            .unwrap_or_else(|| Tensor::zeros(tensor.shape()));
        let n = tensor.numel();
        let coords: Vec<usize> = match cfg.max_coords {
            Some(m) if m < n => {
                let mut c = sample(&mut rng, n, m).into_vec();
                c.sort_unstable();
                c
            }
            _ => (0..n).collect(),
        };
        let mut report = InputReport {
            name: name.clone(),
            checked: coords.len(),
            kinks: 0,
            max_rel_error: 0.0,
            worst_index: 0,
        };
        for &i in &coords {
            let a = analytic.data()[i];
            let mut central = |h: f64| -> Result<f64, TensorError> {
                let orig = values[slot].data()[i];
                values[slot].data_mut()[i] = orig + h;
                let plus = eval(&values)?;
                values[slot].data_mut()[i] = orig - h;
                let minus = eval(&values)?;
                values[slot].data_mut()[i] = orig;
                Ok((plus - minus) / (2.0 * h))
            };
            let err = relative_error(a, central(cfg.step)?, cfg.floor);
            if err < cfg.tolerance {
                if err > report.max_rel_error {
                    report.max_rel_error = err;
                    report.worst_index = i;
                }
                continue;
            }
            let mut kink = false;
            for h in [cfg.step * 0.1, cfg.step * 0.01] {
                if relative_error(a, central(h)?, cfg.floor) < cfg.tolerance {
                    kink = true;
                    break;
                }
            }
            if kink {
                report.kinks += 1;
            } else if err > report.max_rel_error {
                report.max_rel_error = err;
                report.worst_index = i;
            }
        }
        reports.push(report);
    }
    Ok(GradCheckReport {
        scope: scope.to_string(),
        tolerance: cfg.tolerance,
        max_kink_fraction: cfg.max_kink_fraction,
        inputs: reports,
    })
}
