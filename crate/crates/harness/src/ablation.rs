//! Four-way comparison of both model variants under both losses, with
//! everything else held fixed.

use std::fmt::Write as _;
use std::path::Path;

use carn_core::dataset::read_dataset;
use carn_core::model::Variant;

use crate::config::{ExperimentConfig, LossVariant};
use crate::error::{HarnessError, Result};
use crate::metrics::{MetricsReport, GROUPS};
use crate::train::{train_on, TrainOptions};

pub const ABLATION_REPORT: &str = "report.txt";
pub const ABLATION_CSV: &str = "ablation.csv";

/// Column order of the report.
pub const CONFIGS: [(Variant, LossVariant); 4] = [
    (Variant::Carn, LossVariant::LossP),
    (Variant::CnnBaseline, LossVariant::LossP),
    (Variant::CnnBaseline, LossVariant::LossT),
    (Variant::Carn, LossVariant::LossT),
];

pub fn configs(base: &ExperimentConfig, seed: u64) -> Vec<ExperimentConfig> {
    CONFIGS
        .iter()
        .map(|&(variant, loss)| {
            let mut cfg = base.clone();
            cfg.model.variant = variant;
            cfg.loss_variant = loss;
            cfg.seed = seed;
            cfg.output = base.output.join(format!("seed{seed}")).join(cfg.label());
            cfg
        })
        .collect()
}

/// `(split, group, (mae, std) per configuration)`.
pub type TableRow = (String, String, Vec<(f64, f64)>);

#[derive(Clone, Debug, PartialEq)]
pub struct AblationRun {
    pub seed: u64,
    pub label: String,
    pub metrics: MetricsReport,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Finding {
    pub claim: String,
    pub observed: String,
    pub holds: bool,
}

#[derive(Clone, Debug, PartialEq)]
pub struct AblationReport {
    pub labels: Vec<String>,
    pub seeds: Vec<u64>,
    pub runs: Vec<AblationRun>,
}

impl AblationReport {
    fn cells(&self, label: &str, split: &str, group: &str) -> Vec<(f64, f64)> {
        self.runs
            .iter()
            .filter(|r| r.label == label)
            .filter_map(|r| r.metrics.split(split))
            .map(|s| (s.group(group).mae, s.group(group).std))
            .collect()
    }

    /// Mean over seeds of the MAE and of the standard deviation.
    pub fn mean(&self, label: &str, split: &str, group: &str) -> (f64, f64) {
        let cells = self.cells(label, split, group);
        let n = cells.len().max(1) as f64;
        (cells.iter().map(|c| c.0).sum::<f64>() / n, cells.iter().map(|c| c.1).sum::<f64>() / n)
    }

    /// Test minus train Total MAE, averaged over seeds.
    pub fn gap(&self, label: &str) -> f64 {
        self.mean(label, "test", "Total").0 - self.mean(label, "train", "Total").0
    }

    /// Rows `(split, group, cells)`, one cell per configuration.
    pub fn table(&self) -> Vec<TableRow> {
        let mut rows = Vec::new();
        for split in ["train", "test"] {
            for g in GROUPS {
                let cells = self.labels.iter().map(|l| self.mean(l, split, g)).collect();
                rows.push((split.to_string(), g.to_string(), cells));
            }
        }
        rows
    }

    pub fn findings(&self) -> Vec<Finding> {
        let train = |l: &str| self.mean(l, "train", "Total").0;
        let mut out = Vec::new();
        let (t, p) = (train("CARN-loss_t"), train("CARN-loss_p"));
        out.push(Finding {
            claim: "manifold term raises CARN train Total MAE".into(),
            observed: format!("CARN-loss_t {t:.4} vs CARN-loss_p {p:.4} mm"),
            holds: t > p,
        });
        for model in ["CARN", "CNN"] {
            let (gt, gp) = (self.gap(&format!("{model}-loss_t")), self.gap(&format!("{model}-loss_p")));
            out.push(Finding {
                claim: format!("manifold term narrows the {model} generalization gap"),
                observed: format!("test - train Total: loss_t {gt:.4} vs loss_p {gp:.4} mm"),
                holds: gt < gp,
            });
        }
        let finite = self.runs.len() == self.labels.len() * self.seeds.len()
            && self.runs.iter().all(|r| r.metrics.splits.iter().all(|s| s.groups.iter().all(|g| g.mae.is_finite() && g.std.is_finite())));
        out.push(Finding {
            claim: "all four configurations finish with finite metrics".into(),
            observed: format!("{} of {} runs", self.runs.len(), self.labels.len() * self.seeds.len()),
            holds: finite,
        });
        out
    }

    pub fn render(&self) -> String {
        let seeds: Vec<String> = self.seeds.iter().map(u64::to_string).collect();
        let mut out = String::new();
        let _ = writeln!(out, "Ablation, seeds {}: MAE ± std in mm, mean over seeds", seeds.join(", "));
        let _ = writeln!(out, "std is taken over per-(sample, index) absolute errors within a run\n");
        let header: String = self.labels.iter().map(|l| format!("{l:>20}")).collect();
        let _ = writeln!(out, "{:<7}{:<7}{header}", "split", "group");
        for (split, group, cells) in self.table() {
            let body: String = cells.iter().map(|(m, s)| format!("{:>20}", format!("{m:.4}±{s:.4}"))).collect();
            let _ = writeln!(out, "{split:<7}{group:<7}{body}");
        }
        let _ = writeln!(out, "\nFindings");
        for f in self.findings() {
            let _ = writeln!(out, "  [{}] {}: {}", if f.holds { "holds" } else { "does not hold" }, f.claim, f.observed);
        }
        out
    }

    /// Per-run rows `seed,config,split,group,mae,std`.
    pub fn to_csv(&self) -> String {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(["seed", "config", "split", "group", "mae", "std"]).expect("in-memory write");
        for r in &self.runs {
            for s in &r.metrics.splits {
                for g in &s.groups {
                    let rec = [r.seed.to_string(), r.label.clone(), s.split.clone(), g.name.clone(), format!("{}", g.mae), format!("{}", g.std)];
                    w.write_record(&rec).expect("in-memory write");
                }
            }
        }
        String::from_utf8(w.into_inner().expect("in-memory flush")).expect("csv is utf-8")
    }

    pub fn write(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir).map_err(|e| HarnessError::io(dir, e))?;
        for (file, body) in [(ABLATION_REPORT, self.render()), (ABLATION_CSV, self.to_csv())] {
            let path = dir.join(file);
            std::fs::write(&path, body).map_err(|e| HarnessError::io(&path, e))?;
        }
        Ok(())
    }
}

/// Trains and evaluates every configuration for every seed under
/// `base.output/seed<s>/<label>`, then writes the summary into `base.output`.
pub fn run_ablation(base: &ExperimentConfig, seeds: &[u64], opts: TrainOptions) -> Result<AblationReport> {
    if seeds.is_empty() {
        return Err(HarnessError::config("seeds", "need at least one seed"));
    }
    base.validate()?;
    let data = read_dataset(&base.dataset)?;
    let labels = configs(base, seeds[0]).iter().map(ExperimentConfig::label).collect();
    let mut runs = Vec::new();
    for &seed in seeds {
        for cfg in configs(base, seed) {
            let outcome = train_on(&cfg, &data, opts)?;
            runs.push(AblationRun { seed, label: cfg.label(), metrics: outcome.metrics });
        }
    }
    let report = AblationReport { labels, seeds: seeds.to_vec(), runs };
    report.write(&base.output)?;
    Ok(report)
}
