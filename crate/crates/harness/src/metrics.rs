//! Mean absolute error in millimetres, grouped into disc heights (IDH),
//! vertebral body heights (VBH) and all indices.

use std::fmt::Write as _;
use std::path::Path;

use carn_core::dataset::Dataset;
use carn_core::model::Model;

use crate::error::{HarnessError, Result};

pub const GROUPS: [&str; 3] = ["IDH", "VBH", "Total"];
pub const METRICS_FILE: &str = "metrics.csv";
pub const REPORT_FILE: &str = "report.txt";
const EVAL_BATCH: usize = 16;

/// Mean and population standard deviation of absolute errors.
#[derive(Clone, Debug, PartialEq)]
pub struct ErrorStats {
    pub name: String,
    pub mae: f64,
    pub std: f64,
    pub count: usize,
}

impl ErrorStats {
    pub fn from_errors(name: &str, errors: &[f64]) -> Self {
        let n = errors.len().max(1) as f64;
        let mae = errors.iter().sum::<f64>() / n;
        let var = errors.iter().map(|e| (e - mae) * (e - mae)).sum::<f64>() / n;
        Self { name: name.to_string(), mae, std: var.sqrt(), count: errors.len() }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SplitMetrics {
    pub split: String,
    /// IDH, VBH, Total.
    pub groups: Vec<ErrorStats>,
    pub per_index: Vec<ErrorStats>,
}

impl SplitMetrics {
    /// `predictions` and `targets` are row-major `[N][d]`. An index belongs to
    /// IDH or VBH by its name prefix.
    pub fn compute(split: &str, index_names: &[String], predictions: &[Vec<f64>], targets: &[Vec<f64>]) -> Self {
        let d = index_names.len();
        let mut by_index = vec![Vec::with_capacity(targets.len()); d];
        for (p, t) in predictions.iter().zip(targets) {
            for j in 0..d {
                by_index[j].push((p[j] - t[j]).abs());
            }
        }
        let pooled = |keep: &dyn Fn(&str) -> bool| -> Vec<f64> {
            index_names.iter().zip(&by_index).filter(|(n, _)| keep(n)).flat_map(|(_, e)| e.iter().copied()).collect()
        };
        let groups = vec![
            ErrorStats::from_errors("IDH", &pooled(&|n| n.starts_with("IDH"))),
            ErrorStats::from_errors("VBH", &pooled(&|n| n.starts_with("VBH"))),
            ErrorStats::from_errors("Total", &pooled(&|_| true)),
        ];
        let per_index = index_names.iter().zip(&by_index).map(|(n, e)| ErrorStats::from_errors(n, e)).collect();
        Self { split: split.to_string(), groups, per_index }
    }

    pub fn group(&self, name: &str) -> &ErrorStats {
        self.groups.iter().find(|g| g.name == name).expect("known group")
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct MetricsReport {
    pub seed: u64,
    pub wall_clock_secs: f64,
    pub splits: Vec<SplitMetrics>,
}

impl MetricsReport {
    pub fn split(&self, name: &str) -> Option<&SplitMetrics> {
        self.splits.iter().find(|s| s.split == name)
    }

    /// Machine-readable rows `split,level,name,count,mae,std`. Carries no
    /// timing so identical runs produce identical files.
    pub fn to_csv(&self) -> String {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(["split", "level", "name", "count", "mae", "std"]).expect("in-memory write");
        for s in &self.splits {
            for (level, rows) in [("group", &s.groups), ("index", &s.per_index)] {
                for r in rows.iter() {
                    let rec = [s.split.clone(), level.into(), r.name.clone(), r.count.to_string(), format!("{}", r.mae), format!("{}", r.std)];
                    w.write_record(&rec).expect("in-memory write");
                }
            }
        }
        String::from_utf8(w.into_inner().expect("in-memory flush")).expect("csv is utf-8")
    }

    pub fn render(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "seed {}, wall clock {:.1} s", self.seed, self.wall_clock_secs);
        let _ = writeln!(out, "MAE ± std over per-(sample, index) absolute errors, mm\n");
        let _ = writeln!(out, "{:<8}{:<8}{:>22}", "split", "group", "MAE");
        for s in &self.splits {
            for g in &s.groups {
                let _ = writeln!(out, "{:<8}{:<8}{:>22}", s.split, g.name, format!("{:.4}±{:.4}", g.mae, g.std));
            }
        }
        let _ = writeln!(out);
        let header: String = self.splits.iter().map(|s| format!("{:>18}", s.split)).collect();
        let _ = writeln!(out, "{:<14}{header}", "index");
        if let Some(first) = self.splits.first() {
            for (j, idx) in first.per_index.iter().enumerate() {
                let cells: String =
                    self.splits.iter().map(|s| format!("{:>18}", format!("{:.4}±{:.4}", s.per_index[j].mae, s.per_index[j].std))).collect();
                let _ = writeln!(out, "{:<14}{cells}", idx.name);
            }
        }
        out
    }

    /// Writes `metrics.csv` and `report.txt` into `dir`.
    pub fn write(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir).map_err(|e| HarnessError::io(dir, e))?;
        for (file, body) in [(METRICS_FILE, self.to_csv()), (REPORT_FILE, self.render())] {
            let path = dir.join(file);
            std::fs::write(&path, body).map_err(|e| HarnessError::io(&path, e))?;
        }
        Ok(())
    }
}

/// Inference-mode predictions for `rows`, in batches.
pub fn predict_rows(model: &mut Model<f32>, data: &Dataset, rows: &[usize]) -> Result<Vec<Vec<f64>>> {
    let mut out = Vec::with_capacity(rows.len());
    for chunk in rows.chunks(EVAL_BATCH) {
        let pred = model.predict(&data.batch_images(chunk))?;
        let d = pred.shape()[1];
        out.extend(pred.data().chunks(d).map(|r| r.iter().map(|&v| v as f64).collect::<Vec<_>>()));
    }
    Ok(out)
}

/// Rejects a model whose input or output shape does not fit the dataset.
pub fn check_compatible(model: &Model<f32>, data: &Dataset) -> Result<()> {
    let cfg = &model.config;
    if cfg.input_hw != data.image_hw() {
        return Err(HarnessError::config(
            "input_h/input_w",
            format!("model expects {:?} images, dataset has {:?}", cfg.input_hw, data.image_hw()),
        ));
    }
    if cfg.outputs != data.num_indices() {
        return Err(HarnessError::config("outputs", format!("model predicts {} indices, dataset has {}", cfg.outputs, data.num_indices())));
    }
    Ok(())
}

pub fn evaluate_split(model: &mut Model<f32>, data: &Dataset, split: &str) -> Result<SplitMetrics> {
    let rows = match split {
        "train" => &data.manifest.split.train,
        "test" => &data.manifest.split.test,
        other => return Err(HarnessError::config("split", format!("expected train or test, got `{other}`"))),
    };
    let preds = predict_rows(model, data, rows)?;
    Ok(SplitMetrics::compute(split, &data.manifest.index_names, &preds, &data.targets(rows)))
}

/// Train and test metrics of a model on a dataset.
pub fn evaluate(model: &mut Model<f32>, data: &Dataset, seed: u64) -> Result<MetricsReport> {
    check_compatible(model, data)?;
    let start = std::time::Instant::now();
    let splits = vec![evaluate_split(model, data, "train")?, evaluate_split(model, data, "test")?];
    Ok(MetricsReport { seed, wall_clock_secs: start.elapsed().as_secs_f64(), splits })
}

/// Loads a checkpoint and evaluates it on both splits of a dataset.
pub fn evaluate_checkpoint(checkpoint: &Path, dataset: &Path, seed: u64) -> Result<MetricsReport> {
    let mut model = Model::<f32>::load(checkpoint)?;
    let data = carn_core::dataset::read_dataset(dataset)?;
    evaluate(&mut model, &data, seed)
}
