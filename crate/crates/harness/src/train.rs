//! Mini-batch training with Adam, per-epoch logging and resumable state.
//!
//! A run directory holds `model.ckpt`, `optimizer.ckpt`, `config.txt`,
//! `training_log.csv` (`epoch,split,group,mae`), `metrics.csv`,
//! `report.txt`, and `reconstruction.ckpt` when the manifold term is on.

use std::fs::{self, OpenOptions};
use std::path::{Path, PathBuf};

use carn_core::autodiff::{Tape, Var};
use carn_core::dataset::{read_dataset, Dataset};
use carn_core::layers::Mode;
use carn_core::loss::{loss_t, ReconstructionTable};
use carn_core::model::Model;
use carn_core::{Scalar, Tensor};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::config::ExperimentConfig;
use crate::error::{HarnessError, Result};
use crate::metrics::{check_compatible, evaluate, evaluate_split, MetricsReport, GROUPS};
use crate::optim::Adam;

pub const MODEL_FILE: &str = "model.ckpt";
pub const OPTIMIZER_FILE: &str = "optimizer.ckpt";
pub const RECONSTRUCTION_FILE: &str = "reconstruction.ckpt";
pub const LOG_FILE: &str = "training_log.csv";
pub const CONFIG_FILE: &str = "config.txt";

#[derive(Clone, Copy, Debug, Default)]
pub struct TrainOptions {
    /// Continue from the state in the output directory if present.
    pub resume: bool,
    /// Print one progress line per epoch to stderr.
    pub verbose: bool,
}

#[derive(Clone, Debug, PartialEq)]
pub struct EpochSummary {
    pub epoch: usize,
    pub mean_loss_p: f64,
    pub mean_loss_t: f64,
    /// Smallest `loss_t - loss_p` seen on any batch.
    pub min_term_gap: f64,
    pub train_total: f64,
    pub test_total: f64,
}

pub struct TrainOutcome {
    pub model: Model<f32>,
    pub history: Vec<EpochSummary>,
    pub metrics: MetricsReport,
}

fn write_file(path: &Path, body: &str) -> Result<()> {
    fs::write(path, body).map_err(|e| HarnessError::io(path, e))
}

/// Sets the head bias to the mean training target so optimisation starts
/// from the mean predictor.
fn init_head_bias(model: &mut Model<f32>, data: &Dataset) {
    let rows = &data.manifest.split.train;
    let d = data.num_indices();
    let mut mean = vec![0.0f64; d];
    for &r in rows {
        mean.iter_mut().zip(data.target(r)).for_each(|(m, t)| *m += t);
    }
    let bias = mean.iter().map(|m| (m / rows.len() as f64) as f32).collect();
    *model.params.get_mut(model.head_bias) = Tensor::new(vec![d], bias).expect("one bias per output");
}

struct Log {
    path: PathBuf,
    writer: csv::Writer<fs::File>,
}

impl Log {
    fn open(path: PathBuf, fresh: bool) -> Result<Self> {
        let new_file = fresh || !path.exists();
        let file = OpenOptions::new()
            .create(true)
            .append(!new_file)
            .write(true)
            .truncate(new_file)
            .open(&path)
            .map_err(|e| HarnessError::io(&path, e))?;
        let mut log = Self { writer: csv::Writer::from_writer(file), path };
        if new_file {
            log.row(&["epoch", "split", "group", "mae"])?;
        }
        Ok(log)
    }

    fn row(&mut self, fields: &[&str]) -> Result<()> {
        self.writer.write_record(fields).map_err(|e| HarnessError::csv(&self.path, e))
    }

    fn flush(&mut self) -> Result<()> {
        self.writer.flush().map_err(|e| HarnessError::io(&self.path, e))
    }
}

/// Reads `training_log.csv` back as `(epoch, split, group, mae)` rows.
pub fn read_log(path: &Path) -> Result<Vec<(usize, String, String, f64)>> {
    let mut reader = csv::Reader::from_path(path).map_err(|e| HarnessError::csv(path, e))?;
    let mut rows = Vec::new();
    for rec in reader.records() {
        let rec = rec.map_err(|e| HarnessError::csv(path, e))?;
        let bad = || HarnessError::config("training log", format!("malformed row {rec:?}"));
        let epoch = rec.get(0).and_then(|v| v.parse().ok()).ok_or_else(bad)?;
        let mae = rec.get(3).and_then(|v| v.parse().ok()).ok_or_else(bad)?;
        rows.push((epoch, rec[1].to_string(), rec[2].to_string(), mae));
    }
    Ok(rows)
}

pub fn train(cfg: &ExperimentConfig, opts: TrainOptions) -> Result<TrainOutcome> {
    cfg.validate()?;
    let data = read_dataset(&cfg.dataset)?;
    train_on(cfg, &data, opts)
}

/// Trains on an already loaded dataset; see [`train`].
pub fn train_on(cfg: &ExperimentConfig, data: &Dataset, opts: TrainOptions) -> Result<TrainOutcome> {
    cfg.validate()?;
    let out = &cfg.output;
    fs::create_dir_all(out).map_err(|e| HarnessError::io(out, e))?;
    let (model_path, opt_path) = (out.join(MODEL_FILE), out.join(OPTIMIZER_FILE));

    let resuming = opts.resume && model_path.exists();
    let (mut model, mut opt) = if resuming {
        let model = Model::<f32>::load(&model_path)?;
        if model.config != cfg.model {
            return Err(HarnessError::config("resume", "checkpoint was trained with a different model configuration"));
        }
        let opt = Adam::load(&opt_path, cfg.adam.clone(), &model.params)?;
        (model, opt)
    } else {
        let mut model = Model::<f32>::build(cfg.model.clone(), cfg.seed)?;
        check_compatible(&model, data)?;
        init_head_bias(&mut model, data);
        let opt = Adam::new(cfg.adam.clone(), &model.params);
        (model, opt)
    };
    check_compatible(&model, data)?;
    write_file(&out.join(CONFIG_FILE), &cfg.to_kv())?;

    let train_rows = data.manifest.split.train.clone();
    if train_rows.len() < 2 {
        return Err(HarnessError::config("dataset", "training split needs at least 2 samples"));
    }
    let loss_cfg = cfg.effective_loss();
    let table = if loss_cfg.lambda_l > 0.0 {
        let t = ReconstructionTable::precompute(&data.targets(&train_rows), loss_cfg.k)?;
        t.save(&out.join(RECONSTRUCTION_FILE))?;
        Some(t)
    } else {
        None
    };

    let mut log = Log::open(out.join(LOG_FILE), !resuming)?;
    let mut history = Vec::new();
    for epoch in opt.epochs_done + 1..=cfg.epochs {
        let mut order: Vec<usize> = (0..train_rows.len()).collect();
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        rng.set_stream(epoch as u64);
        order.shuffle(&mut rng);

        let (mut sum_p, mut sum_t, mut batches, mut min_gap) = (0.0, 0.0, 0usize, f64::INFINITY);
        // a trailing batch of one cannot be batch-normalised and is skipped
        for (b, chunk) in order.chunks(cfg.batch_size).enumerate().filter(|(_, c)| c.len() >= 2) {
            let rows: Vec<usize> = chunk.iter().map(|&p| train_rows[p]).collect();
            let mut tape = Tape::new();
            let bound = model.bind(&mut tape);
            let x = tape.leaf(data.batch_images(&rows));
            let pred = model.forward(&mut tape, &bound, x, Mode::Train)?;
            let y_tilde = table.as_ref().map(|t| t.batch::<f32>(chunk));
            let weights: Vec<Var> = model.weight_ids().iter().map(|&id| bound.var(id)).collect();
            let terms = loss_t(&mut tape, pred, &data.batch_targets(&rows), y_tilde.as_ref(), &weights, &loss_cfg)?;
            let total = tape.value(terms.total).item()?.as_f64();
            let prelim = tape.value(terms.preliminary).item()?.as_f64();
            if !total.is_finite() {
                return Err(HarnessError::NonFinite { epoch, batch: b + 1, value: total });
            }
            let grads = tape.backward(terms.total)?;
            opt.update(&mut model.params, &bound, &grads);
            sum_p += prelim;
            sum_t += total;
            min_gap = min_gap.min(total - prelim);
            batches += 1;
        }

        let train_m = evaluate_split(&mut model, data, "train")?;
        let test_m = evaluate_split(&mut model, data, "test")?;
        for m in [&train_m, &test_m] {
            for g in GROUPS {
                log.row(&[&epoch.to_string(), &m.split, g, &format!("{}", m.group(g).mae)])?;
            }
        }
        log.flush()?;
        opt.epochs_done = epoch;
        model.save(&model_path)?;
        opt.save(&model.params, &opt_path)?;

        let summary = EpochSummary {
            epoch,
            mean_loss_p: sum_p / batches.max(1) as f64,
            mean_loss_t: sum_t / batches.max(1) as f64,
            min_term_gap: min_gap,
            train_total: train_m.group("Total").mae,
            test_total: test_m.group("Total").mae,
        };
        if opts.verbose {
            eprintln!(
                "{} epoch {epoch}/{}: loss {:.4}, train {:.4} mm, test {:.4} mm",
                cfg.label(),
                cfg.epochs,
                summary.mean_loss_t,
                summary.train_total,
                summary.test_total
            );
        }
        history.push(summary);
    }
    if !model_path.exists() {
        model.save(&model_path)?;
        opt.save(&model.params, &opt_path)?;
    }

    let metrics = evaluate(&mut model, data, cfg.seed)?;
    metrics.write(out)?;
    Ok(TrainOutcome { model, history, metrics })
}
