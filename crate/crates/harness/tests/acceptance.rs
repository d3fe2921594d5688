//! End-to-end acceptance checks. Runs as a plain binary so the checks execute
//! one after another (keeping the runtime budgets honest on a single core)
//! and each prints exactly one PASS/FAIL line. Exits nonzero if any fails.
//!
//! `CARN_ACCEPTANCE_ONLY=a,b` restricts the run to checks whose names contain
//! one of the comma-separated substrings.

use std::path::Path;
use std::time::Instant;

use carn_core::amplifier::{AmplifierUnit, DEFAULT_GATE_KERNEL};
use carn_core::autodiff::Tape;
use carn_core::checks::run_scope;
use carn_core::dataset::{generate_dataset, read_dataset, write_manifest};
use carn_core::gradcheck::GradCheckConfig;
use carn_core::lae::{lae_solve, objective};
use carn_core::layers::Mode;
use carn_core::loss::ReconstructionTable;
use carn_core::model::{CarnConfig, Model, Variant};
use carn_core::params::{normal_tensor, ParamSet};
use carn_core::phantom::{
    idh_slot, latent_to_indices, render_phantom, sample_latent, vbh_slot, PhantomSpec, INTENSITY_BONE, INTENSITY_DISC,
    NUM_INDICES, NUM_LEVELS, REFERENCE_SPACING,
};
use carn_harness::ablation::run_ablation;
use carn_harness::metrics::METRICS_FILE;
use carn_harness::train::{train, TrainOptions, MODEL_FILE};
use carn_harness::ExperimentConfig;
use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

type Check = Box<dyn Fn() -> Outcome>;

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: String) -> Outcome {
    Outcome { pass, detail }
}

fn gradient_integrity() -> Outcome {
    let start = Instant::now();
    let reports = match run_scope("all", &GradCheckConfig::default()) {
        Ok(r) => r,
        Err(e) => return outcome(false, format!("gradcheck could not run: {e}")),
    };
    let secs = start.elapsed().as_secs_f64();
    let failed: Vec<&str> = reports.iter().filter(|r| !r.passed()).map(|r| r.scope.as_str()).collect();
    let worst = reports.iter().map(|r| r.max_rel_error()).fold(0.0, f64::max);
    let kinks: usize = reports.iter().map(|r| r.kinks()).sum();
    let checked: usize = reports.iter().map(|r| r.checked()).sum();
    let pass = failed.is_empty() && worst < 1e-4 && secs < 120.0;
    outcome(
        pass,
        format!(
            "{} scopes (ops, au, tiny model, loss_t), worst rel err {worst:.3e} < 1e-4, kinks {kinks}/{checked}, failed {failed:?}, {secs:.1} s < 120 s",
            reports.len()
        ),
    )
}

fn amplification_mechanism() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(21);
    let mut params = ParamSet::<f64>::new();
    let au = AmplifierUnit::new(&mut params, "au", 4, 6, DEFAULT_GATE_KERNEL, &mut rng);
    let mut au_run = au.clone();
    // 4 x 4 x 50 x 125 = 1e5 factor elements
    let mut tape = Tape::new();
    let bound = params.bind(&mut tape);
    let t = tape.leaf(normal_tensor(&[4, 4, 50, 125], 1.0, &mut rng));
    let trace = au_run.forward_trace(&mut tape, &bound, t, Mode::Train).expect("forward");
    let factor = tape.value(trace.factor).data();
    let in_range = factor.iter().all(|&f| f > 0.0 && f < 2.0);
    let (lo, hi) = factor.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), &f| (a.min(f), b.max(f)));
    let (tv, gv, sv) = (tape.value(t).data(), tape.value(trace.gate).data(), tape.value(trace.selected).data());
    let identity_err = tv.iter().zip(gv).zip(sv).map(|((t, g), s)| (t * g + t - s).abs()).fold(0.0, f64::max);

    let mut zeroed = params.clone();
    zeroed.get_mut(au.gate.weight).data_mut().fill(0.0);
    zeroed.get_mut(au.gate.bias).data_mut().fill(0.0);
    let mut tape = Tape::new();
    let bound = zeroed.bind(&mut tape);
    let t = tape.leaf(normal_tensor(&[2, 4, 6, 5], 3.0, &mut rng));
    let trace = au.clone().forward_trace(&mut tape, &bound, t, Mode::Train).expect("forward");
    let zero_gate_exact = tape.value(trace.selected) == tape.value(t);

    outcome(
        in_range && zero_gate_exact && identity_err < 1e-12,
        format!(
            "{} factors strictly inside (0,2): {in_range} (min {lo:.3e}, 2 - max {:.3e}); zero gate gives f_s == t exactly: {zero_gate_exact}; |t*f_g + t - t*(f_g+1)| max {identity_err:.1e} < 1e-12",
            factor.len(),
            2.0 - hi
        ),
    )
}

fn architecture_arithmetic() -> Outcome {
    let cfg = CarnConfig::full_scale();
    let mut model = Model::<f32>::build(cfg.clone(), 0).expect("build");
    let mut tape = Tape::new();
    let bound = model.bind(&mut tape);
    let x = tape.leaf(normal_tensor(&[1, 1, 512, 256], 1.0, &mut ChaCha8Rng::seed_from_u64(1)));
    let (y, trace) = model.forward_traced(&mut tape, &bound, x, Mode::Infer).expect("forward");
    let stem = trace[0].shape[2..].to_vec();
    let pre_gap = trace.iter().find(|l| l.name == "mix").map(|l| l.shape[2..].to_vec()).unwrap_or_default();
    let out = tape.shape(y).to_vec();

    let channels = |variant: Variant| -> Vec<Vec<usize>> {
        let c = CarnConfig { variant, ..cfg.clone() };
        c.layer_plan(1).into_iter().map(|l| l.shape).collect()
    };
    let mut baseline = Model::<f32>::build(CarnConfig { variant: Variant::CnnBaseline, ..cfg.clone() }, 0).expect("build");
    let mut tape = Tape::new();
    let bound = baseline.bind(&mut tape);
    let x = tape.leaf(normal_tensor(&[1, 1, 512, 256], 1.0, &mut ChaCha8Rng::seed_from_u64(1)));
    let (_, base_trace) = baseline.forward_traced(&mut tape, &bound, x, Mode::Infer).expect("forward");
    let same_channels = trace.iter().zip(&base_trace).all(|(a, b)| a.name == b.name && a.shape == b.shape)
        && trace.len() == base_trace.len()
        && channels(Variant::Carn) == channels(Variant::CnnBaseline);

    outcome(
        stem == [256, 128] && pre_gap == [8, 4] && out == [1, 30] && same_channels,
        format!("stem {stem:?} (want [256, 128]), before pooling {pre_gap:?} (want [8, 4]), output {out:?} (want [1, 30]), baseline channels match: {same_channels}"),
    )
}

/// Minimum of the quadratic over a dense grid on the simplex (k <= 3).
fn grid_min(y: &[f64], basis: &[Vec<f64>], h: f64) -> f64 {
    let n = (1.0 / h).round() as usize;
    let k = basis.len();
    let dot = |a: &[f64], b: &[f64]| a.iter().zip(b).map(|(x, y)| x * y).sum::<f64>();
    let g: Vec<Vec<f64>> = basis.iter().map(|a| basis.iter().map(|b| dot(a, b)).collect()).collect();
    let c: Vec<f64> = basis.iter().map(|b| dot(b, y)).collect();
    let yy = dot(y, y);
    let f = |a: &[f64]| {
        let mut q = yy;
        for i in 0..k {
            q -= 2.0 * a[i] * c[i];
            for j in 0..k {
                q += a[i] * a[j] * g[i][j];
            }
        }
        q.max(0.0)
    };
    let mut best = f64::INFINITY;
    for i in 0..=n {
        if k == 2 {
            let a = i as f64 * h;
            best = best.min(f(&[a, 1.0 - a]));
            continue;
        }
        for j in 0..=n - i {
            let (a, b) = (i as f64 * h, j as f64 * h);
            best = best.min(f(&[a, b, 1.0 - a - b]));
        }
    }
    best
}

fn lae_equivalence() -> Outcome {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(404);
    let (mut worst_excess, mut worst_feas, mut count) = (f64::NEG_INFINITY, 0.0f64, 0);
    for &k in &[2usize, 3] {
        for &d in &[2usize, 30] {
            for _ in 0..50 {
                let basis: Vec<Vec<f64>> = (0..k).map(|_| (0..d).map(|_| rng.random_range(-2.0..2.0)).collect()).collect();
                let y: Vec<f64> = (0..d).map(|_| rng.random_range(-2.0..2.0)).collect();
                let w = lae_solve(&y, &basis).expect("solve");
                let a = w.alpha();
                worst_feas = worst_feas.max((a.iter().sum::<f64>() - 1.0).abs()).max(a.iter().fold(0.0f64, |m, &v| m.max(-v)));
                worst_excess = worst_excess.max(objective(&y, &basis, a) - grid_min(&y, &basis, 1e-3));
                count += 1;
            }
        }
    }
    let mut worst_bary = 0.0f64;
    for i in 0..100 {
        let k = 2 + i % 2;
        let basis: Vec<Vec<f64>> = (0..k).map(|_| (0..30).map(|_| rng.random_range(-2.0..2.0)).collect()).collect();
        let raw: Vec<f64> = (0..k).map(|_| rng.random_range(0.05..1.0)).collect();
        let alpha: Vec<f64> = raw.iter().map(|v| v / raw.iter().sum::<f64>()).collect();
        let y: Vec<f64> = (0..30).map(|r| (0..k).map(|j| alpha[j] * basis[j][r]).sum()).collect();
        let w = lae_solve(&y, &basis).expect("solve");
        worst_bary = worst_bary.max(w.alpha().iter().zip(&alpha).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max));
    }
    let secs = start.elapsed().as_secs_f64();
    outcome(
        worst_excess <= 1e-6 && worst_feas <= 1e-9 && worst_bary <= 1e-8 && secs < 60.0,
        format!(
            "{count} instances: objective - grid(1e-3) max {worst_excess:.2e} <= 1e-6, simplex violation {worst_feas:.1e} <= 1e-9, barycentric error {worst_bary:.1e} <= 1e-8, {secs:.1} s < 60 s"
        ),
    )
}

fn manifold_machinery() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(55);
    let targets: Vec<Vec<f64>> =
        (0..200).map(|_| latent_to_indices(&sample_latent(4, &mut rng)).expect("indices").0.to_vec()).collect();
    let mean: Vec<f64> = (0..NUM_INDICES).map(|j| targets.iter().map(|t| t[j]).sum::<f64>() / 200.0).collect();
    let centered = DMatrix::from_fn(200, NUM_INDICES, |i, j| targets[i][j] - mean[j]);
    let sv = centered.singular_values();
    let top = sv.max();
    let significant = sv.iter().filter(|&&s| s > 1e-8 * top).count();

    let table = ReconstructionTable::precompute(&targets, 5).expect("reconstructions");
    let dist = |a: &[f64], b: &[f64]| a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt();
    let recon = targets.iter().zip(&table.y_tilde).map(|(y, t)| dist(y, t)).sum::<f64>() / 200.0;
    let nn = (0..200)
        .map(|i| (0..200).filter(|&j| j != i).map(|j| dist(&targets[i], &targets[j])).fold(f64::INFINITY, f64::min))
        .sum::<f64>()
        / 200.0;
    outcome(
        significant <= 5 && recon < nn,
        format!("{significant} singular values above 1e-8 of the largest (want <= 5); mean |y - y~| {recon:.4} < mean nearest-neighbour distance {nn:.4}"),
    )
}

fn directional_ablation(dir: &Path) -> Outcome {
    let start = Instant::now();
    let data = dir.join("data");
    if let Err(e) = generate_dataset(&data, 200, &PhantomSpec::for_image(128, 64), 0, 0.8) {
        return outcome(false, format!("dataset generation failed: {e}"));
    }
    let base = ExperimentConfig { dataset: data, output: dir.join("ablation"), ..Default::default() };
    let report = match run_ablation(&base, &[0, 1, 2], TrainOptions::default()) {
        Ok(r) => r,
        Err(e) => return outcome(false, format!("ablation failed: {e}")),
    };
    let secs = start.elapsed().as_secs_f64();
    print!("{}", report.render().lines().map(|l| format!("    {l}\n")).collect::<String>());
    let findings = report.findings();
    let all = findings.iter().all(|f| f.holds);
    let summary: Vec<String> = findings.iter().map(|f| format!("{}: {}", f.claim, if f.holds { "holds" } else { "does not hold" })).collect();
    outcome(all && secs < 3600.0, format!("{}; {:.1} min < 60 min", summary.join("; "), secs / 60.0))
}

/// Bright/dark run lengths along the three sampled columns, in millimetres.
fn threshold_scan(img: &[f32], spec: &PhantomSpec) -> Option<[f64; NUM_INDICES]> {
    let (h, w) = spec.image_hw;
    let thr = 0.5 * (INTENSITY_DISC + INTENSITY_BONE);
    let mut out = [0.0; NUM_INDICES];
    for (c, &x) in spec.sample_columns().iter().enumerate() {
        let mut runs: Vec<(bool, usize)> = Vec::new();
        for r in 0..h {
            let bright = f64::from(img[r * w + x]) > thr;
            match runs.last_mut() {
                Some((b, n)) if *b == bright => *n += 1,
                _ => runs.push((bright, 1)),
            }
        }
        if runs.len() < 2 + 2 * NUM_LEVELS || runs[0].0 {
            return None;
        }
        for l in 0..NUM_LEVELS {
            out[vbh_slot(l, c)] = runs[1 + 2 * l].1 as f64 * spec.pixel_spacing;
            out[idh_slot(l, c)] = runs[2 + 2 * l].1 as f64 * spec.pixel_spacing;
        }
    }
    Some(out)
}

fn phantom_recoverability() -> Outcome {
    let spec = PhantomSpec::full_scale().clean();
    let mut rng = ChaCha8Rng::seed_from_u64(77);
    let mut worst = 0.0f64;
    for s in 0..50 {
        let y = latent_to_indices(&sample_latent(4, &mut rng)).expect("indices");
        let img = render_phantom(&y, &spec, s).expect("render");
        match threshold_scan(img.data(), &spec) {
            Some(rec) => worst = worst.max(rec.iter().zip(&y.0).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max)),
            None => return outcome(false, format!("phantom {s}: unexpected run structure")),
        }
    }
    outcome(
        worst <= REFERENCE_SPACING,
        format!("50 noise-free 512x256 phantoms, worst height error {worst:.4} mm <= {REFERENCE_SPACING} mm"),
    )
}

fn reproducibility(dir: &Path) -> Outcome {
    let data = dir.join("data");
    let spec = PhantomSpec::for_image(128, 64);
    let manifest = generate_dataset(&data, 20, &spec, 9, 0.8).expect("generate");
    let again = dir.join("data_again");
    generate_dataset(&again, 20, &spec, 9, 0.8).expect("generate");
    let same_files = ["manifest.json", "targets.csv"]
        .iter()
        .map(|f| f.to_string())
        .chain(manifest.samples.iter().map(|s| s.file.clone()))
        .all(|f| std::fs::read(data.join(&f)).ok() == std::fs::read(again.join(&f)).ok());

    let loaded = read_dataset(&data).expect("read");
    let images_lossless = loaded.manifest.samples.iter().zip(&loaded.images).all(|(s, img)| {
        let bytes: Vec<u8> = img.data().iter().flat_map(|v| v.to_le_bytes()).collect();
        std::fs::read(data.join(&s.file)).ok() == Some(bytes)
    });
    let rewritten = dir.join("data_rewritten");
    std::fs::create_dir_all(&rewritten).expect("mkdir");
    write_manifest(&rewritten, &loaded.manifest).expect("write manifest");
    let manifest_lossless = ["manifest.json", "targets.csv"]
        .iter()
        .all(|f| std::fs::read(data.join(f)).ok() == std::fs::read(rewritten.join(f)).ok())
        && loaded.manifest == manifest;

    let run = |name: &str| {
        let cfg = ExperimentConfig { dataset: data.clone(), output: dir.join(name), epochs: 2, ..Default::default() };
        train(&cfg, TrainOptions::default()).expect("train");
        std::fs::read(dir.join(name).join(METRICS_FILE)).expect("metrics")
    };
    let metrics_equal = run("run_a") == run("run_b");

    let ckpt = dir.join("run_a").join(MODEL_FILE);
    let model = Model::<f32>::load(&ckpt).expect("load");
    let resaved = dir.join("resaved.ckpt");
    model.save(&resaved).expect("save");
    let ckpt_lossless = std::fs::read(&ckpt).ok() == std::fs::read(&resaved).ok()
        && Model::<f32>::load(&resaved).map(|m| m == model).unwrap_or(false);

    outcome(
        same_files && images_lossless && manifest_lossless && metrics_equal && ckpt_lossless,
        format!(
            "metrics.csv identical across runs: {metrics_equal}; dataset regenerated bitwise: {same_files}; images read back bitwise: {images_lossless}; manifest rewrite bitwise: {manifest_lossless}; checkpoint reload/resave bitwise: {ckpt_lossless}"
        ),
    )
}

fn main() {
    let only = std::env::var("CARN_ACCEPTANCE_ONLY").ok();
    let tmp = tempfile::tempdir().expect("tempdir");
    let ablation_dir = tmp.path().join("ablation");
    let repro_dir = tmp.path().join("repro");
    let checks: Vec<(&str, Check)> = vec![
        ("gradient integrity", Box::new(gradient_integrity)),
        ("amplification mechanism", Box::new(amplification_mechanism)),
        ("architecture arithmetic", Box::new(architecture_arithmetic)),
        ("LAE oracle equivalence", Box::new(lae_equivalence)),
        ("manifold machinery", Box::new(manifold_machinery)),
        ("directional ablation", Box::new(move || directional_ablation(&ablation_dir))),
        ("phantom recoverability", Box::new(phantom_recoverability)),
        ("reproducibility", Box::new(move || reproducibility(&repro_dir))),
    ];
    let mut failures = 0;
    for (name, check) in &checks {
        if only.as_deref().is_some_and(|o| !o.split(',').any(|p| name.contains(p))) {
            continue;
        }
        let o = check();
        println!("{} {name}: {}", if o.pass { "PASS" } else { "FAIL" }, o.detail);
        failures += usize::from(!o.pass);
    }
    if failures > 0 {
        println!("{failures} acceptance check(s) failed");
        std::process::exit(1);
    }
}
