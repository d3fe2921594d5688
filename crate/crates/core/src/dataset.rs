//! On-disk dataset: `manifest.json`, one raw little-endian `f32` image per
//! sample, and `targets.csv`.

use std::fs;
use std::path::{Path, PathBuf};

use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::phantom::{index_names, latent_to_indices, render_phantom, sample_latent, PhantomSpec};
use crate::tensor::Tensor;

pub const MANIFEST_FILE: &str = "manifest.json";
pub const TARGETS_FILE: &str = "targets.csv";
pub const MANIFEST_VERSION: u32 = 1;
pub const MIN_SAMPLES: usize = 10;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SampleEntry {
    pub file: String,
    pub target: Vec<f64>,
    pub sha256: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Split {
    pub train: Vec<usize>,
    pub test: Vec<usize>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub version: u32,
    pub n: usize,
    pub image_hw: (usize, usize),
    pub pixel_spacing: f64,
    pub dtype: String,
    pub index_names: Vec<String>,
    pub split: Split,
    pub samples: Vec<SampleEntry>,
}

impl DatasetManifest {
    fn validate(&self, path: &Path) -> Result<()> {
        let bad = |reason: String| Error::format(path, reason);
        if self.version != MANIFEST_VERSION {
            return Err(bad(format!("unsupported manifest version {}", self.version)));
        }
        if self.n == 0 {
            return Err(bad("dataset has no samples (n = 0)".into()));
        }
        if self.samples.len() != self.n {
            return Err(bad(format!("n = {} but {} samples are listed", self.n, self.samples.len())));
        }
        if self.dtype != "f32" {
            return Err(bad(format!("unsupported image dtype `{}`", self.dtype)));
        }
        let d = self.index_names.len();
        if let Some((i, s)) = self.samples.iter().enumerate().find(|(_, s)| s.target.len() != d) {
            return Err(bad(format!("sample {i} ({}) has {} targets, expected {d}", s.file, s.target.len())));
        }
        let mut seen = vec![false; self.n];
        for &i in self.split.train.iter().chain(&self.split.test) {
            if i >= self.n || std::mem::replace(&mut seen[i], true) {
                return Err(bad(format!("split index {i} is out of range or repeated")));
            }
        }
        Ok(())
    }
}

/// Images are `[1, H, W]`.
#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    pub root: PathBuf,
    pub manifest: DatasetManifest,
    pub images: Vec<Tensor<f32>>,
}

impl Dataset {
    pub fn len(&self) -> usize {
        self.images.len()
    }

    pub fn is_empty(&self) -> bool {
        self.images.is_empty()
    }

    pub fn target(&self, i: usize) -> &[f64] {
        &self.manifest.samples[i].target
    }

    pub fn targets(&self, rows: &[usize]) -> Vec<Vec<f64>> {
        rows.iter().map(|&i| self.target(i).to_vec()).collect()
    }

    pub fn image_hw(&self) -> (usize, usize) {
        self.manifest.image_hw
    }

    pub fn num_indices(&self) -> usize {
        self.manifest.index_names.len()
    }

    /// Stacks `rows` into a `[B, 1, H, W]` tensor.
    pub fn batch_images(&self, rows: &[usize]) -> Tensor<f32> {
        let (h, w) = self.image_hw();
        let mut data = Vec::with_capacity(rows.len() * h * w);
        for &r in rows {
            data.extend_from_slice(self.images[r].data());
        }
        Tensor::new(vec![rows.len(), 1, h, w], data).expect("images share one shape")
    }

    /// Stacks the targets of `rows` into a `[B, d]` tensor.
    pub fn batch_targets(&self, rows: &[usize]) -> Tensor<f32> {
        let d = self.num_indices();
        let data = rows.iter().flat_map(|&r| self.target(r).iter().map(|&v| v as f32)).collect();
        Tensor::new(vec![rows.len(), d], data).expect("targets share one length")
    }
}

fn sha256_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().map(|b| format!("{b:02x}")).collect()
}

/// Generates `n` phantoms into `dir`, which is created if missing.
///
/// Sample `i` draws its latent vector and noise from its own stream of the
/// seeded generator, so the output depends only on `(n, spec, seed)`. The
/// first `round(train_fraction · n)` samples form the training split.
pub fn generate_dataset(dir: &Path, n: usize, spec: &PhantomSpec, seed: u64, train_fraction: f64) -> Result<DatasetManifest> {
    if n < MIN_SAMPLES {
        return Err(Error::config("n", format!("need at least {MIN_SAMPLES} samples, got {n}")));
    }
    if !(0.0..1.0).contains(&train_fraction) || train_fraction == 0.0 {
        return Err(Error::config("train_fraction", "must lie strictly between 0 and 1"));
    }
    spec.validate()?;
    let n_train = ((train_fraction * n as f64).round() as usize).clamp(1, n - 1);
    let image_dir = dir.join("images");
    fs::create_dir_all(&image_dir).map_err(|e| Error::io(&image_dir, e))?;

    let mut samples = Vec::with_capacity(n);
    for i in 0..n {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(i as u64);
        let z = sample_latent(spec.latent_dim, &mut rng);
        let y = latent_to_indices(&z)?;
        let render_seed = rand::Rng::random::<u64>(&mut rng);
        let img = render_phantom(&y, spec, render_seed)?;
        let bytes: Vec<u8> = img.data().iter().flat_map(|v| v.to_le_bytes()).collect();
        let file = format!("images/sample_{i:05}.f32");
        let path = dir.join(&file);
        fs::write(&path, &bytes).map_err(|e| Error::io(&path, e))?;
        samples.push(SampleEntry { file, target: y.0.to_vec(), sha256: sha256_hex(&bytes) });
    }

    let manifest = DatasetManifest {
        version: MANIFEST_VERSION,
        n,
        image_hw: spec.image_hw,
        pixel_spacing: spec.pixel_spacing,
        dtype: "f32".into(),
        index_names: index_names(),
        split: Split { train: (0..n_train).collect(), test: (n_train..n).collect() },
        samples,
    };
    write_manifest(dir, &manifest)?;
    Ok(manifest)
}

/// Writes `manifest.json` and `targets.csv`.
pub fn write_manifest(dir: &Path, manifest: &DatasetManifest) -> Result<()> {
    let path = dir.join(MANIFEST_FILE);
    let json = serde_json::to_string_pretty(manifest).map_err(|e| Error::format(&path, e.to_string()))?;
    fs::write(&path, json).map_err(|e| Error::io(&path, e))?;

    let tpath = dir.join(TARGETS_FILE);
    let csv_err = |e: csv::Error| Error::format(&tpath, e.to_string());
    let mut w = csv::Writer::from_path(&tpath).map_err(csv_err)?;
    w.write_record(&manifest.index_names).map_err(csv_err)?;
    for s in &manifest.samples {
        w.write_record(s.target.iter().map(|v| format!("{v}"))).map_err(csv_err)?;
    }
    w.flush().map_err(|e| Error::io(&tpath, e))
}

fn read_targets_csv(path: &Path) -> Result<(Vec<String>, Vec<Vec<f64>>)> {
    let csv_err = |e: csv::Error| Error::format(path, e.to_string());
    let mut r = csv::Reader::from_path(path).map_err(csv_err)?;
    let header = r.headers().map_err(csv_err)?.iter().map(str::to_string).collect();
    let mut rows = Vec::new();
    for (i, rec) in r.records().enumerate() {
        let rec = rec.map_err(csv_err)?;
        let row = rec
            .iter()
            .map(|v| v.parse::<f64>().map_err(|e| Error::format(path, format!("row {}: `{v}`: {e}", i + 1))))
            .collect::<Result<Vec<_>>>()?;
        rows.push(row);
    }
    Ok((header, rows))
}

/// Loads a dataset, verifying every image's size and checksum and the
/// agreement of `targets.csv` with the manifest.
pub fn read_dataset(dir: &Path) -> Result<Dataset> {
    let mpath = dir.join(MANIFEST_FILE);
    let text = fs::read_to_string(&mpath).map_err(|e| Error::io(&mpath, e))?;
    let manifest: DatasetManifest = serde_json::from_str(&text).map_err(|e| Error::format(&mpath, e.to_string()))?;
    manifest.validate(&mpath)?;

    let tpath = dir.join(TARGETS_FILE);
    if tpath.exists() {
        let (header, rows) = read_targets_csv(&tpath)?;
        if header != manifest.index_names {
            return Err(Error::format(&tpath, "header differs from the manifest's index names"));
        }
        if rows.len() != manifest.n {
            return Err(Error::format(&tpath, format!("{} rows, manifest lists {}", rows.len(), manifest.n)));
        }
        if let Some(i) = (0..manifest.n).find(|&i| rows[i] != manifest.samples[i].target) {
            return Err(Error::format(&tpath, format!("row {} disagrees with the manifest", i + 1)));
        }
    }

    let (h, w) = manifest.image_hw;
    let expected = h * w * 4;
    let mut images = Vec::with_capacity(manifest.n);
    for s in &manifest.samples {
        let path = dir.join(&s.file);
        let bytes = fs::read(&path).map_err(|e| Error::io(&path, e))?;
        if bytes.len() != expected {
            return Err(Error::format(
                &path,
                format!("image is {} bytes, {h}x{w} f32 needs {expected} (truncated or wrong shape)", bytes.len()),
            ));
        }
        let digest = sha256_hex(&bytes);
        if digest != s.sha256 {
            return Err(Error::format(&path, format!("checksum mismatch: manifest {}, file {digest}", s.sha256)));
        }
        let data = bytes.chunks_exact(4).map(|c| f32::from_le_bytes(c.try_into().expect("4"))).collect();
        images.push(Tensor::new(vec![1, h, w], data)?);
    }
    Ok(Dataset { root: dir.to_path_buf(), manifest, images })
}
