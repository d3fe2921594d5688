//! Synthetic sagittal lumbar phantoms with known disc and vertebral-body
//! heights.
//!
//! Height vectors come from a smooth map of a small latent vector, so the
//! 30 indices lie on a low-dimensional manifold. Each vector is rendered
//! as a stack of five bright vertebral bodies separated by darker discs,
//! resting on a bright sacral block.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{Error, Result};
use crate::tensor::Tensor;

pub const NUM_INDICES: usize = 30;
pub const NUM_LEVELS: usize = 5;
pub const IDH_MAX: f64 = 25.0;
pub const VBH_MAX: f64 = 40.0;
/// Lower clamp; the generator never comes close to it.
pub const HEIGHT_MIN: f64 = 1.0;
/// In-plane spacing of a 512-row image.
pub const REFERENCE_SPACING: f64 = 0.4688;
pub const REFERENCE_ROWS: usize = 512;

pub const INTENSITY_BACKGROUND: f64 = 0.1;
pub const INTENSITY_DISC: f64 = 0.3;
pub const INTENSITY_BONE: f64 = 0.7;

const VERTEBRAE: [&str; NUM_LEVELS] = ["L1", "L2", "L3", "L4", "L5"];
const DISCS: [&str; NUM_LEVELS] = ["L1L2", "L2L3", "L3L4", "L4L5", "L5S1"];
const COLUMNS: [&str; 3] = ["a", "m", "p"];

/// Names of the 30 indices: disc triples top to bottom, then vertebral-body
/// triples top to bottom.
pub fn index_names() -> Vec<String> {
    let discs = DISCS.iter().flat_map(|d| COLUMNS.iter().map(move |c| format!("IDH_{d}_{c}")));
    let bodies = VERTEBRAE.iter().flat_map(|v| COLUMNS.iter().map(move |c| format!("VBH_{v}_{c}")));
    discs.chain(bodies).collect()
}

/// Offset of disc `level`, column `col` in an index vector.
pub fn idh_slot(level: usize, col: usize) -> usize {
    3 * level + col
}

/// Offset of vertebral body `level`, column `col` in an index vector.
pub fn vbh_slot(level: usize, col: usize) -> usize {
    15 + 3 * level + col
}

/// Thirty heights in millimetres.
#[derive(Clone, Debug, PartialEq)]
pub struct IndexVector(pub [f64; NUM_INDICES]);

impl IndexVector {
    pub fn new(values: &[f64]) -> Result<Self> {
        let arr: [f64; NUM_INDICES] = values
            .try_into()
            .map_err(|_| Error::Invalid(format!("index vector needs {NUM_INDICES} entries, got {}", values.len())))?;
        let v = Self(arr);
        v.validate()?;
        Ok(v)
    }

    pub fn validate(&self) -> Result<()> {
        for (i, &h) in self.0.iter().enumerate() {
            let max = if i < 15 { IDH_MAX } else { VBH_MAX };
            if !(h.is_finite() && h > 0.0 && h <= max) {
                return Err(Error::Invalid(format!("index {} = {h} outside (0, {max}]", index_names()[i])));
            }
        }
        Ok(())
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn idh(&self, level: usize, col: usize) -> f64 {
        self.0[idh_slot(level, col)]
    }

    pub fn vbh(&self, level: usize, col: usize) -> f64 {
        self.0[vbh_slot(level, col)]
    }
}

/// Baseline anatomy at the latent origin.
pub fn baseline() -> [f64; NUM_INDICES] {
    let mut y = [0.0; NUM_INDICES];
    for l in 0..NUM_LEVELS {
        let lf = l as f64;
        // discs thicken towards the sacrum and are taller anteriorly
        y[idh_slot(l, 0)] = 10.5 + 0.4 * lf;
        y[idh_slot(l, 1)] = 9.5 + 0.3 * lf;
        y[idh_slot(l, 2)] = 7.5 + 0.2 * lf;
        y[vbh_slot(l, 0)] = 25.0 + 0.3 * lf;
        y[vbh_slot(l, 1)] = 23.5 + 0.2 * lf;
        y[vbh_slot(l, 2)] = 26.5 - 0.2 * lf;
    }
    y
}

/// Mixing matrix `[30, m + 1]` (row-major) of the latent features.
///
/// Column 0 scales the whole spine. Columns `1..m` each shrink one disc
/// together with the vertebral bodies on either side of it. The last
/// column wedges every structure anteriorly against posteriorly.
pub fn mixing_matrix(m: usize) -> Vec<f64> {
    let cols = m + 1;
    let base = baseline();
    let mut a = vec![0.0; NUM_INDICES * cols];
    for i in 0..NUM_INDICES {
        a[i * cols] = 0.07 * base[i];
    }
    for j in 1..m {
        let disc = (3 + 2 * (j - 1)) % NUM_LEVELS;
        for (c, w) in [1.4, 1.2, 1.0].into_iter().enumerate() {
            a[idh_slot(disc, c) * cols + j] = w;
            a[vbh_slot(disc, c) * cols + j] = 0.6;
            if disc + 1 < NUM_LEVELS {
                a[vbh_slot(disc + 1, c) * cols + j] = 0.5;
            }
        }
    }
    if m > 0 {
        for l in 0..NUM_LEVELS {
            a[idh_slot(l, 0) * cols + m] = 0.8;
            a[idh_slot(l, 2) * cols + m] = -0.6;
            a[vbh_slot(l, 0) * cols + m] = -0.8;
            a[vbh_slot(l, 2) * cols + m] = 0.8;
        }
    }
    a
}

/// Latent features `φ(z)`, `m + 1` of them, all zero at the origin.
pub fn latent_features(z: &[f64]) -> Vec<f64> {
    let m = z.len();
    let mut phi: Vec<f64> = z.iter().map(|&v| v.sin()).collect();
    let coupling = if m > 0 { (z[0] * z[m - 1]).sin() } else { 0.0 };
    phi.push(coupling);
    phi
}

/// Deterministic map from a latent vector to a valid index vector.
pub fn latent_to_indices(z: &[f64]) -> Result<IndexVector> {
    let m = z.len();
    if m >= NUM_INDICES {
        return Err(Error::Invalid(format!("latent dimension {m} must be below {NUM_INDICES}")));
    }
    let base = baseline();
    let a = mixing_matrix(m);
    let phi = latent_features(z);
    let mut y = [0.0; NUM_INDICES];
    for i in 0..NUM_INDICES {
        let mix: f64 = phi.iter().enumerate().map(|(j, &p)| a[i * (m + 1) + j] * p).sum();
        let max = if i < 15 { IDH_MAX } else { VBH_MAX };
        y[i] = (base[i] + mix).clamp(HEIGHT_MIN, max);
    }
    Ok(IndexVector(y))
}

/// Rendering parameters.
#[derive(Clone, Debug, PartialEq)]
pub struct PhantomSpec {
    pub latent_dim: usize,
    /// Millimetres per pixel, both axes.
    pub pixel_spacing: f64,
    pub image_hw: (usize, usize),
    pub noise_sigma: f64,
    pub ambiguity_prob: f64,
}

impl PhantomSpec {
    /// Spacing scaled so the same anatomy fills an `h`-row image as it
    /// fills 512 rows at the reference spacing.
    pub fn for_image(h: usize, w: usize) -> Self {
        Self {
            latent_dim: 4,
            pixel_spacing: REFERENCE_SPACING * REFERENCE_ROWS as f64 / h as f64,
            image_hw: (h, w),
            noise_sigma: 0.05,
            ambiguity_prob: 0.2,
        }
    }

    pub fn full_scale() -> Self {
        Self::for_image(512, 256)
    }

    pub fn clean(mut self) -> Self {
        self.noise_sigma = 0.0;
        self.ambiguity_prob = 0.0;
        self
    }

    pub fn validate(&self) -> Result<()> {
        let (h, w) = self.image_hw;
        if h < 16 || w < 16 {
            return Err(Error::config("image_hw", format!("{h}x{w} is too small to render")));
        }
        if !(self.pixel_spacing.is_finite() && self.pixel_spacing > 0.0) {
            return Err(Error::config("pixel_spacing", "must be positive"));
        }
        if self.latent_dim >= NUM_INDICES {
            return Err(Error::config("latent_dim", format!("must be below {NUM_INDICES}")));
        }
        if !(self.noise_sigma >= 0.0 && self.noise_sigma.is_finite()) {
            return Err(Error::config("noise_sigma", "must be non-negative"));
        }
        if !(0.0..=1.0).contains(&self.ambiguity_prob) {
            return Err(Error::config("ambiguity_prob", "must lie in [0, 1]"));
        }
        Ok(())
    }

    /// First image row of the stack.
    pub fn top_margin(&self) -> f64 {
        (0.05 * self.image_hw.0 as f64).round()
    }

    /// Pixel columns at which the anterior, middle and posterior heights
    /// are exact.
    pub fn sample_columns(&self) -> [usize; 3] {
        let w = self.image_hw.1;
        [w / 4, w / 2, 3 * w / 4]
    }

    /// Horizontal extent `[left, right)` of the vertebral column.
    pub fn body_columns(&self) -> (usize, usize) {
        let w = self.image_hw.1 as f64;
        ((0.15 * w).round() as usize, (0.85 * w).round() as usize)
    }
}

/// Boundary rows (in pixels, fractional) of the stack at each of the three
/// sample columns: `boundaries[c][k]` for `k = 0..=10`, where even `k`
/// begins a vertebral body and odd `k` begins a disc; `k = 10` is the top of
/// the sacrum.
pub fn boundary_rows(y: &IndexVector, spec: &PhantomSpec) -> [[f64; 11]; 3] {
    let mut out = [[0.0; 11]; 3];
    for (c, col) in out.iter_mut().enumerate() {
        let mut row = spec.top_margin();
        col[0] = row;
        for l in 0..NUM_LEVELS {
            row += y.vbh(l, c) / spec.pixel_spacing;
            col[2 * l + 1] = row;
            row += y.idh(l, c) / spec.pixel_spacing;
            col[2 * l + 2] = row;
        }
    }
    out
}

fn check_fits(y: &IndexVector, spec: &PhantomSpec) -> Result<[[f64; 11]; 3]> {
    let rows = boundary_rows(y, spec);
    let h = spec.image_hw.0 as f64;
    let floor_margin = (0.03 * h).max(2.0);
    for (c, col) in rows.iter().enumerate() {
        if col[10] > h - floor_margin {
            return Err(Error::Invalid(format!(
                "stack of column {} ends at row {:.1}, canvas has {h} rows",
                COLUMNS[c], col[10]
            )));
        }
        for k in 0..10 {
            let px = col[k + 1] - col[k];
            if px < 2.0 {
                return Err(Error::Invalid(format!(
                    "structure {k} of column {} is {px:.2} px tall; at least 2 px are needed",
                    COLUMNS[c]
                )));
            }
        }
    }
    Ok(rows)
}

/// Boundary row at pixel column `x`, interpolated linearly between the
/// sample columns and held constant outside them.
fn boundary_at(rows: &[[f64; 11]; 3], cols: [usize; 3], k: usize, x: usize) -> f64 {
    let x = x as f64;
    let [a, m, p] = cols.map(|c| c as f64);
    if x <= a {
        rows[0][k]
    } else if x <= m {
        rows[0][k] + (rows[1][k] - rows[0][k]) * (x - a) / (m - a)
    } else if x <= p {
        rows[1][k] + (rows[2][k] - rows[1][k]) * (x - m) / (p - m)
    } else {
        rows[2][k]
    }
}

/// Intensity of band `k` (0 = the disc above L1, then VB1, disc 1, ... ,
/// disc 5, sacrum).
fn band_intensity(k: usize) -> f64 {
    match k {
        11 => INTENSITY_BONE,
        k if k % 2 == 1 => INTENSITY_BONE,
        _ => INTENSITY_DISC,
    }
}

/// Renders `y` as a `[1, H, W]` image with values in `[0, 1]`.
pub fn render_phantom(y: &IndexVector, spec: &PhantomSpec, seed: u64) -> Result<Tensor<f32>> {
    spec.validate()?;
    y.validate()?;
    let rows = check_fits(y, spec)?;
    let (h, w) = spec.image_hw;
    let cols = spec.sample_columns();
    let (left, right) = spec.body_columns();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut img = vec![INTENSITY_BACKGROUND; h * w];

    for x in left..right {
        let edges: Vec<f64> = (0..11).map(|k| boundary_at(&rows, cols, k, x)).collect();
        for r in 0..h {
            // exact area coverage of pixel [r, r+1) by each band
            let (lo, hi) = (r as f64, r as f64 + 1.0);
            let mut v = 0.0;
            for band in 0..12 {
                let top = if band == 0 { f64::NEG_INFINITY } else { edges[band - 1] };
                let bottom = if band == 11 { f64::INFINITY } else { edges[band] };
                let overlap = hi.min(bottom) - lo.max(top);
                if overlap > 0.0 {
                    v += overlap * band_intensity(band);
                }
            }
            img[r * w + x] = v;
        }
    }

    if spec.ambiguity_prob > 0.0 && rng.random::<f64>() < spec.ambiguity_prob {
        let k = rng.random_range(1..10);
        blur_boundary(&mut img, h, w, left, right, |x| boundary_at(&rows, cols, k, x));
    }

    if spec.noise_sigma > 0.0 {
        let normal = Normal::new(0.0, spec.noise_sigma).map_err(|e| Error::config("noise_sigma", e.to_string()))?;
        for v in &mut img {
            *v += normal.sample(&mut rng);
        }
    }

    Ok(Tensor::new(vec![1, h, w], img.into_iter().map(|v| v.clamp(0.0, 1.0) as f32).collect())?)
}

/// Smears the rows around one boundary with a vertical Gaussian
/// (sigma 1.5 px), making the transition ambiguous.
fn blur_boundary(img: &mut [f64], h: usize, w: usize, left: usize, right: usize, edge: impl Fn(usize) -> f64) {
    const RADIUS: isize = 4;
    let kernel: Vec<f64> = (-RADIUS..=RADIUS).map(|d| (-(d * d) as f64 / (2.0 * 1.5 * 1.5)).exp()).collect();
    let norm: f64 = kernel.iter().sum();
    for x in left..right {
        let centre = edge(x).round() as isize;
        let column: Vec<f64> = (0..h).map(|r| img[r * w + x]).collect();
        for r in (centre - RADIUS).max(0)..(centre + RADIUS + 1).min(h as isize) {
            let mut acc = 0.0;
            for (i, kv) in kernel.iter().enumerate() {
                let rr = (r + i as isize - RADIUS).clamp(0, h as isize - 1) as usize;
                acc += kv * column[rr];
            }
            img[r as usize * w + x] = acc / norm;
        }
    }
}

/// Draws a standard-normal latent vector.
pub fn sample_latent<R: Rng>(m: usize, rng: &mut R) -> Vec<f64> {
    let normal = Normal::new(0.0, 1.0).expect("unit normal");
    (0..m).map(|_| normal.sample(rng)).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Recovers the 30 heights by thresholding the three sample columns
    /// halfway between disc and bone intensity and counting run lengths.
    fn threshold_scan(img: &Tensor<f32>, spec: &PhantomSpec) -> Vec<f64> {
        let (h, w) = spec.image_hw;
        let thr = 0.5 * (INTENSITY_DISC + INTENSITY_BONE);
        let mut out = vec![0.0; NUM_INDICES];
        for (c, &x) in spec.sample_columns().iter().enumerate() {
            let bright: Vec<bool> = (0..h).map(|r| f64::from(img.data()[r * w + x]) > thr).collect();
            let mut runs = Vec::new();
            let mut r = 0;
            while r < h {
                let s = r;
                while r < h && bright[r] == bright[s] {
                    r += 1;
                }
                runs.push((bright[s], r - s));
            }
            // disc above L1, then VB/disc alternating, then sacrum
            assert!(!runs[0].0);
            for l in 0..NUM_LEVELS {
                out[vbh_slot(l, c)] = runs[1 + 2 * l].1 as f64 * spec.pixel_spacing;
                out[idh_slot(l, c)] = runs[2 + 2 * l].1 as f64 * spec.pixel_spacing;
            }
        }
        out
    }

    #[test]
    fn names_are_ordered_discs_then_bodies() {
        let names = index_names();
        assert_eq!(names.len(), 30);
        assert_eq!(names[0], "IDH_L1L2_a");
        assert_eq!(names[14], "IDH_L5S1_p");
        assert_eq!(names[15], "VBH_L1_a");
        assert_eq!(names[29], "VBH_L5_p");
    }

    #[test]
    fn origin_maps_to_baseline() {
        let a = latent_to_indices(&[0.0; 4]).unwrap();
        assert_eq!(a.0, baseline());
        assert_eq!(a, latent_to_indices(&[0.0; 4]).unwrap());
    }

    #[test]
    fn extreme_latents_stay_inside_bounds_without_clamping() {
        // |sin| <= 1, so the worst case is the sum of absolute mixing weights
        let m = 4;
        let a = mixing_matrix(m);
        let base = baseline();
        for i in 0..NUM_INDICES {
            let spread: f64 = (0..=m).map(|j| a[i * (m + 1) + j].abs()).sum();
            let max = if i < 15 { IDH_MAX } else { VBH_MAX };
            assert!(base[i] - spread > 5.0 && base[i] + spread < max, "index {i}");
        }
    }

    #[test]
    fn degeneration_couples_disc_and_neighbouring_bodies() {
        let mut z = [0.0; 4];
        z[1] = -1.0;
        let y = latent_to_indices(&z).unwrap();
        let base = baseline();
        for c in 0..3 {
            assert!(y.idh(3, c) < base[idh_slot(3, c)]);
            assert!(y.vbh(3, c) < base[vbh_slot(3, c)]);
            assert!(y.vbh(4, c) < base[vbh_slot(4, c)]);
            assert_eq!(y.idh(0, c), base[idh_slot(0, c)]);
        }
    }

    #[test]
    fn too_many_latents_rejected() {
        assert!(latent_to_indices(&[0.0; 30]).is_err());
    }

    #[test]
    fn clean_render_is_recovered_by_threshold_scan() {
        let spec = PhantomSpec::full_scale().clean();
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for s in 0..10 {
            let y = latent_to_indices(&sample_latent(4, &mut rng)).unwrap();
            let img = render_phantom(&y, &spec, s).unwrap();
            let rec = threshold_scan(&img, &spec);
            for (i, (r, t)) in rec.iter().zip(y.0.iter()).enumerate() {
                assert!((r - t).abs() <= spec.pixel_spacing, "index {i}: {r} vs {t}");
            }
        }
    }

    #[test]
    fn desk_scale_render_fits() {
        let spec = PhantomSpec::for_image(128, 64);
        assert!((spec.pixel_spacing - 1.8752).abs() < 1e-12);
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        for s in 0..50 {
            let y = latent_to_indices(&sample_latent(4, &mut rng)).unwrap();
            let img = render_phantom(&y, &spec, s).unwrap();
            assert_eq!(img.shape(), &[1, 128, 64]);
            assert!(img.data().iter().all(|&v| (0.0..=1.0).contains(&v)));
        }
    }

    #[test]
    fn render_is_deterministic_per_seed() {
        let spec = PhantomSpec::for_image(128, 64);
        let y = latent_to_indices(&[0.3, -0.2, 0.5, 1.0]).unwrap();
        let a = render_phantom(&y, &spec, 5).unwrap();
        assert_eq!(a, render_phantom(&y, &spec, 5).unwrap());
        assert_ne!(a, render_phantom(&y, &spec, 6).unwrap());
    }

    #[test]
    fn oversized_anatomy_rejected() {
        let spec = PhantomSpec::for_image(64, 64);
        let y = IndexVector([24.0; NUM_INDICES]);
        assert!(render_phantom(&y, &spec, 0).unwrap_err().to_string().contains("canvas"));
    }

    #[test]
    fn blurred_boundary_changes_the_image() {
        let mut spec = PhantomSpec::for_image(128, 64).clean();
        let y = latent_to_indices(&[0.0; 4]).unwrap();
        let sharp = render_phantom(&y, &spec, 1).unwrap();
        spec.ambiguity_prob = 1.0;
        let blurred = render_phantom(&y, &spec, 1).unwrap();
        assert!(sharp.max_abs_diff(&blurred) > 0.1);
    }
}
