//! Local anchor embedding in label space.
//!
//! A target `y` is represented by its `k` nearest neighbouring targets as
//! `ỹ = Σ α_j y_j` with `α` on the probability simplex, where `α` minimizes
//! `½‖y − Σ α_j y_j‖²`. The minimization is an accelerated projected
//! gradient method with exact Euclidean projection onto the simplex.

use crate::error::{Error, Result};

/// Reconstruction coefficients: non-negative, summing to one.
#[derive(Clone, Debug, PartialEq)]
pub struct SimplexWeights(Vec<f64>);

impl SimplexWeights {
    pub fn alpha(&self) -> &[f64] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn one_hot(k: usize, j: usize) -> Self {
        let mut a = vec![0.0; k];
        a[j] = 1.0;
        Self(a)
    }

    /// Wraps coefficients that are already feasible up to rounding.
    pub fn from_feasible(alpha: Vec<f64>) -> Result<Self> {
        let sum: f64 = alpha.iter().sum();
        if alpha.is_empty() || alpha.iter().any(|&a| a.is_nan() || a < -1e-12) || (sum - 1.0).abs() > 1e-9 {
            return Err(Error::Invalid(format!("coefficients {alpha:?} are not on the simplex")));
        }
        Ok(Self(alpha.into_iter().map(|a| a.max(0.0)).collect()))
    }
}

/// The `k` nearest targets of a query, nearest first.
#[derive(Clone, Debug, PartialEq)]
pub struct NeighborSet {
    pub indices: Vec<usize>,
    pub distances: Vec<f64>,
}

fn squared_distance(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// Exhaustive k-NN in label space, excluding the query itself. Ties in
/// distance are broken by ascending index.
pub fn knn_targets<V: AsRef<[f64]>>(targets: &[V], query: usize, k: usize) -> Result<NeighborSet> {
    let n = targets.len();
    if query >= n {
        return Err(Error::Invalid(format!("query index {query} out of range for {n} targets")));
    }
    if k == 0 || k >= n {
        return Err(Error::Invalid(format!("k = {k} must satisfy 1 <= k < N = {n}")));
    }
    let q = targets[query].as_ref();
    let d = q.len();
    let mut cands: Vec<(f64, usize)> = Vec::with_capacity(n - 1);
    for (i, t) in targets.iter().enumerate() {
        if i == query {
            continue;
        }
        let t = t.as_ref();
        if t.len() != d {
            return Err(Error::Invalid(format!("target {i} has dimension {}, expected {d}", t.len())));
        }
        cands.push((squared_distance(q, t), i));
    }
    cands.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
    cands.truncate(k);
    Ok(NeighborSet {
        indices: cands.iter().map(|c| c.1).collect(),
        distances: cands.iter().map(|c| c.0.sqrt()).collect(),
    })
}

/// Euclidean projection onto `{α : α ≥ 0, Σα = 1}` by sorting and
/// thresholding.
pub fn project_simplex(v: &[f64]) -> SimplexWeights {
    assert!(!v.is_empty(), "projection onto an empty simplex");
    let mut u = v.to_vec();
    u.sort_by(|a, b| b.total_cmp(a));
    let mut cumsum = 0.0;
    let mut theta = 0.0;
    for (j, &uj) in u.iter().enumerate() {
        cumsum += uj;
        let t = (cumsum - 1.0) / (j + 1) as f64;
        if uj - t > 0.0 {
            theta = t;
        }
    }
    let mut alpha: Vec<f64> = v.iter().map(|&x| (x - theta).max(0.0)).collect();
    // renormalize away rounding drift so the sum is one to machine precision
    let s: f64 = alpha.iter().sum();
    if s > 0.0 {
        alpha.iter_mut().for_each(|a| *a /= s);
    } else {
        let k = alpha.len() as f64;
        alpha.iter_mut().for_each(|a| *a = 1.0 / k);
    }
    SimplexWeights(alpha)
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LaeOptions {
    pub power_iterations: usize,
    pub max_iterations: usize,
    /// Stop once an accepted step lowers the objective by less than this.
    pub tolerance: f64,
}

impl Default for LaeOptions {
    fn default() -> Self {
        Self { power_iterations: 50, max_iterations: 500, tolerance: 1e-10 }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct LaeSolution {
    pub weights: SimplexWeights,
    pub objective: f64,
    pub iterations: usize,
    /// Best objective after each iteration (non-increasing).
    pub best_history: Vec<f64>,
}

/// `½‖y − Σ α_j b_j‖²`.
pub fn objective<V: AsRef<[f64]>>(y: &[f64], basis: &[V], alpha: &[f64]) -> f64 {
    let r = reconstruct(basis, alpha);
    0.5 * squared_distance(y, &r)
}

/// `Σ α_j b_j`.
pub fn reconstruct<V: AsRef<[f64]>>(basis: &[V], alpha: &[f64]) -> Vec<f64> {
    let d = basis.first().map(|b| b.as_ref().len()).unwrap_or(0);
    let mut out = vec![0.0; d];
    for (b, &a) in basis.iter().zip(alpha) {
        for (o, &v) in out.iter_mut().zip(b.as_ref()) {
            *o += a * v;
        }
    }
    out
}

fn quad(gram: &[f64], k: usize, a: &[f64]) -> f64 {
    let mut s = 0.0;
    for i in 0..k {
        let row: f64 = (0..k).map(|j| gram[i * k + j] * a[j]).sum();
        s += a[i] * row;
    }
    0.5 * s
}

fn largest_eigenvalue(gram: &[f64], k: usize, iterations: usize) -> f64 {
    // a non-uniform start avoids being orthogonal to the top eigenvector
    // in the symmetric cases (e.g. two mirrored offsets)
    let mut v: Vec<f64> = (0..k).map(|i| 1.0 + i as f64 / k as f64).collect();
    let n0 = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    v.iter_mut().for_each(|x| *x /= n0);
    let mut lambda = 0.0;
    for _ in 0..iterations {
        let w: Vec<f64> = (0..k).map(|i| (0..k).map(|j| gram[i * k + j] * v[j]).sum()).collect();
        let norm = w.iter().map(|x| x * x).sum::<f64>().sqrt();
        if norm == 0.0 {
            return 0.0;
        }
        lambda = v.iter().zip(&w).map(|(a, b)| a * b).sum();
        v = w.into_iter().map(|x| x / norm).collect();
    }
    lambda
}

/// Solves the least-squares problem restricted to the affine hull of the
/// support of `alpha` exactly, by modified Gram-Schmidt QR
/// with one reorthogonalization pass. Returns `None` when the support is
/// rank deficient or the exact solution leaves the simplex.
fn polish_on_support(offsets: &[Vec<f64>], alpha: &[f64]) -> Option<Vec<f64>> {
    let support: Vec<usize> = (0..alpha.len()).filter(|&j| alpha[j] > 0.0).collect();
    let (&last, free) = support.split_last()?;
    if free.is_empty() {
        return None;
    }
    let d = offsets[last].len();
    if free.len() > d {
        return None;
    }
    let r = free.len();
    let mut q: Vec<Vec<f64>> = Vec::with_capacity(r);
    let mut rmat = vec![0.0; r * r];
    let scale = free
        .iter()
        .map(|&j| squared_distance(&offsets[j], &offsets[last]).sqrt())
        .fold(0.0, f64::max);
    for (c, &j) in free.iter().enumerate() {
        let mut v: Vec<f64> = offsets[j].iter().zip(&offsets[last]).map(|(a, b)| a - b).collect();
        for _pass in 0..2 {
            for (i, qi) in q.iter().enumerate() {
                let proj: f64 = qi.iter().zip(&v).map(|(a, b)| a * b).sum();
                rmat[i * r + c] += proj;
                v.iter_mut().zip(qi).for_each(|(x, qv)| *x -= proj * qv);
            }
        }
        let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if norm <= 1e-10 * scale || norm == 0.0 {
            return None;
        }
        rmat[c * r + c] = norm;
        q.push(v.into_iter().map(|x| x / norm).collect());
    }
    // minimize ‖o_last + Σ β_c (o_c − o_last)‖  =>  R β = −Qᵀ o_last
    let mut beta: Vec<f64> = q.iter().map(|qi| -qi.iter().zip(&offsets[last]).map(|(a, b)| a * b).sum::<f64>()).collect();
    for i in (0..r).rev() {
        let tail: f64 = (i + 1..r).map(|j| rmat[i * r + j] * beta[j]).sum();
        beta[i] = (beta[i] - tail) / rmat[i * r + i];
    }
    let mut out = vec![0.0; alpha.len()];
    for (c, &j) in free.iter().enumerate() {
        out[j] = beta[c];
    }
    out[last] = 1.0 - beta.iter().sum::<f64>();
    if out.iter().any(|&a| a.is_nan() || a < 0.0) {
        return None;
    }
    Some(out)
}

pub fn lae_solve<V: AsRef<[f64]>>(y: &[f64], basis: &[V]) -> Result<SimplexWeights> {
    Ok(lae_solve_with(y, basis, &LaeOptions::default())?.weights)
}

/// Simplex-constrained least squares `min ½‖y − Bᵀα‖²`.
///
/// On the simplex `Bᵀα − y = Σ α_j (b_j − y)`, so the solver works with the
/// Gram matrix of the offsets `b_j − y`. This drops the large common-mode
/// eigenvalue of `BBᵀ` and keeps the step size `1/L` well scaled. Iteration
/// starts at the closest basis vector, uses Nesterov momentum with a
/// function-value restart, and keeps the best iterate seen. Once the
/// support has settled, the problem restricted to it is solved exactly.
pub fn lae_solve_with<V: AsRef<[f64]>>(y: &[f64], basis: &[V], opts: &LaeOptions) -> Result<LaeSolution> {
    let k = basis.len();
    if k == 0 {
        return Err(Error::Invalid("lae_solve needs at least one neighbour".into()));
    }
    let d = y.len();
    let offsets: Vec<Vec<f64>> = basis
        .iter()
        .enumerate()
        .map(|(j, b)| {
            let b = b.as_ref();
            if b.len() != d {
                return Err(Error::Invalid(format!("neighbour {j} has dimension {}, expected {d}", b.len())));
            }
            Ok(b.iter().zip(y).map(|(p, q)| p - q).collect())
        })
        .collect::<Result<_>>()?;
    let mut gram = vec![0.0; k * k];
    for i in 0..k {
        for j in i..k {
            let g: f64 = offsets[i].iter().zip(&offsets[j]).map(|(a, b)| a * b).sum();
            gram[i * k + j] = g;
            gram[j * k + i] = g;
        }
    }
    let nearest = (0..k).min_by(|&a, &b| gram[a * k + a].total_cmp(&gram[b * k + b])).expect("k >= 1");
    let mut x = SimplexWeights::one_hot(k, nearest).0;
    let mut fx = quad(&gram, k, &x);
    let mut best = (x.clone(), fx);
    let mut history = Vec::new();
    let trace: f64 = (0..k).map(|i| gram[i * k + i]).sum();
    let lipschitz = match largest_eigenvalue(&gram, k, opts.power_iterations) {
        l if l > 1e-12 * trace => l,
        _ => trace,
    };
    let mut iterations = 0;
    if lipschitz > 0.0 && fx > 0.0 {
        let mut z = x.clone();
        let mut t = 1.0f64;
        while iterations < opts.max_iterations {
            iterations += 1;
            let step: Vec<f64> = (0..k)
                .map(|i| z[i] - (0..k).map(|j| gram[i * k + j] * z[j]).sum::<f64>() / lipschitz)
                .collect();
            let next = project_simplex(&step).0;
            let f_next = quad(&gram, k, &next);
            if f_next > fx {
                // momentum overshoot: restart from the last accepted iterate
                t = 1.0;
                z = x.clone();
                history.push(best.1);
                continue;
            }
            let decrease = fx - f_next;
            let t_next = 0.5 * (1.0 + (1.0 + 4.0 * t * t).sqrt());
            let beta = (t - 1.0) / t_next;
            z = next.iter().zip(&x).map(|(n, p)| n + beta * (n - p)).collect();
            x = next;
            fx = f_next;
            t = t_next;
            if fx < best.1 {
                best = (x.clone(), fx);
            }
            history.push(best.1);
            if decrease < opts.tolerance {
                break;
            }
        }
    }
    let mut alpha = best.0;
    let mut value = objective(y, basis, &alpha);
    if let Some(polished) = polish_on_support(&offsets, &alpha) {
        let v = objective(y, basis, &polished);
        if v <= value {
            alpha = polished;
            value = v;
            if let Some(last) = history.last_mut() {
                *last = last.min(quad(&gram, k, &alpha));
            }
        }
    }
    Ok(LaeSolution {
        objective: value,
        weights: SimplexWeights(alpha),
        iterations,
        best_history: history,
    })
}
