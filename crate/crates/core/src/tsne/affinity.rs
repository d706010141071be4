use crate::error::{Error, Result};
use crate::nn::{squared_distance, Matrix};

/// Relative tolerance on the achieved per-row perplexity.
pub const PERPLEXITY_TOLERANCE: f64 = 1e-3;
/// Bisection steps over `ln σ`.
pub const SIGMA_SEARCH_STEPS: usize = 50;
pub const SIGMA_MIN: f64 = 1e-20;
pub const SIGMA_MAX: f64 = 1e20;

/// An `n × n` joint affinity distribution over ordered pairs `i ≠ j`:
/// zero diagonal, non-negative, symmetric, total mass one.
#[derive(Debug, Clone, PartialEq)]
pub struct AffinityMatrix(Matrix);

impl AffinityMatrix {
    pub fn n(&self) -> usize {
        self.0.rows()
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.0.get(i, j)
    }

    pub fn as_matrix(&self) -> &Matrix {
        &self.0
    }

    pub fn total(&self) -> f64 {
        self.0.as_slice().iter().sum()
    }
}

/// Row-conditional affinities `p_{j|i}` plus the bandwidth chosen per row.
#[derive(Debug, Clone)]
pub struct Conditionals {
    pub rows: Matrix,
    pub sigmas: Vec<f64>,
    /// Rows whose target perplexity could not be met; the closest achievable
    /// bandwidth was kept. Always empty from the strict entry point.
    pub missed_rows: Vec<usize>,
}

/// Pairwise squared Euclidean distances.
pub fn squared_distances(points: &Matrix) -> Matrix {
    let n = points.rows();
    let mut d = Matrix::zeros(n, n);
    for i in 0..n {
        for j in (i + 1)..n {
            let v = squared_distance(points.row(i), points.row(j));
            d.set(i, j, v);
            d.set(j, i, v);
        }
    }
    d
}

/// Fills `out` with the Gaussian row for bandwidth `sigma` and returns the
/// row's perplexity `2^H` (H in bits). Distances are shifted by their
/// minimum before exponentiation; the normalized row is unchanged by it.
fn gaussian_row(dist: &[f64], i: usize, min_dist: f64, sigma: f64, out: &mut [f64]) -> f64 {
    let inv = 1.0 / (2.0 * sigma * sigma);
    let mut sum = 0.0;
    for (j, (o, &d)) in out.iter_mut().zip(dist).enumerate() {
        *o = if j == i { 0.0 } else { (-(d - min_dist) * inv).exp() };
        sum += *o;
    }
    let mut entropy = 0.0;
    for o in out.iter_mut() {
        *o /= sum;
        if *o > 0.0 {
            entropy -= *o * o.log2();
        }
    }
    entropy.exp2()
}

/// Conditional affinities with each row's bandwidth found by bisection on
/// `ln σ` in `[SIGMA_MIN, SIGMA_MAX]`. Errors when a row cannot reach the
/// target perplexity.
pub fn conditional_affinities(points: &Matrix, perplexity: f64) -> Result<Conditionals> {
    let c = search_bandwidths(points, perplexity, true)?;
    debug_assert!(c.missed_rows.is_empty());
    Ok(c)
}

/// As [`conditional_affinities`], but rows whose target is unreachable (for
/// example many exact duplicates) keep the closest achievable bandwidth and
/// are listed in `missed_rows`.
pub fn conditional_affinities_lenient(points: &Matrix, perplexity: f64) -> Result<Conditionals> {
    search_bandwidths(points, perplexity, false)
}

fn search_bandwidths(points: &Matrix, perplexity: f64, strict: bool) -> Result<Conditionals> {
    let n = points.rows();
    if n < 2 {
        return Err(Error::InvalidArgument("need at least 2 points".into()));
    }
    if !(perplexity > 1.0 && perplexity < n as f64) {
        return Err(Error::InvalidArgument(format!(
            "perplexity {perplexity} must lie in (1, {n})"
        )));
    }
    let dist = squared_distances(points);
    let mut rows = Matrix::zeros(n, n);
    let mut sigmas = vec![0.0; n];
    let mut missed_rows = Vec::new();
    let (ln_lo, ln_hi) = (SIGMA_MIN.ln(), SIGMA_MAX.ln());
    let within = |p: f64| ((p - perplexity) / perplexity).abs() < PERPLEXITY_TOLERANCE;
    for i in 0..n {
        let d = dist.row(i);
        let min_dist = d
            .iter()
            .enumerate()
            .filter(|&(j, _)| j != i)
            .map(|(_, &v)| v)
            .fold(f64::INFINITY, f64::min);
        let out = rows.row_mut(i);
        let p_lo = gaussian_row(d, i, min_dist, SIGMA_MIN, out);
        let p_hi = gaussian_row(d, i, min_dist, SIGMA_MAX, out);
        if p_hi - p_lo <= f64::EPSILON * p_hi {
            // every neighbor equidistant: the row is uniform for any bandwidth
            sigmas[i] = 1.0;
            gaussian_row(d, i, min_dist, 1.0, out);
            continue;
        }
        if perplexity < p_lo || perplexity > p_hi {
            if strict && !(within(p_lo) || within(p_hi)) {
                return Err(Error::PerplexityUnreachable {
                    row: i,
                    target: perplexity,
                    lo: p_lo,
                    hi: p_hi,
                });
            }
            let sigma = if perplexity < p_lo { SIGMA_MIN } else { SIGMA_MAX };
            gaussian_row(d, i, min_dist, sigma, out);
            sigmas[i] = sigma;
            if !(within(p_lo) || within(p_hi)) {
                missed_rows.push(i);
            }
            continue;
        }
        let (mut lo, mut hi) = (ln_lo, ln_hi);
        let mut found = None;
        for _ in 0..SIGMA_SEARCH_STEPS {
            let mid = 0.5 * (lo + hi);
            let p = gaussian_row(d, i, min_dist, mid.exp(), out);
            if within(p) {
                found = Some(mid.exp());
                break;
            }
            if p > perplexity {
                hi = mid;
            } else {
                lo = mid;
            }
        }
        match found {
            Some(sigma) => sigmas[i] = sigma,
            None if strict => {
                return Err(Error::PerplexityUnreachable {
                    row: i,
                    target: perplexity,
                    lo: p_lo,
                    hi: p_hi,
                })
            }
            None => {
                sigmas[i] = (0.5 * (lo + hi)).exp();
                gaussian_row(d, i, min_dist, sigmas[i], out);
                missed_rows.push(i);
            }
        }
    }
    Ok(Conditionals {
        rows,
        sigmas,
        missed_rows,
    })
}

/// Perplexity `2^H` of a probability row, H in bits.
pub fn row_perplexity(row: &[f64]) -> f64 {
    let h: f64 = row
        .iter()
        .filter(|&&p| p > 0.0)
        .map(|&p| -p * p.log2())
        .sum();
    h.exp2()
}

/// `p_ij = (p_{i|j} + p_{j|i}) / 2n`. Summed over ordered pairs `i ≠ j`
/// this has total mass one, the same index set `low_dim_affinities`
/// normalizes over.
pub fn symmetrize(conditionals: &Matrix) -> Result<AffinityMatrix> {
    let n = conditionals.rows();
    if conditionals.cols() != n {
        return Err(Error::shape("symmetrize", "square matrix", format!("{n}x{}", conditionals.cols())));
    }
    let denom = 2.0 * n as f64;
    let mut p = Matrix::zeros(n, n);
    for i in 0..n {
        for j in (i + 1)..n {
            let v = (conditionals.get(i, j) + conditionals.get(j, i)) / denom;
            p.set(i, j, v);
            p.set(j, i, v);
        }
    }
    Ok(AffinityMatrix(p))
}

/// Student-t (one degree of freedom) affinities of a layout, normalized over
/// all ordered pairs `s ≠ t`.
pub fn low_dim_affinities(layout: &Matrix) -> Result<AffinityMatrix> {
    let n = layout.rows();
    if n < 2 {
        return Err(Error::InvalidArgument("need at least 2 points".into()));
    }
    let mut q = Matrix::zeros(n, n);
    let mut total = 0.0;
    for i in 0..n {
        for j in (i + 1)..n {
            let v = 1.0 / (1.0 + squared_distance(layout.row(i), layout.row(j)));
            q.set(i, j, v);
            q.set(j, i, v);
            total += 2.0 * v;
        }
    }
    q.map_inplace(|v| v / total);
    Ok(AffinityMatrix(q))
}

/// `Σ_ij p_ij ln(p_ij / q_ij)` with `0 · ln(0/q) = 0`.
pub fn kl_divergence(p: &AffinityMatrix, q: &AffinityMatrix) -> Result<f64> {
    if p.n() != q.n() {
        return Err(Error::shape("kl_divergence", p.n(), q.n()));
    }
    let mut kl = 0.0;
    for (idx, (&pv, &qv)) in p.0.as_slice().iter().zip(q.0.as_slice()).enumerate() {
        if pv > 0.0 {
            if qv <= 0.0 {
                return Err(Error::InvalidArgument(format!(
                    "q is zero where p > 0 at ({}, {})",
                    idx / p.n(),
                    idx % p.n()
                )));
            }
            kl += pv * (pv / qv).ln();
        }
    }
    Ok(kl)
}

/// Analytic gradient of `KL(P || Q(layout))` with respect to every layout
/// coordinate: `4 Σ_j (p_ij − q_ij)(ℓ_i − ℓ_j)(1 + ‖ℓ_i − ℓ_j‖²)⁻¹`.
pub fn kl_gradient(p: &AffinityMatrix, layout: &Matrix) -> Result<Matrix> {
    let n = layout.rows();
    if p.n() != n {
        return Err(Error::shape("kl_gradient", p.n(), n));
    }
    let dims = layout.cols();
    let mut num = Matrix::zeros(n, n);
    let mut total = 0.0;
    for i in 0..n {
        for j in (i + 1)..n {
            let v = 1.0 / (1.0 + squared_distance(layout.row(i), layout.row(j)));
            num.set(i, j, v);
            num.set(j, i, v);
            total += 2.0 * v;
        }
    }
    let mut grad = Matrix::zeros(n, dims);
    for i in 0..n {
        for j in 0..n {
            if i == j {
                continue;
            }
            let nij = num.get(i, j);
            let f = 4.0 * (p.get(i, j) - nij / total) * nij;
            for d in 0..dims {
                let delta = layout.get(i, d) - layout.get(j, d);
                let g = grad.get(i, d) + f * delta;
                grad.set(i, d, g);
            }
        }
    }
    Ok(grad)
}
