//! Finite-sample simulation of the mixture model and comparison of the
//! resulting empirical spectra with computed densities.
//!
//! Each trial draws `N` rows. Population `k` owns a contiguous block of
//! rows, sized by largest-remainder rounding of `α_k N`, and each of its rows
//! is `Λ_k^{1/2} g` with `g` a standard circular complex Gaussian vector. The
//! eigenvalues of `N⁻¹ XᴴX` from all trials are pooled and sorted.
//!
//! Randomness comes from ChaCha8. Trial `t` uses the generator seeded with
//! `seed` on stream `t`, so trials are independent of scheduling and the
//! pooled sample is bit-reproducible for a given seed.

use std::io::{self, BufRead, Write};

use nalgebra::DMatrix;
use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};
use crate::exec::Execution;
use crate::grid::apportion;
use crate::linalg::hermitian_eigen;
use crate::models::{CMatrix, PopulationMixture};
use crate::pipeline::DensityEstimate;

/// Pooled sample-covariance eigenvalues over independent trials.
#[derive(Debug, Clone, PartialEq)]
pub struct EmpiricalSpectrum {
    /// Sorted ascending, clamped at zero.
    pub eigenvalues: Vec<f64>,
    pub m: usize,
    pub n: usize,
    pub trials: usize,
    pub seed: u64,
}

/// Sample size matching the mixture's aspect ratio, `round(M / γ)`.
pub fn natural_sample_size(mixture: &PopulationMixture) -> usize {
    (mixture.dim() as f64 / mixture.gamma()).round() as usize
}

/// Rows per population for a sample of size `n`.
pub fn row_counts(weights: &[f64], n: usize) -> Result<Vec<usize>> {
    let counts = apportion(weights, n);
    match counts.iter().position(|&c| c == 0) {
        Some(k) => Err(Error::UnsampledPopulation(k)),
        None => Ok(counts),
    }
}

pub fn sample_spectrum(mixture: &PopulationMixture, n: usize, trials: usize, seed: u64) -> Result<EmpiricalSpectrum> {
    sample_spectrum_with(mixture, n, trials, seed, Execution::default())
}

pub fn sample_spectrum_with(
    mixture: &PopulationMixture,
    n: usize,
    trials: usize,
    seed: u64,
    exec: Execution,
) -> Result<EmpiricalSpectrum> {
    let m = mixture.dim();
    if (n as f64) + 1.0 <= m as f64 / mixture.gamma() {
        return Err(Error::InvalidProblem(format!(
            "sample size N = {n} is below M/γ = {:.3}",
            m as f64 / mixture.gamma()
        )));
    }
    let counts = row_counts(mixture.weights(), n)?;
    let roots = mixture
        .populations()
        .iter()
        .map(hermitian_sqrt)
        .collect::<Result<Vec<_>>>()?;

    let per_trial = exec.map_range(trials, |t| {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(t as u64);
        trial_eigenvalues(&roots, &counts, m, n, &mut rng)
    });
    let mut eigenvalues = Vec::with_capacity(m * trials);
    for eigs in per_trial {
        eigenvalues.extend(eigs?);
    }
    eigenvalues.sort_by(f64::total_cmp);
    Ok(EmpiricalSpectrum { eigenvalues, m, n, trials, seed })
}

/// `V diag(√λ⁺) Vᴴ` from the Hermitian eigendecomposition.
fn hermitian_sqrt(a: &CMatrix) -> Result<CMatrix> {
    let (vals, vecs) = hermitian_eigen(a)?;
    let mut scaled = vecs.clone();
    for (j, v) in vals.iter().enumerate() {
        let s = v.max(0.0).sqrt();
        scaled.column_mut(j).scale_mut(s);
    }
    Ok(&scaled * vecs.adjoint())
}

fn trial_eigenvalues(roots: &[CMatrix], counts: &[usize], m: usize, n: usize, rng: &mut ChaCha8Rng) -> Result<Vec<f64>> {
    let half = std::f64::consts::FRAC_1_SQRT_2;
    let mut x = CMatrix::zeros(n, m);
    let mut row0 = 0;
    for (root, &rows) in roots.iter().zip(counts) {
        // Row-major draw so the stream layout does not depend on storage order.
        let mut g = DMatrix::<Complex64>::zeros(rows, m);
        for r in 0..rows {
            for c in 0..m {
                let re: f64 = rng.sample(StandardNormal);
                let im: f64 = rng.sample(StandardNormal);
                g[(r, c)] = Complex64::new(re * half, im * half);
            }
        }
        // Row vector (Λ^{1/2} g)ᵀ = gᵀ Λ^{1/2}ᵀ.
        let block = g * root.transpose();
        x.rows_mut(row0, rows).copy_from(&block);
        row0 += rows;
    }
    let mut y = x.adjoint() * &x;
    y /= Complex64::new(n as f64, 0.0);
    // Symmetrize away rounding so the Hermitian solver sees an exact Hermitian input.
    let y = (&y + y.adjoint()) * Complex64::new(0.5, 0.0);
    let (vals, _) = hermitian_eigen(&y)?;
    Ok(vals.into_iter().map(|v| v.max(0.0)).collect())
}

/// Kolmogorov distance between sorted samples and a distribution function.
pub fn ks_statistic(sorted: &[f64], cdf: impl Fn(f64) -> f64) -> f64 {
    let n = sorted.len() as f64;
    sorted
        .iter()
        .enumerate()
        .map(|(i, &x)| {
            let f = cdf(x);
            (f - i as f64 / n).abs().max(((i + 1) as f64 / n - f).abs())
        })
        .fold(0.0, f64::max)
}

/// Kolmogorov distance between the empirical spectrum and the estimate's
/// continuous part. When `M > N` the `(M − N)` structural zeros of every
/// trial are removed first, and both distributions are renormalized to unit
/// mass.
pub fn ks_distance(empirical: &EmpiricalSpectrum, estimate: &DensityEstimate) -> f64 {
    let zeros = empirical.m.saturating_sub(empirical.n) * empirical.trials;
    let kept = &empirical.eigenvalues[zeros.min(empirical.eigenvalues.len())..];
    let mass = estimate.mass;
    if kept.is_empty() || !(mass > 0.0) {
        return 1.0;
    }
    ks_statistic(kept, |x| estimate.cdf(x) / mass)
}

/// Writes one eigenvalue per line at full round-trip precision.
pub fn write_eigenvalues<W: Write>(mut out: W, spectrum: &EmpiricalSpectrum) -> io::Result<()> {
    for v in &spectrum.eigenvalues {
        writeln!(out, "{v:?}")?;
    }
    out.flush()
}

pub fn read_eigenvalues<R: BufRead>(input: R) -> Result<Vec<f64>> {
    let mut out = Vec::new();
    for (lineno, line) in input.lines().enumerate() {
        let line = line?;
        let t = line.trim();
        if t.is_empty() {
            continue;
        }
        let v = t
            .parse::<f64>()
            .map_err(|e| Error::Spec(format!("line {}: {e}: {t:?}", lineno + 1)))?;
        out.push(v);
    }
    Ok(out)
}
