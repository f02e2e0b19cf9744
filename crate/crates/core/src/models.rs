//! Problem definitions: population mixtures and the built-in test problems.

use nalgebra::DMatrix;
use num_complex::Complex64;

use crate::error::{Error, Result};
use crate::linalg;

pub type CMatrix = DMatrix<Complex64>;

/// Tolerances on the mixture invariants.
pub const WEIGHT_SUM_TOL: f64 = 1e-12;
pub const HERMITIAN_TOL: f64 = 1e-12;
pub const NEGATIVE_EIG_TOL: f64 = 1e-10;
pub const GAMMA_ONE_GUARD: f64 = 1e-9;

/// Diagonal mixtures collapsed onto their distinct rows.
///
/// Row `r` holds `(λ_r^1, ..., λ_r^K)` and occurs with relative frequency
/// `freq[r]` among the `M` diagonal positions.
#[derive(Debug, Clone, PartialEq)]
pub struct DiagonalProfile {
    pub rows: Vec<Vec<f64>>,
    pub freq: Vec<f64>,
}

/// `K` population covariances with mixture weights and aspect ratio.
#[derive(Debug, Clone)]
pub struct PopulationMixture {
    populations: Vec<CMatrix>,
    weights: Vec<f64>,
    gamma: f64,
    diagonal: Option<DiagonalProfile>,
    population_eigs: Vec<Vec<f64>>,
    average: CMatrix,
    average_eigs: Vec<f64>,
}

impl PopulationMixture {
    pub fn new(populations: Vec<CMatrix>, weights: Vec<f64>, gamma: f64) -> Result<Self> {
        validate_scalars(&weights, gamma)?;
        if populations.len() != weights.len() {
            return Err(Error::InvalidProblem(format!(
                "{} populations but {} weights",
                populations.len(),
                weights.len()
            )));
        }
        let dim = populations[0].nrows();
        if dim == 0 {
            return Err(Error::InvalidProblem("populations must be non-empty".into()));
        }
        for (k, pop) in populations.iter().enumerate() {
            if pop.nrows() != dim || pop.ncols() != dim {
                return Err(Error::InvalidProblem(format!(
                    "population {k} is {}x{}, expected {dim}x{dim}",
                    pop.nrows(),
                    pop.ncols()
                )));
            }
            for i in 0..dim {
                for j in 0..=i {
                    if (pop[(i, j)] - pop[(j, i)].conj()).norm() > HERMITIAN_TOL {
                        return Err(Error::InvalidProblem(format!(
                            "population {k} is not Hermitian at ({i}, {j})"
                        )));
                    }
                }
            }
        }

        let diagonal = populations
            .iter()
            .all(is_diagonal)
            .then(|| diagonal_profile(&populations));

        let mut population_eigs = Vec::with_capacity(populations.len());
        for (k, pop) in populations.iter().enumerate() {
            let eigs = if diagonal.is_some() {
                let mut d: Vec<f64> = pop.diagonal().iter().map(|c| c.re).collect();
                d.sort_by(f64::total_cmp);
                d
            } else {
                linalg::hermitian_eigenvalues(pop).map_err(|e| match e {
                    Error::Eigen { reason, .. } => Error::Eigen { population: k, reason },
                    other => other,
                })?
            };
            if let Some(&low) = eigs.first() {
                if low < -NEGATIVE_EIG_TOL {
                    return Err(Error::InvalidProblem(format!(
                        "population {k} has negative eigenvalue {low:e}"
                    )));
                }
            }
            population_eigs.push(eigs);
        }

        let average = weighted_sum(&populations, &weights);
        let mut average_eigs = if diagonal.is_some() {
            average.diagonal().iter().map(|c| c.re).collect()
        } else {
            linalg::hermitian_eigenvalues(&average).map_err(|e| match e {
                Error::Eigen { reason, .. } => Error::Eigen {
                    population: populations.len(),
                    reason,
                },
                other => other,
            })?
        };
        average_eigs.sort_by(f64::total_cmp);

        Ok(Self {
            populations,
            weights,
            gamma,
            diagonal,
            population_eigs,
            average,
            average_eigs,
        })
    }

    /// Mixture of diagonal covariances given by their diagonals.
    pub fn from_diagonals(diagonals: Vec<Vec<f64>>, weights: Vec<f64>, gamma: f64) -> Result<Self> {
        let pops = diagonals
            .into_iter()
            .map(|d| {
                let v: Vec<Complex64> = d.into_iter().map(|x| Complex64::new(x, 0.0)).collect();
                CMatrix::from_diagonal(&nalgebra::DVector::from_vec(v))
            })
            .collect();
        Self::new(pops, weights, gamma)
    }

    pub fn populations(&self) -> &[CMatrix] {
        &self.populations
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn gamma(&self) -> f64 {
        self.gamma
    }

    pub fn k(&self) -> usize {
        self.populations.len()
    }

    pub fn dim(&self) -> usize {
        self.populations[0].nrows()
    }

    pub fn is_diagonal(&self) -> bool {
        self.diagonal.is_some()
    }

    pub fn diagonal_profile(&self) -> Option<&DiagonalProfile> {
        self.diagonal.as_ref()
    }

    /// Sorted eigenvalues of population `k`.
    pub fn population_eigenvalues(&self, k: usize) -> &[f64] {
        &self.population_eigs[k]
    }

    /// `Σ_k α_k Λ_k`.
    pub fn average_covariance(&self) -> &CMatrix {
        &self.average
    }

    pub fn average_eigenvalues(&self) -> &[f64] {
        &self.average_eigs
    }

    /// Ascending pool of the eigenvalues of every population and of the
    /// average covariance, `M(K+1)` values, round-off negatives clamped to 0.
    pub fn eigenvalue_pool(&self) -> Vec<f64> {
        let mut pool: Vec<f64> = self
            .population_eigs
            .iter()
            .flatten()
            .chain(self.average_eigs.iter())
            .map(|&x| x.max(0.0))
            .collect();
        pool.sort_by(f64::total_cmp);
        pool
    }

    /// Continuous mass the limiting law should carry: the atom at zero takes
    /// whatever the rank of the average covariance and `N = M/γ` leave out.
    pub fn expected_continuous_mass(&self) -> f64 {
        let top = self.average_eigs.last().copied().unwrap_or(0.0);
        let rank = self
            .average_eigs
            .iter()
            .filter(|&&x| x > 1e-12 * top.max(f64::MIN_POSITIVE))
            .count();
        (rank as f64 / self.dim() as f64).min(1.0 / self.gamma)
    }

    /// Same covariances with every matrix multiplied by `s`.
    pub fn scaled(&self, s: f64) -> Result<Self> {
        let pops = self.populations.iter().map(|p| p * Complex64::new(s, 0.0)).collect();
        Self::new(pops, self.weights.clone(), self.gamma)
    }
}

fn validate_scalars(weights: &[f64], gamma: f64) -> Result<()> {
    if weights.is_empty() {
        return Err(Error::InvalidProblem("at least one population is required".into()));
    }
    if let Some(w) = weights.iter().find(|w| !(**w > 0.0) || !w.is_finite()) {
        return Err(Error::InvalidProblem(format!("mixture weight {w} must be positive")));
    }
    let sum: f64 = weights.iter().sum();
    if (sum - 1.0).abs() > WEIGHT_SUM_TOL {
        return Err(Error::InvalidProblem(format!("mixture weights sum to {sum}, not 1")));
    }
    if !(gamma > 0.0) || !gamma.is_finite() {
        return Err(Error::InvalidProblem(format!("gamma = {gamma} must be positive")));
    }
    if (gamma - 1.0).abs() < GAMMA_ONE_GUARD {
        return Err(Error::InvalidProblem(format!(
            "gamma = {gamma} is within {GAMMA_ONE_GUARD:e} of 1"
        )));
    }
    Ok(())
}

fn is_diagonal(m: &CMatrix) -> bool {
    let n = m.nrows();
    (0..n).all(|j| (0..n).all(|i| i == j || m[(i, j)] == Complex64::new(0.0, 0.0)))
}

fn diagonal_profile(pops: &[CMatrix]) -> DiagonalProfile {
    let dim = pops[0].nrows();
    let mut rows: Vec<Vec<f64>> = (0..dim)
        .map(|i| pops.iter().map(|p| p[(i, i)].re).collect())
        .collect();
    rows.sort_by(|a, b| {
        a.iter()
            .zip(b)
            .map(|(x, y)| x.total_cmp(y))
            .find(|o| o.is_ne())
            .unwrap_or(std::cmp::Ordering::Equal)
    });
    let mut out_rows: Vec<Vec<f64>> = Vec::new();
    let mut counts: Vec<usize> = Vec::new();
    for row in rows {
        if out_rows.last() == Some(&row) {
            *counts.last_mut().unwrap() += 1;
        } else {
            out_rows.push(row);
            counts.push(1);
        }
    }
    DiagonalProfile {
        rows: out_rows,
        freq: counts.into_iter().map(|c| c as f64 / dim as f64).collect(),
    }
}

fn weighted_sum(pops: &[CMatrix], weights: &[f64]) -> CMatrix {
    let dim = pops[0].nrows();
    let mut acc = CMatrix::zeros(dim, dim);
    for (p, &w) in pops.iter().zip(weights) {
        acc += p * Complex64::new(w, 0.0);
    }
    acc
}

/// `Σ_k α_k Λ_k`.
pub fn average_covariance(mixture: &PopulationMixture) -> CMatrix {
    mixture.average_covariance().clone()
}

/// Pooled, sorted eigenvalues of all populations and their average.
pub fn eigenvalue_pool(mixture: &PopulationMixture) -> Vec<f64> {
    mixture.eigenvalue_pool()
}

/// The built-in test problem families.
#[derive(Debug, Clone, PartialEq)]
pub enum ProblemKind {
    /// Identity covariance of dimension `m`.
    Mp { m: usize },
    /// Two point masses with multiplicity weights, dimension at least `m`.
    TwoDelta {
        lambdas: [f64; 2],
        weights: [f64; 2],
        m: usize,
    },
    /// `count` equiprobable point masses evenly spaced on `[lo, hi]`.
    Comb { count: usize, lo: f64, hi: f64, m: usize },
    /// `K` shifted periodic diagonals with entries `1..=K`.
    Diag { k: usize, m: usize },
    /// `Diag` with correlation `ρ^{|i-j|^l}` between coordinates.
    Corr { k: usize, m: usize, rho: f64, l: f64 },
}

#[derive(Debug, Clone, PartialEq)]
pub struct TestProblem {
    pub gamma: f64,
    pub kind: ProblemKind,
}

/// Upper bound on the dimension searched when realising rational weights.
pub const MAX_DISCRETE_DIM: usize = 100_000;

impl TestProblem {
    pub fn mp(gamma: f64, m: usize) -> Self {
        Self { gamma, kind: ProblemKind::Mp { m } }
    }

    pub fn two_delta(gamma: f64, lambdas: [f64; 2], weights: [f64; 2], m: usize) -> Self {
        Self { gamma, kind: ProblemKind::TwoDelta { lambdas, weights, m } }
    }

    pub fn comb(gamma: f64, count: usize, lo: f64, hi: f64, m: usize) -> Self {
        Self { gamma, kind: ProblemKind::Comb { count, lo, hi, m } }
    }

    pub fn diag(gamma: f64, k: usize, m: usize) -> Self {
        Self { gamma, kind: ProblemKind::Diag { k, m } }
    }

    pub fn corr(gamma: f64, k: usize, m: usize, rho: f64, l: f64) -> Self {
        Self { gamma, kind: ProblemKind::Corr { k, m, rho, l } }
    }

    pub fn build(&self) -> Result<PopulationMixture> {
        build_test_problem(self)
    }
}

pub fn build_test_problem(spec: &TestProblem) -> Result<PopulationMixture> {
    let gamma = spec.gamma;
    match &spec.kind {
        ProblemKind::Mp { m } => {
            require(*m >= 1, "m must be at least 1")?;
            PopulationMixture::from_diagonals(vec![vec![1.0; *m]], vec![1.0], gamma)
        }
        ProblemKind::TwoDelta { lambdas, weights, m } => {
            require(lambdas.iter().all(|&l| l > 0.0), "two-delta eigenvalues must be positive")?;
            discrete_spectrum(lambdas, weights, *m, gamma)
        }
        ProblemKind::Comb { count, lo, hi, m } => {
            require(*count >= 1, "comb needs at least one mass")?;
            require(*lo > 0.0 && hi >= lo, "comb interval must satisfy 0 < lo <= hi")?;
            let lambdas: Vec<f64> = if *count == 1 {
                vec![*lo]
            } else {
                (0..*count)
                    .map(|j| lo + (hi - lo) * j as f64 / (*count - 1) as f64)
                    .collect()
            };
            let weights = vec![1.0 / *count as f64; *count];
            discrete_spectrum(&lambdas, &weights, *m, gamma)
        }
        ProblemKind::Diag { k, m } => {
            require(*k >= 1 && *m >= 1, "k and m must be at least 1")?;
            let diags = diag_entries(*k, *m);
            PopulationMixture::from_diagonals(diags, vec![1.0 / *k as f64; *k], gamma)
        }
        ProblemKind::Corr { k, m, rho, l } => {
            require(*k >= 1 && *m >= 1, "k and m must be at least 1")?;
            require((0.0..1.0).contains(rho), "rho must lie in [0, 1)")?;
            require(*l > 0.0, "l must be positive")?;
            let pops = diag_entries(*k, *m)
                .into_iter()
                .map(|d| {
                    CMatrix::from_fn(*m, *m, |i, j| {
                        let lag = (i as f64 - j as f64).abs();
                        Complex64::new(rho.powf(lag.powf(*l)) * (d[i] * d[j]).sqrt(), 0.0)
                    })
                })
                .collect();
            PopulationMixture::new(pops, vec![1.0 / *k as f64; *k], gamma)
        }
    }
}

fn require(cond: bool, msg: &str) -> Result<()> {
    if cond {
        Ok(())
    } else {
        Err(Error::InvalidProblem(msg.into()))
    }
}

/// Diagonal entries `((m + k) mod K) + 1` with rows counted from 0 and
/// populations from 1.
fn diag_entries(k: usize, m: usize) -> Vec<Vec<f64>> {
    (1..=k)
        .map(|pop| (0..m).map(|row| (((row + pop) % k) + 1) as f64).collect())
        .collect()
}

/// Smallest dimension `M >= min_dim` at which every weight is an integer
/// multiplicity, together with those multiplicities.
pub fn realize_multiplicities(weights: &[f64], min_dim: usize) -> Result<(usize, Vec<usize>)> {
    let sum: f64 = weights.iter().sum();
    require((sum - 1.0).abs() <= 1e-9, "spectral weights must sum to 1")?;
    require(weights.iter().all(|&w| w > 0.0), "spectral weights must be positive")?;
    for dim in min_dim.max(1)..=MAX_DISCRETE_DIM {
        let counts: Vec<usize> = weights.iter().map(|w| (w * dim as f64).round() as usize).collect();
        let exact = weights
            .iter()
            .zip(&counts)
            .all(|(w, &c)| c >= 1 && (w * dim as f64 - c as f64).abs() <= 1e-9);
        if exact && counts.iter().sum::<usize>() == dim {
            return Ok((dim, counts));
        }
    }
    Err(Error::InvalidProblem(format!(
        "weights {weights:?} are not integer multiplicities for any M in [{min_dim}, {MAX_DISCRETE_DIM}]; \
         adjust m or round the weights to a common denominator"
    )))
}

fn discrete_spectrum(lambdas: &[f64], weights: &[f64], min_dim: usize, gamma: f64) -> Result<PopulationMixture> {
    require(lambdas.len() == weights.len(), "lambdas and weights differ in length")?;
    let (_, counts) = realize_multiplicities(weights, min_dim)?;
    let diag: Vec<f64> = lambdas
        .iter()
        .zip(&counts)
        .flat_map(|(&l, &c)| std::iter::repeat_n(l, c))
        .collect();
    PopulationMixture::from_diagonals(vec![diag], vec![1.0], gamma)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn diag(v: &[f64]) -> CMatrix {
        CMatrix::from_diagonal(&nalgebra::DVector::from_iterator(
            v.len(),
            v.iter().map(|&x| Complex64::new(x, 0.0)),
        ))
    }

    #[test]
    fn average_of_scaled_identities() {
        let mix = PopulationMixture::new(
            vec![diag(&[1.0, 1.0, 1.0]), diag(&[3.0, 3.0, 3.0])],
            vec![0.5, 0.5],
            0.5,
        )
        .unwrap();
        assert_eq!(average_covariance(&mix), diag(&[2.0, 2.0, 2.0]));
    }

    #[test]
    fn average_single_population_is_identity_map() {
        let a = CMatrix::from_row_slice(
            2,
            2,
            &[
                Complex64::new(2.0, 0.0),
                Complex64::new(0.5, 0.25),
                Complex64::new(0.5, -0.25),
                Complex64::new(1.0, 0.0),
            ],
        );
        let mix = PopulationMixture::new(vec![a.clone()], vec![1.0], 0.3).unwrap();
        assert_eq!(average_covariance(&mix), a);
        assert!(!mix.is_diagonal());
    }

    #[test]
    fn average_uneven_weights() {
        let mix = PopulationMixture::from_diagonals(vec![vec![1.0, 1.0], vec![1.0, 5.0]], vec![0.25, 0.75], 0.5)
            .unwrap();
        let avg = average_covariance(&mix);
        assert_abs_diff_eq!(avg[(0, 0)].re, 1.0, epsilon = 1e-15);
        assert_abs_diff_eq!(avg[(1, 1)].re, 4.0, epsilon = 1e-15);
    }

    #[test]
    fn pool_examples() {
        let mix = PopulationMixture::from_diagonals(vec![vec![1.0, 8.0]], vec![1.0], 0.5).unwrap();
        assert_eq!(eigenvalue_pool(&mix), vec![1.0, 1.0, 8.0, 8.0]);

        let mix = PopulationMixture::from_diagonals(vec![vec![1.0], vec![3.0]], vec![0.5, 0.5], 0.5).unwrap();
        assert_eq!(eigenvalue_pool(&mix), vec![1.0, 2.0, 3.0]);

        let mix =
            PopulationMixture::from_diagonals(vec![vec![1.0, 2.0], vec![2.0, 1.0]], vec![0.5, 0.5], 0.5).unwrap();
        assert_eq!(eigenvalue_pool(&mix), vec![1.0, 1.0, 1.5, 1.5, 2.0, 2.0]);
    }

    #[test]
    fn pool_dense_matches_diagonal_entries() {
        // Same spectrum through the dense path: rotate diag(1, 3) by 45 degrees.
        let s = 0.5f64;
        let a = CMatrix::from_row_slice(
            2,
            2,
            &[
                Complex64::new(2.0, 0.0),
                Complex64::new(1.0 * s * 2.0, 0.0),
                Complex64::new(1.0 * s * 2.0, 0.0),
                Complex64::new(2.0, 0.0),
            ],
        );
        let mix = PopulationMixture::new(vec![a], vec![1.0], 0.5).unwrap();
        let pool = eigenvalue_pool(&mix);
        for (got, want) in pool.iter().zip([1.0, 1.0, 3.0, 3.0]) {
            assert_abs_diff_eq!(*got, want, epsilon = 1e-12);
        }
    }

    #[test]
    fn rejects_bad_mixtures() {
        let bad_sum = PopulationMixture::from_diagonals(vec![vec![1.0], vec![2.0]], vec![0.5, 0.6], 0.5);
        assert!(matches!(bad_sum, Err(Error::InvalidProblem(_))));
        let zero_w = PopulationMixture::from_diagonals(vec![vec![1.0], vec![2.0]], vec![0.0, 1.0], 0.5);
        assert!(zero_w.is_err());
        let gamma_one = PopulationMixture::from_diagonals(vec![vec![1.0]], vec![1.0], 1.0 + 1e-10);
        assert!(gamma_one.is_err());
        assert!(PopulationMixture::from_diagonals(vec![vec![1.0]], vec![1.0], 1.0 + 2e-9).is_ok());
        let negative = PopulationMixture::from_diagonals(vec![vec![1.0, -1e-6]], vec![1.0], 0.5);
        assert!(negative.is_err());
        let roundoff = PopulationMixture::from_diagonals(vec![vec![1.0, -1e-11]], vec![1.0], 0.5).unwrap();
        assert_eq!(roundoff.eigenvalue_pool()[0], 0.0);
        let mismatch = PopulationMixture::from_diagonals(vec![vec![1.0], vec![1.0, 2.0]], vec![0.5, 0.5], 0.5);
        assert!(mismatch.is_err());
        let mut nonherm = diag(&[1.0, 1.0]);
        nonherm[(0, 1)] = Complex64::new(0.1, 0.0);
        assert!(PopulationMixture::new(vec![nonherm], vec![1.0], 0.5).is_err());
    }

    #[test]
    fn two_delta_generator() {
        let mix = TestProblem::two_delta(0.5, [1.0, 8.0], [0.5, 0.5], 100).build().unwrap();
        assert_eq!(mix.dim(), 100);
        assert_eq!(mix.k(), 1);
        let d = mix.population_eigenvalues(0);
        assert_eq!(d.iter().filter(|&&x| x == 1.0).count(), 50);
        assert_eq!(d.iter().filter(|&&x| x == 8.0).count(), 50);
    }

    #[test]
    fn multiplicities_expand_dimension() {
        assert_eq!(realize_multiplicities(&[0.99, 0.01], 50).unwrap(), (100, vec![99, 1]));
        assert_eq!(realize_multiplicities(&[0.5, 0.5], 100).unwrap(), (100, vec![50, 50]));
        assert_eq!(realize_multiplicities(&[0.25, 0.75], 101).unwrap(), (104, vec![26, 78]));
        let err = realize_multiplicities(&[0.3 + 1e-7, 0.7 - 1e-7], 10).unwrap_err();
        assert!(err.to_string().contains("adjust m"));
    }

    #[test]
    fn diag_generator() {
        let mix = TestProblem::diag(0.5, 2, 4).build().unwrap();
        let d0: Vec<f64> = mix.populations()[0].diagonal().iter().map(|c| c.re).collect();
        let d1: Vec<f64> = mix.populations()[1].diagonal().iter().map(|c| c.re).collect();
        assert_eq!(d0, vec![2.0, 1.0, 2.0, 1.0]);
        assert_eq!(d1, vec![1.0, 2.0, 1.0, 2.0]);
        let profile = mix.diagonal_profile().unwrap();
        assert_eq!(profile.rows.len(), 2);
        assert_eq!(profile.freq, vec![0.5, 0.5]);
    }

    #[test]
    fn corr_reduces_to_diag() {
        let diag = TestProblem::diag(0.5, 3, 6).build().unwrap();
        for rho in [0.0, 1e-300] {
            let corr = TestProblem::corr(0.5, 3, 6, rho, 0.25).build().unwrap();
            for (c, d) in corr.populations().iter().zip(diag.populations()) {
                assert!((c - d).iter().all(|x| x.norm() < 1e-12));
            }
        }
        // Large l kills every lag ≥ 2; lag 1 keeps ρ since 1^l = 1.
        let corr = TestProblem::corr(0.5, 3, 6, 0.2, 60.0).build().unwrap();
        for (c, d) in corr.populations().iter().zip(diag.populations()) {
            for i in 0..6usize {
                for j in 0..6 {
                    let want = match i.abs_diff(j) {
                        0 => d[(i, j)].re,
                        1 => 0.2 * (d[(i, i)].re * d[(j, j)].re).sqrt(),
                        _ => 0.0,
                    };
                    assert!((c[(i, j)].re - want).abs() < 1e-12);
                }
            }
        }
    }

    #[test]
    fn comb_generator() {
        let mix = TestProblem::comb(0.5, 100, 0.1, 10.0, 100).build().unwrap();
        let d = mix.population_eigenvalues(0);
        assert_eq!(d.len(), 100);
        assert_abs_diff_eq!(d[0], 0.1, epsilon = 1e-15);
        assert_abs_diff_eq!(d[99], 10.0, epsilon = 1e-12);
        assert_eq!(mix.diagonal_profile().unwrap().rows.len(), 100);
    }

    #[test]
    fn expected_mass() {
        let mix = TestProblem::mp(2.0, 10).build().unwrap();
        assert_abs_diff_eq!(mix.expected_continuous_mass(), 0.5);
        let mix = TestProblem::mp(0.5, 10).build().unwrap();
        assert_abs_diff_eq!(mix.expected_continuous_mass(), 1.0);
    }
}
