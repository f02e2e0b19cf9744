//! Hermitian eigenvalues and the per-abscissa resolvent traces.
//!
//! For `B(z, e) = Σ_k α_k Λ_k / (1 + γ e_k) − z I` the traces are
//!
//! ```text
//! e_out_j = tr(Λ_j B⁻¹) / M        m_out = tr(B⁻¹) / M
//! ```
//!
//! Mixtures whose covariances are all diagonal, and single-population
//! mixtures (through their eigenvalues), take a scalar path that never forms
//! `B`. Everything else forms `B⁻¹` once per call by Gauss-Jordan elimination
//! and reads all `K + 1` traces off it.

use nalgebra::linalg::SymmetricEigen;
use num_complex::Complex64;

use crate::error::{Error, Result};
use crate::models::{CMatrix, DiagonalProfile, PopulationMixture};

const EIGEN_MAX_ITERS: usize = 10_000;

/// All eigenvalues of a Hermitian matrix, ascending.
pub fn hermitian_eigenvalues(a: &CMatrix) -> Result<Vec<f64>> {
    if a.nrows() != a.ncols() {
        return Err(Error::Eigen { population: 0, reason: "matrix is not square".into() });
    }
    let eig = SymmetricEigen::try_new(a.clone(), f64::EPSILON, EIGEN_MAX_ITERS).ok_or_else(|| Error::Eigen {
        population: 0,
        reason: "eigenvalue iteration did not converge".into(),
    })?;
    let mut vals: Vec<f64> = eig.eigenvalues.iter().copied().collect();
    vals.sort_by(f64::total_cmp);
    Ok(vals)
}

/// Eigenvalues and eigenvectors (columns) of a Hermitian matrix.
pub fn hermitian_eigen(a: &CMatrix) -> Result<(Vec<f64>, CMatrix)> {
    let eig = SymmetricEigen::try_new(a.clone(), f64::EPSILON, EIGEN_MAX_ITERS).ok_or_else(|| Error::Eigen {
        population: 0,
        reason: "eigenvalue iteration did not converge".into(),
    })?;
    Ok((eig.eigenvalues.iter().copied().collect(), eig.eigenvectors))
}

/// Right-hand sides of the fixed-point system at one `(e, z)`.
#[derive(Debug, Clone, PartialEq)]
pub struct ResolventTraces {
    pub e_out: Vec<Complex64>,
    pub m_out: Complex64,
}

impl ResolventTraces {
    pub fn zeros(k: usize) -> Self {
        Self { e_out: vec![Complex64::new(0.0, 0.0); k], m_out: Complex64::new(0.0, 0.0) }
    }
}

/// Evaluation route chosen for a mixture.
#[derive(Debug, Clone)]
enum Route {
    /// Distinct diagonal rows with their frequencies.
    Scalar(DiagonalProfile),
    /// Row-major population matrices split into real and imaginary planes.
    Dense { re: Vec<Vec<f64>>, im: Vec<Vec<f64>> },
}

/// Precomputed data for repeated trace evaluations on one mixture.
#[derive(Debug, Clone)]
pub struct ResolventKernel {
    weights: Vec<f64>,
    gamma: f64,
    dim: usize,
    route: Route,
}

/// Scratch buffers for the dense route, reusable across calls.
#[derive(Debug, Clone, Default)]
pub struct Workspace {
    re: Vec<f64>,
    im: Vec<f64>,
    piv: Vec<usize>,
}

impl ResolventKernel {
    /// Picks the cheapest exact route for `mixture`.
    pub fn new(mixture: &PopulationMixture) -> Self {
        if let Some(profile) = mixture.diagonal_profile() {
            return Self::scalar(mixture, profile.clone());
        }
        if mixture.k() == 1 {
            let profile = compress(mixture.population_eigenvalues(0));
            return Self::scalar(mixture, profile);
        }
        Self::dense(mixture)
    }

    /// Always goes through the dense factorization, whatever the structure.
    pub fn dense(mixture: &PopulationMixture) -> Self {
        let dim = mixture.dim();
        let mut re = Vec::with_capacity(mixture.k());
        let mut im = Vec::with_capacity(mixture.k());
        for pop in mixture.populations() {
            let mut r = vec![0.0; dim * dim];
            let mut i = vec![0.0; dim * dim];
            for row in 0..dim {
                for col in 0..dim {
                    let v = pop[(row, col)];
                    r[row * dim + col] = v.re;
                    i[row * dim + col] = v.im;
                }
            }
            re.push(r);
            im.push(i);
        }
        Self { weights: mixture.weights().to_vec(), gamma: mixture.gamma(), dim, route: Route::Dense { re, im } }
    }

    fn scalar(mixture: &PopulationMixture, profile: DiagonalProfile) -> Self {
        Self {
            weights: mixture.weights().to_vec(),
            gamma: mixture.gamma(),
            dim: mixture.dim(),
            route: Route::Scalar(profile),
        }
    }

    pub fn is_dense(&self) -> bool {
        matches!(self.route, Route::Dense { .. })
    }

    pub fn k(&self) -> usize {
        self.weights.len()
    }

    pub fn eval(&self, e: &[Complex64], z: Complex64, ws: &mut Workspace, out: &mut ResolventTraces) -> Result<()> {
        debug_assert_eq!(e.len(), self.k());
        let mut coef = Vec::with_capacity(e.len());
        for (&a, &ek) in self.weights.iter().zip(e) {
            let denom = 1.0 + self.gamma * ek;
            if denom.norm() == 0.0 || !denom.is_finite() {
                return Err(Error::SingularResolvent);
            }
            coef.push(a / denom);
        }
        let res = match &self.route {
            Route::Scalar(profile) => self.eval_scalar(profile, &coef, z, out),
            Route::Dense { re, im } => self.eval_dense(re, im, &coef, z, ws, out),
        };
        if res.is_ok() && (!out.m_out.is_finite() || out.e_out.iter().any(|v| !v.is_finite())) {
            return Err(Error::SingularResolvent);
        }
        res
    }

    fn eval_scalar(&self, profile: &DiagonalProfile, coef: &[Complex64], z: Complex64, out: &mut ResolventTraces) -> Result<()> {
        let k = coef.len();
        let zero = Complex64::new(0.0, 0.0);
        out.m_out = zero;
        out.e_out.iter_mut().for_each(|v| *v = zero);
        // K = 1 with a non-diagonal population arrives here with one column
        // of eigenvalues, which is exactly the diagonal case in its eigenbasis.
        for (row, &freq) in profile.rows.iter().zip(&profile.freq) {
            let mut d = -z;
            for (c, &lam) in coef.iter().zip(row) {
                d += c * lam;
            }
            if d.norm() == 0.0 {
                return Err(Error::SingularResolvent);
            }
            let inv = d.inv() * freq;
            out.m_out += inv;
            for j in 0..k {
                out.e_out[j] += inv * row[j];
            }
        }
        Ok(())
    }

    fn eval_dense(
        &self,
        pre: &[Vec<f64>],
        pim: &[Vec<f64>],
        coef: &[Complex64],
        z: Complex64,
        ws: &mut Workspace,
        out: &mut ResolventTraces,
    ) -> Result<()> {
        let n = self.dim;
        let nn = n * n;
        ws.re.clear();
        ws.re.resize(nn, 0.0);
        ws.im.clear();
        ws.im.resize(nn, 0.0);
        for ((lr, li), c) in pre.iter().zip(pim).zip(coef) {
            for idx in 0..nn {
                ws.re[idx] += c.re * lr[idx] - c.im * li[idx];
                ws.im[idx] += c.re * li[idx] + c.im * lr[idx];
            }
        }
        for i in 0..n {
            ws.re[i * n + i] -= z.re;
            ws.im[i * n + i] -= z.im;
        }
        invert_in_place(n, &mut ws.re, &mut ws.im, &mut ws.piv)?;

        let scale = 1.0 / n as f64;
        let mut tr = Complex64::new(0.0, 0.0);
        for i in 0..n {
            tr += Complex64::new(ws.re[i * n + i], ws.im[i * n + i]);
        }
        out.m_out = tr * scale;
        // Λ_j Hermitian: tr(Λ_j B⁻¹) = Σ_{mn} conj(Λ_j[m,n]) B⁻¹[m,n].
        for (j, (lr, li)) in pre.iter().zip(pim).enumerate() {
            let (mut sr, mut si) = (0.0, 0.0);
            for idx in 0..nn {
                sr += lr[idx] * ws.re[idx] + li[idx] * ws.im[idx];
                si += lr[idx] * ws.im[idx] - li[idx] * ws.re[idx];
            }
            out.e_out[j] = Complex64::new(sr, si) * scale;
        }
        Ok(())
    }
}

/// Collapses a list of eigenvalues into distinct values with frequencies.
fn compress(eigs: &[f64]) -> DiagonalProfile {
    let mut sorted = eigs.to_vec();
    sorted.sort_by(f64::total_cmp);
    let mut rows: Vec<Vec<f64>> = Vec::new();
    let mut freq: Vec<f64> = Vec::new();
    let unit = 1.0 / sorted.len() as f64;
    for x in sorted {
        match rows.last() {
            Some(r) if r[0] == x => *freq.last_mut().unwrap() += unit,
            _ => {
                rows.push(vec![x]);
                freq.push(unit);
            }
        }
    }
    DiagonalProfile { rows, freq }
}

/// Gauss-Jordan inversion with partial pivoting on split real/imaginary
/// row-major planes.
fn invert_in_place(n: usize, re: &mut [f64], im: &mut [f64], piv: &mut Vec<usize>) -> Result<()> {
    piv.clear();
    let scale = re
        .iter()
        .zip(im.iter())
        .map(|(a, b)| a.abs().max(b.abs()))
        .fold(0.0f64, f64::max);
    if !(scale > 0.0) || !scale.is_finite() {
        return Err(Error::SingularResolvent);
    }
    let tiny = scale * 1e-15;
    let mut rk_re = vec![0.0; n];
    let mut rk_im = vec![0.0; n];
    for k in 0..n {
        let mut p = k;
        let mut best = 0.0;
        for i in k..n {
            let v = re[i * n + k].hypot(im[i * n + k]);
            if v > best {
                best = v;
                p = i;
            }
        }
        if !(best > tiny) {
            return Err(Error::SingularResolvent);
        }
        piv.push(p);
        if p != k {
            for c in 0..n {
                re.swap(k * n + c, p * n + c);
                im.swap(k * n + c, p * n + c);
            }
        }
        let inv = Complex64::new(re[k * n + k], im[k * n + k]).inv();
        re[k * n + k] = 1.0;
        im[k * n + k] = 0.0;
        for c in 0..n {
            let (a, b) = (re[k * n + c], im[k * n + c]);
            rk_re[c] = a * inv.re - b * inv.im;
            rk_im[c] = a * inv.im + b * inv.re;
        }
        re[k * n..(k + 1) * n].copy_from_slice(&rk_re);
        im[k * n..(k + 1) * n].copy_from_slice(&rk_im);
        for i in 0..n {
            if i == k {
                continue;
            }
            let fr = re[i * n + k];
            let fi = im[i * n + k];
            if fr == 0.0 && fi == 0.0 {
                continue;
            }
            re[i * n + k] = 0.0;
            im[i * n + k] = 0.0;
            let row_re = &mut re[i * n..(i + 1) * n];
            let row_im = &mut im[i * n..(i + 1) * n];
            for c in 0..n {
                let (a, b) = (rk_re[c], rk_im[c]);
                row_re[c] -= fr * a - fi * b;
                row_im[c] -= fr * b + fi * a;
            }
        }
    }
    for k in (0..n).rev() {
        let p = piv[k];
        if p != k {
            for r in 0..n {
                re.swap(r * n + k, r * n + p);
                im.swap(r * n + k, r * n + p);
            }
        }
    }
    Ok(())
}

/// One evaluation of the traces at `(e, z)` for `mixture`.
pub fn resolvent_traces(e: &[Complex64], z: Complex64, mixture: &PopulationMixture) -> Result<ResolventTraces> {
    let kernel = ResolventKernel::new(mixture);
    let mut out = ResolventTraces::zeros(mixture.k());
    kernel.eval(e, z, &mut Workspace::default(), &mut out)?;
    Ok(out)
}

/// Same as [`resolvent_traces`] but forced through the dense factorization.
pub fn resolvent_traces_dense(e: &[Complex64], z: Complex64, mixture: &PopulationMixture) -> Result<ResolventTraces> {
    let kernel = ResolventKernel::dense(mixture);
    let mut out = ResolventTraces::zeros(mixture.k());
    kernel.eval(e, z, &mut Workspace::default(), &mut out)?;
    Ok(out)
}
