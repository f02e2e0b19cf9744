//! Per-abscissa solver: damped Anderson mixing inside a continuation on the
//! imaginary offset.
//!
//! At abscissa `x` the system is solved at `z = x + i ξ²`. Starting from
//! `ξ = ξ⁰`, ξ is divided by β (floored at ε) every time the step residual
//! `max_k |e_k^i − e_k^{i−1}|` does not grow, and the iteration stops once
//! `ξ = ε` and the residual drops below ε.

use std::collections::VecDeque;
use std::f64::consts::PI;

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{ResolventKernel, ResolventTraces, Workspace};
use crate::models::PopulationMixture;

/// Every tunable constant of the solver and the grid construction.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SolverConfig {
    /// Target accuracy ε; the final offset from the real axis is ε².
    pub epsilon: f64,
    /// Initial continuation parameter ξ⁰.
    pub xi0: f64,
    /// Continuation division factor β.
    pub beta: f64,
    /// Anderson history cap; 0 gives plain fixed-point iteration.
    pub q_cap: usize,
    /// Damping multiplier on the largest residual difference.
    pub damping_scale: f64,
    pub damping: DampingRule,
    /// Safety margin t on the dispersion intervals.
    pub t: f64,
    /// Minimum grid points per grouped eigenvalue, M⁽ᵒ⁾.
    pub m_outer: usize,
    /// Minimum grid points per segment, M⁽ⁱ⁾.
    pub m_inner: usize,
    /// Minimum discretisation dimension for discrete spectra, M⁽ᵐ⁾.
    pub min_dim: usize,
    /// Regridding rounds L.
    pub levels: usize,
    /// Refinement ratios R_l; the last entry repeats when shorter than L.
    pub ratios: Vec<f64>,
    /// Total iteration cap per abscissa; `None` means `min(10⌈1/ε⌉, 10⁶)`.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub max_iters: Option<usize>,
    /// Optional cap on iterations spent at one value of ξ.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub max_iters_per_level: Option<usize>,
    /// Breakdown backoffs allowed per abscissa.
    pub max_backoffs: usize,
    /// Seed points added by regridding from their nearest solved neighbour.
    pub warm_start: bool,
}

impl Default for SolverConfig {
    fn default() -> Self {
        Self {
            epsilon: 1e-5,
            xi0: 1.0,
            beta: 10.0,
            q_cap: 2,
            damping_scale: 0.1,
            damping: DampingRule::Relative,
            t: 1.001,
            m_outer: 3,
            m_inner: 15,
            min_dim: 100,
            levels: 1,
            ratios: vec![1.0],
            max_iters: None,
            max_iters_per_level: None,
            max_backoffs: 3,
            warm_start: true,
        }
    }
}

impl SolverConfig {
    pub fn with_epsilon(mut self, epsilon: f64) -> Self {
        self.epsilon = epsilon;
        self
    }

    pub fn iteration_cap(&self) -> usize {
        self.max_iters
            .unwrap_or_else(|| (10 * (1.0 / self.epsilon).ceil() as usize).min(1_000_000))
    }

    /// Refinement ratio for round `l` (1-based).
    pub fn ratio(&self, l: usize) -> f64 {
        self.ratios
            .get(l - 1)
            .or(self.ratios.last())
            .copied()
            .unwrap_or(1.0)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::InvalidConfig(msg));
        if !(self.epsilon > 0.0) {
            return bad(format!("epsilon = {} must be positive", self.epsilon));
        }
        if !(self.xi0 >= self.epsilon) {
            return bad(format!("xi0 = {} must be at least epsilon", self.xi0));
        }
        if !(self.beta > 1.0) {
            return bad(format!("beta = {} must exceed 1", self.beta));
        }
        if !(self.t > 1.0) {
            return bad(format!("t = {} must exceed 1", self.t));
        }
        if !(self.damping_scale >= 0.0) {
            return bad("damping_scale must be non-negative".into());
        }
        if self.m_outer > self.m_inner {
            return bad(format!("m_outer = {} exceeds m_inner = {}", self.m_outer, self.m_inner));
        }
        if self.m_inner == 0 {
            return bad("m_inner must be positive".into());
        }
        if self.ratios.iter().any(|r| !(*r > 0.0)) {
            return bad("refinement ratios must be positive".into());
        }
        if self.levels > 0 && self.ratios.is_empty() {
            return bad("ratios must be non-empty when levels > 0".into());
        }
        Ok(())
    }
}

/// How the Tikhonov weight of the Anderson least-squares problem scales
/// with the largest residual difference `d = max |ΔH_kq|`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DampingRule {
    /// `λ = s · d`. Dominates `ΔHᴴΔH ~ d²` once `d < s`, which turns the
    /// update back into plain fixed-point iteration near convergence.
    Absolute,
    /// `λ = s · d²`, the same scale as the normal matrix.
    #[default]
    Relative,
}

/// Sliding window of fixed-point images `g` and residuals `h = g − e`.
#[derive(Debug, Clone)]
pub struct AndersonHistory {
    cap: usize,
    damping_scale: f64,
    damping: DampingRule,
    g: VecDeque<Vec<Complex64>>,
    h: VecDeque<Vec<Complex64>>,
}

impl AndersonHistory {
    pub fn new(cap: usize, damping_scale: f64, damping: DampingRule) -> Self {
        Self { cap, damping_scale, damping, g: VecDeque::new(), h: VecDeque::new() }
    }

    pub fn reset(&mut self) {
        self.g.clear();
        self.h.clear();
    }

    /// Number of residual differences the next update will use.
    pub fn depth(&self) -> usize {
        self.h.len().saturating_sub(1)
    }

    /// Records `(g(e), g(e) − e)` and returns the mixed next iterate.
    pub fn update(&mut self, g_val: &[Complex64], e_prev: &[Complex64]) -> Vec<Complex64> {
        let h: Vec<Complex64> = g_val.iter().zip(e_prev).map(|(g, e)| g - e).collect();
        self.g.push_back(g_val.to_vec());
        self.h.push_back(h);
        while self.h.len() > self.cap + 1 {
            self.g.pop_front();
            self.h.pop_front();
        }
        let q = self.depth();
        if q == 0 {
            return g_val.to_vec();
        }
        let k = g_val.len();
        let dh: Vec<Vec<Complex64>> = (0..q)
            .map(|j| (0..k).map(|r| self.h[j + 1][r] - self.h[j][r]).collect())
            .collect();
        let h_cur = &self.h[q];
        let largest = dh.iter().flatten().map(|v| v.norm()).fold(0.0, f64::max);
        let lambda = match self.damping {
            DampingRule::Absolute => self.damping_scale * largest,
            DampingRule::Relative => self.damping_scale * largest * largest,
        };

        // (ΔHᴴΔH + λI) ν = ΔHᴴ h
        let mut a = vec![vec![Complex64::new(0.0, 0.0); q]; q];
        let mut rhs = vec![Complex64::new(0.0, 0.0); q];
        for i in 0..q {
            for j in 0..q {
                a[i][j] = (0..k).map(|r| dh[i][r].conj() * dh[j][r]).sum();
            }
            a[i][i] += lambda;
            rhs[i] = (0..k).map(|r| dh[i][r].conj() * h_cur[r]).sum();
        }
        let Some(nu) = solve_small(&a, &rhs) else {
            return g_val.to_vec();
        };
        let mut next = g_val.to_vec();
        for (j, nu_j) in nu.iter().enumerate() {
            for r in 0..k {
                next[r] -= (self.g[j + 1][r] - self.g[j][r]) * nu_j;
            }
        }
        next
    }
}

/// Solves the Hermitian positive semidefinite normal system; `None` when it
/// is singular.
fn solve_small(a: &[Vec<Complex64>], b: &[Complex64]) -> Option<Vec<Complex64>> {
    match b.len() {
        1 => {
            // ΔHᴴΔH + λ is real and non-negative.
            let d = a[0][0].re;
            (d > 0.0).then(|| vec![b[0] / d])
        }
        2 => {
            let det = a[0][0] * a[1][1] - a[0][1] * a[1][0];
            let scale = a[0][0].norm().max(a[1][1].norm());
            if !(det.norm() > 1e-300) || det.norm() <= f64::EPSILON * scale * scale * 1e-3 {
                return None;
            }
            Some(vec![
                (b[0] * a[1][1] - a[0][1] * b[1]) / det,
                (a[0][0] * b[1] - a[1][0] * b[0]) / det,
            ])
        }
        n => {
            // Gaussian elimination with partial pivoting for q_cap > 2.
            let mut m: Vec<Vec<Complex64>> = a.iter().zip(b).map(|(row, &r)| {
                let mut v = row.clone();
                v.push(r);
                v
            }).collect();
            for c in 0..n {
                let p = (c..n).max_by(|&i, &j| m[i][c].norm().total_cmp(&m[j][c].norm()))?;
                if !(m[p][c].norm() > 1e-300) {
                    return None;
                }
                m.swap(c, p);
                for r in c + 1..n {
                    let f = m[r][c] / m[c][c];
                    for cc in c..=n {
                        let v = m[c][cc];
                        m[r][cc] -= f * v;
                    }
                }
            }
            let mut x = vec![Complex64::new(0.0, 0.0); n];
            for r in (0..n).rev() {
                let s: Complex64 = (r + 1..n).map(|c| m[r][c] * x[c]).sum();
                x[r] = (m[r][n] - s) / m[r][r];
            }
            Some(x)
        }
    }
}

/// One damped Anderson step; see [`AndersonHistory::update`].
pub fn anderson_update(history: &mut AndersonHistory, g_val: &[Complex64], e_prev: &[Complex64]) -> Vec<Complex64> {
    history.update(g_val, e_prev)
}

/// Converged (or best-effort) state at one abscissa.
#[derive(Debug, Clone, PartialEq)]
pub struct PointSolution {
    pub x: f64,
    pub e: Vec<Complex64>,
    pub m: Complex64,
    /// `Im(m)/π`, clamped at zero.
    pub f: f64,
    pub iterations: usize,
    pub converged: bool,
    /// Last value of ξ; equals ε on convergence.
    pub xi: f64,
    pub residual: f64,
    pub backoffs: usize,
}

/// `m̃(z) = γ m(z) + (γ − 1)/z`.
pub fn stieltjes_companion(m: Complex64, z: Complex64, gamma: f64) -> Complex64 {
    gamma * m + (gamma - 1.0) / z
}

/// Reusable solver bound to one mixture.
#[derive(Debug, Clone)]
pub struct PointSolver {
    kernel: ResolventKernel,
    config: SolverConfig,
}

impl PointSolver {
    pub fn new(mixture: &PopulationMixture, config: &SolverConfig) -> Result<Self> {
        config.validate()?;
        Ok(Self { kernel: ResolventKernel::new(mixture), config: config.clone() })
    }

    /// Forces the dense trace route regardless of mixture structure.
    pub fn new_dense(mixture: &PopulationMixture, config: &SolverConfig) -> Result<Self> {
        config.validate()?;
        Ok(Self { kernel: ResolventKernel::dense(mixture), config: config.clone() })
    }

    pub fn config(&self) -> &SolverConfig {
        &self.config
    }

    pub fn kernel(&self) -> &ResolventKernel {
        &self.kernel
    }

    pub fn solve(&self, x: f64, warm_start: Option<&[Complex64]>) -> PointSolution {
        self.solve_inner(x, warm_start, None)
    }

    /// Like [`solve`](Self::solve), also returning ξ at every iteration.
    pub fn solve_traced(&self, x: f64, warm_start: Option<&[Complex64]>) -> (PointSolution, Vec<f64>) {
        let mut trace = Vec::new();
        let sol = self.solve_inner(x, warm_start, Some(&mut trace));
        (sol, trace)
    }

    fn solve_inner(&self, x: f64, warm_start: Option<&[Complex64]>, mut trace: Option<&mut Vec<f64>>) -> PointSolution {
        let cfg = &self.config;
        let k = self.kernel.k();
        let eps = cfg.epsilon;
        let start = vec![Complex64::new(0.0, 1.0); k];
        let mut e = warm_start.map_or_else(|| start.clone(), <[Complex64]>::to_vec);
        let mut xi = cfg.xi0;
        let mut history = AndersonHistory::new(cfg.q_cap, cfg.damping_scale, cfg.damping);
        let mut ws = Workspace::default();
        let mut traces = ResolventTraces::zeros(k);
        let mut m = Complex64::new(0.0, 0.0);
        let mut prev_res = f64::INFINITY;
        let mut res = f64::INFINITY;
        let mut iterations = 0;
        let mut level_iters = 0;
        let mut backoffs = 0;
        let mut converged = false;
        let cap = cfg.iteration_cap();

        while iterations < cap {
            let z = Complex64::new(x, xi * xi);
            let step = self
                .kernel
                .eval(&e, z, &mut ws, &mut traces)
                .map(|_| {
                    let mixed = history.update(&traces.e_out, &e);
                    // The exact map keeps iterates in the upper half-plane. An
                    // extrapolated step that leaves it can lock onto the
                    // conjugate root, so fall back to the plain step there.
                    let g = &traces.e_out;
                    if mixed.iter().zip(g).any(|(a, b)| a.im < 0.0 && b.im >= 0.0) {
                        g.clone()
                    } else {
                        mixed
                    }
                })
                .and_then(|next| {
                    if next.iter().all(|v| v.is_finite()) {
                        Ok(next)
                    } else {
                        Err(Error::SingularResolvent)
                    }
                });
            let next = match step {
                Ok(next) => next,
                Err(_) => {
                    if backoffs == cfg.max_backoffs {
                        break;
                    }
                    backoffs += 1;
                    xi = (xi * cfg.beta).min(cfg.xi0);
                    history.reset();
                    prev_res = f64::INFINITY;
                    level_iters = 0;
                    if e.iter().any(|v| !v.is_finite()) {
                        e = start.clone();
                    }
                    continue;
                }
            };
            m = traces.m_out;
            res = next.iter().zip(&e).map(|(a, b)| (a - b).norm()).fold(0.0, f64::max);
            e = next;
            iterations += 1;
            level_iters += 1;
            if let Some(t) = trace.as_deref_mut() {
                t.push(xi);
            }
            if xi == eps && res < eps {
                converged = true;
                break;
            }
            let level_spent = cfg.max_iters_per_level.is_some_and(|c| level_iters >= c);
            if xi > eps && (res <= prev_res || level_spent) {
                xi = (xi / cfg.beta).max(eps);
                history.reset();
                level_iters = 0;
            } else if level_spent {
                break;
            }
            prev_res = res;
        }

        let z = Complex64::new(x, xi * xi);
        if self.kernel.eval(&e, z, &mut ws, &mut traces).is_ok() {
            m = traces.m_out;
        }
        PointSolution {
            x,
            e,
            m,
            f: (m.im / PI).max(0.0),
            iterations,
            converged,
            xi,
            residual: res,
            backoffs,
        }
    }
}

/// Solves one abscissa from scratch.
pub fn solve_point(
    x: f64,
    mixture: &PopulationMixture,
    config: &SolverConfig,
    warm_start: Option<&[Complex64]>,
) -> Result<PointSolution> {
    Ok(PointSolver::new(mixture, config)?.solve(x, warm_start))
}
