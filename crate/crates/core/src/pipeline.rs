//! Support detection, initial solve, regridding rounds and the assembled
//! density estimate.

use num_complex::Complex64;

use crate::error::Result;
use crate::exec::Execution;
use crate::grid::{self, SpectralGrid, SupportSegment};
use crate::models::PopulationMixture;
use crate::solver::{PointSolution, PointSolver, SolverConfig};

/// Mass shortfall that flags a likely support-detection miss.
pub const MASS_DEFICIT_WARNING: f64 = 5e-3;

#[derive(Debug, Clone, PartialEq)]
pub struct Diagnostics {
    pub iterations: Vec<usize>,
    pub total_iterations: usize,
    /// Grid indices whose solve did not converge.
    pub nonconverged: Vec<usize>,
    /// Continuous mass implied by γ and the rank of the average covariance.
    pub expected_mass: f64,
    pub mass_warning: bool,
}

/// Grid, per-point solutions and integrated mass.
#[derive(Debug, Clone, PartialEq)]
pub struct DensityEstimate {
    pub grid: SpectralGrid,
    pub solutions: Vec<PointSolution>,
    /// Density used for interpolation and integration: the solved `f`, with
    /// non-converged points replaced by interpolation from their converged
    /// neighbours.
    pub density: Vec<f64>,
    pub mass: f64,
    pub segments: Vec<SupportSegment>,
    pub diagnostics: Diagnostics,
    cumulative: Vec<f64>,
}

pub fn compute_esd(mixture: &PopulationMixture, config: &SolverConfig) -> Result<DensityEstimate> {
    compute_esd_with(mixture, config, Execution::default())
}

pub fn compute_esd_with(mixture: &PopulationMixture, config: &SolverConfig, exec: Execution) -> Result<DensityEstimate> {
    let solver = PointSolver::new(mixture, config)?;
    let segments = grid::detect_support(&mixture.eigenvalue_pool(), mixture.gamma(), config.t)?;
    let mut grid = grid::initial_grid(&segments, config);
    let mut solutions = exec.map(&grid.points, |&x| solver.solve(x, None));

    for level in 1..=config.levels {
        let density = repaired_density(&grid, &solutions);
        let (refined, fresh) = grid::regrid_with_new(&grid, &density, config.ratio(level));
        let mut is_fresh = vec![false; refined.len()];
        for &i in &fresh {
            is_fresh[i] = true;
        }
        // Old solutions in new-grid order, with the new slots empty.
        let mut merged: Vec<Option<PointSolution>> = Vec::with_capacity(refined.len());
        let mut old = solutions.into_iter();
        for &f in &is_fresh {
            merged.push(if f { None } else { old.next() });
        }
        let seeds: Vec<(f64, Option<Vec<Complex64>>)> = fresh
            .iter()
            .map(|&i| {
                let seed = config
                    .warm_start
                    .then(|| nearest_solved(&refined, &merged, i))
                    .flatten()
                    .map(|s| s.e.clone());
                (refined.points[i], seed)
            })
            .collect();
        let solved = exec.map(&seeds, |(x, seed)| solver.solve(*x, seed.as_deref()));
        for (&i, sol) in fresh.iter().zip(solved) {
            merged[i] = Some(sol);
        }
        solutions = merged.into_iter().map(|s| s.expect("every grid point solved")).collect();
        grid = refined;
    }

    Ok(DensityEstimate::assemble(grid, solutions, segments, mixture.expected_continuous_mass()))
}

/// Closest previously solved point in the same segment, by log distance.
fn nearest_solved<'a>(grid: &SpectralGrid, sols: &'a [Option<PointSolution>], i: usize) -> Option<&'a PointSolution> {
    let seg = grid.segment_of[i];
    let x = grid.points[i].ln();
    let left = (0..i).rev().take_while(|&j| grid.segment_of[j] == seg).find(|&j| sols[j].is_some());
    let right = (i + 1..grid.len()).take_while(|&j| grid.segment_of[j] == seg).find(|&j| sols[j].is_some());
    let pick = match (left, right) {
        (Some(a), Some(b)) => {
            if x - grid.points[a].ln() <= grid.points[b].ln() - x {
                a
            } else {
                b
            }
        }
        (Some(a), None) => a,
        (None, Some(b)) => b,
        (None, None) => return None,
    };
    sols[pick].as_ref()
}

/// Solved densities with non-converged points interpolated over.
fn repaired_density(grid: &SpectralGrid, sols: &[PointSolution]) -> Vec<f64> {
    let mut out: Vec<f64> = sols.iter().map(|s| s.f).collect();
    for (start, end) in grid.segment_ranges() {
        let good: Vec<usize> = (start..end).filter(|&i| sols[i].converged).collect();
        if good.is_empty() {
            continue;
        }
        for i in start..end {
            if sols[i].converged {
                continue;
            }
            let pos = good.partition_point(|&j| j < i);
            out[i] = match (pos.checked_sub(1).map(|p| good[p]), good.get(pos).copied()) {
                (Some(a), Some(b)) => {
                    let t = (grid.points[i] - grid.points[a]) / (grid.points[b] - grid.points[a]);
                    sols[a].f + t * (sols[b].f - sols[a].f)
                }
                (Some(a), None) => sols[a].f,
                (None, Some(b)) => sols[b].f,
                (None, None) => unreachable!(),
            };
        }
    }
    out
}

impl DensityEstimate {
    fn assemble(grid: SpectralGrid, solutions: Vec<PointSolution>, segments: Vec<SupportSegment>, expected_mass: f64) -> Self {
        let density = repaired_density(&grid, &solutions);
        let iterations: Vec<usize> = solutions.iter().map(|s| s.iterations).collect();
        let nonconverged = solutions
            .iter()
            .enumerate()
            .filter(|(_, s)| !s.converged)
            .map(|(i, _)| i)
            .collect();
        let mut cumulative = vec![0.0; grid.len()];
        let mut acc = 0.0;
        for (start, end) in grid.segment_ranges() {
            for i in start..end {
                if i > start {
                    acc += 0.5 * (density[i] + density[i - 1]) * (grid.points[i] - grid.points[i - 1]);
                }
                cumulative[i] = acc;
            }
        }
        let mass = acc;
        Self {
            diagnostics: Diagnostics {
                total_iterations: iterations.iter().sum(),
                iterations,
                nonconverged,
                expected_mass,
                mass_warning: expected_mass - mass > MASS_DEFICIT_WARNING,
            },
            grid,
            solutions,
            density,
            mass,
            segments,
            cumulative,
        }
    }

    pub fn len(&self) -> usize {
        self.grid.len()
    }

    pub fn is_empty(&self) -> bool {
        self.grid.is_empty()
    }

    pub fn points(&self) -> &[f64] {
        &self.grid.points
    }

    pub fn all_converged(&self) -> bool {
        self.diagnostics.nonconverged.is_empty()
    }

    /// Index of the cell `[x_i, x_{i+1}]` (same segment) holding `x`.
    fn locate(&self, x: f64) -> Option<usize> {
        let pts = &self.grid.points;
        if pts.is_empty() || x < pts[0] || x > pts[pts.len() - 1] {
            return None;
        }
        let j = pts.partition_point(|&p| p <= x);
        if j == pts.len() {
            return Some(pts.len() - 1);
        }
        let i = j.checked_sub(1)?;
        (self.grid.segment_of[i] == self.grid.segment_of[j]).then_some(i)
    }

    /// Piecewise-linear density at `x`, zero off the gridded segments.
    pub fn density_at(&self, x: f64) -> f64 {
        let Some(i) = self.locate(x) else { return 0.0 };
        let pts = &self.grid.points;
        if i + 1 == pts.len() || pts[i] == x {
            return self.density[i];
        }
        let t = (x - pts[i]) / (pts[i + 1] - pts[i]);
        self.density[i] + t * (self.density[i + 1] - self.density[i])
    }

    /// Integral of the piecewise-linear density over `(-∞, x]`.
    pub fn cdf(&self, x: f64) -> f64 {
        let pts = &self.grid.points;
        if pts.is_empty() || x < pts[0] {
            return 0.0;
        }
        let j = pts.partition_point(|&p| p <= x);
        let i = j - 1;
        if j == pts.len() || self.grid.segment_of[i] != self.grid.segment_of[j] {
            return self.cumulative[i];
        }
        let h = x - pts[i];
        let slope = (self.density[i + 1] - self.density[i]) / (pts[i + 1] - pts[i]);
        self.cumulative[i] + h * (self.density[i] + 0.5 * slope * h)
    }

    /// Maximal runs where the density exceeds `threshold`, with ends placed
    /// where the linear interpolant crosses it.
    pub fn support_intervals(&self, threshold: f64) -> Vec<(f64, f64)> {
        let pts = &self.grid.points;
        let f = &self.density;
        let cross = |a: usize, b: usize| {
            let (fa, fb) = (f[a], f[b]);
            if fa == fb {
                return 0.5 * (pts[a] + pts[b]);
            }
            pts[a] + (threshold - fa) / (fb - fa) * (pts[b] - pts[a])
        };
        let mut out = Vec::new();
        for (start, end) in self.grid.segment_ranges() {
            let mut open: Option<f64> = None;
            for i in start..end {
                let above = f[i] > threshold;
                match (open, above) {
                    (None, true) => open = Some(if i == start { pts[i] } else { cross(i - 1, i) }),
                    (Some(lo), false) => {
                        out.push((lo, cross(i - 1, i)));
                        open = None;
                    }
                    _ => {}
                }
            }
            if let Some(lo) = open {
                out.push((lo, pts[end - 1]));
            }
        }
        out
    }
}

pub fn interpolate_density(estimate: &DensityEstimate, queries: &[f64]) -> Vec<f64> {
    queries.iter().map(|&x| estimate.density_at(x)).collect()
}

/// Trapezoidal integral of the density, segment by segment.
pub fn integrate_density(estimate: &DensityEstimate) -> f64 {
    estimate.mass
}

/// Mean absolute interpolation error against `oracle` over `n` evenly
/// spaced cell midpoints of `[lo, hi]`.
pub fn mean_abs_error(estimate: &DensityEstimate, oracle: impl Fn(f64) -> f64, lo: f64, hi: f64, n: usize) -> f64 {
    let h = (hi - lo) / n as f64;
    (0..n)
        .map(|j| {
            let x = lo + (j as f64 + 0.5) * h;
            (estimate.density_at(x) - oracle(x)).abs()
        })
        .sum::<f64>()
        / n as f64
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::closedform::{mp_density, MpLaw};
    use crate::models::TestProblem;
    use approx::assert_abs_diff_eq;

    fn sol(x: f64, f: f64, converged: bool) -> PointSolution {
        PointSolution {
            x,
            e: vec![],
            m: Complex64::new(0.0, f * std::f64::consts::PI),
            f,
            iterations: 1,
            converged,
            xi: 1e-5,
            residual: 0.0,
            backoffs: 0,
        }
    }

    fn toy() -> DensityEstimate {
        let grid = SpectralGrid {
            points: vec![1.0, 2.0, 3.0, 5.0, 6.0],
            segment_of: vec![0, 0, 0, 1, 1],
            initial_size: 5,
        };
        let sols = vec![sol(1.0, 0.0, true), sol(2.0, 1.0, true), sol(3.0, 0.0, true), sol(5.0, 0.0, true), sol(6.0, 0.5, true)];
        let segs = vec![
            SupportSegment { lo: 1.0, hi: 3.0, eig_count: 1 },
            SupportSegment { lo: 5.0, hi: 6.0, eig_count: 1 },
        ];
        DensityEstimate::assemble(grid, sols, segs, 1.0)
    }

    #[test]
    fn interpolation_contract() {
        let est = toy();
        assert_eq!(interpolate_density(&est, &[2.0, 6.0]), vec![1.0, 0.5]);
        assert_eq!(est.density_at(1.5), 0.5);
        assert_eq!(est.density_at(4.0), 0.0);
        assert_eq!(est.density_at(0.5), 0.0);
        assert_eq!(est.density_at(7.0), 0.0);
        assert_eq!(est.density_at(5.5), 0.25);
    }

    #[test]
    fn segments_integrate_independently() {
        let est = toy();
        assert_abs_diff_eq!(integrate_density(&est), 1.0 + 0.25);
        assert_abs_diff_eq!(est.cdf(4.0), 1.0);
        assert_abs_diff_eq!(est.cdf(100.0), 1.25);
        assert_abs_diff_eq!(est.cdf(1.5), 0.125);
        assert_eq!(est.cdf(0.0), 0.0);
    }

    #[test]
    fn degenerate_single_point() {
        let grid = SpectralGrid { points: vec![2.0], segment_of: vec![0], initial_size: 1 };
        let est = DensityEstimate::assemble(grid, vec![sol(2.0, 0.3, true)], vec![], 1.0);
        assert_eq!(integrate_density(&est), 0.0);
        assert_eq!(est.density_at(2.0), 0.3);
    }

    #[test]
    fn nonconverged_points_are_interpolated_over() {
        let grid = SpectralGrid { points: vec![1.0, 2.0, 3.0], segment_of: vec![0; 3], initial_size: 3 };
        let est = DensityEstimate::assemble(grid, vec![sol(1.0, 1.0, true), sol(2.0, 99.0, false), sol(3.0, 3.0, true)], vec![], 1.0);
        assert_eq!(est.density, vec![1.0, 2.0, 3.0]);
        assert_eq!(est.diagnostics.nonconverged, vec![1]);
        assert_eq!(est.solutions[1].f, 99.0);
    }

    #[test]
    fn support_intervals_follow_threshold() {
        let est = toy();
        let s = est.support_intervals(0.1);
        assert_eq!(s.len(), 2);
        assert_abs_diff_eq!(s[0].0, 1.1, epsilon = 1e-12);
        assert_abs_diff_eq!(s[0].1, 2.9, epsilon = 1e-12);
        assert_abs_diff_eq!(s[1].0, 5.2, epsilon = 1e-12);
        assert_abs_diff_eq!(s[1].1, 6.0);
    }

    #[test]
    fn mp_estimate_grid_and_mass() {
        let mix = TestProblem::mp(0.5, 100).build().unwrap();
        let est = compute_esd(&mix, &SolverConfig::default()).unwrap();
        assert_eq!(est.grid.initial_size, 600);
        assert_eq!(est.len(), 1200);
        assert!(est.all_converged());
        assert_abs_diff_eq!(est.mass, 1.0, epsilon = 1e-3);
        assert!(!est.diagnostics.mass_warning);
        let law = MpLaw::new(0.5);
        let err = mean_abs_error(&est, |x| mp_density(x, 0.5), law.support_lo, law.support_hi, 10_000);
        assert!(err <= 1e-4, "{err}");
    }

    #[test]
    fn mp_above_one_carries_continuous_mass_only() {
        let mix = TestProblem::mp(2.0, 100).build().unwrap();
        let est = compute_esd(&mix, &SolverConfig::default()).unwrap();
        assert_abs_diff_eq!(integrate_density(&est), 0.5, epsilon = 2e-3);
        assert_abs_diff_eq!(est.diagnostics.expected_mass, 0.5);
    }

    #[test]
    fn sequential_and_parallel_agree_bitwise() {
        let mix = TestProblem::two_delta(0.3, [1.0, 8.0], [0.5, 0.5], 100).build().unwrap();
        let cfg = SolverConfig::default();
        let a = compute_esd_with(&mix, &cfg, Execution::Sequential).unwrap();
        let b = compute_esd_with(&mix, &cfg, Execution::Parallel).unwrap();
        assert_eq!(a, b);
    }
}
