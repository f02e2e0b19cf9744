//! Support detection from dispersion-interval overlap, log-uniform initial
//! gridding and curvature-driven regridding.

use crate::error::{Error, Result};
use crate::solver::SolverConfig;

/// Interval of the spectral axis induced by `eig_count` pooled eigenvalues.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SupportSegment {
    pub lo: f64,
    pub hi: f64,
    pub eig_count: usize,
}

/// Ascending evaluation abscissae, each tagged with its segment.
#[derive(Debug, Clone, PartialEq)]
pub struct SpectralGrid {
    pub points: Vec<f64>,
    pub segment_of: Vec<usize>,
    /// Size of the grid before any regridding, the unit for refinement.
    pub initial_size: usize,
}

impl SpectralGrid {
    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    /// Index ranges `[start, end)` of each segment's points.
    pub fn segment_ranges(&self) -> Vec<(usize, usize)> {
        let mut out: Vec<(usize, usize)> = Vec::new();
        for (i, &s) in self.segment_of.iter().enumerate() {
            while out.len() <= s {
                out.push((i, i));
            }
            out[s].1 = i + 1;
        }
        out
    }
}

/// `[t⁻¹(1−√γ)²λ, t(1+√γ)²λ]` for every positive `λ`, in input order.
pub fn dispersion_intervals(lambdas: &[f64], gamma: f64, t: f64) -> Vec<SupportSegment> {
    let r = gamma.sqrt();
    let lo = (1.0 - r).powi(2) / t;
    let hi = (1.0 + r).powi(2) * t;
    lambdas
        .iter()
        .filter(|&&l| l > 0.0)
        .map(|&l| SupportSegment { lo: lo * l, hi: hi * l, eig_count: 1 })
        .collect()
}

/// Merges overlapping intervals; a gap is declared wherever `b_p < a_{p+1}`.
pub fn partition_segments(intervals: &[SupportSegment]) -> Result<Vec<SupportSegment>> {
    if intervals.is_empty() {
        return Err(Error::DegenerateSpectrum);
    }
    let mut sorted = intervals.to_vec();
    sorted.sort_by(|a, b| a.lo.total_cmp(&b.lo));
    let mut out: Vec<SupportSegment> = Vec::new();
    for iv in sorted {
        match out.last_mut() {
            Some(cur) if !(cur.hi < iv.lo) => {
                cur.hi = cur.hi.max(iv.hi);
                cur.eig_count += iv.eig_count;
            }
            _ => out.push(iv),
        }
    }
    Ok(out)
}

/// Segments for a pooled eigenvalue list.
pub fn detect_support(pool: &[f64], gamma: f64, t: f64) -> Result<Vec<SupportSegment>> {
    partition_segments(&dispersion_intervals(pool, gamma, t))
}

/// Number of initial points a segment receives.
pub fn segment_point_count(segment: &SupportSegment, config: &SolverConfig) -> usize {
    (config.m_outer * segment.eig_count).max(config.m_inner).max(2)
}

fn log_space(lo: f64, hi: f64, n: usize) -> Vec<f64> {
    let ratio = (hi / lo).ln();
    let mut pts: Vec<f64> = (0..n).map(|k| lo * (ratio * k as f64 / (n - 1) as f64).exp()).collect();
    pts[0] = lo;
    pts[n - 1] = hi;
    pts
}

/// Log-uniform points over every segment, endpoints included.
pub fn initial_grid(segments: &[SupportSegment], config: &SolverConfig) -> SpectralGrid {
    let mut points = Vec::new();
    let mut segment_of = Vec::new();
    for (s, seg) in segments.iter().enumerate() {
        let n = segment_point_count(seg, config);
        let lo = if seg.lo > 0.0 { seg.lo } else { 1e-12 * seg.hi };
        for x in log_space(lo, seg.hi, n) {
            // Keep strict ascent if log spacing collapses adjacent points.
            if points.last().is_some_and(|&p| x <= p) {
                continue;
            }
            points.push(x);
            segment_of.push(s);
        }
    }
    let initial_size = points.len();
    SpectralGrid { points, segment_of, initial_size }
}

/// Relative weight of the zero-curvature floor against the largest cell.
pub const CURVATURE_FLOOR: f64 = 0.05;

/// Second derivative by three-point divided differences on non-uniform
/// spacing; the two ends copy their neighbours.
pub fn second_derivative(x: &[f64], f: &[f64]) -> Vec<f64> {
    let n = x.len();
    if n < 3 {
        return vec![0.0; n];
    }
    let mut d2 = vec![0.0; n];
    for i in 1..n - 1 {
        let h1 = x[i] - x[i - 1];
        let h2 = x[i + 1] - x[i];
        let terms = [f[i - 1] / (h1 * (h1 + h2)), -f[i] / (h1 * h2), f[i + 1] / (h2 * (h1 + h2))];
        let sum: f64 = terms.iter().sum();
        let mag: f64 = terms.iter().map(|t| t.abs()).sum();
        // cancellation noise on a locally linear density counts as zero
        d2[i] = if sum.abs() <= 64.0 * f64::EPSILON * mag { 0.0 } else { 2.0 * sum };
    }
    d2[0] = d2[1];
    d2[n - 1] = d2[n - 2];
    d2
}

/// Per-cell weights equidistributing `√(x |f''(x)|)`, plus a floor
/// proportional to log-width so flat stretches still get points.
fn cell_weights(grid: &SpectralGrid, density: &[f64]) -> Vec<(usize, f64)> {
    let mut cells = Vec::new();
    let mut curvature = Vec::new();
    let mut logw = Vec::new();
    for (start, end) in grid.segment_ranges() {
        if end - start < 2 {
            continue;
        }
        let xs = &grid.points[start..end];
        let fs = &density[start..end];
        let d2 = if xs.len() >= 3 { second_derivative(xs, fs) } else { vec![0.0; xs.len()] };
        for i in 0..xs.len() - 1 {
            let (a, b) = (xs[i], xs[i + 1]);
            let mid = (a * b).sqrt();
            let f2 = 0.5 * (d2[i].abs() + d2[i + 1].abs());
            let k = (b - a) * (mid * f2).sqrt();
            cells.push(start + i);
            curvature.push(if k.is_finite() { k } else { 0.0 });
            logw.push((b / a).ln());
        }
    }
    let kmax = curvature.iter().copied().fold(0.0, f64::max);
    let lmax = logw.iter().copied().fold(0.0, f64::max);
    cells
        .into_iter()
        .zip(curvature.iter().zip(&logw))
        .map(|(c, (&k, &l))| {
            let w = if kmax > 0.0 { k + CURVATURE_FLOOR * kmax * l / lmax } else { l };
            (c, w)
        })
        .collect()
}

/// Largest-remainder apportionment of `total` items by `weights`.
pub fn apportion(weights: &[f64], total: usize) -> Vec<usize> {
    let sum: f64 = weights.iter().sum();
    if weights.is_empty() || !(sum > 0.0) {
        return vec![0; weights.len()];
    }
    let quotas: Vec<f64> = weights.iter().map(|w| total as f64 * w / sum).collect();
    let mut counts: Vec<usize> = quotas.iter().map(|q| q.floor() as usize).collect();
    let assigned: usize = counts.iter().sum();
    let mut order: Vec<usize> = (0..weights.len()).collect();
    order.sort_by(|&a, &b| {
        let ra = quotas[a] - quotas[a].floor();
        let rb = quotas[b] - quotas[b].floor();
        rb.total_cmp(&ra).then(a.cmp(&b))
    });
    for &i in order.iter().take(total.saturating_sub(assigned)) {
        counts[i] += 1;
    }
    counts
}

/// Refined grid with `⌈ratio · initial_size⌉` extra points, returned along
/// with the indices (in the new grid) of the points that were added.
pub fn regrid_with_new(grid: &SpectralGrid, density: &[f64], ratio: f64) -> (SpectralGrid, Vec<usize>) {
    assert_eq!(grid.len(), density.len(), "density must be evaluated on every grid point");
    let add = (ratio * grid.initial_size as f64).ceil() as usize;
    let weighted = cell_weights(grid, density);
    let weights: Vec<f64> = weighted.iter().map(|&(_, w)| w).collect();
    let counts = apportion(&weights, add);

    let mut extra = vec![0usize; grid.len()];
    for (&(cell, _), &n) in weighted.iter().zip(&counts) {
        extra[cell] = n;
    }

    let mut points = Vec::with_capacity(grid.len() + add);
    let mut segment_of = Vec::with_capacity(grid.len() + add);
    let mut fresh = Vec::with_capacity(add);
    for i in 0..grid.len() {
        let a = grid.points[i];
        points.push(a);
        segment_of.push(grid.segment_of[i]);
        let n = extra[i];
        if n == 0 {
            continue;
        }
        let b = grid.points[i + 1];
        let ratio = (b / a).ln();
        for j in 1..=n {
            let x = a * (ratio * j as f64 / (n + 1) as f64).exp();
            if x > *points.last().unwrap() && x < b {
                fresh.push(points.len());
                points.push(x);
                segment_of.push(grid.segment_of[i]);
            }
        }
    }
    (SpectralGrid { points, segment_of, initial_size: grid.initial_size }, fresh)
}

pub fn regrid(grid: &SpectralGrid, density: &[f64], ratio: f64) -> SpectralGrid {
    regrid_with_new(grid, density, ratio).0
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;

    fn cfg() -> SolverConfig {
        SolverConfig::default()
    }

    #[test]
    fn dispersion_examples() {
        let iv = dispersion_intervals(&[1.0], 0.25, 1.001);
        // (1 − √0.25)² = 0.25, (1 + √0.25)² = 2.25
        assert_abs_diff_eq!(iv[0].lo, 0.25 / 1.001, epsilon = 1e-15);
        assert_abs_diff_eq!(iv[0].hi, 2.25 * 1.001, epsilon = 1e-15);
        assert_abs_diff_eq!(iv[0].lo, 0.249750, epsilon = 1e-6);
        assert_abs_diff_eq!(iv[0].hi, 2.252250, epsilon = 1e-6);

        let iv = dispersion_intervals(&[1.0, 8.0], 0.05, 1.001);
        assert_abs_diff_eq!(iv[0].hi, 1.498710, epsilon = 1e-6);
        assert_abs_diff_eq!(iv[1].lo, 4.817473, epsilon = 1e-6);
        assert!(iv[0].hi < iv[1].lo);

        let iv = dispersion_intervals(&[1.0, 8.0], 0.5, 1.001);
        assert!(iv[0].hi > iv[1].lo);
        assert_abs_diff_eq!(iv[0].hi, 2.914214 * 1.001, epsilon = 1e-5);
        assert_abs_diff_eq!(iv[1].lo, 8.0 * 0.085786 / 1.001, epsilon = 1e-5);

        assert!(dispersion_intervals(&[0.0, 0.0], 0.5, 1.001).is_empty());
    }

    #[test]
    fn partition_examples() {
        let pool = [1.0, 1.0, 8.0, 8.0];
        let segs = detect_support(&pool, 0.05, 1.001).unwrap();
        assert_eq!(segs.len(), 2);
        assert_eq!(segs.iter().map(|s| s.eig_count).collect::<Vec<_>>(), vec![2, 2]);

        let iv = dispersion_intervals(&pool, 0.5, 1.001);
        let segs = partition_segments(&iv).unwrap();
        assert_eq!(segs.len(), 1);
        assert_eq!(segs[0].lo, iv[0].lo);
        assert_eq!(segs[0].hi, iv[3].hi);
        assert_eq!(segs[0].eig_count, 4);

        let iv = dispersion_intervals(&[3.0], 0.5, 1.001);
        assert_eq!(partition_segments(&iv).unwrap(), iv);

        assert!(matches!(partition_segments(&[]), Err(Error::DegenerateSpectrum)));
    }

    #[test]
    fn initial_grid_examples() {
        let seg = SupportSegment { lo: 1.0, hi: 10.0, eig_count: 2 };
        let g = initial_grid(&[seg], &cfg());
        assert_eq!(g.len(), 15);
        for (k, &x) in g.points.iter().enumerate() {
            assert_abs_diff_eq!(x, 10f64.powf(k as f64 / 14.0), epsilon = 1e-13);
        }

        let mut c = cfg();
        c.m_inner = 3;
        c.m_outer = 1;
        let e2 = std::f64::consts::E.powi(2);
        let g = initial_grid(&[SupportSegment { lo: 1.0, hi: e2, eig_count: 1 }], &c);
        assert_abs_diff_eq!(g.points[1], std::f64::consts::E, epsilon = 1e-14);
        assert_eq!(g.points, vec![1.0, g.points[1], e2]);

        let segs = [
            SupportSegment { lo: 1.0, hi: 2.0, eig_count: 10 },
            SupportSegment { lo: 5.0, hi: 9.0, eig_count: 1 },
        ];
        let g = initial_grid(&segs, &cfg());
        assert_eq!(g.len(), 30 + 15);
        assert!(g.points.windows(2).all(|w| w[0] < w[1]));
        assert_eq!(g.segment_ranges(), vec![(0, 30), (30, 45)]);
    }

    #[test]
    fn zero_lower_edge_is_floored() {
        let g = initial_grid(&[SupportSegment { lo: 0.0, hi: 2.0, eig_count: 1 }], &cfg());
        assert_abs_diff_eq!(g.points[0], 2e-12, epsilon = 1e-24);
    }

    #[test]
    fn regrid_flat_density_follows_log_width() {
        let seg = SupportSegment { lo: 1.0, hi: 10.0, eig_count: 2 };
        let g = initial_grid(&[seg], &cfg());
        let flat = vec![0.3; g.len()];
        let (g2, fresh) = regrid_with_new(&g, &flat, 1.0);
        assert_eq!(g2.len(), 30);
        assert_eq!(fresh.len(), 15);
        // log-uniform cells: one new point per cell, 14 cells, 15 points, so
        // exactly one cell gets a second point
        let mut per_cell = [0; 14];
        for &i in &fresh {
            let x = g2.points[i];
            per_cell[g.points.partition_point(|&p| p < x) - 1] += 1;
        }
        assert!(per_cell.iter().all(|&c| c == 1 || c == 2));
        assert!(g2.points.windows(2).all(|w| w[0] < w[1]));
    }

    #[test]
    fn regrid_count_contract() {
        let seg = SupportSegment { lo: 0.1, hi: 3.0, eig_count: 5 };
        let g = initial_grid(&[seg], &cfg());
        let dens: Vec<f64> = g.points.iter().map(|&x| crate::closedform::mp_density(x, 0.5)).collect();
        let g2 = regrid(&g, &dens, 1.0);
        assert_eq!(g.len(), 15);
        assert_eq!(g2.len(), 30);
        let g3 = regrid(&g2, &vec![0.0; 30], 2.0);
        assert_eq!(g3.len(), 60);
    }

    #[test]
    fn regrid_concentrates_at_sharp_edge() {
        // Uniform grid, density with a kink at x = 2: zero to the left, a
        // square-root rise to the right.
        let xs: Vec<f64> = (0..41).map(|i| 1.0 + 0.05 * i as f64).collect();
        let grid = SpectralGrid { points: xs.clone(), segment_of: vec![0; 41], initial_size: 41 };
        let f: Vec<f64> = xs.iter().map(|&x| if x <= 2.0 { 0.0 } else { (x - 2.0).sqrt() }).collect();
        let weighted = cell_weights(&grid, &f);
        let counts = apportion(&weighted.iter().map(|w| w.1).collect::<Vec<_>>(), 41);
        let edge = xs.iter().position(|&x| (x - 2.0).abs() < 1e-12).unwrap();
        let adjacent = [counts[edge - 1], counts[edge]];
        for (c, &n) in counts.iter().enumerate() {
            if c + 1 < edge - 1 || c > edge + 1 {
                assert!(adjacent[0] > n && adjacent[1] > n, "cell {c}: {n} vs {adjacent:?}");
            }
        }
    }

    #[test]
    fn apportion_is_exact() {
        assert_eq!(apportion(&[1.0, 1.0, 1.0], 4), vec![2, 1, 1]);
        assert_eq!(apportion(&[0.0, 0.0], 3), vec![0, 0]);
        assert_eq!(apportion(&[3.0, 1.0], 4), vec![3, 1]);
    }

    proptest! {
        #[test]
        fn partition_is_idempotent(lams in prop::collection::vec(0.01f64..100.0, 1..40), g in 0.01f64..4.0) {
            prop_assume!((g - 1.0).abs() > 1e-6);
            let mut lams = lams;
            lams.sort_by(f64::total_cmp);
            let once = detect_support(&lams, g, 1.001).unwrap();
            let twice = partition_segments(&once).unwrap();
            prop_assert_eq!(&once, &twice);
            prop_assert_eq!(once.iter().map(|s| s.eig_count).sum::<usize>(), lams.len());
            prop_assert!(once.windows(2).all(|w| w[0].hi < w[1].lo));
        }

        #[test]
        fn grid_scales_with_covariance(lams in prop::collection::vec(0.05f64..20.0, 1..20), s in 0.01f64..100.0) {
            let mut lams = lams;
            lams.sort_by(f64::total_cmp);
            let scaled: Vec<f64> = lams.iter().map(|l| l * s).collect();
            let a = initial_grid(&detect_support(&lams, 0.3, 1.001).unwrap(), &SolverConfig::default());
            let b = initial_grid(&detect_support(&scaled, 0.3, 1.001).unwrap(), &SolverConfig::default());
            prop_assert_eq!(a.len(), b.len());
            for (x, y) in a.points.iter().zip(&b.points) {
                prop_assert!((x * s - y).abs() <= 1e-12 * y);
            }
        }

        #[test]
        fn grid_within_outer_bounds(lams in prop::collection::vec(0.05f64..20.0, 1..20), g in 0.01f64..3.0) {
            prop_assume!((g - 1.0).abs() > 1e-6);
            let mut lams = lams;
            lams.sort_by(f64::total_cmp);
            let grid = initial_grid(&detect_support(&lams, g, 1.001).unwrap(), &SolverConfig::default());
            let a = (1.0 - g.sqrt()).powi(2) / 1.001 * lams[0];
            let b = (1.0 + g.sqrt()).powi(2) * 1.001 * lams[lams.len() - 1];
            prop_assert!(grid.points[0] >= a * (1.0 - 1e-15));
            prop_assert!(*grid.points.last().unwrap() <= b * (1.0 + 1e-15));
            let p = lams.len();
            prop_assert!(grid.len() >= 3 * p && grid.len() <= 15 * p.max(1) + 15);
        }
    }
}
