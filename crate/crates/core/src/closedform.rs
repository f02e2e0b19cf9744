//! Analytic reference laws: the Marčenko–Pastur density and the two-delta
//! density obtained from a cubic in closed form.

use std::f64::consts::PI;

use num_complex::Complex64;

/// Marčenko–Pastur law for identity covariance at aspect ratio `gamma`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MpLaw {
    pub gamma: f64,
    pub support_lo: f64,
    pub support_hi: f64,
    /// Point mass at zero, `1 − 1/γ` for `γ > 1`.
    pub atom_at_zero: f64,
}

impl MpLaw {
    pub fn new(gamma: f64) -> Self {
        let r = gamma.sqrt();
        Self {
            gamma,
            support_lo: (1.0 - r).powi(2),
            support_hi: (1.0 + r).powi(2),
            atom_at_zero: if gamma > 1.0 { 1.0 - 1.0 / gamma } else { 0.0 },
        }
    }

    pub fn density(&self, x: f64) -> f64 {
        mp_density(x, self.gamma)
    }

    pub fn continuous_mass(&self) -> f64 {
        self.cdf(self.support_hi) - self.atom_at_zero
    }

    /// Distribution function including the atom at zero.
    ///
    /// The continuous part is integrated after `x = c + h sin θ`, which turns
    /// the square-root edges into a smooth integrand.
    pub fn cdf(&self, x: f64) -> f64 {
        if x < 0.0 {
            return 0.0;
        }
        let (lo, hi) = (self.support_lo, self.support_hi);
        if x <= lo {
            return self.atom_at_zero;
        }
        let upper = x.min(hi);
        let c = 0.5 * (lo + hi);
        let h = 0.5 * (hi - lo);
        let theta_hi = ((upper - c) / h).clamp(-1.0, 1.0).asin();
        let integrand = |t: f64| {
            let xt = c + h * t.sin();
            if xt <= 0.0 {
                return 0.0;
            }
            let cos = t.cos();
            h * h * cos * cos / (2.0 * PI * self.gamma * xt)
        };
        self.atom_at_zero + simpson(integrand, -PI / 2.0, theta_hi, 4000)
    }
}

/// Composite Simpson rule with `n` (even) panels.
pub(crate) fn simpson(f: impl Fn(f64) -> f64, a: f64, b: f64, n: usize) -> f64 {
    let n = n + n % 2;
    if b <= a {
        return 0.0;
    }
    let h = (b - a) / n as f64;
    let mut s = f(a) + f(b);
    for i in 1..n {
        let w = if i % 2 == 1 { 4.0 } else { 2.0 };
        s += w * f(a + h * i as f64);
    }
    s * h / 3.0
}

/// Continuous Marčenko–Pastur density; the atom at zero for `γ > 1` is not
/// part of it.
pub fn mp_density(x: f64, gamma: f64) -> f64 {
    let r = gamma.sqrt();
    let lo = (1.0 - r).powi(2);
    let hi = (1.0 + r).powi(2);
    if x <= lo || x >= hi || x <= 0.0 {
        return 0.0;
    }
    ((hi - x) * (x - lo)).sqrt() / (2.0 * PI * gamma * x)
}

/// Coefficients `[a, b, c, d]` of `a u³ + b u² + c u + d` whose roots are the
/// admissible values of `u = 1 + γ e` for a two-point population spectrum.
fn two_delta_cubic(x: f64, gamma: f64, lambdas: [f64; 2], weights: [f64; 2]) -> [f64; 4] {
    let [l1, l2] = lambdas;
    let mu = weights[0] * l1 + weights[1] * l2;
    [
        x * x,
        -x * (l1 + l2) - x * x + gamma * x * mu,
        l1 * l2 + x * (l1 + l2) - gamma * l1 * l2,
        -l1 * l2,
    ]
}

fn cubic_discriminant([a, b, c, d]: [f64; 4]) -> f64 {
    18.0 * a * b * c * d - 4.0 * b.powi(3) * d + b * b * c * c - 4.0 * a * c.powi(3) - 27.0 * a * a * d * d
}

/// All three roots of `a u³ + b u² + c u + d` by Cardano's formula in complex
/// arithmetic.
pub fn cubic_roots(a: Complex64, b: Complex64, c: Complex64, d: Complex64) -> [Complex64; 3] {
    let bb = b / a;
    let cc = c / a;
    let dd = d / a;
    let shift = bb / 3.0;
    let p = cc - bb * bb / 3.0;
    let q = bb * bb * bb * (2.0 / 27.0) - bb * cc / 3.0 + dd;
    let s = (q * q / 4.0 + p * p * p / 27.0).sqrt();
    // Larger of the two candidates avoids cancellation.
    let plus = -q / 2.0 + s;
    let minus = -q / 2.0 - s;
    let w3 = if plus.norm() >= minus.norm() { plus } else { minus };
    let omega = Complex64::new(-0.5, 3f64.sqrt() / 2.0);
    if w3.norm() == 0.0 {
        let t = (-q).powf(1.0 / 3.0);
        return [t - shift, t * omega - shift, t * omega * omega - shift];
    }
    let w = w3.powf(1.0 / 3.0);
    let mut roots = [Complex64::new(0.0, 0.0); 3];
    let mut wk = w;
    for r in roots.iter_mut() {
        *r = wk - p / (3.0 * wk) - shift;
        wk *= omega;
    }
    roots
}

/// Limiting density for the population spectrum `w₁δ(λ₁) + w₂δ(λ₂)`.
pub fn two_delta_density(x: f64, gamma: f64, lambdas: [f64; 2], weights: [f64; 2]) -> f64 {
    two_delta_stieltjes(x, gamma, lambdas, weights).map_or(0.0, |m| m.im / PI)
}

/// Stieltjes value on the real axis inside the support, `None` outside.
pub fn two_delta_stieltjes(x: f64, gamma: f64, lambdas: [f64; 2], weights: [f64; 2]) -> Option<Complex64> {
    if x <= 0.0 {
        return None;
    }
    let [l1, l2] = lambdas;
    if l1 == l2 {
        let f = mp_density(x / l1, gamma) / l1;
        return (f > 0.0).then(|| Complex64::new(0.0, f * PI));
    }
    let coeffs = two_delta_cubic(x, gamma, lambdas, weights);
    if cubic_discriminant(coeffs) >= 0.0 {
        return None;
    }
    let [a, b, c, d] = coeffs.map(|v| Complex64::new(v, 0.0));
    let z = Complex64::new(x, 0.0);
    cubic_roots(a, b, c, d)
        .into_iter()
        .map(|u| weights[0] * u / (l1 - z * u) + weights[1] * u / (l2 - z * u))
        .filter(|m| m.im > 0.0)
        .max_by(|p, q| p.im.total_cmp(&q.im))
}

/// Support intervals of the two-delta law inside `[lo, hi]`, located by a
/// discriminant sign scan on `n` log-spaced abscissae and refined by
/// bisection.
pub fn two_delta_support(gamma: f64, lambdas: [f64; 2], weights: [f64; 2], lo: f64, hi: f64, n: usize) -> Vec<(f64, f64)> {
    let inside = |x: f64| {
        if lambdas[0] == lambdas[1] {
            mp_density(x / lambdas[0], gamma) > 0.0
        } else {
            cubic_discriminant(two_delta_cubic(x, gamma, lambdas, weights)) < 0.0
        }
    };
    let refine = |mut a: f64, mut b: f64| {
        // invariant: inside(a) != inside(b)
        let fa = inside(a);
        for _ in 0..200 {
            let mid = 0.5 * (a + b);
            if mid <= a || mid >= b {
                break;
            }
            if inside(mid) == fa {
                a = mid;
            } else {
                b = mid;
            }
        }
        0.5 * (a + b)
    };
    let ratio = (hi / lo).ln();
    let xs: Vec<f64> = (0..n).map(|i| lo * (ratio * i as f64 / (n - 1) as f64).exp()).collect();
    let mut out = Vec::new();
    let mut start: Option<f64> = inside(xs[0]).then_some(xs[0]);
    for w in xs.windows(2) {
        let (a, b) = (w[0], w[1]);
        match (inside(a), inside(b)) {
            (false, true) => start = Some(refine(a, b)),
            (true, false) => {
                if let Some(s) = start.take() {
                    out.push((s, refine(a, b)));
                }
            }
            _ => {}
        }
    }
    if let Some(s) = start {
        out.push((s, hi));
    }
    out
}
