//! Small numerical building blocks: compensated summation, Gauss-Legendre
//! rules, adaptive quadrature and the fixed-width decimal formatting used in
//! every CSV the crate writes.

use std::sync::OnceLock;

use crate::error::{Error, Result};

/// Neumaier-compensated accumulator.
///
/// Carries a running correction term, which gives roughly twice the working
/// precision for long sums of mixed-sign terms.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct CompensatedSum {
    sum: f64,
    comp: f64,
}

impl CompensatedSum {
    pub fn new() -> Self {
        Self::default()
    }

    #[inline]
    pub fn add(&mut self, x: f64) {
        let t = self.sum + x;
        if self.sum.abs() >= x.abs() {
            self.comp += (self.sum - t) + x;
        } else {
            self.comp += (x - t) + self.sum;
        }
        self.sum = t;
    }

    /// Folds another accumulator into this one (sum and correction).
    pub fn merge(&mut self, other: &CompensatedSum) {
        self.add(other.sum);
        self.add(other.comp);
    }

    #[inline]
    pub fn value(&self) -> f64 {
        self.sum + self.comp
    }
}

impl FromIterator<f64> for CompensatedSum {
    fn from_iter<I: IntoIterator<Item = f64>>(iter: I) -> Self {
        let mut acc = CompensatedSum::new();
        for x in iter {
            acc.add(x);
        }
        acc
    }
}

/// Compensated sum of an iterator of terms.
pub fn compensated_sum<I: IntoIterator<Item = f64>>(iter: I) -> f64 {
    iter.into_iter().collect::<CompensatedSum>().value()
}

/// Formats a real with 17 significant digits (`d.dddddddddddddddde±x`).
pub fn sig17(x: f64) -> String {
    if x.is_finite() {
        format!("{:.16e}", x)
    } else if x.is_nan() {
        "nan".to_string()
    } else if x > 0.0 {
        "inf".to_string()
    } else {
        "-inf".to_string()
    }
}

/// Gauss-Legendre rule on [-1, 1].
#[derive(Debug, Clone)]
pub struct GaussLegendre {
    nodes: Vec<f64>,
    weights: Vec<f64>,
}

impl GaussLegendre {
    /// Builds the `order`-point rule by Newton iteration on the Legendre
    /// polynomial, starting from the Chebyshev-like initial guesses.
    pub fn new(order: usize) -> Self {
        assert!(order >= 1, "Gauss-Legendre order must be positive");
        let n = order;
        let mut nodes = vec![0.0; n];
        let mut weights = vec![0.0; n];
        let m = n.div_ceil(2);
        for i in 0..m {
            let mut x = (std::f64::consts::PI * (i as f64 + 0.75) / (n as f64 + 0.5)).cos();
            let mut dp = 0.0;
            for _ in 0..100 {
                let (p, d) = legendre(n, x);
                dp = d;
                let dx = p / d;
                x -= dx;
                if dx.abs() < 1e-16 {
                    break;
                }
            }
            let (_, d) = legendre(n, x);
            if d != 0.0 {
                dp = d;
            }
            let w = 2.0 / ((1.0 - x * x) * dp * dp);
            nodes[i] = -x;
            nodes[n - 1 - i] = x;
            weights[i] = w;
            weights[n - 1 - i] = w;
        }
        if n % 2 == 1 {
            nodes[n / 2] = 0.0;
        }
        Self { nodes, weights }
    }

    pub fn order(&self) -> usize {
        self.nodes.len()
    }

    pub fn nodes(&self) -> &[f64] {
        &self.nodes
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    /// Applies the rule on [a, b]. No orientation handling: callers pass a < b.
    #[inline]
    pub fn integrate<F: FnMut(f64) -> f64>(&self, mut f: F, a: f64, b: f64) -> f64 {
        let half = 0.5 * (b - a);
        let mid = 0.5 * (a + b);
        let mut acc = 0.0;
        for (x, w) in self.nodes.iter().zip(&self.weights) {
            acc += w * f(mid + half * x);
        }
        acc * half
    }
}

fn legendre(n: usize, x: f64) -> (f64, f64) {
    let mut p0 = 1.0;
    let mut p1 = x;
    if n == 0 {
        return (1.0, 0.0);
    }
    for k in 2..=n {
        let kf = k as f64;
        let p2 = ((2.0 * kf - 1.0) * x * p1 - (kf - 1.0) * p0) / kf;
        p0 = p1;
        p1 = p2;
    }
    let d = n as f64 * (x * p1 - p0) / (x * x - 1.0);
    (p1, d)
}

/// Shared 5-point rule, exact for polynomials of degree <= 9.
pub fn gl5() -> &'static GaussLegendre {
    static RULE: OnceLock<GaussLegendre> = OnceLock::new();
    RULE.get_or_init(|| GaussLegendre::new(5))
}

/// Shared 10-point rule used by the adaptive integrator.
pub fn gl10() -> &'static GaussLegendre {
    static RULE: OnceLock<GaussLegendre> = OnceLock::new();
    RULE.get_or_init(|| GaussLegendre::new(10))
}

const MAX_INTERVALS: usize = 4000;

#[derive(Debug, Clone, Copy)]
struct Panel {
    a: f64,
    b: f64,
    left: f64,
    right: f64,
    err: f64,
}

impl Panel {
    fn with_coarse<F: FnMut(f64) -> f64>(f: &mut F, a: f64, b: f64, coarse: f64) -> Self {
        let rule = gl10();
        let m = 0.5 * (a + b);
        let left = rule.integrate(&mut *f, a, m);
        let right = rule.integrate(&mut *f, m, b);
        Self { a, b, left, right, err: (left + right - coarse).abs() }
    }

    fn value(&self) -> f64 {
        self.left + self.right
    }
}

/// Globally adaptive Gauss-Legendre quadrature of `f` over [a, b].
///
/// The interval is first split at every breakpoint strictly inside it; each
/// panel compares the 10-point rule against its two halves and the panel with
/// the largest discrepancy is bisected until the summed estimate drops below
/// `tol`. Orientation is honoured: `b < a` returns the negated integral.
pub fn integrate_adaptive<F: FnMut(f64) -> f64>(
    mut f: F,
    a: f64,
    b: f64,
    breakpoints: &[f64],
    tol: f64,
) -> Result<f64> {
    if !(a.is_finite() && b.is_finite()) {
        return Err(Error::Numeric(format!("non-finite integration limits [{a}, {b}]")));
    }
    if a == b {
        return Ok(0.0);
    }
    if b < a {
        return integrate_adaptive(f, b, a, breakpoints, tol).map(|v| -v);
    }
    let mut cuts: Vec<f64> = breakpoints.iter().copied().filter(|&p| p > a && p < b).collect();
    cuts.sort_by(f64::total_cmp);
    cuts.dedup();
    let mut edges = Vec::with_capacity(cuts.len() + 2);
    edges.push(a);
    edges.extend(cuts);
    edges.push(b);

    let rule = gl10();
    let mut panels: Vec<Panel> = edges
        .windows(2)
        .map(|w| {
            let coarse = rule.integrate(&mut f, w[0], w[1]);
            Panel::with_coarse(&mut f, w[0], w[1], coarse)
        })
        .collect();

    loop {
        let total: f64 = panels.iter().map(Panel::value).sum();
        let err: f64 = panels.iter().map(|p| p.err).sum();
        if !total.is_finite() || !err.is_finite() {
            return Err(Error::Numeric("non-finite integrand value".into()));
        }
        let scale: f64 = panels.iter().map(|p| p.left.abs() + p.right.abs()).sum();
        if err <= tol || err <= 8.0 * f64::EPSILON * scale {
            return Ok(compensated_sum(panels.iter().map(Panel::value)));
        }
        if panels.len() >= MAX_INTERVALS {
            return Err(Error::Numeric(format!(
                "adaptive quadrature did not reach tolerance {tol:e} (estimate {err:e})"
            )));
        }
        let (worst, _) =
            panels.iter().enumerate().max_by(|x, y| x.1.err.total_cmp(&y.1.err)).expect("at least one panel");
        let p = panels.swap_remove(worst);
        let m = 0.5 * (p.a + p.b);
        if m <= p.a || m >= p.b {
            return Err(Error::Numeric("adaptive quadrature interval underflow".into()));
        }
        panels.push(Panel::with_coarse(&mut f, p.a, m, p.left));
        panels.push(Panel::with_coarse(&mut f, m, p.b, p.right));
    }
}
