//! Single-parameter Gaussian approximations to density evolution.
//!
//! Under the symmetry condition a Gaussian message density is fully described
//! by its mean `m` (variance `2m`), so density evolution collapses to scalar
//! recursions per edge type.  Three classical recursions are provided, all
//! sharing the additive variable-node rule
//! `m_v(i) = m_ch + (d_i − 1)·m_u(i) + Σ_{k≠i} d_k·m_u(k)`:
//!
//! * [`ApproxMethod::Mean`] — check nodes map means through
//!   `φ(m) = 1 − E[tanh(u/2)]`, `u ~ N(m, 2m)`:
//!   `m_u = φ⁻¹(1 − Π (1 − φ(m_v)))`;
//! * [`ApproxMethod::Ber`] — tracks per-edge error probabilities:
//!   `P_u = ½(1 − Π(1 − 2·P_v))` at checks, `P_v = Q(√(m_v/2))` at
//!   variables, with the mean reconstructed as `m_u = 2·Q⁻¹(P_u)²`;
//! * [`ApproxMethod::Rca`] — reciprocal-channel mapping
//!   `ψ(m) = C⁻¹(1 − C(m))` (an involution built from the BI-AWGN capacity
//!   `C`), which is additive at check nodes.
//!
//! `φ` and the capacity deficit `1 − C` are precomputed once per process into
//! monotone-cubic lookup tables (10001 and 38302 entries) built by composite
//! Gauss–Legendre quadrature; beyond the tabulated range both follow the
//! calibrated tail law `K·e^{-m/4}/√m`.
//!
//! # Example
//!
//! ```
//! use metde::gauss_approx::{phi, phi_inv, psi, q_func};
//!
//! // φ is a decreasing bijection of [0, ∞) onto (0, 1].
//! assert_eq!(phi(0.0), 1.0);
//! let y = phi(3.0);
//! assert!((phi_inv(y) - 3.0).abs() < 1e-9);
//! // ψ is an involution: ψ(ψ(m)) = m.
//! assert!((psi(psi(2.0)) - 2.0).abs() < 1e-6);
//! // Q is the standard Gaussian tail.
//! assert!((q_func(0.0) - 0.5).abs() < 1e-15);
//! ```

use std::sync::OnceLock;

use statrs::function::erf::{erfc, erfc_inv};

use crate::ensemble::MetEnsemble;
use crate::trace::{Phase, Trace, TraceRow};
use crate::{Error, Result};

/// Upper edge of both lookup tables; beyond it the calibrated tail law
/// applies.  At this point `φ` is already below `2e-12`, so the tables cover
/// the entire range that can influence a threshold.
const TABLE_M_MAX: f64 = 100.0;

/// Messages means are clamped to this value; `φ(1000)` underflows any
/// meaningful probability, so larger means carry no extra information.
pub const MEAN_CAP: f64 = 1e3;

// ---------------------------------------------------------------------------
// Gauss-Legendre quadrature
// ---------------------------------------------------------------------------

/// Nodes and weights of the `n`-point Gauss-Legendre rule on `[-1, 1]`,
/// computed by Newton iteration on the Legendre polynomial recurrence.
fn gauss_legendre(n: usize) -> (Vec<f64>, Vec<f64>) {
    let mut nodes = vec![0.0; n];
    let mut weights = vec![0.0; n];
    for i in 0..n.div_ceil(2) {
        // Tricomi's initial guess for the i-th positive root.
        let mut x = (std::f64::consts::PI * (i as f64 + 0.75) / (n as f64 + 0.5)).cos();
        let mut dp = 0.0;
        for _ in 0..100 {
            // Evaluate P_n(x) and P_n'(x) by the three-term recurrence.
            let (mut p0, mut p1) = (1.0, x);
            for k in 2..=n {
                let k = k as f64;
                let p2 = ((2.0 * k - 1.0) * x * p1 - (k - 1.0) * p0) / k;
                p0 = p1;
                p1 = p2;
            }
            dp = n as f64 * (x * p1 - p0) / (x * x - 1.0);
            let dx = p1 / dp;
            x -= dx;
            if dx.abs() < 1e-15 {
                break;
            }
        }
        nodes[i] = -x;
        nodes[n - 1 - i] = x;
        let w = 2.0 / ((1.0 - x * x) * dp * dp);
        weights[i] = w;
        weights[n - 1 - i] = w;
    }
    (nodes, weights)
}

fn gl32() -> &'static (Vec<f64>, Vec<f64>) {
    static GL: OnceLock<(Vec<f64>, Vec<f64>)> = OnceLock::new();
    GL.get_or_init(|| gauss_legendre(32))
}

/// Integrates `f` over `[a, b]` split into `panels` equal panels with the
/// 32-point Gauss-Legendre rule on each.
fn integrate(f: impl Fn(f64) -> f64, a: f64, b: f64, panels: usize) -> f64 {
    let (nodes, weights) = gl32();
    let width = (b - a) / panels as f64;
    let mut total = 0.0;
    for p in 0..panels {
        let lo = a + p as f64 * width;
        let mid = lo + 0.5 * width;
        let scale = 0.5 * width;
        let mut acc = 0.0;
        for (x, w) in nodes.iter().zip(weights) {
            acc += w * f(mid + scale * x);
        }
        total += scale * acc;
    }
    total
}

// ---------------------------------------------------------------------------
// Direct quadrature of φ and the capacity deficit
// ---------------------------------------------------------------------------

/// `log2(1 + e^{-x})`, stable for both signs of `x`.
fn log2_1p_exp_neg(x: f64) -> f64 {
    if x >= 0.0 {
        (-x).exp().ln_1p() / std::f64::consts::LN_2
    } else {
        (-x + x.exp().ln_1p()) / std::f64::consts::LN_2
    }
}

/// The symmetric-Gaussian window `mean ± 12·√(2·mean)` split into one panel
/// per standard deviation (the integrands vary by at most ~20 e-folds per
/// panel, far inside the 32-point rule's comfort zone).
fn symmetric_window(m: f64) -> (f64, f64, usize) {
    let sd = (2.0 * m).sqrt();
    (m - 12.0 * sd, m + 12.0 * sd, 24)
}

/// `φ(m) = 1 − E[tanh(u/2)]` for `u ~ N(m, 2m)`, by direct quadrature.
fn phi_direct(m: f64) -> f64 {
    if m <= 0.0 {
        return 1.0;
    }
    let norm = 1.0 / (2.0 * (std::f64::consts::PI * m).sqrt());
    let (a, b, panels) = symmetric_window(m);
    let expectation = integrate(
        |u| {
            let d = u - m;
            (u / 2.0).tanh() * (-d * d / (4.0 * m)).exp()
        },
        a,
        b,
        panels,
    ) * norm;
    (1.0 - expectation).clamp(0.0, 1.0)
}

/// Capacity deficit `1 − C(m) = E[log2(1 + e^{-x})]` for `x ~ N(m, 2m)`, by
/// direct quadrature.  Computing the deficit (all positive terms) instead of
/// the capacity keeps full relative precision when `C` is close to one.
fn capacity_deficit_direct(m: f64) -> f64 {
    if m <= 0.0 {
        return 1.0;
    }
    let norm = 1.0 / (2.0 * (std::f64::consts::PI * m).sqrt());
    let (a, b, panels) = symmetric_window(m);
    let deficit = integrate(
        |x| {
            let d = x - m;
            log2_1p_exp_neg(x) * (-d * d / (4.0 * m)).exp()
        },
        a,
        b,
        panels,
    ) * norm;
    deficit.clamp(0.0, 1.0)
}

// ---------------------------------------------------------------------------
// Monotone cubic interpolation
// ---------------------------------------------------------------------------

/// Piecewise-cubic Hermite interpolant with Fritsch-Carlson slope limiting:
/// strictly monotone data produce a monotone interpolant, which keeps the
/// inverse well defined.
struct MonotoneCubic {
    xs: Vec<f64>,
    ys: Vec<f64>,
    slopes: Vec<f64>,
}

impl MonotoneCubic {
    /// Builds the interpolant.  `end_slopes` supplies exact derivatives at the
    /// first and last knot when available; the plain secant there is only
    /// second-order accurate and visibly degrades the outermost segments.
    fn new(xs: Vec<f64>, ys: Vec<f64>, end_slopes: Option<(f64, f64)>) -> MonotoneCubic {
        let n = xs.len();
        assert!(n >= 2 && ys.len() == n, "need at least two knots");
        let mut secants = vec![0.0; n - 1];
        for k in 0..n - 1 {
            secants[k] = (ys[k + 1] - ys[k]) / (xs[k + 1] - xs[k]);
        }
        let mut slopes = vec![0.0; n];
        match end_slopes {
            Some((first, last)) => {
                slopes[0] = first;
                slopes[n - 1] = last;
            }
            None => {
                slopes[0] = secants[0];
                slopes[n - 1] = secants[n - 2];
            }
        }
        for k in 1..n - 1 {
            slopes[k] = if secants[k - 1] * secants[k] <= 0.0 {
                0.0
            } else {
                // Second-order estimate on non-uniform spacing: weights chosen
                // to cancel the curvature term of each one-sided secant.
                let (h0, h1) = (xs[k] - xs[k - 1], xs[k + 1] - xs[k]);
                (h1 * secants[k - 1] + h0 * secants[k]) / (h0 + h1)
            };
        }
        // Fritsch-Carlson limiting: keep (α, β) inside the circle of radius 3.
        for k in 0..n - 1 {
            if secants[k] == 0.0 {
                slopes[k] = 0.0;
                slopes[k + 1] = 0.0;
                continue;
            }
            let alpha = slopes[k] / secants[k];
            let beta = slopes[k + 1] / secants[k];
            if alpha < 0.0 {
                slopes[k] = 0.0;
            }
            if beta < 0.0 {
                slopes[k + 1] = 0.0;
            }
            let r = alpha.hypot(beta);
            if r > 3.0 {
                let tau = 3.0 / r;
                slopes[k] = tau * alpha * secants[k];
                slopes[k + 1] = tau * beta * secants[k];
            }
        }
        MonotoneCubic { xs, ys, slopes }
    }

    /// Index of the segment containing `x` (clamped to the knot range).
    fn segment(&self, x: f64) -> usize {
        let n = self.xs.len();
        match self.xs.partition_point(|&k| k <= x) {
            0 => 0,
            p if p >= n => n - 2,
            p => p - 1,
        }
    }

    fn eval(&self, x: f64) -> f64 {
        let k = self.segment(x);
        let h = self.xs[k + 1] - self.xs[k];
        let t = (x - self.xs[k]) / h;
        let t2 = t * t;
        let t3 = t2 * t;
        let h00 = 2.0 * t3 - 3.0 * t2 + 1.0;
        let h10 = t3 - 2.0 * t2 + t;
        let h01 = -2.0 * t3 + 3.0 * t2;
        let h11 = t3 - t2;
        h00 * self.ys[k] + h10 * h * self.slopes[k] + h01 * self.ys[k + 1]
            + h11 * h * self.slopes[k + 1]
    }

    /// Solves `eval(x) = y` for strictly decreasing data by bisection within
    /// the bracketing segment.  `y` outside the data range clamps to the
    /// nearest knot.
    fn solve_decreasing(&self, y: f64) -> f64 {
        let n = self.xs.len();
        if y >= self.ys[0] {
            return self.xs[0];
        }
        if y <= self.ys[n - 1] {
            return self.xs[n - 1];
        }
        // ys is decreasing: find the first knot with value <= y.
        let hi = self.ys.partition_point(|&v| v > y);
        let k = hi - 1; // y ∈ [ys[hi], ys[k]]
        let (mut lo, mut hi) = (self.xs[k], self.xs[k + 1]);
        for _ in 0..80 {
            let mid = 0.5 * (lo + hi);
            if self.eval(mid) > y {
                lo = mid;
            } else {
                hi = mid;
            }
            if hi - lo <= 1e-15 * hi.abs().max(1.0) {
                break;
            }
        }
        0.5 * (lo + hi)
    }
}

// ---------------------------------------------------------------------------
// φ and its inverse
// ---------------------------------------------------------------------------

/// Fourth-order one-sided derivative of `f` at `x0`; a negative `delta`
/// differentiates from the right edge of a domain.
fn one_sided_slope(f: impl Fn(f64) -> f64, x0: f64, delta: f64) -> f64 {
    (-25.0 * f(x0) + 48.0 * f(x0 + delta) - 36.0 * f(x0 + 2.0 * delta)
        + 16.0 * f(x0 + 3.0 * delta)
        - 3.0 * f(x0 + 4.0 * delta))
        / (12.0 * delta)
}

/// 10001 knots, uniform 0.01 spacing on [0, 100].
fn phi_table() -> &'static MonotoneCubic {
    static TABLE: OnceLock<MonotoneCubic> = OnceLock::new();
    TABLE.get_or_init(|| {
        let n = 10_001;
        let step = TABLE_M_MAX / (n - 1) as f64;
        let xs: Vec<f64> = (0..n).map(|i| i as f64 * step).collect();
        let ys: Vec<f64> = xs.iter().map(|&m| phi_direct(m)).collect();
        let ends = (
            one_sided_slope(phi_direct, 0.0, 1e-3),
            one_sided_slope(phi_direct, TABLE_M_MAX, -1e-3),
        );
        MonotoneCubic::new(xs, ys, Some(ends))
    })
}

/// Tail extrapolation `f(m) = f(M)·e^{-(m-M)/4}·√(M/m)` shared by `φ` and
/// the capacity deficit, calibrated at the table edge `M`.
fn tail_law(value_at_edge: f64, m: f64) -> f64 {
    value_at_edge * (-(m - TABLE_M_MAX) / 4.0).exp() * (TABLE_M_MAX / m).sqrt()
}

/// Inverts the tail law: the `m > M` with `tail_law(edge, m) = y`.
fn tail_law_inverse(value_at_edge: f64, y: f64) -> f64 {
    // m = M + 4·ln(edge/y) + 2·ln(M/m); two fixed-point rounds suffice since
    // the log correction is slowly varying.
    let base = TABLE_M_MAX + 4.0 * (value_at_edge / y).ln();
    let mut m = base;
    for _ in 0..3 {
        m = base + 2.0 * (TABLE_M_MAX / m).ln();
    }
    m.max(TABLE_M_MAX)
}

/// `φ(m) = 1 − E[tanh(u/2)]` for `u ~ N(m, 2m)`: the probability-like check
/// statistic of the mean recursion.  Decreasing, `φ(0) = 1`, `φ(∞) = 0`.
pub fn phi(m: f64) -> f64 {
    if m <= 0.0 {
        1.0
    } else if m <= TABLE_M_MAX {
        phi_table().eval(m).clamp(0.0, 1.0)
    } else if m.is_finite() {
        tail_law(phi_table().ys[phi_table().ys.len() - 1], m)
    } else {
        0.0
    }
}

/// Inverse of [`phi`] on `(0, 1]`; `y ≤ 0` maps to infinity (the perfect
/// message) and `y ≥ 1` to zero (the erased message).
pub fn phi_inv(y: f64) -> f64 {
    if y >= 1.0 {
        return 0.0;
    }
    if y <= 0.0 {
        return f64::INFINITY;
    }
    let table = phi_table();
    let edge = table.ys[table.ys.len() - 1];
    if y < edge {
        tail_law_inverse(edge, y)
    } else {
        table.solve_decreasing(y)
    }
}

// ---------------------------------------------------------------------------
// BI-AWGN capacity, its inverse, and the reciprocal mapping ψ
// ---------------------------------------------------------------------------

/// 38302 knots for the capacity deficit `1 − C(m)`: `{0}`, 8301 log-spaced
/// knots on [1e-8, 0.1], and 30000 linear knots up to 100.  The log section
/// resolves the near-linear region `C(m) ≈ m/(4·ln 2)` that the `ψ` mapping
/// visits for every large input.
fn capacity_table() -> &'static MonotoneCubic {
    static TABLE: OnceLock<MonotoneCubic> = OnceLock::new();
    TABLE.get_or_init(|| {
        let mut xs = Vec::with_capacity(38_302);
        xs.push(0.0);
        let log_points = 8_301usize;
        let decades = (0.1f64 / 1e-8).ln();
        for j in 0..log_points {
            xs.push(1e-8 * (decades * j as f64 / (log_points - 1) as f64).exp());
        }
        let lin_points = 30_000usize;
        let step = (TABLE_M_MAX - 0.1) / lin_points as f64;
        for j in 1..=lin_points {
            xs.push(0.1 + j as f64 * step);
        }
        debug_assert_eq!(xs.len(), 38_302);
        let ys: Vec<f64> = xs.iter().map(|&m| capacity_deficit_direct(m)).collect();
        let ends = (
            one_sided_slope(capacity_deficit_direct, 0.0, 1e-3),
            one_sided_slope(capacity_deficit_direct, TABLE_M_MAX, -1e-3),
        );
        MonotoneCubic::new(xs, ys, Some(ends))
    })
}

fn capacity_deficit(m: f64) -> f64 {
    if m <= 0.0 {
        1.0
    } else if m <= TABLE_M_MAX {
        capacity_table().eval(m).clamp(0.0, 1.0)
    } else if m.is_finite() {
        tail_law(capacity_table().ys[capacity_table().ys.len() - 1], m)
    } else {
        0.0
    }
}

/// Capacity of the BI-AWGN channel as a function of the channel-LLR mean
/// `m = 2/σ²`.  Increasing from `C(0) = 0` to `C(∞) = 1`.
pub fn awgn_capacity(m: f64) -> f64 {
    1.0 - capacity_deficit(m)
}

/// Inverse of [`awgn_capacity`]: the channel-LLR mean achieving capacity `c`.
pub fn awgn_capacity_inv(c: f64) -> f64 {
    if c <= 0.0 {
        return 0.0;
    }
    if c >= 1.0 {
        return f64::INFINITY;
    }
    let table = capacity_table();
    let edge = table.ys[table.ys.len() - 1];
    let deficit = 1.0 - c;
    if deficit < edge {
        return tail_law_inverse(edge, deficit);
    }
    // Below the first tabulated knot the capacity is linear: C(m) ≈ m/(4·ln 2).
    let first_knot_capacity = 1.0 - table.ys[1];
    if c <= first_knot_capacity {
        return c * 4.0 * std::f64::consts::LN_2;
    }
    table.solve_decreasing(deficit)
}

/// Reciprocal-channel mapping `ψ(m) = C⁻¹(1 − C(m))`, an involution of
/// `(0, ∞)` that makes check-node combining additive: ψ of the output mean is
/// the sum of ψ of the input means.  `ψ(0) = ∞` and `ψ(∞) = 0`.
pub fn psi(m: f64) -> f64 {
    if m <= 0.0 {
        return f64::INFINITY;
    }
    if !m.is_finite() {
        return 0.0;
    }
    // ψ(m) = C⁻¹(deficit(m)) since 1 − C = deficit.
    awgn_capacity_inv(capacity_deficit(m))
}

// ---------------------------------------------------------------------------
// Gaussian tail Q and its inverse
// ---------------------------------------------------------------------------

/// Gaussian tail probability `Q(x) = P(N(0,1) > x) = erfc(x/√2)/2`.
pub fn q_func(x: f64) -> f64 {
    0.5 * erfc(x / std::f64::consts::SQRT_2)
}

/// Inverse Gaussian tail on `(0, 1)`, Newton-polished to full precision.
/// Arguments at or below zero map to infinity, at or above one to `-∞`.
pub fn q_inv(p: f64) -> f64 {
    if p <= 0.0 {
        return f64::INFINITY;
    }
    if p >= 1.0 {
        return f64::NEG_INFINITY;
    }
    let mut x = std::f64::consts::SQRT_2 * erfc_inv(2.0 * p);
    // One to three Newton steps on Q(x) - p (Q' = -pdf) reach 1e-15 relative.
    for _ in 0..3 {
        let pdf = (-0.5 * x * x).exp() / (2.0 * std::f64::consts::PI).sqrt();
        if pdf <= f64::MIN_POSITIVE {
            break;
        }
        let step = (q_func(x) - p) / pdf;
        x += step;
        if step.abs() <= 1e-16 * x.abs().max(1.0) {
            break;
        }
    }
    x
}

// ---------------------------------------------------------------------------
// The scalar recursions
// ---------------------------------------------------------------------------

/// Which single-parameter recursion to run.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ApproxMethod {
    /// Mean recursion through `φ`.
    Mean,
    /// Error-probability recursion through `Q`.
    Ber,
    /// Reciprocal-channel recursion through `ψ`.
    Rca,
}

/// Iteration limits shared by the scalar recursions.
#[derive(Clone, Debug)]
pub struct ApproxConfig {
    /// Hard iteration cap.
    pub max_iterations: usize,
    /// Posterior error probability below which the run counts as converged.
    pub target_ber: f64,
}

impl Default for ApproxConfig {
    fn default() -> Self {
        ApproxConfig { max_iterations: 1000, target_ber: 1e-10 }
    }
}

/// Result of a scalar-recursion run.
#[derive(Clone, Debug)]
pub struct ApproxOutcome {
    /// Whether the posterior error probability reached the target.
    pub converged: bool,
    /// Iterations executed.
    pub iterations: usize,
    /// Posterior error probability after the last iteration.
    pub final_ber: f64,
    /// Per-iteration history.
    pub trace: Trace,
}

/// Per-class channel-LLR means: `Σ_r b_r·(2/σ²)` over transmitted slots
/// (zero for purely punctured classes).
fn channel_means(ens: &MetEnsemble, sigma: f64) -> Result<Vec<f64>> {
    let m_ch = crate::channel::llr_mean(sigma)?;
    Ok(ens
        .var_classes()
        .iter()
        .map(|c| c.received[1..].iter().sum::<usize>() as f64 * m_ch)
        .collect())
}

/// One variable-node pass from per-type check-message means `m_u`.
///
/// Calls `visit(edge_type, class, per_class_mean)` for every class with a
/// socket on that edge type, and returns the posterior error probability
/// (class-fraction-weighted `Q(√(m/2))` of the all-edges means).
fn vn_pass(
    ens: &MetEnsemble,
    ch: &[f64],
    m_u: &[f64],
    mut visit: impl FnMut(usize, usize, f64),
) -> f64 {
    let fractions = ens.var_class_fractions();
    let mut posterior = 0.0;
    for (c, class) in ens.var_classes().iter().enumerate() {
        let all_edges: f64 =
            ch[c] + class.degrees.iter().zip(m_u).map(|(&d, &u)| d as f64 * u).sum::<f64>();
        for (i, &d) in class.degrees.iter().enumerate() {
            if d > 0 {
                // Remove the one incoming copy on the outgoing edge type.
                visit(i, c, all_edges - m_u[i]);
            }
        }
        posterior += fractions[c] * q_func((all_edges / 2.0).sqrt());
    }
    posterior
}

/// Check-node pass for the mean recursion: per-class combination through φ,
/// then edge-fraction averaging.
fn cn_pass_mean(ens: &MetEnsemble, m_v: &[f64]) -> Vec<f64> {
    let m_e = ens.edge_types();
    let phis: Vec<f64> = m_v.iter().map(|&m| phi(m)).collect();
    let log1m: Vec<f64> = phis.iter().map(|&p| (-p).ln_1p()).collect();
    let mut m_u = vec![0.0; m_e];
    for i in 0..m_e {
        let weights = ens.chk_edge_weights(i);
        for (j, class) in ens.chk_classes().iter().enumerate() {
            if class.degrees[i] == 0 {
                continue;
            }
            let mut exponent_sum = 0.0;
            for (k, &d) in class.degrees.iter().enumerate() {
                let e = if k == i { d - 1 } else { d };
                if e > 0 {
                    exponent_sum += e as f64 * log1m[k];
                }
            }
            // m = φ⁻¹(1 − Π(1 − φ)) with the product kept in log form.
            let y = -exponent_sum.exp_m1();
            m_u[i] += weights[j] * phi_inv(y).min(MEAN_CAP);
        }
    }
    m_u
}

/// Check-node pass for the reciprocal-channel recursion: ψ is additive.
fn cn_pass_rca(ens: &MetEnsemble, m_v: &[f64]) -> Vec<f64> {
    let m_e = ens.edge_types();
    let psis: Vec<f64> = m_v.iter().map(|&m| psi(m)).collect();
    let mut m_u = vec![0.0; m_e];
    for i in 0..m_e {
        let weights = ens.chk_edge_weights(i);
        for (j, class) in ens.chk_classes().iter().enumerate() {
            if class.degrees[i] == 0 {
                continue;
            }
            let mut sum = 0.0;
            for (k, &d) in class.degrees.iter().enumerate() {
                let e = if k == i { d - 1 } else { d };
                if e > 0 {
                    sum += e as f64 * psis[k];
                }
            }
            m_u[i] += weights[j] * psi(sum).min(MEAN_CAP);
        }
    }
    m_u
}

/// Check-node pass for the error-probability recursion.
fn cn_pass_ber(ens: &MetEnsemble, p_v: &[f64]) -> Vec<f64> {
    let m_e = ens.edge_types();
    let log1m2p: Vec<f64> = p_v.iter().map(|&p| (-2.0 * p).ln_1p()).collect();
    let mut p_u = vec![0.0; m_e];
    for i in 0..m_e {
        let weights = ens.chk_edge_weights(i);
        for (j, class) in ens.chk_classes().iter().enumerate() {
            if class.degrees[i] == 0 {
                continue;
            }
            let mut exponent_sum = 0.0;
            for (k, &d) in class.degrees.iter().enumerate() {
                let e = if k == i { d - 1 } else { d };
                if e > 0 {
                    exponent_sum += e as f64 * log1m2p[k];
                }
            }
            // P = (1 − Π(1 − 2P))/2, in log form.
            p_u[i] += weights[j] * (-0.5 * exponent_sum.exp_m1());
        }
    }
    p_u
}

/// Runs the mean recursion from an explicit starting state.
///
/// This is the continuation entry point the two-phase engine uses after
/// projecting densities to means: `init_m_u` seeds the per-type check-message
/// means, iteration numbering starts at `first_iteration`, and rows are
/// appended to `trace`.  Returns `(converged, iterations_executed,
/// final_ber)` where the iteration count includes only iterations run here.
pub(crate) fn run_mean_from(
    ens: &MetEnsemble,
    sigma: f64,
    cfg: &ApproxConfig,
    init_m_u: Vec<f64>,
    first_iteration: usize,
    last_iteration: usize,
    trace: &mut Trace,
) -> Result<(bool, usize, f64)> {
    let ch = channel_means(ens, sigma)?;
    let m_e = ens.edge_types();
    let mut m_u = init_m_u;
    let mut executed = 0;
    let mut last_ber = f64::NAN;
    for iteration in first_iteration..=last_iteration {
        let mut m_v = vec![0.0; m_e];
        let posterior = vn_pass(ens, &ch, &m_u, |i, c, mean| {
            m_v[i] += ens.var_edge_weights(i)[c] * mean;
        });
        for v in &mut m_v {
            *v = v.min(MEAN_CAP);
        }
        executed += 1;
        last_ber = posterior;
        let converged = posterior < cfg.target_ber;
        if !converged {
            m_u = cn_pass_mean(ens, &m_v);
        }
        trace.rows.push(TraceRow {
            iteration,
            phase: Phase::Gaussian,
            posterior_ber: posterior,
            mean_v: m_v,
            mean_u: m_u.clone(),
            kl_monitored: None,
            kl_v: None,
        });
        if converged {
            return Ok((true, executed, last_ber));
        }
    }
    Ok((false, executed, last_ber))
}

/// Runs the chosen scalar recursion from the cold start (no check
/// information: means zero, error probabilities one half).
pub fn run_approx(
    ens: &MetEnsemble,
    sigma: f64,
    method: ApproxMethod,
    cfg: &ApproxConfig,
) -> Result<ApproxOutcome> {
    if cfg.max_iterations == 0 {
        return Err(Error::InvalidParameter("max_iterations must be at least 1".into()));
    }
    if !(cfg.target_ber > 0.0) {
        return Err(Error::InvalidParameter(format!(
            "target_ber must be positive, got {}",
            cfg.target_ber
        )));
    }
    let mut trace = Trace::default();

    if method == ApproxMethod::Mean {
        let m_e = ens.edge_types();
        let (converged, iterations, final_ber) =
            run_mean_from(ens, sigma, cfg, vec![0.0; m_e], 1, cfg.max_iterations, &mut trace)?;
        return Ok(ApproxOutcome { converged, iterations, final_ber, trace });
    }

    let ch = channel_means(ens, sigma)?;
    let m_e = ens.edge_types();
    match method {
        ApproxMethod::Rca => {
            let mut m_u = vec![0.0; m_e];
            for iteration in 1..=cfg.max_iterations {
                let mut m_v = vec![0.0; m_e];
                let posterior = vn_pass(ens, &ch, &m_u, |i, c, mean| {
                    m_v[i] += ens.var_edge_weights(i)[c] * mean;
                });
                for v in &mut m_v {
                    *v = v.min(MEAN_CAP);
                }
                let converged = posterior < cfg.target_ber;
                if !converged {
                    m_u = cn_pass_rca(ens, &m_v);
                }
                trace.rows.push(TraceRow {
                    iteration,
                    phase: Phase::Gaussian,
                    posterior_ber: posterior,
                    mean_v: m_v,
                    mean_u: m_u.clone(),
                    kl_monitored: None,
                    kl_v: None,
                });
                if converged {
                    return Ok(ApproxOutcome {
                        converged: true,
                        iterations: iteration,
                        final_ber: posterior,
                        trace,
                    });
                }
            }
        }
        ApproxMethod::Ber => {
            let mut p_u = vec![0.5; m_e];
            for iteration in 1..=cfg.max_iterations {
                // Reconstruct a single per-type mean from the averaged error
                // probability (this ordering is the method's defining loss).
                let m_u: Vec<f64> =
                    p_u.iter().map(|&p| (2.0 * q_inv(p) * q_inv(p)).min(MEAN_CAP)).collect();
                let mut p_v = vec![0.0; m_e];
                let mut m_v = vec![0.0; m_e];
                let posterior = vn_pass(ens, &ch, &m_u, |i, c, mean| {
                    let w = ens.var_edge_weights(i)[c];
                    p_v[i] += w * q_func((mean / 2.0).sqrt());
                    m_v[i] += w * mean.min(MEAN_CAP);
                });
                let converged = posterior < cfg.target_ber;
                if !converged {
                    p_u = cn_pass_ber(ens, &p_v);
                }
                let m_u_next: Vec<f64> =
                    p_u.iter().map(|&p| (2.0 * q_inv(p) * q_inv(p)).min(MEAN_CAP)).collect();
                trace.rows.push(TraceRow {
                    iteration,
                    phase: Phase::Gaussian,
                    posterior_ber: posterior,
                    mean_v: m_v,
                    mean_u: m_u_next,
                    kl_monitored: None,
                    kl_v: None,
                });
                if converged {
                    return Ok(ApproxOutcome {
                        converged: true,
                        iterations: iteration,
                        final_ber: posterior,
                        trace,
                    });
                }
            }
        }
        ApproxMethod::Mean => unreachable!("handled above"),
    }
    let final_ber = trace.rows.last().map_or(f64::NAN, |r| r.posterior_ber);
    Ok(ApproxOutcome { converged: false, iterations: cfg.max_iterations, final_ber, trace })
}

// ---------------------------------------------------------------------------
// Tests
// ---------------------------------------------------------------------------

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ensemble::MetEnsemble;

    /// Independent trapezoid-rule oracle used to validate the quadrature and
    /// table machinery.
    fn trapezoid_expectation(f: impl Fn(f64) -> f64, m: f64, points: usize) -> f64 {
        let sd = (2.0 * m).sqrt();
        let (a, b) = (m - 14.0 * sd, m + 14.0 * sd);
        let h = (b - a) / (points - 1) as f64;
        let norm = 1.0 / (2.0 * (std::f64::consts::PI * m).sqrt());
        let weight = |x: f64| {
            let d = x - m;
            (-d * d / (4.0 * m)).exp()
        };
        let mut sum = 0.5 * (f(a) * weight(a) + f(b) * weight(b));
        for i in 1..points - 1 {
            let x = a + i as f64 * h;
            sum += f(x) * weight(x);
        }
        sum * h * norm
    }

    #[test]
    fn gauss_legendre_integrates_high_degree_polynomials_exactly() {
        let (nodes, weights) = gauss_legendre(32);
        assert_eq!(nodes.len(), 32);
        // Exact for polynomials of degree <= 63: check x^40 over [-1, 1].
        let got: f64 = nodes.iter().zip(&weights).map(|(x, w)| w * x.powi(40)).sum();
        assert!((got - 2.0 / 41.0).abs() < 1e-14, "x^40: {got} vs {}", 2.0 / 41.0);
        // Weights sum to the interval length.
        let total: f64 = weights.iter().sum();
        assert!((total - 2.0).abs() < 1e-13);
    }

    #[test]
    fn phi_matches_independent_trapezoid_oracle() {
        for m in [0.05, 0.5, 2.0, 10.0, 40.0, 90.0] {
            let oracle = 1.0 - trapezoid_expectation(|u| (u / 2.0).tanh(), m, 200_001);
            let got = phi(m);
            assert!(
                (got - oracle).abs() < 1e-6,
                "phi({m}) = {got}, oracle {oracle} (diff {:.2e})",
                (got - oracle).abs()
            );
        }
    }

    #[test]
    fn capacity_matches_independent_trapezoid_oracle() {
        for m in [0.1, 1.0, 4.0, 20.0] {
            let oracle = 1.0 - trapezoid_expectation(log2_1p_exp_neg, m, 200_001);
            let got = awgn_capacity(m);
            assert!(
                (got - oracle).abs() < 1e-6,
                "C({m}) = {got}, oracle {oracle} (diff {:.2e})",
                (got - oracle).abs()
            );
        }
    }

    #[test]
    fn phi_is_a_decreasing_bijection_with_accurate_inverse() {
        assert_eq!(phi(0.0), 1.0);
        assert_eq!(phi(-3.0), 1.0);
        assert!(phi(TABLE_M_MAX) < 1e-10, "phi(100) = {}", phi(TABLE_M_MAX));
        let mut prev = 2.0;
        for i in 0..60 {
            let m = 10f64.powf(-2.0 + 4.0 * i as f64 / 59.0); // 0.01 .. 100
            let v = phi(m);
            assert!(v < prev, "phi must strictly decrease (m = {m})");
            prev = v;
        }
        // Round trip both ways.
        for i in 0..40 {
            let y = 10f64.powf(-9.0 * i as f64 / 39.0); // 1 .. 1e-9
            let err = (phi(phi_inv(y)) - y).abs();
            assert!(err < 1e-6, "phi(phi_inv({y})) off by {err:.2e}");
        }
        for m in [0.03, 0.7, 5.0, 30.0, 80.0, 200.0, 500.0] {
            let err = (phi_inv(phi(m)) - m).abs() / m;
            assert!(err < 1e-6, "phi_inv(phi({m})) relative error {err:.2e}");
        }
    }

    #[test]
    fn phi_table_agrees_with_direct_quadrature_between_knots() {
        // Off-knot points exercise the interpolant, not the stored values.
        // Interior slopes are second-order, so where φ''' is O(1) (near zero)
        // the mid-segment error is ~3e-8; everywhere else it is far smaller.
        // Both sit orders of magnitude below the 1e-6 accuracy the rest of
        // the toolkit relies on.
        for m in [0.005, 0.015, 0.1234, 1.005, 7.7777, 42.0042, 99.995] {
            let err = (phi(m) - phi_direct(m)).abs();
            assert!(err < 5e-8, "interpolation error {err:.2e} at m = {m}");
        }
    }

    #[test]
    fn capacity_has_correct_limits_and_small_signal_slope() {
        assert_eq!(awgn_capacity(0.0), 0.0);
        assert!(awgn_capacity(1e4) > 1.0 - 1e-12);
        // C(m) ≈ m/(4·ln 2) as m → 0.
        let m = 1e-6;
        let want = m / (4.0 * std::f64::consts::LN_2);
        let got = awgn_capacity(m);
        assert!(
            ((got - want) / want).abs() < 1e-3,
            "small-signal capacity {got} vs linear law {want}"
        );
        // Inverse round trip across the range, including the linear region.
        for c in [1e-10, 1e-6, 0.01, 0.25, 0.5, 0.9, 0.999] {
            let m = awgn_capacity_inv(c);
            let back = awgn_capacity(m);
            assert!(
                (back - c).abs() < 1e-9 * c.max(1e-3),
                "C(C⁻¹({c})) = {back}"
            );
        }
    }

    #[test]
    fn psi_is_an_involution_with_the_half_capacity_fixed_point() {
        // ψ(ψ(m)) = m within 1e-3 across the working range.
        for i in 0..12 {
            let m = 10f64.powf(-2.0 + (50f64.log10() + 2.0) * i as f64 / 11.0); // 0.01 .. 50
            let round = psi(psi(m));
            assert!(
                (round - m).abs() < 1e-3,
                "psi(psi({m})) = {round} (error {:.2e})",
                (round - m).abs()
            );
        }
        // The mean with C = 1/2 is ψ's fixed point.
        let m_half = awgn_capacity_inv(0.5);
        let fixed = psi(m_half);
        assert!(
            (fixed - m_half).abs() < 1e-6 * m_half,
            "psi({m_half}) = {fixed}, expected the fixed point"
        );
        // Limits.
        assert_eq!(psi(0.0), f64::INFINITY);
        assert_eq!(psi(f64::INFINITY), 0.0);
        assert_eq!(psi(-1.0), f64::INFINITY);
    }

    #[test]
    fn q_function_and_inverse_are_mutually_consistent() {
        assert!((q_func(0.0) - 0.5).abs() < 1e-15);
        // Classic value Q(1) = 0.158655253931457...; the erfc backend is
        // accurate to ~1e-10 relative, far below any quoted-threshold scale.
        assert!((q_func(1.0) - 0.158655253931457).abs() < 1e-9);
        assert!((q_func(-1.0) + q_func(1.0) - 1.0).abs() < 1e-14, "Q(-x) = 1 - Q(x)");
        for p in [1e-12, 1e-8, 1e-4, 0.05, 0.3, 0.49, 0.5, 0.7] {
            let x = q_inv(p);
            let back = q_func(x);
            assert!(
                ((back - p) / p).abs() < 1e-11,
                "Q(Q⁻¹({p})) = {back} (relative {:.2e})",
                ((back - p) / p).abs()
            );
        }
        assert_eq!(q_inv(0.0), f64::INFINITY);
    }

    #[test]
    fn mean_recursion_converges_below_threshold_and_stalls_above() {
        let ens = MetEnsemble::regular(3, 6).unwrap();
        let cfg = ApproxConfig::default();
        // Comfortably below the (3,6) threshold (~0.88): must converge.
        let good = run_approx(&ens, 0.80, ApproxMethod::Mean, &cfg).unwrap();
        assert!(good.converged, "σ = 0.80 should converge, ber {}", good.final_ber);
        assert!(good.final_ber < cfg.target_ber);
        assert!(good.iterations < 200, "took {} iterations", good.iterations);
        // Comfortably above: must stall at the cap.
        let bad = run_approx(&ens, 0.95, ApproxMethod::Mean, &cfg).unwrap();
        assert!(!bad.converged);
        assert_eq!(bad.iterations, cfg.max_iterations);
        assert!(bad.final_ber > 1e-3, "stalled run keeps a high error rate");
    }

    #[test]
    fn all_three_recursions_agree_on_an_easy_channel() {
        // Far below threshold every recursion must converge, and quickly.
        let ens = MetEnsemble::regular(3, 6).unwrap();
        let cfg = ApproxConfig::default();
        for method in [ApproxMethod::Mean, ApproxMethod::Ber, ApproxMethod::Rca] {
            let out = run_approx(&ens, 0.7, method, &cfg).unwrap();
            assert!(out.converged, "{method:?} failed at σ = 0.7");
            assert!(out.iterations < 60, "{method:?} took {} iterations", out.iterations);
        }
    }

    #[test]
    fn first_iteration_posterior_is_the_raw_channel_error_rate() {
        // With no check information yet, the posterior after one iteration is
        // Q(√(m_ch/2)) = Q(1/σ) for every recursion.
        let ens = MetEnsemble::regular(3, 6).unwrap();
        let sigma = 0.9;
        let want = q_func(1.0 / sigma);
        let cfg = ApproxConfig::default();
        for method in [ApproxMethod::Mean, ApproxMethod::Ber, ApproxMethod::Rca] {
            let out = run_approx(&ens, sigma, method, &cfg).unwrap();
            let first = out.trace.rows[0].posterior_ber;
            assert!(
                (first - want).abs() < 1e-12,
                "{method:?} first posterior {first} vs Q(1/σ) = {want}"
            );
        }
    }

    #[test]
    fn recursion_states_respect_the_mean_cap() {
        // A very clean channel drives means to the cap, never beyond.
        let ens = MetEnsemble::regular(3, 6).unwrap();
        let cfg = ApproxConfig { max_iterations: 30, target_ber: 1e-300 };
        let out = run_approx(&ens, 0.3, ApproxMethod::Mean, &cfg).unwrap();
        for row in &out.trace.rows {
            for &v in row.mean_v.iter().chain(&row.mean_u) {
                assert!(v <= MEAN_CAP, "mean {v} exceeds the cap");
            }
        }
    }
}
