//! Quantized log-likelihood-ratio (LLR) densities and their message algebra.
//!
//! Belief-propagation messages on the binary-input AWGN channel are real LLRs.
//! Density evolution tracks full probability densities of those messages under
//! the all-zero-codeword assumption.  This module provides the density
//! representation and the two combine operations the analysis needs:
//!
//! * [`Density::convolve`] — ordinary convolution, the density of a *sum* of
//!   independent messages (variable-node rule, computed via FFT);
//! * [`Density::check_combine`] — the density of the check-node rule
//!   `2·atanh(tanh(a/2)·tanh(b/2))`, computed with an exact banded
//!   quantization of the equivalent min-plus-correction form.
//!
//! # Representation
//!
//! A [`Grid`] places `2·half + 1` equally spaced points on `[-llr_max,
//! +llr_max]`, so one point sits exactly at LLR zero (an erased message must be
//! representable exactly).  A [`Density`] carries one probability mass per grid
//! point plus two saturation masses for `-∞`/`+∞`; mass pushed beyond the grid
//! by a combine lands in the saturations, and moments count it at `±llr_max`.
//! All operations renormalize so total mass stays exactly one.
//!
//! # Example
//!
//! ```
//! use metde::density::{Density, Grid};
//!
//! // Wide enough that the summed density's upper tail stays on the grid:
//! // N(8, 16) has Q(6.75) ≈ 7e-12 of mass beyond LLR 35.
//! let grid = Grid::new(512, 35.0).unwrap();
//! // Channel-like density: mean 4, variance 8 (a symmetric Gaussian).
//! let a = Density::symmetric_gaussian(&grid, 4.0).unwrap();
//! // Summing two such messages doubles mean and variance...
//! let sum = a.convolve(&a).unwrap();
//! assert!((sum.mean() - 8.0).abs() < 1e-6);
//! // ...and lowers the probability that the message sign is wrong.
//! assert!(sum.error_probability() < a.error_probability());
//! ```

use std::fmt;
use std::sync::{Arc, OnceLock};

use rustfft::num_complex::Complex;
use rustfft::{Fft, FftPlanner};
use statrs::function::erf::erfc;

use crate::{Error, Result};

/// Mass floor substituted for empty reference bins when computing
/// Kullback-Leibler divergences, so log-ratios stay finite.
const KL_MASS_FLOOR: f64 = 1e-30;

// ---------------------------------------------------------------------------
// Grid
// ---------------------------------------------------------------------------

/// Shared quantization grid for LLR densities.
///
/// The grid is symmetric around zero with an odd number of points, so LLR `0`
/// is represented exactly.  Construction takes a *requested* point count; the
/// realized count is `2·(points/2) + 1`.  FFT plans and the check-combine
/// tables are built lazily on first use and shared by every density on the
/// grid, so grids should be created once and cloned by `Arc`.
pub struct Grid {
    half: usize,
    step: f64,
    llr_max: f64,
    fft: OnceLock<FftPlan>,
    boxplus: OnceLock<BoxplusTable>,
}

impl Grid {
    /// Creates a grid with roughly `points` points spanning `[-llr_max, +llr_max]`.
    ///
    /// The realized point count is the next odd number not above `points + 1`
    /// (an exact center point is required).  `points` must be at least 8 and
    /// `llr_max` positive.
    pub fn new(points: usize, llr_max: f64) -> Result<Arc<Grid>> {
        if points < 8 {
            return Err(Error::InvalidParameter(format!(
                "grid needs at least 8 points, got {points}"
            )));
        }
        if !(llr_max.is_finite() && llr_max > 0.0) {
            return Err(Error::InvalidParameter(format!(
                "llr_max must be positive and finite, got {llr_max}"
            )));
        }
        let half = points / 2;
        Ok(Arc::new(Grid {
            half,
            step: llr_max / half as f64,
            llr_max,
            fft: OnceLock::new(),
            boxplus: OnceLock::new(),
        }))
    }

    /// Number of finite grid points (odd; saturations not counted).
    pub fn points(&self) -> usize {
        2 * self.half + 1
    }

    /// Number of points on each side of zero.
    pub fn half(&self) -> usize {
        self.half
    }

    /// Spacing between adjacent grid points.
    pub fn step(&self) -> f64 {
        self.step
    }

    /// Largest finite LLR magnitude on the grid.
    pub fn llr_max(&self) -> f64 {
        self.llr_max
    }

    /// LLR value of grid point `index` (index `half()` is exactly zero).
    pub fn llr_at(&self, index: usize) -> f64 {
        (index as f64 - self.half as f64) * self.step
    }

    /// True when `other` is the same grid object (densities are only
    /// combinable within one grid).
    pub fn same_as(&self, other: &Grid) -> bool {
        std::ptr::eq(self, other)
    }

    fn fft(&self) -> &FftPlan {
        self.fft.get_or_init(|| FftPlan::new(self.points()))
    }

    fn boxplus(&self) -> &BoxplusTable {
        self.boxplus.get_or_init(|| BoxplusTable::build(self))
    }
}

impl fmt::Debug for Grid {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Grid")
            .field("points", &self.points())
            .field("llr_max", &self.llr_max)
            .field("step", &self.step)
            .finish()
    }
}

/// Cached FFT plans sized for linear convolution of two full-grid densities.
struct FftPlan {
    size: usize,
    forward: Arc<dyn Fft<f64>>,
    inverse: Arc<dyn Fft<f64>>,
}

impl FftPlan {
    fn new(points: usize) -> FftPlan {
        // Linear convolution of two length-P sequences needs 2P-1 samples.
        let needed = 2 * points - 1;
        let size = needed.next_power_of_two();
        let mut planner = FftPlanner::new();
        FftPlan {
            size,
            forward: planner.plan_fft_forward(size),
            inverse: planner.plan_fft_inverse(size),
        }
    }
}

// ---------------------------------------------------------------------------
// Check-combine quantization table
// ---------------------------------------------------------------------------

/// `ln(1 + e^{-z})` for `z >= 0`: the pairwise correction term of the
/// check-node rule written as
/// `|a ⊞ b| = min(|a|,|b|) + c(|a|+|b|) - c(||a|-|b||)`.
fn boxplus_corr(z: f64) -> f64 {
    (-z).exp().ln_1p()
}

/// One maximal range of the larger-magnitude bin offset `d` over which the
/// quantized check-combine output shifts down by the same number of bins.
#[derive(Clone, Copy, Debug)]
struct Run {
    /// Bins subtracted from the smaller magnitude `m`: output bin is `m - shift`.
    shift: u32,
    /// First offset `d = |i - j|` of the run (inclusive, `d >= 1`).
    d_lo: u32,
    /// Last offset of the run (inclusive; `u32::MAX` means "to the grid edge").
    d_hi: u32,
}

/// Precomputed quantization of the pairwise check-node rule.
///
/// For operand magnitudes `m·Δ` and `(m+d)·Δ` the exact output magnitude is
/// `m·Δ + c((2m+d)·Δ) - c(d·Δ)`, which quantizes to bin `m - shift(m, d)`.
/// For fixed `m` the shift is non-increasing in `d`, so it is stored as runs
/// of constant value; the combine then accumulates each run with one prefix
/// sum instead of touching every `d`.  For `m > m_exact` the `c((2m+d)·Δ)`
/// term is below half a bin and a single shared run table applies.
struct BoxplusTable {
    m_exact: usize,
    /// `diag[m]`: shift when both operands sit in magnitude bin `m` (`d = 0`);
    /// index 0 is unused.
    diag: Vec<u32>,
    /// `rows[m]`: runs for `1 <= m <= m_exact`; index 0 is an empty placeholder.
    rows: Vec<Vec<Run>>,
    tail_diag: u32,
    tail_row: Vec<Run>,
}

impl BoxplusTable {
    fn build(grid: &Grid) -> BoxplusTable {
        let step = grid.step;
        let h = grid.half;

        // Past this offset the pairwise correction is below half a bin and the
        // output quantizes to the smaller magnitude unchanged.
        let mut d_max = 1usize;
        while boxplus_corr(d_max as f64 * step) >= 0.5 * step {
            d_max += 1;
        }
        let m_exact = h.min(d_max);

        let exact_shift = |m: usize, d: u32| -> u32 {
            let small = boxplus_corr(d as f64 * step);
            let large = boxplus_corr((2 * m as u64 + d as u64) as f64 * step);
            ((small - large) / step).round() as u32
        };
        let tail_shift = |d: u32| -> u32 { (boxplus_corr(d as f64 * step) / step).round() as u32 };

        let mut diag = vec![0u32; m_exact + 1];
        let mut rows = vec![Vec::new(); m_exact + 1];
        for m in 1..=m_exact {
            diag[m] =
                ((std::f64::consts::LN_2 - boxplus_corr(2.0 * m as f64 * step)) / step).round() as u32;
            rows[m] = scan_runs(|d| exact_shift(m, d));
        }

        BoxplusTable {
            m_exact,
            diag,
            rows,
            tail_diag: (std::f64::consts::LN_2 / step).round() as u32,
            tail_row: scan_runs(tail_shift),
        }
    }

    fn diag_shift(&self, m: usize) -> u32 {
        if m <= self.m_exact {
            self.diag[m]
        } else {
            self.tail_diag
        }
    }

    fn row(&self, m: usize) -> &[Run] {
        if m <= self.m_exact {
            &self.rows[m]
        } else {
            &self.tail_row
        }
    }
}

/// Collects the runs of a non-increasing shift function over `d = 1, 2, ...`
/// until the shift reaches zero; the final run extends to the grid edge.
fn scan_runs(shift_at: impl Fn(u32) -> u32) -> Vec<Run> {
    let mut runs = Vec::new();
    let mut d_lo = 1u32;
    let mut current = shift_at(1);
    let mut d = 1u32;
    loop {
        if current == 0 {
            runs.push(Run { shift: 0, d_lo, d_hi: u32::MAX });
            return runs;
        }
        let next = shift_at(d + 1);
        if next != current {
            runs.push(Run { shift: current, d_lo, d_hi: d });
            d_lo = d + 1;
            current = next;
        }
        d += 1;
    }
}

// ---------------------------------------------------------------------------
// Density
// ---------------------------------------------------------------------------

/// A probability density over quantized LLRs on a shared [`Grid`].
///
/// Mass is stored per grid point (index `0` is `-llr_max`, index `half` is
/// `0`, index `2·half` is `+llr_max`) plus saturation masses for messages
/// beyond the grid.  Densities are immutable values: combine operations
/// return new densities and always renormalize to total mass one.
#[derive(Clone)]
pub struct Density {
    grid: Arc<Grid>,
    mass: Vec<f64>,
    sat_neg: f64,
    sat_pos: f64,
}

impl Density {
    // -- constructors -------------------------------------------------------

    /// A unit point mass at the grid point nearest to `x`.
    ///
    /// `x` beyond `±llr_max` goes entirely into the matching saturation.
    pub fn delta(grid: &Arc<Grid>, x: f64) -> Density {
        let mut d = Density::empty(grid);
        let bin = (x / grid.step).round();
        if bin < -(grid.half as f64) {
            d.sat_neg = 1.0;
        } else if bin > grid.half as f64 {
            d.sat_pos = 1.0;
        } else {
            d.mass[(bin as i64 + grid.half as i64) as usize] = 1.0;
        }
        d
    }

    /// A unit point mass at LLR zero (the erased message; convolution identity).
    pub fn delta_zero(grid: &Arc<Grid>) -> Density {
        Density::delta(grid, 0.0)
    }

    /// All mass at `+∞` (a fully known bit; check-combine identity).
    pub fn certain(grid: &Arc<Grid>) -> Density {
        let mut d = Density::empty(grid);
        d.sat_pos = 1.0;
        d
    }

    /// A Gaussian with the given mean and variance, discretized by exact bin
    /// integrals; tail mass beyond the grid goes into the saturations.
    pub fn gaussian(grid: &Arc<Grid>, mean: f64, variance: f64) -> Result<Density> {
        if !(variance.is_finite() && variance > 0.0) {
            return Err(Error::InvalidParameter(format!(
                "gaussian variance must be positive and finite, got {variance}"
            )));
        }
        if !mean.is_finite() {
            return Err(Error::InvalidParameter(format!(
                "gaussian mean must be finite, got {mean}"
            )));
        }
        let (mass, sat_neg, sat_pos) = gaussian_bin_masses(grid, mean, variance.sqrt());
        let mut d = Density { grid: Arc::clone(grid), mass, sat_neg, sat_pos };
        d.renormalize();
        Ok(d)
    }

    /// The symmetric Gaussian of mean `m`: variance `2m`.  Message densities
    /// under the all-zero-codeword symmetry condition have this form when
    /// Gaussian, which makes it the single-parameter reference family.
    pub fn symmetric_gaussian(grid: &Arc<Grid>, mean: f64) -> Result<Density> {
        if !(mean.is_finite() && mean > 0.0) {
            return Err(Error::NonPositive(format!(
                "symmetric gaussian needs a positive mean, got {mean}"
            )));
        }
        Density::gaussian(grid, mean, 2.0 * mean)
    }

    /// Builds a density from raw parts, validating shape and non-negativity
    /// and renormalizing to total mass one.
    pub fn from_parts(
        grid: &Arc<Grid>,
        mass: Vec<f64>,
        sat_neg: f64,
        sat_pos: f64,
    ) -> Result<Density> {
        if mass.len() != grid.points() {
            return Err(Error::GridMismatch(format!(
                "mass vector has {} entries, grid has {} points",
                mass.len(),
                grid.points()
            )));
        }
        if mass.iter().chain([&sat_neg, &sat_pos]).any(|&v| !v.is_finite() || v < 0.0) {
            return Err(Error::InvalidParameter(
                "density masses must be finite and non-negative".into(),
            ));
        }
        let mut d = Density { grid: Arc::clone(grid), mass, sat_neg, sat_pos };
        if d.total_mass() <= 0.0 {
            return Err(Error::NonPositive("density has zero total mass".into()));
        }
        d.renormalize();
        Ok(d)
    }

    /// A weighted mixture `Σ wᵢ·dᵢ`.  Weights must be non-negative and are
    /// renormalized together with the component masses.
    pub fn mixture(parts: &[(f64, &Density)]) -> Result<Density> {
        let (&(w0, first), rest) = parts
            .split_first()
            .ok_or_else(|| Error::InvalidParameter("mixture of zero densities".into()))?;
        if parts.iter().any(|&(w, _)| !w.is_finite() || w < 0.0) {
            return Err(Error::InvalidParameter("mixture weights must be non-negative".into()));
        }
        let mut out = Density::empty(&first.grid);
        out.accumulate(w0, first);
        for &(w, d) in rest {
            if !d.grid.same_as(&first.grid) {
                return Err(Error::GridMismatch("mixture components on different grids".into()));
            }
            out.accumulate(w, d);
        }
        if out.total_mass() <= 0.0 {
            return Err(Error::NonPositive("mixture has zero total weight".into()));
        }
        out.renormalize();
        Ok(out)
    }

    fn empty(grid: &Arc<Grid>) -> Density {
        Density {
            grid: Arc::clone(grid),
            mass: vec![0.0; grid.points()],
            sat_neg: 0.0,
            sat_pos: 0.0,
        }
    }

    fn accumulate(&mut self, w: f64, d: &Density) {
        for (m, &v) in self.mass.iter_mut().zip(&d.mass) {
            *m += w * v;
        }
        self.sat_neg += w * d.sat_neg;
        self.sat_pos += w * d.sat_pos;
    }

    // -- accessors ----------------------------------------------------------

    /// The grid this density lives on.
    pub fn grid(&self) -> &Arc<Grid> {
        &self.grid
    }

    /// Per-point masses (index `grid.half()` is LLR zero).
    pub fn mass(&self) -> &[f64] {
        &self.mass
    }

    /// Mass saturated at `-∞`.
    pub fn sat_neg(&self) -> f64 {
        self.sat_neg
    }

    /// Mass saturated at `+∞`.
    pub fn sat_pos(&self) -> f64 {
        self.sat_pos
    }

    /// Total mass including saturations (one, up to rounding, after any
    /// constructor or combine).
    pub fn total_mass(&self) -> f64 {
        self.mass.iter().sum::<f64>() + self.sat_neg + self.sat_pos
    }

    // -- statistics ---------------------------------------------------------

    /// Mean LLR; saturated mass counts at `±llr_max`.
    pub fn mean(&self) -> f64 {
        let grid = &self.grid;
        let mut sum = 0.0;
        for (i, &m) in self.mass.iter().enumerate() {
            sum += m * grid.llr_at(i);
        }
        sum + (self.sat_pos - self.sat_neg) * grid.llr_max
    }

    /// Variance of the LLR; saturated mass counts at `±llr_max`.
    pub fn variance(&self) -> f64 {
        let grid = &self.grid;
        let mean = self.mean();
        let mut sum = 0.0;
        for (i, &m) in self.mass.iter().enumerate() {
            let d = grid.llr_at(i) - mean;
            sum += m * d * d;
        }
        let dp = grid.llr_max - mean;
        let dn = -grid.llr_max - mean;
        (sum + self.sat_pos * dp * dp + self.sat_neg * dn * dn).max(0.0)
    }

    /// Probability that a hard decision on the message is wrong under the
    /// all-zero-codeword convention: mass below zero plus half the mass at
    /// exactly zero.
    pub fn error_probability(&self) -> f64 {
        let h = self.grid.half;
        let below: f64 = self.mass[..h].iter().sum();
        below + 0.5 * self.mass[h] + self.sat_neg
    }

    /// Kullback-Leibler divergence `D(p ‖ g)` from this density to the
    /// symmetric Gaussian `g` matched to its mean (variance twice the mean),
    /// in nats.  This is the Gaussian-ness diagnostic used to decide when a
    /// density is adequately summarized by its mean alone.
    ///
    /// Fails when the mean is not positive (no matched symmetric Gaussian
    /// exists there).
    pub fn kl_to_matched_gaussian(&self) -> Result<f64> {
        let mean = self.mean();
        if !(mean > 0.0) {
            return Err(Error::NonPositive(format!(
                "KL reference needs a positive mean, got {mean}"
            )));
        }
        let (ref_mass, ref_sn, ref_sp) = gaussian_bin_masses(&self.grid, mean, (2.0 * mean).sqrt());
        let mut kl = 0.0;
        let mut term = |p: f64, q: f64| {
            if p > 0.0 {
                kl += p * (p / q.max(KL_MASS_FLOOR)).ln();
            }
        };
        for (&p, &q) in self.mass.iter().zip(&ref_mass) {
            term(p, q);
        }
        term(self.sat_neg, ref_sn);
        term(self.sat_pos, ref_sp);
        // Exact zero for a perfectly matched density; tiny negatives are
        // quantization rounding.
        Ok(kl.max(0.0))
    }

    /// Symmetry defect: how far the density is from satisfying the channel
    /// symmetry condition `p(-x) = e^{-x}·p(x)`, measured as
    /// `Σ_{x>0} |p(-x) - e^{-x}·p(x)|`.  Exactly symmetric inputs stay
    /// symmetric under both combine rules up to quantization, so this is a
    /// useful structural diagnostic in tests.
    pub fn symmetry_defect(&self) -> f64 {
        let h = self.grid.half;
        let mut defect = 0.0;
        for m in 1..=h {
            let x = self.grid.llr_at(h + m);
            defect += (self.mass[h - m] - (-x).exp() * self.mass[h + m]).abs();
        }
        defect
    }

    // -- combine operations -------------------------------------------------

    /// Density of the sum of two independent messages (variable-node rule),
    /// by FFT-based linear convolution.  Mass carried beyond `±llr_max`
    /// saturates; saturated inputs stay saturated, and opposite saturations
    /// cancel to LLR zero.
    pub fn convolve(&self, other: &Density) -> Result<Density> {
        self.check_same_grid(other)?;

        // Shifting by a point mass avoids the FFT entirely; the identity
        // δ₀ ⊗ p = p and first-iteration products fall out of this path.
        if let Some((bin, w)) = self.pure_single_bin() {
            return Ok(other.shifted(bin as i64 - self.grid.half as i64, w));
        }
        if let Some((bin, w)) = other.pure_single_bin() {
            return Ok(self.shifted(bin as i64 - other.grid.half as i64, w));
        }

        let grid = &self.grid;
        let h = grid.half;
        let plan = grid.fft();
        let n = plan.size;

        // Pack both real sequences into one complex FFT (p + i·q), then split
        // spectra with the conjugate-symmetry identities.
        let mut buf = vec![Complex::new(0.0, 0.0); n];
        for i in 0..grid.points() {
            buf[i] = Complex::new(self.mass[i], other.mass[i]);
        }
        plan.forward.process(&mut buf);

        let mut prod = vec![Complex::new(0.0, 0.0); n];
        for k in 0..n {
            let a = buf[k];
            let b = buf[(n - k) % n].conj();
            let p = (a + b) * 0.5;
            // q = (a - b) / (2i) = -i·(a - b)/2
            let d = (a - b) * 0.5;
            let q = Complex::new(d.im, -d.re);
            prod[k] = p * q;
        }
        plan.inverse.process(&mut prod);

        let scale = 1.0 / n as f64;
        let mut out = Density::empty(grid);
        // Convolution index t corresponds to LLR (t - 2h)·step.
        for t in 0..=4 * h {
            let v = (prod[t].re * scale).max(0.0);
            if t < h {
                out.sat_neg += v;
            } else if t > 3 * h {
                out.sat_pos += v;
            } else {
                out.mass[t - h] += v;
            }
        }

        // Saturation algebra of the sum rule: ±∞ absorbs any finite value and
        // opposite infinities cancel to zero.
        let p_fin: f64 = self.mass.iter().sum();
        let q_fin: f64 = other.mass.iter().sum();
        out.sat_pos += self.sat_pos * q_fin + other.sat_pos * p_fin + self.sat_pos * other.sat_pos;
        out.sat_neg += self.sat_neg * q_fin + other.sat_neg * p_fin + self.sat_neg * other.sat_neg;
        out.mass[h] += self.sat_pos * other.sat_neg + self.sat_neg * other.sat_pos;

        out.renormalize();
        Ok(out)
    }

    /// `k`-fold convolution power by repeated squaring (`k = 0` is δ₀).
    pub fn convolve_power(&self, k: u32) -> Result<Density> {
        binary_power(self, k, Density::delta_zero(&self.grid), Density::convolve)
    }

    /// Density of the check-node rule `2·atanh(tanh(a/2)·tanh(b/2))` applied
    /// to two independent messages.
    ///
    /// The rule never increases the magnitude, so no finite mass saturates.
    /// A zero (erased) operand forces a zero output; saturated operands act
    /// as pure signs (`+∞` is the identity, `-∞` flips the other operand).
    /// Magnitudes combine through the exact quantization of
    /// `min + c(sum) - c(diff)` with `c(z) = ln(1 + e^{-z})`, accumulated
    /// run-by-run with prefix sums (see [`BoxplusTable`]).
    pub fn check_combine(&self, other: &Density) -> Result<Density> {
        self.check_same_grid(other)?;
        let grid = &self.grid;
        let h = grid.half;
        let table = grid.boxplus();

        let p_total = self.total_mass();
        let q_total = other.total_mass();
        let p_zero = self.mass[h];
        let q_zero = other.mass[h];

        // Magnitude-indexed accumulators; index 0 collects pairs whose
        // combined magnitude quantizes to the zero bin.
        let mut out_pos = vec![0.0; h + 1];
        let mut out_neg = vec![0.0; h + 1];

        // Signed-magnitude views and their suffix sums: suf[m] = Σ_{j>=m} v[j].
        let split = |d: &Density| -> (Vec<f64>, Vec<f64>) {
            let mut pos = vec![0.0; h + 2];
            let mut neg = vec![0.0; h + 2];
            for m in 1..=h {
                pos[m] = d.mass[h + m];
                neg[m] = d.mass[h - m];
            }
            (pos, neg)
        };
        let suffix = |v: &[f64]| -> Vec<f64> {
            let mut s = vec![0.0; h + 2];
            for m in (1..=h).rev() {
                s[m] = s[m + 1] + v[m];
            }
            s
        };
        let (pp, pn) = split(self);
        let (qp, qn) = split(other);
        let (sp_p, sp_n) = (suffix(&pp), suffix(&pn));
        let (sq_p, sq_n) = (suffix(&qp), suffix(&qn));

        let p_top = (1..=h).rev().find(|&m| pp[m] != 0.0 || pn[m] != 0.0).unwrap_or(0);
        let q_top = (1..=h).rev().find(|&m| qp[m] != 0.0 || qn[m] != 0.0).unwrap_or(0);

        // Finite × finite pairs, partitioned by which operand holds the
        // smaller magnitude m (offset d >= 1 each way, d = 0 once).
        for m in 1..=p_top.min(q_top) {
            let (a_p, a_n, b_p, b_n) = (pp[m], pn[m], qp[m], qn[m]);
            if a_p == 0.0 && a_n == 0.0 && b_p == 0.0 && b_n == 0.0 {
                continue;
            }
            for run in table.row(m) {
                let lo = m + run.d_lo.max(1) as usize;
                if lo > h {
                    break;
                }
                let hi = match run.d_hi as usize {
                    d if d >= h => h,
                    d => (m + d).min(h),
                };
                let k = m - run.shift as usize;
                // Other operand carries the larger magnitude in [lo, hi].
                let rq_p = sq_p[lo] - sq_p[hi + 1];
                let rq_n = sq_n[lo] - sq_n[hi + 1];
                let rp_p = sp_p[lo] - sp_p[hi + 1];
                let rp_n = sp_n[lo] - sp_n[hi + 1];
                out_pos[k] += a_p * rq_p + a_n * rq_n + b_p * rp_p + b_n * rp_n;
                out_neg[k] += a_p * rq_n + a_n * rq_p + b_p * rp_n + b_n * rp_p;
            }
            let k0 = m - table.diag_shift(m) as usize;
            out_pos[k0] += a_p * b_p + a_n * b_n;
            out_neg[k0] += a_p * b_n + a_n * b_p;
        }

        // Saturated operands are pure signs over the other side's finite
        // magnitudes: +∞ copies, -∞ flips.
        if self.sat_pos != 0.0 || self.sat_neg != 0.0 {
            for m in 1..=q_top {
                out_pos[m] += self.sat_pos * qp[m] + self.sat_neg * qn[m];
                out_neg[m] += self.sat_pos * qn[m] + self.sat_neg * qp[m];
            }
        }
        if other.sat_pos != 0.0 || other.sat_neg != 0.0 {
            for m in 1..=p_top {
                out_pos[m] += other.sat_pos * pp[m] + other.sat_neg * pn[m];
                out_neg[m] += other.sat_pos * pn[m] + other.sat_neg * pp[m];
            }
        }

        let mut out = Density::empty(grid);
        // Sign algebra of two saturated operands: magnitude stays infinite,
        // signs multiply.
        out.sat_pos = self.sat_pos * other.sat_pos + self.sat_neg * other.sat_neg;
        out.sat_neg = self.sat_pos * other.sat_neg + self.sat_neg * other.sat_pos;
        // A zero operand erases everything it meets.
        out.mass[h] = p_zero * q_total + q_zero * (p_total - p_zero);
        out.mass[h] += out_pos[0] + out_neg[0];
        for m in 1..=h {
            out.mass[h + m] = out_pos[m];
            out.mass[h - m] = out_neg[m];
        }

        out.renormalize();
        Ok(out)
    }

    /// `k`-fold check-combine power by repeated squaring (`k = 0` is the
    /// all-mass-at-`+∞` identity).
    pub fn check_combine_power(&self, k: u32) -> Result<Density> {
        binary_power(self, k, Density::certain(&self.grid), Density::check_combine)
    }

    // -- serialization ------------------------------------------------------

    /// Writes the density as CSV with header `llr,mass`, one row per grid
    /// point followed by `-inf` / `+inf` rows for the saturations.
    pub fn write_csv<W: std::io::Write>(&self, mut w: W) -> Result<()> {
        writeln!(w, "llr,mass")?;
        for (i, &m) in self.mass.iter().enumerate() {
            writeln!(w, "{},{}", self.grid.llr_at(i), m)?;
        }
        writeln!(w, "-inf,{}", self.sat_neg)?;
        writeln!(w, "+inf,{}", self.sat_pos)?;
        Ok(())
    }

    // -- internals ----------------------------------------------------------

    fn check_same_grid(&self, other: &Density) -> Result<()> {
        if self.grid.same_as(&other.grid) {
            Ok(())
        } else {
            Err(Error::GridMismatch(format!(
                "cannot combine densities on {:?} and {:?}",
                self.grid, other.grid
            )))
        }
    }

    /// `Some((bin, mass))` when all mass sits in exactly one finite bin.
    fn pure_single_bin(&self) -> Option<(usize, f64)> {
        if self.sat_neg != 0.0 || self.sat_pos != 0.0 {
            return None;
        }
        let mut found = None;
        for (i, &m) in self.mass.iter().enumerate() {
            if m != 0.0 {
                if found.is_some() {
                    return None;
                }
                found = Some((i, m));
            }
        }
        found
    }

    /// The density translated by `offset` bins and scaled by `w`, with mass
    /// pushed off the grid saturating (sum-rule semantics).
    fn shifted(&self, offset: i64, w: f64) -> Density {
        let grid = &self.grid;
        let points = grid.points() as i64;
        let mut out = Density::empty(grid);
        for (i, &m) in self.mass.iter().enumerate() {
            if m == 0.0 {
                continue;
            }
            let j = i as i64 + offset;
            if j < 0 {
                out.sat_neg += m;
            } else if j >= points {
                out.sat_pos += m;
            } else {
                out.mass[j as usize] += m;
            }
        }
        out.sat_neg += self.sat_neg;
        out.sat_pos += self.sat_pos;
        out.scale(w);
        out.renormalize();
        out
    }

    fn scale(&mut self, w: f64) {
        for m in &mut self.mass {
            *m *= w;
        }
        self.sat_neg *= w;
        self.sat_pos *= w;
    }

    /// Rescales so the total mass is exactly one, absorbing floating-point
    /// drift from combines (inputs are always probability densities).
    fn renormalize(&mut self) {
        let total = self.total_mass();
        if total > 0.0 && total != 1.0 {
            self.scale(1.0 / total);
        }
    }
}

impl fmt::Debug for Density {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Density")
            .field("points", &self.grid.points())
            .field("mean", &self.mean())
            .field("error_probability", &self.error_probability())
            .field("sat_neg", &self.sat_neg)
            .field("sat_pos", &self.sat_pos)
            .finish()
    }
}

/// Repeated-squaring fold of an associative combine.
fn binary_power(
    base: &Density,
    k: u32,
    identity: Density,
    combine: impl Fn(&Density, &Density) -> Result<Density>,
) -> Result<Density> {
    match k {
        0 => Ok(identity),
        1 => Ok(base.clone()),
        _ => {
            let mut acc: Option<Density> = None;
            let mut sq = base.clone();
            let mut rem = k;
            loop {
                if rem & 1 == 1 {
                    acc = Some(match acc {
                        None => sq.clone(),
                        Some(a) => combine(&a, &sq)?,
                    });
                }
                rem >>= 1;
                if rem == 0 {
                    return Ok(acc.expect("k >= 1 sets the accumulator"));
                }
                sq = combine(&sq, &sq)?;
            }
        }
    }
}

/// Exact bin-integral discretization of a Gaussian: per-bin masses via erfc
/// differences (stable deep into the tails) plus the two saturation tails.
fn gaussian_bin_masses(grid: &Grid, mean: f64, sd: f64) -> (Vec<f64>, f64, f64) {
    let inv = 1.0 / (sd * std::f64::consts::SQRT_2);
    let half_step = 0.5 * grid.step;
    let points = grid.points();
    let mut mass = vec![0.0; points];
    for (i, m) in mass.iter_mut().enumerate() {
        let x = grid.llr_at(i);
        // Φ((hi-μ)/σ) - Φ((lo-μ)/σ) written with erfc so both tails keep
        // relative precision.
        let hi = (mean - (x + half_step)) * inv;
        let lo = (mean - (x - half_step)) * inv;
        *m = 0.5 * (erfc(hi) - erfc(lo));
    }
    let sat_neg = 0.5 * erfc((mean + grid.llr_max + half_step) * inv);
    let sat_pos = 0.5 * erfc((grid.llr_max + half_step - mean) * inv);
    (mass, sat_neg, sat_pos)
}

// ---------------------------------------------------------------------------
// Tests
// ---------------------------------------------------------------------------
