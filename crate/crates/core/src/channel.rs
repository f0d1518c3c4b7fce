//! Binary-input AWGN channel model in the LLR domain.
//!
//! With BPSK mapping, unit symbol energy, and noise standard deviation `σ`,
//! the LLR of a received sample under the all-zero-codeword convention is
//! Gaussian with mean `2/σ²` and variance `4/σ²` — the *symmetric* Gaussian
//! of mean `m = 2/σ²`.  Punctured bits are never transmitted and carry the
//! erased LLR `0` exactly.
//!
//! # Example
//!
//! ```
//! use metde::channel;
//! use metde::density::Grid;
//!
//! // Rate 1/2 at Eb/N0 = 0 dB gives σ = 1 exactly.
//! let sigma = channel::sigma_from_ebn0_db(0.0, 0.5).unwrap();
//! assert!((sigma - 1.0).abs() < 1e-12);
//!
//! let grid = Grid::new(1024, 30.0).unwrap();
//! let ch = channel::channel_density(&grid, sigma).unwrap();
//! assert!((ch.mean() - 2.0).abs() < 1e-6);
//! ```

use std::sync::Arc;

use crate::density::{Density, Grid};
use crate::{Error, Result};

fn check_sigma(sigma: f64) -> Result<()> {
    if sigma.is_finite() && sigma > 0.0 {
        Ok(())
    } else {
        Err(Error::NonPositive(format!("noise level sigma must be positive, got {sigma}")))
    }
}

/// Mean of the channel LLR, `2/σ²`.
pub fn llr_mean(sigma: f64) -> Result<f64> {
    check_sigma(sigma)?;
    Ok(2.0 / (sigma * sigma))
}

/// Channel LLR density: the symmetric Gaussian `N(2/σ², 4/σ²)` discretized
/// onto `grid`.
pub fn channel_density(grid: &Arc<Grid>, sigma: f64) -> Result<Density> {
    let mean = llr_mean(sigma)?;
    Density::gaussian(grid, mean, 2.0 * mean)
}

/// LLR density of a punctured (never transmitted) bit: a point mass at zero.
pub fn punctured_density(grid: &Arc<Grid>) -> Density {
    Density::delta_zero(grid)
}

/// Noise level from `Eb/N0` in dB at the given code rate:
/// `σ = (2·rate·10^(EbN0/10))^(-1/2)`.
pub fn sigma_from_ebn0_db(ebn0_db: f64, rate: f64) -> Result<f64> {
    if !(rate.is_finite() && rate > 0.0) {
        return Err(Error::NonPositive(format!("rate must be positive, got {rate}")));
    }
    if !ebn0_db.is_finite() {
        return Err(Error::InvalidParameter(format!("Eb/N0 must be finite, got {ebn0_db} dB")));
    }
    Ok(1.0 / (2.0 * rate * 10f64.powf(ebn0_db / 10.0)).sqrt())
}

/// `Eb/N0` in dB corresponding to noise level `σ` at the given code rate.
pub fn ebn0_db_from_sigma(sigma: f64, rate: f64) -> Result<f64> {
    check_sigma(sigma)?;
    if !(rate.is_finite() && rate > 0.0) {
        return Err(Error::NonPositive(format!("rate must be positive, got {rate}")));
    }
    Ok(10.0 * (1.0 / (2.0 * rate * sigma * sigma)).log10())
}

/// Largest noise level at which the BI-AWGN channel capacity still reaches
/// `rate` — the Shannon limit every iterative-decoding threshold sits below.
/// Solved by bisection on `C(2/σ²) = rate`.
pub fn shannon_sigma(rate: f64) -> Result<f64> {
    if !(rate.is_finite() && rate > 0.0 && rate < 1.0) {
        return Err(Error::InvalidParameter(format!(
            "rate must lie strictly between 0 and 1, got {rate}"
        )));
    }
    // Capacity decreases in σ; bracket generously and bisect.
    let (mut lo, mut hi) = (1e-2, 1e2);
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if crate::gauss_approx::awgn_capacity(2.0 / (mid * mid)) > rate {
            lo = mid;
        } else {
            hi = mid;
        }
        if hi - lo <= 1e-12 * lo {
            break;
        }
    }
    Ok(0.5 * (lo + hi))
}
