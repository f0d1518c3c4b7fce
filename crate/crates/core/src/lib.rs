//! Density-evolution analysis for multi-edge-type LDPC ensembles on the
//! binary-input AWGN channel.
//!
//! The crate answers one family of questions: given an ensemble of LDPC
//! codes described by its degree distributions, up to what channel noise
//! level does belief-propagation decoding drive the error probability to
//! zero — and how cheaply can that answer be approximated?
//!
//! # Module map
//!
//! The analysis pipeline runs left to right:
//!
//! - [`ensemble`] — multi-edge-type degree distributions: parsing,
//!   validation (socket balance, degree constraints), design rate, and the
//!   per-edge operation-cost model of each analysis method.
//! - [`channel`] — the binary-input AWGN channel: LLR statistics,
//!   `E_b/N_0` conversions, and the Shannon-limit noise level.
//! - [`density`] — quantized LLR densities and the numerical kernels:
//!   variable-side convolution, check-side combination, moments, error
//!   probability, and divergence from a matched Gaussian.
//! - [`full_de`] — exact density evolution over those quantized densities.
//! - [`gauss_approx`] — three single-parameter recursions (message mean,
//!   error probability, reciprocal-channel) that trade accuracy for speed.
//! - [`hybrid`] — full density evolution until the monitored check message
//!   is near-Gaussian, then the mean recursion to convergence.
//! - [`threshold`] — bisection over the noise level, for any of the five
//!   methods, with a relative-gap metric for comparing results.
//! - [`optimizer`] — degree-distribution design: templates with free
//!   coefficients, single-parameter sweeps, and a seeded stochastic search.
//! - [`mc_oracle`] — a sampled-message cross-check of the deterministic
//!   engines with honest, replica-based error bars.
//! - [`trace`] — the per-iteration record every engine emits.
//!
//! # Example
//!
//! Reproduce the classic result that the regular (3,6) ensemble decodes up
//! to σ ≈ 0.881 on the BI-AWGN channel:
//!
//! ```no_run
//! use metde::ensemble::MetEnsemble;
//! use metde::threshold::{find_threshold, Method, ThresholdConfig};
//!
//! let ens = MetEnsemble::regular(3, 6)?;
//! let out = find_threshold(&ens, Method::Full, &ThresholdConfig::default())?;
//! assert!((out.sigma_star - 0.8808).abs() < 1e-3);
//! # Ok::<(), metde::Error>(())
//! ```
//!
//! (`no_run` because a full-density threshold search takes a few seconds;
//! swap in `Method::Rca` for a millisecond version of the same search that
//! lands on the same value to four decimals.)

pub mod channel;
pub mod density;
pub mod ensemble;
pub mod full_de;
pub mod gauss_approx;
pub mod hybrid;
pub mod mc_oracle;
pub mod optimizer;
pub mod threshold;
pub mod trace;

mod error;

pub use error::{Error, Result};
