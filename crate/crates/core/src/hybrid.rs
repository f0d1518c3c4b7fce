//! Two-phase density evolution: exact densities first, means afterwards.
//!
//! Early iterations are where message densities are farthest from Gaussian —
//! saturated channel observations, erased punctured bits, and the sharply
//! peaked output of high-degree checks.  This engine spends full quantized
//! density evolution on exactly that stretch, watches the Gaussian
//! divergence of the monitored check-to-variable message, and once the
//! divergence falls below a target (or a hard iteration cap is reached)
//! projects both message directions to their means and finishes with the
//! scalar mean recursion.
//!
//! The two extremes degenerate exactly: a zero-iteration first phase *is*
//! the mean recursion, and an unreachable switch target *is* full density
//! evolution — both reuse the same code paths bit for bit.
//!
//! # Example
//!
//! ```
//! use metde::ensemble::MetEnsemble;
//! use metde::full_de::DeConfig;
//! use metde::hybrid::{run_hybrid, HybridConfig};
//!
//! let ens = MetEnsemble::regular(3, 6).unwrap();
//! let cfg = HybridConfig {
//!     de: DeConfig { grid_points: 1024, llr_max: 30.0, ..DeConfig::default() },
//!     ..HybridConfig::default()
//! };
//! let out = run_hybrid(&ens, 0.7, &cfg).unwrap();
//! assert!(out.converged);
//! assert!(out.switch_iteration <= out.iterations);
//! ```

use crate::ensemble::MetEnsemble;
use crate::full_de::{drive, DeConfig, DensityEvolution, DriveEnd};
use crate::gauss_approx::{run_mean_from, ApproxConfig};
use crate::trace::Trace;
use crate::{Error, Result};

/// Parameters of a two-phase run.
#[derive(Clone, Debug)]
pub struct HybridConfig {
    /// Scalar Gaussian-divergence level below which the densities count as
    /// close enough to Gaussian to switch phases.  Evaluated only at the
    /// diagnostics checkpoints of the first phase.
    pub kl_target: f64,
    /// Hard cap on first-phase iterations; the switch happens here even if
    /// the divergence target was never met.
    pub max_full_iterations: usize,
    /// First-phase (density) settings; its `max_iterations` also caps the
    /// run as a whole.
    pub de: DeConfig,
    /// Second-phase (mean recursion) settings; `target_ber` must agree with
    /// the first phase's so "converged" means one thing.
    pub approx: ApproxConfig,
}

impl Default for HybridConfig {
    fn default() -> Self {
        HybridConfig {
            kl_target: 0.04,
            max_full_iterations: 100,
            de: DeConfig::default(),
            approx: ApproxConfig::default(),
        }
    }
}

/// Result of a two-phase run.
#[derive(Clone, Debug)]
pub struct HybridOutcome {
    /// Whether the posterior error probability reached the target.
    pub converged: bool,
    /// Total iterations executed across both phases.
    pub iterations: usize,
    /// Posterior error probability after the last iteration.
    pub final_ber: f64,
    /// Iterations spent in the density phase (0 = the run was purely the
    /// mean recursion).
    pub switch_iteration: usize,
    /// Fraction of executed iterations that ran the density phase — the α
    /// that weights the per-iteration decoding cost model.
    pub full_fraction: f64,
    /// Per-iteration history across both phases.
    pub trace: Trace,
}

/// Runs the two-phase evolution.
pub fn run_hybrid(ens: &MetEnsemble, sigma: f64, cfg: &HybridConfig) -> Result<HybridOutcome> {
    if !(cfg.kl_target >= 0.0) {
        return Err(Error::InvalidParameter(format!(
            "kl_target must be non-negative, got {}",
            cfg.kl_target
        )));
    }
    if cfg.de.target_ber != cfg.approx.target_ber {
        return Err(Error::InvalidParameter(format!(
            "the two phases disagree on target_ber ({} vs {})",
            cfg.de.target_ber, cfg.approx.target_ber
        )));
    }
    // One shared budget keeps "this run, by any split" comparable — and the
    // all-density / all-means degenerate runs exactly reproducible.
    if cfg.de.max_iterations != cfg.approx.max_iterations {
        return Err(Error::InvalidParameter(format!(
            "the two phases disagree on max_iterations ({} vs {})",
            cfg.de.max_iterations, cfg.approx.max_iterations
        )));
    }
    let total_budget = cfg.de.max_iterations;
    let phase1_budget = cfg.max_full_iterations.min(total_budget);
    let mut trace = Trace::default();

    let (end, switch_iteration, mut final_ber, u_means) = if phase1_budget == 0 {
        // Degenerate: no density phase at all; the mean recursion starts from
        // the same zero-information state it defines for itself.
        (DriveEnd::Switched, 0, f64::NAN, vec![0.0; ens.edge_types()])
    } else {
        let mut de = DensityEvolution::new(ens, sigma, &cfg.de)?;
        let end = drive(&mut de, &mut trace, phase1_budget, |_, kl| {
            kl.is_some_and(|k| k < cfg.kl_target)
        })?;
        let ber = trace.rows.last().map_or(f64::NAN, |r| r.posterior_ber);
        (end, de.iteration(), ber, de.u_means())
    };

    match end {
        DriveEnd::Converged | DriveEnd::Stagnated => {
            // Nothing left for the mean recursion to do: the run either
            // finished or proved it sits at a stable error floor.
            Ok(HybridOutcome {
                converged: end == DriveEnd::Converged,
                iterations: switch_iteration,
                final_ber,
                switch_iteration,
                full_fraction: 1.0,
                trace,
            })
        }
        DriveEnd::Switched | DriveEnd::Cap => {
            let mut converged = false;
            let mut total = switch_iteration;
            if switch_iteration < total_budget {
                let (done, executed, ber) = run_mean_from(
                    ens,
                    sigma,
                    &cfg.approx,
                    u_means,
                    switch_iteration + 1,
                    total_budget,
                    &mut trace,
                )?;
                converged = done;
                total = switch_iteration + executed;
                final_ber = ber;
            }
            let full_fraction =
                if total == 0 { 0.0 } else { switch_iteration as f64 / total as f64 };
            Ok(HybridOutcome {
                converged,
                iterations: total,
                final_ber,
                switch_iteration,
                full_fraction,
                trace,
            })
        }
    }
}

// ---------------------------------------------------------------------------
// Tests
// ---------------------------------------------------------------------------

#[cfg(test)]
mod tests {
    use super::*;
    use crate::full_de::run_full_de;
    use crate::gauss_approx::{run_approx, ApproxMethod};
    use crate::trace::Phase;

    fn test_cfg() -> HybridConfig {
        HybridConfig {
            de: DeConfig { grid_points: 2000, llr_max: 36.0, ..DeConfig::default() },
            ..HybridConfig::default()
        }
    }

    #[test]
    fn converges_and_records_both_phases() {
        let ens = MetEnsemble::regular(3, 6).unwrap();
        let out = run_hybrid(&ens, 0.8, &test_cfg()).unwrap();
        assert!(out.converged, "σ = 0.8 is below threshold");
        assert!(out.switch_iteration > 0, "densities start far from Gaussian");
        assert!(out.switch_iteration < out.iterations, "the mean phase must run");
        assert!((out.full_fraction
            - out.switch_iteration as f64 / out.iterations as f64)
            .abs()
            < 1e-15);
        // Trace phases flip exactly once, at the switch.
        let flip = out.trace.rows.iter().position(|r| r.phase == Phase::Gaussian).unwrap();
        assert_eq!(flip, out.switch_iteration);
        assert!(out.trace.rows[..flip].iter().all(|r| r.phase == Phase::Full));
        assert!(out.trace.rows[flip..].iter().all(|r| r.phase == Phase::Gaussian));
        // Iteration numbering is continuous across the switch.
        for (idx, row) in out.trace.rows.iter().enumerate() {
            assert_eq!(row.iteration, idx + 1);
        }
        // The switch happened at a diagnostics checkpoint with the
        // divergence below target.
        let switch_row = &out.trace.rows[flip - 1];
        assert!(switch_row.kl_monitored.unwrap() < test_cfg().kl_target);
    }

    #[test]
    fn zero_density_budget_degenerates_to_the_mean_recursion() {
        let ens = MetEnsemble::regular(3, 6).unwrap();
        let cfg = HybridConfig { max_full_iterations: 0, ..test_cfg() };
        for sigma in [0.75, 0.9] {
            let hybrid = run_hybrid(&ens, sigma, &cfg).unwrap();
            let mean = run_approx(&ens, sigma, ApproxMethod::Mean, &cfg.approx).unwrap();
            assert_eq!(hybrid.converged, mean.converged);
            assert_eq!(hybrid.iterations, mean.iterations);
            assert_eq!(hybrid.switch_iteration, 0);
            assert_eq!(hybrid.full_fraction, 0.0);
            // Bit-identical trajectories: both runs execute the same code.
            assert_eq!(hybrid.trace.rows.len(), mean.trace.rows.len());
            for (h, m) in hybrid.trace.rows.iter().zip(&mean.trace.rows) {
                assert_eq!(h.posterior_ber.to_bits(), m.posterior_ber.to_bits());
                assert_eq!(h.mean_u, m.mean_u);
            }
        }
    }

    #[test]
    fn unreachable_switch_degenerates_to_full_density_evolution() {
        let ens = MetEnsemble::regular(3, 6).unwrap();
        let mut cfg = test_cfg();
        cfg.kl_target = 0.0; // divergence is never negative: switch can't fire
        cfg.max_full_iterations = cfg.de.max_iterations;
        for sigma in [0.8, 0.95] {
            let hybrid = run_hybrid(&ens, sigma, &cfg).unwrap();
            let full = run_full_de(&ens, sigma, &cfg.de).unwrap();
            assert_eq!(hybrid.converged, full.converged);
            assert_eq!(hybrid.iterations, full.iterations);
            assert_eq!(hybrid.full_fraction, 1.0);
            assert_eq!(hybrid.trace.rows.len(), full.trace.rows.len());
            for (h, f) in hybrid.trace.rows.iter().zip(&full.trace.rows) {
                assert_eq!(h.posterior_ber.to_bits(), f.posterior_ber.to_bits());
                assert_eq!(h.phase, Phase::Full);
            }
        }
    }

    #[test]
    fn mismatched_phase_targets_are_rejected() {
        let ens = MetEnsemble::regular(3, 6).unwrap();
        let mut cfg = test_cfg();
        cfg.approx.target_ber = 1e-8;
        assert!(run_hybrid(&ens, 0.8, &cfg).is_err());
        let mut cfg = test_cfg();
        cfg.kl_target = f64::NAN;
        assert!(run_hybrid(&ens, 0.8, &cfg).is_err());
    }

    #[test]
    fn hard_cap_forces_the_switch_when_divergence_stays_high() {
        // A tiny cap with an unreachable divergence target: the switch fires
        // at the cap and the mean phase picks up from the projected means.
        let ens = MetEnsemble::regular(3, 6).unwrap();
        let cfg = HybridConfig { kl_target: 0.0, max_full_iterations: 3, ..test_cfg() };
        let out = run_hybrid(&ens, 0.8, &cfg).unwrap();
        assert!(out.converged);
        assert_eq!(out.switch_iteration, 3);
        // The projected means seed the continuation: the first Gaussian row
        // starts from information carried over, so its posterior sits well
        // below the cold-start channel error rate.
        let first_gauss = &out.trace.rows[3];
        assert_eq!(first_gauss.phase, Phase::Gaussian);
        let cold = crate::gauss_approx::q_func(1.0 / 0.8);
        assert!(first_gauss.posterior_ber < cold);
    }
}
