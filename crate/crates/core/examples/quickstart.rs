//! End-to-end tour of the analysis pipeline on the regular (3,6) ensemble:
//! a full density-evolution threshold search, a hybrid run near threshold,
//! and a Monte-Carlo cross-check of the first decoding iterations.
//!
//! Run with `cargo run --release -p metde --example quickstart`.

use metde::ensemble::MetEnsemble;
use metde::full_de::{run_full_de, DeConfig};
use metde::hybrid::{run_hybrid, HybridConfig};
use metde::mc_oracle::{run_mc, McConfig};
use metde::threshold::{find_threshold, Method, ThresholdConfig};

fn main() {
    let ens = MetEnsemble::regular(3, 6).expect("regular ensemble");
    println!("ensemble: regular (3,6), rate {:.4}", ens.rate());

    // Threshold by full density evolution on a reduced grid (fast preview;
    // the production default is a 9801-point grid).
    let cfg = ThresholdConfig {
        de: DeConfig { grid_points: 2000, llr_max: 30.0, ..DeConfig::default() },
        ..ThresholdConfig::default()
    };
    let out = find_threshold(&ens, Method::Full, &cfg).expect("threshold search");
    println!(
        "full-DE threshold: sigma* = {:.4} ({} probes, {} iterations, {:.1?})",
        out.sigma_star,
        out.probes.len(),
        out.total_iterations,
        out.elapsed
    );

    // One decoding run just below threshold, switching to the Gaussian
    // recursion once the message density looks Gaussian.
    let sigma = out.sigma_star - 0.01;
    let hybrid_cfg = HybridConfig {
        de: DeConfig { grid_points: 2000, llr_max: 30.0, ..DeConfig::default() },
        ..HybridConfig::default()
    };
    let h = run_hybrid(&ens, sigma, &hybrid_cfg).expect("hybrid run");
    println!(
        "hybrid at sigma {:.4}: converged {} in {} iterations \
         (switched after {}, {:.0}% in full DE)",
        sigma,
        h.converged,
        h.iterations,
        h.switch_iteration,
        100.0 * h.full_fraction
    );

    // Monte-Carlo agreement over the first decoding iterations.
    let mc_cfg = McConfig { samples: 200_000, iterations: 4, ..McConfig::default() };
    let mc = run_mc(&ens, sigma, &mc_cfg).expect("monte carlo");
    let de = run_full_de(
        &ens,
        sigma,
        &DeConfig { grid_points: 2000, llr_max: 30.0, max_iterations: 4, ..DeConfig::default() },
    )
    .expect("full de");
    println!("monte-carlo cross-check at sigma {sigma:.4}:");
    for (row, (&p, &se)) in de.trace.rows.iter().zip(mc.ber.iter().zip(&mc.standard_error)) {
        let sigmas = (row.posterior_ber - p).abs() / se;
        println!(
            "  iter {}: de {:.5}  mc {:.5} +/- {:.5}  ({:.1} se apart)",
            row.iteration, row.posterior_ber, p, se, sigmas
        );
    }
}
