//! Monte-Carlo cross-check of density evolution.
//!
//! Instead of propagating quantized densities, this module propagates large
//! banks of sampled LLR messages through the same ensemble-averaged update
//! rules: variable nodes add random picks from the incoming banks, check
//! nodes combine them with the exact boxplus rule in its numerically stable
//! sign-magnitude form, and class memberships are drawn from the ensemble's
//! edge-perspective weights.
//!
//! A single sampled bank would *underreport* its own error: each iteration
//! resamples from the previous bank, so the bank's empirical distribution
//! carries noise from every earlier iteration, and below threshold the
//! recursion amplifies relative perturbations multiplicatively — by the
//! late iterations the propagated noise dwarfs the binomial error of the
//! final count.  The run is therefore split into independent replicas with
//! separate generator streams; the reported estimate is the across-replica
//! mean and the reported standard error is the across-replica standard
//! error of that mean, which includes propagated noise by construction.
//!
//! Everything here is deliberately self-contained — no FFTs, no quantized
//! grids, no lookup tables — so agreement with [`crate::full_de`] validates
//! both implementations at once.
//!
//! # Example
//!
//! ```
//! use metde::ensemble::MetEnsemble;
//! use metde::mc_oracle::{run_mc, McConfig};
//!
//! let ens = MetEnsemble::regular(3, 6).unwrap();
//! let cfg = McConfig { samples: 20_000, iterations: 3, ..McConfig::default() };
//! let out = run_mc(&ens, 0.9, &cfg).unwrap();
//! // With no check information yet, the first estimate is the raw channel
//! // error rate Q(1/0.9) ≈ 0.133.
//! assert!((out.ber[0] - 0.133).abs() < 5.0 * out.standard_error[0]);
//! ```

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::channel::llr_mean;
use crate::ensemble::MetEnsemble;
use crate::{Error, Result};

/// Parameters of a Monte-Carlo run.
#[derive(Clone, Debug)]
pub struct McConfig {
    /// Total samples, split evenly across the replicas (each replica's bank
    /// holds `samples / replicas` messages per edge type).
    pub samples: usize,
    /// Decoding iterations to simulate.
    pub iterations: usize,
    /// Independent replicas behind the error estimate.
    pub replicas: usize,
    /// Seed for the deterministic stream generators; replica `k` runs on
    /// stream `k` of the same seed.
    pub seed: u64,
}

impl Default for McConfig {
    fn default() -> Self {
        McConfig { samples: 1_000_000, iterations: 10, replicas: 20, seed: 0x6d63_6465 }
    }
}

/// Per-iteration error estimates of a Monte-Carlo run.
#[derive(Clone, Debug)]
pub struct McOutcome {
    /// Posterior error probability per iteration — the across-replica mean,
    /// estimated before each check-node update (matching the deterministic
    /// trace convention).
    pub ber: Vec<f64>,
    /// Across-replica standard error of each estimate.  Unlike a binomial
    /// error on the pooled count, this includes the noise a bank inherits
    /// from resampling earlier banks.
    pub standard_error: Vec<f64>,
}

/// Exact pairwise boxplus `2·atanh(tanh(a/2)·tanh(b/2))` in the stable
/// sign-magnitude form: the magnitude is
/// `min(|a|,|b|) + c(|a|+|b|) − c(||a|−|b||)` with `c(z) = ln(1+e^{-z})`,
/// and the sign multiplies.  A zero operand erases the result exactly.
fn boxplus(a: f64, b: f64) -> f64 {
    let corr = |z: f64| (-z).exp().ln_1p();
    let (x, y) = (a.abs(), b.abs());
    let mag = (x.min(y) + corr(x + y) - corr((x - y).abs())).max(0.0);
    if (a < 0.0) != (b < 0.0) {
        -mag
    } else {
        mag
    }
}

/// Cumulative distribution over class weights, for O(log n) sampling.
struct ClassPicker {
    cumulative: Vec<f64>,
}

impl ClassPicker {
    fn new(weights: &[f64]) -> ClassPicker {
        let mut cumulative = Vec::with_capacity(weights.len());
        let mut acc = 0.0;
        for &w in weights {
            acc += w;
            cumulative.push(acc);
        }
        // Guard the final edge against rounding: a draw can never overflow.
        if let Some(last) = cumulative.last_mut() {
            *last = f64::INFINITY;
        }
        ClassPicker { cumulative }
    }

    fn pick(&self, rng: &mut ChaCha8Rng) -> usize {
        let r: f64 = rng.random();
        self.cumulative.partition_point(|&c| c < r)
    }
}

/// One replica: propagates banks of `n` sampled messages per edge type and
/// returns its per-iteration posterior error estimates.
fn run_bank(
    ens: &MetEnsemble,
    m_ch: f64,
    n: usize,
    iterations: usize,
    rng: &mut ChaCha8Rng,
) -> Vec<f64> {
    let sd_ch = (2.0 * m_ch).sqrt();
    let n_types = ens.edge_types();

    // Channel LLR sample for one variable of class `c`: the sum of its
    // transmitted observations (punctured slots contribute exactly zero).
    let transmitted: Vec<usize> =
        ens.var_classes().iter().map(|c| c.received[1..].iter().sum()).collect();
    let channel_sample = |c: usize, rng: &mut ChaCha8Rng| -> f64 {
        (0..transmitted[c])
            .map(|_| m_ch + sd_ch * rng.sample::<f64, _>(StandardNormal))
            .sum()
    };

    let node_picker = ClassPicker::new(&ens.var_class_fractions());
    let var_pickers: Vec<ClassPicker> =
        (0..n_types).map(|i| ClassPicker::new(ens.var_edge_weights(i))).collect();
    let chk_pickers: Vec<ClassPicker> =
        (0..n_types).map(|i| ClassPicker::new(ens.chk_edge_weights(i))).collect();

    // Check-to-variable banks start as exact erasures.
    let mut u: Vec<Vec<f64>> = vec![vec![0.0; n]; n_types];
    let mut ber = Vec::with_capacity(iterations);

    for _ in 0..iterations {
        // --- Posterior estimate from the current banks -------------------
        let mut errors = 0.0;
        for _ in 0..n {
            let c = node_picker.pick(rng);
            let mut llr = channel_sample(c, rng);
            for (k, &d) in ens.var_classes()[c].degrees.iter().enumerate() {
                for _ in 0..d {
                    llr += u[k][rng.random_range(0..n)];
                }
            }
            if llr < 0.0 {
                errors += 1.0;
            } else if llr == 0.0 {
                errors += 0.5;
            }
        }
        ber.push(errors / n as f64);

        // --- Variable-to-check banks -------------------------------------
        let mut v: Vec<Vec<f64>> = Vec::with_capacity(n_types);
        for i in 0..n_types {
            let mut bank = Vec::with_capacity(n);
            for _ in 0..n {
                let c = var_pickers[i].pick(rng);
                let mut llr = channel_sample(c, rng);
                for (k, &d) in ens.var_classes()[c].degrees.iter().enumerate() {
                    let picks = if k == i { d - 1 } else { d };
                    for _ in 0..picks {
                        llr += u[k][rng.random_range(0..n)];
                    }
                }
                bank.push(llr);
            }
            v.push(bank);
        }

        // --- Check-to-variable banks -------------------------------------
        for i in 0..n_types {
            for slot in 0..n {
                let j = chk_pickers[i].pick(rng);
                let mut acc = f64::INFINITY; // boxplus identity
                for (k, &d) in ens.chk_classes()[j].degrees.iter().enumerate() {
                    let picks = if k == i { d - 1 } else { d };
                    for _ in 0..picks {
                        acc = boxplus(acc, v[k][rng.random_range(0..n)]);
                    }
                }
                u[i][slot] = acc;
            }
        }
    }

    ber
}

/// Runs the sampled evolution and reports per-iteration error estimates
/// with honest across-replica standard errors.
pub fn run_mc(ens: &MetEnsemble, sigma: f64, cfg: &McConfig) -> Result<McOutcome> {
    if cfg.replicas < 2 {
        return Err(Error::InvalidParameter(format!(
            "need at least 2 replicas for a standard error, got {}",
            cfg.replicas
        )));
    }
    let bank = cfg.samples / cfg.replicas;
    if bank < 100 {
        return Err(Error::InvalidParameter(format!(
            "need at least 100 samples per replica bank, got {} ({} samples over {} replicas)",
            bank, cfg.samples, cfg.replicas
        )));
    }
    if cfg.iterations == 0 {
        return Err(Error::InvalidParameter("iterations must be at least 1".into()));
    }
    let m_ch = llr_mean(sigma)?;

    let mut per_replica: Vec<Vec<f64>> = Vec::with_capacity(cfg.replicas);
    for k in 0..cfg.replicas {
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        rng.set_stream(k as u64);
        per_replica.push(run_bank(ens, m_ch, bank, cfg.iterations, &mut rng));
    }

    let k = cfg.replicas as f64;
    let mut ber = Vec::with_capacity(cfg.iterations);
    let mut standard_error = Vec::with_capacity(cfg.iterations);
    for t in 0..cfg.iterations {
        let mean = per_replica.iter().map(|r| r[t]).sum::<f64>() / k;
        let var = per_replica.iter().map(|r| (r[t] - mean).powi(2)).sum::<f64>() / (k - 1.0);
        ber.push(mean);
        standard_error.push((var / k).sqrt());
    }

    Ok(McOutcome { ber, standard_error })
}

// ---------------------------------------------------------------------------
// Tests
// ---------------------------------------------------------------------------
