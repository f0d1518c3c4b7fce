//! Degree-distribution search driven by the decoding threshold.
//!
//! An [`EnsembleTemplate`] is an ensemble definition in which some
//! variable-class coefficients are marked free, others follow linear
//! constraints (ties like `a₄ = a₃`, affine closures like `a₂ = ½ − a₃`),
//! and the check side is *derived*: for every candidate the check-class
//! coefficients are re-solved so that socket balance holds exactly, staying
//! as close as possible to the template's own check coefficients.  A
//! designated slack coefficient can absorb a rate mismatch.  Every ensemble
//! the search evaluates therefore satisfies socket balance to `1e-9` and the
//! target rate to `1e-6` by construction — infeasible parameter values are
//! reported with a reason instead of silently clamped.
//!
//! Two searches are provided: [`sweep_parameter`] walks one free coefficient
//! over an explicit grid (the exhaustive single-parameter search), and
//! [`optimize_ensemble`] runs a seeded, budget-limited randomized local
//! search over all free coefficients at once.
//!
//! # Example
//!
//! A rate-½ family with one punctured class; `v2` is free, `v3` is tied to
//! it, and `v1` closes the node fractions to one.  The check side is solved
//! per candidate:
//!
//! ```
//! use metde::optimizer::EnsembleTemplate;
//!
//! let t = EnsembleTemplate::from_json_str(r#"{
//!     "ensemble": {
//!         "m_e": 4, "m_r": 1,
//!         "L": [
//!             {"coef": 0.50, "b": [0,1], "d": [2,0,0,0]},
//!             {"coef": 0.25, "b": [0,1], "d": [3,0,0,0]},
//!             {"coef": 0.25, "b": [1,0], "d": [0,3,3,0]},
//!             {"coef": 0.25, "b": [0,1], "d": [0,0,0,1]}
//!         ],
//!         "R": [
//!             {"coef": 0.25, "d": [4,1,0,0]},
//!             {"coef": 0.25, "d": [3,2,0,0]},
//!             {"coef": 0.25, "d": [0,0,3,1]}
//!         ]
//!     },
//!     "free": ["v2"],
//!     "bounds": [[0.05, 0.45]],
//!     "constraints": [
//!         {"type": "tie", "follower": "v3", "leader": "v2"},
//!         {"type": "affine", "target": "v1", "constant": 0.5,
//!          "terms": [{"slot": "v2", "coef": -1.0}]}
//!     ],
//!     "target_rate": 0.5
//! }"#).unwrap();
//!
//! let ens = t.instantiate(&[0.2]).unwrap();
//! assert!((ens.rate() - 0.5).abs() < 1e-9);
//! // Balance repair yields check coefficients (1 − 3a, 3a − ½, a) at a = 0.2.
//! let coefs: Vec<f64> = ens.chk_classes().iter().map(|c| c.coef).collect();
//! assert!((coefs[0] - 0.4).abs() < 1e-12);
//! assert!((coefs[1] - 0.1).abs() < 1e-12);
//! assert!((coefs[2] - 0.2).abs() < 1e-12);
//! // Outside the feasible interval a check coefficient would go negative.
//! assert!(t.instantiate(&[0.1]).is_err());
//! ```

use std::path::Path;

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::ensemble::{EnsembleDef, MetEnsemble};
use crate::threshold::{find_threshold, Method, ThresholdConfig};
use crate::{Error, Result};

/// Socket-balance tolerance every instantiated candidate must meet.
pub const CANDIDATE_SOCKET_TOL: f64 = 1e-9;

/// Largest allowed gap between a candidate's rate and the target rate.
pub const RATE_TOL: f64 = 1e-6;

// ---------------------------------------------------------------------------
// Template definition (serialization form)
// ---------------------------------------------------------------------------

/// One linear constraint among variable-class coefficients, applied after the
/// free coefficients are set.  Slots are named `"v0"`, `"v1"`, … in the order
/// of the ensemble's variable classes.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum ConstraintDef {
    /// `follower = leader`.
    Tie {
        /// Slot whose coefficient is overwritten.
        follower: String,
        /// Slot it copies.
        leader: String,
    },
    /// `target = constant + Σ coef·slot`.
    Affine {
        /// Slot whose coefficient is overwritten.
        target: String,
        /// Constant term.
        constant: f64,
        /// Weighted slots summed into the target.
        terms: Vec<AffineTerm>,
    },
}

/// One weighted slot of an affine constraint.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AffineTerm {
    /// Variable-class slot name (`"v0"`, `"v1"`, …).
    pub slot: String,
    /// Weight multiplying that slot's coefficient.
    pub coef: f64,
}

/// The raw, unvalidated template description (the JSON file format): a full
/// ensemble plus the blocks marking which coefficients move and how.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TemplateDef {
    /// Base ensemble; its coefficients are the initial instantiation and the
    /// anchor the check-side balance repair stays closest to.
    pub ensemble: EnsembleDef,
    /// Names of the free variable-class coefficients (`"v0"`, `"v1"`, …).
    pub free: Vec<String>,
    /// Inclusive `[low, high]` box per free coefficient, aligned with `free`.
    pub bounds: Vec<(f64, f64)>,
    /// Constraints applied in order after the free coefficients are set.
    #[serde(default)]
    pub constraints: Vec<ConstraintDef>,
    /// Design rate every candidate must hit (within [`RATE_TOL`]).
    #[serde(default)]
    pub target_rate: Option<f64>,
    /// Variable-class slot adjusted to restore the target rate when the
    /// constrained instantiation misses it.
    #[serde(default)]
    pub rate_slack: Option<String>,
}

// ---------------------------------------------------------------------------
// Validated template
// ---------------------------------------------------------------------------

/// A validated template with slot names resolved to class indices.
#[derive(Clone, Debug)]
pub struct EnsembleTemplate {
    def: TemplateDef,
    /// Variable-class index per free slot.
    free: Vec<usize>,
    /// Compiled constraints: `(target, constant, [(slot, coef), …])`.
    constraints: Vec<(usize, f64, Vec<(usize, f64)>)>,
    /// Variable-class index of the rate-slack slot.
    slack: Option<usize>,
}

/// Parses a variable-class slot name `"v<index>"`.
fn parse_slot(name: &str, n_var: usize) -> Result<usize> {
    let index = name
        .strip_prefix('v')
        .and_then(|rest| rest.parse::<usize>().ok())
        .ok_or_else(|| {
            Error::Template(format!(
                "bad slot name {name:?}: variable-class coefficients are named \
                 \"v0\", \"v1\", …; check-side coefficients are derived by the \
                 balance repair and cannot be referenced"
            ))
        })?;
    if index >= n_var {
        return Err(Error::Template(format!(
            "slot {name:?} is out of range: the ensemble has {n_var} variable classes"
        )));
    }
    Ok(index)
}

impl EnsembleTemplate {
    /// Validates a template definition and resolves its slot names.
    pub fn new(def: TemplateDef) -> Result<EnsembleTemplate> {
        let n_var = def.ensemble.variable_classes.len();
        if def.free.is_empty() {
            return Err(Error::Template("template marks no coefficients free".into()));
        }
        if def.bounds.len() != def.free.len() {
            return Err(Error::Template(format!(
                "{} free coefficients but {} bounds entries",
                def.free.len(),
                def.bounds.len()
            )));
        }
        for &(lo, hi) in &def.bounds {
            if !(lo.is_finite() && hi.is_finite() && 0.0 <= lo && lo <= hi) {
                return Err(Error::Template(format!(
                    "bad bounds [{lo}, {hi}]: need 0 <= low <= high, both finite"
                )));
            }
        }

        let free: Vec<usize> =
            def.free.iter().map(|name| parse_slot(name, n_var)).collect::<Result<_>>()?;
        let mut seen = free.clone();
        seen.sort_unstable();
        seen.dedup();
        if seen.len() != free.len() {
            return Err(Error::Template("a slot is marked free twice".into()));
        }

        let mut constraints = Vec::with_capacity(def.constraints.len());
        let mut targets: Vec<usize> = Vec::new();
        for c in &def.constraints {
            let compiled = match c {
                ConstraintDef::Tie { follower, leader } => {
                    (parse_slot(follower, n_var)?, 0.0, vec![(parse_slot(leader, n_var)?, 1.0)])
                }
                ConstraintDef::Affine { target, constant, terms } => {
                    let terms = terms
                        .iter()
                        .map(|t| Ok((parse_slot(&t.slot, n_var)?, t.coef)))
                        .collect::<Result<Vec<_>>>()?;
                    (parse_slot(target, n_var)?, *constant, terms)
                }
            };
            if free.contains(&compiled.0) {
                return Err(Error::Template(format!(
                    "slot v{} is free but also a constraint target",
                    compiled.0
                )));
            }
            if targets.contains(&compiled.0) {
                return Err(Error::Template(format!(
                    "slot v{} is the target of two constraints",
                    compiled.0
                )));
            }
            targets.push(compiled.0);
            constraints.push(compiled);
        }

        let slack = match &def.rate_slack {
            None => None,
            Some(name) => {
                let idx = parse_slot(name, n_var)?;
                if free.contains(&idx) || targets.contains(&idx) {
                    return Err(Error::Template(format!(
                        "rate slack v{idx} must not be free or a constraint target"
                    )));
                }
                if def.target_rate.is_none() {
                    return Err(Error::Template(
                        "rate_slack given without a target_rate".into(),
                    ));
                }
                Some(idx)
            }
        };

        Ok(EnsembleTemplate { def, free, constraints, slack })
    }

    /// Parses and validates a template from its JSON text.
    pub fn from_json_str(text: &str) -> Result<EnsembleTemplate> {
        EnsembleTemplate::new(serde_json::from_str(text)?)
    }

    /// Reads and validates a template file.
    pub fn from_json_file(path: impl AsRef<Path>) -> Result<EnsembleTemplate> {
        let text = std::fs::read_to_string(path)?;
        EnsembleTemplate::from_json_str(&text)
    }

    /// The raw definition.
    pub fn def(&self) -> &TemplateDef {
        &self.def
    }

    /// Names of the free coefficients, in bound order.
    pub fn free_names(&self) -> &[String] {
        &self.def.free
    }

    /// The base ensemble's values of the free coefficients, clamped into
    /// their bounds — the starting point of [`optimize_ensemble`].
    pub fn initial_values(&self) -> Vec<f64> {
        self.free
            .iter()
            .zip(&self.def.bounds)
            .map(|(&idx, &(lo, hi))| {
                self.def.ensemble.variable_classes[idx].coef.clamp(lo, hi)
            })
            .collect()
    }

    /// Builds the candidate definition for the given free values: applies
    /// constraints, optionally overrides the slack slot, and re-solves the
    /// check side for socket balance.
    fn build_def(&self, values: &[f64], slack_value: Option<f64>) -> Result<EnsembleDef> {
        let mut def = self.def.ensemble.clone();
        for (&idx, &v) in self.free.iter().zip(values) {
            def.variable_classes[idx].coef = v;
        }
        if let (Some(idx), Some(v)) = (self.slack, slack_value) {
            def.variable_classes[idx].coef = v;
        }
        for (target, constant, terms) in &self.constraints {
            let value = constant
                + terms
                    .iter()
                    .map(|&(idx, coef)| coef * def.variable_classes[idx].coef)
                    .sum::<f64>();
            def.variable_classes[*target].coef = value;
        }
        for (i, class) in def.variable_classes.iter().enumerate() {
            if !(class.coef > 0.0) {
                return Err(Error::Template(format!(
                    "variable class v{i} has coefficient {:.6} after constraints",
                    class.coef
                )));
            }
        }
        let coefs = solve_check_coefs(&def)?;
        for (class, coef) in def.check_classes.iter_mut().zip(coefs) {
            class.coef = coef;
        }
        Ok(def)
    }

    /// Instantiates the template at the given free-coefficient values,
    /// repairing socket balance and the target rate.  Infeasible values —
    /// out of bounds, a coefficient driven negative, unbalanced sockets, a
    /// missed rate — produce an error naming the reason.
    pub fn instantiate(&self, values: &[f64]) -> Result<MetEnsemble> {
        if values.len() != self.free.len() {
            return Err(Error::Template(format!(
                "{} values supplied for {} free coefficients",
                values.len(),
                self.free.len()
            )));
        }
        for ((v, &(lo, hi)), name) in
            values.iter().zip(&self.def.bounds).zip(&self.def.free)
        {
            if !(lo <= *v && *v <= hi) {
                return Err(Error::Template(format!(
                    "{name} = {v} is outside its bounds [{lo}, {hi}]"
                )));
            }
        }

        let mut def = self.build_def(values, None)?;
        if let Some(target) = self.def.target_rate {
            if (def_rate(&def) - target).abs() > 1e-9 {
                def = self.repair_rate(values, target)?;
            }
        }

        let ens = MetEnsemble::with_socket_tolerance(def, CANDIDATE_SOCKET_TOL)
            .map_err(|e| Error::Template(format!("candidate rejected: {e}")))?;
        if let Some(target) = self.def.target_rate {
            if (ens.rate() - target).abs() > RATE_TOL {
                return Err(Error::Template(format!(
                    "candidate rate {:.8} misses the target {target:.8}",
                    ens.rate()
                )));
            }
        }
        Ok(ens)
    }

    /// Secant search on the slack coefficient until the rate hits the
    /// target.  The rate is affine in every coefficient, so two probes
    /// normally suffice.
    fn repair_rate(&self, values: &[f64], target: f64) -> Result<EnsembleDef> {
        let slack = self.slack.ok_or_else(|| {
            Error::Template(format!(
                "candidate rate misses the target {target} and the template \
                 designates no rate_slack coefficient"
            ))
        })?;
        let miss = |x: f64| -> Result<f64> {
            Ok(def_rate(&self.build_def(values, Some(x))?) - target)
        };
        let mut x0 = self.def.ensemble.variable_classes[slack].coef;
        let mut f0 = miss(x0)?;
        let mut x1 = x0 + 0.1 * x0.abs().max(1.0);
        let mut f1 = miss(x1)?;
        for _ in 0..8 {
            if f1.abs() < 1e-12 {
                break;
            }
            if (f1 - f0).abs() < 1e-15 {
                return Err(Error::Template(
                    "the slack coefficient does not change the rate".into(),
                ));
            }
            let x2 = x1 - f1 * (x1 - x0) / (f1 - f0);
            (x0, f0) = (x1, f1);
            (x1, f1) = (x2, miss(x2)?);
        }
        if f1.abs() > 1e-9 {
            return Err(Error::Template(format!(
                "rate repair stalled {f1:.3e} away from the target"
            )));
        }
        self.build_def(values, Some(x1))
    }
}

/// Design rate of a raw definition, `Σ L coef − Σ R coef`.
fn def_rate(def: &EnsembleDef) -> f64 {
    let l: f64 = def.variable_classes.iter().map(|c| c.coef).sum();
    let r: f64 = def.check_classes.iter().map(|c| c.coef).sum();
    l - r
}

/// Solves for check-class coefficients `c` with `A c = t`, where `A[i][j]`
/// is check class `j`'s degree on edge type `i` and `t` the variable-side
/// socket counts — the balance-repair step.  Among all exact solutions the
/// one closest to the template's own check coefficients is returned
/// (minimum-norm correction via the normal equations `A Aᵀ μ = t − A c₀`,
/// `c = c₀ + Aᵀ μ`), so a template whose base already balances is returned
/// unchanged.
fn solve_check_coefs(def: &EnsembleDef) -> Result<Vec<f64>> {
    let m = def.edge_types;
    let k = def.check_classes.len();
    let t: Vec<f64> = (0..m)
        .map(|i| {
            def.variable_classes
                .iter()
                .map(|c| c.coef * c.degrees[i] as f64)
                .sum()
        })
        .collect();
    let a: Vec<Vec<f64>> = (0..m)
        .map(|i| def.check_classes.iter().map(|c| c.degrees[i] as f64).collect())
        .collect();
    let c0: Vec<f64> = def.check_classes.iter().map(|c| c.coef).collect();

    // Residual r = t − A c₀ and Gram matrix G = A Aᵀ.
    let r: Vec<f64> = (0..m)
        .map(|i| t[i] - (0..k).map(|j| a[i][j] * c0[j]).sum::<f64>())
        .collect();
    let g: Vec<Vec<f64>> =
        (0..m).map(|i| (0..m).map(|l| dot(&a[i], &a[l])).collect()).collect();

    let mu = solve_consistent(g, r).ok_or_else(|| {
        Error::Template(
            "socket balance is unattainable for these variable-side coefficients"
                .into(),
        )
    })?;
    let coefs: Vec<f64> = (0..k)
        .map(|j| c0[j] + (0..m).map(|i| a[i][j] * mu[i]).sum::<f64>())
        .collect();

    // The Gram solve is exact for consistent systems; verify anyway so no
    // unbalanced candidate can reach the threshold engines.
    let scale = t.iter().fold(1.0f64, |acc, &v| acc.max(v.abs()));
    for i in 0..m {
        let got: f64 = (0..k).map(|j| a[i][j] * coefs[j]).sum();
        if (got - t[i]).abs() > CANDIDATE_SOCKET_TOL * scale {
            return Err(Error::Template(format!(
                "balance repair left edge type {} off by {:.3e}",
                i + 1,
                got - t[i]
            )));
        }
    }
    for (j, &c) in coefs.iter().enumerate() {
        if c <= 1e-12 {
            return Err(Error::Template(format!(
                "check class {j} repaired to non-positive coefficient {c:.6}"
            )));
        }
    }
    Ok(coefs)
}

fn dot(x: &[f64], y: &[f64]) -> f64 {
    x.iter().zip(y).map(|(a, b)| a * b).sum()
}

/// Gauss–Jordan elimination with partial pivoting for a (possibly singular
/// but consistent) symmetric system.  Redundant rows are accepted when their
/// right-hand side eliminates to zero; an inconsistent system returns
/// `None`.
fn solve_consistent(mut g: Vec<Vec<f64>>, mut r: Vec<f64>) -> Option<Vec<f64>> {
    let m = r.len();
    let scale = g
        .iter()
        .flatten()
        .fold(0.0f64, |acc, &v| acc.max(v.abs()))
        .max(f64::MIN_POSITIVE);
    let rhs_scale = r.iter().fold(1.0f64, |acc, &v| acc.max(v.abs()));
    let mut pivot_row_of_col = vec![None; m];
    let mut used = vec![false; m];
    for col in 0..m {
        let pivot = (0..m)
            .filter(|&i| !used[i])
            .max_by(|&i, &l| g[i][col].abs().total_cmp(&g[l][col].abs()))?;
        if g[pivot][col].abs() < 1e-12 * scale {
            continue;
        }
        used[pivot] = true;
        pivot_row_of_col[col] = Some(pivot);
        for i in 0..m {
            if i != pivot && g[i][col] != 0.0 {
                let f = g[i][col] / g[pivot][col];
                for c2 in 0..m {
                    g[i][c2] -= f * g[pivot][c2];
                }
                r[i] -= f * r[pivot];
            }
        }
    }
    // Rows never used as pivots are redundant; they must agree.
    for i in 0..m {
        if !used[i] && r[i].abs() > 1e-9 * rhs_scale {
            return None;
        }
    }
    let mut mu = vec![0.0; m];
    for col in 0..m {
        if let Some(p) = pivot_row_of_col[col] {
            mu[col] = r[p] / g[p][col];
        }
    }
    Some(mu)
}

// ---------------------------------------------------------------------------
// Single-parameter sweep
// ---------------------------------------------------------------------------

/// Result at one sweep grid value.
#[derive(Clone, Debug, Serialize)]
#[serde(tag = "status", rename_all = "snake_case")]
pub enum SweepPointOutcome {
    /// The candidate was feasible and its threshold was found.
    Threshold {
        /// Largest converging noise level.
        sigma_star: f64,
        /// Probes the bisection spent.
        probes: usize,
        /// Decoding iterations summed over all probes.
        iterations: usize,
    },
    /// The candidate was skipped.
    Skipped {
        /// Why the value produced no threshold.
        reason: String,
    },
}

/// One grid value of a sweep.
#[derive(Clone, Debug, Serialize)]
pub struct SweepPoint {
    /// Value of the swept coefficient.
    pub value: f64,
    /// What happened at this value.
    pub outcome: SweepPointOutcome,
}

/// A completed sweep.
#[derive(Clone, Debug, Serialize)]
pub struct SweepOutcome {
    /// Name of the swept coefficient.
    pub parameter: String,
    /// One entry per grid value, in grid order.
    pub points: Vec<SweepPoint>,
}

impl SweepOutcome {
    /// The grid value with the largest threshold, if any point succeeded.
    pub fn argmax(&self) -> Option<(f64, f64)> {
        self.points
            .iter()
            .filter_map(|p| match p.outcome {
                SweepPointOutcome::Threshold { sigma_star, .. } => {
                    Some((p.value, sigma_star))
                }
                SweepPointOutcome::Skipped { .. } => None,
            })
            .max_by(|a, b| a.1.total_cmp(&b.1))
    }
}

/// Exhaustively evaluates the threshold along one free coefficient.
///
/// `free_param` must name the template's single free coefficient (a guard
/// against sweeping the wrong template).  Grid values whose instantiation or
/// threshold search fails are reported as skipped with the reason; only a
/// sweep in which *every* value fails is an error.
pub fn sweep_parameter(
    template: &EnsembleTemplate,
    free_param: &str,
    grid: &[f64],
    method: Method,
    cfg: &ThresholdConfig,
) -> Result<SweepOutcome> {
    if template.free.len() != 1 {
        return Err(Error::InvalidParameter(format!(
            "sweep needs exactly one free coefficient; template has {}",
            template.free.len()
        )));
    }
    if free_param != template.def.free[0] {
        return Err(Error::InvalidParameter(format!(
            "template's free coefficient is {:?}, not {free_param:?}",
            template.def.free[0]
        )));
    }
    if grid.is_empty() {
        return Err(Error::InvalidParameter("empty sweep grid".into()));
    }

    let mut points = Vec::with_capacity(grid.len());
    for &value in grid {
        let outcome = match template
            .instantiate(&[value])
            .and_then(|ens| find_threshold(&ens, method, cfg))
        {
            Ok(out) => SweepPointOutcome::Threshold {
                sigma_star: out.sigma_star,
                probes: out.probes.len(),
                iterations: out.total_iterations,
            },
            Err(e) => SweepPointOutcome::Skipped { reason: e.to_string() },
        };
        points.push(SweepPoint { value, outcome });
    }

    if points
        .iter()
        .all(|p| matches!(p.outcome, SweepPointOutcome::Skipped { .. }))
    {
        let first = points
            .iter()
            .find_map(|p| match &p.outcome {
                SweepPointOutcome::Skipped { reason } => Some(reason.clone()),
                SweepPointOutcome::Threshold { .. } => None,
            })
            .unwrap_or_default();
        return Err(Error::Template(format!(
            "all {} grid values failed; first reason: {first}",
            points.len()
        )));
    }
    Ok(SweepOutcome { parameter: free_param.to_string(), points })
}

// ---------------------------------------------------------------------------
// Randomized joint search
// ---------------------------------------------------------------------------

/// Result of a randomized search.
#[derive(Clone, Debug)]
pub struct OptimizeOutcome {
    /// Best ensemble found.
    pub best: MetEnsemble,
    /// Free-coefficient values of the best ensemble.
    pub best_values: Vec<f64>,
    /// Its threshold.
    pub sigma_star: f64,
    /// Threshold evaluations spent (== the budget unless the search stalled
    /// in an infeasible region).
    pub evaluations: usize,
    /// How many proposals improved on the incumbent.
    pub accepted: usize,
}

/// How many consecutive infeasible proposals the search tolerates before
/// giving up on finding more feasible candidates.
const MAX_INFEASIBLE_STREAK: usize = 200;

/// Randomized local search over the template's free coefficients.
///
/// Starting from the template's own values (or, if those are infeasible,
/// from random draws inside the bounds), coefficients are perturbed with
/// Gaussian steps that decay over the run, candidates are repaired by
/// [`EnsembleTemplate::instantiate`], and a proposal is accepted when its
/// threshold beats the incumbent.  The search is deterministic for a given
/// `seed` and returns the best candidate found within `budget` threshold
/// evaluations — an anytime result.
pub fn optimize_ensemble(
    template: &EnsembleTemplate,
    method: Method,
    budget: usize,
    seed: u64,
    cfg: &ThresholdConfig,
) -> Result<OptimizeOutcome> {
    if budget == 0 {
        return Err(Error::InvalidParameter("budget must be at least 1".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let bounds = &template.def.bounds;

    // Feasible starting point: the template's own values, else random draws.
    let mut current = template.initial_values();
    if template.instantiate(&current).is_err() {
        let mut found = false;
        for _ in 0..MAX_INFEASIBLE_STREAK {
            current = bounds
                .iter()
                .map(|&(lo, hi)| lo + (hi - lo) * rng.random::<f64>())
                .collect();
            if template.instantiate(&current).is_ok() {
                found = true;
                break;
            }
        }
        if !found {
            return Err(Error::Template(format!(
                "no feasible instantiation found in {MAX_INFEASIBLE_STREAK} draws"
            )));
        }
    }

    let mut evaluations = 0;
    let mut accepted = 0;
    let mut best: Option<(Vec<f64>, MetEnsemble, f64)> = None;
    let evaluate = |values: &[f64], evaluations: &mut usize| -> Option<f64> {
        let ens = template.instantiate(values).ok()?;
        *evaluations += 1;
        let out = find_threshold(&ens, method, cfg).ok()?;
        Some(out.sigma_star)
    };

    if let Some(sigma) = evaluate(&current, &mut evaluations) {
        let ens = template.instantiate(&current)?;
        best = Some((current.clone(), ens, sigma));
    }

    let mut step: Vec<f64> = bounds
        .iter()
        .map(|&(lo, hi)| if hi > lo { 0.25 * (hi - lo) } else { 0.0 })
        .collect();
    let mut infeasible_streak = 0;
    while evaluations < budget {
        let anchor = best.as_ref().map(|(v, _, _)| v.clone()).unwrap_or_else(|| current.clone());
        let proposal: Vec<f64> = anchor
            .iter()
            .zip(&step)
            .zip(bounds)
            .map(|((&v, &s), &(lo, hi))| {
                let z: f64 = rng.sample(StandardNormal);
                (v + s * z).clamp(lo, hi)
            })
            .collect();
        match evaluate(&proposal, &mut evaluations) {
            None => {
                infeasible_streak += 1;
                if infeasible_streak % 20 == 0 {
                    for s in &mut step {
                        *s *= 0.8;
                    }
                }
                if infeasible_streak >= MAX_INFEASIBLE_STREAK {
                    break;
                }
            }
            Some(sigma) => {
                infeasible_streak = 0;
                let improved = best.as_ref().map_or(true, |(_, _, b)| sigma > *b);
                if improved {
                    let ens = template.instantiate(&proposal)?;
                    best = Some((proposal.clone(), ens, sigma));
                    accepted += 1;
                }
                current = proposal;
                for s in &mut step {
                    *s *= 0.97;
                }
            }
        }
    }

    let (best_values, best_ens, sigma_star) = best.ok_or_else(|| {
        Error::Template("no candidate produced a threshold within the budget".into())
    })?;
    Ok(OptimizeOutcome {
        best: best_ens,
        best_values,
        sigma_star,
        evaluations,
        accepted,
    })
}

// ---------------------------------------------------------------------------
// Tests
// ---------------------------------------------------------------------------

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gauss_approx::ApproxConfig;

    /// The sweep family from the module docs: `v2` free on `[0.05, 0.45]`,
    /// `v3 = v2`, `v1 = ½ − v2`, check side derived.  Feasibility requires
    /// `v2 ∈ [1/6, 1/3]` (outside, a check coefficient goes negative).
    fn sweep_template() -> EnsembleTemplate {
        EnsembleTemplate::from_json_str(
            r#"{
            "ensemble": {
                "m_e": 4, "m_r": 1,
                "L": [
                    {"coef": 0.50, "b": [0,1], "d": [2,0,0,0]},
                    {"coef": 0.25, "b": [0,1], "d": [3,0,0,0]},
                    {"coef": 0.25, "b": [1,0], "d": [0,3,3,0]},
                    {"coef": 0.25, "b": [0,1], "d": [0,0,0,1]}
                ],
                "R": [
                    {"coef": 0.25, "d": [4,1,0,0]},
                    {"coef": 0.25, "d": [3,2,0,0]},
                    {"coef": 0.25, "d": [0,0,3,1]}
                ]
            },
            "free": ["v2"],
            "bounds": [[0.05, 0.45]],
            "constraints": [
                {"type": "tie", "follower": "v3", "leader": "v2"},
                {"type": "affine", "target": "v1", "constant": 0.5,
                 "terms": [{"slot": "v2", "coef": -1.0}]}
            ],
            "target_rate": 0.5
        }"#,
        )
        .unwrap()
    }

    /// Fast threshold configuration for search tests: the scalar recursions
    /// make each threshold a few milliseconds.
    fn fast_cfg() -> ThresholdConfig {
        ThresholdConfig {
            tolerance: 5e-4,
            approx: ApproxConfig { max_iterations: 500, ..ApproxConfig::default() },
            ..ThresholdConfig::default()
        }
    }

    #[test]
    fn balance_repair_solves_the_check_side_exactly() {
        let t = sweep_template();
        // Hand-solved completion: (1 − 3a, 3a − ½, a).
        for a in [0.18, 0.25, 0.30] {
            let ens = t.instantiate(&[a]).unwrap();
            let coefs: Vec<f64> = ens.chk_classes().iter().map(|c| c.coef).collect();
            assert!((coefs[0] - (1.0 - 3.0 * a)).abs() < 1e-12, "b1 at a = {a}");
            assert!((coefs[1] - (3.0 * a - 0.5)).abs() < 1e-12, "b2 at a = {a}");
            assert!((coefs[2] - a).abs() < 1e-12, "b3 at a = {a}");
            assert!((ens.rate() - 0.5).abs() < 1e-9, "rate at a = {a}");
        }
    }

    #[test]
    fn infeasible_values_name_the_failing_coefficient() {
        let t = sweep_template();
        // Below 1/6 the second check coefficient is negative.
        let err = t.instantiate(&[0.10]).unwrap_err().to_string();
        assert!(err.contains("check class 1"), "reason should name the class: {err}");
        // Above 1/3 the first one is.
        let err = t.instantiate(&[0.40]).unwrap_err().to_string();
        assert!(err.contains("check class 0"), "reason should name the class: {err}");
        // Out-of-bounds values are rejected before any repair.
        let err = t.instantiate(&[0.50]).unwrap_err().to_string();
        assert!(err.contains("bounds"), "reason should mention bounds: {err}");
    }

    #[test]
    fn template_validation_rejects_structural_defects() {
        let mut def = sweep_template().def().clone();
        def.free = vec!["c0".into()];
        let err = EnsembleTemplate::new(def).unwrap_err().to_string();
        assert!(err.contains("derived"), "check-side slots are not addressable: {err}");

        let mut def = sweep_template().def().clone();
        def.free = vec!["v9".into()];
        assert!(EnsembleTemplate::new(def).is_err(), "out-of-range slot");

        let mut def = sweep_template().def().clone();
        def.bounds = vec![];
        assert!(EnsembleTemplate::new(def).is_err(), "bounds arity mismatch");

        let mut def = sweep_template().def().clone();
        def.free = vec!["v1".into()];
        assert!(
            EnsembleTemplate::new(def).is_err(),
            "a constraint target cannot also be free"
        );
    }

    #[test]
    fn template_json_round_trip() {
        let t = sweep_template();
        let text = serde_json::to_string(t.def()).unwrap();
        let back = EnsembleTemplate::from_json_str(&text).unwrap();
        assert_eq!(back.def(), t.def());
    }

    #[test]
    fn sweep_skips_infeasible_values_with_reasons() {
        let t = sweep_template();
        let grid: Vec<f64> = (1..=9).map(|i| 0.05 * i as f64).collect();
        let out = sweep_parameter(&t, "v2", &grid, Method::Mean, &fast_cfg()).unwrap();
        assert_eq!(out.points.len(), 9);
        let ok: Vec<f64> = out
            .points
            .iter()
            .filter_map(|p| match p.outcome {
                SweepPointOutcome::Threshold { .. } => Some(p.value),
                SweepPointOutcome::Skipped { .. } => None,
            })
            .collect();
        // Feasible interval [1/6, 1/3] contains exactly 0.20, 0.25, 0.30.
        assert_eq!(ok, vec![0.2, 0.25, 0.30000000000000004]);
        for p in &out.points {
            if let SweepPointOutcome::Skipped { reason } = &p.outcome {
                assert!(!reason.is_empty(), "skip at {} needs a reason", p.value);
            }
        }
        assert!(out.argmax().is_some());
    }

    #[test]
    fn sweep_of_one_value_is_a_single_threshold_search() {
        let t = sweep_template();
        let cfg = fast_cfg();
        let out = sweep_parameter(&t, "v2", &[0.25], Method::Mean, &cfg).unwrap();
        let direct =
            find_threshold(&t.instantiate(&[0.25]).unwrap(), Method::Mean, &cfg).unwrap();
        match out.points[0].outcome {
            SweepPointOutcome::Threshold { sigma_star, .. } => {
                assert_eq!(sigma_star, direct.sigma_star, "same search, same answer");
            }
            SweepPointOutcome::Skipped { .. } => panic!("0.25 is feasible"),
        }
    }

    #[test]
    fn sweep_guards_reject_wrong_usage() {
        let t = sweep_template();
        let cfg = fast_cfg();
        assert!(sweep_parameter(&t, "v1", &[0.25], Method::Mean, &cfg).is_err());
        assert!(sweep_parameter(&t, "v2", &[], Method::Mean, &cfg).is_err());
        // Every value infeasible → an error, not an empty result.
        assert!(sweep_parameter(&t, "v2", &[0.05, 0.1], Method::Mean, &cfg).is_err());
    }

    #[test]
    fn optimize_with_budget_one_evaluates_the_template_itself() {
        let t = sweep_template();
        let cfg = fast_cfg();
        let out = optimize_ensemble(&t, Method::Mean, 1, 42, &cfg).unwrap();
        assert_eq!(out.evaluations, 1);
        assert_eq!(out.best_values, t.initial_values());
        let direct =
            find_threshold(&t.instantiate(&out.best_values).unwrap(), Method::Mean, &cfg)
                .unwrap();
        assert_eq!(out.sigma_star, direct.sigma_star);
    }

    #[test]
    fn optimize_is_deterministic_and_beats_its_start() {
        let t = sweep_template();
        let cfg = fast_cfg();
        let a = optimize_ensemble(&t, Method::Mean, 12, 7, &cfg).unwrap();
        let b = optimize_ensemble(&t, Method::Mean, 12, 7, &cfg).unwrap();
        assert_eq!(a.best_values, b.best_values, "same seed, same search path");
        assert_eq!(a.sigma_star, b.sigma_star);

        let start =
            find_threshold(&t.instantiate(&t.initial_values()).unwrap(), Method::Mean, &cfg)
                .unwrap();
        assert!(
            a.sigma_star >= start.sigma_star,
            "anytime search never returns worse than its start: {} vs {}",
            a.sigma_star,
            start.sigma_star
        );
    }

    #[test]
    fn optimize_approaches_the_sweep_optimum() {
        // The exhaustive sweep is the oracle: a modest random-search budget
        // must land within a grid step of its best value.
        let t = sweep_template();
        let cfg = fast_cfg();
        let grid: Vec<f64> = (4..=6).map(|i| 0.05 * i as f64).collect();
        let sweep = sweep_parameter(&t, "v2", &grid, Method::Mean, &cfg).unwrap();
        let (_, sweep_best) = sweep.argmax().unwrap();
        let opt = optimize_ensemble(&t, Method::Mean, 25, 3, &cfg).unwrap();
        assert!(
            opt.sigma_star >= sweep_best - 2.0 * cfg.tolerance,
            "random search {} should reach the sweep optimum {}",
            opt.sigma_star,
            sweep_best
        );
    }

    #[test]
    fn consistent_singular_systems_solve_and_inconsistent_ones_fail() {
        // Rank-2 Gram matrix with a consistent duplicate row.
        let g = vec![
            vec![25.0, 10.0, 0.0, 0.0],
            vec![10.0, 5.0, 0.0, 0.0],
            vec![0.0, 0.0, 9.0, 3.0],
            vec![0.0, 0.0, 3.0, 1.0],
        ];
        let r = vec![5.0, 2.5, 3.0, 1.0];
        let mu = solve_consistent(g.clone(), r).unwrap();
        // Verify G μ = r on the pivoted rows by direct substitution.
        let back: Vec<f64> =
            (0..4).map(|i| (0..4).map(|j| g[i][j] * mu[j]).sum()).collect();
        for (i, (&got, want)) in back.iter().zip([5.0, 2.5, 3.0, 1.0]).enumerate() {
            assert!((got - want).abs() < 1e-9, "row {i}: {got} vs {want}");
        }
        // Same matrix, contradictory duplicate: no solution.
        let r_bad = vec![5.0, 2.5, 3.0, 2.0];
        assert!(solve_consistent(g, r_bad).is_none());
    }
}
