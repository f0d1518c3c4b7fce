//! Multi-edge-type LDPC ensemble descriptions.
//!
//! An ensemble is given in node perspective by two coefficient lists:
//!
//! * *variable classes* `L_{b,d}`: fraction `coef` of variable nodes that
//!   receive the channel slots in `received` (slot `0` is the punctured,
//!   never-transmitted slot) and connect to `degrees[i]` sockets of edge type
//!   `i + 1`;
//! * *check classes* `R_d`: fraction `coef` of check nodes with `degrees[i]`
//!   sockets of edge type `i + 1`.
//!
//! The design rate is `Σ L coef − Σ R coef`, and for every edge type both
//! sides must expose the same socket count `Σ coef·degree` — the structural
//! invariant all analysis engines rely on.  Validation enforces it with a
//! configurable relative tolerance: exact (`1e-12`) for programmatically
//! built ensembles, loose (`1e-3`) for ensembles parsed from files whose
//! published coefficients are rounded to a few decimals.
//!
//! # Example
//!
//! ```
//! use metde::ensemble::MetEnsemble;
//!
//! let ens = MetEnsemble::regular(3, 6).unwrap();
//! assert_eq!(ens.edge_types(), 1);
//! assert!((ens.rate() - 0.5).abs() < 1e-12);
//! assert!((ens.avg_var_degree() - 3.0).abs() < 1e-12);
//! ```

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::{Error, Result};

/// Socket-balance tolerance for ensembles built in code, where coefficients
/// are exact.
pub const STRICT_SOCKET_TOL: f64 = 1e-12;

/// Socket-balance tolerance for ensembles parsed from files.  Published
/// degree distributions are typically rounded to four decimals, which shows
/// up as relative imbalances around `1e-4`–`1e-3`.
pub const PARSED_SOCKET_TOL: f64 = 1e-3;

/// Largest accepted node degree (guards table and power-cache sizes).
const MAX_DEGREE: usize = 10_000;

// ---------------------------------------------------------------------------
// Plain definition (serialization form)
// ---------------------------------------------------------------------------

/// One variable-node class: a `coef` fraction of nodes with the given channel
/// slots and per-edge-type socket counts.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct VarClassDef {
    /// Node fraction (relative to the transmitted-bit count).
    pub coef: f64,
    /// Channel slot multiplicities; index 0 is the punctured slot, indices
    /// `1..` are transmitted slots.  Length `received_types + 1`.
    ///
    /// Stored with one more entry than the received-type count: the leading
    /// slot distinguishes punctured from transmitted bits rather than
    /// renumbering the channels.
    #[serde(rename = "b")]
    pub received: Vec<usize>,
    /// Socket counts per edge type.  Length `edge_types`.
    #[serde(rename = "d")]
    pub degrees: Vec<usize>,
}

/// One check-node class: a `coef` fraction of checks with the given per-edge-
/// type socket counts.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ChkClassDef {
    /// Node fraction (relative to the transmitted-bit count).
    pub coef: f64,
    /// Socket counts per edge type.  Length `edge_types`.
    #[serde(rename = "d")]
    pub degrees: Vec<usize>,
}

/// The raw, unvalidated ensemble description (the JSON file format).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EnsembleDef {
    /// Number of edge types `m_e`.
    #[serde(rename = "m_e")]
    pub edge_types: usize,
    /// Number of transmitted channel slots `m_r` (the punctured slot is extra).
    #[serde(rename = "m_r")]
    pub received_types: usize,
    /// Variable-node classes (the terms of the polynomial `L`).
    #[serde(rename = "L")]
    pub variable_classes: Vec<VarClassDef>,
    /// Check-node classes (the terms of the polynomial `R`).
    #[serde(rename = "R")]
    pub check_classes: Vec<ChkClassDef>,
}

// ---------------------------------------------------------------------------
// Validated ensemble
// ---------------------------------------------------------------------------

/// A validated multi-edge-type ensemble with cached edge-perspective weights.
#[derive(Clone, Debug)]
pub struct MetEnsemble {
    def: EnsembleDef,
    rate: f64,
    var_sockets: Vec<f64>,
    chk_sockets: Vec<f64>,
    /// `lambda[i][c]`: fraction of type-`i+1` edges attached to variable
    /// class `c`.
    lambda: Vec<Vec<f64>>,
    /// `rho[i][j]`: fraction of type-`i+1` edges attached to check class `j`.
    rho: Vec<Vec<f64>>,
}

impl MetEnsemble {
    /// Validates a definition with the strict socket tolerance.
    pub fn new(def: EnsembleDef) -> Result<MetEnsemble> {
        MetEnsemble::with_socket_tolerance(def, STRICT_SOCKET_TOL)
    }

    /// Validates a definition, allowing relative socket imbalance up to
    /// `socket_tol` (use [`PARSED_SOCKET_TOL`] for file input).
    pub fn with_socket_tolerance(def: EnsembleDef, socket_tol: f64) -> Result<MetEnsemble> {
        validate_shape(&def)?;

        let m_e = def.edge_types;
        let mut var_sockets = vec![0.0; m_e];
        let mut chk_sockets = vec![0.0; m_e];
        for class in &def.variable_classes {
            for (i, &d) in class.degrees.iter().enumerate() {
                var_sockets[i] += class.coef * d as f64;
            }
        }
        for class in &def.check_classes {
            for (i, &d) in class.degrees.iter().enumerate() {
                chk_sockets[i] += class.coef * d as f64;
            }
        }
        for i in 0..m_e {
            let (v, c) = (var_sockets[i], chk_sockets[i]);
            if v == 0.0 && c == 0.0 {
                return Err(Error::InvalidEnsemble(format!(
                    "edge type {} has no sockets on either side",
                    i + 1
                )));
            }
            let imbalance = (v - c).abs() / v.max(c).max(1.0);
            if imbalance > socket_tol {
                return Err(Error::SocketImbalance {
                    edge_type: i + 1,
                    variable_side: v,
                    check_side: c,
                    imbalance,
                    limit: socket_tol,
                });
            }
        }

        // Transmitted variable nodes are the rate normalizer and must sum to
        // one (punctured classes come on top of that).
        let transmitted: f64 = def
            .variable_classes
            .iter()
            .filter(|c| c.received[1..].iter().any(|&b| b > 0))
            .map(|c| c.coef)
            .sum();
        if (transmitted - 1.0).abs() > socket_tol.max(1e-9) {
            return Err(Error::InvalidEnsemble(format!(
                "transmitted variable-node fractions sum to {transmitted}, expected 1"
            )));
        }

        let l_total: f64 = def.variable_classes.iter().map(|c| c.coef).sum();
        let r_total: f64 = def.check_classes.iter().map(|c| c.coef).sum();
        let rate = l_total - r_total;
        if !(rate > 0.0 && rate < 1.0) {
            return Err(Error::InvalidEnsemble(format!(
                "design rate {rate} outside (0, 1)"
            )));
        }

        let weights = |classes_deg: Vec<Vec<(f64, usize)>>, totals: &[f64]| -> Vec<Vec<f64>> {
            classes_deg
                .into_iter()
                .enumerate()
                .map(|(i, per_class)| {
                    per_class
                        .into_iter()
                        .map(|(coef, d)| {
                            if totals[i] > 0.0 {
                                coef * d as f64 / totals[i]
                            } else {
                                0.0
                            }
                        })
                        .collect()
                })
                .collect()
        };
        let lambda = weights(
            (0..m_e)
                .map(|i| def.variable_classes.iter().map(|c| (c.coef, c.degrees[i])).collect())
                .collect(),
            &var_sockets,
        );
        let rho = weights(
            (0..m_e)
                .map(|i| def.check_classes.iter().map(|c| (c.coef, c.degrees[i])).collect())
                .collect(),
            &chk_sockets,
        );

        Ok(MetEnsemble { def, rate, var_sockets, chk_sockets, lambda, rho })
    }

    /// The regular `(dv, dc)` ensemble as a single-edge-type instance:
    /// every variable node has degree `dv`, every check degree `dc`.
    pub fn regular(dv: usize, dc: usize) -> Result<MetEnsemble> {
        if dv < 2 || dc < 2 {
            return Err(Error::InvalidEnsemble(format!(
                "regular ensemble needs dv >= 2 and dc >= 2, got ({dv}, {dc})"
            )));
        }
        MetEnsemble::new(EnsembleDef {
            edge_types: 1,
            received_types: 1,
            variable_classes: vec![VarClassDef {
                coef: 1.0,
                received: vec![0, 1],
                degrees: vec![dv],
            }],
            check_classes: vec![ChkClassDef { coef: dv as f64 / dc as f64, degrees: vec![dc] }],
        })
    }

    /// Parses an ensemble from JSON text with the loose file tolerance.
    pub fn from_json_str(text: &str) -> Result<MetEnsemble> {
        let def: EnsembleDef = serde_json::from_str(text)?;
        MetEnsemble::with_socket_tolerance(def, PARSED_SOCKET_TOL)
    }

    /// Reads an ensemble from a JSON file with the loose file tolerance.
    pub fn from_json_file(path: impl AsRef<Path>) -> Result<MetEnsemble> {
        let text = std::fs::read_to_string(path)?;
        MetEnsemble::from_json_str(&text)
    }

    /// Serializes the definition as pretty JSON.
    pub fn to_json_string(&self) -> String {
        serde_json::to_string_pretty(&self.def).expect("ensemble definitions always serialize")
    }

    // -- accessors ----------------------------------------------------------

    /// The underlying definition.
    pub fn def(&self) -> &EnsembleDef {
        &self.def
    }

    /// Number of edge types `m_e`.
    pub fn edge_types(&self) -> usize {
        self.def.edge_types
    }

    /// Number of transmitted channel slots.
    pub fn received_types(&self) -> usize {
        self.def.received_types
    }

    /// Variable-node classes.
    pub fn var_classes(&self) -> &[VarClassDef] {
        &self.def.variable_classes
    }

    /// Check-node classes.
    pub fn chk_classes(&self) -> &[ChkClassDef] {
        &self.def.check_classes
    }

    /// Design rate `Σ L coef − Σ R coef`.
    pub fn rate(&self) -> f64 {
        self.rate
    }

    /// Socket count of edge type `i` (0-based) seen from the variable side.
    pub fn var_sockets(&self, i: usize) -> f64 {
        self.var_sockets[i]
    }

    /// Socket count of edge type `i` (0-based) seen from the check side;
    /// equals [`MetEnsemble::var_sockets`] up to the balance tolerance.
    pub fn chk_sockets(&self, i: usize) -> f64 {
        self.chk_sockets[i]
    }

    /// Fractions of type-`i` edges (0-based) attached to each variable class.
    pub fn var_edge_weights(&self, i: usize) -> &[f64] {
        &self.lambda[i]
    }

    /// Fractions of type-`i` edges (0-based) attached to each check class.
    pub fn chk_edge_weights(&self, i: usize) -> &[f64] {
        &self.rho[i]
    }

    /// Node-fraction weights of the variable classes (coefficients normalized
    /// to sum one); the weighting used for the posterior error probability.
    pub fn var_class_fractions(&self) -> Vec<f64> {
        let total: f64 = self.def.variable_classes.iter().map(|c| c.coef).sum();
        self.def.variable_classes.iter().map(|c| c.coef / total).collect()
    }

    /// Average total variable-node degree per node, `Σ coef·Σ_i d_i / Σ coef`.
    pub fn avg_var_degree(&self) -> f64 {
        let num: f64 = self
            .def
            .variable_classes
            .iter()
            .map(|c| c.coef * c.degrees.iter().sum::<usize>() as f64)
            .sum();
        let den: f64 = self.def.variable_classes.iter().map(|c| c.coef).sum();
        num / den
    }

    /// Average total check-node degree per node.
    pub fn avg_chk_degree(&self) -> f64 {
        let num: f64 = self
            .def
            .check_classes
            .iter()
            .map(|c| c.coef * c.degrees.iter().sum::<usize>() as f64)
            .sum();
        let den: f64 = self.def.check_classes.iter().map(|c| c.coef).sum();
        num / den
    }
}

fn validate_shape(def: &EnsembleDef) -> Result<()> {
    if def.edge_types == 0 {
        return Err(Error::InvalidEnsemble("at least one edge type is required".into()));
    }
    if def.received_types == 0 {
        return Err(Error::InvalidEnsemble("at least one transmitted channel slot is required".into()));
    }
    if def.variable_classes.is_empty() || def.check_classes.is_empty() {
        return Err(Error::InvalidEnsemble("both node sides need at least one class".into()));
    }
    for (c, class) in def.variable_classes.iter().enumerate() {
        if !(class.coef.is_finite() && class.coef > 0.0) {
            return Err(Error::InvalidEnsemble(format!(
                "variable class {c} has non-positive coefficient {}",
                class.coef
            )));
        }
        if class.received.len() != def.received_types + 1 {
            return Err(Error::InvalidEnsemble(format!(
                "variable class {c} has {} channel slots, expected {}",
                class.received.len(),
                def.received_types + 1
            )));
        }
        if class.degrees.len() != def.edge_types {
            return Err(Error::InvalidEnsemble(format!(
                "variable class {c} has {} degree entries, expected {}",
                class.degrees.len(),
                def.edge_types
            )));
        }
        if class.received.iter().sum::<usize>() == 0 {
            return Err(Error::InvalidEnsemble(format!(
                "variable class {c} receives no channel value (not even the punctured slot)"
            )));
        }
        if class.degrees.iter().sum::<usize>() == 0 {
            return Err(Error::InvalidEnsemble(format!("variable class {c} has no edges")));
        }
        if class.degrees.iter().any(|&d| d > MAX_DEGREE) {
            return Err(Error::InvalidEnsemble(format!(
                "variable class {c} exceeds the degree cap {MAX_DEGREE}"
            )));
        }
    }
    for (j, class) in def.check_classes.iter().enumerate() {
        if !(class.coef.is_finite() && class.coef > 0.0) {
            return Err(Error::InvalidEnsemble(format!(
                "check class {j} has non-positive coefficient {}",
                class.coef
            )));
        }
        if class.degrees.len() != def.edge_types {
            return Err(Error::InvalidEnsemble(format!(
                "check class {j} has {} degree entries, expected {}",
                class.degrees.len(),
                def.edge_types
            )));
        }
        let total: usize = class.degrees.iter().sum();
        if total < 2 {
            return Err(Error::DegreeOneCheck { class: j, degree: total });
        }
        if class.degrees.iter().any(|&d| d > MAX_DEGREE) {
            return Err(Error::InvalidEnsemble(format!(
                "check class {j} exceeds the degree cap {MAX_DEGREE}"
            )));
        }
    }
    Ok(())
}

// ---------------------------------------------------------------------------
// Per-edge floating-point cost model
// ---------------------------------------------------------------------------

/// Which analysis engine a cost estimate refers to.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum CostMethod {
    /// Full density evolution over quantized densities.
    Full,
    /// Mean-based Gaussian approximation.
    Mean,
    /// Error-rate-based Gaussian approximation.
    Ber,
    /// Reciprocal-channel Gaussian approximation.
    Rca,
    /// Two-phase scheme; `full_fraction` is the fraction of iterations spent
    /// in full density evolution (in `[0, 1]`).
    Hybrid {
        /// Fraction of iterations run as full density evolution.
        full_fraction: f64,
    },
}

/// Elementary floating-point operation classes counted by the cost model.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
pub enum Operation {
    /// Scalar additions.
    Sums,
    /// Scalar multiplications.
    Multiplications,
    /// Lookup-table evaluations (with interpolation).
    TableLookups,
    /// Exponential / logarithm evaluations.
    Exponentials,
    /// Q-function (Gaussian tail) evaluations.
    QFunctions,
    /// Full-density convolutions.
    Convolutions,
}

impl Operation {
    /// Stable lowercase name used in CSV output.
    pub fn name(self) -> &'static str {
        match self {
            Operation::Sums => "sums",
            Operation::Multiplications => "multiplications",
            Operation::TableLookups => "table_lookups",
            Operation::Exponentials => "exponentials",
            Operation::QFunctions => "q_functions",
            Operation::Convolutions => "convolutions",
        }
    }
}

/// Per-edge, per-iteration operation counts for one operation class, split by
/// node side.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct CostRow {
    /// Which operation class this row counts.
    pub operation: Operation,
    /// Count per edge at a variable node.
    pub variable: f64,
    /// Count per edge at a check node.
    pub check: f64,
}

/// Per-edge floating-point operation counts for one decoding iteration of the
/// chosen engine, in terms of the ensemble's average edge degrees.
///
/// All six operation classes are always present (possibly with zero counts)
/// so rows align across methods.  The hybrid row set is the `full_fraction`-
/// weighted combination of the full-DE and mean-approximation rows.
pub fn per_edge_cost(ens: &MetEnsemble, method: CostMethod) -> Result<Vec<CostRow>> {
    let dv = ens.avg_var_degree();
    let dc = ens.avg_chk_degree();

    let table = |sums: (f64, f64),
                 mults: (f64, f64),
                 lookups: (f64, f64),
                 exps: (f64, f64),
                 qfuncs: (f64, f64),
                 convs: (f64, f64)| {
        vec![
            CostRow { operation: Operation::Sums, variable: sums.0, check: sums.1 },
            CostRow { operation: Operation::Multiplications, variable: mults.0, check: mults.1 },
            CostRow { operation: Operation::TableLookups, variable: lookups.0, check: lookups.1 },
            CostRow { operation: Operation::Exponentials, variable: exps.0, check: exps.1 },
            CostRow { operation: Operation::QFunctions, variable: qfuncs.0, check: qfuncs.1 },
            CostRow { operation: Operation::Convolutions, variable: convs.0, check: convs.1 },
        ]
    };

    let zero = (0.0, 0.0);
    Ok(match method {
        CostMethod::Full => table(zero, zero, zero, zero, zero, (dv, dc - 1.0)),
        CostMethod::Mean => table((dv, dc), zero, (0.0, dc), (0.0, dc - 1.0), zero, zero),
        CostMethod::Ber => {
            table((dv, 2.0 * dc + 1.0), (2.0, 0.0), zero, (1.0, dc - 1.0), (1.0, 0.0), zero)
        }
        CostMethod::Rca => table((dv, dc - 1.0), zero, (dv - 1.0, dc - 1.0), zero, zero, zero),
        CostMethod::Hybrid { full_fraction } => {
            if !(0.0..=1.0).contains(&full_fraction) || !full_fraction.is_finite() {
                return Err(Error::InvalidParameter(format!(
                    "hybrid full_fraction must be in [0, 1], got {full_fraction}"
                )));
            }
            let full = per_edge_cost(ens, CostMethod::Full)?;
            let mean = per_edge_cost(ens, CostMethod::Mean)?;
            full.iter()
                .zip(&mean)
                .map(|(f, m)| CostRow {
                    operation: f.operation,
                    variable: full_fraction * f.variable + (1.0 - full_fraction) * m.variable,
                    check: full_fraction * f.check + (1.0 - full_fraction) * m.check,
                })
                .collect()
        }
    })
}

// ---------------------------------------------------------------------------
// Tests
// ---------------------------------------------------------------------------

#[cfg(test)]
mod tests {
    use super::*;

    /// The four-edge-type rate-1/2 example ensemble used throughout:
    /// `L = 0.5·r1·x1² + 0.3·r1·x1³ + 0.2·r0·x2³x3³ + 0.2·r1·x4`,
    /// `R = 0.4·x1⁴x2 + 0.1·x1³x2² + 0.2·x3³x4`.
    fn example_met() -> EnsembleDef {
        EnsembleDef {
            edge_types: 4,
            received_types: 1,
            variable_classes: vec![
                VarClassDef { coef: 0.5, received: vec![0, 1], degrees: vec![2, 0, 0, 0] },
                VarClassDef { coef: 0.3, received: vec![0, 1], degrees: vec![3, 0, 0, 0] },
                VarClassDef { coef: 0.2, received: vec![1, 0], degrees: vec![0, 3, 3, 0] },
                VarClassDef { coef: 0.2, received: vec![0, 1], degrees: vec![0, 0, 0, 1] },
            ],
            check_classes: vec![
                ChkClassDef { coef: 0.4, degrees: vec![4, 1, 0, 0] },
                ChkClassDef { coef: 0.1, degrees: vec![3, 2, 0, 0] },
                ChkClassDef { coef: 0.2, degrees: vec![0, 0, 3, 1] },
            ],
        }
    }

    #[test]
    fn example_ensemble_validates_with_expected_rate_and_degrees() {
        let ens = MetEnsemble::new(example_met()).unwrap();
        assert!((ens.rate() - 0.5).abs() < 1e-12, "rate {}", ens.rate());
        assert!((ens.avg_var_degree() - 2.75).abs() < 1e-12, "dv {}", ens.avg_var_degree());
        assert!(
            (ens.avg_chk_degree() - 33.0 / 7.0).abs() < 1e-12,
            "dc {}",
            ens.avg_chk_degree()
        );
    }

    #[test]
    fn edge_weights_are_socket_fractions() {
        let ens = MetEnsemble::new(example_met()).unwrap();
        // Edge type 1 sockets: 0.5·2 = 1.0 and 0.3·3 = 0.9 out of 1.9 total.
        let w = ens.var_edge_weights(0);
        assert!((w[0] - 10.0 / 19.0).abs() < 1e-12, "class 0 weight {}", w[0]);
        assert!((w[1] - 9.0 / 19.0).abs() < 1e-12, "class 1 weight {}", w[1]);
        assert_eq!(w[2], 0.0);
        assert_eq!(w[3], 0.0);
        // Edge type 4 is exclusively class 3 on the variable side.
        assert_eq!(ens.var_edge_weights(3), &[0.0, 0.0, 0.0, 1.0]);
        // Check side of edge type 2: 0.4·1 and 0.1·2 out of 0.6.
        let r = ens.chk_edge_weights(1);
        assert!((r[0] - 0.4 / 0.6).abs() < 1e-12);
        assert!((r[1] - 0.2 / 0.6).abs() < 1e-12);
        // Every weight vector sums to one on a used edge type.
        for i in 0..4 {
            let s: f64 = ens.var_edge_weights(i).iter().sum();
            assert!((s - 1.0).abs() < 1e-12, "lambda sum on edge {i}: {s}");
            let s: f64 = ens.chk_edge_weights(i).iter().sum();
            assert!((s - 1.0).abs() < 1e-12, "rho sum on edge {i}: {s}");
        }
    }

    #[test]
    fn regular_ensemble_has_exact_rate_and_balance() {
        let ens = MetEnsemble::regular(3, 6).unwrap();
        assert!((ens.rate() - 0.5).abs() < 1e-15);
        assert_eq!(ens.var_classes()[0].degrees, vec![3]);
        assert_eq!(ens.chk_classes()[0].degrees, vec![6]);
        assert!(MetEnsemble::regular(1, 6).is_err(), "degree-1 variables rejected");
    }

    #[test]
    fn socket_imbalance_is_detected_per_edge_type() {
        let mut def = example_met();
        def.check_classes[2].coef = 0.21; // breaks edge types 3 and 4
        let err = MetEnsemble::new(def).unwrap_err();
        match err {
            Error::SocketImbalance { edge_type, .. } => {
                assert_eq!(edge_type, 3, "first offending edge type reported")
            }
            other => panic!("expected socket imbalance, got {other:?}"),
        }
    }

    #[test]
    fn parsed_tolerance_accepts_rounded_coefficients() {
        let mut def = example_met();
        // A rounding-level perturbation: relative imbalance 2.5e-4.
        def.check_classes[0].coef = 0.4001;
        assert!(MetEnsemble::new(def.clone()).is_err(), "strict validation must reject");
        assert!(
            MetEnsemble::with_socket_tolerance(def, PARSED_SOCKET_TOL).is_ok(),
            "file tolerance must accept rounded tables"
        );
    }

    #[test]
    fn structural_defects_are_rejected() {
        // Degree-one check class.
        let mut def = example_met();
        def.check_classes[2].degrees = vec![0, 0, 0, 1];
        assert!(
            matches!(MetEnsemble::new(def), Err(Error::DegreeOneCheck { class: 2, degree: 1 })),
            "degree-one checks are structurally invalid"
        );

        // Unused edge type.
        let mut def = example_met();
        def.edge_types = 5;
        for c in &mut def.variable_classes {
            c.degrees.push(0);
        }
        for c in &mut def.check_classes {
            c.degrees.push(0);
        }
        assert!(MetEnsemble::new(def).is_err());

        // Transmitted fractions not normalized.
        let mut def = example_met();
        def.variable_classes[0].coef = 0.6;
        assert!(MetEnsemble::new(def).is_err());

        // Variable class with no edges.
        let mut def = example_met();
        def.variable_classes[3].degrees = vec![0, 0, 0, 0];
        assert!(MetEnsemble::new(def).is_err());
    }

    #[test]
    fn json_round_trip_preserves_definition() {
        let ens = MetEnsemble::new(example_met()).unwrap();
        let text = ens.to_json_string();
        let back = MetEnsemble::from_json_str(&text).unwrap();
        assert_eq!(back.def(), ens.def());
        assert!((back.rate() - ens.rate()).abs() < 1e-15);
        // The file format is a contract: polynomial-style field names.
        for field in ["\"m_e\"", "\"m_r\"", "\"L\"", "\"R\"", "\"coef\"", "\"b\"", "\"d\""] {
            assert!(text.contains(field), "serialized ensemble lacks field {field}: {text}");
        }
    }

    #[test]
    fn full_de_cost_counts_convolutions_only() {
        let ens = MetEnsemble::new(example_met()).unwrap();
        let rows = per_edge_cost(&ens, CostMethod::Full).unwrap();
        for row in &rows {
            match row.operation {
                Operation::Convolutions => {
                    assert!((row.variable - 2.75).abs() < 1e-12);
                    assert!((row.check - (33.0 / 7.0 - 1.0)).abs() < 1e-12);
                }
                _ => {
                    assert_eq!((row.variable, row.check), (0.0, 0.0), "{:?}", row.operation)
                }
            }
        }
    }

    #[test]
    fn hybrid_cost_blends_full_and_mean_rows() {
        let ens = MetEnsemble::new(example_met()).unwrap();
        let alpha = 0.3;
        let hybrid = per_edge_cost(&ens, CostMethod::Hybrid { full_fraction: alpha }).unwrap();
        let full = per_edge_cost(&ens, CostMethod::Full).unwrap();
        let mean = per_edge_cost(&ens, CostMethod::Mean).unwrap();
        for ((h, f), m) in hybrid.iter().zip(&full).zip(&mean) {
            assert!((h.variable - (alpha * f.variable + 0.7 * m.variable)).abs() < 1e-12);
            assert!((h.check - (alpha * f.check + 0.7 * m.check)).abs() < 1e-12);
        }
        assert!(per_edge_cost(&ens, CostMethod::Hybrid { full_fraction: 1.5 }).is_err());
        assert!(per_edge_cost(&ens, CostMethod::Hybrid { full_fraction: -0.1 }).is_err());
    }

    #[test]
    fn ber_and_rca_costs_match_their_recursions() {
        let ens = MetEnsemble::regular(3, 6).unwrap();
        let (dv, dc) = (3.0, 6.0);
        let rows = per_edge_cost(&ens, CostMethod::Ber).unwrap();
        let by_op = |op: Operation| rows.iter().find(|r| r.operation == op).unwrap();
        assert_eq!(by_op(Operation::Sums).variable, dv);
        assert_eq!(by_op(Operation::Sums).check, 2.0 * dc + 1.0);
        assert_eq!(by_op(Operation::Multiplications).variable, 2.0);
        assert_eq!(by_op(Operation::QFunctions).variable, 1.0);

        let rows = per_edge_cost(&ens, CostMethod::Rca).unwrap();
        let by_op = |op: Operation| rows.iter().find(|r| r.operation == op).unwrap();
        assert_eq!(by_op(Operation::TableLookups).variable, dv - 1.0);
        assert_eq!(by_op(Operation::TableLookups).check, dc - 1.0);
    }
}
