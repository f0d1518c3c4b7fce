//! Per-iteration traces shared by all analysis engines.
//!
//! Every engine appends one [`TraceRow`] per decoding iteration with the
//! posterior error probability and per-edge-type message means; the full-
//! density engine additionally records Gaussian-ness diagnostics (KL
//! divergences).  Traces serialize to JSON (via serde) or to a flat CSV with
//! one column per edge type.

use serde::Serialize;

use crate::Result;

/// Which engine produced a trace row.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Phase {
    /// Full density evolution over quantized densities.
    Full,
    /// Single-parameter Gaussian recursion.
    Gaussian,
}

/// One decoding iteration of any engine.
#[derive(Clone, Debug, Serialize)]
pub struct TraceRow {
    /// 1-based decoding iteration.
    pub iteration: usize,
    /// Engine that produced this iteration.
    pub phase: Phase,
    /// Posterior (all-edges) error probability after the variable-node step.
    pub posterior_ber: f64,
    /// Mean of the variable-to-check message per edge type.
    pub mean_v: Vec<f64>,
    /// Mean of the check-to-variable message per edge type (state entering
    /// the next iteration).
    pub mean_u: Vec<f64>,
    /// KL divergence of the monitored check-to-variable message from its
    /// matched symmetric Gaussian; recorded by the full-density engine at
    /// monitoring intervals.
    pub kl_monitored: Option<f64>,
    /// Per-edge-type KL divergence of the variable-to-check message mixture
    /// from its matched symmetric Gaussian (full-density engine only; `NaN`
    /// marks a non-positive mean where no reference exists).
    pub kl_v: Option<Vec<f64>>,
}

/// An engine run's iteration history.
#[derive(Clone, Debug, Default, Serialize)]
pub struct Trace {
    /// One row per executed iteration, in order.
    pub rows: Vec<TraceRow>,
}

impl Trace {
    /// Writes the trace as CSV: fixed columns, then `mean_v_k`/`mean_u_k`
    /// (and `kl_v_k`) expanded per edge type.  Missing diagnostics are empty
    /// fields.
    pub fn write_csv<W: std::io::Write>(&self, mut w: W) -> Result<()> {
        let m_e = self.rows.first().map_or(0, |r| r.mean_v.len());
        write!(w, "iteration,phase,posterior_ber")?;
        for i in 1..=m_e {
            write!(w, ",mean_v_{i}")?;
        }
        for i in 1..=m_e {
            write!(w, ",mean_u_{i}")?;
        }
        write!(w, ",kl_monitored")?;
        for i in 1..=m_e {
            write!(w, ",kl_v_{i}")?;
        }
        writeln!(w)?;
        for row in &self.rows {
            let phase = match row.phase {
                Phase::Full => "full",
                Phase::Gaussian => "gaussian",
            };
            write!(w, "{},{},{}", row.iteration, phase, row.posterior_ber)?;
            for v in &row.mean_v {
                write!(w, ",{v}")?;
            }
            for u in &row.mean_u {
                write!(w, ",{u}")?;
            }
            match row.kl_monitored {
                Some(kl) => write!(w, ",{kl}")?,
                None => write!(w, ",")?,
            }
            match &row.kl_v {
                Some(kls) => {
                    for kl in kls {
                        if kl.is_nan() {
                            write!(w, ",")?;
                        } else {
                            write!(w, ",{kl}")?;
                        }
                    }
                }
                None => {
                    for _ in 0..m_e {
                        write!(w, ",")?;
                    }
                }
            }
            writeln!(w)?;
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn csv_layout_expands_per_edge_columns_and_blanks_missing_diagnostics() {
        let trace = Trace {
            rows: vec![
                TraceRow {
                    iteration: 1,
                    phase: Phase::Full,
                    posterior_ber: 0.1,
                    mean_v: vec![1.0, 2.0],
                    mean_u: vec![0.5, 0.25],
                    kl_monitored: Some(0.5),
                    kl_v: Some(vec![0.1, f64::NAN]),
                },
                TraceRow {
                    iteration: 2,
                    phase: Phase::Gaussian,
                    posterior_ber: 0.05,
                    mean_v: vec![1.5, 2.5],
                    mean_u: vec![0.75, 0.5],
                    kl_monitored: None,
                    kl_v: None,
                },
            ],
        };
        let mut buf = Vec::new();
        trace.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(
            lines[0],
            "iteration,phase,posterior_ber,mean_v_1,mean_v_2,mean_u_1,mean_u_2,kl_monitored,kl_v_1,kl_v_2"
        );
        assert_eq!(lines[1], "1,full,0.1,1,2,0.5,0.25,0.5,0.1,");
        assert_eq!(lines[2], "2,gaussian,0.05,1.5,2.5,0.75,0.5,,,");
        assert_eq!(lines.len(), 3);
    }
}
