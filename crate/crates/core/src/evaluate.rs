//! Free-run evaluation of grey-box and Tustin-Net models on validation runs.

use std::fmt::Write as _;

use crate::data::{ExperimentKind, ExperimentSequence};
use crate::error::{Error, Result};
use crate::euler_lagrange::{simulate, ELParameters, SpringMode};
use crate::loss::rmse;
use crate::model::TustinModel;

/// Reference validation RMSEs [rad] measured on the physical apparatus, free-fall runs
/// #1-#4 then noise-excited runs #5-#8.
pub const REFERENCE_ROWS: [(&str, [f64; 8]); 3] = [
    ("Euler-Lagrange", [0.142, 0.107, 0.311, 0.067, 0.141, 0.161, 0.139, 0.299]),
    ("Tustin-Net (standard training)", [0.531, 0.228, 0.614, 0.184, 0.072, 0.123, 0.157, 0.179]),
    ("Tustin-Net (transfer learning)", [0.075, 0.153, 0.111, 0.094, 0.103, 0.142, 0.168, 0.177]),
];

/// A model that can be simulated in free run.
#[derive(Clone, Debug)]
pub enum Predictor {
    EulerLagrange { theta: ELParameters<f64>, mode: SpringMode },
    Tustin(TustinModel<f64>),
}

impl Predictor {
    /// Simulated outputs `ŷ_{0:T}` from the recorded initial state.
    ///
    /// Errors on a grid or dimension mismatch; a divergent rollout yields `Ok(None)`.
    pub fn free_run(&self, seq: &ExperimentSequence<f64>) -> Result<Option<Vec<Vec<f64>>>> {
        let x0 = seq.state(0);
        let result = match self {
            Predictor::EulerLagrange { theta, mode } => {
                if seq.n_q() != 2 || seq.u.first().map_or(0, Vec::len) != 1 {
                    return Err(Error::Dataset(format!(
                        "experiment {} does not match the two-angle, one-input pendulum",
                        seq.id
                    )));
                }
                let u: Vec<f64> = seq.u.iter().map(|v| v[0]).collect();
                simulate(theta, &x0, &u, seq.tau_s, *mode)
            }
            Predictor::Tustin(model) => {
                if (model.tau_s() - seq.tau_s).abs() > 1e-9 * seq.tau_s {
                    return Err(Error::Dataset(format!(
                        "model sampling time {} s differs from experiment {} ({} s)",
                        model.tau_s(),
                        seq.id,
                        seq.tau_s
                    )));
                }
                if model.n_q() != seq.n_q() || seq.u.first().map_or(0, Vec::len) != model.n_u() {
                    return Err(Error::Dataset(format!(
                        "model dimensions (n_q = {}, n_u = {}) do not fit experiment {}",
                        model.n_q(),
                        model.n_u(),
                        seq.id
                    )));
                }
                model.rollout(&x0, &seq.u)
            }
        };
        match result {
            Ok(traj) => Ok(Some(traj.outputs())),
            Err(Error::Divergence { .. }) => Ok(None),
            Err(e) => Err(e),
        }
    }

    /// Free-run RMSE on one experiment; `inf` when the rollout diverges.
    pub fn rmse_on(&self, seq: &ExperimentSequence<f64>) -> Result<f64> {
        match self.free_run(seq)? {
            Some(y) => rmse(&y, &seq.q),
            None => Ok(f64::INFINITY),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ExperimentLabel {
    pub id: usize,
    pub name: String,
    pub kind: ExperimentKind,
}

/// RMSE matrix: one row per model, one column per experiment.
#[derive(Clone, Debug, PartialEq)]
pub struct RmseTable {
    pub models: Vec<String>,
    pub experiments: Vec<ExperimentLabel>,
    pub rmse: Vec<Vec<f64>>,
}

/// Orders experiments free-fall first, keeping their relative order.
pub fn table_order(experiments: &[ExperimentSequence<f64>]) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..experiments.len()).collect();
    idx.sort_by_key(|&i| (experiments[i].kind != ExperimentKind::FreeFall, i));
    idx
}

pub fn evaluate_models(
    models: &[(String, Predictor)],
    experiments: &[ExperimentSequence<f64>],
    names: &[String],
) -> Result<RmseTable> {
    if names.len() != experiments.len() {
        return Err(Error::Config("every experiment needs a name".into()));
    }
    let order = table_order(experiments);
    let mut rows = Vec::with_capacity(models.len());
    for (_, model) in models {
        rows.push(order.iter().map(|&i| model.rmse_on(&experiments[i])).collect::<Result<Vec<_>>>()?);
    }
    Ok(RmseTable {
        models: models.iter().map(|(n, _)| n.clone()).collect(),
        experiments: order
            .iter()
            .map(|&i| ExperimentLabel {
                id: experiments[i].id,
                name: names[i].clone(),
                kind: experiments[i].kind,
            })
            .collect(),
        rmse: rows,
    })
}

impl RmseTable {
    pub fn to_csv(&self) -> String {
        let mut s = String::from("model");
        for e in &self.experiments {
            let _ = write!(s, ",{}", e.name);
        }
        s.push('\n');
        for (m, row) in self.models.iter().zip(&self.rmse) {
            s.push_str(&csv_field(m));
            for v in row {
                let _ = write!(s, ",{v}");
            }
            s.push('\n');
        }
        s
    }

    /// Aligned text with values in rad and, beside them, in units of 10⁻¹ rad.
    pub fn to_text(&self) -> String {
        let width = self.models.iter().map(String::len).max().unwrap_or(5).max(5);
        let mut s = String::new();
        let _ = writeln!(s, "Free-run RMSE on validation data [rad]  (x10^-1 rad in brackets)");
        let _ = write!(s, "{:width$}", "model");
        for (j, e) in self.experiments.iter().enumerate() {
            let tag = match e.kind {
                ExperimentKind::FreeFall => "ff",
                ExperimentKind::NoiseExcited => "wn",
            };
            let _ = write!(s, "  {:>16}", format!("#{} {tag}", j + 1));
        }
        s.push('\n');
        for (m, row) in self.models.iter().zip(&self.rmse) {
            let _ = write!(s, "{m:width$}");
            for &v in row {
                let _ = write!(s, "  {:>16}", format!("{v:.4} [{:.2}]", v * 10.0));
            }
            s.push('\n');
        }
        s.push('\n');
        for (j, e) in self.experiments.iter().enumerate() {
            let _ = writeln!(s, "#{}: {} ({})", j + 1, e.name, e.kind.label());
        }
        s.push('\n');
        let _ = writeln!(
            s,
            "Reference, physical apparatus (free-fall #1-#4, white noise #5-#8) [rad]  (x10^-1 rad in brackets):"
        );
        let ref_width = REFERENCE_ROWS.iter().map(|(n, _)| n.len()).max().unwrap_or(0);
        for (name, row) in REFERENCE_ROWS {
            let _ = write!(s, "{name:ref_width$}");
            for v in row {
                let _ = write!(s, "  {:>14}", format!("{v:.3} [{:.2}]", v * 10.0));
            }
            s.push('\n');
        }
        s
    }
}

fn csv_field(s: &str) -> String {
    if s.contains([',', '"', '\n']) {
        format!("\"{}\"", s.replace('"', "\"\""))
    } else {
        s.to_string()
    }
}

/// `t, theta, alpha` of the measurement plus one `theta, alpha` pair per model.
pub fn trajectory_csv(seq: &ExperimentSequence<f64>, models: &[(String, Option<Vec<Vec<f64>>>)]) -> String {
    let mut s = String::from("t,theta,alpha,u");
    for (name, _) in models {
        let stem: String = name
            .chars()
            .map(|c| if c.is_ascii_alphanumeric() { c.to_ascii_lowercase() } else { '_' })
            .collect();
        let _ = write!(s, ",{stem}_theta,{stem}_alpha");
    }
    s.push('\n');
    for k in 0..seq.len() {
        let _ = write!(s, "{},{},{},{}", seq.t[k], seq.q[k][0], seq.q[k][1], seq.u[k][0]);
        for (_, y) in models {
            match y {
                Some(y) => {
                    let _ = write!(s, ",{},{}", y[k][0], y[k][1]);
                }
                None => s.push_str(",nan,nan"),
            }
        }
        s.push('\n');
    }
    s
}

/// For each of the eight reference columns, whether the grey-box model beats
/// the transfer-learned network; pairs `(reference, measured)`.
pub fn reference_ordering(table: &RmseTable, el_row: usize, tl_row: usize) -> Vec<(bool, bool)> {
    REFERENCE_ROWS[0]
        .1
        .iter()
        .zip(REFERENCE_ROWS[2].1.iter())
        .zip(table.rmse[el_row].iter().zip(&table.rmse[tl_row]))
        .map(|((r_el, r_tl), (m_el, m_tl))| (r_el < r_tl, m_el < m_tl))
        .collect()
}
