//! Per-round traces and their CSV serialization.

use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::error::Result;

/// Scalar summary of one round, one CSV row.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RoundRow {
    pub t: usize,
    /// Population loss at `x_t`, or the mean per-sample loss when the
    /// population loss is too expensive to evaluate every round.
    pub loss: f64,
    pub excess_loss: Option<f64>,
    pub eps_norm_sq: Option<f64>,
    pub q_tilde_norm: f64,
    pub eta: f64,
    pub sigma_sq: f64,
}

/// Vectors of one round, kept only when a run is asked to record them.
///
/// `q`, `s`, `s_bar` and `eps` are machine averages in federated runs.
#[derive(Debug, Clone, PartialEq)]
pub struct RoundVectors {
    pub t: usize,
    pub x: Vec<f64>,
    pub x_prev: Vec<f64>,
    pub w: Vec<f64>,
    pub w_next: Vec<f64>,
    pub q: Vec<f64>,
    pub q_tilde: Vec<f64>,
    pub s: Vec<f64>,
    /// Population counterpart of `s`, when population gradients exist.
    pub s_bar: Option<Vec<f64>>,
    /// `q_t - alpha_t grad f(x_t)`, when population gradients exist.
    pub eps: Option<Vec<f64>>,
    /// `grad f(x_t)`, when population gradients exist.
    pub grad_at_x: Option<Vec<f64>>,
}

pub const CSV_HEADER: [&str; 7] = [
    "t",
    "loss",
    "excess_loss",
    "eps_norm_sq",
    "q_tilde_norm",
    "eta",
    "sigma_sq",
];

/// Fixed 17-significant-digit scientific notation.
pub fn fmt_float(v: f64) -> String {
    format!("{v:.16e}")
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map(fmt_float).unwrap_or_default()
}

pub fn write_trace_csv<W: Write>(rows: &[RoundRow], out: W) -> Result<()> {
    let mut w = csv::WriterBuilder::new().terminator(csv::Terminator::CRLF).from_writer(out);
    w.write_record(CSV_HEADER)?;
    for r in rows {
        w.write_record([
            r.t.to_string(),
            fmt_float(r.loss),
            fmt_opt(r.excess_loss),
            fmt_opt(r.eps_norm_sq),
            fmt_float(r.q_tilde_norm),
            fmt_float(r.eta),
            fmt_float(r.sigma_sq),
        ])?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_trace_csv<R: std::io::Read>(input: R) -> Result<Vec<RoundRow>> {
    let mut rdr = csv::Reader::from_reader(input);
    let mut rows = Vec::new();
    for rec in rdr.records() {
        let rec = rec?;
        let num = |k: usize| -> Option<f64> {
            let s = rec.get(k)?;
            if s.is_empty() {
                None
            } else {
                s.parse().ok()
            }
        };
        rows.push(RoundRow {
            t: rec.get(0).and_then(|s| s.parse().ok()).unwrap_or(0),
            loss: num(1).unwrap_or(f64::NAN),
            excess_loss: num(2),
            eps_norm_sq: num(3),
            q_tilde_norm: num(4).unwrap_or(f64::NAN),
            eta: num(5).unwrap_or(f64::NAN),
            sigma_sq: num(6).unwrap_or(f64::NAN),
        });
    }
    Ok(rows)
}
