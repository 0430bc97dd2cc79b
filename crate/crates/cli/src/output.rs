//! CSV layouts shared by the subcommands.

use std::io::Write;

use odefilt::inverse::{Acceptance, Trace};

use crate::error::CliError;

/// Seventeen significant digits; non-finite values as `inf`, `-inf`, `nan`.
pub fn fmt_float(v: f64) -> String {
    if v.is_nan() {
        "nan".into()
    } else if v.is_infinite() {
        if v > 0.0 { "inf" } else { "-inf" }.into()
    } else {
        format!("{v:.16e}")
    }
}

pub fn trace_header(n_params: usize) -> Vec<String> {
    let mut h = vec!["iter".to_string()];
    h.extend((0..n_params).map(|k| format!("theta_{k}")));
    h.extend(["E", "rel_err", "accepted", "wall_ms"].map(String::from));
    h
}

fn acceptance_field(a: Option<Acceptance>) -> &'static str {
    match a {
        None => "",
        Some(Acceptance::Accepted) => "1",
        Some(Acceptance::Rejected) => "0",
        Some(Acceptance::Forced) => "forced",
    }
}

/// One row per trace record. `wall_ms` stays empty unless `timing` is set, so
/// that reruns with the same seed produce identical bytes.
pub fn write_trace<W: Write>(out: W, trace: &Trace, timing: bool) -> Result<(), CliError> {
    let n = trace.records.first().map_or(0, |r| r.theta.len());
    let mut w = csv::Writer::from_writer(out);
    w.write_record(trace_header(n))?;
    for r in &trace.records {
        let mut row = vec![r.index.to_string()];
        row.extend(r.theta.iter().map(|v| fmt_float(*v)));
        row.push(fmt_float(r.e));
        row.push(r.rel_err.map(fmt_float).unwrap_or_default());
        row.push(acceptance_field(r.acceptance).to_string());
        row.push(if timing {
            format!("{:.3}", r.wall_ms)
        } else {
            String::new()
        });
        w.write_record(&row)?;
    }
    w.flush()?;
    Ok(())
}

pub const SURFACE_HEADER: [&str; 4] = ["theta_a", "theta_b", "E_aware", "E_unaware"];
