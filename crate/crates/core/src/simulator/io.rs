use std::io::{BufRead, Write};

use serde::Deserialize;

use super::TraceRecord;
use crate::error::{Error, Result};

pub const TRACE_HEADER: &str = "step,epsilon_dp,epsilon_bdp,delta,lambda_star_dp,lambda_star_bdp";

/// One line of a distance stream.
#[derive(Debug, Clone, PartialEq, Deserialize)]
pub struct DistanceRecord {
    pub step: usize,
    pub distances: Vec<f64>,
}

/// Reads a JSON-lines distance stream. Blank lines are skipped; steps must
/// be strictly increasing.
pub fn read_distance_stream<R: BufRead>(reader: R) -> Result<Vec<DistanceRecord>> {
    let mut out: Vec<DistanceRecord> = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line_no = i + 1;
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let rec: DistanceRecord = serde_json::from_str(&line).map_err(|e| Error::Parse {
            line: line_no,
            msg: e.to_string(),
        })?;
        if let Some(prev) = out.last() {
            if rec.step <= prev.step {
                return Err(Error::Parse {
                    line: line_no,
                    msg: format!("step {} does not follow step {}", rec.step, prev.step),
                });
            }
        }
        if let Some(bad) = rec.distances.iter().find(|d| !(**d >= 0.0) || d.is_infinite()) {
            return Err(Error::Parse {
                line: line_no,
                msg: format!("distance {bad} is not a finite non-negative number"),
            });
        }
        out.push(rec);
    }
    Ok(out)
}

/// `x` with `digits` significant digits, in plain decimal.
pub fn format_sig(x: f64, digits: usize) -> String {
    if x == 0.0 || !x.is_finite() {
        return format!("{x}");
    }
    let exp = x.abs().log10().floor() as i32;
    let decimals = (digits as i32 - 1 - exp).max(0) as usize;
    let s = format!("{x:.decimals$}");
    // rounding can carry into a new leading digit, e.g. 9.9999999995 -> 10.000000000
    let carried = s.parse::<f64>().map_or(false, |r| r.abs() >= 10f64.powi(exp + 1));
    if carried && decimals > 0 {
        let decimals = decimals - 1;
        return format!("{x:.decimals$}");
    }
    s
}

fn opt_f64(x: Option<f64>) -> String {
    x.map(|v| format_sig(v, 10)).unwrap_or_default()
}

fn opt_u32(x: Option<u32>) -> String {
    x.map(|v| v.to_string()).unwrap_or_default()
}

pub fn write_trace_csv<W: Write>(mut w: W, records: &[TraceRecord]) -> Result<()> {
    writeln!(w, "{TRACE_HEADER}")?;
    for r in records {
        writeln!(
            w,
            "{},{},{},{},{},{}",
            r.step,
            opt_f64(r.epsilon_dp),
            opt_f64(r.epsilon_bdp),
            format_sig(r.delta, 10),
            opt_u32(r.lambda_star_dp),
            opt_u32(r.lambda_star_bdp)
        )?;
    }
    w.flush()?;
    Ok(())
}
