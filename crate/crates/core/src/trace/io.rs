//! Two-column `time_s,value` CSV traces.

use std::io::{BufRead, Write};

use super::Trace;
use crate::error::TraceError;

pub fn write_trace_csv<W: Write>(mut w: W, trace: &Trace) -> Result<(), TraceError> {
    writeln!(w, "time_s,value")?;
    let dt = 1.0 / trace.sample_rate;
    for (k, v) in trace.samples.iter().enumerate() {
        writeln!(w, "{:e},{v:e}", k as f64 * dt)?;
    }
    Ok(())
}

/// Reads a trace; the sample rate comes from the first two time stamps and
/// the slot period must be given.
pub fn read_trace_csv<R: BufRead>(r: R, period: f64) -> Result<Trace, TraceError> {
    let mut times = Vec::new();
    let mut samples = Vec::new();
    for (k, line) in r.lines().enumerate() {
        let line = line?;
        let line = line.trim();
        if k == 0 {
            if line != "time_s,value" {
                return Err(TraceError::Parse { line: 1, reason: format!("expected header time_s,value, got {line:?}") });
            }
            continue;
        }
        if line.is_empty() {
            continue;
        }
        let parse = |s: Option<&str>| -> Result<f64, TraceError> {
            let s = s.ok_or_else(|| TraceError::Parse { line: k + 1, reason: "missing column".into() })?;
            s.trim().parse().map_err(|e| TraceError::Parse { line: k + 1, reason: format!("{s:?}: {e}") })
        };
        let mut cols = line.split(',');
        times.push(parse(cols.next())?);
        samples.push(parse(cols.next())?);
        if cols.next().is_some() {
            return Err(TraceError::Parse { line: k + 1, reason: "more than two columns".into() });
        }
    }
    if times.len() < 2 {
        return Err(TraceError::Parse { line: times.len() + 1, reason: "need at least two samples".into() });
    }
    let dt = times[1] - times[0];
    if !(dt > 0.0) {
        return Err(TraceError::Parse { line: 3, reason: "time stamps must increase".into() });
    }
    let trace = Trace { sample_rate: 1.0 / dt, samples, period };
    trace.samples_per_slot()?;
    Ok(trace)
}
