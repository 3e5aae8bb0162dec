//! Expected-count key rates over a grid of fiber lengths and window widths.

use std::io::{self, Write};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{akd_total, key_length, BranchCounts, BranchKey, DistillParams, IntensityIntervals, IntervalMethod, SecurityBudget};
use crate::channel::DetectionModel;
use crate::error::KeyError;
use crate::model::{Basis, PatternIntensityTable, PulseType, SystemParams};
use crate::sifting::{effective_probabilities, expected_ps_fraction, is_pass_probability};

/// Real-valued expected counts of one branch holding `n_key` key-basis
/// detections.
///
/// A sifted pulse of type `a` is prepared in basis `x` with probability
/// `P_xa` and then detected in the same basis with probability `D_ax`, which
/// already includes Bob's basis split. Errors scale with `e_ax` in the same
/// way. `n_branch` is the number of sifted pulses needed.
pub fn expected_counts(
    length_km: f64,
    t: f64,
    params: &SystemParams,
    table: &PatternIntensityTable,
    n_key: f64,
) -> Result<BranchCounts, KeyError> {
    if !(t > 0.0) {
        return Err(KeyError::BadWindow(t));
    }
    let probs = effective_probabilities(t, params, table);
    let model = DetectionModel::new(length_km, params)?;
    let mut c = BranchCounts::default();
    for x in Basis::ALL {
        for a in PulseType::ALL {
            let w = probs[a.index()] * params.p_alice(x);
            c.n[x.index()][a.index()] = w * model.click_prob(params.mu(a), x);
            c.m[x.index()][a.index()] = w * model.error_prob(params.mu(a), x);
        }
    }
    let scale = n_key / c.detections(Basis::Z);
    for x in 0..2 {
        for a in 0..3 {
            c.n[x][a] *= scale;
            c.m[x][a] *= scale;
        }
    }
    c.n_branch = scale;
    Ok(c)
}

/// One grid cell of the sweep.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct KeyRateReport {
    pub length_km: f64,
    pub t: f64,
    pub method: IntervalMethod,
    pub counts: BranchCounts,
    pub even: BranchKey,
    pub odd: BranchKey,
    pub total_bits: f64,
    pub pulses_emitted: f64,
    pub rate_per_pulse: f64,
    pub budget: SecurityBudget,
    /// Overall security parameter, `2 (eps_a + eps_b)`.
    pub security: f64,
}

/// Key rate at one `(L, t)` point with `params.n_sift` key-basis bits split
/// evenly between the two branches.
pub fn rate_point(
    length_km: f64,
    t: f64,
    params: &SystemParams,
    table: &PatternIntensityTable,
    method: IntervalMethod,
) -> Result<KeyRateReport, KeyError> {
    params.validate()?;
    let counts = expected_counts(length_km, t, params, table, params.n_sift / 2.0)?;
    let iv = IntensityIntervals::from_window(t, params, table);
    iv.validate()?;
    let d = DistillParams::new(effective_probabilities(t, params, table), params, method);
    let even = key_length(&counts, &iv, &d);
    let odd = key_length(&counts, &iv, &d);
    let budget = SecurityBudget::from_params(params);
    let (total_bits, security) = akd_total(&even, &odd, &budget);

    let pass: f64 = PulseType::ALL.iter().map(|&a| params.prob(a) * is_pass_probability(a, t, table)).sum();
    let pulses_emitted = 2.0 * counts.n_branch / (expected_ps_fraction(params) * pass);
    Ok(KeyRateReport {
        length_km,
        t,
        method,
        counts,
        even,
        odd,
        total_bits,
        pulses_emitted,
        rate_per_pulse: total_bits / pulses_emitted,
        budget,
        security,
    })
}

/// All cells of `lengths x ts`, ordered by length then window.
pub fn rate_sweep(
    lengths: &[f64],
    ts: &[f64],
    params: &SystemParams,
    table: &PatternIntensityTable,
    method: IntervalMethod,
) -> Result<Vec<KeyRateReport>, KeyError> {
    if lengths.is_empty() {
        return Err(KeyError::EmptyGrid("distance"));
    }
    if ts.is_empty() {
        return Err(KeyError::EmptyGrid("t"));
    }
    let cells: Vec<(f64, f64)> = lengths.iter().flat_map(|&l| ts.iter().map(move |&t| (l, t))).collect();
    cells.par_iter().map(|&(l, t)| rate_point(l, t, params, table, method)).collect()
}

pub const SWEEP_COLUMNS: &str =
    "L_km,t,rate_per_pulse,l_even,l_odd,s1_even,phi_even,s0_even,s1_odd,phi_odd,lambda_ec_even,e_key,pulses_emitted";

fn opt(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

/// Writes the sweep as CSV: one comment line, the header, one row per cell.
/// Bound columns are empty for branches without key.
pub fn write_sweep_csv<W: Write>(mut w: W, rows: &[KeyRateReport]) -> io::Result<()> {
    writeln!(w, "# key rate per emitted pulse; columns: {SWEEP_COLUMNS}")?;
    writeln!(w, "{SWEEP_COLUMNS}")?;
    for r in rows {
        writeln!(
            w,
            "{},{},{},{},{},{},{},{},{},{},{},{},{}",
            r.length_km,
            r.t,
            r.rate_per_pulse,
            r.even.length,
            r.odd.length,
            opt(r.even.bounds.map(|b| b.s1_key)),
            opt(r.even.bounds.map(|b| b.phi)),
            opt(r.even.bounds.map(|b| b.s0_key)),
            opt(r.odd.bounds.map(|b| b.s1_key)),
            opt(r.odd.bounds.map(|b| b.phi)),
            r.even.lambda_ec,
            r.even.key_error_rate,
            r.pulses_emitted
        )?;
    }
    Ok(())
}
