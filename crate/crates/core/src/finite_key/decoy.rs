//! Three-intensity decoy bounds with Hoeffding-type finite-size deviations.
//!
//! Intensities are indexed 0 = signal, 1 = decoy, 2 = vacuum (the
//! [`PulseType::index`](crate::model::PulseType::index) order), so
//! `mu[0] > mu[1] + mu[2]` and `mu[1] > mu[2]` are required.

use serde::{Deserialize, Serialize};

use super::{BranchCounts, IntensityIntervals};
use crate::error::NoKey;
use crate::model::Basis;

/// Lower bounds on vacuum and single-photon events, the single-photon error
/// bound in the test basis and the resulting phase-error bound.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DecoyBounds {
    pub s0_key: f64,
    pub s1_key: f64,
    pub s1_test: f64,
    pub v1_test: f64,
    pub phi: f64,
}

/// Hoeffding deviation `sqrt(total / 2 * ln(21 / eps))`.
pub fn deviation(total: f64, eps: f64) -> f64 {
    (total / 2.0 * (21.0 / eps).ln()).sqrt()
}

/// Statistical correction to the phase-error rate for sampling `c` test
/// events and `d` key events with observed rate `b`.
pub fn gamma(a: f64, b: f64, c: f64, d: f64) -> f64 {
    if b <= 0.0 || b >= 1.0 {
        return 0.0;
    }
    let var = (c + d) * (1.0 - b) * b / (c * d * std::f64::consts::LN_2);
    let arg = (c + d) / (c * d * (1.0 - b) * b) * 21.0 * 21.0 / (a * a);
    (var * arg.log2()).max(0.0).sqrt()
}

/// Phase-error upper bound, capped at 1/2.
pub fn phase_error(v1_test: f64, s1_test: f64, s1_key: f64, eps: f64) -> f64 {
    let b = v1_test / s1_test;
    if b >= 0.5 {
        return 0.5;
    }
    (b + gamma(eps, b, s1_test, s1_key)).min(0.5)
}

/// Lower-bound coefficients for one basis:
/// `Y0` and `Y1` are per-pulse vacuum and single-photon yield bounds
/// (before the `tau` weighting).
fn yields(n: &[f64; 3], p: &[f64; 3], iv: &IntensityIntervals, eps: f64) -> (f64, f64) {
    let [l1, l2, l3] = iv.lo;
    let [u1, u2, u3] = iv.hi;
    let d = deviation(n.iter().sum(), eps);
    let minus = |k: usize| (n[k] - d) / p[k];
    let plus = |k: usize| (n[k] + d) / p[k];
    let y0 = ((l3.exp() * l2 * minus(2) - u2.exp() * u3 * plus(1)) / (l2 - u3)).max(0.0);
    let kappa = (u2 * u2 - l3 * l3) / (l1 * l1);
    let y1 = l1 * (l2.exp() * minus(1) - u3.exp() * plus(2) - kappa * (u1.exp() * plus(0) - y0))
        / (l1 * (u2 - l3) - u2 * u2 + l3 * l3);
    (y0, y1)
}

/// Worst-case bounds over intensities anywhere inside `iv`.
///
/// Each intensity occurrence takes the endpoint that weakens the bound, and
/// the photon-number weights use `sum p_k e^{-U_k}` (vacuum),
/// `sum p_k e^{-U_k} L_k` (single photons, lower) and `sum p_k e^{-L_k} U_k`
/// (single-photon errors, upper). With degenerate intervals this is exactly
/// the point-intensity bound.
pub fn interval_bounds(
    counts: &BranchCounts,
    iv: &IntensityIntervals,
    probs: &[f64; 3],
    eps: f64,
) -> Result<DecoyBounds, NoKey> {
    let [l1, l2, l3] = iv.lo;
    let [_, u2, u3] = iv.hi;
    if !(l1 > u2 + l3 && l2 > u3) || l1 * (u2 - l3) - u2 * u2 + l3 * l3 <= 0.0 {
        return Err(NoKey::IntervalsOverlap);
    }
    let tau0_lo: f64 = (0..3).map(|k| probs[k] * (-iv.hi[k]).exp()).sum();
    let tau1_lo: f64 = (0..3).map(|k| probs[k] * (-iv.hi[k]).exp() * iv.lo[k]).sum();
    let tau1_hi: f64 = (0..3).map(|k| probs[k] * (-iv.lo[k]).exp() * iv.hi[k]).sum();

    let key = counts.n[Basis::Z.index()];
    let test = counts.n[Basis::Y.index()];
    let (y0_key, y1_key) = yields(&key, probs, iv, eps);
    let (_, y1_test) = yields(&test, probs, iv, eps);
    let s0_key = tau0_lo * y0_key;
    let s1_key = tau1_lo * y1_key;
    let s1_test = tau1_lo * y1_test;

    let m = counts.m[Basis::Y.index()];
    let dm = deviation(m.iter().sum(), eps);
    let e1 = (u2.exp() * (m[1] + dm) / probs[1] - l3.exp() * (m[2] - dm) / probs[2]) / (l2 - u3);
    let v1_test = tau1_hi * e1;

    if !(s1_key > 0.0 && s1_test > 0.0) {
        return Err(NoKey::NoSinglePhotons);
    }
    let phi = phase_error(v1_test, s1_test, s1_key, eps);
    Ok(DecoyBounds { s0_key, s1_key, s1_test, v1_test, phi })
}

/// Bounds at fixed intensities `mu`.
pub fn point_bounds(counts: &BranchCounts, mu: [f64; 3], probs: &[f64; 3], eps: f64) -> Result<DecoyBounds, NoKey> {
    interval_bounds(counts, &IntensityIntervals { lo: mu, hi: mu }, probs, eps)
}
