//! Fiber channel and threshold-detector model.
//!
//! The analytic side gives the per-pulse detection probability `D_ax` and the
//! joint click-and-error probability `e_ax` for a pulse of type `a` measured
//! in basis `x`. The Monte-Carlo side samples detections photon by photon so
//! that the marginal click probability in each basis is exactly `D_ax` at the
//! realized intensity.

use rand::Rng;
use rayon::prelude::*;

use crate::error::ChannelError;
use crate::model::{Basis, PulseType, SystemParams};
use crate::rng::{chunk_rng, CHUNK};
use crate::source::PulseRecord;

/// Fiber transmittance `10^(-alpha L / 10)`.
pub fn channel_transmittance(length_km: f64, alpha_db_per_km: f64) -> Result<f64, ChannelError> {
    if !(length_km >= 0.0) {
        return Err(ChannelError::NegativeLength(length_km));
    }
    Ok(10f64.powf(-alpha_db_per_km * length_km / 10.0))
}

/// Channel plus receiver efficiency at one fiber length.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DetectionModel {
    pub length_km: f64,
    pub eta_channel: f64,
    /// `eta_channel * eta_bob * eta_det`.
    pub eta: f64,
    p_dark: f64,
    p_afterpulse: f64,
    e_opt: f64,
    p_bob: [f64; 2],
}

impl DetectionModel {
    pub fn new(length_km: f64, params: &SystemParams) -> Result<Self, ChannelError> {
        let eta_channel = channel_transmittance(length_km, params.alpha_db_per_km)?;
        Ok(DetectionModel {
            length_km,
            eta_channel,
            eta: eta_channel * params.eta_bob * params.eta_det,
            p_dark: params.p_dark,
            p_afterpulse: params.p_afterpulse,
            e_opt: params.e_opt,
            p_bob: [params.p_z_bob, params.p_y_bob],
        })
    }

    fn attenuation(&self, mu: f64, x: Basis) -> f64 {
        (-self.eta * mu * self.p_bob[x.index()]).exp()
    }

    /// Detection probability in basis `x` for mean photon number `mu`.
    pub fn click_prob(&self, mu: f64, x: Basis) -> f64 {
        1.0 - (1.0 - 2.0 * self.p_dark) * self.attenuation(mu, x)
    }

    /// Joint probability of a click in basis `x` carrying a wrong bit.
    pub fn error_prob(&self, mu: f64, x: Basis) -> f64 {
        self.p_dark
            + self.e_opt * (1.0 - self.attenuation(mu, x))
            + self.p_afterpulse * self.click_prob(mu, x) / 2.0
    }

    /// Error probability given a click in the matching basis, capped at 1/2.
    pub fn conditional_error(&self, mu: f64, x: Basis) -> f64 {
        let d = self.click_prob(mu, x);
        if d <= 0.0 {
            return 0.0;
        }
        (self.error_prob(mu, x) / d).min(0.5)
    }

    /// Probability that Bob ends up recording basis `x`.
    ///
    /// Both detector pairs can fire on one pulse; such double clicks are
    /// assigned a uniformly random basis.
    pub fn bob_basis_prob(&self, mu: f64, x: Basis) -> f64 {
        let other = match x {
            Basis::Z => Basis::Y,
            Basis::Y => Basis::Z,
        };
        self.click_prob(mu, x) * (1.0 - self.click_prob(mu, other) / 2.0)
    }
}

/// `D_ax` at the nominal intensity of `a`.
pub fn detection_rate(a: PulseType, x: Basis, length_km: f64, params: &SystemParams) -> Result<f64, ChannelError> {
    Ok(DetectionModel::new(length_km, params)?.click_prob(params.mu(a), x))
}

/// `e_ax` at the nominal intensity of `a`.
///
/// Fails if the error probability exceeds the detection probability, which
/// would make the joint-probability reading inconsistent.
pub fn error_rate(a: PulseType, x: Basis, length_km: f64, params: &SystemParams) -> Result<f64, ChannelError> {
    let model = DetectionModel::new(length_km, params)?;
    let mu = params.mu(a);
    let (e, d) = (model.error_prob(mu, x), model.click_prob(mu, x));
    if e > d {
        return Err(ChannelError::ErrorExceedsDetection { pulse: a, basis: x.symbol(), error: e, detection: d });
    }
    Ok(e)
}

/// Key-basis error rate: the average of the per-type error rates
/// `e_aZ / D_aZ`, weighted by `D_aZ`.
pub fn qber_z(length_km: f64, params: &SystemParams) -> Result<f64, ChannelError> {
    let mut num = 0.0;
    let mut den = 0.0;
    for a in PulseType::ALL {
        let d = detection_rate(a, Basis::Z, length_km, params)?;
        let e = error_rate(a, Basis::Z, length_km, params)?;
        num += d * (e / d);
        den += d;
    }
    Ok(num / den)
}

/// Expected error fraction among sifted key-basis detections when types are
/// drawn with probabilities `weights` (indexed by [`PulseType::index`]) at
/// their nominal intensities.
pub fn sifted_qber(model: &DetectionModel, weights: [f64; 3], params: &SystemParams) -> f64 {
    let mut num = 0.0;
    let mut den = 0.0;
    for a in PulseType::ALL {
        let mu = params.mu(a);
        let w = weights[a.index()] * model.bob_basis_prob(mu, Basis::Z);
        num += w * model.conditional_error(mu, Basis::Z);
        den += w;
    }
    num / den
}

fn detect_one<R: Rng>(rng: &mut R, p: &mut PulseRecord, model: &DetectionModel) {
    let hit_z = model.eta * model.p_bob[0];
    let hit_y = model.eta * model.p_bob[1];
    let mut click = [false; 2];
    for _ in 0..p.photons {
        let u: f64 = rng.random();
        if u < hit_z {
            click[0] = true;
        } else if u < hit_z + hit_y {
            click[1] = true;
        }
    }
    for c in click.iter_mut() {
        if rng.random::<f64>() < 2.0 * model.p_dark {
            *c = true;
        }
    }
    let basis = match click {
        [false, false] => None,
        [true, false] => Some(Basis::Z),
        [false, true] => Some(Basis::Y),
        [true, true] => Some(if rng.random::<bool>() { Basis::Z } else { Basis::Y }),
    };
    p.basis_b = basis;
    p.detected = basis.is_some();
    p.error = match basis {
        Some(b) if b == p.basis_a => rng.random::<f64>() < model.conditional_error(p.mu_realized, b),
        _ => false,
    };
}

/// Fills `basis_b`, `detected` and `error` for every record in `records`.
///
/// Randomness is drawn from the stream of the chunk each record belongs to,
/// so a train processed whole or in [`CHUNK`]-aligned pieces gives identical
/// results.
pub fn detect_chunk(records: &mut [PulseRecord], model: &DetectionModel, seed: u64) {
    let Some(first) = records.first() else { return };
    let chunk = (first.index - 1) / CHUNK as u64;
    let mut rng = chunk_rng(seed, chunk);
    for p in records.iter_mut() {
        debug_assert_eq!((p.index - 1) / CHUNK as u64, chunk, "records must lie within one chunk");
        detect_one(&mut rng, p, model);
    }
}

/// Monte-Carlo detection over a whole pulse train starting at a chunk boundary.
pub fn simulate_detection(
    pulses: &mut [PulseRecord],
    length_km: f64,
    params: &SystemParams,
    seed: u64,
) -> Result<(), ChannelError> {
    let model = DetectionModel::new(length_km, params)?;
    pulses.par_chunks_mut(CHUNK).for_each(|chunk| detect_chunk(chunk, &model, seed));
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::PatternIntensityTable;
    use crate::source::{FluctuationModel, Transmitter};
    use PulseType::*;

    fn rel(a: f64, b: f64) -> f64 {
        (a - b).abs() / b.abs()
    }

    #[test]
    fn transmittance() {
        assert_eq!(channel_transmittance(0.0, 0.2).unwrap(), 1.0);
        assert!((channel_transmittance(50.0, 0.2).unwrap() - 0.1).abs() < 1e-15);
        assert!((channel_transmittance(100.0, 0.2).unwrap() - 0.01).abs() < 1e-16);
        assert!(channel_transmittance(-1.0, 0.2).is_err());
    }

    #[test]
    fn detection_examples() {
        let p = SystemParams::default();
        assert!((detection_rate(Vacuum, Basis::Z, 30.0, &p).unwrap() - 2e-6).abs() < 1e-15);
        // 1 - (1 - 2e-6) exp(-0.025 * 0.5 * 0.75)
        let expect = 1.0 - (1.0 - 2e-6) * (-0.009375f64).exp();
        assert!(rel(detection_rate(Signal, Basis::Z, 0.0, &p).unwrap(), expect) < 1e-14);
        assert!(rel(detection_rate(Signal, Basis::Z, 0.0, &p).unwrap(), 9.333173e-3) < 1e-6);
        assert!(rel(detection_rate(Decoy, Basis::Y, 50.0, &p).unwrap(), 1.26992e-4) < 1e-5);
    }

    #[test]
    fn error_examples() {
        let p = SystemParams::default();
        assert!((error_rate(Vacuum, Basis::Z, 0.0, &p).unwrap() - 1.01e-6).abs() < 1e-18);
        let d = 1.0 - (1.0 - 2e-6) * (-0.009375f64).exp();
        let expect = 1e-6 + 0.01 * (1.0 - (-0.009375f64).exp()) + 0.005 * d;
        assert!(rel(error_rate(Signal, Basis::Z, 0.0, &p).unwrap(), expect) < 1e-14);
        assert!(rel(expect, 1.40978e-4) < 1e-5);

        let clean = SystemParams { e_opt: 0.0, p_afterpulse: 0.0, p_dark: 0.0, ..p.clone() };
        for a in PulseType::ALL {
            assert_eq!(error_rate(a, Basis::Z, 10.0, &clean).unwrap(), 0.0);
        }

        let bad = SystemParams { e_opt: 1.0, p_afterpulse: 1.0, ..p };
        assert!(matches!(
            error_rate(Signal, Basis::Z, 0.0, &bad),
            Err(ChannelError::ErrorExceedsDetection { .. })
        ));
    }

    #[test]
    fn grid_consistency() {
        let p = SystemParams::default();
        for k in 0..=6 {
            let l = 25.0 * f64::from(k);
            for a in PulseType::ALL {
                for x in Basis::ALL {
                    let d = detection_rate(a, x, l, &p).unwrap();
                    let e = error_rate(a, x, l, &p).unwrap();
                    assert!((0.0..=d).contains(&e) && d <= 1.0, "{a}{x:?} at {l}");
                    if a != Vacuum {
                        assert!(detection_rate(a, x, l + 1.0, &p).unwrap() < d);
                    }
                }
            }
        }
    }

    #[test]
    fn qber_weighting() {
        let p = SystemParams::default();
        let mut num = 0.0;
        let mut den = 0.0;
        for a in [Signal, Decoy, Vacuum] {
            let d = detection_rate(a, Basis::Z, 0.0, &p).unwrap();
            num += error_rate(a, Basis::Z, 0.0, &p).unwrap();
            den += d;
        }
        assert!((qber_z(0.0, &p).unwrap() - num / den).abs() < 1e-15);
        assert!(qber_z(100.0, &p).unwrap() > qber_z(0.0, &p).unwrap());

        // equal per-type error rates: only e_opt, no dark counts or afterpulses
        let flat = SystemParams { p_dark: 0.0, p_afterpulse: 0.0, mu_vacuum: 0.01, ..p };
        assert!((qber_z(40.0, &flat).unwrap() - 0.01).abs() < 1e-15);
    }

    #[test]
    fn sifted_qber_rises_with_distance() {
        let p = SystemParams::default();
        let w = p.probs();
        let near = sifted_qber(&DetectionModel::new(0.0, &p).unwrap(), w, &p);
        let far = sifted_qber(&DetectionModel::new(100.0, &p).unwrap(), w, &p);
        assert!(far > near);
        // constant conditional error gives that constant back
        let model = DetectionModel::new(20.0, &p).unwrap();
        let c = model.conditional_error(0.5, Basis::Z);
        assert!((sifted_qber(&model, [1.0, 0.0, 0.0], &p) - c).abs() < 1e-15);
    }

    #[test]
    fn zero_intensity_no_dark_counts_never_clicks() {
        let p = SystemParams { p_dark: 0.0, ..SystemParams::default() };
        let tx = Transmitter::new(p.clone(), PatternIntensityTable::flat(), FluctuationModel::none());
        let mut pulses = tx.emit(100_000, 3);
        for r in pulses.iter_mut() {
            r.mu_realized = 0.0;
            r.photons = 0;
        }
        simulate_detection(&mut pulses, 0.0, &p, 9).unwrap();
        assert!(pulses.iter().all(|r| !r.detected && r.basis_b.is_none()));
    }

    fn click_rate(n: usize, l: f64, seed: u64) -> (f64, f64) {
        let p = SystemParams { p_signal: 1.0, p_decoy: 0.0, p_vacuum: 0.0, ..SystemParams::default() };
        let tx = Transmitter::new(p.clone(), PatternIntensityTable::flat(), FluctuationModel::none());
        let mut pulses = tx.emit(n, seed);
        simulate_detection(&mut pulses, l, &p, seed + 1).unwrap();
        let z = pulses.iter().filter(|r| r.basis_b == Some(Basis::Z)).count() as f64;
        let model = DetectionModel::new(l, &p).unwrap();
        (z / n as f64, model.bob_basis_prob(0.5, Basis::Z))
    }

    #[test]
    fn monte_carlo_click_rate_converges() {
        for n in [100_000usize, 1_000_000] {
            let (got, expect) = click_rate(n, 0.0, n as u64);
            let sd = (expect * (1.0 - expect) / n as f64).sqrt();
            assert!((got - expect).abs() < 4.0 * sd, "n={n}: {got} vs {expect}");
        }
    }

    #[test]
    fn detection_is_chunk_invariant() {
        let p = SystemParams::default();
        let tx = Transmitter::new(p.clone(), PatternIntensityTable::measured(), FluctuationModel::none());
        let mut whole = tx.emit(CHUNK + 500, 5);
        let mut pieces = whole.clone();
        simulate_detection(&mut whole, 0.0, &p, 77).unwrap();
        let model = DetectionModel::new(0.0, &p).unwrap();
        let (a, b) = pieces.split_at_mut(CHUNK);
        detect_chunk(b, &model, 77);
        detect_chunk(a, &model, 77);
        assert_eq!(whole, pieces);
    }
}
