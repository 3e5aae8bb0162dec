//! Synthetic modulator traces and six-pattern intensity statistics.
//!
//! A two-electrode intensity modulator is driven in complementary mode: the
//! binary levels of the first half of each slot are inverted in the second
//! half. Band-limited drive electronics let each slot remember its
//! predecessor, which shows up as a pattern-dependent pulse area.

mod drive;
mod io;

use std::fmt::Write as _;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

pub use drive::{envelope, optical_trace, simulate_areas, synthesize_drive, DriveSynth, LaserNoise};
pub use io::{read_trace_csv, write_trace_csv};

use crate::error::TraceError;
use crate::model::PulseType;

/// `cos^2((phi1 - phi2) / 2)`.
pub fn modulator_transfer(phi1: f64, phi2: f64) -> f64 {
    let c = ((phi1 - phi2) / 2.0).cos();
    c * c
}

/// Uniformly sampled waveform made of whole slots.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Trace {
    pub sample_rate: f64,
    pub samples: Vec<f64>,
    pub period: f64,
}

impl Trace {
    pub fn samples_per_slot(&self) -> Result<usize, TraceError> {
        let x = self.sample_rate * self.period;
        let n = x.round();
        if !(n.is_finite()) || (x - n).abs() > 1e-6 * n.max(1.0) {
            return Err(TraceError::Config(format!("sample_rate * period = {x} is not an integer")));
        }
        if n < 8.0 {
            return Err(TraceError::TooFewSamples(n as usize));
        }
        Ok(n as usize)
    }

    pub fn slots(&self) -> Result<usize, TraceError> {
        let per_slot = self.samples_per_slot()?;
        if self.samples.len() % per_slot != 0 {
            return Err(TraceError::Misaligned { samples: self.samples.len(), per_slot });
        }
        Ok(self.samples.len() / per_slot)
    }

    pub fn scaled(&self, c: f64) -> Trace {
        Trace { samples: self.samples.iter().map(|v| c * v).collect(), ..self.clone() }
    }
}

/// Drive, modulator and laser settings.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TraceConfig {
    pub period_s: f64,
    pub samples_per_slot: usize,
    /// Drive bandwidth; infinity bypasses the filters (ideal rectangles).
    pub bandwidth_hz: f64,
    /// Gain `A` of the lead-lag stage; 0 leaves a pure one-pole response.
    pub peaking: f64,
    pub peaking_tau_s: f64,
    pub v_pi: f64,
    /// Transmittance of the D state, which fixes `V_phi`.
    pub decoy_transmittance: f64,
    pub pulse_fwhm_s: f64,
    pub pulse_center_s: f64,
    pub timing_offset_s: f64,
    pub jitter_rms_s: f64,
    /// Relative rms of the per-pulse laser amplitude.
    pub amplitude_noise: f64,
    pub seed: u64,
}

impl Default for TraceConfig {
    fn default() -> Self {
        TraceConfig {
            period_s: 0.8e-9,
            samples_per_slot: 64,
            bandwidth_hz: 10e9,
            peaking: 0.15,
            peaking_tau_s: 300e-12,
            v_pi: 1.0,
            decoy_transmittance: 0.421,
            pulse_fwhm_s: 50e-12,
            pulse_center_s: 200e-12,
            timing_offset_s: 0.0,
            jitter_rms_s: 0.0,
            amplitude_noise: 0.03,
            seed: 1,
        }
    }
}

impl TraceConfig {
    pub fn ideal(&self) -> TraceConfig {
        TraceConfig { bandwidth_hz: f64::INFINITY, ..self.clone() }
    }

    pub fn sample_interval(&self) -> f64 {
        self.period_s / self.samples_per_slot as f64
    }

    pub fn sample_rate(&self) -> f64 {
        self.samples_per_slot as f64 / self.period_s
    }

    /// Electrode-2 Hi level: the phase `pi - 2 acos(sqrt(T_D))` in volts.
    pub fn v_phi(&self) -> f64 {
        let phi = std::f64::consts::PI - 2.0 * self.decoy_transmittance.sqrt().acos();
        phi * self.v_pi / std::f64::consts::PI
    }

    pub fn trace(&self, samples: Vec<f64>) -> Trace {
        Trace { sample_rate: self.sample_rate(), samples, period: self.period_s }
    }

    pub fn validate(&self) -> Result<(), TraceError> {
        let bad = |what: &str| Err(TraceError::Config(what.to_string()));
        if self.samples_per_slot < 8 {
            return Err(TraceError::TooFewSamples(self.samples_per_slot));
        }
        if !(self.period_s > 0.0) {
            return bad("period must be positive");
        }
        if !(self.bandwidth_hz > 0.0) {
            return bad("bandwidth must be positive");
        }
        if !(self.peaking >= 0.0) || !(self.peaking_tau_s > 0.0) {
            return bad("peaking gain must be >= 0 and its time constant positive");
        }
        if !(self.v_pi > 0.0) {
            return bad("V_pi must be positive");
        }
        if !(self.decoy_transmittance > 0.0 && self.decoy_transmittance < 1.0) {
            return bad("decoy transmittance must lie in (0, 1)");
        }
        if !(self.pulse_fwhm_s > 0.0) || !(self.jitter_rms_s >= 0.0) || !(self.amplitude_noise >= 0.0) {
            return bad("pulse width must be positive, noise levels non-negative");
        }
        Ok(())
    }
}

/// Per-slot integral: sum of samples times the sample interval.
pub fn pulse_area(trace: &Trace) -> Result<Vec<f64>, TraceError> {
    let per_slot = trace.samples_per_slot()?;
    trace.slots()?;
    let dt = 1.0 / trace.sample_rate;
    Ok(trace.samples.par_chunks(per_slot).map(|s| s.iter().sum::<f64>() * dt).collect())
}

/// Statistics of one `predecessor -> current` group.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PatternRow {
    pub pattern: String,
    pub predecessor: PulseType,
    pub current: PulseType,
    pub count: usize,
    pub mean: f64,
    pub std: f64,
    /// Percent deviation of the mean from the `S -> current` mean.
    pub deviation_pct: f64,
    /// Standard deviation over the group's own mean.
    pub normalized_std: f64,
    pub sufficient: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PatternStats {
    /// Rows in the order S->S, D->S, V->S, S->D, D->D, V->D.
    pub rows: Vec<PatternRow>,
}

const ROW_ORDER: [PulseType; 3] = [PulseType::Signal, PulseType::Decoy, PulseType::Vacuum];

/// Groups pulses `i >= 2` by `(a_{i-1}, a_i)` for `a_i` in {S, D}.
pub fn pattern_statistics(intensities: &[f64], types: &[PulseType]) -> Result<PatternStats, TraceError> {
    if intensities.len() != types.len() {
        return Err(TraceError::LengthMismatch { slots: intensities.len(), types: types.len() });
    }
    // (count, sum, sum of squares) per [predecessor][current]; fixed chunks
    // merged in order keep the floating-point sums reproducible
    type Acc = [[(usize, f64, f64); 3]; 3];
    let partial: Vec<Acc> = (1..types.len())
        .collect::<Vec<_>>()
        .par_chunks(1 << 16)
        .map(|idx| {
            let mut m: Acc = [[(0, 0.0, 0.0); 3]; 3];
            for &i in idx {
                let cur = types[i];
                if cur != PulseType::Vacuum {
                    let x = intensities[i];
                    let e = &mut m[types[i - 1].index()][cur.index()];
                    e.0 += 1;
                    e.1 += x;
                    e.2 += x * x;
                }
            }
            m
        })
        .collect();
    let mut acc: Acc = [[(0, 0.0, 0.0); 3]; 3];
    for m in &partial {
        for (row, other) in acc.iter_mut().zip(m) {
            for (e, o) in row.iter_mut().zip(other) {
                e.0 += o.0;
                e.1 += o.1;
                e.2 += o.2;
            }
        }
    }

    let mut rows = Vec::with_capacity(6);
    for cur in [PulseType::Signal, PulseType::Decoy] {
        let stats = |prev: PulseType| {
            let (n, s, q) = acc[prev.index()][cur.index()];
            let mean = if n > 0 { s / n as f64 } else { f64::NAN };
            let std = if n > 1 { ((q - n as f64 * mean * mean) / (n as f64 - 1.0)).max(0.0).sqrt() } else { f64::NAN };
            (n, mean, std)
        };
        let (_, ref_mean, _) = stats(PulseType::Signal);
        for prev in ROW_ORDER {
            let (count, mean, std) = stats(prev);
            rows.push(PatternRow {
                pattern: format!("{}->{}", prev.symbol(), cur.symbol()),
                predecessor: prev,
                current: cur,
                count,
                mean,
                std,
                deviation_pct: 100.0 * (mean / ref_mean - 1.0),
                normalized_std: std / mean,
                sufficient: count >= 2,
            });
        }
    }
    Ok(PatternStats { rows })
}

impl PatternStats {
    pub fn row(&self, predecessor: PulseType, current: PulseType) -> &PatternRow {
        self.rows
            .iter()
            .find(|r| r.predecessor == predecessor && r.current == current)
            .expect("all six patterns are present")
    }

    /// Text table with one block per current type, intensities normalized
    /// to the `S -> S` mean.
    pub fn format_table(&self) -> String {
        let unit = self.row(PulseType::Signal, PulseType::Signal).mean;
        let mut out = String::new();
        for (block, cur) in [PulseType::Signal, PulseType::Decoy].into_iter().enumerate() {
            let c = cur.symbol();
            let _ = writeln!(
                out,
                "{:<8} {:>22} {:>16} {:>16}",
                "pattern",
                format!("average intensity ({c})"),
                format!("dev. from S->{c}"),
                "normalized std"
            );
            for r in &self.rows[block * 3..block * 3 + 3] {
                let dev = if r.predecessor == PulseType::Signal {
                    "-----".to_string()
                } else {
                    format!("{:+.1}%", r.deviation_pct)
                };
                let note = if r.sufficient { "" } else { "  (insufficient)" };
                let _ = writeln!(
                    out,
                    "{:<8} {:>22} {:>16} {:>16.3}{note}",
                    r.pattern.replace("->", " -> "),
                    format!("{:.3} +/- {:.3}", r.mean / unit, r.std / unit),
                    dev,
                    r.normalized_std
                );
            }
        }
        out
    }
}

/// Synthesizes a pattern through the drive model and returns its statistics.
pub fn analyze_pattern(types: &[PulseType], config: &TraceConfig) -> Result<PatternStats, TraceError> {
    let areas = simulate_areas(types, config)?;
    pattern_statistics(&areas, types)
}

/// Band-limited and ideal runs of the same pattern, computed in parallel.
pub fn analyze_with_reference(
    types: &[PulseType],
    config: &TraceConfig,
) -> Result<(PatternStats, PatternStats), TraceError> {
    let ideal = config.ideal();
    let (a, b) = rayon::join(|| analyze_pattern(types, config), || analyze_pattern(types, &ideal));
    Ok((a?, b?))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{PatternIntensityTable, SystemParams};
    use crate::source::{sample_intensities, sample_pulse_types, FluctuationModel};
    use std::f64::consts::PI;

    fn quiet() -> TraceConfig {
        TraceConfig { amplitude_noise: 0.0, ..TraceConfig::default() }
    }

    fn uniform_types(n: usize, seed: u64) -> Vec<PulseType> {
        let p = SystemParams { p_signal: 1.0 / 3.0, p_decoy: 1.0 / 3.0, p_vacuum: 1.0 / 3.0, ..SystemParams::default() };
        sample_pulse_types(n, &p, seed)
    }

    #[test]
    fn transfer_examples() {
        assert!((modulator_transfer(0.0, 0.0) - 1.0).abs() < 1e-15);
        assert!(modulator_transfer(PI, 0.0).abs() < 1e-15);
        let phi = PI - 2.0 * 0.421f64.sqrt().acos();
        assert!((modulator_transfer(PI, phi) - 0.421).abs() < 1e-12);
    }

    #[test]
    fn all_signal_drive_is_square_wave() {
        let cfg = quiet().ideal();
        let (s1, s2) = synthesize_drive(&[PulseType::Signal; 4], &cfg).unwrap();
        let spp = cfg.samples_per_slot;
        for (k, (&a, &b)) in s1.samples.iter().zip(&s2.samples).enumerate() {
            let second_half = k % spp >= spp / 2;
            assert_eq!(a, if second_half { cfg.v_pi } else { 0.0 });
            assert_eq!(b, if second_half { cfg.v_phi() } else { 0.0 });
        }
    }

    #[test]
    fn ideal_slots() {
        let cfg = quiet().ideal();
        let types = [PulseType::Signal, PulseType::Vacuum, PulseType::Decoy];
        let (s1, s2) = synthesize_drive(&types, &cfg).unwrap();
        let opt = optical_trace(&s1, &s2, &cfg).unwrap();
        let spp = cfg.samples_per_slot;
        let v_peak = opt.samples[spp..2 * spp].iter().cloned().fold(0.0, f64::max);
        assert!(v_peak < 1e-15);
        let area = pulse_area(&opt).unwrap();
        let sigma = cfg.pulse_fwhm_s / (2.0 * (2.0 * 2f64.ln()).sqrt());
        let integral = sigma * (2.0 * PI).sqrt();
        assert!((area[0] / integral - 1.0).abs() < 1e-9);
        assert!((area[2] / integral - cfg.decoy_transmittance).abs() < 1e-9);
    }

    #[test]
    fn area_basics() {
        let cfg = quiet();
        let zero = cfg.trace(vec![0.0; 3 * cfg.samples_per_slot]);
        assert_eq!(pulse_area(&zero).unwrap(), vec![0.0; 3]);
        let ones = cfg.trace(vec![1.0; 2 * cfg.samples_per_slot]);
        for a in pulse_area(&ones).unwrap() {
            assert!((a - cfg.period_s).abs() < 1e-24);
        }
        let bad = cfg.trace(vec![1.0; 2 * cfg.samples_per_slot + 1]);
        assert!(matches!(pulse_area(&bad), Err(TraceError::Misaligned { .. })));
        let coarse = Trace { sample_rate: 5e9, samples: vec![0.0; 8], period: 0.8e-9 };
        assert!(matches!(pulse_area(&coarse), Err(TraceError::TooFewSamples(4))));
    }

    #[test]
    fn gaussian_area_accuracy() {
        // Riemann sum of a 50 ps pulse against the analytic integral, with
        // the pulse centre swept across the sample grid.
        for spp in [32, 48, 64, 128] {
            for k in 0..10 {
                let cfg = TraceConfig { samples_per_slot: spp, timing_offset_s: k as f64 * 2.5e-12, ..quiet() };
                let mut env = vec![0.0; spp];
                envelope(&cfg, 0.0, &mut env);
                let area = pulse_area(&cfg.trace(env)).unwrap()[0];
                let sigma = cfg.pulse_fwhm_s / (2.0 * (2.0 * 2f64.ln()).sqrt());
                assert!((area / (sigma * (2.0 * PI).sqrt()) - 1.0).abs() < 1e-3, "spp {spp}");
            }
        }
    }

    #[test]
    fn streaming_matches_materialized() {
        let cfg = TraceConfig::default();
        let types = uniform_types(500, 3);
        let (s1, s2) = synthesize_drive(&types, &cfg).unwrap();
        let a = pulse_area(&optical_trace(&s1, &s2, &cfg).unwrap()).unwrap();
        let b = simulate_areas(&types, &cfg).unwrap();
        for (x, y) in a.iter().zip(&b) {
            assert!((x - y).abs() <= 1e-12 * x.abs().max(1e-12));
        }
    }

    #[test]
    fn band_limited_drive_lowers_decoy_after_decoy() {
        let cfg = quiet();
        let types = [PulseType::Signal, PulseType::Decoy, PulseType::Decoy, PulseType::Decoy];
        let area = simulate_areas(&types, &cfg).unwrap();
        // slot 1 follows S, slot 2 follows D
        assert!(area[2] < area[1]);
    }

    #[test]
    fn stats_of_constant_groups() {
        use PulseType::*;
        let types = [Signal, Signal, Signal, Decoy, Signal, Decoy, Decoy, Vacuum, Decoy, Vacuum, Signal];
        let value = |prev: PulseType, cur: PulseType| match (prev, cur) {
            (_, Vacuum) => 0.0,
            (Signal, Signal) => 1.0,
            (Decoy, Signal) => 1.1,
            (Vacuum, Signal) => 0.9,
            (Signal, Decoy) => 0.5,
            (Decoy, Decoy) => 0.4,
            (Vacuum, Decoy) => 0.3,
        };
        let mut x = vec![1.0];
        x.extend(types.windows(2).map(|w| value(w[0], w[1])));
        let st = pattern_statistics(&x, &types).unwrap();
        assert_eq!(st.row(Signal, Signal).count, 2);
        assert_eq!(st.row(Signal, Signal).std, 0.0);
        assert!((st.row(Decoy, Signal).deviation_pct - 10.0).abs() < 1e-9);
        assert!((st.row(Decoy, Decoy).deviation_pct + 20.0).abs() < 1e-9);
        assert_eq!(st.row(Signal, Decoy).deviation_pct, 0.0);
        assert!(!st.row(Vacuum, Signal).sufficient);
        assert!(st.row(Signal, Signal).sufficient);
        assert!(st.format_table().contains("(insufficient)"));
        assert!(pattern_statistics(&x[1..], &types).is_err());
    }

    #[test]
    fn recovers_source_ratios() {
        let params =
            SystemParams { p_signal: 1.0 / 3.0, p_decoy: 1.0 / 3.0, p_vacuum: 1.0 / 3.0, ..SystemParams::default() };
        let table = PatternIntensityTable { s_row_pattern_effect: true, ..PatternIntensityTable::measured() };
        let types = sample_pulse_types(1_000_000, &params, 17);
        let mu = sample_intensities(&types, &params, &table, &FluctuationModel::from_table(&table), 18);
        let st = pattern_statistics(&mu, &types).unwrap();
        for cur in [PulseType::Signal, PulseType::Decoy] {
            let reference = st.row(PulseType::Signal, cur).mean;
            for prev in ROW_ORDER {
                let r = st.row(prev, cur);
                assert!(r.count > 100_000);
                let want = table.ratio(cur, prev) / table.ratio(cur, PulseType::Signal);
                let got = r.mean / reference;
                assert!((got / want - 1.0).abs() < 0.005, "{} {got} {want}", r.pattern);
                // 3 standard errors of the ratio, both groups contributing
                let se = want * (table.sigma_rel(cur).unwrap() * (2.0 / r.count as f64).sqrt());
                assert!((got - want).abs() < 3.0 * se, "{}", r.pattern);
            }
        }
    }
}
