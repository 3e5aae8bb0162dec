//! Two-electrode drive synthesis and the optical output of the modulator.

use std::f64::consts::PI;

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use super::{modulator_transfer, Trace, TraceConfig};
use crate::error::TraceError;
use crate::model::PulseType;
use crate::rng::{chunk_rng, derive_seed, stage};

/// Ideal first-half levels `(electrode 1, electrode 2)` as phases in units
/// of `pi`-normalized volts: S = {Lo, Lo}, V = {Hi, Lo}, D = {Hi, Hi}.
fn first_half_levels(a: PulseType, v_pi: f64, v_phi: f64) -> (f64, f64) {
    match a {
        PulseType::Signal => (0.0, 0.0),
        PulseType::Vacuum => (v_pi, 0.0),
        PulseType::Decoy => (v_pi, v_phi),
    }
}

fn complement(level: f64, hi: f64) -> f64 {
    if level == 0.0 {
        hi
    } else {
        0.0
    }
}

/// One-pole low-pass, discretized exactly for piecewise-constant input.
#[derive(Debug, Clone, Copy)]
struct OnePole {
    alpha: f64,
    state: f64,
}

impl OnePole {
    fn new(tau: f64, dt: f64, initial: f64) -> Self {
        OnePole { alpha: 1.0 - (-dt / tau).exp(), state: initial }
    }

    fn step(&mut self, x: f64) -> f64 {
        self.state += self.alpha * (x - self.state);
        self.state
    }
}

/// Band limit of one electrode: a one-pole low-pass at the bandwidth
/// followed by a lead-lag stage `y + A (y - LP_tail(y))` that overshoots
/// after each transition and relaxes with the tail time constant.
#[derive(Debug, Clone, Copy)]
struct Electrode {
    band: Option<(OnePole, OnePole, f64)>,
}

impl Electrode {
    fn new(config: &TraceConfig, initial: f64) -> Self {
        let dt = config.sample_interval();
        let band = config.bandwidth_hz.is_finite().then(|| {
            let tau = 1.0 / (2.0 * PI * config.bandwidth_hz);
            (OnePole::new(tau, dt, initial), OnePole::new(config.peaking_tau_s, dt, initial), config.peaking)
        });
        Electrode { band }
    }

    fn step(&mut self, x: f64) -> f64 {
        match &mut self.band {
            None => x,
            Some((lp, tail, gain)) => {
                let y = lp.step(x);
                let slow = tail.step(y);
                y + *gain * (y - slow)
            }
        }
    }
}

/// Streaming drive generator; produces the two electrode waveforms slot by
/// slot. Filters start settled at the first-half level of a signal slot.
#[derive(Debug, Clone)]
pub struct DriveSynth {
    config: TraceConfig,
    electrodes: [Electrode; 2],
    v_phi: f64,
}

impl DriveSynth {
    pub fn new(config: &TraceConfig) -> Result<Self, TraceError> {
        config.validate()?;
        let v_phi = config.v_phi();
        Ok(DriveSynth {
            config: config.clone(),
            electrodes: [Electrode::new(config, 0.0), Electrode::new(config, 0.0)],
            v_phi,
        })
    }

    /// Fills `out1`/`out2` (one slot each) with the filtered drive for a
    /// pulse of type `a`.
    pub fn slot(&mut self, a: PulseType, out1: &mut [f64], out2: &mut [f64]) {
        let spp = self.config.samples_per_slot;
        let v_pi = self.config.v_pi;
        let (l1, l2) = first_half_levels(a, v_pi, self.v_phi);
        let (h1, h2) = (complement(l1, v_pi), complement(l2, self.v_phi));
        for k in 0..spp {
            let (x1, x2) = if k < spp / 2 { (l1, l2) } else { (h1, h2) };
            out1[k] = self.electrodes[0].step(x1);
            out2[k] = self.electrodes[1].step(x2);
        }
    }
}

/// Drive waveforms for a whole pattern.
pub fn synthesize_drive(types: &[PulseType], config: &TraceConfig) -> Result<(Trace, Trace), TraceError> {
    let spp = config.samples_per_slot;
    let mut synth = DriveSynth::new(config)?;
    let mut s1 = vec![0.0; types.len() * spp];
    let mut s2 = vec![0.0; types.len() * spp];
    for (k, &a) in types.iter().enumerate() {
        synth.slot(a, &mut s1[k * spp..(k + 1) * spp], &mut s2[k * spp..(k + 1) * spp]);
    }
    Ok((config.trace(s1), config.trace(s2)))
}

/// Per-slot laser randomness: amplitude factor and timing shift.
#[derive(Debug, Clone)]
pub struct LaserNoise {
    rng: ChaCha8Rng,
    amplitude: f64,
    jitter: f64,
}

impl LaserNoise {
    pub fn new(config: &TraceConfig) -> Self {
        LaserNoise {
            rng: chunk_rng(derive_seed(config.seed, stage::TRACE_NOISE), 0),
            amplitude: config.amplitude_noise,
            jitter: config.jitter_rms_s,
        }
    }

    /// `(amplitude factor, timing shift)` of the next slot.
    pub fn next(&mut self) -> (f64, f64) {
        let g1: f64 = self.rng.sample(StandardNormal);
        let g2: f64 = self.rng.sample(StandardNormal);
        ((1.0 + self.amplitude * g1).max(0.0), self.jitter * g2)
    }
}

/// Gaussian pulse envelope sampled over one slot.
pub fn envelope(config: &TraceConfig, shift: f64, out: &mut [f64]) {
    let dt = config.sample_interval();
    let sigma = config.pulse_fwhm_s / (2.0 * (2.0 * 2f64.ln()).sqrt());
    let centre = config.pulse_center_s + config.timing_offset_s + shift;
    for (k, e) in out.iter_mut().enumerate() {
        let t = k as f64 * dt - centre;
        *e = (-t * t / (2.0 * sigma * sigma)).exp();
    }
}

/// Optical power through the modulator for given drive traces.
///
/// Each electrode voltage maps linearly to phase, `phi = pi v / V_pi`.
pub fn optical_trace(drive1: &Trace, drive2: &Trace, config: &TraceConfig) -> Result<Trace, TraceError> {
    if drive1.sample_rate != drive2.sample_rate {
        return Err(TraceError::RateMismatch);
    }
    if drive1.samples.len() != drive2.samples.len() {
        return Err(TraceError::LengthMismatch { slots: drive1.samples.len(), types: drive2.samples.len() });
    }
    let spp = drive1.samples_per_slot()?;
    if spp != config.samples_per_slot {
        return Err(TraceError::RateMismatch);
    }
    let mut noise = LaserNoise::new(config);
    let mut env = vec![0.0; spp];
    let mut out = Vec::with_capacity(drive1.samples.len());
    for (v1, v2) in drive1.samples.chunks(spp).zip(drive2.samples.chunks(spp)) {
        let (amp, shift) = noise.next();
        envelope(config, shift, &mut env);
        for k in 0..spp {
            let phi1 = PI * v1[k] / config.v_pi;
            let phi2 = PI * v2[k] / config.v_pi;
            out.push(amp * env[k] * modulator_transfer(phi1, phi2));
        }
    }
    Ok(config.trace(out))
}

/// Streams a whole pattern to per-slot pulse areas without storing the
/// waveforms. Equal to `pulse_area(optical_trace(synthesize_drive(..)))`.
pub fn simulate_areas(types: &[PulseType], config: &TraceConfig) -> Result<Vec<f64>, TraceError> {
    let spp = config.samples_per_slot;
    let dt = config.sample_interval();
    let mut synth = DriveSynth::new(config)?;
    let mut noise = LaserNoise::new(config);
    let (mut v1, mut v2, mut env) = (vec![0.0; spp], vec![0.0; spp], vec![0.0; spp]);
    let mut fixed_env = vec![0.0; spp];
    envelope(config, 0.0, &mut fixed_env);
    let mut areas = Vec::with_capacity(types.len());
    for &a in types {
        synth.slot(a, &mut v1, &mut v2);
        let (amp, shift) = noise.next();
        let e = if config.jitter_rms_s > 0.0 {
            envelope(config, shift, &mut env);
            &env
        } else {
            &fixed_env
        };
        let mut sum = 0.0;
        for k in 0..spp {
            sum += amp * e[k] * modulator_transfer(PI * v1[k] / config.v_pi, PI * v2[k] / config.v_pi);
        }
        areas.push(sum * dt);
    }
    Ok(areas)
}
