//! Transmitter simulation: pulse types, realized intensities, photon numbers
//! and encodings.
//!
//! Every stage is generated chunk by chunk ([`CHUNK`] pulses each) from its
//! own derived stream, so a train can be produced in parallel or piecewise and
//! still be bit-identical for a given master seed.

use std::io::{self, Write};

use rand::Rng;
use rand_distr::{Distribution, Poisson};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::ModelError;
use crate::model::{pattern_mu, Basis, PatternIntensityTable, PulseType, SystemParams};
use crate::rng::{chunk_rng, derive_seed, stage, CHUNK};

/// Residual random intensity fluctuation.
///
/// Signal and decoy pulses get a multiplicative Gaussian factor
/// `1 + N(0, rel)`; vacuum pulses get an additive half-Gaussian of width
/// `vacuum_abs`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FluctuationModel {
    pub signal_rel: f64,
    pub decoy_rel: f64,
    pub vacuum_abs: f64,
}

impl FluctuationModel {
    pub fn from_table(table: &PatternIntensityTable) -> Self {
        FluctuationModel {
            signal_rel: table.sigma_rel_signal,
            decoy_rel: table.sigma_rel_decoy,
            vacuum_abs: table.sigma_abs_vacuum,
        }
    }

    pub fn none() -> Self {
        FluctuationModel { signal_rel: 0.0, decoy_rel: 0.0, vacuum_abs: 0.0 }
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        for (name, v) in [
            ("signal_rel", self.signal_rel),
            ("decoy_rel", self.decoy_rel),
            ("vacuum_abs", self.vacuum_abs),
        ] {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(ModelError::OutOfRange { name, value: v });
            }
        }
        Ok(())
    }
}

/// Everything known about one emitted pulse.
///
/// `index` is the 1-based emission index; the distillation branches are
/// formed by its parity.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PulseRecord {
    pub index: u64,
    pub pulse_type: PulseType,
    pub mu_realized: f64,
    pub photons: u32,
    pub basis_a: Basis,
    pub bit_a: u8,
    pub basis_b: Option<Basis>,
    pub detected: bool,
    pub error: bool,
}

fn for_each_chunk<T, F>(out: &mut [T], seed: u64, fill: F)
where
    T: Send,
    F: Fn(&mut rand_chacha::ChaCha8Rng, usize, &mut [T]) + Sync,
{
    out.par_chunks_mut(CHUNK).enumerate().for_each(|(c, chunk)| {
        let mut rng = chunk_rng(seed, c as u64);
        fill(&mut rng, c * CHUNK, chunk);
    });
}

fn draw_type<R: Rng>(rng: &mut R, params: &SystemParams) -> PulseType {
    let u: f64 = rng.random();
    if u < params.p_signal {
        PulseType::Signal
    } else if u < params.p_signal + params.p_decoy {
        PulseType::Decoy
    } else {
        PulseType::Vacuum
    }
}

/// IID pulse types with the configured selection probabilities.
pub fn sample_pulse_types(n: usize, params: &SystemParams, seed: u64) -> Vec<PulseType> {
    let mut out = vec![PulseType::Signal; n];
    for_each_chunk(&mut out, seed, |rng, _, chunk| {
        for a in chunk.iter_mut() {
            *a = draw_type(rng, params);
        }
    });
    out
}

fn realize<R: Rng>(rng: &mut R, a: PulseType, base: f64, fluct: &FluctuationModel) -> f64 {
    let mu = match a {
        PulseType::Vacuum => {
            if fluct.vacuum_abs > 0.0 {
                let g: f64 = rng.sample(rand_distr::StandardNormal);
                base + g.abs() * fluct.vacuum_abs
            } else {
                base
            }
        }
        _ => {
            let rel = if a == PulseType::Signal { fluct.signal_rel } else { fluct.decoy_rel };
            if rel > 0.0 {
                let g: f64 = rng.sample(rand_distr::StandardNormal);
                base * (1.0 + rel * g)
            } else {
                base
            }
        }
    };
    mu.max(0.0)
}

/// Realized mean photon number of every pulse.
///
/// The pattern-conditioned intensity of pulse `i` uses the type of pulse
/// `i - 1`; the first pulse is treated as preceded by a signal pulse.
pub fn sample_intensities(
    types: &[PulseType],
    params: &SystemParams,
    table: &PatternIntensityTable,
    fluct: &FluctuationModel,
    seed: u64,
) -> Vec<f64> {
    let mut out = vec![0.0; types.len()];
    for_each_chunk(&mut out, seed, |rng, start, chunk| {
        for (k, mu) in chunk.iter_mut().enumerate() {
            let i = start + k;
            let prev = if i == 0 { PulseType::Signal } else { types[i - 1] };
            let base = pattern_mu(types[i], prev, params, table);
            *mu = realize(rng, types[i], base, fluct);
        }
    });
    out
}

fn draw_poisson<R: Rng>(rng: &mut R, mu: f64) -> u32 {
    if mu == 0.0 {
        return 0;
    }
    // rejected means were filtered by the caller
    let d = Poisson::new(mu).expect("positive finite mean");
    let n: f64 = d.sample(rng);
    n as u32
}

/// Independent Poisson photon numbers for the given means.
pub fn sample_photon_numbers(mu: &[f64], seed: u64) -> Result<Vec<u32>, ModelError> {
    if let Some(&bad) = mu.iter().find(|m| !(**m >= 0.0) || !m.is_finite()) {
        return Err(ModelError::NegativeMean(bad));
    }
    let mut out = vec![0u32; mu.len()];
    for_each_chunk(&mut out, seed, |rng, start, chunk| {
        for (k, n) in chunk.iter_mut().enumerate() {
            *n = draw_poisson(rng, mu[start + k]);
        }
    });
    Ok(out)
}

/// Alice's basis choices and bit values.
pub fn sample_encoding(n: usize, params: &SystemParams, seed: u64) -> (Vec<Basis>, Vec<u8>) {
    let mut pairs = vec![(Basis::Z, 0u8); n];
    for_each_chunk(&mut pairs, seed, |rng, _, chunk| {
        for slot in chunk.iter_mut() {
            let basis = if rng.random::<f64>() < params.p_y_alice { Basis::Y } else { Basis::Z };
            let bit = u8::from(rng.random::<bool>());
            *slot = (basis, bit);
        }
    });
    pairs.into_iter().unzip()
}

/// Full source configuration for generating pulse records.
#[derive(Debug, Clone)]
pub struct Transmitter {
    pub params: SystemParams,
    pub table: PatternIntensityTable,
    pub fluctuation: FluctuationModel,
}

impl Transmitter {
    pub fn new(params: SystemParams, table: PatternIntensityTable, fluctuation: FluctuationModel) -> Self {
        Transmitter { params, table, fluctuation }
    }

    /// Records for chunk `chunk` of a train whose types are `types`.
    ///
    /// Concatenating all chunks gives the same records as
    /// [`Transmitter::emit`].
    pub fn emit_chunk(&self, types: &[PulseType], chunk: usize, master_seed: u64) -> Vec<PulseRecord> {
        let start = chunk * CHUNK;
        let end = (start + CHUNK).min(types.len());
        let mut mu_rng = chunk_rng(derive_seed(master_seed, stage::INTENSITY), chunk as u64);
        let mut n_rng = chunk_rng(derive_seed(master_seed, stage::PHOTONS), chunk as u64);
        let mut enc_rng = chunk_rng(derive_seed(master_seed, stage::ENCODING), chunk as u64);
        (start..end)
            .map(|i| {
                let a = types[i];
                let prev = if i == 0 { PulseType::Signal } else { types[i - 1] };
                let base = pattern_mu(a, prev, &self.params, &self.table);
                let mu = realize(&mut mu_rng, a, base, &self.fluctuation);
                let photons = draw_poisson(&mut n_rng, mu);
                let basis_a = if enc_rng.random::<f64>() < self.params.p_y_alice { Basis::Y } else { Basis::Z };
                let bit_a = u8::from(enc_rng.random::<bool>());
                PulseRecord {
                    index: i as u64 + 1,
                    pulse_type: a,
                    mu_realized: mu,
                    photons,
                    basis_a,
                    bit_a,
                    basis_b: None,
                    detected: false,
                    error: false,
                }
            })
            .collect()
    }

    /// Types for an `n`-pulse train under `master_seed`.
    pub fn types(&self, n: usize, master_seed: u64) -> Vec<PulseType> {
        sample_pulse_types(n, &self.params, derive_seed(master_seed, stage::TYPES))
    }

    /// A complete `n`-pulse train.
    pub fn emit(&self, n: usize, master_seed: u64) -> Vec<PulseRecord> {
        let types = self.types(n, master_seed);
        let chunks = types.len().div_ceil(CHUNK);
        (0..chunks)
            .into_par_iter()
            .map(|c| self.emit_chunk(&types, c, master_seed))
            .flatten_iter()
            .collect()
    }
}

/// Writes the pulse-train dump: `index,a,mu_realized,n,basis_A,bit_A`.
pub fn write_pulse_csv<W: Write>(mut w: W, pulses: &[PulseRecord]) -> io::Result<()> {
    writeln!(w, "index,a,mu_realized,n,basis_A,bit_A")?;
    for p in pulses {
        writeln!(
            w,
            "{},{},{},{},{},{}",
            p.index,
            p.pulse_type.symbol(),
            p.mu_realized,
            p.photons,
            p.basis_a.symbol(),
            p.bit_a
        )?;
    }
    Ok(())
}

/// Half-Gaussian mean `sigma * sqrt(2/pi)`.
pub fn half_gaussian_mean(sigma: f64) -> f64 {
    sigma * (2.0 / std::f64::consts::PI).sqrt()
}
