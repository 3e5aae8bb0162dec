use thiserror::Error;

use crate::model::PulseType;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ModelError {
    #[error("{name} = {value} is out of range")]
    OutOfRange { name: &'static str, value: f64 },
    #[error("{what} sum to {sum}, expected 1")]
    NotNormalized { what: &'static str, sum: f64 },
    #[error("nominal intensities must satisfy S > D > V >= 0 (got S={signal}, D={decoy}, V={vacuum})")]
    IntensityOrder { signal: f64, decoy: f64, vacuum: f64 },
    #[error("reference pattern {0}<-S must have ratio 1")]
    ReferenceRatio(PulseType),
    #[error("mean photon number must be non-negative and finite, got {0}")]
    NegativeMean(f64),
    #[error("unknown pulse type symbol {0:?}")]
    UnknownSymbol(char),
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ChannelError {
    #[error("fiber length must be non-negative, got {0} km")]
    NegativeLength(f64),
    #[error("error probability {error} exceeds detection probability {detection} for {pulse}/{basis}")]
    ErrorExceedsDetection { pulse: PulseType, basis: char, error: f64, detection: f64 },
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SiftError {
    #[error("naive protocol requires a signal pulse at odd index {0}")]
    NaiveOddNotSignal(usize),
    #[error("intensity window factor t must be positive, got {0}")]
    BadWindow(f64),
    #[error("index {index} is outside a train of {len} pulses")]
    IndexOutOfRange { index: usize, len: usize },
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum AuditError {
    #[error("ensemble of {cells} cells exceeds the enumeration limit of {limit}")]
    TooLarge { cells: u128, limit: u128 },
    #[error("ensemble needs at least one pulse and n_max >= 1")]
    Empty,
    #[error(transparent)]
    Model(#[from] ModelError),
}

#[derive(Debug, Error)]
pub enum TraceError {
    #[error("trace of {samples} samples is not a whole number of {per_slot}-sample slots")]
    Misaligned { samples: usize, per_slot: usize },
    #[error("slot must hold at least 8 samples, got {0}")]
    TooFewSamples(usize),
    #[error("trace and pattern disagree: {slots} slots vs {types} pulse types")]
    LengthMismatch { slots: usize, types: usize },
    #[error("drive traces have different sample rates")]
    RateMismatch,
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("malformed trace CSV at line {line}: {reason}")]
    Parse { line: usize, reason: String },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum KeyError {
    #[error("binary entropy argument {0} is outside [0, 1]")]
    EntropyDomain(f64),
    #[error("invalid intensity interval for {pulse}: [{lo}, {hi}]")]
    BadInterval { pulse: PulseType, lo: f64, hi: f64 },
    #[error("intensity window factor must be positive, got {0}")]
    BadWindow(f64),
    #[error("grid {0} is empty")]
    EmptyGrid(&'static str),
    #[error(transparent)]
    Channel(#[from] ChannelError),
    #[error(transparent)]
    Model(#[from] ModelError),
}

/// Why a branch yields no key.
#[derive(Debug, Error, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub enum NoKey {
    #[error("intensity intervals are not separated enough for the decoy bounds")]
    IntervalsOverlap,
    #[error("single-photon lower bound is not positive")]
    NoSinglePhotons,
}
