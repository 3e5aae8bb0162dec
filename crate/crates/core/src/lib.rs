//! Decoy-state BB84 under correlated intensity fluctuations.
//!
//! The crate models a transmitter whose pulse intensities depend on the
//! previous pulse (the pattern effect), the countermeasures that restore
//! independent statistics (pattern sifting, alternate key distillation,
//! intensity sifting), finite-key length estimation over intensity intervals,
//! an exact small-instance auditor of the conditional-independence argument,
//! and a waveform lab that reproduces the pattern effect from band-limited
//! modulator drive.

pub mod audit;
pub mod channel;
pub mod error;
pub mod finite_key;
pub mod model;
pub mod pipeline;
pub mod rng;
pub mod sifting;
pub mod source;
pub mod trace;

pub use error::{AuditError, ChannelError, ModelError, SiftError, TraceError};
pub use model::{Basis, PatternIntensityTable, PulseType, SystemParams};
