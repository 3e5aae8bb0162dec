//! Finite-key secure key length per distillation branch.
//!
//! Each parity branch is distilled on its own with decoy bounds that hold for
//! any intensity inside the intensity-sifting windows. The two branch keys
//! add up, and the overall security parameter is `2 (eps_a + eps_b)`.

pub mod decoy;
pub mod sweep;

use serde::{Deserialize, Serialize};

pub use decoy::{interval_bounds, point_bounds, DecoyBounds};
pub use sweep::{expected_counts, rate_point, rate_sweep, write_sweep_csv, KeyRateReport};

use crate::error::{KeyError, NoKey};
use crate::model::{Basis, PatternIntensityTable, PulseType, SystemParams};

/// Shannon binary entropy in bits.
pub fn binary_entropy(x: f64) -> Result<f64, KeyError> {
    if !(0.0..=1.0).contains(&x) {
        return Err(KeyError::EntropyDomain(x));
    }
    Ok(h(x))
}

fn h(x: f64) -> f64 {
    if x <= 0.0 || x >= 1.0 {
        0.0
    } else {
        -x * x.log2() - (1.0 - x) * (1.0 - x).log2()
    }
}

/// Range of mean photon numbers a sifted pulse of each type can have,
/// indexed by [`PulseType::index`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct IntensityIntervals {
    pub lo: [f64; 3],
    pub hi: [f64; 3],
}

impl IntensityIntervals {
    /// Windows kept by intensity sifting with width factor `t`.
    pub fn from_window(t: f64, params: &SystemParams, table: &PatternIntensityTable) -> Self {
        let mut lo = [0.0; 3];
        let mut hi = [0.0; 3];
        for a in PulseType::ALL {
            let (l, u) = crate::sifting::acceptance_band(a, t, params, table);
            lo[a.index()] = l;
            hi[a.index()] = u;
        }
        IntensityIntervals { lo, hi }
    }

    /// Zero-width intervals at the nominal intensities.
    pub fn point(params: &SystemParams) -> Self {
        let mu = [params.mu_signal, params.mu_decoy, params.mu_vacuum];
        IntensityIntervals { lo: mu, hi: mu }
    }

    pub fn get(&self, a: PulseType) -> (f64, f64) {
        (self.lo[a.index()], self.hi[a.index()])
    }

    pub fn validate(&self) -> Result<(), KeyError> {
        for a in PulseType::ALL {
            let (lo, hi) = self.get(a);
            if !(lo >= 0.0 && lo <= hi && hi.is_finite()) {
                return Err(KeyError::BadInterval { pulse: a, lo, hi });
            }
        }
        Ok(())
    }

    /// The eight corner assignments `(mu_S, mu_D, mu_V)`.
    pub fn corners(&self) -> impl Iterator<Item = [f64; 3]> + '_ {
        (0..8u8).map(move |bits| {
            let mut mu = [0.0; 3];
            for (k, m) in mu.iter_mut().enumerate() {
                *m = if bits & (1 << k) == 0 { self.lo[k] } else { self.hi[k] };
            }
            mu
        })
    }
}

/// Detection (`n`) and error (`m`) counts of one branch, indexed
/// `[basis][type]` with [`Basis::index`] and [`PulseType::index`].
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct BranchCounts {
    pub n: [[f64; 3]; 2],
    pub m: [[f64; 3]; 2],
    /// Pulses in the branch after sifting.
    pub n_branch: f64,
}

impl BranchCounts {
    pub fn detections(&self, x: Basis) -> f64 {
        self.n[x.index()].iter().sum()
    }

    pub fn errors(&self, x: Basis) -> f64 {
        self.m[x.index()].iter().sum()
    }

    /// Observed error fraction in basis `x`.
    pub fn error_rate(&self, x: Basis) -> f64 {
        let n = self.detections(x);
        if n > 0.0 {
            self.errors(x) / n
        } else {
            0.0
        }
    }

    pub fn add(&mut self, other: &BranchCounts) {
        for x in 0..2 {
            for a in 0..3 {
                self.n[x][a] += other.n[x][a];
                self.m[x][a] += other.m[x][a];
            }
        }
        self.n_branch += other.n_branch;
    }

    pub fn is_consistent(&self) -> bool {
        (0..2).all(|x| (0..3).all(|a| self.m[x][a] >= 0.0 && self.m[x][a] <= self.n[x][a]))
            && self.detections(Basis::Z) + self.detections(Basis::Y) <= self.n_branch.max(0.0) + 1e-9
    }
}

/// Failure-probability split. Each branch is `(eps_a + eps_b)`-secret; the
/// combined protocol is `2 (eps_a + eps_b)`-secret.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SecurityBudget {
    pub eps_a: f64,
    pub eps_b: f64,
    pub eps_cor: f64,
}

impl SecurityBudget {
    /// Even split: `eps_a = eps_b = eps_sec / 4`; correctness is shared
    /// equally between the branches.
    pub fn from_params(params: &SystemParams) -> Self {
        SecurityBudget { eps_a: params.eps_sec / 4.0, eps_b: params.eps_sec / 4.0, eps_cor: params.eps_cor }
    }

    /// Secrecy parameter used inside one branch.
    pub fn branch_secrecy(&self) -> f64 {
        self.eps_a + self.eps_b
    }

    pub fn branch_correctness(&self) -> f64 {
        self.eps_cor / 2.0
    }

    /// Bound on the probability that either branch's pattern-sifted statistics
    /// deviate: `2 eps_a`.
    pub fn union_bound(&self) -> f64 {
        union_bound_budget(self.eps_a)
    }

    /// `2 (eps_a + eps_b)`.
    pub fn total(&self) -> f64 {
        2.0 * (self.eps_a + self.eps_b)
    }
}

/// Union bound over the two parity branches.
pub fn union_bound_budget(eps_a: f64) -> f64 {
    2.0 * eps_a
}

/// How interval-valued intensities enter the bounds.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum IntervalMethod {
    /// Per-occurrence worst-case endpoints.
    #[default]
    WorstCase,
    /// Minimum key length over the eight corner intensity assignments.
    EndpointScan,
}

/// Inputs of the key-length functional other than counts and intervals.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DistillParams {
    /// Type probabilities among sifted pulses.
    pub probs: [f64; 3],
    pub eps_sec: f64,
    pub eps_cor: f64,
    pub f_ec: f64,
    pub method: IntervalMethod,
}

impl DistillParams {
    pub fn new(probs: [f64; 3], params: &SystemParams, method: IntervalMethod) -> Self {
        let budget = SecurityBudget::from_params(params);
        DistillParams {
            probs,
            eps_sec: budget.branch_secrecy(),
            eps_cor: budget.branch_correctness(),
            f_ec: params.f_ec,
            method,
        }
    }
}

/// Result for one branch.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BranchKey {
    /// Final key bits, floored and clamped at zero.
    pub length: f64,
    pub bounds: Option<DecoyBounds>,
    pub no_key: Option<NoKey>,
    /// Bits leaked in error correction.
    pub lambda_ec: f64,
    pub key_detections: f64,
    pub key_error_rate: f64,
}

/// Security overhead `6 log2(21/eps_sec) + log2(2/eps_cor)`.
pub fn security_overhead(eps_sec: f64, eps_cor: f64) -> f64 {
    6.0 * (21.0 / eps_sec).log2() + (2.0 / eps_cor).log2()
}

/// Leakage `f_EC h(e) n` for the key-basis block.
pub fn ec_leakage(counts: &BranchCounts, f_ec: f64) -> f64 {
    f_ec * h(counts.error_rate(Basis::Z)) * counts.detections(Basis::Z)
}

fn length_from(bounds: &DecoyBounds, lambda_ec: f64, d: &DistillParams) -> f64 {
    let raw = bounds.s0_key + bounds.s1_key * (1.0 - h(bounds.phi)) - lambda_ec - security_overhead(d.eps_sec, d.eps_cor);
    raw.floor().max(0.0)
}

fn bounded_length(counts: &BranchCounts, iv: &IntensityIntervals, d: &DistillParams) -> (Result<DecoyBounds, NoKey>, f64) {
    let lambda = ec_leakage(counts, d.f_ec);
    match interval_bounds(counts, iv, &d.probs, d.eps_sec) {
        Ok(b) => {
            let l = length_from(&b, lambda, d);
            (Ok(b), l)
        }
        Err(e) => (Err(e), 0.0),
    }
}

/// Secure key length of one branch.
pub fn key_length(counts: &BranchCounts, iv: &IntensityIntervals, d: &DistillParams) -> BranchKey {
    let lambda_ec = ec_leakage(counts, d.f_ec);
    let (bounds, length) = match d.method {
        IntervalMethod::WorstCase => bounded_length(counts, iv, d),
        IntervalMethod::EndpointScan => {
            let mut best: Option<(Result<DecoyBounds, NoKey>, f64)> = None;
            for mu in iv.corners() {
                let here = bounded_length(counts, &IntensityIntervals { lo: mu, hi: mu }, d);
                if best.as_ref().is_none_or(|b| here.1 < b.1) {
                    best = Some(here);
                }
            }
            best.expect("eight corners")
        }
    };
    BranchKey {
        length,
        bounds: bounds.ok(),
        no_key: bounds.err(),
        lambda_ec,
        key_detections: counts.detections(Basis::Z),
        key_error_rate: counts.error_rate(Basis::Z),
    }
}

/// Combined key length of both branches and the overall security parameter.
pub fn akd_total(even: &BranchKey, odd: &BranchKey, budget: &SecurityBudget) -> (f64, f64) {
    (even.length + odd.length, budget.total())
}
