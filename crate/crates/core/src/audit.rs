//! Exact small-instance audit of the conditional-independence argument.
//!
//! A [`ToyEnsemble`] tabulates the full joint distribution of types and
//! photon numbers for a short train whose intensities depend on the previous
//! type. From that table the audit computes, without sampling:
//!
//! * the conditional law of a pulse given its two neighbours, which must
//!   reduce to the IID law `f(a, n)` whenever the pulse survives pattern
//!   sifting, and generally does not otherwise;
//! * the product form of the even-given-odd conditional and of the
//!   pattern-sifted even block;
//! * the Markov-chain property of `(a_i, n_i)`;
//! * conditional independence of toy detection outcomes from the types
//!   given photon numbers.
//!
//! Photon numbers are truncated at `n_max` and each Poisson row is
//! renormalized, so the table is an exact distribution.

use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use crate::error::AuditError;
use crate::model::{pattern_mu, poisson, PatternIntensityTable, PulseType, SystemParams};
use crate::sifting::ps_keep;

/// Largest joint table the auditor will build.
pub const MAX_CELLS: u128 = 1 << 24;

/// Residual threshold for identities that hold exactly.
pub const EXACT_TOL: f64 = 1e-10;

const NEGLIGIBLE: f64 = 1e-300;

/// Full joint distribution of `(a_1, n_1, ..., a_N, n_N)`.
///
/// A pulse is encoded as the symbol `type_index * (n_max + 1) + n` and a
/// configuration as the base-`B` number whose digit `i - 1` is the symbol of
/// pulse `i`.
#[derive(Debug, Clone)]
pub struct ToyEnsemble {
    pub pulses: usize,
    pub n_max: u32,
    base: usize,
    joint: Vec<f64>,
    /// `f(a, n)` per symbol.
    f_ref: Vec<f64>,
    /// `f~(a, prev, n)` per `[prev][symbol]`.
    f_pattern: [Vec<f64>; 3],
}

fn truncated_row(p: f64, mu: f64, n_max: u32) -> Vec<f64> {
    let q: Vec<f64> = (0..=n_max).map(|k| poisson(k, mu)).collect();
    let mass: f64 = q.iter().sum();
    q.into_iter().map(|x| p * x / mass).collect()
}

/// Tabulates the joint distribution of an `pulses`-long train. The pulse
/// before the first one is taken to be a signal pulse.
pub fn exact_joint(
    pulses: usize,
    n_max: u32,
    params: &SystemParams,
    table: &PatternIntensityTable,
) -> Result<ToyEnsemble, AuditError> {
    if pulses == 0 || n_max == 0 {
        return Err(AuditError::Empty);
    }
    params.validate()?;
    table.validate()?;
    let base = 3 * (n_max as usize + 1);
    let cells = (base as u128).checked_pow(pulses as u32).unwrap_or(u128::MAX);
    if cells > MAX_CELLS {
        return Err(AuditError::TooLarge { cells, limit: MAX_CELLS });
    }

    let mut f_ref = Vec::with_capacity(base);
    for a in PulseType::ALL {
        f_ref.extend(truncated_row(params.prob(a), params.mu(a), n_max));
    }
    let f_pattern = PulseType::ALL.map(|prev| {
        let mut row = Vec::with_capacity(base);
        for a in PulseType::ALL {
            row.extend(truncated_row(params.prob(a), pattern_mu(a, prev, params, table), n_max));
        }
        row
    });

    let per_type = n_max as usize + 1;
    let mut joint = f_pattern[PulseType::Signal.index()].clone();
    let mut stride = base;
    for _ in 1..pulses {
        let mut next = vec![0.0; stride * base];
        for (s, chunk) in next.chunks_mut(stride).enumerate() {
            let a = s / per_type;
            for (cell, slot) in chunk.iter_mut().enumerate() {
                let prev_type = (cell / (stride / base)) / per_type;
                *slot = joint[cell] * f_pattern[prev_type][a * per_type + s % per_type];
            }
        }
        joint = next;
        stride *= base;
    }
    Ok(ToyEnsemble { pulses, n_max, base, joint, f_ref, f_pattern })
}

impl ToyEnsemble {
    pub fn base(&self) -> usize {
        self.base
    }

    pub fn cells(&self) -> usize {
        self.joint.len()
    }

    pub fn prob(&self, cell: usize) -> f64 {
        self.joint[cell]
    }

    pub fn total(&self) -> f64 {
        self.joint.iter().sum()
    }

    pub fn symbol(&self, a: PulseType, n: u32) -> usize {
        a.index() * (self.n_max as usize + 1) + n as usize
    }

    pub fn type_of(&self, symbol: usize) -> PulseType {
        PulseType::from_index(symbol / (self.n_max as usize + 1)).expect("valid symbol")
    }

    pub fn photons_of(&self, symbol: usize) -> u32 {
        (symbol % (self.n_max as usize + 1)) as u32
    }

    /// Truncated IID emission probability `f(a, n)`.
    pub fn f(&self, a: PulseType, n: u32) -> f64 {
        self.f_ref[self.symbol(a, n)]
    }

    /// Truncated pattern-dependent emission probability `f~(a, prev, n)`.
    pub fn f_tilde(&self, a: PulseType, prev: PulseType, n: u32) -> f64 {
        self.f_pattern[prev.index()][self.symbol(a, n)]
    }

    /// Symbols of a configuration, pulse 1 first.
    pub fn decode(&self, mut cell: usize) -> Vec<usize> {
        let mut out = Vec::with_capacity(self.pulses);
        for _ in 0..self.pulses {
            out.push(cell % self.base);
            cell /= self.base;
        }
        out
    }

    pub fn encode(&self, symbols: &[usize]) -> usize {
        symbols.iter().rev().fold(0, |acc, &s| acc * self.base + s)
    }

    /// Probability of a type sequence, summed over photon numbers.
    pub fn type_marginal(&self, types: &[PulseType]) -> f64 {
        assert_eq!(types.len(), self.pulses);
        (0..self.cells())
            .filter(|&c| self.decode(c).iter().zip(types).all(|(&s, &a)| self.type_of(s) == a))
            .map(|c| self.joint[c])
            .sum()
    }

    /// Marginal over pulses `i-1, i, i+1` (1-based `i`, interior), indexed
    /// `[prev][cur][next]` flattened.
    fn triple_marginal(&self, i: usize) -> Vec<f64> {
        let b = self.base;
        let mut m = vec![0.0; b * b * b];
        for (cell, &p) in self.joint.iter().enumerate() {
            let d = self.decode(cell);
            m[(d[i - 2] * b + d[i - 1]) * b + d[i]] += p;
        }
        m
    }

    /// Marginal over pulses `N-1, N`, indexed `[prev][cur]`.
    fn tail_marginal(&self) -> Vec<f64> {
        let b = self.base;
        let n = self.pulses;
        let mut m = vec![0.0; b * b];
        for (cell, &p) in self.joint.iter().enumerate() {
            let d = self.decode(cell);
            m[d[n - 2] * b + d[n - 1]] += p;
        }
        m
    }
}

/// Parity of emission indices.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Parity {
    Even,
    Odd,
}

impl Parity {
    fn matches(self, i: usize) -> bool {
        (i % 2 == 0) == (self == Parity::Even)
    }
}

/// Pattern-sifted indices of the given parity: `i` with `a_{i-1} = S` and
/// `a_{i+1}` in `{S, V}`.
pub fn ps_index_set(types: &[PulseType], parity: Parity) -> Vec<usize> {
    (1..=types.len())
        .filter(|&i| parity.matches(i))
        .filter(|&i| {
            i >= 2
                && i < types.len()
                && types[i - 2] == PulseType::Signal
                && matches!(types[i], PulseType::Signal | PulseType::Vacuum)
        })
        .collect()
}

/// Largest deviations found by [`conditional_factorization_check`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FactorizationResiduals {
    /// `|Pr(a_i, n_i | neighbours) - f(a_i, n_i)|` where the neighbours
    /// qualify the pulse for pattern sifting.
    pub neighbour_ps: f64,
    /// The same where they do not.
    pub neighbour_non_ps: f64,
    /// Even-given-odd conditional against the product of neighbour
    /// conditionals.
    pub even_given_odd: f64,
    /// Pattern-sifted even block given the odd pulses against `prod f`.
    pub sifted_even_block: f64,
}

/// Exact conditional checks on the enumerated table.
pub fn conditional_factorization_check(ens: &ToyEnsemble) -> FactorizationResiduals {
    let b = ens.base;
    let n = ens.pulses;
    let mut ps = 0.0f64;
    let mut non_ps = 0.0f64;
    let mut neighbour_cond: Vec<Option<Vec<f64>>> = vec![None; n + 1];

    for i in 2..n {
        let m = ens.triple_marginal(i);
        let mut cond = vec![0.0; b * b * b];
        for prev in 0..b {
            for next in 0..b {
                let norm: f64 = (0..b).map(|cur| m[(prev * b + cur) * b + next]).sum();
                if norm < NEGLIGIBLE {
                    continue;
                }
                let qualifies = ens.type_of(prev) == PulseType::Signal
                    && matches!(ens.type_of(next), PulseType::Signal | PulseType::Vacuum);
                for cur in 0..b {
                    let c = m[(prev * b + cur) * b + next] / norm;
                    cond[(prev * b + cur) * b + next] = c;
                    let dev = (c - ens.f_ref[cur]).abs();
                    if qualifies {
                        ps = ps.max(dev);
                    } else {
                        non_ps = non_ps.max(dev);
                    }
                }
            }
        }
        neighbour_cond[i] = Some(cond);
    }

    // the last pulse only has a predecessor
    let tail = if n >= 2 {
        let m = ens.tail_marginal();
        let mut cond = vec![0.0; b * b];
        for prev in 0..b {
            let norm: f64 = (0..b).map(|cur| m[prev * b + cur]).sum();
            if norm >= NEGLIGIBLE {
                for cur in 0..b {
                    cond[prev * b + cur] = m[prev * b + cur] / norm;
                }
            }
        }
        Some(cond)
    } else {
        None
    };

    // marginals over odd pulses, and over odd pulses plus the sifted even block
    let mut odd_mass: HashMap<Vec<usize>, f64> = HashMap::new();
    let mut block_mass: HashMap<(Vec<usize>, Vec<usize>), f64> = HashMap::new();
    for (cell, &p) in ens.joint.iter().enumerate() {
        let d = ens.decode(cell);
        let odd: Vec<usize> = (1..=n).filter(|i| i % 2 == 1).map(|i| d[i - 1]).collect();
        let types: Vec<PulseType> = d.iter().map(|&s| ens.type_of(s)).collect();
        let block: Vec<usize> = ps_index_set(&types, Parity::Even).into_iter().map(|i| d[i - 1]).collect();
        *odd_mass.entry(odd.clone()).or_default() += p;
        *block_mass.entry((odd, block)).or_default() += p;
    }

    let mut even_given_odd = 0.0f64;
    for (cell, &p) in ens.joint.iter().enumerate() {
        let d = ens.decode(cell);
        let odd: Vec<usize> = (1..=n).filter(|i| i % 2 == 1).map(|i| d[i - 1]).collect();
        let po = odd_mass[&odd];
        if po < NEGLIGIBLE {
            continue;
        }
        let mut product = 1.0;
        for i in (2..=n).step_by(2) {
            product *= if i < n {
                neighbour_cond[i].as_ref().expect("interior")[(d[i - 2] * b + d[i - 1]) * b + d[i]]
            } else {
                tail.as_ref().expect("n >= 2")[d[i - 2] * b + d[i - 1]]
            };
        }
        even_given_odd = even_given_odd.max((p / po - product).abs());
    }

    let mut sifted_even_block = 0.0f64;
    for ((odd, block), mass) in &block_mass {
        let po = odd_mass[odd];
        if po < NEGLIGIBLE {
            continue;
        }
        let product: f64 = block.iter().map(|&s| ens.f_ref[s]).product();
        sifted_even_block = sifted_even_block.max((mass / po - product).abs());
    }

    FactorizationResiduals { neighbour_ps: ps, neighbour_non_ps: non_ps, even_given_odd, sifted_even_block }
}

/// `max |Pr(s_{k+1} | s_1..s_k) - Pr(s_{k+1} | s_k)|` over all prefixes.
pub fn markov_chain_residual(ens: &ToyEnsemble) -> f64 {
    let b = ens.base;
    let mut worst = 0.0f64;
    // prefix marginals: digits are little-endian, so the prefix of length k
    // is cell % b^k
    let mut prefix_len_mass: Vec<Vec<f64>> = Vec::with_capacity(ens.pulses + 1);
    for k in 0..=ens.pulses {
        let size = b.pow(k as u32);
        let mut m = vec![0.0; size];
        for (cell, &p) in ens.joint.iter().enumerate() {
            m[cell % size] += p;
        }
        prefix_len_mass.push(m);
    }
    for k in 1..ens.pulses {
        let size = b.pow(k as u32);
        let short = &prefix_len_mass[k];
        let long = &prefix_len_mass[k + 1];
        // Pr(s_k, s_{k+1})
        let mut pair = vec![0.0; b * b];
        for (cell, &p) in long.iter().enumerate() {
            let last = (cell / (size / b)) % b;
            let next = cell / size;
            pair[last * b + next] += p;
        }
        for (prefix, &pp) in short.iter().enumerate() {
            if pp < NEGLIGIBLE {
                continue;
            }
            let last = prefix / (size / b);
            let norm: f64 = (0..b).map(|s| pair[last * b + s]).sum();
            for s in 0..b {
                let full = long[prefix + s * size] / pp;
                let local = pair[last * b + s] / norm;
                worst = worst.max((full - local).abs());
            }
        }
    }
    worst
}

/// Toy detection outcome per pulse.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum ToyChannel {
    /// Click with probability `1 - (1 - eta)^n`.
    PhotonNumber { eta: f64 },
    /// Like `PhotonNumber`, but decoy pulses click with `decoy_factor` times
    /// that probability: the outcome depends on the type directly.
    TypeDependent { eta: f64, decoy_factor: f64 },
}

impl ToyChannel {
    fn click(&self, a: PulseType, n: u32) -> f64 {
        match *self {
            ToyChannel::PhotonNumber { eta } => 1.0 - (1.0 - eta).powi(n as i32),
            ToyChannel::TypeDependent { eta, decoy_factor } => {
                let c = 1.0 - (1.0 - eta).powi(n as i32);
                if a == PulseType::Decoy {
                    c * decoy_factor
                } else {
                    c
                }
            }
        }
    }
}

/// Conditional-independence residual `max |Pr(z | x, y) - Pr(z | y)|` of a
/// finite joint distribution given as `(x, y, z, probability)` tuples.
pub fn ci_residual<K: std::hash::Hash + Eq + Clone>(cells: impl IntoIterator<Item = (K, K, K, f64)>) -> f64 {
    let mut xyz: HashMap<(K, K, K), f64> = HashMap::new();
    let mut xy: HashMap<(K, K), f64> = HashMap::new();
    let mut yz: HashMap<(K, K), f64> = HashMap::new();
    let mut y: HashMap<K, f64> = HashMap::new();
    for (kx, ky, kz, p) in cells {
        *xyz.entry((kx.clone(), ky.clone(), kz.clone())).or_default() += p;
        *xy.entry((kx, ky.clone())).or_default() += p;
        *yz.entry((ky.clone(), kz)).or_default() += p;
        *y.entry(ky).or_default() += p;
    }
    let mut z_given_y: HashMap<K, Vec<(K, f64)>> = HashMap::new();
    for ((ky, kz), p) in yz {
        let py = y[&ky];
        z_given_y.entry(ky).or_default().push((kz, p / py));
    }
    let mut worst = 0.0f64;
    for ((kx, ky), &pxy) in &xy {
        if pxy < NEGLIGIBLE {
            continue;
        }
        for (kz, pz) in &z_given_y[ky] {
            let pxyz = xyz.get(&(kx.clone(), ky.clone(), kz.clone())).copied().unwrap_or(0.0);
            worst = worst.max((pxyz / pxy - pz).abs());
        }
    }
    worst
}

/// Residuals of the detection Markov chains.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LambdaResiduals {
    /// `a -> n -> Lambda` over the whole train.
    pub full: f64,
    /// `a^{even,PS} -> (n^{even,PS}, n^odd, a^odd) -> Lambda^{even,PS}`.
    pub restricted: f64,
}

/// Exact residuals of the detection Markov chains for a toy channel.
pub fn markov_lambda_residuals(ens: &ToyEnsemble, channel: ToyChannel) -> LambdaResiduals {
    let n = ens.pulses;
    let outcomes = 1usize << n;
    let mut full = Vec::new();
    let mut restricted = Vec::new();
    for (cell, &p) in ens.joint.iter().enumerate() {
        if p < NEGLIGIBLE {
            continue;
        }
        let d = ens.decode(cell);
        let types: Vec<PulseType> = d.iter().map(|&s| ens.type_of(s)).collect();
        let photons: Vec<usize> = d.iter().map(|&s| ens.photons_of(s) as usize).collect();
        let type_idx: Vec<usize> = types.iter().map(|a| a.index()).collect();
        let sifted = ps_index_set(&types, Parity::Even);
        let odd: Vec<usize> = (1..=n).filter(|i| i % 2 == 1).collect();
        let click: Vec<f64> = (0..n).map(|i| channel.click(types[i], photons[i] as u32)).collect();
        for lam in 0..outcomes {
            let pl: f64 = (0..n)
                .map(|i| if lam >> i & 1 == 1 { click[i] } else { 1.0 - click[i] })
                .product();
            let q = p * pl;
            let bits: Vec<usize> = (0..n).map(|i| lam >> i & 1).collect();
            full.push((type_idx.clone(), photons.clone(), bits.clone(), q));

            let x: Vec<usize> = sifted.iter().map(|&i| type_idx[i - 1]).collect();
            let mut y: Vec<usize> = sifted.iter().map(|&i| photons[i - 1]).collect();
            y.push(usize::MAX);
            y.extend(odd.iter().map(|&i| photons[i - 1]));
            y.extend(odd.iter().map(|&i| type_idx[i - 1]));
            let z: Vec<usize> = sifted.iter().map(|&i| bits[i - 1]).collect();
            restricted.push((x, y, z, q));
        }
    }
    LambdaResiduals { full: ci_residual(full), restricted: ci_residual(restricted) }
}

/// Whether both detection Markov chains hold to `1e-12`.
pub fn markov_lambda_check(ens: &ToyEnsemble, channel: ToyChannel) -> bool {
    let r = markov_lambda_residuals(ens, channel);
    r.full < 1e-12 && r.restricted < 1e-12
}

pub use crate::finite_key::union_bound_budget;

/// Audit sizes and toy-channel settings.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AuditConfig {
    pub pulses: usize,
    pub n_max: u32,
    /// Train length for the detection checks (the table grows by `2^N`).
    pub lambda_pulses: usize,
    pub lambda_n_max: u32,
    pub eta: f64,
    pub eps_a: f64,
    pub eps_b: f64,
}

impl Default for AuditConfig {
    fn default() -> Self {
        AuditConfig { pulses: 5, n_max: 3, lambda_pulses: 4, lambda_n_max: 3, eta: 0.3, eps_a: 5e-12, eps_b: 5e-12 }
    }
}

/// Summary written by the audit command.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AuditReport {
    pub eq7_residual_ps: f64,
    pub eq7_residual_non_ps: f64,
    pub even_given_odd_residual: f64,
    pub sifted_block_residual: f64,
    pub markov_residual: f64,
    pub union_bound: f64,
    pub total_budget: f64,
    pub pass: bool,
}

/// Runs every exact check with the given model.
pub fn run_audit(
    config: &AuditConfig,
    params: &SystemParams,
    table: &PatternIntensityTable,
) -> Result<AuditReport, AuditError> {
    let ens = exact_joint(config.pulses, config.n_max, params, table)?;
    let fact = conditional_factorization_check(&ens);
    let chain = if config.pulses <= 6 { markov_chain_residual(&ens) } else { 0.0 };
    let small = exact_joint(config.lambda_pulses, config.lambda_n_max, params, table)?;
    let lam = markov_lambda_residuals(&small, ToyChannel::PhotonNumber { eta: config.eta });
    let markov_residual = chain.max(lam.full).max(lam.restricted);
    let pass = fact.neighbour_ps < EXACT_TOL
        && fact.even_given_odd < EXACT_TOL
        && fact.sifted_even_block < EXACT_TOL
        && markov_residual < 1e-12;
    Ok(AuditReport {
        eq7_residual_ps: fact.neighbour_ps,
        eq7_residual_non_ps: fact.neighbour_non_ps,
        even_given_odd_residual: fact.even_given_odd,
        sifted_block_residual: fact.sifted_even_block,
        markov_residual,
        union_bound: union_bound_budget(config.eps_a),
        total_budget: 2.0 * (config.eps_a + config.eps_b),
        pass,
    })
}

/// Same as [`ps_index_set`] for both parities, checked against the
/// sifting predicate.
pub fn ps_sets_agree(types: &[PulseType]) -> bool {
    let even = ps_index_set(types, Parity::Even);
    let odd = ps_index_set(types, Parity::Odd);
    let mut all: Vec<usize> = even.iter().chain(odd.iter()).copied().collect();
    all.sort_unstable();
    let kept: Vec<usize> = (1..=types.len()).filter(|&i| ps_keep(types, i)).collect();
    even.iter().all(|i| !odd.contains(i)) && all == kept
}
