//! Pattern sifting, alternate key distillation, intensity sifting and the
//! naive fixed-predecessor baseline.
//!
//! Indices are 1-based emission indices throughout, so index parity is the
//! parity of the emission time slot.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::SiftError;
use crate::model::{PatternIntensityTable, PulseType, SystemParams};
use crate::source::PulseRecord;

/// Pattern-sifting predicate for the 1-based index `i` of a train `types`.
///
/// Pulse `i` survives when its predecessor is a signal pulse and its
/// successor is not a decoy. The first and last pulses never survive.
pub fn ps_keep(types: &[PulseType], i: usize) -> bool {
    let n = types.len();
    if i <= 1 || i >= n {
        return false;
    }
    types[i - 2] == PulseType::Signal && types[i] != PulseType::Decoy
}

/// Indices kept by pattern sifting, in increasing order.
pub fn pattern_sift(types: &[PulseType]) -> Vec<usize> {
    (1..=types.len()).into_par_iter().filter(|&i| ps_keep(types, i)).collect()
}

/// Long-run fraction of pulses kept by pattern sifting, `p_S (1 - p_D)`.
pub fn expected_ps_fraction(params: &SystemParams) -> f64 {
    params.p_signal * (1.0 - params.p_decoy)
}

/// Forces every odd-indexed pulse to be a signal pulse, as the naive
/// protocol does.
pub fn force_naive_pattern(types: &mut [PulseType]) {
    for a in types.iter_mut().step_by(2) {
        *a = PulseType::Signal;
    }
}

/// Naive baseline: only even-indexed pulses are used, each of which has a
/// signal predecessor by construction. Half the pulses are lost.
pub fn naive_sift(types: &[PulseType]) -> Result<Vec<usize>, SiftError> {
    if let Some(k) = types.iter().step_by(2).position(|&a| a != PulseType::Signal) {
        return Err(SiftError::NaiveOddNotSignal(2 * k + 1));
    }
    Ok((2..=types.len()).step_by(2).collect())
}

/// Splits indices by parity: `(even, odd)`.
pub fn akd_split(kept: &[usize]) -> (Vec<usize>, Vec<usize>) {
    kept.iter().partition(|&&i| i % 2 == 0)
}

/// Sifting options.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SiftConfig {
    /// Half-width of the intensity acceptance window in units of the
    /// fluctuation width.
    pub t: f64,
    /// Use the naive fixed-predecessor protocol instead of pattern sifting.
    pub naive_mode: bool,
}

impl Default for SiftConfig {
    fn default() -> Self {
        SiftConfig { t: 0.6, naive_mode: false }
    }
}

impl SiftConfig {
    pub fn validate(&self) -> Result<(), SiftError> {
        if !(self.t > 0.0 && self.t.is_finite()) {
            return Err(SiftError::BadWindow(self.t));
        }
        Ok(())
    }
}

/// Closed window `[lo, hi]` of accepted realized intensities for type `a`.
///
/// Signal and decoy windows are centred on the nominal intensity with
/// half-width `t * sigma_rel * mu`; the vacuum window is `[0, t * sigma_V]`.
pub fn acceptance_band(a: PulseType, t: f64, params: &SystemParams, table: &PatternIntensityTable) -> (f64, f64) {
    match table.sigma_rel(a) {
        Some(rel) => {
            let mu = params.mu(a);
            let half = t * rel * mu;
            (mu - half, mu + half)
        }
        None => (params.mu_vacuum, params.mu_vacuum + t * table.sigma_abs_vacuum),
    }
}

/// Probability that a pulse of type `a` passes intensity sifting.
///
/// A Gaussian within `t` standard deviations and a half-Gaussian below `t`
/// widths share the same mass, `erf(t / sqrt 2)`. Without fluctuation every
/// pulse passes.
pub fn is_pass_probability(a: PulseType, t: f64, table: &PatternIntensityTable) -> f64 {
    let width = match table.sigma_rel(a) {
        Some(rel) => rel,
        None => table.sigma_abs_vacuum,
    };
    if width == 0.0 {
        1.0
    } else {
        libm::erf(t / std::f64::consts::SQRT_2)
    }
}

/// Type probabilities among pulses that pass intensity sifting.
pub fn effective_probabilities(t: f64, params: &SystemParams, table: &PatternIntensityTable) -> [f64; 3] {
    let mut w = [0.0; 3];
    for a in PulseType::ALL {
        w[a.index()] = params.prob(a) * is_pass_probability(a, t, table);
    }
    let total: f64 = w.iter().sum();
    w.map(|x| x / total)
}

/// Whether a pulse with the given realized intensity passes.
pub fn is_keep(a: PulseType, mu_realized: f64, t: f64, params: &SystemParams, table: &PatternIntensityTable) -> bool {
    let (lo, hi) = acceptance_band(a, t, params, table);
    (lo..=hi).contains(&mu_realized)
}

/// Keeps the indices in `kept` whose realized intensity lies inside the
/// acceptance window. `pulses[i - 1]` must be the record of index `i`.
pub fn intensity_sift(
    pulses: &[PulseRecord],
    kept: &[usize],
    config: &SiftConfig,
    params: &SystemParams,
    table: &PatternIntensityTable,
) -> Result<Vec<usize>, SiftError> {
    config.validate()?;
    let mut out = Vec::with_capacity(kept.len());
    for &i in kept {
        let p = pulses.get(i.wrapping_sub(1)).ok_or(SiftError::IndexOutOfRange { index: i, len: pulses.len() })?;
        if is_keep(p.pulse_type, p.mu_realized, config.t, params, table) {
            out.push(i);
        }
    }
    Ok(out)
}

/// Surviving index sets after each sifting stage.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct SiftOutcome {
    pub kept_ps: Vec<usize>,
    pub kept_is: Vec<usize>,
    pub branch_even: Vec<usize>,
    pub branch_odd: Vec<usize>,
}

/// Runs pattern (or naive) sifting, intensity sifting and the parity split.
pub fn sift(
    pulses: &[PulseRecord],
    config: &SiftConfig,
    params: &SystemParams,
    table: &PatternIntensityTable,
) -> Result<SiftOutcome, SiftError> {
    let types: Vec<PulseType> = pulses.iter().map(|p| p.pulse_type).collect();
    let kept_ps = if config.naive_mode { naive_sift(&types)? } else { pattern_sift(&types) };
    let kept_is = intensity_sift(pulses, &kept_ps, config, params, table)?;
    let (branch_even, branch_odd) = akd_split(&kept_is);
    Ok(SiftOutcome { kept_ps, kept_is, branch_even, branch_odd })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SiftFractions {
    pub ps: f64,
    pub is: f64,
    pub even: f64,
    pub odd: f64,
}

/// Index-set sizes and their fractions of the emitted train.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SiftReport {
    pub n_total: u64,
    pub n_ps: u64,
    pub n_is: u64,
    pub n_even: u64,
    pub n_odd: u64,
    pub fractions: SiftFractions,
}

impl SiftReport {
    pub fn from_counts(n_total: u64, n_ps: u64, n_is: u64, n_even: u64, n_odd: u64) -> Self {
        let f = |k: u64| if n_total == 0 { 0.0 } else { k as f64 / n_total as f64 };
        SiftReport {
            n_total,
            n_ps,
            n_is,
            n_even,
            n_odd,
            fractions: SiftFractions { ps: f(n_ps), is: f(n_is), even: f(n_even), odd: f(n_odd) },
        }
    }

    pub fn new(n_total: usize, outcome: &SiftOutcome) -> Self {
        Self::from_counts(
            n_total as u64,
            outcome.kept_ps.len() as u64,
            outcome.kept_is.len() as u64,
            outcome.branch_even.len() as u64,
            outcome.branch_odd.len() as u64,
        )
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::parse_types;
    use crate::source::{sample_intensities, sample_pulse_types, FluctuationModel, Transmitter};
    use proptest::prelude::*;
    use PulseType::*;

    // rule-by-rule oracle: drop if predecessor is D or V, drop if successor is D
    fn rules_oracle(types: &[PulseType]) -> Vec<usize> {
        let n = types.len();
        let mut out = Vec::new();
        for i in 1..=n {
            if i == 1 || i == n {
                continue;
            }
            let pred = types[i - 2];
            let succ = types[i];
            if pred == Decoy || pred == Vacuum {
                continue;
            }
            if succ == Decoy {
                continue;
            }
            out.push(i);
        }
        out
    }

    #[test]
    fn pattern_sift_examples() {
        let a = parse_types("SDSVSD").unwrap();
        assert_eq!(rules_oracle(&a), vec![2, 4]);
        assert_eq!(pattern_sift(&a), vec![2, 4]);
        assert_eq!(pattern_sift(&[Signal; 10]), (2..=9).collect::<Vec<_>>());
        assert!(pattern_sift(&[Decoy; 10]).is_empty());
        assert!(pattern_sift(&[Signal]).is_empty());
    }

    #[test]
    fn expected_fraction() {
        let p = SystemParams::default();
        assert!((expected_ps_fraction(&p) - 210.0 / 256.0).abs() < 1e-15);
        let all_s = SystemParams { p_signal: 1.0, p_decoy: 0.0, p_vacuum: 0.0, ..p };
        assert_eq!(expected_ps_fraction(&all_s), 1.0);
    }

    #[test]
    fn kept_fraction_and_composition() {
        let p = SystemParams::default();
        let n = 10_000_000;
        let types = sample_pulse_types(n, &p, 31);
        let kept = pattern_sift(&types);
        let frac = kept.len() as f64 / n as f64;
        assert!((frac - 0.8203).abs() < 0.0005, "{frac}");

        let k = kept.len() as f64;
        for a in PulseType::ALL {
            let c = kept.iter().filter(|&&i| types[i - 1] == a).count() as f64;
            let pa = p.prob(a);
            assert!((c - k * pa).abs() < 4.0 * (k * pa * (1.0 - pa)).sqrt(), "{a}");
        }

        let (even, odd) = akd_split(&kept);
        assert!((even.len() as f64 - odd.len() as f64).abs() < 4.0 * k.sqrt());
    }

    #[test]
    fn kept_pulses_are_nominal_without_fluctuation() {
        let p = SystemParams::default();
        let table = PatternIntensityTable::measured();
        let types = sample_pulse_types(200_000, &p, 8);
        let mu = sample_intensities(&types, &p, &table, &FluctuationModel::none(), 9);
        for i in pattern_sift(&types) {
            assert_eq!(mu[i - 1], p.mu(types[i - 1]));
        }
    }

    #[test]
    fn akd_examples() {
        assert_eq!(akd_split(&[2, 4, 7]), (vec![2, 4], vec![7]));
        assert_eq!(akd_split(&[]), (vec![], vec![]));
    }

    #[test]
    fn naive_examples() {
        let mut types = vec![Decoy; 10];
        assert_eq!(naive_sift(&types), Err(SiftError::NaiveOddNotSignal(1)));
        force_naive_pattern(&mut types);
        assert_eq!(naive_sift(&types).unwrap(), vec![2, 4, 6, 8, 10]);
        assert!(naive_sift(&[Signal]).unwrap().is_empty());
        let mut bad = types.clone();
        bad[4] = Vacuum;
        assert_eq!(naive_sift(&bad), Err(SiftError::NaiveOddNotSignal(5)));
    }

    #[test]
    fn pass_probability_and_effective_probs() {
        let table = PatternIntensityTable::measured();
        assert!((is_pass_probability(Signal, 1.0, &table) - 0.682_689_492_137_086).abs() < 1e-12);
        assert_eq!(is_pass_probability(Decoy, 1.0, &PatternIntensityTable { sigma_rel_decoy: 0.0, ..table.clone() }), 1.0);
        let p = SystemParams::default();
        let eff = effective_probabilities(0.4, &p, &table);
        for (e, q) in eff.iter().zip(p.probs()) {
            assert!((e - q).abs() < 1e-15);
        }
        let no_s = PatternIntensityTable { sigma_rel_signal: 0.0, ..table.clone() };
        let eff = effective_probabilities(1.0, &p, &no_s);
        assert!(eff[0] > p.p_signal && (eff.iter().sum::<f64>() - 1.0).abs() < 1e-15);
    }

    #[test]
    fn bands() {
        let p = SystemParams::default();
        let table = PatternIntensityTable::measured();
        let (lo, hi) = acceptance_band(Signal, 1.0, &p, &table);
        assert!((lo - 0.484).abs() < 1e-12 && (hi - 0.516).abs() < 1e-12);
        let (lo, hi) = acceptance_band(Vacuum, 0.5, &p, &table);
        assert_eq!(lo, 0.0);
        assert!((hi - 0.008).abs() < 1e-15);
    }

    #[test]
    fn no_fluctuation_everything_survives() {
        let p = SystemParams::default();
        let table = PatternIntensityTable::measured();
        let tx = Transmitter::new(p.clone(), table.clone(), FluctuationModel::none());
        let pulses = tx.emit(100_000, 4);
        for t in [0.1, 1.0] {
            let out = sift(&pulses, &SiftConfig { t, naive_mode: false }, &p, &table).unwrap();
            assert_eq!(out.kept_ps, out.kept_is);
        }
        assert!(intensity_sift(&pulses, &[0], &SiftConfig::default(), &p, &table).is_err());
        assert!(SiftConfig { t: 0.0, naive_mode: false }.validate().is_err());
    }

    #[test]
    fn gaussian_and_half_gaussian_survival() {
        let p = SystemParams::default();
        let table = PatternIntensityTable::measured();
        let fl = FluctuationModel::from_table(&table);
        let n = 1_000_000;
        for a in [Signal, Vacuum] {
            let types = vec![a; n];
            let mu = sample_intensities(&types, &p, &table, &fl, 17);
            let pass = mu.iter().filter(|&&m| is_keep(a, m, 1.0, &p, &table)).count() as f64 / n as f64;
            assert!((pass - 0.6827).abs() < 0.002, "{a}: {pass}");
        }
    }

    #[test]
    fn report_json_fields() {
        let r = SiftReport::from_counts(10, 8, 6, 3, 3);
        let v = serde_json::to_value(r).unwrap();
        for k in ["n_total", "n_ps", "n_is", "n_even", "n_odd", "fractions"] {
            assert!(v.get(k).is_some(), "{k}");
        }
        assert_eq!(v["fractions"]["ps"], 0.8);
    }

    fn arb_types(max: usize) -> impl Strategy<Value = Vec<PulseType>> {
        prop::collection::vec(prop_oneof![Just(Signal), Just(Decoy), Just(Vacuum)], 0..max)
    }

    proptest! {
        #[test]
        fn matches_rules_oracle(types in arb_types(64)) {
            prop_assert_eq!(pattern_sift(&types), rules_oracle(&types));
        }

        #[test]
        fn membership_depends_only_on_neighbours(
            types in arb_types(40),
            replacement in prop_oneof![Just(Signal), Just(Decoy), Just(Vacuum)],
            pos in 0usize..40,
        ) {
            prop_assume!(types.len() >= 3);
            let pos = pos % types.len();
            let mut other = types.clone();
            other[pos] = replacement;
            // pulse pos + 1 only changed its own type
            prop_assert_eq!(ps_keep(&types, pos + 1), ps_keep(&other, pos + 1));
        }

        #[test]
        fn split_partitions(kept in prop::collection::btree_set(1usize..10_000, 0..200)) {
            let kept: Vec<usize> = kept.into_iter().collect();
            let (even, odd) = akd_split(&kept);
            prop_assert_eq!(even.len() + odd.len(), kept.len());
            prop_assert!(even.iter().all(|i| i % 2 == 0) && odd.iter().all(|i| i % 2 == 1));
            let mut merged: Vec<usize> = even.iter().chain(odd.iter()).copied().collect();
            merged.sort_unstable();
            prop_assert_eq!(merged, kept);
        }

        #[test]
        fn survival_monotone_in_t(t1 in 0.05f64..2.0, dt in 0.0f64..1.0, seed in 0u64..1000) {
            let p = SystemParams::default();
            let table = PatternIntensityTable::measured();
            let tx = Transmitter::new(p.clone(), table.clone(), FluctuationModel::from_table(&table));
            let pulses = tx.emit(3000, seed);
            let narrow = sift(&pulses, &SiftConfig { t: t1, naive_mode: false }, &p, &table).unwrap();
            let wide = sift(&pulses, &SiftConfig { t: t1 + dt, naive_mode: false }, &p, &table).unwrap();
            prop_assert!(narrow.kept_is.len() <= wide.kept_is.len());
            prop_assert!(wide.kept_is.iter().all(|i| wide.kept_ps.binary_search(i).is_ok()));
        }
    }
}
