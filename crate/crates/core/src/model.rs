//! Pulse types, system constants and photon-number statistics.
//!
//! Everything here is pure. The rest of the crate builds on three pieces:
//! [`SystemParams`] (protocol, source, channel and detector constants),
//! [`PatternIntensityTable`] (how a pulse's mean photon number depends on the
//! type of the pulse before it) and the Poissonian emission probabilities
//! [`emission_prob_f`] / [`emission_prob_ftilde`].

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::ModelError;

/// Photon-number truncation used by exact enumerations.
///
/// The Poisson tail beyond 30 photons is below 1e-12 for every mean photon
/// number up to 1.
pub const PHOTON_CUTOFF: u32 = 30;

/// Intensity setting of one pulse.
///
/// Ordered by nominal intensity: `Vacuum < Decoy < Signal`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum PulseType {
    #[serde(rename = "V")]
    Vacuum,
    #[serde(rename = "D")]
    Decoy,
    #[serde(rename = "S")]
    Signal,
}

impl PulseType {
    /// All three types, strongest first.
    pub const ALL: [PulseType; 3] = [PulseType::Signal, PulseType::Decoy, PulseType::Vacuum];

    /// Dense index used for per-type arrays: S = 0, D = 1, V = 2.
    pub const fn index(self) -> usize {
        match self {
            PulseType::Signal => 0,
            PulseType::Decoy => 1,
            PulseType::Vacuum => 2,
        }
    }

    pub const fn from_index(i: usize) -> Option<PulseType> {
        match i {
            0 => Some(PulseType::Signal),
            1 => Some(PulseType::Decoy),
            2 => Some(PulseType::Vacuum),
            _ => None,
        }
    }

    pub const fn symbol(self) -> char {
        match self {
            PulseType::Signal => 'S',
            PulseType::Decoy => 'D',
            PulseType::Vacuum => 'V',
        }
    }

    pub fn from_symbol(c: char) -> Option<PulseType> {
        match c {
            'S' | 's' => Some(PulseType::Signal),
            'D' | 'd' => Some(PulseType::Decoy),
            'V' | 'v' => Some(PulseType::Vacuum),
            _ => None,
        }
    }
}

impl fmt::Display for PulseType {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.symbol())
    }
}

/// Parses a compact type string such as `"SDSVSD"`.
pub fn parse_types(s: &str) -> Result<Vec<PulseType>, ModelError> {
    s.chars()
        .filter(|c| !c.is_whitespace() && *c != ',')
        .map(|c| PulseType::from_symbol(c).ok_or(ModelError::UnknownSymbol(c)))
        .collect()
}

/// Encoding basis. `Z` carries the key, `Y` is the test basis.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Basis {
    Y,
    Z,
}

impl Basis {
    pub const ALL: [Basis; 2] = [Basis::Z, Basis::Y];

    /// Z = 0, Y = 1.
    pub const fn index(self) -> usize {
        match self {
            Basis::Z => 0,
            Basis::Y => 1,
        }
    }

    pub const fn symbol(self) -> char {
        match self {
            Basis::Y => 'Y',
            Basis::Z => 'Z',
        }
    }
}

/// Protocol, source, channel and detector constants.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SystemParams {
    pub p_signal: f64,
    pub p_decoy: f64,
    pub p_vacuum: f64,
    pub mu_signal: f64,
    pub mu_decoy: f64,
    pub mu_vacuum: f64,
    /// Alice's basis probabilities.
    pub p_y_alice: f64,
    pub p_z_alice: f64,
    /// Bob's passive basis-splitting ratios.
    pub p_y_bob: f64,
    pub p_z_bob: f64,
    pub eta_det: f64,
    pub eta_bob: f64,
    pub p_dark: f64,
    pub p_afterpulse: f64,
    pub e_opt: f64,
    /// Fiber attenuation in dB/km.
    pub alpha_db_per_km: f64,
    pub f_ec: f64,
    pub eps_sec: f64,
    pub eps_cor: f64,
    /// Sifted key-basis bits accumulated over both distillation branches.
    pub n_sift: f64,
}

impl Default for SystemParams {
    fn default() -> Self {
        SystemParams {
            p_signal: 14.0 / 16.0,
            p_decoy: 1.0 / 16.0,
            p_vacuum: 1.0 / 16.0,
            mu_signal: 0.5,
            mu_decoy: 0.2,
            mu_vacuum: 0.0,
            p_y_alice: 0.25,
            p_z_alice: 0.75,
            p_y_bob: 0.25,
            p_z_bob: 0.75,
            eta_det: 0.1,
            eta_bob: 0.25,
            p_dark: 1e-6,
            p_afterpulse: 1e-2,
            e_opt: 0.01,
            alpha_db_per_km: 0.2,
            f_ec: 1.2,
            eps_sec: 2e-11,
            eps_cor: 2f64.powi(-127),
            n_sift: 1e8,
        }
    }
}

const SUM_TOL: f64 = 1e-9;

impl SystemParams {
    /// Selection probability of a pulse type.
    pub fn prob(&self, a: PulseType) -> f64 {
        match a {
            PulseType::Signal => self.p_signal,
            PulseType::Decoy => self.p_decoy,
            PulseType::Vacuum => self.p_vacuum,
        }
    }

    /// Selection probabilities indexed by [`PulseType::index`].
    pub fn probs(&self) -> [f64; 3] {
        [self.p_signal, self.p_decoy, self.p_vacuum]
    }

    /// Nominal mean photon number of a pulse type.
    pub fn mu(&self, a: PulseType) -> f64 {
        match a {
            PulseType::Signal => self.mu_signal,
            PulseType::Decoy => self.mu_decoy,
            PulseType::Vacuum => self.mu_vacuum,
        }
    }

    pub fn p_alice(&self, x: Basis) -> f64 {
        match x {
            Basis::Y => self.p_y_alice,
            Basis::Z => self.p_z_alice,
        }
    }

    pub fn p_bob(&self, x: Basis) -> f64 {
        match x {
            Basis::Y => self.p_y_bob,
            Basis::Z => self.p_z_bob,
        }
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        let probs = [
            ("p_signal", self.p_signal),
            ("p_decoy", self.p_decoy),
            ("p_vacuum", self.p_vacuum),
            ("p_y_alice", self.p_y_alice),
            ("p_z_alice", self.p_z_alice),
            ("p_y_bob", self.p_y_bob),
            ("p_z_bob", self.p_z_bob),
            ("eta_det", self.eta_det),
            ("eta_bob", self.eta_bob),
            ("p_dark", self.p_dark),
            ("p_afterpulse", self.p_afterpulse),
            ("e_opt", self.e_opt),
        ];
        for (name, v) in probs {
            if !(0.0..=1.0).contains(&v) {
                return Err(ModelError::OutOfRange { name, value: v });
            }
        }
        let type_sum = self.p_signal + self.p_decoy + self.p_vacuum;
        if (type_sum - 1.0).abs() > SUM_TOL {
            return Err(ModelError::NotNormalized { what: "type probabilities", sum: type_sum });
        }
        let alice = self.p_y_alice + self.p_z_alice;
        if (alice - 1.0).abs() > SUM_TOL {
            return Err(ModelError::NotNormalized { what: "Alice basis probabilities", sum: alice });
        }
        let bob = self.p_y_bob + self.p_z_bob;
        if (bob - 1.0).abs() > SUM_TOL {
            return Err(ModelError::NotNormalized { what: "Bob basis probabilities", sum: bob });
        }
        if !(self.mu_signal > self.mu_decoy && self.mu_decoy > self.mu_vacuum && self.mu_vacuum >= 0.0) {
            return Err(ModelError::IntensityOrder {
                signal: self.mu_signal,
                decoy: self.mu_decoy,
                vacuum: self.mu_vacuum,
            });
        }
        if !(self.alpha_db_per_km >= 0.0) {
            return Err(ModelError::OutOfRange { name: "alpha_db_per_km", value: self.alpha_db_per_km });
        }
        if !(self.f_ec >= 1.0) {
            return Err(ModelError::OutOfRange { name: "f_ec", value: self.f_ec });
        }
        for (name, v) in [("eps_sec", self.eps_sec), ("eps_cor", self.eps_cor)] {
            if !(v > 0.0 && v < 1.0) {
                return Err(ModelError::OutOfRange { name, value: v });
            }
        }
        if !(self.n_sift >= 1.0) {
            return Err(ModelError::OutOfRange { name: "n_sift", value: self.n_sift });
        }
        Ok(())
    }
}

/// Predecessor-conditioned intensity ratios and fluctuation widths.
///
/// `ratio[current][predecessor]` multiplies the nominal mean photon number of
/// `current`. The S row carries the measured deviations, but they are only
/// applied when `s_row_pattern_effect` is set; by default a signal pulse has
/// exactly the nominal intensity whatever precedes it. Vacuum pulses always
/// sit at the nominal vacuum intensity.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PatternIntensityTable {
    pub ratio: [[f64; 3]; 3],
    /// Normalized standard deviation of signal pulses (relative to the mean).
    pub sigma_rel_signal: f64,
    /// Normalized standard deviation of decoy pulses.
    pub sigma_rel_decoy: f64,
    /// Absolute width of the vacuum half-Gaussian, in photons per pulse.
    pub sigma_abs_vacuum: f64,
    pub s_row_pattern_effect: bool,
}

impl Default for PatternIntensityTable {
    fn default() -> Self {
        Self::measured()
    }
}

impl PatternIntensityTable {
    /// The six-pattern measurement of a 1.24 GHz transmitter.
    ///
    /// The vacuum width equals the absolute signal width at the default
    /// signal intensity (0.032 x 0.5).
    pub fn measured() -> Self {
        let s = PulseType::Signal.index();
        let d = PulseType::Decoy.index();
        let v = PulseType::Vacuum.index();
        let mut ratio = [[1.0; 3]; 3];
        ratio[s][d] = 1.021;
        ratio[s][v] = 1.006;
        ratio[d][d] = 1.0 - 0.182;
        ratio[d][v] = 1.0 - 0.214;
        PatternIntensityTable {
            ratio,
            sigma_rel_signal: 0.032,
            sigma_rel_decoy: 0.070,
            sigma_abs_vacuum: 0.032 * 0.5,
            s_row_pattern_effect: false,
        }
    }

    /// No pattern effect: every ratio is 1.
    pub fn flat() -> Self {
        PatternIntensityTable { ratio: [[1.0; 3]; 3], ..Self::measured() }
    }

    pub fn ratio(&self, current: PulseType, predecessor: PulseType) -> f64 {
        self.ratio[current.index()][predecessor.index()]
    }

    pub fn set_ratio(&mut self, current: PulseType, predecessor: PulseType, value: f64) {
        self.ratio[current.index()][predecessor.index()] = value;
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        for a in [PulseType::Signal, PulseType::Decoy] {
            if (self.ratio(a, PulseType::Signal) - 1.0).abs() > 1e-12 {
                return Err(ModelError::ReferenceRatio(a));
            }
            for prev in PulseType::ALL {
                let r = self.ratio(a, prev);
                if !(r > 0.0 && r.is_finite()) {
                    return Err(ModelError::OutOfRange { name: "pattern ratio", value: r });
                }
            }
        }
        for (name, v) in [
            ("sigma_rel_signal", self.sigma_rel_signal),
            ("sigma_rel_decoy", self.sigma_rel_decoy),
            ("sigma_abs_vacuum", self.sigma_abs_vacuum),
        ] {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(ModelError::OutOfRange { name, value: v });
            }
        }
        Ok(())
    }

    /// Relative fluctuation width of S or D pulses; `None` for vacuum.
    pub fn sigma_rel(&self, a: PulseType) -> Option<f64> {
        match a {
            PulseType::Signal => Some(self.sigma_rel_signal),
            PulseType::Decoy => Some(self.sigma_rel_decoy),
            PulseType::Vacuum => None,
        }
    }
}

/// Mean photon number of a pulse of type `a` preceded by `prev`.
pub fn pattern_mu(a: PulseType, prev: PulseType, params: &SystemParams, table: &PatternIntensityTable) -> f64 {
    match a {
        PulseType::Vacuum => params.mu_vacuum,
        PulseType::Signal if !table.s_row_pattern_effect => params.mu_signal,
        _ => params.mu(a) * table.ratio(a, prev),
    }
}

/// Poisson probability `e^-mu mu^n / n!`, with `mu >= 0` assumed.
pub(crate) fn poisson(n: u32, mu: f64) -> f64 {
    debug_assert!(mu >= 0.0);
    if mu == 0.0 {
        return if n == 0 { 1.0 } else { 0.0 };
    }
    let mut q = (-mu).exp();
    for k in 1..=n {
        q *= mu / f64::from(k);
    }
    q
}

/// Probability of emitting `n` photons from a pulse with mean photon number `mu`.
pub fn poisson_pmf(n: u32, mu: f64) -> Result<f64, ModelError> {
    if !(mu >= 0.0) || !mu.is_finite() {
        return Err(ModelError::NegativeMean(mu));
    }
    Ok(poisson(n, mu))
}

/// Joint probability of choosing type `a` and emitting `n` photons, IID source.
pub fn emission_prob_f(a: PulseType, n: u32, params: &SystemParams) -> f64 {
    params.prob(a) * poisson(n, params.mu(a))
}

/// Same as [`emission_prob_f`] but with the predecessor-dependent intensity.
pub fn emission_prob_ftilde(
    a: PulseType,
    prev: PulseType,
    n: u32,
    params: &SystemParams,
    table: &PatternIntensityTable,
) -> f64 {
    params.prob(a) * poisson(n, pattern_mu(a, prev, params, table))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn close(a: f64, b: f64, tol: f64) -> bool {
        (a - b).abs() <= tol
    }

    #[test]
    fn pulse_type_order() {
        assert!(PulseType::Signal > PulseType::Decoy);
        assert!(PulseType::Decoy > PulseType::Vacuum);
        assert_eq!(parse_types("SDV").unwrap(), vec![PulseType::Signal, PulseType::Decoy, PulseType::Vacuum]);
        assert!(parse_types("SX").is_err());
    }

    #[test]
    fn defaults_validate() {
        SystemParams::default().validate().unwrap();
        PatternIntensityTable::measured().validate().unwrap();
        let mut p = SystemParams::default();
        p.p_signal = 0.9;
        assert!(matches!(p.validate(), Err(ModelError::NotNormalized { .. })));
        let mut p = SystemParams::default();
        p.mu_decoy = 0.6;
        assert!(matches!(p.validate(), Err(ModelError::IntensityOrder { .. })));
    }

    #[test]
    fn pattern_mu_examples() {
        let p = SystemParams::default();
        let t = PatternIntensityTable::measured();
        use PulseType::*;
        assert_eq!(pattern_mu(Signal, Signal, &p, &t), 0.5);
        assert!(close(pattern_mu(Decoy, Decoy, &p, &t), 0.1636, 1e-15));
        assert_eq!(pattern_mu(Vacuum, Decoy, &p, &t), 0.0);
        // S-row deviations only with the flag on
        assert_eq!(pattern_mu(Signal, Decoy, &p, &t), 0.5);
        let t_on = PatternIntensityTable { s_row_pattern_effect: true, ..t.clone() };
        assert!(close(pattern_mu(Signal, Decoy, &p, &t_on), 0.5105, 1e-15));
        // D row ordered V->D < D->D < S->D
        assert!(pattern_mu(Decoy, Vacuum, &p, &t) < pattern_mu(Decoy, Decoy, &p, &t));
        assert!(pattern_mu(Decoy, Decoy, &p, &t) < pattern_mu(Decoy, Signal, &p, &t));
    }

    #[test]
    fn poisson_examples() {
        assert_eq!(poisson_pmf(0, 0.0).unwrap(), 1.0);
        assert!(close(poisson_pmf(0, 0.5).unwrap(), 0.606_530_659_712_633_4, 1e-15));
        assert!(close(poisson_pmf(2, 0.2).unwrap(), (-0.2f64).exp() * 0.04 / 2.0, 1e-16));
        assert!(close(poisson_pmf(2, 0.2).unwrap(), 0.016_374_615, 1e-9));
        assert!(poisson_pmf(1, -0.1).is_err());
        assert!(poisson_pmf(1, f64::NAN).is_err());
    }

    #[test]
    fn emission_examples() {
        let p = SystemParams::default();
        let t = PatternIntensityTable::measured();
        use PulseType::*;
        assert_eq!(emission_prob_f(Vacuum, 0, &p), 1.0 / 16.0);
        assert!(close(emission_prob_f(Signal, 0, &p), 0.530_714_327, 1e-9));
        assert!(close(emission_prob_f(Decoy, 1, &p), 0.010_234_134, 1e-9));
        assert!(close(emission_prob_ftilde(Signal, Signal, 0, &p, &t), 0.530_714_327, 1e-9));
        assert!(close(emission_prob_ftilde(Decoy, Decoy, 0, &p, &t), 0.053_067_599, 1e-9));
        assert_eq!(emission_prob_ftilde(Vacuum, Signal, 1, &p, &t), 0.0);
    }

    #[test]
    fn truncated_mass_deficit() {
        let p = SystemParams::default();
        let t = PatternIntensityTable::measured();
        for prev in PulseType::ALL {
            let total: f64 = PulseType::ALL
                .iter()
                .flat_map(|&a| (0..=PHOTON_CUTOFF).map(move |n| (a, n)))
                .map(|(a, n)| emission_prob_ftilde(a, prev, n, &p, &t))
                .sum();
            assert!((1.0 - total).abs() < 1e-12, "prev {prev}: {total}");
        }
        for mu in [0.1, 0.5, 1.0] {
            let s: f64 = (0..=PHOTON_CUTOFF).map(|n| poisson(n, mu)).sum();
            assert!(1.0 - s < 1e-12);
        }
    }

    proptest! {
        #[test]
        fn reference_predecessor_is_iid(n in 0u32..12, ds in 0.5f64..1.5, dv in 0.5f64..1.5, ss in 0.5f64..1.5) {
            let p = SystemParams::default();
            let mut t = PatternIntensityTable::measured();
            t.set_ratio(PulseType::Decoy, PulseType::Decoy, ds);
            t.set_ratio(PulseType::Decoy, PulseType::Vacuum, dv);
            t.set_ratio(PulseType::Signal, PulseType::Decoy, ss);
            for a in PulseType::ALL {
                let f = emission_prob_f(a, n, &p);
                prop_assert!((emission_prob_ftilde(a, PulseType::Signal, n, &p, &t) - f).abs() < 1e-12);
            }
            for prev in PulseType::ALL {
                let f = emission_prob_f(PulseType::Signal, n, &p);
                prop_assert!((emission_prob_ftilde(PulseType::Signal, prev, n, &p, &t) - f).abs() < 1e-15);
            }
        }
    }
}
