//! End-to-end Monte-Carlo run: emit, detect, sift, split and distill.
//!
//! The train is processed chunk by chunk in parallel; only the pulse types
//! are held for the whole train (pattern sifting needs both neighbours), and
//! per-chunk tallies are summed in chunk order, so results are reproducible
//! for a given seed regardless of thread count.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::channel::{detect_chunk, DetectionModel};
use crate::error::{KeyError, ModelError};
use crate::finite_key::{
    akd_total, key_length, BranchCounts, BranchKey, DistillParams, IntensityIntervals, IntervalMethod,
    SecurityBudget,
};
use crate::model::{Basis, PatternIntensityTable, PulseType, SystemParams};
use crate::rng::{derive_seed, stage, CHUNK};
use crate::sifting::{effective_probabilities, force_naive_pattern, is_keep, ps_keep, SiftConfig, SiftReport};
use crate::source::{FluctuationModel, PulseRecord, Transmitter};

/// Detection statistics per pulse type, indexed by [`PulseType::index`].
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct TypeTally {
    pub emitted: [u64; 3],
    /// Bob recorded the key basis.
    pub bob_key_basis: [u64; 3],
    /// Alice and Bob both used the key basis.
    pub sifted_key: [u64; 3],
    pub sifted_key_errors: [u64; 3],
}

impl TypeTally {
    fn record(&mut self, p: &PulseRecord) {
        let a = p.pulse_type.index();
        self.emitted[a] += 1;
        if p.basis_b == Some(Basis::Z) {
            self.bob_key_basis[a] += 1;
            if p.basis_a == Basis::Z {
                self.sifted_key[a] += 1;
                self.sifted_key_errors[a] += u64::from(p.error);
            }
        }
    }

    fn add(&mut self, o: &TypeTally) {
        for a in 0..3 {
            self.emitted[a] += o.emitted[a];
            self.bob_key_basis[a] += o.bob_key_basis[a];
            self.sifted_key[a] += o.sifted_key[a];
            self.sifted_key_errors[a] += o.sifted_key_errors[a];
        }
    }
}

#[derive(Debug, Clone, Copy, Default)]
struct Tally {
    n_ps: u64,
    n_is: u64,
    n_even: u64,
    n_odd: u64,
    all: TypeTally,
    pattern_sifted: TypeTally,
    // [branch][basis][type]; branch 0 = even
    n: [[[u64; 3]; 2]; 2],
    m: [[[u64; 3]; 2]; 2],
}

impl Tally {
    fn add(mut self, o: Tally) -> Tally {
        self.n_ps += o.n_ps;
        self.n_is += o.n_is;
        self.n_even += o.n_even;
        self.n_odd += o.n_odd;
        self.all.add(&o.all);
        self.pattern_sifted.add(&o.pattern_sifted);
        for b in 0..2 {
            for x in 0..2 {
                for a in 0..3 {
                    self.n[b][x][a] += o.n[b][x][a];
                    self.m[b][x][a] += o.m[b][x][a];
                }
            }
        }
        self
    }

    fn branch(&self, b: usize, size: u64) -> BranchCounts {
        let mut c = BranchCounts { n_branch: size as f64, ..BranchCounts::default() };
        for x in 0..2 {
            for a in 0..3 {
                c.n[x][a] = self.n[b][x][a] as f64;
                c.m[x][a] = self.m[b][x][a] as f64;
            }
        }
        c
    }
}

/// Monte-Carlo run settings.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MonteCarloConfig {
    pub pulses: usize,
    pub length_km: f64,
    pub seed: u64,
    pub sift: SiftConfig,
    pub fluctuation: Option<FluctuationModel>,
    pub method: IntervalMethod,
}

/// Everything measured in one run.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MonteCarloReport {
    pub pulses: usize,
    pub length_km: f64,
    pub seed: u64,
    pub t: f64,
    pub sift: SiftReport,
    /// All emitted pulses.
    pub all: TypeTally,
    /// Pulses kept by pattern sifting, before intensity sifting.
    pub pattern_sifted: TypeTally,
    pub even_counts: BranchCounts,
    pub odd_counts: BranchCounts,
    pub even: BranchKey,
    pub odd: BranchKey,
    pub total_bits: f64,
    pub security: f64,
}

fn transmitter(config: &MonteCarloConfig, params: &SystemParams, table: &PatternIntensityTable) -> Transmitter {
    let fluct = config.fluctuation.unwrap_or_else(|| FluctuationModel::from_table(table));
    Transmitter::new(params.clone(), table.clone(), fluct)
}

fn train_types(tx: &Transmitter, config: &MonteCarloConfig) -> Vec<PulseType> {
    let mut types = tx.types(config.pulses, config.seed);
    if config.sift.naive_mode {
        force_naive_pattern(&mut types);
    }
    types
}

/// Fully annotated pulse records of a run (for dumps and small runs).
pub fn simulate_pulses(
    config: &MonteCarloConfig,
    params: &SystemParams,
    table: &PatternIntensityTable,
) -> Result<Vec<PulseRecord>, KeyError> {
    let tx = transmitter(config, params, table);
    let model = DetectionModel::new(config.length_km, params)?;
    let types = train_types(&tx, config);
    let det_seed = derive_seed(config.seed, stage::DETECTION);
    let chunks = types.len().div_ceil(CHUNK);
    Ok((0..chunks)
        .into_par_iter()
        .map(|c| {
            let mut recs = tx.emit_chunk(&types, c, config.seed);
            detect_chunk(&mut recs, &model, det_seed);
            recs
        })
        .flatten_iter()
        .collect())
}

/// Runs the full sampled pipeline.
pub fn run_monte_carlo(
    config: &MonteCarloConfig,
    params: &SystemParams,
    table: &PatternIntensityTable,
) -> Result<MonteCarloReport, KeyError> {
    params.validate()?;
    table.validate()?;
    if config.pulses == 0 {
        return Err(KeyError::Model(ModelError::OutOfRange { name: "pulses", value: 0.0 }));
    }
    if !(config.sift.t > 0.0) {
        return Err(KeyError::BadWindow(config.sift.t));
    }
    let tx = transmitter(config, params, table);
    let model = DetectionModel::new(config.length_km, params)?;
    let types = train_types(&tx, config);
    let det_seed = derive_seed(config.seed, stage::DETECTION);
    let t = config.sift.t;
    let naive = config.sift.naive_mode;
    let chunks = types.len().div_ceil(CHUNK);

    let tallies: Vec<Tally> = (0..chunks)
        .into_par_iter()
        .map(|c| {
            let mut recs = tx.emit_chunk(&types, c, config.seed);
            detect_chunk(&mut recs, &model, det_seed);
            let mut tally = Tally::default();
            for p in &recs {
                tally.all.record(p);
                let i = p.index as usize;
                let kept = if naive { i % 2 == 0 } else { ps_keep(&types, i) };
                if !kept {
                    continue;
                }
                tally.n_ps += 1;
                tally.pattern_sifted.record(p);
                if !is_keep(p.pulse_type, p.mu_realized, t, params, table) {
                    continue;
                }
                tally.n_is += 1;
                let branch = if i % 2 == 0 {
                    tally.n_even += 1;
                    0
                } else {
                    tally.n_odd += 1;
                    1
                };
                if let Some(b) = p.basis_b {
                    if b == p.basis_a {
                        let a = p.pulse_type.index();
                        tally.n[branch][b.index()][a] += 1;
                        tally.m[branch][b.index()][a] += u64::from(p.error);
                    }
                }
            }
            tally
        })
        .collect();
    let total = tallies.into_iter().fold(Tally::default(), Tally::add);

    let even_counts = total.branch(0, total.n_even);
    let odd_counts = total.branch(1, total.n_odd);
    let iv = IntensityIntervals::from_window(t, params, table);
    let d = DistillParams::new(effective_probabilities(t, params, table), params, config.method);
    let even = key_length(&even_counts, &iv, &d);
    let odd = key_length(&odd_counts, &iv, &d);
    let (total_bits, security) = akd_total(&even, &odd, &SecurityBudget::from_params(params));

    Ok(MonteCarloReport {
        pulses: config.pulses,
        length_km: config.length_km,
        seed: config.seed,
        t,
        sift: SiftReport::from_counts(config.pulses as u64, total.n_ps, total.n_is, total.n_even, total.n_odd),
        all: total.all,
        pattern_sifted: total.pattern_sifted,
        even_counts,
        odd_counts,
        even,
        odd,
        total_bits,
        security,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sifting::sift;

    fn config(pulses: usize, naive: bool) -> MonteCarloConfig {
        MonteCarloConfig {
            pulses,
            length_km: 0.0,
            seed: 99,
            sift: SiftConfig { t: 0.6, naive_mode: naive },
            fluctuation: None,
            method: IntervalMethod::WorstCase,
        }
    }

    #[test]
    fn streaming_matches_materialized_sifting() {
        let p = SystemParams::default();
        let table = PatternIntensityTable::measured();
        let cfg = config(3 * CHUNK + 11, false);
        let report = run_monte_carlo(&cfg, &p, &table).unwrap();
        let pulses = simulate_pulses(&cfg, &p, &table).unwrap();
        let out = sift(&pulses, &cfg.sift, &p, &table).unwrap();
        assert_eq!(report.sift, SiftReport::new(pulses.len(), &out));

        let even_z: u64 = out
            .branch_even
            .iter()
            .filter(|&&i| pulses[i - 1].basis_a == Basis::Z && pulses[i - 1].basis_b == Some(Basis::Z))
            .count() as u64;
        assert_eq!(report.even_counts.detections(Basis::Z), even_z as f64);
        assert!(report.even_counts.is_consistent() && report.odd_counts.is_consistent());
    }

    #[test]
    fn deterministic() {
        let p = SystemParams::default();
        let table = PatternIntensityTable::measured();
        let cfg = config(200_000, false);
        let a = run_monte_carlo(&cfg, &p, &table).unwrap();
        let b = run_monte_carlo(&cfg, &p, &table).unwrap();
        assert_eq!(serde_json::to_string(&a).unwrap(), serde_json::to_string(&b).unwrap());
    }

    #[test]
    fn naive_mode_keeps_half() {
        let p = SystemParams::default();
        let table = PatternIntensityTable::measured();
        let r = run_monte_carlo(&config(100_000, true), &p, &table).unwrap();
        assert_eq!(r.sift.n_ps, 50_000);
        assert_eq!(r.sift.n_odd, 0);
    }

    #[test]
    fn rejects_bad_input() {
        let p = SystemParams::default();
        let table = PatternIntensityTable::measured();
        assert!(run_monte_carlo(&config(0, false), &p, &table).is_err());
        let mut cfg = config(10, false);
        cfg.length_km = -1.0;
        assert!(run_monte_carlo(&cfg, &p, &table).is_err());
    }
}
