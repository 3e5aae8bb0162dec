use std::path::PathBuf;

use anyhow::{bail, ensure, Context, Result};
use pattern_qkd::audit::AuditConfig;
use pattern_qkd::finite_key::IntervalMethod;
use pattern_qkd::sifting::SiftConfig;
use pattern_qkd::trace::TraceConfig;
use pattern_qkd::{PatternIntensityTable, SystemParams};
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "kebab-case")]
pub enum Mode {
    #[default]
    Sweep,
    MonteCarlo,
    Audit,
    Trace,
}

/// Trace-lab run settings.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TraceRun {
    /// Random pulses synthesized when no input trace is given.
    pub pulses: usize,
    /// Slots of the synthesized optical trace written as CSV.
    pub dump_slots: usize,
    /// External `time_s,value` trace to analyze instead.
    pub input: Option<PathBuf>,
    /// Pulse types of the external trace, one S/D/V symbol per slot.
    pub types: Option<PathBuf>,
    pub model: TraceConfig,
}

impl Default for TraceRun {
    fn default() -> Self {
        TraceRun { pulses: 1_200_000, dump_slots: 64, input: None, types: None, model: TraceConfig::default() }
    }
}

/// Everything one invocation needs. Scalars come first so the TOML echo
/// keeps them above the tables.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub mode: Mode,
    pub seed: u64,
    pub pulses: usize,
    /// Fiber length of a Monte-Carlo run.
    pub length_km: f64,
    pub distance_grid: Vec<f64>,
    pub t_grid: Vec<f64>,
    pub method: IntervalMethod,
    pub out: Option<PathBuf>,
    pub system: SystemParams,
    pub table: PatternIntensityTable,
    pub sift: SiftConfig,
    pub audit: AuditConfig,
    pub trace: TraceRun,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            mode: Mode::default(),
            seed: 1,
            pulses: 10_000_000,
            length_km: 50.0,
            distance_grid: (0..16).map(|k| 10.0 * k as f64).collect(),
            t_grid: vec![0.2, 0.4, 0.6, 0.8, 1.0],
            method: IntervalMethod::default(),
            out: None,
            system: SystemParams::default(),
            table: PatternIntensityTable::default(),
            sift: SiftConfig::default(),
            audit: AuditConfig::default(),
            trace: TraceRun::default(),
        }
    }
}

impl RunConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        Ok(toml::from_str(text)?)
    }

    pub fn to_toml(&self) -> Result<String> {
        Ok(toml::to_string(self)?)
    }

    pub fn validate(&self) -> Result<()> {
        self.system.validate().context("system parameters")?;
        self.table.validate().context("pattern intensity table")?;
        self.sift.validate().context("sifting")?;
        match self.mode {
            Mode::Sweep => {
                ensure!(!self.distance_grid.is_empty(), "distance grid is empty");
                ensure!(!self.t_grid.is_empty(), "t grid is empty");
                if let Some(l) = self.distance_grid.iter().find(|l| !(**l >= 0.0 && l.is_finite())) {
                    bail!("distance {l} km is not a non-negative length");
                }
                if let Some(t) = self.t_grid.iter().find(|t| !(**t > 0.0 && t.is_finite())) {
                    bail!("window factor t = {t} must be positive");
                }
            }
            Mode::MonteCarlo => {
                ensure!(self.pulses >= 1, "need at least one pulse");
                ensure!(self.length_km >= 0.0 && self.length_km.is_finite(), "invalid length {}", self.length_km);
            }
            Mode::Audit => {}
            Mode::Trace => {
                self.trace.model.validate().context("trace model")?;
                ensure!(
                    self.trace.input.is_some() == self.trace.types.is_some(),
                    "an input trace needs a matching types file and vice versa"
                );
                ensure!(self.trace.input.is_some() || self.trace.pulses >= 2, "need at least two pulses");
            }
        }
        Ok(())
    }
}

/// Parses `a,b,c` or `start:stop:step` (inclusive).
pub fn parse_grid(s: &str) -> Result<Vec<f64>> {
    let s = s.trim();
    if s.contains(':') {
        let parts: Vec<f64> = s.split(':').map(|x| x.trim().parse::<f64>()).collect::<Result<_, _>>()?;
        let [start, stop, step] = parts[..] else { bail!("range must be start:stop:step, got {s:?}") };
        ensure!(step > 0.0 && stop >= start, "range {s:?} is empty or has a non-positive step");
        let n = ((stop - start) / step + 1e-9).floor() as usize;
        // rounding keeps 0.2 * 3 at 0.6
        return Ok((0..=n).map(|k| ((start + k as f64 * step) * 1e9).round() / 1e9).collect());
    }
    let grid: Vec<f64> = s.split(',').map(|x| x.trim().parse::<f64>()).collect::<Result<_, _>>()?;
    Ok(grid)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn toml_round_trip() {
        let mut c = RunConfig::default();
        c.trace.model.bandwidth_hz = f64::INFINITY;
        c.out = Some("x/y".into());
        c.system.eps_cor = 2f64.powi(-127);
        let text = c.to_toml().unwrap();
        assert_eq!(RunConfig::from_toml(&text).unwrap(), c);
        assert_eq!(RunConfig::from_toml(&RunConfig::default().to_toml().unwrap()).unwrap(), RunConfig::default());
    }

    #[test]
    fn partial_file_keeps_defaults() {
        let c = RunConfig::from_toml("mode = \"audit\"\n[system]\nmu_signal = 0.6\n").unwrap();
        assert_eq!(c.mode, Mode::Audit);
        assert_eq!(c.system.mu_signal, 0.6);
        assert_eq!(c.system.mu_decoy, SystemParams::default().mu_decoy);
        assert!(RunConfig::from_toml("bogus = 1").is_err());
    }

    #[test]
    fn grids() {
        assert_eq!(parse_grid("0:150:10").unwrap().len(), 16);
        assert_eq!(parse_grid("0.2:1.0:0.2").unwrap(), vec![0.2, 0.4, 0.6, 0.8, 1.0]);
        assert_eq!(parse_grid("1, 2.5").unwrap(), vec![1.0, 2.5]);
        assert!(parse_grid("1:0:1").is_err());
        assert!(parse_grid("a").is_err());
    }

    #[test]
    fn validation() {
        let mut c = RunConfig { distance_grid: vec![], ..RunConfig::default() };
        assert!(c.validate().is_err());
        c.distance_grid = vec![0.0];
        c.t_grid = vec![0.0];
        assert!(c.validate().is_err());
        let c = RunConfig { mode: Mode::MonteCarlo, pulses: 0, ..RunConfig::default() };
        assert!(c.validate().is_err());
        assert!(RunConfig::default().validate().is_ok());
    }
}
