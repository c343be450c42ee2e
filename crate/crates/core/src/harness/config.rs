use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::design::DesignSettings;
use crate::error::{config_err, Error, Result};
use crate::gp::GpConfig;
use crate::ident::TrainConfig;
use crate::plant::MsdParams;
use crate::signals::{MultisineConfig, TestSignalSpec};
use crate::spacefill::RegionOfInterest;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Profile {
    /// 10 realizations at N = 512; sized for one workstation core.
    Desk,
    /// 50 realizations at N = 1024 with 2^16-sample test sets.
    Paper,
}

impl std::str::FromStr for Profile {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "desk" => Ok(Profile::Desk),
            "paper" => Ok(Profile::Paper),
            other => config_err(format!("unknown profile '{other}' (expected desk or paper)")),
        }
    }
}

/// Model the signals are designed on.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DesignModelChoice {
    Linear,
    Nonlinear,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct StudyConfig {
    pub realizations: usize,
    pub master_seed: u64,
    pub signal: MultisineConfig,
    pub plant: MsdParams,
    pub gp: GpConfig,
    pub region: RegionOfInterest,
    pub anchor_counts: Vec<usize>,
    /// Grid used to approximate the covering radius.
    pub eval_counts: Vec<usize>,
    pub design_model: DesignModelChoice,
    /// Each realization linearizes at a position drawn uniformly from
    /// `±linearization_jitter` (m); zero linearizes at the origin.
    pub linearization_jitter: f64,
    pub initial_amplitude: f64,
    pub x0: [f64; 2],
    pub classical: DesignSettings,
    pub least_costly: DesignSettings,
    pub train: TrainConfig,
    pub tests: Vec<TestSignalSpec>,
    pub n_test: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub output_dir: Option<PathBuf>,
}

impl Default for StudyConfig {
    fn default() -> Self {
        Self::profile(Profile::Desk)
    }
}

fn default_tests() -> Vec<TestSignalSpec> {
    vec![
        TestSignalSpec::Multisine { amplitude: 8.0, band: None, seed: None },
        TestSignalSpec::Multisine { amplitude: 4.0, band: None, seed: None },
        TestSignalSpec::LogSweep { amplitude: 6.0, f_min: 1.0, f_max: 10.0, duration: None },
        TestSignalSpec::WhiteUniform { variance: 19.0, seed: None },
    ]
}

impl StudyConfig {
    pub fn profile(profile: Profile) -> Self {
        let base = Self {
            realizations: 50,
            master_seed: 2024,
            signal: MultisineConfig::default(),
            plant: MsdParams::default(),
            gp: GpConfig::default(),
            region: RegionOfInterest::default(),
            anchor_counts: vec![5, 5],
            eval_counts: vec![101, 101],
            design_model: DesignModelChoice::Linear,
            linearization_jitter: 0.02,
            initial_amplitude: 8.0,
            x0: [0.0, 0.0],
            classical: DesignSettings::default(),
            least_costly: DesignSettings::default(),
            train: TrainConfig::default(),
            tests: default_tests(),
            n_test: 1 << 16,
            output_dir: None,
        };
        match profile {
            Profile::Paper => base,
            Profile::Desk => {
                let mut c = Self {
                    realizations: 10,
                    signal: MultisineConfig::desk(),
                    eval_counts: vec![61, 61],
                    n_test: 1 << 13,
                    ..base
                };
                c.classical.inner.max_iterations = 60;
                c.classical.max_evaluations = 6_000;
                c.least_costly.inner.max_iterations = 60;
                c.least_costly.max_evaluations = 10_000;
                c
            }
        }
    }

    /// Profile defaults overridden by the keys of a JSON document; nested
    /// objects merge key by key, arrays and scalars replace.
    pub fn from_json_overrides(profile: Profile, overrides: &Value) -> Result<Self> {
        let mut base = serde_json::to_value(Self::profile(profile))?;
        if !overrides.is_object() {
            return config_err("study configuration must be a JSON object");
        }
        merge(&mut base, overrides);
        let cfg: Self = serde_json::from_value(base).map_err(|e| Error::Config(format!("study configuration: {e}")))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn from_file(profile: Profile, path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        let v: Value = serde_json::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        Self::from_json_overrides(profile, &v)
    }

    pub fn validate(&self) -> Result<()> {
        if self.realizations == 0 {
            return config_err("at least one realization is required");
        }
        self.signal.validate()?;
        self.plant.validate()?;
        self.gp.validate()?;
        self.region.validate()?;
        self.classical.validate()?;
        self.least_costly.validate()?;
        self.train.validate()?;
        if self.anchor_counts.len() != self.region.dim() || self.eval_counts.len() != self.region.dim() {
            return config_err("anchor and evaluation grid counts must match the region dimension");
        }
        if self.anchor_counts.iter().chain(&self.eval_counts).any(|&c| c < 2) {
            return config_err("grids need at least two points per dimension");
        }
        if !(self.linearization_jitter >= 0.0 && self.linearization_jitter.is_finite()) {
            return config_err("linearization jitter must be non-negative");
        }
        let b = &self.classical.bounds;
        if !(self.initial_amplitude >= b.min && self.initial_amplitude <= b.max) {
            return config_err(format!("initial amplitude {} outside [{}, {}]", self.initial_amplitude, b.min, b.max));
        }
        if self.x0.iter().any(|v| !v.is_finite()) {
            return config_err("initial state must be finite");
        }
        if self.tests.is_empty() {
            return config_err("at least one test signal is required");
        }
        for t in &self.tests {
            t.validate()?;
        }
        if self.n_test < 16 {
            return config_err("test signals need at least 16 samples");
        }
        Ok(())
    }
}

fn merge(base: &mut Value, over: &Value) {
    match (base, over) {
        (Value::Object(b), Value::Object(o)) => {
            for (k, v) in o {
                match b.get_mut(k) {
                    Some(slot) if slot.is_object() && v.is_object() => merge(slot, v),
                    _ => {
                        b.insert(k.clone(), v.clone());
                    }
                }
            }
        }
        (b, o) => *b = o.clone(),
    }
}
