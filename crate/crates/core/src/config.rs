//! Run configuration: one TOML file whose sections mirror the module
//! configs. Values are layered as defaults, then the selected profile, then
//! the file, then command-line overrides.

use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::boa::BoaConfig;
use crate::cem::CemConfig;
use crate::ddpg::DdpgConfig;
use crate::dynamics::{DuffingParams, IntegratorConfig};
use crate::env::{Direction, EpisodeConfig};
use crate::error::{Error, Result};
use crate::oracle::OracleConfig;
use crate::sweep::SweepConfig;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalConfig {
    /// Greedy rollouts per evaluation.
    pub rollouts: usize,
    /// Fraction of successful rollouts re-checked with the oracle.
    pub audit_fraction: f64,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self {
            rollouts: 100,
            audit_fraction: 0.1,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    /// Run name; artifacts go to `<output_dir>/<name>/`.
    pub name: String,
    pub output_dir: PathBuf,
    /// Master seed from which every random stream is derived.
    pub seed: u64,
    /// Worker threads; `None` uses all cores.
    pub workers: Option<usize>,
    pub duffing: DuffingParams,
    pub integrator: IntegratorConfig,
    pub oracle: OracleConfig,
    pub boa: BoaConfig,
    pub episode: EpisodeConfig,
    pub cem: CemConfig,
    pub ddpg: DdpgConfig,
    pub eval: EvalConfig,
    pub sweep: SweepConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            name: "default".into(),
            output_dir: PathBuf::from("runs"),
            seed: 1,
            workers: None,
            duffing: DuffingParams::default(),
            integrator: IntegratorConfig::default(),
            oracle: OracleConfig::default(),
            boa: BoaConfig::default(),
            episode: EpisodeConfig::default(),
            cem: CemConfig::default(),
            ddpg: DdpgConfig {
                episodes: 100,
                ..DdpgConfig::default()
            },
            eval: EvalConfig::default(),
            sweep: SweepConfig::default(),
        }
    }
}

/// Named presets applied on top of the defaults.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Profile {
    /// Standard hyperparameters with a 20^3 classifier grid.
    #[default]
    Default,
    /// Full-scale settings: 50^3 grid, 100 episodes per bound.
    Paper,
    /// Acceptance-scale settings: 20^3 grid, CEM 100 and DDPG 200 episodes,
    /// training stops once an evaluation reaches 0.9 success.
    Ci,
}

impl fmt::Display for Profile {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Profile::Default => "default",
            Profile::Paper => "paper",
            Profile::Ci => "ci",
        })
    }
}

impl FromStr for Profile {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "default" => Ok(Profile::Default),
            "paper" => Ok(Profile::Paper),
            "ci" => Ok(Profile::Ci),
            _ => Err(Error::Config(format!(
                "unknown profile '{s}' (expected default, paper or ci)"
            ))),
        }
    }
}

impl RunConfig {
    pub fn for_profile(profile: Profile) -> Self {
        let mut cfg = Self::default();
        match profile {
            Profile::Default => {}
            Profile::Paper => {
                cfg.boa.resolution = 50;
                cfg.cem.episodes = 100;
                cfg.ddpg.episodes = 100;
            }
            Profile::Ci => {
                cfg.boa.resolution = 20;
                cfg.cem.episodes = 100;
                cfg.ddpg.episodes = 200;
                cfg.cem.stop_at_success = Some(0.9);
                cfg.ddpg.stop_at_success = Some(0.9);
            }
        }
        cfg
    }

    /// Parses `text` on top of the given profile. Unknown keys are errors.
    pub fn from_toml(text: &str, profile: Profile) -> std::result::Result<Self, String> {
        let user: toml::Table = toml::from_str(text).map_err(|e| e.to_string())?;
        let base = toml::Table::try_from(Self::for_profile(profile)).map_err(|e| e.to_string())?;
        let mut merged = base;
        merge(&mut merged, user);
        let cfg: Self = toml::Value::Table(merged)
            .try_into()
            .map_err(|e: toml::de::Error| e.to_string())?;
        Ok(cfg)
    }

    pub fn load(path: &Path, profile: Profile) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let cfg = Self::from_toml(&text, profile).map_err(|m| Error::parse(path, m))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string_pretty(self).expect("config serializes")
    }

    pub fn validate(&self) -> Result<()> {
        if self.name.is_empty() || self.name.contains(['/', '\\']) {
            return Err(Error::Config(
                "name must be a non-empty single path component".into(),
            ));
        }
        if self.workers == Some(0) {
            return Err(Error::Config("workers must be positive".into()));
        }
        self.duffing.validate()?;
        self.integrator.validate()?;
        self.oracle.validate()?;
        if self.boa.resolution < 2 {
            return Err(Error::Config("boa.resolution must be at least 2".into()));
        }
        if !(0.0..1.0).contains(&self.boa.holdout) {
            return Err(Error::Config("boa.holdout must be in [0, 1)".into()));
        }
        if !(self.episode.t1 >= 0.0 && self.episode.t2 > 0.0) {
            return Err(Error::Config(
                "episode.t1 must be >= 0 and episode.t2 positive".into(),
            ));
        }
        self.cem.validate()?;
        self.ddpg.validate()?;
        if self.eval.rollouts == 0 || !(0.0..=1.0).contains(&self.eval.audit_fraction) {
            return Err(Error::Config(
                "eval.rollouts must be positive and eval.audit_fraction in [0, 1]".into(),
            ));
        }
        self.sweep.validate()
    }

    pub fn layout(&self) -> RunLayout {
        RunLayout {
            root: self.output_dir.join(&self.name),
        }
    }
}

fn merge(base: &mut toml::Table, over: toml::Table) {
    for (k, v) in over {
        match (base.get_mut(&k), v) {
            (Some(toml::Value::Table(b)), toml::Value::Table(o)) => merge(b, o),
            (_, v) => {
                base.insert(k, v);
            }
        }
    }
}

/// Artifact paths under `runs/<name>/`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RunLayout {
    pub root: PathBuf,
}

impl RunLayout {
    pub fn catalog(&self) -> PathBuf {
        self.root.join("catalog").join("catalog.txt")
    }

    pub fn dataset(&self) -> PathBuf {
        self.root.join("boa").join("dataset.csv")
    }

    pub fn dataset_progress(&self) -> PathBuf {
        self.root.join("boa").join("labels.progress")
    }

    pub fn boa_model(&self) -> PathBuf {
        self.root.join("boa").join("model.txt")
    }

    pub fn policy(&self, algorithm: &str, direction: Direction, bound: f64) -> PathBuf {
        self.root
            .join("policies")
            .join(format!("{algorithm}_{}_F{bound}.net", direction.tag()))
    }

    pub fn critic(&self, direction: Direction, bound: f64) -> PathBuf {
        self.root
            .join("policies")
            .join(format!("ddpg_{}_F{bound}.critic.net", direction.tag()))
    }

    pub fn curve(&self, stem: &str) -> PathBuf {
        self.root.join("curves").join(format!("{stem}.csv"))
    }

    pub fn rollout(&self, stem: &str) -> PathBuf {
        self.root.join("rollouts").join(format!("{stem}.csv"))
    }

    pub fn effective_config(&self) -> PathBuf {
        self.root.join("config.effective")
    }

    pub fn figure_dir(&self, figure: &str) -> PathBuf {
        self.root.join(figure)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_file_gives_profile_defaults() {
        for p in [Profile::Default, Profile::Paper, Profile::Ci] {
            assert_eq!(
                RunConfig::from_toml("", p).unwrap(),
                RunConfig::for_profile(p)
            );
        }
    }

    #[test]
    fn file_overrides_profile() {
        let cfg = RunConfig::from_toml(
            "seed = 9\n[boa]\nresolution = 8\n[ddpg]\nnoise = \"gaussian\"\n",
            Profile::Paper,
        )
        .unwrap();
        assert_eq!(cfg.seed, 9);
        assert_eq!(cfg.boa.resolution, 8);
        assert_eq!(cfg.boa.c_grid, vec![1.0, 10.0, 100.0]);
        assert_eq!(cfg.ddpg.noise, crate::eval::NoiseKind::Gaussian);
        assert_eq!(cfg.cem.episodes, 100);
    }

    #[test]
    fn unknown_keys_rejected() {
        assert!(RunConfig::from_toml("sed = 3\n", Profile::Default).is_err());
        assert!(RunConfig::from_toml("[duffing]\nomgea = 1.0\n", Profile::Default).is_err());
        assert!(RunConfig::from_toml("[nonsense]\n", Profile::Default).is_err());
    }

    #[test]
    fn effective_config_round_trips() {
        let mut cfg = RunConfig::for_profile(Profile::Ci);
        cfg.workers = Some(3);
        cfg.sweep.episodes_per_bound = Some(7);
        let text = cfg.to_toml();
        assert_eq!(RunConfig::from_toml(&text, Profile::Default).unwrap(), cfg);
    }

    #[test]
    fn paper_defaults() {
        let c = RunConfig::default();
        assert_eq!(c.episode.t1, 15.0);
        assert_eq!(c.episode.t2, 20.0);
        assert_eq!(c.episode.r_end, 100.0);
        assert_eq!(c.cem.samples, 30);
        assert_eq!(c.cem.elite, 0.8);
        assert_eq!(c.ddpg.gamma, 0.9);
        assert_eq!(c.ddpg.tau, 0.1);
        assert_eq!(c.ddpg.minibatch, 64);
        assert_eq!(c.ddpg.buffer_capacity, 1_000_000);
        assert!(c.validate().is_ok());
    }
}
