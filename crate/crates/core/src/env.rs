//! The switching environment shared by both trainers and the evaluator:
//! Phase 1 (free running onto the source attractor with a randomized
//! duration), control steps with the reward, and the policy wrapper that maps
//! a state to a bounded force.

use std::path::Path;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::boa::{featurize, BoaModel};
use crate::dynamics::{advance_control_step, integrate, DuffingParams, IntegratorConfig, SimState};
use crate::error::{Error, Result};
use crate::neural::{policy_forward, DenseNet};
use crate::oracle::{AttractorCatalog, AttractorLabel};

/// Switching direction.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Direction {
    Sa2la,
    La2sa,
}

impl Direction {
    pub const BOTH: [Direction; 2] = [Direction::Sa2la, Direction::La2sa];

    pub fn source(self) -> AttractorLabel {
        match self {
            Direction::Sa2la => AttractorLabel::SA,
            Direction::La2sa => AttractorLabel::LA,
        }
    }

    pub fn target(self) -> AttractorLabel {
        self.source().other()
    }

    pub fn tag(self) -> &'static str {
        match self {
            Direction::Sa2la => "sa2la",
            Direction::La2sa => "la2sa",
        }
    }
}

impl std::str::FromStr for Direction {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "sa2la" => Ok(Direction::Sa2la),
            "la2sa" => Ok(Direction::La2sa),
            _ => Err(format!("unknown direction {s:?} (expected sa2la or la2sa)")),
        }
    }
}

/// Episode timing and reward constants.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EpisodeConfig {
    /// Phase 1 duration before the random extension of up to one period.
    pub t1: f64,
    /// Phase 2 time limit.
    pub t2: f64,
    /// Terminal reward for reaching the target basin.
    pub r_end: f64,
    /// Forcing periods of free running after which a state the classifier
    /// puts in the target basin must still be classified there before the
    /// step counts as reaching it. 0 trusts the instantaneous prediction.
    pub confirm_periods: f64,
}

impl Default for EpisodeConfig {
    fn default() -> Self {
        Self {
            t1: 15.0,
            t2: 20.0,
            r_end: 100.0,
            confirm_periods: 8.0,
        }
    }
}

/// Everything a rollout needs: the model, the classifier standing in for the
/// oracle, and the fixed Phase 1 initial conditions.
#[derive(Debug, Clone)]
pub struct EnvBundle {
    pub params: DuffingParams,
    pub integrator: IntegratorConfig,
    pub episode: EpisodeConfig,
    pub catalog: AttractorCatalog,
    pub boa: BoaModel,
}

impl EnvBundle {
    pub fn control_steps(&self) -> usize {
        (self.episode.t2 / self.integrator.dt_control + 1e-9).floor() as usize
    }

    /// Fixed initial condition `s0` for a given source attractor.
    pub fn initial_state(&self, source: AttractorLabel) -> SimState {
        self.catalog.anchor(source)
    }

    /// Phase 1 duration `t1 + U(0, 2pi/omega)`.
    pub fn phase1_duration(&self, rng: &mut impl Rng) -> f64 {
        self.episode.t1 + rng.random_range(0.0..self.params.forcing_period())
    }

    /// Runs Phase 1 uncontrolled for the given duration and checks that the
    /// end state is classified into the source basin.
    pub fn phase1_for(&self, direction: Direction, duration: f64) -> Result<SimState> {
        let s0 = self.initial_state(direction.source());
        let end = integrate(&s0, 0.0, duration, &self.integrator, &self.params)?;
        let found = self.boa.predict(&end);
        if found != direction.source() {
            return Err(Error::SourceBasin { found });
        }
        Ok(end)
    }

    pub fn phase1(&self, direction: Direction, rng: &mut impl Rng) -> Result<SimState> {
        let d = self.phase1_duration(rng);
        self.phase1_for(direction, d)
    }

    /// Classifier verdict on `s`, confirmed after `confirm_periods` of free
    /// running when that is positive.
    pub fn in_target(&self, s: &SimState, target: AttractorLabel) -> Result<bool> {
        if self.boa.predict(s) != target {
            return Ok(false);
        }
        if self.episode.confirm_periods <= 0.0 {
            return Ok(true);
        }
        let horizon = self.episode.confirm_periods * self.params.forcing_period();
        let later = integrate(s, 0.0, horizon, &self.integrator, &self.params)?;
        Ok(self.boa.predict(&later) == target)
    }

    /// Advances one control step and scores it:
    /// `-|a| dt_control + r_end` if the next state is in the target basin.
    pub fn step(
        &self,
        state: &SimState,
        action: f64,
        target: AttractorLabel,
    ) -> Result<StepOutcome> {
        let next = advance_control_step(state, action, &self.integrator, &self.params)?;
        let reached = self.in_target(&next, target)?;
        Ok(StepOutcome {
            next,
            reward: reward(
                action,
                reached,
                self.integrator.dt_control,
                self.episode.r_end,
            ),
            reached,
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepOutcome {
    pub next: SimState,
    pub reward: f64,
    pub reached: bool,
}

/// Per-step reward: impulse cost plus the terminal bonus.
#[inline]
pub fn reward(action: f64, reached: bool, dt_control: f64, r_end: f64) -> f64 {
    let cost = -action.abs() * dt_control;
    if reached {
        r_end + cost
    } else {
        cost
    }
}

/// A policy network together with its action bound: `a = F pi(s)`.
#[derive(Debug, Clone, PartialEq)]
pub struct Policy {
    pub net: DenseNet,
    pub bound: f64,
}

impl Policy {
    pub fn new(net: DenseNet, bound: f64) -> Self {
        Self { net, bound }
    }

    pub fn features(&self, s: &SimState) -> [f64; 4] {
        featurize(s, crate::boa::FeatureMode::Circular)
    }

    /// Noise-free action, within `[-F, F]`.
    pub fn action(&self, s: &SimState) -> Result<f64> {
        Ok(self.bound * policy_forward(&self.net, &self.features(s))?)
    }

    pub fn load(path: &Path, bound: f64) -> Result<Self> {
        Ok(Self::new(DenseNet::load(path)?, bound))
    }
}
