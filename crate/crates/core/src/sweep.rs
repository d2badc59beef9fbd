//! Warm-started action-bound sweep: train at the loosest bound from scratch,
//! then initialize every tighter bound from the previous bound's policy.

use std::fmt;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::cem::{self, CemConfig};
use crate::ddpg::{self, DdpgAgent, DdpgConfig};
use crate::env::{Direction, EnvBundle, Policy};
use crate::error::{Error, Result};
use crate::eval::{evaluate, CurveRecord, EvalReport};
use crate::seed::{self, Stream};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Algorithm {
    Cem,
    Ddpg,
}

impl Algorithm {
    pub const BOTH: [Algorithm; 2] = [Algorithm::Cem, Algorithm::Ddpg];

    pub fn tag(self) -> &'static str {
        match self {
            Algorithm::Cem => "cem",
            Algorithm::Ddpg => "ddpg",
        }
    }
}

impl fmt::Display for Algorithm {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.tag())
    }
}

impl FromStr for Algorithm {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "cem" => Ok(Algorithm::Cem),
            "ddpg" => Ok(Algorithm::Ddpg),
            _ => Err(Error::Config(format!(
                "unknown algorithm '{s}' (expected cem or ddpg)"
            ))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SweepConfig {
    /// Strictly decreasing action bounds.
    pub bounds: Vec<f64>,
    /// Episodes per bound; `None` uses the algorithm's own `episodes`.
    pub episodes_per_bound: Option<usize>,
    /// Switching direction of the learning-curve sweep.
    pub direction: Direction,
}

impl Default for SweepConfig {
    fn default() -> Self {
        Self {
            bounds: vec![4.0, 2.0, 1.0],
            episodes_per_bound: None,
            direction: Direction::Sa2la,
        }
    }
}

impl SweepConfig {
    pub fn validate(&self) -> Result<()> {
        if self.bounds.is_empty() {
            return Err(Error::Config("sweep.bounds must not be empty".into()));
        }
        if self.bounds.iter().any(|b| !(*b > 0.0)) {
            return Err(Error::Config("sweep.bounds must be positive".into()));
        }
        if self.bounds.windows(2).any(|w| w[1] >= w[0]) {
            return Err(Error::Config(
                "sweep.bounds must be strictly decreasing".into(),
            ));
        }
        Ok(())
    }
}

/// Curve row of a sweep, with episode and sample counts running across
/// all stages.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SweepCurveRecord {
    pub bound: f64,
    pub record: CurveRecord,
}

pub const SWEEP_CURVE_HEADER: &str =
    "bound,episode,samples_total,success_rate,reward_mean,reward_std";

pub fn write_sweep_curve(path: &Path, curve: &[SweepCurveRecord]) -> Result<()> {
    let mut out = String::from(SWEEP_CURVE_HEADER);
    out.push('\n');
    for c in curve {
        let r = &c.record;
        out.push_str(&format!(
            "{},{},{},{},{},{}\n",
            c.bound, r.episode, r.samples_total, r.success_rate, r.reward_mean, r.reward_std
        ));
    }
    std::fs::write(path, out).map_err(|e| Error::io(path, e))
}

#[derive(Debug, Clone)]
pub struct StageResult {
    pub bound: f64,
    pub episodes_run: usize,
    pub policy: Policy,
    /// Evaluation of the policy as it entered the stage (episode 0).
    pub initial_report: EvalReport,
    /// Evaluation at the end of the stage.
    pub final_report: EvalReport,
}

#[derive(Debug, Clone)]
pub struct SweepOutcome {
    pub stages: Vec<StageResult>,
    pub curve: Vec<SweepCurveRecord>,
}

/// Trainer settings for both algorithms; the sweep overrides `bound` and,
/// when configured, `episodes`.
#[derive(Debug, Clone, Default)]
pub struct Trainers {
    pub cem: CemConfig,
    pub ddpg: DdpgConfig,
}

#[allow(clippy::large_enum_variant)]
enum Learner {
    Cem(Policy),
    Ddpg(DdpgAgent),
}

impl Learner {
    fn policy(&self) -> Policy {
        match self {
            Learner::Cem(p) => p.clone(),
            Learner::Ddpg(a) => a.policy(),
        }
    }

    fn rebound(&self, bound: f64) -> Learner {
        match self {
            Learner::Cem(p) => Learner::Cem(Policy::new(p.net.clone(), bound)),
            Learner::Ddpg(a) => Learner::Ddpg(a.warm_start(bound)),
        }
    }
}

/// Runs the sweep. `on_stage_episode` receives `(stage index, bound, record,
/// policy)` after every evaluated episode, e.g. for checkpointing.
pub fn sweep_bounds(
    algorithm: Algorithm,
    sweep: &SweepConfig,
    trainers: &Trainers,
    env: &EnvBundle,
    direction: Direction,
    master_seed: u64,
    mut on_stage_episode: impl FnMut(usize, f64, &CurveRecord, &Policy) -> Result<()>,
) -> Result<SweepOutcome> {
    sweep.validate()?;
    let mut stages = Vec::with_capacity(sweep.bounds.len());
    let mut curve = Vec::new();
    let (mut episode_offset, mut sample_offset) = (0, 0);
    let mut learner: Option<Learner> = None;

    for (stage, &bound) in sweep.bounds.iter().enumerate() {
        let stage_id = stage as u64;
        let start = match &learner {
            None => match algorithm {
                Algorithm::Cem => {
                    let cfg = CemConfig {
                        bound,
                        ..trainers.cem.clone()
                    };
                    Learner::Cem(cem::initial_policy(&cfg, master_seed, stage_id)?)
                }
                Algorithm::Ddpg => {
                    let cfg = DdpgConfig {
                        bound,
                        ..trainers.ddpg.clone()
                    };
                    Learner::Ddpg(ddpg::initial_agent(&cfg, master_seed, stage_id)?)
                }
            },
            Some(prev) => prev.rebound(bound),
        };
        let eval_seed = seed::derive(master_seed, Stream::Eval, &[stage_id, u64::MAX]);
        let rollouts = match algorithm {
            Algorithm::Cem => trainers.cem.eval_rollouts,
            Algorithm::Ddpg => trainers.ddpg.eval_rollouts,
        };
        let initial_report = evaluate(&start.policy(), direction, rollouts, eval_seed, env)?;

        let (next, stage_curve, episodes_run, last_eval) = match (algorithm, start) {
            (Algorithm::Cem, Learner::Cem(policy)) => {
                let mut cfg = CemConfig {
                    bound,
                    ..trainers.cem.clone()
                };
                if let Some(m) = sweep.episodes_per_bound {
                    cfg.episodes = m;
                }
                let out = cem::train_cem(
                    &cfg,
                    env,
                    direction,
                    policy,
                    master_seed,
                    stage_id,
                    |r, p| on_stage_episode(stage, bound, r, p),
                )?;
                (
                    Learner::Cem(out.policy),
                    out.curve,
                    out.episodes_run,
                    out.last_eval,
                )
            }
            (Algorithm::Ddpg, Learner::Ddpg(agent)) => {
                let mut cfg = DdpgConfig {
                    bound,
                    ..trainers.ddpg.clone()
                };
                if let Some(m) = sweep.episodes_per_bound {
                    cfg.episodes = m;
                }
                let out = ddpg::train_ddpg(
                    &cfg,
                    env,
                    direction,
                    agent,
                    master_seed,
                    stage_id,
                    |r, a| on_stage_episode(stage, bound, r, &a.policy()),
                )?;
                (
                    Learner::Ddpg(out.agent),
                    out.curve,
                    out.episodes_run,
                    out.last_eval,
                )
            }
            _ => unreachable!("learner kind follows the algorithm"),
        };

        let final_report = match last_eval {
            Some(r) => r,
            None => evaluate(&next.policy(), direction, rollouts, eval_seed, env)?,
        };
        for r in &stage_curve {
            curve.push(SweepCurveRecord {
                bound,
                record: CurveRecord {
                    episode: r.episode + episode_offset,
                    samples_total: r.samples_total + sample_offset,
                    ..*r
                },
            });
        }
        let per_episode = match algorithm {
            Algorithm::Cem => trainers.cem.samples,
            Algorithm::Ddpg => 1,
        };
        episode_offset += episodes_run;
        sample_offset += episodes_run * per_episode;
        stages.push(StageResult {
            bound,
            episodes_run,
            policy: next.policy(),
            initial_report,
            final_report,
        });
        learner = Some(next);
    }
    Ok(SweepOutcome { stages, curve })
}
