//! Policy evaluation, learning-curve records, trajectory export and the
//! warm-started action-bound sweep.

use std::io::Write;
use std::path::Path;

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dynamics::{simulate, SimState};
use crate::env::{Direction, EnvBundle, Policy};
use crate::error::{Error, Result};
use crate::oracle::OracleConfig;
use crate::seed::{self, Stream};

/// Outcome of one Phase 1 + Phase 2 rollout.
#[derive(Debug, Clone, PartialEq)]
pub struct RolloutRecord {
    pub success: bool,
    /// Accumulated reward over Phase 2.
    pub reward: f64,
    /// Control steps taken.
    pub steps: usize,
    /// `sum |a_t|` over the executed actions.
    pub action_abs_sum: f64,
    pub final_state: SimState,
}

impl RolloutRecord {
    pub fn control_duration(&self, dt_control: f64) -> f64 {
        self.steps as f64 * dt_control
    }
}

/// State features and the executed action of one control step.
pub type Pair = ([f64; 4], f64);

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum NoiseKind {
    Gaussian,
    /// Ornstein-Uhlenbeck, reset at the start of every episode.
    #[default]
    Ou,
}

/// Per-step exploration noise. Gaussian draws are independent; the OU
/// process `n += -theta n + sigma z` starts at zero and is correlated in time.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NoiseProcess {
    pub kind: NoiseKind,
    pub sigma: f64,
    pub theta: f64,
    state: f64,
}

impl NoiseProcess {
    pub fn new(kind: NoiseKind, sigma: f64, theta: f64) -> Self {
        Self {
            kind,
            sigma,
            theta,
            state: 0.0,
        }
    }

    pub fn sample(&mut self, rng: &mut impl Rng) -> f64 {
        let z: f64 = StandardNormal.sample(rng);
        match self.kind {
            NoiseKind::Gaussian => self.sigma * z,
            NoiseKind::Ou => {
                self.state += -self.theta * self.state + self.sigma * z;
                self.state
            }
        }
    }
}

/// Exploration noise added to the policy action during training rollouts.
pub struct Exploration<'a, R: Rng> {
    pub rng: &'a mut R,
    pub process: NoiseProcess,
}

/// Runs Phase 2 from `start`. Actions are `clip(F pi(s) + noise, -F, F)`;
/// the rollout stops when the classifier puts the next state in the target
/// basin or after `t2`. When `pairs` is given, every (features, executed
/// action) pair is appended to it.
pub fn run_phase2<R: Rng>(
    env: &EnvBundle,
    policy: &Policy,
    direction: Direction,
    start: SimState,
    mut noise: Option<Exploration<'_, R>>,
    mut pairs: Option<&mut Vec<Pair>>,
) -> Result<RolloutRecord> {
    let target = direction.target();
    let bound = policy.bound;
    let mut s = start;
    let mut reward = 0.0;
    let mut abs_sum = 0.0;
    let mut steps = 0;
    let mut success = false;
    for _ in 0..env.control_steps() {
        let mut a = policy.action(&s)?;
        if let Some(n) = noise.as_mut() {
            a += n.process.sample(n.rng);
        }
        let a = a.clamp(-bound, bound);
        if let Some(p) = pairs.as_deref_mut() {
            p.push((policy.features(&s), a));
        }
        let out = env.step(&s, a, target)?;
        reward += out.reward;
        abs_sum += a.abs();
        steps += 1;
        s = out.next;
        if out.reached {
            success = true;
            break;
        }
    }
    Ok(RolloutRecord {
        success,
        reward,
        steps,
        action_abs_sum: abs_sum,
        final_state: s,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalReport {
    pub success_rate: f64,
    pub reward_mean: f64,
    pub reward_std: f64,
    /// Mean Phase 2 duration of the successful rollouts; `None` if none
    /// succeeded.
    pub mean_control_duration: Option<f64>,
    pub records: Vec<RolloutRecord>,
}

impl EvalReport {
    pub fn from_records(records: Vec<RolloutRecord>, dt_control: f64) -> Self {
        let n = records.len().max(1) as f64;
        let successes: Vec<&RolloutRecord> = records.iter().filter(|r| r.success).collect();
        let reward_mean = records.iter().map(|r| r.reward).sum::<f64>() / n;
        let var = records
            .iter()
            .map(|r| (r.reward - reward_mean).powi(2))
            .sum::<f64>()
            / n;
        let mean_control_duration = if successes.is_empty() {
            None
        } else {
            Some(
                successes
                    .iter()
                    .map(|r| r.control_duration(dt_control))
                    .sum::<f64>()
                    / successes.len() as f64,
            )
        };
        Self {
            success_rate: successes.len() as f64 / n,
            reward_mean,
            reward_std: var.sqrt(),
            mean_control_duration,
            records,
        }
    }

    /// Human-readable summary block.
    pub fn summary(&self) -> String {
        format!(
            "rollouts: {}\nsuccess_rate: {:.4}\nreward_mean: {:.4}\nreward_std: {:.4}\nmean_control_duration: {}\n",
            self.records.len(),
            self.success_rate,
            self.reward_mean,
            self.reward_std,
            self.mean_control_duration
                .map_or_else(|| "n/a".to_string(), |d| format!("{d:.4}")),
        )
    }

    /// Per-rollout CSV followed by the summary as `#` comment lines.
    pub fn write(&self, path: &Path) -> Result<()> {
        let mut out =
            String::from("rollout,success,reward,steps,action_abs_sum,x_end,v_end,phi_end\n");
        for (i, r) in self.records.iter().enumerate() {
            out.push_str(&format!(
                "{i},{},{},{},{},{},{},{}\n",
                u8::from(r.success),
                r.reward,
                r.steps,
                r.action_abs_sum,
                r.final_state.x,
                r.final_state.v,
                r.final_state.phi
            ));
        }
        for line in self.summary().lines() {
            out.push_str("# ");
            out.push_str(line);
            out.push('\n');
        }
        std::fs::write(path, out).map_err(|e| Error::io(path, e))
    }
}

/// Evaluates a policy greedily (no exploration noise) over `n` rollouts whose
/// Phase 1 durations are randomized. Rollout `k` draws from its own seeded
/// stream, so the report depends only on `(policy, direction, n, seed)`.
pub fn evaluate(
    policy: &Policy,
    direction: Direction,
    n: usize,
    master_seed: u64,
    env: &EnvBundle,
) -> Result<EvalReport> {
    let records = (0..n)
        .into_par_iter()
        .map(|k| {
            let mut rng = seed::rng(master_seed, Stream::Eval, &[k as u64]);
            let start = env.phase1(direction, &mut rng)?;
            run_phase2::<rand_chacha::ChaCha8Rng>(env, policy, direction, start, None, None)
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(EvalReport::from_records(records, env.integrator.dt_control))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AuditResult {
    pub checked: usize,
    pub agreed: usize,
}

impl AuditResult {
    pub fn agreement(&self) -> f64 {
        if self.checked == 0 {
            1.0
        } else {
            self.agreed as f64 / self.checked as f64
        }
    }
}

/// Re-labels the final states of a random `fraction` of rollouts with the
/// oracle and counts how often the oracle agrees with the classifier's
/// verdict (target reached or not).
pub fn audit(
    report: &EvalReport,
    direction: Direction,
    fraction: f64,
    oracle: &OracleConfig,
    master_seed: u64,
    env: &EnvBundle,
) -> Result<AuditResult> {
    let mut rng = seed::rng(master_seed, Stream::Audit, &[]);
    let k = ((report.records.len() as f64 * fraction).ceil() as usize).min(report.records.len());
    let picked = rand::seq::index::sample(&mut rng, report.records.len(), k).into_vec();
    let verdicts = picked
        .par_iter()
        .map(|&i| {
            let r = &report.records[i];
            let label = match env.catalog.label(&r.final_state, oracle) {
                Ok(l) => l,
                Err(Error::AmbiguousLabel { .. }) => {
                    env.catalog
                        .label_with(&r.final_state, 2.0 * oracle.settle_periods, oracle)?
                }
                Err(e) => return Err(e),
            };
            Ok((label == direction.target()) == r.success)
        })
        .collect::<Result<Vec<bool>>>()?;
    Ok(AuditResult {
        checked: verdicts.len(),
        agreed: verdicts.iter().filter(|&&v| v).count(),
    })
}

/// One row of a learning curve.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CurveRecord {
    /// 1-based episode count at the time of evaluation.
    pub episode: usize,
    /// Trajectories generated so far.
    pub samples_total: usize,
    pub success_rate: f64,
    pub reward_mean: f64,
    pub reward_std: f64,
}

impl CurveRecord {
    pub fn from_report(episode: usize, samples_total: usize, r: &EvalReport) -> Self {
        Self {
            episode,
            samples_total,
            success_rate: r.success_rate,
            reward_mean: r.reward_mean,
            reward_std: r.reward_std,
        }
    }
}

pub const CURVE_HEADER: &str = "episode,samples_total,success_rate,reward_mean,reward_std";

pub fn write_curve(path: &Path, curve: &[CurveRecord]) -> Result<()> {
    let mut out = String::from(CURVE_HEADER);
    out.push('\n');
    for c in curve {
        out.push_str(&format!(
            "{},{},{},{},{}\n",
            c.episode, c.samples_total, c.success_rate, c.reward_mean, c.reward_std
        ));
    }
    std::fs::write(path, out).map_err(|e| Error::io(path, e))
}

/// Phase tag of an exported trajectory sample.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PhaseTag {
    Free,
    Control,
    Settle,
}

impl PhaseTag {
    pub fn as_str(self) -> &'static str {
        match self {
            PhaseTag::Free => "free",
            PhaseTag::Control => "control",
            PhaseTag::Settle => "settle",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExportRow {
    pub t: f64,
    pub state: SimState,
    pub action: f64,
    pub tag: PhaseTag,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExportSummary {
    pub success: bool,
    pub control_steps: usize,
    /// `max |x|` over the last five forcing periods of the settle segment.
    pub settle_amplitude: f64,
    pub rows: Vec<ExportRow>,
}

/// Forcing periods of free running appended after control ends.
pub const SETTLE_PERIODS: f64 = 40.0;

/// Simulates Phase 1, a greedy Phase 2 and a free settling segment, and
/// writes `t,x,v,phi,a,phase_tag` rows to `path`.
pub fn rollout_export(
    policy: &Policy,
    direction: Direction,
    path: &Path,
    master_seed: u64,
    env: &EnvBundle,
) -> Result<ExportSummary> {
    let summary = rollout_trace(policy, direction, master_seed, env)?;
    let mut out = String::from("t,x,v,phi,a,phase_tag\n");
    for r in &summary.rows {
        out.push_str(&format!(
            "{},{},{},{},{},{}\n",
            r.t,
            r.state.x,
            r.state.v,
            r.state.phi,
            r.action,
            r.tag.as_str()
        ));
    }
    let mut f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    f.write_all(out.as_bytes())
        .map_err(|e| Error::io(path, e))?;
    Ok(summary)
}

/// The time series behind [`rollout_export`], without file output.
pub fn rollout_trace(
    policy: &Policy,
    direction: Direction,
    master_seed: u64,
    env: &EnvBundle,
) -> Result<ExportSummary> {
    let (params, cfg) = (&env.params, &env.integrator);
    let mut rng = seed::rng(master_seed, Stream::Eval, &[u64::MAX]);
    let t1 = env.phase1_duration(&mut rng);
    let s0 = env.initial_state(direction.source());
    let mut rows = Vec::new();

    let free = simulate(&s0, |_| 0.0, t1, cfg, params)?;
    let mut s = free.last().unwrap().state;
    rows.extend(free[..free.len() - 1].iter().map(|x| ExportRow {
        t: x.t,
        state: x.state,
        action: 0.0,
        tag: PhaseTag::Free,
    }));
    let mut t = t1;

    let target = direction.target();
    let mut success = false;
    let mut control_steps = 0;
    for _ in 0..env.control_steps() {
        let a = policy.action(&s)?.clamp(-policy.bound, policy.bound);
        rows.push(ExportRow {
            t,
            state: s,
            action: a,
            tag: PhaseTag::Control,
        });
        let out = env.step(&s, a, target)?;
        s = out.next;
        t += cfg.dt_control;
        control_steps += 1;
        if out.reached {
            success = true;
            break;
        }
    }

    let period = params.forcing_period();
    let settle = simulate(&s, |_| 0.0, SETTLE_PERIODS * period, cfg, params)?;
    let tail_start = t + (SETTLE_PERIODS - 5.0) * period;
    let mut settle_amplitude: f64 = 0.0;
    for x in &settle {
        if t + x.t >= tail_start {
            settle_amplitude = settle_amplitude.max(x.state.x.abs());
        }
        rows.push(ExportRow {
            t: t + x.t,
            state: x.state,
            action: 0.0,
            tag: PhaseTag::Settle,
        });
    }
    Ok(ExportSummary {
        success,
        control_steps,
        settle_amplitude,
        rows,
    })
}
