//! Cross-entropy method for attractor switching.
//!
//! Each episode collects `samples` noisy rollouts with the current policy.
//! State-action pairs of the rollouts that reached the target basin are
//! labeled with their trajectory reward; pairs from trajectories whose reward
//! clears the elite threshold are then regressed onto, `F pi(s) ~ a`, with
//! minibatch Adam.

use rand::seq::SliceRandom;
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::env::{Direction, EnvBundle, Policy};
use crate::error::{Error, Result};
use crate::eval::{
    evaluate, run_phase2, CurveRecord, EvalReport, Exploration, NoiseKind, NoiseProcess, Pair,
};
use crate::neural::{AdamConfig, DenseNet};
use crate::seed::{self, Stream};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CemConfig {
    pub episodes: usize,
    /// Rollouts per episode.
    pub samples: usize,
    /// Elite proportion of the successful trajectories.
    pub elite: f64,
    pub bound: f64,
    pub hidden: usize,
    pub lr: f64,
    pub minibatch: usize,
    /// Passes over the elite set per episode.
    pub epochs: usize,
    pub noise: NoiseKind,
    /// Exploration noise standard deviation as a multiple of the bound.
    pub noise_scale: f64,
    /// Per-episode multiplicative noise decay.
    pub noise_decay: f64,
    /// Mean reversion per control step of the OU process.
    pub ou_theta: f64,
    /// Evaluate every this many episodes (and after the last one).
    pub eval_every: usize,
    pub eval_rollouts: usize,
    /// Stop as soon as an evaluation reaches this success rate.
    pub stop_at_success: Option<f64>,
}

impl Default for CemConfig {
    fn default() -> Self {
        Self {
            episodes: 100,
            samples: 30,
            elite: 0.8,
            bound: 4.0,
            hidden: 64,
            lr: 1e-3,
            minibatch: 128,
            epochs: 20,
            noise: NoiseKind::Ou,
            noise_scale: 1.0,
            noise_decay: 0.99,
            ou_theta: 0.15,
            eval_every: 1,
            eval_rollouts: 100,
            stop_at_success: None,
        }
    }
}

impl CemConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.elite > 0.0 && self.elite <= 1.0) {
            return Err(Error::Config("cem.elite must be in (0, 1]".into()));
        }
        if self.samples == 0 || self.minibatch == 0 || self.eval_every == 0 || self.hidden == 0 {
            return Err(Error::Config(
                "cem.samples, minibatch, hidden and eval_every must be positive".into(),
            ));
        }
        if !(self.bound > 0.0) {
            return Err(Error::Config("cem.bound must be positive".into()));
        }
        AdamConfig::with_lr(self.lr).validate()
    }
}

/// One Phase 2 trajectory with its state-action pairs.
#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub success: bool,
    pub reward: f64,
    pub pairs: Vec<Pair>,
}

/// Successful trajectories of the current episode.
#[derive(Debug, Clone, Default)]
pub struct CemReplayBuffer {
    trajectories: Vec<Trajectory>,
}

impl CemReplayBuffer {
    pub fn clear(&mut self) {
        self.trajectories.clear();
    }

    /// Stores a trajectory's pairs only if it reached the target basin.
    pub fn push(&mut self, t: Trajectory) -> bool {
        if t.success {
            self.trajectories.push(t);
            true
        } else {
            false
        }
    }

    pub fn trajectories(&self) -> &[Trajectory] {
        &self.trajectories
    }

    pub fn is_empty(&self) -> bool {
        self.trajectories.is_empty()
    }
}

/// Linear-interpolation quantile of unsorted values, `q` in `[0, 1]`.
pub fn quantile(values: &[f64], q: f64) -> Option<f64> {
    if values.is_empty() {
        return None;
    }
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let h = (v.len() - 1) as f64 * q.clamp(0.0, 1.0);
    let lo = h.floor() as usize;
    let hi = (lo + 1).min(v.len() - 1);
    Some(v[lo] + (h - lo as f64) * (v[hi] - v[lo]))
}

/// Pairs of every stored trajectory whose reward is at least the
/// `(1 - p)`-quantile of the stored rewards.
pub fn select_elite(buffer: &CemReplayBuffer, p: f64) -> Vec<Pair> {
    let rewards: Vec<f64> = buffer.trajectories.iter().map(|t| t.reward).collect();
    let Some(rho) = quantile(&rewards, 1.0 - p) else {
        return Vec::new();
    };
    buffer
        .trajectories
        .iter()
        .filter(|t| t.reward >= rho)
        .flat_map(|t| t.pairs.iter().copied())
        .collect()
}

/// Mean squared regression loss `(F pi(s) - a)^2` and its parameter gradient.
pub fn regression_loss(net: &DenseNet, bound: f64, batch: &[Pair]) -> Result<(f64, Vec<f64>)> {
    let mut grads = net.zero_grad();
    let mut loss = 0.0;
    let scale = 1.0 / batch.len().max(1) as f64;
    for (s, a) in batch {
        let tape = net.forward(s, None)?;
        let err = bound * tape.output()[0] - a;
        loss += err * err * scale;
        net.backward(&tape, &[2.0 * bound * err * scale], &mut grads)?;
    }
    Ok((loss, grads))
}

/// One pass of minibatch Adam over a random permutation of the elite pairs.
pub fn update_policy(
    policy: &mut Policy,
    elite: &[Pair],
    adam: &AdamConfig,
    minibatch: usize,
    rng: &mut impl Rng,
) -> Result<()> {
    let mut order: Vec<&Pair> = elite.iter().collect();
    order.shuffle(rng);
    let batch: Vec<Pair> = order.iter().map(|p| **p).collect();
    for chunk in batch.chunks(minibatch) {
        let (_, grads) = regression_loss(&policy.net, policy.bound, chunk)?;
        policy.net.adam_step(&grads, adam)?;
    }
    Ok(())
}

/// Phase 1 then one noisy Phase 2 rollout.
pub fn collect_trajectory(
    env: &EnvBundle,
    policy: &Policy,
    direction: Direction,
    noise: NoiseProcess,
    rng: &mut impl Rng,
) -> Result<Trajectory> {
    let start = env.phase1(direction, rng)?;
    let mut pairs = Vec::with_capacity(env.control_steps());
    let rec = run_phase2(
        env,
        policy,
        direction,
        start,
        Some(Exploration {
            rng,
            process: noise,
        }),
        Some(&mut pairs),
    )?;
    Ok(Trajectory {
        success: rec.success,
        reward: rec.reward,
        pairs,
    })
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub policy: Policy,
    pub curve: Vec<CurveRecord>,
    pub episodes_run: usize,
    pub last_eval: Option<EvalReport>,
}

/// Randomly initialized CEM policy for a given seed and stage.
pub fn initial_policy(cfg: &CemConfig, master_seed: u64, stage: u64) -> Result<Policy> {
    let mut rng = seed::rng(master_seed, Stream::NetInit, &[stage, 0]);
    Ok(Policy::new(
        DenseNet::policy(4, cfg.hidden, &mut rng)?,
        cfg.bound,
    ))
}

/// Runs CEM starting from `policy` (already bound to `cfg.bound`). `stage`
/// separates the random streams of successive runs sharing a master seed;
/// `on_episode` sees every curve record and the current policy.
pub fn train_cem(
    cfg: &CemConfig,
    env: &EnvBundle,
    direction: Direction,
    mut policy: Policy,
    master_seed: u64,
    stage: u64,
    mut on_episode: impl FnMut(&CurveRecord, &Policy) -> Result<()>,
) -> Result<TrainOutcome> {
    cfg.validate()?;
    policy.bound = cfg.bound;
    let adam = AdamConfig::with_lr(cfg.lr);
    let mut buffer = CemReplayBuffer::default();
    let mut curve = Vec::new();
    let mut last_eval = None;
    let mut episodes_run = 0;
    for episode in 0..cfg.episodes {
        let sigma = cfg.noise_scale * cfg.bound * cfg.noise_decay.powi(episode as i32);
        let trajectories = (0..cfg.samples)
            .into_par_iter()
            .map(|k| {
                let mut rng = seed::rng(
                    master_seed,
                    Stream::CemSample,
                    &[stage, episode as u64, k as u64],
                );
                let noise = NoiseProcess::new(cfg.noise, sigma, cfg.ou_theta);
                collect_trajectory(env, &policy, direction, noise, &mut rng)
            })
            .collect::<Result<Vec<_>>>()?;
        buffer.clear();
        for t in trajectories {
            buffer.push(t);
        }
        let elite = select_elite(&buffer, cfg.elite);
        if elite.is_empty() {
            log::debug!("episode {episode}: no successful trajectory, skipping update");
        } else {
            let mut rng = seed::rng(master_seed, Stream::CemUpdate, &[stage, episode as u64]);
            for _ in 0..cfg.epochs {
                update_policy(&mut policy, &elite, &adam, cfg.minibatch, &mut rng)?;
            }
        }
        episodes_run = episode + 1;

        if episodes_run % cfg.eval_every == 0 || episodes_run == cfg.episodes {
            let eval_seed = seed::derive(master_seed, Stream::Eval, &[stage, episode as u64]);
            let report = evaluate(&policy, direction, cfg.eval_rollouts, eval_seed, env)?;
            let rec = CurveRecord::from_report(episodes_run, episodes_run * cfg.samples, &report);
            log::info!(
                "cem {} F={} episode {episodes_run}: {} successful samples, eval success {:.2}, reward {:.1}",
                direction.tag(),
                cfg.bound,
                buffer.trajectories().len(),
                rec.success_rate,
                rec.reward_mean
            );
            on_episode(&rec, &policy)?;
            curve.push(rec);
            let done = cfg
                .stop_at_success
                .is_some_and(|bar| report.success_rate >= bar);
            last_eval = Some(report);
            if done {
                break;
            }
        }
    }
    Ok(TrainOutcome {
        policy,
        curve,
        episodes_run,
        last_eval,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn traj(reward: f64, tag: f64) -> Trajectory {
        Trajectory {
            success: true,
            reward,
            pairs: vec![([tag, 0.0, 1.0, 0.0], tag)],
        }
    }

    #[test]
    fn quantile_matches_linear_rule() {
        // brute force: h = (n - 1) q = 0.4 between 10 and 20
        assert_eq!(quantile(&[30.0, 10.0, 20.0], 0.2), Some(14.0));
        assert_eq!(quantile(&[5.0], 0.7), Some(5.0));
        assert_eq!(quantile(&[], 0.5), None);
        assert_eq!(quantile(&[1.0, 2.0, 3.0, 4.0], 1.0), Some(4.0));
        assert_eq!(quantile(&[1.0, 2.0, 3.0, 4.0], 0.0), Some(1.0));
    }

    #[test]
    fn elite_selection() {
        let mut b = CemReplayBuffer::default();
        for (r, tag) in [(10.0, 1.0), (20.0, 2.0), (30.0, 3.0)] {
            b.push(traj(r, tag));
        }
        let e = select_elite(&b, 0.8);
        let tags: Vec<f64> = e.iter().map(|p| p.1).collect();
        assert_eq!(tags, vec![2.0, 3.0]);
        assert_eq!(select_elite(&b, 1.0).len(), 3);
        assert!(select_elite(&CemReplayBuffer::default(), 0.8).is_empty());
    }

    #[test]
    fn ties_at_threshold_are_kept() {
        let mut b = CemReplayBuffer::default();
        for tag in 0..4 {
            b.push(traj(50.0, tag as f64));
        }
        assert_eq!(select_elite(&b, 0.25).len(), 4);
    }

    #[test]
    fn failed_trajectories_are_not_stored() {
        let mut b = CemReplayBuffer::default();
        let mut t = traj(-3.0, 0.0);
        t.success = false;
        assert!(!b.push(t));
        assert!(b.is_empty());
    }

    #[test]
    fn stricter_elite_raises_threshold() {
        let rewards = [3.0, 9.0, 1.0, 7.0, 5.5, 2.0];
        let mut prev = f64::NEG_INFINITY;
        for p in [1.0, 0.8, 0.6, 0.4, 0.2, 0.05] {
            let rho = quantile(&rewards, 1.0 - p).unwrap();
            assert!(rho >= prev);
            prev = rho;
        }
    }

    #[test]
    fn regression_overfits_a_single_pair() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut policy = Policy::new(DenseNet::policy(4, 64, &mut rng).unwrap(), 4.0);
        let pair = ([0.2, -0.3, 0.5, 0.866], 2.5);
        let elite = vec![pair; 16];
        let adam = AdamConfig::with_lr(1e-3);
        // Monotone until the loss first drops under 1e-3; after that Adam's
        // momentum may overshoot, but the loss must end under 1e-3.
        let mut prev = regression_loss(&policy.net, 4.0, &elite).unwrap().0;
        let mut converged = false;
        for _ in 0..100 {
            update_policy(&mut policy, &elite, &adam, 128, &mut rng).unwrap();
            let loss = regression_loss(&policy.net, 4.0, &elite).unwrap().0;
            if !converged {
                assert!(loss <= prev + 1e-12, "{loss} > {prev}");
            }
            converged |= loss < 1e-3;
            prev = loss;
        }
        assert!(converged);
        assert!(prev < 1e-3, "{prev}");
    }

    #[test]
    fn one_step_reduces_batch_loss() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let mut policy = Policy::new(DenseNet::policy(4, 64, &mut rng).unwrap(), 4.0);
        let batch: Vec<Pair> = (0..64)
            .map(|i| {
                let t = i as f64 * 0.1;
                (
                    [t.sin() * 0.5, t.cos() * 0.5, t.cos(), t.sin()],
                    (2.0 * t).sin() * 3.0,
                )
            })
            .collect();
        let before = regression_loss(&policy.net, 4.0, &batch).unwrap().0;
        update_policy(
            &mut policy,
            &batch,
            &AdamConfig::with_lr(1e-3),
            128,
            &mut rng,
        )
        .unwrap();
        let after = regression_loss(&policy.net, 4.0, &batch).unwrap().0;
        assert!(after < before);
    }

    #[test]
    fn regression_gradient_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let net = DenseNet::policy(4, 8, &mut rng).unwrap();
        let batch: Vec<Pair> = (0..5)
            .map(|i| {
                let t = i as f64;
                ([t * 0.1, -t * 0.2, t.cos(), t.sin()], t - 2.0)
            })
            .collect();
        let (_, g) = regression_loss(&net, 4.0, &batch).unwrap();
        let h = 1e-5;
        for k in (0..net.param_count()).step_by(7) {
            let mut plus = net.clone();
            plus.params_mut()[k] += h;
            let mut minus = net.clone();
            minus.params_mut()[k] -= h;
            let fd = (regression_loss(&plus, 4.0, &batch).unwrap().0
                - regression_loss(&minus, 4.0, &batch).unwrap().0)
                / (2.0 * h);
            let denom = g[k].abs().max(fd.abs()).max(1e-8);
            assert!(
                (g[k] - fd).abs() / denom < 1e-4 || (g[k] - fd).abs() < 1e-9,
                "param {k}: {} vs {fd}",
                g[k]
            );
        }
    }
}
