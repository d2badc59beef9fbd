//! Deep deterministic policy gradient for attractor switching.
//!
//! Every Phase 2 control step stores one transition in a persistent replay
//! buffer and performs one critic update, one actor update and a soft update
//! of both target networks.

use std::io::{Read, Write};
use std::path::Path;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::env::{Direction, EnvBundle, Policy};
use crate::error::{Error, Result};
use crate::eval::{evaluate, CurveRecord, EvalReport, NoiseKind, NoiseProcess};
use crate::neural::{AdamConfig, DenseNet};
use crate::seed::{self, Stream};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DdpgConfig {
    pub episodes: usize,
    pub bound: f64,
    pub hidden: usize,
    pub gamma: f64,
    pub tau: f64,
    pub actor_lr: f64,
    pub critic_lr: f64,
    pub minibatch: usize,
    pub buffer_capacity: usize,
    /// Transitions stored before the first network update.
    pub warmup: usize,
    pub noise: NoiseKind,
    /// Noise standard deviation as a multiple of the bound.
    pub noise_scale: f64,
    pub noise_decay: f64,
    /// Mean reversion per control step of the OU process.
    pub ou_theta: f64,
    pub eval_every: usize,
    pub eval_rollouts: usize,
    pub stop_at_success: Option<f64>,
}

impl Default for DdpgConfig {
    fn default() -> Self {
        Self {
            episodes: 200,
            bound: 4.0,
            hidden: 128,
            gamma: 0.9,
            tau: 0.1,
            actor_lr: 1e-4,
            critic_lr: 1e-3,
            minibatch: 64,
            buffer_capacity: 1_000_000,
            warmup: 1000,
            noise: NoiseKind::Ou,
            noise_scale: 1.0,
            noise_decay: 0.995,
            ou_theta: 0.15,
            eval_every: 1,
            eval_rollouts: 100,
            stop_at_success: None,
        }
    }
}

impl DdpgConfig {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..1.0).contains(&self.gamma) {
            return Err(Error::Config("ddpg.gamma must be in [0, 1)".into()));
        }
        if !(self.tau > 0.0 && self.tau <= 1.0) {
            return Err(Error::Config("ddpg.tau must be in (0, 1]".into()));
        }
        if self.minibatch == 0
            || self.buffer_capacity < self.minibatch
            || self.eval_every == 0
            || self.hidden == 0
        {
            return Err(Error::Config(
                "ddpg.minibatch, hidden and eval_every must be positive and the buffer at least one minibatch".into(),
            ));
        }
        if !(self.bound > 0.0) {
            return Err(Error::Config("ddpg.bound must be positive".into()));
        }
        AdamConfig::with_lr(self.actor_lr).validate()?;
        AdamConfig::with_lr(self.critic_lr).validate()
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Transition {
    pub state: [f64; 4],
    pub action: f64,
    pub reward: f64,
    pub next: [f64; 4],
    /// The target basin was reached at `next`.
    pub terminal: bool,
}

/// Fixed-capacity ring buffer; the oldest transition is overwritten first.
#[derive(Debug, Clone, PartialEq)]
pub struct DdpgReplayBuffer {
    data: Vec<Transition>,
    capacity: usize,
    cursor: usize,
}

impl DdpgReplayBuffer {
    pub fn new(capacity: usize) -> Self {
        assert!(capacity > 0, "replay buffer capacity must be positive");
        Self {
            data: Vec::with_capacity(capacity.min(1 << 16)),
            capacity,
            cursor: 0,
        }
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn store(&mut self, t: Transition) {
        if self.data.len() < self.capacity {
            self.data.push(t);
        } else {
            self.data[self.cursor] = t;
        }
        self.cursor = (self.cursor + 1) % self.capacity;
    }

    /// Transitions from oldest to newest.
    pub fn iter(&self) -> impl Iterator<Item = &Transition> {
        let split = if self.data.len() < self.capacity {
            0
        } else {
            self.cursor
        };
        self.data[split..].iter().chain(&self.data[..split])
    }

    /// Uniform sampling with replacement.
    pub fn sample_minibatch(&self, n: usize, rng: &mut impl Rng) -> Result<Vec<Transition>> {
        if self.data.len() < n || self.data.is_empty() {
            return Err(Error::InsufficientData {
                available: self.data.len(),
                requested: n,
            });
        }
        Ok((0..n)
            .map(|_| self.data[rng.random_range(0..self.data.len())])
            .collect())
    }

    const MAGIC: &'static [u8; 8] = b"DDPGBUF1";

    /// Binary layout: magic, then little-endian `u64` capacity, cursor and
    /// length, then per transition ten `f64` (state, action, reward, next)
    /// and one terminal byte.
    pub fn save(&self, path: &Path) -> Result<()> {
        let mut out = Vec::with_capacity(32 + self.data.len() * 81);
        out.extend_from_slice(Self::MAGIC);
        for v in [self.capacity, self.cursor, self.data.len()] {
            out.extend_from_slice(&(v as u64).to_le_bytes());
        }
        for t in &self.data {
            for v in t.state.iter().chain([&t.action, &t.reward]).chain(&t.next) {
                out.extend_from_slice(&v.to_le_bytes());
            }
            out.push(u8::from(t.terminal));
        }
        let mut f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
        f.write_all(&out).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let mut bytes = Vec::new();
        std::fs::File::open(path)
            .and_then(|mut f| f.read_to_end(&mut bytes))
            .map_err(|e| Error::io(path, e))?;
        if bytes.len() < 8 || &bytes[..8] != Self::MAGIC {
            return Err(Error::Version {
                path: path.into(),
                expected: "DDPGBUF1",
                found: String::from_utf8_lossy(&bytes[..bytes.len().min(8)]).into_owned(),
            });
        }
        let bad = |m: &str| Error::parse(path, m.to_string());
        let u64_at = |o: usize| -> Result<usize> {
            let b = bytes.get(o..o + 8).ok_or_else(|| bad("truncated header"))?;
            Ok(u64::from_le_bytes(b.try_into().unwrap()) as usize)
        };
        let (capacity, cursor, len) = (u64_at(8)?, u64_at(16)?, u64_at(24)?);
        if capacity == 0 || len > capacity || cursor >= capacity {
            return Err(bad("inconsistent header"));
        }
        if bytes.len() != 32 + len * 81 {
            return Err(bad("length does not match the transition count"));
        }
        let mut data = Vec::with_capacity(len);
        for rec in bytes[32..].chunks_exact(81) {
            let f = |k: usize| f64::from_le_bytes(rec[8 * k..8 * k + 8].try_into().unwrap());
            data.push(Transition {
                state: [f(0), f(1), f(2), f(3)],
                action: f(4),
                reward: f(5),
                next: [f(6), f(7), f(8), f(9)],
                terminal: rec[80] != 0,
            });
        }
        Ok(Self {
            data,
            capacity,
            cursor,
        })
    }
}

/// Actor, critic and their target copies.
#[derive(Debug, Clone, PartialEq)]
pub struct DdpgAgent {
    pub actor: DenseNet,
    pub critic: DenseNet,
    pub target_actor: DenseNet,
    pub target_critic: DenseNet,
    pub bound: f64,
}

impl DdpgAgent {
    /// Random actor and critic; targets start as exact copies.
    pub fn new(hidden: usize, bound: f64, rng: &mut impl Rng) -> Result<Self> {
        let actor = DenseNet::policy(4, hidden, rng)?;
        let critic = DenseNet::critic(4, hidden, rng)?;
        Ok(Self {
            target_actor: actor.clone(),
            target_critic: critic.clone(),
            actor,
            critic,
            bound,
        })
    }

    /// Keeps the learned weights, resets the optimizers and re-copies the
    /// targets; used when moving to a tighter bound.
    pub fn warm_start(&self, bound: f64) -> Self {
        let mut next = self.clone();
        next.actor.reset_optimizer();
        next.critic.reset_optimizer();
        next.target_actor = next.actor.clone();
        next.target_critic = next.critic.clone();
        next.bound = bound;
        next
    }

    pub fn policy(&self) -> Policy {
        Policy::new(self.actor.clone(), self.bound)
    }
}

/// `y = r` at terminal transitions, else `r + gamma Q'(s', F pi'(s'))`.
pub fn td_target(
    t: &Transition,
    target_actor: &DenseNet,
    target_critic: &DenseNet,
    gamma: f64,
    bound: f64,
) -> Result<f64> {
    if t.terminal {
        return Ok(t.reward);
    }
    let a_next = bound * target_actor.predict(&t.next, None)?[0];
    let q_next = target_critic.predict(&t.next, Some(a_next))?[0];
    Ok(t.reward + gamma * q_next)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct UpdateStats {
    /// Critic loss before its step.
    pub critic_loss: f64,
    /// Mean `Q(s, F pi(s))` before the actor step.
    pub mean_q: f64,
}

/// Critic loss `(1/N) sum (y - Q(s, a))^2` and its gradient.
pub fn critic_loss(
    critic: &DenseNet,
    batch: &[Transition],
    targets: &[f64],
) -> Result<(f64, Vec<f64>)> {
    let mut grads = critic.zero_grad();
    let scale = 1.0 / batch.len().max(1) as f64;
    let mut loss = 0.0;
    for (t, &y) in batch.iter().zip(targets) {
        let tape = critic.forward(&t.state, Some(t.action))?;
        let err = tape.output()[0] - y;
        loss += err * err * scale;
        critic.backward(&tape, &[2.0 * err * scale], &mut grads)?;
    }
    Ok((loss, grads))
}

/// Mean `Q(s, F pi(s))` over the batch and the actor gradient of its
/// negative, `-(1/N) sum dQ/da * F * dpi/dtheta`.
pub fn actor_objective(
    actor: &DenseNet,
    critic: &DenseNet,
    bound: f64,
    batch: &[Transition],
) -> Result<(f64, Vec<f64>)> {
    let mut grads = actor.zero_grad();
    let mut scratch = critic.zero_grad();
    let scale = 1.0 / batch.len().max(1) as f64;
    let mut mean_q = 0.0;
    for t in batch {
        let a_tape = actor.forward(&t.state, None)?;
        let a = bound * a_tape.output()[0];
        let q_tape = critic.forward(&t.state, Some(a))?;
        mean_q += q_tape.output()[0] * scale;
        let dq = critic.backward(&q_tape, &[1.0], &mut scratch)?;
        let dq_da = dq.aux.expect("critic has an action input");
        actor.backward(&a_tape, &[-dq_da * bound * scale], &mut grads)?;
    }
    Ok((mean_q, grads))
}

/// One critic step, one actor step, then soft updates of both targets.
pub fn update_networks(
    agent: &mut DdpgAgent,
    batch: &[Transition],
    cfg: &DdpgConfig,
) -> Result<UpdateStats> {
    let targets = batch
        .iter()
        .map(|t| {
            td_target(
                t,
                &agent.target_actor,
                &agent.target_critic,
                cfg.gamma,
                agent.bound,
            )
        })
        .collect::<Result<Vec<_>>>()?;
    let (critic_loss, cg) = critic_loss(&agent.critic, batch, &targets)?;
    agent
        .critic
        .adam_step(&cg, &AdamConfig::with_lr(cfg.critic_lr))?;

    let (mean_q, ag) = actor_objective(&agent.actor, &agent.critic, agent.bound, batch)?;
    agent
        .actor
        .adam_step(&ag, &AdamConfig::with_lr(cfg.actor_lr))?;

    agent.target_critic.soft_update(&agent.critic, cfg.tau)?;
    agent.target_actor.soft_update(&agent.actor, cfg.tau)?;
    Ok(UpdateStats {
        critic_loss,
        mean_q,
    })
}

#[derive(Debug, Clone)]
pub struct DdpgOutcome {
    pub agent: DdpgAgent,
    pub curve: Vec<CurveRecord>,
    pub episodes_run: usize,
    pub last_eval: Option<EvalReport>,
    pub buffer: DdpgReplayBuffer,
}

pub fn initial_agent(cfg: &DdpgConfig, master_seed: u64, stage: u64) -> Result<DdpgAgent> {
    let mut rng = seed::rng(master_seed, Stream::NetInit, &[stage, 1]);
    DdpgAgent::new(cfg.hidden, cfg.bound, &mut rng)
}

/// Runs DDPG from `agent`. Networks are only updated inside Phase 2 and only
/// once the buffer holds `max(warmup, minibatch)` transitions.
pub fn train_ddpg(
    cfg: &DdpgConfig,
    env: &EnvBundle,
    direction: Direction,
    mut agent: DdpgAgent,
    master_seed: u64,
    stage: u64,
    mut on_episode: impl FnMut(&CurveRecord, &DdpgAgent) -> Result<()>,
) -> Result<DdpgOutcome> {
    cfg.validate()?;
    agent.bound = cfg.bound;
    let bound = cfg.bound;
    let target = direction.target();
    let mut buffer = DdpgReplayBuffer::new(cfg.buffer_capacity);
    let mut batch_rng = seed::rng(master_seed, Stream::DdpgMinibatch, &[stage]);
    let ready = cfg.warmup.max(cfg.minibatch);
    let mut curve = Vec::new();
    let mut last_eval = None;
    let mut episodes_run = 0;

    for episode in 0..cfg.episodes {
        let mut rng = seed::rng(master_seed, Stream::DdpgEpisode, &[stage, episode as u64]);
        let mut noise = NoiseProcess::new(
            cfg.noise,
            cfg.noise_scale * bound * cfg.noise_decay.powi(episode as i32),
            cfg.ou_theta,
        );
        let mut s = env.phase1(direction, &mut rng)?;
        for _ in 0..env.control_steps() {
            let feats = crate::boa::featurize(&s, crate::boa::FeatureMode::Circular);
            let greedy = bound * agent.actor.predict(&feats, None)?[0];
            let a = (greedy + noise.sample(&mut rng)).clamp(-bound, bound);
            let out = env.step(&s, a, target)?;
            buffer.store(Transition {
                state: feats,
                action: a,
                reward: out.reward,
                next: crate::boa::featurize(&out.next, crate::boa::FeatureMode::Circular),
                terminal: out.reached,
            });
            if buffer.len() >= ready {
                let batch = buffer.sample_minibatch(cfg.minibatch, &mut batch_rng)?;
                update_networks(&mut agent, &batch, cfg)?;
            }
            s = out.next;
            if out.reached {
                break;
            }
        }
        episodes_run = episode + 1;

        if episodes_run % cfg.eval_every == 0 || episodes_run == cfg.episodes {
            let eval_seed = seed::derive(master_seed, Stream::Eval, &[stage, episode as u64]);
            let report = evaluate(
                &agent.policy(),
                direction,
                cfg.eval_rollouts,
                eval_seed,
                env,
            )?;
            let rec = CurveRecord::from_report(episodes_run, episodes_run, &report);
            log::info!(
                "ddpg {} F={} episode {episodes_run}: buffer {}, eval success {:.2}, reward {:.1}",
                direction.tag(),
                bound,
                buffer.len(),
                rec.success_rate,
                rec.reward_mean
            );
            on_episode(&rec, &agent)?;
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
    Ok(DdpgOutcome {
        agent,
        curve,
        episodes_run,
        last_eval,
        buffer,
    })
}
