mod common;

use attractor_rl::cem::{self, CemConfig};
use attractor_rl::ddpg::{self, DdpgConfig};
use attractor_rl::env::{Direction, Policy};
use attractor_rl::eval::{self, PhaseTag};
use attractor_rl::neural::{Activation, DenseNet};
use attractor_rl::oracle::{amplitude, AttractorLabel};
use attractor_rl::sweep::{self, Algorithm, SweepConfig, Trainers};

fn small_cem() -> CemConfig {
    CemConfig {
        episodes: 3,
        samples: 6,
        eval_rollouts: 5,
        ..CemConfig::default()
    }
}

fn small_ddpg() -> DdpgConfig {
    DdpgConfig {
        episodes: 4,
        hidden: 16,
        warmup: 40,
        minibatch: 16,
        eval_rollouts: 5,
        ..DdpgConfig::default()
    }
}

fn trained_cem(direction: Direction) -> Policy {
    let env = common::env();
    let cfg = CemConfig {
        stop_at_success: Some(0.9),
        eval_rollouts: 20,
        ..CemConfig::default()
    };
    let p = cem::initial_policy(&cfg, 1, 0).unwrap();
    cem::train_cem(&cfg, env, direction, p, 1, 0, |_, _| Ok(()))
        .unwrap()
        .policy
}

#[test]
fn cem_with_zero_episodes_returns_the_initial_policy() {
    let env = common::env();
    let cfg = CemConfig {
        episodes: 0,
        ..small_cem()
    };
    let p = cem::initial_policy(&cfg, 3, 0).unwrap();
    let out = cem::train_cem(&cfg, env, Direction::Sa2la, p.clone(), 3, 0, |_, _| Ok(())).unwrap();
    assert_eq!(out.policy, p);
    assert!(out.curve.is_empty());
}

#[test]
fn ddpg_with_zero_episodes_returns_the_initial_actor() {
    let env = common::env();
    let cfg = DdpgConfig {
        episodes: 0,
        ..small_ddpg()
    };
    let a = ddpg::initial_agent(&cfg, 3, 0).unwrap();
    let out =
        ddpg::train_ddpg(&cfg, env, Direction::Sa2la, a.clone(), 3, 0, |_, _| Ok(())).unwrap();
    assert_eq!(out.agent.actor, a.actor);
}

#[test]
fn cem_curve_has_one_row_per_episode_and_counts_samples() {
    let env = common::env();
    let cfg = small_cem();
    let p = cem::initial_policy(&cfg, 2, 0).unwrap();
    let mut seen = 0;
    let out = cem::train_cem(&cfg, env, Direction::Sa2la, p, 2, 0, |_, _| {
        seen += 1;
        Ok(())
    })
    .unwrap();
    assert_eq!(out.curve.len(), cfg.episodes);
    assert_eq!(seen, cfg.episodes);
    for (i, r) in out.curve.iter().enumerate() {
        assert_eq!(r.episode, i + 1);
        assert_eq!(r.samples_total, (i + 1) * cfg.samples);
        assert!((0.0..=1.0).contains(&r.success_rate) && r.reward_std >= 0.0);
    }
}

#[test]
fn ddpg_curve_counts_one_sample_per_episode() {
    let env = common::env();
    let cfg = small_ddpg();
    let a = ddpg::initial_agent(&cfg, 2, 0).unwrap();
    let out = ddpg::train_ddpg(&cfg, env, Direction::Sa2la, a, 2, 0, |_, _| Ok(())).unwrap();
    assert_eq!(out.curve.len(), cfg.episodes);
    for (i, r) in out.curve.iter().enumerate() {
        assert_eq!(r.samples_total, i + 1);
    }
}

#[test]
fn training_is_bit_reproducible() {
    let env = common::env();
    let cfg = small_cem();
    let run = || {
        let p = cem::initial_policy(&cfg, 5, 0).unwrap();
        cem::train_cem(&cfg, env, Direction::La2sa, p, 5, 0, |_, _| Ok(())).unwrap()
    };
    let (a, b) = (run(), run());
    assert_eq!(a.policy, b.policy);
    assert_eq!(a.curve, b.curve);

    let cfg = small_ddpg();
    let run = || {
        let ag = ddpg::initial_agent(&cfg, 5, 0).unwrap();
        ddpg::train_ddpg(&cfg, env, Direction::La2sa, ag, 5, 0, |_, _| Ok(())).unwrap()
    };
    let (a, b) = (run(), run());
    assert_eq!(a.agent.actor, b.agent.actor);
    assert_eq!(a.agent.critic, b.agent.critic);
    assert_eq!(a.agent.target_critic, b.agent.target_critic);
    assert_eq!(a.curve, b.curve);
}

#[test]
fn do_nothing_policy_never_switches() {
    let env = common::env();
    let zero = DenseNet::zeros(
        &[4, 8, 8, 1],
        &[Activation::Relu, Activation::Relu, Activation::Tanh],
        None,
    )
    .unwrap();
    let policy = Policy::new(zero, 4.0);
    for direction in [Direction::Sa2la, Direction::La2sa] {
        let r = eval::evaluate(&policy, direction, 10, 1, env).unwrap();
        assert_eq!(r.success_rate, 0.0);
        assert!(r
            .records
            .iter()
            .all(|x| x.reward == 0.0 && x.steps == env.control_steps()));
    }
}

#[test]
fn evaluation_is_deterministic_and_accounts_rewards() {
    let env = common::env();
    let policy = trained_cem(Direction::Sa2la);
    let a = eval::evaluate(&policy, Direction::Sa2la, 20, 9, env).unwrap();
    let b = eval::evaluate(&policy, Direction::Sa2la, 20, 9, env).unwrap();
    assert_eq!(a, b);
    assert!(a.success_rate > 0.0);
    for r in &a.records {
        let bonus = if r.success { env.episode.r_end } else { 0.0 };
        assert!((r.reward - (bonus - env.integrator.dt_control * r.action_abs_sum)).abs() < 1e-9);
        assert!(r.action_abs_sum <= policy.bound * r.steps as f64 + 1e-12);
    }
}

#[test]
fn rollout_export_segments() {
    let env = common::env();
    let policy = trained_cem(Direction::Sa2la);
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("rollout.csv");
    let s = eval::rollout_export(&policy, Direction::Sa2la, &path, 1, env).unwrap();
    let text = std::fs::read_to_string(&path).unwrap();
    assert_eq!(text.lines().next(), Some("t,x,v,phi,a,phase_tag"));
    assert_eq!(text.lines().count(), s.rows.len() + 1);
    for r in &s.rows {
        match r.tag {
            PhaseTag::Free | PhaseTag::Settle => assert_eq!(r.action, 0.0),
            PhaseTag::Control => assert!(r.action.abs() <= policy.bound),
        }
    }
    assert!(s.success);
    // The settled amplitude matches the target attractor, measured here
    // from the exported rows.
    let period = env.params.forcing_period();
    let end = s.rows.last().unwrap().t;
    let tail: Vec<_> = s
        .rows
        .iter()
        .filter(|r| r.tag == PhaseTag::Settle && r.t >= end - 5.0 * period)
        .map(|r| r.state)
        .collect();
    let la = env.catalog.record(AttractorLabel::LA).amplitude;
    assert!(
        (amplitude(&tail) - la).abs() < 0.02 * la,
        "{} vs {la}",
        amplitude(&tail)
    );
}

#[test]
fn warm_start_reproduces_outputs_at_the_new_bound() {
    let policy = trained_cem(Direction::Sa2la);
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("pi.net");
    policy.net.save(&path).unwrap();
    let loaded = Policy::load(&path, 2.0).unwrap();
    let env = common::env();
    for s in env
        .catalog
        .record(AttractorLabel::SA)
        .orbit
        .iter()
        .step_by(50)
    {
        assert_eq!(
            loaded.action(s).unwrap(),
            2.0 * policy.action(s).unwrap() / 4.0
        );
    }
}

#[test]
fn single_bound_sweep_equals_plain_training() {
    let env = common::env();
    let trainers = Trainers {
        cem: small_cem(),
        ddpg: small_ddpg(),
    };
    let cfg = SweepConfig {
        bounds: vec![4.0],
        ..SweepConfig::default()
    };
    let out = sweep::sweep_bounds(
        Algorithm::Cem,
        &cfg,
        &trainers,
        env,
        Direction::Sa2la,
        7,
        |_, _, _, _| Ok(()),
    )
    .unwrap();
    let p = cem::initial_policy(&trainers.cem, 7, 0).unwrap();
    let plain =
        cem::train_cem(&trainers.cem, env, Direction::Sa2la, p, 7, 0, |_, _| Ok(())).unwrap();
    assert_eq!(out.stages.len(), 1);
    assert_eq!(out.stages[0].policy, plain.policy);
    let curve: Vec<_> = out.curve.iter().map(|r| r.record).collect();
    assert_eq!(curve, plain.curve);
}

#[test]
fn sweep_curves_are_cumulative() {
    let env = common::env();
    let trainers = Trainers {
        cem: small_cem(),
        ddpg: small_ddpg(),
    };
    let cfg = SweepConfig {
        bounds: vec![4.0, 2.0],
        episodes_per_bound: Some(2),
        ..SweepConfig::default()
    };
    let out = sweep::sweep_bounds(
        Algorithm::Ddpg,
        &cfg,
        &trainers,
        env,
        Direction::Sa2la,
        1,
        |_, _, _, _| Ok(()),
    )
    .unwrap();
    let episodes: Vec<usize> = out.curve.iter().map(|r| r.record.episode).collect();
    assert_eq!(episodes, vec![1, 2, 3, 4]);
    let bounds: Vec<f64> = out.curve.iter().map(|r| r.bound).collect();
    assert_eq!(bounds, vec![4.0, 4.0, 2.0, 2.0]);
    assert_eq!(out.stages[1].policy.bound, 2.0);
}

#[test]
fn warm_start_beats_scratch_at_the_tighter_bound() {
    let env = common::env();
    let trainers = Trainers {
        cem: CemConfig {
            stop_at_success: Some(0.9),
            eval_rollouts: 20,
            ..CemConfig::default()
        },
        ddpg: DdpgConfig::default(),
    };
    let (mut warm, mut scratch) = (0.0, 0.0);
    for seed in 1..=3 {
        // Train at F = 4, then compare the episode-0 evaluations at F = 2.
        let p4 = {
            let c = CemConfig {
                bound: 4.0,
                ..trainers.cem.clone()
            };
            let p = cem::initial_policy(&c, seed, 0).unwrap();
            cem::train_cem(&c, env, Direction::Sa2la, p, seed, 0, |_, _| Ok(()))
                .unwrap()
                .policy
        };
        let warm_policy = Policy::new(p4.net, 2.0);
        let fresh = cem::initial_policy(
            &CemConfig {
                bound: 2.0,
                ..trainers.cem.clone()
            },
            seed,
            1,
        )
        .unwrap();
        warm += eval::evaluate(&warm_policy, Direction::Sa2la, 20, seed, env)
            .unwrap()
            .success_rate;
        scratch += eval::evaluate(&fresh, Direction::Sa2la, 20, seed, env)
            .unwrap()
            .success_rate;
    }
    assert!(warm > scratch, "warm {warm} vs scratch {scratch}");
}
