//! Pipeline commands behind the command-line front end. Each command reads
//! its prerequisites from the run directory and writes its artifacts there.

use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use crate::boa::{self, BoaDataset, BoaFit, BoaModel, Grid};
use crate::cem;
use crate::config::{RunConfig, RunLayout};
use crate::ddpg;
use crate::env::{Direction, EnvBundle, Policy};
use crate::error::{Error, Result};
use crate::eval::{self, write_curve, AuditResult, CurveRecord, EvalReport, ExportSummary};
use crate::neural::DenseNet;
use crate::oracle::{build_catalog, AttractorCatalog, AttractorLabel};
use crate::seed::{self, Stream};
use crate::sweep::{sweep_bounds, write_sweep_curve, Algorithm, SweepCurveRecord, Trainers};

fn ensure_parent(path: &Path) -> Result<()> {
    if let Some(dir) = path.parent() {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    Ok(())
}

/// Creates the run directory and writes the effective config into it.
pub fn prepare(cfg: &RunConfig) -> Result<RunLayout> {
    cfg.validate()?;
    let layout = cfg.layout();
    let path = layout.effective_config();
    ensure_parent(&path)?;
    std::fs::write(&path, cfg.to_toml()).map_err(|e| Error::io(&path, e))?;
    Ok(layout)
}

pub fn cmd_catalog(cfg: &RunConfig) -> Result<AttractorCatalog> {
    let layout = prepare(cfg)?;
    let catalog = build_catalog(
        &cfg.duffing,
        &cfg.integrator,
        &cfg.oracle,
        cfg.oracle.catalog_samples,
        cfg.seed,
    )?;
    let path = layout.catalog();
    ensure_parent(&path)?;
    catalog.save(&path)?;
    Ok(catalog)
}

pub fn load_catalog(cfg: &RunConfig) -> Result<AttractorCatalog> {
    let path = cfg.layout().catalog();
    if !path.exists() {
        return Err(Error::Missing {
            path,
            hint: "run the `catalog` command first".into(),
        });
    }
    let catalog = AttractorCatalog::load(&path)?;
    if catalog.params != cfg.duffing || catalog.integrator != cfg.integrator {
        return Err(Error::Config(format!(
            "{} was built with different duffing/integrator settings; rerun `catalog`",
            path.display()
        )));
    }
    Ok(catalog)
}

/// Labels the grid (resuming from the progress file if present), fits the
/// classifier and saves dataset and model.
pub fn cmd_boa(cfg: &RunConfig) -> Result<BoaFit> {
    let layout = prepare(cfg)?;
    let catalog = load_catalog(cfg)?;
    let grid = Grid {
        domain: cfg.oracle.domain,
        resolution: cfg.boa.resolution,
    };
    let progress = layout.dataset_progress();
    ensure_parent(&progress)?;
    let dataset = boa::generate_dataset(&catalog, &cfg.oracle, &grid, Some(&progress))?;
    dataset.save_csv(&layout.dataset())?;
    let fit = boa::fit(&dataset, &cfg.boa, cfg.seed)?;
    fit.model.save(&layout.boa_model())?;
    Ok(fit)
}

pub fn load_env(cfg: &RunConfig) -> Result<EnvBundle> {
    cfg.validate()?;
    let catalog = load_catalog(cfg)?;
    let path = cfg.layout().boa_model();
    if !path.exists() {
        return Err(Error::Missing {
            path,
            hint: "run the `boa` command first".into(),
        });
    }
    let model = BoaModel::load(&path)?;
    Ok(EnvBundle {
        params: cfg.duffing,
        integrator: cfg.integrator,
        episode: cfg.episode,
        catalog,
        boa: model,
    })
}

fn curve_stem(algorithm: Algorithm, direction: Direction, bound: f64) -> String {
    format!("{}_{}_F{bound}", algorithm.tag(), direction.tag())
}

fn trainers(cfg: &RunConfig) -> Trainers {
    let mut t = Trainers {
        cem: cfg.cem.clone(),
        ddpg: cfg.ddpg.clone(),
    };
    t.cem.eval_rollouts = cfg.eval.rollouts;
    t.ddpg.eval_rollouts = cfg.eval.rollouts;
    t
}

#[derive(Debug, Clone)]
pub struct TrainSummary {
    pub policy_path: PathBuf,
    pub curve_path: PathBuf,
    pub curve: Vec<CurveRecord>,
    pub episodes_run: usize,
    pub last_eval: Option<EvalReport>,
}

/// Trains one policy from scratch at `bound` (default: the algorithm's
/// configured bound). The policy file is rewritten after every evaluated
/// episode, so an interrupted run leaves its latest checkpoint behind.
pub fn cmd_train(
    cfg: &RunConfig,
    algorithm: Algorithm,
    direction: Direction,
    bound: Option<f64>,
) -> Result<TrainSummary> {
    let layout = prepare(cfg)?;
    let env = load_env(cfg)?;
    let t = trainers(cfg);
    let policy_path;
    let (curve, episodes_run, last_eval) = match algorithm {
        Algorithm::Cem => {
            let mut c = t.cem;
            c.bound = bound.unwrap_or(c.bound);
            policy_path = layout.policy("cem", direction, c.bound);
            ensure_parent(&policy_path)?;
            let policy = cem::initial_policy(&c, cfg.seed, 0)?;
            let out = cem::train_cem(&c, &env, direction, policy, cfg.seed, 0, |_, p| {
                p.net.save(&policy_path)
            })?;
            out.policy.net.save(&policy_path)?;
            (out.curve, out.episodes_run, out.last_eval)
        }
        Algorithm::Ddpg => {
            let mut d = t.ddpg;
            d.bound = bound.unwrap_or(d.bound);
            policy_path = layout.policy("ddpg", direction, d.bound);
            ensure_parent(&policy_path)?;
            let agent = ddpg::initial_agent(&d, cfg.seed, 0)?;
            let out = ddpg::train_ddpg(&d, &env, direction, agent, cfg.seed, 0, |_, a| {
                a.actor.save(&policy_path)
            })?;
            out.agent.actor.save(&policy_path)?;
            out.agent.critic.save(&layout.critic(direction, d.bound))?;
            (out.curve, out.episodes_run, out.last_eval)
        }
    };
    let bound = match algorithm {
        Algorithm::Cem => bound.unwrap_or(cfg.cem.bound),
        Algorithm::Ddpg => bound.unwrap_or(cfg.ddpg.bound),
    };
    let curve_path = layout.curve(&curve_stem(algorithm, direction, bound));
    ensure_parent(&curve_path)?;
    write_curve(&curve_path, &curve)?;
    Ok(TrainSummary {
        policy_path,
        curve_path,
        curve,
        episodes_run,
        last_eval,
    })
}

#[derive(Debug, Clone)]
pub struct EvalSummary {
    pub report: EvalReport,
    pub audit: AuditResult,
    pub report_path: PathBuf,
}

/// Greedy evaluation of a saved policy, with an oracle audit of a subsample
/// of the rollouts.
pub fn cmd_eval(
    cfg: &RunConfig,
    policy_path: &Path,
    direction: Direction,
    bound: f64,
    rollouts: Option<usize>,
) -> Result<EvalSummary> {
    let layout = prepare(cfg)?;
    if !policy_path.exists() {
        return Err(Error::Missing {
            path: policy_path.to_path_buf(),
            hint: "train a policy first or pass an existing --policy file".into(),
        });
    }
    let env = load_env(cfg)?;
    let policy = Policy::load(policy_path, bound)?;
    let n = rollouts.unwrap_or(cfg.eval.rollouts);
    let eval_seed = seed::derive(cfg.seed, Stream::Eval, &[u64::MAX - 1]);
    let report = eval::evaluate(&policy, direction, n, eval_seed, &env)?;
    let audit = eval::audit(
        &report,
        direction,
        cfg.eval.audit_fraction,
        &cfg.oracle,
        cfg.seed,
        &env,
    )?;
    let stem = policy_path.file_stem().map_or_else(
        || "policy".to_string(),
        |s| s.to_string_lossy().into_owned(),
    );
    let report_path = layout.rollout(&format!("eval_{stem}_{}", direction.tag()));
    ensure_parent(&report_path)?;
    report.write(&report_path)?;
    Ok(EvalSummary {
        report,
        audit,
        report_path,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Figure {
    /// CEM rollouts, both directions at every bound.
    Fig3,
    /// DDPG rollouts, both directions at every bound.
    Fig4,
    /// Learning curves of both algorithms across the bound sweep.
    Fig5,
}

impl Figure {
    pub fn tag(self) -> &'static str {
        match self {
            Figure::Fig3 => "fig3",
            Figure::Fig4 => "fig4",
            Figure::Fig5 => "fig5",
        }
    }
}

impl fmt::Display for Figure {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.tag())
    }
}

impl FromStr for Figure {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "fig3" => Ok(Figure::Fig3),
            "fig4" => Ok(Figure::Fig4),
            "fig5" => Ok(Figure::Fig5),
            _ => Err(Error::Config(format!(
                "unknown figure '{s}' (expected fig3, fig4 or fig5)"
            ))),
        }
    }
}

/// Policies of one warm-started sweep, one per bound, in sweep order.
#[derive(Debug, Clone)]
pub struct SweepArtifacts {
    pub policies: Vec<Policy>,
    pub curve_path: PathBuf,
}

/// Runs the bound sweep for `(algorithm, direction)` unless its curve and
/// every per-bound policy are already in the run directory.
pub fn ensure_sweep(
    cfg: &RunConfig,
    env: &EnvBundle,
    algorithm: Algorithm,
    direction: Direction,
) -> Result<SweepArtifacts> {
    let layout = cfg.layout();
    let curve_path = layout.curve(&format!("sweep_{}_{}", algorithm.tag(), direction.tag()));
    let policy_paths: Vec<PathBuf> = cfg
        .sweep
        .bounds
        .iter()
        .map(|&b| layout.policy(&format!("sweep_{}", algorithm.tag()), direction, b))
        .collect();
    if curve_path.exists() && policy_paths.iter().all(|p| p.exists()) {
        let policies = policy_paths
            .iter()
            .zip(&cfg.sweep.bounds)
            .map(|(p, &b)| Ok(Policy::new(DenseNet::load(p)?, b)))
            .collect::<Result<Vec<_>>>()?;
        log::info!("reusing {} sweep for {}", algorithm, direction.tag());
        return Ok(SweepArtifacts {
            policies,
            curve_path,
        });
    }
    for p in &policy_paths {
        ensure_parent(p)?;
    }
    let out = sweep_bounds(
        algorithm,
        &cfg.sweep,
        &trainers(cfg),
        env,
        direction,
        cfg.seed,
        |stage, _, _, policy| policy.net.save(&policy_paths[stage]),
    )?;
    for (stage, p) in out.stages.iter().zip(&policy_paths) {
        stage.policy.net.save(p)?;
        log::info!(
            "{} {} F={}: {} episodes, success {:.2}",
            algorithm,
            direction.tag(),
            stage.bound,
            stage.episodes_run,
            stage.final_report.success_rate
        );
    }
    ensure_parent(&curve_path)?;
    write_sweep_curve(&curve_path, &out.curve)?;
    Ok(SweepArtifacts {
        policies: out.stages.into_iter().map(|s| s.policy).collect(),
        curve_path,
    })
}

/// Builds catalog and classifier when missing.
pub fn ensure_env(cfg: &RunConfig) -> Result<EnvBundle> {
    let layout = cfg.layout();
    if !layout.catalog().exists() {
        cmd_catalog(cfg)?;
    }
    if !layout.boa_model().exists() {
        cmd_boa(cfg)?;
    }
    load_env(cfg)
}

#[derive(Debug, Clone)]
pub struct ReproduceOutput {
    pub files: Vec<PathBuf>,
    /// Rollout summaries (fig3/fig4 only), with the bound and direction.
    pub rollouts: Vec<(Direction, f64, ExportSummary)>,
}

pub fn cmd_reproduce(cfg: &RunConfig, figure: Figure) -> Result<ReproduceOutput> {
    let layout = prepare(cfg)?;
    let env = ensure_env(cfg)?;
    let dir = layout.figure_dir(figure.tag());
    std::fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
    let mut files = Vec::new();
    let mut rollouts = Vec::new();
    match figure {
        Figure::Fig3 | Figure::Fig4 => {
            let algorithm = if figure == Figure::Fig3 {
                Algorithm::Cem
            } else {
                Algorithm::Ddpg
            };
            for direction in Direction::BOTH {
                let sweep = ensure_sweep(cfg, &env, algorithm, direction)?;
                for policy in &sweep.policies {
                    let path = dir.join(format!("{}_F{}.csv", direction.tag(), policy.bound));
                    let summary = eval::rollout_export(policy, direction, &path, cfg.seed, &env)?;
                    files.push(path);
                    rollouts.push((direction, policy.bound, summary));
                }
            }
        }
        Figure::Fig5 => {
            for algorithm in Algorithm::BOTH {
                let sweep = ensure_sweep(cfg, &env, algorithm, cfg.sweep.direction)?;
                let curve = read_sweep_curve(&sweep.curve_path)?;
                let success = dir.join(format!("{}_success.csv", algorithm.tag()));
                let reward = dir.join(format!("{}_reward.csv", algorithm.tag()));
                write_figure_curves(&curve, &success, &reward)?;
                files.push(success);
                files.push(reward);
            }
        }
    }
    Ok(ReproduceOutput { files, rollouts })
}

fn write_figure_curves(curve: &[SweepCurveRecord], success: &Path, reward: &Path) -> Result<()> {
    let mut s = String::from("bound,episode,samples_total,success_rate\n");
    let mut r = String::from("bound,episode,samples_total,reward_mean,reward_std\n");
    for c in curve {
        let x = &c.record;
        s.push_str(&format!(
            "{},{},{},{}\n",
            c.bound, x.episode, x.samples_total, x.success_rate
        ));
        r.push_str(&format!(
            "{},{},{},{},{}\n",
            c.bound, x.episode, x.samples_total, x.reward_mean, x.reward_std
        ));
    }
    std::fs::write(success, s).map_err(|e| Error::io(success, e))?;
    std::fs::write(reward, r).map_err(|e| Error::io(reward, e))
}

pub fn read_sweep_curve(path: &Path) -> Result<Vec<SweepCurveRecord>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut lines = text.lines();
    if lines.next() != Some(crate::sweep::SWEEP_CURVE_HEADER) {
        return Err(Error::parse(path, "unexpected sweep curve header"));
    }
    lines
        .enumerate()
        .map(|(i, line)| {
            let f: Vec<&str> = line.split(',').collect();
            let bad = || Error::parse(path, format!("line {}: malformed row", i + 2));
            if f.len() != 6 {
                return Err(bad());
            }
            let num = |k: usize| f[k].parse::<f64>().map_err(|_| bad());
            let int = |k: usize| f[k].parse::<usize>().map_err(|_| bad());
            Ok(SweepCurveRecord {
                bound: num(0)?,
                record: CurveRecord {
                    episode: int(1)?,
                    samples_total: int(2)?,
                    success_rate: num(3)?,
                    reward_mean: num(4)?,
                    reward_std: num(5)?,
                },
            })
        })
        .collect()
}

/// The label-level summary printed by `catalog`.
pub fn describe_catalog(c: &AttractorCatalog) -> String {
    let gap = c.la.amplitude - c.sa.amplitude;
    format!(
        "attractors: 2\nSA amplitude: {:.4}\nLA amplitude: {:.4}\nthreshold: {:.4}\ngap / smaller amplitude: {:.3}\n",
        c.record(AttractorLabel::SA).amplitude,
        c.record(AttractorLabel::LA).amplitude,
        c.threshold,
        gap / c.sa.amplitude.min(c.la.amplitude)
    )
}

/// Loads the labeled grid of a finished `boa` run.
pub fn load_dataset(cfg: &RunConfig) -> Result<BoaDataset> {
    BoaDataset::load_csv(&cfg.layout().dataset())
}
