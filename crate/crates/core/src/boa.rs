//! Basin-of-attraction classifier: an RBF support vector machine trained on
//! oracle labels over a regular grid of initial conditions. Once trained it
//! replaces the long settle integration when the reward needs to know whether
//! a state already lies in the target basin.

use std::f64::consts::{PI, TAU};
use std::fs::{File, OpenOptions};
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dynamics::SimState;
use crate::error::{Error, Result};
use crate::oracle::{AttractorCatalog, AttractorLabel, OracleConfig, StateDomain};
use crate::seed::{self, Stream};
use crate::svm::{self, Features, SmoConfig};

const X_SCALE: f64 = 10.0;
const V_SCALE: f64 = 15.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum FeatureMode {
    /// `(x/10, v/15, cos phi, sin phi)`: continuous across the phase wrap.
    #[default]
    Circular,
    /// `(x/10, v/15, phi/pi - 1, 0)`: the phase used as a plain coordinate.
    Raw,
}

impl FeatureMode {
    fn tag(self) -> &'static str {
        match self {
            FeatureMode::Circular => "circular",
            FeatureMode::Raw => "raw",
        }
    }
}

pub fn featurize(state: &SimState, mode: FeatureMode) -> Features {
    let x = state.x / X_SCALE;
    let v = state.v / V_SCALE;
    match mode {
        FeatureMode::Circular => [x, v, state.phi.cos(), state.phi.sin()],
        FeatureMode::Raw => [x, v, state.phi / PI - 1.0, 0.0],
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BoaConfig {
    /// Grid points per axis.
    pub resolution: usize,
    pub c: f64,
    pub gamma: f64,
    pub features: FeatureMode,
    /// Pick C and gamma from the grids below on a validation split.
    pub grid_search: bool,
    pub c_grid: Vec<f64>,
    pub gamma_grid: Vec<f64>,
    /// Fraction of the dataset held out for the reported accuracy.
    pub holdout: f64,
    pub tolerance: f64,
}

impl Default for BoaConfig {
    fn default() -> Self {
        Self {
            resolution: 20,
            c: 10.0,
            gamma: 1.0,
            features: FeatureMode::Circular,
            grid_search: true,
            c_grid: vec![1.0, 10.0, 100.0],
            gamma_grid: vec![0.5, 1.0, 2.0],
            holdout: 0.2,
            tolerance: 1e-3,
        }
    }
}

/// Regular grid: `x` and `v` include both endpoints, the phase takes
/// `resolution` equally spaced values in `[0, 2pi)` so that no point is
/// duplicated across the wrap.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Grid {
    pub domain: StateDomain,
    pub resolution: usize,
}

impl Grid {
    pub fn len(&self) -> usize {
        self.resolution.pow(3)
    }

    pub fn is_empty(&self) -> bool {
        self.resolution == 0
    }

    pub fn point(&self, index: usize) -> SimState {
        let n = self.resolution;
        let (ix, rest) = (index / (n * n), index % (n * n));
        let (iv, ip) = (rest / n, rest % n);
        let lin = |lo: f64, hi: f64, i: usize| {
            if n == 1 {
                0.5 * (lo + hi)
            } else {
                lo + (hi - lo) * i as f64 / (n - 1) as f64
            }
        };
        SimState {
            x: lin(self.domain.x_min, self.domain.x_max, ix),
            v: lin(self.domain.v_min, self.domain.v_max, iv),
            phi: TAU * ip as f64 / n as f64,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct BoaDataset {
    pub states: Vec<SimState>,
    pub labels: Vec<AttractorLabel>,
}

impl BoaDataset {
    pub fn len(&self) -> usize {
        self.states.len()
    }

    pub fn is_empty(&self) -> bool {
        self.states.is_empty()
    }

    pub fn fraction(&self, label: AttractorLabel) -> f64 {
        self.labels.iter().filter(|&&l| l == label).count() as f64 / self.len().max(1) as f64
    }

    /// Seeded random split; the first part holds `1 - holdout` of the points.
    pub fn split(&self, holdout: f64, master_seed: u64, tag: u64) -> (BoaDataset, BoaDataset) {
        let mut idx: Vec<usize> = (0..self.len()).collect();
        idx.shuffle(&mut seed::rng(master_seed, Stream::DatasetSplit, &[tag]));
        let n_test = ((self.len() as f64) * holdout).round() as usize;
        let pick = |ids: &[usize]| BoaDataset {
            states: ids.iter().map(|&i| self.states[i]).collect(),
            labels: ids.iter().map(|&i| self.labels[i]).collect(),
        };
        (pick(&idx[n_test..]), pick(&idx[..n_test]))
    }

    pub fn save_csv(&self, path: &Path) -> Result<()> {
        let mut out = String::from("x,v,phi,label\n");
        for (s, l) in self.states.iter().zip(&self.labels) {
            out.push_str(&format!("{},{},{},{l}\n", s.x, s.v, s.phi));
        }
        std::fs::write(path, out).map_err(|e| Error::io(path, e))
    }

    pub fn load_csv(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut lines = text.lines();
        if lines.next().map(str::trim) != Some("x,v,phi,label") {
            return Err(Error::parse(path, "expected header x,v,phi,label"));
        }
        let mut ds = BoaDataset::default();
        for (n, line) in lines.enumerate() {
            let cols: Vec<&str> = line.split(',').collect();
            let bad = || Error::parse(path, format!("line {}: malformed row", n + 2));
            if cols.len() != 4 {
                return Err(bad());
            }
            let num = |s: &str| s.trim().parse::<f64>().map_err(|_| bad());
            ds.states.push(SimState {
                x: num(cols[0])?,
                v: num(cols[1])?,
                phi: num(cols[2])?,
            });
            ds.labels.push(cols[3].parse().map_err(|_| bad())?);
        }
        Ok(ds)
    }
}

fn read_progress(path: &Path) -> Result<Vec<Option<AttractorLabel>>> {
    let file = match File::open(path) {
        Ok(f) => f,
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => return Ok(Vec::new()),
        Err(e) => return Err(Error::io(path, e)),
    };
    let mut done = Vec::new();
    for line in BufReader::new(file).lines() {
        let line = line.map_err(|e| Error::io(path, e))?;
        // an interrupted write leaves a torn last line; stop there
        let Some((idx, label)) = line.split_once(',') else {
            break;
        };
        let Ok(idx) = idx.parse::<usize>() else { break };
        if idx != done.len() {
            break;
        }
        match label {
            "-" => done.push(None),
            l => match l.parse() {
                Ok(l) => done.push(Some(l)),
                Err(_) => break,
            },
        }
    }
    Ok(done)
}

/// Labels every grid point with the oracle. Points whose amplitude is
/// ambiguous are retried with twice the settle time and dropped if still
/// ambiguous. With a checkpoint path, progress is appended there chunk by
/// chunk and an interrupted run resumes where it stopped.
pub fn generate_dataset(
    catalog: &AttractorCatalog,
    oracle: &OracleConfig,
    grid: &Grid,
    checkpoint: Option<&Path>,
) -> Result<BoaDataset> {
    const CHUNK: usize = 512;
    let mut done = match checkpoint {
        Some(p) => read_progress(p)?,
        None => Vec::new(),
    };
    done.truncate(grid.len());
    if !done.is_empty() {
        log::info!(
            "resuming grid labeling at point {}/{}",
            done.len(),
            grid.len()
        );
    }
    let mut writer = match checkpoint {
        Some(p) => {
            // rewrite the clean prefix, dropping any torn tail
            let mut f = File::create(p).map_err(|e| Error::io(p, e))?;
            let mut buf = String::new();
            for (i, l) in done.iter().enumerate() {
                push_progress(&mut buf, i, *l);
            }
            f.write_all(buf.as_bytes()).map_err(|e| Error::io(p, e))?;
            drop(f);
            Some((
                OpenOptions::new()
                    .append(true)
                    .open(p)
                    .map_err(|e| Error::io(p, e))?,
                PathBuf::from(p),
            ))
        }
        None => None,
    };

    while done.len() < grid.len() {
        let start = done.len();
        let end = (start + CHUNK).min(grid.len());
        let labels: Vec<Option<AttractorLabel>> = (start..end)
            .into_par_iter()
            .map(|i| label_point(catalog, oracle, &grid.point(i)))
            .collect::<Result<_>>()?;
        if let Some((f, p)) = writer.as_mut() {
            let mut buf = String::new();
            for (k, l) in labels.iter().enumerate() {
                push_progress(&mut buf, start + k, *l);
            }
            f.write_all(buf.as_bytes()).map_err(|e| Error::io(&*p, e))?;
            f.flush().map_err(|e| Error::io(&*p, e))?;
        }
        done.extend(labels);
        log::debug!("labeled {}/{}", done.len(), grid.len());
    }

    let mut ds = BoaDataset::default();
    for (i, l) in done.into_iter().enumerate() {
        if let Some(l) = l {
            ds.states.push(grid.point(i));
            ds.labels.push(l);
        }
    }
    Ok(ds)
}

fn push_progress(buf: &mut String, index: usize, label: Option<AttractorLabel>) {
    match label {
        Some(l) => buf.push_str(&format!("{index},{l}\n")),
        None => buf.push_str(&format!("{index},-\n")),
    }
}

fn label_point(
    catalog: &AttractorCatalog,
    oracle: &OracleConfig,
    s: &SimState,
) -> Result<Option<AttractorLabel>> {
    match catalog.label(s, oracle) {
        Ok(l) => Ok(Some(l)),
        Err(Error::AmbiguousLabel { .. }) => {
            match catalog.label_with(s, 2.0 * oracle.settle_periods, oracle) {
                Ok(l) => Ok(Some(l)),
                Err(Error::AmbiguousLabel { amplitude, .. }) => {
                    log::warn!(
                        "dropping grid point ({}, {}, {}): amplitude {amplitude} still ambiguous",
                        s.x,
                        s.v,
                        s.phi
                    );
                    Ok(None)
                }
                Err(e) => Err(e),
            }
        }
        Err(e) => Err(e),
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BoaModel {
    pub features: FeatureMode,
    pub x_scale: f64,
    pub v_scale: f64,
    pub gamma: f64,
    pub c: f64,
    pub rho: f64,
    pub support: Vec<Features>,
    pub coef: Vec<f64>,
    pub training_accuracy: f64,
}

impl BoaModel {
    pub fn featurize(&self, s: &SimState) -> Features {
        let mut f = featurize(s, self.features);
        // stored scales may differ from the defaults in hand-made models
        f[0] = s.x / self.x_scale;
        f[1] = s.v / self.v_scale;
        f
    }

    pub fn decision(&self, s: &SimState) -> f64 {
        let f = self.featurize(s);
        self.support
            .iter()
            .zip(&self.coef)
            .map(|(sv, &c)| c * svm::rbf(sv, &f, self.gamma))
            .sum::<f64>()
            - self.rho
    }

    /// Positive decision values are LA; zero and below are SA.
    pub fn predict(&self, s: &SimState) -> AttractorLabel {
        if self.decision(s) > 0.0 {
            AttractorLabel::LA
        } else {
            AttractorLabel::SA
        }
    }

    pub fn accuracy(&self, ds: &BoaDataset) -> f64 {
        let hits = ds
            .states
            .iter()
            .zip(&ds.labels)
            .filter(|(s, &l)| self.predict(s) == l)
            .count();
        hits as f64 / ds.len().max(1) as f64
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut out = String::from("BOA1\n");
        out.push_str(&format!("features {}\n", self.features.tag()));
        out.push_str(&format!("scale {} {}\n", self.x_scale, self.v_scale));
        out.push_str(&format!("kernel rbf {}\n", self.gamma));
        out.push_str(&format!("c {}\n", self.c));
        out.push_str(&format!("rho {}\n", self.rho));
        out.push_str(&format!("training_accuracy {}\n", self.training_accuracy));
        out.push_str(&format!("support {}\n", self.support.len()));
        for (sv, c) in self.support.iter().zip(&self.coef) {
            out.push_str(&format!("{} {} {} {} {}\n", c, sv[0], sv[1], sv[2], sv[3]));
        }
        std::fs::write(path, out).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut lines = text.lines();
        let header = lines.next().unwrap_or_default();
        if header != "BOA1" {
            return Err(Error::Version {
                path: path.into(),
                expected: "BOA1",
                found: header.into(),
            });
        }
        let bad = |m: &str| Error::parse(path, m.to_string());
        let mut field = |tag: &str| -> Result<Vec<String>> {
            let line = lines.next().ok_or_else(|| bad("unexpected end of file"))?;
            let mut it = line.split_whitespace();
            if it.next() != Some(tag) {
                return Err(bad(&format!("expected `{tag}` line")));
            }
            Ok(it.map(String::from).collect())
        };
        let num = |s: &str| s.parse::<f64>().map_err(|_| bad("bad number"));
        let features = match field("features")?.as_slice() {
            [m] if m == "circular" => FeatureMode::Circular,
            [m] if m == "raw" => FeatureMode::Raw,
            _ => return Err(bad("unknown feature mode")),
        };
        let scale = field("scale")?;
        let kernel = field("kernel")?;
        if scale.len() != 2 || kernel.len() != 2 || kernel[0] != "rbf" {
            return Err(bad("malformed scale or kernel line"));
        }
        let one = |v: Vec<String>| -> Result<f64> {
            match v.as_slice() {
                [s] => num(s),
                _ => Err(bad("expected one value")),
            }
        };
        let c = one(field("c")?)?;
        let rho = one(field("rho")?)?;
        let training_accuracy = one(field("training_accuracy")?)?;
        let count = one(field("support")?)? as usize;
        let mut support = Vec::with_capacity(count);
        let mut coef = Vec::with_capacity(count);
        for _ in 0..count {
            let line = lines
                .next()
                .ok_or_else(|| bad("truncated support vectors"))?;
            let v: Vec<f64> = line.split_whitespace().map(num).collect::<Result<_>>()?;
            if v.len() != 5 {
                return Err(bad("support vector row needs 5 values"));
            }
            coef.push(v[0]);
            support.push([v[1], v[2], v[3], v[4]]);
        }
        Ok(Self {
            features,
            x_scale: num(&scale[0])?,
            v_scale: num(&scale[1])?,
            gamma: num(&kernel[1])?,
            c,
            rho,
            support,
            coef,
            training_accuracy,
        })
    }
}

/// Trains one classifier with fixed hyperparameters.
pub fn train(
    ds: &BoaDataset,
    c: f64,
    gamma: f64,
    mode: FeatureMode,
    tolerance: f64,
) -> Result<BoaModel> {
    let x: Vec<Features> = ds.states.iter().map(|s| featurize(s, mode)).collect();
    let y: Vec<f64> = ds.labels.iter().map(|l| l.sign()).collect();
    let sol = svm::train(
        &x,
        &y,
        &SmoConfig {
            c,
            gamma,
            tolerance,
            ..SmoConfig::default()
        },
    )?;
    log::debug!(
        "SMO C={c} gamma={gamma}: {} support vectors after {} iterations",
        sol.support.len(),
        sol.iterations
    );
    let mut model = BoaModel {
        features: mode,
        x_scale: X_SCALE,
        v_scale: V_SCALE,
        gamma,
        c,
        rho: sol.rho,
        support: sol.support,
        coef: sol.coef,
        training_accuracy: 0.0,
    };
    model.training_accuracy = model.accuracy(ds);
    Ok(model)
}

#[derive(Debug, Clone, PartialEq)]
pub struct Selection {
    pub c: f64,
    pub gamma: f64,
    pub validation_accuracy: f64,
}

/// Grid search over `(C, gamma)` on an internal validation split of `ds`.
/// Ties keep the earlier grid entry.
pub fn select_hyperparameters(
    ds: &BoaDataset,
    cfg: &BoaConfig,
    master_seed: u64,
) -> Result<Selection> {
    let (fit, val) = ds.split(0.2, master_seed, 1);
    let mut best: Option<Selection> = None;
    for &c in &cfg.c_grid {
        for &gamma in &cfg.gamma_grid {
            let model = match train(&fit, c, gamma, cfg.features, cfg.tolerance) {
                Ok(m) => m,
                Err(Error::Nonconvergence { iterations }) => {
                    log::warn!("C={c} gamma={gamma}: no convergence after {iterations} iterations");
                    continue;
                }
                Err(e) => return Err(e),
            };
            let acc = model.accuracy(&val);
            log::info!("C={c} gamma={gamma}: validation accuracy {acc:.4}");
            if best.as_ref().is_none_or(|b| acc > b.validation_accuracy) {
                best = Some(Selection {
                    c,
                    gamma,
                    validation_accuracy: acc,
                });
            }
        }
    }
    best.ok_or(Error::Nonconvergence { iterations: 0 })
}

/// Result of the full classifier pipeline on one dataset.
#[derive(Debug, Clone)]
pub struct BoaFit {
    pub model: BoaModel,
    pub holdout_accuracy: f64,
    pub train_len: usize,
    pub test_len: usize,
}

/// Splits off a held-out part, optionally grid-searches the hyperparameters
/// on the rest, trains the final model and scores it on the held-out part.
pub fn fit(ds: &BoaDataset, cfg: &BoaConfig, master_seed: u64) -> Result<BoaFit> {
    if !AttractorLabel::ALL.iter().all(|l| ds.labels.contains(l)) {
        return Err(Error::SingleClass);
    }
    let (train_set, test_set) = ds.split(cfg.holdout, master_seed, 0);
    let (c, gamma) = if cfg.grid_search && train_set.len() >= 50 {
        let s = select_hyperparameters(&train_set, cfg, master_seed)?;
        (s.c, s.gamma)
    } else {
        (cfg.c, cfg.gamma)
    };
    let model = train(&train_set, c, gamma, cfg.features, cfg.tolerance)?;
    let holdout_accuracy = if test_set.is_empty() {
        model.training_accuracy
    } else {
        model.accuracy(&test_set)
    };
    Ok(BoaFit {
        model,
        holdout_accuracy,
        train_len: train_set.len(),
        test_len: test_set.len(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn featurize_examples() {
        assert_eq!(
            featurize(&SimState::new(0.0, 0.0, 0.0), FeatureMode::Circular),
            [0.0, 0.0, 1.0, 0.0]
        );
        let f = featurize(
            &SimState {
                x: 10.0,
                v: -15.0,
                phi: PI,
            },
            FeatureMode::Circular,
        );
        assert_eq!(&f[..2], &[1.0, -1.0]);
        assert!((f[2] + 1.0).abs() < 1e-15 && f[3].abs() < 1e-15);
        let a = featurize(
            &SimState {
                x: 1.0,
                v: 2.0,
                phi: 0.7,
            },
            FeatureMode::Circular,
        );
        let b = featurize(
            &SimState {
                x: 1.0,
                v: 2.0,
                phi: 0.7 + TAU,
            },
            FeatureMode::Circular,
        );
        for k in 0..4 {
            assert!((a[k] - b[k]).abs() < 1e-15);
        }
    }

    #[test]
    fn grid_layout() {
        let g = Grid {
            domain: StateDomain::default(),
            resolution: 2,
        };
        assert_eq!(g.len(), 8);
        assert_eq!(
            g.point(0),
            SimState {
                x: -10.0,
                v: -15.0,
                phi: 0.0
            }
        );
        assert_eq!(
            g.point(7),
            SimState {
                x: 10.0,
                v: 15.0,
                phi: PI
            }
        );
        let g50 = Grid {
            domain: StateDomain::default(),
            resolution: 50,
        };
        assert_eq!(g50.len(), 125_000);
        assert!((0..g50.len())
            .step_by(997)
            .all(|i| g50.domain.contains(&g50.point(i))));
    }

    fn toy_dataset() -> BoaDataset {
        // LA outside a radius, SA inside
        let mut ds = BoaDataset::default();
        for i in 0..15 {
            for j in 0..15 {
                let s = SimState {
                    x: -10.0 + 20.0 * i as f64 / 14.0,
                    v: -15.0 + 30.0 * j as f64 / 14.0,
                    phi: (i * j) as f64 * 0.1 % TAU,
                };
                let r = (s.x / 10.0).powi(2) + (s.v / 15.0).powi(2);
                ds.states.push(s);
                ds.labels.push(if r > 0.5 {
                    AttractorLabel::LA
                } else {
                    AttractorLabel::SA
                });
            }
        }
        ds
    }

    #[test]
    fn model_text_round_trip_preserves_predictions() {
        let ds = toy_dataset();
        let model = train(&ds, 10.0, 2.0, FeatureMode::Circular, 1e-3).unwrap();
        assert!(model.training_accuracy > 0.95);
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.boa");
        model.save(&path).unwrap();
        let back = BoaModel::load(&path).unwrap();
        assert_eq!(back, model);
        for s in &ds.states {
            assert_eq!(back.decision(s).to_bits(), model.decision(s).to_bits());
        }
    }

    #[test]
    fn truncated_or_wrong_version_model_fails_cleanly() {
        let ds = toy_dataset();
        let model = train(&ds, 10.0, 2.0, FeatureMode::Circular, 1e-3).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.boa");
        model.save(&path).unwrap();
        let text = std::fs::read_to_string(&path).unwrap();
        std::fs::write(&path, &text[..text.len() / 2]).unwrap();
        assert!(matches!(BoaModel::load(&path), Err(Error::Parse { .. })));
        std::fs::write(&path, text.replacen("BOA1", "BOA0", 1)).unwrap();
        assert!(matches!(BoaModel::load(&path), Err(Error::Version { .. })));
    }

    #[test]
    fn zero_decision_is_sa() {
        let model = BoaModel {
            features: FeatureMode::Circular,
            x_scale: 10.0,
            v_scale: 15.0,
            gamma: 1.0,
            c: 1.0,
            rho: 0.0,
            support: vec![],
            coef: vec![],
            training_accuracy: 0.0,
        };
        assert_eq!(model.decision(&SimState::default()), 0.0);
        assert_eq!(model.predict(&SimState::default()), AttractorLabel::SA);
    }

    #[test]
    fn dataset_csv_round_trip() {
        let ds = toy_dataset();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("d.csv");
        ds.save_csv(&path).unwrap();
        assert_eq!(BoaDataset::load_csv(&path).unwrap(), ds);
        std::fs::write(&path, "x,v,phi,label\n1,2,3,ZZ\n").unwrap();
        assert!(BoaDataset::load_csv(&path).is_err());
    }

    #[test]
    fn single_label_dataset_is_rejected() {
        let mut ds = toy_dataset();
        ds.labels.iter_mut().for_each(|l| *l = AttractorLabel::SA);
        assert!(matches!(
            fit(&ds, &BoaConfig::default(), 0),
            Err(Error::SingleClass)
        ));
    }

    #[test]
    fn torn_progress_file_is_trimmed() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("progress");
        std::fs::write(&p, "0,SA\n1,-\n2,LA\n3,L").unwrap();
        let done = read_progress(&p).unwrap();
        assert_eq!(
            done,
            vec![Some(AttractorLabel::SA), None, Some(AttractorLabel::LA)]
        );
    }
}
