//! Ground-truth attractor identification by long uncontrolled integration.
//!
//! A state is labeled by letting it settle for many forcing periods and
//! measuring the steady-state amplitude `max |x|` over the trailing periods.
//! [`build_catalog`] discovers the two coexisting periodic attractors and the
//! amplitude threshold between them.

use std::f64::consts::TAU;
use std::fmt;
use std::io::Write;
use std::path::Path;
use std::str::FromStr;

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dynamics::{integrate, integrate_with, DuffingParams, IntegratorConfig, SimState};
use crate::error::{Error, Result};
use crate::seed::{self, Stream};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum AttractorLabel {
    /// Small-amplitude periodic response.
    SA,
    /// Large-amplitude periodic response.
    LA,
}

impl AttractorLabel {
    pub const ALL: [AttractorLabel; 2] = [AttractorLabel::SA, AttractorLabel::LA];

    pub fn other(self) -> Self {
        match self {
            AttractorLabel::SA => AttractorLabel::LA,
            AttractorLabel::LA => AttractorLabel::SA,
        }
    }

    /// +1 for LA, -1 for SA; the sign convention of the classifier.
    pub fn sign(self) -> f64 {
        match self {
            AttractorLabel::SA => -1.0,
            AttractorLabel::LA => 1.0,
        }
    }
}

impl fmt::Display for AttractorLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            AttractorLabel::SA => "SA",
            AttractorLabel::LA => "LA",
        })
    }
}

impl FromStr for AttractorLabel {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim() {
            "SA" | "sa" => Ok(AttractorLabel::SA),
            "LA" | "la" => Ok(AttractorLabel::LA),
            other => Err(format!("unknown attractor label {other:?}")),
        }
    }
}

/// Rectangular region of initial conditions; the phase always spans a full
/// forcing cycle.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct StateDomain {
    pub x_min: f64,
    pub x_max: f64,
    pub v_min: f64,
    pub v_max: f64,
}

impl Default for StateDomain {
    fn default() -> Self {
        Self {
            x_min: -10.0,
            x_max: 10.0,
            v_min: -15.0,
            v_max: 15.0,
        }
    }
}

impl StateDomain {
    pub fn sample(&self, rng: &mut impl Rng) -> SimState {
        SimState::new(
            rng.random_range(self.x_min..=self.x_max),
            rng.random_range(self.v_min..=self.v_max),
            rng.random_range(0.0..TAU),
        )
    }

    pub fn contains(&self, s: &SimState) -> bool {
        (self.x_min..=self.x_max).contains(&s.x)
            && (self.v_min..=self.v_max).contains(&s.v)
            && (0.0..TAU).contains(&s.phi)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OracleConfig {
    /// Total free-running time, in forcing periods.
    pub settle_periods: f64,
    /// Trailing periods over which the amplitude is measured.
    pub measure_periods: usize,
    /// Random initial conditions used to discover the attractors.
    pub catalog_samples: usize,
    /// Relative distance to the threshold below which a label is ambiguous.
    pub ambiguity: f64,
    /// Minimum gap between sorted amplitudes, relative to the largest one,
    /// that separates two clusters.
    pub cluster_gap: f64,
    pub domain: StateDomain,
}

impl Default for OracleConfig {
    fn default() -> Self {
        Self {
            settle_periods: 100.0,
            measure_periods: 5,
            catalog_samples: 1000,
            ambiguity: 0.05,
            cluster_gap: 0.05,
            domain: StateDomain::default(),
        }
    }
}

impl OracleConfig {
    pub fn validate(&self) -> Result<()> {
        if self.settle_periods < 100.0 {
            return Err(Error::Config(
                "oracle.settle_periods must be at least 100".into(),
            ));
        }
        if self.measure_periods == 0 || self.measure_periods as f64 >= self.settle_periods {
            return Err(Error::Config(
                "oracle.measure_periods must be in [1, settle_periods)".into(),
            ));
        }
        if self.catalog_samples < 100 {
            return Err(Error::Config(
                "oracle.catalog_samples must be at least 100".into(),
            ));
        }
        Ok(())
    }
}

/// Free-runs `initial` for `settle_time` and returns the inner-step samples
/// over the last `measure_periods` forcing periods.
pub fn settle(
    initial: &SimState,
    settle_time: f64,
    measure_periods: usize,
    cfg: &IntegratorConfig,
    params: &DuffingParams,
) -> Result<Vec<SimState>> {
    let window = measure_periods as f64 * params.forcing_period();
    let lead = (settle_time - window).max(0.0);
    let s = integrate(initial, 0.0, lead, cfg, params)?;
    let mut segment = Vec::with_capacity((window / cfg.dt_inner) as usize + 2);
    integrate_with(&s, 0.0, window, cfg, params, |s| segment.push(*s))?;
    Ok(segment)
}

/// `max |x|` over a segment.
pub fn amplitude(segment: &[SimState]) -> f64 {
    segment.iter().fold(0.0, |m, s| m.max(s.x.abs()))
}

/// Settled amplitude without materializing the segment.
pub fn settled_amplitude(
    initial: &SimState,
    settle_periods: f64,
    measure_periods: usize,
    cfg: &IntegratorConfig,
    params: &DuffingParams,
) -> Result<f64> {
    let period = params.forcing_period();
    let window = measure_periods as f64 * period;
    let lead = (settle_periods * period - window).max(0.0);
    let s = integrate(initial, 0.0, lead, cfg, params)?;
    let mut amp: f64 = 0.0;
    integrate_with(&s, 0.0, window, cfg, params, |s| amp = amp.max(s.x.abs()))?;
    Ok(amp)
}

#[derive(Debug, Clone, PartialEq)]
pub struct AttractorRecord {
    pub amplitude: f64,
    /// One forcing period at `dt_inner` resolution, starting at phase 0.
    pub orbit: Vec<SimState>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AttractorCatalog {
    pub params: DuffingParams,
    pub integrator: IntegratorConfig,
    pub threshold: f64,
    pub sa: AttractorRecord,
    pub la: AttractorRecord,
}

impl AttractorCatalog {
    pub fn record(&self, label: AttractorLabel) -> &AttractorRecord {
        match label {
            AttractorLabel::SA => &self.sa,
            AttractorLabel::LA => &self.la,
        }
    }

    /// The orbit point at phase 0; used as the fixed initial condition of
    /// Phase 1.
    pub fn anchor(&self, label: AttractorLabel) -> SimState {
        self.record(label).orbit[0]
    }

    pub fn classify_amplitude(&self, amplitude: f64, ambiguity: f64) -> Result<AttractorLabel> {
        if (amplitude - self.threshold).abs() < ambiguity * self.threshold {
            return Err(Error::AmbiguousLabel {
                amplitude,
                threshold: self.threshold,
            });
        }
        Ok(if amplitude > self.threshold {
            AttractorLabel::LA
        } else {
            AttractorLabel::SA
        })
    }

    /// Oracle label of an arbitrary state.
    pub fn label(&self, initial: &SimState, oracle: &OracleConfig) -> Result<AttractorLabel> {
        self.label_with(initial, oracle.settle_periods, oracle)
    }

    pub fn label_with(
        &self,
        initial: &SimState,
        settle_periods: f64,
        oracle: &OracleConfig,
    ) -> Result<AttractorLabel> {
        let amp = settled_amplitude(
            initial,
            settle_periods,
            oracle.measure_periods,
            &self.integrator,
            &self.params,
        )?;
        self.classify_amplitude(amp, oracle.ambiguity)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let p = &self.params;
        let mut out = String::from("CATALOG1\n");
        out.push_str(&format!(
            "params {} {} {} {} {} {}\n",
            p.delta, p.alpha, p.beta, p.gamma_f, p.omega, p.phi0
        ));
        out.push_str(&format!(
            "integrator {} {}\n",
            self.integrator.dt_inner, self.integrator.dt_control
        ));
        out.push_str(&format!("threshold {}\n", self.threshold));
        for label in AttractorLabel::ALL {
            let r = self.record(label);
            out.push_str(&format!(
                "attractor {label} amplitude {} samples {}\n",
                r.amplitude,
                r.orbit.len()
            ));
            for s in &r.orbit {
                out.push_str(&format!("{} {} {}\n", s.x, s.v, s.phi));
            }
        }
        let mut f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
        f.write_all(out.as_bytes()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut lines = text.lines();
        let header = lines.next().unwrap_or_default();
        if header != "CATALOG1" {
            return Err(Error::Version {
                path: path.into(),
                expected: "CATALOG1",
                found: header.into(),
            });
        }
        let bad = |m: &str| Error::parse(path, m.to_string());
        let mut fields = |tag: &str, n: usize| -> Result<Vec<f64>> {
            let line = lines.next().ok_or_else(|| bad("unexpected end of file"))?;
            let mut it = line.split_whitespace();
            if it.next() != Some(tag) {
                return Err(bad(&format!("expected `{tag}` line")));
            }
            let vals: Vec<f64> = it
                .map(|t| t.parse::<f64>())
                .collect::<Result<_, _>>()
                .map_err(|e| bad(&format!("{tag}: {e}")))?;
            if vals.len() != n {
                return Err(bad(&format!("{tag}: expected {n} values")));
            }
            Ok(vals)
        };
        let pv = fields("params", 6)?;
        let iv = fields("integrator", 2)?;
        let tv = fields("threshold", 1)?;
        let params = DuffingParams {
            delta: pv[0],
            alpha: pv[1],
            beta: pv[2],
            gamma_f: pv[3],
            omega: pv[4],
            phi0: pv[5],
        };
        let integrator = IntegratorConfig {
            dt_inner: iv[0],
            dt_control: iv[1],
        };
        let mut records = Vec::new();
        for expected in AttractorLabel::ALL {
            let line = lines.next().ok_or_else(|| bad("missing attractor block"))?;
            let tok: Vec<&str> = line.split_whitespace().collect();
            if tok.len() != 6
                || tok[0] != "attractor"
                || tok[2] != "amplitude"
                || tok[4] != "samples"
            {
                return Err(bad("malformed attractor header"));
            }
            let label: AttractorLabel = tok[1].parse().map_err(|e: String| bad(&e))?;
            if label != expected {
                return Err(bad("attractor blocks out of order"));
            }
            let amplitude: f64 = tok[3].parse().map_err(|_| bad("bad amplitude"))?;
            let n: usize = tok[5].parse().map_err(|_| bad("bad sample count"))?;
            let mut orbit = Vec::with_capacity(n);
            for _ in 0..n {
                let line = lines.next().ok_or_else(|| bad("truncated orbit"))?;
                let v: Vec<f64> = line
                    .split_whitespace()
                    .map(str::parse)
                    .collect::<Result<_, _>>()
                    .map_err(|_| bad("bad orbit sample"))?;
                if v.len() != 3 {
                    return Err(bad("orbit sample needs 3 values"));
                }
                orbit.push(SimState {
                    x: v[0],
                    v: v[1],
                    phi: v[2],
                });
            }
            if orbit.is_empty() {
                return Err(bad("empty reference orbit"));
            }
            records.push(AttractorRecord { amplitude, orbit });
        }
        let la = records.pop().unwrap();
        let sa = records.pop().unwrap();
        Ok(Self {
            params,
            integrator,
            threshold: tv[0],
            sa,
            la,
        })
    }
}

/// Splits sorted amplitudes wherever consecutive values differ by more than
/// `gap`; returns the index ranges of the clusters.
fn amplitude_clusters(sorted: &[f64], gap: f64) -> Vec<std::ops::Range<usize>> {
    let mut clusters = Vec::new();
    let mut start = 0;
    for i in 1..sorted.len() {
        if sorted[i] - sorted[i - 1] > gap {
            clusters.push(start..i);
            start = i;
        }
    }
    if !sorted.is_empty() {
        clusters.push(start..sorted.len());
    }
    clusters
}

/// Settles `sample_count` random initial conditions and clusters their
/// amplitudes. Fails unless exactly two clusters appear.
pub fn build_catalog(
    params: &DuffingParams,
    cfg: &IntegratorConfig,
    oracle: &OracleConfig,
    sample_count: usize,
    master_seed: u64,
) -> Result<AttractorCatalog> {
    params.validate()?;
    cfg.validate()?;
    if sample_count < 100 {
        return Err(Error::Config(format!(
            "catalog needs at least 100 samples, got {sample_count}"
        )));
    }
    let period = params.forcing_period();
    let settle_time = oracle.settle_periods * period;
    let settled: Vec<(f64, SimState)> = (0..sample_count)
        .into_par_iter()
        .map(|i| {
            let mut rng = seed::rng(master_seed, Stream::Catalog, &[i as u64]);
            let s0 = oracle.domain.sample(&mut rng);
            let end = integrate(&s0, 0.0, settle_time, cfg, params)?;
            let mut amp: f64 = 0.0;
            let end = integrate_with(
                &end,
                0.0,
                oracle.measure_periods as f64 * period,
                cfg,
                params,
                |s| amp = amp.max(s.x.abs()),
            )?;
            Ok((amp, end))
        })
        .collect::<Result<_>>()?;

    let mut order: Vec<usize> = (0..settled.len()).collect();
    order.sort_by(|&a, &b| settled[a].0.total_cmp(&settled[b].0));
    let sorted: Vec<f64> = order.iter().map(|&i| settled[i].0).collect();
    let max_amp = *sorted.last().unwrap();
    let clusters = amplitude_clusters(&sorted, oracle.cluster_gap * max_amp);
    if clusters.len() != 2 {
        let amplitudes = clusters
            .iter()
            .map(|r| sorted[r.start..r.end].iter().sum::<f64>() / r.len() as f64)
            .collect();
        return Err(Error::ClusterCount {
            count: clusters.len(),
            amplitudes,
        });
    }
    let threshold = 0.5 * (sorted[clusters[0].end - 1] + sorted[clusters[1].start]);
    log::info!(
        "catalog: {} SA / {} LA samples, threshold {threshold:.4}",
        clusters[0].len(),
        clusters[1].len()
    );

    let mut records = Vec::with_capacity(2);
    for range in &clusters {
        // median member of the cluster as the representative
        let rep = settled[order[range.start + range.len() / 2]].1;
        records.push(reference_orbit(&rep, cfg, params)?);
    }
    let la = records.pop().unwrap();
    let sa = records.pop().unwrap();
    Ok(AttractorCatalog {
        params: *params,
        integrator: *cfg,
        threshold,
        sa,
        la,
    })
}

fn reference_orbit(
    settled: &SimState,
    cfg: &IntegratorConfig,
    params: &DuffingParams,
) -> Result<AttractorRecord> {
    let to_zero = (TAU - settled.phi) / params.omega;
    let mut start = integrate(settled, 0.0, to_zero, cfg, params)?;
    // snap the rounding residue so the orbit begins exactly at phase 0
    if start.phi > TAU - 1e-9 || start.phi < 1e-9 {
        start.phi = 0.0;
    }
    let mut orbit = vec![start];
    let steps = (params.forcing_period() / cfg.dt_inner).floor() as usize;
    let mut s = start;
    for _ in 0..steps {
        s = crate::dynamics::step_rk4(&s, 0.0, cfg.dt_inner, params)?;
        orbit.push(s);
    }
    Ok(AttractorRecord {
        amplitude: amplitude(&orbit),
        orbit,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn clusters_split_at_gaps() {
        let v = [1.0, 1.0001, 1.0002, 4.0, 4.0001];
        let c = amplitude_clusters(&v, 0.2);
        assert_eq!(c, vec![0..3, 3..5]);
        assert_eq!(amplitude_clusters(&v, 10.0).len(), 1);
        assert!(amplitude_clusters(&[], 1.0).is_empty());
    }

    #[test]
    fn label_text_round_trip() {
        for l in AttractorLabel::ALL {
            assert_eq!(l.to_string().parse::<AttractorLabel>().unwrap(), l);
            assert_eq!(l.other().other(), l);
        }
        assert!("XX".parse::<AttractorLabel>().is_err());
    }

    #[test]
    fn ambiguity_band() {
        let rec = AttractorRecord {
            amplitude: 1.0,
            orbit: vec![SimState::default()],
        };
        let cat = AttractorCatalog {
            params: DuffingParams::default(),
            integrator: IntegratorConfig::default(),
            threshold: 2.0,
            sa: rec.clone(),
            la: rec,
        };
        assert_eq!(
            cat.classify_amplitude(1.0, 0.05).unwrap(),
            AttractorLabel::SA
        );
        assert_eq!(
            cat.classify_amplitude(3.0, 0.05).unwrap(),
            AttractorLabel::LA
        );
        assert!(matches!(
            cat.classify_amplitude(2.05, 0.05),
            Err(Error::AmbiguousLabel { .. })
        ));
    }

    #[test]
    fn oracle_config_preconditions() {
        OracleConfig::default().validate().unwrap();
        let short = OracleConfig {
            settle_periods: 50.0,
            ..Default::default()
        };
        assert!(short.validate().is_err());
    }
}
