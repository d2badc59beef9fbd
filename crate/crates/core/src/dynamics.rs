//! Fixed-step integration of the controlled, harmonically forced Duffing
//! oscillator
//!
//! ```text
//! x'' + delta x' + alpha x + beta x^3 = gamma_f cos(phi + phi0) + a,   phi' = omega
//! ```
//!
//! The forcing phase is carried in the state and kept in `[0, 2pi)` instead of
//! absolute time. Actions are held constant over a control step (zero-order
//! hold) which spans an integer number of inner RK4 steps.

use std::f64::consts::TAU;
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DuffingParams {
    pub delta: f64,
    pub alpha: f64,
    pub beta: f64,
    pub gamma_f: f64,
    pub omega: f64,
    pub phi0: f64,
}

impl Default for DuffingParams {
    fn default() -> Self {
        Self {
            delta: 0.1,
            alpha: 1.0,
            beta: 0.04,
            gamma_f: 1.0,
            omega: 1.4,
            phi0: 0.0,
        }
    }
}

impl DuffingParams {
    pub fn validate(&self) -> Result<()> {
        let all = [
            self.delta,
            self.alpha,
            self.beta,
            self.gamma_f,
            self.omega,
            self.phi0,
        ];
        if all.iter().any(|v| !v.is_finite()) {
            return Err(Error::Config("Duffing parameters must be finite".into()));
        }
        if self.omega <= 0.0 {
            return Err(Error::Config("omega must be positive".into()));
        }
        Ok(())
    }

    /// Length of one forcing period, `2pi / omega`.
    pub fn forcing_period(&self) -> f64 {
        TAU / self.omega
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct SimState {
    pub x: f64,
    pub v: f64,
    /// Forcing phase, `omega t mod 2pi`.
    pub phi: f64,
}

impl SimState {
    pub fn new(x: f64, v: f64, phi: f64) -> Self {
        Self {
            x,
            v,
            phi: wrap_phase(phi),
        }
    }

    pub fn is_finite(&self) -> bool {
        self.x.is_finite() && self.v.is_finite() && self.phi.is_finite()
    }
}

/// Maps any finite angle into `[0, 2pi)`.
pub fn wrap_phase(phi: f64) -> f64 {
    let w = phi.rem_euclid(TAU);
    // rem_euclid can round up to exactly TAU for tiny negative inputs
    if w >= TAU {
        0.0
    } else {
        w
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct IntegratorConfig {
    pub dt_inner: f64,
    pub dt_control: f64,
}

impl Default for IntegratorConfig {
    fn default() -> Self {
        Self {
            dt_inner: 0.01,
            dt_control: 0.25,
        }
    }
}

impl IntegratorConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.dt_inner > 0.0 && self.dt_inner.is_finite()) {
            return Err(Error::Config("dt_inner must be positive".into()));
        }
        let ratio = self.dt_control / self.dt_inner;
        if !(ratio >= 1.0) || (ratio - ratio.round()).abs() > 1e-9 * ratio {
            return Err(Error::Config(format!(
                "dt_control ({}) must be an integer multiple of dt_inner ({})",
                self.dt_control, self.dt_inner
            )));
        }
        Ok(())
    }

    /// Inner RK4 steps per control step.
    pub fn inner_steps(&self) -> usize {
        (self.dt_control / self.dt_inner).round() as usize
    }
}

/// Right-hand side of the controlled Duffing equation: `(dx, dv, dphi)`.
#[inline]
pub fn derivative(state: &SimState, action: f64, params: &DuffingParams) -> (f64, f64, f64) {
    let dv = params.gamma_f * (state.phi + params.phi0).cos()
        - params.delta * state.v
        - params.alpha * state.x
        - params.beta * state.x * state.x * state.x
        + action;
    (state.v, dv, params.omega)
}

#[inline]
fn accel(x: f64, v: f64, forcing: f64, action: f64, p: &DuffingParams) -> f64 {
    forcing - p.delta * v - p.alpha * x - p.beta * x * x * x + action
}

/// One classical RK4 step with the action held constant.
pub fn step_rk4(
    state: &SimState,
    action: f64,
    dt: f64,
    params: &DuffingParams,
) -> Result<SimState> {
    let next = rk4_unchecked(state, action, dt, params);
    if next.is_finite() {
        Ok(next)
    } else {
        Err(Error::Diverged { state: *state })
    }
}

#[inline]
fn rk4_unchecked(s: &SimState, action: f64, dt: f64, p: &DuffingParams) -> SimState {
    // phi' is constant, so the stage phases are exact and the two midpoint
    // stages share one cosine.
    let half = 0.5 * dt;
    let f0 = p.gamma_f * (s.phi + p.phi0).cos();
    let fm = p.gamma_f * (s.phi + p.phi0 + p.omega * half).cos();
    let f1 = p.gamma_f * (s.phi + p.phi0 + p.omega * dt).cos();

    let k1x = s.v;
    let k1v = accel(s.x, s.v, f0, action, p);
    let k2x = s.v + half * k1v;
    let k2v = accel(s.x + half * k1x, k2x, fm, action, p);
    let k3x = s.v + half * k2v;
    let k3v = accel(s.x + half * k2x, k3x, fm, action, p);
    let k4x = s.v + dt * k3v;
    let k4v = accel(s.x + dt * k3x, k4x, f1, action, p);

    SimState {
        x: s.x + dt / 6.0 * (k1x + 2.0 * k2x + 2.0 * k3x + k4x),
        v: s.v + dt / 6.0 * (k1v + 2.0 * k2v + 2.0 * k3v + k4v),
        phi: wrap_phase(s.phi + p.omega * dt),
    }
}

/// Applies `inner_steps()` RK4 steps of `dt_inner` with a constant action.
pub fn advance_control_step(
    state: &SimState,
    action: f64,
    cfg: &IntegratorConfig,
    params: &DuffingParams,
) -> Result<SimState> {
    let mut s = *state;
    for _ in 0..cfg.inner_steps() {
        s = rk4_unchecked(&s, action, cfg.dt_inner, params);
    }
    if s.is_finite() {
        Ok(s)
    } else {
        Err(Error::Diverged { state: *state })
    }
}

/// Integrates with a constant action for an arbitrary duration: whole inner
/// steps followed by one shorter step for the remainder.
pub fn integrate(
    state: &SimState,
    action: f64,
    duration: f64,
    cfg: &IntegratorConfig,
    params: &DuffingParams,
) -> Result<SimState> {
    let mut out = *state;
    integrate_with(state, action, duration, cfg, params, |s| out = *s)?;
    Ok(out)
}

/// Like [`integrate`], calling `visit` on every inner-step state (not the
/// initial one).
pub fn integrate_with(
    state: &SimState,
    action: f64,
    duration: f64,
    cfg: &IntegratorConfig,
    params: &DuffingParams,
    mut visit: impl FnMut(&SimState),
) -> Result<SimState> {
    let dt = cfg.dt_inner;
    let whole = (duration / dt + 1e-9).floor().max(0.0) as u64;
    let rem = duration - whole as f64 * dt;
    let mut s = *state;
    for i in 0..whole {
        s = rk4_unchecked(&s, action, dt, params);
        // checking every step is wasteful; blow-ups stay non-finite
        if i % 1024 == 1023 && !s.is_finite() {
            return Err(Error::Diverged { state: *state });
        }
        visit(&s);
    }
    if rem > 1e-12 {
        s = rk4_unchecked(&s, action, rem, params);
        visit(&s);
    }
    if s.is_finite() {
        Ok(s)
    } else {
        Err(Error::Diverged { state: *state })
    }
}

/// One time-stamped sample of a simulated trajectory. `action` is the value
/// applied over the control step that starts at this sample.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Sample {
    pub t: f64,
    pub state: SimState,
    pub action: f64,
}

/// Simulates for `duration`, querying `action_source` at every control
/// boundary. Samples are taken at multiples of `dt_control` plus the final
/// state when `duration` is not a multiple.
pub fn simulate(
    state: &SimState,
    mut action_source: impl FnMut(&SimState) -> f64,
    duration: f64,
    cfg: &IntegratorConfig,
    params: &DuffingParams,
) -> Result<Vec<Sample>> {
    if !(duration >= 0.0) {
        return Err(Error::Config(format!("negative duration {duration}")));
    }
    let steps = (duration / cfg.dt_control + 1e-9).floor() as usize;
    let rem = duration - steps as f64 * cfg.dt_control;
    let mut out = Vec::with_capacity(steps + 2);
    let mut s = *state;
    for k in 0..steps {
        let a = action_source(&s);
        out.push(Sample {
            t: k as f64 * cfg.dt_control,
            state: s,
            action: a,
        });
        s = advance_control_step(&s, a, cfg, params)?;
    }
    if rem > 1e-12 {
        let a = action_source(&s);
        out.push(Sample {
            t: steps as f64 * cfg.dt_control,
            state: s,
            action: a,
        });
        s = integrate(&s, a, rem, cfg, params)?;
    }
    out.push(Sample {
        t: duration,
        state: s,
        action: 0.0,
    });
    Ok(out)
}

/// Writes samples as CSV with header `t,x,v,phi,a`.
pub fn write_trajectory_csv(path: &Path, samples: &[Sample]) -> Result<()> {
    let mut buf = String::from("t,x,v,phi,a\n");
    for s in samples {
        buf.push_str(&format!(
            "{},{},{},{},{}\n",
            s.t, s.state.x, s.state.v, s.state.phi, s.action
        ));
    }
    let mut f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    f.write_all(buf.as_bytes()).map_err(|e| Error::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn p() -> DuffingParams {
        DuffingParams::default()
    }

    #[test]
    fn derivative_examples() {
        let (_, dv, _) = derivative(&SimState::new(0.0, 0.0, 0.0), 0.0, &p());
        assert_eq!(dv, 1.0);
        let (dx, dv, dphi) = derivative(&SimState::new(1.0, 0.0, 0.0), 0.0, &p());
        assert_eq!(dx, 0.0);
        assert!((dv - -0.04).abs() < 1e-15);
        assert_eq!(dphi, 1.4);
        let (_, dv, _) = derivative(&SimState::new(1.0, 0.0, 0.0), 2.0, &p());
        assert!((dv - 1.96).abs() < 1e-15);
    }

    #[test]
    fn phase_wraps_past_two_pi() {
        let s = SimState::new(0.3, -0.2, TAU - 0.01);
        let n = step_rk4(&s, 0.0, 0.01, &p()).unwrap();
        assert!((n.phi - 0.004).abs() < 1e-12, "{}", n.phi);
    }

    #[test]
    fn zero_step_is_identity() {
        let s = SimState::new(1.3, -2.1, 0.7);
        let n = step_rk4(&s, 0.5, 0.0, &p()).unwrap();
        assert_eq!(n, s);
        let n = step_rk4(&s, 0.5, 1e-14, &p()).unwrap();
        assert!((n.x - s.x).abs() < 1e-12 && (n.v - s.v).abs() < 1e-12);
    }

    #[test]
    fn default_config_takes_25_inner_steps() {
        let cfg = IntegratorConfig::default();
        cfg.validate().unwrap();
        assert_eq!(cfg.inner_steps(), 25);
        let bad = IntegratorConfig {
            dt_inner: 0.01,
            dt_control: 0.255,
        };
        assert!(bad.validate().is_err());
    }

    #[test]
    fn control_step_matches_inner_loop_and_simulate() {
        let cfg = IntegratorConfig::default();
        let s0 = SimState::new(0.5, 0.1, 1.0);
        let mut manual = s0;
        for _ in 0..25 {
            manual = step_rk4(&manual, 1.5, 0.01, &p()).unwrap();
        }
        let one = advance_control_step(&s0, 1.5, &cfg, &p()).unwrap();
        assert_eq!(one, manual);
        let sim = simulate(&s0, |_| 1.5, 0.25, &cfg, &p()).unwrap();
        assert_eq!(sim.len(), 2);
        assert_eq!(sim[1].state, one);
    }

    #[test]
    fn simulate_zero_duration() {
        let cfg = IntegratorConfig::default();
        let s0 = SimState::new(0.5, 0.1, 1.0);
        let sim = simulate(&s0, |_| 0.0, 0.0, &cfg, &p()).unwrap();
        assert_eq!(sim.len(), 1);
        assert_eq!(sim[0].state, s0);
        assert!(simulate(&s0, |_| 0.0, -1.0, &cfg, &p()).is_err());
    }

    #[test]
    fn simulate_is_deterministic() {
        let cfg = IntegratorConfig::default();
        let s0 = SimState::new(-3.0, 4.0, 2.0);
        let a = simulate(&s0, |s| (s.x * 0.3).tanh(), 30.0, &cfg, &p()).unwrap();
        let b = simulate(&s0, |s| (s.x * 0.3).tanh(), 30.0, &cfg, &p()).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn fractional_duration_lands_exactly() {
        let cfg = IntegratorConfig::default();
        let s0 = SimState::new(0.0, 0.0, 0.0);
        let d = 1.234567;
        let end = integrate(&s0, 0.0, d, &cfg, &p()).unwrap();
        let expect = wrap_phase(1.4 * d);
        assert!((end.phi - expect).abs() < 1e-12);
    }

    #[test]
    fn divergence_is_reported() {
        let s0 = SimState::new(1e150, 1e150, 0.0);
        let err = step_rk4(&s0, 0.0, 0.01, &p()).unwrap_err();
        assert!(matches!(err, Error::Diverged { .. }));
    }

    fn end_state(dt: f64) -> SimState {
        let cfg = IntegratorConfig {
            dt_inner: dt,
            dt_control: dt,
        };
        integrate(&SimState::new(1.0, 0.0, 0.0), 0.0, 10.0, &cfg, &p()).unwrap()
    }

    #[test]
    fn rk4_converges_at_fourth_order() {
        let reference = end_state(1e-5);
        let err = |s: SimState| ((s.x - reference.x).powi(2) + (s.v - reference.v).powi(2)).sqrt();
        let e1 = err(end_state(0.01));
        let e2 = err(end_state(0.005));
        let order = (e1 / e2).log2();
        assert!(
            (3.5..=4.5).contains(&order),
            "order {order}, errors {e1} {e2}"
        );
    }

    #[test]
    fn uncontrolled_runs_stay_bounded() {
        let cfg = IntegratorConfig::default();
        let per = p().forcing_period();
        for &(x, v, phi) in &[
            (10.0, 15.0, 0.0),
            (-10.0, -15.0, 3.0),
            (0.0, 0.0, 0.0),
            (7.0, -12.0, 5.5),
        ] {
            let s = integrate(&SimState::new(x, v, phi), 0.0, 90.0 * per, &cfg, &p()).unwrap();
            let mut max_x: f64 = 0.0;
            integrate_with(&s, 0.0, 10.0 * per, &cfg, &p(), |s| {
                max_x = max_x.max(s.x.abs())
            })
            .unwrap();
            assert!(max_x < 20.0);
        }
    }
}
