use std::ffi::{CStr, CString};
use std::path::Path;
use std::ptr;

use rand::{Rng, SeedableRng};

use attractor_rl::boa::{self, BoaDataset, FeatureMode};
use attractor_rl::dynamics::{DuffingParams, IntegratorConfig, SimState};
use attractor_rl::env::Policy;
use attractor_rl::neural::DenseNet;
use attractor_rl::oracle::{build_catalog, AttractorLabel, OracleConfig};
use attractor_rl_ffi::*;

fn cpath(p: &Path) -> CString {
    CString::new(p.to_str().unwrap()).unwrap()
}

fn last_error() -> String {
    unsafe { CStr::from_ptr(ar_last_error()) }
        .to_str()
        .unwrap()
        .to_owned()
}

// Plain RK4 on the forced Duffing equation, written out independently.
fn reference_step(p: &ArDuffingParams, s: ArState, a: f64, h: f64, n: usize) -> ArState {
    let f = |x: f64, v: f64, phi: f64| {
        (
            v,
            -p.delta * v - p.alpha * x - p.beta * x * x * x + p.gamma_f * (phi + p.phi0).cos() + a,
            p.omega,
        )
    };
    let (mut x, mut v, mut phi) = (s.x, s.v, s.phi);
    for _ in 0..n {
        let k1 = f(x, v, phi);
        let k2 = f(x + h / 2.0 * k1.0, v + h / 2.0 * k1.1, phi + h / 2.0 * k1.2);
        let k3 = f(x + h / 2.0 * k2.0, v + h / 2.0 * k2.1, phi + h / 2.0 * k2.2);
        let k4 = f(x + h * k3.0, v + h * k3.1, phi + h * k3.2);
        x += h / 6.0 * (k1.0 + 2.0 * k2.0 + 2.0 * k3.0 + k4.0);
        v += h / 6.0 * (k1.1 + 2.0 * k2.1 + 2.0 * k3.1 + k4.1);
        phi += h / 6.0 * (k1.2 + 2.0 * k2.2 + 2.0 * k3.2 + k4.2);
    }
    ArState {
        x,
        v,
        phi: phi.rem_euclid(std::f64::consts::TAU),
    }
}

#[test]
fn version_matches_package() {
    let v = unsafe { CStr::from_ptr(ar_version()) }.to_str().unwrap();
    assert_eq!(v, env!("CARGO_PKG_VERSION"));
}

#[test]
fn defaults_mirror_core() {
    let p = ar_default_params();
    let c = ar_default_integrator();
    assert_eq!(DuffingParams::from(p), DuffingParams::default());
    assert_eq!(IntegratorConfig::from(c), IntegratorConfig::default());
}

#[test]
fn step_control_matches_reference_rk4() {
    let p = ar_default_params();
    let c = ar_default_integrator();
    let n = (c.dt_control / c.dt_inner).round() as usize;
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(7);
    for _ in 0..50 {
        let s = ArState {
            x: rng.random_range(-6.0..6.0),
            v: rng.random_range(-8.0..8.0),
            phi: rng.random_range(0.0..std::f64::consts::TAU),
        };
        let a = rng.random_range(-4.0..4.0);
        let mut out = ArState {
            x: 0.0,
            v: 0.0,
            phi: 0.0,
        };
        let st = unsafe { ar_step_control(&p, &c, &s, a, &mut out) };
        assert_eq!(st, ArStatus::Ok, "{}", last_error());
        let want = reference_step(&p, s, a, c.dt_inner, n);
        assert!((out.x - want.x).abs() < 1e-9, "{out:?} vs {want:?}");
        assert!((out.v - want.v).abs() < 1e-9, "{out:?} vs {want:?}");
        let dphi = (out.phi - want.phi).abs();
        assert!(dphi.min(std::f64::consts::TAU - dphi) < 1e-9);
    }
}

#[test]
fn integrate_equals_repeated_steps_and_allows_aliasing() {
    let p = ar_default_params();
    let c = ar_default_integrator();
    let s0 = ArState {
        x: 1.0,
        v: -0.5,
        phi: 0.3,
    };
    let mut stepped = s0;
    for _ in 0..8 {
        let cur = stepped;
        assert_eq!(
            unsafe { ar_step_control(&p, &c, &cur, 0.7, &mut stepped) },
            ArStatus::Ok
        );
    }
    let mut whole = s0;
    let src: *const ArState = &whole;
    let st = unsafe { ar_integrate(&p, &c, src, 0.7, 8.0 * c.dt_control, &mut whole) };
    assert_eq!(st, ArStatus::Ok);
    assert!((whole.x - stepped.x).abs() < 1e-9);
    assert!((whole.v - stepped.v).abs() < 1e-9);
}

#[test]
fn null_pointers_are_reported() {
    let p = ar_default_params();
    let c = ar_default_integrator();
    let s = ArState {
        x: 0.0,
        v: 0.0,
        phi: 0.0,
    };
    let st = unsafe { ar_step_control(ptr::null(), &c, &s, 0.0, ptr::null_mut()) };
    assert_eq!(st, ArStatus::NullPointer);
    assert!(last_error().contains("params"));
    let st = unsafe { ar_step_control(&p, &c, &s, 0.0, ptr::null_mut()) };
    assert_eq!(st, ArStatus::NullPointer);
    let mut out = ptr::null_mut();
    assert_eq!(
        unsafe { ar_catalog_load(ptr::null(), &mut out) },
        ArStatus::NullPointer
    );
    assert!(out.is_null());
    let mut x = 0.0;
    assert_eq!(
        unsafe { ar_catalog_threshold(ptr::null(), &mut x) },
        ArStatus::NullPointer
    );
    assert_eq!(
        unsafe { ar_policy_action(ptr::null(), &s, &mut x) },
        ArStatus::NullPointer
    );
    let mut l = ArLabel::Sa;
    assert_eq!(
        unsafe { ar_boa_predict(ptr::null(), &s, &mut l) },
        ArStatus::NullPointer
    );
    unsafe {
        ar_catalog_free(ptr::null_mut());
        ar_boa_free(ptr::null_mut());
        ar_policy_free(ptr::null_mut());
    }
}

#[test]
fn invalid_arguments_are_rejected() {
    let mut p = ar_default_params();
    let c = ar_default_integrator();
    let s = ArState {
        x: 0.0,
        v: 0.0,
        phi: 0.0,
    };
    let mut out = s;
    assert_eq!(
        unsafe { ar_integrate(&p, &c, &s, 0.0, -1.0, &mut out) },
        ArStatus::InvalidArgument
    );
    p.omega = 0.0;
    let st = unsafe { ar_step_control(&p, &c, &s, 0.0, &mut out) };
    assert_eq!(st, ArStatus::InvalidArgument);
    assert!(!last_error().is_empty());
    let st = unsafe { ar_step_control(&ar_default_params(), &c, &s, 0.0, &mut out) };
    assert_eq!(st, ArStatus::Ok);
    assert!(last_error().is_empty());
}

#[test]
fn divergence_is_reported() {
    let p = ar_default_params();
    let c = ar_default_integrator();
    let s = ArState {
        x: 1e80,
        v: 0.0,
        phi: 0.0,
    };
    let mut out = s;
    assert_eq!(
        unsafe { ar_step_control(&p, &c, &s, 0.0, &mut out) },
        ArStatus::Diverged
    );
}

#[test]
fn missing_files_give_io_errors() {
    let dir = tempfile::tempdir().unwrap();
    let path = cpath(&dir.path().join("absent"));
    let mut c = ptr::null_mut();
    assert_eq!(
        unsafe { ar_catalog_load(path.as_ptr(), &mut c) },
        ArStatus::Io
    );
    let mut m = ptr::null_mut();
    assert_eq!(unsafe { ar_boa_load(path.as_ptr(), &mut m) }, ArStatus::Io);
    let mut pol = ptr::null_mut();
    assert_eq!(
        unsafe { ar_policy_load(path.as_ptr(), 4.0, &mut pol) },
        ArStatus::Io
    );
    assert!(c.is_null() && m.is_null() && pol.is_null());
}

#[test]
fn corrupt_files_give_parse_errors() {
    let dir = tempfile::tempdir().unwrap();
    let file = dir.path().join("junk");
    std::fs::write(&file, "not a model\n").unwrap();
    let path = cpath(&file);
    let mut m = ptr::null_mut();
    assert_eq!(
        unsafe { ar_boa_load(path.as_ptr(), &mut m) },
        ArStatus::Parse
    );
    let mut pol = ptr::null_mut();
    assert_eq!(
        unsafe { ar_policy_load(path.as_ptr(), 4.0, &mut pol) },
        ArStatus::Parse
    );
}

#[test]
fn catalog_round_trip() {
    let params = DuffingParams::default();
    let cfg = IntegratorConfig::default();
    let oracle = OracleConfig::default();
    let catalog = build_catalog(&params, &cfg, &oracle, 100, 3).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let file = dir.path().join("catalog.txt");
    catalog.save(&file).unwrap();

    let mut h = ptr::null_mut();
    assert_eq!(
        unsafe { ar_catalog_load(cpath(&file).as_ptr(), &mut h) },
        ArStatus::Ok
    );
    for (label, ar) in [
        (AttractorLabel::SA, ArLabel::Sa),
        (AttractorLabel::LA, ArLabel::La),
    ] {
        let mut amp = 0.0;
        assert_eq!(
            unsafe { ar_catalog_amplitude(h, ar, &mut amp) },
            ArStatus::Ok
        );
        assert_eq!(amp, catalog.record(label).amplitude);
        let mut anchor = ArState {
            x: 0.0,
            v: 0.0,
            phi: 0.0,
        };
        assert_eq!(
            unsafe { ar_catalog_anchor(h, ar, &mut anchor) },
            ArStatus::Ok
        );
        assert_eq!(SimState::from(anchor), catalog.anchor(label));
    }
    let mut thr = 0.0;
    assert_eq!(unsafe { ar_catalog_threshold(h, &mut thr) }, ArStatus::Ok);
    assert_eq!(thr, catalog.threshold);
    unsafe { ar_catalog_free(h) };
}

#[test]
fn boa_round_trip() {
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(11);
    let mut ds = BoaDataset::default();
    for _ in 0..80 {
        let s = SimState::new(
            rng.random_range(-4.0..4.0),
            rng.random_range(-4.0..4.0),
            rng.random_range(0.0..6.0),
        );
        ds.labels.push(if s.x + 0.5 * s.v > 0.0 {
            AttractorLabel::LA
        } else {
            AttractorLabel::SA
        });
        ds.states.push(s);
    }
    let model = boa::train(&ds, 10.0, 1.0, FeatureMode::Circular, 1e-3).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let file = dir.path().join("model.txt");
    model.save(&file).unwrap();

    let mut h = ptr::null_mut();
    assert_eq!(
        unsafe { ar_boa_load(cpath(&file).as_ptr(), &mut h) },
        ArStatus::Ok
    );
    for _ in 0..50 {
        let s = ArState {
            x: rng.random_range(-4.0..4.0),
            v: rng.random_range(-4.0..4.0),
            phi: rng.random_range(0.0..6.0),
        };
        let core_state = SimState::from(s);
        let mut d = 0.0;
        let mut l = ArLabel::Sa;
        assert_eq!(unsafe { ar_boa_decision(h, &s, &mut d) }, ArStatus::Ok);
        assert_eq!(unsafe { ar_boa_predict(h, &s, &mut l) }, ArStatus::Ok);
        assert_eq!(d, model.decision(&core_state));
        assert_eq!(l, ArLabel::from(model.predict(&core_state)));
    }
    unsafe { ar_boa_free(h) };
}

#[test]
fn policy_round_trip() {
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(5);
    let net = DenseNet::policy(4, 16, &mut rng).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let file = dir.path().join("pi.net");
    net.save(&file).unwrap();
    let policy = Policy::new(net, 2.0);

    let mut h = ptr::null_mut();
    assert_eq!(
        unsafe { ar_policy_load(cpath(&file).as_ptr(), 2.0, &mut h) },
        ArStatus::Ok
    );
    let mut bound = 0.0;
    assert_eq!(unsafe { ar_policy_bound(h, &mut bound) }, ArStatus::Ok);
    assert_eq!(bound, 2.0);
    for _ in 0..50 {
        let s = ArState {
            x: rng.random_range(-6.0..6.0),
            v: rng.random_range(-8.0..8.0),
            phi: rng.random_range(0.0..6.0),
        };
        let mut a = 0.0;
        assert_eq!(unsafe { ar_policy_action(h, &s, &mut a) }, ArStatus::Ok);
        assert_eq!(a, policy.action(&SimState::from(s)).unwrap());
        assert!(a.abs() <= 2.0);
    }
    unsafe { ar_policy_free(h) };

    let mut h = ptr::null_mut();
    let st = unsafe { ar_policy_load(cpath(&file).as_ptr(), 0.0, &mut h) };
    assert_eq!(st, ArStatus::InvalidArgument);
    assert!(h.is_null());
}

#[test]
fn critic_is_not_accepted_as_policy() {
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(5);
    let net = DenseNet::critic(4, 16, &mut rng).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let file = dir.path().join("q.net");
    net.save(&file).unwrap();
    let mut h = ptr::null_mut();
    let st = unsafe { ar_policy_load(cpath(&file).as_ptr(), 4.0, &mut h) };
    assert_eq!(st, ArStatus::InvalidArgument);
}
