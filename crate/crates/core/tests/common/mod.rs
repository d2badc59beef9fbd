#![allow(dead_code)]

use std::sync::OnceLock;

use attractor_rl::boa::{self, FeatureMode, Grid};
use attractor_rl::dynamics::{DuffingParams, IntegratorConfig};
use attractor_rl::env::{EnvBundle, EpisodeConfig};
use attractor_rl::oracle::{build_catalog, AttractorCatalog, OracleConfig};

pub fn catalog() -> &'static AttractorCatalog {
    static CATALOG: OnceLock<AttractorCatalog> = OnceLock::new();
    CATALOG.get_or_init(|| {
        build_catalog(
            &DuffingParams::default(),
            &IntegratorConfig::default(),
            &OracleConfig::default(),
            300,
            1,
        )
        .unwrap()
    })
}

/// Environment with a classifier trained on a coarse 10^3 grid; good enough
/// for pipeline tests, which never rely on its accuracy.
pub fn env() -> &'static EnvBundle {
    static ENV: OnceLock<EnvBundle> = OnceLock::new();
    ENV.get_or_init(|| {
        let catalog = catalog().clone();
        let oracle = OracleConfig::default();
        let grid = Grid {
            domain: oracle.domain,
            resolution: 10,
        };
        let ds = boa::generate_dataset(&catalog, &oracle, &grid, None).unwrap();
        let model = boa::train(&ds, 100.0, 2.0, FeatureMode::Circular, 1e-3).unwrap();
        EnvBundle {
            params: DuffingParams::default(),
            integrator: IntegratorConfig::default(),
            episode: EpisodeConfig::default(),
            catalog,
            boa: model,
        }
    })
}
