//! Benchmark fixtures: warmed-up inputs for the per-step hot paths.

use lbpfc_core::gp::{GpConfig, GpModel};
use lbpfc_core::lbfblc::{Gains, GainsConfig};
use lbpfc_core::mpfc::OcpConfig;
use lbpfc_core::paths::PathSpec;
use lbpfc_core::quadrotor::{PlantState, QuadParams};
use lbpfc_core::wind::{WindConfig, WindModel};
use nalgebra::{Vector3, Vector6};

/// A GP with a full window of samples along a short arc.
pub fn full_gp() -> GpModel {
    let mut gp = GpModel::new(GpConfig::default()).expect("default GP config");
    for k in 0..GpConfig::default().window_size {
        let s = k as f64 * 0.01;
        let x = Vector6::new(s.cos(), s.sin(), 1.0, -s.sin(), s.cos(), 0.0);
        gp.push(x, Vector3::new(0.1 * s, -0.05, 0.02)).expect("well-conditioned window");
    }
    gp
}

/// State slightly off the circle preset, with its on-path reference.
pub fn circle_state() -> (Vector6<f64>, Vector6<f64>) {
    let path = PathSpec::preset("circle").expect("preset");
    let reference = path.reference_state(0.3, 1.0).expect("in range").state();
    let x = reference + Vector6::new(0.02, -0.01, 0.01, 0.05, 0.0, -0.02);
    (x, reference)
}

pub fn gains() -> Gains {
    Gains::new(&GainsConfig::default()).expect("default gains")
}

pub fn ocp() -> OcpConfig {
    OcpConfig::default()
}

pub fn circle() -> PathSpec {
    PathSpec::preset("circle").expect("preset")
}

pub fn windy() -> (WindModel, PlantState, QuadParams) {
    let wind = WindModel::new(WindConfig::random_uncertain(3, false)).expect("wind");
    let (x, _) = circle_state();
    (wind, PlantState::from_vector(&x), QuadParams::default())
}
