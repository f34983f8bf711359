//! Comparison controllers: geometric guidance (carrot chasing, NLGL), the
//! feedforward/nominal low-level variants and clock-parameterized tracking MPC.

use nalgebra::{Vector3, Vector6};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::gp::GpPrediction;
use crate::lbfblc::{adaptive_term, control_step_with, ControlOutput, Feedback, Gains};
use crate::mpfc::{solve_with_mode, OcpConfig, OcpSolution, PathMode};
use crate::paths::PathSpec;
use crate::quadrotor::QuadParams;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GuidanceConfig {
    /// Carrot lead distance along the path, meters.
    pub d1: f64,
    /// NLGL look-ahead radius, meters.
    pub d2: f64,
    pub theta_vel_nominal: f64,
    /// Width of the forward θ window searched for the projection.
    pub search_window: f64,
}

impl Default for GuidanceConfig {
    fn default() -> Self {
        Self { d1: 0.1, d2: 0.1, theta_vel_nominal: 1.0, search_window: 2.0 }
    }
}

impl GuidanceConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.d1 > 0.0 && self.d2 > 0.0 && self.theta_vel_nominal > 0.0 && self.search_window > 0.0) {
            return Err(Error::Config("guidance distances, speed and window must be positive".into()));
        }
        Ok(())
    }
}

/// A reference target on the path.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct GuidanceTarget {
    pub theta: f64,
    pub theta_proj: f64,
    pub x_d: Vector6<f64>,
    pub a_d: Vector3<f64>,
}

/// Projection of `p`, searched forward from `theta_min` when given so the
/// target cannot jump back across self-intersections.
fn project(path: &PathSpec, p: &Vector3<f64>, theta_min: Option<f64>, config: &GuidanceConfig) -> f64 {
    match theta_min {
        Some(lo) => {
            let hi = (lo + config.search_window).min(path.theta_end());
            let samples = ((hi - lo) / path_span(path) * 2000.0).ceil().max(50.0) as usize;
            let settings = crate::paths::ProjectionSettings { grid_samples: samples, ..Default::default() };
            path.min_distance_in(p, lo, hi, &settings).theta_star
        }
        None => path.min_distance(p).theta_star,
    }
}

fn path_span(path: &PathSpec) -> f64 {
    path.theta_end() - path.theta_start()
}

fn target_at(path: &PathSpec, theta: f64, theta_proj: f64, config: &GuidanceConfig) -> Result<GuidanceTarget> {
    let x_d = path.reference_state(theta, config.theta_vel_nominal)?.state();
    Ok(GuidanceTarget { theta, theta_proj, x_d, a_d: Vector3::zeros() })
}

/// Carrot chasing: project, then advance `D1` meters of arc length.
pub fn carrot_target(
    path: &PathSpec,
    p: &Vector3<f64>,
    config: &GuidanceConfig,
    theta_min: Option<f64>,
) -> Result<GuidanceTarget> {
    let theta_proj = project(path, p, theta_min, config);
    let theta = path.advance_arc_length(theta_proj, config.d1);
    target_at(path, theta, theta_proj, config)
}

/// NLGL: first path point at distance `D2` from `p` beyond the projection,
/// or the projection itself when the circle of radius `D2` misses the path.
pub fn nlgl_target(
    path: &PathSpec,
    p: &Vector3<f64>,
    config: &GuidanceConfig,
    theta_min: Option<f64>,
) -> Result<GuidanceTarget> {
    let theta_proj = project(path, p, theta_min, config);
    let dist = |th: f64| (path.jet(th)[0] - p).norm() - config.d2;
    if dist(theta_proj) > 0.0 {
        return target_at(path, theta_proj, theta_proj, config);
    }
    let end = path.theta_end();
    let step = path_span(path) / 2000.0;
    let mut lo = theta_proj;
    let mut crossing = None;
    while lo < end {
        let hi = (lo + step).min(end);
        if dist(hi) >= 0.0 {
            crossing = Some((lo, hi));
            break;
        }
        lo = hi;
    }
    let theta = match crossing {
        Some((mut a, mut b)) => {
            for _ in 0..200 {
                let mid = 0.5 * (a + b);
                if dist(mid) >= 0.0 {
                    b = mid;
                } else {
                    a = mid;
                }
                if b - a < 1e-14 * (1.0 + b.abs()) {
                    break;
                }
            }
            b
        }
        // The whole remaining path is inside the circle.
        None => end,
    };
    target_at(path, theta, theta_proj, config)
}

/// Nominal feedforward linearization: `a = a_d`.
pub fn fflc_pseudo_control(a_d: &Vector3<f64>) -> Vector3<f64> {
    *a_d
}

/// Learning-based feedforward linearization: `a = a_d + r` without PD.
pub fn lb_fflc_pseudo_control(
    a_d: &Vector3<f64>,
    mu: &Vector3<f64>,
    e: &Vector6<f64>,
    k_c: f64,
    gains: &Gains,
) -> Vector3<f64> {
    a_d + adaptive_term(mu, e, k_c, gains)
}

/// Low-level controller variants of the adaptation comparison.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum LowLevel {
    LbFblc,
    Fblc,
    Fflc,
    LbFflc,
}

impl LowLevel {
    pub fn label(&self) -> &'static str {
        match self {
            LowLevel::LbFblc => "LB-FBLC",
            LowLevel::Fblc => "FBLC",
            LowLevel::Fflc => "FFLC",
            LowLevel::LbFflc => "LB-FFLC",
        }
    }

    pub fn uses_gp(&self) -> bool {
        matches!(self, LowLevel::LbFblc | LowLevel::LbFflc)
    }

    /// One low-level evaluation given the GP prediction at `x` (ignored by
    /// the nominal variants).
    #[allow(clippy::too_many_arguments)]
    pub fn control(
        &self,
        x: &Vector6<f64>,
        x_d: &Vector6<f64>,
        a_d: &Vector3<f64>,
        prediction: &GpPrediction,
        beta: f64,
        gains: &Gains,
        params: &QuadParams,
    ) -> Result<ControlOutput> {
        let nominal = GpPrediction { mean: Vector3::zeros(), std: Vector3::zeros() };
        match self {
            LowLevel::LbFblc => control_step_with(x, x_d, a_d, prediction, beta, Feedback::FULL, gains, params),
            // No GP: μ = 0 and σ = 0, so the stability row never asks for k_c > 0.
            LowLevel::Fblc => control_step_with(x, x_d, a_d, &nominal, beta, Feedback::FULL, gains, params),
            LowLevel::Fflc => {
                control_step_with(x, x_d, a_d, &nominal, beta, Feedback { pd: false, adaptive: false }, gains, params)
            }
            LowLevel::LbFflc => {
                control_step_with(x, x_d, a_d, prediction, beta, Feedback { pd: false, adaptive: true }, gains, params)
            }
        }
    }
}

/// Trajectory-tracking MPC: the same OCP with θ̄ tied to the clock.
pub fn tracking_mpc_solve(
    x0: &Vector6<f64>,
    t_k: f64,
    path: &PathSpec,
    theta_vel_nominal: f64,
    config: &OcpConfig,
    warm: Option<Vec<Vector3<f64>>>,
) -> Result<OcpSolution> {
    let theta0 = path.clamp(path.theta_start() + t_k * theta_vel_nominal);
    let warm = warm.map(|c| {
        let n = c.len();
        (c, vec![0.0; n])
    });
    solve_with_mode(x0, PathMode::Clock { theta0, theta_vel: theta_vel_nominal }, path, config, warm)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gp::GpModel;
    use crate::lbfblc::{control_step, GainsConfig};
    use crate::mpfc::solve;
    use approx::assert_abs_diff_eq;

    fn line() -> PathSpec {
        PathSpec::preset("straight_line").unwrap()
    }

    fn cfg(d: f64) -> GuidanceConfig {
        GuidanceConfig { d1: d, d2: d, ..Default::default() }
    }

    #[test]
    fn carrot_on_line_leads_by_d1() {
        let t = carrot_target(&line(), &Vector3::new(2.0, 0.0, 1.0), &cfg(1.0), None).unwrap();
        assert_abs_diff_eq!(t.theta, 3.0, epsilon = 1e-8);
        assert_abs_diff_eq!(t.x_d[0], 3.0, epsilon = 1e-8);
        assert_eq!(t.a_d, Vector3::zeros());
    }

    #[test]
    fn carrot_from_circle_center_uses_smallest_theta() {
        let circle = PathSpec::preset("circle").unwrap();
        let t = carrot_target(&circle, &Vector3::new(0.0, 0.0, 1.0), &cfg(0.5), None).unwrap();
        assert_eq!(t.theta_proj, 0.0);
        assert_abs_diff_eq!(circle.arc_length(0.0, t.theta), 0.5, epsilon = 1e-9);
    }

    #[test]
    fn carrot_arc_length_on_lemniscate() {
        let lem = PathSpec::preset("lemniscate").unwrap();
        let p = Vector3::new(0.5, 0.3, 1.1);
        let t = carrot_target(&lem, &p, &cfg(0.7), None).unwrap();
        // independent trapezoid quadrature of |P'|
        let n = 200_000;
        let h = (t.theta - t.theta_proj) / n as f64;
        let speed = |th: f64| lem.jet(th)[1].norm();
        let trap: f64 = (0..n).map(|k| 0.5 * h * (speed(t.theta_proj + k as f64 * h) + speed(t.theta_proj + (k + 1) as f64 * h))).sum();
        assert!((trap - 0.7).abs() < 1e-3);
    }

    #[test]
    fn carrot_clamps_at_path_end() {
        let t = carrot_target(&line(), &Vector3::new(19.8, 0.0, 1.0), &cfg(1.0), None).unwrap();
        assert_eq!(t.theta, 20.0);
    }

    #[test]
    fn nlgl_on_line_is_d2_ahead() {
        let t = nlgl_target(&line(), &Vector3::new(2.0, 0.0, 1.0), &cfg(1.0), None).unwrap();
        assert_abs_diff_eq!(t.theta, 3.0, epsilon = 1e-10);
    }

    #[test]
    fn nlgl_falls_back_to_projection() {
        let p = Vector3::new(5.0, 3.0, 1.0);
        let t = nlgl_target(&line(), &p, &cfg(2.0), None).unwrap();
        // the squared distance is flat at the minimum, so θ is resolved to ~√ε·d
        assert_abs_diff_eq!(t.theta, 5.0, epsilon = 1e-6);
        assert_eq!(t.theta, t.theta_proj);
    }

    #[test]
    fn nlgl_inside_circle_hits_radius() {
        let circle = PathSpec::preset("circle").unwrap();
        let d2 = 0.4;
        let p = Vector3::new(1.0 - d2 / 2.0, 0.0, 1.0);
        let t = nlgl_target(&circle, &p, &cfg(d2), None).unwrap();
        let residual = ((circle.jet(t.theta)[0] - p).norm() - d2).abs();
        assert!(residual < 1e-6);
        assert!(t.theta > t.theta_proj);
    }

    #[test]
    fn targets_lie_on_path() {
        let lem = PathSpec::preset("lemniscate").unwrap();
        for (k, p) in [Vector3::new(0.1, 0.0, 1.0), Vector3::new(-0.7, 0.4, 0.9)].iter().enumerate() {
            let config = cfg(0.3 + 0.1 * k as f64);
            for t in [carrot_target(&lem, p, &config, None).unwrap(), nlgl_target(&lem, p, &config, None).unwrap()] {
                let pos = Vector3::new(t.x_d[0], t.x_d[1], t.x_d[2]);
                assert_eq!(pos, lem.jet(t.theta)[0]);
            }
        }
    }

    #[test]
    fn forward_search_never_moves_back() {
        let lem = PathSpec::preset("lemniscate").unwrap();
        // near the self-intersection at the origin while traversing the first lobe
        let p = Vector3::new(0.0, 0.0, 1.0);
        let t = carrot_target(&lem, &p, &cfg(0.2), Some(9.5)).unwrap();
        assert!(t.theta_proj >= 9.5);
    }

    #[test]
    fn feedforward_variants() {
        let gains = Gains::new(&GainsConfig::default()).unwrap();
        let p = QuadParams::default();
        let gp = GpPrediction { mean: Vector3::zeros(), std: Vector3::zeros() };
        let x = Vector6::new(0.2, 0.0, 1.0, 0.0, 0.0, 0.0);
        let out = LowLevel::Fflc.control(&x, &Vector6::zeros(), &Vector3::zeros(), &gp, 3.0, &gains, &p).unwrap();
        assert_abs_diff_eq!(out.u, p.hover_force(), epsilon = 1e-15);
        assert_eq!(fflc_pseudo_control(&Vector3::x()), Vector3::x());
        let delta = Vector3::new(0.2, -0.1, 0.05);
        let a = lb_fflc_pseudo_control(&Vector3::x(), &delta, &Vector6::zeros(), 1.0, &gains);
        assert_abs_diff_eq!(a + delta, Vector3::x(), epsilon = 1e-15);
    }

    #[test]
    fn fblc_equals_lbfblc_with_disabled_gp() {
        let gains = Gains::new(&GainsConfig::default()).unwrap();
        let p = QuadParams::default();
        let empty = GpModel::new(Default::default()).unwrap();
        let x = Vector6::new(0.2, -0.1, 1.0, 0.1, 0.0, 0.0);
        let x_d = Vector6::new(0.0, 0.0, 1.0, 0.3, 0.0, 0.0);
        let a_d = Vector3::new(0.1, 0.2, 0.0);
        let prior = GpPrediction { mean: Vector3::zeros(), std: Vector3::zeros() };
        let fblc = LowLevel::Fblc.control(&x, &x_d, &a_d, &prior, 3.0, &gains, &p).unwrap();
        let zero_beta = control_step_with(&x, &x_d, &a_d, &empty.predict(&x), 0.0, Feedback::FULL, &gains, &p).unwrap();
        assert_eq!(fblc.u, zero_beta.u);
        assert_eq!(fblc.k_c, 0.0);
        assert_eq!(fblc.r, Vector3::zeros());
        // the learning controller with an empty GP reacts to the prior band instead
        let lb = control_step(&x, &x_d, &a_d, &empty, &gains, &p).unwrap();
        assert!(lb.k_c > 0.0);
    }

    #[test]
    fn tracking_mpc_matches_pinned_mpfc() {
        let path = line();
        let config = OcpConfig::default();
        let x0 = Vector6::new(0.0, 0.0, 1.0, 1.0, 0.0, 0.0);
        let sol = tracking_mpc_solve(&x0, 0.0, &path, 1.0, &config, None).unwrap();
        assert!(sol.trajectory.controls.iter().all(|a| a.amax() < 1e-10));
        assert_eq!(sol.iterations, 1);
        let x1 = Vector6::new(0.5, 0.1, 1.05, 0.8, 0.0, 0.0);
        let tr = tracking_mpc_solve(&x1, 0.4, &path, 1.0, &config, None).unwrap();
        let pinned = OcpConfig { theta_acc_min: 0.0, theta_acc_max: 0.0, ..config };
        let free = solve(&x1, 0.4, 1.0, &path, &pinned, None).unwrap();
        for k in 0..20 {
            assert!((tr.trajectory.controls[k] - free.trajectory.controls[k]).amax() < 1e-8);
        }
    }
}
