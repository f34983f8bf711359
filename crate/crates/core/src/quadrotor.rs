//! Translational quadrotor plant, attitude-command inversion and RK4 stepping.

use nalgebra::{Matrix3, Vector3, Vector6};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::wind::{drag_force, WindModel};

pub const E3: Vector3<f64> = Vector3::new(0.0, 0.0, 1.0);

/// Position and velocity in the world frame.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PlantState {
    pub p: Vector3<f64>,
    pub v: Vector3<f64>,
}

impl PlantState {
    pub fn new(p: Vector3<f64>, v: Vector3<f64>) -> Self {
        Self { p, v }
    }

    pub fn from_vector(x: &Vector6<f64>) -> Self {
        Self { p: x.fixed_rows::<3>(0).into(), v: x.fixed_rows::<3>(3).into() }
    }

    pub fn to_vector(&self) -> Vector6<f64> {
        Vector6::new(self.p.x, self.p.y, self.p.z, self.v.x, self.v.y, self.v.z)
    }

    pub fn is_finite(&self) -> bool {
        self.p.iter().chain(self.v.iter()).all(|x| x.is_finite())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct QuadParams {
    pub mass: f64,
    pub gravity: f64,
    /// Diagonal of K_drag, kg/s.
    pub k_drag: [f64; 3],
    pub u_min: [f64; 3],
    pub u_max: [f64; 3],
    /// Time constant of an optional first-order lag between commanded and
    /// applied force; `None` applies the command directly.
    #[serde(default)]
    pub attitude_lag: Option<f64>,
}

impl Default for QuadParams {
    fn default() -> Self {
        let (m, g) = (0.036, 9.81);
        Self {
            mass: m,
            gravity: g,
            k_drag: [0.005; 3],
            u_min: [-2.0 * m, -2.0 * m, (g - 2.0) * m],
            u_max: [2.0 * m, 2.0 * m, (g + 2.0) * m],
            attitude_lag: None,
        }
    }
}

impl QuadParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.mass > 0.0) || !(self.gravity > 0.0) {
            return Err(Error::Config("mass and gravity must be positive".into()));
        }
        let hover = self.hover_force();
        for i in 0..3 {
            if !(self.u_min[i] < self.u_max[i]) {
                return Err(Error::Config(format!("u_min[{i}] must be below u_max[{i}]")));
            }
            if !(self.u_min[i] < hover[i] && hover[i] < self.u_max[i]) {
                return Err(Error::Config("hover force must lie strictly inside the input box".into()));
            }
            if self.k_drag[i] < 0.0 {
                return Err(Error::Config("drag coefficients must be non-negative".into()));
            }
        }
        if let Some(tau) = self.attitude_lag {
            if !(tau > 0.0) {
                return Err(Error::Config("attitude lag must be positive".into()));
            }
        }
        Ok(())
    }

    pub fn hover_force(&self) -> Vector3<f64> {
        E3 * (self.mass * self.gravity)
    }

    pub fn k_drag(&self) -> Vector3<f64> {
        Vector3::from(self.k_drag)
    }

    pub fn u_min(&self) -> Vector3<f64> {
        Vector3::from(self.u_min)
    }

    pub fn u_max(&self) -> Vector3<f64> {
        Vector3::from(self.u_max)
    }

    pub fn saturate(&self, u: &Vector3<f64>) -> Vector3<f64> {
        u.zip_zip_map(&self.u_min(), &self.u_max(), |x, lo, hi| x.clamp(lo, hi))
    }

    /// Nominal drift `f̂(x) = −g e₃`.
    pub fn nominal_drift(&self) -> Vector3<f64> {
        -E3 * self.gravity
    }

    /// Input gain `G = I/m`.
    pub fn input_gain(&self) -> Matrix3<f64> {
        Matrix3::identity() / self.mass
    }
}

/// Thrust and Euler-angle commands for an attitude controller.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AttitudeCommand {
    pub thrust: f64,
    pub roll: f64,
    pub pitch: f64,
    pub yaw: f64,
}

/// Body-to-world rotation, ZYX Euler convention.
pub fn rotation_matrix(roll: f64, pitch: f64, yaw: f64) -> Matrix3<f64> {
    let (sf, cf) = roll.sin_cos();
    let (st, ct) = pitch.sin_cos();
    let (sp, cp) = yaw.sin_cos();
    Matrix3::new(
        ct * cp,
        sf * st * cp - cf * sp,
        cf * st * cp + sf * sp,
        ct * sp,
        sf * st * sp + cf * cp,
        cf * st * sp - sf * cp,
        -st,
        sf * ct,
        cf * ct,
    )
}

/// `ṗ = v`, `v̇ = −g e₃ + u/m + f_a/m` with `u` the world-frame rotor force.
pub fn translational_derivative(
    state: &PlantState,
    u: &Vector3<f64>,
    f_a: &Vector3<f64>,
    params: &QuadParams,
) -> (Vector3<f64>, Vector3<f64>) {
    let v_dot = -E3 * params.gravity + (u + f_a) / params.mass;
    (state.v, v_dot)
}

/// True acceleration of the plant at time `t` under force `u` and the wind field.
pub fn acceleration(
    state: &PlantState,
    u: &Vector3<f64>,
    wind: &WindModel,
    t: f64,
    params: &QuadParams,
) -> Vector3<f64> {
    let f_a = drag_force(&wind.wind_velocity(t), &state.v, &params.k_drag());
    translational_derivative(state, u, &f_a, params).1
}

/// Thrust and attitude angles realizing force `u` for pseudo-acceleration `a`.
pub fn attitude_commands(u: &Vector3<f64>, a: &Vector3<f64>, yaw: f64, g: f64) -> Result<AttitudeCommand> {
    let thrust = u.norm();
    if thrust == 0.0 {
        return Err(Error::DegenerateThrust);
    }
    let (s, c) = yaw.sin_cos();
    let beta_a = -a.x * c - a.y * s;
    let beta_b = -a.z + g;
    let beta_c = -a.x * s + a.y * c;
    Ok(AttitudeCommand {
        thrust,
        pitch: beta_a.atan2(beta_b),
        roll: beta_c.atan2((beta_a * beta_a + beta_b * beta_b).sqrt()),
        yaw,
    })
}

/// Classical RK4 over `n_sub` substeps with zero-order-hold `u`; wind is
/// sampled at every stage time.
pub fn step(
    state: &PlantState,
    u: &Vector3<f64>,
    wind: &WindModel,
    t: f64,
    dt_sub: f64,
    n_sub: usize,
    params: &QuadParams,
) -> Result<PlantState> {
    let (next, _) = step_with_actuator(state, u, u, wind, t, dt_sub, n_sub, params)?;
    Ok(next)
}

/// RK4 stepping with the optional first-order force lag. `applied` is the force
/// currently acting on the plant; returns the new state and applied force.
#[allow(clippy::too_many_arguments)]
pub fn step_with_actuator(
    state: &PlantState,
    applied: &Vector3<f64>,
    command: &Vector3<f64>,
    wind: &WindModel,
    t: f64,
    dt_sub: f64,
    n_sub: usize,
    params: &QuadParams,
) -> Result<(PlantState, Vector3<f64>)> {
    if !(dt_sub > 0.0) || n_sub == 0 {
        return Err(Error::Config("substep length and count must be positive".into()));
    }
    let k_drag = params.k_drag();
    let lag = params.attitude_lag;
    // state vector: p, v, applied force
    let deriv = |tau: f64, _p: &Vector3<f64>, v: &Vector3<f64>, f: &Vector3<f64>| {
        let force = if lag.is_some() { *f } else { *command };
        let f_a = drag_force(&wind.wind_velocity(tau), v, &k_drag);
        let v_dot = -E3 * params.gravity + (force + f_a) / params.mass;
        let f_dot = match lag {
            Some(tc) => (command - f) / tc,
            None => Vector3::zeros(),
        };
        (*v, v_dot, f_dot)
    };
    let (mut p, mut v, mut f) = (state.p, state.v, if lag.is_some() { *applied } else { *command });
    for i in 0..n_sub {
        let t0 = t + i as f64 * dt_sub;
        let h = dt_sub;
        let k1 = deriv(t0, &p, &v, &f);
        let k2 = deriv(t0 + 0.5 * h, &(p + k1.0 * (0.5 * h)), &(v + k1.1 * (0.5 * h)), &(f + k1.2 * (0.5 * h)));
        let k3 = deriv(t0 + 0.5 * h, &(p + k2.0 * (0.5 * h)), &(v + k2.1 * (0.5 * h)), &(f + k2.2 * (0.5 * h)));
        let k4 = deriv(t0 + h, &(p + k3.0 * h), &(v + k3.1 * h), &(f + k3.2 * h));
        p += (k1.0 + 2.0 * k2.0 + 2.0 * k3.0 + k4.0) * (h / 6.0);
        v += (k1.1 + 2.0 * k2.1 + 2.0 * k3.1 + k4.1) * (h / 6.0);
        f += (k1.2 + 2.0 * k2.2 + 2.0 * k3.2 + k4.2) * (h / 6.0);
    }
    let next = PlantState { p, v };
    if !next.is_finite() || !f.iter().all(|x| x.is_finite()) {
        return Err(Error::IntegrationFault { t: t + n_sub as f64 * dt_sub });
    }
    Ok((next, f))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::wind::WindConfig;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;
    use std::f64::consts::FRAC_PI_2;

    fn calm() -> WindModel {
        WindModel::new(WindConfig::calm()).unwrap()
    }

    #[test]
    fn rotation_examples() {
        assert_eq!(rotation_matrix(0.0, 0.0, 0.0), Matrix3::identity());
        let r = rotation_matrix(0.0, 0.0, FRAC_PI_2);
        assert_abs_diff_eq!(r * Vector3::x(), Vector3::y(), epsilon = 1e-15);
    }

    proptest! {
        #[test]
        fn rotation_is_special_orthogonal(a in -3.2f64..3.2, b in -1.5f64..1.5, c in -3.2f64..3.2) {
            let r = rotation_matrix(a, b, c);
            prop_assert!((r.transpose() * r - Matrix3::identity()).norm() < 1e-12);
            prop_assert!((r.determinant() - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn force_balance_examples() {
        let p = QuadParams { k_drag: [0.02; 3], ..QuadParams::default() };
        let s = PlantState::new(Vector3::zeros(), Vector3::zeros());
        let (_, vd) = translational_derivative(&s, &p.hover_force(), &Vector3::zeros(), &p);
        assert_abs_diff_eq!(vd, Vector3::zeros(), epsilon = 1e-15);
        let (_, vd) = translational_derivative(&s, &Vector3::zeros(), &Vector3::zeros(), &p);
        assert_eq!(vd, Vector3::new(0.0, 0.0, -9.81));
        let (_, vd) = translational_derivative(&s, &p.hover_force(), &Vector3::new(0.1, 0.0, 0.0), &p);
        assert_abs_diff_eq!(vd, Vector3::new(0.1 / 0.036, 0.0, 0.0), epsilon = 1e-12);
    }

    #[test]
    fn attitude_examples() {
        let p = QuadParams::default();
        let hover = attitude_commands(&p.hover_force(), &Vector3::zeros(), 0.0, p.gravity).unwrap();
        assert_abs_diff_eq!(hover.thrust, 0.036 * 9.81, epsilon = 1e-15);
        assert_eq!((hover.roll, hover.pitch, hover.yaw), (0.0, 0.0, 0.0));

        let a = Vector3::new(-1.0, 0.0, 0.0);
        let cmd = attitude_commands(&(p.mass * (a + E3 * p.gravity)), &a, 0.0, p.gravity).unwrap();
        assert_abs_diff_eq!(cmd.pitch, 1f64.atan2(9.81), epsilon = 1e-15);
        assert!(cmd.pitch > 0.0);
        assert_abs_diff_eq!(cmd.roll, 0.0, epsilon = 1e-15);

        let a = Vector3::new(0.0, 0.7, 0.0);
        let cmd = attitude_commands(&(p.mass * (a + E3 * p.gravity)), &a, 0.0, p.gravity).unwrap();
        assert!(cmd.roll != 0.0);
        assert_eq!(cmd.pitch, 0.0);

        assert!(matches!(
            attitude_commands(&Vector3::zeros(), &a, 0.0, 9.81),
            Err(Error::DegenerateThrust)
        ));
    }

    #[test]
    fn attitude_commands_reproduce_force_direction() {
        // Thrust axis (−sin θ cos φ, sin φ, cos θ cos φ) is parallel to u for
        // level pseudo-accelerations.
        let p = QuadParams::default();
        for a in [Vector3::new(0.4, -0.3, 0.0), Vector3::new(-1.5, 1.0, 0.0)] {
            let u = p.mass * (a + E3 * p.gravity);
            let cmd = attitude_commands(&u, &a, 0.0, p.gravity).unwrap();
            let (sf, cf) = cmd.roll.sin_cos();
            let (st, ct) = cmd.pitch.sin_cos();
            let rebuilt = Vector3::new(-st * cf, sf, ct * cf) * cmd.thrust;
            assert_abs_diff_eq!(rebuilt, u, epsilon = 1e-12);
        }
    }

    #[test]
    fn hover_is_an_equilibrium() {
        let p = QuadParams::default();
        let s0 = PlantState::new(Vector3::new(1.0, 2.0, 3.0), Vector3::zeros());
        let mut s = s0;
        for k in 0..100 {
            s = step(&s, &p.hover_force(), &calm(), k as f64 * 0.01, 0.001, 10, &p).unwrap();
        }
        assert_abs_diff_eq!(s.p, s0.p, epsilon = 1e-12);
        assert_abs_diff_eq!(s.v, s0.v, epsilon = 1e-12);
    }

    #[test]
    fn free_fall_matches_ballistic_solution() {
        let p = QuadParams { k_drag: [0.0; 3], ..QuadParams::default() };
        let mut s = PlantState::new(Vector3::zeros(), Vector3::new(0.3, -0.2, 0.0));
        for k in 0..100 {
            s = step(&s, &Vector3::zeros(), &calm(), k as f64 * 0.01, 0.001, 10, &p).unwrap();
        }
        assert_abs_diff_eq!(s.p.z, -9.81 / 2.0, epsilon = 1e-6);
        assert_abs_diff_eq!(s.v.z, -9.81, epsilon = 1e-6);
        // horizontal velocity conserved exactly
        assert_abs_diff_eq!(s.v.x, 0.3, epsilon = 1e-12);
        assert_abs_diff_eq!(s.v.y, -0.2, epsilon = 1e-12);
    }

    #[test]
    fn halving_substep_converges() {
        let p = QuadParams::default();
        let wind = WindModel::new(WindConfig::random_uncertain(3, true)).unwrap();
        let run = |dt_sub: f64, n_sub: usize| {
            let mut s = PlantState::new(Vector3::zeros(), Vector3::zeros());
            for k in 0..100 {
                let t = k as f64 * 0.01;
                let u = p.saturate(&(p.hover_force() + Vector3::new((3.0 * t).sin(), 0.5, 0.2) * 0.05));
                s = step(&s, &u, &wind, t, dt_sub, n_sub, &p).unwrap();
            }
            s
        };
        let coarse = run(0.001, 10);
        let fine = run(0.0005, 20);
        assert!((coarse.to_vector() - fine.to_vector()).norm() < 1e-8);
    }

    #[test]
    fn lag_tracks_command() {
        let p = QuadParams { attitude_lag: Some(0.02), ..QuadParams::default() };
        let s = PlantState::new(Vector3::zeros(), Vector3::zeros());
        let cmd = p.hover_force() + Vector3::new(0.01, 0.0, 0.0);
        let (_, f) = step_with_actuator(&s, &p.hover_force(), &cmd, &calm(), 0.0, 0.001, 200, &p).unwrap();
        assert_abs_diff_eq!(f, cmd, epsilon = 1e-6);
    }

    #[test]
    fn non_finite_input_is_an_integration_fault() {
        let p = QuadParams::default();
        let s = PlantState::new(Vector3::zeros(), Vector3::zeros());
        let bad = Vector3::new(f64::NAN, 0.0, 0.0);
        assert!(matches!(step(&s, &bad, &calm(), 0.0, 0.001, 10, &p), Err(Error::IntegrationFault { .. })));
    }

    #[test]
    fn params_validation() {
        assert!(QuadParams::default().validate().is_ok());
        let bad = QuadParams { u_max: [0.1, 0.1, 0.1], ..QuadParams::default() };
        assert!(bad.validate().is_err());
    }
}
