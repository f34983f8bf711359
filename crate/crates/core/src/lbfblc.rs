//! Learning-based feedback-linearization controller.
//!
//! The pseudo-control is `a = a_d + K_P (x₁d − x₁) + K_D (x₂d − x₂) + r` with
//! the adaptive term `r = −μ(x) − k_c Bᵀ P e`. The gain `k_c` comes from a
//! small control-Lyapunov QP that trades the Lyapunov decrease condition (with
//! a heavily penalized slack) against the input box, and the resulting force
//! `u = G⁻¹ (a − f̂)` is finally saturated componentwise.

use nalgebra::{Matrix3, Matrix6, SMatrix, SVector, Vector3, Vector6};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::gp::{confidence_radius, GpModel, GpPrediction};
use crate::quadrotor::QuadParams;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GainsConfig {
    pub k_p: [f64; 3],
    pub k_d: [f64; 3],
    /// Diagonal of the Lyapunov weight Q.
    pub q_diag: [f64; 6],
    /// Slack penalty of the stability row.
    pub k_eps: f64,
}

impl Default for GainsConfig {
    fn default() -> Self {
        Self { k_p: [2.0; 3], k_d: [1.0; 3], q_diag: [1.0; 6], k_eps: 1e20 }
    }
}

/// Controller gains with the derived Lyapunov matrix.
#[derive(Clone, Debug, PartialEq)]
pub struct Gains {
    pub k_p: Matrix3<f64>,
    pub k_d: Matrix3<f64>,
    pub q: Matrix6<f64>,
    pub p: Matrix6<f64>,
    pub k_eps: f64,
}

impl Gains {
    pub fn new(config: &GainsConfig) -> Result<Self> {
        if !(config.k_eps > 0.0) {
            return Err(Error::GainConfiguration("slack penalty must be positive".into()));
        }
        let k_p = Matrix3::from_diagonal(&Vector3::from(config.k_p));
        let k_d = Matrix3::from_diagonal(&Vector3::from(config.k_d));
        let q = Matrix6::from_diagonal(&Vector6::from(config.q_diag));
        let p = solve_lyapunov(&k_p, &k_d, &q)?;
        Ok(Self { k_p, k_d, q, p, k_eps: config.k_eps })
    }

    /// `A = [[0, I], [−K_P, −K_D]]`.
    pub fn a_matrix(&self) -> Matrix6<f64> {
        closed_loop_matrix(&self.k_p, &self.k_d)
    }

    /// `Bᵀ P e`, the lower three rows of `P e`.
    pub fn bt_p(&self, e: &Vector6<f64>) -> Vector3<f64> {
        (self.p * e).fixed_rows::<3>(3).into()
    }
}

pub fn closed_loop_matrix(k_p: &Matrix3<f64>, k_d: &Matrix3<f64>) -> Matrix6<f64> {
    let mut a = Matrix6::zeros();
    a.fixed_view_mut::<3, 3>(0, 3).copy_from(&Matrix3::identity());
    a.fixed_view_mut::<3, 3>(3, 0).copy_from(&(-k_p));
    a.fixed_view_mut::<3, 3>(3, 3).copy_from(&(-k_d));
    a
}

/// Unique symmetric positive definite `P` with `AᵀP + PA = −Q`.
///
/// Solved on the Kronecker form `(I ⊗ Aᵀ + Aᵀ ⊗ I) vec(P) = −vec(Q)`.
pub fn solve_lyapunov(k_p: &Matrix3<f64>, k_d: &Matrix3<f64>, q: &Matrix6<f64>) -> Result<Matrix6<f64>> {
    let a = closed_loop_matrix(k_p, k_d);
    let eig = a.complex_eigenvalues();
    if eig.iter().any(|l| !(l.re < 0.0)) {
        return Err(Error::GainConfiguration("closed-loop matrix A is not Hurwitz".into()));
    }
    if (q - q.transpose()).norm() > 1e-12 * q.norm().max(1.0) || q.cholesky().is_none() {
        return Err(Error::GainConfiguration("Q must be symmetric positive definite".into()));
    }
    let at = a.transpose();
    let mut lhs = SMatrix::<f64, 36, 36>::zeros();
    for col in 0..6 {
        for row in 0..6 {
            for k in 0..6 {
                for l in 0..6 {
                    // (I ⊗ Aᵀ)[(col,row),(k,l)] + (Aᵀ ⊗ I)[(col,row),(k,l)]
                    let mut v = 0.0;
                    if col == k {
                        v += at[(row, l)];
                    }
                    if row == l {
                        v += at[(col, k)];
                    }
                    lhs[(col * 6 + row, k * 6 + l)] = v;
                }
            }
        }
    }
    let rhs = SVector::<f64, 36>::from_iterator(q.iter().map(|x| -x));
    let vec_p = lhs.lu().solve(&rhs).ok_or_else(|| Error::GainConfiguration("singular Lyapunov operator".into()))?;
    let p = Matrix6::from_iterator(vec_p.iter().copied());
    let p = 0.5 * (p + p.transpose());
    if p.cholesky().is_none() {
        return Err(Error::GainConfiguration("Lyapunov solution is not positive definite".into()));
    }
    Ok(p)
}

/// Stacks position and velocity halves into a 6-vector.
pub fn stack(x1: &Vector3<f64>, x2: &Vector3<f64>) -> Vector6<f64> {
    Vector6::new(x1.x, x1.y, x1.z, x2.x, x2.y, x2.z)
}

fn upper(x: &Vector6<f64>) -> Vector3<f64> {
    x.fixed_rows::<3>(0).into()
}

fn lower(x: &Vector6<f64>) -> Vector3<f64> {
    x.fixed_rows::<3>(3).into()
}

/// PD part `K_P (x₁d − x₁) + K_D (x₂d − x₂)`.
pub fn pd_term(x_d: &Vector6<f64>, x: &Vector6<f64>, gains: &Gains) -> Vector3<f64> {
    gains.k_p * (upper(x_d) - upper(x)) + gains.k_d * (lower(x_d) - lower(x))
}

pub fn pseudo_control(
    x_d: &Vector6<f64>,
    a_d: &Vector3<f64>,
    x: &Vector6<f64>,
    r: &Vector3<f64>,
    gains: &Gains,
) -> Vector3<f64> {
    a_d + pd_term(x_d, x, gains) + r
}

/// `r = −μ − k_c Bᵀ P e`.
pub fn adaptive_term(mu: &Vector3<f64>, e: &Vector6<f64>, k_c: f64, gains: &Gains) -> Vector3<f64> {
    -mu - gains.bt_p(e) * k_c
}

/// `u = G⁻¹ (a − f̂)`.
pub fn feedback_linearize(a: &Vector3<f64>, f_hat: &Vector3<f64>, g: &Matrix3<f64>) -> Result<Vector3<f64>> {
    let g_inv = g.try_inverse().ok_or(Error::Linearization)?;
    Ok(g_inv * (a - f_hat))
}

/// Data of the scalar k_c program
///
/// ```text
/// min  ‖w‖² k² + k_ε ε²
/// s.t. −2‖w‖² k + b_clf ≤ ε
///      u_min ≤ u_base − k · u_dir ≤ u_max      (componentwise)
///      k ≥ 0
/// ```
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct KcProblem {
    pub w: Vector3<f64>,
    pub b_clf: f64,
    /// Force at `k_c = 0`.
    pub u_base: Vector3<f64>,
    /// `G⁻¹ w`; the force decreases along it as `k_c` grows.
    pub u_dir: Vector3<f64>,
    pub u_min: Vector3<f64>,
    pub u_max: Vector3<f64>,
    pub k_eps: f64,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct KcSolution {
    pub k_c: f64,
    pub slack: f64,
    /// The control rows admitted no `k_c ≥ 0`, so only the stability row was kept.
    pub control_rows_dropped: bool,
}

impl KcProblem {
    pub fn objective(&self, k_c: f64, slack: f64) -> f64 {
        self.w.norm_squared() * k_c * k_c + self.k_eps * slack * slack
    }

    /// Feasible interval of `k_c` from the control rows and `k_c ≥ 0`.
    pub fn control_interval(&self) -> Option<(f64, f64)> {
        let (mut lo, mut hi) = (0.0f64, f64::INFINITY);
        for i in 0..3 {
            let (base, d) = (self.u_base[i], self.u_dir[i]);
            if d > 0.0 {
                lo = lo.max((base - self.u_max[i]) / d);
                hi = hi.min((base - self.u_min[i]) / d);
            } else if d < 0.0 {
                lo = lo.max((base - self.u_min[i]) / d);
                hi = hi.min((base - self.u_max[i]) / d);
            } else if base < self.u_min[i] || base > self.u_max[i] {
                return None;
            }
        }
        (lo <= hi).then_some((lo, hi))
    }

    /// Smallest slack compatible with `k_c`.
    pub fn slack_for(&self, k_c: f64) -> f64 {
        (self.b_clf - 2.0 * self.w.norm_squared() * k_c).max(0.0)
    }

    pub fn solve(&self) -> KcSolution {
        let w2 = self.w.norm_squared();
        if w2 == 0.0 {
            return KcSolution { k_c: 0.0, slack: self.b_clf.max(0.0), control_rows_dropped: false };
        }
        let (interval, dropped) = match self.control_interval() {
            Some(iv) => (iv, false),
            None => ((0.0, f64::INFINITY), true),
        };
        // Minimizer of the convex piecewise quadratic in k_c, then projected.
        let unconstrained = if self.b_clf > 0.0 {
            self.b_clf / (2.0 * w2) / (1.0 + 1.0 / (4.0 * self.k_eps * w2))
        } else {
            0.0
        };
        let k_c = unconstrained.clamp(interval.0, interval.1);
        KcSolution { k_c, slack: self.slack_for(k_c), control_rows_dropped: dropped }
    }
}

/// One controller evaluation, as logged per step.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ControlOutput {
    /// Saturated force applied to the plant.
    pub u: Vector3<f64>,
    /// Force before saturation.
    pub u_unsaturated: Vector3<f64>,
    pub a: Vector3<f64>,
    pub r: Vector3<f64>,
    pub k_c: f64,
    pub slack: f64,
    pub mu: Vector3<f64>,
    pub sigma: Vector3<f64>,
    /// `V(e) = eᵀ P e`.
    pub lyapunov: f64,
    /// Upper bound of `V̇` implied by the GP confidence band.
    pub lyapunov_rate_bound: f64,
    /// `k_c ‖BᵀPe‖ − ‖β‖‖σ‖`.
    pub margin: f64,
    pub saturated: bool,
    pub control_rows_dropped: bool,
}

/// Which feedback paths of the controller are active.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Feedback {
    pub pd: bool,
    pub adaptive: bool,
}

impl Feedback {
    pub const FULL: Feedback = Feedback { pd: true, adaptive: true };
}

/// LB-FBLC step with the GP queried at the current state.
pub fn control_step(
    x: &Vector6<f64>,
    x_d: &Vector6<f64>,
    a_d: &Vector3<f64>,
    gp: &GpModel,
    gains: &Gains,
    params: &QuadParams,
) -> Result<ControlOutput> {
    let prediction = gp.predict(x);
    control_step_with(x, x_d, a_d, &prediction, gp.config().beta, Feedback::FULL, gains, params)
}

/// Controller step from an explicit disturbance estimate. With `adaptive`
/// off the adaptive term is dropped entirely (`r = 0`); with `pd` off the PD
/// part is removed from both the pseudo-control and the QP's control rows.
#[allow(clippy::too_many_arguments)]
pub fn control_step_with(
    x: &Vector6<f64>,
    x_d: &Vector6<f64>,
    a_d: &Vector3<f64>,
    prediction: &GpPrediction,
    beta: f64,
    feedback: Feedback,
    gains: &Gains,
    params: &QuadParams,
) -> Result<ControlOutput> {
    if !x_d.iter().chain(a_d.iter()).all(|v| v.is_finite()) {
        return Err(Error::Config("non-finite reference".into()));
    }
    let e = x - x_d;
    let w = gains.bt_p(&e);
    let lyapunov = e.dot(&(gains.p * e));
    let e_q_e = e.dot(&(gains.q * e));
    let rho = confidence_radius(&prediction.std, beta);
    let g = params.input_gain();
    let g_inv = g.try_inverse().ok_or(Error::Linearization)?;
    let f_hat = params.nominal_drift();
    let a_pd = if feedback.pd { pd_term(x_d, x, gains) } else { Vector3::zeros() };

    let (mu, solution) = if feedback.adaptive {
        let mu = prediction.mean;
        let problem = KcProblem {
            w,
            b_clf: -e_q_e + 2.0 * w.norm() * rho,
            u_base: g_inv * (a_d + a_pd - mu - f_hat),
            u_dir: g_inv * w,
            u_min: params.u_min(),
            u_max: params.u_max(),
            k_eps: gains.k_eps,
        };
        (mu, problem.solve())
    } else {
        (Vector3::zeros(), KcSolution { k_c: 0.0, slack: 0.0, control_rows_dropped: false })
    };

    let r = if feedback.adaptive { adaptive_term(&mu, &e, solution.k_c, gains) } else { Vector3::zeros() };
    let a = a_d + a_pd + r;
    let u_unsaturated = feedback_linearize(&a, &f_hat, &g)?;
    let u = params.saturate(&u_unsaturated);
    let saturated = u != u_unsaturated;
    let w_norm = w.norm();
    Ok(ControlOutput {
        u,
        u_unsaturated,
        a,
        r,
        k_c: solution.k_c,
        slack: solution.slack,
        mu,
        sigma: prediction.std,
        lyapunov,
        lyapunov_rate_bound: -e_q_e + 2.0 * w_norm * (rho - solution.k_c * w_norm),
        margin: solution.k_c * w_norm - rho,
        saturated,
        control_rows_dropped: solution.control_rows_dropped,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::quadrotor::{translational_derivative, PlantState, E3};
    use approx::assert_abs_diff_eq;
    use nalgebra::Matrix2;

    fn paper_gains() -> Gains {
        Gains::new(&GainsConfig::default()).unwrap()
    }

    #[test]
    fn lyapunov_block_matches_hand_solution() {
        let g = paper_gains();
        let block = Matrix2::new(1.75, 0.25, 0.25, 0.75);
        for axis in 0..3 {
            let got = Matrix2::new(
                g.p[(axis, axis)],
                g.p[(axis, axis + 3)],
                g.p[(axis + 3, axis)],
                g.p[(axis + 3, axis + 3)],
            );
            assert_abs_diff_eq!(got, block, epsilon = 1e-10);
        }
        let a = g.a_matrix();
        assert!((a.transpose() * g.p + g.p * a + g.q).norm() <= 1e-8);
        assert!(g.p.cholesky().is_some());
    }

    #[test]
    fn lyapunov_is_linear_in_q() {
        let g = paper_gains();
        let p3 = solve_lyapunov(&g.k_p, &g.k_d, &(3.0 * g.q)).unwrap();
        assert_abs_diff_eq!(p3, 3.0 * g.p, epsilon = 1e-12);
    }

    #[test]
    fn lyapunov_with_coupled_q() {
        let g = paper_gains();
        let mut q = Matrix6::identity() * 2.0;
        q[(0, 4)] = 0.3;
        q[(4, 0)] = 0.3;
        let p = solve_lyapunov(&g.k_p, &g.k_d, &q).unwrap();
        let a = g.a_matrix();
        assert!((a.transpose() * p + p * a + q).norm() <= 1e-10);
    }

    #[test]
    fn non_hurwitz_gains_rejected() {
        let bad = GainsConfig { k_d: [1.0, -1.0, 1.0], ..GainsConfig::default() };
        assert!(matches!(Gains::new(&bad), Err(Error::GainConfiguration(_))));
        let bad = GainsConfig { k_p: [0.0, 1.0, 1.0], ..GainsConfig::default() };
        assert!(Gains::new(&bad).is_err());
    }

    #[test]
    fn pseudo_control_examples() {
        let g = paper_gains();
        let x = Vector6::new(0.1, 0.2, 0.3, -0.1, 0.0, 0.5);
        let a_d = Vector3::new(0.3, -0.2, 0.1);
        assert_eq!(pseudo_control(&x, &a_d, &x, &Vector3::zeros(), &g), a_d);
        let x_d = x + Vector6::new(1.0, 0.0, 0.0, 0.0, 0.0, 0.0);
        assert_abs_diff_eq!(
            pseudo_control(&x_d, &Vector3::zeros(), &x, &Vector3::zeros(), &g),
            Vector3::new(2.0, 0.0, 0.0),
            epsilon = 1e-15
        );
        let (r1, r2) = (Vector3::new(0.1, 0.2, 0.3), Vector3::new(-1.0, 0.5, 0.0));
        assert_abs_diff_eq!(
            pseudo_control(&x_d, &a_d, &x, &(r1 + r2), &g),
            pseudo_control(&x_d, &a_d, &x, &r1, &g) + r2,
            epsilon = 1e-15
        );
    }

    #[test]
    fn adaptive_term_examples() {
        let g = paper_gains();
        let mu = Vector3::new(0.4, -0.1, 0.2);
        assert_eq!(adaptive_term(&Vector3::zeros(), &Vector6::zeros(), 3.0, &g), Vector3::zeros());
        let e = Vector6::new(0.3, 0.1, -0.2, 0.5, 0.0, 1.0);
        assert_eq!(adaptive_term(&mu, &e, 0.0, &g), -mu);
        let e = Vector6::new(1.0, 0.0, 0.0, 0.0, 0.0, 0.0);
        assert_abs_diff_eq!(adaptive_term(&mu, &e, 1.0, &g), -mu - Vector3::new(0.25, 0.0, 0.0), epsilon = 1e-12);
    }

    #[test]
    fn feedback_linearization_examples() {
        let p = QuadParams::default();
        let g = p.input_gain();
        let f_hat = p.nominal_drift();
        assert_abs_diff_eq!(feedback_linearize(&Vector3::zeros(), &f_hat, &g).unwrap(), p.hover_force(), epsilon = 1e-15);
        let u = feedback_linearize(&Vector3::new(1.0, 0.0, 0.0), &f_hat, &g).unwrap();
        assert_abs_diff_eq!(u, Vector3::new(0.036, 0.0, 0.036 * 9.81), epsilon = 1e-12);
        // exact cancellation through the plant
        let a = Vector3::new(-0.7, 0.3, 1.1);
        let u = feedback_linearize(&a, &f_hat, &g).unwrap();
        let s = PlantState::new(Vector3::zeros(), Vector3::new(0.2, 0.0, -0.1));
        let (_, vd) = translational_derivative(&s, &u, &Vector3::zeros(), &p);
        assert_abs_diff_eq!(vd, a, epsilon = 1e-12);
        assert!(matches!(feedback_linearize(&a, &f_hat, &Matrix3::zeros()), Err(Error::Linearization)));
    }

    fn unbounded(w: Vector3<f64>, b_clf: f64) -> KcProblem {
        KcProblem {
            w,
            b_clf,
            u_base: Vector3::zeros(),
            u_dir: w,
            u_min: Vector3::repeat(-1e9),
            u_max: Vector3::repeat(1e9),
            k_eps: 1e20,
        }
    }

    #[test]
    fn kc_zero_when_stability_row_is_slack() {
        let sol = unbounded(Vector3::new(0.2, -0.1, 0.3), -0.5).solve();
        assert_eq!(sol.k_c, 0.0);
        assert_eq!(sol.slack, 0.0);
    }

    #[test]
    fn kc_closed_form_when_stability_row_active() {
        let w = Vector3::new(0.2, -0.1, 0.3);
        let b = 0.8;
        let sol = unbounded(w, b).solve();
        assert_abs_diff_eq!(sol.k_c, b / (2.0 * w.norm_squared()), epsilon = 1e-12);
        assert!(sol.slack < 1e-15);
    }

    #[test]
    fn kc_zero_on_reference() {
        let sol = unbounded(Vector3::zeros(), 0.0).solve();
        assert_eq!(sol.k_c, 0.0);
    }

    #[test]
    fn kc_limited_by_control_rows() {
        let w = Vector3::new(1.0, 0.0, 0.0);
        let mut prob = unbounded(w, 10.0);
        prob.u_min = Vector3::repeat(-0.5);
        prob.u_max = Vector3::repeat(0.5);
        let sol = prob.solve();
        assert_abs_diff_eq!(sol.k_c, 0.5, epsilon = 1e-15);
        assert_abs_diff_eq!(sol.slack, 10.0 - 2.0 * 0.5, epsilon = 1e-12);
        assert!(!sol.control_rows_dropped);
        // base already outside the box along an axis w does not move
        prob.u_base = Vector3::new(0.0, 0.9, 0.0);
        let sol = prob.solve();
        assert!(sol.control_rows_dropped);
        assert_abs_diff_eq!(sol.k_c, 10.0 / 2.0, epsilon = 1e-9);
    }

    #[test]
    fn on_reference_with_empty_gp_hovers() {
        let g = paper_gains();
        let p = QuadParams::default();
        let gp = GpModel::new(Default::default()).unwrap();
        let x = Vector6::new(1.0, 0.0, 1.0, 0.0, 0.0, 0.0);
        let out = control_step(&x, &x, &Vector3::zeros(), &gp, &g, &p).unwrap();
        assert_abs_diff_eq!(out.u, p.hover_force(), epsilon = 1e-15);
        assert_eq!(out.k_c, 0.0);
        assert_eq!(out.lyapunov, 0.0);
    }

    #[test]
    fn output_is_saturated() {
        let g = paper_gains();
        let p = QuadParams::default();
        let gp = GpModel::new(Default::default()).unwrap();
        let x = Vector6::zeros();
        let x_d = Vector6::new(50.0, -50.0, 50.0, 0.0, 0.0, 0.0);
        let out = control_step(&x, &x_d, &Vector3::zeros(), &gp, &g, &p).unwrap();
        assert!(out.saturated);
        for i in 0..3 {
            assert!(out.u[i] >= p.u_min[i] && out.u[i] <= p.u_max[i]);
        }
        assert_eq!(out.u, p.saturate(&out.u_unsaturated));
    }

    #[test]
    fn exact_disturbance_model_gives_linear_error_dynamics() {
        // Plant v̇ = a + δ with μ = δ exactly and σ = 0: the tracking error
        // follows ė = A e, compared against the matrix exponential.
        let g = paper_gains();
        let p = QuadParams { u_min: [-1e3; 3], u_max: [1e3; 3], ..QuadParams::default() };
        let delta = Vector3::new(0.3, -0.2, 0.1);
        let prediction = GpPrediction { mean: delta, std: Vector3::zeros() };
        let e0 = Vector6::new(0.1, -0.05, 0.02, 0.0, 0.03, 0.0);
        let mut x = e0;
        let dt = 1e-3;
        let f = |x: &Vector6<f64>| {
            let out = control_step_with(x, &Vector6::zeros(), &Vector3::zeros(), &prediction, 3.0, Feedback::FULL, &g, &p)
                .unwrap();
            let v_dot = -E3 * p.gravity + out.u / p.mass + delta;
            stack(&lower(x), &v_dot)
        };
        for _ in 0..1000 {
            let k1 = f(&x);
            let k2 = f(&(x + k1 * (0.5 * dt)));
            let k3 = f(&(x + k2 * (0.5 * dt)));
            let k4 = f(&(x + k3 * dt));
            x += (k1 + 2.0 * k2 + 2.0 * k3 + k4) * (dt / 6.0);
        }
        let expected = (g.a_matrix() * 1.0).exp() * e0;
        assert!((x - expected).norm() < 1e-6, "{}", (x - expected).norm());
    }
}
