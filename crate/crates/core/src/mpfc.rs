//! Model predictive path following.
//!
//! The prediction model is the translational double integrator augmented with
//! a second double integrator for the path parameter θ. The optimal control
//! problem is condensed onto the inputs (pseudo-accelerations ā and path
//! accelerations θ̄_acc) and solved by Gauss–Newton SQP: the only
//! nonlinearity is the path `P(θ)` inside the tracking residual.

use nalgebra::{DMatrix, DVector, SMatrix, Vector3, Vector6};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::paths::PathSpec;
use crate::qp::solve_qp;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SqpSettings {
    pub max_iterations: usize,
    /// Terminate once the infinity norm of the step falls below this.
    pub tolerance: f64,
    pub line_search_contraction: f64,
    pub max_line_search_steps: usize,
}

impl Default for SqpSettings {
    fn default() -> Self {
        Self { max_iterations: 10, tolerance: 1e-8, line_search_contraction: 0.5, max_line_search_steps: 30 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OcpConfig {
    pub horizon: usize,
    pub dt: f64,
    /// Diagonal of the tracking weight over (position, velocity).
    pub q_diag: [f64; 6],
    pub r_a: [f64; 3],
    pub r_theta: f64,
    pub a_min: [f64; 3],
    pub a_max: [f64; 3],
    pub theta_acc_min: f64,
    pub theta_acc_max: f64,
    pub eps_theta: f64,
    /// Optional symmetric box `|x̄_i| ≤ b_i` on predicted states.
    #[serde(default)]
    pub state_bound: Option<[f64; 6]>,
    #[serde(default)]
    pub sqp: SqpSettings,
}

impl Default for OcpConfig {
    fn default() -> Self {
        Self {
            horizon: 20,
            dt: 0.1,
            q_diag: [10.0, 10.0, 10.0, 1.0, 1.0, 1.0],
            r_a: [0.1; 3],
            r_theta: 0.1,
            a_min: [-2.0; 3],
            a_max: [2.0; 3],
            theta_acc_min: -5.0,
            theta_acc_max: 5.0,
            eps_theta: 1e-3,
            state_bound: None,
            sqp: SqpSettings::default(),
        }
    }
}

impl OcpConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Config(format!("ocp: {m}")));
        if self.horizon == 0 {
            return bad("horizon must be at least 1");
        }
        if !(self.dt > 0.0) || !(self.eps_theta > 0.0) || !(self.r_theta > 0.0) {
            return bad("dt, eps_theta and r_theta must be positive");
        }
        if self.q_diag.iter().any(|q| !(*q >= 0.0)) || self.r_a.iter().any(|r| !(*r > 0.0)) {
            return bad("Q must be positive semidefinite and R_a positive definite");
        }
        if (0..3).any(|i| !(self.a_min[i] <= 0.0 && 0.0 <= self.a_max[i]))
            || !(self.theta_acc_min <= 0.0 && 0.0 <= self.theta_acc_max)
        {
            return bad("input boxes must contain zero");
        }
        if !(self.sqp.line_search_contraction > 0.0 && self.sqp.line_search_contraction < 1.0) {
            return bad("line-search contraction must lie in (0, 1)");
        }
        Ok(())
    }
}

/// Exact zero-order-hold discretization of the 8-state model
/// (position, velocity, θ, θ_vel) driven by (ā, θ_acc).
pub fn discretize(dt: f64) -> (SMatrix<f64, 8, 8>, SMatrix<f64, 8, 4>) {
    let mut a = SMatrix::<f64, 8, 8>::identity();
    let mut b = SMatrix::<f64, 8, 4>::zeros();
    for i in 0..3 {
        a[(i, 3 + i)] = dt;
        b[(i, i)] = 0.5 * dt * dt;
        b[(3 + i, i)] = dt;
    }
    a[(6, 7)] = dt;
    b[(6, 3)] = 0.5 * dt * dt;
    b[(7, 3)] = dt;
    (a, b)
}

/// Nodes of a predicted trajectory: states and path states at `0..=H`,
/// inputs at `0..H`.
#[derive(Clone, Debug, PartialEq)]
pub struct Trajectory {
    pub dt: f64,
    pub states: Vec<Vector6<f64>>,
    pub controls: Vec<Vector3<f64>>,
    pub theta: Vec<f64>,
    pub theta_vel: Vec<f64>,
    pub theta_acc: Vec<f64>,
}

impl Trajectory {
    pub fn rollout(
        x0: &Vector6<f64>,
        theta0: f64,
        theta_vel0: f64,
        controls: &[Vector3<f64>],
        theta_acc: &[f64],
        dt: f64,
    ) -> Self {
        let h = controls.len();
        assert_eq!(theta_acc.len(), h);
        let mut states = Vec::with_capacity(h + 1);
        let (mut theta, mut theta_vel) = (Vec::with_capacity(h + 1), Vec::with_capacity(h + 1));
        states.push(*x0);
        theta.push(theta0);
        theta_vel.push(theta_vel0);
        for k in 0..h {
            let x = states[k];
            let a = controls[k];
            let mut next = x;
            for i in 0..3 {
                next[i] = x[i] + dt * x[3 + i] + 0.5 * dt * dt * a[i];
                next[3 + i] = x[3 + i] + dt * a[i];
            }
            states.push(next);
            theta.push(theta[k] + dt * theta_vel[k] + 0.5 * dt * dt * theta_acc[k]);
            theta_vel.push(theta_vel[k] + dt * theta_acc[k]);
        }
        Self { dt, states, controls: controls.to_vec(), theta, theta_vel, theta_acc: theta_acc.to_vec() }
    }

    pub fn horizon(&self) -> usize {
        self.controls.len()
    }

    /// Tracking residual at node `k`: state minus `(P(θ), P'(θ)·θ_vel)`.
    pub fn residual(&self, k: usize, path: &PathSpec) -> Vector6<f64> {
        let [p, dp, _] = path.jet(self.theta[k]);
        let reference = dp * self.theta_vel[k];
        let x = &self.states[k];
        Vector6::new(
            x[0] - p.x,
            x[1] - p.y,
            x[2] - p.z,
            x[3] - reference.x,
            x[4] - reference.y,
            x[5] - reference.z,
        )
    }

    /// `Σₖ dt (‖r_{k+1}‖²_Q + ‖ā_k‖²_{R_a} + R_θ θ̄_acc,k²)`.
    pub fn objective(&self, path: &PathSpec, config: &OcpConfig) -> f64 {
        let mut total = 0.0;
        for k in 0..self.horizon() {
            let r = self.residual(k + 1, path);
            let a = &self.controls[k];
            let tracking: f64 = (0..6).map(|i| config.q_diag[i] * r[i] * r[i]).sum();
            let effort: f64 = (0..3).map(|i| config.r_a[i] * a[i] * a[i]).sum();
            total += self.dt * (tracking + effort + config.r_theta * self.theta_acc[k] * self.theta_acc[k]);
        }
        total
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct OcpSolution {
    pub trajectory: Trajectory,
    pub objective: f64,
    pub iterations: usize,
    pub converged: bool,
    /// Objective after each accepted iterate, starting with the initial guess.
    pub objective_history: Vec<f64>,
}

impl OcpSolution {
    /// Reference inside interval `node`: the exact double-integrator flow from
    /// `x̄*_node` under `ā*_node`, at offset `tau ∈ [0, dt]`.
    pub fn reference_at(&self, node: usize, tau: f64) -> (Vector6<f64>, Vector3<f64>) {
        let x = &self.trajectory.states[node];
        let a = self.trajectory.controls[node];
        let mut x_d = *x;
        for i in 0..3 {
            x_d[i] = x[i] + tau * x[3 + i] + 0.5 * tau * tau * a[i];
            x_d[3 + i] = x[3 + i] + tau * a[i];
        }
        (x_d, a)
    }

    /// `(θ, θ_vel)` at `tau` into interval `node`, on the exact flow under
    /// the held `θ̄_acc`.
    pub fn path_state_at(&self, node: usize, tau: f64) -> (f64, f64) {
        let tr = &self.trajectory;
        if node >= tr.horizon() {
            return (tr.theta[tr.horizon()], tr.theta_vel[tr.horizon()]);
        }
        let (th, tv, ta) = (tr.theta[node], tr.theta_vel[node], tr.theta_acc[node]);
        (th + tau * tv + 0.5 * tau * tau * ta, tv + tau * ta)
    }

    pub fn reference_for_period(&self, tau: f64) -> (Vector6<f64>, Vector3<f64>) {
        self.reference_at(0, tau)
    }

    /// Warm start for a solve `steps` nodes later: drop the consumed inputs
    /// and repeat the last one.
    pub fn shifted_inputs(&self, steps: usize) -> (Vec<Vector3<f64>>, Vec<f64>) {
        let h = self.trajectory.horizon();
        let last = h - 1;
        let controls = (0..h).map(|k| self.trajectory.controls[(k + steps).min(last)]).collect();
        let theta_acc = (0..h).map(|k| self.trajectory.theta_acc[(k + steps).min(last)]).collect();
        (controls, theta_acc)
    }

    pub fn min_theta_vel(&self) -> f64 {
        self.trajectory.theta_vel.iter().copied().fold(f64::INFINITY, f64::min)
    }
}

/// How the path parameter evolves inside the prediction.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum PathMode {
    /// θ̄_acc are decision variables (path following).
    Free { theta0: f64, theta_vel0: f64 },
    /// θ̄ follows the clock at a fixed rate, clamped at the end of the path
    /// (trajectory tracking).
    Clock { theta0: f64, theta_vel: f64 },
}

/// Solves the path-following OCP from `x0`.
pub fn solve(
    x0: &Vector6<f64>,
    theta0: f64,
    theta_vel0: f64,
    path: &PathSpec,
    config: &OcpConfig,
    warm: Option<(Vec<Vector3<f64>>, Vec<f64>)>,
) -> Result<OcpSolution> {
    solve_with_mode(x0, PathMode::Free { theta0, theta_vel0 }, path, config, warm)
}

pub fn solve_with_mode(
    x0: &Vector6<f64>,
    mode: PathMode,
    path: &PathSpec,
    config: &OcpConfig,
    warm: Option<(Vec<Vector3<f64>>, Vec<f64>)>,
) -> Result<OcpSolution> {
    if !x0.iter().all(|v| v.is_finite()) {
        return Err(Error::Config("non-finite initial state".into()));
    }
    let h = config.horizon;
    let dt = config.dt;
    let free = matches!(mode, PathMode::Free { .. });
    let (theta0, theta_vel0) = match mode {
        PathMode::Free { theta0, theta_vel0 } => {
            if !path.contains(theta0) {
                return Err(Error::Domain { theta: theta0, lo: path.theta_start(), hi: path.theta_end() });
            }
            if !(theta_vel0 >= config.eps_theta) {
                return Err(Error::Config(format!("initial path speed {theta_vel0} below eps_theta")));
            }
            (theta0, theta_vel0)
        }
        PathMode::Clock { theta0, theta_vel } => (theta0, theta_vel),
    };

    let (mut controls, mut theta_acc) = warm.unwrap_or_else(|| (vec![Vector3::zeros(); h], vec![0.0; h]));
    if controls.len() != h || theta_acc.len() != h {
        return Err(Error::Config("warm start length differs from the horizon".into()));
    }
    for a in controls.iter_mut() {
        for i in 0..3 {
            a[i] = a[i].clamp(config.a_min[i], config.a_max[i]);
        }
    }
    for v in theta_acc.iter_mut() {
        *v = if free { v.clamp(config.theta_acc_min, config.theta_acc_max) } else { 0.0 };
    }

    let build = |controls: &[Vector3<f64>], theta_acc: &[f64]| -> Trajectory {
        match mode {
            PathMode::Free { .. } => Trajectory::rollout(x0, theta0, theta_vel0, controls, theta_acc, dt),
            PathMode::Clock { .. } => clock_trajectory(x0, theta0, theta_vel0, controls, path, dt),
        }
    };

    // Condensing coefficients: node k ≥ 1 depends on input j < k through
    // position weight dt²(k − j − ½) and velocity weight dt.
    let sp = |k: usize, j: usize| dt * dt * ((k - 1 - j) as f64 + 0.5);
    let n_var = if free { 4 * h } else { 3 * h };
    let theta_upper = if free { theta_upper_bounds(theta0, theta_vel0, path.theta_end(), config) } else { Vec::new() };

    let mut traj = build(&controls, &theta_acc);
    let mut f = traj.objective(path, config);
    let mut history = vec![f];
    let mut feasible = free_rows_satisfied(&traj, config, &theta_upper, free);
    let mut converged = false;
    let mut iterations = 0;

    for _ in 0..config.sqp.max_iterations {
        iterations += 1;
        // Gauss–Newton model: stacked residual Jacobian J and weights W.
        let mut jac = DMatrix::<f64>::zeros(6 * h, n_var);
        let mut res = DVector::<f64>::zeros(6 * h);
        for k in 1..=h {
            let row = 6 * (k - 1);
            res.rows_mut(row, 6).copy_from(&traj.residual(k, path));
            let [_, dp, ddp] = path.jet(traj.theta[k]);
            let tv = traj.theta_vel[k];
            for j in 0..k {
                for i in 0..3 {
                    jac[(row + i, 3 * j + i)] = sp(k, j);
                    jac[(row + 3 + i, 3 * j + i)] = dt;
                }
                if free {
                    let col = 3 * h + j;
                    for i in 0..3 {
                        jac[(row + i, col)] = -dp[i] * sp(k, j);
                        jac[(row + 3 + i, col)] = -ddp[i] * tv * sp(k, j) - dp[i] * dt;
                    }
                }
            }
        }
        let weights = DVector::from_fn(6 * h, |r, _| dt * config.q_diag[r % 6]);
        let weighted = DMatrix::from_fn(6 * h, n_var, |r, c| weights[r] * jac[(r, c)]);
        let mut hess = jac.transpose() * &weighted;
        let mut grad = weighted.transpose() * &res;
        let z = pack(&traj, free);
        for j in 0..h {
            for i in 0..3 {
                hess[(3 * j + i, 3 * j + i)] += dt * config.r_a[i];
                grad[3 * j + i] += dt * config.r_a[i] * z[3 * j + i];
            }
            if free {
                hess[(3 * h + j, 3 * h + j)] += dt * config.r_theta;
                grad[3 * h + j] += dt * config.r_theta * z[3 * h + j];
            }
        }

        let (c, d) = constraint_rows(&traj, &z, config, &theta_upper, free);
        let qp = solve_qp(&hess, &grad, &c, &d)?;
        let step = qp.x;
        if step.amax() < config.sqp.tolerance {
            converged = true;
            break;
        }

        // Backtracking on the true objective. An infeasible starting guess
        // takes the full step first since the QP step restores feasibility.
        let mut alpha = 1.0;
        let mut accepted = None;
        for _ in 0..=config.sqp.max_line_search_steps {
            let (ctrl, acc) = unpack(&(&z + &step * alpha), h, free);
            let cand = build(&ctrl, &acc);
            let f_cand = cand.objective(path, config);
            if !feasible || f_cand <= f {
                accepted = Some((cand, f_cand));
                break;
            }
            alpha *= config.sqp.line_search_contraction;
        }
        let Some((cand, f_cand)) = accepted else { break };
        traj = cand;
        f = f_cand;
        history.push(f);
        feasible = true;
        if alpha * step.amax() < config.sqp.tolerance {
            converged = true;
            break;
        }
        if !free {
            // The residual is affine in ā, so one full step is exact.
            converged = alpha == 1.0;
            break;
        }
    }
    Ok(OcpSolution { trajectory: traj, objective: f, iterations, converged, objective_history: history })
}

/// Trajectory tracking: θ̄ advances with the clock and stops at the end.
fn clock_trajectory(
    x0: &Vector6<f64>,
    theta0: f64,
    theta_vel: f64,
    controls: &[Vector3<f64>],
    path: &PathSpec,
    dt: f64,
) -> Trajectory {
    let h = controls.len();
    let mut traj = Trajectory::rollout(x0, theta0, theta_vel, controls, &vec![0.0; h], dt);
    for k in 0..=h {
        let raw = theta0 + k as f64 * dt * theta_vel;
        traj.theta[k] = path.clamp(raw);
        traj.theta_vel[k] = if raw >= path.theta_end() { 0.0 } else { theta_vel };
    }
    traj
}

/// Upper bound on θ̄_k: the path end, relaxed where even maximal braking
/// (subject to θ̄_vel ≥ ε_θ) cannot stop before it.
fn theta_upper_bounds(theta0: f64, theta_vel0: f64, theta_end: f64, config: &OcpConfig) -> Vec<f64> {
    let dt = config.dt;
    let (mut theta, mut vel) = (theta0, theta_vel0);
    let mut bounds = vec![theta_end.max(theta0)];
    for _ in 0..config.horizon {
        let acc = config.theta_acc_min.max((config.eps_theta - vel) / dt).min(0.0);
        theta += dt * vel + 0.5 * dt * dt * acc;
        vel += dt * acc;
        bounds.push(theta_end.max(theta + 1e-6));
    }
    bounds
}

fn pack(traj: &Trajectory, free: bool) -> DVector<f64> {
    let h = traj.horizon();
    let mut z = DVector::zeros(if free { 4 * h } else { 3 * h });
    for j in 0..h {
        for i in 0..3 {
            z[3 * j + i] = traj.controls[j][i];
        }
        if free {
            z[3 * h + j] = traj.theta_acc[j];
        }
    }
    z
}

fn unpack(z: &DVector<f64>, h: usize, free: bool) -> (Vec<Vector3<f64>>, Vec<f64>) {
    let controls = (0..h).map(|j| Vector3::new(z[3 * j], z[3 * j + 1], z[3 * j + 2])).collect();
    let theta_acc = (0..h).map(|j| if free { z[3 * h + j] } else { 0.0 }).collect();
    (controls, theta_acc)
}

fn free_rows_satisfied(traj: &Trajectory, config: &OcpConfig, theta_upper: &[f64], free: bool) -> bool {
    let tol = 1e-12;
    let inputs_ok = traj
        .controls
        .iter()
        .all(|a| (0..3).all(|i| a[i] >= config.a_min[i] - tol && a[i] <= config.a_max[i] + tol));
    let states_ok = match config.state_bound {
        Some(b) => traj.states.iter().all(|x| (0..6).all(|i| x[i].abs() <= b[i] + tol)),
        None => true,
    };
    let path_ok = !free
        || (1..traj.theta.len()).all(|k| {
            traj.theta_vel[k] >= config.eps_theta - tol
                && traj.theta[k] <= theta_upper[k] + tol
                && traj.theta_acc[k - 1] >= config.theta_acc_min - tol
                && traj.theta_acc[k - 1] <= config.theta_acc_max + tol
        });
    inputs_ok && states_ok && path_ok
}

/// Rows `C Δ ≥ d` on the step Δ from the current inputs `z`.
#[allow(clippy::needless_range_loop)]
fn constraint_rows(
    traj: &Trajectory,
    z: &DVector<f64>,
    config: &OcpConfig,
    theta_upper: &[f64],
    free: bool,
) -> (DMatrix<f64>, DVector<f64>) {
    let h = traj.horizon();
    let n = z.len();
    let dt = config.dt;
    let mut rows: Vec<(Vec<(usize, f64)>, f64)> = Vec::new();
    for j in 0..h {
        for i in 0..3 {
            let v = 3 * j + i;
            rows.push((vec![(v, 1.0)], config.a_min[i] - z[v]));
            rows.push((vec![(v, -1.0)], z[v] - config.a_max[i]));
        }
    }
    if free {
        for j in 0..h {
            let v = 3 * h + j;
            rows.push((vec![(v, 1.0)], config.theta_acc_min - z[v]));
            rows.push((vec![(v, -1.0)], z[v] - config.theta_acc_max));
        }
        for k in 1..=h {
            // θ̄_vel,k ≥ ε_θ and θ̄_k ≤ upper bound.
            let vel: Vec<_> = (0..k).map(|j| (3 * h + j, dt)).collect();
            rows.push((vel, config.eps_theta - traj.theta_vel[k]));
            let pos: Vec<_> = (0..k).map(|j| (3 * h + j, -dt * dt * ((k - 1 - j) as f64 + 0.5))).collect();
            rows.push((pos, traj.theta[k] - theta_upper[k]));
        }
    }
    if let Some(b) = config.state_bound {
        for k in 1..=h {
            for i in 0..3 {
                let pos: Vec<_> = (0..k).map(|j| (3 * j + i, dt * dt * ((k - 1 - j) as f64 + 0.5))).collect();
                let vel: Vec<_> = (0..k).map(|j| (3 * j + i, dt)).collect();
                let x = &traj.states[k];
                for (coeffs, value, bound) in [(pos, x[i], b[i]), (vel, x[3 + i], b[3 + i])] {
                    let neg = coeffs.iter().map(|(c, w)| (*c, -w)).collect();
                    rows.push((coeffs, -bound - value));
                    rows.push((neg, value - bound));
                }
            }
        }
    }
    let mut c = DMatrix::zeros(rows.len(), n);
    let mut d = DVector::zeros(rows.len());
    for (r, (coeffs, rhs)) in rows.into_iter().enumerate() {
        for (col, w) in coeffs {
            c[(r, col)] = w;
        }
        d[r] = rhs;
    }
    (c, d)
}
