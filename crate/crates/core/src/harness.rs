//! Closed-loop scenarios, run logs, metrics and table sweeps.

use std::collections::BTreeMap;
use std::io::Write;
use std::path::{Path, PathBuf};

use nalgebra::{Vector3, Vector6};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::baselines::{carrot_target, nlgl_target, tracking_mpc_solve, GuidanceConfig, LowLevel};
use crate::error::{Error, Result};
use crate::gp::{confidence_radius, GpConfig, GpModel, GpPrediction};
use crate::lbfblc::{Gains, GainsConfig};
use crate::mpfc::{self, OcpConfig, OcpSolution};
use crate::paths::{PathSpec, BENCHMARK_PATHS};
use crate::quadrotor::{acceleration, attitude_commands, step_with_actuator, PlantState, QuadParams};
use crate::wind::{drag_force, WindConfig, WindModel};

/// Tolerance on the discrete Lyapunov difference in the stability monitor.
pub const LYAPUNOV_TOL: f64 = 1e-6;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum HighLevel {
    Mpfc,
    Carrot,
    Nlgl,
    TrackingMpc,
}

impl HighLevel {
    pub fn label(&self) -> &'static str {
        match self {
            HighLevel::Mpfc => "MPFC",
            HighLevel::Carrot => "Carrot-chasing",
            HighLevel::Nlgl => "NLGL",
            HighLevel::TrackingMpc => "MPC",
        }
    }
}

/// A preset name or a full path description.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum PathSelection {
    Preset(String),
    Custom(PathSpec),
}

impl PathSelection {
    pub fn resolve(&self) -> Result<PathSpec> {
        match self {
            PathSelection::Preset(name) => PathSpec::preset(name),
            PathSelection::Custom(spec) => {
                spec.validate()?;
                Ok(spec.clone())
            }
        }
    }

    pub fn label(&self) -> String {
        match self {
            PathSelection::Preset(name) => name.clone(),
            PathSelection::Custom(_) => "custom".into(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum WindScenario {
    Calm,
    /// Random constant wind plus turbulence, optionally with the 20 m/s gust.
    Uncertain {
        seed: u64,
        #[serde(default)]
        gust: bool,
    },
    Custom {
        config: WindConfig,
    },
}

impl WindScenario {
    pub fn config(&self) -> WindConfig {
        match self {
            WindScenario::Calm => WindConfig::calm(),
            WindScenario::Uncertain { seed, gust } => WindConfig::random_uncertain(*seed, *gust),
            WindScenario::Custom { config } => config.clone(),
        }
    }

    pub fn seed(&self) -> Option<u64> {
        match self {
            WindScenario::Uncertain { seed, .. } => Some(*seed),
            _ => None,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub name: String,
    /// Column label used when aggregating comparison tables.
    pub condition: String,
    pub path: PathSelection,
    pub wind: WindScenario,
    pub high_level: HighLevel,
    pub low_level: LowLevel,
    pub duration: f64,
    pub dt: f64,
    pub substeps: usize,
    /// Control periods between high-level re-solves.
    pub replan_every: usize,
    /// Standard deviation of the white noise on acceleration measurements.
    pub noise_std: f64,
    /// Seed of the measurement-noise stream.
    pub seed: u64,
    pub quad: QuadParams,
    pub gp: GpConfig,
    pub gains: GainsConfig,
    pub ocp: OcpConfig,
    pub guidance: GuidanceConfig,
    pub output_dir: Option<PathBuf>,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            name: "run".into(),
            condition: "default".into(),
            path: PathSelection::Preset("circle".into()),
            wind: WindScenario::Calm,
            high_level: HighLevel::Mpfc,
            low_level: LowLevel::LbFblc,
            duration: 20.0,
            dt: 0.01,
            substeps: 10,
            replan_every: 10,
            noise_std: 0.005,
            seed: 0,
            quad: QuadParams::default(),
            gp: GpConfig::default(),
            gains: GainsConfig::default(),
            ocp: OcpConfig::default(),
            guidance: GuidanceConfig::default(),
            output_dir: None,
        }
    }
}

impl ExperimentConfig {
    pub fn from_toml_str(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_toml_str(&std::fs::read_to_string(path)?)
    }

    pub fn to_toml_string(&self) -> Result<String> {
        Ok(toml::to_string(self)?)
    }

    pub fn steps(&self) -> usize {
        (self.duration / self.dt).round() as usize
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.duration > 0.0 && self.dt > 0.0) {
            return Err(Error::Config("duration and dt must be positive".into()));
        }
        let m = self.duration / self.dt;
        if (m - m.round()).abs() > 1e-9 * m.max(1.0) {
            return Err(Error::Config("duration must be an integral number of control periods".into()));
        }
        if self.substeps == 0 || self.replan_every == 0 {
            return Err(Error::Config("substeps and replan_every must be at least 1".into()));
        }
        if !(self.noise_std >= 0.0) {
            return Err(Error::Config("noise_std must be non-negative".into()));
        }
        if self.replan_every as f64 * self.dt > self.ocp.horizon as f64 * self.ocp.dt + 1e-12 {
            return Err(Error::Config("the replanning period cannot exceed the prediction horizon".into()));
        }
        self.path.resolve()?;
        self.quad.validate()?;
        self.gp.validate()?;
        self.ocp.validate()?;
        self.guidance.validate()?;
        Gains::new(&self.gains)?;
        WindModel::new(self.wind.config())?;
        Ok(())
    }

    /// SHA-256 of the canonical JSON form.
    pub fn hash(&self) -> String {
        let json = serde_json::to_string(self).expect("config serializes");
        hex::encode(Sha256::digest(json.as_bytes()))
    }
}

/// One control period. Field order is the CSV column order.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct StepRecord {
    pub t: f64,
    pub p_x: f64,
    pub p_y: f64,
    pub p_z: f64,
    pub v_x: f64,
    pub v_y: f64,
    pub v_z: f64,
    pub pd_x: f64,
    pub pd_y: f64,
    pub pd_z: f64,
    pub vd_x: f64,
    pub vd_y: f64,
    pub vd_z: f64,
    pub ad_x: f64,
    pub ad_y: f64,
    pub ad_z: f64,
    pub u_x: f64,
    pub u_y: f64,
    pub u_z: f64,
    pub a_x: f64,
    pub a_y: f64,
    pub a_z: f64,
    pub r_x: f64,
    pub r_y: f64,
    pub r_z: f64,
    pub k_c: f64,
    pub slack: f64,
    pub mu_x: f64,
    pub mu_y: f64,
    pub mu_z: f64,
    pub sigma_x: f64,
    pub sigma_y: f64,
    pub sigma_z: f64,
    pub d_min: f64,
    pub theta: f64,
    pub theta_vel: f64,
    pub lyapunov: f64,
    pub margin: f64,
    pub saturated: bool,
    /// True disturbance acceleration `f_a / m` at this step.
    pub delta_x: f64,
    pub delta_y: f64,
    pub delta_z: f64,
    /// Whether the true disturbance lies inside the GP confidence ball.
    pub in_band: bool,
    pub wind_x: f64,
    pub wind_y: f64,
    pub wind_z: f64,
    pub thrust: f64,
    pub roll: f64,
    pub pitch: f64,
    /// SQP iterations of a solve issued at this step, 0 otherwise.
    pub solver_iterations: usize,
    /// Smallest θ̄_vel over the nodes of a solve issued at this step, NaN otherwise.
    pub plan_min_theta_vel: f64,
}

impl StepRecord {
    pub fn position(&self) -> Vector3<f64> {
        Vector3::new(self.p_x, self.p_y, self.p_z)
    }

    pub fn control(&self) -> Vector3<f64> {
        Vector3::new(self.u_x, self.u_y, self.u_z)
    }

    fn bits(&self) -> Vec<u64> {
        let f = [
            self.t, self.p_x, self.p_y, self.p_z, self.v_x, self.v_y, self.v_z, self.pd_x, self.pd_y, self.pd_z,
            self.vd_x, self.vd_y, self.vd_z, self.ad_x, self.ad_y, self.ad_z, self.u_x, self.u_y, self.u_z,
            self.a_x, self.a_y, self.a_z, self.r_x, self.r_y, self.r_z, self.k_c, self.slack, self.mu_x,
            self.mu_y, self.mu_z, self.sigma_x, self.sigma_y, self.sigma_z, self.d_min, self.theta,
            self.theta_vel, self.lyapunov, self.margin, self.delta_x, self.delta_y, self.delta_z, self.wind_x, self.wind_y, self.wind_z, self.thrust,
            self.roll, self.pitch, self.plan_min_theta_vel,
        ];
        let mut bits: Vec<u64> = f.iter().map(|v| v.to_bits()).collect();
        bits.push(self.saturated as u64);
        bits.push(self.in_band as u64);
        bits.push(self.solver_iterations as u64);
        bits
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunLog {
    pub name: String,
    pub config_hash: String,
    pub noise_seed: u64,
    pub wind_seed: Option<u64>,
    pub high_level: HighLevel,
    pub low_level: LowLevel,
    pub dt: f64,
    pub records: Vec<StepRecord>,
    /// Set when the run aborted early; the records stop at the fault.
    pub error: Option<String>,
}

impl RunLog {
    /// SHA-256 over the bit patterns of every logged value.
    pub fn digest(&self) -> String {
        let mut h = Sha256::new();
        for r in &self.records {
            for b in r.bits() {
                h.update(b.to_le_bytes());
            }
        }
        hex::encode(h.finalize())
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut w = csv::Writer::from_path(path)?;
        for r in &self.records {
            w.serialize(r)?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn read_csv(path: &Path) -> Result<Vec<StepRecord>> {
        let mut rdr = csv::Reader::from_path(path)?;
        rdr.deserialize().map(|r| r.map_err(Error::from)).collect()
    }
}

/// `sqrt(mean(d_min²))` over the logged steps.
pub fn rmse(log: &RunLog) -> f64 {
    if log.records.is_empty() {
        return 0.0;
    }
    let sum: f64 = log.records.iter().map(|r| r.d_min * r.d_min).sum();
    (sum / log.records.len() as f64).sqrt()
}

pub fn max_error(log: &RunLog) -> f64 {
    log.records.iter().map(|r| r.d_min).fold(0.0, f64::max)
}

/// Invariant counters and error metrics of one run.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub name: String,
    pub condition: String,
    pub path: String,
    pub high_level: HighLevel,
    pub low_level: LowLevel,
    pub wind_seed: Option<u64>,
    pub config_hash: String,
    pub log_digest: String,
    pub steps: usize,
    pub rmse: f64,
    pub max_error: f64,
    pub mean_solver_iterations: f64,
    pub control_violations: usize,
    /// MPFC plans with a node below ε_θ.
    pub theta_vel_violations: usize,
    pub theta_decreases: usize,
    pub saturated_steps: usize,
    /// Unsaturated steps with a non-negative stability margin.
    pub lyapunov_checked: usize,
    /// Of those, steps where `V` still grew by more than the tolerance.
    pub lyapunov_increases: usize,
    /// Unsaturated steps with margin ≥ 0 but the disturbance outside the GP band.
    pub lyapunov_out_of_band: usize,
    pub error: Option<String>,
}

impl MetricsReport {
    pub fn from_log(config: &ExperimentConfig, log: &RunLog) -> Self {
        let tol = 1e-12;
        let (lo, hi) = (config.quad.u_min(), config.quad.u_max());
        let control_violations = log
            .records
            .iter()
            .filter(|r| {
                let u = r.control();
                (0..3).any(|i| u[i] < lo[i] - tol || u[i] > hi[i] + tol)
            })
            .count();
        let theta_vel_violations = log
            .records
            .iter()
            .filter(|r| r.plan_min_theta_vel.is_finite() && r.plan_min_theta_vel < config.ocp.eps_theta - tol)
            .count();
        // The tracking baseline's clock stops at the path end by design.
        let theta_vel_violations = if config.high_level == HighLevel::Mpfc { theta_vel_violations } else { 0 };
        let theta_decreases = log.records.windows(2).filter(|w| w[1].theta < w[0].theta).count();
        let solves: Vec<_> = log.records.iter().filter(|r| r.solver_iterations > 0).collect();
        let mean_solver_iterations = if solves.is_empty() {
            0.0
        } else {
            solves.iter().map(|r| r.solver_iterations as f64).sum::<f64>() / solves.len() as f64
        };
        let (checked, increases) = lyapunov_monitor(log);
        Self {
            name: config.name.clone(),
            condition: config.condition.clone(),
            path: config.path.label(),
            high_level: config.high_level,
            low_level: config.low_level,
            wind_seed: config.wind.seed(),
            config_hash: log.config_hash.clone(),
            log_digest: log.digest(),
            steps: log.records.len(),
            rmse: rmse(log),
            max_error: max_error(log),
            mean_solver_iterations,
            control_violations,
            theta_vel_violations,
            theta_decreases,
            saturated_steps: log.records.iter().filter(|r| r.saturated).count(),
            lyapunov_checked: checked,
            lyapunov_increases: increases,
            lyapunov_out_of_band: out_of_band_margin_steps(log),
            error: log.error.clone(),
        }
    }
}

/// Counts unsaturated steps with margin ≥ 0 and the true disturbance inside
/// the GP confidence ball, and those among them after which `V` increased by
/// more than [`LYAPUNOV_TOL`].
pub fn lyapunov_monitor(log: &RunLog) -> (usize, usize) {
    let mut checked = 0;
    let mut increases = 0;
    for w in log.records.windows(2) {
        if w[0].margin >= 0.0 && !w[0].saturated && w[0].in_band {
            checked += 1;
            if w[1].lyapunov > w[0].lyapunov + LYAPUNOV_TOL {
                increases += 1;
            }
        }
    }
    (checked, increases)
}

/// Unsaturated steps with margin ≥ 0 whose true disturbance left the GP
/// confidence ball; the decrease guarantee does not cover them.
pub fn out_of_band_margin_steps(log: &RunLog) -> usize {
    log.records.iter().filter(|r| r.margin >= 0.0 && !r.saturated && !r.in_band).count()
}

/// The active reference source between control steps.
enum Planner {
    Plan { solution: OcpSolution, elapsed: usize },
    Guidance { theta_min: f64 },
}

/// Interval index and offset into it, `steps` control periods after a solve.
fn plan_offset(steps: usize, dt: f64, ocp_dt: f64) -> (usize, f64) {
    let s = steps as f64 * dt;
    let node = ((s / ocp_dt) * (1.0 + 1e-12)).floor() as usize;
    (node, (s - node as f64 * ocp_dt).max(0.0))
}

/// Runs one closed-loop scenario. Faults during the run end the log early and
/// are recorded in [`RunLog::error`].
pub fn run_scenario(config: &ExperimentConfig) -> Result<RunLog> {
    config.validate()?;
    let path = config.path.resolve()?;
    let wind = WindModel::new(config.wind.config())?;
    let gains = Gains::new(&config.gains)?;
    let params = &config.quad;
    let steps = config.steps();
    let dt = config.dt;
    let theta_vel_nominal = config.guidance.theta_vel_nominal;

    let start = path.reference_state(path.theta_start(), theta_vel_nominal)?;
    let mut state = PlantState::new(start.position, start.velocity);
    let mut applied = params.hover_force();
    let mut gp_live = GpModel::new(config.gp.clone())?;
    let mut gp = gp_live.clone();
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let noise = Normal::new(0.0, config.noise_std).map_err(|e| Error::Config(e.to_string()))?;

    let mut log = RunLog {
        name: config.name.clone(),
        config_hash: config.hash(),
        noise_seed: config.seed,
        wind_seed: config.wind.seed(),
        high_level: config.high_level,
        low_level: config.low_level,
        dt,
        records: Vec::with_capacity(steps),
        error: None,
    };
    let mut planner = match config.high_level {
        HighLevel::Mpfc | HighLevel::TrackingMpc => None,
        HighLevel::Carrot | HighLevel::Nlgl => Some(Planner::Guidance { theta_min: path.theta_start() }),
    };
    let mut path_state = (path.theta_start(), theta_vel_nominal);

    for k in 0..steps {
        let t = k as f64 * dt;
        let x = state.to_vector();
        let mut solver_iterations = 0;
        let mut plan_min_theta_vel = f64::NAN;

        let reference = (|| -> Result<(Vector6<f64>, Vector3<f64>, f64, f64)> {
            match config.high_level {
                HighLevel::Mpfc | HighLevel::TrackingMpc => {
                    let due = match &planner {
                        Some(Planner::Plan { elapsed, .. }) => *elapsed >= config.replan_every,
                        _ => true,
                    };
                    if due {
                        let warm = match &planner {
                            Some(Planner::Plan { solution, elapsed }) => {
                                Some(solution.shifted_inputs(plan_offset(*elapsed, dt, config.ocp.dt).0))
                            }
                            _ => None,
                        };
                        let solution = match config.high_level {
                            HighLevel::Mpfc => {
                                mpfc::solve(&x, path_state.0, path_state.1, &path, &config.ocp, warm)?
                            }
                            _ => tracking_mpc_solve(
                                &x,
                                t,
                                &path,
                                theta_vel_nominal,
                                &config.ocp,
                                warm.map(|w| w.0),
                            )?,
                        };
                        solver_iterations = solution.iterations;
                        plan_min_theta_vel = solution.min_theta_vel();
                        planner = Some(Planner::Plan { solution, elapsed: 0 });
                    }
                    let Some(Planner::Plan { solution, elapsed }) = &mut planner else { unreachable!() };
                    let (node, tau) = plan_offset(*elapsed, dt, config.ocp.dt);
                    let (x_d, a_d) = solution.reference_at(node, tau);
                    let (theta, theta_vel) = solution.path_state_at(node, tau);
                    *elapsed += 1;
                    let (node, tau) = plan_offset(*elapsed, dt, config.ocp.dt);
                    // The terminal θ bound is relaxed by a hair near the end of
                    // the path; pull the carried state back into the domain.
                    let (th, tv) = solution.path_state_at(node, tau);
                    path_state = (path.clamp(th), tv.max(config.ocp.eps_theta));
                    let theta = path.clamp(theta);
                    Ok((x_d, a_d, theta, theta_vel))
                }
                HighLevel::Carrot | HighLevel::Nlgl => {
                    let Some(Planner::Guidance { theta_min }) = &mut planner else { unreachable!() };
                    let target = if config.high_level == HighLevel::Carrot {
                        carrot_target(&path, &state.p, &config.guidance, Some(*theta_min))?
                    } else {
                        nlgl_target(&path, &state.p, &config.guidance, Some(*theta_min))?
                    };
                    *theta_min = target.theta_proj;
                    Ok((target.x_d, target.a_d, target.theta, theta_vel_nominal))
                }
            }
        })();
        let (x_d, a_d, theta, theta_vel) = match reference {
            Ok(r) => r,
            Err(e) => {
                log.error = Some(format!("t = {t:.2}: high-level controller failed: {e}"));
                break;
            }
        };

        let prediction = if config.low_level.uses_gp() {
            gp.predict(&x)
        } else {
            GpPrediction { mean: Vector3::zeros(), std: Vector3::zeros() }
        };
        let out = match config.low_level.control(&x, &x_d, &a_d, &prediction, config.gp.beta, &gains, params) {
            Ok(o) => o,
            Err(e) => {
                log.error = Some(format!("t = {t:.2}: low-level controller failed: {e}"));
                break;
            }
        };
        let attitude = attitude_commands(&out.u, &out.a, 0.0, params.gravity).ok();
        let v_w = wind.wind_velocity(t);
        let d_min = path.min_distance(&state.p).d_min;
        let delta = drag_force(&v_w, &state.v, &params.k_drag()) / params.mass;
        let in_band = (delta - out.mu).norm() <= confidence_radius(&out.sigma, config.gp.beta);

        log.records.push(StepRecord {
            t,
            p_x: state.p.x,
            p_y: state.p.y,
            p_z: state.p.z,
            v_x: state.v.x,
            v_y: state.v.y,
            v_z: state.v.z,
            pd_x: x_d[0],
            pd_y: x_d[1],
            pd_z: x_d[2],
            vd_x: x_d[3],
            vd_y: x_d[4],
            vd_z: x_d[5],
            ad_x: a_d.x,
            ad_y: a_d.y,
            ad_z: a_d.z,
            u_x: out.u.x,
            u_y: out.u.y,
            u_z: out.u.z,
            a_x: out.a.x,
            a_y: out.a.y,
            a_z: out.a.z,
            r_x: out.r.x,
            r_y: out.r.y,
            r_z: out.r.z,
            k_c: out.k_c,
            slack: out.slack,
            mu_x: out.mu.x,
            mu_y: out.mu.y,
            mu_z: out.mu.z,
            sigma_x: out.sigma.x,
            sigma_y: out.sigma.y,
            sigma_z: out.sigma.z,
            d_min,
            theta,
            theta_vel,
            lyapunov: out.lyapunov,
            margin: out.margin,
            saturated: out.saturated,
            delta_x: delta.x,
            delta_y: delta.y,
            delta_z: delta.z,
            in_band,
            wind_x: v_w.x,
            wind_y: v_w.y,
            wind_z: v_w.z,
            thrust: attitude.map_or(0.0, |a| a.thrust),
            roll: attitude.map_or(0.0, |a| a.roll),
            pitch: attitude.map_or(0.0, |a| a.pitch),
            solver_iterations,
            plan_min_theta_vel,
        });

        let dt_sub = dt / config.substeps as f64;
        match step_with_actuator(&state, &applied, &out.u, &wind, t, dt_sub, config.substeps, params) {
            Ok((next, force)) => {
                state = next;
                applied = force;
            }
            Err(e) => {
                log.error = Some(format!("t = {t:.2}: {e}"));
                break;
            }
        }

        // Training pair at the end of the period: noisy measured acceleration
        // minus the pseudo-control that was commanded.
        let t_next = t + dt;
        let v_dot = acceleration(&state, &applied, &wind, t_next, params);
        let noise_sample = Vector3::from_fn(|_, _| noise.sample(&mut rng));
        let target = v_dot + noise_sample - out.a;
        if config.low_level.uses_gp() {
            if let Err(e) = gp_live.push(state.to_vector(), target) {
                log::warn!("{}: GP update skipped at t = {t_next:.2}: {e}", config.name);
            }
            if (k + 1) % config.gp.update_period == 0 {
                gp = gp_live.clone();
            }
        }
    }
    if let Some(e) = &log.error {
        log::error!("{}: run aborted: {e}", config.name);
    }
    Ok(log)
}

/// Runs a scenario and writes `<name>.csv` and `<name>.metrics.json` into
/// the configured output directory, if any.
pub fn run_and_report(config: &ExperimentConfig) -> Result<(RunLog, MetricsReport)> {
    let log = run_scenario(config)?;
    let report = MetricsReport::from_log(config, &log);
    if let Some(dir) = &config.output_dir {
        std::fs::create_dir_all(dir)?;
        log.write_csv(&dir.join(format!("{}.csv", config.name)))?;
        let mut f = std::fs::File::create(dir.join(format!("{}.metrics.json", config.name)))?;
        serde_json::to_writer_pretty(&mut f, &report)?;
        writeln!(f)?;
    }
    Ok((log, report))
}

/// Runs scenarios in parallel; results come back sorted by scenario name.
pub fn sweep(configs: &[ExperimentConfig]) -> Result<Vec<MetricsReport>> {
    let mut reports = configs
        .par_iter()
        .map(|c| {
            log::info!("running {}", c.name);
            run_and_report(c).map(|(_, r)| r)
        })
        .collect::<Result<Vec<_>>>()?;
    reports.sort_by(|a, b| a.name.cmp(&b.name));
    Ok(reports)
}

/// One aggregated table row.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ComparisonRow {
    pub high_level: HighLevel,
    pub low_level: LowLevel,
    /// Mean RMSE per condition label.
    pub rmse: BTreeMap<String, f64>,
    /// Mean maximum error per condition label.
    pub max_error: BTreeMap<String, f64>,
    pub runs: usize,
}

/// Averages reports per (high level, low level) pair and condition.
pub fn compare(reports: &[MetricsReport]) -> Vec<ComparisonRow> {
    let mut groups: BTreeMap<(HighLevel, LowLevel), BTreeMap<String, Vec<&MetricsReport>>> = BTreeMap::new();
    for r in reports {
        groups.entry((r.high_level, r.low_level)).or_default().entry(r.condition.clone()).or_default().push(r);
    }
    groups
        .into_iter()
        .map(|((high_level, low_level), by_condition)| {
            let mean = |rs: &[&MetricsReport], f: fn(&MetricsReport) -> f64| {
                rs.iter().map(|r| f(r)).sum::<f64>() / rs.len() as f64
            };
            let runs = by_condition.values().map(|v| v.len()).sum();
            ComparisonRow {
                high_level,
                low_level,
                rmse: by_condition.iter().map(|(c, rs)| (c.clone(), mean(rs, |r| r.rmse))).collect(),
                max_error: by_condition.iter().map(|(c, rs)| (c.clone(), mean(rs, |r| r.max_error))).collect(),
                runs,
            }
        })
        .collect()
}

/// Wind condition of a sweep column.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "wind", rename_all = "snake_case")]
pub enum SweepCondition {
    Calm { label: String },
    Uncertain { label: String, seeds: Vec<u64>, #[serde(default)] gust: bool },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ControllerPair {
    pub high_level: HighLevel,
    pub low_level: LowLevel,
}

/// A table: every controller pair on every path under every condition.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepConfig {
    #[serde(default)]
    pub base: ExperimentConfig,
    pub paths: Vec<String>,
    pub controllers: Vec<ControllerPair>,
    pub conditions: Vec<SweepCondition>,
    /// Measurement-noise levels to cross with every condition; empty keeps the base value.
    #[serde(default)]
    pub noise_std: Vec<f64>,
    /// GP noise settings α to cross with every condition; empty keeps the base value.
    #[serde(default)]
    pub gp_noise_level: Vec<f64>,
}

impl SweepConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let cfg: Self = toml::from_str(&std::fs::read_to_string(path)?)?;
        Ok(cfg)
    }

    pub fn expand(&self) -> Result<Vec<ExperimentConfig>> {
        let or_base = |v: &[f64], base: f64| if v.is_empty() { vec![base] } else { v.to_vec() };
        let noise_levels = or_base(&self.noise_std, self.base.noise_std);
        let alphas = or_base(&self.gp_noise_level, self.base.gp.noise_level);
        let mut out = Vec::new();
        for pair in &self.controllers {
            for path in &self.paths {
                for cond in &self.conditions {
                    let winds: Vec<(String, WindScenario)> = match cond {
                        SweepCondition::Calm { label } => vec![(label.clone(), WindScenario::Calm)],
                        SweepCondition::Uncertain { label, seeds, gust } => seeds
                            .iter()
                            .map(|s| (label.clone(), WindScenario::Uncertain { seed: *s, gust: *gust }))
                            .collect(),
                    };
                    for (label, wind) in winds {
                        for &noise in &noise_levels {
                            for &alpha in &alphas {
                                let mut c = self.base.clone();
                                let mut condition = label.clone();
                                if !self.noise_std.is_empty() {
                                    condition.push_str(&format!("_noise{noise}"));
                                }
                                if !self.gp_noise_level.is_empty() {
                                    condition.push_str(&format!("_alpha{alpha}"));
                                }
                                let seed_tag = wind.seed().map_or("calm".to_string(), |s| format!("s{s}"));
                                c.name = format!(
                                    "{}_{}_{}_{}_{}",
                                    pair.high_level.label(),
                                    pair.low_level.label(),
                                    path,
                                    condition,
                                    seed_tag
                                )
                                .to_lowercase();
                                c.condition = condition;
                                c.path = PathSelection::Preset(path.clone());
                                c.wind = wind.clone();
                                c.high_level = pair.high_level;
                                c.low_level = pair.low_level;
                                c.noise_std = noise;
                                c.gp.noise_level = alpha;
                                c.validate()?;
                                out.push(c);
                            }
                        }
                    }
                }
            }
        }
        Ok(out)
    }
}

/// Table I layout: the MPFC over each low level, calm and uncertain wind,
/// averaged over the five benchmark paths.
pub fn table_one(seeds: &[u64], low_levels: &[LowLevel], with_gust: bool) -> SweepConfig {
    SweepConfig {
        base: ExperimentConfig::default(),
        paths: BENCHMARK_PATHS.iter().map(|s| s.to_string()).collect(),
        controllers: low_levels.iter().map(|l| ControllerPair { high_level: HighLevel::Mpfc, low_level: *l }).collect(),
        conditions: vec![
            SweepCondition::Calm { label: "no-disturbance".into() },
            SweepCondition::Uncertain { label: "disturbed".into(), seeds: seeds.to_vec(), gust: with_gust },
        ],
        noise_std: Vec::new(),
        gp_noise_level: Vec::new(),
    }
}

/// Grid search of the carrot lead distance and the NLGL radius on the calm
/// circle; returns `(d1, d2)` with the smallest RMSE (ties to the smaller).
pub fn tune_guidance(base: &ExperimentConfig, candidates: &[f64]) -> Result<(f64, f64)> {
    let runs: Vec<(HighLevel, f64)> = [HighLevel::Carrot, HighLevel::Nlgl]
        .iter()
        .flat_map(|h| candidates.iter().map(move |d| (*h, *d)))
        .collect();
    let scores = runs
        .par_iter()
        .map(|(high, d)| {
            let mut c = base.clone();
            c.name = format!("tune_{}_{d}", high.label());
            c.path = PathSelection::Preset("circle".into());
            c.wind = WindScenario::Calm;
            c.high_level = *high;
            c.low_level = LowLevel::LbFblc;
            c.output_dir = None;
            c.guidance.d1 = *d;
            c.guidance.d2 = *d;
            let log = run_scenario(&c)?;
            let score = if log.error.is_some() { f64::INFINITY } else { rmse(&log) };
            log::info!("{} d = {d}: rmse {score:.6}", high.label());
            Ok((*high, *d, score))
        })
        .collect::<Result<Vec<_>>>()?;
    let best = |h: HighLevel| {
        scores
            .iter()
            .filter(|s| s.0 == h)
            .fold((f64::NAN, f64::INFINITY), |acc, s| if s.2 < acc.1 { (s.1, s.2) } else { acc })
            .0
    };
    Ok((best(HighLevel::Carrot), best(HighLevel::Nlgl)))
}

/// A violated run invariant.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Violation {
    pub run: String,
    pub check: String,
    pub detail: String,
}

/// Checks the per-run invariants of a finished log against its config.
pub fn check_invariants(config: &ExperimentConfig, log: &RunLog) -> Vec<Violation> {
    let report = MetricsReport::from_log(config, log);
    let mut out = Vec::new();
    let mut fail = |check: &str, detail: String| {
        out.push(Violation { run: config.name.clone(), check: check.into(), detail });
    };
    if let Some(e) = &log.error {
        fail("completed", e.clone());
    }
    if log.records.len() != config.steps() && log.error.is_none() {
        fail("record count", format!("{} records for {} steps", log.records.len(), config.steps()));
    }
    for (k, r) in log.records.iter().enumerate() {
        if (r.t - k as f64 * config.dt).abs() > 1e-9 {
            fail("time grid", format!("record {k} at t = {}", r.t));
            break;
        }
    }
    if report.control_violations > 0 {
        fail("control bounds", format!("{} steps outside [u_min, u_max]", report.control_violations));
    }
    if report.theta_vel_violations > 0 {
        fail("path speed", format!("{} plans with θ̄_vel below eps_theta", report.theta_vel_violations));
    }
    if config.high_level == HighLevel::Mpfc && report.theta_decreases > 0 {
        fail("θ monotone", format!("{} decreases of the applied θ", report.theta_decreases));
    }
    // The margin only certifies decrease for the full learning-based controller.
    let gust = config.wind.config().gust.enabled;
    if config.low_level == LowLevel::LbFblc && !gust && report.lyapunov_increases > 0 {
        fail(
            "Lyapunov decrease",
            format!("{} of {} monitored steps increased V", report.lyapunov_increases, report.lyapunov_checked),
        );
    }
    if report.rmse > report.max_error + 1e-15 {
        fail("rmse ≤ max", format!("{} > {}", report.rmse, report.max_error));
    }
    out
}

/// Runs the scenario twice and checks invariants plus bitwise replay.
pub fn validate_scenario(config: &ExperimentConfig) -> Result<Vec<Violation>> {
    let first = run_scenario(config)?;
    let mut violations = check_invariants(config, &first);
    let replay = run_scenario(config)?;
    if replay.digest() != first.digest() {
        violations.push(Violation {
            run: config.name.clone(),
            check: "determinism".into(),
            detail: "replay produced a different log".into(),
        });
    }
    Ok(violations)
}
