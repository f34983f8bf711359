//! Wind disturbance `v_w(t) = v_c + v_t(t) + v_g(t)` and the resulting drag force.
//!
//! Turbulence is synthesized as a seeded sum of cosines whose amplitudes follow
//! the von Kármán spectra of MIL-F-8785C (low-altitude form). The discrete
//! spectrum is normalized so each axis carries exactly the configured variance.

use std::f64::consts::PI;

use nalgebra::Vector3;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

const FT_PER_M: f64 = 3.280_839_895;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TurbulenceConfig {
    pub enabled: bool,
    /// σ_u, σ_v, σ_w in m/s (u along the mean-wind heading, w vertical).
    pub intensity: [f64; 3],
    /// L_u, L_v, L_w in meters.
    pub length_scale: [f64; 3],
    /// Mean airspeed used to map spatial to temporal frequency, m/s.
    pub airspeed: f64,
    pub components: usize,
    pub seed: u64,
    /// Heading of the longitudinal axis in the x–y plane, radians.
    pub heading: f64,
    pub freq_min_hz: f64,
    pub freq_max_hz: f64,
}

impl TurbulenceConfig {
    /// Low-altitude MIL-F-8785C parameters for wind speed `w20` (m/s) at 20 ft
    /// and an operating altitude in meters.
    pub fn low_altitude(w20: f64, altitude_m: f64, airspeed: f64, heading: f64, seed: u64) -> Self {
        let h_ft = altitude_m * FT_PER_M;
        let denom = 0.177 + 0.000_823 * h_ft;
        let sigma_w = 0.1 * w20;
        let sigma_u = sigma_w / denom.powf(0.4);
        let l_w = altitude_m;
        let l_u = (h_ft / denom.powf(1.2)) / FT_PER_M;
        Self {
            enabled: true,
            intensity: [sigma_u, sigma_u, sigma_w],
            length_scale: [l_u, l_u, l_w],
            airspeed: airspeed.max(1.0),
            components: 256,
            seed,
            heading,
            freq_min_hz: 0.01,
            freq_max_hz: 10.0,
        }
    }

    pub fn disabled() -> Self {
        Self { enabled: false, intensity: [0.0; 3], ..Self::low_altitude(0.0, 5.0, 1.0, 0.0, 0) }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GustConfig {
    pub enabled: bool,
    /// Peak speed V_m, m/s.
    pub amplitude: f64,
    pub start: f64,
    pub duration: f64,
    pub direction: [f64; 3],
}

impl GustConfig {
    pub fn disabled() -> Self {
        Self { enabled: false, amplitude: 0.0, start: 0.0, duration: 1.0, direction: [1.0, 0.0, 0.0] }
    }
}

/// Serializable description of a wind scenario.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct WindConfig {
    pub constant_enabled: bool,
    pub constant: [f64; 3],
    pub turbulence: TurbulenceConfig,
    pub gust: GustConfig,
}

impl WindConfig {
    pub fn calm() -> Self {
        Self {
            constant_enabled: false,
            constant: [0.0; 3],
            turbulence: TurbulenceConfig::disabled(),
            gust: GustConfig::disabled(),
        }
    }

    /// A randomized scenario: horizontal constant wind of magnitude in
    /// [3, 10] m/s with random heading, low-altitude turbulence at 5 m, and
    /// optionally a 20 m/s 1−cos gust over [7, 8] s along the wind heading.
    pub fn random_uncertain(seed: u64, with_gust: bool) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let magnitude: f64 = rng.random_range(3.0..10.0);
        let heading: f64 = rng.random_range(0.0..2.0 * PI);
        let turb_seed: u64 = rng.random();
        let dir = [heading.cos(), heading.sin(), 0.0];
        let gust = if with_gust {
            GustConfig { enabled: true, amplitude: 20.0, start: 7.0, duration: 1.0, direction: dir }
        } else {
            GustConfig { direction: dir, ..GustConfig::disabled() }
        };
        Self {
            constant_enabled: true,
            constant: [magnitude * dir[0], magnitude * dir[1], 0.0],
            turbulence: TurbulenceConfig::low_altitude(magnitude, 5.0, magnitude, heading, turb_seed),
            gust,
        }
    }
}

/// One cosine of the spectral sum.
#[derive(Clone, Debug)]
struct Harmonic {
    amplitude: f64,
    omega: f64,
    phase: f64,
}

/// Immutable wind field; sampling is a pure function of time.
#[derive(Clone, Debug)]
pub struct WindModel {
    config: WindConfig,
    harmonics: [Vec<Harmonic>; 3],
    gust_dir: Vector3<f64>,
}

/// Longitudinal von Kármán spectrum over spatial frequency Ω (rad/m).
fn von_karman_longitudinal(sigma: f64, l: f64, big_omega: f64) -> f64 {
    let x = 1.339 * l * big_omega;
    sigma * sigma * 2.0 * l / PI / (1.0 + x * x).powf(5.0 / 6.0)
}

/// Lateral/vertical von Kármán spectrum over spatial frequency Ω (rad/m).
fn von_karman_transverse(sigma: f64, l: f64, big_omega: f64) -> f64 {
    let x = 1.339 * l * big_omega;
    sigma * sigma * l / PI * (1.0 + 8.0 / 3.0 * x * x) / (1.0 + x * x).powf(11.0 / 6.0)
}

impl WindModel {
    pub fn new(config: WindConfig) -> Result<Self> {
        let t = &config.turbulence;
        if config.gust.enabled && !(config.gust.duration > 0.0) {
            return Err(Error::Config("gust duration must be positive".into()));
        }
        let gust_dir = Vector3::from(config.gust.direction);
        if config.gust.enabled && gust_dir.norm() == 0.0 {
            return Err(Error::Config("gust direction must be non-zero".into()));
        }
        if t.enabled {
            if t.components == 0 || !(t.freq_max_hz > t.freq_min_hz && t.freq_min_hz > 0.0) {
                return Err(Error::Config("turbulence band or component count invalid".into()));
            }
            if t.intensity.iter().any(|s| *s < 0.0) || t.length_scale.iter().any(|l| *l <= 0.0) {
                return Err(Error::Config("turbulence intensity/length scale invalid".into()));
            }
            if !(t.airspeed > 0.0) {
                return Err(Error::Config("turbulence airspeed must be positive".into()));
            }
        }
        let harmonics = if t.enabled { Self::synthesize(t) } else { [vec![], vec![], vec![]] };
        let gust_dir = if gust_dir.norm() > 0.0 { gust_dir.normalize() } else { gust_dir };
        Ok(Self { config, harmonics, gust_dir })
    }

    fn synthesize(t: &TurbulenceConfig) -> [Vec<Harmonic>; 3] {
        let mut rng = ChaCha8Rng::seed_from_u64(t.seed);
        let m = t.components;
        let ratio = t.freq_max_hz / t.freq_min_hz;
        let edge = |i: usize| 2.0 * PI * t.freq_min_hz * ratio.powf(i as f64 / m as f64);
        let mut out: [Vec<Harmonic>; 3] = [vec![], vec![], vec![]];
        for (axis, slot) in out.iter_mut().enumerate() {
            let (sigma, l) = (t.intensity[axis], t.length_scale[axis]);
            let mut comps: Vec<Harmonic> = (0..m)
                .map(|i| {
                    let omega = (edge(i) * edge(i + 1)).sqrt();
                    let d_omega = edge(i + 1) - edge(i);
                    let big_omega = omega / t.airspeed;
                    let psd_spatial = if axis == 0 {
                        von_karman_longitudinal(1.0, l, big_omega)
                    } else {
                        von_karman_transverse(1.0, l, big_omega)
                    };
                    let psd = psd_spatial / t.airspeed;
                    Harmonic { amplitude: (2.0 * psd * d_omega).sqrt(), omega, phase: 0.0 }
                })
                .collect();
            for c in comps.iter_mut() {
                c.phase = rng.random_range(0.0..2.0 * PI);
            }
            let variance: f64 = comps.iter().map(|c| 0.5 * c.amplitude * c.amplitude).sum();
            let scale = if variance > 0.0 { sigma / variance.sqrt() } else { 0.0 };
            for c in comps.iter_mut() {
                c.amplitude *= scale;
            }
            *slot = comps;
        }
        out
    }

    pub fn config(&self) -> &WindConfig {
        &self.config
    }

    /// Turbulent component in world axes, m/s.
    pub fn turbulence_sample(&self, t: f64) -> Vector3<f64> {
        if !self.config.turbulence.enabled {
            return Vector3::zeros();
        }
        let mut local = [0.0; 3];
        for (axis, comps) in self.harmonics.iter().enumerate() {
            local[axis] = comps.iter().map(|c| c.amplitude * (c.omega * t + c.phase).cos()).sum();
        }
        let (s, c) = self.config.turbulence.heading.sin_cos();
        Vector3::new(local[0] * c - local[1] * s, local[0] * s + local[1] * c, local[2])
    }

    /// 1−cos gust, zero outside `[start, start + duration]`.
    pub fn gust_sample(&self, t: f64) -> Vector3<f64> {
        let g = &self.config.gust;
        if !g.enabled || t < g.start || t > g.start + g.duration {
            return Vector3::zeros();
        }
        let phase = 2.0 * PI * (t - g.start) / g.duration;
        self.gust_dir * (0.5 * g.amplitude * (1.0 - phase.cos()))
    }

    pub fn wind_velocity(&self, t: f64) -> Vector3<f64> {
        let mut v = self.turbulence_sample(t) + self.gust_sample(t);
        if self.config.constant_enabled {
            v += Vector3::from(self.config.constant);
        }
        v
    }
}

/// Drag force `K_drag (v_w − v)` for a diagonal drag matrix.
pub fn drag_force(v_w: &Vector3<f64>, v: &Vector3<f64>, k_drag: &Vector3<f64>) -> Vector3<f64> {
    k_drag.component_mul(&(v_w - v))
}
