//! Parametric geometric paths `P(θ)` with analytic first and second
//! derivatives, reference-state construction and closest-point queries.

use std::f64::consts::PI;

use nalgebra::{Vector3, Vector6};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Shape of a path and its per-kind parameters (meters).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum PathKind {
    /// Lemniscate of Gerono in the x–y plane: `(a sin φ, a sin φ cos φ, h)`.
    Lemniscate { half_span: f64, altitude: f64 },
    /// `(w s, c s², h)` with `s` running over [-1, 1] across the parameter range.
    Parabola { half_width: f64, height: f64, altitude: f64 },
    Circle { radius: f64, altitude: f64 },
    /// Constant radius, constant climb of `pitch` meters per θ-unit.
    CylindricalHelix { radius: f64, pitch: f64, turns: f64, altitude: f64 },
    /// Radius and height both grow linearly in θ.
    ConicalSpiral { start_radius: f64, radius_rate: f64, climb_rate: f64, turns: f64, altitude: f64 },
    /// `origin + speed_scale · θ · direction/|direction|`.
    StraightLine { origin: [f64; 3], direction: [f64; 3], speed_scale: f64 },
}

/// A geometric path together with its parameter interval `[θ₀, θ_end]`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PathSpec {
    #[serde(flatten)]
    pub shape: PathKind,
    pub theta_range: [f64; 2],
}

/// Position/velocity pair built from a path point and a path speed.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ReferencePoint {
    pub position: Vector3<f64>,
    pub velocity: Vector3<f64>,
}

impl ReferencePoint {
    pub fn state(&self) -> Vector6<f64> {
        Vector6::new(
            self.position.x,
            self.position.y,
            self.position.z,
            self.velocity.x,
            self.velocity.y,
            self.velocity.z,
        )
    }
}

/// Closest point on a path.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Projection {
    pub d_min: f64,
    pub theta_star: f64,
}

/// Grid density and refinement tolerance for closest-point searches.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ProjectionSettings {
    pub grid_samples: usize,
    pub refine_tol: f64,
}

impl Default for ProjectionSettings {
    fn default() -> Self {
        Self { grid_samples: 2000, refine_tol: 1e-10 }
    }
}

/// Names of the five benchmark paths, in table order.
pub const BENCHMARK_PATHS: [&str; 5] =
    ["lemniscate", "parabola", "circle", "cylindrical_helix", "conical_spiral"];

impl PathSpec {
    pub fn new(shape: PathKind, theta_range: [f64; 2]) -> Result<Self> {
        let spec = Self { shape, theta_range };
        spec.validate()?;
        Ok(spec)
    }

    /// One of the benchmark shapes over θ ∈ [0, 20].
    pub fn preset(name: &str) -> Result<Self> {
        let range = [0.0, 20.0];
        let shape = match name {
            "lemniscate" => PathKind::Lemniscate { half_span: 1.0, altitude: 1.0 },
            "parabola" => PathKind::Parabola { half_width: 2.0, height: 2.0, altitude: 1.0 },
            "circle" => PathKind::Circle { radius: 1.0, altitude: 1.0 },
            "cylindrical_helix" => {
                PathKind::CylindricalHelix { radius: 1.0, pitch: 0.1, turns: 2.0, altitude: 0.5 }
            }
            "conical_spiral" => PathKind::ConicalSpiral {
                start_radius: 0.2,
                radius_rate: 0.05,
                climb_rate: 0.05,
                turns: 2.0,
                altitude: 0.5,
            },
            "straight_line" => PathKind::StraightLine {
                origin: [0.0, 0.0, 1.0],
                direction: [1.0, 0.0, 0.0],
                speed_scale: 1.0,
            },
            other => return Err(Error::InvalidPath(format!("unknown preset `{other}`"))),
        };
        Self::new(shape, range)
    }

    pub fn validate(&self) -> Result<()> {
        let [lo, hi] = self.theta_range;
        if !(lo.is_finite() && hi.is_finite() && hi > lo) {
            return Err(Error::InvalidPath(format!("empty theta range [{lo}, {hi}]")));
        }
        let positive = |name: &str, v: f64| {
            if v > 0.0 && v.is_finite() {
                Ok(())
            } else {
                Err(Error::InvalidPath(format!("{name} must be positive, got {v}")))
            }
        };
        match &self.shape {
            PathKind::Lemniscate { half_span, .. } => positive("half_span", *half_span),
            PathKind::Parabola { half_width, .. } => positive("half_width", *half_width),
            PathKind::Circle { radius, .. } => positive("radius", *radius),
            PathKind::CylindricalHelix { radius, turns, .. } => {
                positive("radius", *radius)?;
                positive("turns", *turns)
            }
            PathKind::ConicalSpiral { start_radius, radius_rate, turns, .. } => {
                if *start_radius < 0.0 || *radius_rate < 0.0 || start_radius + radius_rate <= 0.0 {
                    return Err(Error::InvalidPath("conical spiral radius must grow from >= 0".into()));
                }
                positive("turns", *turns)
            }
            PathKind::StraightLine { direction, speed_scale, .. } => {
                positive("speed_scale", *speed_scale)?;
                positive("|direction|", Vector3::from(*direction).norm())
            }
        }
    }

    pub fn theta_start(&self) -> f64 {
        self.theta_range[0]
    }

    pub fn theta_end(&self) -> f64 {
        self.theta_range[1]
    }

    pub fn contains(&self, theta: f64) -> bool {
        theta >= self.theta_range[0] && theta <= self.theta_range[1]
    }

    pub fn clamp(&self, theta: f64) -> f64 {
        theta.clamp(self.theta_range[0], self.theta_range[1])
    }

    fn check(&self, theta: f64) -> Result<()> {
        if self.contains(theta) {
            Ok(())
        } else {
            Err(Error::Domain { theta, lo: self.theta_range[0], hi: self.theta_range[1] })
        }
    }

    /// Angular rate of the periodic shapes so that `turns` revolutions span the range.
    fn angular_rate(&self, turns: f64) -> f64 {
        2.0 * PI * turns / (self.theta_range[1] - self.theta_range[0])
    }

    /// Position, first and second derivative with respect to θ. No range check.
    pub fn jet(&self, theta: f64) -> [Vector3<f64>; 3] {
        let t0 = self.theta_range[0];
        match &self.shape {
            PathKind::Lemniscate { half_span: a, altitude } => {
                let w = self.angular_rate(1.0);
                let phi = w * (theta - t0);
                let (s, c) = phi.sin_cos();
                let (s2, c2) = (2.0 * phi).sin_cos();
                [
                    Vector3::new(a * s, 0.5 * a * s2, *altitude),
                    Vector3::new(a * w * c, a * w * c2, 0.0),
                    Vector3::new(-a * w * w * s, -2.0 * a * w * w * s2, 0.0),
                ]
            }
            PathKind::Parabola { half_width, height, altitude } => {
                let half = 0.5 * (self.theta_range[1] - t0);
                let s = (theta - t0 - half) / half;
                [
                    Vector3::new(half_width * s, height * s * s, *altitude),
                    Vector3::new(half_width / half, 2.0 * height * s / half, 0.0),
                    Vector3::new(0.0, 2.0 * height / (half * half), 0.0),
                ]
            }
            PathKind::Circle { radius: r, altitude } => {
                let w = self.angular_rate(1.0);
                let (s, c) = (w * (theta - t0)).sin_cos();
                [
                    Vector3::new(r * c, r * s, *altitude),
                    Vector3::new(-r * w * s, r * w * c, 0.0),
                    Vector3::new(-r * w * w * c, -r * w * w * s, 0.0),
                ]
            }
            PathKind::CylindricalHelix { radius: r, pitch, turns, altitude } => {
                let w = self.angular_rate(*turns);
                let (s, c) = (w * (theta - t0)).sin_cos();
                [
                    Vector3::new(r * c, r * s, altitude + pitch * (theta - t0)),
                    Vector3::new(-r * w * s, r * w * c, *pitch),
                    Vector3::new(-r * w * w * c, -r * w * w * s, 0.0),
                ]
            }
            PathKind::ConicalSpiral { start_radius, radius_rate: k, climb_rate, turns, altitude } => {
                let w = self.angular_rate(*turns);
                let (s, c) = (w * (theta - t0)).sin_cos();
                let r = start_radius + k * (theta - t0);
                [
                    Vector3::new(r * c, r * s, altitude + climb_rate * (theta - t0)),
                    Vector3::new(k * c - r * w * s, k * s + r * w * c, *climb_rate),
                    Vector3::new(
                        -2.0 * k * w * s - r * w * w * c,
                        2.0 * k * w * c - r * w * w * s,
                        0.0,
                    ),
                ]
            }
            PathKind::StraightLine { origin, direction, speed_scale } => {
                let d = Vector3::from(*direction).normalize() * *speed_scale;
                [Vector3::from(*origin) + d * theta, d, Vector3::zeros()]
            }
        }
    }

    pub fn eval(&self, theta: f64) -> Result<Vector3<f64>> {
        self.check(theta)?;
        Ok(self.jet(theta)[0])
    }

    pub fn eval_derivative(&self, theta: f64) -> Result<Vector3<f64>> {
        self.check(theta)?;
        Ok(self.jet(theta)[1])
    }

    pub fn eval_second_derivative(&self, theta: f64) -> Result<Vector3<f64>> {
        self.check(theta)?;
        Ok(self.jet(theta)[2])
    }

    /// Position and velocity `dP/dθ · θ_vel` at `theta`.
    pub fn reference_state(&self, theta: f64, theta_vel: f64) -> Result<ReferencePoint> {
        self.check(theta)?;
        if !(theta_vel >= 0.0) {
            return Err(Error::InvalidPath(format!("negative path speed {theta_vel}")));
        }
        let [p, dp, _] = self.jet(theta);
        Ok(ReferencePoint { position: p, velocity: dp * theta_vel })
    }

    /// Closest point over the whole parameter range.
    pub fn min_distance(&self, p: &Vector3<f64>) -> Projection {
        self.min_distance_with(p, &ProjectionSettings::default())
    }

    pub fn min_distance_with(&self, p: &Vector3<f64>, settings: &ProjectionSettings) -> Projection {
        self.min_distance_in(p, self.theta_range[0], self.theta_range[1], settings)
    }

    /// Closest point with θ restricted to `[lo, hi]` (clamped to the path range).
    ///
    /// Dense grid search, then golden-section refinement inside the two cells
    /// adjacent to the best sample. Ties on the grid keep the smallest θ.
    pub fn min_distance_in(
        &self,
        p: &Vector3<f64>,
        lo: f64,
        hi: f64,
        settings: &ProjectionSettings,
    ) -> Projection {
        let lo = self.clamp(lo);
        let hi = self.clamp(hi).max(lo);
        let dist2 = |theta: f64| (self.jet(theta)[0] - p).norm_squared();
        if hi - lo <= 0.0 {
            return Projection { d_min: dist2(lo).sqrt(), theta_star: lo };
        }
        let n = settings.grid_samples.max(2);
        let step = (hi - lo) / (n - 1) as f64;
        let grid = |i: usize| if i + 1 == n { hi } else { lo + step * i as f64 };

        let (mut best_i, mut best_d2) = (0, f64::INFINITY);
        for i in 0..n {
            let d2 = dist2(grid(i));
            if d2 < best_d2 * (1.0 - 16.0 * f64::EPSILON) {
                best_d2 = d2;
                best_i = i;
            }
        }
        let a = grid(best_i.saturating_sub(1));
        let b = grid((best_i + 1).min(n - 1));
        let (theta_ref, d2_ref) = golden_section(dist2, a, b, settings.refine_tol);
        // Refinement must beat the grid by more than rounding so exact ties
        // keep the smallest grid θ.
        if d2_ref < best_d2 * (1.0 - 16.0 * f64::EPSILON) {
            Projection { d_min: d2_ref.sqrt(), theta_star: theta_ref }
        } else {
            Projection { d_min: best_d2.sqrt(), theta_star: grid(best_i) }
        }
    }

    /// Arc length between `a` and `b` (clamped to the range), composite
    /// five-point Gauss–Legendre quadrature of `|dP/dθ|`.
    pub fn arc_length(&self, a: f64, b: f64) -> f64 {
        let (a, b) = (self.clamp(a), self.clamp(b));
        if b <= a {
            return 0.0;
        }
        let panels = (((b - a) / 0.05).ceil() as usize).max(1);
        let h = (b - a) / panels as f64;
        (0..panels)
            .map(|k| {
                let mid = a + (k as f64 + 0.5) * h;
                GAUSS5
                    .iter()
                    .map(|(x, w)| w * self.jet(mid + 0.5 * h * x)[1].norm())
                    .sum::<f64>()
                    * 0.5
                    * h
            })
            .sum()
    }

    /// The θ reached by advancing `distance` meters of arc length from `theta`,
    /// clamped to the end of the path.
    pub fn advance_arc_length(&self, theta: f64, distance: f64) -> f64 {
        let start = self.clamp(theta);
        let end = self.theta_range[1];
        if distance <= 0.0 {
            return start;
        }
        // March panel by panel, then bisect inside the panel that crosses.
        let panel = 0.05;
        let mut lo = start;
        let mut covered = 0.0;
        loop {
            let hi = (lo + panel).min(end);
            let seg = self.arc_length(lo, hi);
            if covered + seg >= distance {
                let target = distance - covered;
                let (mut a, mut b) = (lo, hi);
                for _ in 0..200 {
                    let m = 0.5 * (a + b);
                    if self.arc_length(lo, m) < target {
                        a = m;
                    } else {
                        b = m;
                    }
                    if b - a < 1e-12 {
                        break;
                    }
                }
                return 0.5 * (a + b);
            }
            covered += seg;
            if hi >= end {
                return end;
            }
            lo = hi;
        }
    }
}

const GAUSS5: [(f64, f64); 5] = [
    (0.0, 0.568_888_888_888_888_9),
    (-0.538_469_310_105_683_1, 0.478_628_670_499_366_5),
    (0.538_469_310_105_683_1, 0.478_628_670_499_366_5),
    (-0.906_179_845_938_664, 0.236_926_885_056_189_1),
    (0.906_179_845_938_664, 0.236_926_885_056_189_1),
];

/// Minimizes `f` on `[a, b]`; returns the argmin and the value.
fn golden_section(f: impl Fn(f64) -> f64, mut a: f64, mut b: f64, tol: f64) -> (f64, f64) {
    let inv_phi = (5f64.sqrt() - 1.0) / 2.0;
    let mut c = b - inv_phi * (b - a);
    let mut d = a + inv_phi * (b - a);
    let (mut fc, mut fd) = (f(c), f(d));
    while b - a > tol {
        if fc <= fd {
            b = d;
            d = c;
            fd = fc;
            c = b - inv_phi * (b - a);
            fc = f(c);
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + inv_phi * (b - a);
            fd = f(d);
        }
    }
    let x = 0.5 * (a + b);
    let fx = f(x);
    [(x, fx), (c, fc), (d, fd)]
        .into_iter()
        .fold((x, fx), |best, cand| if cand.1 < best.1 { cand } else { best })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;

    fn all_paths() -> Vec<PathSpec> {
        BENCHMARK_PATHS
            .iter()
            .chain(std::iter::once(&"straight_line"))
            .map(|n| PathSpec::preset(n).unwrap())
            .collect()
    }

    #[test]
    fn circle_anchor_points() {
        let c = PathSpec::preset("circle").unwrap();
        assert_abs_diff_eq!(c.eval(0.0).unwrap(), Vector3::new(1.0, 0.0, 1.0), epsilon = 1e-15);
        // a quarter revolution is a quarter of the range
        assert_abs_diff_eq!(c.eval(5.0).unwrap(), Vector3::new(0.0, 1.0, 1.0), epsilon = 1e-12);
    }

    #[test]
    fn straight_line_is_linear() {
        let l = PathSpec::new(
            PathKind::StraightLine { origin: [0.0; 3], direction: [1.0, 0.0, 0.0], speed_scale: 1.0 },
            [0.0, 20.0],
        )
        .unwrap();
        assert_eq!(l.eval(5.0).unwrap(), Vector3::new(5.0, 0.0, 0.0));
        assert_eq!(l.eval_derivative(13.0).unwrap(), Vector3::new(1.0, 0.0, 0.0));
        let r = l.reference_state(3.0, 1.0).unwrap();
        assert_eq!(r.velocity, Vector3::new(1.0, 0.0, 0.0));
    }

    #[test]
    fn circle_tangent_against_finite_differences() {
        let c = PathSpec::preset("circle").unwrap();
        let h = 1e-6;
        let fd = (c.jet(h)[0] - c.jet(-h)[0]) / (2.0 * h);
        let t = c.eval_derivative(0.0).unwrap();
        assert_abs_diff_eq!(t, fd, epsilon = 1e-6);
        let radial = c.eval(0.0).unwrap() - Vector3::new(0.0, 0.0, 1.0);
        assert_abs_diff_eq!(t.dot(&radial), 0.0, epsilon = 1e-12);
        assert_abs_diff_eq!(t.norm(), 2.0 * PI / 20.0, epsilon = 1e-12);
    }

    #[test]
    fn helix_climbs_at_pitch() {
        let h = PathSpec::preset("cylindrical_helix").unwrap();
        for theta in [0.0, 3.3, 11.0, 20.0] {
            assert_eq!(h.eval_derivative(theta).unwrap().z, 0.1);
        }
    }

    #[test]
    fn out_of_range_is_a_domain_error() {
        let c = PathSpec::preset("circle").unwrap();
        assert!(matches!(c.eval(-0.1), Err(Error::Domain { .. })));
        assert!(matches!(c.eval_derivative(20.5), Err(Error::Domain { .. })));
        assert!(c.reference_state(21.0, 1.0).is_err());
    }

    #[test]
    fn reference_velocity_scales_with_path_speed() {
        for p in all_paths() {
            let r0 = p.reference_state(4.0, 0.0).unwrap();
            assert_eq!(r0.velocity, Vector3::zeros());
            let r = p.reference_state(4.0, 1.0).unwrap();
            assert_abs_diff_eq!(r.velocity.norm(), p.eval_derivative(4.0).unwrap().norm(), epsilon = 1e-15);
        }
    }

    #[test]
    fn invalid_specs_are_rejected() {
        assert!(PathSpec::new(PathKind::Circle { radius: 1.0, altitude: 1.0 }, [2.0, 2.0]).is_err());
        assert!(PathSpec::new(PathKind::Circle { radius: -1.0, altitude: 1.0 }, [0.0, 2.0]).is_err());
        assert!(PathSpec::preset("zigzag").is_err());
    }

    #[test]
    fn center_of_circle_is_radius_away_with_smallest_theta() {
        let c = PathSpec::preset("circle").unwrap();
        let proj = c.min_distance(&Vector3::new(0.0, 0.0, 1.0));
        assert_abs_diff_eq!(proj.d_min, 1.0, epsilon = 1e-12);
        assert_eq!(proj.theta_star, 0.0);
    }

    #[test]
    fn lemniscate_projection_matches_dense_brute_force() {
        let lem = PathSpec::preset("lemniscate").unwrap();
        let mut rng_state = 0x2545_f491_4f6c_dd1du64;
        let mut uniform = move || {
            rng_state ^= rng_state << 13;
            rng_state ^= rng_state >> 7;
            rng_state ^= rng_state << 17;
            (rng_state >> 11) as f64 / (1u64 << 53) as f64
        };
        for _ in 0..5 {
            let p = Vector3::new(2.4 * uniform() - 1.2, 1.2 * uniform() - 0.6, 0.8 + 0.4 * uniform());
            let n = 1_000_000;
            let brute = (0..=n)
                .map(|i| (lem.jet(20.0 * i as f64 / n as f64)[0] - p).norm())
                .fold(f64::INFINITY, f64::min);
            let proj = lem.min_distance(&p);
            assert!((proj.d_min - brute).abs() < 1e-6, "{} vs {}", proj.d_min, brute);
            assert!(proj.d_min <= brute + 1e-12);
        }
    }

    #[test]
    fn arc_length_of_circle() {
        let c = PathSpec::preset("circle").unwrap();
        assert_abs_diff_eq!(c.arc_length(0.0, 20.0), 2.0 * PI, epsilon = 1e-10);
        let theta = c.advance_arc_length(2.0, 0.5);
        assert_abs_diff_eq!(c.arc_length(2.0, theta), 0.5, epsilon = 1e-9);
        assert_eq!(c.advance_arc_length(19.9, 5.0), 20.0);
    }

    proptest! {
        #[test]
        fn derivatives_match_central_differences(idx in 0usize..6, u in 0.01f64..0.99) {
            let p = &all_paths()[idx];
            let theta = p.theta_start() + u * (p.theta_end() - p.theta_start());
            let h = 1e-5;
            let [_, d1, d2] = p.jet(theta);
            let fd1 = (p.jet(theta + h)[0] - p.jet(theta - h)[0]) / (2.0 * h);
            let fd2 = (p.jet(theta + h)[1] - p.jet(theta - h)[1]) / (2.0 * h);
            prop_assert!((d1 - fd1).norm() <= 1e-6 * d1.norm().max(1.0));
            prop_assert!((d2 - fd2).norm() <= 1e-6 * d2.norm().max(1.0));
        }

        #[test]
        fn points_on_the_path_project_to_zero(idx in 0usize..6, u in 0.0f64..1.0) {
            let p = &all_paths()[idx];
            let theta = p.theta_start() + u * (p.theta_end() - p.theta_start());
            let x = p.eval(theta).unwrap();
            let proj = p.min_distance(&x);
            prop_assert!(proj.d_min <= 1e-9);
            prop_assert!(proj.d_min >= 0.0);
            prop_assert_eq!(proj, p.min_distance(&x));
        }
    }
}
