//! Online disturbance estimation with three independent exact GPs sharing a
//! squared-exponential kernel over the 6-dimensional state and a sliding window.

use std::collections::VecDeque;

use nalgebra::{Cholesky, DMatrix, DVector, Dyn, Vector3, Vector6};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GpConfig {
    /// Isotropic length scale L.
    pub length_scale: f64,
    /// Prior variance σ_f².
    pub prior_variance: f64,
    /// Noise level α added to the kernel diagonal.
    pub noise_level: f64,
    pub window_size: usize,
    /// Confidence multiplier β, identical on every axis.
    pub beta: f64,
    /// Refit the model used for prediction every this many control steps.
    #[serde(default = "one")]
    pub update_period: usize,
}

fn one() -> usize {
    1
}

impl Default for GpConfig {
    fn default() -> Self {
        Self { length_scale: 10.0, prior_variance: 1.0, noise_level: 5e-4, window_size: 5, beta: 3.0, update_period: 1 }
    }
}

impl GpConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.length_scale > 0.0 && self.prior_variance > 0.0 && self.noise_level >= 0.0 && self.beta > 0.0) {
            return Err(Error::Config("GP requires L > 0, σ_f² > 0, α ≥ 0, β > 0".into()));
        }
        if self.window_size == 0 || self.update_period == 0 {
            return Err(Error::Config("GP window size and update period must be at least 1".into()));
        }
        Ok(())
    }

    pub fn prior_std(&self) -> f64 {
        self.prior_variance.sqrt()
    }

    /// `σ_f² exp(−½ |x − x′|² / L²)`.
    pub fn kernel(&self, x: &Vector6<f64>, x2: &Vector6<f64>) -> f64 {
        let r2 = (x - x2).norm_squared() / (self.length_scale * self.length_scale);
        self.prior_variance * (-0.5 * r2).exp()
    }
}

/// Posterior mean and standard deviation per axis.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct GpPrediction {
    pub mean: Vector3<f64>,
    pub std: Vector3<f64>,
}

#[derive(Clone, Debug)]
pub struct GpModel {
    config: GpConfig,
    window: VecDeque<(Vector6<f64>, Vector3<f64>)>,
    chol: Option<Cholesky<f64, Dyn>>,
    /// `(K + αI)⁻¹ y_j` for each axis, as columns.
    weights: DMatrix<f64>,
}

impl GpModel {
    pub fn new(config: GpConfig) -> Result<Self> {
        config.validate()?;
        Ok(Self { config, window: VecDeque::new(), chol: None, weights: DMatrix::zeros(0, 3) })
    }

    pub fn config(&self) -> &GpConfig {
        &self.config
    }

    pub fn len(&self) -> usize {
        self.window.len()
    }

    pub fn is_empty(&self) -> bool {
        self.window.is_empty()
    }

    pub fn window(&self) -> impl Iterator<Item = &(Vector6<f64>, Vector3<f64>)> {
        self.window.iter()
    }

    /// Appends a training pair, evicting the oldest beyond the window size, and
    /// refits. On factorization failure the model is left unchanged.
    pub fn push(&mut self, x: Vector6<f64>, y: Vector3<f64>) -> Result<()> {
        let mut window = self.window.clone();
        window.push_back((x, y));
        while window.len() > self.config.window_size {
            window.pop_front();
        }
        let (chol, weights) = self.fit(&window)?;
        self.window = window;
        self.chol = Some(chol);
        self.weights = weights;
        Ok(())
    }

    fn fit(&self, window: &VecDeque<(Vector6<f64>, Vector3<f64>)>) -> Result<(Cholesky<f64, Dyn>, DMatrix<f64>)> {
        let n = window.len();
        let k = DMatrix::from_fn(n, n, |i, j| {
            let base = self.config.kernel(&window[i].0, &window[j].0);
            if i == j {
                base + self.config.noise_level
            } else {
                base
            }
        });
        let chol = Cholesky::new(k).ok_or(Error::IllConditionedKernel)?;
        let y = DMatrix::from_fn(n, 3, |i, j| window[i].1[j]);
        let weights = chol.solve(&y);
        if !weights.iter().all(|w| w.is_finite()) {
            return Err(Error::IllConditionedKernel);
        }
        Ok((chol, weights))
    }

    pub fn predict(&self, x: &Vector6<f64>) -> GpPrediction {
        let prior = self.config.prior_std();
        let Some(chol) = &self.chol else {
            return GpPrediction { mean: Vector3::zeros(), std: Vector3::repeat(prior) };
        };
        let n = self.window.len();
        let k = DVector::from_fn(n, |i, _| self.config.kernel(&self.window[i].0, x));
        let mean = Vector3::from_fn(|j, _| k.dot(&self.weights.column(j)));
        let v = chol.l().solve_lower_triangular(&k).unwrap_or_else(|| DVector::zeros(n));
        let var = (self.config.prior_variance - v.norm_squared()).clamp(0.0, self.config.prior_variance);
        // all three axes share kernel and inputs, hence the same variance
        GpPrediction { mean, std: Vector3::repeat(var.sqrt()) }
    }
}

/// `‖(β, β, β)‖ · ‖σ‖`.
pub fn confidence_radius(std: &Vector3<f64>, beta: f64) -> f64 {
    3f64.sqrt() * beta.abs() * std.norm()
}
