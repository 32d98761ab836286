//! Closed-form backends. Both compute in `f64` from `f32` inputs and round
//! the result once, so any peer using the same formulas agrees bit for bit.

use super::Denoiser;
use crate::error::Result;
use crate::noise::NoiseSchedule;
use crate::tensor::{ImageTensor, Shape};

/// ε that exactly inverts the forward identity for a known clean image.
pub fn oracle_epsilon(x_t: f32, reference: f32, alpha_bar: f64) -> f32 {
    ((x_t as f64 - alpha_bar.sqrt() * reference as f64) / (1.0 - alpha_bar).sqrt()) as f32
}

/// ε implied by the exact posterior mean under an iid `N(mu, var)` prior on
/// clean pixels.
pub fn analytic_epsilon(x_t: f32, mu: f64, var: f64, alpha_bar: f64) -> f32 {
    let x = x_t as f64;
    let noise_var = 1.0 - alpha_bar;
    let x0_hat = (noise_var * mu + alpha_bar.sqrt() * var * x) / (noise_var + alpha_bar * var);
    ((x - alpha_bar.sqrt() * x0_hat) / noise_var.sqrt()) as f32
}

/// Predicts the noise that would turn `reference` into `x_t`. Driving the
/// full reverse chain with it reproduces `reference` at `t = 0`.
#[derive(Debug, Clone)]
pub struct OracleDenoiser {
    reference: ImageTensor,
    alpha_bars: Vec<f64>,
}

impl OracleDenoiser {
    pub fn new(reference: ImageTensor, sched: &NoiseSchedule) -> Self {
        Self {
            reference,
            alpha_bars: sched.alpha_bars().to_vec(),
        }
    }

    pub fn reference(&self) -> &ImageTensor {
        &self.reference
    }
}

impl Denoiser for OracleDenoiser {
    fn shape(&self) -> Shape {
        self.reference.shape()
    }

    fn epsilon(&mut self, x_t: &ImageTensor, t: usize) -> Result<ImageTensor> {
        let abar = self.alpha_bars[t];
        let data = x_t
            .data()
            .iter()
            .zip(self.reference.data())
            .map(|(&x, &r)| oracle_epsilon(x, r, abar))
            .collect();
        ImageTensor::from_vec(x_t.shape(), data)
    }
}

/// Bayes-optimal denoiser for iid Gaussian pixels `N(mu, var)`.
#[derive(Debug, Clone)]
pub struct AnalyticGaussianDenoiser {
    shape: Shape,
    mu: f64,
    var: f64,
    alpha_bars: Vec<f64>,
}

impl AnalyticGaussianDenoiser {
    pub fn new(shape: Shape, mu: f64, var: f64, sched: &NoiseSchedule) -> Self {
        Self {
            shape,
            mu,
            var,
            alpha_bars: sched.alpha_bars().to_vec(),
        }
    }
}

impl Denoiser for AnalyticGaussianDenoiser {
    fn shape(&self) -> Shape {
        self.shape
    }

    fn epsilon(&mut self, x_t: &ImageTensor, t: usize) -> Result<ImageTensor> {
        let abar = self.alpha_bars[t];
        let data = x_t
            .data()
            .iter()
            .map(|&x| analytic_epsilon(x, self.mu, self.var, abar))
            .collect();
        ImageTensor::from_vec(x_t.shape(), data)
    }
}
