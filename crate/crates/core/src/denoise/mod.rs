//! Noise-prediction backends and the reverse (denoising) step built on them.
//!
//! Backends only predict ε. The sampler owns every random draw, which keeps
//! runs replayable regardless of where the prediction is computed.

mod backends;
mod external;
mod loopback;
pub mod protocol;

pub use backends::{analytic_epsilon, oracle_epsilon, AnalyticGaussianDenoiser, OracleDenoiser};
pub use external::{ExternalDenoiser, DEFAULT_TIMEOUT};
pub use loopback::{serve, Fault, WorkerMode};

use std::time::Duration;

use crate::error::{Error, Result};
use crate::noise::{gaussian_draw, NoiseSchedule};
use crate::rng::{Purpose, SeededRng};
use crate::tensor::{ImageTensor, Shape};

pub trait Denoiser {
    /// The only input shape this backend accepts.
    fn shape(&self) -> Shape;

    /// Implementations may assume `x_t` already has [`Denoiser::shape`];
    /// callers go through [`predict_epsilon`].
    fn epsilon(&mut self, x_t: &ImageTensor, t: usize) -> Result<ImageTensor>;
}

impl<D: Denoiser + ?Sized> Denoiser for Box<D> {
    fn shape(&self) -> Shape {
        (**self).shape()
    }

    fn epsilon(&mut self, x_t: &ImageTensor, t: usize) -> Result<ImageTensor> {
        (**self).epsilon(x_t, t)
    }
}

/// Which backend to construct for a run.
#[derive(Debug, Clone)]
pub enum DenoiserSpec {
    /// Closed-form ε for a known clean reference image.
    Oracle(ImageTensor),
    /// Bayes-optimal ε under an iid `N(mu, var)` pixel prior.
    Gaussian { mu: f64, var: f64 },
    /// A worker process speaking FDN1.
    External { command: String, timeout: Duration },
}

impl DenoiserSpec {
    /// Builds a fresh backend bound to `sched`. External specs spawn a new
    /// worker per call.
    pub fn build(&self, sched: &NoiseSchedule, shape: Shape) -> Result<Box<dyn Denoiser + Send>> {
        Ok(match self {
            DenoiserSpec::Oracle(reference) => {
                reference.ensure_shape(shape)?;
                Box::new(OracleDenoiser::new(reference.clone(), sched))
            }
            DenoiserSpec::Gaussian { mu, var } => {
                if !mu.is_finite() || !var.is_finite() || *var < 0.0 {
                    return Err(Error::invalid(format!(
                        "gaussian prior needs finite mu and var >= 0, got {mu}:{var}"
                    )));
                }
                Box::new(AnalyticGaussianDenoiser::new(shape, *mu, *var, sched))
            }
            DenoiserSpec::External { command, timeout } => Box::new(
                ExternalDenoiser::handshake(command, sched, shape, *timeout)?,
            ),
        })
    }
}

/// Shape-checked ε prediction for timestep `t`.
pub fn predict_epsilon<D: Denoiser + ?Sized>(
    denoiser: &mut D,
    x_t: &ImageTensor,
    t: usize,
) -> Result<ImageTensor> {
    if t == 0 {
        return Err(Error::invalid("no denoising step exists at t=0"));
    }
    x_t.ensure_shape(denoiser.shape())?;
    let eps = denoiser.epsilon(x_t, t)?;
    eps.ensure_shape(x_t.shape())?;
    if !eps.is_finite() {
        return Err(Error::Worker(format!("non-finite noise prediction at t={t}")));
    }
    Ok(eps)
}

/// Posterior mean `(x_t - beta_t / sqrt(1 - abar_t) * eps) / sqrt(1 - beta_t)`.
pub fn posterior_mean(
    x_t: &ImageTensor,
    eps: &ImageTensor,
    t: usize,
    sched: &NoiseSchedule,
) -> ImageTensor {
    let beta = sched.beta(t);
    let coef = beta / (1.0 - sched.alpha_bar(t)).sqrt();
    let scale = 1.0 / (1.0 - beta).sqrt();
    let data = x_t
        .data()
        .iter()
        .zip(eps.data())
        .map(|(&x, &e)| ((x as f64 - coef * e as f64) * scale) as f32)
        .collect();
    ImageTensor::from_vec(x_t.shape(), data).expect("shape preserved")
}

/// Adds `sqrt(posterior_var_t) * z` to a posterior mean. The variance is zero
/// at `t = 1`, where no noise is drawn at all.
pub fn add_posterior_noise(
    mean: ImageTensor,
    t: usize,
    sched: &NoiseSchedule,
    rng: &mut SeededRng,
) -> ImageTensor {
    let var = sched.posterior_var(t);
    if var == 0.0 {
        return mean;
    }
    let sigma = var.sqrt();
    let z = gaussian_draw(mean.shape(), &mut rng.substream(Purpose::Ddpm, t));
    let data = mean
        .data()
        .iter()
        .zip(z.data())
        .map(|(&m, &z)| (m as f64 + sigma * z as f64) as f32)
        .collect();
    ImageTensor::from_vec(mean.shape(), data).expect("shape preserved")
}

/// Samples `x_{t-1}` from `x_t` using the backend's ε prediction.
pub fn reverse_step<D: Denoiser + ?Sized>(
    denoiser: &mut D,
    x_t: &ImageTensor,
    t: usize,
    sched: &NoiseSchedule,
    rng: &mut SeededRng,
) -> Result<ImageTensor> {
    sched.check_t(t, 1)?;
    let eps = predict_epsilon(denoiser, x_t, t)?;
    let mean = posterior_mean(x_t, &eps, t, sched);
    Ok(add_posterior_noise(mean, t, sched, rng))
}
