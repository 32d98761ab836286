//! Variance schedule and the forward (noising) half of the diffusion process.

use rand_distr::{Distribution, StandardNormal};

use crate::error::{Error, Result};
use crate::rng::{Purpose, SeededRng};
use crate::tensor::{ImageTensor, Shape};

/// Length of the canonical training schedule that shorter schedules are
/// respaced from.
pub const TRAIN_STEPS: usize = 1000;
pub const BETA_START: f64 = 1e-4;
pub const BETA_END: f64 = 0.02;

/// Per-step noise variances for timesteps `1..=T` and their derived products.
///
/// Vectors indexed by timestep are stored so that `alpha_bar(0) == 1` and
/// `beta(t)` is defined for `1 <= t <= T`.
#[derive(Debug, Clone, PartialEq)]
pub struct NoiseSchedule {
    betas: Vec<f64>,
    alpha_bars: Vec<f64>,
    posterior_vars: Vec<f64>,
}

impl NoiseSchedule {
    pub fn from_betas(betas: Vec<f64>) -> Result<Self> {
        if betas.is_empty() {
            return Err(Error::invalid("schedule needs at least one timestep"));
        }
        if let Some((i, b)) = betas
            .iter()
            .enumerate()
            .find(|(_, b)| !(**b > 0.0 && **b < 1.0))
        {
            return Err(Error::invalid(format!(
                "beta[{}] = {b} is outside (0, 1)",
                i + 1
            )));
        }
        let mut alpha_bars = Vec::with_capacity(betas.len() + 1);
        alpha_bars.push(1.0);
        let mut acc = 1.0;
        for b in &betas {
            acc *= 1.0 - b;
            alpha_bars.push(acc);
        }
        let posterior_vars = betas
            .iter()
            .enumerate()
            .map(|(i, b)| {
                let (prev, cur) = (alpha_bars[i], alpha_bars[i + 1]);
                (1.0 - prev) / (1.0 - cur) * b
            })
            .collect();
        Ok(Self {
            betas,
            alpha_bars,
            posterior_vars,
        })
    }

    pub fn timesteps(&self) -> usize {
        self.betas.len()
    }

    pub fn beta(&self, t: usize) -> f64 {
        self.betas[t - 1]
    }

    pub fn alpha(&self, t: usize) -> f64 {
        1.0 - self.betas[t - 1]
    }

    pub fn alpha_bar(&self, t: usize) -> f64 {
        self.alpha_bars[t]
    }

    pub fn posterior_var(&self, t: usize) -> f64 {
        self.posterior_vars[t - 1]
    }

    pub fn betas(&self) -> &[f64] {
        &self.betas
    }

    pub fn alpha_bars(&self) -> &[f64] {
        &self.alpha_bars
    }

    /// The schedule a peer reconstructs after receiving the betas as `f32`.
    pub fn quantized_f32(&self) -> Self {
        let betas = self.betas.iter().map(|b| *b as f32 as f64).collect();
        Self::from_betas(betas).expect("f32 rounding keeps betas inside (0, 1)")
    }

    pub(crate) fn check_t(&self, t: usize, min: usize) -> Result<()> {
        if t < min || t > self.timesteps() {
            return Err(Error::invalid(format!(
                "timestep {t} outside [{min}, {}]",
                self.timesteps()
            )));
        }
        Ok(())
    }
}

/// Linear 1e-4..0.02 schedule over 1000 steps, respaced to `timesteps` steps.
///
/// The kept training indices are `round(i * 1000 / T)` for `i = 1..=T`, so the
/// last one is always 1000 and `T = 1000` is the identity.
pub fn make_linear_schedule(timesteps: usize) -> Result<NoiseSchedule> {
    if timesteps == 0 || timesteps > TRAIN_STEPS {
        return Err(Error::invalid(format!(
            "timesteps must be in [1, {TRAIN_STEPS}], got {timesteps}"
        )));
    }
    let step = (BETA_END - BETA_START) / (TRAIN_STEPS - 1) as f64;
    let mut train_alpha_bar = Vec::with_capacity(TRAIN_STEPS + 1);
    train_alpha_bar.push(1.0f64);
    let mut acc = 1.0;
    for i in 0..TRAIN_STEPS {
        acc *= 1.0 - (BETA_START + step * i as f64);
        train_alpha_bar.push(acc);
    }
    if timesteps == TRAIN_STEPS {
        let betas = (0..TRAIN_STEPS)
            .map(|i| BETA_START + step * i as f64)
            .collect();
        return NoiseSchedule::from_betas(betas);
    }
    let kept = |i: usize| (i * TRAIN_STEPS + timesteps / 2) / timesteps;
    let betas = (1..=timesteps)
        .map(|i| 1.0 - train_alpha_bar[kept(i)] / train_alpha_bar[kept(i - 1)])
        .collect();
    NoiseSchedule::from_betas(betas)
}

/// Standard normal tensor drawn from one substream.
pub fn gaussian_draw(shape: Shape, stream: &mut impl rand::Rng) -> ImageTensor {
    let data = (0..shape.len())
        .map(|_| {
            let z: f64 = StandardNormal.sample(stream);
            z as f32
        })
        .collect();
    ImageTensor::from_vec(shape, data).expect("shape and length agree")
}

/// Samples `x_t ~ N(sqrt(abar_t) x0, (1 - abar_t) I)` using a fresh
/// `(purpose, t)` substream. `t = 0` returns `x0` unchanged.
pub fn forward_noise(
    x0: &ImageTensor,
    t: usize,
    sched: &NoiseSchedule,
    rng: &mut SeededRng,
    purpose: Purpose,
) -> Result<ImageTensor> {
    sched.check_t(t, 0)?;
    if t == 0 {
        return Ok(x0.clone());
    }
    let abar = sched.alpha_bar(t);
    let z = gaussian_draw(x0.shape(), &mut rng.substream(purpose, t));
    Ok(affine_noise(x0, &z, abar.sqrt(), (1.0 - abar).sqrt()))
}

/// One forward step `x_t = sqrt(1 - beta_t) x_{t-1} + sqrt(beta_t) z`, used
/// when the sampler jumps back up during resampling.
pub fn renoise_one_step(
    x: &ImageTensor,
    t: usize,
    sched: &NoiseSchedule,
    rng: &mut SeededRng,
) -> Result<ImageTensor> {
    sched.check_t(t, 1)?;
    let beta = sched.beta(t);
    let z = gaussian_draw(x.shape(), &mut rng.substream(Purpose::Resample, t));
    Ok(affine_noise(x, &z, (1.0 - beta).sqrt(), beta.sqrt()))
}

fn affine_noise(x: &ImageTensor, z: &ImageTensor, scale: f64, sigma: f64) -> ImageTensor {
    let data = x
        .data()
        .iter()
        .zip(z.data())
        .map(|(&x, &z)| (scale * x as f64 + sigma * z as f64) as f32)
        .collect();
    ImageTensor::from_vec(x.shape(), data).expect("shape preserved")
}
