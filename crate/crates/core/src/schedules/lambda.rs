use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// How the hole blend weight λ is chosen per timestep. λ = 1 takes only the
/// denoiser output; λ = 0 takes only the forward-noised target.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum LambdaSpec {
    Constant { value: f64 },
    /// 1 for `t <= p·T`, then linear down to 0 at `t = T`.
    LinearP { p: f64 },
}

impl LambdaSpec {
    pub fn validate(&self) -> Result<()> {
        let (name, v) = match *self {
            LambdaSpec::Constant { value } => ("lambda", value),
            LambdaSpec::LinearP { p } => ("p", p),
        };
        if !(0.0..=1.0).contains(&v) {
            return Err(Error::invalid(format!("{name} must be in [0, 1], got {v}")));
        }
        Ok(())
    }

    pub fn bind(self, timesteps: usize) -> Result<LambdaSchedule> {
        self.validate()?;
        Ok(LambdaSchedule {
            spec: self,
            timesteps,
        })
    }
}

impl Default for LambdaSpec {
    fn default() -> Self {
        LambdaSpec::LinearP { p: 0.5 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LambdaSchedule {
    spec: LambdaSpec,
    timesteps: usize,
}

impl LambdaSchedule {
    pub fn constant(value: f64, timesteps: usize) -> Result<Self> {
        LambdaSpec::Constant { value }.bind(timesteps)
    }

    pub fn linear_p(p: f64, timesteps: usize) -> Result<Self> {
        LambdaSpec::LinearP { p }.bind(timesteps)
    }

    pub fn spec(&self) -> LambdaSpec {
        self.spec
    }

    pub fn eval(&self, t: usize) -> Result<f64> {
        if t > self.timesteps {
            return Err(Error::invalid(format!(
                "timestep {t} outside [0, {}]",
                self.timesteps
            )));
        }
        Ok(match self.spec {
            LambdaSpec::Constant { value } => value,
            LambdaSpec::LinearP { p } => {
                let total = self.timesteps as f64;
                let knee = p * total;
                let t = t as f64;
                if t <= knee {
                    1.0
                } else {
                    ((total - t) / (total - knee)).clamp(0.0, 1.0)
                }
            }
        })
    }
}
