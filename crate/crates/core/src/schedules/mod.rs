//! Blend-weight schedules and the resampling timestep plan.

mod lambda;
mod plan;

pub use lambda::{LambdaSchedule, LambdaSpec};
pub use plan::{denoiser_call_count, jump_plan, Move, TimestepPlan};
