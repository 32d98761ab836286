use serde::Serialize;

use crate::error::{Error, Result};

/// One sampler move. The payload is the timestep the move lands on.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum Move {
    /// One denoiser step, `t -> t - 1`.
    Down(usize),
    /// One renoise step, `t -> t + 1`.
    Up(usize),
}

impl Move {
    pub fn to(self) -> usize {
        match self {
            Move::Down(t) | Move::Up(t) => t,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TimestepPlan {
    start: usize,
    moves: Vec<Move>,
}

impl TimestepPlan {
    pub fn start(&self) -> usize {
        self.start
    }

    pub fn moves(&self) -> &[Move] {
        &self.moves
    }

    pub fn visited(&self) -> Vec<usize> {
        self.moves.iter().map(|m| m.to()).collect()
    }

    pub fn down_count(&self) -> usize {
        self.moves
            .iter()
            .filter(|m| matches!(m, Move::Down(_)))
            .count()
    }

    pub fn up_count(&self) -> usize {
        self.moves.len() - self.down_count()
    }
}

fn check(timesteps: usize, jump: usize, resample: usize) -> Result<()> {
    if timesteps == 0 || jump == 0 || resample == 0 {
        return Err(Error::invalid(format!(
            "timesteps, jump length and resample count must be >= 1 \
             (got T={timesteps}, j={jump}, r={resample})"
        )));
    }
    Ok(())
}

/// Number of renoise steps taken on one jump from anchor `t`. Jumps never
/// climb past `T`.
fn jump_height(t: usize, timesteps: usize, jump: usize) -> usize {
    jump.min(timesteps - t)
}

fn is_anchor(t: usize, jump: usize) -> bool {
    t > 0 && t.is_multiple_of(jump)
}

/// Descends from `T` to `0`. Whenever a Down lands on a positive multiple of
/// `jump` that has been jumped from fewer than `resample - 1` times, the plan
/// climbs back up `jump` steps and descends again.
pub fn jump_plan(timesteps: usize, jump: usize, resample: usize) -> Result<TimestepPlan> {
    check(timesteps, jump, resample)?;
    let mut jumps_taken = vec![0usize; timesteps + 1];
    let mut moves = Vec::new();
    let mut t = timesteps;
    while t > 0 {
        t -= 1;
        moves.push(Move::Down(t));
        if is_anchor(t, jump) && jumps_taken[t] + 1 < resample {
            jumps_taken[t] += 1;
            for _ in 0..jump_height(t, timesteps, jump) {
                t += 1;
                moves.push(Move::Up(t));
            }
        }
    }
    Ok(TimestepPlan {
        start: timesteps,
        moves,
    })
}

/// Denoiser invocations made by [`jump_plan`], computed without building it.
///
/// Every jump from an anchor climbs `h` steps and must come back down the
/// same `h` steps, and each anchor jumps `resample - 1` times.
pub fn denoiser_call_count(timesteps: usize, jump: usize, resample: usize) -> Result<usize> {
    check(timesteps, jump, resample)?;
    let extra: usize = (1..timesteps)
        .filter(|&t| is_anchor(t, jump))
        .map(|t| jump_height(t, timesteps, jump))
        .sum();
    Ok(timesteps + (resample - 1) * extra)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn no_resampling_is_plain_descent() {
        let p = jump_plan(5, 1, 1).unwrap();
        assert_eq!(p.visited(), vec![4, 3, 2, 1, 0]);
        assert_eq!(p.up_count(), 0);
    }

    #[test]
    fn small_jump_example() {
        let p = jump_plan(4, 2, 2).unwrap();
        assert_eq!(p.visited(), vec![3, 2, 3, 4, 3, 2, 1, 0]);
        assert_eq!(p.down_count(), 6);
        assert_eq!(p.up_count(), 2);
        assert_eq!(denoiser_call_count(4, 2, 2).unwrap(), 6);
        assert_eq!(denoiser_call_count(5, 1, 1).unwrap(), 5);
    }

    #[test]
    fn jumps_are_capped_at_t_max() {
        // Anchor 4 sits one step below T=5, so a jump of length 4 climbs once.
        let p = jump_plan(5, 4, 3).unwrap();
        assert_eq!(p.visited(), vec![4, 5, 4, 5, 4, 3, 2, 1, 0]);
        assert!(p.visited().iter().all(|&t| t <= 5));
    }

    #[test]
    fn jump_longer_than_schedule_never_fires() {
        let p = jump_plan(3, 10, 10).unwrap();
        assert_eq!(p.visited(), vec![2, 1, 0]);
    }

    #[test]
    fn rejects_zero_parameters() {
        assert!(jump_plan(0, 1, 1).is_err());
        assert!(jump_plan(3, 0, 1).is_err());
        assert!(jump_plan(3, 1, 0).is_err());
        assert!(denoiser_call_count(3, 1, 0).is_err());
    }

    #[test]
    fn recommended_defaults_cost() {
        // Anchors 40, 80, 120, 160 each add 39 extra descents of 40 steps.
        assert_eq!(denoiser_call_count(200, 40, 40).unwrap(), 200 + 4 * 39 * 40);
    }
}
