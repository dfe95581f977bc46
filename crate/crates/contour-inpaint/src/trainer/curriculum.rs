//! Three-stage curriculum: content-only, then adversarial at 0.01:1, then
//! 1:1. Weights are piecewise-constant in the step index; they change only
//! at the configured stage boundaries.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct CurriculumSchedule {
    /// First step of stage 2 and first step of stage 3.
    pub boundaries: (usize, usize),
}

impl CurriculumSchedule {
    pub fn new(b1: usize, b2: usize) -> Result<Self> {
        if b1 > b2 {
            return Err(Error::Config(format!(
                "stage boundaries must be ordered, got ({b1}, {b2})"
            )));
        }
        Ok(CurriculumSchedule { boundaries: (b1, b2) })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CurriculumState {
    pub stage: u8,
    pub content_weight: f64,
    pub adv_weight: f64,
    pub step: usize,
    pub stage_boundaries: (usize, usize),
}

/// (content_weight, adv_weight) for a step index.
pub fn curriculum_weights(step: usize, sched: &CurriculumSchedule) -> (f64, f64) {
    let (b1, b2) = sched.boundaries;
    if step < b1 {
        (1.0, 0.0)
    } else if step < b2 {
        (1.0, 0.01)
    } else {
        (1.0, 1.0)
    }
}

pub fn curriculum_state(step: usize, sched: &CurriculumSchedule) -> CurriculumState {
    let (content_weight, adv_weight) = curriculum_weights(step, sched);
    let (b1, b2) = sched.boundaries;
    let stage = if step < b1 {
        1
    } else if step < b2 {
        2
    } else {
        3
    };
    CurriculumState {
        stage,
        content_weight,
        adv_weight,
        step,
        stage_boundaries: sched.boundaries,
    }
}
