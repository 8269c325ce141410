//! Step/block gating for steering.
//!
//! Query edits are confined to an early prefix of the denoising process:
//! steering runs only while the step index is below `max_steps` AND the
//! block index is below `max_blocks`. The gate is conjunctive — blocks
//! nest inside steps, so "the first 20 blocks of the first 20 steps"
//! means exactly the 20×20 prefix grid.

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Default gate: steer the first 20 blocks of the first 20 steps.
pub const DEFAULT_MAX_STEPS: usize = 20;
pub const DEFAULT_MAX_BLOCKS: usize = 20;

/// Full-scale run shape the defaults were chosen for: 50 denoising
/// steps over a 40-block transformer.
pub const DEFAULT_TOTAL_STEPS: usize = 50;
pub const DEFAULT_TOTAL_BLOCKS: usize = 40;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum ScheduleError {
    #[error("max_steps {max_steps} exceeds total_steps {total_steps}")]
    StepsOutOfRange { max_steps: usize, total_steps: usize },
    #[error("max_blocks {max_blocks} exceeds total_blocks {total_blocks}")]
    BlocksOutOfRange { max_blocks: usize, total_blocks: usize },
    #[error("step {step} out of range (total_steps {total_steps})")]
    StepIndex { step: usize, total_steps: usize },
    #[error("block {block} out of range (total_blocks {total_blocks})")]
    BlockIndex { block: usize, total_blocks: usize },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "ScheduleDoc")]
pub struct SteeringSchedule {
    max_steps: usize,
    max_blocks: usize,
    total_steps: usize,
    total_blocks: usize,
}

#[derive(Debug, Deserialize)]
struct ScheduleDoc {
    max_steps: usize,
    max_blocks: usize,
    total_steps: usize,
    total_blocks: usize,
}

impl TryFrom<ScheduleDoc> for SteeringSchedule {
    type Error = ScheduleError;

    fn try_from(doc: ScheduleDoc) -> Result<Self, Self::Error> {
        SteeringSchedule::new(doc.max_steps, doc.max_blocks, doc.total_steps, doc.total_blocks)
    }
}

impl Default for SteeringSchedule {
    fn default() -> Self {
        SteeringSchedule {
            max_steps: DEFAULT_MAX_STEPS,
            max_blocks: DEFAULT_MAX_BLOCKS,
            total_steps: DEFAULT_TOTAL_STEPS,
            total_blocks: DEFAULT_TOTAL_BLOCKS,
        }
    }
}

impl SteeringSchedule {
    pub fn new(
        max_steps: usize,
        max_blocks: usize,
        total_steps: usize,
        total_blocks: usize,
    ) -> Result<Self, ScheduleError> {
        if max_steps > total_steps {
            return Err(ScheduleError::StepsOutOfRange { max_steps, total_steps });
        }
        if max_blocks > total_blocks {
            return Err(ScheduleError::BlocksOutOfRange { max_blocks, total_blocks });
        }
        Ok(SteeringSchedule {
            max_steps,
            max_blocks,
            total_steps,
            total_blocks,
        })
    }

    /// A schedule that never steers, for the given run shape.
    pub fn disabled(total_steps: usize, total_blocks: usize) -> Self {
        SteeringSchedule {
            max_steps: 0,
            max_blocks: 0,
            total_steps,
            total_blocks,
        }
    }

    pub fn max_steps(&self) -> usize {
        self.max_steps
    }

    pub fn max_blocks(&self) -> usize {
        self.max_blocks
    }

    pub fn total_steps(&self) -> usize {
        self.total_steps
    }

    pub fn total_blocks(&self) -> usize {
        self.total_blocks
    }

    /// Number of (step, block) pairs the gate admits.
    pub fn active_cells(&self) -> usize {
        self.max_steps * self.max_blocks
    }

    /// True iff steering applies at this step and block.
    pub fn is_active(&self, step: usize, block: usize) -> Result<bool, ScheduleError> {
        if step >= self.total_steps {
            return Err(ScheduleError::StepIndex {
                step,
                total_steps: self.total_steps,
            });
        }
        if block >= self.total_blocks {
            return Err(ScheduleError::BlockIndex {
                block,
                total_blocks: self.total_blocks,
            });
        }
        Ok(step < self.max_steps && block < self.max_blocks)
    }
}
