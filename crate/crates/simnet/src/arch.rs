use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Strides of the five residual stages.
pub const STAGE_STRIDES: [usize; 5] = [1, 2, 2, 2, 1];
pub const BLOCKS_PER_STAGE: usize = 2;

/// Input geometry and channel widths: `widths[0]` is the stem, `widths[1..]`
/// the five stages.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Architecture {
    pub n_f: usize,
    pub h: usize,
    pub widths: [usize; 6],
}

impl Architecture {
    pub const FULL_WIDTHS: [usize; 6] = [64, 64, 128, 256, 512, 512];
    /// Small enough to train a toy corpus on one core in a few minutes.
    pub const DESK_WIDTHS: [usize; 6] = [4, 4, 8, 16, 32, 32];

    pub fn new(n_f: usize, h: usize, widths: [usize; 6]) -> Result<Self> {
        let arch = Architecture { n_f, h, widths };
        arch.validate()?;
        Ok(arch)
    }

    pub fn full(n_f: usize, h: usize) -> Result<Self> {
        Self::new(n_f, h, Self::FULL_WIDTHS)
    }

    pub fn desk(n_f: usize, h: usize) -> Result<Self> {
        Self::new(n_f, h, Self::DESK_WIDTHS)
    }

    /// Three stride-2 stages need `4·n_f ≥ 8` and `h ≥ 8` to end on at
    /// least one whole cell.
    pub fn validate(&self) -> Result<()> {
        if 4 * self.n_f < 8 || self.h < 8 {
            return Err(Error::InvalidArgument(format!(
                "input {}x{} is too small for three stride-2 stages (need 4·n_f ≥ 8 and h ≥ 8)",
                4 * self.n_f,
                self.h
            )));
        }
        if self.widths.contains(&0) {
            return Err(Error::InvalidArgument("channel widths must be positive".into()));
        }
        Ok(())
    }

    pub fn input_shape(&self) -> (usize, usize) {
        (4 * self.n_f, self.h)
    }
}
