use serde::{Deserialize, Serialize};

use attnprint_core::Fingerprint;

use crate::error::{Error, Result};
use crate::net::SimNetParams;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Verdict {
    pub score: f64,
    pub threshold: f64,
    /// `score > threshold`, strictly.
    pub related: bool,
}

impl Verdict {
    pub fn new(score: f64, threshold: f64) -> Result<Self> {
        if !(0.0..=1.0).contains(&threshold) {
            return Err(Error::InvalidArgument(format!("threshold {threshold} is outside [0, 1]")));
        }
        Ok(Verdict {
            score,
            threshold,
            related: score > threshold,
        })
    }
}

/// Eval-mode score of a suspect fingerprint against `threshold`.
pub fn verify(params: &SimNetParams, suspect: &Fingerprint, threshold: f64) -> Result<Verdict> {
    Verdict::new(params.score(&suspect.data)?, threshold)
}
