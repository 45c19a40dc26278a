//! Attacks that go beyond function-preserving weight transformations:
//! fingerprint-evasion fine-tuning, structured pruning, and a genetic
//! false-claim search against an input-dependent baseline feature.

pub mod error;
pub mod false_claim;
pub mod finetune;
pub mod gradient;
pub mod prune;

use std::path::Path;

pub use error::{Error, Result};
pub use false_claim::{false_claim_ga, toy_ics_feature, GaConfig, GaOutcome, GenerationStats};
pub use finetune::{finetune_attack, FinetuneAttackConfig, TrajectoryPoint, UpdateScope};
pub use gradient::{attack_loss, fingerprint_gradient, FingerprintGradient, GradientMethod};
pub use prune::{structured_prune, structured_prune_strict};

pub(crate) fn write_csv<R: serde::Serialize>(rows: &[R], path: &Path) -> Result<()> {
    let wrap = |source| Error::Csv {
        path: path.to_path_buf(),
        source,
    };
    let mut writer = csv::Writer::from_path(path).map_err(wrap)?;
    for row in rows {
        writer.serialize(row).map_err(wrap)?;
    }
    writer.flush().map_err(|e| wrap(e.into()))?;
    Ok(())
}
