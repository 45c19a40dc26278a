//! Checkpoint directories: one `SFMT` matrix per tensor plus `manifest.json`.
//!
//! Packing:
//! - convolution `name.weight.sfmt`: `(C_out, C_in·k·k)`, columns ordered
//!   `(c_in, ky, kx)`;
//! - batch norm `name.bn.sfmt`: `(4, C)` with rows γ, β, running mean,
//!   running variance;
//! - `fc.sfmt`: `(1, C + 1)`, the weights followed by the bias.
//!
//! Names are `stem`, `layer{s}.{j}.conv1|conv2|shortcut` with `s` in 1..=5.

use std::fs;
use std::path::Path;

use ndarray::{concatenate, s, Array1, Array2, Axis};
use serde::{Deserialize, Serialize};

use attnprint_core::matfile::{read_matrix, write_matrix};

use crate::arch::Architecture;
use crate::error::{Error, Result};
use crate::layers::{BatchNorm, Conv};
use crate::net::SimNetParams;
use crate::train::TrainConfig;

pub const CHECKPOINT_FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckpointManifest {
    pub format_version: u32,
    pub architecture: Architecture,
    pub train_config: Option<TrainConfig>,
    pub epochs_trained: usize,
    pub tensors: Vec<String>,
}

fn io(path: &Path, e: std::io::Error) -> Error {
    Error::Core(attnprint_core::Error::Io {
        path: path.to_path_buf(),
        source: e,
    })
}

fn pack_bn(bn: &BatchNorm) -> Array2<f64> {
    let rows = [&bn.gamma, &bn.beta, &bn.running_mean, &bn.running_var].map(|r| r.view().insert_axis(Axis(0)));
    concatenate(Axis(0), &rows).expect("equal lengths")
}

fn unpack_bn(m: &Array2<f64>, channels: usize, file: &str) -> Result<BatchNorm> {
    if m.dim() != (4, channels) {
        return Err(shape_error(file, (4, channels), m.dim()));
    }
    Ok(BatchNorm {
        gamma: m.row(0).to_owned(),
        beta: m.row(1).to_owned(),
        running_mean: m.row(2).to_owned(),
        running_var: m.row(3).to_owned(),
    })
}

fn shape_error(file: &str, expected: (usize, usize), found: (usize, usize)) -> Error {
    Error::Core(attnprint_core::Error::Dimension {
        what: file.to_string(),
        expected: format!("{expected:?}"),
        found: format!("{found:?}"),
    })
}

/// Visits every (name, conv, bn) unit in forward order.
fn units(p: &SimNetParams) -> Vec<(String, &Conv, &BatchNorm)> {
    let mut out = vec![("stem".to_string(), &p.conv1, &p.bn1)];
    for (s, stage) in p.stages.iter().enumerate() {
        for (j, b) in stage.iter().enumerate() {
            let base = format!("layer{}.{j}", s + 1);
            out.push((format!("{base}.conv1"), &b.conv1, &b.bn1));
            out.push((format!("{base}.conv2"), &b.conv2, &b.bn2));
            if let Some(sc) = &b.shortcut {
                out.push((format!("{base}.shortcut"), &sc.conv, &sc.bn));
            }
        }
    }
    out
}

fn units_mut(p: &mut SimNetParams) -> Vec<(String, &mut Conv, &mut BatchNorm)> {
    let mut out = vec![("stem".to_string(), &mut p.conv1, &mut p.bn1)];
    for (s, stage) in p.stages.iter_mut().enumerate() {
        for (j, b) in stage.iter_mut().enumerate() {
            let base = format!("layer{}.{j}", s + 1);
            out.push((format!("{base}.conv1"), &mut b.conv1, &mut b.bn1));
            out.push((format!("{base}.conv2"), &mut b.conv2, &mut b.bn2));
            if let Some(sc) = &mut b.shortcut {
                out.push((format!("{base}.shortcut"), &mut sc.conv, &mut sc.bn));
            }
        }
    }
    out
}

pub fn save_checkpoint(
    params: &SimNetParams,
    dir: &Path,
    train_config: Option<&TrainConfig>,
    epochs_trained: usize,
) -> Result<()> {
    params.validate()?;
    fs::create_dir_all(dir).map_err(|e| io(dir, e))?;
    let mut tensors = Vec::new();
    for (name, conv, bn) in units(params) {
        let w = format!("{name}.weight.sfmt");
        write_matrix(&dir.join(&w), &conv.weight.view())?;
        let b = format!("{name}.bn.sfmt");
        write_matrix(&dir.join(&b), &pack_bn(bn).view())?;
        tensors.extend([w, b]);
    }
    let mut fc = params.fc_weight.to_vec();
    fc.push(params.fc_bias);
    let fc = Array2::from_shape_vec((1, fc.len()), fc).expect("row vector");
    write_matrix(&dir.join("fc.sfmt"), &fc.view())?;
    tensors.push("fc.sfmt".into());

    let manifest = CheckpointManifest {
        format_version: CHECKPOINT_FORMAT_VERSION,
        architecture: params.arch,
        train_config: train_config.cloned(),
        epochs_trained,
        tensors,
    };
    let path = dir.join("manifest.json");
    let json = serde_json::to_string_pretty(&manifest).expect("manifest serializes");
    fs::write(&path, json + "\n").map_err(|e| io(&path, e))
}

pub fn load_checkpoint(dir: &Path) -> Result<(SimNetParams, CheckpointManifest)> {
    let path = dir.join("manifest.json");
    let text = fs::read_to_string(&path).map_err(|e| io(&path, e))?;
    let manifest: CheckpointManifest = serde_json::from_str(&text).map_err(|source| {
        Error::Core(attnprint_core::Error::Json {
            path: path.clone(),
            source,
        })
    })?;
    if manifest.format_version != CHECKPOINT_FORMAT_VERSION {
        return Err(Error::InvalidArgument(format!(
            "unsupported checkpoint format_version {}",
            manifest.format_version
        )));
    }
    // Build the shape skeleton from the architecture, then overwrite.
    let mut params = SimNetParams::init(manifest.architecture, 0)?;
    for (name, conv, bn) in units_mut(&mut params) {
        let file = format!("{name}.weight.sfmt");
        let w: Array2<f64> = read_matrix(&dir.join(&file))?;
        if w.dim() != conv.weight.dim() {
            return Err(shape_error(&file, conv.weight.dim(), w.dim()));
        }
        conv.weight = w;
        let file = format!("{name}.bn.sfmt");
        *bn = unpack_bn(&read_matrix(&dir.join(&file))?, bn.gamma.len(), &file)?;
    }
    let fc: Array2<f64> = read_matrix(&dir.join("fc.sfmt"))?;
    let c = params.fc_weight.len();
    if fc.dim() != (1, c + 1) {
        return Err(shape_error("fc.sfmt", (1, c + 1), fc.dim()));
    }
    params.fc_weight = Array1::from(fc.slice(s![0, ..c]).to_vec());
    params.fc_bias = fc[[0, c]];
    params.validate()?;
    Ok((params, manifest))
}
