//! Margin sweeps over layer windows, weight subsets, value kinds, `h` and
//! `n_f`.

use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fingerprint::{
    extract_fingerprint_with, fingerprint_margin, selected_distance, ExtractOptions, Fingerprint, MarginReport,
    RowSelection, ValueKind, WeightSubset,
};
use crate::model::ModelWeights;
use crate::scalar::Real;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LayerWindow {
    First,
    Middle,
    Last,
}

impl LayerWindow {
    /// First layer of an `n_f`-layer window in an `n_layers` model; the
    /// middle window starts at `⌊(n_layers − n_f)/2⌋`. `None` when
    /// `n_f > n_layers`.
    pub fn start(self, n_layers: usize, n_f: usize) -> Option<usize> {
        let slack = n_layers.checked_sub(n_f)?;
        Some(match self {
            LayerWindow::First => 0,
            LayerWindow::Middle => slack / 2,
            LayerWindow::Last => slack,
        })
    }
}

/// A target with models known to derive from it and models that do not.
#[derive(Debug, Clone)]
pub struct ModelFamily<T> {
    pub target: ModelWeights<T>,
    pub related: Vec<ModelWeights<T>>,
    pub unrelated: Vec<ModelWeights<T>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationGrid {
    pub windows: Vec<LayerWindow>,
    pub subsets: Vec<WeightSubset>,
    pub kinds: Vec<ValueKind>,
    pub h_values: Vec<usize>,
    pub n_f_values: Vec<usize>,
}

impl AblationGrid {
    pub fn single(window: LayerWindow, subset: WeightSubset, kind: ValueKind, h: usize, n_f: usize) -> Self {
        AblationGrid {
            windows: vec![window],
            subsets: vec![subset],
            kinds: vec![kind],
            h_values: vec![h],
            n_f_values: vec![n_f],
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct AblationCell {
    pub window: LayerWindow,
    pub subset: WeightSubset,
    pub kind: ValueKind,
    pub h: usize,
    pub n_f: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationRow {
    pub cell: AblationCell,
    /// `None` when the cell does not fit the model dimensions.
    pub report: Option<MarginReport<f64>>,
    pub note: Option<String>,
}

/// One row per grid cell, ordered window → subset → kind → h → n_f.
pub fn ablation_sweep<T: Real>(family: &ModelFamily<T>, grid: &AblationGrid) -> Result<Vec<AblationRow>> {
    if family.related.is_empty() || family.unrelated.is_empty() {
        return Err(Error::InvalidArgument(
            "ablation needs at least one related and one unrelated model".into(),
        ));
    }
    let n_layers = family
        .related
        .iter()
        .chain(&family.unrelated)
        .map(|m| m.layers.len())
        .fold(family.target.layers.len(), usize::min);

    // Fingerprints depend only on (window start, n_f, h).
    type Key = (usize, usize, usize);
    let mut cache: HashMap<Key, std::result::Result<Vec<Fingerprint<T>>, String>> = HashMap::new();
    let mut fingerprints = |start: usize, n_f: usize, h: usize| {
        cache
            .entry((start, n_f, h))
            .or_insert_with(|| {
                let options = ExtractOptions {
                    layer_start: start,
                    ..ExtractOptions::default()
                };
                std::iter::once(&family.target)
                    .chain(&family.related)
                    .chain(&family.unrelated)
                    .map(|m| extract_fingerprint_with(m, n_f, h, options))
                    .collect::<Result<Vec<_>>>()
                    .map_err(|e| e.to_string())
            })
            .clone()
    };

    let mut rows = Vec::new();
    for &window in &grid.windows {
        for &subset in &grid.subsets {
            for &kind in &grid.kinds {
                for &h in &grid.h_values {
                    for &n_f in &grid.n_f_values {
                        let cell = AblationCell {
                            window,
                            subset,
                            kind,
                            h,
                            n_f,
                        };
                        let Some(start) = window.start(n_layers, n_f).filter(|_| n_f > 0) else {
                            rows.push(AblationRow {
                                cell,
                                report: None,
                                note: Some(format!("n_f = {n_f} does not fit {n_layers} layers")),
                            });
                            continue;
                        };
                        match fingerprints(start, n_f, h) {
                            Ok(fps) => {
                                let selection = RowSelection { subset, kind };
                                let distances = |models: std::ops::Range<usize>| -> Result<Vec<f64>> {
                                    models
                                        .map(|i| selected_distance(&fps[0], &fps[i], selection).map(|d| d.as_f64()))
                                        .collect()
                                };
                                let n_rel = family.related.len();
                                let related = distances(1..1 + n_rel)?;
                                let unrelated = distances(1 + n_rel..fps.len())?;
                                rows.push(AblationRow {
                                    cell,
                                    report: Some(fingerprint_margin(&related, &unrelated)?),
                                    note: None,
                                });
                            }
                            Err(reason) => rows.push(AblationRow {
                                cell,
                                report: None,
                                note: Some(reason),
                            }),
                        }
                    }
                }
            }
        }
    }
    Ok(rows)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn window_starts() {
        assert_eq!(LayerWindow::First.start(32, 8), Some(0));
        assert_eq!(LayerWindow::Middle.start(32, 8), Some(12));
        assert_eq!(LayerWindow::Last.start(32, 8), Some(24));
        assert_eq!(LayerWindow::Middle.start(9, 4), Some(2));
        assert_eq!(LayerWindow::Last.start(3, 4), None);
    }
}
