//! Per-cell coverage extrapolation: region classification, sample augmentation
//! and GP densification of a sparse field onto the whole grid.

mod augment;
mod classify;
mod gp;

pub use augment::{augment, AugSample, AugmentParams, AugmentedSet, Provenance};
pub use classify::{classify_regions, ClassifyParams, Labels, RegionLabel};
pub use gp::{
    candidate_grid, fit_gp, gp_predict, log_marginal_likelihood, tune_hyper, FactorizationFailure, GpHyper, GpModel,
    TuneOutcome, JITTER_ESCALATIONS,
};

use std::collections::BTreeMap;

use rand::seq::index;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::grid::{GridCoord, GridSpec, Meters, SparseField};

#[derive(Debug, Error)]
pub enum ExtrapolationError {
    #[error("field has no populated elements")]
    EmptyField,
    #[error("element {0:?} lies outside the grid")]
    OutOfGrid(GridCoord),
    #[error("GP needs at least 2 samples, got {0}")]
    TooFewSamples(usize),
    #[error("invalid GP hyperparameters {0:?}")]
    InvalidHyper(GpHyper),
    #[error("sample weight {0} is not positive")]
    InvalidWeight(f64),
    #[error("empty hyperparameter candidate grid")]
    NoCandidates,
    #[error(
        "kernel matrix not positive definite (n = {}, pivot {} at row {}, jitters tried {:?})",
        .0.n, .0.last_pivot.pivot, .0.last_pivot.index, .0.jitters_tried
    )]
    Numerical(FactorizationFailure),
}

/// Median by sorting in place; `NaN` for empty input.
pub(crate) fn median(values: &mut [f64]) -> f64 {
    if values.is_empty() {
        return f64::NAN;
    }
    values.sort_by(f64::total_cmp);
    let n = values.len();
    if n % 2 == 1 {
        values[n / 2]
    } else {
        0.5 * (values[n / 2 - 1] + values[n / 2])
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ExtrapolationParams {
    pub classify: ClassifyParams,
    pub augment: AugmentParams,
    /// Fixed hyperparameters; `None` derives them from the grid cell size.
    pub hyper: Option<GpHyper>,
    /// Lengthscale candidates for likelihood tuning; empty disables tuning.
    pub tune_lengthscales_m: Vec<f64>,
    /// Largest training set fitted by one global GP. Larger sets are
    /// predicted tile by tile, and hyperparameter tuning sees a uniformly
    /// thinned subset of this size.
    pub max_train_points: usize,
    pub thinning_seed: u64,
    /// Tile side, in grid elements, for local prediction.
    pub local_tile_elements: usize,
    /// Training points within this many lengthscales of a tile condition its fit.
    pub local_margin_lengthscales: f64,
}

impl Default for ExtrapolationParams {
    fn default() -> Self {
        Self {
            classify: ClassifyParams::default(),
            augment: AugmentParams::default(),
            hyper: None,
            tune_lengthscales_m: Vec::new(),
            max_train_points: 1000,
            thinning_seed: 0x5EED,
            local_tile_elements: 10,
            local_margin_lengthscales: 3.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum DenseSource {
    Real,
    Predicted,
}

/// One value per grid element (row-major) with a training weight.
#[derive(Debug, Clone, PartialEq)]
pub struct DenseTrainingSet {
    pub spec: GridSpec,
    pub values: Vec<f64>,
    pub weights: Vec<f64>,
    pub source: Vec<DenseSource>,
}

impl DenseTrainingSet {
    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn predicted(&self) -> usize {
        self.source.iter().filter(|s| **s == DenseSource::Predicted).count()
    }
}

#[derive(Debug, Clone)]
pub struct CellExtrapolation {
    pub labels: Labels,
    pub augmented: AugmentedSet,
    pub hyper: GpHyper,
    pub dense: DenseTrainingSet,
}

fn thin(aug: AugmentedSet, cap: usize, seed: u64) -> AugmentedSet {
    if aug.len() <= cap {
        return aug;
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut keep = index::sample(&mut rng, aug.len(), cap).into_vec();
    keep.sort_unstable();
    AugmentedSet {
        samples: keep.into_iter().map(|i| aug.samples[i]).collect(),
    }
}

/// Posterior mean at `targets`, tile by tile. Each tile gets an exact GP over
/// the training points within `margin_m` of it, all sharing the global
/// weighted-mean prior, so the kernel truncation error is bounded by
/// `exp(-margin² / 2ℓ²)`.
fn predict_tiled(
    aug: &AugmentedSet,
    hyper: GpHyper,
    spec: &GridSpec,
    targets: &[GridCoord],
    tile: usize,
    margin_m: f64,
) -> Result<Vec<f64>, ExtrapolationError> {
    let tile = tile.max(1);
    let values: Vec<f64> = aug.samples.iter().map(|s| s.value_dbm).collect();
    let weights: Vec<f64> = aug.samples.iter().map(|s| s.weight).collect();
    let prior = gp::weighted_mean(&values, &weights);
    let positions: Vec<Meters> = aug.samples.iter().map(|s| s.position()).collect();

    let mut by_tile: BTreeMap<(usize, usize), Vec<usize>> = BTreeMap::new();
    for (k, c) in targets.iter().enumerate() {
        by_tile.entry((c.row / tile, c.col / tile)).or_default().push(k);
    }
    let mut out = vec![prior; targets.len()];
    for ((tr, tc), members) in by_tile {
        let lo = spec.center_m(GridCoord::new(tr * tile, tc * tile));
        let last = GridCoord::new(
            ((tr + 1) * tile).min(spec.rows) - 1,
            ((tc + 1) * tile).min(spec.cols) - 1,
        );
        let hi = spec.center_m(last);
        let (e0, e1) = (lo.east.min(hi.east) - margin_m, lo.east.max(hi.east) + margin_m);
        let (n0, n1) = (lo.north.min(hi.north) - margin_m, lo.north.max(hi.north) + margin_m);
        let near: Vec<usize> = (0..positions.len())
            .filter(|&i| {
                let p = positions[i];
                p.east >= e0 && p.east <= e1 && p.north >= n0 && p.north <= n1
            })
            .collect();
        if near.is_empty() {
            continue;
        }
        let model: GpModel<f64> = GpModel::fit_points_with_mean(
            near.iter().map(|&i| positions[i]).collect(),
            near.iter().map(|&i| values[i]).collect(),
            near.iter().map(|&i| weights[i]).collect(),
            hyper,
            prior,
        )?;
        let points: Vec<Meters> = members.iter().map(|&k| spec.center_m(targets[k])).collect();
        for (&k, v) in members.iter().zip(model.predict_mean(&points)) {
            out[k] = v;
        }
    }
    Ok(out)
}

/// Classify, augment, fit and predict one cell's field over the whole grid.
///
/// Populated elements keep their measured value and label weight; every other
/// element, including dropped outliers, takes the GP posterior mean with weight 1.
pub fn extrapolate_cell(
    field: &SparseField,
    spec: &GridSpec,
    params: &ExtrapolationParams,
) -> Result<CellExtrapolation, ExtrapolationError> {
    let labels = classify_regions(field, spec, &params.classify)?;
    let augmented = augment(field, &labels, spec, &params.augment);
    let default_hyper = params.hyper.unwrap_or_else(|| GpHyper::for_cell_size(spec.cell_size_m));
    let training = thin(augmented.clone(), params.max_train_points.max(2), params.thinning_seed);

    let mut values = vec![0.0; spec.len()];
    let mut weights = vec![1.0; spec.len()];
    let mut source = vec![DenseSource::Predicted; spec.len()];
    let mut missing = Vec::new();
    for c in spec.coords() {
        let i = spec.index(c);
        match (field.get(&c), labels.get(&c)) {
            (Some(&v), Some(&label)) if label != RegionLabel::Outlier => {
                values[i] = v;
                weights[i] = if label == RegionLabel::Abnormal {
                    params.augment.w_emph
                } else {
                    1.0
                };
                source[i] = DenseSource::Real;
            }
            _ => missing.push(c),
        }
    }
    let hyper = if params.tune_lengthscales_m.is_empty() {
        default_hyper
    } else {
        let cands: Vec<GpHyper> = params
            .tune_lengthscales_m
            .iter()
            .map(|&l| GpHyper {
                lengthscale_m: l,
                ..default_hyper
            })
            .collect();
        tune_hyper(&training, &cands)?.best
    };
    if !missing.is_empty() {
        let predicted = if augmented.len() <= training.len() {
            let model: GpModel<f64> = GpModel::fit(&training, hyper)?;
            let points: Vec<Meters> = missing.iter().map(|&c| spec.center_m(c)).collect();
            model.predict_mean(&points)
        } else {
            predict_tiled(
                &augmented,
                hyper,
                spec,
                &missing,
                params.local_tile_elements,
                params.local_margin_lengthscales * hyper.lengthscale_m,
            )?
        };
        for (c, v) in missing.iter().zip(predicted) {
            values[spec.index(*c)] = v;
        }
    }
    Ok(CellExtrapolation {
        labels,
        augmented,
        hyper,
        dense: DenseTrainingSet {
            spec: *spec,
            values,
            weights,
            source,
        },
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::GeoPoint;

    #[test]
    fn median_even_and_odd() {
        assert_eq!(median(&mut [3.0, 1.0, 2.0]), 2.0);
        assert_eq!(median(&mut [4.0, 1.0, 2.0, 3.0]), 2.5);
        assert!(median(&mut []).is_nan());
    }

    #[test]
    fn fully_populated_returns_real_values() {
        let spec = GridSpec::new(GeoPoint::new(0.0, 0.0), 50.0, 8, 8).unwrap();
        let field: SparseField = spec
            .coords()
            .map(|c| (c, -70.0 - 2.0 * (c.row + c.col) as f64))
            .collect();
        let out = extrapolate_cell(&field, &spec, &ExtrapolationParams::default()).unwrap();
        assert_eq!(out.dense.predicted(), 0);
        for c in spec.coords() {
            assert_eq!(out.dense.values[spec.index(c)], field[&c]);
        }
    }

    #[test]
    fn sparse_field_covers_every_element() {
        let spec = GridSpec::new(GeoPoint::new(0.0, 0.0), 50.0, 20, 20).unwrap();
        let field: SparseField = spec
            .coords()
            .filter(|c| (c.row * 7 + c.col * 3) % 5 == 0)
            .map(|c| (c, -80.0 - c.col as f64))
            .collect();
        let out = extrapolate_cell(&field, &spec, &ExtrapolationParams::default()).unwrap();
        assert_eq!(out.dense.len(), spec.len());
        assert_eq!(out.dense.predicted(), spec.len() - field.len());
        assert!(out.dense.values.iter().all(|v| v.is_finite()));
    }

    #[test]
    fn thinning_respects_cap_and_is_deterministic() {
        let aug = AugmentedSet::from_points((0..50).map(|i| (Meters::new(i as f64, 0.0), -80.0, 1.0)));
        let a = thin(aug.clone(), 20, 1);
        assert_eq!(a.len(), 20);
        assert_eq!(a, thin(aug, 20, 1));
    }

    #[test]
    fn tiled_prediction_tracks_global_fit() {
        let spec = GridSpec::new(GeoPoint::new(0.0, 0.0), 50.0, 40, 40).unwrap();
        let present: Vec<GridCoord> = spec.coords().filter(|c| (c.row * 13 + c.col * 7) % 4 == 0).collect();
        let missing: Vec<GridCoord> = spec.coords().filter(|c| (c.row * 13 + c.col * 7) % 4 != 0).collect();
        let aug = AugmentedSet::from_points(present.iter().map(|&c| {
            let m = spec.center_m(c);
            (m, -70.0 - 0.02 * m.east + 6.0 * (m.north / 300.0).sin(), 1.0)
        }));
        let hyper = GpHyper::for_cell_size(50.0);
        let global: GpModel<f64> = GpModel::fit(&aug, hyper).unwrap();
        let exact = global.predict_mean(&missing.iter().map(|&c| spec.center_m(c)).collect::<Vec<_>>());
        let tiled = predict_tiled(&aug, hyper, &spec, &missing, 8, 3.0 * hyper.lengthscale_m).unwrap();
        let worst = exact.iter().zip(&tiled).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
        assert!(worst < 0.05, "max deviation {worst} dB");
    }
}
