use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::grid::{GeoPoint, GridSpec, Meters, RawSample, RSRP_MAX_DBM};
use crate::scalar::Scalar;

use super::mlp::{Activation, Mlp, MlpSpec};
use super::train::{train, Dataset, TrainConfig};
use super::NnError;

/// One positioned multi-cell measurement.
#[derive(Debug, Clone, PartialEq)]
pub struct Report {
    pub position: GeoPoint,
    pub readings: Vec<(u32, f64)>,
}

/// Group positioned samples into reports keyed by `(ue_token, timestamp_ms)`,
/// in order of first appearance. Unpositioned samples are ignored.
pub fn group_reports(samples: &[RawSample]) -> Vec<Report> {
    let mut index: BTreeMap<(&str, i64), usize> = BTreeMap::new();
    let mut out: Vec<Report> = Vec::new();
    for s in samples {
        let Some(position) = s.position else { continue };
        let k = *index.entry((s.ue_token.as_str(), s.timestamp_ms)).or_insert_with(|| {
            out.push(Report {
                position,
                readings: Vec::new(),
            });
            out.len() - 1
        });
        out[k].readings.push((s.pci, s.rsrp_dbm));
    }
    out
}

/// Fixed-order RSRP vector over the cluster's PCIs (ascending). Cells not heard
/// take `floor_dbm`; values are clamped to `[floor_dbm, -20]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Fingerprint {
    pub values: Vec<f64>,
    /// Readings whose PCI is not part of the cluster.
    pub dropped: usize,
}

impl Fingerprint {
    pub fn build(pcis: &[u32], readings: &[(u32, f64)], floor_dbm: f64) -> Self {
        let mut sums = vec![(0.0, 0usize); pcis.len()];
        let mut dropped = 0;
        for &(pci, v) in readings {
            match pcis.binary_search(&pci) {
                Ok(k) => {
                    sums[k].0 += v;
                    sums[k].1 += 1;
                }
                Err(_) => dropped += 1,
            }
        }
        let values = sums
            .into_iter()
            .map(|(s, n)| {
                if n == 0 {
                    floor_dbm
                } else {
                    (s / n as f64).clamp(floor_dbm, RSRP_MAX_DBM)
                }
            })
            .collect();
        Self { values, dropped }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LocatorParams {
    pub hidden: Vec<usize>,
    pub activation: Activation,
    pub train: TrainConfig,
    pub floor_dbm: f64,
}

impl Default for LocatorParams {
    fn default() -> Self {
        Self {
            hidden: vec![128, 64],
            activation: Activation::Relu,
            train: TrainConfig::default(),
            floor_dbm: -140.0,
        }
    }
}

/// Fingerprint-to-position network for one cluster.
#[derive(Debug, Clone, PartialEq)]
pub struct Locator<T> {
    pub mlp: Mlp<T>,
    /// Cluster PCIs in ascending order; defines the fingerprint layout.
    pub pcis: Vec<u32>,
    pub floor_dbm: f64,
    pub spec: GridSpec,
}

fn sorted_unique(pcis: &[u32]) -> Vec<u32> {
    let mut v = pcis.to_vec();
    v.sort_unstable();
    v.dedup();
    v
}

/// Train a locator on positioned reports.
pub fn locator_train<T: Scalar>(
    reports: &[Report],
    pcis: &[u32],
    spec: &GridSpec,
    params: &LocatorParams,
) -> Result<(Locator<T>, Vec<f64>), NnError> {
    let pcis = sorted_unique(pcis);
    if reports.is_empty() || pcis.is_empty() {
        return Err(NnError::EmptyDataset);
    }
    let mut sizes = vec![pcis.len()];
    sizes.extend(&params.hidden);
    sizes.push(2);
    let mlp_spec = MlpSpec::new(&sizes, params.activation)?;
    let mut inputs = Vec::with_capacity(reports.len() * pcis.len());
    let mut targets = Vec::with_capacity(reports.len() * 2);
    for r in reports {
        inputs.extend(Fingerprint::build(&pcis, &r.readings, params.floor_dbm).values);
        let m = spec.to_meters(r.position);
        targets.extend([m.east, m.north]);
    }
    let data = Dataset {
        inputs,
        targets,
        weights: vec![1.0; reports.len()],
        input_bounds: vec![(params.floor_dbm, RSRP_MAX_DBM); pcis.len()],
        target_bounds: vec![(0.0, spec.width_m()), (0.0, spec.height_m())],
    };
    let out = train(Mlp::init(&mlp_spec, params.train.seed)?, &data, &params.train)?;
    Ok((
        Locator {
            mlp: out.model,
            pcis,
            floor_dbm: params.floor_dbm,
            spec: *spec,
        },
        out.loss_trace,
    ))
}

impl<T: Scalar> Locator<T> {
    pub fn fingerprint(&self, readings: &[(u32, f64)]) -> Fingerprint {
        Fingerprint::build(&self.pcis, readings, self.floor_dbm)
    }

    /// Position estimate in local meters, clamped inside the grid extent.
    pub fn locate_m(&self, fingerprint: &[f64]) -> Result<Meters, NnError> {
        let out = self.mlp.predict_batch(fingerprint)?;
        if out.len() != 2 {
            return Err(NnError::Dimension {
                expected: self.pcis.len(),
                got: fingerprint.len(),
            });
        }
        // keep strictly inside the half-open extent
        let inner = 1.0 - 1e-9;
        Ok(Meters::new(
            out[0].clamp(0.0, self.spec.width_m() * inner),
            out[1].clamp(0.0, self.spec.height_m() * inner),
        ))
    }

    pub fn geolocate(&self, fingerprint: &[f64]) -> Result<GeoPoint, NnError> {
        Ok(self.spec.to_geo(self.locate_m(fingerprint)?))
    }
}
