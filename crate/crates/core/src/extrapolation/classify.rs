use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::components;
use crate::grid::{GridCoord, GridSpec, SparseField};

use super::{median, ExtrapolationError};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum RegionLabel {
    Normal,
    Abnormal,
    Outlier,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ClassifyParams {
    /// Occupancy threshold for the component mask.
    pub t_class_dbm: f64,
    /// Minimum size of a detached component to count as an anomaly region.
    pub m_abn: usize,
    /// Chebyshev link distance between occupied elements; 1 is 8-connectivity.
    /// Larger values bridge the gaps between sparse samples.
    pub link_radius: usize,
    /// Outlier threshold in units of the median absolute deviation.
    pub mad_factor: f64,
}

impl Default for ClassifyParams {
    fn default() -> Self {
        Self {
            t_class_dbm: -115.0,
            m_abn: 5,
            link_radius: 2,
            mad_factor: 3.0,
        }
    }
}

pub type Labels = BTreeMap<GridCoord, RegionLabel>;

/// Label every populated element of one cell's field.
///
/// The largest component of the thresholded occupancy mask is the cell's normal
/// footprint. Other components of at least `m_abn` elements are abnormal. Smaller
/// ones become outliers when their median departs from the field median by more
/// than `mad_factor` MADs, and normal otherwise. Elements under the threshold are
/// normal.
pub fn classify_regions(
    field: &SparseField,
    spec: &GridSpec,
    params: &ClassifyParams,
) -> Result<Labels, ExtrapolationError> {
    if field.is_empty() {
        return Err(ExtrapolationError::EmptyField);
    }
    let mut mask = vec![false; spec.len()];
    for (&c, &v) in field {
        if !spec.contains(c) {
            return Err(ExtrapolationError::OutOfGrid(c));
        }
        if v >= params.t_class_dbm {
            mask[spec.index(c)] = true;
        }
    }
    let mut labels: Labels = field.keys().map(|&c| (c, RegionLabel::Normal)).collect();
    let comps = components::label(spec, &mask, params.link_radius);
    if comps.is_empty() {
        return Ok(labels);
    }
    let value = |i: usize| field[&spec.coord(i)];
    let strongest = |comp: &[usize]| comp.iter().map(|&i| value(i)).fold(f64::NEG_INFINITY, f64::max);
    let principal = (0..comps.len())
        .max_by(|&a, &b| {
            comps[a]
                .len()
                .cmp(&comps[b].len())
                .then(strongest(&comps[a]).total_cmp(&strongest(&comps[b])))
                // earliest component wins exact ties
                .then(b.cmp(&a))
        })
        .expect("non-empty");

    let mut all: Vec<f64> = field.values().copied().collect();
    let global_median = median(&mut all);
    let mut dev: Vec<f64> = field.values().map(|v| (v - global_median).abs()).collect();
    let mad = median(&mut dev);

    for (k, comp) in comps.iter().enumerate() {
        if k == principal {
            continue;
        }
        let label = if comp.len() >= params.m_abn {
            RegionLabel::Abnormal
        } else {
            let mut vals: Vec<f64> = comp.iter().map(|&i| value(i)).collect();
            if (median(&mut vals) - global_median).abs() > params.mad_factor * mad {
                RegionLabel::Outlier
            } else {
                RegionLabel::Normal
            }
        };
        for &i in comp {
            labels.insert(spec.coord(i), label);
        }
    }
    Ok(labels)
}
