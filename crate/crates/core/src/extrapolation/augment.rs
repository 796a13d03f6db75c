use serde::{Deserialize, Serialize};

use crate::grid::{GridCoord, GridSpec, Meters, SparseField};

use super::classify::{Labels, RegionLabel};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Provenance {
    Real,
    BoundaryPseudo,
    /// Real sample from an abnormal region, carrying emphasis weight.
    EmphasisCopy,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AugmentParams {
    /// Value assigned to boundary pseudo-samples.
    pub floor_dbm: f64,
    /// Lattice points need to be farther than this (in elements) from any real sample.
    pub r_bc: f64,
    /// Lattice stride in elements.
    pub s_bc: usize,
    pub w_emph: f64,
    /// Weight of boundary pseudo-samples; below 1 so nearby real data dominates.
    pub pseudo_weight: f64,
}

impl Default for AugmentParams {
    fn default() -> Self {
        Self {
            floor_dbm: -140.0,
            r_bc: 10.0,
            s_bc: 5,
            w_emph: 3.0,
            pseudo_weight: 0.1,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AugSample {
    pub coord: GridCoord,
    pub east_m: f64,
    pub north_m: f64,
    pub value_dbm: f64,
    pub weight: f64,
    pub provenance: Provenance,
}

impl AugSample {
    pub fn position(&self) -> Meters {
        Meters::new(self.east_m, self.north_m)
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct AugmentedSet {
    pub samples: Vec<AugSample>,
}

impl AugmentedSet {
    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn count(&self, p: Provenance) -> usize {
        self.samples.iter().filter(|s| s.provenance == p).count()
    }

    /// Build directly from `(position, value, weight)` triples, all tagged as real.
    pub fn from_points(points: impl IntoIterator<Item = (Meters, f64, f64)>) -> Self {
        Self {
            samples: points
                .into_iter()
                .map(|(m, v, w)| AugSample {
                    coord: GridCoord::new(0, 0),
                    east_m: m.east,
                    north_m: m.north,
                    value_dbm: v,
                    weight: w,
                    provenance: Provenance::Real,
                })
                .collect(),
        }
    }
}

/// Drop outliers, weight abnormal samples and add floor-valued boundary pseudo-samples.
///
/// Pseudo-samples go on every unpopulated border element and on a lattice of stride
/// `s_bc` over unpopulated elements farther than `r_bc` elements from any kept real
/// sample.
pub fn augment(field: &SparseField, labels: &Labels, spec: &GridSpec, params: &AugmentParams) -> AugmentedSet {
    let mut samples = Vec::with_capacity(field.len());
    for (&c, &v) in field {
        let m = spec.center_m(c);
        let (weight, provenance) = match labels.get(&c).copied().unwrap_or(RegionLabel::Normal) {
            RegionLabel::Outlier => continue,
            RegionLabel::Abnormal => (params.w_emph, Provenance::EmphasisCopy),
            RegionLabel::Normal => (1.0, Provenance::Real),
        };
        samples.push(AugSample {
            coord: c,
            east_m: m.east,
            north_m: m.north,
            value_dbm: v,
            weight,
            provenance,
        });
    }
    let kept: Vec<GridCoord> = samples.iter().map(|s| s.coord).collect();
    let r2 = params.r_bc * params.r_bc;
    let far_from_data = |c: GridCoord| {
        kept.iter().all(|k| {
            let dr = k.row as f64 - c.row as f64;
            let dc = k.col as f64 - c.col as f64;
            dr * dr + dc * dc > r2
        })
    };
    let stride = params.s_bc.max(1);
    for c in spec.coords() {
        if field.contains_key(&c) {
            continue;
        }
        let on_lattice = c.row % stride == 0 && c.col % stride == 0;
        if spec.is_border(c) || (on_lattice && far_from_data(c)) {
            let m = spec.center_m(c);
            samples.push(AugSample {
                coord: c,
                east_m: m.east,
                north_m: m.north,
                value_dbm: params.floor_dbm,
                weight: params.pseudo_weight,
                provenance: Provenance::BoundaryPseudo,
            });
        }
    }
    AugmentedSet { samples }
}
