//! Synthetic radio environment used as ground truth.
//!
//! Log-distance path loss with a parabolic horizontal pattern, spatially
//! correlated shadowing and injectable anomalies. None of this is used by the
//! analysis pipeline itself; it only produces samples and reference fields.

use std::collections::BTreeMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::grid::{DenseField, GeoPoint, GridCoord, GridSpec, Meters, RawSample, Source, RSRP_MAX_DBM, RSRP_MIN_DBM};

pub const REFERENCE_DISTANCE_M: f64 = 10.0;
pub const REFERENCE_LOSS_DB: f64 = 60.0;
pub const PATTERN_FLOOR_DB: f64 = 25.0;
/// Cells reported per measurement report.
pub const REPORTED_CELLS: usize = 8;
pub const OUTLIER_RANGE_DBM: (f64, f64) = (-140.0, -60.0);

#[derive(Debug, Error)]
pub enum SimError {
    #[error("unknown pci {0}")]
    UnknownPci(u32),
    #[error("invalid environment: {0}")]
    Config(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum AnomalySpec {
    /// Additive boost on a distance ring inside the main lobe.
    Overshoot {
        boost_db: f64,
        ring_inner_m: f64,
        ring_outer_m: f64,
    },
    AzimuthError {
        delta_deg: f64,
    },
    PowerFault {
        delta_db: f64,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellConfig {
    pub pci: u32,
    pub site: GeoPoint,
    pub azimuth_deg: f64,
    pub beamwidth_deg: f64,
    pub eirp_dbm: f64,
    pub pl_exponent: f64,
    #[serde(default)]
    pub anomalies: Vec<AnomalySpec>,
}

/// Default sample counts for the `simulate` command.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SamplingPlan {
    pub mdt_per_cell: usize,
    pub mr_ues: usize,
    pub mr_reports_per_ue: usize,
}

impl Default for SamplingPlan {
    fn default() -> Self {
        Self {
            mdt_per_cell: 800,
            mr_ues: 0,
            mr_reports_per_ue: 3,
        }
    }
}

fn default_noise() -> f64 {
    2.0
}

fn default_report_cells() -> usize {
    REPORTED_CELLS
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnvironmentConfig {
    pub spec: GridSpec,
    pub cells: Vec<CellConfig>,
    pub shadowing_sigma_db: f64,
    pub noise_floor_dbm: f64,
    pub outlier_rate: f64,
    pub seed: u64,
    /// Per-sample Gaussian measurement noise.
    #[serde(default = "default_noise")]
    pub measurement_noise_db: f64,
    /// Strongest cells carried by each report (MDT and MR).
    #[serde(default = "default_report_cells")]
    pub report_cells: usize,
    #[serde(default)]
    pub sampling: SamplingPlan,
}

impl EnvironmentConfig {
    pub fn validate(&self) -> Result<(), SimError> {
        self.spec.validate().map_err(|e| SimError::Config(e.to_string()))?;
        let mut seen = std::collections::BTreeSet::new();
        for c in &self.cells {
            if !seen.insert(c.pci) {
                return Err(SimError::Config(format!("duplicate pci {}", c.pci)));
            }
            if !(c.beamwidth_deg > 0.0 && c.beamwidth_deg <= 360.0) {
                return Err(SimError::Config(format!(
                    "pci {}: beamwidth_deg must be in (0, 360]",
                    c.pci
                )));
            }
            if !(2.0..=5.0).contains(&c.pl_exponent) {
                return Err(SimError::Config(format!(
                    "pci {}: pl_exponent must be in [2, 5]",
                    c.pci
                )));
            }
            for a in &c.anomalies {
                if let AnomalySpec::Overshoot {
                    boost_db,
                    ring_inner_m,
                    ring_outer_m,
                } = a
                {
                    if !(*boost_db > 0.0 && *ring_inner_m > 0.0 && ring_outer_m > ring_inner_m) {
                        return Err(SimError::Config(format!(
                            "pci {}: overshoot needs boost_db > 0 and ring_outer_m > ring_inner_m > 0",
                            c.pci
                        )));
                    }
                }
            }
        }
        if !(self.shadowing_sigma_db >= 0.0) || !(self.measurement_noise_db >= 0.0) {
            return Err(SimError::Config("noise and shadowing sigmas must be >= 0".into()));
        }
        if !(0.0..=1.0).contains(&self.outlier_rate) {
            return Err(SimError::Config("outlier_rate must be in [0, 1]".into()));
        }
        if self.report_cells == 0 {
            return Err(SimError::Config("report_cells must be >= 1".into()));
        }
        Ok(())
    }

    pub fn pcis(&self) -> Vec<u32> {
        let mut v: Vec<u32> = self.cells.iter().map(|c| c.pci).collect();
        v.sort_unstable();
        v
    }

    pub fn cell(&self, pci: u32) -> Result<&CellConfig, SimError> {
        self.cells
            .iter()
            .find(|c| c.pci == pci)
            .ok_or(SimError::UnknownPci(pci))
    }
}

/// splitmix64 finalizer, used to derive independent sub-seeds.
pub(crate) fn mix_seed(a: u64, b: u64) -> u64 {
    let mut z = a ^ b.wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

fn wrap_deg(d: f64) -> f64 {
    let w = (d + 180.0).rem_euclid(360.0) - 180.0;
    if w == -180.0 {
        180.0
    } else {
        w
    }
}

/// Compass bearing in degrees, 0 = north, clockwise.
fn bearing_deg(from: Meters, to: Meters) -> f64 {
    (to.east - from.east)
        .atan2(to.north - from.north)
        .to_degrees()
        .rem_euclid(360.0)
}

/// Unit-variance correlated field: white noise through a 3x3 box filter.
fn unit_shadowing(spec: &GridSpec, seed: u64) -> Vec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let white: Vec<f64> = (0..spec.len()).map(|_| StandardNormal.sample(&mut rng)).collect();
    let (rows, cols) = (spec.rows as isize, spec.cols as isize);
    let mut out = vec![0.0; spec.len()];
    for r in 0..rows {
        for c in 0..cols {
            let (mut sum, mut n) = (0.0, 0usize);
            for dr in -1..=1 {
                for dc in -1..=1 {
                    let (rr, cc) = (r + dr, c + dc);
                    if rr >= 0 && rr < rows && cc >= 0 && cc < cols {
                        sum += white[(rr * cols + cc) as usize];
                        n += 1;
                    }
                }
            }
            out[(r * cols + c) as usize] = sum / (n as f64).sqrt();
        }
    }
    out
}

/// Noise-free deterministic part of a cell's field at one point.
fn deterministic_rsrp(cell: &CellConfig, site: Meters, at: Meters) -> f64 {
    let mut eirp = cell.eirp_dbm;
    let mut azimuth = cell.azimuth_deg;
    for a in &cell.anomalies {
        match a {
            AnomalySpec::AzimuthError { delta_deg } => azimuth += delta_deg,
            AnomalySpec::PowerFault { delta_db } => eirp += delta_db,
            AnomalySpec::Overshoot { .. } => {}
        }
    }
    let d = site.distance(at);
    let path_loss =
        REFERENCE_LOSS_DB + 10.0 * cell.pl_exponent * (d.max(REFERENCE_DISTANCE_M) / REFERENCE_DISTANCE_M).log10();
    let off_axis = if d <= REFERENCE_DISTANCE_M {
        0.0
    } else {
        wrap_deg(bearing_deg(site, at) - azimuth)
    };
    let pattern = (12.0 * (off_axis / cell.beamwidth_deg).powi(2)).min(PATTERN_FLOOR_DB);
    let mut rsrp = eirp - path_loss - pattern;
    for a in &cell.anomalies {
        if let AnomalySpec::Overshoot {
            boost_db,
            ring_inner_m,
            ring_outer_m,
        } = a
        {
            if d >= *ring_inner_m && d <= *ring_outer_m && off_axis.abs() <= cell.beamwidth_deg / 2.0 {
                rsrp += boost_db;
            }
        }
    }
    rsrp
}

/// Dense ground-truth RSRP for one cell, clamped to `[noise_floor, -20]`.
pub fn ground_truth_field(env: &EnvironmentConfig, pci: u32) -> Result<DenseField, SimError> {
    let cell = env.cell(pci)?;
    let spec = &env.spec;
    let site = spec.to_meters(cell.site);
    let shadow = if env.shadowing_sigma_db > 0.0 {
        Some(unit_shadowing(spec, mix_seed(env.seed, pci as u64)))
    } else {
        None
    };
    Ok(DenseField::from_fn(*spec, |c| {
        let mut v = deterministic_rsrp(cell, site, spec.center_m(c));
        if let Some(s) = &shadow {
            v += env.shadowing_sigma_db * s[spec.index(c)];
        }
        v.clamp(env.noise_floor_dbm, RSRP_MAX_DBM)
    }))
}

pub fn ground_truth_fields(env: &EnvironmentConfig) -> Result<BTreeMap<u32, DenseField>, SimError> {
    env.validate()?;
    env.pcis()
        .into_iter()
        .map(|pci| Ok((pci, ground_truth_field(env, pci)?)))
        .collect()
}

struct Measurer<'a> {
    env: &'a EnvironmentConfig,
    fields: &'a BTreeMap<u32, DenseField>,
}

impl Measurer<'_> {
    /// Strongest audible cells at `c` by ground truth, descending; ties to lower pci.
    fn strongest(&self, c: GridCoord) -> Vec<(u32, f64)> {
        let mut v: Vec<(u32, f64)> = self
            .fields
            .iter()
            .map(|(&pci, f)| (pci, f.at(c)))
            .filter(|&(_, v)| v > self.env.noise_floor_dbm)
            .collect();
        v.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
        v
    }

    fn measure(&self, truth: f64, rng: &mut ChaCha8Rng) -> f64 {
        let v = if self.env.outlier_rate > 0.0 && rng.random::<f64>() < self.env.outlier_rate {
            rng.random_range(OUTLIER_RANGE_DBM.0..=OUTLIER_RANGE_DBM.1)
        } else if self.env.measurement_noise_db > 0.0 {
            let z: f64 = StandardNormal.sample(rng);
            truth + self.env.measurement_noise_db * z
        } else {
            truth
        };
        v.clamp(RSRP_MIN_DBM, RSRP_MAX_DBM)
    }

    fn point_in(&self, c: GridCoord, rng: &mut ChaCha8Rng) -> GeoPoint {
        let cs = self.env.spec.cell_size_m;
        let m = Meters::new(
            (c.col as f64 + rng.random::<f64>()) * cs,
            (c.row as f64 + rng.random::<f64>()) * cs,
        );
        // guard against rounding onto the next element
        match self.env.spec.project_m(m) {
            Some(got) if got == c => self.env.spec.to_geo(m),
            _ => self.env.spec.center_of(c),
        }
    }
}

/// Georeferenced MDT reports.
///
/// For each cell, `n_per_cell` elements are drawn with probability proportional
/// to that cell's margin above the noise floor (in dB). Each draw yields one report
/// at a random point of the element carrying the drawn cell plus the strongest
/// other audible cells, up to `report_cells` entries. All samples of a report share
/// `ue_token` and `timestamp_ms`.
pub fn sample_mdt(env: &EnvironmentConfig, n_per_cell: usize, seed: u64) -> Result<Vec<RawSample>, SimError> {
    let fields = ground_truth_fields(env)?;
    sample_mdt_with(env, &fields, n_per_cell, seed)
}

/// [`sample_mdt`] with precomputed ground-truth fields.
pub fn sample_mdt_with(
    env: &EnvironmentConfig,
    fields: &BTreeMap<u32, DenseField>,
    n_per_cell: usize,
    seed: u64,
) -> Result<Vec<RawSample>, SimError> {
    let m = Measurer { env, fields };
    let mut rng = ChaCha8Rng::seed_from_u64(mix_seed(seed, 0x4D44_54));
    let mut out = Vec::new();
    let mut report = 0u64;
    for (&pci, field) in fields {
        let mut cumulative = Vec::with_capacity(field.values.len());
        let mut total = 0.0;
        for &v in &field.values {
            total += (v - env.noise_floor_dbm).max(0.0);
            cumulative.push(total);
        }
        if total <= 0.0 {
            continue;
        }
        for _ in 0..n_per_cell {
            let u = rng.random::<f64>() * total;
            let idx = cumulative.partition_point(|&c| c <= u).min(cumulative.len() - 1);
            let coord = env.spec.coord(idx);
            let position = m.point_in(coord, &mut rng);
            let mut cells = vec![(pci, field.at(coord))];
            cells.extend(
                m.strongest(coord)
                    .into_iter()
                    .filter(|&(p, _)| p != pci)
                    .take(env.report_cells - 1),
            );
            let token = format!("mdt-{report:06}");
            let timestamp_ms = report as i64 * 1000;
            for (p, truth) in cells {
                out.push(RawSample {
                    pci: p,
                    rsrp_dbm: m.measure(truth, &mut rng),
                    position: Some(position),
                    timestamp_ms,
                    source: Source::Mdt,
                    ue_token: token.clone(),
                });
            }
            report += 1;
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq)]
pub struct MrUe {
    pub ue_id: String,
    pub samples: Vec<RawSample>,
}

/// Unpositioned MR traffic plus the hidden UE positions (evaluation only).
#[derive(Debug, Clone, PartialEq)]
pub struct MrDraw {
    pub ues: Vec<MrUe>,
    pub hidden_positions: Vec<GeoPoint>,
}

/// Spacing between successive reports of one UE.
pub const MR_REPORT_INTERVAL_MS: i64 = 100;
/// Spacing between UE start times.
pub const MR_UE_SPACING_MS: i64 = 60_000;

/// MR reports from `n_ue` UEs at hidden uniform positions. Each report carries the
/// strongest audible cells (up to `report_cells`) with measurement noise and no position.
pub fn sample_mr(env: &EnvironmentConfig, n_ue: usize, reports_per_ue: usize, seed: u64) -> Result<MrDraw, SimError> {
    let fields = ground_truth_fields(env)?;
    sample_mr_with(env, &fields, n_ue, reports_per_ue, seed)
}

pub fn sample_mr_with(
    env: &EnvironmentConfig,
    fields: &BTreeMap<u32, DenseField>,
    n_ue: usize,
    reports_per_ue: usize,
    seed: u64,
) -> Result<MrDraw, SimError> {
    let m = Measurer { env, fields };
    let mut rng = ChaCha8Rng::seed_from_u64(mix_seed(seed, 0x4D52));
    let spec = &env.spec;
    let mut ues = Vec::with_capacity(n_ue);
    let mut hidden_positions = Vec::with_capacity(n_ue);
    for i in 0..n_ue {
        let pos = Meters::new(
            rng.random::<f64>() * spec.width_m(),
            rng.random::<f64>() * spec.height_m(),
        );
        let coord = spec.project_m(pos).unwrap_or(GridCoord::new(
            ((pos.north / spec.cell_size_m) as usize).min(spec.rows - 1),
            ((pos.east / spec.cell_size_m) as usize).min(spec.cols - 1),
        ));
        let reported: Vec<(u32, f64)> = m.strongest(coord).into_iter().take(env.report_cells).collect();
        let ue_id = format!("ue-{i:05}");
        let mut samples = Vec::with_capacity(reported.len() * reports_per_ue);
        for r in 0..reports_per_ue {
            let timestamp_ms = i as i64 * MR_UE_SPACING_MS + r as i64 * MR_REPORT_INTERVAL_MS;
            for &(pci, truth) in &reported {
                samples.push(RawSample {
                    pci,
                    rsrp_dbm: m.measure(truth, &mut rng),
                    position: None,
                    timestamp_ms,
                    source: Source::Mr,
                    ue_token: ue_id.clone(),
                });
            }
        }
        ues.push(MrUe { ue_id, samples });
        hidden_positions.push(spec.to_geo(pos));
    }
    Ok(MrDraw { ues, hidden_positions })
}

/// Parameters for the seven-site hexagonal test cluster.
#[derive(Debug, Clone, PartialEq)]
pub struct HexCluster {
    pub origin: GeoPoint,
    pub rows: usize,
    pub cols: usize,
    pub cell_size_m: f64,
    pub inter_site_m: f64,
    pub eirp_dbm: f64,
    pub pl_exponent: f64,
    pub shadowing_sigma_db: f64,
    pub noise_floor_dbm: f64,
    pub outlier_rate: f64,
    pub seed: u64,
    /// PCI that receives an overshoot ring, if any.
    pub overshooter: Option<u32>,
    pub overshoot: AnomalySpec,
}

impl Default for HexCluster {
    fn default() -> Self {
        Self {
            origin: GeoPoint::new(40.0, -3.7),
            rows: 100,
            cols: 100,
            cell_size_m: 50.0,
            inter_site_m: 1500.0,
            eirp_dbm: 20.0,
            pl_exponent: 3.5,
            shadowing_sigma_db: 4.0,
            noise_floor_dbm: -140.0,
            outlier_rate: 0.01,
            seed: 0,
            overshooter: None,
            overshoot: AnomalySpec::Overshoot {
                boost_db: 20.0,
                ring_inner_m: 3000.0,
                ring_outer_m: 4000.0,
            },
        }
    }
}

impl HexCluster {
    /// PCIs 1..=7: 1 at the grid center, 2..=7 on a ring at `inter_site_m`,
    /// starting due west and proceeding clockwise. All cells are omni (360 degree beam).
    pub fn build(&self) -> EnvironmentConfig {
        let spec = GridSpec {
            origin: self.origin,
            cell_size_m: self.cell_size_m,
            rows: self.rows,
            cols: self.cols,
        };
        let center = Meters::new(spec.width_m() / 2.0, spec.height_m() / 2.0);
        let cells = (0..7u32)
            .map(|i| {
                let site = if i == 0 {
                    center
                } else {
                    // west, then every 60 degrees clockwise
                    let bearing = (270.0 + 60.0 * (i - 1) as f64).to_radians();
                    Meters::new(
                        center.east + self.inter_site_m * bearing.sin(),
                        center.north + self.inter_site_m * bearing.cos(),
                    )
                };
                let pci = i + 1;
                CellConfig {
                    pci,
                    site: spec.to_geo(site),
                    azimuth_deg: 0.0,
                    beamwidth_deg: 360.0,
                    eirp_dbm: self.eirp_dbm,
                    pl_exponent: self.pl_exponent,
                    anomalies: if self.overshooter == Some(pci) {
                        vec![self.overshoot.clone()]
                    } else {
                        Vec::new()
                    },
                }
            })
            .collect();
        EnvironmentConfig {
            spec,
            cells,
            shadowing_sigma_db: self.shadowing_sigma_db,
            noise_floor_dbm: self.noise_floor_dbm,
            outlier_rate: self.outlier_rate,
            seed: self.seed,
            measurement_noise_db: 2.0,
            report_cells: REPORTED_CELLS,
            sampling: SamplingPlan::default(),
        }
    }
}
