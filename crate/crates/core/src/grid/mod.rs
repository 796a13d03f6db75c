//! Georeferenced grid: projection, sample ingestion and per-element aggregation.
//!
//! Rows grow northwards from the origin and columns eastwards. An element owns
//! the half-open box `[south, north) x [west, east)`.

mod io;

pub use io::{read_grid_json, read_samples_csv, write_grid_json, write_samples_csv, GridJson};

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Meters per degree of latitude in the local flattening.
pub const METERS_PER_DEGREE: f64 = 111_320.0;
pub const DEFAULT_CELL_SIZE_M: f64 = 50.0;
pub const RSRP_MIN_DBM: f64 = -160.0;
pub const RSRP_MAX_DBM: f64 = -20.0;

#[derive(Debug, Error)]
pub enum GridError {
    #[error("invalid grid configuration: {0}")]
    Config(String),
    #[error("line {line}, column {column}: {reason}")]
    Parse { line: u64, column: usize, reason: String },
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GeoPoint {
    pub lat: f64,
    pub lon: f64,
}

impl GeoPoint {
    pub fn new(lat: f64, lon: f64) -> Self {
        Self { lat, lon }
    }
}

/// Local planar position in meters east/north of the grid origin.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct Meters {
    pub east: f64,
    pub north: f64,
}

impl Meters {
    pub fn new(east: f64, north: f64) -> Self {
        Self { east, north }
    }

    pub fn distance(self, other: Meters) -> f64 {
        (self.east - other.east).hypot(self.north - other.north)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct GridCoord {
    pub row: usize,
    pub col: usize,
}

impl GridCoord {
    pub fn new(row: usize, col: usize) -> Self {
        Self { row, col }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GridSpec {
    pub origin: GeoPoint,
    pub cell_size_m: f64,
    pub rows: usize,
    pub cols: usize,
}

impl GridSpec {
    pub fn new(origin: GeoPoint, cell_size_m: f64, rows: usize, cols: usize) -> Result<Self, GridError> {
        let spec = Self {
            origin,
            cell_size_m,
            rows,
            cols,
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<(), GridError> {
        if self.rows == 0 || self.cols == 0 {
            return Err(GridError::Config(format!(
                "grid must have at least one row and column, got {}x{}",
                self.rows, self.cols
            )));
        }
        if !(self.cell_size_m > 0.0 && self.cell_size_m.is_finite()) {
            return Err(GridError::Config(format!(
                "cell_size_m must be positive, got {}",
                self.cell_size_m
            )));
        }
        if !(self.origin.lat.abs() < 90.0 && self.origin.lon.is_finite()) {
            return Err(GridError::Config(format!(
                "origin latitude must lie strictly within (-90, 90), got {}",
                self.origin.lat
            )));
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.rows * self.cols
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn width_m(&self) -> f64 {
        self.cols as f64 * self.cell_size_m
    }

    pub fn height_m(&self) -> f64 {
        self.rows as f64 * self.cell_size_m
    }

    /// Row-major linear index.
    pub fn index(&self, c: GridCoord) -> usize {
        c.row * self.cols + c.col
    }

    pub fn coord(&self, index: usize) -> GridCoord {
        GridCoord::new(index / self.cols, index % self.cols)
    }

    pub fn coords(&self) -> impl Iterator<Item = GridCoord> + '_ {
        (0..self.len()).map(|i| self.coord(i))
    }

    pub fn contains(&self, c: GridCoord) -> bool {
        c.row < self.rows && c.col < self.cols
    }

    pub fn is_border(&self, c: GridCoord) -> bool {
        c.row == 0 || c.col == 0 || c.row + 1 == self.rows || c.col + 1 == self.cols
    }

    fn east_scale(&self) -> f64 {
        METERS_PER_DEGREE * self.origin.lat.to_radians().cos()
    }

    pub fn to_meters(&self, p: GeoPoint) -> Meters {
        Meters {
            east: (p.lon - self.origin.lon) * self.east_scale(),
            north: (p.lat - self.origin.lat) * METERS_PER_DEGREE,
        }
    }

    pub fn to_geo(&self, m: Meters) -> GeoPoint {
        GeoPoint {
            lat: self.origin.lat + m.north / METERS_PER_DEGREE,
            lon: self.origin.lon + m.east / self.east_scale(),
        }
    }

    pub fn center_m(&self, c: GridCoord) -> Meters {
        Meters {
            east: (c.col as f64 + 0.5) * self.cell_size_m,
            north: (c.row as f64 + 0.5) * self.cell_size_m,
        }
    }

    pub fn center_of(&self, c: GridCoord) -> GeoPoint {
        self.to_geo(self.center_m(c))
    }

    pub fn project_m(&self, m: Meters) -> Option<GridCoord> {
        let col = (m.east / self.cell_size_m).floor();
        let row = (m.north / self.cell_size_m).floor();
        if !(row >= 0.0 && col >= 0.0) || row >= self.rows as f64 || col >= self.cols as f64 {
            return None;
        }
        Some(GridCoord::new(row as usize, col as usize))
    }

    /// Clamp a planar position into the grid extent.
    pub fn clamp_m(&self, m: Meters) -> Meters {
        Meters {
            east: m.east.clamp(0.0, self.width_m()),
            north: m.north.clamp(0.0, self.height_m()),
        }
    }
}

/// Element containing `p`, or `None` outside the grid extent.
pub fn project(spec: &GridSpec, p: GeoPoint) -> Option<GridCoord> {
    spec.project_m(spec.to_meters(p))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum Source {
    Mdt,
    Mr,
    Dt,
    Synth,
}

impl Source {
    pub fn as_str(self) -> &'static str {
        match self {
            Source::Mdt => "MDT",
            Source::Mr => "MR",
            Source::Dt => "DT",
            Source::Synth => "SYNTH",
        }
    }

    /// Whether samples of this kind must carry a position.
    pub fn requires_position(self) -> bool {
        !matches!(self, Source::Mr)
    }
}

impl fmt::Display for Source {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Source {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "MDT" => Ok(Source::Mdt),
            "MR" => Ok(Source::Mr),
            "DT" => Ok(Source::Dt),
            "SYNTH" => Ok(Source::Synth),
            other => Err(format!("unknown source tag {other:?}")),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RawSample {
    pub pci: u32,
    pub rsrp_dbm: f64,
    pub position: Option<GeoPoint>,
    pub timestamp_ms: i64,
    pub source: Source,
    pub ue_token: String,
}

impl RawSample {
    pub fn validate(&self) -> Result<(), String> {
        if !(RSRP_MIN_DBM..=RSRP_MAX_DBM).contains(&self.rsrp_dbm) {
            return Err(format!(
                "rsrp_dbm {} outside [{RSRP_MIN_DBM}, {RSRP_MAX_DBM}]",
                self.rsrp_dbm
            ));
        }
        if self.source.requires_position() && self.position.is_none() {
            return Err(format!("{} sample without position", self.source));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CellAggregate {
    pub mean_rsrp_dbm: f64,
    pub count: u64,
}

/// Per-element, per-PCI aggregated RSRP. Immutable once built.
#[derive(Debug, Clone, PartialEq)]
pub struct CoverageGrid {
    pub spec: GridSpec,
    cells: BTreeMap<GridCoord, BTreeMap<u32, CellAggregate>>,
}

/// Sparse per-PCI field: populated elements only.
pub type SparseField = BTreeMap<GridCoord, f64>;

#[derive(Debug, Clone, PartialEq)]
pub struct IngestOutcome {
    pub grid: CoverageGrid,
    /// Samples dropped because they had no position.
    pub unpositioned: usize,
    /// Positioned samples that fell outside the grid extent.
    pub out_of_extent: usize,
}

impl IngestOutcome {
    pub fn skipped(&self) -> usize {
        self.unpositioned + self.out_of_extent
    }
}

/// Aggregate positioned samples into per-element, per-PCI means.
///
/// Values are summed in sorted order, so the result does not depend on the
/// order of `samples`.
pub fn ingest(spec: &GridSpec, samples: &[RawSample]) -> Result<IngestOutcome, GridError> {
    spec.validate()?;
    let mut acc: BTreeMap<GridCoord, BTreeMap<u32, Vec<f64>>> = BTreeMap::new();
    let (mut unpositioned, mut out_of_extent) = (0, 0);
    for s in samples {
        let Some(p) = s.position else {
            unpositioned += 1;
            continue;
        };
        match project(spec, p) {
            Some(c) => acc.entry(c).or_default().entry(s.pci).or_default().push(s.rsrp_dbm),
            None => out_of_extent += 1,
        }
    }
    let cells = acc
        .into_iter()
        .map(|(c, per_pci)| {
            let per_pci = per_pci
                .into_iter()
                .map(|(pci, mut values)| {
                    values.sort_by(f64::total_cmp);
                    let sum: f64 = values.iter().sum();
                    let agg = CellAggregate {
                        mean_rsrp_dbm: sum / values.len() as f64,
                        count: values.len() as u64,
                    };
                    (pci, agg)
                })
                .collect();
            (c, per_pci)
        })
        .collect();
    Ok(IngestOutcome {
        grid: CoverageGrid { spec: *spec, cells },
        unpositioned,
        out_of_extent,
    })
}

impl CoverageGrid {
    pub fn empty(spec: GridSpec) -> Self {
        Self {
            spec,
            cells: BTreeMap::new(),
        }
    }

    /// Build from explicit aggregates; rejects zero counts and out-of-extent coords.
    pub fn from_aggregates(
        spec: GridSpec,
        entries: impl IntoIterator<Item = (GridCoord, u32, CellAggregate)>,
    ) -> Result<Self, GridError> {
        spec.validate()?;
        let mut cells: BTreeMap<GridCoord, BTreeMap<u32, CellAggregate>> = BTreeMap::new();
        for (c, pci, agg) in entries {
            if !spec.contains(c) {
                return Err(GridError::Config(format!("element {c:?} outside grid")));
            }
            if agg.count == 0 {
                return Err(GridError::Config(format!("zero count at {c:?} pci {pci}")));
            }
            if cells.entry(c).or_default().insert(pci, agg).is_some() {
                return Err(GridError::Config(format!("duplicate entry at {c:?} pci {pci}")));
            }
        }
        Ok(Self { spec, cells })
    }

    pub fn populated_elements(&self) -> usize {
        self.cells.len()
    }

    pub fn total_count(&self) -> u64 {
        self.entries().map(|(_, _, a)| a.count).sum()
    }

    pub fn get(&self, c: GridCoord, pci: u32) -> Option<&CellAggregate> {
        self.cells.get(&c).and_then(|m| m.get(&pci))
    }

    /// Entries in (row, col, pci) order.
    pub fn entries(&self) -> impl Iterator<Item = (GridCoord, u32, &CellAggregate)> + '_ {
        self.cells
            .iter()
            .flat_map(|(c, m)| m.iter().map(move |(pci, a)| (*c, *pci, a)))
    }

    pub fn pcis(&self) -> Vec<u32> {
        let mut v: Vec<u32> = self.entries().map(|(_, p, _)| p).collect();
        v.sort_unstable();
        v.dedup();
        v
    }

    /// Count-weighted merge of two grids over the same spec.
    pub fn merge(&self, other: &CoverageGrid) -> Result<CoverageGrid, GridError> {
        if self.spec != other.spec {
            return Err(GridError::Config("cannot merge grids with different specs".into()));
        }
        let mut cells = self.cells.clone();
        for (c, pci, b) in other.entries() {
            let slot = cells.entry(c).or_default().entry(pci).or_insert(CellAggregate {
                mean_rsrp_dbm: 0.0,
                count: 0,
            });
            let n = slot.count + b.count;
            slot.mean_rsrp_dbm = (slot.mean_rsrp_dbm * slot.count as f64 + b.mean_rsrp_dbm * b.count as f64) / n as f64;
            slot.count = n;
        }
        Ok(CoverageGrid { spec: self.spec, cells })
    }
}

/// Elements where `pci` has at least one sample.
pub fn field_of(grid: &CoverageGrid, pci: u32) -> SparseField {
    grid.entries()
        .filter(|(_, p, _)| *p == pci)
        .map(|(c, _, a)| (c, a.mean_rsrp_dbm))
        .collect()
}

/// A value for every grid element, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct DenseField {
    pub spec: GridSpec,
    pub values: Vec<f64>,
}

impl DenseField {
    pub fn filled(spec: GridSpec, value: f64) -> Self {
        Self {
            values: vec![value; spec.len()],
            spec,
        }
    }

    pub fn from_fn(spec: GridSpec, mut f: impl FnMut(GridCoord) -> f64) -> Self {
        let values = spec.coords().map(&mut f).collect();
        Self { spec, values }
    }

    pub fn at(&self, c: GridCoord) -> f64 {
        self.values[self.spec.index(c)]
    }

    pub fn set(&mut self, c: GridCoord, v: f64) {
        let i = self.spec.index(c);
        self.values[i] = v;
    }
}
