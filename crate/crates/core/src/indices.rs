//! Per-cell coverage indicators, the coverage matrix and anomaly flags, all
//! computed from dense per-PCI fields over one grid.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::components;
use crate::grid::{DenseField, GridSpec, Meters};

/// Dense fields keyed by PCI.
pub type Fields = BTreeMap<u32, DenseField>;

pub const REPORT_VERSION: u32 = 1;

#[derive(Debug, thiserror::Error)]
pub enum IndicesError {
    #[error("no fields given")]
    Empty,
    #[error("field of pci {pci} is not defined on the common grid")]
    Inconsistent { pci: u32 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct IndexParams {
    /// Co-channel margin: a cell within `delta_db` of another counts as present.
    pub delta_db: f64,
    /// Serviceability threshold.
    pub t_serv_dbm: f64,
    /// Distance factor, relative to the principal radius, beyond which a
    /// fragment counts as overshooting.
    pub k_os: f64,
    /// Minimum fragment size in elements.
    pub m_abn: usize,
}

impl Default for IndexParams {
    fn default() -> Self {
        Self {
            delta_db: 6.0,
            t_serv_dbm: -110.0,
            k_os: 2.0,
            m_abn: 5,
        }
    }
}

/// Best server per element. `best_rsrp_dbm` is the strongest value of any cell
/// whether or not it is serviceable.
#[derive(Debug, Clone, PartialEq)]
pub struct ServiceMap {
    pub spec: GridSpec,
    pub t_serv_dbm: f64,
    pub best_server: Vec<Option<u32>>,
    pub best_rsrp_dbm: Vec<f64>,
    /// Runner-up among serviceable cells.
    pub second_rsrp_dbm: Vec<Option<f64>>,
}

impl ServiceMap {
    /// Elements dominated by `pci`.
    pub fn dominance(&self, pci: u32) -> impl Iterator<Item = usize> + '_ {
        (0..self.best_server.len()).filter(move |&i| self.best_server[i] == Some(pci))
    }
}

fn common_spec(fields: &Fields) -> Result<GridSpec, IndicesError> {
    let (_, first) = fields.iter().next().ok_or(IndicesError::Empty)?;
    for (&pci, f) in fields {
        if f.spec != first.spec || f.values.len() != first.spec.len() {
            return Err(IndicesError::Inconsistent { pci });
        }
    }
    Ok(first.spec)
}

/// Best and second-best serviceable cell per element; ties go to the lower PCI.
pub fn service_map(fields: &Fields, t_serv_dbm: f64) -> Result<ServiceMap, IndicesError> {
    let spec = common_spec(fields)?;
    let n = spec.len();
    let mut best_server = vec![None; n];
    let mut best_rsrp = vec![f64::NEG_INFINITY; n];
    let mut best_serv = vec![f64::NEG_INFINITY; n];
    let mut second = vec![None; n];
    // ascending PCI order with strict comparisons keeps the lower PCI on ties
    for (&pci, f) in fields {
        for i in 0..n {
            let v = f.values[i];
            if v > best_rsrp[i] {
                best_rsrp[i] = v;
            }
            if v < t_serv_dbm {
                continue;
            }
            if best_server[i].is_none() || v > best_serv[i] {
                if best_server[i].is_some() {
                    second[i] = Some(best_serv[i]);
                }
                best_server[i] = Some(pci);
                best_serv[i] = v;
            } else if second[i].map_or(true, |s| v > s) {
                second[i] = Some(v);
            }
        }
    }
    Ok(ServiceMap {
        spec,
        t_serv_dbm,
        best_server,
        best_rsrp_dbm: best_rsrp,
        second_rsrp_dbm: second,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CellIndices {
    pub ci: f64,
    pub isi: f64,
    pub iax: f64,
    pub oi: f64,
    pub cquali: f64,
}

fn ratio(num: usize, den: usize) -> f64 {
    if den == 0 {
        0.0
    } else {
        num as f64 / den as f64
    }
}

pub fn compute_indices(
    fields: &Fields,
    smap: &ServiceMap,
    delta_db: f64,
    t_serv_dbm: f64,
) -> Result<BTreeMap<u32, CellIndices>, IndicesError> {
    let spec = common_spec(fields)?;
    if spec != smap.spec {
        return Err(IndicesError::Inconsistent {
            pci: *fields.keys().next().expect("non-empty"),
        });
    }
    let n = spec.len();
    let mut out = BTreeMap::new();
    for (&pci, f) in fields {
        let others = || fields.iter().filter(move |(&p, _)| p != pci).map(|(_, g)| g);
        let (mut s, mut overlap, mut d, mut affected, mut foreign, mut source) = (0, 0, 0, 0, 0, 0);
        for i in 0..n {
            let v = f.values[i];
            if v >= t_serv_dbm {
                s += 1;
                if others().any(|g| g.values[i] >= t_serv_dbm && g.values[i] >= v - delta_db) {
                    overlap += 1;
                }
            }
            match smap.best_server[i] {
                Some(b) if b == pci => {
                    d += 1;
                    if others().any(|g| g.values[i] >= v - delta_db) {
                        affected += 1;
                    }
                }
                Some(_) => {
                    foreign += 1;
                    if v >= smap.best_rsrp_dbm[i] - delta_db {
                        source += 1;
                    }
                }
                None => {}
            }
        }
        let ci = ratio(s, n);
        let (isi, iax) = (ratio(source, foreign), ratio(affected, d));
        out.insert(
            pci,
            CellIndices {
                ci,
                isi,
                iax,
                oi: ratio(overlap, s),
                cquali: ci * (1.0 - (iax + isi) / 2.0),
            },
        );
    }
    Ok(out)
}

/// Victim-row matrix: `m[i][j]` is the fraction of cell i's dominance area
/// where cell j is within the margin. A cell that dominates nowhere (it loses
/// every tie, say) is measured over its serviceable area instead. Rows and
/// columns follow `pcis`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CoverageMatrix {
    pub pcis: Vec<u32>,
    pub m: Vec<Vec<f64>>,
}

impl CoverageMatrix {
    pub fn get(&self, victim: u32, interferer: u32) -> Option<f64> {
        let i = self.pcis.binary_search(&victim).ok()?;
        let j = self.pcis.binary_search(&interferer).ok()?;
        Some(self.m[i][j])
    }
}

pub fn coverage_matrix(fields: &Fields, smap: &ServiceMap, delta_db: f64) -> Result<CoverageMatrix, IndicesError> {
    common_spec(fields)?;
    let pcis: Vec<u32> = fields.keys().copied().collect();
    let k = pcis.len();
    let mut counts = vec![vec![0usize; k]; k];
    let mut dom = vec![0usize; k];
    for (i, &pi) in pcis.iter().enumerate() {
        let fi = &fields[&pi];
        let mut area: Vec<usize> = smap.dominance(pi).collect();
        if area.is_empty() {
            area = (0..fi.values.len())
                .filter(|&e| fi.values[e] >= smap.t_serv_dbm)
                .collect();
        }
        for e in area {
            dom[i] += 1;
            for (j, &pj) in pcis.iter().enumerate() {
                if j != i && fields[&pj].values[e] >= fi.values[e] - delta_db {
                    counts[i][j] += 1;
                }
            }
        }
    }
    let m = (0..k)
        .map(|i| {
            (0..k)
                .map(|j| if i == j { 1.0 } else { ratio(counts[i][j], dom[i]) })
                .collect()
        })
        .collect();
    Ok(CoverageMatrix { pcis, m })
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct AnomalyFlags {
    pub overshooter: bool,
    pub fragmented: bool,
    pub score: f64,
    /// Inferred cell center (strong-signal centroid of the principal component).
    pub center: Option<Meters>,
    pub principal_radius_m: f64,
}

/// Linear-interpolated percentile of an ascending slice.
fn percentile(sorted: &[f64], p: f64) -> f64 {
    let pos = p * (sorted.len() - 1) as f64;
    let (lo, hi) = (pos.floor() as usize, pos.ceil() as usize);
    sorted[lo] + (sorted[hi] - sorted[lo]) * (pos - lo as f64)
}

fn centroid(spec: &GridSpec, elems: impl IntoIterator<Item = usize>) -> Meters {
    let (mut e, mut n, mut k) = (0.0, 0.0, 0usize);
    for i in elems {
        let m = spec.center_m(spec.coord(i));
        e += m.east;
        n += m.north;
        k += 1;
    }
    Meters::new(e / k as f64, n / k as f64)
}

fn flags_for(field: &DenseField, smap: &ServiceMap, pci: u32, params: &IndexParams) -> AnomalyFlags {
    let spec = &field.spec;
    let mask: Vec<bool> = field.values.iter().map(|v| *v >= params.t_serv_dbm).collect();
    let comps = components::label(spec, &mask, 1);
    let Some(principal) = comps
        .iter()
        .enumerate()
        .max_by(|a, b| a.1.len().cmp(&b.1.len()).then(b.0.cmp(&a.0)))
        .map(|(k, _)| k)
    else {
        return AnomalyFlags::default();
    };
    let main = &comps[principal];
    let mut strongest = main.clone();
    strongest.sort_by(|&a, &b| field.values[b].total_cmp(&field.values[a]).then(a.cmp(&b)));
    strongest.truncate(main.len().div_ceil(10));
    let center = centroid(spec, strongest);
    let dist = |i: usize| spec.center_m(spec.coord(i)).distance(center);
    let mut dists: Vec<f64> = main.iter().map(|&i| dist(i)).collect();
    dists.sort_by(f64::total_cmp);
    let radius = percentile(&dists, 0.75);
    let reach = params.k_os * radius;

    let served: usize = comps.iter().map(Vec::len).sum();
    let (mut fragmented, mut overshooter, mut far_area) = (false, false, 0usize);
    for (k, comp) in comps.iter().enumerate() {
        if k == principal || comp.len() < params.m_abn {
            continue;
        }
        fragmented = true;
        if centroid(spec, comp.iter().copied()).distance(center) > reach {
            overshooter = true;
            far_area += comp.len();
        }
    }
    let (mut dom, mut dom_far) = (0usize, 0usize);
    for e in smap.dominance(pci) {
        dom += 1;
        if dist(e) > reach {
            dom_far += 1;
        }
    }
    AnomalyFlags {
        overshooter,
        fragmented,
        score: 0.5 * ratio(far_area, served) + 0.5 * ratio(dom_far, dom),
        center: Some(center),
        principal_radius_m: radius,
    }
}

/// Fragmentation and overshoot flags per cell, from 8-connected components of
/// each cell's serviceable area.
pub fn detect_anomalies(
    fields: &Fields,
    smap: &ServiceMap,
    params: &IndexParams,
) -> Result<BTreeMap<u32, AnomalyFlags>, IndicesError> {
    let spec = common_spec(fields)?;
    if spec != smap.spec {
        return Err(IndicesError::Inconsistent {
            pci: *fields.keys().next().expect("non-empty"),
        });
    }
    Ok(fields
        .iter()
        .map(|(&pci, f)| (pci, flags_for(f, smap, pci, params)))
        .collect())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellReport {
    pub pci: u32,
    pub ci: f64,
    pub isi: f64,
    pub iax: f64,
    pub oi: f64,
    pub cquali: f64,
    pub overshooter: bool,
    pub fragmented: bool,
    pub score: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DiagnosisReport {
    pub version: u32,
    pub params: IndexParams,
    /// Ascending PCI order.
    pub cells: Vec<CellReport>,
    /// Coverage matrix rows and columns in the order of `cells`.
    pub matrix: Vec<Vec<f64>>,
    /// PCIs by descending anomaly score, then ascending CQualI, then PCI.
    pub ranking: Vec<u32>,
}

pub fn build_report(
    indices: &BTreeMap<u32, CellIndices>,
    matrix: &CoverageMatrix,
    flags: &BTreeMap<u32, AnomalyFlags>,
    params: &IndexParams,
) -> DiagnosisReport {
    let cells: Vec<CellReport> = indices
        .iter()
        .map(|(&pci, ix)| {
            let f = flags.get(&pci).copied().unwrap_or_default();
            CellReport {
                pci,
                ci: ix.ci,
                isi: ix.isi,
                iax: ix.iax,
                oi: ix.oi,
                cquali: ix.cquali,
                overshooter: f.overshooter,
                fragmented: f.fragmented,
                score: f.score,
            }
        })
        .collect();
    let mut order: Vec<&CellReport> = cells.iter().collect();
    order.sort_by(|a, b| {
        b.score
            .total_cmp(&a.score)
            .then(a.cquali.total_cmp(&b.cquali))
            .then(a.pci.cmp(&b.pci))
    });
    let ranking = order.iter().map(|c| c.pci).collect();
    let matrix = cells
        .iter()
        .map(|a| cells.iter().map(|b| matrix.get(a.pci, b.pci).unwrap_or(0.0)).collect())
        .collect();
    DiagnosisReport {
        version: REPORT_VERSION,
        params: params.clone(),
        cells,
        matrix,
        ranking,
    }
}

/// Everything above in one call.
pub fn diagnose(fields: &Fields, params: &IndexParams) -> Result<DiagnosisReport, IndicesError> {
    let smap = service_map(fields, params.t_serv_dbm)?;
    let ix = compute_indices(fields, &smap, params.delta_db, params.t_serv_dbm)?;
    let m = coverage_matrix(fields, &smap, params.delta_db)?;
    let flags = detect_anomalies(fields, &smap, params)?;
    Ok(build_report(&ix, &m, &flags, params))
}

impl DiagnosisReport {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes") + "\n"
    }

    pub fn cell(&self, pci: u32) -> Option<&CellReport> {
        self.cells.iter().find(|c| c.pci == pci)
    }
}
