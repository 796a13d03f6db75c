//! Artifact writers: field CSV, PGM heatmaps and the GeoJSON best-server map.

use std::fmt::Write as _;

use arcade_core::grid::{DenseField, GridCoord, GridSpec, Meters};
use arcade_core::indices::ServiceMap;
use serde_json::{json, Value};

/// Heatmap scale endpoints.
pub const PGM_LOW_DBM: f64 = -140.0;
pub const PGM_HIGH_DBM: f64 = -40.0;

pub fn field_csv(field: &DenseField) -> String {
    let spec = &field.spec;
    let mut s = String::from("row,col,lat,lon,rsrp_dbm\n");
    for c in spec.coords() {
        let p = spec.center_of(c);
        writeln!(s, "{},{},{},{},{}", c.row, c.col, p.lat, p.lon, field.at(c)).unwrap();
    }
    s
}

/// Gray level of one RSRP value: linear from [-140, -40] dBm to [0, 255].
pub fn gray_level(dbm: f64) -> u8 {
    let t = ((dbm - PGM_LOW_DBM) / (PGM_HIGH_DBM - PGM_LOW_DBM)).clamp(0.0, 1.0);
    (t * 255.0).round() as u8
}

/// ASCII PGM (P2). Row 0 of the grid is the southernmost, so image rows run
/// from the last grid row down to the first to keep north up.
pub fn field_pgm(field: &DenseField) -> String {
    let spec = &field.spec;
    let mut s = format!("P2\n{} {}\n255\n", spec.cols, spec.rows);
    for row in (0..spec.rows).rev() {
        let line: Vec<String> = (0..spec.cols)
            .map(|col| gray_level(field.at(GridCoord::new(row, col))).to_string())
            .collect();
        s.push_str(&line.join(" "));
        s.push('\n');
    }
    s
}

fn element_ring(spec: &GridSpec, c: GridCoord) -> Value {
    let (e0, n0) = (c.col as f64 * spec.cell_size_m, c.row as f64 * spec.cell_size_m);
    let (e1, n1) = (e0 + spec.cell_size_m, n0 + spec.cell_size_m);
    let pts: Vec<Value> = [(e0, n0), (e1, n0), (e1, n1), (e0, n1), (e0, n0)]
        .into_iter()
        .map(|(e, n)| {
            let g = spec.to_geo(Meters::new(e, n));
            json!([g.lon, g.lat])
        })
        .collect();
    json!([pts])
}

/// One polygon per grid element with `best_pci` (null when nothing is
/// serviceable) and `best_rsrp`.
pub fn best_server_geojson(smap: &ServiceMap) -> Value {
    let spec = &smap.spec;
    let features: Vec<Value> = spec
        .coords()
        .map(|c| {
            let i = spec.index(c);
            let best = smap.best_rsrp_dbm[i];
            json!({
                "type": "Feature",
                "geometry": {"type": "Polygon", "coordinates": element_ring(spec, c)},
                "properties": {
                    "row": c.row,
                    "col": c.col,
                    "best_pci": smap.best_server[i],
                    "best_rsrp": if best.is_finite() { json!(best) } else { Value::Null },
                },
            })
        })
        .collect();
    json!({"type": "FeatureCollection", "features": features})
}
