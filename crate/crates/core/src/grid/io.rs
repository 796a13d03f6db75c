use std::io::{Read, Write};

use serde::{Deserialize, Serialize};

use super::{CellAggregate, CoverageGrid, GeoPoint, GridCoord, GridError, GridSpec, RawSample, Source};

pub const SAMPLES_HEADER: [&str; 7] = ["pci", "rsrp_dbm", "lat", "lon", "timestamp_ms", "source", "ue_token"];

fn parse_err(line: u64, column: usize, reason: impl Into<String>) -> GridError {
    GridError::Parse {
        line,
        column,
        reason: reason.into(),
    }
}

fn csv_err(e: csv::Error) -> GridError {
    let line = e.position().map(|p| p.line()).unwrap_or(0);
    match e.into_kind() {
        csv::ErrorKind::Io(io) => GridError::Io(io),
        other => parse_err(line, 0, format!("{other:?}")),
    }
}

/// Read a samples CSV. Errors carry the 1-based line and column.
pub fn read_samples_csv<R: Read>(reader: R) -> Result<Vec<RawSample>, GridError> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(false)
        .flexible(true)
        .from_reader(reader);
    let mut records = rdr.records();
    match records.next() {
        None => return Err(parse_err(1, 1, "missing header")),
        Some(h) => {
            let h = h.map_err(csv_err)?;
            if h.iter().ne(SAMPLES_HEADER.iter().copied()) {
                return Err(parse_err(
                    1,
                    1,
                    format!("expected header {:?}", SAMPLES_HEADER.join(",")),
                ));
            }
        }
    }
    let mut out = Vec::new();
    for rec in records {
        let rec = rec.map_err(csv_err)?;
        let line = rec.position().map(|p| p.line()).unwrap_or(0);
        if rec.len() != SAMPLES_HEADER.len() {
            return Err(parse_err(
                line,
                rec.len().min(SAMPLES_HEADER.len()) + 1,
                format!("expected {} fields, found {}", SAMPLES_HEADER.len(), rec.len()),
            ));
        }
        let field = |i: usize| &rec[i];
        let pci: u32 = field(0).parse().map_err(|e| parse_err(line, 1, format!("pci: {e}")))?;
        let rsrp_dbm: f64 = field(1)
            .parse()
            .map_err(|e| parse_err(line, 2, format!("rsrp_dbm: {e}")))?;
        let position = match (field(2).is_empty(), field(3).is_empty()) {
            (true, true) => None,
            (false, false) => {
                let lat: f64 = field(2).parse().map_err(|e| parse_err(line, 3, format!("lat: {e}")))?;
                let lon: f64 = field(3).parse().map_err(|e| parse_err(line, 4, format!("lon: {e}")))?;
                Some(GeoPoint::new(lat, lon))
            }
            (lat_empty, _) => {
                return Err(parse_err(
                    line,
                    if lat_empty { 3 } else { 4 },
                    "lat and lon must both be present or both empty",
                ))
            }
        };
        let timestamp_ms: i64 = field(4)
            .parse()
            .map_err(|e| parse_err(line, 5, format!("timestamp_ms: {e}")))?;
        let source: Source = field(5).parse().map_err(|e: String| parse_err(line, 6, e))?;
        let sample = RawSample {
            pci,
            rsrp_dbm,
            position,
            timestamp_ms,
            source,
            ue_token: field(6).to_string(),
        };
        sample.validate().map_err(|reason| {
            let column = if reason.starts_with("rsrp") { 2 } else { 3 };
            parse_err(line, column, reason)
        })?;
        out.push(sample);
    }
    Ok(out)
}

/// Write samples in canonical form (LF endings, shortest round-trip decimals).
pub fn write_samples_csv<W: Write>(writer: W, samples: &[RawSample]) -> Result<(), GridError> {
    let mut w = csv::WriterBuilder::new()
        .terminator(csv::Terminator::Any(b'\n'))
        .from_writer(writer);
    w.write_record(SAMPLES_HEADER).map_err(csv_err)?;
    for s in samples {
        let (lat, lon) = match s.position {
            Some(p) => (p.lat.to_string(), p.lon.to_string()),
            None => (String::new(), String::new()),
        };
        w.write_record([
            s.pci.to_string(),
            s.rsrp_dbm.to_string(),
            lat,
            lon,
            s.timestamp_ms.to_string(),
            s.source.as_str().to_string(),
            s.ue_token.clone(),
        ])
        .map_err(csv_err)?;
    }
    w.flush()?;
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridElementJson {
    pub row: usize,
    pub col: usize,
    pub pci: u32,
    pub mean_rsrp_dbm: f64,
    pub count: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridJson {
    pub spec: GridSpec,
    pub elements: Vec<GridElementJson>,
}

impl From<&CoverageGrid> for GridJson {
    fn from(g: &CoverageGrid) -> Self {
        GridJson {
            spec: g.spec,
            elements: g
                .entries()
                .map(|(c, pci, a)| GridElementJson {
                    row: c.row,
                    col: c.col,
                    pci,
                    mean_rsrp_dbm: a.mean_rsrp_dbm,
                    count: a.count,
                })
                .collect(),
        }
    }
}

pub fn write_grid_json<W: Write>(mut writer: W, grid: &CoverageGrid) -> Result<(), GridError> {
    serde_json::to_writer_pretty(&mut writer, &GridJson::from(grid))?;
    writer.write_all(b"\n")?;
    Ok(())
}

pub fn read_grid_json<R: Read>(reader: R) -> Result<CoverageGrid, GridError> {
    let doc: GridJson = serde_json::from_reader(reader).map_err(|e| {
        let (line, column) = (e.line() as u64, e.column());
        match e.classify() {
            serde_json::error::Category::Io => GridError::Json(e),
            _ => parse_err(line, column, e.to_string()),
        }
    })?;
    CoverageGrid::from_aggregates(
        doc.spec,
        doc.elements.into_iter().map(|e| {
            (
                GridCoord::new(e.row, e.col),
                e.pci,
                CellAggregate {
                    mean_rsrp_dbm: e.mean_rsrp_dbm,
                    count: e.count,
                },
            )
        }),
    )
}

#[cfg(test)]
mod tests {
    use super::super::ingest;
    use super::*;
    use proptest::prelude::*;

    const HEADER: &str = "pci,rsrp_dbm,lat,lon,timestamp_ms,source,ue_token\n";

    fn parse(body: &str) -> Result<Vec<RawSample>, GridError> {
        read_samples_csv(format!("{HEADER}{body}").as_bytes())
    }

    #[test]
    fn mr_row_without_position() {
        let s = parse("12,-95.5,,,1000,MR,ue-1\n").unwrap();
        assert_eq!(s[0].position, None);
        assert_eq!(s[0].source, Source::Mr);
    }

    #[test]
    fn out_of_range_rsrp_names_line() {
        let err = parse("1,-80,40.0,-3.0,0,MDT,\n1,-10,40.0,-3.0,0,MDT,\n").unwrap_err();
        match err {
            GridError::Parse { line, column, .. } => {
                assert_eq!(line, 3);
                assert_eq!(column, 2);
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn malformed_rows_rejected() {
        assert!(matches!(
            parse("x,-80,,,0,MR,\n"),
            Err(GridError::Parse { line: 2, column: 1, .. })
        ));
        assert!(matches!(
            parse("1,-80,40.0,,0,MDT,\n"),
            Err(GridError::Parse { line: 2, column: 4, .. })
        ));
        assert!(matches!(
            parse("1,-80,,,0,GPS,\n"),
            Err(GridError::Parse { line: 2, column: 6, .. })
        ));
        assert!(matches!(
            parse("1,-80,,,0,MDT,\n"),
            Err(GridError::Parse { line: 2, .. })
        ));
        assert!(matches!(parse("1,-80,,,0\n"), Err(GridError::Parse { line: 2, .. })));
        assert!(read_samples_csv("pci,rsrp\n".as_bytes()).is_err());
    }

    #[test]
    fn header_only_is_empty() {
        assert!(parse("").unwrap().is_empty());
    }

    #[test]
    fn grid_json_round_trip() {
        let spec = GridSpec::new(GeoPoint::new(10.0, 20.0), 25.0, 4, 5).unwrap();
        let samples: Vec<RawSample> = (0..20)
            .map(|i| RawSample {
                pci: (i % 3) as u32,
                rsrp_dbm: -70.0 - i as f64 * 1.3,
                position: Some(spec.center_of(GridCoord::new(i % 4, i % 5))),
                timestamp_ms: i as i64,
                source: Source::Mdt,
                ue_token: String::new(),
            })
            .collect();
        let grid = ingest(&spec, &samples).unwrap().grid;
        let mut buf = Vec::new();
        write_grid_json(&mut buf, &grid).unwrap();
        let back = read_grid_json(buf.as_slice()).unwrap();
        assert_eq!(back, grid);
        let mut again = Vec::new();
        write_grid_json(&mut again, &back).unwrap();
        assert_eq!(buf, again);
    }

    #[test]
    fn grid_json_rejects_zero_count() {
        let doc = r#"{"spec":{"origin":{"lat":0,"lon":0},"cell_size_m":50,"rows":2,"cols":2},
            "elements":[{"row":0,"col":0,"pci":1,"mean_rsrp_dbm":-80,"count":0}]}"#;
        assert!(read_grid_json(doc.as_bytes()).is_err());
    }

    fn arb_sample() -> impl Strategy<Value = RawSample> {
        (
            0u32..1000,
            -160.0f64..=-20.0,
            prop::option::of((-80.0f64..80.0, -179.0f64..179.0)),
            any::<i64>(),
            "[a-z0-9,\" -]{0,12}",
            any::<bool>(),
        )
            .prop_map(|(pci, rsrp, pos, ts, token, dt)| RawSample {
                pci,
                rsrp_dbm: rsrp,
                position: pos.map(|(lat, lon)| GeoPoint::new(lat, lon)),
                timestamp_ms: ts,
                source: match (pos.is_some(), dt) {
                    (false, _) => Source::Mr,
                    (true, true) => Source::Dt,
                    (true, false) => Source::Mdt,
                },
                ue_token: token,
            })
    }

    proptest! {
        #[test]
        fn samples_csv_canonical_round_trip(samples in prop::collection::vec(arb_sample(), 0..100)) {
            let mut buf = Vec::new();
            write_samples_csv(&mut buf, &samples).unwrap();
            let back = read_samples_csv(buf.as_slice()).unwrap();
            prop_assert_eq!(&back, &samples);
            let mut again = Vec::new();
            write_samples_csv(&mut again, &back).unwrap();
            prop_assert_eq!(buf, again);
        }

        #[test]
        fn ingest_is_order_independent(
            samples in prop::collection::vec((0usize..4, 0usize..4, 0u32..3, -140.0f64..-40.0), 0..60),
            seed in any::<u64>(),
        ) {
            let spec = GridSpec::new(GeoPoint::new(0.0, 0.0), 50.0, 4, 4).unwrap();
            let raw: Vec<RawSample> = samples.iter().map(|&(r, c, pci, v)| RawSample {
                pci, rsrp_dbm: v, position: Some(spec.center_of(GridCoord::new(r, c))),
                timestamp_ms: 0, source: Source::Synth, ue_token: String::new(),
            }).collect();
            let mut shuffled = raw.clone();
            // deterministic Fisher-Yates driven by an LCG
            let mut state = seed | 1;
            for i in (1..shuffled.len()).rev() {
                state = state.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
                let j = (state >> 33) as usize % (i + 1);
                shuffled.swap(i, j);
            }
            let a = ingest(&spec, &raw).unwrap().grid;
            let b = ingest(&spec, &shuffled).unwrap().grid;
            prop_assert_eq!(a.total_count(), raw.len() as u64);
            prop_assert_eq!(a, b);
        }
    }
}
