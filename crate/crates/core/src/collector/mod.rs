//! RAN-side agent and central collector: per-UE consolidation, anonymization,
//! framed transfer and geolocation of MR records into the grid.

mod session;
pub mod wire;

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::grid::{RawSample, Source};
use crate::nn::Locator;
use crate::scalar::Scalar;

pub use session::{
    agent_run, load_store_dir, serve_session, AgentTranscript, Collector, Link, MemoryLink, RecordStore,
    SessionTranscript, StoreOutcome, TcpLink,
};
pub use wire::{decode, encode, Message, MessageKind, WireError, WireMessage};

#[derive(Debug, thiserror::Error)]
pub enum CollectorError {
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("invalid record: {0}")]
    Record(String),
    #[error(transparent)]
    Wire(#[from] WireError),
    #[error("protocol violation: {0}")]
    Protocol(String),
    #[error("batch {seq} not acknowledged after {attempts} attempts")]
    Unacknowledged { seq: u64, attempts: usize },
    #[error("store i/o: {0}")]
    Io(#[from] std::io::Error),
}

/// One raw MR event as seen by the agent.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MrEvent {
    pub ue_id: String,
    pub pci: u32,
    pub rsrp_dbm: f64,
    pub timestamp_ms: i64,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AgentConfig {
    pub agent_id: String,
    pub window_ms: i64,
    /// Never leaves the agent.
    pub salt: Vec<u8>,
    pub max_batch: usize,
    pub ack_timeout_ms: u64,
    /// Resends of an unacknowledged batch before the session fails.
    pub max_retries: usize,
}

impl AgentConfig {
    pub fn new(agent_id: impl Into<String>, salt: impl Into<Vec<u8>>) -> Self {
        Self {
            agent_id: agent_id.into(),
            window_ms: 5000,
            salt: salt.into(),
            max_batch: 50,
            ack_timeout_ms: 2000,
            max_retries: 3,
        }
    }

    pub fn ack_timeout(&self) -> std::time::Duration {
        std::time::Duration::from_millis(self.ack_timeout_ms)
    }

    pub fn validate(&self) -> Result<(), CollectorError> {
        if self.window_ms <= 0 {
            return Err(CollectorError::Config("window_ms must be > 0".into()));
        }
        if self.max_batch == 0 {
            return Err(CollectorError::Config("max_batch must be >= 1".into()));
        }
        validate_agent_id(&self.agent_id).map_err(CollectorError::Config)
    }
}

/// Agent ids double as store file names, so they are kept to a safe alphabet.
pub fn validate_agent_id(id: &str) -> Result<(), String> {
    let ok = !id.is_empty()
        && id.len() <= 64
        && id
            .chars()
            .all(|c| c.is_ascii_alphanumeric() || c == '-' || c == '_' || c == '.')
        && !id.starts_with('.');
    if ok {
        Ok(())
    } else {
        Err(format!(
            "agent id {id:?} must be 1-64 chars of [A-Za-z0-9._-], not starting with '.'"
        ))
    }
}

/// Lowercase hex of the first 16 bytes of SHA-256(salt || ue_id).
pub fn anonymize(ue_id: &str, salt: &[u8]) -> String {
    let mut h = Sha256::new();
    h.update(salt);
    h.update(ue_id.as_bytes());
    hex::encode(&h.finalize()[..16])
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Reading {
    pub pci: u32,
    pub mean_rsrp_dbm: f64,
    pub count: u64,
}

/// One consolidated fingerprint per UE per window. Readings are non-empty with
/// distinct PCIs, kept in ascending PCI order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RecordFields")]
pub struct ConsolidatedRecord {
    ue_token: String,
    window_start_ms: i64,
    source: Source,
    readings: Vec<Reading>,
}

#[derive(Deserialize)]
struct RecordFields {
    ue_token: String,
    window_start_ms: i64,
    source: Source,
    readings: Vec<Reading>,
}

impl TryFrom<RecordFields> for ConsolidatedRecord {
    type Error = CollectorError;

    fn try_from(f: RecordFields) -> Result<Self, Self::Error> {
        ConsolidatedRecord::new(f.ue_token, f.window_start_ms, f.source, f.readings)
    }
}

impl ConsolidatedRecord {
    pub fn new(
        ue_token: String,
        window_start_ms: i64,
        source: Source,
        mut readings: Vec<Reading>,
    ) -> Result<Self, CollectorError> {
        if readings.is_empty() {
            return Err(CollectorError::Record("record has no readings".into()));
        }
        readings.sort_by_key(|r| r.pci);
        if readings.windows(2).any(|w| w[0].pci == w[1].pci) {
            return Err(CollectorError::Record("duplicate pci within a record".into()));
        }
        if let Some(r) = readings.iter().find(|r| r.count == 0 || !r.mean_rsrp_dbm.is_finite()) {
            return Err(CollectorError::Record(format!(
                "pci {}: empty or non-finite reading",
                r.pci
            )));
        }
        Ok(Self {
            ue_token,
            window_start_ms,
            source,
            readings,
        })
    }

    pub fn ue_token(&self) -> &str {
        &self.ue_token
    }

    pub fn window_start_ms(&self) -> i64 {
        self.window_start_ms
    }

    pub fn source(&self) -> Source {
        self.source
    }

    pub fn readings(&self) -> &[Reading] {
        &self.readings
    }

    /// Number of raw events folded into this record.
    pub fn event_count(&self) -> u64 {
        self.readings.iter().map(|r| r.count).sum()
    }
}

/// Group events into tumbling windows aligned to multiples of `window_ms`, one
/// record per (UE, window), ordered by window then token. Input order does not
/// matter.
pub fn consolidate(events: &[MrEvent], cfg: &AgentConfig) -> Result<Vec<ConsolidatedRecord>, CollectorError> {
    cfg.validate()?;
    let mut sorted: Vec<&MrEvent> = events.iter().collect();
    sorted.sort_by(|a, b| {
        (a.timestamp_ms, &a.ue_id, a.pci)
            .cmp(&(b.timestamp_ms, &b.ue_id, b.pci))
            .then(a.rsrp_dbm.total_cmp(&b.rsrp_dbm))
    });
    let mut groups: BTreeMap<(i64, &str), BTreeMap<u32, (f64, u64)>> = BTreeMap::new();
    for e in sorted {
        let window = e.timestamp_ms.div_euclid(cfg.window_ms) * cfg.window_ms;
        let acc = groups.entry((window, &e.ue_id)).or_default().entry(e.pci).or_default();
        acc.0 += e.rsrp_dbm;
        acc.1 += 1;
    }
    let mut out: Vec<ConsolidatedRecord> = groups
        .into_iter()
        .map(|((window, ue), cells)| {
            let readings = cells
                .into_iter()
                .map(|(pci, (sum, count))| Reading {
                    pci,
                    mean_rsrp_dbm: sum / count as f64,
                    count,
                })
                .collect();
            ConsolidatedRecord::new(anonymize(ue, &cfg.salt), window, Source::Mr, readings)
        })
        .collect::<Result<_, _>>()?;
    out.sort_by(|a, b| (a.window_start_ms, &a.ue_token).cmp(&(b.window_start_ms, &b.ue_token)));
    Ok(out)
}

/// Outcome of [`geolocate_batch`].
#[derive(Debug, Clone, PartialEq)]
pub struct Geolocated {
    pub samples: Vec<RawSample>,
    /// Readings whose PCI is not part of the locator's cluster.
    pub dropped_readings: usize,
}

/// Place each record at the locator's estimate and emit one positioned MR
/// sample per in-cluster reading.
pub fn geolocate_batch<T: Scalar>(
    records: &[ConsolidatedRecord],
    locator: &Locator<T>,
) -> Result<Geolocated, crate::nn::NnError> {
    let mut samples = Vec::new();
    let mut dropped = 0;
    for r in records {
        let readings: Vec<(u32, f64)> = r.readings.iter().map(|x| (x.pci, x.mean_rsrp_dbm)).collect();
        let fp = locator.fingerprint(&readings);
        dropped += fp.dropped;
        let position = locator.geolocate(&fp.values)?;
        for x in &r.readings {
            if locator.pcis.binary_search(&x.pci).is_ok() {
                samples.push(RawSample {
                    pci: x.pci,
                    rsrp_dbm: x.mean_rsrp_dbm,
                    position: Some(position),
                    timestamp_ms: r.window_start_ms,
                    source: Source::Mr,
                    ue_token: r.ue_token.clone(),
                });
            }
        }
    }
    Ok(Geolocated {
        samples,
        dropped_readings: dropped,
    })
}

/// Flatten simulator MR draws into agent events.
pub fn events_from_samples(samples: &[RawSample]) -> Vec<MrEvent> {
    samples
        .iter()
        .map(|s| MrEvent {
            ue_id: s.ue_token.clone(),
            pci: s.pci,
            rsrp_dbm: s.rsrp_dbm,
            timestamp_ms: s.timestamp_ms,
        })
        .collect()
}
