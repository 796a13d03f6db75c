//! Agent and collector state machines over a frame [`Link`], plus the
//! deduplicating record store.

use std::collections::{BTreeMap, HashSet};
use std::fs::OpenOptions;
use std::io::{Read, Write};
use std::net::{SocketAddr, TcpListener, TcpStream, ToSocketAddrs};
use std::path::{Path, PathBuf};
use std::sync::mpsc::{channel, Receiver, RecvTimeoutError, Sender};
use std::sync::{Arc, Mutex};
use std::time::Duration;

use super::wire::{decode_prefix, encode, Message, WireError, WireMessage};
use super::{consolidate, validate_agent_id, AgentConfig, CollectorError, ConsolidatedRecord, MrEvent};

/// Ordered, reliable frame transport.
pub trait Link {
    fn send(&mut self, msg: &WireMessage) -> Result<(), WireError>;
    /// Next frame; [`WireError::TimedOut`] if none arrives within the link's
    /// receive timeout.
    fn recv(&mut self) -> Result<WireMessage, WireError>;
}

pub struct TcpLink {
    stream: TcpStream,
    buf: Vec<u8>,
}

impl TcpLink {
    pub fn new(stream: TcpStream, recv_timeout: Option<Duration>) -> Result<Self, WireError> {
        stream.set_read_timeout(recv_timeout)?;
        stream.set_nodelay(true)?;
        Ok(Self {
            stream,
            buf: Vec::new(),
        })
    }

    pub fn connect(addr: impl ToSocketAddrs, recv_timeout: Option<Duration>) -> Result<Self, WireError> {
        Self::new(TcpStream::connect(addr)?, recv_timeout)
    }
}

impl Link for TcpLink {
    fn send(&mut self, msg: &WireMessage) -> Result<(), WireError> {
        self.stream.write_all(&encode(msg)?)?;
        Ok(())
    }

    fn recv(&mut self) -> Result<WireMessage, WireError> {
        let mut chunk = [0u8; 8192];
        loop {
            // bytes stay buffered across timeouts, so a slow frame is not lost
            if let Some((msg, used)) = decode_prefix(&self.buf)? {
                self.buf.drain(..used);
                return Ok(msg);
            }
            match self.stream.read(&mut chunk) {
                Ok(0) if self.buf.is_empty() => return Err(WireError::Closed),
                Ok(0) => {
                    return Err(WireError::Truncated {
                        needed: super::wire::HEADER_LEN.max(self.buf.len() + 1),
                        got: self.buf.len(),
                    })
                }
                Ok(n) => self.buf.extend_from_slice(&chunk[..n]),
                Err(e) if matches!(e.kind(), std::io::ErrorKind::WouldBlock | std::io::ErrorKind::TimedOut) => {
                    return Err(WireError::TimedOut)
                }
                Err(e) if e.kind() == std::io::ErrorKind::Interrupted => {}
                Err(e) => return Err(e.into()),
            }
        }
    }
}

/// In-process link; frames still go through encode/decode.
pub struct MemoryLink {
    tx: Sender<Vec<u8>>,
    rx: Receiver<Vec<u8>>,
    timeout: Duration,
}

impl MemoryLink {
    pub fn pair(timeout: Duration) -> (MemoryLink, MemoryLink) {
        let (a_tx, b_rx) = channel();
        let (b_tx, a_rx) = channel();
        (
            MemoryLink {
                tx: a_tx,
                rx: a_rx,
                timeout,
            },
            MemoryLink {
                tx: b_tx,
                rx: b_rx,
                timeout,
            },
        )
    }
}

impl Link for MemoryLink {
    fn send(&mut self, msg: &WireMessage) -> Result<(), WireError> {
        self.tx.send(encode(msg)?).map_err(|_| WireError::Closed)
    }

    fn recv(&mut self) -> Result<WireMessage, WireError> {
        match self.rx.recv_timeout(self.timeout) {
            Ok(bytes) => super::wire::decode(&bytes),
            Err(RecvTimeoutError::Timeout) => Err(WireError::TimedOut),
            Err(RecvTimeoutError::Disconnected) => Err(WireError::Closed),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct StoreOutcome {
    pub accepted: u64,
    pub duplicates: u64,
}

/// Records per agent, deduplicated on `(agent_id, window_start, ue_token)`.
/// With a directory, accepted records are appended to `<agent_id>.jsonl`.
#[derive(Debug, Default)]
pub struct RecordStore {
    dir: Option<PathBuf>,
    by_agent: BTreeMap<String, Vec<ConsolidatedRecord>>,
    keys: HashSet<(String, i64, String)>,
}

impl RecordStore {
    pub fn in_memory() -> Self {
        Self::default()
    }

    pub fn persistent(dir: &Path) -> Result<Self, CollectorError> {
        std::fs::create_dir_all(dir)?;
        Ok(Self {
            dir: Some(dir.to_path_buf()),
            ..Self::default()
        })
    }

    pub fn insert(&mut self, agent_id: &str, records: &[ConsolidatedRecord]) -> Result<StoreOutcome, CollectorError> {
        let mut out = StoreOutcome::default();
        let mut fresh = Vec::new();
        for r in records {
            let key = (agent_id.to_string(), r.window_start_ms(), r.ue_token().to_string());
            if self.keys.insert(key) {
                fresh.push(r.clone());
                out.accepted += 1;
            } else {
                out.duplicates += 1;
            }
        }
        if let (Some(dir), false) = (&self.dir, fresh.is_empty()) {
            let mut f = OpenOptions::new()
                .create(true)
                .append(true)
                .open(dir.join(format!("{agent_id}.jsonl")))?;
            let mut text = String::new();
            for r in &fresh {
                text.push_str(&serde_json::to_string(r).expect("records serialize"));
                text.push('\n');
            }
            f.write_all(text.as_bytes())?;
        }
        self.by_agent.entry(agent_id.to_string()).or_default().extend(fresh);
        Ok(out)
    }

    pub fn records(&self, agent_id: &str) -> &[ConsolidatedRecord] {
        self.by_agent.get(agent_id).map_or(&[], Vec::as_slice)
    }

    pub fn agents(&self) -> impl Iterator<Item = &str> {
        self.by_agent.keys().map(String::as_str)
    }

    pub fn record_count(&self) -> usize {
        self.by_agent.values().map(Vec::len).sum()
    }

    /// Raw events represented by the stored records.
    pub fn event_count(&self) -> u64 {
        self.by_agent
            .values()
            .flatten()
            .map(ConsolidatedRecord::event_count)
            .sum()
    }

    pub fn all_records(&self) -> Vec<ConsolidatedRecord> {
        self.by_agent.values().flatten().cloned().collect()
    }
}

/// Read every `*.jsonl` store file under `dir`, in file-name order.
pub fn load_store_dir(dir: &Path) -> Result<Vec<ConsolidatedRecord>, CollectorError> {
    let mut files: Vec<PathBuf> = std::fs::read_dir(dir)?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x == "jsonl"))
        .collect();
    files.sort();
    let mut out = Vec::new();
    for f in files {
        for (k, line) in std::fs::read_to_string(&f)?.lines().enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            out.push(
                serde_json::from_str(line)
                    .map_err(|e| CollectorError::Record(format!("{}:{}: {e}", f.display(), k + 1)))?,
            );
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct AgentTranscript {
    pub agent_id: String,
    pub events: u64,
    pub records: u64,
    pub batches: u64,
    /// Batch resends after an Ack timeout.
    pub retries: u64,
    pub accepted: u64,
    pub duplicates: u64,
    /// Records the collector reported stored for this session.
    pub collector_records: u64,
}

fn expect_reply<L: Link>(
    link: &mut L,
    request: &WireMessage,
    attempts: usize,
    transcript: &mut AgentTranscript,
    mut matches: impl FnMut(&Message) -> bool,
) -> Result<Message, CollectorError> {
    for attempt in 0..attempts {
        if attempt > 0 {
            transcript.retries += 1;
            log::warn!("{}: no reply, resending (attempt {})", transcript.agent_id, attempt + 1);
        }
        link.send(request)?;
        loop {
            match link.recv() {
                Ok(w) => {
                    let m = Message::from_wire(&w)?;
                    if matches(&m) {
                        return Ok(m);
                    }
                    // an Ack for an earlier attempt of a resent batch
                    log::debug!("{}: ignoring stale {:?}", transcript.agent_id, w.kind);
                }
                Err(WireError::TimedOut) => break,
                Err(e) => return Err(e.into()),
            }
        }
    }
    let seq = match Message::from_wire(request)? {
        Message::Batch { seq, .. } => seq,
        _ => 0,
    };
    Err(CollectorError::Unacknowledged { seq, attempts })
}

/// Consolidate `events`, then deliver them: Hello, one Batch per `max_batch`
/// records (each awaiting its Ack), Bye.
pub fn agent_run<L: Link>(
    events: &[MrEvent],
    cfg: &AgentConfig,
    link: &mut L,
) -> Result<AgentTranscript, CollectorError> {
    cfg.validate()?;
    let records = consolidate(events, cfg)?;
    let mut t = AgentTranscript {
        agent_id: cfg.agent_id.clone(),
        events: events.len() as u64,
        records: records.len() as u64,
        ..Default::default()
    };
    let attempts = cfg.max_retries + 1;
    link.send(
        &Message::Hello {
            agent_id: cfg.agent_id.clone(),
        }
        .to_wire(),
    )?;
    for (k, chunk) in records.chunks(cfg.max_batch).enumerate() {
        let seq = k as u64 + 1;
        let frame = Message::Batch {
            seq,
            records: chunk.to_vec(),
        }
        .to_wire();
        t.batches += 1;
        let reply = expect_reply(
            link,
            &frame,
            attempts,
            &mut t,
            |m| matches!(m, Message::Ack { seq: s, .. } if *s == seq),
        )?;
        if let Message::Ack {
            accepted, duplicates, ..
        } = reply
        {
            t.accepted += accepted;
            t.duplicates += duplicates;
        }
    }
    let bye = Message::Bye { records: t.records }.to_wire();
    if let Message::Bye { records } = expect_reply(link, &bye, attempts, &mut t, |m| matches!(m, Message::Bye { .. }))?
    {
        t.collector_records = records;
    }
    Ok(t)
}

#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct SessionTranscript {
    pub agent_id: String,
    pub batches: u64,
    pub accepted: u64,
    pub duplicates: u64,
    /// Whether the agent closed the session with Bye.
    pub completed: bool,
}

/// Serve one agent session until Bye or disconnect.
pub fn serve_session<L: Link>(link: &mut L, store: &Mutex<RecordStore>) -> Result<SessionTranscript, CollectorError> {
    let agent_id = match Message::from_wire(&link.recv()?)? {
        Message::Hello { agent_id } => agent_id,
        other => {
            return Err(CollectorError::Protocol(format!(
                "expected Hello, got {:?}",
                other.kind()
            )))
        }
    };
    validate_agent_id(&agent_id).map_err(CollectorError::Protocol)?;
    log::info!("session open: {agent_id}");
    let mut t = SessionTranscript {
        agent_id,
        ..Default::default()
    };
    loop {
        let w = match link.recv() {
            Ok(w) => w,
            Err(WireError::Closed) => {
                log::warn!("{}: closed without Bye", t.agent_id);
                return Ok(t);
            }
            Err(e) => return Err(e.into()),
        };
        match Message::from_wire(&w)? {
            Message::Batch { seq, records } => {
                let outcome = store.lock().expect("store poisoned").insert(&t.agent_id, &records)?;
                t.batches += 1;
                t.accepted += outcome.accepted;
                t.duplicates += outcome.duplicates;
                link.send(
                    &Message::Ack {
                        seq,
                        accepted: outcome.accepted,
                        duplicates: outcome.duplicates,
                    }
                    .to_wire(),
                )?;
            }
            Message::Bye { records } => {
                log::info!(
                    "session close: {} ({} announced, {} stored, {} duplicates)",
                    t.agent_id,
                    records,
                    t.accepted,
                    t.duplicates
                );
                link.send(&Message::Bye { records: t.accepted }.to_wire())?;
                t.completed = true;
                return Ok(t);
            }
            Message::Hello { .. } => return Err(CollectorError::Protocol("second Hello in session".into())),
            Message::Ack { .. } => return Err(CollectorError::Protocol("unexpected Ack from agent".into())),
        }
    }
}

/// TCP front end: one thread per connection, one shared store.
pub struct Collector {
    listener: TcpListener,
    store: Arc<Mutex<RecordStore>>,
    idle_timeout: Option<Duration>,
}

impl Collector {
    pub fn bind(addr: impl ToSocketAddrs, store: RecordStore) -> Result<Self, CollectorError> {
        Ok(Self {
            listener: TcpListener::bind(addr)?,
            store: Arc::new(Mutex::new(store)),
            idle_timeout: Some(Duration::from_secs(60)),
        })
    }

    pub fn local_addr(&self) -> Result<SocketAddr, CollectorError> {
        Ok(self.listener.local_addr()?)
    }

    pub fn store(&self) -> Arc<Mutex<RecordStore>> {
        Arc::clone(&self.store)
    }

    /// Accept connections until `sessions` of them have been served (forever if
    /// `None`). Returns one result per session, in acceptance order.
    pub fn serve(&self, sessions: Option<usize>) -> Vec<Result<SessionTranscript, CollectorError>> {
        std::thread::scope(|s| {
            let mut handles = Vec::new();
            for conn in self.listener.incoming() {
                let store = &self.store;
                let timeout = self.idle_timeout;
                handles.push(s.spawn(move || {
                    let stream = conn?;
                    let peer = stream.peer_addr().ok();
                    let mut link = TcpLink::new(stream, timeout)?;
                    let r = serve_session(&mut link, store);
                    if let Err(e) = &r {
                        log::warn!("session from {peer:?} failed: {e}");
                    }
                    r
                }));
                if sessions.is_some_and(|n| handles.len() >= n) {
                    break;
                }
            }
            handles
                .into_iter()
                .map(|h| {
                    h.join()
                        .unwrap_or_else(|_| Err(CollectorError::Protocol("session thread panicked".into())))
                })
                .collect()
        })
    }
}
