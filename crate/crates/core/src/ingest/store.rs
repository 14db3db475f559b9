//! Sharded, append-only event log.
//!
//! Each shard owns one log file and one writer thread. Sessions hash onto a
//! shard, so a session's commits are serialized while distinct shards commit
//! in parallel. The writer drains its queue into one group commit, syncs the
//! file, and only then publishes offsets, notifies subscribers and listeners,
//! and acknowledges producers.
//!
//! Log lines are `<crc32 hex> <canonical json>\n`. A torn or corrupt tail is
//! truncated on open. Index snapshots (`shard-N.snap`) record the offsets and
//! dedup window for a log prefix so recovery only rescans the suffix.

use std::collections::{BTreeSet, HashMap, VecDeque};
use std::fs::{self, File, OpenOptions};
use std::io::{BufRead, BufReader, Seek, SeekFrom, Write};
use std::os::unix::fs::FileExt;
use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::thread::JoinHandle;
use std::time::Duration;

use crossbeam_channel::{bounded, unbounded, Receiver, RecvTimeoutError, Sender};
use parking_lot::{Mutex, RwLock};
use serde::{Deserialize, Serialize};

use crate::clock::SharedClock;
use crate::model::{canonical_serialize, TraceEvent};

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum StoreError {
    #[error("storage i/o: {0}")]
    Io(String),
    #[error("store is shut down")]
    Closed,
    #[error("imported event {event_id} has server_seq {got}, expected {expected}")]
    SeqGap { event_id: String, expected: u64, got: u64 },
    #[error("corrupt record: {0}")]
    Corrupt(String),
}

impl From<std::io::Error> for StoreError {
    fn from(e: std::io::Error) -> Self {
        StoreError::Io(e.to_string())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AckStatus {
    Committed,
    Duplicate,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct IngestAck {
    pub event_id: String,
    pub server_seq: u64,
    pub status: AckStatus,
}

/// Called by shard writers, in commit order per session, after an event is
/// durable. Implementations must not call back into the store.
pub trait CommitListener: Send + Sync {
    fn on_commit(&self, event: &TraceEvent);
}

#[derive(Debug, Clone)]
pub struct StoreConfig {
    /// `None` keeps the log in memory (nothing survives the process).
    pub data_dir: Option<PathBuf>,
    pub shards: usize,
    /// Bounded per-shard queue; producers block when it is full.
    pub queue_capacity: usize,
    /// Maximum queued requests folded into one group commit.
    pub max_batch: usize,
    pub snapshot_every: u64,
    /// Most recent event ids remembered per session for deduplication.
    pub dedup_capacity: usize,
}

impl Default for StoreConfig {
    fn default() -> Self {
        Self {
            data_dir: None,
            shards: 4,
            queue_capacity: 1024,
            max_batch: 256,
            snapshot_every: 100_000,
            dedup_capacity: 1 << 20,
        }
    }
}

impl StoreConfig {
    pub fn in_memory() -> Self {
        Self::default()
    }

    pub fn on_disk(dir: impl Into<PathBuf>) -> Self {
        Self {
            data_dir: Some(dir.into()),
            ..Self::default()
        }
    }
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
struct Entry {
    offset: u64,
    len: u32,
}

struct SessionLog {
    experiment_id: String,
    entries: Vec<Entry>,
    dedup: HashMap<String, u64>,
    dedup_order: VecDeque<String>,
    subscribers: Vec<Sender<TraceEvent>>,
}

impl SessionLog {
    fn new(experiment_id: String) -> Self {
        Self {
            experiment_id,
            entries: Vec::new(),
            dedup: HashMap::new(),
            dedup_order: VecDeque::new(),
            subscribers: Vec::new(),
        }
    }

    fn remember(&mut self, event_id: String, seq: u64, cap: usize) {
        self.dedup.insert(event_id.clone(), seq);
        self.dedup_order.push_back(event_id);
        while self.dedup_order.len() > cap {
            if let Some(old) = self.dedup_order.pop_front() {
                self.dedup.remove(&old);
            }
        }
    }
}

#[derive(Default)]
struct ShardState {
    sessions: HashMap<String, SessionLog>,
    log_len: u64,
    since_snapshot: u64,
}

enum LogBackend {
    File(File),
    Memory(RwLock<Vec<u8>>),
}

impl LogBackend {
    fn read(&self, entry: Entry) -> Result<Vec<u8>, StoreError> {
        match self {
            LogBackend::File(f) => {
                let mut buf = vec![0u8; entry.len as usize];
                f.read_exact_at(&mut buf, entry.offset)?;
                Ok(buf)
            }
            LogBackend::Memory(m) => {
                let m = m.read();
                let start = entry.offset as usize;
                Ok(m[start..start + entry.len as usize].to_vec())
            }
        }
    }
}

struct Shard {
    state: Mutex<ShardState>,
    log: LogBackend,
    snapshot_path: Option<PathBuf>,
}

struct Pending {
    event: TraceEvent,
    preassigned: bool,
}

enum Command {
    Append {
        items: Vec<Pending>,
        reply: Sender<Vec<Result<IngestAck, StoreError>>>,
    },
    Snapshot {
        reply: Sender<Result<(), StoreError>>,
    },
    Shutdown,
}

struct Inner {
    shards: Vec<Shard>,
    experiments: RwLock<HashMap<String, BTreeSet<String>>>,
    listeners: RwLock<Vec<Arc<dyn CommitListener>>>,
    clock: SharedClock,
    config: StoreConfig,
}

/// Handle to the event log. Dropping it flushes a final snapshot and stops
/// the shard writers.
pub struct EventStore {
    inner: Arc<Inner>,
    queues: Vec<Sender<Command>>,
    workers: Mutex<Vec<JoinHandle<()>>>,
}

/// Ordered replay from an offset followed by the live tail.
pub struct Subscription {
    backlog: VecDeque<TraceEvent>,
    live: Receiver<TraceEvent>,
}

impl Subscription {
    pub fn recv_timeout(&mut self, timeout: Duration) -> Option<TraceEvent> {
        if let Some(e) = self.backlog.pop_front() {
            return Some(e);
        }
        match self.live.recv_timeout(timeout) {
            Ok(e) => Some(e),
            Err(RecvTimeoutError::Timeout | RecvTimeoutError::Disconnected) => None,
        }
    }

    pub fn try_next(&mut self) -> Option<TraceEvent> {
        self.backlog.pop_front().or_else(|| self.live.try_recv().ok())
    }
}

impl Iterator for Subscription {
    type Item = TraceEvent;

    /// Blocks until the next event; ends when the store shuts down.
    fn next(&mut self) -> Option<TraceEvent> {
        self.backlog.pop_front().or_else(|| self.live.recv().ok())
    }
}

#[derive(Serialize, Deserialize)]
struct SnapshotFile {
    log_len: u64,
    sessions: Vec<SnapshotSession>,
}

#[derive(Serialize, Deserialize)]
struct SnapshotSession {
    session_id: String,
    experiment_id: String,
    entries: Vec<(u64, u32)>,
    dedup: Vec<(String, u64)>,
}

impl EventStore {
    pub fn open(config: StoreConfig, clock: SharedClock) -> Result<Self, StoreError> {
        assert!(config.shards > 0, "at least one shard");
        let mut shards = Vec::with_capacity(config.shards);
        let mut appenders = Vec::with_capacity(config.shards);
        let mut experiments: HashMap<String, BTreeSet<String>> = HashMap::new();

        if let Some(dir) = &config.data_dir {
            fs::create_dir_all(dir)?;
        }
        for i in 0..config.shards {
            match &config.data_dir {
                Some(dir) => {
                    let log_path = dir.join(format!("shard-{i}.log"));
                    let snap_path = dir.join(format!("shard-{i}.snap"));
                    let state = recover_shard(&log_path, &snap_path, config.dedup_capacity)?;
                    for (sid, log) in &state.sessions {
                        experiments
                            .entry(log.experiment_id.clone())
                            .or_default()
                            .insert(sid.clone());
                    }
                    let append = OpenOptions::new().append(true).open(&log_path)?;
                    let read = File::open(&log_path)?;
                    shards.push(Shard {
                        state: Mutex::new(state),
                        log: LogBackend::File(read),
                        snapshot_path: Some(snap_path),
                    });
                    appenders.push(Some(append));
                }
                None => {
                    shards.push(Shard {
                        state: Mutex::new(ShardState::default()),
                        log: LogBackend::Memory(RwLock::new(Vec::new())),
                        snapshot_path: None,
                    });
                    appenders.push(None);
                }
            }
        }

        let inner = Arc::new(Inner {
            shards,
            experiments: RwLock::new(experiments),
            listeners: RwLock::new(Vec::new()),
            clock,
            config,
        });

        let mut queues = Vec::new();
        let mut workers = Vec::new();
        for (i, append) in appenders.into_iter().enumerate() {
            let (tx, rx) = bounded(inner.config.queue_capacity);
            let inner = Arc::clone(&inner);
            let handle = std::thread::Builder::new()
                .name(format!("event-shard-{i}"))
                .spawn(move || shard_writer(inner, i, append, rx))
                .map_err(|e| StoreError::Io(e.to_string()))?;
            queues.push(tx);
            workers.push(handle);
        }

        Ok(Self {
            inner,
            queues,
            workers: Mutex::new(workers),
        })
    }

    pub fn add_listener(&self, listener: Arc<dyn CommitListener>) {
        self.inner.listeners.write().push(listener);
    }

    /// Stable across builds and restarts: the on-disk layout depends on it.
    fn shard_of(&self, session_id: &str) -> usize {
        (crc32fast::hash(session_id.as_bytes()) as usize) % self.inner.shards.len()
    }

    pub fn now_ms(&self) -> u64 {
        self.inner.clock.now_ms()
    }

    /// Commits validated events, assigning sequence numbers and server time.
    /// Results are positional. Blocks until every event is durable.
    pub fn append(&self, events: Vec<TraceEvent>) -> Vec<Result<IngestAck, StoreError>> {
        self.submit(events.into_iter().map(|event| Pending { event, preassigned: false }).collect())
    }

    /// Re-commits previously exported events, keeping their sequence numbers
    /// and server times. A sequence gap is rejected.
    pub fn import(&self, events: Vec<TraceEvent>) -> Vec<Result<IngestAck, StoreError>> {
        self.submit(events.into_iter().map(|event| Pending { event, preassigned: true }).collect())
    }

    fn submit(&self, items: Vec<Pending>) -> Vec<Result<IngestAck, StoreError>> {
        let n = items.len();
        let mut per_shard: Vec<(Vec<usize>, Vec<Pending>)> =
            (0..self.queues.len()).map(|_| (Vec::new(), Vec::new())).collect();
        for (pos, item) in items.into_iter().enumerate() {
            let s = self.shard_of(&item.event.session_id);
            per_shard[s].0.push(pos);
            per_shard[s].1.push(item);
        }
        let mut waiting = Vec::new();
        for (shard, (positions, items)) in per_shard.into_iter().enumerate() {
            if items.is_empty() {
                continue;
            }
            let (tx, rx) = bounded(1);
            let sent = self.queues[shard].send(Command::Append { items, reply: tx }).is_ok();
            waiting.push((positions, sent.then_some(rx)));
        }
        let mut out: Vec<Option<Result<IngestAck, StoreError>>> = (0..n).map(|_| None).collect();
        for (positions, rx) in waiting {
            let results = rx
                .and_then(|rx| rx.recv().ok())
                .unwrap_or_else(|| positions.iter().map(|_| Err(StoreError::Closed)).collect());
            for (pos, r) in positions.into_iter().zip(results) {
                out[pos] = Some(r);
            }
        }
        out.into_iter()
            .map(|r| r.unwrap_or(Err(StoreError::Closed)))
            .collect()
    }

    /// Events of a session with `server_seq >= from_seq`, in order.
    pub fn read_session(&self, session_id: &str, from_seq: u64) -> Result<Vec<TraceEvent>, StoreError> {
        let shard = &self.inner.shards[self.shard_of(session_id)];
        let entries: Vec<Entry> = {
            let st = shard.state.lock();
            match st.sessions.get(session_id) {
                Some(log) => log.entries.iter().skip(from_seq as usize).copied().collect(),
                None => Vec::new(),
            }
        };
        entries.into_iter().map(|e| decode(&shard.log, e)).collect()
    }

    pub fn session_len(&self, session_id: &str) -> u64 {
        let shard = &self.inner.shards[self.shard_of(session_id)];
        let st = shard.state.lock();
        st.sessions
            .get(session_id)
            .map(|l| l.entries.len() as u64)
            .unwrap_or(0)
    }

    /// Replays committed events from `from_seq`, then follows live commits.
    /// Registration and the backlog cut happen under the shard lock, so the
    /// stream has no gaps and no duplicates.
    pub fn subscribe(&self, session_id: &str, from_seq: u64) -> Result<Subscription, StoreError> {
        let shard = &self.inner.shards[self.shard_of(session_id)];
        let (tx, rx) = unbounded();
        let entries: Vec<Entry> = {
            let mut st = shard.state.lock();
            match st.sessions.get_mut(session_id) {
                Some(log) => {
                    log.subscribers.push(tx);
                    log.entries.iter().skip(from_seq as usize).copied().collect()
                }
                None => {
                    // No events yet: park the subscriber on an empty log that
                    // the first commit fills in with the experiment id.
                    let mut log = SessionLog::new(String::new());
                    log.subscribers.push(tx);
                    st.sessions.insert(session_id.to_owned(), log);
                    Vec::new()
                }
            }
        };
        let backlog = entries
            .into_iter()
            .map(|e| decode(&shard.log, e))
            .collect::<Result<VecDeque<_>, _>>()?;
        Ok(Subscription { backlog, live: rx })
    }

    /// Session ids with at least one committed event in the experiment,
    /// sorted byte-wise.
    pub fn experiment_sessions(&self, experiment_id: &str) -> Vec<String> {
        self.inner
            .experiments
            .read()
            .get(experiment_id)
            .map(|s| s.iter().cloned().collect())
            .unwrap_or_default()
    }

    pub fn experiments(&self) -> Vec<String> {
        let mut v: Vec<String> = self.inner.experiments.read().keys().cloned().collect();
        v.sort();
        v
    }

    /// Newline-delimited canonical events ordered by (session_id, server_seq).
    pub fn export(
        &self,
        experiment_id: &str,
        sessions: Option<&BTreeSet<String>>,
    ) -> Result<Vec<u8>, StoreError> {
        let mut out = Vec::new();
        for sid in self.experiment_sessions(experiment_id) {
            if sessions.is_some_and(|f| !f.contains(&sid)) {
                continue;
            }
            for e in self.read_session(&sid, 0)? {
                out.extend_from_slice(&canonical_serialize(&e));
                out.push(b'\n');
            }
        }
        Ok(out)
    }

    /// Forces an index snapshot on every shard.
    pub fn snapshot(&self) -> Result<(), StoreError> {
        let mut waits = Vec::new();
        for q in &self.queues {
            let (tx, rx) = bounded(1);
            q.send(Command::Snapshot { reply: tx }).map_err(|_| StoreError::Closed)?;
            waits.push(rx);
        }
        for rx in waits {
            rx.recv().map_err(|_| StoreError::Closed)??;
        }
        Ok(())
    }

    pub fn shutdown(&self) {
        for q in &self.queues {
            let _ = q.send(Command::Shutdown);
        }
        for h in self.workers.lock().drain(..) {
            let _ = h.join();
        }
    }
}

impl Drop for EventStore {
    fn drop(&mut self) {
        self.shutdown();
    }
}

fn decode(log: &LogBackend, entry: Entry) -> Result<TraceEvent, StoreError> {
    let line = log.read(entry)?;
    parse_line(&line).ok_or_else(|| StoreError::Corrupt(format!("record at offset {}", entry.offset)))
}

fn encode_line(event: &TraceEvent) -> Vec<u8> {
    let body = canonical_serialize(event);
    let mut line = Vec::with_capacity(body.len() + 10);
    write!(line, "{:08x} ", crc32fast::hash(&body)).expect("vec write");
    line.extend_from_slice(&body);
    line.push(b'\n');
    line
}

/// Parses a full line including the trailing newline.
fn parse_line(line: &[u8]) -> Option<TraceEvent> {
    let line = line.strip_suffix(b"\n")?;
    if line.len() < 9 || line[8] != b' ' {
        return None;
    }
    let crc = u32::from_str_radix(std::str::from_utf8(&line[..8]).ok()?, 16).ok()?;
    let body = &line[9..];
    if crc32fast::hash(body) != crc {
        return None;
    }
    serde_json::from_slice(body).ok()
}

fn recover_shard(log_path: &Path, snap_path: &Path, dedup_cap: usize) -> Result<ShardState, StoreError> {
    if !log_path.exists() {
        File::create(log_path)?.sync_all()?;
    }
    let file_len = fs::metadata(log_path)?.len();
    let mut state = ShardState::default();

    if let Ok(bytes) = fs::read(snap_path) {
        match serde_json::from_slice::<SnapshotFile>(&bytes) {
            Ok(snap) if snap.log_len <= file_len => {
                for s in snap.sessions {
                    let mut log = SessionLog::new(s.experiment_id);
                    log.entries = s.entries.into_iter().map(|(offset, len)| Entry { offset, len }).collect();
                    for (id, seq) in s.dedup {
                        log.remember(id, seq, dedup_cap);
                    }
                    state.sessions.insert(s.session_id, log);
                }
                state.log_len = snap.log_len;
            }
            _ => tracing::warn!(path = %snap_path.display(), "ignoring unusable index snapshot"),
        }
    }

    let mut f = File::open(log_path)?;
    f.seek(SeekFrom::Start(state.log_len))?;
    let mut reader = BufReader::new(f);
    let mut offset = state.log_len;
    let mut line = Vec::new();
    loop {
        line.clear();
        let n = reader.read_until(b'\n', &mut line)?;
        if n == 0 {
            break;
        }
        let Some(event) = parse_line(&line) else { break };
        let log = state
            .sessions
            .entry(event.session_id.clone())
            .or_insert_with(|| SessionLog::new(event.experiment_id.clone()));
        if event.server_seq != log.entries.len() as u64 {
            break;
        }
        log.entries.push(Entry { offset, len: n as u32 });
        log.remember(event.event_id, event.server_seq, dedup_cap);
        offset += n as u64;
    }
    if offset < file_len {
        tracing::warn!(
            path = %log_path.display(),
            dropped = file_len - offset,
            "truncating torn log tail"
        );
        let f = OpenOptions::new().write(true).open(log_path)?;
        f.set_len(offset)?;
        f.sync_all()?;
    }
    state.log_len = offset;
    Ok(state)
}

fn write_snapshot(shard: &Shard) -> Result<(), StoreError> {
    let Some(path) = &shard.snapshot_path else {
        return Ok(());
    };
    let snap = {
        let mut st = shard.state.lock();
        st.since_snapshot = 0;
        SnapshotFile {
            log_len: st.log_len,
            sessions: st
                .sessions
                .iter()
                .filter(|(_, l)| !l.entries.is_empty())
                .map(|(sid, l)| SnapshotSession {
                    session_id: sid.clone(),
                    experiment_id: l.experiment_id.clone(),
                    entries: l.entries.iter().map(|e| (e.offset, e.len)).collect(),
                    dedup: l
                        .dedup_order
                        .iter()
                        .map(|id| (id.clone(), l.dedup[id]))
                        .collect(),
                })
                .collect(),
        }
    };
    let tmp = path.with_extension("snap.tmp");
    let bytes = serde_json::to_vec(&snap).map_err(|e| StoreError::Io(e.to_string()))?;
    let mut f = File::create(&tmp)?;
    f.write_all(&bytes)?;
    f.sync_all()?;
    fs::rename(&tmp, path)?;
    Ok(())
}

fn shard_writer(inner: Arc<Inner>, index: usize, mut append: Option<File>, rx: Receiver<Command>) {
    let shard = &inner.shards[index];
    let max_batch = inner.config.max_batch.max(1);
    'outer: while let Ok(first) = rx.recv() {
        let mut batch = Vec::new();
        let mut pending = Some(first);
        while let Some(cmd) = pending.take() {
            match cmd {
                Command::Append { items, reply } => batch.push((items, reply)),
                Command::Snapshot { reply } => {
                    commit_batch(&inner, shard, &mut append, std::mem::take(&mut batch));
                    let _ = reply.send(write_snapshot(shard));
                }
                Command::Shutdown => {
                    commit_batch(&inner, shard, &mut append, std::mem::take(&mut batch));
                    if let Err(e) = write_snapshot(shard) {
                        tracing::warn!(error = %e, "final snapshot failed");
                    }
                    break 'outer;
                }
            }
            if batch.len() < max_batch {
                pending = rx.try_recv().ok();
            }
        }
        commit_batch(&inner, shard, &mut append, batch);
        let due = shard.state.lock().since_snapshot >= inner.config.snapshot_every;
        if due {
            if let Err(e) = write_snapshot(shard) {
                tracing::warn!(error = %e, "periodic snapshot failed");
            }
        }
    }
}

type Batch = Vec<(Vec<Pending>, Sender<Vec<Result<IngestAck, StoreError>>>)>;

fn commit_batch(inner: &Inner, shard: &Shard, append: &mut Option<File>, batch: Batch) {
    if batch.is_empty() {
        return;
    }
    let now = inner.clock.now_ms();
    let mut buf: Vec<u8> = Vec::new();
    let mut staged: Vec<(TraceEvent, Entry)> = Vec::new();
    let mut results: Vec<Vec<Result<IngestAck, StoreError>>> = Vec::with_capacity(batch.len());

    {
        let st = shard.state.lock();
        let base_len = st.log_len;
        let mut next_seq: HashMap<String, u64> = HashMap::new();
        let mut in_batch: HashMap<(String, String), u64> = HashMap::new();
        for (items, _) in &batch {
            let mut res = Vec::with_capacity(items.len());
            for Pending { event, preassigned } in items {
                let log = st.sessions.get(&event.session_id);
                let seq_slot = next_seq
                    .entry(event.session_id.clone())
                    .or_insert_with(|| log.map(|l| l.entries.len() as u64).unwrap_or(0));
                let key = (event.session_id.clone(), event.event_id.clone());
                let prior = log
                    .and_then(|l| l.dedup.get(&event.event_id).copied())
                    .or_else(|| in_batch.get(&key).copied());
                if let Some(seq) = prior {
                    res.push(Ok(IngestAck {
                        event_id: event.event_id.clone(),
                        server_seq: seq,
                        status: AckStatus::Duplicate,
                    }));
                    continue;
                }
                if *preassigned && event.server_seq != *seq_slot {
                    res.push(Err(StoreError::SeqGap {
                        event_id: event.event_id.clone(),
                        expected: *seq_slot,
                        got: event.server_seq,
                    }));
                    continue;
                }
                let mut event = event.clone();
                event.server_seq = *seq_slot;
                if !preassigned {
                    event.server_time_ms = now;
                }
                *seq_slot += 1;
                in_batch.insert(key, event.server_seq);
                let line = encode_line(&event);
                let entry = Entry {
                    offset: base_len + buf.len() as u64,
                    len: line.len() as u32,
                };
                buf.extend_from_slice(&line);
                res.push(Ok(IngestAck {
                    event_id: event.event_id.clone(),
                    server_seq: event.server_seq,
                    status: AckStatus::Committed,
                }));
                staged.push((event, entry));
            }
            results.push(res);
        }
    }

    if !buf.is_empty() {
        if let Err(e) = write_durably(shard, append, &buf) {
            let err = StoreError::Io(e.to_string());
            for (res, (_, reply)) in results.into_iter().zip(batch) {
                let res = res
                    .into_iter()
                    .map(|r| match r {
                        Ok(ack) if ack.status == AckStatus::Committed => Err(err.clone()),
                        other => other,
                    })
                    .collect();
                let _ = reply.send(res);
            }
            return;
        }
    }

    let mut new_sessions = Vec::new();
    {
        let mut st = shard.state.lock();
        st.log_len += buf.len() as u64;
        st.since_snapshot += staged.len() as u64;
        let cap = inner.config.dedup_capacity;
        for (event, entry) in &staged {
            let log = st
                .sessions
                .entry(event.session_id.clone())
                .or_insert_with(|| SessionLog::new(event.experiment_id.clone()));
            if log.entries.is_empty() {
                if log.experiment_id.is_empty() {
                    log.experiment_id = event.experiment_id.clone();
                }
                new_sessions.push((event.experiment_id.clone(), event.session_id.clone()));
            }
            log.entries.push(*entry);
            log.remember(event.event_id.clone(), event.server_seq, cap);
            log.subscribers.retain(|s| s.send(event.clone()).is_ok());
        }
    }
    if !new_sessions.is_empty() {
        let mut ex = inner.experiments.write();
        for (exp, sid) in new_sessions {
            ex.entry(exp).or_default().insert(sid);
        }
    }
    {
        let listeners = inner.listeners.read();
        for (event, _) in &staged {
            for l in listeners.iter() {
                l.on_commit(event);
            }
        }
    }
    for (res, (_, reply)) in results.into_iter().zip(batch) {
        let _ = reply.send(res);
    }
}

fn write_durably(shard: &Shard, append: &mut Option<File>, buf: &[u8]) -> std::io::Result<()> {
    match (&shard.log, append) {
        (LogBackend::File(_), Some(f)) => {
            let before = f.metadata()?.len();
            if let Err(e) = f.write_all(buf).and_then(|_| f.sync_data()) {
                let _ = f.set_len(before);
                return Err(e);
            }
            Ok(())
        }
        (LogBackend::Memory(m), _) => {
            m.write().extend_from_slice(buf);
            Ok(())
        }
        (LogBackend::File(_), None) => Err(std::io::Error::other("missing append handle")),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::clock::ManualClock;
    use crate::model::ActionType;
    use std::collections::BTreeMap;

    fn ev(id: &str, session: &str) -> TraceEvent {
        TraceEvent {
            event_id: id.into(),
            session_id: session.into(),
            learner_id: "l1".into(),
            experiment_id: "x1".into(),
            client_timestamp_ms: 0,
            server_seq: 0,
            server_time_ms: 0,
            action: ActionType::from("TIMER"),
            target: String::new(),
            payload: BTreeMap::new(),
        }
    }

    fn store(dir: Option<&Path>) -> EventStore {
        let mut cfg = StoreConfig::in_memory();
        cfg.data_dir = dir.map(Path::to_path_buf);
        cfg.shards = 2;
        EventStore::open(cfg, Arc::new(ManualClock::new(1_000))).unwrap()
    }

    #[test]
    fn first_event_is_seq_zero_and_resubmission_is_duplicate() {
        let s = store(None);
        let a = s.append(vec![ev("e1", "s1")]).remove(0).unwrap();
        assert_eq!((a.server_seq, a.status), (0, AckStatus::Committed));
        let b = s.append(vec![ev("e1", "s1")]).remove(0).unwrap();
        assert_eq!((b.server_seq, b.status), (0, AckStatus::Duplicate));
        assert_eq!(s.session_len("s1"), 1);
    }

    #[test]
    fn duplicates_inside_one_batch() {
        let s = store(None);
        let acks: Vec<_> = s
            .append(vec![ev("a", "s"), ev("b", "s"), ev("a", "s")])
            .into_iter()
            .map(Result::unwrap)
            .collect();
        assert_eq!(acks[2].status, AckStatus::Duplicate);
        assert_eq!(acks[2].server_seq, 0);
        assert_eq!(acks[1].server_seq, 1);
    }

    #[test]
    fn server_time_is_stamped() {
        let s = store(None);
        s.append(vec![ev("a", "s")]);
        assert_eq!(s.read_session("s", 0).unwrap()[0].server_time_ms, 1_000);
    }

    #[test]
    fn subscribe_replays_from_offset_then_tails() {
        let s = store(None);
        for i in 0..5 {
            s.append(vec![ev(&format!("e{i}"), "s")]);
        }
        let mut sub = s.subscribe("s", 3).unwrap();
        s.append(vec![ev("e5", "s")]);
        let seqs: Vec<u64> = (0..3).map(|_| sub.recv_timeout(Duration::from_secs(1)).unwrap().server_seq).collect();
        assert_eq!(seqs, vec![3, 4, 5]);
        assert!(sub.recv_timeout(Duration::from_millis(20)).is_none());
    }

    #[test]
    fn subscribing_before_any_event() {
        let s = store(None);
        let mut sub = s.subscribe("fresh", 0).unwrap();
        s.append(vec![ev("e0", "fresh")]);
        assert_eq!(sub.recv_timeout(Duration::from_secs(1)).unwrap().event_id, "e0");
        assert_eq!(s.experiment_sessions("x1"), vec!["fresh".to_string()]);
    }

    #[test]
    fn reopen_restores_log_and_dedup() {
        let dir = tempfile::tempdir().unwrap();
        {
            let s = store(Some(dir.path()));
            s.append(vec![ev("a", "s"), ev("b", "s"), ev("c", "t")]);
        }
        let s = store(Some(dir.path()));
        assert_eq!(s.session_len("s"), 2);
        let dup = s.append(vec![ev("b", "s")]).remove(0).unwrap();
        assert_eq!((dup.status, dup.server_seq), (AckStatus::Duplicate, 1));
        let next = s.append(vec![ev("d", "s")]).remove(0).unwrap();
        assert_eq!(next.server_seq, 2);
    }

    #[test]
    fn torn_tail_is_truncated() {
        let dir = tempfile::tempdir().unwrap();
        let mut cfg = StoreConfig::on_disk(dir.path());
        cfg.shards = 1;
        {
            let s = EventStore::open(cfg.clone(), Arc::new(ManualClock::new(0))).unwrap();
            s.append(vec![ev("a", "s"), ev("b", "s")]);
        }
        // Lose the snapshot and append half a record.
        fs::remove_file(dir.path().join("shard-0.snap")).unwrap();
        let mut f = OpenOptions::new().append(true).open(dir.path().join("shard-0.log")).unwrap();
        f.write_all(b"deadbeef {\"event_id\":").unwrap();
        drop(f);
        let s = EventStore::open(cfg, Arc::new(ManualClock::new(0))).unwrap();
        assert_eq!(s.session_len("s"), 2);
        let ack = s.append(vec![ev("c", "s")]).remove(0).unwrap();
        assert_eq!(ack.server_seq, 2);
        assert_eq!(s.read_session("s", 0).unwrap().len(), 3);
    }

    #[test]
    fn import_preserves_sequence_and_rejects_gaps() {
        let src = store(None);
        src.append(vec![ev("a", "s"), ev("b", "s")]);
        let events = src.read_session("s", 0).unwrap();
        let dst = store(None);
        assert!(dst.import(events.clone()).into_iter().all(|r| r.is_ok()));
        assert_eq!(dst.export("x1", None).unwrap(), src.export("x1", None).unwrap());
        let mut gap = ev("z", "s");
        gap.server_seq = 7;
        assert!(matches!(dst.import(vec![gap]).remove(0), Err(StoreError::SeqGap { expected: 2, .. })));
    }
}
