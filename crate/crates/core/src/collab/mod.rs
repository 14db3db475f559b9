//! Collaborative plain-text documents with server-serialized operational
//! transformation. Every committed op is appended to the document's log and
//! mirrored as a DOC_OP trace event.

mod client;
pub mod ot;

pub use client::DocClient;

use std::collections::{BTreeMap, HashMap, VecDeque};
use std::sync::Arc;
use std::time::Duration;

use crossbeam_channel::{unbounded, Receiver, RecvTimeoutError, Sender};
use parking_lot::{Mutex, RwLock};
use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::clock::SharedClock;
use crate::ingest::{IngestError, TraceSink};
use crate::model::action::DOC_OP;
use ot::{transform_seq, Edit};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum OpKind {
    Insert { text: String },
    Delete { length: usize },
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DocOp {
    pub op_id: String,
    pub doc_id: String,
    pub author: String,
    pub base_revision: u64,
    pub position: usize,
    #[serde(flatten)]
    pub kind: OpKind,
}

impl DocOp {
    pub fn insert(doc_id: &str, op_id: &str, author: &str, base: u64, position: usize, text: &str) -> Self {
        Self {
            op_id: op_id.into(),
            doc_id: doc_id.into(),
            author: author.into(),
            base_revision: base,
            position,
            kind: OpKind::Insert { text: text.into() },
        }
    }

    pub fn delete(doc_id: &str, op_id: &str, author: &str, base: u64, position: usize, length: usize) -> Self {
        Self {
            op_id: op_id.into(),
            doc_id: doc_id.into(),
            author: author.into(),
            base_revision: base,
            position,
            kind: OpKind::Delete { length },
        }
    }

    pub fn to_edit(&self) -> Edit {
        match &self.kind {
            OpKind::Insert { text } => Edit::Insert {
                pos: self.position,
                text: text.chars().collect(),
                author: self.author.clone(),
            },
            OpKind::Delete { length } => Edit::Delete {
                pos: self.position,
                len: *length,
            },
        }
    }

    fn from_edit(template: &DocOp, edit: Edit, base: u64) -> Self {
        let (position, kind) = match edit {
            Edit::Insert { pos, text, .. } => (pos, OpKind::Insert { text: text.into_iter().collect() }),
            Edit::Delete { pos, len } => (pos, OpKind::Delete { length: len }),
        };
        Self {
            op_id: template.op_id.clone(),
            doc_id: template.doc_id.clone(),
            author: template.author.clone(),
            base_revision: base,
            position,
            kind,
        }
    }
}

/// An op as it entered the log. `op.base_revision` is the revision it applies
/// to, so `revision == op.base_revision + 1`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CommittedOp {
    pub revision: u64,
    /// Base revision the author submitted against.
    pub submitted_base: u64,
    pub committed_at_ms: u64,
    /// The submitted op was out of bounds or fully absorbed by concurrent
    /// deletes and is kept as an empty delete.
    #[serde(default)]
    pub noop: bool,
    #[serde(flatten)]
    pub op: DocOp,
}

impl CommittedOp {
    /// Inverse of the DOC_OP payload written on commit.
    pub fn from_payload(payload: &BTreeMap<String, Value>) -> Option<Self> {
        serde_json::from_value(Value::Object(payload.clone().into_iter().collect())).ok()
    }

    pub fn to_payload(&self) -> BTreeMap<String, Value> {
        match serde_json::to_value(self) {
            Ok(Value::Object(m)) => m.into_iter().collect(),
            _ => BTreeMap::new(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum CollabError {
    #[error("document `{0}` is unknown")]
    DocUnknown(String),
    #[error("document `{0}` already exists")]
    DocExists(String),
    #[error("base revision {base} is older than the retained log (oldest {oldest})")]
    StaleBase { base: u64, oldest: u64 },
    #[error("base revision {base} is ahead of current revision {current}")]
    BaseAhead { base: u64, current: u64 },
    #[error("revision {requested} is unknown (current {current})")]
    RevisionUnknown { requested: u64, current: u64 },
    #[error("invalid op: {0}")]
    InvalidOp(String),
    #[error(transparent)]
    Trace(#[from] IngestError),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct SubmitResult {
    /// One entry per log record; a delete split by a concurrent insert
    /// commits as two.
    pub committed: Vec<CommittedOp>,
    pub new_revision: u64,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct DocumentState {
    pub doc_id: String,
    pub revision: u64,
    pub content: String,
    pub op_log: Vec<CommittedOp>,
}

struct DocCell {
    doc_id: String,
    chars: Vec<char>,
    log: Vec<CommittedOp>,
    /// Document length after each revision; `lens[0] == 0`.
    lens: Vec<usize>,
    subscribers: Vec<Sender<CommittedOp>>,
}

impl DocCell {
    fn new(doc_id: &str) -> Self {
        Self {
            doc_id: doc_id.to_owned(),
            chars: Vec::new(),
            log: Vec::new(),
            lens: vec![0],
            subscribers: Vec::new(),
        }
    }

    fn revision(&self) -> u64 {
        self.log.len() as u64
    }

    fn push(&mut self, c: CommittedOp) {
        let e = c.op.to_edit();
        e.apply(&mut self.chars);
        self.lens.push(self.chars.len());
        self.subscribers.retain(|s| s.send(c.clone()).is_ok());
        self.log.push(c);
    }
}

/// Committed ops from a revision onwards, then the live tail.
pub struct DocStream {
    backlog: VecDeque<CommittedOp>,
    live: Receiver<CommittedOp>,
}

impl DocStream {
    pub fn recv_timeout(&mut self, timeout: Duration) -> Option<CommittedOp> {
        if let Some(c) = self.backlog.pop_front() {
            return Some(c);
        }
        match self.live.recv_timeout(timeout) {
            Ok(c) => Some(c),
            Err(RecvTimeoutError::Timeout | RecvTimeoutError::Disconnected) => None,
        }
    }

    pub fn try_next(&mut self) -> Option<CommittedOp> {
        self.backlog.pop_front().or_else(|| self.live.try_recv().ok())
    }
}

/// Replays a log prefix over the empty document.
pub fn fold_log(ops: &[CommittedOp]) -> String {
    let mut chars = Vec::new();
    for c in ops {
        c.op.to_edit().apply(&mut chars);
    }
    chars.into_iter().collect()
}

pub struct DocHub {
    docs: RwLock<HashMap<String, Arc<Mutex<DocCell>>>>,
    sink: Option<Arc<dyn TraceSink>>,
    clock: SharedClock,
    /// Maximum number of revisions an op may lag behind.
    retention: u64,
}

impl DocHub {
    pub fn new(clock: SharedClock, sink: Option<Arc<dyn TraceSink>>) -> Self {
        Self {
            docs: RwLock::new(HashMap::new()),
            sink,
            clock,
            retention: 100_000,
        }
    }

    pub fn with_retention(mut self, revisions: u64) -> Self {
        self.retention = revisions;
        self
    }

    pub fn create_doc(&self, doc_id: &str) -> Result<(), CollabError> {
        if doc_id.is_empty() {
            return Err(CollabError::InvalidOp("empty document id".into()));
        }
        let mut docs = self.docs.write();
        if docs.contains_key(doc_id) {
            return Err(CollabError::DocExists(doc_id.to_owned()));
        }
        docs.insert(doc_id.to_owned(), Arc::new(Mutex::new(DocCell::new(doc_id))));
        Ok(())
    }

    /// Rebuilds a document from its committed log, e.g. from DOC_OP events.
    pub fn restore(&self, doc_id: &str, mut ops: Vec<CommittedOp>) -> Result<(), CollabError> {
        ops.sort_by_key(|c| c.revision);
        let mut cell = DocCell::new(doc_id);
        for (i, c) in ops.into_iter().enumerate() {
            if c.revision != i as u64 + 1 {
                return Err(CollabError::InvalidOp(format!("log gap at revision {}", i + 1)));
            }
            if !c.op.to_edit().fits(cell.chars.len()) {
                return Err(CollabError::InvalidOp(format!("revision {} is out of bounds", c.revision)));
            }
            cell.push(c);
        }
        self.docs.write().insert(doc_id.to_owned(), Arc::new(Mutex::new(cell)));
        Ok(())
    }

    pub fn doc_ids(&self) -> Vec<String> {
        let mut v: Vec<String> = self.docs.read().keys().cloned().collect();
        v.sort();
        v
    }

    fn cell(&self, doc_id: &str) -> Result<Arc<Mutex<DocCell>>, CollabError> {
        self.docs
            .read()
            .get(doc_id)
            .cloned()
            .ok_or_else(|| CollabError::DocUnknown(doc_id.to_owned()))
    }

    /// Transforms `op` over everything committed since its base and appends
    /// the result. Ops that do not fit the document at their base commit as
    /// empty deletes. With `session_id`, each log record is also written as a
    /// DOC_OP event for that session before it is applied.
    pub fn submit_op(&self, op: DocOp, session_id: Option<&str>) -> Result<SubmitResult, CollabError> {
        match &op.kind {
            OpKind::Insert { text } if text.is_empty() => {
                return Err(CollabError::InvalidOp("insert text is empty".into()))
            }
            OpKind::Delete { length: 0 } => return Err(CollabError::InvalidOp("delete length is zero".into())),
            _ => {}
        }
        let cell = self.cell(&op.doc_id)?;
        let mut doc = cell.lock();
        let current = doc.revision();
        if op.base_revision > current {
            return Err(CollabError::BaseAhead {
                base: op.base_revision,
                current,
            });
        }
        let oldest = current.saturating_sub(self.retention);
        if op.base_revision < oldest {
            return Err(CollabError::StaleBase {
                base: op.base_revision,
                oldest,
            });
        }
        let edit = op.to_edit();
        let transformed = if edit.fits(doc.lens[op.base_revision as usize]) {
            let concurrent: Vec<Edit> = doc.log[op.base_revision as usize..]
                .iter()
                .map(|c| c.op.to_edit())
                .collect();
            transform_seq(concurrent, vec![edit]).1
        } else {
            Vec::new()
        };
        let now = self.clock.now_ms();
        let mut committed = Vec::new();
        let noop = transformed.is_empty();
        let edits = if noop {
            let pos = op.position.min(doc.chars.len());
            vec![Edit::Delete { pos, len: 0 }]
        } else {
            transformed
        };
        for (i, e) in edits.into_iter().enumerate() {
            let base = current + i as u64;
            debug_assert!(e.fits(doc.chars.len()));
            let c = CommittedOp {
                revision: base + 1,
                submitted_base: op.base_revision,
                committed_at_ms: now,
                noop,
                op: DocOp::from_edit(&op, e, base),
            };
            if let (Some(sink), Some(sid)) = (&self.sink, session_id) {
                sink.emit(sid, DOC_OP, &doc.doc_id, c.to_payload())?;
            }
            doc.push(c.clone());
            committed.push(c);
        }
        Ok(SubmitResult {
            committed,
            new_revision: doc.revision(),
        })
    }

    pub fn state(&self, doc_id: &str) -> Result<DocumentState, CollabError> {
        let cell = self.cell(doc_id)?;
        let doc = cell.lock();
        Ok(DocumentState {
            doc_id: doc.doc_id.clone(),
            revision: doc.revision(),
            content: doc.chars.iter().collect(),
            op_log: doc.log.clone(),
        })
    }

    pub fn content(&self, doc_id: &str) -> Result<(u64, String), CollabError> {
        let cell = self.cell(doc_id)?;
        let doc = cell.lock();
        Ok((doc.revision(), doc.chars.iter().collect()))
    }

    pub fn replay(&self, doc_id: &str, up_to_revision: u64) -> Result<String, CollabError> {
        let cell = self.cell(doc_id)?;
        let doc = cell.lock();
        if up_to_revision > doc.revision() {
            return Err(CollabError::RevisionUnknown {
                requested: up_to_revision,
                current: doc.revision(),
            });
        }
        Ok(fold_log(&doc.log[..up_to_revision as usize]))
    }

    /// Ops with revision greater than `from_revision`, then live commits.
    pub fn subscribe_doc(&self, doc_id: &str, from_revision: u64) -> Result<DocStream, CollabError> {
        let cell = self.cell(doc_id)?;
        let mut doc = cell.lock();
        if from_revision > doc.revision() {
            return Err(CollabError::RevisionUnknown {
                requested: from_revision,
                current: doc.revision(),
            });
        }
        let backlog = doc.log[from_revision as usize..].iter().cloned().collect();
        let (tx, rx) = unbounded();
        doc.subscribers.push(tx);
        Ok(DocStream { backlog, live: rx })
    }

    /// Read-only view merging same-author typing bursts.
    pub fn coalesced(&self, doc_id: &str, burst_ms: u64) -> Result<Vec<CoalescedEdit>, CollabError> {
        Ok(coalesce(&self.state(doc_id)?.op_log, burst_ms))
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CoalescedEdit {
    pub author: String,
    pub first_revision: u64,
    pub last_revision: u64,
    pub start_ms: u64,
    pub end_ms: u64,
    pub position: usize,
    #[serde(flatten)]
    pub kind: OpKind,
}

/// Default burst window for [`coalesce`].
pub const BURST_MS: u64 = 500;

/// Merges consecutive ops by one author less than `burst_ms` apart when they
/// continue each other: typing forward, backspacing, or forward-deleting.
/// Empty deletes are skipped.
pub fn coalesce(log: &[CommittedOp], burst_ms: u64) -> Vec<CoalescedEdit> {
    let mut out: Vec<CoalescedEdit> = Vec::new();
    for c in log.iter().filter(|c| !c.noop) {
        if let Some(last) = out.last_mut() {
            let close = last.author == c.op.author && c.committed_at_ms.saturating_sub(last.end_ms) < burst_ms;
            let merged = close
                && match (&mut last.kind, &c.op.kind) {
                    (OpKind::Insert { text }, OpKind::Insert { text: more })
                        if c.op.position == last.position + text.chars().count() =>
                    {
                        text.push_str(more);
                        true
                    }
                    (OpKind::Delete { length }, OpKind::Delete { length: more }) => {
                        if c.op.position + more == last.position {
                            last.position = c.op.position;
                            *length += more;
                            true
                        } else if c.op.position == last.position {
                            *length += more;
                            true
                        } else {
                            false
                        }
                    }
                    _ => false,
                };
            if merged {
                last.last_revision = c.revision;
                last.end_ms = c.committed_at_ms;
                continue;
            }
        }
        out.push(CoalescedEdit {
            author: c.op.author.clone(),
            first_revision: c.revision,
            last_revision: c.revision,
            start_ms: c.committed_at_ms,
            end_ms: c.committed_at_ms,
            position: c.op.position,
            kind: c.op.kind.clone(),
        });
    }
    out
}
