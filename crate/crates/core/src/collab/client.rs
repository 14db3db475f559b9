//! Client-side counterpart of the server transform, one op in flight.

use std::collections::VecDeque;

use super::ot::{transform_seq, Edit};
use super::{CommittedOp, DocOp, OpKind};

/// Mirrors a document locally. Local edits apply immediately; at most one op
/// is awaiting commit and later ones queue behind it.
#[derive(Debug, Clone)]
pub struct DocClient {
    pub doc_id: String,
    pub author: String,
    chars: Vec<char>,
    revision: u64,
    inflight: Option<(String, Vec<Edit>)>,
    own_received: usize,
    buffer: VecDeque<Edit>,
    next_op: u64,
}

impl DocClient {
    pub fn new(doc_id: &str, author: &str) -> Self {
        Self {
            doc_id: doc_id.into(),
            author: author.into(),
            chars: Vec::new(),
            revision: 0,
            inflight: None,
            own_received: 0,
            buffer: VecDeque::new(),
            next_op: 0,
        }
    }

    pub fn content(&self) -> String {
        self.chars.iter().collect()
    }

    pub fn len(&self) -> usize {
        self.chars.len()
    }

    pub fn is_empty(&self) -> bool {
        self.chars.is_empty()
    }

    pub fn revision(&self) -> u64 {
        self.revision
    }

    /// Nothing in flight or queued.
    pub fn is_idle(&self) -> bool {
        self.inflight.is_none() && self.buffer.is_empty()
    }

    /// Applies a local insert; returns an op to send when nothing is in flight.
    pub fn insert(&mut self, pos: usize, text: &str) -> Option<DocOp> {
        self.local(Edit::Insert {
            pos,
            text: text.chars().collect(),
            author: self.author.clone(),
        })
    }

    pub fn delete(&mut self, pos: usize, len: usize) -> Option<DocOp> {
        self.local(Edit::Delete { pos, len })
    }

    fn local(&mut self, edit: Edit) -> Option<DocOp> {
        assert!(edit.fits(self.chars.len()) && !edit.is_noop(), "local edit must be valid");
        edit.apply(&mut self.chars);
        self.buffer.push_back(edit);
        self.flush()
    }

    fn flush(&mut self) -> Option<DocOp> {
        if self.inflight.is_some() {
            return None;
        }
        let edit = self.buffer.pop_front()?;
        self.next_op += 1;
        let op_id = format!("{}-{}", self.author, self.next_op);
        let op = match &edit {
            Edit::Insert { pos, text, .. } => DocOp {
                op_id: op_id.clone(),
                doc_id: self.doc_id.clone(),
                author: self.author.clone(),
                base_revision: self.revision,
                position: *pos,
                kind: OpKind::Insert { text: text.iter().collect() },
            },
            Edit::Delete { pos, len } => DocOp {
                op_id: op_id.clone(),
                doc_id: self.doc_id.clone(),
                author: self.author.clone(),
                base_revision: self.revision,
                position: *pos,
                kind: OpKind::Delete { length: *len },
            },
        };
        self.inflight = Some((op_id, vec![edit]));
        self.own_received = 0;
        Some(op)
    }

    /// Processes the next committed op from the server stream. Returns the
    /// next op to send once the in-flight op is fully committed.
    ///
    /// The server commits the in-flight op as many records as the local
    /// transform left pending edits (one empty delete if none are left), so
    /// the client knows when its op is done without a separate ack.
    pub fn receive(&mut self, c: &CommittedOp) -> Option<DocOp> {
        debug_assert_eq!(c.revision, self.revision + 1, "stream must be gap-free");
        self.revision = c.revision;
        if let Some((id, pending)) = &self.inflight {
            if *id == c.op.op_id {
                self.own_received += 1;
                if self.own_received >= pending.len().max(1) {
                    self.inflight = None;
                    return self.flush();
                }
                return None;
            }
        }
        let mut server = vec![c.op.to_edit()];
        if let Some((_, pending)) = self.inflight.as_mut() {
            let (s, p) = transform_seq(server, std::mem::take(pending));
            *pending = p;
            server = s;
        }
        let (s, b) = transform_seq(server, self.buffer.drain(..).collect());
        self.buffer = b.into();
        for e in s {
            e.apply(&mut self.chars);
        }
        None
    }
}
