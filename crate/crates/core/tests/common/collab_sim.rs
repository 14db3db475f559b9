//! Deterministic multi-client document simulator.

use std::collections::{BTreeMap, VecDeque};
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use regulearn::clock::ManualClock;
use regulearn::collab::{fold_log, DocClient, DocHub, DocOp, DocStream, OpKind};
use regulearn::ingest::{AckStatus, IngestAck, IngestError, TraceSink};
use serde_json::Value;

/// Counts DOC_OP trace records instead of storing them.
#[derive(Default)]
pub struct CountingSink(pub AtomicU64);

impl TraceSink for CountingSink {
    fn emit(
        &self,
        _session_id: &str,
        action: &str,
        _target: &str,
        _payload: BTreeMap<String, Value>,
    ) -> Result<IngestAck, IngestError> {
        assert_eq!(action, "DOC_OP");
        let n = self.0.fetch_add(1, Ordering::SeqCst) + 1;
        Ok(IngestAck {
            event_id: format!("op-{n}"),
            server_seq: n,
            status: AckStatus::Committed,
        })
    }
}

pub struct Sim {
    pub hub: DocHub,
    pub clients: Vec<DocClient>,
    streams: Vec<DocStream>,
    outbox: Vec<VecDeque<DocOp>>,
    clock: Arc<ManualClock>,
    pub trace: Arc<CountingSink>,
}

impl Sim {
    pub fn new(n: usize) -> Self {
        let clock = Arc::new(ManualClock::new(0));
        let trace = Arc::new(CountingSink::default());
        let hub = DocHub::new(clock.clone(), Some(trace.clone()));
        hub.create_doc("d").unwrap();
        let clients = (0..n).map(|i| DocClient::new("d", &format!("u{i}"))).collect();
        let streams = (0..n).map(|_| hub.subscribe_doc("d", 0).unwrap()).collect();
        Self {
            hub,
            clients,
            streams,
            outbox: vec![VecDeque::new(); n],
            clock,
            trace,
        }
    }

    pub fn local_edit(&mut self, i: usize, rng: &mut ChaCha8Rng) {
        let c = &mut self.clients[i];
        let len = c.len();
        let op = if len == 0 || rng.gen_bool(0.6) {
            let pos = rng.gen_range(0..=len);
            let n = rng.gen_range(1..=3);
            let text: String = (0..n).map(|_| rng.gen_range(b'a'..=b'z') as char).collect();
            c.insert(pos, &text)
        } else {
            let pos = rng.gen_range(0..len);
            let n = rng.gen_range(1..=(len - pos).min(4));
            c.delete(pos, n)
        };
        self.outbox[i].extend(op);
    }

    pub fn deliver_to_server(&mut self, i: usize) -> bool {
        match self.outbox[i].pop_front() {
            Some(op) => {
                self.clock.advance(7);
                self.hub.submit_op(op, Some("s")).expect("client ops are always accepted");
                true
            }
            None => false,
        }
    }

    pub fn deliver_to_client(&mut self, i: usize) -> bool {
        match self.streams[i].try_next() {
            Some(c) => {
                let next = self.clients[i].receive(&c);
                self.outbox[i].extend(next);
                true
            }
            None => false,
        }
    }

    pub fn quiesce(&mut self) {
        loop {
            let mut progressed = false;
            for i in 0..self.clients.len() {
                while self.deliver_to_server(i) {
                    progressed = true;
                }
                while self.deliver_to_client(i) {
                    progressed = true;
                }
            }
            if !progressed {
                break;
            }
        }
    }
}

/// Random interleaving of `ops` local edits over 2..=5 clients, then
/// quiescence; panics on divergence or a bad op log.
pub fn run_seed(seed: u64, ops: usize) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = rng.gen_range(2..=5);
    let mut sim = Sim::new(n);
    let mut generated = 0;
    while generated < ops {
        let i = rng.gen_range(0..n);
        match rng.gen_range(0..3) {
            0 => {
                sim.local_edit(i, &mut rng);
                generated += 1;
            }
            1 => {
                sim.deliver_to_server(i);
            }
            _ => {
                sim.deliver_to_client(i);
            }
        }
    }
    sim.quiesce();
    let state = sim.hub.state("d").unwrap();
    for c in &sim.clients {
        assert!(c.is_idle());
        assert_eq!(c.content(), state.content, "seed {seed}: client {} diverged", c.author);
    }
    assert_eq!(state.revision as usize, state.op_log.len());
    assert_eq!(sim.trace.0.load(Ordering::SeqCst), state.revision, "seed {seed}: trace count");
    let mut shadow: Vec<char> = Vec::new();
    for (r, c) in state.op_log.iter().enumerate() {
        let fits = match &c.op.kind {
            OpKind::Insert { .. } => c.op.position <= shadow.len(),
            OpKind::Delete { length } => c.op.position + length <= shadow.len(),
        };
        assert!(fits, "seed {seed}: revision {} out of bounds", c.revision);
        c.op.to_edit().apply(&mut shadow);
        assert_eq!(sim.hub.replay("d", r as u64 + 1).unwrap(), shadow.iter().collect::<String>());
    }
    assert_eq!(fold_log(&state.op_log), state.content);
}
