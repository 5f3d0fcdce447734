use std::fs::{File, OpenOptions};
use std::io::{BufWriter, Write};
use std::path::Path;
use std::sync::Mutex;

use serde::{Deserialize, Serialize};

use crate::error::Result;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AgentId {
    Operator,
    Supervisor,
    UserWeighting,
    OruManagement,
    Monitoring,
    /// Distributed unit running the precoder.
    Odu,
    Memory,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Interface {
    /// Non-RT to near-RT policy channel.
    A1,
    /// Near-RT controller to the RAN nodes.
    E2,
    /// Between agents of the same controller.
    Internal,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Message {
    /// Global send order.
    pub seq: u64,
    pub loop_index: u64,
    pub from: AgentId,
    pub to: AgentId,
    pub interface: Interface,
    pub body: String,
}

#[derive(Debug, Default)]
struct Inner {
    log: Vec<Message>,
    sink: Option<BufWriter<File>>,
}

/// In-process message bus. Sends are serialized under one lock, so every
/// sender's messages keep their order. Optionally mirrors each message as a
/// JSON line into an append-only run record.
#[derive(Debug, Default)]
pub struct Bus {
    inner: Mutex<Inner>,
}

impl Bus {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn with_record_file(path: impl AsRef<Path>) -> Result<Self> {
        let f = OpenOptions::new().create(true).append(true).open(path)?;
        Ok(Self { inner: Mutex::new(Inner { log: Vec::new(), sink: Some(BufWriter::new(f)) }) })
    }

    pub fn send(&self, loop_index: u64, from: AgentId, to: AgentId, interface: Interface, body: impl Into<String>) -> Result<u64> {
        let mut g = self.inner.lock().unwrap_or_else(|p| p.into_inner());
        let seq = g.log.len() as u64;
        let msg = Message { seq, loop_index, from, to, interface, body: body.into() };
        if let Some(w) = g.sink.as_mut() {
            serde_json::to_writer(&mut *w, &msg)?;
            w.write_all(b"\n")?;
            w.flush()?;
        }
        tracing::debug!(target: "bus", seq, ?from, ?to, body = %msg.body, "message");
        g.log.push(msg);
        Ok(seq)
    }

    pub fn len(&self) -> usize {
        self.inner.lock().unwrap_or_else(|p| p.into_inner()).log.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn messages(&self) -> Vec<Message> {
        self.since(0)
    }

    /// Messages with `seq ≥ first`.
    pub fn since(&self, first: u64) -> Vec<Message> {
        let g = self.inner.lock().unwrap_or_else(|p| p.into_inner());
        g.log.iter().skip(first as usize).cloned().collect()
    }
}
