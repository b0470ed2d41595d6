use std::collections::HashMap;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use parking_lot::Mutex;
use serde::{Deserialize, Serialize};
use serde_json::value::RawValue;
use time::macros::format_description;
use time::OffsetDateTime;

use crate::auth::ARCHIVE_QUEUE;
use crate::broker::protocol::{Request, Response};
use crate::broker::Message;
use crate::clock::{Millis, SharedClock};
use crate::gateway::Fabric;

const BATCH: u32 = 1_000;

/// One line of the historical log.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ArchiveRecord {
    pub exchange: String,
    pub routing_key: String,
    pub publisher_id: String,
    pub timestamp: Millis,
    pub payload: Box<RawValue>,
    pub source_node: String,
    pub archived_at: Millis,
}

impl ArchiveRecord {
    fn from_message(m: Message, source_node: &str, archived_at: Millis) -> Self {
        let text = String::from_utf8_lossy(&m.payload).into_owned();
        let payload = RawValue::from_string(text.clone()).unwrap_or_else(|_| {
            RawValue::from_string(serde_json::Value::String(text).to_string())
                .expect("a JSON string is valid JSON")
        });
        Self {
            exchange: m.exchange,
            routing_key: m.routing_key,
            publisher_id: m.publisher_id,
            timestamp: m.timestamp,
            payload,
            source_node: source_node.to_string(),
            archived_at,
        }
    }
}

#[derive(Debug, Default)]
struct NodeState {
    last_archived_at: Millis,
    /// Records drained but not yet written; retried next tick.
    unwritten: Vec<ArchiveRecord>,
}

/// Drains every node's archive queue into `{dir}/{node}-{YYYY-MM-DD}.ndjson`.
#[derive(Debug)]
pub struct Archiver {
    fabric: Arc<Fabric>,
    dir: PathBuf,
    clock: SharedClock,
    nodes: Mutex<HashMap<String, NodeState>>,
    tick_lock: tokio::sync::Mutex<()>,
}

impl Archiver {
    pub fn new(fabric: Arc<Fabric>, dir: impl Into<PathBuf>, clock: SharedClock) -> Self {
        Self {
            fabric,
            dir: dir.into(),
            clock,
            nodes: Mutex::new(HashMap::new()),
            tick_lock: tokio::sync::Mutex::new(()),
        }
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }

    pub fn file_for(&self, node_id: &str, at: Millis) -> PathBuf {
        let day = OffsetDateTime::from_unix_timestamp_nanos(at as i128 * 1_000_000)
            .unwrap_or(OffsetDateTime::UNIX_EPOCH)
            .format(format_description!("[year]-[month]-[day]"))
            .expect("date format is static");
        self.dir.join(format!("{node_id}-{day}.ndjson"))
    }

    /// Archives everything currently queued on reachable nodes. Returns the
    /// number of records appended.
    pub async fn tick(&self) -> u64 {
        let _serial = self.tick_lock.lock().await;
        let mut total = 0;
        for node in self.fabric.router().registry().nodes() {
            let mut pending = std::mem::take(&mut self.nodes.lock().entry(node.node_id.clone()).or_default().unwritten);
            loop {
                if !pending.is_empty() {
                    match self.append(&node.node_id, &pending) {
                        Ok(()) => total += pending.len() as u64,
                        Err(e) => {
                            tracing::error!(node = %node.node_id, error = %e, "archive write failed");
                            break;
                        }
                    }
                    pending.clear();
                }
                let request = Request::Consume { queue: ARCHIVE_QUEUE.into(), max: BATCH };
                let batch = match self.fabric.admin_call(&node, request).await {
                    Ok(Response::Messages(m)) => m,
                    Ok(other) => {
                        tracing::warn!(node = %node.node_id, reply = ?other, "unexpected archive reply");
                        break;
                    }
                    Err(e) => {
                        tracing::warn!(node = %node.node_id, error = %e, "node unreachable, skipped");
                        break;
                    }
                };
                if batch.is_empty() {
                    break;
                }
                let stamp = {
                    let mut nodes = self.nodes.lock();
                    let state = nodes.entry(node.node_id.clone()).or_default();
                    state.last_archived_at = state.last_archived_at.max(self.clock.now_ms());
                    state.last_archived_at
                };
                pending = batch
                    .into_iter()
                    .map(|m| ArchiveRecord::from_message(m, &node.node_id, stamp))
                    .collect();
            }
            if !pending.is_empty() {
                self.nodes.lock().entry(node.node_id.clone()).or_default().unwritten = pending;
            }
        }
        tracing::info!(archived = total, "archiver tick");
        total
    }

    fn append(&self, node_id: &str, records: &[ArchiveRecord]) -> std::io::Result<()> {
        std::fs::create_dir_all(&self.dir)?;
        let mut by_file: HashMap<PathBuf, Vec<&ArchiveRecord>> = HashMap::new();
        for r in records {
            by_file.entry(self.file_for(node_id, r.archived_at)).or_default().push(r);
        }
        for (path, rows) in by_file {
            let mut buf = Vec::new();
            for r in rows {
                serde_json::to_writer(&mut buf, r)?;
                buf.push(b'\n');
            }
            let mut file = std::fs::OpenOptions::new().create(true).append(true).open(&path)?;
            file.write_all(&buf)?;
        }
        Ok(())
    }

    /// Reads back every record under the archive directory.
    pub fn read_all(dir: &Path) -> std::io::Result<Vec<ArchiveRecord>> {
        let mut out = Vec::new();
        let Ok(entries) = std::fs::read_dir(dir) else {
            return Ok(out);
        };
        let mut paths: Vec<PathBuf> = entries
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|p| p.extension().is_some_and(|x| x == "ndjson"))
            .collect();
        paths.sort();
        for p in paths {
            for line in std::fs::read_to_string(&p)?.lines().filter(|l| !l.is_empty()) {
                out.push(serde_json::from_str(line)?);
            }
        }
        Ok(out)
    }
}
