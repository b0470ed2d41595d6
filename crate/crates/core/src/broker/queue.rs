use std::collections::VecDeque;
use std::sync::atomic::{AtomicU64, Ordering};

use parking_lot::Mutex;

use super::message::{Message, QueueInfo};

/// Bounded FIFO. Overflow drops the oldest message and counts it.
#[derive(Debug)]
pub(crate) struct QueueState {
    pub name: String,
    pub home_node: String,
    pub depth_limit: u64,
    buffer: Mutex<VecDeque<Message>>,
    dropped: AtomicU64,
}

impl QueueState {
    pub fn new(name: impl Into<String>, home_node: impl Into<String>, depth_limit: u64) -> Self {
        Self {
            name: name.into(),
            home_node: home_node.into(),
            depth_limit: depth_limit.max(1),
            buffer: Mutex::new(VecDeque::new()),
            dropped: AtomicU64::new(0),
        }
    }

    /// Appends; returns how many old messages were dropped to make room.
    pub fn push(&self, message: Message) -> u64 {
        let mut buf = self.buffer.lock();
        buf.push_back(message);
        self.trim(&mut buf)
    }

    fn trim(&self, buf: &mut VecDeque<Message>) -> u64 {
        let mut dropped = 0;
        while buf.len() as u64 > self.depth_limit {
            buf.pop_front();
            dropped += 1;
        }
        if dropped > 0 {
            self.dropped.fetch_add(dropped, Ordering::Relaxed);
        }
        dropped
    }

    pub fn pop_batch(&self, max: usize) -> Vec<Message> {
        let mut buf = self.buffer.lock();
        let n = max.min(buf.len());
        buf.drain(..n).collect()
    }

    /// Puts messages back at the head, preserving their order.
    pub fn requeue_front(&self, messages: Vec<Message>) {
        let mut buf = self.buffer.lock();
        for m in messages.into_iter().rev() {
            buf.push_front(m);
        }
        self.trim(&mut buf);
    }

    pub fn depth(&self) -> u64 {
        self.buffer.lock().len() as u64
    }

    pub fn dropped(&self) -> u64 {
        self.dropped.load(Ordering::Relaxed)
    }

    pub fn info(&self) -> QueueInfo {
        QueueInfo {
            name: self.name.clone(),
            home_node: self.home_node.clone(),
            depth: self.depth(),
            depth_limit: self.depth_limit,
            dropped: self.dropped(),
        }
    }
}
