//! Bounded per-client stream buffer.
//!
//! The producer never blocks. When the buffer is full the oldest
//! Observation or Action frame is dropped and a [`WireMessage::Gap`] takes
//! its place, merged with an adjacent gap when there is one. Other messages
//! are never dropped, so the buffer can exceed its capacity while it holds
//! nothing droppable.

use std::collections::VecDeque;
use std::sync::Mutex;

use tokio::sync::Notify;

use crate::wire::WireMessage;

#[derive(Debug, Default)]
struct Inner {
    queue: VecDeque<WireMessage>,
    closed: bool,
    dropped: u64,
}

#[derive(Debug)]
pub struct StreamBuffer {
    capacity: usize,
    inner: Mutex<Inner>,
    notify: Notify,
}

fn absorb(gap: &mut WireMessage, tick: u64) {
    if let WireMessage::Gap {
        dropped,
        first_tick,
        last_tick,
    } = gap
    {
        *dropped += 1;
        *first_tick = (*first_tick).min(tick);
        *last_tick = (*last_tick).max(tick);
    }
}

impl StreamBuffer {
    pub fn new(capacity: usize) -> Self {
        Self {
            capacity: capacity.max(1),
            inner: Mutex::new(Inner::default()),
            notify: Notify::new(),
        }
    }

    fn lock(&self) -> std::sync::MutexGuard<'_, Inner> {
        self.inner.lock().unwrap_or_else(|e| e.into_inner())
    }

    pub fn push(&self, msg: WireMessage) {
        let mut inner = self.lock();
        if inner.closed {
            return;
        }
        if inner.queue.len() >= self.capacity {
            if let Some(i) = inner.queue.iter().position(WireMessage::is_droppable) {
                let victim = inner.queue.remove(i).expect("index from position");
                let tick = victim.tick().unwrap_or(0);
                inner.dropped += 1;
                let q = &mut inner.queue;
                if i > 0 && matches!(q[i - 1], WireMessage::Gap { .. }) {
                    absorb(&mut q[i - 1], tick);
                } else if matches!(q.get(i), Some(WireMessage::Gap { .. })) {
                    absorb(&mut q[i], tick);
                } else {
                    q.insert(
                        i,
                        WireMessage::Gap {
                            dropped: 1,
                            first_tick: tick,
                            last_tick: tick,
                        },
                    );
                }
            }
        }
        inner.queue.push_back(msg);
        drop(inner);
        self.notify.notify_one();
    }

    /// No further pushes; pending messages stay readable.
    pub fn close(&self) {
        self.lock().closed = true;
        self.notify.notify_one();
    }

    pub fn try_pop(&self) -> Option<WireMessage> {
        self.lock().queue.pop_front()
    }

    /// Next message, or `None` once closed and drained.
    pub async fn pop(&self) -> Option<WireMessage> {
        loop {
            let notified = self.notify.notified();
            {
                let mut inner = self.lock();
                if let Some(m) = inner.queue.pop_front() {
                    return Some(m);
                }
                if inner.closed {
                    return None;
                }
            }
            notified.await;
        }
    }

    pub fn len(&self) -> usize {
        self.lock().queue.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Frames dropped so far.
    pub fn dropped(&self) -> u64 {
        self.lock().dropped
    }
}
