//! Topic publish/subscribe with deterministic, clock-driven delivery.
//!
//! Delivery is at-most-once per matching subscription and nothing is
//! retained: a subscriber only sees messages published after it joined.

use alloc::collections::{BTreeMap, BinaryHeap};
use alloc::string::{String, ToString};
use alloc::sync::Arc;
use alloc::vec::Vec;
use core::cmp::{Ordering, Reverse};
use core::fmt;

const SEPARATOR: char = '/';

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum BusError {
    EmptyTopic,
    EmptySegment(String),
    /// Wildcard in a publish topic, or misplaced wildcard in a filter.
    BadWildcard(String),
}

impl fmt::Display for BusError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            BusError::EmptyTopic => f.write_str("malformed topic: empty"),
            BusError::EmptySegment(t) => write!(f, "malformed topic `{t}`: empty segment"),
            BusError::BadWildcard(t) => write!(f, "malformed topic `{t}`: misplaced wildcard"),
        }
    }
}

impl core::error::Error for BusError {}

/// A concrete topic, e.g. `vru/7/poti`.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct TopicName(String);

impl TopicName {
    pub fn parse(s: &str) -> Result<Self, BusError> {
        if s.is_empty() {
            return Err(BusError::EmptyTopic);
        }
        for seg in s.split(SEPARATOR) {
            if seg.is_empty() {
                return Err(BusError::EmptySegment(s.to_string()));
            }
            if seg.contains(['+', '#']) {
                return Err(BusError::BadWildcard(s.to_string()));
            }
        }
        Ok(TopicName(s.to_string()))
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }

    pub fn segments(&self) -> impl Iterator<Item = &str> {
        self.0.split(SEPARATOR)
    }
}

impl fmt::Display for TopicName {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
enum Segment {
    Exact(String),
    /// `+`
    AnyOne,
    /// `#`, only last
    AnyRest,
}

/// A subscription pattern with `+` and `#` wildcards.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TopicFilter {
    raw: String,
    segments: Vec<Segment>,
}

impl TopicFilter {
    pub fn parse(s: &str) -> Result<Self, BusError> {
        if s.is_empty() {
            return Err(BusError::EmptyTopic);
        }
        let parts: Vec<&str> = s.split(SEPARATOR).collect();
        let last = parts.len() - 1;
        let mut segments = Vec::with_capacity(parts.len());
        for (i, seg) in parts.into_iter().enumerate() {
            let parsed = match seg {
                "" => return Err(BusError::EmptySegment(s.to_string())),
                "+" => Segment::AnyOne,
                "#" if i == last => Segment::AnyRest,
                _ if seg.contains(['+', '#']) => return Err(BusError::BadWildcard(s.to_string())),
                _ => Segment::Exact(seg.to_string()),
            };
            segments.push(parsed);
        }
        Ok(TopicFilter { raw: s.to_string(), segments })
    }

    pub fn as_str(&self) -> &str {
        &self.raw
    }

    pub fn matches(&self, topic: &TopicName) -> bool {
        let mut levels = topic.segments();
        for seg in &self.segments {
            match seg {
                Segment::AnyRest => return true,
                Segment::AnyOne => {
                    if levels.next().is_none() {
                        return false;
                    }
                }
                Segment::Exact(want) => match levels.next() {
                    Some(level) if level == want => {}
                    _ => return false,
                },
            }
        }
        levels.next().is_none()
    }
}

impl fmt::Display for TopicFilter {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.raw)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct SubscriptionId(pub u64);

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BusMessage {
    pub topic: TopicName,
    pub payload: Vec<u8>,
    pub publish_ts_ms: u64,
    /// Strictly increasing in publish order.
    pub seq: u64,
}

/// Source of per-delivery latency.
pub trait DeliveryDelay {
    fn delay_ms(&mut self, subscription: SubscriptionId, message: &BusMessage) -> u64;
}

impl<F: FnMut(SubscriptionId, &BusMessage) -> u64> DeliveryDelay for F {
    fn delay_ms(&mut self, subscription: SubscriptionId, message: &BusMessage) -> u64 {
        self(subscription, message)
    }
}

/// Every delivery takes the same time.
#[derive(Debug, Clone, Copy, Default)]
pub struct FixedDelay(pub u64);

impl DeliveryDelay for FixedDelay {
    fn delay_ms(&mut self, _: SubscriptionId, _: &BusMessage) -> u64 {
        self.0
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Delivery {
    pub subscription: SubscriptionId,
    pub deliver_at_ms: u64,
    pub delay_ms: u64,
    pub message: Arc<BusMessage>,
}

impl Delivery {
    fn key(&self) -> (u64, u64, SubscriptionId) {
        (self.deliver_at_ms, self.message.seq, self.subscription)
    }
}

impl Ord for Delivery {
    fn cmp(&self, other: &Self) -> Ordering {
        self.key().cmp(&other.key())
    }
}

impl PartialOrd for Delivery {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PublishReceipt {
    pub seq: u64,
    /// Number of subscriptions the message was queued for.
    pub fanout: usize,
}

/// Single-owner bus driven by an external clock.
#[derive(Debug, Default)]
pub struct InProcessBus {
    next_seq: u64,
    next_sub: u64,
    subscriptions: BTreeMap<SubscriptionId, TopicFilter>,
    queue: BinaryHeap<Reverse<Delivery>>,
}

impl InProcessBus {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn subscribe(&mut self, pattern: &str) -> Result<SubscriptionId, BusError> {
        let filter = TopicFilter::parse(pattern)?;
        let id = SubscriptionId(self.next_sub);
        self.next_sub += 1;
        self.subscriptions.insert(id, filter);
        Ok(id)
    }

    /// Pending deliveries to the handle are discarded as well.
    pub fn unsubscribe(&mut self, id: SubscriptionId) -> bool {
        let removed = self.subscriptions.remove(&id).is_some();
        if removed {
            self.queue.retain(|Reverse(d)| d.subscription != id);
        }
        removed
    }

    pub fn publish<D: DeliveryDelay + ?Sized>(
        &mut self,
        topic: &str,
        payload: Vec<u8>,
        now_ms: u64,
        delay: &mut D,
    ) -> Result<PublishReceipt, BusError> {
        let topic = TopicName::parse(topic)?;
        let seq = self.next_seq;
        self.next_seq += 1;
        let message = Arc::new(BusMessage { topic, payload, publish_ts_ms: now_ms, seq });
        let mut fanout = 0;
        for (id, filter) in &self.subscriptions {
            if filter.matches(&message.topic) {
                let d = delay.delay_ms(*id, &message);
                self.queue.push(Reverse(Delivery {
                    subscription: *id,
                    deliver_at_ms: now_ms.saturating_add(d),
                    delay_ms: d,
                    message: Arc::clone(&message),
                }));
                fanout += 1;
            }
        }
        Ok(PublishReceipt { seq, fanout })
    }

    /// Time of the earliest pending delivery.
    pub fn next_due(&self) -> Option<u64> {
        self.queue.peek().map(|Reverse(d)| d.deliver_at_ms)
    }

    /// Earliest delivery due at or before `now_ms`.
    pub fn pop_due(&mut self, now_ms: u64) -> Option<Delivery> {
        if self.next_due()? <= now_ms {
            self.queue.pop().map(|Reverse(d)| d)
        } else {
            None
        }
    }

    /// All deliveries due by `now_ms`, ordered by (arrival time, publish seq).
    pub fn poll(&mut self, now_ms: u64) -> Vec<Delivery> {
        let mut out = Vec::new();
        while let Some(d) = self.pop_due(now_ms) {
            out.push(d);
        }
        out
    }

    pub fn pending(&self) -> usize {
        self.queue.len()
    }
}
