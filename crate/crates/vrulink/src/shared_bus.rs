//! Thread-safe bus front-end and the adapter trait shared with the MQTT client.

use std::collections::BTreeMap;
use std::sync::{Arc, Mutex};
use std::time::Instant;

use thiserror::Error;
use vrulink_core::bus::{BusError, FixedDelay, InProcessBus, SubscriptionId};

/// Called with (topic, payload) for every delivery.
pub type Handler = Box<dyn FnMut(&str, &[u8]) + Send>;

#[derive(Debug, Error)]
pub enum AdapterError {
    #[error("bus: {0}")]
    Bus(#[from] BusError),
    #[error("broker i/o: {0}")]
    Io(#[from] std::io::Error),
    #[error("broker protocol: {0}")]
    Protocol(String),
}

/// What a POTI publisher or the middleware needs from a transport.
pub trait PotiBus: Send + Sync {
    fn publish(&self, topic: &str, payload: &[u8]) -> Result<(), AdapterError>;
    fn subscribe(&self, pattern: &str, handler: Handler) -> Result<SubscriptionId, AdapterError>;
    fn unsubscribe(&self, id: SubscriptionId) -> Result<bool, AdapterError>;
}

/// Wall-clock wrapper around [`InProcessBus`] with immediate delivery.
///
/// Handlers run on the publishing thread. Each handler sits behind its own
/// lock, so deliveries to one subscription never overlap.
pub struct SharedBus {
    bus: Mutex<InProcessBus>,
    handlers: Mutex<BTreeMap<SubscriptionId, Arc<Mutex<Handler>>>>,
    epoch: Instant,
}

impl Default for SharedBus {
    fn default() -> Self {
        SharedBus { bus: Mutex::new(InProcessBus::new()), handlers: Mutex::new(BTreeMap::new()), epoch: Instant::now() }
    }
}

impl SharedBus {
    pub fn new() -> Self {
        Self::default()
    }

    fn now_ms(&self) -> u64 {
        self.epoch.elapsed().as_millis() as u64
    }
}

impl PotiBus for SharedBus {
    fn publish(&self, topic: &str, payload: &[u8]) -> Result<(), AdapterError> {
        let deliveries = {
            let mut bus = self.bus.lock().expect("bus lock");
            let now = self.now_ms();
            bus.publish(topic, payload.to_vec(), now, &mut FixedDelay(0))?;
            bus.poll(now)
        };
        for d in deliveries {
            let handler = self.handlers.lock().expect("handler map lock").get(&d.subscription).cloned();
            if let Some(h) = handler {
                let mut h = h.lock().expect("handler lock");
                h(d.message.topic.as_str(), &d.message.payload);
            }
        }
        Ok(())
    }

    fn subscribe(&self, pattern: &str, handler: Handler) -> Result<SubscriptionId, AdapterError> {
        let id = self.bus.lock().expect("bus lock").subscribe(pattern)?;
        self.handlers.lock().expect("handler map lock").insert(id, Arc::new(Mutex::new(handler)));
        Ok(id)
    }

    fn unsubscribe(&self, id: SubscriptionId) -> Result<bool, AdapterError> {
        let removed = self.bus.lock().expect("bus lock").unsubscribe(id);
        self.handlers.lock().expect("handler map lock").remove(&id);
        Ok(removed)
    }
}
