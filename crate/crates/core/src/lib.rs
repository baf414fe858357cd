//! Protocol core for a hybrid VRU-protection pipeline.
//!
//! A vulnerable road user (VRU) publishes position-and-time (POTI) reports
//! over a topic bus. A middleware routes each report to the roadside units
//! whose area it concerns, which broadcast a personal safety message (PSM)
//! or a hop-limited DENM over a single-hop DSRC channel. The on-board unit
//! in a vehicle keeps a track table and raises alerts from time-to-collision.
//!
//! Everything here is `no_std` + `alloc` and free of IO. Scheduling, noise,
//! latency models and file formats live in the `vrulink` crate.

#![no_std]
#![forbid(unsafe_code)]

extern crate alloc;

#[cfg(test)]
extern crate std;

pub mod agent;
pub mod bus;
pub mod dsrc;
pub mod geo;
pub mod kinematics;
pub mod messages;
pub mod middleware;
pub mod obu;

mod rng;

pub use agent::{Activity, AgentError, PotiSample, SmootherParams, TriggerParams, VruAgent, VulnerabilityState};
pub use bus::{BusError, BusMessage, Delivery, InProcessBus, SubscriptionId, TopicFilter, TopicName};
pub use dsrc::{ChannelParams, NodeRole, RadioNode};
pub use geo::{EnuVector, GeoError, GeoPoint, Geofence, EARTH_RADIUS_M};
pub use kinematics::{BodyState, KinematicsParams};
pub use messages::{BasicType, CodecError, DenmMessage, Frame, PotiReport, PsmMessage, CAUSE_HUMAN_PRESENCE};
pub use middleware::{Middleware, MiddlewareMode, RsuRegistration};
pub use obu::{AlertAssessment, AlertLevel, Obu, TrackSource, VruTrack};
