//! Unit-disk single-hop broadcast and hop-limited DENM forwarding.

use alloc::collections::{BTreeMap, BTreeSet, VecDeque};
use alloc::string::String;
use alloc::vec::Vec;
use core::fmt;

use rand_core::RngCore;
use serde::{Deserialize, Serialize};

use crate::geo::{haversine_distance, GeoPoint};
use crate::messages::DenmMessage;
use crate::rng::unit_f64;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ChannelParams {
    pub range_m: f64,
    pub loss_prob: f64,
    pub per_hop_delay_ms: u64,
}

impl Default for ChannelParams {
    fn default() -> Self {
        ChannelParams { range_m: 130.0, loss_prob: 0.0, per_hop_delay_ms: 2 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ChannelError(pub &'static str);

impl fmt::Display for ChannelError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "channel parameter `{}` out of range", self.0)
    }
}

impl core::error::Error for ChannelError {}

impl ChannelParams {
    pub fn validate(&self) -> Result<(), ChannelError> {
        if !(self.range_m.is_finite() && self.range_m > 0.0) {
            return Err(ChannelError("range_m"));
        }
        if !(0.0..=1.0).contains(&self.loss_prob) {
            return Err(ChannelError("loss_prob"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum NodeRole {
    Rsu,
    Obu,
    VruDevice,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RadioNode {
    pub node_id: String,
    pub position: GeoPoint,
    pub role: NodeRole,
}

/// Outcome of one broadcast at one candidate receiver.
#[derive(Debug, Clone, PartialEq)]
pub struct Reception {
    pub receiver_id: String,
    pub distance_m: f64,
    pub in_range: bool,
    pub delivered: bool,
    pub delay_ms: u64,
}

/// Propagate one frame from `sender` to every other node.
///
/// One loss draw is taken per in-range receiver, in `nodes` order, so the
/// outcome is a function of the rng state, positions and parameters. The
/// frame content plays no part in propagation.
pub fn broadcast_detailed<R: RngCore + ?Sized>(
    sender: &RadioNode,
    nodes: &[RadioNode],
    ch: &ChannelParams,
    rng: &mut R,
) -> Vec<Reception> {
    let mut out = Vec::with_capacity(nodes.len().saturating_sub(1));
    for node in nodes {
        if node.node_id == sender.node_id {
            continue;
        }
        let distance_m = haversine_distance(sender.position, node.position);
        let in_range = distance_m <= ch.range_m;
        let delivered = in_range && unit_f64(rng) >= ch.loss_prob;
        out.push(Reception {
            receiver_id: node.node_id.clone(),
            distance_m,
            in_range,
            delivered,
            delay_ms: ch.per_hop_delay_ms,
        });
    }
    out
}

/// Receivers that got the frame, with their delivery delay.
pub fn broadcast<R: RngCore + ?Sized>(
    sender: &RadioNode,
    nodes: &[RadioNode],
    ch: &ChannelParams,
    rng: &mut R,
) -> Vec<(String, u64)> {
    broadcast_detailed(sender, nodes, ch, rng)
        .into_iter()
        .filter(|r| r.delivered)
        .map(|r| (r.receiver_id, r.delay_ms))
        .collect()
}

/// Duplicate-suppression key for DENMs.
pub type DenmKey = (u32, u16);

pub fn denm_key(d: &DenmMessage) -> DenmKey {
    (d.header.station_id, d.sequence_number)
}

/// Decide whether `node` rebroadcasts a received DENM.
///
/// The key is recorded on first sight, so later copies are never forwarded.
pub fn forward_denm(node: &RadioNode, d: &DenmMessage, seen: &mut BTreeSet<DenmKey>) -> Option<DenmMessage> {
    if !seen.insert(denm_key(d)) {
        return None;
    }
    if d.hop_limit == 0 {
        return None;
    }
    let center = d.dest_center().ok()?;
    if haversine_distance(center, node.position) > d.dest_radius_m as f64 {
        return None;
    }
    Some(DenmMessage { hop_limit: d.hop_limit - 1, ..*d })
}

#[derive(Debug, Clone, PartialEq)]
pub struct FloodReception {
    pub node_id: String,
    /// Radio hops from the originator.
    pub hops: u32,
    pub at_ms: u64,
}

/// Flood a DENM from `origin` with immediate rebroadcasts; first reception
/// per node other than the originator is reported.
pub fn flood<R: RngCore + ?Sized>(
    origin: usize,
    denm: &DenmMessage,
    nodes: &[RadioNode],
    ch: &ChannelParams,
    rng: &mut R,
    start_ms: u64,
) -> Vec<FloodReception> {
    let mut seen: BTreeMap<usize, BTreeSet<DenmKey>> = BTreeMap::new();
    seen.entry(origin).or_default().insert(denm_key(denm));
    let mut first: BTreeMap<usize, FloodReception> = BTreeMap::new();
    let mut queue = VecDeque::from([(origin, *denm, start_ms, 0u32)]);
    while let Some((sender, frame, t, hops)) = queue.pop_front() {
        for rx in broadcast_detailed(&nodes[sender], nodes, ch, rng) {
            if !rx.delivered {
                continue;
            }
            let idx = nodes.iter().position(|n| n.node_id == rx.receiver_id).expect("receiver in node set");
            let at = t + rx.delay_ms;
            if idx == origin {
                continue;
            }
            first.entry(idx).or_insert(FloodReception { node_id: rx.receiver_id, hops: hops + 1, at_ms: at });
            if let Some(copy) = forward_denm(&nodes[idx], &frame, seen.entry(idx).or_default()) {
                queue.push_back((idx, copy, at, hops + 1));
            }
        }
    }
    let mut out: Vec<_> = first.into_values().collect();
    out.sort_by(|a, b| (a.at_ms, a.hops).cmp(&(b.at_ms, b.hops)).then_with(|| a.node_id.cmp(&b.node_id)));
    out
}
