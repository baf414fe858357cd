//! Fixed-step scenario engine.
//!
//! Message hops carry exact timestamps and are processed in time order when
//! the engine reaches the step that contains them. Entity motion, fixes and
//! alert evaluation happen on step boundaries.

use std::cmp::Reverse;
use std::collections::{BTreeMap, BTreeSet, BinaryHeap};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;
use vrulink_core::agent::{Activity, PotiSample, VruAgent};
use vrulink_core::bus::{BusMessage, InProcessBus, SubscriptionId};
use vrulink_core::dsrc::{broadcast_detailed, denm_key, forward_denm, DenmKey, NodeRole, RadioNode};
use vrulink_core::geo::{enu_project, enu_unproject, haversine_distance, EnuVector, GeoPoint};
use vrulink_core::kinematics::{stopping_profile, ttc_cpa, BodyState};
use vrulink_core::messages::Frame;
use vrulink_core::middleware::{poti_topic, station_id_for, Middleware, POTI_SUBSCRIPTION};
use vrulink_core::obu::{AlertAssessment, AlertLevel, IngestOutcome, Obu, VruTrack};

use crate::events::{self, Event, EventKind};
use crate::metrics::{metrics_from_events, RunMetrics};
use crate::noise::{sample_error, ErrorKind};
use crate::scenario::{EntityKind, ScenarioError, ScenarioSpec};

/// Walking speed used when a standing pedestrian is given a new target.
pub const DEFAULT_WALK_MPS: f64 = 1.4;

const NOISE_STREAM: u64 = 1;
const LATENCY_STREAM: u64 = 2;
const CHANNEL_STREAM: u64 = 3;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "cmd", rename_all = "snake_case")]
pub enum ControlCommand {
    SetVehicleSpeed { id: String, mps: f64 },
    SetEntityTarget { id: String, lat: f64, lon: f64 },
    ToggleGnssFallback { vru_id: String, on: bool },
    Pause,
    Resume,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("{0}")]
pub struct CommandError(pub String);

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EntityView {
    pub id: String,
    pub role: String,
    pub lat: f64,
    pub lon: f64,
    pub heading_deg: f64,
    pub speed_mps: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ObuTracks {
    pub obu: String,
    pub tracks: Vec<VruTrack>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AlertView {
    pub obu: String,
    #[serde(flatten)]
    pub assessment: AlertAssessment,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, Default)]
pub struct LiveMetrics {
    pub reports_emitted: u64,
    pub broadcasts: u64,
    pub frames_ingested: u64,
    pub last_e2e_ms: Option<u64>,
    pub max_level: AlertLevel,
}

/// Snapshot of the world after one step.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StateFrame {
    pub t_ms: u64,
    pub entities: Vec<EntityView>,
    pub tracks: Vec<ObuTracks>,
    pub alerts: Vec<AlertView>,
    pub metrics: LiveMetrics,
}

#[derive(Debug, Clone)]
struct EntityState {
    id: String,
    kind: EntityKind,
    obu: bool,
    activity: Activity,
    depart_ms: u64,
    speed_mps: f64,
    path: Vec<EnuVector>,
    next: usize,
    pos: EnuVector,
    heading_deg: f64,
    fallback: bool,
}

impl EntityState {
    fn moving(&self, t_ms: u64) -> bool {
        t_ms >= self.depart_ms && self.next < self.path.len() && self.speed_mps > 0.0
    }

    fn velocity(&self, t_ms: u64) -> EnuVector {
        if !self.moving(t_ms) {
            return EnuVector::ZERO;
        }
        let to = self.path[self.next] - self.pos;
        let d = to.norm();
        if d == 0.0 {
            EnuVector::ZERO
        } else {
            to * (self.speed_mps / d)
        }
    }

    fn advance(&mut self, dt_s: f64) {
        let mut budget = self.speed_mps * dt_s;
        while budget > 0.0 && self.next < self.path.len() {
            let to = self.path[self.next] - self.pos;
            let d = to.norm();
            if d > 0.0 {
                self.heading_deg = to.heading_deg();
            }
            if d <= budget {
                self.pos = self.path[self.next];
                self.next += 1;
                budget -= d;
            } else {
                self.pos = self.pos + to * (budget / d);
                budget = 0.0;
            }
        }
    }

    fn body(&self, t_ms: u64) -> BodyState {
        BodyState::new(self.pos, self.velocity(t_ms))
    }
}

/// Latency breakdown carried along with one report.
#[derive(Debug, Clone, Copy, Default)]
struct Trace {
    station_id: u32,
    ts_ms: u64,
    uplink_ms: u64,
    broker_ms: u64,
    middleware_ms: u64,
    radio_ms: u64,
}

#[derive(Debug)]
enum Action {
    BrokerArrival { topic: String, payload: Vec<u8>, trace: Trace },
    Route { rsus: Vec<(usize, Frame)>, outcome: &'static str, trace: Trace },
    RadioArrival { node: usize, frame: Frame, frame_seq: u64, trace: Trace },
}

#[derive(Debug)]
struct Scheduled {
    at_ms: u64,
    seq: u64,
    action: Action,
}

impl PartialEq for Scheduled {
    fn eq(&self, other: &Self) -> bool {
        (self.at_ms, self.seq) == (other.at_ms, other.seq)
    }
}

impl Eq for Scheduled {}

impl PartialOrd for Scheduled {
    fn partial_cmp(&self, other: &Self) -> Option<std::cmp::Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for Scheduled {
    fn cmp(&self, other: &Self) -> std::cmp::Ordering {
        (self.at_ms, self.seq).cmp(&(other.at_ms, other.seq))
    }
}

pub struct Engine {
    spec: ScenarioSpec,
    origin: GeoPoint,
    step_index: u64,
    total_steps: u64,
    now_ms: u64,
    noise_rng: ChaCha8Rng,
    latency_rng: ChaCha8Rng,
    channel_rng: ChaCha8Rng,
    entities: Vec<EntityState>,
    agents: BTreeMap<usize, VruAgent>,
    bus: InProcessBus,
    mw_sub: SubscriptionId,
    bus_traces: BTreeMap<u64, Trace>,
    middleware: Middleware,
    nodes: Vec<RadioNode>,
    node_entity: Vec<Option<usize>>,
    obus: BTreeMap<usize, Obu>,
    denm_seen: Vec<BTreeSet<DenmKey>>,
    queue: BinaryHeap<Reverse<Scheduled>>,
    next_sched: u64,
    next_frame: u64,
    pending_cmds: Vec<ControlCommand>,
    encountered: BTreeSet<(usize, usize)>,
    visual: BTreeSet<(usize, usize)>,
    alerts: Vec<AlertView>,
    live: LiveMetrics,
    log: Vec<Event>,
}

impl Engine {
    pub fn new(spec: ScenarioSpec) -> Result<Self, ScenarioError> {
        spec.validate()?;
        let origin = spec.origin();
        let stream = |n| {
            let mut r = ChaCha8Rng::seed_from_u64(spec.seed);
            r.set_stream(n);
            r
        };
        let project = |p| enu_project(origin, p).expect("validated geometry");

        let mut entities = Vec::new();
        let mut agents = BTreeMap::new();
        for (i, e) in spec.entities.iter().enumerate() {
            let path: Vec<EnuVector> = e.waypoints.iter().map(|w| project(*w)).collect();
            let heading_deg = path.windows(2).next().map(|w| (w[1] - w[0]).heading_deg()).unwrap_or(0.0);
            entities.push(EntityState {
                id: e.id.clone(),
                kind: e.kind,
                obu: e.obu && e.kind == EntityKind::Vehicle,
                activity: e.activity,
                depart_ms: e.depart_ms,
                speed_mps: e.speed_mps,
                pos: path[0],
                next: 1,
                path,
                heading_deg,
                fallback: false,
            });
            if e.kind == EntityKind::Pedestrian {
                let agent = VruAgent::new(e.id.clone(), spec.smoother, spec.trigger, spec.geofence)
                    .map_err(|err| ScenarioError::Invalid { field: "trigger".into(), reason: err.to_string() })?;
                agents.insert(i, agent);
            }
        }

        let mut nodes = Vec::new();
        let mut node_entity = Vec::new();
        for r in &spec.rsus {
            nodes.push(RadioNode {
                node_id: r.registration.rsu_id.clone(),
                position: r.radio_position(),
                role: NodeRole::Rsu,
            });
            node_entity.push(None);
        }
        let mut obus = BTreeMap::new();
        for (i, e) in entities.iter().enumerate() {
            if e.obu {
                obus.insert(nodes.len(), Obu::new(e.id.clone(), origin));
                nodes.push(RadioNode {
                    node_id: e.id.clone(),
                    position: spec.entities[i].waypoints[0],
                    role: NodeRole::Obu,
                });
                node_entity.push(Some(i));
            }
        }

        let mut bus = InProcessBus::new();
        let mw_sub = bus.subscribe(POTI_SUBSCRIPTION).expect("constant filter");
        let middleware =
            Middleware::new(spec.rsus.iter().map(|r| r.registration.clone()).collect(), spec.middleware_mode);
        let total_steps = spec.duration_ms / spec.step_ms;

        Ok(Engine {
            origin,
            step_index: 0,
            total_steps,
            now_ms: 0,
            noise_rng: stream(NOISE_STREAM),
            latency_rng: stream(LATENCY_STREAM),
            channel_rng: stream(CHANNEL_STREAM),
            entities,
            agents,
            bus,
            mw_sub,
            bus_traces: BTreeMap::new(),
            middleware,
            denm_seen: vec![BTreeSet::new(); nodes.len()],
            nodes,
            node_entity,
            obus,
            queue: BinaryHeap::new(),
            next_sched: 0,
            next_frame: 0,
            pending_cmds: Vec::new(),
            encountered: BTreeSet::new(),
            visual: BTreeSet::new(),
            alerts: Vec::new(),
            live: LiveMetrics::default(),
            log: Vec::new(),
            spec,
        })
    }

    pub fn spec(&self) -> &ScenarioSpec {
        &self.spec
    }

    pub fn finished(&self) -> bool {
        self.step_index >= self.total_steps
    }

    /// Time of the most recent step.
    pub fn now_ms(&self) -> u64 {
        self.now_ms
    }

    /// Time the next call to [`Engine::step`] will simulate.
    pub fn next_step_ms(&self) -> u64 {
        self.step_index * self.spec.step_ms
    }

    pub fn events(&self) -> &[Event] {
        &self.log
    }

    pub fn into_events(self) -> Vec<Event> {
        self.log
    }

    fn entity_index(&self, id: &str) -> Option<usize> {
        self.entities.iter().position(|e| e.id == id)
    }

    pub fn check_command(&self, cmd: &ControlCommand) -> Result<(), CommandError> {
        let err = |m: String| Err(CommandError(m));
        match cmd {
            ControlCommand::SetVehicleSpeed { id, mps } => match self.entity_index(id) {
                None => err(format!("unknown entity id `{id}`")),
                Some(i) if self.entities[i].kind != EntityKind::Vehicle => err(format!("`{id}` is not a vehicle")),
                Some(_) if !(mps.is_finite() && *mps >= 0.0) => err(format!("speed must be non-negative, got {mps}")),
                Some(_) => Ok(()),
            },
            ControlCommand::SetEntityTarget { id, lat, lon } => {
                if self.entity_index(id).is_none() {
                    return err(format!("unknown entity id `{id}`"));
                }
                let p = GeoPoint::new(*lat, *lon).map_err(|e| CommandError(format!("bad target: {e}")))?;
                enu_project(self.origin, p).map_err(|e| CommandError(format!("bad target: {e}")))?;
                Ok(())
            }
            ControlCommand::ToggleGnssFallback { vru_id, .. } => match self.entity_index(vru_id) {
                None => err(format!("unknown entity id `{vru_id}`")),
                Some(i) if self.entities[i].kind != EntityKind::Pedestrian => err(format!("`{vru_id}` is not a VRU")),
                Some(_) => Ok(()),
            },
            ControlCommand::Pause | ControlCommand::Resume => Ok(()),
        }
    }

    /// Queue a command for the next step. Pause and resume only concern pacing.
    pub fn queue_command(&mut self, cmd: ControlCommand) -> Result<(), CommandError> {
        self.check_command(&cmd)?;
        if !matches!(cmd, ControlCommand::Pause | ControlCommand::Resume) {
            self.pending_cmds.push(cmd);
        }
        Ok(())
    }

    fn apply(&mut self, cmd: &ControlCommand) {
        match cmd {
            ControlCommand::SetVehicleSpeed { id, mps } => {
                let i = self.entity_index(id).expect("checked");
                self.entities[i].speed_mps = *mps;
            }
            ControlCommand::SetEntityTarget { id, lat, lon } => {
                let i = self.entity_index(id).expect("checked");
                let target = enu_project(self.origin, GeoPoint::new(*lat, *lon).expect("checked")).expect("checked");
                let e = &mut self.entities[i];
                e.path = vec![e.pos, target];
                e.next = 1;
                if e.speed_mps == 0.0 && e.kind == EntityKind::Pedestrian {
                    e.speed_mps = DEFAULT_WALK_MPS;
                }
            }
            ControlCommand::ToggleGnssFallback { vru_id, on } => {
                let i = self.entity_index(vru_id).expect("checked");
                self.entities[i].fallback = *on;
            }
            ControlCommand::Pause | ControlCommand::Resume => {}
        }
    }

    fn push_event<D: Serialize>(&mut self, t_ms: u64, kind: EventKind, actor: &str, detail: &D) {
        self.log.push(Event::new(t_ms, kind, actor, detail));
    }

    fn schedule(&mut self, at_ms: u64, action: Action) {
        let seq = self.next_sched;
        self.next_sched += 1;
        self.queue.push(Reverse(Scheduled { at_ms, seq, action }));
    }

    fn geo(&self, v: EnuVector) -> GeoPoint {
        enu_unproject(self.origin, v).expect("entities stay near the origin")
    }

    /// Advance one step. Returns false once the scenario is over.
    pub fn step(&mut self) -> bool {
        if self.finished() {
            return false;
        }
        let step_ms = self.spec.step_ms;
        let t = self.step_index * step_ms;
        if self.step_index == 0 {
            let start = events::RunStart {
                scenario: self.spec.name.clone(),
                seed: self.spec.seed,
                step_ms,
                duration_ms: self.spec.duration_ms,
            };
            self.push_event(0, EventKind::RunStart, "engine", &start);
        }

        self.drain(t);

        for cmd in std::mem::take(&mut self.pending_cmds) {
            self.push_event(t, EventKind::Cmd, "engine", &cmd);
            self.apply(&cmd);
        }
        if t > 0 {
            let dt_s = step_ms as f64 / 1000.0;
            for e in &mut self.entities {
                if t - step_ms >= e.depart_ms {
                    e.advance(dt_s);
                }
            }
        }
        for n in 0..self.nodes.len() {
            if let Some(i) = self.node_entity[n] {
                self.nodes[n].position = self.geo(self.entities[i].pos);
            }
        }
        self.now_ms = t;

        self.sample_fixes(t);
        self.drain(t);
        self.ground_truth(t);
        self.update_alerts(t);

        self.step_index += 1;
        if self.finished() {
            let end = events::RunEnd {
                steps: self.step_index,
                emitted: self.live.reports_emitted,
                ingested: self.live.frames_ingested,
            };
            let at = self.spec.duration_ms.max(t);
            self.push_event(at, EventKind::RunEnd, "engine", &end);
        }
        true
    }

    fn sample_fixes(&mut self, t: u64) {
        let pedestrians: Vec<usize> = self.agents.keys().copied().collect();
        for i in pedestrians {
            let e = &self.entities[i];
            let truth = e.pos;
            let vel = e.velocity(t);
            let heading = if vel.norm() > 0.0 { vel.heading_deg() } else { e.heading_deg };
            let (err, kind) = sample_error(&self.spec.noise, &e.id, t, e.fallback, &mut self.noise_rng);
            let Ok(position) = enu_unproject(self.origin, truth + err) else {
                continue;
            };
            let sample = PotiSample {
                ts_ms: t,
                position,
                speed_mps: vel.norm(),
                heading_deg: heading,
                accuracy_m: self.spec.noise.sigma_m,
                activity: e.activity,
            };
            let id = e.id.clone();
            let agent = self.agents.get_mut(&i).expect("pedestrian has an agent");
            let report = match agent.step(&sample) {
                Ok(Some(r)) => r,
                _ => continue,
            };
            let rejected = agent.last_smoothed().is_some_and(|s| s.rejected);
            let reported = report.position().expect("agent output is valid");
            let station_id = station_id_for(&id);
            let emit = events::Emit {
                station_id,
                ts_ms: t,
                lat_deg: report.lat_deg,
                lon_deg: report.lon_deg,
                truth_error_m: haversine_distance(reported, self.geo(truth)),
                fix_error: match kind {
                    ErrorKind::Gaussian => "gaussian",
                    ErrorKind::Outlier => "outlier",
                    ErrorKind::Scripted => "scripted",
                }
                .into(),
                rejected,
            };
            self.push_event(t, EventKind::Emit, &id, &emit);
            self.live.reports_emitted += 1;
            let uplink_ms = self.spec.latency.uplink_ms.sample(&mut self.latency_rng);
            let trace = Trace { station_id, ts_ms: t, uplink_ms, ..Trace::default() };
            self.schedule(
                t + uplink_ms,
                Action::BrokerArrival { topic: poti_topic(&id), payload: report.to_json(), trace },
            );
        }
    }

    /// Process every queued hop due at or before `t`, in time order.
    fn drain(&mut self, t: u64) {
        loop {
            let q = self.queue.peek().map(|Reverse(s)| s.at_ms).filter(|&at| at <= t);
            let b = self.bus.next_due().filter(|&at| at <= t);
            match (q, b) {
                (None, None) => return,
                (Some(qa), Some(ba)) if ba < qa => self.on_bus_delivery(t),
                (Some(_), _) => {
                    let Reverse(s) = self.queue.pop().expect("peeked");
                    self.run_action(s.at_ms, s.action);
                }
                (None, Some(_)) => self.on_bus_delivery(t),
            }
        }
    }

    fn in_outage(&self, at_ms: u64) -> bool {
        self.spec.broker_outages.iter().any(|o| (o.from_ms..o.to_ms).contains(&at_ms))
    }

    fn run_action(&mut self, at: u64, action: Action) {
        match action {
            Action::BrokerArrival { topic, payload, trace } => {
                if self.in_outage(at) {
                    let d = events::DropDetail {
                        station_id: trace.station_id,
                        ts_ms: trace.ts_ms,
                        reason: "broker_outage".into(),
                    };
                    self.push_event(at, EventKind::Drop, "broker", &d);
                    return;
                }
                let p = events::Publish {
                    station_id: trace.station_id,
                    ts_ms: trace.ts_ms,
                    topic: topic.clone(),
                    uplink_ms: trace.uplink_ms,
                };
                self.push_event(at, EventKind::Publish, "broker", &p);
                let dist = self.spec.latency.broker_ms;
                let rng = &mut self.latency_rng;
                let mut delay = |_: SubscriptionId, _: &BusMessage| dist.sample(rng);
                let receipt = self.bus.publish(&topic, payload, at, &mut delay).expect("agent topics are concrete");
                self.bus_traces.insert(receipt.seq, trace);
            }
            Action::Route { rsus, outcome, trace } => {
                let route = events::Route {
                    station_id: trace.station_id,
                    ts_ms: trace.ts_ms,
                    middleware_ms: trace.middleware_ms,
                    rsus: rsus.iter().map(|(n, _)| self.nodes[*n].node_id.clone()).collect(),
                    outcome: outcome.into(),
                };
                self.push_event(at, EventKind::Route, "middleware", &route);
                for (node, frame) in rsus {
                    if let Frame::Denm(d) = &frame {
                        self.denm_seen[node].insert(denm_key(d));
                    }
                    self.transmit(at, node, frame, trace);
                }
            }
            Action::RadioArrival { node, frame, frame_seq, trace } => self.on_radio(at, node, frame, frame_seq, trace),
        }
    }

    fn on_bus_delivery(&mut self, t: u64) {
        let d = self.bus.pop_due(t).expect("due delivery");
        if d.subscription != self.mw_sub {
            return;
        }
        let at = d.deliver_at_ms;
        let mut trace = self.bus_traces.remove(&d.message.seq).unwrap_or_default();
        trace.broker_ms = d.delay_ms;
        let deliver = events::Deliver { station_id: trace.station_id, ts_ms: trace.ts_ms, broker_ms: d.delay_ms };
        self.push_event(at, EventKind::Deliver, "middleware", &deliver);

        let before = self.middleware.stats();
        let commands = self.middleware.on_payload(&d.message.payload, at);
        let after = self.middleware.stats();
        let outcome = match &commands {
            Err(_) => "malformed",
            Ok(_) if after.duplicates > before.duplicates => "duplicate",
            Ok(_) if after.unrouted > before.unrouted => "unrouted",
            Ok(_) => "routed",
        };
        let rsus: Vec<(usize, Frame)> = commands
            .unwrap_or_default()
            .into_iter()
            .filter_map(|c| self.nodes.iter().position(|n| n.node_id == c.rsu_id).map(|n| (n, c.frame)))
            .collect();
        trace.middleware_ms = self.spec.latency.middleware_ms.sample(&mut self.latency_rng);
        self.schedule(at + trace.middleware_ms, Action::Route { rsus, outcome, trace });
    }

    fn transmit(&mut self, at: u64, sender: usize, frame: Frame, trace: Trace) -> u64 {
        let frame_seq = self.next_frame;
        self.next_frame += 1;
        let receptions =
            broadcast_detailed(&self.nodes[sender], &self.nodes, &self.spec.channel, &mut self.channel_rng);
        let mut receivers = Vec::with_capacity(receptions.len());
        for rx in receptions {
            let idx = self.nodes.iter().position(|n| n.node_id == rx.receiver_id).expect("known node");
            receivers.push(events::RadioReceiver {
                node: rx.receiver_id,
                role: self.nodes[idx].role,
                distance_m: rx.distance_m,
                in_range: rx.in_range,
                delivered: rx.delivered,
            });
            if rx.delivered {
                let mut tr = trace;
                tr.radio_ms += rx.delay_ms;
                self.schedule(at + rx.delay_ms, Action::RadioArrival { node: idx, frame, frame_seq, trace: tr });
            }
        }
        let (kind, hop_limit) = match &frame {
            Frame::Psm(_) => ("PSM", None),
            Frame::Denm(d) => ("DENM", Some(d.hop_limit)),
        };
        let b = events::Broadcast {
            frame_seq,
            frame: kind.into(),
            station_id: trace.station_id,
            ts_ms: trace.ts_ms,
            hop_limit,
            receivers,
        };
        let actor = self.nodes[sender].node_id.clone();
        self.push_event(at, EventKind::Broadcast, &actor, &b);
        self.live.broadcasts += 1;
        frame_seq
    }

    fn on_radio(&mut self, at: u64, node: usize, frame: Frame, frame_seq: u64, trace: Trace) {
        if let Some(obu) = self.obus.get_mut(&node) {
            let bytes = frame.encode().expect("frames built by the middleware are valid");
            let outcome = match obu.ingest(&bytes, at) {
                IngestOutcome::Created(_) => "created".to_string(),
                IngestOutcome::Updated(_) => "updated".to_string(),
                IngestOutcome::Stale { .. } => "stale".to_string(),
                IngestOutcome::DecodeError(e) => format!("decode_error: {e}"),
            };
            let e2e_ms = at - trace.ts_ms;
            let ingest = events::Ingest {
                frame_seq,
                station_id: trace.station_id,
                ts_ms: trace.ts_ms,
                outcome,
                uplink_ms: trace.uplink_ms,
                broker_ms: trace.broker_ms,
                middleware_ms: trace.middleware_ms,
                radio_ms: trace.radio_ms,
                e2e_ms,
            };
            let actor = self.nodes[node].node_id.clone();
            self.push_event(at, EventKind::Ingest, &actor, &ingest);
            self.live.frames_ingested += 1;
            self.live.last_e2e_ms = Some(e2e_ms);
        }
        if let Frame::Denm(d) = frame {
            if let Some(copy) = forward_denm(&self.nodes[node], &d, &mut self.denm_seen[node]) {
                let next_seq = self.next_frame;
                let fwd = events::Forward {
                    parent_seq: frame_seq,
                    frame_seq: next_seq,
                    station_id: trace.station_id,
                    hop_limit: copy.hop_limit,
                };
                let actor = self.nodes[node].node_id.clone();
                self.push_event(at, EventKind::Forward, &actor, &fwd);
                self.transmit(at, node, Frame::Denm(copy), trace);
            }
        }
    }

    fn ground_truth(&mut self, t: u64) {
        let k = self.spec.kinematics;
        for vi in 0..self.entities.len() {
            if !self.entities[vi].obu {
                continue;
            }
            let veh = self.entities[vi].body(t);
            let stop_time_s = stopping_profile(veh.speed_mps(), &k).map(|p| p.stop_time_s).unwrap_or(k.t_think_s);
            for pi in self.agents.keys().copied().collect::<Vec<_>>() {
                let ped = self.entities[pi].body(t);
                let distance = (ped.position - veh.position).norm();
                let station_id = station_id_for(&self.entities[pi].id);
                let actor = self.entities[vi].id.clone();
                let pedestrian = self.entities[pi].id.clone();
                if let Some(ttc) = ttc_cpa(&veh, &ped, &k) {
                    if self.encountered.insert((vi, pi)) {
                        let e = events::Encounter {
                            pedestrian: pedestrian.clone(),
                            station_id,
                            truth_ttc_s: ttc,
                            truth_distance_m: distance,
                            stop_time_s,
                        };
                        self.push_event(t, EventKind::Encounter, &actor, &e);
                    }
                }
                if distance <= self.spec.visual_detection_m && self.visual.insert((vi, pi)) {
                    let v = events::Visual { pedestrian, station_id, truth_distance_m: distance };
                    self.push_event(t, EventKind::Visual, &actor, &v);
                }
            }
        }
    }

    fn update_alerts(&mut self, t: u64) {
        let k = self.spec.kinematics;
        let range = self.spec.channel.range_m;
        let mut views = Vec::new();
        let obu_nodes: Vec<usize> = self.obus.keys().copied().collect();
        for n in obu_nodes {
            let vi = self.node_entity[n].expect("obu nodes map to vehicles");
            let veh = self.entities[vi].body(t);
            let stop_time_s = stopping_profile(veh.speed_mps(), &k).map(|p| p.stop_time_s).unwrap_or(k.t_think_s);
            let (current, transitions) = self.obus.get_mut(&n).expect("exists").update_alerts(&veh, &k, range, t);
            let actor = self.entities[vi].id.clone();
            for tr in transitions {
                let a = tr.assessment;
                let truth =
                    self.agents.keys().copied().find(|&pi| station_id_for(&self.entities[pi].id) == a.station_id).map(
                        |pi| {
                            let ped = self.entities[pi].body(t);
                            (ttc_cpa(&veh, &ped, &k), (ped.position - veh.position).norm())
                        },
                    );
                let alert = events::Alert {
                    station_id: a.station_id,
                    from: tr.from,
                    to: a.level,
                    ttc_s: a.ttc_s,
                    distance_m: Some(a.distance_m).filter(|d| d.is_finite()),
                    truth_ttc_s: truth.and_then(|x| x.0),
                    truth_distance_m: truth.map(|x| x.1),
                    stop_time_s,
                };
                self.push_event(t, EventKind::Alert, &actor, &alert);
            }
            for a in current {
                self.live.max_level = self.live.max_level.max(a.level);
                views.push(AlertView { obu: actor.clone(), assessment: a });
            }
        }
        self.alerts = views;
    }

    pub fn frame(&self) -> StateFrame {
        let t = self.now_ms;
        let mut entities: Vec<EntityView> = self
            .entities
            .iter()
            .map(|e| {
                let p = self.geo(e.pos);
                let v = e.velocity(t);
                EntityView {
                    id: e.id.clone(),
                    role: match e.kind {
                        EntityKind::Pedestrian => "pedestrian".into(),
                        EntityKind::Vehicle => "vehicle".into(),
                    },
                    lat: p.lat_deg(),
                    lon: p.lon_deg(),
                    heading_deg: if v.norm() > 0.0 { v.heading_deg() } else { e.heading_deg },
                    speed_mps: v.norm(),
                }
            })
            .collect();
        for r in &self.spec.rsus {
            let p = r.radio_position();
            entities.push(EntityView {
                id: r.registration.rsu_id.clone(),
                role: "rsu".into(),
                lat: p.lat_deg(),
                lon: p.lon_deg(),
                heading_deg: 0.0,
                speed_mps: 0.0,
            });
        }
        let tracks = self
            .obus
            .values()
            .map(|o| ObuTracks { obu: o.id().to_string(), tracks: o.tracks().copied().collect() })
            .collect();
        StateFrame { t_ms: t, entities, tracks, alerts: self.alerts.clone(), metrics: self.live }
    }

    /// Current configured speed of an entity.
    pub fn entity_speed(&self, id: &str) -> Option<f64> {
        self.entity_index(id).map(|i| self.entities[i].speed_mps)
    }
}

#[derive(Debug, Clone)]
pub struct RunOutput {
    pub events: Vec<Event>,
    pub metrics: RunMetrics,
}

impl RunOutput {
    pub fn log_text(&self) -> String {
        events::log_to_string(&self.events)
    }
}

pub fn run(spec: ScenarioSpec) -> Result<RunOutput, ScenarioError> {
    run_with_commands(spec, &[])
}

/// Run with commands applied at the first step at or after their timestamp.
pub fn run_with_commands(spec: ScenarioSpec, commands: &[(u64, ControlCommand)]) -> Result<RunOutput, ScenarioError> {
    let (name, seed) = (spec.name.clone(), spec.seed);
    let mut engine = Engine::new(spec)?;
    let mut pending = commands.to_vec();
    pending.sort_by_key(|(t, _)| *t);
    let mut pending = pending.into_iter().peekable();
    while !engine.finished() {
        let t = engine.next_step_ms();
        while let Some((_, cmd)) = pending.next_if(|(at, _)| *at <= t) {
            engine
                .queue_command(cmd)
                .map_err(|e| ScenarioError::Invalid { field: "commands".into(), reason: e.to_string() })?;
        }
        engine.step();
    }
    let events = engine.into_events();
    let metrics = if events.is_empty() {
        RunMetrics::empty(&name, seed)
    } else {
        metrics_from_events(&events).expect("engine logs are well formed")
    };
    Ok(RunOutput { events, metrics })
}

/// Commands recorded in a log, with the step they were applied at.
pub fn recorded_commands(events: &[Event]) -> Result<Vec<(u64, ControlCommand)>, crate::events::LogError> {
    events
        .iter()
        .enumerate()
        .filter(|(_, e)| e.kind == EventKind::Cmd)
        .map(|(i, e)| e.detail_as(i + 1).map(|c| (e.t_ms, c)))
        .collect()
}
