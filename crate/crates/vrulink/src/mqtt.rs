//! Minimal MQTT 3.1.1 client (QoS 0, clean session, no keep-alive) for
//! attaching the pipeline to an external broker.

use std::collections::BTreeMap;
use std::io::{self, Read, Write};
use std::net::TcpStream;
use std::sync::mpsc::{self, Receiver, Sender};
use std::sync::{Arc, Mutex};
use std::thread::JoinHandle;
use std::time::Duration;

use vrulink_core::bus::{SubscriptionId, TopicFilter, TopicName};

use crate::shared_bus::{AdapterError, Handler, PotiBus};

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Packet {
    Connect { client_id: String },
    ConnAck { return_code: u8 },
    Publish { topic: String, payload: Vec<u8> },
    Subscribe { packet_id: u16, filters: Vec<String> },
    SubAck { packet_id: u16, return_codes: Vec<u8> },
    Unsubscribe { packet_id: u16, filters: Vec<String> },
    UnsubAck { packet_id: u16 },
    PingReq,
    PingResp,
    Disconnect,
}

fn put_str(out: &mut Vec<u8>, s: &str) {
    out.extend_from_slice(&(s.len() as u16).to_be_bytes());
    out.extend_from_slice(s.as_bytes());
}

fn frame(first: u8, body: Vec<u8>) -> Vec<u8> {
    let mut out = vec![first];
    let mut len = body.len();
    loop {
        let mut b = (len % 128) as u8;
        len /= 128;
        if len > 0 {
            b |= 0x80;
        }
        out.push(b);
        if len == 0 {
            break;
        }
    }
    out.extend(body);
    out
}

impl Packet {
    pub fn encode(&self) -> Vec<u8> {
        let mut b = Vec::new();
        match self {
            Packet::Connect { client_id } => {
                put_str(&mut b, "MQTT");
                b.extend_from_slice(&[4, 0x02, 0, 0]);
                put_str(&mut b, client_id);
                frame(0x10, b)
            }
            Packet::ConnAck { return_code } => frame(0x20, vec![0, *return_code]),
            Packet::Publish { topic, payload } => {
                put_str(&mut b, topic);
                b.extend_from_slice(payload);
                frame(0x30, b)
            }
            Packet::Subscribe { packet_id, filters } => {
                b.extend_from_slice(&packet_id.to_be_bytes());
                for f in filters {
                    put_str(&mut b, f);
                    b.push(0);
                }
                frame(0x82, b)
            }
            Packet::SubAck { packet_id, return_codes } => {
                b.extend_from_slice(&packet_id.to_be_bytes());
                b.extend_from_slice(return_codes);
                frame(0x90, b)
            }
            Packet::Unsubscribe { packet_id, filters } => {
                b.extend_from_slice(&packet_id.to_be_bytes());
                for f in filters {
                    put_str(&mut b, f);
                }
                frame(0xA2, b)
            }
            Packet::UnsubAck { packet_id } => frame(0xB0, packet_id.to_be_bytes().to_vec()),
            Packet::PingReq => frame(0xC0, Vec::new()),
            Packet::PingResp => frame(0xD0, Vec::new()),
            Packet::Disconnect => frame(0xE0, Vec::new()),
        }
    }
}

fn bad(msg: &str) -> io::Error {
    io::Error::new(io::ErrorKind::InvalidData, msg.to_string())
}

struct Cursor<'a>(&'a [u8]);

impl Cursor<'_> {
    fn u8(&mut self) -> io::Result<u8> {
        let (&b, rest) = self.0.split_first().ok_or_else(|| bad("short packet"))?;
        self.0 = rest;
        Ok(b)
    }

    fn u16(&mut self) -> io::Result<u16> {
        Ok(u16::from_be_bytes([self.u8()?, self.u8()?]))
    }

    fn bytes(&mut self, n: usize) -> io::Result<&[u8]> {
        if self.0.len() < n {
            return Err(bad("short packet"));
        }
        let (head, rest) = self.0.split_at(n);
        self.0 = rest;
        Ok(head)
    }

    fn string(&mut self) -> io::Result<String> {
        let n = self.u16()? as usize;
        String::from_utf8(self.bytes(n)?.to_vec()).map_err(|_| bad("string is not UTF-8"))
    }
}

/// Read one packet. QoS > 0 publishes are rejected.
pub fn read_packet<R: Read>(r: &mut R) -> io::Result<Packet> {
    let mut first = [0u8; 1];
    r.read_exact(&mut first)?;
    let mut len = 0usize;
    for shift in 0..4 {
        let mut b = [0u8; 1];
        r.read_exact(&mut b)?;
        len |= ((b[0] & 0x7f) as usize) << (7 * shift);
        if b[0] & 0x80 == 0 {
            break;
        }
        if shift == 3 {
            return Err(bad("remaining length too long"));
        }
    }
    let mut body = vec![0u8; len];
    r.read_exact(&mut body)?;
    let mut c = Cursor(&body);
    Ok(match first[0] >> 4 {
        1 => {
            if c.string()? != "MQTT" {
                return Err(bad("unsupported protocol"));
            }
            c.bytes(4)?;
            Packet::Connect { client_id: c.string()? }
        }
        2 => {
            c.u8()?;
            Packet::ConnAck { return_code: c.u8()? }
        }
        3 => {
            if first[0] & 0x06 != 0 {
                return Err(bad("only QoS 0 is supported"));
            }
            let topic = c.string()?;
            Packet::Publish { topic, payload: c.0.to_vec() }
        }
        8 => {
            let packet_id = c.u16()?;
            let mut filters = Vec::new();
            while !c.0.is_empty() {
                filters.push(c.string()?);
                c.u8()?;
            }
            Packet::Subscribe { packet_id, filters }
        }
        9 => Packet::SubAck { packet_id: c.u16()?, return_codes: c.0.to_vec() },
        10 => {
            let packet_id = c.u16()?;
            let mut filters = Vec::new();
            while !c.0.is_empty() {
                filters.push(c.string()?);
            }
            Packet::Unsubscribe { packet_id, filters }
        }
        11 => Packet::UnsubAck { packet_id: c.u16()? },
        12 => Packet::PingReq,
        13 => Packet::PingResp,
        14 => Packet::Disconnect,
        t => return Err(bad(&format!("unsupported packet type {t}"))),
    })
}

/// `mqtt://host:port` or `host:port`; the port defaults to 1883.
pub fn parse_uri(uri: &str) -> Result<String, AdapterError> {
    let rest = uri.strip_prefix("mqtt://").unwrap_or(uri);
    let rest = rest.trim_end_matches('/');
    if rest.is_empty() || rest.contains('/') {
        return Err(AdapterError::Protocol(format!("bad broker uri `{uri}`")));
    }
    Ok(if rest.contains(':') { rest.to_string() } else { format!("{rest}:1883") })
}

type Subscriptions = Arc<Mutex<BTreeMap<SubscriptionId, (TopicFilter, Handler)>>>;

pub struct MqttClient {
    writer: Mutex<TcpStream>,
    subs: Subscriptions,
    acks: Mutex<Receiver<Packet>>,
    next_packet: Mutex<(u16, u64)>,
    reader: Option<JoinHandle<()>>,
}

const ACK_TIMEOUT: Duration = Duration::from_secs(5);

impl MqttClient {
    pub fn connect(uri: &str, client_id: &str) -> Result<Self, AdapterError> {
        let addr = parse_uri(uri)?;
        let mut stream = TcpStream::connect(addr)?;
        stream.set_nodelay(true)?;
        stream.write_all(&Packet::Connect { client_id: client_id.into() }.encode())?;
        stream.set_read_timeout(Some(ACK_TIMEOUT))?;
        match read_packet(&mut stream)? {
            Packet::ConnAck { return_code: 0 } => {}
            Packet::ConnAck { return_code } => {
                return Err(AdapterError::Protocol(format!("connection refused, code {return_code}")));
            }
            other => return Err(AdapterError::Protocol(format!("expected CONNACK, got {other:?}"))),
        }
        stream.set_read_timeout(None)?;
        let subs: Subscriptions = Arc::default();
        let (tx, rx) = mpsc::channel();
        let reader = {
            let stream = stream.try_clone()?;
            let subs = Arc::clone(&subs);
            std::thread::spawn(move || reader_loop(stream, subs, tx))
        };
        Ok(MqttClient {
            writer: Mutex::new(stream),
            subs,
            acks: Mutex::new(rx),
            next_packet: Mutex::new((1, 0)),
            reader: Some(reader),
        })
    }

    fn send(&self, p: &Packet) -> Result<(), AdapterError> {
        self.writer.lock().expect("writer lock").write_all(&p.encode())?;
        Ok(())
    }

    fn next_ids(&self) -> (u16, SubscriptionId) {
        let mut g = self.next_packet.lock().expect("id lock");
        let ids = (g.0, SubscriptionId(g.1));
        g.0 = g.0.checked_add(1).unwrap_or(1);
        g.1 += 1;
        ids
    }

    fn wait_ack(&self, want: impl Fn(&Packet) -> bool) -> Result<Packet, AdapterError> {
        let rx = self.acks.lock().expect("ack lock");
        loop {
            let p = rx
                .recv_timeout(ACK_TIMEOUT)
                .map_err(|_| AdapterError::Protocol("no acknowledgement from broker".into()))?;
            if want(&p) {
                return Ok(p);
            }
        }
    }
}

fn reader_loop(mut stream: TcpStream, subs: Subscriptions, acks: Sender<Packet>) {
    while let Ok(p) = read_packet(&mut stream) {
        match p {
            Packet::Publish { topic, payload } => {
                let Ok(name) = TopicName::parse(&topic) else { continue };
                let mut subs = subs.lock().expect("subscription lock");
                for (filter, handler) in subs.values_mut() {
                    if filter.matches(&name) {
                        handler(&topic, &payload);
                    }
                }
            }
            ack @ (Packet::SubAck { .. } | Packet::UnsubAck { .. }) => {
                if acks.send(ack).is_err() {
                    return;
                }
            }
            _ => {}
        }
    }
}

impl PotiBus for MqttClient {
    fn publish(&self, topic: &str, payload: &[u8]) -> Result<(), AdapterError> {
        TopicName::parse(topic)?;
        self.send(&Packet::Publish { topic: topic.into(), payload: payload.to_vec() })
    }

    fn subscribe(&self, pattern: &str, handler: Handler) -> Result<SubscriptionId, AdapterError> {
        let filter = TopicFilter::parse(pattern)?;
        let (packet_id, id) = self.next_ids();
        self.subs.lock().expect("subscription lock").insert(id, (filter, handler));
        self.send(&Packet::Subscribe { packet_id, filters: vec![pattern.into()] })?;
        let ack = self.wait_ack(|p| matches!(p, Packet::SubAck { packet_id: p, .. } if *p == packet_id));
        match ack {
            Ok(Packet::SubAck { return_codes, .. }) if return_codes.first().is_some_and(|c| *c < 0x80) => Ok(id),
            Ok(_) => {
                self.subs.lock().expect("subscription lock").remove(&id);
                Err(AdapterError::Protocol(format!("broker refused subscription `{pattern}`")))
            }
            Err(e) => {
                self.subs.lock().expect("subscription lock").remove(&id);
                Err(e)
            }
        }
    }

    fn unsubscribe(&self, id: SubscriptionId) -> Result<bool, AdapterError> {
        let Some((filter, _)) = self.subs.lock().expect("subscription lock").remove(&id) else {
            return Ok(false);
        };
        let still_used = self.subs.lock().expect("subscription lock").values().any(|(f, _)| f == &filter);
        if !still_used {
            let (packet_id, _) = self.next_ids();
            self.send(&Packet::Unsubscribe { packet_id, filters: vec![filter.as_str().into()] })?;
            self.wait_ack(|p| matches!(p, Packet::UnsubAck { packet_id: p } if *p == packet_id))?;
        }
        Ok(true)
    }
}

impl Drop for MqttClient {
    fn drop(&mut self) {
        let _ = self.send(&Packet::Disconnect);
        if let Ok(w) = self.writer.lock() {
            let _ = w.shutdown(std::net::Shutdown::Both);
        }
        if let Some(h) = self.reader.take() {
            let _ = h.join();
        }
    }
}
