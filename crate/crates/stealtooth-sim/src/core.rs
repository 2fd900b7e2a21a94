//! Identity, link-key, clock, and trace primitives shared by every other module.
//!
//! Everything here is deterministic: the only randomness in a run flows through
//! [`KeyForge`], which wraps a single seeded ChaCha8 stream.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::str::FromStr;

use rand_chacha::rand_core::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Deserializer, Serialize, Serializer};
use thiserror::Error;

use crate::protocol::ProfileId;

/// A 48-bit Bluetooth device address. Canonical text form is uppercase
/// colon-separated hex: `AA:BB:CC:DD:EE:FF`.
#[derive(Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct BdAddr([u8; 6]);

#[derive(Debug, Error, Clone, PartialEq, Eq)]
#[error("malformed device address `{0}`: expected six colon-separated hex octets")]
pub struct MalformedAddress(pub String);

impl BdAddr {
    pub const fn new(octets: [u8; 6]) -> Self {
        BdAddr(octets)
    }

    pub fn octets(&self) -> [u8; 6] {
        self.0
    }
}

/// Parse `XX:XX:XX:XX:XX:XX` (case-insensitive) into an address.
pub fn parse_bdaddr(text: &str) -> Result<BdAddr, MalformedAddress> {
    let err = || MalformedAddress(text.to_string());
    let parts: Vec<&str> = text.split(':').collect();
    if parts.len() != 6 {
        return Err(err());
    }
    let mut octets = [0u8; 6];
    for (i, part) in parts.iter().enumerate() {
        if part.len() != 2 || !part.chars().all(|c| c.is_ascii_hexdigit()) {
            return Err(err());
        }
        octets[i] = u8::from_str_radix(part, 16).map_err(|_| err())?;
    }
    Ok(BdAddr(octets))
}

impl FromStr for BdAddr {
    type Err = MalformedAddress;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        parse_bdaddr(s)
    }
}

impl fmt::Display for BdAddr {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "{:02X}:{:02X}:{:02X}:{:02X}:{:02X}:{:02X}",
            self.0[0], self.0[1], self.0[2], self.0[3], self.0[4], self.0[5]
        )
    }
}

impl fmt::Debug for BdAddr {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{self}")
    }
}

impl Serialize for BdAddr {
    fn serialize<S: Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        serializer.serialize_str(&self.to_string())
    }
}

impl<'de> Deserialize<'de> for BdAddr {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let text = String::deserialize(deserializer)?;
        parse_bdaddr(&text).map_err(serde::de::Error::custom)
    }
}

/// What a device presents over the air: address plus human-readable name.
/// Nothing in the model authenticates either field, which is the point.
#[derive(Clone, PartialEq, Eq, Debug, Serialize, Deserialize)]
pub struct DeviceIdentity {
    pub addr: BdAddr,
    pub name: String,
}

impl DeviceIdentity {
    pub fn new(addr: BdAddr, name: impl Into<String>) -> Self {
        DeviceIdentity {
            addr,
            name: name.into(),
        }
    }
}

/// Provenance of a link key. Attack-origin keys are what every safety
/// property in this crate quantifies over.
#[derive(Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Debug, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum KeyOrigin {
    LegitimatePairing,
    AttackPairing,
}

/// A pairing link key. `epoch` is a per-run monotone counter so "most recent
/// pairing" is well-defined without consulting wall-clock time.
#[derive(Clone, PartialEq, Eq, Debug)]
pub struct LinkKey {
    pub key_bytes: [u8; 16],
    pub epoch: u64,
    pub origin: KeyOrigin,
}

impl LinkKey {
    /// Key-material equality only; epoch and origin are bookkeeping.
    pub fn matches(&self, other: &LinkKey) -> bool {
        self.key_bytes == other.key_bytes
    }
}

/// The single source of randomness for a run: link keys, defense challenges,
/// and synthetic PCM all draw from one seeded stream in event order.
#[derive(Clone, Debug)]
pub struct KeyForge {
    rng: ChaCha8Rng,
    next_epoch: u64,
}

impl KeyForge {
    pub fn new(seed: u64) -> Self {
        KeyForge {
            rng: ChaCha8Rng::seed_from_u64(seed),
            next_epoch: 1,
        }
    }

    /// Fresh link key; epoch = previous max epoch + 1.
    pub fn generate_link_key(&mut self, origin: KeyOrigin) -> LinkKey {
        let mut key_bytes = [0u8; 16];
        self.rng.fill_bytes(&mut key_bytes);
        let epoch = self.next_epoch;
        self.next_epoch += 1;
        LinkKey {
            key_bytes,
            epoch,
            origin,
        }
    }

    /// 16-byte challenge for replacement-token verification.
    pub fn challenge(&mut self) -> [u8; 16] {
        let mut c = [0u8; 16];
        self.rng.fill_bytes(&mut c);
        c
    }

    /// Deterministic synthetic PCM payload of the requested length.
    pub fn audio_pcm(&mut self, len: usize) -> Vec<u8> {
        let mut buf = vec![0u8; len];
        self.rng.fill_bytes(&mut buf);
        buf
    }
}

/// One remembered peer: presented identity, current link key, and which
/// profiles this device has granted to that peer.
#[derive(Clone, PartialEq, Eq, Debug)]
pub struct PeerRecord {
    pub peer: DeviceIdentity,
    pub key: LinkKey,
    pub granted_profiles: BTreeSet<ProfileId>,
}

/// Per-device persistent pairing store, keyed by peer address only. A spoofed
/// identity with the right address is indistinguishable from the real peer.
#[derive(Clone, Default, Debug)]
pub struct LinkKeyStore {
    records: BTreeMap<BdAddr, PeerRecord>,
}

impl LinkKeyStore {
    pub fn new() -> Self {
        Self::default()
    }

    /// Insert or replace the record for `peer.addr`. Returns `true` when an
    /// existing record was overwritten — the caller owes a KeyOverwritten
    /// trace event in that case.
    pub fn upsert_peer(
        &mut self,
        peer: DeviceIdentity,
        key: LinkKey,
        granted_profiles: BTreeSet<ProfileId>,
    ) -> bool {
        self.records
            .insert(
                peer.addr,
                PeerRecord {
                    peer,
                    key,
                    granted_profiles,
                },
            )
            .is_some()
    }

    pub fn lookup_key(&self, addr: BdAddr) -> Option<&PeerRecord> {
        self.records.get(&addr)
    }

    pub fn lookup_mut(&mut self, addr: BdAddr) -> Option<&mut PeerRecord> {
        self.records.get_mut(&addr)
    }

    /// The record from the most recent pairing (max key epoch). This is what
    /// a device reconnects to after power-on.
    pub fn most_recent(&self) -> Option<&PeerRecord> {
        self.records.values().max_by_key(|r| r.key.epoch)
    }

    pub fn remove(&mut self, addr: BdAddr) -> Option<PeerRecord> {
        self.records.remove(&addr)
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&BdAddr, &PeerRecord)> {
        self.records.iter()
    }
}

/// Millisecond simulation clock. Never moves backwards.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct SimClock {
    now_ms: u64,
}

impl SimClock {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn now(&self) -> u64 {
        self.now_ms
    }

    pub fn advance_to(&mut self, t_ms: u64) {
        assert!(
            t_ms >= self.now_ms,
            "clock must be monotone: {} -> {}",
            self.now_ms,
            t_ms
        );
        self.now_ms = t_ms;
    }
}

/// Who an event is attributed to in the trace. Attackers appear under the
/// identity they presented, exactly as a sniffer would record them.
#[derive(Clone, Copy, PartialEq, Eq, Debug)]
pub enum Actor {
    Sim,
    Addr(BdAddr),
}

impl fmt::Display for Actor {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Actor::Sim => write!(f, "SIM"),
            Actor::Addr(a) => write!(f, "{a}"),
        }
    }
}

#[derive(Clone, Copy, PartialEq, Eq, Debug)]
pub enum PairingModeKind {
    Auto,
    Manual,
}

/// Trace vocabulary. The verdict logic re-derives outcomes from these events,
/// so every security-relevant transition must emit one.
#[derive(Clone, Copy, PartialEq, Eq, Debug)]
pub enum TraceKind {
    PowerOn,
    PowerOff,
    SleepEnter,
    SleepExit,
    ConnectRequest,
    ConnectAccept,
    AuthStart,
    AuthSuccess,
    AuthFailure,
    PairingModeEnter(PairingModeKind),
    PairingComplete,
    KeyOverwritten,
    UserNotification,
    ProfileGranted,
    ProbeSent,
    ProbeReply,
    RelayFrame,
    DefenseRejected,
}

impl fmt::Display for TraceKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            TraceKind::PowerOn => write!(f, "PowerOn"),
            TraceKind::PowerOff => write!(f, "PowerOff"),
            TraceKind::SleepEnter => write!(f, "SleepEnter"),
            TraceKind::SleepExit => write!(f, "SleepExit"),
            TraceKind::ConnectRequest => write!(f, "ConnectRequest"),
            TraceKind::ConnectAccept => write!(f, "ConnectAccept"),
            TraceKind::AuthStart => write!(f, "AuthStart"),
            TraceKind::AuthSuccess => write!(f, "AuthSuccess"),
            TraceKind::AuthFailure => write!(f, "AuthFailure"),
            TraceKind::PairingModeEnter(PairingModeKind::Auto) => {
                write!(f, "PairingModeEnter(auto)")
            }
            TraceKind::PairingModeEnter(PairingModeKind::Manual) => {
                write!(f, "PairingModeEnter(manual)")
            }
            TraceKind::PairingComplete => write!(f, "PairingComplete"),
            TraceKind::KeyOverwritten => write!(f, "KeyOverwritten"),
            TraceKind::UserNotification => write!(f, "UserNotification"),
            TraceKind::ProfileGranted => write!(f, "ProfileGranted"),
            TraceKind::ProbeSent => write!(f, "ProbeSent"),
            TraceKind::ProbeReply => write!(f, "ProbeReply"),
            TraceKind::RelayFrame => write!(f, "RelayFrame"),
            TraceKind::DefenseRejected => write!(f, "DefenseRejected"),
        }
    }
}

#[derive(Clone, PartialEq, Eq, Debug)]
pub struct TraceEvent {
    pub at: u64,
    pub actor: Actor,
    pub kind: TraceKind,
    pub detail: String,
}

#[derive(Serialize)]
struct TraceLine<'a> {
    t: u64,
    actor: String,
    kind: String,
    detail: &'a str,
}

impl TraceEvent {
    /// One JSONL line: `{"t":..,"actor":"..","kind":"..","detail":".."}`.
    /// Field order is part of the format; golden traces compare bytes.
    pub fn to_json_line(&self) -> String {
        let line = TraceLine {
            t: self.at,
            actor: self.actor.to_string(),
            kind: self.kind.to_string(),
            detail: &self.detail,
        };
        serde_json::to_string(&line).expect("trace line serialization cannot fail")
    }
}

/// Append-only event log for one run.
#[derive(Clone, Default, Debug)]
pub struct Trace {
    events: Vec<TraceEvent>,
}

impl Trace {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn emit(&mut self, at: u64, actor: Actor, kind: TraceKind, detail: impl Into<String>) {
        self.events.push(TraceEvent {
            at,
            actor,
            kind,
            detail: detail.into(),
        });
    }

    pub fn events(&self) -> &[TraceEvent] {
        &self.events
    }

    pub fn count_kind(&self, kind: TraceKind) -> usize {
        self.events.iter().filter(|e| e.kind == kind).count()
    }

    pub fn count_kind_for(&self, kind: TraceKind, addr: BdAddr) -> usize {
        self.events
            .iter()
            .filter(|e| e.kind == kind && e.actor == Actor::Addr(addr))
            .count()
    }

    pub fn to_vec(&self) -> Vec<TraceEvent> {
        self.events.clone()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn key(bytes: u8, epoch: u64, origin: KeyOrigin) -> LinkKey {
        LinkKey {
            key_bytes: [bytes; 16],
            epoch,
            origin,
        }
    }

    #[test]
    fn parse_lowercase_canonicalizes_to_uppercase() {
        let addr = parse_bdaddr("aa:bb:cc:dd:ee:ff").unwrap();
        assert_eq!(addr.to_string(), "AA:BB:CC:DD:EE:FF");
    }

    #[test]
    fn parse_rejects_short_input() {
        assert!(matches!(
            parse_bdaddr("AA:BB:CC:DD:EE"),
            Err(MalformedAddress(_))
        ));
    }

    #[test]
    fn parse_rejects_non_hex_octet() {
        assert!(parse_bdaddr("GG:BB:CC:DD:EE:FF").is_err());
    }

    #[test]
    fn parse_rejects_empty_and_garbage() {
        assert!(parse_bdaddr("").is_err());
        assert!(parse_bdaddr("AA-BB-CC-DD-EE-FF").is_err());
        assert!(parse_bdaddr("AAA:BB:CC:DD:EE:F").is_err());
    }

    #[test]
    fn addr_serde_round_trips_as_string() {
        let addr = parse_bdaddr("0a:1b:2c:3d:4e:5f").unwrap();
        let json = serde_json::to_string(&addr).unwrap();
        assert_eq!(json, "\"0A:1B:2C:3D:4E:5F\"");
        let back: BdAddr = serde_json::from_str(&json).unwrap();
        assert_eq!(back, addr);
    }

    #[test]
    fn upsert_new_peer_reports_no_overwrite() {
        let mut store = LinkKeyStore::new();
        let id = DeviceIdentity::new(parse_bdaddr("AA:00:00:00:00:01").unwrap(), "peer");
        let overwrote = store.upsert_peer(id, key(1, 1, KeyOrigin::LegitimatePairing), BTreeSet::new());
        assert!(!overwrote);
        assert_eq!(store.len(), 1);
    }

    #[test]
    fn upsert_existing_peer_reports_overwrite() {
        let mut store = LinkKeyStore::new();
        let addr = parse_bdaddr("AA:00:00:00:00:01").unwrap();
        store.upsert_peer(
            DeviceIdentity::new(addr, "peer"),
            key(1, 1, KeyOrigin::LegitimatePairing),
            BTreeSet::new(),
        );
        let overwrote = store.upsert_peer(
            DeviceIdentity::new(addr, "someone else"),
            key(2, 2, KeyOrigin::AttackPairing),
            BTreeSet::new(),
        );
        assert!(overwrote, "replacing a record must report the overwrite");
        let rec = store.lookup_key(addr).unwrap();
        assert_eq!(rec.key.key_bytes, [2u8; 16], "old key must be gone");
        assert_eq!(rec.key.origin, KeyOrigin::AttackPairing);
    }

    #[test]
    fn lookup_is_keyed_by_address_alone() {
        // Two identities with the same address but different names resolve to
        // the same record: name spoofing is invisible to the key store.
        let mut store = LinkKeyStore::new();
        let addr = parse_bdaddr("AA:00:00:00:00:01").unwrap();
        store.upsert_peer(
            DeviceIdentity::new(addr, "real name"),
            key(7, 1, KeyOrigin::LegitimatePairing),
            BTreeSet::new(),
        );
        let rec = store.lookup_key(addr).unwrap();
        assert_eq!(rec.key.key_bytes, [7u8; 16]);
        assert!(store.lookup_key(parse_bdaddr("AA:00:00:00:00:02").unwrap()).is_none());
    }

    #[test]
    fn most_recent_follows_key_epoch() {
        let mut store = LinkKeyStore::new();
        let a = parse_bdaddr("AA:00:00:00:00:01").unwrap();
        let b = parse_bdaddr("BB:00:00:00:00:02").unwrap();
        store.upsert_peer(
            DeviceIdentity::new(a, "first"),
            key(1, 3, KeyOrigin::LegitimatePairing),
            BTreeSet::new(),
        );
        store.upsert_peer(
            DeviceIdentity::new(b, "second"),
            key(2, 9, KeyOrigin::LegitimatePairing),
            BTreeSet::new(),
        );
        assert_eq!(store.most_recent().unwrap().peer.addr, b);
    }

    #[test]
    fn forge_epochs_are_strictly_increasing_from_one() {
        let mut forge = KeyForge::new(7);
        let k1 = forge.generate_link_key(KeyOrigin::LegitimatePairing);
        let k2 = forge.generate_link_key(KeyOrigin::AttackPairing);
        let k3 = forge.generate_link_key(KeyOrigin::LegitimatePairing);
        assert_eq!((k1.epoch, k2.epoch, k3.epoch), (1, 2, 3));
        assert_ne!(k1.key_bytes, k2.key_bytes);
        assert_ne!(k2.key_bytes, k3.key_bytes);
    }

    #[test]
    fn forge_is_deterministic_per_seed() {
        let mut a = KeyForge::new(42);
        let mut b = KeyForge::new(42);
        for _ in 0..4 {
            assert_eq!(
                a.generate_link_key(KeyOrigin::LegitimatePairing),
                b.generate_link_key(KeyOrigin::LegitimatePairing)
            );
        }
        let mut c = KeyForge::new(43);
        assert_ne!(
            KeyForge::new(42).generate_link_key(KeyOrigin::LegitimatePairing).key_bytes,
            c.generate_link_key(KeyOrigin::LegitimatePairing).key_bytes
        );
    }

    #[test]
    fn forge_seed_42_golden_values() {
        // Frozen first two outputs of the seed-42 stream. If these move, every
        // golden trace in the repo moves with them: treat as a format break.
        let mut forge = KeyForge::new(42);
        let k1 = forge.generate_link_key(KeyOrigin::LegitimatePairing);
        let k2 = forge.generate_link_key(KeyOrigin::AttackPairing);
        assert_eq!(k1.epoch, 1);
        assert_eq!(k2.epoch, 2);
        assert_eq!(k1.key_bytes, GOLDEN_SEED42_KEY1);
        assert_eq!(k2.key_bytes, GOLDEN_SEED42_KEY2);
    }

    // Captured once from ChaCha8Rng::seed_from_u64(42); see forge_seed_42_golden_values.
    const GOLDEN_SEED42_KEY1: [u8; 16] = [
        161, 91, 93, 57, 181, 191, 144, 174, 136, 145, 121, 37, 198, 63, 69, 243,
    ];
    const GOLDEN_SEED42_KEY2: [u8; 16] = [
        140, 83, 182, 197, 8, 183, 113, 109, 82, 103, 22, 88, 249, 178, 154, 160,
    ];

    #[test]
    fn clock_is_monotone() {
        let mut clock = SimClock::new();
        clock.advance_to(5);
        clock.advance_to(5);
        clock.advance_to(9);
        assert_eq!(clock.now(), 9);
    }

    #[test]
    #[should_panic(expected = "monotone")]
    fn clock_rejects_rewind() {
        let mut clock = SimClock::new();
        clock.advance_to(10);
        clock.advance_to(9);
    }

    #[test]
    fn trace_line_format_is_exact() {
        let ev = TraceEvent {
            at: 36000,
            actor: Actor::Addr(parse_bdaddr("B0:B0:00:00:00:01").unwrap()),
            kind: TraceKind::PairingModeEnter(PairingModeKind::Auto),
            detail: "after failed reconnect".into(),
        };
        assert_eq!(
            ev.to_json_line(),
            r#"{"t":36000,"actor":"B0:B0:00:00:00:01","kind":"PairingModeEnter(auto)","detail":"after failed reconnect"}"#
        );
        let sim_ev = TraceEvent {
            at: 0,
            actor: Actor::Sim,
            kind: TraceKind::PowerOn,
            detail: String::new(),
        };
        assert_eq!(
            sim_ev.to_json_line(),
            r#"{"t":0,"actor":"SIM","kind":"PowerOn","detail":""}"#
        );
    }

    #[test]
    fn trace_counters_filter_by_kind_and_actor() {
        let mut trace = Trace::new();
        let a = parse_bdaddr("AA:00:00:00:00:01").unwrap();
        let b = parse_bdaddr("BB:00:00:00:00:02").unwrap();
        trace.emit(1, Actor::Addr(a), TraceKind::UserNotification, "x");
        trace.emit(2, Actor::Addr(b), TraceKind::UserNotification, "y");
        trace.emit(3, Actor::Addr(b), TraceKind::PowerOn, "");
        assert_eq!(trace.count_kind(TraceKind::UserNotification), 2);
        assert_eq!(trace.count_kind_for(TraceKind::UserNotification, b), 1);
    }
}
