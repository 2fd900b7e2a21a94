//! The simulation world: devices, attacker agents, open connections, the
//! deterministic event queue, and the address-resolution rules that decide
//! who answers a connection request.
//!
//! Everything observable about a run is a pure function of (scenario, seed):
//! events execute in (time, insertion-sequence) order and every container
//! iterates deterministically.

use std::collections::BTreeMap;

use crate::attacker::{AttackDriver, AttackPlan, AttackerAgent};
use crate::core::{BdAddr, DeviceIdentity, KeyForge, LinkKey, LinkKeyStore, SimClock, Trace};
use crate::devices::VictimDevice;
use crate::protocol::{AuthMode, ConnectError, EncryptionParams, ProfileId};

/// A party that can hold keys and speak the protocol.
#[derive(Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Debug)]
pub enum PartyId {
    Device(usize),
    Attacker(usize),
}

impl PartyId {
    pub fn is_attacker(&self) -> bool {
        matches!(self, PartyId::Attacker(_))
    }
}

/// Index into the world's connection table. Connections are never removed,
/// only closed, so the id stays valid for the whole run.
#[derive(Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Debug)]
pub struct ConnectionId(pub usize);

impl std::fmt::Display for ConnectionId {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}", self.0)
    }
}

/// One baseband (ACL) link. The initiator is the master. Identities are
/// frozen at open time: they are what each side *presented*, which for a
/// spoofing attacker differs from its native identity.
#[derive(Clone, Debug)]
pub struct Connection {
    pub open: bool,
    pub initiator: PartyId,
    pub responder: PartyId,
    pub initiator_identity: DeviceIdentity,
    pub responder_identity: DeviceIdentity,
    pub authenticated: bool,
    pub encryption: Option<EncryptionParams>,
    /// Per-side session index on the current key (1 = first session after
    /// the key was installed). Drives reconnect-gated profile grants.
    pub initiator_session: u32,
    pub responder_session: u32,
    pub opened_at: u64,
}

impl Connection {
    pub fn peer_of(&self, party: PartyId) -> PartyId {
        if party == self.initiator {
            self.responder
        } else {
            self.initiator
        }
    }

    pub fn presented_of(&self, party: PartyId) -> &DeviceIdentity {
        if party == self.initiator {
            &self.initiator_identity
        } else {
            &self.responder_identity
        }
    }

    pub fn involves(&self, party: PartyId) -> bool {
        self.initiator == party || self.responder == party
    }
}

/// Which defenses are active. `notify` is the device-level defense (user
/// notifications on auto-pairing transitions and new pairings); `protocol`
/// is the link-key replacement proof.
#[derive(Clone, Copy, Default, PartialEq, Eq, Debug)]
pub struct DefenseConfig {
    pub notify: bool,
    pub protocol: bool,
}

#[derive(Clone, Copy, PartialEq, Eq, Debug)]
pub enum DefenseKind {
    Notify,
    Protocol,
}

/// Everything the event loop can be asked to do later.
#[derive(Clone, Debug)]
pub enum SimEvent {
    PowerOn { device: usize },
    PowerOff { device: usize },
    UserActivity { device: usize },
    /// Re-examine a device's idle timer (scheduled at the sleep deadline).
    SleepCheck { device: usize },
    ReconnectAttempt { device: usize },
    /// Pattern #1 tail: the victim itself pairs over the still-open link.
    DeviceInitiatesPairing { device: usize, conn: ConnectionId },
    /// Pattern #2 tail: the attacker pairs with the victim now in automatic
    /// pairing mode.
    AttackerPairs { attacker: usize, target: BdAddr },
    StartAttack,
    MitmProbe { attacker: usize },
    SendAudio { device: usize, bytes: usize },
    SetDefense { kind: DefenseKind, enabled: bool },
}

/// A completed pairing, recorded by `protocol::pair` for verdict derivation.
#[derive(Clone, Debug)]
pub struct PairingRecord {
    pub at: u64,
    pub conn: ConnectionId,
    pub initiator: PartyId,
    pub responder: PartyId,
    pub key: LinkKey,
}

pub struct WorldState {
    pub clock: SimClock,
    pub trace: Trace,
    pub forge: KeyForge,
    pub auth_mode: AuthMode,
    pub defenses: DefenseConfig,
    pub devices: Vec<VictimDevice>,
    pub attackers: Vec<AttackerAgent>,
    pub connections: Vec<Connection>,
    pub pairing_log: Vec<PairingRecord>,
    pub attack_plan: Option<AttackPlan>,
    pub attack: Option<AttackDriver>,
    queue: BTreeMap<(u64, u64), SimEvent>,
    next_seq: u64,
}

impl WorldState {
    pub fn new(seed: u64, auth_mode: AuthMode, defenses: DefenseConfig) -> Self {
        WorldState {
            clock: SimClock::new(),
            trace: Trace::new(),
            forge: KeyForge::new(seed),
            auth_mode,
            defenses,
            devices: Vec::new(),
            attackers: Vec::new(),
            connections: Vec::new(),
            pairing_log: Vec::new(),
            attack_plan: None,
            attack: None,
            queue: BTreeMap::new(),
            next_seq: 0,
        }
    }

    pub fn add_device(&mut self, device: VictimDevice) -> usize {
        self.devices.push(device);
        self.devices.len() - 1
    }

    pub fn add_attacker(&mut self, agent: AttackerAgent) -> usize {
        self.attackers.push(agent);
        self.attackers.len() - 1
    }

    pub fn now(&self) -> u64 {
        self.clock.now()
    }

    pub fn device(&self, idx: usize) -> &VictimDevice {
        &self.devices[idx]
    }

    pub fn device_mut(&mut self, idx: usize) -> &mut VictimDevice {
        &mut self.devices[idx]
    }

    pub fn attacker(&self, idx: usize) -> &AttackerAgent {
        &self.attackers[idx]
    }

    pub fn attacker_mut(&mut self, idx: usize) -> &mut AttackerAgent {
        &mut self.attackers[idx]
    }

    pub fn connection(&self, id: ConnectionId) -> &Connection {
        &self.connections[id.0]
    }

    pub fn connection_mut(&mut self, id: ConnectionId) -> &mut Connection {
        &mut self.connections[id.0]
    }

    /// Genuine (native-identity) device at this address, if any.
    pub fn device_index_by_addr(&self, addr: BdAddr) -> Option<usize> {
        self.devices.iter().position(|d| d.identity.addr == addr)
    }

    pub fn store(&self, party: PartyId) -> &LinkKeyStore {
        match party {
            PartyId::Device(i) => &self.devices[i].store,
            PartyId::Attacker(i) => &self.attackers[i].store,
        }
    }

    pub fn store_mut(&mut self, party: PartyId) -> &mut LinkKeyStore {
        match party {
            PartyId::Device(i) => &mut self.devices[i].store,
            PartyId::Attacker(i) => &mut self.attackers[i].store,
        }
    }

    /// The identity a party currently presents over the air.
    pub fn presented_identity(&self, party: PartyId) -> DeviceIdentity {
        match party {
            PartyId::Device(i) => self.devices[i].identity.clone(),
            PartyId::Attacker(i) => self.attackers[i].presented().clone(),
        }
    }

    /// Native address of a party (devices cannot change theirs; for
    /// attackers this is the un-spoofed adapter address).
    pub fn self_addr(&self, party: PartyId) -> Option<BdAddr> {
        match party {
            PartyId::Device(i) => Some(self.devices[i].identity.addr),
            PartyId::Attacker(i) => Some(self.attackers[i].config.native_identity.addr),
        }
    }

    /// A device engaged in any open link cannot take a second one; one ACL
    /// per device. Attackers multiplex freely.
    fn party_busy(&self, party: PartyId) -> bool {
        match party {
            PartyId::Attacker(_) => false,
            PartyId::Device(i) => self.devices[i]
                .conn
                .is_some_and(|c| self.connections[c.0].open),
        }
    }

    /// Whether `responder` will take a connection from someone presenting
    /// `initiator_identity`: it must be discoverable, or one side must
    /// already know the other (a pairing record), or the responder must be
    /// in its post-sleep accepting window for that address.
    fn party_reachable(
        &self,
        initiator: PartyId,
        initiator_identity: &DeviceIdentity,
        responder: PartyId,
        target: BdAddr,
    ) -> bool {
        let initiator_knows_target = self.store(initiator).lookup_key(target).is_some();
        match responder {
            PartyId::Attacker(i) => {
                let a = &self.attackers[i];
                a.config.discoverable
                    || initiator_knows_target
                    || a.store.lookup_key(initiator_identity.addr).is_some()
            }
            PartyId::Device(i) => {
                let d = &self.devices[i];
                d.discoverable
                    || initiator_knows_target
                    || d.store.lookup_key(initiator_identity.addr).is_some()
                    || d.accepting_peer == Some(initiator_identity.addr)
            }
        }
    }

    /// Who answers at `target`. The genuine owner of the address wins when it
    /// is on, reachable, and free; a spoofing attacker picks up otherwise —
    /// which is the entire trick.
    pub fn resolve_responder(
        &self,
        initiator: PartyId,
        initiator_identity: &DeviceIdentity,
        target: BdAddr,
    ) -> Result<PartyId, ConnectError> {
        let mut candidates: Vec<PartyId> = Vec::new();
        if let Some(i) = self.device_index_by_addr(target) {
            if PartyId::Device(i) != initiator {
                candidates.push(PartyId::Device(i));
            }
        }
        for (i, a) in self.attackers.iter().enumerate() {
            if a.presented().addr == target && PartyId::Attacker(i) != initiator {
                candidates.push(PartyId::Attacker(i));
            }
        }
        let mut saw_present = false;
        let mut saw_unreachable = false;
        for candidate in candidates {
            if let PartyId::Device(i) = candidate {
                if !self.devices[i].is_on() {
                    continue;
                }
            }
            saw_present = true;
            if self.party_busy(candidate) {
                continue;
            }
            if self.party_reachable(initiator, initiator_identity, candidate, target) {
                return Ok(candidate);
            }
            saw_unreachable = true;
        }
        if saw_unreachable {
            Err(ConnectError::ResponderNotDiscoverable)
        } else {
            // Nobody at the address, powered off, or every taker was busy.
            let _ = saw_present;
            Err(ConnectError::ResponderUnavailable)
        }
    }

    pub fn open_connection(
        &mut self,
        initiator: PartyId,
        responder: PartyId,
        initiator_identity: DeviceIdentity,
        responder_identity: DeviceIdentity,
    ) -> ConnectionId {
        let id = ConnectionId(self.connections.len());
        self.connections.push(Connection {
            open: true,
            initiator,
            responder,
            initiator_identity,
            responder_identity,
            authenticated: false,
            encryption: None,
            initiator_session: 0,
            responder_session: 0,
            opened_at: self.clock.now(),
        });
        for party in [initiator, responder] {
            if let PartyId::Device(i) = party {
                let d = &mut self.devices[i];
                d.conn = Some(id);
                d.link = crate::devices::LinkState::Connecting;
            }
        }
        id
    }

    /// Close a link. Device endpoints fall back to Disconnected silently —
    /// no user-facing event accompanies a dropped link.
    pub fn close_connection(&mut self, id: ConnectionId) {
        let (initiator, responder) = {
            let c = &mut self.connections[id.0];
            if !c.open {
                return;
            }
            c.open = false;
            (c.initiator, c.responder)
        };
        for party in [initiator, responder] {
            if let PartyId::Device(i) = party {
                let d = &mut self.devices[i];
                if d.conn == Some(id) {
                    d.conn = None;
                    d.link = crate::devices::LinkState::Disconnected;
                }
            }
        }
    }

    /// Count this authentication as one session on the key currently stored
    /// for `peer_addr`, returning its 1-based index. Attackers do not gate
    /// anything on session counts and always report 0.
    pub fn bump_session(&mut self, party: PartyId, peer_addr: BdAddr) -> u32 {
        match party {
            PartyId::Attacker(_) => 0,
            PartyId::Device(i) => {
                let epoch = match self.devices[i].store.lookup_key(peer_addr) {
                    Some(rec) => rec.key.epoch,
                    None => return 0,
                };
                let counter = self.devices[i]
                    .session_counts
                    .entry((peer_addr, epoch))
                    .or_insert(0);
                *counter += 1;
                *counter
            }
        }
    }

    /// Install a legitimate pairing between two devices without running the
    /// protocol — scenario setup for "already paired before the attack".
    /// Emits no trace events.
    pub fn pre_pair_devices(&mut self, a: usize, b: usize, profiles: &[ProfileId]) {
        let key = self
            .forge
            .generate_link_key(crate::core::KeyOrigin::LegitimatePairing);
        let granted: std::collections::BTreeSet<ProfileId> = profiles.iter().copied().collect();
        let id_a = self.devices[a].identity.clone();
        let id_b = self.devices[b].identity.clone();
        self.devices[a]
            .store
            .upsert_peer(id_b, key.clone(), granted.clone());
        self.devices[b].store.upsert_peer(id_a, key, granted);
    }

    pub fn schedule(&mut self, delay_ms: u64, event: SimEvent) {
        let at = self.clock.now() + delay_ms;
        self.schedule_at(at, event);
    }

    pub fn schedule_at(&mut self, at_ms: u64, event: SimEvent) {
        assert!(at_ms >= self.clock.now(), "cannot schedule into the past");
        let seq = self.next_seq;
        self.next_seq += 1;
        self.queue.insert((at_ms, seq), event);
    }

    pub fn pending_events(&self) -> usize {
        self.queue.len()
    }

    /// Process every queued event in (time, insertion) order until the queue
    /// is empty.
    pub fn run_until_idle(&mut self) {
        while let Some((&(at, seq), _)) = self.queue.iter().next() {
            let event = self.queue.remove(&(at, seq)).expect("peeked key exists");
            self.clock.advance_to(at);
            self.dispatch(event);
        }
    }

    /// Process events up to and including `t_limit`, then park the clock
    /// there. Lets callers interleave external actions with simulated time.
    pub fn run_until(&mut self, t_limit: u64) {
        loop {
            let next = match self.queue.iter().next() {
                Some((&(at, seq), _)) if at <= t_limit => (at, seq),
                _ => break,
            };
            let event = self.queue.remove(&next).expect("peeked key exists");
            self.clock.advance_to(next.0);
            self.dispatch(event);
        }
        if t_limit > self.clock.now() {
            self.clock.advance_to(t_limit);
        }
    }

    fn dispatch(&mut self, event: SimEvent) {
        match event {
            SimEvent::PowerOn { device } => crate::devices::power_cycle(self, device, true),
            SimEvent::PowerOff { device } => crate::devices::power_cycle(self, device, false),
            SimEvent::UserActivity { device } => crate::devices::user_activity(self, device),
            SimEvent::SleepCheck { device } => crate::devices::tick_idle(self, device),
            SimEvent::ReconnectAttempt { device } => {
                let _ = crate::devices::attempt_reconnect(self, device);
            }
            SimEvent::DeviceInitiatesPairing { device, conn } => {
                crate::devices::complete_active_pairing(self, device, conn);
            }
            SimEvent::AttackerPairs { attacker, target } => {
                crate::attacker::attacker_pairs(self, attacker, target);
            }
            SimEvent::StartAttack => crate::attacker::start_attack(self),
            SimEvent::MitmProbe { attacker } => crate::attacker::mitm_probe_step(self, attacker),
            SimEvent::SendAudio { device, bytes } => {
                crate::devices::send_audio(self, device, bytes);
            }
            SimEvent::SetDefense { kind, enabled } => match kind {
                DefenseKind::Notify => self.defenses.notify = enabled,
                DefenseKind::Protocol => self.defenses.protocol = enabled,
            },
        }
    }
}
