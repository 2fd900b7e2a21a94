//! Victim device state machines — power, sleep, reconnect, and the
//! automatic-pairing behavior that decides whether a device is attackable —
//! plus the ten-model catalog the verdict matrix runs against.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::core::{Actor, BdAddr, DeviceIdentity, LinkKeyStore, PairingModeKind, TraceKind};
use crate::protocol::{
    authenticate_connection, establish_connection, pair, Association, PairingRequest, ProfileId,
};
use crate::relay::CodecKind;
use crate::world::{ConnectionId, PartyId, SimEvent, WorldState};

/// What a device does after its reconnect attempt fails authentication.
/// This single trait is what separates the vulnerable models from the safe
/// ones.
#[derive(Clone, Copy, PartialEq, Eq, Debug, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AutoPairingPolicy {
    /// Failure dead-ends; the device stays out of pairing mode.
    NotVulnerable,
    /// The device itself issues a pairing request to the counterpart that
    /// just failed authentication.
    ActiveInitiator,
    /// The device silently enters automatic pairing mode and waits.
    PassiveAfterAuthFailure,
}

/// Hosts (phones/laptops) silently accept no-interaction pairing over an
/// open link; peripherals only pair from an explicit pairing mode.
#[derive(Clone, Copy, PartialEq, Eq, Debug, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DeviceRole {
    Host,
    Peripheral,
}

#[derive(Clone, Copy, PartialEq, Eq, Debug)]
pub enum PowerState {
    On,
    Off,
}

#[derive(Clone, Copy, PartialEq, Eq, Debug)]
pub enum LinkState {
    Disconnected,
    Connecting,
    Connected,
    Sleeping,
}

#[derive(Clone, Copy, PartialEq, Eq, Debug)]
pub enum PairingMode {
    NoneActive,
    Manual,
    Automatic,
}

/// Everything behavioral about a device model. Two devices with equal
/// profiles are interchangeable in every scenario.
#[derive(Clone, PartialEq, Eq, Debug)]
pub struct DeviceBehaviorProfile {
    pub model_name: String,
    pub policy: AutoPairingPolicy,
    pub role: DeviceRole,
    /// None = the device never idle-sleeps (hosts).
    pub sleep_idle_timeout_ms: Option<u64>,
    pub reconnect_on_power_on: bool,
    /// Withhold profile grants until the second session on a fresh key.
    pub requires_reconnect_for_profile_grant: bool,
    pub codec_capabilities: BTreeSet<CodecKind>,
    /// Device-level defense: notify the user on auto-pairing transitions
    /// and on completed pairings.
    pub defense_notifications: bool,
    pub supported_profiles: BTreeSet<ProfileId>,
}

/// The master-side endpoint: a phone. Never idle-sleeps, reconnects on
/// power-on, and accepts no-interaction pairing over an open link (the PIN
/// bypass surface).
pub fn host_profile() -> DeviceBehaviorProfile {
    DeviceBehaviorProfile {
        model_name: "smartphone-host".to_string(),
        policy: AutoPairingPolicy::NotVulnerable,
        role: DeviceRole::Host,
        sleep_idle_timeout_ms: None,
        reconnect_on_power_on: true,
        requires_reconnect_for_profile_grant: false,
        codec_capabilities: [CodecKind::PcmPassthrough, CodecKind::SbcStub]
            .into_iter()
            .collect(),
        defense_notifications: false,
        supported_profiles: [ProfileId::A2dp, ProfileId::Avrcp, ProfileId::Pbap]
            .into_iter()
            .collect(),
    }
}

#[cfg(test)]
impl DeviceBehaviorProfile {
    pub fn test_peripheral(model: &str) -> Self {
        DeviceBehaviorProfile {
            model_name: model.to_string(),
            policy: AutoPairingPolicy::PassiveAfterAuthFailure,
            role: DeviceRole::Peripheral,
            sleep_idle_timeout_ms: Some(30_000),
            reconnect_on_power_on: true,
            requires_reconnect_for_profile_grant: false,
            codec_capabilities: [CodecKind::SbcStub].into_iter().collect(),
            defense_notifications: false,
            supported_profiles: [ProfileId::A2dp, ProfileId::Avrcp].into_iter().collect(),
        }
    }
}

/// One simulated victim endpoint.
#[derive(Clone, Debug)]
pub struct VictimDevice {
    pub identity: DeviceIdentity,
    pub profile: DeviceBehaviorProfile,
    pub power: PowerState,
    pub link: LinkState,
    pub store: LinkKeyStore,
    pub pairing_mode: PairingMode,
    pub discoverable: bool,
    /// Post-sleep window: the master will take a connection presenting this
    /// address without any ceremony.
    pub accepting_peer: Option<BdAddr>,
    pub recent_auth_failure: bool,
    pub last_activity: u64,
    pub conn: Option<ConnectionId>,
    /// Sessions counted per (peer address, key epoch); reconnect-gated
    /// profile grants read this.
    pub session_counts: BTreeMap<(BdAddr, u64), u32>,
    pub received_audio: Vec<u8>,
    pub(crate) sleep_deadline: Option<u64>,
}

impl VictimDevice {
    pub fn new(identity: DeviceIdentity, profile: DeviceBehaviorProfile) -> Self {
        VictimDevice {
            identity,
            profile,
            power: PowerState::Off,
            link: LinkState::Disconnected,
            store: LinkKeyStore::new(),
            pairing_mode: PairingMode::NoneActive,
            discoverable: false,
            accepting_peer: None,
            recent_auth_failure: false,
            last_activity: 0,
            conn: None,
            session_counts: BTreeMap::new(),
            received_audio: Vec::new(),
            sleep_deadline: None,
        }
    }

    pub fn is_on(&self) -> bool {
        self.power == PowerState::On
    }

    /// Test/setup helper: power on without emitting events or scheduling.
    pub fn power_on_quietly(&mut self, now: u64) {
        self.power = PowerState::On;
        self.link = LinkState::Disconnected;
        self.last_activity = now;
    }
}

#[derive(Debug, Error, Clone, Copy, PartialEq, Eq)]
pub enum DeviceError {
    #[error("transition not permitted from the current device state")]
    InvalidTransition,
}

#[derive(Clone, Copy, PartialEq, Eq, Debug)]
pub enum ReconnectOutcome {
    Reconnected(ConnectionId),
    /// Authentication failed and the policy-specific follow-up (if any)
    /// has been set in motion.
    AuthFailed(AutoPairingPolicy),
}

#[derive(Debug, Error, Clone, Copy, PartialEq, Eq)]
pub enum ReconnectError {
    #[error("nobody reachable at the stored peer address")]
    NoPeerReachable,
    #[error("device is off, already linked, or has no pairing records")]
    NotReconnectable,
}

/// Pattern #1 devices fire their pairing request this long after the failed
/// authentication. Fixed latency keeps traces reproducible.
pub const ACTIVE_PAIRING_DELAY_MS: u64 = 100;

/// Flip device power. Power-off drops any link silently — the peer gets no
/// user-facing signal. Power-on schedules a reconnect when the profile says
/// so.
pub fn power_cycle(world: &mut WorldState, idx: usize, on: bool) {
    let now = world.now();
    if on {
        if world.device(idx).is_on() {
            return;
        }
        {
            let d = world.device_mut(idx);
            d.power = PowerState::On;
            d.link = LinkState::Disconnected;
            d.last_activity = now;
            d.pairing_mode = PairingMode::NoneActive;
            d.discoverable = false;
            d.accepting_peer = None;
            d.recent_auth_failure = false;
            d.sleep_deadline = None;
        }
        let d = world.device(idx);
        let addr = d.identity.addr;
        let reconnect = d.profile.reconnect_on_power_on && !d.store.is_empty();
        let detail = if reconnect {
            let target = d.store.most_recent().expect("store non-empty").peer.addr;
            format!("will reconnect to {target}")
        } else {
            String::new()
        };
        world.trace.emit(now, Actor::Addr(addr), TraceKind::PowerOn, detail);
        if reconnect {
            world.schedule(0, SimEvent::ReconnectAttempt { device: idx });
        }
    } else {
        if !world.device(idx).is_on() {
            return;
        }
        let addr = world.device(idx).identity.addr;
        world
            .trace
            .emit(now, Actor::Addr(addr), TraceKind::PowerOff, String::new());
        if let Some(conn) = world.device(idx).conn {
            world.close_connection(conn);
        }
        let d = world.device_mut(idx);
        d.power = PowerState::Off;
        d.link = LinkState::Disconnected;
        d.conn = None;
        d.pairing_mode = PairingMode::NoneActive;
        d.discoverable = false;
        d.accepting_peer = None;
        d.recent_auth_failure = false;
        d.sleep_deadline = None;
    }
}

/// Arm (or re-arm) the idle timer for a connected device that can sleep.
/// Stale checks left in the queue are disarmed by deadline mismatch.
fn schedule_sleep_check(world: &mut WorldState, idx: usize) {
    let d = world.device(idx);
    if !d.is_on() || d.link != LinkState::Connected {
        return;
    }
    let Some(timeout) = d.profile.sleep_idle_timeout_ms else {
        return;
    };
    let at = d.last_activity + timeout;
    world.device_mut(idx).sleep_deadline = Some(at);
    world.schedule_at(at, SimEvent::SleepCheck { device: idx });
}

/// Idle-timer expiry. At or past the timeout the device sleeps: its side of
/// the session ends and the peer (the master, in the modeled topology) moves
/// to the silent accepting state.
pub fn tick_idle(world: &mut WorldState, idx: usize) {
    let now = world.now();
    let d = world.device(idx);
    if !d.is_on() || d.link != LinkState::Connected || d.sleep_deadline != Some(now) {
        return;
    }
    let Some(timeout) = d.profile.sleep_idle_timeout_ms else {
        return;
    };
    if now - d.last_activity < timeout {
        // Activity moved the deadline; chase it.
        schedule_sleep_check(world, idx);
        return;
    }
    let addr = d.identity.addr;
    let idle_for = now - d.last_activity;
    if let Some(conn) = d.conn {
        let (peer, my_presented) = {
            let c = world.connection(conn);
            (
                c.peer_of(PartyId::Device(idx)),
                c.presented_of(PartyId::Device(idx)).addr,
            )
        };
        world.close_connection(conn);
        if let PartyId::Device(j) = peer {
            // No event on the peer: the link just goes quiet.
            world.device_mut(j).accepting_peer = Some(my_presented);
        }
    }
    let d = world.device_mut(idx);
    d.link = LinkState::Sleeping;
    d.sleep_deadline = None;
    world.trace.emit(
        now,
        Actor::Addr(addr),
        TraceKind::SleepEnter,
        format!("idle {idle_for}ms"),
    );
}

/// User interaction: refreshes the idle timer, wakes a sleeping device (which
/// then reconnects), and nudges a disconnected one back toward its peer.
pub fn user_activity(world: &mut WorldState, idx: usize) {
    let now = world.now();
    if !world.device(idx).is_on() {
        return;
    }
    world.device_mut(idx).last_activity = now;
    match world.device(idx).link {
        LinkState::Sleeping => {
            let addr = world.device(idx).identity.addr;
            world
                .trace
                .emit(now, Actor::Addr(addr), TraceKind::SleepExit, "user activity");
            world.device_mut(idx).link = LinkState::Disconnected;
            world.schedule(0, SimEvent::ReconnectAttempt { device: idx });
        }
        LinkState::Connected => schedule_sleep_check(world, idx),
        LinkState::Disconnected => {
            if !world.device(idx).store.is_empty() {
                world.schedule(0, SimEvent::ReconnectAttempt { device: idx });
            }
        }
        LinkState::Connecting => {}
    }
}

/// Session establishment callback: both endpoints of a freshly authenticated
/// connection land here.
pub fn on_session_up(world: &mut WorldState, idx: usize) {
    let now = world.now();
    {
        let d = world.device_mut(idx);
        d.link = LinkState::Connected;
        d.last_activity = now;
        d.recent_auth_failure = false;
    }
    schedule_sleep_check(world, idx);
}

/// Reconnect to the most recently paired peer. On authentication failure the
/// device's policy decides the follow-up — this fork is the whole attack
/// surface.
pub fn attempt_reconnect(
    world: &mut WorldState,
    idx: usize,
) -> Result<ReconnectOutcome, ReconnectError> {
    let d = world.device(idx);
    if !d.is_on() || d.link != LinkState::Disconnected || d.store.is_empty() {
        return Err(ReconnectError::NotReconnectable);
    }
    let target = d.store.most_recent().expect("store non-empty").peer.addr;
    let conn = establish_connection(world, PartyId::Device(idx), target)
        .map_err(|_| ReconnectError::NoPeerReachable)?;
    let result = authenticate_connection(world, conn);
    if result.is_success() {
        return Ok(ReconnectOutcome::Reconnected(conn));
    }
    let policy = world.device(idx).profile.policy;
    let counterpart = world.connection(conn).peer_of(PartyId::Device(idx));
    match policy {
        AutoPairingPolicy::NotVulnerable => {
            world.close_connection(conn);
            world.device_mut(idx).recent_auth_failure = false;
        }
        AutoPairingPolicy::ActiveInitiator => {
            // Pattern #1: keep the link, engage pairing, and send the request
            // to whoever just failed to authenticate.
            let _ = enter_automatic_pairing(world, idx);
            world.schedule(
                ACTIVE_PAIRING_DELAY_MS,
                SimEvent::DeviceInitiatesPairing { device: idx, conn },
            );
        }
        AutoPairingPolicy::PassiveAfterAuthFailure => {
            // Pattern #2: drop the link, open up, and wait to be paired.
            world.close_connection(conn);
            let _ = enter_automatic_pairing(world, idx);
            world.device_mut(idx).discoverable = true;
            crate::attacker::on_victim_auto_pairing(world, idx, counterpart);
        }
    }
    Ok(ReconnectOutcome::AuthFailed(policy))
}

/// Transition into automatic pairing mode. Only legal right after a failed
/// reconnect; the device-level defense hooks its notification here.
pub fn enter_automatic_pairing(world: &mut WorldState, idx: usize) -> Result<(), DeviceError> {
    let now = world.now();
    let d = world.device(idx);
    if !d.is_on() || d.link == LinkState::Connected || !d.recent_auth_failure {
        return Err(DeviceError::InvalidTransition);
    }
    let addr = d.identity.addr;
    let notify = world.defenses.notify || d.profile.defense_notifications;
    world.device_mut(idx).pairing_mode = PairingMode::Automatic;
    world.trace.emit(
        now,
        Actor::Addr(addr),
        TraceKind::PairingModeEnter(PairingModeKind::Auto),
        "after failed reconnect",
    );
    if notify {
        world.trace.emit(
            now,
            Actor::Addr(addr),
            TraceKind::UserNotification,
            "entered automatic pairing mode",
        );
    }
    Ok(())
}

/// Pattern #1 tail: the device sends its own pairing request over the link
/// that just failed authentication, then brings the session up.
pub fn complete_active_pairing(world: &mut WorldState, idx: usize, conn: ConnectionId) {
    {
        let c = world.connection(conn);
        if !c.open || c.initiator != PartyId::Device(idx) {
            return;
        }
    }
    let d = world.device(idx);
    if !d.is_on() || d.pairing_mode != PairingMode::Automatic {
        return;
    }
    let request = PairingRequest {
        initiator: d.identity.clone(),
        responder_addr: world.connection(conn).responder_identity.addr,
        association: Association::JustWorksNoMitm,
        replacement_proof: None,
    };
    match pair(world, conn, request) {
        Ok(_) => {
            let _ = authenticate_connection(world, conn);
            crate::attacker::after_attack_pairing(world, conn);
        }
        Err(_) => {
            // Blocked (defense) or refused: give up and close down.
            world.close_connection(conn);
            world.device_mut(idx).pairing_mode = PairingMode::NoneActive;
        }
    }
}

/// Stream `bytes` of audio from this device over its authenticated session.
/// Device peers receive it when they granted A2DP to this address; attacker
/// peers get the raw PCM handed to their capture path.
pub fn send_audio(world: &mut WorldState, idx: usize, bytes: usize) {
    let now = world.now();
    let d = world.device(idx);
    if !d.is_on() || d.link != LinkState::Connected {
        return;
    }
    let Some(conn) = d.conn else { return };
    {
        let c = world.connection(conn);
        if !c.open || !c.authenticated {
            return;
        }
    }
    let pcm = world.forge.audio_pcm(bytes);
    world.device_mut(idx).last_activity = now;
    schedule_sleep_check(world, idx);
    let (peer, my_addr) = {
        let c = world.connection(conn);
        (
            c.peer_of(PartyId::Device(idx)),
            c.presented_of(PartyId::Device(idx)).addr,
        )
    };
    match peer {
        PartyId::Device(j) => {
            let granted = world
                .device(j)
                .store
                .lookup_key(my_addr)
                .is_some_and(|rec| rec.granted_profiles.contains(&ProfileId::A2dp));
            if granted {
                receive_audio(world, j, &pcm);
            }
        }
        PartyId::Attacker(k) => crate::attacker::on_victim_audio(world, k, conn, pcm),
    }
}

/// Sink-side delivery. Counts as activity (keeps the device awake).
pub fn receive_audio(world: &mut WorldState, idx: usize, pcm: &[u8]) {
    let now = world.now();
    if !world.device(idx).is_on() {
        return;
    }
    {
        let d = world.device_mut(idx);
        d.received_audio.extend_from_slice(pcm);
        d.last_activity = now;
    }
    if world.device(idx).link == LinkState::Connected {
        schedule_sleep_check(world, idx);
    }
}

// ---------------------------------------------------------------------------
// Device catalog
// ---------------------------------------------------------------------------

/// Who initiated the connection that carried the malicious pairing.
#[derive(Clone, Copy, PartialEq, Eq, Debug, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InitiatorVerdict {
    Bob,
    Mallory,
    Na,
}

impl std::fmt::Display for InitiatorVerdict {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            InitiatorVerdict::Bob => write!(f, "Bob"),
            InitiatorVerdict::Mallory => write!(f, "Mallory"),
            InitiatorVerdict::Na => write!(f, "-"),
        }
    }
}

/// Expected grade for one MitM sub-scenario. `Na` marks models the audio
/// phases were not evaluated against.
#[derive(Clone, Copy, PartialEq, Eq, Debug, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AsVerdict {
    Full,
    Partial,
    Na,
}

impl std::fmt::Display for AsVerdict {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            AsVerdict::Full => write!(f, "Full"),
            AsVerdict::Partial => write!(f, "Partial"),
            AsVerdict::Na => write!(f, "-"),
        }
    }
}

/// Golden expectations for one catalog row.
#[derive(Clone, Copy, PartialEq, Eq, Debug, Serialize, Deserialize)]
pub struct ExpectedVerdict {
    pub stealtooth: bool,
    pub initiator: InitiatorVerdict,
    pub as1: AsVerdict,
    pub as2: AsVerdict,
    pub as3: AsVerdict,
}

impl ExpectedVerdict {
    /// Whether the audio/MitM phases apply to this row at all.
    pub fn mitm_applicable(&self) -> bool {
        self.as1 != AsVerdict::Na || self.as2 != AsVerdict::Na || self.as3 != AsVerdict::Na
    }
}

#[derive(Clone, PartialEq, Eq, Debug, Serialize, Deserialize)]
pub struct CatalogEntry {
    pub model: String,
    pub policy: AutoPairingPolicy,
    pub sleep_idle_timeout_ms: u64,
    pub reconnect_on_power_on: bool,
    pub requires_reconnect_for_profile_grant: bool,
    pub codecs: Vec<CodecKind>,
    pub expected: ExpectedVerdict,
}

impl CatalogEntry {
    pub fn profile(&self) -> DeviceBehaviorProfile {
        DeviceBehaviorProfile {
            model_name: self.model.clone(),
            policy: self.policy,
            role: DeviceRole::Peripheral,
            sleep_idle_timeout_ms: Some(self.sleep_idle_timeout_ms),
            reconnect_on_power_on: self.reconnect_on_power_on,
            requires_reconnect_for_profile_grant: self.requires_reconnect_for_profile_grant,
            codec_capabilities: self.codecs.iter().copied().collect(),
            defense_notifications: false,
            supported_profiles: [ProfileId::A2dp, ProfileId::Avrcp].into_iter().collect(),
        }
    }
}

#[derive(Clone, PartialEq, Eq, Debug, Serialize, Deserialize)]
pub struct DeviceCatalog {
    pub devices: Vec<CatalogEntry>,
}

impl DeviceCatalog {
    pub fn find(&self, model: &str) -> Option<&CatalogEntry> {
        self.devices.iter().find(|e| e.model == model)
    }

    pub fn len(&self) -> usize {
        self.devices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.devices.is_empty()
    }
}

#[derive(Debug, Error)]
pub enum CatalogError {
    #[error("catalog does not parse: {0}")]
    Schema(String),
    #[error("catalog invariant violated: {0}")]
    Invalid(String),
}

/// Parse and validate a catalog document.
pub fn load_catalog(text: &str) -> Result<DeviceCatalog, CatalogError> {
    let catalog: DeviceCatalog =
        serde_json::from_str(text).map_err(|e| CatalogError::Schema(e.to_string()))?;
    if catalog.devices.is_empty() {
        return Err(CatalogError::Invalid("catalog lists no devices".into()));
    }
    let mut seen = BTreeSet::new();
    for entry in &catalog.devices {
        if !seen.insert(entry.model.clone()) {
            return Err(CatalogError::Invalid(format!(
                "duplicate model `{}`",
                entry.model
            )));
        }
        if entry.sleep_idle_timeout_ms == 0 {
            return Err(CatalogError::Invalid(format!(
                "`{}`: sleep_idle_timeout_ms must be positive",
                entry.model
            )));
        }
        let initiator_is_na = entry.expected.initiator == InitiatorVerdict::Na;
        if entry.expected.stealtooth == initiator_is_na {
            return Err(CatalogError::Invalid(format!(
                "`{}`: initiator must be set exactly when the attack succeeds",
                entry.model
            )));
        }
    }
    Ok(catalog)
}

/// The committed ten-model catalog the matrix and acceptance suite run on.
pub fn bundled_catalog() -> DeviceCatalog {
    load_catalog(include_str!("../data/catalog.json")).expect("bundled catalog is valid")
}
