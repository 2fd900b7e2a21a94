//! Attack-side machinery: spoofing radios, the session-state probe loop, the
//! key-theft and man-in-the-middle campaign drivers, the audio relay pump,
//! and a bounded model check that searches schedules for key compromise.

use std::collections::VecDeque;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::core::{Actor, BdAddr, DeviceIdentity, KeyOrigin, LinkKey, LinkKeyStore, TraceKind};
use crate::devices::{self, AsVerdict, InitiatorVerdict, LinkState};
use crate::protocol::{
    authenticate_connection, establish_connection, grant_profile, pair, Association, GrantOutcome,
    PairingRequest, ProfileId,
};
use crate::relay::{
    receiver_step, sender_step, AudioFrame, CodecKind, FrameDecoder, FrameKind, ReceiverEvent,
    ReceiverState, SenderAction, SenderEvent, SenderState,
};
use crate::world::{ConnectionId, PairingRecord, PartyId, SimEvent, WorldState};

/// How quickly the tooling reacts to an observed victim transition. Fixed so
/// traces reproduce byte-for-byte.
pub const ATTACK_REACTION_DELAY_MS: u64 = 100;
/// Period of the session-state probe loop.
pub const PROBE_INTERVAL_MS: u64 = 1_000;
/// The probe loop gives up after this many rounds without a hijack window.
pub const PROBE_ATTEMPT_LIMIT: u32 = 120;
/// Echo round-trip from an endpoint holding a live session.
pub const ECHO_RTT_ACTIVE_MS: u64 = 20;
/// Echo round-trip from an awake but idle endpoint.
pub const ECHO_RTT_IDLE_MS: u64 = 80;

/// What a radio is for in a campaign.
#[derive(Clone, Copy, PartialEq, Eq, Debug, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MitmRole {
    /// Single-radio key theft; no relaying.
    Standalone,
    /// Presents the host's identity to catch the returning sink.
    ImpersonateHost,
    /// Presents the sink's identity to the host and captures its audio.
    ImpersonateSink,
}

#[derive(Clone, Debug)]
pub struct AttackerConfig {
    /// The adapter's real identity; probes and tooling traces use this.
    pub native_identity: DeviceIdentity,
    pub role: MitmRole,
    /// When set, this is the identity presented over the air.
    pub spoof_target: Option<DeviceIdentity>,
    pub discoverable: bool,
}

impl AttackerConfig {
    pub fn new(native_identity: DeviceIdentity, role: MitmRole) -> Self {
        AttackerConfig {
            native_identity,
            role,
            spoof_target: None,
            discoverable: false,
        }
    }
}

/// One attacker radio. It starts with zero protocol secrets — an empty key
/// store — and only ever holds what a run hands it.
#[derive(Clone, Debug)]
pub struct AttackerAgent {
    pub config: AttackerConfig,
    pub store: LinkKeyStore,
}

impl AttackerAgent {
    pub fn new(config: AttackerConfig) -> Self {
        AttackerAgent {
            config,
            store: LinkKeyStore::new(),
        }
    }

    /// The identity this radio currently presents over the air.
    pub fn presented(&self) -> &DeviceIdentity {
        self.config
            .spoof_target
            .as_ref()
            .unwrap_or(&self.config.native_identity)
    }

    pub fn spoof_identity(&mut self, target: DeviceIdentity) {
        self.config.spoof_target = Some(target);
    }

    pub fn clear_spoof(&mut self) {
        self.config.spoof_target = None;
    }

    pub fn set_discoverable(&mut self, on: bool) {
        self.config.discoverable = on;
    }
}

// ---------------------------------------------------------------------------
// Session probing
// ---------------------------------------------------------------------------

#[derive(Clone, Copy, PartialEq, Eq, Debug)]
pub enum ProbeVerdict {
    /// The master is absent; there is nothing to step into.
    NoSession,
    /// Both endpoints answer: the session is in use, keep waiting.
    SessionActive,
    /// The master answers but the slave does not: the slave sleeps and the
    /// master sits in its silent accepting state. This is the window.
    PeerSleeping,
}

/// Classify one probe round from the two echo observations. Pure on purpose:
/// the whole attack pivots on this distinction being externally observable.
pub fn classify_probe(master_rtt: Option<u64>, slave_rtt: Option<u64>) -> ProbeVerdict {
    match (master_rtt, slave_rtt) {
        (Some(_), Some(_)) => ProbeVerdict::SessionActive,
        (Some(_), None) => ProbeVerdict::PeerSleeping,
        (None, _) => ProbeVerdict::NoSession,
    }
}

/// Echo behavior of a device: silent when off or sleeping, fast when it holds
/// a live session, slower when merely awake.
fn echo_rtt(world: &WorldState, idx: usize) -> Option<u64> {
    let d = world.device(idx);
    if !d.is_on() || d.link == LinkState::Sleeping {
        return None;
    }
    if d.link == LinkState::Connected {
        Some(ECHO_RTT_ACTIVE_MS)
    } else {
        Some(ECHO_RTT_IDLE_MS)
    }
}

/// One probe round against the (master, slave) pair: two echoes, classified.
pub fn probe_session(
    world: &mut WorldState,
    attacker: usize,
    master: usize,
    slave: usize,
) -> ProbeVerdict {
    let now = world.now();
    let probe_addr = world.attacker(attacker).config.native_identity.addr;
    let mut rtts = [None, None];
    for (slot, idx) in [master, slave].into_iter().enumerate() {
        let target = world.device(idx).identity.addr;
        world.trace.emit(
            now,
            Actor::Addr(probe_addr),
            TraceKind::ProbeSent,
            format!("echo -> {target}"),
        );
        let rtt = echo_rtt(world, idx);
        if let Some(ms) = rtt {
            world.trace.emit(
                now,
                Actor::Addr(target),
                TraceKind::ProbeReply,
                format!("rtt={ms}ms"),
            );
        }
        rtts[slot] = rtt;
    }
    classify_probe(rtts[0], rtts[1])
}

// ---------------------------------------------------------------------------
// Hijack primitives
// ---------------------------------------------------------------------------

#[derive(Debug, Error, Clone, Copy, PartialEq, Eq)]
pub enum HijackError {
    #[error("no hijack window: the master is not in its accepting state")]
    WindowClosed,
    #[error("master did not take the connection")]
    NotAccepted,
    #[error("pairing over the hijacked link was refused")]
    PairingRefused,
}

/// Step into the silent accepting window a master holds open for its sleeping
/// peer. The attacker must already present that peer's address.
pub fn hijack_session(
    world: &mut WorldState,
    attacker: usize,
    master: usize,
) -> Result<ConnectionId, HijackError> {
    let presented = world.attacker(attacker).presented().addr;
    let m = world.device(master);
    if !m.is_on() || m.accepting_peer != Some(presented) {
        return Err(HijackError::WindowClosed);
    }
    let target = m.identity.addr;
    establish_connection(world, PartyId::Attacker(attacker), target)
        .map_err(|_| HijackError::NotAccepted)
}

/// Replace the master's stored key for the spoofed address with a fresh one
/// the attacker shares, then authenticate with it.
pub fn hijack_link_key(
    world: &mut WorldState,
    attacker: usize,
    conn: ConnectionId,
) -> Result<LinkKey, HijackError> {
    let request = PairingRequest {
        initiator: world.attacker(attacker).presented().clone(),
        responder_addr: world.connection(conn).responder_identity.addr,
        association: Association::JustWorksNoMitm,
        replacement_proof: None,
    };
    let key = pair(world, conn, request).map_err(|_| HijackError::PairingRefused)?;
    let _ = authenticate_connection(world, conn);
    Ok(key)
}

// ---------------------------------------------------------------------------
// Campaign plans and drivers
// ---------------------------------------------------------------------------

#[derive(Clone, Copy, PartialEq, Eq, Debug)]
pub enum AttackKind {
    Stealtooth,
    Mitm,
}

/// Prepared campaign, armed by a `StartAttack` event.
#[derive(Clone, Debug)]
pub struct AttackPlan {
    pub kind: AttackKind,
    /// Device index of the host whose identity gets stolen.
    pub alice: usize,
    /// Device index of the sink under attack.
    pub bob: usize,
    /// Attacker indices: `[standalone]`, or `[impersonate_host,
    /// impersonate_sink]` for a relay campaign.
    pub agents: Vec<usize>,
    pub paper_codec_mode: bool,
}

/// Book-keeping for a key-theft run against one victim.
#[derive(Clone, Debug)]
pub struct StealtoothRun {
    pub attacker: usize,
    pub victim: usize,
    /// Identity being impersonated (the victim's legitimate counterpart).
    pub spoofed: DeviceIdentity,
    pub started_at: u64,
}

/// Attack phases in strictly increasing order; a run only ever moves forward.
#[derive(Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Debug)]
pub enum MitmPhase {
    Spoofing,
    SessionHijack,
    LinkKeyHijack,
    ImproperAuth,
    Relaying,
}

impl std::fmt::Display for MitmPhase {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let s = match self {
            MitmPhase::Spoofing => "Spoofing",
            MitmPhase::SessionHijack => "SessionHijack",
            MitmPhase::LinkKeyHijack => "LinkKeyHijack",
            MitmPhase::ImproperAuth => "ImproperAuth",
            MitmPhase::Relaying => "Relaying",
        };
        f.write_str(s)
    }
}

/// Live state of a relay campaign: two radios, the phase ladder, and the
/// capture → transport → playback pipeline between them.
#[derive(Debug)]
pub struct MitmRun {
    pub agent_host: usize,
    pub agent_sink: usize,
    pub alice: usize,
    pub bob: usize,
    pub phase: MitmPhase,
    pub phase_log: Vec<(u64, MitmPhase)>,
    pub probes: u32,
    pub paper_codec_mode: bool,
    codec: CodecKind,
    sender: SenderState,
    decoder: FrameDecoder,
    receiver: ReceiverState,
    next_seq: u32,
    /// Bytes the source device handed to the attacker radio, gated or not.
    alice_sent: usize,
    /// Bytes accepted into the capture buffer.
    captured: Vec<u8>,
    /// Bytes that made it through the relay to the sink.
    delivered: usize,
    substitute_delivered: bool,
    captured_at_substitution: usize,
    reconnect_workaround_used: bool,
    pub conn_to_alice: Option<ConnectionId>,
    pub conn_to_bob: Option<ConnectionId>,
}

impl MitmRun {
    fn new(now: u64, plan: &AttackPlan) -> Self {
        let codec = if plan.paper_codec_mode {
            CodecKind::SbcStub
        } else {
            CodecKind::PcmPassthrough
        };
        MitmRun {
            agent_host: plan.agents[0],
            agent_sink: plan.agents[1],
            alice: plan.alice,
            bob: plan.bob,
            phase: MitmPhase::Spoofing,
            phase_log: vec![(now, MitmPhase::Spoofing)],
            probes: 0,
            paper_codec_mode: plan.paper_codec_mode,
            codec,
            sender: SenderState::new(),
            decoder: FrameDecoder::new(),
            receiver: ReceiverState::new(codec, plan.paper_codec_mode),
            next_seq: 0,
            alice_sent: 0,
            captured: Vec::new(),
            delivered: 0,
            substitute_delivered: false,
            captured_at_substitution: 0,
            reconnect_workaround_used: false,
            conn_to_alice: None,
            conn_to_bob: None,
        }
    }

    fn advance_phase(&mut self, now: u64, phase: MitmPhase) {
        if phase > self.phase {
            self.phase = phase;
            self.phase_log.push((now, phase));
        }
    }
}

// Boxed: one driver per world, and the relay run dwarfs the theft run.
#[derive(Debug)]
pub enum AttackDriver {
    Stealtooth(StealtoothRun),
    Mitm(Box<MitmRun>),
}

/// Arm the planned campaign: point the radios at their identities and kick
/// off whatever loop the campaign needs.
pub fn start_attack(world: &mut WorldState) {
    let Some(plan) = world.attack_plan.clone() else {
        return;
    };
    let now = world.now();
    match plan.kind {
        AttackKind::Stealtooth => {
            let attacker = plan.agents[0];
            let spoofed = world.device(plan.alice).identity.clone();
            {
                let a = world.attacker_mut(attacker);
                a.spoof_identity(spoofed.clone());
                a.set_discoverable(true);
            }
            world.attack = Some(AttackDriver::Stealtooth(StealtoothRun {
                attacker,
                victim: plan.bob,
                spoofed,
                started_at: now,
            }));
        }
        AttackKind::Mitm => {
            let host_identity = world.device(plan.alice).identity.clone();
            let sink_identity = world.device(plan.bob).identity.clone();
            {
                let a = world.attacker_mut(plan.agents[0]);
                a.spoof_identity(host_identity);
                a.set_discoverable(true);
            }
            {
                let a = world.attacker_mut(plan.agents[1]);
                a.spoof_identity(sink_identity);
            }
            let run = MitmRun::new(now, &plan);
            let probe_agent = run.agent_sink;
            world.attack = Some(AttackDriver::Mitm(Box::new(run)));
            world.schedule(0, SimEvent::MitmProbe { attacker: probe_agent });
        }
    }
}

/// Called by the pairing protocol on every completed pairing; keeps the run
/// log that verdicts are derived from.
pub fn notify_pairing(world: &mut WorldState, conn: ConnectionId, key: &LinkKey) {
    let (initiator, responder) = {
        let c = world.connection(conn);
        (c.initiator, c.responder)
    };
    world.pairing_log.push(PairingRecord {
        at: world.now(),
        conn,
        initiator,
        responder,
        key: key.clone(),
    });
}

/// A victim just entered automatic pairing mode after failing to authenticate
/// `counterpart`. If that counterpart is attack tooling, it pounces after its
/// reaction delay.
pub fn on_victim_auto_pairing(world: &mut WorldState, victim: usize, counterpart: PartyId) {
    if let PartyId::Attacker(k) = counterpart {
        let target = world.device(victim).identity.addr;
        world.schedule(
            ATTACK_REACTION_DELAY_MS,
            SimEvent::AttackerPairs {
                attacker: k,
                target,
            },
        );
    }
}

/// Connect to `target` and request a pairing. Whether the victim engages is
/// decided inside the pairing protocol, not here — cold calls are allowed to
/// try and fail.
pub fn attacker_pairs(world: &mut WorldState, attacker: usize, target: BdAddr) {
    let Ok(conn) = establish_connection(world, PartyId::Attacker(attacker), target) else {
        return;
    };
    let request = PairingRequest {
        initiator: world.attacker(attacker).presented().clone(),
        responder_addr: target,
        association: Association::JustWorksNoMitm,
        replacement_proof: None,
    };
    match pair(world, conn, request) {
        Ok(_) => {
            let _ = authenticate_connection(world, conn);
            after_attack_pairing(world, conn);
        }
        Err(_) => world.close_connection(conn),
    }
}

/// Post-pairing hook: lets an active campaign react to a key landing.
pub fn after_attack_pairing(world: &mut WorldState, conn: ConnectionId) {
    let Some(mut driver) = world.attack.take() else {
        return;
    };
    if let AttackDriver::Mitm(run) = &mut driver {
        let (involves_host, involves_bob, authenticated) = {
            let c = world.connection(conn);
            (
                c.involves(PartyId::Attacker(run.agent_host)),
                c.involves(PartyId::Device(run.bob)),
                c.authenticated,
            )
        };
        if involves_host && involves_bob && authenticated {
            run.conn_to_bob = Some(conn);
            begin_relaying(world, run);
        }
    }
    world.attack = Some(driver);
}

/// Probe round for a relay campaign: watch the honest session until the sink
/// sleeps, then take its place with the master.
pub fn mitm_probe_step(world: &mut WorldState, attacker: usize) {
    let Some(mut driver) = world.attack.take() else {
        return;
    };
    let mut reschedule = false;
    if let AttackDriver::Mitm(run) = &mut driver {
        if attacker == run.agent_sink && run.phase < MitmPhase::SessionHijack {
            run.probes += 1;
            let verdict = probe_session(world, attacker, run.alice, run.bob);
            let now = world.now();
            match verdict {
                ProbeVerdict::PeerSleeping => match hijack_session(world, attacker, run.alice) {
                    Ok(conn) => {
                        run.conn_to_alice = Some(conn);
                        run.advance_phase(now, MitmPhase::SessionHijack);
                        match hijack_link_key(world, attacker, conn) {
                            Ok(_) => {
                                run.advance_phase(now, MitmPhase::LinkKeyHijack);
                                let authed = world.connection(conn).authenticated;
                                if authed
                                    && grant_profile(
                                        world,
                                        conn,
                                        ProfileId::A2dp,
                                        PartyId::Device(run.alice),
                                    ) == Ok(GrantOutcome::Granted)
                                {
                                    run.advance_phase(now, MitmPhase::ImproperAuth);
                                }
                            }
                            Err(_) => {
                                // Key replacement refused; the window is spent.
                                world.close_connection(conn);
                            }
                        }
                    }
                    Err(_) => reschedule = run.probes < PROBE_ATTEMPT_LIMIT,
                },
                _ => reschedule = run.probes < PROBE_ATTEMPT_LIMIT,
            }
        }
    }
    world.attack = Some(driver);
    if reschedule {
        world.schedule(PROBE_INTERVAL_MS, SimEvent::MitmProbe { attacker });
    }
}

/// Feed transmitted wire bytes through the backhaul into the playback radio
/// and on to the sink device.
fn pump_transport(world: &mut WorldState, run: &mut MitmRun, actions: Vec<SenderAction>) {
    let now = world.now();
    let host_native = world.attacker(run.agent_host).config.native_identity.addr;
    for action in actions {
        let SenderAction::Transmit(bytes) = action else {
            continue;
        };
        let frames = run
            .decoder
            .push(&bytes)
            .expect("both relay endpoints speak the same wire format");
        for frame in frames {
            if frame.kind != FrameKind::Audio {
                let _ = receiver_step(&mut run.receiver, ReceiverEvent::Frame(frame));
                continue;
            }
            let (seq, len) = (frame.seq, frame.payload.len());
            world.trace.emit(
                now,
                Actor::Addr(host_native),
                TraceKind::RelayFrame,
                format!("relayed seq={seq} len={len}"),
            );
            match receiver_step(&mut run.receiver, ReceiverEvent::Frame(frame)) {
                Ok(buffers) => {
                    for out in buffers {
                        run.delivered += out.len();
                        devices::receive_audio(world, run.bob, &out);
                    }
                }
                Err(_) => {
                    world.trace.emit(
                        now,
                        Actor::Addr(host_native),
                        TraceKind::RelayFrame,
                        format!("codec_failed seq={seq}"),
                    );
                }
            }
        }
    }
}

/// The sink is back under attacker keys: secure the A2DP grant (with the
/// disconnect/reconnect workaround where the model demands it), bring the
/// backhaul up, and open with a substituted stream.
fn begin_relaying(world: &mut WorldState, run: &mut MitmRun) {
    if run.phase >= MitmPhase::Relaying {
        return;
    }
    let now = world.now();
    let Some(conn) = run.conn_to_bob else { return };
    let host_native = world.attacker(run.agent_host).config.native_identity.addr;
    match grant_profile(world, conn, ProfileId::A2dp, PartyId::Device(run.bob)) {
        Ok(GrantOutcome::Granted) => {}
        Ok(GrantOutcome::Deferred) => {
            world.trace.emit(
                now,
                Actor::Addr(host_native),
                TraceKind::RelayFrame,
                format!("conn={conn} grant deferred; reconnect workaround"),
            );
            world.close_connection(conn);
            let target = world.device(run.bob).identity.addr;
            let Ok(conn2) =
                establish_connection(world, PartyId::Attacker(run.agent_host), target)
            else {
                return;
            };
            if !authenticate_connection(world, conn2).is_success() {
                return;
            }
            run.conn_to_bob = Some(conn2);
            if grant_profile(world, conn2, ProfileId::A2dp, PartyId::Device(run.bob))
                != Ok(GrantOutcome::Granted)
            {
                return;
            }
            run.reconnect_workaround_used = true;
        }
        Err(_) => return,
    }
    let _ = receiver_step(&mut run.receiver, ReceiverEvent::Tick { now_ms: now });
    let _ = receiver_step(&mut run.receiver, ReceiverEvent::TransportUp);
    let tick = sender_step(&mut run.sender, SenderEvent::Tick { now_ms: now });
    pump_transport(world, run, tick);
    let up = sender_step(&mut run.sender, SenderEvent::TransportUp);
    pump_transport(world, run, up);
    // Open with a substituted stream, injected past the codec stage: the
    // point is control of what the sink plays, not fidelity.
    let substitute = world.forge.audio_pcm(64);
    run.captured_at_substitution = run.captured.len();
    devices::receive_audio(world, run.bob, &substitute);
    run.substitute_delivered = world.device(run.bob).is_on();
    world.trace.emit(
        now,
        Actor::Addr(host_native),
        TraceKind::RelayFrame,
        format!("substitute len={}", substitute.len()),
    );
    run.advance_phase(now, MitmPhase::Relaying);
}

/// A victim device pushed PCM to an attacker radio over an authenticated
/// link. Capture it and run the relay pipeline.
pub fn on_victim_audio(world: &mut WorldState, attacker: usize, conn: ConnectionId, pcm: Vec<u8>) {
    let _ = conn;
    let Some(mut driver) = world.attack.take() else {
        return;
    };
    if let AttackDriver::Mitm(run) = &mut driver {
        if attacker == run.agent_sink {
            run.alice_sent += pcm.len();
            if run.phase >= MitmPhase::ImproperAuth && !pcm.is_empty() {
                let now = world.now();
                let sink_native = world.attacker(run.agent_sink).config.native_identity.addr;
                run.next_seq += 1;
                let seq = run.next_seq;
                run.captured.extend_from_slice(&pcm);
                world.trace.emit(
                    now,
                    Actor::Addr(sink_native),
                    TraceKind::RelayFrame,
                    format!("captured seq={seq} len={}", pcm.len()),
                );
                let tick = sender_step(&mut run.sender, SenderEvent::Tick { now_ms: now });
                pump_transport(world, run, tick);
                let _ = receiver_step(&mut run.receiver, ReceiverEvent::Tick { now_ms: now });
                let frame = AudioFrame::new(seq, pcm, run.codec)
                    .expect("victim PCM buffers fit in one frame");
                let actions = sender_step(&mut run.sender, SenderEvent::PcmCaptured(frame));
                pump_transport(world, run, actions);
            }
        }
    }
    world.attack = Some(driver);
}

// ---------------------------------------------------------------------------
// Run outcomes
// ---------------------------------------------------------------------------

/// Result of a key-theft run, derived from the pairing log and trace.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct StealtoothOutcome {
    pub succeeded: bool,
    /// Who initiated the malicious pairing.
    pub initiator: InitiatorVerdict,
    pub stolen_key: Option<LinkKey>,
    /// User-visible notifications on either victim over the whole run.
    pub victim_notifications: usize,
    pub defense_rejections: usize,
}

/// Drive the world to quiescence and grade the key-theft campaign.
pub fn run_stealtooth(world: &mut WorldState) -> StealtoothOutcome {
    world.run_until_idle();
    let Some(plan) = world.attack_plan.clone() else {
        return StealtoothOutcome {
            succeeded: false,
            initiator: InitiatorVerdict::Na,
            stolen_key: None,
            victim_notifications: 0,
            defense_rejections: 0,
        };
    };
    let attacker = PartyId::Attacker(plan.agents[0]);
    let victim = PartyId::Device(plan.bob);
    let hit = world
        .pairing_log
        .iter()
        .find(|rec| {
            (rec.initiator == attacker || rec.responder == attacker)
                && (rec.initiator == victim || rec.responder == victim)
        })
        .cloned();
    let alice_addr = world.device(plan.alice).identity.addr;
    let bob_addr = world.device(plan.bob).identity.addr;
    let victim_notifications = world
        .trace
        .count_kind_for(TraceKind::UserNotification, alice_addr)
        + world
            .trace
            .count_kind_for(TraceKind::UserNotification, bob_addr);
    let defense_rejections = world.trace.count_kind(TraceKind::DefenseRejected);
    match hit {
        Some(rec) => StealtoothOutcome {
            succeeded: true,
            initiator: if rec.initiator == victim {
                InitiatorVerdict::Bob
            } else {
                InitiatorVerdict::Mallory
            },
            stolen_key: Some(rec.key),
            victim_notifications,
            defense_rejections,
        },
        None => StealtoothOutcome {
            succeeded: false,
            initiator: InitiatorVerdict::Na,
            stolen_key: None,
            victim_notifications,
            defense_rejections,
        },
    }
}

#[derive(Debug, Error, Clone, Copy, PartialEq, Eq)]
pub enum MitmError {
    #[error("attack stalled in phase {0}")]
    PhaseFailed(MitmPhase),
    #[error("world has no relay campaign configured")]
    NotConfigured,
}

/// Result of a completed relay campaign.
#[derive(Clone, Debug)]
pub struct MitmOutcome {
    pub phase_log: Vec<(u64, MitmPhase)>,
    pub final_phase: MitmPhase,
    /// Ground truth: bytes the source pushed at the capture radio.
    pub source_pcm_bytes: usize,
    pub captured_pcm_bytes: usize,
    pub relayed_pcm_bytes: usize,
    pub codec_failures: u64,
    pub substitute_delivered: bool,
    pub captured_after_substitution: usize,
    pub reconnect_workaround_used: bool,
    /// Eavesdropping grade: the captured stream versus what was sent.
    pub interception: AsVerdict,
    /// Tamper grade: substituted playback while capture continues.
    pub tampering: AsVerdict,
    /// Proxy grade: end-to-end relay of the genuine stream.
    pub proxying: AsVerdict,
}

/// Drive the world to quiescence and grade the relay campaign.
pub fn run_mitm(world: &mut WorldState) -> Result<MitmOutcome, MitmError> {
    world.run_until_idle();
    let Some(driver) = world.attack.take() else {
        return Err(MitmError::NotConfigured);
    };
    let result = match &driver {
        AttackDriver::Stealtooth(_) => Err(MitmError::NotConfigured),
        AttackDriver::Mitm(run) => {
            if run.phase < MitmPhase::Relaying {
                Err(MitmError::PhaseFailed(run.phase))
            } else {
                let captured = run.captured.len();
                let sent = run.alice_sent;
                let delivered = run.delivered;
                let captured_after = captured - run.captured_at_substitution;
                let codec_failures = run.receiver.codec_failures();
                let interception = if captured > 0 && captured == sent {
                    AsVerdict::Full
                } else if captured > 0 {
                    AsVerdict::Partial
                } else {
                    AsVerdict::Na
                };
                let tampering = if run.substitute_delivered && captured_after > 0 {
                    if run.reconnect_workaround_used {
                        AsVerdict::Partial
                    } else {
                        AsVerdict::Full
                    }
                } else {
                    AsVerdict::Na
                };
                let proxying = if delivered > 0 && delivered == sent {
                    AsVerdict::Full
                } else if codec_failures > 0 && captured > 0 {
                    AsVerdict::Partial
                } else {
                    AsVerdict::Na
                };
                Ok(MitmOutcome {
                    phase_log: run.phase_log.clone(),
                    final_phase: run.phase,
                    source_pcm_bytes: sent,
                    captured_pcm_bytes: captured,
                    relayed_pcm_bytes: delivered,
                    codec_failures,
                    substitute_delivered: run.substitute_delivered,
                    captured_after_substitution: captured_after,
                    reconnect_workaround_used: run.reconnect_workaround_used,
                    interception,
                    tampering,
                    proxying,
                })
            }
        }
    };
    world.attack = Some(driver);
    result
}

// ---------------------------------------------------------------------------
// Bounded model check
// ---------------------------------------------------------------------------

/// Exhaustive search over short schedules of real operations, checking that a
/// peripheral never ends up holding an attacker-origin key. States are
/// deduplicated on a canonical signature so the search closes.
pub mod model_check {
    use std::collections::BTreeSet;

    use super::*;
    use crate::devices::{DeviceBehaviorProfile, VictimDevice};
    use crate::protocol::AuthMode;
    use crate::world::DefenseConfig;

    /// Externally triggerable operations: user actions on the two honest
    /// devices plus everything the attacker radios can do.
    #[derive(Clone, Copy, PartialEq, Eq, Debug)]
    pub enum ModelAction {
        PowerOnHost,
        PowerOffHost,
        PowerOnPeripheral,
        PowerOffPeripheral,
        PeripheralActivity,
        /// Radio 0 presents the host's identity and turns discoverable.
        SpoofHostAndListen,
        /// Radio 0 cold-calls the peripheral with a pairing request.
        AttackerPairsPeripheral,
        /// Radio 1 presents the peripheral's identity and pairs at the host.
        SpoofPeripheralAndPairHost,
        /// Let the idle timeout elapse.
        Wait,
    }

    pub const ACTION_ALPHABET: [ModelAction; 9] = [
        ModelAction::PowerOnHost,
        ModelAction::PowerOffHost,
        ModelAction::PowerOnPeripheral,
        ModelAction::PowerOffPeripheral,
        ModelAction::PeripheralActivity,
        ModelAction::SpoofHostAndListen,
        ModelAction::AttackerPairsPeripheral,
        ModelAction::SpoofPeripheralAndPairHost,
        ModelAction::Wait,
    ];

    /// Quiet horizon after each action; long enough to drain every reaction
    /// delay in the system, short enough that idle timers hold still.
    const STEP_HORIZON_MS: u64 = 1_000;
    /// Horizon for `Wait`: comfortably past the idle timeout.
    const WAIT_HORIZON_MS: u64 = 31_000;

    #[derive(Clone, Debug)]
    pub struct ModelConfig {
        pub profile: DeviceBehaviorProfile,
        pub max_depth: usize,
        pub auth_mode: AuthMode,
        pub defenses: DefenseConfig,
    }

    #[derive(Clone, Debug)]
    pub struct Violation {
        pub actions: Vec<ModelAction>,
    }

    #[derive(Clone, Debug)]
    pub struct ModelCheckReport {
        pub states_explored: usize,
        pub runs_executed: usize,
        pub depth_reached: usize,
        pub violation: Option<Violation>,
    }

    fn host_addr() -> BdAddr {
        crate::core::parse_bdaddr("C0:00:00:00:00:01").expect("literal address")
    }

    fn peripheral_addr() -> BdAddr {
        crate::core::parse_bdaddr("C0:00:00:00:00:02").expect("literal address")
    }

    fn build_world(cfg: &ModelConfig) -> WorldState {
        let mut w = WorldState::new(99, cfg.auth_mode, cfg.defenses);
        w.add_device(VictimDevice::new(
            DeviceIdentity::new(host_addr(), "host"),
            crate::devices::host_profile(),
        ));
        w.add_device(VictimDevice::new(
            DeviceIdentity::new(peripheral_addr(), "peripheral"),
            cfg.profile.clone(),
        ));
        w.pre_pair_devices(0, 1, &[ProfileId::A2dp]);
        w.add_attacker(AttackerAgent::new(AttackerConfig::new(
            DeviceIdentity::new(
                crate::core::parse_bdaddr("C0:00:00:00:00:0A").expect("literal address"),
                "radio-0",
            ),
            MitmRole::Standalone,
        )));
        w.add_attacker(AttackerAgent::new(AttackerConfig::new(
            DeviceIdentity::new(
                crate::core::parse_bdaddr("C0:00:00:00:00:0B").expect("literal address"),
                "radio-1",
            ),
            MitmRole::Standalone,
        )));
        w.schedule_at(0, SimEvent::PowerOn { device: 0 });
        w.schedule_at(0, SimEvent::PowerOn { device: 1 });
        w.run_until(STEP_HORIZON_MS);
        w
    }

    fn apply(world: &mut WorldState, action: ModelAction) {
        let horizon = match action {
            ModelAction::Wait => WAIT_HORIZON_MS,
            _ => STEP_HORIZON_MS,
        };
        match action {
            ModelAction::PowerOnHost => world.schedule(0, SimEvent::PowerOn { device: 0 }),
            ModelAction::PowerOffHost => world.schedule(0, SimEvent::PowerOff { device: 0 }),
            ModelAction::PowerOnPeripheral => world.schedule(0, SimEvent::PowerOn { device: 1 }),
            ModelAction::PowerOffPeripheral => {
                world.schedule(0, SimEvent::PowerOff { device: 1 })
            }
            ModelAction::PeripheralActivity => {
                world.schedule(0, SimEvent::UserActivity { device: 1 })
            }
            ModelAction::SpoofHostAndListen => {
                let identity = world.device(0).identity.clone();
                let a = world.attacker_mut(0);
                a.spoof_identity(identity);
                a.set_discoverable(true);
            }
            ModelAction::AttackerPairsPeripheral => world.schedule(
                0,
                SimEvent::AttackerPairs {
                    attacker: 0,
                    target: peripheral_addr(),
                },
            ),
            ModelAction::SpoofPeripheralAndPairHost => {
                let identity = world.device(1).identity.clone();
                world.attacker_mut(1).spoof_identity(identity);
                world.schedule(
                    0,
                    SimEvent::AttackerPairs {
                        attacker: 1,
                        target: host_addr(),
                    },
                );
            }
            ModelAction::Wait => {}
        }
        let t = world.now() + horizon;
        world.run_until(t);
    }

    fn violated(world: &WorldState) -> bool {
        world
            .device(1)
            .store
            .iter()
            .any(|(_, rec)| rec.key.origin == KeyOrigin::AttackPairing)
    }

    /// Canonical state fingerprint. Times are relative to `now` and key bytes
    /// are renamed to first-appearance ids, so runs that differ only in when
    /// or in which order they reached a configuration collapse together.
    fn signature(world: &WorldState) -> String {
        let now = world.now();
        let mut key_ids: Vec<[u8; 16]> = Vec::new();
        let id_of = |bytes: [u8; 16], key_ids: &mut Vec<[u8; 16]>| -> usize {
            if let Some(pos) = key_ids.iter().position(|k| *k == bytes) {
                pos
            } else {
                key_ids.push(bytes);
                key_ids.len() - 1
            }
        };
        let mut sig = String::new();
        use std::fmt::Write as _;
        for (i, d) in world.devices.iter().enumerate() {
            let _ = write!(
                sig,
                "D{i}:{:?}/{:?}/{:?}/disc={}/fail={}/acc={:?}/dl={:?};",
                d.power,
                d.link,
                d.pairing_mode,
                d.discoverable,
                d.recent_auth_failure,
                d.accepting_peer,
                d.sleep_deadline.map(|t| t.saturating_sub(now)),
            );
            if let Some(c) = d.conn {
                let conn = world.connection(c);
                if conn.open {
                    let _ = write!(
                        sig,
                        "conn(peer={:?},as={},auth={});",
                        conn.peer_of(PartyId::Device(i)),
                        conn.presented_of(PartyId::Device(i)).addr,
                        conn.authenticated,
                    );
                }
            }
            for (addr, rec) in d.store.iter() {
                let id = id_of(rec.key.key_bytes, &mut key_ids);
                let sessions = d
                    .session_counts
                    .get(&(*addr, rec.key.epoch))
                    .copied()
                    .unwrap_or(0)
                    .min(2);
                let _ = write!(
                    sig,
                    "k({addr},{id},{:?},{sessions},{:?});",
                    rec.key.origin, rec.granted_profiles,
                );
            }
        }
        for (i, a) in world.attackers.iter().enumerate() {
            let _ = write!(
                sig,
                "A{i}:as={},disc={};",
                a.presented().addr,
                a.config.discoverable
            );
            for (addr, rec) in a.store.iter() {
                let id = id_of(rec.key.key_bytes, &mut key_ids);
                let _ = write!(sig, "k({addr},{id},{:?});", rec.key.origin);
            }
        }
        let _ = write!(
            sig,
            "def={:?}/{:?};mode={:?}",
            world.defenses.notify, world.defenses.protocol, world.auth_mode
        );
        sig
    }

    /// Breadth-first search over action sequences up to `max_depth`. Returns
    /// the shortest violating schedule, if one exists in the bound.
    pub fn explore(cfg: &ModelConfig) -> ModelCheckReport {
        let mut report = ModelCheckReport {
            states_explored: 0,
            runs_executed: 0,
            depth_reached: 0,
            violation: None,
        };
        let mut visited: BTreeSet<String> = BTreeSet::new();
        let mut frontier: VecDeque<Vec<ModelAction>> = VecDeque::new();

        let initial = build_world(cfg);
        report.runs_executed += 1;
        visited.insert(signature(&initial));
        report.states_explored += 1;
        frontier.push_back(Vec::new());

        while let Some(prefix) = frontier.pop_front() {
            if prefix.len() >= cfg.max_depth {
                continue;
            }
            for action in ACTION_ALPHABET {
                let mut actions = prefix.clone();
                actions.push(action);
                let mut world = build_world(cfg);
                report.runs_executed += 1;
                let mut violated_at = None;
                for (i, a) in actions.iter().enumerate() {
                    apply(&mut world, *a);
                    if violated(&world) {
                        violated_at = Some(i + 1);
                        break;
                    }
                }
                report.depth_reached = report.depth_reached.max(actions.len());
                if let Some(len) = violated_at {
                    actions.truncate(len);
                    report.violation = Some(Violation { actions });
                    return report;
                }
                if visited.insert(signature(&world)) {
                    report.states_explored += 1;
                    frontier.push_back(actions);
                }
            }
        }
        report
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::core::parse_bdaddr;
    use crate::devices::{
        host_profile, AutoPairingPolicy, DeviceBehaviorProfile, DeviceRole, PairingMode,
        VictimDevice,
    };
    use crate::protocol::AuthMode;
    use crate::world::DefenseConfig;
    use std::collections::BTreeSet;

    fn addr(n: u8) -> BdAddr {
        parse_bdaddr(&format!("0B:00:00:00:00:{n:02X}")).unwrap()
    }

    fn peripheral(model: &str, policy: AutoPairingPolicy, reconnect_gate: bool) -> DeviceBehaviorProfile {
        DeviceBehaviorProfile {
            model_name: model.to_string(),
            policy,
            role: DeviceRole::Peripheral,
            sleep_idle_timeout_ms: Some(30_000),
            reconnect_on_power_on: true,
            requires_reconnect_for_profile_grant: reconnect_gate,
            codec_capabilities: [CodecKind::SbcStub].into_iter().collect(),
            defense_notifications: false,
            supported_profiles: [ProfileId::A2dp, ProfileId::Avrcp].into_iter().collect(),
        }
    }

    /// Host + victim peripheral, pre-paired; one standalone attacker radio.
    fn stealtooth_world(policy: AutoPairingPolicy, defenses: DefenseConfig) -> WorldState {
        let mut w = WorldState::new(42, AuthMode::SecureMutual, defenses);
        w.add_device(VictimDevice::new(
            DeviceIdentity::new(addr(1), "phone"),
            host_profile(),
        ));
        w.add_device(VictimDevice::new(
            DeviceIdentity::new(addr(2), "headset"),
            peripheral("victim-model", policy, false),
        ));
        w.pre_pair_devices(0, 1, &[ProfileId::A2dp, ProfileId::Avrcp]);
        w.add_attacker(AttackerAgent::new(AttackerConfig::new(
            DeviceIdentity::new(addr(9), "mallory"),
            MitmRole::Standalone,
        )));
        w.attack_plan = Some(AttackPlan {
            kind: AttackKind::Stealtooth,
            alice: 0,
            bob: 1,
            agents: vec![0],
            paper_codec_mode: false,
        });
        w.schedule_at(0, SimEvent::PowerOn { device: 0 });
        w.schedule_at(0, SimEvent::PowerOn { device: 1 });
        w.schedule_at(5_000, SimEvent::PowerOff { device: 1 });
        w.schedule_at(6_000, SimEvent::PowerOff { device: 0 });
        w.schedule_at(7_000, SimEvent::StartAttack);
        w.schedule_at(10_000, SimEvent::PowerOn { device: 1 });
        w
    }

    /// Host + victim sink, pre-paired; two radios for the relay campaign.
    fn mitm_world(
        policy: AutoPairingPolicy,
        reconnect_gate: bool,
        paper_codec_mode: bool,
        defenses: DefenseConfig,
    ) -> WorldState {
        let mut w = WorldState::new(42, AuthMode::SecureMutual, defenses);
        w.add_device(VictimDevice::new(
            DeviceIdentity::new(addr(1), "phone"),
            host_profile(),
        ));
        w.add_device(VictimDevice::new(
            DeviceIdentity::new(addr(2), "headset"),
            peripheral("victim-model", policy, reconnect_gate),
        ));
        w.pre_pair_devices(0, 1, &[ProfileId::A2dp, ProfileId::Avrcp]);
        w.add_attacker(AttackerAgent::new(AttackerConfig::new(
            DeviceIdentity::new(addr(8), "mallory-a"),
            MitmRole::ImpersonateHost,
        )));
        w.add_attacker(AttackerAgent::new(AttackerConfig::new(
            DeviceIdentity::new(addr(9), "mallory-b"),
            MitmRole::ImpersonateSink,
        )));
        w.attack_plan = Some(AttackPlan {
            kind: AttackKind::Mitm,
            alice: 0,
            bob: 1,
            agents: vec![0, 1],
            paper_codec_mode,
        });
        w.schedule_at(0, SimEvent::PowerOn { device: 0 });
        w.schedule_at(0, SimEvent::PowerOn { device: 1 });
        w.schedule_at(500, SimEvent::StartAttack);
        w.schedule_at(35_000, SimEvent::PowerOff { device: 1 });
        w.schedule_at(36_000, SimEvent::PowerOn { device: 1 });
        w.schedule_at(40_000, SimEvent::SendAudio { device: 0, bytes: 160 });
        w.schedule_at(41_000, SimEvent::SendAudio { device: 0, bytes: 160 });
        w.schedule_at(42_000, SimEvent::SendAudio { device: 0, bytes: 160 });
        w
    }

    #[test]
    fn agents_start_with_zero_protocol_knowledge() {
        let agent = AttackerAgent::new(AttackerConfig::new(
            DeviceIdentity::new(addr(9), "mallory"),
            MitmRole::Standalone,
        ));
        assert!(agent.store.is_empty());
        assert_eq!(agent.presented().addr, addr(9));
    }

    #[test]
    fn spoofing_changes_only_the_presented_identity() {
        let mut agent = AttackerAgent::new(AttackerConfig::new(
            DeviceIdentity::new(addr(9), "mallory"),
            MitmRole::Standalone,
        ));
        agent.spoof_identity(DeviceIdentity::new(addr(1), "phone"));
        assert_eq!(agent.presented().addr, addr(1));
        assert_eq!(agent.presented().name, "phone");
        assert_eq!(agent.config.native_identity.addr, addr(9));
        agent.clear_spoof();
        assert_eq!(agent.presented().addr, addr(9));
    }

    #[test]
    fn probe_classification_is_exactly_the_observation_table() {
        assert_eq!(classify_probe(None, None), ProbeVerdict::NoSession);
        assert_eq!(classify_probe(None, Some(20)), ProbeVerdict::NoSession);
        assert_eq!(classify_probe(Some(20), Some(20)), ProbeVerdict::SessionActive);
        assert_eq!(classify_probe(Some(20), None), ProbeVerdict::PeerSleeping);
    }

    #[test]
    fn probe_semantics_hold_in_every_device_state() {
        // Exhaust master × slave over {off, idle, connected, sleeping} and
        // check the classifier's meaning against ground truth.
        let states = ["off", "idle", "connected", "sleeping"];
        for master_state in states {
            for slave_state in states {
                let mut w = WorldState::new(1, AuthMode::SecureMutual, DefenseConfig::default());
                w.add_device(VictimDevice::new(
                    DeviceIdentity::new(addr(1), "phone"),
                    host_profile(),
                ));
                w.add_device(VictimDevice::new(
                    DeviceIdentity::new(addr(2), "headset"),
                    peripheral("m", AutoPairingPolicy::PassiveAfterAuthFailure, false),
                ));
                w.add_attacker(AttackerAgent::new(AttackerConfig::new(
                    DeviceIdentity::new(addr(9), "mallory"),
                    MitmRole::Standalone,
                )));
                for (idx, state) in [(0, master_state), (1, slave_state)] {
                    match state {
                        "off" => {}
                        "idle" => w.device_mut(idx).power_on_quietly(0),
                        "connected" => {
                            w.device_mut(idx).power_on_quietly(0);
                            w.device_mut(idx).link = LinkState::Connected;
                        }
                        "sleeping" => {
                            w.device_mut(idx).power_on_quietly(0);
                            w.device_mut(idx).link = LinkState::Sleeping;
                        }
                        _ => unreachable!(),
                    }
                }
                let verdict = probe_session(&mut w, 0, 0, 1);
                let master_answers = matches!(master_state, "idle" | "connected");
                let slave_answers = matches!(slave_state, "idle" | "connected");
                let expected = if !master_answers {
                    ProbeVerdict::NoSession
                } else if slave_answers {
                    ProbeVerdict::SessionActive
                } else {
                    ProbeVerdict::PeerSleeping
                };
                assert_eq!(verdict, expected, "master={master_state} slave={slave_state}");
            }
        }
    }

    #[test]
    fn passive_victim_is_paired_by_the_attacker() {
        let mut w = stealtooth_world(
            AutoPairingPolicy::PassiveAfterAuthFailure,
            DefenseConfig::default(),
        );
        let outcome = run_stealtooth(&mut w);
        assert!(outcome.succeeded);
        assert_eq!(outcome.initiator, InitiatorVerdict::Mallory);
        assert_eq!(outcome.victim_notifications, 0, "the theft must be silent");
        let key = outcome.stolen_key.unwrap();
        assert_eq!(key.origin, KeyOrigin::AttackPairing);
        // The victim's record for its trusted peer now holds the stolen key.
        let rec = w.device(1).store.lookup_key(addr(1)).unwrap();
        assert!(rec.key.matches(&key));
        // And the attacker holds the same key for the victim.
        let atk = w.attacker(0).store.lookup_key(addr(2)).unwrap();
        assert!(atk.key.matches(&key));
    }

    #[test]
    fn active_victim_initiates_the_pairing_itself() {
        let mut w = stealtooth_world(AutoPairingPolicy::ActiveInitiator, DefenseConfig::default());
        let outcome = run_stealtooth(&mut w);
        assert!(outcome.succeeded);
        assert_eq!(outcome.initiator, InitiatorVerdict::Bob);
        assert_eq!(outcome.victim_notifications, 0);
        assert_eq!(
            w.device(1).pairing_mode,
            PairingMode::NoneActive,
            "pairing mode must not linger after the exchange"
        );
    }

    #[test]
    fn hardened_victim_never_enters_pairing_mode() {
        let mut w = stealtooth_world(AutoPairingPolicy::NotVulnerable, DefenseConfig::default());
        let outcome = run_stealtooth(&mut w);
        assert!(!outcome.succeeded);
        assert!(outcome.stolen_key.is_none());
        let rec = w.device(1).store.lookup_key(addr(1)).unwrap();
        assert_eq!(rec.key.origin, KeyOrigin::LegitimatePairing);
        assert_eq!(
            w.trace
                .count_kind(TraceKind::PairingModeEnter(crate::core::PairingModeKind::Auto)),
            0
        );
    }

    #[test]
    fn theft_verdict_is_independent_of_the_auth_mode() {
        for mode in [AuthMode::SecureMutual, AuthMode::LegacyUnilateral] {
            for policy in [
                AutoPairingPolicy::PassiveAfterAuthFailure,
                AutoPairingPolicy::ActiveInitiator,
                AutoPairingPolicy::NotVulnerable,
            ] {
                let mut w = stealtooth_world(policy, DefenseConfig::default());
                w.auth_mode = mode;
                let outcome = run_stealtooth(&mut w);
                assert_eq!(
                    outcome.succeeded,
                    policy != AutoPairingPolicy::NotVulnerable,
                    "policy={policy:?} mode={mode:?}"
                );
            }
        }
    }

    #[test]
    fn protocol_defense_blocks_the_key_replacement() {
        let defenses = DefenseConfig { notify: false, protocol: true };
        let mut w = stealtooth_world(AutoPairingPolicy::PassiveAfterAuthFailure, defenses);
        let outcome = run_stealtooth(&mut w);
        assert!(!outcome.succeeded);
        assert!(outcome.defense_rejections >= 1);
        let rec = w.device(1).store.lookup_key(addr(1)).unwrap();
        assert_eq!(rec.key.origin, KeyOrigin::LegitimatePairing, "old key survives");
    }

    #[test]
    fn notify_defense_breaks_the_silence_but_not_the_theft() {
        let defenses = DefenseConfig { notify: true, protocol: false };
        let mut w = stealtooth_world(AutoPairingPolicy::PassiveAfterAuthFailure, defenses);
        let outcome = run_stealtooth(&mut w);
        assert!(outcome.succeeded, "notification alone does not stop the pairing");
        assert!(
            outcome.victim_notifications >= 2,
            "mode entry and completion must both surface"
        );
    }

    #[test]
    fn honest_reconnects_never_alert_or_reject() {
        // Both defenses on, no attacker activity: a full power cycle stays
        // quiet because the honest peer can always prove its own key.
        let defenses = DefenseConfig { notify: true, protocol: true };
        let mut w = WorldState::new(5, AuthMode::SecureMutual, defenses);
        w.add_device(VictimDevice::new(
            DeviceIdentity::new(addr(1), "phone"),
            host_profile(),
        ));
        w.add_device(VictimDevice::new(
            DeviceIdentity::new(addr(2), "headset"),
            peripheral("m", AutoPairingPolicy::PassiveAfterAuthFailure, false),
        ));
        w.pre_pair_devices(0, 1, &[ProfileId::A2dp]);
        w.schedule_at(0, SimEvent::PowerOn { device: 0 });
        w.schedule_at(0, SimEvent::PowerOn { device: 1 });
        w.schedule_at(1_000, SimEvent::PowerOff { device: 1 });
        w.schedule_at(2_000, SimEvent::PowerOn { device: 1 });
        w.run_until_idle();
        assert_eq!(w.trace.count_kind(TraceKind::UserNotification), 0);
        assert_eq!(w.trace.count_kind(TraceKind::DefenseRejected), 0);
        // Initial link plus the post-cycle reconnect; the sink then idles out.
        assert_eq!(w.trace.count_kind(TraceKind::AuthSuccess), 2);
        assert_eq!(w.device(1).link, LinkState::Sleeping);
    }

    #[test]
    fn relay_campaign_walks_every_phase_in_order() {
        let mut w = mitm_world(
            AutoPairingPolicy::ActiveInitiator,
            false,
            true,
            DefenseConfig::default(),
        );
        let outcome = run_mitm(&mut w).expect("campaign must complete");
        assert_eq!(outcome.final_phase, MitmPhase::Relaying);
        let phases: Vec<MitmPhase> = outcome.phase_log.iter().map(|(_, p)| *p).collect();
        assert_eq!(
            phases,
            vec![
                MitmPhase::Spoofing,
                MitmPhase::SessionHijack,
                MitmPhase::LinkKeyHijack,
                MitmPhase::ImproperAuth,
                MitmPhase::Relaying,
            ]
        );
        for pair in outcome.phase_log.windows(2) {
            assert!(pair[0].0 <= pair[1].0, "phase times must not regress");
            assert!(pair[0].1 < pair[1].1, "phases must strictly advance");
        }
    }

    #[test]
    fn relay_grades_match_the_codec_and_grant_behavior() {
        // Immediate-grant model, stub codec refuses re-encode: capture is
        // complete, substitution clean, proxying degraded.
        let mut w = mitm_world(
            AutoPairingPolicy::ActiveInitiator,
            false,
            true,
            DefenseConfig::default(),
        );
        let outcome = run_mitm(&mut w).unwrap();
        assert_eq!(outcome.source_pcm_bytes, 480);
        assert_eq!(outcome.captured_pcm_bytes, 480);
        assert_eq!(outcome.relayed_pcm_bytes, 0);
        assert_eq!(outcome.codec_failures, 3);
        assert_eq!(outcome.interception, AsVerdict::Full);
        assert_eq!(outcome.tampering, AsVerdict::Full);
        assert_eq!(outcome.proxying, AsVerdict::Partial);
        assert!(!outcome.reconnect_workaround_used);
        // The substitute stream is all the sink heard.
        assert_eq!(w.device(1).received_audio.len(), 64);
    }

    #[test]
    fn reconnect_gated_sink_downgrades_the_tamper_grade() {
        let mut w = mitm_world(
            AutoPairingPolicy::PassiveAfterAuthFailure,
            true,
            true,
            DefenseConfig::default(),
        );
        let outcome = run_mitm(&mut w).unwrap();
        assert!(outcome.reconnect_workaround_used);
        assert_eq!(outcome.tampering, AsVerdict::Partial);
        assert_eq!(outcome.interception, AsVerdict::Full);
        assert_eq!(outcome.proxying, AsVerdict::Partial);
    }

    #[test]
    fn passthrough_codec_relays_the_stream_end_to_end() {
        let mut w = mitm_world(
            AutoPairingPolicy::ActiveInitiator,
            false,
            false,
            DefenseConfig::default(),
        );
        let outcome = run_mitm(&mut w).unwrap();
        assert_eq!(outcome.proxying, AsVerdict::Full);
        assert_eq!(outcome.relayed_pcm_bytes, 480);
        assert_eq!(outcome.codec_failures, 0);
        // Substitute plus the relayed stream both reached the sink.
        assert_eq!(w.device(1).received_audio.len(), 64 + 480);
    }

    #[test]
    fn protocol_defense_stalls_the_relay_campaign() {
        let defenses = DefenseConfig { notify: false, protocol: true };
        let mut w = mitm_world(AutoPairingPolicy::ActiveInitiator, false, true, defenses);
        let err = run_mitm(&mut w).unwrap_err();
        assert_eq!(err, MitmError::PhaseFailed(MitmPhase::SessionHijack));
        // The host's record for its sink still holds the legitimate key.
        let rec = w.device(0).store.lookup_key(addr(2)).unwrap();
        assert_eq!(rec.key.origin, KeyOrigin::LegitimatePairing);
    }

    #[test]
    fn hijack_requires_the_accepting_window() {
        let mut w = mitm_world(
            AutoPairingPolicy::ActiveInitiator,
            false,
            true,
            DefenseConfig::default(),
        );
        // Run only to a point where everyone is awake and connected.
        w.run_until(2_000);
        let err = hijack_session(&mut w, 1, 0).unwrap_err();
        assert_eq!(err, HijackError::WindowClosed);
    }

    #[test]
    fn probe_loop_gives_up_after_the_attempt_limit() {
        let mut w = mitm_world(
            AutoPairingPolicy::ActiveInitiator,
            false,
            true,
            DefenseConfig::default(),
        );
        // The sink never sleeps: keep poking it so the idle timer resets.
        for t in 0..180 {
            w.schedule_at(t * 1_000, SimEvent::UserActivity { device: 1 });
        }
        // Remove the scripted power cycle and audio for a pure wait run.
        let err = run_mitm(&mut w).unwrap_err();
        assert_eq!(err, MitmError::PhaseFailed(MitmPhase::Spoofing));
        if let Some(AttackDriver::Mitm(run)) = &w.attack {
            assert!(run.probes <= PROBE_ATTEMPT_LIMIT);
            assert!(run.probes >= PROBE_ATTEMPT_LIMIT / 2);
        } else {
            panic!("mitm driver expected");
        }
    }

    #[test]
    fn model_check_clears_the_hardened_profile() {
        let cfg = model_check::ModelConfig {
            profile: peripheral("hardened", AutoPairingPolicy::NotVulnerable, false),
            max_depth: 5,
            auth_mode: AuthMode::SecureMutual,
            defenses: DefenseConfig::default(),
        };
        let report = model_check::explore(&cfg);
        assert!(
            report.violation.is_none(),
            "unexpected schedule: {:?}",
            report.violation
        );
        assert!(report.states_explored > 10);
    }

    #[test]
    fn model_check_finds_the_passive_compromise() {
        let cfg = model_check::ModelConfig {
            profile: peripheral("victim", AutoPairingPolicy::PassiveAfterAuthFailure, false),
            max_depth: 5,
            auth_mode: AuthMode::SecureMutual,
            defenses: DefenseConfig::default(),
        };
        let report = model_check::explore(&cfg);
        let violation = report.violation.expect("schedule must exist within the bound");
        assert!(violation.actions.len() <= 4, "found: {:?}", violation.actions);
        assert!(violation
            .actions
            .contains(&model_check::ModelAction::SpoofHostAndListen));
    }

    #[test]
    fn model_check_protocol_defense_protects_even_the_passive_profile() {
        let cfg = model_check::ModelConfig {
            profile: peripheral("victim", AutoPairingPolicy::PassiveAfterAuthFailure, false),
            max_depth: 4,
            auth_mode: AuthMode::SecureMutual,
            defenses: DefenseConfig { notify: false, protocol: true },
        };
        let report = model_check::explore(&cfg);
        assert!(
            report.violation.is_none(),
            "unexpected schedule: {:?}",
            report.violation
        );
    }

    #[test]
    fn pairing_log_records_honest_and_attack_pairings_alike() {
        let mut w = stealtooth_world(
            AutoPairingPolicy::PassiveAfterAuthFailure,
            DefenseConfig::default(),
        );
        run_stealtooth(&mut w);
        assert_eq!(w.pairing_log.len(), 1, "one malicious pairing");
        let origins: BTreeSet<KeyOrigin> =
            w.pairing_log.iter().map(|r| r.key.origin).collect();
        assert!(origins.contains(&KeyOrigin::AttackPairing));
    }
}
