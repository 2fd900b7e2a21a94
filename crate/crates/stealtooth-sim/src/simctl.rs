//! Scenario files, run reports, the device verdict matrix, and trace output —
//! the engine behind the `simctl` binary.
//!
//! A scenario is a small JSON document: two honest endpoints, optional
//! attacker radios, flags, and a timeline of scheduled actions. Running one
//! is a pure function of (scenario, catalog, overrides); the JSONL trace it
//! produces is byte-stable across runs.

use std::collections::BTreeSet;
use std::fmt;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::attacker::{
    run_mitm, run_stealtooth, AttackKind, AttackPlan, AttackerAgent, AttackerConfig, MitmError,
    MitmRole,
};
use crate::core::{Actor, BdAddr, DeviceIdentity, TraceEvent, TraceKind};
use crate::devices::{
    host_profile, AsVerdict, DeviceCatalog, ExpectedVerdict, InitiatorVerdict, VictimDevice,
};
use crate::protocol::{AuthMode, ProfileId};
use crate::relay::MAX_PAYLOAD_LEN;
use crate::world::{DefenseConfig, DefenseKind, SimEvent, WorldState};

// Fixed endpoint addresses used by the bundled scenario builders.
pub const ALICE_ADDR: &str = "0A:11:CE:00:00:01";
pub const BOB_ADDR: &str = "0B:0B:00:00:00:02";
pub const MALLORY_A_ADDR: &str = "A1:1A:CE:00:00:09";
pub const MALLORY_B_ADDR: &str = "A1:1A:CE:00:00:0A";

#[derive(Debug, Error)]
pub enum SimctlError {
    /// The document does not match the schema; maps to exit code 2.
    #[error("schema: {0}")]
    Schema(String),
    /// Well-formed but semantically inconsistent; also exit code 2.
    #[error("invalid scenario: {0}")]
    Invalid(String),
    #[error("unknown device model `{0}`")]
    UnknownModel(String),
    #[error(transparent)]
    Catalog(#[from] crate::devices::CatalogError),
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
}

#[derive(Clone, PartialEq, Eq, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct HostSpec {
    pub addr: BdAddr,
    pub name: String,
}

#[derive(Clone, PartialEq, Eq, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SinkSpec {
    pub addr: BdAddr,
    /// Catalog model; decides policy, timers, and expected verdicts.
    pub model: String,
}

#[derive(Clone, PartialEq, Eq, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AttackerSpec {
    pub addr: BdAddr,
    pub name: String,
    pub mitm_role: MitmRole,
}

#[derive(Clone, Copy, PartialEq, Eq, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ScenarioFlags {
    pub auth_mode: AuthMode,
    pub paper_codec_mode: bool,
    pub defense_notify: bool,
    pub defense_protocol: bool,
}

impl Default for ScenarioFlags {
    fn default() -> Self {
        ScenarioFlags {
            auth_mode: AuthMode::SecureMutual,
            paper_codec_mode: false,
            defense_notify: false,
            defense_protocol: false,
        }
    }
}

#[derive(Clone, Copy, PartialEq, Eq, Debug, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EndpointRef {
    Alice,
    Bob,
}

#[derive(Clone, Copy, PartialEq, Eq, Debug, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AttackName {
    Stealtooth,
    Mitm,
}

#[derive(Clone, Copy, PartialEq, Eq, Debug, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DefenseName {
    Notify,
    Protocol,
}

#[derive(Clone, Copy, PartialEq, Eq, Debug, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TimelineAction {
    PowerOn { device: EndpointRef },
    PowerOff { device: EndpointRef },
    UserActivity { device: EndpointRef },
    SendAudio { device: EndpointRef, bytes: usize },
    StartAttack { attack: AttackName },
    SetDefense { defense: DefenseName, enabled: bool },
}

#[derive(Clone, Copy, PartialEq, Eq, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TimelineEntry {
    pub t: u64,
    pub action: TimelineAction,
}

#[derive(Clone, PartialEq, Eq, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Scenario {
    pub name: String,
    pub seed: u64,
    pub alice: HostSpec,
    pub bob: SinkSpec,
    #[serde(default)]
    pub attackers: Vec<AttackerSpec>,
    #[serde(default)]
    pub flags: ScenarioFlags,
    pub timeline: Vec<TimelineEntry>,
}

impl Scenario {
    /// The attack this timeline launches, if any.
    pub fn attack(&self) -> Option<AttackName> {
        self.timeline.iter().find_map(|e| match e.action {
            TimelineAction::StartAttack { attack } => Some(attack),
            _ => None,
        })
    }
}

/// Parse and semantically validate a scenario document.
pub fn load_scenario(text: &str) -> Result<Scenario, SimctlError> {
    let scenario: Scenario =
        serde_json::from_str(text).map_err(|e| SimctlError::Schema(e.to_string()))?;
    validate_scenario(&scenario)?;
    Ok(scenario)
}

pub fn load_scenario_file(path: &Path) -> Result<Scenario, SimctlError> {
    load_scenario(&fs::read_to_string(path)?)
}

/// Structural checks beyond the schema. A scenario that passes here can be
/// built against any catalog that knows its sink model.
pub fn validate_scenario(scenario: &Scenario) -> Result<(), SimctlError> {
    if scenario.name.is_empty() {
        return Err(SimctlError::Invalid("name must not be empty".into()));
    }
    let mut addrs: BTreeSet<BdAddr> = BTreeSet::new();
    for addr in std::iter::once(scenario.alice.addr)
        .chain(std::iter::once(scenario.bob.addr))
        .chain(scenario.attackers.iter().map(|a| a.addr))
    {
        if !addrs.insert(addr) {
            return Err(SimctlError::Invalid(format!("duplicate address {addr}")));
        }
    }
    let mut last_t = 0u64;
    for entry in &scenario.timeline {
        if entry.t < last_t {
            return Err(SimctlError::Invalid(format!(
                "timeline times must not decrease (saw {} after {})",
                entry.t, last_t
            )));
        }
        last_t = entry.t;
        if let TimelineAction::SendAudio { bytes, .. } = entry.action {
            if bytes == 0 || bytes > MAX_PAYLOAD_LEN {
                return Err(SimctlError::Invalid(format!(
                    "send_audio bytes must be 1..={MAX_PAYLOAD_LEN}, got {bytes}"
                )));
            }
        }
    }
    let starts: Vec<AttackName> = scenario
        .timeline
        .iter()
        .filter_map(|e| match e.action {
            TimelineAction::StartAttack { attack } => Some(attack),
            _ => None,
        })
        .collect();
    if starts.len() > 1 {
        return Err(SimctlError::Invalid(
            "at most one start_attack per scenario".into(),
        ));
    }
    match starts.first() {
        Some(AttackName::Stealtooth) if scenario.attackers.is_empty() => {
            return Err(SimctlError::Invalid(
                "stealtooth needs at least one attacker".into(),
            ));
        }
        Some(AttackName::Mitm) => {
            let has = |role: MitmRole| scenario.attackers.iter().any(|a| a.mitm_role == role);
            if !has(MitmRole::ImpersonateHost) || !has(MitmRole::ImpersonateSink) {
                return Err(SimctlError::Invalid(
                    "mitm needs impersonate_host and impersonate_sink attackers".into(),
                ));
            }
        }
        _ => {}
    }
    Ok(())
}

/// Per-invocation overrides layered on top of the scenario's own flags.
#[derive(Clone, Copy, Debug, Default)]
pub struct RunOptions {
    pub auth_mode: Option<AuthMode>,
    pub defense_notify: Option<bool>,
    pub defense_protocol: Option<bool>,
    pub paper_codec_mode: Option<bool>,
}

#[derive(Clone, Copy, Debug)]
struct EffectiveFlags {
    auth_mode: AuthMode,
    notify: bool,
    protocol: bool,
    paper_codec_mode: bool,
}

fn effective_flags(scenario: &Scenario, options: RunOptions) -> EffectiveFlags {
    EffectiveFlags {
        auth_mode: options.auth_mode.unwrap_or(scenario.flags.auth_mode),
        notify: options.defense_notify.unwrap_or(scenario.flags.defense_notify),
        protocol: options
            .defense_protocol
            .unwrap_or(scenario.flags.defense_protocol),
        paper_codec_mode: options
            .paper_codec_mode
            .unwrap_or(scenario.flags.paper_codec_mode),
    }
}

fn endpoint_device(endpoint: EndpointRef) -> usize {
    match endpoint {
        EndpointRef::Alice => 0,
        EndpointRef::Bob => 1,
    }
}

/// Materialize a world from a validated scenario: devices 0 (host) and 1
/// (sink) pre-paired with A2DP/AVRCP, attacker radios cold, timeline queued.
pub fn build_world(
    scenario: &Scenario,
    catalog: &DeviceCatalog,
    options: RunOptions,
) -> Result<WorldState, SimctlError> {
    validate_scenario(scenario)?;
    let entry = catalog
        .find(&scenario.bob.model)
        .ok_or_else(|| SimctlError::UnknownModel(scenario.bob.model.clone()))?;
    let flags = effective_flags(scenario, options);
    let mut world = WorldState::new(
        scenario.seed,
        flags.auth_mode,
        DefenseConfig {
            notify: flags.notify,
            protocol: flags.protocol,
        },
    );
    world.add_device(VictimDevice::new(
        DeviceIdentity::new(scenario.alice.addr, scenario.alice.name.as_str()),
        host_profile(),
    ));
    world.add_device(VictimDevice::new(
        DeviceIdentity::new(scenario.bob.addr, scenario.bob.model.as_str()),
        entry.profile(),
    ));
    world.pre_pair_devices(0, 1, &[ProfileId::A2dp, ProfileId::Avrcp]);
    for spec in &scenario.attackers {
        world.add_attacker(AttackerAgent::new(AttackerConfig::new(
            DeviceIdentity::new(spec.addr, spec.name.as_str()),
            spec.mitm_role,
        )));
    }
    world.attack_plan = match scenario.attack() {
        None => None,
        Some(AttackName::Stealtooth) => {
            let agent = scenario
                .attackers
                .iter()
                .position(|a| a.mitm_role == MitmRole::Standalone)
                .unwrap_or(0);
            Some(AttackPlan {
                kind: AttackKind::Stealtooth,
                alice: 0,
                bob: 1,
                agents: vec![agent],
                paper_codec_mode: flags.paper_codec_mode,
            })
        }
        Some(AttackName::Mitm) => {
            let role_index = |role: MitmRole| {
                scenario
                    .attackers
                    .iter()
                    .position(|a| a.mitm_role == role)
                    .expect("validated above")
            };
            Some(AttackPlan {
                kind: AttackKind::Mitm,
                alice: 0,
                bob: 1,
                agents: vec![
                    role_index(MitmRole::ImpersonateHost),
                    role_index(MitmRole::ImpersonateSink),
                ],
                paper_codec_mode: flags.paper_codec_mode,
            })
        }
    };
    for entry in &scenario.timeline {
        let event = match entry.action {
            TimelineAction::PowerOn { device } => SimEvent::PowerOn {
                device: endpoint_device(device),
            },
            TimelineAction::PowerOff { device } => SimEvent::PowerOff {
                device: endpoint_device(device),
            },
            TimelineAction::UserActivity { device } => SimEvent::UserActivity {
                device: endpoint_device(device),
            },
            TimelineAction::SendAudio { device, bytes } => SimEvent::SendAudio {
                device: endpoint_device(device),
                bytes,
            },
            TimelineAction::StartAttack { .. } => SimEvent::StartAttack,
            TimelineAction::SetDefense { defense, enabled } => SimEvent::SetDefense {
                kind: match defense {
                    DefenseName::Notify => DefenseKind::Notify,
                    DefenseName::Protocol => DefenseKind::Protocol,
                },
                enabled,
            },
        };
        world.schedule_at(entry.t, event);
    }
    Ok(world)
}

#[derive(Clone, Copy, PartialEq, Eq, Debug, Serialize)]
pub struct StealtoothSummary {
    pub succeeded: bool,
    pub initiator: InitiatorVerdict,
    pub victim_notifications: usize,
    pub defense_rejections: usize,
}

#[derive(Clone, PartialEq, Eq, Debug, Serialize)]
pub struct MitmSummary {
    pub completed: bool,
    pub stalled_phase: Option<String>,
    pub interception: AsVerdict,
    pub tampering: AsVerdict,
    pub proxying: AsVerdict,
    pub captured_pcm_bytes: usize,
    pub relayed_pcm_bytes: usize,
    pub codec_failures: u64,
    pub reconnect_workaround_used: bool,
}

/// What one `run` invocation reports.
#[derive(Clone, Debug, Serialize)]
pub struct RunReport {
    pub scenario_name: String,
    pub model: String,
    pub auth_mode: AuthMode,
    pub defense_notify: bool,
    pub defense_protocol: bool,
    pub paper_codec_mode: bool,
    pub stealtooth: Option<StealtoothSummary>,
    pub mitm: Option<MitmSummary>,
    /// Catalog expectations; attached only for runs comparable to them
    /// (defenses off, and stub-codec mode for relay runs).
    pub expected: Option<ExpectedVerdict>,
    pub matches_expected: Option<bool>,
}

/// Build, run to quiescence, and grade a scenario. The returned world holds
/// the full trace.
pub fn run_scenario(
    scenario: &Scenario,
    catalog: &DeviceCatalog,
    options: RunOptions,
) -> Result<(RunReport, WorldState), SimctlError> {
    let entry = catalog
        .find(&scenario.bob.model)
        .ok_or_else(|| SimctlError::UnknownModel(scenario.bob.model.clone()))?
        .clone();
    let flags = effective_flags(scenario, options);
    let mut world = build_world(scenario, catalog, options)?;

    let mut stealtooth = None;
    let mut mitm = None;
    match scenario.attack() {
        None => world.run_until_idle(),
        Some(AttackName::Stealtooth) => {
            let outcome = run_stealtooth(&mut world);
            stealtooth = Some(StealtoothSummary {
                succeeded: outcome.succeeded,
                initiator: outcome.initiator,
                victim_notifications: outcome.victim_notifications,
                defense_rejections: outcome.defense_rejections,
            });
        }
        Some(AttackName::Mitm) => {
            let summary = match run_mitm(&mut world) {
                Ok(outcome) => MitmSummary {
                    completed: true,
                    stalled_phase: None,
                    interception: outcome.interception,
                    tampering: outcome.tampering,
                    proxying: outcome.proxying,
                    captured_pcm_bytes: outcome.captured_pcm_bytes,
                    relayed_pcm_bytes: outcome.relayed_pcm_bytes,
                    codec_failures: outcome.codec_failures,
                    reconnect_workaround_used: outcome.reconnect_workaround_used,
                },
                Err(MitmError::PhaseFailed(phase)) => MitmSummary {
                    completed: false,
                    stalled_phase: Some(phase.to_string()),
                    interception: AsVerdict::Na,
                    tampering: AsVerdict::Na,
                    proxying: AsVerdict::Na,
                    captured_pcm_bytes: 0,
                    relayed_pcm_bytes: 0,
                    codec_failures: 0,
                    reconnect_workaround_used: false,
                },
                Err(MitmError::NotConfigured) => {
                    return Err(SimctlError::Invalid(
                        "mitm scenario without a relay campaign".into(),
                    ))
                }
            };
            mitm = Some(summary);
        }
    }

    // Expectations describe the undefended system; a defended run is graded
    // by its own assertions, not the catalog. Relay grades additionally
    // assume the stub codec.
    let comparable = !flags.notify
        && !flags.protocol
        && match scenario.attack() {
            Some(AttackName::Mitm) => flags.paper_codec_mode,
            _ => true,
        };
    let expected = (comparable && scenario.attack().is_some()).then_some(entry.expected);
    let matches_expected = expected.and_then(|exp| match (&stealtooth, &mitm) {
        (Some(st), _) => Some(st.succeeded == exp.stealtooth && st.initiator == exp.initiator),
        (_, Some(m)) => exp.mitm_applicable().then(|| {
            m.completed
                && m.interception == exp.as1
                && m.tampering == exp.as2
                && m.proxying == exp.as3
        }),
        _ => None,
    });

    let report = RunReport {
        scenario_name: scenario.name.clone(),
        model: entry.model.clone(),
        auth_mode: flags.auth_mode,
        defense_notify: flags.notify,
        defense_protocol: flags.protocol,
        paper_codec_mode: flags.paper_codec_mode,
        stealtooth,
        mitm,
        expected,
        matches_expected,
    };
    Ok((report, world))
}

/// The whole trace as JSONL, one event per line.
pub fn trace_jsonl(world: &WorldState) -> String {
    let mut out = String::new();
    for event in world.trace.events() {
        out.push_str(&event.to_json_line());
        out.push('\n');
    }
    out
}

pub fn write_trace(world: &WorldState, path: &Path) -> Result<(), SimctlError> {
    fs::write(path, trace_jsonl(world))?;
    Ok(())
}

// ---------------------------------------------------------------------------
// Scenario builders
// ---------------------------------------------------------------------------

/// Lowercase a model name into a file/scenario slug: alphanumerics kept,
/// every other run collapsed to one underscore.
pub fn model_slug(model: &str) -> String {
    let mut slug = String::new();
    let mut gap = false;
    for c in model.chars() {
        if c.is_ascii_alphanumeric() {
            if gap && !slug.is_empty() {
                slug.push('_');
            }
            gap = false;
            slug.push(c.to_ascii_lowercase());
        } else {
            gap = true;
        }
    }
    slug
}

fn parse_const_addr(addr: &str) -> BdAddr {
    crate::core::parse_bdaddr(addr).expect("builder addresses are literals")
}

/// Key-theft scenario against one catalog model: pair, part, impersonate,
/// wait for the victim to come back.
pub fn stealtooth_scenario(model: &str) -> Scenario {
    let entry = |t, action| TimelineEntry { t, action };
    Scenario {
        name: format!("{}_stealtooth", model_slug(model)),
        seed: 42,
        alice: HostSpec {
            addr: parse_const_addr(ALICE_ADDR),
            name: "alice-phone".to_string(),
        },
        bob: SinkSpec {
            addr: parse_const_addr(BOB_ADDR),
            model: model.to_string(),
        },
        attackers: vec![AttackerSpec {
            addr: parse_const_addr(MALLORY_A_ADDR),
            name: "mallory".to_string(),
            mitm_role: MitmRole::Standalone,
        }],
        flags: ScenarioFlags::default(),
        timeline: vec![
            entry(0, TimelineAction::PowerOn { device: EndpointRef::Alice }),
            entry(0, TimelineAction::PowerOn { device: EndpointRef::Bob }),
            entry(5_000, TimelineAction::PowerOff { device: EndpointRef::Bob }),
            entry(6_000, TimelineAction::PowerOff { device: EndpointRef::Alice }),
            entry(7_000, TimelineAction::StartAttack { attack: AttackName::Stealtooth }),
            entry(10_000, TimelineAction::PowerOn { device: EndpointRef::Bob }),
        ],
    }
}

/// Relay scenario against one catalog model: watch the session, hijack the
/// host when the sink sleeps, catch the sink when it returns, then stream.
pub fn mitm_scenario(model: &str) -> Scenario {
    let entry = |t, action| TimelineEntry { t, action };
    Scenario {
        name: format!("{}_mitm", model_slug(model)),
        seed: 42,
        alice: HostSpec {
            addr: parse_const_addr(ALICE_ADDR),
            name: "alice-phone".to_string(),
        },
        bob: SinkSpec {
            addr: parse_const_addr(BOB_ADDR),
            model: model.to_string(),
        },
        attackers: vec![
            AttackerSpec {
                addr: parse_const_addr(MALLORY_A_ADDR),
                name: "mallory-a".to_string(),
                mitm_role: MitmRole::ImpersonateHost,
            },
            AttackerSpec {
                addr: parse_const_addr(MALLORY_B_ADDR),
                name: "mallory-b".to_string(),
                mitm_role: MitmRole::ImpersonateSink,
            },
        ],
        flags: ScenarioFlags {
            paper_codec_mode: true,
            ..ScenarioFlags::default()
        },
        timeline: vec![
            entry(0, TimelineAction::PowerOn { device: EndpointRef::Alice }),
            entry(0, TimelineAction::PowerOn { device: EndpointRef::Bob }),
            entry(500, TimelineAction::StartAttack { attack: AttackName::Mitm }),
            entry(35_000, TimelineAction::PowerOff { device: EndpointRef::Bob }),
            entry(36_000, TimelineAction::PowerOn { device: EndpointRef::Bob }),
            entry(40_000, TimelineAction::SendAudio { device: EndpointRef::Alice, bytes: 160 }),
            entry(41_000, TimelineAction::SendAudio { device: EndpointRef::Alice, bytes: 160 }),
            entry(42_000, TimelineAction::SendAudio { device: EndpointRef::Alice, bytes: 160 }),
        ],
    }
}

// ---------------------------------------------------------------------------
// Verdict matrix
// ---------------------------------------------------------------------------

#[derive(Clone, Debug, Serialize)]
pub struct MatrixRow {
    pub model: String,
    pub stealtooth: bool,
    pub initiator: InitiatorVerdict,
    pub as1: AsVerdict,
    pub as2: AsVerdict,
    pub as3: AsVerdict,
    pub expected: ExpectedVerdict,
    pub matches: bool,
}

#[derive(Clone, Debug, Serialize)]
pub struct MatrixReport {
    pub auth_mode: AuthMode,
    pub defense_notify: bool,
    pub defense_protocol: bool,
    pub rows: Vec<MatrixRow>,
    pub all_match: bool,
}

/// Run the attack repertoire against every catalog model and compare with the
/// recorded expectations. Relay grades are produced only for models they are
/// recorded for; the rest stay `-`.
pub fn verdict_matrix(
    catalog: &DeviceCatalog,
    options: RunOptions,
) -> Result<MatrixReport, SimctlError> {
    let mut rows = Vec::new();
    for entry in &catalog.devices {
        let theft = stealtooth_scenario(&entry.model);
        let (report, _) = run_scenario(&theft, catalog, options)?;
        let st = report.stealtooth.expect("theft scenario grades theft");
        let (as1, as2, as3) = if entry.expected.mitm_applicable() {
            let relay = mitm_scenario(&entry.model);
            let (mreport, _) = run_scenario(&relay, catalog, options)?;
            let m = mreport.mitm.expect("relay scenario grades the relay");
            (m.interception, m.tampering, m.proxying)
        } else {
            (AsVerdict::Na, AsVerdict::Na, AsVerdict::Na)
        };
        let matches = st.succeeded == entry.expected.stealtooth
            && st.initiator == entry.expected.initiator
            && as1 == entry.expected.as1
            && as2 == entry.expected.as2
            && as3 == entry.expected.as3;
        rows.push(MatrixRow {
            model: entry.model.clone(),
            stealtooth: st.succeeded,
            initiator: st.initiator,
            as1,
            as2,
            as3,
            expected: entry.expected,
            matches,
        });
    }
    Ok(MatrixReport {
        auth_mode: options.auth_mode.unwrap_or(AuthMode::SecureMutual),
        defense_notify: options.defense_notify.unwrap_or(false),
        defense_protocol: options.defense_protocol.unwrap_or(false),
        all_match: rows.iter().all(|r| r.matches),
        rows,
    })
}

impl fmt::Display for MatrixReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let auth = match self.auth_mode {
            AuthMode::LegacyUnilateral => "legacy",
            AuthMode::SecureMutual => "secure",
        };
        writeln!(
            f,
            "verdict matrix (auth={auth}, notify={}, protocol={})",
            if self.defense_notify { "on" } else { "off" },
            if self.defense_protocol { "on" } else { "off" },
        )?;
        writeln!(f)?;
        writeln!(
            f,
            "{:<36} {:<6} {:<10} {:<8} {:<8} {:<8} vs expected",
            "model", "theft", "initiator", "AS#1", "AS#2", "AS#3"
        )?;
        for row in &self.rows {
            writeln!(
                f,
                "{:<36} {:<6} {:<10} {:<8} {:<8} {:<8} {}",
                row.model,
                if row.stealtooth { "yes" } else { "no" },
                row.initiator.to_string(),
                row.as1.to_string(),
                row.as2.to_string(),
                row.as3.to_string(),
                if row.matches { "match" } else { "MISMATCH" },
            )?;
        }
        writeln!(f)?;
        let matching = self.rows.iter().filter(|r| r.matches).count();
        write!(f, "{matching}/{} rows match expectations", self.rows.len())
    }
}

// ---------------------------------------------------------------------------
// Trace re-derivation
// ---------------------------------------------------------------------------

fn detail_u64(detail: &str, key: &str) -> Option<u64> {
    detail
        .split_whitespace()
        .find_map(|tok| tok.strip_prefix(key))
        .and_then(|v| v.parse().ok())
}

/// Re-derive the theft verdict from the event stream alone, so a report can
/// be audited against its trace instead of trusted.
pub fn rederive_stealtooth(scenario: &Scenario, events: &[TraceEvent]) -> StealtoothSummary {
    let alice = Actor::Addr(scenario.alice.addr);
    let bob = Actor::Addr(scenario.bob.addr);
    let theft_epoch = events.iter().find_map(|e| {
        (e.kind == TraceKind::KeyOverwritten && e.actor == bob)
            .then(|| detail_u64(&e.detail, "epoch="))
            .flatten()
    });
    let initiator = theft_epoch
        .and_then(|epoch| {
            events.iter().find(|e| {
                e.kind == TraceKind::PairingComplete
                    && detail_u64(&e.detail, "epoch=") == Some(epoch)
            })
        })
        .map(|e| {
            // The pairing-complete actor is the responder: when the victim
            // answers, the attacker initiated; when the impersonated host
            // answers, the victim itself did.
            if e.actor == bob {
                InitiatorVerdict::Mallory
            } else {
                InitiatorVerdict::Bob
            }
        });
    let victim_notifications = events
        .iter()
        .filter(|e| e.kind == TraceKind::UserNotification && (e.actor == alice || e.actor == bob))
        .count();
    let defense_rejections = events
        .iter()
        .filter(|e| e.kind == TraceKind::DefenseRejected)
        .count();
    StealtoothSummary {
        succeeded: initiator.is_some(),
        initiator: initiator.unwrap_or(InitiatorVerdict::Na),
        victim_notifications,
        defense_rejections,
    }
}

/// Re-derive the relay grades from scenario ground truth plus the event
/// stream. Assumes the scenario's audio plays after the hijack, as the
/// bundled relay scenarios do.
pub fn rederive_mitm(scenario: &Scenario, events: &[TraceEvent]) -> MitmSummary {
    let sent: usize = scenario
        .timeline
        .iter()
        .filter_map(|e| match e.action {
            TimelineAction::SendAudio { device: EndpointRef::Alice, bytes } => Some(bytes),
            _ => None,
        })
        .sum();
    let relay_events: Vec<&TraceEvent> = events
        .iter()
        .filter(|e| e.kind == TraceKind::RelayFrame)
        .collect();
    let mut captured = 0usize;
    let mut captured_after_substitution = 0usize;
    let mut substitute_seen = false;
    let mut workaround = false;
    let mut relayed: Vec<(u64, usize)> = Vec::new();
    let mut failed_seqs: BTreeSet<u64> = BTreeSet::new();
    for e in &relay_events {
        if e.detail.starts_with("captured ") {
            let len = detail_u64(&e.detail, "len=").unwrap_or(0) as usize;
            captured += len;
            if substitute_seen {
                captured_after_substitution += len;
            }
        } else if e.detail.starts_with("relayed ") {
            let seq = detail_u64(&e.detail, "seq=").unwrap_or(0);
            let len = detail_u64(&e.detail, "len=").unwrap_or(0) as usize;
            relayed.push((seq, len));
        } else if e.detail.starts_with("codec_failed ") {
            if let Some(seq) = detail_u64(&e.detail, "seq=") {
                failed_seqs.insert(seq);
            }
        } else if e.detail.starts_with("substitute ") {
            substitute_seen = true;
        } else if e.detail.contains("reconnect workaround") {
            workaround = true;
        }
    }
    let delivered: usize = relayed
        .iter()
        .filter(|(seq, _)| !failed_seqs.contains(seq))
        .map(|(_, len)| len)
        .sum();
    let codec_failures = failed_seqs.len() as u64;
    let interception = if captured > 0 && captured == sent {
        AsVerdict::Full
    } else if captured > 0 {
        AsVerdict::Partial
    } else {
        AsVerdict::Na
    };
    let tampering = if substitute_seen && captured_after_substitution > 0 {
        if workaround {
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
    MitmSummary {
        completed: substitute_seen,
        stalled_phase: None,
        interception,
        tampering,
        proxying,
        captured_pcm_bytes: captured,
        relayed_pcm_bytes: delivered,
        codec_failures,
        reconnect_workaround_used: workaround,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::devices::bundled_catalog;

    fn catalog() -> DeviceCatalog {
        bundled_catalog()
    }

    #[test]
    fn builder_scenarios_validate_and_round_trip() {
        for model in ["WH-1000XM5", "Bose QuietComfort Ultra Headphones"] {
            let s = stealtooth_scenario(model);
            validate_scenario(&s).unwrap();
            let text = serde_json::to_string_pretty(&s).unwrap();
            let back = load_scenario(&text).unwrap();
            assert_eq!(s, back);
        }
        let s = mitm_scenario("WH-1000XM4");
        validate_scenario(&s).unwrap();
        let text = serde_json::to_string_pretty(&s).unwrap();
        assert_eq!(s, load_scenario(&text).unwrap());
    }

    #[test]
    fn slugs_are_lowercase_alnum_with_single_separators() {
        assert_eq!(model_slug("WH-1000XM5"), "wh_1000xm5");
        assert_eq!(model_slug("Soundcore Space One"), "soundcore_space_one");
        assert_eq!(model_slug("NC2"), "nc2");
        assert_eq!(
            model_slug("Bose QuietComfort Ultra Headphones"),
            "bose_quietcomfort_ultra_headphones"
        );
    }

    #[test]
    fn malformed_documents_are_schema_errors() {
        assert!(matches!(load_scenario("{"), Err(SimctlError::Schema(_))));
        assert!(matches!(load_scenario("{}"), Err(SimctlError::Schema(_))));
        // Unknown action names are schema-level problems too.
        let mut s = serde_json::to_value(stealtooth_scenario("NC2")).unwrap();
        s["timeline"][0]["action"] = serde_json::json!({"explode": {}});
        assert!(matches!(
            load_scenario(&s.to_string()),
            Err(SimctlError::Schema(_))
        ));
    }

    #[test]
    fn semantic_violations_are_rejected() {
        let mut s = stealtooth_scenario("NC2");
        s.timeline[2].t = 1; // after a t=0 entry followed by t=5000
        s.timeline[1].t = 2;
        assert!(matches!(
            validate_scenario(&s),
            Err(SimctlError::Invalid(_))
        ));

        let mut s = stealtooth_scenario("NC2");
        s.attackers.clear();
        assert!(matches!(
            validate_scenario(&s),
            Err(SimctlError::Invalid(_))
        ));

        let mut s = mitm_scenario("WH-1000XM5");
        s.attackers[1].mitm_role = MitmRole::ImpersonateHost;
        assert!(matches!(
            validate_scenario(&s),
            Err(SimctlError::Invalid(_))
        ));

        let mut s = stealtooth_scenario("NC2");
        s.attackers[0].addr = s.bob.addr;
        assert!(matches!(
            validate_scenario(&s),
            Err(SimctlError::Invalid(_))
        ));

        let mut s = mitm_scenario("WH-1000XM5");
        s.timeline[5] = TimelineEntry {
            t: 40_000,
            action: TimelineAction::SendAudio { device: EndpointRef::Alice, bytes: 0 },
        };
        assert!(matches!(
            validate_scenario(&s),
            Err(SimctlError::Invalid(_))
        ));
    }

    #[test]
    fn unknown_model_is_reported_as_such() {
        let s = stealtooth_scenario("Walkman");
        let Err(err) = run_scenario(&s, &catalog(), RunOptions::default()) else {
            panic!("expected an unknown-model error");
        };
        assert!(matches!(err, SimctlError::UnknownModel(m) if m == "Walkman"));
    }

    #[test]
    fn theft_run_matches_catalog_expectations() {
        let s = stealtooth_scenario("WH-1000XM5");
        let (report, _) = run_scenario(&s, &catalog(), RunOptions::default()).unwrap();
        let st = report.stealtooth.unwrap();
        assert!(st.succeeded);
        assert_eq!(st.initiator, InitiatorVerdict::Bob);
        assert_eq!(st.victim_notifications, 0);
        assert_eq!(report.matches_expected, Some(true));
    }

    #[test]
    fn hardened_model_matches_its_negative_expectation() {
        let s = stealtooth_scenario("Pixel Buds Pro");
        let (report, _) = run_scenario(&s, &catalog(), RunOptions::default()).unwrap();
        let st = report.stealtooth.unwrap();
        assert!(!st.succeeded);
        assert_eq!(report.matches_expected, Some(true));
    }

    #[test]
    fn defended_runs_are_not_graded_against_expectations() {
        let s = stealtooth_scenario("NC2");
        let options = RunOptions {
            defense_protocol: Some(true),
            ..RunOptions::default()
        };
        let (report, _) = run_scenario(&s, &catalog(), options).unwrap();
        assert_eq!(report.expected, None);
        assert_eq!(report.matches_expected, None);
        assert!(!report.stealtooth.unwrap().succeeded);
    }

    #[test]
    fn relay_run_grades_the_three_sub_scenarios() {
        let s = mitm_scenario("WH-1000XM4");
        let (report, _) = run_scenario(&s, &catalog(), RunOptions::default()).unwrap();
        let m = report.mitm.unwrap();
        assert!(m.completed);
        assert_eq!(
            (m.interception, m.tampering, m.proxying),
            (AsVerdict::Full, AsVerdict::Partial, AsVerdict::Partial)
        );
        assert!(m.reconnect_workaround_used);
        assert_eq!(report.matches_expected, Some(true));
    }

    #[test]
    fn honest_scenarios_have_nothing_to_grade() {
        let mut s = stealtooth_scenario("NC2");
        s.name = "honest".into();
        s.attackers.clear();
        s.timeline.retain(|e| !matches!(e.action, TimelineAction::StartAttack { .. }));
        let (report, world) = run_scenario(&s, &catalog(), RunOptions::default()).unwrap();
        assert!(report.stealtooth.is_none());
        assert!(report.mitm.is_none());
        assert_eq!(report.matches_expected, None);
        assert_eq!(world.trace.count_kind(TraceKind::KeyOverwritten), 0);
    }

    #[test]
    fn traces_are_byte_identical_across_runs() {
        let s = mitm_scenario("WH-1000XM5");
        let (_, w1) = run_scenario(&s, &catalog(), RunOptions::default()).unwrap();
        let (_, w2) = run_scenario(&s, &catalog(), RunOptions::default()).unwrap();
        let t1 = trace_jsonl(&w1);
        assert_eq!(t1, trace_jsonl(&w2));
        assert!(!t1.is_empty());
        // Every line is a JSON object with the fixed field order.
        for line in t1.lines() {
            assert!(line.starts_with("{\"t\":"), "line: {line}");
            let v: serde_json::Value = serde_json::from_str(line).unwrap();
            assert!(v.get("actor").is_some() && v.get("kind").is_some());
        }
    }

    #[test]
    fn rederived_verdicts_agree_with_reports() {
        let s = stealtooth_scenario("WH-1000XM4");
        let (report, world) = run_scenario(&s, &catalog(), RunOptions::default()).unwrap();
        let re = rederive_stealtooth(&s, world.trace.events());
        assert_eq!(re, report.stealtooth.unwrap());

        let s = mitm_scenario("WH-1000XM4");
        let (report, world) = run_scenario(&s, &catalog(), RunOptions::default()).unwrap();
        let m = report.mitm.unwrap();
        let re = rederive_mitm(&s, world.trace.events());
        assert_eq!(re.completed, m.completed);
        assert_eq!(re.interception, m.interception);
        assert_eq!(re.tampering, m.tampering);
        assert_eq!(re.proxying, m.proxying);
        assert_eq!(re.captured_pcm_bytes, m.captured_pcm_bytes);
        assert_eq!(re.relayed_pcm_bytes, m.relayed_pcm_bytes);
        assert_eq!(re.codec_failures, m.codec_failures);
        assert_eq!(re.reconnect_workaround_used, m.reconnect_workaround_used);
    }

    #[test]
    fn matrix_reproduces_every_catalog_row() {
        let report = verdict_matrix(&catalog(), RunOptions::default()).unwrap();
        assert_eq!(report.rows.len(), 10);
        assert!(report.all_match, "{report}");
        let text = report.to_string();
        assert!(text.contains("WH-1000XM5"));
        assert!(text.contains("10/10 rows match expectations"));
    }

    #[test]
    fn matrix_under_protocol_defense_flips_the_vulnerable_rows() {
        let options = RunOptions {
            defense_protocol: Some(true),
            ..RunOptions::default()
        };
        let report = verdict_matrix(&catalog(), options).unwrap();
        assert!(!report.all_match);
        for row in &report.rows {
            assert!(!row.stealtooth, "{} must resist under the defense", row.model);
            assert_eq!(row.matches, !row.expected.stealtooth);
        }
    }
}
