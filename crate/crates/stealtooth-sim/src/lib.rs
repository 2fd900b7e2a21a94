//! Deterministic discrete-event simulator of Bluetooth Classic pairing and
//! the link-key lifecycle, built to study silent key-theft attacks and their
//! countermeasures.
//!
//! The model covers what the attacks actually exploit: bonded link keys and
//! the reconnect path, authentication (legacy unilateral vs. secure mutual),
//! encryption-key entropy negotiation, idle sleep, and per-model quirks such
//! as automatic pairing after a failed reconnect. Radio, baseband, and L2CAP
//! are abstracted away; address/name impersonation is assumed possible, as it
//! is with commodity hardware.
//!
//! What you can do with it:
//!
//! * Reproduce the **stealtooth** key theft: an attacker impersonates a
//!   bonded peer, lets the victim's reconnect fail, and rides the victim's
//!   automatic pairing mode to plant its own key — with zero user-visible
//!   notifications ([`attacker::run_stealtooth`]).
//! * Extend the theft to a full audio **man-in-the-middle**: hijack the
//!   sleeping session on the host side, catch the sink when it powers back
//!   on, and relay (or tamper with) the PCM stream between two attacker
//!   radios ([`attacker::run_mitm`], [`relay`]).
//! * Grade a whole catalog of device behavior profiles and compare against
//!   recorded expectations ([`simctl::verdict_matrix`]).
//! * Evaluate defenses: user notification on automatic-pairing entry and
//!   completion, and a replacement-token proof that re-pairing for an
//!   already-bonded address must demonstrate knowledge of the stored key
//!   ([`world::DefenseConfig`]).
//! * Exhaustively model-check short action schedules for key-theft
//!   reachability ([`attacker::model_check`]).
//!
//! Everything is deterministic: one seeded RNG, a totally ordered event
//! queue, ordered containers throughout. The same scenario with the same
//! seed produces a byte-identical JSONL trace.
//!
//! Module map:
//!
//! * [`core`] — addresses, identities, link keys, the seeded key forge,
//!   key stores, the trace.
//! * [`protocol`] — authentication, entropy negotiation, pairing, profile
//!   grants, the replacement-token defense.
//! * [`devices`] — victim device state machines (power, sleep, reconnect,
//!   automatic pairing policies) and the behavior catalog.
//! * [`attacker`] — attacker agents, the probe/hijack toolkit, both attack
//!   campaigns, outcome grading, and the schedule model checker.
//! * [`relay`] — the attacker-to-attacker wire format and the sender /
//!   receiver state machines with reconnect backoff and codec handling.
//! * [`world`] — the event queue and routing fabric that ties the parties
//!   together.
//! * [`simctl`] — scenario files, run reports, the verdict matrix, and
//!   trace output; the engine behind the `simctl` binary.
//!
//! The `examples/` directory walks through each capability; `simctl run`,
//! `simctl matrix`, and `simctl validate` expose them on the command line.

pub mod attacker;
pub mod core;
pub mod devices;
pub mod protocol;
pub mod relay;
pub mod simctl;
pub mod world;
