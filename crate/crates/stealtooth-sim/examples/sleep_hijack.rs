//! How the relay attack finds its moment: echo probes against both ends of
//! the (spoofed) link distinguish an active session from a sleeping peer,
//! and the sleep window is when the host can be hijacked.
//!
//! The first half prints the observation table; the second half runs the
//! campaign and shows the phase ladder with timestamps.

use stealtooth_sim::attacker::{classify_probe, run_mitm, ProbeVerdict};
use stealtooth_sim::core::TraceKind;
use stealtooth_sim::devices::bundled_catalog;
use stealtooth_sim::simctl::{build_world, mitm_scenario, RunOptions};

fn main() {
    println!("probe observations -> session state");
    for (master, slave) in [(Some(20), Some(20)), (Some(80), None), (None, None)] {
        let verdict = classify_probe(master, slave);
        println!("  master={master:?} slave={slave:?}  =>  {verdict:?}");
    }
    assert_eq!(classify_probe(Some(20), Some(20)), ProbeVerdict::SessionActive);
    assert_eq!(classify_probe(Some(80), None), ProbeVerdict::PeerSleeping);
    assert_eq!(classify_probe(None, Some(20)), ProbeVerdict::NoSession);

    println!();
    println!("campaign against WH-1000XM5:");
    let catalog = bundled_catalog();
    let scenario = mitm_scenario("WH-1000XM5");
    let mut world =
        build_world(&scenario, &catalog, RunOptions::default()).expect("scenario builds");
    let outcome = run_mitm(&mut world).expect("campaign completes");

    let probes_sent = world.trace.count_kind(TraceKind::ProbeSent);
    let probes_answered = world.trace.count_kind(TraceKind::ProbeReply);
    println!("  {probes_sent} probes sent, {probes_answered} answered");
    for (at, phase) in &outcome.phase_log {
        println!("  t={at:>6}ms  {phase}");
    }
    println!();
    println!(
        "the sink idled out at t=30000; the t=30500 probe saw the open window, \
         and the host-side session was taken over without the sink ever \
         disconnecting cleanly"
    );
}
