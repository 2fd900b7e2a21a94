//! The same theft attempt under the four defense configurations.
//!
//! The notification defense is device-level: the theft still happens, but
//! the user hears about it (automatic-pairing entry and the new bond). The
//! replacement-token defense is protocol-level: re-pairing for an address
//! that already has a stored key must prove knowledge of that key, which an
//! attacker who came for the key cannot do.

use stealtooth_sim::devices::bundled_catalog;
use stealtooth_sim::simctl::{run_scenario, stealtooth_scenario, RunOptions};

fn main() {
    let catalog = bundled_catalog();
    let scenario = stealtooth_scenario("NC2");

    println!(
        "{:<10} {:<8} {:<14} {:<10}",
        "defense", "stolen", "notifications", "rejections"
    );
    for (label, notify, protocol) in [
        ("none", false, false),
        ("notify", true, false),
        ("protocol", false, true),
        ("both", true, true),
    ] {
        let options = RunOptions {
            defense_notify: Some(notify),
            defense_protocol: Some(protocol),
            ..RunOptions::default()
        };
        let (report, _world) =
            run_scenario(&scenario, &catalog, options).expect("scenario runs");
        let st = report.stealtooth.expect("theft scenario");
        println!(
            "{label:<10} {:<8} {:<14} {:<10}",
            st.succeeded, st.victim_notifications, st.defense_rejections
        );

        match (notify, protocol) {
            (false, false) => assert!(st.succeeded && st.victim_notifications == 0),
            (true, false) => assert!(st.succeeded && st.victim_notifications >= 2),
            (_, true) => assert!(!st.succeeded && st.defense_rejections >= 1),
        }
    }

    println!();
    println!("notify detects; the replacement token prevents.");
}
