//! Same theft, worse variant: some sinks do not wait to be paired after a
//! failed reconnect — they keep the connection up and initiate the pairing
//! themselves. The attacker just answers. Run through the scenario layer.

use stealtooth_sim::devices::{bundled_catalog, InitiatorVerdict};
use stealtooth_sim::simctl::{run_scenario, stealtooth_scenario, RunOptions};

fn main() {
    let catalog = bundled_catalog();

    for model in ["WH-1000XM5", "Soundcore Space One"] {
        let scenario = stealtooth_scenario(model);
        let (report, _world) =
            run_scenario(&scenario, &catalog, RunOptions::default()).expect("scenario runs");
        let st = report.stealtooth.expect("theft scenario");
        let how = match st.initiator {
            InitiatorVerdict::Bob => "the victim initiated the pairing itself",
            InitiatorVerdict::Mallory => "the attacker initiated the pairing",
            InitiatorVerdict::Na => "no attack pairing happened",
        };
        println!(
            "{model:<20} stolen={} initiator={} notifications={}",
            st.succeeded, st.initiator, st.victim_notifications
        );
        println!("{:<20} {how}", "");
        assert_eq!(report.matches_expected, Some(true));
    }

    println!();
    println!("both end the same way: an attacker key bound to the host's address,");
    println!("with nothing shown to the user. The initiator only decides who knocks.");
}
