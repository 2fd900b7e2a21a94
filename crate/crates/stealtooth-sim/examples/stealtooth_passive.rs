//! Key theft against a sink that answers a failed reconnect by silently
//! turning discoverable in automatic pairing mode. The attacker impersonates
//! the bonded host, lets the reconnect fail, and walks in through the door
//! the victim itself opened.

use stealtooth_sim::attacker::{
    run_stealtooth, AttackKind, AttackPlan, AttackerAgent, AttackerConfig, MitmRole,
};
use stealtooth_sim::core::{parse_bdaddr, DeviceIdentity, KeyOrigin, TraceKind};
use stealtooth_sim::devices::{bundled_catalog, host_profile, VictimDevice};
use stealtooth_sim::protocol::{AuthMode, ProfileId};
use stealtooth_sim::world::{DefenseConfig, SimEvent, WorldState};

fn main() {
    let model = "Soundcore Space One";
    let profile = bundled_catalog().find(model).expect("bundled model").profile();

    let mut world = WorldState::new(42, AuthMode::SecureMutual, DefenseConfig::default());
    world.add_device(VictimDevice::new(
        DeviceIdentity::new(parse_bdaddr("0A:11:CE:00:00:01").unwrap(), "alice-phone"),
        host_profile(),
    ));
    world.add_device(VictimDevice::new(
        DeviceIdentity::new(parse_bdaddr("0B:0B:00:00:00:02").unwrap(), model),
        profile,
    ));
    world.add_attacker(AttackerAgent::new(AttackerConfig::new(
        DeviceIdentity::new(parse_bdaddr("A1:1A:CE:00:00:09").unwrap(), "mallory"),
        MitmRole::Standalone,
    )));
    world.pre_pair_devices(0, 1, &[ProfileId::A2dp, ProfileId::Avrcp]);
    world.attack_plan = Some(AttackPlan {
        kind: AttackKind::Stealtooth,
        alice: 0,
        bob: 1,
        agents: vec![0],
        paper_codec_mode: false,
    });

    // The host goes away (bag, office, battery); the attack starts while the
    // sink is also off, so the first thing the sink sees on power-up is the
    // impostor wearing the host's address and name.
    world.schedule_at(0, SimEvent::PowerOn { device: 0 });
    world.schedule_at(0, SimEvent::PowerOn { device: 1 });
    world.schedule_at(5_000, SimEvent::PowerOff { device: 1 });
    world.schedule_at(6_000, SimEvent::PowerOff { device: 0 });
    world.schedule_at(7_000, SimEvent::StartAttack);
    world.schedule_at(10_000, SimEvent::PowerOn { device: 1 });

    let before = world.device(1).store.most_recent().expect("bonded").key.clone();
    let outcome = run_stealtooth(&mut world);

    println!("--- what the sink's trace shows ---");
    for event in world.trace.events() {
        let interesting = matches!(
            event.kind,
            TraceKind::AuthFailure
                | TraceKind::PairingModeEnter(_)
                | TraceKind::PairingComplete
                | TraceKind::KeyOverwritten
                | TraceKind::UserNotification
                | TraceKind::DefenseRejected
        );
        if interesting {
            println!("{}", event.to_json_line());
        }
    }

    let after = world.device(1).store.most_recent().expect("bonded").key.clone();
    println!();
    println!("stolen:        {}", outcome.succeeded);
    println!("pairing by:    {} (the attacker had to knock)", outcome.initiator);
    println!("notifications: {}", outcome.victim_notifications);
    println!(
        "sink key:      epoch {} {:?}  ->  epoch {} {:?}",
        before.epoch, before.origin, after.epoch, after.origin
    );
    assert!(outcome.succeeded);
    assert_eq!(outcome.victim_notifications, 0);
    assert_eq!(after.origin, KeyOrigin::AttackPairing);
    println!("the bonded key for the host's address now belongs to the attacker");
}
