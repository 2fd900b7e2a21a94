//! The baseline the attacks subvert: a host and sink that are already
//! bonded. Power both on, stream, let the sink idle out, wake it on user
//! input — no pairing mode, no notifications, one link key throughout.

use stealtooth_sim::core::{parse_bdaddr, DeviceIdentity, PairingModeKind, TraceKind};
use stealtooth_sim::devices::{bundled_catalog, host_profile, VictimDevice};
use stealtooth_sim::protocol::{AuthMode, ProfileId};
use stealtooth_sim::world::{DefenseConfig, SimEvent, WorldState};

fn main() {
    let catalog = bundled_catalog();
    let sink_profile = catalog.find("WH-1000XM5").expect("bundled model").profile();

    let mut world = WorldState::new(7, AuthMode::SecureMutual, DefenseConfig::default());
    let phone = parse_bdaddr("0A:11:CE:00:00:01").unwrap();
    let headset = parse_bdaddr("0B:0B:00:00:00:02").unwrap();
    world.add_device(VictimDevice::new(
        DeviceIdentity::new(phone, "alice-phone"),
        host_profile(),
    ));
    world.add_device(VictimDevice::new(
        DeviceIdentity::new(headset, "WH-1000XM5"),
        sink_profile,
    ));
    world.pre_pair_devices(0, 1, &[ProfileId::A2dp, ProfileId::Avrcp]);

    world.schedule_at(0, SimEvent::PowerOn { device: 0 });
    world.schedule_at(0, SimEvent::PowerOn { device: 1 });
    world.schedule_at(1_000, SimEvent::SendAudio { device: 0, bytes: 160 });
    world.schedule_at(2_000, SimEvent::SendAudio { device: 0, bytes: 160 });
    // Nothing touches the sink after t=2000, so it sleeps at t=32000; the
    // user pokes it at t=40000 and it reconnects on its own.
    world.schedule_at(40_000, SimEvent::UserActivity { device: 1 });
    world.run_until(41_000);

    for event in world.trace.events() {
        println!("{}", event.to_json_line());
    }

    let sink = world.device(1);
    let record = sink.store.most_recent().expect("still bonded");
    println!();
    println!("sink received {} PCM bytes", sink.received_audio.len());
    println!(
        "sink key: epoch {} origin {:?} grants {:?}",
        record.key.epoch, record.key.origin, record.granted_profiles
    );
    assert_eq!(world.trace.count_kind(TraceKind::UserNotification), 0);
    assert_eq!(
        world
            .trace
            .count_kind(TraceKind::PairingModeEnter(PairingModeKind::Auto)),
        0
    );
    println!("no pairing mode, no notifications: the bond carries every session");
}
