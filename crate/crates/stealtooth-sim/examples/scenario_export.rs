//! Regenerates the bundled scenario documents under `data/scenarios/` and the
//! golden trace fixture under `tests/golden/`. Run after changing the
//! builders or the catalog:
//!
//! ```text
//! cargo run --example scenario_export
//! ```

use std::fs;
use std::path::{Path, PathBuf};

use stealtooth_sim::devices::bundled_catalog;
use stealtooth_sim::simctl::{
    mitm_scenario, run_scenario, stealtooth_scenario, trace_jsonl, RunOptions, Scenario,
};

fn write_scenario(dir: &Path, scenario: &Scenario) {
    let mut text = serde_json::to_string_pretty(scenario).expect("scenario serializes");
    text.push('\n');
    let path = dir.join(format!("{}.json", scenario.name));
    fs::write(&path, text).expect("scenario file writes");
    println!("  {}", path.display());
}

fn main() {
    let root = PathBuf::from(env!("CARGO_MANIFEST_DIR"));
    let catalog = bundled_catalog();

    let scenarios = root.join("data/scenarios");
    fs::create_dir_all(&scenarios).expect("scenario dir");
    println!("scenarios:");
    let mut count = 0usize;
    for entry in &catalog.devices {
        write_scenario(&scenarios, &stealtooth_scenario(&entry.model));
        count += 1;
        if entry.expected.mitm_applicable() {
            write_scenario(&scenarios, &mitm_scenario(&entry.model));
            count += 1;
        }
    }

    // One pinned trace so the determinism guarantee is checkable against
    // bytes in the repository, not just run-to-run.
    let scenario = stealtooth_scenario("WH-1000XM5");
    let (_, world) =
        run_scenario(&scenario, &catalog, RunOptions::default()).expect("golden scenario runs");
    let golden = root.join("tests/golden");
    fs::create_dir_all(&golden).expect("golden dir");
    let path = golden.join("wh_1000xm5_stealtooth.trace.jsonl");
    fs::write(&path, trace_jsonl(&world)).expect("golden trace writes");
    println!("golden trace:\n  {}", path.display());

    println!("wrote {count} scenarios");
}
