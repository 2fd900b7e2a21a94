//! Run the whole attack repertoire against every model in the bundled
//! catalog and print the verdict table. Equivalent to `simctl matrix`.

use stealtooth_sim::devices::bundled_catalog;
use stealtooth_sim::simctl::{verdict_matrix, RunOptions};

fn main() {
    let catalog = bundled_catalog();
    let report = verdict_matrix(&catalog, RunOptions::default()).expect("matrix runs");
    println!("{report}");
    assert!(report.all_match, "a row diverged from its recorded expectation");
}
