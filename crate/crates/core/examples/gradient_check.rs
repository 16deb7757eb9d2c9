//! Finite-difference gradient checks for every layer and a whole model.
//!
//! cargo run --release --example gradient_check [width_c]

use sriqa::model::ModelConfig;
use sriqa::selftest::gradient_suite;

fn main() -> sriqa::Result<()> {
    let width: usize = std::env::args().nth(1).and_then(|s| s.parse().ok()).unwrap_or(8);
    let config = ModelConfig {
        width_c: width,
        head_units: vec![32, 16, 8, 1],
        ..ModelConfig::default()
    };
    for check in gradient_suite(&config, 0)? {
        println!(
            "{} {:<18} {:.3e}",
            if check.passed { "ok  " } else { "FAIL" },
            check.name,
            check.value
        );
    }
    Ok(())
}
