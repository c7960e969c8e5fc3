//! Runs a verification battery and prints the summary table.
//!
//!     cargo run --release --example verify_battery [standard|quick|sentinel-broken]

use lfnoise::verify::{all_passed, render_table, run_all, BatteryPlan, VerifyConfig};

fn main() -> lfnoise::Result<()> {
    let name = std::env::args().nth(1).unwrap_or_else(|| "quick".into());
    let plan = BatteryPlan::by_name(&name)?;
    let reports = run_all(&plan, &VerifyConfig::default(), 42);
    print!("{}", render_table(&reports));
    println!(
        "{name}: {}",
        if all_passed(&reports) {
            "all passed"
        } else {
            "failures"
        }
    );
    Ok(())
}
