//! The curve eps -> L_hat(eps) for a skewed 8-point signal, written as CSV
//! and gnuplot columns into the system temp directory.
//!
//!     cargo run --release --example l_curve

use std::fs::File;

use lfnoise::quad::QuadratureConfig;
use lfnoise::solve::{eps_grid, trace_l_curve, write_curve_csv, write_curve_dat, OptimizerConfig};
use lfnoise::verify::standard_signals;

fn main() -> lfnoise::Result<()> {
    let zipf = standard_signals().pop().expect("battery is not empty");
    let grid = eps_grid("0:1:0.1")?;
    let curve = trace_l_curve(
        &zipf.signal,
        &grid,
        &OptimizerConfig::default(),
        &QuadratureConfig::default(),
    )?;
    for p in &curve {
        println!(
            "eps {:.1}  L_hat {:.6}  via {:?}",
            p.epsilon, p.l_hat, p.diagnostics.source
        );
    }
    let dir = std::env::temp_dir();
    write_curve_csv(&curve, File::create(dir.join("l_curve.csv"))?)?;
    write_curve_dat(&curve, File::create(dir.join("l_curve.dat"))?)?;
    println!("wrote {}", dir.join("l_curve.{csv,dat}").display());
    Ok(())
}
