//! Least favorable noise at one budget, atomic and Gaussian-mixture searches
//! side by side.
//!
//!     cargo run --release --example least_favorable_search [epsilon]

use lfnoise::quad::QuadratureConfig;
use lfnoise::solve::{optimize_gaussian_mixture, optimize_support_and_weights, OptimizerConfig};
use lfnoise::{NoiseBudget, SignalSpec};

fn main() -> lfnoise::Result<()> {
    let e: f64 = std::env::args()
        .nth(1)
        .and_then(|a| a.parse().ok())
        .unwrap_or(0.5);
    let eps = NoiseBudget::new(e)?;
    let x = SignalSpec::from_atoms(vec![(0.0, 0.7), (1.0, 0.3)])?;
    let cfg = OptimizerConfig::default();

    // the atoms land on a lattice spaced by the gap between the signal's
    // atoms, shifted off-centre
    let atomic = optimize_support_and_weights(&x, eps, &cfg)?;
    println!("var X          = {:.6}", x.variance());
    println!("atomic witness J = {:.6}", atomic.report.j);
    println!("  noise {}", atomic.best_noise.params_json());
    println!("  E[Y^2] - eps^2 = {:.1e}", -atomic.saturation_gap);

    for k in [1, 2] {
        let m = optimize_gaussian_mixture(&x, eps, k, &cfg, &QuadratureConfig::default())?;
        println!("{k}-component mixture J = {:.6}", m.report.j);
    }
    Ok(())
}
