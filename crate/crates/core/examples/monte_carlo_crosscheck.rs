//! Binned Monte Carlo against the exact value. The estimate sits below J
//! and climbs toward it as bins refine.
//!
//!     cargo run --release --example monte_carlo_crosscheck

use lfnoise::condexp::objective;
use lfnoise::mc::refine_bins;
use lfnoise::quad::QuadratureConfig;
use lfnoise::{DensityNoise, Noise, SignalSpec};

fn main() -> lfnoise::Result<()> {
    let x = SignalSpec::from_atoms(vec![(0.0, 0.7), (1.0, 0.3)])?;
    let y: Noise = DensityNoise::new(vec![(-0.3, 0.2, 0.5), (0.3, 0.2, 0.5)])?.into();
    let exact = objective(&x, &y, &QuadratureConfig::default())?;
    println!("exact J = {:.6}", exact.j);
    for e in refine_bins(&x, &y, &[4, 16, 64, 256], 1_000_000, 42)? {
        println!(
            "bins {:>4}: J_hat = {:.6} +- {:.6}  (gap {:+.2e})",
            e.n_bins,
            e.j_hat,
            e.std_error,
            e.j_hat - exact.j
        );
    }
    Ok(())
}
