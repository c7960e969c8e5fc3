//! Adding an independent Gaussian always lowers J, even when the noise it
//! is added to already has no collisions.
//!
//!     cargo run --example gaussian_smoothing

use lfnoise::condexp::{objective_atomic, objective_density, smooth_with_gaussian};
use lfnoise::quad::QuadratureConfig;
use lfnoise::{AtomicDistribution, SignalSpec};

fn main() -> lfnoise::Result<()> {
    let x = SignalSpec::from_atoms(vec![(-1.0, 0.25), (0.0, 0.5), (1.0, 0.25)])?;
    let quad = QuadratureConfig::default();
    for y in [
        AtomicDistribution::point_mass(0.0),
        AtomicDistribution::new(vec![(-0.5, 0.5), (0.5, 0.5)])?,
        AtomicDistribution::new(vec![(-0.37, 0.5), (0.37, 0.5)])?,
    ] {
        let base = objective_atomic(&x, &y)?.j;
        print!("Y = {:?}: J = {base:.6}", y.values());
        for sigma in [0.2, 0.5, 1.0] {
            let r = objective_density(&x, &smooth_with_gaussian(&y, sigma)?, &quad)?;
            print!("  | sigma {sigma}: {:.6}", r.j);
        }
        println!();
    }
    Ok(())
}
