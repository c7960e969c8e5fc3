//! var E[X | X + Y] for a Bernoulli signal under a few noises.
//!
//!     cargo run --example evaluate_objective

use lfnoise::condexp::{objective, posterior_mean};
use lfnoise::quad::QuadratureConfig;
use lfnoise::{AtomicDistribution, DensityNoise, Noise, SignalSpec};

fn main() -> lfnoise::Result<()> {
    let x = SignalSpec::from_atoms(vec![(-0.5, 0.5), (0.5, 0.5)])?;
    let quad = QuadratureConfig::default();
    let noises: Vec<(&str, Noise)> = vec![
        ("none", AtomicDistribution::point_mass(0.0).into()),
        (
            "+-0.5 (collides)",
            AtomicDistribution::new(vec![(-0.5, 0.5), (0.5, 0.5)])?.into(),
        ),
        (
            "+-0.3 (no collision)",
            AtomicDistribution::new(vec![(-0.3, 0.5), (0.3, 0.5)])?.into(),
        ),
        ("N(0, 0.5^2)", DensityNoise::gaussian(0.0, 0.5)?.into()),
    ];
    println!("var X = {}", x.variance());
    for (name, y) in &noises {
        let r = objective(&x, y, &quad)?;
        println!(
            "{name:<22} J = {:.12}  E(X - g)^2 = {:.12}  bound {:.1e}",
            r.j, r.prediction_error, r.quadrature_error_bound
        );
    }

    // the posterior mean itself, on the colliding noise
    let post = posterior_mean(&x, &noises[1].1, &quad)?;
    for p in &post.points {
        println!("  s = {:>4}  P = {:.2}  g(s) = {:>5}", p.s, p.weight, p.g);
    }
    Ok(())
}
