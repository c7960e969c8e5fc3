//! Weak limits can only lower J. Three sequences: one with a strict gap,
//! one that converges from a constant, one that converges smoothly.
//!
//!     cargo run --example semicontinuity

use lfnoise::condexp::ExactEngine;
use lfnoise::quad::QuadratureConfig;
use lfnoise::verify::{sequence_values, SequenceKind, WeakSequenceSpec};
use lfnoise::{AtomicDistribution, DensityNoise, SignalSpec};

fn main() -> lfnoise::Result<()> {
    let x = SignalSpec::from_atoms(vec![(-0.5, 0.5), (0.5, 0.5)])?;
    let sequences = [
        WeakSequenceSpec {
            kind: SequenceKind::AtomCollapse,
            n_terms: 8,
            limit: AtomicDistribution::new(vec![(-0.5, 0.5), (0.5, 0.5)])?.into(),
        },
        WeakSequenceSpec {
            kind: SequenceKind::VanishingPerturbation,
            n_terms: 8,
            limit: AtomicDistribution::point_mass(0.0).into(),
        },
        WeakSequenceSpec {
            kind: SequenceKind::DiscretizedGaussian,
            n_terms: 8,
            limit: DensityNoise::gaussian(0.0, 0.5)?.into(),
        },
    ];
    for seq in &sequences {
        let v = sequence_values(&x, seq, &QuadratureConfig::default(), &ExactEngine)?;
        let terms: Vec<String> = v.j_n.iter().map(|j| format!("{j:.4}")).collect();
        println!("{:?}", seq.kind);
        println!("  J_n     {}", terms.join(" "));
        println!("  J_limit {:.4}  (tail min {:.4})", v.j_limit, v.tail_min());
    }
    Ok(())
}
