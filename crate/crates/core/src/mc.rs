//! Monte Carlo estimate of `var E[X | X + Y]` by binning the observed sum.
//!
//! Samples are grouped into equal-probability bins of `S` (empirical
//! quantiles). Ties in `S` always share a bin, so the bins are a function of
//! `S` and the estimator targets the variance of `E[X | bin(S)]`, which can
//! only sit below the exact objective.
//!
//! RNG: ChaCha8. The sample is drawn in chunks of `CHUNK` draws; chunk `c`
//! uses `ChaCha8Rng::seed_from_u64(seed)` on stream `c`. Bootstrap resample
//! `r` uses `seed + r` on stream `BOOT_STREAM`. Results do not depend on the
//! number of threads.

use std::io::Write;

use rand::distr::weighted::WeightedIndex;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Binomial, Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dist::{sum_merge_tol, Noise, SignalSpec};
use crate::error::{Error, Result};
use crate::numeric::ksum;

pub const MIN_SAMPLES: usize = 1000;
pub const BOOTSTRAP_RESAMPLES: usize = 200;
const CHUNK: usize = 1 << 16;
const BOOT_STREAM: u64 = 1 << 63;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct McEstimate {
    #[serde(rename = "J_hat")]
    pub j_hat: f64,
    pub std_error: f64,
    pub n_samples: usize,
    pub n_bins: usize,
    pub seed: u64,
    /// Non-empty bins after merging bins that ties or few distinct values
    /// left empty.
    pub effective_bins: usize,
}

/// Sorted draws of `(S, index of the X atom)`.
struct Sample {
    draws: Vec<(f64, u32)>,
    tie_tol: f64,
}

fn draw_sample(x: &SignalSpec, y: &Noise, n: usize, seed: u64) -> Result<Sample> {
    let x_idx =
        WeightedIndex::new(x.masses()).map_err(|e| Error::InvalidDistribution(e.to_string()))?;
    let xv = x.values();
    let chunks = n.div_ceil(CHUNK);
    let draw_chunk = |c: usize| -> Vec<(f64, u32)> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(c as u64);
        let len = CHUNK.min(n - c * CHUNK);
        let mut out = Vec::with_capacity(len);
        match y {
            Noise::Atomic(d) => {
                let y_idx = WeightedIndex::new(d.masses()).expect("validated masses");
                for _ in 0..len {
                    let i = x_idx.sample(&mut rng);
                    let j = y_idx.sample(&mut rng);
                    out.push((xv[i] + d.values()[j], i as u32));
                }
            }
            Noise::Mixture(d) => {
                let comps = d.components();
                let k_idx =
                    WeightedIndex::new(comps.iter().map(|c| c.weight)).expect("validated weights");
                for _ in 0..len {
                    let i = x_idx.sample(&mut rng);
                    let c = &comps[k_idx.sample(&mut rng)];
                    let z: f64 = rng.sample(StandardNormal);
                    out.push((xv[i] + c.mean + c.sd * z, i as u32));
                }
            }
        }
        out
    };
    let mut draws: Vec<(f64, u32)> = (0..chunks)
        .into_par_iter()
        .flat_map_iter(draw_chunk)
        .collect();
    draws.par_sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
    let tie_tol = match y {
        Noise::Atomic(d) => sum_merge_tol(x.dist(), d),
        Noise::Mixture(_) => 0.0,
    };
    Ok(Sample { draws, tie_tol })
}

impl Sample {
    /// Per-bin counts of each X atom for `bins` quantile bins. Cut points are
    /// moved forward past ties; bins that end up empty disappear.
    fn cell_counts(&self, bins: usize, n_atoms: usize) -> Vec<Vec<u64>> {
        let n = self.draws.len();
        let mut cuts = Vec::with_capacity(bins + 1);
        cuts.push(0);
        for b in 1..bins {
            let mut k = ((b as u128 * n as u128) / bins as u128) as usize;
            while k > 0 && k < n && self.draws[k].0 - self.draws[k - 1].0 <= self.tie_tol {
                k += 1;
            }
            if k > *cuts.last().unwrap() && k < n {
                cuts.push(k);
            }
        }
        cuts.push(n);
        cuts.windows(2)
            .map(|w| {
                let mut c = vec![0u64; n_atoms];
                for d in &self.draws[w[0]..w[1]] {
                    c[d.1 as usize] += 1;
                }
                c
            })
            .collect()
    }
}

fn binned_objective(cells: &[Vec<u64>], xv: &[f64], n: u64) -> f64 {
    let nf = n as f64;
    let mut overall = 0.0;
    let between = ksum(cells.iter().filter_map(|c| {
        let nb: u64 = c.iter().sum();
        if nb == 0 {
            return None;
        }
        let sum_x = ksum(c.iter().zip(xv).map(|(&k, &v)| k as f64 * v));
        overall += sum_x;
        Some(sum_x * sum_x / (nb as f64 * nf))
    }));
    let mean = overall / nf;
    (between - mean * mean).max(0.0)
}

/// Multinomial resample of the cell counts, equal in law to resampling
/// the draws with replacement while keeping the bins.
fn resample(cells: &[Vec<u64>], n: u64, rng: &mut ChaCha8Rng) -> Vec<Vec<u64>> {
    let mut remaining_n = n;
    let mut remaining_p = n;
    cells
        .iter()
        .map(|c| {
            c.iter()
                .map(|&k| {
                    if k == 0 || remaining_n == 0 {
                        return 0;
                    }
                    let p = (k as f64 / remaining_p as f64).min(1.0);
                    remaining_p -= k;
                    let draw = if p >= 1.0 {
                        remaining_n
                    } else {
                        Binomial::new(remaining_n, p)
                            .expect("p in [0,1]")
                            .sample(rng)
                    };
                    remaining_n -= draw;
                    draw
                })
                .collect()
        })
        .collect()
}

fn estimate_from_sample(sample: &Sample, x: &SignalSpec, bins: usize, seed: u64) -> McEstimate {
    let n = sample.draws.len() as u64;
    let cells = sample.cell_counts(bins, x.values().len());
    let j_hat = binned_objective(&cells, x.values(), n);
    let boot: Vec<f64> = (0..BOOTSTRAP_RESAMPLES)
        .into_par_iter()
        .map(|r| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed.wrapping_add(r as u64));
            rng.set_stream(BOOT_STREAM);
            binned_objective(&resample(&cells, n, &mut rng), x.values(), n)
        })
        .collect();
    let m = ksum(boot.iter().copied()) / boot.len() as f64;
    let var = ksum(boot.iter().map(|b| (b - m) * (b - m))) / (boot.len() - 1) as f64;
    McEstimate {
        j_hat,
        std_error: var.sqrt(),
        n_samples: n as usize,
        n_bins: bins,
        seed,
        effective_bins: cells.len(),
    }
}

fn check_counts(n_samples: usize, n_bins: usize) -> Result<()> {
    if n_samples < MIN_SAMPLES || n_bins < 2 {
        return Err(Error::InvalidSampleCount {
            samples: n_samples,
            bins: n_bins,
        });
    }
    Ok(())
}

pub fn estimate_objective(
    x: &SignalSpec,
    y: &Noise,
    n_samples: usize,
    n_bins: usize,
    seed: u64,
) -> Result<McEstimate> {
    check_counts(n_samples, n_bins)?;
    let sample = draw_sample(x, y, n_samples, seed)?;
    Ok(estimate_from_sample(&sample, x, n_bins, seed))
}

/// Estimates for each bin count in `schedule`, all on one shared sample.
/// When every count divides the next, the partitions are nested and the
/// estimates are non-decreasing.
pub fn refine_bins(
    x: &SignalSpec,
    y: &Noise,
    schedule: &[usize],
    n_samples: usize,
    seed: u64,
) -> Result<Vec<McEstimate>> {
    if schedule.is_empty() || schedule.windows(2).any(|w| w[0] >= w[1]) {
        return Err(Error::BadSchedule);
    }
    check_counts(n_samples, schedule[0])?;
    let sample = draw_sample(x, y, n_samples, seed)?;
    Ok(schedule
        .iter()
        .map(|&b| estimate_from_sample(&sample, x, b, seed))
        .collect())
}

/// CSV with header `n_samples,n_bins,seed,J_hat,std_error`.
pub fn write_csv<W: Write>(estimates: &[McEstimate], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["n_samples", "n_bins", "seed", "J_hat", "std_error"])?;
    for e in estimates {
        w.write_record([
            e.n_samples.to_string(),
            e.n_bins.to_string(),
            e.seed.to_string(),
            e.j_hat.to_string(),
            e.std_error.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dist::{AtomicDistribution, DensityNoise};

    fn half() -> SignalSpec {
        SignalSpec::from_atoms(vec![(-0.5, 0.5), (0.5, 0.5)]).unwrap()
    }

    fn half_noise() -> Noise {
        AtomicDistribution::new(vec![(-0.5, 0.5), (0.5, 0.5)])
            .unwrap()
            .into()
    }

    #[test]
    fn matches_exact_value_on_colliding_noise() {
        let e = estimate_objective(&half(), &half_noise(), 200_000, 64, 7).unwrap();
        assert!((e.j_hat - 0.125).abs() <= 3.0 * e.std_error, "{e:?}");
        assert!(e.std_error > 0.0);
        assert_eq!(e.effective_bins, 3);
    }

    #[test]
    fn point_mass_noise_recovers_variance() {
        let y = Noise::Atomic(AtomicDistribution::point_mass(0.0));
        let e = estimate_objective(&half(), &y, 10_000, 4, 1).unwrap();
        // two-atom X is recovered exactly from S, so J_hat is the sample variance
        assert!((e.j_hat - 0.25).abs() <= 3.0 * e.std_error + 1e-3, "{e:?}");
    }

    #[test]
    fn deterministic_for_seed() {
        let y = Noise::Mixture(DensityNoise::gaussian(0.0, 0.5).unwrap());
        let a = estimate_objective(&half(), &y, 5000, 16, 3).unwrap();
        let b = estimate_objective(&half(), &y, 5000, 16, 3).unwrap();
        assert_eq!(a.j_hat.to_bits(), b.j_hat.to_bits());
        assert_eq!(a.std_error.to_bits(), b.std_error.to_bits());
        let c = estimate_objective(&half(), &y, 5000, 16, 4).unwrap();
        assert_ne!(a.j_hat, c.j_hat);
    }

    #[test]
    fn thread_count_does_not_matter() {
        let y = Noise::Mixture(DensityNoise::gaussian(0.0, 0.5).unwrap());
        let run = |threads| {
            rayon::ThreadPoolBuilder::new()
                .num_threads(threads)
                .build()
                .unwrap()
                .install(|| estimate_objective(&half(), &y, 150_000, 32, 9).unwrap())
        };
        assert_eq!(run(1), run(4));
    }

    #[test]
    fn nested_bins_are_non_decreasing() {
        let y = Noise::Mixture(DensityNoise::gaussian(0.0, 0.5).unwrap());
        let est = refine_bins(&half(), &y, &[4, 16, 64], 100_000, 5).unwrap();
        assert!(est.windows(2).all(|w| w[1].j_hat >= w[0].j_hat - 1e-15));
        let est = refine_bins(&half(), &half_noise(), &[4, 16, 64], 100_000, 5).unwrap();
        assert!((est[2].j_hat - 0.125).abs() <= 3.0 * est[2].std_error);
    }

    #[test]
    fn two_bin_value_matches_enumeration() {
        // S takes -1, 0, 1 with mass 1/4, 1/2, 1/4; the median cut lands in the
        // tie block at 0, so the bins are {-1, 0} and {1}: J_2 = 1/12.
        let est = refine_bins(&half(), &half_noise(), &[2], 200_000, 11).unwrap();
        assert!(
            (est[0].j_hat - 1.0 / 12.0).abs() <= 3.0 * est[0].std_error + 1e-9,
            "{est:?}"
        );
    }

    #[test]
    fn shrinking_variance_estimate_vanishes() {
        let y = Noise::Mixture(DensityNoise::gaussian(0.0, 1.0).unwrap());
        let mut last = f64::INFINITY;
        for a in [1e-1, 1e-2, 1e-3] {
            let x = half().scale(a).unwrap();
            let e = estimate_objective(&x, &y, 20_000, 8, 2).unwrap();
            assert!(e.j_hat < last);
            last = e.j_hat;
        }
        assert!(last < 1e-6);
    }

    #[test]
    fn rejects_bad_counts() {
        assert_eq!(
            estimate_objective(&half(), &half_noise(), 999, 4, 0),
            Err(Error::InvalidSampleCount {
                samples: 999,
                bins: 4
            })
        );
        assert!(estimate_objective(&half(), &half_noise(), 1000, 1, 0).is_err());
        assert_eq!(
            refine_bins(&half(), &half_noise(), &[4, 4], 1000, 0),
            Err(Error::BadSchedule)
        );
        assert_eq!(
            refine_bins(&half(), &half_noise(), &[], 1000, 0),
            Err(Error::BadSchedule)
        );
    }

    #[test]
    fn csv_layout() {
        let e = McEstimate {
            j_hat: 0.125,
            std_error: 0.001,
            n_samples: 1000,
            n_bins: 4,
            seed: 42,
            effective_bins: 3,
        };
        let mut buf = Vec::new();
        write_csv(&[e], &mut buf).unwrap();
        assert_eq!(
            String::from_utf8(buf).unwrap(),
            "n_samples,n_bins,seed,J_hat,std_error\n1000,4,42,0.125,0.001\n"
        );
    }
}
