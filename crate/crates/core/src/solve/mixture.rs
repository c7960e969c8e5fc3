//! Gaussian-mixture noise with `k` equally weighted components, searched
//! by Nelder–Mead over component means and log standard deviations.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use super::{OptimizerConfig, SolveResult};
use crate::condexp::{objective_density, objective_density_fast};
use crate::dist::{DensityNoise, NoiseBudget, SignalSpec};
use crate::error::{Error, Result};
use crate::quad::QuadratureConfig;

/// Smallest component sd, relative to `eps`.
const MIN_SD_RATIO: f64 = 1e-6;

/// Maps raw `(means, log_sds)` to a mixture with mean 0 and second moment
/// exactly `eps^2`: centre the means, then scale everything.
pub fn normalize_mixture(params: &[f64], k: usize, eps: f64) -> Result<DensityNoise> {
    let (mu, ls) = params.split_at(k);
    let mean = mu.iter().sum::<f64>() / k as f64;
    let mut means: Vec<f64> = mu.iter().map(|m| m - mean).collect();
    let mut sds: Vec<f64> = ls.iter().map(|l| l.clamp(-700.0, 700.0).exp()).collect();
    let m2 = (means.iter().map(|m| m * m).sum::<f64>() + sds.iter().map(|s| s * s).sum::<f64>())
        / k as f64;
    let c = eps / m2.sqrt();
    means.iter_mut().for_each(|m| *m *= c);
    sds.iter_mut()
        .for_each(|s| *s = (*s * c).max(MIN_SD_RATIO * eps));
    let sd_part = sds.iter().map(|s| s * s).sum::<f64>() / k as f64;
    let mean_part = means.iter().map(|m| m * m).sum::<f64>() / k as f64;
    if mean_part > 0.0 {
        let cm = ((eps * eps - sd_part).max(0.0) / mean_part).sqrt();
        means.iter_mut().for_each(|m| *m *= cm);
    }
    let w = 1.0 / k as f64;
    DensityNoise::new(means.into_iter().zip(sds).map(|(m, s)| (m, s, w)).collect())
}

/// Coarse rule used while searching; the winner is re-evaluated with the
/// caller's rule.
fn search_quadrature(quad: &QuadratureConfig) -> QuadratureConfig {
    QuadratureConfig {
        nodes_per_panel: quad.nodes_per_panel.min(8),
        panel_width: quad.panel_width.max(1.0),
        ..quad.clone()
    }
}

struct NmRun {
    x: Vec<f64>,
    f: f64,
    trace: Vec<(usize, f64)>,
    converged: bool,
}

/// Nelder–Mead with reflection 1, expansion 2, contraction 0.5, shrink 0.5.
fn nelder_mead(
    f: &dyn Fn(&[f64]) -> f64,
    x0: &[f64],
    step: f64,
    max_iters: usize,
    tol: f64,
) -> NmRun {
    let n = x0.len();
    let mut simplex: Vec<(Vec<f64>, f64)> = Vec::with_capacity(n + 1);
    simplex.push((x0.to_vec(), f(x0)));
    for i in 0..n {
        let mut p = x0.to_vec();
        p[i] += step;
        let v = f(&p);
        simplex.push((p, v));
    }
    let order = |s: &mut Vec<(Vec<f64>, f64)>| s.sort_by(|a, b| a.1.total_cmp(&b.1));
    order(&mut simplex);
    let mut trace = vec![(0, simplex[0].1)];
    let mut converged = false;
    for it in 1..=max_iters {
        let spread = simplex[n].1 - simplex[0].1;
        if spread.is_finite() && spread <= tol {
            converged = true;
            break;
        }
        let centroid: Vec<f64> = (0..n)
            .map(|d| simplex[..n].iter().map(|p| p.0[d]).sum::<f64>() / n as f64)
            .collect();
        let along = |t: f64| -> Vec<f64> {
            centroid
                .iter()
                .zip(&simplex[n].0)
                .map(|(c, w)| c + t * (c - w))
                .collect()
        };
        let xr = along(1.0);
        let fr = f(&xr);
        if fr < simplex[0].1 {
            let xe = along(2.0);
            let fe = f(&xe);
            simplex[n] = if fe < fr { (xe, fe) } else { (xr, fr) };
        } else if fr < simplex[n - 1].1 {
            simplex[n] = (xr, fr);
        } else {
            let (xc, fc) = if fr < simplex[n].1 {
                let xc = along(0.5);
                let fc = f(&xc);
                (xc, fc)
            } else {
                let xc = along(-0.5);
                let fc = f(&xc);
                (xc, fc)
            };
            if fc < simplex[n].1.min(fr) {
                simplex[n] = (xc, fc);
            } else {
                let best = simplex[0].0.clone();
                for p in simplex.iter_mut().skip(1) {
                    p.0 = best
                        .iter()
                        .zip(&p.0)
                        .map(|(b, v)| b + 0.5 * (v - b))
                        .collect();
                    p.1 = f(&p.0);
                }
            }
        }
        order(&mut simplex);
        trace.push((it, simplex[0].1.min(trace.last().unwrap().1)));
    }
    let (x, f) = simplex.swap_remove(0);
    NmRun {
        x,
        f,
        trace,
        converged,
    }
}

/// Best `k`-component mixture with mean 0 and `E[Y^2] = eps^2`.
pub fn optimize_gaussian_mixture(
    x: &SignalSpec,
    eps: NoiseBudget,
    k: usize,
    cfg: &OptimizerConfig,
    quad: &QuadratureConfig,
) -> Result<SolveResult> {
    cfg.validate()?;
    quad.validate()?;
    if k == 0 {
        return Err(Error::InvalidConfig(
            "mixture needs at least one component".into(),
        ));
    }
    let e = eps.epsilon();
    if !(e > 0.0) {
        return Err(Error::InvalidConfig(
            "mixture search needs epsilon > 0".into(),
        ));
    }
    let tol_obj = cfg.tol_obj * x.variance();
    let finish = |params: &[f64],
                  restarts: usize,
                  trace: Vec<(usize, f64)>,
                  converged: bool|
     -> Result<SolveResult> {
        let noise = normalize_mixture(params, k, e)?;
        let report = objective_density(x, &noise, quad)?;
        Ok(SolveResult {
            epsilon: e,
            saturation_gap: eps.eps2() - report.noise_second_moment,
            best_noise: noise.into(),
            report,
            restarts_used: restarts,
            converged,
            trace,
        })
    };
    if k == 1 {
        return finish(&[0.0, 0.0], 1, vec![], true);
    }

    let coarse = search_quadrature(quad);
    let objective = |p: &[f64]| -> Result<f64> {
        let noise = normalize_mixture(p, k, e)?;
        objective_density_fast(x, &noise, &coarse)
    };
    let starts: Vec<Vec<f64>> = (0..cfg.restarts)
        .map(|r| {
            let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed.wrapping_add(r as u64));
            let mut p = Vec::with_capacity(2 * k);
            for i in 0..k {
                let spread = if r == 0 {
                    i as f64 - (k as f64 - 1.0) / 2.0
                } else {
                    rng.random_range(-1.0..1.0)
                };
                p.push(spread);
            }
            for _ in 0..k {
                p.push(if r == 0 {
                    -1.0
                } else {
                    rng.random_range(-4.0..0.5)
                });
            }
            p
        })
        .collect();
    objective(&starts[0])?;

    let runs: Vec<NmRun> = starts
        .par_iter()
        .map(|p0| {
            let f = |p: &[f64]| objective(p).unwrap_or(f64::INFINITY);
            nelder_mead(&f, p0, 0.5, cfg.max_iters, tol_obj)
        })
        .collect();
    let best = runs
        .into_iter()
        .reduce(|a, b| if b.f < a.f - tol_obj { b } else { a })
        .expect("at least one restart");
    finish(&best.x, cfg.restarts, best.trace, best.converged)
}
