//! Candidate supports and the search over support points.
//!
//! `J < var X` needs sums that collide, `x_i + v_j = x_k + v_l`, so supports
//! whose gaps are X-atom differences are the natural candidates. Support
//! points are then moved one at a time to positions that create new
//! collisions, with a golden-section probe in between.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use super::weights::{
    is_feasible, pgd, prune, result_from_weights, solve_weights, to_distribution, ClassMap,
    MomentProjector, PgdRun,
};
use super::{ConstraintMode, OptimizerConfig, SolveResult};
use crate::condexp::objective_atomic;
use crate::dist::{AtomicDistribution, NoiseBudget, SignalSpec};
use crate::error::Result;
use crate::numeric::default_merge_tol;

const MAX_SPACINGS: usize = 6;
const MAX_COLLISION_MOVES: usize = 16;
const GOLDEN_ITERS: usize = 12;
const SWEEPS: usize = 2;
const REFINED_CANDIDATES: usize = 4;
const SHIFT_GRID: usize = 16;

fn symmetric_lattice(m: usize, h: f64) -> Vec<f64> {
    (0..m)
        .map(|k| (k as f64 - (m as f64 - 1.0) / 2.0) * h)
        .collect()
}

fn canonical(mut s: Vec<f64>) -> Vec<f64> {
    for v in s.iter_mut() {
        *v = (*v * 1e12).round() / 1e12;
        if *v == 0.0 {
            *v = 0.0;
        }
    }
    s.sort_by(f64::total_cmp);
    s.dedup();
    s
}

/// Candidate supports for budget `eps`, deterministic for a given seed:
/// lattices spaced by X-atom differences (and half of them), centred and
/// shifted by fractions of the spacing,
/// unit lattices scaled to `E[Y^2] = eps^2` under uniform weights, and
/// random symmetric supports. Only supports that admit feasible weights are
/// kept.
pub fn propose_support(x: &SignalSpec, eps: NoiseBudget, size: usize, seed: u64) -> Vec<Vec<f64>> {
    propose(x, eps, size, seed, OptimizerConfig::default().restarts)
}

fn propose(
    x: &SignalSpec,
    eps: NoiseBudget,
    size: usize,
    seed: u64,
    n_random: usize,
) -> Vec<Vec<f64>> {
    let size = size.max(2);
    let e = eps.epsilon();
    if e == 0.0 {
        return vec![vec![0.0]];
    }
    let mut out: Vec<Vec<f64>> = Vec::new();
    for d in x.atom_differences().into_iter().take(MAX_SPACINGS) {
        for h in [d, d / 2.0] {
            // two points h apart with zero mean and E[Y^2] = eps^2
            let disc = h * h - 4.0 * e * e;
            if disc >= 0.0 {
                for a in [(-h + disc.sqrt()) / 2.0, (-h - disc.sqrt()) / 2.0] {
                    out.push(vec![a, a + h]);
                }
            }
            for m in 2..=size {
                let base = symmetric_lattice(m, h);
                for shift in [0.0, -0.5, -0.25, 0.25, 0.5] {
                    out.push(base.iter().map(|v| v + shift * h).collect());
                }
            }
        }
    }
    for m in 2..=size {
        let unit = symmetric_lattice(m, 1.0);
        let m2 = unit.iter().map(|v| v * v).sum::<f64>() / m as f64;
        let c = e / m2.sqrt();
        out.push(unit.iter().map(|v| v * c).collect());
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for _ in 0..n_random {
        let m = rng.random_range(2..=size);
        let mut s: Vec<f64> = Vec::with_capacity(m);
        let half = m / 2;
        for k in 0..half {
            let u = if k == 0 {
                e * (1.0 + rng.random::<f64>())
            } else {
                3.0 * e * rng.random::<f64>()
            };
            s.push(u);
            s.push(-u);
        }
        if m % 2 == 1 {
            s.push(0.0);
        }
        out.push(s);
    }
    let tol = 1e-10;
    let mut seen = std::collections::HashSet::new();
    out.into_iter()
        .map(canonical)
        .filter(|s| {
            let spaced = s
                .windows(2)
                .all(|w| w[1] - w[0] > default_merge_tol(s.iter().copied()));
            spaced && is_feasible(s, eps, ConstraintMode::Equality, tol)
        })
        .filter(|s| seen.insert(s.iter().map(|v| v.to_bits()).collect::<Vec<_>>()))
        .collect()
}

#[derive(Clone, Debug)]
struct Candidate {
    support: Vec<f64>,
    run: PgdRun,
}

/// `a` strictly better than `b`: lower `J` beyond `tol`, then fewer points,
/// then lexicographically smaller support.
fn better(a: &Candidate, b: &Candidate, tol: f64) -> bool {
    if (a.run.j - b.run.j).abs() > tol {
        return a.run.j < b.run.j;
    }
    if a.support.len() != b.support.len() {
        return a.support.len() < b.support.len();
    }
    a.support
        .iter()
        .zip(&b.support)
        .find(|(u, v)| u != v)
        .is_some_and(|(u, v)| u < v)
}

/// Slack allowed on the moment range of a moved support, relative to its
/// largest squared value. Looser slack lets the search drift off exact
/// lattices by amounts the objective cannot resolve.
const FEASIBILITY_ROUNDOFF: f64 = 1e-13;

/// Weights on `support` warm-started from `q0`.
fn reweigh(
    x: &SignalSpec,
    support: &[f64],
    q0: &[f64],
    eps: NoiseBudget,
    cfg: &OptimizerConfig,
    tol_obj: f64,
    mode: ConstraintMode,
) -> Option<PgdRun> {
    let scale = support.iter().fold(eps.eps2(), |m, v| m.max(v * v));
    if !is_feasible(support, eps, mode, FEASIBILITY_ROUNDOFF * scale) {
        return None;
    }
    let map = ClassMap::new(x, support);
    let proj = MomentProjector::new(support, eps, cfg.tol_feas);
    pgd(&map, &proj, q0, cfg, tol_obj, mode)
}

/// Golden-section minimiser of `f` on `[a, b]`.
fn golden(f: &dyn Fn(f64) -> f64, mut a: f64, mut b: f64, iters: usize) -> f64 {
    let phi = 0.5 * (5f64.sqrt() - 1.0);
    let (mut c1, mut c2) = (b - phi * (b - a), a + phi * (b - a));
    let (mut f1, mut f2) = (f(c1), f(c2));
    for _ in 0..iters {
        if f1 <= f2 {
            b = c2;
            c2 = c1;
            f2 = f1;
            c1 = b - phi * (b - a);
            f1 = f(c1);
        } else {
            a = c1;
            c1 = c2;
            f1 = f2;
            c2 = a + phi * (b - a);
            f2 = f(c2);
        }
    }
    if f1 <= f2 {
        c1
    } else {
        c2
    }
}

/// Best translate of the whole support. Translation keeps every collision,
/// so only the moment constraints move.
fn shift_move(
    x: &SignalSpec,
    cur: &Candidate,
    eps: NoiseBudget,
    cfg: &OptimizerConfig,
    tol_obj: f64,
    mode: ConstraintMode,
) -> Option<Candidate> {
    let s = &cur.support;
    let (lo, hi) = (-s[s.len() - 1], -s[0]);
    if !(hi > lo) {
        return None;
    }
    let eval = |t: f64| -> Option<Candidate> {
        let support: Vec<f64> = s.iter().map(|v| v + t).collect();
        let run = reweigh(x, &support, &cur.run.q, eps, cfg, tol_obj, mode)?;
        Some(Candidate { support, run })
    };
    let f = |t: f64| eval(t).map_or(f64::INFINITY, |c| c.run.j);
    let step = (hi - lo) / (SHIFT_GRID + 1) as f64;
    let grid: Vec<f64> = (1..=SHIFT_GRID).map(|k| lo + k as f64 * step).collect();
    let values: Vec<f64> = grid.iter().map(|&t| f(t)).collect();
    let k = (0..grid.len()).min_by(|&a, &b| values[a].total_cmp(&values[b]))?;
    if !values[k].is_finite() {
        return None;
    }
    let t = golden(&f, grid[k] - step, grid[k] + step, GOLDEN_ITERS);
    [eval(grid[k]), eval(t), eval(0.0)]
        .into_iter()
        .flatten()
        .min_by(|a, b| a.run.j.total_cmp(&b.run.j))
}

fn coordinate_search(
    x: &SignalSpec,
    start: Candidate,
    eps: NoiseBudget,
    cfg: &OptimizerConfig,
    tol_obj: f64,
    mode: ConstraintMode,
) -> Candidate {
    let xv = x.values();
    let reach = xv[xv.len() - 1] - xv[0] + eps.epsilon();
    let mut cur = start;
    let accept = |cur: &mut Candidate, b: Candidate| -> bool {
        if b.run.j < cur.run.j - tol_obj {
            let mut trace = cur.run.trace.clone();
            let next = trace.last().map_or(0, |t| t.0 + 1);
            trace.push((next, b.run.j));
            *cur = Candidate {
                run: PgdRun { trace, ..b.run },
                support: b.support,
            };
            true
        } else {
            false
        }
    };
    for _ in 0..SWEEPS {
        let mut improved = false;
        if let Some(b) = shift_move(x, &cur, eps, cfg, tol_obj, mode) {
            improved |= accept(&mut cur, b);
        }
        for idx in 0..cur.support.len() {
            let s = &cur.support;
            let n = s.len();
            let gap_tol = default_merge_tol(s.iter().copied()) * 10.0;
            let lo = if idx > 0 { s[idx - 1] } else { s[idx] - reach };
            let hi = if idx + 1 < n {
                s[idx + 1]
            } else {
                s[idx] + reach
            };
            let inside = |t: f64| t > lo + gap_tol && t < hi - gap_tol;
            let mut moves: Vec<f64> = Vec::new();
            for (l, &vl) in s.iter().enumerate() {
                if l == idx {
                    continue;
                }
                for &xi in xv {
                    for &xk in xv {
                        let t = vl + xk - xi;
                        if xi != xk && inside(t) && (t - s[idx]).abs() > gap_tol {
                            moves.push(t);
                        }
                    }
                }
            }
            moves.sort_by(|a, b| {
                (a - s[idx])
                    .abs()
                    .total_cmp(&(b - s[idx]).abs())
                    .then(a.total_cmp(b))
            });
            moves.dedup_by(|a, b| (*a - *b).abs() <= gap_tol);
            moves.truncate(MAX_COLLISION_MOVES);

            let eval = |t: f64| -> Option<Candidate> {
                let mut support = cur.support.clone();
                support[idx] = t;
                let run = reweigh(x, &support, &cur.run.q, eps, cfg, tol_obj, mode)?;
                Some(Candidate { support, run })
            };
            let mut best: Option<Candidate> = None;
            let mut consider = |c: Option<Candidate>| {
                if let Some(c) = c {
                    if best.as_ref().is_none_or(|b| c.run.j < b.run.j) {
                        best = Some(c);
                    }
                }
            };
            for t in moves {
                consider(eval(t));
            }
            let f = |t: f64| eval(t).map_or(f64::INFINITY, |c| c.run.j);
            consider(eval(golden(&f, lo + gap_tol, hi - gap_tol, GOLDEN_ITERS)));

            if let Some(b) = best {
                improved |= accept(&mut cur, b);
            }
        }
        if !improved {
            break;
        }
    }
    let mut order: Vec<usize> = (0..cur.support.len()).collect();
    order.sort_by(|&a, &b| cur.support[a].total_cmp(&cur.support[b]));
    Candidate {
        support: order.iter().map(|&k| cur.support[k]).collect(),
        run: PgdRun {
            q: order.iter().map(|&k| cur.run.q[k]).collect(),
            ..cur.run
        },
    }
}

fn delta_zero(x: &SignalSpec, eps: NoiseBudget, cfg: &OptimizerConfig) -> Result<SolveResult> {
    let noise = AtomicDistribution::point_mass(0.0);
    let report = objective_atomic(x, &noise)?;
    Ok(SolveResult {
        epsilon: eps.epsilon(),
        saturation_gap: 0.0,
        best_noise: noise.into(),
        trace: vec![(0, report.j)],
        report,
        restarts_used: cfg.restarts,
        converged: true,
    })
}

/// Search over supports and weights. Candidates are screened with one
/// weight start each (the weight problem is convex), the best few get all
/// restarts and a coordinate search over support points.
pub fn optimize_support_and_weights(
    x: &SignalSpec,
    eps: NoiseBudget,
    cfg: &OptimizerConfig,
) -> Result<SolveResult> {
    optimize_support_and_weights_with_mode(x, eps, cfg, ConstraintMode::Equality)
}

pub fn optimize_support_and_weights_with_mode(
    x: &SignalSpec,
    eps: NoiseBudget,
    cfg: &OptimizerConfig,
    mode: ConstraintMode,
) -> Result<SolveResult> {
    cfg.validate()?;
    if eps.epsilon() == 0.0 {
        return delta_zero(x, eps, cfg);
    }
    let tol_obj = cfg.tol_obj * x.variance();
    let supports = propose(x, eps, cfg.support_size, cfg.seed, cfg.restarts);

    let screened: Vec<Candidate> = supports
        .par_iter()
        .filter_map(|s| {
            solve_weights(x, s, eps, cfg, 1, mode)
                .ok()
                .map(|(support, run)| Candidate { support, run })
        })
        .collect();
    let mut ranked: Vec<usize> = (0..screened.len()).collect();
    ranked.sort_by(|&a, &b| {
        screened[a]
            .run
            .j
            .total_cmp(&screened[b].run.j)
            .then(a.cmp(&b))
    });
    // one representative per support shape, since shifts are searched anyway
    let mut shapes = std::collections::HashSet::new();
    ranked.retain(|&k| {
        let s = &screened[k].support;
        shapes.insert(
            s.iter()
                .map(|v| ((v - s[0]) * 1e9).round() as i64)
                .collect::<Vec<_>>(),
        )
    });

    let refined: Vec<Candidate> = ranked
        .iter()
        .take(REFINED_CANDIDATES)
        .collect::<Vec<_>>()
        .par_iter()
        .filter_map(|&&k| {
            let c = &screened[k];
            let (support, run) = solve_weights(x, &c.support, eps, cfg, cfg.restarts, mode).ok()?;
            let searched =
                coordinate_search(x, Candidate { support, run }, eps, cfg, tol_obj, mode);
            let (support, run) =
                prune(x, &searched.support, &searched.run, eps, cfg, tol_obj, mode);
            Some(Candidate { support, run })
        })
        .collect();

    // ties are roundoff-level only, so a drifted support cannot win on order
    let tie = 64.0 * f64::EPSILON * x.variance();
    let mut best: Option<Candidate> = None;
    let mut best_exact = f64::INFINITY;
    let mut running = Vec::new();
    for c in screened.iter().chain(&refined) {
        if best.as_ref().is_none_or(|b| better(c, b, tie)) {
            best_exact = objective_atomic(x, &to_distribution(&c.support, &c.run.q))?.j;
            best = Some(c.clone());
        }
        running.push((running.len(), best_exact));
    }
    let Some(best) = best else {
        return two_point_fallback(x, eps, cfg, mode);
    };
    let mut result = result_from_weights(x, &best.support, best.run.clone(), eps, cfg.restarts)?;
    result.trace = running;
    Ok(result)
}

/// Two-point `+-eps` noise, feasible for every positive budget.
fn two_point_fallback(
    x: &SignalSpec,
    eps: NoiseBudget,
    cfg: &OptimizerConfig,
    mode: ConstraintMode,
) -> Result<SolveResult> {
    let e = eps.epsilon();
    let (support, run) = solve_weights(x, &[-e, e], eps, cfg, 1, mode)?;
    result_from_weights(x, &support, run, eps, cfg.restarts)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dist::Noise;

    fn half() -> SignalSpec {
        SignalSpec::from_atoms(vec![(-0.5, 0.5), (0.5, 0.5)]).unwrap()
    }

    fn budget(e: f64) -> NoiseBudget {
        NoiseBudget::new(e).unwrap()
    }

    #[test]
    fn proposals_contain_difference_lattice() {
        let p = propose_support(&half(), budget(0.5), 5, 1);
        assert!(p.contains(&vec![-0.5, 0.5]));
    }

    #[test]
    fn proposals_feasible_and_deterministic() {
        let x = SignalSpec::from_atoms(vec![(-1.0, 0.25), (0.0, 0.5), (1.0, 0.25)]).unwrap();
        let p = propose_support(&x, budget(0.4), 2, 9);
        assert!(!p.is_empty());
        for s in &p {
            assert!(s.len() <= 2 && s.windows(2).all(|w| w[0] < w[1]));
            assert!(is_feasible(s, budget(0.4), ConstraintMode::Equality, 1e-10));
        }
        assert!(p.contains(&vec![-0.4, 0.4]));
        assert_eq!(p, propose_support(&x, budget(0.4), 2, 9));
    }

    #[test]
    fn search_reaches_witness_value() {
        let cfg = OptimizerConfig::default();
        let r = optimize_support_and_weights(&half(), budget(0.5), &cfg).unwrap();
        assert!(r.report.j <= 0.125 + cfg.tol_obj * 0.25, "{}", r.report.j);
        assert!(r.saturation_gap.abs() <= cfg.tol_feas);
        assert_eq!(r.trace.last().unwrap().1, r.report.j);
        let tol = cfg.tol_obj * 0.25;
        assert!(r.trace.iter().all(|t| r.report.j <= t.1 + tol));
    }

    #[test]
    fn zero_budget_gives_point_mass() {
        let r = optimize_support_and_weights(&half(), budget(0.0), &OptimizerConfig::default())
            .unwrap();
        assert_eq!(
            r.best_noise,
            Noise::Atomic(AtomicDistribution::point_mass(0.0))
        );
        assert_eq!(r.report.j, 0.25);
    }

    #[test]
    fn small_budget_uses_lattice() {
        // the three-point lattice gives var X - eps^2 / 2
        let r = optimize_support_and_weights(&half(), budget(0.1), &OptimizerConfig::default())
            .unwrap();
        assert!(r.report.j <= 0.245 + 1e-9, "{}", r.report.j);
    }

    #[test]
    fn tie_break_prefers_small_support() {
        let mk = |s: Vec<f64>, j: f64| Candidate {
            support: s,
            run: PgdRun {
                q: vec![],
                j,
                trace: vec![],
                converged: true,
            },
        };
        let a = mk(vec![-1.0, 1.0], 0.1);
        let b = mk(vec![-1.0, 0.0, 1.0], 0.1 - 1e-14);
        assert!(better(&a, &b, 1e-12));
        let c = mk(vec![-2.0, 1.0], 0.1);
        assert!(better(&c, &a, 1e-12));
        assert!(!better(&a, &a, 1e-12));
    }
}
