//! Weights on a fixed noise support.
//!
//! For a fixed support the merge classes of `x_i + v_j` are fixed and
//! `J(q) = sum_s N_s^2 / D_s - (sum_s N_s)^2` with `D_s`, `N_s` linear in `q`.
//! Each `N^2 / D` is jointly convex, so `J` is convex in `q` and projected
//! gradient descent finds the minimum over the moment-constrained simplex.

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use super::{ConstraintMode, OptimizerConfig, SolveResult};
use crate::condexp::objective_atomic;
use crate::dist::{AtomicDistribution, NoiseBudget, SignalSpec};
use crate::error::{Error, Result};
use crate::numeric::{default_merge_tol, ksum, merge_classes};

/// Contribution of support point `j` to one merge class:
/// `A = sum_i x_i p_i`, `B = sum_i p_i` over the atoms `i` that land there.
#[derive(Clone, Copy, Debug)]
struct Entry {
    j: usize,
    a: f64,
    b: f64,
}

#[derive(Clone, Debug)]
pub(crate) struct ClassMap {
    n_support: usize,
    classes: Vec<Vec<Entry>>,
    centers: Vec<f64>,
    x_mean: f64,
}

/// Merge tolerance used for `X + Y` when `Y` lives on `support`.
pub(crate) fn support_sum_tol(x: &SignalSpec, support: &[f64]) -> f64 {
    let max_x = x.values().iter().fold(0.0_f64, |m, v| m.max(v.abs()));
    let max_v = support.iter().fold(0.0_f64, |m, v| m.max(v.abs()));
    default_merge_tol([max_x + max_v])
        .max(x.dist().merge_tol())
        .max(default_merge_tol(support.iter().copied()))
}

impl ClassMap {
    pub(crate) fn new(x: &SignalSpec, support: &[f64]) -> Self {
        let mut pairs = Vec::with_capacity(x.values().len() * support.len());
        for (xv, p) in x.dist().atoms() {
            for (j, v) in support.iter().enumerate() {
                pairs.push((xv + v, (j, xv * p, p)));
            }
        }
        let ranges = merge_classes(&mut pairs, support_sum_tol(x, support));
        let centers = ranges.iter().map(|r| pairs[r.start].0).collect();
        let classes = ranges
            .into_iter()
            .map(|r| {
                let mut entries: Vec<Entry> = Vec::new();
                let mut members: Vec<_> = pairs[r].iter().map(|p| p.1).collect();
                members.sort_by_key(|m| m.0);
                for (j, a, b) in members {
                    match entries.last_mut() {
                        Some(e) if e.j == j => {
                            e.a += a;
                            e.b += b;
                        }
                        _ => entries.push(Entry { j, a, b }),
                    }
                }
                entries
            })
            .collect();
        Self {
            n_support: support.len(),
            classes,
            centers,
            x_mean: ksum(x.dist().atoms().map(|(v, p)| v * p)),
        }
    }

    pub(crate) fn objective(&self, q: &[f64]) -> f64 {
        let mut total_n = 0.0;
        let mut acc = 0.0;
        for class in &self.classes {
            let (mut n, mut d) = (0.0, 0.0);
            for e in class {
                n += e.a * q[e.j];
                d += e.b * q[e.j];
            }
            total_n += n;
            if d > 0.0 {
                acc += n * n / d;
            }
        }
        acc - total_n * total_n
    }

    /// Gradient of [`Self::objective`]. Classes with `D_s = 0` contribute
    /// their one-sided directional derivative `A^2 / B` per coordinate; the
    /// flag reports whether any such class was met.
    pub(crate) fn gradient(&self, q: &[f64]) -> (Vec<f64>, bool) {
        let mut grad = vec![0.0; self.n_support];
        let mut degenerate = false;
        let mut total_n = 0.0;
        for class in &self.classes {
            let (mut n, mut d) = (0.0, 0.0);
            for e in class {
                n += e.a * q[e.j];
                d += e.b * q[e.j];
            }
            total_n += n;
            if d > 0.0 {
                let g = n / d;
                for e in class {
                    grad[e.j] += 2.0 * g * e.a - g * g * e.b;
                }
            } else {
                degenerate = true;
                for e in class {
                    grad[e.j] += e.a * e.a / e.b;
                }
            }
        }
        for g in grad.iter_mut() {
            *g -= 2.0 * total_n * self.x_mean;
        }
        (grad, degenerate)
    }
}

/// Gradient of `J` with respect to the weights `q` on `support`, merge
/// classes held fixed.
pub fn weight_gradient(x: &SignalSpec, support: &[f64], q: &[f64]) -> Result<Vec<f64>> {
    if support.len() != q.len() || support.is_empty() {
        return Err(Error::InvalidDistribution(format!(
            "{} support points but {} weights",
            support.len(),
            q.len()
        )));
    }
    let map = ClassMap::new(x, support);
    let (grad, degenerate) = map.gradient(q);
    if degenerate {
        let k = map
            .classes
            .iter()
            .position(|c| c.iter().all(|e| q[e.j] * e.b == 0.0))
            .expect("degenerate class exists");
        return Err(Error::DegenerateClass(map.centers[k]));
    }
    Ok(grad)
}

/// Exact moment-set feasibility: `(0, eps^2)` must lie in the convex hull of
/// the points `(v, v^2)`. Returns the reachable range of `E[Y^2]` at zero
/// mean, or `None` if zero mean is unreachable.
pub(crate) fn second_moment_range(support: &[f64]) -> Option<(f64, f64)> {
    let lo = support.iter().cloned().fold(f64::INFINITY, f64::min);
    let hi = support.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    if lo > 0.0 || hi < 0.0 {
        return None;
    }
    let below = support
        .iter()
        .cloned()
        .filter(|&v| v <= 0.0)
        .fold(f64::NEG_INFINITY, f64::max);
    let above = support
        .iter()
        .cloned()
        .filter(|&v| v >= 0.0)
        .fold(f64::INFINITY, f64::min);
    Some((-below * above, -lo * hi))
}

pub(crate) fn is_feasible(
    support: &[f64],
    eps: NoiseBudget,
    mode: ConstraintMode,
    tol: f64,
) -> bool {
    let e2 = eps.eps2();
    match second_moment_range(support) {
        None => false,
        Some((lo, hi)) => match mode {
            ConstraintMode::Equality => lo <= e2 + tol && e2 <= hi + tol,
            ConstraintMode::Inequality => lo <= e2 + tol,
        },
    }
}

/// Euclidean projection onto `{q >= 0, A q = b}` with rows `1, v, v^2`
/// (the last row only when saturating), solved exactly by semismooth Newton
/// on the dual `min_l 1/2 |max(0, z + A^T l)|^2 - b^T l`.
pub(crate) struct MomentProjector {
    rows: [Vec<f64>; 3],
    scale: f64,
    e2: f64,
    tol: f64,
}

impl MomentProjector {
    pub(crate) fn new(support: &[f64], eps: NoiseBudget, tol_feas: f64) -> Self {
        let scale = match support.iter().fold(0.0_f64, |m, v| m.max(v.abs())) {
            0.0 => 1.0,
            s => s,
        };
        let u: Vec<f64> = support.iter().map(|v| v / scale).collect();
        Self {
            rows: [
                vec![1.0; u.len()],
                u.clone(),
                u.iter().map(|t| t * t).collect(),
            ],
            scale,
            e2: eps.eps2(),
            tol: tol_feas,
        }
    }

    pub(crate) fn project(&self, z: &[f64], mode: ConstraintMode) -> Option<Vec<f64>> {
        match mode {
            ConstraintMode::Equality => self.solve(z, 3),
            ConstraintMode::Inequality => {
                let q = self.solve(z, 2)?;
                if self.second_moment(&q) <= self.e2 + self.tol {
                    Some(q)
                } else {
                    self.solve(z, 3)
                }
            }
        }
    }

    pub(crate) fn second_moment(&self, q: &[f64]) -> f64 {
        self.scale * self.scale * ksum(q.iter().zip(&self.rows[2]).map(|(a, b)| a * b))
    }

    fn residual(&self, q: &[f64], m: usize) -> Vec<f64> {
        let b = [1.0, 0.0, self.e2 / (self.scale * self.scale)];
        (0..m)
            .map(|r| ksum(q.iter().zip(&self.rows[r]).map(|(a, c)| a * c)) - b[r])
            .collect()
    }

    fn primal(&self, z: &[f64], lambda: &[f64]) -> Vec<f64> {
        z.iter()
            .enumerate()
            .map(|(k, zk)| {
                let w = zk
                    + lambda
                        .iter()
                        .enumerate()
                        .map(|(r, l)| l * self.rows[r][k])
                        .sum::<f64>();
                w.max(0.0)
            })
            .collect()
    }

    fn dual_value(&self, z: &[f64], lambda: &[f64], m: usize) -> f64 {
        let b = [1.0, 0.0, self.e2 / (self.scale * self.scale)];
        let q = self.primal(z, lambda);
        0.5 * ksum(q.iter().map(|t| t * t)) - (0..m).map(|r| b[r] * lambda[r]).sum::<f64>()
    }

    fn solve(&self, z: &[f64], m: usize) -> Option<Vec<f64>> {
        let s2 = self.scale * self.scale;
        let tol = [
            self.tol * 1e-2,
            self.tol * 1e-2 / self.scale.max(1.0),
            self.tol * 1e-2 / s2.max(1.0),
        ];
        let mut lambda = vec![0.0; m];
        for _ in 0..200 {
            let q = self.primal(z, &lambda);
            let f = self.residual(&q, m);
            if f.iter().zip(tol).all(|(r, t)| r.abs() <= t) {
                return Some(q);
            }
            let active: Vec<usize> = (0..z.len()).filter(|&k| q[k] > 0.0).collect();
            let mut h = DMatrix::<f64>::zeros(m, m);
            for r in 0..m {
                for c in 0..m {
                    h[(r, c)] = active
                        .iter()
                        .map(|&k| self.rows[r][k] * self.rows[c][k])
                        .sum();
                }
            }
            let mu = 1e-14 * (1.0 + h.trace());
            for r in 0..m {
                h[(r, r)] += mu;
            }
            let fv = DVector::from_column_slice(&f);
            let d = match h.clone().cholesky() {
                Some(ch) => -ch.solve(&fv),
                None => -(h.pseudo_inverse(1e-15).ok()? * &fv),
            };
            let slope = fv.dot(&d);
            let phi0 = self.dual_value(z, &lambda, m);
            let mut t = 1.0;
            loop {
                let trial: Vec<f64> = lambda
                    .iter()
                    .zip(d.iter())
                    .map(|(l, dl)| l + t * dl)
                    .collect();
                if self.dual_value(z, &trial, m) <= phi0 + 1e-4 * t * slope || t < 1e-12 {
                    lambda = trial;
                    break;
                }
                t *= 0.5;
            }
        }
        let q = self.primal(z, &lambda);
        let f = self.residual(&q, m);
        f.iter()
            .zip(tol)
            .all(|(r, t)| r.abs() <= 100.0 * t)
            .then_some(q)
    }
}

/// Random weights with zero mean and `E[Y^2]` equal to `target`: a mixture
/// of zero-mean two-point laws, some below and some above the target.
pub(crate) fn random_feasible(support: &[f64], target: f64, rng: &mut ChaCha8Rng) -> Vec<f64> {
    let n = support.len();
    let mut laws: Vec<(Vec<(usize, f64)>, f64)> = Vec::new();
    for (a_idx, &a) in support.iter().enumerate() {
        if a == 0.0 {
            laws.push((vec![(a_idx, 1.0)], 0.0));
        }
        if a >= 0.0 {
            continue;
        }
        for (b_idx, &b) in support.iter().enumerate() {
            if b > 0.0 {
                laws.push((vec![(a_idx, b / (b - a)), (b_idx, -a / (b - a))], -a * b));
            }
        }
    }
    let (low, high): (Vec<_>, Vec<_>) = laws.into_iter().partition(|l| l.1 <= target);
    let mix = |group: &[(Vec<(usize, f64)>, f64)], rng: &mut ChaCha8Rng| -> (Vec<f64>, f64) {
        let w: Vec<f64> = group
            .iter()
            .map(|_| -rng.random::<f64>().max(1e-300).ln())
            .collect();
        let total: f64 = w.iter().sum();
        let mut q = vec![0.0; n];
        let mut m2 = 0.0;
        for (law, wk) in group.iter().zip(&w) {
            for &(k, p) in &law.0 {
                q[k] += wk / total * p;
            }
            m2 += wk / total * law.1;
        }
        (q, m2)
    };
    match (low.is_empty(), high.is_empty()) {
        (false, false) => {
            let (ql, ml) = mix(&low, rng);
            let (qh, mh) = mix(&high, rng);
            let t = if mh > ml {
                (mh - target) / (mh - ml)
            } else {
                0.5
            };
            ql.iter()
                .zip(&qh)
                .map(|(a, b)| t * a + (1.0 - t) * b)
                .collect()
        }
        (false, true) => mix(&low, rng).0,
        (true, false) => mix(&high, rng).0,
        (true, true) => vec![1.0 / n as f64; n],
    }
}

#[derive(Clone, Debug)]
pub(crate) struct PgdRun {
    pub q: Vec<f64>,
    pub j: f64,
    pub trace: Vec<(usize, f64)>,
    pub converged: bool,
}

/// Projected gradient descent with Armijo backtracking. Only steps that
/// lower `J` are taken, so the trace is non-increasing.
pub(crate) fn pgd(
    map: &ClassMap,
    proj: &MomentProjector,
    q0: &[f64],
    cfg: &OptimizerConfig,
    tol_obj: f64,
    mode: ConstraintMode,
) -> Option<PgdRun> {
    let mut q = proj.project(q0, mode)?;
    let mut j = map.objective(&q);
    let mut trace = vec![(0, j)];
    let mut step = cfg.step_init;
    let mut converged = false;
    for it in 1..=cfg.max_iters {
        let (g, _) = map.gradient(&q);
        let mut accepted = None;
        while step > 1e-14 {
            let z: Vec<f64> = q.iter().zip(&g).map(|(a, b)| a - step * b).collect();
            if let Some(qn) = proj.project(&z, mode) {
                let jn = map.objective(&qn);
                let lin: f64 = g
                    .iter()
                    .zip(qn.iter().zip(&q))
                    .map(|(gk, (a, b))| gk * (a - b))
                    .sum();
                let dist2: f64 = qn.iter().zip(&q).map(|(a, b)| (a - b) * (a - b)).sum();
                if jn <= j + lin + dist2 / (2.0 * step) && jn <= j {
                    accepted = Some((qn, jn, dist2));
                    break;
                }
            }
            step *= 0.5;
        }
        let Some((qn, jn, dist2)) = accepted else {
            converged = true;
            break;
        };
        let improvement = j - jn;
        q = qn;
        j = jn;
        trace.push((it, j));
        if improvement < tol_obj || dist2 < 1e-30 {
            converged = true;
            break;
        }
        step = (step * 2.0).min(1e6);
    }
    Some(PgdRun {
        q,
        j,
        trace,
        converged,
    })
}

/// Drops weights below `q_min` and re-solves on the reduced support if that
/// keeps feasibility and does not raise `J` beyond `tol_obj`.
pub(crate) fn prune(
    x: &SignalSpec,
    support: &[f64],
    run: &PgdRun,
    eps: NoiseBudget,
    cfg: &OptimizerConfig,
    tol_obj: f64,
    mode: ConstraintMode,
) -> (Vec<f64>, PgdRun) {
    let keep: Vec<usize> = (0..support.len())
        .filter(|&k| run.q[k] >= cfg.q_min)
        .collect();
    let nonzero: Vec<usize> = (0..support.len()).filter(|&k| run.q[k] > 0.0).collect();
    let try_subset = |idx: &[usize]| -> Option<(Vec<f64>, PgdRun)> {
        let sub: Vec<f64> = idx.iter().map(|&k| support[k]).collect();
        if !is_feasible(&sub, eps, mode, cfg.tol_feas) {
            return None;
        }
        let q0: Vec<f64> = idx.iter().map(|&k| run.q[k]).collect();
        let map = ClassMap::new(x, &sub);
        let proj = MomentProjector::new(&sub, eps, cfg.tol_feas);
        let r = pgd(&map, &proj, &q0, cfg, tol_obj, mode)?;
        Some((sub, r))
    };
    if keep.len() < nonzero.len() && !keep.is_empty() {
        if let Some((sub, r)) = try_subset(&keep) {
            if r.j <= run.j + tol_obj {
                return (
                    sub,
                    PgdRun {
                        trace: run.trace.clone(),
                        ..r
                    },
                );
            }
        }
    }
    if nonzero.len() < support.len() {
        let sub: Vec<f64> = nonzero.iter().map(|&k| support[k]).collect();
        let q: Vec<f64> = nonzero.iter().map(|&k| run.q[k]).collect();
        return (sub, PgdRun { q, ..run.clone() });
    }
    (support.to_vec(), run.clone())
}

pub(crate) fn to_distribution(support: &[f64], q: &[f64]) -> AtomicDistribution {
    let total = ksum(q.iter().copied());
    let atoms = support
        .iter()
        .zip(q)
        .filter(|(_, &w)| w > 0.0)
        .map(|(&v, &w)| (v, w / total))
        .collect();
    AtomicDistribution::merge_unchecked(atoms, default_merge_tol(support.iter().copied()))
}

fn validate_support(support: &[f64]) -> Result<Vec<f64>> {
    if support.is_empty() || support.iter().any(|v| !v.is_finite()) {
        return Err(Error::InvalidDistribution(
            "support must be finite and non-empty".into(),
        ));
    }
    let mut s = support.to_vec();
    s.sort_by(f64::total_cmp);
    let tol = default_merge_tol(s.iter().copied());
    if s.windows(2).any(|w| w[1] - w[0] <= tol) {
        return Err(Error::InvalidDistribution(
            "support points must be distinct".into(),
        ));
    }
    Ok(s)
}

/// Best weights on a fixed support from `restarts` random feasible starts.
pub(crate) fn solve_weights(
    x: &SignalSpec,
    support: &[f64],
    eps: NoiseBudget,
    cfg: &OptimizerConfig,
    restarts: usize,
    mode: ConstraintMode,
) -> Result<(Vec<f64>, PgdRun)> {
    let support = validate_support(support)?;
    if !is_feasible(&support, eps, mode, cfg.tol_feas) {
        return Err(Error::InfeasibleSupport(eps.epsilon()));
    }
    let tol_obj = cfg.tol_obj * x.variance();
    let map = ClassMap::new(x, &support);
    let proj = MomentProjector::new(&support, eps, cfg.tol_feas);
    let (lo, hi) = second_moment_range(&support).expect("feasible");
    let runs: Vec<Option<PgdRun>> = (0..restarts)
        .into_par_iter()
        .map(|r| {
            let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed.wrapping_add(r as u64));
            let target = match mode {
                ConstraintMode::Equality => eps.eps2(),
                ConstraintMode::Inequality => {
                    lo + rng.random::<f64>() * (eps.eps2().min(hi) - lo).max(0.0)
                }
            };
            let q0 = random_feasible(&support, target, &mut rng);
            pgd(&map, &proj, &q0, cfg, tol_obj, mode)
        })
        .collect();
    let best = runs
        .into_iter()
        .flatten()
        .reduce(|a, b| if b.j < a.j - tol_obj { b } else { a })
        .ok_or(Error::InfeasibleSupport(eps.epsilon()))?;
    Ok(prune(x, &support, &best, eps, cfg, tol_obj, mode))
}

pub(crate) fn result_from_weights(
    x: &SignalSpec,
    support: &[f64],
    run: PgdRun,
    eps: NoiseBudget,
    restarts: usize,
) -> Result<SolveResult> {
    let noise = to_distribution(support, &run.q);
    let report = objective_atomic(x, &noise)?;
    Ok(SolveResult {
        epsilon: eps.epsilon(),
        saturation_gap: eps.eps2() - report.noise_second_moment,
        best_noise: noise.into(),
        report,
        restarts_used: restarts,
        converged: run.converged,
        trace: run.trace,
    })
}

/// Projected-gradient minimisation of `J` over weights on `support` subject
/// to `sum q = 1`, `sum q v = 0`, `sum q v^2 = eps^2`.
pub fn optimize_weights(
    x: &SignalSpec,
    support: &[f64],
    eps: NoiseBudget,
    cfg: &OptimizerConfig,
) -> Result<SolveResult> {
    optimize_weights_with_mode(x, support, eps, cfg, ConstraintMode::Equality)
}

pub fn optimize_weights_with_mode(
    x: &SignalSpec,
    support: &[f64],
    eps: NoiseBudget,
    cfg: &OptimizerConfig,
    mode: ConstraintMode,
) -> Result<SolveResult> {
    cfg.validate()?;
    let (sub, run) = solve_weights(x, support, eps, cfg, cfg.restarts, mode)?;
    result_from_weights(x, &sub, run, eps, cfg.restarts)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sig(a: &[(f64, f64)]) -> SignalSpec {
        SignalSpec::from_atoms(a.to_vec()).unwrap()
    }

    fn half() -> SignalSpec {
        sig(&[(-0.5, 0.5), (0.5, 0.5)])
    }

    fn budget(e: f64) -> NoiseBudget {
        NoiseBudget::new(e).unwrap()
    }

    #[test]
    fn class_map_matches_exact_engine() {
        let x = sig(&[(-1.0, 0.2), (0.0, 0.5), (1.0, 0.3)]);
        let support = [-1.0, -0.5, 0.0, 1.0];
        let q = [0.1, 0.2, 0.3, 0.4];
        let map = ClassMap::new(&x, &support);
        let y = AtomicDistribution::new(support.iter().cloned().zip(q).collect()).unwrap();
        let exact = objective_atomic(&x, &y).unwrap().j;
        assert!((map.objective(&q) - exact).abs() < 1e-14);
    }

    #[test]
    fn gradient_flat_without_collisions() {
        // J = var X * sum q, so the gradient is var X in every coordinate and
        // vanishes along the simplex
        let x = half();
        let support = [-0.3, 0.2 * std::f64::consts::SQRT_2];
        let g = weight_gradient(&x, &support, &[0.6, 0.4]).unwrap();
        assert!(g.iter().all(|v| (v - 0.25).abs() < 1e-15), "{g:?}");
        let mean = g.iter().sum::<f64>() / 2.0;
        assert!(g.iter().all(|v| (v - mean).abs() < 1e-15));
    }

    #[test]
    fn gradient_is_symmetric_under_reflection() {
        let x = sig(&[(-1.0, 0.25), (0.0, 0.5), (1.0, 0.25)]);
        let support = [-1.0, -0.5, 0.0, 0.5, 1.0];
        let q = [0.1, 0.2, 0.4, 0.2, 0.1];
        let g = weight_gradient(&x, &support, &q).unwrap();
        for k in 0..5 {
            assert!((g[k] - g[4 - k]).abs() < 1e-9);
        }
    }

    #[test]
    fn degenerate_class_is_reported() {
        let x = half();
        assert!(matches!(
            weight_gradient(&x, &[-0.5, 0.5, 3.0], &[0.5, 0.5, 0.0]),
            Err(Error::DegenerateClass(_))
        ));
    }

    #[test]
    fn moment_range_examples() {
        assert_eq!(second_moment_range(&[-0.5, 0.5]), Some((0.25, 0.25)));
        assert_eq!(second_moment_range(&[-1.0, 0.0, 2.0]), Some((0.0, 2.0)));
        assert_eq!(second_moment_range(&[0.5, 1.0]), None);
        assert!(!is_feasible(
            &[-0.5, 0.5],
            budget(0.3),
            ConstraintMode::Equality,
            1e-10
        ));
        assert!(is_feasible(
            &[-0.5, 0.5],
            budget(0.7),
            ConstraintMode::Inequality,
            1e-10
        ));
    }

    #[test]
    fn projection_lands_on_constraints_and_is_nearest() {
        let support = [-1.0, -0.4, 0.0, 0.3, 1.2];
        let eps = budget(0.5);
        let proj = MomentProjector::new(&support, eps, 1e-10);
        let z = [0.3, -0.1, 0.5, 0.2, 0.4];
        let q = proj.project(&z, ConstraintMode::Equality).unwrap();
        assert!(q.iter().all(|&v| v >= 0.0));
        assert!((ksum(q.iter().copied()) - 1.0).abs() < 1e-11);
        assert!(ksum(q.iter().zip(&support).map(|(a, b)| a * b)).abs() < 1e-11);
        assert!((proj.second_moment(&q) - 0.25).abs() < 1e-11);
        // any other feasible point is at least as far from z
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let d0: f64 = q.iter().zip(&z).map(|(a, b)| (a - b) * (a - b)).sum();
        for _ in 0..200 {
            let other = proj
                .project(
                    &random_feasible(&support, 0.25, &mut rng),
                    ConstraintMode::Equality,
                )
                .unwrap();
            let d: f64 = other.iter().zip(&z).map(|(a, b)| (a - b) * (a - b)).sum();
            assert!(d >= d0 - 1e-12);
        }
    }

    #[test]
    fn random_init_meets_moments() {
        let support = [-1.0, -0.5, 0.0, 0.5, 1.5];
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..50 {
            let q = random_feasible(&support, 0.3, &mut rng);
            assert!((q.iter().sum::<f64>() - 1.0).abs() < 1e-12);
            assert!(
                q.iter()
                    .zip(&support)
                    .map(|(a, b)| a * b)
                    .sum::<f64>()
                    .abs()
                    < 1e-12
            );
            assert!(
                (q.iter().zip(&support).map(|(a, b)| a * b * b).sum::<f64>() - 0.3).abs() < 1e-12
            );
        }
    }

    #[test]
    fn forced_weights_on_two_points() {
        let r = optimize_weights(
            &half(),
            &[-0.5, 0.5],
            budget(0.5),
            &OptimizerConfig::default(),
        )
        .unwrap();
        assert!((r.report.j - 0.125).abs() < 1e-12);
        let Noise::Atomic(d) = &r.best_noise else {
            panic!()
        };
        assert_eq!(d.values(), &[-0.5, 0.5]);
        assert!(d.masses().iter().all(|m| (m - 0.5).abs() < 1e-12));
    }

    #[test]
    fn zero_budget_on_origin() {
        let r =
            optimize_weights(&half(), &[0.0], budget(0.0), &OptimizerConfig::default()).unwrap();
        assert_eq!(r.report.j, 0.25);
        let r = optimize_weights(
            &half(),
            &[-1.0, 0.0, 1.0],
            budget(0.0),
            &OptimizerConfig::default(),
        )
        .unwrap();
        assert!((r.report.j - 0.25).abs() < 1e-12);
    }

    #[test]
    fn lattice_optimum_matches_convex_program() {
        // values from an independent convex solver
        let x = half();
        let cfg = OptimizerConfig::default();
        for (e, want) in [(0.1, 0.245), (0.3, 0.205), (0.5, 0.125)] {
            let r = optimize_weights(&x, &[-0.5, 0.0, 0.5], budget(e), &cfg).unwrap();
            assert!((r.report.j - want).abs() < 1e-9, "eps {e}: {}", r.report.j);
            assert!(r.saturation_gap.abs() <= cfg.tol_feas);
        }
    }

    #[test]
    fn infeasible_support_is_rejected() {
        let r = optimize_weights(
            &half(),
            &[-0.5, 0.5],
            budget(0.3),
            &OptimizerConfig::default(),
        );
        assert_eq!(r.unwrap_err(), Error::InfeasibleSupport(0.3));
        let r = optimize_weights(
            &half(),
            &[0.5, 1.0],
            budget(0.3),
            &OptimizerConfig::default(),
        );
        assert_eq!(r.unwrap_err(), Error::InfeasibleSupport(0.3));
    }

    #[test]
    fn descent_never_exceeds_start() {
        let x = sig(&[(-1.0, 0.3), (0.0, 0.3), (2.0, 0.4)]);
        let support = [-1.5, -1.0, -0.5, 0.0, 0.5, 1.0, 2.0];
        let eps = budget(0.6);
        let cfg = OptimizerConfig::default();
        let map = ClassMap::new(&x, &support);
        let proj = MomentProjector::new(&support, eps, cfg.tol_feas);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..20 {
            let q0 = proj
                .project(
                    &random_feasible(&support, 0.36, &mut rng),
                    ConstraintMode::Equality,
                )
                .unwrap();
            let start = map.objective(&q0);
            let run = pgd(&map, &proj, &q0, &cfg, 1e-12, ConstraintMode::Equality).unwrap();
            assert!(run.j <= start);
            assert!(run.trace.windows(2).all(|w| w[1].1 <= w[0].1));
        }
    }

    use crate::dist::Noise;
}
