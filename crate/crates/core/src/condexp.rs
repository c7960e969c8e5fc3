//! Posterior mean `g(s) = E[X | X + Y = s]` and the objective
//! `J(Y) = var E[X | X + Y]`.
//!
//! Atomic noise is handled exactly by enumerating the merge classes of the
//! sum law. Gaussian-mixture noise goes through composite Gauss–Legendre
//! quadrature; the reported error bound is
//! `max x^2 * (mass of S outside the domain) + |J_n - J_2n| + rounding floor`.

use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::dist::{sum_merge_tol, AtomicDistribution, DensityNoise, Noise, SignalSpec};
use crate::error::{Error, Result};
use crate::numeric::{ksum, merge_classes, KahanSum};
use crate::quad::{build_grid, expand_nodes, sum_components, QuadratureConfig, SumComponent};

/// Tolerance on `|E[E[X|S]]|`, which must vanish for a centred signal.
const MEAN_CONSISTENCY_TOL: f64 = 1e-9;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PosteriorKind {
    Atomic,
    Gridded,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PosteriorPoint {
    pub s: f64,
    /// `P(S = s)` for atomic noise, quadrature weight times density of `S`
    /// for gridded noise.
    pub weight: f64,
    pub g: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PosteriorMean {
    pub kind: PosteriorKind,
    pub points: Vec<PosteriorPoint>,
    pub g_min: f64,
    pub g_max: f64,
}

impl PosteriorMean {
    fn from_points(kind: PosteriorKind, points: Vec<PosteriorPoint>) -> Self {
        let (g_min, g_max) = points
            .iter()
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), p| {
                (lo.min(p.g), hi.max(p.g))
            });
        Self {
            kind,
            points,
            g_min,
            g_max,
        }
    }

    pub fn total_weight(&self) -> f64 {
        ksum(self.points.iter().map(|p| p.weight))
    }

    /// `E[g(S)]`; zero for a centred signal.
    pub fn mean(&self) -> f64 {
        ksum(self.points.iter().map(|p| p.weight * p.g))
    }

    pub fn second_moment(&self) -> f64 {
        ksum(self.points.iter().map(|p| p.weight * p.g * p.g))
    }

    pub fn variance(&self) -> f64 {
        let m = self.mean();
        self.second_moment() - m * m
    }

    /// Posterior mean with every `g` negated. Only useful as a deliberately
    /// broken engine output.
    pub fn negated(&self) -> Self {
        let points = self
            .points
            .iter()
            .map(|p| PosteriorPoint { g: -p.g, ..*p })
            .collect();
        Self::from_points(self.kind, points)
    }

    /// CSV with header `s,weight,g`.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["s", "weight", "g"])?;
        for p in &self.points {
            w.write_record([p.s.to_string(), p.weight.to_string(), p.g.to_string()])?;
        }
        w.flush()?;
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    ExactAtomic,
    Quadrature,
    Grid,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ObjectiveReport {
    #[serde(rename = "J")]
    pub j: f64,
    pub var_x: f64,
    pub prediction_error: f64,
    pub noise_mean: f64,
    pub noise_second_moment: f64,
    pub method: Method,
    pub quadrature_error_bound: f64,
}

impl ObjectiveReport {
    fn new(j: f64, x: &SignalSpec, noise: (f64, f64), method: Method, bound: f64) -> Self {
        Self {
            j,
            var_x: x.variance(),
            prediction_error: x.variance() - j,
            noise_mean: noise.0,
            noise_second_moment: noise.1,
            method,
            quadrature_error_bound: bound,
        }
    }

    /// Report computed directly from a posterior mean, with no error bound.
    pub fn from_posterior(x: &SignalSpec, y: &Noise, post: &PosteriorMean) -> Self {
        Self::new(
            post.variance(),
            x,
            y.mean_and_second_moment(),
            Method::Grid,
            0.0,
        )
    }
}

/// Class-wise sums over the pairs `(x_i, y_j)` whose sums merge.
struct SumClass {
    s: f64,
    mass: f64,
    first: f64,
}

fn atomic_classes(x: &SignalSpec, y: &AtomicDistribution) -> Vec<SumClass> {
    let mut pairs = Vec::with_capacity(x.values().len() * y.len());
    for (xv, xm) in x.dist().atoms() {
        for (yv, ym) in y.atoms() {
            pairs.push((xv + yv, (xv, xm * ym)));
        }
    }
    let tol = sum_merge_tol(x.dist(), y);
    let classes = merge_classes(&mut pairs, tol);
    classes
        .into_iter()
        .map(|r| {
            let class = &pairs[r];
            let mass = ksum(class.iter().map(|c| c.1 .1));
            let first = ksum(class.iter().map(|c| c.1 .0 * c.1 .1));
            let s = if class.len() == 1 {
                class[0].0
            } else {
                ksum(class.iter().map(|c| c.0 * c.1 .1)) / mass
            };
            SumClass { s, mass, first }
        })
        .collect()
}

/// Exact posterior mean on the atoms of the sum law.
pub fn posterior_mean_atomic(x: &SignalSpec, y: &AtomicDistribution) -> PosteriorMean {
    let (lo, hi) = (x.dist().min_value(), x.dist().max_value());
    let points = atomic_classes(x, y)
        .into_iter()
        .map(|c| PosteriorPoint {
            s: c.s,
            weight: c.mass,
            g: (c.first / c.mass).clamp(lo, hi),
        })
        .collect();
    PosteriorMean::from_points(PosteriorKind::Atomic, points)
}

pub fn objective_atomic(x: &SignalSpec, y: &AtomicDistribution) -> Result<ObjectiveReport> {
    let post = posterior_mean_atomic(x, y);
    let mean = post.mean();
    if mean.abs() > MEAN_CONSISTENCY_TOL {
        return Err(Error::Consistency(format!("E[E[X|S]] = {mean}")));
    }
    let j = (post.second_moment() - mean * mean).max(0.0);
    let m = y.moments();
    Ok(ObjectiveReport::new(
        j,
        x,
        (m.mean, m.second_moment),
        Method::ExactAtomic,
        0.0,
    ))
}

/// Log of each component density term, grouped per signal atom:
/// `a_i(s) = p_i f_Y(s - x_i)` computed as `exp(log_a_i - shift)`.
struct DensityEvaluator<'a> {
    x_vals: &'a [f64],
    comps: Vec<SumComponent>,
    per_atom: usize,
    log_norm: Vec<f64>,
    lo: f64,
    hi: f64,
}

impl<'a> DensityEvaluator<'a> {
    fn new(x: &'a SignalSpec, y: &DensityNoise) -> Self {
        let comps = sum_components(x, y);
        let log_norm = comps
            .iter()
            .map(|c| c.weight.ln() - c.sd.ln() - 0.5 * (2.0 * std::f64::consts::PI).ln())
            .collect();
        Self {
            x_vals: x.values(),
            per_atom: y.components().len(),
            comps,
            log_norm,
            lo: x.dist().min_value(),
            hi: x.dist().max_value(),
        }
    }

    /// Returns `(d(s), g(s))`, computing `g` in a shifted scale so it stays
    /// defined where `d` underflows.
    #[inline]
    fn eval(&self, s: f64, scratch: &mut Vec<f64>) -> (f64, f64) {
        scratch.clear();
        let mut max_log = f64::NEG_INFINITY;
        for (c, ln) in self.comps.iter().zip(&self.log_norm) {
            let z = (s - c.center) / c.sd;
            let l = ln - 0.5 * z * z;
            max_log = max_log.max(l);
            scratch.push(l);
        }
        let mut num = 0.0;
        let mut den = 0.0;
        for (i, xv) in self.x_vals.iter().enumerate() {
            let mut a = 0.0;
            for l in &scratch[i * self.per_atom..(i + 1) * self.per_atom] {
                a += (l - max_log).exp();
            }
            num += xv * a;
            den += a;
        }
        let g = (num / den).clamp(self.lo, self.hi);
        (den * max_log.exp(), g)
    }

    /// `P(X = x_i | S = s)` for every atom.
    fn posterior_probs(&self, s: f64, scratch: &mut Vec<f64>, out: &mut Vec<f64>) {
        self.eval(s, scratch);
        let max_log = scratch.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        out.clear();
        for i in 0..self.x_vals.len() {
            let a: f64 = scratch[i * self.per_atom..(i + 1) * self.per_atom]
                .iter()
                .map(|l| (l - max_log).exp())
                .sum();
            out.push(a);
        }
        let total: f64 = out.iter().sum();
        out.iter_mut().for_each(|a| *a /= total);
    }
}

struct GridIntegrals {
    second: f64,
    mean: f64,
    dropped: f64,
}

fn integrate(eval: &DensityEvaluator, nodes: &[(f64, f64)]) -> GridIntegrals {
    let mut second = KahanSum::new();
    let mut mean = KahanSum::new();
    let mut dropped = 0.0;
    let mut scratch = Vec::with_capacity(eval.comps.len());
    for &(s, w) in nodes {
        let (d, g) = eval.eval(s, &mut scratch);
        if d == 0.0 {
            dropped += w * f64::MIN_POSITIVE;
            continue;
        }
        second.add(w * d * g * g);
        mean.add(w * d * g);
    }
    GridIntegrals {
        second: second.value(),
        mean: mean.value(),
        dropped,
    }
}

/// Posterior mean on the quadrature nodes of `quad`.
pub fn posterior_mean_density(
    x: &SignalSpec,
    y: &DensityNoise,
    quad: &QuadratureConfig,
) -> Result<PosteriorMean> {
    let eval = DensityEvaluator::new(x, y);
    let grid = build_grid(&eval.comps, quad)?;
    let nodes = expand_nodes(&grid.panels, quad.nodes_per_panel);
    let mut scratch = Vec::new();
    let points = nodes
        .into_iter()
        .filter_map(|(s, w)| {
            let (d, g) = eval.eval(s, &mut scratch);
            (d > 0.0).then_some(PosteriorPoint {
                s,
                weight: w * d,
                g,
            })
        })
        .collect();
    Ok(PosteriorMean::from_points(PosteriorKind::Gridded, points))
}

/// `P(X = x_i | S = s)` under Gaussian-mixture noise, for checks that need
/// the joint law rather than the posterior mean alone.
pub fn posterior_probabilities(x: &SignalSpec, y: &DensityNoise, s: f64) -> Vec<f64> {
    let eval = DensityEvaluator::new(x, y);
    let mut scratch = Vec::new();
    let mut out = Vec::new();
    eval.posterior_probs(s, &mut scratch, &mut out);
    out
}

/// Objective under Gaussian-mixture noise, with a certified-style error bound.
pub fn objective_density(
    x: &SignalSpec,
    y: &DensityNoise,
    quad: &QuadratureConfig,
) -> Result<ObjectiveReport> {
    let eval = DensityEvaluator::new(x, y);
    let grid = build_grid(&eval.comps, quad)?;
    let n = quad.nodes_per_panel;
    let coarse = integrate(&eval, &expand_nodes(&grid.panels, n));
    let fine = integrate(&eval, &expand_nodes(&grid.panels, 2 * n));
    let max_sq = x.max_sq();
    if coarse.mean.abs() > MEAN_CONSISTENCY_TOL + max_sq.sqrt() * grid.tail_mass {
        return Err(Error::Consistency(format!("E[E[X|S]] = {}", coarse.mean)));
    }
    let j_n = coarse.second - coarse.mean * coarse.mean;
    let j_2n = fine.second - fine.mean * fine.mean;
    let bound = max_sq * grid.tail_mass
        + (j_n - j_2n).abs()
        + 32.0 * f64::EPSILON * max_sq
        + max_sq * (coarse.dropped + fine.dropped);
    let j = j_n.max(0.0);
    Ok(ObjectiveReport::new(
        j,
        x,
        y.mixture_moments(),
        Method::Quadrature,
        bound,
    ))
}

/// Single-resolution objective without the refinement pass. Used inside
/// search loops where only comparisons matter.
pub(crate) fn objective_density_fast(
    x: &SignalSpec,
    y: &DensityNoise,
    quad: &QuadratureConfig,
) -> Result<f64> {
    let eval = DensityEvaluator::new(x, y);
    let grid = build_grid(&eval.comps, quad)?;
    let r = integrate(&eval, &expand_nodes(&grid.panels, quad.nodes_per_panel));
    Ok((r.second - r.mean * r.mean).max(0.0))
}

/// Noise `Y + Z` with `Z ~ N(0, sigma^2)` independent: one Gaussian
/// component per atom of `y`.
pub fn smooth_with_gaussian(y: &AtomicDistribution, sigma: f64) -> Result<DensityNoise> {
    if !(sigma > 0.0) {
        return Err(Error::NonPositiveSigma(sigma));
    }
    DensityNoise::new(y.atoms().map(|(v, m)| (v, sigma, m)).collect())
}

/// [`smooth_with_gaussian`] for either noise kind.
pub fn smooth_noise(y: &Noise, sigma: f64) -> Result<DensityNoise> {
    match y {
        Noise::Atomic(d) => smooth_with_gaussian(d, sigma),
        Noise::Mixture(d) => d.convolve_gaussian(sigma),
    }
}

/// Objective for either noise kind.
pub fn objective(x: &SignalSpec, y: &Noise, quad: &QuadratureConfig) -> Result<ObjectiveReport> {
    match y {
        Noise::Atomic(d) => objective_atomic(x, d),
        Noise::Mixture(d) => objective_density(x, d, quad),
    }
}

pub fn posterior_mean(x: &SignalSpec, y: &Noise, quad: &QuadratureConfig) -> Result<PosteriorMean> {
    match y {
        Noise::Atomic(d) => Ok(posterior_mean_atomic(x, d)),
        Noise::Mixture(d) => posterior_mean_density(x, d, quad),
    }
}

/// Source of posterior means and objectives. The exact engine is the
/// default; checks accept any engine so broken ones can be injected.
pub trait PosteriorEngine: Sync {
    fn posterior(
        &self,
        x: &SignalSpec,
        y: &Noise,
        quad: &QuadratureConfig,
    ) -> Result<PosteriorMean>;
    fn objective(
        &self,
        x: &SignalSpec,
        y: &Noise,
        quad: &QuadratureConfig,
    ) -> Result<ObjectiveReport>;
}

#[derive(Clone, Copy, Debug, Default)]
pub struct ExactEngine;

impl PosteriorEngine for ExactEngine {
    fn posterior(
        &self,
        x: &SignalSpec,
        y: &Noise,
        quad: &QuadratureConfig,
    ) -> Result<PosteriorMean> {
        posterior_mean(x, y, quad)
    }

    fn objective(
        &self,
        x: &SignalSpec,
        y: &Noise,
        quad: &QuadratureConfig,
    ) -> Result<ObjectiveReport> {
        objective(x, y, quad)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sig(a: &[(f64, f64)]) -> SignalSpec {
        SignalSpec::from_atoms(a.to_vec()).unwrap()
    }

    fn atoms(a: &[(f64, f64)]) -> AtomicDistribution {
        AtomicDistribution::new(a.to_vec()).unwrap()
    }

    const HALF: [(f64, f64); 2] = [(-0.5, 0.5), (0.5, 0.5)];

    #[test]
    fn posterior_atomic_examples() {
        let p = posterior_mean_atomic(&sig(&HALF), &atoms(&HALF));
        let got: Vec<_> = p.points.iter().map(|q| (q.s, q.weight, q.g)).collect();
        assert_eq!(
            got,
            vec![(-1.0, 0.25, -0.5), (0.0, 0.5, 0.0), (1.0, 0.25, 0.5)]
        );

        let p = posterior_mean_atomic(&sig(&HALF), &AtomicDistribution::point_mass(0.0));
        let got: Vec<_> = p.points.iter().map(|q| (q.s, q.weight, q.g)).collect();
        assert_eq!(got, vec![(-0.5, 0.5, -0.5), (0.5, 0.5, 0.5)]);

        let x = sig(&[(0.0, 0.5), (1.0, 0.5)]);
        let p = posterior_mean_atomic(&x, &atoms(&[(0.0, 0.5), (10.0, 0.5)]));
        assert_eq!(p.points.len(), 4);
        let gs: Vec<_> = p.points.iter().map(|q| q.g).collect();
        assert_eq!(gs, vec![-0.5, 0.5, -0.5, 0.5]);
    }

    #[test]
    fn objective_atomic_examples() {
        let r = objective_atomic(&sig(&HALF), &atoms(&HALF)).unwrap();
        assert_eq!((r.j, r.var_x, r.prediction_error), (0.125, 0.25, 0.125));
        assert_eq!(r.method, Method::ExactAtomic);
        let r = objective_atomic(&sig(&HALF), &AtomicDistribution::point_mass(0.0)).unwrap();
        assert_eq!((r.j, r.prediction_error), (0.25, 0.0));
        let one = [(-1.0, 0.5), (1.0, 0.5)];
        let r = objective_atomic(&sig(&one), &atoms(&one)).unwrap();
        assert_eq!((r.j, r.var_x), (0.5, 1.0));
    }

    #[test]
    fn density_posterior_is_tanh() {
        let x = sig(&[(-1.0, 0.5), (1.0, 0.5)]);
        for sd in [0.5_f64, 1.0, 2.0] {
            let y = DensityNoise::gaussian(0.0, sd).unwrap();
            let p = posterior_mean_density(&x, &y, &QuadratureConfig::default()).unwrap();
            for q in &p.points {
                // independent route: ratio of the two Gaussian terms
                let a = (-(q.s - 1.0).powi(2) / (2.0 * sd * sd)).exp();
                let b = (-(q.s + 1.0).powi(2) / (2.0 * sd * sd)).exp();
                let ratio = if a + b > 0.0 { (a - b) / (a + b) } else { q.g };
                let closed = (q.s / (sd * sd)).tanh();
                assert!(
                    (q.g - closed).abs() < 1e-12,
                    "s={} g={} tanh={}",
                    q.s,
                    q.g,
                    closed
                );
                assert!((ratio - closed).abs() < 1e-12);
                assert!(q.g.abs() <= 1.0);
            }
        }
    }

    #[test]
    fn density_posterior_is_odd_for_symmetric_inputs() {
        let x = sig(&[(-1.0, 0.3), (0.0, 0.4), (1.0, 0.3)]);
        let y = DensityNoise::new(vec![(-0.4, 0.3, 0.5), (0.4, 0.3, 0.5)]).unwrap();
        let p = posterior_mean_density(&x, &y, &QuadratureConfig::default()).unwrap();
        let n = p.points.len();
        for k in 0..n {
            let (a, b) = (p.points[k], p.points[n - 1 - k]);
            assert!((a.s + b.s).abs() < 1e-9);
            assert!((a.g + b.g).abs() < 1e-9);
        }
    }

    #[test]
    fn density_objective_small_noise_limit() {
        let x = sig(&[(-1.0, 0.5), (1.0, 0.5)]);
        let r = objective_density(
            &x,
            &DensityNoise::gaussian(0.0, 1e-4).unwrap(),
            &QuadratureConfig::default(),
        )
        .unwrap();
        let exact = objective_atomic(&x, &AtomicDistribution::point_mass(0.0)).unwrap();
        assert!((r.j - exact.j).abs() < 1e-3);
        assert!((r.j - 1.0).abs() < 1e-3);
    }

    #[test]
    fn mixture_representation_invariance() {
        let x = sig(&[(-1.0, 0.5), (1.0, 0.5)]);
        let q = QuadratureConfig::default();
        let a =
            objective_density(&x, &DensityNoise::new(vec![(0.0, 1.0, 1.0)]).unwrap(), &q).unwrap();
        let b = objective_density(
            &x,
            &DensityNoise::new(vec![(0.0, 1.0, 0.5), (0.0, 1.0, 0.5)]).unwrap(),
            &q,
        )
        .unwrap();
        assert!((a.j - b.j).abs() < 1e-12);
    }

    #[test]
    fn smoothing_examples() {
        let d = smooth_with_gaussian(&AtomicDistribution::point_mass(0.0), 1.0).unwrap();
        assert_eq!(d, DensityNoise::gaussian(0.0, 1.0).unwrap());
        let d = smooth_with_gaussian(&atoms(&HALF), 0.1).unwrap();
        let comps: Vec<_> = d
            .components()
            .iter()
            .map(|c| (c.mean, c.sd, c.weight))
            .collect();
        assert_eq!(comps, vec![(-0.5, 0.1, 0.5), (0.5, 0.1, 0.5)]);
        assert!((d.mixture_moments().1 - 0.26).abs() < 1e-15);
        assert_eq!(
            smooth_with_gaussian(&atoms(&HALF), 0.0),
            Err(Error::NonPositiveSigma(0.0))
        );
        assert_eq!(
            smooth_with_gaussian(&atoms(&HALF), -1.0),
            Err(Error::NonPositiveSigma(-1.0))
        );
    }

    #[test]
    fn csv_export() {
        let p = posterior_mean_atomic(&sig(&HALF), &atoms(&HALF));
        let mut buf = Vec::new();
        p.write_csv(&mut buf).unwrap();
        assert_eq!(
            String::from_utf8(buf).unwrap(),
            "s,weight,g\n-1,0.25,-0.5\n0,0.5,0\n1,0.25,0.5\n"
        );
    }

    #[test]
    fn report_field_names() {
        let r = objective_atomic(&sig(&HALF), &atoms(&HALF)).unwrap();
        let v: serde_json::Value = serde_json::to_value(&r).unwrap();
        let mut keys: Vec<_> = v.as_object().unwrap().keys().cloned().collect();
        keys.sort();
        assert_eq!(
            keys,
            [
                "J",
                "method",
                "noise_mean",
                "noise_second_moment",
                "prediction_error",
                "quadrature_error_bound",
                "var_x"
            ]
        );
        assert_eq!(v["method"], "exact_atomic");
    }
}
