//! Composite Gauss–Legendre quadrature over the law of `S = X + Y` when `Y`
//! is a Gaussian mixture.
//!
//! `S` is itself a Gaussian mixture with one component per (signal atom,
//! noise component) pair. The integration domain is the union of
//! `center ± span * sd` windows of those components, cut into panels of width
//! `panel_width * sd` of the component that contributed the breakpoint, so
//! narrow components get fine panels without refining the whole line. The
//! probability mass of `S` outside the domain is computed exactly from normal
//! tail functions and reported.

use serde::{Deserialize, Serialize};
use statrs::function::erf::erfc;

use crate::dist::{DensityNoise, SignalSpec};
use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct QuadratureConfig {
    /// Gauss–Legendre nodes per panel.
    pub nodes_per_panel: usize,
    /// Panel width in units of the contributing component's sd.
    pub panel_width: f64,
    /// Initial half-width of each component window, in sds.
    pub span: f64,
    /// Maximum probability of `S` left outside the domain.
    pub tail_tol: f64,
    pub max_nodes: usize,
}

impl Default for QuadratureConfig {
    fn default() -> Self {
        Self {
            nodes_per_panel: 32,
            panel_width: 0.5,
            span: 8.0,
            tail_tol: 1e-12,
            max_nodes: 200_000,
        }
    }
}

impl QuadratureConfig {
    pub fn with_nodes(mut self, n: usize) -> Self {
        self.nodes_per_panel = n;
        self
    }

    pub fn validate(&self) -> Result<()> {
        let ok = self.nodes_per_panel >= 2
            && self.panel_width > 0.0
            && self.span > 0.0
            && self.tail_tol > 0.0
            && self.max_nodes > 0;
        if ok {
            Ok(())
        } else {
            Err(Error::InvalidQuadrature(format!("{self:?}")))
        }
    }
}

/// Nodes and weights of the `n`-point Gauss–Legendre rule on `[-1, 1]`.
pub fn gauss_legendre(n: usize) -> (Vec<f64>, Vec<f64>) {
    let mut nodes = vec![0.0; n];
    let mut weights = vec![0.0; n];
    let m = n.div_ceil(2);
    for i in 0..m {
        let mut z = (std::f64::consts::PI * (i as f64 + 0.75) / (n as f64 + 0.5)).cos();
        let mut dp = 0.0;
        for _ in 0..100 {
            let (p, d) = legendre_with_derivative(n, z);
            dp = d;
            let dz = p / d;
            z -= dz;
            if dz.abs() < 1e-16 {
                break;
            }
        }
        let (_, d) = legendre_with_derivative(n, z);
        dp = if d != 0.0 { d } else { dp };
        let w = 2.0 / ((1.0 - z * z) * dp * dp);
        nodes[i] = -z;
        nodes[n - 1 - i] = z;
        weights[i] = w;
        weights[n - 1 - i] = w;
    }
    (nodes, weights)
}

fn legendre_with_derivative(n: usize, z: f64) -> (f64, f64) {
    let mut p0 = 1.0;
    let mut p1 = z;
    if n == 0 {
        return (1.0, 0.0);
    }
    for k in 2..=n {
        let kf = k as f64;
        let p2 = ((2.0 * kf - 1.0) * z * p1 - (kf - 1.0) * p0) / kf;
        p0 = p1;
        p1 = p2;
    }
    let d = n as f64 * (z * p1 - p0) / (z * z - 1.0);
    (p1, d)
}

/// Standard normal upper tail `P(Z > z)`.
pub fn normal_sf(z: f64) -> f64 {
    0.5 * erfc(z / std::f64::consts::SQRT_2)
}

/// Standard normal `P(Z <= z)`.
pub fn normal_cdf(z: f64) -> f64 {
    0.5 * erfc(-z / std::f64::consts::SQRT_2)
}

/// `P(u < Z <= v)` without cancellation in either tail.
fn normal_interval(u: f64, v: f64) -> f64 {
    if u >= 0.0 {
        (normal_sf(u) - normal_sf(v)).max(0.0)
    } else {
        (normal_cdf(v) - normal_cdf(u)).max(0.0)
    }
}

#[derive(Clone, Copy, Debug)]
pub(crate) struct SumComponent {
    pub center: f64,
    pub sd: f64,
    pub weight: f64,
}

/// Panels `[a, b]` covering the integration domain and the exact mass of `S`
/// outside it.
#[derive(Clone, Debug)]
pub(crate) struct PanelGrid {
    pub panels: Vec<(f64, f64)>,
    pub tail_mass: f64,
}

pub(crate) fn sum_components(x: &SignalSpec, y: &DensityNoise) -> Vec<SumComponent> {
    let mut out = Vec::with_capacity(x.values().len() * y.components().len());
    for (xv, xm) in x.dist().atoms() {
        for c in y.components() {
            out.push(SumComponent {
                center: xv + c.mean,
                sd: c.sd,
                weight: xm * c.weight,
            });
        }
    }
    out
}

fn union_of(mut intervals: Vec<(f64, f64)>) -> Vec<(f64, f64)> {
    intervals.sort_by(|a, b| a.0.total_cmp(&b.0));
    let mut out: Vec<(f64, f64)> = Vec::new();
    for (a, b) in intervals {
        match out.last_mut() {
            Some(last) if a <= last.1 => last.1 = last.1.max(b),
            _ => out.push((a, b)),
        }
    }
    out
}

fn outside_mass(comps: &[SumComponent], union: &[(f64, f64)]) -> f64 {
    let mut total = 0.0;
    for c in comps {
        let z = |t: f64| (t - c.center) / c.sd;
        let mut out = normal_cdf(z(union[0].0));
        for w in union.windows(2) {
            out += normal_interval(z(w[0].1), z(w[1].0));
        }
        out += normal_sf(z(union[union.len() - 1].1));
        total += c.weight * out;
    }
    total
}

pub(crate) fn build_grid(comps: &[SumComponent], cfg: &QuadratureConfig) -> Result<PanelGrid> {
    cfg.validate()?;
    let mut span = cfg.span;
    let (union, tail_mass) = loop {
        let union = union_of(
            comps
                .iter()
                .map(|c| (c.center - span * c.sd, c.center + span * c.sd))
                .collect(),
        );
        let tail = outside_mass(comps, &union);
        if tail <= cfg.tail_tol || span >= 40.0 {
            break (union, tail);
        }
        span += 1.0;
    };

    let steps = (2.0 * span / cfg.panel_width).ceil() as usize;
    let mut breaks: Vec<f64> = Vec::with_capacity(comps.len() * (steps + 1) + 2 * union.len());
    for c in comps {
        let lo = c.center - span * c.sd;
        let h = 2.0 * span * c.sd / steps as f64;
        breaks.extend((0..=steps).map(|k| lo + k as f64 * h));
    }
    for &(a, b) in &union {
        breaks.push(a);
        breaks.push(b);
    }
    breaks.sort_by(f64::total_cmp);
    breaks.dedup_by(|a, b| (*a - *b).abs() <= 1e-13 * (1.0 + b.abs()));

    let mut panels = Vec::with_capacity(breaks.len());
    let mut u = 0;
    for w in breaks.windows(2) {
        let (a, b) = (w[0], w[1]);
        let mid = 0.5 * (a + b);
        while u < union.len() && union[u].1 < mid {
            u += 1;
        }
        if u < union.len() && union[u].0 <= mid && mid <= union[u].1 {
            panels.push((a, b));
        }
    }
    let needed = panels.len() * cfg.nodes_per_panel;
    if needed > cfg.max_nodes {
        return Err(Error::QuadratureBudgetExceeded {
            needed,
            budget: cfg.max_nodes,
        });
    }
    Ok(PanelGrid { panels, tail_mass })
}

/// Expands panels into `(node, weight)` pairs for an `n`-point rule.
pub(crate) fn expand_nodes(panels: &[(f64, f64)], n: usize) -> Vec<(f64, f64)> {
    let (t, w) = gauss_legendre(n);
    let mut out = Vec::with_capacity(panels.len() * n);
    for &(a, b) in panels {
        let half = 0.5 * (b - a);
        let mid = 0.5 * (a + b);
        for k in 0..n {
            out.push((mid + half * t[k], half * w[k]));
        }
    }
    out
}
