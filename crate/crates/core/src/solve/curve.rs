//! The curve `eps -> L_hat(eps)`.

use std::io::Write;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::mixture::optimize_gaussian_mixture;
use super::support::optimize_support_and_weights;
use super::{OptimizerConfig, SolveResult};
use crate::condexp::{objective, smooth_noise, ObjectiveReport};
use crate::dist::{Noise, NoiseBudget, SignalSpec};
use crate::error::{Error, Result};
use crate::quad::QuadratureConfig;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum WitnessSource {
    Atomic,
    MixtureK1,
    MixtureK2,
    /// Previous witness plus an independent Gaussian filling the budget.
    GaussianTopUp,
    /// Previous witness kept unchanged because nothing beat it.
    Propagated,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SolveSummary {
    pub source: WitnessSource,
    pub report: ObjectiveReport,
    pub saturation_gap: f64,
    pub converged: bool,
    pub restarts_used: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LCurvePoint {
    pub epsilon: f64,
    #[serde(rename = "L_hat")]
    pub l_hat: f64,
    pub witness: Noise,
    pub diagnostics: SolveSummary,
}

impl LCurvePoint {
    fn from_result(source: WitnessSource, r: SolveResult) -> Self {
        Self {
            epsilon: r.epsilon,
            l_hat: r.report.j,
            witness: r.best_noise,
            diagnostics: SolveSummary {
                source,
                report: r.report,
                saturation_gap: r.saturation_gap,
                converged: r.converged,
                restarts_used: r.restarts_used,
            },
        }
    }
}

/// Parses `a:b:step` into `a, a + step, ...` up to `b` inclusive.
pub fn eps_grid(spec: &str) -> Result<Vec<f64>> {
    let bad = || Error::BadGrid(spec.to_string());
    let parts: Vec<f64> = spec
        .split(':')
        .map(|p| p.trim().parse::<f64>().map_err(|_| bad()))
        .collect::<Result<_>>()?;
    let [a, b, step] = parts[..] else {
        return Err(bad());
    };
    if !(a.is_finite() && b.is_finite() && step > 0.0 && a >= 0.0 && b >= a) {
        return Err(bad());
    }
    let n = ((b - a) / step + 1e-9).floor() as usize;
    if n > 100_000 {
        return Err(bad());
    }
    Ok((0..=n)
        .map(|k| ((a + k as f64 * step) * 1e12).round() / 1e12)
        .collect())
}

fn check_grid(grid: &[f64]) -> Result<()> {
    if grid.is_empty() {
        return Err(Error::BadGrid("empty grid".into()));
    }
    if !(grid[0] >= 0.0) || grid.iter().any(|e| !e.is_finite()) {
        return Err(Error::BadGrid(
            "epsilons must be finite and non-negative".into(),
        ));
    }
    if grid.windows(2).any(|w| w[1] <= w[0]) {
        return Err(Error::BadGrid("grid must be strictly increasing".into()));
    }
    Ok(())
}

fn independent_searches(
    x: &SignalSpec,
    e: f64,
    cfg: &OptimizerConfig,
    quad: &QuadratureConfig,
) -> Result<Vec<LCurvePoint>> {
    let eps = NoiseBudget::new(e)?;
    let mut out = vec![LCurvePoint::from_result(
        WitnessSource::Atomic,
        optimize_support_and_weights(x, eps, cfg)?,
    )];
    if e > 0.0 {
        for (k, source) in [(1, WitnessSource::MixtureK1), (2, WitnessSource::MixtureK2)] {
            match optimize_gaussian_mixture(x, eps, k, cfg, quad) {
                Ok(r) => out.push(LCurvePoint::from_result(source, r)),
                Err(Error::QuadratureBudgetExceeded { .. }) => {}
                Err(e) => return Err(e),
            }
        }
    }
    Ok(out)
}

/// Previous witness plus `N(0, eps^2 - E[Y_prev^2])`.
fn top_up(
    x: &SignalSpec,
    prev: &LCurvePoint,
    e: f64,
    quad: &QuadratureConfig,
) -> Result<Option<LCurvePoint>> {
    let (_, m2) = prev.witness.mean_and_second_moment();
    let var = e * e - m2;
    if !(var > 0.0) {
        return Ok(None);
    }
    let noise: Noise = smooth_noise(&prev.witness, var.sqrt())?.into();
    let report = match objective(x, &noise, quad) {
        Ok(r) => r,
        Err(Error::QuadratureBudgetExceeded { .. }) => return Ok(None),
        Err(e) => return Err(e),
    };
    Ok(Some(LCurvePoint {
        epsilon: e,
        l_hat: report.j,
        witness: noise,
        diagnostics: SolveSummary {
            source: WitnessSource::GaussianTopUp,
            saturation_gap: e * e - report.noise_second_moment,
            report,
            converged: true,
            restarts_used: 0,
        },
    }))
}

/// `L_hat` on `grid`: the best of the atomic search, one- and two-component
/// mixtures and the Gaussian top-up of the previous witness. When nothing
/// beats the previous value the previous witness is carried over, so the
/// curve never increases.
pub fn trace_l_curve(
    x: &SignalSpec,
    grid: &[f64],
    cfg: &OptimizerConfig,
    quad: &QuadratureConfig,
) -> Result<Vec<LCurvePoint>> {
    check_grid(grid)?;
    cfg.validate()?;
    quad.validate()?;
    let searched: Vec<Vec<LCurvePoint>> = grid
        .par_iter()
        .map(|&e| independent_searches(x, e, cfg, quad))
        .collect::<Result<_>>()?;
    let mut curve: Vec<LCurvePoint> = Vec::with_capacity(grid.len());
    for (&e, mut candidates) in grid.iter().zip(searched) {
        if let Some(prev) = curve.last() {
            if let Some(t) = top_up(x, prev, e, quad)? {
                candidates.push(t);
            }
        }
        let best = candidates
            .into_iter()
            .reduce(|a, b| if b.l_hat < a.l_hat { b } else { a })
            .expect("atomic search always yields a point");
        let point = match curve.last() {
            Some(prev) if best.l_hat > prev.l_hat => LCurvePoint {
                epsilon: e,
                diagnostics: SolveSummary {
                    source: WitnessSource::Propagated,
                    saturation_gap: e * e - prev.diagnostics.report.noise_second_moment,
                    ..prev.diagnostics.clone()
                },
                ..prev.clone()
            },
            _ => best,
        };
        curve.push(point);
    }
    Ok(curve)
}

/// CSV with header `epsilon,L_hat,witness_kind,witness_params`.
pub fn write_curve_csv<W: Write>(curve: &[LCurvePoint], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["epsilon", "L_hat", "witness_kind", "witness_params"])?;
    for p in curve {
        w.write_record([
            p.epsilon.to_string(),
            p.l_hat.to_string(),
            p.witness.kind().to_string(),
            p.witness.params_json(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

/// Whitespace-separated `epsilon L_hat` columns for gnuplot.
pub fn write_curve_dat<W: Write>(curve: &[LCurvePoint], mut out: W) -> Result<()> {
    writeln!(out, "# epsilon L_hat")?;
    for p in curve {
        writeln!(out, "{} {}", p.epsilon, p.l_hat)?;
    }
    Ok(())
}
