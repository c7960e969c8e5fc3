//! Numerical checks of the structural results about `L(X, eps)` and
//! `var E[X | X + Y]`, aggregated into pass/fail reports.
//!
//! Margins follow one sign convention: positive means satisfied with room.

use std::fmt::Write as _;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::condexp::{
    posterior_probabilities, smooth_noise, ExactEngine, ObjectiveReport, PosteriorEngine,
    PosteriorMean,
};
use crate::dist::{AtomicDistribution, DensityNoise, Noise, NoiseBudget, SignalSpec};
use crate::error::{Error, Result};
use crate::mc::estimate_objective;
use crate::numeric::ksum;
use crate::quad::QuadratureConfig;
use crate::solve::{
    optimize_support_and_weights, optimize_support_and_weights_with_mode, trace_l_curve,
    ConstraintMode, LCurvePoint, OptimizerConfig,
};

/// Relative shortfall allowed when checking `E[Y^2] = eps^2`.
pub const SATURATION_REL_TOL: f64 = 1e-6;
/// Slack below `J_limit` tolerated in the tail of a weak sequence, relative
/// to `var X`.
pub const SEMICONTINUITY_REL_TOL: f64 = 1e-6;
/// Right-continuity threshold on the smallest gap, relative to `var X`.
pub const RIGHT_CONTINUITY_REL_GAP: f64 = 0.02;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TheoremId {
    Saturation,
    StrictDecrease,
    RightContinuity,
    GaussianSmoothing,
    Semicontinuity,
    DataProcessing,
    ShiftInvariance,
}

impl TheoremId {
    pub const ALL: [TheoremId; 7] = [
        TheoremId::Saturation,
        TheoremId::StrictDecrease,
        TheoremId::RightContinuity,
        TheoremId::GaussianSmoothing,
        TheoremId::Semicontinuity,
        TheoremId::DataProcessing,
        TheoremId::ShiftInvariance,
    ];

    pub fn name(self) -> &'static str {
        match self {
            TheoremId::Saturation => "saturation",
            TheoremId::StrictDecrease => "strict_decrease",
            TheoremId::RightContinuity => "right_continuity",
            TheoremId::GaussianSmoothing => "gaussian_smoothing",
            TheoremId::Semicontinuity => "semicontinuity",
            TheoremId::DataProcessing => "data_processing",
            TheoremId::ShiftInvariance => "shift_invariance",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InstanceRecord {
    pub label: String,
    pub passed: bool,
    pub margin: f64,
    pub detail: String,
}

impl InstanceRecord {
    fn new(label: impl Into<String>, margin: f64, passed: bool, detail: String) -> Self {
        Self {
            label: label.into(),
            passed: passed && margin.is_finite(),
            margin,
            detail,
        }
    }

    fn failed(label: impl Into<String>, err: &Error) -> Self {
        Self {
            label: label.into(),
            passed: false,
            margin: f64::MIN,
            detail: format!("error: {err}"),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TheoremReport {
    pub theorem_id: TheoremId,
    pub instances: usize,
    pub passes: usize,
    /// Smallest margin over instances; 0 when there are none.
    pub worst_margin: f64,
    pub details: Vec<InstanceRecord>,
}

impl TheoremReport {
    pub fn from_records(theorem_id: TheoremId, details: Vec<InstanceRecord>) -> Self {
        let worst = details
            .iter()
            .map(|r| r.margin)
            .fold(f64::INFINITY, f64::min);
        Self {
            theorem_id,
            instances: details.len(),
            passes: details.iter().filter(|r| r.passed).count(),
            worst_margin: if details.is_empty() { 0.0 } else { worst },
            details,
        }
    }

    pub fn passed(&self) -> bool {
        self.passes == self.instances
    }

    fn merge(id: TheoremId, parts: Vec<TheoremReport>) -> Self {
        Self::from_records(id, parts.into_iter().flat_map(|r| r.details).collect())
    }

    fn prefixed(mut self, prefix: &str) -> Self {
        for d in &mut self.details {
            d.label = format!("{prefix}/{}", d.label);
        }
        self
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct VerifyConfig {
    pub optimizer: OptimizerConfig,
    pub quadrature: QuadratureConfig,
    pub mc_samples: usize,
    pub mc_bins: usize,
}

impl Default for VerifyConfig {
    fn default() -> Self {
        Self {
            optimizer: OptimizerConfig::default(),
            quadrature: QuadratureConfig::default(),
            mc_samples: 200_000,
            mc_bins: 64,
        }
    }
}

fn budget(e: f64) -> Result<NoiseBudget> {
    NoiseBudget::new(e)
}

/// Posterior of `X` given `S = s` under either noise kind. For atomic noise
/// the pairs within the sum merge tolerance of `s` count.
fn conditional_probs(x: &SignalSpec, y: &Noise, s: f64) -> Vec<f64> {
    match y {
        Noise::Mixture(d) => posterior_probabilities(x, d, s),
        Noise::Atomic(d) => {
            let tol = crate::dist::sum_merge_tol(x.dist(), d);
            let mut w: Vec<f64> = x
                .dist()
                .atoms()
                .map(|(xv, p)| {
                    p * ksum(
                        d.atoms()
                            .filter(|(yv, _)| (xv + yv - s).abs() <= tol)
                            .map(|a| a.1),
                    )
                })
                .collect();
            let total: f64 = w.iter().sum();
            if total > 0.0 {
                w.iter_mut().for_each(|v| *v /= total);
            }
            w
        }
    }
}

/// `E[(X - g(S))^2]` for the posterior mean `g` an engine produced.
pub fn prediction_error_of(x: &SignalSpec, y: &Noise, post: &PosteriorMean) -> f64 {
    ksum(post.points.iter().map(|pt| {
        let probs = conditional_probs(x, y, pt.s);
        pt.weight
            * ksum(
                x.values()
                    .iter()
                    .zip(&probs)
                    .map(|(xv, p)| p * (xv - pt.g) * (xv - pt.g)),
            )
    }))
}

/// Engine that negates the posterior mean. The objective is unchanged, so
/// only checks that use `g` itself can catch it.
#[derive(Clone, Copy, Debug, Default)]
pub struct SignFlippedEngine;

impl PosteriorEngine for SignFlippedEngine {
    fn posterior(
        &self,
        x: &SignalSpec,
        y: &Noise,
        quad: &QuadratureConfig,
    ) -> Result<PosteriorMean> {
        Ok(ExactEngine.posterior(x, y, quad)?.negated())
    }

    fn objective(
        &self,
        x: &SignalSpec,
        y: &Noise,
        quad: &QuadratureConfig,
    ) -> Result<ObjectiveReport> {
        let post = self.posterior(x, y, quad)?;
        let exact = ExactEngine.objective(x, y, quad)?;
        Ok(ObjectiveReport {
            j: post.variance(),
            ..exact
        })
    }
}

/// For each budget, the inequality-constrained search must use the whole
/// budget, and topping up a deliberately interior noise with a Gaussian must
/// lower `J` by more than the quadrature error.
pub fn check_saturation(
    x: &SignalSpec,
    eps_list: &[f64],
    cfg: &VerifyConfig,
    engine: &dyn PosteriorEngine,
) -> TheoremReport {
    let mut records = Vec::new();
    for &e in eps_list {
        let label = format!("eps={e}");
        let run = || -> Result<Vec<InstanceRecord>> {
            let eps = budget(e)?;
            let mut out = Vec::new();
            let r = optimize_support_and_weights_with_mode(
                x,
                eps,
                &cfg.optimizer,
                ConstraintMode::Inequality,
            )?;
            let used = r.report.noise_second_moment;
            let margin = (used - eps.eps2() * (1.0 - SATURATION_REL_TOL)) / eps.eps2();
            out.push(InstanceRecord::new(
                format!("{label}/inequality_solver"),
                margin,
                margin >= 0.0,
                format!("E[Y^2]={used} eps^2={}", eps.eps2()),
            ));

            let half = budget(e / std::f64::consts::SQRT_2)?;
            let two_point =
                AtomicDistribution::new(vec![(-half.epsilon(), 0.5), (half.epsilon(), 0.5)])?;
            let witness = optimize_support_and_weights(x, half, &cfg.optimizer)?.best_noise;
            for (name, interior) in [
                ("two_point", Noise::Atomic(two_point)),
                ("witness", witness),
            ] {
                out.push(top_up_record(
                    x,
                    &interior,
                    (eps.eps2() - interior.mean_and_second_moment().1).sqrt(),
                    &format!("{label}/top_up_{name}"),
                    cfg,
                    engine,
                )?);
            }
            Ok(out)
        };
        match run() {
            Ok(r) => records.extend(r),
            Err(err) => records.push(InstanceRecord::failed(label, &err)),
        }
    }
    TheoremReport::from_records(TheoremId::Saturation, records)
}

fn top_up_record(
    x: &SignalSpec,
    y: &Noise,
    sigma: f64,
    label: &str,
    cfg: &VerifyConfig,
    engine: &dyn PosteriorEngine,
) -> Result<InstanceRecord> {
    let before = engine.objective(x, y, &cfg.quadrature)?;
    let smoothed: Noise = smooth_noise(y, sigma)?.into();
    let after = engine.objective(x, &smoothed, &cfg.quadrature)?;
    let bound = before.quadrature_error_bound + after.quadrature_error_bound;
    let margin = before.j - after.j - bound;
    Ok(InstanceRecord::new(
        label,
        margin,
        margin > 0.0,
        format!("J={} J_smoothed={} bound={bound:.3e}", before.j, after.j),
    ))
}

/// Along a traced curve: `L_hat` never increases, and the previous witness
/// plus `N(0, eps2^2 - eps1^2)` lands strictly below the previous value.
pub fn check_monotonicity(x: &SignalSpec, grid: &[f64], cfg: &VerifyConfig) -> TheoremReport {
    if grid.len() < 2 {
        return TheoremReport::from_records(TheoremId::StrictDecrease, vec![]);
    }
    match trace_l_curve(x, grid, &cfg.optimizer, &cfg.quadrature) {
        Ok(curve) => monotonicity_from_curve(x, &curve, cfg),
        Err(err) => TheoremReport::from_records(
            TheoremId::StrictDecrease,
            vec![InstanceRecord::failed("curve", &err)],
        ),
    }
}

pub fn monotonicity_from_curve(
    x: &SignalSpec,
    curve: &[LCurvePoint],
    cfg: &VerifyConfig,
) -> TheoremReport {
    let records = curve
        .windows(2)
        .map(|w| {
            let (a, b) = (&w[0], &w[1]);
            let label = format!("{}->{}", a.epsilon, b.epsilon);
            let sigma = (b.epsilon * b.epsilon - a.epsilon * a.epsilon).sqrt();
            let weak = a.l_hat - b.l_hat;
            let smoothed = smooth_noise(&a.witness, sigma)
                .and_then(|d| crate::condexp::objective(x, &d.into(), &cfg.quadrature));
            match smoothed {
                Ok(r) => {
                    let strict = a.l_hat
                        - a.diagnostics.report.quadrature_error_bound
                        - r.quadrature_error_bound
                        - r.j;
                    InstanceRecord::new(
                        label,
                        weak.min(strict),
                        weak >= 0.0 && strict > 0.0,
                        format!("L1={} L2={} J_witness={}", a.l_hat, b.l_hat, r.j),
                    )
                }
                Err(err) => InstanceRecord::failed(label, &err),
            }
        })
        .collect();
    TheoremReport::from_records(TheoremId::StrictDecrease, records)
}

/// Gaps `L_hat(eps0) - L_hat(eps0 + delta)` shrink with `delta`, and the
/// smallest one is below `max(0.02 var X, 5 tol_obj)`.
pub fn check_right_continuity(
    x: &SignalSpec,
    eps0: f64,
    deltas: &[f64],
    cfg: &VerifyConfig,
) -> TheoremReport {
    let mut grid: Vec<f64> = std::iter::once(eps0)
        .chain(deltas.iter().map(|d| eps0 + d))
        .collect();
    grid.sort_by(f64::total_cmp);
    grid.dedup();
    let curve = match trace_l_curve(x, &grid, &cfg.optimizer, &cfg.quadrature) {
        Ok(c) => c,
        Err(err) => {
            return TheoremReport::from_records(
                TheoremId::RightContinuity,
                vec![InstanceRecord::failed(format!("eps0={eps0}"), &err)],
            )
        }
    };
    right_continuity_from_curve(x, eps0, deltas, &curve, cfg)
}

pub fn right_continuity_gaps(eps0: f64, deltas: &[f64], curve: &[LCurvePoint]) -> Vec<f64> {
    let at = |e: f64| {
        curve
            .iter()
            .min_by(|a, b| (a.epsilon - e).abs().total_cmp(&(b.epsilon - e).abs()))
            .map(|p| p.l_hat)
            .unwrap_or(f64::NAN)
    };
    let base = at(eps0);
    deltas.iter().map(|d| base - at(eps0 + d)).collect()
}

pub fn right_continuity_from_curve(
    x: &SignalSpec,
    eps0: f64,
    deltas: &[f64],
    curve: &[LCurvePoint],
    cfg: &VerifyConfig,
) -> TheoremReport {
    let tol_obj = cfg.optimizer.tol_obj * x.variance();
    let noise = 5.0 * tol_obj;
    let gaps = right_continuity_gaps(eps0, deltas, curve);
    let mut records = Vec::new();
    for (k, w) in gaps.windows(2).enumerate() {
        let margin = w[0] + noise - w[1];
        records.push(InstanceRecord::new(
            format!("eps0={eps0}/delta {}->{}", deltas[k], deltas[k + 1]),
            margin,
            margin >= 0.0 && w[1] >= -noise,
            format!("gap {} -> {}", w[0], w[1]),
        ));
    }
    if let (Some(&last), Some(&d)) = (gaps.last(), deltas.last()) {
        let threshold = (RIGHT_CONTINUITY_REL_GAP * x.variance()).max(noise);
        let margin = threshold - last;
        records.push(InstanceRecord::new(
            format!("eps0={eps0}/final delta={d}"),
            margin,
            margin >= 0.0 && last >= -noise,
            format!("gap={last} threshold={threshold}"),
        ));
    }
    TheoremReport::from_records(TheoremId::RightContinuity, records)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SequenceKind {
    /// `Y_n` moves each atom `v` of the limit outward to `v + sign(v) / n`.
    AtomCollapse,
    /// `N(0, sigma^2)` restricted to a lattice of spacing `delta / n`, with
    /// `delta` the smallest gap between atoms of `X`.
    DiscretizedGaussian,
    /// Zero-mean two-point noise on `-sqrt(2) c / n` and `sqrt(3) c / n`,
    /// converging to the point mass at 0.
    VanishingPerturbation,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct WeakSequenceSpec {
    pub kind: SequenceKind,
    pub n_terms: usize,
    pub limit: Noise,
}

const VANISHING_SCALE: f64 = 0.1;
const LATTICE_SPAN: f64 = 8.0;

impl WeakSequenceSpec {
    /// The `n`-th term, `n >= 1`.
    pub fn term(&self, x: &SignalSpec, n: usize) -> Result<AtomicDistribution> {
        let nf = n as f64;
        match (&self.kind, &self.limit) {
            (SequenceKind::AtomCollapse, Noise::Atomic(d)) => {
                AtomicDistribution::new(d.atoms().map(|(v, m)| (v + v.signum() / nf, m)).collect())
            }
            (SequenceKind::VanishingPerturbation, Noise::Atomic(d))
                if d.len() == 1 && d.values()[0] == 0.0 =>
            {
                let a = std::f64::consts::SQRT_2 * VANISHING_SCALE / nf;
                let b = 3f64.sqrt() * VANISHING_SCALE / nf;
                AtomicDistribution::new(vec![(-a, b / (a + b)), (b, a / (a + b))])
            }
            (SequenceKind::DiscretizedGaussian, Noise::Mixture(d))
                if d.components().len() == 1 && d.components()[0].mean == 0.0 =>
            {
                let sigma = d.components()[0].sd;
                let h = x.atom_differences()[0] / nf;
                let k_max = (LATTICE_SPAN * sigma / h).floor() as i64;
                let raw: Vec<(f64, f64)> = (-k_max..=k_max)
                    .map(|k| {
                        let v = k as f64 * h;
                        (v, (-0.5 * (v / sigma).powi(2)).exp())
                    })
                    .collect();
                let total = ksum(raw.iter().map(|a| a.1));
                AtomicDistribution::new(raw.into_iter().map(|(v, w)| (v, w / total)).collect())
            }
            _ => Err(Error::InvalidSequence(format!(
                "{:?} does not fit a {} limit",
                self.kind,
                self.limit.kind()
            ))),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_terms < 2 {
            return Err(Error::InvalidSequence("need at least two terms".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SequenceValues {
    /// `J_n` for `n = 1..=n_terms`.
    pub j_n: Vec<f64>,
    pub j_limit: f64,
    pub limit_error_bound: f64,
    pub max_second_moment: f64,
}

impl SequenceValues {
    /// Minimum over the second half of the sequence, the finite stand-in
    /// for the liminf.
    pub fn tail_min(&self) -> f64 {
        let n = self.j_n.len();
        self.j_n[n / 2..]
            .iter()
            .cloned()
            .fold(f64::INFINITY, f64::min)
    }
}

pub fn sequence_values(
    x: &SignalSpec,
    seq: &WeakSequenceSpec,
    quad: &QuadratureConfig,
    engine: &dyn PosteriorEngine,
) -> Result<SequenceValues> {
    seq.validate()?;
    let mut j_n = Vec::with_capacity(seq.n_terms);
    let mut max_m2 = 0.0_f64;
    for n in 1..=seq.n_terms {
        let y: Noise = seq.term(x, n)?.into();
        max_m2 = max_m2.max(y.mean_and_second_moment().1);
        j_n.push(engine.objective(x, &y, quad)?.j);
    }
    let limit = engine.objective(x, &seq.limit, quad)?;
    Ok(SequenceValues {
        j_n,
        j_limit: limit.j,
        limit_error_bound: limit.quadrature_error_bound,
        max_second_moment: max_m2,
    })
}

/// `J(limit) <= liminf J_n`, with the liminf replaced by the tail minimum.
pub fn check_semicontinuity(
    x: &SignalSpec,
    seq: &WeakSequenceSpec,
    cfg: &VerifyConfig,
    engine: &dyn PosteriorEngine,
) -> TheoremReport {
    let label = format!("{:?}/n={}", seq.kind, seq.n_terms);
    let record = match sequence_values(x, seq, &cfg.quadrature, engine) {
        Ok(v) => {
            let tail = v.tail_min();
            let margin =
                tail - (v.j_limit - SEMICONTINUITY_REL_TOL * x.variance() - v.limit_error_bound);
            InstanceRecord::new(
                label,
                margin,
                margin >= 0.0,
                format!(
                    "tail_min={tail} J_limit={} J_last={} gap={}",
                    v.j_limit,
                    v.j_n.last().unwrap(),
                    tail - v.j_limit
                ),
            )
        }
        Err(err) => InstanceRecord::failed(label, &err),
    };
    TheoremReport::from_records(TheoremId::Semicontinuity, vec![record])
}

/// `J <= var X`, the binned Monte Carlo estimate sits below `J` within noise,
/// and the engine's `g` satisfies `E[(X - g)^2] = var X - J`.
pub fn check_data_processing(
    battery: &[(String, SignalSpec, Noise)],
    cfg: &VerifyConfig,
    engine: &dyn PosteriorEngine,
    seed: u64,
) -> TheoremReport {
    let records = battery
        .iter()
        .enumerate()
        .map(|(k, (label, x, y))| {
            let run = || -> Result<InstanceRecord> {
                let r = engine.objective(x, y, &cfg.quadrature)?;
                let post = engine.posterior(x, y, &cfg.quadrature)?;
                let var_x = x.variance();
                let bound = r.quadrature_error_bound;
                let jensen = var_x * (1.0 + 1e-12) + bound - r.j;
                let mc = estimate_objective(
                    x,
                    y,
                    cfg.mc_samples,
                    cfg.mc_bins,
                    seed.wrapping_add(k as u64),
                )?;
                let coarsening = r.j + bound + 3.0 * mc.std_error - mc.j_hat;
                let mse = prediction_error_of(x, y, &post);
                let pyth_tol = 1e-9 * var_x + 4.0 * bound;
                let pythagoras = pyth_tol - (mse - (var_x - r.j)).abs();
                let margin = jensen.min(coarsening).min(pythagoras);
                Ok(InstanceRecord::new(
                    label.clone(),
                    margin,
                    jensen >= 0.0 && coarsening >= 0.0 && pythagoras >= 0.0,
                    format!(
                        "J={} var_x={var_x} J_hat={}+-{} mse={mse}",
                        r.j, mc.j_hat, mc.std_error
                    ),
                ))
            };
            run().unwrap_or_else(|err| InstanceRecord::failed(label.clone(), &err))
        })
        .collect();
    TheoremReport::from_records(TheoremId::DataProcessing, records)
}

/// Adding independent Gaussian noise strictly lowers `J`.
pub fn check_gaussian_smoothing(
    x: &SignalSpec,
    noises: &[(String, Noise)],
    sigmas: &[f64],
    cfg: &VerifyConfig,
    engine: &dyn PosteriorEngine,
) -> TheoremReport {
    let mut records = Vec::new();
    for (name, y) in noises {
        for &s in sigmas {
            let label = format!("{name}/sigma={s}");
            records.push(
                top_up_record(x, y, s, &label, cfg, engine)
                    .unwrap_or_else(|err| InstanceRecord::failed(label, &err)),
            );
        }
    }
    TheoremReport::from_records(TheoremId::GaussianSmoothing, records)
}

fn shift_noise(y: &Noise, c: f64) -> Result<Noise> {
    Ok(match y {
        Noise::Atomic(d) => d.shift(c).into(),
        Noise::Mixture(d) => DensityNoise::new(
            d.components()
                .iter()
                .map(|g| (g.mean + c, g.sd, g.weight))
                .collect(),
        )?
        .into(),
    })
}

fn scale_noise(y: &Noise, a: f64) -> Result<Noise> {
    Ok(match y {
        Noise::Atomic(d) => d.scale(a).into(),
        Noise::Mixture(d) => DensityNoise::new(
            d.components()
                .iter()
                .map(|g| (g.mean * a, g.sd * a.abs(), g.weight))
                .collect(),
        )?
        .into(),
    })
}

/// `J` is unchanged by translating `Y` or the raw signal, and scales by
/// `a^2` when both are scaled by `a`.
pub fn check_shift_invariance(
    x: &SignalSpec,
    noises: &[(String, Noise)],
    cfg: &VerifyConfig,
    engine: &dyn PosteriorEngine,
) -> TheoremReport {
    let mut records = Vec::new();
    for (name, y) in noises {
        let run = || -> Result<Vec<InstanceRecord>> {
            let base = engine.objective(x, y, &cfg.quadrature)?;
            let tol = |r: &ObjectiveReport, scale: f64| {
                1e-12 * x.variance() * scale
                    + base.quadrature_error_bound * scale
                    + r.quadrature_error_bound
            };
            let mut out = Vec::new();
            for c in [0.37, -1.2] {
                let r = engine.objective(x, &shift_noise(y, c)?, &cfg.quadrature)?;
                let margin = tol(&r, 1.0) - (r.j - base.j).abs();
                out.push(InstanceRecord::new(
                    format!("{name}/noise_shift={c}"),
                    margin,
                    margin >= 0.0,
                    format!("J={} J_shifted={}", base.j, r.j),
                ));
                let moved = SignalSpec::new(x.dist().shift(c))?;
                let r = engine.objective(&moved, y, &cfg.quadrature)?;
                let margin = tol(&r, 1.0) - (r.j - base.j).abs();
                out.push(InstanceRecord::new(
                    format!("{name}/signal_shift={c}"),
                    margin,
                    margin >= 0.0,
                    format!("J={} J_shifted={}", base.j, r.j),
                ));
            }
            let a = 2.0;
            let r = engine.objective(&x.scale(a)?, &scale_noise(y, a)?, &cfg.quadrature)?;
            let margin = tol(&r, a * a) - (r.j - a * a * base.j).abs();
            out.push(InstanceRecord::new(
                format!("{name}/scale={a}"),
                margin,
                margin >= 0.0,
                format!("a^2 J={} J_scaled={}", a * a * base.j, r.j),
            ));
            Ok(out)
        };
        match run() {
            Ok(r) => records.extend(r),
            Err(err) => records.push(InstanceRecord::failed(name.clone(), &err)),
        }
    }
    TheoremReport::from_records(TheoremId::ShiftInvariance, records)
}

/// A named signal for the batteries.
#[derive(Clone, Debug)]
pub struct NamedSignal {
    pub name: String,
    pub signal: SignalSpec,
}

/// The standard battery: symmetric Bernoulli, asymmetric two-point, uniform
/// on 3 and 5 points, and an 8-point law with weights proportional to
/// `1 / (k + 1)`. All are centred on construction.
pub fn standard_signals() -> Vec<NamedSignal> {
    let zipf_total: f64 = (0..8).map(|k| 1.0 / (k as f64 + 1.0)).sum();
    let specs: Vec<(&str, Vec<(f64, f64)>)> = vec![
        ("bernoulli", vec![(-0.5, 0.5), (0.5, 0.5)]),
        ("asymmetric", vec![(0.0, 0.7), (1.0, 0.3)]),
        (
            "uniform3",
            (-1..=1).map(|k| (k as f64, 1.0 / 3.0)).collect(),
        ),
        ("uniform5", (-2..=2).map(|k| (k as f64, 0.2)).collect()),
        (
            "zipf8",
            (0..8)
                .map(|k| (k as f64, 1.0 / (k as f64 + 1.0) / zipf_total))
                .collect(),
        ),
    ];
    specs
        .into_iter()
        .map(|(name, atoms)| NamedSignal {
            name: name.into(),
            signal: SignalSpec::from_atoms(atoms).expect("valid battery signal"),
        })
        .collect()
}

/// Grids and parameters a battery runs with.
#[derive(Clone, Debug)]
pub struct BatteryPlan {
    pub signals: Vec<NamedSignal>,
    pub saturation_eps: Vec<f64>,
    pub monotonicity_grid: Vec<f64>,
    pub right_continuity_eps0: Vec<f64>,
    pub deltas: Vec<f64>,
    pub smoothing_sigmas: Vec<f64>,
    pub sequence_terms: usize,
    pub gaussian_sequence_terms: usize,
    pub broken_engine: bool,
}

impl BatteryPlan {
    pub fn by_name(name: &str) -> Result<Self> {
        let standard = Self {
            signals: standard_signals(),
            saturation_eps: vec![0.1, 0.3, 0.5],
            monotonicity_grid: vec![0.0, 0.1, 0.2, 0.3, 0.4, 0.5],
            right_continuity_eps0: vec![0.0, 0.3],
            deltas: vec![0.1, 0.03, 0.01, 0.003, 0.001],
            smoothing_sigmas: vec![0.2, 0.5],
            sequence_terms: 16,
            gaussian_sequence_terms: 64,
            broken_engine: false,
        };
        let quick = || Self {
            signals: standard_signals().into_iter().take(2).collect(),
            saturation_eps: vec![0.3],
            monotonicity_grid: vec![0.0, 0.25, 0.5],
            right_continuity_eps0: vec![0.3],
            deltas: vec![0.1, 0.01, 0.001],
            smoothing_sigmas: vec![0.3],
            sequence_terms: 8,
            gaussian_sequence_terms: 16,
            broken_engine: false,
        };
        match name {
            "standard" => Ok(standard),
            "quick" => Ok(quick()),
            "sentinel-broken" => Ok(Self {
                broken_engine: true,
                ..quick()
            }),
            other => Err(Error::UnknownBattery(other.to_string())),
        }
    }
}

/// Noises every signal is probed with: none, one colliding and one
/// non-colliding two-point law, a Gaussian, and the searched witness.
fn probe_noises(x: &SignalSpec, cfg: &VerifyConfig) -> Result<Vec<(String, Noise)>> {
    let d = x.atom_differences()[0];
    let irr = 0.3 * std::f64::consts::FRAC_1_SQRT_2;
    Ok(vec![
        (
            "point_mass".into(),
            AtomicDistribution::point_mass(0.0).into(),
        ),
        (
            "colliding".into(),
            AtomicDistribution::new(vec![(-d / 2.0, 0.5), (d / 2.0, 0.5)])?.into(),
        ),
        (
            "no_collision".into(),
            AtomicDistribution::new(vec![(-irr, 0.5), (irr * std::f64::consts::E / 3.0, 0.5)])?
                .center()
                .into(),
        ),
        ("gaussian".into(), DensityNoise::gaussian(0.0, 0.3)?.into()),
        (
            "witness".into(),
            optimize_support_and_weights(x, budget(0.3)?, &cfg.optimizer)?.best_noise,
        ),
    ])
}

fn shipped_sequences(x: &SignalSpec, plan: &BatteryPlan) -> Result<Vec<WeakSequenceSpec>> {
    let d = x.atom_differences()[0];
    Ok(vec![
        WeakSequenceSpec {
            kind: SequenceKind::AtomCollapse,
            n_terms: plan.sequence_terms,
            limit: AtomicDistribution::new(vec![(-d / 2.0, 0.5), (d / 2.0, 0.5)])?.into(),
        },
        WeakSequenceSpec {
            kind: SequenceKind::VanishingPerturbation,
            n_terms: plan.sequence_terms,
            limit: AtomicDistribution::point_mass(0.0).into(),
        },
        WeakSequenceSpec {
            kind: SequenceKind::DiscretizedGaussian,
            n_terms: plan.gaussian_sequence_terms,
            limit: DensityNoise::gaussian(0.0, 0.5)?.into(),
        },
    ])
}

fn run_signal(
    s: &NamedSignal,
    plan: &BatteryPlan,
    cfg: &VerifyConfig,
    engine: &dyn PosteriorEngine,
    seed: u64,
) -> Vec<TheoremReport> {
    let x = &s.signal;
    let probes = probe_noises(x, cfg);
    let mut reports = vec![check_saturation(x, &plan.saturation_eps, cfg, engine)];
    reports.push(check_monotonicity(x, &plan.monotonicity_grid, cfg));
    reports.push(TheoremReport::merge(
        TheoremId::RightContinuity,
        plan.right_continuity_eps0
            .iter()
            .map(|&e0| check_right_continuity(x, e0, &plan.deltas, cfg))
            .collect(),
    ));
    match &probes {
        Ok(noises) => {
            let smoothable: Vec<_> = noises
                .iter()
                .filter(|n| n.0 != "gaussian")
                .cloned()
                .collect();
            reports.push(check_gaussian_smoothing(
                x,
                &smoothable,
                &plan.smoothing_sigmas,
                cfg,
                engine,
            ));
        }
        Err(err) => reports.push(TheoremReport::from_records(
            TheoremId::GaussianSmoothing,
            vec![InstanceRecord::failed("probes", err)],
        )),
    }
    reports.push(match shipped_sequences(x, plan) {
        Ok(seqs) => TheoremReport::merge(
            TheoremId::Semicontinuity,
            seqs.iter()
                .map(|q| check_semicontinuity(x, q, cfg, engine))
                .collect(),
        ),
        Err(err) => TheoremReport::from_records(
            TheoremId::Semicontinuity,
            vec![InstanceRecord::failed("sequences", &err)],
        ),
    });
    match &probes {
        Ok(noises) => {
            let battery: Vec<_> = noises
                .iter()
                .map(|(n, y)| (n.clone(), x.clone(), y.clone()))
                .collect();
            reports.push(check_data_processing(&battery, cfg, engine, seed));
            reports.push(check_shift_invariance(x, noises, cfg, engine));
        }
        Err(err) => {
            for id in [TheoremId::DataProcessing, TheoremId::ShiftInvariance] {
                reports.push(TheoremReport::from_records(
                    id,
                    vec![InstanceRecord::failed("probes", err)],
                ));
            }
        }
    }
    reports.into_iter().map(|r| r.prefixed(&s.name)).collect()
}

/// Runs every check over the plan's signals and aggregates one report per
/// theorem, in [`TheoremId::ALL`] order.
pub fn run_all(plan: &BatteryPlan, cfg: &VerifyConfig, seed: u64) -> Vec<TheoremReport> {
    let exact = ExactEngine;
    let broken = SignFlippedEngine;
    let engine: &(dyn PosteriorEngine + Sync) = if plan.broken_engine { &broken } else { &exact };
    let cfg = VerifyConfig {
        optimizer: OptimizerConfig {
            seed,
            ..cfg.optimizer.clone()
        },
        ..cfg.clone()
    };
    let per_signal: Vec<Vec<TheoremReport>> = plan
        .signals
        .par_iter()
        .map(|s| run_signal(s, plan, &cfg, engine, seed))
        .collect();
    TheoremId::ALL
        .iter()
        .map(|&id| {
            TheoremReport::merge(
                id,
                per_signal
                    .iter()
                    .flatten()
                    .filter(|r| r.theorem_id == id)
                    .cloned()
                    .collect(),
            )
        })
        .collect()
}

pub fn all_passed(reports: &[TheoremReport]) -> bool {
    reports.iter().all(TheoremReport::passed)
}

/// Fixed-width summary table.
pub fn render_table(reports: &[TheoremReport]) -> String {
    let mut out = String::new();
    let _ = writeln!(
        out,
        "{:<20} {:>9} {:>7} {:>13}  status",
        "theorem", "instances", "passes", "worst_margin"
    );
    for r in reports {
        let _ = writeln!(
            out,
            "{:<20} {:>9} {:>7} {:>13.4e}  {}",
            r.theorem_id.name(),
            r.instances,
            r.passes,
            r.worst_margin,
            if r.passed() { "PASS" } else { "FAIL" }
        );
        for d in r.details.iter().filter(|d| !d.passed) {
            let _ = writeln!(
                out,
                "    failed {}: margin {:.4e} ({})",
                d.label, d.margin, d.detail
            );
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn half() -> SignalSpec {
        SignalSpec::from_atoms(vec![(-0.5, 0.5), (0.5, 0.5)]).unwrap()
    }

    fn quick_cfg() -> VerifyConfig {
        VerifyConfig {
            optimizer: OptimizerConfig {
                restarts: 4,
                ..Default::default()
            },
            mc_samples: 20_000,
            mc_bins: 16,
            ..Default::default()
        }
    }

    #[test]
    fn atom_collapse_shows_strict_gap() {
        let seq = WeakSequenceSpec {
            kind: SequenceKind::AtomCollapse,
            n_terms: 10,
            limit: AtomicDistribution::new(vec![(-0.5, 0.5), (0.5, 0.5)])
                .unwrap()
                .into(),
        };
        let v = sequence_values(&half(), &seq, &QuadratureConfig::default(), &ExactEngine).unwrap();
        assert!(v.j_n.iter().all(|&j| j == 0.25));
        assert_eq!(v.j_limit, 0.125);
        let r = check_semicontinuity(&half(), &seq, &quick_cfg(), &ExactEngine);
        assert!(r.passed());
    }

    #[test]
    fn vanishing_perturbation_keeps_variance() {
        let seq = WeakSequenceSpec {
            kind: SequenceKind::VanishingPerturbation,
            n_terms: 12,
            limit: AtomicDistribution::point_mass(0.0).into(),
        };
        let v = sequence_values(&half(), &seq, &QuadratureConfig::default(), &ExactEngine).unwrap();
        assert!(
            v.j_n.iter().all(|&j| (j - 0.25).abs() < 1e-15),
            "{:?}",
            v.j_n
        );
        assert_eq!(v.j_limit, 0.25);
    }

    #[test]
    fn discretized_gaussian_converges() {
        let seq = WeakSequenceSpec {
            kind: SequenceKind::DiscretizedGaussian,
            n_terms: 64,
            limit: DensityNoise::gaussian(0.0, 0.5).unwrap().into(),
        };
        let v = sequence_values(&half(), &seq, &QuadratureConfig::default(), &ExactEngine).unwrap();
        assert!(
            (v.j_n[63] - v.j_limit).abs() <= 1e-3,
            "{} {}",
            v.j_n[63],
            v.j_limit
        );
        assert!((v.j_limit - 0.1376001226983318).abs() < 1e-8);
        assert!(v.max_second_moment < 0.3);
    }

    #[test]
    fn mismatched_sequence_is_rejected() {
        let seq = WeakSequenceSpec {
            kind: SequenceKind::DiscretizedGaussian,
            n_terms: 4,
            limit: AtomicDistribution::point_mass(0.0).into(),
        };
        assert!(matches!(
            seq.term(&half(), 1),
            Err(Error::InvalidSequence(_))
        ));
        let r = check_semicontinuity(&half(), &seq, &quick_cfg(), &ExactEngine);
        assert!(!r.passed());
    }

    #[test]
    fn sign_flip_breaks_data_processing_only_via_g() {
        let y: Noise = AtomicDistribution::new(vec![(-0.5, 0.5), (0.5, 0.5)])
            .unwrap()
            .into();
        let battery = vec![("pair".to_string(), half(), y.clone())];
        let good = check_data_processing(&battery, &quick_cfg(), &ExactEngine, 1);
        assert!(good.passed(), "{good:?}");
        let bad = check_data_processing(&battery, &quick_cfg(), &SignFlippedEngine, 1);
        assert!(!bad.passed());
        let q = QuadratureConfig::default();
        assert_eq!(
            ExactEngine.objective(&half(), &y, &q).unwrap().j,
            SignFlippedEngine.objective(&half(), &y, &q).unwrap().j
        );
    }

    #[test]
    fn pythagoras_holds_for_density_noise() {
        let y: Noise = DensityNoise::new(vec![(-0.3, 0.2, 0.5), (0.3, 0.2, 0.5)])
            .unwrap()
            .into();
        let x = SignalSpec::from_atoms(vec![(-1.0, 0.3), (0.0, 0.3), (2.0, 0.4)]).unwrap();
        let q = QuadratureConfig::default();
        let r = ExactEngine.objective(&x, &y, &q).unwrap();
        let post = ExactEngine.posterior(&x, &y, &q).unwrap();
        let mse = prediction_error_of(&x, &y, &post);
        assert!((mse - (x.variance() - r.j)).abs() < 1e-9);
    }

    #[test]
    fn single_point_grid_is_vacuous() {
        let r = check_monotonicity(&half(), &[0.3], &quick_cfg());
        assert_eq!((r.instances, r.passes, r.worst_margin), (0, 0, 0.0));
        assert!(r.passed());
    }

    #[test]
    fn monotonicity_from_zero() {
        let r = check_monotonicity(&half(), &[0.0, 0.3], &quick_cfg());
        assert!(r.passed(), "{r:?}");
        assert_eq!(r.instances, 1);
    }

    #[test]
    fn saturation_on_bernoulli() {
        let r = check_saturation(&half(), &[0.5], &quick_cfg(), &ExactEngine);
        assert_eq!(r.instances, 3);
        assert!(r.passed(), "{r:?}");
        let r = check_saturation(&half(), &[0.3], &quick_cfg(), &ExactEngine);
        assert!(r.passed(), "{r:?}");
    }

    #[test]
    fn right_continuity_single_delta() {
        let r = check_right_continuity(&half(), 0.3, &[0.001], &quick_cfg());
        assert_eq!(r.instances, 1);
        assert!(r.passed(), "{r:?}");
    }

    #[test]
    fn unknown_battery() {
        assert!(matches!(
            BatteryPlan::by_name("nope"),
            Err(Error::UnknownBattery(_))
        ));
        for name in ["standard", "quick", "sentinel-broken"] {
            assert!(BatteryPlan::by_name(name).is_ok());
        }
    }

    #[test]
    fn report_round_trips() {
        let r = TheoremReport::from_records(
            TheoremId::Saturation,
            vec![InstanceRecord::new("a", 0.5, true, "x".into())],
        );
        let text = serde_json::to_string(&r).unwrap();
        assert!(text.contains("\"theorem_id\":\"saturation\""));
        assert_eq!(serde_json::from_str::<TheoremReport>(&text).unwrap(), r);
    }
}
