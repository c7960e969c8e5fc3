//! Distribution representations: atomic laws for the signal and discrete
//! noise, Gaussian mixtures for absolutely continuous noise, and the law of
//! the independent sum `X + Y`.
//!
//! Atomic distributions are kept in canonical form: values sorted strictly
//! increasing, atoms closer than `merge_tol` merged into one atom whose value
//! is the mass-weighted mean of the colliding values. Merging is the only
//! place where floating point decides whether two sums are "the same" value,
//! and the conditional expectation engine reuses exactly these classes.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numeric::{default_merge_tol, ksum, merge_classes};

const MASS_TOL: f64 = 1e-12;

/// Mean, second moment and variance of a law.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Moments {
    pub mean: f64,
    pub second_moment: f64,
    pub variance: f64,
}

/// A finitely supported probability law.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "AtomsDoc", into = "AtomsDoc")]
pub struct AtomicDistribution {
    values: Vec<f64>,
    masses: Vec<f64>,
    merge_tol: f64,
}

impl AtomicDistribution {
    /// Builds a distribution from `(value, mass)` pairs using the default
    /// merge tolerance `1e-9 * (1 + max |value|)`.
    pub fn new(atoms: Vec<(f64, f64)>) -> Result<Self> {
        let tol = default_merge_tol(atoms.iter().map(|a| a.0));
        Self::with_merge_tol(atoms, tol)
    }

    pub fn with_merge_tol(atoms: Vec<(f64, f64)>, merge_tol: f64) -> Result<Self> {
        if atoms.is_empty() {
            return Err(Error::InvalidDistribution("no atoms".into()));
        }
        if !(merge_tol.is_finite() && merge_tol >= 0.0) {
            return Err(Error::InvalidDistribution(format!("merge_tol {merge_tol}")));
        }
        for &(v, m) in &atoms {
            if !v.is_finite() {
                return Err(Error::InvalidDistribution(format!("non-finite value {v}")));
            }
            if !(m > 0.0 && m <= 1.0 + MASS_TOL) {
                return Err(Error::InvalidDistribution(format!(
                    "mass {m} outside (0, 1]"
                )));
            }
        }
        let total = ksum(atoms.iter().map(|a| a.1));
        if (total - 1.0).abs() > MASS_TOL {
            return Err(Error::InvalidDistribution(format!(
                "masses sum to {total}, expected 1"
            )));
        }
        Ok(Self::merge_unchecked(atoms, merge_tol))
    }

    /// Sorts and merges without validating masses. Callers guarantee
    /// positive finite masses summing to one.
    pub(crate) fn merge_unchecked(atoms: Vec<(f64, f64)>, merge_tol: f64) -> Self {
        let mut items = atoms;
        let classes = merge_classes(&mut items, merge_tol);
        let mut values = Vec::with_capacity(classes.len());
        let mut masses = Vec::with_capacity(classes.len());
        for r in classes {
            let class = &items[r];
            if class.len() == 1 {
                values.push(class[0].0);
                masses.push(class[0].1);
            } else {
                let m = ksum(class.iter().map(|a| a.1));
                let vm = ksum(class.iter().map(|a| a.0 * a.1));
                values.push(vm / m);
                masses.push(m);
            }
        }
        Self {
            values,
            masses,
            merge_tol,
        }
    }

    pub fn point_mass(value: f64) -> Self {
        Self {
            values: vec![value],
            masses: vec![1.0],
            merge_tol: default_merge_tol([value]),
        }
    }

    /// Equal masses on the given values.
    pub fn uniform(values: &[f64]) -> Result<Self> {
        let m = 1.0 / values.len() as f64;
        Self::new(values.iter().map(|&v| (v, m)).collect())
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn masses(&self) -> &[f64] {
        &self.masses
    }

    pub fn atoms(&self) -> impl Iterator<Item = (f64, f64)> + '_ {
        self.values.iter().copied().zip(self.masses.iter().copied())
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn merge_tol(&self) -> f64 {
        self.merge_tol
    }

    pub fn min_value(&self) -> f64 {
        self.values[0]
    }

    pub fn max_value(&self) -> f64 {
        self.values[self.values.len() - 1]
    }

    pub fn moments(&self) -> Moments {
        let mean = ksum(self.atoms().map(|(v, m)| v * m));
        let second_moment = ksum(self.atoms().map(|(v, m)| v * v * m));
        Moments {
            mean,
            second_moment,
            variance: second_moment - mean * mean,
        }
    }

    pub fn mean(&self) -> f64 {
        self.moments().mean
    }

    pub fn second_moment(&self) -> f64 {
        self.moments().second_moment
    }

    pub fn variance(&self) -> f64 {
        self.moments().variance
    }

    /// Values shifted by `c`, masses unchanged.
    pub fn shift(&self, c: f64) -> Self {
        let atoms = self.atoms().map(|(v, m)| (v + c, m)).collect();
        Self::merge_unchecked(atoms, self.merge_tol)
    }

    /// Values multiplied by `a > 0`; the merge tolerance scales along.
    pub fn scale(&self, a: f64) -> Self {
        let atoms = self.atoms().map(|(v, m)| (v * a, m)).collect();
        Self::merge_unchecked(atoms, self.merge_tol * a.abs())
    }

    /// The law shifted to mean zero.
    pub fn center(&self) -> Self {
        self.shift(-self.mean())
    }

    pub fn reflect(&self) -> Self {
        let atoms = self.atoms().map(|(v, m)| (-v, m)).collect();
        Self::merge_unchecked(atoms, self.merge_tol)
    }
}

pub fn center(d: &AtomicDistribution) -> AtomicDistribution {
    d.center()
}

pub fn moments(d: &AtomicDistribution) -> Moments {
    d.moments()
}

/// Law of `X + Y` for independent `X` and `Y`: atoms at all pairwise sums
/// with product masses, sums within the merge tolerance collapsed.
pub fn sum_law(x: &AtomicDistribution, y: &AtomicDistribution) -> AtomicDistribution {
    let mut pairs = Vec::with_capacity(x.len() * y.len());
    for (xv, xm) in x.atoms() {
        for (yv, ym) in y.atoms() {
            pairs.push((xv + yv, xm * ym));
        }
    }
    let tol = sum_merge_tol(x, y);
    AtomicDistribution::merge_unchecked(pairs, tol)
}

/// Tolerance deciding when two sums `x_i + y_j` coincide.
pub fn sum_merge_tol(x: &AtomicDistribution, y: &AtomicDistribution) -> f64 {
    let max_sum = x.values().iter().fold(0.0_f64, |m, v| m.max(v.abs()))
        + y.values().iter().fold(0.0_f64, |m, v| m.max(v.abs()));
    default_merge_tol([max_sum])
        .max(x.merge_tol())
        .max(y.merge_tol())
}

/// One Gaussian component of a mixture.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct GaussianComponent {
    pub mean: f64,
    pub sd: f64,
    pub weight: f64,
}

/// A Gaussian mixture noise law. Every component is non-degenerate.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "MixtureDoc", into = "MixtureDoc")]
pub struct DensityNoise {
    components: Vec<GaussianComponent>,
}

impl DensityNoise {
    /// Components given as `(mean, sd, weight)`.
    pub fn new(components: Vec<(f64, f64, f64)>) -> Result<Self> {
        if components.is_empty() {
            return Err(Error::InvalidDistribution("empty mixture".into()));
        }
        for &(mu, sd, w) in &components {
            if !mu.is_finite() || !sd.is_finite() {
                return Err(Error::InvalidDistribution(format!(
                    "non-finite component ({mu}, {sd})"
                )));
            }
            if sd <= 0.0 {
                return Err(Error::InvalidDistribution(format!("sd {sd} must be > 0")));
            }
            if !(w > 0.0 && w <= 1.0 + MASS_TOL) {
                return Err(Error::InvalidDistribution(format!(
                    "weight {w} outside (0, 1]"
                )));
            }
        }
        let total = ksum(components.iter().map(|c| c.2));
        if (total - 1.0).abs() > MASS_TOL {
            return Err(Error::InvalidDistribution(format!(
                "weights sum to {total}, expected 1"
            )));
        }
        Ok(Self {
            components: components
                .into_iter()
                .map(|(mean, sd, weight)| GaussianComponent { mean, sd, weight })
                .collect(),
        })
    }

    pub fn gaussian(mean: f64, sd: f64) -> Result<Self> {
        Self::new(vec![(mean, sd, 1.0)])
    }

    pub fn components(&self) -> &[GaussianComponent] {
        &self.components
    }

    pub fn min_sd(&self) -> f64 {
        self.components
            .iter()
            .fold(f64::INFINITY, |m, c| m.min(c.sd))
    }

    /// Closed-form `(E[Y], E[Y^2])`.
    pub fn mixture_moments(&self) -> (f64, f64) {
        let mean = ksum(self.components.iter().map(|c| c.weight * c.mean));
        let second = ksum(
            self.components
                .iter()
                .map(|c| c.weight * (c.mean * c.mean + c.sd * c.sd)),
        );
        (mean, second)
    }

    pub fn pdf(&self, t: f64) -> f64 {
        ksum(self.components.iter().map(|c| {
            let z = (t - c.mean) / c.sd;
            c.weight * (-0.5 * z * z).exp() / (c.sd * SQRT_2PI)
        }))
    }

    /// Adds an independent centred Gaussian of standard deviation `sigma`.
    pub fn convolve_gaussian(&self, sigma: f64) -> Result<Self> {
        if !(sigma > 0.0) {
            return Err(Error::NonPositiveSigma(sigma));
        }
        Ok(Self {
            components: self
                .components
                .iter()
                .map(|c| GaussianComponent {
                    sd: (c.sd * c.sd + sigma * sigma).sqrt(),
                    ..*c
                })
                .collect(),
        })
    }
}

pub(crate) const SQRT_2PI: f64 = 2.506_628_274_631_000_7;

pub fn mixture_moments(y: &DensityNoise) -> (f64, f64) {
    y.mixture_moments()
}

/// Observed signal `X`: atomic, centred, non-degenerate.
#[derive(Clone, Debug, PartialEq)]
pub struct SignalSpec {
    dist: AtomicDistribution,
    variance: f64,
}

impl SignalSpec {
    /// Centres `dist` and caches its variance.
    pub fn new(dist: AtomicDistribution) -> Result<Self> {
        if dist.len() < 2 {
            return Err(Error::DegenerateSignal("single atom".into()));
        }
        let dist = dist.center();
        let variance = dist.second_moment();
        if !(variance > 0.0) {
            return Err(Error::DegenerateSignal(format!("variance {variance}")));
        }
        Ok(Self { dist, variance })
    }

    pub fn from_atoms(atoms: Vec<(f64, f64)>) -> Result<Self> {
        Self::new(AtomicDistribution::new(atoms)?)
    }

    pub fn dist(&self) -> &AtomicDistribution {
        &self.dist
    }

    pub fn values(&self) -> &[f64] {
        self.dist.values()
    }

    pub fn masses(&self) -> &[f64] {
        self.dist.masses()
    }

    pub fn variance(&self) -> f64 {
        self.variance
    }

    /// `max_i x_i^2`, the bound on the squared posterior mean.
    pub fn max_sq(&self) -> f64 {
        self.values().iter().fold(0.0_f64, |m, v| m.max(v * v))
    }

    /// Distinct positive differences between atoms, ascending.
    pub fn atom_differences(&self) -> Vec<f64> {
        let v = self.values();
        let mut d: Vec<f64> = Vec::new();
        for i in 0..v.len() {
            for k in i + 1..v.len() {
                d.push(v[k] - v[i]);
            }
        }
        d.sort_by(f64::total_cmp);
        let tol = self.dist.merge_tol();
        d.dedup_by(|a, b| (*a - *b).abs() <= tol);
        d
    }

    /// Signal scaled by `a > 0`.
    pub fn scale(&self, a: f64) -> Result<Self> {
        Self::new(self.dist.scale(a))
    }
}

/// Noise budget `epsilon`: feasible noise has `E[Y] = 0`, `E[Y^2] <= epsilon^2`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct NoiseBudget {
    epsilon: f64,
}

impl NoiseBudget {
    pub fn new(epsilon: f64) -> Result<Self> {
        if !(epsilon >= 0.0) || !epsilon.is_finite() {
            return Err(Error::NegativeEpsilon(epsilon));
        }
        Ok(Self { epsilon })
    }

    pub fn epsilon(&self) -> f64 {
        self.epsilon
    }

    pub fn eps2(&self) -> f64 {
        self.epsilon * self.epsilon
    }
}

/// Either kind of noise candidate.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "NoiseDoc", into = "NoiseDoc")]
pub enum Noise {
    Atomic(AtomicDistribution),
    Mixture(DensityNoise),
}

impl Noise {
    /// `(E[Y], E[Y^2])`.
    pub fn mean_and_second_moment(&self) -> (f64, f64) {
        match self {
            Noise::Atomic(d) => {
                let m = d.moments();
                (m.mean, m.second_moment)
            }
            Noise::Mixture(d) => d.mixture_moments(),
        }
    }

    pub fn kind(&self) -> &'static str {
        match self {
            Noise::Atomic(_) => "atomic",
            Noise::Mixture(_) => "mixture",
        }
    }

    /// Parameters as compact JSON: `[[v,m],...]` or `[[mean,sd,w],...]`.
    pub fn params_json(&self) -> String {
        match NoiseDoc::from(self.clone()) {
            NoiseDoc::Atoms(a) => serde_json::to_string(&a),
            NoiseDoc::Mixture(c) => serde_json::to_string(&c),
        }
        .expect("finite floats serialize")
    }
}

impl From<AtomicDistribution> for Noise {
    fn from(d: AtomicDistribution) -> Self {
        Noise::Atomic(d)
    }
}

impl From<DensityNoise> for Noise {
    fn from(d: DensityNoise) -> Self {
        Noise::Mixture(d)
    }
}

/// Outcome of a membership test for the feasible noise class.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Feasibility {
    pub feasible: bool,
    /// `E[Y]`; zero is the target.
    pub mean_slack: f64,
    /// `E[Y^2] - epsilon^2`; positive means over budget.
    pub var_slack: f64,
}

pub fn feasibility_check(y: &Noise, eps: NoiseBudget, tol: f64) -> Feasibility {
    let (mean, second) = y.mean_and_second_moment();
    let var_slack = second - eps.eps2();
    Feasibility {
        feasible: mean.abs() <= tol && var_slack <= tol,
        mean_slack: mean,
        var_slack,
    }
}

// Wire formats: `{"atoms": [[v,m],...]}` and `{"mixture": [[mean,sd,weight],...]}`.

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct AtomsDoc {
    atoms: Vec<[f64; 2]>,
}

impl TryFrom<AtomsDoc> for AtomicDistribution {
    type Error = Error;
    fn try_from(doc: AtomsDoc) -> Result<Self> {
        AtomicDistribution::new(doc.atoms.into_iter().map(|[v, m]| (v, m)).collect())
    }
}

impl From<AtomicDistribution> for AtomsDoc {
    fn from(d: AtomicDistribution) -> Self {
        AtomsDoc {
            atoms: d.atoms().map(|(v, m)| [v, m]).collect(),
        }
    }
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct MixtureDoc {
    mixture: Vec<[f64; 3]>,
}

impl TryFrom<MixtureDoc> for DensityNoise {
    type Error = Error;
    fn try_from(doc: MixtureDoc) -> Result<Self> {
        DensityNoise::new(doc.mixture.into_iter().map(|[a, b, c]| (a, b, c)).collect())
    }
}

impl From<DensityNoise> for MixtureDoc {
    fn from(d: DensityNoise) -> Self {
        MixtureDoc {
            mixture: d
                .components
                .iter()
                .map(|c| [c.mean, c.sd, c.weight])
                .collect(),
        }
    }
}

#[derive(Serialize, Deserialize)]
#[serde(rename_all = "lowercase", deny_unknown_fields)]
enum NoiseDoc {
    Atoms(Vec<[f64; 2]>),
    Mixture(Vec<[f64; 3]>),
}

impl TryFrom<NoiseDoc> for Noise {
    type Error = Error;
    fn try_from(doc: NoiseDoc) -> Result<Self> {
        Ok(match doc {
            NoiseDoc::Atoms(a) => Noise::Atomic(AtomsDoc { atoms: a }.try_into()?),
            NoiseDoc::Mixture(m) => Noise::Mixture(MixtureDoc { mixture: m }.try_into()?),
        })
    }
}

impl From<Noise> for NoiseDoc {
    fn from(n: Noise) -> Self {
        match n {
            Noise::Atomic(d) => NoiseDoc::Atoms(AtomsDoc::from(d).atoms),
            Noise::Mixture(d) => NoiseDoc::Mixture(MixtureDoc::from(d).mixture),
        }
    }
}

/// Parses a noise document (either form).
pub fn parse_noise(text: &str) -> Result<Noise> {
    Ok(serde_json::from_str(text)?)
}

/// Parses an atomic distribution document (`{"atoms": ...}` only).
pub fn parse_atomic(text: &str) -> Result<AtomicDistribution> {
    Ok(serde_json::from_str(text)?)
}
