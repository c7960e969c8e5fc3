//! Small numeric helpers shared across modules.

use std::cmp::Ordering;
use std::ops::Range;

/// Neumaier-compensated accumulator.
#[derive(Clone, Copy, Debug, Default)]
pub struct KahanSum {
    sum: f64,
    comp: f64,
}

impl KahanSum {
    pub fn new() -> Self {
        Self::default()
    }

    #[inline]
    pub fn add(&mut self, v: f64) {
        let t = self.sum + v;
        if self.sum.abs() >= v.abs() {
            self.comp += (self.sum - t) + v;
        } else {
            self.comp += (v - t) + self.sum;
        }
        self.sum = t;
    }

    pub fn value(&self) -> f64 {
        self.sum + self.comp
    }
}

impl std::iter::FromIterator<f64> for KahanSum {
    fn from_iter<I: IntoIterator<Item = f64>>(iter: I) -> Self {
        let mut acc = KahanSum::new();
        for v in iter {
            acc.add(v);
        }
        acc
    }
}

pub fn ksum<I: IntoIterator<Item = f64>>(iter: I) -> f64 {
    iter.into_iter().collect::<KahanSum>().value()
}

/// Default value-collision tolerance for a set of atom values.
pub fn default_merge_tol(values: impl IntoIterator<Item = f64>) -> f64 {
    let max_abs = values.into_iter().fold(0.0_f64, |m, v| m.max(v.abs()));
    1e-9 * (1.0 + max_abs)
}

pub fn total_cmp(a: &f64, b: &f64) -> Ordering {
    a.total_cmp(b)
}

/// Sorts `items` by their key and returns the index ranges of merge classes:
/// maximal runs where consecutive keys differ by at most `tol`.
///
/// The sort is stable, so ties keep their input order and the resulting
/// classes are deterministic.
pub fn merge_classes<T>(items: &mut [(f64, T)], tol: f64) -> Vec<Range<usize>> {
    items.sort_by(|a, b| total_cmp(&a.0, &b.0));
    let mut ranges = Vec::new();
    let mut start = 0;
    for k in 1..=items.len() {
        if k == items.len() || items[k].0 - items[k - 1].0 > tol {
            if start < k {
                ranges.push(start..k);
            }
            start = k;
        }
    }
    ranges
}
