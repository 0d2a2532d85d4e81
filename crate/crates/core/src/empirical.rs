//! Empirical distributions and the order-1 Wasserstein distance between them.

use alloc::format;
use alloc::vec::Vec;

use crate::error::{Error, Result};

/// A finite sample of real values with optional weights.
///
/// Construction validates the sample and caches a sorted view; weights are
/// normalized to sum to one.
#[derive(Clone, Debug, PartialEq)]
pub struct EmpiricalDistribution {
    samples: Vec<f64>,
    weights: Option<Vec<f64>>,
    sorted: Vec<f64>,
    /// Weights aligned with `sorted`; empty for uniform weights.
    sorted_weights: Vec<f64>,
}

impl EmpiricalDistribution {
    pub fn new(samples: Vec<f64>) -> Result<Self> {
        validate(&samples)?;
        let mut sorted = samples.clone();
        sorted.sort_by(f64::total_cmp);
        Ok(Self { samples, weights: None, sorted, sorted_weights: Vec::new() })
    }

    pub fn weighted(samples: Vec<f64>, weights: Vec<f64>) -> Result<Self> {
        validate(&samples)?;
        if weights.len() != samples.len() {
            return Err(Error::Invalid(format!("{} weights for {} samples", weights.len(), samples.len())));
        }
        if weights.iter().any(|w| !(w.is_finite() && *w > 0.0)) {
            return Err(Error::Invalid("weights must be finite and positive".into()));
        }
        let total: f64 = weights.iter().sum();
        let weights: Vec<f64> = weights.iter().map(|w| w / total).collect();
        let mut order: Vec<usize> = (0..samples.len()).collect();
        order.sort_by(|&a, &b| samples[a].total_cmp(&samples[b]));
        let sorted = order.iter().map(|&i| samples[i]).collect();
        let sorted_weights = order.iter().map(|&i| weights[i]).collect();
        Ok(Self { samples, weights: Some(weights), sorted, sorted_weights })
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn samples(&self) -> &[f64] {
        &self.samples
    }

    pub fn weights(&self) -> Option<&[f64]> {
        self.weights.as_deref()
    }

    pub fn sorted(&self) -> &[f64] {
        &self.sorted
    }

    pub fn mean(&self) -> f64 {
        match &self.weights {
            Some(w) => self.samples.iter().zip(w).map(|(x, w)| x * w).sum(),
            None => self.samples.iter().sum::<f64>() / self.samples.len() as f64,
        }
    }

    /// Left-continuous quantile function `F^-1(q) = inf { x : F(x) >= q }`.
    pub fn quantile(&self, q: f64) -> f64 {
        let n = self.sorted.len();
        if self.sorted_weights.is_empty() {
            let idx = libm::ceil(q * n as f64) as usize;
            return self.sorted[idx.clamp(1, n) - 1];
        }
        let mut acc = 0.0;
        for (x, w) in self.sorted.iter().zip(&self.sorted_weights) {
            acc += w;
            if acc >= q {
                return *x;
            }
        }
        self.sorted[n - 1]
    }

    fn is_uniform(&self) -> bool {
        self.sorted_weights.is_empty()
    }
}

fn validate(samples: &[f64]) -> Result<()> {
    if samples.is_empty() {
        return Err(Error::Empty("empirical distribution"));
    }
    if samples.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("empirical distribution"));
    }
    Ok(())
}

/// Order-1 Wasserstein distance between two empirical distributions.
///
/// Computed exactly as the integral of `|F_u(x) - F_v(x)|` over the merged
/// support, which equals the integral of the absolute quantile difference
/// over `[0, 1]`. Sample counts may differ.
pub fn wasserstein1(u: &EmpiricalDistribution, v: &EmpiricalDistribution) -> f64 {
    if u.is_uniform() && v.is_uniform() {
        uniform_w1(&u.sorted, &v.sorted)
    } else {
        weighted_w1(u, v)
    }
}

/// [`wasserstein1`] on raw samples.
pub fn wasserstein1_samples(u: &[f64], v: &[f64]) -> Result<f64> {
    let u = EmpiricalDistribution::new(u.to_vec())?;
    let v = EmpiricalDistribution::new(v.to_vec())?;
    Ok(wasserstein1(&u, &v))
}

// CDFs are tracked as integer counts so |F_u - F_v| = |i*m - j*n| / (n*m)
// carries no rounding.
fn uniform_w1(u: &[f64], v: &[f64]) -> f64 {
    let (n, m) = (u.len(), v.len());
    let (mut i, mut j) = (0usize, 0usize);
    let mut prev = u[0].min(v[0]);
    let mut area = 0.0;
    while i < n || j < m {
        let x = match (u.get(i), v.get(j)) {
            (Some(&a), Some(&b)) => a.min(b),
            (Some(&a), None) => a,
            (None, Some(&b)) => b,
            (None, None) => unreachable!(),
        };
        let gap = (i as i128 * m as i128 - j as i128 * n as i128).unsigned_abs() as f64;
        area += gap * (x - prev);
        while i < n && u[i] == x {
            i += 1;
        }
        while j < m && v[j] == x {
            j += 1;
        }
        prev = x;
    }
    area / (n as f64 * m as f64)
}

fn weighted_w1(u: &EmpiricalDistribution, v: &EmpiricalDistribution) -> f64 {
    let weights = |d: &EmpiricalDistribution| -> Vec<f64> {
        if d.is_uniform() {
            let w = 1.0 / d.len() as f64;
            d.sorted.iter().map(|_| w).collect()
        } else {
            d.sorted_weights.clone()
        }
    };
    let (us, vs) = (&u.sorted, &v.sorted);
    let (uw, vw) = (weights(u), weights(v));
    let (mut i, mut j) = (0usize, 0usize);
    let (mut cu, mut cv) = (0.0f64, 0.0f64);
    let mut prev = us[0].min(vs[0]);
    let mut area = 0.0;
    while i < us.len() || j < vs.len() {
        let x = match (us.get(i), vs.get(j)) {
            (Some(&a), Some(&b)) => a.min(b),
            (Some(&a), None) => a,
            (None, Some(&b)) => b,
            (None, None) => unreachable!(),
        };
        area += (cu - cv).abs() * (x - prev);
        while i < us.len() && us[i] == x {
            cu += uw[i];
            i += 1;
        }
        while j < vs.len() && vs[j] == x {
            cv += vw[j];
            j += 1;
        }
        prev = x;
    }
    area
}
