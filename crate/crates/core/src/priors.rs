//! Finitely supported signal priors and the scalar Gaussian denoiser.
//!
//! For a prior `P` the denoiser is the posterior mean of `x ~ P` observed
//! through `b = a x + sqrt(a) g`:
//!
//! ```text
//! eta(a, b) = E[x exp(-a x^2/2 + b x)] / E[exp(-a x^2/2 + b x)]
//! ```
//!
//! Both the denoiser and its `b`-derivative (the posterior variance) are
//! evaluated on log-weights shifted by their maximum, since AMP at high
//! signal-to-noise drives the exponents to the order of `1e3`.

use serde::Deserialize;

use crate::error::{Error, Result};

/// Absolute tolerance under which pushed-forward atoms are merged.
pub const ATOM_MERGE_TOL: f64 = 1e-12;

const WEIGHT_SUM_TOL: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq)]
pub struct DiscretePrior {
    atoms: Vec<f64>,
    weights: Vec<f64>,
}

impl DiscretePrior {
    pub fn new(atoms: Vec<f64>, weights: Vec<f64>) -> Result<Self> {
        if atoms.is_empty() {
            return Err(Error::InvalidPrior("no atoms".into()));
        }
        if atoms.len() != weights.len() {
            return Err(Error::InvalidPrior(format!(
                "{} atoms but {} weights",
                atoms.len(),
                weights.len()
            )));
        }
        if let Some(a) = atoms.iter().find(|a| !a.is_finite()) {
            return Err(Error::InvalidPrior(format!("non-finite atom {a}")));
        }
        if let Some(w) = weights.iter().find(|w| !(w.is_finite() && **w >= 0.0)) {
            return Err(Error::InvalidPrior(format!("invalid weight {w}")));
        }
        let total: f64 = weights.iter().sum();
        if (total - 1.0).abs() > WEIGHT_SUM_TOL {
            return Err(Error::InvalidPrior(format!("weights sum to {total}, not 1")));
        }
        for (i, a) in atoms.iter().enumerate() {
            if atoms[..i].contains(a) {
                return Err(Error::InvalidPrior(format!("duplicate atom {a}")));
            }
        }
        Ok(Self { atoms, weights })
    }

    /// `(δ₋₁ + δ₁)/2`.
    pub fn rademacher() -> Self {
        Self {
            atoms: vec![-1.0, 1.0],
            weights: vec![0.5, 0.5],
        }
    }

    /// Two-atom prior `(δ_a + δ_b)/2` with `a = sqrt(2 - sqrt 2)/2`,
    /// `b = -sqrt(2 + sqrt 2)/2`, used with the absolute-value channel.
    /// `|a| != |b|` so its square is not a point mass.
    pub fn skewed_pair() -> Self {
        let s2 = 2.0_f64.sqrt();
        Self {
            atoms: vec![(2.0 - s2).sqrt() / 2.0, -(2.0 + s2).sqrt() / 2.0],
            weights: vec![0.5, 0.5],
        }
    }

    pub fn point_mass(c: f64) -> Result<Self> {
        Self::new(vec![c], vec![1.0])
    }

    pub fn atoms(&self) -> &[f64] {
        &self.atoms
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn len(&self) -> usize {
        self.atoms.len()
    }

    pub fn is_empty(&self) -> bool {
        self.atoms.is_empty()
    }

    pub fn min_atom(&self) -> f64 {
        self.atoms.iter().copied().fold(f64::INFINITY, f64::min)
    }

    pub fn max_atom(&self) -> f64 {
        self.atoms.iter().copied().fold(f64::NEG_INFINITY, f64::max)
    }

    pub fn mean(&self) -> f64 {
        self.moment(1)
    }

    /// `m_k = Σ w_i a_i^k`; `m_0 = 1`.
    pub fn moment(&self, k: u32) -> f64 {
        if k == 0 {
            return 1.0;
        }
        let k = k as i32;
        self.atoms
            .iter()
            .zip(&self.weights)
            .map(|(a, w)| w * a.powi(k))
            .sum()
    }

    /// Law of `x^k` for `x` drawn from this prior.
    pub fn pushforward(&self, k: u32) -> Self {
        assert!(k >= 1, "pushforward exponent must be positive");
        let mut pairs: Vec<(f64, f64)> = self
            .atoms
            .iter()
            .zip(&self.weights)
            .map(|(a, w)| (a.powi(k as i32), *w))
            .collect();
        pairs.sort_by(|a, b| a.0.total_cmp(&b.0));
        let mut atoms: Vec<f64> = Vec::with_capacity(pairs.len());
        let mut weights: Vec<f64> = Vec::with_capacity(pairs.len());
        for (a, w) in pairs {
            match atoms.last() {
                Some(last) if (a - last).abs() <= ATOM_MERGE_TOL => {
                    *weights.last_mut().unwrap() += w;
                }
                _ => {
                    atoms.push(a);
                    weights.push(w);
                }
            }
        }
        Self { atoms, weights }
    }

    /// True when the prior is invariant under `x -> -x`.
    pub fn is_symmetric(&self) -> bool {
        self.atoms.iter().zip(&self.weights).all(|(a, w)| {
            self.atoms
                .iter()
                .zip(&self.weights)
                .any(|(b, v)| (a + b).abs() <= ATOM_MERGE_TOL && (w - v).abs() <= WEIGHT_SUM_TOL)
        })
    }

    /// Tilted posterior weights `p_i ∝ w_i exp(-a x_i^2/2 + b x_i)`.
    fn posterior(&self, a: f64, b: f64, out: &mut [f64]) {
        let mut max = f64::NEG_INFINITY;
        for ((o, x), w) in out.iter_mut().zip(&self.atoms).zip(&self.weights) {
            *o = if *w > 0.0 {
                w.ln() - 0.5 * a * x * x + b * x
            } else {
                f64::NEG_INFINITY
            };
            max = max.max(*o);
        }
        let mut total = 0.0;
        for o in out.iter_mut() {
            *o = (*o - max).exp();
            total += *o;
        }
        for o in out.iter_mut() {
            *o /= total;
        }
    }

    /// Posterior mean and variance under the tilt `(a, b)`.
    pub fn denoise_with_variance(&self, a: f64, b: f64) -> (f64, f64) {
        if self.atoms.len() == 1 {
            return (self.atoms[0], 0.0);
        }
        let mut buf = [0.0; 8];
        let mut heap;
        let post: &mut [f64] = if self.atoms.len() <= buf.len() {
            &mut buf[..self.atoms.len()]
        } else {
            heap = vec![0.0; self.atoms.len()];
            &mut heap
        };
        self.posterior(a, b, post);
        let mean: f64 = post.iter().zip(&self.atoms).map(|(p, x)| p * x).sum();
        let mean = mean.clamp(self.min_atom(), self.max_atom());
        let var: f64 = post
            .iter()
            .zip(&self.atoms)
            .map(|(p, x)| p * (x - mean) * (x - mean))
            .sum();
        (mean, var.max(0.0))
    }

    /// `eta(a, b)`, always inside `[min atom, max atom]`.
    pub fn denoise(&self, a: f64, b: f64) -> f64 {
        self.denoise_with_variance(a, b).0
    }

    /// `∂_b eta(a, b)`: the tilted variance, nonnegative.
    pub fn denoise_derivative(&self, a: f64, b: f64) -> f64 {
        self.denoise_with_variance(a, b).1
    }
}

/// Prior as written in an experiment config: either a name
/// (`"rademacher"`, `"skewed_pair"`) or explicit `{atoms, weights}`.
#[derive(Debug, Clone, PartialEq, Deserialize, serde::Serialize)]
#[serde(untagged)]
pub enum PriorSpec {
    Named(String),
    Explicit { atoms: Vec<f64>, weights: Vec<f64> },
}

impl PriorSpec {
    pub fn build(&self) -> Result<DiscretePrior> {
        match self {
            PriorSpec::Named(name) => match name.as_str() {
                "rademacher" => Ok(DiscretePrior::rademacher()),
                "skewed_pair" => Ok(DiscretePrior::skewed_pair()),
                other => Err(Error::InvalidPrior(format!("unknown prior name `{other}`"))),
            },
            PriorSpec::Explicit { atoms, weights } => {
                DiscretePrior::new(atoms.clone(), weights.clone())
            }
        }
    }
}
