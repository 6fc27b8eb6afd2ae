//! Observation channels `p_out(y | w)` and their Fisher scores.
//!
//! A channel exposes a sampler and the normalized log-likelihood derivatives
//! `score(k, y) = g^(k)(y, 0) / k!` where `g(y, w) = log p_out(y | w)`.
//! The first order with nonzero second moment under the null `w = 0` is the
//! critical index `k_F`; its inverse Fisher coefficient `1/Δ_{k_F}` is the
//! effective signal-to-noise ratio of the score matrix.
//!
//! Any signal amplitude `γ₀` is folded into the channel. The `N`-dependent
//! factor `N^{β - 1/2}` is applied by [`crate::ensemble::observe`].

pub mod bell;

use std::collections::BTreeMap;
use std::fmt;
use std::sync::Arc;

use rand_distr::{Distribution, StandardNormal, StudentT};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::{derive_seed, rng_from_seed, SimRng};

pub use bell::{
    bell_complete, bell_partial, bell_partial_by_partitions, cumulant_poly, cumulant_poly_by_bell,
    score_from_density_derivatives,
};

pub trait Channel: Send + Sync + fmt::Debug {
    fn name(&self) -> &str;

    fn params(&self) -> BTreeMap<String, f64>;

    /// Draw `y ~ p_out(· | w)`.
    fn sample(&self, w: f64, rng: &mut SimRng) -> f64;

    /// `g^(k)(y, 0) / k!`, or `None` when the order is not implemented.
    fn score(&self, k: usize, y: f64) -> Option<f64>;

    /// Exact `1/Δ_k` when known.
    fn closed_form_inv_delta(&self, _k: usize) -> Option<f64> {
        None
    }

    /// Whether null observations have nonzero mean, which puts an
    /// uninformative Perron–Frobenius outlier in the raw data matrix.
    fn has_perron_mode(&self) -> bool {
        false
    }
}

/// `y = sqrt(Δ) g + w^{k_F}`, the model whose score matrix is exactly a
/// spiked Wigner matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct GaussianAdditive {
    delta: f64,
    k_f: usize,
}

impl GaussianAdditive {
    pub fn new(delta: f64, k_f: usize) -> Result<Self> {
        if !(delta > 0.0 && delta.is_finite()) {
            return Err(Error::InvalidArgument(format!("delta must be positive, got {delta}")));
        }
        if k_f == 0 {
            return Err(Error::InvalidArgument("k_F must be positive".into()));
        }
        Ok(Self { delta, k_f })
    }

    pub fn delta(&self) -> f64 {
        self.delta
    }

    pub fn k_f(&self) -> usize {
        self.k_f
    }
}

impl Channel for GaussianAdditive {
    fn name(&self) -> &str {
        "gaussian_additive"
    }

    fn params(&self) -> BTreeMap<String, f64> {
        BTreeMap::from([("delta".into(), self.delta), ("k_f".into(), self.k_f as f64)])
    }

    fn sample(&self, w: f64, rng: &mut SimRng) -> f64 {
        let g: f64 = StandardNormal.sample(rng);
        self.delta.sqrt() * g + w.powi(self.k_f as i32)
    }

    // log p = -(y - w^k)^2 / (2Δ): only orders k_F and 2k_F survive.
    fn score(&self, k: usize, y: f64) -> Option<f64> {
        Some(if k == self.k_f {
            y / self.delta
        } else if k == 2 * self.k_f {
            -0.5 / self.delta
        } else {
            0.0
        })
    }

    fn closed_form_inv_delta(&self, k: usize) -> Option<f64> {
        Some(if k == self.k_f {
            1.0 / self.delta
        } else if k == 2 * self.k_f {
            0.25 / (self.delta * self.delta)
        } else {
            0.0
        })
    }
}

/// `y = |g + γ₀ w|`. Even in `w`, so `k_F = 2` with `1/Δ₂ = γ₀⁴/2`.
#[derive(Debug, Clone, PartialEq)]
pub struct AbsGaussian {
    gamma0: f64,
}

impl AbsGaussian {
    pub fn new(gamma0: f64) -> Result<Self> {
        if !(gamma0 > 0.0 && gamma0.is_finite()) {
            return Err(Error::InvalidArgument(format!("gamma0 must be positive, got {gamma0}")));
        }
        Ok(Self { gamma0 })
    }

    pub fn gamma0(&self) -> f64 {
        self.gamma0
    }
}

impl Channel for AbsGaussian {
    fn name(&self) -> &str {
        "abs_gaussian"
    }

    fn params(&self) -> BTreeMap<String, f64> {
        BTreeMap::from([("gamma0".into(), self.gamma0)])
    }

    fn sample(&self, w: f64, rng: &mut SimRng) -> f64 {
        let g: f64 = StandardNormal.sample(rng);
        (g + self.gamma0 * w).abs()
    }

    // log p(y|w) = log 2φ(y) - (γw)²/2 + log cosh(γ w y), expanded in w.
    fn score(&self, k: usize, y: f64) -> Option<f64> {
        let g2 = self.gamma0 * self.gamma0;
        match k {
            1 | 3 | 5 => Some(0.0),
            2 => Some(g2 * (y * y - 1.0) / 2.0),
            4 => Some(-g2 * g2 * y.powi(4) / 12.0),
            6 => Some(g2 * g2 * g2 * y.powi(6) / 45.0),
            _ => None,
        }
    }

    fn closed_form_inv_delta(&self, k: usize) -> Option<f64> {
        let g4 = self.gamma0.powi(4);
        match k {
            1 | 3 | 5 => Some(0.0),
            2 => Some(g4 / 2.0),
            // E|G|^8 = 105
            4 => Some(g4 * g4 * 105.0 / 144.0),
            _ => None,
        }
    }

    fn has_perron_mode(&self) -> bool {
        true
    }
}

/// `f₀(w) = w - tanh(w) + (2/15) w⁵`, which behaves as `w³/3` near zero.
pub fn f0(w: f64) -> f64 {
    w - w.tanh() + 2.0 / 15.0 * w.powi(5)
}

/// `y = z + f₀(γ₀ w)` with Student-t(ν) noise `z`; `k_F = 3`.
#[derive(Debug, Clone)]
pub struct StudentF0 {
    gamma0: f64,
    nu: f64,
    noise: StudentT<f64>,
}

impl PartialEq for StudentF0 {
    fn eq(&self, other: &Self) -> bool {
        self.gamma0 == other.gamma0 && self.nu == other.nu
    }
}

impl StudentF0 {
    pub const DEFAULT_NU: f64 = 4.1;

    pub fn new(gamma0: f64, nu: f64) -> Result<Self> {
        if !(gamma0 > 0.0 && gamma0.is_finite()) {
            return Err(Error::InvalidArgument(format!("gamma0 must be positive, got {gamma0}")));
        }
        if !(nu > 2.0 && nu.is_finite()) {
            return Err(Error::InvalidArgument(format!("nu must exceed 2, got {nu}")));
        }
        let noise = StudentT::new(nu)
            .map_err(|e| Error::InvalidArgument(format!("student-t({nu}): {e}")))?;
        Ok(Self { gamma0, nu, noise })
    }

    pub fn gamma0(&self) -> f64 {
        self.gamma0
    }

    pub fn nu(&self) -> f64 {
        self.nu
    }

    /// `d/dy log t_ν(y)`.
    pub fn log_density_d1(&self, y: f64) -> f64 {
        -(self.nu + 1.0) * y / (self.nu + y * y)
    }

    /// `d²/dy² log t_ν(y)`.
    pub fn log_density_d2(&self, y: f64) -> f64 {
        let s = self.nu + y * y;
        -(self.nu + 1.0) * (self.nu - y * y) / (s * s)
    }
}

impl Channel for StudentF0 {
    fn name(&self) -> &str {
        "student_f0"
    }

    fn params(&self) -> BTreeMap<String, f64> {
        BTreeMap::from([("gamma0".into(), self.gamma0), ("nu".into(), self.nu)])
    }

    fn sample(&self, w: f64, rng: &mut SimRng) -> f64 {
        self.noise.sample(rng) + f0(self.gamma0 * w)
    }

    // g(y, w) = ℓ(y - s(w)) with s(w) = γ³w³/3 + O(w⁷), ℓ = log t_ν.
    fn score(&self, k: usize, y: f64) -> Option<f64> {
        let g3 = self.gamma0.powi(3);
        match k {
            1 | 2 | 4 | 5 => Some(0.0),
            3 => Some(g3 * (1.0 + self.nu) / 3.0 * y / (y * y + self.nu)),
            6 => Some(g3 * g3 * self.log_density_d2(y) / 18.0),
            _ => None,
        }
    }

    fn closed_form_inv_delta(&self, k: usize) -> Option<f64> {
        match k {
            1 | 2 | 4 | 5 => Some(0.0),
            3 => Some(self.gamma0.powi(6) * (1.0 + self.nu) / (9.0 * (3.0 + self.nu))),
            _ => None,
        }
    }
}

/// Channel as written in an experiment config, e.g.
/// `{"name": "abs_gaussian", "params": {"gamma0": 2.0}}`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChannelSpec {
    pub name: String,
    #[serde(default)]
    pub params: BTreeMap<String, f64>,
}

impl ChannelSpec {
    pub fn new(name: &str, params: &[(&str, f64)]) -> Self {
        Self {
            name: name.to_string(),
            params: params.iter().map(|(k, v)| (k.to_string(), *v)).collect(),
        }
    }

    fn param(&self, key: &str) -> Result<f64> {
        self.params.get(key).copied().ok_or_else(|| {
            Error::InvalidArgument(format!("channel `{}` needs parameter `{key}`", self.name))
        })
    }

    pub fn build(&self) -> Result<Arc<dyn Channel>> {
        Ok(match self.name.as_str() {
            "gaussian_additive" => {
                let k_f = self.params.get("k_f").copied().unwrap_or(1.0);
                if k_f.fract() != 0.0 || k_f < 1.0 {
                    return Err(Error::InvalidArgument(format!("k_f must be a positive integer, got {k_f}")));
                }
                Arc::new(GaussianAdditive::new(self.param("delta")?, k_f as usize)?)
            }
            "abs_gaussian" => Arc::new(AbsGaussian::new(self.param("gamma0")?)?),
            "student_f0" => {
                let nu = self.params.get("nu").copied().unwrap_or(StudentF0::DEFAULT_NU);
                Arc::new(StudentF0::new(self.param("gamma0")?, nu)?)
            }
            other => return Err(Error::UnknownChannel(other.to_string())),
        })
    }

    /// The same channel family at signal amplitude `gamma0`. For the Gaussian
    /// additive channel, `y = g + γ₀ w^{k_F}` is the model with `Δ = 1/γ₀²`.
    pub fn with_gamma0(&self, gamma0: f64) -> Self {
        let mut out = self.clone();
        if self.name == "gaussian_additive" {
            out.params.insert("delta".into(), 1.0 / (gamma0 * gamma0));
        } else {
            out.params.insert("gamma0".into(), gamma0);
        }
        out
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct FisherEntry {
    pub k: usize,
    pub inv_delta: f64,
    pub stderr: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FisherInfo {
    pub k_f: usize,
    pub delta_kf: f64,
    pub inv_delta_table: Vec<FisherEntry>,
    pub beta_cr: f64,
}

/// `β_cr = (1 - 1/k_F)/2`.
pub fn critical_scaling(k_f: usize) -> f64 {
    0.5 * (1.0 - 1.0 / k_f as f64)
}

/// Smallest Monte-Carlo sample size accepted by [`fisher_coefficient`].
pub const MIN_MONTE_CARLO: usize = 10_000;

/// Estimate `1/Δ_k = E[score(k, Y₀)²]` under the null, returning the estimate
/// and its standard error. `n_mc = 0` selects the closed form.
pub fn fisher_coefficient(ch: &dyn Channel, k: usize, n_mc: usize, seed: u64) -> Result<(f64, f64)> {
    if k == 0 {
        return Err(Error::InvalidArgument("Fisher order must be positive".into()));
    }
    if n_mc == 0 {
        return ch
            .closed_form_inv_delta(k)
            .map(|v| (v, 0.0))
            .ok_or_else(|| Error::InvalidArgument(format!(
                "channel `{}` has no closed-form Fisher coefficient of order {k}",
                ch.name()
            )));
    }
    if n_mc < MIN_MONTE_CARLO {
        return Err(Error::InvalidArgument(format!(
            "Monte-Carlo size {n_mc} is below {MIN_MONTE_CARLO}"
        )));
    }
    let mut rng = rng_from_seed(seed);
    let (mut mean, mut m2) = (0.0, 0.0);
    for i in 0..n_mc {
        let y = ch.sample(0.0, &mut rng);
        let s = ch.score(k, y).ok_or_else(|| Error::ScoreUnavailable {
            channel: ch.name().to_string(),
            order: k,
        })?;
        if !s.is_finite() {
            return Err(Error::NonFiniteScore { y, value: s });
        }
        let v = s * s;
        let delta = v - mean;
        mean += delta / (i + 1) as f64;
        m2 += delta * (v - mean);
    }
    let var = m2 / (n_mc - 1) as f64;
    Ok((mean, (var / n_mc as f64).sqrt()))
}

/// Default detection floor for `1/Δ_k`.
pub const DETECTION_TOL: f64 = 1e-4;

/// Scan `k = 1..=k_max` for the first order with `1/Δ_k > max(tol, 5 s.e.)`.
pub fn critical_index(ch: &dyn Channel, k_max: usize, tol: f64, n_mc: usize, seed: u64) -> Result<FisherInfo> {
    if k_max == 0 {
        return Err(Error::InvalidArgument("k_max must be positive".into()));
    }
    let mut table = Vec::new();
    for k in 1..=k_max {
        let (est, se) = fisher_coefficient(ch, k, n_mc, derive_seed(&[seed, k as u64]))?;
        table.push(FisherEntry { k, inv_delta: est, stderr: se });
        if est > tol.max(5.0 * se) {
            return Ok(FisherInfo {
                k_f: k,
                delta_kf: 1.0 / est,
                inv_delta_table: table,
                beta_cr: critical_scaling(k),
            });
        }
    }
    Err(Error::NoFisherInformation { k_max })
}

/// Sample mean and standard error of `score(k, Y₀)` under the null.
pub fn null_score_mean(ch: &dyn Channel, k: usize, n_mc: usize, seed: u64) -> Result<(f64, f64)> {
    let mut rng = rng_from_seed(seed);
    let (mut mean, mut m2) = (0.0, 0.0);
    for i in 0..n_mc {
        let y = ch.sample(0.0, &mut rng);
        let s = ch.score(k, y).ok_or_else(|| Error::ScoreUnavailable {
            channel: ch.name().to_string(),
            order: k,
        })?;
        let delta = s - mean;
        mean += delta / (i + 1) as f64;
        m2 += delta * (s - mean);
    }
    let var = if n_mc > 1 { m2 / (n_mc - 1) as f64 } else { 0.0 };
    Ok((mean, (var / n_mc as f64).sqrt()))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn hermite_he(n: usize, y: f64) -> f64 {
        let (mut a, mut b) = (1.0, y);
        if n == 0 {
            return a;
        }
        for k in 1..n {
            let c = y * b - k as f64 * a;
            a = b;
            b = c;
        }
        b
    }

    #[test]
    fn gaussian_additive_scores() {
        let ch = GaussianAdditive::new(1.0, 1).unwrap();
        assert_eq!(ch.score(1, 0.7), Some(0.7));
        let ch = GaussianAdditive::new(2.0, 3).unwrap();
        assert_eq!(ch.score(1, 0.7), Some(0.0));
        assert_eq!(ch.score(2, 0.7), Some(0.0));
        assert_eq!(ch.score(3, 0.7), Some(0.35));
        assert_eq!(fisher_coefficient(&ch, 3, 0, 1).unwrap(), (0.5, 0.0));
        let info = critical_index(&GaussianAdditive::new(0.5, 1).unwrap(), 4, DETECTION_TOL, 0, 1).unwrap();
        assert_eq!(info.k_f, 1);
        assert_eq!(info.beta_cr, 0.0);
        assert_eq!(info.delta_kf, 0.5);
    }

    #[test]
    fn gaussian_additive_null_is_standard_normal_at_unit_delta() {
        let ch = GaussianAdditive::new(1.0, 1).unwrap();
        let mut rng = rng_from_seed(3);
        let n = 200_000;
        let ys: Vec<f64> = (0..n).map(|_| ch.sample(0.0, &mut rng)).collect();
        let mean = ys.iter().sum::<f64>() / n as f64;
        let var = ys.iter().map(|y| (y - mean).powi(2)).sum::<f64>() / n as f64;
        assert!(mean.abs() < 4.0 / (n as f64).sqrt());
        assert!((var - 1.0).abs() < 0.02);
    }

    #[test]
    fn student_closed_form_value() {
        let ch = StudentF0::new(1.0, 4.1).unwrap();
        let v = ch.closed_form_inv_delta(3).unwrap();
        assert!((v - 5.1 / (9.0 * 7.1)).abs() < 1e-15);
        assert!((v - 0.079_812).abs() < 1e-6);
    }

    #[test]
    fn f0_is_cubic_near_zero() {
        for &w in &[1e-2, 3e-2, 0.1] {
            let rel = (f0(w) - w.powi(3) / 3.0) / (w.powi(3) / 3.0);
            // next term is 17 w^7 / 315
            assert!(rel.abs() < 0.2 * w.powi(4) + 1e-6, "w={w} rel={rel}");
        }
    }

    // Abs channel: ∂_w^i p / p at w = 0 equals γ^i He_i(y) for even i, 0 for odd.
    #[test]
    fn abs_scores_match_cumulant_construction() {
        let ch = AbsGaussian::new(1.7).unwrap();
        let g = ch.gamma0();
        for i in 0..41 {
            let y = i as f64 * 0.15;
            let derivs: Vec<f64> = (1..=6)
                .map(|k| if k % 2 == 0 { g.powi(k as i32) * hermite_he(k, y) } else { 0.0 })
                .collect();
            for k in 1..=6 {
                let want = score_from_density_derivatives(&derivs, k).unwrap();
                let got = ch.score(k, y).unwrap();
                assert!((got - want).abs() <= 1e-10 * want.abs().max(1.0), "k={k} y={y}: {got} vs {want}");
            }
        }
    }

    // Student channel: p(y|w)/p(y|0) = t(y - s(w))/t(y), s(w) = γ³w³/3 + O(w⁷),
    // so the only nonzero ratios below order 7 are x₃ = -2γ³ t'/t and x₆ = 40 γ⁶ t''/t.
    #[test]
    fn student_scores_match_cumulant_construction() {
        let ch = StudentF0::new(1.3, 4.1).unwrap();
        let g3 = ch.gamma0().powi(3);
        for i in 0..41 {
            let y = -4.0 + i as f64 * 0.2;
            let l1 = ch.log_density_d1(y);
            let l2 = ch.log_density_d2(y);
            let t1 = l1;
            let t2 = l2 + l1 * l1;
            let derivs = [0.0, 0.0, -2.0 * g3 * t1, 0.0, 0.0, 40.0 * g3 * g3 * t2];
            for k in 1..=6 {
                let want = score_from_density_derivatives(&derivs, k).unwrap();
                let got = ch.score(k, y).unwrap();
                assert!((got - want).abs() <= 1e-10 * want.abs().max(1.0), "k={k} y={y}: {got} vs {want}");
            }
        }
    }

    #[test]
    fn log_density_derivatives_match_finite_differences() {
        let ch = StudentF0::new(1.0, 4.1).unwrap();
        let logt = |y: f64| -(ch.nu() + 1.0) / 2.0 * (1.0 + y * y / ch.nu()).ln();
        let h = 1e-4;
        for &y in &[-3.0, -0.5, 0.0, 0.8, 2.5] {
            let d1 = (logt(y + h) - logt(y - h)) / (2.0 * h);
            let d2 = (logt(y + h) - 2.0 * logt(y) + logt(y - h)) / (h * h);
            assert!((d1 - ch.log_density_d1(y)).abs() < 1e-7);
            assert!((d2 - ch.log_density_d2(y)).abs() < 1e-5);
        }
    }

    #[test]
    fn specs_build_and_reparameterise() {
        let spec = ChannelSpec::new("abs_gaussian", &[("gamma0", 2.0)]);
        let ch = spec.build().unwrap();
        assert_eq!(ch.name(), "abs_gaussian");
        assert_eq!(ch.closed_form_inv_delta(2), Some(8.0));
        let g = spec.with_gamma0(1.0).build().unwrap();
        assert_eq!(g.closed_form_inv_delta(2), Some(0.5));
        let ga = ChannelSpec::new("gaussian_additive", &[("delta", 1.0)]).with_gamma0(2.0);
        assert_eq!(ga.build().unwrap().closed_form_inv_delta(1), Some(4.0));
        assert!(ChannelSpec::new("nope", &[]).build().is_err());
        assert!(ChannelSpec::new("abs_gaussian", &[]).build().is_err());
        assert!(ChannelSpec::new("student_f0", &[("gamma0", 1.0), ("nu", 1.5)]).build().is_err());
    }

    #[test]
    fn monte_carlo_guards() {
        let ch = AbsGaussian::new(1.0).unwrap();
        assert!(fisher_coefficient(&ch, 2, 100, 0).is_err());
        assert!(fisher_coefficient(&ch, 7, 0, 0).is_err());
        assert!(matches!(
            fisher_coefficient(&ch, 7, MIN_MONTE_CARLO, 0),
            Err(Error::ScoreUnavailable { order: 7, .. })
        ));
    }

    #[derive(Debug)]
    struct Exploding;

    impl Channel for Exploding {
        fn name(&self) -> &str {
            "exploding"
        }
        fn params(&self) -> BTreeMap<String, f64> {
            BTreeMap::new()
        }
        fn sample(&self, _w: f64, _rng: &mut SimRng) -> f64 {
            0.0
        }
        fn score(&self, _k: usize, y: f64) -> Option<f64> {
            Some(1.0 / y)
        }
    }

    #[test]
    fn non_finite_scores_name_the_input() {
        match fisher_coefficient(&Exploding, 1, MIN_MONTE_CARLO, 0) {
            Err(Error::NonFiniteScore { y, .. }) => assert_eq!(y, 0.0),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[derive(Debug)]
    struct Silent;

    impl Channel for Silent {
        fn name(&self) -> &str {
            "silent"
        }
        fn params(&self) -> BTreeMap<String, f64> {
            BTreeMap::new()
        }
        fn sample(&self, _w: f64, _rng: &mut SimRng) -> f64 {
            0.0
        }
        fn score(&self, _k: usize, _y: f64) -> Option<f64> {
            Some(0.0)
        }
        fn closed_form_inv_delta(&self, _k: usize) -> Option<f64> {
            Some(0.0)
        }
    }

    #[test]
    fn no_information_is_an_error() {
        let err = critical_index(&Silent, 5, DETECTION_TOL, 0, 0).unwrap_err();
        assert_eq!(err.to_string(), "no finite Fisher information up to k_max = 5");
    }
}
