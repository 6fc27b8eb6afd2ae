//! Dimension-free predictions for the equivalent Gaussian model
//! `x̃ x̃ᵀ/√N + √Δ Z` with `x̃ ~ π_{k_F}`: state evolution, the replica
//! symmetric functional and the MSE curves of each estimator.

use serde::Serialize;

use crate::channels::{critical_index, Channel, FisherInfo, DETECTION_TOL};
use crate::error::{Error, Result};
use crate::priors::DiscretePrior;
use crate::quadrature::GaussHermite;

/// `SE(q, Δ) = E[η(q/Δ, (q/Δ) x̃ + √(q/Δ) G) x̃]`.
pub fn se_map(p: &DiscretePrior, q: f64, delta: f64) -> f64 {
    if q <= 0.0 {
        let m = p.mean();
        return m * m;
    }
    let s = q / delta;
    let rs = s.sqrt();
    let rule = GaussHermite::standard();
    p.atoms()
        .iter()
        .zip(p.weights())
        .map(|(&xt, &w)| w * xt * rule.expect(|g| p.denoise(s, s * xt + rs * g)))
        .sum()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct SeFixedPoint {
    pub q: f64,
    pub iterations: usize,
    pub converged: bool,
}

pub const SE_TOL: f64 = 1e-10;
pub const SE_MAX_ITER: usize = 10_000;

/// Iterate `q ← SE(q, Δ)` from `q_init`.
pub fn se_fixed_point(p: &DiscretePrior, delta: f64, q_init: f64, tol: f64, max_iter: usize) -> SeFixedPoint {
    let mut q = q_init.max(0.0);
    for it in 1..=max_iter {
        let next = se_map(p, q, delta);
        let step = (next - q).abs();
        q = next;
        if step < tol {
            return SeFixedPoint { q, iterations: it, converged: true };
        }
    }
    SeFixedPoint { q, iterations: max_iter, converged: false }
}

/// `[q_0, q_1, ..., q_t_max]` with `q_{t+1} = SE(q_t, Δ)`.
pub fn se_trajectory(p: &DiscretePrior, delta: f64, q_init: f64, t_max: usize) -> Vec<f64> {
    let mut out = Vec::with_capacity(t_max + 1);
    let mut q = q_init.max(0.0);
    out.push(q);
    for _ in 0..t_max {
        q = se_map(p, q, delta);
        out.push(q);
    }
    out
}

/// `F(Δ, q) = -q²/(4Δ) + E log Σ_m w_m exp(√(q/Δ) G m + (q/Δ) x̃ m - q m²/(2Δ))`.
pub fn replica_functional(p: &DiscretePrior, delta: f64, q: f64) -> f64 {
    if q <= 0.0 {
        return 0.0;
    }
    let s = q / delta;
    let rs = s.sqrt();
    let rule = GaussHermite::standard();
    let log_w: Vec<f64> = p.weights().iter().map(|w| w.ln()).collect();
    let entropy: f64 = p
        .atoms()
        .iter()
        .zip(p.weights())
        .map(|(&xt, &w)| {
            w * rule.expect(|g| {
                let b = rs * g + s * xt;
                let mut mx = f64::NEG_INFINITY;
                for (m, lw) in p.atoms().iter().zip(&log_w) {
                    mx = mx.max(lw + b * m - 0.5 * s * m * m);
                }
                let sum: f64 = p
                    .atoms()
                    .iter()
                    .zip(&log_w)
                    .map(|(m, lw)| (lw + b * m - 0.5 * s * m * m - mx).exp())
                    .sum();
                mx + sum.ln()
            })
        })
        .sum();
    -q * q / (4.0 * delta) + entropy
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ReplicaMaximum {
    pub q_star: f64,
    pub f_value: f64,
    pub local_maxima: Vec<f64>,
}

pub const DEFAULT_GRID_POINTS: usize = 2001;

fn golden_max<F: Fn(f64) -> f64>(f: F, mut lo: f64, mut hi: f64) -> (f64, f64) {
    let r = (5f64.sqrt() - 1.0) / 2.0;
    let mut c = hi - r * (hi - lo);
    let mut d = lo + r * (hi - lo);
    let (mut fc, mut fd) = (f(c), f(d));
    for _ in 0..200 {
        if hi - lo <= 1e-13 * hi.abs().max(1.0) {
            break;
        }
        if fc >= fd {
            hi = d;
            d = c;
            fd = fc;
            c = hi - r * (hi - lo);
            fc = f(c);
        } else {
            lo = c;
            c = d;
            fc = fd;
            d = lo + r * (hi - lo);
            fd = f(d);
        }
    }
    let mut best = (0.5 * (lo + hi), f(0.5 * (lo + hi)));
    for cand in [(lo, f(lo)), (hi, f(hi)), (c, fc), (d, fd)] {
        if cand.1 > best.1 {
            best = cand;
        }
    }
    best
}

/// Since `∂_q F = (SE(q, Δ) - q)/(2Δ)`, a bracket where `SE(q) - q` goes from
/// nonnegative to nonpositive contains a maximiser that bisection pins down
/// far more sharply than comparing the flat values of `F` itself.
fn refine_max(p: &DiscretePrior, delta: f64, mut lo: f64, mut hi: f64, at_end: bool) -> Option<(f64, f64)> {
    let g = |q: f64| se_map(p, q, delta) - q;
    let (g_lo, g_hi) = (g(lo), g(hi));
    if at_end && g_hi >= 0.0 {
        return Some((hi, replica_functional(p, delta, hi)));
    }
    if !(g_lo >= 0.0 && g_hi <= 0.0) {
        return None;
    }
    for _ in 0..200 {
        if hi - lo <= 1e-15 * hi.max(1.0) {
            break;
        }
        let mid = 0.5 * (lo + hi);
        if g(mid) >= 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Some((lo, replica_functional(p, delta, lo)))
}

/// Global maximiser of `F(Δ, ·)` on `[0, m_{2k_F}]`: grid scan, then golden
/// section inside the bracket of every local grid maximum.
pub fn replica_maximizer(p: &DiscretePrior, delta: f64, grid_points: usize) -> Result<ReplicaMaximum> {
    if grid_points < 101 {
        return Err(Error::InvalidArgument(format!("need at least 101 grid points, got {grid_points}")));
    }
    if delta.is_nan() || delta <= 0.0 {
        return Err(Error::InvalidArgument(format!("delta must be positive, got {delta}")));
    }
    let upper = p.moment(2);
    if upper == 0.0 {
        return Ok(ReplicaMaximum { q_star: 0.0, f_value: 0.0, local_maxima: vec![0.0] });
    }
    let h = upper / (grid_points - 1) as f64;
    let grid: Vec<f64> = (0..grid_points).map(|i| i as f64 * h).collect();
    let vals: Vec<f64> = grid.iter().map(|&q| replica_functional(p, delta, q)).collect();
    let f = |q: f64| replica_functional(p, delta, q);
    let mut maxima: Vec<(f64, f64)> = Vec::new();
    for i in 0..grid_points {
        let left = i == 0 || vals[i] >= vals[i - 1];
        let right = i + 1 == grid_points || vals[i] >= vals[i + 1];
        if left && right {
            let lo = grid[i.saturating_sub(1)];
            let hi = grid[(i + 1).min(grid_points - 1)];
            let refined = refine_max(p, delta, lo, hi, i + 1 == grid_points).unwrap_or_else(|| golden_max(f, lo, hi));
            if maxima.last().is_none_or(|m| (m.0 - refined.0).abs() > 2.0 * h) {
                maxima.push(refined);
            } else if let Some(last) = maxima.last_mut() {
                if refined.1 > last.1 {
                    *last = refined;
                }
            }
        }
    }
    let best = maxima
        .iter()
        .copied()
        .fold((0.0, f64::NEG_INFINITY), |acc, m| if m.1 > acc.1 { m } else { acc });
    Ok(ReplicaMaximum {
        q_star: best.0,
        f_value: best.1,
        local_maxima: maxima.into_iter().map(|m| m.0).collect(),
    })
}

/// Fixed points of `q ↦ SE(q, Δ)` on `[0, m_{2k_F}]`, located by sign changes
/// of `SE(q) - q` on a grid and refined by bisection.
pub fn se_fixed_points(p: &DiscretePrior, delta: f64, grid_points: usize) -> Vec<f64> {
    let upper = p.moment(2);
    let g = |q: f64| se_map(p, q, delta) - q;
    let mut out = Vec::new();
    if g(0.0).abs() < 1e-14 {
        out.push(0.0);
    }
    if upper == 0.0 {
        return out;
    }
    let n = grid_points.max(2);
    let h = upper / (n - 1) as f64;
    let mut prev = (h * 1e-6, g(h * 1e-6));
    for i in 1..n {
        let q = i as f64 * h;
        let cur = (q, g(q));
        if cur.1 == 0.0 {
            out.push(q);
        } else if prev.1 != 0.0 && prev.1.signum() != cur.1.signum() {
            let (mut lo, mut hi) = (prev, cur);
            for _ in 0..100 {
                let mid = 0.5 * (lo.0 + hi.0);
                let gm = g(mid);
                if gm.signum() == lo.1.signum() {
                    lo = (mid, gm);
                } else {
                    hi = (mid, gm);
                }
            }
            out.push(0.5 * (lo.0 + hi.0));
        }
        prev = cur;
    }
    out
}

/// `q₀ = √(1 - Δ/m²)` above the spectral threshold `Δ < m²`, else 0.
pub fn spectral_overlap_prediction(delta: f64, m2kf: f64) -> f64 {
    if delta >= m2kf * m2kf {
        0.0
    } else {
        (1.0 - delta / (m2kf * m2kf)).sqrt()
    }
}

/// Overlap `E[x̃ x̂]` carried by the rescaled top eigenvector `√(m q₀²) √N v₁`;
/// the starting point of state evolution for spectrally initialised AMP.
pub fn spectral_se_start(delta: f64, m2kf: f64) -> f64 {
    let q0 = spectral_overlap_prediction(delta, m2kf);
    m2kf * q0 * q0
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AsymptoticPrediction {
    pub delta: f64,
    pub m2kf: f64,
    pub q0: f64,
    pub q1: f64,
    pub q_inf: f64,
    pub q_star: f64,
    pub mmse: f64,
    pub pca_mse: f64,
    pub denoised_mse: f64,
    pub amp_mse: f64,
    pub fixed_points: Vec<f64>,
}

fn mse_from_overlap(q: f64, m2kf: f64) -> f64 {
    (1.0 - (q / m2kf).powi(2)).clamp(0.0, 1.0)
}

/// All predicted curves for the pushforward prior `p_kf` at Fisher noise `delta`.
pub fn predict(p_kf: &DiscretePrior, delta: f64) -> Result<AsymptoticPrediction> {
    predict_with_grid(p_kf, delta, DEFAULT_GRID_POINTS)
}

/// [`predict`] with an explicit replica grid size.
pub fn predict_with_grid(p_kf: &DiscretePrior, delta: f64, grid_points: usize) -> Result<AsymptoticPrediction> {
    if !(delta > 0.0 && delta.is_finite()) {
        return Err(Error::InvalidArgument(format!("delta must be positive, got {delta}")));
    }
    let m2kf = p_kf.moment(2);
    if m2kf == 0.0 {
        return Err(Error::InvalidPrior("pushforward prior has zero second moment".into()));
    }
    let q0 = spectral_overlap_prediction(delta, m2kf);
    let start = spectral_se_start(delta, m2kf);
    let q1 = se_map(p_kf, start, delta);
    let q_inf = se_fixed_point(p_kf, delta, start, SE_TOL, SE_MAX_ITER).q;
    let q_star = replica_maximizer(p_kf, delta, grid_points)?.q_star;
    Ok(AsymptoticPrediction {
        delta,
        m2kf,
        q0,
        q1,
        q_inf,
        q_star,
        mmse: mse_from_overlap(q_star, m2kf),
        pca_mse: 2.0 * (1.0 - q0 * q0),
        denoised_mse: mse_from_overlap(q1, m2kf),
        amp_mse: mse_from_overlap(q_inf, m2kf),
        fixed_points: se_fixed_points(p_kf, delta, 400),
    })
}

/// Fisher information of `ch` (closed form) followed by [`predict`] on the
/// pushforward of `prior` by `x ↦ x^{k_F}`.
pub fn predict_all(ch: &dyn Channel, prior: &DiscretePrior, k_max: usize) -> Result<(FisherInfo, AsymptoticPrediction)> {
    let info = critical_index(ch, k_max, DETECTION_TOL, 0, 0)?;
    let p_kf = prior.pushforward(info.k_f as u32);
    let pred = predict(&p_kf, info.delta_kf)?;
    Ok((info, pred))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn se_at_zero_is_squared_mean() {
        assert_eq!(se_map(&DiscretePrior::rademacher(), 0.0, 0.3), 0.0);
        let p = DiscretePrior::skewed_pair().pushforward(2);
        assert!((se_map(&p, 0.0, 1.0) - 0.25).abs() < 1e-15);
    }

    #[test]
    fn se_saturates_for_rademacher() {
        let v = se_map(&DiscretePrior::rademacher(), 1.0, 1e-3);
        assert!((v - 1.0).abs() < 1e-10);
    }

    #[test]
    fn point_mass_replica_maximum() {
        let p = DiscretePrior::point_mass(0.8).unwrap();
        for delta in [0.1, 1.0, 5.0] {
            let r = replica_maximizer(&p, delta, 201).unwrap();
            assert!((r.q_star - 0.64).abs() < 1e-8, "{delta}: {r:?}");
        }
    }

    #[test]
    fn subthreshold_rademacher_has_no_recovery() {
        let p = DiscretePrior::rademacher();
        let pred = predict(&p, 1.2).unwrap();
        assert_eq!(pred.q0, 0.0);
        assert!(pred.q_star < 1e-6);
        assert_eq!(pred.q_inf, 0.0);
        assert_eq!(pred.mmse, 1.0);
        assert_eq!(pred.pca_mse, 2.0);
    }

    #[test]
    fn spectral_prediction_values() {
        assert_eq!(spectral_overlap_prediction(1.0, 1.0), 0.0);
        let q0 = spectral_overlap_prediction(0.0512, 0.375);
        assert!((q0 - 0.797_44).abs() < 1e-5);
        assert!((spectral_overlap_prediction(1e-12, 1.0) - 1.0).abs() < 1e-9);
    }

    #[test]
    fn replica_guards() {
        let p = DiscretePrior::rademacher();
        assert!(replica_maximizer(&p, 1.0, 100).is_err());
        assert!(replica_maximizer(&p, 0.0, 101).is_err());
        assert_eq!(replica_functional(&p, 1.0, 0.0), 0.0);
    }
}
