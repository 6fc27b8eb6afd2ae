//! Approximate message passing on `A = S_{k_F}/√N` with separable
//! Bayes-optimal denoisers, spectral initialisation and state-evolution
//! bookkeeping; plus the linearised variant whose fixed point is PCA.

use rand_distr::{Distribution, StandardNormal};
use serde::Serialize;

use crate::asymptotics::spectral_overlap_prediction;
use crate::channels::FisherInfo;
use crate::ensemble::{dot, fisher_matrix, matrix_mse, norm, PlantedInstance, SymMatrix};
use crate::error::{Error, Result};
use crate::priors::DiscretePrior;
use crate::rng::rng_from_seed;
use crate::spectral::{orientation, top_eigs, EigenPair, EIG_MAX_ITER, EIG_TOL};

#[derive(Debug, Clone, PartialEq)]
pub struct AmpState {
    pub t: usize,
    pub x_hat: Vec<f64>,
    pub x_hat_prev: Vec<f64>,
    pub h: Vec<f64>,
    /// `⟨x̂_t, x̂_t⟩/(αN)`, the denoiser strength that produced `x̂_{t+1}`.
    pub q_emp: f64,
    /// Denoiser strength used to produce `x̂_t` from `h`.
    pub a_used: f64,
}

impl AmpState {
    /// State right after the first denoising step, with `x̂₋₁ = 0`.
    pub fn initial(x_hat: Vec<f64>, h: Vec<f64>, a_used: f64, alpha: f64) -> Self {
        let n = x_hat.len();
        let q_emp = dot(&x_hat, &x_hat) / (alpha * n as f64);
        Self { t: 0, x_hat_prev: vec![0.0; n], x_hat, h, q_emp, a_used }
    }
}

/// One AMP iteration:
/// `h_{t+1} = A x̂_t - (1/(αN)) Σᵢ ∂_b η(a_t, h_{t,i}) x̂_{t-1}`,
/// `a_{t+1} = ⟨x̂_t, x̂_t⟩/(αN)`, `x̂_{t+1} = η(a_{t+1}, h_{t+1})`.
/// With `onsager = false` the memory term is dropped (diagnostic only).
pub fn amp_step(a: &SymMatrix, p_kf: &DiscretePrior, alpha: f64, s: &AmpState, onsager: bool) -> Result<AmpState> {
    let n = s.x_hat.len();
    if a.n() != n {
        return Err(Error::DimensionMismatch(format!("matrix {} vs state {n}", a.n())));
    }
    let mut h = a.matvec(&s.x_hat);
    if onsager {
        let div: f64 = s.h.iter().map(|&b| p_kf.denoise_derivative(s.a_used, b)).sum();
        let b = div / (alpha * n as f64);
        h.iter_mut().zip(&s.x_hat_prev).for_each(|(hi, xp)| *hi -= b * xp);
    }
    if h.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFiniteField { iteration: s.t + 1 });
    }
    let a_next = dot(&s.x_hat, &s.x_hat) / (alpha * n as f64);
    let x_next: Vec<f64> = h.iter().map(|&b| p_kf.denoise(a_next, b)).collect();
    let q_emp = dot(&x_next, &x_next) / (alpha * n as f64);
    Ok(AmpState { t: s.t + 1, x_hat_prev: s.x_hat.clone(), x_hat: x_next, h, q_emp, a_used: a_next })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct AmpConfig {
    pub max_iter: usize,
    pub stop_tol: f64,
    pub onsager: bool,
    pub eig_tol: f64,
    pub eig_max_iter: usize,
}

impl Default for AmpConfig {
    fn default() -> Self {
        Self { max_iter: 200, stop_tol: 1e-7, onsager: true, eig_tol: EIG_TOL, eig_max_iter: EIG_MAX_ITER }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct AmpRecord {
    pub t: usize,
    /// `|⟨x^{k_F}, x̂_t⟩|/N`, comparable with the state-evolution `q_t`.
    pub overlap: f64,
    pub mse: f64,
    pub q_emp: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AmpRun {
    /// Starts at `t = 0` (the rescaled eigenvector) and ends at the last iterate.
    pub trajectory: Vec<AmpRecord>,
    pub x_hat: Vec<f64>,
    pub converged: bool,
    pub eigenpair: EigenPair,
}

fn record(t: usize, u: &[f64], x: &[f64], q_emp: f64) -> Result<AmpRecord> {
    let n = u.len() as f64;
    Ok(AmpRecord { t, overlap: dot(u, x).abs() / n, mse: matrix_mse(u, x)?, q_emp })
}

/// AMP from a given spectral direction `v1` (unit norm, already oriented).
///
/// `x̂₀ = √(m q₀²) √N v₁` carries overlap `m q₀²`, the state-evolution
/// starting point. Its first field is `h₁ = (m/Δ) x̂₀`, which is `A x̂₀` with the
/// bulk contribution of the eigenvalue removed, so that `x̂₁` is exactly the
/// denoised-PCA estimate. Afterwards the standard iteration runs.
pub fn amp_from_direction(
    a: &SymMatrix,
    p_kf: &DiscretePrior,
    delta: f64,
    v1: &[f64],
    u: &[f64],
    cfg: &AmpConfig,
) -> Result<(Vec<AmpRecord>, Vec<f64>, bool)> {
    let n = v1.len();
    let m2kf = p_kf.moment(2);
    let q0 = spectral_overlap_prediction(delta, m2kf);
    let c0 = (m2kf * q0 * q0).sqrt() * (n as f64).sqrt();
    let x0: Vec<f64> = v1.iter().map(|v| c0 * v).collect();
    let h1: Vec<f64> = if cfg.onsager {
        x0.iter().map(|x| m2kf / delta * x).collect()
    } else {
        a.matvec(&x0)
    };
    let a1 = dot(&x0, &x0) / (delta * n as f64);
    let x1: Vec<f64> = h1.iter().map(|&b| p_kf.denoise(a1, b)).collect();

    let mut traj = vec![record(0, u, &x0, a1)?];
    let mut state = AmpState::initial(x1, h1, a1, delta);
    state.x_hat_prev = x0;
    state.t = 1;
    traj.push(record(1, u, &state.x_hat, state.q_emp)?);
    let mut converged = false;
    while state.t < cfg.max_iter {
        let next = amp_step(a, p_kf, delta, &state, cfg.onsager)?;
        let diff: f64 =
            next.x_hat.iter().zip(&state.x_hat).map(|(p, q)| (p - q).powi(2)).sum::<f64>().sqrt();
        traj.push(record(next.t, u, &next.x_hat, next.q_emp)?);
        state = next;
        if diff / (n as f64).sqrt() < cfg.stop_tol {
            converged = true;
            break;
        }
    }
    Ok((traj, state.x_hat, converged))
}

/// `S_{k_F}/√N` for an instance.
pub fn scaled_fisher(inst: &PlantedInstance, k_f: usize) -> Result<SymMatrix> {
    let s = fisher_matrix(inst.channel.as_ref(), inst, k_f)?;
    Ok(s.scaled(1.0 / (inst.n as f64).sqrt()))
}

/// Full pipeline: Fisher matrix, top eigenvector, orientation, AMP.
/// Overlaps and MSEs are measured against `x^{k_F}`.
pub fn run_amp(inst: &PlantedInstance, fisher: &FisherInfo, p_kf: &DiscretePrior, cfg: &AmpConfig, seed: u64) -> Result<AmpRun> {
    let a = scaled_fisher(inst, fisher.k_f)?;
    run_amp_on(&a, inst, fisher, p_kf, cfg, seed)
}

/// As [`run_amp`] with a precomputed `S_{k_F}/√N`.
pub fn run_amp_on(
    a: &SymMatrix,
    inst: &PlantedInstance,
    fisher: &FisherInfo,
    p_kf: &DiscretePrior,
    cfg: &AmpConfig,
    seed: u64,
) -> Result<AmpRun> {
    let eig = top_eigs(a, 1, cfg.eig_tol, cfg.eig_max_iter, seed)?.remove(0);
    let m2kf = p_kf.moment(2);
    let q0 = spectral_overlap_prediction(fisher.delta_kf, m2kf);
    let sign = orientation(p_kf, &eig.vector, q0, m2kf);
    let v1: Vec<f64> = eig.vector.iter().map(|v| sign * v).collect();
    let u = inst.signal_power(fisher.k_f);
    let (trajectory, x_hat, converged) = amp_from_direction(a, p_kf, fisher.delta_kf, &v1, &u, cfg)?;
    Ok(AmpRun { trajectory, x_hat, converged, eigenpair: eig })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct LinearRecord {
    pub t: usize,
    pub mu: f64,
    /// `|⟨x^{k_F}, v^t⟩|/(‖x^{k_F}‖ ‖v^t‖)`.
    pub overlap: f64,
    pub mse: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LinearizedRun {
    pub trajectory: Vec<LinearRecord>,
    /// Limit of the `μ` recursion: `0` or `√(m²/Δ - 1)`.
    pub mu_limit: f64,
    pub predicted_overlap: f64,
}

/// Fixed point of `μ ↦ θ μ/√(1+μ²)`, `θ = m/√Δ`.
pub fn linear_mu_limit(m2kf: f64, delta: f64) -> f64 {
    let theta2 = m2kf * m2kf / delta;
    if theta2 > 1.0 {
        (theta2 - 1.0).sqrt()
    } else {
        0.0
    }
}

/// AMP with linear denoisers `g_t(v) = v/√(1+μ_t²)` on `M = √Δ S/√N`,
/// from a seeded Gaussian start. `μ` follows `μ_{t+1} = θ μ_t/√(1+μ_t²)`.
pub fn linearized_amp(inst: &PlantedInstance, fisher: &FisherInfo, m2kf: f64, t_max: usize, seed: u64) -> Result<LinearizedRun> {
    let s = scaled_fisher(inst, fisher.k_f)?;
    let m = s.scaled(fisher.delta_kf.sqrt());
    let u = inst.signal_power(fisher.k_f);
    linearized_amp_on(&m, &u, fisher.delta_kf, m2kf, t_max, seed)
}

/// As [`linearized_amp`] on a precomputed `M = √Δ S/√N`.
pub fn linearized_amp_on(m: &SymMatrix, u: &[f64], delta: f64, m2kf: f64, t_max: usize, seed: u64) -> Result<LinearizedRun> {
    let n = m.n();
    let theta = m2kf / delta.sqrt();
    let mut rng = rng_from_seed(seed);
    let mut v: Vec<f64> = (0..n).map(|_| StandardNormal.sample(&mut rng)).collect();
    let mut v_hat_prev = vec![0.0; n];
    let mut mu: f64 = 1.0;
    let scale_est = (n as f64 * m2kf).sqrt();
    let mut traj = Vec::with_capacity(t_max + 1);
    let push = |t: usize, mu: f64, v: &[f64], traj: &mut Vec<LinearRecord>| -> Result<()> {
        let nv = norm(v);
        if nv == 0.0 {
            return Err(Error::ZeroNorm);
        }
        let est: Vec<f64> = v.iter().map(|x| scale_est * x / nv).collect();
        traj.push(LinearRecord {
            t,
            mu,
            overlap: dot(u, v).abs() / (norm(u) * nv),
            mse: matrix_mse(u, &est)?,
        });
        Ok(())
    };
    push(0, mu, &v, &mut traj)?;
    for t in 0..t_max {
        let g = 1.0 / (1.0 + mu * mu).sqrt();
        let v_hat: Vec<f64> = v.iter().map(|x| g * x).collect();
        let mut next = m.matvec(&v_hat);
        next.iter_mut().zip(&v_hat_prev).for_each(|(x, p)| *x -= g * p);
        if next.iter().any(|x| !x.is_finite()) {
            return Err(Error::NonFiniteField { iteration: t + 1 });
        }
        // keep the iterate at unit scale per entry; the estimator is
        // direction-only so this does not change any reported quantity
        let rescale = (n as f64).sqrt() / norm(&next).max(f64::MIN_POSITIVE);
        next.iter_mut().for_each(|x| *x *= rescale);
        v_hat_prev = v_hat.iter().map(|x| x * rescale).collect();
        mu = theta * mu / (1.0 + mu * mu).sqrt();
        v = next;
        push(t + 1, mu, &v, &mut traj)?;
    }
    Ok(LinearizedRun {
        trajectory: traj,
        mu_limit: linear_mu_limit(m2kf, delta),
        predicted_overlap: spectral_overlap_prediction(delta, m2kf),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn point_mass_is_stationary_after_one_step() {
        let p = DiscretePrior::point_mass(0.5).unwrap();
        let a = SymMatrix::from_upper(6, |i, j| ((i + 2 * j) % 5) as f64 - 2.0);
        let s = AmpState::initial(vec![0.5; 6], vec![1.0; 6], 1.0, 1.0);
        let s1 = amp_step(&a, &p, 1.0, &s, true).unwrap();
        let s2 = amp_step(&a, &p, 1.0, &s1, true).unwrap();
        assert!(s1.x_hat.iter().all(|v| *v == 0.5));
        assert_eq!(s1.x_hat, s2.x_hat);
    }

    #[test]
    fn zero_previous_iterate_removes_memory_term() {
        let p = DiscretePrior::rademacher();
        let a = SymMatrix::from_upper(4, |i, j| (i as f64 - j as f64).cos());
        let x = vec![0.3, -0.1, 0.5, 0.2];
        let s = AmpState::initial(x.clone(), vec![0.7, -0.2, 0.1, 1.0], 0.4, 0.5);
        let with = amp_step(&a, &p, 0.5, &s, true).unwrap();
        let without = amp_step(&a, &p, 0.5, &s, false).unwrap();
        assert_eq!(with.h, a.matvec(&x));
        assert_eq!(with.x_hat, without.x_hat);
    }

    #[test]
    fn non_finite_field_reports_iteration() {
        let p = DiscretePrior::rademacher();
        let a = SymMatrix::from_upper(2, |_, _| f64::INFINITY);
        let s = AmpState::initial(vec![1.0, 1.0], vec![0.0; 2], 1.0, 1.0);
        match amp_step(&a, &p, 1.0, &s, true) {
            Err(Error::NonFiniteField { iteration }) => assert_eq!(iteration, 1),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn mu_limits() {
        assert_eq!(linear_mu_limit(1.0, 2.0), 0.0);
        assert!((linear_mu_limit(1.0, 0.25) - 3f64.sqrt()).abs() < 1e-15);
    }
}
