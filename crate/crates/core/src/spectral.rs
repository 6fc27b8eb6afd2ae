//! Top eigenpairs of dense symmetric matrices, eigengaps, and the PCA and
//! denoised-PCA estimators built on the Fisher matrix.

use nalgebra::{DMatrix, SymmetricEigen};
use rand_distr::{Distribution, StandardNormal};
use serde::Serialize;

use crate::asymptotics::{se_map, spectral_overlap_prediction, spectral_se_start};
use crate::ensemble::{dot, norm, PlantedInstance, SymMatrix};
use crate::error::{Error, Result};
use crate::priors::DiscretePrior;
use crate::rng::rng_from_seed;

pub const EIG_TOL: f64 = 1e-8;
/// Budget in matrix-vector products.
pub const EIG_MAX_ITER: usize = 10_000;

/// Below this size the dense solver is both faster and exact.
const DENSE_CUTOFF: usize = 64;
const KRYLOV_CAP: usize = 400;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EigenPair {
    pub value: f64,
    pub vector: Vec<f64>,
    pub iterations: usize,
    pub residual: f64,
}

fn fix_sign(v: &mut [f64]) {
    if let Some(first) = v.iter().find(|x| **x != 0.0) {
        if *first < 0.0 {
            v.iter_mut().for_each(|x| *x = -*x);
        }
    }
}

fn residual(a: &SymMatrix, lambda: f64, v: &[f64]) -> f64 {
    let av = a.matvec(v);
    av.iter().zip(v).map(|(x, y)| (x - lambda * y).powi(2)).sum::<f64>().sqrt()
}

fn dense_top(a: &SymMatrix, m: usize) -> Vec<EigenPair> {
    let eig = SymmetricEigen::new(a.to_dmatrix());
    let mut order: Vec<usize> = (0..a.n()).collect();
    order.sort_by(|&i, &j| eig.eigenvalues[j].total_cmp(&eig.eigenvalues[i]));
    order
        .into_iter()
        .take(m)
        .map(|i| {
            let mut v: Vec<f64> = eig.eigenvectors.column(i).iter().copied().collect();
            let nv = norm(&v);
            v.iter_mut().for_each(|x| *x /= nv);
            fix_sign(&mut v);
            let value = eig.eigenvalues[i];
            EigenPair { residual: residual(a, value, &v), value, vector: v, iterations: 0 }
        })
        .collect()
}

/// Orthogonalise `w` against every basis vector, twice for stability.
fn reorthogonalise(basis: &[Vec<f64>], w: &mut [f64]) {
    for _ in 0..2 {
        for b in basis {
            let c = dot(b, w);
            w.iter_mut().zip(b).for_each(|(x, y)| *x -= c * y);
        }
    }
}

/// The `m` algebraically largest eigenpairs of `a`, by explicitly restarted
/// Lanczos with full reorthogonalisation. Convergence requires the true
/// residual `‖Av - λv‖ <= tol · max(1, |λ|)` for every returned pair;
/// `max_iter` bounds the number of matrix-vector products. Each vector's
/// first nonzero coordinate is positive.
pub fn top_eigs(a: &SymMatrix, m: usize, tol: f64, max_iter: usize, seed: u64) -> Result<Vec<EigenPair>> {
    let n = a.n();
    if m == 0 || m > n {
        return Err(Error::InvalidArgument(format!("cannot take {m} eigenpairs of an {n}x{n} matrix")));
    }
    if n <= DENSE_CUTOFF {
        return Ok(dense_top(a, m));
    }
    let mut rng = rng_from_seed(seed);
    let kdim = n.min(KRYLOV_CAP).max(m + 2);
    let mut start: Vec<f64> = (0..n).map(|_| StandardNormal.sample(&mut rng)).collect();
    let mut matvecs = 0usize;
    let mut last_residual = f64::INFINITY;

    loop {
        let ns = norm(&start);
        start.iter_mut().for_each(|x| *x /= ns);
        let mut basis: Vec<Vec<f64>> = vec![start.clone()];
        let mut alpha: Vec<f64> = Vec::new();
        let mut beta: Vec<f64> = Vec::new();
        let mut next_check = (m + 8).min(kdim);
        let mut ritz: Option<(Vec<f64>, DMatrix<f64>)> = None;

        for j in 0..kdim {
            let mut w = a.matvec(&basis[j]);
            matvecs += 1;
            let aj = dot(&w, &basis[j]);
            alpha.push(aj);
            reorthogonalise(&basis, &mut w);
            let mut bj = norm(&w);
            let steps = j + 1;
            let full = steps == kdim || steps == n;
            if bj <= 1e-12 * aj.abs().max(1.0) && !full {
                // invariant subspace: continue with a fresh random direction
                let mut fresh: Vec<f64> = (0..n).map(|_| StandardNormal.sample(&mut rng)).collect();
                reorthogonalise(&basis, &mut fresh);
                let nf = norm(&fresh);
                fresh.iter_mut().for_each(|x| *x /= nf);
                w = fresh;
                bj = 0.0;
            } else if bj > 0.0 {
                w.iter_mut().for_each(|x| *x /= bj);
            }
            if steps >= next_check || full || matvecs >= max_iter {
                let t = tridiagonal(&alpha, &beta);
                let eig = SymmetricEigen::new(t);
                let mut order: Vec<usize> = (0..steps).collect();
                order.sort_by(|&p, &q| eig.eigenvalues[q].total_cmp(&eig.eigenvalues[p]));
                let top: Vec<usize> = order.into_iter().take(m.min(steps)).collect();
                let estimate = top
                    .iter()
                    .map(|&c| {
                        let lam = eig.eigenvalues[c];
                        (bj * eig.eigenvectors[(steps - 1, c)]).abs() / lam.abs().max(1.0)
                    })
                    .fold(0.0, f64::max);
                let values: Vec<f64> = top.iter().map(|&c| eig.eigenvalues[c]).collect();
                let vecs = DMatrix::from_fn(steps, top.len(), |r, c| eig.eigenvectors[(r, top[c])]);
                ritz = Some((values, vecs));
                if top.len() == m && (estimate <= tol || full || matvecs >= max_iter) {
                    break;
                }
                next_check = (steps + 10).max(steps * 6 / 5);
            }
            beta.push(bj);
            basis.push(w);
        }

        let (values, coeffs) = ritz.expect("Ritz values computed at least once per cycle");
        let mut pairs = Vec::with_capacity(m);
        let mut worst: f64 = 0.0;
        for (c, &value) in values.iter().enumerate() {
            let mut v = vec![0.0; n];
            for (r, b) in basis.iter().enumerate().take(coeffs.nrows()) {
                let s = coeffs[(r, c)];
                v.iter_mut().zip(b).for_each(|(x, y)| *x += s * y);
            }
            let nv = norm(&v);
            v.iter_mut().for_each(|x| *x /= nv);
            let res = residual(a, value, &v);
            matvecs += 1;
            worst = worst.max(res / value.abs().max(1.0));
            pairs.push(EigenPair { value, vector: v, iterations: 0, residual: res });
        }
        last_residual = last_residual.min(worst);
        if worst <= tol {
            for p in &mut pairs {
                fix_sign(&mut p.vector);
                p.iterations = matvecs;
            }
            return Ok(pairs);
        }
        if matvecs >= max_iter {
            return Err(Error::NoConvergence { iterations: matvecs, residual: last_residual });
        }
        start = vec![0.0; n];
        for p in &pairs {
            start.iter_mut().zip(&p.vector).for_each(|(x, y)| *x += y);
        }
    }
}

fn tridiagonal(alpha: &[f64], beta: &[f64]) -> DMatrix<f64> {
    let k = alpha.len();
    DMatrix::from_fn(k, k, |i, j| {
        if i == j {
            alpha[i]
        } else if i == j + 1 {
            beta[j]
        } else if j == i + 1 {
            beta[i]
        } else {
            0.0
        }
    })
}

/// `λ₁ - λ₂`.
pub fn eigengap(a: &SymMatrix, tol: f64, max_iter: usize, seed: u64) -> Result<(EigenPair, EigenPair)> {
    let mut pairs = top_eigs(a, 2, tol, max_iter, seed)?;
    let second = pairs.pop().expect("two pairs");
    let first = pairs.pop().expect("two pairs");
    Ok((first, second))
}

/// `Y - c J` with `c` the mean off-diagonal entry: removes the uninformative
/// all-ones direction created by observations with nonzero null mean.
pub fn shift_perron(y: &SymMatrix) -> SymMatrix {
    let c = y.mean_off_diagonal();
    y.map(|v| v - c)
}

/// Raw observations on the same scale as `√Δ S/√N`: Perron-shifted when the
/// channel has a nonzero null mean, then divided by `sd(Y)·√N`. Gives the
/// bulk edge at 2 regardless of the channel's output scale.
pub fn normalized_raw(inst: &PlantedInstance) -> SymMatrix {
    let y = if inst.channel.has_perron_mode() { shift_perron(&inst.y_mat) } else { inst.y_mat.clone() };
    let sd = y.entry_std();
    let c = if sd > 0.0 { 1.0 / (sd * (inst.n as f64).sqrt()) } else { 0.0 };
    y.scaled(c)
}

/// PCA estimate `√(N m_{2k_F}) v₁` from the top eigenvector of `s_scaled`.
pub fn pca_estimate(s_scaled: &SymMatrix, m2kf: f64, tol: f64, max_iter: usize, seed: u64) -> Result<(Vec<f64>, EigenPair)> {
    let top = top_eigs(s_scaled, 1, tol, max_iter, seed)?.remove(0);
    let c = (s_scaled.n() as f64 * m2kf).sqrt();
    Ok((top.vector.iter().map(|v| c * v).collect(), top))
}

/// Tilt parameters `(a, c)` of the scalar channel seen by `√N v₁`:
/// the estimate is `η(a, c √N v₁ᵢ)`.
fn denoising_tilt(q0: f64, m2kf: f64) -> (f64, f64) {
    let var = 1.0 - q0 * q0;
    (q0 * q0 / (m2kf * var), q0 / (var * m2kf.sqrt()))
}

/// Bayes-optimal entrywise denoising of the top eigenvector, treating
/// `√N v₁ᵢ ≈ (q₀/√m) x̃ᵢ + √(1-q₀²) Gᵢ`. At `q₀ = 0` this is the prior mean.
pub fn denoised_pca(p_kf: &DiscretePrior, v1: &[f64], q0: f64, m2kf: f64) -> Result<Vec<f64>> {
    if !(0.0..1.0).contains(&q0) {
        return Err(Error::InvalidArgument(format!("spectral overlap must lie in [0, 1), got {q0}")));
    }
    let (a, c) = denoising_tilt(q0, m2kf);
    let root_n = (v1.len() as f64).sqrt();
    Ok(v1.iter().map(|v| p_kf.denoise(a, c * root_n * v)).collect())
}

/// Global sign for `v₁`. For a symmetric prior the sign is irrelevant and `+1`
/// is returned; otherwise the sign maximising the marginal likelihood of
/// `√N v₁` under the scalar channel of [`denoised_pca`] is chosen.
pub fn orientation(p_kf: &DiscretePrior, v1: &[f64], q0: f64, m2kf: f64) -> f64 {
    if p_kf.is_symmetric() || q0 <= 0.0 || q0 >= 1.0 {
        return 1.0;
    }
    let c = q0 / m2kf.sqrt();
    let var = 1.0 - q0 * q0;
    let root_n = (v1.len() as f64).sqrt();
    let log_w: Vec<f64> = p_kf.weights().iter().map(|w| w.ln()).collect();
    let loglik = |sign: f64| -> f64 {
        v1.iter()
            .map(|v| {
                let z = sign * root_n * v;
                let terms: Vec<f64> = p_kf
                    .atoms()
                    .iter()
                    .zip(&log_w)
                    .map(|(m, lw)| lw + (c * z * m - 0.5 * c * c * m * m) / var)
                    .collect();
                let mx = terms.iter().copied().fold(f64::NEG_INFINITY, f64::max);
                mx + terms.iter().map(|t| (t - mx).exp()).sum::<f64>().ln()
            })
            .sum()
    };
    if loglik(-1.0) > loglik(1.0) {
        -1.0
    } else {
        1.0
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct SpectralPrediction {
    pub q0: f64,
    pub q1: f64,
    pub pca_mse: f64,
    pub denoised_mse: f64,
}

pub fn spectral_prediction(p_kf: &DiscretePrior, delta: f64) -> SpectralPrediction {
    let m2kf = p_kf.moment(2);
    let q0 = spectral_overlap_prediction(delta, m2kf);
    let q1 = se_map(p_kf, spectral_se_start(delta, m2kf), delta);
    SpectralPrediction {
        q0,
        q1,
        pca_mse: 2.0 * (1.0 - q0 * q0),
        denoised_mse: (1.0 - (q1 / m2kf).powi(2)).clamp(0.0, 1.0),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ensemble::wigner;

    #[test]
    fn diagonal_matrix() {
        let a = SymMatrix::from_diagonal(&[3.0, 1.0, 0.0]);
        let pairs = top_eigs(&a, 2, EIG_TOL, EIG_MAX_ITER, 1).unwrap();
        assert!((pairs[0].value - 3.0).abs() < 1e-12);
        assert!((pairs[0].vector[0] - 1.0).abs() < 1e-12);
        assert!((pairs[1].value - 1.0).abs() < 1e-12);
        let (l1, l2) = eigengap(&SymMatrix::from_diagonal(&[3.0, 1.0]), EIG_TOL, 100, 0).unwrap();
        assert!((l1.value - l2.value - 2.0).abs() < 1e-12);
    }

    #[test]
    fn rank_one_large() {
        let n = 300;
        let u: Vec<f64> = (0..n).map(|i| (i * 7 % 13) as f64 - 6.0).collect();
        let nu = norm(&u);
        let u: Vec<f64> = u.iter().map(|v| v / nu).collect();
        let a = SymMatrix::from_upper(n, |i, j| 2.5 * u[i] * u[j]);
        let top = top_eigs(&a, 1, EIG_TOL, EIG_MAX_ITER, 3).unwrap().remove(0);
        assert!((top.value - 2.5).abs() < 1e-10);
        assert!((dot(&top.vector, &u).abs() - 1.0).abs() < 1e-10);
        assert!(top.vector.iter().find(|v| **v != 0.0).unwrap() > &0.0);
    }

    #[test]
    fn matches_dense_solver() {
        let a = wigner(250, 5);
        let got = top_eigs(&a, 2, EIG_TOL, EIG_MAX_ITER, 1).unwrap();
        let want = dense_top(&a, 2);
        for (g, w) in got.iter().zip(&want) {
            assert!((g.value - w.value).abs() < 1e-8, "{} vs {}", g.value, w.value);
            assert!(g.residual <= EIG_TOL * g.value.abs().max(1.0));
            assert!((norm(&g.vector) - 1.0).abs() < 1e-10);
        }
    }

    #[test]
    fn budget_exhaustion_reports_residual() {
        let a = wigner(200, 1);
        match top_eigs(&a, 2, 1e-14, 5, 0) {
            Err(Error::NoConvergence { iterations, residual }) => {
                assert!(iterations >= 5);
                assert!(residual.is_finite());
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn perron_shift_removes_constant() {
        let c = SymMatrix::from_upper(5, |_, _| 2.0);
        let s = shift_perron(&c);
        assert!((0..5).all(|i| s.row(i).iter().all(|v| *v == 0.0)));
    }

    #[test]
    fn denoised_pca_edges() {
        let p = DiscretePrior::rademacher();
        let v = vec![0.1, -0.2, 0.3, 0.05];
        let out = denoised_pca(&p, &v, 0.0, 1.0).unwrap();
        assert!(out.iter().all(|x| *x == 0.0));
        let out = denoised_pca(&p, &v, 0.8, 1.0).unwrap();
        assert!(out.iter().all(|x| x.abs() < 1.0));
        assert!(denoised_pca(&p, &v, 1.0, 1.0).is_err());
    }

    #[test]
    fn orientation_prefers_truth() {
        let p = DiscretePrior::skewed_pair().pushforward(2);
        let m = p.moment(2);
        let q0 = 0.8;
        let x = crate::ensemble::sample_signal(&p, 2000, 4);
        let g = crate::ensemble::sample_signal(&DiscretePrior::rademacher(), 2000, 5);
        let z: Vec<f64> = x
            .iter()
            .zip(&g)
            .map(|(x, g)| q0 * x / m.sqrt() + (1.0 - q0 * q0).sqrt() * g)
            .collect();
        let nz = norm(&z);
        let v: Vec<f64> = z.iter().map(|v| -v / nz).collect();
        assert_eq!(orientation(&p, &v, q0, m), -1.0);
        assert_eq!(orientation(&DiscretePrior::rademacher(), &v, q0, 1.0), 1.0);
    }
}
