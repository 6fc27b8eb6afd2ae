use std::sync::Arc;

use nalgebra::SymmetricEigen;

use spiked_core::amp::scaled_fisher;
use spiked_core::asymptotics::spectral_overlap_prediction;
use spiked_core::channels::{AbsGaussian, Channel, GaussianAdditive};
use spiked_core::ensemble::{normalized_overlap, observe, sample_signal, wigner, SymMatrix};
use spiked_core::priors::DiscretePrior;
use spiked_core::spectral::{
    eigengap, normalized_raw, pca_estimate, shift_perron, top_eigs, EIG_MAX_ITER, EIG_TOL,
};

fn dense_top_two(a: &SymMatrix) -> (f64, f64) {
    let mut ev: Vec<f64> = SymmetricEigen::new(a.to_dmatrix()).eigenvalues.iter().copied().collect();
    ev.sort_by(|x, y| y.total_cmp(x));
    (ev[0], ev[1])
}

#[test]
fn lanczos_matches_dense_oracle() {
    for (n, seed) in [(65, 1), (150, 2), (300, 3)] {
        let w = wigner(n, seed);
        let u: Vec<f64> = (0..n).map(|i| if i % 3 == 0 { 1.0 } else { -0.5 }).collect();
        let nu = u.iter().map(|v| v * v).sum::<f64>().sqrt();
        for theta in [0.0, 1.0, 3.0] {
            let a = SymMatrix::from_upper(n, |i, j| w.get(i, j) + theta * u[i] * u[j] / (nu * nu));
            let pairs = top_eigs(&a, 2, EIG_TOL, EIG_MAX_ITER, seed).unwrap();
            let (l1, l2) = dense_top_two(&a);
            assert!((pairs[0].value - l1).abs() < 1e-8, "n={n} theta={theta}");
            assert!((pairs[1].value - l2).abs() < 1e-8, "n={n} theta={theta}");
            for p in &pairs {
                let norm = p.vector.iter().map(|v| v * v).sum::<f64>().sqrt();
                assert!((norm - 1.0).abs() < 1e-10);
                assert!(p.residual <= EIG_TOL * p.value.abs().max(1.0));
            }
        }
    }
}

#[test]
fn wigner_edge() {
    let w = wigner(1000, 17);
    let top = top_eigs(&w, 1, EIG_TOL, EIG_MAX_ITER, 0).unwrap();
    assert!((1.9..=2.1).contains(&top[0].value), "{}", top[0].value);
    let (l1, _) = dense_top_two(&wigner(200, 4));
    assert!((1.7..=2.3).contains(&l1));
}

#[test]
fn null_fisher_gap_is_small() {
    let ch: Arc<dyn Channel> = Arc::new(AbsGaussian::new(1.0).unwrap());
    let n = 2000;
    let inst = observe(ch, &vec![0.0; n], 0.25, 5).unwrap();
    let s = scaled_fisher(&inst, 2).unwrap().scaled(2f64.sqrt());
    let (a, b) = eigengap(&s, EIG_TOL, EIG_MAX_ITER, 1).unwrap();
    assert!(a.value - b.value < 0.15);
    assert!(a.value - b.value >= 0.0);
}

#[test]
fn abs_fisher_gap_opens_well_above_threshold() {
    let gamma0 = 3.0;
    let ch: Arc<dyn Channel> = Arc::new(AbsGaussian::new(gamma0).unwrap());
    let n = 500;
    let x = sample_signal(&DiscretePrior::skewed_pair(), n, 2);
    let inst = observe(ch, &x, 0.25, 6).unwrap();
    let s = scaled_fisher(&inst, 2).unwrap().scaled((2.0 / gamma0.powi(4)).sqrt());
    let (a, b) = eigengap(&s, EIG_TOL, EIG_MAX_ITER, 1).unwrap();
    let (l1, l2) = dense_top_two(&s);
    assert!((a.value - l1).abs() < 1e-8 && (b.value - l2).abs() < 1e-8);
    assert!(l1 - l2 > 0.2, "{}", l1 - l2);
}

#[test]
fn perron_shift_centers_abs_observations() {
    let ch: Arc<dyn Channel> = Arc::new(AbsGaussian::new(1.0).unwrap());
    let n = 300;
    let inst = observe(ch, &vec![0.0; n], 0.25, 2).unwrap();
    let raw_mean = inst.y_mat.mean_off_diagonal();
    assert!((raw_mean - (2.0 / std::f64::consts::PI).sqrt()).abs() < 0.01);
    let shifted = shift_perron(&inst.y_mat);
    let count = (n * (n + 1) / 2) as f64;
    let mean: f64 = (0..n).map(|i| shifted.row(i)[i..].iter().sum::<f64>()).sum::<f64>() / count;
    let se = shifted.entry_std() / count.sqrt();
    assert!(mean.abs() < 4.0 * se, "{mean} ± {se}");
}

#[test]
fn pca_overlap_on_spiked_wigner() {
    let delta = 0.3;
    let ch: Arc<dyn Channel> = Arc::new(GaussianAdditive::new(delta, 1).unwrap());
    let n = 1500;
    let x = sample_signal(&DiscretePrior::rademacher(), n, 1);
    let inst = observe(ch, &x, 0.0, 2).unwrap();
    let s = scaled_fisher(&inst, 1).unwrap();
    let (est, eig) = pca_estimate(&s, 1.0, EIG_TOL, EIG_MAX_ITER, 0).unwrap();
    let q0 = spectral_overlap_prediction(delta, 1.0);
    assert!((normalized_overlap(&x, &eig.vector).unwrap() - q0).abs() < 0.05);
    // outlier of S/√N sits at (m + Δ/m)/Δ
    assert!((eig.value * delta - (1.0 + delta)).abs() < 0.05);
    let norm2: f64 = est.iter().map(|v| v * v).sum();
    assert!((norm2 - n as f64).abs() < 1e-6);
}

#[test]
fn normalized_raw_null_has_unit_semicircle_edge() {
    let n = 800;
    let ch: Arc<dyn Channel> = Arc::new(AbsGaussian::new(2.0).unwrap());
    let inst = observe(ch, &vec![0.0; n], 0.25, 11).unwrap();
    let raw = normalized_raw(&inst);
    let (l1, _) = dense_top_two(&raw);
    assert!((l1 - 2.0).abs() < 0.15, "edge {l1}");
    assert!((raw.entry_std() * (n as f64).sqrt() - 1.0).abs() < 1e-9);
}
