//! Gauss–Hermite rules rescaled to the standard normal, so that
//! `rule.expect(f)` approximates `E f(G)` with `G ~ N(0, 1)`.

use std::f64::consts::PI;
use std::sync::OnceLock;

/// Node count used by the state-evolution and replica routines. At large
/// signal-to-noise the integrands switch sharply between atoms, and fewer
/// nodes leave errors near 1e-5.
pub const DEFAULT_NODES: usize = 201;

/// Largest supported rule; beyond it the leading Hermite function underflows
/// at the outer nodes.
pub const MAX_NODES: usize = 256;

#[derive(Debug, Clone, PartialEq)]
pub struct GaussHermite {
    nodes: Vec<f64>,
    weights: Vec<f64>,
}

impl GaussHermite {
    /// Builds an `n`-point rule (`1 <= n <= MAX_NODES`). Exact for polynomials
    /// of degree `2n - 1`.
    pub fn new(n: usize) -> Self {
        assert!((1..=MAX_NODES).contains(&n), "Gauss-Hermite rule needs 1..={MAX_NODES} nodes, got {n}");
        // Newton iteration on the Hermite functions ψ_k(x) = p_k(x) e^{-x²/2},
        // p_k orthonormal for e^{-x²}. The weight factor keeps the recurrence
        // finite for large n; weights are assembled in log space so tail
        // weights keep their relative accuracy.
        let pim4 = PI.powf(-0.25);
        let mut x = vec![0.0; n];
        let mut w = vec![0.0; n];
        let nf = n as f64;
        let m = n.div_ceil(2);
        // initial guesses: eigenvalues of the Jacobi matrix for e^{-x²}
        let jacobi = nalgebra::DMatrix::from_fn(n, n, |i, j| {
            if i + 1 == j || j + 1 == i {
                (i.max(j) as f64 / 2.0).sqrt()
            } else {
                0.0
            }
        });
        let mut guesses: Vec<f64> = nalgebra::SymmetricEigen::new(jacobi).eigenvalues.iter().copied().collect();
        guesses.sort_by(|a, b| b.total_cmp(a));
        for i in 0..m {
            let mut z = guesses[i];
            let mut psi_prev = 0.0;
            for _ in 0..100 {
                let mut p1 = pim4 * (-0.5 * z * z).exp();
                let mut p2 = 0.0;
                for j in 1..=n {
                    let p3 = p2;
                    p2 = p1;
                    let jf = j as f64;
                    p1 = z * (2.0 / jf).sqrt() * p2 - ((jf - 1.0) / jf).sqrt() * p3;
                }
                psi_prev = p2;
                let z1 = z;
                z = z1 - p1 / ((2.0 * nf).sqrt() * p2);
                if (z - z1).abs() <= 1e-15 * z1.abs().max(1.0) {
                    break;
                }
            }
            x[i] = z;
            x[n - 1 - i] = -z;
            w[i] = (-z * z - nf.ln() - 2.0 * psi_prev.abs().ln()).exp();
            w[n - 1 - i] = w[i];
        }
        if n % 2 == 1 {
            x[n / 2] = 0.0;
        }
        let sqrt2 = 2.0_f64.sqrt();
        let norm = PI.sqrt();
        let mut pairs: Vec<(f64, f64)> = x
            .into_iter()
            .zip(w)
            .map(|(xi, wi)| (xi * sqrt2, wi / norm))
            .collect();
        pairs.sort_by(|a, b| a.0.total_cmp(&b.0));
        let (nodes, weights) = pairs.into_iter().unzip();
        Self { nodes, weights }
    }

    /// Shared default rule with [`DEFAULT_NODES`] points.
    pub fn standard() -> &'static GaussHermite {
        static RULE: OnceLock<GaussHermite> = OnceLock::new();
        RULE.get_or_init(|| GaussHermite::new(DEFAULT_NODES))
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn nodes(&self) -> &[f64] {
        &self.nodes
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn expect<F: FnMut(f64) -> f64>(&self, mut f: F) -> f64 {
        self.nodes
            .iter()
            .zip(&self.weights)
            .map(|(&g, &w)| w * f(g))
            .sum()
    }
}

/// `E f(G)` for a standard normal `G` using an `n_nodes`-point rule.
pub fn gauss_expect<F: FnMut(f64) -> f64>(f: F, n_nodes: usize) -> f64 {
    if n_nodes == DEFAULT_NODES {
        GaussHermite::standard().expect(f)
    } else {
        GaussHermite::new(n_nodes).expect(f)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn double_factorial(k: u32) -> f64 {
        (1..=k).rev().step_by(2).map(f64::from).product()
    }

    #[test]
    fn normalisation_and_variance() {
        for n in [2, 3, 10, 61] {
            assert!((gauss_expect(|_| 1.0, n) - 1.0).abs() < 1e-12);
            assert!((gauss_expect(|g| g * g, n) - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn exact_on_monomials_up_to_degree_2n_minus_1() {
        for n in [2usize, 5, 10, 20, 61] {
            let rule = GaussHermite::new(n);
            for d in 0..(2 * n as i32) {
                let got = rule.expect(|g| g.powi(d));
                let even = (d - d % 2) as u32;
                let want = if d % 2 == 1 { 0.0 } else { double_factorial(even.saturating_sub(1)) };
                let scale = double_factorial((even + 1).saturating_sub(1)).max(1.0);
                assert!(
                    (got - want).abs() <= 1e-12 * scale,
                    "n={n} d={d}: {got} vs {want}"
                );
            }
        }
    }

    #[test]
    fn large_rules_stay_accurate() {
        for n in [DEFAULT_NODES, MAX_NODES] {
            let rule = GaussHermite::new(n);
            assert!((rule.weights().iter().sum::<f64>() - 1.0).abs() < 1e-12);
            assert!(rule.weights().iter().all(|w| w.is_finite() && *w >= 0.0));
            for d in (0..=20).step_by(2) {
                let want = double_factorial((d as u32).saturating_sub(1));
                assert!((rule.expect(|g| g.powi(d)) - want).abs() <= 1e-11 * want, "n={n} d={d}");
            }
            let smooth = rule.expect(|g| (0.3 * g).cos());
            assert!((smooth - (-0.045f64).exp()).abs() < 1e-14);
        }
    }

    #[test]
    #[should_panic]
    fn oversized_rule_is_rejected() {
        GaussHermite::new(MAX_NODES + 1);
    }

    #[test]
    fn nodes_symmetric_and_sorted() {
        let rule = GaussHermite::new(61);
        let k = rule.len();
        for i in 0..k {
            assert!((rule.nodes()[i] + rule.nodes()[k - 1 - i]).abs() < 1e-12);
            assert!(rule.weights()[i] > 0.0);
        }
        assert!(rule.nodes().windows(2).all(|p| p[0] < p[1]));
    }
}
