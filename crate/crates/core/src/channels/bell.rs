//! Partial Bell and cumulant polynomials.
//!
//! Argument slices are 1-based in the mathematical sense: `x[0]` holds `x_1`.
//! The cumulant polynomial turns normalized density derivatives
//! `x_i = ∂_w^i p(y|w) / p(y|w)` at `w = 0` into log-likelihood derivatives:
//! `g^(k)(y, 0) = κ_k(x_1, ..., x_k)`.

use crate::error::{Error, Result};

fn binomial(n: usize, k: usize) -> f64 {
    if k > n {
        return 0.0;
    }
    let k = k.min(n - k);
    (0..k).fold(1.0, |acc, i| acc * (n - i) as f64 / (i + 1) as f64)
}

fn factorial(n: usize) -> f64 {
    (1..=n).map(|i| i as f64).product()
}

/// Partial exponential Bell polynomial `B_{n,k}(x_1, ..., x_{n-k+1})` via
/// `B_{n,k} = Σ_{i=1}^{n-k+1} C(n-1, i-1) x_i B_{n-i,k-1}`.
pub fn bell_partial(n: usize, k: usize, x: &[f64]) -> f64 {
    if n == 0 && k == 0 {
        return 1.0;
    }
    if n == 0 || k == 0 || k > n {
        return 0.0;
    }
    assert!(x.len() > n - k, "bell_partial({n}, {k}) needs {} arguments", n - k + 1);
    // table[m][j] = B_{m,j}
    let mut table = vec![vec![0.0; k + 1]; n + 1];
    table[0][0] = 1.0;
    for m in 1..=n {
        for j in 1..=k.min(m) {
            let mut acc = 0.0;
            for i in 1..=(m - j + 1) {
                acc += binomial(m - 1, i - 1) * x[i - 1] * table[m - i][j - 1];
            }
            table[m][j] = acc;
        }
    }
    table[n][k]
}

/// The same polynomial summed over integer partitions of `n` into `k` parts
/// (explicit multinomial form). Exponential in `n`; kept as an independent
/// check of [`bell_partial`].
pub fn bell_partial_by_partitions(n: usize, k: usize, x: &[f64]) -> f64 {
    if n == 0 && k == 0 {
        return 1.0;
    }
    if n == 0 || k == 0 || k > n {
        return 0.0;
    }
    let width = n - k + 1;
    let mut counts = vec![0usize; width];
    let mut total = 0.0;
    enumerate(0, n, k, &mut counts, &mut |c| {
        let mut term = factorial(n);
        for (idx, &j) in c.iter().enumerate() {
            if j > 0 {
                let order = idx + 1;
                term *= (x[idx] / factorial(order)).powi(j as i32) / factorial(j);
            }
        }
        total += term;
    });
    total
}

// Enumerate multiplicities j_1.. with Σ j_i = parts and Σ i j_i = remaining.
fn enumerate(
    idx: usize,
    remaining: usize,
    parts: usize,
    counts: &mut Vec<usize>,
    visit: &mut dyn FnMut(&[usize]),
) {
    if idx == counts.len() {
        if remaining == 0 && parts == 0 {
            visit(counts);
        }
        return;
    }
    let order = idx + 1;
    let max_j = (remaining / order).min(parts);
    for j in 0..=max_j {
        counts[idx] = j;
        enumerate(idx + 1, remaining - j * order, parts - j, counts, visit);
    }
    counts[idx] = 0;
}

/// Complete Bell polynomial `B_n = Σ_k B_{n,k}`.
pub fn bell_complete(n: usize, x: &[f64]) -> f64 {
    (0..=n).map(|k| bell_partial(n, k, x)).sum()
}

/// Cumulant polynomial `κ_k(x_1, ..., x_k)` via
/// `κ_k = x_k - Σ_{i=1}^{k-1} C(k-1, i-1) κ_i x_{k-i}`.
pub fn cumulant_poly(k: usize, x: &[f64]) -> f64 {
    assert!(k >= 1 && x.len() >= k, "cumulant_poly({k}) needs {k} arguments");
    let mut kappa = vec![0.0; k + 1];
    for m in 1..=k {
        let mut acc = x[m - 1];
        for i in 1..m {
            acc -= binomial(m - 1, i - 1) * kappa[i] * x[m - i - 1];
        }
        kappa[m] = acc;
    }
    kappa[k]
}

/// `κ_k = Σ_i (-1)^{i-1} (i-1)! B_{k,i}`, the defining form of the cumulant polynomial.
pub fn cumulant_poly_by_bell(k: usize, x: &[f64]) -> f64 {
    (1..=k)
        .map(|i| {
            let sign = if i % 2 == 1 { 1.0 } else { -1.0 };
            sign * factorial(i - 1) * bell_partial_by_partitions(k, i, x)
        })
        .sum()
}

/// `g^(k)(y, 0) / k!` from `derivs[i-1] = ∂_w^i p(y|0) / p(y|0)`, `i = 1..=k`.
pub fn score_from_density_derivatives(derivs: &[f64], k: usize) -> Result<f64> {
    if k == 0 {
        return Err(Error::InvalidArgument("score order must be positive".into()));
    }
    if derivs.len() < k {
        return Err(Error::InvalidArgument(format!(
            "need {k} density derivatives, got {}",
            derivs.len()
        )));
    }
    Ok(cumulant_poly(k, derivs) / factorial(k))
}
