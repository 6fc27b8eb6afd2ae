//! Planted instances `Y_ij ~ p_out(· | N^{β-1/2} x_i x_j)`, their Fisher
//! matrices, and the error metrics shared by every estimator.

use std::io::{Read, Write};
use std::sync::Arc;

use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand::Rng;

use crate::channels::Channel;
use crate::error::{Error, Result};
use crate::priors::DiscretePrior;
use crate::rng::rng_from_seed;

/// Dense symmetric matrix. Only `set` writes entries and it writes both
/// triangles, so the mirror is bit-identical by construction.
#[derive(Debug, Clone, PartialEq)]
pub struct SymMatrix {
    n: usize,
    data: Vec<f64>,
}

impl SymMatrix {
    pub fn zeros(n: usize) -> Self {
        Self { n, data: vec![0.0; n * n] }
    }

    /// Builds from `f(i, j)` evaluated once per pair `i <= j`.
    pub fn from_upper<F: FnMut(usize, usize) -> f64>(n: usize, mut f: F) -> Self {
        let mut m = Self::zeros(n);
        for i in 0..n {
            for j in i..n {
                m.set(i, j, f(i, j));
            }
        }
        m
    }

    pub fn from_diagonal(d: &[f64]) -> Self {
        let mut m = Self::zeros(d.len());
        for (i, v) in d.iter().enumerate() {
            m.set(i, i, *v);
        }
        m
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.n + j]
    }

    pub fn set(&mut self, i: usize, j: usize, v: f64) {
        self.data[i * self.n + j] = v;
        self.data[j * self.n + i] = v;
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.n..(i + 1) * self.n]
    }

    /// Entrywise map, preserving symmetry.
    pub fn map<F: Fn(f64) -> f64>(&self, f: F) -> Self {
        Self { n: self.n, data: self.data.iter().map(|&v| f(v)).collect() }
    }

    pub fn scaled(&self, c: f64) -> Self {
        self.map(|v| c * v)
    }

    /// `out = self * x`.
    pub fn matvec_into(&self, x: &[f64], out: &mut [f64]) {
        assert_eq!(x.len(), self.n);
        assert_eq!(out.len(), self.n);
        for (o, row) in out.iter_mut().zip(self.data.chunks_exact(self.n.max(1))) {
            *o = dot(row, x);
        }
    }

    pub fn matvec(&self, x: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.n];
        self.matvec_into(x, &mut out);
        out
    }

    /// Copy into a `nalgebra` matrix (used by small dense reference solves).
    pub fn to_dmatrix(&self) -> nalgebra::DMatrix<f64> {
        nalgebra::DMatrix::from_row_slice(self.n, self.n, &self.data)
    }

    pub fn mean_off_diagonal(&self) -> f64 {
        if self.n < 2 {
            return 0.0;
        }
        let mut s = 0.0;
        for i in 0..self.n {
            for j in i + 1..self.n {
                s += self.get(i, j);
            }
        }
        s / (self.n * (self.n - 1) / 2) as f64
    }

    /// Sample standard deviation over the upper triangle including the diagonal.
    pub fn entry_std(&self) -> f64 {
        let count = self.n * (self.n + 1) / 2;
        if count < 2 {
            return 0.0;
        }
        let (mut mean, mut m2) = (0.0, 0.0);
        let mut k = 0usize;
        for i in 0..self.n {
            for &v in &self.row(i)[i..] {
                k += 1;
                let d = v - mean;
                mean += d / k as f64;
                m2 += d * (v - mean);
            }
        }
        (m2 / (count - 1) as f64).sqrt()
    }
}

/// Four-way unrolled dot product; keeps the hot matvec loop vectorisable.
pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    let mut acc = [0.0; 4];
    let ca = a.chunks_exact(4);
    let cb = b.chunks_exact(4);
    let (ra, rb) = (ca.remainder(), cb.remainder());
    for (x, y) in ca.zip(cb) {
        acc[0] += x[0] * y[0];
        acc[1] += x[1] * y[1];
        acc[2] += x[2] * y[2];
        acc[3] += x[3] * y[3];
    }
    let tail: f64 = ra.iter().zip(rb).map(|(x, y)| x * y).sum();
    (acc[0] + acc[1]) + (acc[2] + acc[3]) + tail
}

pub fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

#[derive(Debug, Clone)]
pub struct PlantedInstance {
    pub n: usize,
    pub x: Vec<f64>,
    pub y_mat: SymMatrix,
    pub channel: Arc<dyn Channel>,
    pub beta: f64,
    pub seed: u64,
}

impl PlantedInstance {
    /// `x^k` entrywise: the quantity the Fisher matrix actually reveals.
    pub fn signal_power(&self, k: usize) -> Vec<f64> {
        self.x.iter().map(|v| v.powi(k as i32)).collect()
    }
}

/// `n` i.i.d. draws from `p`.
pub fn sample_signal(p: &DiscretePrior, n: usize, seed: u64) -> Vec<f64> {
    if p.len() == 1 {
        return vec![p.atoms()[0]; n];
    }
    let mut rng = rng_from_seed(seed);
    let idx = WeightedIndex::new(p.weights()).expect("prior weights are validated");
    (0..n).map(|_| p.atoms()[idx.sample(&mut rng)]).collect()
}

/// Sample `Y` given `x`: each pair `i <= j` (diagonal included) is drawn once
/// in row-major order from a single seeded stream.
pub fn observe(ch: Arc<dyn Channel>, x: &[f64], beta: f64, seed: u64) -> Result<PlantedInstance> {
    if !(0.0..0.5).contains(&beta) {
        return Err(Error::InvalidArgument(format!("beta must lie in [0, 1/2), got {beta}")));
    }
    let n = x.len();
    if n == 0 {
        return Err(Error::InvalidArgument("signal must be nonempty".into()));
    }
    let scale = (n as f64).powf(beta - 0.5);
    let mut rng = rng_from_seed(seed);
    let y_mat = SymMatrix::from_upper(n, |i, j| ch.sample(scale * x[i] * x[j], &mut rng));
    Ok(PlantedInstance { n, x: x.to_vec(), y_mat, channel: ch, beta, seed })
}

/// `S_ij = score(k, Y_ij)`.
pub fn fisher_matrix(ch: &dyn Channel, inst: &PlantedInstance, k: usize) -> Result<SymMatrix> {
    let n = inst.n;
    let mut s = SymMatrix::zeros(n);
    for i in 0..n {
        for j in i..n {
            let y = inst.y_mat.get(i, j);
            let v = ch.score(k, y).ok_or_else(|| Error::ScoreUnavailable {
                channel: ch.name().to_string(),
                order: k,
            })?;
            if !v.is_finite() {
                return Err(Error::NonFiniteEntry { row: i, col: j, y });
            }
            s.set(i, j, v);
        }
    }
    Ok(s)
}

/// `‖uuᵀ - ûûᵀ‖_F² / ‖u‖⁴ = (‖u‖⁴ + ‖û‖⁴ - 2⟨u,û⟩²) / ‖u‖⁴`.
pub fn matrix_mse(u: &[f64], u_hat: &[f64]) -> Result<f64> {
    if u.len() != u_hat.len() {
        return Err(Error::DimensionMismatch(format!("{} vs {}", u.len(), u_hat.len())));
    }
    let uu = dot(u, u);
    if uu == 0.0 {
        return Err(Error::ZeroNormReference);
    }
    let hh = dot(u_hat, u_hat);
    let uh = dot(u, u_hat);
    Ok(((uu * uu + hh * hh - 2.0 * uh * uh) / (uu * uu)).max(0.0))
}

/// `|⟨u,v⟩| / (‖u‖‖v‖)`.
pub fn normalized_overlap(u: &[f64], v: &[f64]) -> Result<f64> {
    if u.len() != v.len() {
        return Err(Error::DimensionMismatch(format!("{} vs {}", u.len(), v.len())));
    }
    let (nu, nv) = (norm(u), norm(v));
    if nu == 0.0 || nv == 0.0 {
        return Err(Error::ZeroNorm);
    }
    Ok((dot(u, v).abs() / (nu * nv)).min(1.0))
}

/// Contents of a binary instance dump. The channel itself is not
/// serialised, only its name.
#[derive(Debug, Clone, PartialEq)]
pub struct InstanceDump {
    pub channel_name: String,
    pub beta: f64,
    pub seed: u64,
    pub x: Vec<f64>,
    pub y_mat: SymMatrix,
}

/// Little-endian layout: `n: u64`, `name_len: u64`, name bytes, `beta: f64`,
/// `seed: u64`, `x` (n × f64), then the upper triangle of `Y` row-major.
pub fn write_instance<W: Write>(inst: &PlantedInstance, mut w: W) -> Result<()> {
    let name = inst.channel.name().as_bytes();
    w.write_all(&(inst.n as u64).to_le_bytes())?;
    w.write_all(&(name.len() as u64).to_le_bytes())?;
    w.write_all(name)?;
    w.write_all(&inst.beta.to_le_bytes())?;
    w.write_all(&inst.seed.to_le_bytes())?;
    for v in &inst.x {
        w.write_all(&v.to_le_bytes())?;
    }
    for i in 0..inst.n {
        for v in &inst.y_mat.row(i)[i..] {
            w.write_all(&v.to_le_bytes())?;
        }
    }
    w.flush()?;
    Ok(())
}

fn read_u64<R: Read>(r: &mut R) -> Result<u64> {
    let mut b = [0u8; 8];
    r.read_exact(&mut b).map_err(|e| Error::Format(format!("truncated header: {e}")))?;
    Ok(u64::from_le_bytes(b))
}

fn read_f64<R: Read>(r: &mut R) -> Result<f64> {
    read_u64(r).map(f64::from_bits)
}

pub fn read_instance<R: Read>(mut r: R) -> Result<InstanceDump> {
    let n = read_u64(&mut r)? as usize;
    let name_len = read_u64(&mut r)? as usize;
    if name_len > 4096 {
        return Err(Error::Format(format!("channel name length {name_len} is implausible")));
    }
    let mut name = vec![0u8; name_len];
    r.read_exact(&mut name).map_err(|e| Error::Format(format!("truncated name: {e}")))?;
    let channel_name =
        String::from_utf8(name).map_err(|e| Error::Format(format!("channel name: {e}")))?;
    let beta = read_f64(&mut r)?;
    let seed = read_u64(&mut r)?;
    let x = (0..n).map(|_| read_f64(&mut r)).collect::<Result<Vec<_>>>()?;
    let mut y_mat = SymMatrix::zeros(n);
    for i in 0..n {
        for j in i..n {
            y_mat.set(i, j, read_f64(&mut r)?);
        }
    }
    let mut probe = [0u8; 1];
    if r.read(&mut probe)? != 0 {
        return Err(Error::Format("trailing bytes after matrix".into()));
    }
    Ok(InstanceDump { channel_name, beta, seed, x, y_mat })
}

/// Standard Gaussian symmetric matrix scaled so off-diagonal entries have
/// variance `1/n` (a GOE-normalised Wigner matrix with spectrum edge at 2).
pub fn wigner(n: usize, seed: u64) -> SymMatrix {
    let mut rng = rng_from_seed(seed);
    let s = 1.0 / (n as f64).sqrt();
    SymMatrix::from_upper(n, |_, _| s * rng.sample::<f64, _>(rand_distr::StandardNormal))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::channels::{AbsGaussian, GaussianAdditive};
    use proptest::prelude::*;

    #[test]
    fn point_mass_signal_is_constant() {
        let p = DiscretePrior::point_mass(0.7).unwrap();
        assert!(sample_signal(&p, 50, 1).iter().all(|&v| v == 0.7));
    }

    #[test]
    fn rademacher_signal_is_centered_and_reproducible() {
        let p = DiscretePrior::rademacher();
        let n = 100_000;
        let x = sample_signal(&p, n, 42);
        let mean = x.iter().sum::<f64>() / n as f64;
        assert!(mean.abs() < 4.0 / (n as f64).sqrt());
        assert!(x.iter().all(|v| v.abs() == 1.0));
        assert_eq!(x, sample_signal(&p, n, 42));
        assert_ne!(x, sample_signal(&p, n, 43));
    }

    #[test]
    fn observe_is_symmetric_and_gaussian_model_matches() {
        let ch: Arc<dyn Channel> = Arc::new(GaussianAdditive::new(0.5, 1).unwrap());
        let x = sample_signal(&DiscretePrior::rademacher(), 40, 3);
        let inst = observe(ch.clone(), &x, 0.0, 9).unwrap();
        for i in 0..40 {
            for j in 0..40 {
                assert_eq!(inst.y_mat.get(i, j).to_bits(), inst.y_mat.get(j, i).to_bits());
            }
        }
        let s = fisher_matrix(ch.as_ref(), &inst, 1).unwrap();
        assert_eq!(s.get(3, 5), inst.y_mat.get(3, 5) / 0.5);
        assert!(observe(ch, &x, 0.5, 9).is_err());
    }

    #[test]
    fn abs_entries_nonnegative() {
        let ch: Arc<dyn Channel> = Arc::new(AbsGaussian::new(2.0).unwrap());
        let x = sample_signal(&DiscretePrior::skewed_pair(), 60, 1);
        let inst = observe(ch, &x, 0.25, 2).unwrap();
        assert!((0..60).all(|i| inst.y_mat.row(i).iter().all(|&v| v >= 0.0)));
    }

    #[test]
    fn mse_and_overlap_basics() {
        let u = [1.0, -2.0, 0.5];
        let neg: Vec<f64> = u.iter().map(|v| -v).collect();
        assert_eq!(matrix_mse(&u, &u).unwrap(), 0.0);
        assert_eq!(matrix_mse(&u, &neg).unwrap(), 0.0);
        assert_eq!(matrix_mse(&u, &[0.0; 3]).unwrap(), 1.0);
        assert_eq!(
            matrix_mse(&[0.0; 3], &u).unwrap_err().to_string(),
            "reference signal has zero norm"
        );
        let v: Vec<f64> = u.iter().map(|x| 3.0 * x).collect();
        assert!((normalized_overlap(&u, &v).unwrap() - 1.0).abs() < 1e-15);
        assert_eq!(normalized_overlap(&[1.0, 0.0], &[0.0, 1.0]).unwrap(), 0.0);
        assert!(normalized_overlap(&u, &[0.0; 3]).is_err());
    }

    #[test]
    fn dump_round_trip() {
        let ch: Arc<dyn Channel> = Arc::new(AbsGaussian::new(1.5).unwrap());
        let x = sample_signal(&DiscretePrior::skewed_pair(), 7, 1);
        let inst = observe(ch, &x, 0.25, 77).unwrap();
        let mut buf = Vec::new();
        write_instance(&inst, &mut buf).unwrap();
        assert_eq!(buf.len(), 8 + 8 + "abs_gaussian".len() + 8 + 8 + 7 * 8 + 28 * 8);
        let back = read_instance(buf.as_slice()).unwrap();
        assert_eq!(back.channel_name, "abs_gaussian");
        assert_eq!(back.seed, 77);
        assert_eq!(back.beta, 0.25);
        assert_eq!(back.x, inst.x);
        assert_eq!(back.y_mat, inst.y_mat);
        assert!(read_instance(&buf[..buf.len() - 3]).is_err());
    }

    proptest! {
        #[test]
        fn mse_is_sign_invariant(u in prop::collection::vec(-3.0f64..3.0, 2..20), s in -2.0f64..2.0) {
            prop_assume!(norm(&u) > 1e-3);
            let v: Vec<f64> = u.iter().enumerate().map(|(i, x)| s * x + 0.1 * i as f64).collect();
            let w: Vec<f64> = v.iter().map(|x| -x).collect();
            prop_assert_eq!(matrix_mse(&u, &v).unwrap(), matrix_mse(&u, &w).unwrap());
            let o = normalized_overlap(&u, &v).unwrap_or(0.0);
            prop_assert!((0.0..=1.0).contains(&o));
        }

        #[test]
        fn dot_matches_naive(v in prop::collection::vec(-10.0f64..10.0, 0..37)) {
            let naive: f64 = v.iter().map(|x| x * x).sum();
            prop_assert!((dot(&v, &v) - naive).abs() <= 1e-12 * naive.max(1.0));
        }
    }
}
