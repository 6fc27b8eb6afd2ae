//! The six experiments. Simulation experiments are a deterministic map over
//! `(γ₀, seed)` cells run on a fixed-size worker pool; each cell owns its
//! random streams, so the output does not depend on scheduling.

use std::sync::Arc;

use rayon::prelude::*;
use serde::Serialize;

use spiked_core::amp::{amp_from_direction, linearized_amp_on, scaled_fisher, AmpConfig};
use spiked_core::asymptotics::{predict_with_grid, se_trajectory, spectral_se_start, AsymptoticPrediction};
use spiked_core::channels::{critical_index, DETECTION_TOL};
use spiked_core::ensemble::{dot, matrix_mse, norm, normalized_overlap, observe, sample_signal};
use spiked_core::rng::derive_seed;
use spiked_core::spectral::{denoised_pca, eigengap, normalized_raw, orientation, top_eigs, EigenPair};
use spiked_core::{Channel, DiscretePrior, FisherInfo};

use crate::config::ExperimentConfig;

/// Seed sub-streams within one cell.
const STREAM_SIGNAL: u64 = 0;
const STREAM_NOISE: u64 = 1;
const STREAM_EIGEN: u64 = 2;
const STREAM_LINEAR: u64 = 3;

/// One table row; every experiment's row type knows its own columns.
pub trait Row {
    const COLUMNS: &'static [&'static str];
    fn fields(&self) -> Vec<String>;
}

fn num(v: f64) -> String {
    format!("{v}")
}

fn opt(v: Option<f64>) -> String {
    v.map(num).unwrap_or_default()
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CellFailure {
    pub gamma0: f64,
    pub seed: Option<u64>,
    pub message: String,
}

#[derive(Debug, Clone)]
pub struct Report<R> {
    pub rows: Vec<R>,
    pub failures: Vec<CellFailure>,
    pub notes: Vec<String>,
}

impl<R> Report<R> {
    fn new(rows: Vec<R>, failures: Vec<CellFailure>) -> Self {
        Self { rows, failures, notes: Vec::new() }
    }
}

/// Everything that is fixed at one grid point: the channel at this `γ₀`, its
/// Fisher information, the pushforward prior and the asymptotic predictions.
#[derive(Clone)]
pub struct GridPoint {
    pub gamma0: f64,
    pub channel: Arc<dyn Channel>,
    pub fisher: FisherInfo,
    pub p_kf: DiscretePrior,
    pub prediction: AsymptoticPrediction,
}

fn grid_point(cfg: &ExperimentConfig, prior: &DiscretePrior, gi: usize, gamma0: f64) -> spiked_core::Result<GridPoint> {
    let channel = cfg.channel.with_gamma0(gamma0).build()?;
    let fisher = critical_index(channel.as_ref(), cfg.k_max, DETECTION_TOL, cfg.n_mc, derive_seed(&[cfg.seed, gi as u64]))?;
    let p_kf = prior.pushforward(fisher.k_f as u32);
    let prediction = predict_with_grid(&p_kf, fisher.delta_kf, cfg.grid_points)?;
    Ok(GridPoint { gamma0, channel, fisher, p_kf, prediction })
}

fn grid_points(cfg: &ExperimentConfig, pool: &rayon::ThreadPool) -> (Vec<Option<GridPoint>>, Vec<CellFailure>) {
    let prior = cfg.prior.build().expect("validated prior");
    let results: Vec<_> = pool.install(|| {
        cfg.gamma0_grid
            .par_iter()
            .enumerate()
            .map(|(gi, &g)| grid_point(cfg, &prior, gi, g))
            .collect()
    });
    let mut failures = Vec::new();
    let points = results
        .into_iter()
        .zip(&cfg.gamma0_grid)
        .map(|(r, &g)| match r {
            Ok(p) => Some(p),
            Err(e) => {
                failures.push(CellFailure { gamma0: g, seed: None, message: e.to_string() });
                None
            }
        })
        .collect();
    (points, failures)
}

pub fn build_pool(workers: usize) -> rayon::ThreadPool {
    rayon::ThreadPoolBuilder::new().num_threads(workers.max(1)).build().expect("thread pool")
}

pub fn default_workers() -> usize {
    std::thread::available_parallelism().map(|n| n.get()).unwrap_or(1)
}

/// Stream seed for the cell at grid index `gi` with seed value `seed`.
pub fn cell_seed(master: u64, gi: usize, seed: u64) -> u64 {
    derive_seed(&[master, gi as u64, seed])
}

/// Run `f` over every `(grid point, seed)` cell; rows come back in grid order,
/// then seed order. A failing cell is recorded and skipped.
fn run_cells<R, F>(cfg: &ExperimentConfig, pool: &rayon::ThreadPool, f: F) -> Report<R>
where
    R: Send,
    F: Fn(&GridPoint, u64, u64) -> spiked_core::Result<Vec<R>> + Sync,
{
    let (points, mut failures) = grid_points(cfg, pool);
    let cells: Vec<(usize, u64)> = points
        .iter()
        .enumerate()
        .filter(|(_, p)| p.is_some())
        .flat_map(|(gi, _)| cfg.seeds.iter().map(move |&s| (gi, s)))
        .collect();
    let results: Vec<_> = pool.install(|| {
        cells
            .par_iter()
            .map(|&(gi, seed)| {
                let point = points[gi].as_ref().expect("filtered");
                f(point, seed, cell_seed(cfg.seed, gi, seed))
            })
            .collect()
    });
    let mut rows = Vec::new();
    for ((gi, seed), r) in cells.into_iter().zip(results) {
        match r {
            Ok(mut rs) => rows.append(&mut rs),
            Err(e) => failures.push(CellFailure { gamma0: cfg.gamma0_grid[gi], seed: Some(seed), message: e.to_string() }),
        }
    }
    Report::new(rows, failures)
}

fn instance(cfg: &ExperimentConfig, point: &GridPoint, cell: u64) -> spiked_core::Result<spiked_core::ensemble::PlantedInstance> {
    let prior = cfg.prior.build()?;
    let x = sample_signal(&prior, cfg.n, derive_seed(&[cell, STREAM_SIGNAL]));
    observe(point.channel.clone(), &x, point.fisher.beta_cr, derive_seed(&[cell, STREAM_NOISE]))
}

fn overlap_or_zero(u: &[f64], v: &[f64]) -> f64 {
    if norm(v) == 0.0 {
        0.0
    } else {
        normalized_overlap(u, v).unwrap_or(0.0)
    }
}

// ---- fisher-info --------------------------------------------------------

#[derive(Debug, Clone, Serialize)]
pub struct FisherReport {
    pub gamma0: Option<f64>,
    #[serde(flatten)]
    pub info: FisherInfo,
}

/// Fisher information at each grid point, or of the channel as configured
/// when the grid is empty.
pub fn run_fisher_info(cfg: &ExperimentConfig) -> spiked_core::Result<Vec<FisherReport>> {
    let one = |gamma0: Option<f64>, gi: usize| -> spiked_core::Result<FisherReport> {
        let spec = gamma0.map(|g| cfg.channel.with_gamma0(g)).unwrap_or_else(|| cfg.channel.clone());
        let ch = spec.build()?;
        let info = critical_index(ch.as_ref(), cfg.k_max, DETECTION_TOL, cfg.n_mc, derive_seed(&[cfg.seed, gi as u64]))?;
        Ok(FisherReport { gamma0, info })
    };
    if cfg.gamma0_grid.is_empty() {
        return Ok(vec![one(None, 0)?]);
    }
    cfg.gamma0_grid.iter().enumerate().map(|(gi, &g)| one(Some(g), gi)).collect()
}

// ---- se-curve -----------------------------------------------------------

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct SeRow {
    pub gamma0: f64,
    pub delta: f64,
    pub t: usize,
    pub q_t: f64,
    pub mse_t: f64,
}

impl Row for SeRow {
    const COLUMNS: &'static [&'static str] = &["gamma0", "delta", "t", "q_t", "mse_t"];
    fn fields(&self) -> Vec<String> {
        vec![num(self.gamma0), num(self.delta), self.t.to_string(), num(self.q_t), num(self.mse_t)]
    }
}

/// State-evolution trajectories started from the spectral overlap.
pub fn run_se_curve(cfg: &ExperimentConfig, pool: &rayon::ThreadPool) -> Report<SeRow> {
    let (points, failures) = grid_points(cfg, pool);
    let mut rows = Vec::new();
    for p in points.iter().flatten() {
        let delta = p.fisher.delta_kf;
        let m = p.prediction.m2kf;
        for (t, q) in se_trajectory(&p.p_kf, delta, spectral_se_start(delta, m), cfg.se_iterations).into_iter().enumerate() {
            let mse_t = (1.0 - (q / m).powi(2)).clamp(0.0, 1.0);
            rows.push(SeRow { gamma0: p.gamma0, delta, t, q_t: q, mse_t });
        }
    }
    Report::new(rows, failures)
}

// ---- mmse-curve ---------------------------------------------------------

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct MmseRow {
    pub gamma0: f64,
    pub delta: f64,
    pub q0: f64,
    pub q1: f64,
    pub q_inf: f64,
    pub q_star: f64,
    pub mmse: f64,
    pub pca_mse: f64,
    pub denoised_mse: f64,
    pub n_fixed_points: usize,
}

impl Row for MmseRow {
    const COLUMNS: &'static [&'static str] =
        &["gamma0", "delta", "q0", "q1", "q_inf", "q_star", "mmse", "pca_mse", "denoised_mse", "n_fixed_points"];
    fn fields(&self) -> Vec<String> {
        vec![
            num(self.gamma0),
            num(self.delta),
            num(self.q0),
            num(self.q1),
            num(self.q_inf),
            num(self.q_star),
            num(self.mmse),
            num(self.pca_mse),
            num(self.denoised_mse),
            self.n_fixed_points.to_string(),
        ]
    }
}

pub fn run_mmse_curve(cfg: &ExperimentConfig, pool: &rayon::ThreadPool) -> Report<MmseRow> {
    let (points, failures) = grid_points(cfg, pool);
    let rows = points
        .iter()
        .flatten()
        .map(|p| {
            let a = &p.prediction;
            MmseRow {
                gamma0: p.gamma0,
                delta: a.delta,
                q0: a.q0,
                q1: a.q1,
                q_inf: a.q_inf,
                q_star: a.q_star,
                mmse: a.mmse,
                pca_mse: a.pca_mse,
                denoised_mse: a.denoised_mse,
                n_fixed_points: a.fixed_points.len(),
            }
        })
        .collect();
    Report::new(rows, failures)
}

/// Smallest `γ₀` on the curve with `q⋆` above `tol`.
pub fn it_threshold(rows: &[MmseRow], tol: f64) -> Option<f64> {
    rows.iter().filter(|r| r.q_star > tol).map(|r| r.gamma0).reduce(f64::min)
}

// ---- mse-sweep ----------------------------------------------------------

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Estimator {
    PcaRaw,
    PcaFisher,
    DenoisedPca,
    Amp,
    LinearizedAmp,
}

impl Estimator {
    pub fn name(self) -> &'static str {
        match self {
            Estimator::PcaRaw => "pca_raw",
            Estimator::PcaFisher => "pca_fisher",
            Estimator::DenoisedPca => "denoised_pca",
            Estimator::Amp => "amp",
            Estimator::LinearizedAmp => "linearized_amp",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct MseRow {
    pub gamma0: f64,
    pub seed: u64,
    pub estimator: Estimator,
    pub mse: f64,
    /// `|⟨x^{k_F}, x̂⟩| / (‖x^{k_F}‖‖x̂‖)`; 0 for an all-zero estimate.
    pub overlap: f64,
    pub predicted_mse: Option<f64>,
}

impl Row for MseRow {
    const COLUMNS: &'static [&'static str] = &["gamma0", "seed", "estimator", "mse", "overlap", "predicted_mse"];
    fn fields(&self) -> Vec<String> {
        vec![
            num(self.gamma0),
            self.seed.to_string(),
            self.estimator.name().to_string(),
            num(self.mse),
            num(self.overlap),
            opt(self.predicted_mse),
        ]
    }
}

fn mse_cell(cfg: &ExperimentConfig, p: &GridPoint, seed: u64, cell: u64) -> spiked_core::Result<Vec<MseRow>> {
    let est = cfg.estimators;
    if !(est.pca_raw || est.pca_fisher || est.denoised_pca || est.amp || est.linearized_amp) {
        return Ok(Vec::new());
    }
    let inst = instance(cfg, p, cell)?;
    let k_f = p.fisher.k_f;
    let delta = p.fisher.delta_kf;
    let pred = &p.prediction;
    let m = pred.m2kf;
    let u = inst.signal_power(k_f);
    let pca_scale = (cfg.n as f64 * m).sqrt();
    let eig_seed = derive_seed(&[cell, STREAM_EIGEN]);
    let mut rows = Vec::new();
    let mut push = |estimator, x_hat: &[f64], predicted_mse| -> spiked_core::Result<()> {
        rows.push(MseRow {
            gamma0: p.gamma0,
            seed,
            estimator,
            mse: matrix_mse(&u, x_hat)?,
            overlap: overlap_or_zero(&u, x_hat),
            predicted_mse,
        });
        Ok(())
    };
    let amp_cfg = cfg.amp.to_amp_config();

    if est.pca_raw {
        let raw = normalized_raw(&inst);
        let top = top_eigs(&raw, 1, amp_cfg.eig_tol, amp_cfg.eig_max_iter, eig_seed)?.remove(0);
        let x_hat: Vec<f64> = top.vector.iter().map(|v| pca_scale * v).collect();
        push(Estimator::PcaRaw, &x_hat, None)?;
    }
    if est.pca_fisher || est.denoised_pca || est.amp || est.linearized_amp {
        let a = scaled_fisher(&inst, k_f)?;
        if est.pca_fisher || est.denoised_pca || est.amp {
            let top = top_eigs(&a, 1, amp_cfg.eig_tol, amp_cfg.eig_max_iter, eig_seed)?.remove(0);
            let sign = orientation(&p.p_kf, &top.vector, pred.q0, m);
            let v1: Vec<f64> = top.vector.iter().map(|v| sign * v).collect();
            if est.pca_fisher {
                let x_hat: Vec<f64> = v1.iter().map(|v| pca_scale * v).collect();
                push(Estimator::PcaFisher, &x_hat, Some(pred.pca_mse))?;
            }
            if est.denoised_pca {
                let x_hat = denoised_pca(&p.p_kf, &v1, pred.q0, m)?;
                push(Estimator::DenoisedPca, &x_hat, Some(pred.denoised_mse))?;
            }
            if est.amp {
                let (_, x_hat, _) = amp_from_direction(&a, &p.p_kf, delta, &v1, &u, &amp_cfg)?;
                push(Estimator::Amp, &x_hat, Some(pred.amp_mse))?;
            }
        }
        if est.linearized_amp {
            let mm = a.scaled(delta.sqrt());
            let run = linearized_amp_on(&mm, &u, delta, m, cfg.amp.linearized_iterations, derive_seed(&[cell, STREAM_LINEAR]))?;
            let last = run.trajectory.last().expect("nonempty trajectory");
            let predicted = 2.0 * (1.0 - run.predicted_overlap.powi(2));
            rows.push(MseRow {
                gamma0: p.gamma0,
                seed,
                estimator: Estimator::LinearizedAmp,
                mse: last.mse,
                overlap: last.overlap,
                predicted_mse: Some(predicted),
            });
        }
    }
    Ok(rows)
}

pub fn run_mse_sweep(cfg: &ExperimentConfig, pool: &rayon::ThreadPool) -> Report<MseRow> {
    let mut report = run_cells(cfg, pool, |p, seed, cell| mse_cell(cfg, p, seed, cell));
    report.notes.push("mse uses the realised |x^kF|^4 of each instance as denominator".into());
    report.notes.push("pca_raw and pca_fisher both scale the unit eigenvector by sqrt(n m_2kF)".into());
    report
}

// ---- eigengap-sweep -----------------------------------------------------

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum SpectrumKind {
    Fisher,
    Raw,
    FisherNull,
    RawNull,
}

impl SpectrumKind {
    pub fn name(self) -> &'static str {
        match self {
            SpectrumKind::Fisher => "fisher",
            SpectrumKind::Raw => "raw",
            SpectrumKind::FisherNull => "fisher_null",
            SpectrumKind::RawNull => "raw_null",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct GapRow {
    /// 0 on null-reference rows.
    pub gamma0: f64,
    pub seed: u64,
    pub matrix: SpectrumKind,
    pub lambda1: f64,
    pub lambda2: f64,
    pub gap: f64,
    /// `|⟨v₁, x^{k_F}⟩| / ‖x^{k_F}‖`; absent when there is no signal.
    pub overlap: Option<f64>,
}

impl Row for GapRow {
    const COLUMNS: &'static [&'static str] = &["gamma0", "seed", "matrix", "lambda1", "lambda2", "gap", "overlap"];
    fn fields(&self) -> Vec<String> {
        vec![
            num(self.gamma0),
            self.seed.to_string(),
            self.matrix.name().to_string(),
            num(self.lambda1),
            num(self.lambda2),
            num(self.gap),
            opt(self.overlap),
        ]
    }
}

fn gap_row(gamma0: f64, seed: u64, matrix: SpectrumKind, pair: (EigenPair, EigenPair), u: &[f64]) -> GapRow {
    let (l1, l2) = pair;
    let nu = norm(u);
    let overlap = (nu > 0.0).then(|| dot(&l1.vector, u).abs() / nu);
    GapRow { gamma0, seed, matrix, lambda1: l1.value, lambda2: l2.value, gap: l1.value - l2.value, overlap }
}

fn gap_cell(cfg: &ExperimentConfig, p: &GridPoint, seed: u64, cell: u64, null: bool) -> spiked_core::Result<Vec<GapRow>> {
    let inst = if null {
        observe(p.channel.clone(), &vec![0.0; cfg.n], p.fisher.beta_cr, derive_seed(&[cell, STREAM_NOISE]))?
    } else {
        instance(cfg, p, cell)?
    };
    let u = inst.signal_power(p.fisher.k_f);
    let eig_seed = derive_seed(&[cell, STREAM_EIGEN]);
    let (tol, iters) = (spiked_core::spectral::EIG_TOL, spiked_core::spectral::EIG_MAX_ITER);
    let fisher = scaled_fisher(&inst, p.fisher.k_f)?.scaled(p.fisher.delta_kf.sqrt());
    let raw = normalized_raw(&inst);
    let (kf, kr, g) = if null {
        (SpectrumKind::FisherNull, SpectrumKind::RawNull, 0.0)
    } else {
        (SpectrumKind::Fisher, SpectrumKind::Raw, p.gamma0)
    };
    Ok(vec![
        gap_row(g, seed, kf, eigengap(&fisher, tol, iters, eig_seed)?, &u),
        gap_row(g, seed, kr, eigengap(&raw, tol, iters, eig_seed)?, &u),
    ])
}

/// Eigengaps of `√Δ S/√N` and of the normalised raw observations. With
/// `null_reference`, zero-signal rows (channel at the first grid point) come
/// first.
pub fn run_eigengap_sweep(cfg: &ExperimentConfig, pool: &rayon::ThreadPool) -> Report<GapRow> {
    let mut null_rows = Vec::new();
    let mut null_failures = Vec::new();
    if cfg.null_reference {
        let null_cfg = ExperimentConfig { gamma0_grid: vec![cfg.gamma0_grid[0]], ..cfg.clone() };
        // Grid index past the end keeps these streams apart from the sweep's.
        let offset = cfg.gamma0_grid.len() as u64;
        let r = run_cells(&null_cfg, pool, |p, seed, cell| {
            gap_cell(cfg, p, seed, derive_seed(&[cell, offset]), true)
        });
        null_rows = r.rows;
        null_failures = r.failures;
    }
    let mut report = run_cells(cfg, pool, |p, seed, cell| gap_cell(cfg, p, seed, cell, false));
    null_rows.append(&mut report.rows);
    report.rows = null_rows;
    null_failures.append(&mut report.failures);
    report.failures = null_failures;
    report.notes.push("fisher rows use sqrt(delta_kF) S/sqrt(n); raw rows use (Y - perron shift)/(sd(Y) sqrt(n))".into());
    report
}

fn median(mut v: Vec<f64>) -> Option<f64> {
    if v.is_empty() {
        return None;
    }
    v.sort_by(f64::total_cmp);
    let k = v.len() / 2;
    Some(if v.len() % 2 == 1 { v[k] } else { 0.5 * (v[k - 1] + v[k]) })
}

/// Smallest `γ₀` whose median gap across seeds exceeds `factor` times the
/// median null gap. Medians keep a single heavy-tailed outlier from switching
/// a grid point on.
pub fn gap_threshold(rows: &[GapRow], matrix: SpectrumKind, null: SpectrumKind, factor: f64) -> Option<f64> {
    let gaps = |sel: &dyn Fn(&GapRow) -> bool| -> Vec<f64> { rows.iter().filter(|r| sel(r)).map(|r| r.gap).collect() };
    let null_gap = median(gaps(&|r| r.matrix == null))?;
    let mut gammas: Vec<f64> = rows.iter().filter(|r| r.matrix == matrix).map(|r| r.gamma0).collect();
    gammas.sort_by(f64::total_cmp);
    gammas.dedup();
    gammas
        .into_iter()
        .find(|&g| median(gaps(&|r| r.matrix == matrix && r.gamma0 == g)).is_some_and(|m| m > factor * null_gap))
}

// ---- amp-run ------------------------------------------------------------

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct AmpRow {
    pub gamma0: f64,
    pub seed: u64,
    pub t: usize,
    /// `|⟨x^{k_F}, x̂_t⟩|/N`, comparable with the state-evolution `q_t`.
    pub overlap: f64,
    pub mse: f64,
    pub q_emp: f64,
}

impl Row for AmpRow {
    const COLUMNS: &'static [&'static str] = &["gamma0", "seed", "t", "overlap", "mse", "q_emp"];
    fn fields(&self) -> Vec<String> {
        vec![num(self.gamma0), self.seed.to_string(), self.t.to_string(), num(self.overlap), num(self.mse), num(self.q_emp)]
    }
}

fn amp_cell(cfg: &ExperimentConfig, amp_cfg: &AmpConfig, p: &GridPoint, seed: u64, cell: u64) -> spiked_core::Result<Vec<AmpRow>> {
    let inst = instance(cfg, p, cell)?;
    let a = scaled_fisher(&inst, p.fisher.k_f)?;
    let m = p.prediction.m2kf;
    let top = top_eigs(&a, 1, amp_cfg.eig_tol, amp_cfg.eig_max_iter, derive_seed(&[cell, STREAM_EIGEN]))?.remove(0);
    let sign = orientation(&p.p_kf, &top.vector, p.prediction.q0, m);
    let v1: Vec<f64> = top.vector.iter().map(|v| sign * v).collect();
    let u = inst.signal_power(p.fisher.k_f);
    let (traj, _, _) = amp_from_direction(&a, &p.p_kf, p.fisher.delta_kf, &v1, &u, amp_cfg)?;
    Ok(traj
        .into_iter()
        .map(|r| AmpRow { gamma0: p.gamma0, seed, t: r.t, overlap: r.overlap, mse: r.mse, q_emp: r.q_emp })
        .collect())
}

pub fn run_amp(cfg: &ExperimentConfig, pool: &rayon::ThreadPool) -> Report<AmpRow> {
    let amp_cfg = cfg.amp.to_amp_config();
    let mut report = run_cells(cfg, pool, |p, seed, cell| amp_cell(cfg, &amp_cfg, p, seed, cell));
    if !cfg.amp.onsager {
        report.notes.push("onsager correction disabled".into());
    }
    report
}
