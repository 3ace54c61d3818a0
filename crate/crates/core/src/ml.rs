//! Shadow kernels, kernel PCA and the SSH phase scan.

use nalgebra::{DMatrix, SymmetricEigen};
use num_complex::Complex64 as C64;
use rand::RngCore;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, FisherSnedecor};

use crate::clifford::{Ensemble, EnsembleKind};
use crate::error::{Error, Result};
use crate::noise::{calibrate_alpha, CalibrationOptions, NoiseModel};
use crate::pauli::BlockLayout;
use crate::rng::substream;
use crate::shadow::{acquire, block_snapshot, AcquireConfig, ShadowDataset, ShadowRecord};
use crate::state::{ssh_ground_state, StateVector};
use crate::stats;

/// Per-shot, per-block snapshots `(2^k+1)u†|b⟩⟨b|u − I`.
pub fn block_snapshots(rec: &ShadowRecord) -> Vec<Vec<DMatrix<C64>>> {
    let layout = rec.unitary.layout();
    let mats: Vec<DMatrix<C64>> = rec.unitary.blocks().iter().map(|b| b.matrix()).collect();
    rec.bitstrings
        .iter()
        .map(|&bits| {
            mats.iter().enumerate().map(|(i, u)| block_snapshot(u, layout.block_bits(bits, i))).collect()
        })
        .collect()
}

/// Kernel hyperparameters; one `γ` per block.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct KernelParams {
    pub tau: f64,
    pub gammas: Vec<f64>,
}

impl KernelParams {
    pub fn uniform(tau: f64, gamma: f64, layout: &BlockLayout) -> Self {
        Self { tau, gammas: vec![gamma; layout.num_blocks()] }
    }

    /// `τ = 1`, `γ = 1` for single-qubit blocks and `0.25` otherwise.
    pub fn default_for(layout: &BlockLayout) -> Self {
        Self::uniform(1.0, if layout.k() == 1 { 1.0 } else { 0.25 }, layout)
    }
}

/// Per record and block, the shot-averaged projector `(1/S) Σ_s u†|b_s⟩⟨b_s|u`
/// (only the first shot when `average` is false).
pub fn averaged_projectors(ds: &ShadowDataset, average: bool) -> Vec<Vec<DMatrix<C64>>> {
    let layout = ds.layout();
    let d = layout.block_dim();
    ds.records
        .par_iter()
        .map(|r| {
            let shots: &[u128] = if average { &r.bitstrings } else { &r.bitstrings[..1] };
            r.unitary
                .blocks()
                .iter()
                .enumerate()
                .map(|(i, blk)| {
                    let u = blk.matrix();
                    let mut counts = vec![0usize; d];
                    for &s in shots {
                        counts[layout.block_bits(s, i)] += 1;
                    }
                    let mut m = DMatrix::<C64>::zeros(d, d);
                    for (c, &cnt) in counts.iter().enumerate() {
                        if cnt == 0 {
                            continue;
                        }
                        let a = u.row(c).adjoint();
                        m += &a * a.adjoint() * C64::new(cnt as f64 / shots.len() as f64, 0.0);
                    }
                    m
                })
                .collect()
        })
        .collect()
}

#[inline]
fn trace_product(a: &DMatrix<C64>, b: &DMatrix<C64>) -> f64 {
    a.iter().zip(b.iter()).map(|(x, y)| (x * y.conj()).re).sum()
}

/// `exp((1/(n/k)) Σ_i γ_i Tr(ρ̂_i σ̂_i))` for every record pair.
pub fn pair_matrix(a: &[Vec<DMatrix<C64>>], b: &[Vec<DMatrix<C64>>], params: &KernelParams, k: usize) -> DMatrix<f64> {
    let d = (1usize << k) as f64;
    let nb = params.gammas.len() as f64;
    let rows: Vec<Vec<f64>> = a
        .par_iter()
        .map(|ra| {
            b.iter()
                .map(|rb| {
                    let s: f64 = ra
                        .iter()
                        .zip(rb)
                        .zip(&params.gammas)
                        .map(|((x, y), g)| g * ((d + 1.0) * (d + 1.0) * trace_product(x, y) - 2.0 * (d + 1.0) + d))
                        .sum();
                    (s / nb).exp()
                })
                .collect()
        })
        .collect();
    DMatrix::from_fn(a.len(), b.len(), |i, j| rows[i][j])
}

fn check_pair(a: &ShadowDataset, b: &ShadowDataset, params: &KernelParams) -> Result<()> {
    if a.meta.n != b.meta.n || a.meta.k != b.meta.k {
        return Err(Error::Validation("datasets have different layouts".into()));
    }
    if a.records.len() != b.records.len() {
        return Err(Error::Validation("datasets have different record counts".into()));
    }
    if params.gammas.len() != a.layout().num_blocks() {
        return Err(Error::Validation("one γ per block expected".into()));
    }
    Ok(())
}

/// `exp((τ/T²) Σ_{t,t'} exp((1/(n/k)) Σ_i γ_i Tr(ρ̂_i^(t) σ̂_i^(t'))))`.
pub fn shadow_kernel(a: &ShadowDataset, b: &ShadowDataset, params: &KernelParams, average: bool) -> Result<f64> {
    check_pair(a, b, params)?;
    let pa = averaged_projectors(a, average);
    let pb = averaged_projectors(b, average);
    let m = pair_matrix(&pa, &pb, params, a.meta.k);
    Ok((params.tau * stats::sum(m.iter().copied()) / m.len() as f64).exp())
}

#[derive(Clone, Debug, PartialEq)]
pub struct KernelMatrix {
    pub values: DMatrix<f64>,
    pub params: KernelParams,
    pub averaged: bool,
}

struct PairCache {
    /// `pairs[i][j]` for `i <= j`.
    pairs: Vec<Vec<DMatrix<f64>>>,
    /// Record `t` of every dataset shares its unitary, so `t = t'` pairs are skipped everywhere.
    paired: bool,
}

impl PairCache {
    fn new(projs: &[Vec<Vec<DMatrix<C64>>>], params: &KernelParams, k: usize, paired: bool) -> Self {
        let m = projs.len();
        let pairs = (0..m)
            .map(|i| (i..m).map(|j| pair_matrix(&projs[i], &projs[j], params, k)).collect())
            .collect();
        Self { pairs, paired }
    }

    fn kernel(&self, tau: f64, idx: Option<&[Vec<usize>]>) -> DMatrix<f64> {
        let m = self.pairs.len();
        let mut out = DMatrix::zeros(m, m);
        for i in 0..m {
            for j in i..m {
                let p = &self.pairs[i][j - i];
                let mean = match idx {
                    None => {
                        let mut s = 0.0;
                        let mut c = 0usize;
                        for a in 0..p.nrows() {
                            for b in 0..p.ncols() {
                                if (i == j || self.paired) && a == b {
                                    continue;
                                }
                                s += p[(a, b)];
                                c += 1;
                            }
                        }
                        s / c as f64
                    }
                    Some(idx) => {
                        let mut s = 0.0;
                        let mut c = 0usize;
                        for &a in &idx[i] {
                            for &b in &idx[j] {
                                if (i == j || self.paired) && a == b {
                                    continue;
                                }
                                s += p[(a, b)];
                                c += 1;
                            }
                        }
                        s / c as f64
                    }
                };
                let v = (tau * mean).exp();
                out[(i, j)] = v;
                out[(j, i)] = v;
            }
        }
        out
    }
}

pub fn kernel_matrix(datasets: &[ShadowDataset], params: &KernelParams, average: bool) -> Result<KernelMatrix> {
    if datasets.is_empty() {
        return Err(Error::Validation("no datasets".into()));
    }
    for d in datasets {
        check_pair(&datasets[0], d, params)?;
    }
    let projs: Vec<_> = datasets.iter().map(|d| averaged_projectors(d, average)).collect();
    let cache = PairCache::new(&projs, params, datasets[0].meta.k, false);
    Ok(KernelMatrix { values: cache.kernel(params.tau, None), params: params.clone(), averaged: average })
}

#[derive(Clone, Debug, PartialEq)]
pub struct PcaResult {
    /// Eigenvalues of the centered kernel, descending.
    pub eigenvalues: Vec<f64>,
    /// Column `j` holds the projections of every data point on component `j`.
    pub projections: DMatrix<f64>,
}

/// Double-centered kernel PCA. Each component's sign is fixed so its first
/// non-negligible projection is positive.
pub fn kernel_pca(k: &DMatrix<f64>, components: usize) -> Result<PcaResult> {
    let m = k.nrows();
    if m < 2 || k.ncols() != m {
        return Err(Error::Validation("kernel must be square with at least two points".into()));
    }
    let scale = k.amax().max(1e-300);
    if (k - k.transpose()).amax() > 1e-12 * scale {
        return Err(Error::Validation("kernel matrix is not symmetric".into()));
    }
    let h = DMatrix::<f64>::identity(m, m) - DMatrix::<f64>::from_element(m, m, 1.0 / m as f64);
    let c = &h * k * &h;
    let c = (&c + c.transpose()) * 0.5;
    let eig = SymmetricEigen::new(c);
    let mut order: Vec<usize> = (0..m).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]));
    let comps = components.min(m);
    let eigenvalues: Vec<f64> = order.iter().map(|&i| eig.eigenvalues[i]).collect();
    let mut proj = DMatrix::<f64>::zeros(m, comps);
    for (j, &i) in order.iter().take(comps).enumerate() {
        let lam = eig.eigenvalues[i].max(0.0).sqrt();
        let v = eig.eigenvectors.column(i);
        let pivot = v.iter().find(|x| x.abs() > 1e-9).copied().unwrap_or(1.0);
        let sign = if pivot < 0.0 { -1.0 } else { 1.0 };
        for r in 0..m {
            proj[(r, j)] = sign * lam * v[r];
        }
    }
    Ok(PcaResult { eigenvalues, projections: proj })
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct EmKernelParams {
    pub gamma: f64,
    pub tau: f64,
    /// Per-block offset `β` in `Tr(M̃⁻¹A M̃⁻¹B) = α² Tr(M⁻¹A M⁻¹B) + β`.
    pub beta: f64,
}

/// Raw-data hyperparameters that reproduce the mitigated kernel for a uniform amplification `α`.
pub fn em_kernel_params(gamma: f64, tau: f64, alpha: f64, k: usize) -> EmKernelParams {
    let d = (1usize << k) as f64;
    let c = (alpha * (d + 1.0) - 1.0) / d;
    let beta = alpha * alpha * (d + 2.0) - 2.0 * alpha * (d + 1.0) * c + c * c * d;
    EmKernelParams { gamma: gamma * alpha * alpha, tau: tau * (gamma * beta).exp(), beta }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TanhFit {
    pub a: f64,
    pub b: f64,
    pub c: f64,
    pub w0: f64,
    /// Root-mean-square residual.
    pub residual: f64,
    /// F statistic of the fit against a constant.
    pub f_stat: f64,
}

impl TanhFit {
    pub fn eval(&self, w: f64) -> f64 {
        self.a * ((w - self.w0) / self.b).tanh() + self.c
    }

    /// `max_w |f'(w)| = |a / b|`, attained at `w₀`.
    pub fn peak_derivative(&self) -> f64 {
        (self.a / self.b).abs()
    }

    /// Upper tail probability of `f_stat` under `F(3, points − 4)`.
    pub fn p_value(&self, points: usize) -> f64 {
        if points <= 4 || !self.f_stat.is_finite() {
            return if self.f_stat.is_finite() { 1.0 } else { 0.0 };
        }
        let f = FisherSnedecor::new(3.0, (points - 4) as f64).expect("positive degrees of freedom");
        f.sf(self.f_stat.max(0.0))
    }
}

/// Best `(a, c, rss)` for fixed `(w₀, b)`.
fn linear_part(w: &[f64], y: &[f64], w0: f64, b: f64) -> (f64, f64, f64) {
    let n = w.len() as f64;
    let t: Vec<f64> = w.iter().map(|&x| ((x - w0) / b).tanh()).collect();
    let (st, sy) = (t.iter().sum::<f64>(), y.iter().sum::<f64>());
    let stt: f64 = t.iter().map(|v| v * v).sum();
    let sty: f64 = t.iter().zip(y).map(|(a, b)| a * b).sum();
    let det = n * stt - st * st;
    let (a, c) = if det.abs() < 1e-14 { (0.0, sy / n) } else { ((n * sty - st * sy) / det, (stt * sy - st * sty) / det) };
    let rss = t.iter().zip(y).map(|(ti, yi)| (a * ti + c - yi).powi(2)).sum();
    (a, c, rss)
}

/// Least squares fit of `a·tanh((w − w₀)/b) + c` with `w₀` kept inside the data range.
pub fn fit_tanh(w: &[f64], y: &[f64]) -> Result<TanhFit> {
    if w.len() != y.len() || w.len() < 5 {
        return Err(Error::Validation("need at least five points".into()));
    }
    let (lo, hi) = w.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(l, h), &x| (l.min(x), h.max(x)));
    let span = hi - lo;
    if !(span > 0.0) {
        return Err(Error::Validation("degenerate w grid".into()));
    }
    let mut sorted = w.to_vec();
    sorted.sort_by(f64::total_cmp);
    // Transitions narrower than the grid spacing are not identifiable.
    let b_min = sorted.windows(2).map(|p| p[1] - p[0]).filter(|d| *d > 0.0).fold(f64::INFINITY, f64::min);
    let b_max = span * 5.0;
    let mut best = (f64::INFINITY, lo, b_min);
    for i in 0..=80 {
        let w0 = lo + span * i as f64 / 80.0;
        for j in 0..=40 {
            let b = b_min * (b_max / b_min).powf(j as f64 / 40.0);
            let (_, _, rss) = linear_part(w, y, w0, b);
            if rss < best.0 {
                best = (rss, w0, b);
            }
        }
    }
    // Pattern search around the best grid point.
    let (mut rss, mut w0, mut b) = best;
    let mut step_w = span / 80.0;
    let mut step_b = 0.25f64;
    while step_w > span * 1e-10 {
        let mut improved = false;
        for (dw, db) in [(1.0, 0.0), (-1.0, 0.0), (0.0, 1.0), (0.0, -1.0)] {
            let cw = (w0 + dw * step_w).clamp(lo, hi);
            let cb = (b * (db * step_b).exp()).clamp(b_min, b_max);
            let (_, _, r) = linear_part(w, y, cw, cb);
            if r < rss {
                rss = r;
                w0 = cw;
                b = cb;
                improved = true;
            }
        }
        if !improved {
            step_w *= 0.5;
            step_b *= 0.5;
        }
    }
    let (a, c, rss) = linear_part(w, y, w0, b);
    let mean = stats::mean(y);
    let tss: f64 = y.iter().map(|v| (v - mean).powi(2)).sum();
    let np = w.len() as f64;
    let f_stat = if rss > 0.0 { ((tss - rss) / 3.0) / (rss / (np - 4.0)) } else { f64::INFINITY };
    Ok(TanhFit { a, b, c, w0, residual: (rss / np).sqrt(), f_stat })
}

/// Shifts to zero mean and scales to unit maximum magnitude.
pub fn normalize_curve(y: &[f64]) -> Vec<f64> {
    let m = stats::mean(y);
    let s = y.iter().fold(0.0f64, |acc, v| acc.max((v - m).abs()));
    if s == 0.0 {
        return vec![0.0; y.len()];
    }
    y.iter().map(|v| (v - m) / s).collect()
}

#[derive(Clone, Debug)]
pub struct PhaseScanConfig {
    pub w_grid: Vec<f64>,
    pub v: f64,
    pub n: usize,
    pub k: usize,
    /// Records per grid point.
    pub records: usize,
    /// Shots per record; the kernel averages them.
    pub shots: usize,
    pub ensemble: EnsembleKind,
    pub params: Option<KernelParams>,
    pub seed: u64,
    pub noise: Option<NoiseModel>,
    /// Records in the calibration run on `|0^n⟩` when noise is present.
    pub calibration_records: usize,
    pub bootstrap: usize,
    /// Reuse the same `T` unitaries at every grid point (shots stay independent).
    pub shared_unitaries: bool,
}

impl PhaseScanConfig {
    pub fn new(n: usize, k: usize, records: usize, seed: u64) -> Self {
        let w_grid = (0..19).map(|i| 0.2 + 0.1 * i as f64).collect();
        Self {
            w_grid,
            v: 1.0,
            n,
            k,
            records,
            shots: 80,
            ensemble: EnsembleKind::CliffordFull,
            params: None,
            seed,
            noise: None,
            calibration_records: 2000,
            bootstrap: 100,
            shared_unitaries: true,
        }
    }
}

const SIGNIFICANCE: f64 = 1e-3;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FitReport {
    pub a: f64,
    pub b: f64,
    pub c: f64,
    pub w0: f64,
    pub w0_stderr: f64,
    pub residual: f64,
    pub peak_derivative: f64,
    pub f_stat: f64,
    pub p_value: f64,
    /// The tanh beats a constant at `p < 1e-3`; otherwise no transition is resolved.
    pub significant: bool,
    /// Uniform amplification used for the mitigated kernel, when noise was simulated.
    pub alpha: Option<f64>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct PhaseScanResult {
    pub w: Vec<f64>,
    pub pc1: Vec<f64>,
    pub pc1_stderr: Vec<f64>,
    pub fit: FitReport,
}

pub fn phase_scan(cfg: &PhaseScanConfig) -> Result<PhaseScanResult> {
    if cfg.n % 2 != 0 {
        return Err(Error::Validation(format!("SSH chains need an even n, got {}", cfg.n)));
    }
    if cfg.w_grid.len() < 5 {
        return Err(Error::Validation("need at least five w values".into()));
    }
    if cfg.records == 0 || cfg.shots == 0 {
        return Err(Error::Validation("records and shots must be positive".into()));
    }
    let layout = BlockLayout::new(cfg.n, cfg.k)?;
    let ens = Ensemble::from_parts(cfg.ensemble, layout)?;
    let base = cfg.params.clone().unwrap_or_else(|| KernelParams::default_for(&layout));
    if base.gammas.len() != layout.num_blocks() {
        return Err(Error::Validation("one γ per block expected".into()));
    }
    let mut seeds = substream(cfg.seed, 0);
    let point_seeds: Vec<u64> = cfg.w_grid.iter().map(|_| seeds.next_u64()).collect();
    let cal_seed = seeds.next_u64();
    let boot_seed = seeds.next_u64();
    let unitary_seed = seeds.next_u64();
    let shared = cfg.shared_unitaries;
    if shared && cfg.records < 2 {
        return Err(Error::Validation("shared unitaries need at least two records".into()));
    }

    let datasets = cfg
        .w_grid
        .iter()
        .zip(&point_seeds)
        .map(|(&w, &s)| {
            let psi = ssh_ground_state(cfg.n, cfg.v, w)?;
            let ac = if shared {
                AcquireConfig::new(cfg.records, cfg.shots, unitary_seed).with_shot_seed(s)
            } else {
                AcquireConfig::new(cfg.records, cfg.shots, s)
            };
            acquire(&psi, &ens, ac, cfg.noise.as_ref())
        })
        .collect::<Result<Vec<_>>>()?;

    let (params, alpha) = match &cfg.noise {
        None => (base, None),
        Some(nm) => {
            let zero = StateVector::zero(cfg.n)?;
            let cal = acquire(&zero, &ens, AcquireConfig::new(cfg.calibration_records, 1, cal_seed), Some(nm))?;
            let rep = calibrate_alpha(&cal, &zero, &CalibrationOptions::default())?;
            let alphas: Vec<f64> = rep.labels.values().map(|a| a.alpha).collect();
            let alpha = stats::mean(&alphas);
            let gammas = base
                .gammas
                .iter()
                .map(|&g| em_kernel_params(g, 1.0, alpha, cfg.k).gamma)
                .collect();
            let shift: f64 = base.gammas.iter().map(|&g| em_kernel_params(g, 1.0, alpha, cfg.k).tau.ln()).sum::<f64>()
                / base.gammas.len() as f64;
            (KernelParams { tau: base.tau * shift.exp(), gammas }, Some(alpha))
        }
    };

    let projs: Vec<_> = datasets.iter().map(|d| averaged_projectors(d, true)).collect();
    let cache = PairCache::new(&projs, &params, cfg.k, shared);
    let kmat = cache.kernel(params.tau, None);
    let pca = kernel_pca(&kmat, 1)?;
    let pc1: Vec<f64> = pca.projections.column(0).iter().copied().collect();
    let fit = fit_tanh(&cfg.w_grid, &normalize_curve(&pc1))?;

    // Shared unitaries pair the records across datasets, so they are resampled jointly.
    let g = cfg.w_grid.len();
    let idx = stats::bootstrap_indices(cfg.records, cfg.bootstrap * if shared { 1 } else { g }, boot_seed);
    let reps: Vec<(Vec<f64>, f64)> = (0..cfg.bootstrap)
        .into_par_iter()
        .map(|r| {
            let sel: Vec<Vec<usize>> =
                if shared { vec![idx[r].clone(); g] } else { idx[r * g..(r + 1) * g].to_vec() };
            let km = cache.kernel(params.tau, Some(&sel));
            let p = kernel_pca(&km, 1).expect("square symmetric kernel");
            let mut col: Vec<f64> = p.projections.column(0).iter().copied().collect();
            let dot: f64 = col.iter().zip(&pc1).map(|(a, b)| a * b).sum();
            if dot < 0.0 {
                col.iter_mut().for_each(|v| *v = -*v);
            }
            let w0 = fit_tanh(&cfg.w_grid, &normalize_curve(&col)).map(|f| f.w0).unwrap_or(f64::NAN);
            (col, w0)
        })
        .collect();
    let pc1_stderr = (0..pc1.len())
        .map(|i| {
            let v: Vec<f64> = reps.iter().map(|r| r.0[i]).collect();
            if v.len() < 2 {
                0.0
            } else {
                stats::variance(&v).sqrt()
            }
        })
        .collect();
    let w0s: Vec<f64> = reps.iter().map(|r| r.1).filter(|v| v.is_finite()).collect();
    let w0_stderr = if w0s.len() < 2 { f64::NAN } else { stats::variance(&w0s).sqrt() };
    let p_value = fit.p_value(g);
    Ok(PhaseScanResult {
        w: cfg.w_grid.clone(),
        pc1,
        pc1_stderr,
        fit: FitReport {
            a: fit.a,
            b: fit.b,
            c: fit.c,
            w0: fit.w0,
            w0_stderr,
            residual: fit.residual,
            peak_derivative: fit.peak_derivative(),
            f_stat: fit.f_stat,
            p_value,
            significant: p_value < SIGNIFICANCE,
            alpha,
        },
    })
}

impl FitReport {
    /// Peak slope of a significant fit, zero when no transition is resolved.
    pub fn resolved_peak_derivative(&self) -> f64 {
        if self.significant {
            self.peak_derivative
        } else {
            0.0
        }
    }
}
