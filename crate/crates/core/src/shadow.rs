//! Shadow datasets and the estimators built on them.
//!
//! Every estimator reduces a dataset to one value per record (the average over
//! that record's shots) and aggregates the record values; standard errors come
//! from a bootstrap over records.

use nalgebra::DMatrix;
use num_complex::Complex64 as C64;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::clifford::{BlockUnitary, Ensemble, EnsembleKind, LayeredBlockUnitary};
use crate::error::{Error, Result};
use crate::noise::NoiseModel;
use crate::pauli::{BlockLayout, ObservableSum, PauliString};
use crate::rng::{aux_substream, substream};
use crate::state::{Propagator, StateVector};
use crate::stats;

/// `𝓜_k(A) = (A + Tr(A) I) / (2^k + 1)`.
pub fn shadow_channel_forward(a: &DMatrix<C64>, k: usize) -> DMatrix<C64> {
    let d = 1usize << k;
    assert_eq!(a.nrows(), d);
    let tr = a.trace();
    (a + DMatrix::<C64>::identity(d, d) * tr) / C64::new((d + 1) as f64, 0.0)
}

/// `𝓜_k⁻¹(A) = (2^k + 1) A − Tr(A) I`.
pub fn shadow_channel_inverse(a: &DMatrix<C64>, k: usize) -> DMatrix<C64> {
    let d = 1usize << k;
    assert_eq!(a.nrows(), d);
    let tr = a.trace();
    a * C64::new((d + 1) as f64, 0.0) - DMatrix::<C64>::identity(d, d) * tr
}

/// `(2^k + 1) u†|b⟩⟨b|u − I` for one block.
pub fn block_snapshot(u: &DMatrix<C64>, b: usize) -> DMatrix<C64> {
    let d = u.nrows();
    let row = u.row(b);
    let v: Vec<C64> = row.iter().map(|a| a.conj()).collect();
    DMatrix::from_fn(d, d, |i, j| {
        let proj = v[i] * v[j].conj() * C64::new((d + 1) as f64, 0.0);
        if i == j {
            proj - C64::new(1.0, 0.0)
        } else {
            proj
        }
    })
}

/// `Π_blocks ((2^k+1)·δ(b_block, c_block) − 1)`: the trace of one snapshot
/// against the channel-inverted other, for two outcomes under the same unitary.
#[inline]
pub fn pair_value(layout: &BlockLayout, b: u128, c: u128) -> f64 {
    let d1 = (layout.block_dim() + 1) as f64;
    let mut v = 1.0;
    let diff = b ^ c;
    for blk in 0..layout.num_blocks() {
        v *= if diff & layout.block_mask(blk) == 0 { d1 - 1.0 } else { -1.0 };
    }
    v
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DatasetMeta {
    pub n: usize,
    pub k: usize,
    pub ensemble: EnsembleKind,
    pub seed: u64,
    #[serde(default)]
    pub shot_seed: u64,
    pub noise_tag: String,
    #[serde(rename = "N_U")]
    pub n_u: usize,
    #[serde(rename = "N_S")]
    pub n_s: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ShadowRecord {
    pub unitary: LayeredBlockUnitary,
    /// Outcomes as bit masks, bit `q` = qubit `q+1`.
    pub bitstrings: Vec<u128>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ShadowDataset {
    pub meta: DatasetMeta,
    pub records: Vec<ShadowRecord>,
}

impl ShadowDataset {
    pub fn layout(&self) -> BlockLayout {
        BlockLayout::new(self.meta.n, self.meta.k).expect("validated at construction")
    }

    /// Checks record count, shot counts, layouts and outcome widths against the metadata.
    pub fn validate(&self) -> Result<()> {
        let layout = BlockLayout::new(self.meta.n, self.meta.k)?;
        if self.records.len() != self.meta.n_u {
            return Err(Error::Validation(format!(
                "{} records but N_U = {}",
                self.records.len(),
                self.meta.n_u
            )));
        }
        for (i, r) in self.records.iter().enumerate() {
            if *r.unitary.layout() != layout {
                return Err(Error::Validation(format!("record {i} has a different layout")));
            }
            if r.bitstrings.len() != self.meta.n_s || r.bitstrings.is_empty() {
                return Err(Error::Validation(format!("record {i} has {} shots", r.bitstrings.len())));
            }
            if layout.n() < 128 && r.bitstrings.iter().any(|&b| b >> layout.n() != 0) {
                return Err(Error::Validation(format!("record {i} has an outcome wider than n")));
            }
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug)]
pub struct AcquireConfig {
    pub n_u: usize,
    pub n_s: usize,
    /// Seeds the unitary stream; datasets with equal seeds share unitaries.
    pub seed: u64,
    /// Seeds the shot stream; defaults to `seed` (on a disjoint stream family).
    pub shot_seed: Option<u64>,
}

impl AcquireConfig {
    pub fn new(n_u: usize, n_s: usize, seed: u64) -> Self {
        Self { n_u, n_s, seed, shot_seed: None }
    }

    pub fn with_shot_seed(mut self, s: u64) -> Self {
        self.shot_seed = Some(s);
        self
    }
}

/// Samples `N_U` unitaries and `N_S` outcomes per unitary. Record `i` only
/// depends on `(seed, i)` and `(shot_seed, i)`.
pub fn acquire(
    psi: &StateVector,
    ensemble: &Ensemble,
    cfg: AcquireConfig,
    noise: Option<&NoiseModel>,
) -> Result<ShadowDataset> {
    let layout = *ensemble.layout();
    if layout.n() != psi.n() {
        return Err(Error::Dimension(format!("ensemble on {} qubits, state on {}", layout.n(), psi.n())));
    }
    if cfg.n_s == 0 || cfg.n_u == 0 {
        return Err(Error::Validation("N_U and N_S must be positive".into()));
    }
    if let Some(nm) = noise {
        nm.validate(&layout)?;
        if !ensemble.kind().is_clifford() && nm.layer_count() > 1 {
            return Err(Error::Unsupported("layered noise needs a Clifford ensemble".into()));
        }
    }
    let shot_seed = cfg.shot_seed.unwrap_or(cfg.seed);
    let records: Vec<Result<ShadowRecord>> = (0..cfg.n_u)
        .into_par_iter()
        .map(|i| {
            let mut urng = substream(cfg.seed, i as u64);
            let unitary = ensemble.sample(&mut urng);
            let mut srng = aux_substream(shot_seed, i as u64);
            let bitstrings = match noise {
                None => psi.apply_block_unitary(&unitary)?.sample_bitstrings(cfg.n_s, &mut srng),
                Some(nm) => nm.sample_shots(psi, &unitary, cfg.n_s, &mut srng)?,
            };
            Ok(ShadowRecord { unitary, bitstrings })
        })
        .collect();
    let records = records.into_iter().collect::<Result<Vec<_>>>()?;
    Ok(ShadowDataset {
        meta: DatasetMeta {
            n: layout.n(),
            k: layout.k(),
            ensemble: ensemble.kind(),
            seed: cfg.seed,
            shot_seed,
            noise_tag: noise.map(|m| m.tag()).unwrap_or_else(|| "none".into()),
            n_u: cfg.n_u,
            n_s: cfg.n_s,
        },
        records,
    })
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Aggregation {
    Mean,
    MedianOfMeans { groups: usize },
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum StdErrMethod {
    Bootstrap { resamples: usize, seed: u64 },
    /// Sample standard deviation of the record values over `sqrt(N_U)`.
    Analytic,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct EstimatorOptions {
    pub aggregation: Aggregation,
    pub stderr: StdErrMethod,
}

impl Default for EstimatorOptions {
    fn default() -> Self {
        Self { aggregation: Aggregation::Mean, stderr: StdErrMethod::Bootstrap { resamples: 1000, seed: 0 } }
    }
}

impl EstimatorOptions {
    pub fn analytic() -> Self {
        Self { aggregation: Aggregation::Mean, stderr: StdErrMethod::Analytic }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Estimate {
    pub mean: f64,
    pub stderr: f64,
    pub n_u: usize,
    pub n_s: usize,
    pub per_record: Vec<f64>,
}

impl Estimate {
    pub fn z_score(&self, exact: f64) -> f64 {
        if self.stderr == 0.0 {
            if (self.mean - exact).abs() <= 1e-12 * exact.abs().max(1.0) {
                0.0
            } else {
                f64::INFINITY
            }
        } else {
            (self.mean - exact) / self.stderr
        }
    }
}

pub fn finalize(per_record: Vec<f64>, n_s: usize, opts: &EstimatorOptions) -> Estimate {
    let agg = |v: &[f64]| match opts.aggregation {
        Aggregation::Mean => stats::mean(v),
        Aggregation::MedianOfMeans { groups } => stats::median_of_means(v, groups),
    };
    let mean = agg(&per_record);
    let stderr = match opts.stderr {
        StdErrMethod::Analytic if opts.aggregation == Aggregation::Mean => stats::analytic_stderr(&per_record),
        StdErrMethod::Analytic => {
            stats::variance(&stats::bootstrap_replicates(&per_record, 200, 0, agg)).sqrt()
        }
        StdErrMethod::Bootstrap { resamples, seed } => {
            let reps = stats::bootstrap_replicates(&per_record, resamples, seed, agg);
            if reps.len() < 2 {
                0.0
            } else {
                stats::variance(&reps).sqrt()
            }
        }
    };
    Estimate { mean, stderr, n_u: per_record.len(), n_s, per_record }
}

/// Per-block outcome tables `t_b[c]` such that the snapshot estimate of `P`
/// for outcome `b` is `Π_blocks t_b[b_block]`. `None` for identity blocks.
fn pauli_block_tables(u: &LayeredBlockUnitary, p: &PauliString) -> Vec<Option<Vec<f64>>> {
    let layout = u.layout();
    let k = layout.k();
    let d = layout.block_dim();
    let d1 = (d + 1) as f64;
    u.blocks()
        .iter()
        .enumerate()
        .map(|(b, blk)| {
            let local = p.restrict(layout.block_start(b), k);
            if local.is_identity() {
                return None;
            }
            Some(match blk {
                BlockUnitary::Tableau(t) => {
                    let img = t.conjugate(&local);
                    if !img.is_z_type() {
                        vec![0.0; d]
                    } else {
                        let s = img.sign() * d1;
                        let z = img.z_mask() as usize;
                        (0..d).map(|c| if (z & c).count_ones() % 2 == 1 { -s } else { s }).collect()
                    }
                }
                BlockUnitary::Dense(m) => {
                    let pm = local.to_matrix();
                    let conj = m * pm * m.adjoint();
                    (0..d).map(|c| d1 * conj[(c, c)].re).collect()
                }
            })
        })
        .collect()
}

/// `(1/N_S) Σ_j Tr(P ρ̂_j)` for one record; the sign of `P` is honoured.
pub fn pauli_record_value(rec: &ShadowRecord, p: &PauliString) -> f64 {
    let layout = rec.unitary.layout();
    let sign = p.sign();
    if p.is_identity() {
        return sign;
    }
    let tables = pauli_block_tables(&rec.unitary, &p.unsigned());
    if tables.iter().flatten().any(|t| t.iter().all(|&v| v == 0.0)) {
        return 0.0;
    }
    let total: f64 = rec
        .bitstrings
        .iter()
        .map(|&bits| {
            tables
                .iter()
                .enumerate()
                .filter_map(|(b, t)| t.as_ref().map(|t| t[layout.block_bits(bits, b)]))
                .product::<f64>()
        })
        .sum();
    sign * total / rec.bitstrings.len() as f64
}

fn observable_record_value(rec: &ShadowRecord, o: &ObservableSum) -> f64 {
    stats::sum(o.terms().iter().map(|&(c, p)| c * pauli_record_value(rec, &p)))
}

fn check_n(ds: &ShadowDataset, n: usize) -> Result<()> {
    if ds.meta.n != n {
        return Err(Error::Dimension(format!("dataset on {} qubits, operand on {n}", ds.meta.n)));
    }
    Ok(())
}

pub fn estimate_pauli(ds: &ShadowDataset, p: &PauliString, opts: &EstimatorOptions) -> Result<Estimate> {
    check_n(ds, p.n())?;
    if !p.is_hermitian() {
        return Err(Error::Validation(format!("{p} is not Hermitian")));
    }
    let vals: Vec<f64> = ds.records.par_iter().map(|r| pauli_record_value(r, p)).collect();
    Ok(finalize(vals, ds.meta.n_s, opts))
}

pub fn estimate_observable(ds: &ShadowDataset, o: &ObservableSum, opts: &EstimatorOptions) -> Result<Estimate> {
    check_n(ds, o.n())?;
    let vals: Vec<f64> = ds.records.par_iter().map(|r| observable_record_value(r, o)).collect();
    Ok(finalize(vals, ds.meta.n_s, opts))
}

/// `Σ_c q_c Π_blocks((2^k+1)δ(c_block, b_block) − 1)` for every outcome `b`,
/// i.e. `⊗_blocks((D+1)I − J)` applied to the distribution `q`.
fn snapshot_transform(layout: &BlockLayout, q: &[f64]) -> Vec<f64> {
    let d = layout.block_dim();
    let k = layout.k();
    let d1 = (d + 1) as f64;
    let mut v = q.to_vec();
    for b in 0..layout.num_blocks() {
        let shift = layout.block_start(b);
        let mask = (d - 1) << shift;
        let mut out = vec![0.0; v.len()];
        for base in 0..v.len() {
            if base & mask != 0 {
                continue;
            }
            let s: f64 = (0..d).map(|c| v[base | (c << shift)]).sum();
            for c in 0..d {
                out[base | (c << shift)] = d1 * v[base | (c << shift)] - s;
            }
        }
        v = out;
        let _ = k;
    }
    v
}

/// Mean over snapshots of `⟨Ψ|ρ̂|Ψ⟩`.
pub fn estimate_fidelity(ds: &ShadowDataset, target: &StateVector, opts: &EstimatorOptions) -> Result<Estimate> {
    check_n(ds, target.n())?;
    let layout = ds.layout();
    let vals: Vec<Result<f64>> = ds
        .records
        .par_iter()
        .map(|r| {
            let q = target.apply_block_unitary(&r.unitary)?.probabilities();
            let t = snapshot_transform(&layout, &q);
            Ok(r.bitstrings.iter().map(|&b| t[b as usize]).sum::<f64>() / r.bitstrings.len() as f64)
        })
        .collect();
    Ok(finalize(vals.into_iter().collect::<Result<_>>()?, ds.meta.n_s, opts))
}

/// U-statistic over distinct shot pairs of each record.
pub fn estimate_purity(ds: &ShadowDataset, opts: &EstimatorOptions) -> Result<Estimate> {
    if ds.meta.n_s < 2 {
        return Err(Error::Validation("purity needs at least two shots per unitary".into()));
    }
    let layout = ds.layout();
    let vals: Vec<f64> = ds
        .records
        .par_iter()
        .map(|r| {
            let b = &r.bitstrings;
            let mut acc = 0.0;
            for i in 1..b.len() {
                for j in 0..i {
                    acc += pair_value(&layout, b[i], b[j]);
                }
            }
            acc / (b.len() * (b.len() - 1) / 2) as f64
        })
        .collect();
    Ok(finalize(vals, ds.meta.n_s, opts))
}

fn check_shared_unitaries(a: &ShadowDataset, b: &ShadowDataset) -> Result<()> {
    if a.meta.n != b.meta.n || a.meta.k != b.meta.k || a.records.len() != b.records.len() {
        return Err(Error::Validation("datasets differ in shape".into()));
    }
    if a.records.iter().zip(&b.records).any(|(x, y)| x.unitary != y.unitary) {
        return Err(Error::Validation("datasets do not share their unitaries".into()));
    }
    Ok(())
}

/// `Tr(ρσ)` from two datasets measured with the same unitaries.
pub fn estimate_inner_product(
    ds_rho: &ShadowDataset,
    ds_sigma: &ShadowDataset,
    opts: &EstimatorOptions,
) -> Result<Estimate> {
    check_shared_unitaries(ds_rho, ds_sigma)?;
    if ds_rho.meta.shot_seed == ds_sigma.meta.shot_seed {
        return Err(Error::Validation("the two datasets reuse one shot stream; acquire them with distinct shot seeds".into()));
    }
    let layout = ds_rho.layout();
    let vals: Vec<f64> = ds_rho
        .records
        .par_iter()
        .zip(ds_sigma.records.par_iter())
        .map(|(r, s)| {
            let mut acc = 0.0;
            for &b in &r.bitstrings {
                for &c in &s.bitstrings {
                    acc += pair_value(&layout, b, c);
                }
            }
            acc / (r.bitstrings.len() * s.bitstrings.len()) as f64
        })
        .collect();
    Ok(finalize(vals, ds_rho.meta.n_s, opts))
}

#[derive(Clone, Copy, Debug)]
pub enum CrmMode<'a> {
    /// Classical `σ̂` built from `Tr(σP)` and the indicator (Clifford ensembles only).
    Old,
    /// `σ̂` from a dataset of `σ` acquired with the same unitaries.
    New(&'a ShadowDataset),
}

/// `Tr(P σ̂_old(U)) = m_P⁻¹ Tr(σP) 1{UPU† ∈ ±Z}`.
pub fn sigma_old_value(u: &LayeredBlockUnitary, p: &PauliString, tr_sigma_p: f64) -> Option<f64> {
    let layout = u.layout();
    let ind = u.indicator(p)?;
    let minv = ((layout.block_dim() + 1) as f64).powi(p.block_weight(layout) as i32);
    Some(if ind { minv * tr_sigma_p } else { 0.0 })
}

/// `Tr(O(ρ̂ − σ̂ + σ))` with `σ` known exactly.
pub fn crm_estimate(
    ds_rho: &ShadowDataset,
    sigma: &StateVector,
    mode: CrmMode<'_>,
    o: &ObservableSum,
    opts: &EstimatorOptions,
) -> Result<Estimate> {
    check_n(ds_rho, o.n())?;
    check_n(ds_rho, sigma.n())?;
    let exact_sigma = sigma.expectation(o)?;
    let vals: Vec<f64> = match mode {
        CrmMode::Old => {
            if !ds_rho.meta.ensemble.is_clifford() {
                return Err(Error::Unsupported("the classical σ̂ needs a Clifford ensemble".into()));
            }
            let tr: Vec<f64> = o.terms().iter().map(|(_, p)| sigma.expectation_pauli(p)).collect();
            ds_rho
                .records
                .par_iter()
                .map(|r| {
                    let mut acc = exact_sigma;
                    for (&(c, p), &t) in o.terms().iter().zip(&tr) {
                        let s = sigma_old_value(&r.unitary, &p, t).expect("Clifford record");
                        acc += c * (pauli_record_value(r, &p) - s);
                    }
                    acc
                })
                .collect()
        }
        CrmMode::New(ds_sigma) => {
            check_shared_unitaries(ds_rho, ds_sigma)?;
            ds_rho
                .records
                .par_iter()
                .zip(ds_sigma.records.par_iter())
                .map(|(r, s)| observable_record_value(r, o) - observable_record_value(s, o) + exact_sigma)
                .collect()
        }
    };
    Ok(finalize(vals, ds_rho.meta.n_s, opts))
}

/// Echo estimator of `|Tr e^{−iHt}|² / 4^n`: prepare `U|0⟩`, evolve, undo `U`, measure `s`,
/// and average `(−2^k)^{−|s|_k}`.
pub fn sff_estimate(
    h: &ObservableSum,
    t: f64,
    layout: &BlockLayout,
    m: usize,
    seed: u64,
    opts: &EstimatorOptions,
) -> Result<Estimate> {
    if h.n() != layout.n() {
        return Err(Error::Dimension(format!("Hamiltonian on {} qubits, layout on {}", h.n(), layout.n())));
    }
    if m == 0 {
        return Err(Error::Validation("need at least one sample".into()));
    }
    let prop = Propagator::new(h, t)?;
    let ens = Ensemble::from_parts(EnsembleKind::CliffordFull, *layout)?;
    let zero = StateVector::zero(layout.n())?;
    let base = -(layout.block_dim() as f64);
    let vals: Vec<Result<f64>> = (0..m)
        .into_par_iter()
        .map(|r| {
            let mut rng = substream(seed, r as u64);
            let u = ens.sample(&mut rng);
            let phi = prop.apply(&zero.apply_block_unitary(&u)?)?;
            let echo = phi.apply_block_unitary_adjoint(&u)?;
            let s = echo.sample_bitstrings(1, &mut rng)[0];
            let w = (0..layout.num_blocks()).filter(|&b| layout.block_bits(s, b) != 0).count();
            Ok(base.powi(-(w as i32)))
        })
        .collect();
    Ok(finalize(vals.into_iter().collect::<Result<_>>()?, 1, opts))
}
