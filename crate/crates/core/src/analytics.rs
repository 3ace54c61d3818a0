//! Closed-form statistics of block shadows: channel eigenvalues, the pair
//! function `f(P, Q)`, the moments `V₁, V₂, V₃`, exact variances of every
//! estimator and the associated bounds.

use nalgebra::DMatrix;
use num_complex::Complex64 as C64;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::clifford::{clifford_group, EnsembleKind, LayeredBlockUnitary};
use crate::error::{Error, Result};
use crate::pauli::{BlockLayout, ObservableSum, PauliString};
use crate::state::{Propagator, StateVector};

/// `m_P = (2^k + 1)^{−w_k(P)}`.
pub fn m_eigenvalue(p: &PauliString, layout: &BlockLayout, kind: EnsembleKind) -> Result<f64> {
    match kind {
        EnsembleKind::CliffordFull | EnsembleKind::Mub | EnsembleKind::StabilizerBasis => {}
        other => return Err(Error::Unsupported(format!("no closed-form eigenvalue for the {} ensemble", other.name()))),
    }
    if p.n() != layout.n() {
        return Err(Error::Dimension(format!("Pauli on {} qubits, layout on {}", p.n(), layout.n())));
    }
    Ok(shadow_norm_pauli(p, layout).recip())
}

/// `(2^k + 1)^{w_k(P)}`.
pub fn shadow_norm_pauli(p: &PauliString, layout: &BlockLayout) -> f64 {
    ((layout.block_dim() + 1) as f64).powi(p.block_weight(layout) as i32)
}

/// `(2^k + 1)^{l/k + 1}` for a Pauli on `l` contiguous qubits. Only valid for `k ≤ 2`:
/// at `k = 3, l = 2` a straddling Pauli reaches 81 against 9^{5/3}.
pub fn contiguous_norm_bound(l: usize, k: usize) -> f64 {
    (((1usize << k) + 1) as f64).powf(l as f64 / k as f64 + 1.0)
}

/// Largest shadow norm of a Pauli on `l` contiguous qubits, over all block alignments.
pub fn contiguous_norm_exact(l: usize, k: usize) -> f64 {
    let blocks = if l == 0 { 0 } else { (l - 1).div_ceil(k) + 1 };
    (((1usize << k) + 1) as f64).powi(blocks as i32)
}

/// One-block value of `f(P, Q)` for local indices `x | z << k`.
pub fn f_block(p: usize, q: usize, k: usize) -> f64 {
    let d = (1usize << k) as f64;
    if p == 0 || q == 0 {
        return 1.0;
    }
    if p == q {
        return d + 1.0;
    }
    let mask = (1usize << k) - 1;
    let sym = ((p & mask) & (q >> k)).count_ones() + ((p >> k) & (q & mask)).count_ones();
    if sym % 2 == 1 {
        0.0
    } else {
        2.0 * (d + 1.0) / (d + 2.0)
    }
}

/// `f(P, Q) = Π_blocks f(P_i, Q_i)`, i.e. `m_P⁻¹ m_Q⁻¹ Pr[UPU†, UQU† ∈ ±Z]`.
pub fn f_pq(p: &PauliString, q: &PauliString, layout: &BlockLayout) -> f64 {
    let k = layout.k();
    (0..layout.num_blocks())
        .map(|b| {
            let s = layout.block_start(b);
            f_block(p.restrict(s, k).index(), q.restrict(s, k).index(), k)
        })
        .product()
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct UsefulSums {
    /// `Σ_P m_P⁻¹`.
    pub sum_m_inv: f64,
    /// `Σ_P f(P, I)`.
    pub sum_f_diag: f64,
    /// `Σ_{P,Q} f(P, Q)`.
    pub sum_f_all: f64,
}

pub fn useful_sums(n: usize, k: usize) -> Result<UsefulSums> {
    let layout = BlockLayout::new(n, k)?;
    let d = layout.block_dim() as f64;
    let nb = layout.num_blocks() as i32;
    let d2 = d * d;
    let per_block_all = (2.0 * d2 - 1.0) + (d2 - 1.0) * (d + 1.0) + (d2 - 1.0) * (d2 / 2.0 - 2.0) * 2.0 * (d + 1.0) / (d + 2.0);
    Ok(UsefulSums {
        sum_m_inv: (d * d2 + d2 - d).powi(nb),
        sum_f_diag: d2.powi(nb),
        sum_f_all: per_block_all.powi(nb),
    })
}

/// Exact variance of the multi-shot Pauli estimator.
pub fn variance_pauli_multishot(m_p: f64, tr_p: f64, n_u: usize, n_s: usize) -> f64 {
    let ns = n_s as f64;
    (1.0 / m_p / ns + (ns - 1.0) / ns / m_p * tr_p * tr_p - tr_p * tr_p) / n_u as f64
}

/// Second-moment bound on the same variance.
pub fn variance_pauli_multishot_bound(m_p: f64, tr_p: f64, n_u: usize, n_s: usize) -> f64 {
    let ns = n_s as f64;
    (1.0 / ns + (ns - 1.0) / ns * tr_p * tr_p) / m_p / n_u as f64
}

/// `Tr(ψψ† R)` for every Pauli `R`, indexed by `x | z << n`.
pub fn pauli_table(psi: &StateVector) -> Result<Vec<f64>> {
    let n = psi.n();
    if n > 7 {
        return Err(Error::Unsupported("Pauli tables only up to 7 qubits".into()));
    }
    Ok((0..1usize << (2 * n))
        .into_par_iter()
        .map(|i| psi.expectation_pauli(&PauliString::from_index(n, i)))
        .collect())
}

/// Pauli table of `I / 2^n`.
pub fn maximally_mixed_table(n: usize) -> Vec<f64> {
    let mut t = vec![0.0; 1 << (2 * n)];
    t[0] = 1.0;
    t
}

/// Coefficients `α_P` of an observable, indexed like [`pauli_table`].
pub fn observable_alphas(o: &ObservableSum) -> Vec<f64> {
    let mut a = vec![0.0; 1 << (2 * o.n())];
    for &(c, p) in o.terms() {
        a[p.index()] += c * p.sign();
    }
    a
}

/// Coefficients of `|Ψ⟩⟨Ψ| = Σ_P α_P P`.
pub fn state_alphas(psi: &StateVector) -> Result<Vec<f64>> {
    let d = psi.dim() as f64;
    Ok(pauli_table(psi)?.into_iter().map(|t| t / d).collect())
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct VarianceModel {
    pub v1: f64,
    pub v2: f64,
    pub v3: f64,
    /// `Σ f(P,Q)² Tr(ρPQ)² / D²`: second moment of the two-record purity kernel.
    pub pair_second_moment: f64,
}

/// `i^e` for `P·Q = i^e R` with unsigned Hermitian `P`, `Q`.
#[inline]
fn product_phase(n: usize, p: usize, q: usize) -> u32 {
    let mask = (1usize << n) - 1;
    let (x1, z1, x2, z2) = (p & mask, p >> n, q & mask, q >> n);
    let (x3, z3) = (x1 ^ x2, z1 ^ z2);
    let e = (x1 & z1).count_ones() + (x2 & z2).count_ones() + 2 * (z1 & x2).count_ones() + 4 * n as u32
        - (x3 & z3).count_ones();
    e % 4
}

/// Exact `V₁, V₂, V₃` for `O = Σ α_P P` on the state with Pauli table `rho`.
pub fn compute_v123(alpha: &[f64], rho: &[f64], layout: &BlockLayout) -> Result<VarianceModel> {
    let n = layout.n();
    if n > 7 {
        return Err(Error::Unsupported("exact V sums only up to 7 qubits; fit them instead".into()));
    }
    let size = 1usize << (2 * n);
    if alpha.len() != size || rho.len() != size {
        return Err(Error::Dimension(format!("tables must have 4^{n} entries")));
    }
    let k = layout.k();
    let nb = layout.num_blocks();
    let dk2 = 1usize << (2 * k);
    let ftab: Vec<f64> = (0..dk2 * dk2).map(|i| f_block(i / dk2, i % dk2, k)).collect();
    let kmask = (1usize << k) - 1;
    let local: Vec<usize> = (0..size)
        .flat_map(|idx| {
            let (x, z) = (idx & ((1 << n) - 1), idx >> n);
            (0..nb).map(move |b| {
                let s = b * k;
                ((x >> s) & kmask) | (((z >> s) & kmask) << k)
            })
        })
        .collect();
    let dn2 = (1u64 << (2 * n)) as f64;
    let parts: Vec<[f64; 4]> = (0..size)
        .into_par_iter()
        .map(|p| {
            let lp = &local[p * nb..(p + 1) * nb];
            let ap = alpha[p];
            let tp = ap * rho[p];
            let mut acc = [0.0f64; 4];
            for q in 0..size {
                let lq = &local[q * nb..(q + 1) * nb];
                let mut f = 1.0;
                for b in 0..nb {
                    f *= ftab[lp[b] * dk2 + lq[b]];
                    if f == 0.0 {
                        break;
                    }
                }
                if f == 0.0 {
                    continue;
                }
                let e = product_phase(n, p, q);
                debug_assert!(e % 2 == 0);
                let tpq = if e == 0 { rho[p ^ q] } else { -rho[p ^ q] };
                acc[0] += tp * alpha[q] * rho[q] * f;
                acc[1] += ap * alpha[q] * tpq * f;
                acc[2] += tpq * tpq * f;
                acc[3] += tpq * tpq * f * f;
            }
            acc
        })
        .collect();
    let mut tot = [0.0; 4];
    for a in &parts {
        for i in 0..4 {
            tot[i] += a[i];
        }
    }
    Ok(VarianceModel { v1: tot[0], v2: tot[1], v3: tot[2] / dn2, pair_second_moment: tot[3] / dn2 })
}

/// `V₁(ρ), V₂(ρ), V₃(ρ)` with `O = ρ`, as used for purity.
pub fn compute_v123_purity(psi: &StateVector, layout: &BlockLayout) -> Result<VarianceModel> {
    let t = pauli_table(psi)?;
    let d = psi.dim() as f64;
    let a: Vec<f64> = t.iter().map(|v| v / d).collect();
    compute_v123(&a, &t, layout)
}

/// Exact fidelity-estimator variance `(V₂/N_S + (N_S−1)V₁/N_S − F²)/N_U`.
pub fn variance_fidelity(v1: f64, v2: f64, f: f64, n_u: usize, n_s: usize) -> f64 {
    let ns = n_s as f64;
    (v2 / ns + (ns - 1.0) * v1 / ns - f * f) / n_u as f64
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PurityVariance {
    /// Exact variance from the U-statistic weights.
    pub exact: f64,
    /// `(V₁ + 4V₂/N_S + 2V₃/(N_S−1)² − p₂²)/N_U`.
    pub bound: f64,
}

pub fn variance_purity(v1: f64, v2: f64, v3: f64, n_u: usize, n_s: usize, p2: f64) -> Result<PurityVariance> {
    if n_s < 2 {
        return Err(Error::Validation("purity needs N_S >= 2".into()));
    }
    let (w_d, w_1, w_2) = purity_weights(n_s);
    let ns = n_s as f64;
    let nu = n_u as f64;
    Ok(PurityVariance {
        exact: (w_d * v1 + w_1 * v2 + w_2 * v3 - p2 * p2) / nu,
        bound: (v1 + 4.0 * v2 / ns + 2.0 * v3 / ((ns - 1.0) * (ns - 1.0)) - p2 * p2) / nu,
    })
}

/// Weights of disjoint, one-shared and identical shot pairs in the squared U-statistic.
pub fn purity_weights(n_s: usize) -> (f64, f64, f64) {
    let ns = n_s as f64;
    let denom = ns * (ns - 1.0);
    ((ns - 2.0) * (ns - 3.0) / denom, 4.0 * (ns - 2.0) / denom, 2.0 / denom)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct CrmVariance {
    /// Second moment of the per-unitary difference over `N_U`.
    pub second_moment: f64,
    pub exact: f64,
}

/// CRM variance for one Pauli; `n_sigma = None` is the classical `σ̂` (infinite shots).
pub fn variance_crm(m_p: f64, tr_rho: f64, tr_sigma: f64, n_rho: usize, n_sigma: Option<usize>, n_u: usize) -> CrmVariance {
    let nr = n_rho as f64;
    let (r, s) = (tr_rho, tr_sigma);
    let sigma_part = match n_sigma {
        None => s * s,
        Some(ns) => {
            let ns = ns as f64;
            1.0 / ns + (ns - 1.0) / ns * s * s
        }
    };
    let second = (1.0 / nr + (nr - 1.0) / nr * r * r + sigma_part - 2.0 * r * s) / m_p / n_u as f64;
    CrmVariance { second_moment: second, exact: second - (r - s) * (r - s) / n_u as f64 }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PurityComplexity {
    /// `max(3^{n/k}/ε², 2^n/ε)`.
    pub t: f64,
    pub term_eps2: f64,
    pub term_eps: f64,
    /// `n / (k 2^k)`.
    pub alpha: f64,
    /// `e^{α/3}` and `e^{α}` multiply the two terms in the explicit bound.
    pub const_eps2: f64,
    pub const_eps: f64,
}

pub fn purity_sample_complexity(n: usize, k: usize, eps: f64) -> Result<PurityComplexity> {
    let layout = BlockLayout::new(n, k)?;
    if !(eps > 0.0) {
        return Err(Error::Validation("ε must be positive".into()));
    }
    let nb = layout.num_blocks() as i32;
    let term_eps2 = 3f64.powi(nb) / (eps * eps);
    let term_eps = 2f64.powi(n as i32) / eps;
    let alpha = n as f64 / (k as f64 * (1u64 << k) as f64);
    Ok(PurityComplexity {
        t: term_eps2.max(term_eps),
        term_eps2,
        term_eps,
        alpha,
        const_eps2: (alpha / 3.0).exp(),
        const_eps: alpha.exp(),
    })
}

/// Explicit bound on the variance of the two-record purity estimator over `T` single-shot records.
pub fn purity_crossrecord_variance_bound(n: usize, k: usize, t: usize) -> Result<f64> {
    let layout = BlockLayout::new(n, k)?;
    let nb = layout.num_blocks() as i32;
    let tf = t as f64;
    let alpha = n as f64 / (k as f64 * (1u64 << k) as f64);
    let d1 = (layout.block_dim() + 1) as f64;
    Ok(4.0 * (alpha / 3.0).exp() * (tf - 2.0) / (tf * (tf - 1.0)) * 3f64.powi(nb)
        + 2.0 / (tf * (tf - 1.0)) * (2.0 * alpha).exp() * d1.powi(2 * nb))
}

/// Exact variance of the same estimator: `[4(T−2)(V₂ − p₂²) + 2(pair second moment − p₂²)] / (T(T−1))`.
pub fn purity_crossrecord_variance_exact(vm: &VarianceModel, p2: f64, t: usize) -> f64 {
    let tf = t as f64;
    (4.0 * (tf - 2.0) * (vm.v2 - p2 * p2) + 2.0 * (vm.pair_second_moment - p2 * p2)) / (tf * (tf - 1.0))
}

/// Smallest `T ≥ 2` with `var(T) ≤ target`, by doubling and bisection.
pub fn records_needed(var: impl Fn(usize) -> f64, target: f64) -> usize {
    let mut hi = 2usize;
    while var(hi) > target {
        hi *= 2;
        if hi > 1 << 60 {
            return usize::MAX;
        }
    }
    let mut lo = hi / 2;
    if lo < 2 {
        return hi;
    }
    while hi - lo > 1 {
        let mid = lo + (hi - lo) / 2;
        if var(mid) > target {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    hi
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BoundReport {
    pub quantity: String,
    pub bound: f64,
    pub formula: String,
    pub inputs: Vec<(String, f64)>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BernsteinReport {
    /// `R = 2^k + 1`.
    pub r_norm: f64,
    /// `(2^{k+1} − 1)^{r/k}`.
    pub sigma2_bound: f64,
    /// Trace-norm tail probability at `T` records, when `T` is given.
    pub tail: Option<f64>,
    /// Records needed for failure probability `δ`.
    pub records_for_delta: f64,
}

pub fn bernstein_bound(r: usize, k: usize, eps: f64, delta: f64, t: Option<usize>) -> Result<BernsteinReport> {
    if k == 0 || r == 0 || r % k != 0 {
        return Err(Error::Validation(format!("region size {r} is not a multiple of k = {k}")));
    }
    if r > 60 {
        return Err(Error::Unsupported("region too large".into()));
    }
    let s2 = (((1u64 << (k + 1)) - 1) as f64).powi((r / k) as i32);
    let four_r = 4f64.powi(r as i32);
    let dr = 2f64.powi(r as i32);
    let tail = t.map(|t| 2.0 * dr * (-3.0 * t as f64 * eps * eps / (8.0 * four_r * s2)).exp());
    Ok(BernsteinReport {
        r_norm: ((1u64 << k) + 1) as f64,
        sigma2_bound: s2,
        tail,
        records_for_delta: 8.0 * four_r * s2 * (2.0 * dr / delta).ln() / (3.0 * eps * eps),
    })
}

/// `‖E[X²]‖∞` for the snapshot `X` of an `r`-qubit state, by enumerating `Cl(k)^{⊗r/k}`.
pub fn bernstein_sigma2_exact(rho: &StateVector, k: usize) -> Result<f64> {
    let r = rho.n();
    let layout = BlockLayout::new(r, k)?;
    let group = clifford_group(k)?;
    let nb = layout.num_blocks();
    let total = (group.len() as f64).powi(nb as i32);
    if total > 2.0e5 {
        return Err(Error::Unsupported("enumeration too large".into()));
    }
    let d = 1usize << r;
    let dk = layout.block_dim();
    let dense: Vec<DMatrix<C64>> = group.iter().map(|t| t.to_dense()).collect();
    // S_b² = (D²−1)Π_b + I per block.
    let sq: Vec<Vec<DMatrix<C64>>> = dense
        .iter()
        .map(|u| {
            (0..dk)
                .map(|b| {
                    let v = u.row(b).adjoint();
                    &v * v.adjoint() * C64::new((dk * dk - 1) as f64, 0.0) + DMatrix::identity(dk, dk)
                })
                .collect()
        })
        .collect();
    let combos = group.len().pow(nb as u32);
    let acc = (0..combos)
        .into_par_iter()
        .map(|mut c| {
            let mut idx = Vec::with_capacity(nb);
            for _ in 0..nb {
                idx.push(c % group.len());
                c /= group.len();
            }
            let blocks = idx
                .iter()
                .map(|&i| crate::clifford::BlockUnitary::Tableau(group[i].clone()))
                .collect();
            let u = LayeredBlockUnitary::new(layout, blocks).expect("layout matches");
            let probs = rho.apply_block_unitary(&u).expect("sizes match").probabilities();
            let mut m = DMatrix::<C64>::zeros(d, d);
            for (b, &pb) in probs.iter().enumerate() {
                if pb < 1e-300 {
                    continue;
                }
                let mut op = DMatrix::<C64>::from_element(1, 1, C64::new(1.0, 0.0));
                for blk in (0..nb).rev() {
                    op = op.kronecker(&sq[idx[blk]][layout.block_bits(b as u128, blk)]);
                }
                m += op * C64::new(pb, 0.0);
            }
            m
        })
        .reduce(|| DMatrix::<C64>::zeros(d, d), |a, b| a + b)
        / C64::new(combos as f64, 0.0);
    let eig = nalgebra::SymmetricEigen::new(acc);
    Ok(eig.eigenvalues.iter().fold(0.0f64, |m, v| m.max(v.abs())))
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct WorstCaseFidelity {
    /// `3^{n/k} e^{α/3}` with `α = n/(k 2^k)`.
    pub bound: f64,
    /// `(3 + 2^{−k})^{n/k}`, the sharper intermediate form.
    pub bound_sharp: f64,
    /// Exact shadow norm of a pure block-product state measured against itself.
    pub product_exact: f64,
}

pub fn worst_case_fidelity_norm(n: usize, k: usize) -> Result<WorstCaseFidelity> {
    let layout = BlockLayout::new(n, k)?;
    let nb = layout.num_blocks() as i32;
    let d = layout.block_dim() as f64;
    let alpha = n as f64 / (k as f64 * d);
    let bracket = (d + 1.0) / (d + 2.0) * (3.0 - 5.0 / d + 2.0 / (d * d)) + 2.0 / d - 1.0 / (d * d);
    Ok(WorstCaseFidelity {
        bound: 3f64.powi(nb) * (alpha / 3.0).exp(),
        bound_sharp: (3.0 + 1.0 / d).powi(nb),
        product_exact: bracket.powi(nb),
    })
}

/// `(2^k + 3)^{n/k}`, the worst-case bound on `V₃`.
pub fn v3_bound(n: usize, k: usize) -> Result<f64> {
    let layout = BlockLayout::new(n, k)?;
    Ok(((layout.block_dim() + 3) as f64).powi(layout.num_blocks() as i32))
}

/// `Σ_P m_P^{−2} / D` for a pure state, i.e. `((1 + (D²−1)(D+1)²)/D)^{n/k}` with `D = 2^k`:
/// bound on the two-record purity kernel second moment. The tighter `(2^k + 1)^{2n/k}`
/// fails for `|0…0⟩` at `k = 2` (27 against 25 per block).
pub fn pair_second_moment_bound(n: usize, k: usize) -> Result<f64> {
    let layout = BlockLayout::new(n, k)?;
    let d = layout.block_dim() as f64;
    Ok(((1.0 + (d * d - 1.0) * (d + 1.0) * (d + 1.0)) / d).powi(layout.num_blocks() as i32))
}

/// `|Tr e^{−iHt}|² / 4^n`.
pub fn sff_exact(h: &ObservableSum, t: f64) -> Result<f64> {
    let w = Propagator::new(h, t)?;
    let d = w.matrix().nrows() as f64;
    Ok(w.trace().norm_sqr() / (d * d))
}

/// `‖Tr_S W‖_F²` where `S` is the set of blocks in `traced`.
fn partial_trace_norm_sq(w: &DMatrix<C64>, layout: &BlockLayout, traced: u64) -> f64 {
    let n = layout.n();
    let mut tmask = 0usize;
    for b in 0..layout.num_blocks() {
        if traced >> b & 1 == 1 {
            tmask |= layout.block_mask(b) as usize;
        }
    }
    let keep = !tmask & ((1usize << n) - 1);
    // Enumerate kept indices as submasks of `keep`, traced ones as submasks of `tmask`.
    let subs = |m: usize| {
        let mut v = Vec::new();
        let mut s = m;
        loop {
            v.push(s);
            if s == 0 {
                break;
            }
            s = (s - 1) & m;
        }
        v
    };
    let kept = subs(keep);
    let tr = subs(tmask);
    let mut total = 0.0;
    for &i in &kept {
        for &j in &kept {
            let mut s = C64::new(0.0, 0.0);
            for &a in &tr {
                s += w[(i | a, j | a)];
            }
            total += s.norm_sqr();
        }
    }
    total
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SffVariance {
    pub k_exact: f64,
    /// Exact per-sample second moment.
    pub second_moment: f64,
    /// Exact variance of the mean of `M` samples.
    pub exact: f64,
    /// `(2^{−n}(1 + 2^{−k} − 4^{−k})^{n/k} − K²)/M`, exact when every partial trace is maximally spread.
    pub typical: f64,
}

pub fn sff_variance(h: &ObservableSum, t: f64, layout: &BlockLayout, m: usize) -> Result<SffVariance> {
    if h.n() != layout.n() {
        return Err(Error::Dimension("Hamiltonian and layout differ in size".into()));
    }
    if layout.num_blocks() > 12 {
        return Err(Error::Unsupported("too many blocks for the subset sum".into()));
    }
    let w = Propagator::new(h, t)?;
    let wm = w.matrix();
    let dn = wm.nrows() as f64;
    let kk = w.trace().norm_sqr() / (dn * dn);
    let d = layout.block_dim() as f64;
    let c = 1.0 / (d * d);
    let y = 1.0 + (d - 1.0) * c;
    let a = (y - 1.0 / d) / (d * d - 1.0);
    let b = (1.0 - y / d) / (d * d - 1.0);
    let nb = layout.num_blocks();
    let second: f64 = (0..1u64 << nb)
        .into_par_iter()
        .map(|s| {
            let ones = s.count_ones() as i32;
            b.powi(ones) * a.powi(nb as i32 - ones) * partial_trace_norm_sq(wm, layout, s)
        })
        .sum();
    let mf = m as f64;
    let typical = ((1.0 + 1.0 / d - c).powi(nb as i32) / dn - kk * kk) / mf;
    Ok(SffVariance { k_exact: kk, second_moment: second, exact: (second - kk * kk) / mf, typical })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FitMode {
    Fidelity,
    Purity,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct FitResult {
    pub v1: f64,
    pub v2: f64,
    /// Only fitted in purity mode.
    pub v3: Option<f64>,
    /// Relative residual norm in variance space.
    pub residual: f64,
}

/// Least-squares fit of the V moments to `(N_S, std)` points at fixed `N_U`.
/// `known` is `F` in fidelity mode and `p₂` in purity mode.
pub fn fit_v_from_std(curve: &[(usize, f64)], n_u: usize, mode: FitMode, known: f64) -> Result<FitResult> {
    let mut ns: Vec<usize> = curve.iter().map(|c| c.0).collect();
    ns.sort_unstable();
    ns.dedup();
    if ns.len() < 4 {
        return Err(Error::Validation("need at least four distinct N_S values".into()));
    }
    let stds: Vec<f64> = curve.iter().map(|c| c.1).collect();
    let (lo, hi) = stds.iter().fold((f64::INFINITY, 0.0f64), |(l, h), &s| (l.min(s), h.max(s)));
    if !(hi > 0.0) || (hi - lo) <= 1e-12 * hi {
        return Err(Error::Numerical("degenerate curve: all standard deviations equal".into()));
    }
    if mode == FitMode::Purity && curve.iter().any(|c| c.0 < 2) {
        return Err(Error::Validation("purity curves need N_S >= 2".into()));
    }
    // y = N_U·std² + known² is linear in the unknown moments.
    let rows: Vec<(Vec<f64>, f64)> = curve
        .iter()
        .map(|&(n_s, sd)| {
            let y = n_u as f64 * sd * sd + known * known;
            let x = match mode {
                FitMode::Fidelity => {
                    let inv = 1.0 / n_s as f64;
                    vec![1.0 - inv, inv]
                }
                FitMode::Purity => {
                    let (a, b, c) = purity_weights(n_s);
                    vec![a, b, c]
                }
            };
            (x, y)
        })
        .collect();
    let p = rows[0].0.len();
    let mut active: Vec<bool> = vec![true; p];
    let mut sol = vec![0.0; p];
    for _ in 0..=p {
        let cols: Vec<usize> = (0..p).filter(|&j| active[j]).collect();
        let a = DMatrix::<f64>::from_fn(rows.len(), cols.len(), |i, j| rows[i].0[cols[j]] / rows[i].1);
        let y = nalgebra::DVector::<f64>::from_fn(rows.len(), |_, _| 1.0);
        let svd = a.svd(true, true);
        let x = svd.solve(&y, 1e-14).map_err(|e| Error::Numerical(e.to_string()))?;
        sol = vec![0.0; p];
        for (j, &c) in cols.iter().enumerate() {
            sol[c] = x[j];
        }
        match cols.iter().copied().filter(|&c| sol[c] < 0.0).min_by(|&a, &b| sol[a].total_cmp(&sol[b])) {
            Some(c) => {
                active[c] = false;
                sol[c] = 0.0;
            }
            None => break,
        }
    }
    let residual = rows
        .iter()
        .map(|(x, y)| {
            let pred: f64 = x.iter().zip(&sol).map(|(a, b)| a * b).sum();
            ((pred - y) / y).powi(2)
        })
        .sum::<f64>()
        .sqrt();
    Ok(match mode {
        FitMode::Fidelity => FitResult { v1: sol[0], v2: sol[1], v3: None, residual },
        FitMode::Purity => FitResult { v1: sol[0], v2: sol[1], v3: Some(sol[2]), residual },
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn p(s: &str) -> PauliString {
        s.parse().unwrap()
    }

    #[test]
    fn eigenvalue_examples() {
        let l1 = BlockLayout::new(1, 1).unwrap();
        let l4 = BlockLayout::new(4, 2).unwrap();
        assert_eq!(m_eigenvalue(&p("I"), &l1, EnsembleKind::CliffordFull).unwrap(), 1.0);
        assert!((m_eigenvalue(&p("Z"), &l1, EnsembleKind::CliffordFull).unwrap() - 1.0 / 3.0).abs() < 1e-16);
        assert!((m_eigenvalue(&p("XYII"), &l4, EnsembleKind::CliffordFull).unwrap() - 0.2).abs() < 1e-16);
        assert!(m_eigenvalue(&p("Z"), &l1, EnsembleKind::HaarDense).is_err());
        assert_eq!(shadow_norm_pauli(&p("XYZX"), &l4), 25.0);
        assert!((contiguous_norm_bound(4, 2) - 125.0).abs() < 1e-9);
        assert_eq!(contiguous_norm_exact(4, 2), 125.0);
        assert_eq!(contiguous_norm_exact(2, 3), 81.0);
    }

    #[test]
    fn f_table_cases() {
        let l = BlockLayout::new(2, 2).unwrap();
        assert_eq!(f_pq(&p("XZ"), &p("XZ"), &l), 5.0);
        assert!((f_pq(&p("XI"), &p("IZ"), &l) - 10.0 / 6.0).abs() < 1e-15);
        assert_eq!(f_pq(&p("XI"), &p("ZI"), &l), 0.0);
        assert_eq!(f_pq(&p("XI"), &p("II"), &l), 1.0);
        let total: f64 = (0..16).map(|i| f_pq(&PauliString::from_index(2, i), &p("II"), &l)).sum();
        assert_eq!(total, 16.0);
    }

    #[test]
    fn useful_sum_examples() {
        assert_eq!(useful_sums(1, 1).unwrap().sum_m_inv, 10.0);
        assert_eq!(useful_sums(2, 1).unwrap().sum_m_inv, 100.0);
        assert_eq!(useful_sums(2, 2).unwrap().sum_m_inv, 76.0);
        for (n, k) in [(2, 1), (2, 2), (4, 2)] {
            let l = BlockLayout::new(n, k).unwrap();
            let s = useful_sums(n, k).unwrap();
            let dim = 1usize << (2 * n);
            let mut direct = 0.0;
            let mut diag = 0.0;
            for i in 0..dim {
                let pi = PauliString::from_index(n, i);
                diag += f_pq(&pi, &pi, &l);
                for j in 0..dim {
                    direct += f_pq(&pi, &PauliString::from_index(n, j), &l);
                }
            }
            assert!((direct - s.sum_f_all).abs() < 1e-9 * direct, "{n} {k}");
            assert!((diag - s.sum_m_inv).abs() < 1e-9 * diag);
        }
    }

    #[test]
    fn pauli_variance_limits() {
        assert!((variance_pauli_multishot(1.0 / 3.0, 0.4, 10, 1) - (3.0 - 0.16) / 10.0).abs() < 1e-15);
        assert!((variance_pauli_multishot(1.0 / 3.0, 0.0, 10, 4) - 3.0 / 40.0).abs() < 1e-15);
    }

    #[test]
    fn v123_stabilizer_product() {
        let l = BlockLayout::new(2, 2).unwrap();
        let psi = StateVector::zero(2).unwrap();
        let vm = compute_v123_purity(&psi, &l).unwrap();
        assert!((vm.v1 - vm.v2).abs() < 1e-12);
        let l1 = BlockLayout::new(1, 1).unwrap();
        let vm1 = compute_v123_purity(&StateVector::zero(1).unwrap(), &l1).unwrap();
        assert!((vm1.v2 - 1.5).abs() < 1e-12);
    }

    #[test]
    fn v3_mixed_below_bound() {
        let l = BlockLayout::new(4, 2).unwrap();
        let t = maximally_mixed_table(4);
        let vm = compute_v123(&vec![0.0; 256], &t, &l).unwrap();
        assert!((vm.v3 - 4.75f64.powi(2)).abs() < 1e-9);
        assert!(vm.v3 <= v3_bound(4, 2).unwrap());
    }

    #[test]
    fn crm_limits() {
        let plain = variance_pauli_multishot(0.2, 0.9, 100, 4);
        let v = variance_crm(0.2, 0.9, 0.9, 4, None, 100);
        assert!(v.exact < plain);
        let expect = 5.0 / 100.0 * (0.25 + (0.75 - 1.0) * 0.81);
        assert!((v.second_moment - expect).abs() < 1e-15);
    }

    #[test]
    fn purity_complexity_example() {
        let c = purity_sample_complexity(8, 2, 0.1).unwrap();
        assert!((c.term_eps2 - 8100.0).abs() < 1e-9);
        assert!((c.term_eps - 2560.0).abs() < 1e-9);
        assert_eq!(c.t, c.term_eps2);
    }

    #[test]
    fn bernstein_examples() {
        assert_eq!(bernstein_bound(3, 1, 0.1, 0.05, None).unwrap().sigma2_bound, 27.0);
        assert_eq!(bernstein_bound(4, 2, 0.1, 0.05, None).unwrap().sigma2_bound, 49.0);
        assert!(bernstein_bound(3, 2, 0.1, 0.05, None).is_err());
        let s = bernstein_sigma2_exact(&StateVector::zero(1).unwrap(), 1).unwrap();
        assert!((s - 3.0).abs() < 1e-10);
    }

    #[test]
    fn worst_case_values() {
        let w = worst_case_fidelity_norm(2, 1).unwrap();
        assert!((w.product_exact - 2.25).abs() < 1e-14);
        assert!(w.bound >= w.bound_sharp && w.bound_sharp >= w.product_exact);
        assert!((worst_case_fidelity_norm(2, 2).unwrap().product_exact - 2.0).abs() < 1e-14);
    }

    #[test]
    fn fit_recovers_synthetic_fidelity_curve() {
        let (v1, v2, f) = (2.5, 3.75, 0.8);
        let curve: Vec<(usize, f64)> =
            [1, 4, 16, 64].iter().map(|&n| (n, variance_fidelity(v1, v2, f, 200, n).sqrt())).collect();
        let fit = fit_v_from_std(&curve, 200, FitMode::Fidelity, f).unwrap();
        assert!((fit.v1 - v1).abs() < 1e-6 * v1 && (fit.v2 - v2).abs() < 1e-6 * v2);
        let flat = vec![(1, 0.3), (2, 0.3), (4, 0.3), (8, 0.3)];
        assert!(fit_v_from_std(&flat, 10, FitMode::Fidelity, 0.1).is_err());
    }

    #[test]
    fn sff_formulas_agree_when_traces_are_flat() {
        // |Tr e^{−iZt}| = 1 at t = π/3, so every partial trace is maximally spread.
        let h = ObservableSum::from_terms(2, [(1.0, p("ZI")), (1.0, p("IZ"))]).unwrap();
        let l = BlockLayout::new(2, 1).unwrap();
        let v = sff_variance(&h, std::f64::consts::FRAC_PI_3, &l, 10).unwrap();
        assert!((v.exact - v.typical).abs() < 1e-12, "{v:?}");
        let z = sff_variance(&h, 0.0, &l, 1).unwrap();
        assert!(z.exact.abs() < 1e-12);
    }
}
