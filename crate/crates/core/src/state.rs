//! Dense statevectors (n <= 14): preparation of test states, block unitaries,
//! Born sampling and exact reference quantities.

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64 as C64;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::clifford::{sample_haar_matrix, LayeredBlockUnitary};
use crate::error::{Error, Result};
use crate::pauli::{ObservableSum, PauliString};
use crate::rng::substream;

pub const MAX_SIM_QUBITS: usize = 14;

const ZERO: C64 = C64 { re: 0.0, im: 0.0 };
const ONE: C64 = C64 { re: 1.0, im: 0.0 };

#[derive(Clone, PartialEq, Debug)]
pub struct StateVector {
    n: usize,
    amp: Vec<C64>,
}

#[derive(Serialize, Deserialize)]
struct StateRepr {
    n: usize,
    amplitudes: Vec<[f64; 2]>,
}

fn check_n(n: usize) -> Result<()> {
    if n == 0 || n > MAX_SIM_QUBITS {
        return Err(Error::Validation(format!("statevectors support 1..={MAX_SIM_QUBITS} qubits, got {n}")));
    }
    Ok(())
}

impl StateVector {
    pub fn zero(n: usize) -> Result<Self> {
        Self::basis(n, 0)
    }

    pub fn basis(n: usize, idx: usize) -> Result<Self> {
        check_n(n)?;
        if idx >= 1 << n {
            return Err(Error::Validation(format!("basis index {idx} out of range")));
        }
        let mut amp = vec![ZERO; 1 << n];
        amp[idx] = ONE;
        Ok(Self { n, amp })
    }

    /// Validates the length and the norm (within 1e−10).
    pub fn from_amplitudes(n: usize, amp: Vec<C64>) -> Result<Self> {
        check_n(n)?;
        if amp.len() != 1 << n {
            return Err(Error::Dimension(format!("{} amplitudes for {n} qubits", amp.len())));
        }
        let s = Self { n, amp };
        let norm = s.norm();
        if (norm - 1.0).abs() > 1e-10 {
            return Err(Error::Validation(format!("state norm {norm} is not 1")));
        }
        Ok(s)
    }

    /// Normalizes the input first.
    pub fn from_unnormalized(n: usize, mut amp: Vec<C64>) -> Result<Self> {
        check_n(n)?;
        if amp.len() != 1 << n {
            return Err(Error::Dimension(format!("{} amplitudes for {n} qubits", amp.len())));
        }
        let norm = amp.iter().map(|a| a.norm_sqr()).sum::<f64>().sqrt();
        if norm == 0.0 {
            return Err(Error::Validation("zero vector".into()));
        }
        amp.iter_mut().for_each(|a| *a /= norm);
        Ok(Self { n, amp })
    }

    pub fn plus(n: usize) -> Result<Self> {
        check_n(n)?;
        let a = C64::new((0.5f64).powf(n as f64 / 2.0), 0.0);
        Ok(Self { n, amp: vec![a; 1 << n] })
    }

    /// `(|00⟩ + |11⟩)/√2`.
    pub fn bell() -> Self {
        Self::ghz(2).expect("two qubits")
    }

    pub fn ghz(n: usize) -> Result<Self> {
        check_n(n)?;
        let mut amp = vec![ZERO; 1 << n];
        let h = std::f64::consts::FRAC_1_SQRT_2;
        amp[0] = C64::new(h, 0.0);
        amp[(1 << n) - 1] = C64::new(h, 0.0);
        Ok(Self { n, amp })
    }

    /// Haar-random state (Gaussian amplitudes, normalized).
    pub fn random<R: Rng + ?Sized>(n: usize, rng: &mut R) -> Result<Self> {
        check_n(n)?;
        let amp = (0..1 << n)
            .map(|_| {
                let re: f64 = rng.sample(rand_distr::StandardNormal);
                let im: f64 = rng.sample(rand_distr::StandardNormal);
                C64::new(re, im)
            })
            .collect();
        Self::from_unnormalized(n, amp)
    }

    pub fn n(&self) -> usize {
        self.n
    }
    pub fn dim(&self) -> usize {
        self.amp.len()
    }
    pub fn amplitudes(&self) -> &[C64] {
        &self.amp
    }

    pub fn norm(&self) -> f64 {
        self.amp.iter().map(|a| a.norm_sqr()).sum::<f64>().sqrt()
    }

    /// `⟨self|other⟩`.
    pub fn inner(&self, other: &Self) -> C64 {
        self.amp.iter().zip(&other.amp).map(|(a, b)| a.conj() * b).sum()
    }

    /// `|⟨self|other⟩|²`.
    pub fn fidelity(&self, other: &Self) -> f64 {
        self.inner(other).norm_sqr()
    }

    pub fn probabilities(&self) -> Vec<f64> {
        self.amp.iter().map(|a| a.norm_sqr()).collect()
    }

    /// Applies a `2^m × 2^m` matrix to the listed qubits (local bit `l` = `qubits[l]`).
    pub fn apply_matrix(&mut self, m: &DMatrix<C64>, qubits: &[usize]) {
        let d = 1usize << qubits.len();
        assert_eq!(m.nrows(), d);
        let offsets: Vec<usize> = (0..d)
            .map(|l| qubits.iter().enumerate().filter(|(b, _)| (l >> b) & 1 == 1).map(|(_, &q)| 1 << q).sum())
            .collect();
        let qmask: usize = qubits.iter().map(|&q| 1usize << q).sum();
        let mut buf = vec![ZERO; d];
        for base in 0..self.amp.len() {
            if base & qmask != 0 {
                continue;
            }
            for (l, &o) in offsets.iter().enumerate() {
                buf[l] = self.amp[base | o];
            }
            for (r, &o) in offsets.iter().enumerate() {
                let mut acc = ZERO;
                for (c, &b) in buf.iter().enumerate() {
                    acc += m[(r, c)] * b;
                }
                self.amp[base | o] = acc;
            }
        }
    }

    fn apply_block_matrices(&mut self, u: &LayeredBlockUnitary, adjoint: bool) {
        let layout = u.layout();
        for (b, blk) in u.blocks().iter().enumerate() {
            let mut m = blk.matrix();
            if adjoint {
                m = m.adjoint();
            }
            let qubits: Vec<usize> = layout.blocks().nth(b).unwrap().collect();
            self.apply_matrix(&m, &qubits);
        }
    }

    /// `U|ψ⟩`.
    pub fn apply_block_unitary(&self, u: &LayeredBlockUnitary) -> Result<Self> {
        if u.layout().n() != self.n {
            return Err(Error::Dimension(format!("unitary on {} qubits, state on {}", u.layout().n(), self.n)));
        }
        let mut out = self.clone();
        out.apply_block_matrices(u, false);
        Ok(out)
    }

    /// `U†|ψ⟩`.
    pub fn apply_block_unitary_adjoint(&self, u: &LayeredBlockUnitary) -> Result<Self> {
        if u.layout().n() != self.n {
            return Err(Error::Dimension(format!("unitary on {} qubits, state on {}", u.layout().n(), self.n)));
        }
        let mut out = self.clone();
        out.apply_block_matrices(u, true);
        Ok(out)
    }

    pub fn apply_pauli(&mut self, p: &PauliString) {
        assert_eq!(p.n(), self.n);
        let mut out = vec![ZERO; self.amp.len()];
        for (j, &a) in self.amp.iter().enumerate() {
            let (i, c) = p.act_on_basis(j);
            out[i] = c * a;
        }
        self.amp = out;
    }

    /// `O|ψ⟩` (unnormalized).
    pub fn apply_observable(&self, o: &ObservableSum) -> Vec<C64> {
        let mut out = vec![ZERO; self.amp.len()];
        for &(c, p) in o.terms() {
            for (j, &a) in self.amp.iter().enumerate() {
                let (i, v) = p.act_on_basis(j);
                out[i] += v * a * c;
            }
        }
        out
    }

    /// `⟨ψ|P|ψ⟩` for a Hermitian string.
    pub fn expectation_pauli(&self, p: &PauliString) -> f64 {
        let mut acc = ZERO;
        for (j, &a) in self.amp.iter().enumerate() {
            let (i, v) = p.act_on_basis(j);
            acc += self.amp[i].conj() * v * a;
        }
        acc.re
    }

    pub fn expectation(&self, o: &ObservableSum) -> Result<f64> {
        if o.n() != self.n {
            return Err(Error::Dimension(format!("observable on {} qubits, state on {}", o.n(), self.n)));
        }
        let v = self.apply_observable(o);
        let e: C64 = self.amp.iter().zip(&v).map(|(a, b)| a.conj() * b).sum();
        if e.im.abs() > 1e-10 {
            return Err(Error::Numerical(format!("expectation has imaginary part {}", e.im)));
        }
        Ok(e.re)
    }

    /// i.i.d. Born-rule samples as bit masks (bit `q` = qubit `q+1`).
    pub fn sample_bitstrings<R: Rng + ?Sized>(&self, count: usize, rng: &mut R) -> Vec<u128> {
        sample_from_probabilities(&self.probabilities(), count, rng)
    }

    pub fn to_json(&self) -> String {
        let r = StateRepr { n: self.n, amplitudes: self.amp.iter().map(|a| [a.re, a.im]).collect() };
        serde_json::to_string(&r).expect("serializable")
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let r: StateRepr = serde_json::from_str(text)?;
        Self::from_amplitudes(r.n, r.amplitudes.into_iter().map(|[a, b]| C64::new(a, b)).collect())
    }
}

/// Cumulative-table sampler over outcome indices.
pub fn sample_from_probabilities<R: Rng + ?Sized>(probs: &[f64], count: usize, rng: &mut R) -> Vec<u128> {
    let mut cdf = Vec::with_capacity(probs.len());
    let mut acc = 0.0;
    for &p in probs {
        acc += p;
        cdf.push(acc);
    }
    let total = acc;
    (0..count)
        .map(|_| {
            let u = rng.random::<f64>() * total;
            let i = cdf.partition_point(|&c| c <= u).min(probs.len() - 1);
            // Skip zero-probability entries that share the cumulative value.
            let mut i = i;
            while probs[i] == 0.0 && i + 1 < probs.len() {
                i += 1;
            }
            i as u128
        })
        .collect()
}

#[derive(Clone, Debug)]
pub enum HamiltonianSpec {
    Pauli(ObservableSum),
    Ssh { v: f64, w: f64, n: usize },
}

impl HamiltonianSpec {
    pub fn n(&self) -> usize {
        match self {
            HamiltonianSpec::Pauli(o) => o.n(),
            HamiltonianSpec::Ssh { n, .. } => *n,
        }
    }

    pub fn observable(&self) -> Result<ObservableSum> {
        match self {
            HamiltonianSpec::Pauli(o) => Ok(o.clone()),
            HamiltonianSpec::Ssh { v, w, n } => ssh_hamiltonian(*n, *v, *w),
        }
    }
}

/// Lowest eigenpair of a Hermitian Pauli sum (n <= 12). Dense diagonalization for
/// small systems, restarted Lanczos otherwise.
pub fn ground_state_exact(h: &ObservableSum) -> Result<(f64, StateVector)> {
    let n = h.n();
    if n == 0 || n > 12 {
        return Err(Error::Validation(format!("exact ground states for 1..=12 qubits, got {n}")));
    }
    let dim = 1usize << n;
    if dim <= 64 {
        let m = h.to_matrix();
        let eig = m.symmetric_eigen();
        let (idx, e) = eig
            .eigenvalues
            .iter()
            .enumerate()
            .min_by(|a, b| a.1.total_cmp(b.1))
            .map(|(i, &e)| (i, e))
            .unwrap();
        let v: Vec<C64> = eig.eigenvectors.column(idx).iter().copied().collect();
        return Ok((e, StateVector::from_unnormalized(n, v)?));
    }
    let apply = |v: &[C64]| -> Vec<C64> {
        let mut out = vec![ZERO; v.len()];
        for &(c, p) in h.terms() {
            for (j, &a) in v.iter().enumerate() {
                let (i, s) = p.act_on_basis(j);
                out[i] += s * a * c;
            }
        }
        out
    };
    let mut rng = substream(0x6c61_6e63, n as u64);
    let start: Vec<C64> = (0..dim).map(|_| C64::new(rng.random::<f64>() - 0.5, rng.random::<f64>() - 0.5)).collect();
    let (e, v) = lanczos_lowest(&apply, start, 1e-10)?;
    Ok((e, StateVector::from_unnormalized(n, v)?))
}

fn dot(a: &[C64], b: &[C64]) -> C64 {
    a.iter().zip(b).map(|(x, y)| x.conj() * y).sum()
}

fn normalize(v: &mut [C64]) -> f64 {
    let nrm = v.iter().map(|a| a.norm_sqr()).sum::<f64>().sqrt();
    v.iter_mut().for_each(|a| *a /= nrm);
    nrm
}

/// Restarted Lanczos with full reorthogonalization.
fn lanczos_lowest(apply: &dyn Fn(&[C64]) -> Vec<C64>, mut start: Vec<C64>, tol: f64) -> Result<(f64, Vec<C64>)> {
    let dim = start.len();
    let m_max = dim.min(160);
    normalize(&mut start);
    for _restart in 0..200 {
        let mut q: Vec<Vec<C64>> = vec![start.clone()];
        let mut alpha: Vec<f64> = Vec::new();
        let mut beta: Vec<f64> = Vec::new();
        for j in 0..m_max {
            let mut w = apply(&q[j]);
            let a = dot(&q[j], &w).re;
            alpha.push(a);
            for qi in &q {
                let c = dot(qi, &w);
                w.iter_mut().zip(qi).for_each(|(x, y)| *x -= c * y);
            }
            for qi in &q {
                let c = dot(qi, &w);
                w.iter_mut().zip(qi).for_each(|(x, y)| *x -= c * y);
            }
            let b = w.iter().map(|a| a.norm_sqr()).sum::<f64>().sqrt();
            if j + 1 == m_max || b < 1e-12 {
                break;
            }
            beta.push(b);
            w.iter_mut().for_each(|a| *a /= b);
            q.push(w);
        }
        let m = alpha.len();
        let t = DMatrix::<f64>::from_fn(m, m, |i, j| {
            if i == j {
                alpha[i]
            } else if i + 1 == j {
                beta[i]
            } else if j + 1 == i {
                beta[j]
            } else {
                0.0
            }
        });
        let eig = t.symmetric_eigen();
        let (idx, e) =
            eig.eigenvalues.iter().enumerate().min_by(|a, b| a.1.total_cmp(b.1)).map(|(i, &e)| (i, e)).unwrap();
        let y = eig.eigenvectors.column(idx);
        let mut v = vec![ZERO; dim];
        for (i, qi) in q.iter().take(m).enumerate() {
            let c = y[i];
            v.iter_mut().zip(qi).for_each(|(x, z)| *x += z * c);
        }
        normalize(&mut v);
        let hv = apply(&v);
        let res = hv.iter().zip(&v).map(|(a, b)| (a - b * e).norm_sqr()).sum::<f64>().sqrt();
        if res < tol {
            return Ok((e, v));
        }
        start = v;
    }
    Err(Error::Numerical("Lanczos did not converge".into()))
}

/// Single-particle hopping matrix of the SSH chain: intra-cell `v` on sites
/// (2i, 2i+1), inter-cell `w` on (2i+1, 2i+2), open boundary.
pub fn ssh_hopping_matrix(n: usize, v: f64, w: f64) -> DMatrix<f64> {
    DMatrix::from_fn(n, n, |i, j| {
        if i + 1 == j || j + 1 == i {
            if i.min(j) % 2 == 0 {
                v
            } else {
                w
            }
        } else {
            0.0
        }
    })
}

/// Jordan–Wigner image `Σ t/2 (X_i X_{i+1} + Y_i Y_{i+1})` of the SSH hopping model.
pub fn ssh_hamiltonian(n: usize, v: f64, w: f64) -> Result<ObservableSum> {
    if n < 2 || n % 2 != 0 {
        return Err(Error::Validation(format!("SSH chain needs an even n >= 2, got {n}")));
    }
    let mut terms = Vec::new();
    for i in 0..n - 1 {
        let t = if i % 2 == 0 { v } else { w };
        let m = (1u128 << i) | (1u128 << (i + 1));
        terms.push((t / 2.0, PauliString::new(n, m, 0, 0)?));
        terms.push((t / 2.0, PauliString::new(n, m, m, 0)?));
    }
    ObservableSum::from_terms(n, terms)
}

/// Sum of the `n/2` lowest single-particle energies.
pub fn ssh_ground_energy(n: usize, v: f64, w: f64) -> f64 {
    let mut e: Vec<f64> = ssh_hopping_matrix(n, v, w).symmetric_eigen().eigenvalues.iter().copied().collect();
    e.sort_by(|a, b| a.total_cmp(b));
    e[..n / 2].iter().sum()
}

/// Half-filled free-fermion ground state as a Slater determinant; occupied site = |1⟩.
pub fn ssh_ground_state(n: usize, v: f64, w: f64) -> Result<StateVector> {
    if n < 2 || n % 2 != 0 || n > 12 {
        return Err(Error::Validation(format!("SSH ground state needs an even 2 <= n <= 12, got {n}")));
    }
    let eig = ssh_hopping_matrix(n, v, w).symmetric_eigen();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[a].total_cmp(&eig.eigenvalues[b]));
    let half = n / 2;
    let modes = DMatrix::from_fn(n, half, |s, b| eig.eigenvectors[(s, order[b])]);
    let mut amp = vec![ZERO; 1 << n];
    for (idx, a) in amp.iter_mut().enumerate() {
        if idx.count_ones() as usize != half {
            continue;
        }
        let sites: Vec<usize> = (0..n).filter(|&s| (idx >> s) & 1 == 1).collect();
        let sub = DMatrix::from_fn(half, half, |r, c| modes[(sites[r], c)]);
        *a = C64::new(sub.determinant(), 0.0);
    }
    StateVector::from_unnormalized(n, amp)
}

/// Dense `e^{−iHt}` from the spectral decomposition of `H` (n <= 10).
#[derive(Clone, Debug)]
pub struct Propagator {
    n: usize,
    matrix: DMatrix<C64>,
    trace: C64,
}

impl Propagator {
    pub fn new(h: &ObservableSum, t: f64) -> Result<Self> {
        let n = h.n();
        if n == 0 || n > 10 {
            return Err(Error::Validation(format!("dense evolution for 1..=10 qubits, got {n}")));
        }
        let eig = h.to_matrix().symmetric_eigen();
        let phases: Vec<C64> = eig.eigenvalues.iter().map(|&e| C64::from_polar(1.0, -e * t)).collect();
        let v = &eig.eigenvectors;
        let mut scaled = v.clone();
        for (j, ph) in phases.iter().enumerate() {
            scaled.column_mut(j).iter_mut().for_each(|a| *a *= ph);
        }
        let matrix = scaled * v.adjoint();
        let trace = phases.iter().sum();
        Ok(Self { n, matrix, trace })
    }

    pub fn matrix(&self) -> &DMatrix<C64> {
        &self.matrix
    }

    /// `Tr e^{−iHt}`.
    pub fn trace(&self) -> C64 {
        self.trace
    }

    pub fn apply(&self, psi: &StateVector) -> Result<StateVector> {
        if psi.n != self.n {
            return Err(Error::Dimension(format!("propagator on {} qubits, state on {}", self.n, psi.n)));
        }
        let v = DVector::from_column_slice(&psi.amp);
        let out = &self.matrix * v;
        Ok(StateVector { n: self.n, amp: out.iter().copied().collect() })
    }
}

pub fn evolve_exact(psi: &StateVector, h: &ObservableSum, t: f64) -> Result<StateVector> {
    Propagator::new(h, t)?.apply(psi)
}

/// Brickwork of two-qubit Haar gates on nearest neighbours, even bonds first.
pub fn random_circuit_state<R: Rng + ?Sized>(n: usize, depth: usize, rng: &mut R) -> Result<StateVector> {
    let mut psi = StateVector::zero(n)?;
    for layer in 0..depth {
        let mut q = layer % 2;
        while q + 1 < n {
            let g = sample_haar_matrix(4, rng);
            psi.apply_matrix(&g, &[q, q + 1]);
            q += 2;
        }
    }
    Ok(psi)
}

/// `Tr ρ_A²` for the 0-based qubits in `subsystem`.
pub fn purity_exact(psi: &StateVector, subsystem: &[usize]) -> Result<f64> {
    let n = psi.n;
    let mut a: Vec<usize> = subsystem.to_vec();
    a.sort_unstable();
    a.dedup();
    if a.iter().any(|&q| q >= n) {
        return Err(Error::Validation("subsystem qubit out of range".into()));
    }
    let b: Vec<usize> = (0..n).filter(|q| !a.contains(q)).collect();
    let spread = |l: usize, qs: &[usize]| -> usize {
        qs.iter().enumerate().filter(|(i, _)| (l >> i) & 1 == 1).map(|(_, &q)| 1 << q).sum()
    };
    let (da, db) = (1usize << a.len(), 1usize << b.len());
    let m = DMatrix::from_fn(da, db, |i, j| psi.amp[spread(i, &a) | spread(j, &b)]);
    let rho = if da <= db { &m * m.adjoint() } else { m.adjoint() * &m };
    Ok(rho.iter().map(|x| x.norm_sqr()).sum())
}
