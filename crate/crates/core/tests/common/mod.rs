//! Dense-matrix oracles shared by the integration tests. Nothing here goes through
//! the tableau code, so agreements are real cross-checks.
#![allow(dead_code)]

use std::collections::{HashMap, VecDeque};

use nalgebra::DMatrix;
use num_complex::Complex64 as C64;

pub fn c(re: f64, im: f64) -> C64 {
    C64::new(re, im)
}

pub fn pauli_1q(ch: char) -> DMatrix<C64> {
    let z = c(0.0, 0.0);
    let o = c(1.0, 0.0);
    let i = c(0.0, 1.0);
    match ch {
        'I' => DMatrix::from_row_slice(2, 2, &[o, z, z, o]),
        'X' => DMatrix::from_row_slice(2, 2, &[z, o, o, z]),
        'Y' => DMatrix::from_row_slice(2, 2, &[z, -i, i, z]),
        'Z' => DMatrix::from_row_slice(2, 2, &[o, z, z, -o]),
        _ => panic!("bad letter {ch}"),
    }
}

/// Dense matrix of an unsigned Pauli word; qubit 1 (leftmost letter) is the least significant index bit.
pub fn pauli_dense(word: &str) -> DMatrix<C64> {
    let mut m = DMatrix::from_element(1, 1, c(1.0, 0.0));
    for ch in word.chars() {
        m = pauli_1q(ch).kronecker(&m);
    }
    m
}

/// Pauli word from a local index `x | z << n` (bit q = qubit q+1).
pub fn word_from_index(n: usize, idx: usize) -> String {
    (0..n)
        .map(|q| match (idx >> q & 1, idx >> (n + q) & 1) {
            (0, 0) => 'I',
            (1, 0) => 'X',
            (1, 1) => 'Y',
            _ => 'Z',
        })
        .collect()
}

pub fn expectation(psi: &[C64], m: &DMatrix<C64>) -> f64 {
    let v = nalgebra::DVector::from_column_slice(psi);
    (v.adjoint() * m * &v)[(0, 0)].re
}

pub fn overlap_sq(a: &[C64], b: &[C64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x.conj() * y).sum::<C64>().norm_sqr()
}

pub fn is_diagonal(m: &DMatrix<C64>) -> bool {
    (0..m.nrows()).all(|i| (0..m.ncols()).all(|j| i == j || m[(i, j)].norm() < 1e-9))
}

fn canonical_key(m: &DMatrix<C64>) -> Vec<(i64, i64)> {
    let pivot = m.iter().find(|x| x.norm() > 1e-6).copied().expect("nonzero matrix");
    let ph = pivot / pivot.norm();
    m.iter()
        .map(|x| {
            let y = x / ph;
            ((y.re * 1e6).round() as i64, (y.im * 1e6).round() as i64)
        })
        .collect()
}

fn embed(gate: &DMatrix<C64>, qubits: &[usize], k: usize) -> DMatrix<C64> {
    let d = 1usize << k;
    DMatrix::from_fn(d, d, |r, col| {
        let rest_r = qubits.iter().fold(r, |acc, &q| acc & !(1 << q));
        let rest_c = qubits.iter().fold(col, |acc, &q| acc & !(1 << q));
        if rest_r != rest_c {
            return c(0.0, 0.0);
        }
        let sub = |x: usize| qubits.iter().enumerate().fold(0, |acc, (i, &q)| acc | ((x >> q & 1) << i));
        gate[(sub(r), sub(col))]
    })
}

/// The k-qubit Clifford group modulo phases, generated by breadth-first search over
/// Hadamard, phase and CNOT gates as dense matrices.
pub fn dense_clifford_group(k: usize) -> Vec<DMatrix<C64>> {
    let s2 = std::f64::consts::FRAC_1_SQRT_2;
    let h = DMatrix::from_row_slice(2, 2, &[c(s2, 0.0), c(s2, 0.0), c(s2, 0.0), c(-s2, 0.0)]);
    let s = DMatrix::from_row_slice(2, 2, &[c(1.0, 0.0), c(0.0, 0.0), c(0.0, 0.0), c(0.0, 1.0)]);
    let o = c(1.0, 0.0);
    let z = c(0.0, 0.0);
    // control = local qubit 0, target = local qubit 1
    let cx = DMatrix::from_row_slice(4, 4, &[o, z, z, z, z, z, z, o, z, z, o, z, z, o, z, z]);
    let mut gens = Vec::new();
    for q in 0..k {
        gens.push(embed(&h, &[q], k));
        gens.push(embed(&s, &[q], k));
        for t in 0..k {
            if t != q {
                gens.push(embed(&cx, &[q, t], k));
            }
        }
    }
    let id = DMatrix::<C64>::identity(1 << k, 1 << k);
    let mut seen: HashMap<Vec<(i64, i64)>, ()> = HashMap::new();
    let mut out = Vec::new();
    let mut queue = VecDeque::new();
    seen.insert(canonical_key(&id), ());
    queue.push_back(id);
    while let Some(u) = queue.pop_front() {
        for g in &gens {
            let v = g * &u;
            let key = canonical_key(&v);
            if seen.insert(key, ()).is_none() {
                queue.push_back(v);
            }
        }
        out.push(u);
    }
    out
}

pub fn gcd(a: u128, b: u128) -> u128 {
    if b == 0 {
        a
    } else {
        gcd(b, a % b)
    }
}

/// Exact rational `num/den` in lowest terms.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Ratio(pub u128, pub u128);

impl Ratio {
    pub fn new(num: u128, den: u128) -> Self {
        let g = gcd(num, den).max(1);
        Ratio(num / g, den / g)
    }
}

/// Sample variance and a bootstrap standard error of it.
pub fn variance_with_se(values: &[f64], resamples: usize, seed: u64) -> (f64, f64) {
    use rand::{Rng, SeedableRng};
    let var = |v: &[f64]| {
        let m = v.iter().sum::<f64>() / v.len() as f64;
        v.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (v.len() - 1) as f64
    };
    let s2 = var(values);
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    let n = values.len();
    let reps: Vec<f64> = (0..resamples)
        .map(|_| {
            let r: Vec<f64> = (0..n).map(|_| values[rng.random_range(0..n)]).collect();
            var(&r)
        })
        .collect();
    (s2, var(&reps).sqrt())
}
