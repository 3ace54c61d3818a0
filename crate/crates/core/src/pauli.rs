//! Bit-packed Pauli strings, block layouts and real Pauli-sum observables.
//!
//! A [`PauliString`] on `n <= 128` qubits stores an `x` mask, a `z` mask and a
//! phase exponent `e` so that the operator is `i^e ⊗_q σ(x_q, z_q)` with
//! `σ(0,0)=I, σ(1,0)=X, σ(0,1)=Z, σ(1,1)=Y`. Qubit 1 is bit 0 and is printed
//! leftmost.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use num_complex::Complex64 as C64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const MAX_QUBITS: usize = 128;

#[inline]
fn low_mask(n: usize) -> u128 {
    if n >= 128 {
        u128::MAX
    } else {
        (1u128 << n) - 1
    }
}

#[inline]
fn pop(v: u128) -> u32 {
    v.count_ones()
}

#[derive(Clone, Copy, PartialEq, Eq, Hash, Debug)]
pub struct PauliString {
    n: usize,
    x: u128,
    z: u128,
    phase: u8,
}

impl PauliString {
    pub fn new(n: usize, x: u128, z: u128, phase: u8) -> Result<Self> {
        if n > MAX_QUBITS {
            return Err(Error::Validation(format!("at most {MAX_QUBITS} qubits supported, got {n}")));
        }
        let m = low_mask(n);
        if x & !m != 0 || z & !m != 0 {
            return Err(Error::Validation(format!("masks exceed {n} qubits")));
        }
        Ok(Self { n, x, z, phase: phase & 3 })
    }

    /// Constructor for callers that already guarantee the mask width.
    #[inline]
    pub(crate) fn from_parts(n: usize, x: u128, z: u128, phase: u8) -> Self {
        debug_assert!(x & !low_mask(n) == 0 && z & !low_mask(n) == 0);
        Self { n, x, z, phase: phase & 3 }
    }

    pub fn identity(n: usize) -> Self {
        Self::from_parts(n, 0, 0, 0)
    }

    /// Single-qubit operator `op` in {'I','X','Y','Z'} on 0-based qubit `q`.
    pub fn single(n: usize, q: usize, op: char) -> Result<Self> {
        if q >= n {
            return Err(Error::Validation(format!("qubit {q} out of range for n={n}")));
        }
        let (x, z) = match op {
            'I' => (0, 0),
            'X' => (1, 0),
            'Y' => (1, 1),
            'Z' => (0, 1),
            _ => return Err(Error::Parse(format!("unknown Pauli letter {op:?}"))),
        };
        Self::new(n, x << q, z << q, 0)
    }

    /// Hermitian Pauli with index `idx = x | z << n` (n <= 16), used for dense tables.
    #[inline]
    pub fn from_index(n: usize, idx: usize) -> Self {
        let m = (1usize << n) - 1;
        Self::from_parts(n, (idx & m) as u128, (idx >> n) as u128, 0)
    }

    #[inline]
    pub fn index(&self) -> usize {
        (self.x as usize) | ((self.z as usize) << self.n)
    }

    #[inline]
    pub fn n(&self) -> usize {
        self.n
    }
    #[inline]
    pub fn x_mask(&self) -> u128 {
        self.x
    }
    #[inline]
    pub fn z_mask(&self) -> u128 {
        self.z
    }
    #[inline]
    pub fn phase(&self) -> u8 {
        self.phase
    }

    pub fn with_phase(mut self, phase: u8) -> Self {
        self.phase = phase & 3;
        self
    }

    /// The same string with phase 0.
    pub fn unsigned(self) -> Self {
        self.with_phase(0)
    }

    #[inline]
    pub fn is_identity(&self) -> bool {
        self.x == 0 && self.z == 0
    }

    #[inline]
    pub fn is_hermitian(&self) -> bool {
        self.phase & 1 == 0
    }

    /// True if the string lies in `±{I,Z}^n` (phase ignored).
    #[inline]
    pub fn is_z_type(&self) -> bool {
        self.x == 0
    }

    /// `+1` or `-1` for Hermitian strings.
    pub fn sign(&self) -> f64 {
        match self.phase {
            0 => 1.0,
            2 => -1.0,
            _ => panic!("sign() of a non-Hermitian Pauli string"),
        }
    }

    pub fn weight(&self) -> usize {
        pop(self.x | self.z) as usize
    }

    pub fn support(&self) -> u128 {
        self.x | self.z
    }

    /// Letter on 0-based qubit `q`.
    pub fn letter(&self, q: usize) -> char {
        match ((self.x >> q) & 1, (self.z >> q) & 1) {
            (0, 0) => 'I',
            (1, 0) => 'X',
            (1, 1) => 'Y',
            _ => 'Z',
        }
    }

    /// Matrix product `self · other`, panicking on a qubit-count mismatch.
    pub fn mul(&self, other: &Self) -> Self {
        assert_eq!(self.n, other.n, "Pauli product of strings with different n");
        // σ(x,z) = i^{x·z} X^x Z^z, so the product picks up
        // i^{x1z1 + x2z2 - x3z3} (-1)^{z1·x2}.
        let x3 = self.x ^ other.x;
        let z3 = self.z ^ other.z;
        let e = self.phase as i64
            + other.phase as i64
            + pop(self.x & self.z) as i64
            + pop(other.x & other.z) as i64
            + 2 * pop(self.z & other.x) as i64
            - pop(x3 & z3) as i64;
        Self::from_parts(self.n, x3, z3, e.rem_euclid(4) as u8)
    }

    pub fn commutes_with(&self, other: &Self) -> bool {
        assert_eq!(self.n, other.n, "commutator of strings with different n");
        (pop(self.x & other.z) + pop(self.z & other.x)) % 2 == 0
    }

    /// Restriction to qubits `[start, start+len)` as a `len`-qubit string with phase 0.
    pub fn restrict(&self, start: usize, len: usize) -> Self {
        let m = low_mask(len);
        Self::from_parts(len, (self.x >> start) & m, (self.z >> start) & m, 0)
    }

    pub fn block_weight(&self, layout: &BlockLayout) -> usize {
        let s = self.support();
        (0..layout.num_blocks()).filter(|&b| s & layout.block_mask(b) != 0).count()
    }

    /// Bitmask over blocks on which the string acts non-trivially.
    pub fn block_support(&self, layout: &BlockLayout) -> u64 {
        let s = self.support();
        let mut out = 0u64;
        for b in 0..layout.num_blocks() {
            if s & layout.block_mask(b) != 0 {
                out |= 1 << b;
            }
        }
        out
    }

    /// `P|j⟩ = coeff · |j ⊕ x⟩`; returns `(j ⊕ x, coeff)`.
    #[inline]
    pub fn act_on_basis(&self, j: usize) -> (usize, C64) {
        let e = (self.phase as u32 + pop(self.x & self.z)) % 4;
        let neg = pop(self.z & j as u128) % 2 == 1;
        let mut c = I_POW[e as usize];
        if neg {
            c = -c;
        }
        (j ^ self.x as usize, c)
    }

    /// Dense `2^n × 2^n` matrix, row-major. Small n only.
    pub fn to_matrix(&self) -> nalgebra::DMatrix<C64> {
        let d = 1usize << self.n;
        let mut m = nalgebra::DMatrix::<C64>::zeros(d, d);
        for j in 0..d {
            let (i, c) = self.act_on_basis(j);
            m[(i, j)] = c;
        }
        m
    }
}

pub(crate) const I_POW: [C64; 4] = [
    C64 { re: 1.0, im: 0.0 },
    C64 { re: 0.0, im: 1.0 },
    C64 { re: -1.0, im: 0.0 },
    C64 { re: 0.0, im: -1.0 },
];

/// Product with a dimension check.
pub fn multiply(p: &PauliString, q: &PauliString) -> Result<PauliString> {
    if p.n != q.n {
        return Err(Error::Dimension(format!("{} vs {} qubits", p.n, q.n)));
    }
    Ok(p.mul(q))
}

pub fn commutes(p: &PauliString, q: &PauliString) -> Result<bool> {
    if p.n != q.n {
        return Err(Error::Dimension(format!("{} vs {} qubits", p.n, q.n)));
    }
    Ok(p.commutes_with(q))
}

pub fn block_weight(p: &PauliString, layout: &BlockLayout) -> Result<usize> {
    if p.n != layout.n() {
        return Err(Error::Dimension(format!("Pauli on {} qubits, layout on {}", p.n, layout.n())));
    }
    Ok(p.block_weight(layout))
}

impl fmt::Display for PauliString {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let prefix = match self.phase {
            0 => "",
            1 => "i",
            2 => "-",
            _ => "-i",
        };
        write!(f, "{prefix}")?;
        for q in 0..self.n {
            write!(f, "{}", self.letter(q))?;
        }
        Ok(())
    }
}

impl FromStr for PauliString {
    type Err = Error;

    /// Parses `[+|-]{I,X,Y,Z}+`, qubit 1 leftmost.
    fn from_str(s: &str) -> Result<Self> {
        let s = s.trim();
        let (phase, body) = if let Some(rest) = s.strip_prefix('-') {
            (2, rest)
        } else if let Some(rest) = s.strip_prefix('+') {
            (0, rest)
        } else {
            (0, s)
        };
        if body.is_empty() {
            return Err(Error::Parse("empty Pauli string".into()));
        }
        let n = body.chars().count();
        if n > MAX_QUBITS {
            return Err(Error::Parse(format!("Pauli string longer than {MAX_QUBITS}")));
        }
        let (mut x, mut z) = (0u128, 0u128);
        for (q, c) in body.chars().enumerate() {
            match c.to_ascii_uppercase() {
                'I' => {}
                'X' => x |= 1 << q,
                'Y' => {
                    x |= 1 << q;
                    z |= 1 << q
                }
                'Z' => z |= 1 << q,
                other => return Err(Error::Parse(format!("unknown Pauli letter {other:?} in {s:?}"))),
            }
        }
        Ok(Self::from_parts(n, x, z, phase))
    }
}

impl Serialize for PauliString {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.serialize_str(&self.to_string())
    }
}

impl<'de> Deserialize<'de> for PauliString {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

/// Partition of `n` qubits into `n/k` contiguous blocks of `k` qubits.
#[derive(Clone, Copy, PartialEq, Eq, Hash, Debug, Serialize, Deserialize)]
#[serde(try_from = "LayoutRepr", into = "LayoutRepr")]
pub struct BlockLayout {
    n: usize,
    k: usize,
}

#[derive(Serialize, Deserialize)]
struct LayoutRepr {
    n: usize,
    k: usize,
}

impl TryFrom<LayoutRepr> for BlockLayout {
    type Error = Error;
    fn try_from(r: LayoutRepr) -> Result<Self> {
        BlockLayout::new(r.n, r.k)
    }
}

impl From<BlockLayout> for LayoutRepr {
    fn from(l: BlockLayout) -> Self {
        LayoutRepr { n: l.n, k: l.k }
    }
}

impl BlockLayout {
    pub fn new(n: usize, k: usize) -> Result<Self> {
        if n == 0 || k == 0 {
            return Err(Error::Validation("n and k must be positive".into()));
        }
        if n % k != 0 {
            return Err(Error::Validation(format!("block size k={k} does not divide n={n}")));
        }
        if n > MAX_QUBITS {
            return Err(Error::Validation(format!("at most {MAX_QUBITS} qubits supported")));
        }
        if n / k > 64 {
            return Err(Error::Validation("at most 64 blocks supported".into()));
        }
        Ok(Self { n, k })
    }

    #[inline]
    pub fn n(&self) -> usize {
        self.n
    }
    #[inline]
    pub fn k(&self) -> usize {
        self.k
    }
    #[inline]
    pub fn num_blocks(&self) -> usize {
        self.n / self.k
    }
    /// Local Hilbert-space dimension `2^k`.
    #[inline]
    pub fn block_dim(&self) -> usize {
        1 << self.k
    }
    #[inline]
    pub fn block_start(&self, b: usize) -> usize {
        b * self.k
    }
    #[inline]
    pub fn block_mask(&self, b: usize) -> u128 {
        low_mask(self.k) << (b * self.k)
    }
    pub fn blocks(&self) -> impl Iterator<Item = std::ops::Range<usize>> + '_ {
        (0..self.num_blocks()).map(move |b| b * self.k..(b + 1) * self.k)
    }
    /// The `k`-bit outcome of block `b` inside an `n`-bit outcome.
    #[inline]
    pub fn block_bits(&self, bits: u128, b: usize) -> usize {
        ((bits >> (b * self.k)) & low_mask(self.k)) as usize
    }
}

/// Real linear combination of Hermitian Pauli strings in canonical form.
#[derive(Clone, PartialEq, Debug, Default)]
pub struct ObservableSum {
    n: usize,
    terms: Vec<(f64, PauliString)>,
}

#[derive(Serialize, Deserialize)]
struct TermRepr {
    coeff: f64,
    pauli: String,
}

impl ObservableSum {
    /// Canonicalizes: folds signs into coefficients, merges duplicates, drops zeros and
    /// sorts by `(x_mask, z_mask)`.
    pub fn from_terms(n: usize, terms: impl IntoIterator<Item = (f64, PauliString)>) -> Result<Self> {
        let mut acc: BTreeMap<(u128, u128), C64> = BTreeMap::new();
        for (c, p) in terms {
            if p.n != n {
                return Err(Error::Dimension(format!("term {p} does not act on {n} qubits")));
            }
            *acc.entry((p.x, p.z)).or_insert(C64::new(0.0, 0.0)) += I_POW[p.phase as usize] * c;
        }
        Self::from_complex_map(n, acc)
    }

    fn from_complex_map(n: usize, acc: BTreeMap<(u128, u128), C64>) -> Result<Self> {
        let mut terms = Vec::with_capacity(acc.len());
        for ((x, z), c) in acc {
            if c.im.abs() > 1e-12 {
                return Err(Error::Internal(format!(
                    "imaginary coefficient {} on {}",
                    c.im,
                    PauliString::from_parts(n, x, z, 0)
                )));
            }
            if c.re != 0.0 {
                terms.push((c.re, PauliString::from_parts(n, x, z, 0)));
            }
        }
        Ok(Self { n, terms })
    }

    pub fn zero(n: usize) -> Self {
        Self { n, terms: Vec::new() }
    }

    pub fn single(coeff: f64, p: PauliString) -> Self {
        Self::from_terms(p.n, [(coeff, p)]).expect("single Hermitian term")
    }

    pub fn n(&self) -> usize {
        self.n
    }
    pub fn terms(&self) -> &[(f64, PauliString)] {
        &self.terms
    }
    pub fn len(&self) -> usize {
        self.terms.len()
    }
    pub fn is_empty(&self) -> bool {
        self.terms.is_empty()
    }

    pub fn coefficient(&self, p: &PauliString) -> f64 {
        self.terms
            .binary_search_by(|(_, q)| (q.x, q.z).cmp(&(p.x, p.z)))
            .map(|i| self.terms[i].0)
            .unwrap_or(0.0)
    }

    pub fn add(&self, other: &Self) -> Result<Self> {
        Self::from_terms(self.n, self.terms.iter().chain(other.terms.iter()).copied())
    }

    pub fn scale(&self, s: f64) -> Self {
        Self::from_terms(self.n, self.terms.iter().map(|&(c, p)| (c * s, p))).expect("scaling keeps form")
    }

    /// Operator product `self · other`; errors if the result is not Hermitian.
    pub fn product(&self, other: &Self) -> Result<Self> {
        if self.n != other.n {
            return Err(Error::Dimension(format!("{} vs {} qubits", self.n, other.n)));
        }
        let mut acc: BTreeMap<(u128, u128), C64> = BTreeMap::new();
        for &(a, p) in &self.terms {
            for &(b, q) in &other.terms {
                let r = p.mul(&q);
                *acc.entry((r.x, r.z)).or_insert(C64::new(0.0, 0.0)) += I_POW[r.phase as usize] * (a * b);
            }
        }
        Self::from_complex_map(self.n, acc)
    }

    /// Anticommutator `self·other + other·self`, always Hermitian.
    pub fn anticommutator(&self, other: &Self) -> Result<Self> {
        if self.n != other.n {
            return Err(Error::Dimension(format!("{} vs {} qubits", self.n, other.n)));
        }
        let mut acc: BTreeMap<(u128, u128), C64> = BTreeMap::new();
        for &(a, p) in &self.terms {
            for &(b, q) in &other.terms {
                if p.commutes_with(&q) {
                    let r = p.mul(&q);
                    *acc.entry((r.x, r.z)).or_insert(C64::new(0.0, 0.0)) +=
                        I_POW[r.phase as usize] * (2.0 * a * b);
                }
            }
        }
        Self::from_complex_map(self.n, acc)
    }

    pub fn to_matrix(&self) -> nalgebra::DMatrix<C64> {
        let d = 1usize << self.n;
        let mut m = nalgebra::DMatrix::<C64>::zeros(d, d);
        for &(c, p) in &self.terms {
            for j in 0..d {
                let (i, v) = p.act_on_basis(j);
                m[(i, j)] += v * c;
            }
        }
        m
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let raw: Vec<TermRepr> = serde_json::from_str(text)?;
        if raw.is_empty() {
            return Err(Error::Validation("observable has no terms".into()));
        }
        let mut terms = Vec::with_capacity(raw.len());
        for t in raw {
            terms.push((t.coeff, t.pauli.parse::<PauliString>()?));
        }
        let n = terms[0].1.n;
        Self::from_terms(n, terms)
    }

    pub fn to_json(&self) -> String {
        let raw: Vec<TermRepr> =
            self.terms.iter().map(|(c, p)| TermRepr { coeff: *c, pauli: p.to_string() }).collect();
        serde_json::to_string_pretty(&raw).expect("serializable")
    }
}

pub fn square_observable(h: &ObservableSum) -> Result<ObservableSum> {
    h.product(h)
}

/// `Σ_{a<b} (H_a H_b + H_b H_a)`: the products of distinct parts.
pub fn cross_terms(parts: &[ObservableSum]) -> Result<ObservableSum> {
    let n = parts.first().map(|p| p.n).unwrap_or(0);
    let mut acc = ObservableSum::zero(n);
    for a in 0..parts.len() {
        for b in a + 1..parts.len() {
            acc = acc.add(&parts[a].anticommutator(&parts[b])?)?;
        }
    }
    Ok(acc)
}

/// The four parts `[Σ ZXZ, λΣ XX, λΣ YY, λΣ ZZ]` of the open-boundary cluster-Heisenberg chain.
pub fn cluster_heisenberg_parts(n: usize, lambda: f64) -> Result<Vec<ObservableSum>> {
    if n < 2 {
        return Err(Error::Validation(format!("cluster-Heisenberg chain needs n >= 2, got {n}")));
    }
    if n > MAX_QUBITS {
        return Err(Error::Validation(format!("at most {MAX_QUBITS} qubits supported")));
    }
    let bit = |q: usize| 1u128 << q;
    let zxz = (0..n.saturating_sub(2))
        .map(|i| (1.0, PauliString::from_parts(n, bit(i + 1), bit(i) | bit(i + 2), 0)));
    let pair = |xs: bool, zs: bool| {
        (0..n - 1).map(move |i| {
            let m = bit(i) | bit(i + 1);
            (lambda, PauliString::from_parts(n, if xs { m } else { 0 }, if zs { m } else { 0 }, 0))
        })
    };
    Ok(vec![
        ObservableSum::from_terms(n, zxz)?,
        ObservableSum::from_terms(n, pair(true, false))?,
        ObservableSum::from_terms(n, pair(true, true))?,
        ObservableSum::from_terms(n, pair(false, true))?,
    ])
}

pub fn build_cluster_heisenberg_with(n: usize, lambda: f64) -> Result<ObservableSum> {
    let parts = cluster_heisenberg_parts(n, lambda)?;
    let mut h = ObservableSum::zero(n);
    for p in &parts {
        h = h.add(p)?;
    }
    Ok(h)
}

pub fn build_cluster_heisenberg(n: usize) -> Result<ObservableSum> {
    build_cluster_heisenberg_with(n, 1.0)
}
