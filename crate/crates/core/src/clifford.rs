//! Symplectic tableaux for k-qubit Cliffords, block-product unitaries and the
//! measurement ensembles built from them.
//!
//! A [`CliffordTableau`] stores the images `U X_j U†` and `U Z_j U†` as Hermitian
//! Pauli strings whose phase (0 or 2) carries the sign bit.

use std::collections::BTreeSet;
use std::sync::OnceLock;

use nalgebra::DMatrix;
use num_complex::Complex64 as C64;
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::pauli::{BlockLayout, PauliString};

/// Largest block size for which tableaux are supported.
pub const MAX_BLOCK_QUBITS: usize = 8;

/// Symplectic form on `F_2^{2k}` vectors packed as `x | z << k`.
#[inline]
fn omega(k: usize, a: u32, b: u32) -> u32 {
    let m = (1u32 << k) - 1;
    ((a & m & (b >> k)).count_ones() + ((a >> k) & b & m).count_ones()) & 1
}

#[inline]
fn vec_to_pauli(k: usize, v: u32) -> PauliString {
    let m = (1u32 << k) - 1;
    PauliString::from_parts(k, (v & m) as u128, (v >> k) as u128, 0)
}

#[inline]
fn pauli_to_vec(k: usize, p: &PauliString) -> u32 {
    (p.x_mask() as u32) | ((p.z_mask() as u32) << k)
}

/// Turns a spanning set of a non-degenerate subspace into a symplectic basis
/// `[(e_1, f_1), …]` with `ω(e_i, f_j) = δ_ij`. Deterministic in the input order.
fn symplectic_basis(k: usize, mut pool: Vec<u32>) -> Vec<(u32, u32)> {
    let mut pairs = Vec::new();
    pool.retain(|&v| v != 0);
    while let Some(&u) = pool.first() {
        let Some(pos) = pool.iter().position(|&w| omega(k, u, w) == 1) else {
            // u is in the radical of the span; drop it.
            pool.remove(0);
            continue;
        };
        let w = pool[pos];
        pairs.push((u, w));
        pool = pool
            .into_iter()
            .map(|v| v ^ if omega(k, v, w) == 1 { u } else { 0 } ^ if omega(k, v, u) == 1 { w } else { 0 })
            .filter(|&v| v != 0)
            .collect();
    }
    pairs
}

/// Number of choices at each level of the row-by-row construction:
/// `(4^m − 1, 4^m / 2)` for `m = k, k−1, …, 1`.
fn choice_radices(k: usize) -> Vec<(u64, u64)> {
    (1..=k).rev().map(|m| ((1u64 << (2 * m)) - 1, 1u64 << (2 * m - 1))).collect()
}

/// Builds the symplectic images `(S X_j, S Z_j)` from per-level choice indices.
/// The map from choice tuples to symplectic matrices is a bijection.
fn symplectic_from_choices(k: usize, choices: &[(u64, u64)]) -> Vec<(u32, u32)> {
    let mut basis: Vec<(u32, u32)> = (0..k).map(|j| (1u32 << j, 1u32 << (j + k))).collect();
    let mut images = Vec::with_capacity(k);
    for &(c1, c2) in choices {
        let m = basis.len();
        let coords_to_vec = |c: u64| -> u32 {
            let mut v = 0u32;
            for (t, &(e, f)) in basis.iter().enumerate() {
                if (c >> t) & 1 == 1 {
                    v ^= e;
                }
                if (c >> (t + m)) & 1 == 1 {
                    v ^= f;
                }
            }
            v
        };
        let a = coords_to_vec(c1 + 1);
        let mut seen = 0u64;
        let mut b = 0u32;
        for c in 0..(1u64 << (2 * m)) {
            let v = coords_to_vec(c);
            if omega(k, a, v) == 1 {
                if seen == c2 {
                    b = v;
                    break;
                }
                seen += 1;
            }
        }
        debug_assert_eq!(omega(k, a, b), 1);
        images.push((a, b));
        let projected: Vec<u32> = basis
            .iter()
            .flat_map(|&(e, f)| [e, f])
            .map(|v| v ^ if omega(k, v, b) == 1 { a } else { 0 } ^ if omega(k, v, a) == 1 { b } else { 0 })
            .collect();
        basis = symplectic_basis(k, projected);
        debug_assert_eq!(basis.len(), m - 1);
    }
    images
}

#[derive(Clone, PartialEq, Eq, Hash, Debug)]
pub struct CliffordTableau {
    k: usize,
    /// `images[j] = U X_j U†`, `images[k + j] = U Z_j U†`.
    images: Vec<PauliString>,
}

impl CliffordTableau {
    pub fn identity(k: usize) -> Self {
        let images = (0..k)
            .map(|j| PauliString::from_parts(k, 1 << j, 0, 0))
            .chain((0..k).map(|j| PauliString::from_parts(k, 0, 1 << j, 0)))
            .collect();
        Self { k, images }
    }

    /// Tableau from generator images; validated.
    pub fn from_images(k: usize, x_images: Vec<PauliString>, z_images: Vec<PauliString>) -> Result<Self> {
        if x_images.len() != k || z_images.len() != k {
            return Err(Error::Validation(format!("need {k} X and {k} Z images")));
        }
        let mut images = x_images;
        images.extend(z_images);
        let t = Self { k, images };
        t.validate()?;
        Ok(t)
    }

    fn from_symplectic(k: usize, sym: &[(u32, u32)], signs: u64) -> Self {
        let mut images = vec![PauliString::identity(k); 2 * k];
        for (j, &(a, b)) in sym.iter().enumerate() {
            images[j] = vec_to_pauli(k, a).with_phase(if (signs >> j) & 1 == 1 { 2 } else { 0 });
            images[k + j] = vec_to_pauli(k, b).with_phase(if (signs >> (k + j)) & 1 == 1 { 2 } else { 0 });
        }
        Self { k, images }
    }

    pub fn hadamard() -> Self {
        Self::from_images(1, vec!["Z".parse().unwrap()], vec!["X".parse().unwrap()]).unwrap()
    }

    pub fn phase_gate() -> Self {
        Self::from_images(1, vec!["Y".parse().unwrap()], vec!["Z".parse().unwrap()]).unwrap()
    }

    /// CNOT with control qubit 1 and target qubit 2.
    pub fn cnot() -> Self {
        let p = |s: &str| s.parse::<PauliString>().unwrap();
        Self::from_images(2, vec![p("XX"), p("IX")], vec![p("ZI"), p("ZZ")]).unwrap()
    }

    #[inline]
    pub fn k(&self) -> usize {
        self.k
    }

    pub fn x_image(&self, j: usize) -> &PauliString {
        &self.images[j]
    }

    pub fn z_image(&self, j: usize) -> &PauliString {
        &self.images[self.k + j]
    }

    /// Binary `2k × 2k` matrix; row `r` is the `(x | z)` vector of the image of generator `r`
    /// (`X_1..X_k` then `Z_1..Z_k`).
    pub fn symplectic_rows(&self) -> Vec<u32> {
        self.images.iter().map(|p| pauli_to_vec(self.k, p)).collect()
    }

    pub fn sign_bits(&self) -> Vec<bool> {
        self.images.iter().map(|p| p.phase() == 2).collect()
    }

    pub fn validate(&self) -> Result<()> {
        let k = self.k;
        if self.images.len() != 2 * k || self.images.iter().any(|p| p.n() != k) {
            return Err(Error::Validation("tableau image count or width is wrong".into()));
        }
        if self.images.iter().any(|p| !p.is_hermitian()) {
            return Err(Error::Validation("tableau images must be Hermitian".into()));
        }
        let rows = self.symplectic_rows();
        for i in 0..2 * k {
            for j in 0..2 * k {
                let expected = u32::from(i + k == j || j + k == i);
                if omega(k, rows[i], rows[j]) != expected {
                    return Err(Error::Validation("tableau rows violate the symplectic condition".into()));
                }
            }
        }
        Ok(())
    }

    /// `U P U†` including the phase.
    pub fn conjugate(&self, p: &PauliString) -> PauliString {
        assert_eq!(p.n(), self.k, "conjugation dimension mismatch");
        // P = i^{e + x·z} X^x Z^z, so U P U† is the ordered product of images.
        let x = p.x_mask();
        let z = p.z_mask();
        let e = p.phase() as u32 + (x & z).count_ones();
        let mut out = PauliString::identity(self.k).with_phase((e % 4) as u8);
        for j in 0..self.k {
            if (x >> j) & 1 == 1 {
                out = out.mul(&self.images[j]);
            }
        }
        for j in 0..self.k {
            if (z >> j) & 1 == 1 {
                out = out.mul(&self.images[self.k + j]);
            }
        }
        out
    }

    pub fn try_conjugate(&self, p: &PauliString) -> Result<PauliString> {
        if p.n() != self.k {
            return Err(Error::Dimension(format!("tableau on {} qubits, Pauli on {}", self.k, p.n())));
        }
        Ok(self.conjugate(p))
    }

    /// 1 iff `U P U†` lies in `±{I,Z}^k`.
    #[inline]
    pub fn indicator(&self, p: &PauliString) -> bool {
        self.conjugate(p).is_z_type()
    }

    /// Tableau of the product `self · other` (apply `other` first).
    pub fn compose(&self, other: &Self) -> Self {
        assert_eq!(self.k, other.k);
        Self { k: self.k, images: other.images.iter().map(|g| self.conjugate(g)).collect() }
    }

    pub fn inverse(&self) -> Self {
        let k = self.k;
        let rows = self.symplectic_rows();
        let mut images = Vec::with_capacity(2 * k);
        for g in 0..2 * k {
            let v = 1u32 << g;
            // Coordinates of v in the image basis via the symplectic form.
            let mut w = 0u32;
            for i in 0..k {
                if omega(k, v, rows[k + i]) == 1 {
                    w |= 1 << i;
                }
                if omega(k, v, rows[i]) == 1 {
                    w |= 1 << (i + k);
                }
            }
            let cand = vec_to_pauli(k, w);
            let back = self.conjugate(&cand);
            debug_assert_eq!(pauli_to_vec(k, &back), v);
            images.push(cand.with_phase(back.phase()));
        }
        Self { k, images }
    }

    /// Dense `2^k × 2^k` unitary (fixed global phase): `U|0⟩` is the joint +1
    /// eigenvector of the Z images and `U|b⟩ = (U X^b U†) U|0⟩`.
    pub fn to_dense(&self) -> DMatrix<C64> {
        let k = self.k;
        let d = 1usize << k;
        let apply = |p: &PauliString, v: &[C64]| -> Vec<C64> {
            let mut out = vec![C64::new(0.0, 0.0); d];
            for (j, &a) in v.iter().enumerate() {
                if a != C64::new(0.0, 0.0) {
                    let (i, c) = p.act_on_basis(j);
                    out[i] += c * a;
                }
            }
            out
        };
        let mut psi0 = None;
        for c in 0..d {
            let mut v = vec![C64::new(0.0, 0.0); d];
            v[c] = C64::new(1.0, 0.0);
            for j in 0..k {
                let g = &self.images[k + j];
                let gv = apply(g, &v);
                for (a, b) in v.iter_mut().zip(gv) {
                    *a = (*a + b) * 0.5;
                }
            }
            let norm: f64 = v.iter().map(|a| a.norm_sqr()).sum::<f64>().sqrt();
            if norm > 1e-6 {
                // Fix the global phase so the first large entry is real positive.
                let lead = *v.iter().find(|a| a.norm() > 1e-6).unwrap();
                let ph = lead.conj() / lead.norm();
                psi0 = Some(v.into_iter().map(|a| a * ph / norm).collect::<Vec<_>>());
                break;
            }
        }
        let psi0 = psi0.expect("stabilizer projector has a non-zero image");
        let mut m = DMatrix::<C64>::zeros(d, d);
        for b in 0..d {
            let mut col = psi0.clone();
            for j in 0..k {
                if (b >> j) & 1 == 1 {
                    col = apply(&self.images[j], &col);
                }
            }
            for (i, a) in col.into_iter().enumerate() {
                m[(i, b)] = a;
            }
        }
        m
    }
}

/// Uniformly random element of `Cl(k)` modulo global phase.
pub fn sample_clifford<R: Rng + ?Sized>(k: usize, rng: &mut R) -> CliffordTableau {
    assert!((1..=MAX_BLOCK_QUBITS).contains(&k), "tableau size out of range");
    let choices: Vec<(u64, u64)> =
        choice_radices(k).into_iter().map(|(r1, r2)| (rng.random_range(0..r1), rng.random_range(0..r2))).collect();
    let sym = symplectic_from_choices(k, &choices);
    let signs = rng.random::<u64>() & ((1u64 << (2 * k)) - 1);
    CliffordTableau::from_symplectic(k, &sym, signs)
}

/// `2^{k²+2k} Π_{j=1..k} (4^j − 1)`.
pub fn clifford_group_order(k: usize) -> u128 {
    let mut o: u128 = 1 << (k * k + 2 * k);
    for j in 1..=k {
        o *= (1u128 << (2 * j)) - 1;
    }
    o
}

/// Every element of `Cl(k)` for `k <= 2`, in a fixed order.
pub fn enumerate_clifford(k: usize) -> Result<Vec<CliffordTableau>> {
    if k == 0 || k > 2 {
        return Err(Error::Unsupported(format!("Clifford enumeration only for k in {{1,2}}, got {k}")));
    }
    let radices = choice_radices(k);
    let total_sym: u64 = radices.iter().map(|&(a, b)| a * b).product();
    let mut out = Vec::with_capacity(clifford_group_order(k) as usize);
    for mut code in 0..total_sym {
        let mut choices = Vec::with_capacity(k);
        for &(r1, r2) in &radices {
            let c1 = code % r1;
            code /= r1;
            let c2 = code % r2;
            code /= r2;
            choices.push((c1, c2));
        }
        let sym = symplectic_from_choices(k, &choices);
        for signs in 0..(1u64 << (2 * k)) {
            out.push(CliffordTableau::from_symplectic(k, &sym, signs));
        }
    }
    Ok(out)
}

/// Cached enumeration, shared across callers.
pub fn clifford_group(k: usize) -> Result<&'static [CliffordTableau]> {
    static CL1: OnceLock<Vec<CliffordTableau>> = OnceLock::new();
    static CL2: OnceLock<Vec<CliffordTableau>> = OnceLock::new();
    match k {
        1 => Ok(CL1.get_or_init(|| enumerate_clifford(1).unwrap())),
        2 => Ok(CL2.get_or_init(|| enumerate_clifford(2).unwrap())),
        _ => Err(Error::Unsupported(format!("Clifford enumeration only for k in {{1,2}}, got {k}"))),
    }
}

/// All maximal commuting subgroups of the k-qubit Pauli group (mod phase), each as
/// the sorted list of its `2^k − 1` non-identity vectors.
fn lagrangian_subspaces(k: usize) -> Vec<Vec<u32>> {
    let nonid: Vec<u32> = (1..(1u32 << (2 * k))).collect();
    let mut found: BTreeSet<Vec<u32>> = BTreeSet::new();
    let span = |gens: &[u32]| -> Vec<u32> {
        let mut s = vec![0u32];
        for &g in gens {
            let add: Vec<u32> = s.iter().map(|&v| v ^ g).collect();
            s.extend(add);
        }
        s.sort_unstable();
        s.dedup();
        s
    };
    // Extend isotropic generator lists greedily in increasing order; every
    // Lagrangian subspace has a basis reachable this way.
    fn rec(
        k: usize,
        gens: &mut Vec<u32>,
        start: usize,
        nonid: &[u32],
        span: &dyn Fn(&[u32]) -> Vec<u32>,
        found: &mut BTreeSet<Vec<u32>>,
    ) {
        if gens.len() == k {
            let s = span(gens);
            found.insert(s.into_iter().filter(|&v| v != 0).collect());
            return;
        }
        let current = span(gens);
        for (i, &v) in nonid.iter().enumerate().skip(start) {
            if current.contains(&v) || gens.iter().any(|&g| omega(k, g, v) == 1) {
                continue;
            }
            gens.push(v);
            rec(k, gens, i + 1, nonid, span, found);
            gens.pop();
        }
    }
    rec(k, &mut Vec::new(), 0, &nonid, &span, &mut found);
    found.into_iter().collect()
}

/// Clifford mapping the Lagrangian subspace `class` onto the Z-strings, with the
/// chosen generators sent to `+Z_j`.
fn diagonalizing_clifford(k: usize, class: &[u32]) -> CliffordTableau {
    // Independent generators: greedily take elements not in the current span.
    let mut gens: Vec<u32> = Vec::with_capacity(k);
    let mut span = vec![0u32];
    for &v in class {
        if !span.contains(&v) {
            gens.push(v);
            let add: Vec<u32> = span.iter().map(|&s| s ^ v).collect();
            span.extend(add);
        }
        if gens.len() == k {
            break;
        }
    }
    // Destabilizers h_j: anticommute with g_j only, commute with earlier h's.
    let mut destab: Vec<u32> = Vec::with_capacity(k);
    for j in 0..k {
        let h = (1..(1u32 << (2 * k)))
            .find(|&h| {
                (0..k).all(|i| omega(k, gens[i], h) == u32::from(i == j))
                    && destab.iter().all(|&d| omega(k, d, h) == 0)
            })
            .expect("destabilizer exists");
        destab.push(h);
    }
    let v = CliffordTableau {
        k,
        images: destab.iter().chain(gens.iter()).map(|&w| vec_to_pauli(k, w)).collect(),
    };
    debug_assert!(v.validate().is_ok());
    v.inverse()
}

fn build_mub(k: usize) -> Result<Vec<CliffordTableau>> {
    if k == 0 || k > 3 {
        return Err(Error::Unsupported(format!("MUB construction only for 1 <= k <= 3, got {k}")));
    }
    let lag = lagrangian_subspaces(k);
    let total = (1usize << (2 * k)) - 1;
    let masks: Vec<u64> = lag.iter().map(|s| s.iter().fold(0u64, |m, &v| m | (1u64 << v))).collect();
    let full: u64 = (1..=total).fold(0u64, |m, v| m | (1u64 << v));
    // Exact cover of the non-identity Paulis by disjoint Lagrangian subspaces,
    // always extending at the smallest uncovered Pauli.
    fn search(masks: &[u64], covered: u64, full: u64, chosen: &mut Vec<usize>) -> bool {
        if covered == full {
            return true;
        }
        let first = (full & !covered).trailing_zeros();
        for (i, &m) in masks.iter().enumerate() {
            if (m >> first) & 1 == 1 && m & covered == 0 {
                chosen.push(i);
                if search(masks, covered | m, full, chosen) {
                    return true;
                }
                chosen.pop();
            }
        }
        false
    }
    // Seed the cover with the computational-basis class so member 0 is the identity.
    let z_class = lag
        .iter()
        .position(|s| s.iter().all(|&v| v & ((1u32 << k) - 1) == 0))
        .expect("Z-strings form a Lagrangian subspace");
    let mut chosen = vec![z_class];
    if !search(&masks, masks[z_class], full, &mut chosen) {
        return Err(Error::Internal(format!("no partition into mutually unbiased classes for k={k}")));
    }
    Ok(chosen.into_iter().map(|i| diagonalizing_clifford(k, &lag[i])).collect())
}

/// `2^k + 1` Cliffords whose measurement bases are mutually unbiased.
pub fn build_mub_ensemble(k: usize) -> Result<Vec<CliffordTableau>> {
    static CACHE: [OnceLock<Vec<CliffordTableau>>; 3] = [OnceLock::new(), OnceLock::new(), OnceLock::new()];
    if k == 0 || k > 3 {
        return Err(Error::Unsupported(format!("MUB construction only for 1 <= k <= 3, got {k}")));
    }
    if let Some(v) = CACHE[k - 1].get() {
        return Ok(v.clone());
    }
    let v = build_mub(k)?;
    Ok(CACHE[k - 1].get_or_init(|| v).clone())
}

/// One Clifford per sign-free stabilizer basis: `Π_{i=0}^{k−1}(2^{k−i}+1)` members.
pub fn build_stabilizer_basis_ensemble(k: usize) -> Result<Vec<CliffordTableau>> {
    if k == 0 || k > 2 {
        return Err(Error::Unsupported(format!("stabilizer-basis ensemble only for k in {{1,2}}, got {k}")));
    }
    Ok(lagrangian_subspaces(k).iter().map(|c| diagonalizing_clifford(k, c)).collect())
}

/// Haar-random `2^k × 2^k` unitary from the QR decomposition of a complex Gaussian matrix.
pub fn sample_haar_matrix<R: Rng + ?Sized>(d: usize, rng: &mut R) -> DMatrix<C64> {
    let g = DMatrix::<C64>::from_fn(d, d, |_, _| {
        let re: f64 = rng.sample(StandardNormal);
        let im: f64 = rng.sample(StandardNormal);
        C64::new(re, im) * std::f64::consts::FRAC_1_SQRT_2
    });
    let qr = g.qr();
    let mut q = qr.q();
    let r = qr.r();
    for j in 0..d {
        let rjj = r[(j, j)];
        let ph = if rjj.norm() > 0.0 { rjj / rjj.norm() } else { C64::new(1.0, 0.0) };
        for i in 0..d {
            q[(i, j)] *= ph;
        }
    }
    q
}

pub fn sample_dense_haar<R: Rng + ?Sized>(k: usize, rng: &mut R) -> BlockUnitary {
    assert!((1..=3).contains(&k), "dense Haar blocks only for k <= 3");
    BlockUnitary::Dense(sample_haar_matrix(1 << k, rng))
}

#[derive(Clone, PartialEq, Debug)]
pub enum BlockUnitary {
    Tableau(CliffordTableau),
    Dense(DMatrix<C64>),
}

impl BlockUnitary {
    pub fn k(&self) -> usize {
        match self {
            BlockUnitary::Tableau(t) => t.k(),
            BlockUnitary::Dense(m) => m.nrows().trailing_zeros() as usize,
        }
    }

    pub fn matrix(&self) -> DMatrix<C64> {
        match self {
            BlockUnitary::Tableau(t) => t.to_dense(),
            BlockUnitary::Dense(m) => m.clone(),
        }
    }

    pub fn as_tableau(&self) -> Option<&CliffordTableau> {
        match self {
            BlockUnitary::Tableau(t) => Some(t),
            BlockUnitary::Dense(_) => None,
        }
    }

    pub fn unitarity_residual(&self) -> f64 {
        let m = self.matrix();
        let d = m.nrows();
        let prod = m.adjoint() * &m;
        let mut worst: f64 = 0.0;
        for i in 0..d {
            for j in 0..d {
                let target = if i == j { 1.0 } else { 0.0 };
                worst = worst.max((prod[(i, j)] - C64::new(target, 0.0)).norm());
            }
        }
        worst
    }
}

/// `U = ⊗_i u_i` over the blocks of a layout.
#[derive(Clone, PartialEq, Debug)]
pub struct LayeredBlockUnitary {
    layout: BlockLayout,
    blocks: Vec<BlockUnitary>,
}

impl LayeredBlockUnitary {
    pub fn new(layout: BlockLayout, blocks: Vec<BlockUnitary>) -> Result<Self> {
        if blocks.len() != layout.num_blocks() {
            return Err(Error::Validation(format!(
                "{} blocks given for a layout with {}",
                blocks.len(),
                layout.num_blocks()
            )));
        }
        if blocks.iter().any(|b| b.k() != layout.k()) {
            return Err(Error::Validation("block unitary size does not match k".into()));
        }
        Ok(Self { layout, blocks })
    }

    pub fn identity(layout: BlockLayout) -> Self {
        let blocks = (0..layout.num_blocks())
            .map(|_| BlockUnitary::Tableau(CliffordTableau::identity(layout.k())))
            .collect();
        Self { layout, blocks }
    }

    pub fn layout(&self) -> &BlockLayout {
        &self.layout
    }

    pub fn blocks(&self) -> &[BlockUnitary] {
        &self.blocks
    }

    pub fn is_clifford(&self) -> bool {
        self.blocks.iter().all(|b| matches!(b, BlockUnitary::Tableau(_)))
    }

    /// `U P U†` for all-tableau unitaries.
    pub fn conjugate(&self, p: &PauliString) -> Option<PauliString> {
        let k = self.layout.k();
        let n = self.layout.n();
        let mut x = 0u128;
        let mut z = 0u128;
        let mut phase = p.phase() as u32;
        for (b, blk) in self.blocks.iter().enumerate() {
            let t = blk.as_tableau()?;
            let start = self.layout.block_start(b);
            let local = p.restrict(start, k);
            if local.is_identity() {
                continue;
            }
            let img = t.conjugate(&local);
            x |= img.x_mask() << start;
            z |= img.z_mask() << start;
            phase += img.phase() as u32;
        }
        Some(PauliString::from_parts(n, x, z, (phase % 4) as u8))
    }

    pub fn indicator(&self, p: &PauliString) -> Option<bool> {
        self.conjugate(p).map(|q| q.is_z_type())
    }

    /// `Tr(U P U† |b⟩⟨b|)` ∈ {−1, 0, +1} for Hermitian `P`.
    pub fn snapshot_weight(&self, p: &PauliString, b: u128) -> Option<f64> {
        let q = self.conjugate(p)?;
        Some(snapshot_weight_of_image(&q, b))
    }
}

/// Weight `sign · (−1)^{|z ∧ b|}` of an already conjugated string, 0 if it has an x part.
#[inline]
pub fn snapshot_weight_of_image(q: &PauliString, b: u128) -> f64 {
    if !q.is_z_type() {
        return 0.0;
    }
    let s = q.sign();
    if (q.z_mask() & b).count_ones() % 2 == 1 {
        -s
    } else {
        s
    }
}

#[derive(Clone, Copy, PartialEq, Eq, Hash, Debug, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EnsembleKind {
    CliffordFull,
    Mub,
    StabilizerBasis,
    HaarDense,
    /// Every block is the identity; used as a control.
    Identity,
}

impl EnsembleKind {
    pub fn is_clifford(&self) -> bool {
        !matches!(self, EnsembleKind::HaarDense)
    }

    pub fn name(&self) -> &'static str {
        match self {
            EnsembleKind::CliffordFull => "clifford_full",
            EnsembleKind::Mub => "mub",
            EnsembleKind::StabilizerBasis => "stabilizer_basis",
            EnsembleKind::HaarDense => "haar_dense",
            EnsembleKind::Identity => "identity",
        }
    }
}

impl std::str::FromStr for EnsembleKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "clifford_full" | "clifford" => Ok(EnsembleKind::CliffordFull),
            "mub" => Ok(EnsembleKind::Mub),
            "stabilizer_basis" => Ok(EnsembleKind::StabilizerBasis),
            "haar_dense" | "haar" => Ok(EnsembleKind::HaarDense),
            "identity" => Ok(EnsembleKind::Identity),
            other => Err(Error::Parse(format!("unknown ensemble {other:?}"))),
        }
    }
}

#[derive(Clone, Copy, PartialEq, Eq, Debug, Serialize, Deserialize)]
pub struct EnsembleSpec {
    pub kind: EnsembleKind,
    pub layout: BlockLayout,
}

/// A sampler for block-product unitaries; finite ensembles keep their member list.
#[derive(Clone, Debug)]
pub struct Ensemble {
    spec: EnsembleSpec,
    members: Vec<CliffordTableau>,
}

impl Ensemble {
    pub fn new(spec: EnsembleSpec) -> Result<Self> {
        let k = spec.layout.k();
        let members = match spec.kind {
            EnsembleKind::Mub => build_mub_ensemble(k)?,
            EnsembleKind::StabilizerBasis => build_stabilizer_basis_ensemble(k)?,
            EnsembleKind::HaarDense => {
                if k > 3 {
                    return Err(Error::Unsupported("dense Haar blocks only for k <= 3".into()));
                }
                Vec::new()
            }
            EnsembleKind::CliffordFull => {
                if k > MAX_BLOCK_QUBITS {
                    return Err(Error::Unsupported(format!("Clifford blocks only for k <= {MAX_BLOCK_QUBITS}")));
                }
                Vec::new()
            }
            EnsembleKind::Identity => Vec::new(),
        };
        Ok(Self { spec, members })
    }

    pub fn from_parts(kind: EnsembleKind, layout: BlockLayout) -> Result<Self> {
        Self::new(EnsembleSpec { kind, layout })
    }

    pub fn spec(&self) -> &EnsembleSpec {
        &self.spec
    }
    pub fn kind(&self) -> EnsembleKind {
        self.spec.kind
    }
    pub fn layout(&self) -> &BlockLayout {
        &self.spec.layout
    }

    /// Members of a finite ensemble (MUB or stabilizer basis).
    pub fn members(&self) -> &[CliffordTableau] {
        &self.members
    }

    pub fn sample_block<R: Rng + ?Sized>(&self, rng: &mut R) -> BlockUnitary {
        let k = self.spec.layout.k();
        match self.spec.kind {
            EnsembleKind::CliffordFull => BlockUnitary::Tableau(sample_clifford(k, rng)),
            EnsembleKind::Mub | EnsembleKind::StabilizerBasis => {
                BlockUnitary::Tableau(self.members[rng.random_range(0..self.members.len())].clone())
            }
            EnsembleKind::HaarDense => sample_dense_haar(k, rng),
            EnsembleKind::Identity => BlockUnitary::Tableau(CliffordTableau::identity(k)),
        }
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> LayeredBlockUnitary {
        let blocks = (0..self.spec.layout.num_blocks()).map(|_| self.sample_block(rng)).collect();
        LayeredBlockUnitary { layout: self.spec.layout, blocks }
    }
}
