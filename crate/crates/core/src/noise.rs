//! Pauli noise: channels, trajectory sampling, noisy channel eigenvalues,
//! calibration of amplification factors and mitigated estimation.
//!
//! Layered noise (`model2`) is simulated with a random decomposition of each
//! sampled unitary: intermediate prefixes `V_l = U_l⋯U_1` are independent
//! uniform block Cliffords and the last prefix is the sampled `U`.

use std::collections::BTreeMap;

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::clifford::{sample_clifford, BlockUnitary, Ensemble, EnsembleKind, LayeredBlockUnitary};
use crate::error::{Error, Result};
use crate::pauli::{BlockLayout, ObservableSum, PauliString};
use crate::shadow::{finalize, pauli_record_value, sigma_old_value, Estimate, EstimatorOptions, ShadowDataset};
use crate::state::StateVector;
use crate::stats;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ChannelScope {
    /// The same single-qubit channel acts independently on every qubit.
    PerQubit,
    /// The same k-qubit channel acts independently on every block.
    PerBlock,
    /// One n-qubit channel.
    Global,
}

/// Pauli error probabilities; the identity carries the remaining mass.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PauliChannelSpec {
    pub scope: ChannelScope,
    pub probs: BTreeMap<String, f64>,
}

/// Independent error source acting on a set of blocks.
#[derive(Clone, Debug)]
struct ErrorGroup {
    terms: Vec<(PauliString, f64)>,
    blocks: u64,
}

impl ErrorGroup {
    fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> &PauliString {
        let u: f64 = rng.random();
        let mut acc = 0.0;
        for (p, w) in &self.terms {
            acc += w;
            if u < acc {
                return p;
            }
        }
        &self.terms.last().expect("identity term always present").0
    }

    /// Distribution of `E·E'` for two independent draws.
    fn convolve(&self, other: &Self) -> Self {
        let mut acc: BTreeMap<(u128, u128), f64> = BTreeMap::new();
        let n = self.terms[0].0.n();
        for (a, pa) in &self.terms {
            for (b, pb) in &other.terms {
                *acc.entry((a.x_mask() ^ b.x_mask(), a.z_mask() ^ b.z_mask())).or_default() += pa * pb;
            }
        }
        let terms = acc.into_iter().map(|((x, z), p)| (PauliString::from_parts(n, x, z, 0), p)).collect();
        Self { terms, blocks: self.blocks | other.blocks }
    }
}

impl PauliChannelSpec {
    pub fn identity() -> Self {
        Self { scope: ChannelScope::PerQubit, probs: BTreeMap::new() }
    }

    /// Single-qubit depolarizing noise with total error rate `p` on every qubit.
    pub fn depolarizing(p: f64) -> Self {
        let probs = ["X", "Y", "Z"].iter().map(|s| (s.to_string(), p / 3.0)).collect();
        Self { scope: ChannelScope::PerQubit, probs }
    }

    /// k-qubit depolarizing noise with total rate `p` spread over the `4^k − 1` errors of each block.
    pub fn block_depolarizing(k: usize, p: f64) -> Self {
        let d2 = 1usize << (2 * k);
        let probs = (1..d2)
            .map(|i| (PauliString::from_index(k, i).to_string(), p / (d2 - 1) as f64))
            .collect();
        Self { scope: ChannelScope::PerBlock, probs }
    }

    fn width(&self, layout: &BlockLayout) -> usize {
        match self.scope {
            ChannelScope::PerQubit => 1,
            ChannelScope::PerBlock => layout.k(),
            ChannelScope::Global => layout.n(),
        }
    }

    fn local_terms(&self, layout: &BlockLayout) -> Result<Vec<(PauliString, f64)>> {
        let w = self.width(layout);
        let mut acc: BTreeMap<(u128, u128), f64> = BTreeMap::new();
        let mut total = 0.0;
        for (key, &p) in &self.probs {
            let e: PauliString = key.parse()?;
            if e.n() != w {
                return Err(Error::Validation(format!("error {key:?} should act on {w} qubits")));
            }
            if e.phase() != 0 {
                return Err(Error::Validation(format!("error {key:?} carries a phase")));
            }
            if !(p >= 0.0 && p.is_finite()) {
                return Err(Error::Validation(format!("probability of {key:?} is {p}")));
            }
            total += p;
            *acc.entry((e.x_mask(), e.z_mask())).or_default() += p;
        }
        if total > 1.0 + 1e-12 {
            return Err(Error::Validation(format!("error probabilities sum to {total}")));
        }
        *acc.entry((0, 0)).or_default() += (1.0 - total).max(0.0);
        Ok(acc.into_iter().map(|((x, z), p)| (PauliString::from_parts(w, x, z, 0), p)).collect())
    }

    pub fn validate(&self, layout: &BlockLayout) -> Result<()> {
        self.local_terms(layout).map(|_| ())
    }

    /// Independent groups used for sampling (finest granularity).
    fn sampling_groups(&self, layout: &BlockLayout) -> Result<Vec<ErrorGroup>> {
        let local = self.local_terms(layout)?;
        let n = layout.n();
        let w = self.width(layout);
        let embed = |start: usize| -> Vec<(PauliString, f64)> {
            local
                .iter()
                .map(|(e, p)| (PauliString::from_parts(n, e.x_mask() << start, e.z_mask() << start, 0), *p))
                .collect()
        };
        Ok(match self.scope {
            ChannelScope::Global => vec![ErrorGroup { terms: embed(0), blocks: all_blocks(layout) }],
            _ => (0..n / w)
                .map(|i| ErrorGroup { terms: embed(i * w), blocks: 1u64 << (i * w / layout.k()) })
                .collect(),
        })
    }

    /// Groups aligned to blocks: per-qubit sources are merged within each block.
    fn block_groups(&self, layout: &BlockLayout) -> Result<Vec<ErrorGroup>> {
        let groups = self.sampling_groups(layout)?;
        if self.scope != ChannelScope::PerQubit || layout.k() == 1 {
            return Ok(groups);
        }
        Ok(groups
            .chunks(layout.k())
            .map(|c| c[1..].iter().fold(c[0].clone(), |acc, g| acc.convolve(g)))
            .collect())
    }

    /// Eigenvalue `λ_P` of the channel on `P`.
    pub fn lambda(&self, p: &PauliString, layout: &BlockLayout) -> Result<f64> {
        if p.n() != layout.n() {
            return Err(Error::Dimension(format!("Pauli on {} qubits, layout on {}", p.n(), layout.n())));
        }
        let groups = self.sampling_groups(layout)?;
        Ok(groups
            .iter()
            .map(|g| g.terms.iter().map(|(e, w)| if e.commutes_with(p) { *w } else { -*w }).sum::<f64>())
            .product())
    }
}

fn all_blocks(layout: &BlockLayout) -> u64 {
    if layout.num_blocks() == 64 {
        u64::MAX
    } else {
        (1u64 << layout.num_blocks()) - 1
    }
}

/// `λ_P = Σ_E p_E (−1)^{[E,P] ≠ 0}`.
pub fn lambda_coeff(channel: &PauliChannelSpec, p: &PauliString, layout: &BlockLayout) -> Result<f64> {
    channel.lambda(p, layout)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NoiseKind {
    /// One channel after the whole unitary.
    Model1,
    /// One channel after every layer of the unitary.
    Model2,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NoiseModel {
    pub kind: NoiseKind,
    pub layers: Vec<PauliChannelSpec>,
}

impl NoiseModel {
    pub fn model1(channel: PauliChannelSpec) -> Self {
        Self { kind: NoiseKind::Model1, layers: vec![channel] }
    }

    pub fn model2(layers: Vec<PauliChannelSpec>) -> Self {
        Self { kind: NoiseKind::Model2, layers }
    }

    pub fn noiseless() -> Self {
        Self::model1(PauliChannelSpec::identity())
    }

    pub fn layer_count(&self) -> usize {
        self.layers.len()
    }

    pub fn tag(&self) -> String {
        match self.kind {
            NoiseKind::Model1 => "model1".into(),
            NoiseKind::Model2 => format!("model2-{}layers", self.layers.len()),
        }
    }

    pub fn validate(&self, layout: &BlockLayout) -> Result<()> {
        match (self.kind, self.layers.len()) {
            (NoiseKind::Model1, 1) => {}
            (NoiseKind::Model1, l) => return Err(Error::Validation(format!("model1 takes one channel, got {l}"))),
            (NoiseKind::Model2, 0) => return Err(Error::Validation("model2 needs at least one layer".into())),
            _ => {}
        }
        self.layers.iter().try_for_each(|c| c.validate(layout))
    }

    pub fn from_json(text: &str) -> Result<Self> {
        Ok(serde_json::from_str(text)?)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("noise model serializes")
    }

    /// `N` measurement outcomes of one noisy run of `U` on `ψ`. Every error is
    /// pushed through the remaining layers to the end, where only its bit-flip
    /// part changes the outcome.
    pub fn sample_shots<R: Rng + ?Sized>(
        &self,
        psi: &StateVector,
        u: &LayeredBlockUnitary,
        count: usize,
        rng: &mut R,
    ) -> Result<Vec<u128>> {
        let layout = *u.layout();
        self.validate(&layout)?;
        let layers = self
            .layers
            .iter()
            .map(|c| c.sampling_groups(&layout))
            .collect::<Result<Vec<_>>>()?;
        // Propagators from after layer l to the end; `None` means identity.
        let mut tails: Vec<Option<LayeredBlockUnitary>> = Vec::with_capacity(layers.len());
        if layers.len() > 1 {
            if !u.is_clifford() {
                return Err(Error::Unsupported("layered noise needs a Clifford unitary".into()));
            }
            for _ in 0..layers.len() - 1 {
                let blocks = u
                    .blocks()
                    .iter()
                    .map(|b| {
                        let v = sample_clifford(layout.k(), rng);
                        BlockUnitary::Tableau(b.as_tableau().expect("checked").compose(&v.inverse()))
                    })
                    .collect();
                tails.push(Some(LayeredBlockUnitary::new(layout, blocks)?));
            }
        }
        tails.push(None);
        let clean = psi.apply_block_unitary(u)?.sample_bitstrings(count, rng);
        Ok(clean
            .into_iter()
            .map(|b| {
                let mut flip = 0u128;
                for (groups, tail) in layers.iter().zip(&tails) {
                    for g in groups {
                        let e = g.sample(rng);
                        if e.is_identity() {
                            continue;
                        }
                        flip ^= match tail {
                            None => e.x_mask(),
                            Some(w) => w.conjugate(e).expect("Clifford tail").x_mask(),
                        };
                    }
                }
                b ^ flip
            })
            .collect())
    }
}

/// One noisy outcome of `U` on `ψ`.
pub fn simulate_noisy_trajectory<R: Rng + ?Sized>(
    psi: &StateVector,
    u: &LayeredBlockUnitary,
    noise: &NoiseModel,
    rng: &mut R,
) -> Result<u128> {
    Ok(noise.sample_shots(psi, u, 1, rng)?[0])
}

/// `E_u[s(E, uPu†) 1{uPu† ∈ ±Z}]` for one block, where `s` is the commutation sign.
fn block_z_factor(ens: &Ensemble, p: &PauliString, e: &PauliString) -> Result<f64> {
    if p.is_identity() {
        return Ok(1.0);
    }
    let d = (1usize << p.n()) as f64;
    let sign = |q: &PauliString| if e.commutes_with(q) { 1.0 } else { -1.0 };
    match ens.kind() {
        EnsembleKind::CliffordFull => {
            let h = if e.x_mask() == 0 { 1.0 } else { -1.0 / (d - 1.0) };
            Ok(h / (d + 1.0))
        }
        EnsembleKind::Mub | EnsembleKind::StabilizerBasis => {
            let m = ens.members();
            let s: f64 = m
                .iter()
                .map(|t| {
                    let q = t.conjugate(p);
                    if q.is_z_type() {
                        sign(&q)
                    } else {
                        0.0
                    }
                })
                .sum();
            Ok(s / m.len() as f64)
        }
        EnsembleKind::Identity => Ok(if p.is_z_type() { sign(p) } else { 0.0 }),
        EnsembleKind::HaarDense => Err(Error::Unsupported("noisy eigenvalues need a Clifford ensemble".into())),
    }
}

/// `E_V[s(E, VPV†)]` over uniform block Cliffords.
fn block_any_factor(p: &PauliString, e: &PauliString) -> f64 {
    if p.is_identity() || e.is_identity() {
        1.0
    } else {
        -1.0 / ((1usize << (2 * p.n())) as f64 - 1.0)
    }
}

fn layer_average<F>(groups: &[ErrorGroup], p: &PauliString, layout: &BlockLayout, f: F) -> Result<f64>
where
    F: Fn(&PauliString, &PauliString) -> Result<f64>,
{
    let k = layout.k();
    let mut total = 1.0;
    let mut covered = 0u64;
    for g in groups {
        let mut s = 0.0;
        for (e, w) in &g.terms {
            let mut v = *w;
            for b in 0..layout.num_blocks() {
                if g.blocks >> b & 1 == 1 {
                    let start = layout.block_start(b);
                    v *= f(&p.restrict(start, k), &e.restrict(start, k))?;
                }
            }
            s += v;
        }
        total *= s;
        covered |= g.blocks;
    }
    for b in 0..layout.num_blocks() {
        if covered >> b & 1 == 0 {
            total *= f(&p.restrict(layout.block_start(b), k), &PauliString::identity(k))?;
        }
    }
    Ok(total)
}

fn noisy_moment(p: &PauliString, ens: &Ensemble, noise: &NoiseModel, squared: bool) -> Result<f64> {
    let layout = *ens.layout();
    if p.n() != layout.n() {
        return Err(Error::Dimension(format!("Pauli on {} qubits, layout on {}", p.n(), layout.n())));
    }
    noise.validate(&layout)?;
    if !ens.kind().is_clifford() {
        return Err(Error::Unsupported("noisy eigenvalues need a Clifford ensemble".into()));
    }
    let p = p.unsigned();
    let last = noise.layers.len() - 1;
    let mut total = 1.0;
    for (l, ch) in noise.layers.iter().enumerate() {
        let mut groups = ch.block_groups(&layout)?;
        if squared {
            groups = groups.iter().map(|g| g.convolve(g)).collect();
        }
        total *= if l == last {
            layer_average(&groups, &p, &layout, |pb, eb| block_z_factor(ens, pb, eb))?
        } else {
            layer_average(&groups, &p, &layout, |pb, eb| Ok(block_any_factor(pb, eb)))?
        };
    }
    Ok(total)
}

/// `m̃_P = E_U[λ_{U,P} 1{UPU† ∈ ±Z}]`.
pub fn noisy_m(p: &PauliString, ens: &Ensemble, noise: &NoiseModel) -> Result<f64> {
    noisy_moment(p, ens, noise, false)
}

/// `m̃_{P,2} = E_U[λ²_{U,P} 1{UPU† ∈ ±Z}]`.
pub fn noisy_m2(p: &PauliString, ens: &Ensemble, noise: &NoiseModel) -> Result<f64> {
    noisy_moment(p, ens, noise, true)
}

/// Noiseless `m_P` of a Clifford ensemble, from the same per-block averages.
pub fn ensemble_m(p: &PauliString, ens: &Ensemble) -> Result<f64> {
    noisy_m(p, ens, &NoiseModel::noiseless())
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Channel2Comparison {
    pub m_tilde_1: f64,
    pub m_tilde_2: f64,
    /// `1 / m̃₂`.
    pub norm_sq_2: f64,
    /// `m_P / m̃₁²`.
    pub norm_sq_1: f64,
}

impl Channel2Comparison {
    pub fn holds(&self) -> bool {
        self.norm_sq_2 <= self.norm_sq_1 * (1.0 + 1e-12)
    }
}

pub fn channel2_eigenvalue(p: &PauliString, noise: &NoiseModel, ens: &Ensemble) -> Result<Channel2Comparison> {
    let m = ensemble_m(p, ens)?;
    let m1 = noisy_m(p, ens, noise)?;
    let m2 = noisy_m2(p, ens, noise)?;
    Ok(Channel2Comparison { m_tilde_1: m1, m_tilde_2: m2, norm_sq_2: 1.0 / m2, norm_sq_1: m / (m1 * m1) })
}

/// Variance of the mitigated multi-shot estimator `m̃⁻¹·(shot mean)`.
pub fn variance_noisy_multishot(
    p: &PauliString,
    noise: &NoiseModel,
    ens: &Ensemble,
    tr_p: f64,
    n_u: usize,
    n_s: usize,
) -> Result<f64> {
    let m = ensemble_m(p, ens)?;
    let m1 = noisy_m(p, ens, noise)?;
    let m2 = noisy_m2(p, ens, noise)?;
    let ns = n_s as f64;
    let second = (m / ns + (ns - 1.0) / ns * tr_p * tr_p * m2) / (m1 * m1);
    Ok((second - tr_p * tr_p) / n_u as f64)
}

/// Variance of the CRM estimator with a mitigated noisy `ρ̂`. `n_sigma = None`
/// uses the noiseless classical `σ̂`; otherwise `σ` is measured under the same
/// unitaries and noise with `n_sigma` shots and mitigated the same way.
pub fn variance_noisy_crm(
    p: &PauliString,
    noise: &NoiseModel,
    ens: &Ensemble,
    tr_rho: f64,
    tr_sigma: f64,
    n_u: usize,
    n_rho: usize,
    n_sigma: Option<usize>,
) -> Result<f64> {
    let m = ensemble_m(p, ens)?;
    let m1 = noisy_m(p, ens, noise)?;
    let m2 = noisy_m2(p, ens, noise)?;
    let nr = n_rho as f64;
    let (r, s) = (tr_rho, tr_sigma);
    let second = match n_sigma {
        None => (m / nr + m2 * r * r * (1.0 - 1.0 / nr)) / (m1 * m1) - 2.0 * r * s + s * s / m,
        Some(ns) => {
            let ns = ns as f64;
            (m * (1.0 / nr + 1.0 / ns) + m2 * (r * r * (1.0 - 1.0 / nr) + s * s * (1.0 - 1.0 / ns) - 2.0 * r * s))
                / (m1 * m1)
        }
    };
    Ok((second - (r - s) * (r - s)) / n_u as f64)
}

/// Block-support label, one character per block (`1` = block in the support).
pub fn label_string(mask: u64, blocks: usize) -> String {
    (0..blocks).map(|b| if mask >> b & 1 == 1 { '1' } else { '0' }).collect()
}

pub fn parse_label(s: &str) -> Result<u64> {
    if s.is_empty() || s.len() > 64 {
        return Err(Error::Parse(format!("bad label {s:?}")));
    }
    s.chars().enumerate().try_fold(0u64, |acc, (i, c)| match c {
        '0' => Ok(acc),
        '1' => Ok(acc | 1 << i),
        _ => Err(Error::Parse(format!("bad label {s:?}"))),
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LabelAlpha {
    pub alpha: f64,
    pub stderr: f64,
    pub ci: [f64; 2],
    #[serde(default)]
    pub ill_conditioned: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CalibrationReport {
    pub factorized: bool,
    pub blocks: usize,
    pub labels: BTreeMap<String, LabelAlpha>,
}

impl CalibrationReport {
    /// Amplification for a block-support mask; factorized reports multiply block factors.
    pub fn alpha(&self, mask: u64) -> Result<f64> {
        if mask == 0 {
            return Ok(1.0);
        }
        if let Some(a) = self.labels.get(&label_string(mask, self.blocks)) {
            return Ok(a.alpha);
        }
        if self.factorized {
            let mut a = 1.0;
            for b in 0..self.blocks {
                if mask >> b & 1 == 1 {
                    let key = label_string(1 << b, self.blocks);
                    a *= self
                        .labels
                        .get(&key)
                        .ok_or_else(|| Error::Validation(format!("calibration has no label {key}")))?
                        .alpha;
                }
            }
            return Ok(a);
        }
        Err(Error::Validation(format!("calibration has no label {}", label_string(mask, self.blocks))))
    }

    pub fn from_json(text: &str) -> Result<Self> {
        Ok(serde_json::from_str(text)?)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }
}

#[derive(Clone, Debug)]
pub struct CalibrationOptions {
    /// One factor per block from single-block probes; otherwise one factor per requested label.
    pub factorized: bool,
    /// Labels to calibrate directly (ignored when factorized).
    pub labels: Vec<u64>,
    pub resamples: usize,
    pub seed: u64,
    /// Labels whose measured probe value is below this are flagged.
    pub threshold: f64,
}

impl Default for CalibrationOptions {
    fn default() -> Self {
        Self { factorized: true, labels: Vec::new(), resamples: 1000, seed: 0, threshold: 0.05 }
    }
}

/// Z-string probes with exactly the given block support.
fn probes_for(mask: u64, layout: &BlockLayout, factorized: bool) -> Vec<PauliString> {
    let n = layout.n();
    let mut full = 0u128;
    for b in 0..layout.num_blocks() {
        if mask >> b & 1 == 1 {
            full |= layout.block_mask(b);
        }
    }
    if factorized && mask.count_ones() == 1 {
        let b = mask.trailing_zeros() as usize;
        let start = layout.block_start(b);
        (1..layout.block_dim() as u128)
            .map(|z| PauliString::from_parts(n, 0, z << start, 0))
            .collect()
    } else {
        vec![PauliString::from_parts(n, 0, full, 0)]
    }
}

/// Ratio `Σ Tr(σQ)_exact / Σ Tr(σQ)_measured` per label, with a bootstrap over records.
pub fn calibrate_alpha(ds: &ShadowDataset, sigma: &StateVector, opts: &CalibrationOptions) -> Result<CalibrationReport> {
    if sigma.n() != ds.meta.n {
        return Err(Error::Dimension("calibration state does not match the dataset".into()));
    }
    let layout = ds.layout();
    let nb = layout.num_blocks();
    let masks: Vec<u64> = if opts.factorized {
        (0..nb).map(|b| 1u64 << b).collect()
    } else {
        if opts.labels.is_empty() {
            return Err(Error::Validation("no labels to calibrate".into()));
        }
        opts.labels.clone()
    };
    let mut labels = BTreeMap::new();
    for &mask in &masks {
        if mask == 0 || (nb < 64 && mask >> nb != 0) {
            return Err(Error::Validation(format!("label {mask:#b} outside the layout")));
        }
        let probes = probes_for(mask, &layout, opts.factorized);
        let exact: f64 = probes.iter().map(|q| sigma.expectation_pauli(q)).sum();
        let per_record: Vec<f64> = ds
            .records
            .par_iter()
            .map(|r| probes.iter().map(|q| pauli_record_value(r, q)).sum())
            .collect();
        let measured = stats::mean(&per_record);
        let ratio = |v: &[f64]| exact / stats::mean(v);
        let reps = stats::bootstrap_replicates(&per_record, opts.resamples, opts.seed, ratio);
        let finite: Vec<f64> = reps.into_iter().filter(|v| v.is_finite()).collect();
        let ill = measured.abs() < opts.threshold * probes.len() as f64 || exact.abs() < 1e-12;
        let (stderr, ci) = if finite.len() >= 2 {
            (stats::variance(&finite).sqrt(), [stats::percentile(&finite, 0.025), stats::percentile(&finite, 0.975)])
        } else {
            (f64::NAN, [f64::NAN, f64::NAN])
        };
        labels.insert(
            label_string(mask, nb),
            LabelAlpha { alpha: exact / measured, stderr, ci, ill_conditioned: ill },
        );
    }
    Ok(CalibrationReport { factorized: opts.factorized, blocks: nb, labels })
}

/// Replaces amplification factors above 1.5 by 0.8 times their value.
pub fn clamp_alpha(a: f64) -> f64 {
    if a > 1.5 {
        0.8 * a
    } else {
        a
    }
}

/// `Σ_P c_P α̂(label(P)) Tr(Pρ̂)`.
pub fn mitigated_estimate(
    ds: &ShadowDataset,
    o: &ObservableSum,
    report: &CalibrationReport,
    clamp: bool,
    opts: &EstimatorOptions,
) -> Result<Estimate> {
    if o.n() != ds.meta.n {
        return Err(Error::Dimension("observable does not match the dataset".into()));
    }
    let layout = ds.layout();
    if report.blocks != layout.num_blocks() {
        return Err(Error::Validation("calibration report has a different block count".into()));
    }
    let scaled: Vec<(f64, PauliString)> = o
        .terms()
        .iter()
        .map(|&(c, p)| {
            let a = report.alpha(p.block_support(&layout))?;
            Ok((c * if clamp { clamp_alpha(a) } else { a }, p))
        })
        .collect::<Result<_>>()?;
    let vals: Vec<f64> = ds
        .records
        .par_iter()
        .map(|r| stats::sum(scaled.iter().map(|(c, p)| c * pauli_record_value(r, p))))
        .collect();
    Ok(finalize(vals, ds.meta.n_s, opts))
}

/// `Σ_P c_P (α̂(label(P)) Tr(Pρ̂) − Tr(Pσ̂_old) + Tr(Pσ))`: CRM with only the measured part mitigated.
pub fn mitigated_crm_estimate(
    ds: &ShadowDataset,
    sigma: &StateVector,
    o: &ObservableSum,
    report: &CalibrationReport,
    clamp: bool,
    opts: &EstimatorOptions,
) -> Result<Estimate> {
    if o.n() != ds.meta.n || sigma.n() != ds.meta.n {
        return Err(Error::Dimension("observable or bias state does not match the dataset".into()));
    }
    if !ds.meta.ensemble.is_clifford() {
        return Err(Error::Unsupported("the classical σ̂ needs a Clifford ensemble".into()));
    }
    let layout = ds.layout();
    if report.blocks != layout.num_blocks() {
        return Err(Error::Validation("calibration report has a different block count".into()));
    }
    let terms: Vec<(f64, f64, PauliString, f64)> = o
        .terms()
        .iter()
        .map(|&(c, p)| {
            let a = report.alpha(p.block_support(&layout))?;
            Ok((c, if clamp { clamp_alpha(a) } else { a }, p, sigma.expectation_pauli(&p)))
        })
        .collect::<Result<_>>()?;
    let vals: Vec<f64> = ds
        .records
        .par_iter()
        .map(|r| {
            stats::sum(terms.iter().map(|&(c, a, p, t)| {
                let s = sigma_old_value(&r.unitary, &p, t).expect("Clifford record");
                c * (a * pauli_record_value(r, &p) - s + t)
            }))
        })
        .collect();
    Ok(finalize(vals, ds.meta.n_s, opts))
}
