//! Confidence bookkeeping for Pauli targets and greedy derandomized block
//! measurement plans.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::clifford::{BlockUnitary, CliffordTableau, Ensemble, EnsembleKind, LayeredBlockUnitary};
use crate::error::{Error, Result};
use crate::pauli::{BlockLayout, PauliString};

/// `ν = 1 − exp(−ε²/2)`.
pub fn nu(eps: f64) -> f64 {
    -(-eps * eps / 2.0).exp_m1()
}

fn check_targets(targets: &[PauliString], n: usize) -> Result<()> {
    match targets.iter().find(|p| p.n() != n) {
        Some(p) => Err(Error::Dimension(format!("target {p} is not on {n} qubits"))),
        None => Ok(()),
    }
}

/// `M_l`: number of bases that map target `l` into `±Z`.
pub fn coverage_counts(targets: &[PauliString], bases: &[LayeredBlockUnitary]) -> Result<Vec<usize>> {
    targets
        .iter()
        .map(|p| {
            bases.iter().try_fold(0usize, |acc, u| {
                let ind = u.indicator(p).ok_or_else(|| Error::Unsupported("bases must be Clifford".into()))?;
                Ok(acc + ind as usize)
            })
        })
        .collect()
}

/// `Σ_l exp(−ε²/2 · M_l)`.
pub fn conf(targets: &[PauliString], bases: &[LayeredBlockUnitary], eps: f64) -> Result<f64> {
    if let Some(b) = bases.first() {
        check_targets(targets, b.layout().n())?;
    }
    let counts = coverage_counts(targets, bases)?;
    Ok(counts.iter().map(|&m| (-eps * eps / 2.0 * m as f64).exp()).sum())
}

/// `Σ_l (1 − ν (2^k+1)^{−w_k(P_l)})^M` for uniformly random bases.
pub fn expected_conf(targets: &[PauliString], m: usize, layout: &BlockLayout, eps: f64) -> Result<f64> {
    check_targets(targets, layout.n())?;
    let v = nu(eps);
    let d1 = (layout.block_dim() + 1) as f64;
    Ok(targets
        .iter()
        .map(|p| (1.0 - v * d1.powi(-(p.block_weight(layout) as i32))).powi(m as i32))
        .sum())
}

/// Expected confidence with `fixed` bases chosen, the first `partial.len()` blocks of
/// the next basis chosen, and the rest of the `m_total` bases random.
pub fn conditional_expected_conf(
    targets: &[PauliString],
    fixed: &[LayeredBlockUnitary],
    partial: &[CliffordTableau],
    layout: &BlockLayout,
    m_total: usize,
    eps: f64,
    include_future: bool,
) -> Result<f64> {
    check_targets(targets, layout.n())?;
    let nb = layout.num_blocks();
    if partial.len() > nb {
        return Err(Error::Validation(format!("{} blocks assigned, layout has {nb}", partial.len())));
    }
    let current = usize::from(fixed.len() < m_total);
    if fixed.len() > m_total || (current == 0 && !partial.is_empty()) {
        return Err(Error::Validation("more bases assigned than the budget".into()));
    }
    let v = nu(eps);
    let d1 = (layout.block_dim() + 1) as f64;
    let k = layout.k();
    let counts = coverage_counts(targets, fixed)?;
    let remaining = m_total - fixed.len() - current;
    Ok(targets
        .iter()
        .zip(&counts)
        .map(|(p, &c)| {
            let mut val = (-eps * eps / 2.0 * c as f64).exp();
            if current == 1 {
                let mut q = 1.0;
                for b in 0..nb {
                    let local = p.restrict(layout.block_start(b), k);
                    if local.is_identity() {
                        continue;
                    }
                    q *= match partial.get(b) {
                        Some(t) => t.indicator(&local) as u8 as f64,
                        None => 1.0 / d1,
                    };
                }
                val *= 1.0 - v * q;
            }
            if include_future {
                val *= (1.0 - v * d1.powi(-(p.block_weight(layout) as i32))).powi(remaining as i32);
            }
            val
        })
        .sum())
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "mode")]
pub enum Budget {
    /// Exactly `bases` measurement bases.
    Fixed { bases: usize },
    /// Add bases until every target is covered `min_cover` times (or `max_bases` is reached).
    MinCoverage { min_cover: usize, max_bases: usize },
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct DerandConfig {
    pub eps: f64,
    pub candidates: EnsembleKind,
    pub budget: Budget,
    /// Keep the factor for bases not yet chosen (needed for the guarantee with a fixed budget).
    pub include_future_factor: bool,
    pub shots_per_basis: usize,
}

impl DerandConfig {
    pub fn fixed(eps: f64, bases: usize) -> Self {
        Self {
            eps,
            candidates: EnsembleKind::Mub,
            budget: Budget::Fixed { bases },
            include_future_factor: true,
            shots_per_basis: 1,
        }
    }

    pub fn min_coverage(eps: f64, min_cover: usize, max_bases: usize) -> Self {
        Self {
            eps,
            candidates: EnsembleKind::Mub,
            budget: Budget::MinCoverage { min_cover, max_bases },
            include_future_factor: false,
            shots_per_basis: 1,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct MeasurementPlan {
    pub config: DerandConfig,
    pub layout: BlockLayout,
    pub targets: Vec<PauliString>,
    /// Candidate index per block, for every basis.
    pub choices: Vec<Vec<usize>>,
    pub bases: Vec<LayeredBlockUnitary>,
}

impl MeasurementPlan {
    pub fn coverage(&self) -> Vec<usize> {
        coverage_counts(&self.targets, &self.bases).expect("plan bases are Clifford")
    }

    pub fn conf(&self) -> f64 {
        let e = self.config.eps;
        self.coverage().iter().map(|&m| (-e * e / 2.0 * m as f64).exp()).sum()
    }

    pub fn min_coverage(&self) -> usize {
        self.coverage().into_iter().min().unwrap_or(0)
    }
}

/// `(target, M_l)` pairs, recounted from the plan's bases.
pub fn coverage_report(plan: &MeasurementPlan) -> Vec<(PauliString, usize)> {
    plan.targets.iter().copied().zip(plan.coverage()).collect()
}

/// Greedy block-by-block choice of measurement bases; ties go to the lowest candidate index.
pub fn derandomize(targets: &[PauliString], layout: &BlockLayout, config: &DerandConfig) -> Result<MeasurementPlan> {
    if targets.is_empty() {
        return Err(Error::Validation("no targets".into()));
    }
    check_targets(targets, layout.n())?;
    if !(config.eps > 0.0) {
        return Err(Error::Validation("ε must be positive".into()));
    }
    if !matches!(config.candidates, EnsembleKind::Mub | EnsembleKind::StabilizerBasis) {
        return Err(Error::Validation("candidates must be the MUB or stabilizer-basis ensemble".into()));
    }
    let ens = Ensemble::from_parts(config.candidates, *layout)?;
    let cands = ens.members();
    let nb = layout.num_blocks();
    let k = layout.k();
    let v = nu(config.eps);
    let d1 = (layout.block_dim() + 1) as f64;
    let half_eps2 = config.eps * config.eps / 2.0;

    // cover[l][b][c]: candidate c maps block b of target l into ±Z (identity blocks always do).
    let cover: Vec<Vec<Vec<bool>>> = targets
        .iter()
        .map(|p| {
            (0..nb)
                .map(|b| {
                    let local = p.restrict(layout.block_start(b), k);
                    cands.iter().map(|t| local.is_identity() || t.indicator(&local)).collect()
                })
                .collect()
        })
        .collect();
    // Probability factor of a random candidate on block b of target l.
    let rand_factor: Vec<Vec<f64>> = targets
        .iter()
        .map(|p| {
            (0..nb)
                .map(|b| if p.restrict(layout.block_start(b), k).is_identity() { 1.0 } else { 1.0 / d1 })
                .collect()
        })
        .collect();
    let per_basis_random: Vec<f64> = rand_factor.iter().map(|r| r.iter().product()).collect();

    let (limit, min_cover) = match config.budget {
        Budget::Fixed { bases } => (bases, None),
        Budget::MinCoverage { min_cover, max_bases } => (max_bases, Some(min_cover)),
    };
    let mut counts = vec![0usize; targets.len()];
    let mut choices: Vec<Vec<usize>> = Vec::new();
    while choices.len() < limit {
        if let Some(mc) = min_cover {
            if counts.iter().all(|&c| c >= mc) {
                break;
            }
        }
        let m = choices.len();
        let future = match config.budget {
            Budget::Fixed { bases } if config.include_future_factor => bases - m - 1,
            _ => 0,
        };
        let weight: Vec<f64> = targets
            .iter()
            .enumerate()
            .map(|(l, _)| {
                let mut w = (-half_eps2 * counts[l] as f64).exp();
                if config.include_future_factor {
                    w *= (1.0 - v * per_basis_random[l]).powi(future as i32);
                }
                w
            })
            .collect();
        let mut prefix = vec![1.0f64; targets.len()];
        let mut basis = Vec::with_capacity(nb);
        for b in 0..nb {
            // suffix[l] = product of random factors over blocks after b.
            let scores: Vec<f64> = (0..cands.len())
                .into_par_iter()
                .map(|c| {
                    let mut s = 0.0;
                    for l in 0..targets.len() {
                        if prefix[l] == 0.0 || !cover[l][b][c] {
                            s += weight[l];
                            continue;
                        }
                        let suffix: f64 = rand_factor[l][b + 1..].iter().product();
                        s += weight[l] * (1.0 - v * prefix[l] * suffix);
                    }
                    s
                })
                .collect();
            let mut best = 0;
            for (c, &s) in scores.iter().enumerate() {
                if s < scores[best] {
                    best = c;
                }
            }
            for l in 0..targets.len() {
                if !cover[l][b][best] {
                    prefix[l] = 0.0;
                }
            }
            basis.push(best);
        }
        for l in 0..targets.len() {
            if prefix[l] != 0.0 {
                counts[l] += 1;
            }
        }
        choices.push(basis);
    }
    let bases = choices
        .iter()
        .map(|ch| {
            LayeredBlockUnitary::new(*layout, ch.iter().map(|&c| BlockUnitary::Tableau(cands[c].clone())).collect())
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(MeasurementPlan { config: *config, layout: *layout, targets: targets.to_vec(), choices, bases })
}
