//! File formats: datasets, unitaries, measurement plans and target lists.

use std::collections::BTreeMap;

use nalgebra::DMatrix;
use num_complex::Complex64 as C64;
use serde::{Deserialize, Serialize};

use crate::clifford::{BlockUnitary, CliffordTableau, LayeredBlockUnitary};
use crate::derandomize::{DerandConfig, MeasurementPlan};
use crate::error::{Error, Result};
use crate::pauli::{BlockLayout, ObservableSum, PauliString};
use crate::shadow::{DatasetMeta, ShadowDataset, ShadowRecord};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum BlockRepr {
    /// `rows[r]` is the hex-encoded `x | z << k` vector of the image of generator `r`
    /// (`X_1..X_k` then `Z_1..Z_k`); `signs[r]` is true for a negative image.
    Tableau { k: usize, rows: Vec<String>, signs: Vec<bool> },
    /// Row-major `[re, im]` entries.
    Dense { k: usize, matrix: Vec<[f64; 2]> },
}

impl From<&BlockUnitary> for BlockRepr {
    fn from(b: &BlockUnitary) -> Self {
        match b {
            BlockUnitary::Tableau(t) => BlockRepr::Tableau {
                k: t.k(),
                rows: t.symplectic_rows().iter().map(|r| format!("{r:x}")).collect(),
                signs: t.sign_bits(),
            },
            BlockUnitary::Dense(m) => {
                let d = m.nrows();
                let matrix = (0..d * d).map(|i| m[(i / d, i % d)]).map(|c| [c.re, c.im]).collect();
                BlockRepr::Dense { k: b.k(), matrix }
            }
        }
    }
}

impl BlockRepr {
    pub fn to_block(&self) -> Result<BlockUnitary> {
        match self {
            BlockRepr::Tableau { k, rows, signs } => {
                let k = *k;
                if k == 0 || k > crate::clifford::MAX_BLOCK_QUBITS {
                    return Err(Error::Validation(format!("tableau block size {k} unsupported")));
                }
                if rows.len() != 2 * k || signs.len() != 2 * k {
                    return Err(Error::Validation(format!("tableau on {k} qubits needs {} rows and signs", 2 * k)));
                }
                let mask = (1u128 << k) - 1;
                let images = rows
                    .iter()
                    .zip(signs)
                    .map(|(r, &s)| {
                        let v = u128::from_str_radix(r, 16).map_err(|_| Error::Parse(format!("bad tableau row {r:?}")))?;
                        if v >> (2 * k) != 0 {
                            return Err(Error::Validation(format!("tableau row {r:?} is wider than 2k bits")));
                        }
                        PauliString::new(k, v & mask, v >> k, if s { 2 } else { 0 })
                    })
                    .collect::<Result<Vec<_>>>()?;
                let (x, z) = images.split_at(k);
                Ok(BlockUnitary::Tableau(CliffordTableau::from_images(k, x.to_vec(), z.to_vec())?))
            }
            BlockRepr::Dense { k, matrix } => {
                let d = 1usize << k;
                if matrix.len() != d * d {
                    return Err(Error::Validation(format!("dense block on {k} qubits needs {} entries", d * d)));
                }
                let m = DMatrix::from_fn(d, d, |i, j| {
                    let [re, im] = matrix[i * d + j];
                    C64::new(re, im)
                });
                let b = BlockUnitary::Dense(m);
                if b.unitarity_residual() > 1e-8 {
                    return Err(Error::Validation("dense block is not unitary".into()));
                }
                Ok(b)
            }
        }
    }
}

pub fn unitary_to_repr(u: &LayeredBlockUnitary) -> Vec<BlockRepr> {
    u.blocks().iter().map(BlockRepr::from).collect()
}

pub fn unitary_from_repr(layout: BlockLayout, blocks: &[BlockRepr]) -> Result<LayeredBlockUnitary> {
    let blocks = blocks.iter().map(BlockRepr::to_block).collect::<Result<Vec<_>>>()?;
    LayeredBlockUnitary::new(layout, blocks)
}

/// Character `i` is qubit `i+1`.
pub fn bitstring_to_string(bits: u128, n: usize) -> String {
    (0..n).map(|q| if bits >> q & 1 == 1 { '1' } else { '0' }).collect()
}

pub fn bitstring_from_str(s: &str, n: usize) -> Result<u128> {
    if s.len() != n {
        return Err(Error::Validation(format!("outcome {s:?} does not have {n} bits")));
    }
    s.chars().enumerate().try_fold(0u128, |acc, (i, c)| match c {
        '0' => Ok(acc),
        '1' => Ok(acc | 1 << i),
        _ => Err(Error::Parse(format!("bad outcome {s:?}"))),
    })
}

#[derive(Serialize, Deserialize)]
struct RecordRepr {
    unitary: Vec<BlockRepr>,
    bitstrings: Vec<String>,
}

#[derive(Serialize, Deserialize)]
struct DatasetRepr {
    meta: DatasetMeta,
    records: Vec<RecordRepr>,
}

pub fn dataset_to_json(ds: &ShadowDataset) -> String {
    let n = ds.meta.n;
    let repr = DatasetRepr {
        meta: ds.meta.clone(),
        records: ds
            .records
            .iter()
            .map(|r| RecordRepr {
                unitary: unitary_to_repr(&r.unitary),
                bitstrings: r.bitstrings.iter().map(|&b| bitstring_to_string(b, n)).collect(),
            })
            .collect(),
    };
    serde_json::to_string(&repr).expect("dataset serializes")
}

/// Parses and validates a dataset.
pub fn dataset_from_json(text: &str) -> Result<ShadowDataset> {
    let repr: DatasetRepr = serde_json::from_str(text)?;
    let layout = BlockLayout::new(repr.meta.n, repr.meta.k)?;
    let records = repr
        .records
        .iter()
        .map(|r| {
            Ok(ShadowRecord {
                unitary: unitary_from_repr(layout, &r.unitary)?,
                bitstrings: r.bitstrings.iter().map(|s| bitstring_from_str(s, layout.n())).collect::<Result<_>>()?,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let ds = ShadowDataset { meta: repr.meta, records };
    ds.validate()?;
    Ok(ds)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PlanFile {
    pub config: DerandConfig,
    pub n: usize,
    pub k: usize,
    pub targets: Vec<PauliString>,
    pub choices: Vec<Vec<usize>>,
    pub bases: Vec<Vec<BlockRepr>>,
    pub coverage: BTreeMap<String, usize>,
    pub conf: f64,
    pub expected_conf: f64,
    pub guarantee_holds: bool,
}

impl PlanFile {
    pub fn from_plan(plan: &MeasurementPlan, expected_conf: f64) -> Self {
        let conf = plan.conf();
        Self {
            config: plan.config,
            n: plan.layout.n(),
            k: plan.layout.k(),
            targets: plan.targets.clone(),
            choices: plan.choices.clone(),
            bases: plan.bases.iter().map(unitary_to_repr).collect(),
            coverage: plan.targets.iter().map(|p| p.to_string()).zip(plan.coverage()).collect(),
            conf,
            expected_conf,
            guarantee_holds: conf <= expected_conf,
        }
    }

    pub fn to_plan(&self) -> Result<MeasurementPlan> {
        let layout = BlockLayout::new(self.n, self.k)?;
        let bases = self.bases.iter().map(|b| unitary_from_repr(layout, b)).collect::<Result<Vec<_>>>()?;
        Ok(MeasurementPlan {
            config: self.config,
            layout,
            targets: self.targets.clone(),
            choices: self.choices.clone(),
            bases,
        })
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("plan serializes")
    }

    pub fn from_json(text: &str) -> Result<Self> {
        Ok(serde_json::from_str(text)?)
    }
}

/// Targets as either an observable file (`[{coeff, pauli}]`), a JSON array of Pauli
/// strings, or one Pauli string per line (blank lines and `#` comments skipped).
pub fn read_targets(text: &str) -> Result<Vec<PauliString>> {
    let t = text.trim_start();
    if t.starts_with('[') {
        let v: serde_json::Value = serde_json::from_str(t)?;
        let arr = v.as_array().expect("checked by the leading bracket");
        if arr.iter().all(|x| x.is_string()) {
            return Ok(serde_json::from_value(v)?);
        }
        let o = ObservableSum::from_json(t)?;
        return Ok(o.terms().iter().map(|(_, p)| *p).collect());
    }
    text.lines()
        .map(str::trim)
        .filter(|l| !l.is_empty() && !l.starts_with('#'))
        .map(|l| l.parse())
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::clifford::{sample_dense_haar, Ensemble, EnsembleKind};
    use crate::shadow::{acquire, AcquireConfig};
    use crate::state::StateVector;
    use rand::SeedableRng;

    #[test]
    fn tableau_roundtrip() {
        for t in crate::clifford::clifford_group(2).unwrap().iter().step_by(97) {
            let b = BlockUnitary::Tableau(t.clone());
            let r = BlockRepr::from(&b);
            assert_eq!(r.to_block().unwrap(), b);
        }
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(1);
        let d = sample_dense_haar(2, &mut rng);
        assert_eq!(BlockRepr::from(&d).to_block().unwrap(), d);
    }

    #[test]
    fn dataset_roundtrip() {
        let l = BlockLayout::new(4, 2).unwrap();
        let ens = Ensemble::from_parts(EnsembleKind::CliffordFull, l).unwrap();
        let ds = acquire(&StateVector::ghz(4).unwrap(), &ens, AcquireConfig::new(5, 3, 11), None).unwrap();
        let s = dataset_to_json(&ds);
        let back = dataset_from_json(&s).unwrap();
        assert_eq!(back, ds);
        assert_eq!(dataset_to_json(&back), s);
    }

    #[test]
    fn bitstrings_and_targets() {
        assert_eq!(bitstring_to_string(0b0011, 4), "1100");
        assert_eq!(bitstring_from_str("1100", 4).unwrap(), 0b0011);
        assert!(bitstring_from_str("110", 4).is_err());
        let a = read_targets("XX\n# c\n\n-ZI\n").unwrap();
        assert_eq!(a.len(), 2);
        let b = read_targets(r#"["XX","IZ"]"#).unwrap();
        assert_eq!(b[1].to_string(), "IZ");
        let c = read_targets(r#"[{"coeff":0.5,"pauli":"XY"}]"#).unwrap();
        assert_eq!(c[0].to_string(), "XY");
    }
}
