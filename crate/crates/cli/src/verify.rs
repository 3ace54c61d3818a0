//! Enumeration checks over Cl(1) and Cl(2): channel eigenvalues, the pair table and
//! the MUB and stabilizer-basis ensembles.

use blockshadow::analytics::f_block;
use blockshadow::clifford::{clifford_group, clifford_group_order, CliffordTableau, Ensemble, EnsembleKind};
use blockshadow::{BlockLayout, PauliString};

use crate::error::CliResult;

struct Check {
    name: String,
    result: Result<String, String>,
}

fn counts(members: &[CliffordTableau], k: usize) -> Vec<u128> {
    (0..1usize << (2 * k))
        .map(|i| {
            let p = PauliString::from_index(k, i);
            members.iter().filter(|t| t.indicator(&p)).count() as u128
        })
        .collect()
}

fn pair_counts(members: &[CliffordTableau], k: usize) -> Vec<Vec<u128>> {
    let np = 1usize << (2 * k);
    let paulis: Vec<PauliString> = (0..np).map(|i| PauliString::from_index(k, i)).collect();
    let diag: Vec<Vec<bool>> = members.iter().map(|t| paulis.iter().map(|p| t.indicator(p)).collect()).collect();
    (0..np)
        .map(|a| (0..np).map(|b| diag.iter().filter(|d| d[a] && d[b]).count() as u128).collect())
        .collect()
}

fn eigenvalues(k: usize) -> Result<String, String> {
    let group = clifford_group(k).map_err(|e| e.to_string())?;
    let order = group.len() as u128;
    if order != clifford_group_order(k) {
        return Err(format!("enumerated {order} elements, expected {}", clifford_group_order(k)));
    }
    let d1 = (1u128 << k) + 1;
    for (i, &c) in counts(group, k).iter().enumerate() {
        let ok = if i == 0 { c == order } else { c * d1 == order };
        if !ok {
            return Err(format!("Pauli {}: {c}/{order}", PauliString::from_index(k, i)));
        }
    }
    Ok(format!("|Cl({k})| = {order}, every Pauli at (2^k+1)^-w"))
}

fn pair_table() -> Result<String, String> {
    let group = clifford_group(2).map_err(|e| e.to_string())?;
    let order = group.len() as f64;
    let pc = pair_counts(group, 2);
    let m = |i: usize| if i == 0 { 1.0 } else { 0.2 };
    for a in 0..16 {
        for b in 0..16 {
            let predicted = f_block(a, b, 2) * m(a) * m(b) * order;
            if (predicted - pc[a][b] as f64).abs() > 1e-6 {
                return Err(format!("pair ({a},{b}): {} counted, {predicted} predicted", pc[a][b]));
            }
        }
    }
    Ok("256 pairs match".into())
}

fn mub() -> Result<String, String> {
    let e = Ensemble::from_parts(EnsembleKind::Mub, BlockLayout::new(2, 2).map_err(|e| e.to_string())?)
        .map_err(|e| e.to_string())?;
    let c = counts(e.members(), 2);
    if e.members().len() != 5 || c[1..].iter().any(|&x| x != 1) {
        return Err(format!("{} members, coverage {c:?}", e.members().len()));
    }
    Ok("5 members, each Pauli covered once".into())
}

fn stabilizer_basis() -> Result<String, String> {
    let e = Ensemble::from_parts(EnsembleKind::StabilizerBasis, BlockLayout::new(2, 2).map_err(|e| e.to_string())?)
        .map_err(|e| e.to_string())?;
    let members = e.members();
    if members.len() != 15 {
        return Err(format!("{} members", members.len()));
    }
    for i in 0..members.len() {
        for j in 0..i {
            if members[i] == members[j] {
                return Err(format!("members {j} and {i} coincide"));
            }
        }
    }
    let group = clifford_group(2).map_err(|e| e.to_string())?;
    let (ps, pg) = (pair_counts(members, 2), pair_counts(group, 2));
    for a in 0..16 {
        for b in 0..16 {
            if ps[a][b] * group.len() as u128 != pg[a][b] * 15 {
                return Err(format!("pair ({a},{b}) differs from Cl(2)"));
            }
        }
    }
    Ok("15 distinct members, pair table equal to Cl(2)".into())
}

/// Prints one line per check; returns whether all passed.
pub fn run() -> CliResult<bool> {
    let checks = vec![
        Check { name: "channel eigenvalues k=1".into(), result: eigenvalues(1) },
        Check { name: "channel eigenvalues k=2".into(), result: eigenvalues(2) },
        Check { name: "pair table Cl(2)".into(), result: pair_table() },
        Check { name: "MUB k=2".into(), result: mub() },
        Check { name: "stabilizer basis k=2".into(), result: stabilizer_basis() },
    ];
    let mut all = true;
    for c in &checks {
        match &c.result {
            Ok(msg) => println!("PASS {}: {msg}", c.name),
            Err(msg) => {
                all = false;
                println!("FAIL {}: {msg}", c.name)
            }
        }
    }
    Ok(all)
}
