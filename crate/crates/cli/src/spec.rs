//! State specifications accepted by `--state`, `--target` and `--sigma`.

use std::path::Path;

use blockshadow::state::{ground_state_exact, random_circuit_state, ssh_ground_state, StateVector};
use blockshadow::ObservableSum;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{CliError, CliResult};

/// Parses `zero`, `plus`, `ghz`, `bell`, `random-circuit(depth[,seed])`, `ssh(v,w)`,
/// `ground(hamiltonian.json)` or `file(state.json)` into an `n`-qubit state.
pub fn build_state(spec: &str, n: usize) -> CliResult<StateVector> {
    let spec = spec.trim();
    let (name, args) = match spec.find('(') {
        Some(i) if spec.ends_with(')') => (&spec[..i], Some(&spec[i + 1..spec.len() - 1])),
        Some(_) => return Err(CliError::Usage(format!("malformed state spec {spec:?}"))),
        None => (spec, None),
    };
    let psi = match (name, args) {
        ("zero", None) => StateVector::zero(n)?,
        ("plus", None) => StateVector::plus(n)?,
        ("ghz", None) => StateVector::ghz(n)?,
        ("bell", None) => {
            if n != 2 {
                return Err(CliError::Usage("the bell state has 2 qubits".into()));
            }
            StateVector::bell()
        }
        ("random-circuit", Some(a)) => {
            let nums = numbers(a, spec)?;
            let (depth, seed) = match nums.as_slice() {
                [d] => (*d, 0.0),
                [d, s] => (*d, *s),
                _ => return Err(CliError::Usage(format!("{spec:?}: expected random-circuit(depth[,seed])"))),
            };
            if depth < 0.0 || depth.fract() != 0.0 || seed < 0.0 || seed.fract() != 0.0 {
                return Err(CliError::Usage(format!("{spec:?}: depth and seed must be non-negative integers")));
            }
            random_circuit_state(n, depth as usize, &mut ChaCha8Rng::seed_from_u64(seed as u64))?
        }
        ("ssh", Some(a)) => match numbers(a, spec)?.as_slice() {
            [v, w] => ssh_ground_state(n, *v, *w)?,
            _ => return Err(CliError::Usage(format!("{spec:?}: expected ssh(v,w)"))),
        },
        ("ground", Some(path)) => {
            let h = read_observable(Path::new(path.trim()))?;
            ground_state_exact(&h)?.1
        }
        ("file", Some(path)) => StateVector::from_json(&read_text(Path::new(path.trim()))?)?,
        _ => return Err(CliError::Usage(format!("unknown state spec {spec:?}"))),
    };
    if psi.n() != n {
        return Err(CliError::Usage(format!("state {spec:?} has {} qubits, expected {n}", psi.n())));
    }
    Ok(psi)
}

fn numbers(args: &str, spec: &str) -> CliResult<Vec<f64>> {
    args.split(',')
        .map(|s| s.trim().parse::<f64>().map_err(|_| CliError::Usage(format!("bad number {s:?} in {spec:?}"))))
        .collect()
}

pub fn read_text(path: &Path) -> CliResult<String> {
    std::fs::read_to_string(path).map_err(|e| CliError::Runtime(format!("cannot read {}: {e}", path.display())))
}

pub fn read_observable(path: &Path) -> CliResult<ObservableSum> {
    Ok(ObservableSum::from_json(&read_text(path)?)?)
}
