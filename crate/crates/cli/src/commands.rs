use std::path::Path;

use blockshadow::analytics::{
    compute_v123, compute_v123_purity, m_eigenvalue, pauli_table, sff_exact, sff_variance, state_alphas,
    variance_crm, variance_fidelity, variance_pauli_multishot, variance_purity,
};
use blockshadow::clifford::{Ensemble, EnsembleKind};
use blockshadow::derandomize::{derandomize as plan_bases, expected_conf, Budget, DerandConfig};
use blockshadow::io::{dataset_from_json, dataset_to_json, read_targets, PlanFile};
use blockshadow::ml::{phase_scan as run_scan, KernelParams, PhaseScanConfig};
use blockshadow::noise::{
    calibrate_alpha, clamp_alpha, label_string, mitigated_crm_estimate, mitigated_estimate, parse_label,
    CalibrationOptions, CalibrationReport, NoiseModel,
};
use blockshadow::shadow::{
    acquire as sample, crm_estimate, estimate_fidelity, estimate_pauli, estimate_purity, sff_estimate,
    AcquireConfig, Aggregation, CrmMode, Estimate, EstimatorOptions, ShadowDataset, StdErrMethod,
};
use blockshadow::state::StateVector;
use blockshadow::{BlockLayout, ObservableSum, PauliString};

use crate::error::{CliError, CliResult};
use crate::report::{emit, num, Table};
use crate::spec::{build_state, read_observable, read_text};
use crate::{
    AcquireArgs, CalibrateArgs, CrmArgs, DerandomizeArgs, EstimateArgs, EstimatorArgs, FidelityArgs, MitigateArgs,
    PhaseScanArgs, PurityArgs, SffArgs, StderrKind,
};

const ESTIMATE_HEADER: &[&str] = &["observable", "mean", "stderr", "N_U", "N_S", "k", "exact", "z", "predicted_var"];

/// Exact variance sums enumerate `16^n` Pauli pairs; beyond this they are skipped.
const MAX_EXACT_VARIANCE_QUBITS: usize = 7;

fn options(a: &EstimatorArgs) -> CliResult<EstimatorOptions> {
    let aggregation = match a.median_of_means {
        None => Aggregation::Mean,
        Some(0) => return Err(CliError::Usage("--median-of-means needs at least one group".into())),
        Some(groups) => Aggregation::MedianOfMeans { groups },
    };
    let stderr = match a.stderr {
        StderrKind::Analytic => StdErrMethod::Analytic,
        StderrKind::Bootstrap => StdErrMethod::Bootstrap { resamples: a.resamples, seed: a.bootstrap_seed },
    };
    Ok(EstimatorOptions { aggregation, stderr })
}

fn read_dataset(path: &Path) -> CliResult<ShadowDataset> {
    Ok(dataset_from_json(&read_text(path)?)?)
}

fn ensemble_kind(s: &str) -> CliResult<EnsembleKind> {
    Ok(s.parse::<EnsembleKind>()?)
}

fn hermitian_targets(path: &Path, n: usize) -> CliResult<Vec<PauliString>> {
    let targets = read_targets(&read_text(path)?)?;
    if targets.is_empty() {
        return Err(CliError::Usage(format!("{} lists no targets", path.display())));
    }
    for p in &targets {
        if !p.is_hermitian() {
            return Err(CliError::Usage(format!("target {p} is not Hermitian")));
        }
        if p.n() != n {
            return Err(CliError::Usage(format!("target {p} does not act on {n} qubits")));
        }
    }
    Ok(targets)
}

fn reference(spec: &Option<String>, n: usize) -> CliResult<Option<StateVector>> {
    spec.as_deref().map(|s| build_state(s, n)).transpose()
}

fn estimate_row(target: String, k: usize, est: &Estimate, exact: Option<f64>, predicted: Option<f64>) -> Vec<String> {
    vec![
        target,
        num(Some(est.mean)),
        num(Some(est.stderr)),
        est.n_u.to_string(),
        est.n_s.to_string(),
        k.to_string(),
        num(exact),
        num(exact.map(|x| est.z_score(x))),
        num(predicted.map(|v| v.max(0.0))),
    ]
}

fn m_of(p: &PauliString, ds: &ShadowDataset) -> Option<f64> {
    m_eigenvalue(p, &ds.layout(), ds.meta.ensemble).ok()
}

fn single(p: &PauliString) -> CliResult<ObservableSum> {
    Ok(ObservableSum::from_terms(p.n(), [(1.0, *p)])?)
}

pub fn acquire(a: &AcquireArgs) -> CliResult<()> {
    let layout = BlockLayout::new(a.n, a.k)?;
    let ens = Ensemble::from_parts(ensemble_kind(&a.ensemble)?, layout)?;
    let psi = build_state(&a.state, a.n)?;
    let noise = a.noise.as_deref().map(|p| NoiseModel::from_json(&read_text(p)?).map_err(CliError::from)).transpose()?;
    let mut cfg = AcquireConfig::new(a.nu, a.ns, a.seed);
    if let Some(s) = a.shot_seed {
        cfg = cfg.with_shot_seed(s);
    }
    let ds = sample(&psi, &ens, cfg, noise.as_ref())?;
    emit(a.out.as_deref(), &dataset_to_json(&ds))
}

pub fn estimate(a: &EstimateArgs) -> CliResult<()> {
    let ds = read_dataset(&a.data)?;
    let opts = options(&a.est)?;
    let targets = hermitian_targets(&a.targets, ds.meta.n)?;
    let rho = reference(&a.state, ds.meta.n)?;
    let mut t = Table::new(ESTIMATE_HEADER);
    for p in &targets {
        let est = estimate_pauli(&ds, p, &opts)?;
        let exact = rho.as_ref().map(|r| r.expectation_pauli(p));
        let predicted = exact
            .zip(m_of(p, &ds))
            .map(|(tr, m)| variance_pauli_multishot(m, tr, ds.meta.n_u, ds.meta.n_s));
        t.push(estimate_row(p.to_string(), ds.meta.k, &est, exact, predicted));
    }
    emit(a.out.as_deref(), &t.to_csv()?)
}

pub fn purity(a: &PurityArgs) -> CliResult<()> {
    let ds = read_dataset(&a.data)?;
    let est = estimate_purity(&ds, &options(&a.est)?)?;
    let rho = reference(&a.state, ds.meta.n)?;
    let exact = rho.as_ref().map(|_| 1.0);
    let predicted = match &rho {
        Some(psi) if ds.meta.n <= MAX_EXACT_VARIANCE_QUBITS && ds.meta.ensemble == EnsembleKind::CliffordFull => {
            let vm = compute_v123_purity(psi, &ds.layout())?;
            Some(variance_purity(vm.v1, vm.v2, vm.v3, ds.meta.n_u, ds.meta.n_s, 1.0)?.exact)
        }
        _ => None,
    };
    let mut t = Table::new(ESTIMATE_HEADER);
    t.push(estimate_row("purity".into(), ds.meta.k, &est, exact, predicted));
    emit(a.out.as_deref(), &t.to_csv()?)
}

pub fn fidelity(a: &FidelityArgs) -> CliResult<()> {
    let ds = read_dataset(&a.data)?;
    let target = build_state(&a.target, ds.meta.n)?;
    let est = estimate_fidelity(&ds, &target, &options(&a.est)?)?;
    let rho = reference(&a.state, ds.meta.n)?;
    let exact = rho.as_ref().map(|r| r.fidelity(&target));
    let predicted = match (&rho, exact) {
        (Some(psi), Some(f))
            if ds.meta.n <= MAX_EXACT_VARIANCE_QUBITS && ds.meta.ensemble == EnsembleKind::CliffordFull =>
        {
            let vm = compute_v123(&state_alphas(&target)?, &pauli_table(psi)?, &ds.layout())?;
            Some(variance_fidelity(vm.v1, vm.v2, f, ds.meta.n_u, ds.meta.n_s))
        }
        _ => None,
    };
    let mut t = Table::new(ESTIMATE_HEADER);
    t.push(estimate_row("fidelity".into(), ds.meta.k, &est, exact, predicted));
    emit(a.out.as_deref(), &t.to_csv()?)
}

pub fn crm(a: &CrmArgs) -> CliResult<()> {
    let ds = read_dataset(&a.data)?;
    let n = ds.meta.n;
    let sigma = build_state(&a.sigma, n)?;
    let sigma_ds = a.sigma_data.as_deref().map(read_dataset).transpose()?;
    let targets = hermitian_targets(&a.targets, n)?;
    let rho = reference(&a.state, n)?;
    let opts = options(&a.est)?;
    let mut t = Table::new(ESTIMATE_HEADER);
    for p in &targets {
        let mode = match &sigma_ds {
            Some(s) => CrmMode::New(s),
            None => CrmMode::Old,
        };
        let est = crm_estimate(&ds, &sigma, mode, &single(p)?, &opts)?;
        let exact = rho.as_ref().map(|r| r.expectation_pauli(p));
        let predicted = exact.zip(m_of(p, &ds)).map(|(r, m)| {
            let s = sigma.expectation_pauli(p);
            variance_crm(m, r, s, ds.meta.n_s, sigma_ds.as_ref().map(|d| d.meta.n_s), ds.meta.n_u).exact
        });
        t.push(estimate_row(p.to_string(), ds.meta.k, &est, exact, predicted));
    }
    emit(a.out.as_deref(), &t.to_csv()?)
}

pub fn sff(a: &SffArgs) -> CliResult<()> {
    let h = read_observable(&a.hamiltonian)?;
    let layout = BlockLayout::new(h.n(), a.k)?;
    let est = sff_estimate(&h, a.time, &layout, a.samples, a.seed, &options(&a.est)?)?;
    let exact = sff_exact(&h, a.time)?;
    let predicted = sff_variance(&h, a.time, &layout, a.samples)?.exact;
    let mut t = Table::new(ESTIMATE_HEADER);
    t.push(estimate_row("sff".into(), a.k, &est, Some(exact), Some(predicted)));
    emit(a.out.as_deref(), &t.to_csv()?)
}

pub fn calibrate(a: &CalibrateArgs) -> CliResult<()> {
    let ds = read_dataset(&a.data)?;
    let sigma = build_state(&a.sigma, ds.meta.n)?;
    let labels = a.labels.iter().map(|s| parse_label(s)).collect::<Result<Vec<_>, _>>()?;
    let opts = CalibrationOptions {
        factorized: labels.is_empty(),
        labels,
        resamples: a.resamples,
        seed: a.seed,
        ..CalibrationOptions::default()
    };
    let report = calibrate_alpha(&ds, &sigma, &opts)?;
    emit(a.out.as_deref(), &(report.to_json() + "\n"))
}

pub fn mitigate(a: &MitigateArgs) -> CliResult<()> {
    let ds = read_dataset(&a.data)?;
    let n = ds.meta.n;
    let layout = ds.layout();
    let report = CalibrationReport::from_json(&read_text(&a.calibration)?)?;
    let targets = hermitian_targets(&a.targets, n)?;
    let sigma = a.sigma.as_deref().map(|s| build_state(s, n)).transpose()?;
    let rho = reference(&a.state, n)?;
    let opts = options(&a.est)?;
    let mut t = Table::new(&["observable", "label", "alpha", "mean", "stderr", "N_U", "N_S", "k", "exact", "z"]);
    for p in &targets {
        let mask = p.block_support(&layout);
        let alpha = report.alpha(mask)?;
        let o = single(p)?;
        let est = match &sigma {
            Some(s) => mitigated_crm_estimate(&ds, s, &o, &report, a.clamp, &opts)?,
            None => mitigated_estimate(&ds, &o, &report, a.clamp, &opts)?,
        };
        let exact = rho.as_ref().map(|r| r.expectation_pauli(p));
        t.push(vec![
            p.to_string(),
            label_string(mask, layout.num_blocks()),
            num(Some(if a.clamp { clamp_alpha(alpha) } else { alpha })),
            num(Some(est.mean)),
            num(Some(est.stderr)),
            est.n_u.to_string(),
            est.n_s.to_string(),
            layout.k().to_string(),
            num(exact),
            num(exact.map(|x| est.z_score(x))),
        ]);
    }
    emit(a.out.as_deref(), &t.to_csv()?)
}

fn derand_config(a: &DerandomizeArgs) -> CliResult<DerandConfig> {
    let candidates = ensemble_kind(&a.candidates)?;
    let budget = match (a.bases, a.min_cover) {
        (Some(bases), None) => Budget::Fixed { bases },
        (None, Some(min_cover)) => Budget::MinCoverage { min_cover, max_bases: a.max_bases },
        (None, None) => return Err(CliError::Usage("give --bases or --min-cover".into())),
        (Some(_), Some(_)) => return Err(CliError::Usage("--bases and --min-cover exclude each other".into())),
    };
    Ok(DerandConfig {
        eps: a.eps,
        candidates,
        budget,
        include_future_factor: !a.no_future_factor,
        shots_per_basis: a.shots_per_basis,
    })
}

pub fn derandomize(a: &DerandomizeArgs) -> CliResult<()> {
    let cfg = derand_config(a)?;
    let targets = hermitian_targets(&a.targets, a.n)?;
    let plan_for = |k: usize| -> CliResult<PlanFile> {
        let layout = BlockLayout::new(a.n, k)?;
        let plan = plan_bases(&targets, &layout, &cfg)?;
        let expected = expected_conf(&targets, plan.bases.len(), &layout, cfg.eps)?;
        Ok(PlanFile::from_plan(&plan, expected))
    };
    let main = plan_for(a.k)?;
    emit(a.out.as_deref(), &(main.to_json() + "\n"))?;
    if let Some(path) = &a.coverage {
        let mut t = Table::new(&["observable", "coverage"]);
        for p in &main.targets {
            let label = p.to_string();
            let c = main.coverage.get(&label).copied().unwrap_or(0);
            t.push(vec![label, c.to_string()]);
        }
        emit(Some(path), &t.to_csv()?)?;
    }
    if !a.compare_k.is_empty() {
        let mut t = Table::new(&["k", "bases", "min_coverage", "conf", "expected_conf", "guarantee_holds"]);
        for &k in &a.compare_k {
            let pf = if k == a.k { main.clone() } else { plan_for(k)? };
            t.push(vec![
                k.to_string(),
                pf.choices.len().to_string(),
                pf.coverage.values().min().copied().unwrap_or(0).to_string(),
                num(Some(pf.conf)),
                num(Some(pf.expected_conf)),
                pf.guarantee_holds.to_string(),
            ]);
        }
        emit(a.compare_out.as_deref(), &t.to_csv()?)?;
    }
    Ok(())
}

pub fn phase_scan(a: &PhaseScanArgs) -> CliResult<()> {
    if !(a.w_step > 0.0) || a.w_max < a.w_min {
        return Err(CliError::Usage("the w grid needs w_min <= w_max and a positive step".into()));
    }
    let layout = BlockLayout::new(a.n, a.k)?;
    let points = ((a.w_max - a.w_min) / a.w_step + 1e-9).floor() as usize + 1;
    let mut cfg = PhaseScanConfig::new(a.n, a.k, a.records, a.seed);
    cfg.w_grid = (0..points).map(|i| ((a.w_min + a.w_step * i as f64) * 1e12).round() / 1e12).collect();
    cfg.v = a.v;
    cfg.shots = a.shots;
    cfg.ensemble = ensemble_kind(&a.ensemble)?;
    if a.gamma.is_some() || a.tau.is_some() {
        let d = KernelParams::default_for(&layout);
        cfg.params = Some(KernelParams::uniform(a.tau.unwrap_or(d.tau), a.gamma.unwrap_or(d.gammas[0]), &layout));
    }
    cfg.noise = a.noise.as_deref().map(|p| NoiseModel::from_json(&read_text(p)?).map_err(CliError::from)).transpose()?;
    cfg.calibration_records = a.calibration_records;
    cfg.bootstrap = a.bootstrap;
    cfg.shared_unitaries = !a.independent_unitaries;
    let res = run_scan(&cfg)?;
    let mut t = Table::new(&["w", "pc1", "pc1_stderr"]);
    for i in 0..res.w.len() {
        t.push(vec![num(Some(res.w[i])), num(Some(res.pc1[i])), num(Some(res.pc1_stderr[i]))]);
    }
    emit(a.out.as_deref(), &t.to_csv()?)?;
    let fit = serde_json::to_string_pretty(&res.fit).map_err(|e| CliError::Runtime(e.to_string()))? + "\n";
    match &a.fit {
        Some(p) => emit(Some(p), &fit),
        None => {
            eprint!("{fit}");
            Ok(())
        }
    }
}
