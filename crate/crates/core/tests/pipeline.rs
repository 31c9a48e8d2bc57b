use hlt::ansatz::{fit_ansatz, reconstruct_state, FitOptions, SpectralAnsatz};
use hlt::experiment::{run_experiment, ExperimentConfig, ExperimentKind, LValue, RunOptions};
use hlt::learning::{build_constraint_matrix, ExpectationSource};
use hlt::measurement::{build_overlapping_plan, sample};
use hlt::state::{fidelity, gibbs_state, transverse_ising};

#[test]
fn sampled_ising_is_learned() {
    let rho = gibbs_state(&transverse_ising(5).unwrap()).unwrap();
    let data = sample(&rho, &build_overlapping_plan(5, 2, 50_000).unwrap(), 11).unwrap();
    let km = build_constraint_matrix(ExpectationSource::Dataset(&data), 2).unwrap();
    let ansatz = SpectralAnsatz::from_constraint_matrix(&km, 20).unwrap();
    let (fitted, report) = fit_ansatz(&ansatz, &data, &FitOptions::default()).unwrap();
    let f = fidelity(&reconstruct_state(&fitted).unwrap(), &rho).unwrap();
    assert!(f > 0.93, "fidelity {f}");
    assert_eq!(report.starts.len(), 6);
}

#[test]
fn sweep_is_reproducible() {
    let mut cfg = ExperimentConfig::new(ExperimentKind::HltSweep, 4);
    cfg.l_grid = Some(vec![LValue::Count(10)]);
    cfg.m_grid = Some(vec![8_100]);
    cfg.seeds = Some(vec![0, 1]);
    let a = run_experiment(&cfg, &RunOptions::default()).unwrap();
    let b = run_experiment(&cfg, &RunOptions::default()).unwrap();
    assert_eq!(a.rows, b.rows);
    assert_eq!(a.failures(), 0);
}
