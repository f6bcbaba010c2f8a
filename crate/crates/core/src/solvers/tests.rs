use super::*;
use crate::linalg::{ComplexVector, DenseOperator, PowerIteration};
use crate::measurement::NoiseSpec;
use crate::stochastic::stochastic_gradient;

fn c(re: f64, im: f64) -> C64 {
    C64::new(re, im)
}

fn gaussian_rows(m: usize, d: usize, seed: u64) -> (MeasurementEnsemble, Vec<C64>) {
    let mut rng = SeededRng::new(seed, 1);
    let op = DenseOperator::random_gaussian(m, d, &mut rng);
    let x = ComplexVector::random(d, &mut rng).into_inner();
    let e = MeasurementEnsemble::dense_rows(&op).simulate(&x, &NoiseSpec::none()).unwrap();
    let z0 = ComplexVector::random(d, &mut rng).into_inner();
    (e, z0)
}

fn stft(d: usize, shifts: &[i64], seed: u64) -> (MeasurementEnsemble, Vec<C64>) {
    let mut rng = SeededRng::new(seed, 2);
    let w: Vec<C64> = (0..d).map(|j| if j < d / 2 { c(1.0 + 0.1 * j as f64, 0.2) } else { c(0.0, 0.0) }).collect();
    let e = MeasurementEnsemble::stft(&ComplexVector::new(w).unwrap(), shifts).unwrap();
    let x = ComplexVector::random(d, &mut rng).into_inner();
    let e = e.simulate(&x, &NoiseSpec::none()).unwrap();
    let z0 = ComplexVector::random(d, &mut rng).into_inner();
    (e, z0)
}

fn max_rel_diff(a: &[C64], b: &[C64]) -> f64 {
    let scale = b.iter().map(|v| v.norm()).fold(1e-300, f64::max);
    a.iter().zip(b).map(|(u, v)| (u - v).norm()).fold(0.0, f64::max) / scale
}

#[test]
fn saf_with_one_block_is_gradient_descent() {
    let mut rng = SeededRng::new(3, 0);
    let op = DenseOperator::random_gaussian(12, 4, &mut rng);
    let x = ComplexVector::random(4, &mut rng).into_inner();
    let e = MeasurementEnsemble::dense_blocks(&op, 12).unwrap().simulate(&x, &NoiseSpec::none()).unwrap();
    let z0 = ComplexVector::random(4, &mut rng).into_inner();
    let cfg = SolverConfig::new(0.1, StepSchedule::constant(0.02).unwrap(), 50);
    let af = af_run(&e, &z0, &cfg).unwrap();
    let saf = saf_run(&e, &z0, &cfg).unwrap();
    assert_eq!(af.final_iterate, saf.final_iterate);
    let losses = |t: &RunTrace| t.records.iter().map(|r| r.loss).collect::<Vec<_>>();
    assert_eq!(losses(&af), losses(&saf));
}

#[test]
fn af_descends_with_safe_step() {
    let (e, z0) = gaussian_rows(24, 6, 11);
    let norm_a = e.operator_norm(PowerIteration::default()).unwrap();
    for eps in [0.0, 0.1] {
        let cfg = SolverConfig::new(eps, StepSchedule::constant(1.0 / (norm_a * norm_a)).unwrap(), 200);
        let trace = af_run(&e, &z0, &cfg).unwrap();
        assert_eq!(trace.records.len(), 201);
        for w in trace.records.windows(2) {
            assert!(w[1].loss <= w[0].loss * (1.0 + 1e-10) + 1e-300);
        }
    }
}

#[test]
fn trace_bookkeeping() {
    let (e, z0) = gaussian_rows(10, 3, 5);
    let cfg = SolverConfig::new(0.0, StepSchedule::polynomial(0.05, 0.25).unwrap(), 20).with_trace_every(5);
    let trace = saf_run(&e, &z0, &cfg).unwrap();
    let ts: Vec<usize> = trace.records.iter().map(|r| r.t).collect();
    assert_eq!(ts, vec![0, 5, 10, 15, 20]);
    let last = trace.records.last().unwrap();
    assert_eq!(last.mu, 0.0);
    assert!(last.indices.is_empty());
    let expect: f64 = (0..20).map(|t| cfg.schedule.value(t)).sum();
    assert!((last.cum_mu - expect).abs() < 1e-14);
    assert_eq!(trace.status, RunStatus::BudgetExhausted);
    assert_eq!(trace.iterations, 20);
    let mins = trace.min_grad_curve();
    assert!(mins.windows(2).all(|w| w[1] <= w[0]));
}

#[test]
fn saf_is_deterministic_per_seed() {
    let (e, z0) = gaussian_rows(16, 4, 8);
    let cfg = SolverConfig::new(0.0, StepSchedule::constant(0.01).unwrap(), 30).with_batch(3).with_seed(9, 4);
    let a = saf_run(&e, &z0, &cfg).unwrap();
    let b = saf_run(&e, &z0, &cfg).unwrap();
    assert_eq!(a, b);
    let other = saf_run(&e, &z0, &cfg.clone().with_seed(9, 5)).unwrap();
    assert_ne!(a.records[0].indices, other.records[0].indices);
    assert!(a.records[..30].iter().all(|r| r.indices.len() == 3));
}

#[test]
fn kaczmarz_step_nulls_selected_residual() {
    let (e, z0) = gaussian_rows(8, 4, 21);
    let y = e.measurements().unwrap();
    for r in 0..8 {
        let z1 = kaczmarz_step(&e, &z0, r).unwrap();
        let a = e.block(r).apply(&z1).unwrap()[0];
        assert!((a.norm() - y[r][0].sqrt()).abs() <= 1e-12 * (1.0 + y[r][0].sqrt()));
    }
}

#[test]
fn kaczmarz_step_is_a_saf_step() {
    let (e, z0) = gaussian_rows(8, 4, 22);
    let dist = variance_reducing_distribution(&e).unwrap();
    let spec = LossSpec::new(0.0).unwrap();
    for r in 0..8 {
        let row_sq = e.block(r).frobenius_sq();
        let mu = dist.prob(r) / row_sq;
        let k = kaczmarz_step(&e, &z0, r).unwrap();
        let s = saf_step(&e, &z0, &spec, &[r], &dist, mu).unwrap();
        assert!(max_rel_diff(&k, &s) < 1e-12);
    }
}

#[test]
fn kaczmarz_run_records_effective_step() {
    let (e, z0) = gaussian_rows(12, 3, 23);
    let fro2 = e.frobenius_norm().powi(2);
    let cfg = SolverConfig::new(0.0, StepSchedule::constant(1.0).unwrap(), 40);
    let trace = kaczmarz_run(&e, &z0, &cfg).unwrap();
    for r in &trace.records[..40] {
        assert!((r.mu - 1.0 / fro2).abs() <= 1e-12 / fro2);
    }
}

#[test]
fn pie_step_is_a_saf_step() {
    let d = 8;
    let (e, z0) = stft(d, &[0, 2, 4, 6], 31);
    let dist = SamplingDistribution::uniform(4).unwrap();
    let spec = LossSpec::new(0.0).unwrap();
    let w_inf2 = norm_inf(e.stft_window().unwrap()).powi(2);
    for r in 0..4 {
        for alpha in [0.3, 1.0] {
            let p = pie_step(&e, &z0, r, alpha).unwrap();
            let mu = alpha * dist.prob(r) / (d as f64 * w_inf2);
            let s = saf_step(&e, &z0, &spec, &[r], &dist, mu).unwrap();
            assert!(max_rel_diff(&p, &s) < 1e-12, "r={r} alpha={alpha}");
        }
    }
}

#[test]
fn pie_run_matches_equivalent_saf_run() {
    let (e, z0) = stft(16, &[0, 4, 8, 12], 32);
    let alpha = StepSchedule::polynomial(0.8, 0.25).unwrap();
    let cfg = SolverConfig::new(0.0, alpha, 100).with_seed(3, 7);
    let pie = pie_run(&e, &z0, &cfg).unwrap();
    let mu = pie_equivalent_saf_schedule(&e, &alpha).unwrap();
    let saf = saf_run(&e, &z0, &SolverConfig { schedule: mu, ..cfg.clone() }).unwrap();
    assert!(max_rel_diff(&pie.final_iterate, &saf.final_iterate) < 1e-12);
    for (a, b) in pie.records.iter().zip(&saf.records) {
        assert_eq!(a.indices, b.indices);
        assert!((a.mu - b.mu).abs() <= 1e-15 * b.mu);
    }
}

#[test]
fn solvers_commute_with_global_phase() {
    let (dense, zd) = gaussian_rows(16, 4, 41);
    let (st, zs) = stft(8, &[0, 2, 4, 6], 42);
    let phase = C64::from_polar(1.0, 0.9);
    let sched = StepSchedule::polynomial(0.05, 0.25).unwrap();
    let cases: [(Algorithm, &MeasurementEnsemble, &Vec<C64>); 4] = [
        (Algorithm::Af, &dense, &zd),
        (Algorithm::Saf, &dense, &zd),
        (Algorithm::Kaczmarz, &dense, &zd),
        (Algorithm::Pie, &st, &zs),
    ];
    for (alg, e, z0) in cases {
        let cfg = SolverConfig::new(0.1, sched, 60).with_batch(2).with_seed(1, 2);
        let base = run(alg, e, z0, &cfg).unwrap();
        let rotated: Vec<C64> = z0.iter().map(|v| v * phase).collect();
        let rot = run(alg, e, &rotated, &cfg).unwrap();
        let expect: Vec<C64> = base.final_iterate.iter().map(|v| v * phase).collect();
        assert!(max_rel_diff(&rot.final_iterate, &expect) < 1e-10, "{alg:?}");
    }
}

#[test]
fn gradient_tolerance_stops_early() {
    let (e, _) = gaussian_rows(10, 3, 51);
    let x = e.truth().unwrap().to_vec();
    let cfg = SolverConfig::new(0.0, StepSchedule::constant(0.01).unwrap(), 100).with_grad_tol(1e-8);
    let trace = af_run(&e, &x, &cfg).unwrap();
    assert_eq!(trace.status, RunStatus::GradientTolerance { t: 0 });
    assert_eq!(trace.records.len(), 1);
}

#[test]
fn divergent_step_aborts_cleanly() {
    let (e, z0) = gaussian_rows(10, 3, 52);
    let cfg = SolverConfig::new(0.0, StepSchedule::constant(1e200).unwrap(), 50);
    let trace = af_run(&e, &z0, &cfg).unwrap();
    assert!(trace.is_aborted());
    assert!(all_finite(&trace.final_iterate));
}

#[test]
fn structural_errors() {
    let (dense, z) = gaussian_rows(6, 3, 61);
    let (st, zs) = stft(4, &[0, 1], 62);
    let cfg = SolverConfig::new(0.0, StepSchedule::constant(0.1).unwrap(), 5);
    assert_eq!(pie_run(&dense, &z, &cfg).unwrap_err(), SolverError::NotStft);
    assert_eq!(kaczmarz_run(&st, &zs, &cfg).unwrap_err(), SolverError::NotRowPartition);
    assert!(matches!(kaczmarz_step(&dense, &z, 6), Err(SolverError::Index { .. })));
    let zero = DenseOperator::from_fn(2, 3, |i, j| if i == 0 { c(j as f64, 0.0) } else { c(0.0, 0.0) }).unwrap();
    let e = MeasurementEnsemble::dense_rows(&zero).with_measurements(vec![vec![1.0], vec![0.0]]).unwrap();
    assert_eq!(kaczmarz_step(&e, &z, 1).unwrap_err(), SolverError::ZeroRow(1));
    let bad = SolverConfig { batch: 0, ..cfg.clone() };
    assert!(matches!(saf_run(&dense, &z, &bad), Err(SolverError::Config(_))));
    let bad = SolverConfig::new(-1.0, StepSchedule::constant(0.1).unwrap(), 5);
    assert!(af_run(&dense, &z, &bad).is_err());
    let no_y = MeasurementEnsemble::dense_rows(&DenseOperator::identity(3));
    assert!(matches!(af_run(&no_y, &z, &cfg), Err(SolverError::Loss(LossError::MissingMeasurements))));
}

#[test]
fn stochastic_gradient_matches_weighted_blocks() {
    let (e, z0) = gaussian_rows(6, 3, 71);
    let dist = SamplingDistribution::new(vec![0.1, 0.2, 0.3, 0.1, 0.2, 0.1]).unwrap();
    let spec = LossSpec::new(0.5).unwrap();
    let g = stochastic_gradient(&e, &z0, &spec, &[2, 2, 5], &dist).unwrap();
    let b2 = crate::loss::block_gradient(&e, 2, &z0, &spec).unwrap();
    let b5 = crate::loss::block_gradient(&e, 5, &z0, &spec).unwrap();
    let expect: Vec<C64> = b2.iter().zip(&b5).map(|(u, v)| u * (2.0 / 3.0 / 0.3) + v * (1.0 / 3.0 / 0.1)).collect();
    assert!(max_rel_diff(&g, &expect) < 1e-12);
}

#[test]
fn warnings_flag_hypothesis_violations() {
    let (e, _) = gaussian_rows(6, 3, 81);
    let cfg = SolverConfig::new(0.0, StepSchedule::constant(10.0).unwrap(), 5);
    assert!(!hypothesis_warnings(Algorithm::Af, &e, &cfg, 2.0).is_empty());
    let ok = SolverConfig::new(0.0, StepSchedule::constant(0.1).unwrap(), 5);
    assert!(hypothesis_warnings(Algorithm::Af, &e, &ok, 2.0).is_empty());
    assert!(!hypothesis_warnings(Algorithm::Pie, &e, &ok, 2.0).is_empty());
    assert_eq!("pie".parse::<Algorithm>().unwrap(), Algorithm::Pie);
    assert!("gd".parse::<Algorithm>().is_err());
}
