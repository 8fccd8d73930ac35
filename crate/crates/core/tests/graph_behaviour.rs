use gnssfuse::fusion::{run_fusion, FusionConfig, FusionInput, Initialization, InitialState};
use gnssfuse::geo::{EcefCoord, FrameRef};
use gnssfuse::graph::{
    optimize, slide_window, FactorGraph, NoiseModel, SolverAlgorithm, SolverConfig, Value, VariableKey,
};
use gnssfuse::nav::NavState;
use gnssfuse::preint::{predict_state, so3_exp, GravityVector, ImuBias, ImuNoiseParams, PreintegratedImu};
use gnssfuse::robust::RobustKernel;
use gnssfuse::sim::{generate_scenario, SatObservation, Scenario, ScenarioConfig};
use nalgebra::{DMatrix, Matrix3, Vector3};

fn obs(sat: Vector3<f64>, pseudorange: f64, sigma: f64) -> SatObservation {
    SatObservation {
        sat_id: 1,
        t: 0.0,
        sat_position: EcefCoord::from_vector(&sat),
        pseudorange,
        sigma,
    }
}

fn single_epoch(position: Vector3<f64>, clock: f64) -> FactorGraph {
    let mut g = FactorGraph::new();
    g.values_mut().insert_nav(0, &NavState::at_rest(position));
    g.values_mut().insert_clock(0, clock);
    g
}

#[test]
fn pseudorange_residual_examples() {
    let r = 2.2e7;
    for clock in [0.0, 100.0] {
        let mut g = single_epoch(Vector3::zeros(), clock);
        g.add_pseudorange_factor(0, &obs(Vector3::new(r, 0.0, 0.0), r + clock, 1.0), None)
            .unwrap();
        let (e, _) = g.factors()[0].evaluate(g.values()).unwrap();
        assert_eq!(e[0], 0.0);
    }
    let mut g = single_epoch(Vector3::zeros(), 0.0);
    assert!(g.add_pseudorange_factor(3, &obs(Vector3::new(r, 0.0, 0.0), r, 1.0), None).is_err());
}

#[test]
fn gnss_position_residual_and_cost() {
    let p = Vector3::new(10.0, -4.0, 2.0);
    let mut g = single_epoch(p, 0.0);
    g.add_gnss_position_factor(0, &EcefCoord::from_vector(&p), &Matrix3::identity(), None)
        .unwrap();
    g.add_gnss_position_factor(0, &EcefCoord::from_vector(&(p + Vector3::new(1.0, 2.0, 3.0))), &Matrix3::identity(), None)
        .unwrap();
    g.add_gnss_position_factor(0, &EcefCoord::from_vector(&(p + Vector3::new(2.0, 0.0, 0.0))), &(Matrix3::identity() * 4.0), None)
        .unwrap();
    let values = g.values();
    assert_eq!(g.factors()[0].evaluate(values).unwrap().0.amax(), 0.0);
    let e = g.factors()[1].evaluate(values).unwrap().0;
    assert_eq!(e.as_slice(), &[1.0, 2.0, 3.0]);
    assert!((g.factors()[2].cost(values).unwrap() - 0.5).abs() < 1e-15);
    assert!(g.add_gnss_position_factor(1, &EcefCoord::from_vector(&p), &Matrix3::identity(), None).is_err());
}

fn imu_pair(gravity: GravityVector) -> FactorGraph {
    let noise = ImuNoiseParams::default();
    let mut pim = PreintegratedImu::new(ImuBias::default());
    for k in 0..100 {
        let t = k as f64 * 0.01;
        let s = gnssfuse::preint::ImuSample {
            t,
            gyro: Vector3::new(0.1, -0.2 * t, 0.3),
            accel: Vector3::new(0.5, 0.2 * t.cos(), 9.8),
        };
        pim.integrate_sample(&s, 0.01, &noise).unwrap();
    }
    let si = NavState::new(
        Vector3::new(5.0, 1.0, -3.0),
        Vector3::new(2.0, 0.5, 0.0),
        so3_exp(&Vector3::new(0.2, -0.1, 0.7)),
    );
    let sj = predict_state(&si, &ImuBias::default(), &pim, &gravity);
    let mut g = FactorGraph::new();
    g.values_mut().insert_nav(0, &si);
    g.values_mut().insert_nav(1, &sj);
    g.values_mut().insert_bias(0, &ImuBias::default());
    g.add_imu_factor(0, 1, pim, gravity).unwrap();
    g
}

#[test]
fn imu_factor_cost_is_zero_at_prediction_and_positive_when_perturbed() {
    let mut g = imu_pair(GravityVector::default());
    assert!(g.total_cost().unwrap() < 1e-18);
    let mut s = g.values().nav_state(1).unwrap();
    s.velocity.x += 0.01;
    g.values_mut().insert_nav(1, &s);
    assert!(g.total_cost().unwrap() > 0.0);
}

#[test]
fn imu_factor_rejects_non_consecutive_epochs() {
    let mut g = imu_pair(GravityVector::default());
    g.values_mut().insert_nav(3, &NavState::at_rest(Vector3::zeros()));
    let pim = PreintegratedImu::new(ImuBias::default());
    assert!(g.add_imu_factor(1, 3, pim, GravityVector::default()).is_err());
}

fn transformed_cost(g: &FactorGraph, rot: &nalgebra::Rotation3<f64>, shift: Vector3<f64>) -> f64 {
    let mut moved = g.clone();
    for k in 0..2 {
        let s = g.values().nav_state(k).unwrap();
        let t = NavState::new(rot * s.position + shift, rot * s.velocity, rot * s.orientation);
        moved.values_mut().insert_nav(k, &t);
    }
    moved.total_cost().unwrap()
}

#[test]
fn imu_cost_is_invariant_to_global_rigid_motion() {
    // Relative residuals are invariant to any rigid motion without gravity,
    // and to rotations about the gravity axis with it.
    let mut g = imu_pair(GravityVector::unchecked(Vector3::zeros()));
    let mut s = g.values().nav_state(1).unwrap();
    s.position += Vector3::new(0.05, -0.02, 0.01);
    s.orientation *= so3_exp(&Vector3::new(0.01, 0.0, -0.02));
    g.values_mut().insert_nav(1, &s);
    let base = g.total_cost().unwrap();
    let rot = so3_exp(&Vector3::new(0.4, -1.1, 2.0));
    let c = transformed_cost(&g, &rot, Vector3::new(300.0, -1e3, 40.0));
    assert!((c - base).abs() <= 1e-9 * base.max(1.0), "{c} vs {base}");

    let mut g = imu_pair(GravityVector::default());
    g.values_mut().insert_nav(1, &s);
    let base = g.total_cost().unwrap();
    let c = transformed_cost(&g, &so3_exp(&Vector3::new(0.0, 0.0, 1.3)), Vector3::new(-20.0, 7.0, 1.0));
    assert!((c - base).abs() <= 1e-9 * base.max(1.0), "{c} vs {base}");
}

#[test]
fn random_walk_examples() {
    let mut g = FactorGraph::new();
    for k in 0..2 {
        g.values_mut().insert_bias(k, &ImuBias::new(Vector3::new(0.01, 0.0, 0.0), Vector3::zeros()));
        g.values_mut().insert_clock(k, 5.0 * k as f64);
    }
    g.add_random_walk_factors(0, 1, &ImuNoiseParams::default(), 1.0, 1.0).unwrap();
    let values = g.values();
    assert_eq!(g.factors()[0].cost(values).unwrap(), 0.0);
    assert!((g.factors()[1].cost(values).unwrap() - 12.5).abs() < 1e-12);
}

fn rank(m: &DMatrix<f64>) -> usize {
    let sv = m.clone().svd(false, false).singular_values;
    let tol = sv.max() * 1e-10;
    sv.iter().filter(|s| **s > tol).count()
}

#[test]
fn clock_needs_four_satellites_without_a_walk_factor() {
    let sats = [
        Vector3::new(2.0e7, 1.0e6, 3.0e6),
        Vector3::new(-1.0e6, 2.1e7, 4.0e6),
        Vector3::new(3.0e6, -2.0e6, 2.2e7),
    ];
    let build = |with_walk: bool| {
        let mut g = FactorGraph::new();
        for k in 0..2 {
            g.values_mut().insert_nav(k, &NavState::at_rest(Vector3::zeros()));
            g.values_mut().insert_bias(k, &ImuBias::default());
            g.values_mut().insert_clock(k, 0.0);
        }
        g.add_prior(VariableKey::clock(0), Value::Clock(0.0), NoiseModel::isotropic(1, 10.0).unwrap())
            .unwrap();
        for s in &sats {
            g.add_pseudorange_factor(1, &obs(*s, s.norm(), 1.0), None).unwrap();
        }
        if with_walk {
            g.add_random_walk_factors(0, 1, &ImuNoiseParams::default(), 1.0, 1.0).unwrap();
        }
        g
    };
    // Information on epoch 1's position and both clocks.
    let block = |g: &FactorGraph| {
        let (offsets, _) = g.ordering();
        let (h, _) = g.information_matrix().unwrap();
        let p = offsets[&VariableKey::pose(1)] + 3;
        let idx = [p, p + 1, p + 2, offsets[&VariableKey::clock(1)], offsets[&VariableKey::clock(0)]];
        DMatrix::from_fn(5, 5, |i, j| h[(idx[i], idx[j])])
    };
    assert_eq!(rank(&block(&build(false))), 4);
    assert_eq!(rank(&block(&build(true))), 5);
}

#[test]
fn total_cost_examples() {
    let sat = Vector3::new(2.2e7, 0.0, 0.0);
    let mut g = single_epoch(Vector3::zeros(), 0.0);
    assert_eq!(g.total_cost().unwrap(), 0.0);
    g.add_pseudorange_factor(0, &obs(sat, 2.2e7 + 2.0, 1.0), None).unwrap();
    assert!((g.total_cost().unwrap() - 2.0).abs() < 1e-12);
    let mut g = single_epoch(Vector3::zeros(), 0.0);
    g.add_pseudorange_factor(0, &obs(sat, 2.2e7 + 2.0, 1.0), Some(RobustKernel::barron(0.0, 1.0).unwrap()))
        .unwrap();
    assert!((g.total_cost().unwrap() - 3f64.ln()).abs() < 1e-12);
}

#[test]
fn prior_at_its_mean_needs_no_iterations() {
    let mut g = single_epoch(Vector3::new(1.0, 2.0, 3.0), 4.0);
    g.add_prior(VariableKey::clock(0), Value::Clock(4.0), NoiseModel::isotropic(1, 2.0).unwrap())
        .unwrap();
    for algorithm in [SolverAlgorithm::GaussNewton, SolverAlgorithm::LevenbergMarquardt] {
        let mut h = g.clone();
        let report = optimize(&mut h, &SolverConfig { algorithm, ..Default::default() }).unwrap();
        assert_eq!(report.iterations, 0);
        assert_eq!(report.final_cost, 0.0);
        assert!(report.converged);
        assert_eq!(h.values(), g.values());
    }
}

fn six_satellites(truth: Vector3<f64>) -> Vec<Vector3<f64>> {
    let frame = FrameRef::at_ecef(EcefCoord::from_vector(&truth)).unwrap();
    [(0.3, 0.0), (0.5, 1.1), (0.9, 2.3), (0.4, 3.3), (1.2, 4.4), (0.7, 5.5)]
        .iter()
        .map(|&(el, az): &(f64, f64)| {
            let dir = Vector3::new(el.cos() * az.sin(), el.cos() * az.cos(), el.sin());
            truth + frame.enu_vector_to_ecef(&dir) * 2.2e7
        })
        .collect()
}

const EPOCH_TRUTH: Vector3<f64> = Vector3::new(-2.42e6, 5.38e6, 2.41e6);

fn solve_epoch(corrupt: f64, kernel: Option<RobustKernel>, start: Vector3<f64>) -> (f64, usize, Vector3<f64>) {
    let truth = EPOCH_TRUTH;
    let clock = 35.0;
    let mut g = single_epoch(start, 0.0);
    // Orientation is unobserved by ranges; a loose pose prior fixes it.
    let pose = Value::Pose { orientation: nalgebra::Rotation3::identity(), position: start };
    g.add_prior(VariableKey::pose(0), pose, NoiseModel::diagonal(&[0.1, 0.1, 0.1, 1e7, 1e7, 1e7]).unwrap())
        .unwrap();
    for (i, s) in six_satellites(truth).iter().enumerate() {
        let rho = (s - truth).norm() + clock + if i == 2 { corrupt } else { 0.0 };
        g.add_pseudorange_factor(0, &obs(*s, rho, 1.0), kernel).unwrap();
    }
    let report = optimize(&mut g, &SolverConfig::default()).unwrap();
    let (_, p) = g.values().pose(0).unwrap();
    ((p - truth).norm(), report.iterations, p)
}

fn kilometre_off() -> Vector3<f64> {
    EPOCH_TRUTH + Vector3::new(600.0, -500.0, 600.0)
}

#[test]
fn noiseless_epoch_recovers_truth_from_a_kilometre_away() {
    let (err, iterations, _) = solve_epoch(0.0, None, kilometre_off());
    assert!(err < 1e-4, "error {err}");
    assert!(iterations <= 10, "{iterations} iterations");
}

#[test]
fn redescending_kernel_rejects_a_gross_pseudorange_error() {
    let (plain, _, l2_fix) = solve_epoch(500.0, None, kilometre_off());
    // A redescending kernel flattens every residual a kilometre out, so it
    // starts from the least-squares fix.
    let (robust, _, _) = solve_epoch(500.0, Some(RobustKernel::barron(-2.0, 1.0).unwrap()), l2_fix);
    assert!(robust < 0.1, "robust error {robust}");
    assert!(plain > 5.0, "L2 error {plain}");
}

fn clean_scenario(duration: f64, seed: u64) -> Scenario {
    let cfg = ScenarioConfig {
        duration,
        outlier_fraction: 0.0,
        seed,
        ..Default::default()
    };
    generate_scenario(&cfg).unwrap()
}

fn outlier_scenario(duration: f64, seed: u64) -> Scenario {
    let cfg = ScenarioConfig {
        duration,
        outlier_bursts: vec![[5, 15]],
        seed,
        ..Default::default()
    };
    generate_scenario(&cfg).unwrap().with_outliers()
}

fn truth_init(sc: &Scenario) -> Initialization {
    let first = sc.truth_at_epochs().points()[0].state;
    Initialization::State(InitialState {
        nav: first,
        bias: sc.biases[0],
        clock: sc.clock[0],
    })
}

/// Incremental graph identical in structure to the fusion loop, starting at
/// the true first state.
fn incremental(sc: &Scenario, kernel: Option<RobustKernel>, lag: usize, mut each: impl FnMut(usize, &FactorGraph)) -> FactorGraph {
    let noise = sc.config.imu_noise().unwrap();
    let first = sc.truth_at_epochs().points()[0].state;
    let gravity = sc.gravity;
    let mut g = FactorGraph::new();
    g.values_mut().insert_nav(0, &first);
    g.values_mut().insert_bias(0, &sc.biases[0]);
    g.values_mut().insert_clock(0, sc.clock[0]);
    let pose = Value::Pose { orientation: first.orientation, position: first.position };
    g.add_prior(VariableKey::pose(0), pose, NoiseModel::diagonal(&[0.02, 0.02, 0.02, 1.0, 1.0, 1.0]).unwrap())
        .unwrap();
    g.add_prior(VariableKey::velocity(0), Value::Velocity(first.velocity), NoiseModel::isotropic(3, 0.1).unwrap())
        .unwrap();
    g.add_prior(VariableKey::bias(0), Value::Bias(sc.biases[0]), NoiseModel::isotropic(6, 0.01).unwrap())
        .unwrap();
    g.add_prior(VariableKey::clock(0), Value::Clock(sc.clock[0]), NoiseModel::isotropic(1, 10.0).unwrap())
        .unwrap();
    let solver = SolverConfig { lag, ..Default::default() };
    for (k, epoch) in sc.observations.iter().enumerate() {
        if k > 0 {
            let prev = &sc.observations[k - 1];
            let bias = g.values().bias(k - 1).unwrap();
            let pim = PreintegratedImu::from_samples(&sc.imu, prev.t, epoch.t, bias, &noise).unwrap();
            let nav = predict_state(&g.values().nav_state(k - 1).unwrap(), &bias, &pim, &gravity);
            let clock = g.values().clock(k - 1).unwrap();
            g.values_mut().insert_nav(k, &nav);
            g.values_mut().insert_bias(k, &bias);
            g.values_mut().insert_clock(k, clock);
            g.add_imu_factor(k - 1, k, pim, gravity).unwrap();
            g.add_random_walk_factors(k - 1, k, &noise, epoch.t - prev.t, sc.config.clock_walk).unwrap();
        }
        for o in &epoch.observations {
            g.add_pseudorange_factor(k, o, kernel).unwrap();
        }
        slide_window(&mut g, k, lag).unwrap();
        let report = optimize(&mut g, &solver).unwrap();
        let mut prev = report.initial_cost;
        for l in &report.log {
            assert!(l.cost <= prev, "LM accepted an increasing step: {report}");
            prev = l.cost;
        }
        each(k, &g);
    }
    g
}

#[test]
fn lm_steps_never_increase_cost() {
    let kernel = RobustKernel::barron(-0.75, 1.2).unwrap();
    for seed in [3, 4] {
        incremental(&outlier_scenario(25.0, seed), Some(kernel), 0, |_, _| {});
    }
}

/// Translates every position so the trajectory starts at the origin. Ranges
/// and IMU residuals are unchanged, but rounding no longer scales with the
/// Earth radius.
fn recentred(mut sc: Scenario) -> Scenario {
    let origin = sc.truth.points()[0].state.position;
    let mut truth = gnssfuse::sim::Trajectory::default();
    for p in sc.truth.iter() {
        let mut s = p.state;
        s.position -= origin;
        truth.push(p.t, s).unwrap();
    }
    sc.truth = truth;
    for e in &mut sc.observations {
        for o in &mut e.observations {
            o.sat_position = EcefCoord::from_vector(&(o.sat_position.to_vector() - origin));
        }
    }
    sc
}

#[test]
fn converged_irls_solution_is_stationary() {
    let kernel = RobustKernel::barron(-0.75, 1.2).unwrap();
    let mut g = incremental(&recentred(outlier_scenario(20.0, 9)), Some(kernel), 0, |_, _| {});
    let cfg = SolverConfig { abs_tolerance: 1e-14, rel_tolerance: 1e-15, max_iterations: 200, ..Default::default() };
    optimize(&mut g, &cfg).unwrap();
    let (_, grad) = g.information_matrix().unwrap();
    assert!(grad.norm() <= 1e-6, "gradient norm {:e}", grad.norm());
}

#[test]
fn window_factor_count_is_bounded() {
    let sc = clean_scenario(40.0, 2);
    let lag = 5;
    let max_sats = sc.observations.iter().map(|e| e.observations.len()).max().unwrap();
    // IMU factor, bias walk, clock walk and the satellites of one epoch.
    let per_epoch = 3 + max_sats;
    incremental(&sc, None, lag, |k, g| {
        let epochs: std::collections::BTreeSet<usize> = g.values().iter().map(|(key, _)| key.epoch).collect();
        assert!(epochs.len() <= lag + 1);
        assert!(epochs.iter().all(|e| *e + lag >= k));
        assert!(g.num_factors() <= (lag + 1) * per_epoch, "epoch {k}: {} factors", g.num_factors());
    });
}

#[test]
fn long_lag_equals_full_batch_bitwise() {
    let sc = outlier_scenario(20.0, 5);
    let input = FusionInput { imu: &sc.imu, observations: &sc.observations, init: truth_init(&sc) };
    let mut cfg = FusionConfig { kernel: Some(RobustKernel::barron(-0.75, 1.2).unwrap()), ..Default::default() };
    let batch = run_fusion(&input, &cfg).unwrap();
    cfg.solver.lag = sc.observations.len() + 3;
    let windowed = run_fusion(&input, &cfg).unwrap();
    assert_eq!(batch.trajectory, windowed.trajectory);
    assert_eq!(batch.clocks, windowed.clocks);
}

#[test]
fn lag_one_final_epoch_stays_close_to_batch() {
    let sc = clean_scenario(60.0, 7);
    let truth = sc.truth_at_epochs();
    let last = truth.points().last().unwrap().state.position;
    let input = FusionInput { imu: &sc.imu, observations: &sc.observations, init: truth_init(&sc) };
    let mut cfg = FusionConfig::default();
    let batch = run_fusion(&input, &cfg).unwrap();
    cfg.solver.lag = 1;
    let windowed = run_fusion(&input, &cfg).unwrap();
    let err = |t: &gnssfuse::sim::Trajectory| (t.points().last().unwrap().state.position - last).norm();
    let (eb, ew) = (err(&batch.trajectory), err(&windowed.trajectory));
    assert!(ew <= 3.0 * eb, "lag-1 error {ew} vs batch {eb}");
}

#[test]
fn fusion_is_deterministic() {
    let sc = outlier_scenario(15.0, 8);
    let input = FusionInput { imu: &sc.imu, observations: &sc.observations, init: truth_init(&sc) };
    let cfg = FusionConfig { kernel: Some(RobustKernel::barron(-0.75, 1.2).unwrap()), ..Default::default() };
    let a = run_fusion(&input, &cfg).unwrap();
    let b = run_fusion(&input, &cfg).unwrap();
    assert_eq!(a.trajectory, b.trajectory);
    assert_eq!(a.clocks, b.clocks);
    assert_eq!(a.final_cost.to_bits(), b.final_cost.to_bits());
}
