//! Acceptance suite. Each test prints one `PASS` or `FAIL` line.
//!
//! Correctness suites (kernels, preintegration, zero-noise consistency,
//! determinism) assert their verdict. The scaled experiments (headline,
//! ordering, chi-square, timing) report their verdict and numbers without
//! asserting it, so that an honest miss is visible in the output rather than
//! hidden by tuning; they still fail the test on any runtime error.

use std::fs;
use std::path::Path;
use std::process::Command;
use std::sync::{Mutex, MutexGuard, OnceLock};
use std::time::Instant;

use gnssfuse::eval::{compute_metrics, ErrorMetrics, ErrorMode};
use gnssfuse::fusion::{
    run_ekf, run_fusion, run_wls, EstimatorOutput, FusionConfig, FusionInput, InitialState, Initialization,
    PriorSigmas,
};
use gnssfuse::nav::NavState;
use gnssfuse::preint::{
    predict_state, so3_exp, so3_log, GravityVector, ImuBias, ImuNoiseParams, ImuSample, PreintegratedImu,
};
use gnssfuse::robust::{barron_limit_check, BarronLimit, RobustKernel};
use gnssfuse::sim::{generate_scenario, Scenario, ScenarioConfig, Trajectory};
use nalgebra::Vector3;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

const SEEDS: [u64; 5] = [1, 2, 3, 4, 5];

/// Keeps wall-time measurements free of interference from other tests.
fn serial() -> MutexGuard<'static, ()> {
    static LOCK: Mutex<()> = Mutex::new(());
    LOCK.lock().unwrap_or_else(|e| e.into_inner())
}

fn verdict(name: &str, pass: bool, started: Instant, budget_s: f64, detail: &str) -> bool {
    let secs = started.elapsed().as_secs_f64();
    let tag = if pass { "PASS" } else { "FAIL" };
    println!("{tag} {name}: {detail} [{secs:.1} s, budget {budget_s:.0} s]");
    pass
}

fn median(mut v: Vec<f64>) -> f64 {
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

fn aligned_init(truth: &Trajectory) -> Initialization {
    let s = truth.first().unwrap().state;
    Initialization::Wls {
        velocity: s.velocity,
        orientation: s.orientation,
    }
}

fn kernel_examples() -> Vec<(&'static str, bool)> {
    let v = |k: RobustKernel, r: f64| k.eval(r).unwrap().value;
    let b = |a: f64, c: f64| RobustKernel::barron(a, c).unwrap();
    let mut checks = Vec::new();
    let origin = [(2.0, 1.0), (0.0, 0.7), (1.0, 1.5), (-3.0, 0.3), (f64::NEG_INFINITY, 2.0), (5.0, 1.0)]
        .iter()
        .all(|&(a, c)| {
            let e = b(a, c).eval(0.0).unwrap();
            e.value == 0.0 && e.derivative == 0.0
        });
    checks.push(("barron origin", origin));
    checks.push(("barron quadratic", v(b(2.0, 1.0), 3.0) == 4.5));
    checks.push(("barron cauchy branch", (v(b(0.0, 1.0), 2.0) - 1.098_612_288_668_109_8).abs() < 1e-12));
    checks.push(("barron alpha 1", (v(b(1.0, 1.0), 1.0) - (2f64.sqrt() - 1.0)).abs() < 1e-12));
    checks.push(("barron welsch", (v(b(f64::NEG_INFINITY, 1.0), 100.0) - 1.0).abs() < 1e-12));
    checks.push(("huber quadratic", v(RobustKernel::huber(1.0).unwrap(), 0.5) == 0.125));
    checks.push(("huber linear", v(RobustKernel::huber(1.0).unwrap(), 2.0) == 1.5));
    checks.push(("tukey saturation", (v(RobustKernel::tukey(1.0).unwrap(), 5.0) - 1.0 / 6.0).abs() < 1e-15));
    checks.push(("cauchy", (v(RobustKernel::cauchy(1.0).unwrap(), 1.0) - 0.5 * 2f64.ln()).abs() < 1e-12));
    let q = barron_limit_check(2.0 - 1e-6, 1.0, 1.0).unwrap();
    checks.push(("limit alpha->2", q.limit == BarronLimit::Quadratic && q.abs_diff <= 1e-5));
    let ca = barron_limit_check(1e-8, 1.0, 2.0).unwrap();
    checks.push(("limit alpha->0", ca.limit == BarronLimit::Cauchy && ca.abs_diff <= 1e-6));
    let w = barron_limit_check(-1e6, 1.0, 1.0).unwrap();
    checks.push(("limit alpha->-inf", w.limit == BarronLimit::Welsch && w.abs_diff <= 1e-4));
    checks
}

/// Largest scaled gap between the analytic derivative and a central
/// difference with step 1e-5, over random kernels and residuals.
fn kernel_fd_max_error(samples: usize) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let h = 1e-5;
    let mut worst: f64 = 0.0;
    for i in 0..samples {
        let c = rng.random_range(0.1..2.0);
        let (k, boundary) = match i % 8 {
            0 => (RobustKernel::huber(c).unwrap(), Some(c)),
            1 => (RobustKernel::tukey(c).unwrap(), Some(c)),
            2 => (RobustKernel::cauchy(c).unwrap(), None),
            3 => (RobustKernel::barron(f64::NEG_INFINITY, c).unwrap(), None),
            _ => (RobustKernel::barron(rng.random_range(-10.0..10.0), c).unwrap(), None),
        };
        let mut r = rng.random_range(-10.0 * c..10.0 * c);
        if let Some(t) = boundary {
            // Step away from the kink where the closed forms switch.
            while (r.abs() - t).abs() < 10.0 * h {
                r = rng.random_range(-10.0 * c..10.0 * c);
            }
        }
        let d = k.eval(r).unwrap().derivative;
        let fd = (k.eval(r + h).unwrap().value - k.eval(r - h).unwrap().value) / (2.0 * h);
        worst = worst.max((d - fd).abs() / d.abs().max(1.0));
    }
    worst
}

#[test]
fn kernel_correctness() {
    let _guard = serial();
    let started = Instant::now();
    let examples = kernel_examples();
    let failed: Vec<&str> = examples.iter().filter(|(_, ok)| !ok).map(|(n, _)| *n).collect();
    let fd = kernel_fd_max_error(10_000);
    let pass = failed.is_empty() && fd <= 1e-6;
    let detail = format!(
        "{} examples and limits, {} failing {failed:?}; derivative vs finite difference over 10^4 samples, max rel err {fd:.2e} (<= 1e-6)",
        examples.len(),
        failed.len()
    );
    assert!(verdict("kernel-correctness", pass, started, 5.0, &detail));
}

fn dead_reckon(start: &NavState, samples: &[ImuSample], dt: f64, g: &Vector3<f64>) -> NavState {
    let mut s = *start;
    for smp in samples {
        let acc = s.orientation * smp.accel;
        s.position += s.velocity * dt + 0.5 * (g + acc) * dt * dt;
        s.velocity += (g + acc) * dt;
        s.orientation *= so3_exp(&(smp.gyro * dt));
    }
    s
}

#[test]
fn preintegration_oracle() {
    let _guard = serial();
    let started = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(17);
    let dt = 1e-4;
    let g = GravityVector::default();
    let noise = ImuNoiseParams::default();
    let (mut worst_p, mut worst_r): (f64, f64) = (0.0, 0.0);
    for _ in 0..20 {
        let w: [f64; 6] = std::array::from_fn(|_| rng.random_range(-1.0..1.0));
        let samples: Vec<ImuSample> = (0..100_000)
            .map(|k| {
                let t = k as f64 * dt;
                ImuSample {
                    t,
                    gyro: Vector3::new(0.4 * (w[0] * t).sin(), 0.3 * w[1], 0.5 * (w[2] * t).cos()),
                    accel: Vector3::new(w[3] + 0.5 * t.sin(), w[4] * (0.5 * t).cos(), 9.81 + w[5]),
                }
            })
            .collect();
        let start = NavState::new(
            Vector3::new(rng.random_range(-50.0..50.0), rng.random_range(-50.0..50.0), 0.0),
            Vector3::new(rng.random_range(-5.0..5.0), rng.random_range(-5.0..5.0), 0.0),
            so3_exp(&Vector3::new(0.05, -0.03, rng.random_range(-3.0..3.0))),
        );
        let mut state = start;
        for chunk in samples.chunks(10_000) {
            let mut pim = PreintegratedImu::new(ImuBias::default());
            for s in chunk {
                pim.integrate_sample(s, dt, &noise).unwrap();
            }
            state = predict_state(&state, &ImuBias::default(), &pim, &g);
        }
        let oracle = dead_reckon(&start, &samples, dt, g.vector());
        worst_p = worst_p.max((state.position - oracle.position).amax());
        worst_r = worst_r.max(so3_log(&(oracle.orientation.inverse() * state.orientation)).norm());
    }
    let pass = worst_p <= 1e-6 && worst_r <= 1e-8;
    let detail = format!("20 trajectories of 10 s at dt 1e-4: max position err {worst_p:.2e} m, rotation err {worst_r:.2e} rad");
    assert!(verdict("preintegration-oracle", pass, started, 30.0, &detail));
}

#[test]
fn zero_noise_consistency() {
    let _guard = serial();
    let started = Instant::now();
    let cfg = ScenarioConfig {
        duration: 60.0,
        gyro_noise_density: 0.0,
        accel_noise_density: 0.0,
        gyro_bias_walk: 0.0,
        accel_bias_walk: 0.0,
        initial_gyro_bias: [0.0; 3],
        initial_accel_bias: [0.0; 3],
        pseudorange_sigma: 0.0,
        outlier_fraction: 0.0,
        clock_walk: 0.0,
        ..Default::default()
    };
    let sc = generate_scenario(&cfg).unwrap();
    let truth = sc.truth_at_epochs();
    let input = FusionInput {
        imu: &sc.imu,
        observations: &sc.observations,
        init: aligned_init(&truth),
    };
    let fc = FusionConfig::default();
    let worst = |out: &EstimatorOutput| {
        assert_eq!(out.trajectory.len(), truth.len());
        out.trajectory
            .iter()
            .zip(truth.iter())
            .map(|(e, t)| (e.state.position - t.state.position).norm())
            .fold(0.0, f64::max)
    };
    let rfgo = FusionConfig {
        kernel: Some(RobustKernel::barron(-0.75, 1.2).unwrap()),
        ..fc.clone()
    };
    let results = [
        ("WLS", worst(&run_wls(&sc.observations).unwrap())),
        ("EKF", worst(&run_ekf(&input, &fc, 5.0).unwrap())),
        ("SFGO", worst(&run_fusion(&input, &fc).unwrap())),
        ("RFGO", worst(&run_fusion(&input, &rfgo).unwrap())),
    ];
    let pass = results.iter().all(|(_, e)| *e <= 1e-3);
    let detail = results
        .iter()
        .map(|(n, e)| format!("{n} {e:.1e} m"))
        .collect::<Vec<_>>()
        .join(", ");
    let detail = format!("max 3-D error over {} epochs: {detail} (<= 1e-3 m)", truth.len());
    assert!(verdict("zero-noise-consistency", pass, started, 60.0, &detail));
}

struct SeedResult {
    seed: u64,
    sfgo: ErrorMetrics,
    rfgo: ErrorMetrics,
    huber: ErrorMetrics,
    cauchy: ErrorMetrics,
    tukey: ErrorMetrics,
    rfgo_epoch_seconds: f64,
}

fn default_scenario(seed: u64) -> Scenario {
    let cfg = ScenarioConfig {
        seed,
        ..Default::default()
    };
    generate_scenario(&cfg).unwrap().with_outliers()
}

fn run_seed(seed: u64) -> SeedResult {
    let sc = default_scenario(seed);
    let truth = sc.truth_at_epochs();
    let input = FusionInput {
        imu: &sc.imu,
        observations: &sc.observations,
        init: aligned_init(&truth),
    };
    let run = |kernel: Option<RobustKernel>| {
        let cfg = FusionConfig {
            kernel,
            ..Default::default()
        };
        let out = run_fusion(&input, &cfg).unwrap();
        let m = compute_metrics(&out.trajectory, &truth, ErrorMode::Horizontal).unwrap();
        (m, out.mean_epoch_seconds())
    };
    let (rfgo, rfgo_epoch_seconds) = run(Some(RobustKernel::barron(-0.75, 1.2).unwrap()));
    SeedResult {
        seed,
        sfgo: run(None).0,
        rfgo,
        huber: run(Some(RobustKernel::huber(1.345).unwrap())).0,
        cauchy: run(Some(RobustKernel::cauchy(2.3849).unwrap())).0,
        tukey: run(Some(RobustKernel::tukey(4.6851).unwrap())).0,
        rfgo_epoch_seconds,
    }
}

/// Full-batch runs on the five default scenarios, shared by the headline,
/// ordering and timing criteria. Callers hold the serial lock.
fn seed_results() -> &'static [SeedResult] {
    static CACHE: OnceLock<Vec<SeedResult>> = OnceLock::new();
    CACHE.get_or_init(|| SEEDS.iter().map(|&s| run_seed(s)).collect())
}

#[test]
fn robustness_headline() {
    let _guard = serial();
    let started = Instant::now();
    let results = seed_results();
    for r in results {
        println!(
            "  seed {}: RMSE SFGO {:.3} RFGO {:.3} (ratio {:.3}); MaxE SFGO {:.3} RFGO {:.3} (ratio {:.3})",
            r.seed,
            r.sfgo.rmse,
            r.rfgo.rmse,
            r.rfgo.rmse / r.sfgo.rmse,
            r.sfgo.max_error,
            r.rfgo.max_error,
            r.rfgo.max_error / r.sfgo.max_error
        );
    }
    let worst_rmse = results.iter().map(|r| r.rfgo.rmse / r.sfgo.rmse).fold(0.0, f64::max);
    let max_ratio = median(results.iter().map(|r| r.rfgo.max_error / r.sfgo.max_error).collect());
    let of_medians = median(results.iter().map(|r| r.rfgo.max_error).collect())
        / median(results.iter().map(|r| r.sfgo.max_error).collect());
    let pass = worst_rmse <= 0.7 && max_ratio <= 0.6 && of_medians <= 0.6;
    let detail = format!(
        "2-D RMSE ratio RFGO/SFGO worst over 5 seeds {worst_rmse:.3} (<= 0.7); MaxE ratio median over seeds {max_ratio:.3}, ratio of median MaxE {of_medians:.3} (both <= 0.6)"
    );
    verdict("robustness-headline", pass, started, 600.0, &detail);
}

#[test]
fn m_estimator_ordering() {
    let _guard = serial();
    let started = Instant::now();
    let results = seed_results();
    let med = |f: fn(&SeedResult) -> f64| median(results.iter().map(f).collect());
    let rfgo = med(|r| r.rfgo.rmse);
    let cauchy = med(|r| r.cauchy.rmse);
    let huber = med(|r| r.huber.rmse);
    let tukey = med(|r| r.tukey.rmse);
    for r in results {
        println!(
            "  seed {}: RMSE RFGO {:.3} Cauchy {:.3} Huber {:.3} Tukey {:.3}",
            r.seed, r.rfgo.rmse, r.cauchy.rmse, r.huber.rmse, r.tukey.rmse
        );
    }
    let pass = rfgo <= cauchy && cauchy <= huber && rfgo <= tukey;
    let detail = format!(
        "median 2-D RMSE RFGO {rfgo:.3}, Cauchy {cauchy:.3}, Huber {huber:.3}, Tukey {tukey:.3}; need RFGO <= Cauchy <= Huber and RFGO <= Tukey"
    );
    verdict("m-estimator-ordering", pass, started, 1200.0, &detail);
}

/// Truth perturbed by the prior covariance, so that the prior factor
/// contributes its share of chi-square.
fn sampled_init(sc: &Scenario, p: &PriorSigmas, rng: &mut ChaCha8Rng) -> Initialization {
    let mut n3 = |s: f64| Vector3::from_fn(|_, _| s * rng.sample::<f64, _>(StandardNormal));
    let t = sc.truth_at_epochs().first().unwrap().state;
    let nav = NavState::new(
        t.position + n3(p.position),
        t.velocity + n3(p.velocity),
        t.orientation * so3_exp(&n3(p.attitude)),
    );
    let bias = ImuBias::new(sc.biases[0].gyro + n3(p.gyro_bias), sc.biases[0].accel + n3(p.accel_bias));
    let clock = sc.clock[0] + n3(p.clock).x;
    Initialization::State(InitialState { nav, bias, clock })
}

#[test]
fn chi_square_sanity() {
    let _guard = serial();
    let started = Instant::now();
    let priors = PriorSigmas {
        position: 1.0,
        clock: 10.0,
        ..Default::default()
    };
    let mut rng = ChaCha8Rng::seed_from_u64(99);
    let (mut outside, mut cost_sum, mut dof_sum) = (0, 0.0, 0.0);
    let seeds = 100;
    for seed in 0..seeds {
        let cfg = ScenarioConfig {
            duration: 20.0,
            outlier_fraction: 0.0,
            seed: 1000 + seed,
            ..Default::default()
        };
        let sc = generate_scenario(&cfg).unwrap();
        let fc = FusionConfig {
            imu_noise: cfg.imu_noise().unwrap(),
            clock_walk: cfg.clock_walk,
            priors,
            ..Default::default()
        };
        let input = FusionInput {
            imu: &sc.imu,
            observations: &sc.observations,
            init: sampled_init(&sc, &priors, &mut rng),
        };
        let out = run_fusion(&input, &fc).unwrap();
        let half = out.residual_dof as f64 / 2.0;
        if (out.final_cost - half).abs() > 3.0 * half.sqrt() {
            outside += 1;
        }
        cost_sum += out.final_cost;
        dof_sum += out.residual_dof as f64;
    }
    // The summed cost of independent runs is half a chi-square with the
    // summed degrees of freedom.
    let z = (cost_sum - dof_sum / 2.0) / (dof_sum / 2.0).sqrt();
    let pass = z.abs() <= 3.0;
    let detail = format!(
        "SFGO on {seeds} clean scenarios: pooled cost {cost_sum:.1} vs dof/2 {:.1}, z = {z:.2} (|z| <= 3); {outside} single runs outside their own 3 sigma",
        dof_sum / 2.0
    );
    verdict("chi-square-sanity", pass, started, 900.0, &detail);
}

#[test]
fn timing_ordering() {
    let _guard = serial();
    let started = Instant::now();
    let full = seed_results()[0].rfgo_epoch_seconds;
    let sc = default_scenario(SEEDS[0]);
    let truth = sc.truth_at_epochs();
    let input = FusionInput {
        imu: &sc.imu,
        observations: &sc.observations,
        init: aligned_init(&truth),
    };
    let mut cfg = FusionConfig {
        kernel: Some(RobustKernel::barron(-0.75, 1.2).unwrap()),
        ..Default::default()
    };
    let ekf = run_ekf(&input, &cfg, 5.0).unwrap().mean_epoch_seconds();
    cfg.solver.lag = 10;
    let window = run_fusion(&input, &cfg).unwrap().mean_epoch_seconds();
    let pass = ekf < window && window < full;
    let detail = format!(
        "mean s/epoch EKF {ekf:.5}, RFGO lag 10 {window:.5}, RFGO full batch {full:.5}; ratios window/EKF {:.1}, batch/window {:.1}",
        window / ekf,
        full / window
    );
    verdict("timing-ordering", pass, started, 600.0, &detail);
}

fn cli(dir: &Path, args: &[&str]) {
    let out = Command::new(env!("CARGO_BIN_EXE_gnssfuse"))
        .current_dir(dir)
        .args(args)
        .output()
        .unwrap();
    assert!(out.status.success(), "{args:?}: {}", String::from_utf8_lossy(&out.stderr));
}

fn pipeline(dir: &Path) -> Vec<(String, Vec<u8>)> {
    fs::write(dir.join("s.cfg"), "duration = 30.0\noutlier_bursts = [[8, 16]]\n").unwrap();
    let runs: [&[&str]; 11] = [
        &["simulate", "--config", "s.cfg", "--out", "data", "--seed", "3"],
        &["fuse", "--mode", "tc", "--loss", "barron", "--in", "data", "--out", "rfgo.csv"],
        &["fuse", "--mode", "tc", "--loss", "barron", "--window", "10", "--in", "data", "--out", "rfgo_w.csv"],
        &["fuse", "--mode", "tc", "--loss", "l2", "--in", "data", "--out", "sfgo.csv"],
        &["fuse", "--mode", "lc", "--loss", "cauchy", "--in", "data", "--out", "lc.csv"],
        &["baseline", "--kind", "ekf", "--in", "data", "--out", "ekf.csv"],
        &["baseline", "--kind", "wls", "--in", "data", "--out", "wls.csv"],
        &["tune", "--in", "data", "--alphas=-2,-0.5,1", "--cs", "0.6,1.2", "--window", "10", "--out", "tune.csv"],
        &["tune", "--in", "data", "--objective", "residual-mse", "--alphas=-1,1", "--cs", "1", "--window", "10", "--out", "tune_mse.csv"],
        &["eval", "--est", "rfgo.csv", "--truth", "data/truth.csv", "--report", "rep.txt", "--metrics", "m.csv", "--errors", "e.csv"],
        &["cdf", "--est", "sfgo.csv", "--truth", "data/truth.csv", "--out", "cdf.csv", "--pdf", "pdf.csv", "--percentiles", "p.csv"],
    ];
    for args in runs {
        cli(dir, args);
    }
    let mut files = Vec::new();
    for sub in [dir.to_path_buf(), dir.join("data")] {
        for entry in fs::read_dir(&sub).unwrap() {
            let path = entry.unwrap().path();
            if path.is_file() {
                let rel = path.strip_prefix(dir).unwrap().display().to_string();
                files.push((rel, fs::read(&path).unwrap()));
            }
        }
    }
    files.sort();
    files
}

#[test]
fn cli_determinism() {
    let _guard = serial();
    let started = Instant::now();
    let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    let fa = pipeline(a.path());
    let fb = pipeline(b.path());
    let same_names = fa.iter().map(|f| &f.0).eq(fb.iter().map(|f| &f.0));
    let differing: Vec<&str> = fa
        .iter()
        .zip(&fb)
        .filter(|(x, y)| x.1 != y.1)
        .map(|(x, _)| x.0.as_str())
        .collect();
    let pass = same_names && differing.is_empty();
    let detail = format!(
        "{} output files from simulate, fuse, baseline, tune, eval and cdf; {} differ between repeated runs {differing:?}",
        fa.len(),
        differing.len()
    );
    assert!(verdict("cli-determinism", pass, started, 600.0, &detail));
}
