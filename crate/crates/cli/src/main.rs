use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::error::ErrorKind;
use clap::{CommandFactory, Parser, Subcommand, ValueEnum};
use gnssfuse::eval::{
    compute_cdf, compute_metrics, default_alpha_grid, default_c_grid, grid_search, pdf_histogram, position_errors,
    ErrorMode, Objective, TuneResult, DEFAULT_HISTOGRAM_BINS,
};
use gnssfuse::fusion::{run_ekf, run_fusion, run_wls, CouplingMode, EstimatorOutput, FusionConfig, FusionInput, Initialization};
use gnssfuse::robust::{
    RobustKernel, DEFAULT_BARRON_ALPHA, DEFAULT_BARRON_SCALE, DEFAULT_CAUCHY_SCALE, DEFAULT_HUBER_THRESHOLD,
    DEFAULT_TUKEY_THRESHOLD,
};
use gnssfuse::sim::io::{
    fmt_f64, load_imu_csv, load_obs_csv, load_trajectory_csv, load_truth_csv, write_imu_csv, write_metrics,
    write_obs_csv, write_solution_csv,
};
use gnssfuse::sim::{generate_scenario, ScenarioConfig, Trajectory};

const IMU_FILE: &str = "imu.csv";
const OBS_FILE: &str = "obs.csv";
const TRUTH_FILE: &str = "truth.csv";
const INIT_FILE: &str = "init.csv";
const CONFIG_FILE: &str = "scenario.cfg";
const OUTLIER_FILE: &str = "outliers.csv";

#[derive(Parser)]
#[command(name = "gnssfuse", version, about = "GNSS/IMU factor-graph fusion toolkit")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic data set into a directory.
    Simulate {
        /// Scenario file (`key = value` lines); defaults apply when omitted.
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        /// Overrides the seed in the scenario file.
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Run the factor-graph estimator on a data directory.
    Fuse {
        #[command(flatten)]
        data: DataArgs,
        #[arg(long, value_enum, default_value_t = Mode::Tc)]
        mode: Mode,
        #[arg(long, value_enum, default_value_t = Loss::Barron)]
        loss: Loss,
        /// Barron shape.
        #[arg(long, allow_hyphen_values = true)]
        alpha: Option<f64>,
        /// Barron scale.
        #[arg(long)]
        c: Option<f64>,
        /// Threshold or scale of the Huber, Tukey or Cauchy kernel.
        #[arg(long)]
        k: Option<f64>,
        /// Sliding-window lag in epochs; 0 solves the full batch.
        #[arg(long, default_value_t = 0)]
        window: usize,
        #[arg(long)]
        out: PathBuf,
        /// Per-epoch wall time (not reproducible, so kept out of `--out`).
        #[arg(long)]
        timing: Option<PathBuf>,
    },
    /// Run a baseline estimator on a data directory.
    Baseline {
        #[command(flatten)]
        data: DataArgs,
        #[arg(long, value_enum)]
        kind: BaselineKind,
        /// EKF innovation gate in standard deviations.
        #[arg(long, default_value_t = 5.0)]
        gate: f64,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        timing: Option<PathBuf>,
    },
    /// Grid-search the Barron parameters.
    Tune {
        #[command(flatten)]
        data: DataArgs,
        /// Defaults to gt-rmse when the directory holds a truth file.
        #[arg(long, value_enum)]
        objective: Option<ObjectiveArg>,
        #[arg(long, value_enum, default_value_t = Mode::Tc)]
        mode: Mode,
        /// Comma-separated shape values.
        #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
        alphas: Option<Vec<f64>>,
        /// Comma-separated scale values.
        #[arg(long, value_delimiter = ',')]
        cs: Option<Vec<f64>>,
        #[arg(long, default_value_t = 0)]
        window: usize,
        /// Grid table as CSV.
        #[arg(long)]
        out: PathBuf,
    },
    /// Error metrics of an estimate against truth.
    Eval {
        #[command(flatten)]
        cmp: CompareArgs,
        /// Plain-text report.
        #[arg(long)]
        report: PathBuf,
        /// Metrics as `metric,value` CSV.
        #[arg(long)]
        metrics: Option<PathBuf>,
        /// Per-epoch errors as CSV.
        #[arg(long)]
        errors: Option<PathBuf>,
        /// Timing file from `fuse` or `baseline` to summarize.
        #[arg(long)]
        timing: Option<PathBuf>,
    },
    /// Error distribution of an estimate against truth.
    Cdf {
        #[command(flatten)]
        cmp: CompareArgs,
        /// Empirical CDF as `threshold,fraction` CSV.
        #[arg(long)]
        out: PathBuf,
        /// Histogram density as CSV.
        #[arg(long)]
        pdf: Option<PathBuf>,
        #[arg(long, default_value_t = DEFAULT_HISTOGRAM_BINS)]
        bins: usize,
        /// Percentile table as CSV.
        #[arg(long)]
        percentiles: Option<PathBuf>,
    },
}

#[derive(clap::Args)]
struct DataArgs {
    /// Directory written by `simulate` or laid out the same way.
    #[arg(long = "in")]
    input: PathBuf,
}

#[derive(clap::Args)]
struct CompareArgs {
    #[arg(long)]
    est: PathBuf,
    #[arg(long)]
    truth: PathBuf,
    #[arg(long = "error-mode", value_enum, default_value_t = Dims::TwoD)]
    dims: Dims,
}

#[derive(Clone, Copy, ValueEnum)]
enum Mode {
    Lc,
    Tc,
}

#[derive(Clone, Copy, ValueEnum)]
enum Loss {
    L2,
    Huber,
    Tukey,
    Cauchy,
    Barron,
}

#[derive(Clone, Copy, ValueEnum)]
enum BaselineKind {
    Wls,
    Ekf,
}

#[derive(Clone, Copy, ValueEnum)]
enum ObjectiveArg {
    ResidualMse,
    GtRmse,
}

#[derive(Clone, Copy, ValueEnum)]
enum Dims {
    #[value(name = "2d")]
    TwoD,
    #[value(name = "3d")]
    ThreeD,
}

impl From<Mode> for CouplingMode {
    fn from(m: Mode) -> Self {
        match m {
            Mode::Lc => CouplingMode::Loose,
            Mode::Tc => CouplingMode::Tight,
        }
    }
}

impl From<Dims> for ErrorMode {
    fn from(d: Dims) -> Self {
        match d {
            Dims::TwoD => ErrorMode::Horizontal,
            Dims::ThreeD => ErrorMode::Full3D,
        }
    }
}

fn usage_error(msg: impl std::fmt::Display) -> ! {
    Cli::command().error(ErrorKind::ValueValidation, msg).exit()
}

fn kernel(loss: Loss, alpha: Option<f64>, c: Option<f64>, k: Option<f64>) -> RobustKernel {
    let barron = matches!(loss, Loss::Barron);
    if !barron && (alpha.is_some() || c.is_some()) {
        usage_error("--alpha and --c apply only to --loss barron");
    }
    if (barron || matches!(loss, Loss::L2)) && k.is_some() {
        usage_error("--k applies only to --loss huber, tukey or cauchy");
    }
    let built = match loss {
        Loss::L2 => Ok(RobustKernel::l2()),
        Loss::Huber => RobustKernel::huber(k.unwrap_or(DEFAULT_HUBER_THRESHOLD)),
        Loss::Tukey => RobustKernel::tukey(k.unwrap_or(DEFAULT_TUKEY_THRESHOLD)),
        Loss::Cauchy => RobustKernel::cauchy(k.unwrap_or(DEFAULT_CAUCHY_SCALE)),
        Loss::Barron => RobustKernel::barron(alpha.unwrap_or(DEFAULT_BARRON_ALPHA), c.unwrap_or(DEFAULT_BARRON_SCALE)),
    };
    built.unwrap_or_else(|e| usage_error(e))
}

struct Dataset {
    imu: Vec<gnssfuse::preint::ImuSample>,
    observations: Vec<gnssfuse::sim::EpochObservations>,
    init: Initialization,
    config: FusionConfig,
}

impl Dataset {
    fn load(dir: &Path) -> Result<Self> {
        let imu = read(&dir.join(IMU_FILE), load_imu_csv)?;
        let observations = read(&dir.join(OBS_FILE), load_obs_csv)?;
        // Initial alignment: velocity and attitude only; position and clock
        // come from a WLS fix on the first epoch.
        let init_path = dir.join(INIT_FILE);
        let init = if init_path.exists() {
            let t = read(&init_path, load_trajectory_csv)?;
            let s = t.first().context("initial alignment file has no rows")?.state;
            Initialization::Wls {
                velocity: s.velocity,
                orientation: s.orientation,
            }
        } else {
            Initialization::default()
        };
        let mut config = FusionConfig::default();
        let cfg_path = dir.join(CONFIG_FILE);
        if cfg_path.exists() {
            let sc = read(&cfg_path, ScenarioConfig::load)?;
            match sc.imu_noise() {
                Ok(noise) => config.imu_noise = noise,
                Err(e) => eprintln!("warning: {e}; using default IMU noise"),
            }
            if sc.clock_walk > 0.0 {
                config.clock_walk = sc.clock_walk;
            }
        }
        Ok(Self {
            imu,
            observations,
            init,
            config,
        })
    }

    fn input(&self) -> FusionInput<'_> {
        FusionInput {
            imu: &self.imu,
            observations: &self.observations,
            init: self.init,
        }
    }
}

/// Wraps a loader so that its errors name the file.
fn read<T>(path: &Path, load: fn(&Path) -> gnssfuse::error::Result<T>) -> Result<T> {
    load(path).with_context(|| format!("reading {}", path.display()))
}

fn write_timing(path: &Path, out: &EstimatorOutput) -> Result<()> {
    let mut s = String::from("t,seconds\n");
    for (p, secs) in out.trajectory.iter().zip(&out.epoch_seconds) {
        writeln!(s, "{},{}", fmt_f64(p.t), fmt_f64(*secs))?;
    }
    fs::write(path, s).with_context(|| format!("writing {}", path.display()))
}

fn load_timing(path: &Path) -> Result<Vec<f64>> {
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    text.lines()
        .skip(1)
        .filter(|l| !l.trim().is_empty())
        .enumerate()
        .map(|(i, l)| {
            l.split(',')
                .nth(1)
                .and_then(|v| v.trim().parse::<f64>().ok())
                .with_context(|| format!("{}:{}: malformed timing row", path.display(), i + 2))
        })
        .collect()
}

fn finish(out: &EstimatorOutput, path: &Path, timing: Option<&Path>) -> Result<()> {
    write_solution_csv(path, &out.trajectory)?;
    if let Some(t) = timing {
        write_timing(t, out)?;
    }
    eprintln!(
        "{} epochs, mean {:.6} s/epoch, median {:.6} s/epoch",
        out.trajectory.len(),
        out.mean_epoch_seconds(),
        out.median_epoch_seconds()
    );
    Ok(())
}

fn write_outliers(path: &Path, sc: &gnssfuse::sim::Scenario) -> Result<()> {
    let mut s = String::from("t,sat_id,bias\n");
    for (e, epoch) in sc.observations.iter().enumerate() {
        for (i, o) in epoch.observations.iter().enumerate() {
            if let Some(b) = sc.outliers.biases[e][i] {
                writeln!(s, "{},{},{}", fmt_f64(epoch.t), o.sat_id, fmt_f64(b))?;
            }
        }
    }
    fs::write(path, s).with_context(|| format!("writing {}", path.display()))
}

fn simulate(config: Option<&Path>, out: &Path, seed: Option<u64>) -> Result<()> {
    let mut cfg = match config {
        Some(p) => read(p, ScenarioConfig::load)?,
        None => ScenarioConfig::default(),
    };
    if let Some(s) = seed {
        cfg.seed = s;
    }
    let sc = generate_scenario(&cfg)?.with_outliers();
    fs::create_dir_all(out).with_context(|| format!("creating {}", out.display()))?;
    write_imu_csv(&out.join(IMU_FILE), &sc.imu)?;
    write_obs_csv(&out.join(OBS_FILE), &sc.observations)?;
    let truth = sc.truth_at_epochs();
    write_solution_csv(&out.join(TRUTH_FILE), &truth)?;
    let first = Trajectory::new(truth.points()[..1].to_vec())?;
    write_solution_csv(&out.join(INIT_FILE), &first)?;
    fs::write(out.join(CONFIG_FILE), cfg.to_toml_string())?;
    write_outliers(&out.join(OUTLIER_FILE), &sc)?;
    eprintln!(
        "{} IMU samples, {} epochs, {} outliers",
        sc.imu.len(),
        sc.observations.len(),
        sc.outliers.count()
    );
    Ok(())
}

fn tune_table(tr: &TuneResult) -> String {
    let mut s = String::from("alpha,c,objective,status\n");
    for cell in &tr.cells {
        match &cell.outcome {
            Ok(v) => writeln!(s, "{},{},{},ok", cell.alpha, cell.c, fmt_f64(*v)),
            Err(e) => writeln!(s, "{},{},,failed: {}", cell.alpha, cell.c, e.replace(',', ";")),
        }
        .unwrap();
    }
    s
}

fn eval_report(m: &gnssfuse::eval::ErrorMetrics, dims: Dims, timing: Option<&[f64]>) -> String {
    let mut s = String::new();
    let label = match dims {
        Dims::TwoD => "2d",
        Dims::ThreeD => "3d",
    };
    writeln!(s, "error_mode {label}").unwrap();
    for (name, v) in m.fields() {
        match name {
            "count" | "unmatched" => writeln!(s, "{name} {}", v as usize),
            _ => writeln!(s, "{name} {v:.6}"),
        }
        .unwrap();
    }
    if let Some(t) = timing {
        let mean = if t.is_empty() { 0.0 } else { t.iter().sum::<f64>() / t.len() as f64 };
        writeln!(s, "mean_epoch_seconds {mean:.6}").unwrap();
        writeln!(s, "median_epoch_seconds {:.6}", gnssfuse::fusion::median(t)).unwrap();
    }
    s
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Simulate { config, out, seed } => simulate(config.as_deref(), &out, seed),
        Command::Fuse {
            data,
            mode,
            loss,
            alpha,
            c,
            k,
            window,
            out,
            timing,
        } => {
            let kernel = kernel(loss, alpha, c, k);
            let ds = Dataset::load(&data.input)?;
            let mut cfg = ds.config.clone();
            cfg.mode = mode.into();
            cfg.kernel = (!matches!(loss, Loss::L2)).then_some(kernel);
            cfg.solver.lag = window;
            let res = run_fusion(&ds.input(), &cfg)?;
            finish(&res, &out, timing.as_deref())
        }
        Command::Baseline {
            data,
            kind,
            gate,
            out,
            timing,
        } => {
            if !(gate > 0.0) {
                usage_error("--gate must be positive");
            }
            let ds = Dataset::load(&data.input)?;
            let res = match kind {
                BaselineKind::Wls => run_wls(&ds.observations)?,
                BaselineKind::Ekf => run_ekf(&ds.input(), &ds.config, gate)?,
            };
            finish(&res, &out, timing.as_deref())
        }
        Command::Tune {
            data,
            objective,
            mode,
            alphas,
            cs,
            window,
            out,
        } => {
            let ds = Dataset::load(&data.input)?;
            let truth_path = data.input.join(TRUTH_FILE);
            let objective = objective.unwrap_or(if truth_path.exists() {
                ObjectiveArg::GtRmse
            } else {
                ObjectiveArg::ResidualMse
            });
            let truth = match objective {
                ObjectiveArg::GtRmse => Some(read(&truth_path, load_truth_csv)?),
                ObjectiveArg::ResidualMse => None,
            };
            let objective = match &truth {
                Some(t) => Objective::GroundTruthRmse(t),
                None => Objective::ResidualMse,
            };
            let mut cfg = ds.config.clone();
            cfg.mode = mode.into();
            cfg.solver.lag = window;
            let alphas = alphas.unwrap_or_else(default_alpha_grid);
            let cs = cs.unwrap_or_else(default_c_grid);
            let tr = grid_search(&ds.input(), &cfg, &alphas, &cs, objective)?;
            fs::write(&out, tune_table(&tr)).with_context(|| format!("writing {}", out.display()))?;
            println!("objective {}", tr.objective);
            println!("best_alpha {}", tr.best_alpha);
            println!("best_c {}", tr.best_c);
            println!("best_value {:.6}", tr.best_value);
            println!("failed_cells {}", tr.failed().count());
            Ok(())
        }
        Command::Eval {
            cmp,
            report,
            metrics,
            errors,
            timing,
        } => {
            let est = read(&cmp.est, load_trajectory_csv)?;
            let truth = read(&cmp.truth, load_truth_csv)?;
            let m = compute_metrics(&est, &truth, cmp.dims.into())?;
            let timing = timing.as_deref().map(load_timing).transpose()?;
            let text = eval_report(&m, cmp.dims, timing.as_deref());
            fs::write(&report, &text).with_context(|| format!("writing {}", report.display()))?;
            print!("{text}");
            if let Some(p) = metrics {
                write_metrics(&p, &m.fields())?;
            }
            if let Some(p) = errors {
                let errs = position_errors(&est, &truth, cmp.dims.into())?;
                let mut s = String::from("t,east,north,up,norm\n");
                for ((t, e), n) in errs.times.iter().zip(&errs.enu).zip(&errs.norms) {
                    writeln!(s, "{},{},{},{},{}", fmt_f64(*t), fmt_f64(e.x), fmt_f64(e.y), fmt_f64(e.z), fmt_f64(*n))?;
                }
                fs::write(&p, s).with_context(|| format!("writing {}", p.display()))?;
            }
            Ok(())
        }
        Command::Cdf {
            cmp,
            out,
            pdf,
            bins,
            percentiles,
        } => {
            if bins == 0 {
                usage_error("--bins must be positive");
            }
            let est = read(&cmp.est, load_trajectory_csv)?;
            let truth = read(&cmp.truth, load_truth_csv)?;
            let errs = position_errors(&est, &truth, cmp.dims.into())?;
            let cdf = compute_cdf(&errs.norms)?;
            let mut s = String::from("threshold,fraction\n");
            for (x, f) in &cdf.points {
                writeln!(s, "{},{}", fmt_f64(*x), fmt_f64(*f))?;
            }
            fs::write(&out, s).with_context(|| format!("writing {}", out.display()))?;
            let mut table = String::from("percent,value\n");
            for (q, v) in &cdf.percentiles {
                writeln!(table, "{q},{}", fmt_f64(*v))?;
            }
            match percentiles {
                Some(p) => fs::write(&p, &table).with_context(|| format!("writing {}", p.display()))?,
                None => print!("{table}"),
            }
            if let Some(p) = pdf {
                let mut s = String::from("bin_start,bin_end,density\n");
                for (lo, hi, d) in pdf_histogram(&errs.norms, bins)? {
                    writeln!(s, "{},{},{}", fmt_f64(lo), fmt_f64(hi), fmt_f64(d))?;
                }
                fs::write(&p, s).with_context(|| format!("writing {}", p.display()))?;
            }
            Ok(())
        }
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
    }
}
