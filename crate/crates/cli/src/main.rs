use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;

use clap::{Args, Parser, Subcommand};

use osgan::config::{ExperimentConfig, Task};
use osgan::data::RingGeometry;
use osgan::experiment::{bench, run, RunFailure, RunOutput};
use osgan::metrics::{frechet_gaussian_2d, kid_polynomial, mode_coverage, read_points, KernelConfig};
use osgan::trainer::Mode;
use osgan::verify::{run_suite, Suite, Tolerances};
use osgan::Error;

const EXIT_VERIFY: u8 = 1;
const EXIT_CONFIG: u8 = 2;
const EXIT_ABORT: u8 = 3;

#[derive(Parser)]
#[command(name = "osgan", version, about = "One-stage and two-stage adversarial training on toy tasks")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train from a config file and write run artifacts.
    Train(RunArgs),
    /// Run data-free distillation (default config when --config is absent).
    Distill(RunArgs),
    /// Randomized ratio-invariance, gradient-equivalence and finite-difference checks.
    Verify(VerifyArgs),
    /// Time matched one-stage and two-stage rounds.
    Bench(BenchArgs),
    /// Compare two point files: prints frechet,kid,covered_modes,hq_fraction.
    Metrics(MetricsArgs),
}

#[derive(Args)]
struct RunArgs {
    #[arg(long)]
    config: Option<PathBuf>,
    /// Output directory (overrides `out` in the config).
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long, value_parser = parse_mode)]
    mode: Option<Mode>,
    /// Number of consecutive seeds to run, starting at the config seed.
    #[arg(long, default_value_t = 1)]
    runs: u64,
    /// Runs executed concurrently.
    #[arg(long, default_value_t = 1)]
    jobs: usize,
}

#[derive(Args)]
struct VerifyArgs {
    #[arg(long, default_value_t = 100)]
    trials: u64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// One tolerance for every suite instead of the per-suite defaults.
    #[arg(long)]
    tol: Option<f64>,
}

#[derive(Args)]
struct BenchArgs {
    #[arg(long)]
    config: PathBuf,
    #[arg(long, default_value_t = 200)]
    rounds: u64,
    #[arg(long)]
    seed: Option<u64>,
    /// Directory for `bench.csv`.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct MetricsArgs {
    real: PathBuf,
    fake: PathBuf,
    #[arg(long, default_value_t = RingGeometry::default().modes)]
    modes: usize,
    #[arg(long, default_value_t = RingGeometry::default().radius)]
    radius: f64,
    #[arg(long, default_value_t = RingGeometry::default().sigma)]
    sigma: f64,
    /// Coverage radius; three sigma when absent.
    #[arg(long)]
    threshold: Option<f64>,
    /// Print the column names before the row.
    #[arg(long)]
    header: bool,
}

fn parse_mode(s: &str) -> Result<Mode, String> {
    s.parse().map_err(|e: Error| e.to_string())
}

fn config_error(e: impl std::fmt::Display) -> ExitCode {
    eprintln!("error: {e}");
    ExitCode::from(EXIT_CONFIG)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match cli.command {
        Command::Train(a) => cmd_run(a, None),
        Command::Distill(a) => cmd_run(a, Some(Task::Distill)),
        Command::Verify(a) => cmd_verify(a),
        Command::Bench(a) => cmd_bench(a),
        Command::Metrics(a) => cmd_metrics(a),
    }
}

fn load_config(path: Option<&Path>, task: Option<Task>) -> Result<ExperimentConfig, Error> {
    match (path, task) {
        (Some(p), _) => {
            let cfg = ExperimentConfig::load(p)?;
            if let Some(t) = task {
                if cfg.task != t {
                    return Err(Error::Config(format!(
                        "{}: the distill subcommand needs task = \"distill\"",
                        p.display()
                    )));
                }
            }
            Ok(cfg)
        }
        (None, Some(Task::Distill)) => ExperimentConfig::from_toml("task = \"distill\"\n"),
        (None, _) => Err(Error::Config("--config is required".into())),
    }
}

fn cmd_run(a: RunArgs, task: Option<Task>) -> ExitCode {
    let mut cfg = match load_config(a.config.as_deref(), task) {
        Ok(c) => c,
        Err(e) => return config_error(e),
    };
    if let Some(s) = a.seed {
        cfg.seed = s;
    }
    if let Some(m) = a.mode {
        cfg.mode = m;
    }
    let base_out = a
        .out
        .clone()
        .or_else(|| cfg.out.clone())
        .unwrap_or_else(|| PathBuf::from("osgan-out"));
    if a.runs == 0 || a.jobs == 0 {
        return config_error("--runs and --jobs must be at least 1");
    }
    let mut jobs = Vec::new();
    for k in 0..a.runs {
        let mut c = cfg.clone();
        c.seed = cfg.seed.wrapping_add(k);
        let out = if a.runs == 1 {
            base_out.clone()
        } else {
            base_out.join(format!("seed-{}", c.seed))
        };
        c.out = Some(out.clone());
        match c.resolve() {
            Ok(c) => jobs.push((c, out)),
            Err(e) => return config_error(e),
        }
    }

    let next = AtomicUsize::new(0);
    let results: Mutex<Vec<Option<Result<RunOutput, RunFailure>>>> =
        Mutex::new((0..jobs.len()).map(|_| None).collect());
    std::thread::scope(|s| {
        for _ in 0..a.jobs.min(jobs.len()) {
            s.spawn(|| loop {
                let i = next.fetch_add(1, Ordering::SeqCst);
                let Some((cfg, out)) = jobs.get(i) else { break };
                let r = run(cfg, Some(out));
                results.lock().unwrap()[i] = Some(r);
            });
        }
    });

    let mut code = ExitCode::SUCCESS;
    for ((cfg, out), r) in jobs.iter().zip(results.into_inner().unwrap()) {
        match r.expect("every job ran") {
            Ok(o) => {
                println!("seed {} mode {} -> {}", cfg.seed, cfg.mode, out.display());
                println!("{}", o.summary.line());
                if let osgan::experiment::Summary::Distill {
                    teacher_accuracy,
                    student_accuracy,
                } = o.summary
                {
                    println!("accuracy: student={student_accuracy:.4} teacher={teacher_accuracy:.4}");
                }
            }
            Err(f) => {
                eprintln!("seed {}: {f}", cfg.seed);
                code = match f.error {
                    Error::Config(_) => ExitCode::from(EXIT_CONFIG),
                    _ => ExitCode::from(EXIT_ABORT),
                };
            }
        }
    }
    code
}

fn cmd_verify(a: VerifyArgs) -> ExitCode {
    if a.trials == 0 {
        return config_error("--trials must be at least 1");
    }
    let tol = a.tol.map(Tolerances::uniform).unwrap_or_default();
    let report = match run_suite(a.trials, a.seed, &tol) {
        Ok(r) => r,
        Err(e) => {
            eprintln!("error: {e}");
            return ExitCode::from(EXIT_ABORT);
        }
    };
    for (suite, t) in [
        (Suite::Ratio, tol.ratio),
        (Suite::Equivalence, tol.equivalence),
        (Suite::FiniteDifference, tol.fd),
    ] {
        let c = report.counts(suite);
        println!(
            "{:<22} passed {:>4}  failed {:>4}  inconclusive {:>4}  max {:.3e}  tol {:.1e}",
            suite.name(),
            c.passed,
            c.failed,
            c.inconclusive,
            report.max_value(suite),
            t
        );
    }
    for f in report.failures() {
        println!(
            "FAIL {} seed={} family={} value={:e} tol={:e} arch={} (replay: osgan verify --seed {} --trials 1)",
            f.suite.name(),
            f.seed,
            f.family,
            f.value.unwrap_or(f64::NAN),
            f.tol,
            f.architecture,
            f.seed
        );
    }
    if report.all_passed() {
        println!("verify: ok");
        ExitCode::SUCCESS
    } else {
        println!("verify: FAILED");
        ExitCode::from(EXIT_VERIFY)
    }
}

fn cmd_bench(a: BenchArgs) -> ExitCode {
    let mut cfg = match ExperimentConfig::load(&a.config) {
        Ok(c) => c,
        Err(e) => return config_error(e),
    };
    if let Some(s) = a.seed {
        cfg.seed = s;
    }
    let cfg = match cfg.resolve() {
        Ok(c) => c,
        Err(e) => return config_error(e),
    };
    match bench(&cfg, a.rounds) {
        Ok(r) => {
            println!(
                "pass-unit ratio {}  wall-clock ratio {:.3}  one-stage median {:.3} ms (IQR {:.3})  two-stage median {:.3} ms (IQR {:.3})  rounds {} (warm-up {})",
                r.pass_ratio,
                r.wall_ratio,
                r.one.median_ms,
                r.one.iqr_ms(),
                r.two.median_ms,
                r.two.iqr_ms(),
                r.rounds,
                r.warmup
            );
            if let Some(dir) = a.out {
                let written = std::fs::create_dir_all(&dir)
                    .and_then(|_| std::fs::write(dir.join("bench.csv"), r.csv()));
                if let Err(e) = written {
                    eprintln!("error: {e}");
                    return ExitCode::from(EXIT_ABORT);
                }
            }
            ExitCode::SUCCESS
        }
        Err(e @ (Error::Usage(_) | Error::Config(_))) => config_error(e),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(EXIT_ABORT)
        }
    }
}

fn cmd_metrics(a: MetricsArgs) -> ExitCode {
    let geometry = RingGeometry {
        modes: a.modes,
        radius: a.radius,
        sigma: a.sigma,
    };
    if let Err(e) = geometry.validate() {
        return config_error(e);
    }
    let result = (|| -> Result<String, Error> {
        let real = read_points(&a.real)?;
        let fake = read_points(&a.fake)?;
        let f = frechet_gaussian_2d(&real, &fake)?;
        let k = kid_polynomial(&real, &fake, &KernelConfig::cubic(real.instance_len()))?;
        let c = mode_coverage(&fake, &geometry.centers(), a.threshold.unwrap_or(geometry.threshold()))?;
        Ok(format!("{f},{k},{},{}", c.covered_modes, c.hq_fraction))
    })();
    match result {
        Ok(row) => {
            if a.header {
                println!("frechet,kid,covered_modes,hq_fraction");
            }
            println!("{row}");
            ExitCode::SUCCESS
        }
        Err(e) => config_error(e),
    }
}
