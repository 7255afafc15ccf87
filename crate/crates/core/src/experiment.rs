//! Config-driven runs, artifact emission and the speed benchmark.
//!
//! All randomness derives from the config seed through ChaCha8 streams:
//! stream 0 initializes networks and draws latents, stream 1 draws training
//! data, streams 2 and 3 draw the fixed evaluation points and latents.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::time::Instant;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::config::{ExperimentConfig, Task};
use crate::data::RingSampler;
use crate::distill::{distill_adversarial, train_teacher};
use crate::error::{Error, Result};
use crate::ledger::ledger_speedup;
use crate::losses::make_loss;
use crate::metrics::{frechet_gaussian_2d_report, kid_polynomial, mode_coverage, KernelConfig};
use crate::nn::{Checkpoint, NamedNetwork};
use crate::tensor::Tensor;
use crate::trainer::{osgan_step, tsgan_round_multi, Mode, StepMetrics, TrainState};

pub const METRICS_VERSION_LINE: &str = "# osgan-metrics v1";
pub const EVAL_VERSION_LINE: &str = "# osgan-eval v1";
pub const EVAL_HEADER: &str = "step,frechet,frechet_unsquared,kid,covered_modes,hq_fraction";
pub const SUMMARY_GAN_HEADER: &str = "frechet,kid,covered_modes,hq_fraction";
pub const SUMMARY_DISTILL_HEADER: &str = "teacher_accuracy,student_accuracy";

/// Rounds excluded from benchmark timing statistics.
pub const BENCH_WARMUP: usize = 10;
/// Smallest `rounds` accepted by [`bench`].
pub const BENCH_MIN_ROUNDS: u64 = 20;

pub fn stream(seed: u64, id: u64) -> ChaCha8Rng {
    let mut r = ChaCha8Rng::seed_from_u64(seed);
    r.set_stream(id);
    r
}

pub fn metrics_csv(rows: &[StepMetrics]) -> String {
    let mut s = format!("{METRICS_VERSION_LINE}\n{}\n", StepMetrics::CSV_HEADER);
    for r in rows {
        s.push_str(&r.csv_row());
        s.push('\n');
    }
    s
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct EvalRow {
    pub step: u64,
    pub frechet: f64,
    pub frechet_unsquared: f64,
    pub kid: f64,
    pub covered_modes: usize,
    pub hq_fraction: f64,
}

pub fn eval_csv(rows: &[EvalRow]) -> String {
    let mut s = format!("{EVAL_VERSION_LINE}\n{EVAL_HEADER}\n");
    for r in rows {
        let _ = writeln!(
            s,
            "{},{},{},{},{},{}",
            r.step, r.frechet, r.frechet_unsquared, r.kid, r.covered_modes, r.hq_fraction
        );
    }
    s
}

#[derive(Clone, Debug, PartialEq)]
pub enum Summary {
    Gan2d(EvalRow),
    Distill {
        teacher_accuracy: f64,
        student_accuracy: f64,
    },
}

impl Summary {
    pub fn csv(&self) -> String {
        match self {
            Summary::Gan2d(r) => format!(
                "{SUMMARY_GAN_HEADER}\n{},{},{},{}\n",
                r.frechet, r.kid, r.covered_modes, r.hq_fraction
            ),
            Summary::Distill {
                teacher_accuracy,
                student_accuracy,
            } => format!("{SUMMARY_DISTILL_HEADER}\n{teacher_accuracy},{student_accuracy}\n"),
        }
    }

    /// One human-readable line.
    pub fn line(&self) -> String {
        match self {
            Summary::Gan2d(r) => format!(
                "frechet={:.6} kid={:.6} covered_modes={} hq_fraction={:.4}",
                r.frechet, r.kid, r.covered_modes, r.hq_fraction
            ),
            Summary::Distill {
                teacher_accuracy,
                student_accuracy,
            } => format!("teacher_accuracy={teacher_accuracy:.4} student_accuracy={student_accuracy:.4}"),
        }
    }
}

#[derive(Clone, Debug)]
pub struct RunOutput {
    pub config: ExperimentConfig,
    pub metrics: Vec<StepMetrics>,
    pub evals: Vec<EvalRow>,
    pub checkpoint: Checkpoint,
    pub summary: Summary,
}

impl RunOutput {
    pub fn metrics_csv(&self) -> String {
        metrics_csv(&self.metrics)
    }
}

/// A run that stopped early, with the diagnostic dump written for it.
#[derive(Debug)]
pub struct RunFailure {
    pub error: Error,
    pub step: u64,
    pub dump: Option<PathBuf>,
}

impl std::fmt::Display for RunFailure {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "run aborted at step {}: {}", self.step, self.error)?;
        if let Some(d) = &self.dump {
            write!(f, " (dump: {})", d.display())?;
        }
        Ok(())
    }
}

/// Fixed evaluation data for a gan2d run.
pub struct Evaluator {
    real: Tensor,
    z: Tensor,
    centers: Vec<[f64; 2]>,
    threshold: f64,
}

impl Evaluator {
    pub fn new(cfg: &ExperimentConfig) -> Result<Evaluator> {
        let mut sampler = RingSampler::new(cfg.data, stream(cfg.seed, 2))?;
        let real = sampler.sample(cfg.eval_points);
        let mut rng = stream(cfg.seed, 3);
        let n = cfg.eval_points * cfg.latent_dim;
        let z = (0..n).map(|_| StandardNormal.sample(&mut rng)).collect();
        Ok(Evaluator {
            real,
            z: Tensor::new(vec![cfg.eval_points, cfg.latent_dim], z)?,
            centers: cfg.data.centers(),
            threshold: cfg.data.threshold(),
        })
    }

    pub fn real(&self) -> &Tensor {
        &self.real
    }

    pub fn evaluate(&self, state: &TrainState) -> Result<EvalRow> {
        let fake = state.generate(&self.z)?;
        let f = frechet_gaussian_2d_report(&self.real, &fake)?;
        let kid = kid_polynomial(&self.real, &fake, &KernelConfig::cubic(2))?;
        let c = mode_coverage(&fake, &self.centers, self.threshold)?;
        Ok(EvalRow {
            step: state.step,
            frechet: f.value,
            frechet_unsquared: f.value_unsquared_mean,
            kid,
            covered_modes: c.covered_modes,
            hq_fraction: c.hq_fraction,
        })
    }
}

/// Training state and data stream for a resolved gan2d config.
pub fn gan2d_state(cfg: &ExperimentConfig) -> Result<(TrainState, RingSampler)> {
    let loss = make_loss(&cfg.loss)?;
    let g = cfg.generator.clone().ok_or_else(|| Error::Config("config is not resolved".into()))?;
    let d = cfg
        .discriminator
        .clone()
        .ok_or_else(|| Error::Config("config is not resolved".into()))?;
    let mut st = TrainState::new(g, d, loss, cfg.optimizer, stream(cfg.seed, 0))?;
    st.d_steps = cfg.d_steps;
    st.timing = cfg.timing;
    let data = RingSampler::new(cfg.data, stream(cfg.seed, 1))?;
    Ok((st, data))
}

/// One training round of the configured mode.
pub fn gan2d_round(state: &mut TrainState, data: &mut RingSampler, mode: Mode, batch: usize) -> Result<StepMetrics> {
    match mode {
        Mode::One => {
            let real = data.sample(batch);
            osgan_step(state, &real)
        }
        Mode::Two => {
            let reals: Vec<Tensor> = (0..state.d_steps).map(|_| data.sample(batch)).collect();
            tsgan_round_multi(state, &reals)
        }
    }
}

fn gan_checkpoint(cfg: &ExperimentConfig, st: &TrainState) -> Checkpoint {
    Checkpoint {
        seed: cfg.seed,
        step: st.step,
        networks: vec![
            NamedNetwork {
                name: "generator".into(),
                spec: st.gen_spec.clone(),
                params: st.gen_params.clone(),
            },
            NamedNetwork {
                name: "discriminator".into(),
                spec: st.disc_spec.clone(),
                params: st.disc_params.clone(),
            },
        ],
    }
}

fn write_dump(out: Option<&Path>, cfg: &ExperimentConfig, err: &Error, step: u64, rows: &[StepMetrics], ck: Option<&Checkpoint>) -> Option<PathBuf> {
    let dir = out?;
    std::fs::create_dir_all(dir).ok()?;
    let path = dir.join("abort_dump.txt");
    let mut text = format!("error: {err}\nstep: {step}\n");
    if let Some(ck) = ck {
        let ck_path = dir.join("abort.ckpt");
        if ck.save(&ck_path).is_ok() {
            let _ = writeln!(text, "checkpoint: {}", ck_path.display());
        }
    }
    text.push_str("\n[recent metrics]\n");
    let tail = &rows[rows.len().saturating_sub(10)..];
    text.push_str(&metrics_csv(tail));
    text.push_str("\n[config]\n");
    text.push_str(&cfg.to_toml());
    std::fs::write(&path, text).ok()?;
    Some(path)
}

fn run_gan2d(cfg: &ExperimentConfig, out: Option<&Path>) -> std::result::Result<RunOutput, RunFailure> {
    let fail = |error: Error, step: u64| RunFailure {
        error,
        step,
        dump: None,
    };
    let (mut st, mut data) = gan2d_state(cfg).map_err(|e| fail(e, 0))?;
    let eval = Evaluator::new(cfg).map_err(|e| fail(e, 0))?;
    let rounds = cfg.total_rounds();
    let mut rows = Vec::with_capacity(rounds as usize);
    let mut evals = Vec::new();
    for _ in 0..rounds {
        match gan2d_round(&mut st, &mut data, cfg.mode, cfg.batch) {
            Ok(m) => rows.push(m),
            Err(error) => {
                let ck = gan_checkpoint(cfg, &st);
                let dump = write_dump(out, cfg, &error, st.step, &rows, Some(&ck));
                return Err(RunFailure {
                    error,
                    step: st.step,
                    dump,
                });
            }
        }
        if cfg.eval_every > 0 && st.step % cfg.eval_every == 0 && st.step < rounds {
            evals.push(eval.evaluate(&st).map_err(|e| fail(e, st.step))?);
        }
    }
    let last = eval.evaluate(&st).map_err(|e| fail(e, st.step))?;
    evals.push(last);
    Ok(RunOutput {
        config: cfg.clone(),
        checkpoint: gan_checkpoint(cfg, &st),
        metrics: rows,
        evals,
        summary: Summary::Gan2d(last),
    })
}

fn run_distill(cfg: &ExperimentConfig, out: Option<&Path>) -> std::result::Result<RunOutput, RunFailure> {
    let d = cfg
        .distill
        .as_ref()
        .ok_or_else(|| RunFailure {
            error: Error::Config("config is not resolved".into()),
            step: 0,
            dump: None,
        })?;
    let abort = |error: Error| {
        let dump = write_dump(out, cfg, &error, 0, &[], None);
        RunFailure {
            error,
            step: 0,
            dump,
        }
    };
    let teacher = train_teacher(d).map_err(abort)?;
    let outcome = distill_adversarial(d, cfg.mode, &teacher, cfg.timing).map_err(abort)?;
    let checkpoint = Checkpoint {
        seed: cfg.seed,
        step: outcome.metrics.len() as u64,
        networks: vec![
            NamedNetwork {
                name: "teacher".into(),
                spec: teacher.spec.clone(),
                params: teacher.params.clone(),
            },
            NamedNetwork {
                name: "student".into(),
                spec: outcome.student_spec.clone(),
                params: outcome.student.clone(),
            },
        ],
    };
    Ok(RunOutput {
        config: cfg.clone(),
        checkpoint,
        metrics: outcome.metrics,
        evals: Vec::new(),
        summary: Summary::Distill {
            teacher_accuracy: teacher.accuracy,
            student_accuracy: outcome.accuracy,
        },
    })
}

/// Runs a resolved config. With `out`, writes `config.toml`, `metrics.csv`,
/// `eval.csv` (gan2d), `final.ckpt` and `summary.csv` there; an aborted run
/// leaves `abort_dump.txt` instead.
pub fn run(cfg: &ExperimentConfig, out: Option<&Path>) -> std::result::Result<RunOutput, RunFailure> {
    let output = match cfg.task {
        Task::Gan2d => run_gan2d(cfg, out)?,
        Task::Distill => run_distill(cfg, out)?,
    };
    if let Some(dir) = out {
        write_artifacts(dir, &output).map_err(|error| RunFailure {
            error,
            step: output.checkpoint.step,
            dump: None,
        })?;
    }
    Ok(output)
}

pub fn write_artifacts(dir: &Path, o: &RunOutput) -> Result<()> {
    std::fs::create_dir_all(dir)?;
    std::fs::write(dir.join("config.toml"), o.config.to_toml())?;
    std::fs::write(dir.join("metrics.csv"), o.metrics_csv())?;
    if o.config.task == Task::Gan2d {
        std::fs::write(dir.join("eval.csv"), eval_csv(&o.evals))?;
    }
    o.checkpoint.save(dir.join("final.ckpt"))?;
    std::fs::write(dir.join("summary.csv"), o.summary.csv())?;
    Ok(())
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TimingStats {
    pub median_ms: f64,
    pub q1_ms: f64,
    pub q3_ms: f64,
}

impl TimingStats {
    pub fn iqr_ms(&self) -> f64 {
        self.q3_ms - self.q1_ms
    }

    pub fn from_samples(samples: &[f64]) -> Result<TimingStats> {
        if samples.is_empty() {
            return Err(Error::Usage("no timing samples".into()));
        }
        let mut v = samples.to_vec();
        v.sort_by(f64::total_cmp);
        Ok(TimingStats {
            median_ms: quantile(&v, 0.5),
            q1_ms: quantile(&v, 0.25),
            q3_ms: quantile(&v, 0.75),
        })
    }
}

/// Linear-interpolation quantile of sorted data.
fn quantile(sorted: &[f64], q: f64) -> f64 {
    let pos = q * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    sorted[lo] + (sorted[hi] - sorted[lo]) * (pos - lo as f64)
}

#[derive(Clone, Debug, PartialEq)]
pub struct BenchReport {
    pub rounds: u64,
    pub warmup: usize,
    /// Modelled two-stage over one-stage cost from the recorded pass counts.
    pub pass_ratio: f64,
    pub one: TimingStats,
    pub two: TimingStats,
    /// Ratio of median round times, two-stage over one-stage.
    pub wall_ratio: f64,
}

impl BenchReport {
    pub const CSV_HEADER: &'static str = "rounds,warmup,pass_ratio,one_median_ms,one_iqr_ms,two_median_ms,two_iqr_ms,wall_ratio";

    pub fn csv(&self) -> String {
        format!(
            "{}\n{},{},{},{},{},{},{},{}\n",
            Self::CSV_HEADER,
            self.rounds,
            self.warmup,
            self.pass_ratio,
            self.one.median_ms,
            self.one.iqr_ms(),
            self.two.median_ms,
            self.two.iqr_ms(),
            self.wall_ratio
        )
    }
}

/// Times `rounds` one-stage and `rounds` two-stage rounds on identical
/// networks and seeds, interleaving the two so both see the same machine load.
pub fn bench(cfg: &ExperimentConfig, rounds: u64) -> Result<BenchReport> {
    if rounds < BENCH_MIN_ROUNDS {
        return Err(Error::Usage(format!(
            "bench needs at least {BENCH_MIN_ROUNDS} rounds ({BENCH_WARMUP} are warm-up), got {rounds}"
        )));
    }
    if cfg.task != Task::Gan2d {
        return Err(Error::Config("bench runs gan2d configs".into()));
    }
    let (mut one, mut data_one) = gan2d_state(cfg)?;
    let (mut two, mut data_two) = gan2d_state(cfg)?;
    let (mut t_one, mut t_two) = (Vec::new(), Vec::new());
    for r in 0..rounds as usize {
        let s = Instant::now();
        gan2d_round(&mut one, &mut data_one, Mode::One, cfg.batch)?;
        let a = s.elapsed().as_secs_f64() * 1e3;
        let s = Instant::now();
        gan2d_round(&mut two, &mut data_two, Mode::Two, cfg.batch)?;
        let b = s.elapsed().as_secs_f64() * 1e3;
        if r >= BENCH_WARMUP {
            t_one.push(a);
            t_two.push(b);
        }
    }
    let pass_ratio = ledger_speedup(&two.ledger, &one.ledger, 1.0, 1.0)?.pass_ratio;
    let one_stats = TimingStats::from_samples(&t_one)?;
    let two_stats = TimingStats::from_samples(&t_two)?;
    Ok(BenchReport {
        rounds,
        warmup: BENCH_WARMUP,
        pass_ratio,
        wall_ratio: two_stats.median_ms / one_stats.median_ms,
        one: one_stats,
        two: two_stats,
    })
}
