//! Data-free adversarial distillation at toy scale.
//!
//! A frozen teacher classifies ring points by mode. A generator synthesizes
//! inputs in a box, a student is trained to match the teacher's logits on
//! them, and the generator is trained to maximize the student/teacher
//! discrepancy. The pair is symmetric (`L_G = -L_S`), so the one-stage mode
//! runs through the ratio machinery with `γ = -1`.
//!
//! The critic is the student together with the teacher: one traversal of
//! both over a sub-batch is charged one discriminator pass-unit.

use std::sync::Arc;
use std::time::Instant;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::data::{RingGeometry, RingSampler};
use crate::error::{Error, Result};
use crate::gamma::{compute_gamma, GammaBatch};
use crate::ledger::PassLedger;
use crate::losses::{AdversarialLossSpec, Interval, LossTerms, Slope};
use crate::nn::{
    backward_input, backward_network, forward_network, Activation, ForwardCache, NetworkSpec,
    ParamSet,
};
use crate::optim::{adam_update, AdamConfig, AdamState};
use crate::tensor::Tensor;
use crate::trainer::{Mode, StepMetrics};

/// Teacher accuracy required before distillation starts.
pub const TEACHER_MIN_ACCURACY: f64 = 0.95;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", tag = "kind", deny_unknown_fields)]
pub enum Discrepancy {
    /// Mean absolute difference of logits.
    L1,
    /// `KL(softmax(t/τ) || softmax(s/τ))`.
    SoftenedKl { temperature: f64 },
}

impl Default for Discrepancy {
    fn default() -> Self {
        Discrepancy::L1
    }
}

impl Discrepancy {
    /// Per-instance value and its gradients with respect to the student and
    /// teacher logit vectors.
    fn eval(&self, s: &[f64], t: &[f64]) -> (f64, Vec<f64>, Vec<f64>) {
        let k = s.len() as f64;
        match *self {
            Discrepancy::L1 => {
                let mut v = 0.0;
                let mut gs = Vec::with_capacity(s.len());
                for (a, b) in s.iter().zip(t) {
                    let d = a - b;
                    v += d.abs();
                    let sign = if d > 0.0 {
                        1.0
                    } else if d < 0.0 {
                        -1.0
                    } else {
                        0.0
                    };
                    gs.push(sign / k);
                }
                let gt = gs.iter().map(|g| -g).collect();
                (v / k, gs, gt)
            }
            Discrepancy::SoftenedKl { temperature: tau } => {
                let ls = log_softmax(s, tau);
                let lt = log_softmax(t, tau);
                let pt: Vec<f64> = lt.iter().map(|v| v.exp()).collect();
                let ps: Vec<f64> = ls.iter().map(|v| v.exp()).collect();
                let u: Vec<f64> = lt.iter().zip(&ls).map(|(a, b)| a - b).collect();
                let kl: f64 = pt.iter().zip(&u).map(|(p, u)| p * u).sum();
                let gs = ps.iter().zip(&pt).map(|(a, b)| (a - b) / tau).collect();
                let gt = pt
                    .iter()
                    .zip(&u)
                    .map(|(p, u)| p * (u - kl) / tau)
                    .collect();
                (kl, gs, gt)
            }
        }
    }

    pub fn validate(&self) -> Result<()> {
        match *self {
            Discrepancy::SoftenedKl { temperature } if !(temperature > 0.0) => Err(
                Error::Config(format!("temperature must be positive, got {temperature}")),
            ),
            _ => Ok(()),
        }
    }
}

fn log_softmax(x: &[f64], tau: f64) -> Vec<f64> {
    let m = x.iter().copied().fold(f64::NEG_INFINITY, f64::max) / tau;
    let lse = x.iter().map(|v| (v / tau - m).exp()).sum::<f64>().ln() + m;
    x.iter().map(|v| v / tau - lse).collect()
}

/// Loss terms of the distillation game over the per-instance discrepancy.
#[derive(Debug)]
struct DiscrepancyTerms;

impl LossTerms for DiscrepancyTerms {
    fn real(&self, _: f64) -> f64 {
        0.0
    }
    fn fake(&self, s: f64) -> f64 {
        s
    }
    fn gen(&self, s: f64) -> f64 {
        -s
    }
    fn d_real(&self, _: f64) -> Slope {
        Slope {
            value: 0.0,
            kink: false,
        }
    }
    fn d_fake(&self, _: f64) -> Slope {
        Slope {
            value: 1.0,
            kink: false,
        }
    }
    fn d_gen(&self, _: f64) -> Slope {
        Slope {
            value: -1.0,
            kink: false,
        }
    }
}

/// The student/generator game as a loss family: the student minimizes the
/// discrepancy, the generator its negation.
pub fn discrepancy_loss() -> AdversarialLossSpec {
    AdversarialLossSpec::custom(
        "discrepancy",
        Arc::new(DiscrepancyTerms),
        Interval::REAL_LINE,
        Interval::REAL_LINE,
        Activation::Identity,
    )
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DistillConfig {
    pub geometry: RingGeometry,
    pub teacher_hidden: Vec<usize>,
    pub student_hidden: Vec<usize>,
    pub generator_hidden: Vec<usize>,
    pub latent_dim: usize,
    /// Generator outputs are `output_scale * tanh(.)`.
    pub output_scale: f64,
    pub discrepancy: Discrepancy,
    /// Student iterations per two-stage round.
    pub student_iters: usize,
    pub batch: usize,
    /// Total pass-unit budget shared by both modes.
    pub budget: u64,
    pub seed: u64,
    pub adam: AdamConfig,
    pub teacher_steps: usize,
    pub teacher_batch: usize,
    pub teacher_lr: f64,
    pub eval_points: usize,
}

impl Default for DistillConfig {
    fn default() -> Self {
        DistillConfig {
            geometry: RingGeometry {
                modes: 8,
                radius: 2.0,
                sigma: 0.25,
            },
            teacher_hidden: vec![64, 64],
            student_hidden: vec![32],
            generator_hidden: vec![32],
            latent_dim: 8,
            output_scale: 3.0,
            discrepancy: Discrepancy::L1,
            student_iters: 5,
            batch: 64,
            budget: 40_000,
            seed: 0,
            adam: AdamConfig {
                lr: 1e-3,
                ..AdamConfig::default()
            },
            teacher_steps: 600,
            teacher_batch: 128,
            teacher_lr: 5e-3,
            eval_points: 2000,
        }
    }
}

fn widths(input: usize, hidden: &[usize], output: usize) -> Vec<usize> {
    let mut w = vec![input];
    w.extend_from_slice(hidden);
    w.push(output);
    w
}

impl DistillConfig {
    pub fn validate(&self) -> Result<()> {
        self.geometry.validate()?;
        self.discrepancy.validate()?;
        self.adam.validate()?;
        if self.geometry.modes < 2 {
            return Err(Error::Config("distillation needs at least two classes".into()));
        }
        if self.student_iters == 0 {
            return Err(Error::Config("student_iters must be at least 1".into()));
        }
        if self.batch == 0 || self.teacher_batch == 0 || self.latent_dim == 0 {
            return Err(Error::Config("batch sizes and latent_dim must be positive".into()));
        }
        if self.eval_points == 0 {
            return Err(Error::Config("eval_points must be positive".into()));
        }
        if !(self.output_scale > 0.0) || !(self.teacher_lr > 0.0) {
            return Err(Error::Config("output_scale and teacher_lr must be positive".into()));
        }
        Ok(())
    }

    pub fn teacher_spec(&self) -> Result<NetworkSpec> {
        NetworkSpec::mlp(
            &widths(2, &self.teacher_hidden, self.geometry.modes),
            Activation::Tanh,
            None,
        )
    }

    pub fn student_spec(&self) -> Result<NetworkSpec> {
        NetworkSpec::mlp(
            &widths(2, &self.student_hidden, self.geometry.modes),
            Activation::Tanh,
            None,
        )
    }

    pub fn generator_spec(&self) -> Result<NetworkSpec> {
        NetworkSpec::mlp(
            &widths(self.latent_dim, &self.generator_hidden, 2),
            Activation::Relu,
            Some(Activation::Tanh),
        )
    }

    /// Independent streams for teacher data, evaluation data and the game.
    fn rng(&self, stream: u64) -> ChaCha8Rng {
        let mut r = ChaCha8Rng::seed_from_u64(self.seed);
        r.set_stream(stream);
        r
    }
}

/// Fraction of rows whose argmax logit equals the label.
pub fn accuracy(net: &NetworkSpec, params: &ParamSet, x: &Tensor, labels: &[usize]) -> Result<f64> {
    let (out, _) = forward_network(net, params, x, false)?;
    let correct = (0..out.batch())
        .filter(|&i| argmax(out.instance(i)) == labels[i])
        .count();
    Ok(correct as f64 / labels.len().max(1) as f64)
}

fn argmax(v: &[f64]) -> usize {
    v.iter()
        .enumerate()
        .fold((0, f64::NEG_INFINITY), |a, (i, &x)| if x > a.1 { (i, x) } else { a })
        .0
}

/// Held-out labelled ring points for a config.
pub fn holdout(cfg: &DistillConfig) -> Result<(Tensor, Vec<usize>)> {
    let mut s = RingSampler::new(cfg.geometry, cfg.rng(2))?;
    Ok(s.sample_labelled(cfg.eval_points))
}

#[derive(Clone, Debug, PartialEq)]
pub struct TeacherFit {
    pub spec: NetworkSpec,
    pub params: ParamSet,
    pub accuracy: f64,
}

/// Supervised softmax cross-entropy training for `steps` Adam steps, with no
/// accuracy requirement.
pub fn fit_teacher(cfg: &DistillConfig, steps: usize) -> Result<TeacherFit> {
    cfg.validate()?;
    let spec = cfg.teacher_spec()?;
    let mut init = cfg.rng(0);
    let mut params = ParamSet::init(&spec, &mut init);
    let mut data = RingSampler::new(cfg.geometry, cfg.rng(1))?;
    let adam = AdamConfig {
        lr: cfg.teacher_lr,
        beta1: 0.9,
        ..AdamConfig::default()
    };
    let mut opt = AdamState::new(&params);
    let k = cfg.geometry.modes;
    for _ in 0..steps {
        let (x, y) = data.sample_labelled(cfg.teacher_batch);
        let (out, cache) = forward_network(&spec, &params, &x, true)?;
        let n = x.batch() as f64;
        let mut grad = Vec::with_capacity(out.len());
        for (i, &label) in y.iter().enumerate() {
            let ls = log_softmax(out.instance(i), 1.0);
            for (j, l) in ls.iter().enumerate() {
                let target = if j == label { 1.0 } else { 0.0 };
                grad.push((l.exp() - target) / n);
            }
        }
        let seed = Tensor::new(vec![x.batch(), k], grad)?;
        let back = backward_network(&spec, &params, &cache.expect("cache requested"), &seed, false)?;
        adam_update(
            &mut params,
            &back.param_grads.expect("parameter gradients requested"),
            &mut opt,
            &adam,
        )?;
    }
    let (hx, hy) = holdout(cfg)?;
    let accuracy = accuracy(&spec, &params, &hx, &hy)?;
    Ok(TeacherFit {
        spec,
        params,
        accuracy,
    })
}

/// Trains the teacher with the configured step count and requires it to
/// reach [`TEACHER_MIN_ACCURACY`] on held-out points.
pub fn train_teacher(cfg: &DistillConfig) -> Result<TeacherFit> {
    let fit = fit_teacher(cfg, cfg.teacher_steps)?;
    if fit.accuracy < TEACHER_MIN_ACCURACY {
        return Err(Error::Budget(format!(
            "teacher reached {:.4} held-out accuracy after {} steps, below {TEACHER_MIN_ACCURACY}",
            fit.accuracy, cfg.teacher_steps
        )));
    }
    Ok(fit)
}

/// Student, generator and teacher with optimizer state for the game.
pub struct DistillState {
    pub teacher: TeacherFit,
    pub student_spec: NetworkSpec,
    pub student: ParamSet,
    pub gen_spec: NetworkSpec,
    pub generator: ParamSet,
    pub output_scale: f64,
    pub discrepancy: Discrepancy,
    pub adam: AdamConfig,
    pub opt_s: AdamState,
    pub opt_g: AdamState,
    pub rng: ChaCha8Rng,
    pub ledger: PassLedger,
    pub step: u64,
    pub latent_dim: usize,
    pub loss: AdversarialLossSpec,
}

impl DistillState {
    pub fn new(cfg: &DistillConfig, teacher: TeacherFit) -> Result<DistillState> {
        cfg.validate()?;
        let student_spec = cfg.student_spec()?;
        let gen_spec = cfg.generator_spec()?;
        let mut rng = cfg.rng(3);
        let student = ParamSet::init(&student_spec, &mut rng);
        let generator = ParamSet::init(&gen_spec, &mut rng);
        if teacher.spec.output_shape()? != student_spec.output_shape()? {
            return Err(Error::Config("teacher and student outputs differ".into()));
        }
        Ok(DistillState {
            opt_s: AdamState::new(&student),
            opt_g: AdamState::new(&generator),
            teacher,
            student_spec,
            student,
            gen_spec,
            generator,
            output_scale: cfg.output_scale,
            discrepancy: cfg.discrepancy,
            adam: cfg.adam,
            rng,
            ledger: PassLedger::default(),
            step: 0,
            latent_dim: cfg.latent_dim,
            loss: discrepancy_loss(),
        })
    }

    pub fn sample_latent(&mut self, n: usize) -> Tensor {
        let data = (0..n * self.latent_dim)
            .map(|_| StandardNormal.sample(&mut self.rng))
            .collect();
        Tensor::from_parts(vec![n, self.latent_dim], data)
    }

    fn generate(&self, z: &Tensor, keep: bool) -> Result<(Tensor, Option<ForwardCache>)> {
        let (out, cache) = forward_network(&self.gen_spec, &self.generator, z, keep)?;
        Ok((out.scale(self.output_scale), cache))
    }
}

struct CriticPass {
    values: Vec<f64>,
    grad_s: Tensor,
    grad_t: Tensor,
    s_cache: ForwardCache,
    t_cache: ForwardCache,
}

fn critic(state: &DistillState, x: &Tensor) -> Result<CriticPass> {
    let (s_out, s_cache) = forward_network(&state.student_spec, &state.student, x, true)?;
    let (t_out, t_cache) = forward_network(&state.teacher.spec, &state.teacher.params, x, true)?;
    let n = x.batch();
    let k = s_out.instance_len();
    let mut values = Vec::with_capacity(n);
    let (mut gs, mut gt) = (Vec::with_capacity(n * k), Vec::with_capacity(n * k));
    for i in 0..n {
        let (v, a, b) = state.discrepancy.eval(s_out.instance(i), t_out.instance(i));
        values.push(v);
        gs.extend(a);
        gt.extend(b);
    }
    Ok(CriticPass {
        values,
        grad_s: Tensor::new(vec![n, k], gs)?,
        grad_t: Tensor::new(vec![n, k], gt)?,
        s_cache: s_cache.expect("cache requested"),
        t_cache: t_cache.expect("cache requested"),
    })
}

fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len().max(1) as f64
}

/// Gradient of the critic's scalar with respect to its input, given
/// per-instance weights on the discrepancy values. Student parameter
/// gradients are produced only when `student_params` is set.
fn critic_backward(
    state: &DistillState,
    pass: &CriticPass,
    weights: &[f64],
    student_params: bool,
    input_grad: bool,
) -> Result<(Option<ParamSet>, Option<Tensor>)> {
    let ws = pass.grad_s.scale_instances(weights)?;
    let back_s = if student_params {
        backward_network(&state.student_spec, &state.student, &pass.s_cache, &ws, false)?
    } else {
        backward_input(&state.student_spec, &state.student, &pass.s_cache, &ws, false)?
    };
    let x_grad = if input_grad {
        let wt = pass.grad_t.scale_instances(weights)?;
        let back_t = backward_input(
            &state.teacher.spec,
            &state.teacher.params,
            &pass.t_cache,
            &wt,
            false,
        )?;
        Some(back_s.input_grad.add(&back_t.input_grad)?)
    } else {
        None
    };
    Ok((back_s.param_grads, x_grad))
}

fn generator_grad(state: &DistillState, g_cache: &ForwardCache, x_grad: &Tensor) -> Result<ParamSet> {
    let seed = x_grad.scale(state.output_scale);
    Ok(backward_network(&state.gen_spec, &state.generator, g_cache, &seed, false)?
        .param_grads
        .expect("parameter gradients requested"))
}

#[derive(Clone, Debug)]
pub struct DistillGradients {
    pub student: ParamSet,
    pub generator: ParamSet,
    pub gamma: GammaBatch,
    pub discrepancy: f64,
}

/// One-stage gradients: one generator forward, one critic forward and one
/// critic backward seeded by the instance losses, then the generator backward
/// seeded by `γ_i` times the input gradient.
pub fn one_stage_gradients(state: &DistillState, z: &Tensor) -> Result<DistillGradients> {
    let n = z.batch();
    let (x, g_cache) = state.generate(z, true)?;
    let pass = critic(state, &x)?;
    let gamma = compute_gamma(&state.loss, &pass.values)?;
    // d L^ins_i / d value_i = (dL_f - dL_G) / (1 - γ_i)
    let weights: Vec<f64> = (0..n)
        .map(|i| (gamma.last_grad_d[i] - gamma.last_grad_g[i]) / (1.0 - gamma.gamma[i]) / n as f64)
        .collect();
    let (ps, xg) = critic_backward(state, &pass, &weights, true, true)?;
    let xg = xg.expect("input gradient requested");
    let g_seed = xg.scale_instances(&gamma.gamma)?;
    let generator = generator_grad(state, &g_cache.expect("cache requested"), &g_seed)?;
    Ok(DistillGradients {
        student: ps.expect("parameter gradients requested"),
        generator,
        gamma,
        discrepancy: mean(&pass.values),
    })
}

/// Plain oracle gradients of `L_S = mean discrepancy` and `L_G = -L_S`,
/// computed by two separate backward passes.
pub fn reference_gradients(state: &DistillState, z: &Tensor) -> Result<(ParamSet, ParamSet)> {
    let n = z.batch() as f64;
    let (x, g_cache) = state.generate(z, true)?;
    let pass = critic(state, &x)?;
    let w_s = vec![1.0 / n; z.batch()];
    let (ps, _) = critic_backward(state, &pass, &w_s, true, false)?;
    let w_g = vec![-1.0 / n; z.batch()];
    let (_, xg) = critic_backward(state, &pass, &w_g, false, true)?;
    let pg = generator_grad(state, &g_cache.expect("cache requested"), &xg.expect("input gradient"))?;
    Ok((ps.expect("parameter gradients requested"), pg))
}

fn check_finite(step: u64, v: f64) -> Result<()> {
    if v.is_finite() {
        Ok(())
    } else {
        Err(Error::NonFiniteLoss {
            step,
            detail: format!("discrepancy = {v}"),
        })
    }
}

fn metrics(state: &mut DistillState, mode: Mode, start: Instant, timing: bool, disc: f64, gamma: (f64, f64, f64)) -> StepMetrics {
    let wall_ms = if timing {
        start.elapsed().as_secs_f64() * 1e3
    } else {
        0.0
    };
    state.ledger.end_round(Some(wall_ms));
    state.step += 1;
    let c = state.ledger.cumulative();
    StepMetrics {
        step: state.step,
        mode,
        loss_d: disc,
        loss_g: -disc,
        gamma_mean: gamma.0,
        gamma_min: gamma.1,
        gamma_max: gamma.2,
        unstable_count: 0,
        g_passes: c.g_units(),
        d_passes: c.d_units(),
        wall_ms,
    }
}

/// One one-stage round with simultaneous updates.
pub fn one_stage_round(state: &mut DistillState, batch: usize, timing: bool) -> Result<StepMetrics> {
    let start = Instant::now();
    let z = state.sample_latent(batch);
    let g = one_stage_gradients(state, &z)?;
    check_finite(state.step, g.discrepancy)?;
    state.ledger.g_forward(1);
    state.ledger.d_forward(1);
    state.ledger.d_backward(1);
    state.ledger.g_backward(1);
    adam_update(&mut state.student, &g.student, &mut state.opt_s, &state.adam)?;
    adam_update(&mut state.generator, &g.generator, &mut state.opt_g, &state.adam)?;
    let stats = (g.gamma.mean(), g.gamma.min(), g.gamma.max());
    Ok(metrics(state, Mode::One, start, timing, g.discrepancy, stats))
}

/// `k` student iterations on fresh synthetic batches, then one generator
/// iteration with the student frozen.
pub fn two_stage_round(state: &mut DistillState, batch: usize, k: usize, timing: bool) -> Result<StepMetrics> {
    let start = Instant::now();
    let w = vec![1.0 / batch as f64; batch];
    let mut disc = 0.0;
    for _ in 0..k {
        let z = state.sample_latent(batch);
        let (x, _) = state.generate(&z, false)?;
        let pass = critic(state, &x)?;
        disc = mean(&pass.values);
        check_finite(state.step, disc)?;
        let (ps, _) = critic_backward(state, &pass, &w, true, false)?;
        state.ledger.g_forward(1);
        state.ledger.d_forward(1);
        state.ledger.d_backward(1);
        adam_update(
            &mut state.student,
            &ps.expect("parameter gradients requested"),
            &mut state.opt_s,
            &state.adam,
        )?;
    }
    let z = state.sample_latent(batch);
    let (x, g_cache) = state.generate(&z, true)?;
    let pass = critic(state, &x)?;
    check_finite(state.step, mean(&pass.values))?;
    let wg: Vec<f64> = w.iter().map(|v| -v).collect();
    let (_, xg) = critic_backward(state, &pass, &wg, false, true)?;
    let pg = generator_grad(state, &g_cache.expect("cache requested"), &xg.expect("input gradient"))?;
    state.ledger.g_forward(1);
    state.ledger.d_forward(1);
    state.ledger.d_backward(1);
    state.ledger.g_backward(1);
    adam_update(&mut state.generator, &pg, &mut state.opt_g, &state.adam)?;
    Ok(metrics(state, Mode::Two, start, timing, disc, (-1.0, -1.0, -1.0)))
}

/// Pass-units consumed by one round of each mode.
pub fn round_cost(mode: Mode, student_iters: usize) -> u64 {
    match mode {
        Mode::One => 4,
        Mode::Two => 4 + 3 * student_iters as u64,
    }
}

#[derive(Clone, Debug)]
pub struct DistillOutcome {
    pub student_spec: NetworkSpec,
    pub student: ParamSet,
    pub accuracy: f64,
    pub ledger: PassLedger,
    pub metrics: Vec<StepMetrics>,
    /// Teacher digest before and after the run.
    pub teacher_fingerprints: (u64, u64),
}

/// Runs rounds of `mode` until the next round would exceed the pass budget,
/// then scores the student on held-out points.
pub fn distill_adversarial(
    cfg: &DistillConfig,
    mode: Mode,
    teacher: &TeacherFit,
    timing: bool,
) -> Result<DistillOutcome> {
    let before = teacher.params.fingerprint();
    let mut state = DistillState::new(cfg, teacher.clone())?;
    let cost = round_cost(mode, cfg.student_iters);
    let rounds = cfg.budget / cost;
    let mut rows = Vec::with_capacity(rounds as usize);
    for _ in 0..rounds {
        let m = match mode {
            Mode::One => one_stage_round(&mut state, cfg.batch, timing)?,
            Mode::Two => two_stage_round(&mut state, cfg.batch, cfg.student_iters, timing)?,
        };
        rows.push(m);
    }
    let (hx, hy) = holdout(cfg)?;
    let accuracy = accuracy(&state.student_spec, &state.student, &hx, &hy)?;
    Ok(DistillOutcome {
        teacher_fingerprints: (before, state.teacher.params.fingerprint()),
        student_spec: state.student_spec,
        student: state.student,
        accuracy,
        ledger: state.ledger,
        metrics: rows,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::relative_l2;

    fn small() -> DistillConfig {
        DistillConfig {
            teacher_hidden: vec![8],
            student_hidden: vec![8],
            generator_hidden: vec![6],
            teacher_steps: 0,
            eval_points: 50,
            budget: 40,
            ..DistillConfig::default()
        }
    }

    #[test]
    fn kl_gradients_match_finite_differences() {
        let d = Discrepancy::SoftenedKl { temperature: 2.0 };
        let s = [0.3, -1.2, 0.8];
        let t = [1.0, 0.1, -0.5];
        let (_, gs, gt) = d.eval(&s, &t);
        let h = 1e-6;
        for j in 0..3 {
            let mut sp = s;
            sp[j] += h;
            let mut sm = s;
            sm[j] -= h;
            let num = (d.eval(&sp, &t).0 - d.eval(&sm, &t).0) / (2.0 * h);
            assert!((num - gs[j]).abs() < 1e-8);
            let mut tp = t;
            tp[j] += h;
            let mut tm = t;
            tm[j] -= h;
            let num = (d.eval(&s, &tp).0 - d.eval(&s, &tm).0) / (2.0 * h);
            assert!((num - gt[j]).abs() < 1e-8);
        }
    }

    #[test]
    fn one_stage_matches_reference() {
        let cfg = small();
        let teacher = fit_teacher(&cfg, 3).unwrap();
        let mut st = DistillState::new(&cfg, teacher).unwrap();
        let z = st.sample_latent(16);
        let g = one_stage_gradients(&st, &z).unwrap();
        let (s, gen) = reference_gradients(&st, &z).unwrap();
        assert!(g.gamma.gamma.iter().all(|&v| v == -1.0));
        assert!(relative_l2(&g.student, &s).unwrap() < 1e-8);
        assert!(relative_l2(&g.generator, &gen).unwrap() < 1e-8);
    }

    #[test]
    fn identical_student_is_a_fixed_point() {
        let cfg = DistillConfig {
            teacher_hidden: vec![8],
            ..small()
        };
        let teacher = fit_teacher(&cfg, 2).unwrap();
        let mut st = DistillState::new(&cfg, teacher.clone()).unwrap();
        st.student = teacher.params.clone();
        let gen = st.generator.clone();
        let m = one_stage_round(&mut st, 8, false).unwrap();
        assert_eq!(m.loss_d, 0.0);
        assert_eq!(st.student, teacher.params);
        assert_eq!(st.generator, gen);
    }

    #[test]
    fn round_costs_and_budget() {
        assert_eq!(round_cost(Mode::Two, 5), 19);
        let cfg = small();
        let teacher = fit_teacher(&cfg, 0).unwrap();
        let out = distill_adversarial(&cfg, Mode::Two, &teacher, false).unwrap();
        let c = out.ledger.cumulative();
        assert_eq!((c.g_units(), c.d_units()), (2 * 7, 2 * 12));
        assert_eq!(out.teacher_fingerprints.0, out.teacher_fingerprints.1);
        let out = distill_adversarial(&cfg, Mode::One, &teacher, false).unwrap();
        assert_eq!(out.ledger.cumulative().total(), 40);
    }
}
