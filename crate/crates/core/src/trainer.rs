//! One-stage and two-stage adversarial training.
//!
//! Both trainers share the optimizer, the parameter and loss containers, and
//! the pass ledger. Losses are batch means: `L_D = mean_r L_D^r + mean_f L_D^f`
//! and `L_G = mean_f L_G`, with equal real and fake batch sizes.

use std::fmt;
use std::time::Instant;

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::gamma::{compute_gamma_guarded, GammaBatch};
use crate::ledger::PassLedger;
use crate::losses::{eval_terms, real_derivatives, scores_of, AdversarialLossSpec, ScoreBatch};
use crate::nn::{backward_input, backward_network, forward_network, NetworkSpec, ParamSet};
use crate::optim::{adam_update, AdamConfig, AdamState};
use crate::tensor::Tensor;

/// Weight clip applied to the critic after each update for the `wgan` family.
pub const WGAN_CLIP: f64 = 0.01;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Mode {
    One,
    Two,
}

impl fmt::Display for Mode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Mode::One => "one",
            Mode::Two => "two",
        })
    }
}

impl std::str::FromStr for Mode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Mode> {
        match s {
            "one" => Ok(Mode::One),
            "two" => Ok(Mode::Two),
            other => Err(Error::Config(format!("unknown mode `{other}`; expected one or two"))),
        }
    }
}

pub struct TrainState {
    pub gen_spec: NetworkSpec,
    pub gen_params: ParamSet,
    pub disc_spec: NetworkSpec,
    pub disc_params: ParamSet,
    pub loss: AdversarialLossSpec,
    pub adam: AdamConfig,
    pub opt_g: AdamState,
    pub opt_d: AdamState,
    pub rng: ChaCha8Rng,
    pub ledger: PassLedger,
    pub step: u64,
    pub latent_dim: usize,
    /// Symmetric weight clip applied to the discriminator after its update.
    pub clip: Option<f64>,
    /// Discriminator iterations per two-stage round.
    pub d_steps: usize,
    /// Measure wall time per round; when off, zero is recorded.
    pub timing: bool,
}

impl TrainState {
    /// Fresh state with both networks initialized from `rng`.
    pub fn new(
        gen_spec: NetworkSpec,
        disc_spec: NetworkSpec,
        loss: AdversarialLossSpec,
        adam: AdamConfig,
        mut rng: ChaCha8Rng,
    ) -> Result<TrainState> {
        let latent_dim = match gen_spec.input_shape.as_slice() {
            [d] => *d,
            other => {
                return Err(Error::Config(format!(
                    "generator input must be a latent vector, got shape {other:?}"
                )))
            }
        };
        let g_out = gen_spec.output_shape()?;
        if g_out != disc_spec.input_shape {
            return Err(Error::Config(format!(
                "generator output {g_out:?} does not feed discriminator input {:?}",
                disc_spec.input_shape
            )));
        }
        if disc_spec.output_shape()? != [1] {
            return Err(Error::Config("discriminator must emit one score".into()));
        }
        let gen_params = ParamSet::init(&gen_spec, &mut rng);
        let disc_params = ParamSet::init(&disc_spec, &mut rng);
        let clip = (loss.name() == "wgan").then_some(WGAN_CLIP);
        Ok(TrainState {
            opt_g: AdamState::new(&gen_params),
            opt_d: AdamState::new(&disc_params),
            gen_spec,
            gen_params,
            disc_spec,
            disc_params,
            loss,
            adam,
            rng,
            ledger: PassLedger::default(),
            step: 0,
            latent_dim,
            clip,
            d_steps: 1,
            timing: true,
        })
    }

    /// Draws a `[n, latent_dim]` standard normal batch from the state's stream.
    pub fn sample_latent(&mut self, n: usize) -> Tensor {
        let data = (0..n * self.latent_dim)
            .map(|_| self.rng.sample::<f64, _>(StandardNormal))
            .collect();
        Tensor::from_parts(vec![n, self.latent_dim], data)
    }

    /// Generator samples without touching the ledger.
    pub fn generate(&self, z: &Tensor) -> Result<Tensor> {
        Ok(forward_network(&self.gen_spec, &self.gen_params, z, false)?.0)
    }

    fn clip_disc(&mut self) {
        if let Some(c) = self.clip {
            for (_, t) in self.disc_params.iter_mut() {
                t.data_mut().iter_mut().for_each(|v| *v = v.clamp(-c, c));
            }
        }
    }
}

/// Per-round metrics row.
#[derive(Clone, Debug, PartialEq)]
pub struct StepMetrics {
    pub step: u64,
    pub mode: Mode,
    pub loss_d: f64,
    pub loss_g: f64,
    pub gamma_mean: f64,
    pub gamma_min: f64,
    pub gamma_max: f64,
    pub unstable_count: usize,
    /// Cumulative generator pass-units.
    pub g_passes: u64,
    /// Cumulative discriminator pass-units.
    pub d_passes: u64,
    pub wall_ms: f64,
}

impl StepMetrics {
    pub const CSV_HEADER: &'static str = "step,mode,loss_d,loss_g,gamma_mean,gamma_min,gamma_max,unstable_count,g_passes,d_passes,wall_ms";

    pub fn csv_row(&self) -> String {
        format!(
            "{},{},{},{},{},{},{},{},{},{},{}",
            self.step,
            self.mode,
            self.loss_d,
            self.loss_g,
            self.gamma_mean,
            self.gamma_min,
            self.gamma_max,
            self.unstable_count,
            self.g_passes,
            self.d_passes,
            self.wall_ms
        )
    }
}

/// Everything one-stage training derives from a single shared backward pass.
#[derive(Clone, Debug)]
pub struct OsganGradients {
    pub grad_d: ParamSet,
    pub grad_g: ParamSet,
    pub gamma: GammaBatch,
    /// Instances whose ratio was moved by the stability guard.
    pub adjusted: usize,
    pub loss_d: f64,
    pub loss_g: f64,
    /// Parameter digests seen by the forward caches.
    pub fingerprint_g: u64,
    pub fingerprint_d: u64,
}

fn check_batches(real: &Tensor, z: &Tensor) -> Result<()> {
    if real.batch() != z.batch() || real.batch() == 0 {
        return Err(Error::Usage(format!(
            "real and fake batches must be equal and non-empty, got {} and {}",
            real.batch(),
            z.batch()
        )));
    }
    Ok(())
}

fn finite_loss(step: u64, loss_d: f64, loss_g: f64) -> Result<()> {
    if loss_d.is_finite() && loss_g.is_finite() {
        Ok(())
    } else {
        Err(Error::NonFiniteLoss {
            step,
            detail: format!("loss_d = {loss_d}, loss_g = {loss_g}"),
        })
    }
}

/// Gradients of one one-stage step at the current parameters.
///
/// One generator forward, one discriminator forward over the concatenated
/// real and fake batch, one discriminator backward seeded by the mean instance
/// loss `L_D^ins`, then one generator backward seeded by `γ_i` times the
/// input gradient at each fake sample.
pub fn osgan_gradients(state: &TrainState, real: &Tensor, z: &Tensor) -> Result<OsganGradients> {
    check_batches(real, z)?;
    let n = real.batch();
    let (fake, g_cache) = forward_network(&state.gen_spec, &state.gen_params, z, true)?;
    let g_cache = g_cache.expect("cache requested");
    let both = Tensor::concat_batch(&[real, &fake])?;
    let (out, d_cache) = forward_network(&state.disc_spec, &state.disc_params, &both, true)?;
    let d_cache = d_cache.expect("cache requested");
    let s = scores_of(&out)?;
    let scores = ScoreBatch::new(s[..n].to_vec(), s[n..].to_vec());
    let terms = eval_terms(&state.loss, &scores)?;
    let (loss_d, loss_g) = (terms.loss_d(), terms.loss_g());
    finite_loss(state.step, loss_d, loss_g)?;

    let (gamma, adjusted) = compute_gamma_guarded(&state.loss, &scores.fake)?;
    let dr = real_derivatives(&state.loss, &scores.real)?;
    let inv = 1.0 / n as f64;
    let mut seed = Vec::with_capacity(2 * n);
    seed.extend(dr.iter().map(|d| d * inv));
    for i in 0..n {
        let mixed = gamma.last_grad_d[i] - gamma.last_grad_g[i];
        seed.push(mixed / (1.0 - gamma.gamma[i]) * inv);
    }
    let d_back = backward_network(
        &state.disc_spec,
        &state.disc_params,
        &d_cache,
        &Tensor::column(seed)?,
        false,
    )?;
    let fake_grad = d_back.input_grad.slice_batch(n, 2 * n)?;
    let g_seed = fake_grad.scale_instances(&gamma.gamma)?;
    let g_back = backward_network(&state.gen_spec, &state.gen_params, &g_cache, &g_seed, false)?;
    Ok(OsganGradients {
        grad_d: d_back.param_grads.expect("parameter gradients requested"),
        grad_g: g_back.param_grads.expect("parameter gradients requested"),
        gamma,
        adjusted,
        loss_d,
        loss_g,
        fingerprint_g: g_cache.params_fingerprint(),
        fingerprint_d: d_cache.params_fingerprint(),
    })
}

fn gamma_stats(g: &GammaBatch) -> (f64, f64, f64) {
    (g.mean(), g.min(), g.max())
}

/// One one-stage round: shared gradients, then simultaneous updates.
pub fn osgan_step(state: &mut TrainState, real: &Tensor) -> Result<StepMetrics> {
    let start = Instant::now();
    let z = state.sample_latent(real.batch());
    let grads = osgan_gradients(state, real, &z)?;
    state.ledger.g_forward(1);
    state.ledger.g_backward(1);
    state.ledger.d_forward(2);
    state.ledger.d_backward(2);
    debug_assert_eq!(grads.fingerprint_d, state.disc_params.fingerprint());
    let (mut new_g, mut new_d) = (state.gen_params.clone(), state.disc_params.clone());
    let (mut opt_g, mut opt_d) = (state.opt_g.clone(), state.opt_d.clone());
    adam_update(&mut new_d, &grads.grad_d, &mut opt_d, &state.adam)?;
    adam_update(&mut new_g, &grads.grad_g, &mut opt_g, &state.adam)?;
    state.gen_params = new_g;
    state.disc_params = new_d;
    state.opt_g = opt_g;
    state.opt_d = opt_d;
    state.clip_disc();
    Ok(finish_round(state, Mode::One, start, grads.loss_d, grads.loss_g, &grads.gamma, grads.adjusted))
}

fn finish_round(
    state: &mut TrainState,
    mode: Mode,
    start: Instant,
    loss_d: f64,
    loss_g: f64,
    gamma: &GammaBatch,
    unstable: usize,
) -> StepMetrics {
    let wall_ms = if state.timing {
        start.elapsed().as_secs_f64() * 1e3
    } else {
        0.0
    };
    state.ledger.end_round(Some(wall_ms));
    state.step += 1;
    let c = state.ledger.cumulative();
    let (gamma_mean, gamma_min, gamma_max) = gamma_stats(gamma);
    StepMetrics {
        step: state.step,
        mode,
        loss_d,
        loss_g,
        gamma_mean,
        gamma_min,
        gamma_max,
        unstable_count: unstable,
        g_passes: c.g_units(),
        d_passes: c.d_units(),
        wall_ms,
    }
}

/// Stage-1 discriminator gradient at the current parameters for samples `z`.
pub fn tsgan_disc_gradient(state: &TrainState, real: &Tensor, z: &Tensor) -> Result<(ParamSet, f64)> {
    check_batches(real, z)?;
    let n = real.batch();
    let fake = state.generate(z)?;
    let both = Tensor::concat_batch(&[real, &fake])?;
    let (out, cache) = forward_network(&state.disc_spec, &state.disc_params, &both, true)?;
    let s = scores_of(&out)?;
    let scores = ScoreBatch::new(s[..n].to_vec(), s[n..].to_vec());
    let terms = eval_terms(&state.loss, &scores)?;
    let loss_d = terms.loss_d();
    finite_loss(state.step, loss_d, 0.0)?;
    let inv = 1.0 / n as f64;
    let mut seed: Vec<f64> = real_derivatives(&state.loss, &scores.real)?
        .into_iter()
        .map(|d| d * inv)
        .collect();
    let fd = crate::losses::term_derivatives(&state.loss, &scores.fake)?;
    seed.extend(fd.fake.iter().map(|d| d * inv));
    let back = backward_network(
        &state.disc_spec,
        &state.disc_params,
        &cache.expect("cache requested"),
        &Tensor::column(seed)?,
        false,
    )?;
    Ok((back.param_grads.expect("parameter gradients requested"), loss_d))
}

/// Stage-2 generator gradient with the discriminator frozen.
///
/// The discriminator backward also produces its parameter gradients, which
/// are discarded; this is what a framework autograd pass does by default.
fn tsgan_gen_gradient(state: &TrainState, z: &Tensor) -> Result<(ParamSet, f64, Vec<f64>)> {
    let n = z.batch();
    let (fake, g_cache) = forward_network(&state.gen_spec, &state.gen_params, z, true)?;
    let (out, d_cache) = forward_network(&state.disc_spec, &state.disc_params, &fake, true)?;
    let fake_scores = scores_of(&out)?;
    let d = crate::losses::term_derivatives(&state.loss, &fake_scores)?;
    let loss_g =
        fake_scores.iter().map(|&s| state.loss.gen_term(s)).sum::<f64>() / n as f64;
    finite_loss(state.step, 0.0, loss_g)?;
    let inv = 1.0 / n as f64;
    let seed = Tensor::column(d.gen.iter().map(|v| v * inv).collect())?;
    let d_back = backward_network(
        &state.disc_spec,
        &state.disc_params,
        &d_cache.expect("cache requested"),
        &seed,
        false,
    )?;
    let g_back = backward_network(
        &state.gen_spec,
        &state.gen_params,
        &g_cache.expect("cache requested"),
        &d_back.input_grad,
        false,
    )?;
    Ok((
        g_back.param_grads.expect("parameter gradients requested"),
        loss_g,
        fake_scores,
    ))
}

/// One two-stage round with a single discriminator iteration.
pub fn tsgan_round(state: &mut TrainState, real: &Tensor) -> Result<StepMetrics> {
    tsgan_round_multi(state, std::slice::from_ref(real))
}

/// One two-stage round: a discriminator iteration per real batch with fresh
/// fakes, then a generator iteration on newly sampled fakes.
pub fn tsgan_round_multi(state: &mut TrainState, reals: &[Tensor]) -> Result<StepMetrics> {
    let Some(first) = reals.first() else {
        return Err(Error::Usage("a two-stage round needs at least one real batch".into()));
    };
    let start = Instant::now();
    let n = first.batch();
    let mut loss_d = 0.0;
    for real in reals {
        let z = state.sample_latent(real.batch());
        let (grad_d, l) = tsgan_disc_gradient(state, real, &z)?;
        state.ledger.g_forward(1);
        state.ledger.d_forward(2);
        state.ledger.d_backward(2);
        adam_update(&mut state.disc_params, &grad_d, &mut state.opt_d, &state.adam)?;
        state.clip_disc();
        loss_d = l;
    }
    let z = state.sample_latent(n);
    let (grad_g, loss_g, fake_scores) = tsgan_gen_gradient(state, &z)?;
    state.ledger.g_forward(1);
    state.ledger.d_forward(1);
    state.ledger.d_backward(1);
    state.ledger.g_backward(1);
    adam_update(&mut state.gen_params, &grad_g, &mut state.opt_g, &state.adam)?;
    // ratios are diagnostics only here
    let (gamma, adjusted) = compute_gamma_guarded(&state.loss, &fake_scores)?;
    Ok(finish_round(state, Mode::Two, start, loss_d, loss_g, &gamma, adjusted))
}

/// Plain gradients computed without any ratio machinery, for use as an oracle.
pub mod reference {
    use super::*;

    /// `∇θ_D (mean L_D^r + mean L_D^f)` at the current parameters.
    pub fn disc_gradient(state: &TrainState, real: &Tensor, z: &Tensor) -> Result<ParamSet> {
        Ok(tsgan_disc_gradient(state, real, z)?.0)
    }

    /// `∇θ_G mean L_G` with a frozen discriminator.
    pub fn gen_gradient(state: &TrainState, z: &Tensor) -> Result<ParamSet> {
        let (fake, g_cache) = forward_network(&state.gen_spec, &state.gen_params, z, true)?;
        let (out, d_cache) = forward_network(&state.disc_spec, &state.disc_params, &fake, true)?;
        let s = scores_of(&out)?;
        let d = crate::losses::term_derivatives(&state.loss, &s)?;
        let inv = 1.0 / z.batch() as f64;
        let seed = Tensor::column(d.gen.iter().map(|v| v * inv).collect())?;
        let through_d = backward_input(
            &state.disc_spec,
            &state.disc_params,
            &d_cache.expect("cache requested"),
            &seed,
            false,
        )?;
        Ok(backward_network(
            &state.gen_spec,
            &state.gen_params,
            &g_cache.expect("cache requested"),
            &through_d.input_grad,
            false,
        )?
        .param_grads
        .expect("parameter gradients requested"))
    }
}
