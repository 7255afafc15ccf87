//! Randomized self-checks: ratio invariance across layers, one-stage versus
//! plain gradients, and finite differences against the engine.
//!
//! Trial `t` of a run with base seed `s` uses seed `s + t` for everything it
//! draws, so `--seed s+t --trials 1` replays a single trial.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::distill::{fit_teacher, one_stage_gradients, reference_gradients, DistillConfig, DistillState};
use crate::error::Result;
use crate::gamma::verify_ratio_invariance;
use crate::losses::{make_loss, FAMILIES};
use crate::nn::{
    finite_difference_check, relative_l2, Activation, GradCheck, Layer, NetworkSpec, Padding, ParamSet,
    ScalarHead,
};
use crate::optim::AdamConfig;
use crate::tensor::Tensor;
use crate::trainer::{osgan_gradients, reference, TrainState};

pub const RATIO_TOL: f64 = 1e-6;
pub const EQUIVALENCE_TOL: f64 = 1e-8;
pub const FD_TOL: f64 = 1e-6;
pub const FD_STEP: f64 = 1e-5;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Tolerances {
    pub ratio: f64,
    pub equivalence: f64,
    pub fd: f64,
}

impl Default for Tolerances {
    fn default() -> Self {
        Tolerances {
            ratio: RATIO_TOL,
            equivalence: EQUIVALENCE_TOL,
            fd: FD_TOL,
        }
    }
}

impl Tolerances {
    pub fn uniform(tol: f64) -> Tolerances {
        Tolerances {
            ratio: tol,
            equivalence: tol,
            fd: tol,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Suite {
    Ratio,
    Equivalence,
    FiniteDifference,
}

impl Suite {
    pub fn name(&self) -> &'static str {
        match self {
            Suite::Ratio => "ratio-invariance",
            Suite::Equivalence => "gradient-equivalence",
            Suite::FiniteDifference => "finite-difference",
        }
    }
}

/// One checked case.
#[derive(Clone, Debug, PartialEq)]
pub struct CaseResult {
    pub suite: Suite,
    pub seed: u64,
    pub architecture: String,
    pub family: String,
    /// Largest observed deviation, or `None` when the case was inconclusive.
    pub value: Option<f64>,
    pub tol: f64,
}

impl CaseResult {
    pub fn passed(&self) -> bool {
        matches!(self.value, Some(v) if v <= self.tol)
    }

    pub fn failed(&self) -> bool {
        matches!(self.value, Some(v) if !(v <= self.tol))
    }
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct VerifyReport {
    pub cases: Vec<CaseResult>,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct Counts {
    pub passed: usize,
    pub failed: usize,
    pub inconclusive: usize,
}

impl VerifyReport {
    pub fn counts(&self, suite: Suite) -> Counts {
        let mut c = Counts::default();
        for r in self.cases.iter().filter(|r| r.suite == suite) {
            if r.passed() {
                c.passed += 1;
            } else if r.failed() {
                c.failed += 1;
            } else {
                c.inconclusive += 1;
            }
        }
        c
    }

    pub fn failures(&self) -> impl Iterator<Item = &CaseResult> {
        self.cases.iter().filter(|r| r.failed())
    }

    /// Passes when nothing failed and every suite has at least one conclusive case.
    pub fn all_passed(&self) -> bool {
        [Suite::Ratio, Suite::Equivalence, Suite::FiniteDifference]
            .iter()
            .all(|&s| {
                let c = self.counts(s);
                c.failed == 0 && c.passed > 0
            })
    }

    pub fn max_value(&self, suite: Suite) -> f64 {
        self.cases
            .iter()
            .filter(|r| r.suite == suite)
            .filter_map(|r| r.value)
            .fold(0.0, f64::max)
    }
}

fn pick_activation(rng: &mut impl Rng) -> Activation {
    *[
        Activation::LeakyRelu { slope: 0.2 },
        Activation::Tanh,
        Activation::Sigmoid,
    ]
    .choose(rng)
    .unwrap()
}

/// Network body with 2 to 5 trainable layers ending in one unit, without a
/// tail activation. With `allow_conv`, one in three bodies starts with a
/// convolution and average pooling on an 8×8 input.
pub fn random_body(rng: &mut impl Rng, input_dim: usize, allow_conv: bool) -> Result<NetworkSpec> {
    let depth = rng.gen_range(2..=5);
    let mut layers = Vec::new();
    let (input_shape, mut width, mut trainable) = if allow_conv && rng.gen_bool(1.0 / 3.0) {
        let cin = rng.gen_range(1..=2);
        let cout = rng.gen_range(2..=4);
        let padding = if rng.gen_bool(0.5) {
            Padding::SameZero
        } else {
            Padding::Valid
        };
        layers.push(Layer::Conv2d {
            in_channels: cin,
            out_channels: cout,
            kernel: 3,
            stride: 1,
            padding,
        });
        layers.push(Layer::Activation(pick_activation(rng)));
        layers.push(Layer::AvgPool { window: 2 });
        let side = if padding == Padding::SameZero { 4 } else { 3 };
        (vec![cin, 8, 8], cout * side * side, 1)
    } else {
        (vec![input_dim], input_dim, 0)
    };
    while trainable < depth - 1 {
        let out = rng.gen_range(4..=32);
        layers.push(Layer::affine(width, out));
        layers.push(Layer::Activation(pick_activation(rng)));
        width = out;
        trainable += 1;
    }
    layers.push(Layer::affine(width, 1));
    NetworkSpec::new(input_shape, layers)
}

fn with_tail(body: &NetworkSpec, tail: Activation) -> NetworkSpec {
    let mut n = body.clone();
    if tail != Activation::Identity {
        n.layers.push(Layer::Activation(tail));
    }
    n
}

fn normal_tensor(rng: &mut impl Rng, shape: Vec<usize>, scale: f64) -> Tensor {
    let n: usize = shape.iter().product();
    let data = (0..n).map(|_| scale * rng.sample::<f64, _>(StandardNormal)).collect();
    Tensor::from_parts(shape, data)
}

fn batch_shape(n: usize, instance: &[usize]) -> Vec<usize> {
    let mut s = vec![n];
    s.extend_from_slice(instance);
    s
}

fn ratio_trial(seed: u64, tol: f64, out: &mut Vec<CaseResult>) -> Result<()> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let input_dim = rng.gen_range(2..=6);
    let body = random_body(&mut rng, input_dim, true)?;
    let input = normal_tensor(&mut rng, batch_shape(4, &body.input_shape), 1.0);
    for family in FAMILIES {
        let loss = make_loss(family)?;
        let net = with_tail(&body, loss.tail());
        let params = ParamSet::init(&net, &mut rng);
        let report = verify_ratio_invariance(&net, &params, &input, &loss, tol)?;
        let value = (report.evaluated_instances() > 0).then_some(report.global_max_deviation);
        out.push(CaseResult {
            suite: Suite::Ratio,
            seed,
            architecture: net.to_string(),
            family: family.to_string(),
            value,
            tol,
        });
    }
    Ok(())
}

fn equivalence_trial(seed: u64, tol: f64, out: &mut Vec<CaseResult>) -> Result<()> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let latent = rng.gen_range(2..=6);
    let data_dim = rng.gen_range(2..=6);
    let hidden = rng.gen_range(4..=16);
    let g = NetworkSpec::mlp(&[latent, hidden, data_dim], pick_activation(&mut rng), None)?;
    let body = random_body(&mut rng, data_dim, false)?;
    let n = rng.gen_range(3..=8);
    for family in FAMILIES {
        let loss = make_loss(family)?;
        let d = with_tail(&body, loss.tail());
        let arch = format!("G {g} | D {d}");
        let st = TrainState::new(
            g.clone(),
            d,
            loss,
            AdamConfig::default(),
            ChaCha8Rng::seed_from_u64(rng.gen()),
        )?;
        let real = normal_tensor(&mut rng, vec![n, data_dim], 1.0);
        let z = normal_tensor(&mut rng, vec![n, latent], 1.0);
        let os = osgan_gradients(&st, &real, &z)?;
        // the identity only holds where the stability guard left γ untouched
        let value = if os.adjusted > 0 {
            None
        } else {
            let dd = relative_l2(&os.grad_d, &reference::disc_gradient(&st, &real, &z)?)?;
            let dg = relative_l2(&os.grad_g, &reference::gen_gradient(&st, &z)?)?;
            Some(dd.max(dg))
        };
        out.push(CaseResult {
            suite: Suite::Equivalence,
            seed,
            architecture: arch,
            family: family.to_string(),
            value,
            tol,
        });
    }
    let cfg = DistillConfig {
        seed,
        teacher_hidden: vec![rng.gen_range(4..=12)],
        student_hidden: vec![rng.gen_range(4..=12)],
        generator_hidden: vec![rng.gen_range(4..=12)],
        latent_dim: rng.gen_range(2..=6),
        eval_points: 10,
        ..DistillConfig::default()
    };
    let teacher = fit_teacher(&cfg, 2)?;
    let mut st = DistillState::new(&cfg, teacher)?;
    let z = st.sample_latent(rng.gen_range(3..=8));
    let g = one_stage_gradients(&st, &z)?;
    let (s_ref, g_ref) = reference_gradients(&st, &z)?;
    let value = relative_l2(&g.student, &s_ref)?.max(relative_l2(&g.generator, &g_ref)?);
    out.push(CaseResult {
        suite: Suite::Equivalence,
        seed,
        architecture: format!(
            "distill T {} | S {} | G {}",
            st.teacher.spec, st.student_spec, st.gen_spec
        ),
        family: "discrepancy".into(),
        value: Some(value),
        tol,
    });
    Ok(())
}

fn fd_trial(seed: u64, tol: f64, out: &mut Vec<CaseResult>) -> Result<()> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let input_dim = rng.gen_range(2..=6);
    let body = random_body(&mut rng, input_dim, true)?;
    let net = with_tail(&body, pick_activation(&mut rng));
    let params = ParamSet::init(&net, &mut rng);
    let out_shape = batch_shape(2, &net.output_shape()?);
    let mut value = None;
    for _ in 0..5 {
        let input = normal_tensor(&mut rng, batch_shape(2, &net.input_shape), 1.0);
        let head = ScalarHead::Weighted(normal_tensor(&mut rng, out_shape.clone(), 1.0));
        match finite_difference_check(&net, &params, &input, &head, FD_STEP)? {
            GradCheck::Conclusive {
                max_relative_error, ..
            } => {
                value = Some(max_relative_error);
                break;
            }
            GradCheck::Inconclusive { .. } => continue,
        }
    }
    out.push(CaseResult {
        suite: Suite::FiniteDifference,
        seed,
        architecture: net.to_string(),
        family: "-".into(),
        value,
        tol,
    });
    Ok(())
}

/// Runs one trial of every suite.
pub fn run_trial(seed: u64, tol: &Tolerances) -> Result<Vec<CaseResult>> {
    let mut out = Vec::new();
    ratio_trial(seed, tol.ratio, &mut out)?;
    equivalence_trial(seed, tol.equivalence, &mut out)?;
    fd_trial(seed, tol.fd, &mut out)?;
    Ok(out)
}

pub fn run_suite(trials: u64, seed: u64, tol: &Tolerances) -> Result<VerifyReport> {
    let mut report = VerifyReport::default();
    for t in 0..trials {
        report.cases.extend(run_trial(seed.wrapping_add(t), tol)?);
    }
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn bodies_respect_the_layer_budget() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        for _ in 0..200 {
            let b = random_body(&mut rng, 3, true).unwrap();
            let trainable = b.layers.iter().filter(|l| l.is_trainable()).count();
            assert!((2..=5).contains(&trainable), "{b}");
            assert_eq!(b.output_shape().unwrap(), vec![1]);
        }
    }

    #[test]
    fn a_few_trials_pass() {
        let r = run_suite(3, 11, &Tolerances::default()).unwrap();
        assert!(r.all_passed(), "{:?}", r.failures().collect::<Vec<_>>());
    }

    #[test]
    fn zero_tolerance_fails() {
        let r = run_suite(2, 0, &Tolerances::uniform(0.0)).unwrap();
        assert!(!r.all_passed());
    }
}
