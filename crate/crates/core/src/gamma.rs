//! Per-instance gradient ratios and the gradient decomposition built on them.
//!
//! For a fake instance `i`, the ratio between the generator-loss gradient and
//! the discriminator-loss gradient with respect to any discriminator
//! activation of that instance is the same scalar `γ_i` at every layer. It is
//! therefore computed once from the score derivatives at the last layer:
//!
//! ```text
//! γ_i = (dL_G/ds) / (dL_D^f/ds)
//! ```
//!
//! `L_D^r` does not depend on fake samples, so `dL_D/ds = dL_D^f/ds` at fakes.
//! A single backward pass of the mixed loss `L_f = L_D^f - L_G` then splits as
//! `∇L_D^f = ∇L_f / (1 - γ_i)` and `∇L_G = γ_i ∇L_f / (1 - γ_i)`.

use std::fmt::Write as _;

use crate::error::{Error, Result};
use crate::losses::{eval_terms, term_derivatives, AdversarialLossSpec, ScoreBatch};
use crate::nn::{backward_network, forward_network, LayerTrace, NetworkSpec, ParamSet};
use crate::tensor::Tensor;

/// Guard on `|1 - γ_i|`.
pub const GAMMA_EPS: f64 = 1e-6;
/// Coordinates whose discriminator-loss gradient is at most this (absolute)
/// are excluded from ratio evaluation.
pub const MASK_EPS: f64 = 1e-12;

#[derive(Clone, Debug, PartialEq)]
pub struct GammaBatch {
    pub gamma: Vec<f64>,
    /// `dL_D/ds` per fake instance (equal to `dL_D^f/ds`).
    pub last_grad_d: Vec<f64>,
    /// `dL_G/ds` per fake instance.
    pub last_grad_g: Vec<f64>,
    pub stable: Vec<bool>,
}

impl GammaBatch {
    /// `γ_i = -1` for every instance: the symmetric case.
    pub fn symmetric(n: usize) -> GammaBatch {
        GammaBatch {
            gamma: vec![-1.0; n],
            last_grad_d: vec![1.0; n],
            last_grad_g: vec![-1.0; n],
            stable: vec![true; n],
        }
    }

    pub fn len(&self) -> usize {
        self.gamma.len()
    }

    pub fn is_empty(&self) -> bool {
        self.gamma.is_empty()
    }

    pub fn all_stable(&self) -> bool {
        self.stable.iter().all(|&s| s)
    }

    fn require_stable(&self) -> Result<()> {
        match self.stable.iter().position(|&s| !s) {
            None => Ok(()),
            Some(i) => Err(Error::Unstable {
                instance: i,
                margin: (1.0 - self.gamma[i]).abs(),
            }),
        }
    }

    pub fn mean(&self) -> f64 {
        if self.gamma.is_empty() {
            return 0.0;
        }
        self.gamma.iter().sum::<f64>() / self.gamma.len() as f64
    }

    pub fn min(&self) -> f64 {
        self.gamma.iter().copied().fold(f64::INFINITY, f64::min)
    }

    pub fn max(&self) -> f64 {
        self.gamma.iter().copied().fold(f64::NEG_INFINITY, f64::max)
    }
}

/// Last-layer ratio per fake instance. Fails on a zero fake-term derivative.
pub fn compute_gamma(spec: &AdversarialLossSpec, fake_scores: &[f64]) -> Result<GammaBatch> {
    let d = term_derivatives(spec, fake_scores)?;
    if let Some(i) = d.fake.iter().position(|&v| v == 0.0) {
        return Err(Error::DegenerateRatio { instance: i });
    }
    let gamma: Vec<f64> = d.gen.iter().zip(&d.fake).map(|(g, f)| g / f).collect();
    let stable = gamma.iter().map(|&g| (1.0 - g).abs() >= GAMMA_EPS).collect();
    Ok(GammaBatch {
        gamma,
        last_grad_d: d.fake,
        last_grad_g: d.gen,
        stable,
    })
}

/// Ratios with the stability guard applied instead of failing.
///
/// Instances with `|1 - γ| < GAMMA_EPS` move to the nearest value on the guard
/// boundary; instances whose fake-term derivative is zero get `γ = -1/GAMMA_EPS`
/// (or `0` when the generator derivative is zero too). The returned count is the
/// number of adjusted instances; their `stable` flag stays cleared.
pub fn compute_gamma_guarded(
    spec: &AdversarialLossSpec,
    fake_scores: &[f64],
) -> Result<(GammaBatch, usize)> {
    let d = term_derivatives(spec, fake_scores)?;
    let mut adjusted = 0;
    let mut gamma = Vec::with_capacity(d.fake.len());
    let mut stable = Vec::with_capacity(d.fake.len());
    for (&g, &f) in d.gen.iter().zip(&d.fake) {
        let (value, ok) = if f == 0.0 {
            (if g == 0.0 { 0.0 } else { -1.0 / GAMMA_EPS }, false)
        } else {
            let r = g / f;
            if (1.0 - r).abs() >= GAMMA_EPS {
                (r, true)
            } else if r < 1.0 {
                (1.0 - GAMMA_EPS, false)
            } else {
                (1.0 + GAMMA_EPS, false)
            }
        };
        if !ok {
            adjusted += 1;
        }
        gamma.push(value);
        stable.push(ok);
    }
    Ok((
        GammaBatch {
            gamma,
            last_grad_d: d.fake,
            last_grad_g: d.gen,
            stable,
        },
        adjusted,
    ))
}

#[derive(Clone, Debug, PartialEq)]
pub struct InstanceLosses {
    pub d: Vec<f64>,
    pub g: Vec<f64>,
}

/// `L_D^ins = L_D^r + (L_D^f - L_G)/(1-γ)` and `L_G^ins = γ (L_D^f - L_G)/(1-γ)`,
/// pairing real instance `i` with fake instance `i`. `γ` is a constant here.
pub fn instance_losses(
    spec: &AdversarialLossSpec,
    scores: &ScoreBatch,
    gamma: &GammaBatch,
) -> Result<InstanceLosses> {
    if scores.real.len() != scores.fake.len() || gamma.len() != scores.fake.len() {
        return Err(Error::Usage(format!(
            "instance losses need equal real/fake/gamma counts, got {}/{}/{}",
            scores.real.len(),
            scores.fake.len(),
            gamma.len()
        )));
    }
    gamma.require_stable()?;
    let t = eval_terms(spec, scores)?;
    let mut d = Vec::with_capacity(gamma.len());
    let mut g = Vec::with_capacity(gamma.len());
    for i in 0..gamma.len() {
        let mixed = t.fake[i] - t.gen[i];
        let k = 1.0 / (1.0 - gamma.gamma[i]);
        d.push(t.real[i] + k * mixed);
        g.push(gamma.gamma[i] * k * mixed);
    }
    Ok(InstanceLosses { d, g })
}

/// Splits per-instance mixed gradients `∇L_f` into `(∇L_D^f, ∇L_G)`.
pub fn decompose_gradients(mixed: &Tensor, gamma: &GammaBatch) -> Result<(Tensor, Tensor)> {
    if mixed.batch() != gamma.len() {
        return Err(Error::Usage(format!(
            "{} gradient slices for {} gamma values",
            mixed.batch(),
            gamma.len()
        )));
    }
    gamma.require_stable()?;
    let w = mixed.instance_len();
    let mut df = mixed.clone();
    let mut dg = mixed.clone();
    for (i, &gm) in gamma.gamma.iter().enumerate() {
        let denom = 1.0 - gm;
        let f = &mut df.data_mut()[i * w..(i + 1) * w];
        f.iter_mut().for_each(|v| *v /= denom);
        let fs = f.to_vec();
        dg.data_mut()[i * w..(i + 1) * w]
            .iter_mut()
            .zip(fs)
            .for_each(|(v, fv)| *v = gm * fv);
    }
    Ok((df, dg))
}

/// Scales each instance slice of `grad` by its `γ_i`.
pub fn scale_by_gamma(grad: &Tensor, gamma: &GammaBatch) -> Result<Tensor> {
    grad.scale_instances(&gamma.gamma)
}

/// Ratio statistics for one (layer boundary, instance) pair.
#[derive(Clone, Debug, PartialEq)]
pub struct LayerRatioStats {
    pub layer: usize,
    pub instance: usize,
    /// Mean of the per-coordinate ratios over unmasked coordinates (NaN when all are masked).
    pub mean_ratio: f64,
    /// Largest relative deviation of a coordinate ratio from `γ_i`.
    pub max_deviation: f64,
    pub masked: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct RatioInvarianceReport {
    pub stats: Vec<LayerRatioStats>,
    pub global_max_deviation: f64,
    pub masked_fraction: f64,
    /// `(instance, layer)` pairs where every coordinate was masked, or where
    /// `γ_i` itself is undefined (reported with the output boundary).
    pub inconclusive: Vec<(usize, usize)>,
    pub tol: f64,
}

impl RatioInvarianceReport {
    /// Builds the report from two traces of the same forward pass, one seeded
    /// by the generator loss and one by the discriminator loss. `gamma[i]` is
    /// `None` when the last-layer ratio of instance `i` is undefined.
    pub fn from_traces(
        trace_g: &LayerTrace,
        trace_d: &LayerTrace,
        gamma: &[Option<f64>],
        tol: f64,
    ) -> Result<RatioInvarianceReport> {
        if trace_g.records.len() != trace_d.records.len() {
            return Err(Error::Usage("traces cover different layers".into()));
        }
        let mut stats = Vec::new();
        let mut inconclusive = Vec::new();
        let mut global = 0.0_f64;
        let (mut masked_total, mut total) = (0usize, 0usize);
        for (rg, rd) in trace_g.records.iter().zip(&trace_d.records) {
            if rg.boundary != rd.boundary || rg.grad.shape() != rd.grad.shape() {
                return Err(Error::Usage("traces are not aligned".into()));
            }
            if rg.grad.batch() != gamma.len() {
                return Err(Error::Usage("one gamma per traced instance is required".into()));
            }
            for (i, g) in gamma.iter().enumerate() {
                let Some(g) = *g else {
                    continue;
                };
                let (num, den) = (rg.grad.instance(i), rd.grad.instance(i));
                let mut masked = 0;
                let mut sum = 0.0;
                let mut worst = 0.0_f64;
                for (&a, &b) in num.iter().zip(den) {
                    if b.abs() <= MASK_EPS {
                        masked += 1;
                        continue;
                    }
                    let r = a / b;
                    sum += r;
                    let dev = if g == 0.0 {
                        r.abs()
                    } else {
                        ((r - g) / g).abs()
                    };
                    worst = worst.max(dev);
                }
                let used = num.len() - masked;
                if used == 0 {
                    inconclusive.push((i, rg.boundary));
                }
                masked_total += masked;
                total += num.len();
                global = global.max(worst);
                stats.push(LayerRatioStats {
                    layer: rg.boundary,
                    instance: i,
                    mean_ratio: if used == 0 { f64::NAN } else { sum / used as f64 },
                    max_deviation: worst,
                    masked,
                });
            }
        }
        let top = trace_g.records.first().map(|r| r.boundary).unwrap_or(0);
        for (i, g) in gamma.iter().enumerate() {
            if g.is_none() {
                inconclusive.push((i, top));
            }
        }
        Ok(RatioInvarianceReport {
            stats,
            global_max_deviation: global,
            masked_fraction: if total == 0 {
                0.0
            } else {
                masked_total as f64 / total as f64
            },
            inconclusive,
            tol,
        })
    }

    /// True when every evaluated coordinate is within tolerance.
    pub fn within_tolerance(&self) -> bool {
        self.global_max_deviation <= self.tol
    }

    /// Number of instances with at least one conclusive layer.
    pub fn evaluated_instances(&self) -> usize {
        let mut seen: Vec<usize> = self
            .stats
            .iter()
            .filter(|s| !s.mean_ratio.is_nan())
            .map(|s| s.instance)
            .collect();
        seen.sort_unstable();
        seen.dedup();
        seen.len()
    }

    pub const CSV_HEADER: &'static str =
        "layer_index,instance_index,mean_ratio,max_deviation,masked_count";

    pub fn to_csv(&self) -> String {
        let mut out = String::from(Self::CSV_HEADER);
        out.push('\n');
        for s in &self.stats {
            let _ = writeln!(
                out,
                "{},{},{},{},{}",
                s.layer, s.instance, s.mean_ratio, s.max_deviation, s.masked
            );
        }
        out
    }
}

/// Runs two traced backward passes through `disc` on a fake batch, one seeded
/// by `dL_G/ds` and one by `dL_D/ds`, and compares the per-coordinate ratio at
/// every layer boundary with the last-layer `γ_i`.
pub fn verify_ratio_invariance(
    disc: &NetworkSpec,
    params: &ParamSet,
    fake_batch: &Tensor,
    spec: &AdversarialLossSpec,
    tol: f64,
) -> Result<RatioInvarianceReport> {
    let (out, cache) = forward_network(disc, params, fake_batch, true)?;
    let cache = cache.expect("cache requested");
    let scores = crate::losses::scores_of(&out)?;
    let d = term_derivatives(spec, &scores)?;
    let gamma: Vec<Option<f64>> = d
        .gen
        .iter()
        .zip(&d.fake)
        .map(|(&g, &f)| (f != 0.0).then(|| g / f))
        .collect();
    let seed_g = Tensor::column(d.gen.clone())?;
    let seed_d = Tensor::column(d.fake.clone())?;
    let trace_g = backward_network(disc, params, &cache, &seed_g, true)?
        .trace
        .expect("trace requested");
    let trace_d = backward_network(disc, params, &cache, &seed_d, true)?
        .trace
        .expect("trace requested");
    RatioInvarianceReport::from_traces(&trace_g, &trace_d, &gamma, tol)
}
