//! Central-difference verification of the reverse-mode engine.

use super::engine::{backward_network, forward_network, ForwardCache};
use super::params::ParamSet;
use super::spec::{Layer, NetworkSpec};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Denominator floor for the relative error, so that coordinates whose true
/// gradient is essentially zero are compared on an absolute scale.
pub const RELATIVE_FLOOR: f64 = 1e-4;

/// Scalar losses over the network output used to seed a check.
#[derive(Clone, Debug)]
pub enum ScalarHead {
    /// `0.5 * sum(y^2)`
    HalfSquaredNorm,
    /// `sum(w * y)` for fixed weights of the output's shape.
    Weighted(Tensor),
    /// `sum(tanh(y))`, a bounded non-polynomial head.
    SumTanh,
}

impl ScalarHead {
    pub fn value(&self, out: &Tensor) -> f64 {
        match self {
            ScalarHead::HalfSquaredNorm => 0.5 * out.data().iter().map(|v| v * v).sum::<f64>(),
            ScalarHead::Weighted(w) => out.data().iter().zip(w.data()).map(|(a, b)| a * b).sum(),
            ScalarHead::SumTanh => out.data().iter().map(|v| v.tanh()).sum(),
        }
    }

    pub fn grad(&self, out: &Tensor) -> Tensor {
        match self {
            ScalarHead::HalfSquaredNorm => out.clone(),
            ScalarHead::Weighted(w) => w.clone(),
            ScalarHead::SumTanh => out.map(|v| 1.0 - v.tanh().powi(2)),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum GradCheck {
    /// Every coordinate was compared.
    Conclusive {
        max_relative_error: f64,
        coordinates: usize,
        worst: String,
    },
    /// A kink of a piecewise-linear activation lies within reach of the
    /// perturbation, so central differences are not meaningful.
    Inconclusive { layer: usize, reason: String },
}

impl GradCheck {
    pub fn max_relative_error(&self) -> Option<f64> {
        match self {
            GradCheck::Conclusive {
                max_relative_error, ..
            } => Some(*max_relative_error),
            GradCheck::Inconclusive { .. } => None,
        }
    }

    pub fn is_inconclusive(&self) -> bool {
        matches!(self, GradCheck::Inconclusive { .. })
    }
}

/// Compares analytic gradients of `head(net(input))` against central
/// differences over every parameter and every input coordinate.
pub fn finite_difference_check(
    net: &NetworkSpec,
    params: &ParamSet,
    input: &Tensor,
    head: &ScalarHead,
    eps: f64,
) -> Result<GradCheck> {
    if !(eps > 0.0 && eps.is_finite()) {
        return Err(Error::Usage(format!("finite-difference step must be positive, got {eps}")));
    }
    let (out, cache) = forward_network(net, params, input, true)?;
    let cache = cache.expect("cache requested");
    let base_signs = kink_signs(net, &cache);
    if let Some((layer, v)) = near_kink(net, &cache, eps) {
        return Ok(GradCheck::Inconclusive {
            layer,
            reason: format!("pre-activation {v:e} within {eps:e} of the kink"),
        });
    }
    let back = backward_network(net, params, &cache, &head.grad(&out), false)?;
    let analytic_params = back.param_grads.expect("full backward").flatten();
    let analytic_input = back.input_grad.data().to_vec();

    let mut worst = (0.0_f64, String::new());
    let mut count = 0;
    let mut record = |a: f64, n: f64, label: &dyn Fn() -> String| {
        let rel = (a - n).abs() / a.abs().max(n.abs()).max(RELATIVE_FLOOR);
        count += 1;
        if count == 1 || rel > worst.0 {
            worst = (rel, label());
        }
    };

    let eval = |p: &ParamSet, x: &Tensor| -> Result<(f64, Vec<bool>)> {
        let (o, c) = forward_network(net, p, x, true)?;
        Ok((head.value(&o), kink_signs(net, &c.expect("cache requested"))))
    };

    let mut probe = params.clone();
    for (i, &a) in analytic_params.iter().enumerate() {
        let orig = *probe.value_mut(i).unwrap();
        *probe.value_mut(i).unwrap() = orig + eps;
        let (fp, sp) = eval(&probe, input)?;
        *probe.value_mut(i).unwrap() = orig - eps;
        let (fm, sm) = eval(&probe, input)?;
        *probe.value_mut(i).unwrap() = orig;
        if sp != base_signs || sm != base_signs {
            return Ok(GradCheck::Inconclusive {
                layer: first_kink_layer(net),
                reason: format!("perturbing parameter {i} crosses a kink"),
            });
        }
        record(a, (fp - fm) / (2.0 * eps), &|| format!("parameter {i}"));
    }

    let mut x = input.clone();
    for (i, &a) in analytic_input.iter().enumerate() {
        let orig = x.data()[i];
        x.data_mut()[i] = orig + eps;
        let (fp, sp) = eval(params, &x)?;
        x.data_mut()[i] = orig - eps;
        let (fm, sm) = eval(params, &x)?;
        x.data_mut()[i] = orig;
        if sp != base_signs || sm != base_signs {
            return Ok(GradCheck::Inconclusive {
                layer: first_kink_layer(net),
                reason: format!("perturbing input {i} crosses a kink"),
            });
        }
        record(a, (fp - fm) / (2.0 * eps), &|| format!("input {i}"));
    }

    Ok(GradCheck::Conclusive {
        max_relative_error: worst.0,
        coordinates: count,
        worst: worst.1,
    })
}

fn kink_layers(net: &NetworkSpec) -> impl Iterator<Item = usize> + '_ {
    net.layers
        .iter()
        .enumerate()
        .filter(|(_, l)| matches!(l, Layer::Activation(a) if a.has_kink()))
        .map(|(i, _)| i)
}

fn first_kink_layer(net: &NetworkSpec) -> usize {
    kink_layers(net).next().unwrap_or(0)
}

fn kink_signs(net: &NetworkSpec, cache: &ForwardCache) -> Vec<bool> {
    kink_layers(net)
        .flat_map(|l| cache.activations()[l].data().iter().map(|&v| v > 0.0))
        .collect()
}

fn near_kink(net: &NetworkSpec, cache: &ForwardCache, eps: f64) -> Option<(usize, f64)> {
    kink_layers(net).find_map(|l| {
        cache.activations()[l]
            .data()
            .iter()
            .find(|v| v.abs() <= eps)
            .map(|&v| (l, v))
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::spec::Activation;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn random_input(batch: usize, dim: usize, seed: u64) -> Tensor {
        use rand::Rng;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Tensor::new(
            vec![batch, dim],
            (0..batch * dim).map(|_| rng.gen_range(-1.0..1.0)).collect(),
        )
        .unwrap()
    }

    #[test]
    fn linear_net_quadratic_head_is_exact() {
        let net = NetworkSpec::mlp(&[3, 4, 2], Activation::Identity, None).unwrap();
        let p = ParamSet::init(&net, &mut ChaCha8Rng::seed_from_u64(2));
        let x = random_input(3, 3, 5);
        let check = finite_difference_check(&net, &p, &x, &ScalarHead::HalfSquaredNorm, 1e-3).unwrap();
        assert!(check.max_relative_error().unwrap() < 1e-9, "{check:?}");
    }

    #[test]
    fn tanh_net_seed_seven() {
        let net = NetworkSpec::mlp(&[3, 6, 5, 1], Activation::Tanh, Some(Activation::Sigmoid)).unwrap();
        let p = ParamSet::init(&net, &mut ChaCha8Rng::seed_from_u64(7));
        let x = random_input(4, 3, 7);
        let check = finite_difference_check(&net, &p, &x, &ScalarHead::SumTanh, 1e-5).unwrap();
        assert!(check.max_relative_error().unwrap() < 1e-6, "{check:?}");
    }

    #[test]
    fn relu_exactly_at_kink_is_inconclusive() {
        let net = NetworkSpec::new(
            vec![1],
            vec![Layer::affine(1, 1), Layer::relu(), Layer::affine(1, 1)],
        )
        .unwrap();
        let mut p = ParamSet::init(&net, &mut ChaCha8Rng::seed_from_u64(1));
        // zero bias and zero input put the pre-activation exactly on the kink
        p.iter_mut()
            .filter(|(k, _)| k.layer == 0)
            .for_each(|(_, t)| t.data_mut().iter_mut().for_each(|v| *v = 0.0));
        let x = Tensor::new(vec![1, 1], vec![0.0]).unwrap();
        let check = finite_difference_check(&net, &p, &x, &ScalarHead::HalfSquaredNorm, 1e-5).unwrap();
        assert!(check.is_inconclusive());
    }

    #[test]
    fn rejects_non_positive_step() {
        let net = NetworkSpec::mlp(&[1, 1], Activation::Identity, None).unwrap();
        let p = ParamSet::zeros_for(&net);
        let x = random_input(1, 1, 0);
        assert!(finite_difference_check(&net, &p, &x, &ScalarHead::HalfSquaredNorm, 0.0).is_err());
    }
}
