use rand::Rng;
use serde::{Deserialize, Serialize};
use std::fmt;

use super::spec::{Layer, NetworkSpec};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Role {
    Weight,
    Bias,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct ParamKey {
    pub layer: usize,
    pub role: Role,
}

impl fmt::Display for ParamKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let role = match self.role {
            Role::Weight => "weight",
            Role::Bias => "bias",
        };
        write!(f, "layer{}.{role}", self.layer)
    }
}

/// Tensors keyed by `(layer, role)` in layer order.
///
/// The same container holds parameter values, their gradients and optimizer
/// moments; `zeros_like` produces a slot set aligned with an existing one.
#[derive(Clone, Debug, PartialEq)]
pub struct ParamSet {
    entries: Vec<(ParamKey, Tensor)>,
}

/// Parameter shapes required by `net`, in canonical order.
pub fn param_layout(net: &NetworkSpec) -> Vec<(ParamKey, Vec<usize>)> {
    let mut out = Vec::new();
    for (layer, l) in net.layers.iter().enumerate() {
        match *l {
            Layer::Affine {
                in_dim,
                out_dim,
                bias,
            } => {
                out.push((
                    ParamKey {
                        layer,
                        role: Role::Weight,
                    },
                    vec![out_dim, in_dim],
                ));
                if bias {
                    out.push((
                        ParamKey {
                            layer,
                            role: Role::Bias,
                        },
                        vec![out_dim],
                    ));
                }
            }
            Layer::Conv2d {
                in_channels,
                out_channels,
                kernel,
                ..
            } => {
                out.push((
                    ParamKey {
                        layer,
                        role: Role::Weight,
                    },
                    vec![out_channels, in_channels, kernel, kernel],
                ));
                out.push((
                    ParamKey {
                        layer,
                        role: Role::Bias,
                    },
                    vec![out_channels],
                ));
            }
            _ => {}
        }
    }
    out
}

fn fan_in(shape: &[usize]) -> usize {
    shape[1..].iter().product()
}

impl ParamSet {
    /// Uniform initialization in `±1/sqrt(fan_in)` for weights and biases.
    pub fn init(net: &NetworkSpec, rng: &mut impl Rng) -> ParamSet {
        let layout = param_layout(net);
        let mut entries = Vec::with_capacity(layout.len());
        let mut weight_fan = 1;
        for (key, shape) in layout {
            if key.role == Role::Weight {
                weight_fan = fan_in(&shape).max(1);
            }
            let bound = 1.0 / (weight_fan as f64).sqrt();
            let n: usize = shape.iter().product();
            let data = (0..n).map(|_| rng.gen_range(-bound..bound)).collect();
            entries.push((key, Tensor::from_parts(shape, data)));
        }
        ParamSet { entries }
    }

    pub fn zeros_for(net: &NetworkSpec) -> ParamSet {
        ParamSet {
            entries: param_layout(net)
                .into_iter()
                .map(|(k, s)| (k, Tensor::zeros(&s)))
                .collect(),
        }
    }

    /// Builds a set from explicit tensors, checking them against `net`.
    pub fn from_entries(net: &NetworkSpec, entries: Vec<(ParamKey, Tensor)>) -> Result<ParamSet> {
        let set = ParamSet { entries };
        set.check_matches(net)?;
        Ok(set)
    }

    pub fn zeros_like(&self) -> ParamSet {
        ParamSet {
            entries: self
                .entries
                .iter()
                .map(|(k, t)| (*k, Tensor::zeros(t.shape())))
                .collect(),
        }
    }

    pub fn check_matches(&self, net: &NetworkSpec) -> Result<()> {
        let layout = param_layout(net);
        if layout.len() != self.entries.len() {
            return Err(Error::Usage(format!(
                "network needs {} parameter tensors, set has {}",
                layout.len(),
                self.entries.len()
            )));
        }
        for ((key, shape), (k, t)) in layout.iter().zip(&self.entries) {
            if key != k || shape.as_slice() != t.shape() {
                return Err(Error::Shape {
                    layer: key.layer,
                    detail: format!(
                        "parameter {key} expects shape {shape:?}, found {k} with {:?}",
                        t.shape()
                    ),
                });
            }
        }
        Ok(())
    }

    pub fn get(&self, key: ParamKey) -> Option<&Tensor> {
        self.entries.iter().find(|(k, _)| *k == key).map(|(_, t)| t)
    }

    pub fn get_mut(&mut self, key: ParamKey) -> Option<&mut Tensor> {
        self.entries
            .iter_mut()
            .find(|(k, _)| *k == key)
            .map(|(_, t)| t)
    }

    pub fn weight(&self, layer: usize) -> Option<&Tensor> {
        self.get(ParamKey {
            layer,
            role: Role::Weight,
        })
    }

    pub fn bias(&self, layer: usize) -> Option<&Tensor> {
        self.get(ParamKey {
            layer,
            role: Role::Bias,
        })
    }

    pub fn iter(&self) -> impl Iterator<Item = (&ParamKey, &Tensor)> {
        self.entries.iter().map(|(k, t)| (k, t))
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = (&ParamKey, &mut Tensor)> {
        self.entries.iter_mut().map(|(k, t)| (&*k, t))
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Total count of scalar parameters.
    pub fn num_values(&self) -> usize {
        self.entries.iter().map(|(_, t)| t.len()).sum()
    }

    /// All values concatenated in canonical order.
    pub fn flatten(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.num_values());
        for (_, t) in &self.entries {
            out.extend_from_slice(t.data());
        }
        out
    }

    /// Mutable access to the `i`-th scalar in flattened order.
    pub fn value_mut(&mut self, mut i: usize) -> Option<&mut f64> {
        for (_, t) in self.entries.iter_mut() {
            if i < t.len() {
                return t.data_mut().get_mut(i);
            }
            i -= t.len();
        }
        None
    }

    pub fn add_assign(&mut self, other: &ParamSet) -> Result<()> {
        self.check_aligned(other)?;
        for ((_, a), (_, b)) in self.entries.iter_mut().zip(&other.entries) {
            for (x, y) in a.data_mut().iter_mut().zip(b.data()) {
                *x += y;
            }
        }
        Ok(())
    }

    pub fn check_aligned(&self, other: &ParamSet) -> Result<()> {
        let aligned = self.entries.len() == other.entries.len()
            && self
                .entries
                .iter()
                .zip(&other.entries)
                .all(|((ka, ta), (kb, tb))| ka == kb && ta.shape() == tb.shape());
        if aligned {
            Ok(())
        } else {
            Err(Error::Usage("parameter sets are not aligned".into()))
        }
    }

    pub fn is_finite(&self) -> bool {
        self.entries.iter().all(|(_, t)| t.is_finite())
    }

    pub fn all_zero(&self) -> bool {
        self.entries
            .iter()
            .all(|(_, t)| t.data().iter().all(|&v| v == 0.0))
    }

    /// 64-bit digest of the exact bit patterns of every value.
    pub fn fingerprint(&self) -> u64 {
        let mut h: u64 = 0xcbf2_9ce4_8422_2325;
        for (k, t) in &self.entries {
            h = mix(h, k.layer as u64);
            h = mix(h, k.role as u64);
            for &d in t.shape() {
                h = mix(h, d as u64);
            }
            for v in t.data() {
                h = mix(h, v.to_bits());
            }
        }
        h
    }
}

#[inline]
fn mix(h: u64, x: u64) -> u64 {
    (h ^ x).wrapping_mul(0x0000_0100_0000_01b3).rotate_left(5)
}

/// Relative L2 distance `|a - b| / max(|a|, |b|)` between two aligned sets.
pub fn relative_l2(a: &ParamSet, b: &ParamSet) -> Result<f64> {
    a.check_aligned(b)?;
    let (mut diff, mut na, mut nb) = (0.0, 0.0, 0.0);
    for ((_, ta), (_, tb)) in a.entries.iter().zip(&b.entries) {
        for (&x, &y) in ta.data().iter().zip(tb.data()) {
            diff += (x - y) * (x - y);
            na += x * x;
            nb += y * y;
        }
    }
    let scale = na.sqrt().max(nb.sqrt());
    Ok(if scale == 0.0 { 0.0 } else { diff.sqrt() / scale })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::spec::Activation;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn init_matches_layout_and_is_seeded() {
        let net = NetworkSpec::mlp(&[2, 5, 1], Activation::Tanh, None).unwrap();
        let a = ParamSet::init(&net, &mut ChaCha8Rng::seed_from_u64(3));
        let b = ParamSet::init(&net, &mut ChaCha8Rng::seed_from_u64(3));
        a.check_matches(&net).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.num_values(), 2 * 5 + 5 + 5 + 1);
        assert_eq!(a.fingerprint(), b.fingerprint());
        let mut c = a.clone();
        let v = c.value_mut(7).unwrap();
        *v = f64::from_bits(v.to_bits() ^ 1);
        assert_ne!(a.fingerprint(), c.fingerprint());
    }

    #[test]
    fn mismatched_sets_are_rejected() {
        let net = NetworkSpec::mlp(&[2, 5, 1], Activation::Tanh, None).unwrap();
        let other = NetworkSpec::mlp(&[2, 4, 1], Activation::Tanh, None).unwrap();
        let p = ParamSet::zeros_for(&other);
        assert!(p.check_matches(&net).is_err());
    }
}
