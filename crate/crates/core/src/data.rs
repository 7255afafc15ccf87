//! Seeded toy data: an equal-weight mixture of isotropic Gaussians whose
//! centers sit evenly on a circle.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RingGeometry {
    pub modes: usize,
    pub radius: f64,
    pub sigma: f64,
}

impl Default for RingGeometry {
    fn default() -> Self {
        RingGeometry {
            modes: 8,
            radius: 2.0,
            sigma: 0.02,
        }
    }
}

impl RingGeometry {
    pub fn validate(&self) -> Result<()> {
        if self.modes == 0 {
            return Err(Error::Config("ring needs at least one mode".into()));
        }
        if !(self.sigma > 0.0 && self.sigma.is_finite()) {
            return Err(Error::Config(format!("sigma must be positive, got {}", self.sigma)));
        }
        if !(self.radius >= 0.0 && self.radius.is_finite()) {
            return Err(Error::Config(format!("radius must be non-negative, got {}", self.radius)));
        }
        Ok(())
    }

    /// Mode centers; center `k` sits at angle `2πk/modes`.
    pub fn centers(&self) -> Vec<[f64; 2]> {
        (0..self.modes)
            .map(|k| {
                let a = std::f64::consts::TAU * k as f64 / self.modes as f64;
                [self.radius * a.cos(), self.radius * a.sin()]
            })
            .collect()
    }

    /// Default coverage radius: three standard deviations.
    pub fn threshold(&self) -> f64 {
        3.0 * self.sigma
    }
}

/// A stream of ring samples driven by its own generator.
#[derive(Clone, Debug)]
pub struct RingSampler {
    geometry: RingGeometry,
    centers: Vec<[f64; 2]>,
    rng: ChaCha8Rng,
}

impl RingSampler {
    pub fn new(geometry: RingGeometry, rng: ChaCha8Rng) -> Result<RingSampler> {
        geometry.validate()?;
        Ok(RingSampler {
            centers: geometry.centers(),
            geometry,
            rng,
        })
    }

    pub fn geometry(&self) -> &RingGeometry {
        &self.geometry
    }

    /// `n` points with the mode each was drawn from.
    pub fn sample_labelled(&mut self, n: usize) -> (Tensor, Vec<usize>) {
        let mut data = Vec::with_capacity(2 * n);
        let mut labels = Vec::with_capacity(n);
        for _ in 0..n {
            let k = self.rng.gen_range(0..self.geometry.modes);
            let c = self.centers[k];
            let dx: f64 = self.rng.sample(StandardNormal);
            let dy: f64 = self.rng.sample(StandardNormal);
            data.push(c[0] + self.geometry.sigma * dx);
            data.push(c[1] + self.geometry.sigma * dy);
            labels.push(k);
        }
        (Tensor::from_parts(vec![n, 2], data), labels)
    }

    pub fn sample(&mut self, n: usize) -> Tensor {
        self.sample_labelled(n).0
    }
}

/// `n` ring points for a given seed. `n = 0` yields an empty `[0, 2]` tensor.
pub fn sample_ring(n: usize, modes: usize, radius: f64, sigma: f64, seed: u64) -> Result<Tensor> {
    Ok(sample_ring_labelled(n, modes, radius, sigma, seed)?.0)
}

pub fn sample_ring_labelled(
    n: usize,
    modes: usize,
    radius: f64,
    sigma: f64,
    seed: u64,
) -> Result<(Tensor, Vec<usize>)> {
    let geometry = RingGeometry {
        modes,
        radius,
        sigma,
    };
    let mut s = RingSampler::new(geometry, ChaCha8Rng::seed_from_u64(seed))?;
    Ok(s.sample_labelled(n))
}
