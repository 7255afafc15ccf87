//! Experiment configuration in TOML.
//!
//! Unknown keys are rejected everywhere. Omitted networks are replaced by the
//! defaults below when a config is resolved, and the resolved form is what
//! gets written next to run artifacts.
//!
//! ```toml
//! task = "gan2d"            # or "distill"
//! mode = "one"              # or "two"
//! loss = "non-saturating"
//! seed = 0
//! budget = 96000            # discriminator pass-units; alternatively `rounds`
//! batch = 128
//! latent_dim = 8
//! eval_every = 0            # 0 evaluates only at the end
//!
//! [optimizer]
//! lr = 2e-4
//!
//! [data]
//! modes = 8
//! radius = 2.0
//! sigma = 0.02
//! ```

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::data::RingGeometry;
use crate::distill::DistillConfig;
use crate::error::{Error, Result};
use crate::losses::{make_loss, Interval};
use crate::nn::{Activation, Layer, NetworkSpec, DEFAULT_LEAKY_SLOPE};
use crate::optim::AdamConfig;
use crate::trainer::Mode;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Task {
    Gan2d,
    Distill,
}

/// Hidden width of the default toy networks.
pub const DEFAULT_WIDTH: usize = 64;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub task: Task,
    #[serde(default = "default_mode")]
    pub mode: Mode,
    #[serde(default = "default_loss")]
    pub loss: String,
    #[serde(default)]
    pub seed: u64,
    /// Number of training rounds. Exclusive with `budget`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub rounds: Option<u64>,
    /// Pass-unit budget: discriminator units for `gan2d`, total units for `distill`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub budget: Option<u64>,
    #[serde(default = "default_batch")]
    pub batch: usize,
    #[serde(default = "default_latent")]
    pub latent_dim: usize,
    /// Discriminator iterations per two-stage round.
    #[serde(default = "default_d_steps")]
    pub d_steps: usize,
    #[serde(default)]
    pub eval_every: u64,
    #[serde(default = "default_eval_points")]
    pub eval_points: usize,
    /// Record wall time per round. Off makes metrics files byte-identical across runs.
    #[serde(default = "yes")]
    pub timing: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub out: Option<PathBuf>,
    #[serde(default)]
    pub optimizer: AdamConfig,
    #[serde(default)]
    pub data: RingGeometry,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub generator: Option<NetworkSpec>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub discriminator: Option<NetworkSpec>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub distill: Option<DistillConfig>,
}

fn default_mode() -> Mode {
    Mode::One
}
fn default_loss() -> String {
    "non-saturating".into()
}
fn default_batch() -> usize {
    128
}
fn default_latent() -> usize {
    8
}
fn default_d_steps() -> usize {
    1
}
fn default_eval_points() -> usize {
    2000
}
fn yes() -> bool {
    true
}

/// `latent → width → width → 2` with ReLU.
pub fn default_generator(latent_dim: usize) -> Result<NetworkSpec> {
    NetworkSpec::mlp(
        &[latent_dim, DEFAULT_WIDTH, DEFAULT_WIDTH, 2],
        Activation::Relu,
        None,
    )
}

/// `2 → width → width → 1` with leaky ReLU and the loss family's tail.
pub fn default_discriminator(tail: Activation) -> Result<NetworkSpec> {
    NetworkSpec::mlp(
        &[2, DEFAULT_WIDTH, DEFAULT_WIDTH, 1],
        Activation::LeakyRelu {
            slope: DEFAULT_LEAKY_SLOPE,
        },
        Some(tail),
    )
}

impl ExperimentConfig {
    /// A gan2d config with every optional field at its default.
    pub fn gan2d() -> ExperimentConfig {
        ExperimentConfig {
            task: Task::Gan2d,
            mode: default_mode(),
            loss: default_loss(),
            seed: 0,
            rounds: None,
            budget: None,
            batch: default_batch(),
            latent_dim: default_latent(),
            d_steps: default_d_steps(),
            eval_every: 0,
            eval_points: default_eval_points(),
            timing: true,
            out: None,
            optimizer: AdamConfig::default(),
            data: RingGeometry::default(),
            generator: None,
            discriminator: None,
            distill: None,
        }
    }

    pub fn from_toml(text: &str) -> Result<ExperimentConfig> {
        toml::from_str(text).map_err(|e| Error::Config(e.to_string().trim_end().to_string()))
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    pub fn load(path: impl AsRef<Path>) -> Result<ExperimentConfig> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
        ExperimentConfig::from_toml(&text)
            .map_err(|e| Error::Config(format!("{}: {}", path.display(), strip(e))))
    }

    /// Fills in default networks and checks every cross-field constraint.
    pub fn resolve(mut self) -> Result<ExperimentConfig> {
        if self.rounds.is_some() && self.budget.is_some() {
            return Err(Error::Config("set either `rounds` or `budget`, not both".into()));
        }
        if self.seed > i64::MAX as u64 {
            return Err(Error::Config(format!("seed {} does not fit a TOML integer", self.seed)));
        }
        match self.task {
            Task::Gan2d => {
                let loss = make_loss(&self.loss).map_err(|e| Error::Config(e.to_string()))?;
                self.optimizer.validate()?;
                self.data.validate()?;
                if self.batch == 0 || self.latent_dim == 0 || self.d_steps == 0 {
                    return Err(Error::Config(
                        "`batch`, `latent_dim` and `d_steps` must be positive".into(),
                    ));
                }
                if self.eval_points < 2 {
                    return Err(Error::Config("`eval_points` must be at least 2".into()));
                }
                if self.rounds.is_none() && self.budget.is_none() {
                    return Err(Error::Config("one of `rounds` or `budget` is required".into()));
                }
                if self.distill.is_some() {
                    return Err(Error::Config("`[distill]` is only valid with task = \"distill\"".into()));
                }
                if self.generator.is_none() {
                    self.generator = Some(default_generator(self.latent_dim)?);
                }
                if self.discriminator.is_none() {
                    self.discriminator = Some(default_discriminator(loss.tail())?);
                }
                let g = self.generator.as_ref().unwrap();
                let d = self.discriminator.as_ref().unwrap();
                g.validate().map_err(|e| Error::Config(format!("generator: {e}")))?;
                d.validate().map_err(|e| Error::Config(format!("discriminator: {e}")))?;
                if g.input_shape != [self.latent_dim] {
                    return Err(Error::Config(format!(
                        "generator input {:?} does not match latent_dim = {}",
                        g.input_shape, self.latent_dim
                    )));
                }
                if g.output_shape()? != [2] || d.input_shape != [2] {
                    return Err(Error::Config("gan2d networks must map to and from 2D points".into()));
                }
                if d.output_shape()? != [1] {
                    return Err(Error::Config("discriminator must emit one score".into()));
                }
                if loss.domain() == Interval::UNIT
                    && d.layers.last() != Some(&Layer::Activation(Activation::Sigmoid))
                {
                    return Err(Error::Config(format!(
                        "loss `{}` needs scores in (0, 1); end the discriminator with a sigmoid layer",
                        self.loss
                    )));
                }
            }
            Task::Distill => {
                let mut d = self.distill.take().unwrap_or_default();
                d.seed = self.seed;
                if let Some(b) = self.budget {
                    d.budget = b;
                }
                if self.rounds.is_some() {
                    return Err(Error::Config("distill runs are sized by `budget`".into()));
                }
                if self.generator.is_some() || self.discriminator.is_some() {
                    return Err(Error::Config(
                        "distill networks are configured inside `[distill]`".into(),
                    ));
                }
                d.validate()?;
                self.budget = Some(d.budget);
                self.distill = Some(d);
            }
        }
        Ok(self)
    }

    /// Discriminator pass-units per gan2d round in the configured mode.
    pub fn d_units_per_round(&self) -> u64 {
        match self.mode {
            Mode::One => 4,
            Mode::Two => 4 * self.d_steps as u64 + 2,
        }
    }

    /// Number of gan2d rounds, from `rounds` or from the budget.
    pub fn total_rounds(&self) -> u64 {
        match (self.rounds, self.budget) {
            (Some(r), _) => r,
            (None, Some(b)) => b / self.d_units_per_round(),
            (None, None) => 0,
        }
    }
}

fn strip(e: Error) -> String {
    match e {
        Error::Config(m) => m,
        other => other.to_string(),
    }
}
