use serde::{Deserialize, Serialize};
use std::fmt;

use crate::error::{Error, Result};

/// Slope used for leaky ReLU when none is given.
pub const DEFAULT_LEAKY_SLOPE: f64 = 0.2;

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Activation {
    Relu,
    LeakyRelu { slope: f64 },
    Tanh,
    Sigmoid,
    Identity,
}

impl Activation {
    /// True for piecewise-linear activations whose derivative jumps at zero.
    pub fn has_kink(&self) -> bool {
        matches!(self, Activation::Relu | Activation::LeakyRelu { .. })
    }

    #[inline]
    pub(crate) fn apply(&self, x: f64) -> f64 {
        match *self {
            Activation::Relu => {
                if x > 0.0 {
                    x
                } else {
                    0.0
                }
            }
            Activation::LeakyRelu { slope } => {
                if x > 0.0 {
                    x
                } else {
                    slope * x
                }
            }
            Activation::Tanh => x.tanh(),
            Activation::Sigmoid => sigmoid(x),
            Activation::Identity => x,
        }
    }

    /// Derivative expressed through the input `x` and the output `y`.
    #[inline]
    pub(crate) fn derivative(&self, x: f64, y: f64) -> f64 {
        match *self {
            Activation::Relu => {
                if x > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::LeakyRelu { slope } => {
                if x > 0.0 {
                    1.0
                } else {
                    slope
                }
            }
            Activation::Tanh => 1.0 - y * y,
            Activation::Sigmoid => y * (1.0 - y),
            Activation::Identity => 1.0,
        }
    }
}

#[inline]
pub(crate) fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Padding {
    #[default]
    Valid,
    SameZero,
}

/// One module of a sequential network.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(into = "LayerRepr", try_from = "LayerRepr")]
pub enum Layer {
    Affine {
        in_dim: usize,
        out_dim: usize,
        bias: bool,
    },
    Conv2d {
        in_channels: usize,
        out_channels: usize,
        kernel: usize,
        stride: usize,
        padding: Padding,
    },
    Activation(Activation),
    AvgPool {
        window: usize,
    },
}

impl Layer {
    pub fn affine(in_dim: usize, out_dim: usize) -> Layer {
        Layer::Affine {
            in_dim,
            out_dim,
            bias: true,
        }
    }

    pub fn conv2d(in_channels: usize, out_channels: usize, kernel: usize, stride: usize) -> Layer {
        Layer::Conv2d {
            in_channels,
            out_channels,
            kernel,
            stride,
            padding: Padding::Valid,
        }
    }

    pub fn leaky_relu() -> Layer {
        Layer::Activation(Activation::LeakyRelu {
            slope: DEFAULT_LEAKY_SLOPE,
        })
    }

    pub fn relu() -> Layer {
        Layer::Activation(Activation::Relu)
    }

    pub fn tanh() -> Layer {
        Layer::Activation(Activation::Tanh)
    }

    pub fn sigmoid() -> Layer {
        Layer::Activation(Activation::Sigmoid)
    }

    pub fn identity() -> Layer {
        Layer::Activation(Activation::Identity)
    }

    pub fn is_trainable(&self) -> bool {
        matches!(self, Layer::Affine { .. } | Layer::Conv2d { .. })
    }

    /// Per-instance output shape for a per-instance input shape.
    pub fn output_shape(&self, index: usize, input: &[usize]) -> Result<Vec<usize>> {
        let err = |detail: String| Error::Shape {
            layer: index,
            detail,
        };
        match *self {
            Layer::Affine { in_dim, out_dim, .. } => {
                let n: usize = input.iter().product();
                if n != in_dim {
                    return Err(err(format!(
                        "affine layer expects {in_dim} inputs, got shape {input:?}"
                    )));
                }
                if out_dim == 0 {
                    return Err(err("affine layer with zero outputs".into()));
                }
                Ok(vec![out_dim])
            }
            Layer::Conv2d {
                in_channels,
                out_channels,
                kernel,
                stride,
                padding,
            } => {
                if kernel == 0 || stride == 0 || out_channels == 0 {
                    return Err(err("conv2d needs positive kernel, stride and channels".into()));
                }
                let [c, h, w] = chw(input).ok_or_else(|| {
                    err(format!("conv2d expects [channels, height, width], got {input:?}"))
                })?;
                if c != in_channels {
                    return Err(err(format!(
                        "conv2d expects {in_channels} channels, got {c}"
                    )));
                }
                let geom = ConvGeometry::new(h, w, kernel, stride, padding)
                    .ok_or_else(|| err(format!("kernel {kernel} larger than input {h}x{w}")))?;
                Ok(vec![out_channels, geom.out_h, geom.out_w])
            }
            Layer::Activation(_) => Ok(input.to_vec()),
            Layer::AvgPool { window } => {
                let [c, h, w] = chw(input).ok_or_else(|| {
                    err(format!("avg-pool expects [channels, height, width], got {input:?}"))
                })?;
                if window == 0 || window > h || window > w {
                    return Err(err(format!("pool window {window} does not fit {h}x{w}")));
                }
                Ok(vec![c, h / window, w / window])
            }
        }
    }
}

pub(crate) fn chw(shape: &[usize]) -> Option<[usize; 3]> {
    match *shape {
        [c, h, w] => Some([c, h, w]),
        _ => None,
    }
}

/// Output extents and top/left zero padding of a 2D correlation.
#[derive(Clone, Copy, Debug)]
pub(crate) struct ConvGeometry {
    pub out_h: usize,
    pub out_w: usize,
    pub pad_top: usize,
    pub pad_left: usize,
}

impl ConvGeometry {
    pub fn new(h: usize, w: usize, kernel: usize, stride: usize, padding: Padding) -> Option<Self> {
        match padding {
            Padding::Valid => {
                if kernel > h || kernel > w {
                    return None;
                }
                Some(ConvGeometry {
                    out_h: (h - kernel) / stride + 1,
                    out_w: (w - kernel) / stride + 1,
                    pad_top: 0,
                    pad_left: 0,
                })
            }
            Padding::SameZero => {
                let out_h = h.div_ceil(stride);
                let out_w = w.div_ceil(stride);
                let pad_h = ((out_h - 1) * stride + kernel).saturating_sub(h);
                let pad_w = ((out_w - 1) * stride + kernel).saturating_sub(w);
                Some(ConvGeometry {
                    out_h,
                    out_w,
                    pad_top: pad_h / 2,
                    pad_left: pad_w / 2,
                })
            }
        }
    }
}

/// A sequential network: an ordered list of layers and the per-instance input shape.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NetworkSpec {
    pub input_shape: Vec<usize>,
    pub layers: Vec<Layer>,
}

impl NetworkSpec {
    pub fn new(input_shape: Vec<usize>, layers: Vec<Layer>) -> Result<Self> {
        let spec = NetworkSpec {
            input_shape,
            layers,
        };
        spec.validate()?;
        Ok(spec)
    }

    /// Multi-layer perceptron: affine layers of the given widths with `hidden`
    /// between them and `tail` after the last one.
    pub fn mlp(widths: &[usize], hidden: Activation, tail: Option<Activation>) -> Result<Self> {
        if widths.len() < 2 {
            return Err(Error::Usage("an mlp needs at least input and output width".into()));
        }
        let mut layers = Vec::new();
        for (i, pair) in widths.windows(2).enumerate() {
            layers.push(Layer::affine(pair[0], pair[1]));
            if i + 2 < widths.len() {
                layers.push(Layer::Activation(hidden));
            }
        }
        if let Some(t) = tail {
            layers.push(Layer::Activation(t));
        }
        NetworkSpec::new(vec![widths[0]], layers)
    }

    pub fn validate(&self) -> Result<()> {
        self.layer_shapes().map(|_| ())
    }

    /// Per-instance shapes at every layer boundary: `shapes[l]` is the input of layer `l`
    /// and the last entry is the network output.
    pub fn layer_shapes(&self) -> Result<Vec<Vec<usize>>> {
        if self.input_shape.is_empty() || self.input_shape.iter().any(|&d| d == 0) {
            return Err(Error::Shape {
                layer: 0,
                detail: format!("invalid input shape {:?}", self.input_shape),
            });
        }
        let mut shapes = vec![self.input_shape.clone()];
        for (i, layer) in self.layers.iter().enumerate() {
            if let Layer::Activation(Activation::LeakyRelu { slope }) = layer {
                if !slope.is_finite() {
                    return Err(Error::Shape {
                        layer: i,
                        detail: "leaky-relu slope must be finite".into(),
                    });
                }
            }
            let next = layer.output_shape(i, shapes.last().unwrap())?;
            shapes.push(next);
        }
        Ok(shapes)
    }

    pub fn output_shape(&self) -> Result<Vec<usize>> {
        Ok(self.layer_shapes()?.pop().unwrap())
    }

    pub fn depth(&self) -> usize {
        self.layers.len()
    }
}

impl fmt::Display for NetworkSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{:?}", self.input_shape)?;
        for layer in &self.layers {
            match layer {
                Layer::Affine { out_dim, .. } => write!(f, " > affine({out_dim})")?,
                Layer::Conv2d {
                    out_channels,
                    kernel,
                    stride,
                    ..
                } => write!(f, " > conv({out_channels},k{kernel},s{stride})")?,
                Layer::Activation(a) => match a {
                    Activation::Relu => write!(f, " > relu")?,
                    Activation::LeakyRelu { slope } => write!(f, " > leaky({slope})")?,
                    Activation::Tanh => write!(f, " > tanh")?,
                    Activation::Sigmoid => write!(f, " > sigmoid")?,
                    Activation::Identity => write!(f, " > id")?,
                },
                Layer::AvgPool { window } => write!(f, " > avgpool({window})")?,
            }
        }
        Ok(())
    }
}

// Flat, tagged form used for config files and checkpoint manifests.
#[derive(Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
enum LayerRepr {
    Affine {
        #[serde(rename = "in")]
        in_dim: usize,
        #[serde(rename = "out")]
        out_dim: usize,
        #[serde(default = "yes")]
        bias: bool,
    },
    Conv2d {
        in_channels: usize,
        out_channels: usize,
        kernel: usize,
        #[serde(default = "one")]
        stride: usize,
        #[serde(default)]
        padding: Padding,
    },
    Relu,
    LeakyRelu {
        #[serde(default = "default_slope")]
        slope: f64,
    },
    Tanh,
    Sigmoid,
    Identity,
    AvgPool {
        window: usize,
    },
}

fn yes() -> bool {
    true
}

fn one() -> usize {
    1
}

fn default_slope() -> f64 {
    DEFAULT_LEAKY_SLOPE
}

impl From<Layer> for LayerRepr {
    fn from(l: Layer) -> Self {
        match l {
            Layer::Affine {
                in_dim,
                out_dim,
                bias,
            } => LayerRepr::Affine {
                in_dim,
                out_dim,
                bias,
            },
            Layer::Conv2d {
                in_channels,
                out_channels,
                kernel,
                stride,
                padding,
            } => LayerRepr::Conv2d {
                in_channels,
                out_channels,
                kernel,
                stride,
                padding,
            },
            Layer::Activation(a) => match a {
                Activation::Relu => LayerRepr::Relu,
                Activation::LeakyRelu { slope } => LayerRepr::LeakyRelu { slope },
                Activation::Tanh => LayerRepr::Tanh,
                Activation::Sigmoid => LayerRepr::Sigmoid,
                Activation::Identity => LayerRepr::Identity,
            },
            Layer::AvgPool { window } => LayerRepr::AvgPool { window },
        }
    }
}

impl TryFrom<LayerRepr> for Layer {
    type Error = String;

    fn try_from(r: LayerRepr) -> std::result::Result<Self, String> {
        Ok(match r {
            LayerRepr::Affine {
                in_dim,
                out_dim,
                bias,
            } => Layer::Affine {
                in_dim,
                out_dim,
                bias,
            },
            LayerRepr::Conv2d {
                in_channels,
                out_channels,
                kernel,
                stride,
                padding,
            } => Layer::Conv2d {
                in_channels,
                out_channels,
                kernel,
                stride,
                padding,
            },
            LayerRepr::Relu => Layer::Activation(Activation::Relu),
            LayerRepr::LeakyRelu { slope } => {
                if !slope.is_finite() {
                    return Err("leaky-relu slope must be finite".into());
                }
                Layer::Activation(Activation::LeakyRelu { slope })
            }
            LayerRepr::Tanh => Layer::Activation(Activation::Tanh),
            LayerRepr::Sigmoid => Layer::Activation(Activation::Sigmoid),
            LayerRepr::Identity => Layer::Activation(Activation::Identity),
            LayerRepr::AvgPool { window } => Layer::AvgPool { window },
        })
    }
}
