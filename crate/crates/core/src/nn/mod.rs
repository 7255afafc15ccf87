//! Sequential networks of affine, convolutional, activation and pooling
//! layers with a reverse-mode differentiation engine.

mod checkpoint;
mod engine;
mod gradcheck;
mod params;
mod spec;

pub use checkpoint::{Checkpoint, NamedNetwork, FORMAT_VERSION};
pub use engine::{
    backward_input, backward_network, forward_network, Backward, ForwardCache, LayerTrace,
    TraceRecord,
};
pub use gradcheck::{finite_difference_check, GradCheck, ScalarHead, RELATIVE_FLOOR};
pub use params::{param_layout, relative_l2, ParamKey, ParamSet, Role};
pub use spec::{Activation, Layer, NetworkSpec, Padding, DEFAULT_LEAKY_SLOPE};
