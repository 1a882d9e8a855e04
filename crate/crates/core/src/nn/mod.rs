//! Small dense networks with hand-written backpropagation, an Adam
//! optimizer, and the squashed-Gaussian policy built on top of them.

mod adam;
mod checkpoint;
mod mlp;
mod policy;

pub use adam::{AdamConfig, AdamState};
pub use checkpoint::{read_adam, read_mlp, write_adam, write_mlp};
pub use mlp::{Activation, ForwardCache, Layer, Mlp, MlpGrads};
pub use policy::{PolicyHead, PolicySample, LOG_STD_MAX, LOG_STD_MIN};
