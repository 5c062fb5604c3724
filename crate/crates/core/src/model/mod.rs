//! Encoder, heads, losses and the optimiser.

pub mod attention;
pub mod heads;
pub mod layers;
pub mod network;
pub mod optim;
pub mod params;
pub mod tcn;

pub use heads::{cross_entropy, pretext_loss, supervised_loss};
pub use layers::{BnUpdate, Ctx};
pub use network::{EncoderConfig, ForwardTrace, Fusion, Network, NetworkConfig, PositionalEncoding, StepOutput, Targets, Task};
pub use optim::Sgd;
pub use params::{Grads, ParamId, ParamKind, ParamStore};
