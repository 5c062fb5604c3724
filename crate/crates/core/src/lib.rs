//! Self-supervised multimodal representation learning for wrist physiological signals.
pub mod config;
pub mod data;
pub mod dsp;
pub mod error;
pub mod model;
pub mod rng;
pub mod signal;
pub mod train;
pub mod transforms;
pub use config::RunConfig;
pub use data::{Checkpoint, DatasetManifest, ModelStage, SynthConfig};
pub use dsp::PreprocessConfig;
pub use error::{Error, Result};
pub use model::{EncoderConfig, Fusion, Network, NetworkConfig, PositionalEncoding};
pub use signal::{Modality, Recording, Stage, Stream, Window, IGNORED_LABEL};
pub use train::{AblationKind, F1Average, MetricsReport, SampleSize, TrainConfig, TrainMode};
pub use transforms::{PretextDataset, PretextSample, PretextSpec, TransformConfig, TransformKind};
