//! A small feedforward network engine: dense layers with exact backward
//! passes, LeCun-uniform initialization, Adam with global-norm clipping and
//! an early-stopping training loop. Everything is `f64`.

pub mod checkpoint;
pub mod dense;
pub mod optim;
pub mod train;

pub use dense::{init_lecun_uniform, lecun_uniform, Activation, DenseNet, ForwardCache, Layer, LayerSpec, NetGrads};
pub use optim::{clip_global_norm, AdamConfig, AdamState};
pub use train::{train_loop, EpochRecord, TrainConfig, TrainOutcome, Trainable};
