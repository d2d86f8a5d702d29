//! The full denoiser: multiscale preprocessing, HPF and LPF graph blocks,
//! output projection and global residual; training and checkpoints.

mod checkpoint;
mod config;
mod model;
mod params;
mod trace;
mod train;

pub use checkpoint::{Checkpoint, FORMAT_VERSION, MAGIC};
pub use config::ModelConfig;
pub use model::{
    block_names, build_network, graph_layers, BnMode, ForwardOptions, ForwardOutput, GraphRegime, Model, BRANCH_KERNELS,
};
pub use params::ParamStore;
pub use trace::{DepNode, DepOp, DepProgram, ForwardTrace, LayerRecord};
pub use train::{batch_seed, train, train_step, TrainState};
