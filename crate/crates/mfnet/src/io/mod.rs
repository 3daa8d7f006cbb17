//! Checkpoint serialization and text configuration parsing.

mod checkpoint;
mod config;

pub use checkpoint::{
    graph_fingerprint, load_checkpoint, save_checkpoint, Checkpoint, TensorRecord,
    FORMAT_VERSION, MAGIC,
};
pub use config::{parse_arch_config, parse_arch_config_with_dims, parse_train_config, ToyRunConfig};
