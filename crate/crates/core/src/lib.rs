//! Federated learning with pruned, quantized and Huffman-coded client updates.

pub mod bits;
pub mod compress;
pub mod cost;
pub mod data;
pub mod delta;
pub mod error;
pub mod exact;
pub mod huffman;
mod io;
pub mod model;
pub mod nn;
pub mod ops;
pub mod rng;
pub mod sim;
pub mod wire;

pub use error::{Error, Result};
pub use io::varint_len;
pub use model::{LayerTensor, ModelWeights, TensorShape};
