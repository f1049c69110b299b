//! Dense kernels, reverse-mode differentiation, attention, and AdamW.

pub mod checkpoint;
pub mod gradcheck;
pub mod graph;
pub mod layers;
pub mod optim;
pub mod params;
pub mod tensor;

pub use graph::{AttnLayout, Graph, Var};
pub use layers::{multihead_attention, Init, Linear, MultiHeadAttention};
pub use optim::{AdamW, Decay, OptimConfig};
pub use params::ParamStore;
pub use tensor::{matmul, softmax_rows, Tensor};
