//! Minimal neural-network toolkit: tape autodiff, layers, optimizer.

pub mod attention;
pub mod conv;
pub mod gradcheck;
pub mod graph;
pub mod layers;
pub mod ops;
pub mod optim;
pub mod params;

pub use attention::{AttentionConfig, AttentionMaps, AttentionStack};
pub use graph::{Gradients, Graph, Var};
pub use layers::{BatchNorm, Conv3x3, Gru, Init, LayerNorm, Linear};
pub use optim::AdamW;
pub use params::{ParamId, ParamKind, ParamStore};
