mod network;
mod spec;

pub use network::{ConvBlock, ForwardCache, LayerState, Model, RecurrentStack};
pub use spec::{ModelKind, ModelSpec, POOL_SIZE};
