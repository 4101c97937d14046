//! Network representation: mean-field layers, linear maps, and their
//! composition with exact forward and reverse passes.

mod activation;
pub(crate) mod layer;
mod linear;
mod network;

pub use activation::Activation;
pub use layer::{LayerGrad, MeanFieldLayer, NeuronParams, NeuronRef};
pub use linear::LinearMap;
pub use network::{Architecture, Block, BlockGrad, BlockShape, ForwardCache, GradientSet, Network};
