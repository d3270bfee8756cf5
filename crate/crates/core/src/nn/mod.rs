//! Small CPU neural-network engine: tensors, layers with hand-written
//! backward passes, sequential networks, AdamW, and a binary weight archive.

pub mod archive;
pub mod layers;
pub mod loss;
pub mod module;
pub mod network;
pub mod optim;
pub mod spec;
pub mod tensor;

pub use archive::{load_weights, read_archive, save_weights, WeightArchive};
pub use loss::{bce_with_logits, softmax_cross_entropy};
pub use module::{Mode, Module, Padding, ParamKind};
pub use network::Network;
pub use optim::AdamW;
pub use spec::LayerSpec;
pub use tensor::{Scalar, Tensor};
