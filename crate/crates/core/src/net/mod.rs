//! The generator: mesh-conv encoder, latent head, stacked LSTM and a decoder
//! that reuses the encoder's convolution weights transposed.

mod checkpoint;
mod layers;
mod model;

pub use checkpoint::{
    decode_checkpoint, encode_checkpoint, load_checkpoint, save_checkpoint, Checkpoint,
    CHECKPOINT_MAGIC, CHECKPOINT_VERSION,
};
pub use layers::Activation;
pub use model::{
    mesh_conv_forward, Bound, ChainState, GeneratorModel, Latent, MeshConvLayer, NetConfig,
    StepVars, TapeState,
};
