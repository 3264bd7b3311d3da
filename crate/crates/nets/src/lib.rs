//! Tiny U-shaped segmentation network, projection heads, the EMA-coupled
//! teacher-student pair, and the checkpoint format.

mod checkpoint;
mod ema;
mod error;
mod params;
mod unet;

pub use checkpoint::{
    decode_params, encode_params, load_pair, load_params, pair_from_params, pair_to_params, save_pair,
    save_params, CHECKPOINT_MAGIC, CHECKPOINT_VERSION,
};
pub use ema::{init_stage2, TeacherStudentPair, DEFAULT_EMA_DECAY};
pub use error::{NetError, Result};
pub use params::{Bound, ModelParams};
pub use unet::{
    decoder_forward, encoder_forward, projection_head_forward, projection_layer_forward, segment_forward,
    DecoderOutput, EncoderOutput, UNetConfig, DECODER, ENCODER, HEAD, OUTPUT, PROJECTION,
};
