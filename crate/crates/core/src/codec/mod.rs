//! Hyperprior VAE codec: transforms, quantization and rate estimates.

pub mod quantize;
pub mod rate;
pub mod transforms;

pub use quantize::{add_uniform_noise, round_half_away, round_tensor};
pub use rate::{discretized_bits, factorized_bits, Dist};
pub use transforms::{
    analysis_g_a, crm_forward, hyper_h_a, hyper_h_s, res_block, synthesis_g_s, CodecDims, GaussianParams,
};
