//! Learnable augmentation views: a variational graph autoencoder that
//! resamples the observed edges, and a per-layer edge-gating denoiser.

mod denoise;
mod generative;

pub use denoise::{
    denoise_loss, edge_score, expected_l0, expected_l0_value, sample_gate, DenoiseLoss,
    DenoiseOutput, Denoiser, GateNoise, HardConcrete,
};
pub use generative::{
    decode_edges, generate_view, kl_to_standard_normal, reparameterize, standard_normal, vgae_loss,
    GeneratedView, Vgae, VgaeLoss, VgaeState,
};
