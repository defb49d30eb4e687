mod adam;
pub mod checkpoint;
pub mod gradcheck;
mod mlp;

pub use adam::{cosine_lr_multiplier, polyak_update, AdamState};
pub use mlp::{Mlp, MlpSpec, OutputActivation, Tape};
