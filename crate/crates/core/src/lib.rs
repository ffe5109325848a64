//! Latent-space ConvLSTM video denoising.
//!
//! The crate is organised bottom-up: [`tensor`] and [`autodiff`] provide the
//! differentiable kernel layer, [`model`] builds the encoder / latent
//! recurrence / decoder network, [`metrics`] holds PSNR, SSIM and the
//! training objective, [`data`] the sequence I/O and noise synthesis,
//! [`flops`] the analytic cost model and [`train`] the optimiser loop.

pub mod autodiff;
pub mod data;
pub mod error;
pub mod eval;
pub mod flops;
pub mod gradcheck;
pub mod io;
pub mod kernels;
pub mod kv;
pub mod metrics;
pub mod model;
pub mod selfcheck;
pub mod tensor;
pub mod train;

pub use autodiff::{concat_channels, Gradients, Tape, Var};
pub use data::{Layout, VideoSequence};
pub use error::{Error, Result};
pub use model::{Ablation, FlopConvention, Model, ModelConfig, RecurrentState};
pub use tensor::{Element, Tensor};
