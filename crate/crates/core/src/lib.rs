//! Latent-space image watermarking at desk scale.
//!
//! The pipeline: DDIM-invert an image into a diffusion latent, implant a
//! seeded ring pattern in the centered Fourier domain of the latent, refine
//! it into a latent-dependent watermark with a pair of Lipschitz residual
//! flow networks, regenerate the image, and later verify the mark with a
//! non-central chi-squared test on the re-inverted latent. A perturbation
//! suite and a benchmark harness measure robustness.
//!
//! Everything is `f64`, seeded, and deterministic; there are no pretrained
//! dependencies.

pub mod attacks;
pub mod autodiff;
pub mod checkpoint;
pub mod chi2;
pub mod detection;
pub mod diffusion;
pub mod error;
pub mod fft;
pub mod flow;
pub mod harness;
pub mod imageio;
pub mod ltns;
pub mod metrics;
pub mod opt;
pub mod tensor;
pub mod watermark;

pub use error::{Error, Result};
pub use tensor::{ComplexTensor, RealTensor, Shape};
