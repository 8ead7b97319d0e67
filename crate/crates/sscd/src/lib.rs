//! Contrastive decoding for video-language scoring at desk scale.
//!
//! The pipeline in one breath: per-frame token features form a temporal
//! graph whose round-trip walk probabilities measure how reversible — how
//! temporally consistent — a clip is; a small trainable perturbation network
//! (the disruptor) is optimized to break exactly that consistency while also
//! suppressing the likelihood of grounded answers; decoding then contrasts
//! the intact and disrupted branches, keeping only tokens the intact branch
//! itself finds plausible.
//!
//! Modules, bottom up:
//!
//! - [`scalar`], [`rng`], [`tensor`]: a generic float abstraction, seeded
//!   deterministic random streams, and dense row-major linear algebra with
//!   f64 accumulation.
//! - [`graph`]: frame-to-frame affinities, temperature softmax transitions,
//!   multi-step walks, round-trip cycle scores, the temporal loss and its
//!   hand-derived gradient, plus a brute-force walk enumerator used as an
//!   independent oracle.
//! - [`surrogate`]: a tiny frozen language model (projector, embeddings,
//!   mixer, output head) that scores token sequences against visual
//!   features.
//! - [`disruptor`]: the trainable residual MLP that perturbs features.
//! - [`train`]: the combined objective, analytic parameter gradients,
//!   finite-difference auditing, AdamW and the training loop.
//! - [`decode`]: calibrated contrastive logits, the adaptive plausibility
//!   constraint and greedy/sampled generation.
//! - [`synth`], [`io`], [`config`], [`cli`]: synthetic AR(1) datasets,
//!   bit-exact file formats, layered configuration and the command-line
//!   surface.
//!
//! Everything numeric is generic over [`Scalar`] (`f32` or `f64`); the crate
//! root fixes [`Real`] = `f64` as the working precision for binaries and
//! tests. All randomness flows through named [`rng::StreamId`] streams of a
//! counter-based generator, so every artifact a run produces is reproducible
//! from its seed.

pub mod cli;
pub mod config;
pub mod decode;
pub mod disruptor;
pub mod error;
pub mod graph;
pub mod io;
pub mod rng;
pub mod scalar;
pub mod surrogate;
pub mod synth;
pub mod tensor;
pub mod train;

pub use error::{Error, Result};
pub use scalar::Scalar;

/// Working precision used by the CLI and the test suites.
pub type Real = f64;
/// Dense matrix at working precision.
pub type Mat = tensor::Matrix<Real>;
/// Frame-feature tensor at working precision.
pub type Features = tensor::Tensor3<Real>;
