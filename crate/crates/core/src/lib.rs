//! Numerical core for prefix attention and its NTK-Attention approximation.
//!
//! Everything here is pure computation over [`DenseMatrix`] values: exact
//! softmax and prefix attention, feature-map lifts that approximate the
//! exponential kernel, compression of a prefix into the `(Z, k)` pair,
//! the two-layer stylized attention model used for neural tangent kernel
//! analysis, and a finite-difference gradient oracle.
//!
//! The crate is `no_std` and only needs `alloc`. File formats, timing and
//! the command line live in the `ntk-attn` companion crate.
#![no_std]

extern crate alloc;
#[cfg(test)]
extern crate std;

pub mod attention;
pub mod eigen;
mod error;
pub mod feature_map;
pub mod gradcheck;
pub(crate) mod math;
pub mod matrix;
pub mod ntk_attention;
pub mod rng;
pub mod stylized;

pub use attention::{prefix_attention, prefix_attention_decomposed, vanilla_attention, PrefixModel};
pub use eigen::{eigenvalues_sym, min_eigen_sym};
pub use error::{Error, Result};
pub use feature_map::{FeatureKind, FeatureMapSpec, ScaleMode};
pub use matrix::{row_softmax, DenseMatrix};
pub use ntk_attention::{compress_prefix, count_params, NtkAttnModel, ParamKind};
pub use rng::SeededRng;
