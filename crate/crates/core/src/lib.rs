//! Adaptive transform coding of feature vectors.
//!
//! A Gaussian mixture model picks a per-vector Karhunen–Loève transform;
//! coefficients are whitened, quantized with Lloyd–Max quantizers chosen by
//! reverse water-filling at a shared level θ, and arithmetic-coded under the
//! Gaussian interval probabilities.

pub mod codec;
pub mod entropycoder;
pub mod error;
pub mod evalkit;
pub mod gmm;
pub mod linalg;
pub mod normal;
pub mod pca;
pub mod quantizer;
pub mod rdtheory;
pub mod rng;
pub mod synth;

pub use error::{AtcError, Result};
pub use codec::{CodecModel, CoderMode, EncodedStream};
pub use gmm::{FeatureSet, GmmModel};
