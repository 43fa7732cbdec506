//! Training-free attribution of generated images.
//!
//! An image is attributed by regenerating candidates from every suspect model
//! with the image's (recovered) prompt and picking the model whose candidates
//! look most like it.

pub mod attribution;
pub mod eval;
pub mod gateway;
pub mod imagecore;
pub mod rng;
pub mod similarity;
pub mod spectral;
pub mod synth;
