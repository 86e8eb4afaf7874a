//! Byte-level malware classification hardened by entropy filtering and
//! adversarial training.
//!
//! The pipeline turns a byte sequence into a square grayscale image, resizes
//! it to a fixed side, and classifies it with a small convolutional network.
//! Low-entropy chunks can be filtered out before imaging, and the classifier
//! can be retrained on stochastic adversarial variants of its training set.
//! Three evasion attacks (genetic black-box, FF-byte filling, gradient
//! append) are provided to measure the effect.

pub mod attacks;
pub mod bytes;
pub mod corpus;
pub mod error;
pub mod harness;
pub mod imaging;
pub mod model;
pub mod pipeline;
pub mod perturb;
pub mod preprocess;
pub mod seed;

pub use bytes::{ByteSequence, Provenance};
pub use error::{Error, Result};
