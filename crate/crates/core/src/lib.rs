//! Simulation and cryptanalysis laboratory for quantum-noise stream ciphers.
//!
//! Alice encodes ciphertext symbols as coherent states whose constellation is
//! selected per slot by a secret basis stream. An eavesdropper records
//! heterodyne outcomes and, knowing only the constellation, tries to recover
//! the basis secret. The crate provides:
//!
//! - [`rng`]: counter-based randomness and the heterodyne outcome density
//! - [`constellation`]: P-type, N-type, Toy, Toy-QAM and custom constellations
//! - [`keystream`]: secrets, basis/key streams, XOR, known-plaintext narrowing
//! - [`channel`]: transmission and decoding
//! - [`exclusion`]: hard basis-exclusion attack
//! - [`mle`]: maximum-likelihood attack and its error-exponent statistics
//! - [`audit`]: exact leakage check on basis-conditional distributions
//! - [`lab`]: config-driven experiments writing CSV/JSON artifacts
//!
//! All heavy loops go through [`par`], which uses rayon when the `parallel`
//! feature is on and runs sequentially otherwise. Results do not depend on
//! the number of worker threads.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod audit;
pub mod channel;
pub mod constellation;
pub mod error;
pub mod exclusion;
pub mod keystream;
pub mod lab;
pub mod mle;
pub mod par;
pub mod rng;

pub use constellation::{Constellation, ConstellationKind};
pub use error::{Error, Result};
pub use keystream::{Candidate, Ensemble, Secret, SecretMode};
pub use rng::{Amplitude, RandomStream};

/// Locale-independent float formatting with 17 significant digits.
pub fn fmt_f64(x: f64) -> String {
    if x.is_finite() {
        format!("{x:.16e}")
    } else if x.is_nan() {
        "nan".to_string()
    } else if x > 0.0 {
        "inf".to_string()
    } else {
        "-inf".to_string()
    }
}
