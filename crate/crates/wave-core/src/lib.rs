//! Initialization of variable-sized vision transformers from a shared bank
//! of weight templates combined with per-model scalers via Kronecker
//! products: template composition, knowledge condensation by distillation,
//! and scaler-only decompression, plus the training loops and benchmark
//! harness needed to exercise the whole cycle on one desk-sized machine.
//!
//! Everything is deterministic given explicit seeds: seeded ChaCha streams,
//! fixed reduction orders, and values quantized through f32 wherever they
//! can reach disk.

pub mod bench;
pub mod error;
pub mod kron;
pub mod learngene;
pub mod lifecycle;
pub mod rng;
pub mod tensor;
pub mod vit;

pub use error::{Error, Result};
