//! Quality-aware subword vocabulary construction.
//!
//! Standard BPE-style trainers merge the most frequent adjacent pair at each
//! step. This crate scores candidate merges by a quality-aware association
//! score that combines a PMI-like frequency term with the average quality of
//! the constituents raised to a learnable sensitivity exponent. On top of the
//! greedy builder it provides the pieces used to *learn* the construction
//! process: a multi-objective reward engine with EMA normalization, a
//! tokenization MDP with a small PPO trainer, and Gumbel-Softmax relaxed merge
//! selection for gradient-based learning of the process parameters.
//!
//! The crate is `no_std`-compatible (with `alloc`); all IO, file formats and
//! the CLI live in the companion `qatok` crate.

#![cfg_attr(not(feature = "std"), no_std)]

extern crate alloc;

pub mod adaptive;
pub mod corpus;
pub mod error;
pub mod merge;
pub mod nn;
pub mod quality;
pub mod rewards;
pub mod rl_env;
pub mod sampler;
pub mod seed;
pub mod tape;
pub mod tokenizer;

pub use error::{Error, Result};

/// Atomic symbol index into the base alphabet.
pub type SymbolId = u32;

/// Token index into a vocabulary (base symbols first, merged tokens after).
pub type TokenId = u32;

/// Which domain instantiation governs quality aggregation and rewards.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DomainMode {
    /// Geometric-mean token quality, length complexity penalty.
    Genomics,
    /// Arithmetic-mean token quality, volatility-scaled complexity penalty.
    Finance,
}
