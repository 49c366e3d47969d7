//! Simulation and experiment harness for an entanglement-assisted
//! simultaneous-message-passing protocol.
//!
//! Alice holds `n` subsets `x_1..x_n` of `[0, 4n^2)`, Bob holds `y_1..y_n`.
//! Sharing `m = log2(4n^2)` EPR pairs per repetition and sending only
//! classical messages to a referee, they produce cells `(i, j)` of size two
//! together with a witness `c` orthogonal to `a + b` over GF(2), where
//! `x_i ∩ y_j = {a, b}`.
//!
//! Modules, bottom-up:
//! - [`gf2m`]: GF(2)^m vectors and the integer/vector identification.
//! - [`instances`]: instances, cells, promises, samplers, file format.
//! - [`relations`]: membership checkers for the answer relations.
//! - [`qsim`]: exact state-vector simulation of one repetition.
//! - [`analytic`]: closed-form sampler cross-checked against [`qsim`].
//! - [`protocol`]: parties, parallel repetition, cost accounting, baselines.
//! - [`game`]: the derived nonlocality game and win-rate estimation.
//! - [`cli`]: the `rsmp` command-line tool.

pub mod analytic;
pub mod cli;
pub mod error;
pub mod game;
pub mod gf2m;
pub mod instances;
pub mod protocol;
pub mod qsim;
pub mod relations;
pub mod rng;
pub mod stats;
pub(crate) mod walsh;

pub use error::{Error, Result};
