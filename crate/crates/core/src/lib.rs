//! Offline on-policy value estimation lab.
//!
//! The crate has two halves that share nothing but conventions:
//!
//! * a 2D continuous labyrinth stack (`envsim`, `net`, `learners`,
//!   `embeddings`, `eval`) for studying how Monte-Carlo regression and
//!   TD(0) behave when a neural value function has to fit sharp
//!   discontinuities across walls, and
//! * an exact birth-death chain analysis (`chain`) where the TD fixed
//!   point, the Dirichlet-mixture loss it minimises, and the classic
//!   contraction bounds can all be checked in closed form.
//!
//! Everything is deterministic given a seed: datasets, training runs,
//! ground-truth grids and reports reproduce byte-for-byte.

pub mod chain;
pub mod cli;
pub mod embeddings;
pub mod envsim;
pub mod error;
pub mod eval;
pub mod geom;
pub mod learners;
pub mod net;

pub use error::{Error, Result};
