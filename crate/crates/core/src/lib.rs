//! Mean field games on finite weighted graphs.
//!
//! The crate provides the discrete calculus of a weighted graph (gradient, divergence,
//! Laplacian, logarithmic-mean mobility), separable Lagrangian/Hamiltonian models, a
//! forward-backward solver for the mean field game system with its linearization, and
//! numerical certificates for the master equation, the HJB equation of the associated
//! control problem and the Nash property of the induced Markov-chain game.

pub mod calculus;
pub mod dynamics;
pub mod error;
pub mod graph;
pub mod grid;
pub mod hjb;
pub mod master;
pub mod model;
pub mod nash;
pub mod solver;
pub mod theta;

pub use calculus::{EdgeField, SimplexPoint, TangentVector};
pub use error::{Error, Result};
pub use graph::{GraphSpec, WeightedGraph};
pub use model::{ExtendedSystem, Family, GameSpec, MfgSystem, ModelSpec};
