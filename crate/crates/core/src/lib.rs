//! Numerical laboratory for the LQ interbank mean field game with common noise.
//!
//! The crate covers the finite-N game and its closed-form Nash equilibrium,
//! the conditional McKean-Vlasov limit, a finite-difference solver for the
//! master equation with its exact decoupling field, Ito's formula along flows
//! of conditional measures for cylindrical functionals, and the Pareto growth
//! model. Every computation is seeded and bit-reproducible regardless of the
//! number of worker threads.

pub mod error;
pub mod ito;
pub mod master;
pub mod mkv;
pub mod model;
pub mod nplayer;
pub mod pareto;
pub mod riccati;
pub mod stats;

pub use error::{Error, Result};
pub use model::{make_noise, path_rng, InitialLaw, LqParams, NoiseBundle, PathKey, Players, TimeGrid};
