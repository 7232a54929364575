//! Parameter sets, time grids, initial laws and seeded noise shared by every
//! experiment.

mod grid;
mod law;
mod noise;
mod params;

pub use grid::TimeGrid;
pub use law::InitialLaw;
pub use noise::{make_noise, path_rng, NoiseBundle, PathKey, PathStreams};
pub(crate) use noise::cumulative;
pub use params::{LqParams, Players};
