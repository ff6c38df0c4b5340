//! Time-resolved photon statistics of a pulsed single emitter with carrier
//! recapture: simulation, detection, two-time correlation, coalescence and
//! parameter fitting.

pub mod coherence;
pub mod correlator;
pub mod error;
pub mod fitting;
pub mod io;
pub mod model;
pub mod optics;
pub mod pipeline;
pub mod rng;
pub mod scenario;
pub mod stats;
pub mod stochastic;
pub mod surface;

pub use error::{Error, Result};
pub use scenario::{EmitterScenario, ReservoirSpec};
pub use surface::{Configuration, CorrelationSurface, Origin, Quantity, TimeAxis};
