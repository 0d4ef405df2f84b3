//! Highway scenes as fluid-flow boundary-value problems.
//!
//! A [`scene::SceneFrame`] is rasterized into an occupancy grid and a
//! boundary-condition lattice ([`raster`]), solved with a D2Q9
//! lattice-Boltzmann engine ([`lbm`]), converted to a physical velocity
//! vector field ([`flowfield`]), and used for streamline prediction,
//! dataset export ([`export`]) and evaluation ([`metrics`]).

pub mod export;
pub mod flowfield;
pub mod highd;
pub mod lbm;
pub mod metrics;
pub mod pipeline;
pub mod raster;
pub mod scenario;
pub mod scene;
