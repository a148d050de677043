//! Exact coarse- and fine-graining of the H^{2|2} random Schrödinger operator
//! on the Dyson hierarchical lattice, the cascade measure it generates, and
//! the statistical checks around it.

pub mod cascade;
pub mod error;
pub mod graining;
pub mod hier_graph;
pub mod quad;
pub mod rng;
pub mod samplers;
pub mod schrodinger;
pub mod stats;

pub use error::{Error, Result};
pub use hier_graph::{build_level_graph, HierParams, WeightedGraph};
pub use rng::{RngStream, SimRng};
pub use schrodinger::SchrodingerState;
pub use stats::{MeanEstimate, TestReport};
