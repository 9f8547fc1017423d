//! Wave-packet dynamics on quantum graphs with transparent vertex and end
//! boundary conditions.
//!
//! The crate is organised along the simulation pipeline: [`graph`] holds the
//! topology and the vertex transparency rules, [`grid`] the meshes and initial
//! packets, [`boundary`] the discrete Dirichlet-to-Neumann maps, [`stepper`]
//! the Crank-Nicolson system and time loop, [`observables`] the norms and
//! fluxes, and [`scenario`] the JSON configuration, canned runs and sweeps.

pub mod boundary;
pub mod graph;
pub mod grid;
pub mod observables;
pub mod scenario;
pub mod stencil;
pub mod stepper;

pub use graph::{Bond, BondEnd, BondId, MetricGraph, Terminal, Vertex, VertexId};
pub use grid::{BondGrid, PacketParams, WaveField};
pub use stepper::{run, RunResult, SimConfig, Simulation};
