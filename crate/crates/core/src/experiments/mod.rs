//! Experiment harness: seeded generators, problem files and parameter
//! sweeps.

mod generate;
mod grid;
mod io;

pub use generate::*;
pub use grid::*;
pub use io::*;
