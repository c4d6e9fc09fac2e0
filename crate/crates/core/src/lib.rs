//! Simulation of renewal-type non-Markovian collisional models through a
//! Markovian (Lindblad) embedding in an enlarged system ⊗ ancilla space.

pub mod analysis;
pub mod dynamics;
pub mod error;
pub mod generators;
pub mod linalg;
pub mod models;
pub mod series;
pub mod trajectories;
pub mod verify;

pub use error::{Error, Result};
pub use series::{Channel, TimeGrid, TimeSeries};
