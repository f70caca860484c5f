pub mod camera;
pub mod cli;
pub mod error;
pub mod image;
pub mod io;
pub mod metrics;
pub mod mpi;
pub mod optim;
pub mod pseudo;
pub mod real;
pub mod synthetic;
pub mod warp;
