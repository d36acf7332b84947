pub mod cli;
pub mod costmodel;
pub mod evaluation;
pub mod hifreq;
pub mod model;
pub mod numkernel;
pub mod sampling;
pub mod seeds;
pub mod signal_io;
pub mod stage;
pub mod training;

pub use stage::{Label, Stage, NUM_STAGES};
