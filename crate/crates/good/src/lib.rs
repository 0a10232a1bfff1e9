//! GOOD: multi-relational graph neural network for out-of-domain link
//! prediction on discrete dynamic graphs.

pub mod config;
pub mod encoder;
pub mod error;
pub mod eval;
pub mod gradcheck;
pub mod graph;
pub mod harness;
pub mod heads;
pub mod matrix;
pub mod mixagg;
pub mod objective;
pub mod params;
pub mod synth;
pub mod tape;
pub mod trainer;
