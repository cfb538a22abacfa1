pub mod cloud;
pub mod config;
pub mod error;
pub mod eval;
pub mod graph;
pub mod hodge;
pub mod icp;
pub mod io;
pub mod pipeline;
pub mod se3;
pub mod sparse;
pub mod surface;
pub mod synth;
