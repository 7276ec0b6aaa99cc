//! Occupancy-sized bucketing of heterogeneous ligand work items and a
//! deterministic simulator of a double-buffered multi-GPU docking pipeline.

pub mod clustering;
pub mod dataset;
pub mod device;
pub mod harness;
pub mod simengine;
