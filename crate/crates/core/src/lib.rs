pub mod bandwidth;
pub mod dataset;
pub mod error;
pub mod estimator;
pub mod intrinsic_dim;
pub mod kernel;
pub mod manifold_lab;
pub mod seed;
pub mod stats;
pub mod two_stage;
pub mod cv;
pub mod registry;
pub mod bench;
