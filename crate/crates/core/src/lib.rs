pub mod align;
pub mod articulation;
pub mod dataset;
pub mod eval;
pub mod math;
pub mod metrics;
pub mod splat;
pub mod recon;
pub mod scene;
pub mod synthetic;
