pub mod classifier;
pub mod evaluation;
pub mod features;
pub mod occupation;
pub mod simulation;
pub mod trace;
