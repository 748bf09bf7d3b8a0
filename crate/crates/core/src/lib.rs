//! Simulation and autonomy stack for a mobile manipulator that searches a
//! room for a named object, picks it up and carries it to a drop location.

// lets test-support files shared with integration tests name this crate
#[cfg(test)]
extern crate self as fetchsim;

pub mod camera;
pub mod executive;
pub mod geometry;
pub mod grasping;
pub mod mapping;
pub mod metrics;
pub mod navigation;
pub mod perception;
pub mod reconstruction;
pub mod render;
pub mod rng;
pub mod scenario;
pub mod sensors;
pub mod spatial;
pub mod world;
