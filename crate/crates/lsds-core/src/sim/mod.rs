//! Synthetic tactile sensor and gripper contact physics.
//!
//! The simulator stands in for hardware: a Coulomb stick-slip contact
//! model drives a marker-field and depth-map synthesizer whose outputs
//! feed the ordinary feature pipeline. Everything is seeded; a scenario
//! replayed with the same seed emits bit-identical streams.

pub mod contact;
pub mod corpus;
pub mod objects;
pub mod scenario;
pub mod scene;
pub mod tactile;

pub use contact::{grip_dynamics, kinematic_slide, normal_force, ContactState, GripperState};
pub use objects::ObjectSpec;
pub use scenario::{TickRecord, VerticalSlideEnv};
pub use tactile::{TactileConfig, TactileSim};

/// Marker pixels per centimeter of surface travel.
pub const PX_PER_CM: f64 = 15.0;

/// Gravitational acceleration, m/s².
pub const GRAVITY: f64 = 9.81;

/// Gripper position at which the jaws are fully closed.
pub const P_MAX: f64 = 225.0;
