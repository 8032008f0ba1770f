//! Slip detection and severity estimation from marker-based tactile
//! sensing, with a synthetic contact simulator and a closed-loop grip
//! controller.
//!
//! The crate is organized bottom-up:
//!
//! * [`field`]: deformation-field math on the marker lattice.
//! * [`features`]: streaming feature extraction and feature-set selection.
//! * [`dataset`]: line-oriented corpus files.
//! * [`learn`]: decision-forest, boosted-tree, and neural learners.
//! * [`eval`]: metrics and cross-validation drivers.
//! * [`sim`]: object library, stick-slip contact model, tactile synthesis,
//!   scenario scripts, and corpus generation.
//! * [`control`]: PD grip controller and closed-loop episode runner.

pub mod control;
pub mod dataset;
pub mod eval;
pub mod features;
pub mod field;
pub mod learn;
pub mod sim;
pub mod textio;
