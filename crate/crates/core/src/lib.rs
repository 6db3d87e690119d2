//! Simulation, teleoperation and analysis stack for a gantry robot that
//! scans the chest with a passively compliant ultrasound probe.
//!
//! The plant ([`sim`]) combines a breathing elliptical-cylinder torso
//! ([`torso`]), gantry kinematics ([`kinematics`]) and a constant-force
//! passive end-effector ([`endeffector`]). Operators drive it through
//! [`teleop`] over the NDJSON [`protocol`], following the ten-region scan
//! [`workflow`]. [`analysis`] measures image quality and compares sessions.

pub mod analysis;
pub mod cli;
pub mod config;
pub mod endeffector;
pub mod error;
pub mod frame;
pub mod geom;
pub mod kinematics;
pub mod protocol;
pub mod script;
pub mod sim;
pub mod teleop;
pub mod torso;
pub mod workflow;

pub use config::Config;
pub use error::{Error, Result};
