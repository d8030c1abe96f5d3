//! Sloped-terrain quadruped locomotion with a linear feedback policy.
//!
//! The crate is organised bottom-up:
//!
//! - [`legkin`]: analytic leg kinematics and workspace checks
//! - [`gaitgen`]: semi-elliptic trot trajectories and their transforms
//! - [`slopeest`]: support-plane estimation from stance feet
//! - [`policy`]: observation assembly, the 20x11 linear map, action scaling
//! - [`reward`]: per-step reward
//! - [`simenv`]: simplified rigid-body environment
//! - [`trainer`]: Augmented Random Search, guided initialization, evaluation
//! - [`config`] and [`harness`]: run configuration and file-producing runs

pub mod config;
pub mod gaitgen;
pub mod harness;
pub mod legkin;
pub mod policy;
pub mod reward;
pub mod seeding;
pub mod simenv;
pub mod slopeest;
pub mod trainer;
