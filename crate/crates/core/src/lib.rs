//! Kinematic structure estimation for articulated objects.
//!
//! Feature tracks are segmented into rigidly moving parts, each part gets a
//! 6-DOF trajectory, every pair of parts is fit with rigid, prismatic and
//! rotational joint models, and the kinematic graph is the minimum spanning
//! tree over BIC edge costs. Natural-language descriptions can add a
//! grounding log-likelihood to the BIC of each candidate joint.
//!
//! The crate is `no_std` and needs only `alloc`; file formats, threading and
//! the command-line front end live in the `artikin` crate.
#![no_std]

extern crate alloc;

pub mod exec;
pub mod geometry;
pub mod grounding;
pub mod kinfit;
pub mod metrics;
pub mod posegraph;
pub mod segmentation;
pub mod structure;
pub mod synth;
pub mod track;

pub use geometry::{Pose, RelativeTransform, Vec3};
pub use kinfit::{ModelHypothesis, ModelParams, ModelType, NoiseModel};
pub use structure::{infer, InferConfig, InferReport, KinematicGraph, Observations};
