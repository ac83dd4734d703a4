//! Physically based camera simulation for automotive scenes.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod assembly;
pub mod cli;
pub mod eval;
pub mod geometry;
pub mod optics;
pub mod render;
pub mod rng;
pub mod sceneformat;
pub mod sensor;
pub mod spectral;
