//! Trajectory-aware video reasoning segmentation at desk scale.

pub mod error;
pub mod numerics;

pub use error::{Error, Result};
pub mod backbone;
pub mod config;
pub mod nn;
pub mod trajectory_encoder;
pub mod reasoning;
pub mod fci;
pub mod mask_generator;
pub mod formats;
pub mod gradcheck_suite;
pub mod synthetic_data;
pub mod evaluation;
pub mod model;
pub mod training;
