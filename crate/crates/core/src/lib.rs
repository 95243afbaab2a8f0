//! Gaze-directed vision GNN.
//!
//! A gaze map generator predicts where a reader would look; a graph classifier
//! over feature-grid patches builds its KNN graph from a distance that fuses
//! feature similarity with that gaze map. A synthetic corpus with planted
//! lesions and shortcut tokens makes the effect measurable.

pub mod blocks;
pub mod config;
pub mod data;
pub mod error;
pub mod gdc;
pub mod gmg;
pub mod graph;
pub mod harness;
pub mod model;
pub mod nn;
pub mod numerics;

pub use error::{Error, Result};
