//! Multimodal procedural skills for GUI agents: packages, libraries, branch-loaded
//! runtime consultation, offline generation and usage telemetry.

pub mod adapters;
pub mod generator;
pub mod library;
pub mod package;
pub mod protocol;
pub mod runtime;
pub mod telemetry;
pub mod text;
