//! Sabotage injection and blind detection for additive-manufacturing g-code.
//!
//! The pipeline mirrors a red-team/blue-team exercise:
//!
//! 1. [`synth`] slices a specimen at many rotations into a corpus of g-code files.
//! 2. [`mutate`] compromises a few files with one of six material-dropping strategies.
//! 3. [`features`] turns every file into command-count features.
//! 4. [`detect`] flags suspicious files using robust statistics and clustering.
//! 5. [`eval`] scores the flags against the held-back ground truth.
//!
//! [`experiment`] chains the stages under one master seed and backs the CLI.

pub mod detect;
pub mod eval;
pub mod experiment;
pub mod features;
pub mod gcode;
pub mod geometry;
pub mod mutate;
pub mod seed;
pub mod synth;
