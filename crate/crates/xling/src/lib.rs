//! Desk-scale laboratory for cross-lingual chain-of-thought instruction tuning.
//!
//! The pipeline generates parallel math word problems over synthetic
//! pseudo-languages, builds code-switched instruction data, trains a micro
//! decoder-only language model with exact manual gradients, and evaluates
//! per-language accuracy, reasoning-path diversity and representation
//! alignment.

pub mod cli;
pub mod corpus;
pub mod evalsuite;
pub mod model;
pub mod switchboard;
pub mod trainer;
