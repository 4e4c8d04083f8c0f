//! Debiased sample selection under label noise.
//!
//! The crate trains a dense network with one shared trunk and `m + 1`
//! interchangeable output heads on a noisy-label dataset. Each epoch the
//! expert heads (every head except the current classifier) pick a trusted
//! subset with a pluggable criterion; training then draws one head-focused
//! and one tail-focused batch from that subset, mixes them, and updates a
//! randomly drawn head. See the accompanying book for a walkthrough.

pub mod config;
pub mod data;
pub mod matrix;
pub mod nn;
pub mod report;
pub mod rng;
pub mod sampling;
pub mod selection;
pub mod trainer;
