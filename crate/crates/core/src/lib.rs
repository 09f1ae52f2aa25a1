//! Seed-plan generation, fine-tuning and evaluation for LDR prostate
//! brachytherapy.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod anatomy;
pub mod augment;
pub mod config;
pub mod distance;
pub mod dose;
pub mod encode;
pub mod error;
pub mod golden;
pub mod grid;
pub mod io;
pub mod objective;
pub mod phantom;
pub mod pipeline;
pub mod plan;
pub mod planner;
pub mod postprocess;
pub mod render;
pub mod stats;

pub use error::{Error, Result};
