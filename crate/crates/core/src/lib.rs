//! Desk-scale knowledge distillation for masked-image-modeling encoders.
//!
//! The pipeline pretrains a toy vision-transformer teacher with spatial and
//! frequency masking, curates a coreset from teacher features and gradient
//! traces, distills a narrower student with consistency-weighted head
//! alignment plus mid-layer reconstruction, and evaluates the student with a
//! linear probe and an FPN-style segmentation head.

pub mod adapt;
pub mod cli;
pub mod coreset;
pub mod data;
pub mod distill;
pub mod encoder;
pub mod error;
pub mod masking;
pub mod nn;
pub mod schedule;
pub mod seed;

pub use error::{Error, Result};
pub use ndarray;
