//! Disturbance-robust trajectory optimization for floating-base robots with
//! point contacts and a manipulator end-effector.

pub mod dynamics;
pub mod model;
pub mod nlp;
pub mod oracle;
pub mod pipeline;
pub mod robustness;
pub mod transcription;
