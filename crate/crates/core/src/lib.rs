//! Drowsiness information from facial landmarks.

pub mod classify;
pub mod config;
pub mod detections;
pub mod events;
pub mod geometry;
pub mod pipeline;
pub mod pose;
pub mod recorder;
pub mod synth;
