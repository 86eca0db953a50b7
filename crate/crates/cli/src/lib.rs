//! Command-line pipeline for grading handwritten short-answer sheets.

pub mod commands;
pub mod config;
pub mod manifest;
pub mod pipeline;
