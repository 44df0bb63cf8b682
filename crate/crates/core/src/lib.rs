//! Parsing, type checking, planning and execution of OSC workflows.

pub mod engine;
pub mod model;
pub mod parser;
pub mod planner;
pub mod provenance;
pub mod typesystem;
