//! Workspace persistence, the annotation HTTP API and the `maskforge`
//! command line.

pub mod api;
pub mod cli;
pub mod config;
pub mod error;
pub mod workspace;

pub use error::{Result, ServiceError};

#[cfg(doctest)]
#[doc = include_str!("../../../book/src/service.md")]
mod book {}
