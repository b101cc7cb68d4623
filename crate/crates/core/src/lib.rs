//! Convex restriction of nonlinear equality/inequality systems and the
//! sequential convex restriction solver.

pub mod catalog;
pub mod cli;
pub mod conic;
pub mod envelopes;
pub mod error;
pub mod linalg;
pub mod model;
pub mod problem;
pub mod restriction;
pub mod scrs;

pub use error::{Error, Result};
