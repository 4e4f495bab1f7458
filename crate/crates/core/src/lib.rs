//! Numerical toolkit for twisted Knizhnik–Zamolodchikov connections.

pub mod autmod;
pub mod connection;
pub mod error;
pub mod frobenius;
pub mod liealg;
pub mod rcalc;
pub mod linalg;
pub mod serial;
pub mod singular;
pub mod transport;

pub use error::{Error, ErrorClass, Result};
