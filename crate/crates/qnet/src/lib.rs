//! Analytic and Monte-Carlo model of quantum teleportation over two
//! metropolitan networks joined by a backbone link, with a global cut-off on
//! the spread of elementary link creation times.
//!
//! Time is measured in integer microsecond slots throughout. Coherence times
//! are carried in seconds at the parameter level and converted to
//! microseconds where they enter decay exponents.

pub mod cli;
pub mod error;
pub mod intercity_analytic;
pub mod mc_sim;
pub mod metro;
pub mod par;
pub mod params;
pub mod requirements;
pub mod series;

pub use error::{Error, Result};
