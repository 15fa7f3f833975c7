//! Homogenization of micropolar thin-film flow over a rough free boundary: cell problems,
//! the periodic Reynolds equation for the limit pressure, limit-field reconstruction and a
//! penalized direct solver of the ε-problem for comparison.

pub mod cache;
pub mod cell;
pub mod direct;
pub mod fem;
pub mod geometry;
pub mod homogenized;
pub mod linalg;
pub mod output;
pub mod reynolds;
