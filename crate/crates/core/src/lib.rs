//! Bounded Dolev-Yao verification of security protocols written in an
//! Alice-and-Bob style notation.

pub mod diag;
pub mod intruder;
pub mod model;
pub mod models;
pub mod parser;
pub mod pattern;
pub mod strand;
pub mod term;
pub mod verifier;
