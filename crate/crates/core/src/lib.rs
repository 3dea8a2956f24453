//! Enrich-by-need shapes analysis for Diffie-Hellman protocols.

pub mod algebra;
pub mod cli;
pub mod cohort;
pub mod derive;
pub mod protocol;
pub mod search;
pub mod skeleton;
pub mod unify;
