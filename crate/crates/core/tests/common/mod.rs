//! Measurements shared by the oracle suites and the acceptance target. Each
//! returns the worst observed error so callers choose their own verdict.
#![allow(dead_code)]

pub mod equi;
pub mod grad;
pub mod mdp;
pub mod oracle;
