//! Test-only oracles and fixtures shared by the integration suites.
#![allow(dead_code)]

pub mod fixtures;
pub mod lp_oracle;
pub mod semantics;
