//! Audit helpers: dense reference implementations and seeded synthetic data.

pub mod oracle;
pub mod synthetic;
