//! Incident response copilot core: the response tree, role sessions,
//! guidance handling, review and analysis, providers, redaction, and the
//! reasoning/action/reflection engine.

pub mod irt;
pub mod session;
pub mod guidance;
pub mod privacy;
pub mod provider;
pub mod review;
pub mod analyst;
pub mod engine;
