//! Evidence-grounded ICD coding for sectioned medical records.
pub mod candidates;
pub mod config;
pub mod corpus;
pub mod embedding;
pub mod eval;
pub mod evidence;
pub mod knowledge;
pub mod pipeline;
pub mod session;
pub mod toy;
pub mod verify;
pub mod wire;
