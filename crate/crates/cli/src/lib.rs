//! Library surface of the orchestration crate (the `mdt-sim` binary is a
//! thin wrapper over these modules).

pub mod agents_io;
pub mod commands;
pub mod layout;
pub mod manifest;
