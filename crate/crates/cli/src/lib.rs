//! The `conet` command-line tool: key and document authoring, one-shot
//! negotiation commands, the agent daemon, transcript verification and the
//! scenario runner.

pub mod commands;
pub mod daemon;
pub mod error;
pub mod scenario;

pub use error::CliError;
