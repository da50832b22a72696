//! Screenplay rehearsal engine.
//!
//! A screenplay is parsed into scenes and lines; each activated character
//! gets an agent with private memory that enacts its lines as inner
//! thoughts; feedback written from that experience passes a four-criterion
//! gate before it reaches the writer. [`orchestrator::Session`] drives it.

pub mod agent;
pub mod api;
pub mod config;
pub mod evaluator;
pub mod memory;
pub mod orchestrator;
pub mod parser;
pub mod provider;

pub use config::EngineConfig;
pub use orchestrator::{Mode, Session, SessionError, SessionReport};
pub use parser::{parse_screenplay, ParsedScreenplay, ParserConfig, RawScreenplay};
pub use provider::{LlmProvider, ProviderError};
