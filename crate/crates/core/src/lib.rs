//! Toolkit for generating MOOSE-style input cards from natural-language
//! requests: card parsing and linting, a knowledge base of annotated cards
//! and object documentation, exact vector retrieval, an LLM client with
//! token accounting, a solver runner, the repair-loop pipeline and an
//! evaluation harness.

pub mod hit;
pub mod llm;
pub mod kb;
pub mod protocol;
pub mod retrieval;
pub mod templates;
pub mod runner;
pub mod agents;
pub mod eval;
