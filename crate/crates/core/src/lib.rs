//! Multi-source retrieval engine and preference-data builder for medical
//! vision-language RAG.

pub mod corpus;
pub mod eval;
pub mod exploration;
pub mod gateway;
pub mod hkpt;
pub mod jsonl;
pub mod prompts;
pub mod query;
pub mod retrieval;
pub mod sample;
pub mod text;
