//! Offline document-to-graph compiler, structural-entropy hierarchy builder and
//! routed retrieval engine for clause/table/formula-heavy standards documents.
//!
//! The offline stage loads intermediate JSON documents ([`doc_model`]), compiles
//! text, tables and equations into typed graph primitives ([`layout`],
//! [`formula`]), merges them into one [`graph::TypedGraph`], and compresses it
//! into a community hierarchy by greedy two-dimensional structural-entropy
//! minimisation ([`sem`]). The online stage ([`query`]) routes each question to
//! a lookup, local expansion or macro-node mode and verbalises the result into
//! provenance-carrying evidence records.
//!
//! Every external model dependency sits behind a trait in [`llm`] with a
//! deterministic offline fallback, so the whole pipeline runs without network
//! access.

pub mod canonical;
pub mod cost;
pub mod doc_model;
pub mod formula;
pub mod graph;
pub mod layout;
pub mod llm;
pub mod pipeline;
pub mod query;
pub mod sem;
pub mod synth;
pub mod text;
pub mod vector;

pub use doc_model::{load_document, validate_corpus, Block, BlockBody, Provenance, SourceDocument};
pub use graph::{NodeType, RelationType, TypedGraph};
pub use query::EvidenceRecord;
