//! Context-graph reasoning over knowledge graphs.
//!
//! A context graph extends a triple KG with per-entity textual contexts
//! (label, description, aliases, encyclopedia paragraph) and per-triple
//! relation contexts (supporting sentences). On top of it this crate
//! implements:
//!
//! - desk-scale knowledge-graph embeddings (ComplEx, RotatE) producing a
//!   full entity ranking per completion query,
//! - a retrieve -> rank KG-completion pipeline where an LLM proposes and
//!   re-ranks candidate answers using entity contexts,
//! - an iterative beam-search KGQA pipeline over reasoning paths with a
//!   per-iteration sufficiency check,
//! - filtered ranking metrics (MRR, Hits@k), exact-match QA scoring and
//!   long-tail bucketing.
//!
//! Every LLM touchpoint is a pluggable backend; the scripted backend makes
//! whole pipeline runs deterministic and replayable offline.

pub mod config;
pub mod eval;
pub mod graph;
pub mod ingest;
pub mod kgc;
pub mod kge;
pub mod kgqa;
pub mod llm;
pub mod ranked;
pub mod textsim;
