//! Identity-overlap auditing between a recognition training set and a test
//! set, working entirely from precomputed embeddings.
//!
//! The pipeline: load and normalize embeddings ([`embedding_store`]), find
//! each test image's nearest training images ([`matcher`]), classify and
//! review the candidate pairs ([`overlap`], [`annotation`]), build
//! identity-disjoint and identity-overlapped training sets ([`subset`]),
//! evaluate models trained on them ([`verifier`]) and tabulate the accuracy
//! difference ([`report`]).

pub mod annotation;
pub mod embedding_store;
pub mod error;
pub mod matcher;
pub mod overlap;
pub mod report;
pub mod subset;
mod union_find;
pub mod verifier;

pub use error::{Error, Result};
pub use union_find::UnionFind;
