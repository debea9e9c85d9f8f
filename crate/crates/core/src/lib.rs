//! Discourse connective prediction.
//!
//! The pipeline harvests adjacent sentence pairs whose second sentence may
//! open with a discourse connective ([`text`], [`corpus`]), trains either a
//! decomposable attention classifier ([`da`], built on the small dense
//! kernel in [`nn`]) or a sparse word-pair logistic regression baseline
//! ([`wordpairs`]), and scores predictions ([`eval`]).

pub mod corpus;
pub mod da;
pub mod error;
pub mod eval;
pub(crate) mod hash;
pub mod nn;
pub mod synthetic;
pub mod text;
pub mod wordpairs;

pub use error::{Error, Result};
pub use text::{ConnectiveLexicon, LabelId, Sentence};
