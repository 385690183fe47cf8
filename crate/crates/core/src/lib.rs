//! TopicRNN: a recurrent language model whose output layer is biased by a
//! latent document-topic vector.
//!
//! The topic vector is inferred from a document's bag of non-stop words by
//! a small variational encoder and is gated off whenever the next token is a
//! stop word. Everything numeric runs on the reverse-mode engine in
//! [`engine`]; there is no external tensor library.

pub mod cells;
pub mod corpus;
pub mod downstream;
pub mod engine;
pub mod error;
pub mod inference;
pub mod model;

pub use error::{Error, Result};
