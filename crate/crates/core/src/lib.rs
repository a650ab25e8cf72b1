//! Item embeddings for sequential recommendation derived from attribute
//! prompts.
//!
//! The pipeline has two training stages. A text encoder is first fine-tuned
//! contrastively on attribute-dropped views of each item prompt ([`scft`]).
//! Its mean-pooled embeddings are reduced with PCA ([`reduce`]), frozen, and
//! mapped to the recommender width by a two-layer adapter that is trained
//! jointly with a sequential backbone and aligned to collaborative embeddings
//! ([`rat`], [`srs`]). [`eval`] measures overall and long-tail ranking quality
//! and [`data`] generates a synthetic long-tail benchmark.

pub mod autograd;
pub mod catalog;
pub mod data;
pub mod encoder;
pub mod error;
pub mod eval;
pub mod gradcheck;
pub mod params;
pub mod rat;
pub mod reduce;
pub mod scft;
pub mod srs;
pub mod tensor_io;

pub use autograd::{Graph, Mat, Var};
pub use catalog::{augment_pair, build_prompt, Catalog, ItemRecord, PromptTemplate};
pub use encoder::{EncoderConfig, EncoderParams, LoraConfig, LoraWeights, TextEmbedder, TextEncoder, Tokenizer};
pub use error::{Error, Result};
pub use params::{Adam, Params};
pub use reduce::PcaModel;
pub use tensor_io::TensorFile;
