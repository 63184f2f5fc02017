//! Word-based neural Chinese word segmentation.
//!
//! Word candidates are composed from character embeddings by a gated
//! combination network, chained through an LSTM that scores how well each
//! word follows the segmentation history, decoded with beam search and trained
//! with a structured max-margin objective.

pub mod ablation;
pub mod config;
pub mod corpus;
pub mod decoder;
pub mod embeddings;
pub mod error;
pub mod gcnn;
pub mod gradcheck;
pub mod model;
pub mod params;
pub mod scorer;
pub mod segmentation;
pub mod tensor;
pub mod trainer;

pub use corpus::{normalize, parse_bakeoff, score_prf, split_train_dev, Corpus, NormalizeMode, PrfReport, Sentence, Token};
pub use decoder::{beam_search, enumerate_all, loss_augmented_beam_search, Scored, SearchStats};
pub use embeddings::{build_vocab, CharVocab};
pub use error::{Error, Result};
pub use gcnn::Composition;
pub use model::{Model, ModelConfig};
pub use params::{ParamStore, Parameter};
pub use scorer::ScoreParts;
pub use segmentation::{Segmentation, Span};
pub use tensor::Tensor;
pub use trainer::{hinge_loss_and_grad, margin_loss, train, TrainConfig, TrainReport};
