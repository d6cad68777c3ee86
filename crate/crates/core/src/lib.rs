//! Entity-augmented compositional semantics for implicit discourse-relation
//! classification.
//!
//! Each argument of a relation is a binarized parse tree. An upward pass
//! composes word vectors into one vector per subtree; a downward pass gives
//! every node a vector for its role in the whole argument. Relations are
//! scored with low-rank bilinear forms over the two root vectors and over the
//! downward vectors of coreferent entity mentions, plus an optional sparse
//! surface-feature channel. All parameters are trained jointly with a
//! regularized multiclass hinge loss and AdaGrad.
//!
//! ```
//! use discorel::tree::{binarize, parse_bracketed_tree};
//!
//! let t = binarize(&parse_bracketed_tree("(S (NP Tina) (VP (V took) (NP Bob)))").unwrap());
//! assert_eq!(t.len(), 5);
//! assert_eq!(t.tokens(), vec!["Tina", "took", "Bob"]);
//! ```

pub mod classifier;
pub mod composition;
pub mod corpus;
pub mod embeddings;
pub mod eval;
pub mod features;
pub mod gradcheck;
pub mod model;
pub mod synth;
pub mod training;
pub mod tree;

use thiserror::Error;

pub use classifier::{ModelMode, ParamGroup};
pub use corpus::{Dataset, Instance};
pub use embeddings::WordEmbeddings;
pub use eval::{EvalReport, Protocol};
pub use features::FeatureMap;
pub use model::Model;
pub use training::{TrainConfig, TrainError};

/// Any error raised by the library.
#[derive(Debug, Error)]
pub enum Error {
    #[error(transparent)]
    Tree(#[from] tree::TreeError),
    #[error(transparent)]
    Corpus(#[from] corpus::CorpusError),
    #[error(transparent)]
    Embedding(#[from] embeddings::EmbeddingError),
    #[error(transparent)]
    Composition(#[from] composition::CompositionError),
    #[error(transparent)]
    Classifier(#[from] classifier::ClassifierError),
    #[error(transparent)]
    Features(#[from] features::FeatureError),
    #[error(transparent)]
    Train(#[from] TrainError),
    #[error(transparent)]
    Model(#[from] model::ModelError),
    #[error(transparent)]
    Eval(#[from] eval::EvalError),
}
