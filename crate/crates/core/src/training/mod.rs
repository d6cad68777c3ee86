//! Large-margin training of the classifier and composition parameters.

pub mod objective;
pub mod optim;
pub mod params;
pub mod train;

use thiserror::Error;

use crate::classifier::{ClassifierError, ModelMode, ParamGroup};
use crate::composition::CompositionError;
use crate::eval::EvalError;
use crate::features::FeatureError;

pub use objective::{
    backward, finite_diff_grad, forward, hinge, instance_loss, loss_and_gradient, max_relative_error, Example, Forward,
    KINK_MARGIN,
};
pub use optim::{adagrad_step, clip_gradients, OptimizerState};
pub use params::{init_bound, init_params, init_params_for, GroupHyper, Gradients, ModelParams, PerGroup};
pub use train::{
    grid_search, resample_balanced, train, train_dev_split, EpochLog, GridObjective, GridResult, GridRow, Grids,
    TrainConfig, TrainSet, Trainer,
};

#[derive(Debug, Error)]
pub enum TrainError {
    #[error("dataset is empty")]
    EmptyDataset,
    #[error("mode {0} needs a non-empty feature map")]
    ModeFeatureMapMissing(ModelMode),
    #[error("forward states missing for backward pass")]
    StateMissing,
    #[error("hinge argument within {0:e} of its kink")]
    KinkProximity(f64),
    #[error("non-finite gradient in group {0:?}")]
    NonFiniteGradient(ParamGroup),
    #[error("parameter, gradient or accumulator shapes differ")]
    ShapeMismatch,
    #[error("one side of the binary split is empty")]
    OneClassEmpty,
    #[error("embedding dimension {found} differs from K = {k}")]
    EmbeddingDim { k: usize, found: usize },
    #[error("grid search needs at least one candidate")]
    EmptyGrid,
    #[error("no embeddings supplied for K = {0}")]
    MissingEmbeddings(usize),
    #[error(transparent)]
    Composition(#[from] CompositionError),
    #[error(transparent)]
    Classifier(#[from] ClassifierError),
    #[error(transparent)]
    Features(#[from] FeatureError),
    #[error(transparent)]
    Eval(#[from] Box<EvalError>),
}

impl From<EvalError> for TrainError {
    fn from(e: EvalError) -> Self {
        TrainError::Eval(Box::new(e))
    }
}
