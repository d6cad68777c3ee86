use std::path::Path;

use ndarray::Array1;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::classifier::{predict, ModelMode};
use crate::corpus::{Dataset, Instance};
use crate::embeddings::WordEmbeddings;
use crate::features::FeatureMap;
use crate::training::objective::forward;
use crate::training::{ModelParams, TrainConfig, TrainError};

#[derive(Debug, Error)]
pub enum ModelError {
    #[error("model file: {0}")]
    Json(#[from] serde_json::Error),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error("embedding dimension {found} does not match model K = {expected}")]
    EmbeddingDim { expected: usize, found: usize },
    #[error(transparent)]
    Forward(#[from] TrainError),
}

/// A trained classifier: label order, optional feature map and parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Model {
    pub mode: ModelMode,
    pub labels: Vec<String>,
    pub feature_map: Option<FeatureMap>,
    pub params: ModelParams,
    pub config: Option<TrainConfig>,
}

impl Model {
    pub fn k(&self) -> usize {
        self.params.k()
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("model serializes")
    }

    pub fn from_json(text: &str) -> Result<Self, ModelError> {
        let mut m: Model = serde_json::from_str(text)?;
        m.feature_map = m.feature_map.map(FeatureMap::reindexed);
        Ok(m)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<(), ModelError> {
        std::fs::write(path, self.to_json())?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, ModelError> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }

    fn check_embeddings(&self, emb: &WordEmbeddings) -> Result<(), ModelError> {
        let needs = self.mode != ModelMode::SurfaceOnly;
        if needs && emb.dim() != self.k() {
            return Err(ModelError::EmbeddingDim {
                expected: self.k(),
                found: emb.dim(),
            });
        }
        Ok(())
    }

    pub fn features(&self, inst: &Instance) -> Array1<f64> {
        match &self.feature_map {
            Some(map) if self.mode.uses_features() => map.vectorize(inst),
            _ => Array1::zeros(0),
        }
    }

    pub fn scores(&self, inst: &Instance, emb: &WordEmbeddings) -> Result<Vec<f64>, ModelError> {
        self.check_embeddings(emb)?;
        let f = self.features(inst);
        Ok(forward(inst, f.view(), emb, &self.params, self.mode)?.scores)
    }

    pub fn predict(&self, inst: &Instance, emb: &WordEmbeddings) -> Result<usize, ModelError> {
        Ok(predict(&self.scores(inst, emb)?))
    }

    /// Predicted label index per instance, in dataset order.
    pub fn predict_all(&self, instances: &[Instance], emb: &WordEmbeddings) -> Result<Vec<usize>, ModelError> {
        instances.par_iter().map(|i| self.predict(i, emb)).collect()
    }

    pub fn predict_labels(&self, ds: &Dataset, emb: &WordEmbeddings) -> Result<Vec<&str>, ModelError> {
        Ok(self
            .predict_all(&ds.instances, emb)?
            .into_iter()
            .map(|y| self.labels[y].as_str())
            .collect())
    }
}
