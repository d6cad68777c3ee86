use std::collections::BTreeMap;
use std::fmt;

use ndarray::Array2;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::objective::{forward, loss_and_gradient, Example};
use super::optim::{adagrad_step, clip_gradients, OptimizerState};
use super::params::{init_params_for, GroupHyper, ModelParams, PerGroup};
use super::TrainError;
use crate::classifier::{predict, ModelMode};
use crate::corpus::Dataset;
use crate::embeddings::WordEmbeddings;
use crate::eval::{eval_binary, eval_multiclass};
use crate::features::{Budgets, FeatureMap};
use crate::model::Model;

/// Everything that controls a training run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub k: usize,
    pub hyper: PerGroup<GroupHyper>,
    pub clip: f64,
    pub epochs: usize,
    pub seed: u64,
    pub mode: ModelMode,
    pub adagrad_eps: f64,
    pub dev_fraction: f64,
    /// Surface-only epochs over `beta` and `b` before joint training.
    pub pretrain_feature_epochs: usize,
    pub budgets: Budgets,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            k: 20,
            hyper: PerGroup::default(),
            clip: 5.0,
            epochs: 10,
            seed: 1,
            mode: ModelMode::Full,
            adagrad_eps: 1e-8,
            dev_fraction: 0.2,
            pretrain_feature_epochs: 0,
            budgets: Budgets::default(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EpochLog {
    pub epoch: usize,
    pub mean_objective: f64,
    pub train_acc: f64,
}

impl fmt::Display for EpochLog {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}\t{:.6}\t{:.4}", self.epoch, self.mean_objective, self.train_acc)
    }
}

/// A dataset together with its embeddings and precomputed feature rows.
pub struct TrainSet<'a> {
    pub dataset: &'a Dataset,
    pub emb: &'a WordEmbeddings,
    pub feature_map: Option<&'a FeatureMap>,
    features: Array2<f64>,
}

impl<'a> TrainSet<'a> {
    pub fn new(dataset: &'a Dataset, emb: &'a WordEmbeddings, feature_map: Option<&'a FeatureMap>) -> Self {
        let f = feature_map.map_or(0, FeatureMap::len);
        let mut features = Array2::zeros((dataset.len(), f));
        if let Some(map) = feature_map {
            let rows: Vec<_> = dataset.instances.par_iter().map(|i| map.vectorize(i)).collect();
            for (i, row) in rows.into_iter().enumerate() {
                features.row_mut(i).assign(&row);
            }
        }
        TrainSet {
            dataset,
            emb,
            feature_map,
            features,
        }
    }

    pub fn example(&self, i: usize, gold: usize) -> Example<'_> {
        Example {
            inst: &self.dataset.instances[i],
            features: self.features.row(i),
            gold,
        }
    }
}

/// Sequential SGD over a [`TrainSet`]. One [`step`](Self::step) is one
/// backward, clip and AdaGrad update.
pub struct Trainer<'a> {
    data: TrainSet<'a>,
    config: TrainConfig,
    params: ModelParams,
    state: OptimizerState,
    rng: ChaCha8Rng,
    pairs: Vec<(usize, usize)>,
    epoch: usize,
}

impl<'a> Trainer<'a> {
    pub fn new(data: TrainSet<'a>, config: TrainConfig) -> Result<Self, TrainError> {
        if data.dataset.is_empty() {
            return Err(TrainError::EmptyDataset);
        }
        if config.mode.uses_features() && data.feature_map.is_none_or(FeatureMap::is_empty) {
            return Err(TrainError::ModeFeatureMapMissing(config.mode));
        }
        if config.mode != ModelMode::SurfaceOnly && data.emb.dim() != config.k {
            return Err(TrainError::EmbeddingDim {
                k: config.k,
                found: data.emb.dim(),
            });
        }
        let labels = data.dataset.labels().len();
        let params = init_params_for(config.mode, config.k, labels, data.features.ncols(), config.seed);
        let state = OptimizerState::new(&params, config.adagrad_eps);
        let rng = ChaCha8Rng::seed_from_u64(config.seed.wrapping_add(0x5eed));
        let pairs = data.dataset.training_pairs();
        Ok(Trainer {
            data,
            config,
            params,
            state,
            rng,
            pairs,
            epoch: 0,
        })
    }

    pub fn params(&self) -> &ModelParams {
        &self.params
    }

    pub fn optimizer(&self) -> &OptimizerState {
        &self.state
    }

    pub fn config(&self) -> &TrainConfig {
        &self.config
    }

    /// One update on training pair `(i, gold)` under `mode`. Returns the
    /// objective before the update.
    pub fn step_with(&mut self, i: usize, gold: usize, mode: ModelMode) -> Result<f64, TrainError> {
        let ex = self.data.example(i, gold);
        let (loss, mut grads) = loss_and_gradient(ex, self.data.emb, &self.params, mode, &self.config.hyper)?;
        clip_gradients(&mut grads, self.config.clip)?;
        adagrad_step(&mut self.params, &grads, &mut self.state, &self.config.hyper)?;
        Ok(loss)
    }

    pub fn step(&mut self, i: usize, gold: usize) -> Result<f64, TrainError> {
        self.step_with(i, gold, self.config.mode)
    }

    fn pass(&mut self, mode: ModelMode) -> Result<f64, TrainError> {
        let mut order = self.pairs.clone();
        order.shuffle(&mut self.rng);
        let mut total = 0.0;
        for (i, gold) in order {
            total += self.step_with(i, gold, mode)?;
        }
        Ok(total / self.pairs.len() as f64)
    }

    /// Surface-only epochs over the feature weights and biases.
    pub fn pretrain_features(&mut self) -> Result<(), TrainError> {
        if !self.config.mode.uses_features() {
            return Ok(());
        }
        for _ in 0..self.config.pretrain_feature_epochs {
            self.pass(ModelMode::SurfaceOnly)?;
        }
        Ok(())
    }

    /// One shuffled pass over the training view, then training accuracy.
    pub fn run_epoch(&mut self) -> Result<EpochLog, TrainError> {
        let mean_objective = self.pass(self.config.mode)?;
        self.epoch += 1;
        Ok(EpochLog {
            epoch: self.epoch,
            mean_objective,
            train_acc: self.accuracy()?,
        })
    }

    /// Predicted label per instance under the current parameters.
    pub fn predictions(&self) -> Result<Vec<usize>, TrainError> {
        let data = &self.data;
        (0..data.dataset.len())
            .into_par_iter()
            .map(|i| {
                let ex = data.example(i, 0);
                let fwd = forward(ex.inst, ex.features, data.emb, &self.params, self.config.mode)?;
                Ok(predict(&fwd.scores))
            })
            .collect()
    }

    /// Fraction of instances whose prediction is one of their gold labels.
    pub fn accuracy(&self) -> Result<f64, TrainError> {
        let preds = self.predictions()?;
        let ds = self.data.dataset;
        let hits = preds.iter().enumerate().filter(|(i, p)| ds.gold(*i).contains(p)).count();
        Ok(hits as f64 / ds.len() as f64)
    }

    pub fn into_model(self) -> Model {
        Model {
            mode: self.config.mode,
            labels: self.data.dataset.labels().to_vec(),
            feature_map: self.data.feature_map.filter(|_| self.config.mode.uses_features()).cloned(),
            params: self.params,
            config: Some(self.config),
        }
    }
}

/// Full training run: optional feature pretraining, then `config.epochs`
/// epochs of joint training.
pub fn train(
    dataset: &Dataset,
    emb: &WordEmbeddings,
    feature_map: Option<&FeatureMap>,
    config: &TrainConfig,
) -> Result<(Model, Vec<EpochLog>), TrainError> {
    let mut trainer = Trainer::new(TrainSet::new(dataset, emb, feature_map), config.clone())?;
    trainer.pretrain_features()?;
    let mut log = Vec::with_capacity(config.epochs);
    for _ in 0..config.epochs {
        log.push(trainer.run_epoch()?);
    }
    Ok((trainer.into_model(), log))
}

/// Oversample the minority side of a positive-vs-rest split until both sides
/// have the same size. Copies are drawn with replacement and appended.
pub fn resample_balanced(ds: &Dataset, positive: &str, seed: u64) -> Result<Dataset, TrainError> {
    let (pos, neg): (Vec<usize>, Vec<usize>) =
        (0..ds.len()).partition(|&i| ds.instances[i].labels.iter().any(|l| l == positive));
    if pos.is_empty() || neg.is_empty() {
        return Err(TrainError::OneClassEmpty);
    }
    let (minority, deficit) = if pos.len() < neg.len() {
        (&pos, neg.len() - pos.len())
    } else {
        (&neg, pos.len() - neg.len())
    };
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut indices: Vec<usize> = (0..ds.len()).collect();
    indices.extend((0..deficit).map(|_| minority[rng.random_range(0..minority.len())]));
    Ok(ds.subset(&indices))
}

/// Seeded split into `(train, dev)` index lists; the dev side holds
/// `round(fraction * n)` instances. Both lists are sorted.
pub fn train_dev_split(n: usize, fraction: f64, seed: u64) -> (Vec<usize>, Vec<usize>) {
    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let n_dev = ((fraction * n as f64).round() as usize).min(n);
    let mut dev = idx[..n_dev].to_vec();
    let mut train = idx[n_dev..].to_vec();
    dev.sort_unstable();
    train.sort_unstable();
    (train, dev)
}

/// Candidate values for grid search. One `(lambda, eta)` pair is shared by
/// all four parameter groups.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Grids {
    pub k: Vec<usize>,
    pub lambda: Vec<f64>,
    pub eta: Vec<f64>,
}

impl Default for Grids {
    fn default() -> Self {
        Grids {
            k: vec![20, 30, 40, 50, 60],
            lambda: vec![0.0002, 0.002, 0.02, 0.2],
            eta: vec![0.01, 0.03, 0.05, 0.09],
        }
    }
}

impl Grids {
    /// Every combination, K outermost and eta innermost.
    pub fn candidates(&self) -> Vec<(usize, f64, f64)> {
        let mut out = Vec::new();
        for &k in &self.k {
            for &l in &self.lambda {
                for &e in &self.eta {
                    out.push((k, l, e));
                }
            }
        }
        out
    }

    pub fn len(&self) -> usize {
        self.k.len() * self.lambda.len() * self.eta.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum GridObjective {
    Accuracy,
    F1 { positive: String },
}

#[derive(Debug, Clone, PartialEq)]
pub struct GridRow {
    pub k: usize,
    pub lambda: f64,
    pub eta: f64,
    pub score: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GridResult {
    pub rows: Vec<GridRow>,
    pub best: usize,
    pub best_config: TrainConfig,
}

impl GridResult {
    /// Tab-separated score table with a header line.
    pub fn table(&self) -> String {
        let mut s = String::from("k\tlambda\teta\tscore\n");
        for r in &self.rows {
            s.push_str(&format!("{}\t{}\t{}\t{:.6}\n", r.k, r.lambda, r.eta, r.score));
        }
        s
    }
}

/// Train one candidate per grid point on a seeded training split and score
/// it on the held-out dev split. Candidates run in parallel; the best score
/// wins and ties go to the earliest candidate.
pub fn grid_search(
    dataset: &Dataset,
    embeddings: &BTreeMap<usize, WordEmbeddings>,
    base: &TrainConfig,
    grids: &Grids,
    objective: &GridObjective,
) -> Result<GridResult, TrainError> {
    if grids.is_empty() {
        return Err(TrainError::EmptyGrid);
    }
    for k in &grids.k {
        if !embeddings.contains_key(k) {
            return Err(TrainError::MissingEmbeddings(*k));
        }
    }
    let (train_idx, dev_idx) = train_dev_split(dataset.len(), base.dev_fraction, base.seed);
    let train_ds = dataset.subset(&train_idx);
    let dev_ds = dataset.subset(&dev_idx);
    let feature_map = if base.mode.uses_features() {
        Some(FeatureMap::select(&train_ds, base.budgets)?)
    } else {
        None
    };

    let scores: Vec<f64> = grids
        .candidates()
        .into_par_iter()
        .map(|(k, lambda, eta)| {
            let cfg = candidate_config(base, k, lambda, eta);
            let emb = &embeddings[&k];
            let (model, _) = train(&train_ds, emb, feature_map.as_ref(), &cfg)?;
            let score = match objective {
                GridObjective::Accuracy => eval_multiclass(&model, &dev_ds, emb)?.accuracy,
                GridObjective::F1 { positive } => eval_binary(&model, &dev_ds, emb, positive)?
                    .binary
                    .map_or(0.0, |b| b.f1),
            };
            Ok(score)
        })
        .collect::<Result<_, TrainError>>()?;

    let rows: Vec<GridRow> = grids
        .candidates()
        .into_iter()
        .zip(scores)
        .map(|((k, lambda, eta), score)| GridRow { k, lambda, eta, score })
        .collect();
    let mut best = 0;
    for (i, r) in rows.iter().enumerate() {
        if r.score > rows[best].score {
            best = i;
        }
    }
    let b = &rows[best];
    Ok(GridResult {
        best_config: candidate_config(base, b.k, b.lambda, b.eta),
        rows,
        best,
    })
}

fn candidate_config(base: &TrainConfig, k: usize, lambda: f64, eta: f64) -> TrainConfig {
    TrainConfig {
        k,
        hyper: PerGroup::uniform(GroupHyper { lambda, eta }),
        ..base.clone()
    }
}
