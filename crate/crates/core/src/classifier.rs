//! Relation scoring.
//!
//! For each label `y`:
//!
//! ```text
//! psi(y) = u_m' A_y u_n + sum_{(i,j) in A(m,n)} d_i' B_y d_j + beta_y' f + b_y
//! ```
//!
//! with `A_y` and `B_y` held in the low-rank form `a1 a2' + diag(a3)`. The
//! forms are evaluated from their factors in O(K); the dense matrix is only
//! built by [`LowRankBilinear::materialize`].

use std::fmt;
use std::str::FromStr;

use ndarray::{Array1, Array2, ArrayView1};
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum ClassifierError {
    #[error("dimension mismatch in {what}: expected {expected}, found {found}")]
    DimensionMismatch {
        what: &'static str,
        expected: usize,
        found: usize,
    },
    #[error("mode {0} needs parameters the model does not have")]
    ModeParamMissing(ModelMode),
}

/// Which terms of the decision function are active.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ModelMode {
    /// Surface features and bias only.
    SurfaceOnly,
    /// Root term over summed word vectors.
    Additive,
    /// As `Additive`, with one unconstrained `K x K` root matrix per label.
    AdditiveFullRank,
    /// Root term over upward composition.
    Upward,
    UpwardFeatures,
    /// Root and entity terms.
    UpwardDownward,
    /// Root, entity and feature terms.
    Full,
}

impl ModelMode {
    pub const ALL: [ModelMode; 7] = [
        ModelMode::SurfaceOnly,
        ModelMode::Additive,
        ModelMode::AdditiveFullRank,
        ModelMode::Upward,
        ModelMode::UpwardFeatures,
        ModelMode::UpwardDownward,
        ModelMode::Full,
    ];

    pub fn uses_features(self) -> bool {
        matches!(self, ModelMode::SurfaceOnly | ModelMode::UpwardFeatures | ModelMode::Full)
    }

    pub fn uses_root(self) -> bool {
        self != ModelMode::SurfaceOnly
    }

    pub fn uses_composition(self) -> bool {
        !matches!(self, ModelMode::SurfaceOnly | ModelMode::Additive | ModelMode::AdditiveFullRank)
    }

    /// Root term uses [`ClassifierParams::root_full`] instead of the factors.
    pub fn full_rank_root(self) -> bool {
        self == ModelMode::AdditiveFullRank
    }

    pub fn uses_entities(self) -> bool {
        matches!(self, ModelMode::UpwardDownward | ModelMode::Full)
    }

    pub fn is_active(self, kind: ParamKind) -> bool {
        match kind {
            ParamKind::Upward => self.uses_composition(),
            ParamKind::Downward | ParamKind::EntityBilinear => self.uses_entities(),
            ParamKind::RootBilinear => self.uses_root() && !self.full_rank_root(),
            ParamKind::RootMatrix => self.full_rank_root(),
            ParamKind::FeatureWeights => self.uses_features(),
            ParamKind::Bias => true,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            ModelMode::SurfaceOnly => "surface-only",
            ModelMode::Additive => "additive",
            ModelMode::AdditiveFullRank => "additive-full-rank",
            ModelMode::Upward => "upward",
            ModelMode::UpwardFeatures => "upward-features",
            ModelMode::UpwardDownward => "upward-downward",
            ModelMode::Full => "full",
        }
    }
}

impl fmt::Display for ModelMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for ModelMode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        ModelMode::ALL
            .into_iter()
            .find(|m| m.name() == s)
            .ok_or_else(|| format!("unknown mode {s:?}"))
    }
}

/// Parameter tensors, each belonging to one hyperparameter group.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum ParamKind {
    Upward,
    Downward,
    RootBilinear,
    RootMatrix,
    EntityBilinear,
    FeatureWeights,
    Bias,
}

/// Groups that carry their own regularizer and learning rate.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ParamGroup {
    Upward,
    Downward,
    Features,
    Classification,
}

impl ParamGroup {
    pub const ALL: [ParamGroup; 4] = [
        ParamGroup::Upward,
        ParamGroup::Downward,
        ParamGroup::Features,
        ParamGroup::Classification,
    ];
}

impl ParamKind {
    pub fn group(self) -> ParamGroup {
        match self {
            ParamKind::Upward => ParamGroup::Upward,
            ParamKind::Downward => ParamGroup::Downward,
            ParamKind::FeatureWeights => ParamGroup::Features,
            ParamKind::RootBilinear | ParamKind::RootMatrix | ParamKind::EntityBilinear | ParamKind::Bias => {
                ParamGroup::Classification
            }
        }
    }
}

/// `a1 a2' + diag(a3)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LowRankBilinear {
    pub a1: Array1<f64>,
    pub a2: Array1<f64>,
    pub a3: Array1<f64>,
}

impl LowRankBilinear {
    pub fn zeros(k: usize) -> Self {
        LowRankBilinear {
            a1: Array1::zeros(k),
            a2: Array1::zeros(k),
            a3: Array1::zeros(k),
        }
    }

    pub fn k(&self) -> usize {
        self.a1.len()
    }

    /// `x' M z` without forming `M`.
    pub fn eval(&self, x: ArrayView1<f64>, z: ArrayView1<f64>) -> f64 {
        let mut diag = 0.0;
        for k in 0..self.a3.len() {
            diag += self.a3[k] * x[k] * z[k];
        }
        self.a1.dot(&x) * self.a2.dot(&z) + diag
    }

    pub fn materialize(&self) -> Array2<f64> {
        let k = self.k();
        let mut m = Array2::from_shape_fn((k, k), |(i, j)| self.a1[i] * self.a2[j]);
        for i in 0..k {
            m[[i, i]] += self.a3[i];
        }
        m
    }

    /// Accumulate `scale * d(x' M z)` into the factor gradients and the two
    /// input adjoints.
    pub(crate) fn backward(
        &self,
        x: ArrayView1<f64>,
        z: ArrayView1<f64>,
        scale: f64,
        grad: &mut LowRankBilinear,
        gx: &mut [f64],
        gz: &mut [f64],
    ) {
        let p = self.a1.dot(&x);
        let q = self.a2.dot(&z);
        for k in 0..self.k() {
            grad.a1[k] += scale * q * x[k];
            grad.a2[k] += scale * p * z[k];
            grad.a3[k] += scale * x[k] * z[k];
            gx[k] += scale * (self.a1[k] * q + self.a3[k] * z[k]);
            gz[k] += scale * (self.a2[k] * p + self.a3[k] * x[k]);
        }
    }
}

/// Per-label classification parameters; label order follows the dataset.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassifierParams {
    pub root: Vec<LowRankBilinear>,
    /// Full `K x K` root matrices, present only for
    /// [`ModelMode::AdditiveFullRank`].
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub root_full: Vec<Array2<f64>>,
    pub entity: Vec<LowRankBilinear>,
    /// `|Y| x F` surface-feature weights.
    pub beta: Array2<f64>,
    pub bias: Array1<f64>,
}

impl ClassifierParams {
    pub fn zeros(labels: usize, k: usize, features: usize) -> Self {
        ClassifierParams {
            root: (0..labels).map(|_| LowRankBilinear::zeros(k)).collect(),
            root_full: Vec::new(),
            entity: (0..labels).map(|_| LowRankBilinear::zeros(k)).collect(),
            beta: Array2::zeros((labels, features)),
            bias: Array1::zeros(labels),
        }
    }

    /// Add zero root matrices, one per label.
    pub fn with_root_matrices(mut self) -> Self {
        let k = self.k();
        self.root_full = (0..self.labels()).map(|_| Array2::zeros((k, k))).collect();
        self
    }

    pub fn labels(&self) -> usize {
        self.bias.len()
    }

    pub fn k(&self) -> usize {
        self.root.first().map_or(0, LowRankBilinear::k)
    }

    pub fn feature_dim(&self) -> usize {
        self.beta.ncols()
    }

    /// Number of parameters in the two bilinear families.
    pub fn bilinear_param_count(&self) -> usize {
        self.root
            .iter()
            .chain(&self.entity)
            .map(|f| f.a1.len() + f.a2.len() + f.a3.len())
            .sum()
    }
}

/// Inputs to the decision function for one argument pair.
pub struct ScoreInputs<'a> {
    pub u_m: ArrayView1<'a, f64>,
    pub u_n: ArrayView1<'a, f64>,
    /// Downward states of the aligned mention nodes.
    pub pairs: &'a [(ArrayView1<'a, f64>, ArrayView1<'a, f64>)],
    pub features: ArrayView1<'a, f64>,
}

/// Score every label. Terms inactive under `mode` are skipped, so their
/// inputs may be empty.
pub fn score(inputs: &ScoreInputs<'_>, params: &ClassifierParams, mode: ModelMode) -> Result<Vec<f64>, ClassifierError> {
    check_inputs(inputs, params, mode)?;
    Ok((0..params.labels())
        .map(|y| {
            let mut s = 0.0;
            if mode.full_rank_root() {
                s = inputs.u_m.dot(&params.root_full[y].dot(&inputs.u_n));
            } else if mode.uses_root() {
                s = params.root[y].eval(inputs.u_m, inputs.u_n);
            }
            if mode.uses_entities() {
                for (dm, dn) in inputs.pairs {
                    s += params.entity[y].eval(dm.view(), dn.view());
                }
            }
            if mode.uses_features() {
                s += params.beta.row(y).dot(&inputs.features);
            }
            s + params.bias[y]
        })
        .collect())
}

fn check_inputs(inputs: &ScoreInputs<'_>, params: &ClassifierParams, mode: ModelMode) -> Result<(), ClassifierError> {
    let k = params.k();
    let mismatch = |what, expected, found| ClassifierError::DimensionMismatch { what, expected, found };
    if mode.uses_root() {
        if inputs.u_m.len() != k {
            return Err(mismatch("root vector m", k, inputs.u_m.len()));
        }
        if inputs.u_n.len() != k {
            return Err(mismatch("root vector n", k, inputs.u_n.len()));
        }
    }
    if mode.full_rank_root() && params.root_full.len() != params.labels() {
        return Err(ClassifierError::ModeParamMissing(mode));
    }
    if mode.uses_entities() {
        for (dm, dn) in inputs.pairs {
            if dm.len() != k || dn.len() != k {
                return Err(mismatch("entity vector", k, dm.len().max(dn.len())));
            }
        }
    }
    if mode.uses_features() {
        if params.feature_dim() == 0 {
            return Err(ClassifierError::ModeParamMissing(mode));
        }
        if inputs.features.len() != params.feature_dim() {
            return Err(mismatch("feature vector", params.feature_dim(), inputs.features.len()));
        }
    }
    Ok(())
}

/// Index of the highest score; ties go to the earliest label.
pub fn predict(scores: &[f64]) -> usize {
    let mut best = 0;
    for (i, &s) in scores.iter().enumerate().skip(1) {
        if s > scores[best] {
            best = i;
        }
    }
    best
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ParamCounts {
    /// Both bilinear families in low-rank form: `2 |Y| 3K`.
    pub low_rank_bilinear: usize,
    /// Both bilinear families as dense matrices: `2 |Y| K^2`.
    pub full_rank_bilinear: usize,
    pub features: usize,
    pub biases: usize,
}

pub fn param_count(labels: usize, k: usize, features: usize) -> ParamCounts {
    ParamCounts {
        low_rank_bilinear: 2 * labels * 3 * k,
        full_rank_bilinear: 2 * labels * k * k,
        features: labels * features,
        biases: labels,
    }
}
