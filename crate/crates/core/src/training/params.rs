use ndarray::Array1;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Uniform};
use serde::{Deserialize, Serialize};

use crate::classifier::{ClassifierParams, ModelMode, ParamGroup, ParamKind};
use crate::composition::CompositionParams;

/// All trainable parameters. Word embeddings are not among them.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelParams {
    pub composition: CompositionParams,
    pub classifier: ClassifierParams,
}

impl ModelParams {
    pub fn zeros(k: usize, labels: usize, features: usize) -> Self {
        ModelParams {
            composition: CompositionParams::zeros(k),
            classifier: ClassifierParams::zeros(labels, k, features),
        }
    }

    pub fn k(&self) -> usize {
        self.composition.k()
    }

    /// Same shapes, all zero.
    pub fn zeros_like(&self) -> Self {
        let mut z = self.clone();
        for (_, v) in z.tensors_mut() {
            v.fill(0.0);
        }
        z
    }

    /// Every tensor as a flat slice, in a fixed order: U, D, the root factors
    /// per label (a1, a2, a3), the full root matrices if present, the entity
    /// factors per label, beta, biases.
    pub fn tensors(&self) -> Vec<(ParamKind, &[f64])> {
        let c = &self.classifier;
        let mut out: Vec<(ParamKind, &[f64])> = vec![
            (ParamKind::Upward, self.composition.up.as_slice().unwrap()),
            (ParamKind::Downward, self.composition.down.as_slice().unwrap()),
        ];
        for f in &c.root {
            for v in [&f.a1, &f.a2, &f.a3] {
                out.push((ParamKind::RootBilinear, v.as_slice().unwrap()));
            }
        }
        for w in &c.root_full {
            out.push((ParamKind::RootMatrix, w.as_slice().unwrap()));
        }
        for f in &c.entity {
            for v in [&f.a1, &f.a2, &f.a3] {
                out.push((ParamKind::EntityBilinear, v.as_slice().unwrap()));
            }
        }
        out.push((ParamKind::FeatureWeights, c.beta.as_slice().unwrap()));
        out.push((ParamKind::Bias, c.bias.as_slice().unwrap()));
        out
    }

    pub fn tensors_mut(&mut self) -> Vec<(ParamKind, &mut [f64])> {
        let c = &mut self.classifier;
        let mut out: Vec<(ParamKind, &mut [f64])> = vec![
            (ParamKind::Upward, self.composition.up.as_slice_mut().unwrap()),
            (ParamKind::Downward, self.composition.down.as_slice_mut().unwrap()),
        ];
        for f in c.root.iter_mut() {
            for v in [&mut f.a1, &mut f.a2, &mut f.a3] {
                out.push((ParamKind::RootBilinear, v.as_slice_mut().unwrap()));
            }
        }
        for w in c.root_full.iter_mut() {
            out.push((ParamKind::RootMatrix, w.as_slice_mut().unwrap()));
        }
        for f in c.entity.iter_mut() {
            for v in [&mut f.a1, &mut f.a2, &mut f.a3] {
                out.push((ParamKind::EntityBilinear, v.as_slice_mut().unwrap()));
            }
        }
        out.push((ParamKind::FeatureWeights, c.beta.as_slice_mut().unwrap()));
        out.push((ParamKind::Bias, c.bias.as_slice_mut().unwrap()));
        out
    }

    /// True if both parameter sets have identical tensor shapes.
    pub fn same_shape(&self, other: &ModelParams) -> bool {
        let a = self.tensors();
        let b = other.tensors();
        a.len() == b.len() && a.iter().zip(&b).all(|((ka, sa), (kb, sb))| ka == kb && sa.len() == sb.len())
    }

    /// `(lambda / 2) ||theta_g||^2` summed over the groups active in `mode`.
    pub fn regularizer(&self, mode: ModelMode, hyper: &PerGroup<GroupHyper>) -> f64 {
        let mut total = 0.0;
        for (kind, values) in self.tensors() {
            if !mode.is_active(kind) {
                continue;
            }
            let lambda = hyper.get(kind.group()).lambda;
            if lambda != 0.0 {
                total += 0.5 * lambda * values.iter().map(|v| v * v).sum::<f64>();
            }
        }
        total
    }
}

/// Regularizer strength and initial learning rate of one group.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GroupHyper {
    pub lambda: f64,
    pub eta: f64,
}

impl Default for GroupHyper {
    fn default() -> Self {
        GroupHyper { lambda: 0.0002, eta: 0.05 }
    }
}

/// One value per parameter group.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PerGroup<T: Default + Copy> {
    pub upward: T,
    pub downward: T,
    pub features: T,
    pub classification: T,
}

impl<T: Default + Copy> Default for PerGroup<T> {
    fn default() -> Self {
        PerGroup::uniform(T::default())
    }
}

impl<T: Default + Copy> PerGroup<T> {
    pub fn uniform(value: T) -> Self {
        PerGroup {
            upward: value,
            downward: value,
            features: value,
            classification: value,
        }
    }

    pub fn get(&self, group: ParamGroup) -> T {
        match group {
            ParamGroup::Upward => self.upward,
            ParamGroup::Downward => self.downward,
            ParamGroup::Features => self.features,
            ParamGroup::Classification => self.classification,
        }
    }
}

/// Gradient of the objective, shaped like [`ModelParams`]. Tensors inactive
/// under `mode` are not part of the gradient and are skipped by
/// [`active_tensors`](Self::active_tensors).
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients {
    pub values: ModelParams,
    pub mode: ModelMode,
}

impl Gradients {
    pub fn zeros_like(params: &ModelParams, mode: ModelMode) -> Self {
        Gradients {
            values: params.zeros_like(),
            mode,
        }
    }

    pub fn active_tensors(&self) -> Vec<(ParamKind, &[f64])> {
        self.values.tensors().into_iter().filter(|(k, _)| self.mode.is_active(*k)).collect()
    }

    /// Flattened view of one group's active entries.
    pub fn group_values(&self, group: ParamGroup) -> Vec<f64> {
        self.active_tensors()
            .into_iter()
            .filter(|(k, _)| k.group() == group)
            .flat_map(|(_, v)| v.iter().copied())
            .collect()
    }

    pub fn group_norm(&self, group: ParamGroup) -> f64 {
        let mut ss = 0.0;
        for (kind, values) in self.active_tensors() {
            if kind.group() == group {
                for v in values {
                    ss += v * v;
                }
            }
        }
        ss.sqrt()
    }

    pub fn max_abs(&self) -> f64 {
        self.active_tensors()
            .iter()
            .flat_map(|(_, v)| v.iter())
            .fold(0.0, |m, v| m.max(v.abs()))
    }
}

/// Half-width of the uniform initialization range for the composition
/// matrices: `sqrt(6 / 2K)`.
pub fn init_bound(k: usize) -> f64 {
    (6.0 / (2.0 * k as f64)).sqrt()
}

/// Classification parameters start at zero; `U` and `D` are drawn i.i.d.
/// from `U[-sqrt(6/2K), sqrt(6/2K)]` with a seeded generator (U first).
pub fn init_params(k: usize, labels: usize, features: usize, seed: u64) -> ModelParams {
    let mut params = ModelParams::zeros(k, labels, features);
    let bound = init_bound(k);
    let dist = Uniform::new_inclusive(-bound, bound).expect("finite bound");
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    params.composition.up.mapv_inplace(|_| dist.sample(&mut rng));
    params.composition.down.mapv_inplace(|_| dist.sample(&mut rng));
    params
}

/// [`init_params`] plus whatever extra tensors `mode` scores with.
pub fn init_params_for(mode: ModelMode, k: usize, labels: usize, features: usize, seed: u64) -> ModelParams {
    let mut params = init_params(k, labels, features, seed);
    if mode.full_rank_root() {
        params.classifier = params.classifier.with_root_matrices();
    }
    params
}

/// Convenience for tests and diagnostics.
pub fn flatten(values: &[(ParamKind, &[f64])]) -> Array1<f64> {
    values.iter().flat_map(|(_, v)| v.iter().copied()).collect()
}
