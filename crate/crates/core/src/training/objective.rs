//! Per-instance objective and its gradient.
//!
//! The loss for gold label `y*` is
//!
//! ```text
//! sum_{y' != y*} max(0, 1 - psi(y*) + psi(y')) + sum_g (lambda_g / 2) ||theta_g||^2
//! ```
//!
//! The half factor on the regularizer makes its gradient exactly
//! `lambda * theta`, the term used in the update rule.
//!
//! Gradients are computed in reverse mode over the recorded forward states:
//! label-score adjoints flow into the bilinear factors and the root and
//! mention vectors, then back through the downward states and the upward
//! states of each tree.

use ndarray::{Array1, ArrayView1};

use super::params::{GroupHyper, Gradients, ModelParams, PerGroup};
use super::TrainError;
use crate::classifier::{score, ModelMode, ScoreInputs};
use crate::composition::{additive_representation, backprop_tree, downward_pass, upward_pass, NodeStates, TreeAdjoints};
use crate::corpus::Instance;
use crate::embeddings::WordEmbeddings;

/// Cached forward computation for one instance.
#[derive(Debug, Clone)]
pub struct Forward {
    pub mode: ModelMode,
    pub states_m: Option<NodeStates>,
    pub states_n: Option<NodeStates>,
    pub root_m: Array1<f64>,
    pub root_n: Array1<f64>,
    pub scores: Vec<f64>,
}

/// Run the composition passes needed by `mode` and score every label.
/// Downward states are only computed when the instance has alignments.
pub fn forward(
    inst: &Instance,
    features: ArrayView1<f64>,
    emb: &WordEmbeddings,
    params: &ModelParams,
    mode: ModelMode,
) -> Result<Forward, TrainError> {
    let comp = &params.composition;
    let (mut states_m, mut states_n) = (None, None);
    let (root_m, root_n) = match mode {
        ModelMode::SurfaceOnly => (Array1::zeros(0), Array1::zeros(0)),
        ModelMode::Additive | ModelMode::AdditiveFullRank => (
            additive_representation(&inst.tokens_m(), emb)?,
            additive_representation(&inst.tokens_n(), emb)?,
        ),
        _ => {
            let mut sm = upward_pass(&inst.arg_m, emb, comp)?;
            let mut sn = upward_pass(&inst.arg_n, emb, comp)?;
            if mode.uses_entities() && !inst.alignment.is_empty() {
                downward_pass(&inst.arg_m, &mut sm, comp)?;
                downward_pass(&inst.arg_n, &mut sn, comp)?;
            }
            let roots = (sm.u_root().to_owned(), sn.u_root().to_owned());
            states_m = Some(sm);
            states_n = Some(sn);
            roots
        }
    };
    let pairs: Vec<(ArrayView1<f64>, ArrayView1<f64>)> = match (&states_m, &states_n) {
        (Some(sm), Some(sn)) if sm.down.is_some() => inst
            .alignment
            .iter()
            .map(|p| (sm.d(p.m_node), sn.d(p.n_node)))
            .collect(),
        _ => Vec::new(),
    };
    let scores = score(
        &ScoreInputs {
            u_m: root_m.view(),
            u_n: root_n.view(),
            pairs: &pairs,
            features,
        },
        &params.classifier,
        mode,
    )?;
    Ok(Forward {
        mode,
        states_m,
        states_n,
        root_m,
        root_n,
        scores,
    })
}

/// Multiclass hinge loss and its derivative with respect to the scores.
/// At exactly zero hinge argument the subgradient 0 is used.
pub fn hinge(scores: &[f64], gold: usize) -> (f64, Vec<f64>) {
    let mut loss = 0.0;
    let mut grad = vec![0.0; scores.len()];
    for (y, &s) in scores.iter().enumerate() {
        if y == gold {
            continue;
        }
        let v = 1.0 - scores[gold] + s;
        if v > 0.0 {
            loss += v;
            grad[y] += 1.0;
            grad[gold] -= 1.0;
        }
    }
    (loss, grad)
}

/// Smallest distance of any hinge argument from its kink at zero.
pub fn kink_distance(scores: &[f64], gold: usize) -> f64 {
    scores
        .iter()
        .enumerate()
        .filter(|(y, _)| *y != gold)
        .map(|(_, s)| (1.0 - scores[gold] + s).abs())
        .fold(f64::INFINITY, f64::min)
}

/// Everything the objective needs for one training example.
#[derive(Clone, Copy)]
pub struct Example<'a> {
    pub inst: &'a Instance,
    pub features: ArrayView1<'a, f64>,
    pub gold: usize,
}

pub fn instance_loss(
    ex: Example<'_>,
    emb: &WordEmbeddings,
    params: &ModelParams,
    mode: ModelMode,
    hyper: &PerGroup<GroupHyper>,
) -> Result<f64, TrainError> {
    let fwd = forward(ex.inst, ex.features, emb, params, mode)?;
    Ok(hinge(&fwd.scores, ex.gold).0 + params.regularizer(mode, hyper))
}

/// Exact gradient of [`instance_loss`] for every parameter active under the
/// forward pass's mode. Returns the loss alongside.
pub fn backward(
    fwd: &Forward,
    ex: Example<'_>,
    params: &ModelParams,
    hyper: &PerGroup<GroupHyper>,
) -> Result<(f64, Gradients), TrainError> {
    let mode = fwd.mode;
    if mode.uses_composition() && (fwd.states_m.is_none() || fwd.states_n.is_none()) {
        return Err(TrainError::StateMissing);
    }
    let with_downward = mode.uses_entities() && !ex.inst.alignment.is_empty();
    if with_downward && fwd.states_m.as_ref().is_some_and(|s| s.down.is_none()) {
        return Err(TrainError::StateMissing);
    }

    let (hinge_loss, dscores) = hinge(&fwd.scores, ex.gold);
    let mut grads = Gradients::zeros_like(params, mode);
    let k = params.k();
    let cls = &params.classifier;

    let mut g_root_m = vec![0.0; if mode.uses_root() { k } else { 0 }];
    let mut g_root_n = g_root_m.clone();
    let n_pairs = if with_downward { ex.inst.alignment.len() } else { 0 };
    let mut g_pair_m = vec![vec![0.0; k]; n_pairs];
    let mut g_pair_n = vec![vec![0.0; k]; n_pairs];

    for (y, &dy) in dscores.iter().enumerate() {
        if dy == 0.0 {
            continue;
        }
        if mode.full_rank_root() {
            let g = &mut grads.values.classifier.root_full[y];
            for (i, &x) in fwd.root_m.iter().enumerate() {
                g.row_mut(i).scaled_add(dy * x, &fwd.root_n);
            }
        } else if mode.uses_root() {
            cls.root[y].backward(
                fwd.root_m.view(),
                fwd.root_n.view(),
                dy,
                &mut grads.values.classifier.root[y],
                &mut g_root_m,
                &mut g_root_n,
            );
        }
        if with_downward {
            let (sm, sn) = (fwd.states_m.as_ref().unwrap(), fwd.states_n.as_ref().unwrap());
            for (p, pair) in ex.inst.alignment.iter().enumerate() {
                cls.entity[y].backward(
                    sm.d(pair.m_node),
                    sn.d(pair.n_node),
                    dy,
                    &mut grads.values.classifier.entity[y],
                    &mut g_pair_m[p],
                    &mut g_pair_n[p],
                );
            }
        }
        if mode.uses_features() {
            let mut row = grads.values.classifier.beta.row_mut(y);
            row.scaled_add(dy, &ex.features);
        }
        grads.values.classifier.bias[y] += dy;
    }

    if mode.uses_composition() {
        let comp = &params.composition;
        let (gu, gd) = {
            let c = &mut grads.values.composition;
            (&mut c.up, &mut c.down)
        };
        for (tree, states, g_root, g_pairs, m_side) in [
            (&ex.inst.arg_m, fwd.states_m.as_ref().unwrap(), &g_root_m, &g_pair_m, true),
            (&ex.inst.arg_n, fwd.states_n.as_ref().unwrap(), &g_root_n, &g_pair_n, false),
        ] {
            let mut adj = TreeAdjoints::zeros(tree.len(), k);
            let root = tree.root().index();
            for (c, v) in g_root.iter().enumerate() {
                adj.up[[root, c]] += v;
            }
            for (pair, g) in ex.inst.alignment.iter().zip(g_pairs) {
                let node = if m_side { pair.m_node } else { pair.n_node };
                for (c, v) in g.iter().enumerate() {
                    adj.down[[node.index(), c]] += v;
                }
            }
            backprop_tree(tree, states, comp, adj, with_downward, gu, gd);
        }
    }

    // Regularization: d/dtheta (lambda/2)||theta||^2 = lambda theta.
    let reg = params.regularizer(mode, hyper);
    for ((kind, g), (_, theta)) in grads.values.tensors_mut().into_iter().zip(params.tensors()) {
        if !mode.is_active(kind) {
            continue;
        }
        let lambda = hyper.get(kind.group()).lambda;
        if lambda != 0.0 {
            for (gi, ti) in g.iter_mut().zip(theta) {
                *gi += lambda * ti;
            }
        }
    }
    Ok((hinge_loss + reg, grads))
}

/// Forward and backward in one call.
pub fn loss_and_gradient(
    ex: Example<'_>,
    emb: &WordEmbeddings,
    params: &ModelParams,
    mode: ModelMode,
    hyper: &PerGroup<GroupHyper>,
) -> Result<(f64, Gradients), TrainError> {
    let fwd = forward(ex.inst, ex.features, emb, params, mode)?;
    backward(&fwd, ex, params, hyper)
}

/// Central finite-difference gradient `(L(theta + h e) - L(theta - h e)) / 2h`
/// over every active coordinate. Uses only the forward objective.
///
/// Fails with [`TrainError::KinkProximity`] when some hinge argument lies
/// within `1e-3` of zero, where the loss is not differentiable.
pub fn finite_diff_grad(
    ex: Example<'_>,
    emb: &WordEmbeddings,
    params: &ModelParams,
    mode: ModelMode,
    hyper: &PerGroup<GroupHyper>,
    h: f64,
) -> Result<Gradients, TrainError> {
    let fwd = forward(ex.inst, ex.features, emb, params, mode)?;
    let dist = kink_distance(&fwd.scores, ex.gold);
    if dist < KINK_MARGIN {
        return Err(TrainError::KinkProximity(dist));
    }
    let mut work = params.clone();
    let mut grads = Gradients::zeros_like(params, mode);
    let n_tensors = params.tensors().len();
    for t in 0..n_tensors {
        let (kind, len) = {
            let ts = params.tensors();
            (ts[t].0, ts[t].1.len())
        };
        if !mode.is_active(kind) {
            continue;
        }
        for i in 0..len {
            let orig = work.tensors()[t].1[i];
            work.tensors_mut()[t].1[i] = orig + h;
            let plus = instance_loss(ex, emb, &work, mode, hyper)?;
            work.tensors_mut()[t].1[i] = orig - h;
            let minus = instance_loss(ex, emb, &work, mode, hyper)?;
            work.tensors_mut()[t].1[i] = orig;
            grads.values.tensors_mut()[t].1[i] = (plus - minus) / (2.0 * h);
        }
    }
    Ok(grads)
}

/// Minimum distance from the hinge kink for finite-difference checks.
pub const KINK_MARGIN: f64 = 1e-3;

/// Largest relative error between two gradients over active coordinates,
/// `|a - b| / max(|a|, |b|, floor)`.
pub fn max_relative_error(a: &Gradients, b: &Gradients, floor: f64) -> f64 {
    let mut worst = 0.0f64;
    for ((_, x), (_, y)) in a.active_tensors().into_iter().zip(b.active_tensors()) {
        for (p, q) in x.iter().zip(y) {
            let denom = p.abs().max(q.abs()).max(floor);
            worst = worst.max((p - q).abs() / denom);
        }
    }
    worst
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::classifier::ParamKind;
    use crate::corpus::{InstanceRecord, LoadOptions, MentionRecord};
    use ndarray::array;

    fn instance() -> Instance {
        Instance::from_record(
            &InstanceRecord {
                id: "t".into(),
                arg1_trees: vec!["(S (NP tina) (VP (V took) (NP bob)))".into()],
                arg2_trees: vec!["(S (NP she) (VP (V was) (ADJ hungry)))".into()],
                mentions: vec![
                    MentionRecord { arg: 1, span: [0, 1] },
                    MentionRecord { arg: 2, span: [0, 1] },
                ],
                chains: vec![vec![0, 1]],
                labels: vec!["A".into()],
                split: None,
            },
            LoadOptions::default(),
        )
        .unwrap()
    }

    fn embeddings() -> WordEmbeddings {
        let toks = ["tina", "took", "bob", "she", "was", "hungry"];
        WordEmbeddings::from_rows(
            toks.iter().enumerate().map(|(i, t)| {
                let x = i as f64;
                (t.to_string(), vec![(x * 0.7).sin(), (x * 1.3).cos()])
            }),
            2,
        )
    }

    #[test]
    fn hinge_values() {
        // separated by at least 1: zero loss
        assert_eq!(hinge(&[2.0, 0.5, 1.0], 0).0, 0.0);
        // equal scores: margin 0, hinge 1
        assert_eq!(hinge(&[0.3, 0.3], 0).0, 1.0);
        // (0.2, 0.5, -0.1), gold 0: 1.3 + 0.7
        let (l, g) = hinge(&[0.2, 0.5, -0.1], 0);
        assert!((l - 2.0).abs() < 1e-15);
        assert_eq!(g, vec![-2.0, 1.0, 1.0]);
        // kink: exactly zero argument gives no subgradient
        let (l, g) = hinge(&[1.0, 0.0], 0);
        assert_eq!(l, 0.0);
        assert_eq!(g, vec![0.0, 0.0]);
    }

    #[test]
    fn zero_violation_gives_zero_gradient() {
        let inst = instance();
        let emb = embeddings();
        let mut params = super::super::params::init_params(2, 2, 1, 1);
        params.classifier = params.classifier.with_root_matrices();
        params.classifier.bias = array![5.0, 0.0];
        let f = array![1.0];
        let hyper = PerGroup::uniform(GroupHyper { lambda: 0.0, eta: 0.1 });
        for mode in ModelMode::ALL {
            let ex = Example { inst: &inst, features: f.view(), gold: 0 };
            let (loss, g) = loss_and_gradient(ex, &emb, &params, mode, &hyper).unwrap();
            assert_eq!(loss, 0.0);
            assert_eq!(g.max_abs(), 0.0);
        }
    }

    #[test]
    fn surface_only_gradient_by_hand() {
        let inst = instance();
        let emb = embeddings();
        let params = ModelParams::zeros(2, 3, 2);
        let f = array![1.0, 0.0];
        let hyper = PerGroup::uniform(GroupHyper { lambda: 0.0, eta: 0.1 });
        let ex = Example { inst: &inst, features: f.view(), gold: 1 };
        let (loss, g) = loss_and_gradient(ex, &emb, &params, ModelMode::SurfaceOnly, &hyper).unwrap();
        // all scores 0: both other labels violate by 1
        assert_eq!(loss, 2.0);
        let beta = &g.values.classifier.beta;
        assert_eq!(beta.row(0).to_vec(), vec![1.0, 0.0]);
        assert_eq!(beta.row(2).to_vec(), vec![1.0, 0.0]);
        assert_eq!(beta.row(1).to_vec(), vec![-2.0, 0.0]);
        assert_eq!(g.values.classifier.bias.to_vec(), vec![1.0, -2.0, 1.0]);
        let kinds: Vec<ParamKind> = g.active_tensors().iter().map(|t| t.0).collect();
        assert_eq!(kinds, vec![ParamKind::FeatureWeights, ParamKind::Bias]);
    }

    #[test]
    fn root_factor_gradient_matches_delta_rule() {
        // dL/da_{y',1} = delta * u_m (a2 . u_n) for violating y'; with
        // a2 = 1 the factor is u_m scaled by sum(u_n).
        let inst = instance();
        let emb = embeddings();
        let mut params = super::super::params::init_params(2, 2, 0, 5);
        for f in params.classifier.root.iter_mut() {
            f.a2.fill(1.0);
        }
        let hyper = PerGroup::uniform(GroupHyper { lambda: 0.0, eta: 0.1 });
        let ex = Example { inst: &inst, features: ndarray::ArrayView1::from(&[]), gold: 0 };
        let fwd = forward(&inst, ex.features, &emb, &params, ModelMode::Upward).unwrap();
        let (_, g) = backward(&fwd, ex, &params, &hyper).unwrap();
        let scale = fwd.root_n.sum();
        for k in 0..2 {
            assert!((g.values.classifier.root[1].a1[k] - fwd.root_m[k] * scale).abs() < 1e-15);
            assert!((g.values.classifier.root[0].a1[k] + fwd.root_m[k] * scale).abs() < 1e-15);
        }
    }

    #[test]
    fn regularizer_gradient_is_lambda_theta() {
        let inst = instance();
        let emb = embeddings();
        let mut params = super::super::params::init_params(2, 2, 1, 9);
        params.classifier.bias = array![10.0, 0.0];
        params.classifier.beta = array![[0.3], [-0.2]];
        let hyper = PerGroup {
            upward: GroupHyper { lambda: 0.1, eta: 0.1 },
            downward: GroupHyper { lambda: 0.2, eta: 0.1 },
            features: GroupHyper { lambda: 0.3, eta: 0.1 },
            classification: GroupHyper { lambda: 0.4, eta: 0.1 },
        };
        let f = array![1.0];
        let ex = Example { inst: &inst, features: f.view(), gold: 0 };
        let (_, g) = loss_and_gradient(ex, &emb, &params, ModelMode::Full, &hyper).unwrap();
        for ((kind, gv), (_, theta)) in g.values.tensors().into_iter().zip(params.tensors()) {
            let lambda = hyper.get(kind.group()).lambda;
            for (a, b) in gv.iter().zip(theta) {
                assert_eq!(*a, lambda * b);
            }
        }
        let fd = finite_diff_grad(ex, &emb, &params, ModelMode::Full, &hyper, 1e-6).unwrap();
        for ((_, a), (_, b)) in fd.active_tensors().into_iter().zip(g.active_tensors()) {
            for (x, y) in a.iter().zip(b) {
                assert!((x - y).abs() < 1e-8);
            }
        }
    }

    #[test]
    fn constant_region_finite_difference_is_zero() {
        let inst = instance();
        let emb = embeddings();
        let mut params = ModelParams::zeros(2, 2, 1);
        params.classifier.bias = array![3.0, 0.0];
        let hyper = PerGroup::uniform(GroupHyper { lambda: 0.0, eta: 0.1 });
        let f = array![1.0];
        let ex = Example { inst: &inst, features: f.view(), gold: 0 };
        let fd = finite_diff_grad(ex, &emb, &params, ModelMode::Full, &hyper, 1e-6).unwrap();
        assert!(fd.max_abs() < 1e-9);
    }

    #[test]
    fn kink_is_reported() {
        let inst = instance();
        let emb = embeddings();
        let mut params = ModelParams::zeros(2, 2, 0);
        params.classifier.bias = array![1.0, 0.0];
        let hyper = PerGroup::uniform(GroupHyper { lambda: 0.0, eta: 0.1 });
        let ex = Example { inst: &inst, features: ndarray::ArrayView1::from(&[]), gold: 0 };
        assert!(matches!(
            finite_diff_grad(ex, &emb, &params, ModelMode::Upward, &hyper, 1e-6),
            Err(TrainError::KinkProximity(_))
        ));
    }

    #[test]
    fn mismatched_forward_is_rejected() {
        let inst = instance();
        let emb = embeddings();
        let params = ModelParams::zeros(2, 2, 1);
        let hyper = PerGroup::uniform(GroupHyper { lambda: 0.0, eta: 0.1 });
        let f = array![1.0];
        let mut fwd = forward(&inst, f.view(), &emb, &params, ModelMode::SurfaceOnly).unwrap();
        fwd.mode = ModelMode::Full;
        let ex = Example { inst: &inst, features: f.view(), gold: 0 };
        assert!(matches!(backward(&fwd, ex, &params, &hyper), Err(TrainError::StateMissing)));
    }
}
