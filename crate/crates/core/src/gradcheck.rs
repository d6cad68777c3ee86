//! Randomized comparison of analytic gradients against central finite
//! differences.

use ndarray::Array1;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::classifier::{ModelMode, ParamGroup};
use crate::corpus::{Instance, InstanceRecord, LoadOptions, MentionRecord};
use crate::embeddings::WordEmbeddings;
use crate::training::{
    finite_diff_grad, forward, init_params, loss_and_gradient, max_relative_error, objective::kink_distance, Example,
    GroupHyper, ModelParams, PerGroup, TrainError, KINK_MARGIN,
};

const VOCAB: usize = 12;
const LABELS: usize = 3;
const FEATURES: usize = 4;

#[derive(Debug, Clone, PartialEq)]
pub struct GradcheckConfig {
    pub ks: Vec<usize>,
    pub modes: Vec<ModelMode>,
    pub trials: usize,
    pub h: f64,
    pub tolerance: f64,
    /// Lower bound on the relative-error denominator.
    pub floor: f64,
    pub seed: u64,
}

impl Default for GradcheckConfig {
    fn default() -> Self {
        GradcheckConfig {
            ks: vec![2, 5, 10],
            modes: ModelMode::ALL.to_vec(),
            trials: 25,
            h: 1e-6,
            tolerance: 1e-4,
            floor: 1e-4,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GradcheckRow {
    pub mode: ModelMode,
    pub k: usize,
    pub trials: usize,
    /// Draws rejected for lying too close to a hinge kink.
    pub resampled: usize,
    pub max_rel_err: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GradcheckReport {
    pub rows: Vec<GradcheckRow>,
    pub tolerance: f64,
}

impl GradcheckReport {
    pub fn max_rel_err(&self) -> f64 {
        self.rows.iter().map(|r| r.max_rel_err).fold(0.0, f64::max)
    }

    pub fn passed(&self) -> bool {
        self.rows.iter().all(|r| r.max_rel_err < self.tolerance)
    }
}

fn random_tree(rng: &mut ChaCha8Rng, words: &[String]) -> String {
    fn build(rng: &mut ChaCha8Rng, words: &[String]) -> String {
        if words.len() == 1 {
            return format!("(X {})", words[0]);
        }
        let cut = rng.random_range(1..words.len());
        format!("(P {} {})", build(rng, &words[..cut]), build(rng, &words[cut..]))
    }
    format!("(S {})", build(rng, words))
}

/// A random argument pair with one to three cross-argument chains.
pub fn random_instance(rng: &mut ChaCha8Rng) -> Instance {
    let side = |rng: &mut ChaCha8Rng| -> (Vec<String>, String) {
        let n = rng.random_range(2..8);
        let words: Vec<String> = (0..n).map(|_| format!("w{}", rng.random_range(0..VOCAB))).collect();
        let tree = random_tree(rng, &words);
        (words, tree)
    };
    let (wm, tm) = side(rng);
    let (wn, tn) = side(rng);
    let chains = rng.random_range(1..=3.min(wm.len()).min(wn.len()));
    let mut mentions = Vec::new();
    let mut chain_list = Vec::new();
    for c in 0..chains {
        mentions.push(MentionRecord { arg: 1, span: [c, c + 1] });
        mentions.push(MentionRecord { arg: 2, span: [wn.len() - 1 - c, wn.len() - c] });
        chain_list.push(vec![2 * c, 2 * c + 1]);
    }
    let rec = InstanceRecord {
        id: "g".into(),
        arg1_trees: vec![tm],
        arg2_trees: vec![tn],
        mentions,
        chains: chain_list,
        labels: vec![format!("l{}", rng.random_range(0..LABELS))],
        split: None,
    };
    Instance::from_record(&rec, LoadOptions::default()).expect("generated record is valid")
}

pub fn random_embeddings(k: usize, rng: &mut ChaCha8Rng) -> WordEmbeddings {
    let rows: Vec<(String, Vec<f64>)> = (0..VOCAB)
        .map(|i| (format!("w{i}"), (0..k).map(|_| rng.random_range(-1.0..1.0)).collect()))
        .collect();
    WordEmbeddings::from_rows(rows, k)
}

/// Initialized composition matrices plus random nonzero classifier weights.
pub fn random_params(k: usize, rng: &mut ChaCha8Rng) -> ModelParams {
    let mut p = init_params(k, LABELS, FEATURES, rng.random());
    p.classifier = p.classifier.with_root_matrices();
    for (kind, values) in p.tensors_mut() {
        if !matches!(kind.group(), ParamGroup::Upward | ParamGroup::Downward) {
            values.iter_mut().for_each(|v| *v = rng.random_range(-0.6..0.6));
        }
    }
    p
}

/// Run `trials` accepted comparisons per (mode, K).
pub fn run_gradcheck(cfg: &GradcheckConfig) -> Result<GradcheckReport, TrainError> {
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let hyper = PerGroup {
        upward: GroupHyper { lambda: 0.01, eta: 0.0 },
        downward: GroupHyper { lambda: 0.02, eta: 0.0 },
        features: GroupHyper { lambda: 0.03, eta: 0.0 },
        classification: GroupHyper { lambda: 0.04, eta: 0.0 },
    };
    let mut rows = Vec::new();
    for &mode in &cfg.modes {
        for &k in &cfg.ks {
            let emb = random_embeddings(k, &mut rng);
            let mut row = GradcheckRow {
                mode,
                k,
                trials: 0,
                resampled: 0,
                max_rel_err: 0.0,
            };
            while row.trials < cfg.trials {
                let inst = random_instance(&mut rng);
                let params = random_params(k, &mut rng);
                let f: Array1<f64> = (0..FEATURES).map(|_| rng.random_range(0..2) as f64).collect();
                let gold = inst.labels[0][1..].parse().expect("label index");
                let ex = Example { inst: &inst, features: f.view(), gold };
                let scores = forward(&inst, f.view(), &emb, &params, mode)?.scores;
                if kink_distance(&scores, gold) < KINK_MARGIN {
                    row.resampled += 1;
                    continue;
                }
                let (_, analytic) = loss_and_gradient(ex, &emb, &params, mode, &hyper)?;
                let numeric = finite_diff_grad(ex, &emb, &params, mode, &hyper, cfg.h)?;
                row.max_rel_err = row.max_rel_err.max(max_relative_error(&analytic, &numeric, cfg.floor));
                row.trials += 1;
            }
            rows.push(row);
        }
    }
    Ok(GradcheckReport {
        rows,
        tolerance: cfg.tolerance,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn small_suite_passes() {
        let cfg = GradcheckConfig {
            ks: vec![3],
            trials: 3,
            ..Default::default()
        };
        let r = run_gradcheck(&cfg).unwrap();
        assert_eq!(r.rows.len(), ModelMode::ALL.len());
        assert!(r.passed(), "{:?}", r.rows);
    }

    #[test]
    fn step_sizes_agree() {
        let mut rng = ChaCha8Rng::seed_from_u64(42);
        let emb = random_embeddings(5, &mut rng);
        let hyper = PerGroup::uniform(GroupHyper { lambda: 0.01, eta: 0.0 });
        let mut checked = 0;
        while checked < 3 {
            let inst = random_instance(&mut rng);
            let params = random_params(5, &mut rng);
            let f = Array1::from(vec![1.0, 0.0, 1.0, 1.0]);
            let gold = inst.labels[0][1..].parse().unwrap();
            let ex = Example { inst: &inst, features: f.view(), gold };
            let (Ok(a), Ok(b)) = (
                finite_diff_grad(ex, &emb, &params, ModelMode::Full, &hyper, 1e-5),
                finite_diff_grad(ex, &emb, &params, ModelMode::Full, &hyper, 1e-6),
            ) else {
                continue;
            };
            for ((_, x), (_, y)) in a.active_tensors().into_iter().zip(b.active_tensors()) {
                for (p, q) in x.iter().zip(y) {
                    assert!((p - q).abs() < 1e-6);
                }
            }
            checked += 1;
        }
    }

    #[test]
    fn random_instances_align() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..50 {
            let inst = random_instance(&mut rng);
            assert!(!inst.alignment.is_empty());
            assert!(inst.has_shared_entity());
        }
    }
}
