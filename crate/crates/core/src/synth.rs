//! Synthetic entity-discrimination corpus.
//!
//! Every pair holds two instances with identical tokens, trees and mentions:
//!
//! ```text
//! m: (S (NP name_a) (VP (V verb) (NP name_b)))
//! n: (S (NP pron) (VP (V was) (ADJ adj)))
//! ```
//!
//! In one member the pronoun corefers with `name_a` and the label is the
//! subject label; in the other it corefers with `name_b` and the label is the
//! object label. Only the coreference chains tell the members apart.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::corpus::{Dataset, Instance, InstanceRecord, LoadOptions, MentionRecord};
use crate::embeddings::WordEmbeddings;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthSpec {
    pub pairs: usize,
    pub k: usize,
    pub names: usize,
    pub verbs: usize,
    pub adjectives: usize,
    pub pronouns: usize,
    pub subject_label: String,
    pub object_label: String,
    pub seed: u64,
}

impl Default for SynthSpec {
    fn default() -> Self {
        SynthSpec {
            pairs: 200,
            k: 20,
            names: 20,
            verbs: 10,
            adjectives: 10,
            pronouns: 2,
            subject_label: "subject".into(),
            object_label: "object".into(),
            seed: 7,
        }
    }
}

pub struct SynthCorpus {
    pub dataset: Dataset,
    pub embeddings: WordEmbeddings,
}

fn vocab(prefix: &str, n: usize) -> Vec<String> {
    (0..n).map(|i| format!("{prefix}{i}")).collect()
}

/// Generate `spec.pairs` instance pairs plus embeddings for every word.
/// Output depends only on the spec.
pub fn synth_generate(spec: &SynthSpec) -> SynthCorpus {
    assert!(spec.names >= 2, "need at least two names");
    assert!(spec.verbs > 0 && spec.adjectives > 0 && spec.pronouns > 0);
    let names = vocab("name", spec.names);
    let verbs = vocab("verb", spec.verbs);
    let adjs = vocab("adj", spec.adjectives);
    let prons = vocab("pron", spec.pronouns);

    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let mut instances = Vec::with_capacity(2 * spec.pairs);
    for p in 0..spec.pairs {
        let a = rng.random_range(0..names.len());
        let mut b = rng.random_range(0..names.len() - 1);
        if b >= a {
            b += 1;
        }
        let verb = &verbs[rng.random_range(0..verbs.len())];
        let pron = &prons[rng.random_range(0..prons.len())];
        let adj = &adjs[rng.random_range(0..adjs.len())];
        let m = format!("(S (NP {}) (VP (V {verb}) (NP {})))", names[a], names[b]);
        let n = format!("(S (NP {pron}) (VP (V was) (ADJ {adj})))");
        let mentions = vec![
            MentionRecord { arg: 1, span: [0, 1] },
            MentionRecord { arg: 1, span: [2, 3] },
            MentionRecord { arg: 2, span: [0, 1] },
        ];
        for (suffix, chain, label) in [("a", 0, &spec.subject_label), ("b", 1, &spec.object_label)] {
            let rec = InstanceRecord {
                id: format!("synth{p}{suffix}"),
                arg1_trees: vec![m.clone()],
                arg2_trees: vec![n.clone()],
                mentions: mentions.clone(),
                chains: vec![vec![chain, 2]],
                labels: vec![label.clone()],
                split: None,
            };
            instances.push(Instance::from_record(&rec, LoadOptions::default()).expect("generated record is valid"));
        }
    }

    let mut erng = ChaCha8Rng::seed_from_u64(spec.seed ^ 0x9e37_79b9_7f4a_7c15);
    let words = names
        .iter()
        .chain(&verbs)
        .chain(&adjs)
        .chain(&prons)
        .cloned()
        .chain(std::iter::once("was".to_string()));
    let rows: Vec<(String, Vec<f64>)> = words
        .map(|w| (w, (0..spec.k).map(|_| erng.random_range(-1.0..1.0)).collect()))
        .collect();
    SynthCorpus {
        dataset: Dataset::new(instances),
        embeddings: WordEmbeddings::from_rows(rows, spec.k),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::composition::{upward_pass, CompositionParams};
    use crate::tree::NodeId;

    #[test]
    fn members_share_inputs() {
        let c = synth_generate(&SynthSpec { pairs: 30, k: 4, ..Default::default() });
        let params = {
            let mut p = CompositionParams::zeros(4);
            p.up.mapv_inplace(|_| 0.3);
            p
        };
        for pair in c.dataset.instances.chunks(2) {
            let (x, y) = (&pair[0], &pair[1]);
            assert_eq!(x.raw_m, y.raw_m);
            assert_eq!(x.arg_m, y.arg_m);
            assert_eq!(x.arg_n, y.arg_n);
            assert_eq!(x.mentions, y.mentions);
            assert_ne!(x.chains, y.chains);
            assert_ne!(x.labels, y.labels);
            let ux = upward_pass(&x.arg_m, &c.embeddings, &params).unwrap();
            let uy = upward_pass(&y.arg_m, &c.embeddings, &params).unwrap();
            assert_eq!(ux.up, uy.up);
            assert_ne!(x.alignment[0].m_node, y.alignment[0].m_node);
            assert_eq!(x.alignment[0].n_node, NodeId(0));
        }
    }

    #[test]
    fn balanced_labels() {
        let c = synth_generate(&SynthSpec::default());
        assert_eq!(c.dataset.len(), 400);
        let subj = c.dataset.instances.iter().filter(|i| i.labels[0] == "subject").count();
        assert_eq!(subj, 200);
    }

    #[test]
    fn reproducible_including_embeddings() {
        let spec = SynthSpec { pairs: 10, ..Default::default() };
        let (a, b) = (synth_generate(&spec), synth_generate(&spec));
        assert_eq!(a.dataset, b.dataset);
        let (mut ea, mut eb) = (Vec::new(), Vec::new());
        a.embeddings.write(&mut ea).unwrap();
        b.embeddings.write(&mut eb).unwrap();
        assert_eq!(ea, eb);
        let c = synth_generate(&SynthSpec { seed: 8, ..spec });
        assert_ne!(a.dataset, c.dataset);
    }
}
