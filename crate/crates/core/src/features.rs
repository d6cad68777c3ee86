//! Sparse surface features: cross-argument word pairs and constituent
//! production rules, ranked by mutual information with the relation label.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::io::Write;

use ndarray::Array1;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::corpus::{Dataset, Instance};
use crate::tree::RawTree;

pub const LEX_PREFIX: &str = "lex:";
pub const PROD_PREFIX: &str = "prod:";

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum FeatureError {
    #[error("mutual information needs at least two observed labels")]
    DegenerateCorpus,
    #[error("presence and label columns differ in length ({0} vs {1})")]
    LengthMismatch(usize, usize),
}

/// Feature key to count for one instance. Keys are namespaced by category.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct SparseCounts(pub BTreeMap<String, u32>);

impl SparseCounts {
    pub fn keys(&self) -> impl Iterator<Item = &str> {
        self.0.keys().map(String::as_str)
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    fn mark(&mut self, key: String) {
        self.0.insert(key, 1);
    }

    fn merge(&mut self, other: SparseCounts) {
        self.0.extend(other.0);
    }
}

/// `lex:w1|w2` for every word `w1` of argument m and `w2` of argument n,
/// lowercased, binary presence.
pub fn extract_lexical_pairs(inst: &Instance) -> SparseCounts {
    let lower = |ts: Vec<&str>| ts.into_iter().map(str::to_lowercase).collect::<BTreeSet<_>>();
    let (m, n) = (lower(inst.tokens_m()), lower(inst.tokens_n()));
    let mut out = SparseCounts::default();
    for a in &m {
        for b in &n {
            out.mark(format!("{LEX_PREFIX}{a}|{b}"));
        }
    }
    out
}

/// Distinct non-lexical productions `PARENT→CHILD1 CHILD2 ...` of the n-ary
/// trees. Preterminals are skipped; a bare token among a node's children is
/// written as the token itself.
pub fn productions(trees: &[RawTree]) -> BTreeSet<String> {
    fn walk(t: &RawTree, out: &mut BTreeSet<String>) {
        let RawTree::Node { label, children } = t else { return };
        if children.iter().any(|c| matches!(c, RawTree::Node { .. })) {
            let rhs: Vec<&str> = children
                .iter()
                .map(|c| match c {
                    RawTree::Leaf(tok) => tok.as_str(),
                    RawTree::Node { label, .. } => label.as_str(),
                })
                .collect();
            out.insert(format!("{label}→{}", rhs.join(" ")));
        }
        for c in children {
            walk(c, out);
        }
    }
    let mut out = BTreeSet::new();
    for t in trees {
        walk(t, &mut out);
    }
    out
}

/// One key per distinct production, tagged by where it occurs:
/// `prod:m:...`, `prod:n:...` or `prod:both:...`.
pub fn extract_productions(inst: &Instance) -> SparseCounts {
    let pm = productions(&inst.raw_m);
    let pn = productions(&inst.raw_n);
    let mut out = SparseCounts::default();
    for p in pm.union(&pn) {
        let side = match (pm.contains(p), pn.contains(p)) {
            (true, true) => "both",
            (true, false) => "m",
            _ => "n",
        };
        out.mark(format!("{PROD_PREFIX}{side}:{p}"));
    }
    out
}

pub fn extract_all(inst: &Instance) -> SparseCounts {
    let mut out = extract_lexical_pairs(inst);
    out.merge(extract_productions(inst));
    out
}

/// Natural-log mutual information between a feature count table and the
/// label: `present[y]` counts observations with the feature and label `y`,
/// `totals[y]` counts all observations with label `y`.
pub fn mi_from_counts(present: &[u64], totals: &[u64]) -> f64 {
    let n: u64 = totals.iter().sum();
    if n == 0 {
        return 0.0;
    }
    let n = n as f64;
    let n_present: u64 = present.iter().sum();
    let marginals = [n - n_present as f64, n_present as f64];
    let mut mi = 0.0;
    for (&p, &t) in present.iter().zip(totals) {
        for (value, joint) in [(0, (t - p) as f64), (1, p as f64)] {
            if joint == 0.0 {
                continue;
            }
            // p(x,y) log(p(x,y) / (p(x) p(y))) with counts
            mi += joint / n * (joint * n / (marginals[value] * t as f64)).ln();
        }
    }
    mi.max(0.0)
}

/// MI between a binary feature column and a label column.
pub fn mutual_information(presence: &[bool], labels: &[usize], n_labels: usize) -> Result<f64, FeatureError> {
    if presence.len() != labels.len() {
        return Err(FeatureError::LengthMismatch(presence.len(), labels.len()));
    }
    let mut present = vec![0u64; n_labels];
    let mut totals = vec![0u64; n_labels];
    for (&x, &y) in presence.iter().zip(labels) {
        totals[y] += 1;
        present[y] += x as u64;
    }
    if totals.iter().filter(|&&t| t > 0).count() < 2 {
        return Err(FeatureError::DegenerateCorpus);
    }
    Ok(mi_from_counts(&present, &totals))
}

/// Features kept per category.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Budgets {
    pub lexical: usize,
    pub production: usize,
}

impl Default for Budgets {
    fn default() -> Self {
        Budgets {
            lexical: 500,
            production: 100,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CategoryReport {
    pub prefix: String,
    pub budget: usize,
    pub candidates: usize,
    pub selected: usize,
    /// `budget - selected` when too few candidates exist.
    pub shortfall: usize,
}

/// Selected feature columns, dense indices `0..F`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureMap {
    keys: Vec<String>,
    mi: Vec<f64>,
    pub categories: Vec<CategoryReport>,
    /// Per selected feature, observation counts per label with the feature
    /// present.
    pub label_counts: Vec<Vec<u64>>,
    #[serde(skip)]
    index: HashMap<String, usize>,
}

/// MI values closer than this rank as ties and fall back to key order.
const MI_TIE_QUANTUM: f64 = 1e-12;

fn rank_key(mi: f64) -> i64 {
    (mi / MI_TIE_QUANTUM).round() as i64
}

impl FeatureMap {
    /// Rank every candidate by MI over the dataset's training view and keep
    /// the top `budget` per category, lexical first. Ties are broken by key.
    pub fn select(ds: &Dataset, budgets: Budgets) -> Result<FeatureMap, FeatureError> {
        let extracted: Vec<SparseCounts> = ds.instances.par_iter().map(extract_all).collect();
        let n_labels = ds.labels().len();
        let pairs = ds.training_pairs();
        let mut totals = vec![0u64; n_labels];
        let mut present: BTreeMap<&str, Vec<u64>> = BTreeMap::new();
        for &(i, y) in &pairs {
            totals[y] += 1;
            for key in extracted[i].keys() {
                present.entry(key).or_insert_with(|| vec![0; n_labels])[y] += 1;
            }
        }
        if totals.iter().filter(|&&t| t > 0).count() < 2 {
            return Err(FeatureError::DegenerateCorpus);
        }

        let mut map = FeatureMap {
            keys: Vec::new(),
            mi: Vec::new(),
            categories: Vec::new(),
            label_counts: Vec::new(),
            index: HashMap::new(),
        };
        for (prefix, budget) in [(LEX_PREFIX, budgets.lexical), (PROD_PREFIX, budgets.production)] {
            let mut ranked: Vec<(&str, f64, &Vec<u64>)> = present
                .iter()
                .filter(|(k, _)| k.starts_with(prefix))
                .map(|(k, counts)| (*k, mi_from_counts(counts, &totals), counts))
                .collect();
            let candidates = ranked.len();
            ranked.sort_by(|a, b| rank_key(b.1).cmp(&rank_key(a.1)).then_with(|| a.0.cmp(b.0)));
            ranked.truncate(budget);
            map.categories.push(CategoryReport {
                prefix: prefix.to_string(),
                budget,
                candidates,
                selected: ranked.len(),
                shortfall: budget - ranked.len(),
            });
            for (key, mi, counts) in ranked {
                map.keys.push(key.to_string());
                map.mi.push(mi);
                map.label_counts.push(counts.clone());
            }
        }
        map.rebuild_index();
        Ok(map)
    }

    fn rebuild_index(&mut self) {
        self.index = self.keys.iter().enumerate().map(|(i, k)| (k.clone(), i)).collect();
    }

    /// Restore the lookup index after deserialization.
    pub fn reindexed(mut self) -> Self {
        self.rebuild_index();
        self
    }

    pub fn len(&self) -> usize {
        self.keys.len()
    }

    pub fn is_empty(&self) -> bool {
        self.keys.is_empty()
    }

    pub fn keys(&self) -> &[String] {
        &self.keys
    }

    pub fn mi(&self) -> &[f64] {
        &self.mi
    }

    pub fn column(&self, key: &str) -> Option<usize> {
        self.index.get(key).copied()
    }

    /// SHA-256 over the ordered keys.
    pub fn hash(&self) -> String {
        let mut h = Sha256::new();
        for k in &self.keys {
            h.update(k.as_bytes());
            h.update(b"\n");
        }
        hex::encode(h.finalize())
    }

    /// Binary indicator vector over the selected keys.
    pub fn vectorize(&self, inst: &Instance) -> Array1<f64> {
        self.vectorize_counts(&extract_all(inst))
    }

    pub fn vectorize_counts(&self, counts: &SparseCounts) -> Array1<f64> {
        let mut v = Array1::zeros(self.len());
        for key in counts.keys() {
            if let Some(i) = self.column(key) {
                v[i] = 1.0;
            }
        }
        v
    }

    /// `index<TAB>key<TAB>MI` per line.
    pub fn export<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        for (i, (k, mi)) in self.keys.iter().zip(&self.mi).enumerate() {
            writeln!(w, "{i}\t{k}\t{mi}")?;
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{InstanceRecord, LoadOptions};
    use proptest::prelude::*;

    fn inst(m: &str, n: &str, labels: &[&str]) -> Instance {
        Instance::from_record(
            &InstanceRecord {
                id: "t".into(),
                arg1_trees: vec![m.into()],
                arg2_trees: vec![n.into()],
                mentions: vec![],
                chains: vec![],
                labels: labels.iter().map(|s| s.to_string()).collect(),
                split: None,
            },
            LoadOptions::default(),
        )
        .unwrap()
    }

    fn keys(c: &SparseCounts) -> Vec<&str> {
        c.keys().collect()
    }

    #[test]
    fn lexical_pairs() {
        let c = extract_lexical_pairs(&inst("(X a)", "(X b)", &["L"]));
        assert_eq!(keys(&c), vec!["lex:a|b"]);
        let c = extract_lexical_pairs(&inst("(X A a)", "(X b)", &["L"]));
        assert_eq!(keys(&c), vec!["lex:a|b"]);
        assert_eq!(c.0["lex:a|b"], 1);
        let c = extract_lexical_pairs(&inst("(X a b c)", "(X d e)", &["L"]));
        let want: Vec<String> = ["a", "b", "c"]
            .iter()
            .flat_map(|x| ["d", "e"].iter().map(move |y| format!("lex:{x}|{y}")))
            .collect();
        assert_eq!(keys(&c), want.iter().map(String::as_str).collect::<Vec<_>>());
    }

    #[test]
    fn production_tags() {
        let c = extract_productions(&inst("(S (NP x) (VP y))", "(X z)", &["L"]));
        assert_eq!(keys(&c), vec!["prod:m:S→NP VP"]);
        let c = extract_productions(&inst("(S (NP x) (VP y))", "(S (NP p) (VP (V q) (NP r)))", &["L"]));
        assert_eq!(keys(&c), vec!["prod:both:S→NP VP", "prod:n:VP→V NP"]);
    }

    #[test]
    fn production_count_matches_traversal() {
        // Independent count: internal nodes with an internal child, deduplicated
        // by their printed rule.
        let m = "(S (NP (D the) (N cat)) (VP (V sat) (PP (P on) (NP (D the) (N mat)))))";
        let n = "(S (NP it) (VP (V was) (ADJP (ADV very) (ADJ happy))))";
        let c = extract_productions(&inst(m, n, &["L"]));
        let rules_m = ["S→NP VP", "NP→D N", "VP→V PP", "PP→P NP"];
        let rules_n = ["S→NP VP", "VP→V ADJP", "ADJP→ADV ADJ"];
        let union: BTreeSet<&str> = rules_m.iter().chain(&rules_n).copied().collect();
        assert_eq!(c.len(), union.len());
        assert!(c.0.contains_key("prod:both:S→NP VP"));
    }

    #[test]
    fn mi_known_values() {
        // Present everywhere: independent of the label.
        let mi = mutual_information(&[true; 4], &[0, 0, 1, 1], 2).unwrap();
        assert_eq!(mi, 0.0);
        // Perfect predictor of a fair binary label.
        let mi = mutual_information(&[true, true, false, false], &[0, 0, 1, 1], 2).unwrap();
        assert!((mi - 2f64.ln()).abs() < 1e-15);
        assert_eq!(
            mutual_information(&[true, false], &[1, 1], 3),
            Err(FeatureError::DegenerateCorpus)
        );
    }

    /// Brute-force MI over the joint table of observations.
    fn mi_oracle(presence: &[bool], labels: &[usize], n_labels: usize) -> f64 {
        let n = presence.len() as f64;
        let mut joint = vec![[0.0f64; 2]; n_labels];
        for (&x, &y) in presence.iter().zip(labels) {
            joint[y][x as usize] += 1.0 / n;
        }
        let px: Vec<f64> = (0..2).map(|x| joint.iter().map(|r| r[x]).sum()).collect();
        let py: Vec<f64> = joint.iter().map(|r| r[0] + r[1]).collect();
        let mut mi = 0.0;
        for y in 0..n_labels {
            for x in 0..2 {
                if joint[y][x] > 0.0 {
                    mi += joint[y][x] * (joint[y][x] / (px[x] * py[y])).ln();
                }
            }
        }
        mi
    }

    #[test]
    fn mi_matches_oracle_on_toy_corpus() {
        let presence = [true, false, true, true];
        let labels = [0, 1, 1, 2];
        let got = mutual_information(&presence, &labels, 3).unwrap();
        assert!((got - mi_oracle(&presence, &labels, 3)).abs() < 1e-12);
    }

    #[test]
    fn selection_takes_highest_mi_and_records_shortfall() {
        let ds = Dataset::new(vec![
            inst("(X a)", "(X b)", &["P"]),
            inst("(X a)", "(X c)", &["P"]),
            inst("(X d)", "(X b)", &["Q"]),
            inst("(X d)", "(X c)", &["Q"]),
        ]);
        // lex:a|b, lex:a|c, lex:d|b, lex:d|c all have the same MI; ties by key.
        let map = FeatureMap::select(&ds, Budgets { lexical: 2, production: 100 }).unwrap();
        assert_eq!(map.keys(), &["lex:a|b".to_string(), "lex:a|c".to_string()]);
        assert_eq!(map.categories[0].candidates, 4);
        assert_eq!(map.categories[1].shortfall, 100);

        let map = FeatureMap::select(&ds, Budgets::default()).unwrap();
        assert_eq!(map.len(), 4);
        assert_eq!(map.categories[0].shortfall, 496);
    }

    #[test]
    fn vectorize_and_export() {
        let ds = Dataset::new(vec![
            inst("(X a)", "(X b)", &["P"]),
            inst("(X c)", "(X d)", &["Q"]),
        ]);
        let map = FeatureMap::select(&ds, Budgets::default()).unwrap();
        let none = inst("(X q)", "(X r)", &["P"]);
        assert!(map.vectorize(&none).iter().all(|&x| x == 0.0));
        let v = map.vectorize(&ds.instances[1]);
        let col = map.column("lex:c|d").unwrap();
        assert_eq!(v.iter().filter(|&&x| x != 0.0).count(), 1);
        assert_eq!(v[col], 1.0);

        let mut buf = Vec::new();
        map.export(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let first: Vec<&str> = text.lines().next().unwrap().split('\t').collect();
        assert_eq!(first[0], "0");
        assert_eq!(first[1], map.keys()[0]);
        assert_eq!(first[2].parse::<f64>().unwrap(), map.mi()[0]);
        assert_eq!(map.hash().len(), 64);
        assert_eq!(map.clone().reindexed(), map);
    }

    proptest! {
        #[test]
        fn mi_nonnegative_and_matches_oracle(obs in prop::collection::vec((any::<bool>(), 0usize..3), 2..40)) {
            let presence: Vec<bool> = obs.iter().map(|o| o.0).collect();
            let labels: Vec<usize> = obs.iter().map(|o| o.1).collect();
            match mutual_information(&presence, &labels, 3) {
                Ok(mi) => {
                    prop_assert!(mi >= 0.0);
                    prop_assert!((mi - mi_oracle(&presence, &labels, 3).max(0.0)).abs() < 1e-12);
                }
                Err(e) => prop_assert_eq!(e, FeatureError::DegenerateCorpus),
            }
        }

        #[test]
        fn label_independent_presence_has_zero_mi(per_label in 1usize..6, present in 0usize..6) {
            let present = present.min(per_label);
            let mut presence = Vec::new();
            let mut labels = Vec::new();
            for y in 0..3 {
                for i in 0..per_label {
                    presence.push(i < present);
                    labels.push(y);
                }
            }
            prop_assert!(mutual_information(&presence, &labels, 3).unwrap().abs() < 1e-15);
        }
    }
}
