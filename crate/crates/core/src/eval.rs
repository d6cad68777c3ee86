//! Evaluation protocols over a trained [`Model`].
//!
//! A prediction counts as correct when it is any of the instance's gold
//! labels. Every report also breaks accuracy down by whether the two
//! arguments share an entity.

use std::fmt;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::corpus::{Dataset, Instance};
use crate::embeddings::WordEmbeddings;
use crate::model::{Model, ModelError};

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("label {0:?} is not known to the model")]
    LabelMismatch(String),
    #[error(transparent)]
    Model(#[from] ModelError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Protocol {
    Multiclass,
    Binary,
    CorefSubset,
}

impl Protocol {
    pub fn name(self) -> &'static str {
        match self {
            Protocol::Multiclass => "multiclass",
            Protocol::Binary => "binary",
            Protocol::CorefSubset => "coref-subset",
        }
    }
}

impl std::str::FromStr for Protocol {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "multiclass" => Ok(Protocol::Multiclass),
            "binary" => Ok(Protocol::Binary),
            "coref-subset" => Ok(Protocol::CorefSubset),
            other => Err(format!("unknown protocol {other:?}")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Subset {
    pub name: String,
    pub count: usize,
    pub proportion: f64,
    /// `None` for an empty subset.
    pub accuracy: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LabelScores {
    pub label: String,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub support: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BinaryScores {
    pub positive: String,
    pub tp: usize,
    pub fp: usize,
    pub fn_: usize,
    pub tn: usize,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    /// Nothing was predicted positive; precision is reported as 0.
    pub no_predicted_positives: bool,
    /// No gold positives; recall is reported as 0.
    pub no_gold_positives: bool,
}

impl BinaryScores {
    pub fn from_counts(positive: &str, tp: usize, fp: usize, fn_: usize, tn: usize) -> Self {
        let ratio = |a: usize, b: usize| if b == 0 { 0.0 } else { a as f64 / b as f64 };
        let precision = ratio(tp, tp + fp);
        let recall = ratio(tp, tp + fn_);
        BinaryScores {
            positive: positive.to_string(),
            tp,
            fp,
            fn_,
            tn,
            precision,
            recall,
            f1: f1(precision, recall),
            no_predicted_positives: tp + fp == 0,
            no_gold_positives: tp + fn_ == 0,
        }
    }
}

/// Harmonic mean, 0 when both inputs are 0.
pub fn f1(p: f64, r: f64) -> f64 {
    if p + r == 0.0 {
        0.0
    } else {
        2.0 * p * r / (p + r)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub protocol: Protocol,
    pub instances: usize,
    pub accuracy: f64,
    pub per_label: Vec<LabelScores>,
    pub binary: Option<BinaryScores>,
    pub subsets: Vec<Subset>,
    pub fingerprint: String,
}

fn correct(inst: &Instance, pred: &str) -> bool {
    inst.labels.iter().any(|l| l == pred)
}

impl EvalReport {
    /// Build a report from one predicted label per instance.
    pub fn from_predictions(
        protocol: Protocol,
        instances: &[Instance],
        preds: &[&str],
        labels: &[String],
        positive: Option<&str>,
        fingerprint: String,
    ) -> Self {
        assert_eq!(instances.len(), preds.len(), "one prediction per instance");
        let n = instances.len();
        let hits = |filter: &dyn Fn(&Instance) -> bool| {
            let mut count = 0;
            let mut ok = 0;
            for (inst, p) in instances.iter().zip(preds) {
                if filter(inst) {
                    count += 1;
                    ok += correct(inst, p) as usize;
                }
            }
            (count, ok)
        };
        let (_, ok) = hits(&|_| true);
        let accuracy = if n == 0 { 0.0 } else { ok as f64 / n as f64 };

        let mut subsets = Vec::new();
        for (name, shared) in [("shared-entity", true), ("no-shared-entity", false)] {
            let (count, ok) = hits(&|i: &Instance| i.has_shared_entity() == shared);
            subsets.push(Subset {
                name: name.to_string(),
                count,
                proportion: if n == 0 { 0.0 } else { count as f64 / n as f64 },
                accuracy: (count > 0).then(|| ok as f64 / count as f64),
            });
        }

        let per_label = labels
            .iter()
            .map(|l| {
                let mut tp = 0;
                let mut predicted = 0;
                let mut support = 0;
                for (inst, p) in instances.iter().zip(preds) {
                    let gold = inst.labels.iter().any(|g| g == l);
                    support += gold as usize;
                    if *p == l {
                        predicted += 1;
                        tp += gold as usize;
                    }
                }
                let precision = if predicted == 0 { 0.0 } else { tp as f64 / predicted as f64 };
                let recall = if support == 0 { 0.0 } else { tp as f64 / support as f64 };
                LabelScores {
                    label: l.clone(),
                    precision,
                    recall,
                    f1: f1(precision, recall),
                    support,
                }
            })
            .collect();

        let binary = positive.map(|pos| {
            let (mut tp, mut fp, mut fn_, mut tn) = (0, 0, 0, 0);
            for (inst, p) in instances.iter().zip(preds) {
                let gold = inst.labels.iter().any(|g| g == pos);
                match (*p == pos, gold) {
                    (true, true) => tp += 1,
                    (true, false) => fp += 1,
                    (false, true) => fn_ += 1,
                    (false, false) => tn += 1,
                }
            }
            BinaryScores::from_counts(pos, tp, fp, fn_, tn)
        });

        EvalReport {
            protocol,
            instances: n,
            accuracy,
            per_label,
            binary,
            subsets,
            fingerprint,
        }
    }
}

fn rate(x: Option<f64>) -> String {
    x.map_or_else(|| "na".to_string(), |v| format!("{v:.6}"))
}

impl fmt::Display for EvalReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "protocol\t{}", self.protocol.name())?;
        writeln!(f, "fingerprint\t{}", self.fingerprint)?;
        writeln!(f, "instances\t{}", self.instances)?;
        writeln!(f, "accuracy\t{:.6}", self.accuracy)?;
        if let Some(b) = &self.binary {
            writeln!(f, "positive\t{}", b.positive)?;
            writeln!(f, "tp\t{}\tfp\t{}\tfn\t{}\ttn\t{}", b.tp, b.fp, b.fn_, b.tn)?;
            let flag = |x: bool| if x { "\tundefined" } else { "" };
            writeln!(f, "precision\t{:.6}{}", b.precision, flag(b.no_predicted_positives))?;
            writeln!(f, "recall\t{:.6}{}", b.recall, flag(b.no_gold_positives))?;
            writeln!(f, "f1\t{:.6}", b.f1)?;
        }
        for s in &self.subsets {
            writeln!(
                f,
                "subset\t{}\t{}\t{:.6}\t{}",
                s.name,
                s.count,
                s.proportion,
                rate(s.accuracy)
            )?;
        }
        if self.protocol == Protocol::Multiclass {
            for l in &self.per_label {
                writeln!(
                    f,
                    "label\t{}\t{:.6}\t{:.6}\t{:.6}\t{}",
                    l.label, l.precision, l.recall, l.f1, l.support
                )?;
            }
        }
        Ok(())
    }
}

/// SHA-256 over the model's mode, labels, feature keys and training config.
pub fn fingerprint(model: &Model) -> String {
    let mut h = Sha256::new();
    h.update(model.mode.name().as_bytes());
    for l in &model.labels {
        h.update(b"\nlabel:");
        h.update(l.as_bytes());
    }
    if let Some(map) = &model.feature_map {
        h.update(b"\nfeatures:");
        h.update(map.hash().as_bytes());
    }
    if let Some(cfg) = &model.config {
        h.update(b"\nconfig:");
        h.update(serde_json::to_string(cfg).expect("config serializes").as_bytes());
    }
    hex::encode(h.finalize())
}

fn check_labels(model: &Model, ds: &Dataset) -> Result<(), EvalError> {
    for l in ds.labels() {
        if !model.labels.contains(l) {
            return Err(EvalError::LabelMismatch(l.clone()));
        }
    }
    Ok(())
}

fn run(
    protocol: Protocol,
    model: &Model,
    ds: &Dataset,
    emb: &WordEmbeddings,
    positive: Option<&str>,
) -> Result<EvalReport, EvalError> {
    check_labels(model, ds)?;
    let preds: Vec<&str> = model
        .predict_all(&ds.instances, emb)?
        .into_iter()
        .map(|y| model.labels[y].as_str())
        .collect();
    Ok(EvalReport::from_predictions(
        protocol,
        &ds.instances,
        &preds,
        &model.labels,
        positive,
        fingerprint(model),
    ))
}

pub fn eval_multiclass(model: &Model, ds: &Dataset, emb: &WordEmbeddings) -> Result<EvalReport, EvalError> {
    run(Protocol::Multiclass, model, ds, emb, None)
}

/// Precision, recall and F1 of `positive` against everything else.
pub fn eval_binary(model: &Model, ds: &Dataset, emb: &WordEmbeddings, positive: &str) -> Result<EvalReport, EvalError> {
    if !model.labels.iter().any(|l| l == positive) {
        return Err(EvalError::LabelMismatch(positive.to_string()));
    }
    run(Protocol::Binary, model, ds, emb, Some(positive))
}

/// Accuracy split by whether the arguments share an entity.
pub fn coref_subset_report(model: &Model, ds: &Dataset, emb: &WordEmbeddings) -> Result<EvalReport, EvalError> {
    run(Protocol::CorefSubset, model, ds, emb, None)
}
