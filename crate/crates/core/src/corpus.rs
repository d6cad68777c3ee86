//! Argument-pair instances, their coreference structure and the datasets
//! that hold them.
//!
//! Instances are stored one JSON object per line:
//!
//! ```json
//! {"id": "wsj_0001.3", "arg1_trees": ["(S ...)"], "arg2_trees": ["(S ...)"],
//!  "mentions": [{"arg": 1, "span": [0, 1]}, {"arg": 2, "span": [0, 1]}],
//!  "chains": [[0, 1]], "labels": ["Cause"], "split": "train"}
//! ```
//!
//! Mention spans are half-open token offsets into the argument after its
//! trees are concatenated.

use std::collections::{BTreeSet, HashMap};
use std::io::{BufRead, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::embeddings::{is_numeric_token, NUM_TOKEN};
use crate::tree::{binarize, parse_bracketed_tree, resolve_mention_node, unify_spans, BinaryTree, NodeId, RawTree, TreeError};

/// Negative class name used by one-vs-rest views.
pub const OTHER_LABEL: &str = "Other";

#[derive(Debug, Error)]
pub enum CorpusError {
    #[error("tree: {0}")]
    Tree(#[from] TreeError),
    #[error("mention {0} has argument {1}, expected 1 or 2")]
    BadArgument(usize, u8),
    #[error("chain {chain} references mention {mention}, but only {count} mentions exist")]
    BadChainMember { chain: usize, mention: usize, count: usize },
    #[error("mention {0} belongs to more than one chain")]
    MentionInTwoChains(usize),
    #[error("instance has {0} labels, expected 1 or 2")]
    LabelCount(usize),
    #[error("label {0:?} is not in the label set")]
    UnknownLabel(String),
    #[error("line {line}: {source}")]
    Line {
        line: usize,
        #[source]
        source: Box<CorpusError>,
    },
    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Which argument of the pair a mention lies in.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Side {
    M,
    N,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Mention {
    pub side: Side,
    pub span: (usize, usize),
}

/// How chains with several mentions per argument become alignment pairs.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum AlignmentPolicy {
    /// Every cross-argument mention pair of a chain.
    #[default]
    AllPairs,
    /// Only the textually first mention on each side.
    FirstPair,
}

/// One element of A(m, n): a node in each argument tree, both resolved from
/// mentions of the same chain.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct AlignedPair {
    pub chain: usize,
    pub m_mention: usize,
    pub n_mention: usize,
    pub m_node: NodeId,
    pub n_node: NodeId,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MentionRecord {
    pub arg: u8,
    pub span: [usize; 2],
}

/// On-disk form of an instance.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InstanceRecord {
    pub id: String,
    pub arg1_trees: Vec<String>,
    pub arg2_trees: Vec<String>,
    #[serde(default)]
    pub mentions: Vec<MentionRecord>,
    #[serde(default)]
    pub chains: Vec<Vec<usize>>,
    pub labels: Vec<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub split: Option<String>,
}

#[derive(Debug, Clone, Copy, Default)]
pub struct LoadOptions {
    pub alignment: AlignmentPolicy,
    /// Replace numeral tokens with [`NUM_TOKEN`].
    pub map_numeric: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Instance {
    pub id: String,
    /// Original n-ary trees of each argument, kept for production features.
    pub raw_m: Vec<RawTree>,
    pub raw_n: Vec<RawTree>,
    pub arg_m: BinaryTree,
    pub arg_n: BinaryTree,
    pub mentions: Vec<Mention>,
    /// Node each mention resolves to, in its own argument's tree.
    pub mention_nodes: Vec<NodeId>,
    pub chains: Vec<Vec<usize>>,
    pub alignment: Vec<AlignedPair>,
    pub labels: Vec<String>,
    pub split: Option<String>,
}

impl Instance {
    pub fn from_record(rec: &InstanceRecord, opts: LoadOptions) -> Result<Self, CorpusError> {
        let parse_side = |trees: &[String]| -> Result<(Vec<RawTree>, BinaryTree), CorpusError> {
            let mut raws = Vec::with_capacity(trees.len());
            for text in trees {
                let mut raw = parse_bracketed_tree(text)?;
                if opts.map_numeric {
                    raw.map_tokens(&|t: &str| {
                        if is_numeric_token(t) { NUM_TOKEN.to_string() } else { t.to_string() }
                    });
                }
                raws.push(raw);
            }
            let bins: Vec<BinaryTree> = raws.iter().map(binarize).collect();
            Ok((raws, unify_spans(&bins)?))
        };
        let (raw_m, arg_m) = parse_side(&rec.arg1_trees)?;
        let (raw_n, arg_n) = parse_side(&rec.arg2_trees)?;

        let mut mentions = Vec::with_capacity(rec.mentions.len());
        let mut mention_nodes = Vec::with_capacity(rec.mentions.len());
        for (i, m) in rec.mentions.iter().enumerate() {
            let side = match m.arg {
                1 => Side::M,
                2 => Side::N,
                other => return Err(CorpusError::BadArgument(i, other)),
            };
            let span = (m.span[0], m.span[1]);
            let tree = if side == Side::M { &arg_m } else { &arg_n };
            mention_nodes.push(resolve_mention_node(tree, span)?);
            mentions.push(Mention { side, span });
        }

        let mut owner = vec![None; mentions.len()];
        for (c, chain) in rec.chains.iter().enumerate() {
            for &mention in chain {
                let slot = owner.get_mut(mention).ok_or(CorpusError::BadChainMember {
                    chain: c,
                    mention,
                    count: mentions.len(),
                })?;
                if slot.replace(c).is_some() {
                    return Err(CorpusError::MentionInTwoChains(mention));
                }
            }
        }

        if !(1..=2).contains(&rec.labels.len()) {
            return Err(CorpusError::LabelCount(rec.labels.len()));
        }

        let mut inst = Instance {
            id: rec.id.clone(),
            raw_m,
            raw_n,
            arg_m,
            arg_n,
            mentions,
            mention_nodes,
            chains: rec.chains.clone(),
            alignment: Vec::new(),
            labels: rec.labels.clone(),
            split: rec.split.clone(),
        };
        inst.alignment = build_alignments(&inst, opts.alignment);
        Ok(inst)
    }

    pub fn to_record(&self) -> InstanceRecord {
        InstanceRecord {
            id: self.id.clone(),
            arg1_trees: self.raw_m.iter().map(RawTree::to_string).collect(),
            arg2_trees: self.raw_n.iter().map(RawTree::to_string).collect(),
            mentions: self
                .mentions
                .iter()
                .map(|m| MentionRecord {
                    arg: if m.side == Side::M { 1 } else { 2 },
                    span: [m.span.0, m.span.1],
                })
                .collect(),
            chains: self.chains.clone(),
            labels: self.labels.clone(),
            split: self.split.clone(),
        }
    }

    pub fn has_shared_entity(&self) -> bool {
        !self.alignment.is_empty()
    }

    /// Tokens of argument m in textual order.
    pub fn tokens_m(&self) -> Vec<&str> {
        self.arg_m.tokens()
    }

    pub fn tokens_n(&self) -> Vec<&str> {
        self.arg_n.tokens()
    }
}

/// Compute A(m, n) from the instance's chains. Chains confined to one
/// argument contribute nothing.
pub fn build_alignments(inst: &Instance, policy: AlignmentPolicy) -> Vec<AlignedPair> {
    let mut pairs = Vec::new();
    for (c, chain) in inst.chains.iter().enumerate() {
        let mut side_m: Vec<usize> = chain.iter().copied().filter(|&i| inst.mentions[i].side == Side::M).collect();
        let mut side_n: Vec<usize> = chain.iter().copied().filter(|&i| inst.mentions[i].side == Side::N).collect();
        if side_m.is_empty() || side_n.is_empty() {
            continue;
        }
        let textual = |&i: &usize| (inst.mentions[i].span, i);
        side_m.sort_by_key(textual);
        side_n.sort_by_key(textual);
        if policy == AlignmentPolicy::FirstPair {
            side_m.truncate(1);
            side_n.truncate(1);
        }
        for &i in &side_m {
            for &j in &side_n {
                pairs.push(AlignedPair {
                    chain: c,
                    m_mention: i,
                    n_mention: j,
                    m_node: inst.mention_nodes[i],
                    n_node: inst.mention_nodes[j],
                });
            }
        }
    }
    pairs
}

/// Read instances from JSON lines. Blank lines are skipped; errors carry the
/// 1-based line number.
pub fn read_instances<R: BufRead>(reader: R, opts: LoadOptions) -> Result<Vec<Instance>, CorpusError> {
    let mut out = Vec::new();
    for (idx, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let wrap = |e: CorpusError| CorpusError::Line {
            line: idx + 1,
            source: Box::new(e),
        };
        let rec: InstanceRecord = serde_json::from_str(&line).map_err(|e| wrap(e.into()))?;
        out.push(Instance::from_record(&rec, opts).map_err(wrap)?);
    }
    Ok(out)
}

pub fn write_instances<W: Write>(mut w: W, instances: &[Instance]) -> Result<(), CorpusError> {
    for inst in instances {
        serde_json::to_writer(&mut w, &inst.to_record())?;
        w.write_all(b"\n")?;
    }
    Ok(())
}

/// Instances plus the ordered label set Y.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub instances: Vec<Instance>,
    labels: Vec<String>,
    index: HashMap<String, usize>,
    pub source: Option<String>,
    pub split: Option<String>,
}

impl Dataset {
    /// Label order is lexicographic over the labels that occur.
    pub fn new(instances: Vec<Instance>) -> Self {
        let labels: BTreeSet<String> = instances.iter().flat_map(|i| i.labels.iter().cloned()).collect();
        Self::with_labels(instances, labels.into_iter().collect()).expect("labels collected from instances")
    }

    /// Use a fixed label order, e.g. the one stored with a trained model.
    pub fn with_labels(instances: Vec<Instance>, labels: Vec<String>) -> Result<Self, CorpusError> {
        let index: HashMap<String, usize> = labels.iter().enumerate().map(|(i, l)| (l.clone(), i)).collect();
        for inst in &instances {
            for l in &inst.labels {
                if !index.contains_key(l) {
                    return Err(CorpusError::UnknownLabel(l.clone()));
                }
            }
        }
        Ok(Dataset {
            instances,
            labels,
            index,
            source: None,
            split: None,
        })
    }

    pub fn load(path: impl AsRef<Path>, opts: LoadOptions) -> Result<Self, CorpusError> {
        let path = path.as_ref();
        let file = std::fs::File::open(path)?;
        let mut ds = Self::new(read_instances(std::io::BufReader::new(file), opts)?);
        ds.source = Some(path.display().to_string());
        Ok(ds)
    }

    pub fn labels(&self) -> &[String] {
        &self.labels
    }

    pub fn label_index(&self, label: &str) -> Option<usize> {
        self.index.get(label).copied()
    }

    pub fn len(&self) -> usize {
        self.instances.len()
    }

    pub fn is_empty(&self) -> bool {
        self.instances.is_empty()
    }

    /// Gold label indices of one instance.
    pub fn gold(&self, i: usize) -> Vec<usize> {
        self.instances[i].labels.iter().map(|l| self.index[l]).collect()
    }

    /// The training view: one `(instance, gold label)` entry per label, so a
    /// doubly annotated pair counts as two training instances.
    pub fn training_pairs(&self) -> Vec<(usize, usize)> {
        (0..self.len())
            .flat_map(|i| self.gold(i).into_iter().map(move |g| (i, g)))
            .collect()
    }

    /// A new dataset over a subset of instances with the same label order.
    pub fn subset(&self, indices: &[usize]) -> Dataset {
        let mut ds = Dataset::with_labels(
            indices.iter().map(|&i| self.instances[i].clone()).collect(),
            self.labels.clone(),
        )
        .unwrap();
        ds.source = self.source.clone();
        ds.split = self.split.clone();
        ds
    }
}

/// Second-level relation types kept for multiclass evaluation. Condition,
/// Pragmatic condition, Pragmatic contrast, Pragmatic concession and
/// Exception are excluded as too rare.
pub const MULTICLASS_TYPES: [&str; 11] = [
    "Asynchronous",
    "Synchrony",
    "Cause",
    "Pragmatic cause",
    "Contrast",
    "Concession",
    "Conjunction",
    "Instantiation",
    "Restatement",
    "Alternative",
    "List",
];

pub const FIRST_LEVEL_CLASSES: [&str; 4] = ["Comparison", "Contingency", "Expansion", "Temporal"];

const TYPE_TO_CLASS: [(&str, &str); 16] = [
    ("Asynchronous", "Temporal"),
    ("Synchrony", "Temporal"),
    ("Cause", "Contingency"),
    ("Pragmatic cause", "Contingency"),
    ("Condition", "Contingency"),
    ("Pragmatic condition", "Contingency"),
    ("Contrast", "Comparison"),
    ("Pragmatic contrast", "Comparison"),
    ("Concession", "Comparison"),
    ("Pragmatic concession", "Comparison"),
    ("Conjunction", "Expansion"),
    ("Instantiation", "Expansion"),
    ("Restatement", "Expansion"),
    ("Alternative", "Expansion"),
    ("Exception", "Expansion"),
    ("List", "Expansion"),
];

/// Named label mappings applied when a dataset is prepared.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum LabelPreset {
    /// The 11 second-level types.
    Multiclass11,
    /// The four top-level classes with EntRel folded into Expansion.
    FirstLevel,
}

impl LabelPreset {
    /// Map one label; `None` drops it. Labels may be bare (`Cause`) or
    /// dotted (`Contingency.Cause`, `Contingency.Cause.Reason`).
    pub fn map_label(self, label: &str) -> Option<String> {
        let mut parts = label.split('.');
        let head = parts.next().unwrap_or_default();
        let second = parts.next();
        match self {
            LabelPreset::Multiclass11 => {
                let ty = if FIRST_LEVEL_CLASSES.contains(&head) { second? } else { head };
                MULTICLASS_TYPES
                    .iter()
                    .find(|t| t.eq_ignore_ascii_case(ty))
                    .map(|t| t.to_string())
            }
            LabelPreset::FirstLevel => {
                if head == "EntRel" {
                    return Some("Expansion".into());
                }
                if FIRST_LEVEL_CLASSES.contains(&head) {
                    return Some(head.to_string());
                }
                TYPE_TO_CLASS
                    .iter()
                    .find(|(t, _)| t.eq_ignore_ascii_case(head))
                    .map(|(_, c)| c.to_string())
            }
        }
    }

    pub fn label_set(self) -> Vec<String> {
        let mut set: Vec<String> = match self {
            LabelPreset::Multiclass11 => MULTICLASS_TYPES.iter().map(|s| s.to_string()).collect(),
            LabelPreset::FirstLevel => FIRST_LEVEL_CLASSES.iter().map(|s| s.to_string()).collect(),
        };
        set.sort();
        set
    }

    /// Relabel instances, dropping labels outside the preset and instances
    /// left with none. Duplicate labels after mapping collapse to one.
    pub fn apply(self, instances: Vec<Instance>) -> Vec<Instance> {
        instances
            .into_iter()
            .filter_map(|mut inst| {
                let mut mapped: Vec<String> = Vec::new();
                for l in &inst.labels {
                    if let Some(m) = self.map_label(l) {
                        if !mapped.contains(&m) {
                            mapped.push(m);
                        }
                    }
                }
                if mapped.is_empty() {
                    return None;
                }
                inst.labels = mapped;
                Some(inst)
            })
            .collect()
    }
}

/// One-vs-rest view: labels become `[positive, Other]`. An instance is
/// positive if any of its gold labels is `positive`.
pub fn one_vs_rest(ds: &Dataset, positive: &str) -> Dataset {
    let instances = ds
        .instances
        .iter()
        .map(|inst| {
            let mut inst = inst.clone();
            let is_pos = inst.labels.iter().any(|l| l == positive);
            inst.labels = vec![if is_pos { positive.to_string() } else { OTHER_LABEL.to_string() }];
            inst
        })
        .collect();
    let mut out = Dataset::with_labels(instances, vec![positive.to_string(), OTHER_LABEL.to_string()]).unwrap();
    out.source = ds.source.clone();
    out.split = ds.split.clone();
    out
}
