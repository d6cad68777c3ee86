//! Constituency trees: PTB-style bracket reading, right-branching
//! binarization, multi-span unification and mention-to-node resolution.
//!
//! A [`RawTree`] is the n-ary tree as read from the bracketed string; its
//! category labels are kept for production-rule features. A [`BinaryTree`]
//! is the arena form consumed by composition. Node ids in a `BinaryTree` are
//! assigned in post-order, so every child id is smaller than its parent's id
//! and the root is always the last node.

use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Label given to the synthetic nodes that join multiple argument spans.
pub const SUPER_LABEL: &str = "SUPER";

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum TreeError {
    #[error("unbalanced brackets at byte offset {offset}")]
    UnbalancedBrackets { offset: usize },
    #[error("empty tree at byte offset {offset}")]
    EmptyTree { offset: usize },
    #[error("cannot unify an empty list of trees")]
    EmptyList,
    #[error("mention span [{start}, {end}) out of bounds for {leaves} leaves")]
    SpanOutOfBounds {
        start: usize,
        end: usize,
        leaves: usize,
    },
}

/// N-ary constituency tree with tokens at the leaves.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub enum RawTree {
    Leaf(String),
    Node { label: String, children: Vec<RawTree> },
}

impl RawTree {
    /// Tokens at the leaves, in order.
    pub fn tokens(&self) -> Vec<&str> {
        let mut out = Vec::new();
        self.collect_tokens(&mut out);
        out
    }

    fn collect_tokens<'a>(&'a self, out: &mut Vec<&'a str>) {
        match self {
            RawTree::Leaf(tok) => out.push(tok),
            RawTree::Node { children, .. } => {
                for c in children {
                    c.collect_tokens(out);
                }
            }
        }
    }

    pub fn leaf_count(&self) -> usize {
        match self {
            RawTree::Leaf(_) => 1,
            RawTree::Node { children, .. } => children.iter().map(RawTree::leaf_count).sum(),
        }
    }

    /// Apply `f` to every leaf token.
    pub fn map_tokens(&mut self, f: &impl Fn(&str) -> String) {
        match self {
            RawTree::Leaf(tok) => *tok = f(tok),
            RawTree::Node { children, .. } => {
                for c in children {
                    c.map_tokens(f);
                }
            }
        }
    }
}

impl fmt::Display for RawTree {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            RawTree::Leaf(tok) => write!(f, "{tok}"),
            RawTree::Node { label, children } => {
                write!(f, "({label}")?;
                for c in children {
                    write!(f, " {c}")?;
                }
                write!(f, ")")
            }
        }
    }
}

/// Read one bracketed tree, e.g. `(S (NP she) (VP (V was) (ADJ hungry)))`.
///
/// The outer PTB wrapper `( (S ...) )` with an empty label is accepted and
/// unwrapped. Anything after the closing bracket other than whitespace is
/// reported as unbalanced.
pub fn parse_bracketed_tree(text: &str) -> Result<RawTree, TreeError> {
    let mut parser = Parser {
        src: text.as_bytes(),
        pos: 0,
    };
    parser.skip_ws();
    if parser.pos >= parser.src.len() {
        return Err(TreeError::EmptyTree { offset: parser.pos });
    }
    let tree = parser.tree()?;
    parser.skip_ws();
    if parser.pos != parser.src.len() {
        return Err(TreeError::UnbalancedBrackets { offset: parser.pos });
    }
    Ok(unwrap_root(tree))
}

fn unwrap_root(tree: RawTree) -> RawTree {
    match tree {
        RawTree::Node { label, mut children } if label.is_empty() && children.len() == 1 => {
            children.pop().unwrap()
        }
        t => t,
    }
}

struct Parser<'a> {
    src: &'a [u8],
    pos: usize,
}

impl Parser<'_> {
    fn skip_ws(&mut self) {
        while self.pos < self.src.len() && self.src[self.pos].is_ascii_whitespace() {
            self.pos += 1;
        }
    }

    fn atom(&mut self) -> &str {
        let start = self.pos;
        while self.pos < self.src.len() {
            let b = self.src[self.pos];
            if b.is_ascii_whitespace() || b == b'(' || b == b')' {
                break;
            }
            self.pos += 1;
        }
        // Bracket and whitespace bytes are ASCII, so the slice is on char boundaries.
        std::str::from_utf8(&self.src[start..self.pos]).unwrap()
    }

    fn tree(&mut self) -> Result<RawTree, TreeError> {
        self.skip_ws();
        match self.src.get(self.pos) {
            None => Err(TreeError::UnbalancedBrackets { offset: self.pos }),
            Some(b')') => Err(TreeError::UnbalancedBrackets { offset: self.pos }),
            Some(b'(') => {
                let open = self.pos;
                self.pos += 1;
                self.skip_ws();
                let label = match self.src.get(self.pos) {
                    Some(b'(') => String::new(),
                    _ => self.atom().to_string(),
                };
                let mut children = Vec::new();
                loop {
                    self.skip_ws();
                    match self.src.get(self.pos) {
                        None => return Err(TreeError::UnbalancedBrackets { offset: self.pos }),
                        Some(b')') => {
                            self.pos += 1;
                            break;
                        }
                        Some(_) => children.push(self.tree()?),
                    }
                }
                if children.is_empty() {
                    return Err(TreeError::EmptyTree { offset: open });
                }
                Ok(RawTree::Node { label, children })
            }
            Some(_) => Ok(RawTree::Leaf(self.atom().to_string())),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct NodeId(pub usize);

impl NodeId {
    #[inline]
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub enum NodeKind {
    Leaf { token: String },
    Internal { left: NodeId, right: NodeId },
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Node {
    pub kind: NodeKind,
    /// Category label: the preterminal tag for leaves when one exists.
    pub label: String,
    pub parent: Option<NodeId>,
    /// Half-open token offsets covered by this node.
    pub span: (usize, usize),
}

/// Binarized tree stored as an arena in post-order.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct BinaryTree {
    nodes: Vec<Node>,
}

/// Owned recursive form used while building arenas.
#[derive(Debug, Clone)]
enum Shape {
    Leaf { token: String, label: String },
    Pair { label: String, left: Box<Shape>, right: Box<Shape> },
}

impl BinaryTree {
    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn nodes(&self) -> &[Node] {
        &self.nodes
    }

    pub fn node(&self, id: NodeId) -> &Node {
        &self.nodes[id.0]
    }

    pub fn root(&self) -> NodeId {
        NodeId(self.nodes.len() - 1)
    }

    pub fn parent(&self, id: NodeId) -> Option<NodeId> {
        self.nodes[id.0].parent
    }

    pub fn children(&self, id: NodeId) -> Option<(NodeId, NodeId)> {
        match self.nodes[id.0].kind {
            NodeKind::Internal { left, right } => Some((left, right)),
            NodeKind::Leaf { .. } => None,
        }
    }

    pub fn sibling(&self, id: NodeId) -> Option<NodeId> {
        let p = self.parent(id)?;
        let (l, r) = self.children(p)?;
        Some(if l == id { r } else { l })
    }

    pub fn is_leaf(&self, id: NodeId) -> bool {
        matches!(self.nodes[id.0].kind, NodeKind::Leaf { .. })
    }

    pub fn leaf_count(&self) -> usize {
        self.nodes.iter().filter(|n| matches!(n.kind, NodeKind::Leaf { .. })).count()
    }

    /// Leaf tokens in textual order.
    pub fn tokens(&self) -> Vec<&str> {
        let mut leaves: Vec<(usize, &str)> = self
            .nodes
            .iter()
            .filter_map(|n| match &n.kind {
                NodeKind::Leaf { token } => Some((n.span.0, token.as_str())),
                NodeKind::Internal { .. } => None,
            })
            .collect();
        leaves.sort_by_key(|(pos, _)| *pos);
        leaves.into_iter().map(|(_, t)| t).collect()
    }

    /// Leaf node ids in textual order.
    pub fn leaves(&self) -> Vec<NodeId> {
        let mut leaves: Vec<NodeId> = (0..self.nodes.len())
            .map(NodeId)
            .filter(|&id| self.is_leaf(id))
            .collect();
        leaves.sort_by_key(|id| self.nodes[id.0].span.0);
        leaves
    }

    /// Build a single-leaf tree.
    pub fn leaf(token: impl Into<String>) -> Self {
        Self::from_shape(Shape::Leaf {
            token: token.into(),
            label: String::new(),
        })
    }

    /// Join two trees under a new root.
    pub fn join(label: impl Into<String>, left: &BinaryTree, right: &BinaryTree) -> Self {
        Self::from_shape(Shape::Pair {
            label: label.into(),
            left: Box::new(left.to_shape(left.root())),
            right: Box::new(right.to_shape(right.root())),
        })
    }

    fn to_shape(&self, id: NodeId) -> Shape {
        let node = &self.nodes[id.0];
        match &node.kind {
            NodeKind::Leaf { token } => Shape::Leaf {
                token: token.clone(),
                label: node.label.clone(),
            },
            NodeKind::Internal { left, right } => Shape::Pair {
                label: node.label.clone(),
                left: Box::new(self.to_shape(*left)),
                right: Box::new(self.to_shape(*right)),
            },
        }
    }

    fn from_shape(shape: Shape) -> Self {
        let mut nodes = Vec::new();
        let mut next_leaf = 0;
        push_shape(shape, &mut nodes, &mut next_leaf);
        BinaryTree { nodes }
    }

    /// Check the structural invariants. Used by tests and when trees come from
    /// deserialized data.
    pub fn validate(&self) -> Result<(), String> {
        if self.nodes.is_empty() {
            return Err("tree has no nodes".into());
        }
        let root = self.root();
        let mut parent_seen = vec![0usize; self.nodes.len()];
        for (i, node) in self.nodes.iter().enumerate() {
            match node.parent {
                None if i != root.0 => return Err(format!("node {i} has no parent")),
                Some(_) if i == root.0 => return Err("root has a parent".into()),
                Some(p) if p.0 <= i => return Err(format!("parent of {i} precedes it")),
                _ => {}
            }
            match node.kind {
                NodeKind::Leaf { .. } => {
                    if node.span.1 != node.span.0 + 1 {
                        return Err(format!("leaf {i} spans more than one token"));
                    }
                }
                NodeKind::Internal { left, right } => {
                    for c in [left, right] {
                        if c.0 >= i {
                            return Err(format!("child {} of {i} does not precede it", c.0));
                        }
                        if self.nodes[c.0].parent != Some(NodeId(i)) {
                            return Err(format!("child {} of {i} has wrong parent", c.0));
                        }
                        parent_seen[c.0] += 1;
                    }
                    let (ls, rs) = (self.nodes[left.0].span, self.nodes[right.0].span);
                    if ls.1 != rs.0 || ls.0 != node.span.0 || rs.1 != node.span.1 {
                        return Err(format!("spans of children of {i} do not tile it"));
                    }
                }
            }
        }
        for (i, &count) in parent_seen.iter().enumerate() {
            if i != root.0 && count != 1 {
                return Err(format!("node {i} is the child of {count} nodes"));
            }
        }
        Ok(())
    }
}

fn push_shape(shape: Shape, nodes: &mut Vec<Node>, next_leaf: &mut usize) -> NodeId {
    match shape {
        Shape::Leaf { token, label } => {
            let start = *next_leaf;
            *next_leaf += 1;
            nodes.push(Node {
                kind: NodeKind::Leaf { token },
                label,
                parent: None,
                span: (start, start + 1),
            });
            NodeId(nodes.len() - 1)
        }
        Shape::Pair { label, left, right } => {
            let l = push_shape(*left, nodes, next_leaf);
            let r = push_shape(*right, nodes, next_leaf);
            let span = (nodes[l.0].span.0, nodes[r.0].span.1);
            nodes.push(Node {
                kind: NodeKind::Internal { left: l, right: r },
                label,
                parent: None,
                span,
            });
            let id = NodeId(nodes.len() - 1);
            nodes[l.0].parent = Some(id);
            nodes[r.0].parent = Some(id);
            id
        }
    }
}

impl fmt::Display for BinaryTree {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        fn go(t: &BinaryTree, id: NodeId, f: &mut fmt::Formatter<'_>) -> fmt::Result {
            let node = t.node(id);
            match &node.kind {
                NodeKind::Leaf { token } => write!(f, "{token}"),
                NodeKind::Internal { left, right } => {
                    write!(f, "({} ", node.label)?;
                    go(t, *left, f)?;
                    write!(f, " ")?;
                    go(t, *right, f)?;
                    write!(f, ")")
                }
            }
        }
        go(self, self.root(), f)
    }
}

/// Binarize an n-ary tree. Children `c1..ck` of a node labelled `A` become
/// the right-branching cascade `(A c1 (A| c2 (A| ... ck)))`. Unary nodes are
/// collapsed into their only child; a preterminal's tag is kept as the leaf
/// label.
pub fn binarize(tree: &RawTree) -> BinaryTree {
    BinaryTree::from_shape(binarize_shape(tree, None))
}

fn binarize_shape(tree: &RawTree, tag: Option<&str>) -> Shape {
    match tree {
        RawTree::Leaf(token) => Shape::Leaf {
            token: token.clone(),
            label: tag.unwrap_or_default().to_string(),
        },
        RawTree::Node { label, children } => {
            if children.len() == 1 {
                return binarize_shape(&children[0], Some(label));
            }
            let merged = format!("{label}|");
            let mut parts: Vec<Shape> = children.iter().map(|c| binarize_shape(c, None)).collect();
            let mut acc = parts.pop().unwrap();
            while let Some(prev) = parts.pop() {
                let node_label = if parts.is_empty() { label.clone() } else { merged.clone() };
                acc = Shape::Pair {
                    label: node_label,
                    left: Box::new(prev),
                    right: Box::new(acc),
                };
            }
            acc
        }
    }
}

/// Join the trees of a multi-span argument under a right-branching
/// superstructure of `SUPER` nodes: `t1 . (t2 . (... . tk))`.
pub fn unify_spans(trees: &[BinaryTree]) -> Result<BinaryTree, TreeError> {
    let (last, rest) = trees.split_last().ok_or(TreeError::EmptyList)?;
    let mut acc = last.clone();
    for t in rest.iter().rev() {
        acc = BinaryTree::join(SUPER_LABEL, t, &acc);
    }
    Ok(acc)
}

/// Map a mention's token span onto a node: the node whose leaf span matches
/// exactly if there is one, otherwise the leaf of the span's final token.
pub fn resolve_mention_node(tree: &BinaryTree, span: (usize, usize)) -> Result<NodeId, TreeError> {
    let leaves = tree.leaf_count();
    let (start, end) = span;
    if start >= end || end > leaves {
        return Err(TreeError::SpanOutOfBounds { start, end, leaves });
    }
    // In a binary tree without unary nodes spans are unique, and post-order
    // puts smaller nodes first, so the first hit is the smallest.
    if let Some(i) = tree.nodes.iter().position(|n| n.span == span) {
        return Ok(NodeId(i));
    }
    let last = tree
        .nodes
        .iter()
        .position(|n| matches!(n.kind, NodeKind::Leaf { .. }) && n.span.0 == end - 1)
        .expect("every token position has a leaf");
    Ok(NodeId(last))
}
