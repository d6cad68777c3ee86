//! Upward and downward composition over binarized trees.
//!
//! The upward pass builds `u_i = tanh(U [u_left; u_right])` from the leaves
//! (word vectors) to the root. The downward pass starts from `d_root = u_root`
//! and builds `d_i = tanh(D [d_parent; u_sibling])` towards the leaves. Both
//! passes are feedforward, so a single sweep in topological order computes
//! every state in time linear in the tree size.

use ndarray::{Array1, Array2, ArrayView1, ArrayViewMut1};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::embeddings::WordEmbeddings;
use crate::tree::{BinaryTree, NodeId, NodeKind};

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum CompositionError {
    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },
    #[error("downward pass requested before the upward pass")]
    UpwardNotComputed,
    #[error("evaluation order is not a valid schedule for this tree")]
    InvalidOrder,
    #[error("argument has no tokens")]
    EmptyArgument,
}

/// The two composition matrices, each `K x 2K`. There are no bias vectors.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CompositionParams {
    pub up: Array2<f64>,
    pub down: Array2<f64>,
}

impl CompositionParams {
    pub fn zeros(k: usize) -> Self {
        CompositionParams {
            up: Array2::zeros((k, 2 * k)),
            down: Array2::zeros((k, 2 * k)),
        }
    }

    pub fn k(&self) -> usize {
        self.up.nrows()
    }

    pub fn validate(&self) -> Result<(), CompositionError> {
        let k = self.k();
        for m in [&self.up, &self.down] {
            if m.dim() != (k, 2 * k) {
                return Err(CompositionError::DimensionMismatch {
                    expected: 2 * k,
                    found: m.ncols(),
                });
            }
        }
        Ok(())
    }
}

/// Evaluation orders for one tree.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct EvalSchedule {
    /// Children before parents (post-order, left before right).
    pub upward: Vec<NodeId>,
    /// Parents before children (breadth-first from the root, left before
    /// right).
    pub downward: Vec<NodeId>,
    /// `(parent, sibling)` each downward state reads; `None` at the root.
    pub deps: Vec<Option<(NodeId, NodeId)>>,
}

/// Build the canonical evaluation schedule.
pub fn schedule(tree: &BinaryTree) -> EvalSchedule {
    // Node ids are assigned in post-order.
    let upward: Vec<NodeId> = (0..tree.len()).map(NodeId).collect();
    let mut downward = Vec::with_capacity(tree.len());
    downward.push(tree.root());
    let mut head = 0;
    while head < downward.len() {
        if let Some((l, r)) = tree.children(downward[head]) {
            downward.push(l);
            downward.push(r);
        }
        head += 1;
    }
    let deps = (0..tree.len())
        .map(|i| {
            let id = NodeId(i);
            Some((tree.parent(id)?, tree.sibling(id)?))
        })
        .collect();
    EvalSchedule { upward, downward, deps }
}

impl EvalSchedule {
    /// True if `upward` visits children before parents, `downward` visits
    /// parents before children, and each covers every node once.
    pub fn is_valid_for(&self, tree: &BinaryTree) -> bool {
        let n = tree.len();
        let positions = |order: &[NodeId]| -> Option<Vec<usize>> {
            if order.len() != n {
                return None;
            }
            let mut pos = vec![usize::MAX; n];
            for (p, id) in order.iter().enumerate() {
                if id.0 >= n || pos[id.0] != usize::MAX {
                    return None;
                }
                pos[id.0] = p;
            }
            Some(pos)
        };
        let (Some(up), Some(down)) = (positions(&self.upward), positions(&self.downward)) else {
            return false;
        };
        (0..n).all(|i| match tree.parent(NodeId(i)) {
            None => true,
            Some(p) => up[i] < up[p.0] && down[p.0] < down[i],
        })
    }
}

/// Cached upward and downward states for one tree, one row per node.
#[derive(Debug, Clone, PartialEq)]
pub struct NodeStates {
    pub up: Array2<f64>,
    pub down: Option<Array2<f64>>,
    /// Number of node states computed so far. A full up-down evaluation
    /// visits `2n - 1` states because the root's downward state is copied.
    pub visits: usize,
}

impl NodeStates {
    pub fn u(&self, id: NodeId) -> ArrayView1<'_, f64> {
        self.up.row(id.0)
    }

    pub fn u_root(&self) -> ArrayView1<'_, f64> {
        self.up.row(self.up.nrows() - 1)
    }

    /// Downward state of a node; panics if the downward pass has not run.
    pub fn d(&self, id: NodeId) -> ArrayView1<'_, f64> {
        self.down.as_ref().expect("downward pass not computed").row(id.0)
    }
}

/// `out = tanh(w [a; b])`, accumulating each row left to right.
fn compose_into(w: &Array2<f64>, a: ArrayView1<f64>, b: ArrayView1<f64>, mut out: ArrayViewMut1<f64>) {
    let k = a.len();
    for (r, row) in w.rows().into_iter().enumerate() {
        let mut s = 0.0;
        for c in 0..k {
            s += row[c] * a[c];
        }
        for c in 0..k {
            s += row[k + c] * b[c];
        }
        out[r] = s.tanh();
    }
}

fn check_dim(emb: &WordEmbeddings, params: &CompositionParams) -> Result<(), CompositionError> {
    if emb.dim() != params.k() {
        return Err(CompositionError::DimensionMismatch {
            expected: params.k(),
            found: emb.dim(),
        });
    }
    Ok(())
}

pub fn upward_pass(
    tree: &BinaryTree,
    emb: &WordEmbeddings,
    params: &CompositionParams,
) -> Result<NodeStates, CompositionError> {
    check_dim(emb, params)?;
    let order: Vec<NodeId> = (0..tree.len()).map(NodeId).collect();
    Ok(upward_unchecked(tree, emb, params, &order))
}

/// Upward pass in a caller-supplied order, which must put children before
/// parents.
pub fn upward_pass_ordered(
    tree: &BinaryTree,
    emb: &WordEmbeddings,
    params: &CompositionParams,
    order: &[NodeId],
) -> Result<NodeStates, CompositionError> {
    check_dim(emb, params)?;
    let mut seen = vec![false; tree.len()];
    if order.len() != tree.len() {
        return Err(CompositionError::InvalidOrder);
    }
    for &id in order {
        if id.0 >= tree.len() || seen[id.0] {
            return Err(CompositionError::InvalidOrder);
        }
        if let Some((l, r)) = tree.children(id) {
            if !seen[l.0] || !seen[r.0] {
                return Err(CompositionError::InvalidOrder);
            }
        }
        seen[id.0] = true;
    }
    Ok(upward_unchecked(tree, emb, params, order))
}

fn upward_unchecked(
    tree: &BinaryTree,
    emb: &WordEmbeddings,
    params: &CompositionParams,
    order: &[NodeId],
) -> NodeStates {
    let k = params.k();
    let mut up = Array2::zeros((tree.len(), k));
    let mut scratch = Array1::zeros(k);
    for &id in order {
        match &tree.node(id).kind {
            NodeKind::Leaf { token } => up.row_mut(id.0).assign(&emb.lookup(token)),
            NodeKind::Internal { left, right } => {
                compose_into(&params.up, up.row(left.0), up.row(right.0), scratch.view_mut());
                up.row_mut(id.0).assign(&scratch);
            }
        }
    }
    NodeStates {
        up,
        down: None,
        visits: tree.len(),
    }
}

pub fn downward_pass(
    tree: &BinaryTree,
    states: &mut NodeStates,
    params: &CompositionParams,
) -> Result<(), CompositionError> {
    let order = schedule(tree).downward;
    downward_pass_ordered(tree, states, params, &order)
}

/// Downward pass in a caller-supplied parents-before-children order.
pub fn downward_pass_ordered(
    tree: &BinaryTree,
    states: &mut NodeStates,
    params: &CompositionParams,
    order: &[NodeId],
) -> Result<(), CompositionError> {
    let k = params.k();
    if states.up.nrows() != tree.len() || tree.is_empty() {
        return Err(CompositionError::UpwardNotComputed);
    }
    if states.up.ncols() != k {
        return Err(CompositionError::DimensionMismatch {
            expected: k,
            found: states.up.ncols(),
        });
    }
    if order.len() != tree.len() || order[0] != tree.root() {
        return Err(CompositionError::InvalidOrder);
    }
    let mut done = vec![false; tree.len()];
    let mut down = Array2::zeros((tree.len(), k));
    let mut scratch = Array1::zeros(k);
    for &id in order {
        if id.0 >= tree.len() || done[id.0] {
            return Err(CompositionError::InvalidOrder);
        }
        match (tree.parent(id), tree.sibling(id)) {
            (Some(p), Some(s)) => {
                if !done[p.0] {
                    return Err(CompositionError::InvalidOrder);
                }
                compose_into(&params.down, down.row(p.0), states.up.row(s.0), scratch.view_mut());
                down.row_mut(id.0).assign(&scratch);
                states.visits += 1;
            }
            _ => down.row_mut(id.0).assign(&states.up.row(id.0)),
        }
        done[id.0] = true;
    }
    states.down = Some(down);
    Ok(())
}

/// Both passes with the canonical schedule.
pub fn up_down(
    tree: &BinaryTree,
    emb: &WordEmbeddings,
    params: &CompositionParams,
) -> Result<NodeStates, CompositionError> {
    let mut states = upward_pass(tree, emb, params)?;
    downward_pass(tree, &mut states, params)?;
    Ok(states)
}

/// Sum of the tokens' word vectors; unknown tokens add zeros.
pub fn additive_representation<S: AsRef<str>>(
    tokens: &[S],
    emb: &WordEmbeddings,
) -> Result<Array1<f64>, CompositionError> {
    if tokens.is_empty() {
        return Err(CompositionError::EmptyArgument);
    }
    let mut acc = Array1::zeros(emb.dim());
    for t in tokens {
        acc += &emb.lookup(t.as_ref());
    }
    Ok(acc)
}

/// Adjoints flowing into one tree's states.
pub struct TreeAdjoints {
    pub up: Array2<f64>,
    pub down: Array2<f64>,
}

impl TreeAdjoints {
    pub fn zeros(nodes: usize, k: usize) -> Self {
        TreeAdjoints {
            up: Array2::zeros((nodes, k)),
            down: Array2::zeros((nodes, k)),
        }
    }
}

/// Reverse-mode sweep over one tree's up-down graph. Seeds in `adj` are
/// propagated first through the downward states (leaves to root, the reverse
/// of their evaluation), then through the upward states (root to leaves),
/// accumulating into `grad_up` and `grad_down`. Leaf adjoints are dropped
/// since word vectors are fixed.
///
/// With `with_downward = false` the downward adjoints are ignored and
/// `grad_down` is left untouched.
pub fn backprop_tree(
    tree: &BinaryTree,
    states: &NodeStates,
    params: &CompositionParams,
    mut adj: TreeAdjoints,
    with_downward: bool,
    grad_up: &mut Array2<f64>,
    grad_down: &mut Array2<f64>,
) {
    let k = params.k();
    let mut delta = Array1::<f64>::zeros(k);
    if with_downward {
        let down = states.down.as_ref().expect("downward states required");
        let sched = schedule(tree);
        for &id in sched.downward.iter().rev() {
            let Some((p, s)) = sched.deps[id.0] else {
                // d_root is u_root.
                let g = adj.down.row(id.0).to_owned();
                let mut row = adj.up.row_mut(id.0);
                row += &g;
                continue;
            };
            let d_i = down.row(id.0);
            for r in 0..k {
                delta[r] = adj.down[[id.0, r]] * (1.0 - d_i[r] * d_i[r]);
            }
            let d_p = down.row(p.0);
            let u_s = states.up.row(s.0);
            for r in 0..k {
                let dr = delta[r];
                if dr == 0.0 {
                    continue;
                }
                let mut grow = grad_down.row_mut(r);
                let wrow = params.down.row(r);
                for c in 0..k {
                    grow[c] += dr * d_p[c];
                    grow[k + c] += dr * u_s[c];
                    adj.down[[p.0, c]] += wrow[c] * dr;
                    adj.up[[s.0, c]] += wrow[k + c] * dr;
                }
            }
        }
    }
    for i in (0..tree.len()).rev() {
        let Some((l, r_child)) = tree.children(NodeId(i)) else {
            continue;
        };
        let u_i = states.up.row(i);
        for r in 0..k {
            delta[r] = adj.up[[i, r]] * (1.0 - u_i[r] * u_i[r]);
        }
        let u_l = states.up.row(l.0);
        let u_r = states.up.row(r_child.0);
        for r in 0..k {
            let dr = delta[r];
            if dr == 0.0 {
                continue;
            }
            let mut grow = grad_up.row_mut(r);
            let wrow = params.up.row(r);
            for c in 0..k {
                grow[c] += dr * u_l[c];
                grow[k + c] += dr * u_r[c];
                adj.up[[l.0, c]] += wrow[c] * dr;
                adj.up[[r_child.0, c]] += wrow[k + c] * dr;
            }
        }
    }
}
