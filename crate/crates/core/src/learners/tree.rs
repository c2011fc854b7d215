//! CART decision trees with weighted Gini (classification) or weighted
//! squared error (regression) splits.
//!
//! Candidate thresholds are midpoints between consecutive distinct values of
//! a feature among the node's rows; a row goes left when its value is `<=`
//! the threshold. Features are scanned in ascending index order and
//! thresholds in ascending order, and a candidate only replaces the incumbent
//! when it is better by more than a relative `1e-12`, so near-ties resolve to
//! the lowest feature index, then the lowest threshold.

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::{argmax, Matrix, N_CLASSES};

/// Relative tolerance below which two split scores are considered tied.
pub const TIE_TOLERANCE: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TreeParams {
    pub max_depth: Option<usize>,
    pub min_samples_leaf: usize,
    /// Number of features sampled per split; `None` considers all.
    pub features_per_split: Option<usize>,
}

impl Default for TreeParams {
    fn default() -> Self {
        TreeParams { max_depth: None, min_samples_leaf: 1, features_per_split: None }
    }
}

#[derive(Debug, Clone, Copy)]
pub enum TreeTarget<'a> {
    Classes(&'a [usize]),
    Values(&'a [f64]),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum Leaf {
    Probabilities([f64; N_CLASSES]),
    Value(f64),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum Node {
    Split { feature: usize, threshold: f64, left: usize, right: usize },
    Leaf(Leaf),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DecisionTree {
    nodes: Vec<Node>,
}

/// A chosen split: feature, threshold and the children's summed impurity.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Split {
    pub feature: usize,
    pub threshold: f64,
    pub score: f64,
}

impl DecisionTree {
    /// Fits a tree on rows with positive weight. `rng` is only used when
    /// `features_per_split` restricts the candidate features.
    pub fn fit<R: Rng + ?Sized>(
        x: &Matrix,
        target: TreeTarget<'_>,
        weights: &[f64],
        params: &TreeParams,
        rng: &mut R,
    ) -> DecisionTree {
        let rows: Vec<usize> = (0..x.rows()).filter(|&i| weights[i] > 0.0).collect();
        let builder = Builder { x, target, weights, params };
        let mut nodes = Vec::new();
        builder.grow(&mut nodes, rows, 0, rng);
        DecisionTree { nodes }
    }

    pub fn root(&self) -> &Node {
        &self.nodes[0]
    }

    pub fn nodes(&self) -> &[Node] {
        &self.nodes
    }

    pub fn depth(&self) -> usize {
        fn go(nodes: &[Node], i: usize) -> usize {
            match &nodes[i] {
                Node::Leaf(_) => 0,
                Node::Split { left, right, .. } => 1 + go(nodes, *left).max(go(nodes, *right)),
            }
        }
        go(&self.nodes, 0)
    }

    pub fn leaf(&self, row: &[f64]) -> &Leaf {
        let mut i = 0;
        loop {
            match &self.nodes[i] {
                Node::Leaf(l) => return l,
                Node::Split { feature, threshold, left, right } => {
                    i = if row[*feature] <= *threshold { *left } else { *right };
                }
            }
        }
    }

    pub fn predict_proba(&self, row: &[f64]) -> [f64; N_CLASSES] {
        match self.leaf(row) {
            Leaf::Probabilities(p) => *p,
            Leaf::Value(_) => panic!("regression tree queried for probabilities"),
        }
    }

    pub fn predict_class(&self, row: &[f64]) -> usize {
        argmax(&self.predict_proba(row))
    }

    pub fn predict_value(&self, row: &[f64]) -> f64 {
        match self.leaf(row) {
            Leaf::Value(v) => *v,
            Leaf::Probabilities(_) => panic!("classification tree queried for a value"),
        }
    }
}

struct Builder<'a> {
    x: &'a Matrix,
    target: TreeTarget<'a>,
    weights: &'a [f64],
    params: &'a TreeParams,
}

impl Builder<'_> {
    fn grow<R: Rng + ?Sized>(&self, nodes: &mut Vec<Node>, rows: Vec<usize>, depth: usize, rng: &mut R) -> usize {
        let id = nodes.len();
        nodes.push(Node::Leaf(self.leaf_value(&rows)));

        let depth_ok = self.params.max_depth.is_none_or(|d| depth < d);
        if !depth_ok || rows.len() < 2 * self.params.min_samples_leaf.max(1) || self.is_pure(&rows) {
            return id;
        }
        let features = self.candidate_features(rng);
        let Some(split) = best_split(self.x, self.target, self.weights, &rows, &features, self.params.min_samples_leaf)
        else {
            return id;
        };
        let (left_rows, right_rows): (Vec<usize>, Vec<usize>) =
            rows.iter().partition(|&&i| self.x.get(i, split.feature) <= split.threshold);
        let left = self.grow(nodes, left_rows, depth + 1, rng);
        let right = self.grow(nodes, right_rows, depth + 1, rng);
        nodes[id] = Node::Split { feature: split.feature, threshold: split.threshold, left, right };
        id
    }

    fn candidate_features<R: Rng + ?Sized>(&self, rng: &mut R) -> Vec<usize> {
        let d = self.x.cols();
        match self.params.features_per_split {
            Some(k) if k < d => {
                let mut f = rand::seq::index::sample(rng, d, k.max(1)).into_vec();
                f.sort_unstable();
                f
            }
            _ => (0..d).collect(),
        }
    }

    fn is_pure(&self, rows: &[usize]) -> bool {
        match self.target {
            TreeTarget::Classes(c) => rows.iter().all(|&i| c[i] == c[rows[0]]),
            TreeTarget::Values(v) => rows.iter().all(|&i| v[i] == v[rows[0]]),
        }
    }

    fn leaf_value(&self, rows: &[usize]) -> Leaf {
        let w = self.weights;
        match self.target {
            TreeTarget::Classes(c) => {
                let mut p = [0.0; N_CLASSES];
                for &i in rows {
                    p[c[i]] += w[i];
                }
                let total: f64 = p.iter().sum();
                if total > 0.0 {
                    p.iter_mut().for_each(|v| *v /= total);
                } else {
                    p = [1.0 / N_CLASSES as f64; N_CLASSES];
                }
                Leaf::Probabilities(p)
            }
            TreeTarget::Values(v) => {
                let (mut sw, mut swy) = (0.0, 0.0);
                for &i in rows {
                    sw += w[i];
                    swy += w[i] * v[i];
                }
                Leaf::Value(if sw > 0.0 { swy / sw } else { 0.0 })
            }
        }
    }
}

/// Running weighted statistics for one side of a split.
#[derive(Clone, Copy, Default)]
struct SideStats {
    w: f64,
    class_w: [f64; N_CLASSES],
    wy: f64,
    wyy: f64,
}

impl SideStats {
    fn add(&mut self, target: TreeTarget<'_>, i: usize, w: f64) {
        self.w += w;
        match target {
            TreeTarget::Classes(c) => self.class_w[c[i]] += w,
            TreeTarget::Values(v) => {
                self.wy += w * v[i];
                self.wyy += w * v[i] * v[i];
            }
        }
    }

    fn sub(&mut self, target: TreeTarget<'_>, i: usize, w: f64) {
        self.w -= w;
        match target {
            TreeTarget::Classes(c) => self.class_w[c[i]] -= w,
            TreeTarget::Values(v) => {
                self.wy -= w * v[i];
                self.wyy -= w * v[i] * v[i];
            }
        }
    }

    /// Weight times impurity: `W * gini` or the weighted sum of squares.
    fn impurity(&self, target: TreeTarget<'_>) -> f64 {
        if self.w <= 0.0 {
            return 0.0;
        }
        match target {
            TreeTarget::Classes(_) => self.w - self.class_w.iter().map(|c| c * c).sum::<f64>() / self.w,
            TreeTarget::Values(_) => (self.wyy - self.wy * self.wy / self.w).max(0.0),
        }
    }
}

/// Best split of `rows` over `features`, or `None` when no threshold leaves
/// at least `min_samples_leaf` rows on each side.
pub fn best_split(
    x: &Matrix,
    target: TreeTarget<'_>,
    weights: &[f64],
    rows: &[usize],
    features: &[usize],
    min_samples_leaf: usize,
) -> Option<Split> {
    let min_leaf = min_samples_leaf.max(1);
    let mut total = SideStats::default();
    for &i in rows {
        total.add(target, i, weights[i]);
    }

    let mut best: Option<Split> = None;
    let mut order = rows.to_vec();
    for &f in features {
        order.sort_by(|&a, &b| x.get(a, f).total_cmp(&x.get(b, f)).then(a.cmp(&b)));
        let mut left = SideStats::default();
        let mut right = total;
        for k in 0..order.len() - 1 {
            let i = order[k];
            left.add(target, i, weights[i]);
            right.sub(target, i, weights[i]);
            let (lo, hi) = (x.get(i, f), x.get(order[k + 1], f));
            if lo == hi || k + 1 < min_leaf || order.len() - k - 1 < min_leaf {
                continue;
            }
            let score = left.impurity(target) + right.impurity(target);
            let improves = match best {
                None => true,
                Some(b) => score < b.score - TIE_TOLERANCE * (1.0 + b.score.abs()),
            };
            if improves {
                best = Some(Split { feature: f, threshold: midpoint(lo, hi), score });
            }
        }
    }
    best
}

/// Midpoint of two adjacent distinct values that still separates them.
pub fn midpoint(lo: f64, hi: f64) -> f64 {
    let m = lo + (hi - lo) / 2.0;
    if m >= hi {
        lo
    } else {
        m
    }
}
