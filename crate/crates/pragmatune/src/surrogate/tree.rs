//! CART-style regression tree shared by the forest and boosting models.
//!
//! Split choice is deterministic for a fixed RNG stream: candidate features
//! are visited in ascending index order and a new split must be strictly
//! better to replace the incumbent, so score ties resolve to the lowest
//! feature index and then the lowest threshold.

use rand::Rng;
use rand_chacha::ChaCha8Rng;

/// How many features are examined at each node.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub(crate) enum FeaturePolicy {
    /// Every feature (boosting trees).
    All,
    /// `max(1, floor(sqrt(d)))` features drawn without replacement per node.
    SqrtRandom,
}

/// How the split threshold for a candidate feature is chosen.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub(crate) enum ThresholdPolicy {
    /// Best midpoint between consecutive distinct values (exhaustive CART).
    BestMidpoint,
    /// One uniform draw from the feature's value range (extremely randomized).
    UniformRandom,
}

#[derive(Debug, Clone, Copy)]
pub(crate) struct TreeParams {
    pub max_depth: Option<usize>,
    pub min_leaf: usize,
    pub features: FeaturePolicy,
    pub thresholds: ThresholdPolicy,
}

#[derive(Debug, Clone)]
enum Node {
    Leaf {
        value: f64,
        /// Position in leaf-enumeration order; used to retarget leaf values
        /// after a boosting stage.
        leaf_id: usize,
    },
    Split {
        feature: usize,
        threshold: f64,
        left: usize,
        right: usize,
    },
}

#[derive(Debug, Clone)]
pub(crate) struct RegressionTree {
    nodes: Vec<Node>,
    n_leaves: usize,
}

struct Builder<'a> {
    inputs: &'a [Vec<f64>],
    targets: &'a [f64],
    params: TreeParams,
    rng: &'a mut ChaCha8Rng,
    nodes: Vec<Node>,
    n_leaves: usize,
}

/// Best split found for one node, if any.
struct SplitChoice {
    feature: usize,
    threshold: f64,
    score: f64,
}

impl<'a> Builder<'a> {
    /// Sum of squared errors of a sample set around its mean, via the
    /// identity sse = sum(y^2) - sum(y)^2 / n.
    fn sse(sum: f64, sum_sq: f64, n: f64) -> f64 {
        (sum_sq - sum * sum / n).max(0.0)
    }

    fn candidate_features(&mut self, dim: usize) -> Vec<usize> {
        match self.params.features {
            FeaturePolicy::All => (0..dim).collect(),
            FeaturePolicy::SqrtRandom => {
                let m = ((dim as f64).sqrt().floor() as usize).clamp(1, dim);
                let mut picked = rand::seq::index::sample(self.rng, dim, m).into_vec();
                picked.sort_unstable();
                picked
            }
        }
    }

    fn best_split(&mut self, indices: &[usize]) -> Option<SplitChoice> {
        let dim = self.inputs[0].len();
        let features = self.candidate_features(dim);
        let min_leaf = self.params.min_leaf;
        let mut best: Option<SplitChoice> = None;

        for &f in &features {
            match self.params.thresholds {
                ThresholdPolicy::BestMidpoint => {
                    let mut order: Vec<usize> = indices.to_vec();
                    order.sort_by(|&a, &b| {
                        self.inputs[a][f]
                            .partial_cmp(&self.inputs[b][f])
                            .expect("finite feature values")
                    });
                    let total_sum: f64 = order.iter().map(|&i| self.targets[i]).sum();
                    let total_sq: f64 = order.iter().map(|&i| self.targets[i].powi(2)).sum();
                    let n = order.len();
                    let mut left_sum = 0.0;
                    let mut left_sq = 0.0;
                    for cut in 1..n {
                        let prev = order[cut - 1];
                        let here = order[cut];
                        left_sum += self.targets[prev];
                        left_sq += self.targets[prev].powi(2);
                        if self.inputs[prev][f] == self.inputs[here][f] {
                            continue; // not a boundary between distinct values
                        }
                        if cut < min_leaf || n - cut < min_leaf {
                            continue;
                        }
                        let score = Self::sse(left_sum, left_sq, cut as f64)
                            + Self::sse(total_sum - left_sum, total_sq - left_sq, (n - cut) as f64);
                        let threshold = 0.5 * (self.inputs[prev][f] + self.inputs[here][f]);
                        if best.as_ref().is_none_or(|b| score < b.score) {
                            best = Some(SplitChoice { feature: f, threshold, score });
                        }
                    }
                }
                ThresholdPolicy::UniformRandom => {
                    let mut lo = f64::INFINITY;
                    let mut hi = f64::NEG_INFINITY;
                    for &i in indices {
                        lo = lo.min(self.inputs[i][f]);
                        hi = hi.max(self.inputs[i][f]);
                    }
                    if lo == hi {
                        continue;
                    }
                    let threshold = self.rng.random_range(lo..hi);
                    let mut ls = 0.0;
                    let mut lq = 0.0;
                    let mut ln = 0usize;
                    let mut rs = 0.0;
                    let mut rq = 0.0;
                    let mut rn = 0usize;
                    for &i in indices {
                        let y = self.targets[i];
                        if self.inputs[i][f] <= threshold {
                            ls += y;
                            lq += y * y;
                            ln += 1;
                        } else {
                            rs += y;
                            rq += y * y;
                            rn += 1;
                        }
                    }
                    if ln < min_leaf || rn < min_leaf {
                        continue;
                    }
                    let score = Self::sse(ls, lq, ln as f64) + Self::sse(rs, rq, rn as f64);
                    if best.as_ref().is_none_or(|b| score < b.score) {
                        best = Some(SplitChoice { feature: f, threshold, score });
                    }
                }
            }
        }
        best
    }

    fn build(&mut self, indices: &[usize], depth: usize) -> usize {
        let mean = indices.iter().map(|&i| self.targets[i]).sum::<f64>() / indices.len() as f64;
        let homogeneous = indices
            .iter()
            .all(|&i| self.targets[i] == self.targets[indices[0]]);
        let depth_capped = self.params.max_depth.is_some_and(|d| depth >= d);
        let too_small = indices.len() < 2 * self.params.min_leaf;

        let split = if homogeneous || depth_capped || too_small {
            None
        } else {
            self.best_split(indices)
        };

        match split {
            None => {
                let leaf_id = self.n_leaves;
                self.n_leaves += 1;
                self.nodes.push(Node::Leaf { value: mean, leaf_id });
                self.nodes.len() - 1
            }
            Some(choice) => {
                let (left_idx, right_idx): (Vec<usize>, Vec<usize>) = indices
                    .iter()
                    .partition(|&&i| self.inputs[i][choice.feature] <= choice.threshold);
                let left = self.build(&left_idx, depth + 1);
                let right = self.build(&right_idx, depth + 1);
                self.nodes.push(Node::Split {
                    feature: choice.feature,
                    threshold: choice.threshold,
                    left,
                    right,
                });
                self.nodes.len() - 1
            }
        }
    }
}

impl RegressionTree {
    /// Fit on the rows selected by `indices` (with multiplicity, so bootstrap
    /// resamples pass duplicated indices).
    pub(crate) fn fit(
        inputs: &[Vec<f64>],
        targets: &[f64],
        indices: &[usize],
        params: TreeParams,
        rng: &mut ChaCha8Rng,
    ) -> Self {
        assert!(!indices.is_empty(), "cannot fit a tree on zero rows");
        let mut builder = Builder {
            inputs,
            targets,
            params,
            rng,
            nodes: Vec::new(),
            n_leaves: 0,
        };
        builder.build(indices, 0);
        RegressionTree { nodes: builder.nodes, n_leaves: builder.n_leaves }
    }

    fn descend(&self, row: &[f64]) -> &Node {
        let mut at = self.nodes.len() - 1; // root is pushed last
        loop {
            match &self.nodes[at] {
                leaf @ Node::Leaf { .. } => return leaf,
                Node::Split { feature, threshold, left, right } => {
                    at = if row[*feature] <= *threshold { *left } else { *right };
                }
            }
        }
    }

    pub(crate) fn predict_one(&self, row: &[f64]) -> f64 {
        match self.descend(row) {
            Node::Leaf { value, .. } => *value,
            Node::Split { .. } => unreachable!(),
        }
    }

    /// Identifier of the leaf `row` falls into.
    pub(crate) fn leaf_of(&self, row: &[f64]) -> usize {
        match self.descend(row) {
            Node::Leaf { leaf_id, .. } => *leaf_id,
            Node::Split { .. } => unreachable!(),
        }
    }

    pub(crate) fn n_leaves(&self) -> usize {
        self.n_leaves
    }

    /// Replace every leaf value; `values[leaf_id]` becomes the new output.
    pub(crate) fn set_leaf_values(&mut self, values: &[f64]) {
        assert_eq!(values.len(), self.n_leaves);
        for node in &mut self.nodes {
            if let Node::Leaf { value, leaf_id } = node {
                *value = values[*leaf_id];
            }
        }
    }

    /// Root split, if the tree is not a single leaf. Used by tests comparing
    /// split-selection behavior between tree kinds.
    #[cfg(test)]
    pub(crate) fn root_split(&self) -> Option<(usize, f64)> {
        match self.nodes.last() {
            Some(Node::Split { feature, threshold, .. }) => Some((*feature, *threshold)),
            _ => None,
        }
    }
}
