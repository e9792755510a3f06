//! Gradient-boosted regression trees with quantile (pinball) loss.
//!
//! Three boosters are trained at the 0.16, 0.50, and 0.84 quantiles. The
//! median booster is the point estimate, clamped to the observed target
//! range, and the spread `max(0, (q84 - q16) / 2)` is the uncertainty — one
//! standard deviation if the conditional distribution were Gaussian.
//!
//! Each booster runs 100 stages at learning rate 0.1 over depth-3 trees. A
//! stage fits its tree to the pinball-loss subgradient and then re-targets
//! every leaf to the requested quantile of the residuals that fall in it,
//! so the ensemble tracks the conditional quantile rather than the mean.
//! Nothing here is randomized: given the same data, the fit is identical.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::tree::{FeaturePolicy, RegressionTree, ThresholdPolicy, TreeParams};
use super::Prediction;

pub(crate) const STAGES: usize = 100;
pub(crate) const LEARNING_RATE: f64 = 0.1;
const TREE_DEPTH: usize = 3;

const QUANTILES: [f64; 3] = [0.16, 0.50, 0.84];

/// q-th quantile of `values` with linear interpolation between order
/// statistics (the convention where position = q * (n - 1)).
pub(crate) fn quantile(values: &[f64], q: f64) -> f64 {
    debug_assert!(!values.is_empty());
    let mut sorted = values.to_vec();
    sorted.sort_by(|a, b| a.partial_cmp(b).expect("finite values"));
    let pos = q * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    if lo == hi {
        sorted[lo]
    } else {
        let frac = pos - lo as f64;
        sorted[lo] * (1.0 - frac) + sorted[hi] * frac
    }
}

#[derive(Debug, Clone)]
struct QuantileBooster {
    base: f64,
    stages: Vec<RegressionTree>,
}

impl QuantileBooster {
    fn fit(inputs: &[Vec<f64>], targets: &[f64], q: f64) -> Self {
        let n = inputs.len();
        let base = quantile(targets, q);
        let mut current: Vec<f64> = vec![base; n];
        let mut stages = Vec::with_capacity(STAGES);
        let indices: Vec<usize> = (0..n).collect();
        // The tree builder only consumes randomness for random feature or
        // threshold policies; with exhaustive policies this stream is unused.
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let params = TreeParams {
            max_depth: Some(TREE_DEPTH),
            min_leaf: 1,
            features: FeaturePolicy::All,
            thresholds: ThresholdPolicy::BestMidpoint,
        };
        for _ in 0..STAGES {
            // Pinball-loss subgradient: q when under-predicting, q-1 otherwise.
            let gradient: Vec<f64> = targets
                .iter()
                .zip(&current)
                .map(|(&y, &f)| if y > f { q } else { q - 1.0 })
                .collect();
            let mut tree = RegressionTree::fit(inputs, &gradient, &indices, params, &mut rng);

            // Line-search per leaf: the quantile of the residuals in the leaf.
            let mut leaf_members: Vec<Vec<f64>> = vec![Vec::new(); tree.n_leaves()];
            for i in 0..n {
                leaf_members[tree.leaf_of(&inputs[i])].push(targets[i] - current[i]);
            }
            let leaf_values: Vec<f64> = leaf_members
                .iter()
                .map(|residuals| {
                    if residuals.is_empty() {
                        0.0
                    } else {
                        quantile(residuals, q)
                    }
                })
                .collect();
            tree.set_leaf_values(&leaf_values);

            for (i, f) in current.iter_mut().enumerate() {
                *f += LEARNING_RATE * tree.predict_one(&inputs[i]);
            }
            stages.push(tree);
        }
        QuantileBooster { base, stages }
    }

    fn predict_one(&self, row: &[f64]) -> f64 {
        self.base
            + LEARNING_RATE
                * self
                    .stages
                    .iter()
                    .map(|t| t.predict_one(row))
                    .sum::<f64>()
    }
}

#[derive(Debug, Clone)]
pub struct GbrtModel {
    lower: QuantileBooster,
    median: QuantileBooster,
    upper: QuantileBooster,
    target_min: f64,
    target_max: f64,
}

impl GbrtModel {
    pub(crate) fn fit(inputs: &[Vec<f64>], targets: &[f64]) -> Self {
        let target_min = targets.iter().cloned().fold(f64::INFINITY, f64::min);
        let target_max = targets.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        GbrtModel {
            lower: QuantileBooster::fit(inputs, targets, QUANTILES[0]),
            median: QuantileBooster::fit(inputs, targets, QUANTILES[1]),
            upper: QuantileBooster::fit(inputs, targets, QUANTILES[2]),
            target_min,
            target_max,
        }
    }

    /// Raw outputs of the three quantile boosters, lowest quantile first.
    /// Exposed so tests can verify the mean/std assembly independently.
    pub fn quantile_predictions(&self, row: &[f64]) -> [f64; 3] {
        [
            self.lower.predict_one(row),
            self.median.predict_one(row),
            self.upper.predict_one(row),
        ]
    }

    pub(crate) fn predict_one(&self, row: &[f64]) -> Prediction {
        let [lo, mid, hi] = self.quantile_predictions(row);
        Prediction {
            mean: mid.clamp(self.target_min, self.target_max),
            std: ((hi - lo) / 2.0).max(0.0),
        }
    }
}
