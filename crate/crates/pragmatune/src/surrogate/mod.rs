//! Surrogate regressors over encoded configurations.
//!
//! Every learner returns both a point estimate and an uncertainty for each
//! query — the pair the acquisition function needs. Four families are
//! supported: random forest (`RF`), extremely randomized trees (`ET`),
//! gradient-boosted quantile trees (`GBRT`), and a Gaussian process (`GP`).
//! Fitting is deterministic given (data, seed); the tree ensembles consume
//! the seed, GBRT and GP are deterministic by construction.

mod forest;
mod gbrt;
mod gp;
mod tree;

use std::fmt;
use std::str::FromStr;

pub use forest::{ForestKind, ForestModel};
pub use gbrt::GbrtModel;
pub use gp::GpModel;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::space::EncodingScheme;

#[derive(Debug, Error)]
pub enum SurrogateError {
    #[error("training set is empty")]
    EmptyTrainingSet,
    #[error("training target at row {row} is not finite")]
    NonFiniteTarget { row: usize },
    #[error("training rows have inconsistent widths ({first} vs {other} at row {row})")]
    RaggedInputs { first: usize, other: usize, row: usize },
    #[error("{kind} needs at least {needed} training rows, got {got}")]
    TooFewRows { kind: SurrogateKind, needed: usize, got: usize },
    #[error("query row has {got} components, model expects {expected}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("kernel matrix is not positive definite even under escalated jitter")]
    IllConditioned,
    #[error("unknown learner `{0}` (expected RF, ET, GBRT, or GP)")]
    UnknownKind(String),
}

/// Which learner family to fit.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum SurrogateKind {
    Rf,
    Et,
    Gbrt,
    Gp,
}

impl SurrogateKind {
    pub const ALL: [SurrogateKind; 4] = [
        SurrogateKind::Rf,
        SurrogateKind::Et,
        SurrogateKind::Gbrt,
        SurrogateKind::Gp,
    ];

    /// Encoding layout this learner expects.
    pub fn encoding_scheme(self) -> EncodingScheme {
        match self {
            SurrogateKind::Gp => EncodingScheme::Gp,
            _ => EncodingScheme::Tree,
        }
    }

    pub fn min_rows(self) -> usize {
        match self {
            SurrogateKind::Rf | SurrogateKind::Et => 1,
            SurrogateKind::Gbrt | SurrogateKind::Gp => 2,
        }
    }
}

impl fmt::Display for SurrogateKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            SurrogateKind::Rf => "RF",
            SurrogateKind::Et => "ET",
            SurrogateKind::Gbrt => "GBRT",
            SurrogateKind::Gp => "GP",
        };
        f.write_str(s)
    }
}

impl FromStr for SurrogateKind {
    type Err = SurrogateError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "RF" => Ok(SurrogateKind::Rf),
            "ET" => Ok(SurrogateKind::Et),
            "GBRT" => Ok(SurrogateKind::Gbrt),
            "GP" => Ok(SurrogateKind::Gp),
            other => Err(SurrogateError::UnknownKind(other.to_string())),
        }
    }
}

/// Encoded observations a surrogate is fit on.
#[derive(Debug, Clone)]
pub struct TrainingSet {
    inputs: Vec<Vec<f64>>,
    targets: Vec<f64>,
}

impl TrainingSet {
    pub fn new(inputs: Vec<Vec<f64>>, targets: Vec<f64>) -> Result<Self, SurrogateError> {
        if inputs.is_empty() || inputs.len() != targets.len() {
            return Err(SurrogateError::EmptyTrainingSet);
        }
        let width = inputs[0].len();
        for (row, input) in inputs.iter().enumerate() {
            if input.len() != width {
                return Err(SurrogateError::RaggedInputs {
                    first: width,
                    other: input.len(),
                    row,
                });
            }
        }
        for (row, y) in targets.iter().enumerate() {
            if !y.is_finite() {
                return Err(SurrogateError::NonFiniteTarget { row });
            }
        }
        Ok(TrainingSet { inputs, targets })
    }

    pub fn len(&self) -> usize {
        self.inputs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.inputs.is_empty()
    }

    pub fn width(&self) -> usize {
        self.inputs[0].len()
    }

    pub fn inputs(&self) -> &[Vec<f64>] {
        &self.inputs
    }

    pub fn targets(&self) -> &[f64] {
        &self.targets
    }
}

/// Point estimate and predictive uncertainty for one query row.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Prediction {
    pub mean: f64,
    pub std: f64,
}

/// A fitted surrogate of any family.
#[derive(Debug, Clone)]
pub enum Surrogate {
    Forest(ForestModel),
    Boosted(GbrtModel),
    Process(GpModel),
}

/// Fit `kind` on `data`. The seed feeds the tree ensembles' randomness;
/// GBRT and GP ignore it.
pub fn fit(kind: SurrogateKind, data: &TrainingSet, seed: u64) -> Result<Surrogate, SurrogateError> {
    let needed = kind.min_rows();
    if data.len() < needed {
        return Err(SurrogateError::TooFewRows { kind, needed, got: data.len() });
    }
    Ok(match kind {
        SurrogateKind::Rf => Surrogate::Forest(ForestModel::fit(
            ForestKind::RandomForest,
            data.inputs(),
            data.targets(),
            seed,
        )),
        SurrogateKind::Et => Surrogate::Forest(ForestModel::fit(
            ForestKind::ExtraTrees,
            data.inputs(),
            data.targets(),
            seed,
        )),
        SurrogateKind::Gbrt => Surrogate::Boosted(GbrtModel::fit(data.inputs(), data.targets())),
        SurrogateKind::Gp => Surrogate::Process(GpModel::fit(data.inputs(), data.targets())?),
    })
}

impl Surrogate {
    /// Predict mean and uncertainty for each query row.
    pub fn predict(&self, rows: &[Vec<f64>], expected_width: usize) -> Result<Vec<Prediction>, SurrogateError> {
        for row in rows {
            if row.len() != expected_width {
                return Err(SurrogateError::DimensionMismatch {
                    expected: expected_width,
                    got: row.len(),
                });
            }
        }
        Ok(rows
            .iter()
            .map(|row| match self {
                Surrogate::Forest(m) => m.predict_one(row),
                Surrogate::Boosted(m) => m.predict_one(row),
                Surrogate::Process(m) => m.predict_one(row),
            })
            .collect())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn grid_data() -> TrainingSet {
        let inputs: Vec<Vec<f64>> = (0..30)
            .map(|i| vec![(i % 6) as f64, (i / 6) as f64])
            .collect();
        let targets: Vec<f64> = inputs
            .iter()
            .map(|r| (r[0] - 2.0).powi(2) + 0.5 * r[1] + 1.0)
            .collect();
        TrainingSet::new(inputs, targets).unwrap()
    }

    #[test]
    fn kinds_parse_and_display_round_trip() {
        for kind in SurrogateKind::ALL {
            assert_eq!(kind.to_string().parse::<SurrogateKind>().unwrap(), kind);
        }
        assert!(matches!(
            "xgboost".parse::<SurrogateKind>(),
            Err(SurrogateError::UnknownKind(_))
        ));
    }

    #[test]
    fn training_set_rejects_bad_shapes() {
        assert!(matches!(
            TrainingSet::new(vec![], vec![]),
            Err(SurrogateError::EmptyTrainingSet)
        ));
        assert!(matches!(
            TrainingSet::new(vec![vec![1.0], vec![1.0, 2.0]], vec![0.0, 0.0]),
            Err(SurrogateError::RaggedInputs { .. })
        ));
        assert!(matches!(
            TrainingSet::new(vec![vec![1.0]], vec![f64::NAN]),
            Err(SurrogateError::NonFiniteTarget { row: 0 })
        ));
    }

    #[test]
    fn ensemble_means_stay_inside_the_target_range() {
        let data = grid_data();
        let lo = data.targets().iter().cloned().fold(f64::INFINITY, f64::min);
        let hi = data.targets().iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let queries: Vec<Vec<f64>> = (0..40)
            .map(|i| vec![(i as f64) * 0.2 - 1.0, (i as f64) * 0.15])
            .collect();
        for kind in [SurrogateKind::Rf, SurrogateKind::Et, SurrogateKind::Gbrt] {
            let model = fit(kind, &data, 5).unwrap();
            for p in model.predict(&queries, data.width()).unwrap() {
                assert!(
                    p.mean >= lo && p.mean <= hi,
                    "{kind} mean {} escapes [{lo}, {hi}]",
                    p.mean
                );
                assert!(p.std >= 0.0);
            }
        }
    }

    #[test]
    fn single_constant_row_is_predicted_exactly_by_forests() {
        let data = TrainingSet::new(vec![vec![0.5, 0.5]; 5], vec![1.0; 5]).unwrap();
        for kind in [SurrogateKind::Rf, SurrogateKind::Et] {
            let model = fit(kind, &data, 0).unwrap();
            let p = &model.predict(&[vec![0.5, 0.5]], 2).unwrap()[0];
            assert_eq!(p.mean, 1.0);
            assert_eq!(p.std, 0.0);
        }
    }

    #[test]
    fn row_minimums_are_enforced_per_kind() {
        let one = TrainingSet::new(vec![vec![0.0]], vec![1.0]).unwrap();
        assert!(fit(SurrogateKind::Rf, &one, 0).is_ok());
        assert!(matches!(
            fit(SurrogateKind::Gbrt, &one, 0),
            Err(SurrogateError::TooFewRows { needed: 2, .. })
        ));
        assert!(matches!(
            fit(SurrogateKind::Gp, &one, 0),
            Err(SurrogateError::TooFewRows { needed: 2, .. })
        ));
    }

    #[test]
    fn predict_rejects_wrong_width() {
        let data = grid_data();
        let model = fit(SurrogateKind::Rf, &data, 0).unwrap();
        assert!(matches!(
            model.predict(&[vec![1.0]], data.width()),
            Err(SurrogateError::DimensionMismatch { expected: 2, got: 1 })
        ));
    }

    #[test]
    fn same_seed_same_predictions_across_fits() {
        let data = grid_data();
        let queries: Vec<Vec<f64>> = (0..10).map(|i| vec![i as f64 * 0.37, 1.1]).collect();
        for kind in SurrogateKind::ALL {
            let a = fit(kind, &data, 123).unwrap().predict(&queries, 2).unwrap();
            let b = fit(kind, &data, 123).unwrap().predict(&queries, 2).unwrap();
            for (pa, pb) in a.iter().zip(&b) {
                assert_eq!(pa.mean.to_bits(), pb.mean.to_bits(), "{kind}");
                assert_eq!(pa.std.to_bits(), pb.std.to_bits(), "{kind}");
            }
        }
    }
}
