//! Gaussian-process regressor with a squared-exponential kernel.
//!
//! Hyperparameters are set by rule rather than by likelihood optimization:
//! the length-scale is the median pairwise distance of the training inputs
//! (falling back to 1 when degenerate), the signal variance is the target
//! variance, and the noise floor is a 1e-6 multiple of the signal variance.
//! The posterior is the standard closed form through a Cholesky factor.

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};

use super::{Prediction, SurrogateError};

const JITTER_FACTOR: f64 = 1e-6;
const JITTER_FLOOR: f64 = 1e-12;

#[derive(Debug, Clone)]
pub struct GpModel {
    train: Vec<Vec<f64>>,
    y_mean: f64,
    signal_variance: f64,
    length_scale: f64,
    noise_variance: f64,
    chol: Cholesky<f64, Dyn>,
    alpha: DVector<f64>,
}

fn sq_distance(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

impl GpModel {
    pub(crate) fn fit(inputs: &[Vec<f64>], targets: &[f64]) -> Result<Self, SurrogateError> {
        let n = inputs.len();
        let y_mean = targets.iter().sum::<f64>() / n as f64;
        let signal_variance =
            targets.iter().map(|y| (y - y_mean).powi(2)).sum::<f64>() / n as f64;

        // Median heuristic over all pairwise Euclidean distances.
        let mut dists: Vec<f64> = Vec::with_capacity(n * (n - 1) / 2);
        for i in 0..n {
            for j in (i + 1)..n {
                dists.push(sq_distance(&inputs[i], &inputs[j]).sqrt());
            }
        }
        dists.sort_by(|a, b| a.partial_cmp(b).expect("finite inputs"));
        let median = if dists.is_empty() {
            0.0
        } else if dists.len() % 2 == 1 {
            dists[dists.len() / 2]
        } else {
            0.5 * (dists[dists.len() / 2 - 1] + dists[dists.len() / 2])
        };
        let length_scale = if median > 0.0 { median } else { 1.0 };

        let base_noise = (JITTER_FACTOR * signal_variance).max(JITTER_FLOOR);
        let kernel = |a: &[f64], b: &[f64]| {
            signal_variance * (-0.5 * sq_distance(a, b) / (length_scale * length_scale)).exp()
        };

        // Escalate the jitter if the factorization fails numerically.
        let mut noise_variance = base_noise;
        let (chol, alpha) = loop {
            let gram = DMatrix::from_fn(n, n, |i, j| {
                kernel(&inputs[i], &inputs[j]) + if i == j { noise_variance } else { 0.0 }
            });
            if let Some(chol) = Cholesky::new(gram) {
                let centered = DVector::from_iterator(n, targets.iter().map(|y| y - y_mean));
                let alpha = chol.solve(&centered);
                break (chol, alpha);
            }
            noise_variance *= 10.0;
            if noise_variance > signal_variance.max(1.0) {
                return Err(SurrogateError::IllConditioned);
            }
        };

        Ok(GpModel {
            train: inputs.to_vec(),
            y_mean,
            signal_variance,
            length_scale,
            noise_variance,
            chol,
            alpha,
        })
    }

    pub fn length_scale(&self) -> f64 {
        self.length_scale
    }

    pub fn signal_variance(&self) -> f64 {
        self.signal_variance
    }

    pub fn noise_variance(&self) -> f64 {
        self.noise_variance
    }

    /// Prior mean (the training-target mean, since targets are centered).
    pub fn prior_mean(&self) -> f64 {
        self.y_mean
    }

    pub(crate) fn predict_one(&self, row: &[f64]) -> Prediction {
        let n = self.train.len();
        let ell2 = self.length_scale * self.length_scale;
        let k_star = DVector::from_iterator(
            n,
            self.train
                .iter()
                .map(|x| self.signal_variance * (-0.5 * sq_distance(row, x) / ell2).exp()),
        );
        let mean = self.y_mean + k_star.dot(&self.alpha);
        let solved = self.chol.solve(&k_star);
        let variance = (self.signal_variance - k_star.dot(&solved)).max(0.0);
        Prediction { mean, std: variance.sqrt() }
    }
}
