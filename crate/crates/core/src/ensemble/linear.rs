use nalgebra::{DMatrix, DVector};
use ndarray::Array2;
use serde::{Deserialize, Serialize};

/// Ordinary least squares with an unpenalised intercept.
///
/// Columns and gold are centred, the centred system is solved through the SVD
/// pseudo-inverse (minimum-norm weights when the columns are collinear), and the
/// intercept restores the means.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LinearModel {
    pub weights: Vec<f64>,
    pub intercept: f64,
}

impl LinearModel {
    pub fn fit(x: &Array2<f64>, y: &[f64]) -> Self {
        let (n, p) = x.dim();
        let col_means: Vec<f64> = (0..p).map(|j| x.column(j).sum() / n as f64).collect();
        let y_mean = y.iter().sum::<f64>() / n as f64;
        let xc = DMatrix::from_fn(n, p, |i, j| x[[i, j]] - col_means[j]);
        let yc = DVector::from_iterator(n, y.iter().map(|v| v - y_mean));

        let svd = xc.svd(true, true);
        let max_sv = svd.singular_values.iter().cloned().fold(0.0, f64::max);
        let cutoff = max_sv * n.max(p) as f64 * f64::EPSILON;
        let rank = svd.singular_values.iter().filter(|&&s| s > cutoff).count();
        if rank < p {
            log::info!("least-squares combiner: rank {rank} < {p} columns, using minimum-norm solution");
        }
        let w = if max_sv == 0.0 {
            DVector::zeros(p)
        } else {
            svd.solve(&yc, cutoff).expect("both SVD factors were computed")
        };
        let weights: Vec<f64> = w.iter().copied().collect();
        let intercept = y_mean - weights.iter().zip(&col_means).map(|(w, m)| w * m).sum::<f64>();
        Self { weights, intercept }
    }

    pub fn predict(&self, row: &[f64]) -> f64 {
        row.iter().zip(&self.weights).fold(self.intercept, |acc, (x, w)| acc + x * w)
    }
}
