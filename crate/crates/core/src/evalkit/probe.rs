use crate::error::{Error, Result};
use crate::geometry::EmbeddingBatch;
use crate::numerics::{solve_spd, Matrix};

pub const DEFAULT_RIDGE_LAMBDA: f64 = 1e-2;

/// One-vs-all ridge regression classifier with an intercept column.
#[derive(Debug, Clone, PartialEq)]
pub struct RidgeProbe {
    classes: Vec<usize>,
    /// (d + 1) × K, last row is the intercept.
    weights: Matrix,
}

fn augment(x: &Matrix) -> Matrix {
    let (n, d) = x.shape();
    let mut out = Matrix::zeros(n, d + 1);
    for i in 0..n {
        let row = out.row_mut(i);
        row[..d].copy_from_slice(x.row(i));
        row[d] = 1.0;
    }
    out
}

impl RidgeProbe {
    /// `ridge_lambda` is relative to the mean diagonal of the Gram matrix.
    pub fn fit(features: &Matrix, labels: &[usize], ridge_lambda: f64) -> Result<Self> {
        if !(ridge_lambda > 0.0 && ridge_lambda.is_finite()) {
            return Err(Error::InvalidArgument(format!(
                "ridge_lambda must be positive, got {ridge_lambda}"
            )));
        }
        if labels.len() != features.rows() {
            return Err(Error::DimensionMismatch(format!(
                "{} labels for {} rows",
                labels.len(),
                features.rows()
            )));
        }
        let mut classes: Vec<usize> = labels.to_vec();
        classes.sort_unstable();
        classes.dedup();
        let x = augment(features);
        let mut targets = Matrix::zeros(x.rows(), classes.len());
        for (i, l) in labels.iter().enumerate() {
            let c = classes.binary_search(l).expect("label in class set");
            targets[(i, c)] = 1.0;
        }
        let mut gram = x.transpose_matmul(&x)?;
        let p = gram.rows();
        let mean_diag = (0..p).map(|i| gram[(i, i)]).sum::<f64>() / p as f64;
        let lambda = ridge_lambda * mean_diag;
        for i in 0..p {
            gram[(i, i)] += lambda;
        }
        let rhs = x.transpose_matmul(&targets)?;
        let weights = solve_spd(&gram, &rhs)?;
        Ok(Self { classes, weights })
    }

    pub fn classes(&self) -> &[usize] {
        &self.classes
    }

    pub fn predict(&self, features: &Matrix) -> Result<Vec<usize>> {
        if features.cols() + 1 != self.weights.rows() {
            return Err(Error::DimensionMismatch(format!(
                "probe expects dim {}, got {}",
                self.weights.rows() - 1,
                features.cols()
            )));
        }
        let scores = augment(features).matmul(&self.weights)?;
        Ok(scores
            .iter_rows()
            .map(|row| {
                let mut best = 0;
                for (j, &s) in row.iter().enumerate() {
                    if s > row[best] {
                        best = j;
                    }
                }
                self.classes[best]
            })
            .collect())
    }

    pub fn accuracy(&self, features: &Matrix, labels: &[usize]) -> Result<f64> {
        if labels.len() != features.rows() || labels.is_empty() {
            return Err(Error::DimensionMismatch(format!(
                "{} labels for {} rows",
                labels.len(),
                features.rows()
            )));
        }
        let pred = self.predict(features)?;
        let hits = pred.iter().zip(labels).filter(|(a, b)| a == b).count();
        Ok(hits as f64 / labels.len() as f64)
    }
}

/// Fit on text embeddings, score on image embeddings.
pub fn interchangeability_probe(
    train_texts: &EmbeddingBatch,
    test_images: &EmbeddingBatch,
    ridge_lambda: f64,
) -> Result<f64> {
    let (Some(train_labels), Some(test_labels)) = (train_texts.labels(), test_images.labels()) else {
        return Err(Error::InvalidArgument(
            "probe needs labels on both batches".into(),
        ));
    };
    let probe = RidgeProbe::fit(train_texts.vectors(), train_labels, ridge_lambda)?;
    probe.accuracy(test_images.vectors(), test_labels)
}
