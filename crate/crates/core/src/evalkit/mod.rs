//! Toy-scale evaluation: joint clustering, retrieval, the text-to-image
//! interchangeability probe and the regression used to compare gap measures.

mod clustering;
mod probe;
mod regression;
mod retrieval;

pub use clustering::{
    adjusted_rand_index, joint_clustering_eval, kmeans, v_measure, ClusterReport, KMeansResult,
    KMEANS_MAX_ITERS, KMEANS_TOL,
};
pub use probe::{interchangeability_probe, RidgeProbe, DEFAULT_RIDGE_LAMBDA};
pub use regression::{linear_fit_r2, LinearFit};
pub use retrieval::recall_at_k;

use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::geometry::gap_report;
use crate::trainkit::TrainOutcome;

/// Final metrics of one trained model, all measured on its eval split.
///
/// Field order is the CSV column order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRecord {
    pub alpha_target: f64,
    pub raw_gap: f64,
    pub centroid_gap: f64,
    pub distribution_gap: f64,
    pub ari: f64,
    pub v_measure: f64,
    pub i2t_r1: f64,
    pub t2i_r1: f64,
    pub probe_accuracy: f64,
    pub erank_image: f64,
    pub erank_text: f64,
    pub fusion_index: f64,
}

impl SweepRecord {
    pub const COLUMNS: [&'static str; 12] = [
        "alpha_target",
        "raw_gap",
        "centroid_gap",
        "distribution_gap",
        "ari",
        "v_measure",
        "i2t_r1",
        "t2i_r1",
        "probe_accuracy",
        "erank_image",
        "erank_text",
        "fusion_index",
    ];

    pub fn values(&self) -> [f64; 12] {
        [
            self.alpha_target,
            self.raw_gap,
            self.centroid_gap,
            self.distribution_gap,
            self.ari,
            self.v_measure,
            self.i2t_r1,
            self.t2i_r1,
            self.probe_accuracy,
            self.erank_image,
            self.erank_text,
            self.fusion_index,
        ]
    }

    pub fn from_values(v: [f64; 12]) -> Self {
        Self {
            alpha_target: v[0],
            raw_gap: v[1],
            centroid_gap: v[2],
            distribution_gap: v[3],
            ari: v[4],
            v_measure: v[5],
            i2t_r1: v[6],
            t2i_r1: v[7],
            probe_accuracy: v[8],
            erank_image: v[9],
            erank_text: v[10],
            fusion_index: v[11],
        }
    }

    /// Column lookup by name, for picking regression axes.
    pub fn column(&self, name: &str) -> Option<f64> {
        Self::COLUMNS
            .iter()
            .position(|c| *c == name)
            .map(|i| self.values()[i])
    }

    /// Field-wise mean.
    pub fn mean(records: &[SweepRecord]) -> Option<SweepRecord> {
        if records.is_empty() {
            return None;
        }
        let mut acc = [0.0; 12];
        for r in records {
            for (a, v) in acc.iter_mut().zip(r.values()) {
                *a += v;
            }
        }
        let n = records.len() as f64;
        Some(Self::from_values(acc.map(|a| a / n)))
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EvalOptions {
    pub ridge_lambda: f64,
}

impl Default for EvalOptions {
    fn default() -> Self {
        Self {
            ridge_lambda: DEFAULT_RIDGE_LAMBDA,
        }
    }
}

/// Score a trained model: gaps, clustering and recall on the eval split,
/// probe trained on train-split texts and tested on eval-split images.
/// `kmeans_seed` is normally the run's training seed.
pub fn evaluate_outcome(
    outcome: &TrainOutcome,
    alpha_target: f64,
    n_classes: usize,
    kmeans_seed: u64,
    opts: EvalOptions,
) -> Result<SweepRecord> {
    let (v_eval, t_eval) = outcome.embed(&outcome.data.eval)?;
    let (_, t_train) = outcome.embed(&outcome.data.train)?;
    let gaps = gap_report(&v_eval, &t_eval)?;
    let clusters = joint_clustering_eval(&v_eval, &t_eval, n_classes, kmeans_seed)?;
    let (i2t_r1, t2i_r1) = recall_at_k(v_eval.vectors(), t_eval.vectors(), 1)?;
    let probe_accuracy = interchangeability_probe(&t_train, &v_eval, opts.ridge_lambda)?;
    Ok(SweepRecord {
        alpha_target,
        raw_gap: gaps.raw_gap,
        centroid_gap: gaps.centroid_gap,
        distribution_gap: gaps.distribution_gap,
        ari: clusters.ari,
        v_measure: clusters.v_measure,
        i2t_r1,
        t2i_r1,
        probe_accuracy,
        erank_image: gaps.erank_image,
        erank_text: gaps.erank_text,
        fusion_index: gaps.fusion_index,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn record_columns_follow_field_order() {
        let r = SweepRecord::from_values(std::array::from_fn(|i| i as f64));
        let json = serde_json::to_value(&r).unwrap();
        let keys: Vec<&str> = json.as_object().unwrap().keys().map(String::as_str).collect();
        let mut sorted_cols = SweepRecord::COLUMNS.to_vec();
        sorted_cols.sort();
        let mut sorted_keys = keys.clone();
        sorted_keys.sort();
        assert_eq!(sorted_keys, sorted_cols);
        for (i, c) in SweepRecord::COLUMNS.iter().enumerate() {
            assert_eq!(r.column(c), Some(i as f64));
        }
        assert_eq!(r.column("nope"), None);
    }

    #[test]
    fn mean_of_records() {
        let a = SweepRecord::from_values([1.0; 12]);
        let b = SweepRecord::from_values([3.0; 12]);
        assert_eq!(SweepRecord::mean(&[a, b]).unwrap(), SweepRecord::from_values([2.0; 12]));
        assert!(SweepRecord::mean(&[]).is_none());
    }
}
