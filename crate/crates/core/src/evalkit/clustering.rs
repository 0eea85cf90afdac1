use std::collections::BTreeMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::EmbeddingBatch;
use crate::numerics::Matrix;

pub const KMEANS_MAX_ITERS: usize = 100;
pub const KMEANS_TOL: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq)]
pub struct KMeansResult {
    pub labels: Vec<usize>,
    pub inertia: f64,
    pub centroids: Matrix,
    pub iterations: usize,
}

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

fn nearest(point: &[f64], centroids: &Matrix) -> (usize, f64) {
    let mut best = (0, f64::INFINITY);
    for (c, centroid) in centroids.iter_rows().enumerate() {
        let d = sq_dist(point, centroid);
        if d < best.1 {
            best = (c, d);
        }
    }
    best
}

fn kmeans_pp_init(points: &Matrix, k: usize, rng: &mut ChaCha8Rng) -> Matrix {
    let n = points.rows();
    let mut chosen = vec![rng.random_range(0..n)];
    let mut d2: Vec<f64> = (0..n).map(|i| sq_dist(points.row(i), points.row(chosen[0]))).collect();
    while chosen.len() < k {
        let total: f64 = d2.iter().sum();
        let next = if total > 0.0 {
            let mut target = rng.random::<f64>() * total;
            let mut pick = n - 1;
            for (i, &w) in d2.iter().enumerate() {
                if w <= 0.0 {
                    continue;
                }
                if target < w {
                    pick = i;
                    break;
                }
                target -= w;
            }
            // Floating-point leftovers can land on an already chosen point.
            if d2[pick] <= 0.0 {
                d2.iter().rposition(|&w| w > 0.0).unwrap_or(pick)
            } else {
                pick
            }
        } else {
            // Every remaining point coincides with a center.
            let free: Vec<usize> = (0..n).filter(|i| !chosen.contains(i)).collect();
            free[rng.random_range(0..free.len())]
        };
        chosen.push(next);
        for (i, w) in d2.iter_mut().enumerate() {
            *w = w.min(sq_dist(points.row(i), points.row(next)));
        }
    }
    points.select_rows(&chosen)
}

/// Lloyd's algorithm from a seeded k-means++ start.
///
/// Stops when no centroid moves more than `1e-6` or after 100 iterations.
/// An empty cluster is re-seeded with the point farthest from its current
/// centroid.
pub fn kmeans(points: &Matrix, k: usize, seed: u64) -> Result<KMeansResult> {
    let n = points.rows();
    if k == 0 {
        return Err(Error::InvalidArgument("k must be at least 1".into()));
    }
    if k > n {
        return Err(Error::InvalidArgument(format!("k = {k} exceeds {n} points")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut centroids = kmeans_pp_init(points, k, &mut rng);
    let d = points.cols();
    let mut labels = vec![0usize; n];
    let mut iterations = 0;

    for _ in 0..KMEANS_MAX_ITERS {
        iterations += 1;
        let mut dists = vec![0.0; n];
        for i in 0..n {
            let (c, dist) = nearest(points.row(i), &centroids);
            labels[i] = c;
            dists[i] = dist;
        }
        let mut counts = vec![0usize; k];
        for &l in &labels {
            counts[l] += 1;
        }
        for c in 0..k {
            if counts[c] > 0 {
                continue;
            }
            let far = (0..n)
                .filter(|&i| counts[labels[i]] > 1)
                .max_by(|&a, &b| dists[a].total_cmp(&dists[b]).then(b.cmp(&a)));
            if let Some(i) = far {
                counts[labels[i]] -= 1;
                labels[i] = c;
                counts[c] = 1;
                dists[i] = 0.0;
            }
        }
        let mut next = Matrix::zeros(k, d);
        for i in 0..n {
            for (acc, x) in next.row_mut(labels[i]).iter_mut().zip(points.row(i)) {
                *acc += x;
            }
        }
        for c in 0..k {
            if counts[c] == 0 {
                next.row_mut(c).copy_from_slice(centroids.row(c));
            } else {
                let inv = 1.0 / counts[c] as f64;
                next.row_mut(c).iter_mut().for_each(|v| *v *= inv);
            }
        }
        let shift = (0..k)
            .map(|c| sq_dist(next.row(c), centroids.row(c)).sqrt())
            .fold(0.0, f64::max);
        centroids = next;
        if shift < KMEANS_TOL {
            break;
        }
    }

    let mut inertia = 0.0;
    for i in 0..n {
        let (c, dist) = nearest(points.row(i), &centroids);
        labels[i] = c;
        inertia += dist;
    }
    Ok(KMeansResult {
        labels,
        inertia,
        centroids,
        iterations,
    })
}

fn check_labelings(pred: &[usize], truth: &[usize]) -> Result<()> {
    if pred.len() != truth.len() {
        return Err(Error::DimensionMismatch(format!(
            "{} predicted labels vs {} true labels",
            pred.len(),
            truth.len()
        )));
    }
    if pred.len() < 2 {
        return Err(Error::InvalidArgument(
            "clustering metrics need at least 2 points".into(),
        ));
    }
    Ok(())
}

struct Contingency {
    cells: Vec<Vec<f64>>,
    row_sums: Vec<f64>,
    col_sums: Vec<f64>,
    n: f64,
}

fn contingency(truth: &[usize], pred: &[usize]) -> Contingency {
    let compact = |labels: &[usize]| {
        let mut ids = BTreeMap::new();
        for &l in labels {
            let next = ids.len();
            ids.entry(l).or_insert(next);
        }
        (labels.iter().map(|l| ids[l]).collect::<Vec<_>>(), ids.len())
    };
    let (t, nt) = compact(truth);
    let (p, np) = compact(pred);
    let mut cells = vec![vec![0.0; np]; nt];
    for (&a, &b) in t.iter().zip(&p) {
        cells[a][b] += 1.0;
    }
    let row_sums = cells.iter().map(|r| r.iter().sum()).collect();
    let col_sums = (0..np).map(|j| cells.iter().map(|r| r[j]).sum()).collect();
    Contingency {
        cells,
        row_sums,
        col_sums,
        n: truth.len() as f64,
    }
}

fn comb2(x: f64) -> f64 {
    x * (x - 1.0) / 2.0
}

/// Chance-corrected Rand index from the contingency table.
pub fn adjusted_rand_index(pred: &[usize], truth: &[usize]) -> Result<f64> {
    check_labelings(pred, truth)?;
    let c = contingency(truth, pred);
    let index: f64 = c.cells.iter().flatten().map(|&x| comb2(x)).sum();
    let sum_rows: f64 = c.row_sums.iter().map(|&x| comb2(x)).sum();
    let sum_cols: f64 = c.col_sums.iter().map(|&x| comb2(x)).sum();
    let expected = sum_rows * sum_cols / comb2(c.n);
    let max = 0.5 * (sum_rows + sum_cols);
    if max == expected {
        // Both labelings trivial in the same way (one cluster each, or all singletons).
        return Ok(1.0);
    }
    Ok((index - expected) / (max - expected))
}

fn entropy(counts: &[f64], n: f64) -> f64 {
    counts
        .iter()
        .filter(|&&c| c > 0.0)
        .map(|&c| {
            let p = c / n;
            -p * p.ln()
        })
        .sum()
}

/// Harmonic mean of homogeneity and completeness.
pub fn v_measure(pred: &[usize], truth: &[usize]) -> Result<f64> {
    check_labelings(pred, truth)?;
    let c = contingency(truth, pred);
    let h_class = entropy(&c.row_sums, c.n);
    let h_cluster = entropy(&c.col_sums, c.n);
    let mut h_joint = 0.0;
    for &x in c.cells.iter().flatten() {
        if x > 0.0 {
            let p = x / c.n;
            h_joint -= p * p.ln();
        }
    }
    let h_class_given_cluster = h_joint - h_cluster;
    let h_cluster_given_class = h_joint - h_class;
    let homogeneity = if h_class == 0.0 {
        1.0
    } else {
        1.0 - h_class_given_cluster / h_class
    };
    let completeness = if h_cluster == 0.0 {
        1.0
    } else {
        1.0 - h_cluster_given_class / h_cluster
    };
    if homogeneity + completeness == 0.0 {
        return Ok(0.0);
    }
    Ok(2.0 * homogeneity * completeness / (homogeneity + completeness))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClusterReport {
    pub v_measure: f64,
    pub ari: f64,
    pub k: usize,
    pub n_points: usize,
    pub inertia: f64,
}

/// Cluster the pooled image and text embeddings together and score the
/// result against the shared class labels.
pub fn joint_clustering_eval(
    images: &EmbeddingBatch,
    texts: &EmbeddingBatch,
    k: usize,
    seed: u64,
) -> Result<ClusterReport> {
    let (li, lt) = match (images.labels(), texts.labels()) {
        (Some(a), Some(b)) => (a, b),
        _ => {
            return Err(Error::InvalidArgument(
                "joint clustering needs class labels on both modalities".into(),
            ))
        }
    };
    if k < 2 {
        return Err(Error::InvalidArgument("joint clustering needs k >= 2".into()));
    }
    let pool = images.vectors().vstack(texts.vectors())?;
    let truth: Vec<usize> = li.iter().chain(lt).copied().collect();
    let km = kmeans(&pool, k, seed)?;
    Ok(ClusterReport {
        v_measure: v_measure(&km.labels, &truth)?,
        ari: adjusted_rand_index(&km.labels, &truth)?,
        k,
        n_points: pool.rows(),
        inertia: km.inertia,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::Modality;
    use rand_distr::{Distribution, StandardNormal};

    fn blobs(k: usize, per: usize, spread: f64, seed: u64) -> (Matrix, Vec<usize>) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut rows = Vec::new();
        let mut labels = Vec::new();
        for c in 0..k {
            for _ in 0..per {
                let center = [10.0 * c as f64, -7.0 * (c % 3) as f64];
                rows.push(
                    center
                        .iter()
                        .map(|m| {
                            let z: f64 = StandardNormal.sample(&mut rng);
                            m + spread * z
                        })
                        .collect::<Vec<_>>(),
                );
                labels.push(c);
            }
        }
        (Matrix::from_rows(&rows).unwrap(), labels)
    }

    #[test]
    fn separable_blobs_are_recovered() {
        let (pts, truth) = blobs(4, 25, 0.3, 1);
        let km = kmeans(&pts, 4, 7).unwrap();
        assert_eq!(adjusted_rand_index(&km.labels, &truth).unwrap(), 1.0);
    }

    #[test]
    fn one_cluster_per_point() {
        let (pts, _) = blobs(2, 4, 1.0, 2);
        let km = kmeans(&pts, 8, 0).unwrap();
        assert_eq!(km.inertia, 0.0);
        let mut l = km.labels.clone();
        l.sort();
        assert_eq!(l, (0..8).collect::<Vec<_>>());
        assert!(kmeans(&pts, 9, 0).is_err());
    }

    #[test]
    fn kmeans_is_seed_deterministic() {
        let (pts, _) = blobs(5, 20, 3.0, 3);
        assert_eq!(kmeans(&pts, 5, 11).unwrap(), kmeans(&pts, 5, 11).unwrap());
    }

    #[test]
    fn duplicate_points_still_fill_k_clusters() {
        let pts = Matrix::from_rows(&[[0.0, 0.0], [0.0, 0.0], [0.0, 0.0], [1.0, 1.0]]).unwrap();
        let km = kmeans(&pts, 3, 4).unwrap();
        assert_eq!(km.labels.len(), 4);
        assert_eq!(km.inertia, 0.0);
    }

    #[test]
    fn ari_edge_cases() {
        let truth = [0, 0, 1, 1, 2, 2];
        assert_eq!(adjusted_rand_index(&[5, 5, 3, 3, 9, 9], &truth).unwrap(), 1.0);
        assert_eq!(adjusted_rand_index(&[0; 6], &truth).unwrap(), 0.0);
        assert!(adjusted_rand_index(&[0, 1], &truth).is_err());
        assert!(adjusted_rand_index(&[0], &[0]).is_err());
    }

    #[test]
    fn ari_hand_value() {
        // Pairs: (0,1) same/same, (2,3) diff/same... enumerate all 6:
        // pred=(0,0,1,1), truth=(0,0,0,1)
        // a (same,same)=1 [01]; b (same pred, diff truth)=1 [23];
        // c (diff pred, same truth)=2 [02,12]; d=2 [03,13].
        // ARI = 2(ad - bc) / ((a+b)(b+d) + (a+c)(c+d)) = 2(2-2)/... = 0.
        let v = adjusted_rand_index(&[0, 0, 1, 1], &[0, 0, 0, 1]).unwrap();
        assert!(v.abs() < 1e-15);
    }

    #[test]
    fn v_measure_cases() {
        let truth = [0, 0, 1, 1];
        assert_eq!(v_measure(&[1, 1, 0, 0], &truth).unwrap(), 1.0);
        assert_eq!(v_measure(&[0; 4], &[0; 4]).unwrap(), 1.0);
        // pred=(0,0,1,1) truth=(0,0,0,1): H(C)=H(3/4,1/4), H(K)=ln2, H(C|K)=½ln2, H(K|C)=H(C,K)-H(C).
        let hc = -(0.75_f64 * 0.75_f64.ln() + 0.25 * 0.25_f64.ln());
        let hk = 2f64.ln();
        let h_joint = -(0.5_f64 * 0.5_f64.ln() + 2.0 * 0.25 * 0.25_f64.ln());
        let h = 1.0 - (h_joint - hk) / hc;
        let c = 1.0 - (h_joint - hc) / hk;
        let expected = 2.0 * h * c / (h + c);
        assert!((v_measure(&[0, 0, 1, 1], &[0, 0, 0, 1]).unwrap() - expected).abs() < 1e-15);
    }

    #[test]
    fn joint_clustering_with_identical_modalities() {
        let (pts, truth) = blobs(3, 10, 0.2, 5);
        let v = EmbeddingBatch::new(pts.clone(), Some(truth.clone()), Modality::Image).unwrap();
        let t = EmbeddingBatch::new(pts, Some(truth), Modality::Text).unwrap();
        let r = joint_clustering_eval(&v, &t, 3, 0).unwrap();
        assert!((r.ari - 1.0).abs() < 1e-12);
        assert_eq!(r.n_points, 60);
        let unlabeled = EmbeddingBatch::new(v.vectors().clone(), None, Modality::Image).unwrap();
        assert!(joint_clustering_eval(&unlabeled, &t, 3, 0).is_err());
    }
}
