use crate::error::{Error, Result};
use crate::numerics::{similarity_matrix, Matrix};

fn hit_rate(sim: &Matrix, k: usize) -> f64 {
    let n = sim.rows();
    let mut hits = 0usize;
    for q in 0..n {
        let row = sim.row(q);
        let target = row[q];
        // Rank of the partner: candidates that beat it, with lower indices winning ties.
        let rank = row
            .iter()
            .enumerate()
            .filter(|&(j, &s)| s > target || (s == target && j < q))
            .count();
        if rank < k {
            hits += 1;
        }
    }
    hits as f64 / n as f64
}

/// Image-to-text and text-to-image recall@k for paired rows.
pub fn recall_at_k(images: &Matrix, texts: &Matrix, k: usize) -> Result<(f64, f64)> {
    if images.shape() != texts.shape() {
        return Err(Error::DimensionMismatch(format!(
            "images {:?} vs texts {:?}",
            images.shape(),
            texts.shape()
        )));
    }
    let n = images.rows();
    if k == 0 || k > n {
        return Err(Error::InvalidArgument(format!(
            "k = {k} must be in 1..={n}"
        )));
    }
    let sim = similarity_matrix(images, texts)?;
    Ok((hit_rate(&sim, k), hit_rate(&sim.transpose(), k)))
}
