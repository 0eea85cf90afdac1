#![allow(dead_code)]

use gaplab_core::numerics::{l2_normalize_rows, Matrix};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn gaussian(rows: usize, cols: usize, rng: &mut ChaCha8Rng) -> Matrix {
    let data = (0..rows * cols)
        .map(|_| <StandardNormal as Distribution<f64>>::sample(&StandardNormal, rng))
        .collect();
    Matrix::new(rows, cols, data).unwrap()
}

pub fn unit_rows(rows: usize, cols: usize, rng: &mut ChaCha8Rng) -> Matrix {
    l2_normalize_rows(&gaussian(rows, cols, rng), 1e-12).matrix
}

/// Random orthogonal matrix by Gram-Schmidt on Gaussian columns.
pub fn orthogonal(d: usize, rng: &mut ChaCha8Rng) -> Matrix {
    let g = gaussian(d, d, rng);
    let mut cols: Vec<Vec<f64>> = Vec::new();
    for j in 0..d {
        let mut c: Vec<f64> = (0..d).map(|i| g[(i, j)]).collect();
        for _ in 0..2 {
            for q in &cols {
                let p: f64 = c.iter().zip(q).map(|(a, b)| a * b).sum();
                c.iter_mut().zip(q).for_each(|(a, b)| *a -= p * b);
            }
        }
        let n = c.iter().map(|a| a * a).sum::<f64>().sqrt();
        c.iter_mut().for_each(|a| *a /= n);
        cols.push(c);
    }
    let mut q = Matrix::zeros(d, d);
    for (j, c) in cols.iter().enumerate() {
        for i in 0..d {
            q[(i, j)] = c[i];
        }
    }
    q
}

pub fn permutation(n: usize, rng: &mut ChaCha8Rng) -> Vec<usize> {
    use rand::seq::SliceRandom;
    let mut p: Vec<usize> = (0..n).collect();
    p.shuffle(rng);
    p
}
