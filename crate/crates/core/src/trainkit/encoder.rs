//! Two-layer tanh perceptron whose outputs are projected onto the unit
//! sphere, with hand-written backpropagation.

use std::sync::atomic::{AtomicU64, Ordering};

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::{dot, norm, Matrix, DEFAULT_NORMALIZE_EPS};

static NEXT_PARAM_VERSION: AtomicU64 = AtomicU64::new(1);

fn fresh_version() -> u64 {
    NEXT_PARAM_VERSION.fetch_add(1, Ordering::Relaxed)
}

/// `x → normalize(tanh(x·W1 + b1)·W2 + b2)`.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Encoder {
    w1: Matrix,
    b1: Vec<f64>,
    w2: Matrix,
    b2: Vec<f64>,
    // Identifies the parameter values a forward cache was computed with.
    #[serde(skip, default = "fresh_version")]
    version: u64,
}

impl PartialEq for Encoder {
    fn eq(&self, other: &Self) -> bool {
        self.w1 == other.w1 && self.b1 == other.b1 && self.w2 == other.w2 && self.b2 == other.b2
    }
}

/// Intermediate values needed by [`Encoder::backward`].
#[derive(Debug, Clone)]
pub struct ForwardCache {
    input: Matrix,
    hidden: Matrix,
    output: Matrix,
    pre_norms: Vec<f64>,
    /// Rows whose pre-normalization norm was below the normalization epsilon.
    pub degenerate: Vec<usize>,
    version: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EncoderGrads {
    pub w1: Matrix,
    pub b1: Vec<f64>,
    pub w2: Matrix,
    pub b2: Vec<f64>,
}

impl EncoderGrads {
    pub fn to_flat(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(
            self.w1.data().len() + self.b1.len() + self.w2.data().len() + self.b2.len(),
        );
        out.extend_from_slice(self.w1.data());
        out.extend_from_slice(&self.b1);
        out.extend_from_slice(self.w2.data());
        out.extend_from_slice(&self.b2);
        out
    }
}

impl Encoder {
    /// Weights drawn from `N(0, 1/fan_in)`, biases zero.
    pub fn new<R: Rng + ?Sized>(input_dim: usize, hidden_dim: usize, output_dim: usize, rng: &mut R) -> Self {
        assert!(input_dim > 0 && hidden_dim > 0 && output_dim > 0);
        let mut draw = |rows: usize, cols: usize| {
            let std = 1.0 / (rows as f64).sqrt();
            let data = (0..rows * cols)
                .map(|_| {
                    let z: f64 = StandardNormal.sample(rng);
                    std * z
                })
                .collect();
            Matrix::new(rows, cols, data).expect("finite init")
        };
        let w1 = draw(input_dim, hidden_dim);
        let w2 = draw(hidden_dim, output_dim);
        Self {
            w1,
            b1: vec![0.0; hidden_dim],
            w2,
            b2: vec![0.0; output_dim],
            version: fresh_version(),
        }
    }

    pub fn from_parts(w1: Matrix, b1: Vec<f64>, w2: Matrix, b2: Vec<f64>) -> Result<Self> {
        if b1.len() != w1.cols() || w2.rows() != w1.cols() || b2.len() != w2.cols() {
            return Err(Error::DimensionMismatch(format!(
                "encoder layers {}x{} (+{}), {}x{} (+{})",
                w1.rows(),
                w1.cols(),
                b1.len(),
                w2.rows(),
                w2.cols(),
                b2.len()
            )));
        }
        if !b1.iter().chain(&b2).all(|v| v.is_finite()) {
            return Err(Error::NonFinite("encoder bias".into()));
        }
        Ok(Self {
            w1,
            b1,
            w2,
            b2,
            version: fresh_version(),
        })
    }

    pub fn input_dim(&self) -> usize {
        self.w1.rows()
    }

    pub fn hidden_dim(&self) -> usize {
        self.w1.cols()
    }

    pub fn output_dim(&self) -> usize {
        self.w2.cols()
    }

    pub fn num_params(&self) -> usize {
        self.w1.data().len() + self.b1.len() + self.w2.data().len() + self.b2.len()
    }

    pub fn to_flat(&self) -> Vec<f64> {
        EncoderGrads {
            w1: self.w1.clone(),
            b1: self.b1.clone(),
            w2: self.w2.clone(),
            b2: self.b2.clone(),
        }
        .to_flat()
    }

    /// Overwrite all parameters from a flat slice in [`Encoder::to_flat`]
    /// order. Invalidates outstanding forward caches.
    pub fn set_flat(&mut self, flat: &[f64]) -> Result<()> {
        if flat.len() != self.num_params() {
            return Err(Error::DimensionMismatch(format!(
                "{} values for {} encoder parameters",
                flat.len(),
                self.num_params()
            )));
        }
        if let Some(i) = flat.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite(format!("encoder parameter {i}")));
        }
        let mut rest = flat;
        for dst in [
            self.w1.data_mut(),
            &mut self.b1[..],
            self.w2.data_mut(),
            &mut self.b2[..],
        ] {
            let (head, tail) = rest.split_at(dst.len());
            dst.copy_from_slice(head);
            rest = tail;
        }
        self.version = fresh_version();
        Ok(())
    }

    fn check_input(&self, x: &Matrix) -> Result<()> {
        if x.cols() != self.input_dim() {
            return Err(Error::DimensionMismatch(format!(
                "encoder expects {}-dim input, got {}",
                self.input_dim(),
                x.cols()
            )));
        }
        Ok(())
    }

    /// Unit-norm embeddings plus the cache for [`Encoder::backward`].
    pub fn forward(&self, x: &Matrix) -> Result<(Matrix, ForwardCache)> {
        self.check_input(x)?;
        let mut hidden = x.matmul(&self.w1)?;
        for r in 0..hidden.rows() {
            for (h, b) in hidden.row_mut(r).iter_mut().zip(&self.b1) {
                *h = (*h + b).tanh();
            }
        }
        let mut out = hidden.matmul(&self.w2)?;
        let mut pre_norms = Vec::with_capacity(out.rows());
        let mut degenerate = Vec::new();
        for r in 0..out.rows() {
            let row = out.row_mut(r);
            for (o, b) in row.iter_mut().zip(&self.b2) {
                *o += b;
            }
            let n = norm(row);
            pre_norms.push(n);
            if n < DEFAULT_NORMALIZE_EPS {
                degenerate.push(r);
            } else {
                row.iter_mut().for_each(|v| *v /= n);
            }
        }
        let cache = ForwardCache {
            input: x.clone(),
            hidden,
            output: out.clone(),
            pre_norms,
            degenerate,
            version: self.version,
        };
        Ok((out, cache))
    }

    /// Embeddings only.
    pub fn embed(&self, x: &Matrix) -> Result<Matrix> {
        Ok(self.forward(x)?.0)
    }

    /// Parameter gradients given the gradient w.r.t. the normalized outputs.
    pub fn backward(&self, cache: &ForwardCache, grad_out: &Matrix) -> Result<EncoderGrads> {
        if cache.version != self.version {
            return Err(Error::InvalidArgument(
                "forward cache is stale: encoder parameters changed since it was computed".into(),
            ));
        }
        if grad_out.shape() != cache.output.shape() {
            return Err(Error::DimensionMismatch(format!(
                "output gradient {}x{} vs output {}x{}",
                grad_out.rows(),
                grad_out.cols(),
                cache.output.rows(),
                cache.output.cols()
            )));
        }
        // Through the normalization: dz = (g − y (yᵀg)) / ‖z‖.
        let mut grad_pre = grad_out.clone();
        for r in 0..grad_pre.rows() {
            let n = cache.pre_norms[r];
            if n < DEFAULT_NORMALIZE_EPS {
                continue;
            }
            let y = cache.output.row(r);
            let g = grad_pre.row_mut(r);
            let radial = dot(y, g);
            for (gi, yi) in g.iter_mut().zip(y) {
                *gi = (*gi - yi * radial) / n;
            }
        }
        let w2 = cache.hidden.transpose_matmul(&grad_pre)?;
        let b2 = grad_pre.column_means().iter().map(|m| m * grad_pre.rows() as f64).collect();
        let mut grad_hidden = grad_pre.matmul(&self.w2.transpose())?;
        for r in 0..grad_hidden.rows() {
            for (g, h) in grad_hidden.row_mut(r).iter_mut().zip(cache.hidden.row(r)) {
                *g *= 1.0 - h * h;
            }
        }
        let w1 = cache.input.transpose_matmul(&grad_hidden)?;
        let b1 = grad_hidden.column_means().iter().map(|m| m * grad_hidden.rows() as f64).collect();
        Ok(EncoderGrads { w1, b1, w2, b2 })
    }
}
