//! Contrastive and cross-modal alignment losses with analytic gradients.
//!
//! All losses take paired embedding matrices `V` (images) and `T` (texts),
//! both N×d and expected to be row-normalized, plus a learnable
//! [`Temperature`]. Logits are `τ · similarity`. Every cross-entropy term is
//! a mean over rows and every symmetric loss carries a ½ prefactor, so
//!
//! * [`clip_loss`] is symmetric InfoNCE,
//! * [`reweighted_loss`] with `beta = 0` is exactly [`clip_loss`],
//! * [`cma_loss`] is `(1 − α)·reweighted(β = 0.05α) + α·intra`, which equals
//!   `clip_loss` at `α = 0` and [`intra_loss`] at `α = 1`.
//!
//! Gradients are taken with respect to the (already normalized) inputs and
//! the temperature's log-scale. Backpropagation through normalization
//! happens in the encoder.

use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::{dot, log_sum_exp, row_cross_entropy, similarity_matrix, Matrix};

/// `ln(100)`: the temperature never exceeds 100.
pub const MAX_LOG_SCALE: f64 = 4.605_170_185_988_092;

/// Negative-reweighting strength per unit of alignment weight.
pub const BETA_PER_ALPHA: f64 = 0.05;

/// Upper bound on the negative-reweighting strength.
pub const MAX_BETA: f64 = 0.05;

/// Learnable logit scale, parameterized as `τ = exp(log_scale)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Temperature {
    log_scale: f64,
}

impl Temperature {
    /// Clamps `log_scale` to at most `ln(100)`.
    pub fn new(log_scale: f64) -> Self {
        Self {
            log_scale: log_scale.min(MAX_LOG_SCALE),
        }
    }

    pub fn from_tau(tau: f64) -> Self {
        Self::new(tau.ln())
    }

    pub fn log_scale(&self) -> f64 {
        self.log_scale
    }

    pub fn tau(&self) -> f64 {
        self.log_scale.exp()
    }

    pub fn set_log_scale(&mut self, log_scale: f64) {
        self.log_scale = log_scale.min(MAX_LOG_SCALE);
    }

    // Finite differences must be able to step past the clamp.
    fn unclamped(log_scale: f64) -> Self {
        Self { log_scale }
    }
}

impl Default for Temperature {
    /// `τ = 1 / 0.07`.
    fn default() -> Self {
        Self::new((1.0_f64 / 0.07).ln())
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct LossDiagnostics {
    /// Attraction part of the unmasked image→text cross-entropy.
    pub align_term: f64,
    /// Repulsion part of the unmasked image→text cross-entropy.
    pub oppose_term: f64,
    pub rw_term: f64,
    pub intra_term: f64,
    /// Frobenius norm over (V, T) of the reweighted-loss gradient.
    pub grad_norm_rw: f64,
    /// Frobenius norm over (V, T) of the intra-modal loss gradient.
    pub grad_norm_intra: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LossOutput {
    pub loss: f64,
    pub grad_images: Matrix,
    pub grad_texts: Matrix,
    pub grad_log_scale: f64,
    pub diagnostics: LossDiagnostics,
}

impl LossOutput {
    fn embedding_grad_norm(&self) -> f64 {
        let a = self.grad_images.frobenius_norm();
        let b = self.grad_texts.frobenius_norm();
        (a * a + b * b).sqrt()
    }
}

/// Gradient of one scalar term w.r.t. V, T and the log-scale.
#[derive(Debug, Clone, PartialEq)]
pub struct TermGradient {
    pub images: Matrix,
    pub texts: Matrix,
    pub log_scale: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ClipDecomposition {
    pub align_term: f64,
    pub oppose_term: f64,
    pub align_grad: TermGradient,
    pub oppose_grad: TermGradient,
}

fn check_pair(v: &Matrix, t: &Matrix) -> Result<()> {
    if v.shape() != t.shape() {
        return Err(Error::DimensionMismatch(format!(
            "image embeddings {}x{} vs text embeddings {}x{}",
            v.rows(),
            v.cols(),
            t.rows(),
            t.cols()
        )));
    }
    Ok(())
}

fn diagonal_labels(n: usize) -> Vec<usize> {
    (0..n).collect()
}

fn decompose_from_logits(logits: &Matrix) -> (f64, f64) {
    let n = logits.rows() as f64;
    let mut align = 0.0;
    let mut oppose = 0.0;
    for (i, row) in logits.iter_rows().enumerate() {
        align -= row[i];
        oppose += log_sum_exp(row);
    }
    (align / n, oppose / n)
}

/// Symmetric cross-entropy on `M ⊙ (τ V Tᵀ)` where `M` is 1 on the diagonal
/// and `off_diag` elsewhere.
fn masked_cross_modal(v: &Matrix, t: &Matrix, temp: &Temperature, off_diag: f64) -> Result<LossOutput> {
    check_pair(v, t)?;
    let n = v.rows();
    let tau = temp.tau();
    let sim = similarity_matrix(v, t)?;
    let raw_logits = sim.scale(tau);
    let mut logits = raw_logits.clone();
    for i in 0..n {
        for j in 0..n {
            if i != j {
                logits[(i, j)] *= off_diag;
            }
        }
    }
    let labels = diagonal_labels(n);
    let (ce_i2t, g_i2t) = row_cross_entropy(&logits, &labels)?;
    let (ce_t2i, g_t2i) = row_cross_entropy(&logits.transpose(), &labels)?;
    let loss = 0.5 * (ce_i2t + ce_t2i);

    let mut grad_logits = g_i2t;
    grad_logits.add_scaled(&g_t2i.transpose(), 1.0)?;
    let grad_logits = grad_logits.scale(0.5);

    let grad_log_scale = dot(grad_logits.data(), logits.data());
    let mut grad_sim = grad_logits.scale(tau);
    for i in 0..n {
        for j in 0..n {
            if i != j {
                grad_sim[(i, j)] *= off_diag;
            }
        }
    }
    let grad_images = grad_sim.matmul(t)?;
    let grad_texts = grad_sim.transpose_matmul(v)?;

    let (align_term, oppose_term) = decompose_from_logits(&raw_logits);
    let mut out = LossOutput {
        loss,
        grad_images,
        grad_texts,
        grad_log_scale,
        diagnostics: LossDiagnostics {
            align_term,
            oppose_term,
            rw_term: loss,
            ..Default::default()
        },
    };
    out.diagnostics.grad_norm_rw = out.embedding_grad_norm();
    Ok(out)
}

/// Symmetric InfoNCE: `½[CE(τVTᵀ, y) + CE(τTVᵀ, y)]` with `y = (0..N)`.
pub fn clip_loss(v: &Matrix, t: &Matrix, temp: &Temperature) -> Result<LossOutput> {
    masked_cross_modal(v, t, temp, 1.0)
}

/// Image→text half of [`clip_loss`] split into attraction
/// `−(1/N) Σ τ v_iᵀt_i` and repulsion `(1/N) Σ_i log Σ_j exp(τ v_iᵀt_j)`.
pub fn clip_loss_decomposed(v: &Matrix, t: &Matrix, temp: &Temperature) -> Result<ClipDecomposition> {
    check_pair(v, t)?;
    let tau = temp.tau();
    let logits = similarity_matrix(v, t)?.scale(tau);
    let (align_term, oppose_term) = decompose_from_logits(&logits);
    let n = v.rows() as f64;

    let align_grad = TermGradient {
        images: t.scale(-tau / n),
        texts: v.scale(-tau / n),
        log_scale: align_term,
    };

    // Row-softmax of the logits weights the repulsion gradient.
    let mut p = logits.clone();
    let mut oppose_ls = 0.0;
    for i in 0..p.rows() {
        let lse = log_sum_exp(logits.row(i));
        for (pij, &lij) in p.row_mut(i).iter_mut().zip(logits.row(i)) {
            *pij = (lij - lse).exp();
            oppose_ls += *pij * lij;
        }
    }
    let oppose_grad = TermGradient {
        images: p.matmul(t)?.scale(tau / n),
        texts: p.transpose_matmul(v)?.scale(tau / n),
        log_scale: oppose_ls / n,
    };
    Ok(ClipDecomposition {
        align_term,
        oppose_term,
        align_grad,
        oppose_grad,
    })
}

/// Contrastive loss with every off-diagonal (negative) logit scaled by
/// `1 − beta`. The mask is constant, so negative-logit gradients are scaled
/// by the same factor.
pub fn reweighted_loss(v: &Matrix, t: &Matrix, temp: &Temperature, beta: f64) -> Result<LossOutput> {
    if !(0.0..=MAX_BETA).contains(&beta) {
        return Err(Error::InvalidArgument(format!(
            "beta = {beta} outside [0, {MAX_BETA}]"
        )));
    }
    masked_cross_modal(v, t, temp, 1.0 - beta)
}

/// Intra-modal geometry matching.
///
/// Row i of the text-side matrix holds the positive `τ t_iᵀv_i` on the
/// diagonal and text-text similarities `τ t_iᵀt_j` elsewhere; the image-side
/// matrix mirrors it with `τ v_iᵀv_j`. Loss is `½[CE(text side) + CE(image side)]`.
pub fn intra_loss(v: &Matrix, t: &Matrix, temp: &Temperature) -> Result<LossOutput> {
    check_pair(v, t)?;
    let n = v.rows();
    let tau = temp.tau();
    let tt = similarity_matrix(t, t)?;
    let vv = similarity_matrix(v, v)?;
    let paired: Vec<f64> = (0..n).map(|i| dot(v.row(i), t.row(i))).collect();

    let mut text_logits = tt.scale(tau);
    let mut image_logits = vv.scale(tau);
    for (i, p) in paired.iter().enumerate() {
        text_logits[(i, i)] = tau * p;
        image_logits[(i, i)] = tau * p;
    }
    let labels = diagonal_labels(n);
    let (ce_text, g_text) = row_cross_entropy(&text_logits, &labels)?;
    let (ce_image, g_image) = row_cross_entropy(&image_logits, &labels)?;
    let loss = 0.5 * (ce_text + ce_image);
    let a = g_text.scale(0.5);
    let b = g_image.scale(0.5);

    let grad_log_scale = dot(a.data(), text_logits.data()) + dot(b.data(), image_logits.data());

    // Off-diagonal similarity gradients, symmetrized because t_iᵀt_j and
    // t_jᵀt_i are the same quantity appearing in two cells.
    let mut text_pair_grad = Matrix::zeros(n, n);
    let mut image_pair_grad = Matrix::zeros(n, n);
    for i in 0..n {
        for j in 0..n {
            if i != j {
                text_pair_grad[(i, j)] = tau * (a[(i, j)] + a[(j, i)]);
                image_pair_grad[(i, j)] = tau * (b[(i, j)] + b[(j, i)]);
            }
        }
    }
    let mut grad_images = image_pair_grad.matmul(v)?;
    let mut grad_texts = text_pair_grad.matmul(t)?;
    for i in 0..n {
        let coeff = tau * (a[(i, i)] + b[(i, i)]);
        for (g, x) in grad_images.row_mut(i).iter_mut().zip(t.row(i)) {
            *g += coeff * x;
        }
        for (g, x) in grad_texts.row_mut(i).iter_mut().zip(v.row(i)) {
            *g += coeff * x;
        }
    }

    let mut out = LossOutput {
        loss,
        grad_images,
        grad_texts,
        grad_log_scale,
        diagnostics: LossDiagnostics {
            intra_term: loss,
            ..Default::default()
        },
    };
    out.diagnostics.grad_norm_intra = out.embedding_grad_norm();
    Ok(out)
}

/// `(1 − α)·reweighted(β = 0.05α) + α·intra`.
///
/// Both component losses already carry their ½ prefactor, so this equals
/// `½[(1 − α)(CE_i2t + CE_t2i) + α(CE_text + CE_image)]`.
pub fn cma_loss(v: &Matrix, t: &Matrix, temp: &Temperature, alpha: f64) -> Result<LossOutput> {
    if !(0.0..=1.0).contains(&alpha) {
        return Err(Error::InvalidArgument(format!(
            "alpha = {alpha} outside [0, 1]"
        )));
    }
    let rw = reweighted_loss(v, t, temp, BETA_PER_ALPHA * alpha)?;
    let intra = intra_loss(v, t, temp)?;
    let w_rw = 1.0 - alpha;
    let w_intra = alpha;

    let mut grad_images = rw.grad_images.scale(w_rw);
    grad_images.add_scaled(&intra.grad_images.scale(w_intra), 1.0)?;
    let mut grad_texts = rw.grad_texts.scale(w_rw);
    grad_texts.add_scaled(&intra.grad_texts.scale(w_intra), 1.0)?;

    Ok(LossOutput {
        loss: w_rw * rw.loss + w_intra * intra.loss,
        grad_images,
        grad_texts,
        grad_log_scale: w_rw * rw.grad_log_scale + w_intra * intra.grad_log_scale,
        diagnostics: LossDiagnostics {
            align_term: rw.diagnostics.align_term,
            oppose_term: rw.diagnostics.oppose_term,
            rw_term: rw.loss,
            intra_term: intra.loss,
            grad_norm_rw: rw.diagnostics.grad_norm_rw,
            grad_norm_intra: intra.diagnostics.grad_norm_intra,
        },
    })
}

/// Selects one of the differentiable losses.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum LossKind {
    Clip,
    Reweighted { beta: f64 },
    Intra,
    Cma { alpha: f64 },
}

impl LossKind {
    pub fn evaluate(&self, v: &Matrix, t: &Matrix, temp: &Temperature) -> Result<LossOutput> {
        match *self {
            LossKind::Clip => clip_loss(v, t, temp),
            LossKind::Reweighted { beta } => reweighted_loss(v, t, temp, beta),
            LossKind::Intra => intra_loss(v, t, temp),
            LossKind::Cma { alpha } => cma_loss(v, t, temp, alpha),
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            LossKind::Clip => "clip",
            LossKind::Reweighted { .. } => "reweighted",
            LossKind::Intra => "intra",
            LossKind::Cma { .. } => "cma",
        }
    }
}

impl FromStr for LossKind {
    type Err = Error;

    /// Accepts `clip`, `intra`, `reweighted:<beta>` and `cma:<alpha>`.
    fn from_str(s: &str) -> Result<Self> {
        let (name, param) = match s.split_once(':') {
            Some((n, p)) => (n, Some(p)),
            None => (s, None),
        };
        let parse_param = |p: Option<&str>| -> Result<f64> {
            let p = p.ok_or_else(|| Error::InvalidArgument(format!("loss `{name}` needs a parameter")))?;
            p.trim()
                .parse::<f64>()
                .map_err(|_| Error::InvalidArgument(format!("bad loss parameter `{p}`")))
        };
        match name.trim() {
            "clip" => Ok(LossKind::Clip),
            "intra" => Ok(LossKind::Intra),
            "reweighted" => Ok(LossKind::Reweighted { beta: parse_param(param)? }),
            "cma" => Ok(LossKind::Cma { alpha: parse_param(param)? }),
            other => Err(Error::InvalidArgument(format!("unknown loss `{other}`"))),
        }
    }
}

/// Gradient entries below this magnitude are compared on an absolute scale
/// of this size rather than relative to themselves.
pub const FD_RELATIVE_FLOOR: f64 = 1e-6;

/// Relative error between an analytic and a numeric derivative. Both below
/// `1e-12` counts as agreement.
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    if analytic.abs() < 1e-12 && numeric.abs() < 1e-12 {
        return 0.0;
    }
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(FD_RELATIVE_FLOOR)
}

/// Worst relative error between central differences and the analytic
/// gradient over every entry of V, T and the log-scale.
pub fn finite_diff_check(kind: LossKind, v: &Matrix, t: &Matrix, temp: &Temperature, h: f64) -> Result<f64> {
    let analytic = kind.evaluate(v, t, temp)?;
    finite_diff_against(&analytic, kind, v, t, temp, h)
}

/// Like [`finite_diff_check`] but against a caller-supplied analytic
/// gradient; used to confirm the check catches corrupted gradients.
pub fn finite_diff_against(
    analytic: &LossOutput,
    kind: LossKind,
    v: &Matrix,
    t: &Matrix,
    temp: &Temperature,
    h: f64,
) -> Result<f64> {
    let grad = TermGradient {
        images: analytic.grad_images.clone(),
        texts: analytic.grad_texts.clone(),
        log_scale: analytic.grad_log_scale,
    };
    finite_diff_scalar(
        |v, t, temp| Ok(kind.evaluate(v, t, temp)?.loss),
        &grad,
        v,
        t,
        temp,
        h,
    )
}

/// Worst relative error of both decomposition terms' analytic gradients.
pub fn finite_diff_decomposition(v: &Matrix, t: &Matrix, temp: &Temperature, h: f64) -> Result<f64> {
    let d = clip_loss_decomposed(v, t, temp)?;
    let align = finite_diff_scalar(
        |v, t, temp| Ok(clip_loss_decomposed(v, t, temp)?.align_term),
        &d.align_grad,
        v,
        t,
        temp,
        h,
    )?;
    let oppose = finite_diff_scalar(
        |v, t, temp| Ok(clip_loss_decomposed(v, t, temp)?.oppose_term),
        &d.oppose_grad,
        v,
        t,
        temp,
        h,
    )?;
    Ok(align.max(oppose))
}

/// Central differences of `f` over every entry of V, T and the log-scale,
/// compared against `grad`.
pub fn finite_diff_scalar<F>(
    f: F,
    grad: &TermGradient,
    v: &Matrix,
    t: &Matrix,
    temp: &Temperature,
    h: f64,
) -> Result<f64>
where
    F: Fn(&Matrix, &Matrix, &Temperature) -> Result<f64>,
{
    if !(1e-7..=1e-3).contains(&h) {
        return Err(Error::InvalidArgument(format!("step h = {h} outside [1e-7, 1e-3]")));
    }
    if grad.images.shape() != v.shape() || grad.texts.shape() != t.shape() {
        return Err(Error::DimensionMismatch("gradient shape differs from inputs".into()));
    }
    let ls = temp.log_scale();
    let at = |v: &Matrix, t: &Matrix, log_scale: f64| f(v, t, &Temperature::unclamped(log_scale));
    let mut worst: f64 = 0.0;

    for idx in 0..v.data().len() {
        let mut plus = v.clone();
        plus.data_mut()[idx] += h;
        let mut minus = v.clone();
        minus.data_mut()[idx] -= h;
        let fd = (at(&plus, t, ls)? - at(&minus, t, ls)?) / (2.0 * h);
        worst = worst.max(relative_error(grad.images.data()[idx], fd));
    }
    for idx in 0..t.data().len() {
        let mut plus = t.clone();
        plus.data_mut()[idx] += h;
        let mut minus = t.clone();
        minus.data_mut()[idx] -= h;
        let fd = (at(v, &plus, ls)? - at(v, &minus, ls)?) / (2.0 * h);
        worst = worst.max(relative_error(grad.texts.data()[idx], fd));
    }
    let fd = (at(v, t, ls + h)? - at(v, t, ls - h)?) / (2.0 * h);
    worst = worst.max(relative_error(grad.log_scale, fd));
    Ok(worst)
}
