use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::curriculum::{phase_of, CurriculumConfig, Phase, Scheduler};
use crate::error::{Error, Result};
use crate::geometry::{gap_report, EmbeddingBatch, GapReport, Modality};
use crate::losses::{cma_loss, Temperature, MAX_LOG_SCALE};
use crate::numerics::Matrix;

use super::adam::{adam_step, AdamConfig, AdamState};
use super::encoder::Encoder;
use super::synth::{synth_dataset, PairedData, SynthConfig, SynthDataset};

fn default_init_log_scale() -> f64 {
    (1.0_f64 / 0.07).ln()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub curriculum: CurriculumConfig,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub adam_beta1: f64,
    pub adam_beta2: f64,
    pub adam_eps: f64,
    pub hidden_dim: usize,
    pub embed_dim: usize,
    /// Seeds encoder initialization and batch shuffling.
    pub seed: u64,
    pub init_log_scale: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            curriculum: CurriculumConfig::default(),
            batch_size: 128,
            learning_rate: 1e-3,
            adam_beta1: 0.9,
            adam_beta2: 0.999,
            adam_eps: 1e-8,
            hidden_dim: 64,
            embed_dim: 16,
            seed: 0,
            init_log_scale: default_init_log_scale(),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        self.curriculum.validate_schedule()?;
        if self.batch_size < 2 {
            return Err(Error::InvalidArgument(
                "batch_size must be at least 2 for a contrastive loss".into(),
            ));
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::InvalidArgument(format!(
                "learning_rate = {} must be positive",
                self.learning_rate
            )));
        }
        if !(0.0..1.0).contains(&self.adam_beta1) || !(0.0..1.0).contains(&self.adam_beta2) {
            return Err(Error::InvalidArgument("Adam betas must lie in [0, 1)".into()));
        }
        if !(self.adam_eps > 0.0) {
            return Err(Error::InvalidArgument("adam_eps must be positive".into()));
        }
        if self.hidden_dim == 0 || self.embed_dim < 2 {
            return Err(Error::InvalidArgument(
                "hidden_dim must be positive and embed_dim at least 2".into(),
            ));
        }
        if !self.init_log_scale.is_finite() {
            return Err(Error::InvalidArgument("init_log_scale must be finite".into()));
        }
        Ok(())
    }

    pub fn adam(&self) -> AdamConfig {
        AdamConfig {
            learning_rate: self.learning_rate,
            beta1: self.adam_beta1,
            beta2: self.adam_beta2,
            eps: self.adam_eps,
        }
    }
}

/// How α evolves during a run.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum AlphaSchedule {
    /// Three-phase curriculum driven by the scheduler.
    Curriculum,
    /// Fixed α from the first step; the curriculum only sets the epoch count.
    Constant(f64),
}

/// One line of training history, written after each epoch.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub phase: Phase,
    /// α in effect after the epoch's last step.
    pub alpha: f64,
    pub loss: f64,
    pub rw_term: f64,
    pub intra_term: f64,
    /// Mean over the epoch of ‖∇L_intra‖ / ‖∇L_rw‖ w.r.t. the embeddings.
    pub grad_norm_ratio: f64,
    pub log_scale: f64,
    pub eval_gap: GapReport,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct RunHistory {
    pub records: Vec<EpochRecord>,
}

impl RunHistory {
    /// One JSON object per line, one line per epoch.
    pub fn to_jsonl(&self) -> String {
        let mut out = String::new();
        for r in &self.records {
            out.push_str(&serde_json::to_string(r).expect("epoch record serializes"));
            out.push('\n');
        }
        out
    }

    pub fn from_jsonl(text: &str) -> Result<Self> {
        let records = text
            .lines()
            .filter(|l| !l.trim().is_empty())
            .map(|l| {
                serde_json::from_str(l)
                    .map_err(|e| Error::InvalidArgument(format!("bad history line: {e}")))
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Self { records })
    }

    pub fn last(&self) -> Option<&EpochRecord> {
        self.records.last()
    }
}

/// Result of a training run.
#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub image_encoder: Encoder,
    pub text_encoder: Encoder,
    pub temperature: Temperature,
    pub history: RunHistory,
    /// The data the run was trained and evaluated on.
    pub data: SynthDataset,
}

impl TrainOutcome {
    /// Labeled image and text embeddings of a paired split.
    pub fn embed(&self, data: &PairedData) -> Result<(EmbeddingBatch, EmbeddingBatch)> {
        embed_pair(&self.image_encoder, &self.text_encoder, data)
    }
}

fn embed_pair(
    image_encoder: &Encoder,
    text_encoder: &Encoder,
    data: &PairedData,
) -> Result<(EmbeddingBatch, EmbeddingBatch)> {
    let v = image_encoder.embed(&data.images)?;
    let t = text_encoder.embed(&data.texts)?;
    Ok((
        EmbeddingBatch::new(v, Some(data.labels.clone()), Modality::Image)?,
        EmbeddingBatch::new(t, Some(data.labels.clone()), Modality::Text)?,
    ))
}

/// Shuffled mini-batches for one epoch; a trailing batch of one pair is
/// dropped since a contrastive loss needs negatives.
fn epoch_batches(n: usize, batch_size: usize, rng: &mut ChaCha8Rng) -> Vec<Vec<usize>> {
    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(rng);
    idx.chunks(batch_size)
        .filter(|c| c.len() >= 2)
        .map(<[usize]>::to_vec)
        .collect()
}

/// Optimizer steps per epoch for `n` training pairs.
pub fn steps_per_epoch(n: usize, batch_size: usize) -> usize {
    let full = n / batch_size;
    if n % batch_size >= 2 {
        full + 1
    } else {
        full
    }
}

/// Three-phase curriculum training.
pub fn train(train_cfg: &TrainConfig, synth_cfg: &SynthConfig) -> Result<TrainOutcome> {
    run(train_cfg, synth_cfg, AlphaSchedule::Curriculum)
}

/// Same loop with the scheduler bypassed and α fixed from step 0.
pub fn train_constant_alpha(train_cfg: &TrainConfig, synth_cfg: &SynthConfig, alpha: f64) -> Result<TrainOutcome> {
    if !(0.0..=1.0).contains(&alpha) {
        return Err(Error::InvalidArgument(format!("alpha = {alpha} outside [0, 1]")));
    }
    run(train_cfg, synth_cfg, AlphaSchedule::Constant(alpha))
}

pub fn run(train_cfg: &TrainConfig, synth_cfg: &SynthConfig, schedule: AlphaSchedule) -> Result<TrainOutcome> {
    train_cfg.validate()?;
    let data = synth_dataset(synth_cfg)?;
    let n_train = data.train.len();
    let spe = steps_per_epoch(n_train, train_cfg.batch_size);
    if spe == 0 {
        return Err(Error::InvalidArgument(format!(
            "{n_train} training pairs cannot fill a batch"
        )));
    }
    let requested = train_cfg.curriculum.steps_per_epoch;
    if requested != 0 && requested != spe {
        return Err(Error::InvalidArgument(format!(
            "curriculum.steps_per_epoch = {requested} but the data gives {spe} steps per epoch"
        )));
    }
    let curriculum = train_cfg.curriculum.with_steps_per_epoch(spe);
    let mut scheduler = Scheduler::new(curriculum.clone())?;

    let mut rng = ChaCha8Rng::seed_from_u64(train_cfg.seed);
    let d = train_cfg.embed_dim;
    let mut image_encoder = Encoder::new(synth_cfg.image_input_dim, train_cfg.hidden_dim, d, &mut rng);
    let mut text_encoder = Encoder::new(synth_cfg.text_input_dim, train_cfg.hidden_dim, d, &mut rng);
    let mut temperature = Temperature::new(train_cfg.init_log_scale);

    let n_image = image_encoder.num_params();
    let n_text = text_encoder.num_params();
    let mut adam_state = AdamState::new(n_image + n_text + 1);
    let adam_cfg = train_cfg.adam();

    let mut alpha = match schedule {
        AlphaSchedule::Curriculum => scheduler.alpha(),
        AlphaSchedule::Constant(a) => a,
    };
    let mut history = RunHistory::default();
    let mut global_step = 0usize;

    for epoch in 0..curriculum.total_epochs() {
        let mut sums = [0.0f64; 4];
        let batches = epoch_batches(n_train, train_cfg.batch_size, &mut rng);
        for batch in &batches {
            let x_img = data.train.images.select_rows(batch);
            let x_txt = data.train.texts.select_rows(batch);
            let (v, v_cache) = image_encoder.forward(&x_img)?;
            let (t, t_cache) = text_encoder.forward(&x_txt)?;
            let out = cma_loss(&v, &t, &temperature, alpha)?;
            if !out.loss.is_finite() || !out.diagnostics.rw_term.is_finite() {
                return Err(Error::NonFiniteLoss {
                    epoch,
                    step: global_step,
                    alpha,
                    detail: format!(
                        "loss {} (rw {}, intra {}), log_scale {}",
                        out.loss,
                        out.diagnostics.rw_term,
                        out.diagnostics.intra_term,
                        temperature.log_scale()
                    ),
                });
            }
            let g_img = image_encoder.backward(&v_cache, &out.grad_images)?;
            let g_txt = text_encoder.backward(&t_cache, &out.grad_texts)?;

            let mut params = image_encoder.to_flat();
            params.extend(text_encoder.to_flat());
            params.push(temperature.log_scale());
            let mut grads = g_img.to_flat();
            grads.extend(g_txt.to_flat());
            grads.push(out.grad_log_scale);
            adam_step(&mut params, &grads, &mut adam_state, &adam_cfg)?;
            let log_scale = params[n_image + n_text].min(MAX_LOG_SCALE);
            if params.iter().any(|p| !p.is_finite()) {
                return Err(Error::NonFiniteLoss {
                    epoch,
                    step: global_step,
                    alpha,
                    detail: "parameters became non-finite after the optimizer step".into(),
                });
            }
            image_encoder.set_flat(&params[..n_image])?;
            text_encoder.set_flat(&params[n_image..n_image + n_text])?;
            temperature.set_log_scale(log_scale);

            let d = &out.diagnostics;
            sums[0] += out.loss;
            sums[1] += d.rw_term;
            sums[2] += d.intra_term;
            sums[3] += if d.grad_norm_rw > 0.0 {
                d.grad_norm_intra / d.grad_norm_rw
            } else {
                0.0
            };

            alpha = match schedule {
                AlphaSchedule::Curriculum => scheduler.step(d.rw_term)?,
                AlphaSchedule::Constant(a) => a,
            };
            global_step += 1;
        }

        let (v_eval, t_eval) = embed_pair(&image_encoder, &text_encoder, &data.eval)?;
        let steps = batches.len() as f64;
        history.records.push(EpochRecord {
            epoch,
            phase: phase_of(&curriculum, epoch * spe)?,
            alpha,
            loss: sums[0] / steps,
            rw_term: sums[1] / steps,
            intra_term: sums[2] / steps,
            grad_norm_ratio: sums[3] / steps,
            log_scale: temperature.log_scale(),
            eval_gap: gap_report(&v_eval, &t_eval)?,
        });
    }

    Ok(TrainOutcome {
        image_encoder,
        text_encoder,
        temperature,
        history,
        data,
    })
}

/// Parameters of both encoders and the log-scale as one flat vector, in the
/// order used by the optimizer.
pub fn flatten_params(image: &Encoder, text: &Encoder, temperature: &Temperature) -> Vec<f64> {
    let mut p = image.to_flat();
    p.extend(text.to_flat());
    p.push(temperature.log_scale());
    p
}

/// Loss and its gradient w.r.t. all encoder parameters and the log-scale,
/// for one batch at a fixed α. Exposed for end-to-end gradient checks.
pub fn batch_loss_and_grad(
    image: &Encoder,
    text: &Encoder,
    temperature: &Temperature,
    x_img: &Matrix,
    x_txt: &Matrix,
    alpha: f64,
) -> Result<(f64, Vec<f64>)> {
    let (v, vc) = image.forward(x_img)?;
    let (t, tc) = text.forward(x_txt)?;
    let out = cma_loss(&v, &t, temperature, alpha)?;
    let mut g = image.backward(&vc, &out.grad_images)?.to_flat();
    g.extend(text.backward(&tc, &out.grad_texts)?.to_flat());
    g.push(out.grad_log_scale);
    Ok((out.loss, g))
}
