//! α_target sweeps: train one model per (α, seed), score each, average per α.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::evalkit::{evaluate_outcome, EvalOptions, SweepRecord};
use crate::trainkit::{run, AlphaSchedule, RunHistory, SynthConfig, TrainConfig};

/// Environment variable capping sweep worker threads.
pub const THREADS_ENV: &str = "GAPLAB_THREADS";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SweepVariant {
    /// Three-phase curriculum towards each α_target.
    Curriculum,
    /// α fixed at α_target from the first step.
    Constant,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepPlan {
    pub train: TrainConfig,
    pub synth: SynthConfig,
    pub alphas: Vec<f64>,
    /// Seed offsets; run `s` uses `train.seed + s` and `synth.seed + s`.
    pub seeds: Vec<u64>,
    pub variant: SweepVariant,
    pub eval: EvalOptions,
}

impl SweepPlan {
    pub fn new(train: TrainConfig, synth: SynthConfig, alphas: Vec<f64>, seeds: Vec<u64>) -> Self {
        Self {
            train,
            synth,
            alphas,
            seeds,
            variant: SweepVariant::Curriculum,
            eval: EvalOptions::default(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.alphas.is_empty() || self.seeds.is_empty() {
            return Err(Error::InvalidArgument(
                "a sweep needs at least one alpha and one seed".into(),
            ));
        }
        if let Some(a) = self.alphas.iter().find(|a| !(0.0..=1.0).contains(*a)) {
            return Err(Error::InvalidArgument(format!("alpha_target {a} outside [0, 1]")));
        }
        self.train.validate()?;
        self.synth.validate()
    }

    fn job(&self, alpha: f64, seed: u64) -> Result<SweepRun> {
        let mut train = self.train.clone();
        let mut synth = self.synth.clone();
        train.seed = train.seed.wrapping_add(seed);
        synth.seed = synth.seed.wrapping_add(seed);
        train.curriculum.alpha_target = alpha;
        let schedule = match self.variant {
            SweepVariant::Curriculum => AlphaSchedule::Curriculum,
            SweepVariant::Constant => AlphaSchedule::Constant(alpha),
        };
        let outcome = run(&train, &synth, schedule)?;
        let record = evaluate_outcome(&outcome, alpha, synth.n_classes, train.seed, self.eval)?;
        Ok(SweepRun {
            alpha_target: alpha,
            seed,
            record,
            history: outcome.history,
        })
    }
}

/// One trained and evaluated model.
#[derive(Debug, Clone, PartialEq)]
pub struct SweepRun {
    pub alpha_target: f64,
    pub seed: u64,
    pub record: SweepRecord,
    pub history: RunHistory,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepResult {
    /// Alpha-major, seeds in plan order.
    pub runs: Vec<SweepRun>,
    /// One seed-averaged record per alpha, in plan order.
    pub averaged: Vec<SweepRecord>,
}

/// A sweep that stopped on a failing run. Runs that finished are kept.
#[derive(Debug)]
pub struct SweepFailure {
    pub completed: Vec<SweepRun>,
    pub alpha_target: f64,
    pub seed: u64,
    pub error: Error,
}

impl std::fmt::Display for SweepFailure {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(
            f,
            "run alpha_target={} seed={} failed: {}",
            self.alpha_target, self.seed, self.error
        )
    }
}

impl std::error::Error for SweepFailure {}

/// Worker count from `GAPLAB_THREADS`, else the machine's parallelism.
pub fn default_threads() -> usize {
    std::env::var(THREADS_ENV)
        .ok()
        .and_then(|v| v.trim().parse::<usize>().ok())
        .filter(|&n| n > 0)
        .unwrap_or_else(|| std::thread::available_parallelism().map_or(1, |n| n.get()))
}

/// Run every (α, seed) pair. Output does not depend on the thread count.
pub fn run_sweep(plan: &SweepPlan, threads: usize) -> std::result::Result<SweepResult, SweepFailure> {
    let fail = |e: Error| SweepFailure {
        completed: Vec::new(),
        alpha_target: f64::NAN,
        seed: 0,
        error: e,
    };
    plan.validate().map_err(fail)?;
    let jobs: Vec<(f64, u64)> = plan
        .alphas
        .iter()
        .flat_map(|&a| plan.seeds.iter().map(move |&s| (a, s)))
        .collect();
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(threads.max(1))
        .build()
        .map_err(|e| fail(Error::InvalidArgument(format!("thread pool: {e}"))))?;
    let results: Vec<Result<SweepRun>> =
        pool.install(|| jobs.par_iter().map(|&(a, s)| plan.job(a, s)).collect());

    let mut runs = Vec::with_capacity(jobs.len());
    let mut first_failure = None;
    for ((a, s), r) in jobs.iter().zip(results) {
        match r {
            Ok(run) => runs.push(run),
            Err(e) => {
                if first_failure.is_none() {
                    first_failure = Some((*a, *s, e));
                }
            }
        }
    }
    if let Some((alpha_target, seed, error)) = first_failure {
        return Err(SweepFailure {
            completed: runs,
            alpha_target,
            seed,
            error,
        });
    }
    let per_seed = plan.seeds.len();
    let averaged = runs
        .chunks(per_seed)
        .zip(&plan.alphas)
        .map(|(chunk, &alpha)| {
            let records: Vec<SweepRecord> = chunk.iter().map(|r| r.record.clone()).collect();
            let mut mean = SweepRecord::mean(&records).expect("non-empty chunk");
            mean.alpha_target = alpha;
            mean
        })
        .collect();
    Ok(SweepResult { runs, averaged })
}
