use std::io::Write;
use std::path::{Path, PathBuf};

use gaplab_core::evalkit::{evaluate_outcome, linear_fit_r2, EvalOptions, LinearFit, SweepRecord};
use gaplab_core::geometry::{gap_report, mean_center, GapReport};
use gaplab_core::numerics::pca_project_2d;
use gaplab_core::sweep::{default_threads, run_sweep, SweepPlan, SweepRun, SweepVariant};
use gaplab_core::trainkit::{steps_per_epoch, train};
use serde::Serialize;

use crate::checkpoint;
use crate::config::RunConfigFile;
use crate::embfile::{read_pair, EmbFile};
use crate::error::{CliError, CliResult};
use crate::io::{read_text, to_json_pretty, write_atomic};
use crate::svg;

fn say(out: &mut dyn Write, line: impl AsRef<str>) {
    // Losing a summary line on a closed pipe is not worth failing over.
    let _ = writeln!(out, "{}", line.as_ref());
}

pub fn summary_line(r: &GapReport) -> String {
    format!(
        "raw_gap={:.6} centroid_gap={:.6} distribution_gap={:.6} fusion_index={:.6}",
        r.raw_gap, r.centroid_gap, r.distribution_gap, r.fusion_index
    )
}

fn load_config(path: Option<&Path>) -> CliResult<RunConfigFile> {
    match path {
        Some(p) => RunConfigFile::load(p),
        None => Ok(RunConfigFile::default()),
    }
}

pub fn analyze(
    images: &Path,
    texts: &Path,
    out_path: Option<&Path>,
    out: &mut dyn Write,
) -> CliResult<GapReport> {
    let (v, t) = read_pair(images, texts)?;
    let report = gap_report(&v, &t).map_err(CliError::from_input)?;
    if let Some(p) = out_path {
        write_atomic(p, &to_json_pretty(&report))?;
    }
    say(out, summary_line(&report));
    Ok(report)
}

#[derive(Debug, Clone, Serialize)]
pub struct CenterReport {
    pub before: GapReport,
    pub after: GapReport,
}

pub fn center(
    images: &Path,
    texts: &Path,
    out_images: &Path,
    out_texts: &Path,
    renormalize: bool,
    out: &mut dyn Write,
) -> CliResult<CenterReport> {
    let (v, t) = read_pair(images, texts)?;
    let before = gap_report(&v, &t).map_err(CliError::from_input)?;
    let (vc, tc) = mean_center(&v, &t, renormalize).map_err(CliError::from_input)?;
    let after = gap_report(&vc, &tc).map_err(CliError::from_input)?;
    EmbFile::from_batch(&vc)?.write(out_images)?;
    EmbFile::from_batch(&tc)?.write(out_texts)?;
    say(out, format!("before: {}", summary_line(&before)));
    say(out, format!("after:  {}", summary_line(&after)));
    Ok(CenterReport { before, after })
}

/// Final state of a training run, written as `summary.json`.
#[derive(Debug, Clone, Serialize)]
pub struct TrainSummary {
    pub epochs: usize,
    pub steps_per_epoch: usize,
    pub log_scale: f64,
    pub temperature: f64,
    pub metrics: SweepRecord,
}

pub const HISTORY_FILE: &str = "history.jsonl";
pub const SUMMARY_FILE: &str = "summary.json";
pub const IMAGE_ENCODER_FILE: &str = "image_encoder.enc";
pub const TEXT_ENCODER_FILE: &str = "text_encoder.enc";
pub const EVAL_IMAGES_FILE: &str = "eval_images.emb";
pub const EVAL_TEXTS_FILE: &str = "eval_texts.emb";

pub fn train_cmd(config: Option<&Path>, out_dir: &Path, out: &mut dyn Write) -> CliResult<TrainSummary> {
    let cfg = load_config(config)?;
    std::fs::create_dir_all(out_dir).map_err(|e| CliError::io(out_dir, e))?;
    let outcome = train(&cfg.train, &cfg.synth).map_err(CliError::from_run)?;
    let metrics = evaluate_outcome(
        &outcome,
        cfg.train.curriculum.alpha_target,
        cfg.synth.n_classes,
        cfg.train.seed,
        EvalOptions::default(),
    )
    .map_err(CliError::from_run)?;
    let (v_eval, t_eval) = outcome.embed(&outcome.data.eval).map_err(CliError::from_run)?;

    write_atomic(&out_dir.join(HISTORY_FILE), outcome.history.to_jsonl().as_bytes())?;
    checkpoint::write(&out_dir.join(IMAGE_ENCODER_FILE), &outcome.image_encoder)?;
    checkpoint::write(&out_dir.join(TEXT_ENCODER_FILE), &outcome.text_encoder)?;
    EmbFile::from_batch(&v_eval)?.write(&out_dir.join(EVAL_IMAGES_FILE))?;
    EmbFile::from_batch(&t_eval)?.write(&out_dir.join(EVAL_TEXTS_FILE))?;
    let summary = TrainSummary {
        epochs: outcome.history.records.len(),
        steps_per_epoch: steps_per_epoch(outcome.data.train.len(), cfg.train.batch_size),
        log_scale: outcome.temperature.log_scale(),
        temperature: outcome.temperature.tau(),
        metrics,
    };
    write_atomic(&out_dir.join(SUMMARY_FILE), &to_json_pretty(&summary))?;

    for r in &outcome.history.records {
        say(
            out,
            format!(
                "epoch {:>3} {:<9} alpha={:.4} loss={:.5} distribution_gap={:.5}",
                r.epoch,
                format!("{:?}", r.phase).to_lowercase(),
                r.alpha,
                r.loss,
                r.eval_gap.distribution_gap
            ),
        );
    }
    Ok(summary)
}

fn csv_row(values: impl IntoIterator<Item = String>) -> String {
    let mut line = values.into_iter().collect::<Vec<_>>().join(",");
    line.push('\n');
    line
}

fn record_fields(r: &SweepRecord) -> impl Iterator<Item = String> {
    r.values().into_iter().map(|v| format!("{v}"))
}

pub fn averaged_csv(records: &[SweepRecord]) -> String {
    let mut s = csv_row(SweepRecord::COLUMNS.iter().map(|c| c.to_string()));
    for r in records {
        s.push_str(&csv_row(record_fields(r)));
    }
    s
}

pub fn runs_csv(runs: &[SweepRun]) -> String {
    let mut s = csv_row(std::iter::once("seed".to_string()).chain(SweepRecord::COLUMNS.iter().map(|c| c.to_string())));
    for run in runs {
        s.push_str(&csv_row(std::iter::once(run.seed.to_string()).chain(record_fields(&run.record))));
    }
    s
}

/// Default location of the per-seed table next to the averaged one.
pub fn default_runs_path(out: &Path) -> PathBuf {
    let stem = out.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
    out.with_file_name(format!("{stem}.runs.csv"))
}

#[allow(clippy::too_many_arguments)]
pub fn sweep(
    config: Option<&Path>,
    alphas: &[f64],
    seeds: &[u64],
    variant: SweepVariant,
    out_path: &Path,
    runs_path: Option<&Path>,
    threads: Option<usize>,
    out: &mut dyn Write,
) -> CliResult<Vec<SweepRecord>> {
    let cfg = load_config(config)?;
    let plan = SweepPlan {
        variant,
        ..SweepPlan::new(cfg.train, cfg.synth, alphas.to_vec(), seeds.to_vec())
    };
    plan.validate().map_err(CliError::from_input)?;
    let runs_path = runs_path.map_or_else(|| default_runs_path(out_path), Path::to_path_buf);
    match run_sweep(&plan, threads.unwrap_or_else(default_threads)) {
        Ok(result) => {
            write_atomic(out_path, averaged_csv(&result.averaged).as_bytes())?;
            write_atomic(&runs_path, runs_csv(&result.runs).as_bytes())?;
            for r in &result.averaged {
                say(
                    out,
                    format!(
                        "alpha_target={} raw_gap={:.5} distribution_gap={:.5} ari={:.4} probe_accuracy={:.4}",
                        r.alpha_target, r.raw_gap, r.distribution_gap, r.ari, r.probe_accuracy
                    ),
                );
            }
            Ok(result.averaged)
        }
        Err(failure) => {
            // Average only the alphas whose seeds all finished.
            let per_alpha = seeds.len();
            let mut complete = Vec::new();
            for &a in alphas {
                let done: Vec<SweepRecord> = failure
                    .completed
                    .iter()
                    .filter(|r| r.alpha_target == a)
                    .map(|r| r.record.clone())
                    .collect();
                if done.len() == per_alpha {
                    let mut mean = SweepRecord::mean(&done).expect("non-empty");
                    mean.alpha_target = a;
                    complete.push(mean);
                }
            }
            let marker = format!("# sweep aborted: {}\n", failure.to_string().replace('\n', " "));
            let mut avg = averaged_csv(&complete);
            avg.push_str(&marker);
            let mut per_seed = runs_csv(&failure.completed);
            per_seed.push_str(&marker);
            write_atomic(out_path, avg.as_bytes())?;
            write_atomic(&runs_path, per_seed.as_bytes())?;
            Err(CliError::from_run(failure.error))
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct CorrelateReport {
    pub x: String,
    pub y: String,
    pub n: usize,
    pub slope: f64,
    pub intercept: f64,
    pub r_squared: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub r_squared_distribution_gap: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub r_squared_raw_gap: Option<f64>,
}

/// Named numeric columns of a sweep table. Lines starting with `#` are skipped.
pub fn read_columns(path: &Path) -> CliResult<(Vec<String>, Vec<Vec<f64>>)> {
    let text = read_text(path)?;
    let mut reader = csv::ReaderBuilder::new()
        .comment(Some(b'#'))
        .from_reader(text.as_bytes());
    let headers: Vec<String> = reader
        .headers()
        .map_err(|e| CliError::Input(format!("{}: {e}", path.display())))?
        .iter()
        .map(str::to_string)
        .collect();
    let mut cols = vec![Vec::new(); headers.len()];
    for (line, rec) in reader.records().enumerate() {
        let rec = rec.map_err(|e| CliError::Input(format!("{}: {e}", path.display())))?;
        for (j, field) in rec.iter().enumerate() {
            let v: f64 = field.trim().parse().map_err(|_| {
                CliError::Input(format!(
                    "{}: row {} column {}: not a number: {field:?}",
                    path.display(),
                    line + 1,
                    headers[j]
                ))
            })?;
            cols[j].push(v);
        }
    }
    Ok((headers, cols))
}

pub fn correlate(
    sweep_csv: &Path,
    x: &str,
    y: &str,
    out_path: Option<&Path>,
    out: &mut dyn Write,
) -> CliResult<CorrelateReport> {
    let (headers, cols) = read_columns(sweep_csv)?;
    let column = |name: &str| -> CliResult<&Vec<f64>> {
        headers
            .iter()
            .position(|h| h == name)
            .map(|i| &cols[i])
            .ok_or_else(|| CliError::Input(format!("{}: no column named {name:?}", sweep_csv.display())))
    };
    let fit = |xs: &[f64], ys: &[f64]| -> CliResult<LinearFit> {
        linear_fit_r2(xs, ys).map_err(|e| CliError::Input(format!("cannot fit {x} -> {y}: {e}")))
    };
    let ys = column(y)?;
    let xs = column(x)?;
    let main = fit(xs, ys)?;
    let (mut r2_dist, mut r2_raw) = (None, None);
    if x == "distribution_gap" || x == "raw_gap" {
        if let (Ok(d), Ok(r)) = (column("distribution_gap"), column("raw_gap")) {
            r2_dist = Some(fit(d, ys)?.r_squared);
            r2_raw = Some(fit(r, ys)?.r_squared);
        }
    }
    let report = CorrelateReport {
        x: x.to_string(),
        y: y.to_string(),
        n: ys.len(),
        slope: main.slope,
        intercept: main.intercept,
        r_squared: main.r_squared,
        r_squared_distribution_gap: r2_dist,
        r_squared_raw_gap: r2_raw,
    };
    if let Some(p) = out_path {
        write_atomic(p, &to_json_pretty(&report))?;
    }
    say(
        out,
        format!(
            "{y} ~ {x}: slope={:.6} intercept={:.6} r_squared={:.6}",
            report.slope, report.intercept, report.r_squared
        ),
    );
    if let (Some(d), Some(r)) = (r2_dist, r2_raw) {
        say(out, format!("r_squared distribution_gap={d:.6} raw_gap={r:.6}"));
    }
    Ok(report)
}

pub fn plot(images: &Path, texts: &Path, out_path: &Path, out: &mut dyn Write) -> CliResult<()> {
    let (v, t) = read_pair(images, texts)?;
    let report = gap_report(&v, &t).map_err(CliError::from_input)?;
    let pooled = v.vectors().vstack(t.vectors()).map_err(CliError::from_input)?;
    let xy = pca_project_2d(&pooled).map_err(CliError::from_input)?;
    write_atomic(out_path, svg::scatter(&xy, v.len(), &report).as_bytes())?;
    say(out, format!("wrote {} points to {}", xy.rows(), out_path.display()));
    Ok(())
}
