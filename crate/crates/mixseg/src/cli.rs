//! Command implementations behind the `mixseg` binary: dataset generation,
//! training runs, strategy/fraction sweeps, and checkpoint evaluation.
//!
//! Relative paths in configs resolve against the `MIXSEG_OUT_DIR` environment
//! variable when it is set. All run artifacts (logs, checkpoints, result
//! rows) are deterministic functions of the config and seed; log files carry
//! no timestamps so reruns are byte-identical.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use rayon::prelude::*;

use crate::config::{
    load_gen_data_config, load_sweep_config, load_train_config, ExperimentConfig, Strategy,
    TrainConfig,
};
use crate::data::{build_dataset, load_dataset, write_dataset, Dataset};
use crate::error::{Error, Result};
use crate::metrics::{format_mean_std_percent, mean_iou_over_seeds};
use crate::model::{read_checkpoint, write_checkpoint};
use crate::trainer::{evaluate, run_observed, TrainOutcome};

pub const OUT_DIR_ENV: &str = "MIXSEG_OUT_DIR";

const LOG_HEADER: &str = "iter,lr,loss_sup,loss_unsup,lambda,gated_fraction,val_miou";

/// Resolve a path from a config: absolute paths pass through, relative paths
/// land under `$MIXSEG_OUT_DIR` (or the working directory).
pub fn resolve_path(path: &Path) -> PathBuf {
    if path.is_absolute() {
        return path.to_path_buf();
    }
    match std::env::var_os(OUT_DIR_ENV) {
        Some(root) if !root.is_empty() => PathBuf::from(root).join(path),
        _ => path.to_path_buf(),
    }
}

fn create_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir.display().to_string(), e))
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).map_err(|e| Error::io(path.display().to_string(), e))
}

/// Generate the synthetic dataset described by a JSON config. Deterministic:
/// rerunning with the same config yields byte-identical files.
pub fn cmd_gen_data(config_path: &Path) -> Result<PathBuf> {
    let cfg = load_gen_data_config(config_path)?;
    let out_dir = resolve_path(&cfg.out_dir);
    let ds = build_dataset(
        &cfg.scene_spec(),
        cfg.train_images,
        cfg.val_images,
        cfg.labeled_fraction,
        cfg.seed,
    )?;
    create_dir(&out_dir)?;
    write_dataset(&ds, &out_dir)?;
    println!(
        "gen-data: wrote {} train + {} validation images ({} labeled / {} unlabeled) to {}",
        cfg.train_images,
        cfg.val_images,
        ds.manifest.labeled.len(),
        ds.manifest.unlabeled.len(),
        out_dir.display()
    );
    Ok(out_dir)
}

/// Field overrides applied on top of the train config file.
#[derive(Debug, Clone, Default)]
pub struct TrainOverrides {
    pub seed: Option<u64>,
    pub strategy: Option<Strategy>,
    pub out_dir: Option<PathBuf>,
    pub total_iters: Option<usize>,
    pub labeled_fraction: Option<f64>,
    pub lambda: Option<f64>,
    pub tau: Option<f64>,
    pub dry_run: bool,
}

impl TrainOverrides {
    fn apply(&self, cfg: &mut TrainConfig) {
        if let Some(seed) = self.seed {
            cfg.experiment.seed = seed;
        }
        if let Some(strategy) = self.strategy {
            cfg.experiment.strategy = strategy;
        }
        if let Some(ref out_dir) = self.out_dir {
            cfg.out_dir = out_dir.clone();
        }
        if let Some(total) = self.total_iters {
            cfg.experiment.total_iters = total;
        }
        if let Some(f) = self.labeled_fraction {
            cfg.experiment.labeled_fraction = f;
        }
        if let Some(l) = self.lambda {
            cfg.experiment.lambda = l;
        }
        if let Some(t) = self.tau {
            cfg.experiment.tau = t;
        }
    }
}

/// Outcome summary of one training run.
#[derive(Debug, Clone)]
pub struct TrainSummary {
    pub out_dir: PathBuf,
    pub strategy: Strategy,
    pub labeled_fraction: f64,
    pub seed: u64,
    pub val_miou: f64,
    pub teacher_val_miou: Option<f64>,
    pub per_class_iou: Vec<Option<f64>>,
}

fn format_opt(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

fn results_header(num_classes: usize) -> String {
    let mut cols = vec![
        "strategy".to_string(),
        "labeled_fraction".to_string(),
        "seed".to_string(),
        "miou".to_string(),
        "teacher_miou".to_string(),
    ];
    cols.extend((0..num_classes).map(|c| format!("iou_class_{c}")));
    cols.join(",")
}

fn results_row(
    strategy: Strategy,
    fraction: f64,
    seed: u64,
    miou: f64,
    teacher: Option<f64>,
    per_class: &[Option<f64>],
) -> String {
    let mut cols = vec![
        strategy.to_string(),
        fraction.to_string(),
        seed.to_string(),
        miou.to_string(),
        format_opt(teacher),
    ];
    cols.extend(per_class.iter().map(|v| format_opt(*v)));
    cols.join(",")
}

fn log_row(log: &crate::trainer::IterationLog) -> String {
    format!(
        "{},{},{},{},{},{},{}",
        log.iter,
        log.lr,
        log.report.supervised_loss,
        log.report.unsupervised_loss,
        log.report.lambda,
        log.report.gated_pixel_fraction,
        format_opt(log.val_miou),
    )
}

/// Train per a JSON config (plus CLI overrides): writes `run_config.json`,
/// a per-iteration `log.csv`, periodic and final checkpoints, and a final
/// `results.csv` row. On divergence the last periodic checkpoint and the
/// partial log survive.
pub fn cmd_train(config_path: &Path, overrides: &TrainOverrides) -> Result<TrainSummary> {
    let mut cfg = load_train_config(config_path)?;
    overrides.apply(&mut cfg);
    cfg.experiment.validate()?;

    if overrides.dry_run {
        let dataset = load_dataset(&resolve_path(&cfg.dataset_dir))?;
        let out_dir = resolve_path(&cfg.out_dir);
        let exp = &cfg.experiment;
        let pool = dataset.manifest.train_pool().len();
        let n_labeled = (exp.labeled_fraction * pool as f64).round() as usize;
        println!(
            "dry-run: {}",
            serde_json::to_string_pretty(&exp).expect("config serializes")
        );
        println!(
            "plan: {} warmup + {} semi-supervised iterations; {} labeled / {} unlabeled of {} train images; {} validation images; outputs -> {}",
            exp.resolved_warmup(),
            exp.total_iters - exp.resolved_warmup(),
            n_labeled,
            pool - n_labeled,
            pool,
            dataset.manifest.validation.len(),
            out_dir.display()
        );
        return Ok(TrainSummary {
            out_dir,
            strategy: exp.strategy,
            labeled_fraction: exp.labeled_fraction,
            seed: exp.seed,
            val_miou: 0.0,
            teacher_val_miou: None,
            per_class_iou: Vec::new(),
        });
    }

    let summary = train_from_config(&cfg)?;
    println!(
        "train: strategy={} fraction={} seed={} -> mIoU {:.4}{} ({})",
        summary.strategy,
        summary.labeled_fraction,
        summary.seed,
        summary.val_miou,
        summary
            .teacher_val_miou
            .map(|t| format!(" (teacher {t:.4})"))
            .unwrap_or_default(),
        summary.out_dir.display()
    );
    Ok(summary)
}

/// Run one training job from an already-validated config. Shared by the CLI
/// and the C ABI layer.
pub fn train_from_config(cfg: &TrainConfig) -> Result<TrainSummary> {
    let dataset_dir = resolve_path(&cfg.dataset_dir);
    let out_dir = resolve_path(&cfg.out_dir);
    let dataset = load_dataset(&dataset_dir)?;

    create_dir(&out_dir)?;
    write_text(
        &out_dir.join("run_config.json"),
        &serde_json::to_string_pretty(&cfg).expect("config serializes"),
    )?;

    let outcome = train_into_dir(&cfg.experiment, &dataset, &out_dir)?;

    let summary = TrainSummary {
        out_dir: out_dir.clone(),
        strategy: cfg.experiment.strategy,
        labeled_fraction: cfg.experiment.labeled_fraction,
        seed: cfg.experiment.seed,
        val_miou: outcome.val_miou,
        teacher_val_miou: outcome.teacher_val_miou,
        per_class_iou: outcome.per_class_iou.clone(),
    };
    let results = format!(
        "{}\n{}\n",
        results_header(dataset.num_classes()),
        results_row(
            summary.strategy,
            summary.labeled_fraction,
            summary.seed,
            summary.val_miou,
            summary.teacher_val_miou,
            &summary.per_class_iou,
        )
    );
    write_text(&out_dir.join("results.csv"), &results)?;
    Ok(summary)
}

/// Run training with streaming CSV logs and periodic checkpoints in
/// `out_dir`. The checkpoint files always hold the latest evaluated state, so
/// a diverged run keeps its last good snapshot.
fn train_into_dir(exp: &ExperimentConfig, dataset: &Dataset, out_dir: &Path) -> Result<TrainOutcome> {
    let log_path = out_dir.join("log.csv");
    let file = fs::File::create(&log_path).map_err(|e| Error::io(log_path.display().to_string(), e))?;
    let mut log = std::io::BufWriter::new(file);
    let werr = |e: std::io::Error| Error::io(log_path.display().to_string(), e);
    writeln!(log, "{LOG_HEADER}").map_err(werr)?;

    let student_ckpt = out_dir.join("student.ckpt");
    let teacher_ckpt = out_dir.join("teacher.ckpt");
    let run_result = run_observed(exp, dataset, &mut |state, iter_log| {
        writeln!(log, "{}", log_row(iter_log)).map_err(werr)?;
        if iter_log.val_miou.is_some() {
            // Evaluation points double as checkpoint points.
            log.flush().map_err(werr)?;
            write_checkpoint(&state.student, &student_ckpt)?;
            if state.config.strategy != Strategy::None {
                write_checkpoint(&state.teacher, &teacher_ckpt)?;
            }
        }
        Ok(())
    });
    log.flush().map_err(werr)?;

    let outcome = run_result?;
    write_checkpoint(&outcome.state.student, &student_ckpt)?;
    if exp.strategy != Strategy::None {
        write_checkpoint(&outcome.state.teacher, &teacher_ckpt)?;
    }
    Ok(outcome)
}

/// Outcome of a sweep: per-run rows plus the aggregated summary table.
#[derive(Debug, Clone)]
pub struct SweepSummary {
    pub out_dir: PathBuf,
    pub completed: usize,
    pub skipped: usize,
    pub failed: usize,
    pub results_path: PathBuf,
    pub summary_path: PathBuf,
}

#[derive(Debug, Clone, PartialEq)]
struct CellKey {
    strategy: Strategy,
    fraction: f64,
    seed: u64,
}

fn parse_result_rows(text: &str) -> Vec<(CellKey, f64)> {
    text.lines()
        .skip(1)
        .filter_map(|line| {
            let mut cols = line.split(',');
            let strategy = cols.next()?.parse::<Strategy>().ok()?;
            let fraction = cols.next()?.parse::<f64>().ok()?;
            let seed = cols.next()?.parse::<u64>().ok()?;
            let miou = cols.next()?.parse::<f64>().ok()?;
            Some((
                CellKey {
                    strategy,
                    fraction,
                    seed,
                },
                miou,
            ))
        })
        .collect()
}

/// Cartesian sweep over strategies x fractions x seeds. Cells run in
/// parallel worker threads with independent derived rng streams; per-cell
/// failures are recorded and the sweep continues. With `resume`, cells whose
/// rows already exist in `results.csv` are skipped.
pub fn cmd_sweep(config_path: &Path, resume: bool, jobs: Option<usize>) -> Result<SweepSummary> {
    let cfg = load_sweep_config(config_path)?;
    let dataset_dir = resolve_path(&cfg.dataset_dir);
    let out_dir = resolve_path(&cfg.out_dir);
    let dataset = load_dataset(&dataset_dir)?;
    create_dir(&out_dir)?;
    write_text(
        &out_dir.join("sweep_config.json"),
        &serde_json::to_string_pretty(&cfg).expect("config serializes"),
    )?;

    let results_path = out_dir.join("results.csv");
    let existing: Vec<(CellKey, f64)> = if resume && results_path.exists() {
        let text = fs::read_to_string(&results_path)
            .map_err(|e| Error::io(results_path.display().to_string(), e))?;
        parse_result_rows(&text)
    } else {
        Vec::new()
    };

    let mut cells = Vec::new();
    for &strategy in &cfg.strategies {
        for &fraction in &cfg.fractions {
            for &seed in &cfg.seeds {
                cells.push(CellKey {
                    strategy,
                    fraction,
                    seed,
                });
            }
        }
    }
    let (pending, skipped): (Vec<_>, Vec<_>) = cells
        .into_iter()
        .partition(|cell| !existing.iter().any(|(k, _)| k == cell));

    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(jobs.unwrap_or_else(|| rayon::current_num_threads().min(4)))
        .build()
        .map_err(|e| Error::invalid(format!("thread pool: {e}")))?;

    type CellResult = (CellKey, std::result::Result<(TrainSummary, Vec<Option<f64>>), String>);
    let outcomes: Vec<CellResult> = pool.install(|| {
        pending
            .par_iter()
            .map(|cell| {
                let mut exp = cfg.base.clone();
                exp.strategy = cell.strategy;
                exp.labeled_fraction = cell.fraction;
                exp.seed = cell.seed;
                let res = crate::trainer::run(&exp, &dataset)
                    .map(|outcome| {
                        (
                            TrainSummary {
                                out_dir: out_dir.clone(),
                                strategy: cell.strategy,
                                labeled_fraction: cell.fraction,
                                seed: cell.seed,
                                val_miou: outcome.val_miou,
                                teacher_val_miou: outcome.teacher_val_miou,
                                per_class_iou: outcome.per_class_iou.clone(),
                            },
                            outcome.per_class_iou,
                        )
                    })
                    .map_err(|e| e.to_string());
                (cell.clone(), res)
            })
            .collect()
    });

    // Deterministic row order: strategy, fraction, seed.
    let mut new_rows: Vec<(CellKey, String, f64)> = Vec::new();
    let mut failures: Vec<String> = Vec::new();
    for (cell, res) in outcomes {
        match res {
            Ok((summary, per_class)) => {
                let row = results_row(
                    cell.strategy,
                    cell.fraction,
                    cell.seed,
                    summary.val_miou,
                    summary.teacher_val_miou,
                    &per_class,
                );
                new_rows.push((cell, row, summary.val_miou));
            }
            Err(msg) => failures.push(format!(
                "strategy={} fraction={} seed={}: {msg}",
                cell.strategy, cell.fraction, cell.seed
            )),
        }
    }
    new_rows.sort_by(|a, b| {
        (a.0.strategy.to_string(), a.0.fraction, a.0.seed)
            .partial_cmp(&(b.0.strategy.to_string(), b.0.fraction, b.0.seed))
            .expect("finite keys")
    });

    // Rewrite results.csv: kept rows (resume) plus new ones.
    let mut table: Vec<(CellKey, f64)> = existing.clone();
    let mut text = String::new();
    text.push_str(&results_header(dataset.num_classes()));
    text.push('\n');
    if resume && results_path.exists() {
        let old = fs::read_to_string(&results_path)
            .map_err(|e| Error::io(results_path.display().to_string(), e))?;
        for line in old.lines().skip(1) {
            text.push_str(line);
            text.push('\n');
        }
    }
    for (cell, row, miou) in &new_rows {
        text.push_str(row);
        text.push('\n');
        table.push((cell.clone(), *miou));
    }
    write_text(&results_path, &text)?;

    if !failures.is_empty() {
        let mut msg = failures.join("\n");
        msg.push('\n');
        write_text(&out_dir.join("failures.log"), &msg)?;
        for f in &failures {
            eprintln!("sweep cell failed: {f}");
        }
    }

    // Summary table mirroring the results layout: one row per strategy, one
    // column per fraction, cells as "mean ± std" over seeds, in percent.
    let summary_path = out_dir.join("summary.csv");
    let mut summary = String::from("strategy");
    for f in &cfg.fractions {
        summary.push_str(&format!(",{f}"));
    }
    summary.push('\n');
    for &strategy in &cfg.strategies {
        summary.push_str(&strategy.to_string());
        for &fraction in &cfg.fractions {
            let vals: Vec<f64> = table
                .iter()
                .filter(|(k, _)| k.strategy == strategy && k.fraction == fraction)
                .map(|(_, m)| *m)
                .collect();
            if vals.is_empty() {
                summary.push(',');
            } else {
                let (mean, std) = mean_iou_over_seeds(&vals)?;
                summary.push_str(&format!(",{}", format_mean_std_percent(mean, std)));
            }
        }
        summary.push('\n');
    }
    write_text(&summary_path, &summary)?;

    println!(
        "sweep: {} cells run, {} skipped, {} failed -> {}",
        new_rows.len(),
        skipped.len(),
        failures.len(),
        summary_path.display()
    );
    Ok(SweepSummary {
        out_dir,
        completed: new_rows.len(),
        skipped: skipped.len(),
        failed: failures.len(),
        results_path,
        summary_path,
    })
}

/// Per-class IoU and mIoU of a checkpoint on a dataset's validation split.
#[derive(Debug, Clone)]
pub struct EvalSummary {
    pub per_class_iou: Vec<Option<f64>>,
    pub miou: f64,
}

pub fn cmd_eval(checkpoint: &Path, dataset_dir: &Path) -> Result<EvalSummary> {
    let dataset = load_dataset(&resolve_path(dataset_dir))?;
    let params = read_checkpoint(&resolve_path(checkpoint))?;
    let net = crate::model::ReferenceNet::standard(dataset.num_classes());
    if params.num_values() != net.init_params(&mut crate::rng::Rng::new(0)).num_values() {
        return Err(Error::invalid(format!(
            "checkpoint does not match the reference architecture for {} classes",
            dataset.num_classes()
        )));
    }
    let cm = evaluate(&net, &params, &dataset, &dataset.manifest.validation)?;
    let per_class = cm.iou_per_class();
    let miou = cm
        .mean_iou()
        .ok_or_else(|| Error::invalid("validation split defines no class"))?;
    for (c, iou) in per_class.iter().enumerate() {
        match iou {
            Some(v) => println!("class {c}: IoU {v:.4}"),
            None => println!("class {c}: undefined (absent)"),
        }
    }
    println!("mIoU: {miou:.4}");
    Ok(EvalSummary {
        per_class_iou: per_class,
        miou,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn results_row_round_trips_through_parser() {
        let row = format!(
            "{}\n{}\n",
            results_header(2),
            results_row(Strategy::Complexmix, 0.125, 3, 0.75, Some(0.7), &[Some(0.5), None])
        );
        let parsed = parse_result_rows(&row);
        assert_eq!(parsed.len(), 1);
        assert_eq!(parsed[0].0.strategy, Strategy::Complexmix);
        assert_eq!(parsed[0].0.fraction, 0.125);
        assert_eq!(parsed[0].0.seed, 3);
        assert_eq!(parsed[0].1, 0.75);
    }

    #[test]
    fn resolve_path_honors_out_dir_env() {
        // Absolute paths pass through regardless of the env var.
        let abs = PathBuf::from("/tmp/x");
        assert_eq!(resolve_path(&abs), abs);
    }
}
