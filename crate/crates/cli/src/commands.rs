//! Subcommand implementations.

use std::collections::BTreeMap;
use std::fs::{self, File};
use std::io::{BufReader, BufWriter};
use std::path::{Path, PathBuf};
use std::time::Instant;

use rayon::prelude::*;

use drive_core::adaptation::{run_on_data, EpochRecord, ExperimentOutcome, RunObserver, Variant};
use drive_core::data::{generate, load_csv, write_csv, LabeledSet, ShiftSpec, Split};
use drive_core::models::Checkpoint;
use drive_core::pseudo_label::Stage;

use crate::config::{DataSource, ExperimentConfig};
use crate::metrics::{read_records, run_id, write_records, FailureRecord, MetricsRecord, SCHEMA_VERSION};
use crate::plot::{line_chart, Series};
use crate::CliError;

pub const SUMMARY_FILE: &str = "summary.csv";
pub const ABLATION_FILE: &str = "ablation.csv";
pub const METRICS_FILE: &str = "metrics.jsonl";
/// Accuracy points a later ablation row may trail the previous one by.
pub const TIE_TOLERANCE: f64 = 0.5;

/// Outcome of one (variant, seed) run as listed in the summary.
#[derive(Debug, Clone, PartialEq)]
pub struct RunSummary {
    pub run_id: String,
    pub variant: Variant,
    pub seed: u64,
    /// `None` when the run failed.
    pub accuracies: Option<Accuracies>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Accuracies {
    pub source: f64,
    pub adapted: f64,
    pub prior: f64,
}

/// Formatting shared by every file that reports an accuracy.
pub fn fmt_acc(a: f64) -> String {
    format!("{a:.6}")
}

/// Worker count from `DRIVE_THREADS`, defaulting to the available cores.
pub fn thread_count() -> Result<usize, CliError> {
    match std::env::var("DRIVE_THREADS") {
        Ok(v) => match v.trim().parse::<usize>() {
            Ok(n) if n >= 1 => Ok(n),
            _ => Err(CliError::Config(format!("DRIVE_THREADS = `{v}` must be a positive integer"))),
        },
        Err(_) => Ok(std::thread::available_parallelism().map_or(1, usize::from)),
    }
}

fn runtime(context: &str, e: impl std::fmt::Display) -> CliError {
    CliError::Runtime(format!("{context}: {e}"))
}

fn prepare_out(dir: &Path) -> Result<(), CliError> {
    fs::create_dir_all(dir).map_err(|e| CliError::Config(format!("output directory {} is not writable: {e}", dir.display())))?;
    let probe = dir.join(".write-probe");
    fs::write(&probe, b"").map_err(|e| CliError::Config(format!("output directory {} is not writable: {e}", dir.display())))?;
    let _ = fs::remove_file(probe);
    Ok(())
}

fn load_splits(data: &DataSource, seed: u64) -> Result<(LabeledSet, LabeledSet, LabeledSet), CliError> {
    match data {
        DataSource::Synthetic(spec) => {
            let spec = ShiftSpec { seed, ..spec.clone() };
            generate(&spec).map_err(|e| runtime("data generation", e))
        }
        DataSource::Csv {
            source,
            target,
            broad,
            num_classes,
        } => {
            let load = |p: &Path, split| load_csv(p, *num_classes, split).map_err(|e| runtime(&p.display().to_string(), e));
            Ok((
                load(source, Split::Source)?,
                load(target, Split::Target)?,
                load(broad, Split::Broad)?,
            ))
        }
    }
}

/// Streams metrics records to disk as epochs complete.
struct MetricsWriter {
    out: BufWriter<File>,
    variant: Variant,
    seed: u64,
    mark: Instant,
    stage_ms: [u64; 2],
}

impl RunObserver for MetricsWriter {
    fn run_started(&mut self) {
        self.mark = Instant::now();
    }

    fn stage_done(&mut self, _epoch: usize, stage: Stage) {
        let ms = self.mark.elapsed().as_millis() as u64;
        self.mark = Instant::now();
        match stage {
            Stage::One => self.stage_ms[0] = ms,
            Stage::Two => self.stage_ms[1] = ms,
        }
    }

    fn epoch_done(&mut self, record: &EpochRecord) -> drive_core::Result<()> {
        let recs = MetricsRecord::from_epoch(self.variant, self.seed, record, self.stage_ms);
        write_records(&mut self.out, &recs)?;
        Ok(())
    }
}

fn run_one(cfg: &ExperimentConfig, variant: Variant, seed: u64, dir: &Path) -> Result<ExperimentOutcome, CliError> {
    let cfg = cfg.with_variant(variant);
    fs::create_dir_all(dir).map_err(|e| runtime(&dir.display().to_string(), e))?;
    fs::write(dir.join("config.txt"), cfg.to_flat_string()).map_err(|e| runtime("config.txt", e))?;
    let file = File::create(dir.join(METRICS_FILE)).map_err(|e| runtime(METRICS_FILE, e))?;
    let mut writer = MetricsWriter {
        out: BufWriter::new(file),
        variant,
        seed,
        mark: Instant::now(),
        stage_ms: [0, 0],
    };
    let (source, target, broad) = load_splits(&cfg.data, seed)?;
    let outcome = run_on_data(&source, &target, &broad, &cfg.pretrain, &cfg.adapt, seed, &mut writer)
        .map_err(|e| runtime(&run_id(variant, seed), e))?;
    Checkpoint::from_net(&outcome.report.target)
        .save(&dir.join("target.ckpt"))
        .map_err(|e| runtime("target checkpoint", e))?;
    Checkpoint::from_prior(&outcome.pretrained.prior, &outcome.report.context)
        .save(&dir.join("prior.ckpt"))
        .map_err(|e| runtime("prior checkpoint", e))?;
    Ok(outcome)
}

/// Runs every (variant, seed) pair on a worker pool and returns summaries in
/// (variant, seed) order. Failed runs leave a `failure.json` in their
/// directory.
pub fn run_grid(cfg: &ExperimentConfig, variants: &[Variant]) -> Result<Vec<RunSummary>, CliError> {
    prepare_out(&cfg.out)?;
    let jobs: Vec<(Variant, u64)> = variants
        .iter()
        .flat_map(|&v| cfg.seeds.iter().map(move |&s| (v, s)))
        .collect();
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(thread_count()?)
        .build()
        .map_err(|e| runtime("worker pool", e))?;
    let results: Vec<RunSummary> = pool.install(|| {
        jobs.par_iter()
            .map(|&(variant, seed)| {
                let id = run_id(variant, seed);
                let dir = cfg.out.join("runs").join(&id);
                log::info!("starting {id}");
                match run_one(cfg, variant, seed, &dir) {
                    Ok(o) => RunSummary {
                        run_id: id,
                        variant,
                        seed,
                        accuracies: Some(Accuracies {
                            source: o.source_accuracy,
                            adapted: o.adapted_accuracy,
                            prior: o.prior_accuracy,
                        }),
                    },
                    Err(e) => {
                        log::error!("{id} failed: {e}");
                        let record = FailureRecord {
                            schema_version: SCHEMA_VERSION,
                            run_id: id.clone(),
                            seed,
                            variant: variant.name().into(),
                            error: e.to_string(),
                        };
                        let _ = fs::create_dir_all(&dir);
                        let _ = fs::write(
                            dir.join("failure.json"),
                            serde_json::to_string(&record).expect("failure records serialize"),
                        );
                        RunSummary {
                            run_id: id,
                            variant,
                            seed,
                            accuracies: None,
                        }
                    }
                }
            })
            .collect()
    });
    Ok(results)
}

pub fn write_summary(path: &Path, rows: &[RunSummary]) -> Result<(), CliError> {
    let mut w = csv::Writer::from_path(path).map_err(|e| runtime(SUMMARY_FILE, e))?;
    let header = [
        "run_id",
        "variant",
        "seed",
        "status",
        "source_accuracy",
        "adapted_accuracy",
        "prior_accuracy",
    ];
    w.write_record(header).map_err(|e| runtime(SUMMARY_FILE, e))?;
    for r in rows {
        let (status, a) = match r.accuracies {
            Some(a) => ("ok", [fmt_acc(a.source), fmt_acc(a.adapted), fmt_acc(a.prior)]),
            None => ("failed", [String::new(), String::new(), String::new()]),
        };
        let seed = r.seed.to_string();
        w.write_record([r.run_id.as_str(), r.variant.name(), seed.as_str(), status, &a[0], &a[1], &a[2]])
            .map_err(|e| runtime(SUMMARY_FILE, e))?;
    }
    w.flush().map_err(|e| runtime(SUMMARY_FILE, e))
}

fn fail_if_any(rows: &[RunSummary]) -> Result<(), CliError> {
    let failed: Vec<&str> = rows
        .iter()
        .filter(|r| r.accuracies.is_none())
        .map(|r| r.run_id.as_str())
        .collect();
    if failed.is_empty() {
        Ok(())
    } else {
        Err(CliError::Runtime(format!("runs failed: {}", failed.join(", "))))
    }
}

/// Generates data, pretrains and adapts for every seed of the configured
/// variant; writes per-run artifacts and `summary.csv`.
pub fn cmd_run(cfg: &ExperimentConfig) -> Result<Vec<RunSummary>, CliError> {
    let rows = run_grid(cfg, &[cfg.adapt.variant])?;
    write_summary(&cfg.out.join(SUMMARY_FILE), &rows)?;
    fail_if_any(&rows)?;
    Ok(rows)
}

/// One ablation row: accuracy statistics of a variant over seeds, in percent.
#[derive(Debug, Clone, PartialEq)]
pub struct AblationRow {
    pub variant: Variant,
    pub runs: usize,
    pub mean: f64,
    pub std: f64,
    /// Mean is at least the previous row's mean minus the tie tolerance.
    pub step_ok: bool,
}

/// Mean and sample standard deviation.
pub fn mean_std(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    if xs.is_empty() {
        return (f64::NAN, f64::NAN);
    }
    let mean = xs.iter().sum::<f64>() / n;
    if xs.len() < 2 {
        return (mean, 0.0);
    }
    let var = xs.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}

/// Per-step ordering check: row `k` passes when `means[k] >= means[k-1] - tol`.
/// The first row always passes.
pub fn ordering_steps(means: &[f64], tol: f64) -> Vec<bool> {
    let mut out = vec![true; means.len()];
    for k in 1..means.len() {
        out[k] = means[k] >= means[k - 1] - tol;
    }
    out
}

pub fn ablation_rows(summaries: &[RunSummary]) -> Vec<AblationRow> {
    let mut rows: Vec<AblationRow> = Variant::ladder()
        .iter()
        .map(|&v| {
            let accs: Vec<f64> = summaries
                .iter()
                .filter(|s| s.variant == v)
                .filter_map(|s| s.accuracies.map(|a| 100.0 * a.adapted))
                .collect();
            let (mean, std) = mean_std(&accs);
            AblationRow {
                variant: v,
                runs: accs.len(),
                mean,
                std,
                step_ok: true,
            }
        })
        .collect();
    let means: Vec<f64> = rows.iter().map(|r| r.mean).collect();
    for (r, ok) in rows.iter_mut().zip(ordering_steps(&means, TIE_TOLERANCE)) {
        r.step_ok = ok;
    }
    rows
}

pub fn write_ablation(path: &Path, rows: &[AblationRow]) -> Result<bool, CliError> {
    let holds = rows.iter().all(|r| r.step_ok);
    let mut w = csv::Writer::from_path(path).map_err(|e| runtime(ABLATION_FILE, e))?;
    w.write_record([
        "variant",
        "entropy_off",
        "perturb_off",
        "dynamic_eta_off",
        "runs",
        "mean_accuracy",
        "std_accuracy",
        "mean_pm_std",
        "step_non_decreasing",
        "ordering_holds",
    ])
    .map_err(|e| runtime(ABLATION_FILE, e))?;
    for r in rows {
        w.write_record([
            r.variant.name().to_string(),
            r.variant.entropy_off.to_string(),
            r.variant.perturb_off.to_string(),
            r.variant.dynamic_eta_off.to_string(),
            r.runs.to_string(),
            format!("{:.4}", r.mean),
            format!("{:.4}", r.std),
            format!("{:.2} ± {:.2}", r.mean, r.std),
            r.step_ok.to_string(),
            holds.to_string(),
        ])
        .map_err(|e| runtime(ABLATION_FILE, e))?;
    }
    w.flush().map_err(|e| runtime(ABLATION_FILE, e))?;
    Ok(holds)
}

/// Runs the four ablation variants over all seeds; writes `summary.csv` and
/// `ablation.csv`. Returns the rows and whether the ordering held.
pub fn cmd_ablate(cfg: &ExperimentConfig) -> Result<(Vec<AblationRow>, bool), CliError> {
    let summaries = run_grid(cfg, &Variant::ladder())?;
    write_summary(&cfg.out.join(SUMMARY_FILE), &summaries)?;
    fail_if_any(&summaries)?;
    let rows = ablation_rows(&summaries);
    let holds = write_ablation(&cfg.out.join(ABLATION_FILE), &rows)?;
    if !holds {
        log::warn!("ablation ordering does not hold within {TIE_TOLERANCE} points");
    }
    Ok((rows, holds))
}

fn find_metrics(dir: &Path, found: &mut Vec<PathBuf>) -> std::io::Result<()> {
    let mut entries: Vec<_> = fs::read_dir(dir)?.collect::<Result<_, _>>()?;
    entries.sort_by_key(|e| e.path());
    for e in entries {
        let p = e.path();
        if p.is_dir() {
            find_metrics(&p, found)?;
        } else if p.file_name().is_some_and(|n| n == METRICS_FILE) {
            found.push(p);
        }
    }
    Ok(())
}

/// What `cmd_report` produced.
#[derive(Debug, Clone, PartialEq)]
pub struct ReportSummary {
    pub runs: usize,
    pub records: usize,
    pub skipped: usize,
    pub files: Vec<PathBuf>,
}

/// Reads every `metrics.jsonl` under `metrics_dir` and writes three SVG plots
/// and `digest.txt` into `out`.
pub fn cmd_report(metrics_dir: &Path, out: &Path) -> Result<ReportSummary, CliError> {
    if !metrics_dir.is_dir() {
        return Err(CliError::Runtime(format!("{} is not a directory", metrics_dir.display())));
    }
    let mut files = Vec::new();
    find_metrics(metrics_dir, &mut files).map_err(|e| runtime(&metrics_dir.display().to_string(), e))?;
    let mut by_run: BTreeMap<String, Vec<MetricsRecord>> = BTreeMap::new();
    let mut skipped = 0;
    let mut total = 0;
    for f in &files {
        let file = File::open(f).map_err(|e| runtime(&f.display().to_string(), e))?;
        let (recs, bad) = read_records(BufReader::new(file)).map_err(|e| runtime(&f.display().to_string(), e))?;
        skipped += bad;
        total += recs.len();
        for r in recs {
            by_run.entry(r.run_id.clone()).or_default().push(r);
        }
    }
    if by_run.is_empty() {
        return Err(CliError::Runtime(format!(
            "no metrics records found under {}",
            metrics_dir.display()
        )));
    }
    for recs in by_run.values_mut() {
        recs.sort_by_key(|r| (r.epoch, r.stage));
    }
    fs::create_dir_all(out).map_err(|e| runtime(&out.display().to_string(), e))?;

    let stage_points = |recs: &[MetricsRecord], stage: u8, f: fn(&MetricsRecord) -> f64| -> Vec<(f64, f64)> {
        recs.iter()
            .filter(|r| r.stage == stage)
            .map(|r| (r.epoch as f64, f(r)))
            .collect()
    };

    let mut losses = Vec::new();
    let mut accuracy = Vec::new();
    let mut eta = Vec::new();
    for (id, recs) in &by_run {
        losses.push(Series {
            label: format!("{id} stage 1"),
            points: stage_points(recs, 1, |r| r.losses.total),
            dashed: true,
        });
        losses.push(Series {
            label: format!("{id} stage 2"),
            points: stage_points(recs, 2, |r| r.losses.total),
            dashed: false,
        });
        accuracy.push(Series {
            label: id.clone(),
            points: stage_points(recs, 2, |r| r.accuracy),
            dashed: false,
        });
        eta.push(Series {
            label: format!("{id} mean"),
            points: stage_points(recs, 2, |r| r.eta.mean),
            dashed: false,
        });
        eta.push(Series {
            label: format!("{id} min/max"),
            points: stage_points(recs, 2, |r| r.eta.min),
            dashed: true,
        });
        eta.push(Series {
            label: String::new(),
            points: stage_points(recs, 2, |r| r.eta.max),
            dashed: true,
        });
    }

    let plots = [
        ("loss_curves.svg", line_chart("Loss per stage", "epoch", "total loss", &losses)),
        ("accuracy.svg", line_chart("Target accuracy", "epoch", "accuracy", &accuracy)),
        ("eta.svg", line_chart("Perturbation init scale", "epoch", "eta", &eta)),
    ];
    let mut written = Vec::new();
    for (name, svg) in plots {
        let p = out.join(name);
        fs::write(&p, svg).map_err(|e| runtime(name, e))?;
        written.push(p);
    }

    let mut digest = String::new();
    digest.push_str(&format!("runs: {}\nrecords: {total}\nskipped corrupt records: {skipped}\n\n", by_run.len()));
    digest.push_str("run_id\tepochs\tfinal_accuracy\tfinal_stage1_loss\tfinal_stage2_loss\n");
    for (id, recs) in &by_run {
        let last2 = recs.iter().rev().find(|r| r.stage == 2);
        let last1 = recs.iter().rev().find(|r| r.stage == 1);
        let epochs = recs.iter().map(|r| r.epoch + 1).max().unwrap_or(0);
        digest.push_str(&format!(
            "{id}\t{epochs}\t{}\t{}\t{}\n",
            last2.map_or("-".into(), |r| fmt_acc(r.accuracy)),
            last1.map_or("-".into(), |r| format!("{:.6}", r.losses.total)),
            last2.map_or("-".into(), |r| format!("{:.6}", r.losses.total)),
        ));
    }
    let p = out.join("digest.txt");
    fs::write(&p, digest).map_err(|e| runtime("digest.txt", e))?;
    written.push(p);

    Ok(ReportSummary {
        runs: by_run.len(),
        records: total,
        skipped,
        files: written,
    })
}

/// Writes `source.csv`, `target.csv` and `broad.csv` for every seed under
/// `out/seed-<s>/`.
pub fn cmd_gen_data(cfg: &ExperimentConfig) -> Result<Vec<PathBuf>, CliError> {
    let spec = match &cfg.data {
        DataSource::Synthetic(s) => s,
        DataSource::Csv { .. } => {
            return Err(CliError::Config("gen-data needs a synthetic data spec, not CSV paths".into()))
        }
    };
    prepare_out(&cfg.out)?;
    let mut dirs = Vec::new();
    for &seed in &cfg.seeds {
        let (s, t, b) = generate(&ShiftSpec { seed, ..spec.clone() }).map_err(|e| runtime("data generation", e))?;
        let dir = cfg.out.join(format!("seed-{seed}"));
        fs::create_dir_all(&dir).map_err(|e| runtime(&dir.display().to_string(), e))?;
        for (name, set) in [("source.csv", &s), ("target.csv", &t), ("broad.csv", &b)] {
            write_csv(set, &dir.join(name)).map_err(|e| runtime(name, e))?;
        }
        dirs.push(dir);
    }
    Ok(dirs)
}
