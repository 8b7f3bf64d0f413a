use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand, ValueEnum};
use log::{info, warn};

use zonal_core::data::{list_cases, load_case, load_volume, prepare_case, save_volume, write_phantom_dataset, Case};
use zonal_core::metrics::{SegReport, Subset, Zone};
use zonal_core::stats::wilcoxon_rank_sum;
use zonal_core::train::{
    compare_paired, cross_validate, evaluate, predict_volume, run, run_maxpool_ablation, train, Checkpoint,
    TrainConfig, Trainer,
};

#[derive(Parser)]
#[command(name = "zonalnet", version, about = "Prostate zonal segmentation: training, evaluation and statistics")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Write a synthetic phantom dataset.
    Phantoms {
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 40)]
        count: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 20)]
        slices: usize,
        #[arg(long, default_value_t = 192)]
        size: usize,
        /// Also write second-reader masks.
        #[arg(long)]
        reader2: bool,
    },
    /// Train a model; writes final/best checkpoints and history.csv.
    Train {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Continue from a checkpoint instead of starting fresh.
        #[arg(long)]
        resume: Option<PathBuf>,
    },
    /// Patient-level k-fold cross-validation.
    Cv {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        folds: Option<usize>,
        /// Where to write the selected checkpoint and fold summary.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Score a checkpoint on a dataset; the report extension picks CSV or JSON.
    Eval {
        #[arg(long)]
        ckpt: PathBuf,
        #[arg(long)]
        data: PathBuf,
        /// Directory with second-reader masks (`<id>_mask_reader2` or `<id>_mask`).
        #[arg(long)]
        reader2: Option<PathBuf>,
        #[arg(long)]
        report: PathBuf,
    },
    /// Segment one image volume and write the mask volume.
    Predict {
        #[arg(long)]
        ckpt: PathBuf,
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Compare two JSON reports cell by cell.
    Stats {
        #[arg(long = "report", num_args = 1, required = true)]
        reports: Vec<PathBuf>,
        #[arg(long, value_enum)]
        test: TestKind,
    },
    /// Train with and without the stem max-pool and compare on test data.
    Ablation {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        test_data: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum TestKind {
    Ranksum,
    Signedrank,
}

fn main() -> Result<()> {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    match Cli::parse().command {
        Command::Phantoms { out, count, seed, slices, size, reader2 } => {
            write_phantom_dataset(&out, count, seed, slices, size, reader2)?;
            info!("wrote {count} phantom cases to {}", out.display());
        }
        Command::Train { config, out, resume } => cmd_train(&config, &out, resume.as_deref())?,
        Command::Cv { config, folds, out } => cmd_cv(&config, folds, out.as_deref())?,
        Command::Eval { ckpt, data, reader2, report } => cmd_eval(&ckpt, &data, reader2.as_deref(), &report)?,
        Command::Predict { ckpt, input, out } => {
            let ckpt = Checkpoint::load(&ckpt)?;
            let mask = predict_volume(&ckpt.model()?, &load_volume(&input)?, ckpt.config.crop_mm)?;
            save_volume(&mask, &out)?;
        }
        Command::Stats { reports, test } => cmd_stats(&reports, test)?,
        Command::Ablation { config, test_data, out } => cmd_ablation(&config, &test_data, &out)?,
    }
    Ok(())
}

/// Loads a config, resolving relative dataset paths against its directory.
fn load_config(path: &Path) -> Result<TrainConfig> {
    let mut config = TrainConfig::load(path).with_context(|| format!("reading config {}", path.display()))?;
    let base = path.parent().unwrap_or(Path::new("."));
    for p in [&mut config.dataset, &mut config.validation_dataset].into_iter().flatten() {
        if p.is_relative() {
            *p = base.join(&*p);
        }
    }
    Ok(config)
}

fn load_cases(dir: &Path) -> Result<Vec<Case>> {
    let cases = list_cases(dir)?.iter().map(load_case).collect::<zonal_core::Result<Vec<_>>>()?;
    if cases.is_empty() {
        bail!("no cases found in {}", dir.display());
    }
    Ok(cases)
}

fn dataset(config: &TrainConfig) -> Result<&Path> {
    config.dataset.as_deref().context("config has no dataset path")
}

fn cmd_train(config_path: &Path, out: &Path, resume: Option<&Path>) -> Result<()> {
    let config = load_config(config_path)?;
    let prepare = |dir: &Path| -> Result<Vec<_>> {
        Ok(load_cases(dir)?
            .iter()
            .map(|c| prepare_case(c, config.model.input_size, config.crop_mm))
            .collect::<zonal_core::Result<Vec<_>>>()?)
    };
    let train_cases = prepare(dataset(&config)?)?;
    let validation = match &config.validation_dataset {
        Some(dir) => prepare(dir)?,
        None => Vec::new(),
    };
    let outcome = match resume {
        Some(path) => {
            let mut ckpt = Checkpoint::load(path)?;
            ckpt.config.epochs = config.epochs;
            run(Trainer::from_checkpoint(ckpt)?, &train_cases, &validation)?
        }
        None => train(&config, &train_cases, &validation)?,
    };
    outcome.save(out)?;
    info!("checkpoints written to {}", out.display());
    Ok(())
}

fn cmd_cv(config_path: &Path, folds: Option<usize>, out: Option<&Path>) -> Result<()> {
    let mut config = load_config(config_path)?;
    if let Some(k) = folds {
        config.folds = k;
    }
    let cases = load_cases(dataset(&config)?)?;
    let outcome = cross_validate(&config, &cases)?;
    println!("fold,validation_patients,pz,tz,mean");
    for f in &outcome.folds {
        println!("{},{},{:.4},{:.4},{:.4}", f.fold + 1, f.validation_ids.join(" "), f.pz, f.tz, f.score());
    }
    println!("selected fold {}", outcome.best_fold + 1);
    if let Some(dir) = out {
        outcome.best_checkpoint.save(&dir.join("selected"))?;
        let path = dir.join("folds.json");
        fs::write(&path, serde_json::to_string_pretty(&outcome.folds)?)?;
    }
    Ok(())
}

fn sibling(report: &Path, suffix: &str) -> PathBuf {
    let stem = report.file_stem().and_then(|s| s.to_str()).unwrap_or("report");
    let ext = report.extension().and_then(|s| s.to_str()).unwrap_or("json");
    report.with_file_name(format!("{stem}_{suffix}.{ext}"))
}

fn write_report(report: &SegReport, path: &Path) -> Result<()> {
    let text = match path.extension().and_then(|e| e.to_str()) {
        Some("csv") => report.to_csv(),
        Some("json") => report.to_json()?,
        _ => bail!("report must end in .csv or .json: {}", path.display()),
    };
    fs::write(path, text).with_context(|| format!("writing {}", path.display()))
}

fn cmd_eval(ckpt: &Path, data: &Path, reader2: Option<&Path>, report: &Path) -> Result<()> {
    let ckpt = Checkpoint::load(ckpt)?;
    let mut cases = load_cases(data)?;
    if let Some(dir) = reader2 {
        for case in &mut cases {
            let candidates = [dir.join(format!("{}_mask_reader2", case.id)), dir.join(format!("{}_mask", case.id))];
            match candidates.iter().find(|p| p.with_extension("json").exists()) {
                Some(p) => case.reader2 = Some(load_volume(p)?),
                None => warn!("{}: no second-reader mask in {}", case.id, dir.display()),
            }
        }
    }
    let evaluation = evaluate(&ckpt.model()?, &cases, ckpt.config.crop_mm)?;
    if !evaluation.skipped.is_empty() {
        warn!("{} case(s) skipped for missing masks: {}", evaluation.skipped.len(), evaluation.skipped.join(", "));
    }
    write_report(&evaluation.model, report)?;
    print!("{}", evaluation.model.to_csv().lines().take(3).map(|l| format!("{l}\n")).collect::<String>());
    if let Some(inter) = &evaluation.inter_reader {
        write_report(inter, &sibling(report, "inter_reader"))?;
        let path = report.with_file_name(format!(
            "{}_comparisons.json",
            report.file_stem().and_then(|s| s.to_str()).unwrap_or("report")
        ));
        fs::write(&path, serde_json::to_string_pretty(&evaluation.comparisons)?)?;
    }
    Ok(())
}

fn cmd_stats(paths: &[PathBuf], test: TestKind) -> Result<()> {
    if paths.len() != 2 {
        bail!("stats compares exactly two reports, got {}", paths.len());
    }
    let load = |p: &PathBuf| -> Result<SegReport> {
        let text = fs::read_to_string(p).with_context(|| format!("reading {}", p.display()))?;
        serde_json::from_str(&text).with_context(|| format!("parsing report {}", p.display()))
    };
    let (a, b) = (load(&paths[0])?, load(&paths[1])?);
    println!("zone,subset,n,statistic,p_value,method");
    match test {
        TestKind::Signedrank => {
            for c in compare_paired(&a, &b) {
                match c.test {
                    Some(t) => println!(
                        "{},{},{},{},{:.6},{:?}",
                        c.zone.name(),
                        c.subset.name(),
                        c.pairs,
                        t.statistic,
                        t.p_value,
                        t.method
                    ),
                    None => println!("{},{},{},,,{}", c.zone.name(), c.subset.name(), c.pairs, c.note.unwrap_or_default()),
                }
            }
        }
        TestKind::Ranksum => {
            for zone in Zone::ALL {
                for subset in Subset::ALL {
                    let values = |r: &SegReport| r.cell_values(zone, subset).into_iter().map(|(_, v)| v).collect::<Vec<_>>();
                    let (x, y) = (values(&a), values(&b));
                    let n = format!("{}+{}", x.len(), y.len());
                    match wilcoxon_rank_sum(&x, &y) {
                        Ok(t) => println!(
                            "{},{},{n},{},{:.6},{:?}",
                            zone.name(),
                            subset.name(),
                            t.statistic,
                            t.p_value,
                            t.method
                        ),
                        Err(e) => println!("{},{},{n},,,{e}", zone.name(), subset.name()),
                    }
                }
            }
        }
    }
    Ok(())
}

fn cmd_ablation(config_path: &Path, test_data: &Path, out: &Path) -> Result<()> {
    let config = load_config(config_path)?;
    let train_cases = load_cases(dataset(&config)?)?
        .iter()
        .map(|c| prepare_case(c, config.model.input_size, config.crop_mm))
        .collect::<zonal_core::Result<Vec<_>>>()?;
    let test_cases = load_cases(test_data)?;
    let outcome = run_maxpool_ablation(&config, &train_cases, &test_cases)?;
    fs::create_dir_all(out)?;
    write_report(&outcome.without_maxpool.model, &out.join("without_maxpool.csv"))?;
    write_report(&outcome.with_maxpool.model, &out.join("with_maxpool.csv"))?;
    fs::write(out.join("ablation.json"), serde_json::to_string_pretty(&outcome)?)?;
    for zone in Zone::ALL {
        let cell = |e: &zonal_core::train::Evaluation| {
            e.model.summary.get(zone, Subset::ProstateSlices).map_or_else(|| "NA".into(), |s| s.format(2))
        };
        let p = outcome
            .comparisons
            .iter()
            .find(|c| c.zone == zone && c.subset == Subset::ProstateSlices)
            .and_then(|c| c.test.as_ref())
            .map_or_else(|| "NA".into(), |t| format!("{:.4}", t.p_value));
        println!(
            "{} prostate slices: without max-pool {}, with max-pool {}, signed-rank p {p}",
            zone.name(),
            cell(&outcome.without_maxpool),
            cell(&outcome.with_maxpool)
        );
    }
    Ok(())
}
