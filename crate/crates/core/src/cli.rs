//! Command-line front end.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use serde::Serialize;

use crate::checkpoint;
use crate::config::RunConfig;
use crate::data::{self, standardize, SeriesDataset, Split};
use crate::dywpe::padded_len;
use crate::error::{Error, Result};
use crate::model::{InputDims, WaveFormer};
use crate::tensor::{Precision, Real, Tensor};
use crate::trainer::{self, RunMetrics};
use crate::wavelet::{
    dwt_multi, idwt_multi, wavelet_filters, write_coefficients_csv, BoundaryMode, Family,
};

#[derive(Debug, Parser)]
#[command(
    name = "waveformer",
    version,
    about = "Wavelet transformer for multivariate time-series classification"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Args)]
pub struct RunArgs {
    /// TOML configuration file; defaults apply when omitted.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Override a configuration value, e.g. `--set model.use_dywpe=false`.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    pub overrides: Vec<String>,
    /// Output directory, created if missing.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Train a model and write model.ckpt, metrics.csv and summary.json.
    Train(RunArgs),
    /// Score a checkpoint on a dataset's test split.
    Eval {
        #[arg(long)]
        checkpoint: PathBuf,
        /// Dataset directory (native CSV or UEA `.ts` pair).
        #[arg(long)]
        data: PathBuf,
        /// Where eval.json goes; defaults to the checkpoint's directory.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Train the full model and three single-component ablations over several seeds.
    Ablate {
        #[command(flatten)]
        run: RunArgs,
        /// Number of seeds, starting at `train.seed`.
        #[arg(long, default_value_t = 3)]
        seeds: u64,
    },
    /// Dump the wavelet decomposition of one sample.
    Inspect {
        #[arg(long)]
        data: PathBuf,
        #[arg(long, default_value_t = 0)]
        sample: usize,
        #[arg(long, value_enum, default_value = "train")]
        split: SplitArg,
        #[arg(long, default_value = "haar")]
        family: Family,
        #[arg(long, default_value_t = 3)]
        levels: usize,
        /// Also dump the positional field of this checkpoint for the sample.
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Write the configured synthetic task as a dataset directory.
    Synth(RunArgs),
}

#[derive(Debug, Clone, Copy, clap::ValueEnum)]
pub enum SplitArg {
    Train,
    Test,
}

/// Parses arguments, runs the command and returns the process exit code.
pub fn run<I, S>(args: I) -> i32
where
    I: IntoIterator<Item = S>,
    S: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return e.exit_code();
        }
    };
    match execute(cli.command) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}

pub fn execute(command: Command) -> Result<()> {
    match command {
        Command::Train(args) => cmd_train(&args),
        Command::Eval {
            checkpoint,
            data,
            out,
        } => cmd_eval(&checkpoint, &data, out.as_deref()),
        Command::Ablate { run, seeds } => cmd_ablate(&run, seeds),
        Command::Inspect {
            data,
            sample,
            split,
            family,
            levels,
            checkpoint,
            out,
        } => cmd_inspect(
            &data,
            sample,
            split,
            family,
            levels,
            checkpoint.as_deref(),
            &out,
        ),
        Command::Synth(args) => cmd_synth(&args),
    }
}

fn resolve_config(args: &RunArgs) -> Result<RunConfig> {
    let base = match &args.config {
        Some(path) => RunConfig::load(path)?,
        None => RunConfig::default(),
    };
    base.with_overrides(&args.overrides)
}

fn create_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))
}

fn write_json(path: &Path, value: &impl Serialize) -> Result<()> {
    let text = serde_json::to_string_pretty(value)?;
    fs::write(path, text + "\n").map_err(|e| Error::io(path, e))
}

/// Train/test splits for a run, standardized when configured.
pub fn load_data(cfg: &RunConfig) -> Result<(SeriesDataset, SeriesDataset)> {
    let (train, test) = if cfg.data.path.is_empty() {
        cfg.synth.generate()?
    } else {
        data::load_any(Path::new(&cfg.data.path))?
    };
    if cfg.data.standardize {
        standardize(train, test)
    } else {
        Ok((train, test))
    }
}

#[derive(Debug, Serialize)]
struct Summary<'a> {
    run_id: String,
    seed: u64,
    best_epoch: usize,
    epochs_run: usize,
    test_acc: Option<f64>,
    config: &'a RunConfig,
}

fn dims_of(ds: &SeriesDataset) -> InputDims {
    InputDims {
        channels: ds.channels,
        length: ds.length,
        classes: ds.classes,
    }
}

/// Trains one configuration; writes the checkpoint and metric files to `out`.
pub fn train_run<T: Real>(cfg: &RunConfig, out: &Path) -> Result<RunMetrics> {
    let (train, test) = load_data(cfg)?;
    let mut model = WaveFormer::<T>::new(cfg.model.clone(), dims_of(&train), cfg.train.seed)?;
    create_dir(out)?;
    let result = trainer::train_loop(&mut model, &train, Some(&test), &cfg.train, |row| {
        log::info!(
            "epoch {:>4}  loss {:.4}  acc {:.3}  val_loss {:.4}  val_acc {:.3}",
            row.epoch,
            row.train_loss,
            row.train_acc,
            row.val_loss,
            row.val_acc
        );
    });
    let metrics = match result {
        Ok(m) => m,
        Err(Error::Diverged { epoch, metrics }) => {
            trainer::write_metrics_csv(&out.join("metrics.csv"), &metrics.epochs)?;
            return Err(Error::Diverged { epoch, metrics });
        }
        Err(e) => return Err(e),
    };
    checkpoint::save(&out.join("model.ckpt"), &model, train.stats())?;
    trainer::write_metrics_csv(&out.join("metrics.csv"), &metrics.epochs)?;
    write_json(
        &out.join("summary.json"),
        &Summary {
            run_id: cfg.run_id(),
            seed: cfg.train.seed,
            best_epoch: metrics.best_epoch,
            epochs_run: metrics.epochs.len(),
            test_acc: metrics.test_acc,
            config: cfg,
        },
    )?;
    Ok(metrics)
}

fn train_any(cfg: &RunConfig, out: &Path) -> Result<RunMetrics> {
    match cfg.model.precision {
        Precision::F32 => train_run::<f32>(cfg, out),
        Precision::F64 => train_run::<f64>(cfg, out),
    }
}

fn cmd_train(args: &RunArgs) -> Result<()> {
    let cfg = resolve_config(args)?;
    let metrics = train_any(&cfg, &args.out)?;
    println!(
        "run {}: best epoch {} of {}, test accuracy {:.4}",
        cfg.run_id(),
        metrics.best_epoch,
        metrics.epochs.len(),
        metrics.test_acc.unwrap_or(f64::NAN)
    );
    Ok(())
}

#[derive(Debug, Serialize)]
struct EvalReport {
    accuracy: f64,
    samples: usize,
    /// `confusion[true][predicted]`.
    confusion: Vec<Vec<usize>>,
}

fn eval_typed<T: Real>(ckpt: &Path, data_dir: &Path) -> Result<EvalReport> {
    let (model, stats) = checkpoint::load::<T>(ckpt)?;
    let (_, mut test) = data::load_any(data_dir)?;
    let dims = model.dims();
    if test.channels != dims.channels {
        return Err(Error::Compatibility {
            what: "channel count C",
            expected: dims.channels,
            found: test.channels,
        });
    }
    if test.length != dims.length {
        return Err(Error::Compatibility {
            what: "series length L",
            expected: dims.length,
            found: test.length,
        });
    }
    if test.classes != dims.classes {
        return Err(Error::Compatibility {
            what: "class count K",
            expected: dims.classes,
            found: test.classes,
        });
    }
    if let Some(stats) = &stats {
        test.apply_stats(stats)?;
    }
    let confusion = trainer::confusion(&model, &test, 64)?;
    let correct: usize = (0..confusion.len()).map(|k| confusion[k][k]).sum();
    Ok(EvalReport {
        accuracy: correct as f64 / test.len().max(1) as f64,
        samples: test.len(),
        confusion,
    })
}

fn cmd_eval(ckpt: &Path, data_dir: &Path, out: Option<&Path>) -> Result<()> {
    let report = match checkpoint::read_manifest(ckpt)?.precision {
        Precision::F32 => eval_typed::<f32>(ckpt, data_dir)?,
        Precision::F64 => eval_typed::<f64>(ckpt, data_dir)?,
    };
    let out = out.map(Path::to_path_buf).unwrap_or_else(|| {
        ckpt.parent()
            .map(Path::to_path_buf)
            .unwrap_or_else(|| PathBuf::from("."))
    });
    create_dir(&out)?;
    write_json(&out.join("eval.json"), &report)?;
    println!(
        "accuracy {:.4} on {} samples",
        report.accuracy, report.samples
    );
    for (k, row) in report.confusion.iter().enumerate() {
        println!("class {k}: {row:?}");
    }
    Ok(())
}

pub const ABLATION_VARIANTS: [(&str, &str); 4] = [
    ("full", ""),
    ("no_wavelet_embed", "model.use_wavelet_embed=false"),
    ("no_dywpe", "model.use_dywpe=false"),
    ("no_rpe", "model.use_rpe=false"),
];

#[derive(Debug, Serialize)]
struct AblationSummary {
    variant: String,
    mean_test_acc: f64,
    /// Full-model mean minus this variant's mean.
    delta_vs_full: f64,
}

fn cmd_ablate(args: &RunArgs, seeds: u64) -> Result<()> {
    if seeds == 0 {
        return Err(Error::Config("--seeds must be at least 1".into()));
    }
    let base = resolve_config(args)?;
    create_dir(&args.out)?;
    let mut rows: Vec<(String, u64, f64)> = Vec::new();
    for (name, flag) in ABLATION_VARIANTS {
        for s in 0..seeds {
            let seed = base.train.seed + s;
            let mut overrides = vec![format!("train.seed={seed}")];
            if !flag.is_empty() {
                overrides.push(flag.to_string());
            }
            let cfg = base.with_overrides(&overrides)?;
            let metrics = train_any(&cfg, &args.out.join(format!("{name}_seed{seed}")))?;
            rows.push((name.to_string(), seed, metrics.test_acc.unwrap_or(f64::NAN)));
        }
    }
    let path = args.out.join("ablation.csv");
    let mut w = csv::Writer::from_path(&path).map_err(|e| Error::Integrity(e.to_string()))?;
    w.write_record(["variant", "seed", "test_acc"])
        .map_err(|e| Error::Integrity(e.to_string()))?;
    for (v, s, acc) in &rows {
        w.write_record([v.clone(), s.to_string(), acc.to_string()])
            .map_err(|e| Error::Integrity(e.to_string()))?;
    }
    w.flush().map_err(|e| Error::io(&path, e))?;

    let mean = |name: &str| {
        let accs: Vec<f64> = rows.iter().filter(|r| r.0 == name).map(|r| r.2).collect();
        accs.iter().sum::<f64>() / accs.len() as f64
    };
    let full = mean("full");
    let summary: Vec<AblationSummary> = ABLATION_VARIANTS
        .iter()
        .map(|(name, _)| AblationSummary {
            variant: name.to_string(),
            mean_test_acc: mean(name),
            delta_vs_full: full - mean(name),
        })
        .collect();
    write_json(&args.out.join("ablation_summary.json"), &summary)?;
    for s in &summary {
        println!(
            "{:<18} mean {:.4}  delta {:+.4}",
            s.variant, s.mean_test_acc, s.delta_vs_full
        );
    }
    Ok(())
}

fn cmd_inspect(
    data_dir: &Path,
    index: usize,
    split: SplitArg,
    family: Family,
    levels: usize,
    ckpt: Option<&Path>,
    out: &Path,
) -> Result<()> {
    if levels == 0 {
        return Err(Error::Config("--levels must be at least 1".into()));
    }
    let (train, test) = data::load_any(data_dir)?;
    let ds = match split {
        SplitArg::Train => train,
        SplitArg::Test => test,
    };
    let sample = ds.sample(index)?.to_vec();
    let (c, l) = (ds.channels, ds.length);
    let filters = wavelet_filters(family);
    let padded = padded_len(l, levels, filters.len());
    let x = Tensor::<f64>::from_vec(sample.clone(), &[c, l])?.pad_last(padded)?;
    let pyramid = dwt_multi(&x, levels, &filters, BoundaryMode::Periodization)?;
    let recon = idwt_multi(&pyramid, &filters)?;
    let err = (0..c)
        .flat_map(|ch| (0..l).map(move |t| (ch, t)))
        .map(|(ch, t)| (recon.data()[ch * padded + t] - sample[ch * l + t]).abs())
        .fold(0.0, f64::max);

    create_dir(out)?;
    let coef_path = out.join("coefficients.csv");
    let file = fs::File::create(&coef_path).map_err(|e| Error::io(&coef_path, e))?;
    let mut writer = std::io::BufWriter::new(file);
    write_coefficients_csv(&pyramid, &mut writer).map_err(|e| Error::io(&coef_path, e))?;
    writer.flush().map_err(|e| Error::io(&coef_path, e))?;

    if let Some(ckpt) = ckpt {
        match checkpoint::read_manifest(ckpt)?.precision {
            Precision::F32 => dump_field::<f32>(ckpt, &ds, index, out)?,
            Precision::F64 => dump_field::<f64>(ckpt, &ds, index, out)?,
        }
    }

    let line = format!(
        "sample {index} ({}): family {family}, levels {levels}, padded length {padded}, reconstruction_max_abs_error {err:e}",
        match ds.split {
            Split::Train => "train",
            Split::Test => "test",
        }
    );
    fs::write(out.join("inspect.txt"), format!("{line}\n"))
        .map_err(|e| Error::io(out.join("inspect.txt"), e))?;
    println!("{line}");
    Ok(())
}

/// Writes `positional.csv` (`token,dim,value`) for one sample.
fn dump_field<T: Real>(ckpt: &Path, ds: &SeriesDataset, index: usize, out: &Path) -> Result<()> {
    let (model, stats) = checkpoint::load::<T>(ckpt)?;
    let mut one = ds.subset(&[index]);
    if let Some(stats) = &stats {
        if one.stats().is_none() {
            one.apply_stats(stats)?;
        }
    }
    let (x, _) = one.batch::<T>(&[0]);
    let field = model
        .positional_field(&x)?
        .ok_or_else(|| Error::Config("checkpoint has no dynamic positional encoding".into()))?;
    let d = field.shape()[2];
    let path = out.join("positional.csv");
    let mut text = String::from("token,dim,value\n");
    for (i, v) in field.data().iter().enumerate() {
        text.push_str(&format!("{},{},{}\n", i / d, i % d, v));
    }
    fs::write(&path, text).map_err(|e| Error::io(&path, e))
}

fn cmd_synth(args: &RunArgs) -> Result<()> {
    let cfg = resolve_config(args)?;
    let (train, test) = cfg.synth.generate()?;
    data::csv::write_dataset_dir(&args.out, &train, &test, cfg.model.precision)?;
    println!(
        "wrote {} train / {} test samples (C={}, L={}, K={}) to {}",
        train.len(),
        test.len(),
        train.channels,
        train.length,
        train.classes,
        args.out.display()
    );
    Ok(())
}
