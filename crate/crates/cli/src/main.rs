//! `deari` command-line driver.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use deari::bayes::UncertaintyBand;
use deari::data::{ingest_csv, prepare, CsvSchema, Split};
use deari::harness::{
    baseline_impute, cross_validate, depth_sweep, evaluate, run, sweep_table, synth_generate,
    write_wide_csv, Baseline, Checkpoint, Prediction, RunConfig, SynthSpec,
};
use deari::stack::parameter_count;
use deari::{Array, Dataset, Error, Result, SeriesBatch};
use log::info;

#[derive(Parser)]
#[command(name = "deari", version, about = "Deep attention recurrent imputation for irregular time series")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Ingest a CSV, hold out evaluation cells and split into train/val/test.
    Prepare {
        #[arg(long)]
        input: PathBuf,
        /// long, wide, air or traffic
        #[arg(long, default_value = "wide")]
        schema: String,
        /// Steps per window.
        #[arg(long, default_value_t = 24)]
        window: usize,
        #[arg(long, default_value_t = 0.1)]
        mask_fraction: f64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 0.1)]
        val: f64,
        #[arg(long, default_value_t = 0.1)]
        test: f64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Train a model; writes checkpoint.json and metrics.json into --out.
    Train {
        /// TOML run configuration; defaults apply when omitted.
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Run k-fold cross-validation with the configured fold count instead.
        #[arg(long)]
        cv: bool,
    },
    /// Impute every cell of a prepared dataset (raw units).
    Impute {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Score a prediction, or a baseline, on the held-out cells.
    Evaluate {
        #[arg(long, required_unless_present = "baseline")]
        pred: Option<PathBuf>,
        /// Prepared dataset holding the ground truth.
        #[arg(long)]
        truth: PathBuf,
        /// mean, locf or linear
        #[arg(long, conflicts_with = "pred")]
        baseline: Option<String>,
        /// train, val, test or all
        #[arg(long, default_value = "all")]
        split: String,
    },
    /// Monte-Carlo uncertainty band of a Bayesian checkpoint as a CSV table.
    Uncertainty {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        n_sim: Option<usize>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Parameter-count report.
    Params {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long, default_value_t = 35)]
        features: usize,
    },
    /// Train one model per depth and print a CSV table.
    Sweep {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        data: PathBuf,
        /// Comma-separated layer counts.
        #[arg(long, value_delimiter = ',', default_value = "1,2,3,4")]
        layers: Vec<usize>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Generate a seeded synthetic dataset as a wide CSV.
    Synth {
        /// TOML generator spec; defaults apply when omitted.
        #[arg(long)]
        spec: Option<PathBuf>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
}

fn load_config(path: Option<&Path>) -> Result<RunConfig> {
    path.map_or_else(|| Ok(RunConfig::default()), RunConfig::load)
}

fn write_json(path: &Path, value: &impl serde::Serialize) -> Result<()> {
    fs::write(path, serde_json::to_string_pretty(value)? + "\n")?;
    Ok(())
}

fn select(data: &Dataset, split: &str) -> Result<SeriesBatch> {
    let split = match split {
        "all" => return Ok(data.batch.clone()),
        "train" => Split::Train,
        "val" => Split::Val,
        "test" => Split::Test,
        other => {
            return Err(Error::InvalidArgument(format!(
                "unknown split `{other}` (expected train, val, test or all)"
            )))
        }
    };
    Ok(data.subset(split))
}

/// The dataset re-expressed in the checkpoint's normalization.
fn rebase(data: &Dataset, ckpt: &Checkpoint) -> SeriesBatch {
    if data.stats == ckpt.stats {
        data.batch.clone()
    } else {
        ckpt.stats.apply(&data.stats.revert(&data.batch))
    }
}

fn band_to_raw(band: &UncertaintyBand, ckpt: &Checkpoint) -> UncertaintyBand {
    let s = &ckpt.stats;
    let d = s.std.len();
    let scale = Array::from_fn(band.std.shape(), |i| band.std.data()[i] * s.std[i % d]);
    UncertaintyBand {
        n_sim: band.n_sim,
        mean: s.denormalize(&band.mean),
        std: scale,
        q05: s.denormalize(&band.q05),
        q95: s.denormalize(&band.q95),
        lower: s.denormalize(&band.lower),
        upper: s.denormalize(&band.upper),
    }
}

fn execute(cmd: Command) -> Result<()> {
    match cmd {
        Command::Prepare {
            input,
            schema,
            window,
            mask_fraction,
            seed,
            val,
            test,
            out,
        } => {
            let schema = CsvSchema::by_name(&schema, window)?;
            let raw = ingest_csv(&input, &schema)?;
            let data = prepare(&raw, mask_fraction, seed, val, test)?;
            data.save(&out)?;
            println!(
                "{} windows x {} steps x {} features, {} observed, {} held out -> {}",
                data.batch.num_samples(),
                data.batch.num_steps(),
                data.batch.num_features(),
                data.batch.num_observed(),
                data.batch.num_eval(),
                out.display()
            );
        }
        Command::Train { config, data, out, cv } => {
            let cfg = load_config(config.as_deref())?;
            let data = Dataset::load(&data)?;
            fs::create_dir_all(&out)?;
            if cv {
                let report = cross_validate(&cfg, &data, cfg.folds)?;
                write_json(&out.join("metrics.json"), &report)?;
                if let Some(a) = &report.aggregate {
                    println!("{}-fold MAE {:.6} ± {:.6}, MRE {:.6}", a.folds, a.mae_mean, a.mae_std, a.mre_mean);
                }
            } else {
                let (model, report, elapsed) = run(&cfg, &data)?;
                Checkpoint::new(model, data.stats.clone(), Some(cfg)).save(&out.join("checkpoint.json"))?;
                write_json(&out.join("metrics.json"), &report)?;
                info!("trained in {elapsed:.1?}");
                let fold = &report.folds[0];
                match &fold.test {
                    Some(m) => println!("test MAE {:.6}, MRE {:.6} (best epoch {})", m.mae, m.mre, fold.training.best_epoch),
                    None => println!("trained {} epochs; no test cells", fold.training.epochs.len()),
                }
            }
        }
        Command::Impute { checkpoint, data, out } => {
            let ckpt = Checkpoint::load(&checkpoint)?;
            let data = Dataset::load(&data)?;
            let pred = ckpt.model.predict(&rebase(&data, &ckpt))?;
            Prediction::new(ckpt.stats.denormalize(&pred)).save(&out)?;
        }
        Command::Evaluate {
            pred,
            truth,
            baseline,
            split,
        } => {
            let data = Dataset::load(&truth)?;
            let metrics = match (pred, baseline) {
                (Some(p), _) => {
                    let raw = Prediction::load(&p)?.imputation;
                    if raw.shape() != data.batch.values.shape() {
                        return Err(Error::Data(format!(
                            "prediction shape {:?} does not match dataset {:?}",
                            raw.shape(),
                            data.batch.values.shape()
                        )));
                    }
                    let full = Dataset {
                        batch: SeriesBatch {
                            values: data.stats.normalize(&raw),
                            ..data.batch.clone()
                        },
                        ..data.clone()
                    };
                    let batch = select(&data, &split)?;
                    let norm = select(&full, &split)?.values;
                    evaluate(&norm, &batch, &data.stats)?
                }
                (None, Some(b)) => {
                    let batch = select(&data, &split)?;
                    evaluate(&baseline_impute(&batch, b.parse::<Baseline>()?), &batch, &data.stats)?
                }
                (None, None) => unreachable!("clap requires one of the two"),
            };
            println!("{}", serde_json::to_string_pretty(&metrics)?);
        }
        Command::Uncertainty {
            checkpoint,
            data,
            n_sim,
            seed,
            out,
        } => {
            let ckpt = Checkpoint::load(&checkpoint)?;
            if !ckpt.model.is_bayesian() {
                return Err(Error::InvalidArgument(
                    "uncertainty needs a checkpoint of a bayesian variant".into(),
                ));
            }
            let n_sim = n_sim.or(ckpt.run.as_ref().map(|r| r.n_sim)).unwrap_or(10);
            let data = Dataset::load(&data)?;
            let batch = rebase(&data, &ckpt);
            let band = band_to_raw(&ckpt.model.uncertainty(&batch, n_sim, seed)?, &ckpt);
            band.write_table(&batch.mask, &out)?;
            println!("{n_sim} simulations, max band width {:.6}", band.max_width());
        }
        Command::Params { config, features } => {
            let cfg = load_config(config.as_deref())?;
            print!("{}", parameter_count(&cfg.model_config(features).stack()).report());
        }
        Command::Sweep {
            config,
            data,
            layers,
            out,
        } => {
            let cfg = load_config(config.as_deref())?;
            let data = Dataset::load(&data)?;
            let table = sweep_table(&depth_sweep(&cfg, &data, &layers)?);
            match out {
                Some(p) => fs::write(p, table)?,
                None => print!("{table}"),
            }
        }
        Command::Synth { spec, seed, out } => {
            let spec = match spec {
                Some(p) => SynthSpec::from_toml(
                    &fs::read_to_string(&p).map_err(|e| Error::Config(format!("{}: {e}", p.display())))?,
                )?,
                None => SynthSpec::default(),
            };
            let batch = synth_generate(&spec, seed)?;
            write_wide_csv(&batch, &out)?;
            println!(
                "{} series x {} steps x {} features, {} observed -> {}",
                batch.num_samples(),
                batch.num_steps(),
                batch.num_features(),
                batch.num_observed(),
                out.display()
            );
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 1 } else { 0 });
        }
    };
    match execute(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
