use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use moldiff::chem::write_smiles;
use moldiff::harness::{
    evaluate_smiles, generate_molecules, prepare_dataset, read_csv, run_sweep, train_experiment, write_report, Experiment,
    ExperimentConfig, HarnessError, MetricsReport, Pipeline, SweepOptions, TrainingRecord,
};

#[derive(Parser)]
#[command(name = "moldiff", version, about = "Latent-space molecular graph generation")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train the autoencoders and the flow; writes model.mdl, training.json
    /// and config.json into the output directory.
    Train(ConfigArgs),
    /// Sample molecules from a trained model as SMILES, one per line.
    Generate {
        #[command(flatten)]
        config: ConfigArgs,
        /// Defaults to <output>/model.mdl.
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        /// Defaults to sample_count, or a draw from sample_range.
        #[arg(long)]
        count: Option<usize>,
        /// Defaults to <output>/generated.smi.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Score a SMILES file against the training set; writes metrics.json.
    Evaluate {
        #[command(flatten)]
        config: ConfigArgs,
        #[arg(long)]
        candidates: PathBuf,
        /// Timings and parameter count; defaults to <output>/training.json.
        #[arg(long)]
        record: Option<PathBuf>,
    },
    /// Collect metrics.json files or a results.csv into results.csv and the
    /// three figures.
    Report {
        #[arg(required = true)]
        inputs: Vec<PathBuf>,
        #[arg(long, default_value = "report")]
        output: PathBuf,
    },
    /// Train and evaluate every experiment of the results table.
    RunAll {
        #[arg(long)]
        seed: u64,
        #[arg(long)]
        dataset: Option<PathBuf>,
        #[arg(long)]
        subset: Option<usize>,
        #[arg(long)]
        epochs: Option<usize>,
        #[arg(long)]
        sample_count: Option<usize>,
        #[arg(long)]
        repetitions: Option<usize>,
        #[arg(long, default_value = "results")]
        output: PathBuf,
    },
}

/// Either a JSON config file, or flags; flags override file values.
#[derive(Args)]
struct ConfigArgs {
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    experiment: Option<Experiment>,
    #[arg(long)]
    latent_z: Option<usize>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    lr: Option<f64>,
    #[arg(long)]
    dataset: Option<PathBuf>,
    #[arg(long)]
    subset: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    sample_count: Option<usize>,
    #[arg(long, num_args = 2, value_names = ["LOW", "HIGH"])]
    sample_range: Option<Vec<usize>>,
    #[arg(long)]
    repetitions: Option<usize>,
    #[arg(long)]
    output: Option<PathBuf>,
}

impl ConfigArgs {
    fn resolve(&self) -> Result<ExperimentConfig, HarnessError> {
        let mut cfg = match (&self.config, self.experiment) {
            (Some(path), _) => ExperimentConfig::load(path)?,
            (None, Some(e)) => ExperimentConfig::new(e, 2, 0),
            (None, None) => return Err(HarnessError::ConfigInvalid("pass --config or --experiment".into())),
        };
        if let Some(e) = self.experiment {
            cfg.experiment = e;
        }
        macro_rules! set {
            ($($f:ident),*) => {$(
                if let Some(v) = &self.$f {
                    cfg.$f = v.clone();
                }
            )*};
        }
        set!(latent_z, epochs, lr, dataset, seed, repetitions, output);
        if self.subset.is_some() {
            cfg.subset = self.subset;
        }
        if self.sample_count.is_some() {
            cfg.sample_count = self.sample_count;
        }
        if let Some(r) = &self.sample_range {
            cfg.sample_range = [r[0], r[1]];
        }
        cfg.validated()
    }
}

fn write(path: &Path, text: &str) -> Result<(), HarnessError> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(|e| unwritable(dir, e))?;
    }
    std::fs::write(path, text).map_err(|e| unwritable(path, e))
}

fn unwritable(path: &Path, e: impl std::fmt::Display) -> HarnessError {
    HarnessError::OutputUnwritable {
        path: path.display().to_string(),
        reason: e.to_string(),
    }
}

fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T, HarnessError> {
    let text = std::fs::read_to_string(path).map_err(|e| HarnessError::ConfigInvalid(format!("{}: {e}", path.display())))?;
    serde_json::from_str(&text).map_err(|e| HarnessError::ConfigInvalid(format!("{}: {e}", path.display())))
}

fn run(cli: Cli) -> Result<(), HarnessError> {
    match cli.command {
        Command::Train(args) => {
            let cfg = args.resolve()?;
            let data = prepare_dataset(&cfg)?;
            eprintln!("training {} on {} molecules", cfg.label(), data.len());
            let (pipeline, record) = train_experiment(&cfg, &data)?;
            pipeline.save(&cfg.output.join("model.mdl"))?;
            write(&cfg.output.join("training.json"), &serde_json::to_string_pretty(&record).expect("plain data"))?;
            write(&cfg.output.join("config.json"), &cfg.to_json())?;
            println!(
                "autoencoder {:.1}s, flow {:.1}s, {} parameters, final losses {:.5} / {:.5}",
                record.ae_seconds,
                record.flow_seconds,
                record.params,
                record.ae_losses.last().copied().unwrap_or(f64::NAN),
                record.flow_losses.last().copied().unwrap_or(f64::NAN)
            );
        }
        Command::Generate {
            config,
            checkpoint,
            count,
            out,
        } => {
            let cfg = config.resolve()?;
            let data = prepare_dataset(&cfg)?;
            let pipeline = Pipeline::load(&cfg, &checkpoint.unwrap_or_else(|| cfg.output.join("model.mdl")))?;
            let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed.wrapping_add(1));
            let count = count.or(cfg.sample_count).unwrap_or_else(|| {
                use rand::Rng;
                rng.random_range(cfg.sample_range[0]..=cfg.sample_range[1])
            });
            let mols = generate_molecules(&pipeline, &data, count, &mut rng)?;
            let text: String = mols.iter().map(|m| write_smiles(m) + "\n").collect();
            let path = out.unwrap_or_else(|| cfg.output.join("generated.smi"));
            write(&path, &text)?;
            println!("{} molecules written to {}", mols.len(), path.display());
        }
        Command::Evaluate { config, candidates, record } => {
            let cfg = config.resolve()?;
            let data = prepare_dataset(&cfg)?;
            let text = std::fs::read_to_string(&candidates).map_err(|e| HarnessError::ConfigInvalid(format!("{}: {e}", candidates.display())))?;
            let lines: Vec<&str> = text.lines().map(str::trim).filter(|l| !l.is_empty()).collect();
            let scores = evaluate_smiles(&lines, &data)?;
            let record_path = record.unwrap_or_else(|| cfg.output.join("training.json"));
            let (ae, flow, params) = match read_json::<TrainingRecord>(&record_path) {
                Ok(r) => (r.ae_seconds, r.flow_seconds, r.params),
                Err(_) => (0.0, 0.0, 0),
            };
            let report = MetricsReport::from_rounds(cfg.experiment.name(), cfg.latent_z, ae, flow, params, std::slice::from_ref(&scores));
            write(&cfg.output.join("metrics.json"), &serde_json::to_string_pretty(&report).expect("plain data"))?;
            println!(
                "validity {:.1}%, uniqueness {:.1}%, novelty {:.1}% over {} candidates{}",
                scores.validity,
                scores.uniqueness,
                scores.novelty,
                scores.count,
                if scores.nothing_valid { " (no valid molecule)" } else { "" }
            );
        }
        Command::Report { inputs, output } => {
            let mut reports = Vec::new();
            for p in &inputs {
                if p.extension().is_some_and(|e| e == "csv") {
                    reports.extend(read_csv(p)?);
                } else {
                    reports.push(read_json::<MetricsReport>(p)?);
                }
            }
            for p in write_report(&output, &reports)? {
                println!("{}", p.display());
            }
        }
        Command::RunAll {
            seed,
            dataset,
            subset,
            epochs,
            sample_count,
            repetitions,
            output,
        } => {
            let opts = SweepOptions {
                seed,
                dataset,
                subset,
                epochs,
                sample_count,
                repetitions,
                output,
            };
            run_sweep(&opts, |r| {
                eprintln!(
                    "{} z={}: validity {:.1}%, uniqueness {:.1}%, novelty {:.1}% ({:.0}s + {:.0}s)",
                    r.experiment, r.latent_z, r.validity, r.uniqueness, r.novelty, r.ae_seconds, r.flow_seconds
                )
            })?;
            println!("{}", opts.output.join(moldiff::harness::CSV_FILE).display());
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
