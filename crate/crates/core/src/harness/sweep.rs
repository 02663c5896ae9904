use std::path::PathBuf;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{evaluate, generate_molecules, prepare_dataset, train_experiment, unwritable, write_report};
use super::{Experiment, ExperimentConfig, HarnessError, MetricsReport, TrainingRecord};

/// Settings shared by every experiment of a sweep.
#[derive(Clone, Debug)]
pub struct SweepOptions {
    pub seed: u64,
    pub dataset: Option<PathBuf>,
    pub subset: Option<usize>,
    pub epochs: Option<usize>,
    pub sample_count: Option<usize>,
    pub repetitions: Option<usize>,
    pub output: PathBuf,
}

impl SweepOptions {
    pub fn new(seed: u64, output: PathBuf) -> Self {
        Self {
            seed,
            dataset: None,
            subset: None,
            epochs: None,
            sample_count: None,
            repetitions: None,
            output,
        }
    }
}

/// Every (experiment, latent width) pair of the results table.
pub fn sweep_configs(opts: &SweepOptions) -> Vec<ExperimentConfig> {
    let runs = [
        (Experiment::GnnGaussian, 2),
        (Experiment::GnnGaussian, 6),
        (Experiment::EgnnGaussian, 2),
        (Experiment::EgnnGaussian, 6),
        (Experiment::InputSpaceGaussian, 2),
        (Experiment::InputSpaceGaussian, 6),
        (Experiment::Heat1d, 1),
        (Experiment::FlowMatching, 2),
        (Experiment::FlowMatching, 6),
    ];
    runs.iter()
        .map(|&(e, z)| {
            let mut cfg = ExperimentConfig::new(e, z, opts.seed);
            if let Some(d) = &opts.dataset {
                cfg.dataset = d.clone();
            }
            cfg.subset = opts.subset;
            cfg.epochs = opts.epochs.unwrap_or(cfg.epochs);
            cfg.sample_count = opts.sample_count;
            cfg.repetitions = opts.repetitions.unwrap_or(cfg.repetitions);
            cfg.output = opts.output.join(cfg.label());
            cfg
        })
        .collect()
}

/// Trains one experiment, saves its checkpoint and training record under
/// `cfg.output`, then averages metrics over `cfg.repetitions` generation
/// rounds.
pub fn run_experiment(cfg: &ExperimentConfig) -> Result<(MetricsReport, TrainingRecord), HarnessError> {
    let cfg = cfg.clone().validated()?;
    let data = prepare_dataset(&cfg)?;
    let (pipeline, record) = train_experiment(&cfg, &data)?;
    std::fs::create_dir_all(&cfg.output).map_err(|e| unwritable(&cfg.output, e))?;
    pipeline.save(&cfg.output.join("model.mdl"))?;
    let rec_path = cfg.output.join("training.json");
    std::fs::write(&rec_path, serde_json::to_string_pretty(&record).expect("plain data")).map_err(|e| unwritable(&rec_path, e))?;
    let cfg_path = cfg.output.join("config.json");
    std::fs::write(&cfg_path, cfg.to_json()).map_err(|e| unwritable(&cfg_path, e))?;

    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed.wrapping_add(1));
    let [low, high] = cfg.sample_range;
    let mut rounds = Vec::with_capacity(cfg.repetitions);
    for _ in 0..cfg.repetitions {
        let count = cfg.sample_count.unwrap_or_else(|| rng.random_range(low..=high));
        let candidates = generate_molecules(&pipeline, &data, count, &mut rng)?;
        rounds.push(evaluate(&candidates, &data)?);
    }
    let report = MetricsReport::from_rounds(
        cfg.experiment.name(),
        cfg.latent_z,
        record.ae_seconds,
        record.flow_seconds,
        record.params,
        &rounds,
    );
    Ok((report, record))
}

/// Runs every configuration and writes `results.csv` plus the figures into
/// `opts.output`.
pub fn run_sweep(opts: &SweepOptions, mut progress: impl FnMut(&MetricsReport)) -> Result<Vec<MetricsReport>, HarnessError> {
    let mut reports = Vec::new();
    for cfg in sweep_configs(opts) {
        let (report, _) = run_experiment(&cfg)?;
        progress(&report);
        reports.push(report);
    }
    write_report(&opts.output, &reports)?;
    Ok(reports)
}
