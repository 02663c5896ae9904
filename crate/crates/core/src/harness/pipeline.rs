use std::collections::BTreeMap;
use std::path::Path;
use std::time::Instant;

use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{Experiment, ExperimentConfig, HarnessError};
use crate::chem::{load_dataset, Dataset, MolGraph, MAX_ATOMS};
use crate::codec::{
    encode, predict_edge_types, reconstruction_loss, AtomTypeAutoencoder, DecoderKind, EdgeTypeModel, GraphAutoencoder,
    InputSpaceAutoencoder, LatentCloud, UntypedGraph,
};
use crate::diffcore::{load_checkpoint, save_checkpoint, Adam, CheckpointEntry, ParamStore, Tape, Tensor, Var};
use crate::flows::{
    ddpm_generate, ddpm_loss, fm_generate, fm_loss, gaussian_kl, heat_generate, heat_loss, DdpmSchedule, EgnnRestorer,
    FlowField, GcnRestorer, HeatDeblurrer, HeatSchedule, Standardizer, KL_MEAN, KL_VAR, SIGMA_MIN,
};

/// RK4 steps when integrating the flow-matching field.
const ODE_STEPS: usize = 100;

#[allow(clippy::large_enum_variant)]
pub enum Codec {
    Graph {
        ae: GraphAutoencoder,
        atoms: AtomTypeAutoencoder,
    },
    InputSpace(InputSpaceAutoencoder),
}

pub enum FlowModel {
    Gaussian { schedule: DdpmSchedule, restorer: GcnRestorer },
    EquivariantGaussian { schedule: DdpmSchedule, restorer: EgnnRestorer },
    Heat { schedule: HeatSchedule, deblurrer: HeatDeblurrer },
    Matching { field: FlowField },
}

impl FlowModel {
    fn store(&self) -> &ParamStore {
        match self {
            FlowModel::Gaussian { restorer, .. } => &restorer.store,
            FlowModel::EquivariantGaussian { restorer, .. } => &restorer.store,
            FlowModel::Heat { deblurrer, .. } => &deblurrer.store,
            FlowModel::Matching { field } => &field.store,
        }
    }

    fn store_mut(&mut self) -> &mut ParamStore {
        match self {
            FlowModel::Gaussian { restorer, .. } => &mut restorer.store,
            FlowModel::EquivariantGaussian { restorer, .. } => &mut restorer.store,
            FlowModel::Heat { deblurrer, .. } => &mut deblurrer.store,
            FlowModel::Matching { field } => &mut field.store,
        }
    }

    /// Numbers that fix the process, stored beside the weights.
    fn schedule_meta(&self) -> Vec<f64> {
        match self {
            FlowModel::Gaussian { schedule, .. } | FlowModel::EquivariantGaussian { schedule, .. } => {
                vec![schedule.steps() as f64, schedule.beta(1), schedule.beta(schedule.steps())]
            }
            FlowModel::Heat { schedule, deblurrer } => {
                let (shift, scale) = deblurrer.normalization();
                let t = schedule.steps();
                vec![t as f64, schedule.sigma(1), schedule.sigma(t), schedule.noise, schedule.eta, shift, scale]
            }
            FlowModel::Matching { .. } => vec![SIGMA_MIN, ODE_STEPS as f64],
        }
    }
}

/// Everything needed to generate molecules for one experiment.
pub struct Pipeline {
    pub config: ExperimentConfig,
    pub codec: Codec,
    pub edge_types: EdgeTypeModel,
    pub flow: FlowModel,
    /// Maps embeddings to the space the flow is trained in.
    pub standardizer: Standardizer,
    /// Atom-count distribution of the training set.
    pub size_histogram: BTreeMap<usize, usize>,
}

/// Timings, parameter count and per-epoch mean losses of a training run.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainingRecord {
    pub molecules: usize,
    pub ae_seconds: f64,
    pub flow_seconds: f64,
    pub params: usize,
    pub ae_losses: Vec<f64>,
    pub flow_losses: Vec<f64>,
}

/// Loads the dataset, drops molecules the experiment cannot handle, shuffles
/// with the config seed and keeps the first `subset`.
pub fn prepare_dataset(cfg: &ExperimentConfig) -> Result<Dataset, HarnessError> {
    let full = load_dataset(&cfg.dataset_path())?;
    let mut molecules: Vec<MolGraph> = full.molecules.into_iter().filter(|m| m.n() >= cfg.experiment.min_atoms()).collect();
    molecules.shuffle(&mut ChaCha8Rng::seed_from_u64(cfg.seed ^ 0x5eed_da7a));
    if let Some(k) = cfg.subset {
        molecules.truncate(k);
    }
    if molecules.is_empty() {
        return Err(HarnessError::ConfigInvalid("no usable molecules in the dataset".into()));
    }
    let mut d = Dataset::from_molecules(molecules);
    d.skipped = full.skipped;
    Ok(d)
}

impl Pipeline {
    /// Freshly initialized models for `cfg`.
    pub fn new(cfg: &ExperimentConfig, rng: &mut impl Rng) -> Result<Self, HarnessError> {
        let cfg = cfg.clone().validated()?;
        let z = cfg.latent_z;
        let codec = match cfg.experiment {
            Experiment::InputSpaceGaussian => Codec::InputSpace(InputSpaceAutoencoder::new(z, rng)),
            e => {
                let kind = if e == Experiment::EgnnGaussian { DecoderKind::Egnn } else { DecoderKind::Gnn };
                Codec::Graph {
                    ae: GraphAutoencoder::new(z, kind, rng),
                    atoms: AtomTypeAutoencoder::new(rng),
                }
            }
        };
        let edge_types = EdgeTypeModel::new(rng);
        let width = match cfg.experiment {
            Experiment::InputSpaceGaussian => z,
            _ => z + 2,
        };
        let flow = match cfg.experiment {
            Experiment::GnnGaussian | Experiment::InputSpaceGaussian => FlowModel::Gaussian {
                schedule: DdpmSchedule::standard(),
                restorer: GcnRestorer::new(width, rng),
            },
            Experiment::EgnnGaussian => FlowModel::EquivariantGaussian {
                schedule: DdpmSchedule::standard(),
                restorer: EgnnRestorer::new(rng),
            },
            Experiment::Heat1d => FlowModel::Heat {
                schedule: HeatSchedule::standard(),
                deblurrer: HeatDeblurrer::new(width, rng),
            },
            Experiment::FlowMatching => FlowModel::Matching {
                field: FlowField::new(width, rng),
            },
        };
        Ok(Self {
            config: cfg,
            codec,
            edge_types,
            flow,
            standardizer: Standardizer::identity(width),
            size_histogram: BTreeMap::new(),
        })
    }

    fn stores(&self) -> Vec<&ParamStore> {
        let mut out = match &self.codec {
            Codec::Graph { ae, atoms } => vec![&ae.store, &atoms.store],
            Codec::InputSpace(ia) => vec![&ia.store],
        };
        out.push(&self.edge_types.store);
        out.push(self.flow.store());
        out
    }

    /// Trainable scalars across every model of the pipeline.
    pub fn param_count(&self) -> usize {
        self.stores().iter().map(|s| s.scalar_count()).sum()
    }

    /// Embedding of `m` in the flow's input space, before standardization.
    pub fn embed(&self, m: &MolGraph) -> Result<Tensor, HarnessError> {
        let x = match &self.codec {
            Codec::Graph { ae, atoms } => encode(ae, atoms, m)?.into_points(),
            Codec::InputSpace(ia) => ia.encode(m)?,
        };
        Ok(match self.flow {
            FlowModel::Heat { .. } => x.map(f64::exp),
            _ => self.standardizer.apply(&x)?,
        })
    }

    /// Autoencoder loss for one molecule: reconstruction plus the edge-type
    /// cross-entropy. For the heat experiment the positive graph embedding
    /// is also pulled toward the blurring prior's moments; the atom-type
    /// columns stay free.
    fn codec_loss(&self, tape: &mut Tape, m: &MolGraph) -> Result<Var, HarnessError> {
        let mut loss = match &self.codec {
            Codec::Graph { ae, atoms } => {
                let rec = reconstruction_loss(tape, ae, atoms, m)?;
                if self.config.experiment == Experiment::Heat1d {
                    let graph = tape.slice_cols(rec.cloud, 0, ae.z())?;
                    let u = tape.exp(graph);
                    let kl = gaussian_kl(tape, u, KL_MEAN, KL_VAR);
                    tape.add(rec.loss, kl)?
                } else {
                    rec.loss
                }
            }
            Codec::InputSpace(ia) => ia.loss(tape, &crate::codec::build_edges_as_nodes(m)?)?.0,
        };
        if let Some(l) = self.edge_types.loss(tape, m)? {
            loss = tape.add(loss, l)?;
        }
        Ok(loss)
    }

    fn flow_loss(&self, tape: &mut Tape, x: &Tensor, rng: &mut impl Rng) -> Result<Var, HarnessError> {
        let x = tape.leaf(x.clone());
        Ok(match &self.flow {
            FlowModel::Gaussian { schedule, restorer } => ddpm_loss(tape, restorer, schedule, x, rng)?,
            FlowModel::EquivariantGaussian { schedule, restorer } => ddpm_loss(tape, restorer, schedule, x, rng)?,
            FlowModel::Heat { schedule, deblurrer } => heat_loss(tape, deblurrer, schedule, x, rng)?,
            FlowModel::Matching { field } => fm_loss(tape, field, x, SIGMA_MIN, rng)?,
        })
    }

    /// Fits the scaling of the flow's input space on frozen embeddings.
    fn fit_standardizer(&mut self, raw: &[Tensor]) -> Result<(), HarnessError> {
        match &mut self.flow {
            FlowModel::Heat { deblurrer, .. } => {
                let u: Vec<Tensor> = raw.iter().map(|x| x.map(f64::exp)).collect();
                let s = Standardizer::scalar(&u)?;
                deblurrer.set_normalization(s.mean[0], s.std[0]);
                self.standardizer = Standardizer::identity(raw[0].cols());
            }
            _ => self.standardizer = Standardizer::per_column(raw)?,
        }
        Ok(())
    }

    pub fn checkpoint_entries(&self) -> Vec<CheckpointEntry> {
        let mut out: Vec<CheckpointEntry> = self.stores().iter().flat_map(|s| s.to_entries()).collect();
        let meta = |name: &str, v: Vec<f64>| CheckpointEntry::new(format!("meta:{name}"), Tensor::vector(v));
        out.push(meta("experiment", vec![self.config.experiment.code() as f64]));
        out.push(meta("latent_z", vec![self.config.latent_z as f64]));
        out.push(meta("schedule", self.flow.schedule_meta()));
        out.push(meta("standardizer.mean", self.standardizer.mean.clone()));
        out.push(meta("standardizer.std", self.standardizer.std.clone()));
        let hist = (0..=MAX_ATOMS).map(|n| *self.size_histogram.get(&n).unwrap_or(&0) as f64).collect();
        out.push(meta("histogram", hist));
        out
    }

    pub fn save(&self, path: &Path) -> Result<(), HarnessError> {
        if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
            std::fs::create_dir_all(dir).map_err(|e| super::unwritable(dir, e))?;
        }
        save_checkpoint(path, &self.checkpoint_entries()).map_err(|e| super::unwritable(path, e))
    }

    /// Rebuilds a pipeline for `cfg` from checkpoint entries.
    pub fn from_entries(cfg: &ExperimentConfig, entries: &[CheckpointEntry]) -> Result<Self, HarnessError> {
        let mismatch = |m: String| HarnessError::CheckpointMismatch(m);
        let meta = |name: &str| -> Result<&Tensor, HarnessError> {
            entries
                .iter()
                .find(|e| e.name == format!("meta:{name}"))
                .map(|e| &e.tensor)
                .ok_or_else(|| mismatch(format!("missing meta:{name}")))
        };
        let mut p = Self::new(cfg, &mut ChaCha8Rng::seed_from_u64(0))?;
        let code = meta("experiment")?.data().first().copied().unwrap_or(-1.0);
        if code != p.config.experiment.code() as f64 {
            let found = Experiment::ALL.get(code as usize).map_or("unknown".to_string(), |e| e.to_string());
            return Err(mismatch(format!("checkpoint holds {found}, config asks for {}", p.config.experiment)));
        }
        let z = meta("latent_z")?.data().first().copied().unwrap_or(-1.0);
        if z != p.config.latent_z as f64 {
            return Err(mismatch(format!("checkpoint has latent_z {z}, config asks for {}", p.config.latent_z)));
        }
        let sched = meta("schedule")?.data().to_vec();
        let expected = p.flow.schedule_meta();
        let process_len = if let FlowModel::Heat { .. } = p.flow { 5 } else { expected.len() };
        if sched.len() != expected.len() || sched[..process_len] != expected[..process_len] {
            return Err(mismatch(format!("schedule {sched:?} differs from {:?}", &expected[..process_len])));
        }
        if let FlowModel::Heat { deblurrer, .. } = &mut p.flow {
            deblurrer.set_normalization(sched[5], sched[6]);
        }
        let load = |store: &mut ParamStore| store.load_entries(entries).map_err(|e| mismatch(e.to_string()));
        match &mut p.codec {
            Codec::Graph { ae, atoms } => {
                load(&mut ae.store)?;
                load(&mut atoms.store)?;
            }
            Codec::InputSpace(ia) => load(&mut ia.store)?,
        }
        load(&mut p.edge_types.store)?;
        load(p.flow.store_mut())?;
        p.standardizer = Standardizer {
            mean: meta("standardizer.mean")?.data().to_vec(),
            std: meta("standardizer.std")?.data().to_vec(),
        };
        if p.standardizer.width() != expected_width(&p.config) || p.standardizer.std.len() != p.standardizer.width() {
            return Err(mismatch("standardizer width".into()));
        }
        p.size_histogram = meta("histogram")?
            .data()
            .iter()
            .enumerate()
            .filter(|&(_, &c)| c > 0.0)
            .map(|(n, &c)| (n, c as usize))
            .collect();
        if p.size_histogram.is_empty() {
            return Err(mismatch("empty size histogram".into()));
        }
        Ok(p)
    }

    pub fn load(cfg: &ExperimentConfig, path: &Path) -> Result<Self, HarnessError> {
        Self::from_entries(cfg, &load_checkpoint(path)?)
    }
}

fn expected_width(cfg: &ExperimentConfig) -> usize {
    match cfg.experiment {
        Experiment::InputSpaceGaussian => cfg.latent_z,
        _ => cfg.latent_z + 2,
    }
}

fn mean(xs: &[f64]) -> f64 {
    xs.iter().sum::<f64>() / xs.len().max(1) as f64
}

/// Trains the autoencoders, then the flow on frozen embeddings, one molecule
/// per Adam step. Each phase is timed separately.
pub fn train_experiment(cfg: &ExperimentConfig, data: &Dataset) -> Result<(Pipeline, TrainingRecord), HarnessError> {
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut p = Pipeline::new(cfg, &mut rng)?;
    if data.is_empty() {
        return Err(HarnessError::ConfigInvalid("empty training set".into()));
    }
    let min = p.config.experiment.min_atoms();
    if let Some(m) = data.molecules.iter().find(|m| m.n() < min) {
        return Err(HarnessError::ConfigInvalid(format!("{} needs at least {min} atoms, got {}", p.config.experiment, m.n())));
    }
    p.size_histogram = data.size_histogram.clone();
    let lr = p.config.lr;
    let epochs = p.config.epochs;
    let mut order: Vec<usize> = (0..data.len()).collect();

    let start = Instant::now();
    let mut codec_opts: Vec<Adam> = match &p.codec {
        Codec::Graph { ae, atoms } => vec![Adam::new(&ae.store, lr), Adam::new(&atoms.store, lr)],
        Codec::InputSpace(ia) => vec![Adam::new(&ia.store, lr)],
    };
    let mut etm_opt = Adam::new(&p.edge_types.store, lr);
    let mut ae_losses = Vec::with_capacity(epochs);
    for _ in 0..epochs {
        order.shuffle(&mut rng);
        let mut losses = Vec::with_capacity(order.len());
        for &k in &order {
            let mut tape = Tape::new();
            let loss = p.codec_loss(&mut tape, &data.molecules[k])?;
            losses.push(tape.value(loss).item());
            let g = tape.backward(loss)?;
            match &mut p.codec {
                Codec::Graph { ae, atoms } => {
                    codec_opts[0].apply(&mut ae.store, &g)?;
                    codec_opts[1].apply(&mut atoms.store, &g)?;
                }
                Codec::InputSpace(ia) => codec_opts[0].apply(&mut ia.store, &g)?,
            }
            etm_opt.apply(&mut p.edge_types.store, &g)?;
        }
        ae_losses.push(mean(&losses));
    }
    let ae_seconds = start.elapsed().as_secs_f64();

    let start = Instant::now();
    let raw = data
        .molecules
        .iter()
        .map(|m| {
            Ok(match &p.codec {
                Codec::Graph { ae, atoms } => encode(ae, atoms, m)?.into_points(),
                Codec::InputSpace(ia) => ia.encode(m)?,
            })
        })
        .collect::<Result<Vec<Tensor>, HarnessError>>()?;
    p.fit_standardizer(&raw)?;
    let inputs = raw
        .iter()
        .map(|x| match p.flow {
            FlowModel::Heat { .. } => Ok(x.map(f64::exp)),
            _ => Ok(p.standardizer.apply(x)?),
        })
        .collect::<Result<Vec<Tensor>, HarnessError>>()?;
    let mut flow_opt = Adam::new(p.flow.store(), lr);
    let mut flow_losses = Vec::with_capacity(epochs);
    for _ in 0..epochs {
        order.shuffle(&mut rng);
        let mut losses = Vec::with_capacity(order.len());
        for &k in &order {
            let mut tape = Tape::new();
            let loss = p.flow_loss(&mut tape, &inputs[k], &mut rng)?;
            losses.push(tape.value(loss).item());
            let g = tape.backward(loss)?;
            flow_opt.apply(p.flow.store_mut(), &g)?;
        }
        flow_losses.push(mean(&losses));
    }
    let flow_seconds = start.elapsed().as_secs_f64();

    let record = TrainingRecord {
        molecules: data.len(),
        ae_seconds,
        flow_seconds,
        params: p.param_count(),
        ae_losses,
        flow_losses,
    };
    Ok((p, record))
}

/// Replaces non-finite entries so that a diverged sample still decodes to
/// some graph.
fn finite(x: Tensor) -> Tensor {
    if x.all_finite() {
        x
    } else {
        x.map(|v| if v.is_finite() { v } else { 0.0 })
    }
}

fn sample_sizes(hist: &BTreeMap<usize, usize>) -> Result<(Vec<usize>, WeightedIndex<usize>), HarnessError> {
    let sizes: Vec<usize> = hist.keys().copied().collect();
    let dist = WeightedIndex::new(hist.values().copied()).map_err(|e| HarnessError::CheckpointMismatch(format!("size histogram: {e}")))?;
    Ok((sizes, dist))
}

/// Generates `count` candidate molecules, valid or not. Atom counts are
/// drawn from the training size histogram; the heat process starts instead
/// from a randomly chosen training molecule.
pub fn generate_molecules(p: &Pipeline, training: &Dataset, count: usize, rng: &mut impl Rng) -> Result<Vec<MolGraph>, HarnessError> {
    let (sizes, dist) = sample_sizes(&p.size_histogram)?;
    let z = p.config.latent_z;
    let mut out = Vec::with_capacity(count);
    for _ in 0..count {
        let untyped = match (&p.codec, &p.flow) {
            (Codec::Graph { ae, atoms }, FlowModel::Heat { schedule, deblurrer }) => {
                if training.is_empty() {
                    return Err(HarnessError::ConfigInvalid("heat generation needs training molecules".into()));
                }
                let seed = &training.molecules[rng.random_range(0..training.len())];
                let cloud = encode(ae, atoms, seed)?;
                let x = heat_generate(deblurrer, schedule, cloud.points(), rng)?;
                ae.decode(atoms, &LatentCloud::new(finite(x), z)?)?
            }
            (Codec::Graph { ae, atoms }, flow) => {
                let n = sizes[dist.sample(rng)];
                let x = match flow {
                    FlowModel::Gaussian { schedule, restorer } => ddpm_generate(restorer, schedule, n, z + 2, rng)?,
                    FlowModel::EquivariantGaussian { schedule, restorer } => ddpm_generate(restorer, schedule, n, z + 2, rng)?,
                    FlowModel::Matching { field } => fm_generate(field, n, z + 2, ODE_STEPS, rng)?,
                    FlowModel::Heat { .. } => unreachable!("handled above"),
                };
                let x = finite(p.standardizer.invert(&x)?);
                ae.decode(atoms, &LatentCloud::new(x, z)?)?
            }
            (Codec::InputSpace(ia), FlowModel::Gaussian { schedule, restorer }) => {
                let n = sizes[dist.sample(rng)];
                let rows = n + n * (n - 1) / 2;
                let x = ddpm_generate(restorer, schedule, rows, z, rng)?;
                ia.decode(&finite(p.standardizer.invert(&x)?), n)?
            }
            (Codec::InputSpace(_), _) => return Err(HarnessError::ConfigInvalid("input-space codec needs a Gaussian flow".into())),
        };
        out.push(type_bonds(&p.edge_types, &untyped)?);
    }
    Ok(out)
}

fn type_bonds(etm: &EdgeTypeModel, g: &UntypedGraph) -> Result<MolGraph, HarnessError> {
    Ok(predict_edge_types(etm, g)?.graph)
}
