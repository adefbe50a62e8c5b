//! The subcommands, as library functions returning their results.

use std::fs;
use std::path::{Path, PathBuf};

use log::info;
use serde::{Deserialize, Serialize};
use skelreid::evalkit::{self, EmbeddingSet, EvalOptions, MetricReport, RankOptions};
use skelreid::numkit::{grad_check, Checkpoint, GradCheckOptions, GradCheckReport, Objective, ParamId, ParamTape};
use skelreid::relnet::{Model, ModelConfig};
use skelreid::skeldata::{
    load_dataset, split_sequences, write_jsonl, DatasetLayout, PartitionScheme, SkeletonSequence,
};
use skelreid::spc::{self, make_prototypes, ClusterState, EpochLog, SpcObjective};
use skelreid::synthgait::{self, PopulationOptions, WalkerSpec};

use crate::config::RunConfig;
use crate::CliError;

pub const INIT_CHECKPOINT: &str = "checkpoint_init.json";
pub const FINAL_CHECKPOINT: &str = "checkpoint.json";
pub const TRAIN_LOG: &str = "train_log.csv";

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> skelreid::Error + '_ {
    move |source| skelreid::Error::Io {
        path: path.to_path_buf(),
        source,
    }
}

fn create_out(dir: &Path) -> Result<(), CliError> {
    fs::create_dir_all(dir).map_err(io_err(dir))?;
    Ok(())
}

/// What a checkpoint records besides the weights.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckpointMeta {
    pub model: ModelConfig,
    pub scheme: PartitionScheme,
    pub seed: u64,
    pub epochs_completed: usize,
    pub window: usize,
    pub stride: usize,
}

pub fn save_checkpoint(
    path: &Path,
    model: &Model,
    meta: &CheckpointMeta,
    optimizer: Option<skelreid::numkit::AdamState>,
) -> Result<(), CliError> {
    let meta = serde_json::to_value(meta).map_err(skelreid::Error::from)?;
    Checkpoint::new(model.params(), meta, optimizer).save(path)?;
    Ok(())
}

pub fn load_model(path: &Path) -> Result<(Model, CheckpointMeta), CliError> {
    let ck = Checkpoint::load(path)?;
    let meta: CheckpointMeta = serde_json::from_value(ck.metadata.clone())
        .map_err(|e| skelreid::Error::Checkpoint(format!("{}: metadata: {e}", path.display())))?;
    let model = Model::from_parts(meta.model.clone(), meta.scheme.clone(), ck.to_param_tape()?)?;
    Ok((model, meta))
}

pub fn resolve_scheme(cfg: &RunConfig) -> Result<PartitionScheme, CliError> {
    Ok(PartitionScheme::resolve(&cfg.data.scheme)?)
}

/// Loads a dataset and cuts it into `window`-frame sequences.
pub fn load_windows(
    path: &Path,
    scheme: &PartitionScheme,
    window: usize,
    stride: usize,
) -> Result<Vec<SkeletonSequence>, CliError> {
    let recordings = load_dataset(path, &DatasetLayout { joints: scheme.joints })?;
    let windows = split_sequences(&recordings, window, stride)?;
    if windows.is_empty() {
        return Err(skelreid::Error::InvalidArgument(format!(
            "{}: no recording has at least {window} frames",
            path.display()
        ))
        .into());
    }
    info!(
        "{}: {} recordings, {} windows of {window} frames",
        path.display(),
        recordings.len(),
        windows.len()
    );
    Ok(windows)
}

fn required<'a>(path: &'a Option<PathBuf>, what: &str) -> Result<&'a Path, CliError> {
    path.as_deref()
        .ok_or_else(|| CliError::Usage(format!("no {what} set (use --{what} or data.{what} in the config)")))
}

/// Synthetic walker dataset options.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GenerateOptions {
    pub identities: usize,
    pub per_identity: usize,
    pub frames: usize,
    pub frame_rate: f64,
    pub population: PopulationOptions,
    pub seed: u64,
    /// Recordings per identity for train, gallery and probe.
    pub split: [usize; 3],
}

impl Default for GenerateOptions {
    fn default() -> Self {
        Self {
            identities: 10,
            per_identity: 20,
            frames: 24,
            frame_rate: 6.0,
            population: PopulationOptions::default(),
            seed: 0,
            split: [10, 5, 5],
        }
    }
}

pub struct GeneratedData {
    pub walkers: Vec<WalkerSpec>,
    pub train: Vec<SkeletonSequence>,
    pub gallery: Vec<SkeletonSequence>,
    pub probe: Vec<SkeletonSequence>,
}

/// Generates walkers (unless given) and their recordings, split per identity
/// in recording order.
pub fn synthesize(opts: &GenerateOptions, walkers: Option<Vec<WalkerSpec>>) -> Result<GeneratedData, CliError> {
    if opts.split.iter().sum::<usize>() != opts.per_identity {
        return Err(CliError::Usage(format!(
            "split {:?} does not add up to {} recordings per identity",
            opts.split, opts.per_identity
        )));
    }
    let walkers = match walkers {
        Some(w) => w,
        None => {
            if opts.identities == 0 {
                return Err(CliError::Usage("need at least one identity".into()));
            }
            synthgait::population(opts.identities, opts.seed, &opts.population)
        }
    };
    let seqs = synthgait::generate(&walkers, opts.per_identity, opts.frames, opts.frame_rate, opts.seed)?;
    let (mut train, mut gallery, mut probe) = (Vec::new(), Vec::new(), Vec::new());
    for per_id in seqs.chunks(opts.per_identity) {
        let (a, rest) = per_id.split_at(opts.split[0]);
        let (b, c) = rest.split_at(opts.split[1]);
        train.extend_from_slice(a);
        gallery.extend_from_slice(b);
        probe.extend_from_slice(c);
    }
    Ok(GeneratedData {
        walkers,
        train,
        gallery,
        probe,
    })
}

/// Writes `walkers.json`, `train.jsonl`, `gallery.jsonl`, `probe.jsonl` and
/// `generate.json` into `out`.
pub fn cmd_generate(
    out: &Path,
    opts: &GenerateOptions,
    walkers: Option<Vec<WalkerSpec>>,
) -> Result<GeneratedData, CliError> {
    let data = synthesize(opts, walkers)?;
    create_out(out)?;
    write_json(&out.join("walkers.json"), &data.walkers)?;
    write_json(&out.join("generate.json"), opts)?;
    for (name, set) in [
        ("train", &data.train),
        ("gallery", &data.gallery),
        ("probe", &data.probe),
    ] {
        write_jsonl(&out.join(format!("{name}.jsonl")), set)?;
    }
    info!(
        "{} walkers: {} train, {} gallery, {} probe recordings in {}",
        data.walkers.len(),
        data.train.len(),
        data.gallery.len(),
        data.probe.len(),
        out.display()
    );
    Ok(data)
}

fn write_json<T: Serialize + ?Sized>(path: &Path, value: &T) -> Result<(), CliError> {
    let mut text = serde_json::to_string_pretty(value).map_err(skelreid::Error::from)?;
    text.push('\n');
    fs::write(path, text).map_err(io_err(path))?;
    Ok(())
}

pub struct TrainSummary {
    pub log: Vec<EpochLog>,
    pub checkpoint: PathBuf,
}

/// Trains from `cfg`, writing the resolved config, the initial, periodic and
/// final checkpoints and the per-epoch log into `cfg.out`.
pub fn cmd_train(cfg: &RunConfig) -> Result<TrainSummary, CliError> {
    let train_path = required(&cfg.data.train, "train")?;
    let scheme = resolve_scheme(cfg)?;
    let seqs = load_windows(train_path, &scheme, cfg.data.window, cfg.data.stride())?;
    create_out(&cfg.out)?;
    cfg.write("train_config.toml")?;

    let mut model = Model::new(cfg.model.clone(), scheme.clone(), cfg.train.seed)?;
    let meta = |epochs_completed| CheckpointMeta {
        model: cfg.model.clone(),
        scheme: scheme.clone(),
        seed: cfg.train.seed,
        epochs_completed,
        window: cfg.data.window,
        stride: cfg.data.stride(),
    };
    save_checkpoint(&cfg.out.join(INIT_CHECKPOINT), &model, &meta(0), None)?;

    let log_path = cfg.out.join(TRAIN_LOG);
    let mut log = csv::Writer::from_path(&log_path).map_err(skelreid::Error::from)?;
    log.write_record(["epoch", "z", "n_outliers", "mean_loss", "wall_time_ms"])
        .map_err(skelreid::Error::from)?;
    log.flush().map_err(io_err(&log_path))?;

    let outcome = spc::train(&seqs, &mut model, &cfg.train, |entry, model, adam| {
        log.write_record([
            entry.epoch.to_string(),
            entry.z.to_string(),
            entry.n_outliers.to_string(),
            entry.mean_loss.map_or(String::new(), |l| format!("{l:.17e}")),
            entry.wall_time_ms.to_string(),
        ])?;
        log.flush().map_err(|e| skelreid::Error::Io {
            path: log_path.clone(),
            source: e,
        })?;
        if cfg.checkpoint_every > 0 && entry.epoch % cfg.checkpoint_every == 0 && entry.epoch < cfg.train.epochs {
            let path = cfg.out.join(format!("checkpoint_epoch{:03}.json", entry.epoch));
            let meta = serde_json::to_value(meta(entry.epoch))?;
            Checkpoint::new(model.params(), meta, Some(adam.clone())).save(&path)?;
        }
        Ok(())
    })?;
    let checkpoint = cfg.out.join(FINAL_CHECKPOINT);
    save_checkpoint(&checkpoint, &model, &meta(cfg.train.epochs), Some(outcome.optimizer))?;
    info!("wrote {}", checkpoint.display());
    Ok(TrainSummary {
        log: outcome.log,
        checkpoint,
    })
}

/// Loads a checkpoint whose embedding width must agree with `cfg.model`.
fn checked_model(cfg: &RunConfig, checkpoint: &Path) -> Result<Model, CliError> {
    let (model, _) = load_model(checkpoint)?;
    let wanted = resolve_scheme(cfg)?.total_nodes() * cfg.model.hidden;
    if model.embedding_dim() != wanted {
        return Err(CliError::Usage(format!(
            "{} produces {}-dimensional embeddings but the config describes {wanted} \
             (hidden = {}, scheme `{}`)",
            checkpoint.display(),
            model.embedding_dim(),
            cfg.model.hidden,
            cfg.data.scheme
        )));
    }
    Ok(model)
}

fn embed(model: &Model, path: &Path, cfg: &RunConfig) -> Result<EmbeddingSet, CliError> {
    let seqs = load_windows(path, model.scheme(), cfg.data.window, cfg.data.stride())?;
    Ok(EmbeddingSet::from_embeddings(&model.encode_all(&seqs)?)?)
}

/// Evaluates `checkpoint` on the configured probe and gallery sets; writes
/// `metrics.csv`, `metrics.json` and `eval_config.toml` into `cfg.out`.
pub fn cmd_eval(cfg: &RunConfig, checkpoint: &Path) -> Result<MetricReport, CliError> {
    let probe_path = required(&cfg.data.probe, "probe")?;
    let gallery_path = required(&cfg.data.gallery, "gallery")?;
    let model = checked_model(cfg, checkpoint)?;
    let probe = embed(&model, probe_path, cfg)?;
    let gallery = embed(&model, gallery_path, cfg)?;
    let opts = EvalOptions {
        rank: RankOptions {
            normalize: cfg.eval.normalize,
            exclude_same_view: cfg.eval.exclude_same_view,
        },
        repetitions: cfg.eval.repetitions,
        seed: cfg.eval.seed,
    };
    let report = evalkit::evaluate(&probe, &gallery, &opts)?;
    create_out(&cfg.out)?;
    cfg.write("eval_config.toml")?;
    report.write_csv(&cfg.out.join("metrics.csv"))?;
    report.write_json(&cfg.out.join("metrics.json"))?;
    Ok(report)
}

/// Tiny synthetic batch for the gradient check: `3` walkers, two windows
/// each, assigned round-robin to three clusters.
pub fn gradcheck_objective(cfg: &RunConfig) -> Result<SpcObjective, CliError> {
    let scheme = resolve_scheme(cfg)?;
    if scheme.joints != 20 {
        return Err(CliError::Usage(
            "the gradient check draws synthetic 20-joint skeletons; use a 20-joint scheme".into(),
        ));
    }
    let seed = cfg.train.seed;
    let walkers = synthgait::population(3, seed, &PopulationOptions::default());
    let seqs = synthgait::generate(&walkers, 2, cfg.data.window, 6.0, seed)?;
    let model = Model::new(cfg.model.clone(), scheme, seed)?;
    let z = 3;
    let targets: Vec<usize> = (0..seqs.len()).map(|i| i % z).collect();
    let state = ClusterState {
        assignment: targets.iter().map(|&t| Some(t)).collect(),
        sizes: (0..z).map(|k| targets.iter().filter(|&&t| t == k).count()).collect(),
        prototypes: None,
    };
    let units = model
        .encode_all(&seqs)?
        .iter()
        .map(|e| skelreid::numkit::normalized(&e.values))
        .collect::<skelreid::Result<Vec<_>>>()?;
    let prototypes = make_prototypes(state, &units)?
        .prototypes
        .expect("prototypes were just built");
    Ok(SpcObjective::new(model, seqs, targets, prototypes, cfg.train.tau)?)
}

/// Wraps an objective and corrupts the analytic gradient of one parameter;
/// a negative control for the gradient check.
pub struct CorruptedGradient<'a> {
    pub inner: &'a dyn Objective,
    pub target: ParamId,
}

impl Objective for CorruptedGradient<'_> {
    fn loss(&self, params: &ParamTape) -> skelreid::Result<f64> {
        self.inner.loss(params)
    }

    fn loss_with_branches(&self, params: &ParamTape) -> skelreid::Result<(f64, Option<u64>)> {
        self.inner.loss_with_branches(params)
    }

    fn loss_and_grad(&self, params: &mut ParamTape) -> skelreid::Result<f64> {
        let loss = self.inner.loss_and_grad(params)?;
        for g in params.grad_mut(self.target).data_mut() {
            *g = 1.5 * *g + 1e-3;
        }
        Ok(loss)
    }
}

#[derive(Debug, Clone, Copy)]
pub struct GradcheckSettings {
    pub coords_per_param: usize,
    pub step: f64,
    pub tolerance: f64,
}

impl Default for GradcheckSettings {
    fn default() -> Self {
        let d = GradCheckOptions::default();
        Self {
            coords_per_param: d.coords_per_param,
            step: d.step,
            tolerance: d.tolerance,
        }
    }
}

/// Checks the full loss gradient; coordinates are sampled from `cfg.train.seed`.
/// `corrupt` names a parameter whose analytic gradient gets deliberately broken.
pub fn cmd_gradcheck(
    cfg: &RunConfig,
    settings: &GradcheckSettings,
    corrupt: Option<&str>,
) -> Result<GradCheckReport, CliError> {
    let objective = gradcheck_objective(cfg)?;
    let opts = GradCheckOptions {
        step: settings.step,
        tolerance: settings.tolerance,
        coords_per_param: settings.coords_per_param,
        seed: cfg.train.seed,
        ..GradCheckOptions::default()
    };
    let report = match corrupt {
        None => grad_check(&objective, objective.params(), &opts)?,
        Some(name) => {
            let target = objective
                .params()
                .id(name)
                .ok_or_else(|| CliError::Usage(format!("no parameter named `{name}`")))?;
            let faulty = CorruptedGradient {
                inner: &objective,
                target,
            };
            grad_check(&faulty, objective.params(), &opts)?
        }
    };
    create_out(&cfg.out)?;
    cfg.write("gradcheck_config.toml")?;
    write_json(&cfg.out.join("gradcheck.json"), &report)?;
    Ok(report)
}

/// Embeds each configured set (or just `input`) and writes
/// `embeddings_<set>.csv` into `cfg.out`; returns the written paths.
pub fn cmd_export_embeddings(
    cfg: &RunConfig,
    checkpoint: &Path,
    input: Option<&Path>,
) -> Result<Vec<PathBuf>, CliError> {
    let model = checked_model(cfg, checkpoint)?;
    let sets: Vec<(String, &Path)> = match input {
        Some(p) => vec![("input".into(), p)],
        None => [
            ("train", &cfg.data.train),
            ("gallery", &cfg.data.gallery),
            ("probe", &cfg.data.probe),
        ]
        .into_iter()
        .filter_map(|(name, p)| p.as_deref().map(|p| (name.to_owned(), p)))
        .collect(),
    };
    if sets.is_empty() {
        return Err(CliError::Usage(
            "nothing to export: pass --input or configure a dataset".into(),
        ));
    }
    create_out(&cfg.out)?;
    let mut written = Vec::new();
    for (name, path) in sets {
        let seqs = load_windows(path, model.scheme(), cfg.data.window, cfg.data.stride())?;
        let out = cfg.out.join(format!("embeddings_{name}.csv"));
        evalkit::write_embeddings_csv(&model.encode_all(&seqs)?, &out)?;
        written.push(out);
    }
    Ok(written)
}

/// Averages every collaborative relation matrix over all frames of `input`
/// (whole recordings) and writes one CSV per level pair into `cfg.out`.
pub fn cmd_export_relations(
    cfg: &RunConfig,
    checkpoint: &Path,
    input: Option<&Path>,
) -> Result<Vec<PathBuf>, CliError> {
    let model = checked_model(cfg, checkpoint)?;
    let path = match input {
        Some(p) => p,
        None => required(&cfg.data.train, "train")?,
    };
    let seqs = load_dataset(
        path,
        &DatasetLayout {
            joints: model.scheme().joints,
        },
    )?;
    Ok(evalkit::export_relations(&model, &seqs, &cfg.out)?)
}
