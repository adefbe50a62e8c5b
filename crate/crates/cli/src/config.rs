//! Run configuration: TOML file, command-line overrides, built-in defaults.

use std::fs;
use std::path::{Path, PathBuf};

use clap::Args;
use serde::{Deserialize, Serialize};
use skelreid::relnet::{Activation, ModelConfig};
use skelreid::spc::{ClusterSpace, SpcConfig};

use crate::CliError;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    /// Output directory.
    pub out: PathBuf,
    /// Save a checkpoint every this many epochs (0: only the final one).
    pub checkpoint_every: usize,
    pub data: DataConfig,
    pub model: ModelConfig,
    pub train: SpcConfig,
    pub eval: EvalConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            out: PathBuf::from("out"),
            checkpoint_every: 0,
            data: DataConfig::default(),
            model: ModelConfig::default(),
            train: SpcConfig::default(),
            eval: EvalConfig::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DataConfig {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub train: Option<PathBuf>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub probe: Option<PathBuf>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub gallery: Option<PathBuf>,
    /// `builtin20` or the path of a partition-scheme JSON file.
    pub scheme: String,
    /// Frames per sequence window `f`.
    pub window: usize,
    /// Window step; defaults to `window` (non-overlapping windows).
    #[serde(skip_serializing_if = "Option::is_none")]
    pub stride: Option<usize>,
}

impl Default for DataConfig {
    fn default() -> Self {
        Self {
            train: None,
            probe: None,
            gallery: None,
            scheme: "builtin20".into(),
            window: 6,
            stride: None,
        }
    }
}

impl DataConfig {
    pub fn stride(&self) -> usize {
        self.stride.unwrap_or(self.window)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalConfig {
    /// Match unit-normalized embeddings instead of raw ones.
    pub normalize: bool,
    pub exclude_same_view: bool,
    /// Random probe/gallery splits averaged; 1 keeps the given split.
    pub repetitions: usize,
    pub seed: u64,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self {
            normalize: false,
            exclude_same_view: false,
            repetitions: 10,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, clap::ValueEnum)]
pub enum SpaceKind {
    Unit,
    Centered,
    Jaccard,
}

/// Flags shared by every config-driven subcommand. Each one overrides the
/// matching config-file entry.
#[derive(Debug, Clone, Default, Args)]
pub struct ConfigArgs {
    /// TOML run configuration.
    #[arg(long, short = 'c')]
    pub config: Option<PathBuf>,
    /// Output directory [default: out].
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Also save a checkpoint every N epochs.
    #[arg(long)]
    pub checkpoint_every: Option<usize>,

    /// Training recordings: a .jsonl or .csv file, or a directory of them.
    #[arg(long, help_heading = "Data")]
    pub train: Option<PathBuf>,
    /// Probe recordings.
    #[arg(long, help_heading = "Data")]
    pub probe: Option<PathBuf>,
    /// Gallery recordings.
    #[arg(long, help_heading = "Data")]
    pub gallery: Option<PathBuf>,
    /// `builtin20` or a partition-scheme JSON file.
    #[arg(long, help_heading = "Data")]
    pub scheme: Option<String>,
    /// Frames per sequence window [default: 6].
    #[arg(long, help_heading = "Data")]
    pub window: Option<usize>,
    /// Step between windows [default: the window length].
    #[arg(long, help_heading = "Data")]
    pub stride: Option<usize>,

    /// Node feature width [default: 8].
    #[arg(long, help_heading = "Model")]
    pub hidden: Option<usize>,
    /// Structural relation heads per level [default: 8].
    #[arg(long, help_heading = "Model")]
    pub heads: Option<usize>,
    /// Weight of the relation-weighted fusion term [default: 1].
    #[arg(long, help_heading = "Model")]
    pub fusion_weight: Option<f64>,
    /// tanh, leaky_relu or identity.
    #[arg(long, help_heading = "Model")]
    pub activation: Option<Activation>,
    /// Negative slope of the attention LeakyReLU [default: 0.2].
    #[arg(long, help_heading = "Model")]
    pub leaky_slope: Option<f64>,

    /// DBSCAN radius [default: 0.8].
    #[arg(long, help_heading = "Training")]
    pub eps: Option<f64>,
    /// DBSCAN minimum neighborhood size, the point itself included [default: 2].
    #[arg(long, help_heading = "Training")]
    pub min_samples: Option<usize>,
    /// Contrastive temperature [default: 0.08].
    #[arg(long, help_heading = "Training")]
    pub tau: Option<f64>,
    /// Adam learning rate [default: 3.5e-4].
    #[arg(long, help_heading = "Training")]
    pub lr: Option<f64>,
    /// [default: 128]
    #[arg(long, help_heading = "Training")]
    pub batch_size: Option<usize>,
    /// [default: 30]
    #[arg(long, help_heading = "Training")]
    pub epochs: Option<usize>,
    /// Seeds weight initialization and batch shuffling.
    #[arg(long, help_heading = "Training")]
    pub seed: Option<u64>,
    /// Distance the clustering step runs on.
    #[arg(long, value_enum, help_heading = "Training")]
    pub cluster_space: Option<SpaceKind>,
    /// Jaccard distance: reciprocal neighbors [default: 20].
    #[arg(long, help_heading = "Training")]
    pub k1: Option<usize>,
    /// Jaccard distance: query expansion neighbors [default: 6].
    #[arg(long, help_heading = "Training")]
    pub k2: Option<usize>,

    /// Rank by distance between unit-normalized embeddings.
    #[arg(long, num_args = 0..=1, default_missing_value = "true", help_heading = "Evaluation")]
    pub normalize: Option<bool>,
    /// Skip gallery entries recorded from the probe's view.
    #[arg(long, num_args = 0..=1, default_missing_value = "true", help_heading = "Evaluation")]
    pub exclude_same_view: Option<bool>,
    /// Random probe/gallery splits to average; 1 keeps the given split [default: 10].
    #[arg(long, help_heading = "Evaluation")]
    pub repetitions: Option<usize>,
    /// Seed for the probe/gallery resplits.
    #[arg(long, help_heading = "Evaluation")]
    pub eval_seed: Option<u64>,
}

fn set<T>(slot: &mut T, value: Option<T>) {
    if let Some(v) = value {
        *slot = v;
    }
}

impl RunConfig {
    pub fn from_file(path: &Path) -> Result<Self, CliError> {
        let text = fs::read_to_string(path)
            .map_err(|e| CliError::Usage(format!("cannot read config {}: {e}", path.display())))?;
        toml::from_str(&text).map_err(|e| CliError::Usage(format!("config {}: {e}", path.display())))
    }

    /// Defaults, then the config file if any, then the flags.
    pub fn resolve(args: &ConfigArgs) -> Result<Self, CliError> {
        let mut cfg = match &args.config {
            Some(path) => Self::from_file(path)?,
            None => Self::default(),
        };
        cfg.apply(args.clone());
        cfg.validate()?;
        Ok(cfg)
    }

    fn apply(&mut self, a: ConfigArgs) {
        set(&mut self.out, a.out);
        set(&mut self.checkpoint_every, a.checkpoint_every);
        let d = &mut self.data;
        d.train = a.train.or(d.train.take());
        d.probe = a.probe.or(d.probe.take());
        d.gallery = a.gallery.or(d.gallery.take());
        set(&mut d.scheme, a.scheme);
        set(&mut d.window, a.window);
        d.stride = a.stride.or(d.stride);

        let m = &mut self.model;
        set(&mut m.hidden, a.hidden);
        set(&mut m.heads, a.heads);
        set(&mut m.fusion_weight, a.fusion_weight);
        set(&mut m.activation, a.activation);
        set(&mut m.leaky_slope, a.leaky_slope);

        let t = &mut self.train;
        set(&mut t.eps, a.eps);
        set(&mut t.min_samples, a.min_samples);
        set(&mut t.tau, a.tau);
        set(&mut t.lr, a.lr);
        set(&mut t.batch_size, a.batch_size);
        set(&mut t.epochs, a.epochs);
        set(&mut t.seed, a.seed);
        let (mut k1, mut k2) = match t.space {
            ClusterSpace::Jaccard { k1, k2 } => (k1, k2),
            _ => (20, 6),
        };
        set(&mut k1, a.k1);
        set(&mut k2, a.k2);
        let kind = a.cluster_space.unwrap_or(match t.space {
            ClusterSpace::Unit => SpaceKind::Unit,
            ClusterSpace::Centered => SpaceKind::Centered,
            ClusterSpace::Jaccard { .. } => SpaceKind::Jaccard,
        });
        t.space = match kind {
            SpaceKind::Unit => ClusterSpace::Unit,
            SpaceKind::Centered => ClusterSpace::Centered,
            SpaceKind::Jaccard => ClusterSpace::Jaccard { k1, k2 },
        };

        let e = &mut self.eval;
        set(&mut e.normalize, a.normalize);
        set(&mut e.exclude_same_view, a.exclude_same_view);
        set(&mut e.repetitions, a.repetitions);
        set(&mut e.seed, a.eval_seed);
    }

    pub fn validate(&self) -> Result<(), CliError> {
        let bad = |e: skelreid::Error| CliError::Usage(format!("invalid config: {e}"));
        self.model.validate().map_err(bad)?;
        self.train.validate().map_err(bad)?;
        if let ClusterSpace::Jaccard { k1, k2 } = self.train.space {
            if k1 == 0 || k2 == 0 {
                return Err(CliError::Usage("invalid config: k1 and k2 must be positive".into()));
            }
        }
        if self.data.window == 0 || self.data.stride() == 0 {
            return Err(CliError::Usage(
                "invalid config: window and stride must be positive".into(),
            ));
        }
        if self.eval.repetitions == 0 {
            return Err(CliError::Usage("invalid config: repetitions must be at least 1".into()));
        }
        Ok(())
    }

    pub fn to_toml(&self) -> String {
        toml::to_string_pretty(self).expect("run config serializes to TOML")
    }

    /// Writes the resolved configuration as `<out>/<name>`.
    pub fn write(&self, name: &str) -> Result<PathBuf, CliError> {
        let path = self.out.join(name);
        fs::write(&path, self.to_toml()).map_err(|e| skelreid::Error::Io {
            path: path.clone(),
            source: e,
        })?;
        Ok(path)
    }
}
