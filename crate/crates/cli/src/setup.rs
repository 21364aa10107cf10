//! Flag resolution into core configs, and the exit-code contract.

use std::path::{Path, PathBuf};

use curvewalk::autodiff::Norm;
use curvewalk::dataio::{load_dataset, synth_shapes, Dataset, ShapeKind, Split};
use curvewalk::model::{curve_spec, CurveNet, CurveNetConfig, HeadSpec, TrainConfig};
use serde::{Deserialize, Serialize};

use crate::args::{parse_curves, DataArgs, ModelArgs, NormArg, Preset, Task};

pub const EXIT_OK: i32 = 0;
pub const EXIT_VERIFY: i32 = 1;
pub const EXIT_USAGE: i32 = 2;
pub const EXIT_DIVERGED: i32 = 3;

#[derive(Debug)]
pub enum Failure {
    /// Bad flags, missing inputs.
    Usage(String),
    /// A check ran and did not pass.
    Verify(String),
    Diverged(String),
    Runtime(anyhow::Error),
}

impl Failure {
    pub fn code(&self) -> i32 {
        match self {
            Failure::Usage(_) => EXIT_USAGE,
            Failure::Verify(_) | Failure::Runtime(_) => EXIT_VERIFY,
            Failure::Diverged(_) => EXIT_DIVERGED,
        }
    }
}

impl std::fmt::Display for Failure {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Failure::Usage(m) => write!(f, "usage: {m}"),
            Failure::Verify(m) => write!(f, "verification failed: {m}"),
            Failure::Diverged(m) => write!(f, "{m}"),
            Failure::Runtime(e) => write!(f, "{e:#}"),
        }
    }
}

impl From<anyhow::Error> for Failure {
    fn from(e: anyhow::Error) -> Self {
        Failure::Runtime(e)
    }
}

impl From<curvewalk::Error> for Failure {
    fn from(e: curvewalk::Error) -> Self {
        match e {
            curvewalk::Error::Divergence { .. } => Failure::Diverged(e.to_string()),
            e => Failure::Runtime(e.into()),
        }
    }
}

impl From<std::io::Error> for Failure {
    fn from(e: std::io::Error) -> Self {
        Failure::Runtime(e.into())
    }
}

pub type CmdResult<T = ()> = Result<T, Failure>;

pub fn usage<T>(msg: impl Into<String>) -> CmdResult<T> {
    Err(Failure::Usage(msg.into()))
}

/// Where the clouds come from, with every default materialised.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DataSpec {
    /// `synth` or a dataset root.
    pub source: String,
    pub classes: Vec<String>,
    pub points: usize,
    pub train_per_class: usize,
    pub test_per_class: usize,
    pub data_seed: u64,
}

impl DataSpec {
    pub fn resolve(args: &DataArgs) -> CmdResult<Self> {
        if args.points < 2 {
            return usage("--points must be at least 2");
        }
        let classes = if args.data == "synth" {
            let names = args.classes.clone().unwrap_or_else(|| ShapeKind::ALL.iter().map(|k| k.name().to_string()).collect());
            for n in &names {
                n.parse::<ShapeKind>().map_err(|e| Failure::Usage(e.to_string()))?;
            }
            if args.train_per_class == 0 || args.test_per_class == 0 {
                return usage("--train-per-class and --test-per-class must be positive");
            }
            names
        } else {
            let root = Path::new(&args.data);
            if !root.is_dir() {
                return usage(format!("dataset root {} is not a directory", root.display()));
            }
            match &args.classes {
                Some(c) => c.clone(),
                None => class_dirs(root)?,
            }
        };
        if classes.is_empty() {
            return usage("no classes selected");
        }
        Ok(Self {
            source: args.data.clone(),
            classes,
            points: args.points,
            train_per_class: args.train_per_class,
            test_per_class: args.test_per_class,
            data_seed: args.data_seed,
        })
    }

    pub fn load(&self, split: Split) -> CmdResult<Dataset> {
        if self.source == "synth" {
            let kinds = self.classes.iter().map(|c| c.parse::<ShapeKind>()).collect::<curvewalk::Result<Vec<_>>>()?;
            let per_class = match split {
                Split::Train => self.train_per_class,
                Split::Test => self.test_per_class,
            };
            Ok(synth_shapes(&kinds, per_class, self.points, self.data_seed, split)?)
        } else {
            Ok(load_dataset(&PathBuf::from(&self.source), self.points, split, Some(&self.classes))?)
        }
    }
}

fn class_dirs(root: &Path) -> CmdResult<Vec<String>> {
    let mut out = Vec::new();
    for e in std::fs::read_dir(root)? {
        let e = e?;
        if e.file_type()?.is_dir() {
            out.push(e.file_name().to_string_lossy().into_owned());
        }
    }
    out.sort();
    Ok(out)
}

/// Network config from the model flags.
pub fn model_config(args: &ModelArgs, classes: usize, points: usize) -> CmdResult<CurveNetConfig> {
    let head = match args.task {
        Task::Classify => HeadSpec::Classify { classes, hidden: args.hidden },
        Task::Normals => HeadSpec::Pointwise { out_dims: 3 },
    };
    let mut cfg = match args.config {
        Preset::Desk => CurveNetConfig::desk(head, points),
        Preset::Toy => CurveNetConfig::toy(head, points),
        Preset::Full => CurveNetConfig::full(head, points),
    };
    if let Some(flag) = &args.curves {
        match parse_curves(flag).map_err(Failure::Usage)? {
            None => cfg.place_curves(None, &[]),
            Some(c) => {
                let groups = cfg.num_groups();
                if let Some(g) = c.groups.iter().find(|&&g| g > groups) {
                    return usage(format!("--curves names group {g}, the network has {groups}"));
                }
                if c.n > points {
                    return usage(format!("--curves asks for {} curves on {points} points", c.n));
                }
                cfg.place_curves(Some(curve_spec(c.n, c.l)), &c.groups);
            }
        }
    }
    if !(0.0..=180.0).contains(&args.theta_bar) {
        return usage("--theta-bar must be within [0, 180] degrees");
    }
    let policy = args.policy.unwrap_or(curvewalk::walk::PolicyKind::MomentumSuppression);
    cfg.set_policy(policy, args.theta_bar);
    if let Some(p) = args.dropout {
        cfg.dropout = p;
    }
    if args.norm == NormArg::Batch {
        cfg = cfg.with_norm(Norm::Batch);
    }
    cfg.validate().map_err(|e| Failure::Usage(e.to_string()))?;
    Ok(cfg)
}

/// Resolved configuration of a training run, as stored in its manifest.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct TrainSetup {
    pub data: DataSpec,
    pub model: CurveNetConfig,
    pub train: TrainConfig,
}

impl TrainSetup {
    /// The model of the run with the parameters of `checkpoint`.
    pub fn load_model(&self, checkpoint: &Path) -> CmdResult<CurveNet> {
        let mut model = CurveNet::new(self.model.clone(), self.train.seed)?;
        curvewalk::autodiff::checkpoint::load_store(checkpoint, &mut model.store)?;
        Ok(model)
    }

    /// Reads the setup from the manifest next to `checkpoint`.
    pub fn for_checkpoint(checkpoint: &Path) -> CmdResult<Self> {
        if !checkpoint.is_file() {
            return usage(format!("checkpoint {} does not exist", checkpoint.display()));
        }
        let dir = checkpoint.parent().filter(|d| !d.as_os_str().is_empty()).unwrap_or(Path::new("."));
        let manifest = crate::manifest::RunManifest::read(dir)?;
        if manifest.command != "train" {
            return usage(format!("{} was not written by train", dir.join(crate::manifest::MANIFEST_FILE).display()));
        }
        serde_json::from_value(manifest.config).map_err(|e| Failure::Runtime(e.into()))
    }
}
