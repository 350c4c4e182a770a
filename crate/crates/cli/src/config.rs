//! Run configuration: built-in defaults, an optional preset, a TOML file,
//! and command-line flags, applied in that order.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use iroco_core::control::Workspace;
use iroco_core::denkf::TrainConfig;
use iroco_core::rotkit::BodyModel;
use iroco_core::synthgen::{MotionConfig, NoiseConfig};
use iroco_core::{Error, Result};
use serde::{Deserialize, Serialize};

use crate::pipeline::DataConfig;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Preset {
    Default,
    Smoke,
}

impl std::str::FromStr for Preset {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "default" => Ok(Preset::Default),
            "smoke" => Ok(Preset::Smoke),
            other => Err(format!("unknown preset '{other}' (expected default or smoke)")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunConfig {
    pub seed: u64,
    pub out: PathBuf,
    pub preset: Preset,
    pub motion: MotionConfig,
    pub noise: NoiseConfig,
    pub train: TrainConfig,
    pub workspace: Workspace,
    pub body: BodyModel,
    pub data: DataConfig,
}

impl RunConfig {
    pub fn preset(preset: Preset) -> Self {
        let (train, data) = match preset {
            Preset::Default => (TrainConfig::default(), DataConfig::default()),
            Preset::Smoke => (TrainConfig::smoke(), DataConfig::smoke()),
        };
        Self {
            seed: 0,
            out: PathBuf::from("out"),
            preset,
            motion: MotionConfig::default(),
            noise: NoiseConfig::default(),
            train,
            workspace: Workspace::default(),
            body: BodyModel::default(),
            data,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.motion.validate()?;
        self.noise.validate()?;
        self.train.validate()?;
        self.workspace.validate()?;
        self.body.validate()?;
        self.data.validate()
    }
}

/// Flag values; `None` means the flag was not given.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Overrides {
    pub config: Option<PathBuf>,
    pub preset: Option<Preset>,
    pub seed: Option<u64>,
    pub out: Option<PathBuf>,
    pub epochs: Option<usize>,
    pub batch: Option<usize>,
    pub lr: Option<f64>,
    pub ensemble: Option<usize>,
    pub window: Option<usize>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub enum Source {
    Default,
    Preset,
    File,
    Flag,
}

impl Source {
    fn label(self) -> &'static str {
        match self {
            Source::Default => "default",
            Source::Preset => "preset",
            Source::File => "file",
            Source::Flag => "flag",
        }
    }
}

/// The resolved configuration and where each headline setting came from.
#[derive(Debug, Clone)]
pub struct Resolved {
    pub config: RunConfig,
    pub sources: BTreeMap<&'static str, Source>,
}

/// Dotted keys reported in the banner, with their location in the TOML tree.
const KEYS: [(&str, &[&str]); 8] = [
    ("seed", &["seed"]),
    ("out", &["out"]),
    ("train.epochs", &["train", "epochs"]),
    ("train.batch_size", &["train", "batch_size"]),
    ("train.learning_rate", &["train", "learning_rate"]),
    ("train.ensemble_size", &["train", "ensemble_size"]),
    ("train.window", &["train", "window"]),
    ("data.sessions", &["data", "sessions"]),
];

fn lookup<'a>(v: &'a toml::Value, path: &[&str]) -> Option<&'a toml::Value> {
    path.iter().try_fold(v, |node, key| node.get(key))
}

fn merge(base: &mut toml::Value, over: toml::Value) {
    match (base, over) {
        (toml::Value::Table(b), toml::Value::Table(o)) => {
            for (k, v) in o {
                match b.get_mut(&k) {
                    Some(slot) => merge(slot, v),
                    None => {
                        b.insert(k, v);
                    }
                }
            }
        }
        (slot, v) => *slot = v,
    }
}

fn to_value(cfg: &RunConfig) -> toml::Value {
    toml::Value::try_from(cfg).expect("run config converts to TOML")
}

pub fn read_file(path: &Path) -> Result<toml::Value> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| Error::Config(format!("cannot read config {}: {e}", path.display())))?;
    let value: toml::Value = text
        .parse()
        .map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
    Ok(value)
}

pub fn resolve(flags: &Overrides) -> Result<Resolved> {
    let file = flags.config.as_deref().map(read_file).transpose()?;

    let file_preset = match file.as_ref().and_then(|f| f.get("preset")) {
        Some(v) => Some(
            v.as_str()
                .ok_or_else(|| Error::Config("preset must be a string".into()))?
                .parse::<Preset>()
                .map_err(Error::Config)?,
        ),
        None => None,
    };
    let preset = flags.preset.or(file_preset).unwrap_or(Preset::Default);

    let defaults = to_value(&RunConfig::preset(Preset::Default));
    let mut value = to_value(&RunConfig::preset(preset));
    let mut sources = BTreeMap::new();
    for (name, path) in KEYS {
        let from_preset = lookup(&value, path) != lookup(&defaults, path);
        sources.insert(name, if from_preset { Source::Preset } else { Source::Default });
    }

    if let Some(f) = file {
        for (name, path) in KEYS {
            if lookup(&f, path).is_some() {
                sources.insert(name, Source::File);
            }
        }
        merge(&mut value, f);
    }
    let mut config: RunConfig = value
        .try_into()
        .map_err(|e: toml::de::Error| Error::Config(format!("invalid config: {e}")))?;

    let mut set = |name: &'static str| {
        sources.insert(name, Source::Flag);
    };
    if let Some(s) = flags.seed {
        config.seed = s;
        set("seed");
    }
    if let Some(o) = &flags.out {
        config.out = o.clone();
        set("out");
    }
    if let Some(e) = flags.epochs {
        config.train.epochs = e;
        set("train.epochs");
    }
    if let Some(b) = flags.batch {
        config.train.batch_size = b;
        set("train.batch_size");
    }
    if let Some(lr) = flags.lr {
        config.train.learning_rate = lr;
        set("train.learning_rate");
    }
    if let Some(e) = flags.ensemble {
        config.train.ensemble_size = e;
        set("train.ensemble_size");
    }
    if let Some(w) = flags.window {
        config.train.window = w;
        set("train.window");
    }
    config.train.seed = config.seed;
    config.validate()?;
    Ok(Resolved { config, sources })
}

impl Resolved {
    pub fn source(&self, key: &str) -> Source {
        self.sources.get(key).copied().unwrap_or(Source::Default)
    }

    pub fn banner(&self, command: &str) -> String {
        let c = &self.config;
        let value = |key: &str| -> String {
            match key {
                "seed" => c.seed.to_string(),
                "out" => c.out.display().to_string(),
                "train.epochs" => c.train.epochs.to_string(),
                "train.batch_size" => c.train.batch_size.to_string(),
                "train.learning_rate" => c.train.learning_rate.to_string(),
                "train.ensemble_size" => c.train.ensemble_size.to_string(),
                "train.window" => c.train.window.to_string(),
                "data.sessions" => c.data.sessions.to_string(),
                _ => String::new(),
            }
        };
        let mut s = format!("iroco {} {command} (preset {:?})\n", env!("CARGO_PKG_VERSION"), c.preset);
        for (key, _) in KEYS {
            let _ = writeln!(s, "  {key:<22} {:<12} [{}]", value(key), self.source(key).label());
        }
        s
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn write_toml(text: &str) -> tempfile::NamedTempFile {
        let f = tempfile::NamedTempFile::new().unwrap();
        std::fs::write(f.path(), text).unwrap();
        f
    }

    #[test]
    fn defaults_without_inputs() {
        let r = resolve(&Overrides::default()).unwrap();
        assert_eq!(r.config, RunConfig::preset(Preset::Default));
        assert!(r.sources.values().all(|&s| s == Source::Default));
    }

    #[test]
    fn flag_beats_file_beats_preset() {
        let f = write_toml("preset = \"smoke\"\n[train]\nepochs = 3\nbatch_size = 4\n[noise]\nalpha = 0.5\n");
        let r = resolve(&Overrides {
            config: Some(f.path().to_path_buf()),
            batch: Some(16),
            ..Overrides::default()
        })
        .unwrap();
        let c = &r.config;
        assert_eq!(c.preset, Preset::Smoke);
        assert_eq!(c.train.epochs, 3);
        assert_eq!(c.train.batch_size, 16);
        assert_eq!(c.train.width_divisor, TrainConfig::smoke().width_divisor);
        assert_eq!(c.noise.alpha, 0.5);
        assert_eq!(c.noise.gamma, NoiseConfig::default().gamma);
        assert_eq!(r.source("train.epochs"), Source::File);
        assert_eq!(r.source("train.batch_size"), Source::Flag);
        assert_eq!(r.source("train.learning_rate"), Source::Preset);
        assert_eq!(r.source("seed"), Source::Default);
    }

    #[test]
    fn seed_flows_into_training() {
        let r = resolve(&Overrides {
            seed: Some(42),
            ..Overrides::default()
        })
        .unwrap();
        assert_eq!(r.config.train.seed, 42);
    }

    #[test]
    fn bad_inputs_are_config_errors() {
        let f = write_toml("[train]\nepochs = \"many\"\n");
        let e = resolve(&Overrides {
            config: Some(f.path().to_path_buf()),
            ..Overrides::default()
        })
        .unwrap_err();
        assert!(matches!(e, Error::Config(_)));
        let e = resolve(&Overrides {
            batch: Some(0),
            ..Overrides::default()
        })
        .unwrap_err();
        assert!(matches!(e, Error::Config(_)));
    }
}
