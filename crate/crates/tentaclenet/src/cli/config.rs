//! Flat key=value experiment configuration with command-line overrides.
//!
//! Precedence is strictly positional: defaults, then the config file where
//! `--config` appears, then every later assignment. Unknown keys fail
//! loudly; a config that parses either runs or names the key that cannot.

use std::path::PathBuf;

use crate::error::{Error, Result};
use crate::train::TrainConfig;

/// Where samples come from.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum DatasetSpec {
    /// Directory holding the five CIFAR-10 train batches plus test batch.
    Cifar10(PathBuf),
    /// Grayscale CSV table (label, pixel string, usage tag).
    Csv(PathBuf),
    /// Seeded synthetic template task.
    Synth,
}

/// Shape and noise of the synthetic task.
#[derive(Debug, Clone, PartialEq)]
pub struct SynthParams {
    pub seed: u64,
    pub classes: usize,
    pub channels: usize,
    pub height: usize,
    pub width: usize,
    pub n_train: usize,
    pub n_test: usize,
    pub sigma: f32,
    pub amplitude: f32,
}

impl Default for SynthParams {
    fn default() -> Self {
        Self {
            seed: 0,
            classes: 3,
            channels: 1,
            height: 16,
            width: 16,
            n_train: 3000,
            n_test: 600,
            sigma: 0.5,
            amplitude: 0.1,
        }
    }
}

/// Everything a command needs, resolved from defaults, file, and flags.
#[derive(Debug, Clone)]
pub struct ExperimentConfig {
    pub spec_path: Option<PathBuf>,
    pub dataset: Option<DatasetSpec>,
    pub out: PathBuf,
    pub seed: u64,
    /// Seeds for multi-seed sweeps; empty means "just `seed`".
    pub seeds: Vec<u64>,
    /// Tentacle counts for cmd_curve and cmd_footprint sweeps.
    pub tentacles: Vec<usize>,
    /// Tentacle count for cmd_train.
    pub n: usize,
    /// Member count for cmd_compare ensembles.
    pub members: usize,
    pub model_path: Option<PathBuf>,
    pub fp32_acc: Option<f64>,
    pub train_fp32: bool,
    pub train: TrainConfig,
    pub csv_height: usize,
    pub csv_width: usize,
    pub synth: SynthParams,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            spec_path: None,
            dataset: None,
            out: PathBuf::from("out"),
            seed: 0,
            seeds: Vec::new(),
            tentacles: vec![1, 2, 4],
            n: 1,
            members: 4,
            model_path: None,
            fp32_acc: None,
            train_fp32: false,
            train: TrainConfig::default(),
            csv_height: 48,
            csv_width: 48,
            synth: SynthParams::default(),
        }
    }
}

fn parse_num<T: std::str::FromStr>(key: &str, value: &str) -> Result<T> {
    value
        .parse()
        .map_err(|_| Error::Config(format!("key '{key}': cannot parse '{value}'")))
}

fn parse_bool(key: &str, value: &str) -> Result<bool> {
    match value {
        "true" | "1" | "yes" => Ok(true),
        "false" | "0" | "no" => Ok(false),
        _ => Err(Error::Config(format!(
            "key '{key}': expected true/false, got '{value}'"
        ))),
    }
}

fn parse_list<T: std::str::FromStr>(key: &str, value: &str) -> Result<Vec<T>> {
    value
        .split(',')
        .filter(|s| !s.trim().is_empty())
        .map(|s| parse_num(key, s.trim()))
        .collect()
}

impl ExperimentConfig {
    /// Apply one assignment. Unknown keys are an error, never ignored.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        match key {
            "spec" => self.spec_path = Some(PathBuf::from(value)),
            "dataset" => self.dataset = Some(parse_dataset(value)?),
            "out" => self.out = PathBuf::from(value),
            "seed" => self.seed = parse_num(key, value)?,
            "seeds" => self.seeds = parse_list(key, value)?,
            "tentacles" => {
                let list: Vec<usize> = parse_list(key, value)?;
                if list.is_empty() {
                    return Err(Error::Config("tentacles list is empty".into()));
                }
                if list.windows(2).any(|w| w[1] <= w[0]) {
                    return Err(Error::Config(format!(
                        "tentacles must be strictly increasing, got {value}"
                    )));
                }
                self.tentacles = list;
            }
            "n" => self.n = parse_num(key, value)?,
            "members" => self.members = parse_num(key, value)?,
            "model" => self.model_path = Some(PathBuf::from(value)),
            "fp32_acc" => self.fp32_acc = Some(parse_num(key, value)?),
            "train_fp32" => self.train_fp32 = parse_bool(key, value)?,
            "epochs" => self.train.epochs = parse_num(key, value)?,
            "lr" => self.train.lr = parse_num(key, value)?,
            "lr_factor" => self.train.lr_factor = parse_num(key, value)?,
            "patience" => self.train.patience = parse_num(key, value)?,
            "plateau_tol" => self.train.plateau_tol = parse_num(key, value)?,
            "batch" => self.train.batch = parse_num(key, value)?,
            "val_split" => self.train.val_split = parse_num(key, value)?,
            "momentum" => self.train.momentum = parse_num(key, value)?,
            "gamma_clamp" => self.train.gamma_clamp = parse_num(key, value)?,
            "csv_height" => self.csv_height = parse_num(key, value)?,
            "csv_width" => self.csv_width = parse_num(key, value)?,
            "synth_seed" => self.synth.seed = parse_num(key, value)?,
            "synth_classes" => self.synth.classes = parse_num(key, value)?,
            "synth_channels" => self.synth.channels = parse_num(key, value)?,
            "synth_height" => self.synth.height = parse_num(key, value)?,
            "synth_width" => self.synth.width = parse_num(key, value)?,
            "synth_train" => self.synth.n_train = parse_num(key, value)?,
            "synth_test" => self.synth.n_test = parse_num(key, value)?,
            "synth_sigma" => self.synth.sigma = parse_num(key, value)?,
            "synth_amplitude" => self.synth.amplitude = parse_num(key, value)?,
            _ => return Err(Error::Config(format!("unknown config key '{key}'"))),
        }
        Ok(())
    }

    /// Apply a config file's assignments in order.
    pub fn apply_file(&mut self, text: &str) -> Result<()> {
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (key, value) = line.split_once('=').ok_or_else(|| {
                Error::Config(format!("line {}: expected key=value, got '{line}'", lineno + 1))
            })?;
            self.set(key.trim(), value.trim())
                .map_err(|e| match e {
                    Error::Config(msg) => Error::Config(format!("line {}: {msg}", lineno + 1)),
                    other => other,
                })?;
        }
        Ok(())
    }

    /// Training config for one run at a given seed.
    pub fn train_cfg(&self, seed: u64) -> TrainConfig {
        TrainConfig {
            seed,
            ..self.train.clone()
        }
    }

    /// The seed sweep: explicit `seeds` list, or the single `seed`.
    pub fn seed_list(&self) -> Vec<u64> {
        if self.seeds.is_empty() {
            vec![self.seed]
        } else {
            self.seeds.clone()
        }
    }
}

fn parse_dataset(value: &str) -> Result<DatasetSpec> {
    if value == "synth" {
        return Ok(DatasetSpec::Synth);
    }
    if let Some(dir) = value.strip_prefix("cifar10:") {
        return Ok(DatasetSpec::Cifar10(PathBuf::from(dir)));
    }
    if let Some(path) = value.strip_prefix("csv:") {
        return Ok(DatasetSpec::Csv(PathBuf::from(path)));
    }
    Err(Error::Config(format!(
        "dataset must be cifar10:DIR, csv:PATH, or synth; got '{value}'"
    )))
}

/// Parse `verb` plus flags/assignments into a resolved config. Later
/// assignments override earlier ones, including the config file's.
pub fn parse_args(args: &[String]) -> Result<(String, ExperimentConfig)> {
    let verb = args
        .first()
        .ok_or_else(|| Error::Config("missing command".into()))?
        .clone();
    let mut cfg = ExperimentConfig::default();
    let mut i = 1;
    let take_value = |args: &[String], i: usize, flag: &str| -> Result<String> {
        args.get(i + 1)
            .cloned()
            .ok_or_else(|| Error::Config(format!("{flag} needs a value")))
    };
    while i < args.len() {
        let arg = &args[i];
        match arg.as_str() {
            "--config" => {
                let path = take_value(args, i, "--config")?;
                let text = std::fs::read_to_string(&path).map_err(|e| {
                    Error::Config(format!("cannot read config '{path}': {e}"))
                })?;
                cfg.apply_file(&text)?;
                i += 2;
            }
            "--out" => {
                cfg.set("out", &take_value(args, i, "--out")?)?;
                i += 2;
            }
            "--seed" => {
                cfg.set("seed", &take_value(args, i, "--seed")?)?;
                i += 2;
            }
            "--tentacles" => {
                cfg.set("tentacles", &take_value(args, i, "--tentacles")?)?;
                i += 2;
            }
            "--dataset" => {
                cfg.set("dataset", &take_value(args, i, "--dataset")?)?;
                i += 2;
            }
            "--model" => {
                cfg.set("model", &take_value(args, i, "--model")?)?;
                i += 2;
            }
            "--spec" => {
                cfg.set("spec", &take_value(args, i, "--spec")?)?;
                i += 2;
            }
            "--train-fp32" => {
                cfg.train_fp32 = true;
                i += 1;
            }
            other => {
                if let Some((key, value)) = other.split_once('=') {
                    cfg.set(key, value)?;
                    i += 1;
                } else {
                    return Err(Error::Config(format!("unrecognized argument '{other}'")));
                }
            }
        }
    }
    Ok((verb, cfg))
}
