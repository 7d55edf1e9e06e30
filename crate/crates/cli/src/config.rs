//! Run configuration: task defaults layered under a flat key=value config
//! file, layered under command-line flags.

use anyhow::{anyhow, bail, Context, Result};
use opto_dfa::linalg::Precision;
use opto_dfa::train::{cora_defaults, mnist_defaults, Mode, TaskDefaults, TrainConfig};
use std::collections::BTreeMap;
use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Task {
    Mnist,
    Cora,
}

impl Task {
    pub fn as_str(self) -> &'static str {
        match self {
            Task::Mnist => "mnist",
            Task::Cora => "cora",
        }
    }

    pub fn defaults(self, mode: Mode) -> TaskDefaults {
        match self {
            Task::Mnist => mnist_defaults(mode),
            Task::Cora => cora_defaults(mode),
        }
    }
}

impl fmt::Display for Task {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Task {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "mnist" => Ok(Task::Mnist),
            "cora" => Ok(Task::Cora),
            other => Err(format!("unknown task {other:?}; valid tasks: mnist, cora")),
        }
    }
}

/// A fully resolved run: everything `cmd_train` needs, and everything the
/// manifest records.
#[derive(Debug, Clone, PartialEq)]
pub struct RunSpec {
    pub task: Task,
    pub precision: Precision,
    /// Hidden layer widths (input/output widths come from the task).
    pub hidden: Vec<usize>,
    pub config: TrainConfig,
}

impl RunSpec {
    /// Full layer dims for this task and hidden stack.
    pub fn dims(&self) -> Vec<usize> {
        let (input, classes) = match self.task {
            Task::Mnist => (784, 10),
            Task::Cora => (1433, 7),
        };
        let mut dims = Vec::with_capacity(self.hidden.len() + 2);
        dims.push(input);
        dims.extend_from_slice(&self.hidden);
        dims.push(classes);
        dims
    }

    /// Flat key=value rendering, sorted by key; the config-file syntax and
    /// the head of the manifest.
    pub fn to_key_values(&self) -> BTreeMap<String, String> {
        let c = &self.config;
        let mut kv = BTreeMap::new();
        let mut put = |k: &str, v: String| {
            kv.insert(k.to_string(), v);
        };
        put("task", self.task.to_string());
        put("mode", c.mode.to_string());
        put("precision", self.precision.name().to_string());
        put(
            "hidden",
            self.hidden
                .iter()
                .map(|w| w.to_string())
                .collect::<Vec<_>>()
                .join(","),
        );
        put("lr", c.lr.to_string());
        put("momentum", c.momentum.to_string());
        put("epochs", c.epochs.to_string());
        put("batch_size", c.batch_size.to_string());
        put("threshold", c.ternary_threshold.to_string());
        put("noise_std", c.noise_std.to_string());
        put("dropout", c.dropout.to_string());
        put("weight_decay", c.weight_decay.to_string());
        put("weight_seed", c.weight_seed.to_string());
        put("feedback_seed", c.feedback_seed.to_string());
        put("noise_seed", c.noise_seed.to_string());
        put("shuffle_seed", c.shuffle_seed.to_string());
        put("alignment_diagnostics", c.alignment_diagnostics.to_string());
        kv
    }
}

/// Parse a flat `key = value` file: one pair per line, `#` comments, blank
/// lines ignored.
pub fn parse_key_values(text: &str) -> Result<BTreeMap<String, String>> {
    let mut kv = BTreeMap::new();
    for (lineno, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let (key, value) = line
            .split_once('=')
            .ok_or_else(|| anyhow!("line {}: expected key = value, got {raw:?}", lineno + 1))?;
        kv.insert(key.trim().to_string(), value.trim().to_string());
    }
    Ok(kv)
}

/// Unresolved overrides: what a config file or the command line may supply.
#[derive(Debug, Clone, Default)]
pub struct Overrides {
    pub task: Option<Task>,
    pub mode: Option<Mode>,
    pub precision: Option<Precision>,
    pub hidden: Option<Vec<usize>>,
    pub lr: Option<f64>,
    pub momentum: Option<f64>,
    pub epochs: Option<usize>,
    pub batch_size: Option<usize>,
    pub threshold: Option<f64>,
    pub noise_std: Option<f64>,
    pub dropout: Option<f64>,
    pub weight_decay: Option<f64>,
    pub weight_seed: Option<u64>,
    pub feedback_seed: Option<u64>,
    pub noise_seed: Option<u64>,
    pub shuffle_seed: Option<u64>,
    pub alignment_diagnostics: Option<bool>,
}

impl Overrides {
    /// Later settings win.
    pub fn merged_over(mut self, base: Overrides) -> Overrides {
        macro_rules! fill {
            ($($f:ident),*) => { $( if self.$f.is_none() { self.$f = base.$f; } )* };
        }
        fill!(
            task, mode, precision, hidden, lr, momentum, epochs, batch_size, threshold,
            noise_std, dropout, weight_decay, weight_seed, feedback_seed, noise_seed,
            shuffle_seed, alignment_diagnostics
        );
        self
    }

    pub fn from_key_values(kv: &BTreeMap<String, String>) -> Result<Overrides> {
        fn get<T: FromStr>(kv: &BTreeMap<String, String>, key: &str) -> Result<Option<T>>
        where
            T::Err: fmt::Display,
        {
            match kv.get(key) {
                None => Ok(None),
                Some(raw) => raw
                    .parse::<T>()
                    .map(Some)
                    .map_err(|e| anyhow!("config key {key} = {raw:?}: {e}")),
            }
        }

        let mut o = Overrides {
            task: get(kv, "task")?,
            mode: get(kv, "mode")?,
            precision: None,
            hidden: None,
            lr: get(kv, "lr")?,
            momentum: get(kv, "momentum")?,
            epochs: get(kv, "epochs")?,
            batch_size: get(kv, "batch_size")?,
            threshold: get(kv, "threshold")?,
            noise_std: get(kv, "noise_std")?,
            dropout: get(kv, "dropout")?,
            weight_decay: get(kv, "weight_decay")?,
            weight_seed: get(kv, "weight_seed")?,
            feedback_seed: get(kv, "feedback_seed")?,
            noise_seed: get(kv, "noise_seed")?,
            shuffle_seed: get(kv, "shuffle_seed")?,
            alignment_diagnostics: get(kv, "alignment_diagnostics")?,
        };
        if let Some(raw) = kv.get("precision") {
            o.precision = Some(parse_precision(raw)?);
        }
        if let Some(raw) = kv.get("hidden") {
            o.hidden = Some(parse_hidden(raw)?);
        }
        Ok(o)
    }

    pub fn from_config_file(path: &Path) -> Result<Overrides> {
        let text = std::fs::read_to_string(path)
            .with_context(|| format!("reading config file {}", path.display()))?;
        Overrides::from_key_values(&parse_key_values(&text)?)
    }

    /// Resolve against the task defaults: built-in defaults < config file <
    /// flags, where `self` is already the merged override stack.
    pub fn resolve(self) -> Result<RunSpec> {
        let task = self
            .task
            .ok_or_else(|| anyhow!("no task given (use --task mnist|cora or a config file)"))?;
        let mode = self.mode.unwrap_or(Mode::Bp);
        let defaults = task.defaults(mode);
        let mut config = defaults.config;
        macro_rules! apply {
            ($($field:ident => $target:ident),*) => {
                $( if let Some(v) = self.$field { config.$target = v; } )*
            };
        }
        apply!(
            lr => lr, momentum => momentum, epochs => epochs, batch_size => batch_size,
            threshold => ternary_threshold, noise_std => noise_std, dropout => dropout,
            weight_decay => weight_decay, weight_seed => weight_seed,
            feedback_seed => feedback_seed, noise_seed => noise_seed,
            shuffle_seed => shuffle_seed, alignment_diagnostics => alignment_diagnostics
        );
        let hidden = match self.hidden {
            Some(h) if !h.is_empty() => h,
            Some(_) => bail!("hidden layer list must not be empty"),
            None => defaults.dims[1..defaults.dims.len() - 1].to_vec(),
        };
        Ok(RunSpec {
            task,
            precision: self.precision.unwrap_or(Precision::F32),
            hidden,
            config,
        })
    }
}

pub fn parse_precision(raw: &str) -> Result<Precision> {
    match raw {
        "f32" => Ok(Precision::F32),
        "f64" => Ok(Precision::F64),
        other => bail!("unknown precision {other:?}; valid: f32, f64"),
    }
}

pub fn parse_hidden(raw: &str) -> Result<Vec<usize>> {
    raw.split(',')
        .map(|p| {
            p.trim()
                .parse::<usize>()
                .map_err(|e| anyhow!("hidden width {p:?}: {e}"))
        })
        .collect()
}

/// Data directory resolution: explicit flag, then OPTO_DFA_DATA_DIR, then
/// `./data`.
pub fn resolve_data_dir(flag: Option<PathBuf>) -> PathBuf {
    flag.or_else(|| std::env::var_os("OPTO_DFA_DATA_DIR").map(PathBuf::from))
        .unwrap_or_else(|| PathBuf::from("data"))
}
