//! Experiment definition files.
//!
//! A config is strict JSON: unknown keys are rejected and relative paths are
//! resolved against the config file's directory.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::time::Duration;

use coln::combiner::CombineConfig;
use coln::data::{
    load_csv, partition, synth_gaussian_blobs, CsvOptions, Dataset, Normalization, Partition, PartitionPlan,
};
use coln::model::{read_model_file, ArchitectureDescriptor, ParameterSet};
use coln::netsync::{InitialParams, JoinOptions, SessionSpec, DEFAULT_CONNECT_TIMEOUT, DEFAULT_ROUND_TIMEOUT};
use coln::orchestrator::{ExperimentConfig, HostSetup, Method};
use coln::rng::derive_seed;
use coln::trainer::{Loss, TrainConfig};
use coln::Error;
use serde::Deserialize;

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConfigFile {
    pub architecture: ArchitectureDescriptor,
    pub data: DataSection,
    pub train: TrainSection,
    /// Per-host training overrides keyed by host id.
    #[serde(default)]
    pub host_train: BTreeMap<String, TrainOverride>,
    #[serde(default)]
    pub combine: CombineConfig,
    #[serde(default = "default_rounds")]
    pub max_rounds: usize,
    #[serde(default = "default_epsilon")]
    pub stop_epsilon: f64,
    #[serde(default = "default_patience")]
    pub stop_patience: usize,
    #[serde(default)]
    pub seed: u64,
    /// Extra strategies to run after the configured one; empty runs only it.
    #[serde(default)]
    pub baselines_to_run: Vec<Method>,
    /// Train the centralized reference as well.
    #[serde(default)]
    pub centralized: bool,
    #[serde(default = "default_centralized_epochs")]
    pub centralized_epochs: usize,
    #[serde(default = "default_mu")]
    pub fedprox_mu: f64,
    #[serde(default)]
    pub session: SessionSection,
    #[serde(default)]
    pub output_dir: Option<PathBuf>,
}

fn default_rounds() -> usize {
    30
}
fn default_epsilon() -> f64 {
    1e-3
}
fn default_patience() -> usize {
    3
}
fn default_centralized_epochs() -> usize {
    200
}
fn default_mu() -> f64 {
    0.01
}

#[derive(Debug, Deserialize)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
pub enum DataSection {
    /// Split one CSV according to a partition plan.
    Partition {
        csv: PathBuf,
        label_column: String,
        #[serde(default)]
        normalization: Normalization,
        #[serde(default)]
        class_names: Option<Vec<String>>,
        plan: PartitionPlan,
    },
    /// Two-class Gaussian blobs split by a partition plan.
    SyntheticBlobs {
        n_per_class: usize,
        n_features: usize,
        class_separation: f64,
        seed: u64,
        plan: PartitionPlan,
    },
    /// Ready-made per-host files and a test file.
    Files {
        label_column: String,
        #[serde(default)]
        class_names: Option<Vec<String>>,
        hosts: Vec<HostFile>,
        test: PathBuf,
    },
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct HostFile {
    pub host_id: String,
    pub csv: PathBuf,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainSection {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    /// Defaults to binary cross-entropy for a single output, softmax
    /// cross-entropy otherwise.
    #[serde(default)]
    pub loss: Option<Loss>,
    /// Base of the per-host training seeds; defaults to the top-level seed.
    #[serde(default)]
    pub seed: Option<u64>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainOverride {
    pub epochs: Option<usize>,
    pub batch_size: Option<usize>,
    pub learning_rate: Option<f64>,
    pub seed: Option<u64>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SessionSection {
    #[serde(default = "default_session_id")]
    pub session_id: String,
    #[serde(default = "default_address")]
    pub bind: String,
    #[serde(default = "default_address")]
    pub server: String,
    #[serde(default = "default_round_timeout")]
    pub round_timeout_secs: f64,
    #[serde(default = "default_connect_timeout")]
    pub connect_timeout_secs: f64,
    /// Start from this model file instead of a seeded random init.
    #[serde(default)]
    pub initial_model: Option<PathBuf>,
}

impl Default for SessionSection {
    fn default() -> Self {
        Self {
            session_id: default_session_id(),
            bind: default_address(),
            server: default_address(),
            round_timeout_secs: default_round_timeout(),
            connect_timeout_secs: default_connect_timeout(),
            initial_model: None,
        }
    }
}

fn default_session_id() -> String {
    "coln".into()
}
fn default_address() -> String {
    "127.0.0.1:7878".into()
}
fn default_round_timeout() -> f64 {
    DEFAULT_ROUND_TIMEOUT.as_secs_f64()
}
fn default_connect_timeout() -> f64 {
    DEFAULT_CONNECT_TIMEOUT.as_secs_f64()
}

/// Datasets materialized from a data section.
pub struct LoadedData {
    pub hosts: Vec<(String, Dataset)>,
    pub test: Dataset,
    pub partition: Option<Partition>,
    pub skipped_rows: usize,
}

/// A parsed config together with the directory its paths are relative to.
pub struct Loaded {
    pub file: ConfigFile,
    pub base: PathBuf,
}

fn resolve(base: &Path, p: &Path) -> PathBuf {
    if p.is_absolute() {
        p.to_path_buf()
    } else {
        base.join(p)
    }
}

fn require_file(path: &Path) -> Result<(), Error> {
    if !path.is_file() {
        return Err(Error::Config(format!("referenced file {} does not exist", path.display())));
    }
    Ok(())
}

impl Loaded {
    pub fn read(path: &Path) -> Result<Self, Error> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read config {}: {e}", path.display())))?;
        let file: ConfigFile = serde_json::from_str(&text)
            .map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        let base = path.parent().map(Path::to_path_buf).unwrap_or_default();
        let loaded = Self { file, base };
        loaded.check_paths()?;
        Ok(loaded)
    }

    fn check_paths(&self) -> Result<(), Error> {
        match &self.file.data {
            DataSection::Partition { csv, .. } => require_file(&resolve(&self.base, csv))?,
            DataSection::SyntheticBlobs { .. } => {}
            DataSection::Files { hosts, test, .. } => {
                for h in hosts {
                    require_file(&resolve(&self.base, &h.csv))?;
                }
                require_file(&resolve(&self.base, test))?;
            }
        }
        if let Some(m) = &self.file.session.initial_model {
            require_file(&resolve(&self.base, m))?;
        }
        Ok(())
    }

    pub fn output_dir(&self, cli: Option<&Path>) -> PathBuf {
        match (cli, &self.file.output_dir) {
            (Some(p), _) => p.to_path_buf(),
            (None, Some(p)) => resolve(&self.base, p),
            (None, None) => PathBuf::from("."),
        }
    }

    pub fn load_data(&self) -> Result<LoadedData, Error> {
        match &self.file.data {
            DataSection::Partition {
                csv,
                label_column,
                normalization,
                class_names,
                plan,
            } => {
                let mut opts = CsvOptions::new(label_column.clone());
                opts.normalization = *normalization;
                opts.class_names = class_names.clone();
                let load = load_csv(&resolve(&self.base, csv), &opts)?;
                let part = partition(&load.dataset, plan)?;
                from_partition(part, load.skipped_rows)
            }
            DataSection::SyntheticBlobs {
                n_per_class,
                n_features,
                class_separation,
                seed,
                plan,
            } => {
                let data = synth_gaussian_blobs(*n_per_class, *n_features, *class_separation, *seed)?;
                from_partition(partition(&data, plan)?, 0)
            }
            DataSection::Files {
                label_column,
                class_names,
                hosts,
                test,
            } => {
                let mut opts = CsvOptions::new(label_column.clone());
                opts.class_names = class_names.clone();
                let mut skipped = 0;
                let mut out = Vec::new();
                for h in hosts {
                    let load = load_csv(&resolve(&self.base, &h.csv), &opts)?;
                    skipped += load.skipped_rows;
                    out.push((h.host_id.clone(), load.dataset));
                }
                let test = load_csv(&resolve(&self.base, test), &opts)?;
                Ok(LoadedData {
                    hosts: out,
                    test: test.dataset,
                    partition: None,
                    skipped_rows: skipped + test.skipped_rows,
                })
            }
        }
    }

    fn loss(&self) -> Loss {
        self.file.train.loss.unwrap_or(if self.file.architecture.output_dim() == 1 {
            Loss::Bce
        } else {
            Loss::SoftmaxCe
        })
    }

    /// Training settings of the host at `index` in the data section.
    pub fn train_config(&self, index: usize, host_id: &str) -> TrainConfig {
        let t = &self.file.train;
        let base_seed = t.seed.unwrap_or(self.file.seed);
        let o = self.file.host_train.get(host_id);
        let pick = |f: fn(&TrainOverride) -> Option<usize>, d: usize| o.and_then(f).unwrap_or(d);
        TrainConfig::new(
            pick(|o| o.epochs, t.epochs),
            pick(|o| o.batch_size, t.batch_size),
            o.and_then(|o| o.learning_rate).unwrap_or(t.learning_rate),
            o.and_then(|o| o.seed).unwrap_or_else(|| derive_seed(base_seed, index as u64 + 1)),
            self.loss(),
        )
    }

    pub fn experiment(&self, data: LoadedData) -> Result<ExperimentConfig, Error> {
        for id in self.file.host_train.keys() {
            if !data.hosts.iter().any(|(h, _)| h == id) {
                return Err(Error::Config(format!("host_train names unknown host {id:?}")));
            }
        }
        let hosts = data
            .hosts
            .into_iter()
            .enumerate()
            .map(|(i, (host_id, data))| HostSetup {
                train: self.train_config(i, &host_id),
                host_id,
                data,
            })
            .collect();
        let f = &self.file;
        let mut cfg = ExperimentConfig::new(
            f.architecture.clone(),
            hosts,
            data.test,
            f.combine.clone(),
            f.max_rounds,
            f.seed,
        );
        cfg.stop_epsilon = f.stop_epsilon;
        cfg.stop_patience = f.stop_patience;
        cfg.baselines_to_run = f.baselines_to_run.clone();
        cfg.centralized_epochs = f.centralized_epochs;
        cfg.fedprox_mu = f.fedprox_mu;
        cfg.validate()?;
        Ok(cfg)
    }

    fn timeout(secs: f64, what: &str) -> Result<Duration, Error> {
        Duration::try_from_secs_f64(secs).map_err(|_| Error::Config(format!("{what} must be a non-negative number of seconds")))
    }

    pub fn session_spec(&self, expected_hosts: usize) -> Result<SessionSpec, Error> {
        let f = &self.file;
        let initial_params = match &f.session.initial_model {
            Some(p) => InitialParams::Preloaded(self.initial_model(p)?),
            None => InitialParams::ServerRandomSeed(f.seed),
        };
        let spec = SessionSpec {
            session_id: f.session.session_id.clone(),
            expected_hosts,
            architecture: f.architecture.clone(),
            combine_config: f.combine.clone(),
            max_rounds: f.max_rounds,
            stop_epsilon: f.stop_epsilon,
            stop_patience: f.stop_patience,
            initial_params,
            round_timeout: Self::timeout(f.session.round_timeout_secs, "round_timeout_secs")?,
        };
        spec.validate()?;
        Ok(spec)
    }

    fn initial_model(&self, p: &Path) -> Result<ParameterSet, Error> {
        read_model_file(&resolve(&self.base, p)).map_err(|e| Error::Config(format!("initial_model: {e}")))
    }

    pub fn join_options(&self) -> Result<JoinOptions, Error> {
        let s = &self.file.session;
        let mut o = JoinOptions::new(s.session_id.clone(), self.file.architecture.clone());
        o.round_timeout = Self::timeout(s.round_timeout_secs, "round_timeout_secs")?;
        o.connect_timeout = Self::timeout(s.connect_timeout_secs, "connect_timeout_secs")?;
        Ok(o)
    }
}

fn from_partition(part: Partition, skipped_rows: usize) -> Result<LoadedData, Error> {
    let test = part
        .test
        .clone()
        .ok_or_else(|| Error::Config("the partition plan must define a test set".into()))?;
    Ok(LoadedData {
        hosts: part.hosts.iter().map(|h| (h.host_id.clone(), h.data.clone())).collect(),
        test,
        partition: Some(part),
        skipped_rows,
    })
}
