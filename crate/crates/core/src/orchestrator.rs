//! In-process round protocol.
//!
//! Round 0 evaluates the shared random initialization as the "combined"
//! model, while each host trains from it once. Every later round `r`:
//! hosts start from the combined model of round `r − 1`, train locally,
//! submit weights and corpus sizes, and the combination of those submissions
//! becomes round `r`'s combined model. Both the host models and the combined
//! model are scored on the global test set.
//!
//! The [`Coordinator`] holds everything the synchronizing side needs and is
//! shared with the networked server, so both paths compute identical rounds.

use std::collections::BTreeMap;
use std::fs;
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::combiner::{combine, CombineConfig, DistanceReport, Strategy};
use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::model::{ArchitectureDescriptor, HostSubmission, ParameterSet};
use crate::rng::derive_seed;
use crate::trainer::{evaluate, init_params, train, weight_stats, EvalReport, TrainConfig};

const INIT_STREAM: u64 = 0x1417;
const CENTRAL_STREAM: u64 = 0xCE27;

/// Shared random initialization for a session seed.
pub fn shared_init(arch: &ArchitectureDescriptor, seed: u64) -> ParameterSet {
    init_params(arch, derive_seed(seed, INIT_STREAM))
}

/// Training configuration a host uses in `round`: the base seed is mixed
/// with the round so every round reshuffles differently.
pub fn round_train_config(base: &TrainConfig, round: u64) -> TrainConfig {
    let mut cfg = base.clone();
    cfg.seed = derive_seed(base.seed, round);
    cfg
}

/// One local training step as performed by a host. Only the resulting
/// submission leaves the host.
pub fn host_step(
    host_id: &str,
    data: &Dataset,
    base: &TrainConfig,
    start: &ParameterSet,
    round: u64,
) -> Result<HostSubmission> {
    let mut cfg = round_train_config(base, round);
    if cfg.proximal_mu > 0.0 {
        cfg.reference_params = Some(start.clone());
    }
    let params = train(start, data, &cfg)?;
    HostSubmission::new(host_id, round, data.n_samples() as u64, params)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    Coln,
    Fedavg,
    PlainAverage,
    /// Size-weighted averaging with a proximal term pulling local training
    /// towards the round's starting model.
    Fedprox,
}

impl std::fmt::Display for Method {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Method::Coln => "coln",
            Method::Fedavg => "fedavg",
            Method::PlainAverage => "plain_average",
            Method::Fedprox => "fedprox",
        })
    }
}

impl From<Strategy> for Method {
    fn from(s: Strategy) -> Self {
        match s {
            Strategy::Coln => Method::Coln,
            Strategy::Fedavg => Method::Fedavg,
            Strategy::PlainAverage => Method::PlainAverage,
        }
    }
}

#[derive(Clone, Debug)]
pub struct HostSetup {
    pub host_id: String,
    pub data: Dataset,
    pub train: TrainConfig,
}

#[derive(Clone, Debug)]
pub struct ExperimentConfig {
    pub architecture: ArchitectureDescriptor,
    pub hosts: Vec<HostSetup>,
    pub test: Dataset,
    pub combine: CombineConfig,
    pub max_rounds: usize,
    pub stop_epsilon: f64,
    pub stop_patience: usize,
    pub seed: u64,
    pub baselines_to_run: Vec<Method>,
    pub centralized_epochs: usize,
    pub fedprox_mu: f64,
}

impl ExperimentConfig {
    pub fn new(
        architecture: ArchitectureDescriptor,
        hosts: Vec<HostSetup>,
        test: Dataset,
        combine: CombineConfig,
        max_rounds: usize,
        seed: u64,
    ) -> Self {
        Self {
            architecture,
            hosts,
            test,
            combine,
            max_rounds,
            stop_epsilon: 1e-3,
            stop_patience: 3,
            seed,
            baselines_to_run: vec![Method::Fedavg, Method::PlainAverage],
            centralized_epochs: 200,
            fedprox_mu: 0.01,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.max_rounds < 1 {
            return Err(Error::config("max_rounds must be at least 1"));
        }
        if self.stop_patience < 1 {
            return Err(Error::config("stop_patience must be at least 1"));
        }
        if self.stop_epsilon.is_nan() || self.stop_epsilon < 0.0 {
            return Err(Error::config("stop_epsilon must be non-negative"));
        }
        if !self.fedprox_mu.is_finite() || self.fedprox_mu < 0.0 {
            return Err(Error::config("fedprox_mu must be finite and non-negative"));
        }
        self.combine.validate()?;
        if self.hosts.is_empty() {
            return Err(Error::config("at least one host is required"));
        }
        let mut ids: Vec<&str> = self.hosts.iter().map(|h| h.host_id.as_str()).collect();
        ids.sort_unstable();
        if ids.windows(2).any(|w| w[0] == w[1]) {
            return Err(Error::config("host ids must be unique"));
        }
        for h in &self.hosts {
            h.train.validate(&self.architecture)?;
            if h.data.n_samples() == 0 {
                return Err(Error::config(format!("host {} has no samples", h.host_id)));
            }
            if h.data.n_features() != self.architecture.input_dim() {
                return Err(Error::config(format!(
                    "host {} has {} features, architecture expects {}",
                    h.host_id,
                    h.data.n_features(),
                    self.architecture.input_dim()
                )));
            }
        }
        if self.test.n_features() != self.architecture.input_dim() {
            return Err(Error::config("test set width does not match the architecture"));
        }
        Ok(())
    }

    fn combine_for(&self, method: Method) -> CombineConfig {
        let strategy = match method {
            Method::Coln => Strategy::Coln,
            Method::Fedavg | Method::Fedprox => Strategy::Fedavg,
            Method::PlainAverage => Strategy::PlainAverage,
        };
        self.combine.clone().with_strategy(strategy)
    }

    fn train_for(&self, method: Method, host: &HostSetup) -> TrainConfig {
        let mut cfg = host.train.clone();
        if method == Method::Fedprox {
            cfg.proximal_mu = self.fedprox_mu;
        } else {
            cfg.proximal_mu = 0.0;
        }
        cfg.reference_params = None;
        cfg
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RoundRecord {
    pub round: usize,
    pub per_host_accuracy: BTreeMap<String, f64>,
    pub per_host_loss: BTreeMap<String, f64>,
    pub combined_accuracy: f64,
    pub combined_loss: f64,
    /// Mean absolute value of the combined model's parameters.
    pub weight_norm_mean: f64,
    pub weight_norm_std: f64,
    /// Absent in round 0, where nothing is combined.
    pub distance_report: Option<DistanceReport>,
    pub combined_digest: String,
    /// Digest of the model each host started the round from.
    pub host_start_digests: BTreeMap<String, String>,
}

/// Early stopping on combined accuracy: halts once the round-over-round
/// improvement has stayed below `epsilon` for `patience` consecutive rounds.
/// Round 1 is compared with nothing, since round 0 is the untrained init.
#[derive(Clone, Debug)]
pub struct StopRule {
    epsilon: f64,
    patience: usize,
    streak: usize,
    previous: Option<f64>,
}

impl StopRule {
    pub fn new(epsilon: f64, patience: usize) -> Self {
        Self {
            epsilon,
            patience,
            streak: 0,
            previous: None,
        }
    }

    /// Records round `round`'s combined accuracy; true means stop now.
    pub fn observe(&mut self, round: usize, accuracy: f64) -> bool {
        if round == 0 {
            return false;
        }
        if let Some(prev) = self.previous {
            if accuracy - prev < self.epsilon {
                self.streak += 1;
            } else {
                self.streak = 0;
            }
        }
        self.previous = Some(accuracy);
        self.streak >= self.patience
    }
}

/// Synchronizing side of a session: combines submissions, scores models on
/// the test set, keeps the round records and applies the stop rule.
pub struct Coordinator {
    combine: CombineConfig,
    test: Dataset,
    stop: StopRule,
    current: ParameterSet,
    records: Vec<RoundRecord>,
    models: Vec<ParameterSet>,
    stopped: bool,
}

impl Coordinator {
    pub fn new(init: ParameterSet, test: Dataset, combine: CombineConfig, stop: StopRule) -> Self {
        Self {
            combine,
            test,
            stop,
            current: init,
            records: Vec::new(),
            models: Vec::new(),
            stopped: false,
        }
    }

    /// Model the hosts train from in the next round.
    pub fn current(&self) -> &ParameterSet {
        &self.current
    }

    pub fn next_round(&self) -> usize {
        self.records.len()
    }

    pub fn records(&self) -> &[RoundRecord] {
        &self.records
    }

    pub fn models(&self) -> &[ParameterSet] {
        &self.models
    }

    pub fn stopped(&self) -> bool {
        self.stopped
    }

    /// Closes the current round with all host submissions. Returns the
    /// round's combined model and whether the stop rule fired.
    pub fn finish_round(&mut self, submissions: &[HostSubmission]) -> Result<(&ParameterSet, bool)> {
        let round = self.next_round();
        if submissions.iter().any(|s| s.round != round as u64) {
            return Err(Error::protocol(format!("submissions do not all belong to round {round}")));
        }
        if submissions.iter().any(|s| s.params.architecture() != self.current.architecture()) {
            return Err(Error::protocol("a submission's architecture differs from the session's"));
        }
        let start_digest = self.current.digest();
        let (combined, report) = if round == 0 {
            (self.current.clone(), None)
        } else {
            let (p, r) = combine(submissions, &self.combine, round as u64)?;
            (p, Some(r))
        };

        let mut per_host_accuracy = BTreeMap::new();
        let mut per_host_loss = BTreeMap::new();
        let mut host_start_digests = BTreeMap::new();
        for s in submissions {
            let ev = evaluate(&s.params, &self.test)?;
            per_host_accuracy.insert(s.host_id.clone(), ev.accuracy);
            per_host_loss.insert(s.host_id.clone(), ev.loss);
            host_start_digests.insert(s.host_id.clone(), start_digest.clone());
        }
        let ev = evaluate(&combined, &self.test)?;
        let (weight_norm_mean, weight_norm_std) = weight_stats(&combined);
        if !weight_norm_mean.is_finite() || !weight_norm_std.is_finite() {
            return Err(Error::Numeric(format!("round {round}: weight statistics overflowed")));
        }
        self.records.push(RoundRecord {
            round,
            per_host_accuracy,
            per_host_loss,
            combined_accuracy: ev.accuracy,
            combined_loss: ev.loss,
            weight_norm_mean,
            weight_norm_std,
            distance_report: report,
            combined_digest: combined.digest(),
            host_start_digests,
        });
        let stop = self.stop.observe(round, ev.accuracy);
        self.stopped = stop;
        self.current = combined.clone();
        self.models.push(combined);
        Ok((&self.current, stop))
    }

    pub fn into_output(self, method: Method) -> RunOutput {
        RunOutput {
            method,
            records: self.records,
            models: self.models,
            stopped_early: self.stopped,
        }
    }
}

/// Records and per-round combined models of one run.
#[derive(Clone, Debug)]
pub struct RunOutput {
    pub method: Method,
    pub records: Vec<RoundRecord>,
    pub models: Vec<ParameterSet>,
    pub stopped_early: bool,
}

impl RunOutput {
    pub fn final_model(&self) -> &ParameterSet {
        self.models.last().expect("at least round 0 is recorded")
    }
}

/// Trains every host from `start` in parallel. Results are collected in host
/// order; each host's computation depends only on its own inputs.
fn train_hosts(
    config: &ExperimentConfig,
    method: Method,
    start: &ParameterSet,
    round: u64,
) -> Result<Vec<HostSubmission>> {
    std::thread::scope(|scope| {
        let handles: Vec<_> = config
            .hosts
            .iter()
            .map(|h| {
                let cfg = config.train_for(method, h);
                scope.spawn(move || host_step(&h.host_id, &h.data, &cfg, start, round))
            })
            .collect();
        handles
            .into_iter()
            .map(|handle| handle.join().expect("host training thread panicked"))
            .collect()
    })
}

/// Runs rounds `0..=max_rounds` (or until the stop rule fires) with `method`.
pub fn run_method(config: &ExperimentConfig, method: Method) -> Result<RunOutput> {
    config.validate()?;
    if config.hosts.len() < 2 {
        return Err(Error::config("a round protocol needs at least two hosts"));
    }
    let init = shared_init(&config.architecture, config.seed);
    let mut coord = Coordinator::new(
        init,
        config.test.clone(),
        config.combine_for(method),
        StopRule::new(config.stop_epsilon, config.stop_patience),
    );
    for round in 0..=config.max_rounds {
        let start = coord.current().clone();
        let subs = train_hosts(config, method, &start, round as u64)?;
        let (_, stop) = coord.finish_round(&subs)?;
        log::info!(
            "{method} round {round}: combined accuracy {:.4}",
            coord.records().last().unwrap().combined_accuracy
        );
        if stop {
            break;
        }
    }
    Ok(coord.into_output(method))
}

/// Round protocol with the configured combination strategy.
pub fn run_rounds(config: &ExperimentConfig) -> Result<Vec<RoundRecord>> {
    Ok(run_method(config, config.combine.strategy.into())?.records)
}

/// The golden-standard model: one network trained on the union of all host
/// datasets for `centralized_epochs`, starting from the shared init.
pub fn run_centralized(config: &ExperimentConfig) -> Result<(ParameterSet, EvalReport)> {
    config.validate()?;
    let parts: Vec<&Dataset> = config.hosts.iter().map(|h| &h.data).collect();
    let union = Dataset::concat(&parts)?;
    let mut cfg = config.hosts[0].train.clone();
    cfg.epochs = config.centralized_epochs;
    cfg.proximal_mu = 0.0;
    cfg.reference_params = None;
    cfg.seed = derive_seed(config.seed, CENTRAL_STREAM);
    let params = train(&shared_init(&config.architecture, config.seed), &union, &cfg)?;
    let report = evaluate(&params, &config.test)?;
    Ok((params, report))
}

#[derive(Clone, Debug)]
pub struct Comparison {
    pub runs: Vec<RunOutput>,
    pub centralized: EvalReport,
}

/// Runs the configured strategy followed by every listed baseline on the
/// same hosts, seeds and epochs, plus the centralized reference.
pub fn run_comparison(config: &ExperimentConfig) -> Result<Comparison> {
    if config.baselines_to_run.is_empty() {
        return Err(Error::config("baselines_to_run is empty"));
    }
    let mut methods = vec![Method::from(config.combine.strategy)];
    for &m in &config.baselines_to_run {
        if !methods.contains(&m) {
            methods.push(m);
        }
    }
    let runs = methods
        .into_iter()
        .map(|m| run_method(config, m))
        .collect::<Result<Vec<_>>>()?;
    let (_, centralized) = run_centralized(config)?;
    Ok(Comparison { runs, centralized })
}

/// `round,model_id,accuracy,loss`, one row per round per model. With a
/// prefix, model ids read `prefix/combined`, `prefix/host`.
pub fn write_rounds_csv(out: &mut dyn Write, runs: &[(Option<&str>, &[RoundRecord])]) -> Result<()> {
    writeln!(out, "round,model_id,accuracy,loss")?;
    for (prefix, records) in runs {
        let id = |name: &str| match prefix {
            Some(p) => format!("{p}/{name}"),
            None => name.to_string(),
        };
        for r in records.iter() {
            writeln!(out, "{},{},{},{}", r.round, id("combined"), r.combined_accuracy, r.combined_loss)?;
            for (host, acc) in &r.per_host_accuracy {
                writeln!(out, "{},{},{},{}", r.round, id(host), acc, r.per_host_loss[host])?;
            }
        }
    }
    Ok(())
}

pub fn save_rounds_csv(path: &Path, runs: &[(Option<&str>, &[RoundRecord])]) -> Result<()> {
    let mut buf = Vec::new();
    write_rounds_csv(&mut buf, runs)?;
    fs::write(path, buf)?;
    Ok(())
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MethodSummary {
    pub method: Method,
    pub rounds_run: usize,
    pub stopped_early: bool,
    pub final_accuracy: f64,
    pub best_accuracy: f64,
    pub best_round: usize,
    pub final_weight_norm_mean: f64,
    pub final_model_digest: String,
}

impl MethodSummary {
    pub fn of(run: &RunOutput) -> Self {
        let last = run.records.last().expect("non-empty run");
        let best = run
            .records
            .iter()
            .fold(&run.records[0], |b, r| if r.combined_accuracy > b.combined_accuracy { r } else { b });
        Self {
            method: run.method,
            rounds_run: last.round,
            stopped_early: run.stopped_early,
            final_accuracy: last.combined_accuracy,
            best_accuracy: best.combined_accuracy,
            best_round: best.round,
            final_weight_norm_mean: last.weight_norm_mean,
            final_model_digest: last.combined_digest.clone(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub seed: u64,
    pub rate_warning: bool,
    pub methods: Vec<MethodSummary>,
    pub centralized: Option<EvalReport>,
    pub rounds: Vec<RoundRecord>,
}
