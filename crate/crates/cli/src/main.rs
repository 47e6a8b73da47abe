mod config;

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use coln::combiner::{combine, CombineConfig, RateSchedule, Strategy};
use coln::data::{load_csv, write_csv, CsvOptions, Normalization};
use coln::model::{read_model_file, write_model_file, HostSubmission, ParameterSet};
use coln::netsync::{join, Synchronizer};
use coln::orchestrator::{
    run_centralized, run_method, save_rounds_csv, Method, MethodSummary, RoundRecord, RunOutput, Summary,
};
use coln::trainer::evaluate;
use coln::Error;
use config::Loaded;
use serde::Serialize;

#[derive(Parser)]
#[command(name = "coln", version, about = "Combine locally trained networks across isolated hosts")]
struct Cli {
    #[command(subcommand)]
    command: Command,
    /// Log only errors.
    #[arg(long, global = true)]
    quiet: bool,
}

#[derive(Args)]
struct Common {
    /// Experiment config (JSON).
    #[arg(long)]
    config: PathBuf,
    /// Output directory; overrides `output_dir` in the config.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Overrides the top-level seed.
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Subcommand)]
enum Command {
    /// Run the round protocol in one process.
    Simulate(Common),
    /// Run the synchronizer of a networked session.
    Serve {
        #[command(flatten)]
        common: Common,
        /// Listen address; overrides `session.bind`.
        #[arg(long)]
        bind: Option<String>,
    },
    /// Take part in a networked session as one host.
    Join {
        #[command(flatten)]
        common: Common,
        /// Which host of the data section to play.
        #[arg(long)]
        host: String,
        /// Synchronizer address; overrides `session.server`.
        #[arg(long)]
        server: Option<String>,
    },
    /// Write the per-host and test CSVs a config would produce.
    Partition(Common),
    /// Combine model files once and print the distance report.
    Combine(CombineArgs),
    /// Evaluate a model file on a CSV.
    Eval(EvalArgs),
}

#[derive(Args)]
struct CombineArgs {
    /// `host_id:corpus_size:model.json`, one per host.
    #[arg(long = "submission", required = true)]
    submissions: Vec<String>,
    #[arg(long, default_value = "coln")]
    strategy: String,
    #[arg(long, default_value_t = 1e-3, allow_negative_numbers = true)]
    c: f64,
    #[arg(long)]
    alternating: bool,
    #[arg(long)]
    no_shift: bool,
    #[arg(long)]
    signed_shift: bool,
    #[arg(long, default_value_t = 1)]
    round: u64,
    /// Where to write the combined model.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct EvalArgs {
    #[arg(long)]
    model: PathBuf,
    #[arg(long)]
    csv: PathBuf,
    #[arg(long)]
    label_column: String,
    #[arg(long)]
    zscore: bool,
}

/// Failure with the command it happened in, for exit-code mapping.
struct Failure {
    error: Error,
    networked: bool,
}

impl From<Error> for Failure {
    fn from(error: Error) -> Self {
        Self { error, networked: false }
    }
}

fn exit_code(f: &Failure) -> u8 {
    match &f.error {
        Error::Diverged { .. } | Error::Numeric(_) => 3,
        Error::Protocol(_) | Error::Timeout(_) => 4,
        Error::Io(_) if f.networked => 4,
        _ => 2,
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let default = if cli.quiet { "error" } else { "info" };
    env_logger::Builder::from_env(env_logger::Env::new().filter_or("COLN_LOG", default)).init();
    match run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            log::error!("{}", f.error);
            eprintln!("error: {}", f.error);
            ExitCode::from(exit_code(&f))
        }
    }
}

fn run(command: Command) -> Result<(), Failure> {
    match command {
        Command::Simulate(c) => simulate(&c),
        Command::Serve { common, bind } => serve(&common, bind).map_err(networked),
        Command::Join { common, host, server } => join_session(&common, &host, server).map_err(networked),
        Command::Partition(c) => write_partition(&c),
        Command::Combine(a) => combine_files(&a),
        Command::Eval(a) => eval(&a),
    }
}

fn networked(f: Failure) -> Failure {
    Failure { networked: true, ..f }
}

fn load(c: &Common) -> Result<Loaded, Error> {
    let mut loaded = Loaded::read(&c.config)?;
    if let Some(seed) = c.seed {
        loaded.file.seed = seed;
    }
    Ok(loaded)
}

fn prepare_out(dir: &Path) -> Result<(), Error> {
    fs::create_dir_all(dir.join("models")).map_err(|e| Error::Config(format!("output directory {}: {e}", dir.display())))
}

fn write_json(path: &Path, value: &impl Serialize) -> Result<(), Error> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    fs::write(path, text)?;
    Ok(())
}

fn write_round_models(dir: &Path, models: &[ParameterSet]) -> Result<(), Error> {
    for (round, m) in models.iter().enumerate() {
        write_model_file(&dir.join("models").join(format!("round_{round:03}.json")), m)?;
    }
    Ok(())
}

fn simulate(c: &Common) -> Result<(), Failure> {
    let loaded = load(c)?;
    let out = loaded.output_dir(c.out.as_deref());
    prepare_out(&out)?;
    let data = loaded.load_data()?;
    let config = loaded.experiment(data)?;
    if config.combine.rate_warning() {
        log::warn!("combination rate c = {} is outside the recommended range", config.combine.c);
    }
    let mut methods = vec![Method::from(config.combine.strategy)];
    for &m in &config.baselines_to_run {
        if !methods.contains(&m) {
            methods.push(m);
        }
    }
    let runs = methods
        .iter()
        .map(|&m| run_method(&config, m))
        .collect::<Result<Vec<RunOutput>, Error>>()?;
    let centralized = if loaded.file.centralized {
        let (_, report) = run_centralized(&config)?;
        log::info!("centralized accuracy {:.4}", report.accuracy);
        Some(report)
    } else {
        None
    };

    let primary = &runs[0];
    let names: Vec<String> = runs.iter().map(|r| r.method.to_string()).collect();
    let table: Vec<(Option<&str>, &[RoundRecord])> = runs
        .iter()
        .zip(&names)
        .map(|(r, n)| ((runs.len() > 1).then_some(n.as_str()), r.records.as_slice()))
        .collect();
    save_rounds_csv(&out.join("rounds.csv"), &table)?;
    write_round_models(&out, &primary.models)?;
    write_model_file(&out.join("final_model.json"), primary.final_model())?;
    let summary = Summary {
        seed: config.seed,
        rate_warning: config.combine.rate_warning(),
        methods: runs.iter().map(MethodSummary::of).collect(),
        centralized,
        rounds: primary.records.clone(),
    };
    write_json(&out.join("summary.json"), &summary)?;
    Ok(())
}

fn serve(c: &Common, bind: Option<String>) -> Result<(), Failure> {
    let loaded = load(c)?;
    let out = loaded.output_dir(c.out.as_deref());
    prepare_out(&out)?;
    let data = loaded.load_data()?;
    let expected = data.hosts.len();
    let spec = loaded.session_spec(expected)?;
    if spec.combine_config.rate_warning() {
        log::warn!("combination rate c = {} is outside the recommended range", spec.combine_config.c);
    }
    let addr = bind.unwrap_or_else(|| loaded.file.session.bind.clone());
    let sync = Synchronizer::bind(spec, data.test, addr.as_str())?;
    println!("listening on {}", sync.local_addr()?);
    std::io::stdout().flush().map_err(Error::from)?;
    log::info!("waiting for {expected} hosts");
    let models_dir = out.join("models");
    let result = sync.run(|record, model| {
        write_model_file(&models_dir.join(format!("round_{:03}.json", record.round)), model)
    })?;
    save_rounds_csv(&out.join("rounds.csv"), &[(None, &result.records)])?;
    if let Some(last) = result.models.last() {
        write_model_file(&out.join("final_model.json"), last)?;
    }
    if !result.records.is_empty() {
        let run = RunOutput {
            method: Method::from(loaded.file.combine.strategy),
            records: result.records.clone(),
            models: result.models.clone(),
            stopped_early: result.stopped_early,
        };
        let summary = Summary {
            seed: loaded.file.seed,
            rate_warning: loaded.file.combine.rate_warning(),
            methods: vec![MethodSummary::of(&run)],
            centralized: None,
            rounds: result.records,
        };
        write_json(&out.join("summary.json"), &summary)?;
    }
    match result.abort {
        Some(e) => Err(e.into()),
        None => Ok(()),
    }
}

fn join_session(c: &Common, host: &str, server: Option<String>) -> Result<(), Failure> {
    let loaded = load(c)?;
    let out = loaded.output_dir(c.out.as_deref());
    let data = loaded.load_data()?;
    let index = data
        .hosts
        .iter()
        .position(|(id, _)| id == host)
        .ok_or_else(|| Error::Config(format!("host {host:?} is not in the data section")))?;
    let train = loaded.train_config(index, host);
    let options = loaded.join_options()?;
    let addr = server.unwrap_or_else(|| loaded.file.session.server.clone());
    let result = join(addr.as_str(), host, &data.hosts[index].1, &train, &options)?;
    fs::create_dir_all(&out).map_err(|e| Error::Config(format!("output directory {}: {e}", out.display())))?;
    write_model_file(&out.join(format!("{host}_final_model.json")), &result.final_model)?;
    log::info!("{host} finished after {} rounds", result.rounds);
    Ok(())
}

#[derive(Serialize)]
struct PartitionReport {
    scale: f64,
    hosts: Vec<PartitionEntry>,
    test: Option<PartitionEntry>,
    discarded_rows: usize,
    skipped_rows: usize,
}

#[derive(Serialize)]
struct PartitionEntry {
    id: String,
    file: String,
    rows: usize,
    class_counts: Vec<usize>,
}

fn write_partition(c: &Common) -> Result<(), Failure> {
    let loaded = load(c)?;
    let out = loaded.output_dir(c.out.as_deref());
    fs::create_dir_all(&out).map_err(|e| Error::Config(format!("output directory {}: {e}", out.display())))?;
    let label = match &loaded.file.data {
        config::DataSection::Partition { label_column, .. } | config::DataSection::Files { label_column, .. } => {
            label_column.clone()
        }
        config::DataSection::SyntheticBlobs { .. } => "label".to_string(),
    };
    let data = loaded.load_data()?;
    let entry = |id: &str, d: &coln::data::Dataset| -> Result<PartitionEntry, Error> {
        let file = format!("{id}.csv");
        write_csv(&out.join(&file), d, &label)?;
        Ok(PartitionEntry {
            id: id.to_string(),
            file,
            rows: d.n_samples(),
            class_counts: d.class_counts(),
        })
    };
    let hosts = data
        .hosts
        .iter()
        .map(|(id, d)| entry(id, d))
        .collect::<Result<Vec<_>, _>>()?;
    let test = Some(entry("test", &data.test)?);
    let report = PartitionReport {
        scale: data.partition.as_ref().map_or(1.0, |p| p.scale),
        hosts,
        test,
        discarded_rows: data.partition.as_ref().map_or(0, |p| p.discarded_rows.len()),
        skipped_rows: data.skipped_rows,
    };
    write_json(&out.join("partition_report.json"), &report)?;
    Ok(())
}

fn parse_submission(spec: &str, round: u64) -> Result<HostSubmission, Error> {
    let mut parts = spec.splitn(3, ':');
    let (Some(id), Some(size), Some(path)) = (parts.next(), parts.next(), parts.next()) else {
        return Err(Error::Config(format!("submission {spec:?} is not host_id:corpus_size:path")));
    };
    let size: u64 = size
        .parse()
        .map_err(|_| Error::Config(format!("corpus size {size:?} is not a non-negative integer")))?;
    let path = Path::new(path);
    if !path.is_file() {
        return Err(Error::Config(format!("model file {} does not exist", path.display())));
    }
    HostSubmission::new(id, round, size, read_model_file(path)?)
}

fn combine_files(a: &CombineArgs) -> Result<(), Failure> {
    let strategy: Strategy = serde_json::from_value(serde_json::Value::String(a.strategy.clone()))
        .map_err(|_| Error::Config(format!("unknown strategy {:?}", a.strategy)))?;
    let cfg = CombineConfig {
        strategy,
        rate_schedule: if a.alternating { RateSchedule::Alternating } else { RateSchedule::Constant },
        c: a.c,
        shift_enabled: !a.no_shift,
        signed_shift: a.signed_shift,
    };
    cfg.validate()?;
    if cfg.rate_warning() {
        log::warn!("combination rate c = {} is outside the recommended range", cfg.c);
    }
    let subs = a
        .submissions
        .iter()
        .map(|s| parse_submission(s, a.round))
        .collect::<Result<Vec<_>, _>>()?;
    let (combined, report) = combine(&subs, &cfg, a.round)?;
    write_model_file(&a.out, &combined)?;
    println!("{}", serde_json::to_string_pretty(&report).map_err(Error::from)?);
    Ok(())
}

fn eval(a: &EvalArgs) -> Result<(), Failure> {
    for p in [&a.model, &a.csv] {
        if !p.is_file() {
            return Err(Error::Config(format!("{} does not exist", p.display())).into());
        }
    }
    let params = read_model_file(&a.model)?;
    let mut opts = CsvOptions::new(a.label_column.clone());
    if a.zscore {
        opts.normalization = Normalization::Zscore;
    }
    let data = load_csv(&a.csv, &opts)?.dataset;
    let report = evaluate(&params, &data)?;
    println!("{}", serde_json::to_string_pretty(&report).map_err(Error::from)?);
    Ok(())
}
