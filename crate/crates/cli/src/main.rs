//! `modforge` command-line tool.
//!
//! Exit codes: 0 success, 1 usage error, 2 data or I/O error, 3 constraint
//! violation (for example `K` larger than the matrix allows).

mod output;

use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use clap::{Parser, Subcommand, ValueEnum};
use modforge::metrics::{
    block_heatmap, category_similarity, extract_features, layer_distribution, train_eval_classifier,
    CategorySimilarity, ClassifierReport, DEFAULT_TEST_FRACTION,
};
use modforge::synth::generate;
use modforge::{
    adjusted_rand_index, discover, load_matrix, save_matrix, zscore_normalize, ActivationMatrix, Error, InitMode,
    IterDConfig, IterDTrace, ObjectiveValue, Partition, PlantedSpec, PlantedTruth,
};
use serde::{Deserialize, Serialize};

use output::{write_heatmap_csv, write_json, write_layer_csv};

#[derive(Parser, Debug)]
#[command(name = "modforge", version, about = "Discover function modules in neuron activation matrices")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Partition neurons and samples into K modules and write a run report.
    Discover(DiscoverArgs),
    /// Generate a planted-block matrix with known modules.
    Synth(SynthArgs),
    /// Score a partition: classifier, ARI, category similarity and plots data.
    Eval(EvalArgs),
    /// Write the block heatmap and layer distribution CSVs for a partition.
    Report(ReportArgs),
}

#[derive(ValueEnum, Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
enum InitArg {
    Kmeans,
    Random,
}

#[derive(ValueEnum, Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
enum NormalizeArg {
    Zscore,
    None,
}

#[derive(clap::Args, Debug)]
struct InputArgs {
    /// Activation matrix (.npy, neurons x samples).
    #[arg(long)]
    activations: PathBuf,
    /// Metadata sidecar (JSON).
    #[arg(long)]
    meta: PathBuf,
    /// `none` requires an input already flagged as normalized.
    #[arg(long, value_enum, default_value = "zscore")]
    normalize: NormalizeArg,
}

#[derive(clap::Args, Debug)]
struct DiscoverArgs {
    #[command(flatten)]
    input: InputArgs,
    /// Number of modules.
    #[arg(long, value_parser = clap::value_parser!(u64).range(1..))]
    k: u64,
    #[arg(long, value_enum, default_value = "kmeans")]
    init: InitArg,
    #[arg(long, default_value_t = 4, value_parser = clap::value_parser!(u64).range(1..))]
    restarts: u64,
    #[arg(long, default_value_t = 42)]
    seed: u64,
    #[arg(long, default_value_t = 100, value_parser = clap::value_parser!(u64).range(1..))]
    max_iters: u64,
    #[arg(long, default_value_t = 50, value_parser = clap::value_parser!(u64).range(1..))]
    pca_dims: u64,
    /// Worker threads for restarts (default: available parallelism).
    /// `MODFORGE_THREADS`, when set, takes precedence.
    #[arg(long, value_parser = clap::value_parser!(u64).range(1..))]
    threads: Option<u64>,
    /// Record wall-clock timings in the report (makes it non-reproducible).
    #[arg(long)]
    timings: bool,
    /// Log one line per iteration of the winning run to standard error.
    #[arg(long, short)]
    verbose: bool,
    #[arg(long)]
    out: PathBuf,
}

#[derive(clap::Args, Debug)]
struct SynthArgs {
    /// Full spec as JSON; replaces the individual flags.
    #[arg(long, conflicts_with_all = ["n", "m", "k", "signal", "noise", "seed", "layers", "unlabeled"])]
    spec: Option<PathBuf>,
    #[arg(long, default_value_t = 2000)]
    n: usize,
    #[arg(long, default_value_t = 700)]
    m: usize,
    #[arg(long, default_value_t = 7)]
    k: usize,
    /// Mean activation inside planted blocks.
    #[arg(long, default_value_t = 1.0, allow_negative_numbers = true)]
    signal: f64,
    /// Standard deviation of the Gaussian noise.
    #[arg(long, default_value_t = 0.5)]
    noise: f64,
    #[arg(long, default_value_t = 42)]
    seed: u64,
    /// Spread neurons over this many layers in the metadata.
    #[arg(long, default_value_t = 1)]
    layers: u32,
    /// Omit sample labels from the metadata.
    #[arg(long)]
    unlabeled: bool,
    /// Writes `<prefix>.npy`, `<prefix>.meta.json` and `<prefix>.truth.json`.
    #[arg(long)]
    out_prefix: PathBuf,
}

#[derive(clap::Args, Debug)]
struct EvalArgs {
    /// Run report or partition JSON.
    #[arg(long)]
    partition: PathBuf,
    #[command(flatten)]
    input: InputArgs,
    /// Planted truth JSON, for ARI.
    #[arg(long)]
    truth: Option<PathBuf>,
    #[arg(long, default_value_t = 0)]
    split_seed: u64,
    /// `auto` trains the classifier only when every sample is labeled.
    #[arg(long, value_enum, default_value = "auto")]
    classifier: ClassifierArg,
    /// Defaults to `<out>` with extension `heatmap.csv`.
    #[arg(long)]
    heatmap: Option<PathBuf>,
    /// Defaults to `<out>` with extension `layers.csv`.
    #[arg(long)]
    layer_dist: Option<PathBuf>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(ValueEnum, Clone, Copy, Debug, PartialEq, Eq)]
enum ClassifierArg {
    Auto,
    On,
    Off,
}

#[derive(clap::Args, Debug)]
struct ReportArgs {
    #[arg(long)]
    partition: PathBuf,
    #[command(flatten)]
    input: InputArgs,
    #[arg(long)]
    heatmap: PathBuf,
    #[arg(long)]
    layer_dist: PathBuf,
}

/// A failure with the exit code it maps to.
#[derive(Debug)]
struct Failure {
    code: u8,
    message: String,
}

impl Failure {
    fn usage(message: impl Into<String>) -> Self {
        Self { code: 1, message: message.into() }
    }

    fn data(message: impl Into<String>) -> Self {
        Self { code: 2, message: message.into() }
    }

    fn constraint(message: impl Into<String>) -> Self {
        Self { code: 3, message: message.into() }
    }
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        if e.is_constraint_violation() {
            Failure::constraint(e.to_string())
        } else {
            Failure::data(e.to_string())
        }
    }
}

type CmdResult = Result<(), Failure>;

const THREADS_ENV: &str = "MODFORGE_THREADS";

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 1 } else { 0 });
        }
    };
    let result = match cli.command {
        Command::Discover(args) => cmd_discover(args),
        Command::Synth(args) => cmd_synth(args),
        Command::Eval(args) => cmd_eval(args),
        Command::Report(args) => cmd_report(args),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {}", f.message);
            ExitCode::from(f.code)
        }
    }
}

fn with_path(path: &Path) -> impl Fn(Error) -> Failure + '_ {
    move |e| {
        let f = Failure::from(e);
        Failure { code: f.code, message: format!("{}: {}", path.display(), f.message) }
    }
}

/// Loads the matrix and applies the requested normalization.
fn load_input(input: &InputArgs) -> Result<ActivationMatrix, Failure> {
    let m = load_matrix(&input.activations, &input.meta).map_err(with_path(&input.activations))?;
    match input.normalize {
        NormalizeArg::Zscore if m.is_normalized() => Ok(m),
        NormalizeArg::Zscore => Ok(zscore_normalize(&m)?.0),
        NormalizeArg::None if m.is_normalized() => Ok(m),
        NormalizeArg::None => Err(Failure::data(
            "input is not flagged as normalized; use --normalize zscore",
        )),
    }
}

#[derive(Serialize)]
struct ConfigEcho<'a> {
    activations: &'a Path,
    meta: &'a Path,
    k: usize,
    init: InitArg,
    restarts: usize,
    seed: u64,
    max_iters: usize,
    pca_dims: usize,
    normalize: NormalizeArg,
}

#[derive(Serialize)]
struct Scaled {
    #[serde(rename = "L")]
    l: f64,
    xi: f64,
    #[serde(rename = "B")]
    balance: f64,
}

impl From<ObjectiveValue> for Scaled {
    fn from(v: ObjectiveValue) -> Self {
        Self { l: v.l * 1e6, xi: v.xi * 1e6, balance: v.balance * 1e6 }
    }
}

#[derive(Serialize)]
struct Timings {
    load_seconds: f64,
    discover_seconds: f64,
}

#[derive(Serialize)]
struct RunReport<'a> {
    config: ConfigEcho<'a>,
    k: usize,
    n_neurons: usize,
    n_samples: usize,
    objective: ObjectiveValue,
    scaled_1e6: Scaled,
    winning_restart: usize,
    neuron_assignment: &'a [usize],
    sample_assignment: &'a [usize],
    trace: &'a IterDTrace,
    #[serde(skip_serializing_if = "Option::is_none")]
    timings: Option<Timings>,
}

fn cmd_discover(args: DiscoverArgs) -> CmdResult {
    let to_usize = |v: u64| usize::try_from(v).map_err(|_| Failure::usage(format!("{v} is out of range")));
    let started = Instant::now();
    let m = load_input(&args.input)?;
    let load_seconds = started.elapsed().as_secs_f64();

    let cfg = IterDConfig {
        k: to_usize(args.k)?,
        init: match args.init {
            InitArg::Kmeans => InitMode::KmeansPca,
            InitArg::Random => InitMode::RandomBalanced,
        },
        restarts: to_usize(args.restarts)?,
        max_iters: to_usize(args.max_iters)?,
        seed: args.seed,
        pca_dims: to_usize(args.pca_dims)?,
    };
    let threads = match std::env::var(THREADS_ENV) {
        Ok(v) => Some(
            v.trim()
                .parse::<usize>()
                .ok()
                .filter(|&t| t > 0)
                .ok_or_else(|| Failure::usage(format!("{THREADS_ENV} must be a positive integer, got {v:?}")))?,
        ),
        Err(_) => args.threads.map(to_usize).transpose()?,
    };
    let mut pool = rayon::ThreadPoolBuilder::new();
    if let Some(t) = threads {
        pool = pool.num_threads(t);
    }
    let pool = pool.build().map_err(|e| Failure::usage(format!("cannot start worker threads: {e}")))?;
    let started = Instant::now();
    let found = pool.install(|| discover(&m, &cfg))?;
    let discover_seconds = started.elapsed().as_secs_f64();

    if args.verbose {
        for r in &found.trace.records {
            eprintln!(
                "iteration {:>3}: L = {}, xi = {}, B = {}, moves = {} ({} neurons, {} samples)",
                r.iteration, r.l, r.xi, r.balance, r.reassignments, r.neuron_moves, r.sample_moves
            );
        }
    }

    let scaled = Scaled::from(found.objective);
    let report = RunReport {
        config: ConfigEcho {
            activations: &args.input.activations,
            meta: &args.input.meta,
            k: cfg.k,
            init: args.init,
            restarts: cfg.restarts,
            seed: cfg.seed,
            max_iters: cfg.max_iters,
            pca_dims: cfg.pca_dims,
            normalize: args.input.normalize,
        },
        k: cfg.k,
        n_neurons: m.n_neurons(),
        n_samples: m.n_samples(),
        objective: found.objective,
        scaled_1e6: Scaled::from(found.objective),
        winning_restart: found.restart,
        neuron_assignment: found.partition.neuron_assign(),
        sample_assignment: found.partition.sample_assign(),
        trace: &found.trace,
        timings: args.timings.then_some(Timings { load_seconds, discover_seconds }),
    };
    write_json(&args.out, &report)?;
    println!("L  (x1e6) = {}", scaled.l);
    println!("xi (x1e6) = {}", scaled.xi);
    println!("B  (x1e6) = {}", scaled.balance);
    Ok(())
}

fn cmd_synth(args: SynthArgs) -> CmdResult {
    let spec = match &args.spec {
        Some(path) => {
            let text = std::fs::read_to_string(path).map_err(|e| Failure::data(format!("{}: {e}", path.display())))?;
            serde_json::from_str::<PlantedSpec>(&text)
                .map_err(|e| Failure::usage(format!("{}: invalid spec: {e}", path.display())))?
        }
        None => {
            let mut spec = PlantedSpec::new(args.n, args.m, args.k, args.signal, args.noise, args.seed);
            spec.layers = args.layers;
            spec.labels = !args.unlabeled;
            spec
        }
    };
    // Generation does no I/O, so every failure is a bad spec.
    let (matrix, truth) = generate(&spec).map_err(|e| Failure::usage(format!("invalid spec: {e}")))?;

    let prefix = args.out_prefix.as_os_str().to_owned();
    let with_suffix = |suffix: &str| {
        let mut p = prefix.clone();
        p.push(suffix);
        PathBuf::from(p)
    };
    let npy = with_suffix(".npy");
    save_matrix(&matrix, &npy, with_suffix(".meta.json")).map_err(with_path(&npy))?;
    write_json(&with_suffix(".truth.json"), &truth)?;
    Ok(())
}

/// Accepts a run report or any JSON object with these three fields.
#[derive(Deserialize)]
struct PartitionFile {
    k: usize,
    neuron_assignment: Vec<usize>,
    sample_assignment: Vec<usize>,
}

fn load_partition(path: &Path, m: &ActivationMatrix) -> Result<Partition, Failure> {
    let text = std::fs::read_to_string(path).map_err(|e| Failure::data(format!("{}: {e}", path.display())))?;
    let file: PartitionFile =
        serde_json::from_str(&text).map_err(|e| Failure::data(format!("{}: {e}", path.display())))?;
    let p = Partition::new(file.k, file.neuron_assignment, file.sample_assignment).map_err(with_path(path))?;
    p.check_dims(m).map_err(with_path(path))?;
    Ok(p)
}

#[derive(Serialize)]
struct AriBlock {
    neurons: f64,
    samples: f64,
}

#[derive(Serialize)]
struct EvalReport<'a> {
    k: usize,
    objective: ObjectiveValue,
    #[serde(skip_serializing_if = "Option::is_none")]
    ari: Option<AriBlock>,
    #[serde(skip_serializing_if = "Option::is_none")]
    classifier: Option<ClassifierReport>,
    #[serde(skip_serializing_if = "Option::is_none")]
    category_similarity: Option<CategorySimilarity>,
    heatmap_csv: &'a Path,
    layer_distribution_csv: &'a Path,
}

fn sibling(out: &Path, extension: &str) -> PathBuf {
    out.with_extension(extension)
}

fn cmd_eval(args: EvalArgs) -> CmdResult {
    let m = load_input(&args.input)?;
    let p = load_partition(&args.partition, &m)?;
    let objective = modforge::evaluate(&m, &p)?;

    let ari = match &args.truth {
        Some(path) => {
            let text = std::fs::read_to_string(path).map_err(|e| Failure::data(format!("{}: {e}", path.display())))?;
            let truth: PlantedTruth =
                serde_json::from_str(&text).map_err(|e| Failure::data(format!("{}: {e}", path.display())))?;
            Some(AriBlock {
                neurons: adjusted_rand_index(p.neuron_assign(), &truth.neuron_truth).map_err(with_path(path))?,
                samples: adjusted_rand_index(p.sample_assign(), &truth.sample_truth).map_err(with_path(path))?,
            })
        }
        None => None,
    };

    let labeled = m.samples().iter().filter(|s| s.label.is_some()).count();
    if labeled != 0 && labeled != m.n_samples() {
        return Err(Failure::data(format!("only {labeled} of {} samples are labeled", m.n_samples())));
    }
    let labels = m.labels();
    let run_classifier = match args.classifier {
        ClassifierArg::Off => false,
        ClassifierArg::Auto => labels.is_some(),
        ClassifierArg::On if labels.is_none() => {
            return Err(Failure::data("classifier requested but the samples carry no labels"));
        }
        ClassifierArg::On => true,
    };
    if ari.is_none() && labels.is_none() && args.classifier != ClassifierArg::Off {
        return Err(Failure::data("samples carry no labels and no --truth was given; nothing to score"));
    }

    let features = extract_features(&m, &p)?;
    let (classifier, similarity) = match &labels {
        Some(labels) if run_classifier => (
            Some(train_eval_classifier(&features, labels, args.split_seed, DEFAULT_TEST_FRACTION)?),
            Some(category_similarity(&features, labels)?),
        ),
        Some(labels) => (None, Some(category_similarity(&features, labels)?)),
        None => (None, None),
    };

    let heatmap_path = args.heatmap.clone().unwrap_or_else(|| sibling(&args.out, "heatmap.csv"));
    let layers_path = args.layer_dist.clone().unwrap_or_else(|| sibling(&args.out, "layers.csv"));
    write_heatmap_csv(&heatmap_path, &block_heatmap(&m, &p)?)?;
    write_layer_csv(&layers_path, &layer_distribution(&p, m.neurons())?)?;

    let report = EvalReport {
        k: p.k(),
        objective,
        ari,
        classifier,
        category_similarity: similarity,
        heatmap_csv: &heatmap_path,
        layer_distribution_csv: &layers_path,
    };
    write_json(&args.out, &report)?;
    if let Some(a) = &report.ari {
        println!("ARI neurons = {}, samples = {}", a.neurons, a.samples);
    }
    if let Some(c) = &report.classifier {
        println!("accuracy = {}, macro-F1 = {}", c.accuracy, c.macro_f1);
    }
    Ok(())
}

fn cmd_report(args: ReportArgs) -> CmdResult {
    let m = load_input(&args.input)?;
    let p = load_partition(&args.partition, &m)?;
    write_heatmap_csv(&args.heatmap, &block_heatmap(&m, &p)?)?;
    write_layer_csv(&args.layer_dist, &layer_distribution(&p, m.neurons())?)?;
    Ok(())
}

