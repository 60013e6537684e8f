use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use vessel_risk::pipeline::{Pipeline, PipelineError, RunConfig, RunReport};
use vessel_risk::select::SelectionMode;
use vessel_risk::synth::SynthConfig;

#[derive(Parser)]
#[command(name = "vessel-risk", version, about = "Vessel incident-risk factor selection")]
struct Cli {
    #[command(subcommand)]
    command: Command,
    /// JSON run configuration; without one a default synthetic fleet is used.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Output directory for artifacts.
    #[arg(long, global = true, default_value = "out")]
    out: PathBuf,
    /// Run seed; overrides the configuration.
    #[arg(long, global = true)]
    seed: Option<u64>,
    #[arg(long, global = true, value_enum)]
    mode: Option<Mode>,
    /// Worker threads (default: all cores).
    #[arg(long, global = true)]
    jobs: Option<usize>,
    /// Overwrite existing artifacts.
    #[arg(long, global = true)]
    force: bool,
}

#[derive(Clone, Copy, ValueEnum)]
enum Mode {
    Faithful,
    Nested,
}

#[derive(Subcommand)]
enum Command {
    /// Load and validate input CSVs (or generate the synthetic fleet).
    Ingest,
    /// Assemble the labeled factor dataset.
    BuildDataset,
    /// Rebalance classes with SMOTE and Tomek-link cleaning.
    Resample,
    /// Train the ranking forest.
    Train,
    /// SHAP importance rank, beeswarm export and correlation matrix.
    Rank,
    /// Correlation filter at the configured threshold and window.
    Filter,
    /// Grid search over filter threshold and window.
    Search,
    /// Top-n key-factor selection.
    Select,
    /// Top-n selection on the unfiltered rank.
    Baseline,
    /// Generate a synthetic fleet with planted risk drivers.
    Synth,
    /// Every stage followed by the report.
    RunAll,
    /// Assemble report.json and print the key-factor table.
    Report,
}

enum Failure {
    Usage(String),
    Pipeline(PipelineError),
}

impl From<PipelineError> for Failure {
    fn from(e: PipelineError) -> Self {
        Failure::Pipeline(e)
    }
}

fn load_config(cli: &Cli) -> Result<RunConfig, Failure> {
    let mut config = match &cli.config {
        Some(path) => RunConfig::from_file(path)?,
        None => RunConfig {
            synth: Some(SynthConfig::default()),
            ..RunConfig::default()
        },
    };
    if let Some(seed) = cli.seed {
        config.seed = seed;
    }
    if let Some(mode) = cli.mode {
        config.mode = match mode {
            Mode::Faithful => SelectionMode::Faithful,
            Mode::Nested => SelectionMode::Nested,
        };
    }
    if matches!(cli.command, Command::Synth) && config.input.is_some() {
        // synth ignores the input source
        config.input = None;
        config.synth.get_or_insert_with(SynthConfig::default);
    }
    Ok(config)
}

fn print_report(report: &RunReport) {
    let p = &report.payload;
    println!("Key factors ({} of {} candidates)", p.key_factors.len(), p.dataset.n_factors);
    println!("{:>4}  {:<24}  {:<70}  {:>10}", "rank", "category", "description", "importance");
    for row in &p.key_factors {
        println!(
            "{:>4}  {:<24}  {:<70}  {:>10.6}",
            row.rank, row.category, row.description, row.importance
        );
    }
    println!();
    println!("{:<14}  {:>4}  {:>8}  {:>9}  {:>8}  {:>8}  {:>8}", "method", "n", "accuracy", "precision", "recall", "f1", "auc");
    for c in &p.comparison {
        let auc = c.auc.map(|v| format!("{v:.4}")).unwrap_or_else(|| "-".into());
        println!(
            "{:<14}  {:>4}  {:>8.4}  {:>9.4}  {:>8.4}  {:>8.4}  {:>8}",
            c.method, c.n, c.accuracy, c.precision, c.recall, c.f1, auc
        );
    }
}

fn run(cli: &Cli) -> Result<(), Failure> {
    if let Some(jobs) = cli.jobs {
        if jobs == 0 {
            return Err(Failure::Usage("--jobs must be positive".into()));
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(jobs)
            .build_global()
            .map_err(|e| Failure::Usage(e.to_string()))?;
    }
    let config = load_config(cli)?;
    let p = Pipeline::new(&config, &cli.out, cli.force)?;
    match cli.command {
        Command::Ingest => {
            let s = p.ingest()?;
            println!("{} vessels, span {} to {}", s.n_vessels, s.span.start, s.span.end);
        }
        Command::Synth => {
            let truth = p.synth()?;
            println!("planted factors: {}", truth.informative.join(", "));
        }
        Command::BuildDataset => {
            let s = p.build_dataset()?;
            let counts: Vec<String> = s.class_counts.iter().map(|c| format!("{} {}", c.class, c.count)).collect();
            println!("{} samples x {} factors ({})", s.n_samples, s.n_factors, counts.join(", "));
        }
        Command::Resample => {
            let r = p.resample()?;
            println!("class counts {:?} -> {:?}", r.original_counts, r.final_counts);
        }
        Command::Train => {
            let m = p.train()?;
            println!("{} trees over {} factors", m.trees.len(), m.n_features);
        }
        Command::Rank => {
            let r = p.rank()?;
            for e in r.rank.entries.iter().take(10) {
                println!("{:<32} {:.6}", e.id, e.importance);
            }
        }
        Command::Filter => {
            let o = p.filter()?;
            println!("{} factors remain after filtering", o.rank.len());
        }
        Command::Search => {
            let r = p.search(&p.evaluator()?)?;
            println!("optimum tau {} window {}: n = {}, f1 = {:.4}", r.filter.r_tau, r.filter.window, r.n, r.criterion.f1);
        }
        Command::Select => {
            let r = p.select(&p.evaluator()?)?;
            println!("{} key factors, f1 = {:.4}", r.n, r.criterion.f1);
        }
        Command::Baseline => {
            let r = p.baseline(&p.evaluator()?)?;
            println!("{} factors, f1 = {:.4}", r.n, r.criterion.f1);
        }
        Command::RunAll => print_report(&p.run_all()?),
        Command::Report => print_report(&p.report()?),
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Usage(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(1)
        }
        Err(Failure::Pipeline(e)) => {
            eprintln!("error: {e}");
            let code = match e {
                PipelineError::Config(_) | PipelineError::Exists(_) => 1,
                _ if e.is_data_error() => 2,
                _ => 3,
            };
            ExitCode::from(code)
        }
    }
}
