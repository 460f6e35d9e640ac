//! Thin command-line front end over the credit-loom library.
//!
//! Exit codes: 0 success, 2 configuration error, 3 gateway error, 4 data
//! error.

use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand, ValueEnum};

use credit_loom::config::{Config, GatewayModeKey};
use credit_loom::credit::{select_weak_roles, select_weak_rounds, RoundCreditState};
use credit_loom::datastore::{self, DatasetSplit, LogWriter, PromptStore, TaskInstance};
use credit_loom::epoch::run_epoch;
use credit_loom::error::{Error, Result};
use credit_loom::gateway::synthetic_instances;
use credit_loom::optimizer::{run_optimization, BcdContext};
use credit_loom::report::{
    export_series, render_shift, render_summary, report_shift, report_summary,
};
use credit_loom::{assets::PromptAssets, optimizer::RunManifest};

#[derive(Parser)]
#[command(
    name = "credit-loom",
    version,
    about = "Multi-agent debate orchestration with credit-guided prompt optimization"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum ModeArg {
    Live,
    Replay,
    Synthetic,
}

impl From<ModeArg> for GatewayModeKey {
    fn from(mode: ModeArg) -> Self {
        match mode {
            ModeArg::Live => GatewayModeKey::Live,
            ModeArg::Replay => GatewayModeKey::Replay,
            ModeArg::Synthetic => GatewayModeKey::Synthetic,
        }
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum SubsetArg {
    Opt,
    Test,
    All,
}

#[derive(Subcommand)]
enum Command {
    /// Validate a dataset and report its shape.
    Ingest {
        #[arg(long)]
        dataset: PathBuf,
        /// Write the validated, id-sorted dataset here.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Create the fixed optimization/test split for a dataset.
    Split {
        #[arg(long)]
        dataset: PathBuf,
        #[arg(long, default_value_t = 7)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Roll out debates over a dataset (no optimization) and write a run log.
    Run {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        dataset: PathBuf,
        #[arg(long)]
        split: Option<PathBuf>,
        #[arg(long, value_enum, default_value = "all")]
        subset: SubsetArg,
        #[arg(long, value_enum)]
        mode: Option<ModeArg>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Optimize role and aggregator prompts on the optimization split.
    Optimize {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        dataset: PathBuf,
        #[arg(long)]
        split: PathBuf,
        #[arg(long, value_enum)]
        mode: Option<ModeArg>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Summary tables for one run log; several --log flags (e.g. one per
    /// seed) add a mean +/- standard-deviation accuracy line.
    Report {
        #[arg(long, required = true)]
        log: Vec<PathBuf>,
    },
    /// Prediction-shift table between two run logs over the same instances.
    Shift {
        #[arg(long)]
        before: PathBuf,
        #[arg(long)]
        after: PathBuf,
    },
    /// Run the synthetic world end to end and print the credit tables.
    Simulate {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long, default_value_t = 100)]
        instances: usize,
    },
    /// Export accuracy and credit series from a run manifest as CSV.
    Export {
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
}

fn main() {
    env_logger::init();
    let cli = Cli::parse();
    if let Err(error) = dispatch(cli.command) {
        eprintln!("error: {error}");
        let mut source = std::error::Error::source(&error);
        while let Some(cause) = source {
            eprintln!("  caused by: {cause}");
            source = cause.source();
        }
        std::process::exit(error.kind().exit_code());
    }
}

fn dispatch(command: Command) -> Result<()> {
    match command {
        Command::Ingest { dataset, out } => ingest(&dataset, out.as_deref()),
        Command::Split { dataset, seed, out } => split(&dataset, seed, &out),
        Command::Run {
            config,
            dataset,
            split,
            subset,
            mode,
            out,
        } => run(&config, &dataset, split.as_deref(), subset, mode, &out),
        Command::Optimize {
            config,
            dataset,
            split,
            mode,
            out,
        } => optimize(&config, &dataset, &split, mode, &out),
        Command::Report { log } => report(&log),
        Command::Shift { before, after } => shift(&before, &after),
        Command::Simulate {
            config,
            seed,
            instances,
        } => simulate(&config, seed, instances),
        Command::Export { manifest, out } => export(&manifest, &out),
    }
}

fn ingest(dataset_path: &Path, out: Option<&Path>) -> Result<()> {
    let dataset = datastore::load_dataset(dataset_path)?;
    println!("{} instances, all valid", dataset.len());
    for (gold, count) in datastore::gold_distribution(&dataset) {
        println!("  gold {gold}: {count}");
    }
    if let Some(out) = out {
        datastore::write_dataset(out, &dataset)?;
        println!("normalized dataset written to {}", out.display());
    }
    Ok(())
}

fn split(dataset_path: &Path, seed: u64, out: &Path) -> Result<()> {
    let dataset = datastore::load_dataset(dataset_path)?;
    let split = datastore::make_splits(&dataset, seed)?;
    if let Some(parent) = out.parent() {
        if !parent.as_os_str().is_empty() {
            std::fs::create_dir_all(parent)
                .map_err(|e| Error::io(parent.display().to_string(), e))?;
        }
    }
    let path = if out.is_dir() {
        out.join("split.json")
    } else {
        out.to_path_buf()
    };
    split.save(&path)?;
    println!(
        "split written to {}: {} optimization / {} test (seed {seed}, generator {})",
        path.display(),
        split.optimization_ids.len(),
        split.test_ids.len(),
        split.generator
    );
    Ok(())
}

fn chosen<'a>(
    dataset: &'a [TaskInstance],
    split: Option<&DatasetSplit>,
    subset: SubsetArg,
) -> Result<Vec<&'a TaskInstance>> {
    match (subset, split) {
        (SubsetArg::All, _) => Ok(dataset.iter().collect()),
        (SubsetArg::Opt, Some(s)) => Ok(datastore::select_instances(dataset, &s.optimization_ids)),
        (SubsetArg::Test, Some(s)) => Ok(datastore::select_instances(dataset, &s.test_ids)),
        (_, None) => Err(Error::Config("--subset opt|test requires --split".into())),
    }
}

fn run(
    config_path: &Path,
    dataset_path: &Path,
    split_path: Option<&Path>,
    subset: SubsetArg,
    mode: Option<ModeArg>,
    out: &Path,
) -> Result<()> {
    let config = Config::load(config_path)?;
    let dataset = datastore::load_dataset(dataset_path)?;
    let split = split_path.map(DatasetSplit::load).transpose()?;
    let instances = chosen(&dataset, split.as_ref(), subset)?;
    if instances.is_empty() {
        return Err(Error::Config("no instances selected".into()));
    }

    let topology = config.topology()?;
    let prompts = config.initial_prompts(&topology)?;
    let mode = mode.map(Into::into).unwrap_or(config.gateway.mode);
    let gateway = config.build_gateway(mode, &topology, &dataset)?;
    let assets = PromptAssets::builtin();
    let settings = config.evaluation_settings();

    std::fs::create_dir_all(out).map_err(|e| Error::io(out.display().to_string(), e))?;
    let outcome = run_epoch(
        &instances, &topology, &prompts, &gateway, &assets, &settings,
    )?;
    let log_path = out.join("run_log.jsonl");
    LogWriter::create(&log_path)?.write_all(&outcome.log_records)?;

    println!(
        "{} instances, accuracy {:.1}%, log written to {}",
        instances.len(),
        outcome.accuracy * 100.0,
        log_path.display()
    );
    let stats = gateway.stats();
    println!(
        "completions: {} served, {} backend calls, {} cache hits",
        stats.served, stats.backend_calls, stats.cache_hits
    );
    Ok(())
}

fn optimize(
    config_path: &Path,
    dataset_path: &Path,
    split_path: &Path,
    mode: Option<ModeArg>,
    out: &Path,
) -> Result<()> {
    let config = Config::load(config_path)?;
    let dataset = datastore::load_dataset(dataset_path)?;
    let split = DatasetSplit::load(split_path)?;
    let instances = datastore::select_instances(&dataset, &split.optimization_ids);

    let topology = config.topology()?;
    let initial = config.initial_prompts(&topology)?;
    let mode = mode.map(Into::into).unwrap_or(config.gateway.mode);
    let gateway = config.build_gateway(mode, &topology, &dataset)?;
    let assets = PromptAssets::builtin();
    let settings = config.evaluation_settings();
    let optimizer_config = config.optimizer_config();

    let ctx = BcdContext {
        topology: &topology,
        instances,
        gateway: &gateway,
        assets: &assets,
        settings: &settings,
        optimizer: &optimizer_config,
    };
    let outcome = run_optimization(initial, &split, &config, &ctx)?;

    std::fs::create_dir_all(out).map_err(|e| Error::io(out.display().to_string(), e))?;
    let manifest_path = out.join("manifest.json");
    outcome.manifest.save(&manifest_path)?;
    let log_path = out.join("trajectories.jsonl");
    LogWriter::create(&log_path)?.write_all(&outcome.log_records)?;
    PromptStore::new(out.join("prompts")).save_set(&outcome.prompts)?;

    println!("optimization finished: {:?}", outcome.manifest.stop_reason);
    for entry in &outcome.manifest.history {
        println!(
            "  iteration {} phase {:<11} accuracy {:.1}%  targets [{}]",
            entry.iteration,
            entry.phase,
            entry.accuracy * 100.0,
            entry.targets.join(", ")
        );
    }
    println!("manifest written to {}", manifest_path.display());
    Ok(())
}

fn report(log_paths: &[PathBuf]) -> Result<()> {
    let mut accuracies = Vec::new();
    for (idx, path) in log_paths.iter().enumerate() {
        let records = datastore::read_log(path)?;
        let summary = report_summary(&records)?;
        if log_paths.len() > 1 {
            println!("== {} ==", path.display());
        }
        print!("{}", render_summary(&summary));
        if idx + 1 < log_paths.len() {
            println!();
        }
        accuracies.push(summary.accuracy_pct());
    }
    if log_paths.len() > 1 {
        let (mean, std) = credit_loom::report::accuracy_mean_std(&accuracies)?;
        println!(
            "\nAccuracy over {} runs: {mean:.1}% +/- {std:.1}",
            log_paths.len()
        );
    }
    Ok(())
}

fn shift(before_path: &Path, after_path: &Path) -> Result<()> {
    let before = datastore::read_log(before_path)?;
    let after = datastore::read_log(after_path)?;
    let table = report_shift(&before, &after)?;
    print!("{}", render_shift(&table));
    Ok(())
}

fn simulate(config_path: &Path, seed: Option<u64>, count: usize) -> Result<()> {
    let mut config = Config::load(config_path)?;
    if let Some(seed) = seed {
        config.gateway.seed = seed;
    }
    let topology = config.topology()?;
    let instances = synthetic_instances(count, config.gateway.seed);
    let gateway = config.build_gateway(GatewayModeKey::Synthetic, &topology, &instances)?;
    let prompts = config.initial_prompts(&topology)?;
    let assets = PromptAssets::builtin();
    let settings = config.evaluation_settings();

    let refs: Vec<&TaskInstance> = instances.iter().collect();
    let outcome = run_epoch(&refs, &topology, &prompts, &gateway, &assets, &settings)?;
    let mut round_state = RoundCreditState::new(topology.num_rounds());
    round_state.apply_events(&outcome.events, &settings.credit);

    println!(
        "synthetic world: {count} instances, seed {}, accuracy {:.1}%",
        config.gateway.seed,
        outcome.accuracy * 100.0
    );
    println!("\n{:<12} credit", "Role");
    let credits = outcome.role_state.credits()?;
    for (role, credit) in &credits {
        println!("{role:<12} {credit:.4}");
    }
    println!("\n{:<6} {:>8} {:>8}", "Round", "alpha", "buffer");
    for t in round_state.round_indices().collect::<Vec<_>>() {
        println!(
            "{t:<6} {:>8.4} {:>8}",
            round_state.alpha(t),
            round_state.buffer_len(t)
        );
    }
    let weak_roles = select_weak_roles(&credits, settings.credit.bottom_k);
    let weak_rounds = select_weak_rounds(
        &round_state,
        settings.credit.threshold,
        settings.credit.buffer_min,
    );
    println!(
        "\nweak roles (bottom {}): [{}]",
        settings.credit.bottom_k,
        weak_roles.join(", ")
    );
    println!(
        "weak rounds (alpha < {}, buffer >= {}): {:?}",
        settings.credit.threshold, settings.credit.buffer_min, weak_rounds
    );
    Ok(())
}

fn export(manifest_path: &Path, out: &Path) -> Result<()> {
    let manifest = RunManifest::load(manifest_path)?;
    let (accuracy, credit) = export_series(&manifest, out)?;
    println!("wrote {}", accuracy.display());
    println!("wrote {}", credit.display());
    Ok(())
}
