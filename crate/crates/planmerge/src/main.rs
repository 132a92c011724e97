use clap::{Parser, Subcommand};
use planmerge::config::{preset, SimConfig};
use planmerge::engine::LogLevel;
use planmerge::merging::MergeMethod;
use planmerge::metrics::{aggregate, read_raw_csv, write_agg_csv, write_raw_csv, MetricsRecord};
use planmerge::sim::run_batch;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

/// Deterministic plan-merging experiments: run a preset population and write
/// plot-ready CSV.
#[derive(Parser)]
#[command(name = "planmerge", version, about)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run one experiment preset and write raw per-execution rows.
    Run {
        /// Experiment preset to start from.
        #[arg(long, value_parser = ["exp1", "exp2", "exp3"])]
        preset: String,
        /// Optional key=value overlay applied on top of the preset.
        #[arg(long)]
        config: Option<PathBuf>,
        /// Merge method to run; `all` runs every method into one file.
        #[arg(long, default_value = "all", value_parser = ["0", "1", "2", "3", "all"])]
        method: String,
        /// Seeds in the batch (overrides preset and file).
        #[arg(long)]
        seeds: Option<usize>,
        /// First seed of the batch (overrides preset and file).
        #[arg(long)]
        master_seed: Option<u64>,
        /// Replace noisy perception with the exact normalized error.
        #[arg(long)]
        no_noise: bool,
        /// Output directory, created if missing.
        #[arg(long)]
        out: PathBuf,
    },
    /// Aggregate every raw_*.csv in a directory into one summary table.
    Aggregate {
        /// Directory holding raw CSV files from `run`.
        #[arg(long = "in")]
        input: PathBuf,
        /// Path of the aggregate CSV to write.
        #[arg(long)]
        out: PathBuf,
    },
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match dispatch(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(message) => {
            eprintln!("error: {message}");
            ExitCode::from(1)
        }
    }
}

fn dispatch(cli: Cli) -> Result<(), String> {
    match cli.command {
        Command::Run { preset, config, method, seeds, master_seed, no_noise, out } => {
            run_command(&preset, config.as_deref(), &method, seeds, master_seed, no_noise, &out)
        }
        Command::Aggregate { input, out } => aggregate_command(&input, &out),
    }
}

fn run_command(
    preset_name: &str,
    config_path: Option<&Path>,
    method: &str,
    seeds: Option<usize>,
    master_seed: Option<u64>,
    no_noise: bool,
    out: &Path,
) -> Result<(), String> {
    let mut config: SimConfig = preset(preset_name).map_err(|e| e.to_string())?;
    if let Some(path) = config_path {
        let text = std::fs::read_to_string(path)
            .map_err(|e| format!("cannot read {}: {e}", path.display()))?;
        config
            .apply_config_str(&text)
            .map_err(|e| format!("{}: {e}", path.display()))?;
    }
    if let Some(n) = seeds {
        config.num_seeds = n;
    }
    if let Some(s) = master_seed {
        config.master_seed = s;
    }
    if no_noise {
        config.no_noise = true;
    }
    let methods: Vec<MergeMethod> = match method {
        "all" => MergeMethod::ALL.to_vec(),
        digit => {
            let index: u8 = digit.parse().expect("restricted by the parser");
            vec![MergeMethod::from_index(index).expect("restricted by the parser")]
        }
    };
    config.validate().map_err(|e| e.to_string())?;
    std::fs::create_dir_all(out)
        .map_err(|e| format!("cannot create {}: {e}", out.display()))?;
    let log = LogLevel::from_env();
    let records: Vec<MetricsRecord> =
        run_batch(&config, &methods, log).map_err(|e| e.to_string())?;
    let label = if method == "all" { "all".to_string() } else { method.to_string() };
    let path = out.join(format!("raw_{preset_name}_{label}.csv"));
    write_raw_csv(&records, &path).map_err(|e| e.to_string())?;
    println!("wrote {} rows to {}", records.len(), path.display());
    Ok(())
}

fn aggregate_command(input: &Path, out: &Path) -> Result<(), String> {
    let entries = std::fs::read_dir(input)
        .map_err(|e| format!("cannot read {}: {e}", input.display()))?;
    let mut paths: Vec<PathBuf> = entries
        .filter_map(|entry| entry.ok().map(|e| e.path()))
        .filter(|p| {
            p.file_name()
                .and_then(|n| n.to_str())
                .is_some_and(|n| n.starts_with("raw_") && n.ends_with(".csv"))
        })
        .collect();
    paths.sort();
    if paths.is_empty() {
        return Err(format!("no raw_*.csv files in {}", input.display()));
    }
    let mut records = Vec::new();
    for path in &paths {
        records.extend(read_raw_csv(path).map_err(|e| e.to_string())?);
    }
    let rows = aggregate(&records);
    write_agg_csv(&rows, out).map_err(|e| e.to_string())?;
    println!(
        "aggregated {} rows from {} files into {}",
        records.len(),
        paths.len(),
        out.display()
    );
    Ok(())
}
