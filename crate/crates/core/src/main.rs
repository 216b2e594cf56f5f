//! Command line entry point: fetch checkpoints, run the full / focused /
//! adapted experiments, or re-emit reports from a stored summary.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use typosim::runner::{
    emit_reports, fetch_models, load_bundle, run_experiment, ExperimentConfig, ExperimentMode,
    ReportBundle,
};
use typosim::simkernel::CenteringMode;
use typosim::typology::FeatureArea;

#[derive(Parser)]
#[command(
    name = "typosim",
    version,
    about = "Layer-wise weight-matrix similarity across monolingual transformer models, \
             correlated with typological similarity between their languages"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct RunArgs {
    /// Experiment config (TOML)
    #[arg(long)]
    config: PathBuf,
    /// Override the centering mode (centered | uncentered)
    #[arg(long)]
    centering: Option<CenteringMode>,
    /// Override the significance threshold for starring cells
    #[arg(long)]
    significance: Option<f64>,
    /// Override the reporting threshold on rho
    #[arg(long)]
    reporting_threshold: Option<f64>,
    /// Override the worker thread count
    #[arg(long)]
    parallelism: Option<usize>,
    /// Override the clustering seed
    #[arg(long)]
    seed: Option<u64>,
    /// Override the cache directory
    #[arg(long)]
    cache_dir: Option<PathBuf>,
    /// Override the output directory
    #[arg(long)]
    output_dir: Option<PathBuf>,
}

#[derive(Subcommand)]
enum Command {
    /// Download and digest-verify every configured checkpoint
    Fetch {
        #[arg(long)]
        config: PathBuf,
    },
    /// Correlation grids over every pair of roster languages
    Full(RunArgs),
    /// Cluster the languages, then correlate over cross-cluster pairs only
    Focused {
        #[command(flatten)]
        run: RunArgs,
        /// Typological space to cluster in (syntactic | morphological)
        #[arg(long)]
        space: Option<FeatureArea>,
        /// 1-based index of the first cluster
        #[arg(long)]
        cluster_a: Option<usize>,
        /// 1-based index of the second cluster
        #[arg(long)]
        cluster_b: Option<usize>,
    },
    /// Pre- vs post-adaptation grids over the adapted subset, with deltas
    Adapted(RunArgs),
    /// Re-emit CSV/SVG reports from a stored summary.json
    Report {
        #[arg(long)]
        summary: PathBuf,
        #[arg(long)]
        output_dir: PathBuf,
    },
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}

fn run(cli: Cli) -> Result<(), Box<dyn std::error::Error>> {
    match cli.command {
        Command::Fetch { config } => {
            let config = ExperimentConfig::from_path(&config)?;
            let checkpoints = fetch_models(&config.roster, &config.cache_dir)?;
            for cp in &checkpoints {
                println!("{}  {}  {}", cp.digest, cp.language, cp.path.display());
            }
            println!("{} checkpoints available", checkpoints.len());
            Ok(())
        }
        Command::Full(args) => {
            let config = load_with_overrides(&args)?;
            let bundle = run_experiment(&config, ExperimentMode::Full)?;
            finish(bundle, &config)
        }
        Command::Focused {
            run,
            space,
            cluster_a,
            cluster_b,
        } => {
            let mut config = load_with_overrides(&run)?;
            if let Some(space) = space {
                config.focused.space = space;
            }
            if let Some(a) = cluster_a {
                config.focused.cluster_a = a;
            }
            if let Some(b) = cluster_b {
                config.focused.cluster_b = b;
            }
            let bundle = run_experiment(&config, ExperimentMode::Focused)?;
            finish(bundle, &config)
        }
        Command::Adapted(args) => {
            let config = load_with_overrides(&args)?;
            let bundle = run_experiment(&config, ExperimentMode::Adapted)?;
            finish(bundle, &config)
        }
        Command::Report {
            summary,
            output_dir,
        } => {
            let mut bundle = load_bundle(&summary)?;
            let files = emit_reports(&mut bundle, &output_dir)?;
            for f in &files {
                println!("wrote {}", f.display());
            }
            Ok(())
        }
    }
}

fn load_with_overrides(args: &RunArgs) -> Result<ExperimentConfig, Box<dyn std::error::Error>> {
    let mut config = ExperimentConfig::from_path(&args.config)?;
    if let Some(c) = args.centering {
        config.centering = c;
    }
    if let Some(s) = args.significance {
        config.significance_threshold = s;
    }
    if let Some(r) = args.reporting_threshold {
        config.reporting_threshold = r;
    }
    if let Some(p) = args.parallelism {
        config.parallelism = p;
    }
    if let Some(s) = args.seed {
        config.seed = s;
    }
    if let Some(dir) = &args.cache_dir {
        config.cache_dir = dir.clone();
    }
    if let Some(dir) = &args.output_dir {
        config.output_dir = dir.clone();
    }
    Ok(config)
}

fn finish(
    mut bundle: ReportBundle,
    config: &ExperimentConfig,
) -> Result<(), Box<dyn std::error::Error>> {
    let files = emit_reports(&mut bundle, &config.output_dir)?;
    print_highlights(&bundle);
    for f in &files {
        println!("wrote {}", f.display());
    }
    Ok(())
}

fn print_highlights(bundle: &ReportBundle) {
    let meta = &bundle.metadata;
    println!(
        "mode {} | centering {} | {} languages | seed {}",
        meta.mode,
        meta.centering,
        meta.languages.len(),
        meta.seed
    );
    if let Some(analysis) = &bundle.cluster_analysis {
        for (i, members) in analysis.clustering.members.iter().enumerate() {
            let tag = if i + 1 == analysis.cluster_a || i + 1 == analysis.cluster_b {
                " (selected)"
            } else {
                ""
            };
            let list: Vec<&str> = members.iter().map(|s| s.as_str()).collect();
            println!("cluster {}: {}{}", i + 1, list.join(" "), tag);
        }
        let polarizing: Vec<String> = analysis
            .polarizing()
            .iter()
            .map(|t| t.feature.code.clone())
            .collect();
        println!("polarizing features: {}", polarizing.join(" "));
    }
    for labeled in &bundle.grids {
        let strong: Vec<String> = labeled
            .grid
            .cells
            .iter()
            .filter(|c| c.rho >= meta.reporting_threshold && c.p < meta.significance_threshold)
            .map(|c| format!("{}{}={:.2}", c.kind, c.layer, c.rho))
            .collect();
        println!(
            "{}: n={} pairs; cells above rho {} with p < {}: {}",
            labeled.label,
            labeled.grid.pair_count(),
            meta.reporting_threshold,
            meta.significance_threshold,
            if strong.is_empty() {
                "none".into()
            } else {
                strong.join(" ")
            }
        );
    }
    for delta in &bundle.deltas {
        println!(
            "adapted delta ({}): average rho change over layers {}..={} is {:.3}",
            delta.space, delta.layer_from, delta.layer_to, delta.window_average
        );
    }
}
