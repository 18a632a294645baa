use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};

use curved_core::commands::{self, AnalysisOptions, MetricSelection, MetricSpace};
use curved_core::geometry::DEFAULT_EPS_V;
use curved_core::grids::ParamMode;
use curved_core::Error;

#[derive(Parser)]
#[command(
    name = "curved",
    version,
    about = "Curvature and salience of residual-stream trajectories"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum MetricArg {
    Curvature,
    Salience,
    Both,
}

#[derive(Clone, Copy, ValueEnum)]
enum ParamArg {
    Layer,
    Arclen,
}

#[derive(Clone, Copy, ValueEnum)]
enum SpaceArg {
    Semantic,
    Euclidean,
}

#[derive(clap::Args)]
struct Opts {
    /// Which grids to compute.
    #[arg(long, value_enum, default_value = "both")]
    metric: MetricArg,
    /// Curve parameter: layer index or semantic arc length.
    #[arg(long, value_enum, default_value = "layer")]
    param: ParamArg,
    /// Geometry for curvature and salience.
    #[arg(long = "metric-space", value_enum, default_value = "semantic")]
    metric_space: SpaceArg,
    /// Relative speed below which curvature is masked.
    #[arg(long = "eps-v", default_value_t = DEFAULT_EPS_V)]
    eps_v: f64,
    /// Output directory.
    #[arg(long)]
    out: PathBuf,
}

impl Opts {
    fn analysis(&self) -> AnalysisOptions {
        AnalysisOptions {
            metrics: match self.metric {
                MetricArg::Curvature => MetricSelection::Curvature,
                MetricArg::Salience => MetricSelection::Salience,
                MetricArg::Both => MetricSelection::Both,
            },
            param_mode: match self.param {
                ParamArg::Layer => ParamMode::LayerIndex,
                ParamArg::Arclen => ParamMode::ArcLength,
            },
            space: match self.metric_space {
                SpaceArg::Semantic => MetricSpace::Semantic,
                SpaceArg::Euclidean => MetricSpace::Euclidean,
            },
            eps_v: self.eps_v,
        }
    }
}

#[derive(Subcommand)]
enum Command {
    /// Curvature / salience grids and summary for one trace.
    Analyze {
        trace_dir: PathBuf,
        /// Unembedding (ci-umat/1) or cached metric (ci-gmat/1); optional with --metric-space euclidean.
        umat_dir: Option<PathBuf>,
        #[command(flatten)]
        opts: Opts,
    },
    /// Delta grids and triptych heatmaps for a cs trace against its control.
    Delta {
        cs_dir: PathBuf,
        ctrl_dir: PathBuf,
        umat_dir: Option<PathBuf>,
        #[command(flatten)]
        opts: Opts,
    },
    /// Suite tables from a manifest of prompt sets.
    Suite {
        manifest: PathBuf,
        umat_dir: Option<PathBuf>,
        #[command(flatten)]
        opts: Opts,
    },
    /// Check a container's invariants.
    Validate { path: PathBuf },
    /// Build G = UᵀU once and cache it as a ci-gmat/1 container.
    BuildMetric {
        umat_dir: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
}

fn run(cli: Cli) -> Result<ExitCode, Error> {
    match cli.command {
        Command::Analyze {
            trace_dir,
            umat_dir,
            opts,
        } => {
            let s = commands::cmd_analyze(
                &trace_dir,
                umat_dir.as_deref(),
                &opts.analysis(),
                &opts.out,
            )?;
            println!(
                "analyzed {} ({} tokens) -> {}",
                s.variant,
                s.num_tokens,
                opts.out.display()
            );
        }
        Command::Delta {
            cs_dir,
            ctrl_dir,
            umat_dir,
            opts,
        } => {
            let s = commands::cmd_delta(
                &cs_dir,
                &ctrl_dir,
                umat_dir.as_deref(),
                &opts.analysis(),
                &opts.out,
            )?;
            for (name, v) in &s.mean_abs_delta {
                match v {
                    Some(v) => println!("{name}: mean |delta| = {v:.6e}"),
                    None => println!("{name}: no valid cells"),
                }
            }
            if s.alignment.unmatched_count > 0 {
                println!("unmatched tokens: {}", s.alignment.unmatched_count);
            }
        }
        Command::Suite {
            manifest,
            umat_dir,
            opts,
        } => {
            let r =
                commands::cmd_suite(&manifest, umat_dir.as_deref(), &opts.analysis(), &opts.out)?;
            for s in &r.scaling {
                println!(
                    "{} {:?}: ratio={} p={} ({:?})",
                    s.metric_name,
                    s.polarity,
                    s.ratio_str_over_mod
                        .map_or("n/a".into(), |x| format!("{x:.4}")),
                    s.p_one_sided.map_or("n/a".into(), |x| format!("{x:.3e}")),
                    s.status
                );
            }
        }
        Command::Validate { path } => {
            let report = commands::cmd_validate(&path)?;
            for c in &report.checks {
                println!(
                    "{} {}: {}",
                    if c.passed { "PASS" } else { "FAIL" },
                    c.name,
                    c.detail
                );
            }
            if !report.passed() {
                return Ok(ExitCode::from(2));
            }
        }
        Command::BuildMetric { umat_dir, out } => {
            commands::cmd_build_metric(&umat_dir, &out)?;
            println!("wrote {}", out.display());
        }
    }
    Ok(ExitCode::SUCCESS)
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    match run(Cli::parse()) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
