use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use raingrid_core::pipeline::{self, BaselineMethod, BuildOptions, SplitName};
use raingrid_core::{DatasetVersion, Error, PipelineConfig, PrecipLevel, Result};

/// Gauge/background precipitation dataset builder and forecast verifier.
#[derive(Debug, Parser)]
#[command(name = "raingrid", disable_version_flag = true)]
struct Cli {
    #[command(flatten)]
    global: GlobalArgs,

    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Args)]
struct GlobalArgs {
    /// Pipeline configuration (TOML).
    #[arg(long, global = true, value_name = "PATH")]
    config: Option<PathBuf>,

    /// Dataset version, e.g. ERA5, ERA5+SIA, GFS+A.
    #[arg(long, global = true, value_name = "VERSION")]
    version: Option<String>,

    /// Output directory.
    #[arg(long, global = true, value_name = "DIR")]
    out: Option<PathBuf>,

    /// Comma-separated lead hours to evaluate.
    #[arg(long, global = true, value_name = "LIST", value_delimiter = ',')]
    leads: Option<Vec<usize>>,

    /// Evaluate over the whole grid, ignoring the configured mask.
    #[arg(long, global = true)]
    no_mask: bool,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Fuse stations with the training background and write X/Y tensors.
    BuildDataset {
        /// Also export the fused grid at this UTC instant as CSV.
        #[arg(long, value_name = "INSTANT")]
        export_heatmap: Option<String>,
    },
    /// Score predictions against observed targets.
    Evaluate {
        /// Predicted precipitation tensor (.stft).
        #[arg(long, value_name = "PATH")]
        pred: PathBuf,
        /// Observed targets, usually a dataset's Y.stft.
        #[arg(long, value_name = "PATH")]
        obs: PathBuf,
        /// Restrict observations to one split of their dataset.
        #[arg(long)]
        split: Option<SplitName>,
    },
    /// Assemble a single model input window ending at t0.
    FuseInference {
        /// Last input hour, UTC (RFC 3339 or naive).
        #[arg(long, value_name = "INSTANT")]
        t0: String,
    },
    /// Compare two gridded sources cell by cell.
    SanityCheck {
        /// Also write a station-vs-grid series for this station.
        #[arg(long, value_name = "ID")]
        station: Option<String>,
    },
    /// Run a reference forecaster over one split of a built dataset.
    Baseline {
        /// Directory holding X.stft, Y.stft and manifest.json.
        #[arg(long, value_name = "DIR")]
        dataset: PathBuf,
        /// persistence or climatology.
        #[arg(long, default_value = "persistence")]
        method: BaselineMethod,
        /// train, val or test.
        #[arg(long, default_value = "test")]
        split: SplitName,
    },
}

fn load_config(global: &GlobalArgs) -> Result<PipelineConfig> {
    let mut config = match &global.config {
        Some(path) => {
            if !path.exists() {
                return Err(Error::Config(format!("config file {} does not exist", path.display())));
            }
            PipelineConfig::load(path)?
        }
        None => PipelineConfig::default(),
    };
    if let Some(out) = &global.out {
        config.out_dir = out.clone();
    }
    if let Some(leads) = &global.leads {
        config.evaluation.leads = Some(leads.clone());
    }
    if global.no_mask {
        config.evaluation.use_mask = false;
    }
    Ok(config)
}

fn run(cli: Cli) -> Result<()> {
    let mut config = load_config(&cli.global)?;
    match cli.command {
        Command::BuildDataset { export_heatmap } => {
            if let Some(v) = &cli.global.version {
                config.version = v.clone();
            }
            let options = BuildOptions {
                export_heatmap: export_heatmap.as_deref().map(pipeline::parse_instant).transpose()?,
            };
            let m = pipeline::build_dataset(&config, &options)?;
            println!(
                "{}: {} examples in {} segments, X {:?}, Y {:?}, station-fused {:.2}%",
                m.dataset_version,
                m.n_examples,
                m.n_segments,
                m.x_dims,
                m.y_dims,
                100.0 * m.provenance.station_fused_fraction
            );
            println!(
                "split train {}..{} val {}..{} test {}..{}",
                m.split.train.start,
                m.split.train.end,
                m.split.val.start,
                m.split.val.end,
                m.split.test.start,
                m.split.test.end
            );
        }
        Command::Evaluate { pred, obs, split } => {
            if let Some(v) = &cli.global.version {
                config.version = v.clone();
            }
            std::fs::create_dir_all(&config.out_dir).map_err(|e| Error::Io {
                path: config.out_dir.clone(),
                source: e,
            })?;
            let report = pipeline::evaluate(&config, &pred, &obs, split)?;
            println!(
                "{}: {} examples, {} samples pooled",
                report.dataset_version, report.examples, report.pooled.samples
            );
            for level in PrecipLevel::ALL {
                let e = report.pooled.levels[level.index()];
                println!(
                    "{:<9} f1 {:.4}  mae {}  bias {}  n {}",
                    level.name(),
                    report.pooled.f1[level.index()],
                    e.mae.map_or("nan".into(), |v| format!("{v:.3}")),
                    e.bias.map_or("nan".into(), |v| format!("{v:.3}")),
                    e.count
                );
            }
        }
        Command::FuseInference { t0 } => {
            let version: DatasetVersion = cli
                .global
                .version
                .as_deref()
                .unwrap_or(&config.inference_version)
                .parse()?;
            let t0 = pipeline::parse_instant(&t0)?;
            std::fs::create_dir_all(&config.out_dir).map_err(|e| Error::Io {
                path: config.out_dir.clone(),
                source: e,
            })?;
            let m = pipeline::fuse_inference(&config, t0, &version)?;
            let hours: Vec<_> = m.input_hours.iter().map(|h| h.timestamp.as_str()).collect();
            println!("{}: X {:?} from {}", m.dataset_version, m.x_dims, hours.join(", "));
        }
        Command::SanityCheck { station } => {
            std::fs::create_dir_all(&config.out_dir).map_err(|e| Error::Io {
                path: config.out_dir.clone(),
                source: e,
            })?;
            let station = station.or_else(|| config.sanity.station.clone());
            let r = pipeline::sanity_check(&config, station.as_deref())?;
            let defined: Vec<f64> = r.spearman.iter().flatten().copied().collect();
            let mean = if defined.is_empty() {
                f64::NAN
            } else {
                defined.iter().sum::<f64>() / defined.len() as f64
            };
            println!(
                "{} common hours, {} of {} cells defined, mean spearman {:.4}",
                r.hours,
                defined.len(),
                r.spearman.len(),
                mean
            );
        }
        Command::Baseline { dataset, method, split } => {
            std::fs::create_dir_all(&config.out_dir).map_err(|e| Error::Io {
                path: config.out_dir.clone(),
                source: e,
            })?;
            let path = pipeline::run_baseline(&config, &dataset, method, split)?;
            println!("{}", path.display());
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    tracing_subscriber::fmt()
        .with_env_filter(tracing_subscriber::EnvFilter::try_from_default_env().unwrap_or_else(|_| "warn".into()))
        .with_writer(std::io::stderr)
        .init();

    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) if !e.use_stderr() => {
            let _ = e.print();
            return ExitCode::SUCCESS;
        }
        Err(e) => {
            let msg = e.to_string();
            let first = msg
                .lines()
                .next()
                .unwrap_or("invalid arguments")
                .trim_start_matches("error: ");
            eprintln!("error[config]: {first}");
            return ExitCode::from(2);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            let kind = e.kind();
            eprintln!("error[{}]: {}", kind.as_str(), e.to_string().replace('\n', " "));
            ExitCode::from(kind.exit_code() as u8)
        }
    }
}
