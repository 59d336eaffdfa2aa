use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use swarmwind::estimator::{self, DragOracle, WindEstimator, WindNet};
use swarmwind::experiment::{
    at_uas_metrics, compare_reference, grid_metrics, sweep, sweep_summary, write_estimates,
    write_sweep_csv, ExperimentConfig, MetricsReport,
};
use swarmwind::meanflow::WindModel;
use swarmwind::mission::{
    build_dataset_strided, load_logs, run_mission, save_logs, simulate_corpus, FlightLog,
};
use swarmwind::pinn::{
    default_products, extract_product, train_pinn, FieldModel, ObsSet, ProductSpec, ReconModel,
};
use swarmwind::turbulence::{synthesize_field, TurbulentField};
use swarmwind::{Error, Result};

#[derive(Parser)]
#[command(name = "swarmwind", version, about = "Swarm wind estimation and field reconstruction")]
struct Cli {
    /// Experiment configuration (JSON). Defaults apply when omitted.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Global seed overriding every per-stage seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Worker threads for parallel stages.
    #[arg(long, global = true)]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum Slice {
    Xy,
    Yz,
    Zx,
    Profile,
    Timeseries,
}

#[derive(Subcommand)]
enum Command {
    /// Synthesize a turbulent field and write it as a binary grid.
    GenWind {
        #[arg(long)]
        out: PathBuf,
    },
    /// Fly the formation and write one CSV log per vehicle.
    Simulate {
        #[arg(long)]
        out_dir: PathBuf,
        /// Turbulence grid to fly through instead of a freshly generated one.
        #[arg(long, conflicts_with = "corpus")]
        wind: Option<PathBuf>,
        /// Fly every configured realization with randomized wind regimes.
        #[arg(long)]
        corpus: bool,
    },
    /// Train the recurrent estimator on a directory of flight logs.
    TrainEstimator {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Estimate wind along one logged flight.
    Estimate {
        /// Estimator checkpoint, or `oracle` for drag inversion.
        #[arg(long)]
        ckpt: String,
        #[arg(long)]
        flight: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Also write the estimates as reconstruction observations.
        #[arg(long)]
        obs_out: Option<PathBuf>,
        #[arg(long, default_value_t = 1)]
        stride: usize,
        /// Vehicle id recorded in the observation file.
        #[arg(long, default_value_t = 0)]
        uas_id: usize,
    },
    /// Fit the reconstruction network to observation files.
    TrainPinn {
        #[arg(long, required = true, num_args = 1..)]
        obs: Vec<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Sample a reconstruction on a slice, profile or time series.
    Reconstruct {
        #[arg(long)]
        ckpt: PathBuf,
        #[arg(long, value_enum, default_value = "xy")]
        slice: Slice,
        #[arg(long, default_value_t = 0.0)]
        x: f64,
        #[arg(long, default_value_t = 0.0)]
        y: f64,
        #[arg(long, default_value_t = 700.0)]
        z: f64,
        #[arg(long, default_value_t = 200.0)]
        t: f64,
        /// Samples along each axis of the product.
        #[arg(long, default_value_t = 43)]
        n: usize,
        #[arg(long)]
        out: PathBuf,
    },
    /// Score a reconstruction against logged flights and the mean wind.
    Evaluate {
        #[arg(long)]
        ckpt: PathBuf,
        #[arg(long)]
        flights: PathBuf,
        /// Metrics report (JSON).
        #[arg(long)]
        out: PathBuf,
        /// Turbulence grid of the truth; enables reference comparison products.
        #[arg(long, requires = "products")]
        wind: Option<PathBuf>,
        #[arg(long)]
        products: Option<PathBuf>,
    },
    /// Run the formation-size sweep.
    Sweep {
        #[arg(long)]
        out: PathBuf,
        /// Vehicle counts; defaults to the configured list.
        #[arg(long, value_delimiter = ',')]
        counts: Option<Vec<usize>>,
    },
}

fn exit_code(e: &Error) -> u8 {
    match e {
        Error::Numerical(_) | Error::Autodiff(_) => 3,
        e if e.is_config() => 2,
        _ => 1,
    }
}

fn load_config(cli: &Cli) -> Result<ExperimentConfig> {
    let mut cfg = match &cli.config {
        Some(p) => ExperimentConfig::load(p)?,
        None => ExperimentConfig::default(),
    };
    if cli.seed.is_some() {
        cfg.seed = cli.seed;
    }
    Ok(cfg.resolved())
}

fn write_json<T: serde::Serialize>(path: &Path, value: &T) -> Result<()> {
    let text = serde_json::to_string_pretty(value)?;
    std::fs::write(path, text).map_err(|e| Error::Io {
        path: path.into(),
        source: e,
    })
}

fn create(path: &Path) -> Result<std::io::BufWriter<std::fs::File>> {
    std::fs::File::create(path)
        .map(std::io::BufWriter::new)
        .map_err(|e| Error::Io {
            path: path.into(),
            source: e,
        })
}

fn ensure_dir(path: &Path) -> Result<()> {
    std::fs::create_dir_all(path).map_err(|e| Error::Io {
        path: path.into(),
        source: e,
    })
}

fn truth_wind(cfg: &ExperimentConfig, grid: Option<&Path>) -> Result<WindModel> {
    match grid {
        Some(p) => WindModel::new(cfg.mean_wind.clone(), TurbulentField::load(p)?),
        None => cfg.wind_model(),
    }
}

fn run(cli: &Cli) -> Result<()> {
    let cfg = load_config(cli)?;
    match &cli.command {
        Command::GenWind { out } => {
            let field = synthesize_field(&cfg.turbulence)?;
            field.save(out)?;
            let (div, grad) = field.divergence_stats();
            println!("wrote {} (divergence rms {div:.3e}, gradient rms {grad:.3e})", out.display());
        }
        Command::Simulate {
            out_dir,
            wind,
            corpus,
        } => {
            let logs = if *corpus {
                simulate_corpus(
                    &cfg.turbulence,
                    &cfg.mean_wind,
                    &cfg.estimator.regimes,
                    &cfg.mission,
                    &cfg.vehicle,
                    &cfg.control,
                )?
            } else {
                let model = truth_wind(&cfg, wind.as_deref())?;
                run_mission(&cfg.mission, &model, &cfg.vehicle, &cfg.control, 0)?
            };
            save_logs(out_dir, &logs)?;
            let data = build_dataset_strided(&logs, cfg.estimator.net.window, cfg.estimator.dataset_stride)?;
            data.stats.save(&out_dir.join("dataset_stats.json"))?;
            println!("wrote {} flight logs to {}", logs.len(), out_dir.display());
        }
        Command::TrainEstimator { data, out } => {
            let logs = load_logs(data)?;
            let dataset = build_dataset_strided(&logs, cfg.estimator.net.window, cfg.estimator.dataset_stride)?;
            log::info!("training on {} windows from {} flights", dataset.len(), logs.len());
            let (net, history) = estimator::train(&dataset, &cfg.estimator.net, &cfg.estimator.train)?;
            net.save(out)?;
            write_json(&out.join("history.json"), &history)?;
            if let Some(best) = history.best() {
                println!(
                    "best epoch {}: train {:.4}, val {:.4}",
                    best.epoch, best.train_loss, best.val_loss
                );
            }
        }
        Command::Estimate {
            ckpt,
            flight,
            out,
            obs_out,
            stride,
            uas_id,
        } => {
            let log = FlightLog::load(flight, 0, *uas_id)?;
            let est: Box<dyn WindEstimator> = if ckpt == "oracle" {
                Box::new(DragOracle {
                    params: cfg.vehicle.clone(),
                })
            } else {
                Box::new(WindNet::load(Path::new(ckpt))?)
            };
            let estimates = est.estimate(&log, *stride)?;
            write_estimates(&log, &estimates, create(out)?)?;
            if let Some(p) = obs_out {
                ObsSet::from_flights(&[log], est.as_ref(), *stride, &cfg.pinn.domain)?.save(p)?;
            }
            println!("wrote {} estimates to {}", estimates.len(), out.display());
        }
        Command::TrainPinn { obs, out } => {
            let mut all = ObsSet::default();
            for p in obs {
                all.records.extend(ObsSet::load(p)?.records);
            }
            let (model, history) = train_pinn(&all, &cfg.pinn.domain, &cfg.pinn.train)?;
            model.save(out)?;
            write_json(&out.join("history.json"), &history)?;
            if let Some(best) = history.best() {
                println!(
                    "best epoch {}: data {:.4e}, divergence {:.4e}, total {:.4e}",
                    best.epoch, best.data, best.divergence, best.total
                );
            }
        }
        Command::Reconstruct {
            ckpt,
            slice,
            x,
            y,
            z,
            t,
            n,
            out,
        } => {
            let model = ReconModel::load(ckpt)?;
            let (x, y, z, t, n) = (*x, *y, *z, *t, *n);
            let spec = match slice {
                Slice::Xy => ProductSpec::Xy { z, t, nx: n, ny: n },
                Slice::Yz => ProductSpec::Yz { x, t, ny: n, nz: n },
                Slice::Zx => ProductSpec::Zx { y, t, nz: n, nx: n },
                Slice::Profile => ProductSpec::Profile { x, y, t, nz: n },
                Slice::Timeseries => ProductSpec::TimeSeries { x, y, z, nt: n },
            };
            extract_product(&model, &spec)?.save(out)?;
            println!("wrote {}", out.display());
        }
        Command::Evaluate {
            ckpt,
            flights,
            out,
            wind,
            products,
        } => {
            let model = ReconModel::load(ckpt)?;
            let logs = load_logs(flights)?;
            let report = MetricsReport {
                n_uas: logs.iter().map(|l| l.uas_id).collect::<std::collections::BTreeSet<_>>().len(),
                at_uas: at_uas_metrics(&model, &logs, cfg.pinn.obs_stride)?,
                grid: grid_metrics(&model, &cfg.mean_wind, cfg.eval.grid, cfg.eval.grid_times)?,
            };
            write_json(out, &report)?;
            println!(
                "at-UAS rmse N/E/D {:.3}/{:.3}/{:.3}, overall {:.3}; grid overall {:.3}",
                report.at_uas.rmse[0],
                report.at_uas.rmse[1],
                report.at_uas.rmse[2],
                report.overall_at_uas(),
                report.overall_grid()
            );
            if let (Some(grid), Some(dir)) = (wind, products) {
                ensure_dir(dir)?;
                let truth = truth_wind(&cfg, Some(grid))?;
                let specs = default_products(model.domain());
                let names = ["xy", "yz", "zx", "profile", "timeseries"];
                for (cmp, name) in compare_reference(&model, &truth, &specs)?.iter().zip(names) {
                    cmp.save(&dir.join(format!("{name}.csv")))?;
                    println!(
                        "{name}: rmse vs truth {:.3}, vs mean {:.3}",
                        cmp.vs_truth.overall, cmp.vs_mean.overall
                    );
                }
            }
        }
        Command::Sweep { out, counts } => {
            let counts = counts.clone().unwrap_or_else(|| cfg.eval.sweep_counts.clone());
            let rows = sweep(&cfg, &counts)?;
            write_sweep_csv(&rows, create(out)?)?;
            print!("{}", sweep_summary(&rows));
            if rows.iter().any(|r| r.outcome.is_err()) {
                return Err(Error::Numerical("one or more sweep rows failed".into()));
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    if let Some(n) = cli.threads {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n).build_global() {
            eprintln!("error: {e}");
            return ExitCode::from(2);
        }
    }
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}
