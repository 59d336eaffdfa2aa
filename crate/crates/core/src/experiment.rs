//! Experiment configuration, evaluation metrics, the formation-size sweep
//! and reference comparisons.

use std::io::Write;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::control::ControlGains;
use crate::error::{Error, Result};
use crate::estimator::{DragOracle, NetConfig, TrainConfig, WindEstimator, WindNet};
use crate::meanflow::{mean_wind, MeanWindParams, WindModel};
use crate::metrics::{evaluate, ComponentMetrics};
use crate::mission::{format_sig9, run_mission, FlightLog, MissionConfig, RegimeRanges, LABEL_FILTER_WIDTH};
use crate::pinn::{train_pinn, FieldModel, ObsSet, PinnConfig, PinnHistory, ProductSpec, ReconDomain, ReconModel};
use crate::turbulence::{synthesize_field, TurbulenceSpec, TurbulentField};
use crate::vehicle::VehicleParams;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EstimatorSection {
    pub net: NetConfig,
    pub train: TrainConfig,
    pub regimes: RegimeRanges,
    /// Keep every n-th window when building the training dataset.
    pub dataset_stride: usize,
}

impl Default for EstimatorSection {
    fn default() -> Self {
        Self {
            net: NetConfig::default(),
            train: TrainConfig::default(),
            regimes: RegimeRanges::default(),
            dataset_stride: 1,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PinnSection {
    pub domain: ReconDomain,
    pub train: PinnConfig,
    /// Use every n-th estimate of each flight as an observation.
    pub obs_stride: usize,
}

impl Default for PinnSection {
    fn default() -> Self {
        Self {
            domain: ReconDomain::default(),
            train: PinnConfig::default(),
            obs_stride: 4,
        }
    }
}

/// Source of the trajectory wind estimates fed to the reconstruction.
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EstimatorChoice {
    /// Drag-model inversion.
    #[default]
    Oracle,
    /// A trained network loaded from `eval.checkpoint`.
    Network,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EvalConfig {
    /// Domain grid nodes along x, y and z.
    pub grid: [usize; 3],
    /// Evaluation instants, evenly spaced over the time window including
    /// both ends.
    pub grid_times: usize,
    pub estimator: EstimatorChoice,
    pub checkpoint: Option<PathBuf>,
    pub sweep_counts: Vec<usize>,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self {
            grid: [21, 21, 41],
            grid_times: 5,
            estimator: EstimatorChoice::Oracle,
            checkpoint: None,
            sweep_counts: vec![4, 5, 6, 7, 9, 12],
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ExperimentConfig {
    /// When set, overrides every per-stage seed.
    pub seed: Option<u64>,
    pub turbulence: TurbulenceSpec,
    pub mean_wind: MeanWindParams,
    pub vehicle: VehicleParams,
    pub control: ControlGains,
    pub mission: MissionConfig,
    pub estimator: EstimatorSection,
    pub pinn: PinnSection,
    pub eval: EvalConfig,
}

impl ExperimentConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: Self = serde_json::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&text)
    }

    pub fn validate(&self) -> Result<()> {
        self.turbulence.validate()?;
        self.mean_wind.validate()?;
        self.vehicle.validate()?;
        self.control.validate()?;
        self.mission.validate()?;
        self.estimator.net.validate()?;
        self.estimator.train.validate()?;
        self.pinn.domain.validate()?;
        self.pinn.train.validate()?;
        if self.estimator.dataset_stride == 0 || self.pinn.obs_stride == 0 {
            return Err(Error::Config("strides must be positive".into()));
        }
        if self.eval.grid.contains(&0) || self.eval.grid_times == 0 {
            return Err(Error::Config("evaluation grid must be non-empty".into()));
        }
        if self.eval.sweep_counts.contains(&0) {
            return Err(Error::Config("sweep counts must be at least 1".into()));
        }
        if self.eval.estimator == EstimatorChoice::Network && self.eval.checkpoint.is_none() {
            return Err(Error::Config(
                "the network estimator needs eval.checkpoint".into(),
            ));
        }
        Ok(())
    }

    /// Applies the global seed, if any, to every stage.
    pub fn resolved(&self) -> Self {
        let mut c = self.clone();
        if let Some(s) = self.seed {
            c.turbulence.rng_seed = s;
            c.mission.seed = s.wrapping_add(1);
            c.estimator.train.seed = s.wrapping_add(2);
            c.pinn.train.seed = s.wrapping_add(3);
        }
        c
    }

    /// Ground-truth wind: the configured mean profile plus turbulence.
    pub fn wind_model(&self) -> Result<WindModel> {
        let field = if self.turbulence.target_sigma == 0.0 {
            TurbulentField::zeros(&self.turbulence)?
        } else {
            synthesize_field(&self.turbulence)?
        };
        WindModel::new(self.mean_wind.clone(), field)
    }

    pub fn estimator(&self) -> Result<Box<dyn WindEstimator>> {
        match self.eval.estimator {
            EstimatorChoice::Oracle => Ok(Box::new(DragOracle {
                params: self.vehicle.clone(),
            })),
            EstimatorChoice::Network => {
                let path = self.eval.checkpoint.as_ref().ok_or_else(|| {
                    Error::Config("the network estimator needs eval.checkpoint".into())
                })?;
                Ok(Box::new(WindNet::load(path)?))
            }
        }
    }
}

/// Evaluation of one reconstruction.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub n_uas: usize,
    /// Reconstruction against the true wind at logged vehicle positions.
    pub at_uas: ComponentMetrics,
    /// Reconstruction against the turbulence-free mean field on the
    /// domain grid.
    pub grid: ComponentMetrics,
}

impl MetricsReport {
    pub fn overall_at_uas(&self) -> f64 {
        self.at_uas.overall
    }

    pub fn overall_grid(&self) -> f64 {
        self.grid.overall
    }
}

fn linspace(b: [f64; 2], n: usize) -> Vec<f64> {
    if n == 1 {
        return vec![0.5 * (b[0] + b[1])];
    }
    (0..n)
        .map(|i| b[0] + (b[1] - b[0]) * i as f64 / (n - 1) as f64)
        .collect()
}

/// Evaluation grid over the domain, times slowest and z fastest.
pub fn grid_points(domain: &ReconDomain, grid: [usize; 3], times: usize) -> Vec<[f64; 4]> {
    let xs = linspace(domain.x, grid[0]);
    let ys = linspace(domain.y, grid[1]);
    let zs = linspace(domain.z, grid[2]);
    let mut out = Vec::with_capacity(times * grid.iter().product::<usize>());
    for t in linspace(domain.t, times) {
        for x in &xs {
            for y in &ys {
                for z in &zs {
                    out.push([*x, *y, *z, t]);
                }
            }
        }
    }
    out
}

/// Reconstruction error against the mean wind on the evaluation grid.
pub fn grid_metrics(
    model: &dyn FieldModel,
    mean: &MeanWindParams,
    grid: [usize; 3],
    times: usize,
) -> Result<ComponentMetrics> {
    let pts = grid_points(model.domain(), grid, times);
    let pred = model.query(&pts)?;
    let truth = pts
        .iter()
        .map(|p| mean_wind(p[2], mean, p[3]))
        .collect::<Result<Vec<_>>>()?;
    evaluate(&pred, &truth)
}

/// Reconstruction error against the logged true wind at every `stride`-th
/// in-domain row of each flight.
pub fn at_uas_metrics(model: &dyn FieldModel, logs: &[FlightLog], stride: usize) -> Result<ComponentMetrics> {
    let d = model.domain();
    let mut pts = Vec::new();
    let mut truth = Vec::new();
    for log in logs {
        for row in log.rows.iter().step_by(stride.max(1)) {
            let p = [row.position[0], row.position[1], row.position[2], row.t];
            if d.contains(&p) {
                pts.push(p);
                truth.push(row.wind);
            }
        }
    }
    let pred = model.query(&pts)?;
    evaluate(&pred, &truth)
}

/// Everything produced by one reconstruction run.
pub struct ReconstructionRun {
    pub logs: Vec<FlightLog>,
    pub obs: ObsSet,
    pub model: ReconModel,
    pub history: PinnHistory,
    pub report: MetricsReport,
}

/// Flies `n_uas` vehicles through `wind`, estimates the wind along their
/// tracks, fits the reconstruction and scores it.
pub fn run_reconstruction(
    config: &ExperimentConfig,
    wind: &WindModel,
    n_uas: usize,
    estimator: &dyn WindEstimator,
) -> Result<ReconstructionRun> {
    let mission = MissionConfig {
        n_uas,
        ..config.mission.clone()
    };
    let logs = run_mission(&mission, wind, &config.vehicle, &config.control, 0)?;
    let obs = ObsSet::from_flights(&logs, estimator, config.pinn.obs_stride, &config.pinn.domain)?;
    let (model, history) = train_pinn(&obs, &config.pinn.domain, &config.pinn.train)?;
    let report = MetricsReport {
        n_uas,
        at_uas: at_uas_metrics(&model, &logs, config.pinn.obs_stride)?,
        grid: grid_metrics(&model, &wind.mean, config.eval.grid, config.eval.grid_times)?,
    };
    Ok(ReconstructionRun {
        logs,
        obs,
        model,
        history,
        report,
    })
}

/// Published reconstruction RMSEs (N, E, D, overall) by vehicle count,
/// kept for annotation only.
pub const REFERENCE_TABLE: [(usize, [f64; 4]); 6] = [
    (4, [0.111, 0.117, 0.078, 0.125]),
    (5, [0.114, 0.092, 0.064, 0.118]),
    (6, [0.149, 0.095, 0.098, 0.144]),
    (7, [0.099, 0.109, 0.070, 0.128]),
    (9, [0.105, 0.100, 0.076, 0.151]),
    (12, [0.149, 0.151, 0.095, 0.154]),
];

pub fn reference_row(n_uas: usize) -> Option<[f64; 4]> {
    REFERENCE_TABLE.iter().find(|(n, _)| *n == n_uas).map(|(_, v)| *v)
}

#[derive(Clone, Debug)]
pub struct SweepRow {
    pub n_uas: usize,
    /// The failure message when a stage aborted.
    pub outcome: std::result::Result<MetricsReport, String>,
}

/// Runs one reconstruction per vehicle count in the same wind. A failing
/// row is recorded and the remaining rows still run.
pub fn sweep(config: &ExperimentConfig, counts: &[usize]) -> Result<Vec<SweepRow>> {
    let config = config.resolved();
    config.validate()?;
    let wind = config.wind_model()?;
    let estimator = config.estimator()?;
    Ok(counts
        .iter()
        .map(|&n| {
            let outcome = if n == 0 {
                Err("vehicle count must be at least 1".to_string())
            } else {
                run_reconstruction(&config, &wind, n, estimator.as_ref())
                    .map(|r| r.report)
                    .map_err(|e| e.to_string())
            };
            if let Err(e) = &outcome {
                log::error!("sweep row with {n} vehicles failed: {e}");
            }
            SweepRow { n_uas: n, outcome }
        })
        .collect())
}

pub const SWEEP_HEADER: [&str; 6] = ["n_uas", "rmse_n", "rmse_e", "rmse_d", "overall_at_uas", "overall_grid"];

/// Writes the sweep table; failed rows carry `NaN`.
pub fn write_sweep_csv<W: Write>(rows: &[SweepRow], w: W) -> Result<()> {
    let mut out = csv::Writer::from_writer(w);
    out.write_record(SWEEP_HEADER)?;
    for row in rows {
        let vals = match &row.outcome {
            Ok(r) => [r.at_uas.rmse[0], r.at_uas.rmse[1], r.at_uas.rmse[2], r.overall_at_uas(), r.overall_grid()],
            Err(_) => [f64::NAN; 5],
        };
        let mut rec = vec![row.n_uas.to_string()];
        rec.extend(vals.iter().map(|v| format_sig9(*v)));
        out.write_record(rec)?;
    }
    out.flush().map_err(|e| Error::Format(e.to_string()))?;
    Ok(())
}

/// Human-readable sweep summary with the published values alongside.
pub fn sweep_summary(rows: &[SweepRow]) -> String {
    let mut s = String::from(
        "n_uas  rmse_n  rmse_e  rmse_d  at_uas  grid    | published n/e/d/overall\n",
    );
    for row in rows {
        let published = reference_row(row.n_uas)
            .map(|r| format!("{:.3}/{:.3}/{:.3}/{:.3}", r[0], r[1], r[2], r[3]))
            .unwrap_or_else(|| "-".into());
        match &row.outcome {
            Ok(r) => s.push_str(&format!(
                "{:<6} {:.3}   {:.3}   {:.3}   {:.3}   {:.3}   | {published}\n",
                row.n_uas,
                r.at_uas.rmse[0],
                r.at_uas.rmse[1],
                r.at_uas.rmse[2],
                r.overall_at_uas(),
                r.overall_grid()
            )),
            Err(e) => s.push_str(&format!("{:<6} failed: {e} | {published}\n", row.n_uas)),
        }
    }
    s.push_str(
        "at_uas: RMS error-vector magnitude against the true wind at logged positions.\n\
         grid: the same against the mean wind on the domain grid.\n\
         The published overall column cannot be derived from its own component columns \
         by any standard definition; both computed variants are listed instead.\n",
    );
    s
}

/// Reconstruction, truth and mean reference sampled on one product.
#[derive(Clone, Debug)]
pub struct Comparison {
    pub spec: ProductSpec,
    pub points: Vec<[f64; 4]>,
    pub reconstruction: Vec<[f64; 3]>,
    pub truth: Vec<[f64; 3]>,
    pub mean: Vec<[f64; 3]>,
    pub vs_truth: ComponentMetrics,
    pub vs_mean: ComponentMetrics,
}

impl Comparison {
    /// Columns: coordinates, reconstruction, truth, mean reference and the
    /// residual against the truth.
    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut out = csv::Writer::from_writer(w);
        out.write_record([
            "x", "y", "z", "t", "UN", "UE", "UD", "UN_ref", "UE_ref", "UD_ref", "UN_mean", "UE_mean",
            "UD_mean", "dUN", "dUE", "dUD",
        ])?;
        for i in 0..self.points.len() {
            let r = self.reconstruction[i];
            let t = self.truth[i];
            let res = [r[0] - t[0], r[1] - t[1], r[2] - t[2]];
            let vals = self.points[i]
                .iter()
                .chain(&r)
                .chain(&t)
                .chain(&self.mean[i])
                .chain(&res)
                .map(|v| format_sig9(*v));
            out.write_record(vals)?;
        }
        out.flush().map_err(|e| Error::Format(e.to_string()))?;
        Ok(())
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
        self.write_csv(std::io::BufWriter::new(f))
    }
}

pub fn compare_reference(model: &dyn FieldModel, wind: &WindModel, specs: &[ProductSpec]) -> Result<Vec<Comparison>> {
    specs
        .iter()
        .map(|spec| {
            let points = spec.points(model.domain());
            let reconstruction = model.query(&points)?;
            let truth = points
                .iter()
                .map(|p| wind.total_wind([p[0], p[1], p[2]], p[3]))
                .collect::<Result<Vec<_>>>()?;
            let mean = points
                .iter()
                .map(|p| wind.mean_only([p[0], p[1], p[2]], p[3]))
                .collect::<Result<Vec<_>>>()?;
            Ok(Comparison {
                spec: spec.clone(),
                vs_truth: evaluate(&reconstruction, &truth)?,
                vs_mean: evaluate(&reconstruction, &mean)?,
                points,
                reconstruction,
                truth,
                mean,
            })
        })
        .collect()
}

pub const ESTIMATE_HEADER: [&str; 7] = ["t", "UN_hat", "UE_hat", "UD_hat", "UN", "UE", "UD"];

/// Writes estimates along one flight next to the filtered logged wind.
pub fn write_estimates<W: Write>(log: &FlightLog, estimates: &[(usize, [f64; 3])], w: W) -> Result<()> {
    let labels = log.filtered_wind(LABEL_FILTER_WIDTH)?;
    let mut out = csv::Writer::from_writer(w);
    out.write_record(ESTIMATE_HEADER)?;
    for (row, est) in estimates {
        let truth = labels
            .get(*row)
            .ok_or_else(|| Error::Domain(format!("estimate row {row} is outside the flight")))?;
        let vals = std::iter::once(&log.rows[*row].t).chain(est).chain(truth);
        out.write_record(vals.map(|v| format_sig9(*v)))?;
    }
    out.flush().map_err(|e| Error::Format(e.to_string()))?;
    Ok(())
}
