//! Swarm missions: reference trajectory, formation layout, the fixed-rate
//! simulation loop with decimated logging, label filtering and sliding
//! window datasets.

use std::io::{Read, Write};
use std::path::Path;

use nalgebra::Vector3;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::control::{ControlGains, Controller, ControllerState};
use crate::error::{Error, Result};
use crate::meanflow::{MeanWindParams, WindModel};
use crate::turbulence::{synthesize_field, TurbulenceSpec};
use crate::vehicle::{derivatives, step, VehicleParams, VehicleState};

/// Number of per-tick features fed to the estimator.
pub const N_FEATURES: usize = 11;

pub const FEATURE_NAMES: [&str; N_FEATURES] = [
    "VX", "VY", "VZ", "AX", "AY", "AZ", "Tcmd", "phi", "theta", "dX", "dY",
];

pub const CSV_HEADER: [&str; 18] = [
    "t", "X", "Y", "Z", "VX", "VY", "VZ", "AX", "AY", "AZ", "Tcmd", "phi", "theta", "dX", "dY",
    "UN", "UE", "UD",
];

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct MissionConfig {
    pub n_uas: usize,
    /// Formation spacing, m.
    pub spacing: f64,
    /// Formation center (North, East), m.
    pub center: [f64; 2],
    pub duration: f64,
    pub log_rate: f64,
    pub sim_rate: f64,
    /// Standard deviation of additive accelerometer noise, m/s².
    pub accel_noise: f64,
    /// Base seed; each vehicle derives its own stream from it.
    pub seed: u64,
    /// Wind realizations in a training corpus.
    pub realizations: usize,
}

impl Default for MissionConfig {
    fn default() -> Self {
        Self {
            n_uas: 9,
            spacing: 50.0,
            center: [0.0, 0.0],
            duration: 400.0,
            log_rate: 10.0,
            sim_rate: 100.0,
            accel_noise: 0.0,
            seed: 0,
            realizations: 12,
        }
    }
}

impl MissionConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_uas == 0 {
            return Err(Error::Config("n_uas must be at least 1".into()));
        }
        if !(self.duration > 0.0 && self.log_rate > 0.0 && self.sim_rate > 0.0) {
            return Err(Error::Config(
                "duration and rates must be positive".into(),
            ));
        }
        let ratio = self.sim_rate / self.log_rate;
        if (ratio - ratio.round()).abs() > 1e-9 || ratio.round() < 1.0 {
            return Err(Error::Config(format!(
                "sim_rate {} is not a multiple of log_rate {}",
                self.sim_rate, self.log_rate
            )));
        }
        if !(self.spacing.is_finite() && self.spacing >= 0.0) || !(self.accel_noise >= 0.0) {
            return Err(Error::Config(
                "spacing and accel_noise must be non-negative".into(),
            ));
        }
        Ok(())
    }

    fn decimation(&self) -> usize {
        (self.sim_rate / self.log_rate).round() as usize
    }

    /// Number of logged rows per flight.
    pub fn log_rows(&self) -> usize {
        (self.duration * self.log_rate).round() as usize
    }
}

/// Vertical profiling reference: hold, constant climb to 1000 m, hold.
pub fn reference_altitude(t: f64) -> f64 {
    if t < 10.0 {
        0.0
    } else if t < 350.0 {
        (t - 10.0) / 340.0 * 1000.0
    } else {
        1000.0
    }
}

/// Centered near-square grid, filled row-major; rows run along North and
/// columns along East. Extra grid slots are dropped.
pub fn swarm_layout(n_uas: usize, spacing: f64) -> Vec<[f64; 2]> {
    if n_uas == 0 {
        return Vec::new();
    }
    let cols = (n_uas as f64).sqrt().ceil() as usize;
    let rows = n_uas.div_ceil(cols);
    let offset = |i: usize, n: usize| (i as f64 - (n as f64 - 1.0) / 2.0) * spacing;
    (0..rows)
        .flat_map(|r| (0..cols).map(move |c| [offset(r, rows), offset(c, cols)]))
        .take(n_uas)
        .collect()
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LogRow {
    pub t: f64,
    pub position: [f64; 3],
    pub velocity: [f64; 3],
    pub accel: [f64; 3],
    pub thrust_cmd: f64,
    pub phi: f64,
    pub theta: f64,
    pub dx: f64,
    pub dy: f64,
    /// Ground-truth wind (N, E, D) at the vehicle.
    pub wind: [f64; 3],
}

impl LogRow {
    pub fn features(&self) -> [f64; N_FEATURES] {
        [
            self.velocity[0],
            self.velocity[1],
            self.velocity[2],
            self.accel[0],
            self.accel[1],
            self.accel[2],
            self.thrust_cmd,
            self.phi,
            self.theta,
            self.dx,
            self.dy,
        ]
    }

    fn to_record(self) -> [f64; 18] {
        let mut r = [0.0; 18];
        r[0] = self.t;
        r[1..4].copy_from_slice(&self.position);
        r[4..7].copy_from_slice(&self.velocity);
        r[7..10].copy_from_slice(&self.accel);
        r[10] = self.thrust_cmd;
        r[11] = self.phi;
        r[12] = self.theta;
        r[13] = self.dx;
        r[14] = self.dy;
        r[15..18].copy_from_slice(&self.wind);
        r
    }

    fn from_record(r: &[f64]) -> Self {
        Self {
            t: r[0],
            position: [r[1], r[2], r[3]],
            velocity: [r[4], r[5], r[6]],
            accel: [r[7], r[8], r[9]],
            thrust_cmd: r[10],
            phi: r[11],
            theta: r[12],
            dx: r[13],
            dy: r[14],
            wind: [r[15], r[16], r[17]],
        }
    }
}

/// One vehicle's logged flight.
#[derive(Clone, Debug, PartialEq)]
pub struct FlightLog {
    /// Wind realization this flight belongs to.
    pub flight_id: usize,
    pub uas_id: usize,
    /// Horizontal reference (North, East), m.
    pub reference: [f64; 2],
    pub rows: Vec<LogRow>,
}

/// Formats with nine significant digits, switching to exponent form for
/// very large or small magnitudes.
pub fn format_sig9(v: f64) -> String {
    if v == 0.0 || !v.is_finite() {
        return if v == 0.0 { "0".into() } else { v.to_string() };
    }
    let exp = v.abs().log10().floor() as i32;
    if (-5..=14).contains(&exp) {
        let decimals = (8 - exp).max(0) as usize;
        let s = format!("{v:.decimals$}");
        if s.contains('.') {
            s.trim_end_matches('0').trim_end_matches('.').to_string()
        } else {
            s
        }
    } else {
        format!("{v:.8e}")
    }
}

impl FlightLog {
    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut out = csv::Writer::from_writer(w);
        out.write_record(CSV_HEADER)?;
        for row in &self.rows {
            out.write_record(row.to_record().iter().map(|v| format_sig9(*v)))?;
        }
        out.flush().map_err(|e| Error::Format(e.to_string()))?;
        Ok(())
    }

    /// Reads a log written by [`FlightLog::write_csv`]. The reference is
    /// recovered from the first row as position minus tracking error.
    pub fn read_csv<R: Read>(r: R, flight_id: usize, uas_id: usize) -> Result<Self> {
        let mut rdr = csv::Reader::from_reader(r);
        let header = rdr.headers()?.clone();
        if header.iter().collect::<Vec<_>>() != CSV_HEADER {
            return Err(Error::Format(format!(
                "unexpected flight log header {:?}",
                header.iter().collect::<Vec<_>>()
            )));
        }
        let mut rows = Vec::new();
        for rec in rdr.records() {
            let rec = rec?;
            let vals: std::result::Result<Vec<f64>, _> =
                rec.iter().map(|s| s.trim().parse::<f64>()).collect();
            let vals = vals.map_err(|e| Error::Format(format!("bad number in flight log: {e}")))?;
            if vals.len() != CSV_HEADER.len() {
                return Err(Error::Format("flight log row has the wrong width".into()));
            }
            rows.push(LogRow::from_record(&vals));
        }
        let reference = rows
            .first()
            .map(|r| [r.position[0] - r.dx, r.position[1] - r.dy])
            .unwrap_or([0.0, 0.0]);
        Ok(Self {
            flight_id,
            uas_id,
            reference,
            rows,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
        self.write_csv(std::io::BufWriter::new(f))
    }

    pub fn load(path: &Path, flight_id: usize, uas_id: usize) -> Result<Self> {
        let f = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
        Self::read_csv(std::io::BufReader::new(f), flight_id, uas_id)
    }

    /// Median-filtered wind labels, one series per component.
    pub fn filtered_wind(&self, width: usize) -> Result<Vec<[f64; 3]>> {
        let comps: Vec<Vec<f64>> = (0..3)
            .map(|c| median_filter(&self.rows.iter().map(|r| r.wind[c]).collect::<Vec<_>>(), width))
            .collect::<Result<_>>()?;
        Ok((0..self.rows.len())
            .map(|i| [comps[0][i], comps[1][i], comps[2][i]])
            .collect())
    }
}

/// File name used for a flight log inside a log directory.
pub fn log_file_name(flight_id: usize, uas_id: usize) -> String {
    format!("flight_{flight_id:03}_uas_{uas_id:02}.csv")
}

fn parse_log_file_name(name: &str) -> Option<(usize, usize)> {
    let rest = name.strip_prefix("flight_")?.strip_suffix(".csv")?;
    let (f, u) = rest.split_once("_uas_")?;
    Some((f.parse().ok()?, u.parse().ok()?))
}

pub fn save_logs(dir: &Path, logs: &[FlightLog]) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    for log in logs {
        log.save(&dir.join(log_file_name(log.flight_id, log.uas_id)))?;
    }
    Ok(())
}

/// Loads every log in `dir` named by [`log_file_name`], ordered by flight
/// then vehicle. Other files are ignored.
pub fn load_logs(dir: &Path) -> Result<Vec<FlightLog>> {
    let mut found = Vec::new();
    for entry in std::fs::read_dir(dir).map_err(|e| Error::io(dir, e))? {
        let entry = entry.map_err(|e| Error::io(dir, e))?;
        if let Some(ids) = entry.file_name().to_str().and_then(parse_log_file_name) {
            found.push((ids, entry.path()));
        }
    }
    found.sort();
    if found.is_empty() {
        return Err(Error::Format(format!("no flight logs in {}", dir.display())));
    }
    found.iter().map(|((f, u), p)| FlightLog::load(p, *f, *u)).collect()
}

fn vehicle_seed(base: u64, flight_id: usize, uas_id: usize) -> u64 {
    base ^ (flight_id as u64)
        .wrapping_add(1)
        .wrapping_mul(0x9E37_79B9_7F4A_7C15)
        ^ (uas_id as u64).wrapping_add(1).wrapping_mul(0xD1B5_4A32_D192_ED03)
}

/// Simulates one vehicle holding `reference` while following the vertical
/// profile.
pub fn fly(
    config: &MissionConfig,
    wind: &WindModel,
    controller: &Controller,
    reference: [f64; 2],
    flight_id: usize,
    uas_id: usize,
) -> Result<FlightLog> {
    let params = &controller.params;
    let dt = 1.0 / config.sim_rate;
    let decimation = config.decimation();
    let n_rows = config.log_rows();
    let ticks = n_rows * decimation;
    let top = wind.top();
    let mut query = |p: &Vector3<f64>, t: f64| {
        wind.total_wind([p[0], p[1], p[2].clamp(0.0, top)], t)
    };
    let noise = if config.accel_noise > 0.0 {
        Some(Normal::new(0.0, config.accel_noise).map_err(|e| Error::Config(e.to_string()))?)
    } else {
        None
    };
    let mut rng = ChaCha8Rng::seed_from_u64(vehicle_seed(config.seed, flight_id, uas_id));

    let start = Vector3::new(reference[0], reference[1], reference_altitude(0.0));
    let mut state = VehicleState::at_rest(start, params.hover_speed());
    let mut cstate = ControllerState::default();
    let mut rows = Vec::with_capacity(n_rows);
    let fail = |t: f64, e: Error| {
        Error::Numerical(format!("vehicle {uas_id} (flight {flight_id}) at t = {t:.2} s: {e}"))
    };
    for tick in 0..ticks {
        let t = tick as f64 * dt;
        let z_ref = reference_altitude(t);
        let (out, next_c) = controller
            .update(&state, [reference[0], reference[1], z_ref], &cstate, dt)
            .map_err(|e| fail(t, e))?;
        cstate = next_c;
        if tick % decimation == 0 {
            let w = query(&state.position, t).map_err(|e| fail(t, e))?;
            let d = derivatives(&state, &out.rotor_cmd, w, params).map_err(|e| fail(t, e))?;
            let mut accel = [d.velocity[0], d.velocity[1], d.velocity[2]];
            if let Some(n) = &noise {
                for a in accel.iter_mut() {
                    *a += n.sample(&mut rng);
                }
            }
            rows.push(LogRow {
                t,
                position: state.position.into(),
                velocity: state.velocity.into(),
                accel,
                thrust_cmd: out.thrust,
                phi: state.attitude[0],
                theta: state.attitude[1],
                dx: state.position[0] - reference[0],
                dy: state.position[1] - reference[1],
                wind: w,
            });
        }
        state = step(&state, t, &out.rotor_cmd, &mut query, dt, params).map_err(|e| fail(t, e))?;
    }
    Ok(FlightLog {
        flight_id,
        uas_id,
        reference,
        rows,
    })
}

/// Flies every vehicle of the formation through the shared wind model.
pub fn run_mission(
    config: &MissionConfig,
    wind: &WindModel,
    vehicle: &VehicleParams,
    gains: &ControlGains,
    flight_id: usize,
) -> Result<Vec<FlightLog>> {
    config.validate()?;
    let controller = Controller::new(gains.clone(), vehicle.clone())?;
    let layout: Vec<[f64; 2]> = swarm_layout(config.n_uas, config.spacing)
        .into_iter()
        .map(|[n, e]| [n + config.center[0], e + config.center[1]])
        .collect();
    layout
        .par_iter()
        .enumerate()
        .map(|(id, r)| fly(config, wind, &controller, *r, flight_id, id))
        .collect()
}

/// Uniform sampling ranges for training-corpus wind regimes.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RegimeRanges {
    pub u_ref: [f64; 2],
    pub alpha: [f64; 2],
    pub gamma0: [f64; 2],
    pub kappa_veer: [f64; 2],
    pub sigma: [f64; 2],
    /// Gust amplitude as a fraction of `u_ref`.
    pub delta_u_frac: [f64; 2],
}

impl Default for RegimeRanges {
    fn default() -> Self {
        Self {
            u_ref: [1.0, 10.0],
            alpha: [0.1, 0.3],
            gamma0: [0.0, 360.0],
            kappa_veer: [0.0, 5.0],
            sigma: [0.1, 1.0],
            delta_u_frac: [0.0, 0.2],
        }
    }
}

/// A sampled wind regime: mean profile plus turbulence intensity.
#[derive(Clone, Debug, PartialEq)]
pub struct Regime {
    pub mean: MeanWindParams,
    pub sigma: f64,
}

impl RegimeRanges {
    pub fn sample(&self, rng: &mut ChaCha8Rng, template: &MeanWindParams) -> Regime {
        let mut draw = |r: [f64; 2]| {
            if r[1] > r[0] {
                rng.random_range(r[0]..r[1])
            } else {
                r[0]
            }
        };
        let u_ref = draw(self.u_ref);
        let alpha = draw(self.alpha);
        let gamma0 = draw(self.gamma0);
        let kappa_veer = draw(self.kappa_veer);
        let sigma = draw(self.sigma);
        let delta_u = draw(self.delta_u_frac) * u_ref;
        Regime {
            mean: MeanWindParams {
                u_ref,
                alpha,
                gamma0,
                kappa_veer,
                delta_u,
                ..template.clone()
            },
            sigma,
        }
    }
}

/// Generates `config.realizations` wind regimes and flies the formation
/// through each. Flight ids are realization indices.
pub fn simulate_corpus(
    turbulence: &TurbulenceSpec,
    mean_template: &MeanWindParams,
    ranges: &RegimeRanges,
    config: &MissionConfig,
    vehicle: &VehicleParams,
    gains: &ControlGains,
) -> Result<Vec<FlightLog>> {
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut logs = Vec::new();
    for r in 0..config.realizations {
        let regime = ranges.sample(&mut rng, mean_template);
        let spec = TurbulenceSpec {
            target_sigma: regime.sigma,
            rng_seed: rng.random(),
            ..turbulence.clone()
        };
        let wind = WindModel::new(regime.mean, synthesize_field(&spec)?)?;
        let cfg = MissionConfig {
            seed: rng.random(),
            ..config.clone()
        };
        logs.extend(run_mission(&cfg, &wind, vehicle, gains, r)?);
        log::info!("corpus realization {}/{} simulated", r + 1, config.realizations);
    }
    Ok(logs)
}

/// Centered running median; windows shrink symmetrically at the ends.
pub fn median_filter(series: &[f64], width: usize) -> Result<Vec<f64>> {
    if width == 0 || width % 2 == 0 {
        return Err(Error::Domain(format!("median filter width must be odd, got {width}")));
    }
    let half = width / 2;
    let n = series.len();
    let mut buf = Vec::with_capacity(width);
    Ok((0..n)
        .map(|i| {
            let h = half.min(i).min(n - 1 - i);
            buf.clear();
            buf.extend_from_slice(&series[i - h..=i + h]);
            buf.sort_by(|a, b| a.total_cmp(b));
            buf[h]
        })
        .collect())
}

/// z-score statistics stored next to a dataset.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DatasetStats {
    pub window: usize,
    pub feature_mean: Vec<f64>,
    pub feature_std: Vec<f64>,
    pub target_mean: [f64; 3],
    pub target_std: [f64; 3],
}

/// Standard deviations below this are replaced by 1.
const MIN_STD: f64 = 1e-9;

fn mean_std_floor(values: impl Iterator<Item = f64> + Clone) -> (f64, f64) {
    let n = values.clone().count() as f64;
    let mean = values.clone().sum::<f64>() / n;
    let var = values.map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
    let std = var.sqrt();
    (mean, if std > MIN_STD { std } else { 1.0 })
}

impl DatasetStats {
    pub fn normalize_features(&self, f: &[f64; N_FEATURES]) -> [f64; N_FEATURES] {
        std::array::from_fn(|j| (f[j] - self.feature_mean[j]) / self.feature_std[j])
    }

    pub fn normalize_target(&self, y: &[f64; 3]) -> [f64; 3] {
        std::array::from_fn(|c| (y[c] - self.target_mean[c]) / self.target_std[c])
    }

    pub fn denormalize_target(&self, y: &[f64; 3]) -> [f64; 3] {
        std::array::from_fn(|c| y[c] * self.target_std[c] + self.target_mean[c])
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let s = serde_json::to_string_pretty(self)?;
        std::fs::write(path, s).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let s = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Ok(serde_json::from_str(&s)?)
    }
}

/// One flight's normalized features and filtered labels.
#[derive(Clone, Debug)]
pub struct FlightSeries {
    pub flight_id: usize,
    pub uas_id: usize,
    pub times: Vec<f64>,
    pub features: Vec<[f64; N_FEATURES]>,
    /// Median-filtered wind in physical units.
    pub labels: Vec<[f64; 3]>,
}

/// Where a window comes from.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Provenance {
    pub series: usize,
    pub flight_id: usize,
    pub uas_id: usize,
    /// Index of the first row of the window; the target row is
    /// `start + window`.
    pub start: usize,
}

/// Sliding windows over normalized flight series. Windows are stored as
/// references and materialized on demand.
#[derive(Clone, Debug)]
pub struct SequenceDataset {
    pub stats: DatasetStats,
    pub series: Vec<FlightSeries>,
    pub windows: Vec<Provenance>,
}

/// Median-filter width applied to wind labels.
pub const LABEL_FILTER_WIDTH: usize = 21;

/// Builds the dataset with every admissible window (`stride = 1`).
pub fn build_dataset(logs: &[FlightLog], window: usize) -> Result<SequenceDataset> {
    build_dataset_strided(logs, window, 1)
}

/// Builds the dataset keeping every `stride`-th window of each flight.
/// Feature statistics cover every row of the usable logs; target
/// statistics cover the targets of the kept windows.
pub fn build_dataset_strided(
    logs: &[FlightLog],
    window: usize,
    stride: usize,
) -> Result<SequenceDataset> {
    if window == 0 || stride == 0 {
        return Err(Error::Config("window and stride must be positive".into()));
    }
    let usable: Vec<&FlightLog> = logs
        .iter()
        .filter(|l| {
            let ok = l.len() > window;
            if !ok {
                log::warn!(
                    "skipping flight {} vehicle {}: {} rows is not more than the window {}",
                    l.flight_id,
                    l.uas_id,
                    l.len(),
                    window
                );
            }
            ok
        })
        .collect();
    if usable.is_empty() {
        return Err(Error::Config(format!(
            "no flight log is longer than the window length {window}"
        )));
    }
    let filtered: Vec<Vec<[f64; 3]>> = usable
        .iter()
        .map(|l| l.filtered_wind(LABEL_FILTER_WIDTH))
        .collect::<Result<_>>()?;

    let mut windows = Vec::new();
    for (s, log) in usable.iter().enumerate() {
        for start in (0..log.len() - window).step_by(stride) {
            windows.push(Provenance {
                series: s,
                flight_id: log.flight_id,
                uas_id: log.uas_id,
                start,
            });
        }
    }

    let rows = || usable.iter().flat_map(|l| l.rows.iter());
    let mut feature_mean = Vec::with_capacity(N_FEATURES);
    let mut feature_std = Vec::with_capacity(N_FEATURES);
    for j in 0..N_FEATURES {
        let (m, s) = mean_std_floor(rows().map(move |r| r.features()[j]));
        feature_mean.push(m);
        feature_std.push(s);
    }
    let mut target_mean = [0.0; 3];
    let mut target_std = [1.0; 3];
    for c in 0..3 {
        let it = windows
            .iter()
            .map(|w| filtered[w.series][w.start + window][c]);
        let (m, s) = mean_std_floor(it);
        target_mean[c] = m;
        target_std[c] = s;
    }
    let stats = DatasetStats {
        window,
        feature_mean,
        feature_std,
        target_mean,
        target_std,
    };
    let series = usable
        .iter()
        .zip(filtered)
        .map(|(l, labels)| FlightSeries {
            flight_id: l.flight_id,
            uas_id: l.uas_id,
            times: l.rows.iter().map(|r| r.t).collect(),
            features: l
                .rows
                .iter()
                .map(|r| stats.normalize_features(&r.features()))
                .collect(),
            labels,
        })
        .collect();
    Ok(SequenceDataset {
        stats,
        series,
        windows,
    })
}

impl SequenceDataset {
    pub fn len(&self) -> usize {
        self.windows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.windows.is_empty()
    }

    pub fn window_len(&self) -> usize {
        self.stats.window
    }

    /// Normalized feature rows of window `i`.
    pub fn window(&self, i: usize) -> &[[f64; N_FEATURES]] {
        let p = self.windows[i];
        &self.series[p.series].features[p.start..p.start + self.stats.window]
    }

    /// Target of window `i` in physical units.
    pub fn target_raw(&self, i: usize) -> [f64; 3] {
        let p = self.windows[i];
        self.series[p.series].labels[p.start + self.stats.window]
    }

    /// Normalized target of window `i`.
    pub fn target(&self, i: usize) -> [f64; 3] {
        self.stats.normalize_target(&self.target_raw(i))
    }

    /// Copy with every label row permuted across all series. Features and
    /// statistics are untouched, so any input-target association is
    /// destroyed while the label distribution is kept.
    pub fn shuffled_labels(&self, seed: u64) -> Self {
        use rand::seq::SliceRandom;
        let mut pool: Vec<[f64; 3]> = self.series.iter().flat_map(|s| s.labels.iter().copied()).collect();
        pool.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
        let mut out = self.clone();
        let mut rest = pool.as_slice();
        for s in &mut out.series {
            let (head, tail) = rest.split_at(s.labels.len());
            s.labels.copy_from_slice(head);
            rest = tail;
        }
        out
    }

    /// Window indices whose flight id satisfies `keep`.
    pub fn indices_where(&self, keep: impl Fn(&Provenance) -> bool) -> Vec<usize> {
        (0..self.len()).filter(|i| keep(&self.windows[*i])).collect()
    }
}
