//! Recurrent local-wind estimator and the drag-inversion baseline.
//!
//! The network reads a window of normalized flight features and predicts
//! the normalized NED wind at the sample right after the window. Two
//! stacked bidirectional LSTM layers feed a small dense head.

use std::path::Path;
use std::time::Instant;

use nalgebra::Vector3;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use swarmwind_autodiff::{
    clip_global_norm, AdamState, Axis, ParamId, ParamStore, ReduceOnPlateau, Tape, Tensor, Var,
};

use crate::checkpoint;
use crate::error::{Error, Result};
use crate::metrics::{evaluate, ComponentMetrics};
use crate::mission::{DatasetStats, FlightLog, LogRow, SequenceDataset, LABEL_FILTER_WIDTH, N_FEATURES};
use crate::vehicle::{body_z, VehicleParams};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct NetConfig {
    pub hidden: usize,
    pub head: usize,
    pub dropout: f64,
    pub window: usize,
}

impl Default for NetConfig {
    fn default() -> Self {
        Self {
            hidden: 48,
            head: 64,
            dropout: 0.2,
            window: 40,
        }
    }
}

impl NetConfig {
    /// Hidden size 256, head 256.
    pub fn full_scale() -> Self {
        Self {
            hidden: 256,
            head: 256,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.hidden == 0 || self.head == 0 || self.window == 0 {
            return Err(Error::Config("network sizes must be positive".into()));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(Error::Config(format!("dropout {} outside [0, 1)", self.dropout)));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    /// Weights of the N, E and D squared errors.
    pub loss_weights: [f64; 3],
    pub lr: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub clip_norm: f64,
    /// Fraction of flights held out for validation.
    pub val_fraction: f64,
    pub seed: u64,
    /// Training windows drawn per epoch; 0 uses all of them.
    pub samples_per_epoch: usize,
    /// Validation windows evaluated per epoch; 0 uses all of them.
    pub val_samples: usize,
    pub plateau_patience: usize,
    pub plateau_factor: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            loss_weights: [1.0, 1.0, 0.3],
            lr: 2e-3,
            batch_size: 32,
            epochs: 20,
            clip_norm: 1.0,
            val_fraction: 0.2,
            seed: 0,
            samples_per_epoch: 4096,
            val_samples: 2048,
            plateau_patience: 3,
            plateau_factor: 0.5,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.loss_weights.iter().any(|w| !(*w > 0.0)) {
            return Err(Error::Config("loss weights must be positive".into()));
        }
        if !(self.val_fraction > 0.0 && self.val_fraction < 1.0) {
            return Err(Error::Config(format!(
                "validation fraction {} outside (0, 1)",
                self.val_fraction
            )));
        }
        if !(self.lr > 0.0) || self.batch_size == 0 || self.epochs == 0 || !(self.clip_norm > 0.0) {
            return Err(Error::Config(
                "lr, batch size, epochs and clip norm must be positive".into(),
            ));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug)]
struct LstmIds {
    wx: ParamId,
    wh: ParamId,
    b: ParamId,
}

#[derive(Clone, Debug)]
struct Layout {
    /// `[layer][direction]`
    lstm: [[LstmIds; 2]; 2],
    w1: ParamId,
    b1: ParamId,
    w2: ParamId,
    b2: ParamId,
}

fn build_params(config: &NetConfig, rng: &mut ChaCha8Rng) -> (ParamStore, Layout) {
    let h = config.hidden;
    let mut store = ParamStore::new();
    let mut uniform = |rows: usize, cols: usize, bound: f64| {
        let v = (0..rows * cols).map(|_| rng.random_range(-bound..bound)).collect();
        Tensor::from_vec(rows, cols, v).expect("shape")
    };
    let k = 1.0 / (h as f64).sqrt();
    let mut lstm = Vec::new();
    for layer in 0..2 {
        let input = if layer == 0 { N_FEATURES } else { 2 * h };
        let mut dirs = Vec::new();
        for dir in ["fwd", "bwd"] {
            let wx = store.add(format!("lstm{layer}.{dir}.wx"), uniform(input, 4 * h, k));
            let wh = store.add(format!("lstm{layer}.{dir}.wh"), uniform(h, 4 * h, k));
            let mut bias = uniform(1, 4 * h, k);
            // Forget gate starts open.
            bias.values_mut()[h..2 * h].iter_mut().for_each(|v| *v += 1.0);
            let b = store.add(format!("lstm{layer}.{dir}.b"), bias);
            dirs.push(LstmIds { wx, wh, b });
        }
        lstm.push([dirs[0], dirs[1]]);
    }
    let k1 = (6.0 / (2 * h + config.head) as f64).sqrt();
    let w1 = store.add("head.w1", uniform(2 * h, config.head, k1));
    let b1 = store.add("head.b1", Tensor::zeros(1, config.head));
    let k2 = (6.0 / (config.head + 3) as f64).sqrt();
    let w2 = store.add("head.w2", uniform(config.head, 3, k2));
    let b2 = store.add("head.b2", Tensor::zeros(1, 3));
    let layout = Layout {
        lstm: [lstm[0], lstm[1]],
        w1,
        b1,
        w2,
        b2,
    };
    (store, layout)
}

/// Forward-pass mode. Dropout masks are drawn only in training.
pub enum Mode<'a> {
    Eval,
    Train(&'a mut ChaCha8Rng),
}

/// Bidirectional LSTM wind estimator.
#[derive(Clone, Debug)]
pub struct WindNet {
    pub config: NetConfig,
    pub stats: DatasetStats,
    params: ParamStore,
    layout: Layout,
}

#[derive(Serialize, Deserialize)]
struct WindNetManifest {
    config: NetConfig,
    stats: DatasetStats,
}

/// One LSTM cell step; returns `(h, c)`.
fn lstm_step(tape: &mut Tape, z: Var, c: Option<Var>, h: usize) -> Result<(Var, Var)> {
    let gi = tape.slice(z, Axis::Cols, 0, h)?;
    let gf = tape.slice(z, Axis::Cols, h, 2 * h)?;
    let gg = tape.slice(z, Axis::Cols, 2 * h, 3 * h)?;
    let go = tape.slice(z, Axis::Cols, 3 * h, 4 * h)?;
    let i = tape.sigmoid(gi);
    let g = tape.tanh(gg);
    let o = tape.sigmoid(go);
    let ig = tape.mul(i, g)?;
    let c_new = match c {
        Some(c) => {
            let f = tape.sigmoid(gf);
            let fc = tape.mul(f, c)?;
            tape.add(fc, ig)?
        }
        None => ig,
    };
    let tc = tape.tanh(c_new);
    let h_new = tape.mul(o, tc)?;
    Ok((h_new, c_new))
}

impl WindNet {
    pub fn new(config: NetConfig, stats: DatasetStats, seed: u64) -> Result<Self> {
        config.validate()?;
        if stats.window != config.window {
            return Err(Error::Config(format!(
                "dataset window {} differs from network window {}",
                stats.window, config.window
            )));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (params, layout) = build_params(&config, &mut rng);
        Ok(Self {
            config,
            stats,
            params,
            layout,
        })
    }

    pub fn params(&self) -> &ParamStore {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamStore {
        &mut self.params
    }

    /// One direction of one layer over a time-major `(L·B) x in` input.
    /// Returns hidden states indexed by time.
    fn run_direction(
        &self,
        tape: &mut Tape,
        input: Var,
        ids: LstmIds,
        batch: usize,
        reverse: bool,
    ) -> Result<Vec<Var>> {
        let h = self.config.hidden;
        let len = self.config.window;
        let wx = tape.param(&self.params, ids.wx);
        let wh = tape.param(&self.params, ids.wh);
        let b = tape.param(&self.params, ids.b);
        let proj = tape.matmul(input, wx)?;
        let proj = tape.add(proj, b)?;
        let mut out = vec![None; len];
        let mut state: Option<(Var, Var)> = None;
        for step in 0..len {
            let t = if reverse { len - 1 - step } else { step };
            let mut z = tape.slice(proj, Axis::Rows, t * batch, (t + 1) * batch)?;
            if let Some((hp, _)) = state {
                let rec = tape.matmul(hp, wh)?;
                z = tape.add(z, rec)?;
            }
            let next = lstm_step(tape, z, state.map(|s| s.1), h)?;
            out[t] = Some(next.0);
            state = Some(next);
        }
        Ok(out.into_iter().map(|v| v.expect("every step visited")).collect())
    }

    /// Records the forward pass for a batch of normalized windows and
    /// returns the `B x 3` normalized prediction.
    pub fn forward(
        &self,
        tape: &mut Tape,
        windows: &[&[[f64; N_FEATURES]]],
        mode: Mode<'_>,
    ) -> Result<Var> {
        let batch = windows.len();
        let len = self.config.window;
        if batch == 0 {
            return Err(Error::Domain("empty batch".into()));
        }
        if let Some(w) = windows.iter().find(|w| w.len() != len) {
            return Err(Error::Domain(format!(
                "window has {} rows, expected {len}",
                w.len()
            )));
        }
        let mut flat = Vec::with_capacity(len * batch * N_FEATURES);
        for t in 0..len {
            for w in windows {
                flat.extend_from_slice(&w[t]);
            }
        }
        let mut input = tape.input(Tensor::from_vec(len * batch, N_FEATURES, flat)?);
        let mut finals = (input, input);
        for layer in 0..2 {
            let [fwd_ids, bwd_ids] = self.layout.lstm[layer];
            let fwd = self.run_direction(tape, input, fwd_ids, batch, false)?;
            let bwd = self.run_direction(tape, input, bwd_ids, batch, true)?;
            finals = (fwd[len - 1], bwd[0]);
            if layer == 0 {
                let steps: Vec<Var> = fwd
                    .iter()
                    .zip(&bwd)
                    .map(|(f, b)| tape.concat(&[*f, *b], Axis::Cols))
                    .collect::<std::result::Result<_, _>>()?;
                input = tape.concat(&steps, Axis::Rows)?;
            }
        }
        let last = tape.concat(&[finals.0, finals.1], Axis::Cols)?;
        let w1 = tape.param(&self.params, self.layout.w1);
        let b1 = tape.param(&self.params, self.layout.b1);
        let w2 = tape.param(&self.params, self.layout.w2);
        let b2 = tape.param(&self.params, self.layout.b2);
        let hidden = tape.matmul(last, w1)?;
        let hidden = tape.add(hidden, b1)?;
        let mut hidden = tape.relu(hidden);
        if let Mode::Train(rng) = mode {
            let p = self.config.dropout;
            if p > 0.0 {
                let keep = 1.0 / (1.0 - p);
                let mask: Vec<f64> = (0..batch * self.config.head)
                    .map(|_| if rng.random::<f64>() < p { 0.0 } else { keep })
                    .collect();
                let mask = tape.input(Tensor::from_vec(batch, self.config.head, mask)?);
                hidden = tape.mul(hidden, mask)?;
            }
        }
        let out = tape.matmul(hidden, w2)?;
        Ok(tape.add(out, b2)?)
    }

    pub fn save(&self, dir: &Path) -> Result<()> {
        let manifest = WindNetManifest {
            config: self.config.clone(),
            stats: self.stats.clone(),
        };
        checkpoint::save(dir, "windnet", &manifest, &self.params)
    }

    pub fn load(dir: &Path) -> Result<Self> {
        let (net, params) = checkpoint::load(dir, "windnet", |m: WindNetManifest| {
            let net = WindNet::new(m.config, m.stats, 0)?;
            let params = net.params.clone();
            Ok((net, params))
        })?;
        Ok(Self { params, ..net })
    }
}

/// A model that maps normalized windows to normalized wind.
pub trait NormalizedModel: Sync {
    fn stats(&self) -> &DatasetStats;
    fn forward_normalized(&self, windows: &[&[[f64; N_FEATURES]]]) -> Result<Vec<[f64; 3]>>;
}

const INFERENCE_BATCH: usize = 64;

impl NormalizedModel for WindNet {
    fn stats(&self) -> &DatasetStats {
        &self.stats
    }

    fn forward_normalized(&self, windows: &[&[[f64; N_FEATURES]]]) -> Result<Vec<[f64; 3]>> {
        let mut out = Vec::with_capacity(windows.len());
        for chunk in windows.chunks(INFERENCE_BATCH) {
            let mut tape = Tape::new();
            let y = self.forward(&mut tape, chunk, Mode::Eval)?;
            out.extend(tape.value(y).chunks_exact(3).map(|c| [c[0], c[1], c[2]]));
        }
        Ok(out)
    }
}

/// `Σ_c w_c (pred_c − target_c)²`, averaged over the batch.
pub fn weighted_mse(tape: &mut Tape, pred: Var, target: Var, weights: [f64; 3]) -> Result<Var> {
    let rows = tape.shape(pred).0;
    let diff = tape.sub(pred, target)?;
    let sq = tape.square(diff);
    let w = tape.input(Tensor::from_vec(1, 3, weights.to_vec())?);
    let weighted = tape.mul(sq, w)?;
    let total = tape.sum(weighted);
    Ok(tape.scale(total, 1.0 / rows as f64))
}

/// Plain-value counterpart of [`weighted_mse`].
pub fn weighted_mse_values(pred: &[[f64; 3]], target: &[[f64; 3]], weights: [f64; 3]) -> f64 {
    let total: f64 = pred
        .iter()
        .zip(target)
        .map(|(p, t)| (0..3).map(|c| weights[c] * (p[c] - t[c]).powi(2)).sum::<f64>())
        .sum();
    total / pred.len().max(1) as f64
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_loss: f64,
    pub lr: f64,
    pub seconds: f64,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainHistory {
    pub epochs: Vec<EpochRecord>,
    pub best_epoch: usize,
}

impl TrainHistory {
    pub fn best(&self) -> Option<&EpochRecord> {
        self.epochs.get(self.best_epoch)
    }
}

/// Splits series indices into (train, validation) by whole flights.
fn split_flights(n_series: usize, val_fraction: f64, rng: &mut ChaCha8Rng) -> Result<(Vec<usize>, Vec<usize>)> {
    if n_series < 2 {
        return Err(Error::Config(
            "training needs at least two flights for a validation split".into(),
        ));
    }
    let mut order: Vec<usize> = (0..n_series).collect();
    order.shuffle(rng);
    let n_val = ((n_series as f64 * val_fraction).round() as usize).clamp(1, n_series - 1);
    let val = order[..n_val].to_vec();
    let train = order[n_val..].to_vec();
    Ok((train, val))
}

fn evenly_spaced(idx: &[usize], count: usize) -> Vec<usize> {
    if count == 0 || count >= idx.len() {
        return idx.to_vec();
    }
    (0..count).map(|k| idx[k * idx.len() / count]).collect()
}

fn batch_loss(
    net: &WindNet,
    data: &SequenceDataset,
    idx: &[usize],
    weights: [f64; 3],
) -> Result<f64> {
    let mut total = 0.0;
    for chunk in idx.chunks(INFERENCE_BATCH) {
        let windows: Vec<_> = chunk.iter().map(|i| data.window(*i)).collect();
        let pred = net.forward_normalized(&windows)?;
        let target: Vec<_> = chunk.iter().map(|i| data.target(*i)).collect();
        total += weighted_mse_values(&pred, &target, weights) * chunk.len() as f64;
    }
    Ok(total / idx.len().max(1) as f64)
}

/// Trains a fresh network. Returns the parameters of the epoch with the
/// lowest validation loss.
pub fn train(
    data: &SequenceDataset,
    net_config: &NetConfig,
    config: &TrainConfig,
) -> Result<(WindNet, TrainHistory)> {
    config.validate()?;
    if data.is_empty() {
        return Err(Error::Config("dataset has no windows".into()));
    }
    let mut net = WindNet::new(net_config.clone(), data.stats.clone(), config.seed)?;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed ^ 0x005E_ED0F_7EA1);
    let (train_series, val_series) = split_flights(data.series.len(), config.val_fraction, &mut rng)?;
    let in_set = |set: &[usize]| data.indices_where(|p| set.contains(&p.series));
    let train_idx = in_set(&train_series);
    let val_idx = evenly_spaced(&in_set(&val_series), config.val_samples);
    if train_idx.is_empty() || val_idx.is_empty() {
        return Err(Error::Config("flight split left an empty partition".into()));
    }
    log::info!(
        "training on {} windows from {} flights, validating on {} windows from {} flights",
        train_idx.len(),
        train_series.len(),
        val_idx.len(),
        val_series.len()
    );

    let mut adam = AdamState::new(&net.params, config.lr);
    let mut plateau = ReduceOnPlateau::new(config.plateau_factor, config.plateau_patience);
    let mut history = TrainHistory::default();
    let mut best = (f64::INFINITY, net.params.flat_values());
    let mut order = train_idx.clone();
    let start = Instant::now();
    for epoch in 0..config.epochs {
        order.shuffle(&mut rng);
        let take = if config.samples_per_epoch == 0 {
            order.len()
        } else {
            config.samples_per_epoch.min(order.len())
        };
        let mut sum = 0.0;
        for (b, chunk) in order[..take].chunks(config.batch_size).enumerate() {
            let windows: Vec<_> = chunk.iter().map(|i| data.window(*i)).collect();
            let target: Vec<f64> = chunk.iter().flat_map(|i| data.target(*i)).collect();
            net.params.zero_grad();
            let mut tape = Tape::new();
            let pred = net.forward(&mut tape, &windows, Mode::Train(&mut rng))?;
            let target = tape.input(Tensor::from_vec(chunk.len(), 3, target)?);
            let loss = weighted_mse(&mut tape, pred, target, config.loss_weights)?;
            let value = tape.scalar_value(loss);
            if !value.is_finite() {
                return Err(Error::Numerical(format!(
                    "non-finite training loss at epoch {epoch}, batch {b} (lr {:.3e})",
                    adam.lr
                )));
            }
            tape.backward(loss, &mut net.params)?;
            clip_global_norm(&mut net.params, config.clip_norm)?;
            adam.step(&mut net.params)?;
            sum += value * chunk.len() as f64;
        }
        let train_loss = sum / take as f64;
        let val_loss = batch_loss(&net, data, &val_idx, config.loss_weights)?;
        if !val_loss.is_finite() {
            return Err(Error::Numerical(format!(
                "non-finite validation loss at epoch {epoch}"
            )));
        }
        history.epochs.push(EpochRecord {
            epoch,
            train_loss,
            val_loss,
            lr: adam.lr,
            seconds: start.elapsed().as_secs_f64(),
        });
        log::info!("epoch {epoch}: train {train_loss:.4} val {val_loss:.4} lr {:.2e}", adam.lr);
        if val_loss < best.0 {
            best = (val_loss, net.params.flat_values());
            history.best_epoch = epoch;
        }
        plateau.observe(val_loss, &mut adam.lr);
    }
    net.params.load_flat(&best.1)?;
    Ok((net, history))
}

/// Windowed predictions on one flight, aligned to target rows.
#[derive(Clone, Debug)]
pub struct FlightPrediction {
    /// Log row index of each target.
    pub rows: Vec<usize>,
    pub times: Vec<f64>,
    pub predicted: Vec<[f64; 3]>,
    /// Median-filtered logged wind at the target rows.
    pub truth: Vec<[f64; 3]>,
    pub metrics: ComponentMetrics,
}

/// Runs `model` over every `stride`-th window of `log` and scores the
/// predictions against the filtered labels.
pub fn predict_flight<M: NormalizedModel + ?Sized>(
    model: &M,
    log: &FlightLog,
    stride: usize,
) -> Result<FlightPrediction> {
    let stats = model.stats();
    let len = stats.window;
    if log.len() <= len {
        return Err(Error::Domain(format!(
            "flight has {} rows, needs more than the window {len}",
            log.len()
        )));
    }
    let stride = stride.max(1);
    let features: Vec<[f64; N_FEATURES]> = log
        .rows
        .iter()
        .map(|r| stats.normalize_features(&r.features()))
        .collect();
    let labels = log.filtered_wind(LABEL_FILTER_WIDTH)?;
    let starts: Vec<usize> = (0..log.len() - len).step_by(stride).collect();
    let windows: Vec<_> = starts.iter().map(|s| &features[*s..*s + len]).collect();
    let predicted: Vec<[f64; 3]> = model
        .forward_normalized(&windows)?
        .iter()
        .map(|y| stats.denormalize_target(y))
        .collect();
    let rows: Vec<usize> = starts.iter().map(|s| s + len).collect();
    let truth: Vec<[f64; 3]> = rows.iter().map(|r| labels[*r]).collect();
    let metrics = evaluate(&predicted, &truth)?;
    Ok(FlightPrediction {
        times: rows.iter().map(|r| log.rows[*r].t).collect(),
        rows,
        predicted,
        truth,
        metrics,
    })
}

/// Metrics of the predictor that outputs each flight's mean filtered wind
/// over the same target rows.
pub fn flight_mean_baseline(prediction: &FlightPrediction) -> Result<ComponentMetrics> {
    let n = prediction.truth.len() as f64;
    let mean: [f64; 3] =
        std::array::from_fn(|c| prediction.truth.iter().map(|t| t[c]).sum::<f64>() / n);
    evaluate(&vec![mean; prediction.truth.len()], &prediction.truth)
}

/// Wind recovered from one log row by inverting the drag model.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct DragEstimate {
    /// NED wind, m/s.
    pub wind: [f64; 3],
    pub converged: bool,
    pub iterations: usize,
}

const DRAG_MAX_ITER: usize = 50;
const DRAG_TOL: f64 = 1e-8;

/// Inverts the quadratic drag law for the air-relative velocity.
///
/// The drag force is `F = m·a − T·z_b + m·g·ẑ` with the logged thrust
/// command standing in for the rotor thrust. With `q_i = −2F_i/(ρ c_i)`
/// the air velocity is `q/s` where `s = |V_air|` solves `s² = |q|`; `s`
/// is found by Heron's iteration.
pub fn drag_inversion_estimate(row: &LogRow, params: &VehicleParams) -> DragEstimate {
    let attitude = Vector3::new(row.phi, row.theta, 0.0);
    let zb = body_z(&attitude);
    let accel = Vector3::from(row.accel);
    let force = params.mass * accel - row.thrust_cmd * zb + Vector3::new(0.0, 0.0, params.mass * params.g);
    let coef = Vector3::new(params.cd_xy, params.cd_xy, params.cd_z);
    let q = Vector3::from_fn(|i, _| -2.0 * force[i] / (params.rho * coef[i]));
    let mag = q.norm();
    let velocity = Vector3::from(row.velocity);
    let (v_air, converged, iterations) = if mag == 0.0 {
        (Vector3::zeros(), true, 0)
    } else if !mag.is_finite() {
        (Vector3::zeros(), false, 0)
    } else {
        let mut s = mag.max(1.0);
        let mut done = false;
        let mut iters = 0;
        while iters < DRAG_MAX_ITER {
            iters += 1;
            let next = 0.5 * (s + mag / s);
            let step = (next - s).abs();
            s = next;
            if step <= DRAG_TOL * s.max(1.0) {
                done = true;
                break;
            }
        }
        (q / s, done, iters)
    };
    let w = velocity - v_air;
    DragEstimate {
        wind: [w[0], w[1], -w[2]],
        converged,
        iterations,
    }
}

/// Produces wind estimates along a flight.
pub trait WindEstimator: Sync {
    /// Returns `(row index, NED wind)` pairs for every `stride`-th
    /// estimate the method can provide.
    fn estimate(&self, log: &FlightLog, stride: usize) -> Result<Vec<(usize, [f64; 3])>>;
}

impl WindEstimator for WindNet {
    fn estimate(&self, log: &FlightLog, stride: usize) -> Result<Vec<(usize, [f64; 3])>> {
        let p = predict_flight(self, log, stride)?;
        Ok(p.rows.into_iter().zip(p.predicted).collect())
    }
}

/// The drag-inversion baseline as an estimator; rows that fail to
/// converge are dropped.
#[derive(Clone, Debug)]
pub struct DragOracle {
    pub params: VehicleParams,
}

impl WindEstimator for DragOracle {
    fn estimate(&self, log: &FlightLog, stride: usize) -> Result<Vec<(usize, [f64; 3])>> {
        let mut out = Vec::new();
        let mut flagged = 0;
        for (i, row) in log.rows.iter().enumerate().step_by(stride.max(1)) {
            let e = drag_inversion_estimate(row, &self.params);
            if e.converged {
                out.push((i, e.wind));
            } else {
                flagged += 1;
            }
        }
        if flagged > 0 {
            log::warn!("drag inversion flagged {flagged} samples of vehicle {}", log.uas_id);
        }
        Ok(out)
    }
}
