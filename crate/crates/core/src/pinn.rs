//! Physics-informed wind-field reconstruction.
//!
//! A tanh MLP maps embedded `(x, y, z, t)` to `(U_N, U_E, U_D)`. It is
//! fitted to trajectory wind estimates with a weak divergence penalty and
//! a near-ground penalty on `∂U_D/∂z`. Spatial derivatives are central
//! differences of the network output.

use std::io::{Read, Write};
use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use swarmwind_autodiff::{AdamState, Axis, ParamId, ParamStore, ReduceOnPlateau, Tape, Tensor, Var};

use crate::checkpoint;
use crate::error::{Error, Result};
use crate::estimator::WindEstimator;
use crate::mission::{format_sig9, FlightLog};

/// Space-time box of the reconstruction. x is North, y East, z up.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ReconDomain {
    pub x: [f64; 2],
    pub y: [f64; 2],
    pub z: [f64; 2],
    pub t: [f64; 2],
    /// Fourier modes per embedded coordinate (time and height).
    pub fourier_k: usize,
}

impl Default for ReconDomain {
    fn default() -> Self {
        Self {
            x: [-105.0, 105.0],
            y: [-105.0, 105.0],
            z: [0.0, 1010.0],
            t: [0.0, 400.0],
            fourier_k: 4,
        }
    }
}

impl ReconDomain {
    pub fn validate(&self) -> Result<()> {
        for (name, b) in [("x", self.x), ("y", self.y), ("z", self.z), ("t", self.t)] {
            if !(b[0].is_finite() && b[1].is_finite() && b[1] > b[0]) {
                return Err(Error::Config(format!("degenerate {name} bounds {b:?}")));
            }
        }
        Ok(())
    }

    pub fn embed_dim(&self) -> usize {
        4 + 4 * self.fourier_k
    }

    fn bounds(&self) -> [[f64; 2]; 4] {
        [self.x, self.y, self.z, self.t]
    }

    pub fn contains(&self, p: &[f64; 4]) -> bool {
        self.bounds()
            .iter()
            .zip(p)
            .all(|(b, v)| *v >= b[0] && *v <= b[1])
    }

    /// Spatial z-score: mean and standard deviation of a uniform
    /// distribution over the bounds.
    fn spatial_score(b: [f64; 2], v: f64) -> f64 {
        let mu = 0.5 * (b[0] + b[1]);
        let sigma = (b[1] - b[0]) / 12f64.sqrt();
        (v - mu) / sigma
    }

    /// Maps `[t0, t1]` affinely onto `[-1, 1]`.
    pub fn time_score(&self, t: f64) -> f64 {
        2.0 * (t - self.t[0]) / (self.t[1] - self.t[0]) - 1.0
    }

    /// Embedding of an in-domain point.
    pub fn embed(&self, p: &[f64; 4]) -> Result<Vec<f64>> {
        if !self.contains(p) {
            return Err(Error::Domain(format!("point {p:?} outside the reconstruction domain")));
        }
        Ok(self.embed_unchecked(p))
    }

    /// Embedding after clamping into the domain.
    pub fn embed_clamped(&self, p: &[f64; 4]) -> Vec<f64> {
        let b = self.bounds();
        let q: [f64; 4] = std::array::from_fn(|i| p[i].clamp(b[i][0], b[i][1]));
        self.embed_unchecked(&q)
    }

    fn embed_unchecked(&self, p: &[f64; 4]) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.embed_dim());
        out.push(Self::spatial_score(self.x, p[0]));
        out.push(Self::spatial_score(self.y, p[1]));
        out.push(Self::spatial_score(self.z, p[2]));
        let tn = self.time_score(p[3]);
        out.push(tn);
        // Phases are measured from the centre of each extent.
        let period_t = self.t[1] - self.t[0];
        let period_z = self.z[1] - self.z[0];
        let tc = p[3] - 0.5 * (self.t[0] + self.t[1]);
        let zc = p[2] - 0.5 * (self.z[0] + self.z[1]);
        for k in 1..=self.fourier_k {
            let w = 2.0 * std::f64::consts::PI * k as f64;
            out.push((w * tc / period_t).sin());
            out.push((w * tc / period_t).cos());
        }
        for k in 1..=self.fourier_k {
            let w = 2.0 * std::f64::consts::PI * k as f64;
            out.push((w * zc / period_z).sin());
            out.push((w * zc / period_z).cos());
        }
        out
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PinnLossWeights {
    pub lambda_phys: f64,
    pub lambda_smooth: f64,
    /// Height below which `∂U_D/∂z` is penalized, m.
    pub z_smooth_threshold: f64,
    /// Collocation points per step.
    pub collocation: usize,
}

impl Default for PinnLossWeights {
    fn default() -> Self {
        Self {
            lambda_phys: 1e-3,
            lambda_smooth: 1e-3,
            z_smooth_threshold: 50.0,
            collocation: 1024,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PinnConfig {
    pub hidden: usize,
    pub layers: usize,
    pub batch_size: usize,
    pub epochs: usize,
    pub lr: f64,
    /// Central-difference step, m.
    pub fd_step: f64,
    pub seed: u64,
    pub weights: PinnLossWeights,
    pub plateau_patience: usize,
}

impl Default for PinnConfig {
    fn default() -> Self {
        Self {
            hidden: 128,
            layers: 4,
            batch_size: 512,
            epochs: 40,
            lr: 1e-3,
            fd_step: 1.0,
            seed: 0,
            weights: PinnLossWeights::default(),
            plateau_patience: 10,
        }
    }
}

impl PinnConfig {
    pub fn validate(&self) -> Result<()> {
        let w = &self.weights;
        if w.lambda_phys < 0.0 || w.lambda_smooth < 0.0 || !w.lambda_phys.is_finite() || !w.lambda_smooth.is_finite() {
            return Err(Error::Config("loss weights must be non-negative".into()));
        }
        if self.hidden == 0 || self.layers == 0 || self.batch_size == 0 || w.collocation == 0 {
            return Err(Error::Config("network and batch sizes must be positive".into()));
        }
        if !(self.lr > 0.0 && self.fd_step > 0.0) {
            return Err(Error::Config("lr and fd_step must be positive".into()));
        }
        Ok(())
    }
}

/// One wind estimate at a trajectory point.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ObsRecord {
    pub x: f64,
    pub y: f64,
    pub z: f64,
    pub t: f64,
    #[serde(rename = "UN")]
    pub un: f64,
    #[serde(rename = "UE")]
    pub ue: f64,
    #[serde(rename = "UD")]
    pub ud: f64,
    pub uas_id: usize,
}

impl ObsRecord {
    pub fn coord(&self) -> [f64; 4] {
        [self.x, self.y, self.z, self.t]
    }

    pub fn wind(&self) -> [f64; 3] {
        [self.un, self.ue, self.ud]
    }
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct ObsSet {
    pub records: Vec<ObsRecord>,
}

impl ObsSet {
    /// Collects estimates along every flight. Points outside `domain` are
    /// dropped.
    pub fn from_flights(
        logs: &[FlightLog],
        estimator: &dyn WindEstimator,
        stride: usize,
        domain: &ReconDomain,
    ) -> Result<Self> {
        let mut records = Vec::new();
        let mut dropped = 0;
        for log in logs {
            for (i, w) in estimator.estimate(log, stride)? {
                let row = &log.rows[i];
                let rec = ObsRecord {
                    x: row.position[0],
                    y: row.position[1],
                    z: row.position[2],
                    t: row.t,
                    un: w[0],
                    ue: w[1],
                    ud: w[2],
                    uas_id: log.uas_id,
                };
                if domain.contains(&rec.coord()) && w.iter().all(|v| v.is_finite()) {
                    records.push(rec);
                } else {
                    dropped += 1;
                }
            }
        }
        if dropped > 0 {
            log::warn!("dropped {dropped} observations outside the reconstruction domain");
        }
        Ok(Self { records })
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut out = csv::Writer::from_writer(w);
        out.write_record(["x", "y", "z", "t", "UN", "UE", "UD", "uas_id"])?;
        for r in &self.records {
            let mut rec: Vec<String> = [r.x, r.y, r.z, r.t, r.un, r.ue, r.ud]
                .iter()
                .map(|v| format_sig9(*v))
                .collect();
            rec.push(r.uas_id.to_string());
            out.write_record(rec)?;
        }
        out.flush().map_err(|e| Error::Format(e.to_string()))?;
        Ok(())
    }

    pub fn read_csv<R: Read>(r: R) -> Result<Self> {
        let mut rdr = csv::Reader::from_reader(r);
        let records = rdr.deserialize().collect::<std::result::Result<Vec<ObsRecord>, _>>()?;
        Ok(Self { records })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
        self.write_csv(std::io::BufWriter::new(f))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let f = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
        Self::read_csv(std::io::BufReader::new(f))
    }
}

/// Anything that maps points to wind, for losses and products.
pub trait FieldModel: Sync {
    fn domain(&self) -> &ReconDomain;
    /// Wind at each point; points must lie in the domain.
    fn query(&self, coords: &[[f64; 4]]) -> Result<Vec<[f64; 3]>>;
}

#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
struct ReconManifest {
    domain: ReconDomain,
    hidden: usize,
    layers: usize,
    out_mean: [f64; 3],
    out_std: [f64; 3],
}

/// The reconstruction network.
#[derive(Clone, Debug)]
pub struct ReconModel {
    pub domain: ReconDomain,
    hidden: usize,
    layers: usize,
    /// Output affine map from network units to m/s.
    out_mean: [f64; 3],
    out_std: [f64; 3],
    params: ParamStore,
    ids: Vec<(ParamId, ParamId)>,
}

const QUERY_CHUNK: usize = 4096;

impl ReconModel {
    pub fn new(
        domain: ReconDomain,
        hidden: usize,
        layers: usize,
        out_mean: [f64; 3],
        out_std: [f64; 3],
        seed: u64,
    ) -> Result<Self> {
        domain.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut params = ParamStore::new();
        let mut ids = Vec::new();
        let mut fan_in = domain.embed_dim();
        for l in 0..=layers {
            let fan_out = if l == layers { 3 } else { hidden };
            let bound = (6.0 / (fan_in + fan_out) as f64).sqrt();
            let w: Vec<f64> = (0..fan_in * fan_out)
                .map(|_| rng.random_range(-bound..bound))
                .collect();
            let wid = params.add(format!("mlp{l}.w"), Tensor::from_vec(fan_in, fan_out, w)?);
            let bid = params.add(format!("mlp{l}.b"), Tensor::zeros(1, fan_out));
            ids.push((wid, bid));
            fan_in = fan_out;
        }
        Ok(Self {
            domain,
            hidden,
            layers,
            out_mean,
            out_std,
            params,
            ids,
        })
    }

    pub fn params(&self) -> &ParamStore {
        &self.params
    }

    /// Records the network on embedded rows; returns physical outputs.
    fn forward(&self, tape: &mut Tape, embedded: Var) -> Result<Var> {
        let mut h = embedded;
        for (l, (w, b)) in self.ids.iter().enumerate() {
            let w = tape.param(&self.params, *w);
            let b = tape.param(&self.params, *b);
            h = tape.matmul(h, w)?;
            h = tape.add(h, b)?;
            if l < self.layers {
                h = tape.tanh(h);
            }
        }
        let scale = tape.input(Tensor::from_vec(1, 3, self.out_std.to_vec())?);
        let shift = tape.input(Tensor::from_vec(1, 3, self.out_mean.to_vec())?);
        let h = tape.mul(h, scale)?;
        Ok(tape.add(h, shift)?)
    }

    fn eval_embedded(&self, rows: usize, embedded: Vec<f64>) -> Result<Vec<[f64; 3]>> {
        let mut tape = Tape::new();
        let x = tape.input(Tensor::from_vec(rows, self.domain.embed_dim(), embedded)?);
        let y = self.forward(&mut tape, x)?;
        Ok(tape.value(y).chunks_exact(3).map(|c| [c[0], c[1], c[2]]).collect())
    }

    pub fn save(&self, dir: &Path) -> Result<()> {
        let m = ReconManifest {
            domain: self.domain.clone(),
            hidden: self.hidden,
            layers: self.layers,
            out_mean: self.out_mean,
            out_std: self.out_std,
        };
        checkpoint::save(dir, "recon", &m, &self.params)
    }

    pub fn load(dir: &Path) -> Result<Self> {
        let (model, params) = checkpoint::load(dir, "recon", |m: ReconManifest| {
            let model = ReconModel::new(m.domain, m.hidden, m.layers, m.out_mean, m.out_std, 0)?;
            let params = model.params.clone();
            Ok((model, params))
        })?;
        Ok(Self { params, ..model })
    }
}

impl FieldModel for ReconModel {
    fn domain(&self) -> &ReconDomain {
        &self.domain
    }

    fn query(&self, coords: &[[f64; 4]]) -> Result<Vec<[f64; 3]>> {
        let mut out = Vec::with_capacity(coords.len());
        for chunk in coords.chunks(QUERY_CHUNK) {
            let mut emb = Vec::with_capacity(chunk.len() * self.domain.embed_dim());
            for p in chunk {
                emb.extend(self.domain.embed(p)?);
            }
            out.extend(self.eval_embedded(chunk.len(), emb)?);
        }
        Ok(out)
    }
}

/// Mean over the batch of the squared error-vector norm.
pub fn loss_data(model: &dyn FieldModel, batch: &[ObsRecord]) -> Result<f64> {
    if batch.is_empty() {
        return Err(Error::Domain("empty observation batch".into()));
    }
    let coords: Vec<_> = batch.iter().map(|r| r.coord()).collect();
    let pred = model.query(&coords)?;
    let total: f64 = pred
        .iter()
        .zip(batch)
        .map(|(p, r)| (0..3).map(|c| (p[c] - r.wind()[c]).powi(2)).sum::<f64>())
        .sum();
    Ok(total / batch.len() as f64)
}

/// The six central-difference neighbours of each point, in the order
/// +x, −x, +y, −y, +z, −z.
fn stencil(points: &[[f64; 4]], h: f64) -> Vec<[f64; 4]> {
    let mut out = Vec::with_capacity(6 * points.len());
    for axis in 0..3 {
        for sign in [1.0, -1.0] {
            out.extend(points.iter().map(|p| {
                let mut q = *p;
                q[axis] += sign * h;
                q
            }));
        }
    }
    out
}

/// Central-difference divergence `∂U_N/∂x + ∂U_E/∂y − ∂U_D/∂z` (z up,
/// U_D down) and `∂U_D/∂z` from stencil outputs.
fn fd_terms(values: &[[f64; 3]], n: usize, h: f64) -> (Vec<f64>, Vec<f64>) {
    let g = |k: usize, i: usize, c: usize| values[k * n + i][c];
    let mut div = Vec::with_capacity(n);
    let mut dudz = Vec::with_capacity(n);
    for i in 0..n {
        let dx = (g(0, i, 0) - g(1, i, 0)) / (2.0 * h);
        let dy = (g(2, i, 1) - g(3, i, 1)) / (2.0 * h);
        let dz = (g(4, i, 2) - g(5, i, 2)) / (2.0 * h);
        div.push(dx + dy - dz);
        dudz.push(dz);
    }
    (div, dudz)
}

/// Stencil points may leave the domain near its faces, so stencil
/// queries go through the clamped embedding.
fn query_stencil(model: &dyn FieldModel, pts: &[[f64; 4]]) -> Result<Vec<[f64; 3]>> {
    let d = model.domain();
    let b = d.bounds();
    let clamped: Vec<[f64; 4]> = pts
        .iter()
        .map(|p| std::array::from_fn(|i| p[i].clamp(b[i][0], b[i][1])))
        .collect();
    model.query(&clamped)
}

/// Mean squared central-difference divergence with step `h`.
pub fn loss_divergence(model: &dyn FieldModel, points: &[[f64; 4]], h: f64) -> Result<f64> {
    let vals = query_stencil(model, &stencil(points, h))?;
    let (div, _) = fd_terms(&vals, points.len(), h);
    Ok(div.iter().map(|d| d * d).sum::<f64>() / points.len().max(1) as f64)
}

/// Mean of `(∂U_D/∂z)²` over points below `threshold`; zero if none.
pub fn loss_smooth(model: &dyn FieldModel, points: &[[f64; 4]], h: f64, threshold: f64) -> Result<f64> {
    let low: Vec<[f64; 4]> = points.iter().filter(|p| p[2] < threshold).cloned().collect();
    if low.is_empty() {
        return Ok(0.0);
    }
    let vals = query_stencil(model, &stencil(&low, h))?;
    let (_, dudz) = fd_terms(&vals, low.len(), h);
    Ok(dudz.iter().map(|d| d * d).sum::<f64>() / low.len() as f64)
}

/// Mean |divergence| over an `n³` grid spanning the domain interior at
/// time `t`.
pub fn probe_divergence(model: &dyn FieldModel, n: usize, t: f64, h: f64) -> Result<f64> {
    let d = model.domain();
    let axis = |b: [f64; 2], i: usize| {
        let lo = b[0] + h;
        let hi = b[1] - h;
        lo + (hi - lo) * (i as f64 + 0.5) / n as f64
    };
    let mut pts = Vec::with_capacity(n * n * n);
    for i in 0..n {
        for j in 0..n {
            for k in 0..n {
                pts.push([axis(d.x, i), axis(d.y, j), axis(d.z, k), t]);
            }
        }
    }
    let vals = query_stencil(model, &stencil(&pts, h))?;
    let (div, _) = fd_terms(&vals, pts.len(), h);
    Ok(div.iter().map(|v| v.abs()).sum::<f64>() / pts.len() as f64)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PinnEpoch {
    pub epoch: usize,
    pub data: f64,
    pub divergence: f64,
    pub smooth: f64,
    pub total: f64,
    /// Lowest total so far; the returned checkpoint has this loss.
    pub best_total: f64,
    pub lr: f64,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct PinnHistory {
    pub epochs: Vec<PinnEpoch>,
    pub best_epoch: usize,
}

impl PinnHistory {
    pub fn best(&self) -> Option<&PinnEpoch> {
        self.epochs.get(self.best_epoch)
    }
}

fn output_stats(obs: &ObsSet) -> ([f64; 3], [f64; 3]) {
    let n = obs.len() as f64;
    let mean: [f64; 3] = std::array::from_fn(|c| obs.records.iter().map(|r| r.wind()[c]).sum::<f64>() / n);
    let std: [f64; 3] = std::array::from_fn(|c| {
        let v = obs.records.iter().map(|r| (r.wind()[c] - mean[c]).powi(2)).sum::<f64>() / n;
        let s = v.sqrt();
        if s > 1e-9 {
            s
        } else {
            1.0
        }
    });
    (mean, std)
}

/// Uniform collocation points, kept one difference step inside the
/// spatial bounds so stencils stay in the domain.
fn draw_collocation(domain: &ReconDomain, m: usize, h: f64, rng: &mut ChaCha8Rng) -> Vec<[f64; 4]> {
    let inner = |b: [f64; 2]| {
        if b[1] - b[0] > 2.0 * h {
            [b[0] + h, b[1] - h]
        } else {
            b
        }
    };
    let bx = inner(domain.x);
    let by = inner(domain.y);
    let bz = inner(domain.z);
    (0..m)
        .map(|_| {
            [
                rng.random_range(bx[0]..=bx[1]),
                rng.random_range(by[0]..=by[1]),
                rng.random_range(bz[0]..=bz[1]),
                rng.random_range(domain.t[0]..=domain.t[1]),
            ]
        })
        .collect()
}

struct StepLosses {
    data: f64,
    div: f64,
    smooth: f64,
    total: f64,
}

/// Records one training step's loss on a fresh tape and backpropagates.
fn train_step(
    model: &mut ReconModel,
    batch: &[ObsRecord],
    colloc: &[[f64; 4]],
    config: &PinnConfig,
) -> Result<StepLosses> {
    let d = &model.domain;
    let e = d.embed_dim();
    let h = config.fd_step;
    let w = &config.weights;
    let nb = batch.len();
    let m = colloc.len();
    let use_fd = w.lambda_phys > 0.0 || w.lambda_smooth > 0.0;
    let pts = if use_fd { stencil(colloc, h) } else { Vec::new() };
    let rows = nb + pts.len();
    let mut emb = Vec::with_capacity(rows * e);
    for r in batch {
        emb.extend(d.embed_clamped(&r.coord()));
    }
    for p in &pts {
        emb.extend(d.embed_clamped(p));
    }
    let targets: Vec<f64> = batch.iter().flat_map(|r| r.wind()).collect();

    let mut tape = Tape::new();
    let x = tape.input(Tensor::from_vec(rows, e, emb)?);
    let y = model.forward(&mut tape, x)?;
    let pred = tape.slice(y, Axis::Rows, 0, nb)?;
    let target = tape.input(Tensor::from_vec(nb, 3, targets)?);
    let diff = tape.sub(pred, target)?;
    let sq = tape.square(diff);
    let sum = tape.sum(sq);
    let data = tape.scale(sum, 1.0 / nb as f64);
    let mut total = data;
    let (mut div_v, mut smooth_v) = (0.0, 0.0);
    if use_fd {
        let block = |tape: &mut Tape, k: usize, c: usize| -> Result<Var> {
            let s = tape.slice(y, Axis::Rows, nb + k * m, nb + (k + 1) * m)?;
            Ok(tape.slice(s, Axis::Cols, c, c + 1)?)
        };
        let inv = 1.0 / (2.0 * h);
        let central = |tape: &mut Tape, k: usize, c: usize| -> Result<Var> {
            let a = block(tape, 2 * k, c)?;
            let b = block(tape, 2 * k + 1, c)?;
            let d = tape.sub(a, b)?;
            Ok(tape.scale(d, inv))
        };
        let dx = central(&mut tape, 0, 0)?;
        let dy = central(&mut tape, 1, 1)?;
        let dz = central(&mut tape, 2, 2)?;
        let horiz = tape.add(dx, dy)?;
        let div = tape.sub(horiz, dz)?;
        let div_sq = tape.square(div);
        let l_div = tape.mean(div_sq);
        div_v = tape.scalar_value(l_div);
        let weighted = tape.scale(l_div, w.lambda_phys);
        total = tape.add(total, weighted)?;
        let low = colloc.iter().filter(|p| p[2] < w.z_smooth_threshold).count();
        if low > 0 {
            let mask: Vec<f64> = colloc
                .iter()
                .map(|p| if p[2] < w.z_smooth_threshold { 1.0 / low as f64 } else { 0.0 })
                .collect();
            let mask = tape.input(Tensor::from_vec(m, 1, mask)?);
            let dz_sq = tape.square(dz);
            let masked = tape.mul(dz_sq, mask)?;
            let l_smooth = tape.sum(masked);
            smooth_v = tape.scalar_value(l_smooth);
            let weighted = tape.scale(l_smooth, w.lambda_smooth);
            total = tape.add(total, weighted)?;
        }
    }
    let losses = StepLosses {
        data: tape.scalar_value(data),
        div: div_v,
        smooth: smooth_v,
        total: tape.scalar_value(total),
    };
    if !losses.total.is_finite() {
        return Ok(losses);
    }
    model.params.zero_grad();
    tape.backward(total, &mut model.params)?;
    Ok(losses)
}

/// Fits a fresh reconstruction network to `obs`. Each step uses a
/// minibatch of observations and a fresh set of collocation points. The
/// parameters of the epoch with the lowest mean total loss are returned.
pub fn train_pinn(obs: &ObsSet, domain: &ReconDomain, config: &PinnConfig) -> Result<(ReconModel, PinnHistory)> {
    config.validate()?;
    domain.validate()?;
    if obs.is_empty() {
        return Err(Error::Config("no observations to fit".into()));
    }
    if let Some(r) = obs.records.iter().find(|r| !domain.contains(&r.coord())) {
        return Err(Error::Domain(format!(
            "observation at {:?} outside the reconstruction domain",
            r.coord()
        )));
    }
    let (mean, std) = output_stats(obs);
    let mut model = ReconModel::new(domain.clone(), config.hidden, config.layers, mean, std, config.seed)?;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed ^ 0xC011_0CA7);
    let mut adam = AdamState::new(&model.params, config.lr);
    let mut plateau = ReduceOnPlateau::new(0.5, config.plateau_patience);
    let mut history = PinnHistory::default();
    let mut best = (f64::INFINITY, model.params.flat_values());
    let mut order: Vec<usize> = (0..obs.len()).collect();
    for epoch in 0..config.epochs {
        order.shuffle(&mut rng);
        let mut sums = [0.0; 4];
        let mut steps = 0;
        for (s, chunk) in order.chunks(config.batch_size).enumerate() {
            let batch: Vec<ObsRecord> = chunk.iter().map(|i| obs.records[*i]).collect();
            let colloc = draw_collocation(domain, config.weights.collocation, config.fd_step, &mut rng);
            let l = train_step(&mut model, &batch, &colloc, config)?;
            if !l.total.is_finite() {
                return Err(Error::Numerical(format!(
                    "non-finite reconstruction loss at epoch {epoch}, step {s}: data {:.3e}, divergence {:.3e}, smooth {:.3e}",
                    l.data, l.div, l.smooth
                )));
            }
            adam.step(&mut model.params)?;
            sums[0] += l.data;
            sums[1] += l.div;
            sums[2] += l.smooth;
            sums[3] += l.total;
            steps += 1;
        }
        let avg = sums.map(|v| v / steps as f64);
        if avg[3] < best.0 {
            best = (avg[3], model.params.flat_values());
            history.best_epoch = epoch;
        }
        history.epochs.push(PinnEpoch {
            epoch,
            data: avg[0],
            divergence: avg[1],
            smooth: avg[2],
            total: avg[3],
            best_total: best.0,
            lr: adam.lr,
        });
        log::debug!("pinn epoch {epoch}: data {:.4e} div {:.3e} total {:.4e}", avg[0], avg[1], avg[3]);
        plateau.observe(avg[3], &mut adam.lr);
    }
    model.params.load_flat(&best.1)?;
    Ok((model, history))
}

/// A planar slice, vertical profile or point time series.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum ProductSpec {
    /// Horizontal slice at height `z`.
    Xy { z: f64, t: f64, nx: usize, ny: usize },
    /// Vertical slice at North coordinate `x`.
    Yz { x: f64, t: f64, ny: usize, nz: usize },
    /// Vertical slice at East coordinate `y`.
    Zx { y: f64, t: f64, nz: usize, nx: usize },
    Profile { x: f64, y: f64, t: f64, nz: usize },
    TimeSeries { x: f64, y: f64, z: f64, nt: usize },
}

fn linspace(b: [f64; 2], n: usize) -> Vec<f64> {
    match n {
        0 => Vec::new(),
        1 => vec![0.5 * (b[0] + b[1])],
        _ => (0..n).map(|i| b[0] + (b[1] - b[0]) * i as f64 / (n - 1) as f64).collect(),
    }
}

impl ProductSpec {
    /// Points of the product in row-major order (first named axis slowest).
    pub fn points(&self, d: &ReconDomain) -> Vec<[f64; 4]> {
        let mut out = Vec::new();
        match *self {
            ProductSpec::Xy { z, t, nx, ny } => {
                for x in linspace(d.x, nx) {
                    for y in linspace(d.y, ny) {
                        out.push([x, y, z, t]);
                    }
                }
            }
            ProductSpec::Yz { x, t, ny, nz } => {
                for y in linspace(d.y, ny) {
                    for z in linspace(d.z, nz) {
                        out.push([x, y, z, t]);
                    }
                }
            }
            ProductSpec::Zx { y, t, nz, nx } => {
                for z in linspace(d.z, nz) {
                    for x in linspace(d.x, nx) {
                        out.push([x, y, z, t]);
                    }
                }
            }
            ProductSpec::Profile { x, y, t, nz } => {
                for z in linspace(d.z, nz) {
                    out.push([x, y, z, t]);
                }
            }
            ProductSpec::TimeSeries { x, y, z, nt } => {
                for t in linspace(d.t, nt) {
                    out.push([x, y, z, t]);
                }
            }
        }
        out
    }
}

/// Sampled wind at the points of a product.
#[derive(Clone, Debug, PartialEq)]
pub struct Product {
    pub spec: ProductSpec,
    pub points: Vec<[f64; 4]>,
    pub values: Vec<[f64; 3]>,
}

impl Product {
    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut out = csv::Writer::from_writer(w);
        out.write_record(["x", "y", "z", "t", "UN", "UE", "UD"])?;
        for (p, v) in self.points.iter().zip(&self.values) {
            out.write_record(p.iter().chain(v).map(|x| format_sig9(*x)))?;
        }
        out.flush().map_err(|e| Error::Format(e.to_string()))?;
        Ok(())
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
        self.write_csv(std::io::BufWriter::new(f))
    }
}

pub fn extract_product(model: &dyn FieldModel, spec: &ProductSpec) -> Result<Product> {
    let points = spec.points(model.domain());
    let values = model.query(&points)?;
    Ok(Product {
        spec: spec.clone(),
        points,
        values,
    })
}

/// Default product set: xy at 700 m, yz at x = 0, zx at y = 0 (all at
/// t = 200 s), the centre profile and the centre time series at 700 m.
pub fn default_products(d: &ReconDomain) -> Vec<ProductSpec> {
    let t = 200f64.clamp(d.t[0], d.t[1]);
    let z = 700f64.clamp(d.z[0], d.z[1]);
    let cx = 0f64.clamp(d.x[0], d.x[1]);
    let cy = 0f64.clamp(d.y[0], d.y[1]);
    vec![
        ProductSpec::Xy { z, t, nx: 43, ny: 43 },
        ProductSpec::Yz { x: cx, t, ny: 43, nz: 102 },
        ProductSpec::Zx { y: cy, t, nz: 102, nx: 43 },
        ProductSpec::Profile { x: cx, y: cy, t, nz: 102 },
        ProductSpec::TimeSeries { x: cx, y: cy, z, nt: 401 },
    ]
}

pub fn extract_products(model: &dyn FieldModel, specs: &[ProductSpec]) -> Result<Vec<Product>> {
    specs.iter().map(|s| extract_product(model, s)).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Analytic field for loss checks.
    struct Stub<F: Fn(&[f64; 4]) -> [f64; 3] + Sync> {
        domain: ReconDomain,
        f: F,
    }

    impl<F: Fn(&[f64; 4]) -> [f64; 3] + Sync> FieldModel for Stub<F> {
        fn domain(&self) -> &ReconDomain {
            &self.domain
        }
        fn query(&self, coords: &[[f64; 4]]) -> Result<Vec<[f64; 3]>> {
            coords
                .iter()
                .map(|p| {
                    if self.domain.contains(p) {
                        Ok((self.f)(p))
                    } else {
                        Err(Error::Domain("outside".into()))
                    }
                })
                .collect()
        }
    }

    fn stub<F: Fn(&[f64; 4]) -> [f64; 3] + Sync>(f: F) -> Stub<F> {
        Stub {
            domain: ReconDomain::default(),
            f,
        }
    }

    fn points(n: usize, zmax: f64) -> Vec<[f64; 4]> {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        (0..n)
            .map(|_| {
                [
                    rng.random_range(-100.0..100.0),
                    rng.random_range(-100.0..100.0),
                    rng.random_range(2.0..zmax),
                    rng.random_range(0.0..400.0),
                ]
            })
            .collect()
    }

    #[test]
    fn embedding_layout() {
        let d = ReconDomain {
            fourier_k: 0,
            ..ReconDomain::default()
        };
        assert_eq!(d.embed(&[0.0, 0.0, 505.0, 200.0]).unwrap(), vec![0.0; 4]);
        let d = ReconDomain::default();
        assert_eq!(d.embed_dim(), 20);
        let e = d.embed(&[0.0, 0.0, 100.0, 0.0]).unwrap();
        assert_eq!(e.len(), 20);
        assert_eq!(e[3], -1.0);
        assert_eq!(d.embed(&[0.0, 0.0, 100.0, 400.0]).unwrap()[3], 1.0);
        // At t0 the time phase is −πk.
        for k in 1..=4 {
            let ph = -std::f64::consts::PI * k as f64;
            assert!((e[4 + 2 * (k - 1)] - ph.sin()).abs() < 1e-12);
            assert!((e[5 + 2 * (k - 1)] - ph.cos()).abs() < 1e-12);
        }
        assert!(d.embed(&[0.0, 0.0, -1.0, 10.0]).is_err());
        assert_eq!(d.embed_clamped(&[0.0, 0.0, -1.0, 10.0]), d.embed(&[0.0, 0.0, 0.0, 10.0]).unwrap());
    }

    #[test]
    fn data_loss_examples() {
        let obs: Vec<ObsRecord> = points(20, 900.0)
            .iter()
            .map(|p| ObsRecord {
                x: p[0],
                y: p[1],
                z: p[2],
                t: p[3],
                un: p[2] * 0.01,
                ue: -1.0,
                ud: 0.2,
                uas_id: 0,
            })
            .collect();
        let exact = stub(|p| [p[2] * 0.01, -1.0, 0.2]);
        assert!(loss_data(&exact, &obs).unwrap() < 1e-24);
        let offset = stub(|p| [p[2] * 0.01 + 1.0, -1.0, 0.2]);
        assert!((loss_data(&offset, &obs).unwrap() - 1.0).abs() < 1e-12);
        let mut rev = obs.clone();
        rev.reverse();
        let a = loss_data(&offset, &obs).unwrap();
        let b = loss_data(&offset, &rev).unwrap();
        assert!((a - b).abs() < 1e-12);
    }

    #[test]
    fn divergence_and_smoothness_examples() {
        let pts = points(50, 1000.0);
        let constant = stub(|_| [3.0, -2.0, 0.5]);
        assert_eq!(loss_divergence(&constant, &pts, 1.0).unwrap(), 0.0);
        let expanding = stub(|p| [p[0], 0.0, 0.0]);
        assert!((loss_divergence(&expanding, &pts, 1.0).unwrap() - 1.0).abs() < 1e-9);
        let shear = stub(|p| [p[1], 0.0, 0.0]);
        assert!(loss_divergence(&shear, &pts, 1.0).unwrap().abs() < 1e-20);
        // Upward flow growing with height: U_D = −z.
        let updraft = stub(|p| [0.0, 0.0, -p[2]]);
        assert!((loss_divergence(&updraft, &pts, 1.0).unwrap() - 1.0).abs() < 1e-9);

        let high = points(30, 1000.0).into_iter().map(|mut p| {
            p[2] = p[2].max(60.0);
            p
        });
        let high: Vec<_> = high.collect();
        let ramp = stub(|p| [0.0, 0.0, p[2]]);
        assert_eq!(loss_smooth(&ramp, &high, 1.0, 50.0).unwrap(), 0.0);
        assert_eq!(loss_smooth(&constant, &pts, 1.0, 50.0).unwrap(), 0.0);
        let low = points(30, 45.0);
        assert!((loss_smooth(&ramp, &low, 1.0, 50.0).unwrap() - 1.0).abs() < 1e-9);
    }

    #[test]
    fn products_have_expected_shape_and_orientation() {
        let f = stub(|p| [p[0], p[1], 0.0]);
        let prod = extract_product(&f, &ProductSpec::Xy { z: 700.0, t: 200.0, nx: 5, ny: 4 }).unwrap();
        assert_eq!(prod.values.len(), 20);
        assert!(prod.points.iter().all(|p| p[2] == 700.0 && p[3] == 200.0));
        assert_eq!(prod.points[0], [-105.0, -105.0, 700.0, 200.0]);
        assert_eq!(prod.points[1][1], -105.0 + 70.0);
        let c = stub(|_| [1.0, 2.0, 3.0]);
        let prod = extract_product(&c, &ProductSpec::Zx { y: 0.0, t: 100.0, nz: 3, nx: 3 }).unwrap();
        assert!(prod.values.iter().all(|v| *v == [1.0, 2.0, 3.0]));
        let mut buf = Vec::new();
        prod.write_csv(&mut buf).unwrap();
        assert_eq!(String::from_utf8(buf).unwrap().lines().count(), 10);
        assert!(extract_product(&c, &ProductSpec::Xy { z: 2000.0, t: 0.0, nx: 2, ny: 2 }).is_err());
    }

    #[test]
    fn obs_csv_round_trip() {
        let obs = ObsSet {
            records: vec![ObsRecord {
                x: 1.5,
                y: -2.0,
                z: 30.25,
                t: 12.0,
                un: 0.1,
                ue: 0.2,
                ud: -0.05,
                uas_id: 3,
            }],
        };
        let mut buf = Vec::new();
        obs.write_csv(&mut buf).unwrap();
        assert!(String::from_utf8(buf.clone()).unwrap().starts_with("x,y,z,t,UN,UE,UD,uas_id\n"));
        assert_eq!(ObsSet::read_csv(buf.as_slice()).unwrap(), obs);
    }

    fn linear_obs() -> ObsSet {
        let records = points(400, 1000.0)
            .iter()
            .enumerate()
            .map(|(i, p)| ObsRecord {
                x: p[0],
                y: p[1],
                z: p[2],
                t: p[3],
                un: 2.0 + 0.004 * p[2],
                ue: 1.0 - 0.002 * p[2],
                ud: 0.0,
                uas_id: i % 5,
            })
            .collect();
        ObsSet { records }
    }

    #[test]
    fn training_fits_a_linear_profile_and_keeps_best() {
        let cfg = PinnConfig {
            hidden: 16,
            layers: 2,
            epochs: 60,
            batch_size: 100,
            lr: 5e-3,
            weights: PinnLossWeights {
                collocation: 64,
                ..PinnLossWeights::default()
            },
            ..PinnConfig::default()
        };
        let obs = linear_obs();
        let (model, hist) = train_pinn(&obs, &ReconDomain::default(), &cfg).unwrap();
        let first = hist.epochs[0].data;
        let best = hist.best().unwrap();
        assert!(best.data < 0.05 * first, "{first} -> {}", best.data);
        for w in hist.epochs.windows(2) {
            assert!(w[1].best_total <= w[0].best_total);
        }
        assert!(best.data > cfg.weights.lambda_phys * best.divergence + cfg.weights.lambda_smooth * best.smooth);
        let q = model.query(&[[0.0, 0.0, 500.0, 200.0]]).unwrap();
        assert_eq!(q, model.query(&[[0.0, 0.0, 500.0, 200.0]]).unwrap());
        assert!((q[0][0] - 4.0).abs() < 0.3, "{q:?}");

        let dir = tempfile::tempdir().unwrap();
        model.save(dir.path()).unwrap();
        let back = ReconModel::load(dir.path()).unwrap();
        assert_eq!(back.query(&[[10.0, 5.0, 300.0, 50.0]]).unwrap(), model.query(&[[10.0, 5.0, 300.0, 50.0]]).unwrap());
    }

    #[test]
    fn out_of_domain_observations_are_rejected() {
        let mut obs = linear_obs();
        obs.records[0].z = 5000.0;
        let err = train_pinn(&obs, &ReconDomain::default(), &PinnConfig::default()).unwrap_err();
        assert!(matches!(err, Error::Domain(_)));
    }
}
