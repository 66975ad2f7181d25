//! End-to-end training with Adam, checkpoint/resume, and evaluation sweeps.
//!
//! A step draws a batch and a feedback SNR from seeded substreams keyed by
//! the step number, runs one tape per sample (in parallel when enabled),
//! reduces the per-sample gradients in a fixed order, and applies Adam.
//! Because no generator state is carried between steps, resuming from a
//! checkpoint reproduces uninterrupted training bit for bit.

use crate::channel::ChannelMatrix;
use crate::cqi::{CqiConfig, CqiMode, CqiReport};
use crate::error::{Error, Result};
use crate::exec::Execution;
use crate::metrics::{nmse_sample, sgcs_sample, to_db};
use crate::model::{Checkpoint, CheckpointHeader, LinkOptions, Model, ModulationMode, ParamStore, SymbolMode};
use crate::numerics::Tape;
use crate::rng::{purpose, substream};
use rand::seq::index;
use rand::Rng as _;
use serde::{Deserialize, Serialize};
use std::io::Write;

/// Samples per gradient chunk; chunks are reduced in order, so the result
/// does not depend on the number of worker threads.
const CHUNK: usize = 4;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SnrPolicy {
    /// Uniform in `[snr_min_db, snr_max_db]`, drawn once per batch.
    #[default]
    Uniform,
    Fixed,
    /// No feedback noise.
    Noiseless,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub batch_size: usize,
    pub steps: u64,
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub snr_policy: SnrPolicy,
    pub snr_db: f64,
    pub snr_min_db: f64,
    pub snr_max_db: f64,
    pub seed: u64,
    /// Write a checkpoint every this many steps (0 = only at the end).
    pub checkpoint_every: u64,
    pub train_fraction: f64,
    pub val_fraction: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            batch_size: 32,
            steps: 5000,
            lr: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            snr_policy: SnrPolicy::Uniform,
            snr_db: 0.0,
            snr_min_db: -10.0,
            snr_max_db: 0.0,
            seed: 0,
            checkpoint_every: 1000,
            train_fraction: 0.8,
            val_fraction: 0.1,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.lr.is_finite() && self.lr >= 0.0) {
            return Err(Error::Config(format!("train.lr = {} must be ≥ 0", self.lr)));
        }
        if self.batch_size == 0 {
            return Err(Error::Config("train.batch_size must be ≥ 1".into()));
        }
        if !(0.0..1.0).contains(&self.beta1) || !(0.0..1.0).contains(&self.beta2) {
            return Err(Error::Config("train.beta1 and train.beta2 must lie in [0, 1)".into()));
        }
        if !(self.eps > 0.0) {
            return Err(Error::Config("train.eps must be positive".into()));
        }
        match self.snr_policy {
            SnrPolicy::Uniform if !(self.snr_min_db <= self.snr_max_db) => {
                return Err(Error::Config(format!(
                    "train.snr_min_db = {} exceeds train.snr_max_db = {}",
                    self.snr_min_db, self.snr_max_db
                )))
            }
            SnrPolicy::Fixed if self.snr_db.is_nan() => {
                return Err(Error::Config("train.snr_db is NaN".into()))
            }
            _ => {}
        }
        let (t, v) = (self.train_fraction, self.val_fraction);
        if !(t > 0.0 && v >= 0.0 && t + v <= 1.0) {
            return Err(Error::Config(format!(
                "train.train_fraction = {t} and train.val_fraction = {v} do not form a split"
            )));
        }
        Ok(())
    }

    /// Feedback SNR for `step`, or `None` for a noiseless link.
    pub fn snr_at(&self, step: u64) -> Option<f64> {
        match self.snr_policy {
            SnrPolicy::Noiseless => None,
            SnrPolicy::Fixed => Some(self.snr_db),
            SnrPolicy::Uniform => {
                if self.snr_min_db == self.snr_max_db {
                    return Some(self.snr_min_db);
                }
                let mut rng = substream(self.seed, &[purpose::SNR, step]);
                Some(rng.random_range(self.snr_min_db..=self.snr_max_db))
            }
        }
    }
}

/// Adam with bias correction and no weight decay.
#[derive(Debug, Clone, PartialEq)]
pub struct Adam {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    /// Number of updates applied so far.
    pub t: u64,
    pub m: ParamStore,
    pub v: ParamStore,
}

impl Adam {
    pub fn new(cfg: &TrainConfig, params: &ParamStore) -> Self {
        Adam {
            lr: cfg.lr,
            beta1: cfg.beta1,
            beta2: cfg.beta2,
            eps: cfg.eps,
            t: 0,
            m: params.zeros_like(),
            v: params.zeros_like(),
        }
    }

    /// Applies one update; `grads[i]` is the gradient of parameter `i`.
    pub fn update(&mut self, params: &mut ParamStore, grads: &[Vec<f64>]) -> Result<()> {
        if grads.len() != params.len() || self.m.len() != params.len() {
            return Err(Error::Dimension(format!(
                "{} gradients / {} moment buffers for {} parameters",
                grads.len(),
                self.m.len(),
                params.len()
            )));
        }
        self.t += 1;
        let c1 = 1.0 - self.beta1.powi(self.t as i32);
        let c2 = 1.0 - self.beta2.powi(self.t as i32);
        let (ms, vs) = (self.m.tensors_mut(), self.v.tensors_mut());
        for (i, p) in params.tensors_mut().iter_mut().enumerate() {
            let g = &grads[i];
            if g.len() != p.numel() {
                return Err(Error::Dimension(format!("gradient {i} has the wrong length")));
            }
            let m = ms[i].data_mut();
            let v = vs[i].data_mut();
            for (j, x) in p.data_mut().iter_mut().enumerate() {
                m[j] = self.beta1 * m[j] + (1.0 - self.beta1) * g[j];
                v[j] = self.beta2 * v[j] + (1.0 - self.beta2) * g[j] * g[j];
                let mh = m[j] / c1;
                let vh = v[j] / c2;
                *x -= self.lr * mh / (vh.sqrt() + self.eps);
            }
        }
        Ok(())
    }
}

/// `(1/T) Σ ‖Ĥᵢ − Hᵢ‖²_F`.
pub fn mse_loss(h_hat: &[ChannelMatrix], h: &[ChannelMatrix]) -> Result<f64> {
    if h_hat.len() != h.len() || h.is_empty() {
        return Err(Error::Contract(format!(
            "mse_loss needs equal, nonempty batches ({} vs {})",
            h_hat.len(),
            h.len()
        )));
    }
    let mut total = 0.0;
    for (a, b) in h_hat.iter().zip(h) {
        if a.dims() != b.dims() {
            return Err(Error::Contract(format!("shape {:?} vs {:?}", a.dims(), b.dims())));
        }
        total += a
            .as_slice()
            .iter()
            .zip(b.as_slice())
            .map(|(x, y)| {
                let d = x - y;
                d.re * d.re + d.im * d.im
            })
            .sum::<f64>();
    }
    Ok(total / h.len() as f64)
}

/// Scale making the mean `‖H‖²_F` of `samples` equal `N_t·N_c`.
pub fn input_scale_for(samples: &[&ChannelMatrix]) -> Result<f64> {
    let Some(first) = samples.first() else {
        return Err(Error::Contract("cannot normalize an empty training split".into()));
    };
    let (n_t, n_c) = first.dims();
    let mean = samples.iter().map(|h| h.frobenius_sq()).sum::<f64>() / samples.len() as f64;
    if !(mean > 0.0 && mean.is_finite()) {
        return Err(Error::Contract(format!("mean channel power {mean} cannot be normalized")));
    }
    Ok(((n_t * n_c) as f64 / mean).sqrt())
}

/// CQI reports for every sample, in the model's mode.
pub fn reports_for(samples: &[&ChannelMatrix], cqi: &CqiConfig, mode: CqiMode) -> Result<Vec<CqiReport>> {
    samples.iter().map(|h| cqi.report(h, mode)).collect()
}

/// Batch of `batch` indices into `0..n` for `step`; without replacement
/// when the set is large enough.
pub fn batch_indices(seed: u64, step: u64, n: usize, batch: usize) -> Vec<usize> {
    let mut rng = substream(seed, &[purpose::BATCH, step]);
    if batch <= n {
        index::sample(&mut rng, n, batch).into_vec()
    } else {
        (0..batch).map(|_| rng.random_range(0..n)).collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct StepLog {
    pub step: u64,
    pub loss: f64,
    pub tau: f64,
    pub snr_db: Option<f64>,
}

/// Bookkeeping stored in the checkpoint header.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainMeta {
    pub step: u64,
    pub loss_ema: Option<f64>,
    pub config: TrainConfig,
}

#[derive(Debug, Clone)]
pub struct TrainState {
    /// Completed steps.
    pub step: u64,
    pub model: Model,
    pub adam: Adam,
    /// Exponential moving average of the batch loss.
    pub loss_ema: Option<f64>,
}

impl TrainState {
    pub fn new(model: Model, cfg: &TrainConfig) -> Self {
        let adam = Adam::new(cfg, model.params());
        TrainState {
            step: 0,
            model,
            adam,
            loss_ema: None,
        }
    }

    pub fn to_checkpoint(&self, cfg: &TrainConfig, cqi: &CqiConfig) -> Result<Checkpoint> {
        let meta = TrainMeta {
            step: self.step,
            loss_ema: self.loss_ema,
            config: cfg.clone(),
        };
        Ok(Checkpoint {
            header: CheckpointHeader {
                model: self.model.config().clone(),
                input_scale: self.model.input_scale(),
                cqi: Some(cqi.clone()),
                train: Some(serde_json::to_value(meta).map_err(|e| Error::format("header.train", e.to_string()))?),
            },
            params: self.model.params().clone(),
            moments: Some((self.adam.m.clone(), self.adam.v.clone())),
        })
    }

    /// Restores a training state; `cfg` supplies the optimizer settings.
    pub fn from_checkpoint(ck: &Checkpoint, cfg: &TrainConfig) -> Result<Self> {
        let model = Model::from_checkpoint(ck)?;
        let meta: TrainMeta = match &ck.header.train {
            Some(v) => serde_json::from_value(v.clone()).map_err(|e| Error::format("header.train", e.to_string()))?,
            None => return Err(Error::format("header.train", "checkpoint has no training state")),
        };
        let (m, v) = ck
            .moments
            .clone()
            .ok_or_else(|| Error::format("record.name", "checkpoint has no optimizer moments"))?;
        for store in [&m, &v] {
            if store.names() != model.params().names()
                || store.tensors().iter().zip(model.params().tensors()).any(|(a, b)| a.shape() != b.shape())
            {
                return Err(Error::format("record.name", "optimizer moments do not match parameters"));
            }
        }
        let mut adam = Adam::new(cfg, model.params());
        adam.t = meta.step;
        adam.m = m;
        adam.v = v;
        Ok(TrainState {
            step: meta.step,
            model,
            adam,
            loss_ema: meta.loss_ema,
        })
    }
}

/// Loss and parameter gradients summed over `batch`.
fn batch_gradients(
    model: &Model,
    batch: &[(&ChannelMatrix, &CqiReport)],
    opts: LinkOptions,
    seed: u64,
    step: u64,
    exec: Execution,
) -> Result<(f64, Vec<Vec<f64>>)> {
    let chunks = batch.len().div_ceil(CHUNK);
    let partial = exec.try_map(chunks, |c| -> Result<(f64, Vec<Vec<f64>>)> {
        let mut grads: Vec<Vec<f64>> = model.params().tensors().iter().map(|t| vec![0.0; t.numel()]).collect();
        let mut loss = 0.0;
        for slot in c * CHUNK..((c + 1) * CHUNK).min(batch.len()) {
            let (h, k) = batch[slot];
            let mut rng = substream(seed, &[purpose::GUMBEL, step, slot as u64]);
            let mut tape = Tape::new();
            let p = model.bind(&mut tape);
            let f = model.forward(&mut tape, &p, h, k, opts, &mut rng)?;
            let l = model.squared_error(&mut tape, f.output, h)?;
            loss += tape.value(l).data()[0];
            let g = tape.backward(l)?;
            for (acc, &v) in grads.iter_mut().zip(p.vars()) {
                if let Some(gv) = g.get(v) {
                    for (a, b) in acc.iter_mut().zip(gv) {
                        *a += b;
                    }
                }
            }
        }
        Ok((loss, grads))
    })?;
    let mut iter = partial.into_iter();
    let (mut loss, mut grads) = iter.next().ok_or_else(|| Error::Contract("empty batch".into()))?;
    for (l, g) in iter {
        loss += l;
        for (acc, part) in grads.iter_mut().zip(g) {
            for (a, b) in acc.iter_mut().zip(part) {
                *a += b;
            }
        }
    }
    Ok((loss, grads))
}

/// One optimization step on `batch`; the step number, τ and SNR come from
/// `state` and `cfg`.
pub fn train_step(
    state: &mut TrainState,
    batch: &[(&ChannelMatrix, &CqiReport)],
    cfg: &TrainConfig,
    exec: Execution,
) -> Result<StepLog> {
    if batch.is_empty() {
        return Err(Error::Contract("empty batch".into()));
    }
    let step = state.step;
    let tau = state.model.config().tau_at(step);
    let snr_db = cfg.snr_at(step);
    let opts = LinkOptions {
        symbols: SymbolMode::Soft { tau, gumbel: true },
        snr_db,
    };
    let diverged = Error::Diverged {
        step,
        tau,
        snr_db: snr_db.unwrap_or(f64::INFINITY),
    };
    let (sum, mut grads) = match batch_gradients(&state.model, batch, opts, cfg.seed, step, exec) {
        Err(Error::NonFinite { .. }) => return Err(diverged),
        other => other?,
    };
    let t = batch.len() as f64;
    let loss = sum / t;
    if !(loss.is_finite() && grads.iter().flatten().all(|g| g.is_finite())) {
        return Err(diverged);
    }
    for g in grads.iter_mut().flatten() {
        *g /= t;
    }
    state.adam.update(state.model.params_mut(), &grads)?;
    state.step += 1;
    state.loss_ema = Some(match state.loss_ema {
        Some(e) => 0.99 * e + 0.01 * loss,
        None => loss,
    });
    Ok(StepLog { step, loss, tau, snr_db })
}

/// Runs steps until `cfg.steps` have completed, calling `on_step` after each.
pub fn train<F>(
    state: &mut TrainState,
    samples: &[&ChannelMatrix],
    reports: &[CqiReport],
    cfg: &TrainConfig,
    exec: Execution,
    mut on_step: F,
) -> Result<()>
where
    F: FnMut(&StepLog, &TrainState) -> Result<()>,
{
    cfg.validate()?;
    if samples.is_empty() || samples.len() != reports.len() {
        return Err(Error::Contract(format!(
            "{} training samples with {} CQI reports",
            samples.len(),
            reports.len()
        )));
    }
    while state.step < cfg.steps {
        let idx = batch_indices(cfg.seed, state.step, samples.len(), cfg.batch_size);
        let batch: Vec<_> = idx.iter().map(|&i| (samples[i], &reports[i])).collect();
        let log = train_step(state, &batch, cfg, exec)?;
        on_step(&log, state)?;
    }
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EvalMode {
    Soft,
    #[default]
    Hard,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EvalConfig {
    /// Feedback SNRs; `inf` is a noiseless link.
    pub snr_list: Vec<f64>,
    pub mode: EvalMode,
    pub seed: u64,
}

impl Default for EvalConfig {
    fn default() -> Self {
        EvalConfig {
            snr_list: vec![-10.0, -5.0, 0.0],
            mode: EvalMode::Hard,
            seed: 1,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EvalRow {
    pub snr_db: f64,
    pub cr: f64,
    pub cqi_mode: CqiMode,
    pub mod_mode: ModulationMode,
    pub nmse_db: f64,
    pub sgcs: f64,
}

/// Symbol mode used for evaluation: discrete symbols, or the noiseless
/// tempered softmax at the final temperature.
pub fn eval_symbols(model: &Model, mode: EvalMode) -> SymbolMode {
    match mode {
        EvalMode::Hard => SymbolMode::Hard,
        EvalMode::Soft => SymbolMode::Soft {
            tau: model.config().tau_end,
            gumbel: false,
        },
    }
}

/// Per-SNR NMSE/SGCS over `samples`.
pub fn evaluate(
    model: &Model,
    samples: &[&ChannelMatrix],
    reports: &[CqiReport],
    cfg: &EvalConfig,
    exec: Execution,
) -> Result<Vec<EvalRow>> {
    let mc = model.config();
    if let Some(h) = samples.iter().find(|h| h.dims() != (mc.n_t, mc.n_c)) {
        return Err(Error::Config(format!(
            "dataset samples are {:?} but the checkpoint expects ({}, {})",
            h.dims(),
            mc.n_t,
            mc.n_c
        )));
    }
    if samples.len() != reports.len() || samples.is_empty() {
        return Err(Error::Contract(format!(
            "{} evaluation samples with {} CQI reports",
            samples.len(),
            reports.len()
        )));
    }
    let symbols = eval_symbols(model, cfg.mode);
    cfg.snr_list
        .iter()
        .enumerate()
        .map(|(si, &snr)| {
            let opts = LinkOptions {
                symbols,
                snr_db: snr.is_finite().then_some(snr),
            };
            let per = exec.try_map(samples.len(), |i| -> Result<(Option<f64>, Option<f64>)> {
                let mut rng = substream(cfg.seed, &[purpose::NOISE, si as u64, i as u64]);
                let (h_hat, _) = model.reconstruct(samples[i], &reports[i], opts, &mut rng)?;
                Ok((nmse_sample(samples[i], &h_hat), sgcs_sample(samples[i], &h_hat).0))
            })?;
            let mean = |xs: Vec<f64>| xs.iter().sum::<f64>() / xs.len() as f64;
            let n: Vec<f64> = per.iter().filter_map(|p| p.0).collect();
            let s: Vec<f64> = per.iter().filter_map(|p| p.1).collect();
            if n.is_empty() {
                return Err(Error::Contract("every evaluation channel is zero".into()));
            }
            Ok(EvalRow {
                snr_db: snr,
                cr: model.compression_ratio(),
                cqi_mode: mc.cqi_mode,
                mod_mode: mc.modulation,
                nmse_db: to_db(mean(n)),
                sgcs: if s.is_empty() { f64::NAN } else { mean(s) },
            })
        })
        .collect()
}

fn csv_error(e: csv::Error) -> Error {
    match e.into_kind() {
        csv::ErrorKind::Io(io) => Error::Io(io),
        other => Error::Contract(format!("csv: {other:?}")),
    }
}

/// Writes `metrics.csv` rows (step, loss, tau, snr_db).
pub fn write_metrics_csv<W: Write>(out: W, logs: &[StepLog], header: bool) -> Result<()> {
    let mut w = csv::WriterBuilder::new().has_headers(false).from_writer(out);
    if header {
        w.write_record(["step", "loss", "tau", "snr_db"]).map_err(csv_error)?;
    }
    for l in logs {
        let snr = l.snr_db.map_or("inf".to_string(), |s| s.to_string());
        w.write_record([l.step.to_string(), l.loss.to_string(), l.tau.to_string(), snr])
            .map_err(csv_error)?;
    }
    w.flush()?;
    Ok(())
}

/// Writes `eval.csv` (snr_db, cr, cqi_mode, mod_mode, nmse_db, sgcs).
pub fn write_eval_csv<W: Write>(out: W, rows: &[EvalRow]) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["snr_db", "cr", "cqi_mode", "mod_mode", "nmse_db", "sgcs"])
        .map_err(csv_error)?;
    for r in rows {
        w.write_record([
            r.snr_db.to_string(),
            r.cr.to_string(),
            r.cqi_mode.to_string(),
            r.mod_mode.to_string(),
            r.nmse_db.to_string(),
            r.sgcs.to_string(),
        ])
        .map_err(csv_error)?;
    }
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::channel::{generate_samples, ScenarioConfig};
    use crate::model::ModelConfig;
    use crate::numerics::Tensor;

    fn toy_scenario() -> ScenarioConfig {
        ScenarioConfig {
            n_t: 4,
            n_v: 2,
            n_h: 2,
            n_c: 8,
            ..Default::default()
        }
    }

    fn toy_cqi() -> CqiConfig {
        CqiConfig {
            subcarriers_per_subband: 2,
            ..Default::default()
        }
    }

    fn setup(count: usize, cfg: ModelConfig) -> (Model, Vec<ChannelMatrix>, Vec<CqiReport>) {
        let hs = generate_samples(&toy_scenario(), count, Execution::Parallel).unwrap();
        let refs: Vec<&ChannelMatrix> = hs.iter().collect();
        let mut model = Model::new(cfg, &mut substream(3, &[purpose::INIT])).unwrap();
        model.set_input_scale(input_scale_for(&refs).unwrap()).unwrap();
        let reports = reports_for(&refs, &toy_cqi(), model.config().cqi_mode).unwrap();
        (model, hs, reports)
    }

    #[test]
    fn adam_matches_closed_form() {
        // f(x) = (x − 3)², gradient 2(x − 3)
        let cfg = TrainConfig {
            lr: 0.1,
            ..Default::default()
        };
        let mut store = ParamStore::new();
        store.insert("x", Tensor::scalar(0.5)).unwrap();
        let mut adam = Adam::new(&cfg, &store);
        let (mut x, mut m, mut v) = (0.5f64, 0.0f64, 0.0f64);
        for t in 1..=10 {
            let g = 2.0 * (store.tensors()[0].data()[0] - 3.0);
            adam.update(&mut store, &[vec![g]]).unwrap();
            let gr = 2.0 * (x - 3.0);
            m = 0.9 * m + 0.1 * gr;
            v = 0.999 * v + 0.001 * gr * gr;
            let mh = m / (1.0 - 0.9f64.powi(t));
            let vh = v / (1.0 - 0.999f64.powi(t));
            x -= 0.1 * mh / (vh.sqrt() + 1e-8);
            assert!((store.tensors()[0].data()[0] - x).abs() < 1e-12);
        }
    }

    #[test]
    fn mse_loss_examples() {
        let hs = generate_samples(&toy_scenario(), 3, Execution::Sequential).unwrap();
        assert_eq!(mse_loss(&hs, &hs).unwrap(), 0.0);
        let z = ChannelMatrix::zeros(4, 8);
        assert!((mse_loss(&[z.clone()], &hs[..1]).unwrap() - hs[0].frobenius_sq()).abs() < 1e-30);
        let brute: f64 = hs[0]
            .as_slice()
            .iter()
            .zip(hs[1].as_slice())
            .map(|(a, b)| (a.re - b.re).powi(2) + (a.im - b.im).powi(2))
            .sum::<f64>()
            + hs[1]
                .as_slice()
                .iter()
                .zip(hs[2].as_slice())
                .map(|(a, b)| (a.re - b.re).powi(2) + (a.im - b.im).powi(2))
                .sum::<f64>();
        let got = mse_loss(&hs[..2], &hs[1..]).unwrap();
        assert!((got - brute / 2.0).abs() <= 1e-12 * got);
        assert!(mse_loss(&hs[..1], &[ChannelMatrix::zeros(2, 8)]).is_err());
        assert!(mse_loss(&hs[..1], &hs).is_err());
    }

    #[test]
    fn zero_learning_rate_is_inert() {
        let (model, hs, reports) = setup(16, ModelConfig::toy());
        let refs: Vec<&ChannelMatrix> = hs.iter().collect();
        let cfg = TrainConfig {
            lr: 0.0,
            steps: 3,
            batch_size: 8,
            ..Default::default()
        };
        let before = model.params().clone();
        let mut state = TrainState::new(model, &cfg);
        train(&mut state, &refs, &reports, &cfg, Execution::Parallel, |_, _| Ok(())).unwrap();
        assert_eq!(state.step, 3);
        for (a, b) in before.tensors().iter().zip(state.model.params().tensors()) {
            let same = a.data().iter().zip(b.data()).all(|(x, y)| x.to_bits() == y.to_bits());
            assert!(same);
        }
    }

    fn run(cfg: &TrainConfig, exec: Execution) -> (Vec<f64>, TrainState) {
        let (model, hs, reports) = setup(24, ModelConfig::toy());
        let refs: Vec<&ChannelMatrix> = hs.iter().collect();
        let mut state = TrainState::new(model, cfg);
        let mut losses = Vec::new();
        train(&mut state, &refs, &reports, cfg, exec, |l, _| {
            losses.push(l.loss);
            Ok(())
        })
        .unwrap();
        (losses, state)
    }

    #[test]
    fn training_is_deterministic_across_policies() {
        let cfg = TrainConfig {
            steps: 5,
            batch_size: 10,
            ..Default::default()
        };
        let (a, sa) = run(&cfg, Execution::Parallel);
        let (b, sb) = run(&cfg, Execution::Sequential);
        assert_eq!(a, b);
        assert_eq!(sa.model.params(), sb.model.params());
    }

    #[test]
    fn resume_is_bit_exact() {
        let cfg = TrainConfig {
            steps: 6,
            batch_size: 8,
            ..Default::default()
        };
        let (_, full) = run(&cfg, Execution::Parallel);

        let (_, half) = run(&TrainConfig { steps: 3, ..cfg.clone() }, Execution::Parallel);
        let bytes = half.to_checkpoint(&cfg, &toy_cqi()).unwrap().to_bytes().unwrap();
        let mut resumed = TrainState::from_checkpoint(&Checkpoint::from_bytes(&bytes).unwrap(), &cfg).unwrap();
        assert_eq!(resumed.step, 3);
        let (_, hs, reports) = setup(24, ModelConfig::toy());
        let refs: Vec<&ChannelMatrix> = hs.iter().collect();
        train(&mut resumed, &refs, &reports, &cfg, Execution::Parallel, |_, _| Ok(())).unwrap();
        assert_eq!(full.model.params(), resumed.model.params());
        assert_eq!(full.adam.m, resumed.adam.m);
        assert_eq!(full.loss_ema.unwrap().to_bits(), resumed.loss_ema.unwrap().to_bits());
    }

    #[test]
    fn overfits_a_small_set() {
        let (model, hs, reports) = setup(32, ModelConfig::toy());
        let refs: Vec<&ChannelMatrix> = hs.iter().collect();
        let cfg = TrainConfig {
            steps: 500,
            batch_size: 32,
            snr_policy: SnrPolicy::Noiseless,
            ..Default::default()
        };
        let mut state = TrainState::new(model, &cfg);
        let mut losses = Vec::new();
        train(&mut state, &refs, &reports, &cfg, Execution::Parallel, |l, _| {
            losses.push(l.loss);
            Ok(())
        })
        .unwrap();
        let first = losses[0];
        let last = losses[losses.len() - 10..].iter().sum::<f64>() / 10.0;
        assert!(last * 10.0 <= first, "loss {first} -> {last}");
    }

    #[test]
    fn divergence_is_reported() {
        let (mut model, hs, reports) = setup(4, ModelConfig::toy());
        let id = model.params().id("dec.head.b").unwrap();
        model.params_mut().get_mut(id).data_mut()[0] = f64::MAX;
        let cfg = TrainConfig {
            snr_policy: SnrPolicy::Fixed,
            snr_db: -5.0,
            ..Default::default()
        };
        let mut state = TrainState::new(model, &cfg);
        let batch: Vec<_> = hs.iter().zip(&reports).collect();
        match train_step(&mut state, &batch, &cfg, Execution::Sequential) {
            Err(Error::Diverged { step, tau, snr_db }) => {
                assert_eq!((step, tau, snr_db), (0, 1.0, -5.0));
            }
            other => panic!("expected divergence, got {other:?}"),
        }
    }

    #[test]
    fn evaluation_contracts() {
        let (mut model, hs, reports) = setup(12, ModelConfig::toy());
        let refs: Vec<&ChannelMatrix> = hs.iter().collect();
        for name in ["dec.head.w", "dec.head.b"] {
            let id = model.params().id(name).unwrap();
            model.params_mut().get_mut(id).data_mut().fill(0.0);
        }
        let cfg = EvalConfig {
            snr_list: vec![-10.0, f64::INFINITY],
            ..Default::default()
        };
        let rows = evaluate(&model, &refs, &reports, &cfg, Execution::Parallel).unwrap();
        assert_eq!(rows.len(), 2);
        assert!(rows.iter().all(|r| r.nmse_db == 0.0));
        assert!(rows.iter().all(|r| r.sgcs.is_nan()));

        let (big, _, _) = setup(1, ModelConfig::toy());
        let wrong = vec![ChannelMatrix::zeros(4, 16)];
        let wrong_refs: Vec<&ChannelMatrix> = wrong.iter().collect();
        assert!(matches!(
            evaluate(&big, &wrong_refs, &reports[..1], &cfg, Execution::Parallel),
            Err(Error::Config(_))
        ));
    }

    #[test]
    fn evaluation_is_reproducible_and_compositional() {
        let (model, hs, reports) = setup(10, ModelConfig::toy());
        let refs: Vec<&ChannelMatrix> = hs.iter().collect();
        let cfg = EvalConfig::default();
        let a = evaluate(&model, &refs, &reports, &cfg, Execution::Parallel).unwrap();
        let b = evaluate(&model, &refs, &reports, &cfg, Execution::Sequential).unwrap();
        assert_eq!(a, b);

        let soft = EvalConfig {
            snr_list: vec![f64::INFINITY],
            mode: EvalMode::Soft,
            seed: 0,
        };
        let row = &evaluate(&model, &refs, &reports, &soft, Execution::Parallel).unwrap()[0];
        // direct composition: encode, tempered softmax, decode, rescale
        let mut direct = Vec::new();
        for (h, k) in hs.iter().zip(&reports) {
            let mut tape = Tape::new();
            let p = model.bind(&mut tape);
            let logits = model.encode(&mut tape, &p, h, k).unwrap();
            let mut rng = substream(0, &[]);
            let (s, _) = model
                .modulate(&mut tape, logits, SymbolMode::Soft { tau: 0.1, gumbel: false }, &mut rng)
                .unwrap();
            let out = model.decode(&mut tape, &p, s, k).unwrap();
            let h_hat = model.to_channel(tape.value(out)).unwrap();
            direct.push(nmse_sample(h, &h_hat).unwrap());
        }
        let expect = to_db(direct.iter().sum::<f64>() / direct.len() as f64);
        assert!((row.nmse_db - expect).abs() < 1e-12);
    }

    #[test]
    fn csv_layouts() {
        let mut buf = Vec::new();
        write_metrics_csv(
            &mut buf,
            &[StepLog {
                step: 0,
                loss: 1.5,
                tau: 1.0,
                snr_db: None,
            }],
            true,
        )
        .unwrap();
        assert_eq!(String::from_utf8(buf).unwrap(), "step,loss,tau,snr_db\n0,1.5,1,inf\n");
        let mut buf = Vec::new();
        write_eval_csv(
            &mut buf,
            &[EvalRow {
                snr_db: -10.0,
                cr: 0.125,
                cqi_mode: CqiMode::Subband,
                mod_mode: ModulationMode::Jcm,
                nmse_db: -3.5,
                sgcs: 0.75,
            }],
        )
        .unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert_eq!(
            text,
            "snr_db,cr,cqi_mode,mod_mode,nmse_db,sgcs\n-10,0.125,subband,jcm,-3.5,0.75\n"
        );
    }
}
