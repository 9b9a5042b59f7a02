//! Unsupervised end-to-end training through the unrolled protocol.
//!
//! Every step samples a batch of fresh channels, runs one episode per
//! channel, and backpropagates the negated sum of per-stage downlink gains
//! through the whole interaction: gradients reach early-stage policy outputs
//! through the pilot observations they produced. Episodes within a batch run
//! on independent tapes; batches are split into fixed-size chunks whose
//! gradients are reduced in chunk order, so results are bit-identical at any
//! thread count.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::autodiff::Tape;
use crate::channel::{sample_channel, ChannelConfig, DepolarizedChannel};
use crate::error::{Error, Result};
use crate::policy::perfect_csi::perfect_csi_policies;
use crate::policy::{GradAccum, ParamStore, ParamTensor, PolicyPair, StagePolicy};
use crate::polarization::IpoOptions;
use crate::protocol::{run_episode, EpisodeRecord, ProtocolConfig};
use crate::rng;

/// Fixed chunking of a batch; keeps parallel gradient reduction order
/// independent of the thread count.
const CHUNK: usize = 8;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    /// Initial learning rate.
    pub lr0: f64,
    /// Per-step exponential decay factor.
    pub gamma: f64,
    pub batch_size: usize,
    pub batches_per_epoch: usize,
    /// Stop after this many epochs without best-loss improvement.
    pub patience_epochs: usize,
    pub max_epochs: usize,
    pub eval_episodes: usize,
    pub seed: u64,
    /// Divide the per-episode gain sum by the stage count inside the loss.
    /// Constant scaling; leaves the minimizer unchanged.
    pub normalize_by_stages: bool,
}

impl TrainConfig {
    pub fn desk(seed: u64) -> Self {
        TrainConfig {
            lr0: 3e-4,
            gamma: 0.9997,
            batch_size: 128,
            batches_per_epoch: 50,
            patience_epochs: 10,
            max_epochs: 60,
            eval_episodes: 2000,
            seed,
            normalize_by_stages: false,
        }
    }

    pub fn paper(seed: u64) -> Self {
        TrainConfig {
            lr0: 1e-4,
            gamma: 0.9999,
            batch_size: 1024,
            batches_per_epoch: 100,
            patience_epochs: 25,
            max_epochs: 1000,
            eval_episodes: 10_000,
            seed,
            normalize_by_stages: false,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.lr0 <= 0.0 {
            return Err(Error::invalid("lr0 must be positive"));
        }
        if self.gamma <= 0.0 || self.gamma > 1.0 {
            return Err(Error::invalid("gamma must be in (0, 1]"));
        }
        if self.patience_epochs == 0 {
            return Err(Error::invalid("patience must be at least 1 epoch"));
        }
        if self.batch_size == 0 || self.batches_per_epoch == 0 || self.max_epochs == 0 {
            return Err(Error::invalid("batch, epoch, and step counts must be positive"));
        }
        Ok(())
    }
}

/// Exponential schedule `lr0 * gamma^t`, `t` counting optimizer steps.
pub fn lr_schedule(t: u64, lr0: f64, gamma: f64) -> f64 {
    lr0 * gamma.powf(t as f64)
}

/// Adam hyperparameters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdamParams {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamParams {
    fn default() -> Self {
        AdamParams { beta1: 0.9, beta2: 0.999, eps: 1e-8 }
    }
}

/// First/second moment accumulators, index-parallel to a store.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdamState {
    pub m: Vec<Vec<f64>>,
    pub v: Vec<Vec<f64>>,
    pub t: u64,
}

impl AdamState {
    pub fn zeros_like(store: &ParamStore) -> Self {
        AdamState {
            m: store.tensors().iter().map(|t| vec![0.0; t.data.len()]).collect(),
            v: store.tensors().iter().map(|t| vec![0.0; t.data.len()]).collect(),
            t: 0,
        }
    }
}

/// One Adam update over every trainable tensor in the store.
///
/// Non-finite gradients are a numeric fault: the state and parameters are
/// left untouched so the caller can skip the step.
pub fn adam_step(
    store: &mut ParamStore,
    grads: &GradAccum,
    state: &mut AdamState,
    lr: f64,
    hp: &AdamParams,
) -> Result<()> {
    if !grads.is_finite() {
        return Err(Error::NumericFault { context: "adam gradients".into() });
    }
    state.t += 1;
    let t = state.t as f64;
    let bc1 = 1.0 - hp.beta1.powf(t);
    let bc2 = 1.0 - hp.beta2.powf(t);
    for (i, tensor) in store.tensors_mut().iter_mut().enumerate() {
        if !tensor.trainable {
            continue;
        }
        let g = &grads.grads[i];
        let m = &mut state.m[i];
        let v = &mut state.v[i];
        for k in 0..tensor.data.len() {
            m[k] = hp.beta1 * m[k] + (1.0 - hp.beta1) * g[k];
            v[k] = hp.beta2 * v[k] + (1.0 - hp.beta2) * g[k] * g[k];
            let mhat = m[k] / bc1;
            let vhat = v[k] / bc2;
            tensor.data[k] -= lr * mhat / (vhat.sqrt() + hp.eps);
        }
    }
    Ok(())
}

/// Training loss over a batch of episode records:
/// `-(1/B) sum_e sum_l gain_l` (optionally with a `1/L` factor).
pub fn episode_loss(records: &[EpisodeRecord], normalize_by_stages: bool) -> Result<f64> {
    if records.is_empty() {
        return Err(Error::invalid("episode_loss needs a nonempty batch"));
    }
    let total: f64 = records
        .iter()
        .map(|r| {
            let s: f64 = r.gains.iter().sum();
            if normalize_by_stages {
                s / r.gains.len() as f64
            } else {
                s
            }
        })
        .sum();
    Ok(-total / records.len() as f64)
}

/// Where training channels come from.
#[derive(Debug, Clone)]
pub enum ChannelSource {
    /// Fresh realization per episode.
    Random(ChannelConfig),
    /// The same realization for every episode (overfit runs).
    Frozen(DepolarizedChannel),
}

impl ChannelSource {
    fn channel_for(&self, seed: u64) -> Result<DepolarizedChannel> {
        match self {
            ChannelSource::Random(cfg) => sample_channel(cfg, seed),
            ChannelSource::Frozen(ch) => Ok(ch.clone()),
        }
    }

    pub fn channel_config(&self) -> &ChannelConfig {
        match self {
            ChannelSource::Random(cfg) => cfg,
            ChannelSource::Frozen(ch) => &ch.config,
        }
    }
}

/// Loss and parameter gradients of one batch at the pair's current weights.
pub fn batch_grads(
    pair: &PolicyPair,
    source: &ChannelSource,
    proto: &ProtocolConfig,
    step_seed: u64,
    batch_size: usize,
    normalize_by_stages: bool,
) -> Result<(f64, GradAccum, GradAccum)> {
    let (store_tx, store_rx) = pair.stores();
    let norm = if normalize_by_stages { proto.n_stages as f64 } else { 1.0 };
    let scale = 1.0 / (batch_size as f64 * norm);

    let indices: Vec<usize> = (0..batch_size).collect();
    let chunk_results: Vec<Result<(f64, GradAccum, GradAccum)>> = indices
        .par_chunks(CHUNK)
        .map(|chunk| {
            let mut acc_tx = GradAccum::zeros_like(store_tx);
            let mut acc_rx = GradAccum::zeros_like(store_rx);
            let mut loss_sum = 0.0;
            for &e in chunk {
                let channel_seed = rng::derive_seed(step_seed, 2 * e as u64);
                let noise_seed = rng::derive_seed(step_seed, 2 * e as u64 + 1);
                let channel = source.channel_for(channel_seed)?;
                let mut tape = Tape::new(true);
                let mut noise_rng = rng::stream(noise_seed, rng::tags::NOISE);
                let ep = run_episode(&mut tape, &channel, pair.tx(), pair.rx(), proto, &mut noise_rng)?;
                let gain_sum: f64 = ep.record.gains.iter().sum();
                loss_sum += -gain_sum / norm;
                tape.backward_seeded(ep.gain_sum, -scale)?;
                ep.tx_state.accumulate_grads(&tape, &mut acc_tx);
                ep.rx_state.accumulate_grads(&tape, &mut acc_rx);
            }
            Ok((loss_sum, acc_tx, acc_rx))
        })
        .collect();

    let mut acc_tx = GradAccum::zeros_like(store_tx);
    let mut acc_rx = GradAccum::zeros_like(store_rx);
    let mut loss = 0.0;
    for r in chunk_results {
        let (l, ctx, crx) = r?;
        loss += l;
        acc_tx.add_from(&ctx);
        acc_rx.add_from(&crx);
    }
    Ok((loss / batch_size as f64, acc_tx, acc_rx))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainRecord {
    pub step: u64,
    pub epoch: usize,
    pub loss: f64,
    pub lr: f64,
}

#[derive(Debug, Clone)]
pub struct EpochStats {
    pub epoch: usize,
    pub mean_loss: f64,
    pub lr: f64,
    pub improved: bool,
}

pub struct TrainOutcome {
    /// The trained pair, restored to the best epoch's parameters.
    pub pair: PolicyPair,
    pub history: Vec<TrainRecord>,
    pub best_epoch: usize,
    pub best_loss: f64,
    pub epochs_run: usize,
    pub steps_run: u64,
    pub skipped_steps: u64,
}

/// Train a policy pair end to end.
///
/// Early-stops when the per-epoch mean training loss has not improved for
/// `patience_epochs` epochs; the returned pair carries the parameters of the
/// best epoch.
pub fn train(
    mut pair: PolicyPair,
    source: &ChannelSource,
    proto: &ProtocolConfig,
    cfg: &TrainConfig,
    mut on_epoch: impl FnMut(&EpochStats),
) -> Result<TrainOutcome> {
    cfg.validate()?;
    proto.validate()?;
    source.channel_config().validate()?;

    let hp = AdamParams::default();
    let (store_tx, store_rx) = pair.stores();
    let mut adam_tx = AdamState::zeros_like(store_tx);
    let mut adam_rx = AdamState::zeros_like(store_rx);
    let mut best: (f64, usize, Vec<ParamTensor>, Vec<ParamTensor>) = (
        f64::INFINITY,
        0,
        store_tx.tensors().to_vec(),
        store_rx.tensors().to_vec(),
    );
    let mut history = Vec::new();
    let mut step: u64 = 0;
    let mut skipped: u64 = 0;
    let mut stale_epochs = 0usize;
    let mut epochs_run = 0usize;

    'epochs: for epoch in 0..cfg.max_epochs {
        epochs_run = epoch + 1;
        let mut epoch_loss_sum = 0.0;
        for _ in 0..cfg.batches_per_epoch {
            let lr = lr_schedule(step, cfg.lr0, cfg.gamma);
            let step_seed = rng::derive_seed(rng::derive_seed(cfg.seed, rng::tags::TRAIN), step);
            let (loss, gtx, grx) = batch_grads(&pair, source, proto, step_seed, cfg.batch_size, cfg.normalize_by_stages)
                .map_err(|e| match e {
                    Error::NumericFault { context } => {
                        Error::NumericFault { context: format!("{context} (train step {step})") }
                    }
                    other => other,
                })?;
            let (mtx, mrx) = pair.stores_mut();
            let applied = adam_step(mtx, &gtx, &mut adam_tx, lr, &hp)
                .and_then(|_| adam_step(mrx, &grx, &mut adam_rx, lr, &hp));
            if applied.is_err() {
                skipped += 1;
            }
            epoch_loss_sum += loss;
            history.push(TrainRecord { step, epoch, loss, lr });
            step += 1;
        }
        let mean_loss = epoch_loss_sum / cfg.batches_per_epoch as f64;
        let improved = mean_loss < best.0;
        if improved {
            let (stx, srx) = pair.stores();
            best = (mean_loss, epoch, stx.tensors().to_vec(), srx.tensors().to_vec());
            stale_epochs = 0;
        } else {
            stale_epochs += 1;
        }
        on_epoch(&EpochStats { epoch, mean_loss, lr: lr_schedule(step, cfg.lr0, cfg.gamma), improved });
        if stale_epochs >= cfg.patience_epochs {
            break 'epochs;
        }
    }

    // Restore the best parameters.
    {
        let (mtx, mrx) = pair.stores_mut();
        for (dst, src) in mtx.tensors_mut().iter_mut().zip(&best.2) {
            dst.data.clone_from(&src.data);
        }
        for (dst, src) in mrx.tensors_mut().iter_mut().zip(&best.3) {
            dst.data.clone_from(&src.data);
        }
    }
    Ok(TrainOutcome {
        pair,
        history,
        best_epoch: best.1,
        best_loss: best.0,
        epochs_run,
        steps_run: step,
        skipped_steps: skipped,
    })
}

/// Per-stage evaluation statistics.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StageGainStats {
    pub stage: usize,
    pub mean_linear: f64,
    pub stderr_linear: f64,
    pub mean_db: f64,
    pub stderr_db: f64,
}

/// What to evaluate.
pub enum EvalMethod<'a> {
    /// A concrete Tx/Rx policy pair.
    Pair(&'a dyn StagePolicy, &'a dyn StagePolicy),
    /// Per-channel perfect-CSI solve held fixed through the episode.
    PerfectCsi(IpoOptions),
}

/// Mean per-stage downlink gain over fresh noisy episodes.
///
/// Channel and noise realizations are derived from `seed` alone, so
/// different methods evaluated with the same seed see identical conditions
/// (common random numbers).
pub fn evaluate_average_gain(
    method: &EvalMethod,
    channel_cfg: &ChannelConfig,
    proto: &ProtocolConfig,
    episodes: usize,
    seed: u64,
) -> Result<Vec<StageGainStats>> {
    if episodes == 0 {
        return Err(Error::invalid("evaluation needs at least one episode"));
    }
    proto.validate()?;
    channel_cfg.validate()?;
    let l = proto.n_stages;

    let indices: Vec<usize> = (0..episodes).collect();
    let chunk_results: Vec<Result<(Vec<f64>, Vec<f64>)>> = indices
        .par_chunks(CHUNK)
        .map(|chunk| {
            let mut sums = vec![0.0; l];
            let mut sumsq = vec![0.0; l];
            for &e in chunk {
                let eval_seed = rng::derive_seed(seed, rng::tags::EVAL);
                let channel_seed = rng::derive_seed(eval_seed, 2 * e as u64);
                let noise_seed = rng::derive_seed(eval_seed, 2 * e as u64 + 1);
                let channel = sample_channel(channel_cfg, channel_seed)?;
                let mut noise_rng = rng::stream(noise_seed, rng::tags::NOISE);
                let mut tape = Tape::new(false);
                let gains = match method {
                    EvalMethod::Pair(tx, rx) => {
                        run_episode(&mut tape, &channel, *tx, *rx, proto, &mut noise_rng)?.record.gains
                    }
                    EvalMethod::PerfectCsi(opts) => {
                        let sol = perfect_csi_policies(&channel, opts)?;
                        let ep = run_episode(&mut tape, &channel, &sol.tx, &sol.rx, proto, &mut noise_rng)?;
                        let gains = ep.record.gains.clone();
                        drop(ep);
                        gains
                    }
                };
                for (s, g) in sums.iter_mut().zip(&gains) {
                    *s += g;
                }
                for (s, g) in sumsq.iter_mut().zip(&gains) {
                    *s += g * g;
                }
            }
            Ok((sums, sumsq))
        })
        .collect();

    let mut sums = vec![0.0; l];
    let mut sumsq = vec![0.0; l];
    for r in chunk_results {
        let (s, q) = r?;
        for (a, b) in sums.iter_mut().zip(&s) {
            *a += b;
        }
        for (a, b) in sumsq.iter_mut().zip(&q) {
            *a += b;
        }
    }
    let n = episodes as f64;
    Ok((0..l)
        .map(|stage| {
            let mean = sums[stage] / n;
            let var = if episodes > 1 { (sumsq[stage] - n * mean * mean) / (n - 1.0) } else { 0.0 };
            let stderr = (var.max(0.0) / n).sqrt();
            StageGainStats {
                stage,
                mean_linear: mean,
                stderr_linear: stderr,
                mean_db: 10.0 * mean.log10(),
                stderr_db: 10.0 / std::f64::consts::LN_10 * stderr / mean,
            }
        })
        .collect())
}

/// Central finite-difference check of the full batched training loss against
/// the backward pass, probing `probes_per_tensor` coordinates of every
/// trainable tensor. Returns `(tensor name, max relative error)` per tensor.
pub fn finite_difference_loss_check(
    pair: &mut PolicyPair,
    source: &ChannelSource,
    proto: &ProtocolConfig,
    batch_size: usize,
    step_seed: u64,
    h: f64,
    probes_per_tensor: usize,
    probe_seed: u64,
) -> Result<Vec<(String, f64)>> {
    use rand::Rng;
    let (loss0, gtx, grx) = batch_grads(pair, source, proto, step_seed, batch_size, false)?;
    let _ = loss0;
    let mut out = Vec::new();
    let mut prng = rng::stream(probe_seed, 0xfdc);
    for side in 0..2 {
        let store_len = {
            let stores = pair.stores();
            if side == 0 { stores.0.len() } else { stores.1.len() }
        };
        for ti in 0..store_len {
            let (name, trainable, len) = {
                let stores = pair.stores();
                let t = if side == 0 { &stores.0.tensors()[ti] } else { &stores.1.tensors()[ti] };
                (t.name.clone(), t.trainable, t.data.len())
            };
            if !trainable {
                continue;
            }
            let grads = if side == 0 { &gtx } else { &grx };
            let mut worst = 0.0f64;
            for _ in 0..probes_per_tensor {
                let k = prng.random_range(0..len);
                let analytic = grads.grads[ti][k];
                let mut eval_at = |delta: f64| -> Result<f64> {
                    {
                        let stores = pair.stores_mut();
                        let t = if side == 0 { &mut stores.0.tensors_mut()[ti] } else { &mut stores.1.tensors_mut()[ti] };
                        t.data[k] += delta;
                    }
                    let r = batch_grads(pair, source, proto, step_seed, batch_size, false).map(|(l, _, _)| l);
                    {
                        let stores = pair.stores_mut();
                        let t = if side == 0 { &mut stores.0.tensors_mut()[ti] } else { &mut stores.1.tensors_mut()[ti] };
                        t.data[k] -= delta;
                    }
                    r
                };
                let plus = eval_at(h)?;
                let minus = eval_at(-h)?;
                let numeric = (plus - minus) / (2.0 * h);
                let err = (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1e-8);
                worst = worst.max(err);
            }
            let side_name = if side == 0 { "tx" } else { "rx" };
            out.push((format!("{side_name}.{name}"), worst));
        }
    }
    Ok(out)
}
