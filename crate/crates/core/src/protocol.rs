//! The alternating (ping-pong) pilot protocol.
//!
//! At stage `l` the transmitter sends a pilot that the receiver observes,
//! the receiver answers with its own pilot over the reciprocal channel, and
//! both sides then emit downlink parameters from everything they have heard
//! so far. Those downlink parameters are scored by the beamforming gain.
//!
//! Episodes run on a [`Tape`], so the whole interaction is differentiable:
//! gradients flow from late-stage gains back through pilot observations into
//! early-stage policy outputs.

use num_complex::Complex64;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{CPair, Tape, Tensor, TensorId};
use crate::channel::DepolarizedChannel;
use crate::error::{Error, Result};
use crate::linalg::CMat;
use crate::policy::{AttentionTrace, PolicyEpisode, Role, StagePolicy, StageParamIds};
use crate::rng;

/// Protocol-level constants for one experiment.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProtocolConfig {
    /// Number of ping-pong stages `L`.
    pub n_stages: usize,
    /// Pilot powers (linear).
    pub rho_tx: f64,
    pub rho_rx: f64,
    /// Noise variances (linear). Zero is allowed for noiseless runs.
    pub sigma2_tx: f64,
    pub sigma2_rx: f64,
    /// Skip the final reverse (Rx to Tx) pilot: nothing consumes it.
    pub skip_final_reverse_pilot: bool,
}

impl ProtocolConfig {
    /// Unit pilot powers with noise variance `10^(-snr_db/10)` on both sides.
    pub fn from_snr_db(n_stages: usize, snr_db: f64) -> Self {
        let sigma2 = 10f64.powf(-snr_db / 10.0);
        ProtocolConfig {
            n_stages,
            rho_tx: 1.0,
            rho_rx: 1.0,
            sigma2_tx: sigma2,
            sigma2_rx: sigma2,
            skip_final_reverse_pilot: false,
        }
    }

    pub fn noiseless(n_stages: usize) -> Self {
        ProtocolConfig {
            n_stages,
            rho_tx: 1.0,
            rho_rx: 1.0,
            sigma2_tx: 0.0,
            sigma2_rx: 0.0,
            skip_final_reverse_pilot: false,
        }
    }

    /// SNR in dB implied by the Rx-side noise variance at unit power.
    pub fn snr_db(&self) -> f64 {
        -10.0 * self.sigma2_rx.log10()
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_stages == 0 {
            return Err(Error::invalid("protocol needs at least one stage"));
        }
        if self.rho_tx <= 0.0 || self.rho_rx <= 0.0 {
            return Err(Error::invalid("pilot powers must be positive"));
        }
        if self.sigma2_tx < 0.0 || self.sigma2_rx < 0.0 {
            return Err(Error::invalid("noise variances must be nonnegative"));
        }
        Ok(())
    }
}

/// One emitted parameter set, as values.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StageParams {
    pub role: Role,
    pub angles: Vec<f64>,
    pub beamformer: Vec<Complex64>,
}

const ANGLE_SLACK: f64 = 1e-12;
const NORM_SLACK: f64 = 1e-9;

impl StageParams {
    /// Protocol contract: angles in `[0, pi/2]`, unit-norm beamformer.
    pub fn validate(&self, n: usize, mapping: &str) -> Result<()> {
        if self.angles.len() != n || self.beamformer.len() != n {
            return Err(Error::ContractViolation {
                mapping: mapping.to_string(),
                detail: format!(
                    "expected {n} antennas, got {} angles / {} beamformer entries",
                    self.angles.len(),
                    self.beamformer.len()
                ),
            });
        }
        for (k, a) in self.angles.iter().enumerate() {
            if !a.is_finite() || *a < -ANGLE_SLACK || *a > std::f64::consts::FRAC_PI_2 + ANGLE_SLACK {
                return Err(Error::ContractViolation {
                    mapping: mapping.to_string(),
                    detail: format!("angle {k} = {a} outside [0, pi/2]"),
                });
            }
        }
        let norm: f64 = self.beamformer.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt();
        if !norm.is_finite() || (norm - 1.0).abs() > NORM_SLACK {
            return Err(Error::ContractViolation {
                mapping: mapping.to_string(),
                detail: format!("beamformer norm {norm} violates unit constraint"),
            });
        }
        Ok(())
    }
}

/// Pilot-stage parameter sets recorded for one stage.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StagePilotRecord {
    pub tx_transmit: StageParams,
    pub rx_receive: StageParams,
    /// Absent when the final reverse pilot is skipped.
    pub rx_transmit: Option<StageParams>,
    pub tx_receive: Option<StageParams>,
}

/// Full transcript of one episode.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpisodeRecord {
    pub channel_seed: Option<u64>,
    /// Pilots observed at the Rx (one per stage).
    pub y_rx: Vec<Complex64>,
    /// Pilots observed at the Tx (one per stage, or one fewer when the final
    /// reverse pilot is skipped).
    pub y_tx: Vec<Complex64>,
    pub pilots: Vec<StagePilotRecord>,
    /// Per-stage downlink parameters (Tx, Rx).
    pub downlink: Vec<(StageParams, StageParams)>,
    /// Per-stage downlink beamforming gains.
    pub gains: Vec<f64>,
    pub attention_tx: Option<AttentionTrace>,
    pub attention_rx: Option<AttentionTrace>,
}

/// An episode plus the tape handles needed to train on it.
pub struct Episode<'p> {
    pub record: EpisodeRecord,
    pub stage_gain_nodes: Vec<TensorId>,
    /// Sum of the per-stage downlink gains.
    pub gain_sum: TensorId,
    /// Final policy states, for gradient extraction and traces.
    pub tx_state: Box<dyn PolicyEpisode + 'p>,
    pub rx_state: Box<dyn PolicyEpisode + 'p>,
}

/// Received pilot: `y = w_rec^H P_rec^T H P_send w_send sqrt(power) + noise`.
///
/// The caller picks `h` for the direction: the forward matrix for a Tx-to-Rx
/// pilot, its conjugate transpose for the reverse link.
pub fn observe_pilot(
    h: &CMat,
    sender: &StageParams,
    receiver: &StageParams,
    power: f64,
    noise: Complex64,
) -> Result<Complex64> {
    let (ns, nr) = (sender.angles.len(), receiver.angles.len());
    if h.cols() != 2 * ns || h.rows() != 2 * nr {
        return Err(Error::invalid(format!(
            "pilot direction mismatch: H is {}x{}, sender {ns}, receiver {nr}",
            h.rows(),
            h.cols()
        )));
    }
    if power < 0.0 {
        return Err(Error::invalid("pilot power must be nonnegative"));
    }
    // P_send w_send
    let mut v = Vec::with_capacity(2 * ns);
    for (a, w) in sender.angles.iter().zip(&sender.beamformer) {
        v.push(w * a.cos());
        v.push(w * a.sin());
    }
    let z = h.matvec(&v);
    // w_rec^H P_rec^T z
    let mut m = Complex64::ZERO;
    for (k, (a, w)) in receiver.angles.iter().zip(&receiver.beamformer).enumerate() {
        let u = z[2 * k] * a.cos() + z[2 * k + 1] * a.sin();
        m += w.conj() * u;
    }
    Ok(m * power.sqrt() + noise)
}

/// Channel matrices loaded onto a tape as constants.
pub struct ChannelNodes {
    h_re: TensorId,
    h_im: TensorId,
    hh_re: TensorId,
    hh_im: TensorId,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PilotDirection {
    /// Tx sends, Rx observes (through `H`).
    Forward,
    /// Rx sends, Tx observes (through `H^H`).
    Reverse,
}

impl ChannelNodes {
    pub fn new(tape: &mut Tape, channel: &DepolarizedChannel) -> Self {
        let h = &channel.matrix;
        let (rows, cols) = (h.rows(), h.cols());
        let mut re = Vec::with_capacity(rows * cols);
        let mut im = Vec::with_capacity(rows * cols);
        for z in h.data() {
            re.push(z.re);
            im.push(z.im);
        }
        let hh = h.adjoint();
        let mut hre = Vec::with_capacity(rows * cols);
        let mut him = Vec::with_capacity(rows * cols);
        for z in hh.data() {
            hre.push(z.re);
            him.push(z.im);
        }
        ChannelNodes {
            h_re: tape.constant(Tensor::new(rows, cols, re)),
            h_im: tape.constant(Tensor::new(rows, cols, im)),
            hh_re: tape.constant(Tensor::new(cols, rows, hre)),
            hh_im: tape.constant(Tensor::new(cols, rows, him)),
        }
    }
}

/// `P w` on the tape: expand per-antenna weights onto polarization
/// components as a `(2N, 1)` complex column.
fn polarized_signal(tape: &mut Tape, p: &StageParamIds) -> (CPair, usize) {
    let n = tape.value(p.angles).cols;
    let c = tape.cos(p.angles);
    let s = tape.sin(p.angles);
    let cr = tape.mul(c, p.w_re);
    let sr = tape.mul(s, p.w_re);
    let ci = tape.mul(c, p.w_im);
    let si = tape.mul(s, p.w_im);
    let cr = tape.reshape(cr, n, 1);
    let sr = tape.reshape(sr, n, 1);
    let ci = tape.reshape(ci, n, 1);
    let si = tape.reshape(si, n, 1);
    let re = tape.interleave2(cr, sr);
    let im = tape.interleave2(ci, si);
    (CPair { re, im }, n)
}

/// Noiseless bilinear pilot term `w_rec^H P_rec^T H P_send w_send` as a
/// `(1,1)` complex pair.
fn pilot_signal(
    tape: &mut Tape,
    ch: &ChannelNodes,
    dir: PilotDirection,
    sender: &StageParamIds,
    receiver: &StageParamIds,
) -> CPair {
    let (v, _ns) = polarized_signal(tape, sender);
    let (hre, him) = match dir {
        PilotDirection::Forward => (ch.h_re, ch.h_im),
        PilotDirection::Reverse => (ch.hh_re, ch.hh_im),
    };
    // z = H v (complex matvec over paired real channels)
    let rr = tape.matmul(hre, v.re);
    let ii = tape.matmul(him, v.im);
    let z_re = tape.sub(rr, ii);
    let ri = tape.matmul(hre, v.im);
    let ir = tape.matmul(him, v.re);
    let z_im = tape.add(ri, ir);
    // u = P_rec^T z
    let nr = tape.value(receiver.angles).cols;
    let c = tape.cos(receiver.angles);
    let s = tape.sin(receiver.angles);
    let c = tape.reshape(c, nr, 1);
    let s = tape.reshape(s, nr, 1);
    let ze_re = tape.stride2(z_re, 0);
    let zo_re = tape.stride2(z_re, 1);
    let ze_im = tape.stride2(z_im, 0);
    let zo_im = tape.stride2(z_im, 1);
    let ue1 = tape.mul(c, ze_re);
    let ue2 = tape.mul(s, zo_re);
    let u_re = tape.add(ue1, ue2);
    let ui1 = tape.mul(c, ze_im);
    let ui2 = tape.mul(s, zo_im);
    let u_im = tape.add(ui1, ui2);
    // m = w_rec^H u = (wre - i wim)^T (u_re + i u_im)
    let a = tape.matmul(receiver.w_re, u_re);
    let b = tape.matmul(receiver.w_im, u_im);
    let m_re = tape.add(a, b);
    let c2 = tape.matmul(receiver.w_re, u_im);
    let d2 = tape.matmul(receiver.w_im, u_re);
    let m_im = tape.sub(c2, d2);
    CPair { re: m_re, im: m_im }
}

/// Received pilot on the tape, with pilot power and an additive noise sample.
pub fn pilot_observation_node(
    tape: &mut Tape,
    ch: &ChannelNodes,
    dir: PilotDirection,
    sender: &StageParamIds,
    receiver: &StageParamIds,
    power: f64,
    noise: Complex64,
) -> CPair {
    let m = pilot_signal(tape, ch, dir, sender, receiver);
    let sp = power.sqrt();
    let m_re = tape.scale(m.re, sp);
    let m_im = tape.scale(m.im, sp);
    let n_re = tape.constant_scalar(noise.re);
    let n_im = tape.constant_scalar(noise.im);
    CPair { re: tape.add(m_re, n_re), im: tape.add(m_im, n_im) }
}

/// Downlink beamforming gain `|w_rx^H P_rx^T H P_tx w_tx|^2` on the tape.
pub fn gain_node(tape: &mut Tape, ch: &ChannelNodes, tx: &StageParamIds, rx: &StageParamIds) -> TensorId {
    let m = pilot_signal(tape, ch, PilotDirection::Forward, tx, rx);
    let re2 = tape.mul(m.re, m.re);
    let im2 = tape.mul(m.im, m.im);
    tape.add(re2, im2)
}

fn extract_params(tape: &Tape, ids: &StageParamIds, role: Role) -> StageParams {
    let angles = tape.value(ids.angles).data.clone();
    let re = &tape.value(ids.w_re).data;
    let im = &tape.value(ids.w_im).data;
    let beamformer = re.iter().zip(im).map(|(r, i)| Complex64::new(*r, *i)).collect();
    StageParams { role, angles, beamformer }
}

fn emit_validated(
    tape: &mut Tape,
    ep: &mut dyn PolicyEpisode,
    role: Role,
    n: usize,
    side: &str,
    stage: usize,
) -> Result<(StageParamIds, StageParams)> {
    let ids = ep.emit(tape, role);
    let params = extract_params(tape, &ids, role);
    let mapping = format!("{side} {} mapping at stage {stage}", role.as_str());
    params.validate(n, &mapping)?;
    Ok((ids, params))
}

/// Run one full episode on the tape.
///
/// Stage order: (1) Tx pilot out, Rx observes; (2) Rx pilot back, Tx observes
/// (skippable at the last stage); (3) both sides emit downlink parameters and
/// the stage gain is logged. Noise is drawn from `noise_rng` in that order,
/// so a fixed seed reproduces the episode bit for bit.
pub fn run_episode<'p>(
    tape: &mut Tape,
    channel: &DepolarizedChannel,
    tx_policy: &'p dyn StagePolicy,
    rx_policy: &'p dyn StagePolicy,
    config: &ProtocolConfig,
    noise_rng: &mut ChaCha8Rng,
) -> Result<Episode<'p>> {
    config.validate()?;
    if tx_policy.n_antennas() != channel.n_tx() || rx_policy.n_antennas() != channel.n_rx() {
        return Err(Error::invalid(format!(
            "policy sides ({}, {}) do not match channel ({}, {})",
            tx_policy.n_antennas(),
            rx_policy.n_antennas(),
            channel.n_tx(),
            channel.n_rx()
        )));
    }
    let (n_tx, n_rx) = (channel.n_tx(), channel.n_rx());
    let ch = ChannelNodes::new(tape, channel);
    let mut tx_ep = tx_policy.begin_episode(tape);
    let mut rx_ep = rx_policy.begin_episode(tape);

    let mut record = EpisodeRecord {
        channel_seed: channel.seed,
        y_rx: Vec::with_capacity(config.n_stages),
        y_tx: Vec::with_capacity(config.n_stages),
        pilots: Vec::with_capacity(config.n_stages),
        downlink: Vec::with_capacity(config.n_stages),
        gains: Vec::with_capacity(config.n_stages),
        attention_tx: None,
        attention_rx: None,
    };
    let mut stage_gain_nodes = Vec::with_capacity(config.n_stages);
    let mut gain_sum: Option<TensorId> = None;

    for stage in 0..config.n_stages {
        // (1) Tx -> Rx pilot.
        let (tx_t_ids, tx_t) = emit_validated(tape, tx_ep.as_mut(), Role::PilotTransmit, n_tx, "Tx", stage)?;
        let (rx_r_ids, rx_r) = emit_validated(tape, rx_ep.as_mut(), Role::PilotReceive, n_rx, "Rx", stage)?;
        let noise_rx = rng::complex_gaussian(noise_rng, config.sigma2_rx);
        let y_rx = pilot_observation_node(tape, &ch, PilotDirection::Forward, &tx_t_ids, &rx_r_ids, config.rho_tx, noise_rx);
        record.y_rx.push(Complex64::new(tape.value_scalar(y_rx.re), tape.value_scalar(y_rx.im)));
        rx_ep.observe(tape, y_rx);

        // (2) Rx -> Tx pilot, unless skipped at the final stage.
        let skip_reverse = config.skip_final_reverse_pilot && stage + 1 == config.n_stages;
        let (rx_t, tx_r) = if skip_reverse {
            (None, None)
        } else {
            let (rx_t_ids, rx_t) = emit_validated(tape, rx_ep.as_mut(), Role::PilotTransmit, n_rx, "Rx", stage)?;
            let (tx_r_ids, tx_r) = emit_validated(tape, tx_ep.as_mut(), Role::PilotReceive, n_tx, "Tx", stage)?;
            let noise_tx = rng::complex_gaussian(noise_rng, config.sigma2_tx);
            let y_tx =
                pilot_observation_node(tape, &ch, PilotDirection::Reverse, &rx_t_ids, &tx_r_ids, config.rho_rx, noise_tx);
            record.y_tx.push(Complex64::new(tape.value_scalar(y_tx.re), tape.value_scalar(y_tx.im)));
            tx_ep.observe(tape, y_tx);
            (Some(rx_t), Some(tx_r))
        };
        record.pilots.push(StagePilotRecord { tx_transmit: tx_t, rx_receive: rx_r, rx_transmit: rx_t, tx_receive: tx_r });

        // (3) Downlink design and gain logging.
        let (dl_tx_ids, dl_tx) = emit_validated(tape, tx_ep.as_mut(), Role::Downlink, n_tx, "Tx", stage)?;
        let (dl_rx_ids, dl_rx) = emit_validated(tape, rx_ep.as_mut(), Role::Downlink, n_rx, "Rx", stage)?;
        let g = gain_node(tape, &ch, &dl_tx_ids, &dl_rx_ids);
        record.gains.push(tape.value_scalar(g));
        record.downlink.push((dl_tx, dl_rx));
        stage_gain_nodes.push(g);
        gain_sum = Some(match gain_sum {
            None => g,
            Some(acc) => tape.add(acc, g),
        });
    }
    tape.take_fault()?;

    record.attention_tx = tx_ep.attention_trace();
    record.attention_rx = rx_ep.attention_trace();
    Ok(Episode {
        record,
        stage_gain_nodes,
        gain_sum: gain_sum.expect("at least one stage"),
        tx_state: tx_ep,
        rx_state: rx_ep,
    })
}
