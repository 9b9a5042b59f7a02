//! Interpretation tools: co-polarized array responses of designed
//! parameters, attention-score export, and head-ablation gain curves.
//!
//! Convention note: the net response uses the conjugated steering phase, so
//! the response of a beamformer that is matched to the channel's departure
//! direction peaks at that direction (rather than its mirror image). The
//! per-antenna polarization weighting `J p` is unaffected.

use num_complex::Complex64;
use serde::{Deserialize, Serialize};
use std::io::Write;

use crate::channel::{antenna_gain_matrix, steering_vector, AntennaGainForm, ChannelConfig, DepolarizedChannel};
use crate::error::{Error, Result};
use crate::polarization::{
    effective_channel, ipo_optimize, polarization_matrix, svd_beamformers, Beamformer, IpoOptions,
    PolarizationConfig,
};
use crate::policy::transformer::TransformerPolicy;
use crate::policy::AttentionTrace;
use crate::protocol::ProtocolConfig;
use crate::rng;
use crate::training::{evaluate_average_gain, EvalMethod, StageGainStats};

/// Power of a (polarization, beamformer) design across departure angles.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ArrayResponseCurve {
    /// Strictly increasing angles in radians over `[-pi/2, pi/2]`.
    pub theta_grid: Vec<f64>,
    pub power: Vec<f64>,
    pub power_db: Vec<f64>,
    /// Grid angle of the maximum response.
    pub argmax_theta: f64,
    /// Which parameters produced the curve.
    pub tag: String,
}

/// 721-point grid over `[-pi/2, pi/2]` (quarter-degree steps).
pub fn default_theta_grid() -> Vec<f64> {
    let n = 721;
    (0..n)
        .map(|k| -std::f64::consts::FRAC_PI_2 + std::f64::consts::PI * k as f64 / (n - 1) as f64)
        .collect()
}

/// Net array response at one probe angle: row `k` is the conjugated steering
/// phase times the antenna-gain-weighted polarization vector `J p_k`. The
/// first column is the co-polarized response, the second cross-polarized.
pub fn array_net_response(
    angles: &PolarizationConfig,
    chi_ant: f64,
    form: AntennaGainForm,
    theta: f64,
) -> Vec<[Complex64; 2]> {
    let j = antenna_gain_matrix(chi_ant, form);
    let a = steering_vector(angles.len(), theta).expect("validated angles imply n >= 1");
    angles
        .angles()
        .iter()
        .enumerate()
        .map(|(k, th)| {
            let p = [th.cos(), th.sin()];
            let jp = [j[0][0] * p[0] + j[0][1] * p[1], j[1][0] * p[0] + j[1][1] * p[1]];
            [a[k].conj() * jp[0], a[k].conj() * jp[1]]
        })
        .collect()
}

/// Co-polarized column of the net response.
pub fn co_polarized_response(
    angles: &PolarizationConfig,
    chi_ant: f64,
    form: AntennaGainForm,
    theta: f64,
) -> Vec<Complex64> {
    array_net_response(angles, chi_ant, form, theta).into_iter().map(|row| row[0]).collect()
}

/// `r(theta) = |w^H a_C(theta)|^2` over a grid.
pub fn response_power(
    w: &Beamformer,
    angles: &PolarizationConfig,
    chi_ant: f64,
    form: AntennaGainForm,
    theta_grid: &[f64],
    tag: &str,
) -> Result<ArrayResponseCurve> {
    if theta_grid.is_empty() {
        return Err(Error::invalid("response grid must not be empty"));
    }
    if w.len() != angles.len() {
        return Err(Error::invalid("beamformer and polarization angles must agree in length"));
    }
    for pair in theta_grid.windows(2) {
        if pair[1] <= pair[0] {
            return Err(Error::invalid("response grid must be strictly increasing"));
        }
    }
    let mut power = Vec::with_capacity(theta_grid.len());
    let mut best = (0usize, f64::NEG_INFINITY);
    for (i, &theta) in theta_grid.iter().enumerate() {
        let ac = co_polarized_response(angles, chi_ant, form, theta);
        let m: Complex64 = w.values().iter().zip(&ac).map(|(wv, av)| wv.conj() * av).sum();
        let r = m.norm_sqr();
        if r > best.1 {
            best = (i, r);
        }
        power.push(r);
    }
    let power_db = power.iter().map(|p| 10.0 * p.max(1e-300).log10()).collect();
    Ok(ArrayResponseCurve {
        theta_grid: theta_grid.to_vec(),
        power,
        power_db,
        argmax_theta: theta_grid[best.0],
        tag: tag.to_string(),
    })
}

/// Perfect-CSI downlink response of a channel's Tx side.
pub fn perfect_csi_tx_response(
    channel: &DepolarizedChannel,
    opts: &IpoOptions,
    theta_grid: &[f64],
) -> Result<ArrayResponseCurve> {
    let sol = ipo_optimize(channel, opts)?;
    response_power(
        &sol.w_tx,
        &sol.angles_tx,
        channel.config.chi_ant,
        channel.config.antenna_gain_form,
        theta_grid,
        "perfect-csi",
    )
}

/// Uniform-random polarization paired with the SVD beamformer of the
/// resulting effective channel.
pub fn random_polarization_tx_response(
    channel: &DepolarizedChannel,
    seed: u64,
    theta_grid: &[f64],
) -> Result<ArrayResponseCurve> {
    use rand::Rng;
    let mut r = rng::stream(seed, 0x8a9d);
    let half_pi = std::f64::consts::FRAC_PI_2;
    let tx = PolarizationConfig::new((0..channel.n_tx()).map(|_| r.random_range(0.0..half_pi)).collect())?;
    let rx = PolarizationConfig::new((0..channel.n_rx()).map(|_| r.random_range(0.0..half_pi)).collect())?;
    let eff = effective_channel(&channel.matrix, &polarization_matrix(&rx), &polarization_matrix(&tx))?;
    let bf = svd_beamformers(&eff)?;
    response_power(
        &bf.w_tx,
        &tx,
        channel.config.chi_ant,
        channel.config.antenna_gain_form,
        theta_grid,
        "random-polarization",
    )
}

/// Serialized attention heatmap for one layer/head.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AttentionHeatmap {
    pub layer: usize,
    pub head: usize,
    pub matrix: Vec<Vec<f64>>,
}

/// Export a trace as JSON heatmaps, verifying row-stochasticity first.
pub fn export_attention(trace: &AttentionTrace, sink: &mut impl Write) -> Result<()> {
    if trace.is_empty() {
        return Err(Error::invalid("attention trace is empty"));
    }
    let maps = attention_heatmaps(trace)?;
    serde_json::to_writer(&mut *sink, &maps)?;
    sink.write_all(b"\n")?;
    Ok(())
}

fn attention_heatmaps(trace: &AttentionTrace) -> Result<Vec<AttentionHeatmap>> {
    let mut maps = Vec::new();
    for layer in 0..trace.n_layers {
        for head in 0..trace.n_heads {
            let matrix = trace.dense(layer, head);
            for (q, row) in matrix.iter().enumerate() {
                let sum: f64 = row.iter().sum();
                if (sum - 1.0).abs() > 1e-6 {
                    return Err(Error::Integrity(format!(
                        "attention row (layer {layer}, head {head}, query {q}) sums to {sum}"
                    )));
                }
            }
            maps.push(AttentionHeatmap { layer, head, matrix });
        }
    }
    Ok(maps)
}

/// Parse heatmaps back (round-trip checks and downstream tooling).
pub fn parse_attention(data: &str) -> Result<Vec<AttentionHeatmap>> {
    Ok(serde_json::from_str(data)?)
}

/// How the ablated head subset is chosen for each count.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum HeadSelection {
    /// Heads `0..k`.
    FirstK,
    /// A random subset of size `k`, drawn from the given seed.
    RandomK { seed: u64 },
}

/// One row of the head-ablation table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationRow {
    pub head_count: usize,
    pub heads: Vec<usize>,
    /// Per-stage statistics of the ablated model.
    pub stages: Vec<StageGainStats>,
    /// Final-stage summary.
    pub mean_gain_db: f64,
    pub stderr_db: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationTable {
    pub rows: Vec<AblationRow>,
    /// Whether final-stage gain is non-decreasing in the head count.
    /// Reported, not asserted.
    pub monotone_nondecreasing: bool,
}

/// Evaluate the transformer pair with `k`-head subsets for each requested
/// count, under common random numbers (same seed for every row).
pub fn head_ablation_gain(
    tx: &TransformerPolicy,
    rx: &TransformerPolicy,
    head_counts: &[usize],
    channel_cfg: &ChannelConfig,
    proto: &ProtocolConfig,
    episodes: usize,
    eval_seed: u64,
    selection: HeadSelection,
) -> Result<AblationTable> {
    let m = tx.config().n_heads;
    if rx.config().n_heads != m {
        return Err(Error::invalid("tx and rx policies must have the same head count"));
    }
    let mut rows = Vec::with_capacity(head_counts.len());
    for &k in head_counts {
        if k == 0 {
            return Err(Error::invalid("head count 0 is not evaluable"));
        }
        if k > m {
            return Err(Error::invalid(format!("head count {k} exceeds the model's {m} heads")));
        }
        let heads: Vec<usize> = match selection {
            HeadSelection::FirstK => (0..k).collect(),
            HeadSelection::RandomK { seed } => {
                use rand::seq::SliceRandom;
                let mut r = rng::stream(seed, k as u64);
                let mut all: Vec<usize> = (0..m).collect();
                all.shuffle(&mut r);
                let mut subset: Vec<usize> = all.into_iter().take(k).collect();
                subset.sort_unstable();
                subset
            }
        };
        let tx_abl = tx.isolate_heads_all_layers(&heads)?;
        let rx_abl = rx.isolate_heads_all_layers(&heads)?;
        let stages = evaluate_average_gain(
            &EvalMethod::Pair(&tx_abl, &rx_abl),
            channel_cfg,
            proto,
            episodes,
            eval_seed,
        )?;
        let last = stages.last().expect("at least one stage").clone();
        rows.push(AblationRow {
            head_count: k,
            heads,
            stages,
            mean_gain_db: last.mean_db,
            stderr_db: last.stderr_db,
        });
    }
    let mut sorted = rows.clone();
    sorted.sort_by_key(|r| r.head_count);
    let monotone = sorted.windows(2).all(|w| w[1].mean_gain_db >= w[0].mean_gain_db - 1e-12);
    Ok(AblationTable { rows, monotone_nondecreasing: monotone })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::channel::sample_channel;
    use crate::oracles;
    use crate::policy::transformer::TransformerConfig;

    #[test]
    fn net_response_single_antenna_trivial() {
        let angles = PolarizationConfig::new(vec![0.0]).unwrap();
        let resp = array_net_response(&angles, 0.0, AntennaGainForm::Printed, 0.0);
        assert!((resp[0][0] - Complex64::ONE).norm() < 1e-15);
        assert!(resp[0][1].norm() < 1e-15);
    }

    #[test]
    fn net_response_single_antenna_magnitude_angle_independent() {
        let angles = PolarizationConfig::new(vec![0.7]).unwrap();
        let base = array_net_response(&angles, 0.3, AntennaGainForm::Printed, 0.0)[0][0].norm();
        for theta in [-1.2, -0.3, 0.4, 1.5] {
            let m = array_net_response(&angles, 0.3, AntennaGainForm::Printed, theta)[0][0].norm();
            assert!((m - base).abs() < 1e-12);
        }
    }

    #[test]
    fn net_response_matches_naive_expansion() {
        let angles = PolarizationConfig::new(vec![0.3, 1.1]).unwrap();
        for theta in [-0.9f64, 0.0, 0.77] {
            let fast = array_net_response(&angles, 0.3, AntennaGainForm::Printed, theta);
            let naive =
                oracles::naive_array_net_response(angles.angles(), 0.3, AntennaGainForm::Printed, theta);
            for (a, b) in fast.iter().zip(&naive) {
                assert!((a[0] - b[0]).norm() < 1e-12);
                assert!((a[1] - b[1]).norm() < 1e-12);
            }
        }
    }

    #[test]
    fn matched_filter_peaks_at_matched_angle() {
        let n = 8;
        let theta0 = 0.35f64;
        let angles = PolarizationConfig::uniform(n, 0.6).unwrap();
        let ac = co_polarized_response(&angles, 0.3, AntennaGainForm::Printed, theta0);
        let w = Beamformer::normalized(ac).unwrap();
        let grid = default_theta_grid();
        let curve = response_power(&w, &angles, 0.3, AntennaGainForm::Printed, &grid, "matched").unwrap();
        let step = grid[1] - grid[0];
        assert!(
            (curve.argmax_theta - theta0).abs() <= step + 1e-12,
            "matched filter peak at {} but matched {theta0}",
            curve.argmax_theta
        );
        assert!(curve.power.iter().all(|p| *p >= 0.0));
    }

    #[test]
    fn response_scales_quadratically() {
        let angles = PolarizationConfig::uniform(4, 0.2).unwrap();
        let ac = co_polarized_response(&angles, 0.3, AntennaGainForm::Printed, 0.1);
        let w = Beamformer::normalized(ac).unwrap();
        let grid: Vec<f64> = vec![-0.4, 0.0, 0.1, 0.5];
        let base = response_power(&w, &angles, 0.3, AntennaGainForm::Printed, &grid, "t").unwrap();
        // Scaling a_C by c scales r by |c|^2; equivalent to scaling chi_ant's
        // gain matrix, checked here by direct recomputation.
        for (i, &theta) in grid.iter().enumerate() {
            let ac = co_polarized_response(&angles, 0.3, AntennaGainForm::Printed, theta);
            let scaled: Complex64 =
                w.values().iter().zip(&ac).map(|(wv, av)| wv.conj() * (av * 3.0)).sum();
            assert!((scaled.norm_sqr() - 9.0 * base.power[i]).abs() < 1e-9 * (1.0 + base.power[i]));
        }
    }

    #[test]
    fn perfect_csi_single_path_peak_near_aod() {
        for seed in 0..10u64 {
            let mut cfg = ChannelConfig::new(16, 4, 1);
            cfg.chi = 0.2;
            cfg.chi_ant = 0.3;
            let ch = sample_channel(&cfg, seed).unwrap();
            let aod = ch.paths[0].aod;
            let grid = default_theta_grid();
            let curve = perfect_csi_tx_response(&ch, &IpoOptions::default(), &grid).unwrap();
            let err_deg = (curve.argmax_theta - aod).abs() * 180.0 / std::f64::consts::PI;
            assert!(err_deg <= 0.5, "seed {seed}: peak {} vs aod {aod} ({err_deg} deg)", curve.argmax_theta);
        }
    }

    #[test]
    fn attention_export_roundtrip_and_integrity() {
        let mut trace = AttentionTrace::new(1, 2);
        trace.rows[0][0] = vec![vec![1.0], vec![0.25, 0.75], vec![0.1, 0.4, 0.5]];
        trace.rows[0][1] = vec![vec![1.0], vec![0.6, 0.4], vec![0.2, 0.3, 0.5]];
        let mut buf = Vec::new();
        export_attention(&trace, &mut buf).unwrap();
        let parsed = parse_attention(std::str::from_utf8(&buf).unwrap()).unwrap();
        assert_eq!(parsed.len(), 2);
        assert_eq!(parsed[0].matrix[2], vec![0.1, 0.4, 0.5]);
        assert_eq!(parsed[1].matrix[1], vec![0.6, 0.4, 0.0]);
        for hm in &parsed {
            for row in &hm.matrix {
                let s: f64 = row.iter().sum();
                assert!((s - 1.0).abs() < 1e-9);
            }
        }

        // A non-stochastic row is an integrity error.
        let mut bad = AttentionTrace::new(1, 1);
        bad.rows[0][0] = vec![vec![0.9]];
        let mut sink = Vec::new();
        assert!(matches!(export_attention(&bad, &mut sink), Err(Error::Integrity(_))));
    }

    #[test]
    fn single_observation_trace_exports_identity() {
        let mut trace = AttentionTrace::new(2, 3);
        for l in 0..2 {
            for h in 0..3 {
                trace.rows[l][h] = vec![vec![1.0]];
            }
        }
        let mut buf = Vec::new();
        export_attention(&trace, &mut buf).unwrap();
        let parsed = parse_attention(std::str::from_utf8(&buf).unwrap()).unwrap();
        assert_eq!(parsed.len(), 6);
        assert!(parsed.iter().all(|hm| hm.matrix == vec![vec![1.0]]));
    }

    #[test]
    fn ablation_full_set_reproduces_plain_evaluation() {
        let mk = |n: usize, tag: u64| {
            let cfg = TransformerConfig {
                d_emb: 16,
                n_heads: 2,
                n_layers: 1,
                ffn_hidden: 16,
                mlp_hidden: 12,
                n_antennas: n,
                max_stages: 3,
                attention_scale: crate::policy::transformer::AttentionScale::SqrtDEmb,
                causal_mask: true,
                beamformer_mode: crate::policy::BeamformerMode::ComplexPairing,
            };
            TransformerPolicy::init(cfg, &mut rng::stream(55, tag)).unwrap()
        };
        let tx = mk(3, 1);
        let rx = mk(2, 2);
        let ccfg = ChannelConfig::new(3, 2, 1);
        let proto = ProtocolConfig::from_snr_db(3, 0.0);
        let table =
            head_ablation_gain(&tx, &rx, &[2, 1], &ccfg, &proto, 16, 77, HeadSelection::FirstK).unwrap();
        let direct = evaluate_average_gain(&EvalMethod::Pair(&tx, &rx), &ccfg, &proto, 16, 77).unwrap();
        let full_row = table.rows.iter().find(|r| r.head_count == 2).unwrap();
        assert_eq!(full_row.stages, direct, "full-head ablation must equal the unablated evaluation");
        assert!(head_ablation_gain(&tx, &rx, &[0], &ccfg, &proto, 4, 1, HeadSelection::FirstK).is_err());
    }
}
