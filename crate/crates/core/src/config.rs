//! Experiment configuration: a plain `key = value` format with dotted
//! section keys, two presets (`desk` and `paper`), and cross-field
//! validation.

use serde::{Deserialize, Serialize};

use crate::channel::{AntennaGainForm, ChannelConfig, PathGainNorm, PsiMode};
use crate::error::{Error, Result};
use crate::policy::gru::GruConfig;
use crate::policy::nonadaptive::NonAdaptiveConfig;
use crate::policy::transformer::{AttentionScale, TransformerConfig};
use crate::policy::{BeamformerMode, PolicyKind};
use crate::protocol::ProtocolConfig;
use crate::training::TrainConfig;

/// Model hyperparameters shared by both sides (antenna counts come from the
/// channel config).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub policy: PolicyKind,
    pub d_emb: usize,
    pub n_heads: usize,
    pub n_layers: usize,
    pub ffn_hidden: usize,
    pub mlp_hidden: usize,
    pub attention_scale: AttentionScale,
    pub causal_mask: bool,
    pub beamformer_mode: BeamformerMode,
    pub gru_hidden: usize,
    pub gru_input_proj: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub seed: u64,
    pub output_dir: String,
    pub channel: ChannelConfig,
    pub protocol: ProtocolConfig,
    pub model: ModelConfig,
    pub train: TrainConfig,
}

impl ExperimentConfig {
    /// Desk-scale preset: small enough to train on a laptop-class machine.
    pub fn desk() -> Self {
        ExperimentConfig {
            seed: 1,
            output_dir: "out".into(),
            channel: ChannelConfig::new(16, 8, 1),
            protocol: ProtocolConfig::from_snr_db(6, 0.0),
            model: ModelConfig {
                policy: PolicyKind::Transformer,
                d_emb: 64,
                n_heads: 4,
                n_layers: 2,
                ffn_hidden: 128,
                mlp_hidden: 128,
                attention_scale: AttentionScale::SqrtDEmb,
                causal_mask: true,
                beamformer_mode: BeamformerMode::ComplexPairing,
                gru_hidden: 256,
                gru_input_proj: 64,
            },
            train: TrainConfig::desk(1),
        }
    }

    /// Source-scale preset (not expected to train in reasonable time here).
    pub fn paper() -> Self {
        ExperimentConfig {
            seed: 1,
            output_dir: "out".into(),
            channel: ChannelConfig::new(64, 32, 3),
            protocol: ProtocolConfig::from_snr_db(10, 0.0),
            model: ModelConfig {
                policy: PolicyKind::Transformer,
                d_emb: 320,
                n_heads: 5,
                n_layers: 2,
                ffn_hidden: 640,
                mlp_hidden: 512,
                attention_scale: AttentionScale::SqrtDEmb,
                causal_mask: true,
                beamformer_mode: BeamformerMode::ComplexPairing,
                gru_hidden: 256,
                gru_input_proj: 64,
            },
            train: TrainConfig::paper(1),
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.channel.validate()?;
        self.protocol.validate()?;
        self.train.validate()?;
        let m = &self.model;
        if m.d_emb == 0 || m.n_heads == 0 || m.n_layers == 0 || m.ffn_hidden == 0 || m.mlp_hidden == 0 {
            return Err(Error::Validation("model dimensions must be at least 1".into()));
        }
        if m.d_emb % m.n_heads != 0 {
            return Err(Error::Validation(format!(
                "model.d_emb = {} must be divisible by model.n_heads = {}",
                m.d_emb, m.n_heads
            )));
        }
        if m.d_emb % 2 != 0 {
            return Err(Error::Validation("model.d_emb must be even (real/imaginary halves)".into()));
        }
        if m.gru_hidden == 0 || m.gru_input_proj == 0 {
            return Err(Error::Validation("gru dimensions must be at least 1".into()));
        }
        Ok(())
    }

    /// Transformer instance for one side.
    pub fn transformer_config(&self, n_antennas: usize) -> TransformerConfig {
        TransformerConfig {
            d_emb: self.model.d_emb,
            n_heads: self.model.n_heads,
            n_layers: self.model.n_layers,
            ffn_hidden: self.model.ffn_hidden,
            mlp_hidden: self.model.mlp_hidden,
            n_antennas,
            max_stages: self.protocol.n_stages,
            attention_scale: self.model.attention_scale,
            causal_mask: self.model.causal_mask,
            beamformer_mode: self.model.beamformer_mode,
        }
    }

    pub fn gru_config(&self, n_antennas: usize) -> GruConfig {
        GruConfig {
            hidden: self.model.gru_hidden,
            input_proj: self.model.gru_input_proj,
            mlp_hidden: self.model.mlp_hidden,
            n_antennas,
            beamformer_mode: self.model.beamformer_mode,
        }
    }

    pub fn nonadaptive_config(&self, n_antennas: usize) -> NonAdaptiveConfig {
        NonAdaptiveConfig {
            n_antennas,
            n_stages: self.protocol.n_stages,
            mlp_hidden: self.model.mlp_hidden,
            beamformer_mode: self.model.beamformer_mode,
        }
    }

    /// Stable 64-bit hash of the canonical serialized form, for artifact
    /// headers.
    pub fn content_hash(&self) -> u64 {
        let json = serde_json::to_string(self).expect("config serializes");
        fnv1a64(json.as_bytes())
    }
}

pub fn fnv1a64(bytes: &[u8]) -> u64 {
    let mut hash: u64 = 0xcbf2_9ce4_8422_2325;
    for b in bytes {
        hash ^= *b as u64;
        hash = hash.wrapping_mul(0x0000_0100_0000_01b3);
    }
    hash
}

fn parse_bool(v: &str, line: usize) -> Result<bool> {
    match v {
        "true" | "on" | "yes" => Ok(true),
        "false" | "off" | "no" => Ok(false),
        _ => Err(Error::Parse { line, msg: format!("expected a boolean, got '{v}'") }),
    }
}

fn parse_num<T: std::str::FromStr>(v: &str, line: usize, what: &str) -> Result<T> {
    v.parse().map_err(|_| Error::Parse { line, msg: format!("expected {what}, got '{v}'") })
}

/// Parse the `key = value` config text. Presets (`preset = desk|paper`) seed
/// the defaults; later keys override. Unknown keys are hard errors.
pub fn parse_config_str(text: &str) -> Result<ExperimentConfig> {
    // First pass: find the preset (it must come before any override it would
    // clobber, so we simply require it to be the first non-comment key).
    let mut cfg = ExperimentConfig::desk();
    let mut snr_db: Option<f64> = None;
    let mut seen_any_key = false;

    for (idx, raw) in text.lines().enumerate() {
        let line_no = idx + 1;
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let Some((key, value)) = line.split_once('=') else {
            return Err(Error::Parse { line: line_no, msg: format!("expected 'key = value', got '{line}'") });
        };
        let key = key.trim();
        let v = value.trim();
        match key {
            "preset" => {
                if seen_any_key {
                    return Err(Error::Parse {
                        line: line_no,
                        msg: "preset must appear before any other key".into(),
                    });
                }
                cfg = match v {
                    "desk" => ExperimentConfig::desk(),
                    "paper" => ExperimentConfig::paper(),
                    _ => {
                        return Err(Error::Parse { line: line_no, msg: format!("unknown preset '{v}'") })
                    }
                };
            }
            "seed" => cfg.seed = parse_num(v, line_no, "an integer seed")?,
            "output_dir" => cfg.output_dir = v.to_string(),
            "channel.n_tx" => cfg.channel.n_tx = parse_num(v, line_no, "a positive integer")?,
            "channel.n_rx" => cfg.channel.n_rx = parse_num(v, line_no, "a positive integer")?,
            "channel.n_paths" => cfg.channel.n_paths = parse_num(v, line_no, "a positive integer")?,
            "channel.chi" => cfg.channel.chi = parse_num(v, line_no, "a number")?,
            "channel.chi_ant" => cfg.channel.chi_ant = parse_num(v, line_no, "a number")?,
            "channel.psi_mode" => {
                cfg.channel.psi_mode = if v == "uniform" {
                    PsiMode::Uniform
                } else {
                    PsiMode::Fixed(parse_num(v, line_no, "'uniform' or an angle in radians")?)
                };
            }
            "channel.path_gain_normalization" => {
                cfg.channel.path_gain_normalization = match v {
                    "none" => PathGainNorm::None,
                    "sqrt-paths" => PathGainNorm::DivideBySqrtPaths,
                    _ => {
                        return Err(Error::Parse {
                            line: line_no,
                            msg: format!("expected 'none' or 'sqrt-paths', got '{v}'"),
                        })
                    }
                };
            }
            "channel.antenna_gain_form" => {
                cfg.channel.antenna_gain_form = match v {
                    "printed" => AntennaGainForm::Printed,
                    "symmetric" => AntennaGainForm::Symmetric,
                    _ => {
                        return Err(Error::Parse {
                            line: line_no,
                            msg: format!("expected 'printed' or 'symmetric', got '{v}'"),
                        })
                    }
                };
            }
            "protocol.n_stages" => cfg.protocol.n_stages = parse_num(v, line_no, "a positive integer")?,
            "protocol.snr_db" => snr_db = Some(parse_num(v, line_no, "a number")?),
            "protocol.rho_tx" => cfg.protocol.rho_tx = parse_num(v, line_no, "a number")?,
            "protocol.rho_rx" => cfg.protocol.rho_rx = parse_num(v, line_no, "a number")?,
            "protocol.sigma2_tx" => cfg.protocol.sigma2_tx = parse_num(v, line_no, "a number")?,
            "protocol.sigma2_rx" => cfg.protocol.sigma2_rx = parse_num(v, line_no, "a number")?,
            "protocol.skip_final_reverse_pilot" => {
                cfg.protocol.skip_final_reverse_pilot = parse_bool(v, line_no)?
            }
            "model.policy" => {
                cfg.model.policy = match v {
                    "transformer" => PolicyKind::Transformer,
                    "gru" => PolicyKind::Gru,
                    "nonadaptive" => PolicyKind::NonAdaptive,
                    _ => {
                        return Err(Error::Parse {
                            line: line_no,
                            msg: format!("expected 'transformer', 'gru', or 'nonadaptive', got '{v}'"),
                        })
                    }
                };
            }
            "model.d_emb" => cfg.model.d_emb = parse_num(v, line_no, "a positive integer")?,
            "model.n_heads" => cfg.model.n_heads = parse_num(v, line_no, "a positive integer")?,
            "model.n_layers" => cfg.model.n_layers = parse_num(v, line_no, "a positive integer")?,
            "model.ffn_hidden" => cfg.model.ffn_hidden = parse_num(v, line_no, "a positive integer")?,
            "model.mlp_hidden" => cfg.model.mlp_hidden = parse_num(v, line_no, "a positive integer")?,
            "model.attention_scale" => {
                cfg.model.attention_scale = match v {
                    "sqrt-d-emb" => AttentionScale::SqrtDEmb,
                    "sqrt-d-head" => AttentionScale::SqrtDHead,
                    _ => {
                        return Err(Error::Parse {
                            line: line_no,
                            msg: format!("expected 'sqrt-d-emb' or 'sqrt-d-head', got '{v}'"),
                        })
                    }
                };
            }
            "model.causal_mask" => cfg.model.causal_mask = parse_bool(v, line_no)?,
            "model.beamformer_mode" => {
                cfg.model.beamformer_mode = match v {
                    "complex-pairing" => BeamformerMode::ComplexPairing,
                    "real-sum" => BeamformerMode::RealSum,
                    _ => {
                        return Err(Error::Parse {
                            line: line_no,
                            msg: format!("expected 'complex-pairing' or 'real-sum', got '{v}'"),
                        })
                    }
                };
            }
            "model.gru_hidden" => cfg.model.gru_hidden = parse_num(v, line_no, "a positive integer")?,
            "model.gru_input_proj" => cfg.model.gru_input_proj = parse_num(v, line_no, "a positive integer")?,
            "train.lr0" => cfg.train.lr0 = parse_num(v, line_no, "a number")?,
            "train.gamma" => cfg.train.gamma = parse_num(v, line_no, "a number")?,
            "train.batch_size" => cfg.train.batch_size = parse_num(v, line_no, "a positive integer")?,
            "train.batches_per_epoch" => {
                cfg.train.batches_per_epoch = parse_num(v, line_no, "a positive integer")?
            }
            "train.patience_epochs" => cfg.train.patience_epochs = parse_num(v, line_no, "a positive integer")?,
            "train.max_epochs" => cfg.train.max_epochs = parse_num(v, line_no, "a positive integer")?,
            "train.eval_episodes" => cfg.train.eval_episodes = parse_num(v, line_no, "a positive integer")?,
            "train.normalize_by_stages" => cfg.train.normalize_by_stages = parse_bool(v, line_no)?,
            _ => {
                return Err(Error::Parse { line: line_no, msg: format!("unknown key '{key}'") });
            }
        }
        if key != "preset" {
            seen_any_key = true;
        }
        if key == "seed" {
            cfg.train.seed = cfg.seed;
        }
    }
    if let Some(snr) = snr_db {
        let sigma2 = 10f64.powf(-snr / 10.0);
        cfg.protocol.sigma2_tx = sigma2;
        cfg.protocol.sigma2_rx = sigma2;
    }
    cfg.validate()?;
    Ok(cfg)
}

/// Parse a config file from disk.
pub fn parse_config(path: &std::path::Path) -> Result<ExperimentConfig> {
    let text = std::fs::read_to_string(path)?;
    parse_config_str(&text)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn desk_preset_defaults() {
        let cfg = parse_config_str("preset = desk\n").unwrap();
        assert_eq!(cfg.channel.n_tx, 16);
        assert_eq!(cfg.channel.n_rx, 8);
        assert_eq!(cfg.protocol.n_stages, 6);
        assert_eq!(cfg.model.d_emb, 64);
        assert_eq!(cfg.model.n_heads, 4);
        assert_eq!(cfg.model.n_layers, 2);
    }

    #[test]
    fn paper_preset_defaults() {
        let cfg = parse_config_str("preset = paper\n").unwrap();
        assert_eq!(cfg.channel.n_tx, 64);
        assert_eq!(cfg.channel.n_rx, 32);
        assert_eq!(cfg.model.d_emb, 320);
        assert_eq!(cfg.model.n_heads, 5);
        assert_eq!(cfg.train.batch_size, 1024);
        assert_eq!(cfg.train.patience_epochs, 25);
        assert!((cfg.train.lr0 - 1e-4).abs() < 1e-18);
        assert!((cfg.train.gamma - 0.9999).abs() < 1e-12);
    }

    #[test]
    fn overrides_and_comments() {
        let text = "\
# overrides on top of the desk preset
preset = desk
channel.n_tx = 4   # small
protocol.snr_db = 10
model.policy = gru
train.batch_size = 7
";
        let cfg = parse_config_str(text).unwrap();
        assert_eq!(cfg.channel.n_tx, 4);
        assert_eq!(cfg.model.policy, PolicyKind::Gru);
        assert_eq!(cfg.train.batch_size, 7);
        assert!((cfg.protocol.sigma2_rx - 0.1).abs() < 1e-15);
    }

    #[test]
    fn zero_antennas_is_a_validation_error() {
        let err = parse_config_str("channel.n_tx = 0\n").unwrap_err();
        assert!(matches!(err, Error::InvalidArgument(_) | Error::Validation(_)), "got {err}");
    }

    #[test]
    fn unknown_key_reports_line_number() {
        let err = parse_config_str("preset = desk\nchannel.bogus = 3\n").unwrap_err();
        match err {
            Error::Parse { line, msg } => {
                assert_eq!(line, 2);
                assert!(msg.contains("bogus"));
            }
            other => panic!("expected parse error, got {other}"),
        }
    }

    #[test]
    fn malformed_line_reports_line_number() {
        let err = parse_config_str("preset = desk\nthis is not a key value pair\n").unwrap_err();
        match err {
            Error::Parse { line, .. } => assert_eq!(line, 2),
            other => panic!("expected parse error, got {other}"),
        }
    }

    #[test]
    fn inconsistent_heads_fail_validation() {
        let err = parse_config_str("model.d_emb = 62\nmodel.n_heads = 4\n").unwrap_err();
        match err {
            Error::Validation(msg) => {
                assert!(msg.contains("d_emb") && msg.contains("n_heads"), "msg = {msg}");
            }
            other => panic!("expected validation error, got {other}"),
        }
    }

    #[test]
    fn preset_must_come_first() {
        let err = parse_config_str("seed = 9\npreset = paper\n").unwrap_err();
        assert!(matches!(err, Error::Parse { line: 2, .. }));
    }

    #[test]
    fn seed_flows_into_training() {
        let cfg = parse_config_str("seed = 777\n").unwrap();
        assert_eq!(cfg.seed, 777);
        assert_eq!(cfg.train.seed, 777);
    }

    #[test]
    fn content_hash_tracks_changes() {
        let a = parse_config_str("preset = desk\n").unwrap();
        let b = parse_config_str("preset = desk\nseed = 2\n").unwrap();
        assert_eq!(a.content_hash(), parse_config_str("preset = desk\n").unwrap().content_hash());
        assert_ne!(a.content_hash(), b.content_hash());
    }
}
