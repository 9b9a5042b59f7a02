//! Checkpoint persistence: JSON with a schema tag, the policy kind, a config
//! snapshot, every named parameter tensor, optional optimizer state, and
//! training metadata.

use serde::{Deserialize, Serialize};
use std::io::{Read, Write};
use std::path::Path;

use crate::config::ExperimentConfig;
use crate::error::{Error, Result};
use crate::policy::gru::GruPolicy;
use crate::policy::nonadaptive::NonAdaptivePolicy;
use crate::policy::transformer::TransformerPolicy;
use crate::policy::{ParamStore, ParamTensor, PolicyKind, PolicyPair};
use crate::rng;
use crate::training::AdamState;

pub const CHECKPOINT_SCHEMA: &str = "prba.checkpoint.v1";

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct CheckpointMeta {
    pub steps: u64,
    pub best_epoch: usize,
    pub best_loss: f64,
    pub skipped_steps: u64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Checkpoint {
    pub schema: String,
    pub policy_kind: PolicyKind,
    pub experiment: ExperimentConfig,
    pub tx_tensors: Vec<ParamTensor>,
    pub rx_tensors: Vec<ParamTensor>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub adam: Option<(AdamState, AdamState)>,
    pub meta: CheckpointMeta,
}

impl Checkpoint {
    pub fn from_pair(pair: &PolicyPair, experiment: &ExperimentConfig, meta: CheckpointMeta) -> Self {
        let (tx, rx) = pair.stores();
        Checkpoint {
            schema: CHECKPOINT_SCHEMA.to_string(),
            policy_kind: pair.kind(),
            experiment: experiment.clone(),
            tx_tensors: tx.tensors().to_vec(),
            rx_tensors: rx.tensors().to_vec(),
            adam: None,
            meta,
        }
    }

    /// Rebuild the policy pair this checkpoint holds, verifying kind and
    /// tensor shapes against its own config snapshot.
    pub fn build_pair(&self) -> Result<PolicyPair> {
        if self.schema != CHECKPOINT_SCHEMA {
            return Err(Error::UnsupportedVersion {
                found: self.schema.clone(),
                expected: CHECKPOINT_SCHEMA.into(),
            });
        }
        let cfg = &self.experiment;
        cfg.validate()?;
        let tx_store = ParamStore::from_tensors(self.tx_tensors.clone())?;
        let rx_store = ParamStore::from_tensors(self.rx_tensors.clone())?;
        let (n_tx, n_rx) = (cfg.channel.n_tx, cfg.channel.n_rx);
        match self.policy_kind {
            PolicyKind::Transformer => Ok(PolicyPair::Transformer {
                tx: TransformerPolicy::from_params(cfg.transformer_config(n_tx), tx_store)?,
                rx: TransformerPolicy::from_params(cfg.transformer_config(n_rx), rx_store)?,
            }),
            PolicyKind::Gru => Ok(PolicyPair::Gru {
                tx: GruPolicy::from_params(cfg.gru_config(n_tx), tx_store)?,
                rx: GruPolicy::from_params(cfg.gru_config(n_rx), rx_store)?,
            }),
            PolicyKind::NonAdaptive => Ok(PolicyPair::NonAdaptive {
                tx: NonAdaptivePolicy::from_params(cfg.nonadaptive_config(n_tx), tx_store)?,
                rx: NonAdaptivePolicy::from_params(cfg.nonadaptive_config(n_rx), rx_store)?,
            }),
            other => Err(Error::KindMismatch {
                found: other.as_str().into(),
                expected: "a trainable policy kind".into(),
            }),
        }
    }

    /// Like [`Checkpoint::build_pair`], but also insists on a specific kind.
    pub fn build_pair_expecting(&self, kind: PolicyKind) -> Result<PolicyPair> {
        if self.policy_kind != kind {
            return Err(Error::KindMismatch {
                found: self.policy_kind.as_str().into(),
                expected: kind.as_str().into(),
            });
        }
        self.build_pair()
    }
}

/// Initialize a fresh policy pair for the configured kind.
pub fn new_pair(cfg: &ExperimentConfig) -> Result<PolicyPair> {
    cfg.validate()?;
    let (n_tx, n_rx) = (cfg.channel.n_tx, cfg.channel.n_rx);
    let mut rng_tx = rng::stream(cfg.seed, rng::tags::INIT);
    let mut rng_rx = rng::stream(rng::derive_seed(cfg.seed, 1), rng::tags::INIT);
    match cfg.model.policy {
        PolicyKind::Transformer => Ok(PolicyPair::Transformer {
            tx: TransformerPolicy::init(cfg.transformer_config(n_tx), &mut rng_tx)?,
            rx: TransformerPolicy::init(cfg.transformer_config(n_rx), &mut rng_rx)?,
        }),
        PolicyKind::Gru => Ok(PolicyPair::Gru {
            tx: GruPolicy::init(cfg.gru_config(n_tx), &mut rng_tx)?,
            rx: GruPolicy::init(cfg.gru_config(n_rx), &mut rng_rx)?,
        }),
        PolicyKind::NonAdaptive => Ok(PolicyPair::NonAdaptive {
            tx: NonAdaptivePolicy::init(cfg.nonadaptive_config(n_tx), &mut rng_tx)?,
            rx: NonAdaptivePolicy::init(cfg.nonadaptive_config(n_rx), &mut rng_rx)?,
        }),
        other => Err(Error::invalid(format!("{} is not a trainable policy kind", other.as_str()))),
    }
}

pub fn save_checkpoint_to(w: &mut impl Write, ckpt: &Checkpoint) -> Result<()> {
    serde_json::to_writer(&mut *w, ckpt)?;
    w.write_all(b"\n")?;
    Ok(())
}

pub fn load_checkpoint_from(r: &mut impl Read) -> Result<Checkpoint> {
    let ckpt: Checkpoint = serde_json::from_reader(r)?;
    if ckpt.schema != CHECKPOINT_SCHEMA {
        return Err(Error::UnsupportedVersion { found: ckpt.schema, expected: CHECKPOINT_SCHEMA.into() });
    }
    Ok(ckpt)
}

pub fn save_checkpoint(path: &Path, ckpt: &Checkpoint) -> Result<()> {
    let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
    save_checkpoint_to(&mut f, ckpt)
}

pub fn load_checkpoint(path: &Path) -> Result<Checkpoint> {
    let mut f = std::io::BufReader::new(std::fs::File::open(path)?);
    load_checkpoint_from(&mut f)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::ExperimentConfig;

    fn small_cfg() -> ExperimentConfig {
        let mut cfg = ExperimentConfig::desk();
        cfg.channel.n_tx = 3;
        cfg.channel.n_rx = 2;
        cfg.protocol.n_stages = 3;
        cfg.model.d_emb = 8;
        cfg.model.n_heads = 2;
        cfg.model.n_layers = 1;
        cfg.model.ffn_hidden = 8;
        cfg.model.mlp_hidden = 8;
        cfg.model.gru_hidden = 8;
        cfg.model.gru_input_proj = 4;
        cfg
    }

    #[test]
    fn roundtrip_preserves_every_value() {
        let cfg = small_cfg();
        let pair = new_pair(&cfg).unwrap();
        let ckpt = Checkpoint::from_pair(&pair, &cfg, CheckpointMeta::default());
        let mut buf = Vec::new();
        save_checkpoint_to(&mut buf, &ckpt).unwrap();
        let loaded = load_checkpoint_from(&mut &buf[..]).unwrap();
        assert_eq!(loaded.tx_tensors, ckpt.tx_tensors);
        assert_eq!(loaded.rx_tensors, ckpt.rx_tensors);
        for (a, b) in loaded.tx_tensors.iter().zip(&ckpt.tx_tensors) {
            assert!(a.data.iter().zip(&b.data).all(|(x, y)| x.to_bits() == y.to_bits()));
        }
        let rebuilt = loaded.build_pair().unwrap();
        assert_eq!(rebuilt.kind(), PolicyKind::Transformer);
    }

    #[test]
    fn corrupted_tensor_is_an_integrity_error() {
        let cfg = small_cfg();
        let pair = new_pair(&cfg).unwrap();
        let mut ckpt = Checkpoint::from_pair(&pair, &cfg, CheckpointMeta::default());
        ckpt.tx_tensors[0].data.pop();
        let err = ckpt.build_pair().unwrap_err();
        assert!(matches!(err, Error::Integrity(_)), "got {err}");
    }

    #[test]
    fn kind_mismatch_is_rejected() {
        let mut cfg = small_cfg();
        cfg.model.policy = PolicyKind::Gru;
        let pair = new_pair(&cfg).unwrap();
        let ckpt = Checkpoint::from_pair(&pair, &cfg, CheckpointMeta::default());
        let err = ckpt.build_pair_expecting(PolicyKind::Transformer).unwrap_err();
        assert!(matches!(err, Error::KindMismatch { .. }), "got {err}");
    }

    #[test]
    fn unsupported_schema_version() {
        let cfg = small_cfg();
        let pair = new_pair(&cfg).unwrap();
        let mut ckpt = Checkpoint::from_pair(&pair, &cfg, CheckpointMeta::default());
        ckpt.schema = "prba.checkpoint.v99".into();
        let mut buf = Vec::new();
        serde_json::to_writer(&mut buf, &ckpt).unwrap();
        let err = load_checkpoint_from(&mut &buf[..]).unwrap_err();
        assert!(matches!(err, Error::UnsupportedVersion { .. }), "got {err}");
    }

    #[test]
    fn wrong_shape_is_an_integrity_error() {
        let cfg = small_cfg();
        let pair = new_pair(&cfg).unwrap();
        let mut ckpt = Checkpoint::from_pair(&pair, &cfg, CheckpointMeta::default());
        // Grow the embedding: consistent rows*cols but wrong shape for config.
        let t = &mut ckpt.tx_tensors[0];
        t.cols += 1;
        t.data.push(0.0);
        let err = ckpt.build_pair().unwrap_err();
        assert!(matches!(err, Error::Integrity(_)), "got {err}");
    }

    #[test]
    fn fresh_pairs_differ_across_sides_and_seeds() {
        let cfg = small_cfg();
        let a = new_pair(&cfg).unwrap();
        let (atx, arx) = a.stores();
        assert_ne!(atx.tensor("emb.w").data, arx.tensor("emb.w").data, "sides must not share weights");
        let mut cfg2 = cfg.clone();
        cfg2.seed = 99;
        let b = new_pair(&cfg2).unwrap();
        assert_ne!(atx.tensor("emb.w").data, b.stores().0.tensor("emb.w").data);
    }
}
