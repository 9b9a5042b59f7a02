//! End-to-end gradient verification: analytic gradients of the batched
//! episode loss against central finite differences, for every trainable
//! tensor of both policy kinds. Gradients must flow through the pilot
//! observations into earlier-stage policy outputs, so this exercises the
//! whole unrolled interaction.

use prba_core::channel::ChannelConfig;
use prba_core::policy::gru::{GruConfig, GruPolicy};
use prba_core::policy::transformer::{AttentionScale, TransformerConfig, TransformerPolicy};
use prba_core::policy::{BeamformerMode, PolicyPair};
use prba_core::protocol::ProtocolConfig;
use prba_core::rng;
use prba_core::training::{finite_difference_loss_check, ChannelSource, TrainConfig};

fn desk_transformer_pair(n_tx: usize, n_rx: usize, l: usize, seed: u64) -> PolicyPair {
    let mk = |n: usize, tag: u64| {
        let cfg = TransformerConfig {
            d_emb: 16,
            n_heads: 2,
            n_layers: 2,
            ffn_hidden: 20,
            mlp_hidden: 16,
            n_antennas: n,
            max_stages: l,
            attention_scale: AttentionScale::SqrtDEmb,
            causal_mask: true,
            beamformer_mode: BeamformerMode::ComplexPairing,
        };
        TransformerPolicy::init(cfg, &mut rng::stream(seed, tag)).unwrap()
    };
    PolicyPair::Transformer { tx: mk(n_tx, 1), rx: mk(n_rx, 2) }
}

fn gru_pair(n_tx: usize, n_rx: usize, seed: u64) -> PolicyPair {
    let mk = |n: usize, tag: u64| {
        let cfg = GruConfig {
            hidden: 12,
            input_proj: 6,
            mlp_hidden: 12,
            n_antennas: n,
            beamformer_mode: BeamformerMode::ComplexPairing,
        };
        GruPolicy::init(cfg, &mut rng::stream(seed, tag)).unwrap()
    };
    PolicyPair::Gru { tx: mk(n_tx, 3), rx: mk(n_rx, 4) }
}

fn check_pair(mut pair: PolicyPair, label: &str) {
    let source = ChannelSource::Random(ChannelConfig::new(4, 2, 2));
    let proto = ProtocolConfig::from_snr_db(3, 0.0);
    let _ = TrainConfig::desk(0);
    let results =
        finite_difference_loss_check(&mut pair, &source, &proto, 2, 4242, 1e-5, 3, 7).unwrap();
    assert!(!results.is_empty());
    let mut worst: (f64, &str) = (0.0, "");
    for (name, err) in &results {
        if *err > worst.0 {
            worst = (*err, name);
        }
        assert!(
            *err < 1e-4,
            "{label}: finite-difference mismatch on {name}: relative error {err}"
        );
    }
    println!("{label}: worst fd relative error {} on {}", worst.0, worst.1);
}

#[test]
fn transformer_episode_gradients_match_finite_differences() {
    check_pair(desk_transformer_pair(4, 2, 3, 11), "transformer");
}

#[test]
fn gru_episode_gradients_match_finite_differences() {
    check_pair(gru_pair(4, 2, 12), "gru");
}

#[test]
fn nonadaptive_episode_gradients_match_finite_differences() {
    use prba_core::policy::nonadaptive::{NonAdaptiveConfig, NonAdaptivePolicy};
    let mk = |n: usize, tag: u64| {
        let cfg = NonAdaptiveConfig {
            n_antennas: n,
            n_stages: 3,
            mlp_hidden: 10,
            beamformer_mode: BeamformerMode::ComplexPairing,
        };
        NonAdaptivePolicy::init(cfg, &mut rng::stream(31, tag)).unwrap()
    };
    let pair = PolicyPair::NonAdaptive { tx: mk(4, 1), rx: mk(2, 2) };
    check_pair(pair, "nonadaptive");
}

#[test]
fn stage0_constants_receive_gradients() {
    // The stage-0 trainable parameters shape the very first pilot, so the
    // loss must have nonzero gradient w.r.t. them (through later stages).
    use prba_core::training::batch_grads;
    let pair = desk_transformer_pair(3, 2, 3, 13);
    let source = ChannelSource::Random(ChannelConfig::new(3, 2, 1));
    let proto = ProtocolConfig::from_snr_db(3, 0.0);
    let (_, gtx, _) = batch_grads(&pair, &source, &proto, 5, 2, false).unwrap();
    let (stx, _) = pair.stores();
    let idx = stx.index_of("pt.s0.angles");
    let g = &gtx.grads[idx];
    assert!(g.iter().any(|v| v.abs() > 1e-12), "stage-0 pilot-transmit angles got zero gradient");
    let idx = stx.index_of("pt.s0.w");
    let g = &gtx.grads[idx];
    assert!(g.iter().any(|v| v.abs() > 1e-12), "stage-0 pilot-transmit beamformer got zero gradient");
}
