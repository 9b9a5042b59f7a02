//! Quick probe of criterion-7-style overfit dynamics: single frozen channel,
//! noiseless, L = 3, desk transformer.

use prba_core::channel::{sample_channel, ChannelConfig};
use prba_core::polarization::{ipo_optimize, IpoOptions};
use prba_core::policy::transformer::{TransformerConfig, TransformerPolicy};
use prba_core::policy::PolicyPair;
use prba_core::protocol::ProtocolConfig;
use prba_core::rng;
use prba_core::training::{train, ChannelSource, TrainConfig};
use std::time::Instant;

fn main() {
    let args: Vec<String> = std::env::args().collect();
    let lr0: f64 = args.get(1).and_then(|s| s.parse().ok()).unwrap_or(1e-3);
    let steps: usize = args.get(2).and_then(|s| s.parse().ok()).unwrap_or(2000);

    let ccfg = ChannelConfig::new(16, 8, 1);
    let channel = sample_channel(&ccfg, 4242).unwrap();
    let oracle = ipo_optimize(&channel, &IpoOptions::default()).unwrap();
    println!("perfect-CSI gain on this channel: {:.4} ({:.2} dB)", oracle.gain, 10.0 * oracle.gain.log10());

    let l = 3;
    let mk = |n: usize, tag: u64| {
        TransformerPolicy::init(TransformerConfig::desk(n, l), &mut rng::stream(7, tag)).unwrap()
    };
    let pair = PolicyPair::Transformer { tx: mk(16, 1), rx: mk(8, 2) };
    let proto = ProtocolConfig::noiseless(l);
    let cfg = TrainConfig {
        lr0,
        gamma: 1.0,
        batch_size: 2,
        batches_per_epoch: 100,
        patience_epochs: 1000,
        max_epochs: steps / 100,
        eval_episodes: 1,
        seed: 5,
        normalize_by_stages: false,
    };
    let source = ChannelSource::Frozen(channel);
    let t0 = Instant::now();
    let out = train(pair, &source, &proto, &cfg, |s| {
        let best_gain = -s.mean_loss / 3.0;
        println!(
            "epoch {:>3} (step {:>5}): loss {:>10.4}  final-ish gain ratio {:.3}  [{:.0}s]",
            s.epoch,
            (s.epoch + 1) * 100,
            s.mean_loss,
            best_gain / oracle.gain,
            t0.elapsed().as_secs_f64()
        );
    })
    .unwrap();
    // The loss sums L=3 stage gains; the last stage should approach the
    // oracle gain, so loss -> -(g0+g1+g2) with g2 ~ oracle.
    println!(
        "best loss {:.4} after {} steps in {:.0}s; mean-stage/oracle ratio {:.3}",
        out.best_loss,
        out.steps_run,
        t0.elapsed().as_secs_f64(),
        -out.best_loss / 3.0 / oracle.gain
    );
}
