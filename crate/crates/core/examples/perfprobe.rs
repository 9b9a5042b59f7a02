use prba_core::channel::ChannelConfig;
use prba_core::policy::transformer::{TransformerConfig, TransformerPolicy};
use prba_core::policy::gru::{GruConfig, GruPolicy};
use prba_core::policy::PolicyPair;
use prba_core::protocol::ProtocolConfig;
use prba_core::rng;
use prba_core::training::{batch_grads, ChannelSource};
use std::time::Instant;

fn main() {
    let l = 6;
    let mk = |n: usize, tag: u64| {
        TransformerPolicy::init(TransformerConfig::desk(n, l), &mut rng::stream(1, tag)).unwrap()
    };
    let pair = PolicyPair::Transformer { tx: mk(16, 1), rx: mk(8, 2) };
    let source = ChannelSource::Random(ChannelConfig::new(16, 8, 1));
    let proto = ProtocolConfig::from_snr_db(l, 0.0);
    for batch in [32usize, 128] {
        let t0 = Instant::now();
        let mut steps = 0;
        while t0.elapsed().as_secs_f64() < 3.0 {
            let _ = batch_grads(&pair, &source, &proto, steps, batch, false).unwrap();
            steps += 1;
        }
        let per = t0.elapsed().as_secs_f64() / steps as f64;
        println!("transformer batch {batch}: {per:.3} s/step ({} steps), {:.2} ms/episode", steps, per * 1000.0 / batch as f64);
    }
    let mkg = |n: usize, tag: u64| GruPolicy::init(GruConfig::desk(n), &mut rng::stream(2, tag)).unwrap();
    let gpair = PolicyPair::Gru { tx: mkg(16, 1), rx: mkg(8, 2) };
    let t0 = Instant::now();
    let mut steps = 0;
    while t0.elapsed().as_secs_f64() < 3.0 {
        let _ = batch_grads(&gpair, &source, &proto, steps, 128, false).unwrap();
        steps += 1;
    }
    let per = t0.elapsed().as_secs_f64() / steps as f64;
    println!("gru batch 128: {per:.3} s/step, {:.2} ms/episode", per * 1000.0 / 128.0);
}
