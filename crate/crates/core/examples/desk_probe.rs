//! Desk-scale training probe: trains one policy kind at N_t=16, N_r=8, P=1,
//! L=6, 0 dB SNR and reports per-stage evaluation gains against references.

use prba_core::channel::ChannelConfig;
use prba_core::config::ExperimentConfig;
use prba_core::checkpoint::new_pair;
use prba_core::polarization::IpoOptions;
use prba_core::policy::PolicyKind;
use prba_core::training::{evaluate_average_gain, train, ChannelSource, EvalMethod};
use std::time::Instant;

fn main() {
    let args: Vec<String> = std::env::args().collect();
    let kind = args.get(1).map(String::as_str).unwrap_or("transformer");
    let max_epochs: usize = args.get(2).and_then(|s| s.parse().ok()).unwrap_or(30);
    let lr0: f64 = args.get(3).and_then(|s| s.parse().ok()).unwrap_or(3e-4);
    let batch: usize = args.get(4).and_then(|s| s.parse().ok()).unwrap_or(64);

    let mut cfg = ExperimentConfig::desk();
    cfg.seed = 20250810;
    cfg.model.policy = match kind {
        "gru" => PolicyKind::Gru,
        "nonadaptive" => PolicyKind::NonAdaptive,
        _ => PolicyKind::Transformer,
    };
    cfg.train.lr0 = lr0;
    cfg.train.batch_size = batch;
    cfg.train.batches_per_epoch = 25;
    cfg.train.max_epochs = max_epochs;
    cfg.train.patience_epochs = 15;
    cfg.train.seed = cfg.seed;

    let ccfg: ChannelConfig = cfg.channel.clone();
    let eval_seed = 777;

    let pcsi = evaluate_average_gain(
        &EvalMethod::PerfectCsi(IpoOptions::default()),
        &ccfg,
        &cfg.protocol,
        500,
        eval_seed,
    )
    .unwrap();
    println!("perfect-CSI mean gain: {:.3} dB", pcsi.last().unwrap().mean_db);

    let pair = new_pair(&cfg).unwrap();
    let t0 = Instant::now();
    let out = train(pair, &ChannelSource::Random(ccfg.clone()), &cfg.protocol, &cfg.train, |s| {
        println!(
            "[{kind}] epoch {:>3}: loss {:>10.4} lr {:.2e}{}  [{:.0}s]",
            s.epoch,
            s.mean_loss,
            s.lr,
            if s.improved { " *" } else { "" },
            t0.elapsed().as_secs_f64()
        );
    })
    .unwrap();
    println!("trained in {:.0}s ({} steps)", t0.elapsed().as_secs_f64(), out.steps_run);

    let stats = evaluate_average_gain(
        &EvalMethod::Pair(out.pair.tx(), out.pair.rx()),
        &ccfg,
        &cfg.protocol,
        2000,
        eval_seed,
    )
    .unwrap();
    for s in &stats {
        println!("stage {}: {:.3} dB (+-{:.3})", s.stage, s.mean_db, s.stderr_db);
    }
    println!(
        "summary: stage0 {:.3} dB, final {:.3} dB, perfect-csi {:.3} dB",
        stats[0].mean_db,
        stats.last().unwrap().mean_db,
        pcsi.last().unwrap().mean_db
    );
}
