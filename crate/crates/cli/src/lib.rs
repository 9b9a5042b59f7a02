//! Experiment orchestration: reproducible subcommands over the core library.
//!
//! Every artifact is a pure function of the resolved config and seed; CSV
//! files carry a comment line with the config hash and seed so any of them
//! can be regenerated byte for byte.

use std::fmt::Write as _;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand};

use prba_core::channel::{sample_channel, write_channel_corpus, ChannelConfig};
use prba_core::checkpoint::{
    load_checkpoint, new_pair, save_checkpoint, Checkpoint, CheckpointMeta,
};
use prba_core::config::{parse_config, ExperimentConfig};
use prba_core::error::{Error, Result};
use prba_core::interpret::{
    default_theta_grid, export_attention, head_ablation_gain, perfect_csi_tx_response,
    random_polarization_tx_response, response_power, ArrayResponseCurve, HeadSelection,
};
use prba_core::polarization::{
    brute_force_polarization_oracle, ipo_optimize, Beamformer, IpoOptions, OracleRecord,
    PolarizationConfig,
};
use prba_core::policy::{PolicyKind, PolicyPair};
use prba_core::protocol::run_episode;
use prba_core::rng;
use prba_core::training::{
    evaluate_average_gain, train, ChannelSource, EvalMethod, StageGainStats, TrainOutcome,
};
use prba_core::autodiff::Tape;

#[derive(Debug, Parser)]
#[command(name = "prba", about = "Polarization-reconfigurable MIMO beam alignment lab", version)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,

    /// Experiment config file (key = value format).
    #[arg(long, global = true, conflicts_with = "preset")]
    pub config: Option<PathBuf>,

    /// Built-in preset when no config file is given.
    #[arg(long, global = true, value_parser = ["desk", "paper"])]
    pub preset: Option<String>,

    /// Override the experiment seed.
    #[arg(long, global = true)]
    pub seed: Option<u64>,

    /// Output directory for artifacts.
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,

    /// Worker threads: 0 = automatic, 1 = strictly single-threaded.
    #[arg(long, global = true, default_value_t = 0)]
    pub threads: usize,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Sample a channel corpus to `channels.jsonl`.
    GenChannels {
        #[arg(long, default_value_t = 100)]
        count: usize,
        /// Store the assembled matrices alongside the path parameters.
        #[arg(long)]
        include_matrix: bool,
    },
    /// Train the configured policy; writes `checkpoint.json` and `loss.csv`.
    Train,
    /// Evaluate methods under common random numbers; writes `eval.csv`.
    Eval {
        /// Comma-separated: transformer,gru,nonadaptive,perfect-csi.
        #[arg(long, value_delimiter = ',', required = true)]
        methods: Vec<String>,
        /// Checkpoints supplying the learned methods (matched by kind).
        #[arg(long = "checkpoint")]
        checkpoints: Vec<PathBuf>,
        #[arg(long)]
        episodes: Option<usize>,
        /// Also write per-episode gains per method.
        #[arg(long)]
        dump_gains: bool,
    },
    /// Evaluate checkpoints across path counts; writes `sweep.csv`.
    SweepPaths {
        #[arg(long, value_delimiter = ',', required = true)]
        paths: Vec<usize>,
        #[arg(long = "checkpoint", required = true)]
        checkpoints: Vec<PathBuf>,
        #[arg(long)]
        episodes: Option<usize>,
    },
    /// Array responses, attention heatmaps, and head ablation for a trained
    /// transformer checkpoint.
    Interpret {
        #[arg(long)]
        checkpoint: PathBuf,
        /// Episodes for the ablation table.
        #[arg(long)]
        episodes: Option<usize>,
        /// Channel realization for the single-channel figures.
        #[arg(long)]
        channel_seed: Option<u64>,
        /// Head counts for the ablation table (default 1..=M).
        #[arg(long, value_delimiter = ',')]
        head_counts: Option<Vec<usize>>,
    },
    /// Perfect-CSI optimizer vs brute-force grid search on tiny arrays;
    /// writes `oracle.jsonl` and `oracle-report.json`.
    Oracle {
        #[arg(long, default_value_t = 20)]
        channels: usize,
        /// Grid points per polarization angle.
        #[arg(long, default_value_t = 16)]
        grid: usize,
        /// Array sizes for the oracle study (brute force must stay tractable).
        #[arg(long, default_value_t = 2)]
        n_tx: usize,
        #[arg(long, default_value_t = 2)]
        n_rx: usize,
    },
}

/// Resolved experiment context shared by all subcommands.
pub struct Context {
    pub cfg: ExperimentConfig,
    pub out_dir: PathBuf,
}

impl Context {
    fn artifact(&self, name: &str) -> PathBuf {
        self.out_dir.join(name)
    }

    fn csv_comment(&self) -> String {
        format!("# config_hash=0x{:016x} seed={}\n", self.cfg.content_hash(), self.cfg.seed)
    }
}

fn resolve_context(cli: &Cli) -> Result<Context> {
    let mut cfg = match (&cli.config, cli.preset.as_deref()) {
        (Some(path), _) => parse_config(path)?,
        (None, Some("paper")) => ExperimentConfig::paper(),
        (None, _) => ExperimentConfig::desk(),
    };
    if let Some(seed) = cli.seed {
        cfg.seed = seed;
        cfg.train.seed = seed;
    }
    if let Some(out) = &cli.out {
        cfg.output_dir = out.display().to_string();
    }
    cfg.validate()?;
    let out_dir = PathBuf::from(&cfg.output_dir);
    fs::create_dir_all(&out_dir)?;
    Ok(Context { cfg, out_dir })
}

/// Run a parsed command line.
pub fn run(cli: &Cli) -> Result<()> {
    if cli.threads > 0 {
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(cli.threads)
            .build()
            .map_err(|e| Error::invalid(format!("cannot build thread pool: {e}")))?;
        pool.install(|| dispatch(cli))
    } else {
        dispatch(cli)
    }
}

/// Convenience for tests: run from argv-style strings.
pub fn run_args<I, S>(args: I) -> Result<()>
where
    I: IntoIterator<Item = S>,
    S: Into<String>,
{
    let argv: Vec<String> = args.into_iter().map(Into::into).collect();
    let cli = Cli::try_parse_from(&argv).map_err(|e| Error::invalid(e.to_string()))?;
    run(&cli)
}

fn dispatch(cli: &Cli) -> Result<()> {
    let ctx = resolve_context(cli)?;
    match &cli.command {
        Command::GenChannels { count, include_matrix } => gen_channels(&ctx, *count, *include_matrix),
        Command::Train => train_cmd(&ctx),
        Command::Eval { methods, checkpoints, episodes, dump_gains } => {
            eval_cmd(&ctx, methods, checkpoints, *episodes, *dump_gains)
        }
        Command::SweepPaths { paths, checkpoints, episodes } => {
            sweep_paths(&ctx, paths, checkpoints, *episodes)
        }
        Command::Interpret { checkpoint, episodes, channel_seed, head_counts } => {
            interpret_cmd(&ctx, checkpoint, *episodes, *channel_seed, head_counts.as_deref())
        }
        Command::Oracle { channels, grid, n_tx, n_rx } => oracle_cmd(&ctx, *channels, *grid, *n_tx, *n_rx),
    }
}

fn gen_channels(ctx: &Context, count: usize, include_matrix: bool) -> Result<()> {
    let path = ctx.artifact("channels.jsonl");
    let mut f = std::io::BufWriter::new(fs::File::create(&path)?);
    write_channel_corpus(&mut f, &ctx.cfg.channel, ctx.cfg.seed, count, include_matrix)?;
    f.flush()?;
    eprintln!("wrote {count} channels to {}", path.display());
    Ok(())
}

fn train_cmd(ctx: &Context) -> Result<()> {
    let pair = new_pair(&ctx.cfg)?;
    let outcome = run_training(&ctx.cfg, pair)?;
    write_loss_csv(ctx, &outcome)?;
    let ckpt = Checkpoint::from_pair(
        &outcome.pair,
        &ctx.cfg,
        CheckpointMeta {
            steps: outcome.steps_run,
            best_epoch: outcome.best_epoch,
            best_loss: outcome.best_loss,
            skipped_steps: outcome.skipped_steps,
        },
    );
    let path = ctx.artifact("checkpoint.json");
    save_checkpoint(&path, &ckpt)?;
    eprintln!(
        "trained {} for {} steps (best epoch {}, best loss {:.4}); checkpoint at {}",
        ckpt.policy_kind.as_str(),
        outcome.steps_run,
        outcome.best_epoch,
        outcome.best_loss,
        path.display()
    );
    Ok(())
}

/// Train with per-epoch progress on stderr.
pub fn run_training(cfg: &ExperimentConfig, pair: PolicyPair) -> Result<TrainOutcome> {
    let source = ChannelSource::Random(cfg.channel.clone());
    let kind = pair.kind();
    train(pair, &source, &cfg.protocol, &cfg.train, |stats| {
        eprintln!(
            "[{}] epoch {:>3}: loss {:>12.5} lr {:.3e}{}",
            kind.as_str(),
            stats.epoch,
            stats.mean_loss,
            stats.lr,
            if stats.improved { "  *" } else { "" }
        );
    })
}

fn write_loss_csv(ctx: &Context, outcome: &TrainOutcome) -> Result<()> {
    let mut text = ctx.csv_comment();
    text.push_str("step,epoch,loss,lr\n");
    for r in &outcome.history {
        let _ = writeln!(text, "{},{},{},{}", r.step, r.epoch, r.loss, r.lr);
    }
    fs::write(ctx.artifact("loss.csv"), text)?;
    Ok(())
}

fn parse_method(name: &str) -> Result<PolicyKind> {
    match name {
        "transformer" => Ok(PolicyKind::Transformer),
        "gru" => Ok(PolicyKind::Gru),
        "nonadaptive" => Ok(PolicyKind::NonAdaptive),
        "perfect-csi" => Ok(PolicyKind::PerfectCsi),
        _ => Err(Error::invalid(format!(
            "unknown method '{name}' (expected transformer, gru, nonadaptive, perfect-csi)"
        ))),
    }
}

struct LoadedMethods {
    names: Vec<String>,
    pairs: Vec<Option<PolicyPair>>,
}

fn load_methods(ctx: &Context, methods: &[String], checkpoints: &[PathBuf]) -> Result<LoadedMethods> {
    let loaded: Vec<Checkpoint> = checkpoints.iter().map(|p| load_checkpoint(p)).collect::<Result<_>>()?;
    let mut names = Vec::new();
    let mut pairs = Vec::new();
    for m in methods {
        let kind = parse_method(m)?;
        if kind == PolicyKind::PerfectCsi {
            names.push(m.clone());
            pairs.push(None);
            continue;
        }
        let ckpt = loaded
            .iter()
            .find(|c| c.policy_kind == kind)
            .ok_or_else(|| Error::invalid(format!("method '{m}' needs a checkpoint of kind {}", kind.as_str())))?;
        if ckpt.experiment.channel.n_tx != ctx.cfg.channel.n_tx
            || ckpt.experiment.channel.n_rx != ctx.cfg.channel.n_rx
        {
            return Err(Error::Validation(format!(
                "checkpoint for '{m}' was trained at {}x{}, config asks {}x{}",
                ckpt.experiment.channel.n_tx,
                ckpt.experiment.channel.n_rx,
                ctx.cfg.channel.n_tx,
                ctx.cfg.channel.n_rx
            )));
        }
        names.push(m.clone());
        pairs.push(Some(ckpt.build_pair_expecting(kind)?));
    }
    Ok(LoadedMethods { names, pairs })
}

fn eval_stats(
    ctx: &Context,
    pair: Option<&PolicyPair>,
    channel: &ChannelConfig,
    episodes: usize,
) -> Result<Vec<StageGainStats>> {
    let seed = rng::derive_seed(ctx.cfg.seed, rng::tags::EVAL);
    match pair {
        Some(p) => evaluate_average_gain(
            &EvalMethod::Pair(p.tx(), p.rx()),
            channel,
            &ctx.cfg.protocol,
            episodes,
            seed,
        ),
        None => evaluate_average_gain(
            &EvalMethod::PerfectCsi(IpoOptions::default()),
            channel,
            &ctx.cfg.protocol,
            episodes,
            seed,
        ),
    }
}

fn eval_cmd(
    ctx: &Context,
    methods: &[String],
    checkpoints: &[PathBuf],
    episodes: Option<usize>,
    dump_gains: bool,
) -> Result<()> {
    let episodes = episodes.unwrap_or(ctx.cfg.train.eval_episodes);
    let loaded = load_methods(ctx, methods, checkpoints)?;
    let mut columns: Vec<(String, Vec<StageGainStats>)> = Vec::new();
    for (name, pair) in loaded.names.iter().zip(&loaded.pairs) {
        let stats = eval_stats(ctx, pair.as_ref(), &ctx.cfg.channel, episodes)?;
        columns.push((name.clone(), stats));
    }

    let mut text = ctx.csv_comment();
    text.push_str("stage");
    for (name, _) in &columns {
        let _ = write!(text, ",{name}_mean_linear,{name}_stderr_linear,{name}_mean_db,{name}_stderr_db");
    }
    text.push('\n');
    for stage in 0..ctx.cfg.protocol.n_stages {
        let _ = write!(text, "{stage}");
        for (_, stats) in &columns {
            let s = &stats[stage];
            let _ = write!(text, ",{},{},{},{}", s.mean_linear, s.stderr_linear, s.mean_db, s.stderr_db);
        }
        text.push('\n');
    }
    fs::write(ctx.artifact("eval.csv"), text)?;

    if dump_gains {
        for (name, pair) in loaded.names.iter().zip(&loaded.pairs) {
            dump_method_gains(ctx, name, pair.as_ref(), episodes)?;
        }
    }
    for (name, stats) in &columns {
        let last = stats.last().expect("stages");
        eprintln!("{name}: final-stage mean gain {:.3} dB (+-{:.3})", last.mean_db, last.stderr_db);
    }
    Ok(())
}

/// Per-episode gain rows: (episode_id, stage, gain_linear, gain_db).
fn dump_method_gains(ctx: &Context, name: &str, pair: Option<&PolicyPair>, episodes: usize) -> Result<()> {
    use prba_core::policy::perfect_csi::perfect_csi_policies;
    let seed = rng::derive_seed(ctx.cfg.seed, rng::tags::EVAL);
    let mut text = ctx.csv_comment();
    text.push_str("episode_id,stage,gain_linear,gain_db\n");
    for e in 0..episodes {
        let channel_seed = rng::derive_seed(seed, 2 * e as u64);
        let noise_seed = rng::derive_seed(seed, 2 * e as u64 + 1);
        let channel = sample_channel(&ctx.cfg.channel, channel_seed)?;
        let mut noise_rng = rng::stream(noise_seed, rng::tags::NOISE);
        let mut tape = Tape::new(false);
        let gains = match pair {
            Some(p) => {
                run_episode(&mut tape, &channel, p.tx(), p.rx(), &ctx.cfg.protocol, &mut noise_rng)?
                    .record
                    .gains
            }
            None => {
                let sol = perfect_csi_policies(&channel, &IpoOptions::default())?;
                let ep = run_episode(&mut tape, &channel, &sol.tx, &sol.rx, &ctx.cfg.protocol, &mut noise_rng)?;
                let g = ep.record.gains.clone();
                drop(ep);
                g
            }
        };
        for (stage, g) in gains.iter().enumerate() {
            let _ = writeln!(text, "{e},{stage},{},{}", g, 10.0 * g.max(1e-300).log10());
        }
    }
    fs::write(ctx.artifact(&format!("gains-{name}.csv")), text)?;
    Ok(())
}

fn sweep_paths(ctx: &Context, paths: &[usize], checkpoints: &[PathBuf], episodes: Option<usize>) -> Result<()> {
    let episodes = episodes.unwrap_or(ctx.cfg.train.eval_episodes);
    let loaded: Vec<Checkpoint> = checkpoints.iter().map(|p| load_checkpoint(p)).collect::<Result<_>>()?;
    let mut labels = vec!["perfect-csi".to_string()];
    let mut pairs: Vec<Option<PolicyPair>> = vec![None];
    for ckpt in &loaded {
        labels.push(format!("{}-trainedP{}", ckpt.policy_kind.as_str(), ckpt.experiment.channel.n_paths));
        pairs.push(Some(ckpt.build_pair()?));
    }

    let mut text = ctx.csv_comment();
    text.push_str("n_paths");
    for label in &labels {
        let _ = write!(text, ",{label}_mean_db,{label}_stderr_db");
    }
    text.push('\n');
    for &p in paths {
        if p == 0 {
            return Err(Error::invalid("path count must be at least 1"));
        }
        let mut channel = ctx.cfg.channel.clone();
        channel.n_paths = p;
        let _ = write!(text, "{p}");
        for pair in &pairs {
            let stats = eval_stats(ctx, pair.as_ref(), &channel, episodes)?;
            let last = stats.last().expect("stages");
            let _ = write!(text, ",{},{}", last.mean_db, last.stderr_db);
        }
        text.push('\n');
        eprintln!("swept P={p}");
    }
    fs::write(ctx.artifact("sweep.csv"), text)?;
    Ok(())
}

fn curves_to_csv(ctx: &Context, curves: &[ArrayResponseCurve]) -> String {
    let mut text = ctx.csv_comment();
    text.push_str("theta_deg,power_db,tag\n");
    for c in curves {
        for (theta, db) in c.theta_grid.iter().zip(&c.power_db) {
            let _ = writeln!(text, "{},{},{}", theta * 180.0 / std::f64::consts::PI, db, c.tag);
        }
    }
    text
}

fn interpret_cmd(
    ctx: &Context,
    checkpoint: &Path,
    episodes: Option<usize>,
    channel_seed: Option<u64>,
    head_counts: Option<&[usize]>,
) -> Result<()> {
    let ckpt = load_checkpoint(checkpoint)?;
    let pair = ckpt.build_pair_expecting(PolicyKind::Transformer)?;
    let PolicyPair::Transformer { mut tx, mut rx } = pair else {
        unreachable!("kind checked above")
    };
    tx.capture_attention = true;
    rx.capture_attention = true;

    // Single-channel episode for responses and attention.
    let channel_seed = channel_seed.unwrap_or_else(|| rng::derive_seed(ctx.cfg.seed, 0xface));
    let channel = sample_channel(&ctx.cfg.channel, channel_seed)?;
    let mut tape = Tape::new(false);
    let mut noise_rng = rng::stream(rng::derive_seed(ctx.cfg.seed, 0xfade), rng::tags::NOISE);
    let episode = run_episode(&mut tape, &channel, &tx, &rx, &ctx.cfg.protocol, &mut noise_rng)?;
    let record = episode.record.clone();
    drop(episode);
    fs::write(ctx.artifact("episode.json"), serde_json::to_string_pretty(&record)?)?;

    // Attention heatmaps for both sides.
    for (side, trace) in [("tx", &record.attention_tx), ("rx", &record.attention_rx)] {
        let trace = trace
            .as_ref()
            .ok_or_else(|| Error::Integrity("transformer episode produced no attention trace".into()))?;
        let mut buf = Vec::new();
        export_attention(trace, &mut buf)?;
        fs::write(ctx.artifact(&format!("attention-{side}.json")), buf)?;
    }

    // Array-response curves: reference solutions plus designed parameters at
    // a few stages.
    let grid = default_theta_grid();
    let chi_ant = ctx.cfg.channel.chi_ant;
    let form = ctx.cfg.channel.antenna_gain_form;
    let mut curves = vec![
        perfect_csi_tx_response(&channel, &IpoOptions::default(), &grid)?,
        random_polarization_tx_response(&channel, rng::derive_seed(ctx.cfg.seed, 0xfad0), &grid)?,
    ];
    let l = ctx.cfg.protocol.n_stages;
    let mut stages: Vec<usize> = vec![0, 1, l / 2, l - 1];
    stages.dedup();
    stages.retain(|s| *s < l);
    for &s in &stages {
        let (dl_tx, _) = &record.downlink[s];
        let w = Beamformer::new(dl_tx.beamformer.clone())?;
        let angles = PolarizationConfig::new(dl_tx.angles.clone())?;
        curves.push(response_power(&w, &angles, chi_ant, form, &grid, &format!("downlink-stage{s}"))?);
        let pilot = &record.pilots[s].tx_transmit;
        let w = Beamformer::new(pilot.beamformer.clone())?;
        let angles = PolarizationConfig::new(pilot.angles.clone())?;
        curves.push(response_power(&w, &angles, chi_ant, form, &grid, &format!("pilot-stage{s}"))?);
    }
    fs::write(ctx.artifact("array_response.csv"), curves_to_csv(ctx, &curves))?;

    // Head ablation under common random numbers.
    let m = tx.config().n_heads;
    let counts: Vec<usize> = match head_counts {
        Some(c) => c.to_vec(),
        None => (1..=m).collect(),
    };
    let episodes = episodes.unwrap_or(500);
    let table = head_ablation_gain(
        &tx,
        &rx,
        &counts,
        &ctx.cfg.channel,
        &ctx.cfg.protocol,
        episodes,
        rng::derive_seed(ctx.cfg.seed, rng::tags::EVAL),
        HeadSelection::FirstK,
    )?;
    let mut text = ctx.csv_comment();
    text.push_str("head_count,heads,mean_gain_db,stderr_db,monotone_nondecreasing\n");
    for row in &table.rows {
        let heads = row.heads.iter().map(|h| h.to_string()).collect::<Vec<_>>().join("+");
        let _ = writeln!(
            text,
            "{},{},{},{},{}",
            row.head_count, heads, row.mean_gain_db, row.stderr_db, table.monotone_nondecreasing
        );
    }
    fs::write(ctx.artifact("ablation.csv"), text)?;
    eprintln!("interpretation artifacts written to {}", ctx.out_dir.display());
    Ok(())
}

fn oracle_cmd(ctx: &Context, channels: usize, grid: usize, n_tx: usize, n_rx: usize) -> Result<()> {
    let mut channel_cfg = ctx.cfg.channel.clone();
    channel_cfg.n_tx = n_tx;
    channel_cfg.n_rx = n_rx;
    channel_cfg.validate()?;

    let mut records = String::new();
    let mut min_ratio = f64::INFINITY;
    let mut sum_ratio = 0.0;
    for i in 0..channels {
        let seed = rng::derive_seed(ctx.cfg.seed, i as u64);
        let channel = sample_channel(&channel_cfg, seed)?;
        let ipo = ipo_optimize(&channel, &IpoOptions::default())?;
        let brute = brute_force_polarization_oracle(&channel, grid)?;
        let ratio = ipo.gain / brute.gain;
        min_ratio = min_ratio.min(ratio);
        sum_ratio += ratio;
        let rec = OracleRecord {
            channel_seed: seed,
            angles_tx: ipo.angles_tx.angles().to_vec(),
            angles_rx: ipo.angles_rx.angles().to_vec(),
            gain_db: 10.0 * ipo.gain.log10(),
        };
        records.push_str(&serde_json::to_string(&rec)?);
        records.push('\n');
    }
    fs::write(ctx.artifact("oracle.jsonl"), records)?;

    #[derive(serde::Serialize)]
    struct Report {
        channels: usize,
        grid: usize,
        n_tx: usize,
        n_rx: usize,
        min_gain_ratio_vs_brute_force: f64,
        mean_gain_ratio_vs_brute_force: f64,
    }
    let report = Report {
        channels,
        grid,
        n_tx,
        n_rx,
        min_gain_ratio_vs_brute_force: min_ratio,
        mean_gain_ratio_vs_brute_force: sum_ratio / channels.max(1) as f64,
    };
    fs::write(ctx.artifact("oracle-report.json"), serde_json::to_string_pretty(&report)?)?;
    eprintln!(
        "oracle report: min ratio {:.6}, mean ratio {:.6}",
        report.min_gain_ratio_vs_brute_force, report.mean_gain_ratio_vs_brute_force
    );
    Ok(())
}

/// Categorize an error for the exit line.
pub fn error_category(err: &Error) -> &'static str {
    match err {
        Error::InvalidArgument(_) => "invalid-argument",
        Error::DegenerateInput(_) => "degenerate-input",
        Error::ContractViolation { .. } => "contract-violation",
        Error::NumericFault { .. } => "numeric-fault",
        Error::Parse { .. } => "parse",
        Error::Validation(_) => "validation",
        Error::Integrity(_) => "integrity",
        Error::UnsupportedVersion { .. } => "unsupported-version",
        Error::KindMismatch { .. } => "kind-mismatch",
        Error::BudgetExceeded(_) => "budget-exceeded",
        Error::Io(_) => "io",
        Error::Json(_) => "json",
    }
}
