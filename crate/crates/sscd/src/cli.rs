//! Command-line interface.
//!
//! Every command resolves its settings in three layers — built-in defaults,
//! then `--config FILE`, then explicit flags — echoes the result as the first
//! metrics record, and emits line-delimited JSON with stable keys to stdout
//! (or `--metrics FILE`). Exit codes: 0 success, 2 usage, 3 configuration,
//! 4 file/format, 5 shape/token, 6 numerical failure, 7 oracle scope.

use std::ffi::OsString;
use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};
use serde_json::json;

use crate::config::{load_file, RunConfig};
use crate::decode::{
    baseline_decode_with_trace, calibrated_logits, decode, decode_with_trace, DecodeMode,
    DecodingConfig, plausibility_set,
};
use crate::disruptor::{disrupt, init_disruptor, DisruptorParams};
use crate::error::{Error, Result};
use crate::graph::{
    brute_force_roundtrip, multi_step, round_trip, transition_chain, SpanPolicy, SpanSchedule,
    spatiotemporal_loss,
};
use crate::io::{
    read_checkpoint, read_dataset, read_features, write_checkpoint, write_dataset,
    write_features, Checkpoint, DatasetRecord, load_items, atomic_write,
};
use crate::surrogate::{init_surrogate, Role, TokenSequence, Vocab};
use crate::synth::{gen_synthetic, SynthParams};
use crate::tensor::{matmul, softmax_vec, Tensor3};
use crate::train::{
    finite_diff_check, total_loss_with_spans, train_from, TrainConfig, TrainItem,
};

#[derive(Debug, Parser)]
#[command(
    name = "sscd",
    version,
    about = "Temporal-consistency contrastive decoding on synthetic video features"
)]
struct Cli {
    /// TOML settings applied over the built-in defaults (flags win over both)
    #[arg(long, global = true, value_name = "FILE")]
    config: Option<PathBuf>,
    /// Write metrics records to this file instead of stdout
    #[arg(long, global = true, value_name = "FILE")]
    metrics: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Generate a synthetic dataset: feature files plus dataset.jsonl
    GenSynthetic(GenSyntheticArgs),
    /// Train the disruptor on a dataset and write a checkpoint
    Train(TrainArgs),
    /// Print the loss breakdown and per-walk cycle scores for dataset records
    ComputeLosses(ComputeLossesArgs),
    /// Decode one feature file, baseline and contrastive side by side
    Decode(DecodeArgs),
    /// Run the built-in oracle suite (walk enumeration, finite differences,
    /// reduction identities, format round trips)
    Verify(VerifyArgs),
    /// Print checkpoint metadata and parameter statistics
    InspectCheckpoint(InspectArgs),
}

#[derive(Debug, Args)]
struct GenSyntheticArgs {
    /// Directory receiving feats/*.feat and dataset.jsonl
    #[arg(long, value_name = "DIR")]
    out_dir: PathBuf,
    /// Number of records; record i is seeded with seed + i
    #[arg(long)]
    count: Option<usize>,
    #[arg(long)]
    t: Option<usize>,
    #[arg(long)]
    n: Option<usize>,
    #[arg(long)]
    d: Option<usize>,
    /// Temporal correlation in [0, 1)
    #[arg(long)]
    rho: Option<f64>,
    #[arg(long)]
    vocab_size: Option<usize>,
    #[arg(long)]
    prompt_len: Option<usize>,
    #[arg(long)]
    answer_len: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Debug, Args)]
struct TrainArgs {
    /// Dataset file (one JSON record per line)
    #[arg(long, value_name = "FILE")]
    dataset: PathBuf,
    /// Checkpoint output path
    #[arg(long, value_name = "FILE")]
    out: PathBuf,
    /// Continue from an existing checkpoint instead of a fresh init
    #[arg(long, value_name = "FILE")]
    resume: Option<PathBuf>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    batch_size: Option<usize>,
    #[arg(long)]
    grad_accum: Option<usize>,
    #[arg(long)]
    lr: Option<f64>,
    #[arg(long)]
    lambda: Option<f64>,
    #[arg(long)]
    temperature: Option<f64>,
    #[arg(long)]
    warmup_ratio: Option<f64>,
    #[arg(long)]
    weight_decay: Option<f64>,
    #[arg(long)]
    seed: Option<u64>,
    /// Walk schedule: "retrace" or "literal"
    #[arg(long)]
    span_policy: Option<SpanPolicy>,
    /// L2-normalize feature rows before affinities
    #[arg(long, value_name = "BOOL")]
    normalize_affinity: Option<bool>,
    /// Ablation: score walks on raw instead of disrupted features
    #[arg(long, value_name = "BOOL")]
    lt_on_raw: Option<bool>,
    #[arg(long)]
    d_lm: Option<usize>,
    #[arg(long)]
    d_hidden: Option<usize>,
    #[arg(long)]
    vocab_size: Option<usize>,
}

#[derive(Debug, Args)]
struct ComputeLossesArgs {
    #[arg(long, value_name = "FILE")]
    checkpoint: PathBuf,
    #[arg(long, value_name = "FILE")]
    dataset: PathBuf,
    /// Score walks on the raw features (keeps the trained disruptor for the
    /// semantic term)
    #[arg(long)]
    raw: bool,
    /// Replace the checkpoint disruptor with all-zero parameters
    #[arg(long)]
    zero_disruptor: bool,
    /// Only process the first K records
    #[arg(long, value_name = "K")]
    limit: Option<usize>,
}

#[derive(Debug, Args)]
struct DecodeArgs {
    #[arg(long, value_name = "FILE")]
    checkpoint: PathBuf,
    #[arg(long, value_name = "FILE")]
    features: PathBuf,
    /// Comma-separated prompt token ids, e.g. "3,17,5"
    #[arg(long, value_name = "IDS")]
    prompt: String,
    #[arg(long)]
    alpha: Option<f64>,
    #[arg(long)]
    beta: Option<f64>,
    #[arg(long)]
    max_tokens: Option<usize>,
    /// Sample instead of greedy selection, seeded here
    #[arg(long)]
    sample_seed: Option<u64>,
    /// Print only the baseline decode
    #[arg(long)]
    baseline: bool,
}

#[derive(Debug, Args)]
struct VerifyArgs {
    /// Base seed for the oracle instances
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Debug, Args)]
struct InspectArgs {
    #[arg(long, value_name = "FILE")]
    checkpoint: PathBuf,
}

/// Buffers metrics records; stdout by default, whole-file atomic when a
/// target path was given.
struct Metrics {
    path: Option<PathBuf>,
    lines: Vec<String>,
}

impl Metrics {
    fn new(path: Option<PathBuf>) -> Self {
        Metrics { path, lines: Vec::new() }
    }

    fn emit(&mut self, value: serde_json::Value) {
        let line = value.to_string();
        match &self.path {
            Some(_) => self.lines.push(line),
            None => println!("{line}"),
        }
    }

    fn finish(&self) -> Result<()> {
        if let Some(path) = &self.path {
            let mut buf = self.lines.join("\n");
            buf.push('\n');
            atomic_write(path, buf.as_bytes())?;
        }
        Ok(())
    }
}

/// Runs the CLI against an argument vector and returns the process exit code.
pub fn cli_main<I, S>(argv: I) -> i32
where
    I: IntoIterator<Item = S>,
    S: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return e.exit_code();
        }
    };
    let mut metrics = Metrics::new(cli.metrics.clone());
    let outcome = run_command(&cli, &mut metrics);
    // Always flush what was collected; partial metrics beat no metrics.
    let flushed = metrics.finish();
    match (outcome, flushed) {
        (Ok(()), Ok(())) => 0,
        (Err(e), _) | (Ok(()), Err(e)) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}

fn run_command(cli: &Cli, metrics: &mut Metrics) -> Result<()> {
    match &cli.command {
        Command::GenSynthetic(a) => cmd_gen_synthetic(cli, a, metrics),
        Command::Train(a) => cmd_train(cli, a, metrics),
        Command::ComputeLosses(a) => cmd_compute_losses(cli, a, metrics),
        Command::Decode(a) => cmd_decode(cli, a, metrics),
        Command::Verify(a) => cmd_verify(a, metrics),
        Command::InspectCheckpoint(a) => cmd_inspect(a, metrics),
    }
}

fn base_config(cli: &Cli) -> Result<RunConfig> {
    let mut rc = RunConfig::default();
    if let Some(path) = &cli.config {
        rc.apply_file(&load_file(path)?)?;
    }
    Ok(rc)
}

fn ov<V: Copy>(slot: &mut V, value: Option<V>) {
    if let Some(v) = value {
        *slot = v;
    }
}

fn parse_id_list(s: &str) -> Result<Vec<usize>> {
    s.split(',')
        .map(str::trim)
        .filter(|p| !p.is_empty())
        .map(|p| {
            p.parse::<usize>()
                .map_err(|e| Error::Config(format!("bad token id {p:?} in prompt: {e}")))
        })
        .collect()
}

fn cmd_gen_synthetic(cli: &Cli, a: &GenSyntheticArgs, metrics: &mut Metrics) -> Result<()> {
    let mut rc = base_config(cli)?;
    ov(&mut rc.count, a.count);
    ov(&mut rc.t, a.t);
    ov(&mut rc.n, a.n);
    ov(&mut rc.d, a.d);
    ov(&mut rc.rho, a.rho);
    ov(&mut rc.vocab_size, a.vocab_size);
    ov(&mut rc.prompt_len, a.prompt_len);
    ov(&mut rc.answer_len, a.answer_len);
    ov(&mut rc.train.seed, a.seed);
    rc.validate()?;
    metrics.emit(rc.echo_json());

    let mut records = Vec::with_capacity(rc.count);
    for i in 0..rc.count {
        let params = SynthParams {
            t: rc.t,
            n: rc.n,
            d: rc.d,
            rho: rc.rho,
            vocab_size: rc.vocab_size,
            prompt_len: rc.prompt_len,
            answer_len: rc.answer_len,
            seed: rc.train.seed.wrapping_add(i as u64),
        };
        let inst = gen_synthetic::<f64>(&params)?;
        let id = format!("r{i:04}");
        let feature_path = format!("feats/{id}.feat");
        write_features(&a.out_dir.join(&feature_path), &inst.features)?;
        records.push(DatasetRecord { id, feature_path, prompt: inst.prompt, answer: inst.answer });
    }
    let dataset_path = a.out_dir.join("dataset.jsonl");
    write_dataset(&dataset_path, &records)?;
    metrics.emit(json!({
        "record": "dataset",
        "path": dataset_path.display().to_string(),
        "count": records.len(),
    }));
    Ok(())
}

fn cmd_train(cli: &Cli, a: &TrainArgs, metrics: &mut Metrics) -> Result<()> {
    let mut rc = base_config(cli)?;
    ov(&mut rc.train.epochs, a.epochs);
    ov(&mut rc.train.batch_size, a.batch_size);
    ov(&mut rc.train.grad_accum, a.grad_accum);
    ov(&mut rc.train.lr, a.lr);
    ov(&mut rc.train.lambda, a.lambda);
    ov(&mut rc.train.temperature, a.temperature);
    ov(&mut rc.train.warmup_ratio, a.warmup_ratio);
    ov(&mut rc.train.weight_decay, a.weight_decay);
    ov(&mut rc.train.seed, a.seed);
    ov(&mut rc.train.span_policy, a.span_policy);
    ov(&mut rc.train.normalize_affinity, a.normalize_affinity);
    ov(&mut rc.train.lt_on_raw, a.lt_on_raw);
    ov(&mut rc.d_lm, a.d_lm);
    ov(&mut rc.vocab_size, a.vocab_size);
    if a.d_hidden.is_some() {
        rc.d_hidden = a.d_hidden;
    }
    rc.validate()?;

    let vocab = Vocab::new(rc.vocab_size)?;
    let items: Vec<TrainItem<f64>> = load_items(&a.dataset, &vocab)?;
    // Feature width comes from the data, not the config.
    let d = items
        .first()
        .map(|it| it.features.dims().2)
        .ok_or_else(|| Error::Config(format!("dataset {} is empty", a.dataset.display())))?;

    let (dp0, sp) = match &a.resume {
        Some(path) => {
            let ck: Checkpoint<f64> = read_checkpoint(path)?;
            (ck.disruptor, ck.surrogate)
        }
        None => {
            let d_h =
                rc.d_hidden.unwrap_or_else(|| DisruptorParams::<f64>::default_hidden(d));
            let dp = init_disruptor(d, d_h, rc.train.seed)?;
            let sp = init_surrogate(d, rc.d_lm, rc.vocab_size, rc.train.seed)?;
            (dp, sp)
        }
    };
    metrics.emit(rc.echo_json());

    let (dp, logs) = train_from(dp0, &items, &sp, &rc.train)?;
    for lb in &logs {
        metrics.emit(json!({
            "record": "train_step",
            "step": lb.step,
            "l_t": lb.l_t,
            "l_s": lb.l_s,
            "total": lb.total,
        }));
    }
    let ck = Checkpoint {
        seed: rc.train.seed,
        temperature: rc.train.temperature,
        lambda: rc.train.lambda,
        disruptor: dp,
        surrogate: sp,
        optimizer: None,
    };
    write_checkpoint(&a.out, &ck)?;
    metrics.emit(json!({
        "record": "checkpoint",
        "path": a.out.display().to_string(),
        "steps": logs.len(),
        "items": items.len(),
    }));
    Ok(())
}

fn cmd_compute_losses(cli: &Cli, a: &ComputeLossesArgs, metrics: &mut Metrics) -> Result<()> {
    let rc = base_config(cli)?;
    let ck: Checkpoint<f64> = read_checkpoint(&a.checkpoint)?;
    let vocab = ck.surrogate.vocab()?;
    let records = read_dataset(&a.dataset)?;
    let items: Vec<TrainItem<f64>> = load_items(&a.dataset, &vocab)?;

    let dp = if a.zero_disruptor {
        DisruptorParams::zeros(ck.disruptor.d(), ck.disruptor.d_h())
    } else {
        ck.disruptor.clone()
    };
    // Scoring knobs that shaped training come from the checkpoint; schedule
    // choices stay configurable.
    let mut tc = rc.train.clone();
    tc.temperature = ck.temperature;
    tc.lambda = ck.lambda;
    tc.lt_on_raw = a.raw;

    metrics.emit(json!({
        "record": "losses_config",
        "checkpoint": a.checkpoint.display().to_string(),
        "temperature": tc.temperature,
        "lambda": tc.lambda,
        "span_policy": tc.span_policy.to_string(),
        "raw": a.raw,
        "zero_disruptor": a.zero_disruptor,
    }));

    let limit = a.limit.unwrap_or(items.len());
    let mut sums = (0.0f64, 0.0f64, 0.0f64);
    let mut used = 0usize;
    for (rec, item) in records.iter().zip(&items).take(limit) {
        let (lb, spans) =
            total_loss_with_spans(&item.features, &item.prompt, &item.answer, &dp, &ck.surrogate, &tc)?;
        let cycle_scores: Vec<_> =
            spans.iter().map(|c| json!({"k": c.k, "z": c.z, "value": c.value})).collect();
        metrics.emit(json!({
            "record": "losses",
            "id": rec.id,
            "l_t": lb.l_t,
            "l_s": lb.l_s,
            "total": lb.total,
            "cycle_scores": cycle_scores,
        }));
        sums.0 += lb.l_t;
        sums.1 += lb.l_s;
        sums.2 += lb.total;
        used += 1;
    }
    if used > 0 {
        metrics.emit(json!({
            "record": "losses_summary",
            "items": used,
            "mean_l_t": sums.0 / used as f64,
            "mean_l_s": sums.1 / used as f64,
            "mean_total": sums.2 / used as f64,
        }));
    }
    Ok(())
}

fn cmd_decode(cli: &Cli, a: &DecodeArgs, metrics: &mut Metrics) -> Result<()> {
    let mut rc = base_config(cli)?;
    ov(&mut rc.decode.alpha, a.alpha);
    ov(&mut rc.decode.beta, a.beta);
    ov(&mut rc.decode.max_tokens, a.max_tokens);
    if let Some(seed) = a.sample_seed {
        rc.decode.mode = DecodeMode::Sample { seed };
    }
    rc.decode.validate()?;

    let ck: Checkpoint<f64> = read_checkpoint(&a.checkpoint)?;
    let vocab = ck.surrogate.vocab()?;
    let h: Tensor3<f64> = read_features(&a.features)?;
    let prompt = TokenSequence::new(parse_id_list(&a.prompt)?, Role::Prompt, &vocab)?;

    let base = baseline_decode_with_trace(&h, &prompt, &ck.surrogate, &rc.decode)?;
    if a.baseline {
        metrics.emit(json!({
            "record": "decode",
            "mode": "baseline",
            "beta": rc.decode.beta,
            "max_tokens": rc.decode.max_tokens,
            "tokens": base.tokens.ids(),
        }));
        return Ok(());
    }

    let con = decode_with_trace(&h, &prompt, &ck.disruptor, &ck.surrogate, &rc.decode)?;
    let steps: Vec<_> = con
        .steps
        .iter()
        .map(|s| {
            json!({
                "index": s.index,
                "token": s.token,
                "retained": s.retained,
                "kl": s.kl_baseline_calibrated,
            })
        })
        .collect();
    metrics.emit(json!({
        "record": "decode",
        "mode": "contrastive",
        "alpha": rc.decode.alpha,
        "beta": rc.decode.beta,
        "max_tokens": rc.decode.max_tokens,
        "baseline": base.tokens.ids(),
        "contrastive": con.tokens.ids(),
        "diverged": base.tokens.ids() != con.tokens.ids(),
        "steps": steps,
    }));
    Ok(())
}

fn report_check(metrics: &mut Metrics, failed: &mut usize, name: &str, outcome: Result<()>) {
    match outcome {
        Ok(()) => metrics.emit(json!({"record": "verify", "check": name, "status": "ok"})),
        Err(e) => {
            *failed += 1;
            metrics.emit(json!({
                "record": "verify",
                "check": name,
                "status": "failed",
                "error": e.to_string(),
            }));
        }
    }
}

fn cmd_verify(a: &VerifyArgs, metrics: &mut Metrics) -> Result<()> {
    let mut failed = 0usize;
    report_check(metrics, &mut failed, "walk_enumeration", verify_walks(a.seed));
    report_check(metrics, &mut failed, "chapman_kolmogorov", verify_chapman_kolmogorov(a.seed));
    report_check(metrics, &mut failed, "finite_differences", verify_finite_differences(a.seed));
    report_check(metrics, &mut failed, "reduction_identities", verify_reductions(a.seed));
    report_check(metrics, &mut failed, "plausibility_properties", verify_plausibility(a.seed));
    report_check(metrics, &mut failed, "format_round_trip", verify_formats(a.seed));
    if failed > 0 {
        return Err(Error::Numerical(format!("{failed}/6 oracle checks failed")));
    }
    Ok(())
}

fn verify_walks(seed: u64) -> Result<()> {
    for &(t, n) in &[(3usize, 2usize), (3, 3), (4, 2), (5, 2)] {
        for s in 0..3u64 {
            let h = Tensor3::<f64>::seeded_gaussian(t, n, 4, seed ^ (1000 + s))
                .map(|v| v * 0.5);
            let chain = transition_chain(&h, 0.5, false)?;
            let schedule = SpanSchedule::new(SpanPolicy::Retrace, t)?;
            for (z, ks) in schedule.spans() {
                for &k in ks {
                    let fast = round_trip(&multi_step(&chain, k, *z)?)?;
                    let slow = brute_force_roundtrip(&chain, k, *z)?;
                    for i in 0..n {
                        for j in 0..n {
                            let diff = (fast.get(i, j) - slow.get(i, j)).abs();
                            if diff > 1e-10 {
                                return Err(Error::Numerical(format!(
                                    "walk mismatch at t={t} n={n} k={k} z={z}: {diff:e}"
                                )));
                            }
                        }
                    }
                }
            }
        }
    }
    Ok(())
}

fn verify_chapman_kolmogorov(seed: u64) -> Result<()> {
    for s in 0..10u64 {
        let h = Tensor3::<f64>::seeded_gaussian(6, 3, 4, seed ^ (2000 + s)).map(|v| v * 0.5);
        let chain = transition_chain(&h, 0.3, false)?;
        for (k, a, b) in [(1usize, 1usize, 2usize), (1, 2, 3), (2, 1, 3), (1, 3, 2)] {
            let whole = multi_step(&chain, k, a + b)?;
            let split = matmul(&multi_step(&chain, k, a)?, &multi_step(&chain, k + a, b)?)?;
            for i in 0..3 {
                for j in 0..3 {
                    if (whole.get(i, j) - split.get(i, j)).abs() > 1e-9 {
                        return Err(Error::Numerical(format!(
                            "composition mismatch at seed {s} k={k} a={a} b={b}"
                        )));
                    }
                }
            }
        }
    }
    Ok(())
}

fn verify_finite_differences(seed: u64) -> Result<()> {
    for s in 0..3u64 {
        let h = Tensor3::<f64>::seeded_gaussian(3, 2, 4, seed ^ (3000 + s)).map(|v| v * 0.5);
        let sp = init_surrogate::<f64>(4, 8, 16, seed ^ (3100 + s))?;
        let dp = init_disruptor::<f64>(4, 2, seed ^ (3200 + s))?;
        let vocab = sp.vocab()?;
        let x = TokenSequence::new(vec![3, 5], Role::Prompt, &vocab)?;
        let y = TokenSequence::new(vec![7, 4, 1], Role::Answer, &vocab)?;
        let cfg = TrainConfig::<f64>::default();
        let report = finite_diff_check(&h, &x, &y, &dp, &sp, &cfg, 1e-5)?;
        if report.max_rel_err > 1e-4 {
            return Err(Error::Numerical(format!(
                "gradient mismatch {:.3e} at parameter {} (analytic {:.6e}, numeric {:.6e})",
                report.max_rel_err, report.worst_index, report.worst_analytic,
                report.worst_numeric
            )));
        }
    }
    Ok(())
}

fn verify_reductions(seed: u64) -> Result<()> {
    let d = 6;
    let sp = init_surrogate::<f64>(d, 12, 32, seed ^ 4000)?;
    let vocab = sp.vocab()?;
    let dp = init_disruptor::<f64>(d, 3, seed ^ 4100)?;
    let zeros = DisruptorParams::<f64>::zeros(d, 3);
    for s in 0..5u64 {
        let h = Tensor3::<f64>::seeded_gaussian(4, 2, d, seed ^ (4200 + s)).map(|v| v * 0.5);
        let prompt = TokenSequence::new(vec![3, 8], Role::Prompt, &vocab)?;

        let cfg = DecodingConfig { alpha: 0.0, beta: 0.1, max_tokens: 12, mode: DecodeMode::Greedy };
        let contrastive = decode(&h, &prompt, &dp, &sp, &cfg)?;
        let baseline = baseline_decode_with_trace(&h, &prompt, &sp, &cfg)?.tokens;
        if contrastive.ids() != baseline.ids() {
            return Err(Error::Numerical("alpha=0 decode diverged from baseline".into()));
        }

        let cfg = DecodingConfig { alpha: 0.8, ..cfg };
        let inert = decode(&h, &prompt, &zeros, &sp, &cfg)?;
        let baseline = baseline_decode_with_trace(&h, &prompt, &sp, &cfg)?.tokens;
        if inert.ids() != baseline.ids() {
            return Err(Error::Numerical("zero-disruptor decode diverged from baseline".into()));
        }

        let schedule = SpanSchedule::new(SpanPolicy::Retrace, 4)?;
        let (lt_raw, _) = spatiotemporal_loss(&h, 0.07, &schedule)?;
        let (lt_zero, _) = spatiotemporal_loss(&disrupt(&h, &zeros)?, 0.07, &schedule)?;
        if lt_raw != lt_zero {
            return Err(Error::Numerical(
                "zero disruptor changed the temporal loss".into(),
            ));
        }

        let f: Vec<f64> = (0..8).map(|i| ((i as f64) + s as f64).sin()).collect();
        let g: Vec<f64> = (0..8).map(|i| ((i as f64) - s as f64).cos()).collect();
        if calibrated_logits(&f, &g, 0.0)? != f {
            return Err(Error::Numerical("alpha=0 calibration is not the identity".into()));
        }
    }
    Ok(())
}

fn verify_plausibility(seed: u64) -> Result<()> {
    for s in 0..200u64 {
        let logits: Vec<f64> = (0..16)
            .map(|i| (((seed ^ (5000 + s)).wrapping_mul(2654435761).wrapping_add(i) % 977) as f64
                / 97.0)
                .sin()
                * 3.0)
            .collect();
        let p = softmax_vec(&logits);
        let argmax = (0..p.len()).max_by(|&a, &b| p[a].partial_cmp(&p[b]).unwrap()).unwrap();
        for beta in [0.0, 0.1, 0.5, 1.0] {
            let set = plausibility_set(&p, beta)?;
            if set.is_empty() {
                return Err(Error::Numerical(format!("empty plausibility set at beta {beta}")));
            }
            if !set.contains(&argmax) {
                return Err(Error::Numerical("plausibility set dropped the argmax".into()));
            }
            if beta == 0.0 && set.len() != p.len() {
                return Err(Error::Numerical("beta=0 failed to keep every token".into()));
            }
        }
    }
    Ok(())
}

fn verify_formats(seed: u64) -> Result<()> {
    let dir = std::env::temp_dir().join(format!(
        "sscd-verify-{}-{seed}",
        std::process::id()
    ));
    std::fs::create_dir_all(&dir)?;
    let result = (|| -> Result<()> {
        let h = Tensor3::<f64>::seeded_gaussian(8, 4, 16, seed ^ 6000);
        let fpath = dir.join("probe.feat");
        write_features(&fpath, &h)?;
        let size = std::fs::metadata(&fpath)?.len();
        if size != 2068 {
            return Err(Error::Numerical(format!("8x4x16 feature file is {size} bytes")));
        }
        let back: Tensor3<f64> = read_features(&fpath)?;
        let fpath2 = dir.join("probe2.feat");
        write_features(&fpath2, &back)?;
        if std::fs::read(&fpath)? != std::fs::read(&fpath2)? {
            return Err(Error::Numerical("feature file round trip not byte-exact".into()));
        }

        let ck = Checkpoint {
            seed,
            temperature: 0.07,
            lambda: 5.0,
            disruptor: init_disruptor::<f64>(6, 3, seed ^ 6100)?,
            surrogate: init_surrogate::<f64>(6, 12, 32, seed ^ 6200)?,
            optimizer: None,
        };
        let cpath = dir.join("probe.ckpt");
        write_checkpoint(&cpath, &ck)?;
        let back: Checkpoint<f64> = read_checkpoint(&cpath)?;
        let cpath2 = dir.join("probe2.ckpt");
        write_checkpoint(&cpath2, &back)?;
        if std::fs::read(&cpath)? != std::fs::read(&cpath2)? {
            return Err(Error::Numerical("checkpoint round trip not byte-exact".into()));
        }
        Ok(())
    })();
    let _ = std::fs::remove_dir_all(&dir);
    result
}

fn cmd_inspect(a: &InspectArgs, metrics: &mut Metrics) -> Result<()> {
    let ck: Checkpoint<f64> = read_checkpoint(&a.checkpoint)?;
    let flat = ck.disruptor.flatten();
    let norm = flat.iter().map(|v| v * v).sum::<f64>().sqrt();
    let optimizer = ck.optimizer.as_ref().map(|o| json!({"step": o.step}));
    metrics.emit(json!({
        "record": "checkpoint_info",
        "path": a.checkpoint.display().to_string(),
        "d": ck.disruptor.d(),
        "d_hidden": ck.disruptor.d_h(),
        "d_lm": ck.surrogate.d_lm(),
        "vocab_size": ck.surrogate.vocab_size(),
        "temperature": ck.temperature,
        "lambda": ck.lambda,
        "seed": ck.seed,
        "surrogate_seed": ck.surrogate.seed,
        "disruptor_params": flat.len(),
        "disruptor_l2": norm,
        "optimizer": optimizer,
    }));
    Ok(())
}
