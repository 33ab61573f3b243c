//! `fct` — single binary front end for the Fourier Complex Transformer
//! workspace: gradient checking, attention benchmarks, training, evaluation,
//! attention-map inspection, and the DFT associativity probe.
//!
//! Exit codes: 0 success, 1 verification/runtime failure, 2 usage error.
//! Every run writes a `run_manifest.json` under `--out`, even on failure.

use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use serde::Serialize;

use fct_core::attention::{associativity_probe, Normalizer};
use fct_core::autodiff::Tape;
use fct_core::bench::{self, BenchRecord, Mechanism};
use fct_core::error::{FctError, Result};
use fct_core::gradcheck::{run_suite, GradcheckResult};
use fct_core::io as fctt;
use fct_core::model::{
    bind_model, count_params, forward_classifier_traced, init_params, load_checkpoint,
    save_checkpoint, FctConfig,
};
use fct_core::rng::Rng;
use fct_core::tensor::RealTensor;
use fct_core::train::{
    evaluate, train_loop, AdamW, DatasetSpec, SyntheticSpectralDataset, TrainOptions, TrainRecord,
};

#[derive(Parser)]
#[command(
    name = "fct",
    version,
    about = "Fourier Complex Transformer toolkit",
    propagate_version = true
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Finite-difference check of every autodiff primitive plus composed
    /// CSA and full FCT blocks; exits 1 if any check fails.
    Gradcheck(GradcheckArgs),
    /// Timed SA-vs-CSA forward comparison with analytic FLOP counts.
    Bench(BenchArgs),
    /// Train a classifier on the synthetic oriented-sinusoid dataset.
    Train(TrainArgs),
    /// Held-out overall accuracy of a saved checkpoint.
    Eval(EvalArgs),
    /// Dump attention maps and alpha values of a checkpoint as FCTT files.
    Inspect(InspectArgs),
    /// Compare F(X Xᵀ X) against F(X) F(Xᵀ) F(X) on small matrices.
    #[command(name = "associativity-probe", visible_alias = "probe")]
    AssociativityProbe(ProbeArgs),
}

#[derive(Args)]
struct GradcheckArgs {
    #[arg(long, default_value_t = 7)]
    seed: u64,
    /// Relative-error pass threshold.
    #[arg(long, default_value_t = 1e-5)]
    tol: f64,
    /// Output directory (gradcheck.csv, run_manifest.json).
    #[arg(long, default_value = "fct-out")]
    out: PathBuf,
}

#[derive(Args)]
struct BenchArgs {
    /// Comma-separated subset of {sa,csa}.
    #[arg(long, default_value = "sa,csa")]
    mechanisms: String,
    /// Comma-separated transform-axis lengths (powers of two).
    #[arg(long, default_value = "256,1024,4096")]
    sizes: String,
    #[arg(long, default_value_t = 16)]
    c: usize,
    #[arg(long, default_value_t = 30)]
    trials: usize,
    #[arg(long, default_value_t = 3)]
    warmups: usize,
    #[arg(long, default_value_t = 7)]
    seed: u64,
    /// Peak-allocation budget per timed size; larger sizes are skipped.
    #[arg(long, default_value_t = 2 * 1024 * 1024 * 1024)]
    budget_bytes: u64,
    /// Output directory (bench.csv, run_manifest.json).
    #[arg(long, default_value = "fct-out")]
    out: PathBuf,
}

#[derive(Args)]
struct TrainArgs {
    /// Preset {toy,tiny,small,base,large} or a path to a config JSON file.
    /// Presets adopt --classes/--image-size; a JSON config is used verbatim
    /// and must match the dataset flags.
    #[arg(long, default_value = "toy")]
    config: String,
    #[arg(long, default_value = "logmax")]
    normalizer: String,
    #[arg(long, default_value_t = 1000)]
    steps: u64,
    #[arg(long, default_value_t = 7)]
    seed: u64,
    #[arg(long, default_value_t = 8)]
    batch_size: usize,
    #[arg(long, default_value_t = 4)]
    classes: usize,
    #[arg(long, default_value_t = 32)]
    image_size: usize,
    /// Gaussian pixel-noise standard deviation.
    #[arg(long, default_value_t = 0.1)]
    noise: f64,
    /// Input multiplier (x100 reproduces the stability study).
    #[arg(long, default_value_t = 1.0)]
    input_scale: f64,
    #[arg(long, default_value_t = 1e-3)]
    lr: f64,
    /// Global-norm gradient clipping (off by default; the stability study
    /// requires it off).
    #[arg(long)]
    grad_clip: Option<f64>,
    /// Resume from an existing checkpoint under --out instead of starting
    /// fresh; the stored config must match.
    #[arg(long, default_value_t = false)]
    resume: bool,
    /// Output directory (records.csv, checkpoint/, run_manifest.json).
    #[arg(long, default_value = "fct-out")]
    out: PathBuf,
}

#[derive(Args)]
struct EvalArgs {
    /// Checkpoint directory produced by `fct train`.
    #[arg(long)]
    ckpt: PathBuf,
    #[arg(long, default_value_t = 7)]
    seed: u64,
    #[arg(long, default_value_t = 10)]
    batches: usize,
    #[arg(long, default_value_t = 32)]
    batch_size: usize,
    #[arg(long, default_value_t = 0.1)]
    noise: f64,
    /// Output directory (eval.csv, run_manifest.json).
    #[arg(long, default_value = "fct-out")]
    out: PathBuf,
}

#[derive(Args)]
struct InspectArgs {
    /// Checkpoint directory produced by `fct train`.
    #[arg(long)]
    ckpt: PathBuf,
    #[arg(long, default_value_t = 7)]
    seed: u64,
    #[arg(long, default_value_t = 0.1)]
    noise: f64,
    /// Output directory (*.fctt dumps, run_manifest.json).
    #[arg(long, default_value = "fct-out")]
    out: PathBuf,
}

#[derive(Args)]
struct ProbeArgs {
    #[arg(long, default_value_t = 7)]
    seed: u64,
    /// Output directory (probe.csv, run_manifest.json).
    #[arg(long, default_value = "fct-out")]
    out: PathBuf,
}

#[derive(Serialize)]
struct RunManifest {
    subcommand: String,
    args: Vec<String>,
    seed: u64,
    version: String,
    start: String,
    end: String,
    outputs: Vec<String>,
    success: bool,
    error: Option<String>,
}

fn write_manifest_atomic(out_dir: &Path, manifest: &RunManifest) -> Result<()> {
    std::fs::create_dir_all(out_dir)?;
    let json = serde_json::to_string_pretty(manifest)
        .map_err(|e| FctError::Format(format!("manifest encode: {e}")))?;
    let tmp = out_dir.join(".run_manifest.json.tmp");
    std::fs::write(&tmp, json)?;
    std::fs::rename(&tmp, out_dir.join("run_manifest.json"))?;
    Ok(())
}

fn write_csv(path: &Path, header: &str, rows: &[String]) -> Result<()> {
    let mut body = String::with_capacity(header.len() + 1 + rows.len() * 32);
    body.push_str(header);
    body.push('\n');
    for r in rows {
        body.push_str(r);
        body.push('\n');
    }
    std::fs::write(path, body)?;
    Ok(())
}

fn fct_threads(default: usize) -> usize {
    std::env::var("FCT_THREADS")
        .ok()
        .and_then(|v| v.parse::<usize>().ok())
        .filter(|&n| n >= 1)
        .unwrap_or(default)
}

/// What a subcommand hands back for the manifest and exit code.
struct RunOutputs {
    outputs: Vec<PathBuf>,
    /// Verification performed and failed (exit 1 with success=false).
    verification_failed: bool,
}

fn ok(outputs: Vec<PathBuf>) -> Result<RunOutputs> {
    Ok(RunOutputs {
        outputs,
        verification_failed: false,
    })
}

fn run_gradcheck(a: &GradcheckArgs) -> Result<RunOutputs> {
    let results = run_suite(a.seed, a.tol)?;
    let rows: Vec<String> = results.iter().map(GradcheckResult::csv_row).collect();
    let csv = a.out.join("gradcheck.csv");
    std::fs::create_dir_all(&a.out)?;
    write_csv(&csv, GradcheckResult::CSV_HEADER, &rows)?;
    let failed = results.iter().filter(|r| !r.pass).count();
    for r in &results {
        println!("{}", r.csv_row());
    }
    println!(
        "gradcheck: {}/{} primitives passed (tol {:.0e}, seed {})",
        results.len() - failed,
        results.len(),
        a.tol,
        a.seed
    );
    Ok(RunOutputs {
        outputs: vec![csv],
        verification_failed: failed > 0,
    })
}

fn run_bench(a: &BenchArgs) -> Result<RunOutputs> {
    let mechanisms: Vec<Mechanism> = a
        .mechanisms
        .split(',')
        .filter(|s| !s.is_empty())
        .map(Mechanism::parse)
        .collect::<Result<_>>()?;
    let sizes: Vec<usize> = a
        .sizes
        .split(',')
        .filter(|s| !s.is_empty())
        .map(|s| {
            s.trim()
                .parse::<usize>()
                .map_err(|e| FctError::Config(format!("bad size `{s}`: {e}")))
        })
        .collect::<Result<_>>()?;
    let threads = fct_threads(1);
    let report = bench::run_bench(
        &mechanisms,
        &sizes,
        a.c,
        a.trials,
        a.warmups,
        a.seed,
        threads,
        a.budget_bytes,
    )?;
    let rows: Vec<String> = report.records.iter().map(BenchRecord::csv_row).collect();
    std::fs::create_dir_all(&a.out)?;
    let csv = a.out.join("bench.csv");
    write_csv(&csv, BenchRecord::CSV_HEADER, &rows)?;
    println!("{}", bench::conventions_header());
    for r in &rows {
        println!("{r}");
    }
    for s in &report.skipped {
        println!("skipped {} n={}: {}", s.mechanism, s.n, s.reason);
    }
    match report.crossover_n {
        Some(n0) => println!("crossover: csa faster than sa from n = {n0}"),
        None => println!("crossover: none within tested sizes"),
    }
    ok(vec![csv])
}

/// Reduced desk-scale preset used by default and by the classification gate.
fn toy_config(classes: usize, image_size: usize) -> FctConfig {
    let mut c = FctConfig::tiny();
    c.name = "fct-toy".into();
    c.c1 = 32;
    c.depths = [1, 1, 2, 1];
    c.num_classes = classes;
    c.input_size = image_size;
    c.in_channels = 1;
    c
}

fn resolve_config(spec: &str, classes: usize, image_size: usize) -> Result<FctConfig> {
    if spec == "toy" {
        return Ok(toy_config(classes, image_size));
    }
    if spec.ends_with(".json") {
        let raw = std::fs::read_to_string(spec)?;
        let config: FctConfig = serde_json::from_str(&raw)
            .map_err(|e| FctError::Config(format!("config `{spec}`: {e}")))?;
        return Ok(config);
    }
    let mut config = FctConfig::by_name(spec)?;
    config.num_classes = classes;
    config.input_size = image_size;
    config.in_channels = 1;
    Ok(config)
}

fn run_train(a: &TrainArgs) -> Result<RunOutputs> {
    let normalizer = Normalizer::parse(&a.normalizer)?;
    let ckpt_dir = a.out.join("checkpoint");
    let dataset = SyntheticSpectralDataset::new(DatasetSpec {
        num_classes: a.classes,
        image_size: a.image_size,
        noise: a.noise,
        seed: a.seed,
    })?;
    let (config, mut store) = if a.resume {
        let (config, store, saved_norm) = load_checkpoint(&ckpt_dir)?;
        if saved_norm != normalizer {
            return Err(FctError::Config(format!(
                "checkpoint was trained with `{}`, requested `{}`",
                saved_norm.name(),
                normalizer.name()
            )));
        }
        let requested = resolve_config(&a.config, a.classes, a.image_size)?;
        if requested != config {
            return Err(FctError::Config(
                "checkpoint config does not match the requested config".into(),
            ));
        }
        (config, store)
    } else {
        let config = resolve_config(&a.config, a.classes, a.image_size)?;
        config.validate()?;
        let store = init_params(&config, a.seed)?;
        (config, store)
    };
    println!(
        "training {} ({} params) with {} for {} steps",
        config.name,
        count_params(&config),
        normalizer.name(),
        a.steps
    );
    let opts = TrainOptions {
        steps: a.steps,
        batch_size: a.batch_size,
        normalizer,
        optimizer: AdamW {
            lr: a.lr,
            ..AdamW::default()
        },
        input_scale: a.input_scale,
        grad_clip: a.grad_clip,
        threads: fct_threads(std::thread::available_parallelism().map_or(1, |n| n.get())),
        ..TrainOptions::default()
    };
    let outcome = train_loop(&config, &dataset, &mut store, &opts)?;
    std::fs::create_dir_all(&a.out)?;
    let rows: Vec<String> = outcome.records.iter().map(TrainRecord::csv_row).collect();
    let csv = a.out.join("records.csv");
    write_csv(&csv, TrainRecord::CSV_HEADER, &rows)?;
    save_checkpoint(&ckpt_dir, &config, &store, normalizer)?;
    if let Some(last) = outcome.records.last() {
        println!(
            "final step {}: loss {:.6} grad_norm {:.4}",
            last.step, last.loss, last.grad_norm
        );
    }
    if outcome.halted_on_nan {
        println!("halted on NaN (recorded in records.csv with nan_flag=1)");
    }
    ok(vec![csv, ckpt_dir])
}

fn run_eval(a: &EvalArgs) -> Result<RunOutputs> {
    let (config, store, normalizer) = load_checkpoint(&a.ckpt)?;
    let dataset = SyntheticSpectralDataset::new(DatasetSpec {
        num_classes: config.num_classes,
        image_size: config.input_size,
        noise: a.noise,
        seed: a.seed,
    })?;
    let opts = TrainOptions {
        batch_size: a.batch_size,
        normalizer,
        ..TrainOptions::default()
    };
    let oa = evaluate(&config, &store, &dataset, normalizer, a.batches, &opts)?;
    std::fs::create_dir_all(&a.out)?;
    let csv = a.out.join("eval.csv");
    write_csv(
        &csv,
        "batches,batch_size,noise,oa",
        &[format!("{},{},{},{:.6}", a.batches, a.batch_size, a.noise, oa)],
    )?;
    println!("held-out OA over {} batches: {:.4}", a.batches, oa);
    ok(vec![csv])
}

fn run_inspect(a: &InspectArgs) -> Result<RunOutputs> {
    let (config, store, normalizer) = load_checkpoint(&a.ckpt)?;
    let dataset = SyntheticSpectralDataset::new(DatasetSpec {
        num_classes: config.num_classes,
        image_size: config.input_size,
        noise: a.noise,
        seed: a.seed,
    })?;
    let (images, labels) = dataset.eval_batch(0, 1);
    let mut tape = Tape::new();
    let ids = bind_model(&mut tape, &store, &config)?;
    let imgs = tape.leaf(images);
    let mut captures = Vec::new();
    forward_classifier_traced(
        &mut tape,
        imgs,
        1,
        &config,
        &ids,
        normalizer,
        Some(&mut captures),
    )?;
    std::fs::create_dir_all(&a.out)?;
    let mut outputs = Vec::new();
    for (name, trace) in &captures {
        let pr = a.out.join(format!("{name}.attn_r.fctt"));
        let pi = a.out.join(format!("{name}.attn_i.fctt"));
        fctt::write_tensor(&pr, &trace.attn_r)?;
        fctt::write_tensor(&pi, &trace.attn_i)?;
        outputs.push(pr);
        outputs.push(pi);
    }
    for (name, p) in store.iter() {
        if name.ends_with("csa.alpha") {
            let path = a.out.join(format!("{name}.fctt"));
            fctt::write_tensor(&path, &p.value)?;
            outputs.push(path);
        }
    }
    println!(
        "dumped {} attention maps and alpha vectors for eval sample 0 (label {})",
        outputs.len(),
        labels[0]
    );
    ok(outputs)
}

fn run_probe(a: &ProbeArgs) -> Result<RunOutputs> {
    let mut rows = Vec::new();
    for n in [4usize, 8] {
        let mut rng = Rng::new(a.seed).derive(n as u64);
        let x = RealTensor::from_fn(&[n, n], |_| rng.normal());
        let r = associativity_probe(&x)?;
        rows.push(format!(
            "{},{:.17e},{:.17e},{:.17e}",
            r.n, r.lhs_norm, r.rhs_norm, r.rel_discrepancy
        ));
    }
    std::fs::create_dir_all(&a.out)?;
    let csv = a.out.join("probe.csv");
    write_csv(&csv, "n,lhs_norm,rhs_norm,rel_discrepancy", &rows)?;
    for r in &rows {
        println!("{r}");
    }
    ok(vec![csv])
}

fn main() {
    let cli = Cli::parse();
    let argv: Vec<String> = std::env::args().skip(1).collect();
    let start = chrono::Utc::now().to_rfc3339();
    let (name, seed, out_dir, result) = match &cli.command {
        Command::Gradcheck(a) => ("gradcheck", a.seed, a.out.clone(), run_gradcheck(a)),
        Command::Bench(a) => ("bench", a.seed, a.out.clone(), run_bench(a)),
        Command::Train(a) => ("train", a.seed, a.out.clone(), run_train(a)),
        Command::Eval(a) => ("eval", a.seed, a.out.clone(), run_eval(a)),
        Command::Inspect(a) => ("inspect", a.seed, a.out.clone(), run_inspect(a)),
        Command::AssociativityProbe(a) => {
            ("associativity-probe", a.seed, a.out.clone(), run_probe(a))
        }
    };
    let (outputs, success, error, code) = match &result {
        Ok(r) if r.verification_failed => (
            r.outputs.clone(),
            false,
            Some("verification failed".to_string()),
            1,
        ),
        Ok(r) => (r.outputs.clone(), true, None, 0),
        Err(e) => (Vec::new(), false, Some(e.to_string()), 1),
    };
    let manifest = RunManifest {
        subcommand: name.to_string(),
        args: argv,
        seed,
        version: env!("CARGO_PKG_VERSION").to_string(),
        start,
        end: chrono::Utc::now().to_rfc3339(),
        outputs: outputs
            .iter()
            .map(|p| p.to_string_lossy().into_owned())
            .collect(),
        success,
        error,
    };
    if let Err(e) = write_manifest_atomic(&out_dir, &manifest) {
        eprintln!("error: could not write run manifest: {e}");
        std::process::exit(1);
    }
    if let Err(e) = &result {
        eprintln!("error: {e}");
    }
    std::process::exit(code);
}
