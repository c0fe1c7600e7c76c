//! `streamtom` — generate token streams, run the compression pipeline,
//! query stored memory, and evaluate the analytic cost models.
//!
//! Exit codes: 0 ok, 2 usage, 3 I/O failure, 4 malformed or invalid data.
//! All output on stdout is deterministic given flags and input files;
//! timing goes to stderr. `STREAMTOM_THREADS` caps worker parallelism
//! (0 = automatic).

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use clap::{Args, Parser, Subcommand, ValueEnum};

use streamtom::accounting::{
    self, binary_gb, compression_ratio, decimal_gb, prefill_cost_ratio, retention_percent,
    CostModel,
};
use streamtom::core::StreamConfig;
use streamtom::harness::{
    collect_run_metrics, generate_stream, metrics_to_csv, SaliencyMode, SyntheticStreamSpec,
};
use streamtom::oqm::{dequantize_group, quantize_group, snapshot};
use streamtom::pipeline::{KvProjector, Pipeline};
use streamtom::stream_file;

const EXIT_USAGE: u8 = 2;
const EXIT_IO: u8 = 3;
const EXIT_DATA: u8 = 4;

#[derive(Parser)]
#[command(name = "streamtom", version, about = "Streaming token compression toolkit")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic token stream and write it as a TOKS file
    Generate(GenerateArgs),
    /// Run the compression pipeline over a TOKS stream, writing an OQM1
    /// snapshot and a metrics CSV
    Run(RunArgs),
    /// Retrieve and reconstruct groups from an OQM1 snapshot
    Query(QueryArgs),
    /// Evaluate the kv-cache growth and compression cost models
    ModelMemory(ModelMemoryArgs),
}

#[derive(Args)]
struct GenerateArgs {
    /// Output TOKS path
    #[arg(short, long)]
    output: PathBuf,
    #[arg(long, default_value_t = 7)]
    seed: u64,
    #[arg(long, default_value_t = 64)]
    frames: usize,
    /// Tokens per frame
    #[arg(long, default_value_t = 196)]
    n: usize,
    /// Feature dimension
    #[arg(long, default_value_t = 64)]
    dim: usize,
    #[arg(long, default_value_t = 0.5)]
    fps: f32,
    /// Fraction of token positions that evolve slowly
    #[arg(long, default_value_t = 0.6)]
    static_fraction: f64,
    /// Per-frame perturbation scale for static tokens
    #[arg(long, default_value_t = 1e-3)]
    drift: f64,
    /// Probability a dynamic token is redrawn each frame
    #[arg(long, default_value_t = 1.0)]
    resample: f64,
    #[arg(long, value_enum, default_value_t = SaliencyModeArg::Peaked)]
    saliency_mode: SaliencyModeArg,
}

#[derive(Clone, Copy, ValueEnum)]
enum SaliencyModeArg {
    Uniform,
    Peaked,
}

impl From<SaliencyModeArg> for SaliencyMode {
    fn from(v: SaliencyModeArg) -> Self {
        match v {
            SaliencyModeArg::Uniform => SaliencyMode::UniformRandom,
            SaliencyModeArg::Peaked => SaliencyMode::PeakedOnDynamic,
        }
    }
}

#[derive(Args)]
struct RunArgs {
    /// Input TOKS stream
    #[arg(long)]
    stream: PathBuf,
    /// Output OQM1 snapshot path
    #[arg(long, default_value = "snapshot.oqm1")]
    snapshot: PathBuf,
    /// Output metrics CSV path
    #[arg(long, default_value = "metrics.csv")]
    metrics: PathBuf,
    /// Retained tokens per frame (G)
    #[arg(long, default_value_t = 50)]
    tokens: usize,
    /// Stored code width in bits (2 or 4)
    #[arg(long, default_value_t = 4)]
    bits: u8,
    /// Static/dynamic similarity threshold
    #[arg(long, default_value_t = 0.9)]
    threshold: f32,
    /// Groups retrieved per query; defaults to budget / tokens
    #[arg(long)]
    top_k: Option<usize>,
    /// Total active-token budget per query
    #[arg(long, default_value_t = 12_000)]
    budget: usize,
    #[arg(long, default_value_t = 4)]
    heads: usize,
    #[arg(long, default_value_t = 128)]
    head_dim: usize,
    /// Driver batch size; grouping only, stored bytes are identical for
    /// any value
    #[arg(long, default_value_t = 1)]
    batch: usize,
    /// Row-chunk size when computing saliency for streams without it
    #[arg(long, default_value_t = 64)]
    saliency_chunk: usize,
    /// Seed for the deterministic kv projector
    #[arg(long, default_value_t = 7077)]
    proj_seed: u64,
    /// Full-precision system prefix tokens to synthesize
    #[arg(long, default_value_t = 0)]
    prefix_tokens: usize,
}

#[derive(Args)]
struct QueryArgs {
    /// Input OQM1 snapshot
    #[arg(long)]
    snapshot: PathBuf,
    /// Text file of whitespace-separated floats, length heads * head_dim
    #[arg(long)]
    query: PathBuf,
    /// Groups to retrieve
    #[arg(long, default_value_t = 240)]
    k: usize,
}

#[derive(Args)]
struct ModelMemoryArgs {
    #[arg(long, default_value_t = 28)]
    layers: u32,
    /// Tokens per frame (N)
    #[arg(long, default_value_t = 196)]
    n: u32,
    #[arg(long, default_value_t = 4)]
    heads: u32,
    #[arg(long, default_value_t = 128)]
    head_dim: u32,
    #[arg(long, default_value_t = 2)]
    dtype_bytes: u32,
    #[arg(long, default_value_t = 0.5)]
    fps: f64,
    /// Retained tokens per frame (G)
    #[arg(long, default_value_t = 50)]
    tokens: u32,
    /// Stored code width in bits (2 or 4)
    #[arg(long, default_value_t = 4)]
    bits: u32,
    /// Streaming horizon in seconds
    #[arg(long, default_value_t = 3600.0)]
    seconds: f64,
    /// Render gigabytes as 10^9 instead of 2^30
    #[arg(long)]
    decimal_gb: bool,
}

struct CliError {
    code: u8,
    message: String,
}

impl CliError {
    fn usage(message: impl Into<String>) -> Self {
        Self {
            code: EXIT_USAGE,
            message: message.into(),
        }
    }

    fn io(message: impl Into<String>) -> Self {
        Self {
            code: EXIT_IO,
            message: message.into(),
        }
    }

    fn data(message: impl Into<String>) -> Self {
        Self {
            code: EXIT_DATA,
            message: message.into(),
        }
    }
}

/// Library errors split by exit-code class: I/O failures vs bad data.
fn classify(err: streamtom::Error, context: &str) -> CliError {
    match err {
        streamtom::Error::Io(e) => CliError::io(format!("{context}: {e}")),
        other => CliError::data(format!("{context}: {other}")),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    if let Err(err) = init_threads() {
        eprintln!("error: {}", err.message);
        return ExitCode::from(err.code);
    }
    let result = match cli.command {
        Command::Generate(args) => cmd_generate(args),
        Command::Run(args) => cmd_run(args),
        Command::Query(args) => cmd_query(args),
        Command::ModelMemory(args) => cmd_model_memory(args),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {}", err.message);
            ExitCode::from(err.code)
        }
    }
}

fn init_threads() -> Result<(), CliError> {
    match std::env::var("STREAMTOM_THREADS") {
        Err(_) => Ok(()),
        Ok(raw) => {
            let n: usize = raw
                .trim()
                .parse()
                .map_err(|_| CliError::usage(format!("STREAMTOM_THREADS must be a count, got '{raw}'")))?;
            streamtom::set_worker_threads(n);
            Ok(())
        }
    }
}

fn cmd_generate(args: GenerateArgs) -> Result<(), CliError> {
    let spec = SyntheticStreamSpec {
        seed: args.seed,
        tokens_per_frame: args.n,
        feature_dim: args.dim,
        frames: args.frames,
        static_fraction: args.static_fraction,
        drift_amplitude: args.drift,
        dynamic_resample_rate: args.resample,
        saliency_mode: args.saliency_mode.into(),
    };
    spec.validate().map_err(CliError::usage)?;
    if !(args.fps.is_finite() && args.fps > 0.0) {
        return Err(CliError::usage(format!("fps must be positive, got {}", args.fps)));
    }

    let started = Instant::now();
    let frames = generate_stream(&spec);
    let stored: Vec<stream_file::StoredFrame> = frames
        .into_iter()
        .map(|f| stream_file::StoredFrame {
            features: f.features,
            saliency: Some(f.saliency),
        })
        .collect();
    let file = File::create(&args.output)
        .map_err(|e| CliError::io(format!("create {}: {e}", args.output.display())))?;
    let mut writer = BufWriter::new(file);
    stream_file::write_stored(&mut writer, args.fps, args.n, args.dim, &stored)
        .and_then(|()| Ok(writer.flush()?))
        .map_err(|e| classify(e, "write stream"))?;
    let bytes = std::fs::metadata(&args.output)
        .map_err(|e| CliError::io(format!("stat {}: {e}", args.output.display())))?
        .len();
    println!(
        "wrote {}: {bytes} bytes ({} frames, {} tokens/frame, dim {})",
        args.output.display(),
        args.frames,
        args.n,
        args.dim
    );
    eprintln!("generated in {:?}", started.elapsed());
    Ok(())
}

fn cmd_run(args: RunArgs) -> Result<(), CliError> {
    let started = Instant::now();
    let file = File::open(&args.stream)
        .map_err(|e| CliError::io(format!("open {}: {e}", args.stream.display())))?;
    let (header, stored) =
        stream_file::read_stream(&mut BufReader::new(file)).map_err(|e| classify(e, "read stream"))?;

    let top_k = args.top_k.unwrap_or_else(|| {
        (args.budget / args.tokens.max(1)).max(1)
    });
    let config = StreamConfig {
        tokens_per_frame: header.tokens_per_frame as usize,
        feature_dim: header.feature_dim as usize,
        kv_heads: args.heads,
        head_dim: args.head_dim,
        frame_rate: header.fps,
        similarity_threshold: args.threshold,
        frame_budget: args.tokens,
        retrieval_top_k: top_k,
        total_token_budget: args.budget,
        quant_bits: args.bits,
        dtype_bytes: 2,
    };
    config.validate().map_err(|e| CliError::usage(e.to_string()))?;
    if args.batch == 0 {
        return Err(CliError::usage("batch must be at least 1"));
    }

    let projector = KvProjector::new(args.proj_seed, config.feature_dim, config.kv_heads, config.head_dim);
    let prefix = (args.prefix_tokens > 0).then(|| projector.synthesize_prefix(args.prefix_tokens));
    let mut pipeline = Pipeline::new(config.clone(), prefix).map_err(|e| classify(e, "configure pipeline"))?;

    let frames = stream_file::materialize_frames(stored, args.saliency_chunk.max(1));
    for (t, frame) in frames.iter().enumerate() {
        streamtom::validate_frame(frame, &config)
            .map_err(|e| CliError::data(format!("frame {t}: {e}")))?;
    }
    let mut rows = Vec::with_capacity(frames.len());
    for chunk in frames.chunks(args.batch) {
        let mut metrics = collect_run_metrics(&mut pipeline, &projector, chunk, &[])
            .map_err(|e| classify(e, "ingest"))?;
        rows.append(&mut metrics.rows);
    }
    let reconciliation = collect_run_metrics(&mut pipeline, &projector, &[], &[])
        .map_err(|e| classify(e, "reconcile ledger"))?
        .reconciliation;

    let snapshot_file = File::create(&args.snapshot)
        .map_err(|e| CliError::io(format!("create {}: {e}", args.snapshot.display())))?;
    let mut snapshot_writer = BufWriter::new(snapshot_file);
    snapshot::write_snapshot(pipeline.store(), &mut snapshot_writer)
        .and_then(|()| Ok(snapshot_writer.flush()?))
        .map_err(|e| classify(e, "write snapshot"))?;
    std::fs::write(&args.metrics, metrics_to_csv(&rows))
        .map_err(|e| CliError::io(format!("write {}: {e}", args.metrics.display())))?;

    let store = pipeline.store();
    let n = config.tokens_per_frame as u32;
    let ratio = compression_ratio(n, args.tokens as u32, 16, args.bits as u32);
    let retention = retention_percent(args.tokens as u32, args.bits as u32, n, 16);
    println!("frames processed: {}", store.len());
    println!("group size: {} of {} tokens/frame", args.tokens, n);
    println!(
        "stored bytes: {} (codes {}/group, overhead {}/group, prefix {})",
        store.ledger_bytes(),
        reconciliation.code_bytes_per_group,
        reconciliation.overhead_bytes_per_group,
        reconciliation.prefix_bytes
    );
    println!("overhead fraction: {:.3}", reconciliation.overhead_fraction);
    println!("compression ratio vs 16-bit full-token baseline: {ratio:.1}x");
    println!("retention: {retention:.1}% of baseline bytes");
    println!(
        "prefill token ratio: {:.2}x",
        prefill_cost_ratio(n, args.tokens as u32)
    );
    println!("snapshot: {}", args.snapshot.display());
    println!("metrics: {}", args.metrics.display());
    eprintln!("processed in {:?}", started.elapsed());
    Ok(())
}

fn cmd_query(args: QueryArgs) -> Result<(), CliError> {
    let file = File::open(&args.snapshot)
        .map_err(|e| CliError::io(format!("open {}: {e}", args.snapshot.display())))?;
    let store = match snapshot::read_snapshot(&mut BufReader::new(file)) {
        Ok(store) => store,
        // a truncated snapshot surfaces as unexpected EOF; still bad data
        Err(streamtom::Error::Io(e)) if e.kind() == std::io::ErrorKind::UnexpectedEof => {
            return Err(CliError::data(format!("read snapshot: {e}")));
        }
        Err(e) => return Err(classify(e, "read snapshot")),
    };
    let query = read_query_vector(&args.query, store.heads() * store.head_dim())?;

    let retrieved = store
        .retrieve(&query, args.k)
        .map_err(|e| classify(e, "retrieve"))?;
    let active = store
        .assemble_active(&retrieved)
        .map_err(|e| classify(e, "assemble active set"))?;

    // integrity check: reconstructed values must sit on the quantization
    // lattice, so re-quantizing them is lossless
    let mut max_err = 0.0f32;
    for group in &active.groups {
        let requantized = quantize_group(group, store.bits()).map_err(|e| classify(e, "requantize"))?;
        let second = dequantize_group(&requantized).map_err(|e| classify(e, "dequantize"))?;
        for (a, b) in group.keys().iter().zip(second.keys()) {
            max_err = max_err.max((a - b).abs());
        }
        for (a, b) in group.values().iter().zip(second.values()) {
            max_err = max_err.max((a - b).abs());
        }
    }

    let ranked: Vec<String> = retrieved.iter().map(usize::to_string).collect();
    println!("retrieved groups (ranked): {}", ranked.join(" "));
    println!("active retained tokens: {}", active.retained_tokens());
    println!("active total tokens (incl. prefix): {}", active.total_tokens());
    println!("max round-trip error across dequantized groups: {max_err:.6e}");
    Ok(())
}

fn read_query_vector(path: &Path, expected: usize) -> Result<Vec<f32>, CliError> {
    let mut text = String::new();
    File::open(path)
        .map_err(|e| CliError::io(format!("open {}: {e}", path.display())))?
        .read_to_string(&mut text)
        .map_err(|e| CliError::io(format!("read {}: {e}", path.display())))?;
    let mut values = Vec::new();
    for token in text.split_whitespace() {
        let v: f32 = token
            .parse()
            .map_err(|_| CliError::data(format!("query file: '{token}' is not a number")))?;
        if !v.is_finite() {
            return Err(CliError::data(format!("query file: non-finite value {v}")));
        }
        values.push(v);
    }
    if values.len() != expected {
        return Err(CliError::data(format!(
            "query file: expected {expected} values (heads * head_dim), got {}",
            values.len()
        )));
    }
    Ok(values)
}

fn cmd_model_memory(args: ModelMemoryArgs) -> Result<(), CliError> {
    let model = CostModel {
        layers: args.layers,
        tokens_per_frame: args.n,
        kv_heads: args.heads,
        head_dim: args.head_dim,
        dtype_bytes: args.dtype_bytes,
        frame_rate: args.fps,
        frame_budget: args.tokens,
        quant_bits: args.bits,
        horizon_frames: (args.fps * args.seconds).round() as u64,
    };
    model.validate().map_err(CliError::usage)?;
    if !(args.seconds.is_finite() && args.seconds >= 0.0) {
        return Err(CliError::usage(format!(
            "seconds must be non-negative, got {}",
            args.seconds
        )));
    }

    let gb = if args.decimal_gb { decimal_gb } else { binary_gb };
    let unit = if args.decimal_gb { "GB" } else { "GiB" };
    let baseline = model.horizon_footprint_bytes(args.seconds);
    let compressed = model.compressed_horizon_footprint_bytes(args.seconds);
    println!(
        "kv-cache growth rate: {:.0} bytes/s",
        model.growth_rate_bytes_per_sec()
    );
    println!(
        "footprint over {:.0} s: {baseline:.0} bytes = {} {unit}",
        args.seconds,
        fmt1(gb(baseline))
    );
    println!(
        "compressed footprint (G={}, {}-bit): {compressed:.0} bytes = {} {unit}",
        args.tokens,
        args.bits,
        fmt1(gb(compressed))
    );
    println!("compression ratio: {:.1}x", model.compression_ratio());
    println!(
        "retention: {:.1}%",
        retention_percent(args.tokens, args.bits, args.n, args.dtype_bytes * 8)
    );
    println!(
        "prefill token ratio: {:.2}x",
        prefill_cost_ratio(args.n, args.tokens)
    );
    println!(
        "per-group packed kv bytes: {}",
        accounting::packed_kv_code_bytes(
            args.heads as u64,
            args.tokens as u64,
            args.head_dim as u64,
            args.bits as u64
        )
    );
    Ok(())
}

fn fmt1(v: f64) -> String {
    format!("{v:.1}")
}
