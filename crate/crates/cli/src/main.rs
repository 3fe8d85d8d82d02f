use std::fs::File;
use std::io::{BufWriter, Write};
use std::net::SocketAddr;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::Arc;

use anyhow::{Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};

use robosumm_core::filter::{classify_frame, variance_of_laplacian};
use robosumm_core::io::{
    attach_features, load_features, manifest_to_string, read_frames_file, save_features, write_frames_file,
    write_summary_manifest,
};
use robosumm_core::scenario::{generate_session, write_truth_jsonl, ScenarioSpec};
use robosumm_core::service::{replay_client, simulate_trace, Rate, Server};
use robosumm_core::summarizer::{kmeans_keyframes, summarize, uniform_keyframes};
use robosumm_core::{FilterReport, FrameRecord, GrayImage, PipelineConfig, SummarizerConfig, SummaryManifest};

/// Well-posed activity summaries from person-following robot sessions.
#[derive(Debug, Parser)]
#[command(name = "robosumm", version)]
struct Cli {
    /// JSON file overriding filter, summarizer and controller defaults
    #[arg(long, global = true, value_name = "PATH")]
    config: Option<PathBuf>,
    /// Seed for randomized steps (scenario generation, k-means baseline)
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Print extra diagnostics to stderr
    #[arg(long, global = true)]
    verbose: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Generate a labeled synthetic session from a scenario spec
    Gen(GenArgs),
    /// Drop ill-posed frames and write a rejection report
    Filter(FilterArgs),
    /// Cluster frames by time and pick one keyframe per cluster
    Summarize(SummarizeArgs),
    /// Pick keyframes with a baseline method
    Baseline(BaselineArgs),
    /// Run the robot controller offline over a session
    Simulate(SimulateArgs),
    /// Serve the streaming protocol until interrupted
    Serve(ServeArgs),
    /// Stream a session to a running server
    Replay(ReplayArgs),
}

#[derive(Debug, Args)]
struct GenArgs {
    /// Scenario spec (JSON)
    #[arg(long)]
    spec: PathBuf,
    /// Output frame records (JSONL)
    #[arg(long)]
    out: PathBuf,
    /// Output feature matrix (binary)
    #[arg(long)]
    features: Option<PathBuf>,
    /// Output ground-truth labels (JSONL)
    #[arg(long)]
    truth: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct FilterArgs {
    /// Input frame records (JSONL)
    #[arg(long)]
    frames: PathBuf,
    /// Directory of raw 8-bit grayscale buffers named <frame_id>.gray, used for
    /// frames without a blur score
    #[arg(long)]
    images: Option<PathBuf>,
    /// Output well-posed frame records (JSONL)
    #[arg(long)]
    out: PathBuf,
    /// Output filter report (JSON)
    #[arg(long)]
    report: PathBuf,
}

#[derive(Debug, Args)]
struct SummarizeArgs {
    /// Input frame records (JSONL), normally the filter output
    #[arg(long)]
    frames: PathBuf,
    /// Feature matrix (binary)
    #[arg(long)]
    features: PathBuf,
    /// Number of keyframes [default: 8, or the config value]
    #[arg(long, value_parser = clap::value_parser!(u64).range(1..))]
    k: Option<u64>,
    /// Initial clustering threshold in seconds [default: 60, or the config value]
    #[arg(long, value_parser = positive_f64)]
    h0: Option<f64>,
    /// Output summary manifest (JSON)
    #[arg(long)]
    out: PathBuf,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum Method {
    Uniform,
    Kmeans,
}

#[derive(Debug, Args)]
struct BaselineArgs {
    /// Baseline method
    #[arg(long, value_enum)]
    method: Method,
    /// Input frame records (JSONL)
    #[arg(long)]
    frames: PathBuf,
    /// Feature matrix (binary); required for kmeans
    #[arg(long)]
    features: Option<PathBuf>,
    /// Number of keyframes [default: 8, or the config value]
    #[arg(long, value_parser = clap::value_parser!(u64).range(1..))]
    k: Option<u64>,
    /// Output summary manifest (JSON)
    #[arg(long)]
    out: PathBuf,
}

#[derive(Debug, Args)]
struct SimulateArgs {
    /// Input frame records (JSONL)
    #[arg(long)]
    frames: PathBuf,
    /// Output action trace (JSONL)
    #[arg(long)]
    out: PathBuf,
}

#[derive(Debug, Args)]
struct ServeArgs {
    /// Address to listen on
    #[arg(long, value_name = "HOST:PORT")]
    addr: String,
}

#[derive(Debug, Args)]
struct ReplayArgs {
    /// Server address
    #[arg(long, value_name = "HOST:PORT")]
    addr: String,
    /// Input frame records (JSONL)
    #[arg(long)]
    frames: PathBuf,
    /// Playback speed: "max" for lockstep as fast as possible, or a multiple of real time
    #[arg(long, default_value = "max")]
    rate: Rate,
    /// Feature matrix (binary) to send inline with each frame
    #[arg(long)]
    features: Option<PathBuf>,
    /// Keyframes requested at the end of the session [default: 8, or the config value]
    #[arg(long, value_parser = clap::value_parser!(u64).range(1..))]
    k: Option<u64>,
    /// Initial clustering threshold in seconds [default: 60, or the config value]
    #[arg(long, value_parser = positive_f64)]
    h0: Option<f64>,
    /// Output action trace (JSONL); stdout when omitted
    #[arg(long)]
    out: Option<PathBuf>,
    /// Output summary manifest (JSON)
    #[arg(long)]
    summary_out: Option<PathBuf>,
}

fn positive_f64(s: &str) -> Result<f64, String> {
    match s.parse::<f64>() {
        Ok(v) if v.is_finite() && v > 0.0 => Ok(v),
        Ok(_) => Err("must be a positive number".into()),
        Err(e) => Err(e.to_string()),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}

fn run(cli: Cli) -> Result<()> {
    let cfg = match &cli.config {
        Some(path) => PipelineConfig::load(path)?,
        None => PipelineConfig::default(),
    };
    match cli.command {
        Command::Gen(a) => gen(a, cli.seed),
        Command::Filter(a) => filter(a, &cfg, cli.verbose),
        Command::Summarize(a) => summarize_cmd(a, &cfg, cli.verbose),
        Command::Baseline(a) => baseline(a, &cfg, cli.seed.unwrap_or(0)),
        Command::Simulate(a) => simulate(a, &cfg),
        Command::Serve(a) => serve(a, cfg),
        Command::Replay(a) => replay(a, &cfg),
    }
}

fn read_frames(path: &Path) -> Result<Vec<FrameRecord>> {
    let parsed = read_frames_file(path).with_context(|| format!("{}", path.display()))?;
    if parsed.duplicates_dropped > 0 {
        eprintln!("warning: dropped {} frames with repeated timestamps", parsed.duplicates_dropped);
    }
    Ok(parsed.frames)
}

fn read_frames_with_features(frames: &Path, features: &Path) -> Result<Vec<FrameRecord>> {
    let mut frames = read_frames(frames)?;
    let matrix = load_features(features).with_context(|| format!("{}", features.display()))?;
    attach_features(&mut frames, &matrix)?;
    Ok(frames)
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    Ok(BufWriter::new(File::create(path).with_context(|| format!("cannot create {}", path.display()))?))
}

fn gen(a: GenArgs, seed: Option<u64>) -> Result<()> {
    let text = std::fs::read_to_string(&a.spec).with_context(|| format!("cannot read {}", a.spec.display()))?;
    let mut spec: ScenarioSpec =
        serde_json::from_str(&text).with_context(|| format!("invalid scenario spec {}", a.spec.display()))?;
    if let Some(s) = seed {
        spec.rng_seed = s;
    }
    let session = generate_session(&spec)?;
    write_frames_file(&a.out, &session.frames)?;
    if let Some(path) = &a.features {
        save_features(path, &session.features)?;
    }
    if let Some(path) = &a.truth {
        let mut w = create(path)?;
        write_truth_jsonl(&mut w, &session.truth)?;
        w.flush()?;
    }
    Ok(())
}

fn load_gray(dir: &Path, rec: &FrameRecord) -> Result<Option<GrayImage>> {
    let path = dir.join(format!("{}.gray", rec.frame_id));
    if !path.exists() {
        return Ok(None);
    }
    let data = std::fs::read(&path).with_context(|| format!("cannot read {}", path.display()))?;
    let img = GrayImage::new(rec.width as usize, rec.height as usize, data)
        .with_context(|| format!("{}", path.display()))?;
    Ok(Some(img))
}

fn filter(a: FilterArgs, cfg: &PipelineConfig, verbose: bool) -> Result<()> {
    cfg.filter.validate()?;
    let mut frames = read_frames(&a.frames)?;
    if let Some(dir) = &a.images {
        for rec in frames.iter_mut().filter(|r| r.blur_variance.is_none()) {
            if let Some(img) = load_gray(dir, rec)? {
                rec.blur_variance = Some(variance_of_laplacian(&img)?);
            }
        }
    }
    let mut report = FilterReport::default();
    let mut kept = Vec::new();
    for rec in frames {
        let c = classify_frame(&rec, None, &cfg.filter)?;
        report.record(c);
        if c.is_well_posed() {
            kept.push(rec);
        }
    }
    write_frames_file(&a.out, &kept)?;
    let mut w = create(&a.report)?;
    serde_json::to_writer_pretty(&mut w, &report)?;
    writeln!(w)?;
    w.flush()?;
    if verbose {
        eprintln!("{} of {} frames well-posed", report.accepted, report.total);
        for (reason, n) in &report.rejected_by_reason {
            eprintln!("  {:<18} {n}", reason.as_str());
        }
    }
    Ok(())
}

fn summarizer_cfg(cfg: &PipelineConfig, k: Option<u64>, h0: Option<f64>) -> Result<SummarizerConfig> {
    let mut s = cfg.summarizer.clone();
    if let Some(k) = k {
        s.k = usize::try_from(k)?;
    }
    if let Some(h0) = h0 {
        s.h0 = h0;
    }
    s.validate()?;
    Ok(s)
}

fn print_histogram(m: &SummaryManifest) {
    let widest = m.entries.iter().map(|e| e.cluster_size).max().unwrap_or(0).max(1);
    eprintln!("h* = {} s, {} clusters", m.h_star, m.m);
    for e in &m.entries {
        let bar = "#".repeat((e.cluster_size * 50).div_ceil(widest));
        eprintln!("  cluster {:>4} t={:>10.1} {:>7} {bar}", e.cluster, e.t, e.cluster_size);
    }
}

fn finish_manifest(m: &SummaryManifest, out: &Path, verbose: bool) -> Result<()> {
    if let Some(w) = &m.warning {
        eprintln!("warning: {w}");
    }
    write_summary_manifest(m, out)?;
    if verbose {
        print_histogram(m);
    }
    Ok(())
}

fn summarize_cmd(a: SummarizeArgs, cfg: &PipelineConfig, verbose: bool) -> Result<()> {
    let s = summarizer_cfg(cfg, a.k, a.h0)?;
    let frames = read_frames_with_features(&a.frames, &a.features)?;
    let manifest = summarize(&frames, &s)?;
    finish_manifest(&manifest, &a.out, verbose)
}

fn baseline(a: BaselineArgs, cfg: &PipelineConfig, seed: u64) -> Result<()> {
    let k = summarizer_cfg(cfg, a.k, None)?.k;
    let frames = match &a.features {
        Some(f) => read_frames_with_features(&a.frames, f)?,
        None => read_frames(&a.frames)?,
    };
    let manifest = match a.method {
        Method::Uniform => uniform_keyframes(&frames, k)?,
        Method::Kmeans => kmeans_keyframes(&frames, k, seed)?,
    };
    finish_manifest(&manifest, &a.out, false)
}

fn simulate(a: SimulateArgs, cfg: &PipelineConfig) -> Result<()> {
    let frames = read_frames(&a.frames)?;
    let trace = simulate_trace(&frames, &cfg.controller)?;
    let mut w = create(&a.out)?;
    for line in trace {
        writeln!(w, "{line}")?;
    }
    w.flush()?;
    Ok(())
}

fn serve(a: ServeArgs, cfg: PipelineConfig) -> Result<()> {
    cfg.validate()?;
    let server = Server::bind(&a.addr, cfg).with_context(|| format!("cannot bind {}", a.addr))?;
    let shutdown = Arc::new(AtomicBool::new(false));
    let flag = Arc::clone(&shutdown);
    ctrlc::set_handler(move || flag.store(true, Ordering::SeqCst))?;
    let addr: SocketAddr = server.local_addr()?;
    eprintln!("listening on {addr}");
    server.run(&shutdown)?;
    eprintln!("shut down");
    Ok(())
}

fn replay(a: ReplayArgs, cfg: &PipelineConfig) -> Result<()> {
    let s = summarizer_cfg(cfg, a.k, a.h0)?;
    let frames = match &a.features {
        Some(f) => read_frames_with_features(&a.frames, f)?,
        None => read_frames(&a.frames)?,
    };
    let trace = replay_client(&a.addr, &frames, a.rate, s.k, s.h0)?;
    match &a.out {
        Some(path) => {
            let mut w = create(path)?;
            for line in &trace.actions {
                writeln!(w, "{line}")?;
            }
            w.flush()?;
        }
        None => {
            let mut out = std::io::stdout().lock();
            for line in &trace.actions {
                writeln!(out, "{line}")?;
            }
        }
    }
    match &a.summary_out {
        Some(path) => write_summary_manifest(&trace.summary, path)?,
        None => eprintln!("{}", manifest_to_string(&trace.summary)),
    }
    Ok(())
}
