use std::fs;
use std::io::{self, BufReader, Write};
use std::net::TcpListener;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use log::info;

use memlab::codec::{wire, DecodingStrategy, ExternalCodecConfig, Fallback, ReferenceCodec};
use memlab::corpus::{ingest, load_entries, save_entries};
use memlab::geometry::{stage_geometry, StageGeometry, StageTag};
use memlab::harness::{
    calibrate_lambda, format_partial_table, format_sweep_table, load_records, read_summary,
    run_entries, run_partial_sweep, run_sweep, write_artifacts, RunConfig,
};
use memlab::memory::MemoryScope;
use memlab::synthetic::{generate, SyntheticConfig};

/// Memory-augmented generation lab: synthesis runs, scaling sweeps and
/// latent geometry over biography corpora.
#[derive(Parser)]
#[command(name = "memlab", version)]
struct Cli {
    /// TOML config file. Keys can also be set with MEMLAB_<SECTION>__<KEY>
    /// environment variables; command-line flags win over both.
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    /// Log filter (error, warn, info, debug, trace).
    #[arg(long, global = true, default_value = "warn")]
    log: String,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Normalize raw JSON / JSONL dumps into the corpus format.
    Ingest {
        /// Directory of *.json / *.jsonl files.
        raw: PathBuf,
        #[arg(long, short)]
        out: PathBuf,
    },
    /// Generate a synthetic corpus.
    GenSynthetic {
        #[arg(long, default_value_t = 238)]
        entries: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, short)]
        out: PathBuf,
        #[arg(long)]
        substitute_rate: Option<f64>,
        #[arg(long)]
        insert_rate: Option<f64>,
        #[arg(long)]
        delete_rate: Option<f64>,
    },
    /// Synthesize every entry under one mode, score and write artifacts.
    Synth {
        #[command(flatten)]
        run: RunArgs,
        /// base | scaled S | ideal | partial F | random-prompt [PHRASE]
        #[arg(long, num_args = 1..=2, value_names = ["MODE", "ARG"])]
        mode: Option<Vec<String>>,
    },
    /// Scaling-factor sweep (--s) or partial-input sweep (--f).
    Sweep {
        #[command(flatten)]
        run: RunArgs,
        /// Scaling factors: a list (1,2,3) or an inclusive integer range (1..7).
        #[arg(long = "s", conflicts_with = "f", required_unless_present = "f")]
        s: Option<String>,
        /// Partial-input fractions, e.g. 0,0.25,0.5,0.75,1.
        #[arg(long = "f")]
        f: Option<String>,
    },
    /// Distance / angle / norm statistics of a latent dump.
    Geometry {
        #[arg(long)]
        stage: StageTag,
        /// Latent dump written by `synth --dump-latents`.
        #[arg(long)]
        latents: PathBuf,
        #[arg(long)]
        bins: Option<usize>,
        /// Write the full statistics (per pair, per entry, histograms) as JSON.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Print the summaries of finished runs.
    Report {
        #[arg(required = true)]
        runs: Vec<PathBuf>,
    },
    /// Find the ridge coefficient that puts the base run's scale estimate
    /// at a target.
    Calibrate {
        #[command(flatten)]
        run: RunArgs,
        #[arg(long, default_value_t = 3.5)]
        target: f64,
        #[arg(long, default_value_t = 0.02)]
        tolerance: f64,
    },
    /// Serve the reference codec over the line protocol on stdio, or on a
    /// TCP address with --listen.
    ServeCodec {
        #[arg(long)]
        listen: Option<String>,
    },
}

#[derive(Args, Clone, Default)]
struct RunArgs {
    /// Corpus JSONL file.
    #[arg(long)]
    corpus: Option<PathBuf>,
    /// Output directory for artifacts.
    #[arg(long, short)]
    out: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    parallelism: Option<usize>,
    /// Read-side ridge coefficient.
    #[arg(long)]
    lambda: Option<f64>,
    #[arg(long)]
    write_lambda: Option<f64>,
    #[arg(long)]
    sigma_w: Option<f64>,
    #[arg(long)]
    slots: Option<usize>,
    /// Latent width, applied to both codec and memory.
    #[arg(long)]
    latent_dim: Option<usize>,
    #[arg(long, value_enum)]
    scope: Option<ScopeArg>,
    /// Relative acceptance radius of the reference decoder.
    #[arg(long)]
    tau: Option<f64>,
    #[arg(long, value_enum)]
    fallback: Option<FallbackArg>,
    /// External codec command line, split on whitespace.
    #[arg(long, conflicts_with = "codec_address")]
    codec_command: Option<String>,
    /// External codec host:port.
    #[arg(long)]
    codec_address: Option<String>,
    #[arg(long, value_enum)]
    decoding: Option<DecodingArg>,
    /// External codec call timeout in seconds.
    #[arg(long)]
    codec_timeout: Option<f64>,
    /// Record failing entries and continue.
    #[arg(long)]
    skip_failures: bool,
    /// Write one latent record per processed pair to this JSONL file.
    #[arg(long)]
    dump_latents: Option<PathBuf>,
}

#[derive(Clone, Copy, ValueEnum)]
enum ScopeArg {
    PerPair,
    PerEntry,
}

#[derive(Clone, Copy, ValueEnum)]
enum FallbackArg {
    EchoPrompt,
    BackgroundNgram,
}

#[derive(Clone, Copy, ValueEnum)]
enum DecodingArg {
    Greedy,
    Sampling,
}

impl RunArgs {
    fn apply(&self, cfg: &mut RunConfig) {
        if let Some(seed) = self.seed {
            cfg.seed = seed;
            cfg.derive_component_seeds();
        }
        if let Some(p) = &self.corpus {
            cfg.corpus = Some(p.clone());
        }
        if let Some(p) = &self.out {
            cfg.output_dir = Some(p.clone());
        }
        if let Some(n) = self.parallelism {
            cfg.parallelism = n;
        }
        if let Some(v) = self.lambda {
            cfg.memory.lambda = v;
        }
        if let Some(v) = self.write_lambda {
            cfg.memory.write_lambda = Some(v);
        }
        if let Some(v) = self.sigma_w {
            cfg.memory.sigma_w = v;
        }
        if let Some(v) = self.slots {
            cfg.memory.slots = v;
        }
        if let Some(v) = self.latent_dim {
            cfg.memory.latent_dim = v;
            cfg.codec.latent_dim = v;
        }
        if let Some(v) = self.scope {
            cfg.memory.scope = match v {
                ScopeArg::PerPair => MemoryScope::PerPair,
                ScopeArg::PerEntry => MemoryScope::PerEntry,
            };
        }
        if let Some(v) = self.tau {
            cfg.codec.tau = v;
        }
        if let Some(v) = self.fallback {
            cfg.codec.fallback = match v {
                FallbackArg::EchoPrompt => Fallback::EchoPrompt,
                FallbackArg::BackgroundNgram => Fallback::BackgroundNgram,
            };
        }
        if self.codec_command.is_some() || self.codec_address.is_some() {
            let ext = cfg.codec.external.get_or_insert(ExternalCodecConfig {
                command: Vec::new(),
                address: None,
                timeout_secs: 30.0,
                decoding: None,
            });
            if let Some(cmd) = &self.codec_command {
                ext.command = cmd.split_whitespace().map(str::to_string).collect();
                ext.address = None;
            }
            if let Some(addr) = &self.codec_address {
                ext.address = Some(addr.clone());
                ext.command.clear();
            }
        }
        if let Some(ext) = cfg.codec.external.as_mut() {
            if let Some(d) = self.decoding {
                ext.decoding = Some(match d {
                    DecodingArg::Greedy => DecodingStrategy::Greedy,
                    DecodingArg::Sampling => DecodingStrategy::Sampling,
                });
            }
            if let Some(t) = self.codec_timeout {
                ext.timeout_secs = t;
            }
        }
        if self.skip_failures {
            cfg.skip_failures = true;
        }
        if let Some(p) = &self.dump_latents {
            cfg.dump_latents = Some(p.clone());
        }
    }
}

fn resolve(config: Option<&Path>, args: &RunArgs) -> Result<RunConfig> {
    let mut cfg = RunConfig::load(config).context("loading configuration")?;
    args.apply(&mut cfg);
    cfg.validate()?;
    Ok(cfg)
}

fn corpus_of(cfg: &RunConfig) -> Result<Vec<memlab::corpus::WikiBioEntry>> {
    let path = cfg
        .corpus
        .as_ref()
        .context("no corpus given (use --corpus or set `corpus` in the config)")?;
    load_entries(path).with_context(|| format!("loading corpus {}", path.display()))
}

/// `1..7` (inclusive), `1,2,3.5` or a single value.
fn parse_values(spec: &str) -> Result<Vec<f64>> {
    if let Some((a, b)) = spec.split_once("..") {
        let a: i64 = a.trim().parse().context("range start")?;
        let b: i64 = b.trim().trim_start_matches('=').parse().context("range end")?;
        if a > b {
            bail!("empty range {spec}");
        }
        return Ok((a..=b).map(|v| v as f64).collect());
    }
    spec.split(',')
        .map(|v| v.trim().parse::<f64>().with_context(|| format!("bad value '{v}'")))
        .collect()
}

fn write_rows<T: serde::Serialize>(dir: &Path, name: &str, rows: &[T], table: &str) -> Result<()> {
    fs::create_dir_all(dir)?;
    let mut lines = String::new();
    for r in rows {
        lines.push_str(&serde_json::to_string(r)?);
        lines.push('\n');
    }
    fs::write(dir.join(format!("{name}.jsonl")), lines)?;
    fs::write(dir.join(format!("{name}.txt")), table)?;
    Ok(())
}

fn print_geometry(geo: &StageGeometry) -> io::Result<()> {
    let mut out = io::stdout().lock();
    let angle = geo
        .mean_angle_deg()
        .map_or("n/a".to_string(), |a| format!("{a:.3}"));
    writeln!(out, "stage           {}", geo.tag)?;
    writeln!(out, "pairs           {}", geo.pairs.len())?;
    writeln!(out, "entries         {}", geo.entries.len())?;
    writeln!(out, "mean distance   {:.4}", geo.mean_distance())?;
    writeln!(out, "mean angle      {angle} deg")?;
    let panels = [
        ("distance", &geo.histograms.distance),
        ("angle (deg)", &geo.histograms.angle_deg),
        ("norm a", &geo.histograms.norm_a),
        ("norm b", &geo.histograms.norm_b),
    ];
    for (name, h) in panels {
        writeln!(out, "\n{name}")?;
        let peak = h.bins.iter().map(|b| b.count).max().unwrap_or(0).max(1);
        for b in &h.bins {
            let bar = "#".repeat((b.count * 40).div_ceil(peak));
            writeln!(out, "  [{:>9.3}, {:>9.3}) {:>5} {bar}", b.lo, b.hi, b.count)?;
        }
    }
    out.flush()
}

fn serve_stdio(cfg: &RunConfig) -> Result<()> {
    let mut codec = ReferenceCodec::new(&cfg.codec)?;
    let stdin = io::stdin();
    wire::serve(&mut codec, stdin.lock(), io::stdout().lock())?;
    Ok(())
}

fn serve_tcp(addr: &str, cfg: &RunConfig) -> Result<()> {
    let listener = TcpListener::bind(addr).with_context(|| format!("binding {addr}"))?;
    eprintln!("listening on {}", listener.local_addr()?);
    for stream in listener.incoming() {
        let stream = stream?;
        stream.set_nodelay(true)?;
        let mut codec = ReferenceCodec::new(&cfg.codec)?;
        let reader = BufReader::new(stream.try_clone()?);
        if let Err(e) = wire::serve(&mut codec, reader, stream) {
            log::warn!("connection ended with error: {e}");
        }
    }
    Ok(())
}

fn main() -> Result<()> {
    let cli = Cli::parse();
    env_logger::Builder::new().parse_filters(&cli.log).init();
    let config = cli.config.as_deref();

    match &cli.command {
        Command::Ingest { raw, out } => {
            let entries = ingest(raw).with_context(|| format!("ingesting {}", raw.display()))?;
            save_entries(out, &entries)?;
            println!("wrote {} entries to {}", entries.len(), out.display());
        }
        Command::GenSynthetic {
            entries,
            seed,
            out,
            substitute_rate,
            insert_rate,
            delete_rate,
        } => {
            let mut syn = SyntheticConfig {
                entries: *entries,
                seed: *seed,
                ..SyntheticConfig::default()
            };
            if let Some(v) = substitute_rate {
                syn.substitute_rate = *v;
            }
            if let Some(v) = insert_rate {
                syn.insert_rate = *v;
            }
            if let Some(v) = delete_rate {
                syn.delete_rate = *v;
            }
            let corpus = generate(&syn)?;
            save_entries(out, &corpus)?;
            println!("wrote {} entries to {}", corpus.len(), out.display());
        }
        Command::Synth { run, mode } => {
            let mut cfg = resolve(config, run)?;
            if let Some(parts) = mode {
                cfg.mode = parts.join(" ").parse()?;
            }
            let corpus = corpus_of(&cfg)?;
            let report = run_entries(&cfg, &corpus)?;
            match &cfg.output_dir {
                Some(dir) => {
                    write_artifacts(dir, &cfg, &report)?;
                    info!("artifacts in {}", dir.display());
                }
                None => {
                    if let Some(dump) = &cfg.dump_latents {
                        memlab::harness::write_records(dump, &report.records)?;
                    }
                }
            }
            print!("{}", memlab::harness::RunSummaryFile::from_report(&report).table());
            let failed = report.failures().count();
            if failed > 0 {
                eprintln!("{failed} entries failed and were skipped");
            }
        }
        Command::Sweep { run, s, f } => {
            let cfg = resolve(config, run)?;
            let corpus = corpus_of(&cfg)?;
            if let Some(spec) = s {
                let rows = run_sweep(&cfg, &corpus, &parse_values(spec)?)?;
                let table = format_sweep_table(&rows);
                print!("{table}");
                if let Some(scale) = rows.first().and_then(|r| r.scale_estimate) {
                    println!("scale estimate (base run): {scale:.3}");
                }
                if let Some(dir) = &cfg.output_dir {
                    write_rows(dir, "sweep", &rows, &table)?;
                }
            } else if let Some(spec) = f {
                let rows = run_partial_sweep(&cfg, &corpus, &parse_values(spec)?)?;
                let table = format_partial_table(&rows);
                print!("{table}");
                if let Some(dir) = &cfg.output_dir {
                    write_rows(dir, "partial", &rows, &table)?;
                }
            }
        }
        Command::Geometry {
            stage,
            latents,
            bins,
            out,
        } => {
            let cfg = RunConfig::load(config)?;
            let records = load_records(latents)?;
            let geo = stage_geometry(&records, *stage, bins.unwrap_or(cfg.geometry.bins))?;
            match print_geometry(&geo) {
                Err(e) if e.kind() == io::ErrorKind::BrokenPipe => {}
                r => r?,
            }
            if let Some(path) = out {
                fs::write(path, serde_json::to_string_pretty(&geo)?)?;
            }
        }
        Command::Report { runs } => {
            for (i, dir) in runs.iter().enumerate() {
                let summary = read_summary(dir).with_context(|| format!("reading run {}", dir.display()))?;
                if i > 0 {
                    println!();
                }
                println!("== {}", dir.display());
                print!("{}", summary.table());
            }
        }
        Command::Calibrate {
            run,
            target,
            tolerance,
        } => {
            let cfg = resolve(config, run)?;
            let corpus = corpus_of(&cfg)?;
            let cal = calibrate_lambda(&cfg, &corpus, *target, *tolerance)?;
            println!(
                "lambda = {} (scale estimate {:.4}, {} runs)",
                cal.lambda, cal.scale, cal.iterations
            );
        }
        Command::ServeCodec { listen } => {
            let cfg = RunConfig::load(config)?;
            match listen {
                None => serve_stdio(&cfg)?,
                Some(addr) => serve_tcp(addr, &cfg)?,
            }
        }
    }
    io::stdout().flush()?;
    Ok(())
}
