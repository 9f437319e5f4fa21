//! Command-line front end: model generation, plain/secure inference with
//! cost reports, and the analysis experiments.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use centaur::analysis::GaConfig;
use centaur::model::weights::{self, WeightFiles};
use centaur::model::ModelParams;
use centaur::protocol::{Scheduler, TransportKind};
use centaur::run::{self, Analysis, CrackScorer, RunManifest, RunMode};
use centaur::{Error, Result};

#[derive(Parser)]
#[command(name = "centaur", version, about = "Three-party private transformer inference")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Write random weights as <out>.json and <out>.bin.
    Genmodel {
        /// TOML model config, or toy-encoder / toy-decoder.
        #[arg(long, default_value = "toy-encoder")]
        config: String,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Run plain, centaur or baseline inference.
    Infer(InferArgs),
    /// Run an analysis experiment and print or write its report.
    Analyze {
        #[command(subcommand)]
        kind: AnalyzeKind,
        #[arg(long, global = true)]
        report: Option<PathBuf>,
    },
}

#[derive(Args)]
struct InferArgs {
    /// Start from this manifest; the flags below override its fields.
    #[arg(long)]
    manifest: Option<PathBuf>,
    /// Save the effective manifest here for replay.
    #[arg(long)]
    save_manifest: Option<PathBuf>,
    #[arg(long)]
    mode: Option<RunMode>,
    #[arg(long)]
    config: Option<String>,
    /// Weight prefix written by genmodel.
    #[arg(long)]
    weights: Option<PathBuf>,
    /// File of whitespace- or comma-separated token ids.
    #[arg(long)]
    tokens: Option<PathBuf>,
    #[arg(long)]
    logits: Option<PathBuf>,
    /// lan, wan or custom:MBPS:MS.
    #[arg(long)]
    net: Option<String>,
    #[arg(long)]
    report: Option<PathBuf>,
    #[arg(long)]
    transcript: Option<PathBuf>,
    #[arg(long)]
    seed_params: Option<u64>,
    #[arg(long)]
    seed_perms: Option<u64>,
    #[arg(long)]
    seed_shares: Option<u64>,
    #[arg(long)]
    seed_triples: Option<u64>,
    /// Check which permutation every intermediate carries.
    #[arg(long)]
    debug_perm_ledger: bool,
    /// One thread per party instead of the lockstep scheduler.
    #[arg(long)]
    threads: bool,
    /// Loopback TCP between parties (implies --threads).
    #[arg(long)]
    sockets: bool,
}

#[derive(Subcommand)]
enum AnalyzeKind {
    /// Monte-Carlo distance correlation of permuted against compressed projections.
    Discorr {
        #[arg(long, default_value_t = 32)]
        d: usize,
        #[arg(long, default_value_t = 64)]
        samples: usize,
        #[arg(long, default_value_t = 100)]
        trials: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Mean pairwise JS divergence of norm-output features.
    Js {
        #[command(flatten)]
        model: ModelArgs,
        #[arg(long, default_value_t = 128)]
        inputs: usize,
        #[arg(long, default_value_t = 64)]
        bins: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Genetic search for the feature permutation.
    Crack {
        #[arg(long, default_value_t = 64)]
        d: usize,
        #[arg(long, default_value = "frequency")]
        scorer: CrackScorer,
        #[arg(long, default_value_t = 500)]
        generations: usize,
        #[arg(long, default_value_t = 64)]
        population: usize,
        #[arg(long, default_value_t = 32)]
        inputs: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Nearest-neighbor token recovery from partially shuffled embeddings.
    Shuffle {
        #[command(flatten)]
        model: ModelArgs,
        #[arg(
            long,
            value_delimiter = ',',
            default_value = "0,0.1,0.2,0.3,0.4,0.5,0.6,0.7,0.8,0.9,1"
        )]
        fractions: Vec<f64>,
        #[arg(long, default_value_t = 200)]
        queries: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
}

#[derive(Args)]
struct ModelArgs {
    #[arg(long, default_value = "toy-encoder")]
    config: String,
    /// Use these weights instead of generating them.
    #[arg(long)]
    weights: Option<PathBuf>,
    #[arg(long, default_value_t = 0)]
    seed_params: u64,
}

impl ModelArgs {
    fn params(&self) -> Result<ModelParams> {
        match &self.weights {
            Some(prefix) => weights::load(&WeightFiles::from_prefix(prefix)),
            None => ModelParams::random(&run::load_config(&self.config)?, self.seed_params),
        }
    }
}

fn manifest(a: InferArgs) -> Result<RunManifest> {
    let missing = |flag: &str| Error::InvalidArgument(format!("{flag} is required without --manifest"));
    let mut m = match &a.manifest {
        Some(path) => RunManifest::load(path)?,
        None => RunManifest::new(
            a.mode.unwrap_or(RunMode::Centaur),
            run::load_config(a.config.as_deref().unwrap_or("toy-encoder"))?,
            a.tokens.clone().ok_or_else(|| missing("--tokens"))?,
            a.logits.clone().ok_or_else(|| missing("--logits"))?,
        ),
    };
    if let Some(v) = a.mode {
        m.mode = v;
    }
    if let Some(v) = &a.config {
        m.config = run::load_config(v)?;
    }
    if let Some(v) = a.weights {
        m.weights = Some(v);
    }
    if let Some(v) = a.tokens {
        m.tokens = v;
    }
    if let Some(v) = a.logits {
        m.outputs.logits = v;
    }
    if let Some(v) = a.net {
        m.net = v;
    }
    if let Some(v) = a.report {
        m.outputs.report = Some(v);
    }
    if let Some(v) = a.transcript {
        m.outputs.transcript = Some(v);
    }
    m.seeds.params = a.seed_params.unwrap_or(m.seeds.params);
    m.seeds.perms = a.seed_perms.unwrap_or(m.seeds.perms);
    m.seeds.shares = a.seed_shares.unwrap_or(m.seeds.shares);
    m.seeds.triples = a.seed_triples.unwrap_or(m.seeds.triples);
    m.check_ledger |= a.debug_perm_ledger;
    if a.threads || a.sockets {
        m.scheduler = Scheduler::Threaded;
    }
    if a.sockets {
        m.transport = TransportKind::LocalSocket;
    }
    if let Some(path) = a.save_manifest {
        m.save(path)?;
    }
    Ok(m)
}

fn execute(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Genmodel { config, seed, out } => {
            let files = run::cmd_genmodel(&run::load_config(&config)?, seed, out)?;
            println!("wrote {} and {}", files.manifest.display(), files.blob.display());
        }
        Command::Infer(args) => {
            let m = manifest(args)?;
            let out = run::cmd_infer(&m)?;
            println!(
                "wrote logits {:?} to {}",
                out.logits.shape(),
                m.outputs.logits.display()
            );
            if let Some(r) = &out.report {
                println!(
                    "{} on {}: online {} bytes, {:.4} s modeled; setup {} bytes",
                    r.mode, r.cost.profile.name, r.cost.online.bytes, r.cost.online.seconds, r.cost.setup.bytes
                );
                if let Some(problem) = &r.audit {
                    eprintln!("transcript audit: {problem}");
                }
            }
        }
        Command::Analyze { kind, report } => {
            let analysis = match kind {
                AnalyzeKind::Discorr {
                    d,
                    samples,
                    trials,
                    seed,
                } => Analysis::Discorr {
                    d,
                    samples,
                    trials,
                    seed,
                },
                AnalyzeKind::Js {
                    model,
                    inputs,
                    bins,
                    seed,
                } => Analysis::Js {
                    params: model.params()?,
                    inputs,
                    bins,
                    seed,
                },
                AnalyzeKind::Crack {
                    d,
                    scorer,
                    generations,
                    population,
                    inputs,
                    seed,
                } => Analysis::Crack {
                    d,
                    scorer,
                    ga: GaConfig {
                        generations,
                        population,
                        ..GaConfig::default()
                    },
                    inputs,
                    seed,
                },
                AnalyzeKind::Shuffle {
                    model,
                    fractions,
                    queries,
                    seed,
                } => Analysis::Shuffle {
                    params: model.params()?,
                    fractions,
                    queries,
                    seed,
                },
            };
            let value = run::cmd_analyze(&analysis)?;
            match report {
                Some(path) => run::write_json(path, &value)?,
                None => println!("{}", serde_json::to_string_pretty(&value).expect("json value")),
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    match execute(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(if e.is_protocol() { 3 } else { 2 })
        }
    }
}
