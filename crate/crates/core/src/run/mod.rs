//! Replayable runs: a TOML manifest records every input and seed, and the
//! commands behind the `centaur` binary turn it into logits, cost reports,
//! transcripts and analysis tables.

use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;
use serde::{Deserialize, Serialize};

use crate::analysis::{
    eq6_experiment, genetic_perm_search, js_divergence_profile, nearest_neighbor_inversion, norm_activations,
    shuffle_fraction, ConstantScorer, FrequencyScorer, GaConfig, HammingScorer, JsOptions, Scorer,
};
use crate::error::{Error, Result};
use crate::model::weights::{self, WeightFiles};
use crate::model::{forward, AttentionMask, ModelConfig, ModelParams};
use crate::perm::{PermSpec, Permutable};
use crate::protocol::{
    initialize, initialize_baseline, simulate_cost, CostReport, EngineOptions, NetProfile, Scheduler, Seeds,
    Transcript, TransportKind,
};
use crate::ring::{RealTensor, RingConfig};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RunMode {
    Plain,
    Centaur,
    Baseline,
}

impl FromStr for RunMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "plain" => Ok(Self::Plain),
            "centaur" => Ok(Self::Centaur),
            "baseline" => Ok(Self::Baseline),
            _ => Err(Error::InvalidArgument(format!(
                "unknown mode {s:?}; use plain, centaur or baseline"
            ))),
        }
    }
}

impl fmt::Display for RunMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::Plain => "plain",
            Self::Centaur => "centaur",
            Self::Baseline => "baseline",
        })
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct RunSeeds {
    /// Weight generation, when no weight file is given.
    pub params: u64,
    pub perms: u64,
    pub shares: u64,
    pub triples: u64,
}

impl Default for RunSeeds {
    fn default() -> Self {
        let s = Seeds::default();
        Self {
            params: 0,
            perms: s.perms,
            shares: s.shares,
            triples: s.triples,
        }
    }
}

impl RunSeeds {
    pub fn engine(&self) -> Seeds {
        Seeds {
            perms: self.perms,
            shares: self.shares,
            triples: self.triples,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Outputs {
    pub logits: PathBuf,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub report: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub transcript: Option<PathBuf>,
}

fn default_net() -> String {
    "wan".into()
}

fn default_scheduler() -> Scheduler {
    Scheduler::Lockstep
}

fn default_transport() -> TransportKind {
    TransportKind::InProcess
}

/// Everything needed to replay a run bit-for-bit. Relative paths resolve
/// against the working directory.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub mode: RunMode,
    /// `lan`, `wan` or `custom:<Mbps>:<one-way ms>`.
    #[serde(default = "default_net")]
    pub net: String,
    #[serde(default = "default_scheduler")]
    pub scheduler: Scheduler,
    #[serde(default = "default_transport")]
    pub transport: TransportKind,
    #[serde(default)]
    pub check_ledger: bool,
    /// Whitespace- or comma-separated token ids.
    pub tokens: PathBuf,
    /// Weight container prefix; weights are generated from `seeds.params` when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub weights: Option<PathBuf>,
    pub outputs: Outputs,
    #[serde(default)]
    pub seeds: RunSeeds,
    #[serde(default)]
    pub ring: RingConfig,
    pub config: ModelConfig,
}

impl RunManifest {
    pub fn new(mode: RunMode, config: ModelConfig, tokens: PathBuf, logits: PathBuf) -> Self {
        Self {
            mode,
            net: default_net(),
            scheduler: default_scheduler(),
            transport: default_transport(),
            check_ledger: false,
            tokens,
            weights: None,
            outputs: Outputs {
                logits,
                report: None,
                transcript: None,
            },
            seeds: RunSeeds::default(),
            ring: RingConfig::default(),
            config,
        }
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let text = fs::read_to_string(path)?;
        toml::from_str(&text).map_err(|e| Error::Format(format!("manifest: {e}")))
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Format(format!("manifest: {e}")))
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        fs::write(path, self.to_toml()?)?;
        Ok(())
    }

    pub fn engine_options(&self) -> EngineOptions {
        EngineOptions {
            ring: self.ring,
            scheduler: self.scheduler,
            transport: self.transport,
            check_ledger: self.check_ledger,
            ..EngineOptions::default()
        }
    }
}

/// Reads a `ModelConfig` from a TOML file, or one of the presets
/// `toy-encoder` and `toy-decoder`.
pub fn load_config(spec: &str) -> Result<ModelConfig> {
    let cfg = match spec {
        "toy-encoder" | "toy" => ModelConfig::toy_encoder(),
        "toy-decoder" => ModelConfig::toy_decoder(),
        path => toml::from_str(&fs::read_to_string(path)?).map_err(|e| Error::Format(format!("{path}: {e}")))?,
    };
    cfg.validate()?;
    Ok(cfg)
}

pub fn parse_tokens(text: &str) -> Result<Vec<usize>> {
    text.split(|c: char| c.is_whitespace() || c == ',')
        .filter(|s| !s.is_empty())
        .map(|s| {
            s.parse()
                .map_err(|_| Error::InvalidArgument(format!("token {s:?} is not a non-negative integer")))
        })
        .collect()
}

pub fn write_json<T: Serialize>(path: impl AsRef<Path>, value: &T) -> Result<()> {
    let text = serde_json::to_string_pretty(value).map_err(|e| Error::Format(e.to_string()))?;
    fs::write(path, text + "\n")?;
    Ok(())
}

/// Writes random weights for `config` as `<prefix>.json` and `<prefix>.bin`.
pub fn cmd_genmodel(config: &ModelConfig, seed: u64, prefix: impl AsRef<Path>) -> Result<WeightFiles> {
    let params = ModelParams::random(config, seed)?;
    let files = WeightFiles::from_prefix(prefix);
    weights::save(&params, &files)?;
    Ok(files)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct InferReport {
    pub mode: RunMode,
    pub tokens: usize,
    pub seeds: RunSeeds,
    /// Empty when the transcript passes the communication audit.
    pub audit: Option<String>,
    pub total_bytes: u64,
    pub linear_bytes: u64,
    pub cost: CostReport,
}

#[derive(Clone, Debug, PartialEq)]
pub struct InferOutcome {
    pub logits: RealTensor,
    /// Setup and inference messages together; `None` for plain runs.
    pub transcript: Option<Transcript>,
    pub report: Option<InferReport>,
}

pub fn load_params(manifest: &RunManifest) -> Result<ModelParams> {
    let params = match &manifest.weights {
        Some(prefix) => weights::load(&WeightFiles::from_prefix(prefix))?,
        None => ModelParams::random(&manifest.config, manifest.seeds.params)?,
    };
    if params.config != manifest.config {
        return Err(Error::ConfigMismatch(format!(
            "weights are for {:?}, manifest says {:?}",
            params.config, manifest.config
        )));
    }
    Ok(params)
}

/// Runs the manifest without touching the output paths.
pub fn infer(manifest: &RunManifest) -> Result<InferOutcome> {
    manifest.config.validate()?;
    let profile: NetProfile = manifest.net.parse()?;
    let params = load_params(manifest)?;
    let tokens = parse_tokens(&fs::read_to_string(&manifest.tokens)?)?;
    let cfg = &manifest.config;
    let mask = AttentionMask::for_arch(cfg.arch, cfg.seq_len, tokens.len().min(cfg.seq_len));
    let engine = match manifest.mode {
        RunMode::Plain => {
            return Ok(InferOutcome {
                logits: forward(&params, &tokens, &mask)?,
                transcript: None,
                report: None,
            })
        }
        RunMode::Centaur => initialize(&params, manifest.seeds.engine(), manifest.engine_options()),
        RunMode::Baseline => initialize_baseline(&params, manifest.seeds.engine(), manifest.engine_options()),
    };
    let mut engine = engine?;
    let inference = engine.secure_infer(&tokens, &mask)?;
    let setup = engine.setup_transcript().clone();
    let transcript = Transcript::merge(
        setup.word_bytes,
        [
            (setup.ops, setup.messages),
            (inference.transcript.ops, inference.transcript.messages),
        ],
    );
    let report = InferReport {
        mode: manifest.mode,
        tokens: tokens.len(),
        seeds: manifest.seeds,
        audit: transcript.audit().err(),
        total_bytes: transcript.total_bytes(),
        linear_bytes: transcript.linear_bytes(),
        cost: simulate_cost(&transcript, &profile),
    };
    Ok(InferOutcome {
        logits: inference.logits,
        transcript: Some(transcript),
        report: Some(report),
    })
}

/// Runs the manifest and writes logits, and the report and transcript when
/// their paths are set.
pub fn cmd_infer(manifest: &RunManifest) -> Result<InferOutcome> {
    let out = infer(manifest)?;
    write_json(&manifest.outputs.logits, &out.logits)?;
    if let (Some(path), Some(report)) = (&manifest.outputs.report, &out.report) {
        write_json(path, report)?;
    }
    if let (Some(path), Some(t)) = (&manifest.outputs.transcript, &out.transcript) {
        write_json(path, t)?;
    }
    Ok(out)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CrackScorer {
    /// Knows the answer; a sanity check of the search itself.
    Hamming,
    /// Histogram similarity against unpermuted reference activations.
    Frequency,
    Constant,
}

impl FromStr for CrackScorer {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "hamming" => Ok(Self::Hamming),
            "frequency" => Ok(Self::Frequency),
            "constant" => Ok(Self::Constant),
            _ => Err(Error::InvalidArgument(format!(
                "unknown scorer {s:?}; use hamming, frequency or constant"
            ))),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum Analysis {
    Discorr {
        d: usize,
        samples: usize,
        trials: usize,
        seed: u64,
    },
    Js {
        params: ModelParams,
        inputs: usize,
        bins: usize,
        seed: u64,
    },
    Crack {
        d: usize,
        scorer: CrackScorer,
        ga: GaConfig,
        inputs: usize,
        seed: u64,
    },
    Shuffle {
        params: ModelParams,
        fractions: Vec<f64>,
        queries: usize,
        seed: u64,
    },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ShuffleRow {
    pub fraction: f64,
    pub shuffled: usize,
    pub displaced: usize,
    pub fixed_points: usize,
    /// Nearest-neighbor token recovery rate.
    pub accuracy: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CrackReport {
    pub d: usize,
    pub scorer: CrackScorer,
    pub ga: GaConfig,
    pub best_score: f64,
    pub fraction_correct: f64,
    pub trace: Vec<f64>,
}

/// The model a width-`d` crack experiment draws its activations from.
pub fn crack_config(d: usize) -> ModelConfig {
    ModelConfig {
        d_model: d,
        heads: if d.is_multiple_of(2) { 2 } else { 1 },
        d_ff: 2 * d,
        ..ModelConfig::toy_encoder()
    }
}

pub fn cmd_analyze(analysis: &Analysis) -> Result<serde_json::Value> {
    match analysis {
        Analysis::Discorr {
            d,
            samples,
            trials,
            seed,
        } => Ok(json(&eq6_experiment(*d, *samples, *trials, *seed)?)),
        Analysis::Js {
            params,
            inputs,
            bins,
            seed,
        } => {
            let acts = norm_activations(params, *inputs, *seed)?;
            let opts = JsOptions {
                bins: *bins,
                seed: *seed,
                ..JsOptions::default()
            };
            Ok(json(&js_divergence_profile(&acts, &opts)?))
        }
        Analysis::Crack {
            d,
            scorer,
            ga,
            inputs,
            seed,
        } => {
            let mut rng = ChaCha20Rng::seed_from_u64(*seed);
            let truth = PermSpec::random(*d, &mut rng);
            let boxed: Box<dyn Scorer> = match scorer {
                CrackScorer::Hamming => Box::new(HammingScorer(truth.clone())),
                CrackScorer::Constant => Box::new(ConstantScorer),
                CrackScorer::Frequency => {
                    let params = ModelParams::random(&crack_config(*d), *seed)?;
                    let reference = norm_activations(&params, *inputs, seed.wrapping_add(1))?;
                    let observed = norm_activations(&params, *inputs, seed.wrapping_add(2))?.apply_cols(&truth)?;
                    Box::new(FrequencyScorer::new(&observed, &reference, 64)?)
                }
            };
            let state = genetic_perm_search(*d, boxed.as_ref(), ga, Some(&truth), &mut rng)?;
            Ok(json(&CrackReport {
                d: *d,
                scorer: *scorer,
                ga: *ga,
                best_score: state.best_score,
                fraction_correct: state.fraction_correct.unwrap_or_default(),
                trace: state.trace,
            }))
        }
        Analysis::Shuffle {
            params,
            fractions,
            queries,
            seed,
        } => {
            let mut rng = ChaCha20Rng::seed_from_u64(*seed);
            let table = &params.token_embedding;
            let truth: Vec<usize> = (0..*queries).map(|_| rng.random_range(0..table.rows())).collect();
            let observed = RealTensor::from_rows(&truth.iter().map(|&t| table.row(t).to_vec()).collect::<Vec<_>>())?;
            let rows = fractions
                .iter()
                .map(|&f| {
                    let s = shuffle_fraction(&observed, f, &mut rng)?;
                    Ok(ShuffleRow {
                        fraction: f,
                        shuffled: s.chosen.len(),
                        displaced: s.displaced,
                        fixed_points: s.fixed_points,
                        accuracy: nearest_neighbor_inversion(&s.data, table, &truth)?,
                    })
                })
                .collect::<Result<Vec<_>>>()?;
            Ok(json(&rows))
        }
    }
}

fn json<T: Serialize>(value: &T) -> serde_json::Value {
    serde_json::to_value(value).expect("reports serialize")
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn manifest_round_trips_through_toml() {
        let mut m = RunManifest::new(
            RunMode::Centaur,
            ModelConfig::toy_decoder(),
            "tokens.txt".into(),
            "logits.json".into(),
        );
        m.outputs.report = Some("report.json".into());
        m.seeds.perms = 42;
        let text = m.to_toml().unwrap();
        let back: RunManifest = toml::from_str(&text).unwrap();
        assert_eq!(back, m);
        assert_eq!(back.to_toml().unwrap(), text);
    }

    #[test]
    fn minimal_manifest_fills_defaults() {
        let text = r#"
            mode = "plain"
            tokens = "t.txt"
            [outputs]
            logits = "l.json"
            [config]
            seq_len = 4
            d_model = 8
            heads = 2
            d_ff = 16
            vocab = 10
            blocks = 1
            arch = "encoder"
            norm = "layernorm"
            activation = "gelu"
            classes = 2
        "#;
        let m: RunManifest = toml::from_str(text).unwrap();
        assert_eq!(m.net, "wan");
        assert_eq!(m.seeds, RunSeeds::default());
        assert_eq!(m.ring, RingConfig::default());
    }

    #[test]
    fn parses_token_lists() {
        assert_eq!(parse_tokens("1, 2\n3 4,5").unwrap(), vec![1, 2, 3, 4, 5]);
        assert!(parse_tokens("1 -2").is_err());
    }

    #[test]
    fn modes_and_scorers_parse() {
        assert_eq!("baseline".parse::<RunMode>().unwrap(), RunMode::Baseline);
        assert!("mpc".parse::<RunMode>().is_err());
        assert_eq!("frequency".parse::<CrackScorer>().unwrap(), CrackScorer::Frequency);
        assert_eq!(RunMode::Centaur.to_string(), "centaur");
    }

    #[test]
    fn shuffle_table_degrades_with_fraction() {
        let params = ModelParams::random(&ModelConfig::toy_encoder(), 0).unwrap();
        let v = cmd_analyze(&Analysis::Shuffle {
            params,
            fractions: vec![0.0, 1.0],
            queries: 200,
            seed: 1,
        })
        .unwrap();
        let rows: Vec<ShuffleRow> = serde_json::from_value(v).unwrap();
        assert_eq!(rows[0].accuracy, 1.0);
        assert!(rows[1].accuracy < 0.5, "{}", rows[1].accuracy);
    }
}
