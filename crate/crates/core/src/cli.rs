//! Command-line front end.
//!
//! Every command resolves its parameters as built-in defaults, then the
//! command's table in the `--config` TOML file, then explicit flags. The
//! resolved parameters are written to `config.json` in the output directory.

use std::fs;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use clap::{Args, Parser, Subcommand};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};

use crate::analysis::{
    condition_noise_curve, deletion_ratio_sweep, noise_at_fraction, rsd_sweep, sweep, unit_grid, Condition,
    ExperimentConfig, ProceduralSim,
};
use crate::corpus::{Corpus, CorpusFormat, SeedLexicon};
use crate::corrupt::{corrupt_dataset, CorruptionKind, CorruptionSpec};
use crate::error::Error;
use crate::model::{score_dataset, EvaluateOn, LinearTextClassifier, TrainConfig};
use crate::rng;
use crate::select::{select_oracle, select_top, write_curve_csv, SelectionReport};
use crate::selftrain::{run_pipeline, train_entries, SelectionStrategy, SelfTrainConfig};
use crate::synth::{generate, SyntheticConfig};
use crate::weaklabel::{noise_stats, seed_match, synthesize_flip_noise, PseudoLabeledDataset};

/// Environment variable naming the default output root.
pub const OUT_ROOT_ENV: &str = "SEEDMATCH_OUT";
const DEFAULT_OUT_ROOT: &str = "seedmatch-out";

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error(transparent)]
    Runtime(Error),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) => 2,
            CliError::Runtime(_) => 1,
        }
    }
}

impl From<Error> for CliError {
    fn from(e: Error) -> Self {
        match e {
            Error::InvalidConfig(msg) => CliError::Usage(msg),
            // Malformed inputs are validation failures, not runtime ones.
            Error::Parse { .. }
            | Error::MissingField { .. }
            | Error::DuplicateId(_)
            | Error::UnknownClass { .. }
            | Error::SeedNotSingleToken { .. }
            | Error::DuplicateSeed { .. }
            | Error::DuplicateClass(_) => CliError::Usage(e.to_string()),
            other => CliError::Runtime(other),
        }
    }
}

type CliResult<T> = std::result::Result<T, CliError>;

fn usage<T>(msg: impl Into<String>) -> CliResult<T> {
    Err(CliError::Usage(msg.into()))
}

#[derive(Debug, Parser)]
#[command(name = "seedmatch", version, about = "Seed-matching weak supervision with deletion debiasing")]
pub struct Cli {
    /// TOML file; the table named after the command supplies its parameters.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Output directory [default: $SEEDMATCH_OUT/<command> or ./seedmatch-out/<command>].
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Assign pseudo-labels by seed matching and report the noise transition matrix.
    Label(LabelArgs),
    /// Write the corrupted training view of a pseudo-labeled dataset.
    Corrupt(CorruptArgs),
    /// Train a confidence model on the (corrupted) pseudo-labeled dataset.
    Train(TrainArgs),
    /// Score pseudo-labels and keep the most confident fraction.
    Select(SelectArgs),
    /// Full protocol: label, corrupt, train, select, self-train.
    Run(RunArgs),
    /// Sweeps: rsd, noise-curve, deletion-ratio, conditions.
    Analyze(AnalyzeArgs),
    /// Replace pseudo-labels by a random flip with identical transition counts.
    SynthNoise(SynthNoiseArgs),
    /// Generate a synthetic corpus with planted seeds.
    SynthCorpus(SynthCorpusArgs),
}

impl Command {
    fn name(&self) -> &'static str {
        match self {
            Command::Label(_) => "label",
            Command::Corrupt(_) => "corrupt",
            Command::Train(_) => "train",
            Command::Select(_) => "select",
            Command::Run(_) => "run",
            Command::Analyze(_) => "analyze",
            Command::SynthNoise(_) => "synth-noise",
            Command::SynthCorpus(_) => "synth-corpus",
        }
    }
}

// Flag groups. Field names (after serde renames) match the resolved configs
// so that flags can be merged over them.

#[derive(Debug, Clone, Default, Args, Serialize)]
pub struct InputFlags {
    /// Corpus file (.jsonl with id/text/label, or .csv with the same columns).
    #[arg(long)]
    corpus: Option<PathBuf>,
    /// Seed lexicon JSON `{class: [seed, ...]}`.
    #[arg(long)]
    seeds: Option<PathBuf>,
    /// Pseudo-label JSONL written by `label`; seed matching is rerun when absent.
    #[arg(long)]
    labels: Option<PathBuf>,
    /// Corpus format; inferred from the extension when absent.
    #[arg(long)]
    format: Option<CorpusFormat>,
}

#[derive(Debug, Clone, Default, Args, Serialize)]
pub struct CorruptionFlags {
    #[arg(long)]
    kind: Option<CorruptionKind>,
    /// Random deletion ratio.
    #[arg(long = "p")]
    #[serde(rename = "deletion_ratio")]
    p: Option<f64>,
    /// Redraw random deletions every epoch.
    #[arg(long, num_args = 0..=1, default_missing_value = "true")]
    #[serde(rename = "resample_per_epoch")]
    resample: Option<bool>,
}

#[derive(Debug, Clone, Default, Args, Serialize)]
pub struct TrainFlags {
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    #[serde(rename = "learning_rate")]
    lr: Option<f64>,
    #[arg(long)]
    batch_size: Option<usize>,
    /// Hashed feature dimension (power of two).
    #[arg(long)]
    dim: Option<usize>,
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct LabelArgs {
    #[command(flatten)]
    #[serde(flatten)]
    inputs: InputFlags,
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct CorruptArgs {
    #[command(flatten)]
    #[serde(flatten)]
    inputs: InputFlags,
    #[command(flatten)]
    corruption: CorruptionFlags,
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct TrainArgs {
    #[command(flatten)]
    #[serde(flatten)]
    inputs: InputFlags,
    #[command(flatten)]
    corruption: CorruptionFlags,
    #[command(flatten)]
    train: TrainFlags,
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct SelectArgs {
    #[command(flatten)]
    #[serde(flatten)]
    inputs: InputFlags,
    /// Model dump from `train`; a model is trained when absent.
    #[arg(long)]
    model: Option<PathBuf>,
    #[arg(long)]
    #[serde(rename = "selection_fraction")]
    fraction: Option<f64>,
    #[arg(long)]
    strategy: Option<SelectionStrategy>,
    #[arg(long)]
    evaluate_on: Option<EvaluateOn>,
    #[command(flatten)]
    corruption: CorruptionFlags,
    #[command(flatten)]
    train: TrainFlags,
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct RunArgs {
    #[command(flatten)]
    #[serde(flatten)]
    inputs: InputFlags,
    #[arg(long)]
    iterations: Option<usize>,
    /// Fraction of the unlabeled pool merged per self-training iteration.
    #[arg(long = "tau")]
    #[serde(rename = "merge_fraction")]
    tau: Option<f64>,
    #[arg(long)]
    #[serde(rename = "selection_fraction")]
    selection: Option<f64>,
    #[arg(long)]
    #[serde(rename = "selection")]
    strategy: Option<SelectionStrategy>,
    #[arg(long)]
    evaluate_on: Option<EvaluateOn>,
    #[command(flatten)]
    corruption: CorruptionFlags,
    #[command(flatten)]
    train: TrainFlags,
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct AnalyzeArgs {
    /// rsd | noise-curve | deletion-ratio | conditions
    sweep: Option<String>,
    #[command(flatten)]
    #[serde(flatten)]
    inputs: InputFlags,
    /// Seed counts for the rsd sweep.
    #[arg(long, value_delimiter = ',')]
    ns: Option<Vec<u32>>,
    /// Indicative-word counts for the rsd sweep.
    #[arg(long, value_delimiter = ',')]
    nc: Option<Vec<u32>>,
    /// Grid resolution for the rsd sweep: p = 0, 1/steps, ..., 1.
    #[arg(long)]
    steps: Option<u32>,
    /// Also simulate fixed-count deletion with this many other words per document.
    #[arg(long)]
    procedural_other: Option<u32>,
    #[arg(long)]
    procedural_trials: Option<u64>,
    /// Condition for the noise curve, e.g. `random-deletion:0.9`.
    #[arg(long)]
    condition: Option<Condition>,
    #[arg(long, value_delimiter = ',')]
    conditions: Option<Vec<Condition>>,
    #[arg(long, value_delimiter = ',')]
    fractions: Option<Vec<f64>>,
    #[arg(long, value_delimiter = ',')]
    ratios: Option<Vec<f64>>,
    /// Add keep-seeds and seed-then-random columns to the deletion-ratio sweep.
    #[arg(long, num_args = 0..=1, default_missing_value = "true")]
    ablations: Option<bool>,
    #[command(flatten)]
    experiment: ExperimentFlags,
}

#[derive(Debug, Clone, Default, Args, Serialize)]
pub struct ExperimentFlags {
    #[arg(long)]
    #[serde(rename = "selection_fraction")]
    selection: Option<f64>,
    #[arg(long)]
    evaluate_on: Option<EvaluateOn>,
    #[arg(long, num_args = 0..=1, default_missing_value = "true")]
    #[serde(rename = "resample_per_epoch")]
    resample: Option<bool>,
    #[command(flatten)]
    train: TrainFlags,
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct SynthNoiseArgs {
    #[command(flatten)]
    #[serde(flatten)]
    inputs: InputFlags,
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct SynthCorpusArgs {
    #[arg(long)]
    docs: Option<usize>,
    #[arg(long)]
    classes: Option<usize>,
    #[arg(long)]
    noise_rate: Option<f64>,
    #[arg(long)]
    unmatched_fraction: Option<f64>,
    #[arg(long)]
    seed: Option<u64>,
}

// Resolved configurations.

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(default)]
pub struct Inputs {
    pub corpus: Option<PathBuf>,
    pub seeds: Option<PathBuf>,
    pub labels: Option<PathBuf>,
    pub format: Option<CorpusFormat>,
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(default)]
pub struct LabelConfig {
    #[serde(flatten)]
    pub inputs: Inputs,
}

fn protocol_corruption() -> CorruptionSpec {
    CorruptionSpec::random_deletion(0.9, 0)
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct CorruptConfig {
    #[serde(flatten)]
    pub inputs: Inputs,
    pub corruption: CorruptionSpec,
    pub seed: u64,
}

impl Default for CorruptConfig {
    fn default() -> Self {
        CorruptConfig {
            inputs: Inputs::default(),
            corruption: protocol_corruption(),
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainCommandConfig {
    #[serde(flatten)]
    pub inputs: Inputs,
    pub corruption: CorruptionSpec,
    pub train: TrainConfig,
    pub seed: u64,
}

impl Default for TrainCommandConfig {
    fn default() -> Self {
        TrainCommandConfig {
            inputs: Inputs::default(),
            corruption: protocol_corruption(),
            train: TrainConfig::default(),
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct SelectConfig {
    #[serde(flatten)]
    pub inputs: Inputs,
    pub model: Option<PathBuf>,
    pub selection_fraction: f64,
    pub strategy: SelectionStrategy,
    pub evaluate_on: EvaluateOn,
    pub corruption: CorruptionSpec,
    pub train: TrainConfig,
    pub seed: u64,
}

impl Default for SelectConfig {
    fn default() -> Self {
        SelectConfig {
            inputs: Inputs::default(),
            model: None,
            selection_fraction: 0.5,
            strategy: SelectionStrategy::Confidence,
            evaluate_on: EvaluateOn::Original,
            corruption: protocol_corruption(),
            train: TrainConfig::default(),
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(default)]
pub struct RunConfig {
    #[serde(flatten)]
    pub inputs: Inputs,
    #[serde(flatten)]
    pub pipeline: SelfTrainConfig,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct AnalyzeConfig {
    pub sweep: Option<String>,
    #[serde(flatten)]
    pub inputs: Inputs,
    pub ns: Vec<u32>,
    pub nc: Vec<u32>,
    pub steps: u32,
    pub procedural_other: Option<u32>,
    pub procedural_trials: u64,
    pub condition: Condition,
    pub conditions: Vec<Condition>,
    pub fractions: Vec<f64>,
    pub ratios: Vec<f64>,
    pub ablations: bool,
    pub experiment: ExperimentConfig,
}

impl Default for AnalyzeConfig {
    fn default() -> Self {
        let tenths: Vec<f64> = (0..=10).map(|i| i as f64 / 10.0).collect();
        AnalyzeConfig {
            sweep: None,
            inputs: Inputs::default(),
            ns: vec![1],
            nc: vec![1, 5, 10, 50, 200],
            steps: 1000,
            procedural_other: None,
            procedural_trials: 10_000,
            condition: Condition::RandomDeletion { p: 0.9 },
            conditions: vec![
                Condition::Vanilla,
                Condition::SeedDeletion,
                Condition::FlipNoise,
                Condition::RandomDeletion { p: 0.9 },
            ],
            fractions: tenths[1..].to_vec(),
            ratios: tenths,
            ablations: false,
            experiment: ExperimentConfig::default(),
        }
    }
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(default)]
pub struct SynthNoiseConfig {
    #[serde(flatten)]
    pub inputs: Inputs,
    pub seed: u64,
}

// Resolution.

/// Recursively overlay `over` onto `base`, skipping nulls.
fn overlay(base: &mut Value, over: Value) {
    match (base, over) {
        (_, Value::Null) => {}
        (Value::Object(b), Value::Object(o)) => {
            for (k, v) in o {
                match b.get_mut(&k) {
                    Some(slot) => overlay(slot, v),
                    None => {
                        if !v.is_null() {
                            b.insert(k, v);
                        }
                    }
                }
            }
        }
        (slot, v) => *slot = v,
    }
}

/// Keys of `over` that do not exist in `reference`, as dotted paths.
fn unknown_keys(reference: &Value, over: &Value, prefix: &str, out: &mut Vec<String>) {
    if let (Value::Object(r), Value::Object(o)) = (reference, over) {
        for (k, v) in o {
            let path = if prefix.is_empty() { k.clone() } else { format!("{prefix}.{k}") };
            match r.get(k) {
                None => out.push(path),
                Some(rv) => unknown_keys(rv, v, &path, out),
            }
        }
    }
}

/// Parsed `--config` file.
#[derive(Debug, Default)]
struct ConfigFile {
    out: Option<PathBuf>,
    tables: Map<String, Value>,
}

impl ConfigFile {
    fn load(path: Option<&Path>) -> CliResult<Self> {
        let Some(path) = path else {
            return Ok(ConfigFile::default());
        };
        let text = fs::read_to_string(path)
            .map_err(|e| CliError::Usage(format!("cannot read config {}: {e}", path.display())))?;
        let parsed: toml::Table =
            toml::from_str(&text).map_err(|e| CliError::Usage(format!("config {}: {e}", path.display())))?;
        let Value::Object(mut tables) =
            serde_json::to_value(parsed).map_err(|e| CliError::Usage(format!("config {}: {e}", path.display())))?
        else {
            unreachable!("a TOML table converts to an object")
        };
        let out = match tables.remove("out") {
            Some(Value::String(s)) => Some(PathBuf::from(s)),
            Some(_) => return usage("config key `out` must be a string"),
            None => None,
        };
        Ok(ConfigFile { out, tables })
    }
}

fn resolve<T>(file: &ConfigFile, command: &str, flags: &impl Serialize) -> CliResult<T>
where
    T: Default + Serialize + DeserializeOwned,
{
    let mut merged = to_json(&T::default())?;
    if let Some(section) = file.tables.get(command) {
        let mut unknown = Vec::new();
        unknown_keys(&merged, section, command, &mut unknown);
        if !unknown.is_empty() {
            return usage(format!("unknown config keys: {}", unknown.join(", ")));
        }
        overlay(&mut merged, section.clone());
    }
    overlay(&mut merged, to_json(flags)?);
    serde_json::from_value(merged).map_err(|e| CliError::Usage(format!("invalid {command} configuration: {e}")))
}

fn to_json(v: &impl Serialize) -> CliResult<Value> {
    serde_json::to_value(v).map_err(|e| CliError::Usage(e.to_string()))
}

fn output_dir(cli_out: Option<&Path>, file: &ConfigFile, command: &str) -> CliResult<PathBuf> {
    let dir = match (cli_out, &file.out) {
        (Some(p), _) => p.to_owned(),
        (None, Some(p)) => p.clone(),
        (None, None) => {
            let root = std::env::var_os(OUT_ROOT_ENV)
                .map(PathBuf::from)
                .unwrap_or_else(|| PathBuf::from(DEFAULT_OUT_ROOT));
            root.join(command)
        }
    };
    fs::create_dir_all(&dir).map_err(|e| CliError::Usage(format!("cannot create {}: {e}", dir.display())))?;
    Ok(dir)
}

fn echo_config(dir: &Path, command: &str, config: &impl Serialize) -> CliResult<()> {
    #[derive(Serialize)]
    struct Echo<'a, C> {
        command: &'a str,
        config: &'a C,
    }
    let path = dir.join("config.json");
    let mut bytes = serde_json::to_vec_pretty(&Echo { command, config }).map_err(Error::from)?;
    bytes.push(b'\n');
    fs::write(&path, bytes).map_err(|e| Error::io(&path, e))?;
    Ok(())
}

fn existing(path: &Option<PathBuf>, flag: &str) -> CliResult<Option<PathBuf>> {
    match path {
        Some(p) if !p.is_file() => usage(format!("{flag}: no such file {}", p.display())),
        other => Ok(other.clone()),
    }
}

fn required(path: &Option<PathBuf>, flag: &str) -> CliResult<PathBuf> {
    existing(path, flag)?.ok_or_else(|| CliError::Usage(format!("{flag} is required")))
}

/// Validated inputs loaded from disk.
struct Loaded {
    corpus: Arc<Corpus>,
    lexicon: Option<SeedLexicon>,
}

impl Loaded {
    fn open(inputs: &Inputs, need_lexicon: bool) -> CliResult<Self> {
        let corpus_path = required(&inputs.corpus, "--corpus")?;
        let seeds = if need_lexicon {
            Some(required(&inputs.seeds, "--seeds")?)
        } else {
            existing(&inputs.seeds, "--seeds")?
        };
        existing(&inputs.labels, "--labels")?;
        let format = match inputs.format.or_else(|| CorpusFormat::from_path(&corpus_path)) {
            Some(f) => f,
            None => return usage(format!("cannot infer format of {}; pass --format", corpus_path.display())),
        };
        let lexicon = seeds.map(SeedLexicon::load).transpose()?;
        let corpus = Corpus::load(&corpus_path, format, lexicon.as_ref().map(|l| l.classes()))?;
        Ok(Loaded {
            corpus: Arc::new(corpus),
            lexicon,
        })
    }

    /// Pseudo-labels from `--labels`, or by seed matching.
    fn pseudo_labels(&self, inputs: &Inputs) -> CliResult<PseudoLabeledDataset> {
        match (&inputs.labels, &self.lexicon) {
            (Some(path), _) => Ok(PseudoLabeledDataset::read_jsonl(self.corpus.clone(), path)?),
            (None, Some(lex)) => Ok(seed_match(self.corpus.clone(), lex)?),
            (None, None) => usage("either --labels or --seeds is required"),
        }
    }
}

fn seeded_spec(spec: CorruptionSpec, seed: u64) -> CorruptionSpec {
    CorruptionSpec {
        rng_seed: rng::derive_seed(seed, &["corrupt".into()]),
        ..spec
    }
}

fn seeded_train(train: TrainConfig, seed: u64) -> TrainConfig {
    TrainConfig {
        seed: rng::derive_seed(seed, &["train".into()]),
        ..train
    }
}

fn check_lexicon_for(spec: &CorruptionSpec, inputs: &Inputs) -> CliResult<()> {
    if spec.kind == CorruptionKind::SeedDeletion && inputs.seeds.is_none() {
        return usage("seed deletion requires --seeds");
    }
    Ok(spec.validate()?)
}

pub fn run(cli: Cli) -> CliResult<()> {
    let file = ConfigFile::load(cli.config.as_deref())?;
    let name = cli.command.name();
    if let Some(extra) = file.tables.keys().find(|k| !COMMANDS.contains(&k.as_str())) {
        return usage(format!("unknown config table `{extra}`"));
    }
    match &cli.command {
        Command::Label(a) => {
            let cfg: LabelConfig = resolve(&file, name, a)?;
            let loaded = Loaded::open(&cfg.inputs, true)?;
            let out = output_dir(cli.out.as_deref(), &file, name)?;
            echo_config(&out, name, &cfg)?;
            cmd_label(&loaded, &out)
        }
        Command::Corrupt(a) => {
            let cfg: CorruptConfig = resolve(&file, name, a)?;
            check_lexicon_for(&cfg.corruption, &cfg.inputs)?;
            let loaded = Loaded::open(&cfg.inputs, false)?;
            let out = output_dir(cli.out.as_deref(), &file, name)?;
            echo_config(&out, name, &cfg)?;
            let ds = loaded.pseudo_labels(&cfg.inputs)?;
            let corrupted = corrupt_dataset(&ds, loaded.lexicon.as_ref(), &seeded_spec(cfg.corruption, cfg.seed))?;
            corrupted.write_jsonl(out.join("corrupted.jsonl"))?;
            println!("corrupted {} entries ({})", corrupted.entries.len(), cfg.corruption.kind);
            Ok(())
        }
        Command::Train(a) => {
            let cfg: TrainCommandConfig = resolve(&file, name, a)?;
            check_lexicon_for(&cfg.corruption, &cfg.inputs)?;
            cfg.train.validate()?;
            let loaded = Loaded::open(&cfg.inputs, false)?;
            let out = output_dir(cli.out.as_deref(), &file, name)?;
            echo_config(&out, name, &cfg)?;
            let ds = loaded.pseudo_labels(&cfg.inputs)?;
            let model = train_entries(
                &loaded.corpus,
                ds.entries(),
                loaded.lexicon.as_ref(),
                &seeded_spec(cfg.corruption, cfg.seed),
                &seeded_train(cfg.train, cfg.seed),
            )?;
            model.save(out.join("model.json"))?;
            println!(
                "trained on {} entries; final loss {:.6}; checksum {}",
                ds.len(),
                model.loss_trace.last().copied().unwrap_or(f64::NAN),
                model.checksum()?
            );
            Ok(())
        }
        Command::Select(a) => {
            let cfg: SelectConfig = resolve(&file, name, a)?;
            check_lexicon_for(&cfg.corruption, &cfg.inputs)?;
            cfg.train.validate()?;
            existing(&cfg.model, "--model")?;
            let loaded = Loaded::open(&cfg.inputs, false)?;
            let out = output_dir(cli.out.as_deref(), &file, name)?;
            echo_config(&out, name, &cfg)?;
            cmd_select(&loaded, &cfg, &out)
        }
        Command::Run(a) => {
            let cfg: RunConfig = resolve(&file, name, a)?;
            cfg.pipeline.validate()?;
            let loaded = Loaded::open(&cfg.inputs, true)?;
            let out = output_dir(cli.out.as_deref(), &file, name)?;
            echo_config(&out, name, &cfg)?;
            cmd_run(&loaded, &cfg.pipeline, &out)
        }
        Command::Analyze(a) => {
            let cfg: AnalyzeConfig = resolve(&file, name, a)?;
            let sweep = match cfg.sweep.as_deref() {
                Some(s @ ("rsd" | "noise-curve" | "deletion-ratio" | "conditions")) => s,
                Some(other) => return usage(format!("unknown sweep `{other}`")),
                None => return usage("a sweep name is required: rsd, noise-curve, deletion-ratio, conditions"),
            };
            if sweep == "rsd" {
                let out = output_dir(cli.out.as_deref(), &file, name)?;
                echo_config(&out, name, &cfg)?;
                return cmd_rsd(&cfg, &out);
            }
            cfg.experiment.train.validate()?;
            let loaded = Loaded::open(&cfg.inputs, true)?;
            let out = output_dir(cli.out.as_deref(), &file, name)?;
            echo_config(&out, name, &cfg)?;
            cmd_experiment(&loaded, sweep, &cfg, &out)
        }
        Command::SynthNoise(a) => {
            let cfg: SynthNoiseConfig = resolve(&file, name, a)?;
            let loaded = Loaded::open(&cfg.inputs, false)?;
            let out = output_dir(cli.out.as_deref(), &file, name)?;
            echo_config(&out, name, &cfg)?;
            let ds = loaded.pseudo_labels(&cfg.inputs)?;
            let flipped = synthesize_flip_noise(&ds, cfg.seed)?;
            flipped.write_jsonl(out.join("pseudo_labels.jsonl"))?;
            let before = noise_stats(&ds)?;
            let after = noise_stats(&flipped)?;
            before.write_counts_csv(out.join("transition_counts_seed_match.csv"))?;
            after.write_counts_csv(out.join("transition_counts_flipped.csv"))?;
            println!(
                "flipped {} pseudo-labels; noise rate {:.6}; matrices identical: {}",
                flipped.len(),
                after.overall_noise_rate(),
                before == after
            );
            Ok(())
        }
        Command::SynthCorpus(a) => {
            let cfg: SyntheticConfig = resolve(&file, name, a)?;
            let out = output_dir(cli.out.as_deref(), &file, name)?;
            echo_config(&out, name, &cfg)?;
            let s = generate(&cfg)?;
            s.corpus.save(out.join("corpus.jsonl"))?;
            write_lexicon(&s.lexicon, &out.join("seeds.json"))?;
            println!("wrote {} documents to {}", s.corpus.len(), out.display());
            Ok(())
        }
    }
}

const COMMANDS: [&str; 8] = [
    "label",
    "corrupt",
    "train",
    "select",
    "run",
    "analyze",
    "synth-noise",
    "synth-corpus",
];

fn write_lexicon(lexicon: &SeedLexicon, path: &Path) -> CliResult<()> {
    let mut map = Map::new();
    for (id, class) in lexicon.classes().names().iter().enumerate() {
        map.insert(class.clone(), lexicon.seeds(id).iter().cloned().collect::<Vec<_>>().into());
    }
    let mut bytes = serde_json::to_vec_pretty(&map).map_err(Error::from)?;
    bytes.push(b'\n');
    fs::write(path, bytes).map_err(|e| Error::io(path, e))?;
    Ok(())
}

fn cmd_label(loaded: &Loaded, out: &Path) -> CliResult<()> {
    let lexicon = loaded.lexicon.as_ref().expect("label requires a lexicon");
    let ds = seed_match(loaded.corpus.clone(), lexicon)?;
    ds.write_jsonl(out.join("pseudo_labels.jsonl"))?;
    let unmatched: String = ds.unmatched_ids().map(|id| format!("{id}\n")).collect();
    let path = out.join("unmatched.txt");
    fs::write(&path, unmatched).map_err(|e| Error::io(&path, e))?;
    println!("matched {} of {} documents", ds.len(), loaded.corpus.len());
    if ds.missing_gold().is_empty() && !ds.is_empty() {
        let m = noise_stats(&ds)?;
        m.write_counts_csv(out.join("transition_counts.csv"))?;
        m.write_rates_csv(out.join("transition_rates.csv"))?;
        println!("noise rate {:.6}", m.overall_noise_rate());
    } else {
        println!("notice: gold labels missing; transition matrix skipped");
    }
    Ok(())
}

fn cmd_select(loaded: &Loaded, cfg: &SelectConfig, out: &Path) -> CliResult<()> {
    let ds = loaded.pseudo_labels(&cfg.inputs)?;
    let spec = seeded_spec(cfg.corruption, cfg.seed);
    let report: SelectionReport = match cfg.strategy {
        SelectionStrategy::Oracle => select_oracle(&ds)?,
        SelectionStrategy::All | SelectionStrategy::Confidence => {
            let model = match &cfg.model {
                Some(path) => LinearTextClassifier::load(path)?,
                None => train_entries(
                    &loaded.corpus,
                    ds.entries(),
                    loaded.lexicon.as_ref(),
                    &spec,
                    &seeded_train(cfg.train, cfg.seed),
                )?,
            };
            if model.classes() != loaded.corpus.classes().names() {
                return usage("model classes do not match the corpus classes");
            }
            let aligned = loaded.lexicon.as_ref().map(|l| l.aligned_to(loaded.corpus.classes())).transpose()?;
            let scores = score_dataset(&model, &ds, cfg.evaluate_on, Some((&spec, aligned.as_ref())))?;
            write_scores(&ds, &scores, &out.join("scores.jsonl"))?;
            let fraction = if cfg.strategy == SelectionStrategy::All { 1.0 } else { cfg.selection_fraction };
            select_top(&ds, &scores, fraction)?
        }
    };
    report.write_json(out.join("selection.json"))?;
    let kept = report.selected_entries.iter().map(|&i| ds.entries()[i]).collect();
    PseudoLabeledDataset::new(loaded.corpus.clone(), kept)?.write_jsonl(out.join("selected.jsonl"))?;
    match report.noise_rate_in_selection {
        Some(r) => println!("selected {} of {}; noise rate {:.6}", report.selected_ids.len(), ds.len(), r),
        None => println!("selected {} of {}", report.selected_ids.len(), ds.len()),
    }
    Ok(())
}

fn write_scores(ds: &PseudoLabeledDataset, scores: &[crate::model::ConfidenceScore], path: &Path) -> CliResult<()> {
    use std::io::Write;
    #[derive(Serialize)]
    struct Rec<'a> {
        id: &'a str,
        pseudo_label: &'a str,
        probability: f64,
    }
    let file = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = std::io::BufWriter::new(file);
    let classes = ds.corpus().classes();
    for s in scores {
        let rec = Rec {
            id: &s.id,
            pseudo_label: classes.name(s.pseudo_label),
            probability: s.probability,
        };
        serde_json::to_writer(&mut w, &rec).map_err(Error::from)?;
        w.write_all(b"\n").map_err(|e| Error::io(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))?;
    Ok(())
}

fn cmd_run(loaded: &Loaded, cfg: &SelfTrainConfig, out: &Path) -> CliResult<()> {
    let lexicon = loaded.lexicon.as_ref().expect("run requires a lexicon");
    let result = run_pipeline(loaded.corpus.clone(), lexicon, cfg)?;
    result.ledger.write_json(out.join("ledger.json"))?;
    result.ledger.write_csv(out.join("metrics.csv"))?;
    result.model.save(out.join("model.json"))?;
    result.selection.write_json(out.join("selection.json"))?;
    PseudoLabeledDataset::new(loaded.corpus.clone(), result.labeled.clone())?.write_jsonl(out.join("labeled.jsonl"))?;
    if let Some(m) = &result.final_metrics {
        m.write_json(out.join("final_metrics.json"))?;
        println!("micro-F1 {:.6}  macro-F1 {:.6}", m.micro_f1, m.macro_f1);
    }
    let last = result.ledger.records.last().expect("ledger has the post-selection record");
    println!(
        "{} iterations; labeled set {}; ledger checksum {}",
        cfg.iterations,
        last.training_set_size,
        result.ledger.checksum()?
    );
    Ok(())
}

fn cmd_rsd(cfg: &AnalyzeConfig, out: &Path) -> CliResult<()> {
    if cfg.steps == 0 {
        return usage("--steps must be positive");
    }
    let procedural = cfg.procedural_other.map(|n_other| ProceduralSim {
        n_other,
        trials: cfg.procedural_trials,
        rng_seed: rng::derive_seed(cfg.experiment.seed, &["procedural".into()]),
    });
    let table = rsd_sweep(&cfg.ns, &cfg.nc, &unit_grid(cfg.steps), procedural)?;
    table.write_csv(out.join("rsd.csv"))?;
    table.write_argmax_csv(out.join("rsd_argmax.csv"))?;
    for a in &table.argmax {
        println!("n_s={} n_c={}: argmax p {:.6} (r_sd {:.6})", a.n_seed, a.n_indicative, a.best_p, a.best_rate);
    }
    Ok(())
}

fn cmd_experiment(loaded: &Loaded, sweep_name: &str, cfg: &AnalyzeConfig, out: &Path) -> CliResult<()> {
    let ds = loaded.pseudo_labels(&cfg.inputs)?;
    let lexicon = loaded.lexicon.as_ref();
    let exp = &cfg.experiment;
    match sweep_name {
        "noise-curve" => {
            let curve = condition_noise_curve(&ds, lexicon, cfg.condition, exp, &cfg.fractions)?;
            write_curve_csv(out.join("noise_curve.csv"), &curve)?;
            for (f, r) in &curve {
                println!("{f}: {r:.6}");
            }
        }
        "deletion-ratio" => {
            let rows = deletion_ratio_sweep(&ds, lexicon, &cfg.ratios, cfg.ablations, exp)?;
            sweep::write_deletion_csv(out.join("deletion_ratio.csv"), &rows)?;
            for r in &rows {
                println!("p={}: {:.6}", r.p, r.random_deletion);
            }
        }
        "conditions" => {
            let rows = cfg
                .conditions
                .iter()
                .map(|&c| noise_at_fraction(&ds, lexicon, c, exp))
                .collect::<Result<Vec<_>, _>>()?;
            sweep::write_outcomes_csv(out.join("conditions.csv"), &rows)?;
            for r in &rows {
                println!("{}: {:.6} (overall {:.6})", r.condition, r.selected_noise_rate, r.overall_noise_rate);
            }
        }
        _ => unreachable!("sweep name validated"),
    }
    Ok(())
}
