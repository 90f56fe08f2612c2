//! The `scorekeep` command line.
//!
//! Every subcommand takes its options from flags, from the `[<subcommand>]`
//! table of a `--config` TOML file, or both; flags win. Each output file gets a
//! `<output>.meta.json` companion recording the tool version, the effective
//! configuration and its SHA-256 digest, the seeds and digests of the inputs.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use sha2::{Digest, Sha256};

use crate::dataset::{
    balance_truth, build_datapoints, compute_stats, downsample_captions, last_turns, read_dataset, read_props,
    write_dataset, write_props, Datapoint, DEFAULT_CAPTION_RATE, DEFAULT_CAP_PER_SIDE,
};
use crate::embed::{synth_prop_store, synth_rep_store, SynthMode, VectorStore, PROP_DIM, REP_DIM};
use crate::error::{Error, Result};
use crate::eval::{
    build_report, consistency, correctness, permutation_test, read_predictions, render_report,
    write_predictions, write_scoreboard_csv, ConsistencyCounts, PredictedScoreboard, REPORT_TURN,
};
use crate::model::{build_scoreboard_rows, Dialogue, Proposition, Role, Split, TaskVariant, Tokens};
use crate::probe::{
    load_checkpoint, predict, save_checkpoint, train, Control, ProbeData, ProbeModel, TrainConfig,
};
use crate::propgen::input::load_dialogues;
use crate::propgen::lexicon::read_word_list;
use crate::propgen::sidecar::{read_coref, read_pos};
use crate::propgen::{generate, render, GenerationInputs, Lexicons, RuleSet};
use crate::synth::{synth_corpus, SynthCorpusConfig};

#[derive(Debug, Parser)]
#[command(name = "scorekeep", version, about = "Scoreboard probing for dialogue representations")]
pub struct Cli {
    /// TOML file whose [<subcommand>] table supplies defaults for the flags
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate entailment/contradiction propositions from dialogues
    GenProps(GenPropsArgs),
    /// Expand propositions into a binary datapoint file
    BuildDataset(BuildDatasetArgs),
    /// Dataset statistics as JSON
    Stats(StatsArgs),
    /// Write a synthetic dialogue corpus
    SynthDialogues(SynthDialoguesArgs),
    /// Write synthetic representation and proposition-embedding stores
    SynthEmbed(SynthEmbedArgs),
    /// Train a probe
    Train(TrainArgs),
    /// Evaluate a probe on a dataset
    Eval(EvalArgs),
    /// Dump gold or predicted scoreboards as CSV
    Scoreboard(ScoreboardArgs),
    /// Paired permutation test between two prediction files
    PermTest(PermTestArgs),
}

impl Command {
    fn name(&self) -> &'static str {
        match self {
            Command::GenProps(_) => "gen-props",
            Command::BuildDataset(_) => "build-dataset",
            Command::Stats(_) => "stats",
            Command::SynthDialogues(_) => "synth-dialogues",
            Command::SynthEmbed(_) => "synth-embed",
            Command::Train(_) => "train",
            Command::Eval(_) => "eval",
            Command::Scoreboard(_) => "scoreboard",
            Command::PermTest(_) => "perm-test",
        }
    }
}

#[derive(Debug, Clone, Default, Args, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GenPropsArgs {
    /// Dialogue JSON (inline or pooled layout)
    #[arg(long)]
    pub dialogues: Option<PathBuf>,
    /// Split recorded on the dialogues (overrides the file's own)
    #[arg(long)]
    pub split: Option<String>,
    /// Coreference sidecar, JSON lines
    #[arg(long)]
    pub coref: Option<PathBuf>,
    /// Caption POS sidecar, JSON lines
    #[arg(long)]
    pub pos: Option<PathBuf>,
    /// Rule file replacing the bundled rule set
    #[arg(long)]
    pub rules: Option<PathBuf>,
    /// Whole-token blocklist, one word per line
    #[arg(long)]
    pub blocklist: Option<PathBuf>,
    /// Polarity cue file replacing the bundled one
    #[arg(long)]
    pub polarity: Option<PathBuf>,
    /// Fraction of caption pairs to keep [default: 1, no downsampling]
    #[arg(long)]
    pub caption_rate: Option<f64>,
    /// Seed for caption downsampling [default: 0]
    #[arg(long)]
    pub seed: Option<u64>,
    /// Output propositions, JSON lines
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Generation log JSON (rule hits and filter counts)
    #[arg(long)]
    pub log: Option<PathBuf>,
}

#[derive(Debug, Clone, Default, Args, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BuildDatasetArgs {
    /// Propositions, JSON lines
    #[arg(long)]
    pub props: Option<PathBuf>,
    /// Dialogues of this split
    #[arg(long)]
    pub dialogues: Option<PathBuf>,
    /// train, valid or test [default: the dialogue file's split]
    #[arg(long)]
    pub split: Option<String>,
    /// answerer or questioner [default: answerer]
    #[arg(long)]
    pub role: Option<String>,
    /// Fraction of caption pairs to keep [default: 0.15]
    #[arg(long)]
    pub caption_rate: Option<f64>,
    /// Per-surface cap on each truth side, or "none" [default: 1000]
    #[arg(long)]
    pub cap: Option<String>,
    /// Balance truth values (true/false) [default: only for the train split]
    #[arg(long)]
    pub balance: Option<bool>,
    /// Sampling seed [default: 0]
    #[arg(long)]
    pub seed: Option<u64>,
    /// Output dataset (SKDS)
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Output statistics JSON
    #[arg(long)]
    pub stats: Option<PathBuf>,
}

#[derive(Debug, Clone, Default, Args, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct StatsArgs {
    /// Propositions, JSON lines
    #[arg(long)]
    pub props: Option<PathBuf>,
    /// Dataset (SKDS)
    #[arg(long)]
    pub dataset: Option<PathBuf>,
    /// Restrict class proportions to one representation turn
    #[arg(long)]
    pub turn: Option<usize>,
    /// Output JSON [default: stdout]
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Clone, Default, Args, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthDialoguesArgs {
    /// Number of dialogues [default: 100]
    #[arg(long)]
    pub count: Option<usize>,
    /// QA turns per dialogue [default: 10]
    #[arg(long)]
    pub turns: Option<usize>,
    /// Object vocabulary size [default: 40]
    #[arg(long)]
    pub objects: Option<usize>,
    /// Id of the first dialogue [default: 1]
    #[arg(long)]
    pub first_id: Option<u64>,
    /// Draw each turn's object from its own pool (true/false) [default: false]
    #[arg(long)]
    pub turn_pools: Option<bool>,
    /// Split written into the file
    #[arg(long)]
    pub split: Option<String>,
    /// [default: 7]
    #[arg(long)]
    pub seed: Option<u64>,
    /// Output dialogue JSON
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Clone, Default, Args, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthEmbedArgs {
    /// Dialogue JSON files to cover
    #[arg(long)]
    pub dialogues: Vec<PathBuf>,
    /// Proposition files to cover
    #[arg(long)]
    pub props: Vec<PathBuf>,
    /// cumulative or noise [default: cumulative]
    #[arg(long)]
    pub mode: Option<String>,
    /// [default: 0]
    #[arg(long)]
    pub seed: Option<u64>,
    /// Output representation store (SKVE, 512-d)
    #[arg(long)]
    pub reps_out: Option<PathBuf>,
    /// Output proposition-embedding store (SKVE, 768-d)
    #[arg(long)]
    pub prop_emb_out: Option<PathBuf>,
}

#[derive(Debug, Clone, Default, Args, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainArgs {
    /// Training dataset (SKDS)
    #[arg(long)]
    pub train: Option<PathBuf>,
    /// Validation dataset (SKDS)
    #[arg(long)]
    pub valid: Option<PathBuf>,
    /// Proposition files referenced by the datasets
    #[arg(long)]
    pub props: Vec<PathBuf>,
    /// Representation store (SKVE, 512-d)
    #[arg(long)]
    pub reps: Option<PathBuf>,
    /// Proposition-embedding store (SKVE, 768-d)
    #[arg(long)]
    pub prop_emb: Option<PathBuf>,
    /// Build synthetic stores on the fly instead of reading --reps/--prop-emb
    #[arg(long)]
    pub synth: bool,
    /// Dialogue files for --synth
    #[arg(long)]
    pub dialogues: Vec<PathBuf>,
    /// cumulative or noise, for --synth [default: cumulative]
    #[arg(long)]
    pub synth_mode: Option<String>,
    /// Seed of the synthetic stores [default: 0]
    #[arg(long)]
    pub synth_seed: Option<u64>,
    /// tfxps, tf, ps or pxtsfs [default: tfxps]
    #[arg(long)]
    pub task: Option<String>,
    /// answerer or questioner [default: the dataset's role]
    #[arg(long)]
    pub role: Option<String>,
    /// none, random or null [default: none]
    #[arg(long)]
    pub control: Option<String>,
    /// Also substitute representations when scoring validation data
    #[arg(long)]
    pub control_at_eval: bool,
    /// [default: 512]
    #[arg(long)]
    pub batch_size: Option<usize>,
    /// [default: 0.001]
    #[arg(long)]
    pub learning_rate: Option<f64>,
    /// [default: 1.0]
    #[arg(long)]
    pub clip_norm: Option<f64>,
    /// [default: 30]
    #[arg(long)]
    pub epochs: Option<usize>,
    /// [default: 1024]
    #[arg(long)]
    pub hidden: Option<usize>,
    /// [default: 0.1]
    #[arg(long)]
    pub dropout: Option<f64>,
    /// [default: 54321]
    #[arg(long)]
    pub seed: Option<u64>,
    /// Output checkpoint (SKPM)
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Output per-epoch history JSON
    #[arg(long)]
    pub history: Option<PathBuf>,
}

#[derive(Debug, Clone, Default, Args, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalArgs {
    /// Checkpoint (SKPM)
    #[arg(long)]
    pub model: Option<PathBuf>,
    /// Dataset to score (SKDS)
    #[arg(long)]
    pub dataset: Option<PathBuf>,
    /// Proposition files referenced by the dataset
    #[arg(long)]
    pub props: Vec<PathBuf>,
    /// Training propositions, for the seen/unseen split
    #[arg(long)]
    pub train_props: Vec<PathBuf>,
    #[arg(long)]
    pub reps: Option<PathBuf>,
    #[arg(long)]
    pub prop_emb: Option<PathBuf>,
    #[arg(long)]
    pub synth: bool,
    #[arg(long)]
    pub dialogues: Vec<PathBuf>,
    #[arg(long)]
    pub synth_mode: Option<String>,
    #[arg(long)]
    pub synth_seed: Option<u64>,
    /// Expected task; a checkpoint for another task is an error
    #[arg(long)]
    pub task: Option<String>,
    /// Substitute representations at evaluation: none, random or null [default: none]
    #[arg(long)]
    pub control: Option<String>,
    /// Seed for random substitution [default: 54321]
    #[arg(long)]
    pub seed: Option<u64>,
    /// all or turnN (e.g. turn5) [default: all]
    #[arg(long)]
    pub filter: Option<String>,
    /// Output report JSON
    #[arg(long)]
    pub report: Option<PathBuf>,
    /// Output plain-text summary
    #[arg(long)]
    pub text: Option<PathBuf>,
    /// Output predictions CSV
    #[arg(long)]
    pub predictions: Option<PathBuf>,
    /// Directory for per-dialogue predicted scoreboard CSVs
    #[arg(long)]
    pub scoreboards: Option<PathBuf>,
}

#[derive(Debug, Clone, Default, Args, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ScoreboardArgs {
    /// Checkpoint; without it the gold scoreboards are written
    #[arg(long)]
    pub model: Option<PathBuf>,
    #[arg(long)]
    pub dataset: Option<PathBuf>,
    #[arg(long)]
    pub props: Vec<PathBuf>,
    #[arg(long)]
    pub reps: Option<PathBuf>,
    #[arg(long)]
    pub prop_emb: Option<PathBuf>,
    #[arg(long)]
    pub synth: bool,
    #[arg(long)]
    pub dialogues: Vec<PathBuf>,
    #[arg(long)]
    pub synth_mode: Option<String>,
    #[arg(long)]
    pub synth_seed: Option<u64>,
    /// Task of gold scoreboards [default: tfxps]
    #[arg(long)]
    pub task: Option<String>,
    /// Only this dialogue [default: all in the dataset]
    #[arg(long)]
    pub dialogue: Option<u64>,
    /// Output directory
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Clone, Default, Args, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PermTestArgs {
    /// First predictions CSV
    #[arg(long)]
    pub a: Option<PathBuf>,
    /// Second predictions CSV
    #[arg(long)]
    pub b: Option<PathBuf>,
    /// Gold dataset (SKDS) both files were predicted on
    #[arg(long)]
    pub gold: Option<PathBuf>,
    /// [default: 1000]
    #[arg(long)]
    pub shuffles: Option<usize>,
    /// [default: 0]
    #[arg(long)]
    pub seed: Option<u64>,
    /// Output JSON [default: stdout]
    #[arg(long)]
    pub out: Option<PathBuf>,
}

/// Overlays the flags that were given onto the config-file table.
fn merge<T: Serialize + DeserializeOwned>(cli: &T, file: Option<&toml::Value>) -> Result<T> {
    let cli_value = serde_json::to_value(cli).map_err(|e| Error::json("config", e))?;
    let mut merged = match file {
        Some(v) => serde_json::to_value(v).map_err(|e| Error::json("config", e))?,
        None => Value::Object(Default::default()),
    };
    let (Value::Object(cli_map), Value::Object(out)) = (cli_value, &mut merged) else {
        return Err(Error::Config("config section must be a table".into()));
    };
    for (k, v) in cli_map {
        let given = match &v {
            Value::Null => false,
            Value::Bool(b) => *b,
            Value::Array(a) => !a.is_empty(),
            _ => true,
        };
        if given || !out.contains_key(&k) {
            out.insert(k, v);
        }
    }
    serde_json::from_value(merged).map_err(|e| Error::Config(format!("invalid configuration: {e}")))
}

fn load_config(path: Option<&Path>, command: &str) -> Result<Option<toml::Value>> {
    let Some(path) = path else {
        return Ok(None);
    };
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let table: toml::Table =
        toml::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
    if let Some(k) = table.keys().find(|k| !table[*k].is_table()) {
        return Err(Error::Config(format!(
            "{}: top-level key {k:?}; options belong in a [<subcommand>] table",
            path.display()
        )));
    }
    Ok(table.get(command).cloned())
}

fn required<'a, T>(v: &'a Option<T>, flag: &str) -> Result<&'a T> {
    v.as_ref().ok_or_else(|| Error::Config(format!("--{flag} is required")))
}

fn file_digest(path: &Path) -> Result<String> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    Ok(hex::encode(Sha256::digest(&bytes)))
}

/// Provenance of one command run.
struct Provenance {
    command: &'static str,
    config: Value,
    seeds: BTreeMap<&'static str, u64>,
    inputs: Vec<PathBuf>,
}

impl Provenance {
    fn new<T: Serialize>(command: &'static str, config: &T) -> Result<Self> {
        Ok(Provenance {
            command,
            config: serde_json::to_value(config).map_err(|e| Error::json("config", e))?,
            seeds: BTreeMap::new(),
            inputs: Vec::new(),
        })
    }

    fn seed(mut self, name: &'static str, seed: u64) -> Self {
        self.seeds.insert(name, seed);
        self
    }

    fn input(&mut self, path: &Path) {
        self.inputs.push(path.to_path_buf());
    }

    fn record(&self) -> Result<Value> {
        let config_text = serde_json::to_string(&self.config).map_err(|e| Error::json("config", e))?;
        let inputs = self
            .inputs
            .iter()
            .map(|p| Ok((p.display().to_string(), Value::String(file_digest(p)?))))
            .collect::<Result<serde_json::Map<_, _>>>()?;
        Ok(json!({
            "tool": "scorekeep",
            "version": env!("CARGO_PKG_VERSION"),
            "command": self.command,
            "config": self.config,
            "config_sha256": hex::encode(Sha256::digest(config_text.as_bytes())),
            "seeds": self.seeds,
            "inputs": inputs,
        }))
    }

    /// Writes `<output>.meta.json` next to an output file.
    fn write_for(&self, output: &Path) -> Result<()> {
        let mut name = output.as_os_str().to_owned();
        name.push(".meta.json");
        write_json(Path::new(&name), &self.record()?)
    }
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value).map_err(|e| Error::json(path.display().to_string(), e))?;
    text.push('\n');
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

fn print_json<T: Serialize>(value: &T) -> Result<()> {
    let text = serde_json::to_string_pretty(value).map_err(|e| Error::json("stdout", e))?;
    let mut out = std::io::stdout().lock();
    writeln!(out, "{text}").map_err(|e| Error::io("stdout", e))
}

fn parse_opt<T: std::str::FromStr<Err = Error>>(v: &Option<String>) -> Result<Option<T>> {
    v.as_deref().map(str::parse).transpose()
}

pub fn run(cli: Cli) -> Result<()> {
    let file = load_config(cli.config.as_deref(), cli.command.name())?;
    let file = file.as_ref();
    match &cli.command {
        Command::GenProps(a) => gen_props(&merge(a, file)?),
        Command::BuildDataset(a) => build_dataset(&merge(a, file)?),
        Command::Stats(a) => stats(&merge(a, file)?),
        Command::SynthDialogues(a) => synth_dialogues(&merge(a, file)?),
        Command::SynthEmbed(a) => synth_embed(&merge(a, file)?),
        Command::Train(a) => train_cmd(&merge(a, file)?),
        Command::Eval(a) => eval_cmd(&merge(a, file)?),
        Command::Scoreboard(a) => scoreboard_cmd(&merge(a, file)?),
        Command::PermTest(a) => perm_test(&merge(a, file)?),
    }
}

fn gen_props(a: &GenPropsArgs) -> Result<()> {
    let dialogues_path = required(&a.dialogues, "dialogues")?;
    let out = required(&a.out, "out")?;
    let rate = a.caption_rate.unwrap_or(1.0);
    let seed = a.seed.unwrap_or(0);
    let mut prov = Provenance::new("gen-props", a)?.seed("caption_seed", seed);
    let split = parse_opt::<Split>(&a.split)?;
    let dialogues = load_dialogues(dialogues_path, split)?;
    prov.input(dialogues_path);
    let rules = match &a.rules {
        Some(p) => {
            prov.input(p);
            RuleSet::from_file(p)?
        }
        None => RuleSet::canonical(),
    };
    let mut lexicons = Lexicons::default();
    if let Some(p) = &a.polarity {
        prov.input(p);
        lexicons = lexicons.with_polarity_file(p)?;
    }
    let coref = match &a.coref {
        Some(p) => {
            prov.input(p);
            read_coref(p)?
        }
        None => BTreeMap::new(),
    };
    let pos = match &a.pos {
        Some(p) => {
            prov.input(p);
            read_pos(p)?
        }
        None => BTreeMap::new(),
    };
    let blocklist = match &a.blocklist {
        Some(p) => {
            prov.input(p);
            read_word_list(p)?
        }
        None => BTreeSet::new(),
    };
    let inputs = GenerationInputs {
        rules: &rules,
        lexicons: &lexicons,
        coref: &coref,
        pos: &pos,
        blocklist: &blocklist,
    };
    let generation = generate(&dialogues, &inputs)?;
    let log = generation.log.clone();
    let props = downsample_captions(&generation.into_propositions(), rate, seed)?;
    write_props(out, &props)?;
    prov.write_for(out)?;
    log::info!(
        "{} propositions from {} of {} dialogues",
        props.len(),
        log.dialogues_out,
        log.dialogues_in
    );
    if let Some(p) = &a.log {
        write_json(p, &log)?;
        prov.write_for(p)?;
    }
    Ok(())
}

fn build_dataset(a: &BuildDatasetArgs) -> Result<()> {
    let props_path = required(&a.props, "props")?;
    let dialogues_path = required(&a.dialogues, "dialogues")?;
    let out = required(&a.out, "out")?;
    let seed = a.seed.unwrap_or(0);
    let rate = a.caption_rate.unwrap_or(DEFAULT_CAPTION_RATE);
    let cap = match a.cap.as_deref() {
        None => Some(DEFAULT_CAP_PER_SIDE),
        Some("none") => None,
        Some(s) => Some(
            s.parse()
                .map_err(|_| Error::Config(format!("--cap must be a count or \"none\", got {s:?}")))?,
        ),
    };
    let role = parse_opt::<Role>(&a.role)?.unwrap_or(Role::Answerer);
    let mut prov = Provenance::new("build-dataset", a)?.seed("sampling_seed", seed);
    let dialogues = load_dialogues(dialogues_path, parse_opt(&a.split)?)?;
    let split = dialogues.first().map(|d| d.split).unwrap_or(Split::Train);
    prov.input(dialogues_path);
    prov.input(props_path);
    let ids: BTreeSet<u64> = dialogues.iter().map(|d| d.id).collect();
    let props: Vec<Proposition> = read_props(props_path)?
        .into_iter()
        .filter(|p| ids.contains(&p.dialogue_id))
        .collect();
    let mut props = downsample_captions(&props, rate, seed)?;
    if a.balance.unwrap_or(split == Split::Train) {
        props = balance_truth(&props, cap, seed);
    }
    let datapoints = build_datapoints(&last_turns(&dialogues), &props, role)?;
    write_dataset(out, &datapoints)?;
    prov.write_for(out)?;
    log::info!("{} datapoints over {} propositions", datapoints.len(), props.len());
    if let Some(p) = &a.stats {
        write_json(p, &compute_stats(&props, &datapoints, None))?;
        prov.write_for(p)?;
    }
    Ok(())
}

fn read_all_props(paths: &[PathBuf], prov: &mut Provenance) -> Result<Vec<Proposition>> {
    if paths.is_empty() {
        return Err(Error::Config("--props is required".into()));
    }
    let mut all = Vec::new();
    let mut seen = HashMap::new();
    for p in paths {
        prov.input(p);
        for prop in read_props(p)? {
            if let Some(other) = seen.insert(prop.id, p.clone()) {
                return Err(Error::Consistency(format!(
                    "proposition id {} appears in {} and {}",
                    prop.id,
                    other.display(),
                    p.display()
                )));
            }
            all.push(prop);
        }
    }
    Ok(all)
}

fn stats(a: &StatsArgs) -> Result<()> {
    let dataset = required(&a.dataset, "dataset")?;
    let mut prov = Provenance::new("stats", a)?;
    let all = read_all_props(std::slice::from_ref(required(&a.props, "props")?), &mut prov)?;
    prov.input(dataset);
    let datapoints = read_dataset(dataset)?;
    let used: BTreeSet<u64> = datapoints.iter().map(|d| d.prop_id).collect();
    let props: Vec<Proposition> = all.into_iter().filter(|p| used.contains(&p.id)).collect();
    let stats = compute_stats(&props, &datapoints, a.turn);
    match &a.out {
        Some(p) => {
            write_json(p, &stats)?;
            prov.write_for(p)
        }
        None => print_json(&stats),
    }
}

fn synth_dialogues(a: &SynthDialoguesArgs) -> Result<()> {
    let out = required(&a.out, "out")?;
    let d = SynthCorpusConfig::default();
    let cfg = SynthCorpusConfig {
        dialogues: a.count.unwrap_or(d.dialogues),
        turns: a.turns.unwrap_or(d.turns),
        objects: a.objects.unwrap_or(d.objects),
        seed: a.seed.unwrap_or(d.seed),
        first_id: a.first_id.unwrap_or(d.first_id),
        turn_pools: a.turn_pools.unwrap_or(d.turn_pools),
    };
    let mut corpus = synth_corpus(&cfg)?;
    if let Some(s) = &a.split {
        s.parse::<Split>()?;
        corpus.split = Some(s.clone());
    }
    write_json(out, &corpus)?;
    Provenance::new("synth-dialogues", a)?.seed("corpus_seed", cfg.seed).write_for(out)
}

fn synth_mode(v: &Option<String>) -> Result<SynthMode> {
    Ok(parse_opt::<SynthMode>(v)?.unwrap_or(SynthMode::Cumulative))
}

fn read_all_dialogues(paths: &[PathBuf], prov: &mut Provenance) -> Result<Vec<Dialogue>> {
    let mut all = Vec::new();
    for p in paths {
        prov.input(p);
        all.extend(load_dialogues(p, None)?);
    }
    Ok(all)
}

fn synth_embed(a: &SynthEmbedArgs) -> Result<()> {
    let reps_out = required(&a.reps_out, "reps-out")?;
    let emb_out = required(&a.prop_emb_out, "prop-emb-out")?;
    let seed = a.seed.unwrap_or(0);
    let mode = synth_mode(&a.mode)?;
    let mut prov = Provenance::new("synth-embed", a)?.seed("embedding_seed", seed);
    let dialogues = read_all_dialogues(&a.dialogues, &mut prov)?;
    let props = read_all_props(&a.props, &mut prov)?;
    let reps = synth_rep_store(&dialogues, &[Role::Answerer, Role::Questioner], REP_DIM, seed, mode)?;
    let embs = synth_prop_store(props.iter().map(|p| p.surface.as_slice()), PROP_DIM, seed)?;
    reps.write(reps_out)?;
    prov.write_for(reps_out)?;
    embs.write(emb_out)?;
    prov.write_for(emb_out)
}

/// Where a command gets its vectors from.
struct StoreSource<'a> {
    reps: &'a Option<PathBuf>,
    prop_emb: &'a Option<PathBuf>,
    synth: bool,
    dialogues: &'a [PathBuf],
    synth_mode: &'a Option<String>,
    synth_seed: Option<u64>,
}

impl StoreSource<'_> {
    fn load(&self, props: &[Proposition], prov: &mut Provenance) -> Result<(VectorStore, VectorStore)> {
        if self.synth {
            if self.dialogues.is_empty() {
                return Err(Error::Config("--synth needs --dialogues".into()));
            }
            let seed = self.synth_seed.unwrap_or(0);
            prov.seeds.insert("synth_seed", seed);
            let dialogues = read_all_dialogues(self.dialogues, prov)?;
            let mode = synth_mode(self.synth_mode)?;
            let reps = synth_rep_store(&dialogues, &[Role::Answerer, Role::Questioner], REP_DIM, seed, mode)?;
            let embs = synth_prop_store(props.iter().map(|p| p.surface.as_slice()), PROP_DIM, seed)?;
            return Ok((reps, embs));
        }
        let reps_path = required(self.reps, "reps")?;
        let emb_path = required(self.prop_emb, "prop-emb")?;
        prov.input(reps_path);
        prov.input(emb_path);
        Ok((
            VectorStore::read(reps_path, Some(REP_DIM))?,
            VectorStore::read(emb_path, Some(PROP_DIM))?,
        ))
    }
}

fn dataset_role(datapoints: &[Datapoint], path: &Path) -> Result<Role> {
    let roles: BTreeSet<u8> = datapoints.iter().map(|d| d.role.code()).collect();
    match roles.len() {
        0 => Err(Error::EmptySubset(format!("{} has no datapoints", path.display()))),
        1 => Ok(Role::from_code(*roles.first().expect("one role")).expect("valid code")),
        _ => Err(Error::Consistency(format!("{} mixes roles", path.display()))),
    }
}

fn train_cmd(a: &TrainArgs) -> Result<()> {
    let train_path = required(&a.train, "train")?;
    let valid_path = required(&a.valid, "valid")?;
    let out = required(&a.out, "out")?;
    let train_dps = read_dataset(train_path)?;
    let valid_dps = read_dataset(valid_path)?;
    let data_role = dataset_role(&train_dps, train_path)?;
    if dataset_role(&valid_dps, valid_path)? != data_role {
        return Err(Error::Consistency("training and validation roles differ".into()));
    }
    let d = TrainConfig::default();
    let cfg = TrainConfig {
        task: parse_opt(&a.task)?.unwrap_or(d.task),
        role: parse_opt(&a.role)?.unwrap_or(data_role),
        batch_size: a.batch_size.unwrap_or(d.batch_size),
        learning_rate: a.learning_rate.unwrap_or(d.learning_rate),
        clip_norm: a.clip_norm.unwrap_or(d.clip_norm),
        max_epochs: a.epochs.unwrap_or(d.max_epochs),
        seed: a.seed.unwrap_or(d.seed),
        hidden: a.hidden.unwrap_or(d.hidden),
        dropout: a.dropout.unwrap_or(d.dropout),
        control: parse_opt(&a.control)?.unwrap_or(d.control),
        control_at_eval: a.control_at_eval,
    };
    cfg.validate()?;
    if cfg.role != data_role {
        return Err(Error::Config(format!(
            "--role {} but the dataset holds {} datapoints",
            cfg.role.tag(),
            data_role.tag()
        )));
    }
    let mut prov = Provenance::new("train", a)?.seed("train_seed", cfg.seed);
    prov.config["probe"] = serde_json::to_value(&cfg).map_err(|e| Error::json("config", e))?;
    prov.input(train_path);
    prov.input(valid_path);
    let props = read_all_props(&a.props, &mut prov)?;
    let source = StoreSource {
        reps: &a.reps,
        prop_emb: &a.prop_emb,
        synth: a.synth,
        dialogues: &a.dialogues,
        synth_mode: &a.synth_mode,
        synth_seed: a.synth_seed,
    };
    let (reps, embs) = source.load(&props, &mut prov)?;
    let train_data = ProbeData::resolve(&train_dps, &props, &reps, &embs, cfg.task)?;
    let valid_data = ProbeData::resolve(&valid_dps, &props, &reps, &embs, cfg.task)?;
    let n = cfg.task.n_labels();
    let params = cfg.hidden * (REP_DIM + PROP_DIM) + cfg.hidden + n * cfg.hidden + n;
    log::info!("{}-label probe, {params} trainable parameters", n);
    match cfg.control {
        Control::None => {}
        Control::NullR => log::info!("control: representations replaced by zero vectors during training"),
        Control::RandomR => log::info!("control: representations replaced by uniform random vectors during training"),
    }
    let (model, history) = train(&train_data, &valid_data, &cfg)?;
    save_checkpoint(&model, out)?;
    prov.write_for(out)?;
    if let Some(p) = &a.history {
        write_json(p, &history)?;
        prov.write_for(p)?;
    }
    log::info!(
        "best epoch {} with validation accuracy {:.4}",
        history.best_epoch,
        history.best_valid_accuracy
    );
    Ok(())
}

enum TurnFilter {
    All,
    Turn(usize),
}

fn parse_filter(v: &Option<String>) -> Result<TurnFilter> {
    match v.as_deref() {
        None | Some("all") => Ok(TurnFilter::All),
        Some(s) => s
            .strip_prefix("turn")
            .and_then(|t| t.parse().ok())
            .map(TurnFilter::Turn)
            .ok_or_else(|| Error::Config(format!("--filter must be \"all\" or \"turnN\", got {s:?}"))),
    }
}

fn load_model(path: &Path, task: &Option<String>, prov: &mut Provenance) -> Result<ProbeModel> {
    prov.input(path);
    let model = load_checkpoint(path)?;
    if let Some(t) = parse_opt::<TaskVariant>(task)? {
        if t != model.task {
            return Err(Error::Config(format!(
                "checkpoint is a {} probe, --task asks for {t}",
                model.task
            )));
        }
    }
    Ok(model)
}

/// Datapoints grouped per dialogue, in first-appearance order.
fn dialogue_groups(datapoints: &[Datapoint]) -> Vec<(u64, Vec<usize>)> {
    let mut order: Vec<(u64, Vec<usize>)> = Vec::new();
    let mut index: HashMap<u64, usize> = HashMap::new();
    for (i, dp) in datapoints.iter().enumerate() {
        let slot = *index.entry(dp.dialogue_id).or_insert_with(|| {
            order.push((dp.dialogue_id, Vec::new()));
            order.len() - 1
        });
        order[slot].1.push(i);
    }
    order
}

/// Gold board and column order of one dialogue's datapoints.
fn gold_board(
    id: u64,
    rows: &[usize],
    datapoints: &[Datapoint],
    by_id: &HashMap<u64, &Proposition>,
    role: Role,
) -> Result<(Vec<Proposition>, crate::model::Scoreboard)> {
    let last = rows.iter().map(|&i| datapoints[i].turn).max().expect("non-empty group");
    let mut cols: Vec<u64> = Vec::new();
    for &i in rows {
        if !cols.contains(&datapoints[i].prop_id) {
            cols.push(datapoints[i].prop_id);
        }
    }
    let props = cols
        .iter()
        .map(|pid| {
            by_id
                .get(pid)
                .map(|p| (*p).clone())
                .ok_or_else(|| Error::Consistency(format!("unknown proposition {pid}")))
        })
        .collect::<Result<Vec<_>>>()?;
    let gold = build_scoreboard_rows(id, last, &props, role)?;
    Ok((props, gold))
}

fn surfaces(props: &[Proposition]) -> Vec<String> {
    props.iter().map(|p| render(&p.surface)).collect()
}

fn eval_cmd(a: &EvalArgs) -> Result<()> {
    let dataset_path = required(&a.dataset, "dataset")?;
    let model_path = required(&a.model, "model")?;
    let filter = parse_filter(&a.filter)?;
    let control = parse_opt::<Control>(&a.control)?.unwrap_or(Control::None);
    let seed = a.seed.unwrap_or(TrainConfig::default().seed);
    let mut prov = Provenance::new("eval", a)?.seed("eval_seed", seed);
    let model = load_model(model_path, &a.task, &mut prov)?;
    prov.input(dataset_path);
    let datapoints = read_dataset(dataset_path)?;
    let role = dataset_role(&datapoints, dataset_path)?;
    if role != model.role {
        return Err(Error::Config(format!(
            "checkpoint was trained for role {}, dataset holds role {}",
            model.role.tag(),
            role.tag()
        )));
    }
    let props = read_all_props(&a.props, &mut prov)?;
    let mut train_surfaces: BTreeSet<Tokens> = BTreeSet::new();
    for p in &a.train_props {
        prov.input(p);
        train_surfaces.extend(read_props(p)?.into_iter().map(|p| p.surface));
    }
    let source = StoreSource {
        reps: &a.reps,
        prop_emb: &a.prop_emb,
        synth: a.synth,
        dialogues: &a.dialogues,
        synth_mode: &a.synth_mode,
        synth_seed: a.synth_seed,
    };
    let (reps, embs) = source.load(&props, &mut prov)?;
    let data = ProbeData::resolve(&datapoints, &props, &reps, &embs, model.task)?;
    let preds = predict(&model, &data, control, seed)?;

    let by_id: HashMap<u64, &Proposition> = props.iter().map(|p| (p.id, p)).collect();
    let mut counts = ConsistencyCounts::default();
    if let Some(dir) = &a.scoreboards {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    for (id, rows) in dialogue_groups(&datapoints) {
        let (board_props, gold) = gold_board(id, &rows, &datapoints, &by_id, role)?;
        let dps: Vec<Datapoint> = rows.iter().map(|&i| datapoints[i]).collect();
        let p: Vec<usize> = rows.iter().map(|&i| preds[i]).collect();
        let ids: Vec<u64> = board_props.iter().map(|p| p.id).collect();
        let pred = PredictedScoreboard::from_predictions(id, role, model.task, &ids, gold.n_rows() - 1, &dps, &p)?;
        counts.add(consistency(&pred, &gold)?);
        if let Some(dir) = &a.scoreboards {
            let path = dir.join(format!("d{id}_{}.csv", role.tag()));
            write_scoreboard_csv(&path, &pred, &surfaces(&board_props))?;
        }
    }
    let metrics = counts.metrics(model.task)?;

    let keep: Vec<usize> = match filter {
        TurnFilter::All => (0..datapoints.len()).collect(),
        TurnFilter::Turn(t) => (0..datapoints.len()).filter(|&i| datapoints[i].turn == t).collect(),
    };
    if keep.is_empty() {
        return Err(Error::EmptySubset("no datapoints pass the turn filter".into()));
    }
    let kept_dps: Vec<Datapoint> = keep.iter().map(|&i| datapoints[i]).collect();
    let kept_preds: Vec<usize> = keep.iter().map(|&i| preds[i]).collect();
    let report = build_report(
        model.task,
        role,
        &kept_dps,
        &kept_preds,
        &props,
        &train_surfaces,
        Some(metrics),
    )?;
    log::info!(
        "accuracy {:.4}, turn-{REPORT_TURN} accuracy {}",
        report.accuracy,
        report.turn5_accuracy.map_or("n/a".into(), |x| format!("{x:.4}"))
    );
    match &a.report {
        Some(p) => {
            write_json(p, &report)?;
            prov.write_for(p)?;
        }
        None => print_json(&report)?,
    }
    if let Some(p) = &a.text {
        fs::write(p, render_report(&report)).map_err(|e| Error::io(p, e))?;
        prov.write_for(p)?;
    }
    if let Some(p) = &a.predictions {
        write_predictions(p, model.task, &datapoints, &preds)?;
        prov.write_for(p)?;
    }
    Ok(())
}

fn scoreboard_cmd(a: &ScoreboardArgs) -> Result<()> {
    let dataset_path = required(&a.dataset, "dataset")?;
    let dir = required(&a.out, "out")?;
    let mut prov = Provenance::new("scoreboard", a)?;
    prov.input(dataset_path);
    let datapoints = read_dataset(dataset_path)?;
    let role = dataset_role(&datapoints, dataset_path)?;
    let props = read_all_props(&a.props, &mut prov)?;
    let by_id: HashMap<u64, &Proposition> = props.iter().map(|p| (p.id, p)).collect();
    let model = match &a.model {
        Some(p) => Some(load_model(p, &a.task, &mut prov)?),
        None => None,
    };
    let stores = match &model {
        Some(_) => Some(
            StoreSource {
                reps: &a.reps,
                prop_emb: &a.prop_emb,
                synth: a.synth,
                dialogues: &a.dialogues,
                synth_mode: &a.synth_mode,
                synth_seed: a.synth_seed,
            }
            .load(&props, &mut prov)?,
        ),
        None => None,
    };
    let task = match &model {
        Some(m) => m.task,
        None => parse_opt(&a.task)?.unwrap_or(TaskVariant::TFxPS),
    };
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let mut written = 0;
    for (id, rows) in dialogue_groups(&datapoints) {
        if a.dialogue.is_some_and(|d| d != id) {
            continue;
        }
        let (board_props, gold) = gold_board(id, &rows, &datapoints, &by_id, role)?;
        let board = match (&model, &stores) {
            (Some(m), Some((reps, embs))) => crate::eval::reconstruct_scoreboard(
                m,
                id,
                gold.n_rows() - 1,
                &board_props,
                reps,
                embs,
                Control::None,
                0,
            )?,
            _ => PredictedScoreboard::from_gold(&gold, task),
        };
        let path = dir.join(format!("d{id}_{}.csv", role.tag()));
        write_scoreboard_csv(&path, &board, &surfaces(&board_props))?;
        prov.write_for(&path)?;
        written += 1;
    }
    if written == 0 {
        return Err(Error::EmptySubset("no scoreboard matched".into()));
    }
    Ok(())
}

fn perm_test(a: &PermTestArgs) -> Result<()> {
    let a_path = required(&a.a, "a")?;
    let b_path = required(&a.b, "b")?;
    let gold_path = required(&a.gold, "gold")?;
    let shuffles = a.shuffles.unwrap_or(1000);
    let seed = a.seed.unwrap_or(0);
    if shuffles == 0 {
        return Err(Error::Config("--shuffles must be positive".into()));
    }
    let mut prov = Provenance::new("perm-test", a)?.seed("permutation_seed", seed);
    for p in [a_path, b_path, gold_path] {
        prov.input(p);
    }
    let gold = read_dataset(gold_path)?;
    let ca = correctness(&read_predictions(a_path)?, &gold)?;
    let cb = correctness(&read_predictions(b_path)?, &gold)?;
    let result = permutation_test(&ca, &cb, shuffles, seed)?;
    match &a.out {
        Some(p) => {
            write_json(p, &result)?;
            prov.write_for(p)
        }
        None => print_json(&result),
    }
}
