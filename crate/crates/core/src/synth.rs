//! Synthetic dialogue corpora and the self-contained experiment pipeline built
//! on them: corpus → propositions → datapoints → synthetic vector stores.

use std::collections::{BTreeMap, BTreeSet};

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::dataset::{balance_truth, build_datapoints, downsample_captions, last_turns, Datapoint};
use crate::embed::{synth_prop_store, synth_rep_store, SynthMode, VectorStore, PROP_DIM, REP_DIM};
use crate::error::{Error, Result};
use crate::model::{Dialogue, Proposition, Role, Split, MAX_TURNS};
use crate::propgen::input::{RawCorpus, RawDialogue, RawTurn};
use crate::propgen::lexicon::{Lexicons, COLORS};
use crate::propgen::rules::RuleSet;
use crate::propgen::{generate, GenerationInputs};

pub const OBJECTS: &[&str] = &[
    "dog", "cat", "horse", "cow", "sheep", "bird", "car", "bus", "truck", "bicycle", "boat", "train",
    "bench", "chair", "table", "couch", "bed", "lamp", "clock", "vase", "book", "cup", "bowl", "bottle",
    "plate", "laptop", "phone", "umbrella", "kite", "ball", "tree", "fence", "window", "door", "sign",
    "pizza", "cake", "banana", "apple", "sandwich",
];

const ATTRIBUTES: &[&str] = &["big", "small", "old", "new", "clean", "dirty", "wet", "wooden", "broken", "shiny"];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthCorpusConfig {
    pub dialogues: usize,
    /// QA turns per dialogue, at most 10
    pub turns: usize,
    /// size of the object vocabulary drawn from
    pub objects: usize,
    pub seed: u64,
    pub first_id: u64,
    /// Draw the caption's objects and each turn's object from disjoint
    /// position-specific pools, so a proposition's content identifies its
    /// source turn.
    pub turn_pools: bool,
}

impl Default for SynthCorpusConfig {
    fn default() -> Self {
        SynthCorpusConfig {
            dialogues: 100,
            turns: MAX_TURNS,
            objects: OBJECTS.len(),
            seed: 7,
            first_id: 1,
            turn_pools: false,
        }
    }
}

fn yes_no(rng: &mut impl Rng) -> &'static str {
    if rng.gen_bool(0.5) {
        "yes"
    } else {
        "no"
    }
}

/// Dialogues whose every turn asks about a different object, so each
/// proposition's content words enter the dialogue at exactly one turn.
pub fn synth_corpus(cfg: &SynthCorpusConfig) -> Result<RawCorpus> {
    if cfg.turns == 0 || cfg.turns > MAX_TURNS {
        return Err(Error::Config(format!("synthetic dialogues need 1..={MAX_TURNS} turns")));
    }
    if cfg.objects < cfg.turns + 2 || cfg.objects > OBJECTS.len() {
        return Err(Error::Config(format!(
            "object vocabulary must lie in {}..={}",
            cfg.turns + 2,
            OBJECTS.len()
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let pool = &OBJECTS[..cfg.objects];
    // pool 0 feeds the caption, pool k the k-th turn
    let pools: Vec<&[&str]> = if cfg.turn_pools {
        let n = cfg.turns + 1;
        (0..n).map(|k| &pool[k * pool.len() / n..(k + 1) * pool.len() / n]).collect()
    } else {
        Vec::new()
    };
    if cfg.turn_pools && pools[0].len() < 2 {
        return Err(Error::Config("object vocabulary too small for per-turn pools".into()));
    }
    let dialogs = (0..cfg.dialogues as u64)
        .map(|i| {
            let picked: Vec<&str> = if cfg.turn_pools {
                let mut v: Vec<&str> = pools[0].choose_multiple(&mut rng, 2).copied().collect();
                v.extend(pools[1..].iter().map(|p| *p.choose(&mut rng).expect("non-empty pool")));
                v
            } else {
                pool.choose_multiple(&mut rng, cfg.turns + 2).copied().collect()
            };
            let caption = format!("a {} next to a {}.", picked[0], picked[1]);
            let dialog = picked[2..]
                .iter()
                .map(|o| {
                    let (question, answer) = match rng.gen_range(0..4) {
                        0 => (format!("is there a {o}?"), yes_no(&mut rng).to_string()),
                        1 => (format!("do you see a {o}?"), yes_no(&mut rng).to_string()),
                        2 => (
                            format!("what color is the {o}?"),
                            COLORS.choose(&mut rng).expect("colors").to_string(),
                        ),
                        _ => (
                            format!("is the {o} {}?", ATTRIBUTES.choose(&mut rng).expect("attributes")),
                            yes_no(&mut rng).to_string(),
                        ),
                    };
                    RawTurn { question, answer }
                })
                .collect();
            let id = cfg.first_id + i;
            RawDialogue {
                id,
                image_id: id,
                caption,
                dialog,
            }
        })
        .collect();
    Ok(RawCorpus {
        split: None,
        dialogs,
    })
}

pub fn synth_dialogues(cfg: &SynthCorpusConfig, split: Split) -> Result<Vec<Dialogue>> {
    synth_corpus(cfg)?.dialogs.iter().map(|d| d.tokenize(split)).collect()
}

/// Propositions and datapoints of one split.
#[derive(Debug, Clone)]
pub struct PreparedSplit {
    pub dialogues: Vec<Dialogue>,
    pub props: Vec<Proposition>,
    pub datapoints: Vec<Datapoint>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PrepareOptions {
    pub caption_rate: f64,
    /// `Some(cap)` applies truth balancing with that cap per side
    pub balance: Option<Option<usize>>,
    pub seed: u64,
    pub role: Role,
}

/// Runs the canonical rules over `dialogues` and expands the result into datapoints.
pub fn prepare_split(dialogues: Vec<Dialogue>, opts: &PrepareOptions) -> Result<PreparedSplit> {
    let rules = RuleSet::canonical();
    let lexicons = Lexicons::default();
    let inputs = GenerationInputs {
        rules: &rules,
        lexicons: &lexicons,
        coref: &BTreeMap::new(),
        pos: &BTreeMap::new(),
        blocklist: &BTreeSet::new(),
    };
    let props = generate(&dialogues, &inputs)?.into_propositions();
    let mut props = downsample_captions(&props, opts.caption_rate, opts.seed)?;
    if let Some(cap) = opts.balance {
        props = balance_truth(&props, cap, opts.seed);
    }
    let datapoints = build_datapoints(&last_turns(&dialogues), &props, opts.role)?;
    Ok(PreparedSplit {
        dialogues,
        props,
        datapoints,
    })
}

/// Representation and proposition stores covering the given splits.
pub fn synth_stores(splits: &[&PreparedSplit], mode: SynthMode, seed: u64) -> Result<(VectorStore, VectorStore)> {
    let dialogues: Vec<Dialogue> = splits.iter().flat_map(|s| s.dialogues.iter().cloned()).collect();
    let reps = synth_rep_store(&dialogues, &[Role::Answerer, Role::Questioner], REP_DIM, seed, mode)?;
    let embs = synth_prop_store(
        splits.iter().flat_map(|s| s.props.iter().map(|p| p.surface.as_slice())),
        PROP_DIM,
        seed,
    )?;
    Ok((reps, embs))
}
