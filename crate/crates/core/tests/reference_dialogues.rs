//! Proposition generation on four transcribed training dialogues, compared
//! line by line with a hand-checked list of per-turn propositions.

use std::collections::{BTreeMap, BTreeSet};

use scorekeeping::dataset::downsample_captions;
use scorekeeping::model::{Dialogue, Proposition};
use scorekeeping::propgen::input::load_dialogues;
use scorekeeping::propgen::{generate, GenerationInputs, Lexicons, RuleSet};

mod common;
use common::{fixture, transcript};

/// Caption downsampling seed under which the single kept caption pair is the
/// one in the reference list.
const FIXTURE_SEED: u64 = 5;
const FIXTURE_RATE: f64 = 0.15;

fn propositions(seed: u64) -> (Vec<Dialogue>, Vec<Proposition>) {
    let dialogues = load_dialogues(&fixture("reference_dialogues.json"), None).unwrap();
    let rules = RuleSet::canonical();
    let lexicons = Lexicons::default();
    let inputs = GenerationInputs {
        rules: &rules,
        lexicons: &lexicons,
        coref: &BTreeMap::new(),
        pos: &BTreeMap::new(),
        blocklist: &BTreeSet::new(),
    };
    let props = generate(&dialogues, &inputs).unwrap().into_propositions();
    let props = downsample_captions(&props, FIXTURE_RATE, seed).unwrap();
    (dialogues, props)
}

#[test]
fn reference_dialogue_propositions() {
    let expected = std::fs::read_to_string(fixture("reference_propositions.txt")).unwrap();
    let (dialogues, props) = propositions(FIXTURE_SEED);
    let got = transcript(&dialogues, &props);
    for (i, (g, e)) in got.lines().zip(expected.lines()).enumerate() {
        assert_eq!(g, e, "line {}", i + 1);
    }
    assert_eq!(got.lines().count(), expected.lines().count());
}
