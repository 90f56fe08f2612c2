//! Proposition generation from captions and question/answer pairs.
//!
//! Pipeline per dialogue: blocklist filter, pronoun replacement, caption
//! propositions, rule matching on every turn, proposition filter. Dialogues
//! left without propositions are dropped.

pub mod input;
pub mod lexicon;
pub mod rules;
pub mod sidecar;

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{Dialogue, Proposition, QuestionKind, Tokens};

pub use lexicon::{Lexicons, Polarity};
pub use rules::{instantiate, match_rule, Captures, PairOrigin, Rule, RuleSet};
pub use sidecar::{replace_pronouns, CorefSidecar, PosSidecar, PosTag};

/// Longest proposition kept, in tokens (punctuation included).
pub const MAX_PROP_TOKENS: usize = 15;

/// Rule id recorded on caption propositions.
pub const CAPTION_RULE_ID: &str = "caption";

/// Caption chunking without POS tags looks this many tokens past the determiner.
const MAX_CHUNK_MODIFIERS: usize = 3;

const PUNCT: [char; 6] = ['.', ',', '?', '!', ';', ':'];

pub fn is_punct(token: &str) -> bool {
    let mut chars = token.chars();
    matches!((chars.next(), chars.next()), (Some(c), None) if PUNCT.contains(&c))
}

/// Lowercases, splits on whitespace and detaches `. , ? ! ; :` as tokens.
/// Apostrophes stay inside words.
pub fn tokenize(text: &str) -> Tokens {
    let mut out = Vec::new();
    for word in text.split_whitespace() {
        let mut current = String::new();
        for ch in word.chars() {
            if PUNCT.contains(&ch) {
                if !current.is_empty() {
                    out.push(std::mem::take(&mut current));
                }
                out.push(ch.to_string());
            } else {
                current.extend(ch.to_lowercase());
            }
        }
        if !current.is_empty() {
            out.push(current);
        }
    }
    out
}

/// Joins tokens with spaces, attaching punctuation to the preceding word.
pub fn render(tokens: &[String]) -> String {
    let mut out = String::new();
    for t in tokens {
        if !out.is_empty() && !is_punct(t) {
            out.push(' ');
        }
        out.push_str(t);
    }
    out
}

/// Whether a proposition survives the length and pronoun filters. "it" is allowed.
pub fn filter_prop(prop: &Proposition) -> bool {
    prop.surface.len() <= MAX_PROP_TOKENS
        && !prop
            .surface
            .iter()
            .any(|t| t != "it" && lexicon::is_pronoun(t))
}

/// False when any token of the dialogue is on the blocklist (whole-token match).
pub fn filter_dialogue(dialogue: &Dialogue, blocklist: &BTreeSet<String>) -> bool {
    blocklist.is_empty() || !dialogue.all_tokens().any(|t| blocklist.contains(t))
}

/// Noun-phrase chunks `determiner + modifiers + noun` of a caption.
fn caption_chunks(caption: &[String], pos: Option<&[PosTag]>, lex: &Lexicons) -> Vec<Tokens> {
    let mut chunks = Vec::new();
    let mut i = 0;
    while i < caption.len() {
        if !lexicon::DETERMINERS.contains(&caption[i].as_str()) {
            i += 1;
            continue;
        }
        let mut end = None;
        match pos {
            Some(tags) => {
                let mut j = i + 1;
                while j < caption.len() && tags[j] == PosTag::Adj {
                    j += 1;
                }
                if j < caption.len() && tags[j] == PosTag::Noun {
                    end = Some(j + 1);
                }
            }
            None => {
                for j in i + 1..caption.len().min(i + 2 + MAX_CHUNK_MODIFIERS) {
                    let t = caption[j].as_str();
                    if lex.nouns.contains(t) {
                        end = Some(j + 1);
                        break;
                    }
                    if is_punct(t) || lexicon::is_chunk_stopword(t) {
                        break;
                    }
                }
            }
        }
        match end {
            Some(e) => {
                chunks.push(caption[i..e].to_vec());
                i = e;
            }
            None => i += 1,
        }
    }
    chunks
}

/// Caption propositions: `one can see {NP}.` / `one cannot see {NP}.` for every
/// chunk, with source turn 0.
pub fn caption_props(
    caption: &[String],
    pos: Option<&[PosTag]>,
    lex: &Lexicons,
    dialogue_id: u64,
    first_id: u64,
) -> Vec<(Proposition, Proposition)> {
    caption_chunks(caption, pos, lex)
        .into_iter()
        .enumerate()
        .map(|(k, np)| {
            let see = |verb: &str| -> Tokens {
                ["one", verb, "see"]
                    .iter()
                    .map(|s| s.to_string())
                    .chain(np.iter().cloned())
                    .chain(std::iter::once(".".to_string()))
                    .collect()
            };
            rules::make_pair(
                see("can"),
                see("cannot"),
                CAPTION_RULE_ID,
                QuestionKind::Other,
                PairOrigin {
                    dialogue_id,
                    source_turn: 0,
                    first_id: first_id + 2 * k as u64,
                },
            )
        })
        .collect()
}

/// Counters reported next to generated propositions.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct GenerationLog {
    pub dialogues_in: usize,
    pub dialogues_blocked: usize,
    pub dialogues_without_props: usize,
    pub dialogues_out: usize,
    pub pronouns_replaced: usize,
    pub caption_pairs: usize,
    pub captions_without_chunks: usize,
    pub pairs_filtered: usize,
    pub propositions: usize,
    pub rule_hits: BTreeMap<String, usize>,
}

/// Everything [`generate`] reads besides the dialogues.
#[derive(Debug, Clone)]
pub struct GenerationInputs<'a> {
    pub rules: &'a RuleSet,
    pub lexicons: &'a Lexicons,
    pub coref: &'a BTreeMap<u64, CorefSidecar>,
    pub pos: &'a BTreeMap<u64, PosSidecar>,
    pub blocklist: &'a BTreeSet<String>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Generation {
    /// Propositions per dialogue, in input order; dialogues without any are absent.
    pub per_dialogue: Vec<(u64, Vec<Proposition>)>,
    pub log: GenerationLog,
}

impl Generation {
    pub fn propositions(&self) -> impl Iterator<Item = &Proposition> {
        self.per_dialogue.iter().flat_map(|(_, p)| p.iter())
    }

    pub fn into_propositions(self) -> Vec<Proposition> {
        self.per_dialogue.into_iter().flat_map(|(_, p)| p).collect()
    }
}

/// Proposition ids are `dialogue_id * PROP_ID_STRIDE + k`, so files generated
/// separately for disjoint dialogues never collide.
pub const PROP_ID_STRIDE: u64 = 10_000;

/// Runs the full pipeline.
pub fn generate(dialogues: &[Dialogue], inputs: &GenerationInputs<'_>) -> Result<Generation> {
    let mut log = GenerationLog {
        dialogues_in: dialogues.len(),
        ..Default::default()
    };
    let mut per_dialogue = Vec::new();

    for raw in dialogues {
        if !filter_dialogue(raw, inputs.blocklist) {
            log.dialogues_blocked += 1;
            continue;
        }
        let (dialogue, replaced) = replace_pronouns(raw, inputs.coref.get(&raw.id))?;
        log.pronouns_replaced += replaced;

        let mut pairs = Vec::new();
        let pos = match inputs.pos.get(&dialogue.id) {
            Some(sc) => sc.caption_tags(&dialogue)?,
            None => None,
        };
        let captions = caption_props(&dialogue.caption, pos, inputs.lexicons, dialogue.id, 0);
        if captions.is_empty() {
            log.captions_without_chunks += 1;
            log::debug!("dialogue {}: no caption chunk found", dialogue.id);
        }
        log.caption_pairs += captions.len();
        pairs.extend(captions);

        for turn in &dialogue.turns {
            let Some((rule, captures)) =
                inputs
                    .rules
                    .first_match(&turn.question, &turn.answer, inputs.lexicons)
            else {
                continue;
            };
            let origin = PairOrigin {
                dialogue_id: dialogue.id,
                source_turn: turn.index,
                first_id: 0,
            };
            pairs.push(instantiate(rule, &captures, origin, inputs.lexicons)?);
            *log.rule_hits.entry(rule.rule_id.clone()).or_default() += 1;
        }

        let mut next_id = dialogue.id.checked_mul(PROP_ID_STRIDE).ok_or_else(|| {
            Error::Consistency(format!("dialogue id {} too large for proposition ids", dialogue.id))
        })?;
        let mut props = Vec::with_capacity(2 * pairs.len());
        for (mut e, mut c) in pairs {
            if !(filter_prop(&e) && filter_prop(&c)) {
                log.pairs_filtered += 1;
                continue;
            }
            e.id = next_id;
            e.pair_id = next_id;
            c.id = next_id + 1;
            c.pair_id = next_id;
            next_id += 2;
            props.push(e);
            props.push(c);
        }
        if props.is_empty() {
            log.dialogues_without_props += 1;
            continue;
        }
        log.propositions += props.len();
        per_dialogue.push((dialogue.id, props));
    }
    log.dialogues_out = per_dialogue.len();
    Ok(Generation { per_dialogue, log })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{Split, Truth};

    #[test]
    fn tokenizer_examples() {
        assert_eq!(tokenize("Is there tall grass?"), ["is", "there", "tall", "grass", "?"]);
        assert_eq!(tokenize("no it's not."), ["no", "it's", "not", "."]);
        assert!(tokenize("").is_empty());
        assert_eq!(tokenize("yes,i.e. ok"), ["yes", ",", "i", ".", "e", ".", "ok"]);
    }

    #[test]
    fn render_attaches_punctuation() {
        assert_eq!(render(&tokenize("there are no people .")), "there are no people.");
        assert_eq!(render(&[]), "");
    }

    fn prop_with(surface: &str) -> Proposition {
        let mut p = crate::model::tests::prop(1, 1, 1, Truth::TrueToA);
        p.surface = tokenize(surface);
        p
    }

    #[test]
    fn proposition_filter() {
        let long = "a b c d e f g h i j k l m n o";
        assert!(filter_prop(&prop_with(long)));
        assert!(!filter_prop(&prop_with(&format!("{long} p"))));
        assert!(filter_prop(&prop_with("it is sunny.")));
        assert!(!filter_prop(&prop_with("they are playing.")));
        assert!(!filter_prop(&prop_with("its tail is long.")));
    }

    fn dialogue(caption: &str, qa: &[(&str, &str)]) -> Dialogue {
        Dialogue::new(
            3,
            3,
            tokenize(caption),
            qa.iter().map(|(q, a)| (tokenize(q), tokenize(a))).collect(),
            Split::Train,
        )
        .unwrap()
    }

    #[test]
    fn blocklist_is_whole_token() {
        let d = dialogue("a man with a gun.", &[]);
        assert!(filter_dialogue(&d, &BTreeSet::new()));
        let block: BTreeSet<String> = ["gun".to_string()].into();
        assert!(!filter_dialogue(&d, &block));
        let d = dialogue("a man with a gunny sack.", &[]);
        assert!(filter_dialogue(&d, &block));
    }

    #[test]
    fn caption_chunking_fallback() {
        let lex = Lexicons::default();
        let pairs = caption_props(
            &tokenize("a black cat laying in the sun on a green bench."),
            None,
            &lex,
            4,
            0,
        );
        let texts: Vec<_> = pairs
            .iter()
            .map(|(e, c)| (render(&e.surface), render(&c.surface)))
            .collect();
        assert_eq!(texts[0], ("one can see a black cat.".into(), "one cannot see a black cat.".into()));
        assert_eq!(texts.len(), 3);
        assert!(pairs.iter().all(|(e, c)| e.source_turn == 0 && c.pair_id == e.id));
        assert!(caption_props(&tokenize("sitting on grass."), None, &lex, 4, 0).is_empty());
    }

    #[test]
    fn caption_chunking_with_pos() {
        use PosTag::*;
        let lex = Lexicons::default();
        let caption = tokenize("a shiny zorb near the water");
        let tags = [Other, Adj, Noun, Other, Other, Noun];
        let pairs = caption_props(&caption, Some(&tags), &lex, 4, 0);
        let texts: Vec<_> = pairs.iter().map(|(e, _)| render(&e.surface)).collect();
        assert_eq!(texts, ["one can see a shiny zorb.", "one can see the water."]);
    }

    #[test]
    fn unmatched_dialogue_is_dropped() {
        let d = dialogue("sitting on grass.", &[("how old is the man?", "maybe 40.")]);
        let rules = RuleSet::canonical();
        let lex = Lexicons::default();
        let empty = BTreeMap::new();
        let empty_pos = BTreeMap::new();
        let block = BTreeSet::new();
        let inputs = GenerationInputs {
            rules: &rules,
            lexicons: &lex,
            coref: &empty,
            pos: &empty_pos,
            blocklist: &block,
        };
        let g = generate(&[d], &inputs).unwrap();
        assert!(g.per_dialogue.is_empty());
        assert_eq!(g.log.dialogues_without_props, 1);
    }
}
