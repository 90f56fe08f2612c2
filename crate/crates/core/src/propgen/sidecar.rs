//! Coreference and POS sidecars, and pronoun replacement.
//!
//! Mentions address tokens by `(turn, start, end)` with `end` exclusive. Turn 0
//! is the caption; for turn `i >= 1` the token positions run over the question
//! followed by the answer.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufRead, BufReader};
use std::path::Path;

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{Dialogue, Tokens};

use super::lexicon::{is_pronoun, POSSESSIVE_PRONOUNS};

/// Entities longer than this are never substituted for a pronoun.
pub const MAX_ENTITY_TOKENS: usize = 5;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Mention(pub usize, pub usize, pub usize);

impl Mention {
    pub fn turn(self) -> usize {
        self.0
    }
    pub fn start(self) -> usize {
        self.1
    }
    pub fn end(self) -> usize {
        self.2
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CorefSidecar {
    pub dialogue_id: u64,
    /// Each cluster lists its mentions in document order; the first is the entity.
    pub clusters: Vec<Vec<Mention>>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum PosTag {
    #[serde(rename = "NOUN")]
    Noun,
    #[serde(rename = "ADJ")]
    Adj,
    #[serde(rename = "OTHER")]
    Other,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PosSidecar {
    pub dialogue_id: u64,
    /// Tags per turn, aligned with [`Dialogue::turn_tokens`].
    pub tags: Vec<Vec<PosTag>>,
}

impl PosSidecar {
    pub fn caption_tags(&self, dialogue: &Dialogue) -> Result<Option<&[PosTag]>> {
        let Some(tags) = self.tags.first() else {
            return Ok(None);
        };
        if tags.len() != dialogue.caption.len() {
            return Err(Error::Sidecar {
                dialogue_id: self.dialogue_id,
                message: format!(
                    "caption has {} tokens but {} POS tags",
                    dialogue.caption.len(),
                    tags.len()
                ),
            });
        }
        Ok(Some(tags))
    }
}

/// Reads a JSON-lines sidecar keyed by dialogue id.
pub fn read_sidecars<T: DeserializeOwned>(
    path: &Path,
    id_of: impl Fn(&T) -> u64,
) -> Result<BTreeMap<u64, T>> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut out = BTreeMap::new();
    for (n, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let item: T = serde_json::from_str(&line)
            .map_err(|e| Error::json(format!("{} line {}", path.display(), n + 1), e))?;
        out.insert(id_of(&item), item);
    }
    Ok(out)
}

pub fn read_coref(path: &Path) -> Result<BTreeMap<u64, CorefSidecar>> {
    read_sidecars(path, |c: &CorefSidecar| c.dialogue_id)
}

pub fn read_pos(path: &Path) -> Result<BTreeMap<u64, PosSidecar>> {
    read_sidecars(path, |c: &PosSidecar| c.dialogue_id)
}

fn turn_len(d: &Dialogue, turn: usize) -> Option<usize> {
    match turn {
        0 => Some(d.caption.len()),
        i if i <= d.turns.len() => {
            let t = &d.turns[i - 1];
            Some(t.question.len() + t.answer.len())
        }
        _ => None,
    }
}

fn mention_tokens(d: &Dialogue, m: Mention) -> Result<Tokens> {
    let len = turn_len(d, m.turn()).ok_or_else(|| Error::Sidecar {
        dialogue_id: d.id,
        message: format!("mention refers to missing turn {}", m.turn()),
    })?;
    if m.start() >= m.end() || m.end() > len {
        return Err(Error::Sidecar {
            dialogue_id: d.id,
            message: format!(
                "span {}..{} outside turn {} of {len} tokens",
                m.start(),
                m.end(),
                m.turn()
            ),
        });
    }
    Ok(d.turn_tokens(m.turn())[m.start()..m.end()]
        .iter()
        .map(|s| s.to_string())
        .collect())
}

/// Replaces clustered pronouns by the first mention of their cluster.
///
/// Returns the rewritten dialogue and the number of replacements.
pub fn replace_pronouns(dialogue: &Dialogue, coref: Option<&CorefSidecar>) -> Result<(Dialogue, usize)> {
    let Some(coref) = coref else {
        return Ok((dialogue.clone(), 0));
    };
    if coref.dialogue_id != dialogue.id {
        return Err(Error::Sidecar {
            dialogue_id: dialogue.id,
            message: format!("sidecar belongs to dialogue {}", coref.dialogue_id),
        });
    }
    // turn -> [(start, replacement)]
    let mut edits: BTreeMap<usize, Vec<(usize, Tokens)>> = BTreeMap::new();
    for cluster in &coref.clusters {
        let Some((&first, rest)) = cluster.split_first() else {
            continue;
        };
        let entity = mention_tokens(dialogue, first)?;
        for &m in rest {
            let tokens = mention_tokens(dialogue, m)?;
            if entity.len() > MAX_ENTITY_TOKENS || entity.iter().all(|t| is_pronoun(t)) {
                continue;
            }
            if tokens.len() != 1 || !is_pronoun(&tokens[0]) {
                continue;
            }
            let mut replacement = entity.clone();
            if POSSESSIVE_PRONOUNS.contains(&tokens[0].as_str()) {
                if let Some(last) = replacement.last_mut() {
                    last.push_str("'s");
                }
            }
            edits.entry(m.turn()).or_default().push((m.start(), replacement));
        }
    }

    let mut out = dialogue.clone();
    let mut count = 0;
    for (turn, mut list) in edits {
        list.sort_by_key(|e| std::cmp::Reverse(e.0));
        list.dedup_by_key(|e| e.0);
        for (start, replacement) in list {
            count += 1;
            if turn == 0 {
                out.caption.splice(start..start + 1, replacement);
            } else {
                let t = &mut out.turns[turn - 1];
                let qlen = t.question.len();
                if start < qlen {
                    t.question.splice(start..start + 1, replacement);
                } else {
                    t.answer.splice(start - qlen..start - qlen + 1, replacement);
                }
            }
        }
    }
    Ok((out, count))
}
