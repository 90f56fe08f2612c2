//! Dialogue JSON loading.
//!
//! Two layouts are accepted. Inline:
//!
//! ```json
//! {"dialogs": [{"id": 1, "image_id": 9, "caption": "...",
//!               "dialog": [{"question": "...", "answer": "..."}]}]}
//! ```
//!
//! and the pooled VisDial layout, where `question`/`answer` are indices into
//! top-level `questions`/`answers` arrays (optionally wrapped in `data`). A
//! missing `id` falls back to `image_id`. A round without an answer ends the
//! dialogue.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::error::{Error, Result};
use crate::model::{Dialogue, Split};

use super::tokenize;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RawTurn {
    pub question: String,
    pub answer: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RawDialogue {
    pub id: u64,
    pub image_id: u64,
    pub caption: String,
    pub dialog: Vec<RawTurn>,
}

/// The inline file layout, also used when writing corpora.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct RawCorpus {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub split: Option<String>,
    pub dialogs: Vec<RawDialogue>,
}

impl RawDialogue {
    pub fn tokenize(&self, split: Split) -> Result<Dialogue> {
        let qa = self
            .dialog
            .iter()
            .map(|t| (tokenize(&t.question), tokenize(&t.answer)))
            .collect();
        Dialogue::new(self.id, self.image_id, tokenize(&self.caption), qa, split)
    }
}

fn fmt_err(path: &Path, msg: impl std::fmt::Display) -> Error {
    Error::Format(format!("{}: {msg}", path.display()))
}

fn as_u64(v: &Value, what: &str, path: &Path) -> Result<u64> {
    v.as_u64()
        .ok_or_else(|| fmt_err(path, format!("{what} must be a non-negative integer")))
}

fn text_or_index(v: &Value, pool: Option<&Vec<Value>>, what: &str, path: &Path) -> Result<String> {
    match v {
        Value::String(s) => Ok(s.clone()),
        Value::Number(n) => {
            let idx = n
                .as_u64()
                .ok_or_else(|| fmt_err(path, format!("{what} index must be an integer")))?;
            let pool = pool.ok_or_else(|| fmt_err(path, format!("{what} index without a pool")))?;
            pool.get(idx as usize)
                .and_then(Value::as_str)
                .map(str::to_string)
                .ok_or_else(|| fmt_err(path, format!("{what} index {idx} out of range")))
        }
        _ => Err(fmt_err(path, format!("{what} must be a string or an index"))),
    }
}

/// Parses either layout into the inline one.
pub fn parse_corpus(text: &str, path: &Path) -> Result<RawCorpus> {
    let root: Value =
        serde_json::from_str(text).map_err(|e| Error::json(path.display().to_string(), e))?;
    let split = root.get("split").and_then(Value::as_str).map(str::to_string);
    let body = root.get("data").unwrap_or(&root);
    let questions = body.get("questions").and_then(Value::as_array);
    let answers = body.get("answers").and_then(Value::as_array);
    let dialogs = body
        .get("dialogs")
        .and_then(Value::as_array)
        .ok_or_else(|| fmt_err(path, "missing \"dialogs\" array"))?;

    let mut out = Vec::with_capacity(dialogs.len());
    for (i, d) in dialogs.iter().enumerate() {
        let image_id = as_u64(d.get("image_id").unwrap_or(&Value::Null), "image_id", path)?;
        let id = match d.get("id") {
            Some(v) => as_u64(v, "id", path)?,
            None => image_id,
        };
        let caption = d
            .get("caption")
            .and_then(Value::as_str)
            .ok_or_else(|| fmt_err(path, format!("dialog {i}: missing caption")))?
            .to_string();
        let rounds = d
            .get("dialog")
            .and_then(Value::as_array)
            .ok_or_else(|| fmt_err(path, format!("dialog {i}: missing \"dialog\" array")))?;
        let mut turns = Vec::new();
        for r in rounds {
            let (Some(q), Some(a)) = (r.get("question"), r.get("answer")) else {
                break;
            };
            turns.push(RawTurn {
                question: text_or_index(q, questions, "question", path)?,
                answer: text_or_index(a, answers, "answer", path)?,
            });
        }
        out.push(RawDialogue {
            id,
            image_id,
            caption,
            dialog: turns,
        });
    }
    Ok(RawCorpus {
        split,
        dialogs: out,
    })
}

/// Loads and tokenizes a dialogue file. `split` overrides the file's own split.
pub fn load_dialogues(path: &Path, split: Option<Split>) -> Result<Vec<Dialogue>> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let corpus = parse_corpus(&text, path)?;
    let split = match (split, corpus.split.as_deref()) {
        (Some(s), _) => s,
        (None, Some(s)) => s.parse()?,
        (None, None) => Split::Train,
    };
    let dialogues = corpus
        .dialogs
        .iter()
        .map(|d| d.tokenize(split))
        .collect::<Result<Vec<_>>>()?;
    let mut seen = std::collections::BTreeSet::new();
    for d in &dialogues {
        if !seen.insert(d.id) {
            return Err(fmt_err(path, format!("duplicate dialogue id {}", d.id)));
        }
    }
    Ok(dialogues)
}
