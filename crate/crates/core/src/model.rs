//! Dialogue, proposition and scoreboard data model.
//!
//! A proposition established at turn `i` is private to the answerer for every
//! scoreboard row `l < i` and shared from row `i` onwards. Its truth value is
//! fixed for the whole dialogue. Caption propositions (turn 0) are shared in
//! every row.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Maximum number of question/answer turns in a dialogue.
pub const MAX_TURNS: usize = 10;

pub type Tokens = Vec<String>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Valid,
    Test,
}

impl FromStr for Split {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "train" => Ok(Split::Train),
            "valid" | "val" | "validation" => Ok(Split::Valid),
            "test" => Ok(Split::Test),
            other => Err(Error::Config(format!("unknown split {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct QaTurn {
    pub index: usize,
    pub question: Tokens,
    pub answer: Tokens,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Dialogue {
    pub id: u64,
    pub image_id: u64,
    pub caption: Tokens,
    pub turns: Vec<QaTurn>,
    pub split: Split,
}

impl Dialogue {
    /// Builds a dialogue from tokenized caption and QA pairs, numbering turns from 1.
    pub fn new(
        id: u64,
        image_id: u64,
        caption: Tokens,
        qa: Vec<(Tokens, Tokens)>,
        split: Split,
    ) -> Result<Self> {
        if qa.len() > MAX_TURNS {
            return Err(Error::Consistency(format!(
                "dialogue {id} has {} turns, at most {MAX_TURNS} allowed",
                qa.len()
            )));
        }
        if split != Split::Test && !qa.is_empty() && qa.len() != MAX_TURNS {
            log::warn!(
                "dialogue {id} in split {split:?} has {} turns instead of {MAX_TURNS}",
                qa.len()
            );
        }
        let mut turns = Vec::with_capacity(qa.len());
        for (i, (question, answer)) in qa.into_iter().enumerate() {
            if question.is_empty() || answer.is_empty() {
                return Err(Error::Consistency(format!(
                    "dialogue {id} turn {} has an empty question or answer",
                    i + 1
                )));
            }
            turns.push(QaTurn {
                index: i + 1,
                question,
                answer,
            });
        }
        Ok(Dialogue {
            id,
            image_id,
            caption,
            turns,
            split,
        })
    }

    /// Index of the last turn, `T`. Scoreboards have `T + 1` rows.
    pub fn last_turn(&self) -> usize {
        self.turns.len()
    }

    /// Tokens of turn `i`: the caption for 0, question followed by answer otherwise.
    pub fn turn_tokens(&self, i: usize) -> Vec<&str> {
        if i == 0 {
            self.caption.iter().map(String::as_str).collect()
        } else {
            let t = &self.turns[i - 1];
            t.question
                .iter()
                .chain(t.answer.iter())
                .map(String::as_str)
                .collect()
        }
    }

    pub fn all_tokens(&self) -> impl Iterator<Item = &String> {
        self.caption
            .iter()
            .chain(self.turns.iter().flat_map(|t| t.question.iter().chain(t.answer.iter())))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Truth {
    TrueToA,
    FalseToA,
}

impl Truth {
    pub fn flip(self) -> Self {
        match self {
            Truth::TrueToA => Truth::FalseToA,
            Truth::FalseToA => Truth::TrueToA,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PolarityKind {
    Entailment,
    Contradiction,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum QuestionKind {
    PolarPositive,
    PolarNegative,
    Other,
}

impl QuestionKind {
    pub const ALL: [QuestionKind; 3] = [
        QuestionKind::PolarPositive,
        QuestionKind::PolarNegative,
        QuestionKind::Other,
    ];

    pub fn name(self) -> &'static str {
        match self {
            QuestionKind::PolarPositive => "polar_positive",
            QuestionKind::PolarNegative => "polar_negative",
            QuestionKind::Other => "other",
        }
    }
}

/// A generated statement about the image, true or false according to the answerer.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Proposition {
    pub id: u64,
    /// Id of the entailment of the pair this proposition belongs to.
    pub pair_id: u64,
    pub dialogue_id: u64,
    pub source_turn: usize,
    #[serde(with = "surface_text")]
    pub surface: Tokens,
    pub truth: Truth,
    pub polarity_kind: PolarityKind,
    pub rule_id: String,
    pub question_kind: QuestionKind,
}

impl Proposition {
    pub fn text(&self) -> String {
        crate::propgen::render(&self.surface)
    }

    pub fn is_caption(&self) -> bool {
        self.source_turn == 0
    }
}

/// Surfaces travel as rendered text and are re-tokenized on load.
mod surface_text {
    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(tokens: &[String], s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(&crate::propgen::render(tokens))
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Vec<String>, D::Error> {
        let text = String::deserialize(d)?;
        Ok(crate::propgen::tokenize(&text))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Visibility {
    Private,
    Shared,
}

/// One of the four scoreboard classes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct ScoreClass {
    pub truth: Truth,
    pub visibility: Visibility,
}

impl ScoreClass {
    pub const TRUE_PRIVATE: ScoreClass = ScoreClass::new(Truth::TrueToA, Visibility::Private);
    pub const TRUE_SHARED: ScoreClass = ScoreClass::new(Truth::TrueToA, Visibility::Shared);
    pub const FALSE_PRIVATE: ScoreClass = ScoreClass::new(Truth::FalseToA, Visibility::Private);
    pub const FALSE_SHARED: ScoreClass = ScoreClass::new(Truth::FalseToA, Visibility::Shared);

    /// Canonical order, used for confusion-matrix axes and on-disk codes.
    pub const ALL: [ScoreClass; 4] = [
        Self::TRUE_PRIVATE,
        Self::TRUE_SHARED,
        Self::FALSE_PRIVATE,
        Self::FALSE_SHARED,
    ];

    pub const fn new(truth: Truth, visibility: Visibility) -> Self {
        ScoreClass { truth, visibility }
    }

    pub fn index(self) -> usize {
        match (self.truth, self.visibility) {
            (Truth::TrueToA, Visibility::Private) => 0,
            (Truth::TrueToA, Visibility::Shared) => 1,
            (Truth::FalseToA, Visibility::Private) => 2,
            (Truth::FalseToA, Visibility::Shared) => 3,
        }
    }

    pub fn from_index(i: usize) -> Option<Self> {
        Self::ALL.get(i).copied()
    }

    pub fn name(self) -> &'static str {
        TaskVariant::TFxPS.label_names()[self.index()]
    }
}

impl fmt::Display for ScoreClass {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Role {
    Answerer,
    Questioner,
}

impl Role {
    pub fn code(self) -> u8 {
        match self {
            Role::Answerer => 0,
            Role::Questioner => 1,
        }
    }

    pub fn from_code(code: u8) -> Option<Self> {
        match code {
            0 => Some(Role::Answerer),
            1 => Some(Role::Questioner),
            _ => None,
        }
    }

    /// Short tag used inside representation keys.
    pub fn tag(self) -> &'static str {
        match self {
            Role::Answerer => "A",
            Role::Questioner => "Q",
        }
    }
}

impl FromStr for Role {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "a" | "answerer" => Ok(Role::Answerer),
            "q" | "questioner" => Ok(Role::Questioner),
            other => Err(Error::Config(format!("unknown role {other:?}"))),
        }
    }
}

#[allow(clippy::upper_case_acronyms)]
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum TaskVariant {
    /// truth x visibility, four labels
    #[serde(rename = "tfxps")]
    TFxPS,
    /// truth only
    #[serde(rename = "tf")]
    TF,
    /// visibility only
    #[serde(rename = "ps")]
    PS,
    /// private merged across truth values, three labels
    #[serde(rename = "pxtsfs")]
    PxTSFS,
}

impl TaskVariant {
    pub const ALL: [TaskVariant; 4] = [
        TaskVariant::TFxPS,
        TaskVariant::TF,
        TaskVariant::PS,
        TaskVariant::PxTSFS,
    ];

    pub fn n_labels(self) -> usize {
        self.label_names().len()
    }

    pub fn label_names(self) -> &'static [&'static str] {
        match self {
            TaskVariant::TFxPS => &["true_private", "true_shared", "false_private", "false_shared"],
            TaskVariant::TF => &["true", "false"],
            TaskVariant::PS => &["private", "shared"],
            TaskVariant::PxTSFS => &["private", "true_shared", "false_shared"],
        }
    }

    /// The questioner cannot tell true from false while a proposition is private.
    pub fn allowed_for(self, role: Role) -> bool {
        !(role == Role::Questioner && matches!(self, TaskVariant::TFxPS | TaskVariant::TF))
    }

    pub fn code(self) -> u8 {
        match self {
            TaskVariant::TFxPS => 0,
            TaskVariant::TF => 1,
            TaskVariant::PS => 2,
            TaskVariant::PxTSFS => 3,
        }
    }

    pub fn from_code(code: u8) -> Option<Self> {
        Self::ALL.get(code as usize).copied()
    }

    pub fn name(self) -> &'static str {
        match self {
            TaskVariant::TFxPS => "tfxps",
            TaskVariant::TF => "tf",
            TaskVariant::PS => "ps",
            TaskVariant::PxTSFS => "pxtsfs",
        }
    }

    /// What a label of this task says about the underlying class.
    pub fn decode(self, label: usize) -> Option<PartialClass> {
        use Truth::*;
        use Visibility::*;
        let (truth, visibility) = match (self, label) {
            (TaskVariant::TFxPS, i) => {
                let c = ScoreClass::from_index(i)?;
                (Some(c.truth), Some(c.visibility))
            }
            (TaskVariant::TF, 0) => (Some(TrueToA), None),
            (TaskVariant::TF, 1) => (Some(FalseToA), None),
            (TaskVariant::PS, 0) => (None, Some(Private)),
            (TaskVariant::PS, 1) => (None, Some(Shared)),
            (TaskVariant::PxTSFS, 0) => (None, Some(Private)),
            (TaskVariant::PxTSFS, 1) => (Some(TrueToA), Some(Shared)),
            (TaskVariant::PxTSFS, 2) => (Some(FalseToA), Some(Shared)),
            _ => return None,
        };
        Some(PartialClass { truth, visibility })
    }
}

impl FromStr for TaskVariant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "tfxps" => Ok(TaskVariant::TFxPS),
            "tf" => Ok(TaskVariant::TF),
            "ps" => Ok(TaskVariant::PS),
            "pxtsfs" => Ok(TaskVariant::PxTSFS),
            other => Err(Error::Config(format!("unknown task {other:?}"))),
        }
    }
}

impl fmt::Display for TaskVariant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// The components of a class that a task label determines.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PartialClass {
    pub truth: Option<Truth>,
    pub visibility: Option<Visibility>,
}

/// Gold class of `prop` at scoreboard row `turn` of a dialogue whose last turn is `last_turn`.
///
/// The role does not change the class; questioner restrictions are applied when
/// projecting onto a task.
pub fn score_class(
    prop: &Proposition,
    _role: Role,
    turn: usize,
    last_turn: usize,
) -> Result<ScoreClass> {
    if turn > last_turn {
        return Err(Error::TurnRange {
            turn,
            last: last_turn,
        });
    }
    let visibility = if turn < prop.source_turn {
        Visibility::Private
    } else {
        Visibility::Shared
    };
    Ok(ScoreClass::new(prop.truth, visibility))
}

/// Maps a class onto the label index of a task variant.
pub fn project_class(c: ScoreClass, task: TaskVariant) -> usize {
    match task {
        TaskVariant::TFxPS => c.index(),
        TaskVariant::TF => match c.truth {
            Truth::TrueToA => 0,
            Truth::FalseToA => 1,
        },
        TaskVariant::PS => match c.visibility {
            Visibility::Private => 0,
            Visibility::Shared => 1,
        },
        TaskVariant::PxTSFS => match (c.truth, c.visibility) {
            (_, Visibility::Private) => 0,
            (Truth::TrueToA, Visibility::Shared) => 1,
            (Truth::FalseToA, Visibility::Shared) => 2,
        },
    }
}

/// Turn-by-proposition matrix of score classes for one dialogue and role.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Scoreboard {
    pub dialogue_id: u64,
    pub role: Role,
    pub prop_ids: Vec<u64>,
    /// `cells[row][col]`, rows are turns `0..=T`.
    pub cells: Vec<Vec<ScoreClass>>,
}

impl Scoreboard {
    pub fn n_rows(&self) -> usize {
        self.cells.len()
    }

    pub fn n_cols(&self) -> usize {
        self.prop_ids.len()
    }

    pub fn column(&self, col: usize) -> impl Iterator<Item = ScoreClass> + '_ {
        self.cells.iter().map(move |row| row[col])
    }
}

pub fn build_scoreboard(dialogue: &Dialogue, props: &[Proposition], role: Role) -> Result<Scoreboard> {
    build_scoreboard_rows(dialogue.id, dialogue.last_turn(), props, role)
}

/// Like [`build_scoreboard`] when only the dialogue id and last turn are known.
pub fn build_scoreboard_rows(
    dialogue_id: u64,
    last_turn: usize,
    props: &[Proposition],
    role: Role,
) -> Result<Scoreboard> {
    if let Some(p) = props.iter().find(|p| p.dialogue_id != dialogue_id) {
        return Err(Error::Consistency(format!(
            "proposition {} belongs to dialogue {}, not {dialogue_id}",
            p.id, p.dialogue_id
        )));
    }
    let cells = (0..=last_turn)
        .map(|m| {
            props
                .iter()
                .map(|p| score_class(p, role, m, last_turn))
                .collect::<Result<Vec<_>>>()
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(Scoreboard {
        dialogue_id,
        role,
        prop_ids: props.iter().map(|p| p.id).collect(),
        cells,
    })
}
