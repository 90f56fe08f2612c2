use std::collections::BTreeSet;
use std::fs;
use std::path::Path;

use crate::error::{Error, Result};

/// Pronouns considered for coreference replacement and proposition filtering.
pub const PRONOUNS: [&str; 16] = [
    "he", "she", "it", "they", "his", "her", "its", "their", "him", "them", "hers", "theirs",
    "this", "that", "these", "those",
];

/// Pronouns rewritten as `<entity>'s` when replaced.
pub const POSSESSIVE_PRONOUNS: [&str; 6] = ["his", "her", "its", "their", "hers", "theirs"];

pub const DETERMINERS: [&str; 3] = ["a", "an", "the"];

const PREPOSITIONS: [&str; 22] = [
    "on", "in", "at", "of", "with", "near", "by", "under", "behind", "over", "from", "for", "to",
    "inside", "outside", "next", "around", "beside", "above", "below", "into", "onto",
];

/// Words that end a caption chunk search.
const CHUNK_STOPWORDS: [&str; 16] = [
    "that", "which", "who", "is", "are", "was", "and", "or", "while", "there", "this", "these",
    "those", "it", "its", "their",
];

pub const COLORS: [&str; 16] = [
    "black", "white", "red", "green", "yellow", "blue", "brown", "orange", "pink", "purple",
    "gray", "grey", "tan", "beige", "golden", "silver",
];

const IRREGULAR_PLURALS: [&str; 8] = [
    "people", "men", "women", "children", "sheep", "fish", "feet", "teeth",
];

const DEFAULT_POLARITY: &str = include_str!("../../data/polarity.txt");
const DEFAULT_ADJECTIVES: &str = include_str!("../../data/adjectives.txt");
const DEFAULT_NOUNS: &str = include_str!("../../data/nouns.txt");

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Polarity {
    Positive,
    Negative,
    Abstain,
}

/// Word lists the rule engine consults.
#[derive(Debug, Clone)]
pub struct Lexicons {
    pub positive: BTreeSet<String>,
    pub negative: BTreeSet<String>,
    pub colors: BTreeSet<String>,
    pub adjectives: BTreeSet<String>,
    pub nouns: BTreeSet<String>,
    pub irregular_plurals: BTreeSet<String>,
}

impl Default for Lexicons {
    fn default() -> Self {
        let (positive, negative) =
            parse_polarity(DEFAULT_POLARITY).expect("bundled polarity lexicon parses");
        Lexicons {
            positive,
            negative,
            colors: COLORS.iter().map(|s| s.to_string()).collect(),
            adjectives: word_list(DEFAULT_ADJECTIVES),
            nouns: word_list(DEFAULT_NOUNS),
            irregular_plurals: IRREGULAR_PLURALS.iter().map(|s| s.to_string()).collect(),
        }
    }
}

impl Lexicons {
    /// Replaces the polarity cues with those of a `positive: ...` / `negative: ...` file.
    pub fn with_polarity_file(mut self, path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let (positive, negative) = parse_polarity(&text)?;
        self.positive = positive;
        self.negative = negative;
        Ok(self)
    }

    pub fn is_color(&self, token: &str) -> bool {
        self.colors.contains(token)
    }

    /// Number of a phrase, judged on its head: the last token before the first
    /// preposition.
    pub fn is_plural(&self, phrase: &[String]) -> bool {
        let head_end = phrase
            .iter()
            .position(|t| PREPOSITIONS.contains(&t.as_str()))
            .unwrap_or(phrase.len());
        let Some(head) = phrase[..head_end].last() else {
            return false;
        };
        if self.irregular_plurals.contains(head.as_str()) {
            return true;
        }
        head.len() > 2
            && head.ends_with('s')
            && !head.ends_with("ss")
            && !head.ends_with("us")
            && !head.ends_with("is")
    }

    pub fn answer_polarity(&self, answer: &[String]) -> Polarity {
        match answer.iter().find(|t| !super::is_punct(t)) {
            Some(t) if self.negative.contains(t.as_str()) => Polarity::Negative,
            Some(t) if self.positive.contains(t.as_str()) => Polarity::Positive,
            _ => Polarity::Abstain,
        }
    }
}

pub fn is_pronoun(token: &str) -> bool {
    PRONOUNS.contains(&token)
}

pub fn is_preposition(token: &str) -> bool {
    PREPOSITIONS.contains(&token)
}

pub fn is_chunk_stopword(token: &str) -> bool {
    CHUNK_STOPWORDS.contains(&token) || is_preposition(token) || DETERMINERS.contains(&token)
}

/// Whitespace-separated words, `#` starts a comment.
pub fn word_list(text: &str) -> BTreeSet<String> {
    text.lines()
        .map(|l| l.split('#').next().unwrap_or(""))
        .flat_map(str::split_whitespace)
        .map(str::to_lowercase)
        .collect()
}

pub fn read_word_list(path: &Path) -> Result<BTreeSet<String>> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    Ok(word_list(&text))
}

fn parse_polarity(text: &str) -> Result<(BTreeSet<String>, BTreeSet<String>)> {
    let mut positive = BTreeSet::new();
    let mut negative = BTreeSet::new();
    for (n, line) in text.lines().enumerate() {
        let line = line.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let Some((key, words)) = line.split_once(':') else {
            return Err(Error::Config(format!("polarity lexicon line {}: missing ':'", n + 1)));
        };
        let words = words.split_whitespace().map(str::to_lowercase);
        match key.trim() {
            "positive" => positive.extend(words),
            "negative" => negative.extend(words),
            other => {
                return Err(Error::Config(format!(
                    "polarity lexicon line {}: unknown key {other:?}",
                    n + 1
                )))
            }
        }
    }
    Ok((positive, negative))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::propgen::tokenize;

    #[test]
    fn polarity_cues() {
        let lex = Lexicons::default();
        assert_eq!(lex.answer_polarity(&tokenize("0.")), Polarity::Negative);
        assert_eq!(lex.answer_polarity(&tokenize("yes it does.")), Polarity::Positive);
        assert_eq!(lex.answer_polarity(&tokenize("a little.")), Polarity::Abstain);
        assert_eq!(lex.answer_polarity(&tokenize("nope just fruit")), Polarity::Negative);
        assert_eq!(lex.answer_polarity(&tokenize("")), Polarity::Abstain);
        assert_eq!(lex.answer_polarity(&tokenize(". yes")), Polarity::Positive);
    }

    #[test]
    fn number_heuristic() {
        let lex = Lexicons::default();
        assert!(lex.is_plural(&tokenize("pictures on the wall")));
        assert!(lex.is_plural(&tokenize("people")));
        assert!(lex.is_plural(&tokenize("buildings")));
        assert!(!lex.is_plural(&tokenize("sunshine")));
        assert!(!lex.is_plural(&tokenize("tall grass")));
        assert!(!lex.is_plural(&tokenize("bus")));
    }

    #[test]
    fn adjective_gate_words() {
        let lex = Lexicons::default();
        assert!(lex.adjectives.contains("sunny"));
        assert!(!lex.adjectives.contains("day"));
        assert!(!lex.is_color("whitish"));
        assert!(lex.is_color("tan"));
    }

    #[test]
    fn custom_polarity_file() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("pol.txt");
        fs::write(&path, "positive: sure\nnegative: nah\n").unwrap();
        let lex = Lexicons::default().with_polarity_file(&path).unwrap();
        assert_eq!(lex.answer_polarity(&tokenize("sure.")), Polarity::Positive);
        assert_eq!(lex.answer_polarity(&tokenize("yes.")), Polarity::Abstain);
        fs::write(&path, "maybe: hm\n").unwrap();
        assert!(Lexicons::default().with_polarity_file(&path).is_err());
    }
}
