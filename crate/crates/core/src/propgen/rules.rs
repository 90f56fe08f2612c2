//! Pattern rules over question/answer pairs and their template instantiation.
//!
//! A rule file is a plain-text table, one rule per line:
//!
//! ```text
//! id ; question pattern ; gates ; positive template ; negative template ; kind
//! ```
//!
//! See `data/canonical.rules` for the full syntax.

use std::collections::BTreeMap;
use std::fmt;
use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::model::{PolarityKind, Proposition, QuestionKind, Tokens, Truth};

use super::lexicon::{is_pronoun, Lexicons, Polarity};
use super::{is_punct, tokenize};

const CANONICAL_RULES: &str = include_str!("../../data/canonical.rules");

/// Capture bound by the color answer condition.
pub const COLOR_CAPTURE: &str = "C";
/// Capture bound by the copy answer condition.
pub const ANSWER_CAPTURE: &str = "A";

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum PatternElem {
    /// Any of the alternatives, e.g. `photo|image|picture`.
    Literal(Vec<String>),
    /// Exactly one token, optionally bound to a name.
    Single(Option<String>),
    /// One or more tokens bound to a name.
    Greedy(String),
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Pattern {
    pub elems: Vec<PatternElem>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Modifier {
    Raw,
    /// drop a leading a/an/the/any/some
    Bare,
    NoAny,
    NoThe,
    /// indefinite article for singular heads
    Indef,
    /// is/are by number
    Be,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum TemplateElem {
    Literal(String),
    Capture { name: String, modifier: Modifier },
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Template {
    pub elems: Vec<TemplateElem>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AnswerCondition {
    RequiresPolarity,
    ColorExtract,
    PredicateCopy,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum GateKind {
    Adjective,
    Color,
    Noun,
    NonPronoun,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Gate {
    pub kind: GateKind,
    pub capture: String,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Rule {
    pub rule_id: String,
    pub question_pattern: Pattern,
    pub gates: Vec<Gate>,
    pub positive_template: Template,
    pub negative_template: Template,
    pub answer_condition: AnswerCondition,
}

/// Named token spans bound by a successful match.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Captures {
    pub values: BTreeMap<String, Tokens>,
    pub polarity: Polarity,
}

impl Captures {
    pub fn get(&self, name: &str) -> Option<&Tokens> {
        self.values.get(name)
    }
}

/// An ordered rule table; the first applicable rule wins.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RuleSet {
    pub rules: Vec<Rule>,
}

impl RuleSet {
    pub fn canonical() -> Self {
        RuleSet::parse(CANONICAL_RULES).expect("bundled rule table parses")
    }

    pub fn from_file(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        RuleSet::parse(&text)
    }

    pub fn parse(text: &str) -> Result<Self> {
        let mut rules: Vec<Rule> = Vec::new();
        for (idx, raw) in text.lines().enumerate() {
            let line_no = idx + 1;
            let content = raw.split('#').next().unwrap_or("");
            if content.trim().is_empty() {
                continue;
            }
            let rule = parse_rule(content, line_no)?;
            if rules.iter().any(|r| r.rule_id == rule.rule_id) {
                return Err(dsl_err(line_no, 1, format!("duplicate rule id {}", rule.rule_id)));
            }
            rules.push(rule);
        }
        Ok(RuleSet { rules })
    }

    /// First rule whose pattern, gates and answer condition hold.
    pub fn first_match(
        &self,
        question: &[String],
        answer: &[String],
        lex: &Lexicons,
    ) -> Option<(&Rule, Captures)> {
        self.rules
            .iter()
            .find_map(|r| match_rule(r, question, answer, lex).map(|c| (r, c)))
    }
}

fn dsl_err(line: usize, column: usize, message: impl Into<String>) -> Error {
    Error::Dsl {
        line,
        column,
        message: message.into(),
    }
}

fn parse_rule(line: &str, line_no: usize) -> Result<Rule> {
    // (column, text) of each field
    let mut fields = Vec::new();
    let mut start = 0;
    for (i, ch) in line.char_indices() {
        if ch == ';' {
            fields.push((start, &line[start..i]));
            start = i + 1;
        }
    }
    fields.push((start, &line[start..]));
    if fields.len() != 6 {
        return Err(dsl_err(
            line_no,
            1,
            format!("expected 6 ';'-separated fields, found {}", fields.len()),
        ));
    }
    let col = |i: usize| {
        let (offset, text) = fields[i];
        let lead = text.len() - text.trim_start().len();
        line[..offset + lead].chars().count() + 1
    };
    let field = |i: usize| fields[i].1.trim();

    let rule_id = field(0).to_string();
    if rule_id.is_empty() || rule_id.contains(char::is_whitespace) {
        return Err(dsl_err(line_no, col(0), "rule id must be a single word"));
    }
    let pattern = parse_pattern(field(1)).map_err(|m| dsl_err(line_no, col(1), m))?;
    let gates = parse_gates(field(2)).map_err(|m| dsl_err(line_no, col(2), m))?;
    let positive = parse_template(field(3)).map_err(|m| dsl_err(line_no, col(3), m))?;
    let negative = parse_template(field(4)).map_err(|m| dsl_err(line_no, col(4), m))?;
    let condition = match field(5) {
        "polar" => AnswerCondition::RequiresPolarity,
        "color" => AnswerCondition::ColorExtract,
        "copy" => AnswerCondition::PredicateCopy,
        other => {
            return Err(dsl_err(
                line_no,
                col(5),
                format!("unknown kind {other:?}, expected polar, color or copy"),
            ))
        }
    };

    let mut bound: Vec<&str> = pattern
        .elems
        .iter()
        .filter_map(|e| match e {
            PatternElem::Greedy(n) | PatternElem::Single(Some(n)) => Some(n.as_str()),
            _ => None,
        })
        .collect();
    match condition {
        AnswerCondition::ColorExtract => bound.push(COLOR_CAPTURE),
        AnswerCondition::PredicateCopy => bound.push(ANSWER_CAPTURE),
        AnswerCondition::RequiresPolarity => {}
    }
    for gate in &gates {
        if !bound.contains(&gate.capture.as_str()) {
            return Err(dsl_err(
                line_no,
                col(2),
                format!("gate refers to unbound capture {}", gate.capture),
            ));
        }
    }
    for (i, template) in [(3, &positive), (4, &negative)] {
        for name in template.capture_names() {
            if !bound.contains(&name) {
                return Err(dsl_err(line_no, col(i), format!("template uses unbound capture {{{name}}}")));
            }
        }
    }
    if positive == negative {
        return Err(dsl_err(line_no, col(4), "positive and negative templates are identical"));
    }
    Ok(Rule {
        rule_id,
        question_pattern: pattern,
        gates,
        positive_template: positive,
        negative_template: negative,
        answer_condition: condition,
    })
}

fn capture_name(inner: &str) -> std::result::Result<&str, String> {
    if !inner.is_empty() && inner.chars().all(|c| c.is_ascii_uppercase() || c.is_ascii_digit()) {
        Ok(inner)
    } else {
        Err(format!("invalid capture name {inner:?}"))
    }
}

fn parse_pattern(text: &str) -> std::result::Result<Pattern, String> {
    let mut elems = Vec::new();
    let mut names: Vec<String> = Vec::new();
    for word in text.split_whitespace() {
        let elem = if let Some(inner) = word.strip_prefix('{').and_then(|w| w.strip_suffix('}')) {
            if inner == "_" {
                PatternElem::Single(None)
            } else if let Some(name) = inner.strip_suffix(":1") {
                PatternElem::Single(Some(capture_name(name)?.to_string()))
            } else {
                PatternElem::Greedy(capture_name(inner)?.to_string())
            }
        } else if word.contains(['{', '}']) {
            return Err(format!("malformed capture {word:?}"));
        } else {
            let alts: Vec<String> = word.split('|').map(str::to_lowercase).collect();
            if alts.iter().any(String::is_empty) {
                return Err(format!("empty alternative in {word:?}"));
            }
            PatternElem::Literal(alts)
        };
        if let PatternElem::Greedy(n) | PatternElem::Single(Some(n)) = &elem {
            if names.contains(n) {
                return Err(format!("capture {n} bound twice"));
            }
            names.push(n.clone());
        }
        elems.push(elem);
    }
    if elems.is_empty() {
        return Err("empty question pattern".into());
    }
    let adjacent_greedy = elems
        .windows(2)
        .any(|w| matches!(w, [PatternElem::Greedy(_), PatternElem::Greedy(_)]));
    if adjacent_greedy {
        return Err("greedy captures must be separated by another pattern token".into());
    }
    Ok(Pattern { elems })
}

fn parse_gates(text: &str) -> std::result::Result<Vec<Gate>, String> {
    if text == "-" {
        return Ok(Vec::new());
    }
    text.split(',')
        .map(|g| {
            let (kind, capture) = g
                .trim()
                .split_once(':')
                .ok_or_else(|| format!("gate {g:?} must look like lexicon:CAPTURE"))?;
            let kind = match kind {
                "adj" => GateKind::Adjective,
                "color" => GateKind::Color,
                "noun" => GateKind::Noun,
                "nopron" => GateKind::NonPronoun,
                other => return Err(format!("unknown gate {other:?}")),
            };
            Ok(Gate {
                kind,
                capture: capture_name(capture)?.to_string(),
            })
        })
        .collect()
}

fn parse_template(text: &str) -> std::result::Result<Template, String> {
    let mut elems = Vec::new();
    for word in text.split_whitespace() {
        if let Some(rest) = word.strip_prefix('{') {
            let close = rest.find('}').ok_or_else(|| format!("unclosed capture in {word:?}"))?;
            let inner = &rest[..close];
            let (name, modifier) = match inner.split_once(':') {
                None => (inner, Modifier::Raw),
                Some((name, m)) => (
                    name,
                    match m {
                        "bare" => Modifier::Bare,
                        "noany" => Modifier::NoAny,
                        "nothe" => Modifier::NoThe,
                        "indef" => Modifier::Indef,
                        "be" => Modifier::Be,
                        other => return Err(format!("unknown modifier {other:?}")),
                    },
                ),
            };
            elems.push(TemplateElem::Capture {
                name: capture_name(name)?.to_string(),
                modifier,
            });
            let tail = &rest[close + 1..];
            if !tail.chars().all(|c| is_punct(&c.to_string())) {
                return Err(format!("unexpected text after capture in {word:?}"));
            }
            elems.extend(tail.chars().map(|c| TemplateElem::Literal(c.to_string())));
        } else if word.contains(['{', '}']) {
            return Err(format!("malformed capture {word:?}"));
        } else {
            elems.extend(tokenize(word).into_iter().map(TemplateElem::Literal));
        }
    }
    if elems.is_empty() {
        return Err("empty template".into());
    }
    Ok(Template { elems })
}

impl Template {
    pub fn capture_names(&self) -> impl Iterator<Item = &str> {
        self.elems.iter().filter_map(|e| match e {
            TemplateElem::Capture { name, .. } => Some(name.as_str()),
            TemplateElem::Literal(_) => None,
        })
    }

    /// Fills the template; fails on a capture the match did not bind.
    pub fn fill(&self, rule_id: &str, captures: &Captures, lex: &Lexicons) -> Result<Tokens> {
        let mut out = Vec::new();
        for elem in &self.elems {
            match elem {
                TemplateElem::Literal(t) => out.push(t.clone()),
                TemplateElem::Capture { name, modifier } => {
                    let value = captures.get(name).ok_or_else(|| Error::Template {
                        rule: rule_id.to_string(),
                        capture: name.clone(),
                    })?;
                    out.extend(apply_modifier(value, *modifier, lex));
                }
            }
        }
        Ok(out)
    }
}

fn strip_leading(tokens: &[String], words: &[&str]) -> Tokens {
    match tokens.split_first() {
        Some((first, rest)) if words.contains(&first.as_str()) && !rest.is_empty() => rest.to_vec(),
        _ => tokens.to_vec(),
    }
}

fn apply_modifier(value: &[String], modifier: Modifier, lex: &Lexicons) -> Tokens {
    const ARTICLES: [&str; 5] = ["a", "an", "the", "any", "some"];
    match modifier {
        Modifier::Raw => value.to_vec(),
        Modifier::Bare => strip_leading(value, &ARTICLES),
        Modifier::NoAny => strip_leading(value, &["any"]),
        Modifier::NoThe => strip_leading(value, &["the"]),
        Modifier::Indef => {
            if matches!(value.first().map(String::as_str), Some("a" | "an")) {
                return value.to_vec();
            }
            let bare = strip_leading(value, &ARTICLES);
            if lex.is_plural(&bare) {
                bare
            } else {
                let article = match bare.first().and_then(|t| t.chars().next()) {
                    Some('a' | 'e' | 'i' | 'o' | 'u') => "an",
                    _ => "a",
                };
                std::iter::once(article.to_string()).chain(bare).collect()
            }
        }
        Modifier::Be => {
            let bare = strip_leading(value, &ARTICLES);
            vec![if lex.is_plural(&bare) { "are" } else { "is" }.to_string()]
        }
    }
}

fn strip_trailing_punct(tokens: &[String]) -> &[String] {
    let end = tokens.iter().rposition(|t| !is_punct(t)).map_or(0, |i| i + 1);
    &tokens[..end]
}

fn match_pattern(pattern: &Pattern, tokens: &[String]) -> Option<BTreeMap<String, Tokens>> {
    let mut captures = BTreeMap::new();
    match_from(&pattern.elems, tokens, &mut captures).then_some(captures)
}

/// Backtracking match; a greedy slot followed by more pattern takes the shortest
/// span that lets the rest match.
fn match_from(elems: &[PatternElem], tokens: &[String], captures: &mut BTreeMap<String, Tokens>) -> bool {
    let Some((first, rest)) = elems.split_first() else {
        return tokens.is_empty();
    };
    match first {
        PatternElem::Literal(alts) => match tokens.split_first() {
            Some((t, tail)) if alts.contains(t) => match_from(rest, tail, captures),
            _ => false,
        },
        PatternElem::Single(name) => {
            let Some((t, tail)) = tokens.split_first() else {
                return false;
            };
            if let Some(n) = name {
                captures.insert(n.clone(), vec![t.clone()]);
            }
            match_from(rest, tail, captures)
        }
        PatternElem::Greedy(name) => {
            let fixed_after = rest
                .iter()
                .filter(|e| !matches!(e, PatternElem::Greedy(_)))
                .count();
            let max = tokens.len().saturating_sub(fixed_after);
            for len in 1..=max {
                captures.insert(name.clone(), tokens[..len].to_vec());
                if match_from(rest, &tokens[len..], captures) {
                    return true;
                }
            }
            captures.remove(name);
            false
        }
    }
}

/// Matches one rule against a QA pair. `None` when the question does not fit the
/// pattern, a gate rejects a capture, or the answer does not satisfy the rule's
/// answer condition.
pub fn match_rule(rule: &Rule, question: &[String], answer: &[String], lex: &Lexicons) -> Option<Captures> {
    let mut values = match_pattern(&rule.question_pattern, strip_trailing_punct(question))?;
    for gate in &rule.gates {
        let tokens = values.get(&gate.capture)?;
        let ok = tokens.iter().all(|t| match gate.kind {
            GateKind::Adjective => lex.adjectives.contains(t),
            GateKind::Color => lex.is_color(t),
            GateKind::Noun => lex.nouns.contains(t),
            GateKind::NonPronoun => !is_pronoun(t),
        });
        if !ok {
            return None;
        }
    }
    let polarity = lex.answer_polarity(answer);
    match rule.answer_condition {
        AnswerCondition::RequiresPolarity => {
            if polarity == Polarity::Abstain {
                return None;
            }
        }
        AnswerCondition::ColorExtract => {
            let colors: Vec<&String> = answer.iter().filter(|t| lex.is_color(t)).collect();
            if colors.is_empty() {
                return None;
            }
            let mut joined = Vec::new();
            for (i, c) in colors.into_iter().enumerate() {
                if i > 0 {
                    joined.push("and".to_string());
                }
                joined.push(c.clone());
            }
            values.insert(COLOR_CAPTURE.to_string(), joined);
        }
        AnswerCondition::PredicateCopy => {
            let content: Tokens = answer.iter().filter(|t| !is_punct(t)).cloned().collect();
            if content.is_empty() || polarity != Polarity::Abstain {
                return None;
            }
            values.insert(ANSWER_CAPTURE.to_string(), content);
        }
    }
    Some(Captures { values, polarity })
}

/// Where a proposition pair comes from.
#[derive(Debug, Clone, Copy)]
pub struct PairOrigin {
    pub dialogue_id: u64,
    pub source_turn: usize,
    /// Id given to the entailment; the contradiction gets `first_id + 1`.
    pub first_id: u64,
}

/// Fills both templates of a matched rule and returns `(entailment, contradiction)`.
pub fn instantiate(
    rule: &Rule,
    captures: &Captures,
    origin: PairOrigin,
    lex: &Lexicons,
) -> Result<(Proposition, Proposition)> {
    let positive = rule.positive_template.fill(&rule.rule_id, captures, lex)?;
    let negative = rule.negative_template.fill(&rule.rule_id, captures, lex)?;
    let (entailed, contradicted, kind) = match (rule.answer_condition, captures.polarity) {
        (AnswerCondition::RequiresPolarity, Polarity::Negative) => {
            (negative, positive, QuestionKind::PolarNegative)
        }
        (AnswerCondition::RequiresPolarity, _) => (positive, negative, QuestionKind::PolarPositive),
        _ => (positive, negative, QuestionKind::Other),
    };
    Ok(make_pair(entailed, contradicted, &rule.rule_id, kind, origin))
}

pub(crate) fn make_pair(
    entailed: Tokens,
    contradicted: Tokens,
    rule_id: &str,
    question_kind: QuestionKind,
    origin: PairOrigin,
) -> (Proposition, Proposition) {
    let base = Proposition {
        id: origin.first_id,
        pair_id: origin.first_id,
        dialogue_id: origin.dialogue_id,
        source_turn: origin.source_turn,
        surface: entailed,
        truth: Truth::TrueToA,
        polarity_kind: PolarityKind::Entailment,
        rule_id: rule_id.to_string(),
        question_kind,
    };
    let contradiction = Proposition {
        id: origin.first_id + 1,
        surface: contradicted,
        truth: Truth::FalseToA,
        polarity_kind: PolarityKind::Contradiction,
        ..base.clone()
    };
    (base, contradiction)
}

impl fmt::Display for Rule {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.rule_id)
    }
}
