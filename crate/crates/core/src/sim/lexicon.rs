//! Instruction template grammar and the synonym lexicon used for language
//! shifts.
//!
//! Grammar (one space between words):
//!
//! ```text
//! pick  := PICK "the" np
//! place := PUT "the" np PREP "the" np
//! avoid := PICK "the" np "avoiding" "the" np
//! np    := [color] noun
//! ```

use rand::seq::IndexedRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Word classes with interchangeable members. The first member of each
/// group is the canonical form.
pub const SYNONYM_GROUPS: &[&[&str]] = &[
    &["pick", "grab", "lift", "take"],
    &["put", "place", "set"],
    &["stack"],
    &["block", "cube", "brick"],
    &["plate", "dish"],
    &["cup", "mug"],
    &["vase", "jar"],
    &["bowl", "basin"],
    &["red", "crimson", "scarlet"],
    &["green", "emerald"],
    &["blue", "azure"],
    &["yellow", "golden"],
    &["purple", "violet"],
    &["orange", "amber"],
    &["on", "onto"],
    &["in", "into"],
];

pub const COLORS: &[&str] = &["red", "green", "blue", "yellow", "purple", "orange"];
/// Categories the action head sees during training.
pub const SEEN_CATEGORIES: &[&str] = &["block", "cup", "vase", "plate", "bowl"];
/// Categories reserved for the unseen-object shift.
pub const UNSEEN_CATEGORIES: &[&str] = &["spoon", "carrot", "eggplant", "ball"];

const PICK_VERBS: &[&str] = &["pick"];
const PUT_VERBS: &[&str] = &["put", "stack"];
const PREPS: &[&str] = &["on", "in"];

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum GrammarError {
    #[error("instruction `{0}` does not follow the template grammar")]
    NotInGrammar(String),
}

/// A synonym table; `Lexicon::empty()` paraphrases to the identity.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Lexicon {
    pub groups: Vec<Vec<String>>,
}

impl Default for Lexicon {
    fn default() -> Self {
        Self {
            groups: SYNONYM_GROUPS
                .iter()
                .map(|g| g.iter().map(|w| w.to_string()).collect())
                .collect(),
        }
    }
}

impl Lexicon {
    pub fn empty() -> Self {
        Self { groups: Vec::new() }
    }

    pub fn group_of(&self, word: &str) -> Option<&[String]> {
        self.groups.iter().find(|g| g.iter().any(|w| w == word)).map(|g| g.as_slice())
    }

    /// Canonical form of a word (itself if not in the table).
    pub fn canonical<'a>(&'a self, word: &'a str) -> &'a str {
        self.group_of(word).map_or(word, |g| g[0].as_str())
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct NounPhrase {
    pub color: Option<String>,
    pub category: String,
}

impl NounPhrase {
    pub fn text(&self) -> String {
        match &self.color {
            Some(c) => format!("{c} {}", self.category),
            None => self.category.clone(),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InstructionKind {
    Pick,
    Place,
    Avoid,
}

/// Canonicalized reading of a template instruction.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ParsedInstruction {
    pub kind: InstructionKind,
    pub verb: String,
    pub target: NounPhrase,
    /// Destination for `Place`, obstacle for `Avoid`.
    pub other: Option<NounPhrase>,
    pub preposition: Option<String>,
}

fn is_color(lex: &Lexicon, w: &str) -> bool {
    COLORS.contains(&lex.canonical(w))
}

fn is_noun(lex: &Lexicon, w: &str) -> bool {
    let c = lex.canonical(w);
    SEEN_CATEGORIES.contains(&c) || UNSEEN_CATEGORIES.contains(&c)
}

fn noun_phrase(lex: &Lexicon, words: &[&str]) -> Option<NounPhrase> {
    match words {
        [n] if is_noun(lex, n) => Some(NounPhrase {
            color: None,
            category: lex.canonical(n).to_string(),
        }),
        [c, n] if is_color(lex, c) && is_noun(lex, n) => Some(NounPhrase {
            color: Some(lex.canonical(c).to_string()),
            category: lex.canonical(n).to_string(),
        }),
        _ => None,
    }
}

/// Parses an instruction, normalizing synonyms through `lex`.
pub fn parse_instruction_with(lex: &Lexicon, text: &str) -> Result<ParsedInstruction, GrammarError> {
    let err = || GrammarError::NotInGrammar(text.to_string());
    let words: Vec<&str> = text.split(' ').collect();
    if words.len() < 3 || words[1] != "the" {
        return Err(err());
    }
    let verb = lex.canonical(words[0]);
    let rest = &words[2..];
    if PICK_VERBS.contains(&verb) {
        if let Some(i) = rest.iter().position(|w| *w == "avoiding") {
            if rest.get(i + 1) != Some(&"the") {
                return Err(err());
            }
            let target = noun_phrase(lex, &rest[..i]).ok_or_else(err)?;
            let obstacle = noun_phrase(lex, &rest[i + 2..]).ok_or_else(err)?;
            return Ok(ParsedInstruction {
                kind: InstructionKind::Avoid,
                verb: verb.to_string(),
                target,
                other: Some(obstacle),
                preposition: None,
            });
        }
        let target = noun_phrase(lex, rest).ok_or_else(err)?;
        return Ok(ParsedInstruction {
            kind: InstructionKind::Pick,
            verb: verb.to_string(),
            target,
            other: None,
            preposition: None,
        });
    }
    if PUT_VERBS.contains(&verb) {
        let i = rest
            .iter()
            .position(|w| PREPS.contains(&lex.canonical(w)))
            .ok_or_else(err)?;
        if rest.get(i + 1) != Some(&"the") {
            return Err(err());
        }
        let target = noun_phrase(lex, &rest[..i]).ok_or_else(err)?;
        let dest = noun_phrase(lex, &rest[i + 2..]).ok_or_else(err)?;
        return Ok(ParsedInstruction {
            kind: InstructionKind::Place,
            verb: verb.to_string(),
            target,
            other: Some(dest),
            preposition: Some(lex.canonical(rest[i]).to_string()),
        });
    }
    Err(err())
}

pub fn parse_instruction(text: &str) -> Result<ParsedInstruction, GrammarError> {
    parse_instruction_with(&Lexicon::default(), text)
}

/// Replaces every word that has synonyms with a seeded choice from its
/// group (the original word included).
pub fn paraphrase_instruction(lex: &Lexicon, instruction: &str, seed: u64) -> Result<String, GrammarError> {
    parse_instruction_with(lex, instruction)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let words: Vec<String> = instruction
        .split(' ')
        .map(|w| match lex.group_of(w) {
            Some(g) => g.choose(&mut rng).expect("groups are non-empty").clone(),
            None => w.to_string(),
        })
        .collect();
    Ok(words.join(" "))
}
