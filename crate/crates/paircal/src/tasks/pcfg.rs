//! Digit-description grammar: a tiny weighted context-free grammar whose
//! sentences are true statements about a decimal digit.
//!
//! The grammar is unambiguous and its support per digit is finite (57
//! sentences), so exact sentence probabilities come from a deterministic
//! parse and the full support can be enumerated. Two sentences are
//! semantically equivalent when they differ only in the introduction or in
//! how the digit itself was phrased, not in what they claim.

use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum PcfgError {
    #[error("digit {0} is out of range 0..=9")]
    BadDigit(u8),
}

/// Probability of the fallback sentence.
pub const HAZY_PROB: f64 = 0.01;
/// The fallback sentence, valid for every digit.
pub const HAZY_SENTENCE: &str = "Reply hazy, try again";

const INTROS: [(&str, f64); 8] = [
    ("It's", 0.138),
    ("It is", 0.086),
    ("That's", 0.218),
    ("That is", 0.185),
    ("Sure, it's", 0.096),
    ("Sure, it is", 0.02),
    ("Sure, that's", 0.17),
    ("Sure, that is", 0.087),
];

// Branch weights for the content of a statement. The published table's
// fourth weight is inconsistent with the others (the column would sum to
// 1.78); the first three weights are kept verbatim and the fourth takes
// the residual mass so the row is a proper distribution.
const W_SAY_DIGIT: f64 = 0.56;
const W_EVEN_ODD: f64 = 0.19;
const W_SPELL: f64 = 0.13;
const W_SPELL_LENGTH: f64 = 1.0 - W_SAY_DIGIT - W_EVEN_ODD - W_SPELL; // 0.12

const W_DIGIT_PLAIN: f64 = 0.616;
const W_DIGIT_THE_NUMBER: f64 = 0.384;
const W_DIGIT_NAME: f64 = 0.323;
const W_DIGIT_VAL: f64 = 0.677;

const NAMES: [&str; 10] = [
    "zero", "one", "two", "three", "four", "five", "six", "seven", "eight", "nine",
];

fn spelled(d: u8) -> String {
    NAMES[d as usize]
        .chars()
        .map(|c| c.to_ascii_uppercase().to_string())
        .collect::<Vec<_>>()
        .join(" ")
}

fn spell_length(d: u8) -> usize {
    NAMES[d as usize].len()
}

fn is_even(d: u8) -> bool {
    d.is_multiple_of(2)
}

/// What a sentence claims about the digit. Sentences with equal keys are
/// semantically equivalent.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum SemanticKey {
    /// The fallback sentence (no claim).
    Hazy,
    /// States the digit's value, in any phrasing.
    Value(u8),
    /// States the digit's parity.
    Parity(bool),
    /// Spells the digit out letter by letter.
    Spelling(u8),
    /// States how many letters the digit's name has.
    SpellLength(u8),
}

/// One sentence of the support with its probability and equivalence key.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SupportEntry {
    pub sentence: String,
    pub prob: f64,
    pub key: SemanticKey,
}

/// Enumerates the complete support for a digit. Probabilities sum to one.
pub fn enumerate_support(digit: u8) -> Result<Vec<SupportEntry>, PcfgError> {
    if digit > 9 {
        return Err(PcfgError::BadDigit(digit));
    }
    let mut out = Vec::with_capacity(57);
    out.push(SupportEntry {
        sentence: HAZY_SENTENCE.to_string(),
        prob: HAZY_PROB,
        key: SemanticKey::Hazy,
    });
    let d = digit;
    for (intro, wi) in INTROS {
        let base = (1.0 - HAZY_PROB) * wi;
        // SAY-DIGIT: optional "the number", then name or value.
        for (wrap, ww) in [("", W_DIGIT_PLAIN), ("the number ", W_DIGIT_THE_NUMBER)] {
            for (text, wd) in [
                (NAMES[d as usize].to_string(), W_DIGIT_NAME),
                (d.to_string(), W_DIGIT_VAL),
            ] {
                out.push(SupportEntry {
                    sentence: format!("{intro} {wrap}{text}"),
                    prob: base * W_SAY_DIGIT * ww * wd,
                    key: SemanticKey::Value(d),
                });
            }
        }
        let parity = if is_even(d) { "even" } else { "odd" };
        out.push(SupportEntry {
            sentence: format!("{intro} an {parity} number"),
            prob: base * W_EVEN_ODD,
            key: SemanticKey::Parity(is_even(d)),
        });
        out.push(SupportEntry {
            sentence: format!("{intro} spelled {}", spelled(d)),
            prob: base * W_SPELL,
            key: SemanticKey::Spelling(d),
        });
        out.push(SupportEntry {
            sentence: format!("{intro} spelled with {} letters", spell_length(d)),
            prob: base * W_SPELL_LENGTH,
            key: SemanticKey::SpellLength(spell_length(d) as u8),
        });
    }
    Ok(out)
}

/// Exact probability of `sentence` for the given digit by parsing against
/// the grammar. Returns 0 for anything outside the support: such a
/// sentence is a statistical hallucination for this digit.
pub fn inside_prob(digit: u8, sentence: &str) -> Result<f64, PcfgError> {
    if digit > 9 {
        return Err(PcfgError::BadDigit(digit));
    }
    if sentence == HAZY_SENTENCE {
        return Ok(HAZY_PROB);
    }
    let d = digit;
    let Some((intro, wi, rest)) = INTROS.iter().find_map(|(intro, wi)| {
        sentence
            .strip_prefix(intro)
            .and_then(|r| r.strip_prefix(' '))
            .map(|r| (*intro, *wi, r))
    }) else {
        return Ok(0.0);
    };
    let _ = intro;
    let base = (1.0 - HAZY_PROB) * wi;

    // Parity claim.
    let parity = if is_even(d) { "even" } else { "odd" };
    if rest == format!("an {parity} number") {
        return Ok(base * W_EVEN_ODD);
    }
    // Spelled-out claim.
    if rest == format!("spelled {}", spelled(d)) {
        return Ok(base * W_SPELL);
    }
    // Spell-length claim.
    if rest == format!("spelled with {} letters", spell_length(d)) {
        return Ok(base * W_SPELL_LENGTH);
    }
    // Direct value claim.
    let (wrap_w, value_text) = match rest.strip_prefix("the number ") {
        Some(inner) => (W_DIGIT_THE_NUMBER, inner),
        None => (W_DIGIT_PLAIN, rest),
    };
    if value_text == NAMES[d as usize] {
        return Ok(base * W_SAY_DIGIT * wrap_w * W_DIGIT_NAME);
    }
    if value_text == d.to_string() {
        return Ok(base * W_SAY_DIGIT * wrap_w * W_DIGIT_VAL);
    }
    Ok(0.0)
}

/// Semantic key of a sentence regardless of digit, or `None` for sentences
/// no digit could produce (malformed).
pub fn semantic_key(sentence: &str) -> Option<SemanticKey> {
    if sentence == HAZY_SENTENCE {
        return Some(SemanticKey::Hazy);
    }
    let rest = INTROS.iter().find_map(|(intro, _)| {
        sentence
            .strip_prefix(intro)
            .and_then(|r| r.strip_prefix(' '))
    })?;
    for parity in [true, false] {
        let word = if parity { "even" } else { "odd" };
        if rest == format!("an {word} number") {
            return Some(SemanticKey::Parity(parity));
        }
    }
    for d in 0..10u8 {
        if rest == format!("spelled {}", spelled(d)) {
            return Some(SemanticKey::Spelling(d));
        }
    }
    for len in [3u8, 4, 5] {
        if rest == format!("spelled with {len} letters") {
            return Some(SemanticKey::SpellLength(len));
        }
    }
    let value_text = rest.strip_prefix("the number ").unwrap_or(rest);
    for d in 0..10u8 {
        if value_text == NAMES[d as usize] || value_text == d.to_string() {
            return Some(SemanticKey::Value(d));
        }
    }
    None
}

/// Samples a sentence for `digit`.
pub fn sample(digit: u8, rng: &mut impl Rng) -> Result<String, PcfgError> {
    let support = enumerate_support(digit)?;
    let mut u: f64 = rng.gen();
    for entry in &support {
        u -= entry.prob;
        if u < 0.0 {
            return Ok(entry.sentence.clone());
        }
    }
    Ok(support.last().expect("support is nonempty").sentence.clone())
}

/// The grammar's rule tables in a serializable form, for inspection.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct GrammarSpec {
    pub hazy_prob: f64,
    pub hazy_sentence: String,
    pub intros: Vec<(String, f64)>,
    pub value_branches: Vec<(String, f64)>,
    pub digit_wrap: Vec<(String, f64)>,
    pub digit_form: Vec<(String, f64)>,
    pub digit_names: Vec<String>,
}

pub fn grammar_spec() -> GrammarSpec {
    GrammarSpec {
        hazy_prob: HAZY_PROB,
        hazy_sentence: HAZY_SENTENCE.to_string(),
        intros: INTROS.iter().map(|(s, w)| (s.to_string(), *w)).collect(),
        value_branches: vec![
            ("say-digit".into(), W_SAY_DIGIT),
            ("even-odd".into(), W_EVEN_ODD),
            ("spell".into(), W_SPELL),
            ("spell-length".into(), W_SPELL_LENGTH),
        ],
        digit_wrap: vec![
            ("plain".into(), W_DIGIT_PLAIN),
            ("the number".into(), W_DIGIT_THE_NUMBER),
        ],
        digit_form: vec![
            ("name".into(), W_DIGIT_NAME),
            ("value".into(), W_DIGIT_VAL),
        ],
        digit_names: NAMES.iter().map(|s| s.to_string()).collect(),
    }
}
