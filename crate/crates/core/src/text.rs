//! Tokenization and sentence-initial connective matching.
//!
//! A [`ConnectiveLexicon`] lists the connectives that may open the second
//! sentence of a pair. Matching is case-insensitive, anchored at the first
//! token, prefers the longest surface, and honours the per-entry
//! comma-required flag (so "Instead the plan failed." is not a match for
//! `instead,`). Stripping removes the connective and its comma and
//! upper-cases the first remaining character so that the casing does not
//! reveal that a connective was there.

use std::fmt;
use std::path::Path;

use crate::error::{Error, Result};

/// Dense class index; `0..K-1`, with the no-connective class last.
pub type LabelId = usize;

pub const NO_CONNECTIVE_NAME: &str = "[No connective]";

const DEFAULT_LEXICON: &str = include_str!("../data/default_lexicon.tsv");

/// Version of the lexicon file format understood by [`ConnectiveLexicon::parse`].
pub const LEXICON_FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ConnectiveEntry {
    pub label: LabelId,
    /// Lower-cased surface tokens, e.g. `["on", "the", "other", "hand"]`.
    pub surface: Vec<String>,
    pub comma_required: bool,
}

impl ConnectiveEntry {
    pub fn name(&self) -> String {
        self.surface.join(" ")
    }
}

/// Ordered connective list. Line order defines label ids and the
/// no-connective label is implicitly `len()`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ConnectiveLexicon {
    entries: Vec<ConnectiveEntry>,
    names: Vec<String>,
}

impl Default for ConnectiveLexicon {
    /// The 19 connectives shipped with the crate, in descending corpus frequency.
    fn default() -> Self {
        Self::parse(DEFAULT_LEXICON).expect("bundled lexicon is valid")
    }
}

impl ConnectiveLexicon {
    /// Parses `surface<TAB>comma_required(0|1)` lines. Blank lines are ignored.
    pub fn parse(text: &str) -> Result<Self> {
        let mut entries: Vec<ConnectiveEntry> = Vec::new();
        for (idx, line) in text.lines().enumerate() {
            let lineno = idx + 1;
            if line.trim().is_empty() {
                continue;
            }
            let (surface, flag) = line.split_once('\t').ok_or_else(|| Error::Lexicon {
                line: lineno,
                msg: "expected `surface<TAB>0|1`".into(),
            })?;
            let comma_required = match flag.trim() {
                "0" => false,
                "1" => true,
                other => {
                    return Err(Error::Lexicon {
                        line: lineno,
                        msg: format!("comma flag must be 0 or 1, got {other:?}"),
                    })
                }
            };
            let surface: Vec<String> = surface.split_whitespace().map(|w| w.to_lowercase()).collect();
            if surface.is_empty() {
                return Err(Error::Lexicon {
                    line: lineno,
                    msg: "empty surface".into(),
                });
            }
            if entries.iter().any(|e| e.surface == surface) {
                return Err(Error::Lexicon {
                    line: lineno,
                    msg: format!("duplicate surface {:?}", surface.join(" ")),
                });
            }
            entries.push(ConnectiveEntry {
                label: entries.len(),
                surface,
                comma_required,
            });
        }
        if entries.is_empty() {
            return Err(Error::Lexicon {
                line: 0,
                msg: "lexicon has no entries".into(),
            });
        }
        let names = entries
            .iter()
            .map(ConnectiveEntry::name)
            .chain(std::iter::once(NO_CONNECTIVE_NAME.to_string()))
            .collect();
        Ok(Self { entries, names })
    }

    pub fn from_path(path: impl AsRef<Path>) -> Result<Self> {
        Self::parse(&std::fs::read_to_string(path)?)
    }

    /// Renders the lexicon back into its file format.
    pub fn to_file_string(&self) -> String {
        self.entries
            .iter()
            .map(|e| format!("{}\t{}\n", e.name(), u8::from(e.comma_required)))
            .collect()
    }

    pub fn entries(&self) -> &[ConnectiveEntry] {
        &self.entries
    }

    /// Number of classes including the no-connective class.
    pub fn num_labels(&self) -> usize {
        self.entries.len() + 1
    }

    pub fn no_connective(&self) -> LabelId {
        self.entries.len()
    }

    /// Display name of a label: the space-joined surface, or `[No connective]`.
    pub fn name(&self, label: LabelId) -> &str {
        &self.names[label]
    }

    pub fn label_names(&self) -> &[String] {
        &self.names
    }

    /// Inverse of [`name`](Self::name); also accepts a trailing comma and any casing.
    pub fn label_of(&self, name: &str) -> Option<LabelId> {
        let name = name.trim();
        if name == NO_CONNECTIVE_NAME {
            return Some(self.no_connective());
        }
        let norm = name.trim_end_matches(',').to_lowercase();
        let words: Vec<&str> = norm.split_whitespace().collect();
        self.entries
            .iter()
            .find(|e| e.surface.iter().map(String::as_str).eq(words.iter().copied()))
            .map(|e| e.label)
    }
}

/// A tokenized sentence together with the text it came from.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Sentence {
    pub tokens: Vec<String>,
    pub raw: String,
}

impl Sentence {
    pub fn from_tokens(tokens: Vec<String>) -> Self {
        let raw = tokens.join(" ");
        Self { tokens, raw }
    }
}

impl fmt::Display for Sentence {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.tokens.join(" "))
    }
}

fn is_word_char(c: char) -> bool {
    c.is_alphanumeric() || c == '_'
}

fn is_joiner(c: char) -> bool {
    matches!(c, '-' | '\'' | '\u{2019}')
}

/// Whitespace-and-punctuation tokenizer.
///
/// Tokens are, in order of preference at each position: a decimal or
/// grouped number (`12.5`, `1,000`), a word with optional internal hyphens
/// or apostrophes (`on-time`, `don't`), or a single other non-space
/// character. Casing is preserved.
pub fn tokenize(text: &str) -> Result<Sentence> {
    let raw = text.trim();
    if raw.is_empty() {
        return Err(Error::EmptyInput);
    }
    let chars: Vec<(usize, char)> = raw.char_indices().collect();
    let byte_at = |i: usize| chars.get(i).map_or(raw.len(), |&(b, _)| b);
    let mut tokens = Vec::new();
    let mut i = 0;
    while i < chars.len() {
        let c = chars[i].1;
        if c.is_whitespace() {
            i += 1;
            continue;
        }
        let end = if c.is_ascii_digit() {
            scan_number(&chars, i).unwrap_or_else(|| scan_word(&chars, i))
        } else if is_word_char(c) {
            scan_word(&chars, i)
        } else {
            i + 1
        };
        tokens.push(raw[byte_at(i)..byte_at(end)].to_string());
        i = end;
    }
    Ok(Sentence {
        tokens,
        raw: raw.to_string(),
    })
}

fn scan_number(chars: &[(usize, char)], start: usize) -> Option<usize> {
    let digit = |i: usize| chars.get(i).is_some_and(|&(_, c)| c.is_ascii_digit());
    let mut i = start;
    while digit(i) {
        i += 1;
    }
    let mut groups = 0;
    while matches!(chars.get(i), Some(&(_, '.' | ','))) && digit(i + 1) {
        i += 1;
        while digit(i) {
            i += 1;
        }
        groups += 1;
    }
    (groups > 0).then_some(i)
}

fn scan_word(chars: &[(usize, char)], start: usize) -> usize {
    let word = |i: usize| chars.get(i).is_some_and(|&(_, c)| is_word_char(c));
    let mut i = start;
    while word(i) {
        i += 1;
    }
    while chars.get(i).is_some_and(|&(_, c)| is_joiner(c)) && word(i + 1) {
        i += 1;
        while word(i) {
            i += 1;
        }
    }
    i
}

/// Splits a paragraph into sentence strings at `.`, `!` or `?` (optionally
/// followed by closing quotes/brackets) when the next non-space character is
/// upper-case, a digit or an opening quote.
pub fn split_sentences(paragraph: &str) -> Vec<String> {
    let chars: Vec<(usize, char)> = paragraph.char_indices().collect();
    let mut out = Vec::new();
    let mut start = 0;
    let mut i = 0;
    while i < chars.len() {
        if matches!(chars[i].1, '.' | '!' | '?') {
            let mut j = i + 1;
            while j < chars.len() && matches!(chars[j].1, '"' | '\'' | ')' | '\u{201d}' | '.' | '!' | '?') {
                j += 1;
            }
            let mut k = j;
            while k < chars.len() && chars[k].1.is_whitespace() {
                k += 1;
            }
            let boundary = k > j
                && k < chars.len()
                && (chars[k].1.is_uppercase()
                    || chars[k].1.is_ascii_digit()
                    || matches!(chars[k].1, '"' | '\u{201c}' | '('));
            if boundary {
                let end = chars[j - 1].0 + chars[j - 1].1.len_utf8();
                let s = paragraph[start..end].trim();
                if !s.is_empty() {
                    out.push(s.to_string());
                }
                start = chars[k].0;
                i = k;
                continue;
            }
            i = j;
            continue;
        }
        i += 1;
    }
    let tail = paragraph[start..].trim();
    if !tail.is_empty() {
        out.push(tail.to_string());
    }
    out
}

/// Location of a sentence-initial connective.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ConnectiveSpan {
    pub label: LabelId,
    /// Number of connective tokens, not counting a following comma.
    pub len: usize,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MatchResult {
    pub label: LabelId,
    pub span: ConnectiveSpan,
    pub stripped: Sentence,
}

/// Finds the longest lexicon surface that opens `s`, honouring comma rules.
pub fn find_connective(s: &Sentence, lex: &ConnectiveLexicon) -> Option<ConnectiveSpan> {
    let mut best: Option<ConnectiveSpan> = None;
    for entry in lex.entries() {
        let n = entry.surface.len();
        if s.tokens.len() < n {
            continue;
        }
        let prefix_matches = entry
            .surface
            .iter()
            .zip(&s.tokens)
            .all(|(want, got)| got.to_lowercase() == *want);
        if !prefix_matches {
            continue;
        }
        if entry.comma_required && s.tokens.get(n).map(String::as_str) != Some(",") {
            continue;
        }
        if best.is_none_or(|b| n > b.len) {
            best = Some(ConnectiveSpan {
                label: entry.label,
                len: n,
            });
        }
    }
    best
}

/// Matches a sentence-initial connective and strips it.
///
/// Connective-only sentences (e.g. `"However,"`) have nothing left after
/// stripping and are reported as `None`; use [`find_connective`] to tell
/// them apart from sentences without a connective.
pub fn match_connective(s: &Sentence, lex: &ConnectiveLexicon) -> Option<MatchResult> {
    let span = find_connective(s, lex)?;
    let stripped = strip_and_recase(s, span).ok()?;
    Some(MatchResult {
        label: span.label,
        span,
        stripped,
    })
}

/// Removes the connective tokens and an immediately following comma, then
/// upper-cases the first character of what remains.
pub fn strip_and_recase(s: &Sentence, span: ConnectiveSpan) -> Result<Sentence> {
    let mut cut = span.len.min(s.tokens.len());
    if s.tokens.get(cut).map(String::as_str) == Some(",") {
        cut += 1;
    }
    if cut >= s.tokens.len() {
        return Err(Error::EmptyRemainder);
    }
    let mut tokens = s.tokens[cut..].to_vec();
    tokens[0] = upper_first(&tokens[0]);

    // Advance through the raw text past each removed token.
    let mut cursor = 0;
    for tok in &s.tokens[..cut] {
        match s.raw[cursor..].find(tok.as_str()) {
            Some(pos) => cursor += pos + tok.len(),
            None => return Ok(Sentence::from_tokens(tokens)),
        }
    }
    let raw = upper_first(s.raw[cursor..].trim_start());
    Ok(Sentence { tokens, raw })
}

fn upper_first(s: &str) -> String {
    let mut chars = s.chars();
    match chars.next() {
        Some(c) => c.to_uppercase().chain(chars).collect(),
        None => String::new(),
    }
}
