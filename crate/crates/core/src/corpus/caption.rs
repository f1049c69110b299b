use std::fmt;

use crate::error::{Error, Result};

pub const CAPTION_ARITY: usize = 5;

/// Exactly five lowercase tactile adjectives.
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct TactileCaption {
    adjectives: Vec<String>,
}

impl TactileCaption {
    pub fn new<S: AsRef<str>>(adjectives: &[S]) -> Result<Self> {
        let joined = adjectives
            .iter()
            .map(|s| s.as_ref())
            .collect::<Vec<_>>()
            .join(", ");
        validate_caption(&joined)
    }

    pub fn adjectives(&self) -> &[String] {
        &self.adjectives
    }

    /// Sorted adjectives joined by commas; equal for any reordering.
    pub fn canonical(&self) -> String {
        let mut sorted = self.adjectives.clone();
        sorted.sort();
        sorted.join(",")
    }
}

impl fmt::Display for TactileCaption {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.adjectives.join(", "))
    }
}

fn reject(reason: impl Into<String>, raw: &str) -> Error {
    Error::Caption {
        reason: reason.into(),
        raw: raw.to_string(),
    }
}

fn strip_token(tok: &str) -> &str {
    tok.trim()
        .trim_matches(|c: char| c == '"' || c == '\'')
        .trim_end_matches(['.', '!', '?', ';', ':'])
        .trim()
}

/// Parses a comma-separated captioner response into a [`TactileCaption`].
///
/// Tokens are trimmed, lowercased and stripped of quotes and trailing
/// punctuation. Exactly five non-empty tokens must remain.
pub fn validate_caption(text: &str) -> Result<TactileCaption> {
    let body = text.trim();
    let body = body.strip_suffix('.').unwrap_or(body);
    let mut adjectives = Vec::with_capacity(CAPTION_ARITY);
    for (i, tok) in body.split(',').enumerate() {
        let tok = strip_token(tok);
        if tok.is_empty() {
            return Err(reject(format!("empty token at position {}", i + 1), text));
        }
        if tok.chars().any(char::is_control) {
            return Err(reject(
                format!("control character in token at position {}", i + 1),
                text,
            ));
        }
        adjectives.push(tok.to_lowercase());
    }
    if adjectives.len() != CAPTION_ARITY {
        return Err(reject(
            format!("expected {CAPTION_ARITY} adjectives, got count {}", adjectives.len()),
            text,
        ));
    }
    Ok(TactileCaption { adjectives })
}
