use serde::{Deserialize, Serialize};

use crate::{Error, Result};

/// Ordered character vocabulary; a token id is a position in `symbols`.
///
/// The default set has 30 symbols: `A`–`Z`, space, apostrophe, `.` and `,`.
/// Sentence-final `?` and `!` encode as `.`; `-` encodes as `,`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Charset {
    symbols: Vec<char>,
}

impl Default for Charset {
    fn default() -> Self {
        let mut symbols: Vec<char> = ('A'..='Z').collect();
        symbols.extend([' ', '\'', '.', ',']);
        Self { symbols }
    }
}

impl Charset {
    pub fn from_symbols(symbols: Vec<char>) -> Result<Self> {
        let mut seen = std::collections::HashSet::new();
        if symbols.is_empty() || !symbols.iter().all(|c| seen.insert(*c)) {
            return Err(Error::Format("charset must be non-empty with unique symbols".into()));
        }
        Ok(Self { symbols })
    }

    pub fn len(&self) -> usize {
        self.symbols.len()
    }

    pub fn is_empty(&self) -> bool {
        self.symbols.is_empty()
    }

    pub fn symbols(&self) -> &[char] {
        &self.symbols
    }

    pub fn as_string(&self) -> String {
        self.symbols.iter().collect()
    }

    pub fn id(&self, ch: char) -> Option<usize> {
        let canonical = match ch {
            '?' | '!' => '.',
            '-' => ',',
            c => c,
        };
        self.symbols
            .iter()
            .position(|&s| s == canonical)
            .or_else(|| self.symbols.iter().position(|&s| s == ch))
    }

    pub fn decode(&self, ids: &[usize]) -> String {
        ids.iter().filter_map(|&i| self.symbols.get(i)).collect()
    }
}

/// Maps each character of `text` to its id in `charset`.
pub fn encode_text(text: &str, charset: &Charset) -> Result<Vec<usize>> {
    text.chars()
        .enumerate()
        .map(|(offset, ch)| charset.id(ch).ok_or(Error::Vocabulary { ch, offset }))
        .collect()
}
