use std::io::Read;

use crate::{Error, Result};

/// Extracts the utterance from an LRS3-style transcript (`Text:  ...` line),
/// uppercased with whitespace runs collapsed.
pub fn parse_transcript<R: Read>(mut input: R) -> Result<String> {
    let mut text = String::new();
    input
        .read_to_string(&mut text)
        .map_err(|e| Error::Format(format!("transcript is not valid UTF-8 text: {e}")))?;
    let line = text
        .lines()
        .find_map(|l| l.trim_start().strip_prefix("Text:"))
        .ok_or_else(|| Error::Format("transcript has no `Text:` line".into()))?;
    Ok(line.split_whitespace().collect::<Vec<_>>().join(" ").to_uppercase())
}
