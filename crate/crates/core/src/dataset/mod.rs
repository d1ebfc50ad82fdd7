//! Data ingestion: the character alphabet, JSONL manifests, grayscale PGM
//! decoding, and a deterministic synthetic corpus generator.

mod pgm;
mod synth;

pub use pgm::{read_image, read_pgm, write_pgm};
pub use synth::{synth_generate, SynthConfig};

use crate::error::{Error, Result};
use serde::{Deserialize, Serialize};
use std::fmt;
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};

/// Ordered character inventory. Index 0 is the reserved blank token and
/// never appears in a transcript encoding; real characters get ids
/// `1..=len`. The space character must be a member because train-mode
/// transcripts are space-padded.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Alphabet {
    chars: Vec<char>,
}

/// Blank + space + `a-z`: the desk-scale default (28 classes).
pub const DEFAULT_ALPHABET: &str = " abcdefghijklmnopqrstuvwxyz";

impl Alphabet {
    pub fn new(chars: impl IntoIterator<Item = char>) -> Result<Self> {
        let chars: Vec<char> = chars.into_iter().collect();
        if chars.is_empty() {
            return Err(Error::config("alphabet is empty"));
        }
        for (i, &c) in chars.iter().enumerate() {
            if chars[..i].contains(&c) {
                return Err(Error::config(format!("duplicate character {c:?} in alphabet")));
            }
        }
        if !chars.contains(&' ') {
            return Err(Error::config(
                "alphabet must contain the space character (transcripts are space-padded)",
            ));
        }
        Ok(Alphabet { chars })
    }

    pub fn default_lowercase() -> Self {
        Alphabet::new(DEFAULT_ALPHABET.chars()).expect("default alphabet is valid")
    }

    /// Class count including the blank.
    pub fn n_classes(&self) -> usize {
        self.chars.len() + 1
    }

    pub fn contains(&self, c: char) -> bool {
        self.chars.contains(&c)
    }

    pub fn chars(&self) -> &[char] {
        &self.chars
    }

    /// Label id of a character (1-based; 0 is the blank).
    pub fn id_of(&self, c: char) -> Option<usize> {
        self.chars.iter().position(|&x| x == c).map(|i| i + 1)
    }

    /// Encodes a transcript to label ids. Empty transcripts and characters
    /// outside the alphabet are rejected.
    pub fn encode(&self, text: &str) -> Result<Vec<usize>> {
        if text.is_empty() {
            return Err(Error::data("empty transcript"));
        }
        text.chars()
            .map(|c| {
                self.id_of(c).ok_or_else(|| {
                    Error::data(format!("character {c:?} is not in the alphabet"))
                })
            })
            .collect()
    }

    /// Decodes label ids back to text; the blank id is rejected.
    pub fn decode(&self, ids: &[usize]) -> Result<String> {
        ids.iter()
            .map(|&id| {
                if id == 0 || id > self.chars.len() {
                    Err(Error::data(format!("label id {id} has no character")))
                } else {
                    Ok(self.chars[id - 1])
                }
            })
            .collect()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Val,
    Test,
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Split::Train => write!(f, "train"),
            Split::Val => write!(f, "val"),
            Split::Test => write!(f, "test"),
        }
    }
}

/// One manifest record: an image locator plus its transcript.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub image: PathBuf,
    pub text: String,
}

/// Validated corpus index for one split.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct DatasetIndex {
    pub entries: Vec<ManifestEntry>,
    pub split: Split,
}

impl DatasetIndex {
    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }
}

/// Loads a JSON Lines manifest (`{"image": ..., "text": ...}` per line),
/// checking every transcript against the alphabet. Relative image paths are
/// resolved against the manifest's directory.
pub fn load_manifest(path: &Path, alphabet: &Alphabet, split: Split) -> Result<DatasetIndex> {
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let base = path.parent().unwrap_or(Path::new(""));
    let mut entries = Vec::new();
    for (lineno, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        let lineno = lineno + 1;
        if line.trim().is_empty() {
            continue;
        }
        let rec: ManifestEntry = serde_json::from_str(&line).map_err(|e| {
            Error::data(format!("{}:{lineno}: malformed record: {e}", path.display()))
        })?;
        if rec.text.trim().is_empty() {
            return Err(Error::data(format!(
                "{}:{lineno}: empty transcript",
                path.display()
            )));
        }
        if let Some(bad) = rec.text.chars().find(|&c| !alphabet.contains(c)) {
            return Err(Error::data(format!(
                "{}:{lineno}: character {bad:?} is not in the alphabet",
                path.display()
            )));
        }
        let image = if rec.image.is_absolute() {
            rec.image
        } else {
            base.join(rec.image)
        };
        entries.push(ManifestEntry { image, text: rec.text });
    }
    Ok(DatasetIndex { entries, split })
}

/// Writes a JSON Lines manifest.
pub fn write_manifest(path: &Path, entries: &[ManifestEntry]) -> Result<()> {
    let mut file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    for entry in entries {
        let line = serde_json::to_string(entry)
            .map_err(|e| Error::data(format!("manifest serialization: {e}")))?;
        writeln!(file, "{line}").map_err(|e| Error::io(path, e))?;
    }
    Ok(())
}
