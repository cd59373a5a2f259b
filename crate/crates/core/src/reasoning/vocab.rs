use std::collections::HashMap;
use std::path::Path;

use crate::error::{Error, Result};

pub const PAD: &str = "<pad>";
pub const BOS: &str = "<bos>";
pub const EOS: &str = "<eos>";
pub const TRJ: &str = "<TRJ>";
pub const PLH: &str = "<PLH>";

/// Reserved tokens, always ids 0..5 in this order.
pub const RESERVED: [&str; 5] = [PAD, BOS, EOS, TRJ, PLH];

const PUNCT: [char; 3] = [',', '.', '?'];

pub const COLORS: [&str; 8] = [
    "red", "green", "blue", "yellow", "cyan", "magenta", "orange", "white",
];
pub const SHAPES: [&str; 3] = ["circle", "square", "triangle"];
pub const SIZES: [&str; 2] = ["small", "large"];

const TEMPLATE_WORDS: [&str; 12] = [
    "Can", "you", "segment", "the", "in", "this", "video", "describe", "Sure", ",", ".", "?",
];

const DESCRIPTION_WORDS: [&str; 34] = [
    "moving", "left", "right", "up", "down", "staying", "still", "bouncing", "sideways",
    "vertically", "that", "is", "a", "object", "shape", "which", "and", "then", "leaves",
    "enters", "scene", "slowly", "quickly", "from", "to", "top", "bottom", "side", "of",
    "frame", "while", "around", "other", "shapes",
];

/// Closed word-level vocabulary with a fixed reserved prefix.
#[derive(Clone, Debug, PartialEq)]
pub struct Vocabulary {
    tokens: Vec<String>,
    ids: HashMap<String, usize>,
}

impl Vocabulary {
    pub fn new(tokens: Vec<String>) -> Result<Self> {
        for (i, r) in RESERVED.iter().enumerate() {
            if tokens.get(i).map(String::as_str) != Some(*r) {
                return Err(Error::Format(format!(
                    "vocabulary line {} must be {r}",
                    i + 1
                )));
            }
        }
        let mut ids = HashMap::with_capacity(tokens.len());
        for (i, t) in tokens.iter().enumerate() {
            if t.is_empty() || t.chars().any(char::is_whitespace) {
                return Err(Error::Format(format!("invalid token {t:?} at line {}", i + 1)));
            }
            if ids.insert(t.clone(), i).is_some() {
                return Err(Error::Format(format!("duplicate token {t:?}")));
            }
        }
        Ok(Vocabulary { tokens, ids })
    }

    /// The built-in vocabulary covering every instruction and description
    /// the synthetic generator can produce.
    pub fn synthetic() -> Self {
        let tokens = RESERVED
            .iter()
            .chain(TEMPLATE_WORDS.iter())
            .chain(COLORS.iter())
            .chain(SHAPES.iter())
            .chain(SIZES.iter())
            .chain(DESCRIPTION_WORDS.iter())
            .map(|s| s.to_string())
            .collect();
        Self::new(tokens).expect("built-in vocabulary is valid")
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn id(&self, token: &str) -> Option<usize> {
        self.ids.get(token).copied()
    }

    pub fn token(&self, id: usize) -> Option<&str> {
        self.tokens.get(id).map(String::as_str)
    }

    pub fn pad(&self) -> usize {
        0
    }
    pub fn bos(&self) -> usize {
        1
    }
    pub fn eos(&self) -> usize {
        2
    }
    pub fn trj(&self) -> usize {
        3
    }
    pub fn placeholder(&self) -> usize {
        4
    }

    /// Whitespace word split; trailing `,` `.` `?` become their own tokens.
    pub fn tokenize(&self, text: &str) -> Result<Vec<usize>> {
        let mut out = Vec::new();
        for chunk in text.split_whitespace() {
            let mut word = chunk;
            let mut trailing = Vec::new();
            while word.len() > 1 && word.ends_with(PUNCT) {
                let (head, tail) = word.split_at(word.len() - 1);
                trailing.push(tail);
                word = head;
            }
            for piece in std::iter::once(word).chain(trailing.into_iter().rev()) {
                out.push(
                    self.id(piece)
                        .ok_or_else(|| Error::Tokenize(piece.to_string()))?,
                );
            }
        }
        Ok(out)
    }

    /// Inverse of [`Self::tokenize`]: punctuation attaches to the previous word.
    pub fn detokenize(&self, ids: &[usize]) -> Result<String> {
        let mut out = String::new();
        for &id in ids {
            let tok = self
                .token(id)
                .ok_or_else(|| Error::Input(format!("token id {id} outside vocabulary")))?;
            let is_punct = tok.len() == 1 && tok.ends_with(PUNCT);
            if !out.is_empty() && !is_punct {
                out.push(' ');
            }
            out.push_str(tok);
        }
        Ok(out)
    }

    /// One token per line, UTF-8, line index = id.
    pub fn to_file_string(&self) -> String {
        let mut s = self.tokens.join("\n");
        s.push('\n');
        s
    }

    pub fn parse(text: &str) -> Result<Self> {
        Self::new(text.lines().map(str::to_string).collect())
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_file_string()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text)
    }
}
