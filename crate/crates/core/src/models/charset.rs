use std::collections::{BTreeSet, HashMap};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Ordered character inventory of the recognizer. Class `i < len()` is
/// `chars[i]`; the CTC blank is the extra class `len()`.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "Vec<char>", into = "Vec<char>")]
pub struct Charset {
    chars: Vec<char>,
    #[serde(skip)]
    index: HashMap<char, usize>,
}

impl Charset {
    pub fn new(chars: Vec<char>) -> Result<Self> {
        let mut index = HashMap::with_capacity(chars.len());
        for (i, &ch) in chars.iter().enumerate() {
            if index.insert(ch, i).is_some() {
                return Err(Error::Argument(format!("duplicate charset entry {ch:?}")));
            }
        }
        Ok(Self { chars, index })
    }

    /// Sorted union of the characters of `texts`.
    pub fn from_texts<'a>(texts: impl IntoIterator<Item = &'a str>) -> Self {
        let set: BTreeSet<char> = texts.into_iter().flat_map(str::chars).collect();
        Self::new(set.into_iter().collect()).expect("set entries are unique")
    }

    pub fn len(&self) -> usize {
        self.chars.len()
    }

    pub fn is_empty(&self) -> bool {
        self.chars.is_empty()
    }

    pub fn blank_index(&self) -> usize {
        self.chars.len()
    }

    /// Recognizer output classes: characters plus blank.
    pub fn class_count(&self) -> usize {
        self.chars.len() + 1
    }

    pub fn chars(&self) -> &[char] {
        &self.chars
    }

    pub fn index_of(&self, ch: char) -> Option<usize> {
        self.index.get(&ch).copied()
    }

    pub fn char_at(&self, index: usize) -> Option<char> {
        self.chars.get(index).copied()
    }

    pub fn contains_all(&self, text: &str) -> bool {
        text.chars().all(|c| self.index.contains_key(&c))
    }
}

impl TryFrom<Vec<char>> for Charset {
    type Error = Error;

    fn try_from(chars: Vec<char>) -> Result<Self> {
        Self::new(chars)
    }
}

impl From<Charset> for Vec<char> {
    fn from(c: Charset) -> Self {
        c.chars
    }
}

/// Maps each character of `text` to its class index.
pub fn encode_transcription(text: &str, charset: &Charset) -> Result<Vec<usize>> {
    text.chars()
        .map(|ch| charset.index_of(ch).ok_or(Error::Vocabulary { ch }))
        .collect()
}

/// Label indices back to text; indices outside the charset (including the
/// blank) are skipped.
pub fn decode_labels(labels: &[usize], charset: &Charset) -> String {
    labels.iter().filter_map(|&i| charset.char_at(i)).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn encode_examples() {
        let cs = Charset::new(vec!['a', 'b']).unwrap();
        assert_eq!(encode_transcription("", &cs).unwrap(), Vec::<usize>::new());
        assert_eq!(encode_transcription("ab", &cs).unwrap(), vec![0, 1]);
        match encode_transcription("ax", &cs) {
            Err(Error::Vocabulary { ch }) => assert_eq!(ch, 'x'),
            other => panic!("expected vocabulary error, got {other:?}"),
        }
    }

    #[test]
    fn blank_is_last_class() {
        let cs = Charset::from_texts(["cab", "bad"]);
        assert_eq!(cs.chars(), &['a', 'b', 'c', 'd']);
        assert_eq!(cs.blank_index(), 4);
        assert_eq!(cs.class_count(), 5);
    }

    #[test]
    fn encode_counts_codepoints() {
        let cs = Charset::from_texts(["سلام"]);
        assert_eq!(encode_transcription("سلام", &cs).unwrap().len(), 4);
    }

    #[test]
    fn serde_round_trip_rebuilds_index() {
        let cs = Charset::from_texts(["hello world"]);
        let json = serde_json::to_string(&cs).unwrap();
        let back: Charset = serde_json::from_str(&json).unwrap();
        assert_eq!(back, cs);
        assert_eq!(back.index_of('w'), cs.index_of('w'));
        assert!(serde_json::from_str::<Charset>("[\"a\",\"a\"]").is_err());
    }
}
