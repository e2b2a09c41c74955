use alloc::string::{String, ToString};
use alloc::vec::Vec;

use crate::error::{bail, Result};

pub type TokenId = usize;

pub const PAD: &str = "<pad>";
pub const BOS: &str = "<bos>";
pub const EOS: &str = "<eos>";
pub const UNK: &str = "<unk>";

const SPECIALS: [&str; 4] = [PAD, BOS, EOS, UNK];
const DIGITS: [&str; 10] = ["0", "1", "2", "3", "4", "5", "6", "7", "8", "9"];
const UNITS: [&str; 7] = ["mm", "cm", "m", "km", "in", "ft", "yd"];
const WORDS: [&str; 36] = [
    ".", "?", "how", "tall", "wide", "high", "far", "is", "the", "above", "floor", "from", "camera", "left", "right",
    "to", "across", "it", "object", "chair", "table", "cup", "book", "lamp", "box", "plant", "bottle", "what", "height",
    "width", "of", "vertical", "horizontal", "direct", "distance", "about",
];

/// Bijective token <-> id table. Ids are line numbers of the serialized form.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Vocab {
    tokens: Vec<String>,
}

impl Vocab {
    /// Specials, digits, the decimal point, unit abbreviations and the task
    /// words used by the synthetic spatial questions.
    pub fn spatial() -> Self {
        let tokens = SPECIALS.iter().chain(&DIGITS).chain(&UNITS).chain(&WORDS).map(|s| s.to_string()).collect();
        Self { tokens }
    }

    pub fn from_tokens(tokens: Vec<String>) -> Result<Self> {
        for (i, t) in tokens.iter().enumerate() {
            if t.is_empty() || t.contains(char::is_whitespace) {
                bail!(Config, "invalid vocabulary token {:?}", t);
            }
            if tokens[..i].contains(t) {
                bail!(Config, "duplicate vocabulary token {:?}", t);
            }
        }
        for s in SPECIALS {
            if !tokens.iter().any(|t| t == s) {
                bail!(Config, "vocabulary lacks special token {}", s);
            }
        }
        Ok(Self { tokens })
    }

    /// One token per line.
    pub fn to_lines(&self) -> String {
        let mut s = String::new();
        for t in &self.tokens {
            s.push_str(t);
            s.push('\n');
        }
        s
    }

    pub fn from_lines(text: &str) -> Result<Self> {
        Self::from_tokens(text.lines().filter(|l| !l.is_empty()).map(str::to_string).collect())
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn id(&self, token: &str) -> Option<TokenId> {
        self.tokens.iter().position(|t| t == token)
    }

    pub fn token(&self, id: TokenId) -> Option<&str> {
        self.tokens.get(id).map(String::as_str)
    }

    pub fn special(&self, token: &str) -> TokenId {
        self.id(token).expect("specials are validated at construction")
    }

    pub fn eos(&self) -> TokenId {
        self.special(EOS)
    }

    pub fn bos(&self) -> TokenId {
        self.special(BOS)
    }

    /// Splits on whitespace; numbers are split into single digits and the
    /// decimal point, and a trailing `?` is its own token.
    pub fn encode(&self, text: &str) -> Result<Vec<TokenId>> {
        let mut out = Vec::new();
        for word in text.split_whitespace() {
            let word = word.to_lowercase();
            let (body, q) = match word.strip_suffix('?') {
                Some(b) => (b.to_string(), true),
                None => (word, false),
            };
            if !body.is_empty() {
                if body.chars().all(|c| c.is_ascii_digit() || c == '.') {
                    for c in body.chars() {
                        out.push(self.lookup(c.encode_utf8(&mut [0; 4]))?);
                    }
                } else {
                    out.push(self.lookup(&body)?);
                }
            }
            if q {
                out.push(self.lookup("?")?);
            }
        }
        Ok(out)
    }

    fn lookup(&self, t: &str) -> Result<TokenId> {
        match self.id(t) {
            Some(i) => Ok(i),
            None => bail!(Index, "token {:?} not in vocabulary", t),
        }
    }

    /// Inverse of [`Vocab::encode`] for answer strings: digit and `.` runs
    /// are glued, other tokens space-separated. Specials are skipped.
    pub fn decode(&self, ids: &[TokenId]) -> String {
        let mut s = String::new();
        let mut prev_numeric = false;
        for &id in ids {
            let Some(t) = self.token(id) else { continue };
            if SPECIALS.contains(&t) {
                continue;
            }
            let numeric = t.len() == 1 && (t == "." || t.as_bytes()[0].is_ascii_digit());
            if !s.is_empty() && !(numeric && prev_numeric) {
                s.push(' ');
            }
            s.push_str(t);
            prev_numeric = numeric;
        }
        s
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn spatial_vocab_is_bijective() {
        let v = Vocab::spatial();
        assert!(v.len() <= 64);
        for i in 0..v.len() {
            assert_eq!(v.id(v.token(i).unwrap()), Some(i));
        }
        assert_eq!(Vocab::from_lines(&v.to_lines()).unwrap(), v);
    }

    #[test]
    fn encode_decode_answers() {
        let v = Vocab::spatial();
        let ids = v.encode("1.2 m").unwrap();
        assert_eq!(ids.len(), 4);
        assert_eq!(v.decode(&ids), "1.2 m");
        assert_eq!(v.decode(&v.encode("86 cm").unwrap()), "86 cm");
        let q = v.encode("How tall is the chair?").unwrap();
        assert_eq!(v.token(*q.last().unwrap()), Some("?"));
        assert!(v.encode("zebra").is_err());
    }

    #[test]
    fn rejects_missing_specials_and_duplicates() {
        assert!(Vocab::from_tokens(alloc::vec!["a".into()]).is_err());
        let mut t: Vec<String> = SPECIALS.iter().map(|s| s.to_string()).collect();
        t.push(PAD.into());
        assert!(Vocab::from_tokens(t).is_err());
    }
}
