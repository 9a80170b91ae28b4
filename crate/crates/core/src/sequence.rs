use std::fmt;
use std::str::FromStr;

use crate::error::GamError;

/// Vocabulary index of the end-of-sequence symbol. It doubles as the
/// begin-of-sequence input at the first decoding step.
pub const EOS: usize = 2;
pub const VOCAB: usize = 3;

/// A finite binary payload; the terminator is implicit and never stored.
#[derive(Clone, Debug, Default, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Sequence(Vec<u8>);

impl Sequence {
    pub fn new(bits: Vec<u8>) -> Self {
        debug_assert!(bits.iter().all(|&b| b <= 1));
        Sequence(bits)
    }

    pub fn empty() -> Self {
        Sequence(Vec::new())
    }

    pub fn bits(&self) -> &[u8] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    /// Number of decoding steps: payload plus terminator.
    pub fn tokens(&self) -> usize {
        self.0.len() + 1
    }

    pub fn push(&mut self, bit: u8) {
        debug_assert!(bit <= 1);
        self.0.push(bit);
    }

    /// True if `pattern` occurs as a contiguous substring.
    pub fn contains(&self, pattern: &[u8]) -> bool {
        if pattern.is_empty() {
            return true;
        }
        self.0.windows(pattern.len()).any(|w| w == pattern)
    }

    /// All 2^len payloads of a given length, in lexicographic order.
    pub fn all_of_length(len: usize) -> impl Iterator<Item = Sequence> {
        assert!(len < 32, "enumeration only makes sense for short strings");
        (0u32..(1u32 << len)).map(move |code| {
            Sequence((0..len).map(|i| ((code >> (len - 1 - i)) & 1) as u8).collect())
        })
    }

    /// All payloads of length 0..=max_len.
    pub fn all_up_to(max_len: usize) -> impl Iterator<Item = Sequence> {
        (0..=max_len).flat_map(Sequence::all_of_length)
    }
}

impl From<Vec<u8>> for Sequence {
    fn from(bits: Vec<u8>) -> Self {
        Sequence::new(bits)
    }
}

impl fmt::Display for Sequence {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for &b in &self.0 {
            f.write_str(if b == 0 { "0" } else { "1" })?;
        }
        Ok(())
    }
}

impl FromStr for Sequence {
    type Err = GamError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        parse_bits(s, "bit string").map(Sequence)
    }
}

/// Parses an ASCII string over {0,1}.
pub fn parse_bits(s: &str, what: &'static str) -> Result<Vec<u8>, GamError> {
    s.chars()
        .enumerate()
        .map(|(i, c)| match c {
            '0' => Ok(0),
            '1' => Ok(1),
            other => Err(GamError::Parse {
                what,
                text: s.to_string(),
                reason: format!("character {other:?} at position {i} is not a bit"),
            }),
        })
        .collect()
}

/// Cross-entropy accounting shared by every metric: nats summed over
/// sequences together with the number of decoding steps they span.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct NatsTally {
    pub nats: f64,
    pub tokens: usize,
    pub sequences: usize,
}

impl NatsTally {
    pub fn add(&mut self, nll: f64, seq: &Sequence) {
        self.nats += nll;
        self.tokens += seq.tokens();
        self.sequences += 1;
    }

    pub fn merge(self, other: NatsTally) -> NatsTally {
        NatsTally {
            nats: self.nats + other.nats,
            tokens: self.tokens + other.tokens,
            sequences: self.sequences + other.sequences,
        }
    }

    pub fn per_token(&self) -> f64 {
        self.nats / self.tokens as f64
    }

    pub fn per_sequence(&self) -> f64 {
        self.nats / self.sequences as f64
    }
}
