//! Feature vectors φ(x) for the log-linear factor.
//!
//! The registry has seven binary features in a frozen order: the motif
//! itself followed by six distractors with little predictive value for
//! motif containment. A 7-bit mask selects which are active, and an `Mv`
//! prefix appends the two length components `M = |x|/max_len` and
//! `v = |x|²/max_len²`.

use std::fmt;
use std::str::FromStr;

use crate::error::{GamError, Result};
use crate::sequence::{parse_bits, Sequence};

pub const REGISTRY_LEN: usize = 7;

/// One binary feature of the registry.
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub enum BinaryFeature {
    /// Containment of the experiment's motif.
    Motif,
    /// Containment of a fixed substring.
    Contains(Vec<u8>),
    FirstBitOne,
    LastBitOne,
    /// Even number of ones.
    EvenParity,
}

impl BinaryFeature {
    pub fn eval(&self, x: &Sequence, motif: &[u8]) -> bool {
        match self {
            BinaryFeature::Motif => x.contains(motif),
            BinaryFeature::Contains(p) => x.contains(p),
            BinaryFeature::FirstBitOne => x.bits().first() == Some(&1),
            BinaryFeature::LastBitOne => x.bits().last() == Some(&1),
            BinaryFeature::EvenParity => x.bits().iter().filter(|&&b| b == 1).count() % 2 == 0,
        }
    }

    pub fn name(&self) -> String {
        match self {
            BinaryFeature::Motif => "motif".into(),
            BinaryFeature::Contains(p) => format!("has_{}", Sequence::new(p.clone())),
            BinaryFeature::FirstBitOne => "first1".into(),
            BinaryFeature::LastBitOne => "last1".into(),
            BinaryFeature::EvenParity => "parity".into(),
        }
    }
}

impl FromStr for BinaryFeature {
    type Err = GamError;

    fn from_str(s: &str) -> Result<Self> {
        Ok(match s {
            "motif" => BinaryFeature::Motif,
            "first1" => BinaryFeature::FirstBitOne,
            "last1" => BinaryFeature::LastBitOne,
            "parity" => BinaryFeature::EvenParity,
            other => {
                let bits = other.strip_prefix("has_").unwrap_or(other);
                BinaryFeature::Contains(parse_bits(bits, "feature")?)
            }
        })
    }
}

/// The default registry, in canonical order.
pub fn default_registry() -> Vec<BinaryFeature> {
    vec![
        BinaryFeature::Motif,
        BinaryFeature::Contains(vec![1, 1, 1, 1, 0]),
        BinaryFeature::Contains(vec![0, 0, 1, 0, 0]),
        BinaryFeature::FirstBitOne,
        BinaryFeature::LastBitOne,
        BinaryFeature::Contains(vec![0, 1, 0, 1]),
        BinaryFeature::EvenParity,
    ]
}

/// Parses a comma-separated list of six distractors (registry positions 2..7).
pub fn parse_distractors(text: &str) -> Result<Vec<BinaryFeature>> {
    let items: Vec<BinaryFeature> = text
        .split(',')
        .map(|t| t.trim().parse())
        .collect::<Result<_>>()?;
    if items.len() != REGISTRY_LEN - 1 {
        return Err(GamError::config(format!(
            "expected {} distractors, got {}",
            REGISTRY_LEN - 1,
            items.len()
        )));
    }
    if items.contains(&BinaryFeature::Motif) {
        return Err(GamError::config("the motif feature is fixed at registry position 1"));
    }
    Ok(std::iter::once(BinaryFeature::Motif).chain(items).collect())
}

/// `1001111`-style selection over the registry, optionally prefixed `Mv`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct FeatureMask {
    pub binary: [bool; REGISTRY_LEN],
    pub length_on: bool,
}

impl FeatureMask {
    pub fn binary_active(&self) -> usize {
        self.binary.iter().filter(|&&b| b).count()
    }

    pub fn active_count(&self) -> usize {
        self.binary_active() + if self.length_on { 2 } else { 0 }
    }
}

impl FromStr for FeatureMask {
    type Err = GamError;

    fn from_str(text: &str) -> Result<Self> {
        let err = |reason: String| GamError::Parse { what: "feature mask", text: text.into(), reason };
        let (length_on, bits) = match text.strip_prefix("Mv") {
            Some(rest) => (true, rest),
            None => (false, text),
        };
        let mut binary = [false; REGISTRY_LEN];
        let mut count = 0;
        for (i, c) in bits.chars().enumerate() {
            if i >= REGISTRY_LEN {
                return Err(err(format!("more than {REGISTRY_LEN} mask bits")));
            }
            binary[i] = match c {
                '0' => false,
                '1' => true,
                other => {
                    let pos = i + if length_on { 2 } else { 0 };
                    return Err(err(format!("offending character {other:?} at position {pos}")));
                }
            };
            count += 1;
        }
        if count != REGISTRY_LEN {
            return Err(err(format!("expected {REGISTRY_LEN} mask bits, got {count}")));
        }
        Ok(FeatureMask { binary, length_on })
    }
}

impl fmt::Display for FeatureMask {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.length_on {
            f.write_str("Mv")?;
        }
        for &b in &self.binary {
            f.write_str(if b { "1" } else { "0" })?;
        }
        Ok(())
    }
}

/// A mask bound to a motif, a registry and the length normalizer.
#[derive(Clone, Debug, PartialEq)]
pub struct FeatureSet {
    mask: FeatureMask,
    motif: Vec<u8>,
    max_len: usize,
    active: Vec<BinaryFeature>,
}

impl FeatureSet {
    pub fn new(mask: FeatureMask, motif: &[u8], max_len: usize) -> Self {
        FeatureSet::with_registry(mask, motif, max_len, default_registry())
    }

    pub fn with_registry(mask: FeatureMask, motif: &[u8], max_len: usize, registry: Vec<BinaryFeature>) -> Self {
        assert_eq!(registry.len(), REGISTRY_LEN);
        assert!(max_len > 0);
        let active = registry
            .into_iter()
            .zip(mask.binary)
            .filter_map(|(f, on)| on.then_some(f))
            .collect();
        FeatureSet { mask, motif: motif.to_vec(), max_len, active }
    }

    pub fn mask(&self) -> FeatureMask {
        self.mask
    }

    pub fn motif(&self) -> &[u8] {
        &self.motif
    }

    pub fn max_len(&self) -> usize {
        self.max_len
    }

    pub fn dim(&self) -> usize {
        self.mask.active_count()
    }

    /// Count of leading binary entries; the length pair, if any, follows.
    pub fn binary_dim(&self) -> usize {
        self.active.len()
    }

    pub fn length_on(&self) -> bool {
        self.mask.length_on
    }

    pub fn names(&self) -> Vec<String> {
        let mut names: Vec<String> = self.active.iter().map(BinaryFeature::name).collect();
        if self.mask.length_on {
            names.push("M".into());
            names.push("v".into());
        }
        names
    }

    pub fn phi(&self, x: &Sequence) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.dim());
        self.phi_into(x, &mut out);
        out
    }

    pub fn phi_into(&self, x: &Sequence, out: &mut Vec<f64>) {
        out.clear();
        out.extend(
            self.active
                .iter()
                .map(|f| if f.eval(x, &self.motif) { 1.0 } else { 0.0 }),
        );
        if self.mask.length_on {
            let m = x.len() as f64 / self.max_len as f64;
            out.push(m);
            out.push(m * m);
        }
    }

    /// Length features leave [0, 1] for sequences longer than `max_len`.
    pub fn length_overflow(&self, x: &Sequence) -> bool {
        self.mask.length_on && x.len() > self.max_len
    }

    /// Mean feature vector over a dataset.
    pub fn data_moment(&self, data: &[Sequence]) -> Result<Vec<f64>> {
        if data.is_empty() {
            return Err(GamError::EmptyDataset("data moment of an empty dataset"));
        }
        let mut acc = vec![0.0; self.dim()];
        let mut buf = Vec::with_capacity(self.dim());
        for x in data {
            self.phi_into(x, &mut buf);
            for (a, v) in acc.iter_mut().zip(&buf) {
                *a += v;
            }
        }
        let k = data.len() as f64;
        Ok(acc.into_iter().map(|a| a / k).collect())
    }
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}
