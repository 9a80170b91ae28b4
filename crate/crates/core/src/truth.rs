//! The synthetic "white noise filtered by a motif" process.
//!
//! Length-`n` strings are uniform over those that contain the motif. A
//! substring-containment automaton plus a table of completion counts gives
//! exact counting, scoring, entropy, and uniform sampling.

use std::io::{BufRead, Write};

use num_bigint::BigUint;
use num_traits::{One, ToPrimitive, Zero};
use rand::Rng;

use crate::error::{GamError, Result};
use crate::model::{SequenceModel, SequenceSampler};
use crate::rng;
use crate::sequence::{parse_bits, Sequence};

/// Substring-containment DFA with an absorbing accept state.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct MotifAutomaton {
    motif: Vec<u8>,
    // transition[state][bit]
    transition: Vec<[usize; 2]>,
}

impl MotifAutomaton {
    /// Builds the automaton for `motif`. `max_len` is the length of the
    /// strings it will run on; a longer motif can never occur.
    pub fn new(motif: &[u8], max_len: usize) -> Result<Self> {
        if motif.is_empty() {
            return Err(GamError::config("motif must not be empty"));
        }
        if motif.len() > max_len {
            return Err(GamError::config(format!(
                "motif of length {} cannot occur in strings of length {max_len}",
                motif.len()
            )));
        }
        if motif.iter().any(|&b| b > 1) {
            return Err(GamError::config("motif must be a bit string"));
        }
        let m = motif.len();
        // Prefix function: fail[i] is the length of the longest proper prefix
        // of motif[..=i] that is also its suffix.
        let mut fail = vec![0usize; m];
        for i in 1..m {
            let mut k = fail[i - 1];
            while k > 0 && motif[i] != motif[k] {
                k = fail[k - 1];
            }
            if motif[i] == motif[k] {
                k += 1;
            }
            fail[i] = k;
        }
        let mut transition = vec![[0usize; 2]; m + 1];
        for s in 0..=m {
            for b in 0..2u8 {
                transition[s][b as usize] = if s == m {
                    m
                } else if motif[s] == b {
                    s + 1
                } else if s == 0 {
                    0
                } else {
                    transition[fail[s - 1]][b as usize]
                };
            }
        }
        Ok(MotifAutomaton { motif: motif.to_vec(), transition })
    }

    pub fn parse(motif: &str, max_len: usize) -> Result<Self> {
        MotifAutomaton::new(&parse_bits(motif, "motif")?, max_len)
    }

    pub fn motif(&self) -> &[u8] {
        &self.motif
    }

    pub fn motif_string(&self) -> String {
        Sequence::new(self.motif.clone()).to_string()
    }

    pub fn num_states(&self) -> usize {
        self.transition.len()
    }

    pub fn accept_state(&self) -> usize {
        self.motif.len()
    }

    #[inline]
    pub fn step(&self, state: usize, bit: u8) -> usize {
        self.transition[state][bit as usize]
    }

    pub fn run(&self, bits: &[u8]) -> usize {
        bits.iter().fold(0, |s, &b| self.step(s, b))
    }

    pub fn accepts(&self, bits: &[u8]) -> bool {
        self.run(bits) == self.accept_state()
    }
}

/// `counts[p][s]`: number of ways to finish a length-`n` string from
/// position `p` in automaton state `s` so that the motif occurs.
#[derive(Clone, Debug)]
pub struct CompletionTable {
    automaton: MotifAutomaton,
    n: usize,
    counts: Vec<Vec<BigUint>>,
}

impl CompletionTable {
    pub fn new(automaton: MotifAutomaton, n: usize) -> Result<Self> {
        if automaton.motif().len() > n {
            return Err(GamError::config(format!(
                "motif of length {} is longer than n = {n}",
                automaton.motif().len()
            )));
        }
        let states = automaton.num_states();
        let accept = automaton.accept_state();
        let mut counts = vec![vec![BigUint::zero(); states]; n + 1];
        counts[n][accept] = BigUint::one();
        for p in (0..n).rev() {
            for s in 0..states {
                let c = &counts[p + 1][automaton.step(s, 0)] + &counts[p + 1][automaton.step(s, 1)];
                counts[p][s] = c;
            }
        }
        Ok(CompletionTable { automaton, n, counts })
    }

    pub fn for_motif(motif: &str, n: usize) -> Result<Self> {
        CompletionTable::new(MotifAutomaton::parse(motif, n)?, n)
    }

    pub fn automaton(&self) -> &MotifAutomaton {
        &self.automaton
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn count(&self, position: usize, state: usize) -> &BigUint {
        &self.counts[position][state]
    }

    /// Number of length-`n` strings that contain the motif.
    pub fn total(&self) -> &BigUint {
        &self.counts[0][0]
    }

    /// ln of the number of valid strings: the entropy of the uniform process
    /// in nats per sequence.
    pub fn entropy(&self) -> Result<Entropy> {
        let total = self.total();
        if total.is_zero() {
            return Err(GamError::InfeasibleProcess {
                motif: self.automaton.motif_string(),
                n: self.n,
            });
        }
        let per_sequence = ln_big(total);
        Ok(Entropy { per_sequence, per_token: per_sequence / (self.n + 1) as f64 })
    }

    /// Exact log p_true(x): uniform over valid strings, `-inf` elsewhere.
    pub fn logprob(&self, x: &Sequence) -> f64 {
        if x.len() != self.n || !self.automaton.accepts(x.bits()) || self.total().is_zero() {
            return f64::NEG_INFINITY;
        }
        -ln_big(self.total())
    }

    /// Exact uniform draw from the valid strings. Unranks a uniform index in
    /// `[0, total)`, which emits bit `b` at position `p` in state `s` with
    /// probability `counts[p+1][δ(s,b)] / counts[p][s]` without rounding.
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> Sequence {
        let total = self.total();
        assert!(!total.is_zero(), "cannot sample from an empty process");
        let mut rank = uniform_below(total, rng);
        let mut state = 0;
        let mut bits = Vec::with_capacity(self.n);
        for p in 0..self.n {
            let zero_branch = &self.counts[p + 1][self.automaton.step(state, 0)];
            let bit = if rank < *zero_branch {
                0
            } else {
                rank -= zero_branch;
                1
            };
            state = self.automaton.step(state, bit);
            bits.push(bit);
        }
        debug_assert_eq!(state, self.automaton.accept_state());
        Sequence::new(bits)
    }
}

impl SequenceModel for CompletionTable {
    fn logprob(&self, x: &Sequence) -> f64 {
        CompletionTable::logprob(self, x)
    }
}

impl SequenceSampler for CompletionTable {
    fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> Sequence {
        CompletionTable::sample(self, rng)
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Entropy {
    pub per_sequence: f64,
    /// Per decoding step, counting the terminator: `per_sequence / (n + 1)`.
    pub per_token: f64,
}

pub fn count_containing(motif: &str, n: usize) -> Result<BigUint> {
    Ok(CompletionTable::for_motif(motif, n)?.total().clone())
}

pub fn true_entropy(motif: &str, n: usize) -> Result<Entropy> {
    CompletionTable::for_motif(motif, n)?.entropy()
}

/// Unnormalized white-noise-times-filter potential:
/// `log wn(x) + log F(x) = -n ln 2` on valid strings, `-inf` elsewhere.
pub fn white_noise_filter_logpotential(automaton: &MotifAutomaton, n: usize, x: &Sequence) -> f64 {
    if x.len() == n && automaton.accepts(x.bits()) {
        -(n as f64) * std::f64::consts::LN_2
    } else {
        f64::NEG_INFINITY
    }
}

/// Natural log of a big integer without overflowing f64.
pub fn ln_big(x: &BigUint) -> f64 {
    if x.is_zero() {
        return f64::NEG_INFINITY;
    }
    let bits = x.bits();
    if bits <= 1000 {
        return x.to_f64().expect("fits in f64").ln();
    }
    let shift = bits - 64;
    let top = (x >> shift).to_f64().expect("64-bit mantissa");
    top.ln() + shift as f64 * std::f64::consts::LN_2
}

/// Ratio of two big integers as f64, for probabilities.
pub fn big_ratio(num: &BigUint, den: &BigUint) -> f64 {
    (ln_big(num) - ln_big(den)).exp()
}

fn uniform_below<R: Rng + ?Sized>(bound: &BigUint, rng: &mut R) -> BigUint {
    let bits = bound.bits();
    let bytes = bits.div_ceil(8) as usize;
    let excess = (bytes as u64) * 8 - bits;
    let mut buf = vec![0u8; bytes];
    loop {
        rng.fill(&mut buf[..]);
        // Little-endian: mask the top byte down to `bits` bits.
        if let Some(last) = buf.last_mut() {
            *last &= 0xffu8 >> excess;
        }
        let candidate = BigUint::from_bytes_le(&buf);
        if candidate < *bound {
            return candidate;
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct SplitSizes {
    pub train: usize,
    pub valid: usize,
    pub test: usize,
}

impl Default for SplitSizes {
    fn default() -> Self {
        SplitSizes { train: 500, valid: 500, test: 5000 }
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Splits {
    pub train: Vec<Sequence>,
    pub valid: Vec<Sequence>,
    pub test: Vec<Sequence>,
}

/// Draws D, V, T i.i.d. from the process, each from its own named stream.
pub fn make_splits(table: &CompletionTable, sizes: SplitSizes, seed: u64) -> Splits {
    let draw = |name: &str, k: usize| {
        let mut stream = rng::stream(seed, &format!("split/{name}"));
        (0..k).map(|_| table.sample(&mut stream)).collect::<Vec<_>>()
    };
    Splits {
        train: draw("train", sizes.train),
        valid: draw("valid", sizes.valid),
        test: draw("test", sizes.test),
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct DatasetHeader {
    pub motif: String,
    pub n: usize,
    pub seed: u64,
    pub split: String,
}

/// One sequence per line under a `# motif=.. n=.. seed=.. split=..` header.
pub fn write_dataset<W: Write>(mut out: W, header: &DatasetHeader, data: &[Sequence]) -> Result<()> {
    writeln!(
        out,
        "# motif={} n={} seed={} split={}",
        header.motif, header.n, header.seed, header.split
    )?;
    for x in data {
        writeln!(out, "{x}")?;
    }
    Ok(())
}

pub fn read_dataset<R: BufRead>(input: R) -> Result<(DatasetHeader, Vec<Sequence>)> {
    let mut lines = input.lines();
    let first = lines
        .next()
        .ok_or_else(|| GamError::Format { what: "dataset", detail: "missing header".into() })??;
    let header = parse_header(&first)?;
    let mut data = Vec::new();
    for line in lines {
        let line = line?;
        data.push(line.trim_end().parse()?);
    }
    Ok((header, data))
}

fn parse_header(line: &str) -> Result<DatasetHeader> {
    let bad = |detail: String| GamError::Format { what: "dataset header", detail };
    let body = line
        .strip_prefix('#')
        .ok_or_else(|| bad(format!("expected '#', got {line:?}")))?;
    let (mut motif, mut n, mut seed, mut split) = (None, None, None, None);
    for field in body.split_whitespace() {
        let (key, value) = field
            .split_once('=')
            .ok_or_else(|| bad(format!("field {field:?} is not key=value")))?;
        match key {
            "motif" => motif = Some(value.to_string()),
            "n" => n = Some(value.parse().map_err(|_| bad(format!("bad n {value:?}")))?),
            "seed" => seed = Some(value.parse().map_err(|_| bad(format!("bad seed {value:?}")))?),
            "split" => split = Some(value.to_string()),
            other => return Err(bad(format!("unknown key {other:?}"))),
        }
    }
    Ok(DatasetHeader {
        motif: motif.ok_or_else(|| bad("missing motif".into()))?,
        n: n.ok_or_else(|| bad("missing n".into()))?,
        seed: seed.ok_or_else(|| bad("missing seed".into()))?,
        split: split.ok_or_else(|| bad("missing split".into()))?,
    })
}

#[cfg(test)]
mod tests {
    use std::collections::HashMap;

    use proptest::prelude::*;
    use rand::Rng;

    use super::*;

    fn brute_count(motif: &[u8], n: usize) -> u64 {
        Sequence::all_of_length(n).filter(|x| x.contains(motif)).count() as u64
    }

    #[test]
    fn automaton_examples() {
        let a = MotifAutomaton::parse("11", 3).unwrap();
        assert!(a.accepts(&[0, 1, 1]));
        assert!(!a.accepts(&[0, 1, 0]));

        let a = MotifAutomaton::parse("101", 8).unwrap();
        assert_eq!(a.num_states(), 4);
        assert_eq!(a.run(&[1, 0]), 2);
        // After "1010" the longest motif prefix that is a suffix is "10".
        assert_eq!(a.run(&[1, 0, 1, 0]), 3);
        assert_eq!(a.step(3, 0), 3);
        assert_eq!(a.step(3, 1), 3);
    }

    #[test]
    fn automaton_rejects_bad_motifs() {
        assert!(MotifAutomaton::parse("", 5).unwrap_err().is_config());
        assert!(MotifAutomaton::parse("110", 2).is_err());
        assert!(MotifAutomaton::parse("12", 5).is_err());
    }

    #[test]
    fn count_examples() {
        assert_eq!(count_containing("11", 3).unwrap(), BigUint::from(3u32));
        assert_eq!(count_containing("10110", 5).unwrap(), BigUint::one());
    }

    #[test]
    fn count_long_motif_at_n30_matches_inclusion_free_identity() {
        // Complement identity: containing + avoiding = 2^n, where the
        // avoiding count comes from running the same DFA restricted to
        // non-accept states. Also cross-check the DP recurrence directly.
        let table = CompletionTable::for_motif("1000101000101", 30).unwrap();
        let a = table.automaton();
        let mut avoid = vec![0u64; a.num_states()];
        avoid[0] = 1;
        for _ in 0..30 {
            let mut next = vec![0u64; a.num_states()];
            for s in 0..a.accept_state() {
                for b in 0..2 {
                    next[a.step(s, b)] += avoid[s];
                }
            }
            next[a.accept_state()] = 0;
            avoid = next;
        }
        let avoiding: u64 = avoid.iter().sum();
        let containing = table.total().to_u64().unwrap();
        assert_eq!(containing + avoiding, 1u64 << 30);
        // Frozen from an independent suffix-window enumeration.
        assert_eq!(containing, 2_334_480);
        for p in 0..30 {
            for s in 0..a.num_states() {
                let rec = table.count(p + 1, a.step(s, 0)) + table.count(p + 1, a.step(s, 1));
                assert_eq!(*table.count(p, s), rec);
            }
        }
    }

    #[test]
    fn default_motif_counts_at_n30() {
        // Frozen from an independent suffix-window enumeration.
        for (motif, expected) in [
            ("1000101000101", 2_334_480u64),
            ("1011100111001", 2_358_864),
            ("10001011111000", 1_113_640),
        ] {
            assert_eq!(count_containing(motif, 30).unwrap().to_u64().unwrap(), expected, "{motif}");
        }
        assert_eq!(count_containing("101", 8).unwrap().to_u64().unwrap(), 142);
    }

    #[test]
    fn sampled_fraction_of_white_noise_matches_count() {
        // Statistical self-consistency at n = 30 for a short motif:
        // P(F(x)=1) under white noise equals count / 2^n.
        let motif = [1u8, 0, 1, 1, 0, 1];
        let table = CompletionTable::new(MotifAutomaton::new(&motif, 30).unwrap(), 30).unwrap();
        let p = big_ratio(table.total(), &(BigUint::one() << 30));
        let mut r = rng::stream(5, "wn");
        let trials = 20000;
        let hits = (0..trials)
            .filter(|_| {
                let x: Vec<u8> = (0..30).map(|_| r.random_range(0..2u8)).collect();
                table.automaton().accepts(&x)
            })
            .count() as f64;
        let sd = (p * (1.0 - p) / trials as f64).sqrt();
        assert!((hits / trials as f64 - p).abs() < 4.0 * sd);
    }

    #[test]
    fn entropy_examples() {
        assert!((true_entropy("11", 3).unwrap().per_sequence - 3f64.ln()).abs() < 1e-12);
        assert_eq!(true_entropy("0110", 4).unwrap().per_sequence, 0.0);
        assert_eq!(true_entropy("1", 1).unwrap().per_sequence, 0.0);
        let h = true_entropy("11", 3).unwrap();
        assert!((h.per_token - 3f64.ln() / 4.0).abs() < 1e-12);
    }

    #[test]
    fn logprob_examples() {
        let table = CompletionTable::for_motif("11", 3).unwrap();
        let lp = table.logprob(&"011".parse().unwrap());
        assert!((lp - (1.0f64 / 3.0).ln()).abs() < 1e-12);
        assert_eq!(table.logprob(&"0110".parse().unwrap()), f64::NEG_INFINITY);
        assert_eq!(table.logprob(&"010".parse().unwrap()), f64::NEG_INFINITY);
        let a = table.automaton();
        let x: Sequence = "110".parse().unwrap();
        assert!((white_noise_filter_logpotential(a, 3, &x) + 3.0 * 2f64.ln()).abs() < 1e-12);
        assert_eq!(white_noise_filter_logpotential(a, 3, &"100".parse().unwrap()), f64::NEG_INFINITY);
    }

    #[test]
    fn uniform_sampler_over_three_strings() {
        let table = CompletionTable::for_motif("11", 3).unwrap();
        let mut r = rng::stream(11, "uniform");
        let draws = 30000;
        let mut freq: HashMap<String, usize> = HashMap::new();
        for _ in 0..draws {
            let x = table.sample(&mut r);
            assert!(x.contains(&[1, 1]) && x.len() == 3);
            *freq.entry(x.to_string()).or_default() += 1;
        }
        assert_eq!(freq.len(), 3);
        let p = 1.0 / 3.0;
        let sd = (draws as f64 * p * (1.0 - p)).sqrt();
        for key in ["011", "110", "111"] {
            assert!((freq[key] as f64 - draws as f64 * p).abs() < 3.0 * sd, "{key}: {}", freq[key]);
        }
        // First bit is 1 for "110" and "111".
        let first_one = freq["110"] + freq["111"];
        let p1 = 2.0 / 3.0;
        assert!((first_one as f64 / draws as f64 - p1).abs() < 3.0 * (p1 * (1.0 - p1) / draws as f64).sqrt());
    }

    #[test]
    fn splits_are_deterministic_sized_and_valid() {
        let table = CompletionTable::for_motif("1011", 12).unwrap();
        let sizes = SplitSizes { train: 500, valid: 500, test: 5000 };
        let a = make_splits(&table, sizes, 1234);
        let b = make_splits(&table, sizes, 1234);
        assert_eq!(a, b);
        assert_eq!((a.train.len(), a.valid.len(), a.test.len()), (500, 500, 5000));
        assert!(a.train.iter().chain(&a.valid).chain(&a.test).all(|x| x.contains(&[1, 0, 1, 1])));
        // Growing D leaves V and T untouched.
        let c = make_splits(&table, SplitSizes { train: 900, ..sizes }, 1234);
        assert_eq!(c.valid, a.valid);
        assert_eq!(c.test, a.test);
        assert_eq!(&c.train[..500], &a.train[..]);
    }

    #[test]
    fn dataset_dump_roundtrip() {
        let header = DatasetHeader { motif: "101".into(), n: 4, seed: 9, split: "train".into() };
        let data: Vec<Sequence> = vec!["1010".parse().unwrap(), "0101".parse().unwrap()];
        let mut buf = Vec::new();
        write_dataset(&mut buf, &header, &data).unwrap();
        assert_eq!(String::from_utf8(buf.clone()).unwrap(), "# motif=101 n=4 seed=9 split=train\n1010\n0101\n");
        let (h, d) = read_dataset(&buf[..]).unwrap();
        assert_eq!(h, header);
        assert_eq!(d, data);
        assert!(read_dataset(&b"motif=1\n"[..]).is_err());
    }

    #[test]
    fn ln_big_handles_huge_counts() {
        let table = CompletionTable::for_motif("101", 2000).unwrap();
        let h = table.entropy().unwrap().per_sequence;
        // Almost every long string contains "101".
        assert!((h - 2000.0 * 2f64.ln()).abs() < 1e-6);
    }

    proptest! {
        #[test]
        fn count_matches_enumeration(motif in proptest::collection::vec(0u8..2, 1..=4), n in 0usize..=12) {
            prop_assume!(motif.len() <= n);
            let table = CompletionTable::new(MotifAutomaton::new(&motif, n).unwrap(), n).unwrap();
            prop_assert_eq!(table.total().to_u64().unwrap(), brute_count(&motif, n));
            for x in Sequence::all_of_length(n.min(10)) {
                if n <= 10 {
                    prop_assert_eq!(table.automaton().accepts(x.bits()), x.contains(&motif));
                }
            }
        }

        #[test]
        fn truth_probabilities_sum_to_one(motif in proptest::collection::vec(0u8..2, 1..=4), n in 4usize..=12) {
            let table = CompletionTable::new(MotifAutomaton::new(&motif, n).unwrap(), n).unwrap();
            let total: f64 = Sequence::all_of_length(n).map(|x| table.logprob(&x).exp()).sum();
            prop_assert!((total - 1.0).abs() < 1e-9);
        }

        #[test]
        fn entropy_nondecreasing_in_n(motif in proptest::collection::vec(0u8..2, 1..=4), n in 4usize..=40) {
            let h0 = CompletionTable::new(MotifAutomaton::new(&motif, n).unwrap(), n).unwrap().entropy().unwrap();
            let h1 = CompletionTable::new(MotifAutomaton::new(&motif, n + 1).unwrap(), n + 1).unwrap().entropy().unwrap();
            prop_assert!(h1.per_sequence >= h0.per_sequence);
        }
    }
}
