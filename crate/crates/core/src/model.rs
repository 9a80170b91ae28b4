//! Common interfaces over everything that scores or generates sequences:
//! learned policies, the exact synthetic process, rejection samplers.

use rand::Rng;

use crate::sequence::Sequence;

/// A normalized distribution over sequences with exact log-probabilities.
pub trait SequenceModel {
    /// Natural-log probability; `-inf` outside the support.
    fn logprob(&self, x: &Sequence) -> f64;
}

/// Anything that can draw sequences.
pub trait SequenceSampler {
    fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> Sequence;
}

impl<T: SequenceModel + ?Sized> SequenceModel for &T {
    fn logprob(&self, x: &Sequence) -> f64 {
        (**self).logprob(x)
    }
}

impl<T: SequenceSampler + ?Sized> SequenceSampler for &T {
    fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> Sequence {
        (**self).sample(rng)
    }
}
