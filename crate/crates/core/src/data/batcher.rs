use rand::seq::SliceRandom;

use crate::domain::{DomainPair, SemanticCategory};
use crate::error::{Error, Result};
use crate::rng::derived_rng;

/// A domain's sample indices replayed as an endless sequence of
/// independently shuffled epochs.
#[derive(Debug, Clone)]
pub struct ShuffledStream {
    items: Vec<usize>,
    seed: u64,
    tag: u64,
    cached_epoch: Option<u64>,
    order: Vec<usize>,
}

impl ShuffledStream {
    pub fn new(items: Vec<usize>, seed: u64, tag: u64) -> Self {
        Self {
            items,
            seed,
            tag,
            cached_epoch: None,
            order: Vec::new(),
        }
    }

    pub fn epoch_len(&self) -> usize {
        self.items.len()
    }

    /// Element at absolute stream position `j`.
    pub fn at(&mut self, j: u64) -> usize {
        let len = self.items.len() as u64;
        let epoch = j / len;
        if self.cached_epoch != Some(epoch) {
            self.order = self.items.clone();
            self.order.shuffle(&mut derived_rng(self.seed, &[self.tag, epoch]));
            self.cached_epoch = Some(epoch);
        }
        self.order[(j % len) as usize]
    }
}

/// Unpaired `(x, y)` draws for one domain pair: each side is its own
/// shuffled stream, so pairings are arbitrary. Positionable for resume.
#[derive(Debug, Clone)]
pub struct UnpairedBatcher {
    pair: DomainPair,
    xs: ShuffledStream,
    ys: ShuffledStream,
    position: u64,
}

impl UnpairedBatcher {
    /// `categories[i]` is the category of sample `i`.
    pub fn new(categories: &[usize], pair: DomainPair, seed: u64) -> Result<Self> {
        let pick = |c: SemanticCategory| -> Result<Vec<usize>> {
            let v: Vec<usize> = (0..categories.len()).filter(|&i| categories[i] == c.id()).collect();
            if v.is_empty() {
                Err(Error::Config(format!("domain {} has no samples", c.id())))
            } else {
                Ok(v)
            }
        };
        let xs = pick(pair.source())?;
        let ys = pick(pair.target())?;
        let base = (pair.source().id() as u64) << 32 | (pair.target().id() as u64) << 8;
        Ok(Self {
            pair,
            xs: ShuffledStream::new(xs, seed, base),
            ys: ShuffledStream::new(ys, seed, base | 1),
            position: 0,
        })
    }

    pub fn pair(&self) -> DomainPair {
        self.pair
    }

    /// Steps in one pass: the larger of the two domains.
    pub fn epoch_len(&self) -> usize {
        self.xs.epoch_len().max(self.ys.epoch_len())
    }

    pub fn position(&self) -> u64 {
        self.position
    }

    pub fn seek(&mut self, position: u64) {
        self.position = position;
    }
}

impl Iterator for UnpairedBatcher {
    type Item = (usize, usize);

    fn next(&mut self) -> Option<Self::Item> {
        let j = self.position;
        self.position += 1;
        Some((self.xs.at(j), self.ys.at(j)))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn pair() -> DomainPair {
        DomainPair::new(
            SemanticCategory::new(0, 2).unwrap(),
            SemanticCategory::new(1, 2).unwrap(),
        )
        .unwrap()
    }

    #[test]
    fn each_x_once_per_x_epoch() {
        let cats = [0, 1, 0, 1, 1, 0, 1, 1];
        let mut b = UnpairedBatcher::new(&cats, pair(), 3).unwrap();
        assert_eq!(b.epoch_len(), 5);
        let draws: Vec<(usize, usize)> = b.by_ref().take(15).collect();
        for chunk in draws.chunks(3) {
            let mut xs: Vec<usize> = chunk.iter().map(|d| d.0).collect();
            xs.sort();
            assert_eq!(xs, vec![0, 2, 5]);
        }
        let mut ys: Vec<usize> = draws[..5].iter().map(|d| d.1).collect();
        ys.sort();
        assert_eq!(ys, vec![1, 3, 4, 6, 7]);
    }

    #[test]
    fn deterministic_and_seekable() {
        let cats = [0, 1, 0, 1, 1, 0, 1, 1];
        let a: Vec<_> = UnpairedBatcher::new(&cats, pair(), 9).unwrap().take(40).collect();
        let b: Vec<_> = UnpairedBatcher::new(&cats, pair(), 9).unwrap().take(40).collect();
        assert_eq!(a, b);
        let mut c = UnpairedBatcher::new(&cats, pair(), 9).unwrap();
        c.seek(17);
        assert_eq!(c.take(23).collect::<Vec<_>>(), a[17..].to_vec());
        let other: Vec<_> = UnpairedBatcher::new(&cats, pair(), 10).unwrap().take(40).collect();
        assert_ne!(a, other);
    }

    #[test]
    fn empty_domain_is_config_error() {
        assert!(matches!(
            UnpairedBatcher::new(&[0, 0, 0], pair(), 1),
            Err(Error::Config(_))
        ));
    }

    proptest! {
        #[test]
        fn every_epoch_is_a_permutation(n in 1usize..20, seed in any::<u64>(), epoch in 0u64..5) {
            let mut s = ShuffledStream::new((0..n).collect(), seed, 0);
            let mut seen: Vec<usize> = (0..n as u64).map(|i| s.at(epoch * n as u64 + i)).collect();
            seen.sort();
            prop_assert_eq!(seen, (0..n).collect::<Vec<_>>());
        }
    }
}
