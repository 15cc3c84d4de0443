//! Synthetic key-value recall.
//!
//! The vocabulary is split into value symbols `[0, V)`, key symbols
//! `[V, V + K)` and filler `[V + K, V + K + F)`. Each sequence holds `pairs`
//! adjacent key/value bindings over random filler and ends with a query key.
//! The binding being queried always has its value token exactly `distance`
//! positions before the query, and the model must emit that value at the
//! query position.

use rand::seq::SliceRandom;
use rand::Rng;

use crate::error::{PpaError, Result};

use super::network::Example;

/// Order of the two tokens inside a binding.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RecallFormat {
    /// `key value`
    KeyFirst,
    /// `value key`
    ValueFirst,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RecallTask {
    pub vocab: usize,
    pub value_symbols: usize,
    pub key_symbols: usize,
    /// Background symbols drawn uniformly between bindings. Ids past
    /// `value_symbols + key_symbols + filler_symbols` are never emitted.
    pub filler_symbols: usize,
    /// Distance from the queried value token to the query token.
    pub distance: usize,
    pub length: usize,
    pub pairs: usize,
    pub format: RecallFormat,
}

/// A generated sequence together with where and what the answer is.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RecallSample {
    pub tokens: Vec<usize>,
    pub query_pos: usize,
    pub value_pos: usize,
    pub answer: usize,
}

impl RecallSample {
    pub fn to_example(&self) -> Example {
        Example {
            tokens: self.tokens.clone(),
            targets: vec![(self.query_pos, self.answer)],
        }
    }
}

impl RecallTask {
    pub fn validate(&self) -> Result<()> {
        if self.value_symbols == 0 || self.pairs == 0 || self.distance == 0 {
            return Err(PpaError::Domain(
                "value_symbols, pairs and distance must be positive".into(),
            ));
        }
        if self.key_symbols < self.pairs {
            return Err(PpaError::Domain(format!(
                "{} key symbols cannot bind {} distinct pairs",
                self.key_symbols, self.pairs
            )));
        }
        if self.filler_symbols == 0 {
            return Err(PpaError::Domain(
                "at least one filler symbol is needed".into(),
            ));
        }
        if self.value_symbols + self.key_symbols + self.filler_symbols > self.vocab {
            return Err(PpaError::Domain(format!(
                "{} value + {} key + {} filler symbols exceed vocabulary {}",
                self.value_symbols, self.key_symbols, self.filler_symbols, self.vocab
            )));
        }
        if self.distance + 2 * self.pairs + 2 > self.length {
            return Err(PpaError::Domain(format!(
                "distance {} with {} pairs does not fit in length {}",
                self.distance, self.pairs, self.length
            )));
        }
        if self.format == RecallFormat::ValueFirst && self.distance < 2 {
            return Err(PpaError::Domain(
                "value-first bindings need distance >= 2".into(),
            ));
        }
        Ok(())
    }

    pub fn filler_range(&self) -> std::ops::Range<usize> {
        let start = self.value_symbols + self.key_symbols;
        start..start + self.filler_symbols
    }

    /// Start position of the queried binding.
    fn queried_slot(&self, query_pos: usize) -> usize {
        match self.format {
            RecallFormat::KeyFirst => query_pos - self.distance - 1,
            RecallFormat::ValueFirst => query_pos - self.distance,
        }
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> Result<RecallSample> {
        self.validate()?;
        let query_pos = self.length - 1;
        let filler = self.filler_range();
        let mut tokens: Vec<usize> = (0..self.length)
            .map(|_| rng.gen_range(filler.clone()))
            .collect();
        let mut used = vec![false; self.length];
        used[query_pos] = true;

        let keys: Vec<usize> = (self.value_symbols..self.value_symbols + self.key_symbols)
            .collect::<Vec<_>>()
            .choose_multiple(rng, self.pairs)
            .copied()
            .collect();

        let format = self.format;
        let place =
            |slot: usize, key: usize, value: usize, tokens: &mut [usize], used: &mut [bool]| {
                let (kpos, vpos) = match format {
                    RecallFormat::KeyFirst => (slot, slot + 1),
                    RecallFormat::ValueFirst => (slot + 1, slot),
                };
                tokens[kpos] = key;
                tokens[vpos] = value;
                used[slot] = true;
                used[slot + 1] = true;
                vpos
            };

        let answer = rng.gen_range(0..self.value_symbols);
        let value_pos = place(
            self.queried_slot(query_pos),
            keys[0],
            answer,
            &mut tokens,
            &mut used,
        );
        tokens[query_pos] = keys[0];

        for &key in &keys[1..] {
            let value = rng.gen_range(0..self.value_symbols);
            let free: Vec<usize> = (0..query_pos - 1)
                .filter(|&s| !used[s] && !used[s + 1])
                .collect();
            let slot = *free
                .choose(rng)
                .ok_or_else(|| PpaError::Domain("no room for distractor pair".into()))?;
            place(slot, key, value, &mut tokens, &mut used);
        }

        Ok(RecallSample {
            tokens,
            query_pos,
            value_pos,
            answer,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn task(format: RecallFormat) -> RecallTask {
        RecallTask {
            vocab: 64,
            value_symbols: 16,
            key_symbols: 16,
            filler_symbols: 32,
            distance: 20,
            length: 40,
            pairs: 4,
            format,
        }
    }

    #[test]
    fn sample_structure() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for format in [RecallFormat::KeyFirst, RecallFormat::ValueFirst] {
            let t = task(format);
            for _ in 0..50 {
                let s = t.sample(&mut rng).unwrap();
                assert_eq!(s.tokens.len(), 40);
                assert_eq!(s.query_pos, 39);
                assert_eq!(s.query_pos - s.value_pos, 20);
                assert_eq!(s.tokens[s.value_pos], s.answer);
                assert!(s.answer < 16);
                let key = s.tokens[s.query_pos];
                let key_pos = match format {
                    RecallFormat::KeyFirst => s.value_pos - 1,
                    RecallFormat::ValueFirst => s.value_pos + 1,
                };
                assert_eq!(s.tokens[key_pos], key);
                // the queried key appears exactly at its binding and the query
                assert_eq!(s.tokens.iter().filter(|&&t| t == key).count(), 2);
                let keys = s.tokens.iter().filter(|&&t| (16..32).contains(&t)).count();
                assert_eq!(keys, 4 + 1);
            }
        }
    }

    #[test]
    fn validation() {
        let mut t = task(RecallFormat::KeyFirst);
        t.distance = 31;
        assert!(t.validate().is_err());
        t.distance = 30;
        assert!(t.validate().is_ok());
        let mut t = task(RecallFormat::KeyFirst);
        t.key_symbols = 3;
        assert!(t.validate().is_err());
        let mut t = task(RecallFormat::KeyFirst);
        t.filler_symbols = 33;
        assert!(t.validate().is_err());
        t.filler_symbols = 0;
        assert!(t.validate().is_err());
        let mut t = task(RecallFormat::ValueFirst);
        t.distance = 1;
        assert!(t.validate().is_err());
    }
}
