use crate::mdp::{Observation, TokenId};

/// Maps `(obs, prefix)` to a table key and to sparse one-hot features.
///
/// Feature layout: `n_obs` observation one-hots, then `max_len` blocks of `vocab` positional
/// token one-hots. Prefixes shorter than `max_len` leave later blocks zero.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Encoder {
    pub n_obs: usize,
    pub vocab: usize,
    pub max_len: usize,
}

impl Encoder {
    pub fn new(n_obs: usize, vocab: usize, max_len: usize) -> Self {
        Self {
            n_obs,
            vocab,
            max_len,
        }
    }

    pub fn input_dim(&self) -> usize {
        self.n_obs + self.max_len * self.vocab
    }

    pub fn key(&self, obs: &Observation, prefix: &[TokenId]) -> Vec<u64> {
        let mut k = Vec::with_capacity(prefix.len() + 1);
        k.push(obs.id);
        k.extend(prefix.iter().map(|&t| t as u64));
        k
    }

    /// Indices of the active (value 1) input features.
    ///
    /// # Panics
    /// If the observation id or prefix does not fit the encoder dimensions.
    pub fn active(&self, obs: &Observation, prefix: &[TokenId]) -> Vec<usize> {
        assert!(
            (obs.id as usize) < self.n_obs,
            "observation id {} outside encoder range {}",
            obs.id,
            self.n_obs
        );
        assert!(prefix.len() <= self.max_len, "prefix longer than max_len");
        let mut a = Vec::with_capacity(prefix.len() + 1);
        a.push(obs.id as usize);
        for (p, &t) in prefix.iter().enumerate() {
            assert!(t < self.vocab, "token {t} outside vocabulary");
            a.push(self.n_obs + p * self.vocab + t);
        }
        a
    }
}
