use rand::Rng;

use crate::rng::{derive_seed, seeded};

use super::{Action, Observation, StepRecord, TokenId, TokenValueFn, Trajectory};

/// A random well-formed trajectory for property checks.
///
/// Between 1 and `max_steps` steps, action lengths in `1..=max_len`, tokens below `vocab`,
/// rewards in `[-1, 1]`; terminates with probability 1/2. Cached values are zero.
pub fn random_trajectory(
    seed: u64,
    max_steps: usize,
    max_len: usize,
    vocab: usize,
    gamma_a: f64,
) -> Trajectory {
    let mut rng = seeded(seed);
    let n = rng.random_range(1..=max_steps);
    let terminal = rng.random_bool(0.5);
    let mut obs = Observation::new(rng.random_range(0..8), vec![]);
    let steps = (0..n)
        .map(|t| {
            let len = rng.random_range(1..=max_len);
            let tokens: Vec<TokenId> = (0..len).map(|_| rng.random_range(0..vocab)).collect();
            let next = Observation::new(rng.random_range(0..8), vec![]);
            let s = StepRecord {
                obs: obs.clone(),
                action: Action::new(tokens).expect("non-empty"),
                reward: rng.random_range(-1.0..=1.0),
                next_obs: next.clone(),
                done: terminal && t + 1 == n,
                token_logprobs: (0..len).map(|_| -rng.random_range(0.0..3.0)).collect(),
                token_values: vec![0.0; len + 1],
            };
            obs = next;
            s
        })
        .collect();
    Trajectory::new(steps, gamma_a).expect("well-formed by construction")
}

/// A fixed pseudo-random value table keyed by `(obs id, context)`; values in `[-2, 2]`.
#[derive(Clone, Copy, Debug)]
pub struct HashedValues {
    pub salt: u64,
}

impl TokenValueFn for HashedValues {
    fn value(&self, obs: &Observation, context: &[TokenId]) -> f64 {
        let mut path = vec![obs.id, context.len() as u64];
        path.extend(context.iter().map(|&t| t as u64));
        let h = derive_seed(self.salt, &path);
        ((h >> 11) as f64 / (1u64 << 53) as f64) * 4.0 - 2.0
    }
}
