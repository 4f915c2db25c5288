use crate::mdp::{
    Action, ActionFormat, Enumerable, Environment, Observation, Outcome, TokenId, Vocabulary, EOA,
};

use super::EnvError;

const WALK: TokenId = 0;
const TO: TokenId = 1;
const DESTINATIONS: [TokenId; 3] = [2, 3, 4];

/// One-step bandit whose three legal actions are `walk to {kitchen, bathroom, bedroom}`.
///
/// Actions share the prefix `(walk, to)`; only the final destination token matters.
#[derive(Clone, Debug)]
pub struct KeyTokenBandit {
    vocab: Vocabulary,
    rewards: [f64; 3],
    done: bool,
}

impl KeyTokenBandit {
    pub const DEFAULT_REWARDS: [f64; 3] = [1.0, 0.0, 0.0];

    pub fn new() -> Self {
        Self::with_rewards(Self::DEFAULT_REWARDS).expect("default rewards are valid")
    }

    /// Rewards for (kitchen, bathroom, bedroom); exactly one must be maximal.
    pub fn with_rewards(rewards: [f64; 3]) -> Result<Self, EnvError> {
        let best = rewards.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        if rewards.iter().any(|r| !r.is_finite()) {
            return Err(EnvError::Config("bandit rewards must be finite".into()));
        }
        if rewards.iter().filter(|&&r| r == best).count() != 1 {
            return Err(EnvError::Config(
                "exactly one destination must carry the maximal reward".into(),
            ));
        }
        let vocab = Vocabulary::new(["walk", "to", "kitchen", "bathroom", "bedroom", EOA])
            .expect("static vocabulary");
        Ok(Self {
            vocab,
            rewards,
            done: false,
        })
    }

    pub fn observation() -> Observation {
        Observation::new(0, vec![])
    }

    pub fn rewards(&self) -> [f64; 3] {
        self.rewards
    }

    fn reward_of(&self, action: &Action) -> f64 {
        match action.tokens() {
            [WALK, TO, d] => DESTINATIONS
                .iter()
                .position(|x| x == d)
                .map_or(0.0, |i| self.rewards[i]),
            _ => 0.0,
        }
    }
}

impl Default for KeyTokenBandit {
    fn default() -> Self {
        Self::new()
    }
}

impl Environment for KeyTokenBandit {
    fn vocab(&self) -> &Vocabulary {
        &self.vocab
    }

    fn action_format(&self) -> ActionFormat {
        ActionFormat::Fixed { len: 3 }
    }

    fn observation_count(&self) -> usize {
        1
    }

    fn reset(&mut self, _seed: u64) -> Observation {
        self.done = false;
        Self::observation()
    }

    fn step(&mut self, action: &Action) -> Result<Outcome, EnvError> {
        if self.done {
            return Err(EnvError::EpisodeOver);
        }
        self.done = true;
        Ok(self.transition(&Self::observation(), action))
    }

    fn legal_actions(&self, _obs: &Observation) -> Vec<Action> {
        DESTINATIONS
            .iter()
            .map(|&d| Action::new(vec![WALK, TO, d]).expect("non-empty"))
            .collect()
    }
}

impl Enumerable for KeyTokenBandit {
    fn start_observations(&self) -> Vec<Observation> {
        vec![Self::observation()]
    }

    fn transition(&self, _obs: &Observation, action: &Action) -> Outcome {
        Outcome {
            obs: Self::observation(),
            reward: self.reward_of(action),
            done: true,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn kitchen_pays_and_ends() {
        let mut env = KeyTokenBandit::new();
        let o = env.reset(3);
        let legal = env.legal_actions(&o);
        assert_eq!(legal.len(), 3);
        assert!(legal.iter().all(|a| a.prefix(2) == [WALK, TO]));
        let out = env.step(&legal[0]).unwrap();
        assert_eq!((out.reward, out.done), (1.0, true));
        assert_eq!(env.step(&legal[0]), Err(EnvError::EpisodeOver));
        env.reset(4);
        assert_eq!(env.step(&legal[1]).unwrap().reward, 0.0);
    }

    #[test]
    fn rejects_tied_maxima() {
        assert!(KeyTokenBandit::with_rewards([1.0, 1.0, 0.0]).is_err());
    }
}
