use crate::mdp::{
    Action, ActionFormat, Enumerable, Environment, Observation, Outcome, TokenId, Vocabulary,
};

use super::EnvError;

const GO: TokenId = 0;
const WAIT: TokenId = 1;
const PAD: TokenId = 2;

/// `K` observations in a line, each offering `go pad..` and `wait pad..` of length `|a|`.
///
/// `go` advances one observation and, from the last one, ends the episode with reward 1.
/// `wait` stays put with reward 0. The deciding token is always the first.
#[derive(Clone, Debug)]
pub struct SyntheticChain {
    vocab: Vocabulary,
    k: usize,
    action_len: usize,
    max_episode_steps: usize,
    pos: usize,
    steps: usize,
    done: bool,
}

impl SyntheticChain {
    pub fn new(k: usize, action_len: usize, max_episode_steps: usize) -> Result<Self, EnvError> {
        if k == 0 || action_len == 0 || max_episode_steps == 0 {
            return Err(EnvError::Config(
                "chain length, action length and max_episode_steps must be positive".into(),
            ));
        }
        if action_len >= crate::rng::STEP_STRIDE as usize {
            return Err(EnvError::Config(format!("action length {action_len} too large")));
        }
        let vocab = Vocabulary::new(["go", "wait", "pad"])
            .expect("static vocabulary");
        Ok(Self {
            vocab,
            k,
            action_len,
            max_episode_steps,
            pos: 0,
            steps: 0,
            done: false,
        })
    }

    pub fn len(&self) -> usize {
        self.k
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn action_len(&self) -> usize {
        self.action_len
    }

    pub fn max_episode_steps(&self) -> usize {
        self.max_episode_steps
    }

    fn obs(pos: usize) -> Observation {
        Observation::new(pos as u64, vec![])
    }

    fn action(&self, head: TokenId) -> Action {
        let mut t = vec![PAD; self.action_len];
        t[0] = head;
        Action::new(t).expect("non-empty")
    }
}

impl Environment for SyntheticChain {
    fn vocab(&self) -> &Vocabulary {
        &self.vocab
    }

    fn action_format(&self) -> ActionFormat {
        ActionFormat::Fixed {
            len: self.action_len,
        }
    }

    fn observation_count(&self) -> usize {
        self.k
    }

    fn reset(&mut self, _seed: u64) -> Observation {
        self.pos = 0;
        self.steps = 0;
        self.done = false;
        Self::obs(0)
    }

    fn step(&mut self, action: &Action) -> Result<Outcome, EnvError> {
        if self.done {
            return Err(EnvError::EpisodeOver);
        }
        let mut out = self.transition(&Self::obs(self.pos), action);
        self.steps += 1;
        self.pos = out.obs.id as usize;
        out.done |= self.steps >= self.max_episode_steps;
        self.done = out.done;
        Ok(out)
    }

    fn legal_actions(&self, _obs: &Observation) -> Vec<Action> {
        vec![self.action(GO), self.action(WAIT)]
    }
}

impl Enumerable for SyntheticChain {
    fn start_observations(&self) -> Vec<Observation> {
        vec![Self::obs(0)]
    }

    fn transition(&self, obs: &Observation, action: &Action) -> Outcome {
        let pos = obs.id as usize;
        let well_formed = action.len() == self.action_len
            && action.tokens()[1..].iter().all(|&t| t == PAD);
        match action.tokens()[0] {
            GO if well_formed && pos + 1 == self.k => Outcome {
                obs: Self::obs(pos),
                reward: 1.0,
                done: true,
            },
            GO if well_formed => Outcome {
                obs: Self::obs(pos + 1),
                reward: 0.0,
                done: false,
            },
            _ => Outcome {
                obs: Self::obs(pos),
                reward: 0.0,
                done: false,
            },
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn go_reaches_the_end() {
        let mut env = SyntheticChain::new(3, 2, 10).unwrap();
        let o = env.reset(0);
        let legal = env.legal_actions(&o);
        assert_eq!(legal[0].tokens(), &[GO, PAD]);
        for expect_done in [false, false, true] {
            let out = env.step(&legal[0]).unwrap();
            assert_eq!(out.done, expect_done);
            assert_eq!(out.reward, if expect_done { 1.0 } else { 0.0 });
        }
    }

    #[test]
    fn time_limit_ends_waiting() {
        let mut env = SyntheticChain::new(2, 1, 3).unwrap();
        let o = env.reset(0);
        let wait = env.legal_actions(&o)[1].clone();
        assert!(!env.step(&wait).unwrap().done);
        assert!(!env.step(&wait).unwrap().done);
        assert!(env.step(&wait).unwrap().done);
    }
}
