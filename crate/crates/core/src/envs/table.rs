use std::collections::BTreeMap;

use crate::mdp::{
    Action, ActionFormat, Enumerable, Environment, Observation, Outcome, TokenId, Vocabulary,
};

use super::EnvError;

#[derive(Clone, Debug)]
struct Entry {
    action: Action,
    reward: f64,
    next: u64,
    done: bool,
}

/// A scripted deterministic environment given as an explicit transition table.
///
/// Unlisted actions keep the observation with reward 0.
#[derive(Clone, Debug)]
pub struct TableEnv {
    vocab: Vocabulary,
    format: ActionFormat,
    n_obs: usize,
    start: u64,
    table: BTreeMap<u64, Vec<Entry>>,
    max_episode_steps: usize,
    cur: u64,
    steps: usize,
    done: bool,
}

impl TableEnv {
    pub fn new(vocab: Vocabulary, format: ActionFormat, n_obs: usize) -> Self {
        Self {
            vocab,
            format,
            n_obs,
            start: 0,
            table: BTreeMap::new(),
            max_episode_steps: usize::MAX,
            cur: 0,
            steps: 0,
            done: false,
        }
    }

    pub fn with_start(mut self, obs: u64) -> Self {
        self.start = obs;
        self
    }

    pub fn with_max_episode_steps(mut self, n: usize) -> Self {
        self.max_episode_steps = n;
        self
    }

    pub fn with_action(
        mut self,
        obs: u64,
        tokens: &[TokenId],
        reward: f64,
        next: u64,
        done: bool,
    ) -> Result<Self, EnvError> {
        if obs as usize >= self.n_obs || next as usize >= self.n_obs {
            return Err(EnvError::Config(format!(
                "observation out of range: {obs} -> {next}"
            )));
        }
        if tokens.len() > self.format.max_action_len() || tokens.iter().any(|&t| t >= self.vocab.len()) {
            return Err(EnvError::Config(format!("malformed action {tokens:?}")));
        }
        let action = Action::new(tokens.to_vec()).map_err(|e| EnvError::Config(e.to_string()))?;
        let row = self.table.entry(obs).or_default();
        if row.iter().any(|e| e.action == action) {
            return Err(EnvError::Config(format!("duplicate action {tokens:?} at {obs}")));
        }
        row.push(Entry {
            action,
            reward,
            next,
            done,
        });
        Ok(self)
    }
}

impl Environment for TableEnv {
    fn vocab(&self) -> &Vocabulary {
        &self.vocab
    }

    fn action_format(&self) -> ActionFormat {
        self.format
    }

    fn observation_count(&self) -> usize {
        self.n_obs
    }

    fn reset(&mut self, _seed: u64) -> Observation {
        self.cur = self.start;
        self.steps = 0;
        self.done = false;
        Observation::new(self.start, vec![])
    }

    fn step(&mut self, action: &Action) -> Result<Outcome, EnvError> {
        if self.done {
            return Err(EnvError::EpisodeOver);
        }
        let mut out = self.transition(&Observation::new(self.cur, vec![]), action);
        self.steps += 1;
        out.done |= self.steps >= self.max_episode_steps;
        self.cur = out.obs.id;
        self.done = out.done;
        Ok(out)
    }

    fn legal_actions(&self, obs: &Observation) -> Vec<Action> {
        self.table
            .get(&obs.id)
            .map(|row| row.iter().map(|e| e.action.clone()).collect())
            .unwrap_or_default()
    }
}

impl Enumerable for TableEnv {
    fn start_observations(&self) -> Vec<Observation> {
        vec![Observation::new(self.start, vec![])]
    }

    fn transition(&self, obs: &Observation, action: &Action) -> Outcome {
        let hit = self
            .table
            .get(&obs.id)
            .and_then(|row| row.iter().find(|e| &e.action == action));
        match hit {
            Some(e) => Outcome {
                obs: Observation::new(e.next, vec![]),
                reward: e.reward,
                done: e.done,
            },
            None => Outcome {
                obs: obs.clone(),
                reward: 0.0,
                done: false,
            },
        }
    }
}
