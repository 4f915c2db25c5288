use rand::Rng;

use crate::mdp::{
    Action, ActionFormat, Enumerable, Environment, Observation, Outcome, TokenId, Vocabulary, EOA,
};
use crate::rng::seeded;

use super::EnvError;

const GOTO: TokenId = 0;
const PICK: TokenId = 1;
const CHOP: TokenId = 2;
const PUT: TokenId = 3;
const SERVE: TokenId = 4;
const T_BOARD: TokenId = 5;
const T_LETTUCE: TokenId = 6;
const T_PLATE: TokenId = 7;
const T_TOMATO: TokenId = 8;
const T_ONION: TokenId = 9;
const T_COUNTER: TokenId = 10;
const T_EOA: TokenId = 11;

const VOCAB: [&str; 12] = [
    "goto", "pick", "chop", "put", "serve", "board", "lettuce", "plate", "tomato", "onion",
    "counter", EOA,
];

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Item {
    Tomato,
    Lettuce,
    Onion,
}

impl Item {
    pub const ALL: [Item; 3] = [Item::Tomato, Item::Lettuce, Item::Onion];

    pub fn name(self) -> &'static str {
        match self {
            Item::Tomato => "tomato",
            Item::Lettuce => "lettuce",
            Item::Onion => "onion",
        }
    }

    pub fn parse(s: &str) -> Option<Item> {
        Item::ALL.into_iter().find(|i| i.name() == s)
    }

    fn token(self) -> TokenId {
        match self {
            Item::Tomato => T_TOMATO,
            Item::Lettuce => T_LETTUCE,
            Item::Onion => T_ONION,
        }
    }

    fn from_token(t: TokenId) -> Option<Item> {
        Item::ALL.into_iter().find(|i| i.token() == t)
    }

    fn shelf(self) -> Station {
        match self {
            Item::Tomato => Station::Tomato,
            Item::Lettuce => Station::Lettuce,
            Item::Onion => Station::Onion,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum ItemState {
    Raw,
    Chopped,
    Plated,
    Delivered,
}

impl ItemState {
    const ALL: [ItemState; 4] = [
        ItemState::Raw,
        ItemState::Chopped,
        ItemState::Plated,
        ItemState::Delivered,
    ];
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Station {
    Board,
    Lettuce,
    Plate,
    Tomato,
    Onion,
    Counter,
}

impl Station {
    pub const ALL: [Station; 6] = [
        Station::Board,
        Station::Lettuce,
        Station::Plate,
        Station::Tomato,
        Station::Onion,
        Station::Counter,
    ];

    fn token(self) -> TokenId {
        match self {
            Station::Board => T_BOARD,
            Station::Lettuce => T_LETTUCE,
            Station::Plate => T_PLATE,
            Station::Tomato => T_TOMATO,
            Station::Onion => T_ONION,
            Station::Counter => T_COUNTER,
        }
    }

    fn from_token(t: TokenId) -> Option<Station> {
        Station::ALL.into_iter().find(|s| s.token() == t)
    }
}

/// What the agent carries.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Holding {
    Nothing,
    Plate,
    Raw(Item),
    Chopped(Item),
}

impl Holding {
    fn index(self) -> u64 {
        match self {
            Holding::Nothing => 0,
            Holding::Plate => 1,
            Holding::Raw(i) => 2 + i as u64,
            Holding::Chopped(i) => 5 + i as u64,
        }
    }

    fn from_index(x: u64) -> Holding {
        match x {
            0 => Holding::Nothing,
            1 => Holding::Plate,
            2..=4 => Holding::Raw(Item::ALL[(x - 2) as usize]),
            _ => Holding::Chopped(Item::ALL[(x - 5) as usize]),
        }
    }
}

/// Full (observable) kitchen state; encodes bijectively into an observation id.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct KitchenState {
    pub cell: (usize, usize),
    pub holding: Holding,
    /// Indexed by `Item as usize`.
    pub items: [ItemState; 3],
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum KitchenAction {
    Goto(Station),
    Pick(Item),
    PickPlate,
    Chop(Item),
    PutOnPlate(Item),
    PutPlate,
    ServePlate,
    ServeItem(Item),
}

impl KitchenAction {
    fn tokens(self) -> Vec<TokenId> {
        match self {
            KitchenAction::Goto(s) => vec![GOTO, s.token(), T_EOA],
            KitchenAction::Pick(i) => vec![PICK, i.token(), T_EOA],
            KitchenAction::PickPlate => vec![PICK, T_PLATE, T_EOA],
            KitchenAction::Chop(i) => vec![CHOP, i.token(), T_EOA],
            KitchenAction::PutOnPlate(i) => vec![PUT, i.token(), T_PLATE, T_EOA],
            KitchenAction::PutPlate => vec![PUT, T_PLATE, T_EOA],
            KitchenAction::ServePlate => vec![SERVE, T_PLATE, T_EOA],
            KitchenAction::ServeItem(i) => vec![SERVE, i.token(), T_EOA],
        }
    }

    fn parse(tokens: &[TokenId]) -> Option<KitchenAction> {
        let item = Item::from_token;
        Some(match *tokens {
            [GOTO, s, T_EOA] => KitchenAction::Goto(Station::from_token(s)?),
            [PICK, T_PLATE, T_EOA] => KitchenAction::PickPlate,
            [PICK, i, T_EOA] => KitchenAction::Pick(item(i)?),
            [CHOP, i, T_EOA] => KitchenAction::Chop(item(i)?),
            [PUT, i, T_PLATE, T_EOA] => KitchenAction::PutOnPlate(item(i)?),
            [PUT, T_PLATE, T_EOA] => KitchenAction::PutPlate,
            [SERVE, T_PLATE, T_EOA] => KitchenAction::ServePlate,
            [SERVE, i, T_EOA] => KitchenAction::ServeItem(item(i)?),
            _ => return None,
        })
    }

    fn candidates() -> Vec<KitchenAction> {
        let mut v: Vec<KitchenAction> = Station::ALL.into_iter().map(KitchenAction::Goto).collect();
        v.extend(Item::ALL.map(KitchenAction::Pick));
        v.push(KitchenAction::PickPlate);
        v.extend(Item::ALL.map(KitchenAction::Chop));
        v.extend(Item::ALL.map(KitchenAction::PutOnPlate));
        v.push(KitchenAction::PutPlate);
        v.push(KitchenAction::ServePlate);
        v.extend(Item::ALL.map(KitchenAction::ServeItem));
        v
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct KitchenConfig {
    pub height: usize,
    pub width: usize,
    pub recipe: Vec<Item>,
    pub max_episode_steps: usize,
    pub chop_reward: f64,
    pub deliver_reward: f64,
    pub wrong_delivery_reward: f64,
    /// Magnitude of the penalty subtracted on every step.
    pub step_penalty: f64,
}

impl Default for KitchenConfig {
    fn default() -> Self {
        Self {
            height: 5,
            width: 5,
            recipe: vec![Item::Tomato, Item::Lettuce],
            max_episode_steps: 50,
            chop_reward: 0.2,
            deliver_reward: 1.0,
            wrong_delivery_reward: -0.1,
            step_penalty: 0.001,
        }
    }
}

/// A fully observable grid kitchen driven by `(verb, object[, target]) <eoa>` macro-actions.
///
/// Six stations sit on the border: cutting board, lettuce/tomato/onion shelves, the plate
/// station and the serving counter. `goto X` moves the agent onto the first floor cell
/// next to `X` (probing north, south, west, east). Other verbs require the agent to be
/// 4-adjacent to the relevant station. A chopped ingredient can only leave the agent's
/// hands by being put on the plate, and the plate is served from the counter.
#[derive(Clone, Debug)]
pub struct TokenKitchen {
    cfg: KitchenConfig,
    vocab: Vocabulary,
    stations: [(usize, usize); 6],
    access: [(usize, usize); 6],
    floor: Vec<(usize, usize)>,
    state: KitchenState,
    steps: usize,
    done: bool,
}

impl TokenKitchen {
    pub fn new(cfg: KitchenConfig) -> Result<Self, EnvError> {
        let (h, w) = (cfg.height, cfg.width);
        if h < 3 || w < 3 {
            return Err(EnvError::Config(format!("grid {h}x{w} must be at least 3x3")));
        }
        if cfg.recipe.is_empty() {
            return Err(EnvError::Config("recipe must not be empty".into()));
        }
        let mut seen = [false; 3];
        for &i in &cfg.recipe {
            if std::mem::replace(&mut seen[i as usize], true) {
                return Err(EnvError::Config(format!("{} listed twice in recipe", i.name())));
            }
        }
        if cfg.max_episode_steps == 0 {
            return Err(EnvError::Config("max_episode_steps must be positive".into()));
        }
        let stations = [
            (0, 0),
            (0, w / 2),
            (0, w - 1),
            (h - 1, 0),
            (h - 1, w / 2),
            (h - 1, w - 1),
        ];
        let is_floor = |c: (usize, usize)| !stations.contains(&c);
        let mut access = [(0, 0); 6];
        for (k, &(r, c)) in stations.iter().enumerate() {
            let probes = [
                r.checked_sub(1).map(|r| (r, c)),
                (r + 1 < h).then_some((r + 1, c)),
                c.checked_sub(1).map(|c| (r, c)),
                (c + 1 < w).then_some((r, c + 1)),
            ];
            access[k] = probes
                .into_iter()
                .flatten()
                .find(|&p| is_floor(p))
                .ok_or_else(|| EnvError::Config(format!("station {k} has no floor neighbour")))?;
        }
        let floor = (0..h)
            .flat_map(|r| (0..w).map(move |c| (r, c)))
            .filter(|&p| is_floor(p))
            .collect();
        let vocab = Vocabulary::new(VOCAB).expect("static vocabulary");
        let mut env = Self {
            cfg,
            vocab,
            stations,
            access,
            floor,
            state: KitchenState {
                cell: (0, 0),
                holding: Holding::Nothing,
                items: [ItemState::Raw; 3],
            },
            steps: 0,
            done: true,
        };
        env.state.cell = env.floor[0];
        Ok(env)
    }

    pub fn config(&self) -> &KitchenConfig {
        &self.cfg
    }

    pub fn state(&self) -> KitchenState {
        self.state
    }

    pub fn floor_cells(&self) -> &[(usize, usize)] {
        &self.floor
    }

    pub fn station_cell(&self, s: Station) -> (usize, usize) {
        self.stations[s as usize]
    }

    pub fn access_cell(&self, s: Station) -> (usize, usize) {
        self.access[s as usize]
    }

    pub fn encode(&self, s: &KitchenState) -> u64 {
        let cell = (s.cell.0 * self.cfg.width + s.cell.1) as u64;
        let items = s
            .items
            .iter()
            .rev()
            .fold(0u64, |acc, st| acc * 4 + *st as u64);
        (cell * 8 + s.holding.index()) * 64 + items
    }

    pub fn decode(&self, id: u64) -> KitchenState {
        let mut items_code = id % 64;
        let rest = id / 64;
        let holding = Holding::from_index(rest % 8);
        let cell = (rest / 8) as usize;
        let mut items = [ItemState::Raw; 3];
        for st in &mut items {
            *st = ItemState::ALL[(items_code % 4) as usize];
            items_code /= 4;
        }
        KitchenState {
            cell: (cell / self.cfg.width, cell % self.cfg.width),
            holding,
            items,
        }
    }

    pub fn observe(&self, s: &KitchenState) -> Observation {
        let text = match s.holding {
            Holding::Nothing => vec![],
            Holding::Plate => vec![T_PLATE],
            Holding::Raw(i) | Holding::Chopped(i) => vec![i.token()],
        };
        Observation::new(self.encode(s), text)
    }

    fn adjacent(&self, cell: (usize, usize), st: Station) -> bool {
        let (r, c) = self.stations[st as usize];
        r.abs_diff(cell.0) + c.abs_diff(cell.1) == 1
    }

    fn plate_complete(&self, s: &KitchenState) -> bool {
        Item::ALL.into_iter().all(|i| {
            (s.items[i as usize] == ItemState::Plated) == self.cfg.recipe.contains(&i)
        })
    }

    fn applicable(&self, s: &KitchenState, a: KitchenAction) -> bool {
        let near = |st| self.adjacent(s.cell, st);
        match a {
            KitchenAction::Goto(st) => !near(st),
            KitchenAction::Pick(i) => {
                near(i.shelf())
                    && s.holding == Holding::Nothing
                    && s.items[i as usize] == ItemState::Raw
            }
            KitchenAction::PickPlate => near(Station::Plate) && s.holding == Holding::Nothing,
            KitchenAction::Chop(i) => near(Station::Board) && s.holding == Holding::Raw(i),
            KitchenAction::PutOnPlate(i) => {
                near(Station::Plate) && s.holding == Holding::Chopped(i)
            }
            KitchenAction::PutPlate => near(Station::Plate) && s.holding == Holding::Plate,
            KitchenAction::ServePlate => near(Station::Counter) && s.holding == Holding::Plate,
            KitchenAction::ServeItem(i) => {
                near(Station::Counter)
                    && matches!(s.holding, Holding::Raw(x) | Holding::Chopped(x) if x == i)
            }
        }
    }

    /// Applies `a` (assumed applicable); returns the new state, event reward and termination.
    fn apply(&self, s: &KitchenState, a: KitchenAction) -> (KitchenState, f64, bool) {
        let mut n = *s;
        let mut reward = 0.0;
        let mut done = false;
        match a {
            KitchenAction::Goto(st) => n.cell = self.access[st as usize],
            KitchenAction::Pick(i) => n.holding = Holding::Raw(i),
            KitchenAction::PickPlate => n.holding = Holding::Plate,
            KitchenAction::Chop(i) => {
                n.holding = Holding::Chopped(i);
                n.items[i as usize] = ItemState::Chopped;
                if self.cfg.recipe.contains(&i) {
                    reward = self.cfg.chop_reward;
                }
            }
            KitchenAction::PutOnPlate(i) => {
                n.holding = Holding::Nothing;
                n.items[i as usize] = ItemState::Plated;
            }
            KitchenAction::PutPlate => n.holding = Holding::Nothing,
            KitchenAction::ServePlate if self.plate_complete(s) => {
                n.holding = Holding::Nothing;
                for st in &mut n.items {
                    if *st == ItemState::Plated {
                        *st = ItemState::Delivered;
                    }
                }
                reward = self.cfg.deliver_reward;
                done = true;
            }
            KitchenAction::ServePlate | KitchenAction::ServeItem(_) => {
                reward = self.cfg.wrong_delivery_reward;
            }
        }
        (n, reward, done)
    }

    fn outcome(&self, s: &KitchenState, action: &Action) -> (KitchenState, f64, bool) {
        let parsed = KitchenAction::parse(action.tokens()).filter(|&a| self.applicable(s, a));
        let (n, r, d) = match parsed {
            Some(a) => self.apply(s, a),
            None => (*s, 0.0, false),
        };
        (n, r - self.cfg.step_penalty, d)
    }
}

impl Environment for TokenKitchen {
    fn vocab(&self) -> &Vocabulary {
        &self.vocab
    }

    fn action_format(&self) -> ActionFormat {
        ActionFormat::Delimited {
            eoa: T_EOA,
            max_len: 4,
        }
    }

    fn observation_count(&self) -> usize {
        self.cfg.height * self.cfg.width * 8 * 64
    }

    /// Agent starts on a uniformly drawn floor cell, empty-handed, everything raw.
    fn reset(&mut self, seed: u64) -> Observation {
        let k = seeded(seed).random_range(0..self.floor.len());
        self.state = KitchenState {
            cell: self.floor[k],
            holding: Holding::Nothing,
            items: [ItemState::Raw; 3],
        };
        self.steps = 0;
        self.done = false;
        self.observe(&self.state)
    }

    fn step(&mut self, action: &Action) -> Result<Outcome, EnvError> {
        if self.done {
            return Err(EnvError::EpisodeOver);
        }
        let (n, reward, done) = self.outcome(&self.state, action);
        self.state = n;
        self.steps += 1;
        self.done = done || self.steps >= self.cfg.max_episode_steps;
        Ok(Outcome {
            obs: self.observe(&n),
            reward,
            done: self.done,
        })
    }

    fn legal_actions(&self, obs: &Observation) -> Vec<Action> {
        let s = self.decode(obs.id);
        KitchenAction::candidates()
            .into_iter()
            .filter(|&a| self.applicable(&s, a))
            .map(|a| Action::new(a.tokens()).expect("non-empty"))
            .collect()
    }
}

impl Enumerable for TokenKitchen {
    fn start_observations(&self) -> Vec<Observation> {
        self.floor
            .iter()
            .map(|&cell| {
                self.observe(&KitchenState {
                    cell,
                    holding: Holding::Nothing,
                    items: [ItemState::Raw; 3],
                })
            })
            .collect()
    }

    fn transition(&self, obs: &Observation, action: &Action) -> Outcome {
        let (n, reward, done) = self.outcome(&self.decode(obs.id), action);
        Outcome {
            obs: self.observe(&n),
            reward,
            done,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn act(env: &TokenKitchen, words: &[&str]) -> Action {
        Action::new(env.vocab().encode(words).unwrap()).unwrap()
    }

    fn at(env: &mut TokenKitchen, s: KitchenState) -> Observation {
        env.reset(0);
        env.state = s;
        env.observe(&s)
    }

    #[test]
    fn layout_of_default_grid() {
        let env = TokenKitchen::new(KitchenConfig::default()).unwrap();
        assert_eq!(env.floor_cells().len(), 19);
        assert_eq!(env.access_cell(Station::Board), (1, 0));
        assert_eq!(env.access_cell(Station::Counter), (3, 4));
        assert_eq!(env.observation_count(), 25 * 512);
    }

    #[test]
    fn encoding_round_trips() {
        let env = TokenKitchen::new(KitchenConfig::default()).unwrap();
        for id in (0..env.observation_count() as u64).step_by(37) {
            assert_eq!(env.encode(&env.decode(id)), id);
        }
    }

    #[test]
    fn chop_and_deliveries() {
        let mut env = TokenKitchen::new(KitchenConfig::default()).unwrap();
        let s = KitchenState {
            cell: env.access_cell(Station::Board),
            holding: Holding::Raw(Item::Tomato),
            items: [ItemState::Raw; 3],
        };
        let o = at(&mut env, s);
        let chop = act(&env, &["chop", "tomato", EOA]);
        assert!(env.legal_actions(&o).contains(&chop));
        let out = env.step(&chop).unwrap();
        assert!((out.reward - (0.2 - 0.001)).abs() < 1e-15);
        assert!(!out.done);

        let s = KitchenState {
            cell: env.access_cell(Station::Counter),
            holding: Holding::Chopped(Item::Onion),
            items: [ItemState::Raw, ItemState::Raw, ItemState::Chopped],
        };
        at(&mut env, s);
        let out = env.step(&act(&env, &["serve", "onion", EOA])).unwrap();
        assert!((out.reward - (-0.1 - 0.001)).abs() < 1e-15);
        assert!(!out.done);
        assert_eq!(env.state(), s);

        let s = KitchenState {
            cell: env.access_cell(Station::Counter),
            holding: Holding::Plate,
            items: [ItemState::Plated, ItemState::Plated, ItemState::Raw],
        };
        at(&mut env, s);
        let out = env.step(&act(&env, &["serve", "plate", EOA])).unwrap();
        assert!((out.reward - 0.999).abs() < 1e-15);
        assert!(out.done);
        assert_eq!(env.step(&act(&env, &["goto", "board", EOA])), Err(EnvError::EpisodeOver));
    }

    #[test]
    fn inapplicable_costs_only_the_penalty() {
        let mut env = TokenKitchen::new(KitchenConfig::default()).unwrap();
        let o = env.reset(5);
        let before = env.state();
        let bad = act(&env, &["chop", "tomato", EOA]);
        assert!(!env.legal_actions(&o).contains(&bad));
        let out = env.step(&bad).unwrap();
        assert_eq!(out.reward, -0.001);
        assert_eq!(env.state(), before);
        let junk = act(&env, &["put", "put", EOA]);
        assert_eq!(env.step(&junk).unwrap().reward, -0.001);
    }

    #[test]
    fn reset_is_seeded() {
        let mut env = TokenKitchen::new(KitchenConfig::default()).unwrap();
        let a = env.reset(0);
        let b = env.reset(0);
        assert_eq!(a, b);
        let starts = env.start_observations();
        for seed in 0..50 {
            assert!(starts.contains(&env.reset(seed)));
        }
    }

    #[test]
    fn time_limit() {
        let cfg = KitchenConfig {
            max_episode_steps: 2,
            ..KitchenConfig::default()
        };
        let mut env = TokenKitchen::new(cfg).unwrap();
        env.reset(1);
        let junk = act(&env, &["put", "put", EOA]);
        assert!(!env.step(&junk).unwrap().done);
        assert!(env.step(&junk).unwrap().done);
    }
}
