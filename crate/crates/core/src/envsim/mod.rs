//! Deterministic episodic text environments with hard-exploration structure.
//!
//! Every family is a corridor of rooms. Objects are hidden until the room is
//! looked at, a focus action on the wrong (or not yet visible) object ends the
//! episode with the family penalty, and a milestone table hands out partial
//! rewards that sum to 100 on success. Definitions live in plain-text files
//! under `crates/core/envs/` (format in `ENV_FORMAT.md`).

mod def;

use std::sync::{Arc, OnceLock};

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use def::{Bound, CombineDef, EnvDef, Event, MilestoneDef, ObjectDef, Placement};

use crate::hashing::{hash_parts, splitmix64};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum EnvError {
    #[error("unknown environment `{0}`")]
    UnknownEnv(String),
    #[error("variant {variant} out of range for `{env}` (0..{count})")]
    VariantOutOfRange { env: String, variant: u64, count: u64 },
    #[error("episode already done")]
    EpisodeDone,
    #[error("action {id} is not admissible ({count} actions available)")]
    InadmissibleAction { id: usize, count: usize },
    #[error("env definition line {line}: {msg}")]
    Parse { line: usize, msg: String },
}

pub const CHAIN_CORRIDOR: &str = "chain-corridor";
pub const LIGHTBULB_WORLD: &str = "lightbulb-world";
pub const PAINT_MIX: &str = "paint-mix";

const BUILTIN_SOURCES: [(&str, &str); 3] = [
    (CHAIN_CORRIDOR, include_str!("../../envs/chain-corridor.env")),
    (LIGHTBULB_WORLD, include_str!("../../envs/lightbulb-world.env")),
    (PAINT_MIX, include_str!("../../envs/paint-mix.env")),
];

const LAYOUT_SALT: u64 = 0x1a70_0751_2025_0003;

fn builtins() -> &'static [Arc<EnvDef>] {
    static DEFS: OnceLock<Vec<Arc<EnvDef>>> = OnceLock::new();
    DEFS.get_or_init(|| {
        BUILTIN_SOURCES
            .iter()
            .map(|(id, src)| {
                let def = EnvDef::parse(src).unwrap_or_else(|e| panic!("builtin env `{id}`: {e}"));
                assert_eq!(def.family, *id);
                Arc::new(def)
            })
            .collect()
    })
}

/// Looks up a built-in environment family.
pub fn env_def(env_id: &str) -> Result<Arc<EnvDef>, EnvError> {
    builtins()
        .iter()
        .find(|d| d.family == env_id)
        .cloned()
        .ok_or_else(|| EnvError::UnknownEnv(env_id.to_string()))
}

pub fn builtin_families() -> Vec<&'static str> {
    BUILTIN_SOURCES.iter().map(|(id, _)| *id).collect()
}

/// A task: family name, layout variant and the description shown to the policy.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct TaskSpec {
    pub env_id: String,
    pub variant: u64,
    pub description: Vec<String>,
}

impl TaskSpec {
    /// Resolves the task description of a built-in family variant.
    pub fn new(env_id: &str, variant: u64) -> Result<TaskSpec, EnvError> {
        let def = env_def(env_id)?;
        Ok(Layout::resolve(&def, variant)?.task)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct ActionId(pub usize);

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Observation {
    pub tokens: Vec<String>,
    pub room_id: usize,
    pub milestone_flags: u32,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepOutcome {
    pub reward: f64,
    pub next_obs: Observation,
    pub done: bool,
    pub success: bool,
}

/// Per-variant resolution of a definition: palette colours and object rooms.
#[derive(Debug, Clone)]
pub struct Layout {
    pub task: TaskSpec,
    pub colors: Vec<String>,
    pub object_names: Vec<Vec<String>>,
    /// `None` for unplaced (product) objects.
    pub object_rooms: Vec<Option<usize>>,
}

impl Layout {
    pub fn resolve(def: &EnvDef, variant: u64) -> Result<Layout, EnvError> {
        if variant >= def.variants {
            return Err(EnvError::VariantOutOfRange { env: def.family.clone(), variant, count: def.variants });
        }
        // Rooms are the mixed-radix digits of the variant and the first colour
        // cycles through the palette, so consecutive variants sweep the layout grid.
        let mut state = hash_parts(LAYOUT_SALT, &[&def.family]) ^ variant;
        let mut colors = def.palette.clone();
        if !colors.is_empty() {
            let k = (variant % colors.len() as u64) as usize;
            colors.rotate_left(k);
        }
        for i in (2..colors.len()).rev() {
            let j = 1 + (splitmix64(&mut state) % i as u64) as usize;
            colors.swap(i, j);
        }
        let mut digits = variant;
        let fill = |toks: &[String]| -> Vec<String> {
            toks.iter()
                .map(|t| match def::palette_slot(t) {
                    Some(k) => colors[k].clone(),
                    None => t.clone(),
                })
                .collect()
        };
        let object_names: Vec<Vec<String>> = def.objects.iter().map(|o| fill(&o.name)).collect();
        let mut object_rooms: Vec<Option<usize>> = Vec::with_capacity(def.objects.len());
        for o in &def.objects {
            let room = match &o.placement {
                Placement::Unplaced => None,
                Placement::Range(lo, hi) => {
                    let resolve = |b: &Bound| match b {
                        Bound::Fixed(r) => *r,
                        Bound::Object(i) => object_rooms[*i].unwrap_or(0),
                    };
                    let (a, b) = (resolve(lo), resolve(hi));
                    let (a, b) = (a.min(b), a.max(b));
                    let span = (b - a + 1) as u64;
                    let d = digits % span;
                    digits /= span;
                    Some(a + d as usize)
                }
            };
            object_rooms.push(room);
        }
        let task = TaskSpec { env_id: def.family.clone(), variant, description: fill(&def.task) };
        Ok(Layout { task, colors, object_names, object_rooms })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Loc {
    Room(usize),
    Held,
    Absent,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Action {
    Focus(usize),
    Combine(usize),
    Take(usize),
    Look,
    Forward,
    Back,
}

#[derive(Debug, Clone, PartialEq, Eq)]
struct State {
    room: usize,
    looked: Vec<bool>,
    locs: Vec<Loc>,
    achieved: u32,
    steps: usize,
    done: bool,
    success: bool,
}

/// A running environment instance. Cheap to clone; clones evolve independently.
#[derive(Debug, Clone)]
pub struct Env {
    def: Arc<EnvDef>,
    layout: Arc<Layout>,
    state: State,
}

/// Builds a fresh environment for a built-in family variant.
pub fn make_env(spec: &TaskSpec) -> Result<Env, EnvError> {
    let def = env_def(&spec.env_id)?;
    Env::from_def(def, spec.variant)
}

impl Env {
    pub fn from_def(def: Arc<EnvDef>, variant: u64) -> Result<Env, EnvError> {
        let layout = Arc::new(Layout::resolve(&def, variant)?);
        let state = Self::initial_state(&def, &layout);
        Ok(Env { def, layout, state })
    }

    fn initial_state(def: &EnvDef, layout: &Layout) -> State {
        State {
            room: 0,
            looked: vec![false; def.rooms],
            locs: layout.object_rooms.iter().map(|r| r.map_or(Loc::Absent, Loc::Room)).collect(),
            achieved: 0,
            steps: 0,
            done: false,
            success: false,
        }
    }

    pub fn def(&self) -> &EnvDef {
        &self.def
    }

    pub fn layout(&self) -> &Layout {
        &self.layout
    }

    pub fn task(&self) -> &TaskSpec {
        &self.layout.task
    }

    pub fn reset(&mut self) -> Observation {
        self.state = Self::initial_state(&self.def, &self.layout);
        self.observation()
    }

    pub fn is_done(&self) -> bool {
        self.state.done
    }

    pub fn steps_taken(&self) -> usize {
        self.state.steps
    }

    fn visible(&self, obj: usize) -> bool {
        match self.state.locs[obj] {
            Loc::Held => true,
            Loc::Room(r) => r == self.state.room && self.state.looked[r],
            Loc::Absent => false,
        }
    }

    pub fn observation(&self) -> Observation {
        let s = &self.state;
        let mut tokens = vec![self.def.room_names[s.room].clone()];
        tokens.push(if s.looked[s.room] { "looked" } else { "unlooked" }.to_string());
        if s.room + 1 == self.def.rooms {
            tokens.push("deadend".to_string());
        }
        for (i, loc) in s.locs.iter().enumerate() {
            if *loc == Loc::Room(s.room) && s.looked[s.room] {
                tokens.extend(self.layout.object_names[i].iter().cloned());
            }
        }
        if (0..self.def.objects.len()).any(|i| self.event_achieved(Event::Focus(i))) {
            tokens.push("focused".to_string());
        }
        let before = tokens.len();
        for (i, loc) in s.locs.iter().enumerate() {
            if *loc == Loc::Held {
                tokens.push("holding".to_string());
                tokens.extend(self.layout.object_names[i].iter().cloned());
            }
        }
        if tokens.len() == before {
            tokens.extend(["hands".to_string(), "empty".to_string()]);
        }
        Observation { tokens, room_id: s.room, milestone_flags: s.achieved }
    }

    fn actions(&self) -> Vec<Action> {
        let s = &self.state;
        let mut out = Vec::new();
        for (i, o) in self.def.objects.iter().enumerate() {
            if o.focusable && !self.event_achieved(Event::Focus(i)) {
                out.push(Action::Focus(i));
            }
        }
        for (ci, c) in self.def.combines.iter().enumerate() {
            // Without a product, a combine only counts once its prerequisite milestone is met.
            let effective = match c.product {
                Some(p) => s.locs[p] == Loc::Absent,
                None => self.milestone_pending(Event::Combine(ci)),
            };
            if s.locs[c.held] == Loc::Held && c.held != c.other && self.visible(c.other) && effective {
                out.push(Action::Combine(ci));
            }
        }
        for (i, o) in self.def.objects.iter().enumerate() {
            if o.takeable && s.locs[i] == Loc::Room(s.room) && s.looked[s.room] {
                out.push(Action::Take(i));
            }
        }
        if !s.looked[s.room] {
            out.push(Action::Look);
        }
        if s.room + 1 < self.def.rooms || (out.is_empty() && self.def.oneway) {
            out.push(Action::Forward);
        }
        if !self.def.oneway {
            out.push(Action::Back);
        }
        out
    }

    fn action_tokens(&self, a: Action) -> Vec<String> {
        let name = |i: usize| self.layout.object_names[i].iter().cloned();
        match a {
            Action::Focus(i) => ["focus", "on"].iter().map(|s| s.to_string()).chain(name(i)).collect(),
            Action::Combine(ci) => {
                let c = &self.def.combines[ci];
                std::iter::once(c.verb.clone())
                    .chain(name(c.held))
                    .chain(std::iter::once(c.prep.clone()))
                    .chain(name(c.other))
                    .collect()
            }
            Action::Take(i) => ["pick", "up"].iter().map(|s| s.to_string()).chain(name(i)).collect(),
            Action::Look => self.def.look.clone(),
            Action::Forward => vec!["move".into(), "forward".into()],
            Action::Back => vec!["move".into(), "back".into()],
        }
    }

    /// Admissible actions in deterministic order, with their token lists.
    pub fn admissible_actions(&self) -> Result<Vec<(ActionId, Vec<String>)>, EnvError> {
        if self.state.done {
            return Err(EnvError::EpisodeDone);
        }
        Ok(self
            .actions()
            .into_iter()
            .enumerate()
            .map(|(i, a)| (ActionId(i), self.action_tokens(a)))
            .collect())
    }

    fn event_achieved(&self, e: Event) -> bool {
        self.def
            .milestones
            .iter()
            .enumerate()
            .any(|(i, m)| m.event == e && self.state.achieved & (1 << i) != 0)
    }

    /// Some milestone for `e` is unset and its prerequisite holds.
    fn milestone_pending(&self, e: Event) -> bool {
        self.def.milestones.iter().enumerate().any(|(k, m)| {
            m.event == e && self.state.achieved & (1 << k) == 0 && m.after.is_none_or(|p| self.event_achieved(p))
        })
    }

    /// Grants every pending milestone for `e` whose prerequisite holds.
    fn grant(&mut self, e: Event) -> f64 {
        let mut reward = 0.0;
        for i in 0..self.def.milestones.len() {
            let m = &self.def.milestones[i];
            if m.event != e || self.state.achieved & (1 << i) != 0 {
                continue;
            }
            if m.after.is_some_and(|p| !self.event_achieved(p)) {
                continue;
            }
            reward += m.reward;
            self.state.achieved |= 1 << i;
        }
        reward
    }

    pub fn step(&mut self, id: ActionId) -> Result<StepOutcome, EnvError> {
        if self.state.done {
            return Err(EnvError::EpisodeDone);
        }
        let actions = self.actions();
        let action = *actions
            .get(id.0)
            .ok_or(EnvError::InadmissibleAction { id: id.0, count: actions.len() })?;
        let mut reward = 0.0;
        let mut failed = false;
        match action {
            Action::Focus(i) => {
                let pending = self.milestone_pending(Event::Focus(i));
                if self.visible(i) && pending {
                    reward += self.grant(Event::Focus(i));
                } else if !(self.visible(i) && self.event_achieved(Event::Focus(i))) {
                    failed = true;
                }
            }
            Action::Combine(ci) => {
                let c = self.def.combines[ci].clone();
                if let Some(p) = c.product {
                    self.state.locs[c.held] = Loc::Absent;
                    self.state.locs[c.other] = Loc::Absent;
                    self.state.locs[p] = Loc::Held;
                }
                reward += self.grant(Event::Combine(ci));
            }
            Action::Take(i) => {
                self.state.locs[i] = Loc::Held;
                reward += self.grant(Event::Take(i));
            }
            Action::Look => {
                let room = self.state.room;
                self.state.looked[room] = true;
                for i in 0..self.def.objects.len() {
                    if self.state.locs[i] == Loc::Room(room) {
                        reward += self.grant(Event::See(i));
                    }
                }
            }
            Action::Forward | Action::Back => {
                let room = self.state.room;
                self.state.room = match action {
                    Action::Forward => (room + 1).min(self.def.rooms - 1),
                    _ => room.saturating_sub(1),
                };
                if self.state.room != room {
                    reward += self.grant(Event::Reach(self.state.room));
                }
            }
        }
        self.state.steps += 1;
        if failed {
            reward = self.def.penalty;
            self.state.done = true;
        } else if self.state.achieved.count_ones() as usize == self.def.milestones.len() {
            self.state.done = true;
            self.state.success = true;
        } else if self.state.steps >= self.def.max_steps {
            self.state.done = true;
        }
        Ok(StepOutcome {
            reward,
            next_obs: self.observation(),
            done: self.state.done,
            success: self.state.success,
        })
    }

    /// Display tokens of milestone `i`.
    pub fn milestone_name(&self, i: usize) -> Vec<String> {
        let name = |o: usize| self.layout.object_names[o].clone();
        let mut out = Vec::new();
        match self.def.milestones[i].event {
            Event::See(o) => {
                out.push("see".to_string());
                out.extend(name(o));
            }
            Event::Take(o) => {
                out.push("take".to_string());
                out.extend(name(o));
            }
            Event::Focus(o) => {
                out.push("focus".to_string());
                out.extend(name(o));
            }
            Event::Combine(ci) => {
                let c = &self.def.combines[ci];
                out.push(c.verb.clone());
                out.extend(name(c.held));
                out.push(c.prep.clone());
                out.extend(name(c.other));
            }
            Event::Reach(r) => {
                out.push("reach".to_string());
                out.push(self.def.room_names[r].clone());
            }
        }
        out
    }

    /// Names of milestones not set in `flags`, in table order.
    pub fn missing_milestones(&self, flags: u32) -> Vec<Vec<String>> {
        (0..self.def.milestones.len())
            .filter(|i| flags & (1 << i) == 0)
            .map(|i| self.milestone_name(i))
            .collect()
    }

    /// Every token the family can emit in tasks, observations, actions or milestones.
    pub fn vocabulary(def: &EnvDef) -> std::collections::BTreeSet<String> {
        let mut v: std::collections::BTreeSet<String> = [
            "looked", "unlooked", "deadend", "focused", "holding", "hands", "empty", "focus", "on", "pick", "up", "move", "forward", "back",
            "see", "take", "reach",
        ]
        .iter()
        .map(|s| s.to_string())
        .collect();
        v.extend(def.room_names.iter().cloned());
        v.extend(def.look.iter().cloned());
        v.extend(def.palette.iter().cloned());
        for c in &def.combines {
            v.insert(c.verb.clone());
            v.insert(c.prep.clone());
        }
        for t in def.task.iter().chain(def.objects.iter().flat_map(|o| o.name.iter())) {
            if def::palette_slot(t).is_none() {
                v.insert(t.clone());
            }
        }
        v
    }
}
