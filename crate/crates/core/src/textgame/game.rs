//! Text-game interface and built-in fixture games.

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GameStep {
    pub observation: String,
    pub score: f64,
    pub reward: f64,
    pub done: bool,
    pub won: bool,
}

#[derive(Debug, Clone, Error, PartialEq)]
#[error("{kind}: {message}")]
pub struct GameError {
    pub kind: String,
    pub message: String,
}

impl GameError {
    pub fn new(kind: impl Into<String>, message: impl Into<String>) -> Self {
        GameError {
            kind: kind.into(),
            message: message.into(),
        }
    }
}

/// `init` always starts a fresh game, so callers can replay action prefixes.
pub trait TextGame {
    fn init(&mut self) -> Result<String, GameError>;
    fn actions(&mut self) -> Result<Vec<String>, GameError>;
    fn step(&mut self, action: &str) -> Result<GameStep, GameError>;
}

impl<T: TextGame + ?Sized> TextGame for Box<T> {
    fn init(&mut self) -> Result<String, GameError> {
        (**self).init()
    }
    fn actions(&mut self) -> Result<Vec<String>, GameError> {
        (**self).actions()
    }
    fn step(&mut self, action: &str) -> Result<GameStep, GameError> {
        (**self).step(action)
    }
}

const STAGES: [&str; 5] = ["seed", "sprout", "young plant", "mature", "reproducing"];
const JUG_CAPACITY: u32 = 4;
const POT_CAPACITY: u32 = 4;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum PeaAt {
    Table,
    Inventory,
    Pot,
}

/// Grow a pea to the reproducing stage: plant it in the flower pot, fill the
/// jug at the sink and keep the pot watered.
#[derive(Debug, Clone)]
pub struct PeaGarden {
    pea: PeaAt,
    sink_on: bool,
    jug: u32,
    pot: u32,
    pea_water: u32,
    stage: usize,
    hydrated_ticks: u32,
    started: bool,
}

impl Default for PeaGarden {
    fn default() -> Self {
        PeaGarden {
            pea: PeaAt::Table,
            sink_on: false,
            jug: 0,
            pot: 0,
            pea_water: 0,
            stage: 0,
            hydrated_ticks: 0,
            started: false,
        }
    }
}

impl PeaGarden {
    pub fn new() -> Self {
        Self::default()
    }

    fn describe(&self) -> String {
        let pea = match self.pea {
            PeaAt::Table => "on the table",
            PeaAt::Inventory => "in your hand",
            PeaAt::Pot => "planted in the flower pot",
        };
        format!(
            "You are in a small garden. The pea ({}) is {pea}. The flower pot holds {} units of water. The jug holds {} units. The sink is {}.",
            STAGES[self.stage],
            self.pot,
            self.jug,
            if self.sink_on { "on" } else { "off" }
        )
    }

    fn score(&self) -> f64 {
        (self.stage * 25) as f64
    }

    fn tick(&mut self) {
        if self.pea != PeaAt::Pot {
            return;
        }
        if self.pot > 0 {
            self.pot -= 1;
            self.pea_water += 1;
        }
        if self.pea_water > 0 {
            self.pea_water -= 1;
            self.hydrated_ticks += 1;
            if self.hydrated_ticks >= 2 && self.stage + 1 < STAGES.len() {
                self.stage += 1;
                self.hydrated_ticks = 0;
            }
        }
    }
}

impl TextGame for PeaGarden {
    fn init(&mut self) -> Result<String, GameError> {
        *self = PeaGarden {
            started: true,
            ..PeaGarden::default()
        };
        Ok(self.describe())
    }

    fn actions(&mut self) -> Result<Vec<String>, GameError> {
        if !self.started {
            return Err(GameError::new("RuntimeError", "game not initialized"));
        }
        let mut out = vec!["look around".to_string()];
        match self.pea {
            PeaAt::Table => out.push("take pea".into()),
            PeaAt::Inventory => out.push("put pea in flower pot".into()),
            PeaAt::Pot => {}
        }
        out.push(if self.sink_on { "turn off sink" } else { "turn on sink" }.into());
        out.push("fill jug".into());
        out.push("pour jug in flower pot".into());
        out.push("wait".into());
        Ok(out)
    }

    fn step(&mut self, action: &str) -> Result<GameStep, GameError> {
        if !self.started {
            return Err(GameError::new("RuntimeError", "game not initialized"));
        }
        let before = self.score();
        let text = match action.trim() {
            "look around" => self.describe(),
            "take pea" if self.pea == PeaAt::Table => {
                self.pea = PeaAt::Inventory;
                "You take the pea.".into()
            }
            "put pea in flower pot" if self.pea == PeaAt::Inventory => {
                self.pea = PeaAt::Pot;
                "You plant the pea in the flower pot.".into()
            }
            "turn on sink" => {
                self.sink_on = true;
                "The sink is now on.".into()
            }
            "turn off sink" => {
                self.sink_on = false;
                "The sink is now off.".into()
            }
            "fill jug" if self.sink_on => {
                self.jug = JUG_CAPACITY;
                "You fill the jug at the sink.".into()
            }
            "fill jug" => "The sink is off, so nothing comes out.".into(),
            "pour jug in flower pot" if self.jug == 0 => "The jug is empty.".into(),
            "pour jug in flower pot" => {
                let moved = self.jug.min(POT_CAPACITY - self.pot);
                self.jug -= moved;
                self.pot += moved;
                format!("You pour {moved} units of water into the flower pot.")
            }
            "wait" => "Time passes.".into(),
            other => format!("I don't understand '{other}'."),
        };
        self.tick();
        let won = self.stage == STAGES.len() - 1;
        let score = self.score();
        Ok(GameStep {
            observation: text,
            score,
            reward: score - before,
            done: won,
            won,
        })
    }
}

/// Two-room toy game won by "take key" then "open door".
#[derive(Debug, Clone, Default)]
pub struct KeyDoor {
    has_key: bool,
    open: bool,
}

impl TextGame for KeyDoor {
    fn init(&mut self) -> Result<String, GameError> {
        *self = KeyDoor::default();
        Ok("You are in a hallway with a locked door. A key lies on the floor.".into())
    }

    fn actions(&mut self) -> Result<Vec<String>, GameError> {
        let mut a = vec!["look".to_string()];
        if !self.has_key {
            a.push("take key".into());
        }
        a.push("open door".into());
        Ok(a)
    }

    fn step(&mut self, action: &str) -> Result<GameStep, GameError> {
        let (obs, won) = match action {
            "take key" if !self.has_key => {
                self.has_key = true;
                ("You pick up the key.", false)
            }
            "open door" if self.has_key => {
                self.open = true;
                ("The door swings open. You escape!", true)
            }
            "open door" => ("The door is locked.", false),
            "look" => ("A hallway and a door.", false),
            _ => ("Nothing happens.", false),
        };
        Ok(GameStep {
            observation: obs.into(),
            score: if won { 1.0 } else { 0.0 },
            reward: if won { 1.0 } else { 0.0 },
            done: won,
            won,
        })
    }
}

/// Fault injection around another game, for validity tests.
#[derive(Debug, Clone, Default)]
pub struct Faulty<G> {
    pub inner: G,
    pub fail_init: bool,
    pub fail_actions: bool,
    /// Steps whose first token equals this verb raise.
    pub fail_verb: Option<String>,
    /// Never report a win.
    pub never_win: bool,
}

impl<G: TextGame> TextGame for Faulty<G> {
    fn init(&mut self) -> Result<String, GameError> {
        if self.fail_init {
            return Err(GameError::new("AttributeError", "'Game' object has no attribute 'rooms'"));
        }
        self.inner.init()
    }

    fn actions(&mut self) -> Result<Vec<String>, GameError> {
        if self.fail_actions {
            return Err(GameError::new("TypeError", "generatePossibleActions() missing argument"));
        }
        self.inner.actions()
    }

    fn step(&mut self, action: &str) -> Result<GameStep, GameError> {
        if let Some(v) = &self.fail_verb {
            if action.split_whitespace().next() == Some(v.as_str()) {
                return Err(GameError::new("KeyError", format!("'{v}'")));
            }
        }
        let mut s = self.inner.step(action)?;
        if self.never_win {
            s.won = false;
            s.done = false;
        }
        Ok(s)
    }
}

pub fn fixture_game(name: &str) -> Option<Box<dyn TextGame + Send>> {
    match name {
        "pea-garden" => Some(Box::new(PeaGarden::new())),
        "key-door" => Some(Box::new(KeyDoor::default())),
        "crashing" => Some(Box::new(Faulty {
            inner: PeaGarden::new(),
            fail_init: true,
            ..Default::default()
        })),
        _ => None,
    }
}
