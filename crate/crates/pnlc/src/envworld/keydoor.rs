//! A corridor of `n` rooms with a key and a locked door at the far end.
//! Grabbing the key and opening the door (reward 1) completes the task.
//! State = (position, has_key, door_open), rendered canonically.

use super::{EnvError, SyntheticEnv};

pub const LEFT: usize = 0;
pub const RIGHT: usize = 1;
pub const INTERACT: usize = 2;

#[derive(Debug, Clone)]
pub struct KeyDoorEnv {
    pub n: usize,
    pub key_pos: usize,
    pub horizon: usize,
}

impl Default for KeyDoorEnv {
    fn default() -> Self {
        Self {
            n: 5,
            key_pos: 1,
            horizon: 12,
        }
    }
}

impl KeyDoorEnv {
    pub fn door_pos(&self) -> usize {
        self.n - 1
    }

    fn pack(&self, pos: usize, key: bool, door: bool) -> usize {
        pos * 4 + (key as usize) * 2 + door as usize
    }

    fn unpack(&self, state: usize) -> (usize, bool, bool) {
        (state / 4, state / 2 % 2 == 1, state % 2 == 1)
    }
}

impl SyntheticEnv for KeyDoorEnv {
    fn name(&self) -> &'static str {
        "keydoor"
    }

    fn num_states(&self) -> usize {
        self.n * 4
    }

    fn num_actions(&self) -> usize {
        3
    }

    fn horizon(&self) -> usize {
        self.horizon
    }

    fn initial_state(&self) -> usize {
        // start in the middle of the corridor so the key lies behind the
        // agent and "rush the door" is a genuine trap
        self.pack(self.n / 2, false, false)
    }

    fn render(&self, state: usize) -> String {
        let (pos, key, door) = self.unpack(state);
        format!("pos={pos} key={} door={}", key as u8, door as u8)
    }

    fn action_name(&self, action: usize) -> String {
        ["left", "right", "interact"][action].to_string()
    }

    fn parse_action(&self, text: &str) -> Result<usize, EnvError> {
        match text.trim() {
            "left" => Ok(LEFT),
            "right" => Ok(RIGHT),
            "interact" => Ok(INTERACT),
            other => Err(EnvError::IllegalAction {
                action: other.to_string(),
                legal: vec!["left".into(), "right".into(), "interact".into()],
            }),
        }
    }

    fn action_text(&self, _state: usize, action: usize) -> String {
        self.action_name(action)
    }

    fn step(&self, state: usize, action: usize) -> (usize, f64, bool) {
        let (pos, key, door) = self.unpack(state);
        if door {
            return (state, 0.0, true);
        }
        match action {
            LEFT => (self.pack(pos.saturating_sub(1), key, door), 0.0, false),
            RIGHT => (self.pack((pos + 1).min(self.n - 1), key, door), 0.0, false),
            INTERACT => {
                if pos == self.key_pos && !key {
                    (self.pack(pos, true, door), 0.0, false)
                } else if pos == self.door_pos() && key {
                    (self.pack(pos, key, true), 1.0, true)
                } else {
                    (state, 0.0, false)
                }
            }
            _ => unreachable!("action out of range"),
        }
    }

    fn success_reward(&self) -> f64 {
        1.0
    }

    fn optimal_action(&self, state: usize) -> usize {
        let (pos, key, door) = self.unpack(state);
        if door {
            return LEFT;
        }
        if !key {
            match pos.cmp(&self.key_pos) {
                std::cmp::Ordering::Greater => LEFT,
                std::cmp::Ordering::Less => RIGHT,
                std::cmp::Ordering::Equal => INTERACT,
            }
        } else if pos < self.door_pos() {
            RIGHT
        } else {
            INTERACT
        }
    }

    fn offplan_action(&self, state: usize) -> usize {
        let (pos, key, door) = self.unpack(state);
        if door {
            return LEFT;
        }
        if !key {
            // rush the door without the key
            if pos < self.door_pos() {
                RIGHT
            } else {
                INTERACT
            }
        } else {
            // wander away from the door
            LEFT
        }
    }

    fn thought_for(&self, state: usize, action: usize) -> String {
        let (pos, key, door) = self.unpack(state);
        if door {
            return "rest easy".to_string();
        }
        let text = if !key {
            let toward_key = (pos > self.key_pos && action == LEFT)
                || (pos < self.key_pos && action == RIGHT)
                || (pos == self.key_pos && action == INTERACT);
            if toward_key {
                "grab the key first"
            } else if action == RIGHT || (action == INTERACT && pos == self.door_pos()) {
                "rush the door"
            } else if action == LEFT {
                "wander away"
            } else {
                "fiddle around"
            }
        } else if (action == RIGHT && pos < self.door_pos())
            || (action == INTERACT && pos == self.door_pos())
        {
            "open the door"
        } else if action == LEFT {
            "wander away"
        } else {
            "fiddle around"
        };
        text.to_string()
    }

    fn success_anchor(&self) -> String {
        self.render(self.pack(self.door_pos(), true, true))
    }

    fn failure_anchor(&self) -> String {
        self.render(self.pack(self.door_pos(), false, false))
    }
}
