//! A goal-oriented dialogue environment: a persuadee automaton moves through
//! moods as the agent picks bracket-tagged rhetorical strategies. Repeating a
//! tag twice in a row alienates the persuadee; convincing them is worth 2.0,
//! leaving them curious at the horizon 0.5.

use super::{EnvError, SyntheticEnv};

pub const TAGS: [&str; 4] = ["credibility", "emotional", "impact", "address-skepticism"];

const CREDIBILITY: usize = 0;
const EMOTIONAL: usize = 1;
const IMPACT: usize = 2;
const ADDRESS_SKEPTICISM: usize = 3;

const MOODS: [&str; 4] = ["skeptical", "curious", "convinced", "alienated"];
const SKEPTICAL: usize = 0;
const CURIOUS: usize = 1;
const CONVINCED: usize = 2;
const ALIENATED: usize = 3;

/// last-tag slot: 0 = none, 1..=4 = TAGS index + 1
#[derive(Debug, Clone)]
pub struct DonationEnv {
    pub horizon: usize,
}

impl Default for DonationEnv {
    fn default() -> Self {
        Self { horizon: 10 }
    }
}

impl DonationEnv {
    fn pack(&self, mood: usize, last: usize) -> usize {
        mood * 5 + last
    }

    fn unpack(&self, state: usize) -> (usize, usize) {
        (state / 5, state % 5)
    }

    fn mood_step(&self, mood: usize, tag: usize) -> usize {
        match (mood, tag) {
            (SKEPTICAL, ADDRESS_SKEPTICISM) => CURIOUS,
            (SKEPTICAL, _) => SKEPTICAL,
            (CURIOUS, CREDIBILITY) => CONVINCED,
            (CURIOUS, _) => CURIOUS,
            (m, _) => m,
        }
    }
}

impl SyntheticEnv for DonationEnv {
    fn name(&self) -> &'static str {
        "donation"
    }

    fn num_states(&self) -> usize {
        4 * 5
    }

    fn num_actions(&self) -> usize {
        4
    }

    fn horizon(&self) -> usize {
        self.horizon
    }

    fn initial_state(&self) -> usize {
        self.pack(SKEPTICAL, 0)
    }

    fn render(&self, state: usize) -> String {
        let (mood, last) = self.unpack(state);
        let last_name = if last == 0 { "none" } else { TAGS[last - 1] };
        format!("mood={} last={last_name}", MOODS[mood])
    }

    fn action_name(&self, action: usize) -> String {
        TAGS[action].to_string()
    }

    /// Any utterance is legal; the strategy is the bracketed tag, with
    /// untagged text treated as an impact appeal.
    fn parse_action(&self, text: &str) -> Result<usize, EnvError> {
        for (i, tag) in TAGS.iter().enumerate() {
            if text.contains(&format!("[{tag}]")) {
                return Ok(i);
            }
        }
        Ok(IMPACT)
    }

    fn action_text(&self, _state: usize, action: usize) -> String {
        match action {
            CREDIBILITY => "This charity publishes audited results year after year. [credibility]",
            EMOTIONAL => "Picture the children whose lives change overnight. [emotional]",
            IMPACT => "Even one dollar goes remarkably far here. [impact]",
            ADDRESS_SKEPTICISM => {
                "I understand your doubts, so let me answer them directly. [address-skepticism]"
            }
            _ => unreachable!("action out of range"),
        }
        .to_string()
    }

    fn step(&self, state: usize, action: usize) -> (usize, f64, bool) {
        let (mood, last) = self.unpack(state);
        if mood == CONVINCED || mood == ALIENATED {
            return (state, 0.0, true);
        }
        let next_mood = if last == action + 1 {
            ALIENATED // same tag twice in a row
        } else {
            self.mood_step(mood, action)
        };
        let next = self.pack(next_mood, action + 1);
        match next_mood {
            CONVINCED => (next, 2.0, true),
            ALIENATED => (next, 0.0, true),
            _ => (next, 0.0, false),
        }
    }

    fn truncation_reward(&self, state: usize) -> f64 {
        match self.unpack(state).0 {
            CURIOUS => 0.5,
            _ => 0.0,
        }
    }

    fn success_reward(&self) -> f64 {
        2.0
    }

    fn optimal_action(&self, state: usize) -> usize {
        let (mood, last) = self.unpack(state);
        let preferred = match mood {
            SKEPTICAL => ADDRESS_SKEPTICISM,
            _ => CREDIBILITY,
        };
        if last == preferred + 1 {
            // sidestep the repeat penalty with a neutral appeal
            if last == EMOTIONAL + 1 {
                IMPACT
            } else {
                EMOTIONAL
            }
        } else {
            preferred
        }
    }

    fn offplan_action(&self, state: usize) -> usize {
        let _ = state;
        IMPACT
    }

    fn thought_for(&self, _state: usize, action: usize) -> String {
        match action {
            CREDIBILITY => "appeal to credibility",
            EMOTIONAL => "make an emotional appeal",
            IMPACT => "tout the impact of donations",
            ADDRESS_SKEPTICISM => "address the donor's skepticism directly",
            _ => unreachable!("action out of range"),
        }
        .to_string()
    }

    fn success_anchor(&self) -> String {
        self.render(self.pack(CONVINCED, CREDIBILITY + 1))
    }

    fn failure_anchor(&self) -> String {
        self.render(self.pack(ALIENATED, IMPACT + 1))
    }
}
