//! Token vocabulary shared by the task generator, the policy and the reward parser.
//!
//! Layout (dense ids):
//!
//! ```text
//! 0..5                specials: BOS, EOS, SEP, ANS_OPEN, ANS_CLOSE
//! 5..9                role markers: user, agent, merchant, courier
//! 9..9+M              event-name tokens
//! ..+M*C              cue tokens, C per event
//! ..V                 filler tokens (dialogue padding and "reasoning" tokens)
//! ```

use serde::{Deserialize, Serialize};

use crate::error::{AparlError, Result};

pub type TokenId = u32;

pub const BOS: TokenId = 0;
pub const EOS: TokenId = 1;
pub const SEP: TokenId = 2;
pub const ANS_OPEN: TokenId = 3;
pub const ANS_CLOSE: TokenId = 4;
pub const NUM_SPECIALS: u32 = 5;
pub const NUM_ROLES: u32 = 4;
pub const MAX_VOCAB: u32 = 128;

/// Speaker of a dialogue utterance.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Role {
    User,
    Agent,
    Merchant,
    Courier,
}

impl Role {
    pub const ALL: [Role; 4] = [Role::User, Role::Agent, Role::Merchant, Role::Courier];

    fn index(self) -> u32 {
        match self {
            Role::User => 0,
            Role::Agent => 1,
            Role::Merchant => 2,
            Role::Courier => 3,
        }
    }
}

/// Classification of a token id.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TokenKind {
    Special,
    Role(Role),
    /// Event-name token carrying the event id.
    Event(u32),
    /// Cue token: (event id, cue index).
    Cue(u32, u32),
    Filler,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Vocab {
    pub n_events: u32,
    pub cues_per_event: u32,
    pub n_fillers: u32,
}

impl Default for Vocab {
    fn default() -> Self {
        Vocab {
            n_events: 20,
            cues_per_event: 3,
            n_fillers: 39,
        }
    }
}

impl Vocab {
    pub fn new(n_events: u32, cues_per_event: u32, n_fillers: u32) -> Result<Self> {
        let vocab = Vocab {
            n_events,
            cues_per_event,
            n_fillers,
        };
        vocab.validate()?;
        Ok(vocab)
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_events == 0 || self.cues_per_event == 0 || self.n_fillers == 0 {
            return Err(AparlError::Config(
                "vocabulary needs at least one event, one cue per event and one filler".into(),
            ));
        }
        if self.size() > MAX_VOCAB as usize {
            return Err(AparlError::Config(format!(
                "vocabulary size {} exceeds the cap of {MAX_VOCAB}",
                self.size()
            )));
        }
        Ok(())
    }

    pub fn size(&self) -> usize {
        (NUM_SPECIALS + NUM_ROLES + self.n_events * (1 + self.cues_per_event) + self.n_fillers)
            as usize
    }

    pub fn role(&self, role: Role) -> TokenId {
        NUM_SPECIALS + role.index()
    }

    fn event_base(&self) -> u32 {
        NUM_SPECIALS + NUM_ROLES
    }

    fn cue_base(&self) -> u32 {
        self.event_base() + self.n_events
    }

    fn filler_base(&self) -> u32 {
        self.cue_base() + self.n_events * self.cues_per_event
    }

    pub fn event(&self, event: u32) -> TokenId {
        debug_assert!(event < self.n_events);
        self.event_base() + event
    }

    pub fn cue(&self, event: u32, cue: u32) -> TokenId {
        debug_assert!(event < self.n_events && cue < self.cues_per_event);
        self.cue_base() + event * self.cues_per_event + cue
    }

    pub fn filler(&self, index: u32) -> TokenId {
        debug_assert!(index < self.n_fillers);
        self.filler_base() + index
    }

    pub fn kind(&self, token: TokenId) -> Option<TokenKind> {
        if token < NUM_SPECIALS {
            Some(TokenKind::Special)
        } else if token < self.event_base() {
            Some(TokenKind::Role(Role::ALL[(token - NUM_SPECIALS) as usize]))
        } else if token < self.cue_base() {
            Some(TokenKind::Event(token - self.event_base()))
        } else if token < self.filler_base() {
            let offset = token - self.cue_base();
            Some(TokenKind::Cue(
                offset / self.cues_per_event,
                offset % self.cues_per_event,
            ))
        } else if (token as usize) < self.size() {
            Some(TokenKind::Filler)
        } else {
            None
        }
    }

    pub fn is_filler(&self, token: TokenId) -> bool {
        matches!(self.kind(token), Some(TokenKind::Filler))
    }

    /// Event id if `token` is an event-name token.
    pub fn event_of(&self, token: TokenId) -> Option<u32> {
        match self.kind(token) {
            Some(TokenKind::Event(e)) => Some(e),
            _ => None,
        }
    }
}
