//! Per-step features: user token counts, binary slot presence and action
//! featurisations. Dimensions come from the [`DomainSpec`] only.

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use crate::corpus::{Dialogue, DomainSpec, Step, UserTurn};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum ActionFeatMode {
    SingleLabel,
    #[default]
    TokenBag,
}

impl std::str::FromStr for ActionFeatMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "single_label" => Ok(Self::SingleLabel),
            "token_bag" => Ok(Self::TokenBag),
            other => Err(Error::InvalidConfig(format!(
                "unknown action featurisation `{other}` (expected single_label or token_bag)"
            ))),
        }
    }
}

pub fn tokens(name: &str) -> impl Iterator<Item = &str> {
    name.split('_').filter(|t| !t.is_empty())
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Vocabulary {
    pub user_tokens: Vec<String>,
    pub action_tokens: Vec<String>,
    pub slot_names: Vec<String>,
    /// Action inventory in lexicographic order; indices are class ids.
    pub actions: Vec<String>,
    pub mode: ActionFeatMode,
}

impl Vocabulary {
    pub fn build(spec: &DomainSpec, mode: ActionFeatMode) -> Self {
        let user: BTreeSet<&str> = spec
            .intents
            .iter()
            .flat_map(|i| tokens(i))
            .chain(spec.entities.iter().map(String::as_str))
            .collect();
        let action_tokens: BTreeSet<&str> = match mode {
            ActionFeatMode::SingleLabel => spec.actions.iter().map(String::as_str).collect(),
            ActionFeatMode::TokenBag => spec.actions.iter().flat_map(|a| tokens(a)).collect(),
        };
        let mut slot_names = spec.slots.clone();
        slot_names.sort();
        let mut actions = spec.actions.clone();
        actions.sort();
        Self {
            user_tokens: user.into_iter().map(String::from).collect(),
            action_tokens: action_tokens.into_iter().map(String::from).collect(),
            slot_names,
            actions,
            mode,
        }
    }

    pub fn user_dim(&self) -> usize {
        self.user_tokens.len()
    }

    pub fn action_dim(&self) -> usize {
        self.action_tokens.len()
    }

    pub fn slot_dim(&self) -> usize {
        self.slot_names.len()
    }

    pub fn num_actions(&self) -> usize {
        self.actions.len()
    }

    pub fn action_index(&self, name: &str) -> Result<usize> {
        self.actions
            .binary_search_by(|a| a.as_str().cmp(name))
            .map_err(|_| Error::UnknownIdentifier {
                line: 0,
                name: name.to_string(),
            })
    }

    fn user_index(&self, tok: &str) -> Option<usize> {
        self.user_tokens.binary_search_by(|t| t.as_str().cmp(tok)).ok()
    }

    fn slot_index(&self, name: &str) -> Option<usize> {
        self.slot_names.binary_search_by(|t| t.as_str().cmp(name)).ok()
    }

    /// Intent tokens plus one count per present entity. Values are ignored.
    pub fn featurize_user(&self, turn: &UserTurn) -> Result<Vec<f64>> {
        let mut v = vec![0.0; self.user_dim()];
        for tok in tokens(&turn.intent).chain(turn.entities.keys().map(String::as_str)) {
            let i = self.user_index(tok).ok_or_else(|| Error::UnknownIdentifier {
                line: 0,
                name: tok.to_string(),
            })?;
            v[i] += 1.0;
        }
        Ok(v)
    }

    pub fn featurize_action(&self, name: &str) -> Result<Vec<f64>> {
        self.action_index(name)?;
        let mut v = vec![0.0; self.action_dim()];
        let mut bump = |tok: &str| {
            let i = self
                .action_tokens
                .binary_search_by(|t| t.as_str().cmp(tok))
                .expect("action tokens come from the same inventory");
            v[i] += 1.0;
        };
        match self.mode {
            ActionFeatMode::SingleLabel => bump(name),
            ActionFeatMode::TokenBag => tokens(name).for_each(bump),
        }
        Ok(v)
    }

    /// Row-major `[num_actions, action_dim]` feature table in `actions` order.
    pub fn action_table(&self) -> Vec<f64> {
        self.actions
            .iter()
            .flat_map(|a| self.featurize_action(a).expect("known action"))
            .collect()
    }

    /// Slot presence after each user turn, carried forward.
    pub fn track_slots(&self, d: &Dialogue) -> Vec<Vec<f64>> {
        let mut cur = vec![0.0; self.slot_dim()];
        d.user_turns()
            .map(|u| {
                for e in u.entities.keys() {
                    if let Some(i) = self.slot_index(e) {
                        cur[i] = 1.0;
                    }
                }
                cur.clone()
            })
            .collect()
    }

    /// One entry per action step, with the user and slot features in force.
    pub fn featurize_dialogue(&self, d: &Dialogue) -> Result<DialogueFeatures> {
        let slots = self.track_slots(d);
        let mut out = DialogueFeatures::default();
        let mut turn_idx: Option<usize> = None;
        let mut user_vec: Vec<f64> = Vec::new();
        for step in &d.steps {
            match step {
                Step::User(u) => {
                    turn_idx = Some(turn_idx.map_or(0, |i| i + 1));
                    user_vec = self.featurize_user(u)?;
                }
                Step::Action(a) => {
                    let t = turn_idx.ok_or(Error::EmptyPrefix)?;
                    out.steps.push(TurnFeatures {
                        user_vec: user_vec.clone(),
                        slot_vec: slots[t].clone(),
                        target_action: a.clone(),
                    });
                    out.targets.push(self.action_index(a)?);
                    out.turn_of_step.push(t);
                }
            }
        }
        Ok(out)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TurnFeatures {
    pub user_vec: Vec<f64>,
    pub slot_vec: Vec<f64>,
    pub target_action: String,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct DialogueFeatures {
    pub steps: Vec<TurnFeatures>,
    /// Index into `Vocabulary::actions` of each step's target.
    pub targets: Vec<usize>,
    /// Index of the user turn that is in force at each step.
    pub turn_of_step: Vec<usize>,
}

impl DialogueFeatures {
    pub fn len(&self) -> usize {
        self.steps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.steps.is_empty()
    }

    pub fn user_matrix(&self) -> Vec<f64> {
        self.steps.iter().flat_map(|s| s.user_vec.iter().copied()).collect()
    }

    pub fn slot_matrix(&self) -> Vec<f64> {
        self.steps.iter().flat_map(|s| s.slot_vec.iter().copied()).collect()
    }
}
