//! Slot-filling tasks, a stochastic simulated user and the rule-based oracle
//! that labels its dialogues.

use std::collections::BTreeMap;
use std::fmt;

use rand::seq::{IteratorRandom, SliceRandom};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::corpus::{dedupe, expand_listen, Dialogue, DomainSpec, UserTurn, ACTION_LISTEN};
use crate::error::{Error, Result};

pub const INTENT_INFORM: &str = "inform";
pub const INTENT_CHITCHAT: &str = "chitchat";
pub const INTENT_ASK_WHY: &str = "ask_why";
pub const INTENT_ASK_RESULTS: &str = "ask_results";

pub const UTTER_GREET: &str = "utter_greet";
pub const UTTER_ACK_CORRECTION: &str = "utter_ack_correction";
pub const ACTION_CHITCHAT: &str = "action_chitchat";

pub const DEFAULT_MAX_USER_TURNS: usize = 12;
pub const MIN_ACTIONS: usize = 12;
pub const MAX_ACTIONS: usize = 48;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Domain {
    Hotel,
    Restaurant,
}

impl Domain {
    pub const ALL: [Domain; 2] = [Domain::Hotel, Domain::Restaurant];

    pub fn name(self) -> &'static str {
        match self {
            Domain::Hotel => "hotel",
            Domain::Restaurant => "restaurant",
        }
    }
}

impl fmt::Display for Domain {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl std::str::FromStr for Domain {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "hotel" => Ok(Domain::Hotel),
            "restaurant" => Ok(Domain::Restaurant),
            other => Err(Error::InvalidConfig(format!(
                "unknown domain `{other}` (valid domains: hotel, restaurant)"
            ))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TaskSpec {
    pub domain: Domain,
    /// Required slots in the order the system asks for them.
    pub slots: Vec<String>,
    pub search_action: String,
    pub ask_actions: BTreeMap<String, String>,
    pub explain_actions: BTreeMap<String, String>,
    pub explain_details_action: String,
    pub request_intent: String,
}

impl TaskSpec {
    pub fn new(domain: Domain) -> Self {
        let slots: &[&str] = match domain {
            Domain::Hotel => &["price", "location", "people", "start_date", "end_date"],
            Domain::Restaurant => &["price", "location", "people", "cuisine"],
        };
        let d = domain.name();
        Self {
            domain,
            slots: slots.iter().map(|s| s.to_string()).collect(),
            search_action: format!("action_search_{d}"),
            ask_actions: slots
                .iter()
                .map(|s| (s.to_string(), format!("utter_ask_{s}")))
                .collect(),
            explain_actions: slots
                .iter()
                .map(|s| (s.to_string(), format!("utter_explain_{s}_{d}")))
                .collect(),
            explain_details_action: format!("utter_explain_details_{d}"),
            request_intent: format!("request_{d}"),
        }
    }

    pub fn hotel() -> Self {
        Self::new(Domain::Hotel)
    }

    pub fn restaurant() -> Self {
        Self::new(Domain::Restaurant)
    }

    pub fn actions(&self) -> Vec<String> {
        let mut out: Vec<String> = [UTTER_GREET, UTTER_ACK_CORRECTION, ACTION_CHITCHAT, ACTION_LISTEN]
            .iter()
            .map(|s| s.to_string())
            .collect();
        out.extend(self.ask_actions.values().cloned());
        out.extend(self.explain_actions.values().cloned());
        out.push(self.explain_details_action.clone());
        out.push(self.search_action.clone());
        out
    }

    pub fn next_missing(&self, filled: &BTreeMap<String, String>) -> Option<&str> {
        self.slots
            .iter()
            .find(|s| !filled.contains_key(*s))
            .map(String::as_str)
    }
}

/// Domain inventory covering every task in `domains`.
pub fn domain_spec(domains: &[Domain]) -> DomainSpec {
    let mut intents = vec![];
    let mut entities: Vec<String> = vec![];
    let mut actions: Vec<String> = vec![];
    for &d in domains {
        let t = TaskSpec::new(d);
        intents.push(t.request_intent.clone());
        for s in &t.slots {
            if !entities.contains(s) {
                entities.push(s.clone());
            }
        }
        for a in t.actions() {
            if !actions.contains(&a) {
                actions.push(a);
            }
        }
    }
    intents.extend(
        [INTENT_INFORM, INTENT_CHITCHAT, INTENT_ASK_WHY, INTENT_ASK_RESULTS]
            .iter()
            .map(|s| s.to_string()),
    );
    DomainSpec::new(intents, entities.clone(), entities, actions).expect("task inventory is valid")
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DeviationType {
    Cooperate,
    Chitchat,
    Correction,
    BroadContext,
    NarrowContext,
}

impl DeviationType {
    pub const ALL: [DeviationType; 5] = [
        DeviationType::Cooperate,
        DeviationType::Chitchat,
        DeviationType::Correction,
        DeviationType::BroadContext,
        DeviationType::NarrowContext,
    ];

    pub const DEVIATIONS: [DeviationType; 4] = [
        DeviationType::Chitchat,
        DeviationType::Correction,
        DeviationType::BroadContext,
        DeviationType::NarrowContext,
    ];

    pub fn name(self) -> &'static str {
        match self {
            DeviationType::Cooperate => "cooperate",
            DeviationType::Chitchat => "chitchat",
            DeviationType::Correction => "correction",
            DeviationType::BroadContext => "broad_context",
            DeviationType::NarrowContext => "narrow_context",
        }
    }
}

/// Small per-slot value vocabularies.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SlotValues(pub BTreeMap<String, Vec<String>>);

impl SlotValues {
    pub fn bundled() -> Self {
        serde_json::from_str(include_str!("../data/v1/slot_values.json"))
            .expect("bundled slot values parse")
    }

    fn pick<R: Rng + ?Sized>(&self, slot: &str, rng: &mut R) -> Result<String> {
        self.0
            .get(slot)
            .and_then(|vs| vs.choose(rng))
            .cloned()
            .ok_or_else(|| Error::InconsistentState(format!("no values for slot `{slot}`")))
    }

    fn pick_other<R: Rng + ?Sized>(&self, slot: &str, old: &str, rng: &mut R) -> Result<String> {
        self.0
            .get(slot)
            .and_then(|vs| vs.iter().filter(|v| *v != old).choose(rng))
            .cloned()
            .ok_or_else(|| Error::InconsistentState(format!("no alternative value for `{slot}`")))
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct SimState {
    pub filled: BTreeMap<String, String>,
    pub pending: Option<String>,
    pub turns: usize,
    /// Deviations the user may still make.
    pub budget: usize,
    pub done: bool,
}

impl SimState {
    pub fn new(budget: usize) -> Self {
        Self {
            budget,
            ..Self::default()
        }
    }
}

/// Applies `turn` to `state` and returns the system's actions for it.
pub fn oracle_action(state: &mut SimState, turn: &UserTurn, task: &TaskSpec) -> Result<Vec<String>> {
    if state.done {
        return Err(Error::InconsistentState("dialogue already finished".into()));
    }
    let first = state.turns == 0;
    state.turns += 1;
    let mut out = Vec::with_capacity(3);

    if first {
        if turn.intent != task.request_intent {
            return Err(Error::InconsistentState(format!(
                "dialogue must open with `{}`",
                task.request_intent
            )));
        }
        fill(state, turn, task)?;
        out.push(UTTER_GREET.to_string());
        ask_or_search(state, task, &mut out);
        return Ok(out);
    }

    let pending = state
        .pending
        .clone()
        .ok_or_else(|| Error::InconsistentState("no pending question".into()))?;
    match turn.intent.as_str() {
        INTENT_CHITCHAT => {
            out.push(ACTION_CHITCHAT.to_string());
            out.push(task.ask_actions[&pending].clone());
            out.push(ACTION_LISTEN.to_string());
        }
        INTENT_ASK_WHY => {
            out.push(task.explain_actions[&pending].clone());
            out.push(task.ask_actions[&pending].clone());
            out.push(ACTION_LISTEN.to_string());
        }
        INTENT_ASK_RESULTS => {
            if task.next_missing(&state.filled).is_some() {
                out.push(task.explain_details_action.clone());
            }
            ask_or_search(state, task, &mut out);
        }
        INTENT_INFORM => {
            let is_correction = !turn.entities.is_empty()
                && turn.entities.keys().all(|e| state.filled.contains_key(e));
            if is_correction {
                fill(state, turn, task)?;
                out.push(UTTER_ACK_CORRECTION.to_string());
                ask_or_search(state, task, &mut out);
            } else {
                if !turn.entities.contains_key(&pending) {
                    return Err(Error::InconsistentState(format!(
                        "inform does not answer the pending slot `{pending}`"
                    )));
                }
                fill(state, turn, task)?;
                ask_or_search(state, task, &mut out);
            }
        }
        other => {
            return Err(Error::InconsistentState(format!(
                "unexpected intent `{other}` mid-dialogue"
            )))
        }
    }
    Ok(out)
}

fn fill(state: &mut SimState, turn: &UserTurn, task: &TaskSpec) -> Result<()> {
    for (k, v) in &turn.entities {
        if !task.slots.contains(k) {
            return Err(Error::InconsistentState(format!(
                "`{k}` is not a {} slot",
                task.domain
            )));
        }
        state.filled.insert(k.clone(), v.clone());
    }
    Ok(())
}

fn ask_or_search(state: &mut SimState, task: &TaskSpec, out: &mut Vec<String>) {
    match task.next_missing(&state.filled) {
        Some(slot) => {
            out.push(task.ask_actions[slot].clone());
            out.push(ACTION_LISTEN.to_string());
            state.pending = Some(slot.to_string());
        }
        None => {
            out.push(task.search_action.clone());
            state.pending = None;
            state.done = true;
        }
    }
}

/// Builds the user turn for a given response type, falling back to
/// cooperation where the type is impossible in `state`.
pub fn user_turn_of_type<R: Rng + ?Sized>(
    kind: DeviationType,
    state: &SimState,
    values: &SlotValues,
    rng: &mut R,
) -> Result<(UserTurn, DeviationType)> {
    let pending = state
        .pending
        .as_deref()
        .ok_or_else(|| Error::InconsistentState("no pending question".into()))?;
    let kind = match kind {
        DeviationType::Correction if state.filled.is_empty() => DeviationType::Cooperate,
        k if k != DeviationType::Cooperate && state.budget == 0 => DeviationType::Cooperate,
        k => k,
    };
    let turn = match kind {
        DeviationType::Cooperate => {
            UserTurn::new(INTENT_INFORM).with(pending, values.pick(pending, rng)?)
        }
        DeviationType::Chitchat => UserTurn::new(INTENT_CHITCHAT),
        DeviationType::NarrowContext => UserTurn::new(INTENT_ASK_WHY),
        DeviationType::BroadContext => UserTurn::new(INTENT_ASK_RESULTS),
        DeviationType::Correction => {
            let (slot, old) = state
                .filled
                .iter()
                .choose(rng)
                .expect("filled checked non-empty");
            UserTurn::new(INTENT_INFORM).with(slot.clone(), values.pick_other(slot, old, rng)?)
        }
    };
    Ok((turn, kind))
}

/// Draws one of the five response types uniformly and builds the turn.
pub fn sample_user_turn<R: Rng + ?Sized>(
    state: &SimState,
    values: &SlotValues,
    rng: &mut R,
) -> Result<(UserTurn, DeviationType)> {
    let kind = DeviationType::ALL[rng.gen_range(0..DeviationType::ALL.len())];
    user_turn_of_type(kind, state, values, rng)
}

fn opening<R: Rng + ?Sized>(
    task: &TaskSpec,
    slots: &[&str],
    values: &SlotValues,
    rng: &mut R,
) -> Result<UserTurn> {
    let mut turn = UserTurn::new(task.request_intent.clone());
    for s in slots {
        turn = turn.with(*s, values.pick(s, rng)?);
    }
    Ok(turn)
}

fn push_turn(
    d: &mut Dialogue,
    state: &mut SimState,
    turn: UserTurn,
    task: &TaskSpec,
) -> Result<()> {
    let actions = oracle_action(state, &turn, task)?;
    d.steps.push(crate::corpus::Step::User(turn));
    d.steps
        .extend(actions.into_iter().map(crate::corpus::Step::Action));
    Ok(())
}

fn simulate_one<R: Rng + ?Sized>(
    task: &TaskSpec,
    name: String,
    max_user_turns: usize,
    values: &SlotValues,
    rng: &mut R,
) -> Result<Dialogue> {
    let n_open = rng.gen_range(0..=2usize);
    let mut open: Vec<&str> = task
        .slots
        .iter()
        .map(String::as_str)
        .choose_multiple(rng, n_open);
    open.sort_by_key(|s| task.slots.iter().position(|x| x == s));
    let missing = task.slots.len() - n_open;
    let budget = max_user_turns.saturating_sub(1 + missing);
    let mut state = SimState::new(budget);
    let mut d = Dialogue::new(name);
    push_turn(&mut d, &mut state, opening(task, &open, values, rng)?, task)?;
    while !state.done && state.turns < max_user_turns {
        let (turn, kind) = sample_user_turn(&state, values, rng)?;
        if kind != DeviationType::Cooperate {
            state.budget -= 1;
        }
        push_turn(&mut d, &mut state, turn, task)?;
    }
    expand_listen(&d)
}

/// Simulates `n` dialogues, rejecting any whose action count falls outside
/// the supported range, then removes duplicates.
pub fn generate_dialogues(
    task: &TaskSpec,
    n: usize,
    max_user_turns: usize,
    seed: u64,
    values: &SlotValues,
) -> Result<Vec<Dialogue>> {
    if n == 0 {
        return Err(Error::InvalidConfig("n must be at least 1".into()));
    }
    if max_user_turns < 2 {
        return Err(Error::InvalidConfig("max_user_turns must be at least 2".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::with_capacity(n);
    for i in 0..n {
        let name = format!("{}_generated_{i:03}", task.domain);
        let mut attempts = 0;
        loop {
            let d = simulate_one(task, name.clone(), max_user_turns, values, &mut rng)?;
            let k = d.num_actions();
            if (MIN_ACTIONS..=MAX_ACTIONS).contains(&k) {
                out.push(d);
                break;
            }
            attempts += 1;
            if attempts > 10_000 {
                return Err(Error::InvalidConfig(format!(
                    "max_user_turns = {max_user_turns} cannot produce dialogues with \
                     {MIN_ACTIONS}..={MAX_ACTIONS} actions"
                )));
            }
        }
    }
    Ok(dedupe(&out))
}

/// A dialogue that deviates exactly once, after `answered` cooperative turns.
pub fn one_deviation_dialogue<R: Rng + ?Sized>(
    task: &TaskSpec,
    name: String,
    open: &[&str],
    deviation: DeviationType,
    answered: usize,
    values: &SlotValues,
    rng: &mut R,
) -> Result<Dialogue> {
    let mut state = SimState::new(1);
    let mut d = Dialogue::new(name);
    push_turn(&mut d, &mut state, opening(task, open, values, rng)?, task)?;
    let mut coop = 0;
    let mut deviated = false;
    while !state.done {
        if !deviated && coop == answered {
            let (turn, kind) = user_turn_of_type(deviation, &state, values, rng)?;
            if kind != deviation {
                return Err(Error::InconsistentState(format!(
                    "`{}` is impossible at this point",
                    deviation.name()
                )));
            }
            push_turn(&mut d, &mut state, turn, task)?;
            deviated = true;
        } else {
            let (turn, _) = user_turn_of_type(DeviationType::Cooperate, &state, values, rng)?;
            push_turn(&mut d, &mut state, turn, task)?;
            coop += 1;
        }
    }
    expand_listen(&d)
}

/// Re-labels the user turns of `d` with the oracle and compares.
pub fn replay_matches_oracle(d: &Dialogue, task: &TaskSpec) -> Result<bool> {
    let mut state = SimState::new(usize::MAX);
    let mut rebuilt = Dialogue::new(d.name.clone());
    for u in d.user_turns() {
        push_turn(&mut rebuilt, &mut state, u.clone(), task)?;
    }
    Ok(expand_listen(&rebuilt)? == *d)
}

fn cooperative_corpus(task: &TaskSpec, n: usize, seed: u64, values: &SlotValues) -> Result<Vec<Dialogue>> {
    let slots: Vec<&str> = task.slots.iter().map(String::as_str).collect();
    let mut openings: Vec<Vec<&str>> = vec![vec![]];
    openings.extend(slots.iter().map(|s| vec![*s]));
    for i in 0..slots.len() {
        for j in i + 1..slots.len() {
            openings.push(vec![slots[i], slots[j]]);
        }
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    openings
        .into_iter()
        .take(n)
        .enumerate()
        .map(|(i, open)| {
            let mut state = SimState::new(0);
            let mut d = Dialogue::new(format!("{}_cooperative_{i:02}", task.domain));
            push_turn(&mut d, &mut state, opening(task, &open, values, &mut rng)?, task)?;
            while !state.done {
                let (turn, _) =
                    user_turn_of_type(DeviationType::Cooperate, &state, values, &mut rng)?;
                push_turn(&mut d, &mut state, turn, task)?;
            }
            expand_listen(&d)
        })
        .collect()
}

fn one_deviation_corpus(
    task: &TaskSpec,
    n: usize,
    seed: u64,
    prefix: &str,
    values: &SlotValues,
) -> Result<Vec<Dialogue>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::with_capacity(n);
    let mut i = 0;
    while out.len() < n {
        let deviation = DeviationType::DEVIATIONS[i % 4];
        i += 1;
        let n_open = rng.gen_range(0..=1usize);
        let open: Vec<&str> = task
            .slots
            .iter()
            .map(String::as_str)
            .choose_multiple(&mut rng, n_open);
        let remaining = task.slots.len() - n_open;
        let min_answered = usize::from(deviation == DeviationType::Correction && n_open == 0);
        let answered = rng.gen_range(min_answered..remaining);
        let d = one_deviation_dialogue(
            task,
            format!("{}_{prefix}_{:02}", task.domain, out.len()),
            &open,
            deviation,
            answered,
            values,
            &mut rng,
        )?;
        if !out.iter().any(|o: &Dialogue| o.steps == d.steps) {
            out.push(d);
        }
    }
    Ok(out)
}

pub const COOPERATIVE_HOTEL: usize = 11;
pub const COOPERATIVE_RESTAURANT: usize = 8;
pub const UNCOOPERATIVE_SEED_HOTEL: usize = 8;
pub const UNCOOPERATIVE_RESTAURANT: usize = 50;

/// Regenerates every bundled story corpus as `(file name, contents)`.
pub fn render_bundle() -> Result<Vec<(String, String)>> {
    use crate::corpus::serialize_stories;
    let values = SlotValues::bundled();
    let h = TaskSpec::hotel();
    let r = TaskSpec::restaurant();
    Ok(vec![
        (
            "cooperative_hotel.stories".into(),
            serialize_stories(&cooperative_corpus(&h, COOPERATIVE_HOTEL, 11, &values)?),
        ),
        (
            "cooperative_restaurant.stories".into(),
            serialize_stories(&cooperative_corpus(&r, COOPERATIVE_RESTAURANT, 8, &values)?),
        ),
        (
            "uncooperative_seed_hotel.stories".into(),
            serialize_stories(&one_deviation_corpus(
                &h,
                UNCOOPERATIVE_SEED_HOTEL,
                41,
                "seed",
                &values,
            )?),
        ),
        (
            "uncooperative_restaurant.stories".into(),
            serialize_stories(&one_deviation_corpus(
                &r,
                UNCOOPERATIVE_RESTAURANT,
                50,
                "uncooperative",
                &values,
            )?),
        ),
    ])
}

#[cfg(test)]
mod tests {
    use super::*;

    fn values() -> SlotValues {
        SlotValues::bundled()
    }

    fn acts(v: &[&str]) -> Vec<String> {
        v.iter().map(|s| s.to_string()).collect()
    }

    fn state_with(filled: &[(&str, &str)], pending: &str) -> SimState {
        SimState {
            filled: filled
                .iter()
                .map(|(k, v)| (k.to_string(), v.to_string()))
                .collect(),
            pending: Some(pending.into()),
            turns: 1 + filled.len(),
            budget: 5,
            done: false,
        }
    }

    #[test]
    fn task_inventories() {
        let h = TaskSpec::hotel();
        assert_eq!(h.slots.len(), 5);
        assert!(h.slots.contains(&"start_date".to_string()));
        let r = TaskSpec::restaurant();
        assert_eq!(r.slots, vec!["price", "location", "people", "cuisine"]);
        assert_eq!(r.search_action, "action_search_restaurant");
        let spec = domain_spec(&Domain::ALL);
        assert!(spec.has_action("utter_explain_details_hotel"));
        assert!(spec.has_action("utter_explain_cuisine_restaurant"));
        assert!(spec.has_action(ACTION_LISTEN));
    }

    #[test]
    fn narrow_context_explains_pending() {
        let r = TaskSpec::restaurant();
        let mut s = state_with(&[("price", "cheap")], "location");
        let out = oracle_action(&mut s, &UserTurn::new(INTENT_ASK_WHY), &r).unwrap();
        assert_eq!(
            out,
            acts(&["utter_explain_location_restaurant", "utter_ask_location", "action_listen"])
        );
    }

    #[test]
    fn broad_context_with_everything_filled_searches() {
        let h = TaskSpec::hotel();
        let mut s = SimState {
            filled: h.slots.iter().map(|s| (s.clone(), "x".into())).collect(),
            pending: Some("end_date".into()),
            turns: 6,
            budget: 1,
            done: false,
        };
        let out = oracle_action(&mut s, &UserTurn::new(INTENT_ASK_RESULTS), &h).unwrap();
        assert_eq!(out, acts(&["action_search_hotel"]));
        assert!(s.done);
    }

    #[test]
    fn broad_context_with_missing_slots_explains_details() {
        let h = TaskSpec::hotel();
        let mut s = state_with(&[("price", "cheap")], "location");
        let out = oracle_action(&mut s, &UserTurn::new(INTENT_ASK_RESULTS), &h).unwrap();
        assert_eq!(
            out,
            acts(&["utter_explain_details_hotel", "utter_ask_location", "action_listen"])
        );
    }

    #[test]
    fn correction_is_acknowledged() {
        let h = TaskSpec::hotel();
        let mut s = state_with(&[("price", "cheap")], "location");
        let turn = UserTurn::new(INTENT_INFORM).with("price", "expensive");
        let out = oracle_action(&mut s, &turn, &h).unwrap();
        assert_eq!(
            out,
            acts(&["utter_ack_correction", "utter_ask_location", "action_listen"])
        );
        assert_eq!(s.filled["price"], "expensive");
    }

    #[test]
    fn chitchat_and_cooperate() {
        let h = TaskSpec::hotel();
        let mut s = state_with(&[("price", "cheap")], "location");
        let out = oracle_action(&mut s, &UserTurn::new(INTENT_CHITCHAT), &h).unwrap();
        assert_eq!(out, acts(&["action_chitchat", "utter_ask_location", "action_listen"]));
        let turn = UserTurn::new(INTENT_INFORM).with("location", "north");
        let out = oracle_action(&mut s, &turn, &h).unwrap();
        assert_eq!(out, acts(&["utter_ask_people", "action_listen"]));
    }

    #[test]
    fn inconsistent_turns_are_rejected() {
        let h = TaskSpec::hotel();
        let mut s = state_with(&[("price", "cheap")], "location");
        let turn = UserTurn::new(INTENT_INFORM).with("people", "2");
        assert!(matches!(
            oracle_action(&mut s, &turn, &h),
            Err(Error::InconsistentState(_))
        ));
        let mut fresh = SimState::new(0);
        assert!(matches!(
            oracle_action(&mut fresh, &UserTurn::new(INTENT_CHITCHAT), &h),
            Err(Error::InconsistentState(_))
        ));
    }

    #[test]
    fn correction_without_filled_slots_falls_back() {
        let s = SimState {
            pending: Some("price".into()),
            turns: 1,
            budget: 3,
            ..SimState::default()
        };
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let (turn, kind) =
            user_turn_of_type(DeviationType::Correction, &s, &values(), &mut rng).unwrap();
        assert_eq!(kind, DeviationType::Cooperate);
        assert!(turn.entities.contains_key("price"));
    }

    #[test]
    fn cooperate_informs_pending_cuisine() {
        let s = state_with(&[("price", "cheap")], "cuisine");
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let (turn, _) = user_turn_of_type(DeviationType::Cooperate, &s, &values(), &mut rng).unwrap();
        assert_eq!(turn.intent, "inform");
        assert_eq!(turn.entities.keys().collect::<Vec<_>>(), vec!["cuisine"]);
    }

    #[test]
    fn exhausted_budget_forces_cooperation() {
        let mut s = state_with(&[("price", "cheap")], "location");
        s.budget = 0;
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..50 {
            let (_, kind) = sample_user_turn(&s, &values(), &mut rng).unwrap();
            assert_eq!(kind, DeviationType::Cooperate);
        }
    }

    #[test]
    fn generated_hotel_dialogues_respect_contract() {
        let h = TaskSpec::hotel();
        let v = values();
        let ds = generate_dialogues(&h, 120, DEFAULT_MAX_USER_TURNS, 7, &v).unwrap();
        assert!(ds.len() <= 120);
        assert_eq!(dedupe(&ds), ds);
        for d in &ds {
            let n = d.num_actions();
            assert!((MIN_ACTIONS..=MAX_ACTIONS).contains(&n), "{} has {n}", d.name);
            assert!(d.actions().any(|a| a == "action_search_hotel"));
            assert!(replay_matches_oracle(d, &h).unwrap());
        }
        let again = generate_dialogues(&h, 120, DEFAULT_MAX_USER_TURNS, 7, &v).unwrap();
        assert_eq!(ds, again);
    }

    #[test]
    fn one_deviation_dialogues_deviate_once() {
        let r = TaskSpec::restaurant();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for dev in DeviationType::DEVIATIONS {
            let d = one_deviation_dialogue(&r, "x".into(), &["price"], dev, 1, &values(), &mut rng)
                .unwrap();
            assert!(replay_matches_oracle(&d, &r).unwrap());
            // opening + one turn per missing slot + the deviation
            assert_eq!(d.user_turns().count(), 1 + 3 + 1);
        }
    }
}
