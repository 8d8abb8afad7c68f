//! Domain inventories and the line-based story format.
//!
//! ```text
//! ## story_name
//! * request_hotel{"price": "cheap"}
//!   - utter_greet
//!   - utter_ask_location
//!   - action_listen
//! ```

use std::collections::{BTreeMap, HashSet};
use std::fmt::Write as _;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::error::{Error, Result};

pub const ACTION_LISTEN: &str = "action_listen";

/// Inventory of intents, entities, slots and actions for a task domain.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DomainSpec {
    pub intents: Vec<String>,
    pub entities: Vec<String>,
    pub slots: Vec<String>,
    pub actions: Vec<String>,
}

pub fn is_identifier(s: &str) -> bool {
    let mut chars = s.chars();
    matches!(chars.next(), Some('a'..='z'))
        && chars.all(|c| matches!(c, 'a'..='z' | '0'..='9' | '_'))
}

impl DomainSpec {
    /// Validates the invariants and appends `action_listen` when missing.
    pub fn new(
        intents: Vec<String>,
        entities: Vec<String>,
        slots: Vec<String>,
        mut actions: Vec<String>,
    ) -> Result<Self> {
        if !actions.iter().any(|a| a == ACTION_LISTEN) {
            actions.push(ACTION_LISTEN.to_string());
        }
        let spec = Self {
            intents,
            entities,
            slots,
            actions,
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<()> {
        for (key, list) in [
            ("intents", &self.intents),
            ("entities", &self.entities),
            ("slots", &self.slots),
            ("actions", &self.actions),
        ] {
            if list.is_empty() {
                return Err(Error::SchemaViolation(format!("`{key}` is empty")));
            }
            let mut seen = HashSet::new();
            for id in list {
                if !is_identifier(id) {
                    return Err(Error::SchemaViolation(format!(
                        "`{id}` in `{key}` is not a lowercase identifier"
                    )));
                }
                if !seen.insert(id) {
                    return Err(Error::SchemaViolation(format!("duplicate `{id}` in `{key}`")));
                }
            }
        }
        if !self.actions.iter().any(|a| a == ACTION_LISTEN) {
            return Err(Error::SchemaViolation(format!("`{ACTION_LISTEN}` missing")));
        }
        for slot in &self.slots {
            if !self.entities.contains(slot) {
                return Err(Error::SchemaViolation(format!(
                    "slot `{slot}` has no entity of the same name"
                )));
            }
        }
        Ok(())
    }

    pub fn has_intent(&self, name: &str) -> bool {
        self.intents.iter().any(|i| i == name)
    }

    pub fn has_entity(&self, name: &str) -> bool {
        self.entities.iter().any(|e| e == name)
    }

    pub fn has_action(&self, name: &str) -> bool {
        self.actions.iter().any(|a| a == name)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("domain serialises")
    }
}

/// Parses a domain document (`intents`, `entities`, `slots`, `actions`).
pub fn parse_domain(text: &str) -> Result<DomainSpec> {
    let doc: Value = serde_json::from_str(text).map_err(|e| Error::MalformedDocument {
        line: e.line(),
        msg: e.to_string(),
    })?;
    let obj = doc
        .as_object()
        .ok_or_else(|| Error::SchemaViolation("domain document must be an object".into()))?;
    let list = |key: &str| -> Result<Vec<String>> {
        let arr = obj
            .get(key)
            .ok_or_else(|| Error::SchemaViolation(format!("missing key `{key}`")))?
            .as_array()
            .ok_or_else(|| Error::SchemaViolation(format!("`{key}` must be an array")))?;
        arr.iter()
            .map(|v| {
                v.as_str()
                    .map(str::to_string)
                    .ok_or_else(|| Error::SchemaViolation(format!("`{key}` must hold strings")))
            })
            .collect()
    };
    DomainSpec::new(
        list("intents")?,
        list("entities")?,
        list("slots")?,
        list("actions")?,
    )
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct UserTurn {
    pub intent: String,
    pub entities: BTreeMap<String, String>,
}

impl UserTurn {
    pub fn new(intent: impl Into<String>) -> Self {
        Self {
            intent: intent.into(),
            entities: BTreeMap::new(),
        }
    }

    pub fn with(mut self, entity: impl Into<String>, value: impl Into<String>) -> Self {
        self.entities.insert(entity.into(), value.into());
        self
    }

    /// Story-format rendering: `intent` or `intent{"k":"v",...}`.
    pub fn render(&self) -> String {
        if self.entities.is_empty() {
            self.intent.clone()
        } else {
            format!(
                "{}{}",
                self.intent,
                serde_json::to_string(&self.entities).expect("string map serialises")
            )
        }
    }

    /// Parses the story-format rendering. `line` is used for error reports.
    pub fn parse(text: &str, line: usize) -> Result<Self> {
        let text = text.trim();
        let (intent, payload) = match text.find('{') {
            Some(i) => (text[..i].trim(), Some(&text[i..])),
            None => (text, None),
        };
        if !is_identifier(intent) {
            return Err(Error::MalformedDocument {
                line,
                msg: format!("bad intent name `{intent}`"),
            });
        }
        let mut entities = BTreeMap::new();
        if let Some(payload) = payload {
            let v: Value = serde_json::from_str(payload).map_err(|e| Error::MalformedDocument {
                line,
                msg: format!("bad entity object: {e}"),
            })?;
            let obj = v.as_object().ok_or_else(|| Error::MalformedDocument {
                line,
                msg: "entity payload must be an object".into(),
            })?;
            for (k, val) in obj {
                let s = val.as_str().ok_or_else(|| Error::MalformedDocument {
                    line,
                    msg: format!("entity `{k}` must have a string value"),
                })?;
                entities.insert(k.clone(), s.to_string());
            }
        }
        Ok(Self {
            intent: intent.to_string(),
            entities,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Step {
    User(UserTurn),
    Action(String),
}

impl Step {
    pub fn action(&self) -> Option<&str> {
        match self {
            Step::Action(a) => Some(a),
            Step::User(_) => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Dialogue {
    pub name: String,
    pub steps: Vec<Step>,
}

impl Dialogue {
    pub fn new(name: impl Into<String>) -> Self {
        Self {
            name: name.into(),
            steps: Vec::new(),
        }
    }

    pub fn user(mut self, turn: UserTurn) -> Self {
        self.steps.push(Step::User(turn));
        self
    }

    pub fn act(mut self, action: impl Into<String>) -> Self {
        self.steps.push(Step::Action(action.into()));
        self
    }

    pub fn actions(&self) -> impl Iterator<Item = &str> {
        self.steps.iter().filter_map(Step::action)
    }

    pub fn num_actions(&self) -> usize {
        self.actions().count()
    }

    pub fn user_turns(&self) -> impl Iterator<Item = &UserTurn> {
        self.steps.iter().filter_map(|s| match s {
            Step::User(u) => Some(u),
            Step::Action(_) => None,
        })
    }

    /// Checks identifiers against `spec` and the step-ordering invariant.
    pub fn validate(&self, spec: &DomainSpec) -> Result<()> {
        if !matches!(self.steps.first(), Some(Step::User(_))) {
            return Err(Error::MalformedDocument {
                line: 0,
                msg: format!("dialogue `{}` must start with a user turn", self.name),
            });
        }
        for step in &self.steps {
            match step {
                Step::User(u) => {
                    if !spec.has_intent(&u.intent) {
                        return Err(Error::UnknownIdentifier {
                            line: 0,
                            name: u.intent.clone(),
                        });
                    }
                    if let Some(e) = u.entities.keys().find(|e| !spec.has_entity(e)) {
                        return Err(Error::UnknownIdentifier {
                            line: 0,
                            name: e.clone(),
                        });
                    }
                }
                Step::Action(a) => {
                    if !spec.has_action(a) {
                        return Err(Error::UnknownIdentifier {
                            line: 0,
                            name: a.clone(),
                        });
                    }
                }
            }
        }
        Ok(())
    }
}

/// Parses a story document, validating every identifier against `spec`.
pub fn parse_stories(text: &str, spec: &DomainSpec) -> Result<Vec<Dialogue>> {
    let mut out: Vec<Dialogue> = Vec::new();
    let mut header_line = 0;
    let finish = |d: Option<&Dialogue>, line: usize| -> Result<()> {
        match d {
            Some(d) if d.steps.is_empty() => Err(Error::MalformedDocument {
                line,
                msg: format!("story `{}` has no steps", d.name),
            }),
            _ => Ok(()),
        }
    };
    for (i, raw) in text.lines().enumerate() {
        let line = i + 1;
        let l = raw.trim();
        if l.is_empty() {
            continue;
        }
        if let Some(name) = l.strip_prefix("##") {
            finish(out.last(), header_line)?;
            let name = name.trim();
            if name.is_empty() {
                return Err(Error::MalformedDocument {
                    line,
                    msg: "story header without a name".into(),
                });
            }
            out.push(Dialogue::new(name));
            header_line = line;
            continue;
        }
        if l.starts_with('#') {
            continue;
        }
        let Some(story) = out.last_mut() else {
            return Err(Error::MalformedDocument {
                line,
                msg: "step outside of a story".into(),
            });
        };
        if let Some(rest) = l.strip_prefix('*') {
            let turn = UserTurn::parse(rest, line)?;
            if !spec.has_intent(&turn.intent) {
                return Err(Error::UnknownIdentifier {
                    line,
                    name: turn.intent,
                });
            }
            if let Some(e) = turn.entities.keys().find(|e| !spec.has_entity(e)) {
                return Err(Error::UnknownIdentifier {
                    line,
                    name: e.clone(),
                });
            }
            story.steps.push(Step::User(turn));
        } else if let Some(rest) = l.strip_prefix('-') {
            let action = rest.trim();
            if !is_identifier(action) {
                return Err(Error::MalformedDocument {
                    line,
                    msg: format!("bad action name `{action}`"),
                });
            }
            if !spec.has_action(action) {
                return Err(Error::UnknownIdentifier {
                    line,
                    name: action.to_string(),
                });
            }
            if story.steps.is_empty() {
                return Err(Error::MalformedDocument {
                    line,
                    msg: "story must start with a user turn".into(),
                });
            }
            story.steps.push(Step::Action(action.to_string()));
        } else {
            return Err(Error::MalformedDocument {
                line,
                msg: format!("unrecognised line `{l}`"),
            });
        }
    }
    finish(out.last(), header_line)?;
    Ok(out)
}

pub fn serialize_stories(dialogues: &[Dialogue]) -> String {
    let mut out = String::new();
    for (i, d) in dialogues.iter().enumerate() {
        if i > 0 {
            out.push('\n');
        }
        let _ = writeln!(out, "## {}", d.name);
        for step in &d.steps {
            match step {
                Step::User(u) => {
                    let _ = writeln!(out, "* {}", u.render());
                }
                Step::Action(a) => {
                    let _ = writeln!(out, "  - {a}");
                }
            }
        }
    }
    out
}

/// Ensures every run of actions ends with exactly one trailing
/// `action_listen`. A user turn with no actions after it is an error.
pub fn expand_listen(d: &Dialogue) -> Result<Dialogue> {
    let mut steps = Vec::with_capacity(d.steps.len() + 4);
    let mut run_len = 0usize;
    let close_run = |steps: &mut Vec<Step>, run_len: usize| -> Result<()> {
        if run_len == 0 {
            return Err(Error::IncompleteTurn(d.name.clone()));
        }
        if steps.last().and_then(Step::action) != Some(ACTION_LISTEN) {
            steps.push(Step::Action(ACTION_LISTEN.to_string()));
        }
        Ok(())
    };
    for (i, step) in d.steps.iter().enumerate() {
        match step {
            Step::User(_) => {
                if i > 0 {
                    close_run(&mut steps, run_len)?;
                }
                run_len = 0;
            }
            Step::Action(_) => run_len += 1,
        }
        steps.push(step.clone());
    }
    if !d.steps.is_empty() {
        close_run(&mut steps, run_len)?;
    }
    Ok(Dialogue {
        name: d.name.clone(),
        steps,
    })
}

/// Drops dialogues whose step sequence already occurred, ignoring names.
pub fn dedupe(dialogues: &[Dialogue]) -> Vec<Dialogue> {
    let mut seen: HashSet<&[Step]> = HashSet::new();
    dialogues
        .iter()
        .filter(|d| seen.insert(d.steps.as_slice()))
        .cloned()
        .collect()
}

/// Seeded train/test split. Both halves keep the input order.
pub fn split(
    dialogues: &[Dialogue],
    n_test: usize,
    seed: u64,
) -> Result<(Vec<Dialogue>, Vec<Dialogue>)> {
    if n_test == 0 {
        return Ok((dialogues.to_vec(), Vec::new()));
    }
    if n_test >= dialogues.len() {
        return Err(Error::NotEnoughDialogues {
            requested: n_test,
            available: dialogues.len(),
        });
    }
    let mut idx: Vec<usize> = (0..dialogues.len()).collect();
    idx.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let mut is_test = vec![false; dialogues.len()];
    for &i in &idx[..n_test] {
        is_test[i] = true;
    }
    let (test, train): (Vec<_>, Vec<_>) = dialogues
        .iter()
        .cloned()
        .zip(is_test)
        .partition(|(_, t)| *t);
    Ok((
        train.into_iter().map(|(d, _)| d).collect(),
        test.into_iter().map(|(d, _)| d).collect(),
    ))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn spec() -> DomainSpec {
        parse_domain(
            r#"{"intents":["greet","inform"],"entities":["price","city"],
                "slots":["price","city"],
                "actions":["utter_greet","utter_ask_city","utter_ask_price"]}"#,
        )
        .unwrap()
    }

    #[test]
    fn domain_auto_appends_listen() {
        let d = parse_domain(
            r#"{"intents":["greet"],"entities":["city"],"slots":["city"],"actions":["utter_ask_city"]}"#,
        )
        .unwrap();
        assert_eq!(d.actions, vec!["utter_ask_city", "action_listen"]);
    }

    #[test]
    fn domain_missing_slots_is_schema_violation() {
        let err = parse_domain(r#"{"intents":["greet"],"entities":["city"],"actions":["a"]}"#);
        assert!(matches!(err, Err(Error::SchemaViolation(_))));
    }

    #[test]
    fn slot_without_entity_is_schema_violation() {
        let err = parse_domain(
            r#"{"intents":["greet"],"entities":["city"],"slots":["cuisine"],"actions":["a"]}"#,
        );
        assert!(matches!(err, Err(Error::SchemaViolation(_))));
    }

    #[test]
    fn domain_rejects_bad_identifiers_and_syntax() {
        let bad = r#"{"intents":["Greet"],"entities":["city"],"slots":["city"],"actions":["a"]}"#;
        assert!(matches!(parse_domain(bad), Err(Error::SchemaViolation(_))));
        let dup = r#"{"intents":["a","a"],"entities":["city"],"slots":["city"],"actions":["a"]}"#;
        assert!(matches!(parse_domain(dup), Err(Error::SchemaViolation(_))));
        assert!(matches!(
            parse_domain("{\"intents\": ["),
            Err(Error::MalformedDocument { .. })
        ));
    }

    #[test]
    fn parses_minimal_story() {
        let ds = parse_stories("## s\n* greet\n  - utter_greet\n", &spec()).unwrap();
        assert_eq!(ds.len(), 1);
        assert_eq!(
            ds[0].steps,
            vec![
                Step::User(UserTurn::new("greet")),
                Step::Action("utter_greet".into())
            ]
        );
    }

    #[test]
    fn parses_entity_payload() {
        let ds = parse_stories(
            "## s\n* inform{\"price\": \"cheap\"}\n  - utter_ask_city\n",
            &spec(),
        )
        .unwrap();
        assert_eq!(
            ds[0].steps[0],
            Step::User(UserTurn::new("inform").with("price", "cheap"))
        );
    }

    #[test]
    fn unknown_action_is_reported_with_line() {
        let err = parse_stories("## s\n* greet\n  - utter_unknown\n", &spec());
        match err {
            Err(Error::UnknownIdentifier { line, name }) => {
                assert_eq!(line, 3);
                assert_eq!(name, "utter_unknown");
            }
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn comments_and_blank_lines_are_ignored() {
        let text = "# a comment\n\n## s\n# inner\n* greet\n\n  - utter_greet\n";
        assert_eq!(parse_stories(text, &spec()).unwrap().len(), 1);
    }

    #[test]
    fn malformed_lines_fail() {
        for text in [
            "* greet\n",
            "## s\n  - utter_greet\n",
            "## s\n* greet{\"price\": 3}\n",
            "## s\n* greet{oops\n",
            "## s\nhello\n",
            "## s\n",
        ] {
            assert!(
                matches!(parse_stories(text, &spec()), Err(Error::MalformedDocument { .. })),
                "{text:?}"
            );
        }
    }

    #[test]
    fn serialize_empty_and_canonical_order() {
        assert_eq!(serialize_stories(&[]), "");
        let d = Dialogue::new("x")
            .user(UserTurn::new("inform").with("price", "cheap").with("city", "rome"))
            .act("utter_greet");
        let text = serialize_stories(std::slice::from_ref(&d));
        assert!(text.contains(r#"* inform{"city":"rome","price":"cheap"}"#));
        assert_eq!(parse_stories(&text, &spec()).unwrap(), vec![d]);
    }

    #[test]
    fn expand_listen_inserts_and_is_idempotent() {
        let d = Dialogue::new("x")
            .user(UserTurn::new("greet"))
            .act("utter_greet")
            .user(UserTurn::new("inform"))
            .act("utter_ask_city");
        let e = expand_listen(&d).unwrap();
        let expected = Dialogue::new("x")
            .user(UserTurn::new("greet"))
            .act("utter_greet")
            .act(ACTION_LISTEN)
            .user(UserTurn::new("inform"))
            .act("utter_ask_city")
            .act(ACTION_LISTEN);
        assert_eq!(e, expected);
        assert_eq!(expand_listen(&e).unwrap(), e);
    }

    #[test]
    fn expand_listen_rejects_unlabelled_turns() {
        let trailing = Dialogue::new("x")
            .user(UserTurn::new("greet"))
            .act("utter_greet")
            .user(UserTurn::new("inform"));
        assert!(matches!(expand_listen(&trailing), Err(Error::IncompleteTurn(_))));
        let doubled = Dialogue::new("y")
            .user(UserTurn::new("greet"))
            .user(UserTurn::new("inform"))
            .act("utter_greet");
        assert!(matches!(expand_listen(&doubled), Err(Error::IncompleteTurn(_))));
    }

    #[test]
    fn dedupe_ignores_names_and_keeps_first() {
        let a = Dialogue::new("a").user(UserTurn::new("greet")).act("utter_greet");
        let mut b = a.clone();
        b.name = "b".into();
        let c = Dialogue::new("c").user(UserTurn::new("inform")).act("utter_greet");
        let out = dedupe(&[a.clone(), b, c.clone()]);
        assert_eq!(out, vec![a.clone(), c.clone()]);
        assert_eq!(dedupe(&[a.clone(), c.clone()]), vec![a, c]);
    }

    #[test]
    fn split_counts_and_determinism() {
        let ds: Vec<Dialogue> = (0..108)
            .map(|i| Dialogue::new(format!("d{i}")).user(UserTurn::new("greet")))
            .collect();
        let (train, test) = split(&ds, 30, 5).unwrap();
        assert_eq!((train.len(), test.len()), (78, 30));
        assert_eq!(split(&ds, 30, 5).unwrap(), (train, test));
        let (all, none) = split(&ds, 0, 5).unwrap();
        assert_eq!(all, ds);
        assert!(none.is_empty());
        assert!(matches!(
            split(&ds, 108, 1),
            Err(Error::NotEnoughDialogues { .. })
        ));
    }
}
