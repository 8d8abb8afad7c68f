//! bAbI dialog task 5 ingestion and a generator for synthetic task-5 files.
//!
//! Input lines look like `<id> <user>\t<bot>`. Lines without a tab are
//! knowledge-base results (`<id> <name> R_<attr> <value>`) and are folded
//! into one results turn. `<SILENCE>` continues the previous system run.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use regex::Regex;
use serde::Deserialize;

use crate::bundle;
use crate::corpus::{expand_listen, is_identifier, Dialogue, DomainSpec, UserTurn};
use crate::error::{Error, Result};

pub const SILENCE: &str = "<SILENCE>";
pub const TEMPLATES_FILE: &str = "babi_task5_templates.json";

#[derive(Debug, Clone, Deserialize)]
struct UserTemplateDoc {
    intent: String,
    template: String,
}

#[derive(Debug, Clone, Deserialize)]
struct SystemTemplateDoc {
    action: String,
    template: String,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
struct InventoryDoc {
    task: u32,
    results_intent: String,
    entities: Vec<String>,
    user: Vec<UserTemplateDoc>,
    system: Vec<SystemTemplateDoc>,
}

#[derive(Debug, Clone)]
struct Matcher {
    label: String,
    template: String,
    re: Regex,
    slots: Vec<String>,
}

fn placeholders(template: &str) -> Vec<String> {
    let re = Regex::new(r"\{([a-z_]+)\}").expect("static pattern");
    re.captures_iter(template).map(|c| c[1].to_string()).collect()
}

fn compile(label: &str, template: &str) -> Result<Matcher> {
    let mut pattern = String::from("^");
    let mut rest = template;
    while let Some(open) = rest.find('{') {
        let close = rest[open..].find('}').ok_or_else(|| {
            Error::SchemaViolation(format!("unclosed placeholder in `{template}`"))
        })? + open;
        pattern.push_str(&regex::escape(&rest[..open]));
        let _ = write!(pattern, "(?P<{}>[^ ]+?)", &rest[open + 1..close]);
        rest = &rest[close + 1..];
    }
    pattern.push_str(&regex::escape(rest));
    pattern.push('$');
    let re = Regex::new(&pattern)
        .map_err(|e| Error::SchemaViolation(format!("template `{template}`: {e}")))?;
    Ok(Matcher {
        label: label.to_string(),
        template: template.to_string(),
        re,
        slots: placeholders(template),
    })
}

/// Utterance templates for task 5: one intent per user template, one
/// action per system template.
#[derive(Debug, Clone)]
pub struct TemplateInventory {
    pub results_intent: String,
    pub entities: Vec<String>,
    user: Vec<Matcher>,
    system: Vec<Matcher>,
}

impl TemplateInventory {
    pub fn from_json(text: &str) -> Result<Self> {
        let doc: InventoryDoc =
            serde_json::from_str(text).map_err(|e| Error::SchemaViolation(e.to_string()))?;
        if doc.task != 5 {
            return Err(Error::SchemaViolation(format!(
                "only task 5 templates are supported, got task {}",
                doc.task
            )));
        }
        let user = doc
            .user
            .iter()
            .map(|u| compile(&u.intent, &u.template))
            .collect::<Result<Vec<_>>>()?;
        let system = doc
            .system
            .iter()
            .map(|s| compile(&s.action, &s.template))
            .collect::<Result<Vec<_>>>()?;
        for m in &user {
            if let Some(s) = m.slots.iter().find(|s| !doc.entities.contains(s)) {
                return Err(Error::SchemaViolation(format!(
                    "template `{}` uses unknown entity `{s}`",
                    m.template
                )));
            }
        }
        for label in user.iter().chain(&system).map(|m| &m.label) {
            if !is_identifier(label) {
                return Err(Error::SchemaViolation(format!("`{label}` is not an identifier")));
            }
        }
        let inv = Self {
            results_intent: doc.results_intent,
            entities: doc.entities,
            user,
            system,
        };
        inv.domain()?;
        Ok(inv)
    }

    /// The bundled task-5 inventory.
    pub fn task5() -> Result<Self> {
        Self::from_json(bundle::file(TEMPLATES_FILE)?)
    }

    pub fn domain(&self) -> Result<DomainSpec> {
        let mut intents: Vec<String> = self.user.iter().map(|m| m.label.clone()).collect();
        intents.push(self.results_intent.clone());
        DomainSpec::new(
            intents,
            self.entities.clone(),
            self.entities.clone(),
            self.system.iter().map(|m| m.label.clone()).collect(),
        )
    }

    pub fn user_template(&self, intent: &str) -> Option<&str> {
        self.user
            .iter()
            .find(|m| m.label == intent)
            .map(|m| m.template.as_str())
    }

    pub fn system_template(&self, action: &str) -> Option<&str> {
        self.system
            .iter()
            .find(|m| m.label == action)
            .map(|m| m.template.as_str())
    }

    fn match_one<'a>(
        matchers: &'a [Matcher],
        text: &str,
        line: usize,
    ) -> Result<(&'a Matcher, BTreeMap<String, String>)> {
        let mut hits = matchers.iter().filter_map(|m| {
            m.re.captures(text).map(|c| {
                let values = m
                    .slots
                    .iter()
                    .map(|s| (s.clone(), c[s.as_str()].to_string()))
                    .collect();
                (m, values)
            })
        });
        let first = hits.next().ok_or_else(|| Error::UnmatchedUtterance {
            line,
            text: text.to_string(),
        })?;
        if let Some((other, _)) = hits.next() {
            return Err(Error::MalformedBabi {
                line,
                msg: format!(
                    "`{text}` matches both `{}` and `{}`",
                    first.0.template, other.template
                ),
            });
        }
        Ok(first)
    }

    pub fn match_user(&self, text: &str, line: usize) -> Result<UserTurn> {
        let (m, values) = Self::match_one(&self.user, text, line)?;
        Ok(UserTurn {
            intent: m.label.clone(),
            entities: values,
        })
    }

    pub fn match_system(&self, text: &str, line: usize) -> Result<String> {
        Ok(Self::match_one(&self.system, text, line)?.0.label.clone())
    }
}

enum Line<'a> {
    Blank,
    Exchange { user: &'a str, bot: &'a str },
    Result,
}

fn parse_line(raw: &str, line: usize, expected_id: usize) -> Result<Line<'_>> {
    let l = raw.trim_end_matches('\r');
    if l.trim().is_empty() {
        return Ok(Line::Blank);
    }
    let bad = |msg: String| Error::MalformedBabi { line, msg };
    let (id, body) = l
        .split_once(' ')
        .ok_or_else(|| bad("expected `<id> <utterance>`".into()))?;
    let id: usize = id
        .parse()
        .map_err(|_| bad(format!("`{id}` is not a line id")))?;
    if id != expected_id {
        return Err(bad(format!("line id {id}, expected {expected_id}")));
    }
    match body.split_once('\t') {
        Some((user, bot)) => {
            let (user, bot) = (user.trim(), bot.trim());
            if user.is_empty() || bot.is_empty() {
                return Err(bad("empty utterance".into()));
            }
            Ok(Line::Exchange { user, bot })
        }
        None => {
            let parts: Vec<&str> = body.split_whitespace().collect();
            match parts.as_slice() {
                [_, attr, _] if attr.starts_with("R_") => Ok(Line::Result),
                _ => Err(bad(format!("`{body}` is neither an exchange nor a result"))),
            }
        }
    }
}

/// Converts a task-5 file to labelled dialogues. Every utterance must match
/// exactly one template.
pub fn babi_ingest(text: &str, inv: &TemplateInventory) -> Result<(DomainSpec, Vec<Dialogue>)> {
    let domain = inv.domain()?;
    let mut out = Vec::new();
    let mut cur: Option<Dialogue> = None;
    let mut in_results = false;
    let mut next_id = 1;
    let finish = |d: Option<Dialogue>, out: &mut Vec<Dialogue>| -> Result<()> {
        if let Some(d) = d {
            out.push(expand_listen(&d)?);
        }
        Ok(())
    };
    for (i, raw) in text.lines().enumerate() {
        let line = i + 1;
        match parse_line(raw, line, next_id)? {
            Line::Blank => {
                if in_results {
                    return Err(Error::MalformedBabi {
                        line,
                        msg: "dialogue ends inside a result block".into(),
                    });
                }
                finish(cur.take(), &mut out)?;
                next_id = 1;
                continue;
            }
            Line::Result => {
                let d = cur.as_mut().ok_or_else(|| Error::MalformedBabi {
                    line,
                    msg: "result line before the first exchange".into(),
                })?;
                if !in_results {
                    d.steps
                        .push(crate::corpus::Step::User(UserTurn::new(&inv.results_intent)));
                    in_results = true;
                }
            }
            Line::Exchange { user, bot } => {
                let action = inv.match_system(bot, line)?;
                if user == SILENCE {
                    let d = cur.as_mut().ok_or_else(|| Error::MalformedBabi {
                        line,
                        msg: format!("dialogue starts with {SILENCE}"),
                    })?;
                    d.steps.push(crate::corpus::Step::Action(action));
                } else {
                    if in_results {
                        return Err(Error::MalformedBabi {
                            line,
                            msg: "result block must be followed by a system turn".into(),
                        });
                    }
                    let turn = inv.match_user(user, line)?;
                    let d = cur.get_or_insert_with(|| {
                        Dialogue::new(format!("babi_task5_{:05}", out.len()))
                    });
                    d.steps.push(crate::corpus::Step::User(turn));
                    d.steps.push(crate::corpus::Step::Action(action));
                }
                in_results = false;
            }
        }
        next_id += 1;
    }
    if in_results {
        return Err(Error::MalformedBabi {
            line: text.lines().count(),
            msg: "file ends inside a result block".into(),
        });
    }
    finish(cur.take(), &mut out)?;
    for d in &out {
        d.validate(&domain)?;
    }
    Ok((domain, out))
}

const CUISINES: &[&str] = &[
    "british", "cantonese", "french", "indian", "italian", "japanese", "korean", "spanish",
    "thai", "vietnamese",
];
const LOCATIONS: &[&str] = &[
    "bangkok", "beijing", "bombay", "hanoi", "london", "madrid", "paris", "rome", "seoul",
    "tokyo",
];
const NUMBERS: &[&str] = &["two", "four", "six", "eight"];
const PRICES: &[&str] = &["cheap", "moderate", "expensive"];
const SLOT_ORDER: [&str; 4] = ["cuisine", "location", "number", "price"];

fn values_of(slot: &str) -> &'static [&'static str] {
    match slot {
        "cuisine" => CUISINES,
        "location" => LOCATIONS,
        "number" => NUMBERS,
        _ => PRICES,
    }
}

fn fill(template: &str, values: &BTreeMap<&str, String>) -> String {
    let mut s = template.to_string();
    for (k, v) in values {
        s = s.replace(&format!("{{{k}}}"), v);
    }
    s
}

struct Writer<'a> {
    inv: &'a TemplateInventory,
    out: String,
    id: usize,
}

impl Writer<'_> {
    fn exchange(&mut self, user: &str, action: &str, values: &BTreeMap<&str, String>) {
        let bot = fill(self.inv.system_template(action).expect("bundled action"), values);
        let _ = writeln!(self.out, "{} {user}\t{bot}", self.id);
        self.id += 1;
    }

    fn user(&mut self, intent: &str, values: &BTreeMap<&str, String>, action: &str) {
        let u = fill(self.inv.user_template(intent).expect("bundled intent"), values);
        self.exchange(&u, action, values);
    }

    fn silence(&mut self, action: &str, values: &BTreeMap<&str, String>) {
        self.exchange(SILENCE, action, values);
    }

    fn result(&mut self, name: &str, attr: &str, value: &str) {
        let _ = writeln!(self.out, "{} {name} R_{attr} {value}", self.id);
        self.id += 1;
    }
}

const REQUESTS: &[(&str, &[&str])] = &[
    ("book_table", &[]),
    ("like_book_table", &[]),
    ("may_have_table", &[]),
    ("book_table_cuisine", &["cuisine"]),
    ("like_book_table_location", &["location"]),
    ("make_reservation_number", &["number"]),
    ("may_have_table_price", &["price"]),
    ("book_table_cuisine_location", &["cuisine", "location"]),
    ("like_book_table_number_price", &["number", "price"]),
    ("make_reservation_cuisine_location_number", &["cuisine", "location", "number"]),
    ("like_book_table_all", &["cuisine", "location", "number", "price"]),
];

fn answer_intents(slot: &str) -> [&'static str; 2] {
    match slot {
        "cuisine" => ["answer_cuisine", "love_cuisine"],
        "location" => ["answer_location", "in_location"],
        "number" => ["answer_number", "we_will_be_number"],
        _ => ["answer_price", "looking_for_price"],
    }
}

fn update_intents(slot: &str) -> [&'static str; 2] {
    match slot {
        "cuisine" => ["instead_cuisine", "prefer_cuisine"],
        "location" => ["instead_location", "prefer_location"],
        "number" => ["instead_number", "prefer_number"],
        _ => ["instead_price", "prefer_price"],
    }
}

fn pick<'a, R: Rng + ?Sized>(xs: &[&'a str], rng: &mut R) -> &'a str {
    xs.choose(rng).copied().expect("non-empty choice")
}

fn synth_one<R: Rng + ?Sized>(w: &mut Writer<'_>, rng: &mut R) {
    let mut v: BTreeMap<&str, String> = BTreeMap::new();
    let mut wanted: BTreeMap<&str, String> = SLOT_ORDER
        .iter()
        .map(|&s| (s, pick(values_of(s), rng).to_string()))
        .collect();

    w.user(pick(&["hello", "hi", "good_morning"], rng), &v, "utter_greet");
    let (intent, given) = *REQUESTS.choose(rng).expect("requests");
    for &s in given {
        v.insert(s, wanted[s].clone());
    }
    w.user(intent, &v, "utter_on_it");
    let missing = |v: &BTreeMap<&str, String>| SLOT_ORDER.iter().copied().find(|s| !v.contains_key(s));
    let mut next = missing(&v);
    match next {
        Some(s) => w.silence(&format!("utter_ask_{s}"), &v),
        None => {
            w.silence("utter_look_options", &v);
            w.silence("api_call", &v);
        }
    }
    while let Some(s) = next {
        v.insert(s, wanted[s].clone());
        next = missing(&v);
        let intent = pick(&answer_intents(s), rng);
        match next {
            Some(n) => w.user(intent, &v, &format!("utter_ask_{n}")),
            None => {
                w.user(intent, &v, "utter_look_options");
                w.silence("api_call", &v);
            }
        }
    }

    let updates = rng.gen_range(0..=2);
    for k in 0..updates {
        let s = pick(&SLOT_ORDER, rng);
        let new = loop {
            let c = pick(values_of(s), rng);
            if c != v[s] {
                break c.to_string();
            }
        };
        v.insert(s, new.clone());
        wanted.insert(s, new);
        w.user(pick(&update_intents(s), rng), &v, "utter_ask_update");
        if k + 1 == updates {
            w.user("no", &v, "utter_look_options");
            w.silence("api_call", &v);
        }
    }

    let n_results = rng.gen_range(1..=4);
    let mut names: Vec<(String, u32)> = (0..n_results)
        .map(|i| {
            let name = format!("resto_{}_{}_{}_{}stars", v["location"], v["price"], v["cuisine"], i + 1);
            (name, i as u32 + 1)
        })
        .collect();
    names.shuffle(rng);
    for (name, rating) in &names {
        for s in SLOT_ORDER {
            w.result(name, s, &v[s]);
        }
        w.result(name, "phone", &format!("{name}_phone"));
        w.result(name, "address", &format!("{name}_address"));
        w.result(name, "rating", &rating.to_string());
    }
    names.sort_by_key(|n| std::cmp::Reverse(n.1));
    let mut chosen = 0;
    v.insert("restaurant", names[0].0.clone());
    w.silence("utter_suggest_option", &v);
    let rejections = rng.gen_range(0..n_results);
    for _ in 0..rejections {
        chosen += 1;
        w.user(pick(&["reject_option", "something_else"], rng), &v, "utter_find_other");
        v.insert("restaurant", names[chosen].0.clone());
        w.silence("utter_suggest_option", &v);
    }
    w.user(pick(&["lets_do_it", "looks_great", "love_that"], rng), &v, "utter_reserve");
    let mut infos = vec!["phone", "address"];
    infos.shuffle(rng);
    infos.truncate(rng.gen_range(0..=2));
    for info in infos {
        let (intents, action): (&[&str], &str) = match info {
            "phone" => (&["ask_phone", "what_phone"], "utter_phone"),
            _ => (&["ask_address", "provide_address"], "utter_address"),
        };
        w.user(pick(intents, rng), &v, action);
    }
    w.user(pick(&["you_rock", "thank_you", "thanks"], rng), &v, "utter_anything_else");
    w.user(pick(&["no_thanks", "no_thank_you"], rng), &v, "utter_welcome");
}

/// Synthetic task-5 dialogues in the bAbI line format.
pub fn synthesize_task5(n: usize, seed: u64, inv: &TemplateInventory) -> String {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut w = Writer {
        inv,
        out: String::new(),
        id: 1,
    };
    for i in 0..n {
        if i > 0 {
            w.out.push('\n');
        }
        w.id = 1;
        synth_one(&mut w, &mut rng);
    }
    w.out
}

/// Intents and actions that occur in `dialogues`.
pub fn labels_used(dialogues: &[Dialogue]) -> (BTreeSet<String>, BTreeSet<String>) {
    let intents = dialogues
        .iter()
        .flat_map(|d| d.user_turns().map(|u| u.intent.clone()))
        .collect();
    let actions = dialogues
        .iter()
        .flat_map(|d| d.actions().map(str::to_string))
        .collect();
    (intents, actions)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{parse_stories, serialize_stories, Step};

    const SAMPLE: &str = "1 hi\thello what can i help you with today
2 can you book a table with italian food\ti'm on it
3 <SILENCE>\twhere should it be
4 rome please\thow many people would be in your party
5 for four please\twhich price range are looking for
6 i am looking for a cheap restaurant\tok let me look into some options for you
7 <SILENCE>\tapi_call italian rome four cheap
8 resto_a R_cuisine italian
9 resto_a R_rating 3
10 <SILENCE>\twhat do you think of this option: resto_a
11 let's do it\tgreat let me do the reservation
12 thanks\tis there anything i can help you with
13 no thanks\tyou're welcome

1 good morning\thello what can i help you with today
2 i'd like to book a table with british food in paris for two people in a expensive price range\ti'm on it
3 <SILENCE>\tok let me look into some options for you
4 <SILENCE>\tapi_call british paris two expensive
5 resto_b R_rating 1
6 <SILENCE>\twhat do you think of this option: resto_b
7 i love that\tgreat let me do the reservation
8 you rock\tis there anything i can help you with
9 no thank you\tyou're welcome
";

    fn inv() -> TemplateInventory {
        TemplateInventory::task5().unwrap()
    }

    #[test]
    fn ingests_sample() {
        let (domain, ds) = babi_ingest(SAMPLE, &inv()).unwrap();
        assert_eq!(ds.len(), 2);
        let d = &ds[0];
        let first: Vec<&str> = d.actions().take(3).collect();
        assert_eq!(first, ["utter_greet", "action_listen", "utter_on_it"]);
        let turn = d.user_turns().nth(1).unwrap();
        assert_eq!(turn.intent, "book_table_cuisine");
        assert_eq!(turn.entities["cuisine"], "italian");
        // silence continues the system run: ask_price turn has look + api_call
        let steps: Vec<String> = d
            .steps
            .iter()
            .map(|s| match s {
                Step::User(u) => format!("*{}", u.intent),
                Step::Action(a) => a.clone(),
            })
            .collect();
        let i = steps.iter().position(|s| s == "*looking_for_price").unwrap();
        assert_eq!(
            steps[i + 1..i + 6],
            [
                "utter_look_options",
                "api_call",
                "action_listen",
                "*api_results",
                "utter_suggest_option"
            ]
        );
        for d in &ds {
            d.validate(&domain).unwrap();
        }
    }

    #[test]
    fn api_call_tokens() {
        let toks: Vec<&str> = crate::featurize::tokens("api_call").collect();
        assert_eq!(toks, ["api", "call"]);
    }

    #[test]
    fn stories_round_trip() {
        let (domain, ds) = babi_ingest(SAMPLE, &inv()).unwrap();
        let text = serialize_stories(&ds);
        assert_eq!(parse_stories(&text, &domain).unwrap(), ds);
    }

    #[test]
    fn unmatched_utterance_reports_line() {
        let bad = SAMPLE.replace("rome please", "rome maybe");
        match babi_ingest(&bad, &inv()) {
            Err(Error::UnmatchedUtterance { line: 4, text }) => assert_eq!(text, "rome maybe"),
            other => panic!("{other:?}"),
        }
        let bad = SAMPLE.replace("you're welcome", "bye");
        assert!(matches!(
            babi_ingest(&bad, &inv()),
            Err(Error::UnmatchedUtterance { line: 13, .. })
        ));
    }

    #[test]
    fn malformed_lines() {
        for bad in [
            "2 hi\thello what can i help you with today\n",
            "1 <SILENCE>\thello what can i help you with today\n",
            "1 hi\thello what can i help you with today\n2 garbage line here too\n",
            "1 hi\thello what can i help you with today\n2 resto R_rating 3\n",
            "x hi\thello what can i help you with today\n",
        ] {
            assert!(
                matches!(babi_ingest(bad, &inv()), Err(Error::MalformedBabi { .. })),
                "{bad:?}"
            );
        }
    }

    #[test]
    fn blank_lines_split_dialogues() {
        let one = "1 hi\thello what can i help you with today\n2 no thanks\tyou're welcome\n";
        let text = format!("{one}\n\n{one}");
        let (_, ds) = babi_ingest(&text, &inv()).unwrap();
        assert_eq!(ds.len(), 2);
    }

    #[test]
    fn synthetic_file_ingests_totally() {
        let inv = inv();
        let text = synthesize_task5(200, 3, &inv);
        let (domain, ds) = babi_ingest(&text, &inv).unwrap();
        assert_eq!(ds.len(), 200);
        let (intents, actions) = labels_used(&ds);
        assert_eq!(actions.len(), domain.actions.len());
        assert_eq!(intents.len(), domain.intents.len());
        assert_eq!(synthesize_task5(200, 3, &inv), text);
    }

    #[test]
    fn inventory_rejects_unknown_entity() {
        let doc = r#"{"task": 5, "results_intent": "api_results", "entities": ["cuisine"],
            "user": [{"intent": "a", "template": "in {city}"}],
            "system": [{"action": "b", "template": "ok"}]}"#;
        assert!(matches!(
            TemplateInventory::from_json(doc),
            Err(Error::SchemaViolation(_))
        ));
        let doc = doc.replace("\"task\": 5", "\"task\": 3");
        assert!(TemplateInventory::from_json(&doc).is_err());
    }
}
