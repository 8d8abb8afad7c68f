//! Line-based chat with a trained policy. Input lines are story-format user
//! turns such as `inform{"price":"cheap"}`.

use std::io::{BufRead, Write};
use std::path::Path;

use redp_autodiff::Checkpoint;
use redp_core::corpus::{Dialogue, Step, UserTurn, ACTION_LISTEN};
use redp_core::harness::Policy;
use redp_core::Error;

use crate::manifest::read_input;
use crate::Failure;

/// Actions executed per user turn before the policy is cut off.
const MAX_ACTIONS_PER_TURN: usize = 10;

pub fn run(checkpoint: &Path) -> Result<(), Failure> {
    let ckpt = Checkpoint::from_json(&read_input(checkpoint)?).map_err(Error::from)?;
    let policy = Policy::from_checkpoint(&ckpt)?;
    let stdin = std::io::stdin();
    let stdout = std::io::stdout();
    session(&policy, stdin.lock(), &mut stdout.lock()).map_err(|e| Failure::io(Path::new("<stdio>"), e))
}

fn session<R: BufRead, W: Write>(policy: &Policy, input: R, out: &mut W) -> std::io::Result<()> {
    let domain = policy.domain().clone();
    let mut dialogue = Dialogue::new("chat");
    let mut trace = false;
    writeln!(out, "{} policy ready; `:trace` toggles attention, `:quit` exits", policy.kind())?;
    for line in input.lines() {
        let line = line?;
        let line = line.trim();
        match line {
            "" => continue,
            ":quit" => break,
            ":trace" => {
                trace = !trace;
                writeln!(out, "trace {}", if trace { "on" } else { "off" })?;
                continue;
            }
            _ => {}
        }
        let turn = match UserTurn::parse(line, 0) {
            Ok(t) => t,
            Err(e) => {
                writeln!(out, "error: {e}")?;
                continue;
            }
        };
        if !domain.has_intent(&turn.intent) {
            writeln!(out, "error: unknown intent `{}`", turn.intent)?;
            continue;
        }
        if let Some(e) = turn.entities.keys().find(|e| !domain.has_entity(e)) {
            writeln!(out, "error: unknown entity `{e}`")?;
            continue;
        }
        dialogue.steps.push(Step::User(turn));
        for _ in 0..MAX_ACTIONS_PER_TURN {
            let action = match predict(policy, &dialogue, trace, out)? {
                Ok(a) => a,
                Err(e) => {
                    writeln!(out, "error: {e}")?;
                    break;
                }
            };
            writeln!(out, "- {action}")?;
            let done = action == ACTION_LISTEN;
            dialogue.steps.push(Step::Action(action));
            if done {
                break;
            }
        }
        if dialogue.steps.last().and_then(Step::action) != Some(ACTION_LISTEN) {
            dialogue.steps.push(Step::Action(ACTION_LISTEN.to_string()));
        }
    }
    Ok(())
}

fn predict<W: Write>(
    policy: &Policy,
    dialogue: &Dialogue,
    trace: bool,
    out: &mut W,
) -> std::io::Result<Result<String, Error>> {
    if let (true, Policy::Redp(m)) = (trace, policy) {
        return Ok(match m.predict(dialogue) {
            Ok(p) => {
                if let Some(last) = p.trace.steps.last() {
                    let fmt = |v: &[f64]| {
                        v.iter().map(|x| format!("{x:.2}")).collect::<Vec<_>>().join(" ")
                    };
                    writeln!(out, "  user   [{}]", fmt(&last.user_alignments))?;
                    writeln!(out, "  system [{}]", fmt(&last.system_alignments))?;
                }
                Ok(p.action)
            }
            Err(e) => Err(e),
        });
    }
    Ok(policy.predict(dialogue).map(|(a, _)| a))
}

#[cfg(test)]
mod tests {
    use super::*;
    use redp_core::bundle;
    use redp_core::harness::{PolicyConfig, PolicyKind};

    fn untrained() -> Policy {
        let mut cfg = PolicyConfig::default();
        cfg.lstm.epochs = 1;
        Policy::new(PolicyKind::LstmBin, &bundle::domain().unwrap(), &cfg).unwrap()
    }

    fn chat(input: &str) -> String {
        let mut out = Vec::new();
        session(&untrained(), input.as_bytes(), &mut out).unwrap();
        String::from_utf8(out).unwrap()
    }

    #[test]
    fn bad_input_keeps_session_alive() {
        let out = chat("inform{\"price\": 3}\nbogus_intent\n:trace\n:quit\nrequest_hotel\n");
        assert!(out.contains("error: malformed document"));
        assert!(out.contains("error: unknown intent `bogus_intent`"));
        assert!(out.contains("trace on"));
        // nothing after :quit is processed
        assert!(!out.contains("- "));
    }

    #[test]
    fn each_turn_ends_or_is_cut_off() {
        let out = chat("request_hotel\n");
        let actions = out.lines().filter(|l| l.starts_with("- ")).count();
        assert!((1..=MAX_ACTIONS_PER_TURN).contains(&actions));
    }
}
