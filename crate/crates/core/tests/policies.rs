//! End-to-end behaviour of trained policies on the bundled corpora.

use redp_core::baseline::{BaselineConfig, BaselineModel, PrevActionEncoding};
use redp_core::bundle;
use redp_core::corpus::{Dialogue, Step};
use redp_core::harness::{
    eval_accuracy, learning_curve, run_once, CurveSpec, ExperimentData, Policy, PolicyConfig, PolicyKind,
    PoolConfig, Variant,
};
use redp_core::redp::{RedpConfig, RedpModel};
use redp_core::simuser::INTENT_CHITCHAT;
use redp_core::Error;

fn trained(kind: PolicyKind, seed: u64) -> Policy {
    let c = bundle::handcrafted_corpora().unwrap();
    let cfg = PolicyConfig::default().with_seed(seed);
    Policy::train(kind, &c.cooperative_hotel, &bundle::domain().unwrap(), &cfg).unwrap().0
}

/// Every prefix ending right before an action, paired with that action.
fn prefixes(d: &Dialogue) -> Vec<(Dialogue, String)> {
    d.steps
        .iter()
        .enumerate()
        .filter_map(|(i, s)| {
            let a = s.action()?;
            let mut p = Dialogue::new(d.name.clone());
            p.steps = d.steps[..i].to_vec();
            Some((p, a.to_string()))
        })
        .collect()
}

#[test]
fn policies_reproduce_their_training_dialogues() {
    let dialogues = bundle::handcrafted_corpora().unwrap().cooperative_hotel;
    for kind in PolicyKind::ALL {
        let policy = trained(kind, 0);
        let report = eval_accuracy(&policy, &dialogues).unwrap();
        assert_eq!(report.n_fully_correct, dialogues.len(), "{kind}: {}", report.summary());
        assert_eq!(report.action_accuracy, Some(1.0));
        for d in &dialogues {
            for (prefix, want) in prefixes(d) {
                assert_eq!(policy.predict(&prefix).unwrap().0, want, "{kind} on {}", d.name);
            }
        }
    }
}

#[test]
fn training_is_deterministic_and_checkpoints_round_trip() {
    let probe = bundle::handcrafted_corpora().unwrap().uncooperative_restaurant;
    for kind in PolicyKind::ALL {
        let a = trained(kind, 4);
        let b = trained(kind, 4);
        let json = a.to_checkpoint().to_json();
        assert_eq!(json, b.to_checkpoint().to_json(), "{kind}");

        let restored = Policy::from_checkpoint(&redp_autodiff::Checkpoint::from_json(&json).unwrap()).unwrap();
        assert_eq!(restored.kind(), kind);
        assert_eq!(restored.to_checkpoint().to_json(), json);
        let before = eval_accuracy(&a, &probe).unwrap();
        let after = eval_accuracy(&restored, &probe).unwrap();
        assert_eq!(before, after);
        for (prefix, _) in prefixes(&probe[0]) {
            assert_eq!(a.predict(&prefix).unwrap(), restored.predict(&prefix).unwrap());
        }
    }
}

#[test]
fn different_seeds_give_different_weights() {
    for kind in [PolicyKind::Redp, PolicyKind::LstmBin] {
        let cfg = |s| {
            let mut c = PolicyConfig::default().with_seed(s);
            c.redp.epochs = 1;
            c.lstm.epochs = 1;
            c
        };
        let d = bundle::domain().unwrap();
        let a = Policy::new(kind, &d, &cfg(1)).unwrap().to_checkpoint().to_json();
        let b = Policy::new(kind, &d, &cfg(2)).unwrap().to_checkpoint().to_json();
        assert_ne!(a, b, "{kind}");
    }
}

#[test]
fn encodings_differ_only_in_previous_action_segment() {
    let domain = bundle::domain().unwrap();
    let cfg = |e| BaselineConfig {
        prev_action_encoding: e,
        ..BaselineConfig::default()
    };
    let bin = BaselineModel::new(&domain, cfg(PrevActionEncoding::Bin)).unwrap();
    let lt = BaselineModel::new(&domain, cfg(PrevActionEncoding::Lt)).unwrap();
    let head = bin.encoder.vocab.user_dim() + bin.encoder.vocab.slot_dim();
    for d in bundle::handcrafted_corpora().unwrap().uncooperative_restaurant {
        let f = bin.featurize(&d).unwrap();
        let xb = bin.encoder.encode_dialogue(&f).unwrap();
        let xl = lt.encoder.encode_dialogue(&lt.featurize(&d).unwrap()).unwrap();
        for (rb, rl) in xb.chunks(bin.encoder.dim()).zip(xl.chunks(lt.encoder.dim())) {
            assert_eq!(rb[..head], rl[..head]);
            let (nb, nl) = (rb[head..].iter().sum::<f64>(), rl[head..].iter().sum::<f64>());
            assert!(nb <= 1.0 && (nb == 0.0) == (nl == 0.0));
        }
    }
}

#[test]
fn unseen_actions_are_rejected_by_lstm_and_embedded_by_redp() {
    let hotel = bundle::hotel_domain().unwrap();
    let c = bundle::handcrafted_corpora().unwrap();
    let restaurant = &c.cooperative_restaurant[0];

    let lstm = Policy::new(PolicyKind::LstmBin, &hotel, &PolicyConfig::default()).unwrap();
    assert!(matches!(eval_accuracy(&lstm, std::slice::from_ref(restaurant)), Err(Error::DomainMismatch(_))));

    // trained on hotel data only, restaurant actions never seen as targets
    let cfg = RedpConfig {
        epochs: 10,
        ..RedpConfig::default()
    };
    let m = RedpModel::train(&c.cooperative_hotel, &bundle::domain().unwrap(), cfg).unwrap().0;
    let emb = m.action_embeddings().unwrap();
    assert!(emb.data().iter().all(|x| x.is_finite()));
    for (prefix, _) in prefixes(restaurant) {
        let p = m.predict(&prefix).unwrap();
        assert_eq!(p.ranked.len(), m.vocab.actions.len());
        assert!(p.ranked.iter().all(|(_, s)| s.is_finite() && s.abs() <= 1.0 + 1e-12));
    }
}

fn small_cfg() -> PolicyConfig {
    let mut cfg = PolicyConfig::default();
    cfg.redp.epochs = 3;
    cfg.lstm.epochs = 3;
    cfg
}

#[test]
fn full_curve_point_matches_direct_training() {
    let data = ExperimentData::build(&PoolConfig::default()).unwrap();
    let cfg = small_cfg();
    for kind in [PolicyKind::LstmLt, PolicyKind::Redp] {
        let spec = CurveSpec::new(Variant::D1, &[data.hotel_train.len()], 1, 11);
        let point = &learning_curve(&data, kind, &cfg, &spec).unwrap()[0];

        let mut train = data.cooperative_hotel.clone();
        train.extend(data.hotel_train.iter().cloned());
        let (policy, _) = Policy::train(kind, &train, &data.domain, &cfg.with_seed(11)).unwrap();
        let direct = eval_accuracy(&policy, &data.hotel_test).unwrap();
        assert_eq!(point.mean, direct.accuracy.unwrap(), "{kind}");
        assert_eq!(point.std, 0.0);
        assert_eq!(point.records[0].n_fully_correct, direct.n_fully_correct);
        assert_eq!(point.records[0], run_once(&data, kind, &cfg, Variant::D1, 78, 11).unwrap());
    }
}

#[test]
fn evaluation_ignores_test_order() {
    let data = ExperimentData::build(&PoolConfig::default()).unwrap();
    let train = data.training_set(Variant::D1, 13, 0).unwrap();
    let (policy, _) = Policy::train(PolicyKind::LstmBin, &train, &data.domain, &small_cfg()).unwrap();
    let fwd = eval_accuracy(&policy, &data.hotel_test).unwrap();
    let mut rev = data.hotel_test.clone();
    rev.reverse();
    rev.rotate_left(7);
    let back = eval_accuracy(&policy, &rev).unwrap();
    assert_eq!(fwd.n_fully_correct, back.n_fully_correct);
    assert_eq!(fwd.accuracy, back.accuracy);
    assert_eq!(fwd.actions, back.actions);
    assert_eq!(fwd.per_action, back.per_action);
}

#[test]
fn attention_reaches_back_past_chitchat() {
    let data = ExperimentData::build(&PoolConfig::default()).unwrap();
    let train = data.training_set(Variant::D1, 26, 0).unwrap();
    let (policy, _) = Policy::train(PolicyKind::Redp, &train, &data.domain, &PolicyConfig::default()).unwrap();
    let Policy::Redp(m) = policy else { unreachable!() };

    let is_chitchat = |s: &Step| matches!(s, Step::User(u) if u.intent == INTENT_CHITCHAT);
    let d = data
        .hotel_test
        .iter()
        .find(|d| {
            let first = d.steps.iter().position(is_chitchat);
            first.is_some_and(|i| i > 2 && d.steps[i..].iter().any(|s| matches!(s, Step::User(_)) && !is_chitchat(s)))
        })
        .expect("a test dialogue with chitchat in the middle");
    let chit = d.steps.iter().position(is_chitchat).unwrap();
    let actions_before = d.steps[..chit].iter().filter(|s| s.action().is_some()).count();

    let trace = m.predict_dialogue(d).unwrap();
    let last = trace.steps.last().unwrap();
    let user_mass: f64 = last.user_alignments.iter().take(actions_before).sum();
    let system_mass: f64 = last.system_alignments.iter().take(actions_before).sum();
    assert!(user_mass > 0.0 && system_mass > 0.0, "{}: {user_mass} {system_mass}", d.name);
}
