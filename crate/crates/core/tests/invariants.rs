//! Causality and attention-normalisation checks on simulated dialogues.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use redp_core::baseline::{BaselineConfig, BaselineModel, PrevActionEncoding};
use redp_core::bundle;
use redp_core::corpus::{Dialogue, Step};
use redp_core::redp::{RedpConfig, RedpModel};
use redp_core::simuser::{generate_dialogues, SlotValues, TaskSpec};
use redp_core::train::SequenceModel;

const N_DIALOGUES: usize = 24;

fn dialogues() -> Vec<Dialogue> {
    let values = SlotValues::bundled();
    let mut out = generate_dialogues(&TaskSpec::hotel(), N_DIALOGUES / 2, 12, 101, &values).unwrap();
    out.extend(generate_dialogues(&TaskSpec::restaurant(), N_DIALOGUES / 2, 12, 202, &values).unwrap());
    out
}

fn redp() -> RedpModel {
    let c = bundle::handcrafted_corpora().unwrap();
    let cfg = RedpConfig {
        epochs: 15,
        ..RedpConfig::default()
    };
    RedpModel::train(&c.cooperative_hotel, &bundle::domain().unwrap(), cfg).unwrap().0
}

/// Position in `d.steps` of the `k`-th action.
fn action_position(d: &Dialogue, k: usize) -> usize {
    d.steps
        .iter()
        .enumerate()
        .filter(|(_, s)| matches!(s, Step::Action(_)))
        .nth(k)
        .unwrap()
        .0
}

/// Keeps everything up to action step `k` and grafts on the tail of `donor`.
fn perturb(d: &Dialogue, k: usize, donor: &Dialogue, rng: &mut ChaCha8Rng) -> Dialogue {
    let keep = action_position(d, k) + 1;
    let mut out = Dialogue::new(d.name.clone());
    out.steps = d.steps[..keep].to_vec();
    let from = rng.gen_range(0..donor.steps.len());
    let start = donor.steps[from..]
        .iter()
        .position(|s| matches!(s, Step::User(_)))
        .map_or(donor.steps.len(), |i| from + i);
    out.steps.extend_from_slice(&donor.steps[start..]);
    out
}

fn assert_causal<F>(scores_of: F, ds: &[Dialogue])
where
    F: Fn(&Dialogue) -> Vec<Vec<f64>>,
{
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    for (i, d) in ds.iter().enumerate() {
        let base = scores_of(d);
        let donor = &ds[(i + 1) % ds.len()];
        for _ in 0..3 {
            let k = rng.gen_range(0..base.len());
            let p = perturb(d, k, donor, &mut rng);
            let got = scores_of(&p);
            for t in 0..=k {
                assert_eq!(got[t], base[t], "{}: step {t} changed after editing steps > {k}", d.name);
            }
        }
    }
}

#[test]
fn redp_predictions_ignore_future_steps() {
    let m = redp();
    assert_causal(|d| m.step_scores(&m.featurize(d).unwrap()).unwrap(), &dialogues());
}

#[test]
fn lstm_predictions_ignore_future_steps() {
    let domain = bundle::domain().unwrap();
    for enc in [PrevActionEncoding::Bin, PrevActionEncoding::Lt] {
        let cfg = BaselineConfig {
            epochs: 5,
            prev_action_encoding: enc,
            ..BaselineConfig::default()
        };
        let m = BaselineModel::new(&domain, cfg).unwrap();
        assert_causal(|d| m.step_scores(&m.featurize(d).unwrap()).unwrap(), &dialogues());
    }
}

#[test]
fn attention_is_normalised_over_truncated_memory() {
    let m = redp();
    for d in dialogues() {
        let trace = m.predict_dialogue(&d).unwrap();
        assert_eq!(trace.steps.len(), d.num_actions());
        for s in &trace.steps {
            assert_eq!(s.user_alignments.len(), s.step + 1);
            assert_eq!(s.system_alignments.len(), s.step);
            for (v, expect_mass) in [(&s.user_alignments, true), (&s.system_alignments, s.step > 0)] {
                assert!(v.iter().all(|&p| p >= 0.0));
                let sum: f64 = v.iter().sum();
                if expect_mass {
                    assert!((sum - 1.0).abs() < 1e-9, "{}: step {} sums to {sum}", d.name, s.step);
                }
            }
        }
    }
}

#[test]
fn disabled_attention_has_empty_alignments() {
    let c = bundle::handcrafted_corpora().unwrap();
    let cfg = RedpConfig {
        use_user_attention: false,
        use_system_attention: false,
        history_rewrite: false,
        epochs: 2,
        ..RedpConfig::default()
    };
    let m = RedpModel::train(&c.cooperative_hotel, &bundle::domain().unwrap(), cfg).unwrap().0;
    let trace = m.predict_dialogue(&c.cooperative_hotel[0]).unwrap();
    assert!(!trace.steps.is_empty());
    for s in &trace.steps {
        assert!(s.user_alignments.is_empty() && s.system_alignments.is_empty());
    }
}
