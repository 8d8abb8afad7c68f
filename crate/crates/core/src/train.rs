//! Mini-batch trainer shared by every policy.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use redp_autodiff::{adam_step, AdamConfig, AdamState, BoundParams, Gradients, ParamStore, Tape, Var};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::featurize::DialogueFeatures;
use crate::nn::argmax;

/// Output of one dialogue's forward pass.
pub struct Forward {
    /// Sum of per-step losses.
    pub loss: Var,
    /// Per-step action scores; the argmax is the prediction.
    pub scores: Vec<Vec<f64>>,
}

pub trait SequenceModel {
    fn params(&self) -> &ParamStore;
    fn params_mut(&mut self) -> &mut ParamStore;

    /// Forward pass over every action step. `rng` is `Some` in training mode.
    fn forward(
        &self,
        tape: &mut Tape,
        p: &BoundParams,
        f: &DialogueFeatures,
        rng: Option<&mut ChaCha8Rng>,
    ) -> Result<Forward>;

    /// Teacher-forced scores for every action step, inference mode.
    fn step_scores(&self, f: &DialogueFeatures) -> Result<Vec<Vec<f64>>> {
        if f.is_empty() {
            return Ok(Vec::new());
        }
        let mut tape = Tape::new();
        let p = tape.bind(self.params());
        Ok(self.forward(&mut tape, &p, f, None)?.scores)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub seed: u64,
    /// Stop once training accuracy has been perfect for this many epochs.
    pub early_stop_epochs: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub mean_loss: f64,
    pub action_accuracy: f64,
    pub dialogue_accuracy: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainLog {
    pub epochs: Vec<EpochRecord>,
    pub stopped_early: bool,
}

impl TrainLog {
    pub fn last(&self) -> Option<&EpochRecord> {
        self.epochs.last()
    }
}

fn dropout_rng(seed: u64, epoch: usize, dialogue: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(((epoch as u64) << 32) | dialogue as u64);
    rng
}

pub fn train_model<M: SequenceModel>(
    model: &mut M,
    data: &[DialogueFeatures],
    cfg: &TrainConfig,
) -> Result<TrainLog> {
    let data: Vec<&DialogueFeatures> = data.iter().filter(|f| !f.is_empty()).collect();
    if data.is_empty() {
        return Err(Error::EmptyTrainingSet);
    }
    if cfg.batch_size == 0 || !(cfg.learning_rate > 0.0) {
        return Err(Error::InvalidConfig(
            "batch_size and learning_rate must be positive".into(),
        ));
    }
    let mut adam = AdamState::new(
        model.params(),
        AdamConfig {
            lr: cfg.learning_rate,
            ..AdamConfig::default()
        },
    );
    let mut order_rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ 0x5eed_0f_0bde);
    let mut order: Vec<usize> = (0..data.len()).collect();
    let mut log = TrainLog::default();
    let mut perfect_streak = 0;

    for epoch in 0..cfg.epochs {
        order.shuffle(&mut order_rng);
        let (mut loss_total, mut steps_total, mut correct_total, mut full) = (0.0, 0usize, 0usize, 0usize);
        for batch in order.chunks(cfg.batch_size) {
            let mut grads = Gradients::zeros_like(model.params());
            let mut batch_steps = 0;
            for &di in batch {
                let f = data[di];
                let mut tape = Tape::new();
                let p = tape.bind(model.params());
                let mut rng = dropout_rng(cfg.seed, epoch, di);
                let out = model.forward(&mut tape, &p, f, Some(&mut rng))?;
                let loss = tape.value(out.loss).item();
                if !loss.is_finite() {
                    return Err(Error::Divergence { epoch });
                }
                let g = tape.backward(out.loss)?;
                grads.accumulate(&g);
                loss_total += loss;
                batch_steps += f.len();
                let correct = out
                    .scores
                    .iter()
                    .zip(&f.targets)
                    .filter(|(s, &y)| argmax(s) == y)
                    .count();
                correct_total += correct;
                full += usize::from(correct == f.len());
            }
            grads.scale(1.0 / batch_steps as f64);
            if !grads.is_finite() {
                return Err(Error::Divergence { epoch });
            }
            adam_step(model.params_mut(), &grads, &mut adam)?;
            steps_total += batch_steps;
        }
        let rec = EpochRecord {
            epoch,
            mean_loss: loss_total / steps_total as f64,
            action_accuracy: correct_total as f64 / steps_total as f64,
            dialogue_accuracy: full as f64 / data.len() as f64,
        };
        perfect_streak = if correct_total == steps_total {
            perfect_streak + 1
        } else {
            0
        };
        log.epochs.push(rec);
        if cfg.early_stop_epochs > 0 && perfect_streak >= cfg.early_stop_epochs {
            log.stopped_early = true;
            break;
        }
    }
    Ok(log)
}

/// Fraction of action steps whose argmax matches the target.
pub fn action_accuracy<M: SequenceModel>(model: &M, data: &[DialogueFeatures]) -> Result<f64> {
    let (mut ok, mut n) = (0, 0);
    for f in data {
        let scores = model.step_scores(f)?;
        ok += scores
            .iter()
            .zip(&f.targets)
            .filter(|(s, &y)| argmax(s) == y)
            .count();
        n += f.len();
    }
    Ok(if n == 0 { 0.0 } else { ok as f64 / n as f64 })
}
