//! The recurrent embedding dialogue policy.
//!
//! Each action step embeds the user input, slots and every candidate action
//! into one space. Two location-aware attention heads read from the user
//! inputs so far and from the actions already executed; an LSTM tracks the
//! dialogue and may resume from earlier cell states picked by the system
//! head.
//! The dialogue embedding is ranked against all action embeddings by cosine
//! similarity.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use redp_autodiff::{
    dropout_mask, grad_check, BoundParams, Checkpoint, GradCheckConfig, GradCheckReport, ParamId,
    ParamStore, Tape, Tensor, Var,
};
use serde::{Deserialize, Serialize};
use serde_json::json;

use crate::corpus::{expand_listen, Dialogue, DomainSpec, Step, ACTION_LISTEN};
use crate::error::{Error, Result};
use crate::featurize::{ActionFeatMode, DialogueFeatures, Vocabulary};
use crate::nn::{argmax, glorot, Dense, Lstm, LstmBias};
use crate::train::{train_model, Forward, SequenceModel, TrainConfig, TrainLog};

pub const MODEL_KIND: &str = "redp";
const NORM_EPS: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RedpConfig {
    pub embed_dim: usize,
    pub rnn_units: usize,
    pub attention_key_dim: usize,
    pub mu_pos: f64,
    /// Magnitude of the negative margin: the hinge is `max_neg - mu_neg`.
    pub mu_neg: f64,
    pub recurrent_dropout_rate: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub seed: u64,
    pub use_user_attention: bool,
    pub use_system_attention: bool,
    pub history_rewrite: bool,
    pub t_max: usize,
    pub action_feat_mode: ActionFeatMode,
    pub early_stop_epochs: usize,
}

impl Default for RedpConfig {
    fn default() -> Self {
        Self {
            embed_dim: 20,
            rnn_units: 32,
            attention_key_dim: 32,
            mu_pos: 0.8,
            mu_neg: 0.2,
            recurrent_dropout_rate: 0.1,
            epochs: 400,
            batch_size: 8,
            learning_rate: 1e-3,
            seed: 0,
            use_user_attention: true,
            use_system_attention: true,
            history_rewrite: true,
            t_max: 48,
            action_feat_mode: ActionFeatMode::TokenBag,
            early_stop_epochs: 10,
        }
    }
}

impl RedpConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::InvalidConfig(m.to_string()));
        if !(self.mu_pos > 0.0 && self.mu_pos <= 1.0) {
            return bad("mu_pos must lie in (0, 1]");
        }
        if !(self.mu_neg >= 0.0 && self.mu_neg < 1.0) {
            return bad("mu_neg must lie in [0, 1)");
        }
        if self.t_max < 2 {
            return bad("t_max must be at least 2");
        }
        if self.embed_dim == 0 || self.rnn_units == 0 || self.attention_key_dim == 0 {
            return bad("dimensions must be at least 1");
        }
        if !(0.0..1.0).contains(&self.recurrent_dropout_rate) {
            return bad("recurrent_dropout_rate must lie in [0, 1)");
        }
        if self.batch_size == 0 || !(self.learning_rate > 0.0) {
            return bad("batch_size and learning_rate must be positive");
        }
        Ok(())
    }

    pub fn train_config(&self) -> TrainConfig {
        TrainConfig {
            epochs: self.epochs,
            batch_size: self.batch_size,
            learning_rate: self.learning_rate,
            seed: self.seed,
            early_stop_epochs: self.early_stop_epochs,
        }
    }
}

/// The ranking loss for one step:
/// `max(mu_pos - sim_pos, 0) + max(max(sims_neg) - mu_neg, 0)`.
pub fn loss_step(sim_pos: f64, sims_neg: &[f64], mu_pos: f64, mu_neg: f64) -> Result<f64> {
    let max_neg = sims_neg
        .iter()
        .copied()
        .reduce(f64::max)
        .ok_or(Error::EmptyNegatives)?;
    Ok((mu_pos - sim_pos).max(0.0) + (max_neg - mu_neg).max(0.0))
}

/// Applies a three-tap shift kernel `[s-1, s0, s+1]` to `p` with zero
/// padding and renormalises the result.
pub fn shift_and_renormalize(p: &[f64], kernel: [f64; 3]) -> Vec<f64> {
    let m = p.len();
    let out: Vec<f64> = (0..m)
        .map(|j| {
            let mut acc = kernel[1] * p[j];
            if j + 1 < m {
                acc += kernel[0] * p[j + 1];
            }
            if j >= 1 {
                acc += kernel[2] * p[j - 1];
            }
            acc
        })
        .collect();
    let z: f64 = out.iter().sum();
    out.into_iter().map(|x| x / z).collect()
}

/// Memory positions whose probability is at least uniform.
pub fn binarize(p: &[f64]) -> Vec<usize> {
    let thresh = 1.0 / p.len() as f64 - 1e-12;
    p.iter()
        .enumerate()
        .filter(|(_, &x)| x >= thresh)
        .map(|(i, _)| i)
        .collect()
}

/// Mean of the cell states selected by `binarize(p)`, or the last one if
/// none is selected. The hidden state is never rewritten.
pub fn history_rewrite(states: &[Vec<f64>], p: &[f64]) -> Vec<f64> {
    let sel = binarize(p);
    if sel.is_empty() {
        return states.last().cloned().unwrap_or_default();
    }
    let d = states[0].len();
    let mut out = vec![0.0; d];
    for &i in &sel {
        for (o, x) in out.iter_mut().zip(&states[i]) {
            *o += x;
        }
    }
    out.iter_mut().for_each(|x| *x /= sel.len() as f64);
    out
}

#[derive(Debug, Clone, Copy)]
struct AttentionHead {
    w_key: ParamId,
    query: Dense,
    score: ParamId,
    score_gain: ParamId,
    gate: Dense,
    shift: Dense,
}

impl AttentionHead {
    fn new(
        store: &mut ParamStore,
        name: &str,
        d_mem: usize,
        d_ctrl: usize,
        d_key: usize,
        rng: &mut ChaCha8Rng,
    ) -> Result<Self> {
        Ok(Self {
            w_key: store.add(format!("{name}.key.w"), glorot(d_mem, d_key, rng))?,
            query: Dense::new(store, &format!("{name}.query"), d_ctrl, d_key, rng)?,
            score: store.add(
                format!("{name}.score.v"),
                Tensor::vector(glorot(1, d_key, rng).into_data()),
            )?,
            score_gain: store.add(format!("{name}.score.g"), Tensor::vector(vec![1.0]))?,
            gate: Dense::new(store, &format!("{name}.gate"), d_ctrl, 1, rng)?,
            shift: Dense::new(store, &format!("{name}.shift"), d_ctrl, 3, rng)?,
        })
    }
}

/// Per-dialogue constants of one attention head.
struct BoundHead {
    head: AttentionHead,
    /// Weight-normalised score vector `g v / |v|`.
    score: Var,
}

impl BoundHead {
    fn new(tape: &mut Tape, p: &BoundParams, head: AttentionHead) -> Result<Self> {
        let unit = tape.l2_normalize(p[head.score], 0, NORM_EPS)?;
        let score = tape.mul(unit, p[head.score_gain])?;
        Ok(Self { head, score })
    }
}

pub struct AttentionRead {
    pub probs: Var,
    pub read: Var,
    /// Interpolated scores, carried to the next step.
    pub scores: Var,
}

/// One attention read over `m` memory slots. `keys` is `[m, key_dim]`,
/// `values` is `[m, d]`; `prev_scores` holds the `m - 1` interpolated scores
/// of the previous step. The newest slot always uses its raw score.
fn attention_read(
    tape: &mut Tape,
    p: &BoundParams,
    head: &BoundHead,
    control: Var,
    keys: Var,
    values: Var,
    prev_scores: Option<Var>,
) -> Result<AttentionRead> {
    let m = tape.shape(keys)[0];
    if m == 0 {
        return Err(Error::EmptyMemory);
    }
    let q = head.head.query.apply(tape, p, control)?;
    let hidden = tape.add(keys, q)?;
    let hidden = tape.tanh(hidden);
    let raw = tape.matmul(hidden, head.score)?;
    let scores = match prev_scores {
        Some(prev) if m > 1 => {
            let gate = head.head.gate.apply(tape, p, control)?;
            let gate = tape.sigmoid(gate);
            let past = tape.slice(raw, 0, m - 1)?;
            let delta = tape.sub(past, prev)?;
            let delta = tape.mul(gate, delta)?;
            let mixed = tape.add(prev, delta)?;
            let newest = tape.slice(raw, m - 1, m)?;
            tape.concat(&[mixed, newest], 0)?
        }
        _ => raw,
    };
    let probs = tape.softmax(scores, 0)?;
    let kernel = head.head.shift.apply(tape, p, control)?;
    let kernel = tape.softmax(kernel, 0)?;
    let shifted = tape.conv1d(probs, kernel)?;
    let z = tape.reduce_sum(shifted, None)?;
    let probs = tape.div(shifted, z)?;
    let read = tape.matmul(probs, values)?;
    Ok(AttentionRead {
        probs,
        read,
        scores,
    })
}

#[derive(Debug, Clone, Copy)]
struct RedpParams {
    embed_user: Dense,
    embed_slots: Dense,
    embed_action: Dense,
    embed_output: Dense,
    lstm: Lstm,
    h0: ParamId,
    user_head: AttentionHead,
    system_head: AttentionHead,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceStep {
    pub step: usize,
    pub action: String,
    pub user_alignments: Vec<f64>,
    pub system_alignments: Vec<f64>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct AttentionTrace {
    pub steps: Vec<TraceStep>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Prediction {
    pub action: String,
    /// Actions with their scores, best first.
    pub ranked: Vec<(String, f64)>,
    pub trace: AttentionTrace,
}

pub(crate) fn rank(actions: &[String], scores: &[f64]) -> Vec<(String, f64)> {
    let mut ranked: Vec<(String, f64)> = actions.iter().cloned().zip(scores.iter().copied()).collect();
    ranked.sort_by(|a, b| b.1.total_cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
    ranked
}

struct RedpForward {
    loss: Var,
    sims: Vec<Vec<f64>>,
    user_probs: Vec<Vec<f64>>,
    system_probs: Vec<Vec<f64>>,
}

#[derive(Debug, Clone)]
pub struct RedpModel {
    pub config: RedpConfig,
    pub domain: DomainSpec,
    pub vocab: Vocabulary,
    store: ParamStore,
    ids: RedpParams,
    action_features: Tensor,
    negatives: Vec<Vec<usize>>,
}

impl RedpModel {
    pub fn new(domain: &DomainSpec, config: RedpConfig) -> Result<Self> {
        config.validate()?;
        let vocab = Vocabulary::build(domain, config.action_feat_mode);
        let n_actions = vocab.num_actions();
        if n_actions < 2 {
            return Err(Error::EmptyNegatives);
        }
        let (de, dh, dk) = (config.embed_dim, config.rnn_units, config.attention_key_dim);
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let mut store = ParamStore::new();
        let s = &mut store;
        let ids = RedpParams {
            embed_user: Dense::new(s, "embed_user", vocab.user_dim(), de, &mut rng)?,
            embed_slots: Dense::new(s, "embed_slots", vocab.slot_dim(), de, &mut rng)?,
            embed_action: Dense::new(s, "embed_action", vocab.action_dim(), de, &mut rng)?,
            embed_output: Dense::new(s, "embed_output", dh, de, &mut rng)?,
            lstm: Lstm::new(
                s,
                "lstm",
                2 * de,
                dh,
                LstmBias::Chrono {
                    t_max: config.t_max,
                },
                &mut rng,
            )?,
            h0: s.add("h0", Tensor::zeros(&[dh]))?,
            user_head: AttentionHead::new(s, "attn_user", de, de + dh, dk, &mut rng)?,
            system_head: AttentionHead::new(s, "attn_system", de, de + dh, dk, &mut rng)?,
        };
        let action_features =
            Tensor::matrix(n_actions, vocab.action_dim(), vocab.action_table())?;
        let negatives = (0..n_actions)
            .map(|y| (0..n_actions).filter(|&a| a != y).collect())
            .collect();
        Ok(Self {
            config,
            domain: domain.clone(),
            vocab,
            store,
            ids,
            action_features,
            negatives,
        })
    }

    pub fn featurize(&self, d: &Dialogue) -> Result<DialogueFeatures> {
        d.validate(&self.domain)?;
        self.vocab.featurize_dialogue(d)
    }

    pub fn train(
        dialogues: &[Dialogue],
        domain: &DomainSpec,
        config: RedpConfig,
    ) -> Result<(Self, TrainLog)> {
        let mut model = Self::new(domain, config)?;
        let feats = dialogues
            .iter()
            .map(|d| model.featurize(&expand_listen(d)?))
            .collect::<Result<Vec<_>>>()?;
        let tc = model.config.train_config();
        let log = train_model(&mut model, &feats, &tc)?;
        Ok((model, log))
    }

    /// Action embedding table `[num_actions, embed_dim]`, in vocabulary order.
    pub fn action_embeddings(&self) -> Result<Tensor> {
        let mut tape = Tape::new();
        let p = tape.bind(&self.store);
        let f = tape.constant(self.action_features.clone());
        let b = self.ids.embed_action.apply(&mut tape, &p, f)?;
        Ok(tape.value(b).clone())
    }

    fn run(
        &self,
        tape: &mut Tape,
        p: &BoundParams,
        f: &DialogueFeatures,
        mut rng: Option<&mut ChaCha8Rng>,
    ) -> Result<RedpForward> {
        let cfg = &self.config;
        let ids = &self.ids;
        let t_len = f.len();
        if t_len == 0 {
            return Err(Error::EmptyPrefix);
        }
        if f.steps[0].user_vec.len() != self.vocab.user_dim()
            || f.steps[0].slot_vec.len() != self.vocab.slot_dim()
        {
            return Err(Error::StateMismatch("feature dimensions do not match the model".into()));
        }
        let (de, dh) = (cfg.embed_dim, cfg.rnn_units);

        let u = tape.constant(Tensor::matrix(t_len, self.vocab.user_dim(), f.user_matrix())?);
        let s = tape.constant(Tensor::matrix(t_len, self.vocab.slot_dim(), f.slot_matrix())?);
        let eu = ids.embed_user.apply(tape, p, u)?;
        let es = ids.embed_slots.apply(tape, p, s)?;
        let af = tape.constant(self.action_features.clone());
        let table = ids.embed_action.apply(tape, p, af)?;
        let table_unit = tape.l2_normalize(table, 1, NORM_EPS)?;

        // The LSTM input is [eu + user_read, es]; split W_x so the parts that
        // do not depend on attention are computed once for every step.
        let top: Vec<usize> = (0..de).collect();
        let bottom: Vec<usize> = (de..2 * de).collect();
        let wx_user = tape.rows(p[ids.lstm.w_x], &top)?;
        let wx_slots = tape.rows(p[ids.lstm.w_x], &bottom)?;
        let gx_user = tape.matmul(eu, wx_user)?;
        let gx_slots = tape.matmul(es, wx_slots)?;
        let gx = tape.add(gx_user, gx_slots)?;
        let gx = tape.add(gx, p[ids.lstm.b])?;

        let user_head = cfg
            .use_user_attention
            .then(|| -> Result<_> {
                let h = BoundHead::new(tape, p, ids.user_head)?;
                let keys = tape.matmul(eu, p[ids.user_head.w_key])?;
                Ok((h, keys))
            })
            .transpose()?;
        let system_head = cfg
            .use_system_attention
            .then(|| -> Result<_> {
                let h = BoundHead::new(tape, p, ids.system_head)?;
                let keys = tape.matmul(table, p[ids.system_head.w_key])?;
                Ok((h, keys))
            })
            .transpose()?;

        let mask = match rng.as_deref_mut() {
            Some(r) if cfg.recurrent_dropout_rate > 0.0 => {
                Some(tape.constant(dropout_mask(&[dh], cfg.recurrent_dropout_rate, r)))
            }
            _ => None,
        };

        let c0 = tape.constant(Tensor::zeros(&[dh]));
        let (mut h_prev, mut c_prev) = (p[ids.h0], c0);
        let mut cs: Vec<Var> = Vec::with_capacity(t_len);
        let mut prev_user: Option<Var> = None;
        let mut prev_sys: Option<Var> = None;
        let mut step_losses = Vec::with_capacity(t_len);
        let mut out = RedpForward {
            loss: c0,
            sims: Vec::with_capacity(t_len),
            user_probs: Vec::with_capacity(t_len),
            system_probs: Vec::with_capacity(t_len),
        };

        for t in 0..t_len {
            let eu_t = tape.row(eu, t)?;
            let control = tape.concat(&[eu_t, h_prev], 0)?;
            let upto: Vec<usize> = (0..=t).collect();

            let mut gx_t = tape.row(gx, t)?;
            let mut user_p = Vec::new();
            if let Some((head, keys)) = &user_head {
                let k = tape.rows(*keys, &upto)?;
                let v = tape.rows(eu, &upto)?;
                let r = attention_read(tape, p, head, control, k, v, prev_user)?;
                let extra = tape.matmul(r.read, wx_user)?;
                gx_t = tape.add(gx_t, extra)?;
                prev_user = Some(r.scores);
                user_p = tape.value(r.probs).data().to_vec();
            }

            let mut sys_read = None;
            let mut sys_p = Vec::new();
            let mut h_in = h_prev;
            let mut c_in = c_prev;
            if let (Some((head, keys)), true) = (&system_head, t > 0) {
                let executed = &f.targets[..t];
                let k = tape.rows(*keys, executed)?;
                let v = tape.rows(table, executed)?;
                let r = attention_read(tape, p, head, control, k, v, prev_sys)?;
                prev_sys = Some(r.scores);
                sys_p = tape.value(r.probs).data().to_vec();
                sys_read = Some(r.read);
                if cfg.history_rewrite && t > 1 {
                    let sel = binarize(&sys_p);
                    if !sel.is_empty() {
                        c_in = mean_of(tape, &cs, &sel)?;
                    }
                }
            }
            if let Some(m) = mask {
                h_in = tape.mul(h_in, m)?;
            }
            let (h, c) = ids.lstm.step(tape, p, gx_t, h_in, c_in)?;
            cs.push(c);
            h_prev = h;
            c_prev = c;

            let mut a = ids.embed_output.apply(tape, p, h)?;
            if let Some(r) = sys_read {
                a = tape.add(a, r)?;
            }
            let a_unit = tape.l2_normalize(a, 0, NORM_EPS)?;
            let sims = tape.matmul(table_unit, a_unit)?;

            let y = f.targets[t];
            let pos = tape.gather(sims, &[y])?;
            let neg = tape.gather(sims, &self.negatives[y])?;
            let max_neg = tape.reduce_max(neg, None)?;
            let l_pos = tape.rsub_scalar(cfg.mu_pos, pos)?;
            let l_pos = tape.relu(l_pos);
            let l_neg = tape.add_scalar(max_neg, -cfg.mu_neg)?;
            let l_neg = tape.relu(l_neg);
            step_losses.push(tape.add(l_pos, l_neg)?);

            out.sims.push(tape.value(sims).data().to_vec());
            out.user_probs.push(user_p);
            out.system_probs.push(sys_p);
        }
        let all = tape.concat(&step_losses, 0)?;
        out.loss = tape.reduce_sum(all, None)?;
        Ok(out)
    }

    /// Mean per-step loss of one dialogue in inference mode.
    pub fn training_loss(
        &self,
        tape: &mut Tape,
        p: &BoundParams,
        f: &DialogueFeatures,
    ) -> Result<Var> {
        let out = self.run(tape, p, f, None)?;
        Ok(tape.scale(out.loss, 1.0 / f.len() as f64)?)
    }

    /// Finite-difference check of `training_loss` on `d` at the current weights.
    pub fn gradient_check(&self, d: &Dialogue, cfg: GradCheckConfig) -> Result<GradCheckReport> {
        let f = self.featurize(d)?;
        let failure = std::cell::RefCell::new(None);
        let report = grad_check(
            &self.store,
            |tape, p| {
                self.training_loss(tape, p, &f).map_err(|e| match e {
                    Error::Autodiff(a) => a,
                    other => {
                        let err = redp_autodiff::AutodiffError::InvalidArgument {
                            op: "training_loss",
                            msg: other.to_string(),
                        };
                        failure.replace(Some(other));
                        err
                    }
                })
            },
            cfg,
        );
        match failure.into_inner() {
            Some(e) => Err(e),
            None => Ok(report?),
        }
    }

    fn infer(&self, f: &DialogueFeatures) -> Result<RedpForward> {
        let mut tape = Tape::new();
        let p = tape.bind(&self.store);
        self.run(&mut tape, &p, f, None)
    }

    fn trace_of(&self, fw: &RedpForward) -> AttentionTrace {
        AttentionTrace {
            steps: fw
                .sims
                .iter()
                .enumerate()
                .map(|(step, s)| TraceStep {
                    step,
                    action: self.vocab.actions[argmax(s)].clone(),
                    user_alignments: fw.user_probs[step].clone(),
                    system_alignments: fw.system_probs[step].clone(),
                })
                .collect(),
        }
    }

    /// Teacher-forced predictions for every action step of `d`.
    pub fn predict_dialogue(&self, d: &Dialogue) -> Result<AttentionTrace> {
        let f = self.featurize(d)?;
        if f.is_empty() {
            return Err(Error::EmptyPrefix);
        }
        Ok(self.trace_of(&self.infer(&f)?))
    }

    /// Predicts the action that follows `prefix`.
    pub fn predict(&self, prefix: &Dialogue) -> Result<Prediction> {
        let f = prefix_features(prefix, &self.domain, &self.vocab)?;
        let fw = self.infer(&f)?;
        let last = fw.sims.last().expect("prefix query step");
        let ranked = rank(&self.vocab.actions, last);
        Ok(Prediction {
            action: ranked[0].0.clone(),
            ranked,
            trace: self.trace_of(&fw),
        })
    }

    pub fn to_checkpoint(&self) -> Checkpoint {
        Checkpoint::new(
            MODEL_KIND,
            serde_json::to_value(&self.config).expect("config serialises"),
            json!({ "domain": self.domain }),
            &self.store,
        )
    }

    pub fn from_checkpoint(ckpt: &Checkpoint) -> Result<Self> {
        if ckpt.model_kind != MODEL_KIND {
            return Err(Error::InvalidConfig(format!(
                "checkpoint holds a `{}` model",
                ckpt.model_kind
            )));
        }
        let config: RedpConfig = serde_json::from_value(ckpt.config.clone())
            .map_err(|e| Error::InvalidConfig(e.to_string()))?;
        let domain: DomainSpec = serde_json::from_value(ckpt.extra["domain"].clone())
            .map_err(|e| Error::SchemaViolation(e.to_string()))?;
        domain.validate()?;
        let mut model = Self::new(&domain, config)?;
        ckpt.restore_into(&mut model.store)?;
        Ok(model)
    }
}

fn mean_of(tape: &mut Tape, states: &[Var], sel: &[usize]) -> Result<Var> {
    if sel.len() == 1 {
        return Ok(states[sel[0]]);
    }
    let picked: Vec<Var> = sel.iter().map(|&i| states[i]).collect();
    let m = tape.stack(&picked)?;
    Ok(tape.reduce_mean(m, Some(0))?)
}

/// Features for `prefix` plus one query step whose target is a placeholder.
pub(crate) fn prefix_features(
    prefix: &Dialogue,
    domain: &DomainSpec,
    vocab: &Vocabulary,
) -> Result<DialogueFeatures> {
    prefix.validate(domain).map_err(|e| match e {
        Error::MalformedDocument { .. } => Error::EmptyPrefix,
        other => other,
    })?;
    let mut q = prefix.clone();
    q.steps.push(Step::Action(ACTION_LISTEN.to_string()));
    vocab.featurize_dialogue(&q)
}

impl SequenceModel for RedpModel {
    fn params(&self) -> &ParamStore {
        &self.store
    }

    fn params_mut(&mut self) -> &mut ParamStore {
        &mut self.store
    }

    fn forward(
        &self,
        tape: &mut Tape,
        p: &BoundParams,
        f: &DialogueFeatures,
        rng: Option<&mut ChaCha8Rng>,
    ) -> Result<Forward> {
        let out = self.run(tape, p, f, rng)?;
        Ok(Forward {
            loss: out.loss,
            scores: out.sims,
        })
    }
}
