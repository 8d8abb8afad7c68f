//! LSTM classifier baselines. The input at each action step is the binary
//! user features, the slot bits and a code for the previous system action:
//! one-hot (`bin`) or a bag of name tokens (`lt`).

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use redp_autodiff::{BoundParams, Checkpoint, ParamStore, Tape, Tensor};
use serde::{Deserialize, Serialize};
use serde_json::json;

use crate::corpus::{expand_listen, Dialogue, DomainSpec};
use crate::error::{Error, Result};
use crate::featurize::{tokens, ActionFeatMode, DialogueFeatures, Vocabulary};
use crate::nn::{Dense, Lstm, LstmBias};
use crate::redp::rank;
use crate::train::{train_model, Forward, SequenceModel, TrainConfig, TrainLog};

pub const MODEL_KIND: &str = "lstm";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PrevActionEncoding {
    Bin,
    Lt,
}

impl PrevActionEncoding {
    pub fn policy_name(self) -> &'static str {
        match self {
            PrevActionEncoding::Bin => "lstm_bin",
            PrevActionEncoding::Lt => "lstm_lt",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BaselineConfig {
    pub rnn_units: usize,
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub seed: u64,
    pub prev_action_encoding: PrevActionEncoding,
    pub early_stop_epochs: usize,
}

impl Default for BaselineConfig {
    fn default() -> Self {
        Self {
            rnn_units: 32,
            epochs: 400,
            batch_size: 8,
            learning_rate: 1e-3,
            seed: 0,
            prev_action_encoding: PrevActionEncoding::Bin,
            early_stop_epochs: 10,
        }
    }
}

impl BaselineConfig {
    pub fn validate(&self) -> Result<()> {
        if self.rnn_units == 0 {
            return Err(Error::InvalidConfig("rnn_units must be at least 1".into()));
        }
        if self.batch_size == 0 || !(self.learning_rate > 0.0) {
            return Err(Error::InvalidConfig(
                "batch_size and learning_rate must be positive".into(),
            ));
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

/// Input layout: `[user bits | slot bits | previous-action code]`.
#[derive(Debug, Clone, PartialEq)]
pub struct InputEncoder {
    pub vocab: Vocabulary,
    pub encoding: PrevActionEncoding,
    prev_tokens: Vec<String>,
}

impl InputEncoder {
    pub fn new(domain: &DomainSpec, encoding: PrevActionEncoding) -> Self {
        let vocab = Vocabulary::build(domain, ActionFeatMode::SingleLabel);
        let prev_tokens = match encoding {
            PrevActionEncoding::Bin => vocab.actions.clone(),
            PrevActionEncoding::Lt => {
                Vocabulary::build(domain, ActionFeatMode::TokenBag).action_tokens
            }
        };
        Self {
            vocab,
            encoding,
            prev_tokens,
        }
    }

    pub fn dim(&self) -> usize {
        self.vocab.user_dim() + self.vocab.slot_dim() + self.prev_tokens.len()
    }

    /// Binary input vector. `prev` is `None` at the first step.
    pub fn encode(&self, user_vec: &[f64], slot_vec: &[f64], prev: Option<&str>) -> Result<Vec<f64>> {
        let mut x: Vec<f64> = user_vec.iter().map(|&c| f64::from(c > 0.0)).collect();
        x.extend_from_slice(slot_vec);
        let mut code = vec![0.0; self.prev_tokens.len()];
        if let Some(a) = prev {
            self.vocab.action_index(a)?;
            let mut set = |tok: &str| {
                let i = self
                    .prev_tokens
                    .binary_search_by(|t| t.as_str().cmp(tok))
                    .expect("token from the same inventory");
                code[i] = 1.0;
            };
            match self.encoding {
                PrevActionEncoding::Bin => set(a),
                PrevActionEncoding::Lt => tokens(a).for_each(set),
            }
        }
        x.extend(code);
        Ok(x)
    }

    /// Input matrix `[steps, dim]` for a featurised dialogue.
    pub fn encode_dialogue(&self, f: &DialogueFeatures) -> Result<Vec<f64>> {
        let mut out = Vec::with_capacity(f.len() * self.dim());
        for (t, s) in f.steps.iter().enumerate() {
            let prev = (t > 0).then(|| f.steps[t - 1].target_action.as_str());
            out.extend(self.encode(&s.user_vec, &s.slot_vec, prev)?);
        }
        Ok(out)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BaselinePrediction {
    pub action: String,
    /// Softmax over `vocab.actions`.
    pub probs: Vec<f64>,
    pub ranked: Vec<(String, f64)>,
}

#[derive(Debug, Clone)]
pub struct BaselineModel {
    pub config: BaselineConfig,
    pub domain: DomainSpec,
    pub encoder: InputEncoder,
    store: ParamStore,
    lstm: Lstm,
    head: Dense,
}

impl BaselineModel {
    pub fn new(domain: &DomainSpec, config: BaselineConfig) -> Result<Self> {
        config.validate()?;
        let encoder = InputEncoder::new(domain, config.prev_action_encoding);
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let mut store = ParamStore::new();
        let lstm = Lstm::new(
            &mut store,
            "lstm",
            encoder.dim(),
            config.rnn_units,
            LstmBias::Forget(1.0),
            &mut rng,
        )?;
        let head = Dense::new(
            &mut store,
            "output",
            config.rnn_units,
            encoder.vocab.num_actions(),
            &mut rng,
        )?;
        Ok(Self {
            config,
            domain: domain.clone(),
            encoder,
            store,
            lstm,
            head,
        })
    }

    pub fn vocab(&self) -> &Vocabulary {
        &self.encoder.vocab
    }

    pub fn featurize(&self, d: &Dialogue) -> Result<DialogueFeatures> {
        d.validate(&self.domain)?;
        self.encoder.vocab.featurize_dialogue(d)
    }

    pub fn train(
        dialogues: &[Dialogue],
        domain: &DomainSpec,
        config: BaselineConfig,
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

    pub fn predict(&self, prefix: &Dialogue) -> Result<BaselinePrediction> {
        let f = crate::redp::prefix_features(prefix, &self.domain, self.vocab())?;
        let scores = self.step_scores(&f)?;
        let probs = scores.last().expect("prefix query step").clone();
        let ranked = rank(&self.vocab().actions, &probs);
        Ok(BaselinePrediction {
            action: ranked[0].0.clone(),
            probs,
            ranked,
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
        let config: BaselineConfig = serde_json::from_value(ckpt.config.clone())
            .map_err(|e| Error::InvalidConfig(e.to_string()))?;
        let domain: DomainSpec = serde_json::from_value(ckpt.extra["domain"].clone())
            .map_err(|e| Error::SchemaViolation(e.to_string()))?;
        domain.validate()?;
        let mut model = Self::new(&domain, config)?;
        ckpt.restore_into(&mut model.store)?;
        Ok(model)
    }
}

impl SequenceModel for BaselineModel {
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
        _rng: Option<&mut ChaCha8Rng>,
    ) -> Result<Forward> {
        let t_len = f.len();
        if t_len == 0 {
            return Err(Error::EmptyPrefix);
        }
        let n_actions = self.vocab().num_actions();
        let x = Tensor::matrix(t_len, self.encoder.dim(), self.encoder.encode_dialogue(f)?)?;
        let x = tape.constant(x);
        let gx = tape.matmul(x, p[self.lstm.w_x])?;
        let gx = tape.add(gx, p[self.lstm.b])?;
        let zeros = tape.constant(Tensor::zeros(&[self.lstm.units]));
        let (mut h, mut c) = (zeros, zeros);
        let mut hs = Vec::with_capacity(t_len);
        for t in 0..t_len {
            let g = tape.row(gx, t)?;
            (h, c) = self.lstm.step(tape, p, g, h, c)?;
            hs.push(h);
        }
        let hm = tape.stack(&hs)?;
        let logits = self.head.apply(tape, p, hm)?;
        let probs = tape.softmax(logits, 1)?;
        let picked: Vec<usize> = f
            .targets
            .iter()
            .enumerate()
            .map(|(t, &y)| t * n_actions + y)
            .collect();
        let target_p = tape.gather(probs, &picked)?;
        let logp = tape.log(target_p);
        let total = tape.reduce_sum(logp, None)?;
        let loss = tape.scale(total, -1.0)?;
        let pv = tape.value(probs);
        Ok(Forward {
            loss,
            scores: (0..t_len).map(|t| pv.row(t).to_vec()).collect(),
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::bundle;
    use crate::corpus::UserTurn;

    fn domain() -> DomainSpec {
        bundle::domain().unwrap()
    }

    fn prev_segment(enc: &InputEncoder, prev: Option<&str>) -> Vec<f64> {
        let u = vec![0.0; enc.vocab.user_dim()];
        let s = vec![0.0; enc.vocab.slot_dim()];
        let x = enc.encode(&u, &s, prev).unwrap();
        x[enc.vocab.user_dim() + enc.vocab.slot_dim()..].to_vec()
    }

    #[test]
    fn bin_sets_exactly_one_bit() {
        let enc = InputEncoder::new(&domain(), PrevActionEncoding::Bin);
        let seg = prev_segment(&enc, Some("utter_greet"));
        assert_eq!(seg.iter().sum::<f64>(), 1.0);
    }

    #[test]
    fn lt_sets_token_bits() {
        let enc = InputEncoder::new(&domain(), PrevActionEncoding::Lt);
        let seg = prev_segment(&enc, Some("action_search_restaurant"));
        let on: Vec<&String> = enc
            .prev_tokens
            .iter()
            .zip(&seg)
            .filter(|(_, &b)| b > 0.0)
            .map(|(t, _)| t)
            .collect();
        assert_eq!(on, vec!["action", "restaurant", "search"]);
    }

    #[test]
    fn first_step_code_is_zero() {
        for e in [PrevActionEncoding::Bin, PrevActionEncoding::Lt] {
            let enc = InputEncoder::new(&domain(), e);
            assert!(prev_segment(&enc, None).iter().all(|&b| b == 0.0));
        }
    }

    #[test]
    fn unknown_previous_action_rejected() {
        let enc = InputEncoder::new(&domain(), PrevActionEncoding::Bin);
        let u = vec![0.0; enc.vocab.user_dim()];
        let s = vec![0.0; enc.vocab.slot_dim()];
        assert!(matches!(
            enc.encode(&u, &s, Some("utter_nope")),
            Err(Error::UnknownIdentifier { .. })
        ));
    }

    #[test]
    fn zero_weights_give_uniform_probabilities() {
        let mut m = BaselineModel::new(&domain(), BaselineConfig::default()).unwrap();
        for name in ["output.w", "output.b"] {
            let shape = m.store.tensor(m.store.id(name).unwrap()).shape().to_vec();
            m.store.set(name, Tensor::zeros(&shape)).unwrap();
        }
        let prefix = Dialogue::new("p").user(UserTurn::new("request_hotel"));
        let pred = m.predict(&prefix).unwrap();
        let n = m.vocab().num_actions() as f64;
        assert!(pred.probs.iter().all(|&p| (p - 1.0 / n).abs() < 1e-15));
        assert!((pred.probs.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        // every score ties, so the lexicographically first action wins
        assert_eq!(pred.action, m.vocab().actions[0]);
    }
}
