//! Evaluation, learning curves, ablations, bAbI conversion and attention
//! export.

pub mod babi;

use std::collections::BTreeMap;
use std::fmt;
use std::fmt::Write as _;
use std::path::Path;
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use redp_autodiff::Checkpoint;
use serde::{Deserialize, Serialize};

use crate::baseline::{BaselineConfig, BaselineModel, PrevActionEncoding};
use crate::bundle;
use crate::corpus::{expand_listen, split, Dialogue, DomainSpec};
use crate::error::{Error, Result};
use crate::nn::argmax;
use crate::redp::{AttentionTrace, RedpConfig, RedpModel};
use crate::simuser::{generate_dialogues, SlotValues, TaskSpec, DEFAULT_MAX_USER_TURNS};
use crate::train::{SequenceModel, TrainLog};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PolicyKind {
    Redp,
    LstmBin,
    LstmLt,
}

impl PolicyKind {
    pub const ALL: [PolicyKind; 3] = [PolicyKind::Redp, PolicyKind::LstmBin, PolicyKind::LstmLt];

    pub fn name(self) -> &'static str {
        match self {
            PolicyKind::Redp => "redp",
            PolicyKind::LstmBin => "lstm_bin",
            PolicyKind::LstmLt => "lstm_lt",
        }
    }
}

impl fmt::Display for PolicyKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for PolicyKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|k| k.name() == s)
            .ok_or_else(|| Error::InvalidConfig(format!("unknown policy `{s}` (expected redp, lstm_bin or lstm_lt)")))
    }
}

/// Hyperparameters for every policy kind; `kind` selects which one applies.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PolicyConfig {
    pub redp: RedpConfig,
    pub lstm: BaselineConfig,
}

impl PolicyConfig {
    pub fn with_seed(&self, seed: u64) -> Self {
        let mut c = self.clone();
        c.redp.seed = seed;
        c.lstm.seed = seed;
        c
    }

    pub fn seed(&self, kind: PolicyKind) -> u64 {
        match kind {
            PolicyKind::Redp => self.redp.seed,
            _ => self.lstm.seed,
        }
    }
}

#[derive(Debug, Clone)]
pub enum Policy {
    Redp(RedpModel),
    Lstm(BaselineModel),
}

impl Policy {
    pub fn new(kind: PolicyKind, domain: &DomainSpec, cfg: &PolicyConfig) -> Result<Self> {
        Ok(match kind {
            PolicyKind::Redp => Policy::Redp(RedpModel::new(domain, cfg.redp.clone())?),
            PolicyKind::LstmBin | PolicyKind::LstmLt => {
                Policy::Lstm(BaselineModel::new(domain, lstm_config(kind, cfg))?)
            }
        })
    }

    pub fn train(
        kind: PolicyKind,
        dialogues: &[Dialogue],
        domain: &DomainSpec,
        cfg: &PolicyConfig,
    ) -> Result<(Self, TrainLog)> {
        Ok(match kind {
            PolicyKind::Redp => {
                let (m, log) = RedpModel::train(dialogues, domain, cfg.redp.clone())?;
                (Policy::Redp(m), log)
            }
            PolicyKind::LstmBin | PolicyKind::LstmLt => {
                let (m, log) = BaselineModel::train(dialogues, domain, lstm_config(kind, cfg))?;
                (Policy::Lstm(m), log)
            }
        })
    }

    pub fn kind(&self) -> PolicyKind {
        match self {
            Policy::Redp(_) => PolicyKind::Redp,
            Policy::Lstm(m) => match m.config.prev_action_encoding {
                PrevActionEncoding::Bin => PolicyKind::LstmBin,
                PrevActionEncoding::Lt => PolicyKind::LstmLt,
            },
        }
    }

    pub fn seed(&self) -> u64 {
        match self {
            Policy::Redp(m) => m.config.seed,
            Policy::Lstm(m) => m.config.seed,
        }
    }

    pub fn domain(&self) -> &DomainSpec {
        match self {
            Policy::Redp(m) => &m.domain,
            Policy::Lstm(m) => &m.domain,
        }
    }

    pub fn actions(&self) -> &[String] {
        match self {
            Policy::Redp(m) => &m.vocab.actions,
            Policy::Lstm(m) => &m.vocab().actions,
        }
    }

    /// Teacher-forced predicted action indices and targets for `d`.
    fn predictions(&self, d: &Dialogue) -> Result<(Vec<usize>, Vec<usize>)> {
        let (f, scores) = match self {
            Policy::Redp(m) => {
                let f = m.featurize(d)?;
                let s = m.step_scores(&f)?;
                (f, s)
            }
            Policy::Lstm(m) => {
                let f = m.featurize(d)?;
                let s = m.step_scores(&f)?;
                (f, s)
            }
        };
        Ok((scores.iter().map(|s| argmax(s)).collect(), f.targets))
    }

    /// Best next action after `prefix`, with the ranked score list.
    pub fn predict(&self, prefix: &Dialogue) -> Result<(String, Vec<(String, f64)>)> {
        match self {
            Policy::Redp(m) => {
                let p = m.predict(prefix)?;
                Ok((p.action, p.ranked))
            }
            Policy::Lstm(m) => {
                let p = m.predict(prefix)?;
                Ok((p.action, p.ranked))
            }
        }
    }

    pub fn to_checkpoint(&self) -> Checkpoint {
        match self {
            Policy::Redp(m) => m.to_checkpoint(),
            Policy::Lstm(m) => m.to_checkpoint(),
        }
    }

    pub fn from_checkpoint(ckpt: &Checkpoint) -> Result<Self> {
        match ckpt.model_kind.as_str() {
            crate::redp::MODEL_KIND => Ok(Policy::Redp(RedpModel::from_checkpoint(ckpt)?)),
            crate::baseline::MODEL_KIND => Ok(Policy::Lstm(BaselineModel::from_checkpoint(ckpt)?)),
            other => Err(Error::InvalidConfig(format!("unknown model kind `{other}`"))),
        }
    }
}

fn lstm_config(kind: PolicyKind, cfg: &PolicyConfig) -> BaselineConfig {
    let mut c = cfg.lstm.clone();
    c.prev_action_encoding = match kind {
        PolicyKind::LstmLt => PrevActionEncoding::Lt,
        _ => PrevActionEncoding::Bin,
    };
    c
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Tally {
    pub correct: usize,
    pub total: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DialogueResult {
    pub name: String,
    pub n_actions: usize,
    pub n_correct: usize,
    /// Index of the first mispredicted action step.
    pub first_error: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub policy: String,
    pub seed: u64,
    pub n_dialogues: usize,
    pub n_fully_correct: usize,
    /// `None` for an empty test set.
    pub accuracy: Option<f64>,
    pub actions: Tally,
    pub action_accuracy: Option<f64>,
    pub per_action: BTreeMap<String, Tally>,
    pub dialogues: Vec<DialogueResult>,
}

impl EvalReport {
    pub fn summary(&self) -> String {
        let acc = self
            .accuracy
            .map_or_else(|| "n/a".to_string(), |a| format!("{:.1}%", 100.0 * a));
        format!("{}/{} fully correct ({acc})", self.n_fully_correct, self.n_dialogues)
    }
}

fn check_domain(policy: &Policy, d: &Dialogue) -> Result<()> {
    d.validate(policy.domain()).map_err(|e| match e {
        Error::UnknownIdentifier { name, .. } => Error::DomainMismatch(format!(
            "dialogue `{}` uses `{name}`, unknown to the {} policy",
            d.name,
            policy.kind()
        )),
        other => other,
    })
}

/// Teacher-forced evaluation; a dialogue counts only if every action is right.
pub fn eval_accuracy(policy: &Policy, test: &[Dialogue]) -> Result<EvalReport> {
    let mut report = EvalReport {
        policy: policy.kind().to_string(),
        seed: policy.seed(),
        n_dialogues: test.len(),
        n_fully_correct: 0,
        accuracy: None,
        actions: Tally::default(),
        action_accuracy: None,
        per_action: BTreeMap::new(),
        dialogues: Vec::with_capacity(test.len()),
    };
    let names = policy.actions();
    for d in test {
        check_domain(policy, d)?;
        let d = expand_listen(d)?;
        let (pred, gold) = policy.predictions(&d)?;
        let mut first_error = None;
        let mut n_correct = 0;
        for (i, (&p, &y)) in pred.iter().zip(&gold).enumerate() {
            let t = report.per_action.entry(names[y].clone()).or_default();
            t.total += 1;
            if p == y {
                t.correct += 1;
                n_correct += 1;
            } else if first_error.is_none() {
                first_error = Some(i);
            }
        }
        report.actions.total += gold.len();
        report.actions.correct += n_correct;
        report.n_fully_correct += usize::from(first_error.is_none());
        report.dialogues.push(DialogueResult {
            name: d.name.clone(),
            n_actions: gold.len(),
            n_correct,
            first_error,
        });
    }
    if report.n_dialogues > 0 {
        report.accuracy = Some(report.n_fully_correct as f64 / report.n_dialogues as f64);
    }
    if report.actions.total > 0 {
        report.action_accuracy = Some(report.actions.correct as f64 / report.actions.total as f64);
    }
    Ok(report)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Variant {
    /// Cooperative hotel dialogues plus uncooperative hotel dialogues.
    D1,
    /// `D1` plus every restaurant dialogue.
    D2,
}

impl Variant {
    pub fn name(self) -> &'static str {
        match self {
            Variant::D1 => "d1",
            Variant::D2 => "d2",
        }
    }
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Variant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "d1" => Ok(Variant::D1),
            "d2" => Ok(Variant::D2),
            _ => Err(Error::InvalidConfig(format!("unknown variant `{s}` (expected d1 or d2)"))),
        }
    }
}

/// How the uncooperative hotel pool is generated and split.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PoolConfig {
    pub generated: usize,
    pub pool_size: usize,
    pub n_test: usize,
    pub max_user_turns: usize,
    pub generation_seed: u64,
    pub split_seed: u64,
}

impl Default for PoolConfig {
    fn default() -> Self {
        Self {
            generated: 120,
            pool_size: 108,
            n_test: 30,
            max_user_turns: DEFAULT_MAX_USER_TURNS,
            generation_seed: 0,
            split_seed: 1,
        }
    }
}

pub const DEFAULT_FRACTIONS: [usize; 7] = [0, 13, 26, 39, 52, 65, 78];

#[derive(Debug, Clone)]
pub struct ExperimentData {
    pub domain: DomainSpec,
    pub cooperative_hotel: Vec<Dialogue>,
    pub cooperative_restaurant: Vec<Dialogue>,
    pub uncooperative_restaurant: Vec<Dialogue>,
    pub hotel_train: Vec<Dialogue>,
    pub hotel_test: Vec<Dialogue>,
}

impl ExperimentData {
    pub fn build(pool: &PoolConfig) -> Result<Self> {
        let generated = generate_dialogues(
            &TaskSpec::hotel(),
            pool.generated,
            pool.max_user_turns,
            pool.generation_seed,
            &SlotValues::bundled(),
        )?;
        if generated.len() < pool.pool_size {
            return Err(Error::NotEnoughDialogues {
                requested: pool.pool_size,
                available: generated.len(),
            });
        }
        let unique = &generated[..pool.pool_size];
        let (hotel_train, hotel_test) = split(unique, pool.n_test, pool.split_seed)?;
        let hc = bundle::handcrafted_corpora()?;
        Ok(Self {
            domain: bundle::domain()?,
            cooperative_hotel: hc.cooperative_hotel,
            cooperative_restaurant: hc.cooperative_restaurant,
            uncooperative_restaurant: hc.uncooperative_restaurant,
            hotel_train,
            hotel_test,
        })
    }

    /// Training set with `fraction` uncooperative hotel dialogues.
    pub fn training_set(&self, variant: Variant, fraction: usize, seed: u64) -> Result<Vec<Dialogue>> {
        let mut out = self.cooperative_hotel.clone();
        out.extend(subsample(&self.hotel_train, fraction, seed)?);
        if variant == Variant::D2 {
            out.extend(self.cooperative_restaurant.iter().cloned());
            out.extend(self.uncooperative_restaurant.iter().cloned());
        }
        Ok(out)
    }
}

/// `k` dialogues drawn without replacement, in pool order.
pub fn subsample(pool: &[Dialogue], k: usize, seed: u64) -> Result<Vec<Dialogue>> {
    if k > pool.len() {
        return Err(Error::InvalidFraction {
            fraction: k,
            pool: pool.len(),
        });
    }
    let mut idx: Vec<usize> = (0..pool.len()).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(k as u64);
    idx.shuffle(&mut rng);
    let mut keep = idx[..k].to_vec();
    keep.sort_unstable();
    Ok(keep.into_iter().map(|i| pool[i].clone()).collect())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub fraction: usize,
    pub seed: u64,
    pub n_train: usize,
    pub epochs: usize,
    pub n_fully_correct: usize,
    pub n_test: usize,
    pub accuracy: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CurvePoint {
    /// Number of uncooperative hotel training dialogues.
    pub fraction: usize,
    pub mean: f64,
    /// Population standard deviation over runs.
    pub std: f64,
    pub runs: usize,
    pub records: Vec<RunRecord>,
}

impl CurvePoint {
    fn from_records(fraction: usize, records: Vec<RunRecord>) -> Self {
        let n = records.len() as f64;
        let mean = records.iter().map(|r| r.accuracy).sum::<f64>() / n;
        let var = records.iter().map(|r| (r.accuracy - mean).powi(2)).sum::<f64>() / n;
        Self {
            fraction,
            mean,
            std: var.sqrt(),
            runs: records.len(),
            records,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CurveSpec {
    pub variant: Variant,
    pub fractions: Vec<usize>,
    /// One training run per seed.
    pub seeds: Vec<u64>,
}

impl CurveSpec {
    pub fn new(variant: Variant, fractions: &[usize], runs: usize, base_seed: u64) -> Self {
        Self {
            variant,
            fractions: fractions.to_vec(),
            seeds: (0..runs as u64).map(|r| base_seed + r).collect(),
        }
    }

    fn validate(&self, data: &ExperimentData) -> Result<()> {
        if self.seeds.is_empty() {
            return Err(Error::InvalidConfig("runs must be at least 1".into()));
        }
        if let Some(&k) = self.fractions.iter().find(|&&k| k > data.hotel_train.len()) {
            return Err(Error::InvalidFraction {
                fraction: k,
                pool: data.hotel_train.len(),
            });
        }
        Ok(())
    }
}

/// One training run: subsample, train and evaluate on the fixed test set.
pub fn run_once(
    data: &ExperimentData,
    kind: PolicyKind,
    cfg: &PolicyConfig,
    variant: Variant,
    fraction: usize,
    seed: u64,
) -> Result<RunRecord> {
    let train = data.training_set(variant, fraction, seed)?;
    let (policy, log) = Policy::train(kind, &train, &data.domain, &cfg.with_seed(seed))?;
    let report = eval_accuracy(&policy, &data.hotel_test)?;
    Ok(RunRecord {
        fraction,
        seed,
        n_train: train.len(),
        epochs: log.epochs.len(),
        n_fully_correct: report.n_fully_correct,
        n_test: report.n_dialogues,
        accuracy: report.accuracy.unwrap_or(0.0),
    })
}

fn grid(spec: &CurveSpec) -> Vec<(usize, u64)> {
    spec.fractions
        .iter()
        .flat_map(|&k| spec.seeds.iter().map(move |&s| (k, s)))
        .collect()
}

fn collect_points(spec: &CurveSpec, records: Vec<RunRecord>) -> Vec<CurvePoint> {
    let runs = spec.seeds.len();
    records
        .chunks(runs)
        .zip(&spec.fractions)
        .map(|(r, &k)| CurvePoint::from_records(k, r.to_vec()))
        .collect()
}

/// Mean full-dialogue test accuracy per fraction. Runs execute on the
/// current rayon pool; results do not depend on its size.
pub fn learning_curve(
    data: &ExperimentData,
    kind: PolicyKind,
    cfg: &PolicyConfig,
    spec: &CurveSpec,
) -> Result<Vec<CurvePoint>> {
    spec.validate(data)?;
    let records = grid(spec)
        .par_iter()
        .map(|&(k, s)| run_once(data, kind, cfg, spec.variant, k, s))
        .collect::<Result<Vec<_>>>()?;
    Ok(collect_points(spec, records))
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AblationArm {
    pub name: String,
    pub use_user_attention: bool,
    pub use_system_attention: bool,
    pub history_rewrite: bool,
}

impl AblationArm {
    pub fn new(name: &str, user: bool, system: bool, rewrite: bool) -> Self {
        Self {
            name: name.to_string(),
            use_user_attention: user,
            use_system_attention: system,
            history_rewrite: rewrite,
        }
    }

    pub fn full() -> Self {
        Self::new("full", true, true, true)
    }

    pub fn no_attention() -> Self {
        Self::new("no_attention", false, false, false)
    }

    pub fn standard() -> Vec<Self> {
        vec![
            Self::full(),
            Self::new("no_user_attention", false, true, true),
            Self::new("no_system_attention", true, false, false),
            Self::new("no_history_rewrite", true, true, false),
            Self::no_attention(),
        ]
    }

    pub fn apply(&self, base: &RedpConfig) -> RedpConfig {
        RedpConfig {
            use_user_attention: self.use_user_attention,
            use_system_attention: self.use_system_attention,
            history_rewrite: self.history_rewrite,
            ..base.clone()
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationRow {
    pub arm: AblationArm,
    pub points: Vec<CurvePoint>,
}

/// REDP learning curves for each toggle combination.
pub fn ablation(
    data: &ExperimentData,
    arms: &[AblationArm],
    base: &PolicyConfig,
    spec: &CurveSpec,
) -> Result<Vec<AblationRow>> {
    spec.validate(data)?;
    let cells = grid(spec);
    let jobs: Vec<(usize, usize, u64)> = (0..arms.len())
        .flat_map(|a| cells.iter().map(move |&(k, s)| (a, k, s)))
        .collect();
    let records = jobs
        .par_iter()
        .map(|&(a, k, s)| {
            let cfg = PolicyConfig {
                redp: arms[a].apply(&base.redp),
                lstm: base.lstm.clone(),
            };
            run_once(data, PolicyKind::Redp, &cfg, spec.variant, k, s)
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(records
        .chunks(cells.len())
        .zip(arms)
        .map(|(r, arm)| AblationRow {
            arm: arm.clone(),
            points: collect_points(spec, r.to_vec()),
        })
        .collect())
}

/// Fixed-width table of curves, one column per labelled series.
pub fn format_curves(series: &[(String, Vec<CurvePoint>)]) -> String {
    let mut out = format!("{:>8}", "fraction");
    for (name, _) in series {
        let _ = write!(out, " {name:>20}");
    }
    out.push('\n');
    let Some((_, first)) = series.first() else {
        return out;
    };
    for (i, p) in first.iter().enumerate() {
        let _ = write!(out, "{:>8}", p.fraction);
        for (_, pts) in series {
            let q = &pts[i];
            let cell = format!("{:.3} ± {:.3}", q.mean, q.std);
            let _ = write!(out, " {cell:>20}");
        }
        out.push('\n');
    }
    out
}

pub const ATTENTION_SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AttentionRecord {
    pub schema_version: u32,
    pub step: usize,
    pub action: String,
    pub user_alignments: Vec<f64>,
    pub system_alignments: Vec<f64>,
}

/// One JSON record per line.
pub fn attention_jsonl(trace: &AttentionTrace) -> Result<String> {
    if trace.steps.is_empty() {
        return Err(Error::EmptyPrefix);
    }
    let mut out = String::new();
    for s in &trace.steps {
        let rec = AttentionRecord {
            schema_version: ATTENTION_SCHEMA_VERSION,
            step: s.step,
            action: s.action.clone(),
            user_alignments: s.user_alignments.clone(),
            system_alignments: s.system_alignments.clone(),
        };
        out.push_str(&serde_json::to_string(&rec).expect("record serialises"));
        out.push('\n');
    }
    Ok(out)
}

pub fn export_attention(trace: &AttentionTrace, path: &Path) -> Result<()> {
    let text = attention_jsonl(trace)?;
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

pub fn parse_attention(text: &str) -> Result<Vec<AttentionRecord>> {
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| {
            let rec: AttentionRecord = serde_json::from_str(l).map_err(|e| Error::MalformedDocument {
                line: i + 1,
                msg: e.to_string(),
            })?;
            if rec.schema_version != ATTENTION_SCHEMA_VERSION {
                return Err(Error::SchemaViolation(format!(
                    "attention schema version {} is not supported",
                    rec.schema_version
                )));
            }
            Ok(rec)
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::UserTurn;

    fn tiny_cfg() -> PolicyConfig {
        let mut cfg = PolicyConfig::default();
        cfg.redp.epochs = 2;
        cfg.lstm.epochs = 2;
        cfg
    }

    #[test]
    fn population_std() {
        let recs: Vec<RunRecord> = [0.5, 1.0, 1.0, 0.5]
            .iter()
            .map(|&a| RunRecord {
                fraction: 0,
                seed: 0,
                n_train: 1,
                epochs: 1,
                n_fully_correct: 0,
                n_test: 1,
                accuracy: a,
            })
            .collect();
        let p = CurvePoint::from_records(0, recs);
        assert_eq!(p.mean, 0.75);
        assert_eq!(p.std, 0.25);
        assert_eq!(p.runs, 4);
    }

    #[test]
    fn subsample_keeps_pool_order_and_bounds() {
        let pool: Vec<Dialogue> = (0..10).map(|i| Dialogue::new(format!("d{i}"))).collect();
        let s = subsample(&pool, 4, 7).unwrap();
        let idx: Vec<usize> = s.iter().map(|d| d.name[1..].parse().unwrap()).collect();
        assert!(idx.windows(2).all(|w| w[0] < w[1]));
        assert_eq!(subsample(&pool, 4, 7).unwrap(), s);
        assert_eq!(subsample(&pool, 10, 3).unwrap(), pool);
        assert!(subsample(&pool, 0, 3).unwrap().is_empty());
        assert!(matches!(
            subsample(&pool, 11, 3),
            Err(Error::InvalidFraction { fraction: 11, pool: 10 })
        ));
    }

    #[test]
    fn empty_test_set_is_na() {
        let domain = bundle::domain().unwrap();
        let p = Policy::new(PolicyKind::LstmBin, &domain, &tiny_cfg()).unwrap();
        let r = eval_accuracy(&p, &[]).unwrap();
        assert_eq!((r.n_dialogues, r.n_fully_correct, r.accuracy), (0, 0, None));
        assert_eq!(r.summary(), "0/0 fully correct (n/a)");
    }

    #[test]
    fn hotel_policy_rejects_restaurant_dialogue() {
        let hotel = bundle::hotel_domain().unwrap();
        let p = Policy::new(PolicyKind::Redp, &hotel, &tiny_cfg()).unwrap();
        let d = Dialogue::new("r")
            .user(UserTurn::new("request_restaurant"))
            .act("utter_greet");
        assert!(matches!(eval_accuracy(&p, &[d]), Err(Error::DomainMismatch(_))));
    }

    #[test]
    fn policy_kind_parse() {
        for k in PolicyKind::ALL {
            assert_eq!(k.name().parse::<PolicyKind>().unwrap(), k);
        }
        assert!("hcn".parse::<PolicyKind>().is_err());
        assert_eq!("d2".parse::<Variant>().unwrap(), Variant::D2);
    }

    #[test]
    fn checkpoint_dispatch() {
        let domain = bundle::domain().unwrap();
        for kind in PolicyKind::ALL {
            let p = Policy::new(kind, &domain, &tiny_cfg()).unwrap();
            let back = Policy::from_checkpoint(&p.to_checkpoint()).unwrap();
            assert_eq!(back.kind(), kind);
        }
    }

    #[test]
    fn empty_trace_is_an_error() {
        assert!(matches!(
            attention_jsonl(&AttentionTrace::default()),
            Err(Error::EmptyPrefix)
        ));
    }

    #[test]
    fn curve_table_layout() {
        let p = |m| CurvePoint {
            fraction: 13,
            mean: m,
            std: 0.0,
            runs: 1,
            records: vec![],
        };
        let t = format_curves(&[("redp".into(), vec![p(0.5)]), ("lstm".into(), vec![p(0.25)])]);
        let lines: Vec<&str> = t.lines().collect();
        assert_eq!(lines.len(), 2);
        assert!(lines[1].contains("0.500 ± 0.000") && lines[1].contains("0.250 ± 0.000"));
    }
}
