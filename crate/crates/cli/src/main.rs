mod chat;
mod manifest;

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use redp_autodiff::Checkpoint;
use redp_core::corpus::{parse_domain, parse_stories, serialize_stories, Dialogue, DomainSpec};
use redp_core::harness::babi::{babi_ingest, synthesize_task5, TemplateInventory};
use redp_core::harness::{
    self, ablation, eval_accuracy, format_curves, learning_curve, AblationArm, CurveSpec,
    ExperimentData, Policy, PolicyConfig, PolicyKind, PoolConfig, Variant,
};
use redp_core::simuser::{generate_dialogues, Domain, SlotValues, TaskSpec, DEFAULT_MAX_USER_TURNS};
use redp_core::{bundle, Error};
use serde_json::json;

use manifest::Run;

const EXIT_USAGE: u8 = 2;
const EXIT_IO: u8 = 3;
const EXIT_NUMERIC: u8 = 4;

#[derive(Debug)]
pub struct Failure {
    pub code: u8,
    pub message: String,
}

impl Failure {
    pub fn io(path: &Path, e: std::io::Error) -> Self {
        Self {
            code: EXIT_IO,
            message: format!("{}: {e}", path.display()),
        }
    }

    fn usage(message: impl Into<String>) -> Self {
        Self {
            code: EXIT_USAGE,
            message: message.into(),
        }
    }
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        let code = match &e {
            Error::InvalidConfig(_)
            | Error::InvalidFraction { .. }
            | Error::NotEnoughDialogues { .. }
            | Error::EmptyTrainingSet => EXIT_USAGE,
            Error::Divergence { .. } | Error::Autodiff(_) => EXIT_NUMERIC,
            _ => EXIT_IO,
        };
        Self {
            code,
            message: e.to_string(),
        }
    }
}

#[derive(Parser)]
#[command(name = "redp", version, about = "Embedding dialogue policies: data, training, experiments")]
struct Cli {
    /// Worker threads for experiments (default: available processors).
    #[arg(long, global = true)]
    jobs: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Simulate dialogues, export the bundled corpora, or write a bAbI task-5 file.
    Generate(GenerateArgs),
    /// Train a policy on story files.
    Train(TrainArgs),
    /// Teacher-forced evaluation of a checkpoint.
    Eval(EvalArgs),
    /// Learning curve over the uncooperative hotel pool.
    Curve(CurveArgs),
    /// REDP learning curves with attention components switched off.
    Ablate(AblateArgs),
    /// Convert a bAbI task-5 dialog file to stories.
    Babi(BabiArgs),
    /// Write per-step attention alignments of a REDP checkpoint.
    ExportAttention(ExportArgs),
    /// Talk to a trained policy in the terminal.
    Chat(ChatArgs),
}

#[derive(Args)]
struct SeedArg {
    #[arg(long, env = "REDP_SEED", default_value_t = 0)]
    seed: u64,
}

#[derive(Args)]
struct GenerateArgs {
    /// hotel or restaurant.
    #[arg(long, required_unless_present_any = ["handcrafted", "babi_task5"])]
    domain: Option<Domain>,
    #[arg(long, default_value_t = 120)]
    n: usize,
    #[arg(long, default_value_t = DEFAULT_MAX_USER_TURNS)]
    max_user_turns: usize,
    #[command(flatten)]
    seed: SeedArg,
    /// Write the bundled hand-crafted corpora into the `--out` directory.
    #[arg(long, conflicts_with_all = ["domain", "babi_task5"])]
    handcrafted: bool,
    /// Write synthetic dialogues in the bAbI task-5 line format.
    #[arg(long, conflicts_with = "domain")]
    babi_task5: bool,
    /// Let a trained policy label the simulated dialogues first and report
    /// how many of its actions the oracle overwrote.
    #[arg(long, requires = "domain")]
    bootstrap: Option<PathBuf>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct ExperimentArgs {
    /// Policy hyperparameters as a JSON object with `redp` and `lstm` sections.
    #[arg(long)]
    config: Option<PathBuf>,
    #[command(flatten)]
    seed: SeedArg,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct TrainArgs {
    #[arg(long)]
    policy: PolicyKind,
    #[arg(long, num_args = 1.., required = true)]
    data: Vec<PathBuf>,
    /// Domain file; the bundled hotel+restaurant domain when omitted.
    #[arg(long)]
    domain: Option<PathBuf>,
    #[arg(long)]
    epochs: Option<usize>,
    #[command(flatten)]
    common: ExperimentArgs,
}

#[derive(Args)]
struct EvalArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    #[arg(long, num_args = 1.., required = true)]
    data: Vec<PathBuf>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct CurveFlags {
    #[arg(long, default_value = "d1")]
    variant: Variant,
    #[arg(long, value_delimiter = ',', default_values_t = harness::DEFAULT_FRACTIONS)]
    fractions: Vec<usize>,
    #[arg(long)]
    epochs: Option<usize>,
    /// Pool construction overrides as a JSON object.
    #[arg(long)]
    pool: Option<PathBuf>,
}

#[derive(Args)]
struct CurveArgs {
    #[arg(long)]
    policy: PolicyKind,
    #[arg(long, default_value_t = 5)]
    runs: usize,
    #[command(flatten)]
    curve: CurveFlags,
    #[command(flatten)]
    common: ExperimentArgs,
}

#[derive(Args)]
struct AblateArgs {
    /// Arms to run (default: all standard arms).
    #[arg(long, value_delimiter = ',')]
    arms: Vec<String>,
    #[arg(long, default_value_t = 3)]
    runs: usize,
    #[command(flatten)]
    curve: CurveFlags,
    #[command(flatten)]
    common: ExperimentArgs,
}

#[derive(Args)]
struct BabiArgs {
    #[arg(long)]
    task5: PathBuf,
    /// Template inventory; the bundled task-5 inventory when omitted.
    #[arg(long)]
    templates: Option<PathBuf>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct ExportArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    #[arg(long)]
    data: PathBuf,
    /// Only export this dialogue.
    #[arg(long)]
    dialogue: Option<String>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct ChatArgs {
    #[arg(long)]
    checkpoint: PathBuf,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    if let Some(n) = cli.jobs {
        if n == 0 {
            eprintln!("error: --jobs must be at least 1");
            return ExitCode::from(EXIT_USAGE);
        }
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n).build_global() {
            eprintln!("error: {e}");
            return ExitCode::from(EXIT_USAGE);
        }
    }
    let result = match cli.command {
        Command::Generate(a) => cmd_generate(a),
        Command::Train(a) => cmd_train(a),
        Command::Eval(a) => cmd_eval(a),
        Command::Curve(a) => cmd_curve(a),
        Command::Ablate(a) => cmd_ablate(a),
        Command::Babi(a) => cmd_babi(a),
        Command::ExportAttention(a) => cmd_export_attention(a),
        Command::Chat(a) => chat::run(&a.checkpoint),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {}", f.message);
            ExitCode::from(f.code)
        }
    }
}

fn manifest_beside(path: &Path) -> PathBuf {
    let mut name = path.file_name().unwrap_or_default().to_os_string();
    name.push(".manifest.json");
    path.with_file_name(name)
}

fn cmd_generate(a: GenerateArgs) -> Result<(), Failure> {
    let mut run = Run::new("generate");
    run.seeds = vec![a.seed.seed];
    if a.handcrafted {
        run.config = json!({ "handcrafted": true });
        for (name, _) in bundle::FILES {
            run.write(&a.out.join(name), bundle::file(name)?)?;
        }
        return run.finish(&a.out.join("manifest.json"));
    }
    let text = if a.babi_task5 {
        run.config = json!({ "babi_task5": true, "n": a.n });
        synthesize_task5(a.n, a.seed.seed, &TemplateInventory::task5()?)
    } else {
        let domain = a.domain.expect("clap enforces --domain");
        run.config = json!({
            "domain": domain.name(),
            "n": a.n,
            "max_user_turns": a.max_user_turns,
        });
        let ds = generate_dialogues(
            &TaskSpec::new(domain),
            a.n,
            a.max_user_turns,
            a.seed.seed,
            &SlotValues::bundled(),
        )?;
        if let Some(path) = &a.bootstrap {
            let policy = load_checkpoint(&mut run, path)?;
            let report = eval_accuracy(&policy, &ds)?;
            let fixed = report.actions.total - report.actions.correct;
            println!("{fixed} of {} action labels corrected by the oracle", report.actions.total);
            run.config["bootstrap"] = json!({ "checkpoint": path.display().to_string(), "corrected": fixed });
        }
        serialize_stories(&ds)
    };
    run.write(&a.out, &text)?;
    run.finish(&manifest_beside(&a.out))
}

fn load_config(run: &mut Run, path: Option<&Path>) -> Result<PolicyConfig, Failure> {
    let Some(path) = path else {
        return Ok(PolicyConfig::default());
    };
    let text = run.read(path)?;
    serde_json::from_str(&text)
        .map_err(|e| Failure::usage(format!("config {}: {e}", path.display())))
}

fn load_domain(run: &mut Run, path: Option<&Path>) -> Result<DomainSpec, Failure> {
    match path {
        Some(p) => Ok(parse_domain(&run.read(p)?)?),
        None => Ok(bundle::domain()?),
    }
}

fn load_stories(run: &mut Run, paths: &[PathBuf], domain: &DomainSpec) -> Result<Vec<Dialogue>, Failure> {
    let mut out = Vec::new();
    for p in paths {
        let text = run.read(p)?;
        out.extend(parse_stories(&text, domain).map_err(|e| Failure {
            code: EXIT_IO,
            message: format!("{}: {e}", p.display()),
        })?);
    }
    Ok(out)
}

fn load_checkpoint(run: &mut Run, path: &Path) -> Result<Policy, Failure> {
    let ckpt = Checkpoint::from_json(&run.read(path)?).map_err(Error::from)?;
    Ok(Policy::from_checkpoint(&ckpt)?)
}

fn with_epochs(mut cfg: PolicyConfig, epochs: Option<usize>) -> PolicyConfig {
    if let Some(e) = epochs {
        cfg.redp.epochs = e;
        cfg.lstm.epochs = e;
    }
    cfg
}

fn jsonl<T: serde::Serialize>(records: impl IntoIterator<Item = T>) -> String {
    records
        .into_iter()
        .map(|r| serde_json::to_string(&r).expect("record serialises") + "\n")
        .collect()
}

fn cmd_train(a: TrainArgs) -> Result<(), Failure> {
    let mut run = Run::new("train");
    let cfg = load_config(&mut run, a.common.config.as_deref())?;
    let cfg = with_epochs(cfg, a.epochs).with_seed(a.common.seed.seed);
    let domain = load_domain(&mut run, a.domain.as_deref())?;
    let data = load_stories(&mut run, &a.data, &domain)?;
    run.seeds = vec![a.common.seed.seed];
    run.config = json!({ "policy": a.policy, "policy_config": cfg });
    let (policy, log) = Policy::train(a.policy, &data, &domain, &cfg)?;
    let ckpt = policy.to_checkpoint();
    run.formats.insert("checkpoint", ckpt.format_version);
    run.write(&a.common.out.join("checkpoint.json"), &ckpt.to_json())?;
    run.write(&a.common.out.join("train_log.jsonl"), &jsonl(&log.epochs))?;
    let last = log.last().expect("at least one epoch");
    println!(
        "{}: {} epochs, training action accuracy {:.4}{}",
        a.policy,
        log.epochs.len(),
        last.action_accuracy,
        if log.stopped_early { " (stopped early)" } else { "" }
    );
    run.finish(&a.common.out.join("manifest.json"))
}

fn cmd_eval(a: EvalArgs) -> Result<(), Failure> {
    let mut run = Run::new("eval");
    let policy = load_checkpoint(&mut run, &a.checkpoint)?;
    let data = load_stories(&mut run, &a.data, policy.domain())?;
    run.seeds = vec![policy.seed()];
    run.config = json!({ "policy": policy.kind() });
    let report = eval_accuracy(&policy, &data)?;
    let text = serde_json::to_string_pretty(&report).expect("report serialises") + "\n";
    run.write(&a.out.join("report.json"), &text)?;
    println!("{}/{}", report.n_fully_correct, report.n_dialogues);
    println!("{}", report.summary());
    run.finish(&a.out.join("manifest.json"))
}

fn experiment_setup(
    run: &mut Run,
    flags: &CurveFlags,
    common: &ExperimentArgs,
    runs: usize,
) -> Result<(ExperimentData, PolicyConfig, CurveSpec), Failure> {
    let cfg = with_epochs(load_config(run, common.config.as_deref())?, flags.epochs);
    let pool: PoolConfig = match &flags.pool {
        Some(p) => serde_json::from_str(&run.read(p)?)
            .map_err(|e| Failure::usage(format!("pool config {}: {e}", p.display())))?,
        None => PoolConfig::default(),
    };
    if runs == 0 {
        return Err(Failure::usage("--runs must be at least 1"));
    }
    let spec = CurveSpec::new(flags.variant, &flags.fractions, runs, common.seed.seed);
    run.seeds = spec.seeds.clone();
    run.config = json!({ "policy_config": cfg, "pool": pool, "curve": spec });
    Ok((ExperimentData::build(&pool)?, cfg, spec))
}

fn cmd_curve(a: CurveArgs) -> Result<(), Failure> {
    let mut run = Run::new("curve");
    let (data, cfg, spec) = experiment_setup(&mut run, &a.curve, &a.common, a.runs)?;
    run.config["policy"] = json!(a.policy);
    let points = learning_curve(&data, a.policy, &cfg, &spec)?;
    let records = points.iter().map(|p| {
        json!({ "policy": a.policy, "variant": spec.variant, "point": p })
    });
    run.write(&a.common.out.join("curve.jsonl"), &jsonl(records))?;
    print!("{}", format_curves(&[(a.policy.to_string(), points)]));
    run.finish(&a.common.out.join("manifest.json"))
}

fn cmd_ablate(a: AblateArgs) -> Result<(), Failure> {
    let mut run = Run::new("ablate");
    let standard = AblationArm::standard();
    let arms: Vec<AblationArm> = if a.arms.is_empty() {
        standard
    } else {
        a.arms
            .iter()
            .map(|n| {
                standard.iter().find(|s| &s.name == n).cloned().ok_or_else(|| {
                    let names: Vec<&str> = standard.iter().map(|s| s.name.as_str()).collect();
                    Failure::usage(format!("unknown arm `{n}` (valid arms: {})", names.join(", ")))
                })
            })
            .collect::<Result<_, _>>()?
    };
    let (data, cfg, spec) = experiment_setup(&mut run, &a.curve, &a.common, a.runs)?;
    run.config["arms"] = json!(arms);
    let rows = ablation(&data, &arms, &cfg, &spec)?;
    let records = rows.iter().flat_map(|r| {
        r.points
            .iter()
            .map(|p| json!({ "arm": r.arm, "variant": spec.variant, "point": p }))
    });
    run.write(&a.common.out.join("ablation.jsonl"), &jsonl(records))?;
    let series: Vec<(String, _)> = rows.into_iter().map(|r| (r.arm.name, r.points)).collect();
    print!("{}", format_curves(&series));
    run.finish(&a.common.out.join("manifest.json"))
}

fn cmd_babi(a: BabiArgs) -> Result<(), Failure> {
    let mut run = Run::new("babi");
    let inv = match &a.templates {
        Some(p) => TemplateInventory::from_json(&run.read(p)?)?,
        None => TemplateInventory::task5()?,
    };
    let text = run.read(&a.task5)?;
    let (domain, dialogues) = babi_ingest(&text, &inv)?;
    run.config = json!({ "task": 5, "dialogues": dialogues.len() });
    run.write(&a.out.join("domain.json"), &(domain.to_json() + "\n"))?;
    run.write(&a.out.join("dialogues.stories"), &serialize_stories(&dialogues))?;
    println!("{} dialogues, {} intents, {} actions", dialogues.len(), domain.intents.len(), domain.actions.len());
    run.finish(&a.out.join("manifest.json"))
}

fn cmd_export_attention(a: ExportArgs) -> Result<(), Failure> {
    let mut run = Run::new("export-attention");
    let Policy::Redp(model) = load_checkpoint(&mut run, &a.checkpoint)? else {
        return Err(Failure::usage("attention export needs a redp checkpoint"));
    };
    let data = load_stories(&mut run, std::slice::from_ref(&a.data), &model.domain)?;
    let selected: Vec<&Dialogue> = match &a.dialogue {
        Some(name) => data.iter().filter(|d| &d.name == name).collect(),
        None => data.iter().collect(),
    };
    if selected.is_empty() {
        return Err(Failure::usage("no dialogue selected"));
    }
    run.seeds = vec![model.config.seed];
    run.config = json!({ "dialogue": a.dialogue });
    run.formats.insert("attention", harness::ATTENTION_SCHEMA_VERSION);
    for d in selected {
        let trace = model.predict_dialogue(&redp_core::corpus::expand_listen(d)?)?;
        let text = harness::attention_jsonl(&trace)?;
        let stem: String = d
            .name
            .chars()
            .map(|c| if c.is_ascii_alphanumeric() || c == '-' { c } else { '_' })
            .collect();
        run.write(&a.out.join(format!("{stem}.attention.jsonl")), &text)?;
    }
    run.finish(&a.out.join("manifest.json"))
}
