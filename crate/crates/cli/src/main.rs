use std::fs;
use std::io::{self, BufRead, BufReader, Write};
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use nerleak::attacks::{hill_climb_extract, mi_confidence_attack, neighbor_analysis, rank_attack, timing_attack};
use nerleak::corpus::{
    read_corpus, samples_for_label, split, synth_corpus, write_corpus, PhraseTemplate, SynthSpec, TemplateBank,
};
use nerleak::defenses::{calibrate_delta, defend_with_dummy, ConstantDelay, DelayPolicy, Frozen};
use nerleak::experiment::{self, ExperimentConfig};
use nerleak::nermodel::{LabelSet, ModelConfig, NerModel, Pipeline, TrainConfig};
use nerleak::secrets::{
    common_password_list, gen_feature_passwords, gen_passwords_with_strength, seeded, FeatureCombination,
    SecretKind, StrengthLevel,
};
use nerleak::subword::SubwordConfig;
use nerleak::vocab::{CostMode, CostModel};

#[derive(Parser)]
#[command(name = "nerleak", version, about = "Membership-inference and timing attacks on a sub-word NER tagger")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Print the prefix, suffix, norm and shape of each word as JSON lines.
    Features {
        words: Vec<String>,
        /// Also print the f-distance from every word to this one.
        #[arg(long)]
        against: Option<String>,
    },
    /// Emit newline-delimited secrets.
    Gen(GenArgs),
    #[command(subcommand)]
    Corpus(CorpusCommand),
    /// Train a tagger on an annotated corpus.
    Train(TrainArgs),
    #[command(subcommand)]
    Attack(AttackCommand),
    /// Apply a defense: dummy replacement of a corpus, or a padded and/or
    /// frozen model under a timing attack.
    Defend(DefendArgs),
    /// Run an experiment config and write its artifacts.
    Run {
        config: PathBuf,
        /// Output directory; defaults to `paths.outputs` of the config.
        #[arg(long)]
        out: Option<PathBuf>,
        /// Override a field, e.g. `--set sizes.repeats=5` or `--set seeds=[1,2]`.
        #[arg(long = "set", value_name = "KEY=VALUE")]
        overrides: Vec<String>,
    },
    /// Merge every run below a directory into one long-format CSV.
    Report {
        dir: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

#[derive(Args)]
struct GenArgs {
    /// password, credit-card, phone, ip, name, city, record-id, feature or common
    kind: String,
    #[arg(long, default_value_t = 10)]
    count: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Strength level 0..=4 for passwords.
    #[arg(long)]
    level: Option<u8>,
    /// Target password for `feature`.
    #[arg(long)]
    target: Option<String>,
    /// Shared features for `feature`, e.g. `prefix+shape`.
    #[arg(long)]
    combo: Option<String>,
}

#[derive(Subcommand)]
enum CorpusCommand {
    /// Generate a synthetic annotated corpus.
    Synth {
        /// `group=count`, repeatable.
        #[arg(long = "group", value_name = "NAME=COUNT", required = true)]
        groups: Vec<String>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        templates: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Shuffle and split a corpus into two files.
    Split {
        input: PathBuf,
        #[arg(long, default_value_t = 0.8)]
        fraction: f64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        first: PathBuf,
        #[arg(long)]
        second: PathBuf,
    },
    /// Replace the values of the given labels with generated dummies.
    Dummy {
        input: PathBuf,
        #[arg(long, value_delimiter = ',', required = true)]
        labels: Vec<String>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
}

#[derive(Args)]
struct TrainArgs {
    corpus: PathBuf,
    #[arg(long)]
    out: PathBuf,
    #[arg(long, value_delimiter = ',', default_value = "PERSON,LOCATION,CONTACT,ID,SECRET")]
    labels: Vec<String>,
    /// JSON model configuration.
    #[arg(long)]
    model_config: Option<PathBuf>,
    #[arg(long, default_value_t = 10)]
    epochs: usize,
    #[arg(long, default_value_t = 1)]
    batch_size: usize,
    #[arg(long, default_value_t = 0.05)]
    learning_rate: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Held-out corpus for per-epoch micro-F1.
    #[arg(long)]
    eval: Option<PathBuf>,
}

#[derive(Args)]
struct TemplateArgs {
    /// Phrase with one `◆` placeholder; defaults to the Alice phrase.
    #[arg(long)]
    template: Option<String>,
    #[arg(long, default_value = "SECRET")]
    label: String,
}

impl TemplateArgs {
    fn template(&self) -> Result<PhraseTemplate> {
        Ok(match &self.template {
            Some(t) => PhraseTemplate::bare(t.clone(), self.label.clone())?,
            None => PhraseTemplate::alice(),
        })
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum Mode {
    Simulated,
    WallClock,
}

impl From<Mode> for CostMode {
    fn from(m: Mode) -> Self {
        match m {
            Mode::Simulated => CostMode::Simulated,
            Mode::WallClock => CostMode::WallClock,
        }
    }
}

#[derive(Args)]
struct TimingArgs {
    #[arg(long)]
    model: PathBuf,
    /// Newline-delimited member words.
    #[arg(long)]
    members: PathBuf,
    /// Newline-delimited non-member words.
    #[arg(long)]
    nonmembers: PathBuf,
    #[arg(long, default_value_t = 3)]
    repeats: usize,
    #[arg(long, value_enum, default_value = "simulated")]
    mode: Mode,
    /// CSV of `word,truth,repeat,duration_ns,score`.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Subcommand)]
enum AttackCommand {
    /// Rank the target among candidates by span confidence.
    Rank {
        #[arg(long)]
        model: PathBuf,
        /// Newline-delimited candidates.
        #[arg(long)]
        candidates: PathBuf,
        #[arg(long)]
        target: String,
        #[command(flatten)]
        template: TemplateArgs,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Confidence-score membership inference on one label.
    Mi {
        #[arg(long)]
        model: PathBuf,
        /// Corpus whose spans of `label` are members.
        #[arg(long)]
        members: PathBuf,
        #[arg(long)]
        nonmembers: PathBuf,
        #[arg(long)]
        label: String,
        /// CSV of `text,truth,score`.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Single-word timing attack on the vocabulary.
    Timing(TimingArgs),
    /// Mean rank per f-distance bin.
    Neighbor {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        candidates: PathBuf,
        #[arg(long)]
        target: String,
        #[command(flatten)]
        template: TemplateArgs,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Greedy reconstruction of a secret of known length.
    Hillclimb {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        length: usize,
        #[arg(long, default_value_t = 2000)]
        budget: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[command(flatten)]
        template: TemplateArgs,
        /// CSV of `phase,candidate,score`.
        #[arg(long)]
        trace: Option<PathBuf>,
    },
}

#[derive(Args)]
struct DefendArgs {
    /// Padding delay for all-hit queries: `auto` or a number of units.
    #[arg(long)]
    delay: Option<String>,
    #[arg(long, default_value_t = 0.10)]
    trim: f64,
    #[arg(long)]
    freeze_vocab: bool,
    /// Labels whose values are replaced by dummies.
    #[arg(long, value_delimiter = ',')]
    dummy: Vec<String>,
    /// Corpus to defend with `--dummy`.
    #[arg(long)]
    corpus: Option<PathBuf>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    model: Option<PathBuf>,
    #[arg(long)]
    members: Option<PathBuf>,
    #[arg(long)]
    nonmembers: Option<PathBuf>,
    /// Non-members for `--delay auto`; otherwise the first half of
    /// `--nonmembers` is used for calibration and the rest for the attack.
    #[arg(long)]
    calibration: Option<PathBuf>,
    #[arg(long, default_value_t = 3)]
    repeats: usize,
    #[arg(long, value_enum, default_value = "simulated")]
    mode: Mode,
    /// Defended corpus (with `--dummy`) or timing CSV.
    #[arg(long)]
    out: Option<PathBuf>,
}

fn read_lines(path: &Path) -> Result<Vec<String>> {
    let f = fs::File::open(path).with_context(|| format!("opening {}", path.display()))?;
    let mut out = Vec::new();
    for line in BufReader::new(f).lines() {
        let line = line?;
        let line = line.trim_end_matches('\r');
        if !line.is_empty() {
            out.push(line.to_string());
        }
    }
    Ok(out)
}

fn load_model(path: &Path) -> Result<NerModel> {
    NerModel::load(path).with_context(|| format!("loading model {}", path.display()))
}

/// Writes to `path`, or to stdout when absent.
fn sink(path: Option<&Path>) -> Result<Box<dyn Write>> {
    Ok(match path {
        Some(p) => Box::new(io::BufWriter::new(
            fs::File::create(p).with_context(|| format!("creating {}", p.display()))?,
        )),
        None => Box::new(io::stdout().lock()),
    })
}

fn features(words: &[String], against: Option<&str>) -> Result<()> {
    let cfg = SubwordConfig::default();
    let mut out = io::stdout().lock();
    for w in words {
        let mut v = serde_json::to_value(cfg.features(w))?;
        v["word"] = w.clone().into();
        if let Some(a) = against {
            v["f_distance"] = cfg.f_distance(w, a).into();
        }
        writeln!(out, "{v}")?;
    }
    Ok(())
}

fn gen(a: &GenArgs) -> Result<()> {
    let mut rng = seeded(a.seed);
    let values: Vec<String> = match a.kind.as_str() {
        "common" => common_password_list().iter().take(a.count).map(|s| s.to_string()).collect(),
        "feature" => {
            let (Some(target), Some(combo)) = (&a.target, &a.combo) else {
                bail!("`gen feature` needs --target and --combo");
            };
            let combo = FeatureCombination::parse(combo)?;
            gen_feature_passwords(target, combo, a.count, &SubwordConfig::default(), &mut rng)?
        }
        "password" if a.level.is_some() => {
            gen_passwords_with_strength(StrengthLevel::new(a.level.unwrap_or(0))?, a.count, &mut rng)?
        }
        other => {
            let kind = SecretKind::parse(other)?;
            (0..a.count).map(|_| kind.generate(&mut rng)).collect()
        }
    };
    let mut out = io::stdout().lock();
    for v in values {
        writeln!(out, "{v}")?;
    }
    Ok(())
}

fn corpus(cmd: &CorpusCommand) -> Result<()> {
    match cmd {
        CorpusCommand::Synth { groups, seed, templates, out } => {
            let mut spec = Vec::new();
            for g in groups {
                let (name, n) = g.split_once('=').with_context(|| format!("expected NAME=COUNT, got {g:?}"))?;
                spec.push((name.to_string(), n.parse::<usize>().with_context(|| format!("bad count in {g:?}"))?));
            }
            let bank = match templates {
                Some(p) => TemplateBank::load(p)?,
                None => TemplateBank::default(),
            };
            let docs = synth_corpus(&SynthSpec::new(spec), &bank, &mut seeded(*seed))?;
            write_corpus(out, &docs)?;
            eprintln!("wrote {} documents to {}", docs.len(), out.display());
        }
        CorpusCommand::Split { input, fraction, seed, first, second } => {
            let docs = read_corpus(input)?;
            let (a, b) = split(&docs, *fraction, &mut seeded(*seed))?;
            write_corpus(first, &a)?;
            write_corpus(second, &b)?;
            eprintln!("split {} documents into {} and {}", docs.len(), a.len(), b.len());
        }
        CorpusCommand::Dummy { input, labels, seed, out } => {
            let docs = read_corpus(input)?;
            write_corpus(out, &defend_with_dummy(&docs, labels, &mut seeded(*seed))?)?;
        }
    }
    Ok(())
}

fn train(a: &TrainArgs) -> Result<()> {
    let docs = read_corpus(&a.corpus)?;
    let mut cfg: ModelConfig = match &a.model_config {
        Some(p) => serde_json::from_str(&fs::read_to_string(p)?).with_context(|| format!("parsing {}", p.display()))?,
        None => ModelConfig::default(),
    };
    cfg.seed = a.seed;
    let mut model = NerModel::new(cfg, LabelSet::new(a.labels.clone())?)?;
    let tc = TrainConfig {
        epochs: a.epochs,
        batch_size: a.batch_size,
        learning_rate: a.learning_rate,
        shuffle_seed: a.seed,
    };
    let eval = a.eval.as_ref().map(read_corpus).transpose()?;
    let log = model.train_with_eval(&docs, &tc, eval.as_deref())?;
    let mut out = io::stdout().lock();
    for e in &log.epochs {
        writeln!(out, "{}", serde_json::to_string(e)?)?;
    }
    model.save(&a.out)?;
    Ok(())
}

fn attack(cmd: &AttackCommand) -> Result<()> {
    match cmd {
        AttackCommand::Rank { model, candidates, target, template, out } => {
            let mut m = load_model(model)?;
            let cands = read_lines(candidates)?;
            let r = rank_attack(&mut m, &template.template()?, &cands, target)?;
            r.write_csv(&m.config().subword, sink(out.as_deref())?)?;
            eprintln!("rank {} rank0 {}", r.rank, r.rank0);
        }
        AttackCommand::Mi { model, members, nonmembers, label, out } => {
            let mut m = load_model(model)?;
            let mq = samples_for_label(&read_corpus(members)?, label);
            let nq = samples_for_label(&read_corpus(nonmembers)?, label);
            let r = mi_confidence_attack(&mut m, &mq, &nq)?;
            let mut w = csv::Writer::from_writer(sink(out.as_deref())?);
            w.write_record(["text", "truth", "score"])?;
            for s in &r.samples {
                w.write_record([s.text.as_str(), s.truth.name(), &s.score.to_string()])?;
            }
            w.flush()?;
            eprintln!("auc {}", r.auc);
        }
        AttackCommand::Timing(t) => {
            let mut m = load_model(&t.model)?;
            set_mode(&mut m, t.mode);
            let run = timing_attack(&mut m, &read_lines(&t.members)?, &read_lines(&t.nonmembers)?, t.repeats, t.mode.into())?;
            run.write_csv(sink(t.out.as_deref())?)?;
            for r in &run.per_repeat {
                eprintln!("repeat {} auc {}", r.repeat, r.auc);
            }
        }
        AttackCommand::Neighbor { model, candidates, target, template, out } => {
            let mut m = load_model(model)?;
            let cfg = m.config().subword;
            let table = neighbor_analysis(&mut m, &template.template()?, target, &read_lines(candidates)?, &cfg)?;
            table.write_csv(sink(out.as_deref())?)?;
            if let Some(rho) = table.spearman() {
                eprintln!("spearman {rho}");
            }
        }
        AttackCommand::Hillclimb { model, length, budget, seed, template, trace } => {
            let mut m = load_model(model)?;
            let cfg = m.config().subword;
            let r = hill_climb_extract(&mut m, &template.template()?, *length, *budget, &cfg, &mut seeded(*seed))?;
            if let Some(p) = trace {
                let mut w = csv::Writer::from_path(p)?;
                w.write_record(["phase", "candidate", "score"])?;
                for s in &r.trace {
                    w.write_record([serde_json::to_value(s.phase)?.as_str().unwrap_or_default(), &s.candidate, &s.score.to_string()])?;
                }
                w.flush()?;
            }
            println!("{}", serde_json::json!({"best": r.best, "score": r.best_score, "shape": r.shape, "queries": r.trace.len()}));
        }
    }
    Ok(())
}

fn set_mode(m: &mut NerModel, mode: Mode) {
    let cost = match mode {
        Mode::Simulated => CostModel::default(),
        Mode::WallClock => CostModel::wall_clock(),
    };
    m.vocab_mut().set_cost_model(cost);
}

fn defend(a: &DefendArgs) -> Result<()> {
    if !a.dummy.is_empty() {
        let (Some(corpus), Some(out)) = (&a.corpus, &a.out) else {
            bail!("--dummy needs --corpus and --out");
        };
        let docs = read_corpus(corpus)?;
        write_corpus(out, &defend_with_dummy(&docs, &a.dummy, &mut seeded(a.seed))?)?;
        return Ok(());
    }
    if a.delay.is_none() && !a.freeze_vocab {
        bail!("nothing to do: pass --dummy, --delay or --freeze-vocab");
    }
    let (Some(model), Some(members), Some(nonmembers)) = (&a.model, &a.members, &a.nonmembers) else {
        bail!("--delay and --freeze-vocab need --model, --members and --nonmembers");
    };
    let mut m = load_model(model)?;
    set_mode(&mut m, a.mode);
    let members = read_lines(members)?;
    let mut nonmembers = read_lines(nonmembers)?;
    let delta = match a.delay.as_deref() {
        None => 0.0,
        Some("auto") => {
            let calibration = match &a.calibration {
                Some(p) => read_lines(p)?,
                None => {
                    let rest = nonmembers.split_off(nonmembers.len() / 2);
                    std::mem::replace(&mut nonmembers, rest)
                }
            };
            let cal_members: Vec<String> = members.iter().cycle().take(calibration.len()).cloned().collect();
            calibrate_delta(&mut m, &cal_members, &calibration, a.trim, a.mode.into())?
        }
        Some(v) => v.parse().with_context(|| format!("--delay expects `auto` or a number, got {v:?}"))?,
    };
    let members: Vec<String> = members.iter().cycle().take(nonmembers.len()).cloned().collect();
    let padded = ConstantDelay::new(m, DelayPolicy { delta, trim_fraction: a.trim })?;
    let mut pipeline: Box<dyn Pipeline> = if a.freeze_vocab { Box::new(Frozen::new(padded)) } else { Box::new(padded) };
    let run = timing_attack(pipeline.as_mut(), &members, &nonmembers, a.repeats, a.mode.into())?;
    run.write_csv(sink(a.out.as_deref())?)?;
    eprintln!("delta {delta}");
    for r in &run.per_repeat {
        eprintln!("repeat {} auc {}", r.repeat, r.auc);
    }
    Ok(())
}

/// Applies `a.b.c=value` to a JSON object; the value is parsed as JSON
/// when possible and taken as a string otherwise.
fn apply_override(root: &mut serde_json::Value, spec: &str) -> Result<()> {
    let (key, raw) = spec.split_once('=').with_context(|| format!("expected KEY=VALUE, got {spec:?}"))?;
    let value = serde_json::from_str(raw).unwrap_or_else(|_| serde_json::Value::String(raw.to_string()));
    let mut node = root;
    let parts: Vec<&str> = key.split('.').collect();
    for (i, part) in parts.iter().enumerate() {
        let obj = node
            .as_object_mut()
            .with_context(|| format!("cannot set {key}: {part:?} is inside a non-object"))?;
        if i + 1 == parts.len() {
            obj.insert(part.to_string(), value);
            return Ok(());
        }
        node = obj.entry(part.to_string()).or_insert_with(|| serde_json::json!({}));
    }
    unreachable!("split always yields at least one part")
}

fn run(config: &Path, out: Option<&Path>, overrides: &[String]) -> Result<()> {
    let text = fs::read_to_string(config).with_context(|| format!("reading {}", config.display()))?;
    let mut value: serde_json::Value = serde_json::from_str(&text)?;
    for o in overrides {
        apply_override(&mut value, o)?;
    }
    let cfg = ExperimentConfig::from_json(&value.to_string()).with_context(|| format!("invalid config {}", config.display()))?;
    let dir = match (out, &cfg.paths.outputs) {
        (Some(o), _) => o.to_path_buf(),
        (None, Some(o)) => o.clone(),
        (None, None) => bail!("no output directory: pass --out or set paths.outputs"),
    };
    let result = experiment::run(&cfg, &dir)?;
    for f in &result.files {
        eprintln!("wrote {}", f.display());
    }
    println!("{}", result.manifest_sha256);
    Ok(())
}

fn main() -> Result<()> {
    let cli = Cli::parse();
    match &cli.command {
        Command::Features { words, against } => features(words, against.as_deref()),
        Command::Gen(a) => gen(a),
        Command::Corpus(c) => corpus(c),
        Command::Train(a) => train(a),
        Command::Attack(c) => attack(c),
        Command::Defend(a) => defend(a),
        Command::Run { config, out, overrides } => run(config, out.as_deref(), overrides),
        Command::Report { dir, out } => {
            let table = experiment::report(dir)?;
            sink(out.as_deref())?.write_all(table.as_bytes())?;
            Ok(())
        }
    }
}
