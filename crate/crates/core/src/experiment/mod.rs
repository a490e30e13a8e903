//! Declarative experiments: a JSON config names one experiment kind, `run`
//! executes it and writes a manifest, CSV tables and a summary, and
//! `report` merges the summaries of many runs into one long-format table.

mod runners;

use std::collections::BTreeMap;
use std::fmt;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::corpus::SynthSpec;
use crate::error::{Error, Result};
use crate::nermodel::{ModelConfig, TrainConfig};
use crate::vocab::{CostMode, CostModel};

pub use runners::{
    dummy_defense, memorize_sweep, mi_experiment, neighbor_experiment, secret_types, strength_sweep,
    timing_defense, timing_experiment, DummyOutcome, EpochAuc, MemorizeOutcome, MemorizeRecord, MiOutcome,
    MiRun, NeighborOutcome, StrengthOutcome, TimingOutcome, TimingSeedRun,
};

/// Labels every experiment model is trained with.
pub const DEFAULT_LABELS: [&str; 5] = ["PERSON", "LOCATION", "CONTACT", "ID", "SECRET"];

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ExperimentKind {
    MemorizeSweep,
    StrengthSweep,
    SecretTypes,
    Neighbor,
    MiEntities,
    /// Membership inference on a secret that appears in `n` training documents.
    MiSecret(usize),
    MiUnknownPhrase,
    Timing,
    TimingDefense,
    DummyDefense,
}

impl ExperimentKind {
    pub fn parse(s: &str) -> Result<Self> {
        Ok(match s {
            "memorize-sweep" => ExperimentKind::MemorizeSweep,
            "strength-sweep" => ExperimentKind::StrengthSweep,
            "secret-types" => ExperimentKind::SecretTypes,
            "neighbor" => ExperimentKind::Neighbor,
            "mi-entities" => ExperimentKind::MiEntities,
            "mi-unknown-phrase" => ExperimentKind::MiUnknownPhrase,
            "timing" => ExperimentKind::Timing,
            "timing-defense" => ExperimentKind::TimingDefense,
            "dummy-defense" => ExperimentKind::DummyDefense,
            other => match other.strip_prefix("mi-secret-").and_then(|n| n.parse().ok()) {
                Some(n) if n > 0 => ExperimentKind::MiSecret(n),
                _ => return Err(Error::InvalidConfig(format!("unknown experiment kind {other:?}"))),
            },
        })
    }

    fn is_mi(self) -> bool {
        matches!(
            self,
            ExperimentKind::MiEntities
                | ExperimentKind::MiSecret(_)
                | ExperimentKind::MiUnknownPhrase
                | ExperimentKind::DummyDefense
        )
    }

    fn is_timing(self) -> bool {
        matches!(self, ExperimentKind::Timing | ExperimentKind::TimingDefense)
    }
}

impl fmt::Display for ExperimentKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            ExperimentKind::MemorizeSweep => "memorize-sweep",
            ExperimentKind::StrengthSweep => "strength-sweep",
            ExperimentKind::SecretTypes => "secret-types",
            ExperimentKind::Neighbor => "neighbor",
            ExperimentKind::MiEntities => "mi-entities",
            ExperimentKind::MiSecret(n) => return write!(f, "mi-secret-{n}"),
            ExperimentKind::MiUnknownPhrase => "mi-unknown-phrase",
            ExperimentKind::Timing => "timing",
            ExperimentKind::TimingDefense => "timing-defense",
            ExperimentKind::DummyDefense => "dummy-defense",
        };
        f.write_str(s)
    }
}

impl Serialize for ExperimentKind {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for ExperimentKind {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        ExperimentKind::parse(&s).map_err(serde::de::Error::custom)
    }
}

/// Counts that shape an experiment. Fields irrelevant to a kind are ignored.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Sizes {
    /// Targets per seed (and per strength level).
    pub targets: usize,
    /// Candidate set size, target included.
    pub candidates: usize,
    /// Copies of the secret phrase to compare.
    pub insertions: Vec<usize>,
    pub repeats: usize,
    /// Member documents (MI) or member words (timing).
    pub members: usize,
    pub nonmembers: usize,
    pub feature_passwords: usize,
    pub levels: Vec<u8>,
    /// Minimum length of the neighbor-analysis target.
    pub target_length: usize,
}

impl Default for Sizes {
    fn default() -> Self {
        Sizes {
            targets: 10,
            candidates: 200,
            insertions: vec![1, 4],
            repeats: 3,
            members: 150,
            nonmembers: 150,
            feature_passwords: 5000,
            levels: vec![0, 1, 2, 3, 4],
            target_length: 8,
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Paths {
    /// Background corpus used instead of a synthetic one.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub corpus: Option<PathBuf>,
    /// Trained model for timing kinds; member words then come from `corpus`.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub model: Option<PathBuf>,
    /// Vocabulary a freshly trained timing model starts from.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub vocab: Option<PathBuf>,
    /// Default output directory for the command-line `run`.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub outputs: Option<PathBuf>,
    /// Template bank replacing the bundled one.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub templates: Option<PathBuf>,
}

/// One experiment. Optional fields get kind-specific defaults from
/// [`ExperimentConfig::resolved`]; the resolved form is what the manifest
/// records.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub kind: ExperimentKind,
    /// Defaults to eight seeds for membership inference and one otherwise.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub seeds: Vec<u64>,
    #[serde(default)]
    pub sizes: Sizes,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub model: Option<ModelConfig>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub train: Option<TrainConfig>,
    #[serde(default)]
    pub cost: CostModel,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub background: Option<SynthSpec>,
    /// Entity label under attack (MI kinds).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub label: Option<String>,
    /// Template group for member and non-member documents.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub group: Option<String>,
    /// Template group the attacker queries with, when it differs from `group`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub query_group: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub secret_kinds: Option<Vec<String>>,
    /// Padding delay; calibrated from the data when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub delay: Option<f64>,
    #[serde(default = "default_trim")]
    pub trim_fraction: f64,
    #[serde(default)]
    pub freeze_vocab: bool,
    #[serde(default)]
    pub paths: Paths,
}

fn default_trim() -> f64 {
    0.10
}

impl ExperimentConfig {
    pub fn new(kind: ExperimentKind) -> Self {
        ExperimentConfig {
            kind,
            seeds: Vec::new(),
            sizes: Sizes::default(),
            model: None,
            train: None,
            cost: CostModel::default(),
            background: None,
            label: None,
            group: None,
            query_group: None,
            secret_kinds: None,
            delay: None,
            trim_fraction: default_trim(),
            freeze_vocab: false,
            paths: Paths::default(),
        }
    }

    pub fn from_json(json: &str) -> Result<Self> {
        let cfg: ExperimentConfig = serde_json::from_str(json)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_json(&fs::read_to_string(path)?)
    }

    pub fn validate(&self) -> Result<()> {
        let s = &self.sizes;
        if s.targets == 0 || s.candidates < 2 || s.repeats == 0 || s.members == 0 || s.nonmembers == 0 {
            return Err(Error::InvalidConfig(
                "targets, repeats, members and nonmembers must be positive and candidates at least 2".into(),
            ));
        }
        if s.targets > s.candidates {
            return Err(Error::InvalidConfig("targets cannot exceed candidates".into()));
        }
        if s.insertions.is_empty() || s.insertions.contains(&0) {
            return Err(Error::InvalidConfig("insertions must be a non-empty list of positive counts".into()));
        }
        if s.levels.iter().any(|&l| l > 4) {
            return Err(Error::InvalidConfig("strength levels range over 0..=4".into()));
        }
        if !(0.0..0.5).contains(&self.trim_fraction) {
            return Err(Error::InvalidConfig(format!("trim fraction {} outside [0, 0.5)", self.trim_fraction)));
        }
        if let Some(d) = self.delay {
            if !(d >= 0.0 && d.is_finite()) {
                return Err(Error::InvalidConfig(format!("delay {d} must be finite and >= 0")));
            }
        }
        if let Some(m) = &self.model {
            m.validate()?;
        }
        if let Some(t) = &self.train {
            t.validate()?;
        }
        self.cost.validate()
    }

    /// Checks that every referenced input path exists.
    pub fn check_paths(&self) -> Result<()> {
        for p in [&self.paths.corpus, &self.paths.model, &self.paths.vocab, &self.paths.templates].into_iter().flatten() {
            if !p.exists() {
                return Err(Error::InvalidConfig(format!("path {} does not exist", p.display())));
            }
        }
        Ok(())
    }

    /// Fills every optional field with the default for this kind.
    pub fn resolved(&self) -> Self {
        let mut c = self.clone();
        let kind = c.kind;
        if c.seeds.is_empty() {
            c.seeds = if kind.is_mi() { (0..8).collect() } else { vec![0] };
        }
        if c.model.is_none() {
            c.model = Some(if kind.is_timing() {
                // A small encoder keeps per-query compute short relative to
                // the lookup cost being measured.
                ModelConfig { hidden_dim: 8, ..ModelConfig::default() }
            } else {
                ModelConfig { hidden_dim: 32, ..ModelConfig::default() }
            });
        }
        if c.train.is_none() {
            c.train = Some(match kind {
                ExperimentKind::Timing | ExperimentKind::TimingDefense => {
                    TrainConfig { epochs: 2, ..TrainConfig::default() }
                }
                ExperimentKind::MemorizeSweep | ExperimentKind::SecretTypes => {
                    TrainConfig { epochs: 10, batch_size: 1, ..TrainConfig::default() }
                }
                ExperimentKind::StrengthSweep => TrainConfig { epochs: 50, batch_size: 1, ..TrainConfig::default() },
                _ => TrainConfig { epochs: 20, batch_size: 1, ..TrainConfig::default() },
            });
        }
        if c.background.is_none() && c.paths.corpus.is_none() {
            c.background = Some(match kind {
                k if k.is_mi() => SynthSpec::new([
                    ("person", 50),
                    ("location", 50),
                    ("contact", 50),
                    ("filler", 50),
                    ("decoy", 150),
                ]),
                k if k.is_timing() => SynthSpec::new([
                    ("person", 150),
                    ("location", 150),
                    ("contact", 150),
                    ("id", 150),
                    ("filler", 50),
                ]),
                _ => SynthSpec::new([("person", 25), ("filler", 25)]),
            });
        }
        if kind.is_mi() {
            if c.label.is_none() {
                c.label = Some(if kind == ExperimentKind::MiEntities { "CONTACT" } else { "SECRET" }.into());
            }
            if c.group.is_none() {
                c.group = Some(if kind == ExperimentKind::MiEntities { "contact" } else { "secret-variants" }.into());
            }
            if c.query_group.is_none() && kind == ExperimentKind::MiUnknownPhrase {
                c.query_group = Some("secret".into());
            }
        }
        if kind == ExperimentKind::SecretTypes && c.secret_kinds.is_none() {
            c.secret_kinds = Some(["password", "credit-card", "phone", "ip"].map(String::from).to_vec());
        }
        c
    }

    pub fn model_config(&self) -> ModelConfig {
        self.resolved().model.expect("resolved")
    }

    pub fn train_config(&self) -> TrainConfig {
        self.resolved().train.expect("resolved")
    }

    fn is_deterministic(&self) -> bool {
        !self.kind.is_timing() || self.cost.mode == CostMode::Simulated
    }
}

/// A named CSV table. Every file written by `run` starts with a
/// `# manifest <sha256>` line linking it to `manifest.json`.
#[derive(Clone, Debug, PartialEq)]
pub struct Table {
    pub name: String,
    pub header: Vec<String>,
    pub rows: Vec<Vec<String>>,
}

impl Table {
    pub fn new(name: impl Into<String>, header: &[&str]) -> Self {
        Table {
            name: name.into(),
            header: header.iter().map(|h| h.to_string()).collect(),
            rows: Vec::new(),
        }
    }

    pub fn push<I: IntoIterator<Item = S>, S: ToString>(&mut self, row: I) {
        self.rows.push(row.into_iter().map(|v| v.to_string()).collect());
    }

    fn write<W: Write>(&self, manifest_hash: &str, mut out: W) -> Result<()> {
        writeln!(out, "# manifest {manifest_hash}")?;
        let mut w = csv::Writer::from_writer(out);
        w.write_record(&self.header)?;
        for r in &self.rows {
            w.write_record(r)?;
        }
        w.flush()?;
        Ok(())
    }
}

/// One tidy summary value: `group` and `step` locate it (for example
/// `insertions=4` and `epoch=3`), `metric` names it.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SummaryRow {
    pub seed: Option<u64>,
    pub group: String,
    pub step: String,
    pub metric: String,
    pub value: f64,
}

impl SummaryRow {
    pub fn new(seed: Option<u64>, group: impl Into<String>, step: impl Into<String>, metric: &str, value: f64) -> Self {
        SummaryRow {
            seed,
            group: group.into(),
            step: step.into(),
            metric: metric.into(),
            value,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub kind: String,
    pub manifest_sha256: String,
    pub rows: Vec<SummaryRow>,
}

/// Output of one experiment before it is written to disk.
pub trait Outcome {
    fn tables(&self) -> Vec<Table>;
    fn summary(&self) -> Vec<SummaryRow>;
}

#[derive(Clone, Debug)]
pub struct RunOutput {
    pub manifest_sha256: String,
    pub summary: Summary,
    pub files: Vec<PathBuf>,
}

fn manifest(cfg: &ExperimentConfig) -> Result<(String, String)> {
    let value = serde_json::json!({
        "tool": "nerleak",
        "version": env!("CARGO_PKG_VERSION"),
        "kind": cfg.kind.to_string(),
        "deterministic": cfg.is_deterministic(),
        "config": cfg,
    });
    let text = serde_json::to_string_pretty(&value)?;
    let hash = hex::encode(Sha256::digest(text.as_bytes()));
    Ok((text, hash))
}

/// Runs the experiment and writes `manifest.json`, its CSV tables and
/// `summary.json` into `out_dir`.
pub fn run(config: &ExperimentConfig, out_dir: impl AsRef<Path>) -> Result<RunOutput> {
    config.validate()?;
    config.check_paths()?;
    let cfg = config.resolved();
    let outcome: Box<dyn Outcome> = match cfg.kind {
        ExperimentKind::MemorizeSweep => Box::new(memorize_sweep(&cfg)?),
        ExperimentKind::StrengthSweep => Box::new(strength_sweep(&cfg)?),
        ExperimentKind::SecretTypes => Box::new(secret_types(&cfg)?),
        ExperimentKind::Neighbor => Box::new(neighbor_experiment(&cfg)?),
        ExperimentKind::MiEntities | ExperimentKind::MiSecret(_) | ExperimentKind::MiUnknownPhrase => {
            Box::new(mi_experiment(&cfg)?)
        }
        ExperimentKind::DummyDefense => Box::new(dummy_defense(&cfg)?),
        ExperimentKind::Timing => Box::new(timing_experiment(&cfg)?),
        ExperimentKind::TimingDefense => Box::new(timing_defense(&cfg)?),
    };

    let dir = out_dir.as_ref();
    fs::create_dir_all(dir)?;
    let (manifest_text, hash) = manifest(&cfg)?;
    let mut files = Vec::new();
    let path = dir.join("manifest.json");
    fs::write(&path, manifest_text + "\n")?;
    files.push(path);
    for table in outcome.tables() {
        let path = dir.join(format!("{}.csv", table.name));
        let mut buf = Vec::new();
        table.write(&hash, &mut buf)?;
        fs::write(&path, buf)?;
        files.push(path);
    }
    let summary = Summary {
        kind: cfg.kind.to_string(),
        manifest_sha256: hash.clone(),
        rows: outcome.summary(),
    };
    let path = dir.join("summary.json");
    fs::write(&path, serde_json::to_string_pretty(&summary)? + "\n")?;
    files.push(path);
    Ok(RunOutput {
        manifest_sha256: hash,
        summary,
        files,
    })
}

fn find_runs(dir: &Path, out: &mut Vec<PathBuf>) -> Result<()> {
    if dir.join("manifest.json").is_file() && dir.join("summary.json").is_file() {
        out.push(dir.to_path_buf());
    }
    let mut entries: Vec<PathBuf> = fs::read_dir(dir)?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.is_dir())
        .collect();
    entries.sort();
    for e in entries {
        find_runs(&e, out)?;
    }
    Ok(())
}

/// Merges every run below `dir` into one long-format table with columns
/// `experiment,run,seed,group,step,metric,value`. Errors when no run is
/// found. The result depends only on the runs, so repeating it is harmless.
pub fn report(dir: impl AsRef<Path>) -> Result<String> {
    let dir = dir.as_ref();
    let mut runs = Vec::new();
    find_runs(dir, &mut runs)?;
    if runs.is_empty() {
        return Err(Error::EmptyInput("experiment runs (no manifest.json found)"));
    }
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["experiment", "run", "seed", "group", "step", "metric", "value"])?;
    for run in runs {
        let summary: Summary = serde_json::from_str(&fs::read_to_string(run.join("summary.json"))?)?;
        let manifest: serde_json::Value = serde_json::from_str(&fs::read_to_string(run.join("manifest.json"))?)?;
        if manifest.get("kind").and_then(|k| k.as_str()) != Some(summary.kind.as_str()) {
            return Err(Error::Format(format!("{}: summary and manifest disagree on the kind", run.display())));
        }
        let name = run.strip_prefix(dir).unwrap_or(&run).display().to_string();
        let name = if name.is_empty() { ".".to_string() } else { name };
        for r in &summary.rows {
            w.write_record([
                summary.kind.clone(),
                name.clone(),
                r.seed.map(|s| s.to_string()).unwrap_or_default(),
                r.group.clone(),
                r.step.clone(),
                r.metric.clone(),
                r.value.to_string(),
            ])?;
        }
    }
    let bytes = w.into_inner().map_err(|e| Error::Format(e.to_string()))?;
    String::from_utf8(bytes).map_err(|e| Error::Format(e.to_string()))
}

/// Derives an independent seed for one sub-task of a run.
pub(crate) fn sub_seed(seed: u64, tag: &str, index: u64) -> u64 {
    crate::nermodel::fnv1a64(&format!("{seed}/{tag}/{index}"))
}

pub(crate) fn mean_by<K: Ord>(items: impl IntoIterator<Item = (K, f64)>) -> BTreeMap<K, f64> {
    let mut acc: BTreeMap<K, (f64, usize)> = BTreeMap::new();
    for (k, v) in items {
        let e = acc.entry(k).or_default();
        e.0 += v;
        e.1 += 1;
    }
    acc.into_iter().map(|(k, (s, n))| (k, s / n as f64)).collect()
}
