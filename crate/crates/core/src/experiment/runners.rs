use std::collections::{BTreeMap, HashSet};

use rand::seq::SliceRandom;
use serde::Serialize;

use super::{mean_by, sub_seed, ExperimentConfig, ExperimentKind, Outcome, SummaryRow, Table, DEFAULT_LABELS};
use crate::attacks::{mi_confidence_attack, neighbor_analysis, rank_attack, timing_attack, MiResult, NeighborTable, TimingRun};
use crate::corpus::{
    read_corpus, synth_corpus, AnnotatedDocument, PhraseTemplate, SpanQuery, TemplateBank, insert_phrases,
};
use crate::defenses::{calibrate_delta, defend_with_dummy, ConstantDelay, DelayPolicy, Frozen};
use crate::error::{Error, Result};
use crate::metrics::median;
use crate::nermodel::{tokenize, LabelSet, NerModel, Pipeline, Trainer};
use crate::secrets::{
    gen_feature_passwords, gen_out_vocab_passwords, gen_password, gen_passwords_with_strength, seeded,
    FeatureCombination, PasswordConstraints, SecretKind, StrengthLevel,
};
use crate::vocab::{Origin, Vocabulary};

fn bank(cfg: &ExperimentConfig) -> Result<TemplateBank> {
    match &cfg.paths.templates {
        Some(p) => TemplateBank::load(p),
        None => Ok(TemplateBank::default()),
    }
}

fn background<R: rand::Rng>(cfg: &ExperimentConfig, bank: &TemplateBank, rng: &mut R) -> Result<Vec<AnnotatedDocument>> {
    match (&cfg.paths.corpus, &cfg.background) {
        (Some(p), _) => read_corpus(p),
        (None, Some(spec)) => synth_corpus(spec, bank, rng),
        (None, None) => Err(Error::InvalidConfig("no background corpus configured".into())),
    }
}

fn labels() -> LabelSet {
    LabelSet::new(DEFAULT_LABELS).expect("default labels are valid")
}

fn fresh_model(cfg: &ExperimentConfig, seed: u64, vocab: Vocabulary) -> Result<NerModel> {
    let mc = crate::nermodel::ModelConfig { seed, ..cfg.model_config() };
    NerModel::with_vocabulary(mc, labels(), vocab)
}

fn trainer(cfg: &ExperimentConfig, model: &mut NerModel, corpus: &[AnnotatedDocument], seed: u64) -> Result<Trainer> {
    let tc = crate::nermodel::TrainConfig { shuffle_seed: seed, ..cfg.train_config() };
    Trainer::new(model, corpus, tc)
}

fn distinct<F: FnMut() -> String>(count: usize, mut draw: F) -> Result<Vec<String>> {
    let mut seen = HashSet::new();
    let mut out = Vec::with_capacity(count);
    for _ in 0..count.max(1) * 1000 {
        if out.len() == count {
            return Ok(out);
        }
        let v = draw();
        if seen.insert(v.clone()) {
            out.push(v);
        }
    }
    if out.len() == count {
        return Ok(out);
    }
    Err(Error::BudgetExhausted(format!("drew {} of {count} distinct values", out.len())))
}

#[derive(Clone, Debug, PartialEq)]
pub struct MemorizeRecord {
    pub seed: u64,
    /// Sweep coordinate shared by a batch of targets: empty for the plain
    /// sweep, the strength level or the secret kind otherwise.
    pub group: String,
    pub target_index: usize,
    pub target: String,
    pub insertions: usize,
    pub epoch: usize,
    pub rank: f64,
    pub rank0: f64,
}

/// Rank trajectories of secrets inserted into a training corpus.
/// Memorize sweeps record every epoch; strength sweeps stop at the first
/// epoch with `rank0 == 0`.
#[derive(Clone, Debug, PartialEq)]
pub struct MemorizeOutcome {
    pub kind: ExperimentKind,
    pub max_epochs: usize,
    pub records: Vec<MemorizeRecord>,
}

pub type StrengthOutcome = MemorizeOutcome;

impl MemorizeOutcome {
    fn runs(&self) -> BTreeMap<(u64, String, usize, usize), Vec<&MemorizeRecord>> {
        let mut out: BTreeMap<_, Vec<_>> = BTreeMap::new();
        for r in &self.records {
            out.entry((r.seed, r.group.clone(), r.target_index, r.insertions)).or_default().push(r);
        }
        out
    }

    /// First epoch at which the target ranks first, if any.
    pub fn epochs_to_min(&self, seed: u64, group: &str, target_index: usize, insertions: usize) -> Option<usize> {
        self.records
            .iter()
            .find(|r| {
                r.seed == seed
                    && r.group == group
                    && r.target_index == target_index
                    && r.insertions == insertions
                    && r.rank0 == 0.0
            })
            .map(|r| r.epoch)
    }

    pub fn rank0_at(&self, seed: u64, group: &str, target_index: usize, insertions: usize, epoch: usize) -> Option<f64> {
        self.records
            .iter()
            .find(|r| {
                r.seed == seed
                    && r.group == group
                    && r.target_index == target_index
                    && r.insertions == insertions
                    && r.epoch == epoch
            })
            .map(|r| r.rank0)
    }

    /// Median epochs-to-minimum over the targets of a group. Targets that
    /// never reach the minimum count as `max_epochs + 1`.
    pub fn median_epochs_to_min(&self, group: &str) -> Option<f64> {
        let v: Vec<f64> = self
            .runs()
            .keys()
            .filter(|k| k.1 == group)
            .map(|(s, g, t, i)| self.epochs_to_min(*s, g, *t, *i).unwrap_or(self.max_epochs + 1) as f64)
            .collect();
        (!v.is_empty()).then(|| median(&v))
    }

    fn mean_rank_curve(&self) -> BTreeMap<(String, usize, usize), f64> {
        mean_by(self.records.iter().map(|r| ((r.group.clone(), r.insertions, r.epoch), r.rank0)))
    }
}

impl Outcome for MemorizeOutcome {
    fn tables(&self) -> Vec<Table> {
        let mut tables = Vec::new();
        let curve = self.mean_rank_curve();
        match self.kind {
            ExperimentKind::StrengthSweep => {
                let mut t = Table::new("strength", &["level", "seed", "target_index", "target", "epochs_to_min"]);
                for (seed, group, ti, ins) in self.runs().keys() {
                    let target = &self.runs()[&(*seed, group.clone(), *ti, *ins)][0].target.clone();
                    let e = self.epochs_to_min(*seed, group, *ti, *ins);
                    t.push([
                        group.clone(),
                        seed.to_string(),
                        ti.to_string(),
                        target.clone(),
                        e.map(|e| e.to_string()).unwrap_or_default(),
                    ]);
                }
                tables.push(t);
            }
            ExperimentKind::SecretTypes => {
                let mut t = Table::new("secret_types", &["kind", "epoch", "mean_rank"]);
                for ((group, _, epoch), m) in &curve {
                    t.push([group.clone(), epoch.to_string(), m.to_string()]);
                }
                tables.push(t);
            }
            _ => {
                let mut t = Table::new("memorize", &["epoch", "insertions", "mean_rank"]);
                let mut by_epoch: Vec<_> = curve.iter().map(|((_, i, e), m)| (*e, *i, *m)).collect();
                by_epoch.sort_by_key(|r| (r.0, r.1));
                for (e, i, m) in by_epoch {
                    t.push([e.to_string(), i.to_string(), m.to_string()]);
                }
                tables.push(t);
            }
        }
        let mut t = Table::new(
            "rank_trace",
            &["seed", "group", "target_index", "target", "insertions", "epoch", "rank", "rank0"],
        );
        for r in &self.records {
            t.push([
                r.seed.to_string(),
                r.group.clone(),
                r.target_index.to_string(),
                r.target.clone(),
                r.insertions.to_string(),
                r.epoch.to_string(),
                r.rank.to_string(),
                r.rank0.to_string(),
            ]);
        }
        tables.push(t);
        tables
    }

    fn summary(&self) -> Vec<SummaryRow> {
        let mut rows = Vec::new();
        for ((group, ins, epoch), m) in self.mean_rank_curve() {
            rows.push(SummaryRow::new(
                None,
                group_key(&group, ins),
                format!("epoch={epoch}"),
                "mean_rank",
                m,
            ));
        }
        for (seed, group, ti, ins) in self.runs().keys() {
            let e = self.epochs_to_min(*seed, group, *ti, *ins).unwrap_or(self.max_epochs + 1);
            rows.push(SummaryRow::new(
                Some(*seed),
                group_key(group, *ins),
                format!("target={ti}"),
                "epochs_to_min",
                e as f64,
            ));
        }
        let groups: HashSet<&str> = self.records.iter().map(|r| r.group.as_str()).collect();
        let mut groups: Vec<&str> = groups.into_iter().collect();
        groups.sort();
        for g in groups {
            if let Some(m) = self.median_epochs_to_min(g) {
                rows.push(SummaryRow::new(None, g, "", "median_epochs_to_min", m));
            }
        }
        rows
    }
}

fn group_key(group: &str, insertions: usize) -> String {
    if group.is_empty() {
        format!("insertions={insertions}")
    } else {
        format!("{group},insertions={insertions}")
    }
}

/// Trains one model per target and insertion count and ranks the target
/// among `candidates` after every epoch.
fn memorize_runs(
    cfg: &ExperimentConfig,
    seed: u64,
    group: &str,
    base: &[AnnotatedDocument],
    candidates: &[String],
    insertions: &[usize],
    stop_at_min: bool,
) -> Result<Vec<MemorizeRecord>> {
    let template = PhraseTemplate::alice();
    let epochs = cfg.train_config().epochs;
    let mut records = Vec::new();
    for (ti, target) in candidates.iter().take(cfg.sizes.targets).enumerate() {
        // Model initialization and shuffling are shared across insertion
        // counts so that only the number of copies differs.
        let run_seed = sub_seed(seed, &format!("target{group}"), ti as u64);
        for &k in insertions {
            let mut rng = seeded(sub_seed(run_seed, "insert", k as u64));
            let (corpus, _) = insert_phrases(base, &template, std::slice::from_ref(target), k, &mut rng)?;
            let mut model = fresh_model(cfg, run_seed, Vocabulary::new(cfg.cost.clone()))?;
            let mut tr = trainer(cfg, &mut model, &corpus, run_seed)?;
            for epoch in 1..=epochs {
                tr.run_epoch(&mut model);
                let r = rank_attack(&mut model, &template, candidates, target)?;
                records.push(MemorizeRecord {
                    seed,
                    group: group.to_string(),
                    target_index: ti,
                    target: target.clone(),
                    insertions: k,
                    epoch,
                    rank: r.rank,
                    rank0: r.rank0,
                });
                if stop_at_min && r.rank0 == 0.0 {
                    break;
                }
            }
        }
    }
    Ok(records)
}

/// Random passwords, several insertion counts, every epoch ranked.
pub fn memorize_sweep(cfg: &ExperimentConfig) -> Result<MemorizeOutcome> {
    let cfg = cfg.resolved();
    let bank = bank(&cfg)?;
    let mut records = Vec::new();
    for &seed in &cfg.seeds {
        let mut rng = seeded(sub_seed(seed, "memorize", 0));
        let base = background(&cfg, &bank, &mut rng)?;
        let c = PasswordConstraints::default();
        let candidates = distinct(cfg.sizes.candidates, || gen_password(&c, &mut rng).expect("default constraints"))?;
        records.extend(memorize_runs(&cfg, seed, "", &base, &candidates, &cfg.sizes.insertions, false)?);
    }
    Ok(MemorizeOutcome {
        kind: ExperimentKind::MemorizeSweep,
        max_epochs: cfg.train_config().epochs,
        records,
    })
}

/// Epochs until the target ranks first, per strength level. Groups are
/// named `level=<n>`.
pub fn strength_sweep(cfg: &ExperimentConfig) -> Result<StrengthOutcome> {
    let cfg = cfg.resolved();
    let bank = bank(&cfg)?;
    let mut records = Vec::new();
    for &seed in &cfg.seeds {
        for &level in &cfg.sizes.levels {
            let mut rng = seeded(sub_seed(seed, "strength", level as u64));
            let base = background(&cfg, &bank, &mut rng)?;
            let candidates = gen_passwords_with_strength(StrengthLevel::new(level)?, cfg.sizes.candidates, &mut rng)?;
            let group = format!("level={level}");
            records.extend(memorize_runs(&cfg, seed, &group, &base, &candidates, &cfg.sizes.insertions[..1], true)?);
        }
    }
    Ok(MemorizeOutcome {
        kind: ExperimentKind::StrengthSweep,
        max_epochs: cfg.train_config().epochs,
        records,
    })
}

/// Memorization of different secret formats. Groups are the kind names.
pub fn secret_types(cfg: &ExperimentConfig) -> Result<MemorizeOutcome> {
    let cfg = cfg.resolved();
    let bank = bank(&cfg)?;
    let kinds = cfg
        .secret_kinds
        .as_ref()
        .expect("resolved")
        .iter()
        .map(|k| SecretKind::parse(k))
        .collect::<Result<Vec<_>>>()?;
    let mut records = Vec::new();
    for &seed in &cfg.seeds {
        for (ki, kind) in kinds.iter().enumerate() {
            let mut rng = seeded(sub_seed(seed, "secret-types", ki as u64));
            let base = background(&cfg, &bank, &mut rng)?;
            let candidates = distinct(cfg.sizes.candidates, || kind.generate(&mut rng))?;
            records.extend(memorize_runs(&cfg, seed, kind.name(), &base, &candidates, &cfg.sizes.insertions[..1], false)?);
        }
    }
    Ok(MemorizeOutcome {
        kind: ExperimentKind::SecretTypes,
        max_epochs: cfg.train_config().epochs,
        records,
    })
}

#[derive(Clone, Debug, PartialEq)]
pub struct NeighborOutcome {
    /// `(seed, target, table)` per seed.
    pub runs: Vec<(u64, String, NeighborTable)>,
    subword: crate::subword::SubwordConfig,
}

impl Outcome for NeighborOutcome {
    fn tables(&self) -> Vec<Table> {
        let mut bins = Table::new("neighbor", &["seed", "distance", "count", "mean_rank"]);
        let mut ranks = Table::new("neighbor_ranks", &["seed", "candidate", "score", "is_target", "f_distance"]);
        for (seed, target, table) in &self.runs {
            for b in &table.bins {
                bins.push([seed.to_string(), b.distance.to_string(), b.count.to_string(), b.mean_rank.to_string()]);
            }
            for c in &table.ranks.scores {
                ranks.push([
                    seed.to_string(),
                    c.candidate.clone(),
                    c.score.to_string(),
                    (c.candidate == *target).to_string(),
                    self.subword.f_distance(target, &c.candidate).to_string(),
                ]);
            }
        }
        vec![bins, ranks]
    }

    fn summary(&self) -> Vec<SummaryRow> {
        let mut rows = Vec::new();
        for (seed, _, table) in &self.runs {
            let s = Some(*seed);
            for b in &table.bins {
                rows.push(SummaryRow::new(s, "", format!("bin={}", b.distance), "mean_rank", b.mean_rank));
            }
            if let Some(rho) = table.spearman() {
                rows.push(SummaryRow::new(s, "", "", "spearman", rho));
            }
            rows.push(SummaryRow::new(s, "", "", "rank0", table.ranks.rank0));
        }
        rows
    }
}

/// A target every feature combination can be varied around: the first
/// character and one of the last three must be alphanumeric, because
/// symbols have no same-class alternative that changes the norm.
fn neighbor_target<R: rand::Rng>(min_len: usize, rng: &mut R) -> Result<String> {
    let c = PasswordConstraints { min_len, ..PasswordConstraints::default() };
    for _ in 0..10_000 {
        let p = gen_password(&c, rng)?;
        let first_ok = p.chars().next().is_some_and(|ch| ch.is_ascii_alphanumeric());
        let tail_ok = p.chars().rev().take(3).any(|ch| ch.is_ascii_alphanumeric());
        if first_ok && tail_ok {
            return Ok(p);
        }
    }
    Err(Error::BudgetExhausted("no target admits every feature combination".into()))
}

/// Memorizes one phrase, then ranks the target among passwords sharing
/// subsets of its features and bins them by f-distance.
pub fn neighbor_experiment(cfg: &ExperimentConfig) -> Result<NeighborOutcome> {
    let cfg = cfg.resolved();
    let bank = bank(&cfg)?;
    let subword = cfg.model_config().subword;
    let template = PhraseTemplate::alice();
    let mut runs = Vec::new();
    for &seed in &cfg.seeds {
        let mut rng = seeded(sub_seed(seed, "neighbor", 0));
        let base = background(&cfg, &bank, &mut rng)?;
        let target = neighbor_target(cfg.sizes.target_length, &mut rng)?;
        let combos = FeatureCombination::all();
        let total = cfg.sizes.feature_passwords;
        let mut candidates = vec![target.clone()];
        for (i, combo) in combos.into_iter().enumerate() {
            let n = total / combos.len() + usize::from(i < total % combos.len());
            candidates.extend(gen_feature_passwords(&target, combo, n, &subword, &mut rng)?);
        }
        let mut seen = HashSet::new();
        candidates.retain(|c| seen.insert(c.clone()));
        let (corpus, _) =
            insert_phrases(&base, &template, std::slice::from_ref(&target), cfg.sizes.insertions[0], &mut rng)?;
        let mut model = fresh_model(&cfg, seed, Vocabulary::new(cfg.cost.clone()))?;
        let mut tr = trainer(&cfg, &mut model, &corpus, seed)?;
        for _ in 0..cfg.train_config().epochs {
            tr.run_epoch(&mut model);
        }
        let table = neighbor_analysis(&mut model, &template, &target, &candidates, &subword)?;
        runs.push((seed, target, table));
    }
    Ok(NeighborOutcome { runs, subword })
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct EpochAuc {
    pub epoch: usize,
    pub auc: f64,
}


#[derive(Clone, Debug, PartialEq)]
pub struct MiRun {
    pub seed: u64,
    /// Whether the training values were replaced by dummies.
    pub defended: bool,
    pub epochs: Vec<EpochAuc>,
    pub last: MiResult,
}

#[derive(Clone, Debug, PartialEq)]
pub struct MiOutcome {
    pub runs: Vec<MiRun>,
}

pub type DummyOutcome = MiOutcome;

impl MiOutcome {
    /// Final-epoch AUC per seed, in seed order.
    pub fn final_aucs(&self, defended: bool) -> Vec<(u64, f64)> {
        self.runs.iter().filter(|r| r.defended == defended).map(|r| (r.seed, r.last.auc)).collect()
    }
}

fn variant(defended: bool) -> &'static str {
    if defended {
        "dummy"
    } else {
        "plain"
    }
}

impl Outcome for MiOutcome {
    fn tables(&self) -> Vec<Table> {
        let mut curve = Table::new("mi", &["seed", "variant", "epoch", "auc"]);
        let mut samples = Table::new("mi_samples", &["seed", "variant", "text", "truth", "score"]);
        let mut roc = Table::new("mi_roc", &["seed", "variant", "fpr", "tpr", "threshold"]);
        for r in &self.runs {
            let (s, v) = (r.seed.to_string(), variant(r.defended));
            for e in &r.epochs {
                curve.push([s.clone(), v.into(), e.epoch.to_string(), e.auc.to_string()]);
            }
            for x in &r.last.samples {
                samples.push([s.clone(), v.into(), x.text.clone(), x.truth.name().into(), x.score.to_string()]);
            }
            for p in &r.last.roc.points {
                roc.push([s.clone(), v.into(), p.fpr.to_string(), p.tpr.to_string(), p.threshold.to_string()]);
            }
        }
        vec![curve, samples, roc]
    }

    fn summary(&self) -> Vec<SummaryRow> {
        let mut rows = Vec::new();
        for r in &self.runs {
            for e in &r.epochs {
                rows.push(SummaryRow::new(Some(r.seed), variant(r.defended), format!("epoch={}", e.epoch), "auc", e.auc));
            }
        }
        rows
    }
}

struct MiData {
    train: Vec<AnnotatedDocument>,
    members: Vec<SpanQuery>,
    nonmembers: Vec<SpanQuery>,
}

fn mi_data(cfg: &ExperimentConfig, bank: &TemplateBank, seed: u64) -> Result<(MiData, rand_chacha::ChaCha8Rng)> {
    let label = cfg.label.as_deref().expect("resolved");
    let kind = SecretKind::for_label(label).ok_or_else(|| Error::UnknownLabel(label.to_string()))?;
    let group = cfg.group.as_deref().expect("resolved");
    let templates = bank.phrases(group)?;
    if templates.iter().any(|t| t.secret_label != label) {
        return Err(Error::InvalidConfig(format!("template group {group:?} does not annotate {label}")));
    }
    let queries = match &cfg.query_group {
        Some(q) => bank.phrases(q)?,
        None => templates.clone(),
    };
    let members = match cfg.kind {
        ExperimentKind::MiSecret(n) => n,
        _ => cfg.sizes.members,
    };
    let mut rng = seeded(sub_seed(seed, "mi", 0));
    let mut train = background(cfg, bank, &mut rng)?;
    let existing: HashSet<String> =
        train.iter().flat_map(|d| d.entities.iter().map(|e| d.span_text(e)).collect::<Vec<_>>()).collect();
    let values = distinct(members + cfg.sizes.nonmembers, || loop {
        let v = kind.generate(&mut rng);
        if !existing.contains(&v) {
            break v;
        }
    })?;
    let (mut mq, mut nq) = (Vec::new(), Vec::new());
    for (i, v) in values.iter().enumerate() {
        let query = queries[i % queries.len()].query(v);
        if i < members {
            train.push(templates[i % templates.len()].render(v)?);
            mq.push(query);
        } else {
            nq.push(query);
        }
    }
    train.shuffle(&mut rng);
    Ok((MiData { train, members: mq, nonmembers: nq }, rng))
}

fn mi_train(cfg: &ExperimentConfig, seed: u64, defended: bool, corpus: &[AnnotatedDocument], data: &MiData) -> Result<MiRun> {
    // The vocabulary stays unfrozen: frozen-out features would all share
    // the reserved embedding row and blur the confidence signal.
    let mut model = fresh_model(cfg, seed, Vocabulary::new(cfg.cost.clone()))?;
    let mut tr = trainer(cfg, &mut model, corpus, seed)?;
    let mut epochs = Vec::new();
    let mut last = None;
    for epoch in 1..=cfg.train_config().epochs {
        tr.run_epoch(&mut model);
        let r = mi_confidence_attack(&mut model, &data.members, &data.nonmembers)?;
        epochs.push(EpochAuc { epoch, auc: r.auc });
        last = Some(r);
    }
    Ok(MiRun {
        seed,
        defended,
        epochs,
        last: last.expect("at least one epoch"),
    })
}

/// Confidence-score membership inference on one entity label, with the
/// AUC recorded after every epoch.
pub fn mi_experiment(cfg: &ExperimentConfig) -> Result<MiOutcome> {
    let cfg = cfg.resolved();
    let bank = bank(&cfg)?;
    let mut runs = Vec::new();
    for &seed in &cfg.seeds {
        let (data, _) = mi_data(&cfg, &bank, seed)?;
        runs.push(mi_train(&cfg, seed, false, &data.train, &data)?);
    }
    Ok(MiOutcome { runs })
}

/// The same attack against a model trained with and without the attacked
/// label's values replaced by generated dummies.
pub fn dummy_defense(cfg: &ExperimentConfig) -> Result<DummyOutcome> {
    let cfg = cfg.resolved();
    let bank = bank(&cfg)?;
    let label = cfg.label.clone().expect("resolved");
    let mut runs = Vec::new();
    for &seed in &cfg.seeds {
        let (data, mut rng) = mi_data(&cfg, &bank, seed)?;
        runs.push(mi_train(&cfg, seed, false, &data.train, &data)?);
        let defended = defend_with_dummy(&data.train, std::slice::from_ref(&label), &mut rng)?;
        runs.push(mi_train(&cfg, seed, true, &defended, &data)?);
    }
    Ok(MiOutcome { runs })
}

#[derive(Clone, Debug, PartialEq)]
pub struct TimingSeedRun {
    pub seed: u64,
    /// Padding delay in effect, for the defended experiment.
    pub delta: Option<f64>,
    pub run: TimingRun,
}

#[derive(Clone, Debug, PartialEq)]
pub struct TimingOutcome {
    pub runs: Vec<TimingSeedRun>,
}

impl TimingOutcome {
    pub fn auc(&self, seed: u64, repeat: usize) -> Option<f64> {
        self.runs.iter().find(|r| r.seed == seed).and_then(|r| r.run.auc(repeat))
    }
}

impl Outcome for TimingOutcome {
    fn tables(&self) -> Vec<Table> {
        let mut samples = Table::new("timing", &["seed", "word", "truth", "repeat", "duration_ns", "score"]);
        let mut aucs = Table::new("timing_auc", &["seed", "repeat", "auc"]);
        let mut roc = Table::new("timing_roc", &["seed", "repeat", "fpr", "tpr", "threshold"]);
        for r in &self.runs {
            let s = r.seed.to_string();
            for x in &r.run.samples {
                let d = x.duration.to_string();
                samples.push([s.clone(), x.word.clone(), x.truth.name().into(), x.repeat.to_string(), d.clone(), d]);
            }
            for a in &r.run.per_repeat {
                aucs.push([s.clone(), a.repeat.to_string(), a.auc.to_string()]);
                for p in &a.roc.points {
                    roc.push([s.clone(), a.repeat.to_string(), p.fpr.to_string(), p.tpr.to_string(), p.threshold.to_string()]);
                }
            }
        }
        vec![samples, aucs, roc]
    }

    fn summary(&self) -> Vec<SummaryRow> {
        let mut rows = Vec::new();
        for r in &self.runs {
            for a in &r.run.per_repeat {
                rows.push(SummaryRow::new(Some(r.seed), "", format!("repeat={}", a.repeat), "auc", a.auc));
            }
            if let Some(d) = r.delta {
                rows.push(SummaryRow::new(Some(r.seed), "", "", "delta", d));
            }
        }
        rows
    }
}

struct TimingSetup {
    model: NerModel,
    members: Vec<String>,
    /// Twice the configured count: evaluation words first, then a disjoint
    /// batch for calibration.
    nonmembers: Vec<String>,
}

fn timing_setup(cfg: &ExperimentConfig, seed: u64) -> Result<TimingSetup> {
    let bank = bank(cfg)?;
    let mut rng = seeded(sub_seed(seed, "timing", 0));
    let corpus = background(cfg, &bank, &mut rng)?;
    let mut model = match &cfg.paths.model {
        Some(p) => {
            let mut m = NerModel::load(p)?;
            m.vocab_mut().set_cost_model(cfg.cost.clone());
            m
        }
        None => {
            // Every printable character is known up front, so prefixes of
            // fresh words hit and only their longer features miss.
            let mut vocab = match &cfg.paths.vocab {
                Some(p) => Vocabulary::read_from(std::io::BufReader::new(std::fs::File::open(p)?))?,
                None => Vocabulary::new(cfg.cost.clone()),
            };
            vocab.set_cost_model(cfg.cost.clone());
            for b in 0x21u8..0x7f {
                vocab.intern_from(&(b as char).to_string(), Origin::Training);
            }
            let mut m = fresh_model(cfg, seed, vocab)?;
            m.train(&corpus, &crate::nermodel::TrainConfig { shuffle_seed: seed, ..cfg.train_config() })?;
            m
        }
    };
    let mut candidates: Vec<String> = corpus
        .iter()
        .flat_map(|d| d.entities.iter().map(|e| d.span_text(e)).collect::<Vec<_>>())
        .filter(|w| tokenize(w).len() == 1)
        .filter(|w| {
            let f = model.features(w);
            [&f.prefix, &f.suffix, &f.norm, &f.shape].iter().all(|s| model.vocab().contains(s))
        })
        .collect();
    candidates.sort();
    candidates.dedup();
    if candidates.len() < cfg.sizes.members {
        return Err(Error::InvalidConfig(format!(
            "only {} single-token in-vocabulary entity values for {} members",
            candidates.len(),
            cfg.sizes.members
        )));
    }
    candidates.shuffle(&mut rng);
    candidates.truncate(cfg.sizes.members);
    let subword = model.config().subword;
    let nonmembers = gen_out_vocab_passwords(
        model.vocab(),
        2 * cfg.sizes.nonmembers,
        &PasswordConstraints::default(),
        &subword,
        &mut rng,
    )?;
    model.vocab_mut().set_cost_model(cfg.cost.clone());
    Ok(TimingSetup {
        model,
        members: candidates,
        nonmembers,
    })
}

fn paired_members(members: &[String], n: usize) -> Vec<String> {
    members.iter().cycle().take(n).cloned().collect()
}

/// Single-word timing attack on a trained model.
pub fn timing_experiment(cfg: &ExperimentConfig) -> Result<TimingOutcome> {
    let cfg = cfg.resolved();
    let mut runs = Vec::new();
    for &seed in &cfg.seeds {
        let mut s = timing_setup(&cfg, seed)?;
        let n = cfg.sizes.nonmembers;
        let members = paired_members(&s.members, n);
        let run = timing_attack(&mut s.model, &members, &s.nonmembers[..n], cfg.sizes.repeats, cfg.cost.mode)?;
        runs.push(TimingSeedRun { seed, delta: None, run });
    }
    Ok(TimingOutcome { runs })
}

/// Timing attack against a model padded by a constant delay (calibrated
/// on a disjoint non-member batch unless configured) and optionally frozen.
pub fn timing_defense(cfg: &ExperimentConfig) -> Result<TimingOutcome> {
    let cfg = cfg.resolved();
    let mut runs = Vec::new();
    for &seed in &cfg.seeds {
        let mut s = timing_setup(&cfg, seed)?;
        let n = cfg.sizes.nonmembers;
        let members = paired_members(&s.members, n);
        let delta = match cfg.delay {
            Some(d) => d,
            None => calibrate_delta(&mut s.model, &members, &s.nonmembers[n..], cfg.trim_fraction, cfg.cost.mode)?,
        };
        let policy = DelayPolicy { delta, trim_fraction: cfg.trim_fraction };
        let padded = ConstantDelay::new(s.model, policy)?;
        let mut defended: Box<dyn Pipeline> = if cfg.freeze_vocab { Box::new(Frozen::new(padded)) } else { Box::new(padded) };
        let run = timing_attack(defended.as_mut(), &members, &s.nonmembers[..n], cfg.sizes.repeats, cfg.cost.mode)?;
        runs.push(TimingSeedRun { seed, delta: Some(delta), run });
    }
    Ok(TimingOutcome { runs })
}
