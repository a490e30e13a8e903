//! Black-box attacks: secret ranking, confidence-score membership
//! inference, the vocabulary timing side channel, feature-distance
//! neighbor analysis, and a greedy feature hill-climb.

use std::collections::{BTreeMap, HashMap, HashSet};
use std::io::Write;
use std::time::Instant;

use rand::seq::IndexedRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::corpus::{PhraseTemplate, SpanQuery};
use crate::error::{Error, Result};
use crate::metrics::{self, RocCurve};
use crate::nermodel::Pipeline;
use crate::secrets::{common_password_list, same_class_char, DEFAULT_SYMBOLS};
use crate::subword::{char_shape, SubwordConfig};
use crate::vocab::CostMode;

/// Queries issued and discarded before wall-clock timing starts.
pub const WARMUP_QUERIES: usize = 100;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CandidateScore {
    pub candidate: String,
    /// Mean log-probability of the secret's gold tags.
    pub score: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RankResult {
    pub target: String,
    /// Fraction of candidates scoring at least as high as the target.
    pub rank: f64,
    /// `rank - 1/|R|`: zero when the target scores strictly highest.
    pub rank0: f64,
    pub scores: Vec<CandidateScore>,
}

impl RankResult {
    pub fn target_score(&self) -> f64 {
        self.scores
            .iter()
            .find(|c| c.candidate == self.target)
            .map(|c| c.score)
            .expect("target is scored")
    }

    /// `candidate,score,is_target,f_distance`
    pub fn write_csv<W: Write>(&self, cfg: &SubwordConfig, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["candidate", "score", "is_target", "f_distance"])?;
        for c in &self.scores {
            w.write_record([
                c.candidate.clone(),
                c.score.to_string(),
                u8::from(c.candidate == self.target).to_string(),
                cfg.f_distance(&c.candidate, &self.target).to_string(),
            ])?;
        }
        w.flush()?;
        Ok(())
    }
}

/// Scores `t` rendered with every candidate and ranks the target.
pub fn rank_attack<P: Pipeline + ?Sized>(
    model: &mut P,
    t: &PhraseTemplate,
    candidates: &[String],
    target: &str,
) -> Result<RankResult> {
    let target_index = candidates
        .iter()
        .position(|c| c == target)
        .ok_or_else(|| Error::TargetAbsent(target.to_owned()))?;
    let mut seen = HashSet::with_capacity(candidates.len());
    if let Some(dup) = candidates.iter().find(|c| !seen.insert(c.as_str())) {
        return Err(Error::InvalidConfig(format!("duplicate candidate {dup:?}")));
    }
    let mut scores = Vec::with_capacity(candidates.len());
    for c in candidates {
        let q = t.query(c);
        let score = model.log_score_span(&q.text, q.start, q.end, &q.label)?;
        scores.push(CandidateScore {
            candidate: c.clone(),
            score,
        });
    }
    let values: Vec<f64> = scores.iter().map(|c| c.score).collect();
    let rank = metrics::normalized_rank(&values, target_index);
    Ok(RankResult {
        target: target.to_owned(),
        rank,
        rank0: rank - 1.0 / candidates.len() as f64,
        scores,
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Truth {
    Member,
    NonMember,
}

impl Truth {
    pub fn name(self) -> &'static str {
        match self {
            Truth::Member => "member",
            Truth::NonMember => "non-member",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MiSample {
    pub text: String,
    pub truth: Truth,
    pub score: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MiResult {
    pub samples: Vec<MiSample>,
    pub roc: RocCurve,
    pub auc: f64,
}

fn split_scores<'a>(samples: impl Iterator<Item = &'a MiSample>, positive: Truth) -> (Vec<f64>, Vec<f64>) {
    let mut pos = Vec::new();
    let mut neg = Vec::new();
    for s in samples {
        if s.truth == positive {
            pos.push(s.score);
        } else {
            neg.push(s.score);
        }
    }
    (pos, neg)
}

/// Confidence-score attack: higher span confidence means member.
pub fn mi_confidence_attack<P: Pipeline + ?Sized>(
    model: &mut P,
    members: &[SpanQuery],
    nonmembers: &[SpanQuery],
) -> Result<MiResult> {
    if members.is_empty() || nonmembers.is_empty() {
        return Err(Error::EmptyInput("membership inference sample set"));
    }
    let mut samples = Vec::with_capacity(members.len() + nonmembers.len());
    for (set, truth) in [(members, Truth::Member), (nonmembers, Truth::NonMember)] {
        for q in set {
            samples.push(MiSample {
                text: q.span_text(),
                truth,
                score: model.score_span(&q.text, q.start, q.end, &q.label)?,
            });
        }
    }
    let (pos, neg) = split_scores(samples.iter(), Truth::Member);
    Ok(MiResult {
        roc: metrics::roc_curve(&pos, &neg)?,
        auc: metrics::auc(&pos, &neg)?,
        samples,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TimingSample {
    pub word: String,
    pub truth: Truth,
    /// 1-based.
    pub repeat: usize,
    /// Nanoseconds in wall-clock mode, cost units in simulated mode.
    pub duration: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RepeatAuc {
    pub repeat: usize,
    pub roc: RocCurve,
    pub auc: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TimingRun {
    pub mode: CostMode,
    pub repeats: usize,
    /// In issue order.
    pub samples: Vec<TimingSample>,
    pub per_repeat: Vec<RepeatAuc>,
}

impl TimingRun {
    pub fn durations(&self, truth: Truth, repeat: usize) -> Vec<f64> {
        self.samples
            .iter()
            .filter(|s| s.truth == truth && s.repeat == repeat)
            .map(|s| s.duration)
            .collect()
    }

    pub fn auc(&self, repeat: usize) -> Option<f64> {
        self.per_repeat.iter().find(|r| r.repeat == repeat).map(|r| r.auc)
    }

    /// `word,truth,repeat,duration_ns,score`; the score is the duration.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["word", "truth", "repeat", "duration_ns", "score"])?;
        for s in &self.samples {
            let d = s.duration.to_string();
            w.write_record([s.word.as_str(), s.truth.name(), &s.repeat.to_string(), &d, &d])?;
        }
        w.flush()?;
        Ok(())
    }
}

/// One single-word query, timed either on the monotonic clock or by the
/// vocabulary cost model.
pub fn time_query<P: Pipeline + ?Sized>(model: &mut P, word: &str, mode: CostMode) -> f64 {
    match mode {
        CostMode::Simulated => model.predict(word).cost,
        CostMode::WallClock => {
            let start = Instant::now();
            let r = model.predict(word);
            let elapsed = start.elapsed().as_nanos() as f64;
            std::hint::black_box(r);
            elapsed
        }
    }
}

/// Issues single-word queries alternating member / non-member, `repeats`
/// times over the lists. Non-members (the slower class) are the positives.
pub fn timing_attack<P: Pipeline + ?Sized>(
    model: &mut P,
    members: &[String],
    nonmembers: &[String],
    repeats: usize,
    mode: CostMode,
) -> Result<TimingRun> {
    if members.len() != nonmembers.len() {
        return Err(Error::LengthMismatch {
            left: members.len(),
            right: nonmembers.len(),
        });
    }
    if members.is_empty() {
        return Err(Error::EmptyInput("timing word lists"));
    }
    if repeats == 0 {
        return Err(Error::InvalidConfig("repeats must be at least 1".into()));
    }
    if mode == CostMode::WallClock {
        for word in members.iter().cycle().take(WARMUP_QUERIES) {
            std::hint::black_box(model.predict(word));
        }
    }
    let mut samples = Vec::with_capacity(2 * members.len() * repeats);
    for repeat in 1..=repeats {
        for (m, n) in members.iter().zip(nonmembers) {
            for (word, truth) in [(m, Truth::Member), (n, Truth::NonMember)] {
                let duration = time_query(model, word, mode);
                samples.push(TimingSample {
                    word: word.clone(),
                    truth,
                    repeat,
                    duration,
                });
            }
        }
    }
    let mut per_repeat = Vec::with_capacity(repeats);
    for repeat in 1..=repeats {
        let pos: Vec<f64> = samples
            .iter()
            .filter(|s| s.repeat == repeat && s.truth == Truth::NonMember)
            .map(|s| s.duration)
            .collect();
        let neg: Vec<f64> = samples
            .iter()
            .filter(|s| s.repeat == repeat && s.truth == Truth::Member)
            .map(|s| s.duration)
            .collect();
        per_repeat.push(RepeatAuc {
            repeat,
            roc: metrics::roc_curve(&pos, &neg)?,
            auc: metrics::auc(&pos, &neg)?,
        });
    }
    Ok(TimingRun {
        mode,
        repeats,
        samples,
        per_repeat,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NeighborBin {
    pub distance: usize,
    pub count: usize,
    pub mean_rank: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NeighborTable {
    pub bins: Vec<NeighborBin>,
    pub ranks: RankResult,
}

impl NeighborTable {
    /// Spearman correlation between bin distance and bin mean rank.
    pub fn spearman(&self) -> Option<f64> {
        let d: Vec<f64> = self.bins.iter().map(|b| b.distance as f64).collect();
        let r: Vec<f64> = self.bins.iter().map(|b| b.mean_rank).collect();
        metrics::spearman(&d, &r)
    }

    /// `distance,count,mean_rank`
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["distance", "count", "mean_rank"])?;
        for b in &self.bins {
            w.write_record([b.distance.to_string(), b.count.to_string(), b.mean_rank.to_string()])?;
        }
        w.flush()?;
        Ok(())
    }
}

/// Ranks every candidate and averages the normalized ranks per
/// f-distance to the target, ascending by distance.
pub fn neighbor_analysis<P: Pipeline + ?Sized>(
    model: &mut P,
    t: &PhraseTemplate,
    target: &str,
    candidates: &[String],
    cfg: &SubwordConfig,
) -> Result<NeighborTable> {
    let ranks = rank_attack(model, t, candidates, target)?;
    let values: Vec<f64> = ranks.scores.iter().map(|c| c.score).collect();
    let normalized = metrics::normalized_ranks(&values);
    let mut bins: BTreeMap<usize, (usize, f64)> = BTreeMap::new();
    for (c, r) in ranks.scores.iter().zip(normalized) {
        let entry = bins.entry(cfg.f_distance(target, &c.candidate)).or_default();
        entry.0 += 1;
        entry.1 += r;
    }
    Ok(NeighborTable {
        bins: bins
            .into_iter()
            .map(|(distance, (count, sum))| NeighborBin {
                distance,
                count,
                mean_rank: sum / count as f64,
            })
            .collect(),
        ranks,
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Phase {
    Shape,
    Prefix,
    Suffix,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClimbStep {
    pub phase: Phase,
    pub candidate: String,
    pub score: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClimbResult {
    pub best: String,
    pub best_score: f64,
    pub shape: String,
    pub trace: Vec<ClimbStep>,
}

/// Per-character class patterns for words of `length`: those of listed
/// common passwords by frequency, then a few structured guesses.
fn shape_prior(length: usize) -> Vec<Vec<char>> {
    let mut counts: HashMap<Vec<char>, usize> = HashMap::new();
    let mut order = Vec::new();
    for &pw in common_password_list() {
        if pw.chars().count() != length {
            continue;
        }
        let pattern: Vec<char> = pw.chars().map(sample_char_for).collect();
        let n = counts.entry(pattern.clone()).or_insert(0);
        if *n == 0 {
            order.push(pattern);
        }
        *n += 1;
    }
    order.sort_by_key(|p| std::cmp::Reverse(counts[p]));
    for digits in 0..length.min(5) {
        let letters = length - digits;
        for capital in [true, false] {
            let mut p: Vec<char> = (0..letters).map(|i| if i == 0 && capital { 'A' } else { 'a' }).collect();
            p.extend(std::iter::repeat_n('0', digits));
            if !order.contains(&p) {
                order.push(p);
            }
        }
    }
    order
}

/// Representative character for a class: `A`, `a`, `0` or the symbol.
fn sample_char_for(c: char) -> char {
    match char_shape(c) {
        'X' => 'A',
        'x' => 'a',
        'd' => '0',
        other => other,
    }
}

fn random_pattern<R: Rng>(length: usize, rng: &mut R) -> Vec<char> {
    let symbols: Vec<char> = DEFAULT_SYMBOLS.chars().collect();
    (0..length)
        .map(|_| match rng.random_range(0..4) {
            0 => 'a',
            1 => 'A',
            2 => '0',
            _ => *symbols.choose(rng).expect("symbols"),
        })
        .collect()
}

/// Greedy three-phase search for a secret of known length: pick the best
/// class pattern from scored random fills, then the best first character,
/// then the best final characters. Issues at most `budget` queries.
pub fn hill_climb_extract<P: Pipeline + ?Sized, R: Rng>(
    model: &mut P,
    t: &PhraseTemplate,
    length: usize,
    budget: usize,
    cfg: &SubwordConfig,
    rng: &mut R,
) -> Result<ClimbResult> {
    if budget == 0 {
        return Err(Error::InvalidConfig("hill-climb budget must be positive".into()));
    }
    if length == 0 {
        return Err(Error::InvalidConfig("secret length must be positive".into()));
    }
    let mut trace: Vec<ClimbStep> = Vec::with_capacity(budget);
    let probe = |model: &mut P, phase: Phase, candidate: String, trace: &mut Vec<ClimbStep>| -> Result<Option<f64>> {
        if trace.len() >= budget {
            return Ok(None);
        }
        let q = t.query(&candidate);
        let score = model.log_score_span(&q.text, q.start, q.end, &q.label)?;
        trace.push(ClimbStep { phase, candidate, score });
        Ok(Some(score))
    };
    let fill = |pattern: &[char], rng: &mut R| -> String { pattern.iter().map(|&c| same_class_char(c, rng)).collect() };

    let shape_budget = if budget < 4 { budget } else { budget / 2 };
    let prior = shape_prior(length);
    let mut best: Option<(Vec<char>, String, f64)> = None;
    for i in 0..shape_budget {
        let pattern = match prior.get(i) {
            Some(p) => p.clone(),
            None => random_pattern(length, rng),
        };
        let candidate = fill(&pattern, rng);
        let Some(score) = probe(model, Phase::Shape, candidate.clone(), &mut trace)? else { break };
        if best.as_ref().is_none_or(|b| score > b.2) {
            best = Some((pattern, candidate, score));
        }
    }
    let (pattern, mut current, mut current_score) = best.expect("at least one probe");

    let pre = cfg.prefix_len.min(length);
    let first_class = |c: char| -> Vec<char> {
        match char_shape(c) {
            'X' => ('A'..='Z').collect(),
            'x' => ('a'..='z').collect(),
            'd' => ('0'..='9').collect(),
            _ => vec![c],
        }
    };
    if pre > 0 {
        let base: Vec<char> = current.chars().collect();
        for option in first_class(pattern[0]) {
            if option == base[0] {
                continue;
            }
            let mut chars = base.clone();
            chars[0] = option;
            let candidate: String = chars.into_iter().collect();
            let Some(score) = probe(model, Phase::Prefix, candidate.clone(), &mut trace)? else { break };
            if score > current_score {
                current = candidate;
                current_score = score;
            }
        }
    }

    let suf = cfg.suffix_len.min(length.saturating_sub(pre));
    if suf > 0 {
        let head: Vec<char> = current.chars().take(length - suf).collect();
        while trace.len() < budget {
            let tail: String = pattern[length - suf..].iter().map(|&c| same_class_char(c, rng)).collect();
            let candidate: String = head.iter().copied().collect::<String>() + &tail;
            if candidate == current {
                continue;
            }
            let Some(score) = probe(model, Phase::Suffix, candidate.clone(), &mut trace)? else { break };
            if score > current_score {
                current = candidate;
                current_score = score;
            }
        }
    }

    Ok(ClimbResult {
        shape: cfg.shape(&current),
        best: current,
        best_score: current_score,
        trace,
    })
}
