//! Interning string table consulted once per sub-word feature of every
//! token. Absent strings are inserted on lookup unless the table is frozen,
//! and each lookup reports a cost so the insert-on-miss latency can be
//! observed either on the wall clock or through a deterministic model.

use std::collections::HashMap;
use std::io::{BufRead, Write};
use std::time::Instant;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::subword::SubwordFeatures;

pub type StringId = u32;

/// Returned for absent strings looked up in a frozen table.
pub const UNKNOWN_ID: StringId = StringId::MAX;

const HEADER_PREFIX: &str = "nerleak-vocab v1";

/// Who is touching the table. Only query-time insertions leave the residual
/// cost that the next lookup of the same string pays.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Origin {
    Training,
    Query,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CostMode {
    WallClock,
    Simulated,
}

/// Cost units are abstract in simulated mode and nanoseconds in wall-clock mode.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CostModel {
    pub mode: CostMode,
    pub hit_cost: f64,
    pub miss_cost: f64,
    pub residual_miss_cost: f64,
    pub noise_seed: u64,
    pub noise_scale: f64,
}

impl Default for CostModel {
    fn default() -> Self {
        CostModel {
            mode: CostMode::Simulated,
            hit_cost: 1.0,
            miss_cost: 10.0,
            residual_miss_cost: 0.0,
            noise_seed: 0,
            noise_scale: 0.0,
        }
    }
}

impl CostModel {
    pub fn wall_clock() -> Self {
        CostModel {
            mode: CostMode::WallClock,
            ..CostModel::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.mode == CostMode::Simulated
            && !(self.miss_cost >= self.hit_cost && self.hit_cost >= 0.0)
        {
            return Err(Error::InvalidConfig(
                "simulated costs need miss_cost >= hit_cost >= 0".into(),
            ));
        }
        if self.noise_scale < 0.0 || self.residual_miss_cost < 0.0 {
            return Err(Error::InvalidConfig(
                "noise_scale and residual_miss_cost must be non-negative".into(),
            ));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct VocabStats {
    pub lookups: u64,
    pub hits: u64,
    pub misses: u64,
    pub inserts: u64,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Interned {
    pub id: StringId,
    pub was_present: bool,
    pub cost: f64,
}

/// Result of probing the four features of one token, in probe order
/// (prefix, suffix, shape, norm).
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct FeatureLookup {
    pub prefix: StringId,
    pub suffix: StringId,
    pub shape: StringId,
    pub norm: StringId,
    pub miss_count: u8,
    pub total_cost: f64,
}

#[derive(Clone, Debug)]
pub struct Vocabulary {
    ids: HashMap<String, StringId>,
    strings: Vec<String>,
    // Set for strings inserted by a query and not yet looked up again.
    residual: Vec<bool>,
    frozen: bool,
    stats: VocabStats,
    cost: CostModel,
    noise: ChaCha8Rng,
}

impl Default for Vocabulary {
    fn default() -> Self {
        Vocabulary::new(CostModel::default())
    }
}

impl PartialEq for Vocabulary {
    fn eq(&self, other: &Self) -> bool {
        self.strings == other.strings && self.frozen == other.frozen
    }
}

impl Vocabulary {
    pub fn new(cost: CostModel) -> Self {
        let noise = ChaCha8Rng::seed_from_u64(cost.noise_seed);
        Vocabulary {
            ids: HashMap::new(),
            strings: Vec::new(),
            residual: Vec::new(),
            frozen: false,
            stats: VocabStats::default(),
            cost,
            noise,
        }
    }

    pub fn cost_model(&self) -> &CostModel {
        &self.cost
    }

    /// Replaces the cost model and reseeds its noise stream.
    pub fn set_cost_model(&mut self, cost: CostModel) {
        self.noise = ChaCha8Rng::seed_from_u64(cost.noise_seed);
        self.cost = cost;
    }

    pub fn len(&self) -> usize {
        self.strings.len()
    }

    pub fn is_empty(&self) -> bool {
        self.strings.is_empty()
    }

    pub fn is_frozen(&self) -> bool {
        self.frozen
    }

    pub fn stats(&self) -> VocabStats {
        self.stats
    }

    pub fn freeze(&mut self) {
        self.frozen = true;
    }

    pub fn contains(&self, s: &str) -> bool {
        self.ids.contains_key(s)
    }

    pub fn id(&self, s: &str) -> Option<StringId> {
        self.ids.get(s).copied()
    }

    pub fn get(&self, id: StringId) -> Option<&str> {
        self.strings.get(id as usize).map(String::as_str)
    }

    /// Interns `s` as a query would.
    pub fn intern(&mut self, s: &str) -> Interned {
        self.intern_from(s, Origin::Query)
    }

    pub fn intern_from(&mut self, s: &str, origin: Origin) -> Interned {
        let started = Instant::now();
        self.stats.lookups += 1;
        let (id, was_present, residual) = match self.ids.get(s) {
            Some(&id) => {
                self.stats.hits += 1;
                let residual = std::mem::take(&mut self.residual[id as usize]);
                (id, true, residual)
            }
            None => {
                self.stats.misses += 1;
                if self.frozen {
                    (UNKNOWN_ID, false, false)
                } else {
                    let id = self.strings.len() as StringId;
                    self.strings.push(s.to_owned());
                    self.ids.insert(s.to_owned(), id);
                    self.residual.push(origin == Origin::Query);
                    self.stats.inserts += 1;
                    (id, false, false)
                }
            }
        };
        let cost = match self.cost.mode {
            CostMode::WallClock => started.elapsed().as_nanos() as f64,
            CostMode::Simulated => self.simulated_cost(was_present, residual),
        };
        Interned {
            id,
            was_present,
            cost,
        }
    }

    fn simulated_cost(&mut self, was_present: bool, residual: bool) -> f64 {
        let mut cost = if was_present {
            self.cost.hit_cost
        } else {
            self.cost.miss_cost
        };
        if residual {
            cost += self.cost.residual_miss_cost;
        }
        if self.cost.noise_scale > 0.0 {
            let z: f64 = StandardNormal.sample(&mut self.noise);
            cost += z * self.cost.noise_scale;
        }
        cost.max(0.0)
    }

    pub fn lookup_features(&mut self, f: &SubwordFeatures) -> FeatureLookup {
        self.lookup_features_from(f, Origin::Query)
    }

    pub fn lookup_features_from(&mut self, f: &SubwordFeatures, origin: Origin) -> FeatureLookup {
        let mut miss_count = 0;
        let mut total_cost = 0.0;
        let mut probe = |s: &str| {
            let r = self.intern_from(s, origin);
            miss_count += u8::from(!r.was_present);
            total_cost += r.cost;
            r.id
        };
        let prefix = probe(&f.prefix);
        let suffix = probe(&f.suffix);
        let shape = probe(&f.shape);
        let norm = probe(&f.norm);
        FeatureLookup {
            prefix,
            suffix,
            shape,
            norm,
            miss_count,
            total_cost,
        }
    }

    /// Interned strings in id order.
    pub fn snapshot(&self) -> Vec<String> {
        self.strings.clone()
    }

    pub fn write_to<W: Write>(&self, mut out: W) -> Result<()> {
        writeln!(
            out,
            "{HEADER_PREFIX} count={} frozen={}",
            self.strings.len(),
            u8::from(self.frozen)
        )?;
        for s in &self.strings {
            if s.contains(['\n', '\r']) {
                return Err(Error::Format(format!(
                    "interned string {s:?} contains a line break"
                )));
            }
            writeln!(out, "{s}")?;
        }
        Ok(())
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let mut buf = Vec::new();
        self.write_to(&mut buf)?;
        Ok(buf)
    }

    /// Reads the line format written by [`Vocabulary::write_to`]. Statistics
    /// start from zero and the default cost model is attached.
    pub fn read_from<R: BufRead>(input: R) -> Result<Self> {
        let mut lines = input.lines();
        let header = lines.next().ok_or(Error::Truncated)??;
        let rest = header.strip_prefix(HEADER_PREFIX).ok_or_else(|| {
            match header.split_whitespace().take(2).collect::<Vec<_>>().as_slice() {
                ["nerleak-vocab", v] => Error::VersionMismatch {
                    found: (*v).to_owned(),
                    expected: "v1".into(),
                },
                _ => Error::Format(format!("bad vocabulary header {header:?}")),
            }
        })?;
        let mut count = None;
        let mut frozen = None;
        for field in rest.split_whitespace() {
            match field.split_once('=') {
                Some(("count", v)) => count = v.parse::<usize>().ok(),
                Some(("frozen", "0")) => frozen = Some(false),
                Some(("frozen", "1")) => frozen = Some(true),
                _ => return Err(Error::Format(format!("bad header field {field:?}"))),
            }
        }
        let (count, frozen) = count
            .zip(frozen)
            .ok_or_else(|| Error::Format("header needs count and frozen".into()))?;

        let mut vocab = Vocabulary::default();
        for _ in 0..count {
            let line = lines.next().ok_or(Error::Truncated)??;
            if vocab.ids.contains_key(&line) {
                return Err(Error::Format(format!("duplicate entry {line:?}")));
            }
            vocab.intern_from(&line, Origin::Training);
        }
        if lines.next().is_some() {
            return Err(Error::Format("more entries than declared".into()));
        }
        vocab.stats = VocabStats::default();
        vocab.frozen = frozen;
        Ok(vocab)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        Vocabulary::read_from(bytes)
    }
}
