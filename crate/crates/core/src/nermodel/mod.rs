//! The target pipeline: a per-token BILOU tagger over hash embeddings of
//! the four sub-word features, a windowed convolutional encoder, and a
//! softmax output layer. Every query goes through the model's vocabulary,
//! so querying has the same insert-on-miss side effect as training.

mod io;
mod labels;
mod network;
mod tokenize;
mod train;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::corpus::{AnnotatedDocument, EntitySpan};
use crate::error::{Error, Result};
use crate::subword::{SubwordConfig, SubwordFeatures};
use crate::vocab::{FeatureLookup, StringId, Vocabulary, UNKNOWN_ID};

pub use labels::{Bilou, LabelSet, Tag};
pub use tokenize::{tokenize, Token};
pub use train::{micro_f1_counts, EpochLog, F1Counts, TrainConfig, Trainer, TrainingLog};

use network::{Params, Rows};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelConfig {
    pub embed_rows_per_feature: usize,
    pub embed_dim_per_feature: usize,
    pub encoder_depth: usize,
    pub window: usize,
    pub hidden_dim: usize,
    pub seed: u64,
    pub subword: SubwordConfig,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            embed_rows_per_feature: 4096,
            embed_dim_per_feature: 16,
            encoder_depth: 3,
            window: 1,
            hidden_dim: 64,
            seed: 0,
            subword: SubwordConfig::default(),
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        if self.embed_rows_per_feature < 2 {
            return Err(Error::InvalidConfig(
                "embed_rows_per_feature must be at least 2 (row 0 is reserved)".into(),
            ));
        }
        if self.embed_dim_per_feature == 0
            || self.encoder_depth == 0
            || self.window == 0
            || self.hidden_dim == 0
        {
            return Err(Error::InvalidConfig("model dimensions must be positive".into()));
        }
        self.subword.validate()
    }

    /// Number of tokens one output position can see.
    pub fn receptive_field(&self) -> usize {
        self.encoder_depth * (2 * self.window + 1)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EntityPrediction {
    pub start: usize,
    pub end: usize,
    pub label: String,
    pub score: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct QueryResult {
    pub tokens: Vec<Token>,
    pub tag_distributions: Vec<Vec<f64>>,
    pub entities: Vec<EntityPrediction>,
    /// Feature strings that were absent from the vocabulary.
    pub misses: usize,
    /// Summed vocabulary cost of the query, plus any added delay.
    pub cost: f64,
}

/// Anything that answers black-box NER queries.
pub trait Pipeline {
    fn predict(&mut self, text: &str) -> QueryResult;

    /// Mean log-probability of the gold BILOU tags of `label` over the
    /// tokens of `start..end` (character offsets).
    fn log_score_span(&mut self, text: &str, start: usize, end: usize, label: &str) -> Result<f64>;

    /// Geometric mean of the per-token gold-tag probabilities.
    fn score_span(&mut self, text: &str, start: usize, end: usize, label: &str) -> Result<f64> {
        Ok(self.log_score_span(text, start, end, label)?.exp())
    }

    fn freeze_vocabulary(&mut self);

    fn vocabulary(&self) -> &Vocabulary;
}

/// 64-bit FNV-1a over the UTF-8 bytes.
pub fn fnv1a64(s: &str) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in s.bytes() {
        h ^= u64::from(b);
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    h
}

/// Token-index range `(first, last)` covering exactly `start..end`.
pub fn align_span(tokens: &[Token], start: usize, end: usize) -> Result<(usize, usize)> {
    let first = tokens.iter().position(|t| t.start == start);
    let last = tokens.iter().position(|t| t.end == end);
    match (first, last) {
        (Some(i), Some(j)) if i <= j => Ok((i, j)),
        _ => Err(Error::Alignment { start, end }),
    }
}

/// Token-index range of every token overlapping `start..end`. Annotation
/// spans that cut into a token (`Alice` inside `Alice's`) widen to it.
pub fn snap_span(tokens: &[Token], start: usize, end: usize) -> Result<(usize, usize)> {
    let first = tokens.iter().position(|t| t.end > start);
    let last = tokens.iter().rposition(|t| t.start < end);
    match (first, last) {
        (Some(i), Some(j)) if i <= j && start < end => Ok((i, j)),
        _ => Err(Error::Alignment { start, end }),
    }
}

/// Snaps every entity of a document to tokens, rejecting spans that end up
/// sharing a token. Results are sorted by position.
pub fn snap_entities(tokens: &[Token], entities: &[EntitySpan]) -> Result<Vec<(usize, usize, String)>> {
    let mut out = Vec::with_capacity(entities.len());
    for e in entities {
        let (i, j) = snap_span(tokens, e.start, e.end)?;
        out.push((i, j, e.label.clone()));
    }
    out.sort();
    for w in out.windows(2) {
        if w[0].1 >= w[1].0 {
            let (s, e) = (tokens[w[1].0].start, tokens[w[1].1].end);
            return Err(Error::Alignment { start: s, end: e });
        }
    }
    Ok(out)
}

#[derive(Clone, Debug)]
pub struct NerModel {
    config: ModelConfig,
    labels: LabelSet,
    params: Params,
    vocab: Vocabulary,
}

impl PartialEq for NerModel {
    fn eq(&self, other: &Self) -> bool {
        self.config == other.config
            && self.labels == other.labels
            && self.params == other.params
            && self.vocab == other.vocab
    }
}

impl NerModel {
    pub fn new(config: ModelConfig, labels: LabelSet) -> Result<Self> {
        NerModel::with_vocabulary(config, labels, Vocabulary::default())
    }

    pub fn with_vocabulary(config: ModelConfig, labels: LabelSet, vocab: Vocabulary) -> Result<Self> {
        config.validate()?;
        if labels.is_empty() {
            return Err(Error::InvalidConfig("label set is empty".into()));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let params = Params::init(&config, labels.tag_count(), &mut rng);
        Ok(NerModel {
            config,
            labels,
            params,
            vocab,
        })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn labels(&self) -> &LabelSet {
        &self.labels
    }

    pub fn vocab(&self) -> &Vocabulary {
        &self.vocab
    }

    pub fn vocab_mut(&mut self) -> &mut Vocabulary {
        &mut self.vocab
    }

    pub fn features(&self, word: &str) -> SubwordFeatures {
        self.config.subword.features(word)
    }

    fn row_for(&self, s: &str) -> usize {
        1 + (fnv1a64(s) % (self.config.embed_rows_per_feature as u64 - 1)) as usize
    }

    fn rows_from_ids(&self, f: &SubwordFeatures, lookup: &FeatureLookup) -> Rows {
        let pick = |s: &str, id: StringId| if id == UNKNOWN_ID { 0 } else { self.row_for(s) };
        [
            pick(&f.prefix, lookup.prefix),
            pick(&f.suffix, lookup.suffix),
            pick(&f.norm, lookup.norm),
            pick(&f.shape, lookup.shape),
        ]
    }

    /// Embedding rows without touching the vocabulary: identical to the
    /// rows a lookup would produce, since only a frozen table can refuse
    /// a string.
    fn rows_readonly(&self, f: &SubwordFeatures) -> Rows {
        let pick = |s: &str| {
            if self.vocab.is_frozen() && !self.vocab.contains(s) {
                0
            } else {
                self.row_for(s)
            }
        };
        [pick(&f.prefix), pick(&f.suffix), pick(&f.norm), pick(&f.shape)]
    }

    /// Concatenated (prefix | suffix | norm | shape) embedding of one token.
    pub fn embed_token(&self, f: &SubwordFeatures) -> Vec<f64> {
        self.params.embed_rows(&[self.rows_readonly(f)]).into_raw_vec_and_offset().0
    }

    /// Contextual encodings (output of the last encoder layer) for a
    /// sequence of embeddings as produced by [`NerModel::embed_token`].
    pub fn encode(&self, embeddings: &[Vec<f64>]) -> Vec<Vec<f64>> {
        if embeddings.is_empty() {
            return Vec::new();
        }
        let width = 4 * self.config.embed_dim_per_feature;
        let flat: Vec<f64> = embeddings.iter().flat_map(|e| e.iter().copied()).collect();
        let input = ndarray::Array2::from_shape_vec((embeddings.len(), width), flat)
            .expect("embedding width");
        let mut h = input.dot(&self.params.proj_w) + &self.params.proj_b;
        for (w, b) in self.params.conv_w.iter().zip(&self.params.conv_b) {
            let u = network::windowed(&h, self.config.window);
            h = (u.dot(w) + b).mapv(|v| v.max(0.0));
        }
        h.rows().into_iter().map(|r| r.to_vec()).collect()
    }

    fn lookup_tokens(&mut self, tokens: &[Token]) -> (Vec<Rows>, usize, f64) {
        let mut rows = Vec::with_capacity(tokens.len());
        let mut misses = 0;
        let mut cost = 0.0;
        for t in tokens {
            let f = self.config.subword.features(&t.text);
            let lookup = self.vocab.lookup_features(&f);
            misses += usize::from(lookup.miss_count);
            cost += lookup.total_cost;
            rows.push(self.rows_from_ids(&f, &lookup));
        }
        (rows, misses, cost)
    }

    fn analyze(&self, tokens: Vec<Token>, rows: &[Rows], misses: usize, cost: f64) -> QueryResult {
        if tokens.is_empty() {
            return QueryResult {
                tokens,
                tag_distributions: Vec::new(),
                entities: Vec::new(),
                misses,
                cost,
            };
        }
        let probs = network::softmax(&self.params.logits(rows));
        let tag_distributions: Vec<Vec<f64>> = probs.rows().into_iter().map(|r| r.to_vec()).collect();
        let entities = self.decode(&tokens, &tag_distributions);
        QueryResult {
            tokens,
            tag_distributions,
            entities,
            misses,
            cost,
        }
    }

    /// Greedy argmax decoding. `I`/`L` tags that do not continue an open
    /// entity of the same label are treated as `O`; a `B` run that never
    /// reaches its `L` is dropped.
    fn decode(&self, tokens: &[Token], dists: &[Vec<f64>]) -> Vec<EntityPrediction> {
        let mut entities = Vec::new();
        let mut open: Option<(usize, usize, f64)> = None;
        for (i, dist) in dists.iter().enumerate() {
            let (best, p) = dist
                .iter()
                .copied()
                .enumerate()
                .fold((0, f64::NEG_INFINITY), |acc, (k, v)| if v > acc.1 { (k, v) } else { acc });
            let mut emit = |label: usize, first: usize, log_sum: f64| {
                let len = (i - first + 1) as f64;
                entities.push(EntityPrediction {
                    start: tokens[first].start,
                    end: tokens[i].end,
                    label: self.labels.labels()[label].clone(),
                    score: (log_sum / len).exp(),
                });
            };
            open = match self.labels.tag(best) {
                Tag::Outside => None,
                Tag::Entity { label, position } => match (position, open) {
                    (Bilou::Unit, _) => {
                        emit(label, i, p.ln());
                        None
                    }
                    (Bilou::Begin, _) => Some((label, i, p.ln())),
                    (Bilou::Inside, Some((l, first, s))) if l == label => Some((l, first, s + p.ln())),
                    (Bilou::Last, Some((l, first, s))) if l == label => {
                        emit(l, first, s + p.ln());
                        None
                    }
                    _ => None,
                },
            };
        }
        entities
    }

    /// Runs a query through the vocabulary (inserting unseen features
    /// unless frozen) and the network.
    pub fn predict(&mut self, text: &str) -> QueryResult {
        let tokens = tokenize(text);
        let (rows, misses, cost) = self.lookup_tokens(&tokens);
        self.analyze(tokens, &rows, misses, cost)
    }

    /// Like [`NerModel::predict`] but leaves the vocabulary untouched.
    pub fn predict_quiet(&self, text: &str) -> QueryResult {
        let tokens = tokenize(text);
        let rows: Vec<Rows> = tokens
            .iter()
            .map(|t| self.rows_readonly(&self.config.subword.features(&t.text)))
            .collect();
        self.analyze(tokens, &rows, 0, 0.0)
    }

    fn span_log_score(&self, rows: &[Rows], first: usize, last: usize, label: usize) -> f64 {
        let log_probs = network::log_softmax(&self.params.logits(rows));
        let tags = self.labels.span_tags(label, last - first + 1);
        let total: f64 = tags
            .iter()
            .enumerate()
            .map(|(k, &tag)| log_probs[[first + k, tag]])
            .sum();
        total / tags.len() as f64
    }

    pub fn log_score_span(&mut self, text: &str, start: usize, end: usize, label: &str) -> Result<f64> {
        let tokens = tokenize(text);
        let (first, last) = align_span(&tokens, start, end)?;
        let label = self.labels.index_of(label)?;
        let (rows, _, _) = self.lookup_tokens(&tokens);
        Ok(self.span_log_score(&rows, first, last, label))
    }

    pub fn score_span(&mut self, text: &str, start: usize, end: usize, label: &str) -> Result<f64> {
        Ok(self.log_score_span(text, start, end, label)?.exp())
    }

    /// Scores a span without touching the vocabulary.
    pub fn log_score_span_quiet(&self, text: &str, start: usize, end: usize, label: &str) -> Result<f64> {
        let tokens = tokenize(text);
        let (first, last) = align_span(&tokens, start, end)?;
        let label = self.labels.index_of(label)?;
        let rows: Vec<Rows> = tokens
            .iter()
            .map(|t| self.rows_readonly(&self.config.subword.features(&t.text)))
            .collect();
        Ok(self.span_log_score(&rows, first, last, label))
    }

    /// Micro-averaged F1 over exact (start, end, label) matches. Leaves the
    /// vocabulary untouched.
    pub fn micro_f1(&self, corpus: &[AnnotatedDocument]) -> f64 {
        let mut counts = F1Counts::default();
        for doc in corpus {
            let predicted: Vec<(usize, usize, String)> = self
                .predict_quiet(&doc.text)
                .entities
                .into_iter()
                .map(|e| (e.start, e.end, e.label))
                .collect();
            let tokens = tokenize(&doc.text);
            let gold: Vec<(usize, usize, String)> = snap_entities(&tokens, &doc.entities)
                .unwrap_or_default()
                .into_iter()
                .map(|(i, j, label)| (tokens[i].start, tokens[j].end, label))
                .collect();
            counts += micro_f1_counts(&gold, &predicted);
        }
        counts.f1()
    }

    /// Gold tag indices for a document, validating alignment and labels.
    fn gold_tags(&self, tokens: &[Token], doc: &AnnotatedDocument) -> Result<Vec<usize>> {
        let mut gold = vec![0; tokens.len()];
        for (first, last, label) in snap_entities(tokens, &doc.entities)? {
            let label = self.labels.index_of(&label)?;
            for (k, tag) in self.labels.span_tags(label, last - first + 1).into_iter().enumerate() {
                gold[first + k] = tag;
            }
        }
        Ok(gold)
    }

    /// Mean per-token cross-entropy of a document under the current
    /// parameters (no vocabulary mutation).
    pub fn loss(&self, doc: &AnnotatedDocument) -> Result<f64> {
        let (rows, gold) = self.prepare_readonly(doc)?;
        let lp = network::log_softmax(&self.params.logits(&rows));
        let total: f64 = gold.iter().enumerate().map(|(i, &g)| -lp[[i, g]]).sum();
        Ok(total / gold.len() as f64)
    }

    /// Analytic gradient of [`NerModel::loss`], one dense tensor per
    /// parameter in [`NerModel::parameter_names`] order.
    pub fn gradients(&self, doc: &AnnotatedDocument) -> Result<Vec<Vec<f64>>> {
        let (rows, gold) = self.prepare_readonly(doc)?;
        let act = self.params.forward(&rows);
        let mut grads = self.params.zero_grads();
        self.params
            .backward(&rows, &act, &gold, 1.0 / gold.len() as f64, &mut grads);
        Ok(grads.dense(&self.params))
    }

    fn prepare_readonly(&self, doc: &AnnotatedDocument) -> Result<(Vec<Rows>, Vec<usize>)> {
        let tokens = tokenize(&doc.text);
        if tokens.is_empty() {
            return Err(Error::EmptyInput("document has no tokens"));
        }
        let gold = self.gold_tags(&tokens, doc)?;
        let rows = tokens
            .iter()
            .map(|t| self.rows_readonly(&self.config.subword.features(&t.text)))
            .collect();
        Ok((rows, gold))
    }

    /// Parameter tensors as `(name, shape)` in serialization order.
    pub fn parameter_names(&self) -> Vec<(String, Vec<usize>)> {
        self.params
            .tensors()
            .into_iter()
            .map(|(name, shape, _)| (name, shape))
            .collect()
    }

    pub fn parameters(&self) -> Vec<&[f64]> {
        self.params.tensors().into_iter().map(|(_, _, v)| v).collect()
    }

    pub fn parameters_mut(&mut self) -> Vec<&mut [f64]> {
        self.params.tensors_mut()
    }
}

impl Pipeline for NerModel {
    fn predict(&mut self, text: &str) -> QueryResult {
        NerModel::predict(self, text)
    }

    fn log_score_span(&mut self, text: &str, start: usize, end: usize, label: &str) -> Result<f64> {
        NerModel::log_score_span(self, text, start, end, label)
    }

    fn freeze_vocabulary(&mut self) {
        self.vocab.freeze();
    }

    fn vocabulary(&self) -> &Vocabulary {
        &self.vocab
    }
}
