use std::ops::AddAssign;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::network::Rows;
use super::{tokenize, NerModel};
use crate::corpus::AnnotatedDocument;
use crate::error::{Error, Result};
use crate::vocab::Origin;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub shuffle_seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 10,
            batch_size: 8,
            learning_rate: 0.05,
            shuffle_seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 || self.batch_size == 0 || self.learning_rate.is_nan() || self.learning_rate <= 0.0 {
            return Err(Error::InvalidConfig(
                "epochs, batch_size and learning_rate must be positive".into(),
            ));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochLog {
    pub epoch: usize,
    pub loss: f64,
    pub f1: Option<f64>,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainingLog {
    pub epochs: Vec<EpochLog>,
}

struct PreparedDoc {
    rows: Vec<Rows>,
    gold: Vec<usize>,
}

/// Mini-batch SGD over a fixed corpus. The corpus is tokenized and its
/// features interned once, when the trainer is built.
pub struct Trainer {
    docs: Vec<PreparedDoc>,
    config: TrainConfig,
    order: Vec<usize>,
    rng: ChaCha8Rng,
    epochs_run: usize,
}

impl Trainer {
    pub fn new(model: &mut NerModel, corpus: &[AnnotatedDocument], config: TrainConfig) -> Result<Self> {
        config.validate()?;
        let mut docs = Vec::with_capacity(corpus.len());
        for doc in corpus {
            let tokens = tokenize(&doc.text);
            let gold = model.gold_tags(&tokens, doc)?;
            let mut rows = Vec::with_capacity(tokens.len());
            for t in &tokens {
                let f = model.config.subword.features(&t.text);
                let lookup = model.vocab.lookup_features_from(&f, Origin::Training);
                rows.push(model.rows_from_ids(&f, &lookup));
            }
            if !rows.is_empty() {
                docs.push(PreparedDoc { rows, gold });
            }
        }
        Ok(Trainer {
            order: (0..docs.len()).collect(),
            docs,
            rng: ChaCha8Rng::seed_from_u64(config.shuffle_seed),
            config,
            epochs_run: 0,
        })
    }

    pub fn epochs_run(&self) -> usize {
        self.epochs_run
    }

    /// One pass over the shuffled corpus; returns the mean per-token loss.
    pub fn run_epoch(&mut self, model: &mut NerModel) -> f64 {
        self.order.shuffle(&mut self.rng);
        let mut loss = 0.0;
        let mut tokens = 0usize;
        for batch in self.order.chunks(self.config.batch_size) {
            let batch_tokens: usize = batch.iter().map(|&i| self.docs[i].gold.len()).sum();
            let scale = 1.0 / batch_tokens as f64;
            let mut grads = model.params.zero_grads();
            for &i in batch {
                let doc = &self.docs[i];
                let act = model.params.forward(&doc.rows);
                loss += model.params.backward(&doc.rows, &act, &doc.gold, scale, &mut grads);
            }
            model.params.sgd_step(&grads, self.config.learning_rate);
            tokens += batch_tokens;
        }
        self.epochs_run += 1;
        if tokens == 0 {
            0.0
        } else {
            loss / tokens as f64
        }
    }
}

impl NerModel {
    pub fn train(&mut self, corpus: &[AnnotatedDocument], config: &TrainConfig) -> Result<TrainingLog> {
        self.train_with_eval(corpus, config, None)
    }

    /// Trains for `config.epochs` epochs, recording the mean loss and, when
    /// an evaluation corpus is given, micro-F1 after every epoch.
    pub fn train_with_eval(
        &mut self,
        corpus: &[AnnotatedDocument],
        config: &TrainConfig,
        eval: Option<&[AnnotatedDocument]>,
    ) -> Result<TrainingLog> {
        let mut trainer = Trainer::new(self, corpus, config.clone())?;
        let mut log = TrainingLog::default();
        for epoch in 1..=config.epochs {
            let loss = trainer.run_epoch(self);
            log.epochs.push(EpochLog {
                epoch,
                loss,
                f1: eval.map(|e| self.micro_f1(e)),
            });
        }
        Ok(log)
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct F1Counts {
    pub true_positives: usize,
    pub predicted: usize,
    pub gold: usize,
}

impl AddAssign for F1Counts {
    fn add_assign(&mut self, rhs: Self) {
        self.true_positives += rhs.true_positives;
        self.predicted += rhs.predicted;
        self.gold += rhs.gold;
    }
}

impl F1Counts {
    pub fn precision(&self) -> f64 {
        ratio(self.true_positives, self.predicted)
    }

    pub fn recall(&self) -> f64 {
        ratio(self.true_positives, self.gold)
    }

    /// Zero denominators give zero.
    pub fn f1(&self) -> f64 {
        let (p, r) = (self.precision(), self.recall());
        if p + r == 0.0 {
            0.0
        } else {
            2.0 * p * r / (p + r)
        }
    }
}

fn ratio(a: usize, b: usize) -> f64 {
    if b == 0 {
        0.0
    } else {
        a as f64 / b as f64
    }
}

/// Exact-match counts for one document.
pub fn micro_f1_counts<T: PartialEq>(gold: &[T], predicted: &[T]) -> F1Counts {
    F1Counts {
        true_positives: predicted.iter().filter(|p| gold.contains(p)).count(),
        predicted: predicted.len(),
        gold: gold.len(),
    }
}
