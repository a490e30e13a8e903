//! Annotated documents, secret-phrase templates, synthetic corpus
//! generation, splitting, and the dummy-data substitution transform.

use std::collections::{BTreeMap, HashSet};
use std::path::Path;

use rand::seq::{IndexedRandom, SliceRandom};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nermodel::{align_span, snap_entities, tokenize};
use crate::secrets::{common_password_list, words, SecretKind};

/// Marks where the secret goes in a phrase template.
pub const PLACEHOLDER: char = '◆';

const BUNDLED_TEMPLATES: &str = include_str!("../data/templates.json");

#[derive(Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct EntitySpan {
    pub start: usize,
    pub end: usize,
    pub label: String,
}

impl EntitySpan {
    pub fn new(start: usize, end: usize, label: impl Into<String>) -> Self {
        EntitySpan {
            start,
            end,
            label: label.into(),
        }
    }
}

/// Text with character-offset entity spans.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct AnnotatedDocument {
    pub text: String,
    pub entities: Vec<EntitySpan>,
}

impl AnnotatedDocument {
    pub fn new(text: impl Into<String>, entities: Vec<EntitySpan>) -> Result<Self> {
        let doc = AnnotatedDocument {
            text: text.into(),
            entities,
        };
        doc.validate()?;
        Ok(doc)
    }

    pub fn validate(&self) -> Result<()> {
        let len = self.text.chars().count();
        let mut spans: Vec<&EntitySpan> = self.entities.iter().collect();
        spans.sort();
        for (i, e) in spans.iter().enumerate() {
            if e.start >= e.end || e.end > len {
                return Err(Error::Format(format!(
                    "span {}..{} out of bounds for text of {len} characters",
                    e.start, e.end
                )));
            }
            if e.label.is_empty() {
                return Err(Error::Format("empty entity label".into()));
            }
            if i > 0 && spans[i - 1].end > e.start {
                return Err(Error::Format(format!(
                    "overlapping spans at {}..{}",
                    e.start, e.end
                )));
            }
        }
        Ok(())
    }

    pub fn span_text(&self, span: &EntitySpan) -> String {
        self.text
            .chars()
            .skip(span.start)
            .take(span.end - span.start)
            .collect()
    }

    /// Errors if two spans widen onto a shared token.
    pub fn check_alignment(&self) -> Result<()> {
        snap_entities(&tokenize(&self.text), &self.entities).map(|_| ())
    }
}

/// A labelled span together with the text it is queried in.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SpanQuery {
    pub text: String,
    pub start: usize,
    pub end: usize,
    pub label: String,
}

impl SpanQuery {
    pub fn span_text(&self) -> String {
        self.text
            .chars()
            .skip(self.start)
            .take(self.end - self.start)
            .collect()
    }
}

/// Every span with `label`, each paired with the line of its document that
/// contains it (offsets rebased onto that line).
pub fn samples_for_label(corpus: &[AnnotatedDocument], label: &str) -> Vec<SpanQuery> {
    let mut out = Vec::new();
    for doc in corpus {
        let chars: Vec<char> = doc.text.chars().collect();
        for e in doc.entities.iter().filter(|e| e.label == label) {
            let line_start = chars[..e.start]
                .iter()
                .rposition(|&c| c == '\n')
                .map_or(0, |p| p + 1);
            let line_end = chars[e.end..]
                .iter()
                .position(|&c| c == '\n')
                .map_or(chars.len(), |p| e.end + p);
            out.push(SpanQuery {
                text: chars[line_start..line_end].iter().collect(),
                start: e.start - line_start,
                end: e.end - line_start,
                label: e.label.clone(),
            });
        }
    }
    out
}

#[derive(Serialize, Deserialize)]
struct CorpusFile {
    version: u32,
    documents: Vec<AnnotatedDocument>,
}

pub fn corpus_to_json(docs: &[AnnotatedDocument]) -> Result<String> {
    #[derive(Serialize)]
    struct Borrowed<'a> {
        version: u32,
        documents: &'a [AnnotatedDocument],
    }
    Ok(serde_json::to_string(&Borrowed {
        version: 1,
        documents: docs,
    })?)
}

pub fn corpus_from_json(json: &str) -> Result<Vec<AnnotatedDocument>> {
    let file: CorpusFile = serde_json::from_str(json)?;
    if file.version != 1 {
        return Err(Error::VersionMismatch {
            found: file.version.to_string(),
            expected: "1".into(),
        });
    }
    for doc in &file.documents {
        doc.validate()?;
    }
    Ok(file.documents)
}

pub fn read_corpus(path: impl AsRef<Path>) -> Result<Vec<AnnotatedDocument>> {
    corpus_from_json(&std::fs::read_to_string(path)?)
}

pub fn write_corpus(path: impl AsRef<Path>, docs: &[AnnotatedDocument]) -> Result<()> {
    std::fs::write(path, corpus_to_json(docs)?)?;
    Ok(())
}

/// A sentence with one placeholder for a secret, plus any fixed entities in
/// the surrounding text (offsets refer to the template string itself).
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct PhraseTemplate {
    pub template: String,
    pub fixed_entities: Vec<EntitySpan>,
    pub secret_label: String,
}

impl PhraseTemplate {
    pub fn new(
        template: impl Into<String>,
        fixed_entities: Vec<EntitySpan>,
        secret_label: impl Into<String>,
    ) -> Result<Self> {
        let t = PhraseTemplate {
            template: template.into(),
            fixed_entities,
            secret_label: secret_label.into(),
        };
        let count = t.template.chars().filter(|&c| c == PLACEHOLDER).count();
        if count != 1 {
            return Err(Error::InvalidConfig(format!(
                "template needs exactly one placeholder, found {count}"
            )));
        }
        let at = t.placeholder_offset();
        for e in &t.fixed_entities {
            if e.start <= at && at < e.end {
                return Err(Error::InvalidConfig(
                    "fixed entity overlaps the placeholder".into(),
                ));
            }
        }
        AnnotatedDocument::new(t.template.clone(), t.fixed_entities.clone())?;
        Ok(t)
    }

    /// `Alice's secret is ◆.` with `Alice` tagged PERSON.
    pub fn alice() -> Self {
        PhraseTemplate::new(
            "Alice's secret is ◆.",
            vec![EntitySpan::new(0, 5, "PERSON")],
            "SECRET",
        )
        .expect("valid built-in template")
    }

    /// A template with no fixed entities.
    pub fn bare(template: impl Into<String>, secret_label: impl Into<String>) -> Result<Self> {
        PhraseTemplate::new(template, Vec::new(), secret_label)
    }

    pub fn placeholder_offset(&self) -> usize {
        self.template
            .chars()
            .position(|c| c == PLACEHOLDER)
            .expect("validated template")
    }

    pub fn render_text(&self, secret: &str) -> String {
        self.template.replacen(PLACEHOLDER, secret, 1)
    }

    /// Character span the secret occupies once rendered.
    pub fn secret_span(&self, secret: &str) -> (usize, usize) {
        let start = self.placeholder_offset();
        (start, start + secret.chars().count())
    }

    pub fn render(&self, secret: &str) -> Result<AnnotatedDocument> {
        if secret.is_empty() || secret.chars().any(char::is_whitespace) {
            return Err(Error::TokenizationHazard(secret.to_owned()));
        }
        let at = self.placeholder_offset();
        let shift = secret.chars().count() - 1;
        let text = self.render_text(secret);
        let (start, end) = self.secret_span(secret);
        let mut entities: Vec<EntitySpan> = self
            .fixed_entities
            .iter()
            .map(|e| {
                let moved = if e.start > at { shift } else { 0 };
                EntitySpan::new(e.start + moved, e.end + moved, e.label.clone())
            })
            .collect();
        entities.push(EntitySpan::new(start, end, self.secret_label.clone()));
        entities.sort();
        let doc = AnnotatedDocument::new(text, entities)?;
        let tokens = tokenize(&doc.text);
        match align_span(&tokens, start, end) {
            Ok((i, j)) if i == j => {}
            _ => return Err(Error::TokenizationHazard(secret.to_owned())),
        }
        doc.check_alignment()?;
        Ok(doc)
    }

    pub fn query(&self, secret: &str) -> SpanQuery {
        let (start, end) = self.secret_span(secret);
        SpanQuery {
            text: self.render_text(secret),
            start,
            end,
            label: self.secret_label.clone(),
        }
    }
}

/// Adds `copies` rendered documents per secret at random positions.
/// Returns the new corpus and the indices of the inserted documents.
pub fn insert_phrases<R: Rng>(
    corpus: &[AnnotatedDocument],
    template: &PhraseTemplate,
    secrets: &[String],
    copies: usize,
    rng: &mut R,
) -> Result<(Vec<AnnotatedDocument>, Vec<usize>)> {
    if copies == 0 {
        return Err(Error::InvalidConfig("copies must be at least 1".into()));
    }
    let mut docs: Vec<(AnnotatedDocument, bool)> = corpus.iter().cloned().map(|d| (d, false)).collect();
    for secret in secrets {
        let doc = template.render(secret)?;
        for _ in 0..copies {
            let at = rng.random_range(0..=docs.len());
            docs.insert(at, (doc.clone(), true));
        }
    }
    let positions = docs
        .iter()
        .enumerate()
        .filter_map(|(i, (_, inserted))| inserted.then_some(i))
        .collect();
    Ok((docs.into_iter().map(|(d, _)| d).collect(), positions))
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct TemplateGroup {
    pub name: String,
    /// `None` for sentences without entities.
    pub label: Option<String>,
    /// For unlabeled groups with a placeholder: where the unannotated value
    /// comes from, `"word"` (ordinary words) or `"common-password"` (the
    /// bundled public password list).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub fill: Option<String>,
    pub templates: Vec<String>,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct TemplateBank {
    pub version: u32,
    pub groups: Vec<TemplateGroup>,
}

impl Default for TemplateBank {
    fn default() -> Self {
        TemplateBank::from_json(BUNDLED_TEMPLATES).expect("bundled templates are valid")
    }
}

impl TemplateBank {
    pub fn from_json(json: &str) -> Result<Self> {
        let bank: TemplateBank = serde_json::from_str(json)?;
        for g in &bank.groups {
            if g.templates.is_empty() {
                return Err(Error::InvalidConfig(format!("template group {} is empty", g.name)));
            }
            match (&g.label, g.fill.as_deref()) {
                (_, None) | (None, Some("word" | "common-password")) => {}
                (Some(_), Some(_)) => {
                    return Err(Error::InvalidConfig(format!("labeled group {} cannot set fill", g.name)));
                }
                (None, Some(other)) => {
                    return Err(Error::InvalidConfig(format!("unknown fill {other:?} in group {}", g.name)));
                }
            }
            for t in &g.templates {
                let holes = t.chars().filter(|&c| c == PLACEHOLDER).count();
                let want = usize::from(g.label.is_some() || g.fill.is_some());
                if holes != want {
                    return Err(Error::InvalidConfig(format!(
                        "template {t:?} in group {} has {holes} placeholders, expected {want}",
                        g.name
                    )));
                }
            }
        }
        Ok(bank)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        TemplateBank::from_json(&std::fs::read_to_string(path)?)
    }

    pub fn group(&self, name: &str) -> Result<&TemplateGroup> {
        self.groups
            .iter()
            .find(|g| g.name == name)
            .ok_or_else(|| Error::InvalidConfig(format!("no template group named {name:?}")))
    }

    /// Templates of a group as phrase templates.
    pub fn phrases(&self, name: &str) -> Result<Vec<PhraseTemplate>> {
        let group = self.group(name)?;
        let label = group
            .label
            .clone()
            .ok_or_else(|| Error::InvalidConfig(format!("group {name:?} has no entity label")))?;
        group
            .templates
            .iter()
            .map(|t| PhraseTemplate::bare(t.clone(), label.clone()))
            .collect()
    }
}

/// How many documents to draw from each template group.
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SynthSpec {
    pub groups: BTreeMap<String, usize>,
}

impl SynthSpec {
    pub fn new<S: Into<String>>(groups: impl IntoIterator<Item = (S, usize)>) -> Self {
        SynthSpec {
            groups: groups.into_iter().map(|(k, v)| (k.into(), v)).collect(),
        }
    }

    pub fn total(&self) -> usize {
        self.groups.values().sum()
    }
}

/// Generates one single-entity (or filler) document per requested slot,
/// with entity values drawn from the generator matching the group's label.
/// Entity values are distinct across the whole corpus, so any split of it
/// yields disjoint member and non-member inventories.
pub fn synth_corpus<R: Rng>(spec: &SynthSpec, bank: &TemplateBank, rng: &mut R) -> Result<Vec<AnnotatedDocument>> {
    let mut used = HashSet::new();
    let mut docs = Vec::with_capacity(spec.total());
    for (name, &count) in &spec.groups {
        let group = bank.group(name)?;
        let kind = match &group.label {
            Some(label) => Some(
                SecretKind::for_label(label).ok_or_else(|| Error::UnknownLabel(label.clone()))?,
            ),
            None => None,
        };
        for _ in 0..count {
            let template = group.templates.choose(rng).expect("non-empty group");
            let doc = match (&group.label, kind) {
                (Some(label), Some(kind)) => {
                    let value = unique_value(kind, &mut used, rng)?;
                    PhraseTemplate::bare(template.clone(), label.clone())?.render(&value)?
                }
                _ if group.fill.is_some() => {
                    let pool = match group.fill.as_deref() {
                        Some("word") => words(),
                        _ => common_password_list(),
                    };
                    let value = pool.choose(rng).expect("bundled list");
                    AnnotatedDocument::new(template.replacen(PLACEHOLDER, value, 1), Vec::new())?
                }
                _ => AnnotatedDocument::new(template.clone(), Vec::new())?,
            };
            docs.push(doc);
        }
    }
    docs.shuffle(rng);
    Ok(docs)
}

fn unique_value<R: Rng>(kind: SecretKind, used: &mut HashSet<String>, rng: &mut R) -> Result<String> {
    for _ in 0..10_000 {
        let v = kind.generate(rng);
        if used.insert(v.clone()) {
            return Ok(v);
        }
    }
    Err(Error::BudgetExhausted(format!(
        "no fresh {kind:?} value after 10000 draws"
    )))
}

/// Seeded, disjoint, exhaustive split; `round(fraction * n)` documents go
/// to the first part.
pub fn split<R: Rng>(
    corpus: &[AnnotatedDocument],
    train_fraction: f64,
    rng: &mut R,
) -> Result<(Vec<AnnotatedDocument>, Vec<AnnotatedDocument>)> {
    if !(train_fraction > 0.0 && train_fraction < 1.0) {
        return Err(Error::InvalidConfig(format!(
            "train fraction {train_fraction} outside (0, 1)"
        )));
    }
    let mut order: Vec<usize> = (0..corpus.len()).collect();
    order.shuffle(rng);
    let cut = (train_fraction * corpus.len() as f64).round() as usize;
    let pick = |idx: &[usize]| idx.iter().map(|&i| corpus[i].clone()).collect();
    Ok((pick(&order[..cut]), pick(&order[cut..])))
}

/// Replaces the text of every `label` span with a generated value that
/// differs from every original value of that label, re-basing offsets.
pub fn replace_with_dummy<R: Rng, G: FnMut(&mut R) -> String>(
    corpus: &[AnnotatedDocument],
    label: &str,
    mut generator: G,
    rng: &mut R,
) -> Result<Vec<AnnotatedDocument>> {
    let originals: HashSet<String> = corpus
        .iter()
        .flat_map(|d| {
            d.entities
                .iter()
                .filter(|e| e.label == label)
                .map(|e| d.span_text(e))
        })
        .collect();
    let mut out = Vec::with_capacity(corpus.len());
    for doc in corpus {
        if !doc.entities.iter().any(|e| e.label == label) {
            out.push(doc.clone());
            continue;
        }
        let chars: Vec<char> = doc.text.chars().collect();
        let mut spans = doc.entities.clone();
        spans.sort();
        let mut text = String::new();
        let mut cursor = 0;
        let mut entities = Vec::with_capacity(spans.len());
        for e in spans {
            text.extend(&chars[cursor..e.start]);
            let start = text.chars().count();
            if e.label == label {
                let mut value = generator(rng);
                let mut attempts = 0;
                while originals.contains(&value) || value.is_empty() {
                    attempts += 1;
                    if attempts > 1000 {
                        return Err(Error::BudgetExhausted(format!(
                            "dummy generator for {label} keeps repeating original values"
                        )));
                    }
                    value = generator(rng);
                }
                text.push_str(&value);
            } else {
                text.extend(&chars[e.start..e.end]);
            }
            entities.push(EntitySpan::new(start, text.chars().count(), e.label));
            cursor = e.end;
        }
        text.extend(&chars[cursor..]);
        out.push(AnnotatedDocument::new(text, entities)?);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::secrets::seeded;
    use proptest::prelude::*;

    #[test]
    fn render_offsets() {
        let t = PhraseTemplate::alice();
        let doc = t.render("qwertyui").unwrap();
        assert_eq!(doc.text, "Alice's secret is qwertyui.");
        assert_eq!(
            doc.entities,
            vec![EntitySpan::new(0, 5, "PERSON"), EntitySpan::new(18, 26, "SECRET")]
        );
        let doc = t.render("x").unwrap();
        assert_eq!(doc.entities[1], EntitySpan::new(18, 19, "SECRET"));
        assert!(matches!(t.render("two words"), Err(Error::TokenizationHazard(_))));
        assert!(matches!(t.render(""), Err(Error::TokenizationHazard(_))));
    }

    #[test]
    fn fixed_entities_after_placeholder_shift() {
        let t = PhraseTemplate::new("◆ belongs to Bob.", vec![EntitySpan::new(13, 16, "PERSON")], "SECRET").unwrap();
        let doc = t.render("hunter2").unwrap();
        let bob = doc.entities.iter().find(|e| e.label == "PERSON").unwrap();
        assert_eq!(doc.span_text(bob), "Bob");
    }

    #[test]
    fn template_validation() {
        assert!(PhraseTemplate::bare("no hole", "SECRET").is_err());
        assert!(PhraseTemplate::bare("◆ and ◆", "SECRET").is_err());
        assert!(PhraseTemplate::new("Bob◆ x", vec![EntitySpan::new(0, 4, "PERSON")], "S").is_err());
    }

    #[test]
    fn trailing_punctuation_secret_is_hazard() {
        let t = PhraseTemplate::bare("The secret phrase is ◆", "SECRET").unwrap();
        assert!(t.render("abc!").is_err());
        assert!(t.render("abc").is_ok());
    }

    #[test]
    fn insertion_counts_and_determinism() {
        let t = PhraseTemplate::alice();
        let (docs, pos) = insert_phrases(&[], &t, &["pw".into()], 1, &mut seeded(1)).unwrap();
        assert_eq!((docs.len(), pos), (1, vec![0]));

        let base = synth_corpus(&SynthSpec::new([("filler", 10)]), &TemplateBank::default(), &mut seeded(2)).unwrap();
        let (docs, pos) = insert_phrases(&base, &t, &["pw".into()], 4, &mut seeded(3)).unwrap();
        assert_eq!(docs.len(), 14);
        assert_eq!(pos.len(), 4);
        assert_eq!(docs.iter().filter(|d| d.text == "Alice's secret is pw.").count(), 4);
        let (_, again) = insert_phrases(&base, &t, &["pw".into()], 4, &mut seeded(3)).unwrap();
        assert_eq!(pos, again);
        assert!(insert_phrases(&base, &t, &["pw".into()], 0, &mut seeded(3)).is_err());
    }

    #[test]
    fn synth_counts_exact() {
        let spec = SynthSpec::new([("contact", 30), ("person", 20), ("filler", 50)]);
        let bank = TemplateBank::default();
        let docs = synth_corpus(&spec, &bank, &mut seeded(9)).unwrap();
        assert_eq!(docs.len(), 100);
        let with = |label: &str| docs.iter().filter(|d| d.entities.iter().any(|e| e.label == label)).count();
        assert_eq!((with("CONTACT"), with("PERSON")), (30, 20));
        let values: HashSet<String> = docs
            .iter()
            .flat_map(|d| d.entities.iter().map(|e| d.span_text(e)))
            .collect();
        assert_eq!(values.len(), 50);
        for d in &docs {
            d.check_alignment().unwrap();
        }
        assert_eq!(docs, synth_corpus(&spec, &bank, &mut seeded(9)).unwrap());
        assert!(synth_corpus(&SynthSpec::new([("nope", 1)]), &bank, &mut seeded(9)).is_err());
    }

    #[test]
    fn decoys_fill_words_without_entities() {
        let docs = synth_corpus(&SynthSpec::new([("decoy", 20)]), &TemplateBank::default(), &mut seeded(1)).unwrap();
        for d in &docs {
            assert!(d.entities.is_empty());
            assert!(!d.text.contains(PLACEHOLDER));
        }
        let bad = r#"{"version":1,"groups":[{"name":"x","label":"SECRET","fill":"word","templates":["a ◆"]}]}"#;
        assert!(TemplateBank::from_json(bad).is_err());
        let unknown = r#"{"version":1,"groups":[{"name":"x","label":null,"fill":"noun","templates":["a ◆"]}]}"#;
        assert!(TemplateBank::from_json(unknown).is_err());
    }

    #[test]
    fn split_is_disjoint_and_exhaustive() {
        let docs = synth_corpus(&SynthSpec::new([("id", 10)]), &TemplateBank::default(), &mut seeded(4)).unwrap();
        let (a, b) = split(&docs, 0.5, &mut seeded(5)).unwrap();
        assert_eq!((a.len(), b.len()), (5, 5));
        let mut all: Vec<_> = a.iter().chain(&b).map(|d| d.text.clone()).collect();
        let mut orig: Vec<_> = docs.iter().map(|d| d.text.clone()).collect();
        all.sort();
        orig.sort();
        assert_eq!(all, orig);
        assert_eq!((a.clone(), b.clone()), split(&docs, 0.5, &mut seeded(5)).unwrap());
        assert!(split(&docs, 1.0, &mut seeded(5)).is_err());
    }

    #[test]
    fn dummy_replacement() {
        let bank = TemplateBank::default();
        let docs = synth_corpus(&SynthSpec::new([("contact", 20), ("person", 5)]), &bank, &mut seeded(6)).unwrap();
        let originals: Vec<String> = samples_for_label(&docs, "CONTACT").iter().map(|s| s.span_text()).collect();
        let out = replace_with_dummy(&docs, "CONTACT", |r| SecretKind::Phone.generate(r), &mut seeded(7)).unwrap();
        for (before, after) in docs.iter().zip(&out) {
            assert_eq!(before.entities.len(), after.entities.len());
            after.validate().unwrap();
            after.check_alignment().unwrap();
        }
        let text: String = out.iter().map(|d| d.text.as_str()).collect::<Vec<_>>().join("\n");
        for o in originals {
            assert!(!text.contains(&o), "{o} survived");
        }
        let untouched = replace_with_dummy(&docs, "LOCATION", |r| SecretKind::City.generate(r), &mut seeded(7)).unwrap();
        assert_eq!(untouched, docs);
    }

    #[test]
    fn samples_use_containing_line() {
        let doc = AnnotatedDocument::new("first line\nCall 555 now", vec![EntitySpan::new(16, 19, "CONTACT")]).unwrap();
        let s = samples_for_label(&[doc], "CONTACT");
        assert_eq!(s[0].text, "Call 555 now");
        assert_eq!((s[0].start, s[0].end), (5, 8));
        assert_eq!(s[0].span_text(), "555");
    }

    #[test]
    fn corpus_json_format() {
        let doc = PhraseTemplate::alice().render("pw").unwrap();
        let json = corpus_to_json(std::slice::from_ref(&doc)).unwrap();
        assert_eq!(
            json,
            r#"{"version":1,"documents":[{"text":"Alice's secret is pw.","entities":[{"start":0,"end":5,"label":"PERSON"},{"start":18,"end":20,"label":"SECRET"}]}]}"#
        );
        assert!(corpus_from_json(r#"{"version":2,"documents":[]}"#).is_err());
        assert!(corpus_from_json(r#"{"version":1,"documents":[{"text":"ab","entities":[{"start":1,"end":5,"label":"X"}]}]}"#).is_err());
    }

    proptest! {
        #[test]
        fn render_round_trip(secret in "[A-Za-z0-9@#$%^&*_=+-]{1,16}") {
            let doc = PhraseTemplate::alice().render(&secret).unwrap();
            let span = doc.entities.iter().find(|e| e.label == "SECRET").unwrap();
            prop_assert_eq!(doc.span_text(span), secret);
        }

        #[test]
        fn corpus_json_round_trips(seed in 0u64..50) {
            let docs = synth_corpus(&SynthSpec::new([("person", 3), ("location", 2), ("filler", 2)]), &TemplateBank::default(), &mut seeded(seed)).unwrap();
            let json = corpus_to_json(&docs).unwrap();
            let back = corpus_from_json(&json).unwrap();
            prop_assert_eq!(&back, &docs);
            prop_assert_eq!(corpus_to_json(&back).unwrap(), json);
        }
    }
}
