//! The four sub-word features a token is reduced to before embedding, and
//! the word-equivalence relation they induce.
//!
//! Character classes are ASCII-only: `A-Z` shapes to `X`, `a-z` to `x`,
//! `0-9` to `d`. Every other character (including non-ASCII letters) is a
//! special symbol, kept as-is in the shape and untouched by the norm.

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::metrics::levenshtein;

/// A non-empty word.
#[derive(Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub struct Word(String);

impl Word {
    pub fn new(text: impl Into<String>) -> Result<Self> {
        let text = text.into();
        if text.is_empty() {
            return Err(Error::EmptyInput("word"));
        }
        Ok(Word(text))
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }

    pub fn char_len(&self) -> usize {
        self.0.chars().count()
    }
}

impl TryFrom<String> for Word {
    type Error = Error;

    fn try_from(value: String) -> Result<Self> {
        Word::new(value)
    }
}

impl From<Word> for String {
    fn from(w: Word) -> String {
        w.0
    }
}

impl AsRef<str> for Word {
    fn as_ref(&self) -> &str {
        &self.0
    }
}

impl fmt::Display for Word {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SubwordConfig {
    pub prefix_len: usize,
    pub suffix_len: usize,
    pub shape_run_cap: usize,
}

impl Default for SubwordConfig {
    fn default() -> Self {
        SubwordConfig {
            prefix_len: 1,
            suffix_len: 3,
            shape_run_cap: 4,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct SubwordFeatures {
    pub prefix: String,
    pub suffix: String,
    pub norm: String,
    pub shape: String,
}

/// Selects one of the four feature strings.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Feature {
    Prefix,
    Suffix,
    Norm,
    Shape,
}

impl SubwordFeatures {
    pub fn get(&self, feature: Feature) -> &str {
        match feature {
            Feature::Prefix => &self.prefix,
            Feature::Suffix => &self.suffix,
            Feature::Norm => &self.norm,
            Feature::Shape => &self.shape,
        }
    }
}

/// The character class used by the shape feature.
pub fn char_shape(c: char) -> char {
    match c {
        'A'..='Z' => 'X',
        'a'..='z' => 'x',
        '0'..='9' => 'd',
        other => other,
    }
}

impl SubwordConfig {
    pub fn validate(&self) -> Result<()> {
        if self.prefix_len == 0 || self.suffix_len == 0 || self.shape_run_cap == 0 {
            return Err(Error::InvalidConfig(
                "prefix_len, suffix_len and shape_run_cap must be positive".into(),
            ));
        }
        Ok(())
    }

    pub fn prefix(&self, word: &str) -> String {
        word.chars().take(self.prefix_len).collect()
    }

    pub fn suffix(&self, word: &str) -> String {
        let n = word.chars().count();
        word.chars().skip(n.saturating_sub(self.suffix_len)).collect()
    }

    /// Runs of the same `X`/`x`/`d` are cut at `shape_run_cap`; runs of a
    /// repeated special symbol are never cut.
    pub fn shape(&self, word: &str) -> String {
        let mut out = String::with_capacity(word.len());
        let mut last = None;
        let mut run = 0;
        for c in word.chars().map(char_shape) {
            if Some(c) == last {
                run += 1;
            } else {
                last = Some(c);
                run = 1;
            }
            if matches!(c, 'X' | 'x' | 'd') && run > self.shape_run_cap {
                continue;
            }
            out.push(c);
        }
        out
    }

    pub fn features(&self, word: &str) -> SubwordFeatures {
        SubwordFeatures {
            prefix: self.prefix(word),
            suffix: self.suffix(word),
            norm: norm(word),
            shape: self.shape(word),
        }
    }

    pub fn equal_in_pipeline(&self, a: &str, b: &str) -> bool {
        self.features(a) == self.features(b)
    }

    /// Characters strictly between the prefix and the suffix; empty when
    /// the word is no longer than both together.
    pub fn mid(&self, word: &str) -> String {
        let n = word.chars().count();
        if n <= self.prefix_len + self.suffix_len {
            return String::new();
        }
        word.chars()
            .skip(self.prefix_len)
            .take(n - self.prefix_len - self.suffix_len)
            .collect()
    }

    /// Sum of the per-feature edit distances.
    pub fn f_distance(&self, a: &str, b: &str) -> usize {
        let fa = self.features(a);
        let fb = self.features(b);
        levenshtein(&fa.prefix, &fb.prefix)
            + levenshtein(&fa.suffix, &fb.suffix)
            + levenshtein(&fa.shape, &fb.shape)
            + levenshtein(&fa.norm, &fb.norm)
    }
}

/// ASCII lowercase, one character in, one character out.
pub fn norm(word: &str) -> String {
    word.chars().map(|c| c.to_ascii_lowercase()).collect()
}

/// Number of positions at which two equal-length words differ (case-sensitive).
pub fn hamming_difference(a: &str, b: &str) -> Result<usize> {
    let la = a.chars().count();
    let lb = b.chars().count();
    if la != lb {
        return Err(Error::LengthMismatch {
            left: la,
            right: lb,
        });
    }
    Ok(a.chars().zip(b.chars()).filter(|(x, y)| x != y).count())
}

/// Checks the three structural facts that hold for any pair of words that
/// are equal in the pipeline under the default configuration. Returns the
/// first violated fact, if any.
pub fn check_equivalence_structure(a: &str, b: &str) -> Option<&'static str> {
    let cfg = SubwordConfig::default();
    if !cfg.equal_in_pipeline(a, b) {
        return None;
    }
    if cfg.prefix(a) != cfg.prefix(b) || cfg.suffix(a) != cfg.suffix(b) {
        return Some("prefix/suffix differ");
    }
    let n = a.chars().count();
    if n != b.chars().count() {
        return Some("lengths differ");
    }
    if a == b {
        return None;
    }
    for (j, (x, y)) in a.chars().zip(b.chars()).enumerate() {
        if x == y {
            continue;
        }
        let case_flip = x.is_ascii_alphabetic() && x.eq_ignore_ascii_case(&y);
        if !case_flip {
            return Some("difference is not a case flip");
        }
        let pos = j + 1;
        if !(pos > 4 && pos + 3 < n) {
            return Some("difference outside 4 < j < |w| - 3");
        }
    }
    if cfg.mid(a).chars().count() < 5 {
        return Some("|mid| < 5");
    }
    None
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn d() -> SubwordConfig {
        SubwordConfig::default()
    }

    #[test]
    fn prefix_suffix_examples() {
        assert_eq!(d().prefix("Alice"), "A");
        assert_eq!(d().prefix("a"), "a");
        assert_eq!(d().prefix("qwertyui"), "q");
        assert_eq!(d().suffix("Alice"), "ice");
        assert_eq!(d().suffix("ab"), "ab");
        assert_eq!(d().suffix("ABCDEfghij"), "hij");
    }

    #[test]
    fn norm_examples() {
        assert_eq!(norm("QweRty"), "qwerty");
        assert_eq!(norm("123-456"), "123-456");
        assert_eq!(norm("ABCDEfghij"), "abcdefghij");
        assert_eq!(norm("ÄB"), "Äb");
    }

    #[test]
    fn shape_examples() {
        assert_eq!(d().shape("Threats"), "Xxxxx");
        assert_eq!(d().shape("Embed"), "Xxxxx");
        assert_eq!(d().shape("ABCDEfghij"), "XXXXxxxx");
        assert_eq!(d().shape("1.10.100.200"), "d.dd.ddd.ddd");
        assert_eq!(d().shape("!!!!!!"), "!!!!!!");
        assert_eq!(d().shape("Äb"), "Äx");
    }

    #[test]
    fn feature_examples() {
        let f = d().features("Threats");
        assert_eq!(
            (f.prefix.as_str(), f.suffix.as_str(), f.norm.as_str(), f.shape.as_str()),
            ("T", "ats", "threats", "Xxxxx")
        );
        let f = d().features("ABCDefghij");
        assert_eq!(
            (f.prefix.as_str(), f.suffix.as_str(), f.norm.as_str(), f.shape.as_str()),
            ("A", "hij", "abcdefghij", "XXXXxxxx")
        );
        let f = d().features("a");
        assert_eq!(
            (f.prefix.as_str(), f.suffix.as_str(), f.norm.as_str(), f.shape.as_str()),
            ("a", "a", "a", "x")
        );
    }

    #[test]
    fn pipeline_equality() {
        assert!(d().equal_in_pipeline("ABCDEfghij", "ABCDefghij"));
        assert!(!d().equal_in_pipeline("Threats", "Embed"));
        assert!(d().equal_in_pipeline("a", "a"));
        assert!(d().equal_in_pipeline("ABCDEfghi", "ABCDefghi"));
    }

    #[test]
    fn hamming_and_mid() {
        assert_eq!(hamming_difference("ABCDEfghij", "ABCDefghij").unwrap(), 1);
        assert_eq!(hamming_difference("abc", "abc").unwrap(), 0);
        assert!(matches!(
            hamming_difference("abc", "abcd"),
            Err(Error::LengthMismatch { left: 3, right: 4 })
        ));
        assert_eq!(d().mid("ABCDEfghij"), "BCDEfg");
        assert_eq!(d().mid("abcd"), "");
        assert_eq!(d().mid("Alices"), "li");
    }

    #[test]
    fn f_distance_examples() {
        assert_eq!(d().f_distance("qwerty", "qwerty"), 0);
        assert_eq!(d().f_distance("ABCDEfghij", "ABCDefghij"), 0);
        // prefix a/a 0, suffix abc/abd 1, shape xxx/xxx 0, norm abc/abd 1
        assert_eq!(d().f_distance("abc", "abd"), 2);
    }

    #[test]
    fn empty_word_rejected() {
        assert!(Word::new("").is_err());
        assert_eq!(Word::new("ab").unwrap().char_len(), 2);
    }

    #[test]
    fn config_validation() {
        assert!(d().validate().is_ok());
        let bad = SubwordConfig {
            suffix_len: 0,
            ..d()
        };
        assert!(bad.validate().is_err());
    }

    proptest! {
        #[test]
        fn shape_runs_are_capped(w in "[a-zA-Z0-9.$-]{1,30}", cap in 1usize..6) {
            let cfg = SubwordConfig { shape_run_cap: cap, ..d() };
            let shape = cfg.shape(&w);
            let chars: Vec<char> = shape.chars().collect();
            let mut run = 1;
            for i in 1..chars.len() {
                if chars[i] == chars[i - 1] && matches!(chars[i], 'X' | 'x' | 'd') {
                    run += 1;
                    prop_assert!(run <= cap);
                } else {
                    run = 1;
                }
            }
            prop_assert!(chars.iter().all(|c| matches!(c, 'X' | 'x' | 'd') || w.contains(*c)));
        }

        #[test]
        fn norm_preserves_length(w in "\\PC{1,20}") {
            prop_assert_eq!(norm(&w).chars().count(), w.chars().count());
        }

        #[test]
        fn feature_lengths_bounded(w in "\\PC{1,20}", p in 1usize..4, s in 1usize..5) {
            let cfg = SubwordConfig { prefix_len: p, suffix_len: s, ..d() };
            let f = cfg.features(&w);
            prop_assert!(f.prefix.chars().count() <= p);
            prop_assert!(f.suffix.chars().count() <= s);
        }

        #[test]
        fn case_flips_respect_structure(w in "[a-zA-Z0-9]{1,14}", flips in prop::collection::vec(0usize..14, 0..4)) {
            let mut chars: Vec<char> = w.chars().collect();
            for i in flips {
                if let Some(c) = chars.get_mut(i % w.len()) {
                    *c = if c.is_ascii_uppercase() { c.to_ascii_lowercase() } else { c.to_ascii_uppercase() };
                }
            }
            let v: String = chars.into_iter().collect();
            prop_assert_eq!(check_equivalence_structure(&w, &v), None);
        }

        #[test]
        fn f_distance_metric(a in "[aB1.]{1,8}", b in "[aB1.]{1,8}", c in "[aB1.]{1,8}") {
            let cfg = d();
            prop_assert_eq!(cfg.f_distance(&a, &a), 0);
            prop_assert_eq!(cfg.f_distance(&a, &b), cfg.f_distance(&b, &a));
            prop_assert!(cfg.f_distance(&a, &c) <= cfg.f_distance(&a, &b) + cfg.f_distance(&b, &c));
        }
    }
}
