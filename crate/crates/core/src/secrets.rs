//! Seeded generators for passwords, card numbers, phone numbers, IP
//! addresses and record ids; a charset-based strength estimate; and the
//! feature-constrained password generator used for neighbor analysis.

use std::collections::HashSet;
use std::fmt;
use std::sync::OnceLock;

use rand::seq::{IndexedRandom, SliceRandom};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::subword::{Feature, SubwordConfig};
use crate::vocab::Vocabulary;

const LOWER: &str = "abcdefghijklmnopqrstuvwxyz";
const UPPER: &str = "ABCDEFGHIJKLMNOPQRSTUVWXYZ";
const DIGITS: &str = "0123456789";
const ALNUM: &str = "abcdefghijklmnopqrstuvwxyzABCDEFGHIJKLMNOPQRSTUVWXYZ0123456789";

/// Symbols the tokenizer never splits off a word.
pub const DEFAULT_SYMBOLS: &str = "@#$%^&*-_+=~";

const COMMON_PASSWORDS: &str = include_str!("../data/common_passwords.txt");
const NAMES: &str = include_str!("../data/names.txt");
const CITIES: &str = include_str!("../data/cities.txt");
const WORDS: &str = include_str!("../data/words.txt");

/// The RNG every generator in the crate is driven by.
pub fn seeded(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

fn lines(text: &'static str) -> Vec<&'static str> {
    text.lines().map(str::trim).filter(|l| !l.is_empty()).collect()
}

/// The bundled common-password list in file order.
pub fn common_password_list() -> &'static [&'static str] {
    static LIST: OnceLock<Vec<&'static str>> = OnceLock::new();
    LIST.get_or_init(|| lines(COMMON_PASSWORDS))
}

pub fn common_passwords() -> &'static HashSet<&'static str> {
    static SET: OnceLock<HashSet<&'static str>> = OnceLock::new();
    SET.get_or_init(|| common_password_list().iter().copied().collect())
}

pub fn names() -> &'static [&'static str] {
    static LIST: OnceLock<Vec<&'static str>> = OnceLock::new();
    LIST.get_or_init(|| lines(NAMES))
}

pub fn cities() -> &'static [&'static str] {
    static LIST: OnceLock<Vec<&'static str>> = OnceLock::new();
    LIST.get_or_init(|| lines(CITIES))
}

/// Ordinary lowercase words with no sensitive meaning.
pub fn words() -> &'static [&'static str] {
    static LIST: OnceLock<Vec<&'static str>> = OnceLock::new();
    LIST.get_or_init(|| lines(WORDS))
}

fn pick<R: Rng>(alphabet: &str, rng: &mut R) -> char {
    let chars: Vec<char> = alphabet.chars().collect();
    *chars.choose(rng).expect("non-empty alphabet")
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PasswordConstraints {
    pub min_len: usize,
    pub require_upper: bool,
    pub require_lower: bool,
    pub require_digit: bool,
    pub require_symbol: bool,
    pub symbol_alphabet: String,
}

impl Default for PasswordConstraints {
    fn default() -> Self {
        PasswordConstraints {
            min_len: 6,
            require_upper: true,
            require_lower: true,
            require_digit: true,
            require_symbol: true,
            symbol_alphabet: DEFAULT_SYMBOLS.to_owned(),
        }
    }
}

impl PasswordConstraints {
    fn required(&self) -> Vec<String> {
        let mut classes = Vec::new();
        if self.require_lower {
            classes.push(LOWER.to_owned());
        }
        if self.require_upper {
            classes.push(UPPER.to_owned());
        }
        if self.require_digit {
            classes.push(DIGITS.to_owned());
        }
        if self.require_symbol {
            classes.push(self.symbol_alphabet.clone());
        }
        classes
    }

    pub fn validate(&self) -> Result<()> {
        if self.min_len == 0 {
            return Err(Error::Unsatisfiable("min_len must be positive".into()));
        }
        if self.require_symbol && self.symbol_alphabet.is_empty() {
            return Err(Error::Unsatisfiable(
                "symbols required but the symbol alphabet is empty".into(),
            ));
        }
        if self.symbol_alphabet.chars().any(|c| c.is_whitespace() || c.is_alphanumeric()) {
            return Err(Error::Unsatisfiable(
                "symbol alphabet may only hold non-space special characters".into(),
            ));
        }
        let n = self.required().len();
        if self.min_len < n {
            return Err(Error::Unsatisfiable(format!(
                "min_len {} is below the {n} required character classes",
                self.min_len
            )));
        }
        Ok(())
    }

    pub fn satisfied_by(&self, password: &str) -> bool {
        let has = |f: fn(&char) -> bool| password.chars().any(|c| f(&c));
        password.chars().count() >= self.min_len
            && (!self.require_lower || has(char::is_ascii_lowercase))
            && (!self.require_upper || has(char::is_ascii_uppercase))
            && (!self.require_digit || has(char::is_ascii_digit))
            && (!self.require_symbol || password.chars().any(|c| self.symbol_alphabet.contains(c)))
    }
}

/// Length is uniform in `[min_len, min_len + 4]`; one character per
/// required class, the rest from the union of the required classes.
pub fn gen_password<R: Rng>(c: &PasswordConstraints, rng: &mut R) -> Result<String> {
    c.validate()?;
    let classes = c.required();
    let pool: String = if classes.is_empty() {
        ALNUM.to_owned()
    } else {
        classes.concat()
    };
    let len = rng.random_range(c.min_len..=c.min_len + 4);
    let mut chars: Vec<char> = classes.iter().map(|cls| pick(cls, rng)).collect();
    while chars.len() < len {
        chars.push(pick(&pool, rng));
    }
    chars.shuffle(rng);
    Ok(chars.into_iter().collect())
}

/// Passwords whose suffix and shape are absent from `vocab`, and distinct
/// from each other's, at generation time. The prefix may collide.
pub fn gen_out_vocab_passwords<R: Rng>(
    vocab: &Vocabulary,
    count: usize,
    c: &PasswordConstraints,
    subword: &SubwordConfig,
    rng: &mut R,
) -> Result<Vec<String>> {
    let budget = count.max(1) * 1000;
    let mut seen = HashSet::new();
    let mut out = Vec::with_capacity(count);
    for _ in 0..budget {
        if out.len() == count {
            break;
        }
        let pw = gen_password(c, rng)?;
        let f = subword.features(&pw);
        if vocab.contains(&f.suffix) || vocab.contains(&f.shape) {
            continue;
        }
        if seen.contains(&f.suffix) || seen.contains(&f.shape) || seen.contains(&f.norm) {
            continue;
        }
        seen.insert(f.suffix);
        seen.insert(f.shape);
        seen.insert(f.norm);
        out.push(pw);
    }
    if out.len() < count {
        return Err(Error::BudgetExhausted(format!(
            "found {} of {count} out-of-vocabulary passwords in {budget} attempts",
            out.len()
        )));
    }
    Ok(out)
}

pub fn luhn_valid(digits: &str) -> Result<bool> {
    if digits.is_empty() || !digits.bytes().all(|b| b.is_ascii_digit()) {
        return Err(Error::NonDigit(digits.to_owned()));
    }
    Ok(luhn_sum(digits.bytes().rev().map(|b| b - b'0'), false) % 10 == 0)
}

/// Sum over digits given right to left; `double_first` doubles the first.
fn luhn_sum(digits: impl Iterator<Item = u8>, double_first: bool) -> u32 {
    digits
        .enumerate()
        .map(|(i, d)| {
            let d = u32::from(d);
            if (i % 2 == 0) == double_first {
                let x = 2 * d;
                if x > 9 { x - 9 } else { x }
            } else {
                d
            }
        })
        .sum()
}

/// 15 random digits and the Luhn check digit.
pub fn gen_credit_card<R: Rng>(rng: &mut R) -> String {
    let body: Vec<u8> = (0..15).map(|_| rng.random_range(0..10)).collect();
    let sum = luhn_sum(body.iter().rev().copied(), true);
    let check = ((10 - sum % 10) % 10) as u8;
    body.iter()
        .chain(std::iter::once(&check))
        .map(|d| char::from(b'0' + d))
        .collect()
}

fn nanp_code<R: Rng>(rng: &mut R) -> u32 {
    loop {
        let code = rng.random_range(200..1000);
        if code % 100 != 11 {
            return code;
        }
    }
}

/// `ddd-ddd-dddd` with NANP area and exchange codes (no leading 0 or 1, no
/// N11) and outside the 555-01xx fictional range.
pub fn gen_phone<R: Rng>(rng: &mut R) -> String {
    let area = nanp_code(rng);
    loop {
        let exchange = nanp_code(rng);
        let line = rng.random_range(0..10_000u32);
        if exchange == 555 && line / 100 == 1 {
            continue;
        }
        return format!("{area:03}-{exchange:03}-{line:04}");
    }
}

pub fn phone_allowed(phone: &str) -> bool {
    let parts: Vec<&str> = phone.split('-').collect();
    let digits = |s: &str, n: usize| s.len() == n && s.bytes().all(|b| b.is_ascii_digit());
    if parts.len() != 3 || !digits(parts[0], 3) || !digits(parts[1], 3) || !digits(parts[2], 4) {
        return false;
    }
    let code_ok = |s: &str| !s.starts_with(['0', '1']) && &s[1..] != "11";
    code_ok(parts[0]) && code_ok(parts[1]) && !(parts[1] == "555" && parts[2].starts_with("01"))
}

pub fn gen_ip<R: Rng>(rng: &mut R) -> String {
    let o: [u8; 4] = rng.random();
    format!("{}.{}.{}.{}", o[0], o[1], o[2], o[3])
}

/// Two capital letters and six digits.
pub fn gen_record_id<R: Rng>(rng: &mut R) -> String {
    format!(
        "{}{}{:06}",
        pick(UPPER, rng),
        pick(UPPER, rng),
        rng.random_range(0..1_000_000u32)
    )
}

/// `charset ^ length` over the union of character classes present
/// (lower 26, upper 26, digit 10, other 33), halved for listed common
/// passwords. A stand-in for a pattern-matching estimator.
pub fn estimate_guesses(password: &str) -> f64 {
    let mut classes = [false; 4];
    for c in password.chars() {
        let i = if c.is_ascii_lowercase() {
            0
        } else if c.is_ascii_uppercase() {
            1
        } else if c.is_ascii_digit() {
            2
        } else {
            3
        };
        classes[i] = true;
    }
    let charset: u32 = [26, 26, 10, 33]
        .iter()
        .zip(classes)
        .filter_map(|(&n, present)| present.then_some(n))
        .sum();
    let guesses = f64::from(charset).powi(password.chars().count() as i32);
    if common_passwords().contains(password) {
        guesses / 2.0
    } else {
        guesses
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct StrengthLevel(u8);

impl StrengthLevel {
    pub fn new(level: u8) -> Result<Self> {
        if level > 4 {
            return Err(Error::InvalidConfig(format!("strength level {level} outside 0..=4")));
        }
        Ok(StrengthLevel(level))
    }

    pub fn from_guesses(guesses: f64) -> Self {
        let level = [1e3, 1e6, 1e8, 1e10]
            .iter()
            .take_while(|&&t| guesses >= t)
            .count();
        StrengthLevel(level as u8)
    }

    pub fn level(self) -> u8 {
        self.0
    }
}

impl fmt::Display for StrengthLevel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

pub fn strength_level(password: &str) -> StrengthLevel {
    StrengthLevel::from_guesses(estimate_guesses(password))
}

/// A password whose estimated strength falls in `level`, drawn by
/// rejection from random strings over a random choice of character
/// classes (digits; lowercase; lowercase and digits; letters and digits;
/// letters, digits and symbols) with length 1 to 12.
pub fn gen_password_with_strength<R: Rng>(level: StrengthLevel, rng: &mut R) -> Result<String> {
    let class_sets: [&[&str]; 5] = [
        &[DIGITS],
        &[LOWER],
        &[LOWER, DIGITS],
        &[LOWER, UPPER, DIGITS],
        &[LOWER, UPPER, DIGITS, DEFAULT_SYMBOLS],
    ];
    for _ in 0..100_000 {
        let classes = class_sets.choose(rng).expect("class sets");
        let len = rng.random_range(classes.len().max(1)..=12);
        let pool: String = classes.concat();
        let mut chars: Vec<char> = classes.iter().map(|c| pick(c, rng)).collect();
        while chars.len() < len {
            chars.push(pick(&pool, rng));
        }
        chars.shuffle(rng);
        let pw: String = chars.into_iter().collect();
        if strength_level(&pw) == level {
            return Ok(pw);
        }
    }
    Err(Error::BudgetExhausted(format!("no password of strength {level} in 100000 draws")))
}

/// `count` distinct passwords of the given strength.
pub fn gen_passwords_with_strength<R: Rng>(level: StrengthLevel, count: usize, rng: &mut R) -> Result<Vec<String>> {
    let mut seen = HashSet::with_capacity(count);
    let mut out = Vec::with_capacity(count);
    for _ in 0..count.max(1) * 1000 {
        if out.len() == count {
            return Ok(out);
        }
        let pw = gen_password_with_strength(level, rng)?;
        if seen.insert(pw.clone()) {
            out.push(pw);
        }
    }
    if out.len() == count {
        return Ok(out);
    }
    Err(Error::BudgetExhausted(format!(
        "only {} distinct passwords of strength {level}",
        out.len()
    )))
}

/// A non-empty subset of {prefix, suffix, shape} to share with a target.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct FeatureCombination {
    prefix: bool,
    suffix: bool,
    shape: bool,
}

impl FeatureCombination {
    pub fn new(prefix: bool, suffix: bool, shape: bool) -> Result<Self> {
        if !(prefix || suffix || shape) {
            return Err(Error::InvalidConfig("feature combination is empty".into()));
        }
        Ok(FeatureCombination { prefix, suffix, shape })
    }

    /// The seven combinations, singletons first and the full set last.
    pub fn all() -> [FeatureCombination; 7] {
        let c = |p, s, h| FeatureCombination { prefix: p, suffix: s, shape: h };
        [
            c(true, false, false),
            c(false, true, false),
            c(false, false, true),
            c(true, true, false),
            c(true, false, true),
            c(false, true, true),
            c(true, true, true),
        ]
    }

    pub fn contains(self, feature: Feature) -> bool {
        match feature {
            Feature::Prefix => self.prefix,
            Feature::Suffix => self.suffix,
            Feature::Shape => self.shape,
            Feature::Norm => false,
        }
    }

    pub fn size(self) -> usize {
        usize::from(self.prefix) + usize::from(self.suffix) + usize::from(self.shape)
    }

    pub fn parse(s: &str) -> Result<Self> {
        let (mut p, mut x, mut h) = (false, false, false);
        for part in s.split(['+', ',']) {
            match part.trim() {
                "prefix" => p = true,
                "suffix" => x = true,
                "shape" => h = true,
                other => {
                    return Err(Error::InvalidConfig(format!("unknown feature {other:?}")));
                }
            }
        }
        FeatureCombination::new(p, x, h)
    }
}

impl fmt::Display for FeatureCombination {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let parts: Vec<&str> = [(self.prefix, "prefix"), (self.suffix, "suffix"), (self.shape, "shape")]
            .iter()
            .filter_map(|&(on, name)| on.then_some(name))
            .collect();
        f.write_str(&parts.join("+"))
    }
}

/// A random character of the same class as `c`; specials are kept.
pub fn same_class_char<R: Rng>(c: char, rng: &mut R) -> char {
    if c.is_ascii_lowercase() {
        pick(LOWER, rng)
    } else if c.is_ascii_uppercase() {
        pick(UPPER, rng)
    } else if c.is_ascii_digit() {
        pick(DIGITS, rng)
    } else {
        c
    }
}

/// Passwords of the target's length that share exactly the features in
/// `combo` with the target: combo features are equal, the remaining
/// features and the norm all differ. Characters copy the target's class
/// pattern when shape is shared and are random alphanumerics otherwise.
pub fn gen_feature_passwords<R: Rng>(
    target: &str,
    combo: FeatureCombination,
    count: usize,
    subword: &SubwordConfig,
    rng: &mut R,
) -> Result<Vec<String>> {
    let target_chars: Vec<char> = target.chars().collect();
    let n = target_chars.len();
    if n == 0 {
        return Err(Error::EmptyInput("target password"));
    }
    let tf = subword.features(target);
    let pre = subword.prefix_len.min(n);
    let suf = subword.suffix_len.min(n);
    let budget = count.max(1) * 1000;
    let mut seen = HashSet::new();
    let mut out = Vec::with_capacity(count);
    for _ in 0..budget {
        if out.len() == count {
            break;
        }
        let mut chars: Vec<char> = if combo.shape {
            target_chars.iter().map(|&c| same_class_char(c, rng)).collect()
        } else {
            (0..n).map(|_| pick(ALNUM, rng)).collect()
        };
        if combo.prefix {
            chars[..pre].copy_from_slice(&target_chars[..pre]);
        }
        if combo.suffix {
            chars[n - suf..].copy_from_slice(&target_chars[n - suf..]);
        }
        let candidate: String = chars.into_iter().collect();
        let f = subword.features(&candidate);
        let ok = [Feature::Prefix, Feature::Suffix, Feature::Shape]
            .into_iter()
            .all(|feat| (f.get(feat) == tf.get(feat)) == combo.contains(feat))
            && f.norm != tf.norm;
        if ok && seen.insert(candidate.clone()) {
            out.push(candidate);
        }
    }
    if out.len() < count {
        return Err(Error::BudgetExhausted(format!(
            "only {} of {count} passwords sharing {combo} with {target:?} in {budget} attempts",
            out.len()
        )));
    }
    Ok(out)
}

/// Kinds of sensitive value that can fill an entity slot.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SecretKind {
    Password,
    CreditCard,
    Phone,
    Ip,
    Name,
    City,
    RecordId,
}

impl SecretKind {
    pub const ALL: [SecretKind; 7] = [
        SecretKind::Password,
        SecretKind::CreditCard,
        SecretKind::Phone,
        SecretKind::Ip,
        SecretKind::Name,
        SecretKind::City,
        SecretKind::RecordId,
    ];

    /// Generator used for an entity label.
    pub fn for_label(label: &str) -> Option<Self> {
        Some(match label {
            "PERSON" => SecretKind::Name,
            "LOCATION" => SecretKind::City,
            "CONTACT" => SecretKind::Phone,
            "ID" => SecretKind::RecordId,
            "SECRET" => SecretKind::Password,
            "IP" => SecretKind::Ip,
            "CARD" => SecretKind::CreditCard,
            _ => return None,
        })
    }

    pub fn parse(s: &str) -> Result<Self> {
        SecretKind::ALL
            .into_iter()
            .find(|k| k.name() == s)
            .ok_or_else(|| Error::InvalidConfig(format!("unknown secret kind {s:?}")))
    }

    pub fn name(self) -> &'static str {
        match self {
            SecretKind::Password => "password",
            SecretKind::CreditCard => "credit-card",
            SecretKind::Phone => "phone",
            SecretKind::Ip => "ip",
            SecretKind::Name => "name",
            SecretKind::City => "city",
            SecretKind::RecordId => "record-id",
        }
    }

    pub fn generate<R: Rng>(self, rng: &mut R) -> String {
        match self {
            SecretKind::Password => {
                gen_password(&PasswordConstraints::default(), rng).expect("default constraints are satisfiable")
            }
            SecretKind::CreditCard => gen_credit_card(rng),
            SecretKind::Phone => gen_phone(rng),
            SecretKind::Ip => gen_ip(rng),
            SecretKind::Name => names().choose(rng).expect("bundled names").to_string(),
            SecretKind::City => cities().choose(rng).expect("bundled cities").to_string(),
            SecretKind::RecordId => gen_record_id(rng),
        }
    }
}
