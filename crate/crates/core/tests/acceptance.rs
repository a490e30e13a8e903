//! Acceptance suite. Prints one PASS/FAIL line per criterion, then fails
//! if any criterion failed. Everything runs in one test so that the
//! wall-clock timing measurement does not share the CPU with other tests.

use std::collections::HashMap;
use std::time::{Duration, Instant};

use nerleak::corpus::{synth_corpus, AnnotatedDocument, EntitySpan, SynthSpec, TemplateBank};
use nerleak::defenses::delta_from_durations;
use nerleak::experiment::{self, ExperimentConfig, ExperimentKind};
use nerleak::metrics::{auc, levenshtein};
use nerleak::nermodel::{LabelSet, ModelConfig, NerModel, TrainConfig};
use nerleak::secrets::{
    gen_credit_card, gen_password, gen_phone, luhn_valid, names, phone_allowed, seeded, words, PasswordConstraints,
    StrengthLevel,
};
use nerleak::subword::SubwordConfig;
use nerleak::vocab::CostModel;
use rand::Rng;

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: impl Into<String>) -> Outcome {
    Outcome { pass, detail: detail.into() }
}

fn within(elapsed: Duration, limit_secs: u64) -> bool {
    elapsed <= Duration::from_secs(limit_secs)
}

/// Independent restatement of the four features.
fn oracle_features(w: &str) -> [String; 4] {
    let chars: Vec<char> = w.chars().collect();
    let prefix: String = chars[..1.min(chars.len())].iter().collect();
    let suffix: String = chars[chars.len().saturating_sub(3)..].iter().collect();
    let norm: String = chars.iter().map(|c| c.to_ascii_lowercase()).collect();
    let classes: Vec<char> = chars
        .iter()
        .map(|&c| {
            if c.is_ascii_uppercase() {
                'X'
            } else if c.is_ascii_lowercase() {
                'x'
            } else if c.is_ascii_digit() {
                'd'
            } else {
                c
            }
        })
        .collect();
    let mut shape = String::new();
    let mut i = 0;
    while i < classes.len() {
        let mut j = i;
        while j < classes.len() && classes[j] == classes[i] {
            j += 1;
        }
        let keep = if "Xxd".contains(classes[i]) { (j - i).min(4) } else { j - i };
        shape.extend(std::iter::repeat_n(classes[i], keep));
        i = j;
    }
    [prefix, suffix, norm, shape]
}

fn words_over(alphabet: &[char], len: usize) -> Vec<String> {
    let mut out = vec![String::new()];
    for _ in 0..len {
        out = out.iter().flat_map(|p| alphabet.iter().map(move |c| format!("{p}{c}"))).collect();
    }
    out
}

fn c01_feature_injectivity() -> Outcome {
    let start = Instant::now();
    let cfg = SubwordConfig::default();
    let alphabet = ['a', 'A', 'b', 'B'];
    let mut seen: HashMap<[String; 4], String> = HashMap::new();
    let mut total = 0;
    let mut collisions = 0;
    for len in 1..=8 {
        for w in words_over(&alphabet, len) {
            total += 1;
            let f = cfg.features(&w);
            if seen.insert([f.prefix, f.suffix, f.norm, f.shape], w).is_some() {
                collisions += 1;
            }
        }
    }
    let (a, b) = ("ABCDEfghij", "ABCDefghij");
    let pair_ok = cfg.equal_in_pipeline(a, b) && cfg.shape(a) == "XXXXxxxx" && oracle_features(a) == oracle_features(b);
    let mut witness = None;
    let mut by_features: HashMap<[String; 4], String> = HashMap::new();
    for w in words_over(&['a', 'A'], 9) {
        let f = cfg.features(&w);
        if let Some(other) = by_features.insert([f.prefix, f.suffix, f.norm, f.shape], w.clone()) {
            witness = Some((other, w));
            break;
        }
    }
    let witness_ok = witness
        .as_ref()
        .is_some_and(|(x, y)| x != y && oracle_features(x) == oracle_features(y));
    let elapsed = start.elapsed();
    outcome(
        total == 87_380 && collisions == 0 && pair_ok && witness_ok && within(elapsed, 10),
        format!(
            "{total} words, {collisions} colliding pairs; pair equal={pair_ok}; length-9 witness {witness:?} oracle-valid={witness_ok}; {:.2}s",
            elapsed.as_secs_f64()
        ),
    )
}

fn c02_shape_examples() -> Outcome {
    let cfg = SubwordConfig::default();
    let (a, b) = (cfg.shape("Threats"), cfg.shape("Embed"));
    outcome(a == "Xxxxx" && b == "Xxxxx", format!("shape(Threats)={a:?} shape(Embed)={b:?}"))
}

fn brute_auc(pos: &[f64], neg: &[f64]) -> f64 {
    let mut credit = 0.0;
    for p in pos {
        for n in neg {
            credit += if p > n {
                1.0
            } else if p == n {
                0.5
            } else {
                0.0
            };
        }
    }
    credit / (pos.len() * neg.len()) as f64
}

fn dp_levenshtein(a: &str, b: &str) -> usize {
    let a: Vec<char> = a.chars().collect();
    let b: Vec<char> = b.chars().collect();
    let mut d = vec![vec![0usize; b.len() + 1]; a.len() + 1];
    for (i, row) in d.iter_mut().enumerate() {
        row[0] = i;
    }
    for (j, cell) in d[0].iter_mut().enumerate() {
        *cell = j;
    }
    for i in 1..=a.len() {
        for j in 1..=b.len() {
            let sub = d[i - 1][j - 1] + usize::from(a[i - 1] != b[j - 1]);
            d[i][j] = sub.min(d[i - 1][j] + 1).min(d[i][j - 1] + 1);
        }
    }
    d[a.len()][b.len()]
}

fn c03_metric_oracles() -> Outcome {
    let start = Instant::now();
    let mut rng = seeded(3);
    let mut auc_bad = 0;
    for _ in 0..200 {
        let np = rng.random_range(1..=100);
        let nn = rng.random_range(1..=100);
        // Few distinct values force many ties.
        let levels = rng.random_range(1..=10);
        let pos: Vec<f64> = (0..np).map(|_| rng.random_range(0..levels) as f64).collect();
        let neg: Vec<f64> = (0..nn).map(|_| rng.random_range(0..levels) as f64).collect();
        if auc(&pos, &neg).unwrap() != brute_auc(&pos, &neg) {
            auc_bad += 1;
        }
    }
    let mut lev_bad = 0;
    for _ in 0..1000 {
        let word = |rng: &mut rand_chacha::ChaCha8Rng| -> String {
            let n = rng.random_range(0..12);
            (0..n).map(|_| ['a', 'b', 'c', 'X', '1', 'é'][rng.random_range(0..6)]).collect()
        };
        let (a, b) = (word(&mut rng), word(&mut rng));
        if levenshtein(&a, &b) != dp_levenshtein(&a, &b) {
            lev_bad += 1;
        }
    }
    let elapsed = start.elapsed();
    outcome(
        auc_bad == 0 && lev_bad == 0 && within(elapsed, 5),
        format!("auc mismatches {auc_bad}/200, levenshtein mismatches {lev_bad}/1000; {:.2}s", elapsed.as_secs_f64()),
    )
}

fn c04_gradient_check() -> Outcome {
    let cfg = ModelConfig {
        embed_rows_per_feature: 16,
        embed_dim_per_feature: 3,
        encoder_depth: 3,
        window: 1,
        hidden_dim: 5,
        seed: 4,
        ..ModelConfig::default()
    };
    let mut model = NerModel::new(cfg, LabelSet::new(["PERSON", "LOCATION"]).unwrap()).unwrap();
    let doc = AnnotatedDocument::new("Alice visited Paris", vec![EntitySpan::new(0, 5, "PERSON"), EntitySpan::new(14, 19, "LOCATION")]).unwrap();
    let analytic = model.gradients(&doc).unwrap();
    let names = model.parameter_names();
    let eps = 1e-6;
    let mut worst: f64 = 0.0;
    let mut worst_name = String::new();
    for (t, (name, _)) in names.iter().enumerate() {
        let n = model.parameters()[t].len();
        let mut numeric = vec![0.0; n];
        for (i, g) in numeric.iter_mut().enumerate() {
            let orig = model.parameters()[t][i];
            model.parameters_mut()[t][i] = orig + eps;
            let up = model.loss(&doc).unwrap();
            model.parameters_mut()[t][i] = orig - eps;
            let down = model.loss(&doc).unwrap();
            model.parameters_mut()[t][i] = orig;
            *g = (up - down) / (2.0 * eps);
        }
        let diff: f64 = analytic[t].iter().zip(&numeric).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt();
        let na: f64 = analytic[t].iter().map(|a| a * a).sum::<f64>().sqrt();
        let nn: f64 = numeric.iter().map(|a| a * a).sum::<f64>().sqrt();
        let rel = if na + nn == 0.0 { 0.0 } else { diff / (na + nn) };
        if rel > worst {
            worst = rel;
            worst_name = name.clone();
        }
    }
    outcome(
        worst <= 1e-4,
        format!("{} tensors, worst relative error {worst:.2e} ({worst_name})", names.len()),
    )
}

fn c05_receptive_field() -> Outcome {
    let bank = TemplateBank::default();
    let mut rng = seeded(5);
    let corpus = synth_corpus(&SynthSpec::new([("person", 40), ("location", 40), ("filler", 20)]), &bank, &mut rng).unwrap();
    let cfg = ModelConfig { encoder_depth: 3, window: 1, hidden_dim: 16, ..ModelConfig::default() };
    let mut model = NerModel::new(cfg, LabelSet::new(["PERSON", "LOCATION"]).unwrap()).unwrap();
    model.train(&corpus, &TrainConfig { epochs: 3, ..TrainConfig::default() }).unwrap();
    let base: Vec<String> = "the nurse told Alice that the clinic in Boston will call her back soon"
        .split(' ')
        .map(String::from)
        .collect();
    let probe = 6;
    let reference = model.predict_quiet(&base.join(" ")).tag_distributions[probe].clone();
    let pool: Vec<&str> = words().iter().chain(names()).copied().collect();
    let mut identical = 0;
    for _ in 0..100 {
        let mut w = base.clone();
        for (i, slot) in w.iter_mut().enumerate() {
            if i.abs_diff(probe) >= 5 && rng.random_bool(0.7) {
                *slot = pool[rng.random_range(0..pool.len())].to_string();
            }
        }
        let r = model.predict_quiet(&w.join(" "));
        if r.tokens.len() == base.len() && r.tag_distributions[probe] == reference {
            identical += 1;
        }
    }
    // Control: a neighbour inside the window does move the output.
    let mut near = base.clone();
    near[probe + 1] = "Zanzibar".into();
    let moved = model.predict_quiet(&near.join(" ")).tag_distributions[probe] != reference;
    outcome(
        identical == 100 && moved,
        format!("{identical}/100 perturbations at distance >= 5 bit-identical; near perturbation changes output: {moved}"),
    )
}

fn base_config(kind: &str) -> ExperimentConfig {
    ExperimentConfig::new(ExperimentKind::parse(kind).unwrap()).resolved()
}

fn c06_memorization() -> Outcome {
    let start = Instant::now();
    let mut cfg = base_config("memorize-sweep");
    cfg.sizes.candidates = 200;
    cfg.sizes.targets = 10;
    cfg.sizes.insertions = vec![1, 4];
    cfg.train.as_mut().unwrap().epochs = 50;
    let o = experiment::memorize_sweep(&cfg).unwrap();
    let reached = (0..10).filter(|&t| o.epochs_to_min(0, "", t, 1).is_some()).count();
    // Non-increasing in insertions at every fixed epoch, per target.
    let ordered = (0..10)
        .filter(|&t| (1..=50).all(|e| o.rank0_at(0, "", t, 4, e).unwrap() <= o.rank0_at(0, "", t, 1, e).unwrap()))
        .count();
    let epochs: Vec<Option<usize>> = (0..10).map(|t| o.epochs_to_min(0, "", t, 1)).collect();
    let elapsed = start.elapsed();
    outcome(
        reached >= 9 && ordered >= 8 && within(elapsed, 300),
        format!(
            "single insertion reaches rank0=0 for {reached}/10 (epochs {epochs:?}); 4 <= 1 insertion at every epoch for {ordered}/10; {:.1}s",
            elapsed.as_secs_f64()
        ),
    )
}

fn c07_strength_ordering() -> Outcome {
    let mut cfg = base_config("strength-sweep");
    cfg.sizes.levels = vec![0, 4];
    cfg.sizes.targets = 10;
    let o = experiment::strength_sweep(&cfg).unwrap();
    let l0 = o.median_epochs_to_min("level=0").unwrap();
    let l4 = o.median_epochs_to_min("level=4").unwrap();
    outcome(l4 >= l0, format!("median epochs-to-minimum: level 0 = {l0}, level 4 = {l4}"))
}

fn c08_neighbors() -> Outcome {
    let mut cfg = base_config("neighbor");
    cfg.sizes.feature_passwords = 5000;
    let o = experiment::neighbor_experiment(&cfg).unwrap();
    let (_, target, table) = &o.runs[0];
    let rho = table.spearman().unwrap_or(f64::NAN);
    let bin0 = table.bins.iter().find(|b| b.distance == 0).map(|b| b.mean_rank);
    let min = table.bins.iter().map(|b| b.mean_rank).fold(f64::INFINITY, f64::min);
    let bin0_min = bin0 == Some(min);
    outcome(
        rho >= 0.8 && bin0_min,
        format!(
            "target {target:?}, {} candidates, {} bins; spearman {rho:.3}; bin-0 mean rank {bin0:?} is minimum: {bin0_min}",
            table.ranks.scores.len(),
            table.bins.len()
        ),
    )
}

const MI_SEEDS: [u64; 5] = [0, 1, 2, 3, 4];

fn mi_aucs(kind: &str, members: Option<usize>) -> Vec<f64> {
    let mut cfg = base_config(kind);
    cfg.seeds = MI_SEEDS.to_vec();
    if let Some(m) = members {
        cfg.sizes.members = m;
    }
    experiment::mi_experiment(&cfg).unwrap().final_aucs(false).into_iter().map(|(_, a)| a).collect()
}

fn fmt(v: &[f64]) -> String {
    v.iter().map(|x| format!("{x:.3}")).collect::<Vec<_>>().join(", ")
}

fn c09_rarity() -> Outcome {
    let rare = mi_aucs("mi-secret-10", None);
    let common = mi_aucs("mi-secret-150", None);
    let wins = rare.iter().zip(&common).filter(|(r, c)| r > c).count();
    let above = rare.iter().chain(&common).all(|&a| a > 0.55);
    outcome(
        wins >= 4 && above,
        format!("AUC with 10 docs [{}] vs 150 docs [{}]; rarer wins {wins}/5; all > 0.55: {above}", fmt(&rare), fmt(&common)),
    )
}

fn c10_unknown_phrase() -> Outcome {
    let aucs = mi_aucs("mi-unknown-phrase", None);
    let ok = aucs.iter().all(|a| (0.40..=0.60).contains(a));
    outcome(ok, format!("AUC with an unseen surrounding phrase [{}]; required within [0.40, 0.60]", fmt(&aucs)))
}

fn timing_config(kind: &str) -> ExperimentConfig {
    let mut cfg = base_config(kind);
    cfg.sizes.members = 500;
    cfg.sizes.nonmembers = 500;
    cfg
}

fn c11_timing_simulated() -> Outcome {
    let start = Instant::now();
    let mut cfg = timing_config("timing");
    cfg.cost.noise_scale = 0.0;
    cfg.cost.residual_miss_cost = 0.0;
    let plain = experiment::timing_experiment(&cfg).unwrap();
    cfg.cost.residual_miss_cost = 5.0;
    let residual = experiment::timing_experiment(&cfg).unwrap();
    let again = experiment::timing_experiment(&cfg).unwrap();
    let (a1, r2) = (plain.auc(0, 1).unwrap(), residual.auc(0, 2).unwrap());
    let deterministic = residual == again;
    let elapsed = start.elapsed();
    outcome(
        a1 == 1.0 && r2 > 0.8 && deterministic && within(elapsed, 5),
        format!(
            "first-repeat AUC {a1}; second-repeat AUC with residual cost {r2}; deterministic {deterministic}; {:.2}s",
            elapsed.as_secs_f64()
        ),
    )
}

fn c12_timing_wall_clock() -> Outcome {
    let mut cfg = timing_config("timing");
    cfg.cost = CostModel::wall_clock();
    cfg.sizes.repeats = 1;
    let o = experiment::timing_experiment(&cfg).unwrap();
    let a = o.auc(0, 1).unwrap();
    outcome(a >= 0.90, format!("wall-clock AUC {a:.4} on 500/500 words after warmup (environment-sensitive)"))
}

fn c13_constant_delay() -> Outcome {
    let cfg = timing_config("timing-defense");
    let o = experiment::timing_defense(&cfg).unwrap();
    let a = o.auc(0, 1).unwrap();
    let delta = o.runs[0].delta.unwrap();
    let members = [2.08, 2.08, 2.08, 2.08, 2.08, 2.08, 2.08, 2.08, 0.5, 7.0];
    let nonmembers = [2.44, 2.44, 2.44, 2.44, 2.44, 2.44, 2.44, 2.44, 0.9, 9.0];
    let d = delta_from_durations(&members, &nonmembers, 0.10).unwrap();
    // The same lists in hundredths of a unit are exact integers in f64.
    let centi = |v: &[f64]| v.iter().map(|x| (x * 100.0).round()).collect::<Vec<_>>();
    let d_centi = delta_from_durations(&centi(&members), &centi(&nonmembers), 0.10).unwrap();
    let exact = d == 2.44_f64 - 2.08_f64 && (d - 0.36).abs() < 1e-12 && d_centi == 36.0;
    outcome(
        (0.45..=0.55).contains(&a) && exact,
        format!("calibrated delta {delta}, defended AUC {a}; constructed lists give delta {d}, {d_centi} in hundredths (exact: {exact})"),
    )
}

fn c14_dummy_defense() -> Outcome {
    let mut cfg = base_config("dummy-defense");
    cfg.seeds = MI_SEEDS.to_vec();
    let o = experiment::dummy_defense(&cfg).unwrap();
    let plain: Vec<f64> = o.final_aucs(false).into_iter().map(|(_, a)| a).collect();
    let dummy: Vec<f64> = o.final_aucs(true).into_iter().map(|(_, a)| a).collect();
    let ok = dummy.iter().all(|a| (0.40..=0.60).contains(a)) && plain.iter().all(|&a| a > 0.60);
    outcome(ok, format!("defended AUC [{}]; undefended AUC [{}]", fmt(&dummy), fmt(&plain)))
}

fn c15_generators() -> Outcome {
    let mut rng = seeded(15);
    let cards = (0..1000).filter(|_| luhn_valid(&gen_credit_card(&mut rng)).unwrap()).count();
    let c = PasswordConstraints::default();
    let pw = (0..1000).filter(|_| c.satisfied_by(&gen_password(&c, &mut rng).unwrap())).count();
    let phone_format = |p: &str| {
        let b = p.as_bytes();
        b.len() == 12
            && b.iter().enumerate().all(|(i, ch)| if i == 3 || i == 7 { *ch == b'-' } else { ch.is_ascii_digit() })
    };
    let phones = (0..1000)
        .filter(|_| {
            let p = gen_phone(&mut rng);
            phone_format(&p) && phone_allowed(&p)
        })
        .count();
    let levels: Vec<u8> = [1e3 - 1.0, 1e6 - 1.0, 1e8 - 1.0, 1e10 - 1.0, 1e10]
        .iter()
        .map(|&g| StrengthLevel::from_guesses(g).level())
        .collect();
    outcome(
        cards == 1000 && pw == 1000 && phones == 1000 && levels == [0, 1, 2, 3, 4],
        format!("Luhn-valid {cards}/1000, constrained passwords {pw}/1000, phones {phones}/1000, bucket levels {levels:?}"),
    )
}

fn read_dir_bytes(dir: &std::path::Path) -> Vec<(String, Vec<u8>)> {
    let mut out: Vec<(String, Vec<u8>)> = std::fs::read_dir(dir)
        .unwrap()
        .map(|e| e.unwrap().path())
        .filter(|p| p.extension().is_some_and(|x| x == "csv"))
        .map(|p| (p.file_name().unwrap().to_string_lossy().into_owned(), std::fs::read(&p).unwrap()))
        .collect();
    out.sort();
    out
}

fn c16_determinism() -> Outcome {
    let tmp = tempfile::tempdir().unwrap();
    let mut configs = Vec::new();
    let mut memo = base_config("memorize-sweep");
    memo.sizes.targets = 2;
    memo.sizes.candidates = 50;
    memo.train.as_mut().unwrap().epochs = 3;
    configs.push(memo);
    let mut timing = timing_config("timing");
    timing.cost.residual_miss_cost = 2.0;
    timing.cost.noise_scale = 1.5;
    configs.push(timing);
    configs.push(timing_config("timing-defense"));
    let mut mi = base_config("mi-secret-10");
    mi.train.as_mut().unwrap().epochs = 3;
    configs.push(mi);
    let mut checked = 0;
    let mut differing = Vec::new();
    for (i, cfg) in configs.iter().enumerate() {
        let a = tmp.path().join(format!("{i}a"));
        let b = tmp.path().join(format!("{i}b"));
        experiment::run(cfg, &a).unwrap();
        experiment::run(cfg, &b).unwrap();
        let (fa, fb) = (read_dir_bytes(&a), read_dir_bytes(&b));
        checked += fa.len();
        if fa != fb || fa.is_empty() {
            differing.push(cfg.kind.to_string());
        }
    }
    outcome(
        differing.is_empty(),
        format!("{checked} CSV files from {} simulated configs compared byte-for-byte; differing: {differing:?}", configs.len()),
    )
}

#[test]
fn acceptance() {
    type Criterion = (&'static str, fn() -> Outcome);
    let criteria: [Criterion; 16] = [
        ("01 feature injectivity", c01_feature_injectivity),
        ("02 shape examples", c02_shape_examples),
        ("03 metric oracles", c03_metric_oracles),
        ("04 gradient check", c04_gradient_check),
        ("05 receptive field", c05_receptive_field),
        ("06 memorization", c06_memorization),
        ("07 strength ordering", c07_strength_ordering),
        ("08 neighbor analysis", c08_neighbors),
        ("09 MI rarity", c09_rarity),
        ("10 unknown surrounding phrase", c10_unknown_phrase),
        ("11 timing, simulated", c11_timing_simulated),
        ("12 timing, wall clock", c12_timing_wall_clock),
        ("13 constant-delay defense", c13_constant_delay),
        ("14 dummy-data defense", c14_dummy_defense),
        ("15 generators", c15_generators),
        ("16 determinism", c16_determinism),
    ];
    let mut failed = Vec::new();
    for (name, check) in criteria {
        let o = check();
        println!("{} criterion {name}: {}", if o.pass { "PASS" } else { "FAIL" }, o.detail);
        if !o.pass {
            failed.push(name);
        }
    }
    assert!(failed.is_empty(), "failed criteria: {failed:?}");
}
