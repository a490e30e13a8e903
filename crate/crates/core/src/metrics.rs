//! Measurement kernel shared by the attacks: edit distance, ROC/AUC with
//! half-credit ties, trimmed means and rank helpers.

use std::cmp::Ordering;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Levenshtein distance over Unicode scalar values.
pub fn levenshtein(a: &str, b: &str) -> usize {
    let a: Vec<char> = a.chars().collect();
    let b: Vec<char> = b.chars().collect();
    if a.is_empty() {
        return b.len();
    }
    let mut prev: Vec<usize> = (0..=b.len()).collect();
    let mut cur = vec![0; b.len() + 1];
    for (i, ca) in a.iter().enumerate() {
        cur[0] = i + 1;
        for (j, cb) in b.iter().enumerate() {
            let substitution = prev[j] + usize::from(ca != cb);
            cur[j + 1] = substitution.min(prev[j + 1] + 1).min(cur[j] + 1);
        }
        std::mem::swap(&mut prev, &mut cur);
    }
    prev[b.len()]
}

/// Probability that a random positive outscores a random negative, ties
/// counted as one half.
pub fn auc(pos: &[f64], neg: &[f64]) -> Result<f64> {
    if pos.is_empty() || neg.is_empty() {
        return Err(Error::EmptyInput("auc needs positive and negative scores"));
    }
    let mut sorted = neg.to_vec();
    sorted.sort_by(f64::total_cmp);
    // wins + ties/2 is a multiple of 0.5 and therefore exact in f64.
    let mut credit = 0.0;
    for &p in pos {
        let below = sorted.partition_point(|&n| n.total_cmp(&p) == Ordering::Less);
        let not_above = sorted.partition_point(|&n| n.total_cmp(&p) != Ordering::Greater);
        credit += below as f64 + 0.5 * (not_above - below) as f64;
    }
    Ok(credit / (pos.len() as f64 * neg.len() as f64))
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct RocPoint {
    pub fpr: f64,
    pub tpr: f64,
    /// Scores `>= threshold` are classified positive.
    pub threshold: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RocCurve {
    pub points: Vec<RocPoint>,
}

impl RocCurve {
    /// Trapezoidal area under the curve.
    pub fn area(&self) -> f64 {
        self.points
            .windows(2)
            .map(|w| (w[1].fpr - w[0].fpr) * (w[1].tpr + w[0].tpr) / 2.0)
            .sum()
    }

    pub fn write_csv<W: std::io::Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["fpr", "tpr", "threshold"])?;
        for p in &self.points {
            w.write_record([p.fpr.to_string(), p.tpr.to_string(), p.threshold.to_string()])?;
        }
        w.flush()?;
        Ok(())
    }
}

/// Sweeps a threshold over every distinct score, highest first.
pub fn roc_curve(pos: &[f64], neg: &[f64]) -> Result<RocCurve> {
    if pos.is_empty() || neg.is_empty() {
        return Err(Error::EmptyInput("roc curve needs positive and negative scores"));
    }
    let mut thresholds: Vec<f64> = pos.iter().chain(neg).copied().collect();
    thresholds.sort_by(|a, b| b.total_cmp(a));
    thresholds.dedup_by(|a, b| a.total_cmp(b) == Ordering::Equal);

    let rate = |scores: &[f64], t: f64| {
        scores.iter().filter(|s| s.total_cmp(&t) != Ordering::Less).count() as f64
            / scores.len() as f64
    };
    let mut points = Vec::with_capacity(thresholds.len() + 1);
    points.push(RocPoint {
        fpr: 0.0,
        tpr: 0.0,
        threshold: f64::INFINITY,
    });
    for t in thresholds {
        points.push(RocPoint {
            fpr: rate(neg, t),
            tpr: rate(pos, t),
            threshold: t,
        });
    }
    Ok(RocCurve { points })
}

/// Mean after dropping `floor(fraction * n)` values from each tail.
pub fn trimmed_mean(values: &[f64], fraction: f64) -> Result<f64> {
    if !(0.0..0.5).contains(&fraction) {
        return Err(Error::InvalidConfig(format!(
            "trim fraction {fraction} outside [0, 0.5)"
        )));
    }
    let cut = (fraction * values.len() as f64).floor() as usize;
    if values.len() <= 2 * cut {
        return Err(Error::EmptyInput("all values trimmed"));
    }
    let mut sorted = values.to_vec();
    sorted.sort_by(f64::total_cmp);
    let kept = &sorted[cut..sorted.len() - cut];
    Ok(kept.iter().sum::<f64>() / kept.len() as f64)
}

/// Normalized rank of `scores[target]`: the fraction of scores at least as
/// high as the target's (the target counts itself).
pub fn normalized_rank(scores: &[f64], target: usize) -> f64 {
    let t = scores[target];
    scores.iter().filter(|s| s.total_cmp(&t) != Ordering::Less).count() as f64
        / scores.len() as f64
}

/// Normalized rank of every entry, computed in one sort.
pub fn normalized_ranks(scores: &[f64]) -> Vec<f64> {
    let mut sorted = scores.to_vec();
    sorted.sort_by(f64::total_cmp);
    let n = scores.len() as f64;
    scores
        .iter()
        .map(|s| {
            let below = sorted.partition_point(|x| x.total_cmp(s) == Ordering::Less);
            (sorted.len() - below) as f64 / n
        })
        .collect()
}

/// 1-based ranks with ties sharing their average rank.
pub fn average_ranks(values: &[f64]) -> Vec<f64> {
    let mut order: Vec<usize> = (0..values.len()).collect();
    order.sort_by(|&a, &b| values[a].total_cmp(&values[b]));
    let mut ranks = vec![0.0; values.len()];
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && values[order[j + 1]] == values[order[i]] {
            j += 1;
        }
        let avg = (i + j) as f64 / 2.0 + 1.0;
        for &k in &order[i..=j] {
            ranks[k] = avg;
        }
        i = j + 1;
    }
    ranks
}

/// Spearman rank correlation; `None` when either side is constant.
pub fn spearman(x: &[f64], y: &[f64]) -> Option<f64> {
    assert_eq!(x.len(), y.len(), "spearman needs paired samples");
    if x.len() < 2 {
        return None;
    }
    let rx = average_ranks(x);
    let ry = average_ranks(y);
    let n = rx.len() as f64;
    let mx = rx.iter().sum::<f64>() / n;
    let my = ry.iter().sum::<f64>() / n;
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (a, b) in rx.iter().zip(&ry) {
        sxy += (a - mx) * (b - my);
        sxx += (a - mx) * (a - mx);
        syy += (b - my) * (b - my);
    }
    if sxx == 0.0 || syy == 0.0 {
        return None;
    }
    Some(sxy / (sxx * syy).sqrt())
}

pub fn mean(values: &[f64]) -> f64 {
    values.iter().sum::<f64>() / values.len() as f64
}

pub fn median(values: &[f64]) -> f64 {
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        (v[n / 2 - 1] + v[n / 2]) / 2.0
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn brute_auc(pos: &[f64], neg: &[f64]) -> f64 {
        let mut credit = 0.0;
        for p in pos {
            for n in neg {
                if p > n {
                    credit += 1.0;
                } else if p == n {
                    credit += 0.5;
                }
            }
        }
        credit / (pos.len() * neg.len()) as f64
    }

    #[test]
    fn levenshtein_examples() {
        assert_eq!(levenshtein("abc", "abc"), 0);
        assert_eq!(levenshtein("", "abc"), 3);
        assert_eq!(levenshtein("abc", ""), 3);
        // k->s, e->i, +g
        assert_eq!(levenshtein("kitten", "sitting"), 3);
    }

    #[test]
    fn auc_examples() {
        assert_eq!(auc(&[3.0, 4.0], &[1.0, 2.0]).unwrap(), 1.0);
        assert_eq!(auc(&[1.0, 2.0, 2.0], &[2.0, 1.0, 2.0]).unwrap(), 0.5);
        assert_eq!(auc(&[1.0, 3.0], &[2.0]).unwrap(), 0.5);
        assert!(matches!(auc(&[], &[1.0]), Err(Error::EmptyInput(_))));
    }

    #[test]
    fn roc_shapes() {
        let roc = roc_curve(&[3.0, 4.0], &[1.0, 2.0]).unwrap();
        assert!(roc.points.iter().any(|p| p.fpr == 0.0 && p.tpr == 1.0));
        let last = roc.points.last().unwrap();
        assert_eq!((last.fpr, last.tpr), (1.0, 1.0));

        let tie = roc_curve(&[1.0], &[1.0]).unwrap();
        let coords: Vec<_> = tie.points.iter().map(|p| (p.fpr, p.tpr)).collect();
        assert_eq!(coords, vec![(0.0, 0.0), (1.0, 1.0)]);
        assert_eq!(tie.area(), 0.5);
    }

    #[test]
    fn trimmed_mean_examples() {
        assert_eq!(trimmed_mean(&[5.0; 4], 0.1).unwrap(), 5.0);
        assert_eq!(trimmed_mean(&[0.0, 1.0, 2.0, 3.0, 100.0], 0.2).unwrap(), 2.0);
        assert_eq!(trimmed_mean(&[1.0, 2.0, 6.0], 0.0).unwrap(), 3.0);
        assert!(trimmed_mean(&[1.0, 2.0], 0.5).is_err());
        assert!(trimmed_mean(&[], 0.1).is_err());
    }

    #[test]
    fn ranks() {
        let scores = [0.9, 0.1, 0.5, 0.5];
        assert_eq!(normalized_rank(&scores, 0), 0.25);
        assert_eq!(normalized_rank(&scores, 1), 1.0);
        assert_eq!(normalized_rank(&scores, 2), 0.75);
        assert_eq!(normalized_ranks(&scores), vec![0.25, 1.0, 0.75, 0.75]);
        assert_eq!(average_ranks(&[10.0, 20.0, 20.0, 5.0]), vec![2.0, 3.5, 3.5, 1.0]);
    }

    #[test]
    fn spearman_monotone() {
        let x = [1.0, 2.0, 3.0, 4.0];
        assert!((spearman(&x, &[2.0, 4.0, 8.0, 16.0]).unwrap() - 1.0).abs() < 1e-12);
        assert!((spearman(&x, &[4.0, 3.0, 2.0, 1.0]).unwrap() + 1.0).abs() < 1e-12);
        assert!(spearman(&x, &[1.0; 4]).is_none());
    }

    fn scores() -> impl Strategy<Value = Vec<f64>> {
        prop::collection::vec((0u8..8).prop_map(f64::from), 1..40)
    }

    proptest! {
        #[test]
        fn levenshtein_is_a_metric(a in "[ab]{0,6}", b in "[ab]{0,6}", c in "[ab]{0,6}") {
            prop_assert_eq!(levenshtein(&a, &b), levenshtein(&b, &a));
            prop_assert_eq!(levenshtein(&a, &b) == 0, a == b);
            prop_assert!(levenshtein(&a, &c) <= levenshtein(&a, &b) + levenshtein(&b, &c));
        }

        #[test]
        fn auc_matches_pairs_and_trapezoid(pos in scores(), neg in scores()) {
            let fast = auc(&pos, &neg).unwrap();
            prop_assert_eq!(fast, brute_auc(&pos, &neg));
            prop_assert!((roc_curve(&pos, &neg).unwrap().area() - fast).abs() < 1e-12);
            prop_assert_eq!(fast + auc(&neg, &pos).unwrap(), 1.0);
        }

        #[test]
        fn roc_is_monotone(pos in scores(), neg in scores()) {
            let roc = roc_curve(&pos, &neg).unwrap();
            for w in roc.points.windows(2) {
                prop_assert!(w[1].fpr >= w[0].fpr && w[1].tpr >= w[0].tpr);
            }
        }

        #[test]
        fn trimmed_mean_ignores_order(mut v in prop::collection::vec(-100.0f64..100.0, 1..30)) {
            let before = trimmed_mean(&v, 0.1).unwrap();
            v.reverse();
            prop_assert_eq!(before, trimmed_mean(&v, 0.1).unwrap());
            let plain = trimmed_mean(&v, 0.0).unwrap();
            prop_assert!((plain - mean(&v)).abs() < 1e-9);
        }
    }
}
