//! Compositionality measurements: accuracies from persisted prediction
//! records, the compositionality factor and score, graded
//! epsilon-compositionality, exact Clopper-Pearson interval curves per
//! stratum, validation-scheme score estimates, and the overgeneralisation
//! comparison against true labels.
//!
//! All metrics are functions of prediction files so every number in a
//! report can be replayed without re-evaluating a model.

use crate::backend::Answer;
use serde::{Deserialize, Serialize};
use std::path::Path;
use thiserror::Error;

#[derive(Error, Debug, Clone, PartialEq)]
pub enum MetricsError {
    #[error("accuracy {0} outside [0, 1]")]
    OutOfRange(f64),
    #[error("empty stratum {0}")]
    EmptyStratum(i32),
    #[error("empty validation half `{0}`")]
    EmptyHalf(&'static str),
    #[error("no corrupted examples")]
    NoCorruptedExamples,
    #[error("io: {0}")]
    Io(String),
}

fn check_acc(x: f64) -> Result<f64, MetricsError> {
    if (0.0..=1.0).contains(&x) {
        Ok(x)
    } else {
        Err(MetricsError::OutOfRange(x))
    }
}

/// `max(0, acc_a - acc_b)`: the generalisation gap between two datasets.
pub fn c_fact(acc_a: f64, acc_b: f64) -> Result<f64, MetricsError> {
    Ok((check_acc(acc_a)? - check_acc(acc_b)?).max(0.0))
}

/// `(1 - 2 * cFact) * acc_a`: accuracy penalized by the gap. Fixed point
/// at the 0.5 baseline; negative when the gap passes one half.
pub fn c_score(acc_a: f64, acc_b: f64) -> Result<f64, MetricsError> {
    Ok((1.0 - 2.0 * c_fact(acc_a, acc_b)?) * acc_a)
}

/// Graded compositionality: the gap does not exceed epsilon.
pub fn epsilon_compositional(acc_a: f64, acc_b: f64, epsilon: f64) -> Result<bool, MetricsError> {
    Ok(c_fact(acc_a, acc_b)? <= epsilon)
}

// ---------------------------------------------------------------------
// Exact binomial (Clopper-Pearson) intervals.
// ---------------------------------------------------------------------

fn binom_pmf_ln(n: usize, k: usize, ln_fact: &[f64], p: f64) -> f64 {
    ln_fact[n] - ln_fact[k] - ln_fact[n - k]
        + (k as f64) * p.ln()
        + ((n - k) as f64) * (1.0 - p).ln()
}

/// P(X >= k) for X ~ Binomial(n, p).
fn binom_tail_ge(n: usize, k: usize, p: f64) -> f64 {
    if k == 0 {
        return 1.0;
    }
    if p <= 0.0 {
        return 0.0;
    }
    if p >= 1.0 {
        return 1.0;
    }
    let ln_fact: Vec<f64> = {
        let mut v = Vec::with_capacity(n + 1);
        let mut acc = 0.0;
        v.push(0.0);
        for i in 1..=n {
            acc += (i as f64).ln();
            v.push(acc);
        }
        v
    };
    (k..=n).map(|i| binom_pmf_ln(n, i, &ln_fact, p).exp()).sum::<f64>().min(1.0)
}

/// Exact two-sided Clopper-Pearson bounds for `successes` out of `n` at the
/// given confidence. Solves the binomial tail equations by bisection, so
/// the bounds always bracket the point estimate.
pub fn clopper_pearson(successes: usize, n: usize, confidence: f64) -> (f64, f64) {
    assert!(successes <= n && n > 0);
    let alpha = 1.0 - confidence;
    let half = alpha / 2.0;
    let lower = if successes == 0 {
        0.0
    } else {
        // Largest p with P(X >= k | p) <= alpha/2; the tail is increasing
        // in p.
        let mut lo = 0.0;
        let mut hi = successes as f64 / n as f64;
        for _ in 0..200 {
            let mid = 0.5 * (lo + hi);
            if binom_tail_ge(n, successes, mid) < half {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        0.5 * (lo + hi)
    };
    let upper = if successes == n {
        1.0
    } else {
        // P(X <= k | p) = 1 - P(X >= k+1 | p) is decreasing in p.
        let mut lo = successes as f64 / n as f64;
        let mut hi = 1.0;
        for _ in 0..200 {
            let mid = 0.5 * (lo + hi);
            if 1.0 - binom_tail_ge(n, successes + 1, mid) > half {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        0.5 * (lo + hi)
    };
    (lower, upper)
}

// ---------------------------------------------------------------------
// Prediction records.
// ---------------------------------------------------------------------

/// One persisted model prediction; the atom every metric is computed from.
#[derive(Clone, Copy, PartialEq, Debug, Serialize, Deserialize)]
pub struct PredictionRecord {
    pub id: u64,
    pub predicted: Answer,
    /// Label as it appears in the dataset (corrupted where flagged).
    pub gold: Answer,
    /// Uncorrupted oracle label.
    pub truth: Answer,
    pub stratum: i32,
    pub n_sentences: usize,
    pub support_depth: usize,
    pub corrupted: bool,
}

pub fn write_predictions(path: &Path, records: &[PredictionRecord]) -> Result<(), MetricsError> {
    let mut body = String::new();
    for r in records {
        body.push_str(&serde_json::to_string(r).unwrap());
        body.push('\n');
    }
    std::fs::write(path, body).map_err(|e| MetricsError::Io(e.to_string()))
}

pub fn read_predictions(path: &Path) -> Result<Vec<PredictionRecord>, MetricsError> {
    let text = std::fs::read_to_string(path).map_err(|e| MetricsError::Io(e.to_string()))?;
    let mut out = Vec::new();
    for line in text.lines() {
        if line.trim().is_empty() {
            continue;
        }
        out.push(serde_json::from_str(line).map_err(|e| MetricsError::Io(e.to_string()))?);
    }
    Ok(out)
}

/// Accuracy against the dataset labels; NaN on an empty slice.
pub fn accuracy(records: &[PredictionRecord]) -> f64 {
    if records.is_empty() {
        return f64::NAN;
    }
    let correct = records.iter().filter(|r| r.predicted == r.gold).count();
    correct as f64 / records.len() as f64
}

/// Accuracy against the uncorrupted oracle labels.
pub fn accuracy_vs_truth(records: &[PredictionRecord]) -> f64 {
    if records.is_empty() {
        return f64::NAN;
    }
    let correct = records.iter().filter(|r| r.predicted == r.truth).count();
    correct as f64 / records.len() as f64
}

#[derive(Clone, PartialEq, Debug, Serialize, Deserialize)]
pub struct StratumAccuracy {
    pub stratum: i32,
    pub n: usize,
    pub correct: usize,
    pub accuracy: f64,
    pub lower95: f64,
    pub upper95: f64,
}

/// Per-stratum accuracies with exact 95% Clopper-Pearson bounds. Strata
/// requested but absent from the records are reported with `n = 0` rather
/// than failing.
pub fn per_stratum_accuracy(
    records: &[PredictionRecord],
    expected_strata: Option<&[i32]>,
) -> Vec<StratumAccuracy> {
    let mut strata: Vec<i32> = records.iter().map(|r| r.stratum).collect();
    if let Some(expected) = expected_strata {
        strata.extend_from_slice(expected);
    }
    strata.sort_unstable();
    strata.dedup();
    strata
        .into_iter()
        .map(|stratum| {
            let in_stratum: Vec<&PredictionRecord> =
                records.iter().filter(|r| r.stratum == stratum).collect();
            let n = in_stratum.len();
            if n == 0 {
                return StratumAccuracy {
                    stratum,
                    n: 0,
                    correct: 0,
                    accuracy: f64::NAN,
                    lower95: f64::NAN,
                    upper95: f64::NAN,
                };
            }
            let correct = in_stratum.iter().filter(|r| r.predicted == r.gold).count();
            let (lo, hi) = clopper_pearson(correct, n, 0.95);
            StratumAccuracy {
                stratum,
                n,
                correct,
                accuracy: correct as f64 / n as f64,
                lower95: lo,
                upper95: hi,
            }
        })
        .collect()
}

/// The compositionality score estimated from the two validation halves.
pub fn scheme_score_estimate(
    half_a: &[PredictionRecord],
    half_b: &[PredictionRecord],
) -> Result<f64, MetricsError> {
    if half_a.is_empty() {
        return Err(MetricsError::EmptyHalf("A"));
    }
    if half_b.is_empty() {
        return Err(MetricsError::EmptyHalf("B"));
    }
    c_score(accuracy(half_a), accuracy(half_b))
}

#[derive(Clone, PartialEq, Debug, Serialize, Deserialize)]
pub struct OvergeneralisationReport {
    /// Accuracy on the corrupted examples, against true labels.
    pub acc_corrupted: f64,
    /// Accuracy on the uncorrupted remainder, against true labels.
    pub acc_uncorrupted: f64,
    pub c_fact: f64,
    /// True when the model does at least as well on the corrupted set.
    pub overgeneralises: bool,
}

/// Scores the train split of a corrupted bundle against true labels.
pub fn overgeneralisation_report(
    records: &[PredictionRecord],
) -> Result<OvergeneralisationReport, MetricsError> {
    let corrupted: Vec<PredictionRecord> =
        records.iter().filter(|r| r.corrupted).copied().collect();
    if corrupted.is_empty() {
        return Err(MetricsError::NoCorruptedExamples);
    }
    let uncorrupted: Vec<PredictionRecord> =
        records.iter().filter(|r| !r.corrupted).copied().collect();
    let acc_c = accuracy_vs_truth(&corrupted);
    let acc_u = accuracy_vs_truth(&uncorrupted);
    Ok(OvergeneralisationReport {
        acc_corrupted: acc_c,
        acc_uncorrupted: acc_u,
        c_fact: c_fact(acc_u, acc_c)?,
        overgeneralises: acc_c >= acc_u,
    })
}

/// The full report for a trained model: split accuracies, per-stratum
/// curves, compositionality numbers, scheme estimates and the optional
/// overgeneralisation pair.
#[derive(Clone, PartialEq, Debug, Serialize, Deserialize)]
pub struct CompositionReport {
    pub acc_train: f64,
    pub acc_test: f64,
    pub c_fact: f64,
    pub c_score: f64,
    pub epsilon_flags: Vec<(f64, bool)>,
    pub per_stratum: Vec<StratumAccuracy>,
    pub estimate_ab: Option<f64>,
    pub estimate_all: Option<f64>,
    pub acc_train_prime: Option<f64>,
    pub overgeneralisation: Option<OvergeneralisationReport>,
    /// Majority-class baseline of the dataset when it is not 0.5.
    pub baseline_prior: Option<f64>,
}

pub struct ReportInputs<'a> {
    pub train: &'a [PredictionRecord],
    pub test: &'a [PredictionRecord],
    pub valid_v: &'a [PredictionRecord],
    pub valid_a: &'a [PredictionRecord],
    pub valid_b: &'a [PredictionRecord],
    pub valid_c: &'a [PredictionRecord],
    pub train_prime: Option<&'a [PredictionRecord]>,
    pub class_prior: f64,
    pub epsilons: &'a [f64],
}

impl CompositionReport {
    pub fn build(inputs: &ReportInputs) -> Result<CompositionReport, MetricsError> {
        let acc_train = accuracy(inputs.train);
        let acc_test = accuracy(inputs.test);
        let cf = c_fact(acc_train, acc_test)?;
        let cs = c_score(acc_train, acc_test)?;
        let mut epsilon_flags = Vec::new();
        for &e in inputs.epsilons {
            epsilon_flags.push((e, cf <= e));
        }
        let mut all: Vec<PredictionRecord> = inputs.train.to_vec();
        all.extend_from_slice(inputs.test);
        Ok(CompositionReport {
            acc_train,
            acc_test,
            c_fact: cf,
            c_score: cs,
            epsilon_flags,
            per_stratum: per_stratum_accuracy(&all, None),
            estimate_ab: scheme_score_estimate(inputs.valid_a, inputs.valid_b).ok(),
            estimate_all: scheme_score_estimate(inputs.valid_v, inputs.valid_c).ok(),
            acc_train_prime: inputs.train_prime.map(accuracy),
            overgeneralisation: overgeneralisation_report(inputs.train).ok(),
            baseline_prior: if (inputs.class_prior - 0.5).abs() > 1e-9 {
                Some(inputs.class_prior)
            } else {
                None
            },
        })
    }

    pub fn render_text(&self) -> String {
        let mut s = String::new();
        s.push_str(&format!("acc_train      {:.4}\n", self.acc_train));
        s.push_str(&format!("acc_test       {:.4}\n", self.acc_test));
        s.push_str(&format!("c_fact         {:.4}\n", self.c_fact));
        s.push_str(&format!("c_score        {:.4}\n", self.c_score));
        if let Some(tp) = self.acc_train_prime {
            s.push_str(&format!("acc_train'     {tp:.4}\n"));
        }
        if let Some(ab) = self.estimate_ab {
            s.push_str(&format!("estimate AB    {ab:.4}\n"));
        }
        if let Some(all) = self.estimate_all {
            s.push_str(&format!("estimate All   {all:.4}\n"));
        }
        if let Some(prior) = self.baseline_prior {
            s.push_str(&format!("baseline prior {prior:.4}\n"));
        }
        for (e, ok) in &self.epsilon_flags {
            s.push_str(&format!("{e}-compositional: {}\n", if *ok { "yes" } else { "no" }));
        }
        if let Some(og) = &self.overgeneralisation {
            s.push_str(&format!(
                "overgeneralisation: acc_C {:.4} acc_A\\C {:.4} c_fact {:.4} -> {}\n",
                og.acc_corrupted,
                og.acc_uncorrupted,
                og.c_fact,
                if og.overgeneralises { "overgeneralises" } else { "memorises" }
            ));
        }
        s.push_str("stratum,n,accuracy,lower95,upper95\n");
        for row in &self.per_stratum {
            s.push_str(&format!(
                "{},{},{},{},{}\n",
                row.stratum, row.n, row.accuracy, row.lower95, row.upper95
            ));
        }
        s
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn metric_formula_table() {
        // Expected values computed inline from the definitions.
        let cases: [(f64, f64); 10] = [
            (0.9, 0.7),
            (0.7, 0.9),
            (0.5, 0.5),
            (1.0, 0.0),
            (0.0, 1.0),
            (1.0, 1.0),
            (0.85, 0.8),
            (0.6, 0.1),
            (0.3, 0.3),
            (0.97, 0.72),
        ];
        for (a, b) in cases {
            let cf = (a - b).max(0.0);
            let cs = (1.0 - 2.0 * cf) * a;
            assert_eq!(c_fact(a, b).unwrap(), cf);
            assert_eq!(c_score(a, b).unwrap(), cs);
        }
        assert_eq!(c_score(0.9, 0.7).unwrap(), (1.0 - 2.0 * (0.9 - 0.7)) * 0.9);
        // 0.5 baseline is a fixed point.
        assert_eq!(c_score(0.5, 0.5).unwrap(), 0.5);
        // Total overfit at perfect train accuracy is maximally penalized.
        assert_eq!(c_score(1.0, 0.0).unwrap(), -1.0);
        assert!(matches!(c_fact(1.2, 0.0), Err(MetricsError::OutOfRange(_))));
    }

    #[test]
    fn epsilon_grading() {
        assert!(epsilon_compositional(0.9, 0.85, 0.1).unwrap());
        assert!(!epsilon_compositional(0.9, 0.7, 0.1).unwrap());
        assert!(epsilon_compositional(1.0, 0.0, 1.0).unwrap());
    }

    #[test]
    fn clopper_pearson_endpoints() {
        let (lo, _) = clopper_pearson(0, 10, 0.95);
        assert_eq!(lo, 0.0);
        let (_, hi) = clopper_pearson(10, 10, 0.95);
        assert_eq!(hi, 1.0);
        for (k, n) in [(1, 7), (3, 9), (5, 10), (49, 50)] {
            let (lo, hi) = clopper_pearson(k, n, 0.95);
            let p = k as f64 / n as f64;
            assert!(lo <= p && p <= hi);
            assert!((0.0..=1.0).contains(&lo) && (0.0..=1.0).contains(&hi));
        }
    }

    #[test]
    fn clopper_pearson_eight_of_ten() {
        let (lo, hi) = clopper_pearson(8, 10, 0.95);
        assert!((lo - 0.4439).abs() < 5e-4, "lower {lo}");
        assert!((hi - 0.9748).abs() < 5e-4, "upper {hi}");
    }

    fn rec(
        id: u64,
        predicted: Answer,
        gold: Answer,
        truth: Answer,
        corrupted: bool,
    ) -> PredictionRecord {
        PredictionRecord {
            id,
            predicted,
            gold,
            truth,
            stratum: 2,
            n_sentences: 2,
            support_depth: 0,
            corrupted,
        }
    }

    #[test]
    fn overgen_oracle_and_memoriser() {
        use Answer::{No, Yes};
        // An oracle-following model answers truth everywhere, so it is
        // perfect on corrupted examples relative to truth.
        let oracle: Vec<PredictionRecord> = vec![
            rec(0, Yes, Yes, Yes, false),
            rec(1, No, Yes, No, true),
            rec(2, Yes, No, Yes, true),
        ];
        let r = overgeneralisation_report(&oracle).unwrap();
        assert_eq!(r.acc_corrupted, 1.0);
        assert!(r.overgeneralises);
        // A label memoriser scores zero against truth on corrupted rows.
        let memoriser: Vec<PredictionRecord> = vec![
            rec(0, Yes, Yes, Yes, false),
            rec(1, Yes, Yes, No, true),
            rec(2, No, No, Yes, true),
        ];
        let r = overgeneralisation_report(&memoriser).unwrap();
        assert_eq!(r.acc_corrupted, 0.0);
        assert!(!r.overgeneralises);
        assert!(matches!(
            overgeneralisation_report(&[rec(0, Yes, Yes, Yes, false)]),
            Err(MetricsError::NoCorruptedExamples)
        ));
    }

    #[test]
    fn scheme_estimate_basics() {
        use Answer::{No, Yes};
        let half: Vec<PredictionRecord> =
            vec![rec(0, Yes, Yes, Yes, false), rec(1, No, Yes, Yes, false)];
        // Identical halves estimate their own accuracy.
        assert_eq!(scheme_score_estimate(&half, &half).unwrap(), accuracy(&half));
        let perfect = vec![rec(0, Yes, Yes, Yes, false), rec(1, No, No, No, false)];
        let chance = vec![rec(2, Yes, Yes, Yes, false), rec(3, Yes, No, No, false)];
        // Perfect on A, chance on B: the estimate collapses to zero.
        assert_eq!(scheme_score_estimate(&perfect, &chance).unwrap(), 0.0);
        assert!(matches!(scheme_score_estimate(&[], &half), Err(MetricsError::EmptyHalf("A"))));
    }

    #[test]
    fn stratum_counts_total() {
        use Answer::Yes;
        let mut records = Vec::new();
        for i in 0..10 {
            let mut r = rec(i, Yes, Yes, Yes, false);
            r.stratum = (i % 3) as i32;
            records.push(r);
        }
        let rows = per_stratum_accuracy(&records, Some(&[0, 1, 2, 9]));
        let total: usize = rows.iter().map(|r| r.n).sum();
        assert_eq!(total, 10);
        // A requested-but-empty stratum is reported, not fatal.
        assert!(rows.iter().any(|r| r.stratum == 9 && r.n == 0));
    }
}
