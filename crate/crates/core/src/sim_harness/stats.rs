use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use statrs::distribution::{ChiSquared, ContinuousCDF};

use crate::audit_protocol::Verdict;
use crate::group::PrimeGroup;

use super::{routing_violations, SessionResult};

/// Largest subset table the chi-square statistic is computed over.
const MAX_SUBSET_CATEGORIES: u128 = 100_000;

/// Aggregate outcome counts over many sessions. Merging is associative and
/// commutative, so trials can be split across threads freely.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TrialStats {
    pub n: usize,
    pub k: usize,
    pub trials: u64,
    pub completions: u64,
    pub aborts_by_step: BTreeMap<u8, u64>,
    /// Completed sessions whose accepted total equals the true total.
    pub correct_sums: u64,
    pub routing_violations: u64,
    /// Sorted verification list -> sessions that revealed it.
    pub subset_frequency: BTreeMap<Vec<usize>, u64>,
}

impl TrialStats {
    pub fn new(n: usize, k: usize) -> Self {
        TrialStats {
            n,
            k,
            trials: 0,
            completions: 0,
            aborts_by_step: BTreeMap::new(),
            correct_sums: 0,
            routing_violations: 0,
            subset_frequency: BTreeMap::new(),
        }
    }

    pub fn record<G: PrimeGroup>(&mut self, result: &SessionResult<G>) {
        self.trials += 1;
        match result.verdict {
            Verdict::Completed { .. } => {
                self.completions += 1;
                if result.accepted_correct_sum() {
                    self.correct_sums += 1;
                }
            }
            Verdict::Aborted(c) => *self.aborts_by_step.entry(c.step.number()).or_default() += 1,
        }
        if !routing_violations(&result.transcript).is_empty() {
            self.routing_violations += 1;
        }
        if let Some(sel) = &result.selection {
            *self.subset_frequency.entry(sel.clone()).or_default() += 1;
        }
    }

    pub fn merge(mut self, other: TrialStats) -> TrialStats {
        assert_eq!(
            (self.n, self.k),
            (other.n, other.k),
            "merging stats of different shapes"
        );
        self.trials += other.trials;
        self.completions += other.completions;
        self.correct_sums += other.correct_sums;
        self.routing_violations += other.routing_violations;
        for (step, c) in other.aborts_by_step {
            *self.aborts_by_step.entry(step).or_default() += c;
        }
        for (subset, c) in other.subset_frequency {
            *self.subset_frequency.entry(subset).or_default() += c;
        }
        self
    }

    pub fn aborts(&self) -> u64 {
        self.aborts_by_step.values().sum()
    }

    pub fn aborts_at(&self, step: u8) -> u64 {
        self.aborts_by_step.get(&step).copied().unwrap_or(0)
    }

    /// Fraction of sessions that aborted.
    pub fn detection_rate(&self) -> f64 {
        self.aborts() as f64 / self.trials as f64
    }

    pub fn abort_rate_at(&self, step: u8) -> f64 {
        self.aborts_at(step) as f64 / self.trials as f64
    }

    /// Among completed sessions, the fraction that accepted the true total.
    pub fn conditional_correctness(&self) -> Option<f64> {
        (self.completions > 0).then(|| self.correct_sums as f64 / self.completions as f64)
    }

    /// Chi-square p-value of the revealed lists against the uniform law on
    /// all `C(n, k)` subsets. `None` when there are too many subsets or too
    /// few samples (under 5 expected per cell).
    pub fn chi_square_p(&self) -> Option<f64> {
        let categories = binomial(self.n as u128, self.k as u128)?;
        if !(2..=MAX_SUBSET_CATEGORIES).contains(&categories) {
            return None;
        }
        let samples: u64 = self.subset_frequency.values().sum();
        if (samples as u128) < 5 * categories {
            return None;
        }
        let mut counts: Vec<u64> = self.subset_frequency.values().copied().collect();
        counts.resize(categories as usize, 0);
        Some(chi_square_uniform_p(&counts))
    }

    pub fn row(&self, scenario: &str) -> StatsRow {
        StatsRow {
            scenario: scenario.to_string(),
            trials: self.trials,
            abort_step_histogram: self
                .aborts_by_step
                .iter()
                .map(|(s, c)| format!("{s}:{c}"))
                .collect::<Vec<_>>()
                .join(";"),
            detection_rate: self.detection_rate(),
            chi_square_p: self.chi_square_p(),
        }
    }
}

/// One line of the flat stats export.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StatsRow {
    pub scenario: String,
    pub trials: u64,
    /// `step:count` pairs joined by `;`.
    pub abort_step_histogram: String,
    pub detection_rate: f64,
    pub chi_square_p: Option<f64>,
}

impl StatsRow {
    pub fn write_csv<W: std::io::Write>(rows: &[StatsRow], w: W) -> csv::Result<()> {
        let mut out = csv::Writer::from_writer(w);
        for r in rows {
            out.serialize(r)?;
        }
        out.flush()?;
        Ok(())
    }
}

/// Upper-tail p-value of Pearson's statistic for `counts` against equal
/// expected frequencies.
pub fn chi_square_uniform_p(counts: &[u64]) -> f64 {
    assert!(counts.len() >= 2, "need at least two categories");
    let total: u64 = counts.iter().sum();
    let expected = total as f64 / counts.len() as f64;
    let stat: f64 = counts
        .iter()
        .map(|&c| {
            let d = c as f64 - expected;
            d * d / expected
        })
        .sum();
    ChiSquared::new((counts.len() - 1) as f64)
        .expect("positive degrees of freedom")
        .sf(stat)
}

fn binomial(n: u128, k: u128) -> Option<u128> {
    if k > n {
        return Some(0);
    }
    let k = k.min(n - k);
    let mut acc: u128 = 1;
    for i in 0..k {
        acc = acc.checked_mul(n - i)? / (i + 1);
    }
    Some(acc)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn binomial_values() {
        assert_eq!(binomial(5, 2), Some(10));
        assert_eq!(binomial(10, 3), Some(120));
        assert_eq!(binomial(64, 32), Some(1_832_624_140_942_590_534));
        assert_eq!(binomial(3, 0), Some(1));
        assert_eq!(binomial(2, 3), Some(0));
    }

    #[test]
    fn chi_square_reference_values() {
        // Perfectly flat counts: statistic 0, p = 1.
        assert!((chi_square_uniform_p(&[10, 10, 10, 10]) - 1.0).abs() < 1e-12);
        // Statistic 4 with 1 degree of freedom: p = erfc(sqrt 2) = 0.0455003.
        assert!((chi_square_uniform_p(&[60, 40]) - 0.045_500_263_9).abs() < 1e-8);
        // Statistic 8 on 3 degrees of freedom: p = 0.0460117.
        let p = chi_square_uniform_p(&[35, 15, 25, 25]);
        assert!((p - 0.046_011_705_7).abs() < 1e-8, "{p}");
    }

    #[test]
    fn merge_adds_counts() {
        let mut a = TrialStats::new(3, 1);
        a.trials = 3;
        a.completions = 2;
        a.aborts_by_step.insert(6, 1);
        a.subset_frequency.insert(vec![0], 3);
        let mut b = TrialStats::new(3, 1);
        b.trials = 2;
        b.aborts_by_step.insert(6, 1);
        b.aborts_by_step.insert(7, 1);
        b.subset_frequency.insert(vec![1], 1);
        let m = a.clone().merge(b.clone());
        assert_eq!(m, b.merge(a));
        assert_eq!(m.trials, 5);
        assert_eq!(m.aborts_at(6), 2);
        assert_eq!(m.trials, m.completions + m.aborts());
        assert_eq!(m.row("x").abort_step_histogram, "6:2;7:1");
    }

    #[test]
    fn csv_export_shape() {
        let mut s = TrialStats::new(5, 2);
        s.trials = 4;
        s.completions = 3;
        s.aborts_by_step.insert(6, 1);
        let mut buf = Vec::new();
        StatsRow::write_csv(&[s.row("demo")], &mut buf).unwrap();
        assert_eq!(
            String::from_utf8(buf).unwrap(),
            "scenario,trials,abort_step_histogram,detection_rate,chi_square_p\ndemo,4,6:1,0.25,\n"
        );
    }
}
