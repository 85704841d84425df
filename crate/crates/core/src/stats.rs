//! Wilcoxon–Mann–Whitney rank-sum test and significance stars.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use statrs::function::erf::erfc;

use crate::error::{Error, Result};

/// Largest pooled sample size routed to the exact distribution by default.
pub const EXACT_CUTOFF: usize = 20;
/// Largest pooled sample size for which an exact test may be forced.
pub const EXACT_MAX: usize = 100;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum UMethod {
    Exact,
    NormalApprox,
}

/// Which null distribution to use.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum TestMethod {
    /// Exact for tieless samples with `n1 + n2 <= EXACT_CUTOFF`, normal otherwise.
    #[default]
    Auto,
    Exact,
    Normal,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct UTestResult {
    /// U of the first sample: pairs where it is larger, counting ties as one half.
    pub u_statistic: f64,
    pub p_value: f64,
    pub method: UMethod,
    pub n1: usize,
    pub n2: usize,
    /// Continuity-corrected standard score; zero on the exact path.
    pub z: f64,
}

/// Midranks (1-based) of the pooled sample, plus the tie groups' sizes.
fn midranks(pooled: &[f64]) -> (Vec<f64>, Vec<usize>) {
    let mut order: Vec<usize> = (0..pooled.len()).collect();
    order.sort_by(|&i, &j| pooled[i].total_cmp(&pooled[j]));
    let mut ranks = vec![0.0; pooled.len()];
    let mut ties = Vec::new();
    let mut start = 0;
    while start < order.len() {
        let mut end = start + 1;
        while end < order.len() && pooled[order[end]] == pooled[order[start]] {
            end += 1;
        }
        let rank = (start + end + 1) as f64 / 2.0;
        for &i in &order[start..end] {
            ranks[i] = rank;
        }
        if end - start > 1 {
            ties.push(end - start);
        }
        start = end;
    }
    (ranks, ties)
}

/// Number of arrangements of `n1` first-sample and `n2` second-sample items
/// producing each value of U, indexed by U.
pub fn exact_u_counts(n1: usize, n2: usize) -> Vec<u128> {
    // Each first-sample item's score is the count of second-sample items below
    // it, so arrangements correspond to multisets of n1 values in 0..=n2.
    let max = n1 * n2;
    let mut ways = vec![vec![0u128; max + 1]; n1 + 1];
    ways[0][0] = 1;
    for v in 0..=n2 {
        for j in 1..=n1 {
            for s in v..=max {
                let add = ways[j - 1][s - v];
                ways[j][s] += add;
            }
        }
    }
    ways.swap_remove(n1)
}

fn exact_p(u: f64, n1: usize, n2: usize) -> f64 {
    let counts = exact_u_counts(n1, n2);
    let nn = (n1 * n2) as i64;
    let observed = (2.0 * u) as i64 - nn;
    let mut extreme = 0u128;
    let mut total = 0u128;
    for (v, &c) in counts.iter().enumerate() {
        total += c;
        if (2 * v as i64 - nn).abs() >= observed.abs() {
            extreme += c;
        }
    }
    extreme as f64 / total as f64
}

pub fn mann_whitney(a: &[f64], b: &[f64]) -> Result<UTestResult> {
    mann_whitney_with(a, b, TestMethod::Auto)
}

/// Two-sided test of `a` against `b`.
pub fn mann_whitney_with(a: &[f64], b: &[f64], method: TestMethod) -> Result<UTestResult> {
    if a.is_empty() || b.is_empty() {
        return Err(Error::EmptySample);
    }
    if let Some(pos) = a.iter().chain(b).position(|v| !v.is_finite()) {
        return Err(Error::InvalidParams(format!("non-finite value at pooled position {pos}")));
    }
    let (n1, n2) = (a.len(), b.len());
    let n = n1 + n2;
    let pooled: Vec<f64> = a.iter().chain(b).copied().collect();
    let (ranks, ties) = midranks(&pooled);
    let r1: f64 = ranks[..n1].iter().sum();
    let u = r1 - (n1 * (n1 + 1)) as f64 / 2.0;

    let exact = match method {
        TestMethod::Auto => ties.is_empty() && n <= EXACT_CUTOFF,
        TestMethod::Exact => {
            if !ties.is_empty() {
                return Err(Error::ExactWithTies);
            }
            if n > EXACT_MAX {
                return Err(Error::ExactTooLarge { n, max: EXACT_MAX });
            }
            true
        }
        TestMethod::Normal => false,
    };
    if exact {
        let p = exact_p(u, n1, n2);
        return Ok(UTestResult { u_statistic: u, p_value: p.min(1.0), method: UMethod::Exact, n1, n2, z: 0.0 });
    }

    let (f1, f2, nf) = (n1 as f64, n2 as f64, n as f64);
    let mean = f1 * f2 / 2.0;
    let tie_term: f64 = ties.iter().map(|&t| ((t * t * t) - t) as f64).sum();
    let var = f1 * f2 / 12.0 * ((nf + 1.0) - tie_term / (nf * (nf - 1.0)));
    let dev = u - mean;
    let (z, p) = if var <= 0.0 {
        (0.0, 1.0)
    } else {
        let z = (dev.abs() - 0.5).max(0.0) / var.sqrt();
        (z.copysign(dev), erfc(z / std::f64::consts::SQRT_2).min(1.0))
    };
    Ok(UTestResult { u_statistic: u, p_value: p, method: UMethod::NormalApprox, n1, n2, z })
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Stars {
    #[default]
    None,
    One,
    Two,
    Three,
}

impl Stars {
    pub fn as_str(self) -> &'static str {
        match self {
            Stars::None => "",
            Stars::One => "*",
            Stars::Two => "**",
            Stars::Three => "***",
        }
    }

    pub fn count(self) -> usize {
        self as usize
    }

    pub fn is_significant(self) -> bool {
        self != Stars::None
    }
}

impl fmt::Display for Stars {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Stars {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim() {
            "" | "none" => Ok(Stars::None),
            "*" => Ok(Stars::One),
            "**" => Ok(Stars::Two),
            "***" => Ok(Stars::Three),
            other => Err(Error::InvalidParams(format!("bad star level `{other}`"))),
        }
    }
}

/// Upper p bounds for one, two and three stars; bounds are inclusive.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct StarThresholds {
    pub one: f64,
    pub two: f64,
    pub three: f64,
}

impl Default for StarThresholds {
    fn default() -> Self {
        StarThresholds { one: 0.10, two: 0.05, three: 0.01 }
    }
}

impl StarThresholds {
    pub fn validate(&self) -> Result<()> {
        let ok = 0.0 < self.three && self.three <= self.two && self.two <= self.one && self.one <= 1.0;
        if ok {
            Ok(())
        } else {
            Err(Error::InvalidConfig(format!(
                "star thresholds must satisfy 0 < three <= two <= one <= 1, got {}/{}/{}",
                self.three, self.two, self.one
            )))
        }
    }

    pub fn stars(&self, p: f64) -> Stars {
        if p <= self.three {
            Stars::Three
        } else if p <= self.two {
            Stars::Two
        } else if p <= self.one {
            Stars::One
        } else {
            Stars::None
        }
    }
}

pub fn significance_stars(p: f64) -> Stars {
    StarThresholds::default().stars(p)
}
