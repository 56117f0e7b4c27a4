use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal};

use super::mid_ranks;
use crate::confidence::{CohortScores, Method};
use crate::error::{Error, Result};
use crate::numerics::median;

/// Below this many observations the p-value is computed exactly.
const EXACT_LIMIT: usize = 12;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MannWhitney {
    /// U statistic of the first group: pairs where it ranks higher, ties
    /// counting one half.
    pub u_first: f64,
    pub u_second: f64,
    /// Two-sided p-value.
    pub p_value: f64,
    pub exact: bool,
}

/// Two-sided Mann-Whitney U test. Uses exact enumeration of rank
/// assignments for fewer than 12 observations, otherwise the normal
/// approximation with tie and continuity corrections.
pub fn mann_whitney_u(first: &[f64], second: &[f64]) -> Result<MannWhitney> {
    if first.is_empty() || second.is_empty() {
        return Err(Error::contract("Mann-Whitney U needs two non-empty groups"));
    }
    let (n1, n2) = (first.len(), second.len());
    let all: Vec<f64> = first.iter().chain(second).copied().collect();
    let ranks = mid_ranks(&all);
    let u_of = |members: &[usize]| {
        let r: f64 = members.iter().map(|&i| ranks[i]).sum();
        r - (n1 * (n1 + 1)) as f64 / 2.0
    };
    let observed: Vec<usize> = (0..n1).collect();
    let u_first = u_of(&observed);
    let u_second = (n1 * n2) as f64 - u_first;
    let centre = (n1 * n2) as f64 / 2.0;
    let n = n1 + n2;

    if n < EXACT_LIMIT {
        let dev = (u_first - centre).abs() - 1e-9;
        let mut extreme = 0usize;
        let mut total = 0usize;
        for_each_combination(n, n1, &mut |members| {
            total += 1;
            if (u_of(members) - centre).abs() >= dev {
                extreme += 1;
            }
        });
        return Ok(MannWhitney {
            u_first,
            u_second,
            p_value: extreme as f64 / total as f64,
            exact: true,
        });
    }

    let mut sorted = all.clone();
    sorted.sort_by(|a, b| a.total_cmp(b));
    let mut tie_term = 0.0;
    let mut i = 0;
    while i < sorted.len() {
        let mut j = i;
        while j + 1 < sorted.len() && sorted[j + 1] == sorted[i] {
            j += 1;
        }
        let t = (j - i + 1) as f64;
        tie_term += t * t * t - t;
        i = j + 1;
    }
    let nf = n as f64;
    let variance = (n1 * n2) as f64 / 12.0 * ((nf + 1.0) - tie_term / (nf * (nf - 1.0)));
    let p_value = if variance <= 0.0 {
        1.0
    } else {
        let z = ((u_first - centre).abs() - 0.5).max(0.0) / variance.sqrt();
        let normal = Normal::standard();
        (2.0 * (1.0 - normal.cdf(z))).min(1.0)
    };
    Ok(MannWhitney {
        u_first,
        u_second,
        p_value,
        exact: false,
    })
}

fn for_each_combination(n: usize, k: usize, f: &mut dyn FnMut(&[usize])) {
    fn rec(start: usize, n: usize, k: usize, cur: &mut Vec<usize>, f: &mut dyn FnMut(&[usize])) {
        if cur.len() == k {
            f(cur);
            return;
        }
        for i in start..n {
            if n - i < k - cur.len() {
                break;
            }
            cur.push(i);
            rec(i + 1, n, k, cur, f);
            cur.pop();
        }
    }
    rec(0, n, k, &mut Vec::with_capacity(k), f);
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AgreementStats {
    pub method: Method,
    pub n_agree: usize,
    pub n_disagree: usize,
    pub median_agree: f64,
    pub median_disagree: f64,
    /// U of the agreement group.
    pub mann_whitney_u: f64,
    pub p_value: f64,
    pub exact: bool,
}

/// Compares confidences of bags on which raters agreed against those on
/// which they disagreed.
pub fn agreement_analysis(scores: &CohortScores, agreement: &[bool]) -> Result<AgreementStats> {
    if scores.len() != agreement.len() {
        return Err(Error::DimensionMismatch {
            context: "confidence scores vs agreement flags",
            expected: scores.len(),
            found: agreement.len(),
        });
    }
    let values = scores.values();
    let (agree, disagree): (Vec<f64>, Vec<f64>) = {
        let mut a = Vec::new();
        let mut d = Vec::new();
        for (v, flag) in values.iter().zip(agreement) {
            if *flag {
                a.push(*v)
            } else {
                d.push(*v)
            }
        }
        (a, d)
    };
    if agree.is_empty() || disagree.is_empty() {
        return Err(Error::contract(format!(
            "agreement analysis needs both groups ({} agree, {} disagree)",
            agree.len(),
            disagree.len()
        )));
    }
    let mw = mann_whitney_u(&agree, &disagree)?;
    Ok(AgreementStats {
        method: scores.method,
        n_agree: agree.len(),
        n_disagree: disagree.len(),
        median_agree: median(&agree).expect("non-empty"),
        median_disagree: median(&disagree).expect("non-empty"),
        mann_whitney_u: mw.u_first,
        p_value: mw.p_value,
        exact: mw.exact,
    })
}
