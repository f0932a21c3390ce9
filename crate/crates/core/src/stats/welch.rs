use serde::{Deserialize, Serialize};

use super::special::{f_sf, t_two_sided};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WelchResult {
    #[serde(rename = "F")]
    pub f: f64,
    pub df1: usize,
    pub df2: f64,
    pub p: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PairwiseTest {
    /// Indices of the compared groups, `a < b`.
    pub a: usize,
    pub b: usize,
    pub t: f64,
    pub df: f64,
    pub p_raw: f64,
    pub p_adjusted: f64,
}

struct Summary {
    n: f64,
    mean: f64,
    var: f64,
}

fn summarize(index: usize, values: &[f64]) -> Result<Summary> {
    let err = |message: &str| Error::Statistics {
        group: index,
        message: message.to_string(),
    };
    if values.len() < 2 {
        return Err(err("needs at least two observations"));
    }
    if values.iter().any(|v| !v.is_finite()) {
        return Err(err("contains a non-finite value"));
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
    if !(var > 0.0) {
        return Err(err("has zero variance"));
    }
    Ok(Summary { n, mean, var })
}

fn summaries<G: AsRef<[f64]>>(groups: &[G]) -> Result<Vec<Summary>> {
    if groups.len() < 2 {
        return Err(Error::InvalidInput("at least two groups are required".into()));
    }
    groups.iter().enumerate().map(|(i, g)| summarize(i, g.as_ref())).collect()
}

/// Welch's one-way analysis of variance for groups with unequal variances.
pub fn welch_anova<G: AsRef<[f64]>>(groups: &[G]) -> Result<WelchResult> {
    let s = summaries(groups)?;
    let g = s.len() as f64;
    let w: Vec<f64> = s.iter().map(|s| s.n / s.var).collect();
    let sum_w: f64 = w.iter().sum();
    let grand = s.iter().zip(&w).map(|(s, w)| w * s.mean).sum::<f64>() / sum_w;
    let between = s.iter().zip(&w).map(|(s, w)| w * (s.mean - grand).powi(2)).sum::<f64>() / (g - 1.0);
    let lambda: f64 = s.iter().zip(&w).map(|(s, w)| (1.0 - w / sum_w).powi(2) / (s.n - 1.0)).sum();
    let f = between / (1.0 + 2.0 * (g - 2.0) / (g * g - 1.0) * lambda);
    let df1 = s.len() - 1;
    let df2 = (g * g - 1.0) / (3.0 * lambda);
    Ok(WelchResult {
        f,
        df1,
        df2,
        p: f_sf(f, df1 as f64, df2),
    })
}

/// Classic one-way ANOVA assuming equal variances; `df2 = N - g`.
pub fn classic_anova<G: AsRef<[f64]>>(groups: &[G]) -> Result<WelchResult> {
    let s = summaries(groups)?;
    let total_n: f64 = s.iter().map(|s| s.n).sum();
    let grand = s.iter().map(|s| s.n * s.mean).sum::<f64>() / total_n;
    let between: f64 = s.iter().map(|s| s.n * (s.mean - grand).powi(2)).sum();
    let within: f64 = s.iter().map(|s| (s.n - 1.0) * s.var).sum();
    let df1 = s.len() - 1;
    let df2 = total_n - s.len() as f64;
    let f = (between / df1 as f64) / (within / df2);
    Ok(WelchResult {
        f,
        df1,
        df2,
        p: f_sf(f, df1 as f64, df2),
    })
}

/// Welch's unequal-variance two-sample t-test: `(t, df, two-sided p)`.
pub fn welch_t_test(a: &[f64], b: &[f64]) -> Result<(f64, f64, f64)> {
    let sa = summarize(0, a)?;
    let sb = summarize(1, b)?;
    let va = sa.var / sa.n;
    let vb = sb.var / sb.n;
    let t = (sa.mean - sb.mean) / (va + vb).sqrt();
    let df = (va + vb).powi(2) / (va * va / (sa.n - 1.0) + vb * vb / (sb.n - 1.0));
    Ok((t, df, t_two_sided(t, df)))
}

/// Holm step-down adjustment; output is in input order.
pub fn holm_adjust(p: &[f64]) -> Vec<f64> {
    let m = p.len();
    let mut order: Vec<usize> = (0..m).collect();
    order.sort_by(|&i, &j| p[i].total_cmp(&p[j]).then(i.cmp(&j)));
    let mut adjusted = vec![0.0; m];
    let mut running: f64 = 0.0;
    for (rank, &i) in order.iter().enumerate() {
        running = running.max(((m - rank) as f64 * p[i]).min(1.0));
        adjusted[i] = running;
    }
    adjusted
}

/// Welch t-tests for every pair of groups, Holm-adjusted across pairs.
/// Pairs are listed as (0,1), (0,2), ..., (1,2), ...
pub fn posthoc_pairwise<G: AsRef<[f64]>>(groups: &[G]) -> Result<Vec<PairwiseTest>> {
    summaries(groups)?;
    let mut tests = Vec::new();
    for a in 0..groups.len() {
        for b in a + 1..groups.len() {
            let (t, df, p) = welch_t_test(groups[a].as_ref(), groups[b].as_ref())?;
            tests.push(PairwiseTest {
                a,
                b,
                t,
                df,
                p_raw: p,
                p_adjusted: p,
            });
        }
    }
    let raw: Vec<f64> = tests.iter().map(|t| t.p_raw).collect();
    for (t, adj) in tests.iter_mut().zip(holm_adjust(&raw)) {
        t.p_adjusted = adj;
    }
    Ok(tests)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_variance_and_short_groups_fail() {
        let same = vec![vec![1.0, 1.0, 1.0]; 3];
        assert!(matches!(welch_anova(&same), Err(Error::Statistics { group: 0, .. })));
        assert!(welch_anova(&[vec![1.0, 2.0], vec![3.0]]).is_err());
        assert!(welch_anova(&[vec![1.0, 2.0]]).is_err());
    }

    #[test]
    fn holm_examples() {
        let adj = holm_adjust(&[0.01, 0.04, 0.03, 0.005]);
        let expected = [0.03, 0.06, 0.06, 0.02];
        for (a, e) in adj.iter().zip(expected) {
            assert!((a - e).abs() < 1e-15, "{adj:?}");
        }
        assert_eq!(holm_adjust(&[0.6, 0.9]), vec![1.0, 1.0]);
    }

    #[test]
    fn three_groups_three_pairs() {
        let g = [vec![1.0, 2.0, 3.5], vec![2.0, 2.5, 4.0], vec![0.5, 3.0, 3.3]];
        let tests = posthoc_pairwise(&g).unwrap();
        assert_eq!(tests.iter().map(|t| (t.a, t.b)).collect::<Vec<_>>(), vec![(0, 1), (0, 2), (1, 2)]);
        assert!(tests.iter().all(|t| t.p_adjusted >= t.p_raw));
    }
}
