//! Two-sided Mann-Whitney U, correlation coefficients and distribution summaries.

use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal};

use super::MetricsError;

/// Combined sample sizes up to this use the exact permutation distribution.
pub const EXACT_LIMIT: usize = 12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PMethod {
    Exact,
    Normal,
    /// Every value is identical; p is 1 by convention.
    Degenerate,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MannWhitney {
    /// U for the first group: pairs where it is larger, ties counting one half.
    pub u: f64,
    pub p: f64,
    pub method: PMethod,
}

fn check(xs: &[f64], needed: usize) -> Result<(), MetricsError> {
    if xs.len() < needed {
        return Err(MetricsError::TooFewValues {
            needed,
            got: xs.len(),
        });
    }
    if xs.iter().any(|x| !x.is_finite()) {
        return Err(MetricsError::NonFinite);
    }
    Ok(())
}

fn u_statistic(a: &[f64], b: &[f64]) -> f64 {
    let mut u = 0.0;
    for x in a {
        for y in b {
            if x > y {
                u += 1.0;
            } else if x == y {
                u += 0.5;
            }
        }
    }
    u
}

/// Visits every size-`k` subset of `0..n` as a membership mask.
fn for_each_subset(n: usize, k: usize, f: &mut impl FnMut(&[bool])) {
    fn rec(start: usize, left: usize, mask: &mut Vec<bool>, f: &mut impl FnMut(&[bool])) {
        if left == 0 {
            f(mask);
            return;
        }
        for i in start..=mask.len() - left {
            mask[i] = true;
            rec(i + 1, left - 1, mask, f);
            mask[i] = false;
        }
    }
    let mut mask = vec![false; n];
    rec(0, k, &mut mask, f);
}

fn exact_p(a: &[f64], b: &[f64], u_obs: f64) -> f64 {
    let pooled: Vec<f64> = a.iter().chain(b).copied().collect();
    let center = (a.len() * b.len()) as f64 / 2.0;
    let observed = (u_obs - center).abs();
    let (mut extreme, mut total) = (0u64, 0u64);
    let (mut ga, mut gb) = (Vec::new(), Vec::new());
    for_each_subset(pooled.len(), a.len(), &mut |mask| {
        ga.clear();
        gb.clear();
        for (v, &in_a) in pooled.iter().zip(mask) {
            if in_a {
                ga.push(*v)
            } else {
                gb.push(*v)
            }
        }
        // U takes half-integer values, so this comparison is exact
        if (u_statistic(&ga, &gb) - center).abs() >= observed {
            extreme += 1;
        }
        total += 1;
    });
    extreme as f64 / total as f64
}

fn normal_p(a: &[f64], b: &[f64], u_obs: f64) -> f64 {
    let (na, nb) = (a.len() as f64, b.len() as f64);
    let n = na + nb;
    let mut pooled: Vec<f64> = a.iter().chain(b).copied().collect();
    pooled.sort_by(f64::total_cmp);
    let mut tie_term = 0.0;
    let mut i = 0;
    while i < pooled.len() {
        let j = pooled[i..].iter().take_while(|v| **v == pooled[i]).count();
        let t = j as f64;
        tie_term += t * t * t - t;
        i += j;
    }
    let var = na * nb / 12.0 * ((n + 1.0) - tie_term / (n * (n - 1.0)));
    if var <= 0.0 {
        return 1.0;
    }
    let z = (((u_obs - na * nb / 2.0).abs() - 0.5).max(0.0)) / var.sqrt();
    let std = Normal::new(0.0, 1.0).expect("standard normal");
    (2.0 * std.sf(z)).min(1.0)
}

/// Two-sided Mann-Whitney U test.
///
/// Exact permutation p when the combined size is at most [`EXACT_LIMIT`],
/// otherwise the normal approximation with tie and continuity correction.
pub fn mann_whitney_u(a: &[f64], b: &[f64]) -> Result<MannWhitney, MetricsError> {
    check(a, 2)?;
    check(b, 2)?;
    let u = u_statistic(a, b);
    let first = a[0];
    if a.iter().chain(b).all(|v| *v == first) {
        return Ok(MannWhitney {
            u,
            p: 1.0,
            method: PMethod::Degenerate,
        });
    }
    Ok(if a.len() + b.len() <= EXACT_LIMIT {
        MannWhitney {
            u,
            p: exact_p(a, b, u),
            method: PMethod::Exact,
        }
    } else {
        MannWhitney {
            u,
            p: normal_p(a, b, u),
            method: PMethod::Normal,
        }
    })
}

/// Pearson correlation; `None` when either side has zero variance.
pub fn pearson(x: &[f64], y: &[f64]) -> Result<Option<f64>, MetricsError> {
    if x.len() != y.len() {
        return Err(MetricsError::LengthMismatch(x.len(), y.len()));
    }
    check(x, 3)?;
    check(y, 3)?;
    let n = x.len() as f64;
    let (mx, my) = (x.iter().sum::<f64>() / n, y.iter().sum::<f64>() / n);
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (a, b) in x.iter().zip(y) {
        sxy += (a - mx) * (b - my);
        sxx += (a - mx) * (a - mx);
        syy += (b - my) * (b - my);
    }
    if sxx == 0.0 || syy == 0.0 {
        return Ok(None);
    }
    Ok(Some((sxy / (sxx.sqrt() * syy.sqrt())).clamp(-1.0, 1.0)))
}

/// Midranks, 1-based.
pub fn ranks(xs: &[f64]) -> Vec<f64> {
    let mut order: Vec<usize> = (0..xs.len()).collect();
    order.sort_by(|&i, &j| xs[i].total_cmp(&xs[j]));
    let mut out = vec![0.0; xs.len()];
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && xs[order[j + 1]] == xs[order[i]] {
            j += 1;
        }
        let rank = (i + j) as f64 / 2.0 + 1.0;
        for &k in &order[i..=j] {
            out[k] = rank;
        }
        i = j + 1;
    }
    out
}

/// Spearman rank correlation (Pearson over midranks).
pub fn spearman(x: &[f64], y: &[f64]) -> Result<Option<f64>, MetricsError> {
    if x.len() != y.len() {
        return Err(MetricsError::LengthMismatch(x.len(), y.len()));
    }
    check(x, 3)?;
    check(y, 3)?;
    pearson(&ranks(x), &ranks(y))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub n: usize,
    pub mean: f64,
    pub median: f64,
    pub q1: f64,
    pub q3: f64,
    pub min: f64,
    pub max: f64,
}

impl Summary {
    pub const STATISTICS: [&'static str; 7] = ["n", "mean", "median", "q1", "q3", "min", "max"];

    /// Quartiles use linear interpolation between order statistics.
    pub fn of(values: &[f64]) -> Result<Summary, MetricsError> {
        check(values, 1)?;
        let mut v = values.to_vec();
        v.sort_by(f64::total_cmp);
        let q = |p: f64| {
            let h = (v.len() - 1) as f64 * p;
            let lo = h.floor() as usize;
            let hi = h.ceil() as usize;
            v[lo] + (h - lo as f64) * (v[hi] - v[lo])
        };
        Ok(Summary {
            n: v.len(),
            mean: v.iter().sum::<f64>() / v.len() as f64,
            median: q(0.5),
            q1: q(0.25),
            q3: q(0.75),
            min: v[0],
            max: v[v.len() - 1],
        })
    }

    pub fn get(&self, statistic: &str) -> Option<f64> {
        Some(match statistic {
            "n" => self.n as f64,
            "mean" => self.mean,
            "median" => self.median,
            "q1" => self.q1,
            "q3" => self.q3,
            "min" => self.min,
            "max" => self.max,
            _ => return None,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn identical_groups() {
        let r = mann_whitney_u(&[1.0, 2.0, 3.0], &[1.0, 2.0, 3.0]).unwrap();
        assert_eq!(r.p, 1.0);
        assert_eq!(r.u, 4.5);
    }

    #[test]
    fn separated_groups_exact() {
        // only the two fully separated splits out of 20 are as extreme
        let r = mann_whitney_u(&[1.0, 2.0, 3.0], &[10.0, 11.0, 12.0]).unwrap();
        assert_eq!(r.method, PMethod::Exact);
        assert_eq!(r.u, 0.0);
        assert_eq!(r.p, 2.0 / 20.0);
        let s = mann_whitney_u(&[10.0, 11.0, 12.0], &[1.0, 2.0, 3.0]).unwrap();
        assert_eq!(s.p, r.p);
        assert_eq!(s.u, 9.0);
    }

    #[test]
    fn degenerate_and_small() {
        assert_eq!(mann_whitney_u(&[2.0, 2.0], &[2.0, 2.0, 2.0]).unwrap().method, PMethod::Degenerate);
        assert!(mann_whitney_u(&[1.0], &[2.0, 3.0]).is_err());
        assert!(mann_whitney_u(&[1.0, f64::NAN], &[2.0, 3.0]).is_err());
    }

    #[test]
    fn normal_route_large_separation() {
        let a: Vec<f64> = (0..20).map(|i| 0.7 + i as f64 * 0.01).collect();
        let b: Vec<f64> = (0..20).map(|i| 0.3 + i as f64 * 0.01).collect();
        let r = mann_whitney_u(&a, &b).unwrap();
        assert_eq!(r.method, PMethod::Normal);
        assert_eq!(r.u, 400.0);
        // z = (200 - 0.5) / sqrt(400 * 41 / 12)
        let z: f64 = 199.5 / (400.0f64 * 41.0 / 12.0).sqrt();
        let expected = 2.0 * Normal::new(0.0, 1.0).unwrap().sf(z);
        assert!((r.p - expected).abs() < 1e-15);
        assert!(r.p < 1e-6);
    }

    #[test]
    fn correlations() {
        let x = [1.0, 2.0, 3.0, 4.0, 5.0];
        assert!((pearson(&x, &x).unwrap().unwrap() - 1.0).abs() < 1e-15);
        let neg: Vec<f64> = x.iter().map(|v| 6.0 - v).collect();
        assert!((pearson(&x, &neg).unwrap().unwrap() + 1.0).abs() < 1e-15);
        assert_eq!(pearson(&x, &[2.0; 5]).unwrap(), None);
        assert!(pearson(&[1.0, 2.0], &[1.0, 2.0]).is_err());
        let y = [1.0, 4.0, 9.0, 16.0, 25.0];
        assert!((spearman(&x, &y).unwrap().unwrap() - 1.0).abs() < 1e-15);
        assert_eq!(ranks(&[3.0, 1.0, 3.0, 2.0]), vec![3.5, 1.0, 3.5, 2.0]);
    }

    #[test]
    fn summaries() {
        let s = Summary::of(&[0.4, 0.6]).unwrap();
        assert!((s.mean - 0.5).abs() < 1e-15);
        assert!((s.median - 0.5).abs() < 1e-15);
        let s = Summary::of(&[4.0, 1.0, 3.0, 2.0, 5.0]).unwrap();
        assert_eq!((s.q1, s.median, s.q3, s.min, s.max), (2.0, 3.0, 4.0, 1.0, 5.0));
        assert!(Summary::of(&[]).is_err());
    }
}
