//! Test statistics and variance estimators shared by the Fisherian and
//! large-sample engines.
//!
//! Weighted difference-in-means follows the convention
//! `Ybar_+ = sum(w_i T_i Y_i) / N_+`, so unit weights give the ordinary
//! difference-in-means and [`bernoulli_weights`] give the unbiased estimator
//! under Bernoulli assignment.

use nalgebra::{DMatrix, DVector};
use serde::Serialize;

use crate::error::{invalid, Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum StatKind {
    DiffMeans,
    Ks,
    RankSum,
    Hotelling,
    Tsls,
}

impl StatKind {
    /// Statistics that can take either sign; two-sided tests compare `|S|`.
    pub fn is_signed(self) -> bool {
        matches!(self, StatKind::DiffMeans | StatKind::RankSum | StatKind::Tsls)
    }
}

impl std::str::FromStr for StatKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Ok(match s.to_ascii_lowercase().as_str() {
            "diffmeans" | "diff_means" | "ttest" => StatKind::DiffMeans,
            "ks" | "ksmirnov" => StatKind::Ks,
            "ranksum" | "rank_sum" => StatKind::RankSum,
            "hotelling" => StatKind::Hotelling,
            "tsls" => StatKind::Tsls,
            other => return Err(Error::Config(format!("unknown statistic `{other}`"))),
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Sidedness {
    #[default]
    TwoSided,
    Right,
    Left,
}

impl std::str::FromStr for Sidedness {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Ok(match s.to_ascii_lowercase().as_str() {
            "two_sided" | "two-sided" | "both" => Sidedness::TwoSided,
            "right" | "greater" => Sidedness::Right,
            "left" | "less" => Sidedness::Left,
            other => return Err(Error::Config(format!("unknown sidedness `{other}`"))),
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct StatSpec {
    pub kind: StatKind,
    pub sidedness: Sidedness,
    /// Per-unit weights, honored by the difference-in-means only.
    pub weights: Option<Vec<f64>>,
}

impl StatSpec {
    pub fn new(kind: StatKind) -> Self {
        Self {
            kind,
            sidedness: Sidedness::TwoSided,
            weights: None,
        }
    }

    pub fn diff_means() -> Self {
        Self::new(StatKind::DiffMeans)
    }

    pub fn with_sidedness(mut self, sidedness: Sidedness) -> Self {
        self.sidedness = sidedness;
        self
    }

    pub fn with_weights(mut self, weights: Vec<f64>) -> Self {
        self.weights = Some(weights);
        self
    }

    /// Evaluate the statistic for assignment `t` on a single response.
    pub fn compute(&self, t: &[bool], y: &[f64]) -> Result<f64> {
        match self.kind {
            StatKind::DiffMeans => diff_means(t, y, self.weights.as_deref()),
            StatKind::Ks => ks_stat(t, y),
            StatKind::RankSum => rank_sum_stat(t, y),
            StatKind::Hotelling => hotelling_stat(t, &[y.to_vec()]),
            StatKind::Tsls => Err(invalid("tsls needs both outcome and treatment received; use fuzzy::tsls_ratio")),
        }
    }
}

fn group_sizes(t: &[bool]) -> (usize, usize) {
    let plus = t.iter().filter(|&&v| v).count();
    (plus, t.len() - plus)
}

fn require_both_groups(t: &[bool]) -> Result<(usize, usize)> {
    let (plus, minus) = group_sizes(t);
    if plus == 0 {
        return Err(Error::EmptyGroup("no treated units".into()));
    }
    if minus == 0 {
        return Err(Error::EmptyGroup("no control units".into()));
    }
    Ok((plus, minus))
}

/// `Ybar_+ - Ybar_-`, optionally with per-unit weights.
pub fn diff_means(t: &[bool], y: &[f64], weights: Option<&[f64]>) -> Result<f64> {
    if t.len() != y.len() {
        return Err(invalid("assignment and outcome lengths differ"));
    }
    let (plus, minus) = require_both_groups(t)?;
    let (mut sp, mut sm) = (0.0, 0.0);
    for i in 0..t.len() {
        let w = weights.map_or(1.0, |w| w[i]);
        if t[i] {
            sp += w * y[i];
        } else {
            sm += w * y[i];
        }
    }
    Ok(sp / plus as f64 - sm / minus as f64)
}

/// `w_i = T_i N_+ / (N p) + (1 - T_i) N_- / (N (1 - p))`.
pub fn bernoulli_weights(t: &[bool], p: f64) -> Result<Vec<f64>> {
    if !(p > 0.0 && p < 1.0) {
        return Err(invalid(format!("Bernoulli probability {p} outside (0, 1)")));
    }
    if t.is_empty() {
        return Err(Error::NoData);
    }
    let (plus, minus) = group_sizes(t);
    let n = t.len() as f64;
    let wp = plus as f64 / (n * p);
    let wm = minus as f64 / (n * (1.0 - p));
    Ok(t.iter().map(|&ti| if ti { wp } else { wm }).collect())
}

/// Same as [`bernoulli_weights`] with unit-specific probabilities.
pub fn bernoulli_weights_per_unit(t: &[bool], p: &[f64]) -> Result<Vec<f64>> {
    if p.len() != t.len() {
        return Err(invalid("probability vector length differs from assignment"));
    }
    if let Some(bad) = p.iter().find(|&&v| !(v > 0.0 && v < 1.0)) {
        return Err(invalid(format!("Bernoulli probability {bad} outside (0, 1)")));
    }
    let (plus, minus) = group_sizes(t);
    let n = t.len() as f64;
    Ok(t.iter()
        .zip(p)
        .map(|(&ti, &pi)| {
            if ti {
                plus as f64 / (n * pi)
            } else {
                minus as f64 / (n * (1.0 - pi))
            }
        })
        .collect())
}

/// Rescale kernel weights to average one within each group, so that the
/// weighted difference-in-means is a difference of normalized weighted means.
pub fn normalized_kernel_weights(t: &[bool], k: &[f64]) -> Result<Vec<f64>> {
    if k.len() != t.len() {
        return Err(invalid("kernel weight length differs from assignment"));
    }
    if k.iter().any(|&v| !(v >= 0.0) || !v.is_finite()) {
        return Err(invalid("kernel weights must be finite and nonnegative"));
    }
    let (plus, minus) = require_both_groups(t)?;
    let sum = |side: bool| -> f64 { t.iter().zip(k).filter(|(&ti, _)| ti == side).map(|(_, &v)| v).sum() };
    let (kp, km) = (sum(true), sum(false));
    if kp <= 0.0 || km <= 0.0 {
        return Err(invalid("kernel weights are all zero on one side"));
    }
    Ok(t.iter()
        .zip(k)
        .map(|(&ti, &v)| if ti { v * plus as f64 / kp } else { v * minus as f64 / km })
        .collect())
}

/// Two-sample Kolmogorov-Smirnov distance `sup |F_+ - F_-|`.
pub fn ks_stat(t: &[bool], y: &[f64]) -> Result<f64> {
    let (plus, minus) = require_both_groups(t)?;
    let mut pairs: Vec<(f64, bool)> = y.iter().copied().zip(t.iter().copied()).collect();
    pairs.sort_by(|a, b| a.0.total_cmp(&b.0));
    let (mut cp, mut cm, mut sup) = (0usize, 0usize, 0.0_f64);
    let mut i = 0;
    while i < pairs.len() {
        let v = pairs[i].0;
        while i < pairs.len() && pairs[i].0 == v {
            if pairs[i].1 {
                cp += 1;
            } else {
                cm += 1;
            }
            i += 1;
        }
        sup = sup.max((cp as f64 / plus as f64 - cm as f64 / minus as f64).abs());
    }
    Ok(sup)
}

/// Midranks (1-based) of `y`, with the tie-correction term `sum(t^3 - t)`.
pub fn midranks(y: &[f64]) -> (Vec<f64>, f64) {
    let mut idx: Vec<usize> = (0..y.len()).collect();
    idx.sort_by(|&a, &b| y[a].total_cmp(&y[b]));
    let mut ranks = vec![0.0; y.len()];
    let mut ties = 0.0;
    let mut i = 0;
    while i < idx.len() {
        let mut j = i;
        while j + 1 < idx.len() && y[idx[j + 1]] == y[idx[i]] {
            j += 1;
        }
        let r = (i + j) as f64 / 2.0 + 1.0;
        for &k in &idx[i..=j] {
            ranks[k] = r;
        }
        let m = (j - i + 1) as f64;
        ties += m * m * m - m;
        i = j + 1;
    }
    (ranks, ties)
}

/// Studentized Wilcoxon rank-sum statistic `(W - E[W]) / sd(W)` for the
/// treated group, with midranks and the tie-corrected variance. Returns 0
/// when every value is tied.
pub fn rank_sum_stat(t: &[bool], y: &[f64]) -> Result<f64> {
    let (plus, minus) = require_both_groups(t)?;
    let (ranks, ties) = midranks(y);
    Ok(rank_sum_from_ranks(t, &ranks, ties, plus, minus))
}

pub(crate) fn rank_sum_from_ranks(t: &[bool], ranks: &[f64], ties: f64, plus: usize, minus: usize) -> f64 {
    let n = (plus + minus) as f64;
    let (np, nm) = (plus as f64, minus as f64);
    let w: f64 = t.iter().zip(ranks).filter(|(&ti, _)| ti).map(|(_, &r)| r).sum();
    let mean = np * (n + 1.0) / 2.0;
    let var = np * nm / 12.0 * ((n + 1.0) - ties / (n * (n - 1.0)));
    if var <= 0.0 {
        0.0
    } else {
        (w - mean) / var.sqrt()
    }
}

/// Two-sample Hotelling T² with pooled covariance. `z` holds one vector per
/// covariate.
pub fn hotelling_stat(t: &[bool], z: &[Vec<f64>]) -> Result<f64> {
    let (plus, minus) = require_both_groups(t)?;
    let k = z.len();
    if k == 0 {
        return Err(invalid("hotelling needs at least one covariate"));
    }
    if z.iter().any(|c| c.len() != t.len()) {
        return Err(invalid("covariate length differs from assignment"));
    }
    let n = t.len();
    if n < k + 2 {
        return Err(Error::SingularCovariance);
    }
    let mean = |side: bool, col: &[f64]| -> f64 {
        let (s, c) = t
            .iter()
            .zip(col)
            .filter(|(&ti, _)| ti == side)
            .fold((0.0, 0usize), |(s, c), (_, &v)| (s + v, c + 1));
        s / c as f64
    };
    let mp: Vec<f64> = z.iter().map(|c| mean(true, c)).collect();
    let mm: Vec<f64> = z.iter().map(|c| mean(false, c)).collect();
    let mut s = DMatrix::<f64>::zeros(k, k);
    for i in 0..n {
        let m = if t[i] { &mp } else { &mm };
        for a in 0..k {
            let da = z[a][i] - m[a];
            for b in 0..k {
                s[(a, b)] += da * (z[b][i] - m[b]);
            }
        }
    }
    s /= (n - 2) as f64;
    let d = DVector::from_iterator(k, mp.iter().zip(&mm).map(|(a, b)| a - b));
    let scale = s.iter().fold(0.0_f64, |acc, v| acc.max(v.abs()));
    if scale == 0.0 {
        return Err(Error::SingularCovariance);
    }
    let chol = nalgebra::linalg::Cholesky::new(s.clone()).ok_or(Error::SingularCovariance)?;
    // reject near-singular pooled covariance
    let min_diag = (0..k).map(|i| chol.l()[(i, i)].powi(2)).fold(f64::INFINITY, f64::min);
    if min_diag <= 1e-12 * scale {
        return Err(Error::SingularCovariance);
    }
    let sol = chol.solve(&d);
    let factor = (plus * minus) as f64 / n as f64;
    Ok(factor * d.dot(&sol))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum VarianceKind {
    #[default]
    PooledNeyman,
    Hc2,
    Hc3,
}

impl std::str::FromStr for VarianceKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Ok(match s.to_ascii_lowercase().as_str() {
            "neyman" | "pooled_neyman" => VarianceKind::PooledNeyman,
            "hc2" => VarianceKind::Hc2,
            "hc3" => VarianceKind::Hc3,
            other => return Err(Error::Config(format!("unknown variance estimator `{other}`"))),
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct VarianceEstimate {
    pub value: f64,
    pub estimator: VarianceKind,
    pub dof_note: String,
}

struct GroupMoments {
    n: usize,
    /// Sum of squared deviations from the group mean.
    ss: f64,
}

fn moments(t: &[bool], y: &[f64], side: bool) -> GroupMoments {
    let vals: Vec<f64> = t.iter().zip(y).filter(|(&ti, _)| ti == side).map(|(_, &v)| v).collect();
    let n = vals.len();
    let mean = vals.iter().sum::<f64>() / n.max(1) as f64;
    let ss = vals.iter().map(|v| (v - mean).powi(2)).sum();
    GroupMoments { n, ss }
}

/// Variance of the difference-in-means.
///
/// `pooled_neyman` is `s²_+/N_+ + s²_-/N_-`. `hc2` and `hc3` are the
/// heteroskedasticity-robust variances of the slope in the regression of
/// `Y` on `(1, T)`, whose leverages are `1/N_g` within group `g`.
pub fn neyman_variance(t: &[bool], y: &[f64], kind: VarianceKind) -> Result<VarianceEstimate> {
    if t.len() != y.len() {
        return Err(invalid("assignment and outcome lengths differ"));
    }
    let gp = moments(t, y, true);
    let gm = moments(t, y, false);
    for (g, name) in [(&gp, "treated"), (&gm, "control")] {
        if g.n < 2 {
            return Err(Error::EmptyGroup(format!(
                "{name} group has {} unit(s); variance needs at least 2",
                g.n
            )));
        }
    }
    let (value, note) = match kind {
        VarianceKind::PooledNeyman => (
            gp.ss / (gp.n - 1) as f64 / gp.n as f64 + gm.ss / (gm.n - 1) as f64 / gm.n as f64,
            "sample variances with N-1 denominators",
        ),
        VarianceKind::Hc2 | VarianceKind::Hc3 => {
            let power = if kind == VarianceKind::Hc2 { 1 } else { 2 };
            let term = |g: &GroupMoments| {
                let ng = g.n as f64;
                let h = 1.0 / ng;
                g.ss / (1.0 - h).powi(power) / (ng * ng)
            };
            (
                term(&gp) + term(&gm),
                if power == 1 {
                    "HC2: residuals scaled by 1/(1-h_ii)"
                } else {
                    "HC3: residuals scaled by 1/(1-h_ii)^2"
                },
            )
        }
    };
    Ok(VarianceEstimate {
        value: value.max(0.0),
        estimator: kind,
        dof_note: note.to_string(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use proptest::prelude::*;

    #[test]
    fn diff_means_cases() {
        let t = [true, true, false, false];
        assert_eq!(diff_means(&t, &[1.0, 2.0, 1.0, 2.0], None).unwrap(), 0.0);
        assert_eq!(diff_means(&t, &[5.0; 4], None).unwrap(), 0.0);
        let d = diff_means(&[true, false], &[53.235, 44.068], None).unwrap();
        assert_relative_eq!(d, 9.167, epsilon = 1e-9);
        assert!(matches!(diff_means(&[true, true], &[1.0, 2.0], None), Err(Error::EmptyGroup(_))));
    }

    #[test]
    fn bernoulli_weight_formula() {
        let t: Vec<bool> = (0..10).map(|i| i < 5).collect();
        assert!(bernoulli_weights(&t, 0.5).unwrap().iter().all(|&w| w == 1.0));
        let w = bernoulli_weights(&[true, true, true, false], 0.5).unwrap();
        assert_eq!(w, vec![1.5, 1.5, 1.5, 0.5]);
        assert!(bernoulli_weights(&t, 1.0).is_err());
        assert!(bernoulli_weights(&t, 0.0).is_err());
    }

    /// Exhaustive expectation of the weighted estimator over all 2^6
    /// Bernoulli(p) assignments, conditional on both groups nonempty.
    #[test]
    fn bernoulli_weighted_estimator_expectation() {
        let y1 = [3.0, 1.0, 4.0, 1.0, 5.0, 9.0];
        let y0 = [2.0, 6.0, 5.0, 3.0, 5.0, 8.0];
        let theta: f64 = y1.iter().zip(&y0).map(|(a, b)| a - b).sum::<f64>() / 6.0;
        let p: f64 = 0.5;
        let mut num = 0.0;
        let mut mass = 0.0;
        for code in 0u32..64 {
            let t: Vec<bool> = (0..6).map(|i| code >> i & 1 == 1).collect();
            let k = t.iter().filter(|&&v| v).count();
            if k == 0 || k == 6 {
                continue;
            }
            let prob = p.powi(k as i32) * (1.0 - p).powi(6 - k as i32);
            let y: Vec<f64> = (0..6).map(|i| if t[i] { y1[i] } else { y0[i] }).collect();
            let w = bernoulli_weights(&t, p).unwrap();
            num += prob * diff_means(&t, &y, Some(&w)).unwrap();
            mass += prob;
        }
        // unconditionally this is the Horvitz-Thompson estimator; at p = 1/2
        // the two degenerate atoms removed by conditioning contribute exactly
        // theta times their mass, so the conditional mean is still theta
        assert_relative_eq!(num / mass, theta, epsilon = 1e-12);
    }

    #[test]
    fn ks_cases() {
        let t = [true, true, true, false, false, false];
        assert_eq!(ks_stat(&t, &[1.0, 2.0, 3.0, 1.0, 2.0, 3.0]).unwrap(), 0.0);
        assert_eq!(ks_stat(&t, &[4.0, 5.0, 6.0, 1.0, 2.0, 3.0]).unwrap(), 1.0);
    }

    #[test]
    fn rank_sum_matches_enumerated_moments() {
        // oracle: W over all C(6,3) subsets of ranks {1..6}
        let mut ws = Vec::new();
        for code in 0u32..64 {
            if code.count_ones() == 3 {
                ws.push((0..6).filter(|i| code >> i & 1 == 1).map(|i| f64::from(i + 1)).sum::<f64>());
            }
        }
        let m = ws.iter().sum::<f64>() / ws.len() as f64;
        let v = ws.iter().map(|w| (w - m).powi(2)).sum::<f64>() / ws.len() as f64;
        let t = [true, true, true, false, false, false];
        let s = rank_sum_stat(&t, &[1.0, 2.0, 3.0, 4.0, 5.0, 6.0]).unwrap();
        assert_relative_eq!(s, (6.0 - m) / v.sqrt(), epsilon = 1e-12);
        assert_relative_eq!(s, -1.963_961_012_123_931, epsilon = 1e-12);
    }

    #[test]
    fn hotelling_single_covariate_is_squared_pooled_t() {
        let t = [true, true, true, true, false, false, false, false, false];
        let z = [1.2, 3.4, 2.2, 5.0, 0.3, 1.1, -0.4, 2.0, 0.9];
        let gp = moments(&t, &z, true);
        let gm = moments(&t, &z, false);
        let sp2 = (gp.ss + gm.ss) / (9.0 - 2.0);
        let tt = diff_means(&t, &z, None).unwrap() / (sp2 * (1.0 / 4.0 + 1.0 / 5.0)).sqrt();
        let h = hotelling_stat(&t, &[z.to_vec()]).unwrap();
        assert_relative_eq!(h, tt * tt, epsilon = 1e-12);
    }

    #[test]
    fn hotelling_rejects_collinear() {
        let t = [true, true, true, false, false, false];
        let a = vec![1.0, 2.0, 3.0, 1.5, 2.5, 0.5];
        let b: Vec<f64> = a.iter().map(|v| 2.0 * v).collect();
        let e = hotelling_stat(&t, &[a, b]).unwrap_err();
        assert_eq!(e.to_string(), "singular covariance; drop collinear covariates");
    }

    #[test]
    fn neyman_cases() {
        let t = [true, true, false, false];
        let v = neyman_variance(&t, &[3.0, 3.0, 1.0, 1.0], VarianceKind::PooledNeyman).unwrap();
        assert_eq!(v.value, 0.0);
        let v = neyman_variance(&t, &[0.0, 2.0, 0.0, 2.0], VarianceKind::PooledNeyman).unwrap();
        assert_relative_eq!(v.value, 2.0);
        let e = neyman_variance(&[true, false, false], &[1.0, 2.0, 3.0], VarianceKind::Hc2).unwrap_err();
        assert!(e.to_string().contains("treated"));
    }

    /// Long-form sandwich `(X'X)^-1 X' diag(e²/(1-h)^k) X (X'X)^-1` on the
    /// regression of Y on (1, T).
    fn sandwich_oracle(t: &[bool], y: &[f64], power: i32) -> f64 {
        let n = t.len();
        let x = DMatrix::from_fn(n, 2, |i, j| if j == 0 { 1.0 } else { f64::from(u8::from(t[i])) });
        let yv = DVector::from_column_slice(y);
        let xtx_inv = (x.transpose() * &x).try_inverse().unwrap();
        let beta = &xtx_inv * x.transpose() * &yv;
        let e = &yv - &x * beta;
        let hat = &x * &xtx_inv * x.transpose();
        let mut meat = DMatrix::zeros(2, 2);
        for i in 0..n {
            let xi = x.row(i).transpose();
            meat += &xi * xi.transpose() * (e[i] * e[i] / (1.0 - hat[(i, i)]).powi(power));
        }
        let v = &xtx_inv * meat * &xtx_inv;
        v[(1, 1)]
    }

    #[test]
    fn hc_matches_matrix_oracle() {
        let t = [true, false, true, true, false, false, true, false];
        let y = [2.3, 1.1, 4.5, 3.3, 0.2, 1.9, 2.8, 0.7];
        let hc2 = neyman_variance(&t, &y, VarianceKind::Hc2).unwrap().value;
        let hc3 = neyman_variance(&t, &y, VarianceKind::Hc3).unwrap().value;
        assert_relative_eq!(hc2, sandwich_oracle(&t, &y, 1), epsilon = 1e-12);
        assert_relative_eq!(hc3, sandwich_oracle(&t, &y, 2), epsilon = 1e-12);
        let pooled = neyman_variance(&t, &y, VarianceKind::PooledNeyman).unwrap().value;
        assert_relative_eq!(pooled, hc2, epsilon = 1e-12);
    }

    fn arb_data() -> impl Strategy<Value = (Vec<bool>, Vec<f64>)> {
        (3usize..20).prop_flat_map(|n| {
            (
                proptest::collection::vec(any::<bool>(), n).prop_filter("both groups", |t| t.iter().any(|&v| v) && t.iter().any(|&v| !v)),
                proptest::collection::vec(-100.0f64..100.0, n),
            )
        })
    }

    proptest! {
        #[test]
        fn diff_means_equivariance((t, y) in arb_data(), a in -10.0f64..10.0, b in 0.1f64..5.0) {
            let d = diff_means(&t, &y, None).unwrap();
            let ty: Vec<f64> = y.iter().map(|v| a + b * v).collect();
            let dt = diff_means(&t, &ty, None).unwrap();
            prop_assert!((dt - b * d).abs() < 1e-9 * (1.0 + d.abs() * b));
        }

        #[test]
        fn ks_and_ranksum_invariant_to_monotone_maps((t, y) in arb_data()) {
            let ty: Vec<f64> = y.iter().map(|v| (v / 50.0).exp() + v * 3.0).collect();
            prop_assert_eq!(ks_stat(&t, &y).unwrap(), ks_stat(&t, &ty).unwrap());
            prop_assert!((rank_sum_stat(&t, &y).unwrap() - rank_sum_stat(&t, &ty).unwrap()).abs() < 1e-12);
        }

        #[test]
        fn balanced_bernoulli_weights_are_unit((t, y) in arb_data()) {
            let p = t.iter().filter(|&&v| v).count() as f64 / t.len() as f64;
            let w = bernoulli_weights(&t, p).unwrap();
            let a = diff_means(&t, &y, Some(&w)).unwrap();
            let b = diff_means(&t, &y, None).unwrap();
            prop_assert!((a - b).abs() < 1e-9 * (1.0 + b.abs()));
        }
    }
}
