//! Kernel-weighted local polynomial fits at a boundary, global polynomial
//! fits, and binned means for RD plots. Bandwidths are always supplied by the
//! caller.

use std::fmt::Write as _;

use nalgebra::{DMatrix, DVector};
use serde::Serialize;

use crate::error::{invalid, Error, Result};
use crate::largesample::{critical_value, two_sided_p};
use crate::randinf::Kernel;
use crate::sample::RdSample;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Side {
    Left,
    Right,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum LpVariance {
    #[default]
    Hc2,
    Hc3,
    /// Cluster-robust with one cluster per distinct score value.
    ClusterByScore,
}

impl std::str::FromStr for LpVariance {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Ok(match s.to_ascii_lowercase().as_str() {
            "hc2" => LpVariance::Hc2,
            "hc3" => LpVariance::Hc3,
            "cluster" | "cluster_by_score" => LpVariance::ClusterByScore,
            other => return Err(Error::Config(format!("unknown local-fit variance `{other}`"))),
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct LocalFitConfig {
    pub order: usize,
    pub kernel: Kernel,
    pub bandwidth: f64,
    pub variance: LpVariance,
}

impl LocalFitConfig {
    pub fn new(order: usize, bandwidth: f64) -> Self {
        Self {
            order,
            kernel: Kernel::Triangular,
            bandwidth,
            variance: LpVariance::Hc2,
        }
    }

    pub fn with_kernel(mut self, kernel: Kernel) -> Self {
        self.kernel = kernel;
        self
    }

    pub fn with_variance(mut self, variance: LpVariance) -> Self {
        self.variance = variance;
        self
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LocalFit {
    pub side: Option<Side>,
    pub eval_point: f64,
    pub order: usize,
    pub kernel: Kernel,
    pub bandwidth: f64,
    /// Coefficients on powers of `x - eval_point`, intercept first.
    pub coefficients: Vec<f64>,
    pub intercept_se: f64,
    pub n_used: usize,
    pub variance: LpVariance,
}

impl LocalFit {
    pub fn intercept(&self) -> f64 {
        self.coefficients[0]
    }
}

fn kernel_weight(kernel: Kernel, u: f64) -> f64 {
    if u.abs() > 1.0 {
        return 0.0;
    }
    match kernel {
        Kernel::Uniform => 1.0,
        Kernel::Triangular => 1.0 - u.abs(),
    }
}

/// Weighted least squares of `y` on powers of `x - x0` over the points with
/// `|x - x0| <= h`, weighted by kernel times `w`.
pub fn fit_at(x: &[f64], y: &[f64], w: Option<&[f64]>, x0: f64, cfg: &LocalFitConfig) -> Result<LocalFit> {
    if !(cfg.bandwidth > 0.0) {
        return Err(invalid("bandwidth must be positive"));
    }
    if x.len() != y.len() || w.is_some_and(|w| w.len() != x.len()) {
        return Err(invalid("score, outcome and weight lengths differ"));
    }
    let mut rows = Vec::new();
    for i in 0..x.len() {
        if y[i].is_nan() {
            continue;
        }
        let k = kernel_weight(cfg.kernel, (x[i] - x0) / cfg.bandwidth) * w.map_or(1.0, |w| w[i]);
        if k > 0.0 {
            rows.push((x[i], y[i], k));
        }
    }
    let k = cfg.order + 1;
    let mut distinct: Vec<f64> = rows.iter().map(|r| r.0).collect();
    distinct.sort_by(f64::total_cmp);
    distinct.dedup();
    if distinct.len() < k {
        return Err(Error::RankDeficient(format!(
            "order-{} fit at {x0} needs {k} distinct score values within the bandwidth, found {}; \
             with mass points, widen the bandwidth or lower the order",
            cfg.order,
            distinct.len()
        )));
    }
    let n = rows.len();
    let xm = DMatrix::from_fn(n, k, |i, j| (rows[i].0 - x0).powi(j as i32));
    let yv = DVector::from_iterator(n, rows.iter().map(|r| r.1));
    let wv = DVector::from_iterator(n, rows.iter().map(|r| r.2));
    let xw = DMatrix::from_fn(n, k, |i, j| xm[(i, j)] * wv[i]);
    let xtwx = xm.transpose() * &xw;
    let chol = xtwx
        .clone()
        .cholesky()
        .ok_or_else(|| Error::RankDeficient(format!("design matrix at {x0} is singular; too few mass points")))?;
    let bread = chol.inverse();
    let beta = &bread * (xw.transpose() * &yv);
    let resid = &yv - &xm * &beta;
    let meat = match cfg.variance {
        LpVariance::Hc2 | LpVariance::Hc3 => {
            let power = if cfg.variance == LpVariance::Hc2 { 1 } else { 2 };
            let mut m = DMatrix::zeros(k, k);
            for i in 0..n {
                let xi = xm.row(i).transpose();
                let h = wv[i] * (xi.transpose() * &bread * &xi)[(0, 0)];
                let denom = (1.0 - h).powi(power);
                if denom <= 1e-12 {
                    continue;
                }
                let s = wv[i] * wv[i] * resid[i] * resid[i] / denom;
                m += &xi * xi.transpose() * s;
            }
            m
        }
        LpVariance::ClusterByScore => {
            let mut m = DMatrix::zeros(k, k);
            let mut order: Vec<usize> = (0..n).collect();
            order.sort_by(|&a, &b| rows[a].0.total_cmp(&rows[b].0));
            let mut g = 0usize;
            let mut i = 0;
            while i < n {
                let mut score = DVector::zeros(k);
                let v = rows[order[i]].0;
                while i < n && rows[order[i]].0 == v {
                    let r = order[i];
                    score += xm.row(r).transpose() * (wv[r] * resid[r]);
                    i += 1;
                }
                m += &score * score.transpose();
                g += 1;
            }
            let gf = g as f64;
            let nf = n as f64;
            let adj = if g > 1 && n > k {
                gf / (gf - 1.0) * (nf - 1.0) / (nf - k as f64)
            } else {
                1.0
            };
            m * adj
        }
    };
    let vcov = &bread * meat * &bread;
    Ok(LocalFit {
        side: None,
        eval_point: x0,
        order: cfg.order,
        kernel: cfg.kernel,
        bandwidth: cfg.bandwidth,
        coefficients: beta.iter().copied().collect(),
        intercept_se: vcov[(0, 0)].max(0.0).sqrt(),
        n_used: n,
        variance: cfg.variance,
    })
}

fn side_filter(x: f64, c: f64, side: Side) -> bool {
    match side {
        Side::Left => x < c,
        Side::Right => x >= c,
    }
}

/// Fit on one side of the cutoff `c`, evaluated at `c`. Sample weights (for
/// example counts of collapsed data) multiply the kernel weights.
pub fn local_fit(sample: &RdSample, c: f64, side: Side, cfg: &LocalFitConfig) -> Result<LocalFit> {
    let idx: Vec<usize> = (0..sample.len()).filter(|&i| side_filter(sample.score()[i], c, side)).collect();
    let x: Vec<f64> = idx.iter().map(|&i| sample.score()[i]).collect();
    let y: Vec<f64> = idx.iter().map(|&i| sample.outcome()[i]).collect();
    let w: Option<Vec<f64>> = sample.weights().map(|w| idx.iter().map(|&i| w[i]).collect());
    let mut fit = fit_at(&x, &y, w.as_deref(), c, cfg)?;
    fit.side = Some(side);
    Ok(fit)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SharpEffect {
    pub cutoff: f64,
    pub estimate: f64,
    pub se: f64,
    pub z: f64,
    pub p_value: f64,
    pub ci: (f64, f64),
    pub left: LocalFit,
    pub right: LocalFit,
}

/// Difference of the right and left intercepts at the cutoff.
pub fn sharp_effect(sample: &RdSample, c: f64, cfg: &LocalFitConfig, alpha: f64) -> Result<SharpEffect> {
    let zcrit = critical_value(alpha)?;
    let left = local_fit(sample, c, Side::Left, cfg)?;
    let right = local_fit(sample, c, Side::Right, cfg)?;
    let estimate = right.intercept() - left.intercept();
    let se = (left.intercept_se.powi(2) + right.intercept_se.powi(2)).sqrt();
    let (z, p_value) = if se > 0.0 {
        (estimate / se, two_sided_p(estimate / se))
    } else if estimate != 0.0 {
        (estimate.signum() * f64::INFINITY, 0.0)
    } else {
        (0.0, 1.0)
    };
    Ok(SharpEffect {
        cutoff: c,
        estimate,
        se,
        z,
        p_value,
        ci: (estimate - zcrit * se, estimate + zcrit * se),
        left,
        right,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum BinRule {
    #[default]
    EvenlySpaced,
    Quantile,
}

impl std::str::FromStr for BinRule {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Ok(match s.to_ascii_lowercase().as_str() {
            "es" | "even" | "evenly_spaced" => BinRule::EvenlySpaced,
            "qs" | "quantile" => BinRule::Quantile,
            other => return Err(Error::Config(format!("unknown bin rule `{other}`"))),
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Bin {
    pub lo: f64,
    pub hi: f64,
    pub center: f64,
    pub mean: f64,
    pub n: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SidePlot {
    pub side: Side,
    pub bins: Vec<Bin>,
    /// Global polynomial on powers of `x - c`.
    pub coefficients: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RdPlotData {
    pub cutoff: f64,
    pub global_order: usize,
    pub rule: BinRule,
    pub left: SidePlot,
    pub right: SidePlot,
    pub notes: Vec<String>,
}

fn side_plot(
    x: &[f64],
    y: &[f64],
    c: f64,
    side: Side,
    n_bins: usize,
    rule: BinRule,
    global_order: usize,
    notes: &mut Vec<String>,
) -> Result<SidePlot> {
    if x.is_empty() {
        return Err(invalid(format!("no observations on the {side:?} side")));
    }
    let mut sorted: Vec<(f64, f64)> = x.iter().copied().zip(y.iter().copied()).collect();
    sorted.sort_by(|a, b| a.0.total_cmp(&b.0));
    let lo = sorted[0].0;
    let hi = sorted[sorted.len() - 1].0;
    let edges: Vec<f64> = match rule {
        BinRule::EvenlySpaced => (0..=n_bins).map(|j| lo + (hi - lo) * j as f64 / n_bins as f64).collect(),
        BinRule::Quantile => (0..=n_bins)
            .map(|j| {
                let pos = (sorted.len() - 1) as f64 * j as f64 / n_bins as f64;
                let (a, b) = (pos.floor() as usize, pos.ceil() as usize);
                sorted[a].0 + (sorted[b].0 - sorted[a].0) * (pos - a as f64)
            })
            .collect(),
    };
    let mut bins: Vec<Bin> = Vec::new();
    let mut sums = Vec::new();
    for j in 0..n_bins {
        let (a, b) = (edges[j], edges[j + 1]);
        let last = j + 1 == n_bins;
        let members: Vec<f64> = sorted
            .iter()
            .filter(|p| p.0 >= a && (p.0 < b || (last && p.0 <= b)))
            .map(|p| p.1)
            .collect();
        bins.push(Bin {
            lo: a,
            hi: b,
            center: (a + b) / 2.0,
            mean: f64::NAN,
            n: members.len(),
        });
        sums.push(members.iter().sum::<f64>());
    }
    // merge empty bins into the following bin (the last into the previous)
    let mut merged: Vec<Bin> = Vec::new();
    let mut merged_sums: Vec<f64> = Vec::new();
    let mut carry_lo: Option<f64> = None;
    let mut n_empty = 0;
    for (bin, s) in bins.into_iter().zip(sums) {
        if bin.n == 0 {
            n_empty += 1;
            carry_lo.get_or_insert(bin.lo);
            continue;
        }
        let lo = carry_lo.take().unwrap_or(bin.lo);
        merged.push(Bin {
            lo,
            center: (lo + bin.hi) / 2.0,
            ..bin
        });
        merged_sums.push(s);
    }
    if carry_lo.is_some() {
        if let Some(last) = merged.last_mut() {
            last.hi = edges[n_bins];
            last.center = (last.lo + last.hi) / 2.0;
        }
    }
    for (b, s) in merged.iter_mut().zip(&merged_sums) {
        b.mean = s / b.n as f64;
    }
    if n_empty > 0 {
        notes.push(format!("{n_empty} empty {side:?} bin(s) merged with a neighbor"));
    }
    let span = (hi - c).abs().max((lo - c).abs()).max(f64::MIN_POSITIVE);
    let global = LocalFitConfig::new(global_order, span * (1.0 + 1e-9)).with_kernel(Kernel::Uniform);
    let coefficients = match fit_at(x, y, None, c, &global) {
        Ok(f) => f.coefficients,
        Err(e) => {
            notes.push(format!("{side:?} global fit skipped: {e}"));
            Vec::new()
        }
    };
    Ok(SidePlot {
        side,
        bins: merged,
        coefficients,
    })
}

/// Binned means and global polynomial fits on each side of the cutoff.
pub fn rdplot_data(sample: &RdSample, c: f64, n_bins: (usize, usize), rule: BinRule, global_order: usize) -> Result<RdPlotData> {
    if n_bins.0 == 0 || n_bins.1 == 0 {
        return Err(invalid("need at least one bin per side"));
    }
    let mut notes = Vec::new();
    let split = |side: Side, nb: usize, notes: &mut Vec<String>| {
        let idx: Vec<usize> = (0..sample.len())
            .filter(|&i| side_filter(sample.score()[i], c, side) && !sample.outcome()[i].is_nan())
            .collect();
        let x: Vec<f64> = idx.iter().map(|&i| sample.score()[i]).collect();
        let y: Vec<f64> = idx.iter().map(|&i| sample.outcome()[i]).collect();
        side_plot(&x, &y, c, side, nb, rule, global_order, notes)
    };
    let left = split(Side::Left, n_bins.0, &mut notes)?;
    let right = split(Side::Right, n_bins.1, &mut notes)?;
    Ok(RdPlotData {
        cutoff: c,
        global_order,
        rule,
        left,
        right,
        notes,
    })
}

fn poly(coef: &[f64], u: f64) -> f64 {
    coef.iter().rev().fold(0.0, |acc, &b| acc * u + b)
}

impl RdPlotData {
    /// Static SVG rendering: binned means as dots, global fits as lines and a
    /// dashed vertical line at the cutoff.
    pub fn to_svg(&self, width: u32, height: u32) -> String {
        let pts: Vec<&Bin> = self.left.bins.iter().chain(&self.right.bins).collect();
        let xmin = pts.iter().map(|b| b.lo).fold(self.cutoff, f64::min);
        let xmax = pts.iter().map(|b| b.hi).fold(self.cutoff, f64::max);
        let mut ymin = pts.iter().map(|b| b.mean).fold(f64::INFINITY, f64::min);
        let mut ymax = pts.iter().map(|b| b.mean).fold(f64::NEG_INFINITY, f64::max);
        let curves: Vec<Vec<(f64, f64)>> = [
            (&self.left, self.left.bins.first().map_or(xmin, |b| b.lo), self.cutoff),
            (&self.right, self.cutoff, self.right.bins.last().map_or(xmax, |b| b.hi)),
        ]
        .iter()
        .filter(|(s, _, _)| !s.coefficients.is_empty())
        .map(|(s, a, b)| {
            (0..=100)
                .map(|j| {
                    let x = a + (b - a) * j as f64 / 100.0;
                    (x, poly(&s.coefficients, x - self.cutoff))
                })
                .collect()
        })
        .collect();
        for c in &curves {
            for &(_, y) in c {
                ymin = ymin.min(y);
                ymax = ymax.max(y);
            }
        }
        if !(ymax > ymin) {
            ymin -= 1.0;
            ymax += 1.0;
        }
        let (w, h, pad) = (f64::from(width), f64::from(height), 40.0);
        let sx = |x: f64| pad + (x - xmin) / (xmax - xmin).max(f64::MIN_POSITIVE) * (w - 2.0 * pad);
        let sy = |y: f64| h - pad - (y - ymin) / (ymax - ymin) * (h - 2.0 * pad);
        let mut s = String::new();
        let _ = writeln!(s, r#"<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}">"#);
        let _ = writeln!(s, r#"<rect width="100%" height="100%" fill="white"/>"#);
        for b in &pts {
            let _ = writeln!(s, r#"<circle cx="{:.2}" cy="{:.2}" r="3" fill="gray"/>"#, sx(b.center), sy(b.mean));
        }
        for c in &curves {
            let path: Vec<String> = c.iter().map(|&(x, y)| format!("{:.2},{:.2}", sx(x), sy(y))).collect();
            let _ = writeln!(
                s,
                r#"<polyline points="{}" fill="none" stroke="black" stroke-width="1.5"/>"#,
                path.join(" ")
            );
        }
        let cx = sx(self.cutoff);
        let _ = writeln!(
            s,
            r#"<line x1="{cx:.2}" y1="{pad}" x2="{cx:.2}" y2="{:.2}" stroke="red" stroke-dasharray="4 3"/>"#,
            h - pad
        );
        s.push_str("</svg>\n");
        s
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sample::Cutoff;
    use approx::assert_relative_eq;

    fn sample(x: Vec<f64>, y: Vec<f64>) -> RdSample {
        RdSample::new(x, y, Cutoff::Scalar(0.0)).unwrap()
    }

    #[test]
    fn recovers_a_line() {
        let x: Vec<f64> = (0..30).map(|i| -1.0 + i as f64 / 15.0).collect();
        let y: Vec<f64> = x.iter().map(|v| if *v >= 0.0 { 2.0 + 3.0 * v } else { 1.0 - 0.5 * v }).collect();
        let s = sample(x, y);
        let e = sharp_effect(&s, 0.0, &LocalFitConfig::new(1, 0.9), 0.05).unwrap();
        assert_relative_eq!(e.right.coefficients[1], 3.0, epsilon = 1e-10);
        assert_relative_eq!(e.left.coefficients[1], -0.5, epsilon = 1e-10);
        assert_relative_eq!(e.estimate, 1.0, epsilon = 1e-10);
    }

    #[test]
    fn order_zero_uniform_is_side_mean() {
        let x = vec![-0.9, -0.5, -0.2, -2.0, 0.0, 0.3, 0.7, 1.5];
        let y = vec![1.0, 2.0, 4.0, 100.0, 3.0, 5.0, 10.0, -50.0];
        let s = sample(x, y);
        let cfg = LocalFitConfig::new(0, 1.0).with_kernel(Kernel::Uniform);
        assert_relative_eq!(
            local_fit(&s, 0.0, Side::Left, &cfg).unwrap().intercept(),
            7.0 / 3.0,
            epsilon = 1e-12
        );
        assert_relative_eq!(local_fit(&s, 0.0, Side::Right, &cfg).unwrap().intercept(), 6.0, epsilon = 1e-12);
    }

    #[test]
    fn mirrored_data_gives_zero() {
        let x: Vec<f64> = (1..=10).flat_map(|i| [i as f64 / 10.0 - 0.05, -(i as f64) / 10.0 + 0.05]).collect();
        let y: Vec<f64> = x.iter().map(|v| v.abs() * 2.0 + 1.0).collect();
        let e = sharp_effect(&sample(x, y), 0.0, &LocalFitConfig::new(1, 2.0), 0.05).unwrap();
        assert!(e.estimate.abs() < 1e-12);
    }

    #[test]
    fn zero_outcome_side_has_zero_intercept() {
        let x: Vec<f64> = (0..20).map(|i| -1.0 + i as f64 / 10.0).collect();
        let d: Vec<f64> = x
            .iter()
            .enumerate()
            .map(|(i, v)| if *v >= 0.0 { (i % 2) as f64 } else { 0.0 })
            .collect();
        let e = sharp_effect(&sample(x, d), 0.0, &LocalFitConfig::new(1, 1.5), 0.05).unwrap();
        assert_eq!(e.left.intercept(), 0.0);
    }

    #[test]
    fn too_few_mass_points() {
        let s = sample(vec![-1.0, -1.0, -1.0, 1.0, 1.0, 2.0], vec![0.0; 6]);
        let e = local_fit(&s, 0.0, Side::Left, &LocalFitConfig::new(1, 5.0)).unwrap_err();
        assert!(e.to_string().contains("mass points"));
    }

    #[test]
    fn collapsed_equivalence_for_order_zero() {
        let x = vec![-3.0, -3.0, -2.0, -1.0, -1.0, -1.0, 0.0, 0.0, 1.0, 2.0, 2.0, 3.0];
        let y = vec![1.0, 2.0, 0.5, 4.0, 3.0, 1.0, 7.0, 9.0, 8.0, 6.0, 2.0, 5.0];
        let raw = sample(x, y);
        let collapsed = raw.collapse_by_score();
        let cfg = LocalFitConfig::new(0, 2.5).with_kernel(Kernel::Uniform);
        let a = sharp_effect(&raw, 0.0, &cfg, 0.05).unwrap();
        let b = sharp_effect(&collapsed, 0.0, &cfg, 0.05).unwrap();
        assert!((a.estimate - b.estimate).abs() < 1e-12);
    }

    #[test]
    fn cluster_variance_runs() {
        let x: Vec<f64> = (0..40).map(|i| ((i % 8) as f64 - 4.0) / 4.0).collect();
        let y: Vec<f64> = (0..40).map(|i| (i * 37 % 11) as f64 / 3.0).collect();
        let s = sample(x, y);
        let cfg = LocalFitConfig::new(1, 2.0).with_variance(LpVariance::ClusterByScore);
        let f = local_fit(&s, 0.0, Side::Right, &cfg).unwrap();
        assert!(f.intercept_se.is_finite() && f.intercept_se > 0.0);
    }

    #[test]
    fn plot_constant_outcome() {
        let x: Vec<f64> = (0..40).map(|i| -1.0 + i as f64 / 20.0).collect();
        let s = sample(x, vec![3.0; 40]);
        let p = rdplot_data(&s, 0.0, (4, 4), BinRule::EvenlySpaced, 3).unwrap();
        for b in p.left.bins.iter().chain(&p.right.bins) {
            assert_eq!(b.mean, 3.0);
        }
        assert_relative_eq!(p.left.coefficients[0], 3.0, epsilon = 1e-9);
        for c in &p.right.coefficients[1..] {
            assert!(c.abs() < 1e-8);
        }
        assert!(p.to_svg(400, 300).starts_with("<svg"));
    }

    #[test]
    fn singleton_bins_are_raw_outcomes() {
        let x = vec![-3.0, -2.0, -1.0, 0.0, 1.0, 2.0];
        let y = vec![5.0, 1.0, 2.0, 7.0, 3.0, 4.0];
        let p = rdplot_data(&sample(x, y), 0.0, (3, 3), BinRule::Quantile, 1).unwrap();
        let left: Vec<f64> = p.left.bins.iter().map(|b| b.mean).collect();
        let right: Vec<f64> = p.right.bins.iter().map(|b| b.mean).collect();
        assert_eq!(left, vec![5.0, 1.0, 2.0]);
        assert_eq!(right, vec![7.0, 3.0, 4.0]);
    }

    #[test]
    fn empty_bins_merge() {
        let x = vec![-10.0, -9.9, -0.1, 0.0, 1.0, 2.0];
        let y = vec![1.0; 6];
        let p = rdplot_data(&sample(x, y), 0.0, (5, 2), BinRule::EvenlySpaced, 0).unwrap();
        assert_eq!(p.left.bins.iter().map(|b| b.n).sum::<usize>(), 3);
        assert!(p.notes.iter().any(|n| n.contains("merged")));
    }
}
