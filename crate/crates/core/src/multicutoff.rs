//! Designs where the cutoff varies across units: cutoff-specific effects,
//! normalizing and pooling, comparisons across cutoffs, cumulative cutoffs
//! and extrapolation away from a cutoff under a constant-bias assumption.

use std::collections::BTreeSet;

use rayon::prelude::*;
use serde::Serialize;

use crate::error::{invalid, Error, Result};
use crate::largesample::two_sided_p;
use crate::localpoly::{fit_at, sharp_effect, LocalFitConfig};
use crate::randinf::{analyze, RandInfConfig};
use crate::sample::{RdSample, Window};

/// Sharp estimator applied at each cutoff.
#[derive(Debug, Clone, PartialEq)]
pub enum Engine {
    /// Local randomization in the symmetric window of the given half-length.
    LocalRand { half_window: f64, config: RandInfConfig },
    /// Local polynomial with a fixed bandwidth.
    LocalPoly { config: LocalFitConfig, alpha: f64 },
}

impl Engine {
    /// Window half-length or bandwidth.
    pub fn scale(&self) -> f64 {
        match self {
            Engine::LocalRand { half_window, .. } => *half_window,
            Engine::LocalPoly { config, .. } => config.bandwidth,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CutoffResult {
    pub cutoff: f64,
    pub estimate: f64,
    /// Large-sample variance of the estimate; `NaN` when unavailable.
    pub variance: f64,
    pub p_value: f64,
    pub n_used: usize,
    pub n_minus: usize,
    pub n_plus: usize,
    pub window_or_bandwidth: f64,
    /// Rows of the originating sample used in the estimate.
    #[serde(skip)]
    pub sample_ids: Vec<usize>,
}

/// Run `engine` on `sample` at scalar cutoff `c`. `ids` maps rows of
/// `sample` back to the originating sample.
pub fn run_engine(sample: &RdSample, c: f64, engine: &Engine, ids: &[usize]) -> Result<CutoffResult> {
    match engine {
        Engine::LocalRand { half_window, config } => {
            let s = sample.with_scalar_cutoff(c);
            let w = Window::symmetric(&s, c, *half_window)?;
            if w.n_minus == 0 || w.n_plus == 0 {
                return Err(Error::EmptyGroup(format!("window around {c} has an empty side")));
            }
            let wd = s.window_data(&w)?;
            let r = analyze(&wd, &wd.outcome, config)?;
            Ok(CutoffResult {
                cutoff: c,
                estimate: r.estimate,
                variance: r.large_sample.as_ref().map_or(f64::NAN, |l| l.variance.value),
                p_value: r.fisher.p_value,
                n_used: r.n_minus + r.n_plus,
                n_minus: r.n_minus,
                n_plus: r.n_plus,
                window_or_bandwidth: *half_window,
                sample_ids: wd.rows.iter().map(|&i| ids[i]).collect(),
            })
        }
        Engine::LocalPoly { config, alpha } => {
            let e = sharp_effect(sample, c, config, *alpha)?;
            let used: Vec<usize> = (0..sample.len())
                .filter(|&i| (sample.score()[i] - c).abs() <= config.bandwidth)
                .map(|i| ids[i])
                .collect();
            Ok(CutoffResult {
                cutoff: c,
                estimate: e.estimate,
                variance: e.se * e.se,
                p_value: e.p_value,
                n_used: e.left.n_used + e.right.n_used,
                n_minus: e.left.n_used,
                n_plus: e.right.n_used,
                window_or_bandwidth: config.bandwidth,
                sample_ids: used,
            })
        }
    }
}

/// Distinct cutoff values in ascending order.
pub fn distinct_cutoffs(sample: &RdSample) -> Vec<f64> {
    let mut v: Vec<f64> = (0..sample.len()).map(|i| sample.cutoff_of(i)).collect();
    v.sort_by(f64::total_cmp);
    v.dedup();
    v
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ByCutoff {
    pub results: Vec<CutoffResult>,
    pub warnings: Vec<String>,
}

/// Cutoff-specific estimates, each on the units facing that cutoff.
pub fn by_cutoff(sample: &RdSample, engine: &Engine) -> Result<ByCutoff> {
    let cutoffs = distinct_cutoffs(sample);
    if cutoffs.len() < 2 {
        return Err(invalid("need ≥ 2 cutoffs; use sharp analysis"));
    }
    let runs: Vec<(f64, Result<CutoffResult>)> = cutoffs
        .par_iter()
        .map(|&c| {
            let rows: Vec<usize> = (0..sample.len()).filter(|&i| sample.cutoff_of(i) == c).collect();
            let r = sample
                .subset(&rows)
                .and_then(|s| run_engine(&s.with_scalar_cutoff(c), c, engine, &rows));
            (c, r)
        })
        .collect();
    let mut results = Vec::new();
    let mut warnings = Vec::new();
    for (c, r) in runs {
        match r {
            Ok(r) => results.push(r),
            Err(e) => warnings.push(format!("cutoff {c} skipped: {e}")),
        }
    }
    Ok(ByCutoff { results, warnings })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CutoffWeight {
    pub cutoff: f64,
    pub weight: f64,
    pub n_in_band: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PooledResult {
    pub pooled: CutoffResult,
    /// `Σ ŵ(c) τ̂(c)` over the cutoff-specific estimates.
    pub weighted: f64,
    pub weights: Vec<CutoffWeight>,
    pub h: f64,
    pub per_cutoff: Vec<CutoffResult>,
    pub warnings: Vec<String>,
}

/// Share of units near the normalized cutoff that face each cutoff:
/// `#{C = c, |X~| < h} / #{|X~| < h}`.
pub fn pooled_weights(sample: &RdSample, h: f64) -> Result<Vec<CutoffWeight>> {
    if !(h > 0.0) {
        return Err(invalid("weight half-width must be positive"));
    }
    let norm = sample.normalize_score();
    let in_band: Vec<usize> = (0..sample.len()).filter(|&i| norm.score()[i].abs() < h).collect();
    if in_band.is_empty() {
        return Err(invalid(format!("no units with |normalized score| < {h}")));
    }
    let total = in_band.len() as f64;
    Ok(distinct_cutoffs(sample)
        .into_iter()
        .map(|c| {
            let n = in_band.iter().filter(|&&i| sample.cutoff_of(i) == c).count();
            CutoffWeight {
                cutoff: c,
                weight: n as f64 / total,
                n_in_band: n,
            }
        })
        .collect())
}

/// Normalize-and-pool estimate alongside the cutoff-specific estimates and
/// the weights that pooling implicitly assigns to them. `h` defaults to the
/// engine's window half-length or bandwidth.
pub fn pool(sample: &RdSample, engine: &Engine, h: Option<f64>) -> Result<PooledResult> {
    let by = by_cutoff(sample, engine)?;
    let norm = sample.normalize_score();
    let ids: Vec<usize> = (0..sample.len()).collect();
    let pooled = run_engine(&norm, 0.0, engine, &ids)?;
    let h = h.unwrap_or_else(|| engine.scale());
    let weights = pooled_weights(sample, h)?;
    let mut warnings = by.warnings;
    let mut weighted = 0.0;
    let mut covered = 0.0;
    for w in &weights {
        match by.results.iter().find(|r| r.cutoff == w.cutoff) {
            Some(r) => {
                weighted += w.weight * r.estimate;
                covered += w.weight;
            }
            None if w.weight > 0.0 => {
                warnings.push(format!("cutoff {} has weight {:.3} but no estimate", w.cutoff, w.weight));
            }
            None => {}
        }
    }
    if covered < 1.0 - 1e-12 && covered > 0.0 {
        weighted /= covered;
        warnings.push("weighted estimate renormalized over cutoffs with estimates".into());
    }
    Ok(PooledResult {
        pooled,
        weighted,
        weights,
        h,
        per_cutoff: by.results,
        warnings,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Comparison {
    pub cutoff_1: f64,
    pub cutoff_2: f64,
    pub difference: f64,
    pub z: f64,
    pub p_value: f64,
    pub warning: Option<String>,
}

/// Gaussian test of equal effects at two cutoffs.
pub fn compare_cutoffs(r1: &CutoffResult, r2: &CutoffResult) -> Result<Comparison> {
    if !(r1.variance >= 0.0 && r2.variance >= 0.0) {
        return Err(invalid("both estimates need a large-sample variance"));
    }
    let difference = r1.estimate - r2.estimate;
    let v = r1.variance + r2.variance;
    let (z, p_value) = if difference == 0.0 {
        (0.0, 1.0)
    } else if v > 0.0 {
        (difference / v.sqrt(), two_sided_p(difference / v.sqrt()))
    } else {
        (difference.signum() * f64::INFINITY, 0.0)
    };
    let a: BTreeSet<usize> = r1.sample_ids.iter().copied().collect();
    let warning = r2
        .sample_ids
        .iter()
        .any(|i| a.contains(i))
        .then(|| "correlated estimates; p-value approximate".to_string());
    Ok(Comparison {
        cutoff_1: r1.cutoff,
        cutoff_2: r2.cutoff,
        difference,
        z,
        p_value,
        warning,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum SplitRule {
    #[default]
    Midpoint,
    Median,
}

impl std::str::FromStr for SplitRule {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Ok(match s.to_ascii_lowercase().as_str() {
            "midpoint" => SplitRule::Midpoint,
            "median" => SplitRule::Median,
            other => return Err(Error::Config(format!("unknown split rule `{other}`"))),
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CumulativeSplit {
    pub cutoffs: Vec<f64>,
    /// `thresholds[k]` separates the units analyzed at `cutoffs[k]` from
    /// those analyzed at `cutoffs[k + 1]`.
    pub thresholds: Vec<f64>,
    /// Index into `cutoffs` for every unit.
    pub assignment: Vec<usize>,
    pub warnings: Vec<String>,
}

impl CumulativeSplit {
    pub fn rows_for(&self, k: usize) -> Vec<usize> {
        (0..self.assignment.len()).filter(|&i| self.assignment[i] == k).collect()
    }
}

/// Assign every unit to exactly one cutoff when all units face every cutoff.
/// Units at or below a threshold go to the lower cutoff.
pub fn split_cumulative(sample: &RdSample, cutoffs: &[f64], rule: SplitRule) -> Result<CumulativeSplit> {
    if cutoffs.is_empty() {
        return Err(invalid("need at least one cutoff"));
    }
    if cutoffs.windows(2).any(|w| !(w[0] < w[1])) {
        return Err(invalid("cutoffs must be strictly increasing"));
    }
    let x = sample.score();
    let mut warnings = Vec::new();
    let mut thresholds = Vec::new();
    for w in cutoffs.windows(2) {
        let (c1, c2) = (w[0], w[1]);
        let mut between: Vec<f64> = x.iter().copied().filter(|&v| v >= c1 && v < c2).collect();
        if between.is_empty() {
            warnings.push(format!("no units between cutoffs {c1} and {c2}"));
        }
        let t = match rule {
            SplitRule::Midpoint => (c1 + c2) / 2.0,
            SplitRule::Median if between.is_empty() => {
                warnings.push(format!("median split between {c1} and {c2} falls back to the midpoint"));
                (c1 + c2) / 2.0
            }
            SplitRule::Median => {
                between.sort_by(f64::total_cmp);
                let m = between.len();
                if m % 2 == 1 {
                    between[m / 2]
                } else {
                    (between[m / 2 - 1] + between[m / 2]) / 2.0
                }
            }
        };
        thresholds.push(t);
    }
    let assignment = x.iter().map(|&v| thresholds.iter().filter(|&&t| v > t).count()).collect();
    Ok(CumulativeSplit {
        cutoffs: cutoffs.to_vec(),
        thresholds,
        assignment,
        warnings,
    })
}

/// Cutoff-specific estimates after a cumulative split.
pub fn by_cutoff_cumulative(sample: &RdSample, split: &CumulativeSplit, engine: &Engine) -> Result<ByCutoff> {
    let runs: Vec<(f64, Result<CutoffResult>)> = (0..split.cutoffs.len())
        .into_par_iter()
        .map(|k| {
            let c = split.cutoffs[k];
            let rows = split.rows_for(k);
            let r = sample
                .subset(&rows)
                .and_then(|s| run_engine(&s.with_scalar_cutoff(c), c, engine, &rows));
            (c, r)
        })
        .collect();
    let mut results = Vec::new();
    let mut warnings = split.warnings.clone();
    for (c, r) in runs {
        match r {
            Ok(r) => results.push(r),
            Err(e) => warnings.push(format!("cutoff {c} skipped: {e}")),
        }
    }
    Ok(ByCutoff { results, warnings })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Extrapolation {
    pub c1: f64,
    pub c2: f64,
    pub x: f64,
    pub estimate: f64,
    /// Treated mean at `x` for units facing `c1`.
    pub mu1_c1_x: f64,
    /// Control mean at `x` for units facing `c2`.
    pub mu0_c2_x: f64,
    pub mu0_c1_c1: f64,
    pub mu0_c2_c1: f64,
    /// `mu0_c1_c1 - mu0_c2_c1`, assumed constant over `[c1, x]`.
    pub bias: f64,
}

/// Effect at `x` in `(c1, c2]` for units facing the lower cutoff `c1`, using
/// the control curve of the units facing `c2` shifted by their gap at `c1`.
pub fn extrapolate_constant_bias(sample: &RdSample, c1: f64, c2: f64, x: f64, cfg: &LocalFitConfig) -> Result<Extrapolation> {
    if !(c1 < c2) {
        return Err(invalid("need c1 < c2"));
    }
    if !(x > c1 && x <= c2) && x != c1 {
        return Err(invalid(format!("evaluation point {x} outside [c1, c2]")));
    }
    let fit = |cut: f64, treated: bool, at: f64, label: &str| -> Result<f64> {
        let rows: Vec<usize> = (0..sample.len())
            .filter(|&i| sample.cutoff_of(i) == cut && (sample.score()[i] >= cut) == treated)
            .collect();
        let xs: Vec<f64> = rows.iter().map(|&i| sample.score()[i]).collect();
        let ys: Vec<f64> = rows.iter().map(|&i| sample.outcome()[i]).collect();
        fit_at(&xs, &ys, None, at, cfg)
            .map(|f| f.intercept())
            .map_err(|e| invalid(format!("insufficient data for {label} at {at}: {e}")))
    };
    let mu1_c1_x = fit(c1, true, x, "treated mean of the c1 group")?;
    let mu0_c2_x = fit(c2, false, x, "control mean of the c2 group")?;
    let mu0_c1_c1 = fit(c1, false, c1, "control mean of the c1 group")?;
    let mu0_c2_c1 = fit(c2, false, c1, "control mean of the c2 group")?;
    let bias = mu0_c1_c1 - mu0_c2_c1;
    Ok(Extrapolation {
        c1,
        c2,
        x,
        estimate: mu1_c1_x - (mu0_c2_x + bias),
        mu1_c1_x,
        mu0_c2_x,
        mu0_c1_c1,
        mu0_c2_c1,
        bias,
    })
}
