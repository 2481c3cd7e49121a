//! Window selection by covariate balance over nested windows.

use rayon::prelude::*;
use serde::Serialize;
use statrs::function::factorial::ln_binomial;

use crate::error::{invalid, Error, Result};
use crate::randinf::{fisher_test, fisher_test_hotelling, FisherConfig, MechanismSpec};
use crate::sample::{RdSample, Window, WindowData};
use crate::stats::{StatKind, StatSpec};

/// How consecutive windows grow.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
#[serde(tag = "kind", content = "value", rename_all = "snake_case")]
pub enum WindowStep {
    /// Each side gains at least this many units per step.
    ByObs(usize),
    /// Half-length grows by a fixed amount.
    ByLength(f64),
    /// Each side extends to its next distinct score value.
    MassPoints,
}

impl Default for WindowStep {
    fn default() -> Self {
        WindowStep::ByObs(2)
    }
}

/// Scores on each side ordered by distance to the cutoff, nearest first.
struct Sides {
    c: f64,
    minus: Vec<f64>,
    plus: Vec<f64>,
}

impl Sides {
    fn new(sample: &RdSample, c: f64) -> Self {
        let mut minus: Vec<f64> = sample.score().iter().copied().filter(|&x| x < c).collect();
        let mut plus: Vec<f64> = sample.score().iter().copied().filter(|&x| x >= c).collect();
        minus.sort_by(|a, b| b.total_cmp(a));
        plus.sort_by(f64::total_cmp);
        Self { c, minus, plus }
    }

    fn dm(&self, i: usize) -> f64 {
        self.c - self.minus[i]
    }

    fn dp(&self, i: usize) -> f64 {
        self.plus[i] - self.c
    }

    /// Symmetric window of half-length `w`, widened by rounding slack so that
    /// every unit at distance at most `w` is inside.
    fn symmetric(&self, sample: &RdSample, w: f64) -> Result<Window> {
        let km = (0..self.minus.len()).take_while(|&i| self.dm(i) <= w).count();
        let kp = (0..self.plus.len()).take_while(|&i| self.dp(i) <= w).count();
        let mut lo = self.c - w;
        let mut hi = self.c + w;
        if km > 0 {
            lo = lo.min(self.minus[km - 1]);
        }
        if kp > 0 {
            hi = hi.max(self.plus[kp - 1]);
        }
        Window::with_bounds(sample, self.c, lo, hi)
    }
}

fn distinct(v: &[f64]) -> Vec<f64> {
    let mut out: Vec<f64> = Vec::new();
    for &x in v {
        if out.last() != Some(&x) {
            out.push(x);
        }
    }
    out
}

fn scalar_cutoff(sample: &RdSample) -> Result<f64> {
    sample
        .scalar_cutoff()
        .ok_or_else(|| invalid("window selection needs a single cutoff; normalize the score first"))
}

/// Nested windows around the cutoff, smallest first. The first window is the
/// smallest one with at least `obs_min` units on each side (for
/// [`WindowStep::MassPoints`], the smallest pair of mass points reaching
/// `obs_min`).
pub fn window_sequence(sample: &RdSample, step: WindowStep, obs_min: usize, n_windows: usize) -> Result<Vec<Window>> {
    let c = scalar_cutoff(sample)?;
    let d = Sides::new(sample, c);
    let need = obs_min.max(1);
    if d.minus.len() < need || d.plus.len() < need {
        return Err(invalid(format!(
            "need at least {need} units on each side, found {} below and {} above the cutoff",
            d.minus.len(),
            d.plus.len()
        )));
    }
    let mut out = Vec::new();
    if n_windows == 0 {
        return Ok(out);
    }
    match step {
        WindowStep::ByObs(k) => {
            if k == 0 {
                return Err(invalid("by-observation step must be at least 1"));
            }
            let mut w = d.dm(need - 1).max(d.dp(need - 1));
            loop {
                let win = d.symmetric(sample, w)?;
                out.push(win);
                if out.len() == n_windows {
                    break;
                }
                let tm = (win.n_minus + k).min(d.minus.len());
                let tp = (win.n_plus + k).min(d.plus.len());
                let next = d.dm(tm - 1).max(d.dp(tp - 1));
                if next <= w {
                    break;
                }
                w = next;
            }
        }
        WindowStep::ByLength(s) => {
            if !(s > 0.0 && s.is_finite()) {
                return Err(invalid("window length step must be positive"));
            }
            let w0 = d.dm(need - 1).max(d.dp(need - 1));
            let reach = d.dm(d.minus.len() - 1).max(d.dp(d.plus.len() - 1));
            for j in 0..n_windows {
                let w = w0 + j as f64 * s;
                out.push(d.symmetric(sample, w)?);
                if w >= reach {
                    break;
                }
            }
        }
        WindowStep::MassPoints => {
            let vm = distinct(&d.minus);
            let vp = distinct(&d.plus);
            let first = |all: &[f64], uniq: &[f64]| {
                let r = all[need - 1];
                uniq.iter().position(|&v| v == r).unwrap()
            };
            let (jm, jp) = (first(&d.minus, &vm), first(&d.plus, &vp));
            for j in 0..n_windows {
                if jm + j >= vm.len() && jp + j >= vp.len() {
                    break;
                }
                let lo = vm[(jm + j).min(vm.len() - 1)];
                let hi = vp[(jp + j).min(vp.len() - 1)];
                out.push(Window::with_bounds(sample, c, lo, hi)?);
            }
        }
    }
    Ok(out)
}

/// Exact two-sided binomial test of `k` successes in `n` trials with success
/// probability `q`: the total probability of outcomes no more likely than
/// the observed one.
pub fn binomial_density(k: usize, n: usize, q: f64) -> Result<f64> {
    if k > n {
        return Err(invalid(format!("successes {k} exceed trials {n}")));
    }
    if !(q > 0.0 && q < 1.0) {
        return Err(invalid(format!("success probability {q} outside (0, 1)")));
    }
    let ln_pmf = |i: usize| ln_binomial(n as u64, i as u64) + i as f64 * q.ln() + (n - i) as f64 * (1.0 - q).ln();
    let obs = ln_pmf(k);
    // relative slack so that exact ties in probability count as equal
    let bound = obs + (1.0 + 1e-7f64).ln();
    let p: f64 = (0..=n).map(ln_pmf).filter(|&l| l <= bound).map(f64::exp).sum();
    Ok(p.min(1.0))
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct WindowScanRow {
    pub window: Window,
    pub min_p: f64,
    pub argmin_covariate: String,
    pub binomial_p: f64,
    pub n_minus: usize,
    pub n_plus: usize,
    pub notes: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct WindowScan {
    pub rows: Vec<WindowScanRow>,
    pub selected: Option<Window>,
    pub alpha_star: f64,
    pub obs_min: usize,
    pub step: WindowStep,
    pub statistic: StatKind,
    pub warnings: Vec<String>,
}

impl WindowScan {
    /// `(half-length, min_p)` pairs for plotting balance against window size.
    pub fn plot_points(&self) -> Vec<(f64, f64)> {
        self.rows.iter().map(|r| (r.window.half_length(), r.min_p)).collect()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScanConfig {
    /// Covariate names to test; empty means every covariate in the sample.
    pub covariates: Vec<String>,
    pub mechanism: MechanismSpec,
    pub stat: StatKind,
    pub step: WindowStep,
    pub obs_min: usize,
    pub alpha_star: f64,
    pub n_windows: usize,
    pub fisher: FisherConfig,
}

impl Default for ScanConfig {
    fn default() -> Self {
        Self {
            covariates: Vec::new(),
            mechanism: MechanismSpec::FixedMargins,
            stat: StatKind::DiffMeans,
            step: WindowStep::default(),
            obs_min: 10,
            alpha_star: 0.15,
            n_windows: 20,
            fisher: FisherConfig::default(),
        }
    }
}

/// Index of the largest window whose own row and every smaller row have
/// `min_p > alpha_star`.
pub fn select_index(min_p: &[f64], alpha_star: f64) -> Option<usize> {
    let passing = min_p.iter().take_while(|&&p| p > alpha_star).count();
    passing.checked_sub(1)
}

struct CovTest {
    name: String,
    p: f64,
    note: Option<String>,
}

fn balance_test(wd: &WindowData, name: &str, values: &[f64], cfg: &ScanConfig) -> Result<CovTest> {
    let (t, v) = wd.complete_cases(values);
    let plus = t.iter().filter(|&&b| b).count();
    if plus == 0 || plus == t.len() {
        return Ok(CovTest {
            name: name.into(),
            p: 1.0,
            note: Some(format!("{name}: no complete cases on one side; p set to 1")),
        });
    }
    if v.iter().all(|&x| x == v[0]) {
        return Ok(CovTest {
            name: name.into(),
            p: 1.0,
            note: Some(format!("{name}: constant within window; p set to 1")),
        });
    }
    if matches!(cfg.mechanism, MechanismSpec::BernoulliPerUnit(_)) {
        return Err(invalid("per-unit Bernoulli probabilities are not supported in a window scan"));
    }
    let mech = cfg.mechanism.resolve(&t)?;
    let r = fisher_test(&t, &v, &mech, &StatSpec::new(cfg.stat), 0.0, &cfg.fisher)?;
    Ok(CovTest {
        name: name.into(),
        p: r.p_value,
        note: None,
    })
}

fn omnibus_test(wd: &WindowData, names: &[String], cfg: &ScanConfig) -> Result<CovTest> {
    let cols: Vec<&[f64]> = names
        .iter()
        .map(|n| wd.covariate(n).ok_or_else(|| Error::Config(format!("unknown covariate `{n}`"))))
        .collect::<Result<_>>()?;
    let keep: Vec<usize> = (0..wd.len()).filter(|&i| cols.iter().all(|c| !c[i].is_nan())).collect();
    let t: Vec<bool> = keep.iter().map(|&i| wd.treated[i]).collect();
    let z: Vec<Vec<f64>> = cols.iter().map(|c| keep.iter().map(|&i| c[i]).collect()).collect();
    let label = "hotelling".to_string();
    let plus = t.iter().filter(|&&b| b).count();
    if plus < 2 || t.len() - plus < 2 || t.len() <= names.len() + 1 {
        return Ok(CovTest {
            name: label,
            p: 1.0,
            note: Some("too few complete cases for Hotelling's T²; p set to 1".into()),
        });
    }
    let mech = cfg.mechanism.resolve(&t)?;
    let r = fisher_test_hotelling(&t, &z, &mech, &cfg.fisher)?;
    Ok(CovTest {
        name: label,
        p: r.p_value,
        note: None,
    })
}

fn scan_row(sample: &RdSample, window: Window, names: &[String], cfg: &ScanConfig) -> Result<WindowScanRow> {
    let wd = sample.window_data(&window)?;
    let tests: Vec<CovTest> = if cfg.stat == StatKind::Hotelling {
        vec![omnibus_test(&wd, names, cfg)?]
    } else {
        names
            .iter()
            .map(|n| {
                let v = wd.covariate(n).ok_or_else(|| Error::Config(format!("unknown covariate `{n}`")))?;
                balance_test(&wd, n, v, cfg)
            })
            .collect::<Result<_>>()?
    };
    let best = tests.iter().min_by(|a, b| a.p.total_cmp(&b.p)).expect("at least one covariate");
    Ok(WindowScanRow {
        window,
        min_p: best.p,
        argmin_covariate: best.name.clone(),
        binomial_p: binomial_density(window.n_plus, window.n_total(), 0.5)?,
        n_minus: window.n_minus,
        n_plus: window.n_plus,
        notes: tests.iter().filter_map(|t| t.note.clone()).collect(),
    })
}

/// Balance scan over nested windows and selection of the largest window in
/// which balance is not rejected there or in any smaller window.
pub fn scan(sample: &RdSample, cfg: &ScanConfig) -> Result<WindowScan> {
    if !(cfg.alpha_star > 0.0 && cfg.alpha_star < 1.0) {
        return Err(invalid(format!("alpha_star {} outside (0, 1)", cfg.alpha_star)));
    }
    let names: Vec<String> = if cfg.covariates.is_empty() {
        sample.covariates().iter().map(|c| c.name.clone()).collect()
    } else {
        cfg.covariates.clone()
    };
    if names.is_empty() {
        return Err(Error::Config("window selection needs at least one covariate".into()));
    }
    for n in &names {
        if sample.covariate(n).is_none() {
            return Err(Error::Config(format!("unknown covariate `{n}`")));
        }
    }
    let windows = window_sequence(sample, cfg.step, cfg.obs_min, cfg.n_windows)?;
    let rows: Vec<WindowScanRow> = windows
        .into_par_iter()
        .map(|w| scan_row(sample, w, &names, cfg))
        .collect::<Result<_>>()?;
    let min_p: Vec<f64> = rows.iter().map(|r| r.min_p).collect();
    let selected = select_index(&min_p, cfg.alpha_star).map(|i| rows[i].window);
    let mut warnings = Vec::new();
    if selected.is_none() && !rows.is_empty() {
        warnings.push(format!(
            "balance is rejected in the smallest window (min p = {:.3}); no window selected",
            rows[0].min_p
        ));
    } else if selected.is_some() && min_p.iter().all(|&p| p > cfg.alpha_star) {
        warnings.push("balance never rejected in the scanned range; consider more windows".into());
    }
    Ok(WindowScan {
        rows,
        selected,
        alpha_star: cfg.alpha_star,
        obs_min: cfg.obs_min,
        step: cfg.step,
        statistic: cfg.stat,
        warnings,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sample::Cutoff;
    use approx::assert_relative_eq;
    use proptest::prelude::*;

    fn grid_sample(n_side: usize) -> RdSample {
        let score: Vec<f64> = (1..=n_side)
            .flat_map(|i| [-(i as f64) / 10.0, (i as f64 - 1.0) / 10.0 + 0.05])
            .collect();
        let y = vec![0.0; score.len()];
        RdSample::new(score, y, Cutoff::Scalar(0.0)).unwrap()
    }

    #[test]
    fn by_obs_grows_each_side() {
        let s = grid_sample(40);
        let w = window_sequence(&s, WindowStep::ByObs(2), 10, 20).unwrap();
        assert_eq!((w[0].n_minus, w[0].n_plus), (10, 10));
        assert_relative_eq!(w[0].hi, 1.0);
        for pair in w.windows(2) {
            assert!(pair[1].half_length() > pair[0].half_length());
            assert!(pair[1].n_minus >= pair[0].n_minus + 2 || pair[1].n_minus == 40);
            assert!(pair[1].n_plus >= pair[0].n_plus + 2 || pair[1].n_plus == 40);
        }
        assert_eq!(w.len(), 16);
    }

    #[test]
    fn by_length_is_arithmetic() {
        let s = grid_sample(40);
        let w = window_sequence(&s, WindowStep::ByLength(0.1), 5, 4).unwrap();
        let h: Vec<f64> = w.iter().map(|w| w.half_length()).collect();
        assert_relative_eq!(h[0], 0.5, epsilon = 1e-12);
        for j in 1..4 {
            assert_relative_eq!(h[j] - h[j - 1], 0.1, epsilon = 1e-12);
        }
    }

    #[test]
    fn mass_points_expand_one_value_at_a_time() {
        let score = vec![-0.2, -0.2, -0.1, -0.1, -0.1, 0.0, 0.0, 0.1, 0.2, 0.2];
        let s = RdSample::new(score, vec![0.0; 10], Cutoff::Scalar(0.0)).unwrap();
        let w = window_sequence(&s, WindowStep::MassPoints, 1, 10).unwrap();
        assert_eq!(w.len(), 3);
        assert_eq!((w[0].lo, w[0].hi, w[0].n_minus, w[0].n_plus), (-0.1, 0.0, 3, 2));
        assert_eq!((w[1].n_minus, w[1].n_plus), (5, 3));
        assert_eq!((w[2].n_minus, w[2].n_plus), (5, 5));
    }

    #[test]
    fn too_few_units() {
        let s = grid_sample(5);
        assert!(window_sequence(&s, WindowStep::ByObs(2), 10, 20).is_err());
    }

    #[test]
    fn binomial_cases() {
        assert_relative_eq!(binomial_density(25, 41, 0.5).unwrap(), 0.211, epsilon = 1e-3);
        assert_relative_eq!(binomial_density(10, 20, 0.5).unwrap(), 1.0, epsilon = 1e-12);
        assert!(binomial_density(67, 275, 0.5).unwrap() < 1e-15);
        assert!(binomial_density(3, 2, 0.5).is_err());
    }

    #[test]
    fn selection_rules() {
        assert_eq!(select_index(&[0.5, 0.4, 0.2, 0.1, 0.9], 0.15), Some(2));
        assert_eq!(select_index(&[0.1, 0.9], 0.15), None);
        assert_eq!(select_index(&[0.9, 0.8], 0.15), Some(1));
        assert_eq!(select_index(&[], 0.15), None);
    }

    #[test]
    fn constant_covariate_gets_p_one() {
        let s = grid_sample(20).with_covariate("z", vec![1.0; 40]).unwrap();
        let cfg = ScanConfig {
            n_windows: 2,
            ..ScanConfig::default()
        };
        let r = scan(&s, &cfg).unwrap();
        assert!(r.rows.iter().all(|row| row.min_p == 1.0));
        assert!(r.rows[0].notes[0].contains("constant"));
        assert_eq!(r.selected, Some(r.rows[1].window));
    }

    #[test]
    fn imbalanced_covariate_is_rejected_early() {
        let s = grid_sample(30);
        let z: Vec<f64> = s.score().iter().map(|&x| if x >= 0.0 { 10.0 + x } else { x }).collect();
        let s = s.with_covariate("z", z).unwrap();
        let cfg = ScanConfig {
            n_windows: 3,
            fisher: FisherConfig {
                n_sims: 200,
                seed: 1,
                exhaust_threshold: 100_000,
            },
            ..ScanConfig::default()
        };
        let r = scan(&s, &cfg).unwrap();
        assert!(r.selected.is_none());
        assert!(r.warnings[0].contains("smallest window"));
    }

    proptest! {
        #[test]
        fn selection_ignores_windows_after_first_rejection(
            ps in prop::collection::vec(0.0f64..1.0, 1..30),
            extra in prop::collection::vec(0.0f64..1.0, 0..10),
        ) {
            let a = 0.15;
            let full = select_index(&ps, a);
            if let Some(first_reject) = ps.iter().position(|&p| p <= a) {
                let truncated = &ps[..=first_reject];
                prop_assert_eq!(select_index(truncated, a), full);
                let mut longer = truncated.to_vec();
                longer.extend(&extra);
                prop_assert_eq!(select_index(&longer, a), full);
            }
        }
    }
}
