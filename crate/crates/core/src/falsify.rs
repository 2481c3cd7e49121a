//! Falsification checks: covariate balance, placebo cutoffs, sensitivity to
//! smaller windows, and a binomial test of the density of units around the
//! cutoff.

use rayon::prelude::*;
use serde::Serialize;

use crate::error::{invalid, Error, Result};
use crate::multicutoff::{run_engine, Engine};
use crate::randinf::{analyze, RandInfConfig, RandInfResult};
use crate::sample::{RdSample, Window};
use crate::winselect::binomial_density;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BalanceRow {
    pub covariate: String,
    pub mean_minus: f64,
    pub mean_plus: f64,
    pub estimate: f64,
    pub p_value: f64,
    pub n_minus: usize,
    pub n_plus: usize,
    pub note: Option<String>,
}

fn side_means(x: &[f64], v: &[f64], c: f64, half: f64) -> (f64, f64) {
    let (mut sm, mut nm, mut sp, mut np) = (0.0, 0, 0.0, 0);
    for (&xi, &vi) in x.iter().zip(v) {
        if vi.is_nan() || (xi - c).abs() > half {
            continue;
        }
        if xi >= c {
            sp += vi;
            np += 1;
        } else {
            sm += vi;
            nm += 1;
        }
    }
    (sm / nm as f64, sp / np as f64)
}

/// Each covariate analyzed as an outcome with the same engine, at cutoff `c`.
pub fn balance_table(sample: &RdSample, c: f64, covariates: &[String], engine: &Engine) -> Result<Vec<BalanceRow>> {
    let names: Vec<String> = if covariates.is_empty() {
        sample.covariates().iter().map(|cv| cv.name.clone()).collect()
    } else {
        covariates.to_vec()
    };
    if names.is_empty() {
        return Err(Error::Config("no covariates to test".into()));
    }
    let base = sample.with_scalar_cutoff(c);
    let ids: Vec<usize> = (0..sample.len()).collect();
    names
        .par_iter()
        .map(|name| {
            let v = sample
                .covariate(name)
                .ok_or_else(|| Error::Config(format!("unknown covariate `{name}`")))?;
            let s = base.with_outcome(v.to_vec())?;
            let r = run_engine(&s, c, engine, &ids)?;
            let (mean_minus, mean_plus) = side_means(sample.score(), v, c, engine.scale());
            let vals: Vec<f64> = r.sample_ids.iter().map(|&i| v[i]).filter(|x| !x.is_nan()).collect();
            let note = (vals.windows(2).all(|w| w[0] == w[1])).then(|| format!("{name} is constant in the window; p set to 1"));
            Ok(BalanceRow {
                covariate: name.clone(),
                mean_minus,
                mean_plus,
                estimate: r.estimate,
                p_value: if note.is_some() { 1.0 } else { r.p_value },
                n_minus: r.n_minus,
                n_plus: r.n_plus,
                note,
            })
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum PlaceboWindow {
    /// Symmetric window with the half-length of the original window.
    #[default]
    SameLength,
    /// Smallest symmetric window holding at least as many units as the
    /// original window.
    SameN,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PlaceboRow {
    pub cutoff: f64,
    pub window: Window,
    pub result: RandInfResult,
}

/// Outcome analysis at artificial cutoffs, on the treated units only above
/// the true cutoff and on the controls only below it.
pub fn placebo_cutoffs(
    sample: &RdSample,
    true_cutoff: f64,
    w0: &Window,
    placebos: &[f64],
    mode: PlaceboWindow,
    cfg: &RandInfConfig,
) -> Result<Vec<PlaceboRow>> {
    placebos
        .iter()
        .map(|&pc| {
            if pc == true_cutoff {
                return Err(invalid("placebo cutoff equals the true cutoff"));
            }
            let above = pc > true_cutoff;
            let rows: Vec<usize> = (0..sample.len()).filter(|&i| (sample.score()[i] >= true_cutoff) == above).collect();
            if rows.is_empty() {
                return Err(Error::NoData);
            }
            let side = sample.subset(&rows)?.with_scalar_cutoff(pc);
            let half = match mode {
                PlaceboWindow::SameLength => w0.half_length(),
                PlaceboWindow::SameN => {
                    let need = w0.n_total().max(1);
                    let mut d: Vec<f64> = side.score().iter().map(|x| (x - pc).abs()).collect();
                    d.sort_by(f64::total_cmp);
                    if d.len() < need {
                        return Err(invalid(format!(
                            "placebo cutoff {pc}: only {} units on its side, need {need}",
                            d.len()
                        )));
                    }
                    d[need - 1]
                }
            };
            let (lo, hi) = (pc - half, pc + half);
            let crosses = if above { lo <= true_cutoff } else { hi >= true_cutoff };
            if crosses {
                return Err(invalid(format!(
                    "placebo window [{lo}, {hi}] reaches the true cutoff {true_cutoff}"
                )));
            }
            let window = Window::with_bounds(&side, pc, lo, hi)?;
            let wd = side.window_data(&window)?;
            let result = analyze(&wd, &wd.outcome, cfg)?;
            Ok(PlaceboRow {
                cutoff: pc,
                window,
                result,
            })
        })
        .collect()
}

/// Outcome analysis in symmetric windows nested inside the selected one.
pub fn window_sensitivity(sample: &RdSample, w0: &Window, half_lengths: &[f64], cfg: &RandInfConfig) -> Result<Vec<RandInfResult>> {
    let c = w0.center;
    let base = sample.with_scalar_cutoff(c);
    half_lengths
        .iter()
        .map(|&h| {
            if h > w0.half_length() * (1.0 + 1e-12) {
                return Err(invalid(format!(
                    "window half-length {h} exceeds the selected window {}; larger windows \
                     failed or were not tested for balance",
                    w0.half_length()
                )));
            }
            let w = Window::symmetric(&base, c, h)?;
            let wd = base.window_data(&w)?;
            analyze(&wd, &wd.outcome, cfg)
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DensityResult {
    pub window: Window,
    pub q: f64,
    pub p_value: f64,
}

/// Exact binomial test that units fall on either side of the cutoff with
/// probability `q` of being treated.
pub fn density_test(window: &Window, q: f64) -> Result<DensityResult> {
    Ok(DensityResult {
        window: *window,
        q,
        p_value: binomial_density(window.n_plus, window.n_total(), q)?,
    })
}
