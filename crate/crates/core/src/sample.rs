//! Canonical data model: unit-level scores, outcomes, cutoffs and covariates,
//! plus the score transforms used before an analysis (normalization, sign
//! flip, collapse-by-value) and mass-point diagnostics for discrete scores.
//!
//! Treatment assignment is never stored. It is always derived as
//! `score >= cutoff`, so a unit sitting exactly at the cutoff is treated.

use serde::Serialize;

use crate::error::{invalid, Error, Result};

/// Cutoff faced by the units: one value for everybody, or one per unit.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub enum Cutoff {
    Scalar(f64),
    PerUnit(Vec<f64>),
}

/// A named covariate column. Missing values are stored as `NaN`.
#[derive(Debug, Clone, PartialEq)]
pub struct Covariate {
    pub name: String,
    pub values: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RdSample {
    score: Vec<f64>,
    outcome: Vec<f64>,
    received: Option<Vec<f64>>,
    cutoff: Cutoff,
    covariates: Vec<Covariate>,
    score2: Option<Vec<f64>>,
    weights: Option<Vec<f64>>,
    dropped: usize,
}

fn check_len(what: &str, got: usize, want: usize) -> Result<()> {
    if got != want {
        return Err(invalid(format!("{what} has length {got}, expected {want}")));
    }
    Ok(())
}

impl RdSample {
    pub fn new(score: Vec<f64>, outcome: Vec<f64>, cutoff: Cutoff) -> Result<Self> {
        if score.is_empty() {
            return Err(Error::NoData);
        }
        check_len("outcome", outcome.len(), score.len())?;
        if let Cutoff::PerUnit(c) = &cutoff {
            check_len("cutoff column", c.len(), score.len())?;
            if c.iter().any(|v| !v.is_finite()) {
                return Err(invalid("per-unit cutoffs must be finite"));
            }
        }
        if score.iter().chain(outcome.iter()).any(|v| !v.is_finite()) {
            return Err(invalid("score and outcome must be finite"));
        }
        Ok(Self {
            score,
            outcome,
            received: None,
            cutoff,
            covariates: Vec::new(),
            score2: None,
            weights: None,
            dropped: 0,
        })
    }

    /// Attach the treatment actually received (`D_i`), which must be binary.
    pub fn with_received(mut self, d: Vec<f64>) -> Result<Self> {
        check_len("treatment received", d.len(), self.len())?;
        if let Some(bad) = d.iter().find(|&&v| v != 0.0 && v != 1.0) {
            return Err(invalid(format!("treatment received must be 0 or 1, found {bad}")));
        }
        self.received = Some(d);
        Ok(self)
    }

    pub fn with_covariate(mut self, name: impl Into<String>, values: Vec<f64>) -> Result<Self> {
        let name = name.into();
        check_len(&format!("covariate {name}"), values.len(), self.len())?;
        if self.covariates.iter().any(|c| c.name == name) {
            return Err(invalid(format!("duplicate covariate {name}")));
        }
        self.covariates.push(Covariate { name, values });
        Ok(self)
    }

    pub fn with_score2(mut self, score2: Vec<f64>) -> Result<Self> {
        check_len("second score", score2.len(), self.len())?;
        self.score2 = Some(score2);
        Ok(self)
    }

    /// Per-row frequency weights (set by [`RdSample::collapse_by_score`]).
    pub fn with_weights(mut self, weights: Vec<f64>) -> Result<Self> {
        check_len("weights", weights.len(), self.len())?;
        if weights.iter().any(|w| !w.is_finite() || *w < 0.0) {
            return Err(invalid("weights must be finite and nonnegative"));
        }
        self.weights = Some(weights);
        Ok(self)
    }

    pub fn with_dropped(mut self, dropped: usize) -> Self {
        self.dropped = dropped;
        self
    }

    pub fn len(&self) -> usize {
        self.score.len()
    }

    pub fn is_empty(&self) -> bool {
        self.score.is_empty()
    }

    pub fn score(&self) -> &[f64] {
        &self.score
    }

    pub fn outcome(&self) -> &[f64] {
        &self.outcome
    }

    pub fn received(&self) -> Option<&[f64]> {
        self.received.as_deref()
    }

    pub fn cutoff(&self) -> &Cutoff {
        &self.cutoff
    }

    pub fn covariates(&self) -> &[Covariate] {
        &self.covariates
    }

    pub fn covariate(&self, name: &str) -> Option<&[f64]> {
        self.covariates.iter().find(|c| c.name == name).map(|c| c.values.as_slice())
    }

    pub fn score2(&self) -> Option<&[f64]> {
        self.score2.as_deref()
    }

    pub fn weights(&self) -> Option<&[f64]> {
        self.weights.as_deref()
    }

    /// Rows removed at ingestion because the score or outcome was missing.
    pub fn dropped(&self) -> usize {
        self.dropped
    }

    pub fn cutoff_of(&self, i: usize) -> f64 {
        match &self.cutoff {
            Cutoff::Scalar(c) => *c,
            Cutoff::PerUnit(c) => c[i],
        }
    }

    pub fn scalar_cutoff(&self) -> Option<f64> {
        match self.cutoff {
            Cutoff::Scalar(c) => Some(c),
            Cutoff::PerUnit(_) => None,
        }
    }

    pub fn is_treated(&self, i: usize) -> bool {
        self.score[i] >= self.cutoff_of(i)
    }

    /// Assignment vector `T_i = 1(X_i >= c_i)`.
    pub fn assignment(&self) -> Vec<bool> {
        (0..self.len()).map(|i| self.is_treated(i)).collect()
    }

    /// Copy of the sample restricted to the given rows, in the given order.
    pub fn subset(&self, rows: &[usize]) -> Result<Self> {
        if rows.is_empty() {
            return Err(Error::NoData);
        }
        let pick = |v: &[f64]| rows.iter().map(|&i| v[i]).collect::<Vec<_>>();
        Ok(Self {
            score: pick(&self.score),
            outcome: pick(&self.outcome),
            received: self.received.as_deref().map(pick),
            cutoff: match &self.cutoff {
                Cutoff::Scalar(c) => Cutoff::Scalar(*c),
                Cutoff::PerUnit(c) => Cutoff::PerUnit(pick(c)),
            },
            covariates: self
                .covariates
                .iter()
                .map(|c| Covariate {
                    name: c.name.clone(),
                    values: pick(&c.values),
                })
                .collect(),
            score2: self.score2.as_deref().map(pick),
            weights: self.weights.as_deref().map(pick),
            dropped: 0,
        })
    }

    /// Same units and columns, with `outcome` replaced.
    pub fn with_outcome(&self, outcome: Vec<f64>) -> Result<Self> {
        check_len("outcome", outcome.len(), self.len())?;
        let mut out = self.clone();
        out.outcome = outcome;
        Ok(out)
    }

    /// Same units with a scalar cutoff substituted for the current one.
    pub fn with_scalar_cutoff(&self, c: f64) -> Self {
        let mut out = self.clone();
        out.cutoff = Cutoff::Scalar(c);
        out
    }

    /// Recenter every score at its own cutoff: `X~_i = X_i - C_i`, cutoff 0.
    pub fn normalize_score(&self) -> Self {
        let mut out = self.clone();
        if let Cutoff::Scalar(c) = self.cutoff {
            if c == 0.0 {
                return out;
            }
        }
        out.score = (0..self.len()).map(|i| self.score[i] - self.cutoff_of(i)).collect();
        out.cutoff = Cutoff::Scalar(0.0);
        out
    }

    /// Reverse the direction of the score so that the side *below* the cutoff
    /// becomes the treated side. Units exactly at the cutoff, who are not
    /// treated in the original coding, are moved to `-c - epsilon` so that
    /// `1(X~ >= -c)` keeps them in the control group.
    pub fn flip_score(&self, epsilon: f64) -> Result<Self> {
        if !(epsilon > 0.0) {
            return Err(invalid("epsilon must be positive"));
        }
        let mut out = self.clone();
        out.score = (0..self.len())
            .map(|i| {
                let c = self.cutoff_of(i);
                if self.score[i] == c {
                    -c - epsilon
                } else {
                    -self.score[i]
                }
            })
            .collect();
        out.cutoff = match &self.cutoff {
            Cutoff::Scalar(c) => Cutoff::Scalar(-c),
            Cutoff::PerUnit(c) => Cutoff::PerUnit(c.iter().map(|v| -v).collect()),
        };
        Ok(out)
    }

    /// Rows sorted by (cutoff, score) and grouped into runs of equal values.
    fn value_groups(&self) -> Vec<Vec<usize>> {
        let mut idx: Vec<usize> = (0..self.len()).collect();
        idx.sort_by(|&a, &b| {
            self.cutoff_of(a)
                .total_cmp(&self.cutoff_of(b))
                .then(norm_zero(self.score[a]).total_cmp(&norm_zero(self.score[b])))
        });
        let mut groups: Vec<Vec<usize>> = Vec::new();
        for i in idx {
            match groups.last_mut() {
                Some(g) if self.score[g[0]] == self.score[i] && self.cutoff_of(g[0]) == self.cutoff_of(i) => g.push(i),
                _ => groups.push(vec![i]),
            }
        }
        groups
    }

    /// One row per distinct score value (per cutoff, if cutoffs vary), with
    /// the mean outcome at that value and a frequency weight equal to the
    /// number of units collapsed. Treatment received and the second score
    /// are not carried over.
    pub fn collapse_by_score(&self) -> Self {
        let groups = self.value_groups();
        let w = |i: usize| self.weights.as_ref().map_or(1.0, |w| w[i]);
        let wmean = |g: &[usize], v: &[f64]| -> f64 {
            let (mut s, mut n) = (0.0, 0.0);
            for &i in g {
                if !v[i].is_nan() {
                    s += w(i) * v[i];
                    n += w(i);
                }
            }
            if n > 0.0 {
                s / n
            } else {
                f64::NAN
            }
        };
        let score = groups.iter().map(|g| self.score[g[0]]).collect();
        let outcome = groups.iter().map(|g| wmean(g, &self.outcome)).collect();
        let weights = groups.iter().map(|g| g.iter().map(|&i| w(i)).sum()).collect();
        let cutoff = match &self.cutoff {
            Cutoff::Scalar(c) => Cutoff::Scalar(*c),
            Cutoff::PerUnit(_) => Cutoff::PerUnit(groups.iter().map(|g| self.cutoff_of(g[0])).collect()),
        };
        let covariates = self
            .covariates
            .iter()
            .map(|c| Covariate {
                name: c.name.clone(),
                values: groups.iter().map(|g| wmean(g, &c.values)).collect(),
            })
            .collect();
        Self {
            score,
            outcome,
            received: None,
            cutoff,
            covariates,
            score2: None,
            weights: Some(weights),
            dropped: self.dropped,
        }
    }

    /// Count units per distinct score value and locate the smallest window
    /// around the cutoff: the closest control mass point and the closest
    /// treated mass point.
    pub fn mass_point_summary(&self) -> MassPointSummary {
        let base = match self.cutoff {
            Cutoff::Scalar(_) => self.clone(),
            Cutoff::PerUnit(_) => self.normalize_score(),
        };
        let c = base.scalar_cutoff().unwrap_or(0.0);
        let mut idx: Vec<usize> = (0..base.len()).collect();
        idx.sort_by(|&a, &b| norm_zero(base.score[a]).total_cmp(&norm_zero(base.score[b])));
        let mut per_value: Vec<MassPoint> = Vec::new();
        let mut take_up: Vec<f64> = Vec::new();
        for i in idx {
            let share = match &base.received {
                Some(d) => d[i],
                None => f64::from(u8::from(base.score[i] >= c)),
            };
            match per_value.last_mut() {
                Some(mp) if mp.value == base.score[i] => {
                    mp.count += 1;
                    *take_up.last_mut().unwrap() += share;
                }
                _ => {
                    per_value.push(MassPoint {
                        value: base.score[i],
                        count: 1,
                        treated_share: 0.0,
                    });
                    take_up.push(share);
                }
            }
        }
        for (mp, s) in per_value.iter_mut().zip(&take_up) {
            mp.treated_share = s / mp.count as f64;
        }
        let below = per_value.iter().rfind(|m| m.value < c);
        let above = per_value.iter().find(|m| m.value >= c);
        let (smallest_window, note) = match (below, above) {
            (Some(b), Some(a)) => (
                Some(SmallestWindow {
                    control_value: b.value,
                    treated_value: a.value,
                    n_control: b.count,
                    n_treated: a.count,
                }),
                None,
            ),
            _ => (
                None,
                Some("score is constant on one side of the cutoff; smallest window undefined".to_string()),
            ),
        };
        MassPointSummary {
            distinct_values: per_value.len(),
            per_value,
            smallest_window,
            note,
        }
    }

    /// Units inside `window`, with assignment relative to the window center.
    pub fn window_data(&self, window: &Window) -> Result<WindowData> {
        let rows: Vec<usize> = (0..self.len()).filter(|&i| window.contains(self.score[i])).collect();
        if rows.is_empty() {
            return Err(Error::NoObservations {
                lo: window.lo,
                hi: window.hi,
            });
        }
        Ok(WindowData::from_rows(self, window, rows))
    }
}

fn norm_zero(v: f64) -> f64 {
    if v == 0.0 {
        0.0
    } else {
        v
    }
}

/// Interval `[lo, hi]` around a cutoff with the unit counts on each side.
/// Both endpoints are included.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Window {
    pub center: f64,
    pub lo: f64,
    pub hi: f64,
    pub n_minus: usize,
    pub n_plus: usize,
}

impl Window {
    pub fn symmetric(sample: &RdSample, center: f64, half_length: f64) -> Result<Self> {
        if !(half_length >= 0.0) || !half_length.is_finite() {
            return Err(invalid("window half-length must be finite and nonnegative"));
        }
        Self::with_bounds(sample, center, center - half_length, center + half_length)
    }

    pub fn with_bounds(sample: &RdSample, center: f64, lo: f64, hi: f64) -> Result<Self> {
        if !(lo <= center && center <= hi) {
            return Err(invalid(format!("window [{lo}, {hi}] must contain its center {center}")));
        }
        let (n_minus, n_plus) = Self::count(sample.score(), center, lo, hi);
        Ok(Self {
            center,
            lo,
            hi,
            n_minus,
            n_plus,
        })
    }

    pub fn count(score: &[f64], center: f64, lo: f64, hi: f64) -> (usize, usize) {
        let minus = score.iter().filter(|&&x| lo <= x && x < center).count();
        let plus = score.iter().filter(|&&x| center <= x && x <= hi).count();
        (minus, plus)
    }

    pub fn half_length(&self) -> f64 {
        (self.hi - self.lo) / 2.0
    }

    pub fn n_total(&self) -> usize {
        self.n_minus + self.n_plus
    }

    pub fn contains(&self, x: f64) -> bool {
        self.lo <= x && x <= self.hi
    }
}

/// The units of a sample that fall inside a window.
#[derive(Debug, Clone, PartialEq)]
pub struct WindowData {
    pub window: Window,
    pub treated: Vec<bool>,
    pub outcome: Vec<f64>,
    pub score: Vec<f64>,
    pub received: Option<Vec<f64>>,
    pub covariates: Vec<Covariate>,
    /// Row indices into the originating sample.
    pub rows: Vec<usize>,
}

impl WindowData {
    fn from_rows(sample: &RdSample, window: &Window, rows: Vec<usize>) -> Self {
        let pick = |v: &[f64]| rows.iter().map(|&i| v[i]).collect::<Vec<_>>();
        Self {
            window: *window,
            treated: rows.iter().map(|&i| sample.score[i] >= window.center).collect(),
            outcome: pick(&sample.outcome),
            score: pick(&sample.score),
            received: sample.received.as_deref().map(pick),
            covariates: sample
                .covariates
                .iter()
                .map(|c| Covariate {
                    name: c.name.clone(),
                    values: pick(&c.values),
                })
                .collect(),
            rows,
        }
    }

    /// Build window data directly from an assignment and outcome vector.
    pub fn from_assignment(treated: Vec<bool>, outcome: Vec<f64>) -> Result<Self> {
        check_len("outcome", outcome.len(), treated.len())?;
        if treated.is_empty() {
            return Err(Error::NoData);
        }
        let n_plus = treated.iter().filter(|&&t| t).count();
        let score = treated.iter().map(|&t| if t { 0.5 } else { -0.5 }).collect();
        Ok(Self {
            window: Window {
                center: 0.0,
                lo: -0.5,
                hi: 0.5,
                n_minus: treated.len() - n_plus,
                n_plus,
            },
            rows: (0..treated.len()).collect(),
            treated,
            outcome,
            score,
            received: None,
            covariates: Vec::new(),
        })
    }

    pub fn with_received(mut self, d: Vec<f64>) -> Result<Self> {
        check_len("treatment received", d.len(), self.len())?;
        self.received = Some(d);
        Ok(self)
    }

    pub fn len(&self) -> usize {
        self.treated.len()
    }

    pub fn is_empty(&self) -> bool {
        self.treated.is_empty()
    }

    pub fn n_plus(&self) -> usize {
        self.treated.iter().filter(|&&t| t).count()
    }

    pub fn n_minus(&self) -> usize {
        self.len() - self.n_plus()
    }

    pub fn covariate(&self, name: &str) -> Option<&[f64]> {
        self.covariates.iter().find(|c| c.name == name).map(|c| c.values.as_slice())
    }

    /// Assignment and values restricted to the rows where `values` is not
    /// missing (pairwise deletion).
    pub fn complete_cases(&self, values: &[f64]) -> (Vec<bool>, Vec<f64>) {
        self.treated
            .iter()
            .zip(values)
            .filter(|(_, v)| !v.is_nan())
            .map(|(&t, &v)| (t, v))
            .unzip()
    }

    /// Triangular kernel weights `1 - |x - c| / w` with `w` the larger
    /// distance from the center to a window edge.
    pub fn triangular_kernel(&self) -> Vec<f64> {
        let w = (self.window.center - self.window.lo).max(self.window.hi - self.window.center);
        self.score
            .iter()
            .map(|x| {
                if w > 0.0 {
                    (1.0 - (x - self.window.center).abs() / w).max(0.0)
                } else {
                    1.0
                }
            })
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MassPoint {
    pub value: f64,
    pub count: usize,
    /// Share of units at this value that are treated (received treatment
    /// when `D` is present, assigned otherwise).
    pub treated_share: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct SmallestWindow {
    pub control_value: f64,
    pub treated_value: f64,
    pub n_control: usize,
    pub n_treated: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MassPointSummary {
    pub distinct_values: usize,
    pub per_value: Vec<MassPoint>,
    pub smallest_window: Option<SmallestWindow>,
    pub note: Option<String>,
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample(score: &[f64], c: f64) -> RdSample {
        let y = score.iter().map(|x| x * 2.0).collect();
        RdSample::new(score.to_vec(), y, Cutoff::Scalar(c)).unwrap()
    }

    #[test]
    fn unit_at_cutoff_is_treated() {
        let s = RdSample::new(vec![57.0, 40.75], vec![0.0, 1.0], Cutoff::PerUnit(vec![57.21, 40.75])).unwrap();
        let n = s.normalize_score();
        assert!((n.score()[0] - (57.0 - 57.21)).abs() < 1e-12);
        assert!((n.score()[0] + 0.21).abs() < 1e-9);
        assert_eq!(n.score()[1], 0.0);
        assert_eq!(n.cutoff(), &Cutoff::Scalar(0.0));
        assert_eq!(n.assignment(), vec![false, true]);
        assert_eq!(s.assignment(), n.assignment());
    }

    #[test]
    fn normalize_with_zero_scalar_cutoff_is_identity() {
        let s = sample(&[-1.0, 0.5, 2.0], 0.0);
        assert_eq!(s.normalize_score(), s);
    }

    #[test]
    fn flip_reproduces_probation_coding() {
        let s = sample(&[-0.2, 0.0, 1.0, -3.0], 0.0);
        let f = s.flip_score(0.000005).unwrap();
        assert_eq!(f.score()[0], 0.2);
        assert!(f.is_treated(0));
        assert_eq!(f.score()[1], -0.000005);
        assert!(!f.is_treated(1));
        assert_eq!(f.score()[2], -1.0);
        // treated after flip = strictly below the cutoff before
        let before = s.score().iter().filter(|&&x| x < 0.0).count();
        assert_eq!(f.assignment().iter().filter(|&&t| t).count(), before);
        assert!(s.flip_score(0.0).is_err());
    }

    #[test]
    fn flip_twice_restores_assignment() {
        let s = sample(&[-2.0, -0.0, 0.0, 0.3, 5.0, -1e-9], 0.0);
        let ff = s.flip_score(1e-6).unwrap().flip_score(1e-6).unwrap();
        assert_eq!(ff.assignment(), s.assignment());
    }

    #[test]
    fn collapse_pairs_and_distinct() {
        let s = RdSample::new(vec![1.0, 1.0], vec![0.0, 2.0], Cutoff::Scalar(0.0)).unwrap();
        let c = s.collapse_by_score();
        assert_eq!(c.score(), &[1.0]);
        assert_eq!(c.outcome(), &[1.0]);
        assert_eq!(c.weights(), Some(&[2.0][..]));

        let d = sample(&[3.0, -1.0, 2.0], 0.0);
        let cd = d.collapse_by_score();
        assert_eq!(cd.score(), &[-1.0, 2.0, 3.0]);
        assert_eq!(cd.outcome(), &[-2.0, 4.0, 6.0]);
    }

    #[test]
    fn mass_points_direct_count() {
        let s = sample(&[-1.0, -1.0, 0.0, 0.0], 0.0);
        let m = s.mass_point_summary();
        assert_eq!(m.distinct_values, 2);
        assert_eq!(m.per_value.iter().map(|p| p.count).collect::<Vec<_>>(), vec![2, 2]);
        let w = m.smallest_window.unwrap();
        assert_eq!((w.control_value, w.treated_value), (-1.0, 0.0));
        assert_eq!((w.n_control, w.n_treated), (2, 2));
    }

    #[test]
    fn mass_points_distinct_scores() {
        let xs: Vec<f64> = (0..100).map(|i| f64::from(i) / 10.0 - 5.05).collect();
        let m = sample(&xs, 0.0).mass_point_summary();
        assert_eq!(m.distinct_values, 100);
        assert_eq!(m.per_value.iter().map(|p| p.count).sum::<usize>(), 100);
    }

    #[test]
    fn one_sided_smallest_window_flagged() {
        let m = sample(&[1.0, 2.0], 0.0).mass_point_summary();
        assert!(m.smallest_window.is_none());
        assert!(m.note.is_some());
    }

    #[test]
    fn window_counts_are_closed() {
        let s = sample(&[-1.0, -0.5, 0.0, 0.5, 1.0, 1.5], 0.0);
        let w = Window::symmetric(&s, 0.0, 1.0).unwrap();
        assert_eq!((w.n_minus, w.n_plus), (2, 3));
        let d = s.window_data(&w).unwrap();
        assert_eq!(d.len(), 5);
        assert_eq!(d.treated, vec![false, false, true, true, true]);
        assert!(Window::with_bounds(&s, 0.0, 0.5, 1.0).is_err());
    }

    #[test]
    fn ingestion_invariants() {
        assert!(matches!(RdSample::new(vec![], vec![], Cutoff::Scalar(0.0)), Err(Error::NoData)));
        let s = sample(&[1.0, 2.0], 0.0);
        assert!(s.clone().with_received(vec![0.0, 0.5]).is_err());
        assert!(s.clone().with_received(vec![0.0, 1.0]).is_ok());
        assert!(s.with_covariate("z", vec![1.0]).is_err());
    }
}
