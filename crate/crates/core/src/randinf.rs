//! Fisherian randomization inference inside a window.
//!
//! The null distribution of a statistic is obtained by re-assigning treatment
//! according to the assumed mechanism. Small assignment spaces are enumerated
//! exhaustively; larger ones are sampled. Replicate `r` of a Monte Carlo run
//! draws from ChaCha stream `r` under the user seed, so results do not depend
//! on how replicates are scheduled across threads.

use rand::seq::index;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Serialize;

use crate::error::{invalid, Error, Result};
use crate::largesample::{neyman_test, LargeSampleResult};
use crate::sample::WindowData;
use crate::stats::{
    bernoulli_weights, bernoulli_weights_per_unit, diff_means, hotelling_stat, midranks, normalized_kernel_weights, rank_sum_from_ranks,
    Sidedness, StatKind, StatSpec, VarianceKind,
};

/// Assumed assignment distribution inside the window.
#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Mechanism {
    /// All assignments with exactly `n_plus` treated units are equally likely.
    FixedMargins { n_plus: usize },
    /// Independent assignment with unit-level probabilities.
    Bernoulli { p: Vec<f64> },
}

/// How to build a [`Mechanism`] from the observed assignment.
#[derive(Debug, Clone, PartialEq, Default, Serialize)]
#[serde(tag = "kind", content = "p", rename_all = "snake_case")]
pub enum MechanismSpec {
    #[default]
    FixedMargins,
    /// Common success probability.
    Bernoulli(f64),
    /// Success probability equal to the treated share in the window.
    BernoulliObserved,
    BernoulliPerUnit(Vec<f64>),
}

impl MechanismSpec {
    pub fn resolve(&self, t: &[bool]) -> Result<Mechanism> {
        let n = t.len();
        let n_plus = t.iter().filter(|&&v| v).count();
        let mech = match self {
            MechanismSpec::FixedMargins => Mechanism::FixedMargins { n_plus },
            MechanismSpec::Bernoulli(p) => Mechanism::Bernoulli { p: vec![*p; n] },
            MechanismSpec::BernoulliObserved => Mechanism::Bernoulli {
                p: vec![n_plus as f64 / n.max(1) as f64; n],
            },
            MechanismSpec::BernoulliPerUnit(p) => Mechanism::Bernoulli { p: p.clone() },
        };
        mech.validate(n)?;
        Ok(mech)
    }
}

impl Mechanism {
    pub fn validate(&self, n: usize) -> Result<()> {
        match self {
            Mechanism::FixedMargins { n_plus } => {
                if *n_plus == 0 || *n_plus >= n {
                    return Err(invalid(format!(
                        "fixed margins needs 0 < n_plus < N, got n_plus = {n_plus}, N = {n}"
                    )));
                }
            }
            Mechanism::Bernoulli { p } => {
                if p.len() != n {
                    return Err(invalid("Bernoulli probability vector length differs from N"));
                }
                if let Some(bad) = p.iter().find(|&&v| !(v > 0.0 && v < 1.0)) {
                    return Err(invalid(format!("Bernoulli probability {bad} outside (0, 1)")));
                }
            }
        }
        Ok(())
    }
}

/// Number of possible assignment vectors, saturating at `u64::MAX`.
pub fn count_assignments(mech: &Mechanism, n: usize) -> u64 {
    match mech {
        Mechanism::FixedMargins { n_plus } => binomial_coefficient(n, *n_plus),
        Mechanism::Bernoulli { .. } => {
            if n >= 64 {
                u64::MAX
            } else {
                1u64 << n
            }
        }
    }
}

/// `C(n, k)` saturating at `u64::MAX`.
pub fn binomial_coefficient(n: usize, k: usize) -> u64 {
    if k > n {
        return 0;
    }
    let k = k.min(n - k);
    let mut c: u128 = 1;
    for i in 0..k {
        c = c * (n - i) as u128 / (i + 1) as u128;
        if c > u64::MAX as u128 {
            return u64::MAX;
        }
    }
    c as u64
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    Exhaustive,
    MonteCarlo,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct FisherConfig {
    pub n_sims: usize,
    pub seed: u64,
    /// Enumerate when the assignment space has at most this many elements.
    pub exhaust_threshold: u64,
}

impl Default for FisherConfig {
    fn default() -> Self {
        Self {
            n_sims: 1000,
            seed: 0,
            exhaust_threshold: 100_000,
        }
    }
}

impl FisherConfig {
    pub fn with_seed(seed: u64) -> Self {
        Self { seed, ..Self::default() }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FisherResult {
    pub stat_obs: f64,
    pub p_value: f64,
    pub method: Method,
    pub n_draws: u64,
    pub seed: u64,
    pub null_tau: f64,
    /// Bernoulli draws rejected because a group came out empty.
    pub n_redraws: u64,
    pub notes: Vec<String>,
}

/// Response fed to the statistic: one outcome, or a covariate matrix for
/// Hotelling's T².
#[derive(Debug, Clone, Copy)]
enum Response<'a> {
    Single(&'a [f64]),
    Multi(&'a [Vec<f64>]),
}

/// Precomputed pieces that do not change across assignments.
struct Evaluator<'a> {
    spec: &'a StatSpec,
    response: Response<'a>,
    ranks: Option<(Vec<f64>, f64)>,
}

impl<'a> Evaluator<'a> {
    fn new(spec: &'a StatSpec, response: Response<'a>) -> Self {
        let ranks = match (spec.kind, response) {
            (StatKind::RankSum, Response::Single(y)) => Some(midranks(y)),
            _ => None,
        };
        Self { spec, response, ranks }
    }

    fn eval(&self, t: &[bool]) -> Result<f64> {
        match self.response {
            Response::Multi(z) => hotelling_stat(t, z),
            Response::Single(y) => {
                if let Some((ranks, ties)) = &self.ranks {
                    let plus = t.iter().filter(|&&v| v).count();
                    if plus == 0 || plus == t.len() {
                        return Err(Error::EmptyGroup("assignment leaves a group empty".into()));
                    }
                    return Ok(rank_sum_from_ranks(t, ranks, *ties, plus, t.len() - plus));
                }
                self.spec.compute(t, y)
            }
        }
    }

    fn signed(&self) -> bool {
        matches!(self.response, Response::Single(_)) && self.spec.kind.is_signed()
    }
}

/// Whether `s` is at least as extreme as `s_obs`. A relative slack of 1e-9
/// absorbs floating-point noise between assignments that are exact ties.
fn at_least_as_extreme(s: f64, s_obs: f64, signed: bool, side: Sidedness) -> bool {
    let tol = 1e-9 * s_obs.abs();
    if !signed {
        return s >= s_obs - tol;
    }
    match side {
        Sidedness::TwoSided => s.abs() >= s_obs.abs() - tol,
        Sidedness::Right => s >= s_obs - tol,
        Sidedness::Left => s <= s_obs + tol,
    }
}

/// Visit every `k`-subset of `0..n` in lexicographic order as a boolean mask.
fn for_each_combination(n: usize, k: usize, mut f: impl FnMut(&[bool]) -> Result<()>) -> Result<()> {
    let mut idx: Vec<usize> = (0..k).collect();
    let mut mask = vec![false; n];
    loop {
        mask.iter_mut().for_each(|m| *m = false);
        for &i in &idx {
            mask[i] = true;
        }
        f(&mask)?;
        let Some(i) = (0..k).rev().find(|&i| idx[i] < i + n - k) else {
            return Ok(());
        };
        idx[i] += 1;
        for j in i + 1..k {
            idx[j] = idx[j - 1] + 1;
        }
    }
}

const MAX_REDRAWS: u64 = 10_000;

fn replicate_rng(seed: u64, r: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(r);
    rng
}

fn draw_assignment(mech: &Mechanism, n: usize, rng: &mut ChaCha8Rng) -> Result<(Vec<bool>, u64)> {
    match mech {
        Mechanism::FixedMargins { n_plus } => {
            let mut t = vec![false; n];
            for i in index::sample(rng, n, *n_plus) {
                t[i] = true;
            }
            Ok((t, 0))
        }
        Mechanism::Bernoulli { p } => {
            let mut redraws = 0;
            loop {
                let t: Vec<bool> = p.iter().map(|&pi| rng.random::<f64>() < pi).collect();
                let plus = t.iter().filter(|&&v| v).count();
                if plus > 0 && plus < n {
                    return Ok((t, redraws));
                }
                redraws += 1;
                if redraws > MAX_REDRAWS {
                    return Err(invalid(
                        "Bernoulli mechanism keeps producing an empty group; check the probabilities",
                    ));
                }
            }
        }
    }
}

fn run_test(
    t_obs: &[bool],
    response: Response<'_>,
    mech: &Mechanism,
    spec: &StatSpec,
    null_tau: f64,
    cfg: &FisherConfig,
) -> Result<FisherResult> {
    let n = t_obs.len();
    mech.validate(n)?;
    let plus = t_obs.iter().filter(|&&v| v).count();
    if plus == 0 || plus == n {
        return Err(Error::EmptyGroup("observed assignment leaves a group empty".into()));
    }
    if let Mechanism::FixedMargins { n_plus } = mech {
        if *n_plus != plus {
            return Err(invalid(format!(
                "fixed-margins n_plus = {n_plus} differs from the observed {plus} treated units"
            )));
        }
    }
    if cfg.n_sims == 0 {
        return Err(invalid("n_sims must be at least 1"));
    }
    let eval = Evaluator::new(spec, response);
    let stat_obs = eval.eval(t_obs)?;
    let signed = eval.signed();
    let side = spec.sidedness;
    let total = count_assignments(mech, n);
    let mut notes = Vec::new();

    let constant = match response {
        Response::Single(y) => y.iter().all(|&v| v == y[0]),
        Response::Multi(z) => z.iter().all(|c| c.iter().all(|&v| v == c[0])),
    };
    if constant {
        notes.push("adjusted outcomes are constant; every assignment gives the same statistic".into());
        return Ok(FisherResult {
            stat_obs,
            p_value: 1.0,
            method: if total <= cfg.exhaust_threshold {
                Method::Exhaustive
            } else {
                Method::MonteCarlo
            },
            n_draws: 0,
            seed: cfg.seed,
            null_tau,
            n_redraws: 0,
            notes,
        });
    }

    if total <= cfg.exhaust_threshold {
        let p_value = match mech {
            Mechanism::FixedMargins { n_plus } => {
                let mut hits = 0u64;
                let mut count = 0u64;
                for_each_combination(n, *n_plus, |t| {
                    count += 1;
                    if at_least_as_extreme(eval.eval(t)?, stat_obs, signed, side) {
                        hits += 1;
                    }
                    Ok(())
                })?;
                debug_assert_eq!(count, total);
                hits as f64 / count as f64
            }
            Mechanism::Bernoulli { p } => {
                let (mut hit_mass, mut mass) = (0.0, 0.0);
                let mut t = vec![false; n];
                for code in 0u64..total {
                    let mut prob = 1.0;
                    let mut k = 0;
                    for i in 0..n {
                        t[i] = code >> i & 1 == 1;
                        if t[i] {
                            k += 1;
                            prob *= p[i];
                        } else {
                            prob *= 1.0 - p[i];
                        }
                    }
                    if k == 0 || k == n {
                        continue;
                    }
                    mass += prob;
                    if at_least_as_extreme(eval.eval(&t)?, stat_obs, signed, side) {
                        hit_mass += prob;
                    }
                }
                notes.push("Bernoulli enumeration conditions on both groups being nonempty".into());
                (hit_mass / mass).min(1.0)
            }
        };
        return Ok(FisherResult {
            stat_obs,
            p_value,
            method: Method::Exhaustive,
            n_draws: total,
            seed: cfg.seed,
            null_tau,
            n_redraws: 0,
            notes,
        });
    }

    let draws: Vec<(bool, u64)> = (0..cfg.n_sims as u64)
        .into_par_iter()
        .map(|r| {
            let mut rng = replicate_rng(cfg.seed, r);
            let (t, redraws) = draw_assignment(mech, n, &mut rng)?;
            let s = eval.eval(&t)?;
            Ok((at_least_as_extreme(s, stat_obs, signed, side), redraws))
        })
        .collect::<Result<_>>()?;
    let hits = draws.iter().filter(|d| d.0).count();
    let n_redraws: u64 = draws.iter().map(|d| d.1).sum();
    if n_redraws > 0 {
        notes.push(format!("{n_redraws} Bernoulli draw(s) with an empty group were redrawn"));
    }
    Ok(FisherResult {
        stat_obs,
        p_value: (1 + hits) as f64 / (1 + cfg.n_sims) as f64,
        method: Method::MonteCarlo,
        n_draws: cfg.n_sims as u64,
        seed: cfg.seed,
        null_tau,
        n_redraws,
        notes,
    })
}

/// Randomization test of `H0: Y_i(1) = Y_i(0) + null_tau` for every unit.
/// Outcomes are adjusted to `Y_i - T_i null_tau` before computing the
/// statistic.
pub fn fisher_test(t: &[bool], y: &[f64], mech: &Mechanism, stat: &StatSpec, null_tau: f64, cfg: &FisherConfig) -> Result<FisherResult> {
    if t.len() != y.len() {
        return Err(invalid("assignment and outcome lengths differ"));
    }
    if stat.kind == StatKind::Tsls {
        return Err(invalid("the tsls statistic has no finite-sample p-value; use fuzzy::tsls_ratio"));
    }
    let adjusted: Vec<f64> = t.iter().zip(y).map(|(&ti, &yi)| if ti { yi - null_tau } else { yi }).collect();
    run_test(t, Response::Single(&adjusted), mech, stat, null_tau, cfg)
}

/// Omnibus balance test with Hotelling's T² on several covariates.
pub fn fisher_test_hotelling(t: &[bool], z: &[Vec<f64>], mech: &Mechanism, cfg: &FisherConfig) -> Result<FisherResult> {
    let spec = StatSpec::new(StatKind::Hotelling);
    run_test(t, Response::Multi(z), mech, &spec, 0.0, cfg)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GridCI {
    pub grid: Vec<f64>,
    pub alpha: f64,
    pub p_values: Vec<f64>,
    pub accepted: Vec<f64>,
    /// `[min(accepted), max(accepted)]`, absent when nothing is accepted.
    pub interval: Option<(f64, f64)>,
    /// Accepted points form one run of consecutive grid points.
    pub contiguous: bool,
    pub warning: Option<String>,
}

/// Confidence set by inverting constant-effect tests over a grid. Every grid
/// point uses the same seed, so p-values at different points share their
/// random draws.
pub fn invert_ci(t: &[bool], y: &[f64], mech: &Mechanism, stat: &StatSpec, grid: &[f64], alpha: f64, cfg: &FisherConfig) -> Result<GridCI> {
    if grid.is_empty() {
        return Err(invalid("grid must be nonempty"));
    }
    if grid.windows(2).any(|w| !(w[0] < w[1])) {
        return Err(invalid("grid must be strictly ascending"));
    }
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(invalid(format!("alpha {alpha} outside (0, 1)")));
    }
    let p_values: Vec<f64> = grid
        .par_iter()
        .map(|&tau| fisher_test(t, y, mech, stat, tau, cfg).map(|r| r.p_value))
        .collect::<Result<_>>()?;
    let keep: Vec<usize> = (0..grid.len()).filter(|&i| p_values[i] > alpha).collect();
    let accepted: Vec<f64> = keep.iter().map(|&i| grid[i]).collect();
    let contiguous = keep.windows(2).all(|w| w[1] == w[0] + 1);
    let interval = accepted.first().map(|&lo| (lo, *accepted.last().unwrap()));
    let warning = if accepted.is_empty() {
        Some("every grid point is rejected; grid may not bracket the effect".into())
    } else if !contiguous {
        Some("accepted set is not contiguous; reporting its hull".into())
    } else {
        None
    };
    Ok(GridCI {
        grid: grid.to_vec(),
        alpha,
        p_values,
        accepted,
        interval,
        contiguous,
        warning,
    })
}

/// Difference-in-means point estimate, weighted to be unbiased under the
/// assumed mechanism.
pub fn point_estimate(t: &[bool], y: &[f64], mech: &Mechanism) -> Result<f64> {
    match mech {
        Mechanism::FixedMargins { .. } => diff_means(t, y, None),
        Mechanism::Bernoulli { p } => {
            let w = if p.iter().all(|&v| v == p[0]) {
                bernoulli_weights(t, p[0])?
            } else {
                bernoulli_weights_per_unit(t, p)?
            };
            diff_means(t, y, Some(&w))
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Kernel {
    #[default]
    Uniform,
    Triangular,
}

impl std::str::FromStr for Kernel {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Ok(match s.to_ascii_lowercase().as_str() {
            "uniform" => Kernel::Uniform,
            "triangular" => Kernel::Triangular,
            other => return Err(Error::Config(format!("unknown kernel `{other}`"))),
        })
    }
}

/// Settings for a full outcome analysis inside a window.
#[derive(Debug, Clone, PartialEq)]
pub struct RandInfConfig {
    pub mechanism: MechanismSpec,
    pub stat: StatKind,
    pub sidedness: Sidedness,
    pub kernel: Kernel,
    pub null_tau: f64,
    pub fisher: FisherConfig,
    pub variance: VarianceKind,
    pub alpha: f64,
    pub d: Option<f64>,
    pub ci_grid: Option<Vec<f64>>,
}

impl Default for RandInfConfig {
    fn default() -> Self {
        Self {
            mechanism: MechanismSpec::FixedMargins,
            stat: StatKind::DiffMeans,
            sidedness: Sidedness::TwoSided,
            kernel: Kernel::Uniform,
            null_tau: 0.0,
            fisher: FisherConfig::default(),
            variance: VarianceKind::PooledNeyman,
            alpha: 0.05,
            d: None,
            ci_grid: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RandInfResult {
    pub window: (f64, f64),
    pub cutoff: f64,
    pub n_minus: usize,
    pub n_plus: usize,
    pub mean_minus: f64,
    pub mean_plus: f64,
    pub sd_minus: f64,
    pub sd_plus: f64,
    pub statistic: StatKind,
    pub mechanism: Mechanism,
    pub estimate: f64,
    pub fisher: FisherResult,
    /// Gaussian inference for the difference-in-means; absent when a group
    /// has fewer than two units.
    pub large_sample: Option<LargeSampleResult>,
    pub ci: Option<GridCI>,
    pub warnings: Vec<String>,
}

fn mean_sd(v: &[f64]) -> (f64, f64) {
    if v.is_empty() {
        return (f64::NAN, f64::NAN);
    }
    let m = v.iter().sum::<f64>() / v.len() as f64;
    let sd = if v.len() > 1 {
        (v.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (v.len() - 1) as f64).sqrt()
    } else {
        f64::NAN
    };
    (m, sd)
}

/// Outcome analysis in a window on the response `y` (one value per unit of
/// `data`, `NaN` for missing): Fisherian test, point estimate, large-sample
/// inference and, when a grid is configured, a test-inversion interval.
pub fn analyze(data: &WindowData, y: &[f64], cfg: &RandInfConfig) -> Result<RandInfResult> {
    if y.len() != data.len() {
        return Err(invalid("response length differs from window data"));
    }
    let keep: Vec<usize> = (0..y.len()).filter(|&i| !y[i].is_nan()).collect();
    let t: Vec<bool> = keep.iter().map(|&i| data.treated[i]).collect();
    let yy: Vec<f64> = keep.iter().map(|&i| y[i]).collect();
    let mut warnings = Vec::new();
    if keep.len() < y.len() {
        warnings.push(format!("{} unit(s) with missing values excluded", y.len() - keep.len()));
    }
    let mech = cfg.mechanism.resolve(&t)?;
    let mut spec = StatSpec::new(cfg.stat).with_sidedness(cfg.sidedness);
    if cfg.kernel == Kernel::Triangular {
        if cfg.stat == StatKind::DiffMeans {
            let k = data.triangular_kernel();
            let k: Vec<f64> = keep.iter().map(|&i| k[i]).collect();
            spec = spec.with_weights(normalized_kernel_weights(&t, &k)?);
        } else {
            warnings.push("kernel weighting applies to the difference-in-means only; ignored".into());
        }
    }
    let fisher = fisher_test(&t, &yy, &mech, &spec, cfg.null_tau, &cfg.fisher)?;
    let estimate = match &spec.weights {
        Some(w) => diff_means(&t, &yy, Some(w))?,
        None => point_estimate(&t, &yy, &mech)?,
    };
    let plus: Vec<f64> = t.iter().zip(&yy).filter(|(&ti, _)| ti).map(|(_, &v)| v).collect();
    let minus: Vec<f64> = t.iter().zip(&yy).filter(|(&ti, _)| !ti).map(|(_, &v)| v).collect();
    let (mean_plus, sd_plus) = mean_sd(&plus);
    let (mean_minus, sd_minus) = mean_sd(&minus);
    let large_sample = if plus.len() >= 2 && minus.len() >= 2 {
        Some(neyman_test(&t, &yy, cfg.variance, cfg.alpha, cfg.d)?)
    } else {
        warnings.push("fewer than two units in a group; large-sample inference skipped".into());
        None
    };
    let ci = match &cfg.ci_grid {
        Some(grid) => {
            let ci = invert_ci(&t, &yy, &mech, &spec, grid, cfg.alpha, &cfg.fisher)?;
            if let Some(w) = &ci.warning {
                warnings.push(w.clone());
            }
            Some(ci)
        }
        None => None,
    };
    Ok(RandInfResult {
        window: (data.window.lo, data.window.hi),
        cutoff: data.window.center,
        n_minus: minus.len(),
        n_plus: plus.len(),
        mean_minus,
        mean_plus,
        sd_minus,
        sd_plus,
        statistic: cfg.stat,
        mechanism: mech,
        estimate,
        fisher,
        large_sample,
        ci,
        warnings,
    })
}

/// Whether a configuration will take the Monte Carlo path on `n` units with
/// `n_plus` treated.
pub fn needs_simulation(spec: &MechanismSpec, n: usize, n_plus: usize, cfg: &FisherConfig) -> bool {
    let total = match spec {
        MechanismSpec::FixedMargins => binomial_coefficient(n, n_plus),
        _ => count_assignments(&Mechanism::Bernoulli { p: Vec::new() }, n),
    };
    total > cfg.exhaust_threshold
}
