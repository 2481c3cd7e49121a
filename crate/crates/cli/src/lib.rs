//! Command-line front end for `rdlocal`: argument parsing, dispatch, human
//! tables and versioned JSON output.

use std::ffi::OsString;
use std::fmt::Write as _;
use std::fs::File;
use std::io::Write;
use std::path::PathBuf;
use std::str::FromStr;

use clap::error::ErrorKind;
use clap::{Args, Parser, Subcommand};
use serde::Serialize;
use serde_json::Value;

use rdlocal::falsify::{
    balance_table, density_test, placebo_cutoffs, window_sensitivity, BalanceRow, DensityResult, PlaceboRow, PlaceboWindow,
};
use rdlocal::fuzzy::{fisher_constant_effect_test, itt, tsls_ratio, FuzzyResult, OutcomeRole};
use rdlocal::io::{load_csv, parse_grid, parse_list, parse_point, read_boundary_csv, read_cutoffs_csv, ColumnMap, CsvOptions, Role};
use rdlocal::localpoly::{rdplot_data, sharp_effect, BinRule, LocalFitConfig, LpVariance, RdPlotData, SharpEffect};
use rdlocal::multicutoff::{
    by_cutoff, by_cutoff_cumulative, compare_cutoffs, extrapolate_constant_bias, pool, pooled_weights, run_engine, split_cumulative,
    ByCutoff, Comparison, CumulativeSplit, CutoffResult, CutoffWeight, Engine, Extrapolation, PooledResult, SplitRule,
};
use rdlocal::multiscore::{
    analyze_points, assign_both_at_least, boundary_grid_report, signed_distance_to_boundary, BoundarySpec, Densify, GridReportRow, Metric,
    Point, PointResult,
};
use rdlocal::randinf::{analyze, needs_simulation, FisherResult, Mechanism, RandInfResult};
use rdlocal::winselect::{scan, window_sequence, ScanConfig, WindowScan, WindowStep};
use rdlocal::{FisherConfig, Kernel, MechanismSpec, RandInfConfig, RdSample, Sidedness, StatKind, VarianceKind, Window};

/// Version of the JSON layout written by `--out-json`.
pub const SCHEMA_VERSION: u32 = 1;

pub const EXIT_OK: i32 = 0;
pub const EXIT_ANALYSIS: i32 = 1;
pub const EXIT_USAGE: i32 = 2;

#[derive(Debug)]
pub enum CliError {
    Usage(String),
    Analysis(String),
}

impl From<rdlocal::Error> for CliError {
    fn from(e: rdlocal::Error) -> Self {
        CliError::Analysis(e.to_string())
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Analysis(e.to_string())
    }
}

fn usage(msg: impl Into<String>) -> CliError {
    CliError::Usage(msg.into())
}

#[derive(Parser, Debug)]
#[command(name = "rdlocal", version, about = "Regression discontinuity analysis under local randomization")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Randomization inference in a window around the cutoff.
    Randinf(RandinfArgs),
    /// Covariate-balance window selection. Never reports outcome effects.
    Winselect(WinselectArgs),
    /// Fuzzy designs: ratio estimate, first stage, intention-to-treat.
    Fuzzy(FuzzyArgs),
    /// Multiple cutoffs: per-cutoff, pooled, compared, cumulative.
    Mc(McArgs),
    /// Two-dimensional and geographic scores.
    Ms(MsArgs),
    /// Binomial test of the treated share in a window.
    Density(DensityArgs),
    /// Balance tables, placebo cutoffs, window sensitivity.
    Falsify(FalsifyArgs),
    /// Binned means and global polynomial fits.
    Plot(PlotArgs),
    /// Local polynomial estimate with a fixed bandwidth.
    Lp(LpArgs),
}

#[derive(Args, Debug, Clone)]
pub struct Common {
    /// Input CSV with a header row.
    #[arg(long)]
    pub input: PathBuf,
    /// Column role, e.g. `demmv=score`; repeatable.
    #[arg(long = "map", value_name = "COL=ROLE")]
    pub map: Vec<String>,
    #[arg(long)]
    pub out_json: Option<PathBuf>,
    #[arg(long)]
    pub out_csv: Option<PathBuf>,
    /// Worker threads; defaults to the number of CPUs.
    #[arg(long)]
    pub threads: Option<usize>,
    /// Cutoff when no column carries the cutoff role.
    #[arg(long, default_value_t = 0.0, allow_negative_numbers = true)]
    pub cutoff: f64,
    #[arg(long, default_value_t = ',')]
    pub delimiter: char,
}

#[derive(Args, Debug, Clone)]
pub struct WindowArgs {
    /// Left end of the window.
    #[arg(long, allow_negative_numbers = true)]
    pub wl: Option<f64>,
    /// Right end of the window.
    #[arg(long, allow_negative_numbers = true)]
    pub wr: Option<f64>,
}

#[derive(Args, Debug, Clone)]
pub struct RandArgs {
    /// diffmeans, ks, ranksum or hotelling.
    #[arg(long, default_value = "diffmeans")]
    pub statistic: String,
    /// fixed or bernoulli.
    #[arg(long, default_value = "fixed")]
    pub mechanism: String,
    /// Bernoulli success probability; defaults to the treated share.
    #[arg(long)]
    pub bernoulli_p: Option<f64>,
    /// two_sided, right or left.
    #[arg(long, default_value = "two_sided")]
    pub sided: String,
    /// uniform or triangular weights for difference-in-means.
    #[arg(long, default_value = "uniform")]
    pub kernel: String,
    #[arg(long, default_value_t = 1000)]
    pub nsims: usize,
    /// Required whenever the randomization distribution is simulated.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Enumerate all assignments up to this many.
    #[arg(long, default_value_t = 100_000)]
    pub exhaust_threshold: u64,
    /// Significance level for tests and confidence intervals.
    #[arg(long, default_value_t = 0.05)]
    pub level: f64,
    /// neyman, hc2 or hc3.
    #[arg(long, default_value = "neyman")]
    pub variance: String,
}

#[derive(Args, Debug, Clone)]
pub struct EngineArgs {
    /// lr (local randomization) or lp (local polynomial).
    #[arg(long, default_value = "lr")]
    pub engine: String,
    /// Window half-length or bandwidth.
    #[arg(long)]
    pub h: f64,
    /// Local polynomial order.
    #[arg(long, default_value_t = 1)]
    pub p: usize,
    #[arg(long, default_value = "triangular")]
    pub lp_kernel: String,
    /// hc2, hc3 or cluster.
    #[arg(long, default_value = "hc2")]
    pub lp_variance: String,
}

#[derive(Args, Debug)]
pub struct RandinfArgs {
    #[command(flatten)]
    pub common: Common,
    #[command(flatten)]
    pub window: WindowArgs,
    #[command(flatten)]
    pub rand: RandArgs,
    /// Constant effect under the null.
    #[arg(long, default_value_t = 0.0, allow_negative_numbers = true)]
    pub nulltau: f64,
    /// Confidence-interval grid `lo:hi:step`.
    #[arg(long, allow_hyphen_values = true)]
    pub ci_grid: Option<String>,
    /// Alternative for the power calculation.
    #[arg(long, allow_negative_numbers = true)]
    pub d: Option<f64>,
}

#[derive(Args, Debug)]
pub struct WinselectArgs {
    #[command(flatten)]
    pub common: Common,
    #[command(flatten)]
    pub rand: RandArgs,
    /// Covariates to test, comma separated.
    #[arg(long, value_delimiter = ',')]
    pub covariates: Vec<String>,
    /// Add this many units per side at each step.
    #[arg(long, conflicts_with_all = ["wstep", "masspoints"])]
    pub wobs: Option<usize>,
    /// Widen the half-length by this much at each step.
    #[arg(long, conflicts_with = "masspoints")]
    pub wstep: Option<f64>,
    /// Add one mass point per side at each step.
    #[arg(long)]
    pub masspoints: bool,
    #[arg(long, default_value_t = 10)]
    pub obsmin: usize,
    #[arg(long, default_value_t = 0.15)]
    pub alpha_star: f64,
    #[arg(long, default_value_t = 20)]
    pub nwindows: usize,
    /// CSV of `(half_length, min_p)` points.
    #[arg(long)]
    pub plot_out: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct FuzzyArgs {
    #[command(flatten)]
    pub common: Common,
    #[command(flatten)]
    pub window: WindowArgs,
    #[command(flatten)]
    pub rand: RandArgs,
    /// Column holding the treatment received.
    #[arg(long)]
    pub treatment_received: Option<String>,
    /// Ratio estimate with delta-method inference (default).
    #[arg(long)]
    pub tsls: bool,
    /// Randomization analysis of take-up.
    #[arg(long)]
    pub first_stage: bool,
    /// Randomization analysis of the outcome.
    #[arg(long)]
    pub itt: bool,
    /// Randomization test of a constant effect of the treatment received.
    #[arg(long, allow_negative_numbers = true)]
    pub gamma: Option<f64>,
}

#[derive(Args, Debug)]
pub struct McArgs {
    #[command(flatten)]
    pub common: Common,
    #[command(flatten)]
    pub engine: EngineArgs,
    #[command(flatten)]
    pub rand: RandArgs,
    /// Column holding each unit's cutoff.
    #[arg(long)]
    pub cutoff_col: Option<String>,
    /// CSV listing the cutoffs every unit faces.
    #[arg(long)]
    pub cutoffs: Option<PathBuf>,
    #[arg(long)]
    pub pooled: bool,
    /// Report the weights implied by pooling.
    #[arg(long)]
    pub weights: bool,
    /// Band for the pooling weights; defaults to `--h`.
    #[arg(long)]
    pub weights_h: Option<f64>,
    /// Test equal effects at two cutoffs, `c1,c2`.
    #[arg(long, allow_hyphen_values = true)]
    pub compare: Option<String>,
    /// Every unit faces all cutoffs in `--cutoffs`.
    #[arg(long)]
    pub cumulative: bool,
    /// midpoint or median.
    #[arg(long, default_value = "midpoint")]
    pub split: String,
    /// Constant-bias extrapolation `c1,c2,x`.
    #[arg(long, allow_hyphen_values = true)]
    pub extrapolate: Option<String>,
}

#[derive(Args, Debug)]
pub struct MsArgs {
    #[command(flatten)]
    pub common: Common,
    #[command(flatten)]
    pub engine: EngineArgs,
    #[command(flatten)]
    pub rand: RandArgs,
    /// Column holding the second score (longitude for geographic data).
    #[arg(long)]
    pub score2: Option<String>,
    /// CSV of boundary points.
    #[arg(long)]
    pub boundary_file: Option<PathBuf>,
    /// Boundary point `a,b`; repeatable.
    #[arg(long = "point", allow_hyphen_values = true)]
    pub points: Vec<String>,
    /// euclidean, great_circle or chordal.
    #[arg(long, default_value = "euclidean")]
    pub metric: String,
    /// Sphere radius for spherical metrics; defaults to the Earth's, in km.
    #[arg(long)]
    pub radius: Option<f64>,
    /// Analyze the signed distance to the whole boundary.
    #[arg(long)]
    pub nearest: bool,
    /// project, none or a step length.
    #[arg(long, default_value = "project")]
    pub densify: String,
    /// Treat units with both scores at or above `a,b`.
    #[arg(long, allow_hyphen_values = true)]
    pub assign_at: Option<String>,
    /// Column holding the 0/1 treatment assignment.
    #[arg(long)]
    pub treated_col: Option<String>,
    /// Count units within this distance of each boundary point.
    #[arg(long)]
    pub grid_radius: Option<f64>,
    #[arg(long, default_value_t = 10)]
    pub min_count: usize,
}

#[derive(Args, Debug)]
pub struct DensityArgs {
    #[command(flatten)]
    pub common: Common,
    #[command(flatten)]
    pub window: WindowArgs,
    /// Probability of falling above the cutoff under the null.
    #[arg(long, default_value_t = 0.5)]
    pub q: f64,
}

#[derive(Args, Debug)]
pub struct FalsifyArgs {
    #[command(flatten)]
    pub common: Common,
    #[command(flatten)]
    pub window: WindowArgs,
    #[command(flatten)]
    pub rand: RandArgs,
    /// Covariate balance in the window.
    #[arg(long)]
    pub balance: bool,
    #[arg(long, value_delimiter = ',')]
    pub covariates: Vec<String>,
    /// Placebo cutoffs, comma separated.
    #[arg(long, allow_hyphen_values = true)]
    pub placebos: Option<String>,
    /// same_length or same_n.
    #[arg(long, default_value = "same_length")]
    pub placebo_window: String,
    /// Smaller half-lengths, comma separated.
    #[arg(long)]
    pub sensitivity: Option<String>,
}

#[derive(Args, Debug)]
pub struct PlotArgs {
    #[command(flatten)]
    pub common: Common,
    /// Bins per side, `n` or `left,right`.
    #[arg(long, default_value = "20")]
    pub bins: String,
    /// Order of the global polynomial.
    #[arg(long, default_value_t = 4)]
    pub poly: usize,
    /// es (evenly spaced) or qs (quantile).
    #[arg(long, default_value = "es")]
    pub bin_rule: String,
    #[arg(long)]
    pub svg_out: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct LpArgs {
    #[command(flatten)]
    pub common: Common,
    #[arg(long)]
    pub h: f64,
    #[arg(long, default_value_t = 1)]
    pub p: usize,
    #[arg(long, default_value = "triangular")]
    pub lp_kernel: String,
    #[arg(long, default_value = "hc2")]
    pub lp_variance: String,
    #[arg(long, default_value_t = 0.05)]
    pub level: f64,
    /// Fit to one row per distinct score, weighted by counts.
    #[arg(long)]
    pub collapse: bool,
}

/// Rendered result of one subcommand.
pub struct Output {
    pub text: String,
    pub json: Value,
    pub csv: Option<String>,
}

#[derive(Serialize)]
struct Envelope<'a> {
    schema_version: u32,
    command: &'a str,
    rows_dropped: usize,
    result: &'a Value,
}

/// Parse `args` (program name first), run, and return the exit code.
pub fn run<I, T>(args: I, out: &mut dyn Write, err: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let informational = matches!(e.kind(), ErrorKind::DisplayHelp | ErrorKind::DisplayVersion);
            let text = e.render().to_string();
            if informational {
                let _ = write!(out, "{text}");
                return EXIT_OK;
            }
            let _ = write!(err, "{text}");
            return EXIT_USAGE;
        }
    };
    match execute(&cli) {
        Ok(text) => match out.write_all(text.as_bytes()) {
            Ok(()) => EXIT_OK,
            Err(_) => EXIT_ANALYSIS,
        },
        Err(CliError::Usage(m)) => {
            let _ = writeln!(err, "error: {m}");
            EXIT_USAGE
        }
        Err(CliError::Analysis(m)) => {
            let _ = writeln!(err, "error: {m}");
            EXIT_ANALYSIS
        }
    }
}

fn common(cmd: &Command) -> &Common {
    match cmd {
        Command::Randinf(a) => &a.common,
        Command::Winselect(a) => &a.common,
        Command::Fuzzy(a) => &a.common,
        Command::Mc(a) => &a.common,
        Command::Ms(a) => &a.common,
        Command::Density(a) => &a.common,
        Command::Falsify(a) => &a.common,
        Command::Plot(a) => &a.common,
        Command::Lp(a) => &a.common,
    }
}

fn name(cmd: &Command) -> &'static str {
    match cmd {
        Command::Randinf(_) => "randinf",
        Command::Winselect(_) => "winselect",
        Command::Fuzzy(_) => "fuzzy",
        Command::Mc(_) => "mc",
        Command::Ms(_) => "ms",
        Command::Density(_) => "density",
        Command::Falsify(_) => "falsify",
        Command::Plot(_) => "plot",
        Command::Lp(_) => "lp",
    }
}

fn execute(cli: &Cli) -> Result<String, CliError> {
    let c = common(&cli.command);
    let (output, dropped) = match c.threads {
        Some(0) => return Err(usage("--threads must be at least 1")),
        Some(n) => rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build()
            .map_err(|e| CliError::Analysis(e.to_string()))?
            .install(|| dispatch(&cli.command))?,
        None => dispatch(&cli.command)?,
    };
    if let Some(path) = &c.out_json {
        let env = Envelope {
            schema_version: SCHEMA_VERSION,
            command: name(&cli.command),
            rows_dropped: dropped,
            result: &output.json,
        };
        let mut text = serde_json::to_string_pretty(&env).map_err(|e| CliError::Analysis(e.to_string()))?;
        text.push('\n');
        std::fs::write(path, text)?;
    }
    if let (Some(path), Some(csv)) = (&c.out_csv, &output.csv) {
        std::fs::write(path, csv)?;
    }
    let mut text = output.text;
    if dropped > 0 {
        let _ = writeln!(text, "{dropped} row(s) with missing values dropped");
    }
    Ok(text)
}

fn dispatch(cmd: &Command) -> Result<(Output, usize), CliError> {
    match cmd {
        Command::Randinf(a) => cmd_randinf(a),
        Command::Winselect(a) => cmd_winselect(a),
        Command::Fuzzy(a) => cmd_fuzzy(a),
        Command::Mc(a) => cmd_mc(a),
        Command::Ms(a) => cmd_ms(a),
        Command::Density(a) => cmd_density(a),
        Command::Falsify(a) => cmd_falsify(a),
        Command::Plot(a) => cmd_plot(a),
        Command::Lp(a) => cmd_lp(a),
    }
}

fn parse<T: FromStr<Err = rdlocal::Error>>(s: &str) -> Result<T, CliError> {
    s.parse().map_err(|e: rdlocal::Error| usage(e.to_string()))
}

fn load(c: &Common, extra: &[(&str, Role)], outcome_optional: bool) -> Result<RdSample, CliError> {
    let mut map = ColumnMap::new();
    for spec in &c.map {
        map.insert_spec(spec).map_err(|e| usage(e.to_string()))?;
    }
    for &(col, role) in extra {
        map.insert(col, role);
    }
    if !c.delimiter.is_ascii() {
        return Err(usage("delimiter must be a single ASCII character"));
    }
    let opts = CsvOptions {
        delimiter: c.delimiter as u8,
        cutoff: c.cutoff,
        outcome_optional,
    };
    if !c.input.exists() {
        return Err(CliError::Analysis(format!("cannot read {}", c.input.display())));
    }
    Ok(load_csv(&c.input, &map, &opts)?)
}

fn scalar_cutoff(s: &RdSample) -> Result<f64, CliError> {
    s.scalar_cutoff()
        .ok_or_else(|| usage("the sample has a cutoff column; use `mc` for several cutoffs"))
}

fn window(s: &RdSample, w: &WindowArgs) -> Result<Window, CliError> {
    let c = scalar_cutoff(s)?;
    match (w.wl, w.wr) {
        (Some(lo), Some(hi)) => Window::with_bounds(s, c, lo, hi).map_err(|e| usage(e.to_string())),
        (None, None) => {
            let lo = s.score().iter().copied().fold(f64::INFINITY, f64::min).min(c);
            let hi = s.score().iter().copied().fold(f64::NEG_INFINITY, f64::max).max(c);
            Ok(Window::with_bounds(s, c, lo, hi)?)
        }
        _ => Err(usage("give both --wl and --wr, or neither for the full sample")),
    }
}

fn mechanism(r: &RandArgs) -> Result<MechanismSpec, CliError> {
    match r.mechanism.to_ascii_lowercase().as_str() {
        "fixed" | "fixed_margins" | "fixedmargins" => {
            if r.bernoulli_p.is_some() {
                return Err(usage("--bernoulli-p needs --mechanism bernoulli"));
            }
            Ok(MechanismSpec::FixedMargins)
        }
        "bernoulli" => Ok(r.bernoulli_p.map_or(MechanismSpec::BernoulliObserved, MechanismSpec::Bernoulli)),
        other => Err(usage(format!("unknown mechanism `{other}`"))),
    }
}

fn fisher(r: &RandArgs) -> Result<FisherConfig, CliError> {
    if r.nsims == 0 {
        return Err(usage("--nsims must be positive"));
    }
    Ok(FisherConfig {
        n_sims: r.nsims,
        seed: r.seed.unwrap_or(0),
        exhaust_threshold: r.exhaust_threshold,
    })
}

fn rand_config(r: &RandArgs) -> Result<RandInfConfig, CliError> {
    if !(r.level > 0.0 && r.level < 1.0) {
        return Err(usage("--level must lie in (0, 1)"));
    }
    Ok(RandInfConfig {
        mechanism: mechanism(r)?,
        stat: parse::<StatKind>(&r.statistic)?,
        sidedness: parse::<Sidedness>(&r.sided)?,
        kernel: parse::<Kernel>(&r.kernel)?,
        fisher: fisher(r)?,
        variance: parse::<VarianceKind>(&r.variance)?,
        alpha: r.level,
        ..RandInfConfig::default()
    })
}

fn engine(e: &EngineArgs, r: &RandArgs) -> Result<Engine, CliError> {
    if !(e.h > 0.0) {
        return Err(usage("--h must be positive"));
    }
    match e.engine.to_ascii_lowercase().as_str() {
        "lr" | "localrand" | "local_randomization" => Ok(Engine::LocalRand {
            half_window: e.h,
            config: rand_config(r)?,
        }),
        "lp" | "localpoly" | "local_polynomial" => Ok(Engine::LocalPoly {
            config: lp_config(e.p, e.h, &e.lp_kernel, &e.lp_variance)?,
            alpha: r.level,
        }),
        other => Err(usage(format!("unknown engine `{other}`"))),
    }
}

fn lp_config(p: usize, h: f64, kernel: &str, variance: &str) -> Result<LocalFitConfig, CliError> {
    Ok(LocalFitConfig::new(p, h)
        .with_kernel(parse::<Kernel>(kernel)?)
        .with_variance(parse::<LpVariance>(variance)?))
}

fn simulated(v: &Value) -> bool {
    match v {
        Value::Object(m) => m.iter().any(|(k, x)| (k == "method" && x == "monte_carlo") || simulated(x)),
        Value::Array(a) => a.iter().any(simulated),
        _ => false,
    }
}

/// Serialize `result`, refusing it when a randomization distribution was
/// simulated without an explicit seed.
fn to_json<T: Serialize>(result: &T, seed: Option<u64>) -> Result<Value, CliError> {
    let v = serde_json::to_value(result).map_err(|e| CliError::Analysis(e.to_string()))?;
    if seed.is_none() && simulated(&v) {
        return Err(usage(
            "--seed is required: the randomization distribution is simulated for this window (raise --exhaust-threshold to enumerate instead)",
        ));
    }
    Ok(v)
}

fn label<T: Serialize>(v: &T) -> String {
    match serde_json::to_value(v) {
        Ok(Value::String(s)) => s,
        Ok(other) => other.to_string(),
        Err(_) => String::new(),
    }
}

fn mech_label(m: &Mechanism) -> String {
    match m {
        Mechanism::FixedMargins { n_plus } => format!("fixed margins ({n_plus} treated)"),
        Mechanism::Bernoulli { p } => {
            let first = p.first().copied().unwrap_or(f64::NAN);
            if p.iter().all(|&q| q == first) {
                format!("Bernoulli (p = {first:.3})")
            } else {
                "Bernoulli (unit-specific p)".to_string()
            }
        }
    }
}

fn fisher_line(f: &FisherResult) -> String {
    format!(
        "{:.3} ({}, {} draws{})",
        f.p_value,
        label(&f.method).replace('_', " "),
        f.n_draws,
        if label(&f.method) == "monte_carlo" {
            format!(", seed {}", f.seed)
        } else {
            String::new()
        }
    )
}

fn render_randinf(r: &RandInfResult, title: &str) -> String {
    let mut s = String::new();
    let _ = writeln!(s, "{title}");
    let _ = writeln!(s, "Cutoff c = {}   window [{}, {}]", r.cutoff, r.window.0, r.window.1);
    let _ = writeln!(s, "Mechanism: {}", mech_label(&r.mechanism));
    let _ = writeln!(s, "{:<24}{:>14}{:>14}", "", "Left of c", "Right of c");
    let _ = writeln!(s, "{:<24}{:>14}{:>14}", "Number of obs", r.n_minus, r.n_plus);
    let _ = writeln!(s, "{:<24}{:>14.3}{:>14.3}", "Mean of response", r.mean_minus, r.mean_plus);
    let _ = writeln!(s, "{:<24}{:>14.3}{:>14.3}", "Std. dev. of response", r.sd_minus, r.sd_plus);
    let _ = writeln!(s, "Statistic ({}): {:.3}", label(&r.statistic), r.fisher.stat_obs);
    let _ = writeln!(s, "Point estimate: {:.3}", r.estimate);
    let _ = writeln!(s, "Null effect: {}", r.fisher.null_tau);
    let _ = writeln!(s, "Finite-sample p-value: {}", fisher_line(&r.fisher));
    if let Some(ls) = &r.large_sample {
        let _ = writeln!(
            s,
            "Large-sample: estimate {:.3}, p-value {:.3}, {:.0}% CI [{:.3}, {:.3}], power vs d = {:.3}: {:.3}",
            ls.estimate,
            ls.p_value,
            100.0 * (1.0 - ls.alpha),
            ls.ci.0,
            ls.ci.1,
            ls.d,
            ls.power_at_d
        );
    }
    if let Some(ci) = &r.ci {
        match ci.interval {
            Some((lo, hi)) => {
                let _ = writeln!(s, "Randomization {:.0}% CI: [{lo:.3}, {hi:.3}]", 100.0 * (1.0 - ci.alpha));
            }
            None => {
                let _ = writeln!(s, "Randomization {:.0}% CI: no grid value accepted", 100.0 * (1.0 - ci.alpha));
            }
        }
        if let Some(w) = &ci.warning {
            let _ = writeln!(s, "warning: {w}");
        }
    }
    for w in r.warnings.iter().chain(&r.fisher.notes) {
        let _ = writeln!(s, "note: {w}");
    }
    s
}

fn cmd_randinf(a: &RandinfArgs) -> Result<(Output, usize), CliError> {
    let s = load(&a.common, &[], false)?;
    let w = window(&s, &a.window)?;
    let mut cfg = rand_config(&a.rand)?;
    cfg.null_tau = a.nulltau;
    cfg.d = a.d;
    cfg.ci_grid = a.ci_grid.as_deref().map(parse_grid).transpose().map_err(|e| usage(e.to_string()))?;
    let wd = s.window_data(&w)?;
    let r = analyze(&wd, &wd.outcome, &cfg)?;
    let json = to_json(&r, a.rand.seed)?;
    let csv = r.ci.as_ref().map(|ci| {
        let mut t = String::from("tau,p_value,accepted\n");
        for (tau, p) in ci.grid.iter().zip(&ci.p_values) {
            let _ = writeln!(t, "{tau},{p},{}", ci.accepted.contains(tau));
        }
        t
    });
    Ok((
        Output {
            text: render_randinf(&r, "Randomization inference"),
            json,
            csv,
        },
        s.dropped(),
    ))
}

fn cmd_winselect(a: &WinselectArgs) -> Result<(Output, usize), CliError> {
    let extra: Vec<(&str, Role)> = a.covariates.iter().map(|c| (c.as_str(), Role::Covariate)).collect();
    let s = load(&a.common, &extra, true)?;
    scalar_cutoff(&s)?;
    let step = match (a.wobs, a.wstep, a.masspoints) {
        (Some(k), _, _) => WindowStep::ByObs(k),
        (_, Some(l), _) => WindowStep::ByLength(l),
        (_, _, true) => WindowStep::MassPoints,
        _ => WindowStep::default(),
    };
    let cfg = ScanConfig {
        covariates: a.covariates.clone(),
        mechanism: mechanism(&a.rand)?,
        stat: parse::<StatKind>(&a.rand.statistic)?,
        step,
        obs_min: a.obsmin,
        alpha_star: a.alpha_star,
        n_windows: a.nwindows,
        fisher: fisher(&a.rand)?,
    };
    if a.rand.seed.is_none() {
        let ws = window_sequence(&s, step, a.obsmin, a.nwindows)?;
        if ws
            .iter()
            .any(|w| needs_simulation(&cfg.mechanism, w.n_total(), w.n_plus, &cfg.fisher))
        {
            return Err(usage("--seed is required: some windows have too many assignments to enumerate"));
        }
    }
    let r: WindowScan = scan(&s, &cfg)?;
    let mut text = String::new();
    let _ = writeln!(
        text,
        "Window selection: {} covariate test, alpha* = {}",
        label(&r.statistic),
        r.alpha_star
    );
    let _ = writeln!(
        text,
        "{:>12}{:>12}{:>8}{:>8}{:>10}{:>12}  {}",
        "lo", "hi", "n-", "n+", "min p", "binom p", "covariate"
    );
    for row in &r.rows {
        let _ = writeln!(
            text,
            "{:>12.4}{:>12.4}{:>8}{:>8}{:>10.3}{:>12.3}  {}",
            row.window.lo, row.window.hi, row.n_minus, row.n_plus, row.min_p, row.binomial_p, row.argmin_covariate
        );
    }
    match &r.selected {
        Some(w) => {
            let _ = writeln!(
                text,
                "Selected window: [{:.4}, {:.4}] ({} left, {} right)",
                w.lo, w.hi, w.n_minus, w.n_plus
            );
        }
        None => {
            let _ = writeln!(text, "No window passes: balance is rejected in the smallest window");
        }
    }
    for w in &r.warnings {
        let _ = writeln!(text, "note: {w}");
    }
    if let Some(path) = &a.plot_out {
        let mut t = String::from("half_length,min_p\n");
        for (h, p) in r.plot_points() {
            let _ = writeln!(t, "{h},{p}");
        }
        std::fs::write(path, t)?;
    }
    let mut csv = String::from("lo,hi,n_minus,n_plus,min_p,argmin_covariate,binomial_p\n");
    for row in &r.rows {
        let _ = writeln!(
            csv,
            "{},{},{},{},{},{},{}",
            row.window.lo, row.window.hi, row.n_minus, row.n_plus, row.min_p, row.argmin_covariate, row.binomial_p
        );
    }
    let json = serde_json::to_value(&r).map_err(|e| CliError::Analysis(e.to_string()))?;
    Ok((
        Output {
            text,
            json,
            csv: Some(csv),
        },
        s.dropped(),
    ))
}

#[derive(Serialize)]
struct FuzzyOut {
    #[serde(skip_serializing_if = "Option::is_none")]
    tsls: Option<FuzzyResult>,
    #[serde(skip_serializing_if = "Option::is_none")]
    first_stage: Option<RandInfResult>,
    #[serde(skip_serializing_if = "Option::is_none")]
    itt: Option<RandInfResult>,
    #[serde(skip_serializing_if = "Option::is_none")]
    constant_effect: Option<FisherResult>,
}

fn cmd_fuzzy(a: &FuzzyArgs) -> Result<(Output, usize), CliError> {
    let extra: Vec<(&str, Role)> = a.treatment_received.iter().map(|c| (c.as_str(), Role::Treatment)).collect();
    let s = load(&a.common, &extra, false)?;
    if s.received().is_none() {
        return Err(usage(
            "a treatment-received column is required: --treatment-received COL or --map COL=treatment",
        ));
    }
    let w = window(&s, &a.window)?;
    let wd = s.window_data(&w)?;
    let cfg = rand_config(&a.rand)?;
    let want_tsls = a.tsls || !(a.first_stage || a.itt || a.gamma.is_some());
    let mut text = String::new();
    let mut out = FuzzyOut {
        tsls: None,
        first_stage: None,
        itt: None,
        constant_effect: None,
    };
    if want_tsls {
        let r = tsls_ratio(&wd, cfg.variance, cfg.alpha)?;
        let _ = writeln!(
            text,
            "Fuzzy design, window [{}, {}]: {} left, {} right",
            w.lo, w.hi, r.n_minus, r.n_plus
        );
        let _ = writeln!(text, "Compliance: {}", label(&r.compliance_type).replace('_', "-"));
        let _ = writeln!(text, "ITT (outcome): {:.3}", r.itt);
        let _ = writeln!(
            text,
            "First stage: {:.3}   F = {:.3}{}",
            r.first_stage,
            r.f_stat,
            if r.weak_flag { "  (weak)" } else { "" }
        );
        let _ = writeln!(
            text,
            "Ratio: {:.3}   se {:.3}   z {:.3}   p-value {:.3}   {:.0}% CI [{:.3}, {:.3}]",
            r.ratio,
            r.se,
            r.z,
            r.p_value,
            100.0 * (1.0 - r.alpha),
            r.ci.0,
            r.ci.1
        );
        for w in &r.warnings {
            let _ = writeln!(text, "warning: {w}");
        }
        out.tsls = Some(r);
    }
    if a.first_stage {
        let r = itt(&wd, OutcomeRole::Received, &cfg)?;
        text.push_str(&render_randinf(&r, "First stage (take-up)"));
        out.first_stage = Some(r);
    }
    if a.itt {
        let r = itt(&wd, OutcomeRole::Outcome, &cfg)?;
        text.push_str(&render_randinf(&r, "Intention-to-treat (outcome)"));
        out.itt = Some(r);
    }
    if let Some(g) = a.gamma {
        let r = fisher_constant_effect_test(&wd, g, &cfg.mechanism, cfg.stat, &cfg.fisher)?;
        let _ = writeln!(
            text,
            "Constant effect {g}: statistic {:.3}, p-value {}",
            r.stat_obs,
            fisher_line(&r)
        );
        out.constant_effect = Some(r);
    }
    let json = to_json(&out, a.rand.seed)?;
    Ok((Output { text, json, csv: None }, s.dropped()))
}

#[derive(Serialize)]
struct CumulativeOut {
    split: CumulativeSplit,
    results: ByCutoff,
}

#[derive(Serialize)]
struct McOut {
    #[serde(skip_serializing_if = "Option::is_none")]
    by_cutoff: Option<ByCutoff>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pooled: Option<PooledResult>,
    #[serde(skip_serializing_if = "Option::is_none")]
    weights: Option<Vec<CutoffWeight>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    comparison: Option<Comparison>,
    #[serde(skip_serializing_if = "Option::is_none")]
    cumulative: Option<CumulativeOut>,
    #[serde(skip_serializing_if = "Option::is_none")]
    extrapolation: Option<Extrapolation>,
}

fn cutoff_table(text: &mut String, rows: &[CutoffResult]) {
    let _ = writeln!(
        text,
        "{:>10}{:>12}{:>12}{:>10}{:>8}{:>8}{:>10}",
        "cutoff", "estimate", "variance", "p-value", "n-", "n+", "h"
    );
    for r in rows {
        let _ = writeln!(
            text,
            "{:>10}{:>12.3}{:>12.4}{:>10.3}{:>8}{:>8}{:>10}",
            r.cutoff, r.estimate, r.variance, r.p_value, r.n_minus, r.n_plus, r.window_or_bandwidth
        );
    }
}

fn csv_rows(rows: &[CutoffResult]) -> String {
    let mut t = String::from("cutoff,estimate,variance,p_value,n_minus,n_plus,window_or_bandwidth\n");
    for r in rows {
        let _ = writeln!(
            t,
            "{},{},{},{},{},{},{}",
            r.cutoff, r.estimate, r.variance, r.p_value, r.n_minus, r.n_plus, r.window_or_bandwidth
        );
    }
    t
}

fn pair(spec: &str, what: &str) -> Result<(f64, f64), CliError> {
    let v = parse_list(spec).map_err(|e| usage(e.to_string()))?;
    match v[..] {
        [a, b] => Ok((a, b)),
        _ => Err(usage(format!("{what} needs two comma-separated values"))),
    }
}

fn cmd_mc(a: &McArgs) -> Result<(Output, usize), CliError> {
    let eng = engine(&a.engine, &a.rand)?;
    let mut out = McOut {
        by_cutoff: None,
        pooled: None,
        weights: None,
        comparison: None,
        cumulative: None,
        extrapolation: None,
    };
    let mut text = String::new();
    let csv;
    let s;
    if a.cumulative {
        let path = a.cutoffs.as_ref().ok_or_else(|| usage("--cumulative needs --cutoffs FILE"))?;
        let cutoffs = read_cutoffs_csv(File::open(path)?)?;
        s = load(&a.common, &[], false)?;
        let split = split_cumulative(&s, &cutoffs, parse::<SplitRule>(&a.split)?)?;
        let results = by_cutoff_cumulative(&s, &split, &eng)?;
        let _ = writeln!(text, "Cumulative cutoffs, split thresholds {:?}", split.thresholds);
        cutoff_table(&mut text, &results.results);
        for w in split.warnings.iter().chain(&results.warnings) {
            let _ = writeln!(text, "note: {w}");
        }
        csv = Some(csv_rows(&results.results));
        out.cumulative = Some(CumulativeOut { split, results });
    } else {
        let extra: Vec<(&str, Role)> = a.cutoff_col.iter().map(|c| (c.as_str(), Role::Cutoff)).collect();
        s = load(&a.common, &extra, false)?;
        if s.scalar_cutoff().is_some() {
            return Err(usage("multiple cutoffs need a cutoff column: --cutoff-col COL or --map COL=cutoff"));
        }
        let by = by_cutoff(&s, &eng)?;
        let _ = writeln!(text, "Cutoff-specific estimates");
        cutoff_table(&mut text, &by.results);
        for w in &by.warnings {
            let _ = writeln!(text, "note: {w}");
        }
        csv = Some(csv_rows(&by.results));
        if let Some(spec) = &a.compare {
            let (c1, c2) = pair(spec, "--compare")?;
            let find = |c: f64| {
                by.results
                    .iter()
                    .find(|r| r.cutoff == c)
                    .ok_or_else(|| usage(format!("no estimate at cutoff {c}")))
            };
            let cmp = compare_cutoffs(find(c1)?, find(c2)?)?;
            let _ = writeln!(
                text,
                "Difference {} - {}: {:.3}   z {:.3}   p-value {:.3}",
                c1, c2, cmp.difference, cmp.z, cmp.p_value
            );
            if let Some(w) = &cmp.warning {
                let _ = writeln!(text, "warning: {w}");
            }
            out.comparison = Some(cmp);
        }
        if a.pooled {
            let p = pool(&s, &eng, a.weights_h)?;
            let _ = writeln!(
                text,
                "Pooled: {:.3} (p-value {:.3}, {} left, {} right)   Weighted: {:.3}",
                p.pooled.estimate, p.pooled.p_value, p.pooled.n_minus, p.pooled.n_plus, p.weighted
            );
            for w in &p.weights {
                let _ = writeln!(
                    text,
                    "  weight at {}: {:.3} ({} units within {})",
                    w.cutoff, w.weight, w.n_in_band, p.h
                );
            }
            for w in &p.warnings {
                let _ = writeln!(text, "note: {w}");
            }
            out.pooled = Some(p);
        } else if a.weights {
            let h = a.weights_h.unwrap_or(a.engine.h);
            let ws = pooled_weights(&s, h)?;
            for w in &ws {
                let _ = writeln!(text, "  weight at {}: {:.3} ({} units within {h})", w.cutoff, w.weight, w.n_in_band);
            }
            out.weights = Some(ws);
        }
        out.by_cutoff = Some(by);
    }
    if let Some(spec) = &a.extrapolate {
        let v = parse_list(spec).map_err(|e| usage(e.to_string()))?;
        let [c1, c2, x] = v[..] else {
            return Err(usage("--extrapolate needs c1,c2,x"));
        };
        let cfg = lp_config(a.engine.p, a.engine.h, &a.engine.lp_kernel, &a.engine.lp_variance)?;
        let e = extrapolate_constant_bias(&s, c1, c2, x, &cfg)?;
        let _ = writeln!(
            text,
            "Extrapolated effect at x = {} for units facing {}: {:.3} (bias {:.3})",
            e.x, e.c1, e.estimate, e.bias
        );
        out.extrapolation = Some(e);
    }
    let json = to_json(&out, a.rand.seed)?;
    Ok((Output { text, json, csv }, s.dropped()))
}

#[derive(Serialize)]
struct NearestOut {
    boundary: BoundarySpec,
    result: CutoffResult,
    min_treated_distance: Option<f64>,
    min_control_distance: Option<f64>,
}

#[derive(Serialize)]
struct MsOut {
    metric: Metric,
    #[serde(skip_serializing_if = "Option::is_none")]
    points: Option<Vec<PointResult>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    nearest: Option<NearestOut>,
    #[serde(skip_serializing_if = "Option::is_none")]
    grid: Option<Vec<GridReportRow>>,
}

fn parse_metric(name: &str, radius: Option<f64>) -> Result<Metric, CliError> {
    let m = parse::<Metric>(name)?;
    Ok(match (m, radius) {
        (_, Some(r)) if !(r > 0.0) => return Err(usage("--radius must be positive")),
        (Metric::GreatCircle(_), Some(r)) => Metric::GreatCircle(r),
        (Metric::Chordal(_), Some(r)) => Metric::Chordal(r),
        (Metric::Euclidean, Some(_)) => return Err(usage("--radius applies to spherical metrics only")),
        (m, None) => m,
    })
}

fn parse_densify(s: &str) -> Result<Densify, CliError> {
    match s.to_ascii_lowercase().as_str() {
        "project" => Ok(Densify::Project),
        "none" => Ok(Densify::None),
        other => other
            .parse::<f64>()
            .map(Densify::Step)
            .map_err(|_| usage(format!("--densify expects project, none or a step length, got `{other}`"))),
    }
}

fn cmd_ms(a: &MsArgs) -> Result<(Output, usize), CliError> {
    let mut extra: Vec<(&str, Role)> = a.score2.iter().map(|c| (c.as_str(), Role::Score2)).collect();
    extra.extend(a.treated_col.iter().map(|c| (c.as_str(), Role::Treatment)));
    let s = load(&a.common, &extra, false)?;
    if s.score2().is_none() {
        return Err(usage("a second score is required: --score2 COL or --map COL=score2"));
    }
    let assignment: Vec<bool> = match (&a.assign_at, s.received()) {
        (Some(spec), _) => assign_both_at_least(&s, parse_point(spec).map_err(|e| usage(e.to_string()))?)?,
        (None, Some(d)) => d.iter().map(|&v| v == 1.0).collect(),
        (None, None) => return Err(usage("give --assign-at a,b or a treatment column (--treated-col COL)")),
    };
    let metric = parse_metric(&a.metric, a.radius)?;
    let mut boundary: Vec<Point> = a
        .points
        .iter()
        .map(|p| parse_point(p).map_err(|e| usage(e.to_string())))
        .collect::<Result<_, _>>()?;
    if let Some(path) = &a.boundary_file {
        boundary.extend(read_boundary_csv(File::open(path)?)?);
    }
    if boundary.is_empty() {
        return Err(usage("give boundary points with --point or --boundary-file"));
    }
    let eng = engine(&a.engine, &a.rand)?;
    let mut out = MsOut {
        metric,
        points: None,
        nearest: None,
        grid: None,
    };
    let mut text = String::new();
    let mut csv = String::from("point_a,point_b,estimate,p_value,n_minus,n_plus,error\n");
    if a.nearest {
        let spec = BoundarySpec::new(boundary.clone(), metric)?.with_densify(parse_densify(&a.densify)?)?;
        let sd = signed_distance_to_boundary(&s, &assignment, &spec)?;
        let ids: Vec<usize> = (0..s.len()).collect();
        let r = run_engine(&sd.sample, 0.0, &eng, &ids)?;
        let _ = writeln!(
            text,
            "Distance to the boundary ({} points): estimate {:.3}, p-value {:.3}, {} left, {} right",
            boundary.len(),
            r.estimate,
            r.p_value,
            r.n_minus,
            r.n_plus
        );
        let _ = writeln!(csv, "boundary,boundary,{},{},{},{},", r.estimate, r.p_value, r.n_minus, r.n_plus);
        out.nearest = Some(NearestOut {
            boundary: spec,
            result: r,
            min_treated_distance: sd.min_distance(true),
            min_control_distance: sd.min_distance(false),
        });
    } else {
        let rows = analyze_points(&s, &assignment, &boundary, metric, &eng)?;
        let _ = writeln!(
            text,
            "{:>24}{:>12}{:>10}{:>8}{:>8}",
            "boundary point", "estimate", "p-value", "n-", "n+"
        );
        for row in &rows {
            let pt = format!("({}, {})", row.point[0], row.point[1]);
            match &row.result {
                Some(r) => {
                    let _ = writeln!(
                        text,
                        "{pt:>24}{:>12.3}{:>10.3}{:>8}{:>8}",
                        r.estimate, r.p_value, r.n_minus, r.n_plus
                    );
                    let _ = writeln!(
                        csv,
                        "{},{},{},{},{},{},",
                        row.point[0], row.point[1], r.estimate, r.p_value, r.n_minus, r.n_plus
                    );
                }
                None => {
                    let e = row.error.clone().unwrap_or_default();
                    let _ = writeln!(text, "{pt:>24}  {e}");
                    let _ = writeln!(csv, "{},{},,,,,\"{}\"", row.point[0], row.point[1], e.replace('"', "'"));
                }
            }
        }
        out.points = Some(rows);
    }
    if let Some(radius) = a.grid_radius {
        let spec = BoundarySpec::new(boundary, metric)?;
        let grid = boundary_grid_report(&s, &assignment, &spec, radius, a.min_count)?;
        let flagged = grid.iter().filter(|g| g.flagged).count();
        let _ = writeln!(
            text,
            "{flagged} of {} boundary points have fewer than {} units on a side within {radius}",
            grid.len(),
            a.min_count
        );
        out.grid = Some(grid);
    }
    let json = to_json(&out, a.rand.seed)?;
    Ok((
        Output {
            text,
            json,
            csv: Some(csv),
        },
        s.dropped(),
    ))
}

fn cmd_density(a: &DensityArgs) -> Result<(Output, usize), CliError> {
    let s = load(&a.common, &[], true)?;
    let w = window(&s, &a.window)?;
    let r: DensityResult = density_test(&w, a.q)?;
    let text = format!(
        "Binomial test in [{}, {}]: {} left, {} right, q = {}, p-value {:.3}\n",
        w.lo, w.hi, w.n_minus, w.n_plus, r.q, r.p_value
    );
    let json = serde_json::to_value(&r).map_err(|e| CliError::Analysis(e.to_string()))?;
    Ok((Output { text, json, csv: None }, s.dropped()))
}

#[derive(Serialize)]
struct FalsifyOut {
    #[serde(skip_serializing_if = "Option::is_none")]
    balance: Option<Vec<BalanceRow>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    placebos: Option<Vec<PlaceboRow>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    sensitivity: Option<Vec<RandInfResult>>,
}

fn cmd_falsify(a: &FalsifyArgs) -> Result<(Output, usize), CliError> {
    if !a.balance && a.placebos.is_none() && a.sensitivity.is_none() {
        return Err(usage("choose at least one of --balance, --placebos, --sensitivity"));
    }
    let extra: Vec<(&str, Role)> = a.covariates.iter().map(|c| (c.as_str(), Role::Covariate)).collect();
    let needs_outcome = a.placebos.is_some() || a.sensitivity.is_some();
    let s = load(&a.common, &extra, !needs_outcome)?;
    let w0 = window(&s, &a.window)?;
    let cfg = rand_config(&a.rand)?;
    let mut out = FalsifyOut {
        balance: None,
        placebos: None,
        sensitivity: None,
    };
    let mut text = String::new();
    let mut csv = None;
    if a.balance {
        let eng = Engine::LocalRand {
            half_window: w0.half_length(),
            config: cfg.clone(),
        };
        let rows = balance_table(&s, w0.center, &a.covariates, &eng)?;
        let _ = writeln!(text, "Covariate balance within {} of the cutoff", w0.half_length());
        let _ = writeln!(
            text,
            "{:<20}{:>12}{:>12}{:>12}{:>10}",
            "covariate", "mean left", "mean right", "estimate", "p-value"
        );
        let mut t = String::from("covariate,mean_minus,mean_plus,estimate,p_value,n_minus,n_plus\n");
        for r in &rows {
            let _ = writeln!(
                text,
                "{:<20}{:>12.3}{:>12.3}{:>12.3}{:>10.3}",
                r.covariate, r.mean_minus, r.mean_plus, r.estimate, r.p_value
            );
            let _ = writeln!(
                t,
                "{},{},{},{},{},{},{}",
                r.covariate, r.mean_minus, r.mean_plus, r.estimate, r.p_value, r.n_minus, r.n_plus
            );
            if let Some(n) = &r.note {
                let _ = writeln!(text, "note: {n}");
            }
        }
        csv = Some(t);
        out.balance = Some(rows);
    }
    if let Some(spec) = &a.placebos {
        let cuts = parse_list(spec).map_err(|e| usage(e.to_string()))?;
        let mode = match a.placebo_window.to_ascii_lowercase().as_str() {
            "same_length" => PlaceboWindow::SameLength,
            "same_n" => PlaceboWindow::SameN,
            other => return Err(usage(format!("unknown placebo window `{other}`"))),
        };
        let rows = placebo_cutoffs(&s, w0.center, &w0, &cuts, mode, &cfg)?;
        let _ = writeln!(text, "Placebo cutoffs");
        for r in &rows {
            let _ = writeln!(
                text,
                "  c = {}: window [{}, {}], estimate {:.3}, p-value {:.3}",
                r.cutoff, r.window.lo, r.window.hi, r.result.estimate, r.result.fisher.p_value
            );
        }
        out.placebos = Some(rows);
    }
    if let Some(spec) = &a.sensitivity {
        let hs = parse_list(spec).map_err(|e| usage(e.to_string()))?;
        let rows = window_sensitivity(&s, &w0, &hs, &cfg)?;
        let _ = writeln!(text, "Sensitivity to smaller windows");
        for r in &rows {
            let _ = writeln!(
                text,
                "  [{}, {}]: {} left, {} right, estimate {:.3}, p-value {:.3}",
                r.window.0, r.window.1, r.n_minus, r.n_plus, r.estimate, r.fisher.p_value
            );
        }
        out.sensitivity = Some(rows);
    }
    let json = to_json(&out, a.rand.seed)?;
    Ok((Output { text, json, csv }, s.dropped()))
}

fn cmd_plot(a: &PlotArgs) -> Result<(Output, usize), CliError> {
    let s = load(&a.common, &[], false)?;
    let c = scalar_cutoff(&s)?;
    let bins = parse_list(&a.bins).map_err(|e| usage(e.to_string()))?;
    let count = |v: f64| -> Result<usize, CliError> {
        if v >= 1.0 && v.fract() == 0.0 {
            Ok(v as usize)
        } else {
            Err(usage("--bins takes positive integers"))
        }
    };
    let nb = match bins[..] {
        [n] => (count(n)?, count(n)?),
        [l, r] => (count(l)?, count(r)?),
        _ => return Err(usage("--bins takes `n` or `left,right`")),
    };
    let r: RdPlotData = rdplot_data(&s, c, nb, parse::<BinRule>(&a.bin_rule)?, a.poly)?;
    let mut text = String::new();
    let mut csv = String::from("side,bin_center,bin_mean,n_in_bin\n");
    for side in [&r.left, &r.right] {
        let name = label(&side.side);
        let coef: Vec<String> = side.coefficients.iter().map(|v| format!("{v:.4}")).collect();
        let _ = writeln!(text, "{name}: {} bins, global fit [{}]", side.bins.len(), coef.join(", "));
        for b in &side.bins {
            let _ = writeln!(csv, "{name},{},{},{}", b.center, b.mean, b.n);
        }
    }
    for n in &r.notes {
        let _ = writeln!(text, "note: {n}");
    }
    if let Some(path) = &a.svg_out {
        std::fs::write(path, r.to_svg(720, 480))?;
    }
    let json = serde_json::to_value(&r).map_err(|e| CliError::Analysis(e.to_string()))?;
    Ok((
        Output {
            text,
            json,
            csv: Some(csv),
        },
        s.dropped(),
    ))
}

fn cmd_lp(a: &LpArgs) -> Result<(Output, usize), CliError> {
    let raw = load(&a.common, &[], false)?;
    let c = scalar_cutoff(&raw)?;
    let s = if a.collapse { raw.collapse_by_score() } else { raw.clone() };
    let cfg = lp_config(a.p, a.h, &a.lp_kernel, &a.lp_variance)?;
    let r: SharpEffect = sharp_effect(&s, c, &cfg, a.level)?;
    let text = format!(
        "Local polynomial (p = {}, h = {}){}\nIntercepts: left {:.3} ({} obs), right {:.3} ({} obs)\nEstimate {:.3}   se {:.3}   z {:.3}   p-value {:.3}   {:.0}% CI [{:.3}, {:.3}]\n",
        a.p,
        a.h,
        if a.collapse { " on collapsed data" } else { "" },
        r.left.intercept(),
        r.left.n_used,
        r.right.intercept(),
        r.right.n_used,
        r.estimate,
        r.se,
        r.z,
        r.p_value,
        100.0 * (1.0 - a.level),
        r.ci.0,
        r.ci.1
    );
    let json = serde_json::to_value(&r).map_err(|e| CliError::Analysis(e.to_string()))?;
    Ok((Output { text, json, csv: None }, raw.dropped()))
}

/// Convenience for callers holding paths.
pub fn run_paths(args: &[&str], out: &mut dyn Write, err: &mut dyn Write) -> i32 {
    run(std::iter::once("rdlocal").chain(args.iter().copied()), out, err)
}
