//! Fuzzy designs: treatment take-up differs from assignment. Intention-to-treat
//! and first-stage effects are sharp analyses with `Y` or `D` as the outcome;
//! their ratio gets delta-method inference.

use serde::Serialize;

use crate::error::{invalid, Error, Result};
use crate::largesample::{critical_value, two_sided_p};
use crate::randinf::{analyze, fisher_test, FisherConfig, FisherResult, MechanismSpec, RandInfConfig, RandInfResult};
use crate::sample::WindowData;
use crate::stats::{diff_means, neyman_variance, StatKind, StatSpec, VarianceKind};

/// First-stage F below this value is flagged as weak.
pub const WEAK_F: f64 = 20.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum OutcomeRole {
    Outcome,
    Received,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum ComplianceType {
    /// No control unit takes the treatment.
    OneSided,
    TwoSided,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FuzzyResult {
    pub n_minus: usize,
    pub n_plus: usize,
    pub itt: f64,
    pub first_stage: f64,
    pub ratio: f64,
    pub ratio_variance: f64,
    pub se: f64,
    pub z: f64,
    pub p_value: f64,
    pub ci: (f64, f64),
    pub alpha: f64,
    pub f_stat: f64,
    pub weak_flag: bool,
    pub compliance_type: ComplianceType,
    pub variance: VarianceKind,
    pub warnings: Vec<String>,
}

fn received(data: &WindowData) -> Result<&[f64]> {
    data.received
        .as_deref()
        .ok_or_else(|| Error::Config("treatment-received column is required for a fuzzy analysis".into()))
}

/// Sharp analysis with the outcome or take-up as the response.
pub fn itt(data: &WindowData, role: OutcomeRole, cfg: &RandInfConfig) -> Result<RandInfResult> {
    match role {
        OutcomeRole::Outcome => analyze(data, &data.outcome, cfg),
        OutcomeRole::Received => analyze(data, received(data)?, cfg),
    }
}

fn complete_triples(data: &WindowData, d: &[f64]) -> (Vec<bool>, Vec<f64>, Vec<f64>) {
    let mut t = Vec::new();
    let mut y = Vec::new();
    let mut dd = Vec::new();
    for i in 0..data.len() {
        if !data.outcome[i].is_nan() && !d[i].is_nan() {
            t.push(data.treated[i]);
            y.push(data.outcome[i]);
            dd.push(d[i]);
        }
    }
    (t, y, dd)
}

/// Within-group covariance term matching the variance estimator: divided by
/// `(N_g - 1) N_g` for the pooled and HC2 forms, `(N_g - 1)²` for HC3.
fn cov_term(t: &[bool], a: &[f64], b: &[f64], kind: VarianceKind) -> f64 {
    [true, false]
        .iter()
        .map(|&side| {
            let idx: Vec<usize> = (0..t.len()).filter(|&i| t[i] == side).collect();
            let n = idx.len() as f64;
            let ma = idx.iter().map(|&i| a[i]).sum::<f64>() / n;
            let mb = idx.iter().map(|&i| b[i]).sum::<f64>() / n;
            let ss: f64 = idx.iter().map(|&i| (a[i] - ma) * (b[i] - mb)).sum();
            match kind {
                VarianceKind::Hc3 => ss / ((n - 1.0) * (n - 1.0)),
                _ => ss / ((n - 1.0) * n),
            }
        })
        .sum()
}

/// Ratio of the outcome and take-up differences in means, with a
/// delta-method variance and a first-stage F statistic.
pub fn tsls_ratio(data: &WindowData, kind: VarianceKind, alpha: f64) -> Result<FuzzyResult> {
    let d_all = received(data)?;
    let (t, y, d) = complete_triples(data, d_all);
    let zcrit = critical_value(alpha)?;
    let itt = diff_means(&t, &y, None)?;
    let first_stage = diff_means(&t, &d, None)?;
    if first_stage.abs() < 1e-12 {
        return Err(Error::ZeroFirstStage);
    }
    let ratio = itt / first_stage;
    let vy = neyman_variance(&t, &y, kind)?.value;
    let vd = neyman_variance(&t, &d, kind)?.value;
    let cov = cov_term(&t, &y, &d, kind);
    let ratio_variance = ((vy + ratio * ratio * vd - 2.0 * ratio * cov) / (first_stage * first_stage)).max(0.0);
    let se = ratio_variance.sqrt();
    let mut warnings = Vec::new();
    if (t.len()) < data.len() {
        warnings.push(format!("{} unit(s) with missing Y or D excluded", data.len() - t.len()));
    }
    let (z, p_value) = if se > 0.0 {
        (ratio / se, two_sided_p(ratio / se))
    } else if ratio != 0.0 {
        warnings.push("zero delta-method variance with a nonzero ratio; p-value set to 0".into());
        (ratio.signum() * f64::INFINITY, 0.0)
    } else {
        (0.0, 1.0)
    };
    let vd_hc2 = neyman_variance(&t, &d, VarianceKind::Hc2)?.value;
    let f_stat = if vd_hc2 > 0.0 {
        first_stage * first_stage / vd_hc2
    } else {
        f64::INFINITY
    };
    let weak_flag = f_stat < WEAK_F;
    if weak_flag {
        warnings.push(format!(
            "weak first stage: F = {f_stat:.2} < {WEAK_F}; ratio inference is unreliable"
        ));
    }
    let control_takes = t.iter().zip(&d).any(|(&ti, &di)| !ti && di == 1.0);
    let compliance_type = if control_takes {
        ComplianceType::TwoSided
    } else {
        ComplianceType::OneSided
    };
    let n_plus = t.iter().filter(|&&v| v).count();
    Ok(FuzzyResult {
        n_minus: t.len() - n_plus,
        n_plus,
        itt,
        first_stage,
        ratio,
        ratio_variance,
        se,
        z,
        p_value,
        ci: (ratio - zcrit * se, ratio + zcrit * se),
        alpha,
        f_stat,
        weak_flag,
        compliance_type,
        variance: kind,
        warnings,
    })
}

/// Randomization test of `Y_i(d) = Y_i(0) + gamma·d`, run on `Y - D·gamma`
/// while permuting assignment only.
pub fn fisher_constant_effect_test(
    data: &WindowData,
    gamma: f64,
    mechanism: &MechanismSpec,
    stat: StatKind,
    cfg: &FisherConfig,
) -> Result<FisherResult> {
    if stat == StatKind::Hotelling || stat == StatKind::Tsls {
        return Err(invalid("constant-effect test needs a univariate statistic"));
    }
    let d_all = received(data)?;
    let (t, y, d) = complete_triples(data, d_all);
    let adjusted: Vec<f64> = y.iter().zip(&d).map(|(yi, di)| yi - di * gamma).collect();
    let mech = mechanism.resolve(&t)?;
    fisher_test(&t, &adjusted, &mech, &StatSpec::new(stat), 0.0, cfg)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn data(t: &[bool], y: &[f64], d: &[f64]) -> WindowData {
        WindowData::from_assignment(t.to_vec(), y.to_vec())
            .unwrap()
            .with_received(d.to_vec())
            .unwrap()
    }

    #[test]
    fn ratio_identity() {
        let t = [true, true, true, false, false, false, true, false];
        let y = [3.0, 1.0, 4.0, 1.0, 5.0, 9.0, 2.0, 6.0];
        let d = [1.0, 1.0, 0.0, 0.0, 1.0, 0.0, 1.0, 0.0];
        let r = tsls_ratio(&data(&t, &y, &d), VarianceKind::PooledNeyman, 0.05).unwrap();
        assert!((r.ratio * r.first_stage - r.itt).abs() < 1e-12);
        assert_eq!(r.compliance_type, ComplianceType::TwoSided);
    }

    #[test]
    fn perfect_compliance_matches_itt() {
        let t = [true, true, true, false, false, false];
        let d: Vec<f64> = t.iter().map(|&v| f64::from(u8::from(v))).collect();
        let y = [3.0, 1.0, 4.0, 1.0, 5.0, 9.0];
        let r = tsls_ratio(&data(&t, &y, &d), VarianceKind::PooledNeyman, 0.05).unwrap();
        assert_eq!(r.first_stage, 1.0);
        assert_eq!(r.ratio, r.itt);
        assert!(r.f_stat.is_infinite() && !r.weak_flag);
        assert_eq!(r.compliance_type, ComplianceType::OneSided);
        let v = neyman_variance(&t, &y, VarianceKind::PooledNeyman).unwrap().value;
        assert_relative_eq!(r.ratio_variance, v, epsilon = 1e-12);
    }

    #[test]
    fn zero_first_stage_errors() {
        let t = [true, true, false, false];
        let d = [1.0, 0.0, 1.0, 0.0];
        let e = tsls_ratio(&data(&t, &[1.0, 2.0, 3.0, 4.0], &d), VarianceKind::Hc2, 0.05).unwrap_err();
        assert!(e.to_string().contains("weak/undefined denominator"));
    }

    #[test]
    fn one_sided_first_stage_is_take_up() {
        let t = [true, true, true, true, false, false, false];
        let d = [1.0, 1.0, 0.0, 1.0, 0.0, 0.0, 0.0];
        let y = [2.0, 3.0, 1.0, 2.5, 1.0, 0.5, 1.5];
        let r = tsls_ratio(&data(&t, &y, &d), VarianceKind::PooledNeyman, 0.05).unwrap();
        assert_eq!(r.compliance_type, ComplianceType::OneSided);
        assert_relative_eq!(r.first_stage, 0.75);
    }

    #[test]
    fn constant_effect_at_true_gamma() {
        let t = [true, false, true, false, true, false];
        let d = [1.0, 0.0, 1.0, 1.0, 0.0, 0.0];
        let y: Vec<f64> = d.iter().map(|di| 5.0 + 2.5 * di).collect();
        let wd = data(&t, &y, &d);
        let r = fisher_constant_effect_test(
            &wd,
            2.5,
            &MechanismSpec::FixedMargins,
            StatKind::DiffMeans,
            &FisherConfig::default(),
        )
        .unwrap();
        assert_eq!(r.p_value, 1.0);
        let plain = fisher_test(
            &t,
            &y,
            &MechanismSpec::FixedMargins.resolve(&t).unwrap(),
            &StatSpec::diff_means(),
            0.0,
            &FisherConfig::default(),
        )
        .unwrap();
        let zero = fisher_constant_effect_test(
            &wd,
            0.0,
            &MechanismSpec::FixedMargins,
            StatKind::DiffMeans,
            &FisherConfig::default(),
        )
        .unwrap();
        assert_eq!(zero, plain);
    }

    #[test]
    fn itt_roles() {
        let t = [true, true, true, false, false, false];
        let d = [1.0, 1.0, 0.0, 0.0, 0.0, 1.0];
        let y = [3.0, 1.0, 4.0, 1.0, 5.0, 9.0];
        let wd = data(&t, &y, &d);
        let cfg = RandInfConfig::default();
        assert_relative_eq!(itt(&wd, OutcomeRole::Received, &cfg).unwrap().estimate, 1.0 / 3.0, epsilon = 1e-12);
        assert_relative_eq!(
            itt(&wd, OutcomeRole::Outcome, &cfg).unwrap().estimate,
            8.0 / 3.0 - 5.0,
            epsilon = 1e-12
        );
        let no_d = WindowData::from_assignment(t.to_vec(), y.to_vec()).unwrap();
        assert!(itt(&no_d, OutcomeRole::Received, &cfg).is_err());
    }
}
