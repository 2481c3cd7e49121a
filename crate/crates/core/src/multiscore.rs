//! Two-dimensional scores, including geographic locations. Each unit's
//! location is reduced to a signed distance to a boundary point, or to the
//! whole boundary, which then serves as a scalar score with cutoff zero.

use rayon::prelude::*;
use serde::Serialize;

use crate::error::{invalid, Error, Result};
use crate::multicutoff::{run_engine, CutoffResult, Engine};
use crate::sample::{Cutoff, RdSample};

/// Mean Earth radius in kilometres.
pub const EARTH_RADIUS_KM: f64 = 6371.0;

pub type Point = [f64; 2];

/// Distance between two points. Spherical metrics read points as
/// `[latitude, longitude]` in degrees.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
#[serde(tag = "kind", content = "radius", rename_all = "snake_case")]
pub enum Metric {
    Euclidean,
    GreatCircle(f64),
    Chordal(f64),
}

impl Metric {
    pub fn is_spherical(self) -> bool {
        !matches!(self, Metric::Euclidean)
    }
}

impl std::str::FromStr for Metric {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Ok(match s.to_ascii_lowercase().as_str() {
            "euclidean" => Metric::Euclidean,
            "great_circle" | "geodetic" | "haversine" => Metric::GreatCircle(EARTH_RADIUS_KM),
            "chordal" => Metric::Chordal(EARTH_RADIUS_KM),
            other => return Err(Error::Config(format!("unknown metric `{other}`"))),
        })
    }
}

fn check_latlon(p: Point) -> Result<()> {
    if !(-90.0..=90.0).contains(&p[0]) {
        return Err(invalid(format!("latitude {} outside [-90, 90]", p[0])));
    }
    if !(-180.0..=180.0).contains(&p[1]) {
        return Err(invalid(format!("longitude {} outside [-180, 180]", p[1])));
    }
    Ok(())
}

/// Haversine of the central angle, clamped to `[0, 1]`.
fn haversine(p: Point, q: Point) -> f64 {
    let (f1, f2) = (p[0].to_radians(), q[0].to_radians());
    let dphi = f2 - f1;
    let dlam = (q[1] - p[1]).to_radians();
    let h = (dphi / 2.0).sin().powi(2) + f1.cos() * f2.cos() * (dlam / 2.0).sin().powi(2);
    h.clamp(0.0, 1.0)
}

fn distance_unchecked(p: Point, q: Point, metric: Metric) -> f64 {
    match metric {
        Metric::Euclidean => (p[0] - q[0]).hypot(p[1] - q[1]),
        Metric::GreatCircle(r) => 2.0 * r * haversine(p, q).sqrt().asin(),
        Metric::Chordal(r) => 2.0 * r * haversine(p, q).sqrt(),
    }
}

pub fn distance(p: Point, q: Point, metric: Metric) -> Result<f64> {
    if p.iter().chain(&q).any(|v| !v.is_finite()) {
        return Err(invalid("coordinates must be finite"));
    }
    if metric.is_spherical() {
        check_latlon(p)?;
        check_latlon(q)?;
    }
    Ok(distance_unchecked(p, q, metric))
}

/// How the distance to a polyline boundary is computed.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
#[serde(tag = "kind", content = "step", rename_all = "snake_case")]
pub enum Densify {
    /// Boundary points only.
    None,
    /// Endpoints plus the projection of each unit onto every segment.
    Project,
    /// Points spaced at most `step` (metric units) apart along each segment.
    Step(f64),
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BoundarySpec {
    pub points: Vec<Point>,
    pub metric: Metric,
    pub densify: Densify,
}

impl BoundarySpec {
    pub fn new(points: Vec<Point>, metric: Metric) -> Result<Self> {
        if points.is_empty() {
            return Err(invalid("boundary needs at least one point"));
        }
        for p in &points {
            if p.iter().any(|v| !v.is_finite()) {
                return Err(invalid("boundary coordinates must be finite"));
            }
            if metric.is_spherical() {
                check_latlon(*p)?;
            }
        }
        Ok(Self {
            points,
            metric,
            densify: Densify::Project,
        })
    }

    pub fn with_densify(mut self, densify: Densify) -> Result<Self> {
        if let Densify::Step(s) = densify {
            if !(s > 0.0 && s.is_finite()) {
                return Err(invalid("densification step must be positive"));
            }
        }
        self.densify = densify;
        Ok(self)
    }

    /// Shortest distance from `p` to the boundary.
    pub fn distance_to(&self, p: Point) -> f64 {
        let m = self.metric;
        let mut best = self
            .points
            .iter()
            .map(|&b| distance_unchecked(p, b, m))
            .fold(f64::INFINITY, f64::min);
        for seg in self.points.windows(2) {
            let (a, b) = (seg[0], seg[1]);
            let d = match self.densify {
                Densify::None => continue,
                Densify::Project => distance_unchecked(p, project(p, a, b, m), m),
                Densify::Step(s) => {
                    let len = distance_unchecked(a, b, m);
                    let k = (len / s).ceil().max(1.0) as usize;
                    (1..k)
                        .map(|j| {
                            let t = j as f64 / k as f64;
                            distance_unchecked(p, lerp(a, b, t), m)
                        })
                        .fold(f64::INFINITY, f64::min)
                }
            };
            best = best.min(d);
        }
        best
    }
}

fn lerp(a: Point, b: Point, t: f64) -> Point {
    [a[0] + (b[0] - a[0]) * t, a[1] + (b[1] - a[1]) * t]
}

/// Closest point to `p` on segment `ab`. Spherical coordinates are projected
/// in a local equirectangular frame centered at `p`.
fn project(p: Point, a: Point, b: Point, m: Metric) -> Point {
    let scale = if m.is_spherical() { p[0].to_radians().cos() } else { 1.0 };
    let to_xy = |q: Point| {
        if m.is_spherical() {
            let mut dl = q[1] - p[1];
            if dl > 180.0 {
                dl -= 360.0;
            } else if dl < -180.0 {
                dl += 360.0;
            }
            [dl * scale, q[0] - p[0]]
        } else {
            [q[0] - p[0], q[1] - p[1]]
        }
    };
    let (u, v) = (to_xy(a), to_xy(b));
    let d = [v[0] - u[0], v[1] - u[1]];
    let len2 = d[0] * d[0] + d[1] * d[1];
    let t = if len2 > 0.0 {
        (-(u[0] * d[0] + u[1] * d[1]) / len2).clamp(0.0, 1.0)
    } else {
        0.0
    };
    lerp(a, b, t)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(tag = "kind", content = "point", rename_all = "snake_case")]
pub enum Target {
    Point(Point),
    Boundary,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SignedDistanceSample {
    /// Scalar-score sample: score is the signed distance, cutoff 0.
    pub sample: RdSample,
    pub distances: Vec<f64>,
    pub assignment: Vec<bool>,
    pub target: Target,
    pub metric: Metric,
}

impl SignedDistanceSample {
    pub fn min_distance(&self, treated: bool) -> Option<f64> {
        self.distances
            .iter()
            .zip(&self.assignment)
            .filter(|(_, &a)| a == treated)
            .map(|(&d, _)| d)
            .reduce(f64::min)
    }
}

/// Unit coordinates: the score and second score of `sample`.
pub fn coordinates(sample: &RdSample) -> Result<Vec<Point>> {
    let s2 = sample
        .score2()
        .ok_or_else(|| Error::Config("a second score column is required".into()))?;
    Ok(sample.score().iter().zip(s2).map(|(&a, &b)| [a, b]).collect())
}

/// Treated when both coordinates are at or above their cutoffs.
pub fn assign_both_at_least(sample: &RdSample, c: Point) -> Result<Vec<bool>> {
    Ok(coordinates(sample)?.iter().map(|p| p[0] >= c[0] && p[1] >= c[1]).collect())
}

/// Signed score `d` for treated units and `-d` for controls. A control unit
/// at distance zero gets the largest negative value below zero so that it
/// stays below the cutoff.
fn signed(d: f64, treated: bool) -> f64 {
    if treated {
        d
    } else if d == 0.0 {
        -f64::MIN_POSITIVE
    } else {
        -d
    }
}

fn build(
    sample: &RdSample,
    assignment: &[bool],
    target: Target,
    metric: Metric,
    dist: impl Fn(Point) -> f64 + Sync,
) -> Result<SignedDistanceSample> {
    if assignment.len() != sample.len() {
        return Err(invalid("assignment length differs from sample size"));
    }
    let coords = coordinates(sample)?;
    if metric.is_spherical() {
        for p in &coords {
            check_latlon(*p)?;
        }
    }
    let distances: Vec<f64> = coords.par_iter().map(|&p| dist(p)).collect();
    let score: Vec<f64> = distances.iter().zip(assignment).map(|(&d, &a)| signed(d, a)).collect();
    let mut out = RdSample::new(score, sample.outcome().to_vec(), Cutoff::Scalar(0.0))?;
    if let Some(d) = sample.received() {
        out = out.with_received(d.to_vec())?;
    }
    for c in sample.covariates() {
        out = out.with_covariate(c.name.clone(), c.values.clone())?;
    }
    Ok(SignedDistanceSample {
        sample: out,
        distances,
        assignment: assignment.to_vec(),
        target,
        metric,
    })
}

pub fn signed_distance_to_point(sample: &RdSample, assignment: &[bool], b: Point, metric: Metric) -> Result<SignedDistanceSample> {
    if metric.is_spherical() {
        check_latlon(b)?;
    }
    build(sample, assignment, Target::Point(b), metric, |p| distance_unchecked(p, b, metric))
}

pub fn signed_distance_to_boundary(sample: &RdSample, assignment: &[bool], boundary: &BoundarySpec) -> Result<SignedDistanceSample> {
    build(sample, assignment, Target::Boundary, boundary.metric, |p| boundary.distance_to(p))
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GridReportRow {
    pub point: Point,
    pub n_treated: usize,
    pub n_control: usize,
    pub flagged: bool,
}

/// Units strictly within `radius` of each boundary point, by side. Points
/// with fewer than `min_count` units on either side are flagged.
pub fn boundary_grid_report(
    sample: &RdSample,
    assignment: &[bool],
    boundary: &BoundarySpec,
    radius: f64,
    min_count: usize,
) -> Result<Vec<GridReportRow>> {
    if !(radius >= 0.0) {
        return Err(invalid("radius must be nonnegative"));
    }
    if assignment.len() != sample.len() {
        return Err(invalid("assignment length differs from sample size"));
    }
    let coords = coordinates(sample)?;
    Ok(boundary
        .points
        .par_iter()
        .map(|&b| {
            let (mut t, mut c) = (0, 0);
            for (p, &a) in coords.iter().zip(assignment) {
                if distance_unchecked(*p, b, boundary.metric) < radius {
                    if a {
                        t += 1;
                    } else {
                        c += 1;
                    }
                }
            }
            GridReportRow {
                point: b,
                n_treated: t,
                n_control: c,
                flagged: t < min_count || c < min_count,
            }
        })
        .collect())
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PointResult {
    pub point: Point,
    pub result: Option<CutoffResult>,
    pub min_treated_distance: Option<f64>,
    pub min_control_distance: Option<f64>,
    pub error: Option<String>,
}

/// Sharp analysis at each boundary point on the signed distance to that
/// point.
pub fn analyze_points(
    sample: &RdSample,
    assignment: &[bool],
    points: &[Point],
    metric: Metric,
    engine: &Engine,
) -> Result<Vec<PointResult>> {
    let ids: Vec<usize> = (0..sample.len()).collect();
    points
        .iter()
        .map(|&b| {
            let sd = signed_distance_to_point(sample, assignment, b, metric)?;
            let r = run_engine(&sd.sample, 0.0, engine, &ids);
            Ok(PointResult {
                point: b,
                min_treated_distance: sd.min_distance(true),
                min_control_distance: sd.min_distance(false),
                error: r.as_ref().err().map(|e| e.to_string()),
                result: r.ok(),
            })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use proptest::prelude::*;
    use std::f64::consts::PI;

    fn unit_vec(p: Point) -> [f64; 3] {
        let (f, l) = (p[0].to_radians(), p[1].to_radians());
        [f.cos() * l.cos(), f.cos() * l.sin(), f.sin()]
    }

    #[test]
    fn identity_and_antipodes() {
        for m in [
            Metric::Euclidean,
            Metric::GreatCircle(EARTH_RADIUS_KM),
            Metric::Chordal(EARTH_RADIUS_KM),
        ] {
            assert_eq!(distance([10.0, 20.0], [10.0, 20.0], m).unwrap(), 0.0);
        }
        let (p, q) = ([30.0, 40.0], [-30.0, -140.0]);
        assert_relative_eq!(distance(p, q, Metric::GreatCircle(1.0)).unwrap(), PI, epsilon = 1e-7);
        assert_relative_eq!(distance(p, q, Metric::Chordal(1.0)).unwrap(), 2.0, epsilon = 1e-12);
        assert!(distance([91.0, 0.0], [0.0, 0.0], Metric::Chordal(1.0)).is_err());
    }

    /// Chord length from 3-D unit vectors.
    #[test]
    fn chordal_matches_cartesian_oracle() {
        let (p, q) = ([40.32489, -74.61789], [40.32037, -74.60335]);
        let (u, v) = (unit_vec(p), unit_vec(q));
        let chord = ((u[0] - v[0]).powi(2) + (u[1] - v[1]).powi(2) + (u[2] - v[2]).powi(2)).sqrt() * EARTH_RADIUS_KM;
        let d = distance(p, q, Metric::Chordal(EARTH_RADIUS_KM)).unwrap();
        assert!((d - chord).abs() < 1e-6, "{d} vs {chord}");
        assert!(d > 1.3 && d < 1.35);
    }

    fn spp_closed_form(p: Point) -> f64 {
        let (x1, x2) = (p[0], p[1]);
        match (x1 >= 0.0, x2 >= 0.0) {
            (true, true) => x1.min(x2),
            (false, false) => x1.hypot(x2),
            (false, true) => -x1,
            (true, false) => -x2,
        }
    }

    fn spp_boundary() -> Vec<Point> {
        vec![[0.0, 200.0], [0.0, 0.0], [200.0, 0.0]]
    }

    #[test]
    fn spp_boundary_closed_form() {
        let b = BoundarySpec::new(spp_boundary(), Metric::Euclidean).unwrap();
        let cases = [[3.0, 5.0], [-3.0, -4.0], [-2.0, 7.0], [6.0, -1.5], [0.0, 0.0]];
        for p in cases {
            assert_relative_eq!(b.distance_to(p), spp_closed_form(p), epsilon = 1e-12);
        }
        let stepped = b.with_densify(Densify::Step(0.5)).unwrap();
        for p in cases {
            let d = stepped.distance_to(p);
            assert!(d >= spp_closed_form(p) - 1e-12 && d <= spp_closed_form(p) + 0.25 + 1e-12);
        }
    }

    fn xy_sample(pts: &[Point]) -> RdSample {
        RdSample::new(pts.iter().map(|p| p[0]).collect(), vec![1.0; pts.len()], Cutoff::Scalar(0.0))
            .unwrap()
            .with_score2(pts.iter().map(|p| p[1]).collect())
            .unwrap()
    }

    #[test]
    fn sign_conventions() {
        let s = xy_sample(&[[1.0, 1.0], [1.0, 1.0], [-1.0, 2.0]]);
        let a = [true, false, false];
        let sd = signed_distance_to_point(&s, &a, [1.0, 1.0], Metric::Euclidean).unwrap();
        assert_eq!(sd.sample.score()[0], 0.0);
        assert!(sd.sample.is_treated(0));
        assert!(sd.sample.score()[1] < 0.0);
        assert!(!sd.sample.is_treated(1));
        assert_relative_eq!(sd.sample.score()[2], -5f64.sqrt());
        assert_eq!(sd.min_distance(false), Some(0.0));
    }

    #[test]
    fn single_point_boundary_equals_point() {
        let s = xy_sample(&[[1.0, 2.0], [-3.0, 0.5], [0.2, -0.7]]);
        let a = [true, false, true];
        let b = BoundarySpec::new(vec![[0.3, 0.4]], Metric::Euclidean).unwrap();
        let x = signed_distance_to_boundary(&s, &a, &b).unwrap();
        let y = signed_distance_to_point(&s, &a, [0.3, 0.4], Metric::Euclidean).unwrap();
        assert_eq!(x.sample.score(), y.sample.score());
    }

    #[test]
    fn grid_report_radius_zero() {
        let s = xy_sample(&[[0.0, 0.0], [1.0, 1.0]]);
        let b = BoundarySpec::new(vec![[0.0, 0.0], [1.0, 0.0]], Metric::Euclidean).unwrap();
        let r = boundary_grid_report(&s, &[true, false], &b, 0.0, 1).unwrap();
        assert!(r.iter().all(|row| row.n_treated == 0 && row.n_control == 0 && row.flagged));
        let r = boundary_grid_report(&s, &[true, false], &b, 1.5, 1).unwrap();
        assert_eq!((r[0].n_treated, r[0].n_control, r[0].flagged), (1, 1, false));
    }

    #[test]
    fn spherical_projection_is_close_to_dense_sampling() {
        let boundary = vec![[40.30, -74.65], [40.33, -74.60], [40.31, -74.55]];
        let m = Metric::GreatCircle(EARTH_RADIUS_KM);
        let proj = BoundarySpec::new(boundary.clone(), m).unwrap();
        let dense = BoundarySpec::new(boundary, m).unwrap().with_densify(Densify::Step(0.001)).unwrap();
        for p in [[40.32, -74.62], [40.28, -74.58], [40.35, -74.57]] {
            let (a, b) = (proj.distance_to(p), dense.distance_to(p));
            assert!((a - b).abs() < 1e-3, "{a} vs {b}");
        }
    }

    fn arb_latlon() -> impl Strategy<Value = Point> {
        (-89.0f64..89.0, -179.0f64..179.0).prop_map(|(a, b)| [a, b])
    }

    proptest! {
        #[test]
        fn metric_axioms(p in arb_latlon(), q in arb_latlon(), r in arb_latlon()) {
            for m in [Metric::Euclidean, Metric::GreatCircle(EARTH_RADIUS_KM), Metric::Chordal(EARTH_RADIUS_KM)] {
                let (pq, qp) = (distance(p, q, m).unwrap(), distance(q, p, m).unwrap());
                prop_assert!((pq - qp).abs() < 1e-9);
                let pr = distance(p, r, m).unwrap();
                let rq = distance(r, q, m).unwrap();
                prop_assert!(pq <= pr + rq + 1e-9);
            }
            let c = distance(p, q, Metric::Chordal(EARTH_RADIUS_KM)).unwrap();
            let g = distance(p, q, Metric::GreatCircle(EARTH_RADIUS_KM)).unwrap();
            prop_assert!(c <= g + 1e-9);
        }

        #[test]
        fn euclidean_rotation_invariance(
            pts in prop::collection::vec((-10.0f64..10.0, -10.0f64..10.0), 1..20),
            theta in 0.0f64..std::f64::consts::TAU,
        ) {
            let rot = |p: Point| [p[0] * theta.cos() - p[1] * theta.sin(), p[0] * theta.sin() + p[1] * theta.cos()];
            let pts: Vec<Point> = pts.into_iter().map(|(a, b)| [a, b]).collect();
            let boundary = vec![[-5.0, 1.0], [0.0, 0.0], [4.0, 3.0]];
            let a: Vec<bool> = pts.iter().map(|p| p[1] > 0.0).collect();
            let b0 = BoundarySpec::new(boundary.clone(), Metric::Euclidean).unwrap();
            let b1 = BoundarySpec::new(boundary.into_iter().map(rot).collect(), Metric::Euclidean).unwrap();
            let s0 = xy_sample(&pts);
            let s1 = xy_sample(&pts.iter().map(|&p| rot(p)).collect::<Vec<_>>());
            let d0 = signed_distance_to_boundary(&s0, &a, &b0).unwrap();
            let d1 = signed_distance_to_boundary(&s1, &a, &b1).unwrap();
            for (x, y) in d0.sample.score().iter().zip(d1.sample.score()) {
                prop_assert!((x - y).abs() < 1e-9);
            }
        }
    }
}
