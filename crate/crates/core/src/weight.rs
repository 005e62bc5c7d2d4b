//! The degenerate weight `w = d(x, ∂Ω)^α`, element quadrature that stays
//! accurate where `w` vanishes or blows up, and a sampled A2 diagnostic.

use std::f64::consts::PI;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::mesh::{Domain, Mesh, Point};
use crate::quadrature::{gauss_legendre, triangle_rule, Grading, Rule1D};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WeightSpec {
    pub alpha: f64,
    pub domain: Domain,
}

impl WeightSpec {
    pub fn new(alpha: f64, domain: Domain) -> Result<WeightSpec> {
        if !(alpha > -1.0 && alpha < 1.0) {
            return Err(Error::Domain(format!("alpha must lie in (-1, 1), got {alpha}")));
        }
        Ok(WeightSpec { alpha, domain })
    }

    pub fn is_unweighted(&self) -> bool {
        self.alpha == 0.0
    }

    /// `d^α` for a known distance, without domain checks.
    #[inline]
    pub fn of_distance(&self, d: f64) -> f64 {
        if self.alpha == 0.0 {
            1.0
        } else {
            d.powf(self.alpha)
        }
    }

    /// `w(p)` for points in the closed domain; on the boundary this is 0 or ∞.
    pub(crate) fn at(&self, p: Point) -> Result<f64> {
        Ok(self.of_distance(self.domain.distance(p)?))
    }
}

/// `d(x, ∂Ω)^α` at a point strictly inside the domain.
pub fn weight_value(spec: &WeightSpec, point: Point) -> Result<f64> {
    let d = spec.domain.distance(point)?;
    if d <= 0.0 {
        return Err(Error::Domain(format!(
            "weight evaluated on the boundary at ({}, {})",
            point[0], point[1]
        )));
    }
    Ok(spec.of_distance(d))
}

/// A quadrature node: `dx` is the Lebesgue weight, `w` the weight value there.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct QuadPoint {
    pub point: Point,
    pub dx: f64,
    pub w: f64,
}

impl QuadPoint {
    #[inline]
    pub fn weighted(&self) -> f64 {
        self.dx * self.w
    }
}

/// Quadrature for `∫_T f w dx` on triangle `t` of `mesh`.
pub fn element_quadrature(
    spec: &WeightSpec,
    mesh: &Mesh,
    t: usize,
    order: usize,
) -> Result<Vec<QuadPoint>> {
    triangle_quadrature(spec, mesh.triangle_points(t), order, &Grading::default())
}

/// Quadrature on an arbitrary triangle of the domain.
///
/// Without a vertex on `∂Ω` (or for `α = 0`) this is the symmetric rule of
/// the given order. Otherwise the triangle is written in collapsed
/// coordinates and graded toward the boundary vertex or edge; a triangle with
/// all three vertices on `∂Ω` is first split at its centroid.
pub fn triangle_quadrature(
    spec: &WeightSpec,
    tri: [Point; 3],
    order: usize,
    grading: &Grading,
) -> Result<Vec<QuadPoint>> {
    let area = signed_area(tri);
    if !(area > 0.0) {
        return Err(Error::Numeric(format!("degenerate triangle (signed area {area:e})")));
    }
    let on_boundary: Vec<usize> = (0..3).filter(|&k| spec.domain.on_boundary(tri[k])).collect();
    if spec.is_unweighted() || on_boundary.is_empty() {
        let rule = triangle_rule(order);
        return rule
            .bary
            .iter()
            .zip(&rule.weights)
            .map(|(b, &wt)| {
                let p = [
                    b[0] * tri[0][0] + b[1] * tri[1][0] + b[2] * tri[2][0],
                    b[0] * tri[0][1] + b[1] * tri[1][1] + b[2] * tri[2][1],
                ];
                Ok(QuadPoint { point: p, dx: wt * area, w: spec.at(p)? })
            })
            .collect();
    }
    let u_points = order / 2 + 4;
    let mut out = Vec::new();
    match on_boundary.len() {
        1 => {
            let k = on_boundary[0];
            let (c, a, b) = (tri[k], tri[(k + 1) % 3], tri[(k + 2) % 3]);
            let t_rule = grading.toward_zero(spec.alpha + 1.0);
            from_vertex(spec, [a, b, c], &t_rule, gauss_legendre(u_points), &mut out)?;
        }
        2 => {
            let k = (0..3).find(|k| !on_boundary.contains(k)).unwrap();
            let (c, a, b) = (tri[k], tri[(k + 1) % 3], tri[(k + 2) % 3]);
            let s_rule = grading.toward_zero(spec.alpha);
            from_edge(spec, [a, b, c], &s_rule, &grading.toward_both(), &mut out)?;
        }
        _ => {
            let g = [
                (tri[0][0] + tri[1][0] + tri[2][0]) / 3.0,
                (tri[0][1] + tri[1][1] + tri[2][1]) / 3.0,
            ];
            let s_rule = grading.toward_zero(spec.alpha);
            let u_rule = grading.toward_both();
            for k in 0..3 {
                from_edge(spec, [tri[k], tri[(k + 1) % 3], g], &s_rule, &u_rule, &mut out)?;
            }
        }
    }
    Ok(out)
}

/// Collapsed tensor rule with the apex `C` of `tri = [A, B, C]` at `t = 0`.
fn from_vertex(
    spec: &WeightSpec,
    tri: [Point; 3],
    t_rule: &Rule1D,
    u_rule: &Rule1D,
    out: &mut Vec<QuadPoint>,
) -> Result<()> {
    let [a, b, c] = tri;
    let jac = 2.0 * signed_area(tri).abs();
    out.reserve(t_rule.len() * u_rule.len());
    for (&t, &wt) in t_rule.nodes.iter().zip(&t_rule.weights) {
        for (&u, &wu) in u_rule.nodes.iter().zip(&u_rule.weights) {
            let p = [
                c[0] + t * (a[0] - c[0]) + t * u * (b[0] - a[0]),
                c[1] + t * (a[1] - c[1]) + t * u * (b[1] - a[1]),
            ];
            out.push(QuadPoint { point: p, dx: jac * t * wt * wu, w: spec.at(p)? });
        }
    }
    Ok(())
}

/// Collapsed tensor rule with the edge `AB` at `s = 0`. Points are built
/// from the edge outward so tiny distances keep their relative precision.
fn from_edge(
    spec: &WeightSpec,
    tri: [Point; 3],
    s_rule: &Rule1D,
    u_rule: &Rule1D,
    out: &mut Vec<QuadPoint>,
) -> Result<()> {
    let [a, b, c] = tri;
    let jac = 2.0 * signed_area(tri).abs();
    out.reserve(s_rule.len() * u_rule.len());
    for (&s, &ws) in s_rule.nodes.iter().zip(&s_rule.weights) {
        for (&u, &wu) in u_rule.nodes.iter().zip(&u_rule.weights) {
            let e = [a[0] + u * (b[0] - a[0]), a[1] + u * (b[1] - a[1])];
            let p = [e[0] + s * (c[0] - e[0]), e[1] + s * (c[1] - e[1])];
            out.push(QuadPoint { point: p, dx: jac * (1.0 - s) * ws * wu, w: spec.at(p)? });
        }
    }
    Ok(())
}

fn signed_area(tri: [Point; 3]) -> f64 {
    let [p, q, r] = tri;
    0.5 * ((q[0] - p[0]) * (r[1] - p[1]) - (r[0] - p[0]) * (q[1] - p[1]))
}

/// `∫_T w dx` for every triangle (the P1 stiffness only needs these).
pub fn weighted_areas(spec: &WeightSpec, mesh: &Mesh) -> Result<Vec<f64>> {
    if spec.is_unweighted() {
        return Ok((0..mesh.triangle_count()).map(|t| mesh.area(t)).collect());
    }
    (0..mesh.triangle_count())
        .into_par_iter()
        .map(|t| Ok(element_quadrature(spec, mesh, t, 2)?.iter().map(QuadPoint::weighted).sum()))
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Ball {
    pub cx: f64,
    pub cy: f64,
    pub r: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct A2Report {
    pub alpha: f64,
    pub constant_estimate: f64,
    pub ball_count: usize,
    pub worst_ball: Ball,
}

/// Seeded ball sampler. Ball `i` depends only on `(seed, i)`, so samples are
/// nested and the running maximum is nondecreasing in the ball count.
fn sample_balls(domain: &Domain, n: usize, seed: u64) -> Vec<Ball> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let c = domain.center();
    let half = 0.5 * match domain {
        Domain::Disk { radius } => 2.0 * radius,
        Domain::UnitSquare => 1.0,
    };
    let mut balls = Vec::with_capacity(n);
    while balls.len() < n {
        let p = [
            c[0] + half * (2.0 * rng.gen::<f64>() - 1.0),
            c[1] + half * (2.0 * rng.gen::<f64>() - 1.0),
        ];
        let shrink: f64 = rng.gen();
        let Ok(d) = domain.distance(p) else { continue };
        if d <= 0.0 {
            continue;
        }
        // Half the balls touch ∂Ω, where the product of averages is largest.
        let r = if shrink < 0.5 { d } else { d * (2.0 * shrink - 1.0).max(1e-3) };
        balls.push(Ball { cx: p[0], cy: p[1], r });
    }
    balls
}

/// `{avg_B w}{avg_B w⁻¹}` by polar quadrature about the ball center, graded
/// toward the radius and the direction of the nearest boundary point.
pub fn ball_product(spec: &WeightSpec, ball: &Ball) -> f64 {
    if spec.is_unweighted() {
        return 1.0;
    }
    let grading = Grading::default();
    let rho = grading.toward_zero(0.0).reversed();
    let theta = grading.toward_zero(0.0);
    let c = [ball.cx, ball.cy];
    let q = spec.domain.project_to_boundary(c);
    let theta0 = (q[1] - c[1]).atan2(q[0] - c[0]);
    let (mut vol, mut sw, mut sinv) = (0.0, 0.0, 0.0);
    for side in [1.0, -1.0] {
        for (&s, &ws) in theta.nodes.iter().zip(&theta.weights) {
            let th = theta0 + side * PI * s;
            let (sn, cs) = th.sin_cos();
            for (&t, &wt) in rho.nodes.iter().zip(&rho.weights) {
                let r = ball.r * t;
                let p = [c[0] + r * cs, c[1] + r * sn];
                let d = spec.domain.distance(p).unwrap_or(0.0).max(f64::MIN_POSITIVE);
                let dv = ws * wt * t;
                let w = spec.of_distance(d);
                vol += dv;
                sw += dv * w;
                sinv += dv / w;
            }
        }
    }
    (sw / vol) * (sinv / vol)
}

/// Largest sampled product of averages over `n_balls` balls inside Ω.
pub fn a2_constant_estimate(spec: &WeightSpec, n_balls: usize, seed: u64) -> Result<A2Report> {
    if n_balls == 0 {
        return Err(Error::Domain("a2 estimate needs at least one ball".into()));
    }
    let balls = sample_balls(&spec.domain, n_balls, seed);
    let products: Vec<f64> = balls.par_iter().map(|b| ball_product(spec, b)).collect();
    let (best, value) = products
        .iter()
        .enumerate()
        .fold((0, f64::NEG_INFINITY), |acc, (i, &v)| if v > acc.1 { (i, v) } else { acc });
    Ok(A2Report {
        alpha: spec.alpha,
        constant_estimate: value,
        ball_count: n_balls,
        worst_ball: balls[best],
    })
}

/// `{1/R ∫₀^R (R−r)^α dr}{1/R ∫₀^R (R−r)^{−α} dr}` by graded quadrature.
pub fn radial_a2_product(alpha: f64, radius: f64) -> f64 {
    let grading = Grading::default();
    let avg = |a: f64| {
        let rule = grading.toward_zero(a);
        rule.integrate(0.0, radius, |s| s.powf(a)) / radius
    };
    avg(alpha) * avg(-alpha)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mesh::{generate_disk_mesh, BoundaryPartitionRule};
    use proptest::prelude::*;

    const DISK: Domain = Domain::Disk { radius: 1.0 };

    #[test]
    fn weight_examples() {
        let w = |a: f64, p: Point| weight_value(&WeightSpec::new(a, DISK).unwrap(), p).unwrap();
        assert_eq!(w(0.0, [0.3, -0.2]), 1.0);
        assert!((w(0.5, [0.75, 0.0]) - 0.5).abs() < 1e-15);
        assert!((w(-0.5, [0.96, 0.0]) - 5.0).abs() < 1e-12);
        let spec = WeightSpec::new(0.5, DISK).unwrap();
        assert!(weight_value(&spec, [1.0, 0.0]).is_err());
        assert!(weight_value(&spec, [1.2, 0.0]).is_err());
        assert!(WeightSpec::new(1.0, DISK).is_err());
    }

    #[test]
    fn unweighted_rule_is_the_standard_rule() {
        let mesh = generate_disk_mesh(1.0, 0.25, &BoundaryPartitionRule::FullDirichlet).unwrap();
        let spec = WeightSpec::new(0.0, DISK).unwrap();
        for t in 0..mesh.triangle_count() {
            let q = element_quadrature(&spec, &mesh, t, 4).unwrap();
            let rule = triangle_rule(4);
            assert_eq!(q.len(), rule.weights.len());
            for (qp, &wt) in q.iter().zip(&rule.weights) {
                assert_eq!(qp.weighted(), wt * mesh.area(t));
            }
            let sum: f64 = q.iter().map(|p| p.weighted()).sum();
            assert!((sum - mesh.area(t)).abs() <= 1e-15 * mesh.area(t).max(1.0));
        }
    }

    fn square_triangle(alpha: f64, tri: [Point; 3]) -> f64 {
        let spec = WeightSpec::new(alpha, Domain::UnitSquare).unwrap();
        triangle_quadrature(&spec, tri, 4, &Grading::default())
            .unwrap()
            .iter()
            .map(QuadPoint::weighted)
            .sum()
    }

    #[test]
    fn boundary_edge_triangle_matches_closed_form() {
        // d = y on this triangle; the width at height y is 1/2 − 2y.
        for &a in &[-0.9, -0.5, 0.5, 0.9] {
            let got = square_triangle(a, [[0.25, 0.0], [0.75, 0.0], [0.5, 0.25]]);
            let exact = 0.5 * 0.25f64.powf(a + 1.0) / (a + 1.0) - 2.0 * 0.25f64.powf(a + 2.0) / (a + 2.0);
            assert!((got - exact).abs() < 1e-9 * exact, "a={a}: {got} vs {exact}");
        }
    }

    #[test]
    fn boundary_vertex_triangle_matches_closed_form() {
        // Apex on y = 0, width 2y.
        for &a in &[-0.9, -0.5, 0.5, 0.9] {
            let got = square_triangle(a, [[0.5, 0.0], [0.75, 0.25], [0.25, 0.25]]);
            let exact = 2.0 * 0.25f64.powf(a + 2.0) / (a + 2.0);
            assert!((got - exact).abs() < 1e-9 * exact, "a={a}: {got} vs {exact}");
        }
    }

    #[test]
    fn radial_product_is_closed_form() {
        for &a in &[0.0, 0.25, 0.5, 0.75, -0.5] {
            let got = radial_a2_product(a, 1.0);
            assert!((got - 1.0 / (1.0 - a * a)).abs() < 1e-9, "a={a}: {got}");
        }
    }

    #[test]
    fn a2_estimates() {
        let est = |a: f64| {
            a2_constant_estimate(&WeightSpec::new(a, DISK).unwrap(), 32, 7).unwrap().constant_estimate
        };
        assert_eq!(est(0.0), 1.0);
        let (e5, e9) = (est(0.5), est(0.9));
        assert!(e5 > 1.0 && e9 > e5);
        assert!((est(-0.5) - e5).abs() <= 0.05 * e5);
    }

    #[test]
    fn a2_is_monotone_in_ball_count() {
        let spec = WeightSpec::new(0.6, DISK).unwrap();
        let mut last = 0.0;
        for n in [1, 4, 16, 64] {
            let e = a2_constant_estimate(&spec, n, 3).unwrap().constant_estimate;
            assert!(e >= last);
            last = e;
        }
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]

        #[test]
        fn distance_is_one_lipschitz(
            x in -0.7f64..0.7, y in -0.7f64..0.7, u in -0.7f64..0.7, v in -0.7f64..0.7,
        ) {
            for domain in [DISK, Domain::UnitSquare] {
                let shift = if domain == DISK { 0.0 } else { 0.5 };
                let p = [shift + 0.7 * x, shift + 0.7 * y];
                let q = [shift + 0.7 * u, shift + 0.7 * v];
                let dp = domain.distance(p).unwrap();
                let dq = domain.distance(q).unwrap();
                prop_assert!((dp - dq).abs() <= (p[0] - q[0]).hypot(p[1] - q[1]) + 1e-15);
            }
        }

        #[test]
        fn ball_product_is_at_least_one_and_even(
            cx in -0.6f64..0.6, cy in -0.6f64..0.6, frac in 0.05f64..1.0, a in 0.05f64..0.95,
        ) {
            let d = DISK.distance([cx, cy]).unwrap();
            let ball = Ball { cx, cy, r: frac * d };
            let plus = ball_product(&WeightSpec::new(a, DISK).unwrap(), &ball);
            let minus = ball_product(&WeightSpec::new(-a, DISK).unwrap(), &ball);
            prop_assert!(plus >= 1.0);
            prop_assert!((plus - minus).abs() <= 1e-12 * plus);
        }
    }
}
