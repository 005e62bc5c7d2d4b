//! Functionals the a-priori estimates are phrased in, and refinement studies
//! that measure them.
//!
//! Everything is evaluated at quadrature level: `u` is the P1 interpolant,
//! `∇u` is constant per triangle, and `d^α` is integrated with the graded
//! element rules of [`crate::weight`].

use std::fmt::Write as _;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, StudentsT};

use crate::error::{Error, Result};
use crate::measure::{MollifiedMeasure, TestField};
use crate::mesh::{refine, Mesh, Point};
use crate::quadrature::{gauss_legendre, Grading};
use crate::solver::{DiscreteSolution, Discretization, ProblemSpec, SolverOptions};
use crate::weight::{triangle_quadrature, weighted_areas, WeightSpec};

/// `φ_θ(r) = ∫_0^r (1+t)^{−θ} dt`, extended oddly.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PhiTheta {
    theta: f64,
}

impl PhiTheta {
    pub fn new(theta: f64) -> Result<PhiTheta> {
        if !(theta > 1.0) || !theta.is_finite() {
            return Err(Error::Domain(format!("phi_theta needs theta > 1, got {theta}")));
        }
        Ok(PhiTheta { theta })
    }

    pub fn theta(&self) -> f64 {
        self.theta
    }

    pub fn eval(&self, r: f64) -> f64 {
        let a = 1.0 - self.theta;
        // ((1+|r|)^a − 1)/a without cancellation for small |r|.
        let v = (a * r.abs().ln_1p()).exp_m1() / a;
        v.copysign(r)
    }

    /// `sup |φ_θ| = 1/(θ−1)`.
    pub fn bound(&self) -> f64 {
        1.0 / (self.theta - 1.0)
    }
}

/// `ψ(s) = min((s−t)⁺, 1)` for `s ≥ 0`, extended oddly.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PsiTruncation {
    t: f64,
}

impl PsiTruncation {
    pub fn new(t: f64) -> Result<PsiTruncation> {
        if !(t >= 0.0) || !t.is_finite() {
            return Err(Error::Domain(format!("truncation level must be >= 0, got {t}")));
        }
        Ok(PsiTruncation { t })
    }

    pub fn eval(&self, s: f64) -> f64 {
        (s.abs() - self.t).clamp(0.0, 1.0).copysign(s)
    }
}

/// Per-triangle nodes for `∫_T f(u) d^α dx`, stored as barycentric
/// coordinates and weights. Each triangle's weights are rescaled to sum to its
/// weighted area, so gradient terms agree with the stiffness to rounding.
#[derive(Debug, Clone)]
struct FieldQuadrature {
    offsets: Vec<usize>,
    bary: Vec<[f64; 3]>,
    weights: Vec<f64>,
}

const FIELD_ORDER: usize = 5;
const FIELD_GRADING: Grading = Grading { ratio: 0.25, depth: 8, points: 4 };

impl FieldQuadrature {
    fn new(weight: &WeightSpec, mesh: &Mesh, areas: &[f64]) -> Result<FieldQuadrature> {
        let per: Vec<(Vec<[f64; 3]>, Vec<f64>)> = (0..mesh.triangle_count())
            .into_par_iter()
            .map(|t| {
                let qp = triangle_quadrature(weight, mesh.triangle_points(t), FIELD_ORDER, &FIELD_GRADING)?;
                let total: f64 = qp.iter().map(|q| q.weighted()).sum();
                let scale = areas[t] / total;
                let bary = qp.iter().map(|q| mesh.barycentric(t, q.point)).collect();
                let w = qp.iter().map(|q| q.weighted() * scale).collect();
                Ok((bary, w))
            })
            .collect::<Result<_>>()?;
        let mut offsets = Vec::with_capacity(per.len() + 1);
        offsets.push(0);
        let mut bary = Vec::new();
        let mut weights = Vec::new();
        for (b, w) in per {
            bary.extend(b);
            weights.extend(w);
            offsets.push(weights.len());
        }
        Ok(FieldQuadrature { offsets, bary, weights })
    }

    /// `(u(x_k), w_k)` over the nodes of triangle `t`.
    fn values<'a>(&'a self, t: usize, tri: [usize; 3], u: &'a [f64]) -> impl Iterator<Item = (f64, f64)> + 'a {
        let range = self.offsets[t]..self.offsets[t + 1];
        self.bary[range.clone()]
            .iter()
            .zip(&self.weights[range])
            .map(move |(b, &w)| (b[0] * u[tri[0]] + b[1] * u[tri[1]] + b[2] * u[tri[2]], w))
    }
}

/// Terms of the Hölder step `∫d^α|∇u|^q ≤ E_θ^{q/2} (∫d^α(1+|u|)^{θq/(2−q)})^{(2−q)/2}`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct HolderChain {
    pub q: f64,
    pub theta: f64,
    pub lhs: f64,
    pub phi_energy: f64,
    pub power_integral: f64,
    pub rhs: f64,
}

impl HolderChain {
    /// `(rhs − lhs)/max(rhs, tiny)`; nonnegative when the inequality holds.
    pub fn relative_slack(&self) -> f64 {
        (self.rhs - self.lhs) / self.rhs.max(f64::MIN_POSITIVE)
    }
}

/// Quantities of the level-set estimate at level `t`, with
/// `E_t = {|u| ≥ t}` and `E⁰_t` its trace on Γ₂.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct LevelSetTail {
    pub t: f64,
    /// `∫_{E⁰_t} |u|^γ`.
    pub boundary_tail: f64,
    /// `∫_{E⁰_{t+1}} |u|^γ`, the left side of the estimate.
    pub shifted_boundary_tail: f64,
    /// `∫_{E⁰_t} |μ₂ⁿ|`.
    pub boundary_mass_tail: f64,
    /// `∫_{E_t} |μ₁ⁿ|`.
    pub interior_mass_tail: f64,
    /// `∫_{E_t} d^α |∇u|²`.
    pub gradient_tail: f64,
    /// Lebesgue measure of `E_t`.
    pub lebesgue_e: f64,
}

impl LevelSetTail {
    pub fn rhs(&self, c: f64) -> f64 {
        self.boundary_mass_tail + self.interior_mass_tail + c * self.gradient_tail
    }

    pub fn holds(&self, c: f64) -> bool {
        self.shifted_boundary_tail <= self.rhs(c) * (1.0 + 1e-12) + 1e-300
    }
}

/// Lᵠ part and Gagliardo double integral of a trace, both as raw integrals.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct TraceNorm {
    pub q: f64,
    pub order: f64,
    pub lq_integral: f64,
    pub gagliardo_integral: f64,
}

impl TraceNorm {
    pub fn seminorm(&self) -> f64 {
        self.gagliardo_integral.powf(1.0 / self.q)
    }

    pub fn norm(&self) -> f64 {
        (self.lq_integral + self.gagliardo_integral).powf(1.0 / self.q)
    }
}

/// Functionals of P1 fields on one mesh for one weight exponent.
#[derive(Debug, Clone)]
pub struct Functionals<'a> {
    mesh: &'a Mesh,
    alpha: f64,
    areas: Vec<f64>,
    quad: FieldQuadrature,
}

const EDGE_POINTS: usize = 6;

impl<'a> Functionals<'a> {
    pub fn new(mesh: &'a Mesh, alpha: f64) -> Result<Functionals<'a>> {
        let weight = WeightSpec::new(alpha, *mesh.domain())?;
        let areas = weighted_areas(&weight, mesh)?;
        Self::with_areas(mesh, alpha, areas)
    }

    /// Reuses the weighted areas already computed for the stiffness.
    pub fn for_discretization(disc: &'a Discretization) -> Result<Functionals<'a>> {
        Self::with_areas(disc.mesh(), disc.spec.alpha, disc.weighted_areas().to_vec())
    }

    fn with_areas(mesh: &'a Mesh, alpha: f64, areas: Vec<f64>) -> Result<Functionals<'a>> {
        let weight = WeightSpec::new(alpha, *mesh.domain())?;
        let quad = FieldQuadrature::new(&weight, mesh, &areas)?;
        Ok(Functionals { mesh, alpha, areas, quad })
    }

    pub fn mesh(&self) -> &Mesh {
        self.mesh
    }

    pub fn alpha(&self) -> f64 {
        self.alpha
    }

    fn check_len(&self, u: &[f64]) {
        assert_eq!(u.len(), self.mesh.vertex_count(), "field length must match the vertex count");
    }

    fn grad_sq(&self, t: usize, u: &[f64]) -> f64 {
        let tri = self.mesh.triangles()[t];
        let g = self.mesh.hat_gradients(t);
        let gx: f64 = (0..3).map(|i| u[tri[i]] * g[i][0]).sum();
        let gy: f64 = (0..3).map(|i| u[tri[i]] * g[i][1]).sum();
        gx * gx + gy * gy
    }

    /// `Σ_T ∫_T d^α f(u, |∇u_T|²)` in parallel, summed in triangle order.
    fn integrate(&self, u: &[f64], f: impl Fn(f64, f64) -> f64 + Sync) -> f64 {
        self.check_len(u);
        let per: Vec<f64> = (0..self.mesh.triangle_count())
            .into_par_iter()
            .map(|t| {
                let g2 = self.grad_sq(t, u);
                let tri = self.mesh.triangles()[t];
                self.quad.values(t, tri, u).map(|(v, w)| w * f(v, g2)).sum()
            })
            .collect();
        per.iter().sum()
    }

    /// `∫ d^α |∇u|² / (1+|u|)^θ`.
    pub fn phi_theta_energy(&self, u: &[f64], theta: f64) -> Result<f64> {
        PhiTheta::new(theta)?;
        Ok(self.integrate(u, |v, g2| g2 * (1.0 + v.abs()).powf(-theta)))
    }

    /// `∫ d^α |∇u|^q`, exact given the weighted areas.
    pub fn gradient_lq(&self, u: &[f64], q: f64) -> f64 {
        self.check_len(u);
        (0..self.mesh.triangle_count())
            .map(|t| self.areas[t] * self.grad_sq(t, u).powf(0.5 * q))
            .sum()
    }

    /// `∫ d^α |u|^p`.
    pub fn weighted_lp(&self, u: &[f64], p: f64) -> f64 {
        self.integrate(u, |v, _| v.abs().powf(p))
    }

    /// `(∫ d^α (|u|^q + |∇u|^q))^{1/q}`.
    pub fn weighted_w1q_norm(&self, u: &[f64], q: f64) -> Result<f64> {
        if !(q >= 1.0) || !q.is_finite() {
            return Err(Error::Domain(format!("W^{{1,q}} norm needs q >= 1, got {q}")));
        }
        Ok((self.weighted_lp(u, q) + self.gradient_lq(u, q)).powf(1.0 / q))
    }

    /// Both sides of the Hölder step for `q ∈ [1, 2)`, computed on one
    /// discrete measure so the inequality is exact up to rounding.
    pub fn holder_chain(&self, u: &[f64], q: f64, theta: f64) -> Result<HolderChain> {
        if !(1.0..2.0).contains(&q) {
            return Err(Error::Domain(format!("Hoelder step needs q in [1, 2), got {q}")));
        }
        PhiTheta::new(theta)?;
        let p = theta * q / (2.0 - q);
        let lhs = self.integrate(u, |_, g2| g2.powf(0.5 * q));
        let phi_energy = self.integrate(u, |v, g2| g2 * (1.0 + v.abs()).powf(-theta));
        let power_integral = self.integrate(u, |v, _| (1.0 + v.abs()).powf(p));
        let rhs = phi_energy.powf(0.5 * q) * power_integral.powf(0.5 * (2.0 - q));
        Ok(HolderChain { q, theta, lhs, phi_energy, power_integral, rhs })
    }

    /// `(∫_Γ₂ |u|^γ)^{1/γ}`.
    pub fn boundary_lgamma_norm(&self, u: &[f64], gamma: f64) -> Result<f64> {
        if !(gamma > 1.0) {
            return Err(Error::Domain(format!("gamma must be > 1, got {gamma}")));
        }
        if !self.mesh.has_flux_boundary() {
            return Err(Error::Domain("boundary L^gamma norm needs a nonempty flux boundary".into()));
        }
        Ok(self.flux_integral(u, |v| v.abs().powf(gamma)).powf(1.0 / gamma))
    }

    fn flux_integral(&self, u: &[f64], f: impl Fn(f64) -> f64) -> f64 {
        self.check_len(u);
        let rule = gauss_legendre(EDGE_POINTS);
        self.mesh
            .flux_edges()
            .map(|e| {
                let len = self.mesh.edge_length(e);
                rule.integrate(0.0, 1.0, |s| f((1.0 - s) * u[e.a] + s * u[e.b])) * len
            })
            .sum()
    }

    /// The terms of the level-set estimate at level `t ≥ 0`.
    pub fn level_set_tail(
        &self,
        u: &[f64],
        t: f64,
        gamma: f64,
        mu1n: &MollifiedMeasure,
        mu2n: &MollifiedMeasure,
    ) -> Result<LevelSetTail> {
        PsiTruncation::new(t)?;
        let tail = |level: f64| self.flux_integral(u, |v| if v.abs() >= level { v.abs().powf(gamma) } else { 0.0 });
        let mass = |m: &MollifiedMeasure| -> f64 {
            m.nodes()
                .iter()
                .filter(|node| node.interpolate(u).abs() >= t)
                .map(|node| node.weight.abs())
                .sum()
        };
        let gradient_tail = self.integrate(u, |v, g2| if v.abs() >= t { g2 } else { 0.0 });
        let lebesgue = triangle_rule_indicator(self.mesh, u, t);
        Ok(LevelSetTail {
            t,
            boundary_tail: tail(t),
            shifted_boundary_tail: tail(t + 1.0),
            boundary_mass_tail: mass(mu2n),
            interior_mass_tail: mass(mu1n),
            gradient_tail,
            lebesgue_e: lebesgue,
        })
    }

    /// Lᵠ(∂Ω) integral and Gagliardo double integral of the trace of `u` in
    /// `W^{s,q}(∂Ω)` with `s = 1 − (1+α)/q`, over the whole boundary.
    pub fn trace_gagliardo_norm(&self, u: &[f64], q: f64) -> Result<TraceNorm> {
        trace_gagliardo_norm(self.mesh, u, q, self.alpha)
    }
}

fn triangle_rule_indicator(mesh: &Mesh, u: &[f64], t: f64) -> f64 {
    let rule = crate::quadrature::triangle_rule(FIELD_ORDER);
    mesh.triangles()
        .iter()
        .enumerate()
        .map(|(k, tri)| {
            let hit: f64 = rule
                .bary
                .iter()
                .zip(&rule.weights)
                .filter(|(b, _)| (b[0] * u[tri[0]] + b[1] * u[tri[1]] + b[2] * u[tri[2]]).abs() >= t)
                .map(|(_, w)| w)
                .sum();
            hit * mesh.area(k)
        })
        .sum()
}

/// Order of the trace space, `s* = 1 − (1+α)/q`, checked to lie in `(0, 1)`.
pub fn trace_order(q: f64, alpha: f64) -> Result<f64> {
    if !(q > 1.0) {
        return Err(Error::Domain(format!("trace seminorm needs q > 1, got {q}")));
    }
    let s = 1.0 - (1.0 + alpha) / q;
    if !(s > 0.0 && s < 1.0) {
        return Err(Error::Domain(format!(
            "trace order s* = 1 - (1 + alpha)/q = {s} must lie in (0, 1) (q = {q}, alpha = {alpha})"
        )));
    }
    Ok(s)
}

/// See [`Functionals::trace_gagliardo_norm`]. Same-edge pairs are closed
/// form, adjacent pairs reduce to one Gauss integral after a Duffy split at
/// the shared vertex, and the rest use tensor Gauss rules refined by proximity.
pub fn trace_gagliardo_norm(mesh: &Mesh, u: &[f64], q: f64, alpha: f64) -> Result<TraceNorm> {
    let order = trace_order(q, alpha)?;
    let lp = mesh.boundary_loop();
    let m = lp.len();
    if m < 3 {
        return Err(Error::InvalidMesh("boundary loop has fewer than three vertices".into()));
    }
    let v = mesh.vertices();
    let edges: Vec<(Point, Point, f64, f64)> = (0..m)
        .map(|i| {
            let (a, b) = (lp[i], lp[(i + 1) % m]);
            (v[a], v[b], u[a], u[b])
        })
        .collect();
    let expo = 1.0 + order * q;
    let len = |e: &(Point, Point, f64, f64)| ((e.1[0] - e.0[0]).powi(2) + (e.1[1] - e.0[1]).powi(2)).sqrt();

    let edge_rule = gauss_legendre(EDGE_POINTS);
    let lq_integral: f64 = edges
        .iter()
        .map(|e| len(e) * edge_rule.integrate(0.0, 1.0, |s| ((1.0 - s) * e.2 + s * e.3).abs().powf(q)))
        .sum();

    let same: f64 = edges
        .iter()
        .map(|e| {
            let l = len(e);
            2.0 * (e.3 - e.2).abs().powf(q) * l.powf(1.0 - order * q) / ((alpha + 1.0) * (alpha + 2.0))
        })
        .sum();

    // Unordered pairs i < j; doubled at the end.
    let off: f64 = (0..m)
        .into_par_iter()
        .map(|i| {
            let mut acc = 0.0;
            for j in i + 1..m {
                let gap = (j - i).min(m - (j - i));
                acc += if gap == 1 {
                    if j == i + 1 {
                        adjacent_pair(&edges[i], &edges[j], q, expo, alpha)
                    } else {
                        adjacent_pair(&edges[j], &edges[i], q, expo, alpha)
                    }
                } else {
                    separated_pair(&edges[i], &edges[j], q, expo, gap)
                };
            }
            acc
        })
        .collect::<Vec<f64>>()
        .iter()
        .sum();

    Ok(TraceNorm { q, order, lq_integral, gagliardo_integral: same + 2.0 * off })
}

/// Edges `first = (P, V)` and `second = (V, Q)` sharing `V`. With
/// `x = V + a(P−V)`, `y = V + b(Q−V)` and the Duffy split `a ≥ b`: `a = ρ,
/// b = ρτ` (and symmetrically), the integrand is `ρ^{α+1} f(τ)` exactly, so
/// the ρ-integral is `1/(α+2)` and only τ needs quadrature.
fn adjacent_pair(
    first: &(Point, Point, f64, f64),
    second: &(Point, Point, f64, f64),
    q: f64,
    expo: f64,
    alpha: f64,
) -> f64 {
    let (p, vtx, gp, gv) = (first.0, first.1, first.2, first.3);
    let (q_pt, gq) = (second.1, second.3);
    let e = [p[0] - vtx[0], p[1] - vtx[1]];
    let f = [q_pt[0] - vtx[0], q_pt[1] - vtx[1]];
    let (a_g, b_g) = (gp - gv, gq - gv);
    let le = e[0].hypot(e[1]);
    let lf = f[0].hypot(f[1]);
    // Integrand in τ for the two halves; |x − y| = ρ|c(τ)|.
    let h1 = |tau: f64| {
        let num = (a_g - tau * b_g).abs().powf(q);
        let d = [e[0] - tau * f[0], e[1] - tau * f[1]];
        num / d[0].hypot(d[1]).powf(expo)
    };
    let h2 = |tau: f64| {
        let num = (tau * a_g - b_g).abs().powf(q);
        let d = [tau * e[0] - f[0], tau * e[1] - f[1]];
        num / d[0].hypot(d[1]).powf(expo)
    };
    // Split at the kink of |·|^q when it falls inside (0, 1).
    let kink1 = if b_g != 0.0 { a_g / b_g } else { f64::NAN };
    let kink2 = if a_g != 0.0 { b_g / a_g } else { f64::NAN };
    let i1 = split_integrate(&h1, kink1);
    let i2 = split_integrate(&h2, kink2);
    le * lf * (i1 + i2) / (alpha + 2.0)
}

fn split_integrate(f: &impl Fn(f64) -> f64, kink: f64) -> f64 {
    let rule = gauss_legendre(24);
    if kink > 0.0 && kink < 1.0 {
        rule.integrate(0.0, kink, f) + rule.integrate(kink, 1.0, f)
    } else {
        rule.integrate(0.0, 1.0, f)
    }
}

fn separated_pair(
    ei: &(Point, Point, f64, f64),
    ej: &(Point, Point, f64, f64),
    q: f64,
    expo: f64,
    gap: usize,
) -> f64 {
    // Near pairs get subdivided tensor rules.
    let (pieces, pts) = match gap {
        2 => (4, 8),
        3 | 4 => (2, 8),
        _ => (1, 6),
    };
    let rule = gauss_legendre(pts);
    let li = (ei.1[0] - ei.0[0]).hypot(ei.1[1] - ei.0[1]);
    let lj = (ej.1[0] - ej.0[0]).hypot(ej.1[1] - ej.0[1]);
    let h = 1.0 / pieces as f64;
    let mut acc = 0.0;
    for pi in 0..pieces {
        for (&s0, &ws) in rule.nodes.iter().zip(&rule.weights) {
            let s = (pi as f64 + s0) * h;
            let x = lerp(ei.0, ei.1, s);
            let gx = (1.0 - s) * ei.2 + s * ei.3;
            for pj in 0..pieces {
                for (&t0, &wt) in rule.nodes.iter().zip(&rule.weights) {
                    let t = (pj as f64 + t0) * h;
                    let y = lerp(ej.0, ej.1, t);
                    let gy = (1.0 - t) * ej.2 + t * ej.3;
                    let r = (x[0] - y[0]).hypot(x[1] - y[1]);
                    acc += ws * wt * (gx - gy).abs().powf(q) / r.powf(expo);
                }
            }
        }
    }
    acc * h * h * li * lj
}

fn lerp(a: Point, b: Point, s: f64) -> Point {
    [a[0] + s * (b[0] - a[0]), a[1] + s * (b[1] - a[1])]
}

/// Least-squares fit of `log(value)` against `log(h)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SlopeFit {
    pub functional: String,
    pub param: f64,
    pub slope: f64,
    pub ci_low: f64,
    pub ci_high: f64,
    pub points: usize,
    pub bounded: bool,
}

pub const BOUNDED_SLOPE: f64 = 0.05;
pub const BOUNDED_CI: f64 = 0.15;

/// Fits the last `max(3, len − 1)` points with a 95% Student-t interval.
/// All-zero data fits as slope 0.
pub fn fit_log_slope(h: &[f64], values: &[f64]) -> Result<(f64, f64, f64, usize)> {
    if h.len() != values.len() || h.len() < 3 {
        return Err(Error::Domain(format!("slope fit needs at least 3 points, got {}", h.len())));
    }
    let take = 3.max(h.len() - 1);
    let (h, values) = (&h[h.len() - take..], &values[values.len() - take..]);
    if values.iter().all(|&v| v == 0.0) {
        return Ok((0.0, 0.0, 0.0, take));
    }
    if values.iter().any(|&v| !(v > 0.0)) || h.iter().any(|&x| !(x > 0.0)) {
        return Err(Error::Numeric("log-log fit needs positive values".into()));
    }
    let x: Vec<f64> = h.iter().map(|v| v.ln()).collect();
    let y: Vec<f64> = values.iter().map(|v| v.ln()).collect();
    let n = take as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let sxx: f64 = x.iter().map(|v| (v - mx).powi(2)).sum();
    let sxy: f64 = x.iter().zip(&y).map(|(a, b)| (a - mx) * (b - my)).sum();
    let slope = sxy / sxx;
    let sse: f64 = x.iter().zip(&y).map(|(a, b)| (b - my - slope * (a - mx)).powi(2)).sum();
    let dof = n - 2.0;
    let se = (sse / dof / sxx).sqrt();
    let tq = StudentsT::new(0.0, 1.0, dof)
        .map_err(|e| Error::Numeric(format!("Student-t: {e}")))?
        .inverse_cdf(0.975);
    Ok((slope, slope - tq * se, slope + tq * se, take))
}

impl SlopeFit {
    pub fn new(functional: &str, param: f64, h: &[f64], values: &[f64]) -> Result<SlopeFit> {
        let (slope, ci_low, ci_high, points) = fit_log_slope(h, values)?;
        let bounded = slope.abs() < BOUNDED_SLOPE && ci_low > -BOUNDED_CI && ci_high < BOUNDED_CI;
        Ok(SlopeFit { functional: functional.to_string(), param, slope, ci_low, ci_high, points, bounded })
    }
}

/// A critical exponent the measured ranges are compared against.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Threshold {
    pub label: String,
    pub delta: Option<f64>,
    pub value: f64,
}

pub const DELTA_GRID: [f64; 3] = [0.05, 0.1, 0.2];

/// `N/(N−1)` for the unweighted problem; `(2N+2δ(N−1))/(2N−1+δ)` on the δ-grid
/// otherwise (N = 2). None of these δ are certified.
pub fn thresholds(alpha: f64) -> Vec<Threshold> {
    let n = 2.0;
    if alpha == 0.0 {
        return vec![Threshold { label: "N/(N-1)".into(), delta: None, value: n / (n - 1.0) }];
    }
    DELTA_GRID
        .iter()
        .map(|&d| Threshold {
            label: "(2N+2d(N-1))/(2N-1+d)".into(),
            delta: Some(d),
            value: (2.0 * n + 2.0 * d * (n - 1.0)) / (2.0 * n - 1.0 + d),
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportRow {
    pub level: usize,
    pub h_max: f64,
    pub n: u32,
    pub functional: String,
    pub param: f64,
    pub value: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegularityReport {
    pub alpha: f64,
    pub gamma: f64,
    pub rows: Vec<ReportRow>,
    pub fits: Vec<SlopeFit>,
    pub thresholds: Vec<Threshold>,
}

impl RegularityReport {
    pub fn to_csv(&self) -> String {
        let mut s = String::from("level,h_max,n,functional,param,value\n");
        for r in &self.rows {
            let _ = writeln!(s, "{},{},{},{},{},{}", r.level, r.h_max, r.n, r.functional, r.param, r.value);
        }
        s
    }

    pub fn to_json(&self) -> Result<String> {
        #[derive(Serialize)]
        struct Summary<'a> {
            alpha: f64,
            gamma: f64,
            fits: &'a [SlopeFit],
            thresholds: &'a [Threshold],
        }
        Ok(serde_json::to_string_pretty(&Summary {
            alpha: self.alpha,
            gamma: self.gamma,
            fits: &self.fits,
            thresholds: &self.thresholds,
        })?)
    }

    /// Values of one functional/parameter in row order.
    pub fn series(&self, functional: &str, param: f64) -> Vec<&ReportRow> {
        self.rows.iter().filter(|r| r.functional == functional && r.param == param).collect()
    }

    pub fn fit(&self, functional: &str, param: f64) -> Option<&SlopeFit> {
        self.fits.iter().find(|f| f.functional == functional && f.param == param)
    }
}

/// Mollification index as a function of mesh level: `n = base + per_level·level`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NRule {
    pub base: u32,
    pub per_level: u32,
}

impl NRule {
    pub fn at(&self, level: usize) -> u32 {
        self.base + self.per_level * level as u32
    }
}

/// What a refinement study tabulates.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct StudyPlan {
    pub levels: usize,
    pub n_rule: NRule,
    pub q_grid: Vec<f64>,
    /// Trace exponents; each must give an order in (0, 1).
    pub trace_q_grid: Vec<f64>,
    pub theta_grid: Vec<f64>,
    /// Exponents for the Hölder check; must lie in [1, 2).
    pub holder_q_grid: Vec<f64>,
}

impl Default for StudyPlan {
    fn default() -> Self {
        StudyPlan {
            levels: 4,
            n_rule: NRule { base: 2, per_level: 1 },
            q_grid: vec![1.2, 1.5, 1.8, 2.0],
            trace_q_grid: Vec::new(),
            theta_grid: vec![1.5],
            holder_q_grid: vec![1.2, 1.5],
        }
    }
}

impl StudyPlan {
    pub fn validate(&self, alpha: f64) -> Result<()> {
        if self.levels < 3 {
            return Err(Error::Domain(format!("a study needs at least 3 levels, got {}", self.levels)));
        }
        if let Some(q) = self.q_grid.iter().find(|q| !(**q >= 1.0)) {
            return Err(Error::Domain(format!("q_grid entries must be >= 1, got {q}")));
        }
        for &q in &self.trace_q_grid {
            trace_order(q, alpha)?;
        }
        for &th in &self.theta_grid {
            PhiTheta::new(th)?;
        }
        if let Some(q) = self.holder_q_grid.iter().find(|q| !(1.0..2.0).contains(*q)) {
            return Err(Error::Domain(format!("holder_q_grid entries must lie in [1, 2), got {q}")));
        }
        Ok(())
    }
}

/// Rows for one solved field. Functional names used in reports:
/// `w1q_norm`, `grad_lq`, `dirichlet_energy`, `phi_theta_energy`,
/// `boundary_lgamma_norm`, `trace_norm`, `trace_seminorm`, `holder_slack`,
/// `weak_residual`, `newton_iterations`.
pub fn evaluate_solution(
    disc: &Discretization,
    func: &Functionals,
    sol: &DiscreteSolution,
    plan: &StudyPlan,
    level: usize,
) -> Result<Vec<ReportRow>> {
    let u = &sol.coefficients;
    let h_max = disc.mesh().h_max();
    let row = |functional: &str, param: f64, value: f64| ReportRow {
        level,
        h_max,
        n: sol.n,
        functional: functional.into(),
        param,
        value,
    };
    let mut rows = Vec::new();
    for &q in &plan.q_grid {
        rows.push(row("w1q_norm", q, func.weighted_w1q_norm(u, q)?));
        rows.push(row("grad_lq", q, func.gradient_lq(u, q)));
    }
    rows.push(row("dirichlet_energy", 2.0, disc.dirichlet_energy(u)));
    for &th in &plan.theta_grid {
        rows.push(row("phi_theta_energy", th, func.phi_theta_energy(u, th)?));
    }
    if disc.mesh().has_flux_boundary() {
        let g = disc.spec.gamma;
        rows.push(row("boundary_lgamma_norm", g, func.boundary_lgamma_norm(u, g)?));
    }
    for &q in &plan.trace_q_grid {
        let tn = func.trace_gagliardo_norm(u, q)?;
        rows.push(row("trace_norm", q, tn.norm()));
        rows.push(row("trace_seminorm", q, tn.seminorm()));
    }
    for &q in &plan.holder_q_grid {
        for &th in &plan.theta_grid {
            let hc = func.holder_chain(u, q, th)?;
            rows.push(row("holder_slack", q, hc.relative_slack()));
        }
    }
    rows.push(row("weak_residual", 0.0, disc.weak_form_residual(sol)));
    rows.push(row("newton_iterations", 0.0, sol.telemetry.newton_iterations as f64));
    Ok(rows)
}

/// Solves on `levels` uniformly refined meshes with `n = n_rule(level)` and
/// fits log–log slopes of every norm against `h_max`.
pub fn regularity_study(spec: &ProblemSpec, options: SolverOptions, plan: &StudyPlan) -> Result<RegularityReport> {
    plan.validate(spec.alpha)?;
    let mut rows = Vec::new();
    let mut mesh = spec.mesh.clone();
    for level in 0..plan.levels {
        if level > 0 {
            mesh = refine(&mesh)?;
        }
        let disc = Discretization::new(spec.on_mesh(&mesh)?, options)?;
        let func = Functionals::for_discretization(&disc)?;
        let n = plan.n_rule.at(level);
        let sol = disc
            .solve(n, None)
            .map_err(|e| Error::AtIndex { n, source: Box::new(e) })?;
        log::info!(
            "level {level}: h = {:.4}, {} dofs, {} Newton steps",
            mesh.h_max(),
            disc.dof(),
            sol.telemetry.newton_iterations
        );
        rows.extend(evaluate_solution(&disc, &func, &sol, plan, level)?);
    }
    let mut fits = Vec::new();
    let mut keys: Vec<(String, f64)> = Vec::new();
    for r in &rows {
        let fitted = matches!(
            r.functional.as_str(),
            "w1q_norm" | "grad_lq" | "dirichlet_energy" | "phi_theta_energy" | "boundary_lgamma_norm" | "trace_norm" | "trace_seminorm"
        );
        if fitted && !keys.iter().any(|(f, p)| *f == r.functional && *p == r.param) {
            keys.push((r.functional.clone(), r.param));
        }
    }
    for (f, p) in keys {
        let series: Vec<&ReportRow> = rows.iter().filter(|r| r.functional == f && r.param == p).collect();
        let h: Vec<f64> = series.iter().map(|r| r.h_max).collect();
        let v: Vec<f64> = series.iter().map(|r| r.value).collect();
        fits.push(SlopeFit::new(&f, p, &h, &v)?);
    }
    Ok(RegularityReport { alpha: spec.alpha, gamma: spec.gamma, rows, fits, thresholds: thresholds(spec.alpha) })
}

/// Tabulates the uniform-in-n quantities along a warm-started mollification
/// sequence on a fixed mesh (`level` is 0 throughout). Adds one
/// `level_set_*` row per `t` in `t_grid`.
pub fn mollification_study(
    spec: &ProblemSpec,
    options: SolverOptions,
    n_list: &[u32],
    plan: &StudyPlan,
    t_grid: &[f64],
) -> Result<RegularityReport> {
    for &th in &plan.theta_grid {
        PhiTheta::new(th)?;
    }
    let disc = Discretization::new(spec.clone(), options)?;
    let sols = disc.solve_sequence(n_list)?;
    tabulate_sequence(&disc, &sols, plan, t_grid)
}

/// The report of [`mollification_study`] for solutions already in hand.
pub fn tabulate_sequence(
    disc: &Discretization,
    sols: &[DiscreteSolution],
    plan: &StudyPlan,
    t_grid: &[f64],
) -> Result<RegularityReport> {
    let spec = &disc.spec;
    let func = Functionals::for_discretization(disc)?;
    let mut rows = Vec::new();
    for sol in sols {
        let mut r = evaluate_solution(disc, &func, sol, plan, 0)?;
        if disc.mesh().has_flux_boundary() {
            for &t in t_grid {
                let tail = func.level_set_tail(&sol.coefficients, t, spec.gamma, &sol.mu1n, &sol.mu2n)?;
                let mk = |name: &str, value: f64| ReportRow {
                    level: 0,
                    h_max: disc.mesh().h_max(),
                    n: sol.n,
                    functional: name.into(),
                    param: t,
                    value,
                };
                r.push(mk("level_set_boundary_tail", tail.boundary_tail));
                r.push(mk("level_set_lhs", tail.shifted_boundary_tail));
                r.push(mk("level_set_rhs", tail.rhs(1.0)));
                r.push(mk("level_set_lebesgue", tail.lebesgue_e));
            }
        }
        rows.extend(r);
    }
    Ok(RegularityReport { alpha: spec.alpha, gamma: spec.gamma, rows, fits: Vec::new(), thresholds: thresholds(spec.alpha) })
}

/// Boundary-concentrating trial fields `d(x)^β`, which vanish on `∂Ω`.
pub fn distance_power_family(mesh: &Mesh, betas: &[f64]) -> Vec<TestField> {
    betas
        .iter()
        .map(|&b| {
            let domain = *mesh.domain();
            TestField::new(format!("d^{b}"), move |p| domain.distance(p).unwrap_or(0.0).max(0.0).powf(b))
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EmbeddingProbe {
    pub alpha: f64,
    /// Largest `k` such that the ratio stays below the cap for every field
    /// and every grid value up to it; `None` if even the first fails.
    pub k_max: Option<f64>,
    /// `(field, k, ‖u‖_{L^{2k},w} / ‖∇u‖_{L²,w})`.
    pub ratios: Vec<(String, f64, f64)>,
    pub cap: f64,
}

/// Default probe settings on the unit disk; the cap is a tuning choice, so
/// results are a measured trend, not a certified δ.
pub const DEFAULT_RATIO_CAP: f64 = 0.45;
pub const DEFAULT_BETAS: [f64; 4] = [0.25, 0.5, 1.0, 2.0];

pub fn default_k_grid() -> Vec<f64> {
    (0..=20).map(|i| 1.0 + 0.25 * i as f64).collect()
}

/// Empirical lower estimate of the embedding range `k ≤ N/(N−1) + δ`.
/// Fields are interpolated at the vertices; boundary values are zeroed.
pub fn embedding_delta_probe(
    alpha: f64,
    mesh: &Mesh,
    trial_fields: &[TestField],
    k_grid: &[f64],
    cap: f64,
) -> Result<EmbeddingProbe> {
    if trial_fields.is_empty() || k_grid.is_empty() {
        return Err(Error::Domain("embedding probe needs trial fields and a k-grid".into()));
    }
    let func = Functionals::new(mesh, alpha)?;
    let mut ratios = Vec::new();
    let mut k_max = None;
    let mut ok = true;
    let fields: Vec<Vec<f64>> = trial_fields
        .iter()
        .map(|f| {
            (0..mesh.vertex_count())
                .map(|v| if mesh.is_boundary(v) { 0.0 } else { (f.f)(mesh.vertices()[v]) })
                .collect()
        })
        .collect();
    for &k in k_grid {
        for (tf, u) in trial_fields.iter().zip(&fields) {
            let num = func.weighted_lp(u, 2.0 * k).powf(0.5 / k);
            let den = func.gradient_lq(u, 2.0).sqrt();
            let ratio = num / den;
            ratios.push((tf.name.clone(), k, ratio));
            if !(ratio < cap) {
                ok = false;
            }
        }
        if ok {
            k_max = Some(k);
        }
    }
    Ok(EmbeddingProbe { alpha, k_max, ratios, cap })
}
