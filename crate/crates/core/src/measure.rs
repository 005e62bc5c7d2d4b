//! Radon measure data (atoms plus a catalogued density) and its smooth
//! approximations by normalized bumps.
//!
//! A mollified measure is stored as a list of weighted nodes, each carrying the
//! P1 hat coefficients of its location. Pairing with a test field and
//! assembling the load vector therefore use literally the same quadrature,
//! which is what makes the discrete weak-form residual exact.

use std::collections::HashMap;
use std::f64::consts::PI;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::mesh::{EdgeLabel, Mesh, Point};
use crate::quadrature::{gauss_legendre, triangle_rule};

/// Gauss points per radial segment, per angular piece and per boundary segment.
const RADIAL_POINTS: usize = 8;
const ANGULAR_POINTS: usize = 8;
const EDGE_POINTS: usize = 8;
/// Symmetric-rule order for densities and for quartic bumps on whole triangles.
const DENSITY_ORDER: usize = 5;
const BUMP_ORDER: usize = 7;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Support {
    Interior,
    Gamma2,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Atom {
    pub x: f64,
    pub y: f64,
    pub mass: f64,
}

impl Atom {
    pub fn point(&self) -> Point {
        [self.x, self.y]
    }
}

/// Closed-form density from the catalogue, optionally scaled: `"one"`,
/// `"gauss(cx,cy,s)"` (= `exp(−|x−c|²/(2s²))`), `"cos_k(k)"` (= `cos kθ`
/// with θ the polar angle about the domain center), each accepting a
/// `"<c>*"` prefix.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Density {
    pub scale: f64,
    pub kind: DensityKind,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum DensityKind {
    One,
    Gauss { cx: f64, cy: f64, s: f64 },
    CosK { k: f64 },
}

impl Density {
    pub fn eval(&self, p: Point, center: Point) -> f64 {
        let v = match self.kind {
            DensityKind::One => 1.0,
            DensityKind::Gauss { cx, cy, s } => {
                let r2 = (p[0] - cx).powi(2) + (p[1] - cy).powi(2);
                (-r2 / (2.0 * s * s)).exp()
            }
            DensityKind::CosK { k } => (k * (p[1] - center[1]).atan2(p[0] - center[0])).cos(),
        };
        self.scale * v
    }
}

impl fmt::Display for Density {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.scale != 1.0 {
            write!(f, "{}*", self.scale)?;
        }
        match self.kind {
            DensityKind::One => write!(f, "one"),
            DensityKind::Gauss { cx, cy, s } => write!(f, "gauss({cx},{cy},{s})"),
            DensityKind::CosK { k } => write!(f, "cos_k({k})"),
        }
    }
}

impl FromStr for Density {
    type Err = Error;

    fn from_str(text: &str) -> Result<Density> {
        let bad = || Error::Domain(format!("unknown density id {text:?}"));
        let text_trim = text.trim();
        let (scale, body) = match text_trim.split_once('*') {
            Some((c, rest)) => (c.trim().parse::<f64>().map_err(|_| bad())?, rest.trim()),
            None => (1.0, text_trim),
        };
        let args = |name: &str| -> Option<Vec<f64>> {
            let inner = body.strip_prefix(name)?.strip_prefix('(')?.strip_suffix(')')?;
            inner.split(',').map(|a| a.trim().parse().ok()).collect()
        };
        let kind = if body == "one" {
            DensityKind::One
        } else if let Some(a) = args("gauss") {
            match a[..] {
                [cx, cy, s] if s > 0.0 => DensityKind::Gauss { cx, cy, s },
                _ => return Err(bad()),
            }
        } else if let Some(a) = args("cos_k") {
            match a[..] {
                [k] => DensityKind::CosK { k },
                _ => return Err(bad()),
            }
        } else {
            return Err(bad());
        };
        if !scale.is_finite() {
            return Err(bad());
        }
        Ok(Density { scale, kind })
    }
}

impl Serialize for Density {
    fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for Density {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Density, D::Error> {
        let text = String::deserialize(d)?;
        text.parse().map_err(serde::de::Error::custom)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MeasureData {
    #[serde(default)]
    pub atoms: Vec<Atom>,
    #[serde(default)]
    pub density: Option<Density>,
    pub support: Support,
}

impl MeasureData {
    pub fn zero(support: Support) -> MeasureData {
        MeasureData { atoms: Vec::new(), density: None, support }
    }

    pub fn dirac(point: Point, mass: f64, support: Support) -> MeasureData {
        MeasureData {
            atoms: vec![Atom { x: point[0], y: point[1], mass }],
            density: None,
            support,
        }
    }

    pub fn is_zero(&self) -> bool {
        self.atoms.iter().all(|a| a.mass == 0.0)
            && self.density.map_or(true, |d| d.scale == 0.0)
    }

    /// Checks the support invariants against a mesh and its boundary labels.
    pub fn validate(&self, mesh: &Mesh) -> Result<()> {
        let domain = mesh.domain();
        for a in &self.atoms {
            if !a.mass.is_finite() {
                return Err(Error::Domain(format!("atom mass {} is not finite", a.mass)));
            }
            match self.support {
                Support::Interior => {
                    if domain.distance(a.point())? <= 0.0 {
                        return Err(Error::Domain(format!(
                            "interior atom at ({}, {}) lies on the boundary",
                            a.x, a.y
                        )));
                    }
                }
                Support::Gamma2 => {
                    BoundaryArc::new(mesh)?.locate_on_gamma2(mesh, a.point())?;
                }
            }
        }
        if self.support == Support::Gamma2 && !self.is_zero() && !mesh.has_flux_boundary() {
            return Err(Error::Domain("boundary measure given but Γ₂ is empty".into()));
        }
        Ok(())
    }

    /// Quadrature nodes for the density part.
    fn density_nodes(&self, mesh: &Mesh, out: &mut Vec<MeasureNode>) {
        let Some(density) = self.density else { return };
        let center = mesh.domain().center();
        match self.support {
            Support::Interior => {
                let rule = triangle_rule(DENSITY_ORDER);
                for t in 0..mesh.triangle_count() {
                    let tri = mesh.triangles()[t];
                    let pts = mesh.triangle_points(t);
                    let area = mesh.area(t);
                    for (b, &w) in rule.bary.iter().zip(&rule.weights) {
                        let p = [
                            b[0] * pts[0][0] + b[1] * pts[1][0] + b[2] * pts[2][0],
                            b[0] * pts[0][1] + b[1] * pts[1][1] + b[2] * pts[2][1],
                        ];
                        out.push(MeasureNode {
                            point: p,
                            weight: w * area * density.eval(p, center),
                            hats: [(tri[0], b[0]), (tri[1], b[1]), (tri[2], b[2])],
                        });
                    }
                }
            }
            Support::Gamma2 => {
                let rule = gauss_legendre(EDGE_POINTS);
                for e in mesh.flux_edges() {
                    let (p, q) = (mesh.vertices()[e.a], mesh.vertices()[e.b]);
                    let len = mesh.edge_length(e);
                    for (&s, &w) in rule.nodes.iter().zip(&rule.weights) {
                        let x = lerp(p, q, s);
                        out.push(MeasureNode {
                            point: x,
                            weight: w * len * density.eval(x, center),
                            hats: [(e.a, 1.0 - s), (e.b, s), (e.a, 0.0)],
                        });
                    }
                }
            }
        }
    }

    /// `Σ mass·φ(atom) + ∫ density·φ`, the density integrated over the mesh
    /// (interior) or over the Γ₂ edges (boundary).
    pub fn pair(&self, mesh: &Mesh, phi: &dyn Fn(Point) -> f64) -> f64 {
        let atoms: f64 = self.atoms.iter().map(|a| a.mass * phi(a.point())).sum();
        let mut nodes = Vec::new();
        self.density_nodes(mesh, &mut nodes);
        atoms + nodes.iter().map(|n| n.weight * phi(n.point)).sum::<f64>()
    }

    pub fn total_mass(&self, mesh: &Mesh) -> f64 {
        self.pair(mesh, &|_| 1.0)
    }

    /// `Σ|mass| + ∫|density|`.
    pub fn total_variation(&self, mesh: &Mesh) -> f64 {
        let mut nodes = Vec::new();
        self.density_nodes(mesh, &mut nodes);
        self.atoms.iter().map(|a| a.mass.abs()).sum::<f64>()
            + nodes.iter().map(|n| n.weight.abs()).sum::<f64>()
    }
}

/// Radial (interior) or arc-length (boundary) bump shape.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BumpProfile {
    /// `(1 − s²)²`, C¹.
    #[default]
    Quartic,
    /// `(1 + cos πs)/2`, C¹.
    Cosine,
}

impl BumpProfile {
    /// Unnormalized profile at `s = |x − x₀| / r ∈ [0, 1]`.
    #[inline]
    pub fn eval(&self, s: f64) -> f64 {
        if s >= 1.0 {
            return 0.0;
        }
        match self {
            BumpProfile::Quartic => {
                let t = 1.0 - s * s;
                t * t
            }
            BumpProfile::Cosine => 0.5 * (1.0 + (PI * s).cos()),
        }
    }
}

/// A quadrature node of a mollified measure. `hats` lists the P1 basis
/// functions nonzero at `point` with their values.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MeasureNode {
    pub point: Point,
    pub weight: f64,
    pub hats: [(usize, f64); 3],
}

impl MeasureNode {
    /// Value at the node of the P1 function with nodal values `u`.
    #[inline]
    pub fn interpolate(&self, u: &[f64]) -> f64 {
        self.hats.iter().map(|&(v, h)| h * u[v]).sum()
    }
}

/// Per-atom mollification record.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BumpInfo {
    pub x: f64,
    pub y: f64,
    pub mass: f64,
    pub radius: f64,
    /// Peak value of the normalized bump.
    pub amplitude: f64,
}

/// The smooth `μⁿ`: normalized bumps in place of atoms, density unchanged.
#[derive(Debug, Clone)]
pub struct MollifiedMeasure {
    pub n: u32,
    pub parent: MeasureData,
    pub profile: BumpProfile,
    pub bumps: Vec<BumpInfo>,
    nodes: Vec<MeasureNode>,
    vertex_count: usize,
    center: Point,
}

impl MollifiedMeasure {
    pub fn nodes(&self) -> &[MeasureNode] {
        &self.nodes
    }

    pub fn pair(&self, phi: &dyn Fn(Point) -> f64) -> f64 {
        self.nodes.iter().map(|n| n.weight * phi(n.point)).sum()
    }

    /// Pairing with the P1 function of nodal values `u`.
    pub fn pair_discrete(&self, u: &[f64]) -> f64 {
        self.nodes.iter().map(|n| n.weight * n.interpolate(u)).sum()
    }

    pub fn total_mass(&self) -> f64 {
        self.nodes.iter().map(|n| n.weight).sum()
    }

    /// `(⟨μⁿ, φ_i⟩)_i` over all mesh vertices.
    pub fn load_vector(&self) -> Vec<f64> {
        let mut load = vec![0.0; self.vertex_count];
        for node in &self.nodes {
            for &(v, h) in &node.hats {
                load[v] += node.weight * h;
            }
        }
        load
    }

    /// Largest bump amplitude; the density part is bounded by construction.
    pub fn sup_norm(&self) -> f64 {
        let bumps = self.bumps.iter().map(|b| b.amplitude).fold(0.0, f64::max);
        let density = self.parent.density.map_or(0.0, |d| {
            self.nodes.iter().map(|n| d.eval(n.point, self.center).abs()).fold(0.0, f64::max)
        });
        bumps + density
    }
}

/// Replaces each atom by a bump of radius `r₀·2⁻ⁿ`.
pub fn mollify(measure: &MeasureData, n: u32, mesh: &Mesh) -> Result<MollifiedMeasure> {
    mollify_with(measure, n, mesh, BumpProfile::Quartic)
}

pub fn mollify_with(
    measure: &MeasureData,
    n: u32,
    mesh: &Mesh,
    profile: BumpProfile,
) -> Result<MollifiedMeasure> {
    if n == 0 {
        return Err(Error::Domain("mollification index must be at least 1".into()));
    }
    measure.validate(mesh)?;
    let mut nodes = Vec::new();
    let mut bumps = Vec::new();
    let scale = 0.5f64.powi(n as i32);
    match measure.support {
        Support::Interior => {
            for atom in measure.atoms.iter().filter(|a| a.mass != 0.0) {
                let c = atom.point();
                let r0 = 0.5 * mesh.domain().distance(c)?;
                let mut r = r0 * scale;
                let room = polygon_clearance(mesh, c);
                if r >= room {
                    let shrunk = 0.99 * room;
                    log::warn!(
                        "bump at ({}, {}) shrunk from {r:.3e} to {shrunk:.3e} to stay inside the mesh",
                        c[0],
                        c[1]
                    );
                    r = shrunk;
                }
                let start = nodes.len();
                interior_bump_nodes(mesh, c, r, profile, &mut nodes);
                bumps.push(normalize(&mut nodes[start..], *atom, r)?);
            }
        }
        Support::Gamma2 => {
            let arc = BoundaryArc::new(mesh)?;
            for atom in measure.atoms.iter().filter(|a| a.mass != 0.0) {
                let (s0, clearance) = arc.locate_on_gamma2(mesh, atom.point())?;
                let r = 0.5 * clearance * scale;
                let start = nodes.len();
                arc.bump_nodes(mesh, s0, r, profile, &mut nodes);
                bumps.push(normalize(&mut nodes[start..], *atom, r)?);
            }
        }
    }
    measure.density_nodes(mesh, &mut nodes);
    Ok(MollifiedMeasure {
        n,
        parent: measure.clone(),
        profile,
        bumps,
        nodes,
        vertex_count: mesh.vertex_count(),
        center: mesh.domain().center(),
    })
}

/// A named scalar test field.
pub struct TestField {
    pub name: String,
    pub f: Box<dyn Fn(Point) -> f64 + Send + Sync>,
}

impl TestField {
    pub fn new(name: impl Into<String>, f: impl Fn(Point) -> f64 + Send + Sync + 'static) -> Self {
        TestField { name: name.into(), f: Box::new(f) }
    }
}

/// All monomials of degree ≤ 3 plus two trigonometric fields.
pub fn default_test_suite() -> Vec<TestField> {
    let mut suite = Vec::new();
    for total in 0..=3 {
        for i in (0..=total).rev() {
            let j = total - i;
            suite.push(TestField::new(format!("x^{i} y^{j}"), move |p: Point| {
                p[0].powi(i) * p[1].powi(j)
            }));
        }
    }
    suite.push(TestField::new("sin(3x)cos(2y)", |p: Point| (3.0 * p[0]).sin() * (2.0 * p[1]).cos()));
    suite.push(TestField::new("cos(x+2y)", |p: Point| (p[0] + 2.0 * p[1]).cos()));
    suite
}

/// `max_φ |⟨μ, φ⟩ − ⟨μⁿ, φ⟩|` over the suite.
pub fn weakstar_gap(
    measure: &MeasureData,
    mollified: &MollifiedMeasure,
    mesh: &Mesh,
    suite: &[TestField],
) -> Result<f64> {
    if suite.is_empty() {
        return Err(Error::Domain("weak-* gap needs a nonempty test suite".into()));
    }
    Ok(suite
        .iter()
        .map(|field| (measure.pair(mesh, &*field.f) - mollified.pair(&*field.f)).abs())
        .fold(0.0, f64::max))
}

/// Scales unnormalized bump nodes so their discrete total is the atom's mass.
fn normalize(nodes: &mut [MeasureNode], atom: Atom, radius: f64) -> Result<BumpInfo> {
    let total: f64 = nodes.iter().map(|n| n.weight).sum();
    if !(total > 0.0) {
        return Err(Error::Numeric(format!(
            "bump at ({}, {}) with radius {radius:e} has no quadrature mass",
            atom.x, atom.y
        )));
    }
    let factor = atom.mass / total;
    for node in nodes.iter_mut() {
        node.weight *= factor;
    }
    Ok(BumpInfo { x: atom.x, y: atom.y, mass: atom.mass, radius, amplitude: factor.abs() })
}

/// Distance from `c` to the polygonal boundary of the mesh.
fn polygon_clearance(mesh: &Mesh, c: Point) -> f64 {
    mesh.boundary_edges()
        .iter()
        .map(|e| segment_distance(c, mesh.vertices()[e.a], mesh.vertices()[e.b]).0)
        .fold(f64::INFINITY, f64::min)
}

/// Distance from `p` to segment `ab` and the parameter of the closest point.
fn segment_distance(p: Point, a: Point, b: Point) -> (f64, f64) {
    let d = [b[0] - a[0], b[1] - a[1]];
    let len2 = d[0] * d[0] + d[1] * d[1];
    let s = (((p[0] - a[0]) * d[0] + (p[1] - a[1]) * d[1]) / len2).clamp(0.0, 1.0);
    let q = lerp(a, b, s);
    ((p[0] - q[0]).hypot(p[1] - q[1]), s)
}

#[inline]
fn lerp(a: Point, b: Point, s: f64) -> Point {
    [a[0] + s * (b[0] - a[0]), a[1] + s * (b[1] - a[1])]
}

#[inline]
fn cross(a: Point, b: Point) -> f64 {
    a[0] * b[1] - a[1] * b[0]
}

/// Unnormalized nodes of the bump `profile(|x − c| / r)` over the mesh.
///
/// Triangles inside the ball take a symmetric rule when the profile is a
/// polynomial; every other triangle meeting the ball is integrated in polar
/// coordinates about `c`, with angular pieces split wherever the ray/triangle
/// intersection changes form (triangle vertices, edge/circle crossings).
fn interior_bump_nodes(
    mesh: &Mesh,
    c: Point,
    r: f64,
    profile: BumpProfile,
    out: &mut Vec<MeasureNode>,
) {
    for t in 0..mesh.triangle_count() {
        let pts = mesh.triangle_points(t);
        let tri = mesh.triangles()[t];
        let lo = [0, 1].map(|k| pts.iter().map(|p| p[k]).fold(f64::INFINITY, f64::min));
        let hi = [0, 1].map(|k| pts.iter().map(|p| p[k]).fold(f64::NEG_INFINITY, f64::max));
        if lo[0] > c[0] + r || hi[0] < c[0] - r || lo[1] > c[1] + r || hi[1] < c[1] - r {
            continue;
        }
        let dist = pts.map(|p| (p[0] - c[0]).hypot(p[1] - c[1]));
        if profile == BumpProfile::Quartic && dist.iter().all(|&d| d <= r) {
            let rule = triangle_rule(BUMP_ORDER);
            let area = mesh.area(t);
            for (b, &w) in rule.bary.iter().zip(&rule.weights) {
                let p = [
                    b[0] * pts[0][0] + b[1] * pts[1][0] + b[2] * pts[2][0],
                    b[0] * pts[0][1] + b[1] * pts[1][1] + b[2] * pts[2][1],
                ];
                let s = (p[0] - c[0]).hypot(p[1] - c[1]) / r;
                out.push(MeasureNode {
                    point: p,
                    weight: w * area * profile.eval(s),
                    hats: [(tri[0], b[0]), (tri[1], b[1]), (tri[2], b[2])],
                });
            }
            continue;
        }
        polar_pieces(mesh, t, c, r, profile, out);
    }
}

fn polar_pieces(
    mesh: &Mesh,
    t: usize,
    c: Point,
    r: f64,
    profile: BumpProfile,
    out: &mut Vec<MeasureNode>,
) {
    let pts = mesh.triangle_points(t);
    let tri = mesh.triangles()[t];
    let eps = 1e-14 * r;
    let mut breaks: Vec<f64> = Vec::with_capacity(9);
    for p in &pts {
        let v = [p[0] - c[0], p[1] - c[1]];
        if v[0].hypot(v[1]) > eps {
            breaks.push(v[1].atan2(v[0]));
        }
    }
    for k in 0..3 {
        let (a, b) = (pts[k], pts[(k + 1) % 3]);
        // |a − c + s(b − a)|² = r² for s ∈ [0, 1].
        let d = [b[0] - a[0], b[1] - a[1]];
        let f = [a[0] - c[0], a[1] - c[1]];
        let qa = d[0] * d[0] + d[1] * d[1];
        let qb = 2.0 * (f[0] * d[0] + f[1] * d[1]);
        let qc = f[0] * f[0] + f[1] * f[1] - r * r;
        let disc = qb * qb - 4.0 * qa * qc;
        if disc > 0.0 {
            for s in [(-qb - disc.sqrt()) / (2.0 * qa), (-qb + disc.sqrt()) / (2.0 * qa)] {
                if (0.0..=1.0).contains(&s) {
                    let x = lerp(a, b, s);
                    breaks.push((x[1] - c[1]).atan2(x[0] - c[0]));
                }
            }
        }
    }
    breaks.sort_by(f64::total_cmp);
    breaks.dedup_by(|a, b| (*a - *b).abs() < 1e-15);
    if breaks.is_empty() {
        breaks.push(-PI);
    }
    let first = breaks[0];
    breaks.push(first + 2.0 * PI);

    let edges: [(Point, Point); 3] = [(pts[0], pts[1]), (pts[1], pts[2]), (pts[2], pts[0])];
    // Radial extent of the ray at angle θ inside T ∩ B, with the edges that
    // bound it (`None` for the apex c, respectively the circle).
    let ray = |theta: f64| {
        let e = [theta.cos(), theta.sin()];
        let (mut lo, mut hi) = ((0.0f64, None), (r, None));
        for (k, &(a, b)) in edges.iter().enumerate() {
            let dir = [b[0] - a[0], b[1] - a[1]];
            let base = cross(dir, [c[0] - a[0], c[1] - a[1]]);
            let slope = cross(dir, e);
            if slope > 0.0 {
                if -base / slope > lo.0 {
                    lo = (-base / slope, Some(k));
                }
            } else if slope < 0.0 {
                if -base / slope < hi.0 {
                    hi = (-base / slope, Some(k));
                }
            } else if base < 0.0 {
                hi = lo;
            }
        }
        (e, lo, hi)
    };
    let at = |p: Point, weight: f64| {
        let b = mesh.barycentric(t, p);
        MeasureNode { point: p, weight, hats: [(tri[0], b[0]), (tri[1], b[1]), (tri[2], b[2])] }
    };
    let theta_rule = gauss_legendre(ANGULAR_POINTS);
    let rho_rule = gauss_legendre(RADIAL_POINTS);
    let tri_rule = triangle_rule(BUMP_ORDER);
    for piece in breaks.windows(2) {
        let (t0, t1) = (piece[0], piece[1]);
        if t1 - t0 < 1e-15 {
            continue;
        }
        let (_, lo, hi) = ray(0.5 * (t0 + t1));
        if hi.0 <= lo.0 {
            continue;
        }
        let point = |theta: f64, bound: Option<usize>, arc: bool| -> Point {
            let e = [theta.cos(), theta.sin()];
            let rho = match bound {
                Some(k) => {
                    let (a, b) = edges[k];
                    let dir = [b[0] - a[0], b[1] - a[1]];
                    -cross(dir, [c[0] - a[0], c[1] - a[1]]) / cross(dir, e)
                }
                None if arc => r,
                None => 0.0,
            };
            [c[0] + rho * e[0], c[1] + rho * e[1]]
        };
        // Convex quadrilateral p0 q0 q1 p1 (possibly degenerate), exactly.
        let quad = |out: &mut Vec<MeasureNode>, p0: Point, q0: Point, q1: Point, p1: Point| {
            for sub in [[p0, q0, q1], [p0, q1, p1]] {
                let area = 0.5
                    * cross(
                        [sub[1][0] - sub[0][0], sub[1][1] - sub[0][1]],
                        [sub[2][0] - sub[0][0], sub[2][1] - sub[0][1]],
                    )
                    .abs();
                if area <= 0.0 {
                    continue;
                }
                for (bc, &w) in tri_rule.bary.iter().zip(&tri_rule.weights) {
                    let p = [
                        bc[0] * sub[0][0] + bc[1] * sub[1][0] + bc[2] * sub[2][0],
                        bc[0] * sub[0][1] + bc[1] * sub[1][1] + bc[2] * sub[2][1],
                    ];
                    let rho = (p[0] - c[0]).hypot(p[1] - c[1]);
                    out.push(at(p, w * area * profile.eval(rho / r)));
                }
            }
        };
        if hi.1.is_some() {
            // Straight outer side.
            quad(out, point(t0, lo.1, false), point(t0, hi.1, true), point(t1, hi.1, true), point(t1, lo.1, false));
            continue;
        }
        // Arc outer side: on short spans, the polygon up to the chord is done
        // exactly and the thin circular segment in polar coordinates.
        let spans = ((t1 - t0) / (PI / 12.0)).ceil().max(1.0) as usize;
        let span = (t1 - t0) / spans as f64;
        for j in 0..spans {
            let (s0, s1) = (t0 + j as f64 * span, t0 + (j + 1) as f64 * span);
            quad(out, point(s0, lo.1, false), point(s0, None, true), point(s1, None, true), point(s1, lo.1, false));
            let mid = 0.5 * (s0 + s1);
            let chord = r * (0.5 * span).cos();
            for (&st, &wt) in theta_rule.nodes.iter().zip(&theta_rule.weights) {
                let theta = s0 + span * st;
                let e = [theta.cos(), theta.sin()];
                let inner = chord / (theta - mid).cos();
                for (&sr, &wr) in rho_rule.nodes.iter().zip(&rho_rule.weights) {
                    let rho = inner + (r - inner) * sr;
                    let p = [c[0] + rho * e[0], c[1] + rho * e[1]];
                    out.push(at(p, span * wt * (r - inner) * wr * rho * profile.eval(rho / r)));
                }
            }
        }
    }
}

/// Arc-length parametrization of the polygonal boundary loop.
struct BoundaryArc {
    loop_vertices: Vec<usize>,
    /// Cumulative arc length at each loop vertex; `arc[len]` is the perimeter.
    arc: Vec<f64>,
    labels: Vec<EdgeLabel>,
}

impl BoundaryArc {
    fn new(mesh: &Mesh) -> Result<BoundaryArc> {
        let loop_vertices = mesh.boundary_loop();
        if loop_vertices.len() != mesh.boundary_edges().len() {
            return Err(Error::InvalidMesh("boundary is not a single closed loop".into()));
        }
        let label_of: HashMap<(usize, usize), EdgeLabel> = mesh
            .boundary_edges()
            .iter()
            .flat_map(|e| [((e.a, e.b), e.label), ((e.b, e.a), e.label)])
            .collect();
        let m = loop_vertices.len();
        let mut arc = Vec::with_capacity(m + 1);
        let mut labels = Vec::with_capacity(m);
        let mut s = 0.0;
        for k in 0..m {
            let (a, b) = (loop_vertices[k], loop_vertices[(k + 1) % m]);
            arc.push(s);
            let (p, q) = (mesh.vertices()[a], mesh.vertices()[b]);
            s += (q[0] - p[0]).hypot(q[1] - p[1]);
            labels.push(label_of[&(a, b)]);
        }
        arc.push(s);
        Ok(BoundaryArc { loop_vertices, arc, labels })
    }

    fn perimeter(&self) -> f64 {
        *self.arc.last().unwrap()
    }

    /// Arc coordinate of the polygon point nearest to `p`, and the arc
    /// distance from there to the closest Γ₁/Γ₂ interface vertex.
    fn locate_on_gamma2(&self, mesh: &Mesh, p: Point) -> Result<(f64, f64)> {
        let domain = mesh.domain();
        if domain.distance(p)? > 1e-9 * domain.scale() {
            return Err(Error::Domain(format!("boundary atom ({}, {}) is not on ∂Ω", p[0], p[1])));
        }
        let m = self.loop_vertices.len();
        let (k, lambda) = (0..m)
            .map(|k| {
                let a = mesh.vertices()[self.loop_vertices[k]];
                let b = mesh.vertices()[self.loop_vertices[(k + 1) % m]];
                let (d, s) = segment_distance(p, a, b);
                (d, k, s)
            })
            .min_by(|x, y| x.0.total_cmp(&y.0))
            .map(|(_, k, s)| (k, s))
            .unwrap();
        let s0 = self.arc[k] + lambda * (self.arc[k + 1] - self.arc[k]);
        let perimeter = self.perimeter();
        let clearance = (0..m)
            .filter(|&j| self.labels[j] != self.labels[(j + m - 1) % m])
            .map(|j| {
                let d = (s0 - self.arc[j]).abs();
                d.min(perimeter - d)
            })
            .fold(f64::INFINITY, f64::min);
        if self.labels[k] != EdgeLabel::Flux || clearance <= 1e-12 * perimeter {
            return Err(Error::Domain(format!(
                "boundary atom ({}, {}) is not in the interior of Γ₂",
                p[0], p[1]
            )));
        }
        if !clearance.is_finite() {
            return Err(Error::Domain("Γ₂ has no interface with Γ₁".into()));
        }
        Ok((s0, clearance))
    }

    fn bump_nodes(
        &self,
        mesh: &Mesh,
        s0: f64,
        r: f64,
        profile: BumpProfile,
        out: &mut Vec<MeasureNode>,
    ) {
        let perimeter = self.perimeter();
        let rule = gauss_legendre(EDGE_POINTS);
        let m = self.loop_vertices.len();
        for k in 0..m {
            let (sa, sb) = (self.arc[k], self.arc[k + 1]);
            let (a, b) = (self.loop_vertices[k], self.loop_vertices[(k + 1) % m]);
            let (pa, pb) = (mesh.vertices()[a], mesh.vertices()[b]);
            for shift in [-perimeter, 0.0, perimeter] {
                let center = s0 + shift;
                let (lo, hi) = (sa.max(center - r), sb.min(center + r));
                if hi <= lo {
                    continue;
                }
                // Split at the bump center so each piece is a plain polynomial.
                let mut cuts = vec![lo, hi];
                if lo < center && center < hi {
                    cuts.insert(1, center);
                }
                for w in cuts.windows(2) {
                    for (&s, &wt) in rule.nodes.iter().zip(&rule.weights) {
                        let arc_s = w[0] + (w[1] - w[0]) * s;
                        let lambda = (arc_s - sa) / (sb - sa);
                        out.push(MeasureNode {
                            point: lerp(pa, pb, lambda),
                            weight: (w[1] - w[0]) * wt * profile.eval((arc_s - center).abs() / r),
                            hats: [(a, 1.0 - lambda), (b, lambda), (a, 0.0)],
                        });
                    }
                }
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mesh::{generate_disk_mesh, BoundaryPartitionRule};
    use proptest::prelude::*;

    fn disk(h: f64) -> Mesh {
        let rule = BoundaryPartitionRule::AngularSplit { theta0: PI / 2.0 };
        generate_disk_mesh(1.0, h, &rule).unwrap()
    }

    #[test]
    fn zero_measure_has_zero_field() {
        let mesh = disk(0.2);
        for support in [Support::Interior, Support::Gamma2] {
            let m = mollify(&MeasureData::zero(support), 3, &mesh).unwrap();
            assert!(m.nodes().is_empty());
            assert!(m.load_vector().iter().all(|&v| v == 0.0));
        }
    }

    #[test]
    fn center_dirac_bump() {
        let mesh = disk(0.1);
        let mu = MeasureData::dirac([0.0, 0.0], 1.0, Support::Interior);
        let m = mollify(&mu, 1, &mesh).unwrap();
        assert_eq!(m.bumps[0].radius, 0.25);
        assert!(m.nodes().iter().all(|n| n.point[0].hypot(n.point[1]) <= 0.25 + 1e-14));
        assert!((m.total_mass() - 1.0).abs() < 1e-12);
        assert!((m.load_vector().iter().sum::<f64>() - 1.0).abs() < 1e-12);
        // Odd moments of a centered radial bump vanish.
        assert!(m.pair(&|p| p[0]).abs() < 1e-12);
        assert!(m.pair(&|p| 2.0 * p[1] - 0.5 * p[0] + 3.0) - 3.0 < 1e-12);
        // Second moment against the closed form: ∫ρ² (1−ρ²/r²)² / (πr²/3) = r²/4.
        let m2 = m.pair(&|p| p[0] * p[0] + p[1] * p[1]);
        assert!((m2 - 0.25f64.powi(2) / 4.0).abs() < 1e-12, "{m2}");
    }

    #[test]
    fn off_vertex_bump_matches_closed_form_moments() {
        let mesh = disk(0.1);
        let c = [0.123, -0.217];
        let mu = MeasureData::dirac(c, 2.5, Support::Interior);
        for n in 1..6 {
            let m = mollify(&mu, n, &mesh).unwrap();
            let r = m.bumps[0].radius;
            let m2 = m.pair(&|p| (p[0] - c[0]).powi(2) + (p[1] - c[1]).powi(2));
            let exact = 2.5 * r * r / 4.0;
            assert!((m2 - exact).abs() < 1e-12 * exact, "n={n}: {m2} vs {exact}");
            let m1 = m.pair(&|p| (p[0] - c[0]) + 2.0 * (p[1] - c[1]));
            assert!(m1.abs() < 1e-13 * r, "n={n}: {m1}");
        }
    }

    #[test]
    fn boundary_dirac_preserves_mass() {
        let mesh = disk(0.1);
        let mu = MeasureData::dirac([1.0, 0.0], 1.0, Support::Gamma2);
        for n in 1..8 {
            let m = mollify(&mu, n, &mesh).unwrap();
            assert!((m.pair(&|_| 1.0) - 1.0).abs() < 1e-14);
            // Supported on Γ₂ only.
            for node in m.nodes() {
                assert!(mesh.domain().angle(node.point).abs() < PI / 2.0);
            }
        }
    }

    #[test]
    fn boundary_radius_is_half_the_clearance() {
        let mesh = disk(0.1);
        let mu = MeasureData::dirac([1.0, 0.0], 1.0, Support::Gamma2);
        let m = mollify(&mu, 1, &mesh).unwrap();
        // Quarter of the polygonal half-circle, halved once.
        let quarter: f64 = mesh
            .flux_edges()
            .map(|e| mesh.edge_length(e))
            .sum::<f64>()
            / 2.0;
        assert!((m.bumps[0].radius - 0.25 * quarter).abs() < 1e-12);
    }

    #[test]
    fn invalid_atoms_are_rejected() {
        let mesh = disk(0.2);
        let on_gamma1 = MeasureData::dirac([-1.0, 0.0], 1.0, Support::Gamma2);
        assert!(mollify(&on_gamma1, 1, &mesh).is_err());
        let at_interface = MeasureData::dirac([0.0, 1.0], 1.0, Support::Gamma2);
        assert!(mollify(&at_interface, 1, &mesh).is_err());
        let off_boundary = MeasureData::dirac([0.5, 0.0], 1.0, Support::Gamma2);
        assert!(mollify(&off_boundary, 1, &mesh).is_err());
        let interior_on_boundary = MeasureData::dirac([1.0, 0.0], 1.0, Support::Interior);
        assert!(mollify(&interior_on_boundary, 1, &mesh).is_err());
        let full = generate_disk_mesh(1.0, 0.2, &BoundaryPartitionRule::FullDirichlet).unwrap();
        let boundary = MeasureData::dirac([1.0, 0.0], 1.0, Support::Gamma2);
        assert!(mollify(&boundary, 1, &full).is_err());
    }

    #[test]
    fn pairing_examples() {
        let mesh = disk(0.02);
        let phi = |p: Point| (p[0] * 3.0).exp() + p[1];
        let x0 = [0.3, 0.1];
        let mu = MeasureData::dirac(x0, 1.7, Support::Interior);
        assert_eq!(mu.pair(&mesh, &phi), 1.7 * phi(x0));
        let dipole = MeasureData {
            atoms: vec![Atom { x: 0.1, y: 0.0, mass: 1.0 }, Atom { x: -0.4, y: 0.2, mass: -1.0 }],
            density: None,
            support: Support::Interior,
        };
        assert_eq!(dipole.pair(&mesh, &|_| 1.0), 0.0);
        let area = MeasureData { atoms: vec![], density: Some("one".parse().unwrap()), support: Support::Interior };
        let got = area.pair(&mesh, &|_| 1.0);
        assert!((got - PI).abs() < 1e-3 * PI, "{got}");
        assert_eq!(got, mesh.total_area() * 1.0 + (got - mesh.total_area()));
    }

    #[test]
    fn gap_decreases_and_halves_for_lipschitz_fields() {
        let mesh = disk(0.05);
        let x0 = [0.2, -0.3];
        let mu = MeasureData::dirac(x0, 1.0, Support::Interior);
        let suite = default_test_suite();
        let lipschitz = [TestField::new("|x-x0|", move |p: Point| (p[0] - x0[0]).hypot(p[1] - x0[1]))];
        let mut last = f64::INFINITY;
        let mut last_lip = f64::NAN;
        for n in 1..8 {
            let m = mollify(&mu, n, &mesh).unwrap();
            let gap = weakstar_gap(&mu, &m, &mesh, &suite).unwrap();
            assert!(gap <= last + 1e-12, "n={n}: {gap} > {last}");
            last = gap;
            let lip = weakstar_gap(&mu, &m, &mesh, &lipschitz).unwrap();
            if n > 1 {
                let ratio = last_lip / lip;
                assert!((1.5..=2.5).contains(&ratio), "n={n}: ratio {ratio}");
            }
            last_lip = lip;
        }
    }

    #[test]
    fn cosine_profile_is_an_alternative() {
        let mesh = disk(0.05);
        let x0 = [-0.25, 0.4];
        let mu = MeasureData::dirac(x0, 1.0, Support::Interior);
        let a = mollify_with(&mu, 4, &mesh, BumpProfile::Cosine).unwrap();
        let b = mollify_with(&mu, 4, &mesh, BumpProfile::Quartic).unwrap();
        assert!((a.total_mass() - 1.0).abs() < 1e-12);
        let gap_a = weakstar_gap(&mu, &a, &mesh, &default_test_suite()).unwrap();
        let gap_b = weakstar_gap(&mu, &b, &mesh, &default_test_suite()).unwrap();
        assert!(gap_a < 1e-3 && gap_b < 1e-3);
        assert!(a.bumps[0].amplitude != b.bumps[0].amplitude);
    }

    #[test]
    fn density_ids_round_trip() {
        for id in ["one", "gauss(0.1,-0.2,0.3)", "cos_k(2)", "8*cos_k(3)", "-0.5*one"] {
            let d: Density = id.parse().unwrap();
            let back: Density = d.to_string().parse().unwrap();
            assert_eq!(d, back);
        }
        assert!("sin(2)".parse::<Density>().is_err());
        assert!("gauss(0,0,-1)".parse::<Density>().is_err());
        let json = r#"{"atoms":[{"x":0.1,"y":0.2,"mass":1.0}],"density":"2*gauss(0,0,0.5)","support":"interior"}"#;
        let m: MeasureData = serde_json::from_str(json).unwrap();
        assert_eq!(serde_json::from_str::<MeasureData>(&serde_json::to_string(&m).unwrap()).unwrap(), m);
    }

    #[test]
    fn boundary_density_lives_on_gamma2() {
        let mesh = disk(0.05);
        let mu = MeasureData { atoms: vec![], density: Some("one".parse().unwrap()), support: Support::Gamma2 };
        let len: f64 = mesh.flux_edges().map(|e| mesh.edge_length(e)).sum();
        assert!((mu.total_mass(&mesh) - len).abs() < 1e-12);
        let m = mollify(&mu, 2, &mesh).unwrap();
        assert!((m.total_mass() - len).abs() < 1e-12);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(24))]

        #[test]
        fn mass_is_conserved(
            atoms in prop::collection::vec((0.0f64..0.9, -PI..PI, -3.0f64..3.0), 1..4),
            n in 1u32..9,
        ) {
            let mesh = disk(0.1);
            let mu = MeasureData {
                atoms: atoms.iter().map(|&(r, t, m)| Atom { x: r * t.cos(), y: r * t.sin(), mass: m }).collect(),
                density: Some("0.3*gauss(0.1,0.1,0.4)".parse().unwrap()),
                support: Support::Interior,
            };
            let m = mollify(&mu, n, &mesh).unwrap();
            let tv = mu.total_variation(&mesh);
            prop_assert!((m.total_mass() - mu.total_mass(&mesh)).abs() <= 1e-12 * tv);
            prop_assert!(m.nodes().iter().all(|node| mesh.domain().distance(node.point).unwrap() > 0.0));
        }
    }
}
