//! Conforming triangular meshes of the reference domains, with a two-part
//! boundary labeling (Dirichlet part and nonlinear-flux part).

use std::collections::{BTreeMap, HashMap};
use std::f64::consts::PI;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub type Point = [f64; 2];

/// Triangles beyond this count are refused by the generators and `refine`.
pub const DEFAULT_MAX_TRIANGLES: usize = 40_000_000;

/// Reference domains with an exact distance function.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Domain {
    /// Disk centered at the origin.
    Disk { radius: f64 },
    /// `[0, 1]²`.
    UnitSquare,
}

impl Domain {
    pub fn center(&self) -> Point {
        match self {
            Domain::Disk { .. } => [0.0, 0.0],
            Domain::UnitSquare => [0.5, 0.5],
        }
    }

    pub fn area(&self) -> f64 {
        match self {
            Domain::Disk { radius } => PI * radius * radius,
            Domain::UnitSquare => 1.0,
        }
    }

    pub fn perimeter(&self) -> f64 {
        match self {
            Domain::Disk { radius } => 2.0 * PI * radius,
            Domain::UnitSquare => 4.0,
        }
    }

    /// Length scale used for the "on the boundary" tolerance.
    pub fn scale(&self) -> f64 {
        match self {
            Domain::Disk { radius } => *radius,
            Domain::UnitSquare => 1.0,
        }
    }

    /// Exact distance to the boundary curve. Points outside the closed domain
    /// (beyond a relative rounding tolerance) are a domain error.
    pub fn distance(&self, p: Point) -> Result<f64> {
        let tol = 1e-12 * self.scale();
        let d = match self {
            Domain::Disk { radius } => radius - p[0].hypot(p[1]),
            Domain::UnitSquare => p[0].min(1.0 - p[0]).min(p[1]).min(1.0 - p[1]),
        };
        if d < -tol || !d.is_finite() {
            return Err(Error::Domain(format!(
                "point ({}, {}) lies outside the domain",
                p[0], p[1]
            )));
        }
        Ok(d.max(0.0))
    }

    pub fn on_boundary(&self, p: Point) -> bool {
        matches!(self.distance(p), Ok(d) if d <= 1e-12 * self.scale())
    }

    /// Closest point on the exact boundary curve.
    pub fn project_to_boundary(&self, p: Point) -> Point {
        match self {
            Domain::Disk { radius } => {
                let r = p[0].hypot(p[1]);
                if r == 0.0 {
                    [*radius, 0.0]
                } else {
                    [p[0] * radius / r, p[1] * radius / r]
                }
            }
            Domain::UnitSquare => {
                let dists = [p[0], 1.0 - p[0], p[1], 1.0 - p[1]];
                let (side, _) = dists
                    .iter()
                    .enumerate()
                    .min_by(|a, b| a.1.total_cmp(b.1))
                    .unwrap();
                let c = |v: f64| v.clamp(0.0, 1.0);
                match side {
                    0 => [0.0, c(p[1])],
                    1 => [1.0, c(p[1])],
                    2 => [c(p[0]), 0.0],
                    _ => [c(p[0]), 1.0],
                }
            }
        }
    }

    /// Polar angle in `(-π, π]` of `p` about the domain center.
    pub fn angle(&self, p: Point) -> f64 {
        let c = self.center();
        (p[1] - c[1]).atan2(p[0] - c[0])
    }
}

/// Label carried by each boundary edge.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EdgeLabel {
    /// Γ₁: homogeneous Dirichlet.
    Dirichlet,
    /// Γ₂: measure flux minus the monotone nonlinearity.
    Flux,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct BoundaryEdge {
    pub a: usize,
    pub b: usize,
    pub label: EdgeLabel,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Axis {
    X,
    Y,
}

/// How the boundary is split into Γ₁ (Dirichlet) and Γ₂ (flux).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum BoundaryPartitionRule {
    /// Γ₂ is empty.
    FullDirichlet,
    /// Γ₂ is the arc whose polar angle about the domain center satisfies
    /// `|θ| < theta0`.
    AngularSplit { theta0: f64 },
    /// Γ₂ is where the coordinate along `axis`, measured from the domain
    /// center, exceeds `offset`.
    AxisSplit { axis: Axis, offset: f64 },
}

impl BoundaryPartitionRule {
    pub fn label(&self, domain: &Domain, a: Point, b: Point) -> EdgeLabel {
        let mid = [0.5 * (a[0] + b[0]), 0.5 * (a[1] + b[1])];
        let flux = match *self {
            BoundaryPartitionRule::FullDirichlet => false,
            BoundaryPartitionRule::AngularSplit { theta0 } => domain.angle(mid).abs() < theta0,
            BoundaryPartitionRule::AxisSplit { axis, offset } => {
                let c = domain.center();
                match axis {
                    Axis::X => mid[0] - c[0] > offset,
                    Axis::Y => mid[1] - c[1] > offset,
                }
            }
        };
        if flux {
            EdgeLabel::Flux
        } else {
            EdgeLabel::Dirichlet
        }
    }
}

/// A conforming triangulation. Immutable once constructed; every constructor
/// validates the structural invariants.
#[derive(Debug, Clone)]
pub struct Mesh {
    domain: Domain,
    vertices: Vec<Point>,
    triangles: Vec<[usize; 3]>,
    boundary_edges: Vec<BoundaryEdge>,
    h_max: f64,
    dirichlet: Vec<bool>,
    boundary: Vec<bool>,
}

impl Mesh {
    /// Builds and validates a mesh.
    pub fn new(
        domain: Domain,
        vertices: Vec<Point>,
        triangles: Vec<[usize; 3]>,
        boundary_edges: Vec<BoundaryEdge>,
    ) -> Result<Mesh> {
        let h_max = longest_edge(&vertices, &triangles);
        let mut dirichlet = vec![false; vertices.len()];
        let mut boundary = vec![false; vertices.len()];
        for e in &boundary_edges {
            for v in [e.a, e.b] {
                if v >= vertices.len() {
                    return Err(Error::InvalidMesh(format!("edge vertex {v} out of range")));
                }
                boundary[v] = true;
                if e.label == EdgeLabel::Dirichlet {
                    dirichlet[v] = true;
                }
            }
        }
        let mesh = Mesh {
            domain,
            vertices,
            triangles,
            boundary_edges,
            h_max,
            dirichlet,
            boundary,
        };
        mesh.validate()?;
        Ok(mesh)
    }

    fn validate(&self) -> Result<()> {
        let nv = self.vertices.len();
        let mut incidence: HashMap<(usize, usize), usize> = HashMap::new();
        for (t, tri) in self.triangles.iter().enumerate() {
            if tri.iter().any(|&v| v >= nv) {
                return Err(Error::InvalidMesh(format!("triangle {t} references a missing vertex")));
            }
            let area = self.signed_area(t);
            if !(area > 0.0) {
                return Err(Error::InvalidMesh(format!(
                    "triangle {t} has non-positive signed area {area:e}"
                )));
            }
            for k in 0..3 {
                *incidence.entry(edge_key(tri[k], tri[(k + 1) % 3])).or_insert(0) += 1;
            }
        }
        let mut labeled: HashMap<(usize, usize), EdgeLabel> = HashMap::new();
        for e in &self.boundary_edges {
            if labeled.insert(edge_key(e.a, e.b), e.label).is_some() {
                return Err(Error::InvalidMesh(format!("boundary edge ({}, {}) listed twice", e.a, e.b)));
            }
        }
        for (&(a, b), &count) in &incidence {
            match count {
                1 if !labeled.contains_key(&(a, b)) => {
                    return Err(Error::InvalidMesh(format!("boundary edge ({a}, {b}) carries no label")))
                }
                2 if labeled.contains_key(&(a, b)) => {
                    return Err(Error::InvalidMesh(format!("interior edge ({a}, {b}) is labeled as boundary")))
                }
                1 | 2 => {}
                _ => {
                    return Err(Error::InvalidMesh(format!(
                        "edge ({a}, {b}) belongs to {count} triangles"
                    )))
                }
            }
        }
        if let Some(&(a, b)) = labeled.keys().find(|k| !incidence.contains_key(k)) {
            return Err(Error::InvalidMesh(format!("labeled edge ({a}, {b}) is not a mesh edge")));
        }
        if !self.boundary_edges.iter().any(|e| e.label == EdgeLabel::Dirichlet) {
            return Err(Error::InvalidMesh("the Dirichlet part of the boundary is empty".into()));
        }
        Ok(())
    }

    pub fn domain(&self) -> &Domain {
        &self.domain
    }

    pub fn vertices(&self) -> &[Point] {
        &self.vertices
    }

    pub fn triangles(&self) -> &[[usize; 3]] {
        &self.triangles
    }

    pub fn boundary_edges(&self) -> &[BoundaryEdge] {
        &self.boundary_edges
    }

    pub fn flux_edges(&self) -> impl Iterator<Item = &BoundaryEdge> {
        self.boundary_edges.iter().filter(|e| e.label == EdgeLabel::Flux)
    }

    pub fn has_flux_boundary(&self) -> bool {
        self.flux_edges().next().is_some()
    }

    pub fn h_max(&self) -> f64 {
        self.h_max
    }

    pub fn vertex_count(&self) -> usize {
        self.vertices.len()
    }

    pub fn triangle_count(&self) -> usize {
        self.triangles.len()
    }

    /// Number of distinct edges (Euler: `E = V + T − 1` for a disk topology).
    pub fn edge_count(&self) -> usize {
        let mut edges: Vec<(usize, usize)> = self
            .triangles
            .iter()
            .flat_map(|t| (0..3).map(move |k| edge_key(t[k], t[(k + 1) % 3])))
            .collect();
        edges.sort_unstable();
        edges.dedup();
        edges.len()
    }

    /// True for vertices on a Dirichlet edge (including Γ₁/Γ₂ interface vertices).
    pub fn is_dirichlet(&self, v: usize) -> bool {
        self.dirichlet[v]
    }

    pub fn is_boundary(&self, v: usize) -> bool {
        self.boundary[v]
    }

    pub fn triangle_points(&self, t: usize) -> [Point; 3] {
        let [a, b, c] = self.triangles[t];
        [self.vertices[a], self.vertices[b], self.vertices[c]]
    }

    pub fn signed_area(&self, t: usize) -> f64 {
        let [p, q, r] = self.triangle_points(t);
        0.5 * ((q[0] - p[0]) * (r[1] - p[1]) - (r[0] - p[0]) * (q[1] - p[1]))
    }

    pub fn area(&self, t: usize) -> f64 {
        self.signed_area(t).abs()
    }

    pub fn total_area(&self) -> f64 {
        (0..self.triangles.len()).map(|t| self.area(t)).sum()
    }

    /// Gradients of the three P1 hat functions on triangle `t`.
    pub fn hat_gradients(&self, t: usize) -> [Point; 3] {
        let [p, q, r] = self.triangle_points(t);
        let two_area = 2.0 * self.signed_area(t);
        [
            [(q[1] - r[1]) / two_area, (r[0] - q[0]) / two_area],
            [(r[1] - p[1]) / two_area, (p[0] - r[0]) / two_area],
            [(p[1] - q[1]) / two_area, (q[0] - p[0]) / two_area],
        ]
    }

    /// Barycentric coordinates of `x` with respect to triangle `t`.
    pub fn barycentric(&self, t: usize, x: Point) -> [f64; 3] {
        let [p, q, r] = self.triangle_points(t);
        let two_area = 2.0 * self.signed_area(t);
        let l1 = ((r[0] - q[0]) * (x[1] - q[1]) - (r[1] - q[1]) * (x[0] - q[0])) / two_area;
        let l2 = ((p[0] - r[0]) * (x[1] - r[1]) - (p[1] - r[1]) * (x[0] - r[0])) / two_area;
        let l3 = ((q[0] - p[0]) * (x[1] - p[1]) - (q[1] - p[1]) * (x[0] - p[0])) / two_area;
        [l1, l2, l3]
    }

    pub fn edge_length(&self, e: &BoundaryEdge) -> f64 {
        let (p, q) = (self.vertices[e.a], self.vertices[e.b]);
        (q[0] - p[0]).hypot(q[1] - p[1])
    }

    /// Boundary vertices in counter-clockwise order along the (single) boundary loop.
    pub fn boundary_loop(&self) -> Vec<usize> {
        let mut next: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
        for e in &self.boundary_edges {
            next.entry(e.a).or_default().push(e.b);
            next.entry(e.b).or_default().push(e.a);
        }
        let Some((&start, _)) = next.iter().next() else {
            return Vec::new();
        };
        let mut order = vec![start];
        let mut prev = usize::MAX;
        let mut cur = start;
        loop {
            let nbrs = &next[&cur];
            let step = if nbrs[0] != prev { nbrs[0] } else { nbrs[1] };
            if step == start {
                break;
            }
            order.push(step);
            prev = cur;
            cur = step;
            if order.len() > self.boundary_edges.len() {
                break;
            }
        }
        let area2: f64 = order
            .iter()
            .zip(order.iter().cycle().skip(1))
            .map(|(&i, &j)| {
                let (p, q) = (self.vertices[i], self.vertices[j]);
                p[0] * q[1] - q[0] * p[1]
            })
            .sum();
        if area2 < 0.0 {
            order[1..].reverse();
        }
        order
    }

    /// Applies a partition rule to every boundary edge.
    pub fn relabeled(&self, rule: &BoundaryPartitionRule) -> Result<Mesh> {
        let edges = self
            .boundary_edges
            .iter()
            .map(|e| BoundaryEdge {
                label: rule.label(&self.domain, self.vertices[e.a], self.vertices[e.b]),
                ..*e
            })
            .collect();
        Mesh::new(self.domain, self.vertices.clone(), self.triangles.clone(), edges)
    }

    pub fn to_json(&self) -> Result<String> {
        let doc = MeshDocument {
            vertices: self.vertices.clone(),
            triangles: self.triangles.clone(),
            boundary_edges: self.boundary_edges.clone(),
            h_max: self.h_max,
            domain: Some(self.domain),
        };
        Ok(serde_json::to_string(&doc)?)
    }

    /// Parses a mesh document and rejects anything violating the invariants.
    pub fn from_json(text: &str) -> Result<Mesh> {
        let doc: MeshDocument = serde_json::from_str(text)?;
        let domain = match doc.domain {
            Some(d) => d,
            None => infer_domain(&doc)?,
        };
        let declared = doc.h_max;
        let mesh = Mesh::new(domain, doc.vertices, doc.triangles, doc.boundary_edges)?;
        if (mesh.h_max - declared).abs() > 1e-12 * mesh.h_max.max(1.0) {
            return Err(Error::InvalidMesh(format!(
                "declared h_max {declared} does not match the longest edge {}",
                mesh.h_max
            )));
        }
        Ok(mesh)
    }

    pub fn write_json(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_json()?)?;
        Ok(())
    }
}

#[derive(Serialize, Deserialize)]
struct MeshDocument {
    vertices: Vec<Point>,
    triangles: Vec<[usize; 3]>,
    boundary_edges: Vec<BoundaryEdge>,
    h_max: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    domain: Option<Domain>,
}

fn infer_domain(doc: &MeshDocument) -> Result<Domain> {
    let pts: Vec<Point> = doc
        .boundary_edges
        .iter()
        .flat_map(|e| [e.a, e.b])
        .filter_map(|v| doc.vertices.get(v).copied())
        .collect();
    if pts.is_empty() {
        return Err(Error::InvalidMesh("no boundary edges".into()));
    }
    let r0 = pts[0][0].hypot(pts[0][1]);
    if r0 > 0.0 && pts.iter().all(|p| (p[0].hypot(p[1]) - r0).abs() <= 1e-9 * r0) {
        return Ok(Domain::Disk { radius: r0 });
    }
    if pts.iter().all(|p| Domain::UnitSquare.on_boundary(*p)) {
        return Ok(Domain::UnitSquare);
    }
    Err(Error::InvalidMesh(
        "boundary matches neither a centered disk nor the unit square".into(),
    ))
}

fn edge_key(a: usize, b: usize) -> (usize, usize) {
    if a < b {
        (a, b)
    } else {
        (b, a)
    }
}

fn longest_edge(vertices: &[Point], triangles: &[[usize; 3]]) -> f64 {
    triangles
        .iter()
        .flat_map(|t| (0..3).map(move |k| (t[k], t[(k + 1) % 3])))
        .filter_map(|(a, b)| Some((vertices.get(a)?, vertices.get(b)?)))
        .map(|(p, q)| (q[0] - p[0]).hypot(q[1] - p[1]))
        .fold(0.0, f64::max)
}

fn orient(vertices: &[Point], tri: [usize; 3]) -> [usize; 3] {
    let [p, q, r] = [vertices[tri[0]], vertices[tri[1]], vertices[tri[2]]];
    let cross = (q[0] - p[0]) * (r[1] - p[1]) - (r[0] - p[0]) * (q[1] - p[1]);
    if cross < 0.0 {
        [tri[0], tri[2], tri[1]]
    } else {
        tri
    }
}

/// Concentric-ring triangulation of the disk of radius `radius` centered at
/// the origin: `ceil(radius / h_target)` rings, ring `i` carrying `6i`
/// equally spaced vertices. The mesh is invariant under rotation by 60°.
pub fn generate_disk_mesh(
    radius: f64,
    h_target: f64,
    rule: &BoundaryPartitionRule,
) -> Result<Mesh> {
    generate_disk_mesh_bounded(radius, h_target, rule, DEFAULT_MAX_TRIANGLES)
}

pub fn generate_disk_mesh_bounded(
    radius: f64,
    h_target: f64,
    rule: &BoundaryPartitionRule,
    max_triangles: usize,
) -> Result<Mesh> {
    if !(radius > 0.0) || !(h_target > 0.0 && h_target < radius) {
        return Err(Error::Domain(format!(
            "disk mesh needs radius > 0 and 0 < h_target < radius (got {radius}, {h_target})"
        )));
    }
    let rings = (radius / h_target - 1e-9).ceil().max(1.0);
    if 6.0 * rings * rings > max_triangles as f64 {
        return Err(Error::Resource(format!(
            "h_target {h_target} needs {} triangles (limit {max_triangles})",
            6.0 * rings * rings
        )));
    }
    let rings = rings as usize;
    let mut vertices: Vec<Point> = vec![[0.0, 0.0]];
    let mut ring_start = vec![0usize];
    for i in 1..=rings {
        ring_start.push(vertices.len());
        let r = if i == rings { radius } else { radius * i as f64 / rings as f64 };
        let count = 6 * i;
        for j in 0..count {
            let theta = 2.0 * PI * j as f64 / count as f64;
            vertices.push([r * theta.cos(), r * theta.sin()]);
        }
    }
    let ring_vertex = |i: usize, j: usize| -> usize {
        if i == 0 {
            0
        } else {
            ring_start[i] + j % (6 * i)
        }
    };
    let mut triangles = Vec::with_capacity(6 * rings * rings);
    for i in 0..rings {
        let o = i + 1;
        for sextant in 0..6 {
            let (mut a, mut b) = (0usize, 0usize);
            while a < i || b < o {
                // Advance along whichever ring has the smaller next angle.
                let next_inner = if a < i { (a + 1) as f64 / i as f64 } else { f64::INFINITY };
                let next_outer = if b < o { (b + 1) as f64 / o as f64 } else { f64::INFINITY };
                let inner = ring_vertex(i, sextant * i + a);
                let outer = ring_vertex(o, sextant * o + b);
                let tri = if next_outer <= next_inner {
                    b += 1;
                    [inner, outer, ring_vertex(o, sextant * o + b)]
                } else {
                    a += 1;
                    [inner, outer, ring_vertex(i, sextant * i + a)]
                };
                triangles.push(orient(&vertices, tri));
            }
        }
    }
    let domain = Domain::Disk { radius };
    let outer = 6 * rings;
    let edges = (0..outer)
        .map(|j| {
            let (a, b) = (ring_vertex(rings, j), ring_vertex(rings, j + 1));
            BoundaryEdge {
                a,
                b,
                label: rule.label(&domain, vertices[a], vertices[b]),
            }
        })
        .collect();
    Mesh::new(domain, vertices, triangles, edges)
}

/// Structured triangulation of `[0, 1]²` with `ceil(1 / h_target)` cells per side.
pub fn generate_square_mesh(h_target: f64, rule: &BoundaryPartitionRule) -> Result<Mesh> {
    if !(h_target > 0.0 && h_target < 1.0) {
        return Err(Error::Domain(format!("square mesh needs 0 < h_target < 1 (got {h_target})")));
    }
    let m = (1.0 / h_target - 1e-9).ceil() as usize;
    if 2 * m * m > DEFAULT_MAX_TRIANGLES {
        return Err(Error::Resource(format!("h_target {h_target} needs {} triangles", 2 * m * m)));
    }
    let idx = |i: usize, j: usize| j * (m + 1) + i;
    let vertices: Vec<Point> = (0..=m)
        .flat_map(|j| (0..=m).map(move |i| [i as f64 / m as f64, j as f64 / m as f64]))
        .collect();
    let mut triangles = Vec::with_capacity(2 * m * m);
    for j in 0..m {
        for i in 0..m {
            let (a, b, c, d) = (idx(i, j), idx(i + 1, j), idx(i + 1, j + 1), idx(i, j + 1));
            triangles.push([a, b, c]);
            triangles.push([a, c, d]);
        }
    }
    let mut loop_vertices = Vec::with_capacity(4 * m);
    loop_vertices.extend((0..m).map(|i| idx(i, 0)));
    loop_vertices.extend((0..m).map(|j| idx(m, j)));
    loop_vertices.extend((0..m).map(|i| idx(m - i, m)));
    loop_vertices.extend((0..m).map(|j| idx(0, m - j)));
    let domain = Domain::UnitSquare;
    let edges = (0..loop_vertices.len())
        .map(|k| {
            let (a, b) = (loop_vertices[k], loop_vertices[(k + 1) % loop_vertices.len()]);
            BoundaryEdge {
                a,
                b,
                label: rule.label(&domain, vertices[a], vertices[b]),
            }
        })
        .collect();
    Mesh::new(domain, vertices, triangles, edges)
}

/// Uniform red refinement. Boundary midpoints are projected onto the exact
/// boundary curve; labels are inherited by both children of an edge.
pub fn refine(mesh: &Mesh) -> Result<Mesh> {
    if 4 * mesh.triangle_count() > DEFAULT_MAX_TRIANGLES {
        return Err(Error::Resource(format!(
            "refining {} triangles exceeds the limit {DEFAULT_MAX_TRIANGLES}",
            mesh.triangle_count()
        )));
    }
    let mut vertices = mesh.vertices.clone();
    let mut midpoint: HashMap<(usize, usize), usize> = HashMap::new();
    let boundary_keys: HashMap<(usize, usize), EdgeLabel> = mesh
        .boundary_edges
        .iter()
        .map(|e| (edge_key(e.a, e.b), e.label))
        .collect();
    let mut mid = |a: usize, b: usize, vertices: &mut Vec<Point>| -> usize {
        let key = edge_key(a, b);
        *midpoint.entry(key).or_insert_with(|| {
            let (p, q) = (vertices[a], vertices[b]);
            let mut m = [0.5 * (p[0] + q[0]), 0.5 * (p[1] + q[1])];
            if boundary_keys.contains_key(&key) {
                m = mesh.domain.project_to_boundary(m);
            }
            vertices.push(m);
            vertices.len() - 1
        })
    };
    let mut triangles = Vec::with_capacity(4 * mesh.triangle_count());
    for &[a, b, c] in &mesh.triangles {
        let ab = mid(a, b, &mut vertices);
        let bc = mid(b, c, &mut vertices);
        let ca = mid(c, a, &mut vertices);
        triangles.extend([[a, ab, ca], [ab, b, bc], [ca, bc, c], [ab, bc, ca]]);
    }
    let mut edges = Vec::with_capacity(2 * mesh.boundary_edges.len());
    for e in &mesh.boundary_edges {
        let m = mid(e.a, e.b, &mut vertices);
        edges.push(BoundaryEdge { a: e.a, b: m, label: e.label });
        edges.push(BoundaryEdge { a: m, b: e.b, label: e.label });
    }
    Mesh::new(mesh.domain, vertices, triangles, edges)
}

/// Exact analytic distance from `point` to the boundary of the mesh's domain.
pub fn distance_to_boundary(mesh: &Mesh, point: Point) -> Result<f64> {
    mesh.domain().distance(point)
}

#[cfg(test)]
mod tests {
    use super::*;

    const DIRICHLET: BoundaryPartitionRule = BoundaryPartitionRule::FullDirichlet;

    #[test]
    fn coarsest_disk_mesh_is_valid() {
        let mesh = generate_disk_mesh(1.0, 0.5, &DIRICHLET).unwrap();
        assert!(mesh.triangle_count() >= 4);
        assert!(mesh.h_max() <= 2.0 * 0.5);
        for &v in &mesh.boundary_loop() {
            let p = mesh.vertices()[v];
            assert!((p[0].hypot(p[1]) - 1.0).abs() <= 1e-12);
        }
    }

    #[test]
    fn disk_area_converges_to_pi() {
        let mesh = generate_disk_mesh(1.0, 0.1, &DIRICHLET).unwrap();
        let area = mesh.total_area();
        assert!((area - PI).abs() < 0.01 * PI, "area {area}");
        // Inscribed 60-gon: (n/2) sin(2π/n).
        let n = 60.0;
        assert!((area - 0.5 * n * (2.0 * PI / n).sin()).abs() < 1e-12);
    }

    #[test]
    fn h_max_halves_with_target() {
        let hs: Vec<f64> = [0.2, 0.1, 0.05, 0.025]
            .iter()
            .map(|&h| generate_disk_mesh(1.0, h, &DIRICHLET).unwrap().h_max())
            .collect();
        for w in hs.windows(2) {
            let ratio = w[0] / w[1];
            assert!((1.8..=2.2).contains(&ratio), "ratio {ratio}");
        }
    }

    #[test]
    fn h_target_too_small_is_a_resource_error() {
        let err = generate_disk_mesh_bounded(1.0, 1e-4, &DIRICHLET, 1_000_000).unwrap_err();
        assert!(matches!(err, Error::Resource(_)));
    }

    #[test]
    fn refinement_counts() {
        let mesh = generate_disk_mesh(1.0, 0.25, &DIRICHLET).unwrap();
        let (v, e, t) = (mesh.vertex_count(), mesh.edge_count(), mesh.triangle_count());
        let fine = refine(&mesh).unwrap();
        assert_eq!(fine.triangle_count(), 4 * t);
        assert_eq!(fine.vertex_count(), v + e);
        assert_eq!(fine.boundary_edges().len(), 2 * mesh.boundary_edges().len());
    }

    #[test]
    fn refinement_shrinks_area_defect_fourfold() {
        let mut mesh = generate_disk_mesh(1.0, 0.25, &DIRICHLET).unwrap();
        let mut defects = vec![PI - mesh.total_area()];
        for _ in 0..3 {
            mesh = refine(&mesh).unwrap();
            defects.push(PI - mesh.total_area());
        }
        for w in defects.windows(2) {
            let ratio = w[0] / w[1];
            assert!((3.5..=4.5).contains(&ratio), "defect ratio {ratio}");
        }
    }

    #[test]
    fn refinement_inherits_labels_and_projects() {
        let rule = BoundaryPartitionRule::AngularSplit { theta0: PI / 2.0 };
        let mesh = generate_disk_mesh(1.0, 0.25, &rule).unwrap();
        let fine = refine(&mesh).unwrap();
        for e in fine.boundary_edges() {
            let (p, q) = (fine.vertices()[e.a], fine.vertices()[e.b]);
            assert!((p[0].hypot(p[1]) - 1.0).abs() < 1e-12);
            assert_eq!(e.label, rule.label(fine.domain(), p, q));
        }
        let flux_len = |m: &Mesh| m.flux_edges().map(|e| m.edge_length(e)).sum::<f64>();
        // Γ₂ is half the circle here; chord defects are O(h²).
        let (l0, l1) = (flux_len(&mesh), flux_len(&fine));
        assert!(l1 > l0 && (l1 - l0) < 0.01 * PI);
    }

    #[test]
    fn distance_examples() {
        let disk = generate_disk_mesh(1.0, 0.5, &DIRICHLET).unwrap();
        assert_eq!(distance_to_boundary(&disk, [0.0, 0.0]).unwrap(), 1.0);
        assert_eq!(distance_to_boundary(&disk, [0.5, 0.0]).unwrap(), 0.5);
        assert!(distance_to_boundary(&disk, [1.5, 0.0]).is_err());
        let square = generate_square_mesh(0.5, &DIRICHLET).unwrap();
        assert_eq!(distance_to_boundary(&square, [0.25, 0.5]).unwrap(), 0.25);
    }

    #[test]
    fn json_round_trip_and_rejection() {
        let rule = BoundaryPartitionRule::AngularSplit { theta0: 1.0 };
        let mesh = generate_disk_mesh(1.0, 0.3, &rule).unwrap();
        let text = mesh.to_json().unwrap();
        let back = Mesh::from_json(&text).unwrap();
        assert_eq!(back.vertices(), mesh.vertices());
        assert_eq!(back.boundary_edges(), mesh.boundary_edges());

        // Flip one triangle: negative area must be rejected.
        let mut doc: serde_json::Value = serde_json::from_str(&text).unwrap();
        let tri = doc["triangles"][0].as_array().unwrap().clone();
        doc["triangles"][0] = serde_json::json!([tri[0], tri[2], tri[1]]);
        assert!(Mesh::from_json(&doc.to_string()).is_err());

        // All-flux labeling leaves Γ₁ empty.
        let mut doc: serde_json::Value = serde_json::from_str(&text).unwrap();
        for e in doc["boundary_edges"].as_array_mut().unwrap() {
            e["label"] = serde_json::json!("flux");
        }
        assert!(Mesh::from_json(&doc.to_string()).is_err());

        // Dropping the domain tag still loads (inferred from the boundary).
        let mut doc: serde_json::Value = serde_json::from_str(&text).unwrap();
        doc.as_object_mut().unwrap().remove("domain");
        assert_eq!(*Mesh::from_json(&doc.to_string()).unwrap().domain(), *mesh.domain());
    }

    #[test]
    fn square_mesh_is_valid() {
        let rule = BoundaryPartitionRule::AxisSplit { axis: Axis::X, offset: 0.0 };
        let mesh = generate_square_mesh(0.25, &rule).unwrap();
        assert_eq!(mesh.triangle_count(), 32);
        assert!((mesh.total_area() - 1.0).abs() < 1e-14);
        assert!(mesh.has_flux_boundary());
        assert_eq!(mesh.boundary_loop().len(), 16);
    }
}
