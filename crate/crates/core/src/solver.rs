//! P1 discretization of the regularized problem and its damped Newton solve.
//!
//! Sign convention (from the weak form): find `u = 0` on Γ₁ with
//!
//! ```text
//! ∫ d^α ∇u·∇φ + ∫ φ dμ₁ⁿ = ∫_Γ₂ φ dμ₂ⁿ − ∫_Γ₂ |u|^{γ−1} u φ
//! ```
//!
//! for every hat `φ` vanishing on Γ₁, i.e. `F(u) = K u + B(u) − L = 0` with
//! `L_i = ⟨μ₂ⁿ, φ_i⟩ − ⟨μ₁ⁿ, φ_i⟩`. `F` is the gradient of the convex energy
//! `J(u) = ½ uᵀK u + ∫_Γ₂ |u|^{γ+1}/(γ+1) − Lᵀu`, which drives the line search.

use std::sync::Arc;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{pcg, CsrMatrix, IncompleteCholesky, Jacobi, Preconditioner};
use crate::measure::{mollify_with, BumpProfile, MeasureData, MollifiedMeasure, Support};
use crate::mesh::{BoundaryPartitionRule, Mesh};
use crate::quadrature::{gauss_legendre, Rule1D};
use crate::weight::{weighted_areas, WeightSpec};

const NOT_FREE: usize = usize::MAX;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SolverOptions {
    /// Newton stops once `‖F‖∞ ≤ newton_rtol·(1 + ‖L‖∞)`.
    pub newton_rtol: f64,
    pub max_newton: usize,
    pub cg_rtol: f64,
    /// Gauss points per Γ₂ edge for the boundary nonlinearity.
    pub edge_points: usize,
    pub profile: BumpProfile,
}

impl Default for SolverOptions {
    fn default() -> Self {
        SolverOptions {
            newton_rtol: 1e-10,
            max_newton: 100,
            cg_rtol: 1e-12,
            edge_points: 6,
            profile: BumpProfile::Quartic,
        }
    }
}

#[derive(Debug, Clone)]
pub struct ProblemSpec {
    pub gamma: f64,
    pub alpha: f64,
    pub mesh: Mesh,
    pub mu1: MeasureData,
    pub mu2: MeasureData,
    pub partition: BoundaryPartitionRule,
}

impl ProblemSpec {
    /// Relabels `mesh` with `partition` and checks every invariant.
    pub fn new(
        gamma: f64,
        alpha: f64,
        mesh: &Mesh,
        mu1: MeasureData,
        mu2: MeasureData,
        partition: BoundaryPartitionRule,
    ) -> Result<ProblemSpec> {
        if !(gamma > 1.0) || !gamma.is_finite() {
            return Err(Error::Domain(format!("gamma must exceed 1, got {gamma}")));
        }
        WeightSpec::new(alpha, *mesh.domain())?;
        if mu1.support != Support::Interior || mu2.support != Support::Gamma2 {
            return Err(Error::Domain("mu1 must be interior and mu2 supported on Γ₂".into()));
        }
        let mesh = mesh.relabeled(&partition)?;
        mu1.validate(&mesh)?;
        mu2.validate(&mesh)?;
        Ok(ProblemSpec { gamma, alpha, mesh, mu1, mu2, partition })
    }

    pub fn weight(&self) -> WeightSpec {
        WeightSpec { alpha: self.alpha, domain: *self.mesh.domain() }
    }

    /// The same problem on another mesh of the same domain.
    pub fn on_mesh(&self, mesh: &Mesh) -> Result<ProblemSpec> {
        ProblemSpec::new(self.gamma, self.alpha, mesh, self.mu1.clone(), self.mu2.clone(), self.partition)
    }
}

/// P1 element matrix `W_T ∇φ_i·∇φ_j` for a triangle with `W_T = ∫_T w`.
pub fn element_stiffness(mesh: &Mesh, t: usize, weighted_area: f64) -> [[f64; 3]; 3] {
    let g = mesh.hat_gradients(t);
    let mut k = [[0.0; 3]; 3];
    for i in 0..3 {
        for j in 0..3 {
            k[i][j] = weighted_area * (g[i][0] * g[j][0] + g[i][1] * g[j][1]);
        }
    }
    k
}

/// Everything about a problem that does not depend on `n` or `u`.
#[derive(Debug, Clone)]
pub struct Discretization {
    pub spec: ProblemSpec,
    pub options: SolverOptions,
    weighted_area: Vec<f64>,
    /// Vertex → free index, or `NOT_FREE` on Γ₁.
    free_index: Vec<usize>,
    free_vertices: Vec<usize>,
    stiffness: CsrMatrix,
    /// Γ₂ edges as `(a, b, length)`.
    flux_edges: Vec<(usize, usize, f64)>,
    edge_rule: &'static Rule1D,
}

impl Discretization {
    pub fn new(spec: ProblemSpec, options: SolverOptions) -> Result<Discretization> {
        let mesh = &spec.mesh;
        let weighted_area = weighted_areas(&spec.weight(), mesh)?;
        if let Some(t) = weighted_area.iter().position(|w| !(w.is_finite() && *w > 0.0)) {
            return Err(Error::Numeric(format!(
                "weighted quadrature failed on triangle {t} (∫w = {})",
                weighted_area[t]
            )));
        }
        let mut free_index = vec![NOT_FREE; mesh.vertex_count()];
        let mut free_vertices = Vec::new();
        for v in 0..mesh.vertex_count() {
            if !mesh.is_dirichlet(v) {
                free_index[v] = free_vertices.len();
                free_vertices.push(v);
            }
        }
        let stiffness = assemble(mesh, &weighted_area, &free_index, free_vertices.len());
        let flux_edges = mesh.flux_edges().map(|e| (e.a, e.b, mesh.edge_length(e))).collect();
        Ok(Discretization {
            options,
            weighted_area,
            free_index,
            free_vertices,
            stiffness,
            flux_edges,
            edge_rule: gauss_legendre(options.edge_points.clamp(1, 64)),
            spec,
        })
    }

    pub fn mesh(&self) -> &Mesh {
        &self.spec.mesh
    }

    /// `∫_T w` per triangle.
    pub fn weighted_areas(&self) -> &[f64] {
        &self.weighted_area
    }

    /// Stiffness over the free (non-Γ₁) vertices.
    pub fn stiffness(&self) -> &CsrMatrix {
        &self.stiffness
    }

    pub fn free_vertices(&self) -> &[usize] {
        &self.free_vertices
    }

    pub fn dof(&self) -> usize {
        self.free_vertices.len()
    }

    fn to_free(&self, full: &[f64]) -> Vec<f64> {
        self.free_vertices.iter().map(|&v| full[v]).collect()
    }

    fn to_full(&self, free: &[f64]) -> Vec<f64> {
        let mut full = vec![0.0; self.mesh().vertex_count()];
        for (&v, &x) in self.free_vertices.iter().zip(free) {
            full[v] = x;
        }
        full
    }

    /// `∫_Γ₂ |u|^{γ−1} u φ_i` for every vertex, and the nonzero entries of
    /// `∫_Γ₂ γ|u|^{γ−1} φ_i φ_j`, both by Gauss quadrature on each Γ₂ edge.
    pub fn boundary_term(&self, u: &[f64]) -> (Vec<f64>, Vec<(usize, usize, f64)>) {
        let gamma = self.spec.gamma;
        let mut residual = vec![0.0; u.len()];
        let mut jac = Vec::with_capacity(4 * self.flux_edges.len());
        for &(a, b, len) in &self.flux_edges {
            let (mut ra, mut rb) = (0.0, 0.0);
            let (mut jaa, mut jab, mut jbb) = (0.0, 0.0, 0.0);
            for (&s, &w) in self.edge_rule.nodes.iter().zip(&self.edge_rule.weights) {
                let us = (1.0 - s) * u[a] + s * u[b];
                let abs = us.abs();
                let g = if abs == 0.0 { 0.0 } else { abs.powf(gamma - 1.0) * us };
                let dg = if abs == 0.0 { 0.0 } else { gamma * abs.powf(gamma - 1.0) };
                let lw = len * w;
                ra += lw * g * (1.0 - s);
                rb += lw * g * s;
                jaa += lw * dg * (1.0 - s) * (1.0 - s);
                jab += lw * dg * (1.0 - s) * s;
                jbb += lw * dg * s * s;
            }
            residual[a] += ra;
            residual[b] += rb;
            jac.extend([(a, a, jaa), (a, b, jab), (b, a, jab), (b, b, jbb)]);
        }
        (residual, jac)
    }

    /// `∫_Γ₂ |u|^{γ+1}/(γ+1)` with the same edge quadrature.
    pub fn boundary_energy(&self, u: &[f64]) -> f64 {
        let gamma = self.spec.gamma;
        self.flux_edges
            .iter()
            .map(|&(a, b, len)| {
                self.edge_rule
                    .nodes
                    .iter()
                    .zip(&self.edge_rule.weights)
                    .map(|(&s, &w)| len * w * ((1.0 - s) * u[a] + s * u[b]).abs().powf(gamma + 1.0))
                    .sum::<f64>()
            })
            .sum::<f64>()
            / (gamma + 1.0)
    }

    /// Mollifies both data measures at index `n`.
    pub fn mollified(&self, n: u32) -> Result<(Arc<MollifiedMeasure>, Arc<MollifiedMeasure>)> {
        let profile = self.options.profile;
        Ok((
            Arc::new(mollify_with(&self.spec.mu1, n, self.mesh(), profile)?),
            Arc::new(mollify_with(&self.spec.mu2, n, self.mesh(), profile)?),
        ))
    }

    /// Full-length `⟨μ₂ⁿ, φ_i⟩ − ⟨μ₁ⁿ, φ_i⟩`.
    pub fn load(&self, mu1n: &MollifiedMeasure, mu2n: &MollifiedMeasure) -> Vec<f64> {
        let l1 = mu1n.load_vector();
        let l2 = mu2n.load_vector();
        l2.iter().zip(&l1).map(|(a, b)| a - b).collect()
    }

    fn residual_free(&self, u_free: &[f64], load_free: &[f64]) -> Vec<f64> {
        let u_full = self.to_full(u_free);
        let (b, _) = self.boundary_term(&u_full);
        let ku = self.stiffness.mul(u_free);
        self.free_vertices
            .iter()
            .enumerate()
            .map(|(i, &v)| ku[i] + b[v] - load_free[i])
            .collect()
    }

    fn energy_free(&self, u_free: &[f64], load_free: &[f64]) -> f64 {
        let ku = self.stiffness.mul(u_free);
        let quad: f64 = u_free.iter().zip(&ku).map(|(a, b)| a * b).sum();
        let lin: f64 = u_free.iter().zip(load_free).map(|(a, b)| a * b).sum();
        0.5 * quad + self.boundary_energy(&self.to_full(u_free)) - lin
    }

    fn jacobian_free(&self, u_free: &[f64]) -> CsrMatrix {
        let mut jac = self.stiffness.clone();
        let (_, entries) = self.boundary_term(&self.to_full(u_free));
        for (a, b, v) in entries {
            let (i, j) = (self.free_index[a], self.free_index[b]);
            if i != NOT_FREE && j != NOT_FREE {
                jac.add(i, j, v);
            }
        }
        jac
    }

    /// Solves for `u_n`, starting from `initial` (full vertex vector) if given.
    pub fn solve(&self, n: u32, initial: Option<&[f64]>) -> Result<DiscreteSolution> {
        let (mu1n, mu2n) = self.mollified(n)?;
        let load = self.load(&mu1n, &mu2n);
        let load_free = self.to_free(&load);
        let load_norm = load_free.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        let tol = self.options.newton_rtol * (1.0 + load_norm);
        let mut u = initial.map_or_else(|| vec![0.0; self.dof()], |u0| self.to_free(u0));
        let mut telemetry = Telemetry {
            warm_start: initial.is_some(),
            load_norm,
            ..Telemetry::default()
        };
        let mut f = self.residual_free(&u, &load_free);
        let mut energy = self.energy_free(&u, &load_free);
        loop {
            let norm = inf_norm(&f);
            telemetry.residual_history.push(norm);
            if norm <= tol {
                break;
            }
            if telemetry.newton_iterations >= self.options.max_newton {
                return Err(Error::Convergence {
                    iterations: telemetry.newton_iterations,
                    last: norm,
                    history: telemetry.residual_history,
                });
            }
            telemetry.newton_iterations += 1;
            let jac = self.jacobian_free(&u);
            let rhs: Vec<f64> = f.iter().map(|v| -v).collect();
            let step = self.linear_solve(&jac, &rhs, &mut telemetry)?;
            // Armijo on J; a step that lowers the residual is also taken, since
            // near the solution J stalls at rounding level.
            let slope: f64 = f.iter().zip(&step).map(|(a, b)| a * b).sum();
            let mut t = 1.0;
            loop {
                let trial: Vec<f64> = u.iter().zip(&step).map(|(a, b)| a + t * b).collect();
                let trial_f = self.residual_free(&trial, &load_free);
                let trial_e = self.energy_free(&trial, &load_free);
                if trial_e <= energy + 1e-4 * t * slope || inf_norm(&trial_f) < norm {
                    u = trial;
                    f = trial_f;
                    energy = trial_e;
                    break;
                }
                t *= 0.5;
                telemetry.line_search_halvings += 1;
                if t < 1e-12 {
                    return Err(Error::Numeric(format!(
                        "line search stalled at Newton step {} (residual {norm:.3e})",
                        telemetry.newton_iterations
                    )));
                }
            }
        }
        telemetry.final_residual = *telemetry.residual_history.last().unwrap();
        Ok(DiscreteSolution {
            coefficients: self.to_full(&u),
            n,
            telemetry,
            mu1n,
            mu2n,
        })
    }

    fn linear_solve(&self, jac: &CsrMatrix, rhs: &[f64], telemetry: &mut Telemetry) -> Result<Vec<f64>> {
        let rtol = self.options.cg_rtol;
        let max_iter = 10 * self.dof().max(1);
        let mut x = vec![0.0; rhs.len()];
        let outcome = pcg(jac, rhs, &mut x, &Jacobi::new(jac)?, rtol, max_iter);
        let mut iterations = outcome.iterations;
        if !outcome.converged {
            telemetry.ic0_fallbacks += 1;
            let ic: Box<dyn Preconditioner> = Box::new(IncompleteCholesky::new(jac)?);
            let retry = pcg(jac, rhs, &mut x, ic.as_ref(), rtol, max_iter);
            iterations += retry.iterations;
            if !retry.converged {
                return Err(Error::Numeric(format!(
                    "conjugate gradients stalled at relative residual {:.3e}",
                    retry.relative_residual
                )));
            }
        }
        telemetry.cg_iterations.push(iterations);
        Ok(x)
    }

    /// `max_i |∫ d^α ∇u·∇φ_i + ⟨μ₁ⁿ, φ_i⟩ − ⟨μ₂ⁿ, φ_i⟩ + ∫_Γ₂ |u|^{γ−1}uφ_i|`
    /// over hats vanishing on Γ₁, recomputed element by element.
    pub fn weak_form_residual(&self, sol: &DiscreteSolution) -> f64 {
        let mesh = self.mesh();
        let u = &sol.coefficients;
        let mut r = vec![0.0; mesh.vertex_count()];
        for (t, tri) in mesh.triangles().iter().enumerate() {
            let k = element_stiffness(mesh, t, self.weighted_area[t]);
            for i in 0..3 {
                r[tri[i]] += (0..3).map(|j| k[i][j] * u[tri[j]]).sum::<f64>();
            }
        }
        let (b, _) = self.boundary_term(u);
        let l1 = sol.mu1n.load_vector();
        let l2 = sol.mu2n.load_vector();
        self.free_vertices
            .iter()
            .map(|&v| (r[v] + l1[v] - l2[v] + b[v]).abs())
            .fold(0.0, f64::max)
    }

    /// Both sides of the weak form tested with `φ = u`:
    /// `(∫ d^α|∇u|² + ∫_Γ₂ |u|^{γ+1}, ⟨μ₂ⁿ, u⟩ − ⟨μ₁ⁿ, u⟩)`.
    pub fn energy_identity(&self, sol: &DiscreteSolution) -> (f64, f64) {
        let u = &sol.coefficients;
        let lhs = self.dirichlet_energy(u) + (self.spec.gamma + 1.0) * self.boundary_energy(u);
        let rhs = sol.mu2n.pair_discrete(u) - sol.mu1n.pair_discrete(u);
        (lhs, rhs)
    }

    /// `∫ d^α |∇u|²` for the P1 function `u`.
    pub fn dirichlet_energy(&self, u: &[f64]) -> f64 {
        let mesh = self.mesh();
        mesh.triangles()
            .iter()
            .enumerate()
            .map(|(t, tri)| {
                let g = mesh.hat_gradients(t);
                let grad = [0, 1].map(|c| (0..3).map(|i| u[tri[i]] * g[i][c]).sum::<f64>());
                self.weighted_area[t] * (grad[0] * grad[0] + grad[1] * grad[1])
            })
            .sum()
    }

    /// Solutions for increasing `n`, each warm-started from the previous one.
    pub fn solve_sequence(&self, n_list: &[u32]) -> Result<Vec<DiscreteSolution>> {
        if n_list.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::Domain("mollification indices must be strictly increasing".into()));
        }
        let mut out: Vec<DiscreteSolution> = Vec::with_capacity(n_list.len());
        for &n in n_list {
            let initial = out.last().map(|s| s.coefficients.as_slice());
            let sol = self
                .solve(n, initial)
                .map_err(|e| Error::AtIndex { n, source: Box::new(e) })?;
            log::info!(
                "n = {n}: {} Newton steps, residual {:.2e}",
                sol.telemetry.newton_iterations,
                sol.telemetry.final_residual
            );
            out.push(sol);
        }
        Ok(out)
    }
}

fn inf_norm(v: &[f64]) -> f64 {
    v.iter().fold(0.0f64, |m, x| m.max(x.abs()))
}

fn assemble(mesh: &Mesh, weighted_area: &[f64], free_index: &[usize], dof: usize) -> CsrMatrix {
    let mut rows: Vec<Vec<usize>> = vec![Vec::new(); dof];
    for tri in mesh.triangles() {
        for &a in tri {
            for &b in tri {
                let (i, j) = (free_index[a], free_index[b]);
                if i != NOT_FREE && j != NOT_FREE {
                    rows[i].push(j);
                }
            }
        }
    }
    let mut k = CsrMatrix::with_pattern(dof, rows);
    // Element matrices in parallel, scattered serially in triangle order.
    let local: Vec<[[f64; 3]; 3]> = (0..mesh.triangle_count())
        .into_par_iter()
        .map(|t| element_stiffness(mesh, t, weighted_area[t]))
        .collect();
    for (tri, ke) in mesh.triangles().iter().zip(&local) {
        for a in 0..3 {
            for b in 0..3 {
                let (i, j) = (free_index[tri[a]], free_index[tri[b]]);
                if i != NOT_FREE && j != NOT_FREE {
                    k.add(i, j, ke[a][b]);
                }
            }
        }
    }
    k
}

/// Stiffness over the free vertices of `spec`.
pub fn assemble_stiffness(spec: &ProblemSpec) -> Result<CsrMatrix> {
    Ok(Discretization::new(spec.clone(), SolverOptions::default())?.stiffness)
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Telemetry {
    pub newton_iterations: usize,
    pub residual_history: Vec<f64>,
    pub final_residual: f64,
    pub load_norm: f64,
    pub cg_iterations: Vec<usize>,
    pub ic0_fallbacks: usize,
    pub line_search_halvings: usize,
    pub warm_start: bool,
}

/// Nodal values of `u_n` (zero on Γ₁) with the data it was solved for.
#[derive(Debug, Clone)]
pub struct DiscreteSolution {
    pub coefficients: Vec<f64>,
    pub n: u32,
    pub telemetry: Telemetry,
    pub mu1n: Arc<MollifiedMeasure>,
    pub mu2n: Arc<MollifiedMeasure>,
}

impl DiscreteSolution {
    /// Constant gradient of `u` on triangle `t`.
    pub fn gradient(&self, mesh: &Mesh, t: usize) -> [f64; 2] {
        let g = mesh.hat_gradients(t);
        let tri = mesh.triangles()[t];
        [0, 1].map(|c| (0..3).map(|i| self.coefficients[tri[i]] * g[i][c]).sum())
    }

    pub fn to_json(&self, mesh_ref: &str) -> Result<String> {
        #[derive(Serialize)]
        struct Doc<'a> {
            mesh_ref: &'a str,
            coefficients: &'a [f64],
            n: u32,
            telemetry: &'a Telemetry,
        }
        Ok(serde_json::to_string(&Doc {
            mesh_ref,
            coefficients: &self.coefficients,
            n: self.n,
            telemetry: &self.telemetry,
        })?)
    }
}

/// One-shot `u_n` for `spec`.
pub fn solve_regularized(spec: &ProblemSpec, n: u32) -> Result<DiscreteSolution> {
    Discretization::new(spec.clone(), SolverOptions::default())?.solve(n, None)
}

pub fn solve_sequence(spec: &ProblemSpec, n_list: &[u32]) -> Result<Vec<DiscreteSolution>> {
    Discretization::new(spec.clone(), SolverOptions::default())?.solve_sequence(n_list)
}
