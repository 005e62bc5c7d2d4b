//! Weighted harmonic extension `div(x^α ∇u) = 0` on the half-strip
//! `(0, H) × T`, `T = R/2πZ`, and its Dirichlet-to-Neumann map
//! `v ↦ −x^α u_x(0, ·)`, compared against the Fourier multiplier `|k|^{2s}`
//! with `α = 1 − 2s`.
//!
//! The lateral direction is second-order finite differences, diagonalized by
//! the FFT; each Fourier mode is then a tridiagonal finite-volume problem on
//! the graded layers `x_j = H (j/n_x)^{2/(1+α)}`.

use std::f64::consts::PI;
use std::fmt::Write as _;

use rayon::prelude::*;
use rustfft::num_complex::Complex;
use rustfft::FftPlanner;
use serde::{Deserialize, Serialize};
use statrs::function::gamma::gamma;

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FourierMode {
    pub k: u32,
    #[serde(default)]
    pub cos: f64,
    #[serde(default)]
    pub sin: f64,
}

/// `c₀ + Σ (a_k cos ky + b_k sin ky)` on `[0, 2π)`.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct FourierSeries {
    #[serde(default)]
    pub constant: f64,
    #[serde(default)]
    pub modes: Vec<FourierMode>,
}

impl FourierSeries {
    pub fn cosine(k: u32, amplitude: f64) -> FourierSeries {
        FourierSeries { constant: 0.0, modes: vec![FourierMode { k, cos: amplitude, sin: 0.0 }] }
    }

    pub fn eval(&self, y: f64) -> f64 {
        self.constant
            + self
                .modes
                .iter()
                .map(|m| m.cos * (m.k as f64 * y).cos() + m.sin * (m.k as f64 * y).sin())
                .sum::<f64>()
    }

    pub fn max_mode(&self) -> u32 {
        self.active().map(|m| m.k).max().unwrap_or(0)
    }

    /// Smallest nonzero active wavenumber.
    pub fn min_mode(&self) -> Option<u32> {
        self.active().map(|m| m.k).filter(|&k| k > 0).min()
    }

    fn active(&self) -> impl Iterator<Item = &FourierMode> {
        self.modes.iter().filter(|m| m.cos != 0.0 || m.sin != 0.0)
    }

    pub fn sample(&self, n: usize) -> Vec<f64> {
        (0..n).map(|m| self.eval(2.0 * PI * m as f64 / n as f64)).collect()
    }
}

/// `(−Δ)^s` on the periodic lattice: mode `k` is multiplied by `|k|^{2s}`.
pub fn spectral_fractional(v: &FourierSeries, s: f64) -> FourierSeries {
    FourierSeries {
        constant: 0.0,
        modes: v
            .modes
            .iter()
            .filter(|m| m.k > 0)
            .map(|m| {
                let f = (m.k as f64).powf(2.0 * s);
                FourierMode { k: m.k, cos: m.cos * f, sin: m.sin * f }
            })
            .collect(),
    }
}

/// The constant with `Γ_α = c_s (−Δ)^s` on the whole half-space,
/// `2^{1−2s} Γ(1−s) / Γ(s)`. Used only as a cross-check of the fit.
pub fn cs_constant(s: f64) -> f64 {
    2f64.powf(1.0 - 2.0 * s) * gamma(1.0 - s) / gamma(s)
}

pub const DEFAULT_N_X: usize = 256;
pub const DEFAULT_N_Y: usize = 128;
pub const DEFAULT_HEIGHT_FACTOR: f64 = 8.0;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ExtensionProblem {
    s: f64,
    alpha: f64,
    data: FourierSeries,
    strip_height: f64,
    n_x: usize,
    n_y: usize,
}

impl ExtensionProblem {
    /// `strip_height` defaults to `8/k_min` (8 for constant data).
    pub fn new(s: f64, data: FourierSeries, strip_height: Option<f64>, n_x: usize, n_y: usize) -> Result<ExtensionProblem> {
        if !(s > 0.0 && s < 1.0) {
            return Err(Error::Domain(format!("fractional order s must lie in (0, 1), got {s}")));
        }
        if n_x < 4 || n_y < 4 {
            return Err(Error::Domain(format!("grid too small: n_x = {n_x}, n_y = {n_y}")));
        }
        if 4 * data.max_mode() as usize > n_y {
            return Err(Error::Domain(format!(
                "mode {} exceeds n_y/4 = {} (n_y = {n_y})",
                data.max_mode(),
                n_y / 4
            )));
        }
        let strip_height =
            strip_height.unwrap_or_else(|| DEFAULT_HEIGHT_FACTOR / data.min_mode().unwrap_or(1) as f64);
        if !(strip_height > 0.0 && strip_height.is_finite()) {
            return Err(Error::Domain(format!("strip height must be > 0, got {strip_height}")));
        }
        Ok(ExtensionProblem { s, alpha: 1.0 - 2.0 * s, data, strip_height, n_x, n_y })
    }

    pub fn s(&self) -> f64 {
        self.s
    }

    pub fn alpha(&self) -> f64 {
        self.alpha
    }

    pub fn data(&self) -> &FourierSeries {
        &self.data
    }

    pub fn strip_height(&self) -> f64 {
        self.strip_height
    }

    pub fn grid(&self) -> (usize, usize) {
        (self.n_x, self.n_y)
    }

    /// Vertical layers `x_0 = 0 < … < x_{n_x} = H`.
    pub fn layers(&self) -> Vec<f64> {
        let p = 2.0 / (1.0 + self.alpha);
        (0..=self.n_x)
            .map(|j| self.strip_height * (j as f64 / self.n_x as f64).powf(p))
            .collect()
    }

    pub fn lateral_points(&self) -> Vec<f64> {
        (0..self.n_y).map(|m| 2.0 * PI * m as f64 / self.n_y as f64).collect()
    }

    fn dy(&self) -> f64 {
        2.0 * PI / self.n_y as f64
    }

    /// Eigenvalue of the periodic second difference for DFT index `m`.
    fn lateral_symbol(&self, m: usize) -> f64 {
        let dy = self.dy();
        let s = (PI * m as f64 / self.n_y as f64).sin();
        (2.0 * s / dy).powi(2)
    }
}

/// Finite-volume coefficients on the layers: harmonic fluxes
/// `a_{j+1/2} = 1/∫ x^{−α}` and dual-cell masses `m_j = ∫ x^α`.
struct Layers {
    x: Vec<f64>,
    flux: Vec<f64>,
    mass: Vec<f64>,
    alpha: f64,
}

impl Layers {
    fn new(p: &ExtensionProblem) -> Layers {
        let x = p.layers();
        let a = p.alpha;
        let n = x.len() - 1;
        let prim_neg = |t: f64| t.powf(1.0 - a) / (1.0 - a);
        let prim_pos = |t: f64| t.powf(1.0 + a) / (1.0 + a);
        let flux = (0..n).map(|j| 1.0 / (prim_neg(x[j + 1]) - prim_neg(x[j]))).collect();
        let mid = |j: usize| 0.5 * (x[j] + x[j + 1]);
        let mass = (0..=n)
            .map(|j| {
                let lo = if j == 0 { 0.0 } else { mid(j - 1) };
                let hi = if j == n { x[n] } else { mid(j) };
                prim_pos(hi) - prim_pos(lo)
            })
            .collect();
        Layers { x, flux, mass, alpha: a }
    }

    /// Response `φ_j` to unit boundary data for lateral symbol `lambda`.
    fn mode_response(&self, lambda: f64) -> Vec<f64> {
        let n = self.x.len() - 1;
        let mut phi = vec![0.0; n + 1];
        phi[0] = 1.0;
        // Thomas sweep over unknowns 1..n−1; φ_n = 0.
        let m = n - 1;
        let mut c_prime = vec![0.0; m];
        let mut d_prime = vec![0.0; m];
        for i in 0..m {
            let j = i + 1;
            let lower = -self.flux[j - 1];
            let upper = -self.flux[j];
            let diag = self.flux[j - 1] + self.flux[j] + lambda * self.mass[j];
            let rhs = if j == 1 { self.flux[0] } else { 0.0 };
            if i == 0 {
                c_prime[i] = upper / diag;
                d_prime[i] = rhs / diag;
            } else {
                let denom = diag - lower * c_prime[i - 1];
                c_prime[i] = upper / denom;
                d_prime[i] = (rhs - lower * d_prime[i - 1]) / denom;
            }
        }
        for i in (0..m).rev() {
            let next = if i + 1 < m { phi[i + 2] } else { 0.0 };
            phi[i + 1] = d_prime[i] - c_prime[i] * next;
        }
        phi
    }

    /// `−x^α φ_x(0⁺)` from the first two layer fluxes. Near `x = 0` the flux
    /// is `F₀ + c x^{1+α}`, and a harmonic cell flux then reads
    /// `F₀ + c ξ_j` with `ξ_j = ∫x / ∫x^{−α}` over the cell.
    fn extrapolated_flux(&self, phi: &[f64]) -> Result<f64> {
        let a = self.alpha;
        let x = &self.x;
        let xi = |j: usize| {
            let num = 0.5 * (x[j + 1].powi(2) - x[j].powi(2));
            let den = (x[j + 1].powf(1.0 - a) - x[j].powf(1.0 - a)) / (1.0 - a);
            num / den
        };
        let q0 = self.flux[0] * (phi[1] - phi[0]);
        let q1 = self.flux[1] * (phi[2] - phi[1]);
        let (x0, x1) = (xi(0), xi(1));
        if !(x1 > x0 * (1.0 + 1e-8)) {
            return Err(Error::Numeric(format!("flux extrapolation breakdown: layer ratio {}", x1 / x0)));
        }
        let f0 = (q0 * x1 - q1 * x0) / (x1 - x0);
        if !f0.is_finite() {
            return Err(Error::Numeric("flux extrapolation produced a non-finite value".into()));
        }
        Ok(-f0)
    }

    /// `∫_0^H x^α (φ_x² + λ φ²)` in the finite-volume inner product.
    fn mode_energy(&self, phi: &[f64], lambda: f64) -> f64 {
        let grad: f64 = self.flux.iter().enumerate().map(|(j, a)| a * (phi[j + 1] - phi[j]).powi(2)).sum();
        let react: f64 = self.mass.iter().zip(phi).map(|(m, p)| m * p * p).sum();
        grad + lambda * react
    }
}

/// Per-DFT-index responses, symbols and energies.
struct ModeTable {
    responses: Vec<Vec<f64>>,
    dtn: Vec<f64>,
    energy: Vec<f64>,
}

fn mode_table(p: &ExtensionProblem, layers: &Layers, with_responses: bool) -> Result<ModeTable> {
    let half = p.n_y / 2;
    // Indices m and n_y − m share a symbol; solve each once.
    let per: Vec<(Vec<f64>, f64, f64)> = (0..=half)
        .into_par_iter()
        .map(|m| {
            let lambda = p.lateral_symbol(m);
            let phi = layers.mode_response(lambda);
            let sigma = layers.extrapolated_flux(&phi)?;
            let e = layers.mode_energy(&phi, lambda);
            Ok((if with_responses { phi } else { Vec::new() }, sigma, e))
        })
        .collect::<Result<_>>()?;
    let pick = |m: usize| if m <= half { m } else { p.n_y - m };
    Ok(ModeTable {
        responses: (0..p.n_y).map(|m| per[pick(m)].0.clone()).collect(),
        dtn: (0..p.n_y).map(|m| per[pick(m)].1).collect(),
        energy: (0..p.n_y).map(|m| per[pick(m)].2).collect(),
    })
}

fn forward(values: &[f64]) -> Vec<Complex<f64>> {
    let mut buf: Vec<Complex<f64>> = values.iter().map(|&v| Complex::new(v, 0.0)).collect();
    FftPlanner::new().plan_fft_forward(buf.len()).process(&mut buf);
    buf
}

fn inverse_real(mut buf: Vec<Complex<f64>>) -> Vec<f64> {
    let n = buf.len();
    FftPlanner::new().plan_fft_inverse(n).process(&mut buf);
    buf.iter().map(|c| c.re / n as f64).collect()
}

/// Grid values `u(x_j, y_m)`, row-major by layer.
#[derive(Debug, Clone, PartialEq)]
pub struct ExtensionField {
    pub x: Vec<f64>,
    pub y: Vec<f64>,
    pub values: Vec<f64>,
}

impl ExtensionField {
    pub fn at(&self, j: usize, m: usize) -> f64 {
        self.values[j * self.y.len() + m]
    }
}

pub fn extend(problem: &ExtensionProblem) -> Result<ExtensionField> {
    let layers = Layers::new(problem);
    let table = mode_table(problem, &layers, true)?;
    let v_hat = forward(&problem.data.sample(problem.n_y));
    let mut values = Vec::with_capacity(layers.x.len() * problem.n_y);
    for j in 0..layers.x.len() {
        let row: Vec<Complex<f64>> = v_hat.iter().enumerate().map(|(m, v)| v * table.responses[m][j]).collect();
        values.extend(inverse_real(row));
    }
    Ok(ExtensionField { x: layers.x, y: problem.lateral_points(), values })
}

/// `f = −x^α u_x(0⁺, y_m)` on the lateral grid.
pub fn dtn_apply(problem: &ExtensionProblem) -> Result<Vec<f64>> {
    let layers = Layers::new(problem);
    let table = mode_table(problem, &layers, false)?;
    let v_hat = forward(&problem.data.sample(problem.n_y));
    Ok(inverse_real(v_hat.iter().zip(&table.dtn).map(|(v, s)| v * *s).collect()))
}

/// `(∫ x^α |∇u|², ⟨Γ_α v, v⟩)`, both with the lateral trapezoid rule.
pub fn energy_identity(problem: &ExtensionProblem) -> Result<(f64, f64)> {
    let layers = Layers::new(problem);
    let table = mode_table(problem, &layers, false)?;
    let v_hat = forward(&problem.data.sample(problem.n_y));
    // Discrete Parseval: Δy Σ g_m² = (Δy/n_y) Σ |ĝ_k|².
    let scale = problem.dy() / problem.n_y as f64;
    let energy = scale * v_hat.iter().zip(&table.energy).map(|(v, e)| v.norm_sqr() * e).sum::<f64>();
    let pairing = scale * v_hat.iter().zip(&table.dtn).map(|(v, s)| v.norm_sqr() * s).sum::<f64>();
    Ok((energy, pairing))
}

/// `Δy Σ f_m g_m`.
pub fn lateral_inner(f: &[f64], g: &[f64]) -> f64 {
    let dy = 2.0 * PI / f.len() as f64;
    dy * f.iter().zip(g).map(|(a, b)| a * b).sum::<f64>()
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SymbolRow {
    pub s: f64,
    pub k: u32,
    pub n_x: usize,
    pub n_y: usize,
    pub strip_height: f64,
    pub fitted_c: f64,
    /// `‖Γ v_k − c|k|^{2s} v_k‖ / ‖c|k|^{2s} v_k‖`.
    pub rel_error: f64,
    /// Measured multiplier `⟨Γ v_k, v_k⟩/‖v_k‖²`.
    pub symbol: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SymbolReport {
    pub rows: Vec<SymbolRow>,
}

impl SymbolReport {
    pub fn to_csv(&self) -> String {
        let mut out = String::from("s,k,n_x,n_y,H,fitted_c,rel_error\n");
        for r in &self.rows {
            let _ = writeln!(out, "{},{},{},{},{},{},{}", r.s, r.k, r.n_x, r.n_y, r.strip_height, r.fitted_c, r.rel_error);
        }
        out
    }

    pub fn rows_for(&self, s: f64, resolution: (usize, usize)) -> Vec<&SymbolRow> {
        self.rows.iter().filter(|r| r.s == s && (r.n_x, r.n_y) == resolution).collect()
    }
}

/// For each `s` and resolution, applies the DtN map to `cos(ky)` for every
/// `k`, fits one constant `c` by least squares, and records per-mode
/// residuals. The strip height is `height_factor / min(k_list)`.
pub fn symbol_report(
    s_list: &[f64],
    k_list: &[u32],
    resolutions: &[(usize, usize)],
    height_factor: f64,
) -> Result<SymbolReport> {
    let k_min = k_list.iter().copied().filter(|&k| k > 0).min();
    let Some(k_min) = k_min else {
        return Err(Error::Domain("symbol report needs a nonzero wavenumber".into()));
    };
    if s_list.is_empty() || resolutions.is_empty() {
        return Err(Error::Domain("symbol report needs nonempty s and resolution grids".into()));
    }
    let height = height_factor / k_min as f64;
    let cells: Vec<(f64, (usize, usize))> =
        s_list.iter().flat_map(|&s| resolutions.iter().map(move |&r| (s, r))).collect();
    let blocks: Vec<Vec<SymbolRow>> = cells
        .par_iter()
        .map(|&(s, (n_x, n_y))| {
            let mut fs = Vec::with_capacity(k_list.len());
            for &k in k_list {
                let v = FourierSeries::cosine(k, 1.0);
                let p = ExtensionProblem::new(s, v.clone(), Some(height), n_x, n_y)?;
                fs.push((k, v.sample(n_y), dtn_apply(&p)?));
            }
            let (mut num, mut den) = (0.0, 0.0);
            for (k, v, f) in &fs {
                let target: Vec<f64> = v.iter().map(|x| x * (*k as f64).powf(2.0 * s)).collect();
                num += lateral_inner(f, &target);
                den += lateral_inner(&target, &target);
            }
            let c = num / den;
            Ok(fs
                .iter()
                .map(|(k, v, f)| {
                    let mult = (*k as f64).powf(2.0 * s);
                    let diff: Vec<f64> = f.iter().zip(v).map(|(a, b)| a - c * mult * b).collect();
                    let target: Vec<f64> = v.iter().map(|b| c * mult * b).collect();
                    SymbolRow {
                        s,
                        k: *k,
                        n_x,
                        n_y,
                        strip_height: height,
                        fitted_c: c,
                        rel_error: (lateral_inner(&diff, &diff) / lateral_inner(&target, &target)).sqrt(),
                        symbol: lateral_inner(f, v) / lateral_inner(v, v),
                    }
                })
                .collect())
        })
        .collect::<Result<_>>()?;
    Ok(SymbolReport { rows: blocks.into_iter().flatten().collect() })
}
