//! Quadrature tables: Gauss–Legendre and Gauss–Jacobi on `[0, 1]`, symmetric
//! triangle rules, and geometrically graded composite rules for integrands with
//! an algebraic endpoint singularity `t^a`.
//!
//! Tables are built lazily and shared; every accessor hands out `Arc`s or
//! `'static` references so callers never rebuild a rule in a hot loop.

use std::collections::HashMap;
use std::num::NonZeroUsize;
use std::sync::{Arc, Mutex, OnceLock};

use gauss_quad::{FiniteAboveNegOneF64, GaussJacobi, GaussLegendre};

/// Largest Gauss–Legendre table kept in the static cache.
const MAX_LEGENDRE: usize = 64;

/// A one-dimensional rule on `[0, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Rule1D {
    pub nodes: Vec<f64>,
    pub weights: Vec<f64>,
}

impl Rule1D {
    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Integrates `f` over `[a, b]` with the rule mapped affinely.
    pub fn integrate(&self, a: f64, b: f64, mut f: impl FnMut(f64) -> f64) -> f64 {
        let len = b - a;
        self.nodes
            .iter()
            .zip(&self.weights)
            .map(|(&t, &w)| w * f(a + len * t))
            .sum::<f64>()
            * len
    }

    /// Reflects the rule about `1/2`.
    pub fn reversed(&self) -> Rule1D {
        Rule1D {
            nodes: self.nodes.iter().rev().map(|t| 1.0 - t).collect(),
            weights: self.weights.iter().rev().copied().collect(),
        }
    }
}

/// Gauss–Legendre rule with `n` points on `[0, 1]`.
pub fn gauss_legendre(n: usize) -> &'static Rule1D {
    static TABLE: OnceLock<Vec<Rule1D>> = OnceLock::new();
    assert!(
        (1..=MAX_LEGENDRE).contains(&n),
        "gauss-legendre order {n} out of table range"
    );
    let table = TABLE.get_or_init(|| {
        (1..=MAX_LEGENDRE)
            .map(|k| {
                let rule = GaussLegendre::new(NonZeroUsize::new(k).unwrap());
                let mut pairs: Vec<(f64, f64)> = rule
                    .as_node_weight_pairs()
                    .iter()
                    .map(|&(x, w)| (0.5 * (x + 1.0), 0.5 * w))
                    .collect();
                pairs.sort_by(|a, b| a.0.total_cmp(&b.0));
                Rule1D {
                    nodes: pairs.iter().map(|p| p.0).collect(),
                    weights: pairs.iter().map(|p| p.1).collect(),
                }
            })
            .collect()
    });
    &table[n - 1]
}

/// Rule for `∫_0^1 g(t) dt` when `g(t) ≈ t^a · smooth(t)` near `t = 0`.
///
/// Built from the Gauss–Jacobi rule for the weight `t^a`, with the weight
/// divided back out of the returned weights, so the rule is exact for
/// `t^a · p(t)`, `deg p ≤ 2n − 1`. Falls back to Gauss–Legendre at `a = 0`.
pub fn singular_left(n: usize, a: f64) -> Arc<Rule1D> {
    static CACHE: OnceLock<Mutex<HashMap<(usize, u64), Arc<Rule1D>>>> = OnceLock::new();
    if a == 0.0 {
        return Arc::new(gauss_legendre(n).clone());
    }
    let cache = CACHE.get_or_init(|| Mutex::new(HashMap::new()));
    let key = (n, a.to_bits());
    if let Some(rule) = cache.lock().unwrap().get(&key) {
        return rule.clone();
    }
    // gauss-quad pins the middle node of odd-degree Jacobi rules to zero, which
    // is only correct for symmetric weights; always build an even degree.
    let deg = n + (n % 2);
    let jacobi = GaussJacobi::new(
        NonZeroUsize::new(deg).unwrap(),
        FiniteAboveNegOneF64::new(0.0).unwrap(),
        FiniteAboveNegOneF64::new(a).expect("singular exponent must exceed -1"),
    );
    // (1 + x)^a on [-1, 1] becomes 2^{a+1} t^a dt on [0, 1].
    let scale = 0.5f64.powf(a + 1.0);
    let mut pairs: Vec<(f64, f64)> = jacobi
        .as_node_weight_pairs()
        .iter()
        .map(|&(x, w)| {
            let t = 0.5 * (x + 1.0);
            (t, w * scale / t.powf(a))
        })
        .collect();
    pairs.sort_by(|p, q| p.0.total_cmp(&q.0));
    let rule = Arc::new(Rule1D {
        nodes: pairs.iter().map(|p| p.0).collect(),
        weights: pairs.iter().map(|p| p.1).collect(),
    });
    cache.lock().unwrap().insert(key, rule.clone());
    rule
}

/// Geometric grading parameters for composite rules near a singular endpoint.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Grading {
    /// Ratio between consecutive cell lengths toward the singular end.
    pub ratio: f64,
    /// Number of geometric layers.
    pub depth: usize,
    /// Gauss points per cell.
    pub points: usize,
}

impl Default for Grading {
    fn default() -> Self {
        Grading {
            ratio: 0.25,
            depth: 12,
            points: 8,
        }
    }
}

impl Grading {
    /// Composite rule on `[0, 1]` graded toward `0`.
    ///
    /// Cells are `[0, r^D]`, `[r^D, r^{D-1}]`, …, `[r, 1]`. The innermost cell
    /// uses [`singular_left`] with exponent `a`; the others apply Gauss–Legendre
    /// in `log t`, which keeps `t^a` entire on each cell.
    pub fn toward_zero(&self, a: f64) -> Rule1D {
        let gl = gauss_legendre(self.points);
        let inner = singular_left(self.points, a);
        let mut nodes = Vec::with_capacity((self.depth + 1) * self.points);
        let mut weights = Vec::with_capacity(nodes.capacity());
        let mut right = self.ratio.powi(self.depth as i32);
        for (&t, &w) in inner.nodes.iter().zip(&inner.weights) {
            nodes.push(right * t);
            weights.push(right * w);
        }
        // Geometric cells are integrated in log t, where t^a is entire.
        let span = -self.ratio.ln();
        for _ in 0..self.depth {
            let left = right;
            right = left / self.ratio;
            for (&s, &w) in gl.nodes.iter().zip(&gl.weights) {
                let t = left * (span * s).exp();
                nodes.push(t);
                weights.push(span * w * t);
            }
        }
        Rule1D { nodes, weights }
    }

    /// Composite rule on `[0, 1]` graded toward both endpoints, symmetric
    /// about `1/2`. Both end cells use Gauss–Legendre.
    pub fn toward_both(&self) -> Rule1D {
        let half = self.toward_zero(0.0);
        let mut nodes: Vec<f64> = half.nodes.iter().map(|t| 0.5 * t).collect();
        let mut weights: Vec<f64> = half.weights.iter().map(|w| 0.5 * w).collect();
        for (&t, &w) in half.nodes.iter().zip(&half.weights).rev() {
            nodes.push(1.0 - 0.5 * t);
            weights.push(0.5 * w);
        }
        Rule1D { nodes, weights }
    }
}

/// A rule on the reference triangle in barycentric coordinates; weights sum
/// to one and are scaled by the physical area at use.
#[derive(Debug, Clone, PartialEq)]
pub struct TriangleRule {
    pub bary: Vec<[f64; 3]>,
    pub weights: Vec<f64>,
}

fn orbit3(a: f64, w: f64, bary: &mut Vec<[f64; 3]>, weights: &mut Vec<f64>) {
    let b = 1.0 - 2.0 * a;
    for p in [[b, a, a], [a, b, a], [a, a, b]] {
        bary.push(p);
        weights.push(w);
    }
}

/// Symmetric Gauss rule exact for polynomials of total degree `order`.
///
/// Degrees 1, 2, 4 and 5 use the classical symmetric rules (order 3 is served
/// by the degree-4 rule); higher orders use a collapsed Gauss product.
pub fn triangle_rule(order: usize) -> &'static TriangleRule {
    static TABLE: OnceLock<Vec<TriangleRule>> = OnceLock::new();
    const MAX_ORDER: usize = 20;
    let table = TABLE.get_or_init(|| (1..=MAX_ORDER).map(build_triangle_rule).collect());
    &table[order.clamp(1, MAX_ORDER) - 1]
}

fn build_triangle_rule(order: usize) -> TriangleRule {
    let mut bary = Vec::new();
    let mut weights = Vec::new();
    match order {
        1 => {
            bary.push([1.0 / 3.0; 3]);
            weights.push(1.0);
        }
        2 => orbit3(1.0 / 6.0, 1.0 / 3.0, &mut bary, &mut weights),
        3 | 4 => {
            orbit3(
                0.445_948_490_915_964_9,
                0.223_381_589_678_011_47,
                &mut bary,
                &mut weights,
            );
            orbit3(
                0.091_576_213_509_770_74,
                0.109_951_743_655_321_87,
                &mut bary,
                &mut weights,
            );
        }
        5 => {
            let r15 = 15f64.sqrt();
            bary.push([1.0 / 3.0; 3]);
            weights.push(9.0 / 40.0);
            orbit3((6.0 - r15) / 21.0, (155.0 - r15) / 1200.0, &mut bary, &mut weights);
            orbit3((6.0 + r15) / 21.0, (155.0 + r15) / 1200.0, &mut bary, &mut weights);
        }
        _ => {
            // Collapsed product: x = s, y = (1 - s) t, Jacobian (1 - s).
            let n = order / 2 + 2;
            let gl = gauss_legendre(n);
            for (&s, &ws) in gl.nodes.iter().zip(&gl.weights) {
                for (&t, &wt) in gl.nodes.iter().zip(&gl.weights) {
                    let l1 = s;
                    let l2 = (1.0 - s) * t;
                    bary.push([1.0 - l1 - l2, l1, l2]);
                    weights.push(2.0 * ws * wt * (1.0 - s));
                }
            }
        }
    }
    TriangleRule { bary, weights }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn monomial_integral(i: i32, j: i32) -> f64 {
        // ∫_T x^i y^j over the unit reference triangle = i! j! / (i + j + 2)!
        let fact = |k: i32| (1..=k).map(f64::from).product::<f64>();
        fact(i) * fact(j) / fact(i + j + 2)
    }

    #[test]
    fn legendre_integrates_polynomials() {
        for n in 1..=10 {
            let rule = gauss_legendre(n);
            for k in 0..(2 * n) {
                let got = rule.integrate(0.0, 1.0, |t| t.powi(k as i32));
                assert!((got - 1.0 / (k as f64 + 1.0)).abs() < 1e-14, "n={n} k={k}");
            }
        }
    }

    #[test]
    fn jacobi_rule_is_exact_for_weighted_polynomials() {
        for &a in &[-0.9, -0.5, 0.3, 0.9] {
            let rule = singular_left(4, a);
            for k in 0..8 {
                let got: f64 = rule
                    .nodes
                    .iter()
                    .zip(&rule.weights)
                    .map(|(&t, &w)| w * t.powf(a) * t.powi(k))
                    .sum();
                let exact = 1.0 / (a + k as f64 + 1.0);
                assert!((got - exact).abs() < 1e-12 * exact, "a={a} k={k}: {got} vs {exact}");
            }
        }
    }

    #[test]
    fn graded_rule_resolves_endpoint_power() {
        let grading = Grading::default();
        for &a in &[-0.9, -0.5, 0.5, 0.9] {
            let rule = grading.toward_zero(a);
            // t^a (1 - t) has the exact integral 1/(a+1) - 1/(a+2).
            let got = rule.integrate(0.0, 1.0, |t| t.powf(a) * (1.0 - t));
            let exact = 1.0 / (a + 1.0) - 1.0 / (a + 2.0);
            assert!((got - exact).abs() < 1e-10 * exact, "a={a}: {got} vs {exact}");
        }
    }

    #[test]
    fn both_sided_grading_is_symmetric() {
        let rule = Grading::default().toward_both();
        let sum: f64 = rule.weights.iter().sum();
        assert!((sum - 1.0).abs() < 1e-14);
        let rev = rule.reversed();
        for (a, b) in rule.nodes.iter().zip(&rev.nodes) {
            assert!((a - b).abs() < 1e-15);
        }
    }

    #[test]
    fn triangle_rules_hit_their_degree() {
        for order in 1..=12 {
            let rule = triangle_rule(order);
            let sum: f64 = rule.weights.iter().sum();
            assert!((sum - 1.0).abs() < 1e-14, "order {order}");
            for i in 0..=order as i32 {
                for j in 0..=(order as i32 - i) {
                    let got: f64 = rule
                        .bary
                        .iter()
                        .zip(&rule.weights)
                        .map(|(l, w)| w * 0.5 * l[1].powi(i) * l[2].powi(j))
                        .sum();
                    let exact = monomial_integral(i, j);
                    assert!((got - exact).abs() < 1e-14, "order {order} x^{i} y^{j}");
                }
            }
        }
    }
}
