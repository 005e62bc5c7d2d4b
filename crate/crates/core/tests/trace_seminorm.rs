//! Gagliardo seminorm of `cos(kθ)` on the unit circle: the boundary-loop
//! evaluation against a dense quadrature on the exact circle, and the
//! `k^{s*}` growth of the seminorm.

use std::f64::consts::PI;

use mdfem::mesh::{generate_disk_mesh, BoundaryPartitionRule, Mesh};
use mdfem::quadrature::gauss_legendre;
use mdfem::regularity::trace_gagliardo_norm;

const Q: f64 = 1.5;

fn cos_trace(mesh: &Mesh, k: f64) -> Vec<f64> {
    mesh.vertices().iter().map(|p| (k * p[1].atan2(p[0])).cos()).collect()
}

/// `∫_0^{2π}∫_0^{2π} |cos kθ − cos k(θ+t)|^q / (2 sin(t/2))^{1+sq} dt dθ`
/// with the periodic trapezoid rule in θ and composite Gauss in t.
fn circle_gagliardo(k: f64, q: f64, s: f64) -> f64 {
    let n_theta = 512;
    let cells = 256;
    let rule = gauss_legendre(8);
    let mut total = 0.0;
    for i in 0..n_theta {
        let theta = 2.0 * PI * i as f64 / n_theta as f64;
        let mut inner = 0.0;
        for c in 0..cells {
            let a = 2.0 * PI * c as f64 / cells as f64;
            let b = 2.0 * PI * (c + 1) as f64 / cells as f64;
            inner += rule.integrate(a, b, |t| {
                let num = ((k * theta).cos() - (k * (theta + t)).cos()).abs().powf(q);
                num / (2.0 * (0.5 * t).sin()).powf(1.0 + s * q)
            });
        }
        total += inner * 2.0 * PI / n_theta as f64;
    }
    total
}

#[test]
fn loop_evaluation_matches_exact_circle() {
    let mesh = generate_disk_mesh(1.0, 0.02, &BoundaryPartitionRule::FullDirichlet).unwrap();
    for k in [1.0, 3.0] {
        let tn = trace_gagliardo_norm(&mesh, &cos_trace(&mesh, k), Q, 0.0).unwrap();
        let exact = circle_gagliardo(k, Q, tn.order);
        let rel = (tn.gagliardo_integral - exact).abs() / exact;
        assert!(rel < 0.02, "k = {k}: {} vs {exact} ({rel})", tn.gagliardo_integral);
        // L^q part: ∫|cos kθ|^{1.5} dθ over the circle.
        let lq = gauss_legendre(40).integrate(0.0, 2.0 * PI, |t| (k * t).cos().abs().powf(Q));
        assert!((tn.lq_integral - lq).abs() < 0.01 * lq);
    }
}

#[test]
fn seminorm_grows_like_k_to_the_order() {
    let mesh = generate_disk_mesh(1.0, 0.01, &BoundaryPartitionRule::FullDirichlet).unwrap();
    let semi = |k: f64| trace_gagliardo_norm(&mesh, &cos_trace(&mesh, k), Q, 0.0).unwrap();
    let mut last = 0.0;
    for k in [2.0, 4.0, 8.0] {
        let (a, b) = (semi(k), semi(2.0 * k));
        let ratio = b.seminorm() / a.seminorm();
        let expected = 2f64.powf(a.order);
        assert!((ratio / expected - 1.0).abs() < 0.15, "k = {k}: ratio {ratio}, expected {expected}");
        assert!(a.seminorm() > last);
        last = a.seminorm();
    }
}
