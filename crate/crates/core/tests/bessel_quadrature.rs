//! K_nu against its integral representation
//! `K_nu(x) = int_0^inf exp(-x cosh t) cosh(nu t) dt`, evaluated independently
//! of the series and continued-fraction code by the trapezoid rule in log space.

use exceedance::special::bessel_k;

/// Trapezoid rule with step `h`; the integrand is analytic and decays
/// double-exponentially, so the error falls off like `exp(-c / h)`.
fn k_quadrature(nu: f64, x: f64) -> f64 {
    let log_f = |t: f64| -x * t.cosh() + nu * t + (0.5 * (1.0 + (-2.0 * nu * t).exp())).ln();
    let h = 1.0 / 64.0;
    let mut logs = Vec::new();
    let mut t = 0.0;
    let mut peak = f64::NEG_INFINITY;
    loop {
        let lf = log_f(t);
        peak = peak.max(lf);
        logs.push(if t == 0.0 { lf + 0.5f64.ln() } else { lf });
        if lf < peak - 50.0 && t > 1.0 {
            break;
        }
        t += h;
    }
    let s: f64 = logs.iter().map(|l| (l - peak).exp()).sum();
    h * s * peak.exp()
}

#[test]
fn matches_integral_representation_on_grid() {
    let mut worst: f64 = 0.0;
    for i in 0..20 {
        let nu = 0.05 + (10.0 - 0.05) * i as f64 / 19.0;
        for j in 0..20 {
            let x = 10f64.powf(-6.0 + (50f64.log10() + 6.0) * j as f64 / 19.0);
            let oracle = k_quadrature(nu, x);
            let got = bessel_k(nu, x).unwrap();
            let rel = ((got - oracle) / oracle).abs();
            assert!(
                rel <= 1e-8,
                "nu = {nu}, x = {x}: {got} vs {oracle} (rel {rel:e})"
            );
            worst = worst.max(rel);
        }
    }
    assert!(worst <= 1e-8);
}

#[test]
fn quadrature_reproduces_closed_form() {
    // sanity check of the oracle itself: K_1/2(x) = sqrt(pi / 2x) e^-x
    for x in [1e-6, 0.01, 1.0, 30.0] {
        let exact = (std::f64::consts::PI / (2.0 * x)).sqrt() * (-x).exp();
        assert!(((k_quadrature(0.5, x) - exact) / exact).abs() < 1e-12);
    }
}
