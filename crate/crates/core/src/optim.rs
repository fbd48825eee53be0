//! Box-constrained Nelder-Mead simplex minimization.

/// Stopping rule and box for [`nelder_mead`].
#[derive(Debug, Clone)]
pub struct NelderMeadOptions {
    /// Stop once `f(worst) - f(best)` over the simplex falls below this.
    pub f_tol: f64,
    pub max_iter: usize,
    /// Offset of the initial vertices from the start point, per coordinate.
    pub initial_step: Vec<f64>,
    /// Per-coordinate `(lo, hi)`; points are projected onto the box.
    pub bounds: Vec<(f64, f64)>,
}

#[derive(Debug, Clone)]
pub struct NelderMeadResult {
    pub x: Vec<f64>,
    pub f: f64,
    pub iterations: usize,
    pub converged: bool,
}

fn project(x: &mut [f64], bounds: &[(f64, f64)]) {
    for (v, (lo, hi)) in x.iter_mut().zip(bounds) {
        *v = v.clamp(*lo, *hi);
    }
}

/// Minimizes `f` starting from `x0`. Non-finite objective values count as `+inf`.
pub fn nelder_mead<F>(f: F, x0: &[f64], opts: &NelderMeadOptions) -> NelderMeadResult
where
    F: Fn(&[f64]) -> f64,
{
    const REFLECT: f64 = 1.0;
    const EXPAND: f64 = 2.0;
    const CONTRACT: f64 = 0.5;
    const SHRINK: f64 = 0.5;

    let dim = x0.len();
    assert_eq!(opts.bounds.len(), dim, "one bound per coordinate");
    assert_eq!(opts.initial_step.len(), dim, "one step per coordinate");
    let eval = |x: &[f64]| {
        let v = f(x);
        if v.is_finite() {
            v
        } else {
            f64::INFINITY
        }
    };

    let mut simplex: Vec<(Vec<f64>, f64)> = Vec::with_capacity(dim + 1);
    let mut start = x0.to_vec();
    project(&mut start, &opts.bounds);
    simplex.push((start.clone(), eval(&start)));
    for i in 0..dim {
        let mut p = start.clone();
        p[i] += opts.initial_step[i];
        // step inward if the box clipped the vertex back onto the start
        if p[i] > opts.bounds[i].1 {
            p[i] = start[i] - opts.initial_step[i];
        }
        project(&mut p, &opts.bounds);
        let fp = eval(&p);
        simplex.push((p, fp));
    }

    let mut iterations = 0;
    let mut converged = false;
    while iterations < opts.max_iter {
        simplex.sort_by(|a, b| a.1.total_cmp(&b.1));
        let best = simplex[0].1;
        let worst = simplex[dim].1;
        if (worst - best).abs() < opts.f_tol || (best.is_infinite() && worst.is_infinite()) {
            converged = best.is_finite();
            break;
        }
        iterations += 1;

        let mut centroid = vec![0.0; dim];
        for (p, _) in &simplex[..dim] {
            for (c, v) in centroid.iter_mut().zip(p) {
                *c += v / dim as f64;
            }
        }
        let along = |t: f64| {
            let mut p: Vec<f64> = centroid
                .iter()
                .zip(&simplex[dim].0)
                .map(|(c, w)| c + t * (c - w))
                .collect();
            project(&mut p, &opts.bounds);
            p
        };

        let xr = along(REFLECT);
        let fr = eval(&xr);
        if fr < simplex[0].1 {
            let xe = along(EXPAND);
            let fe = eval(&xe);
            simplex[dim] = if fe < fr { (xe, fe) } else { (xr, fr) };
            continue;
        }
        if fr < simplex[dim - 1].1 {
            simplex[dim] = (xr, fr);
            continue;
        }
        let (xc, fc) = if fr < simplex[dim].1 {
            let xc = along(CONTRACT * REFLECT);
            let fc = eval(&xc);
            (xc, fc)
        } else {
            let xc = along(-CONTRACT);
            let fc = eval(&xc);
            (xc, fc)
        };
        if fc < simplex[dim].1.min(fr) {
            simplex[dim] = (xc, fc);
            continue;
        }
        let x_best = simplex[0].0.clone();
        for (p, fp) in simplex.iter_mut().skip(1) {
            for (v, b) in p.iter_mut().zip(&x_best) {
                *v = b + SHRINK * (*v - b);
            }
            *fp = eval(p);
        }
    }
    simplex.sort_by(|a, b| a.1.total_cmp(&b.1));
    let (x, f) = simplex.swap_remove(0);
    NelderMeadResult {
        x,
        f,
        iterations,
        converged,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn opts(dim: usize, lo: f64, hi: f64) -> NelderMeadOptions {
        NelderMeadOptions {
            f_tol: 1e-12,
            max_iter: 2000,
            initial_step: vec![0.5; dim],
            bounds: vec![(lo, hi); dim],
        }
    }

    #[test]
    fn minimizes_rosenbrock() {
        let rosen = |x: &[f64]| (1.0 - x[0]).powi(2) + 100.0 * (x[1] - x[0] * x[0]).powi(2);
        let r = nelder_mead(rosen, &[-1.2, 1.0], &opts(2, -5.0, 5.0));
        assert!(r.converged);
        assert!(
            (r.x[0] - 1.0).abs() < 1e-3 && (r.x[1] - 1.0).abs() < 1e-3,
            "{:?}",
            r.x
        );
    }

    #[test]
    fn respects_bounds() {
        let r = nelder_mead(
            |x| (x[0] - 3.0).powi(2) + x[1].powi(2),
            &[0.0, 0.5],
            &opts(2, -1.0, 1.0),
        );
        assert!((r.x[0] - 1.0).abs() < 1e-6);
        assert!(r.x[1].abs() < 1e-3);
    }

    #[test]
    fn tolerates_non_finite_regions() {
        let f = |x: &[f64]| {
            if x[0] < 0.0 {
                f64::NAN
            } else {
                (x[0] - 0.5).powi(2) + (x[1] + 0.2).powi(2)
            }
        };
        let r = nelder_mead(f, &[2.0, 2.0], &opts(2, -3.0, 3.0));
        assert!((r.x[0] - 0.5).abs() < 1e-4);
        assert!((r.x[1] + 0.2).abs() < 1e-4);
    }

    #[test]
    fn stops_at_iteration_cap() {
        let mut o = opts(2, -5.0, 5.0);
        o.max_iter = 3;
        o.f_tol = 0.0;
        let r = nelder_mead(|x| x[0] * x[0] + x[1] * x[1], &[4.0, 4.0], &o);
        assert_eq!(r.iterations, 3);
        assert!(!r.converged);
    }
}
