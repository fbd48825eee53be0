//! Monte Carlo checks that simulated fields have the intended covariance.

use exceedance::covariance::SeparableCovParams;
use exceedance::data::GridSpec;
use exceedance::simulate::{replicate_rng, SimScenario, Simulator};
use exceedance::stats::{excess_kurtosis, skewness};
use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::StandardNormal;

fn tiny(seed: u64) -> SimScenario {
    SimScenario {
        grid: GridSpec::unit(3, 3).unwrap(),
        n_time: 4,
        ..SimScenario::reference(seed)
    }
}

/// Full 36x36 separable covariance, point-major like `SimField::values`.
fn target_cov(sc: &SimScenario) -> DMatrix<f64> {
    let locs = sc.locations();
    let nt = sc.n_time;
    let n = locs.len() * nt;
    DMatrix::from_fn(n, n, |a, b| {
        let (p, t) = (a / nt, a % nt);
        let (q, u) = (b / nt, b % nt);
        sc.cov.temporal_cov(t.abs_diff(u) as f64) * sc.cov.spatial_cov(locs[p].distance(&locs[q]))
    })
}

fn empirical_cov(samples: &[Vec<f64>]) -> DMatrix<f64> {
    let n = samples[0].len();
    let mut c = DMatrix::zeros(n, n);
    for s in samples {
        let v = DVector::from_column_slice(s);
        c += &v * v.transpose();
    }
    c / samples.len() as f64
}

#[test]
fn kronecker_sampler_recovers_separable_covariance() {
    let sc = tiny(42);
    let sim = Simulator::new(&sc).unwrap();
    let samples: Vec<Vec<f64>> = (0..20_000).map(|r| sim.sample(r).values).collect();
    let emp = empirical_cov(&samples);
    let target = target_cov(&sc);
    let worst = (&emp - &target).abs().max();
    assert!(worst <= 0.05, "max entrywise deviation {worst}");
}

#[test]
fn kronecker_and_full_cholesky_samplers_agree() {
    let sc = tiny(7);
    let target = target_cov(&sc);
    let l = target.clone().cholesky().unwrap().unpack();
    let n = target.nrows();
    let direct: Vec<Vec<f64>> = (0..20_000u64)
        .map(|r| {
            let mut rng = replicate_rng(1234, r);
            let e = DVector::from_fn(n, |_, _| rng.sample::<f64, _>(StandardNormal));
            (&l * e).iter().copied().collect()
        })
        .collect();
    let sim = Simulator::new(&sc).unwrap();
    let kron: Vec<Vec<f64>> = (0..20_000).map(|r| sim.sample(r).values).collect();
    let diff = (empirical_cov(&direct) - empirical_cov(&kron)).abs().max();
    assert!(diff <= 0.07, "samplers' covariances differ by {diff}");
    let mean_abs = |s: &[Vec<f64>]| s.iter().flatten().sum::<f64>() / (s.len() * n) as f64;
    assert!(mean_abs(&direct).abs() < 0.02 && mean_abs(&kron).abs() < 0.02);
}

#[test]
fn reference_scenario_marginals() {
    let sc = SimScenario::reference(2024);
    let sim = Simulator::new(&sc).unwrap();
    let probes = [0usize, 21, 57, 103, 168, 210, 255, 311, 377, 399];
    let mut sq = vec![0.0; probes.len()];
    let mut cross = 0.0;
    let mut left = 0.0;
    let mut right = 0.0;
    let mut pooled = Vec::with_capacity(500 * 400);
    let reps = 500;
    for r in 0..reps {
        let f = sim.sample(r);
        for (k, &p) in probes.iter().enumerate() {
            sq[k] += f.series(p).iter().map(|x| x * x).sum::<f64>();
        }
        // horizontal neighbours at unit distance
        for &p in &[42usize, 150, 266, 333] {
            for (a, b) in f.series(p).iter().zip(f.series(p + 1)) {
                cross += a * b;
                left += a * a;
                right += b * b;
            }
        }
        let t = (r as usize * 37) % sc.n_time;
        pooled.extend((0..400).map(|p| f.series(p)[t] / sc.cov.variance().sqrt()));
    }
    for (k, s) in sq.iter().enumerate() {
        let var = s / (reps as f64 * sc.n_time as f64);
        assert!(
            (var - 0.91).abs() <= 0.1,
            "probe {}: variance {var}",
            probes[k]
        );
    }
    let corr = cross / (left * right).sqrt();
    assert!(
        (corr - (-1f64).exp()).abs() <= 0.05,
        "unit-distance correlation {corr}"
    );
    let sk = skewness(&pooled);
    let ku = excess_kurtosis(&pooled);
    assert!(sk.abs() < 0.05, "skewness {sk}");
    assert!(ku.abs() < 0.1, "excess kurtosis {ku}");
}

#[test]
fn other_parameters_are_honoured() {
    let sc = SimScenario {
        grid: GridSpec::unit(2, 2).unwrap(),
        n_time: 3,
        cov: SeparableCovParams::new(2.0, 1.0, 0.5, 1.5).unwrap(),
        ..SimScenario::reference(3)
    };
    let sim = Simulator::new(&sc).unwrap();
    let samples: Vec<Vec<f64>> = (0..20_000).map(|r| sim.sample(r).values).collect();
    let worst = (empirical_cov(&samples) - target_cov(&sc)).abs().max();
    assert!(worst <= 0.05, "max entrywise deviation {worst}");
}
