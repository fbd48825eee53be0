use exceedance::covariance::MaternParams;
use exceedance::data::indicators;
use exceedance::data::{
    impute_missing, read_stations, write_stations, Dataset, LoadOptions, Location, Method,
    StationSeries, TimeGrid,
};
use exceedance::kriging::{krige_predict, KrigingModel, KrigingSystem, MeanModel};
use exceedance::smoothing::{
    smooth_edf, KernelFamily, KernelSmoother, KernelSpec, SeriesSmoother, SmoothingConfig,
};
use proptest::prelude::*;

fn series_strategy() -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(-50.0f64..150.0, 10..120)
}

fn thresholds_strategy() -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(-60.0f64..160.0, 10).prop_map(|mut v| {
        v.sort_by(f64::total_cmp);
        v
    })
}

proptest! {
    #[test]
    fn ker_is_monotone_in_threshold(
        values in series_strategy(),
        xs in thresholds_strategy(),
        b in 0.01f64..0.8,
        epan in any::<bool>(),
    ) {
        let grid = TimeGrid::with_len(values.len()).unwrap();
        let family = if epan { KernelFamily::Epanechnikov } else { KernelFamily::Gaussian };
        // Epanechnikov needs enough support to keep weights positive
        let b = if epan { b.max(2.0 / values.len() as f64) } else { b };
        let sm = KernelSmoother::new(&grid, &KernelSpec::new(family, b).unwrap()).unwrap();
        let outs: Vec<Vec<f64>> = xs.iter().map(|&x| sm.smooth(&indicators(&values, x)).unwrap()).collect();
        for pair in outs.windows(2) {
            for (lo, hi) in pair[0].iter().zip(&pair[1]) {
                prop_assert!(hi <= lo);
            }
        }
        for o in &outs {
            prop_assert!(o.iter().all(|p| (0.0..=1.0).contains(p)));
        }
    }

    #[test]
    fn edf_is_monotone_in_threshold(values in series_strategy(), xs in thresholds_strategy()) {
        let outs: Vec<Vec<f64>> = xs.iter().map(|&x| smooth_edf(&values, x, 7).unwrap()).collect();
        for pair in outs.windows(2) {
            for (lo, hi) in pair[0].iter().zip(&pair[1]) {
                prop_assert!(hi <= lo);
            }
        }
    }

    #[test]
    fn ind_is_binary_and_edf_window_one_is_ind(values in series_strategy(), x0 in -60.0f64..160.0) {
        let grid = TimeGrid::with_len(values.len()).unwrap();
        let ind = SeriesSmoother::new(Method::Ind, &grid, &SmoothingConfig::default()).unwrap();
        let p = ind.smooth(&values, x0).unwrap();
        prop_assert!(p.iter().all(|v| *v == 0.0 || *v == 1.0));
        let cfg = SmoothingConfig { window: 1, ..Default::default() };
        let edf1 = SeriesSmoother::new(Method::Edf, &grid, &cfg).unwrap();
        let q = edf1.smooth(&values, x0).unwrap();
        prop_assert_eq!(p, q);
    }

    #[test]
    fn station_csv_round_trips(
        n in 5usize..40,
        raw in prop::collection::vec((-1e3f64..1e3, -1e3f64..1e3, prop::collection::vec(-1e4f64..1e4, 40)), 1..5),
        gap in 0usize..40,
    ) {
        let grid = TimeGrid::with_len(n).unwrap();
        let stations: Vec<StationSeries> = raw.iter().enumerate().map(|(k, (x, y, v))| {
            let mut mask = vec![true; n];
            // at most one missing value, within the default cap for n >= 10
            if n >= 10 && k == 0 { mask[gap % n] = false; }
            StationSeries::new(format!("st{k}"), Location::new(x + 3000.0 * k as f64, *y).unwrap(), v[..n].to_vec(), mask).unwrap()
        }).collect();
        let data = Dataset::new(grid, stations).unwrap();
        let mut buf = Vec::new();
        write_stations(&mut buf, &data).unwrap();
        let back = read_stations(buf.as_slice(), &LoadOptions::default()).unwrap();
        prop_assert_eq!(&back.grid, &data.grid);
        prop_assert_eq!(back.stations.len(), data.stations.len());
        for (a, b) in back.stations.iter().zip(&data.stations) {
            prop_assert_eq!(&a.id, &b.id);
            prop_assert_eq!(a.loc, b.loc);
            prop_assert_eq!(a.mask(), b.mask());
            for i in 0..n {
                prop_assert_eq!(a.value(i), b.value(i));
            }
        }
    }

    #[test]
    fn imputation_is_idempotent(v in prop::collection::vec(-100.0f64..100.0, 5..60), holes in prop::collection::vec(any::<bool>(), 60)) {
        let n = v.len();
        let mut mask: Vec<bool> = holes[..n].iter().map(|h| !h).collect();
        mask[0] = true;
        mask[n - 1] = true;
        let s = StationSeries::new("s", Location::new(0.0, 0.0).unwrap(), v.clone(), mask.clone()).unwrap();
        let once = impute_missing(&s).unwrap();
        prop_assert!(once.is_complete());
        for i in 0..n {
            if mask[i] { prop_assert_eq!(once.value(i), Some(v[i])); }
        }
        let twice = impute_missing(&once).unwrap();
        prop_assert_eq!(once, twice);
    }

    #[test]
    fn kriging_interpolates_and_weights_sum_to_one(
        pts in prop::collection::vec((0.0f64..10.0, 0.0f64..10.0), 5),
        vals in prop::collection::vec(0.0f64..1.0, 5),
        rho in 0.5f64..5.0,
        nu in 0.2f64..3.0,
        target in (-5.0f64..15.0, -5.0f64..15.0),
        shift in -3.0f64..3.0,
    ) {
        let sites: Vec<Location> = pts.iter().map(|(x, y)| Location::new(*x, *y).unwrap()).collect();
        for i in 0..5 {
            for j in i + 1..5 {
                prop_assume!(sites[i].distance(&sites[j]) > 0.05);
            }
        }
        let model = KrigingModel::new(MaternParams::new(1.0, rho, nu).unwrap(), MeanModel::Constant, 0.0, sites.clone()).unwrap();
        let Ok(sys) = KrigingSystem::new(&model) else { return Ok(()); };
        let preds = sys.predict(&vals, &sites).unwrap();
        for (p, v) in preds.iter().zip(&vals) {
            prop_assert!((p.value - v).abs() < 1e-8, "{} vs {}", p.value, v);
        }
        let t = Location::new(target.0, target.1).unwrap();
        let (w, var) = sys.weights(&t);
        prop_assert!((w.iter().sum::<f64>() - 1.0).abs() < 1e-10);
        prop_assert!(var >= 0.0);
        let shifted: Vec<f64> = vals.iter().map(|v| v + shift).collect();
        let a = krige_predict(&model, &vals, &[t]).unwrap()[0];
        let b = krige_predict(&model, &shifted, &[t]).unwrap()[0];
        prop_assert!((b.value - a.value - shift).abs() < 1e-9);
        prop_assert_eq!(a.se, b.se);
    }
}
