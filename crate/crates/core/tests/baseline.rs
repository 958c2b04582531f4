mod common;

use chrono::{Duration, Timelike};
use common::{indexed_series, utc};
use ndarray::Array5;
use proptest::prelude::*;
use raingrid_core::baseline::{climatology_forecast, fit_climatology, persistence_forecast};
use raingrid_core::metrics::{evaluation_report, EvalOptions};
use raingrid_core::windowing::{build_examples, chronological_split};
use raingrid_core::{EvaluationMask, GridSpec, SplitFractions, WindowConfig};

#[test]
fn persistence_is_exact_on_a_steady_field() {
    let timeline: Vec<_> = (0..40).map(|h| utc(2017, 2, 1, 0) + Duration::hours(h)).collect();
    let mut series = indexed_series(&timeline, 2, 2);
    for s in &mut series {
        s.fused.precip.fill(7.5);
        s.feature.values.index_axis_mut(ndarray::Axis(2), 0).fill(7.5);
    }
    let cfg = WindowConfig::default();
    let (_, examples) = build_examples(&series, &cfg).unwrap();
    let n = examples.len();
    let pred = Array5::from_shape_fn((n, 5, 2, 2, 1), |(e, l, r, c, _)| {
        persistence_forecast(&examples[e].x.view(), cfg.horizon)[[l, r, c, 0]]
    });
    let obs = Array5::from_shape_fn((n, 5, 2, 2, 1), |(e, l, r, c, _)| examples[e].y[[l, r, c, 0]]);
    let grid = GridSpec {
        n_rows: 2,
        n_cols: 2,
        ..GridSpec::RIO
    };
    let report = evaluation_report(
        &pred.view(),
        &obs.view(),
        &EvaluationMask::full(&grid),
        &[1],
        "p",
        &[1.0, 2.0, 5.0, 10.0],
        EvalOptions::default(),
    )
    .unwrap();
    assert_eq!(report.pooled.mae, Some(0.0));
}

fn examples_with(hours: usize) -> Vec<raingrid_core::Example> {
    let timeline: Vec<_> = (0..hours as i64)
        .map(|h| utc(2017, 10, 1, 0) + Duration::hours(h))
        .collect();
    let series = indexed_series(&timeline, 2, 3);
    build_examples(&series, &WindowConfig::default()).unwrap().1
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    /// Rewriting every validation and test example leaves the fitted table untouched.
    #[test]
    fn climatology_never_sees_held_out_examples(hours in 40usize..200, poison in 100.0f32..1e6) {
        let mut examples = examples_with(hours);
        let fr = SplitFractions::default();
        let clean = {
            let [train, _, _] = chronological_split(&examples, &fr).unwrap();
            fit_climatology(train).unwrap()
        };
        let [train_range, _, _] = fr.ranges(examples.len()).unwrap();
        for e in &mut examples[train_range.end..] {
            e.x.fill(poison);
            e.y.fill(poison);
        }
        let [train, _, _] = chronological_split(&examples, &fr).unwrap();
        prop_assert_eq!(fit_climatology(train).unwrap(), clean);
    }
}

#[test]
fn climatology_matches_brute_force_average() {
    let examples = examples_with(80);
    let table = fit_climatology(&examples).unwrap();
    // every hour index i appears once: the target of some example, or an input only
    let target_hours: std::collections::BTreeSet<usize> = examples
        .iter()
        .flat_map(|e| (0..5).map(|l| e.y[[l, 0, 0, 0]] as usize))
        .collect();
    let t0 = utc(2017, 10, 1, 0);
    for hod in 0..24u32 {
        let vals: Vec<f64> = target_hours
            .iter()
            .filter(|i| (t0 + Duration::hours(**i as i64)).hour() == hod)
            .map(|i| *i as f64)
            .collect();
        let expected = vals.iter().sum::<f64>() / vals.len() as f64;
        assert!((table.mean(1, 2, hod) - expected).abs() < 1e-9, "hour {hod}");
    }
    let f = climatology_forecast(&table, utc(2018, 1, 1, 22), 3);
    assert_eq!(f[[0, 0, 0, 0]] as f64, table.mean(0, 0, 23) as f32 as f64);
    assert_eq!(f[[2, 0, 0, 0]] as f64, table.mean(0, 0, 1) as f32 as f64);
}
