mod common;

use common::{assert_ok, stderr, utc, Fixture, Spike};
use ndarray::{ArrayD, IxDyn};
use raingrid_core::pipeline::DatasetManifest;
use raingrid_core::tensor::{read_tensor, write_tensor, TensorRole, TensorSidecar};
use raingrid_core::GridSpec;
use serde_json::Value;

fn json(path: &std::path::Path) -> Value {
    serde_json::from_str(&std::fs::read_to_string(path).unwrap()).unwrap()
}

#[test]
fn build_is_bit_reproducible() {
    let f = Fixture::standard(utc(2024, 1, 10, 0), 30, &[]);
    let (a, b) = (f.path("a"), f.path("b"));
    assert_ok(&f.run(&["build-dataset", "--out", a.to_str().unwrap()]));
    assert_ok(&f.run(&["build-dataset", "--out", b.to_str().unwrap()]));
    for name in ["X.stft", "X.json", "Y.stft", "Y.json", "manifest.json"] {
        let a = std::fs::read(f.path("a").join(name)).unwrap();
        let b = std::fs::read(f.path("b").join(name)).unwrap();
        assert!(a == b, "{name} differs between runs");
    }
}

#[test]
fn winter_gap_splits_the_timeline() {
    let f = Fixture::empty();
    f.write_catalog();
    f.write_observations(utc(2019, 5, 30, 0), 60, &[]);
    f.write_pack("era5.json", utc(2019, 5, 30, 0), 60, common::background_precip);
    f.write_pack("era5_sep.json", utc(2019, 9, 1, 0), 24, common::background_precip);
    f.write_pack("gfs.json", utc(2019, 9, 1, 0), 24, common::background_precip);
    let cfg = f.write_config("");
    let text = std::fs::read_to_string(&cfg)
        .unwrap()
        .replace(r#"train = ["era5.json"]"#, r#"train = ["era5_sep.json", "era5.json"]"#);
    std::fs::write(&cfg, text).unwrap();
    // the September pack has no gauge data, so build the background-only version
    assert_ok(&f.run(&["build-dataset", "--version", "ERA5"]));
    let m = DatasetManifest::load(&f.out("manifest.json")).unwrap();
    assert_eq!(m.n_segments, 2);
    // May 30 00:00 .. May 31 23:00 is 48 hours; June hours are excluded
    assert_eq!(m.segments[0].timesteps, 48);
    assert_eq!(m.segments[1].timesteps, 24);
    assert_eq!(m.n_examples, 39 + 15);
}

#[test]
fn background_only_version_is_all_fallback() {
    let f = Fixture::standard(utc(2024, 1, 10, 0), 20, &[]);
    assert_ok(&f.run(&["build-dataset", "--version", "ERA5"]));
    let m = DatasetManifest::load(&f.out("manifest.json")).unwrap();
    assert_eq!(m.dataset_version, "ERA5");
    assert_eq!(m.provenance.station_fused, 0);
    assert_eq!(m.provenance.background_fallback, m.provenance.cell_hours);
    assert_eq!(m.provenance.station_fused_fraction, 0.0);

    assert_ok(&f.run(&["build-dataset"]));
    let m = DatasetManifest::load(&f.out("manifest.json")).unwrap();
    // five gauges in five cells, one of them down one hour in seven
    assert!(m.provenance.station_fused > 0);
    assert!(m.provenance.station_fused_fraction <= 5.0 / 99.0);
}

#[test]
fn manifest_records_split_ranges_and_dates() {
    let f = Fixture::standard(utc(2024, 1, 10, 0), 48, &[]);
    assert_ok(&f.run(&["build-dataset"]));
    let m = json(&f.out("manifest.json"));
    assert_eq!(m["n_examples"], 39);
    assert_eq!(m["split"]["train"]["end"], 25);
    assert_eq!(m["split"]["val"]["start"], 25);
    assert_eq!(m["split"]["test"]["end"], 39);
    assert_eq!(m["split"]["train"]["first_t0"], "2024-01-10T04:00:00Z");
    let x = json(&f.out("X.json"));
    assert_eq!(x["feature_sampling"], "nw-corner-node");
    assert_eq!(x["channels"].as_array().unwrap().len(), 19);
    assert_eq!(x["example_t0"].as_array().unwrap().len(), 39);
}

#[test]
fn inference_window_covers_the_five_preceding_hours() {
    let f = Fixture::standard(
        utc(2024, 12, 20, 0),
        24,
        &[Spike {
            station: "A01",
            at: utc(2024, 12, 20, 16),
            mm: 40.0,
        }],
    );
    assert_ok(&f.run(&["fuse-inference", "--t0", "2024-12-20T18:00:00Z"]));
    let m = json(&f.out("inference_manifest.json"));
    assert_eq!(m["dataset_version"], "GFS+A");
    let hours: Vec<&str> = m["input_hours"]
        .as_array()
        .unwrap()
        .iter()
        .map(|h| h["timestamp"].as_str().unwrap())
        .collect();
    assert_eq!(
        hours,
        [
            "2024-12-20T14:00:00Z",
            "2024-12-20T15:00:00Z",
            "2024-12-20T16:00:00Z",
            "2024-12-20T17:00:00Z",
            "2024-12-20T18:00:00Z"
        ]
    );
    let (x, side) = read_tensor(&f.out("X_inference.stft")).unwrap();
    assert_eq!(x.shape(), &[1, 5, 9, 11, 19]);
    assert_eq!(side.dataset_version.as_deref(), Some("GFS+A"));
    // A01 sits in cell (5, 8); 16:00 is input step 2
    assert_eq!(x[[0, 2, 5, 8, 0]], 40.0);
    // Sirenes is not part of GFS+A
    let bg = (0..4)
        .map(|n| {
            common::background_precip(
                (utc(2024, 12, 20, 16) - utc(2000, 1, 1, 0)).num_hours() + 1,
                5 + n / 2,
                7 + n % 2,
            )
        })
        .fold(f32::MIN, f32::max);
    assert_eq!(x[[0, 2, 5, 7, 0]], bg);
}

#[test]
fn inference_without_stations_is_all_fallback() {
    let f = Fixture::standard(utc(2024, 12, 20, 0), 24, &[]);
    assert_ok(&f.run(&["fuse-inference", "--t0", "2024-12-20T18:00", "--version", "GFS"]));
    let m = json(&f.out("inference_manifest.json"));
    assert!(m["input_hours"]
        .as_array()
        .unwrap()
        .iter()
        .all(|h| h["station_fused_cells"] == 0));
}

#[test]
fn inference_names_the_missing_hour() {
    let f = Fixture::standard(utc(2024, 12, 20, 0), 24, &[]);
    let o = f.run(&["fuse-inference", "--t0", "2024-12-21T01:00:00Z"]);
    assert_eq!(o.status.code(), Some(3));
    let e = stderr(&o);
    assert!(e.starts_with("error[data]: "), "{e}");
    assert!(e.contains("2024-12-21T00:00:00Z"), "{e}");
    assert_eq!(e.trim_end().lines().count(), 1);
}

#[test]
fn sanity_check_against_itself_and_monotone_copy() {
    let f = Fixture::standard(utc(2024, 1, 10, 0), 30, &[]);
    // a strictly increasing transform of the reference
    f.write_pack("era5_cubed.json", utc(2024, 1, 10, 0), 30, |h, i, j| {
        let v = common::background_precip(h, i, j);
        v * v * v + 1.0
    });
    for candidate in ["era5.json", "era5_cubed.json"] {
        f.write_config(&format!(
            "[sanity]\nreference = [\"era5.json\"]\ncandidate = [\"{candidate}\"]\n"
        ));
        assert_ok(&f.run(&["sanity-check", "--station", "S01"]));
        let csv = std::fs::read_to_string(f.out("spearman_grid.csv")).unwrap();
        let rows: Vec<&str> = csv.lines().skip(1).collect();
        assert_eq!(rows.len(), 99);
        for row in rows {
            let rho: f64 = row.split(',').nth(4).unwrap().parse().unwrap();
            assert!((rho - 1.0).abs() < 1e-12, "{row}");
        }
        let station = std::fs::read_to_string(f.out("station_vs_grid.csv")).unwrap();
        assert_eq!(station.lines().count(), 31);
    }
}

#[test]
fn sanity_check_needs_common_hours() {
    let f = Fixture::standard(utc(2024, 1, 10, 0), 10, &[]);
    f.write_pack("later.json", utc(2024, 2, 1, 0), 10, common::background_precip);
    f.write_config("[sanity]\nreference = [\"era5.json\"]\ncandidate = [\"later.json\"]\n");
    let o = f.run(&["sanity-check"]);
    assert_eq!(o.status.code(), Some(3), "{}", stderr(&o));
}

#[test]
fn evaluating_targets_against_themselves_is_perfect() {
    let f = Fixture::standard(
        utc(2024, 1, 10, 0),
        30,
        &[Spike {
            station: "S01",
            at: utc(2024, 1, 10, 12),
            mm: 30.0,
        }],
    );
    assert_ok(&f.run(&["build-dataset"]));
    let y = f.out("Y.stft");
    let y = y.to_str().unwrap();
    assert_ok(&f.run(&["evaluate", "--pred", y, "--obs", y]));
    let r = json(&f.out("report.json"));
    let pooled = &r["pooled"];
    for (i, level) in ["weak", "moderate", "heavy", "extreme"].iter().enumerate() {
        let count = pooled["levels"][i]["count"].as_u64().unwrap();
        let f1 = pooled["f1"][i].as_f64().unwrap();
        assert_eq!(f1, if count > 0 { 1.0 } else { 0.0 }, "{level}");
    }
    assert_eq!(r["per_lead"].as_array().unwrap().len(), 5);
    let csv = std::fs::read_to_string(f.out("report.csv")).unwrap();
    assert_eq!(csv.lines().count(), 1 + 6 * 4);
    assert!(csv.contains(",nan,nan,0"));
}

#[test]
fn evaluate_reproduces_f1_from_injected_counts() {
    const COUNTS: [[u64; 4]; 4] = [
        [49959, 1416, 40, 2],
        [803, 1090, 88, 7],
        [48, 143, 43, 3],
        [2, 31, 15, 1],
    ];
    const CENTER: [f32; 4] = [1.0, 10.0, 30.0, 70.0];
    let (mut obs, mut pred) = (Vec::new(), Vec::new());
    for (o, row) in COUNTS.iter().enumerate() {
        for (p, n) in row.iter().enumerate() {
            for _ in 0..*n {
                obs.push(CENTER[o]);
                pred.push(CENTER[p]);
            }
        }
    }
    let f = Fixture::empty();
    let grid = GridSpec {
        n_rows: 1,
        n_cols: 1,
        ..GridSpec::RIO
    };
    let n = obs.len();
    for (name, v) in [("obs.stft", obs), ("pred.stft", pred)] {
        let a = ArrayD::from_shape_vec(IxDyn(&[n, 1, 1, 1, 1]), v).unwrap();
        let side = TensorSidecar::new(TensorRole::Target, a.shape(), vec!["precipitation".into()], grid);
        write_tensor(&f.path(name), &a, &side).unwrap();
    }
    std::fs::write(
        f.path("config.toml"),
        "out_dir = \"out\"\nversion = \"ERA5+SI\"\n[grid]\nlat_north = -21.6998\nlat_south = -23.8019\nlon_east = -42.3568\nlon_west = -45.0529\nn_rows = 1\nn_cols = 1\n",
    )
    .unwrap();
    let (p, o) = (f.path("pred.stft"), f.path("obs.stft"));
    assert_ok(&f.run(&[
        "evaluate",
        "--pred",
        p.to_str().unwrap(),
        "--obs",
        o.to_str().unwrap(),
        "--leads",
        "1",
    ]));
    let r = json(&f.out("report.json"));
    let f1: Vec<f64> = r["pooled"]["f1"]
        .as_array()
        .unwrap()
        .iter()
        .map(|v| v.as_f64().unwrap())
        .collect();
    for (got, want) in f1.iter().zip([0.9774, 0.4670, 0.2033, 0.0323]) {
        assert!((got - want).abs() <= 5e-4, "{got} vs {want}");
    }
}

#[test]
fn climatology_baseline_ignores_held_out_extremes() {
    // the last hours fall in the test split and carry a 300 mm/h gauge reading
    let f = Fixture::standard(
        utc(2024, 1, 10, 0),
        60,
        &[Spike {
            station: "S01",
            at: utc(2024, 1, 12, 10),
            mm: 300.0,
        }],
    );
    assert_ok(&f.run(&["build-dataset"]));
    let m = DatasetManifest::load(&f.out("manifest.json")).unwrap();
    assert!(m.split.test.first_t0.as_deref().unwrap() < "2024-01-12T10:00:00Z");
    let out = f.out("");
    let o = f.run(&[
        "baseline",
        "--dataset",
        out.to_str().unwrap(),
        "--method",
        "climatology",
    ]);
    assert_ok(&o);
    let (pred, side) = read_tensor(&f.out("pred_climatology_test.stft")).unwrap();
    assert_eq!(pred.shape()[0], m.split.test.end - m.split.test.start);
    assert_eq!(side.role, TensorRole::Prediction);
    assert!(pred.iter().all(|v| *v < 5.0));

    assert_ok(&f.run(&[
        "baseline",
        "--dataset",
        out.to_str().unwrap(),
        "--method",
        "persistence",
        "--split",
        "val",
    ]));
    let pred = f.out("pred_persistence_val.stft");
    let y = f.out("Y.stft");
    assert_ok(&f.run(&[
        "evaluate",
        "--pred",
        pred.to_str().unwrap(),
        "--obs",
        y.to_str().unwrap(),
        "--split",
        "val",
    ]));
}

#[test]
fn global_flags_override_config() {
    let f = Fixture::standard(utc(2024, 1, 10, 0), 30, &[]);
    assert_ok(&f.run(&["build-dataset"]));
    let y = f.out("Y.stft");
    let y = y.to_str().unwrap();
    let eval = f.path("eval");
    assert_ok(&f.run(&[
        "evaluate",
        "--pred",
        y,
        "--obs",
        y,
        "--leads",
        "1,3",
        "--no-mask",
        "--out",
        eval.to_str().unwrap(),
    ]));
    let r = json(&f.path("eval").join("report.json"));
    assert_eq!(r["leads"], serde_json::json!([1, 3]));
    assert_eq!(r["mask"].as_array().unwrap().len(), 99);
    assert_eq!(r["pooled"]["samples"], 21 * 2 * 99);
}

#[test]
fn heatmap_export_is_plot_ready() {
    let f = Fixture::standard(
        utc(2024, 1, 10, 0),
        20,
        &[Spike {
            station: "A01",
            at: utc(2024, 1, 10, 6),
            mm: 12.0,
        }],
    );
    assert_ok(&f.run(&["build-dataset", "--export-heatmap", "2024-01-10T06:00:00Z"]));
    let csv = std::fs::read_to_string(f.out("heatmap_20240110T0600.csv")).unwrap();
    assert_eq!(csv.lines().count(), 100);
    assert!(csv.lines().any(|l| l.starts_with("5,8,") && l.contains(",12,station")));
}

#[test]
fn error_paths_exit_with_their_class() {
    let f = Fixture::standard(utc(2024, 1, 10, 0), 20, &[]);
    let missing = f.path("nope.toml");
    let config = f.path("config.toml");
    let cases: Vec<(Vec<&str>, i32, &str)> = vec![
        (
            vec!["--config", missing.to_str().unwrap(), "build-dataset"],
            2,
            "config",
        ),
        (
            vec![
                "--config",
                config.to_str().unwrap(),
                "build-dataset",
                "--version",
                "ERA5+X",
            ],
            2,
            "config",
        ),
        (vec!["frobnicate"], 2, "config"),
    ];
    for (args, code, class) in cases {
        let o = std::process::Command::new(common::BIN).args(&args).output().unwrap();
        assert_eq!(o.status.code(), Some(code), "{args:?}: {}", stderr(&o));
        let e = stderr(&o);
        assert!(e.starts_with(&format!("error[{class}]: ")), "{e}");
        assert_eq!(e.trim_end().lines().count(), 1, "{e}");
    }

    // truncated payload
    let gpk = f.path("era5.gpk");
    let bytes = std::fs::read(&gpk).unwrap();
    std::fs::write(&gpk, &bytes[..bytes.len() - 8]).unwrap();
    let o = f.run(&["build-dataset"]);
    assert_eq!(o.status.code(), Some(3), "{}", stderr(&o));
    assert!(stderr(&o).contains("era5.gpk"));

    // mismatched evaluation shapes
    let g = Fixture::standard(utc(2024, 1, 10, 0), 20, &[]);
    assert_ok(&g.run(&["build-dataset"]));
    let (x, y) = (g.out("X.stft"), g.out("Y.stft"));
    let o = g.run(&["evaluate", "--pred", x.to_str().unwrap(), "--obs", y.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(4), "{}", stderr(&o));
    assert!(stderr(&o).starts_with("error[contract]: "));
}

#[test]
fn rejected_rows_are_reported_with_lines() {
    let f = Fixture::standard(utc(2024, 1, 10, 0), 20, &[]);
    let path = f.path("alertario.csv");
    let mut text = std::fs::read_to_string(&path).unwrap();
    text.push_str("A01,2024-01-10T10:00:00,-3\nZZZ,2024-01-10T10:00:00,1\n");
    std::fs::write(&path, text).unwrap();
    assert_ok(&f.run(&["build-dataset"]));
    let m = DatasetManifest::load(&f.out("manifest.json")).unwrap();
    assert_eq!(m.rejected_observation_rows, 2);
    let report = std::fs::read_to_string(f.out("ingest_errors.csv")).unwrap();
    assert!(report.contains("negative precipitation"));
    assert!(report.contains("unknown station 'ZZZ'"));
}
